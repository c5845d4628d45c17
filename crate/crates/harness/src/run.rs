//! Runs an experiment and writes its result directory.
//!
//! Each run directory holds:
//! - `convergence.csv`: `iteration,rel_func_value,rel_grad_norm,rre_y,rre_x,eta,lambda`
//! - `timing.csv`: `iteration,seconds` (wall time, kept apart so the other files
//!   are reproducible byte for byte)
//! - `params.csv`: `iteration,sigma` or `iteration,sigma1,sigma2,rho`, row 0
//!   holding the starting guess
//! - reconstructions: 16-bit graymaps for images (`x_true`, `d`, `x_final`,
//!   `x_best`, `x_iter<k>`), single-column CSV for signals
//! - `instance/`: the problem archive
//! - `manifest.txt`: the resolved configuration plus `result.*` and `image.*`
//!   keys

use crate::archive::{read_instance, write_instance};
use crate::config::{ExperimentConfig, LambdaChoice, RegularizerChoice, SolverKind, Source};
use crate::io::{read_pgm, write_csv_matrix, write_csv_table, write_pgm16, write_text};
use crate::{HarnessError, Result};
use lpvarpro::metrics::rre;
use lpvarpro::mmgks::{mmgks_solve, EtaMode, MmgksConfig};
use lpvarpro::operators::{ForwardModel, LinearOperator, PsfParams};
use lpvarpro::problems::{make_1d_problem, make_blind_deconv_problem, make_builtin_problem, BuiltinImage, ProblemInstance};
use lpvarpro::regularizers::{derivative_2d, first_derivative_1d, second_derivative_1d, Framelet2d, Identity};
use lpvarpro::varpro::{
    gn_nls_solve, genvarpro_solve, lp_varpro_solve, tik_solve, LambdaMode, RunRecord, StopReason, VarproConfig,
    VarproProblem, DENSE_LIMIT,
};
use nalgebra::{DMatrix, DVector};
use std::path::{Path, PathBuf};

const CONVERGENCE_COLUMNS: [&str; 7] = ["iteration", "rel_func_value", "rel_grad_norm", "rre_y", "rre_x", "eta", "lambda"];

/// Outcome of one run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub iterations: usize,
    pub y: Vec<f64>,
    pub rre_x: f64,
    /// `lambda` of the last iteration.
    pub lambda: f64,
    pub stop: String,
}

/// Runs every combination listed in `config`, one after the other.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    config.validate()?;
    config.runs().iter().map(run_single).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn build_instance(c: &ExperimentConfig) -> Result<ProblemInstance<f64>> {
    let level = c.noise[0];
    let psf = || PsfParams::new(c.y_true[0], c.y_true[1], c.y_true[2]);
    Ok(match &c.source {
        Source::Signal1d => make_1d_problem(c.size, c.y_true[0], level, c.seed)?,
        Source::SatelliteLike => make_builtin_problem(BuiltinImage::SatelliteLike, c.size, &psf()?, level, c.seed, c.boundary)?,
        Source::GrainLike => make_builtin_problem(BuiltinImage::GrainLike, c.size, &psf()?, level, c.seed, c.boundary)?,
        Source::Image(path) => {
            if !path.exists() {
                return Err(HarnessError::input(path, "no such file"));
            }
            let img = read_pgm(path)?;
            if img.nrows() != img.ncols() {
                return Err(HarnessError::input(path, "only square images are supported"));
            }
            make_blind_deconv_problem(&img, &psf()?, level, c.seed, c.boundary)?
        }
        Source::Archive(dir) => read_instance(dir)?,
    })
}

fn build_regularizer(c: &ExperimentConfig, inst: &ProblemInstance<f64>) -> Result<Box<dyn LinearOperator<f64>>> {
    let (rows, cols) = inst.shape;
    let n = rows * cols;
    if cols == 1 {
        return Ok(match c.regularizer {
            RegularizerChoice::Identity => Box::new(Identity::new(n)),
            RegularizerChoice::D1 => Box::new(first_derivative_1d::<f64>(n)?),
            RegularizerChoice::D2 => Box::new(second_derivative_1d::<f64>(n)?),
            RegularizerChoice::Framelet => {
                return Err(HarnessError::Config("the framelet regularizer needs a 2D problem".into()))
            }
        });
    }
    if rows != cols && c.regularizer != RegularizerChoice::Identity {
        return Err(HarnessError::Config(format!("{} needs a square image", c.regularizer)));
    }
    Ok(match c.regularizer {
        RegularizerChoice::Identity => Box::new(Identity::new(n)),
        RegularizerChoice::D1 => Box::new(derivative_2d::<f64>(1, rows)?),
        RegularizerChoice::D2 => Box::new(derivative_2d::<f64>(2, rows)?),
        RegularizerChoice::Framelet => Box::new(Framelet2d::<f64>::new(rows, c.framelet_levels)?),
    })
}

fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect()
}

/// Picks the swept `lambda` whose reconstruction at the true parameters has
/// the smallest RRE(x).
fn sweep_lambda(c: &ExperimentConfig, inst: &ProblemInstance<f64>, l: &dyn LinearOperator<f64>) -> Result<f64> {
    let g = inst.family.at(&inst.y_true)?;
    let p = c.p[0];
    let dense = p == 2.0 && inst.n() <= DENSE_LIMIT;
    let (gd, ld) = if dense { (g.to_dense(), l.to_dense()) } else { (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)) };
    let mut best = (f64::INFINITY, c.sweep_lo);
    for lambda in logspace(c.sweep_lo, c.sweep_hi, c.sweep_count) {
        let x = if dense {
            tik_solve(&gd, &ld, lambda, &inst.d)?
        } else {
            let cfg = MmgksConfig {
                p,
                epsilon: c.epsilon,
                max_iter: c.inner_iter,
                eta_mode: EtaMode::Fixed(lambda * p / 2.0),
                ..MmgksConfig::default()
            };
            mmgks_solve(g.as_ref(), l, &inst.d, &cfg)?.x
        };
        let e = rre(&x, &inst.x_true)?;
        if e < best.0 {
            best = (e, lambda);
        }
    }
    Ok(best.1)
}

struct Outcome {
    record: Option<RunRecord<f64>>,
    x: DVector<f64>,
    y: DVector<f64>,
}

/// Single inner solve at `y0` for `mmgks-only`; the history becomes the
/// record with one row per MM step.
fn mmgks_only(
    c: &ExperimentConfig,
    inst: &ProblemInstance<f64>,
    l: &dyn LinearOperator<f64>,
    lambda: Option<f64>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, DVector<f64>)> {
    let y0 = DVector::from_vec(c.y0.clone());
    let g = inst.family.at(&inst.family.canonical(&y0))?;
    let p = c.p[0];
    let cfg = MmgksConfig {
        p,
        epsilon: c.epsilon,
        max_iter: c.max_iter,
        eta_mode: match lambda {
            Some(lam) => EtaMode::Fixed(lam * p / 2.0),
            None => EtaMode::GcvAuto { omega: c.omega },
        },
        ..MmgksConfig::default()
    };
    let out = mmgks_solve(g.as_ref(), l, &inst.d, &cfg)?;
    let h = &out.history;
    let ry = rre(&y0, &inst.y_true).unwrap_or(f64::NAN);
    let f0 = h.objective.first().copied().unwrap_or(f64::NAN);
    let rows = (0..h.objective.len())
        .map(|k| vec![(k + 1) as f64, h.objective[k] / f0, f64::NAN, ry, f64::NAN, h.eta[k], h.lambda[k]])
        .collect();
    Ok((rows, h.seconds.clone(), out.x))
}

fn stop_name(s: &StopReason) -> String {
    match s {
        StopReason::MaxIterations => "max-iterations".into(),
        StopReason::StepTolerance => "step-tolerance".into(),
        StopReason::Diverged(m) => format!("diverged ({m})"),
    }
}

fn run_single(c: &ExperimentConfig) -> Result<RunSummary> {
    let dir = &c.out_dir;
    create_dir(dir)?;
    let inst = build_instance(c)?;
    if inst.y_true.len() != c.y0.len() {
        return Err(HarnessError::Config(format!(
            "the instance has {} parameter(s) but solver.y0 has {}",
            inst.y_true.len(),
            c.y0.len()
        )));
    }
    let l = build_regularizer(c, &inst)?;
    let fixed = match c.lambda_mode {
        LambdaChoice::Fixed => Some(c.lambda_value),
        LambdaChoice::SweepOracle => Some(sweep_lambda(c, &inst, l.as_ref())?),
        LambdaChoice::Gcv => None,
    };

    let mut manifest = c.to_text();
    add_line(&mut manifest, "result.lambda_source", c.lambda_mode.to_string());
    if let Some(lam) = fixed {
        add_line(&mut manifest, "result.lambda", lam.to_string());
    }
    add_line(&mut manifest, "result.columns.convergence", CONVERGENCE_COLUMNS.join(","));
    add_line(&mut manifest, "result.columns.timing", "iteration,seconds".into());
    let param_cols = if inst.y_true.len() == 1 { "iteration,sigma" } else { "iteration,sigma1,sigma2,rho" };
    add_line(&mut manifest, "result.columns.params", param_cols.into());
    add_line(&mut manifest, "result.seed", inst.seed.to_string());

    let (rows, seconds, outcome) = if c.solver == SolverKind::MmgksOnly {
        let (rows, secs, x) = mmgks_only(c, &inst, l.as_ref(), fixed)?;
        (rows, secs, Outcome { record: None, y: DVector::from_vec(c.y0.clone()), x })
    } else {
        let y0 = DVector::from_vec(c.y0.clone());
        let mut cfg = VarproConfig::<f64> {
            jacobian: c.jacobian[0],
            max_iter: c.max_iter,
            step_tol: c.step_tol,
            lambda_mode: match fixed {
                Some(lam) => LambdaMode::Fixed(lam),
                None => LambdaMode::GcvAuto { omega: c.omega },
            },
            damping: c.damping,
            snapshots: c.snapshots.clone(),
            ..Default::default()
        };
        cfg.inner.p = c.p[0];
        cfg.inner.epsilon = c.epsilon;
        cfg.inner.max_iter = c.inner_iter;
        let problem = VarproProblem::from_instance(&inst, l.as_ref(), &y0);
        let out = match (c.solver, fixed) {
            (SolverKind::Genvarpro, Some(lam)) => genvarpro_solve(problem, lam, &cfg)?,
            (SolverKind::GnNls, Some(lam)) => gn_nls_solve(problem, lam, &cfg)?,
            (SolverKind::LpVarpro, _) => lp_varpro_solve(problem, &cfg)?,
            (kind, _) => return Err(HarnessError::Config(format!("{kind} needs a fixed lambda"))),
        };
        let conv = out.record.convergence_rows()?;
        let rows = conv
            .iter()
            .map(|r| vec![r.iteration as f64, r.rel_func_value, r.rel_grad_norm, r.rre_y, r.rre_x, r.eta, r.lambda])
            .collect();
        let secs = conv.iter().map(|r| r.seconds).collect();
        (rows, secs, Outcome { record: Some(out.record), x: out.x, y: out.y })
    };

    write_convergence(&dir.join("convergence.csv"), &rows)?;
    let timing: Vec<Vec<String>> =
        seconds.iter().enumerate().map(|(k, s)| vec![(k + 1).to_string(), format!("{s:.6}")]).collect();
    write_csv_table(&dir.join("timing.csv"), &["iteration", "seconds"], &timing)?;

    let mut params = vec![std::iter::once("0".to_string()).chain(c.y0.iter().map(|v| v.to_string())).collect::<Vec<_>>()];
    for r in outcome.record.iter().flat_map(|r| &r.rows) {
        params.push(std::iter::once(r.iteration.to_string()).chain(r.y.iter().map(|v| v.to_string())).collect());
    }
    let header: Vec<&str> = param_cols.split(',').collect();
    write_csv_table(&dir.join("params.csv"), &header, &params)?;

    let mut images: Vec<(String, DVector<f64>)> = vec![
        ("x_true".into(), inst.x_true.clone()),
        ("d".into(), inst.d.clone()),
        ("x_final".into(), outcome.x.clone()),
    ];
    if let Some((k, x)) = outcome.record.as_ref().and_then(|r| r.best.as_ref()) {
        images.push(("x_best".into(), x.clone()));
        add_line(&mut manifest, "result.best_iteration", k.to_string());
    }
    for (k, x) in outcome.record.iter().flat_map(|r| &r.snapshots) {
        images.push((format!("x_iter{k}"), x.clone()));
    }
    for (name, v) in &images {
        if inst.shape.1 == 1 {
            write_csv_matrix(&dir.join(format!("{name}.csv")), &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
        } else {
            let (lo, hi) = write_pgm16(&dir.join(format!("{name}.pgm")), &inst.to_image(v))?;
            add_line(&mut manifest, &format!("image.{name}.min"), lo.to_string());
            add_line(&mut manifest, &format!("image.{name}.max"), hi.to_string());
        }
    }
    write_instance(&dir.join("instance"), &inst)?;

    let rre_x = rre(&outcome.x, &inst.x_true).unwrap_or(f64::NAN);
    let stop = outcome.record.as_ref().map_or("inner-solve".to_string(), |r| stop_name(&r.stop));
    let last_lambda = rows.last().map_or(f64::NAN, |r| r[6]);
    add_line(&mut manifest, "result.iterations", rows.len().to_string());
    add_line(&mut manifest, "result.stop", stop.clone());
    add_line(&mut manifest, "result.rre_x", rre_x.to_string());
    write_text(&dir.join("manifest.txt"), &manifest)?;

    Ok(RunSummary {
        out_dir: dir.clone(),
        iterations: rows.len(),
        y: outcome.y.iter().copied().collect(),
        rre_x,
        lambda: last_lambda,
        stop,
    })
}

fn add_line(manifest: &mut String, key: &str, value: String) {
    manifest.push_str(&format!("{key}={value}\n"));
}

fn write_convergence(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            std::iter::once((r[0] as usize).to_string())
                .chain(r[1..].iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    write_csv_table(path, &CONVERGENCE_COLUMNS, &rows)
}
