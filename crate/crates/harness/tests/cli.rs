use lpvarpro_harness::config::{LambdaChoice, SolverKind, Source};
use lpvarpro_harness::{preset, run_experiment, ExperimentConfig};
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpvarpro"))
}

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        source: Source::SatelliteLike,
        size: 8,
        max_iter: 1,
        inner_iter: 5,
        snapshots: vec![1],
        out_dir: out.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn smoke_run_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let runs = run_experiment(&tiny(&out)).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].iterations, 1);
    for f in [
        "convergence.csv",
        "timing.csv",
        "params.csv",
        "manifest.txt",
        "x_true.pgm",
        "d.pgm",
        "x_final.pgm",
        "x_best.pgm",
        "x_iter1.pgm",
        "instance/meta.txt",
        "instance/x_true.csv",
        "instance/d_true.csv",
        "instance/d.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let conv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().next().unwrap(), "iteration,rel_func_value,rel_grad_norm,rre_y,rre_x,eta,lambda");
    assert_eq!(conv.lines().count(), 2);
    let params = std::fs::read_to_string(out.join("params.csv")).unwrap();
    assert!(params.starts_with("iteration,sigma1,sigma2,rho\n0,3,4,2\n"));
}

#[test]
fn manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(&dir.path().join("run"));
    run_experiment(&config).unwrap();
    let text = std::fs::read_to_string(dir.path().join("run/manifest.txt")).unwrap();
    assert!(text.contains("image.x_final.min="));
    assert!(text.contains("result.columns.params=iteration,sigma1,sigma2,rho"));
    assert_eq!(ExperimentConfig::parse(&text).unwrap(), config);
}

#[test]
fn archive_source_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(&dir.path().join("a"));
    run_experiment(&a).unwrap();
    let b = ExperimentConfig {
        source: Source::Archive(dir.path().join("a/instance")),
        out_dir: dir.path().join("b"),
        ..a
    };
    run_experiment(&b).unwrap();
    let read = |d: &str| std::fs::read(dir.path().join(d).join("convergence.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn other_solvers_and_signal_problems() {
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig {
        source: Source::Signal1d,
        size: 32,
        y_true: vec![2.0],
        y0: vec![3.0],
        max_iter: 2,
        sweep_count: 4,
        ..Default::default()
    };
    for (k, (solver, p, mode)) in [
        (SolverKind::Genvarpro, 2.0, LambdaChoice::SweepOracle),
        (SolverKind::GnNls, 2.0, LambdaChoice::Fixed),
        (SolverKind::LpVarpro, 1.0, LambdaChoice::Gcv),
        (SolverKind::MmgksOnly, 1.0, LambdaChoice::Fixed),
    ]
    .into_iter()
    .enumerate()
    {
        let out = dir.path().join(k.to_string());
        let c = ExperimentConfig {
            solver,
            p: vec![p],
            lambda_mode: mode,
            out_dir: out.clone(),
            ..base.clone()
        };
        let runs = run_experiment(&c).unwrap();
        assert!(runs[0].rre_x.is_finite(), "{solver}");
        assert!(out.join("x_final.csv").is_file());
        let params = std::fs::read_to_string(out.join("params.csv")).unwrap();
        assert!(params.starts_with("iteration,sigma\n0,3\n"));
    }
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["solve", "paper-grain", "--size", "8", "--iters", "1", "--out"])
        .arg(dir.path().join("ok"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("ok/params.csv").is_file());

    let out = bin().args(["solve", "no-such-preset"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paper-satellite-noise"));

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "solver.kind=newton\n").unwrap();
    assert_eq!(bin().args(["solve"]).arg(&bad).status().unwrap().code(), Some(1));

    let missing = dir.path().join("missing.conf");
    std::fs::write(&missing, format!("problem.source=image\nproblem.path={}\n", dir.path().join("nope.pgm").display()))
        .unwrap();
    assert_eq!(bin().args(["solve"]).arg(&missing).status().unwrap().code(), Some(1));

    assert_eq!(bin().args(["solve", "paper-grain", "--jacobian", "sideways"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    let list = bin().arg("presets").output().unwrap();
    assert_eq!(String::from_utf8_lossy(&list.stdout).lines().count(), 4);
}

#[test]
fn config_file_runs_and_names_itself() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mine.conf");
    std::fs::write(
        &path,
        format!(
            "problem.source=grain-like\nproblem.size=8\nsolver.max_iter=1\nsolver.inner_iter=4\noutput.dir={}\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let c = ExperimentConfig::load(&path).unwrap();
    assert_eq!(c.name, "mine");
    let status = bin().args(["solve"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("out/convergence.csv").is_file());
}

#[test]
fn multi_run_presets_use_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = preset("paper-satellite-noise").unwrap();
    c.size = 8;
    c.max_iter = 1;
    c.inner_iter = 4;
    c.snapshots.clear();
    c.out_dir = dir.path().to_path_buf();
    let runs = run_experiment(&c).unwrap();
    assert_eq!(runs.len(), 3);
    for level in ["0.01", "0.05", "0.1"] {
        assert!(dir.path().join(format!("noise{level}/convergence.csv")).is_file());
    }
}
