//! Experiment configuration as flat `section.key=value` text.
//!
//! `problem.noise`, `solver.p` and `solver.jacobian` accept comma-separated
//! lists; every combination becomes one run. Lines starting with `#` are
//! comments. Keys under `result.` and `image.` are written into run manifests
//! and skipped when a manifest is read back as a configuration.

use crate::{HarnessError, Result};
use lpvarpro::operators::ConvBoundary;
use lpvarpro::varpro::JacobianVariant;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const PRESETS: [&str; 4] = [
    "paper-1d-jacobians",
    "paper-satellite-noise",
    "paper-satellite-psweep",
    "paper-grain",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Signal1d,
    SatelliteLike,
    GrainLike,
    /// Square graymap (P2 or P5) used as the true image.
    Image(PathBuf),
    /// Directory written by [`crate::archive::write_instance`].
    Archive(PathBuf),
}

impl Source {
    fn name(&self) -> &'static str {
        match self {
            Source::Signal1d => "signal-1d",
            Source::SatelliteLike => "satellite-like",
            Source::GrainLike => "grain-like",
            Source::Image(_) => "image",
            Source::Archive(_) => "archive",
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            Source::Image(p) | Source::Archive(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_1d(&self) -> bool {
        matches!(self, Source::Signal1d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    GnNls,
    Genvarpro,
    LpVarpro,
    MmgksOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegularizerChoice {
    Identity,
    D1,
    D2,
    Framelet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaChoice {
    Fixed,
    Gcv,
    /// Picks the value minimizing RRE(x) at the true parameters. Uses the
    /// ground truth, so it is for reproducing studies, not blind solves.
    SweepOracle,
}

macro_rules! string_enum {
    ($ty:ty, $what:literal, { $($v:path => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }
        impl Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = HarnessError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(HarnessError::Config(format!(
                        concat!("unknown ", $what, " '{}' (expected one of: {})"),
                        other,
                        [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(SolverKind, "solver", {
    SolverKind::GnNls => "gn-nls",
    SolverKind::Genvarpro => "genvarpro",
    SolverKind::LpVarpro => "lp-varpro",
    SolverKind::MmgksOnly => "mmgks-only",
});

string_enum!(RegularizerChoice, "regularizer", {
    RegularizerChoice::Identity => "identity",
    RegularizerChoice::D1 => "d1",
    RegularizerChoice::D2 => "d2",
    RegularizerChoice::Framelet => "framelet",
});

string_enum!(LambdaChoice, "lambda mode", {
    LambdaChoice::Fixed => "fixed",
    LambdaChoice::Gcv => "gcv",
    LambdaChoice::SweepOracle => "sweep-oracle",
});

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: Source,
    /// Signal length (1D) or image side (2D). Ignored for images and archives.
    pub size: usize,
    pub y_true: Vec<f64>,
    pub noise: Vec<f64>,
    pub boundary: ConvBoundary,
    pub seed: u64,
    pub solver: SolverKind,
    pub p: Vec<f64>,
    pub epsilon: f64,
    pub jacobian: Vec<JacobianVariant>,
    pub y0: Vec<f64>,
    pub max_iter: usize,
    pub inner_iter: usize,
    pub step_tol: f64,
    pub damping: bool,
    pub regularizer: RegularizerChoice,
    pub framelet_levels: usize,
    pub lambda_mode: LambdaChoice,
    pub lambda_value: f64,
    pub omega: f64,
    pub sweep_lo: f64,
    pub sweep_hi: f64,
    pub sweep_count: usize,
    pub out_dir: PathBuf,
    /// Outer iterations whose reconstructions are written out.
    pub snapshots: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            source: Source::SatelliteLike,
            size: 128,
            y_true: vec![1.5, 2.0, 1.0],
            noise: vec![0.01],
            boundary: ConvBoundary::Periodic,
            seed: 1,
            solver: SolverKind::LpVarpro,
            p: vec![1.0],
            epsilon: 1e-2,
            jacobian: vec![JacobianVariant::Reduced],
            y0: vec![3.0, 4.0, 2.0],
            max_iter: 30,
            inner_iter: 30,
            step_tol: 1e-6,
            damping: false,
            regularizer: RegularizerChoice::Identity,
            framelet_levels: 1,
            lambda_mode: LambdaChoice::Gcv,
            lambda_value: 1e-2,
            omega: 1.0,
            sweep_lo: 1e-4,
            sweep_hi: 1.0,
            sweep_count: 20,
            out_dir: PathBuf::from("results"),
            snapshots: Vec::new(),
        }
    }
}

/// Command-line overrides applied on top of a preset or file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub jacobian: Option<JacobianVariant>,
    pub p: Option<f64>,
    pub size: Option<usize>,
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_one<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("invalid value '{s}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse_one(key, p)).collect()
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(HarnessError::Config(format!("invalid boolean '{other}' for {key}"))),
    }
}

fn parse_jacobians(key: &str, s: &str) -> Result<Vec<JacobianVariant>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("invalid value '{p}' for {key}")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Serializes every key, so that [`ExperimentConfig::parse`] reproduces
    /// the value exactly.
    pub fn to_text(&self) -> String {
        let path = self.source.path().map(|p| p.display().to_string()).unwrap_or_default();
        let lines = [
            ("run.name", self.name.clone()),
            ("problem.source", self.source.name().to_string()),
            ("problem.path", path),
            ("problem.size", self.size.to_string()),
            ("problem.y_true", list(&self.y_true)),
            ("problem.noise", list(&self.noise)),
            ("problem.boundary", self.boundary.to_string()),
            ("problem.seed", self.seed.to_string()),
            ("solver.kind", self.solver.to_string()),
            ("solver.p", list(&self.p)),
            ("solver.epsilon", self.epsilon.to_string()),
            ("solver.jacobian", list(&self.jacobian)),
            ("solver.y0", list(&self.y0)),
            ("solver.max_iter", self.max_iter.to_string()),
            ("solver.inner_iter", self.inner_iter.to_string()),
            ("solver.step_tol", self.step_tol.to_string()),
            ("solver.damping", self.damping.to_string()),
            ("regularizer.kind", self.regularizer.to_string()),
            ("regularizer.framelet_levels", self.framelet_levels.to_string()),
            ("lambda.mode", self.lambda_mode.to_string()),
            ("lambda.value", self.lambda_value.to_string()),
            ("lambda.omega", self.omega.to_string()),
            ("lambda.sweep_lo", self.sweep_lo.to_string()),
            ("lambda.sweep_hi", self.sweep_hi.to_string()),
            ("lambda.sweep_count", self.sweep_count.to_string()),
            ("output.dir", self.out_dir.display().to_string()),
            ("output.snapshots", list(&self.snapshots)),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses configuration text on top of the defaults. Unknown keys are
    /// errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut source = c.source.name().to_string();
        let mut path = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!("line {}: expected key=value", no + 1)));
            };
            let (key, v) = (key.trim(), value.trim());
            match key {
                "run.name" => c.name = v.to_string(),
                "problem.source" => source = v.to_string(),
                "problem.path" => path = v.to_string(),
                "problem.size" => c.size = parse_one(key, v)?,
                "problem.y_true" => c.y_true = parse_list(key, v)?,
                "problem.noise" => c.noise = parse_list(key, v)?,
                "problem.boundary" => c.boundary = parse_one(key, v)?,
                "problem.seed" => c.seed = parse_one(key, v)?,
                "solver.kind" => c.solver = v.parse()?,
                "solver.p" => c.p = parse_list(key, v)?,
                "solver.epsilon" => c.epsilon = parse_one(key, v)?,
                "solver.jacobian" => c.jacobian = parse_jacobians(key, v)?,
                "solver.y0" => c.y0 = parse_list(key, v)?,
                "solver.max_iter" => c.max_iter = parse_one(key, v)?,
                "solver.inner_iter" => c.inner_iter = parse_one(key, v)?,
                "solver.step_tol" => c.step_tol = parse_one(key, v)?,
                "solver.damping" => c.damping = parse_bool(key, v)?,
                "regularizer.kind" => c.regularizer = v.parse()?,
                "regularizer.framelet_levels" => c.framelet_levels = parse_one(key, v)?,
                "lambda.mode" => c.lambda_mode = v.parse()?,
                "lambda.value" => c.lambda_value = parse_one(key, v)?,
                "lambda.omega" => c.omega = parse_one(key, v)?,
                "lambda.sweep_lo" => c.sweep_lo = parse_one(key, v)?,
                "lambda.sweep_hi" => c.sweep_hi = parse_one(key, v)?,
                "lambda.sweep_count" => c.sweep_count = parse_one(key, v)?,
                "output.dir" => c.out_dir = PathBuf::from(v),
                "output.snapshots" => c.snapshots = parse_list(key, v)?,
                k if k.starts_with("result.") || k.starts_with("image.") => {}
                other => return Err(HarnessError::Config(format!("unknown key '{other}'"))),
            }
        }
        c.source = match source.as_str() {
            "signal-1d" => Source::Signal1d,
            "satellite-like" => Source::SatelliteLike,
            "grain-like" => Source::GrainLike,
            "image" | "archive" if path.is_empty() => {
                return Err(HarnessError::Config(format!(
                    "problem.source={source} needs problem.path"
                )))
            }
            "image" => Source::Image(PathBuf::from(&path)),
            "archive" => Source::Archive(PathBuf::from(&path)),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown problem source '{other}' (expected signal-1d, satellite-like, \
                     grain-like, image or archive)"
                )))
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::input(path, e))?;
        let mut c = Self::parse(&text)?;
        if !text.lines().any(|l| l.trim_start().starts_with("run.name")) {
            if let Some(stem) = path.file_stem() {
                c.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let r = if self.source.is_1d() { 1 } else { 3 };
        if self.y_true.len() != r || self.y0.len() != r {
            return bad(format!(
                "{} expects {r} parameter(s) in problem.y_true and solver.y0",
                self.source.name()
            ));
        }
        if self.noise.is_empty() || self.noise.iter().any(|&v| !(v >= 0.0)) {
            return bad("problem.noise needs nonnegative levels".into());
        }
        if self.p.is_empty() || self.p.iter().any(|&p| !(p > 0.0 && p <= 2.0)) {
            return bad("solver.p values must lie in (0, 2]".into());
        }
        if self.jacobian.is_empty() {
            return bad("solver.jacobian is empty".into());
        }
        if self.source.is_1d() && self.size < 16 {
            return bad(format!("1D signals need problem.size >= 16, got {}", self.size));
        }
        if !self.source.is_1d() && self.size < 4 {
            return bad(format!("images need problem.size >= 4, got {}", self.size));
        }
        if self.source.is_1d() && self.regularizer == RegularizerChoice::Framelet {
            return bad("the framelet regularizer needs a 2D problem".into());
        }
        if !(1..=2).contains(&self.framelet_levels) {
            return bad("regularizer.framelet_levels must be 1 or 2".into());
        }
        if !(self.epsilon > 0.0 && self.step_tol > 0.0 && self.omega > 0.0) {
            return bad("solver.epsilon, solver.step_tol and lambda.omega must be positive".into());
        }
        if self.max_iter == 0 || self.inner_iter == 0 {
            return bad("iteration limits must be at least 1".into());
        }
        if !(self.lambda_value > 0.0) {
            return bad("lambda.value must be positive".into());
        }
        if !(self.sweep_lo > 0.0 && self.sweep_lo < self.sweep_hi && self.sweep_count >= 2) {
            return bad("lambda sweep needs 0 < sweep_lo < sweep_hi and sweep_count >= 2".into());
        }
        match self.solver {
            SolverKind::Genvarpro if self.p.iter().any(|&p| p != 2.0) => {
                return bad("genvarpro solves the p = 2 problem; use lp-varpro for other p".into())
            }
            SolverKind::Genvarpro | SolverKind::GnNls if self.lambda_mode == LambdaChoice::Gcv => {
                return bad(format!("{} needs lambda.mode fixed or sweep-oracle", self.solver))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(iters) = o.iters {
            self.max_iter = iters;
        }
        if let Some(j) = o.jacobian {
            self.jacobian = vec![j];
        }
        if let Some(p) = o.p {
            self.p = vec![p];
        }
        if let Some(size) = o.size {
            self.size = size;
        }
        self.validate()
    }

    /// Expands the list-valued keys into single runs. With one run the output
    /// directory is kept; otherwise each run gets a subdirectory named after
    /// the values that vary.
    pub fn runs(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &noise in &self.noise {
            for &p in &self.p {
                for &jac in &self.jacobian {
                    let mut c = self.clone();
                    c.noise = vec![noise];
                    c.p = vec![p];
                    c.jacobian = vec![jac];
                    let mut parts = Vec::new();
                    if self.noise.len() > 1 {
                        parts.push(format!("noise{noise}"));
                    }
                    if self.p.len() > 1 {
                        parts.push(format!("p{p}"));
                    }
                    if self.jacobian.len() > 1 {
                        parts.push(jac.to_string());
                    }
                    if !parts.is_empty() {
                        c.out_dir = self.out_dir.join(parts.join("_"));
                    }
                    out.push(c);
                }
            }
        }
        out
    }
}

/// Named experiment setups at desk scale (128 pixels per side).
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        name: name.to_string(),
        out_dir: PathBuf::from("results").join(name),
        ..Default::default()
    };
    let c = match name {
        "paper-1d-jacobians" => ExperimentConfig {
            source: Source::Signal1d,
            size: 128,
            y_true: vec![2.0],
            y0: vec![3.0],
            solver: SolverKind::Genvarpro,
            p: vec![2.0],
            jacobian: JacobianVariant::ALL.to_vec(),
            max_iter: 100,
            regularizer: RegularizerChoice::Identity,
            lambda_mode: LambdaChoice::SweepOracle,
            ..base
        },
        "paper-satellite-noise" => ExperimentConfig {
            source: Source::SatelliteLike,
            y_true: vec![1.5, 2.0, 1.0],
            y0: vec![3.0, 4.0, 2.0],
            noise: vec![0.01, 0.05, 0.10],
            p: vec![1.1],
            max_iter: 11,
            regularizer: RegularizerChoice::Identity,
            snapshots: vec![1, 5, 11],
            ..base
        },
        "paper-satellite-psweep" => ExperimentConfig {
            source: Source::SatelliteLike,
            y_true: vec![1.5, 2.0, 0.5],
            y0: vec![3.0, 4.0, 1.5],
            p: vec![0.8, 1.2, 2.0],
            max_iter: 11,
            regularizer: RegularizerChoice::D1,
            snapshots: vec![1, 5, 11],
            ..base
        },
        "paper-grain" => ExperimentConfig {
            source: Source::GrainLike,
            y_true: vec![3.0, 4.0, 0.5],
            y0: vec![5.0, 6.0, 1.0],
            p: vec![1.0],
            max_iter: 12,
            regularizer: RegularizerChoice::Framelet,
            snapshots: vec![1, 3, 5, 9],
            ..base
        },
        other => {
            return Err(HarnessError::Config(format!(
                "unknown preset '{other}' (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_round_trip() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c, "{name}");
        }
        assert!(matches!(preset("nope"), Err(HarnessError::Config(m)) if m.contains("paper-grain")));
    }

    #[test]
    fn preset_contents() {
        let s = preset("paper-satellite-noise").unwrap();
        assert_eq!(s.noise, vec![0.01, 0.05, 0.10]);
        assert_eq!((s.p.clone(), s.regularizer), (vec![1.1], RegularizerChoice::Identity));
        let s = preset("paper-satellite-psweep").unwrap();
        assert_eq!((s.p.clone(), s.regularizer), (vec![0.8, 1.2, 2.0], RegularizerChoice::D1));
        assert_eq!(s.y0, vec![3.0, 4.0, 1.5]);
        let g = preset("paper-grain").unwrap();
        assert_eq!(g.y0, vec![5.0, 6.0, 1.0]);
        assert_eq!((g.p.clone(), g.regularizer), (vec![1.0], RegularizerChoice::Framelet));
        let j = preset("paper-1d-jacobians").unwrap();
        assert_eq!((j.runs().len(), j.max_iter), (3, 100));
        assert_eq!(j.lambda_mode, LambdaChoice::SweepOracle);
    }

    #[test]
    fn parse_errors() {
        assert!(ExperimentConfig::parse("solver.kind=newton").is_err());
        assert!(ExperimentConfig::parse("nonsense").is_err());
        assert!(ExperimentConfig::parse("foo.bar=1").is_err());
        assert!(ExperimentConfig::parse("problem.source=image").is_err());
        assert!(ExperimentConfig::parse("solver.p=2.5").is_err());
        assert!(ExperimentConfig::parse("solver.kind=genvarpro\nsolver.p=1").is_err());
        assert!(ExperimentConfig::parse("problem.source=signal-1d").is_err());
        let ok = "# comment\nproblem.source=signal-1d\nproblem.y_true=2\nsolver.y0=3\n\nresult.lambda=0.1\n";
        assert_eq!(ExperimentConfig::parse(ok).unwrap().source, Source::Signal1d);
    }

    #[test]
    fn runs_expand_lists_into_subdirectories() {
        let c = preset("paper-satellite-psweep").unwrap();
        let runs = c.runs();
        assert_eq!(runs.len(), 3);
        assert_eq!(runs[1].p, vec![1.2]);
        assert!(runs[1].out_dir.ends_with("p1.2"));
        let single = preset("paper-grain").unwrap();
        assert_eq!(single.runs()[0].out_dir, single.out_dir);
    }

    #[test]
    fn overrides_apply() {
        let mut c = preset("paper-1d-jacobians").unwrap();
        c.apply(&Overrides {
            iters: Some(3),
            jacobian: Some(JacobianVariant::Half),
            seed: Some(9),
            ..Default::default()
        })
        .unwrap();
        assert_eq!((c.max_iter, c.seed, c.jacobian.clone()), (3, 9, vec![JacobianVariant::Half]));
        assert!(c.apply(&Overrides { p: Some(1.0), ..Default::default() }).is_err());
    }
}
