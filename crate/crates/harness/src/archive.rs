//! Problem instances stored as a directory: `x_true.csv`, `d_true.csv` and
//! `d.csv` in the unknown's shape, plus `meta.txt` with `key=value` lines.

use crate::io::{read_csv_matrix, write_csv_matrix, write_text};
use crate::{HarnessError, Result};
use lpvarpro::operators::{ConvBoundary, ForwardModel, PsfBlurModel, Toeplitz1dModel};
use lpvarpro::problems::{ProblemFamily, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::path::Path;

fn join(v: &DVector<f64>) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_instance(dir: &Path, inst: &ProblemInstance<f64>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    let (rows, cols) = inst.shape;
    let mut meta = String::new();
    match &inst.family {
        ProblemFamily::Toeplitz1d(_) => meta.push_str("family=toeplitz-1d\n"),
        ProblemFamily::Blur2d(m) => {
            meta.push_str("family=psf-blur-2d\n");
            meta.push_str(&format!("boundary={}\n", m.boundary));
            meta.push_str(&format!("psf_size={},{}\n", m.psf_size.0, m.psf_size.1));
        }
    }
    meta.push_str(&format!("rows={rows}\ncols={cols}\n"));
    meta.push_str(&format!("y_true={}\n", join(&inst.y_true)));
    meta.push_str(&format!("level={}\nseed={}\n", inst.noise_level, inst.seed));
    write_text(&dir.join("meta.txt"), &meta)?;
    for (name, v) in [("x_true", &inst.x_true), ("d_true", &inst.d_true), ("d", &inst.d)] {
        write_csv_matrix(&dir.join(format!("{name}.csv")), &DMatrix::from_column_slice(rows, cols, v.as_slice()))?;
    }
    Ok(())
}

/// Loads an archive and checks that `d_true = G(y_true) x_true`.
pub fn read_instance(dir: &Path) -> Result<ProblemInstance<f64>> {
    let meta_path = dir.join("meta.txt");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| HarnessError::input(&meta_path, e))?;
    let meta: HashMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let bad = |m: String| HarnessError::input(&meta_path, m);
    let get = |k: &str| meta.get(k).copied().ok_or_else(|| bad(format!("missing '{k}'")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad value for '{k}'"))) };
    let rows = num("rows")? as usize;
    let cols = num("cols")? as usize;
    let y_true: Vec<f64> = get("y_true")?
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| bad("bad y_true".into())))
        .collect::<Result<_>>()?;
    let family = match get("family")? {
        "toeplitz-1d" => ProblemFamily::Toeplitz1d(Toeplitz1dModel { n: rows * cols }),
        "psf-blur-2d" => {
            let boundary: ConvBoundary = get("boundary")?.parse().map_err(|e: lpvarpro::Error| bad(e.to_string()))?;
            let (a, b) = get("psf_size")?.split_once(',').ok_or_else(|| bad("bad psf_size".into()))?;
            let size = (
                a.trim().parse().map_err(|_| bad("bad psf_size".into()))?,
                b.trim().parse().map_err(|_| bad("bad psf_size".into()))?,
            );
            ProblemFamily::Blur2d(PsfBlurModel::new((rows, cols)).with_boundary(boundary).with_psf_size(size))
        }
        other => return Err(bad(format!("unknown family '{other}'"))),
    };
    let load = |name: &str| -> Result<DVector<f64>> {
        let path = dir.join(format!("{name}.csv"));
        let m = read_csv_matrix(&path)?;
        if m.shape() != (rows, cols) {
            return Err(HarnessError::input(&path, format!("expected a {rows}x{cols} matrix")));
        }
        Ok(DVector::from_column_slice(m.as_slice()))
    };
    let inst = ProblemInstance {
        family,
        shape: (rows, cols),
        x_true: load("x_true")?,
        d_true: load("d_true")?,
        d: load("d")?,
        y_true: DVector::from_vec(y_true),
        noise_level: num("level")?,
        seed: num("seed")? as u64,
    };
    let check = inst.family.at(&inst.y_true)?.apply(&inst.x_true);
    if (&check - &inst.d_true).norm() > 1e-10 * inst.d_true.norm().max(1.0) {
        return Err(bad("d_true does not match the forward model at y_true".into()));
    }
    Ok(inst)
}
