//! Test-problem generators: the 1D Gaussian deconvolution instance, 2D blind
//! deconvolution with a Gaussian PSF, bundled synthetic images, and exact-level
//! Gaussian noise.

use crate::error::{domain, Error, Result};
use crate::operators::{
    ConvBoundary, ForwardModel, ParamOperator, PsfBlurModel, PsfParams, Toeplitz1dModel,
};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Adds white Gaussian noise scaled so that `||e|| / ||d_true|| = level`.
/// Returns `(d, e)`.
pub fn add_noise<T: Scalar>(d_true: &DVector<T>, level: T, seed: u64) -> Result<(DVector<T>, DVector<T>)> {
    if level < T::zero() {
        return domain(format!("noise level must be nonnegative, got {level}"));
    }
    if level == T::zero() {
        return Ok((d_true.clone(), DVector::zeros(d_true.len())));
    }
    let dn = d_true.norm();
    if dn == T::zero() {
        return domain("cannot scale noise relative to zero data");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: DVector<f64> = DVector::from_fn(d_true.len(), |_, _| rng.sample(StandardNormal));
    let raw = raw.map(T::lit);
    let e = &raw * (level * dn / raw.norm());
    Ok((d_true + &e, e))
}

/// Forward family of a test problem.
#[derive(Clone, Copy, Debug)]
pub enum ProblemFamily<T: Scalar> {
    Toeplitz1d(Toeplitz1dModel),
    Blur2d(PsfBlurModel<T>),
}

impl<T: Scalar> ForwardModel<T> for ProblemFamily<T> {
    fn nrows(&self) -> usize {
        match self {
            ProblemFamily::Toeplitz1d(m) => ForwardModel::<T>::nrows(m),
            ProblemFamily::Blur2d(m) => m.nrows(),
        }
    }
    fn ncols(&self) -> usize {
        match self {
            ProblemFamily::Toeplitz1d(m) => ForwardModel::<T>::ncols(m),
            ProblemFamily::Blur2d(m) => m.ncols(),
        }
    }
    fn param_count(&self) -> usize {
        match self {
            ProblemFamily::Toeplitz1d(m) => ForwardModel::<T>::param_count(m),
            ProblemFamily::Blur2d(m) => m.param_count(),
        }
    }
    fn at(&self, y: &DVector<T>) -> Result<Box<dyn ParamOperator<T>>> {
        match self {
            ProblemFamily::Toeplitz1d(m) => m.at(y),
            ProblemFamily::Blur2d(m) => m.at(y),
        }
    }
    fn canonical(&self, y: &DVector<T>) -> DVector<T> {
        match self {
            ProblemFamily::Toeplitz1d(m) => m.canonical(y),
            ProblemFamily::Blur2d(m) => m.canonical(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProblemInstance<T: Scalar> {
    pub family: ProblemFamily<T>,
    /// `(rows, cols)` of the unknown; `(n, 1)` for signals.
    pub shape: (usize, usize),
    pub x_true: DVector<T>,
    pub d_true: DVector<T>,
    pub d: DVector<T>,
    pub y_true: DVector<T>,
    pub noise_level: T,
    pub seed: u64,
}

impl<T: Scalar> ProblemInstance<T> {
    fn build(
        family: ProblemFamily<T>,
        shape: (usize, usize),
        x_true: DVector<T>,
        y_true: DVector<T>,
        level: T,
        seed: u64,
    ) -> Result<Self> {
        let d_true = family.at(&y_true)?.apply(&x_true);
        let (d, _) = add_noise(&d_true, level, seed)?;
        Ok(Self {
            family,
            shape,
            x_true,
            d_true,
            d,
            y_true,
            noise_level: level,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.x_true.len()
    }

    /// Reshapes a vectorized unknown to the image shape (column-major).
    pub fn to_image(&self, x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_column_slice(self.shape.0, self.shape.1, x.as_slice())
    }
}

/// Test signal on `n` samples mixing edges and smooth parts: a wide and a
/// narrow plateau, a ramp that ends in a drop, and a narrow Gaussian bump.
/// Values lie in `[0, 1]`.
pub fn signal_1d<T: Scalar>(n: usize) -> DVector<T> {
    DVector::from_fn(n, |i, _| {
        let t = (i as f64 + 0.5) / n as f64;
        let mut v = 0.0;
        if (0.1..0.3).contains(&t) {
            v += 0.6;
        }
        if (0.34..0.37).contains(&t) {
            v += 0.7;
        }
        if (0.45..0.65).contains(&t) {
            v += (t - 0.45) / 0.2;
        }
        v += (-(t - 0.8f64).powi(2) / (2.0 * 0.03f64.powi(2))).exp();
        T::lit(v.min(1.0))
    })
}

/// 1D deconvolution with the Gaussian Toeplitz blur of width `sigma_true`.
pub fn make_1d_problem<T: Scalar>(n: usize, sigma_true: T, level: T, seed: u64) -> Result<ProblemInstance<T>> {
    if n < 16 {
        return domain(format!("1D problem needs n >= 16, got {n}"));
    }
    ProblemInstance::build(
        ProblemFamily::Toeplitz1d(Toeplitz1dModel { n }),
        (n, 1),
        signal_1d(n),
        DVector::from_element(1, sigma_true),
        level,
        seed,
    )
}

/// Bundled synthetic test images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BuiltinImage {
    /// Bright, sparse man-made object on a black background.
    SatelliteLike,
    /// High-contrast granular texture of irregular cells.
    GrainLike,
}

impl std::str::FromStr for BuiltinImage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "satellite-like" | "satellite" => Ok(BuiltinImage::SatelliteLike),
            "grain-like" | "grain" => Ok(BuiltinImage::GrainLike),
            other => Err(Error::Config(format!(
                "unknown builtin image '{other}' (expected satellite-like or grain-like)"
            ))),
        }
    }
}

impl std::fmt::Display for BuiltinImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BuiltinImage::SatelliteLike => "satellite-like",
            BuiltinImage::GrainLike => "grain-like",
        })
    }
}

impl BuiltinImage {
    pub fn render<T: Scalar>(&self, n: usize) -> Result<DMatrix<T>> {
        if n < 8 {
            return domain(format!("builtin images need n >= 8, got {n}"));
        }
        let img = match self {
            BuiltinImage::SatelliteLike => satellite_like(n),
            BuiltinImage::GrainLike => grain_like(n),
        };
        Ok(img.map(T::lit))
    }
}

fn satellite_like(n: usize) -> DMatrix<f64> {
    let s = n as f64 / 128.0;
    let mut img = DMatrix::zeros(n, n);
    let mut rect = |r0: f64, r1: f64, c0: f64, c1: f64, v: f64| {
        let (r0, r1) = ((r0 * s).round() as usize, ((r1 * s).round() as usize).min(n));
        let (c0, c1) = ((c0 * s).round() as usize, ((c1 * s).round() as usize).min(n));
        for j in c0..c1 {
            for i in r0..r1 {
                img[(i, j)] = v;
            }
        }
    };
    // Body, payload, and solar panels with dark struts.
    rect(50.0, 78.0, 54.0, 74.0, 0.85);
    rect(56.0, 72.0, 58.0, 70.0, 1.0);
    rect(40.0, 50.0, 60.0, 68.0, 0.6);
    rect(58.0, 70.0, 16.0, 52.0, 0.5);
    rect(58.0, 70.0, 76.0, 112.0, 0.5);
    for k in 0..4 {
        let c = 16.0 + 9.0 * k as f64;
        rect(58.0, 70.0, c + 8.0, c + 9.0, 0.15);
        rect(58.0, 70.0, c + 60.0, c + 61.0, 0.15);
    }
    rect(62.0, 66.0, 52.0, 54.0, 0.7);
    rect(62.0, 66.0, 74.0, 76.0, 0.7);
    // Antenna mast and dish.
    rect(28.0, 40.0, 63.0, 65.0, 0.75);
    rect(24.0, 28.0, 58.0, 70.0, 0.9);
    rect(78.0, 88.0, 61.0, 67.0, 0.4);
    img
}

fn grain_like(n: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x67_72_61_69_6e);
    let cells = (n * n / 48).max(4);
    let seeds: Vec<(f64, f64, f64)> = (0..cells)
        .map(|_| {
            let r = rng.random::<f64>() * n as f64;
            let c = rng.random::<f64>() * n as f64;
            let v = 0.15 + 0.85 * rng.random::<f64>();
            (r, c, v)
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let (pi, pj) = (i as f64 + 0.5, j as f64 + 0.5);
        let (mut d1, mut d2, mut v1) = (f64::INFINITY, f64::INFINITY, 0.0);
        for &(r, c, v) in &seeds {
            let d = ((pi - r).powi(2) + (pj - c).powi(2)).sqrt();
            if d < d1 {
                d2 = d1;
                d1 = d;
                v1 = v;
            } else if d < d2 {
                d2 = d;
            }
        }
        // Dark boundaries between neighbouring grains.
        if d2 - d1 < 0.9 {
            0.0
        } else {
            v1
        }
    })
}

/// Linearly rescales to `[0, 1]`.
pub fn rescale_unit<T: Scalar>(image: &DMatrix<T>) -> Result<DMatrix<T>> {
    let lo = image.min();
    let hi = image.max();
    if !(hi > lo) {
        return domain("image is constant and cannot be rescaled");
    }
    Ok(image.map(|v| (v - lo) / (hi - lo)))
}

/// 2D blind deconvolution: `d = G(y_true) vec(x_true) + e`, with the image
/// rescaled to `[0, 1]` and a Gaussian PSF of the default support.
pub fn make_blind_deconv_problem<T: Scalar>(
    image: &DMatrix<T>,
    y_true: &PsfParams<T>,
    level: T,
    seed: u64,
    boundary: ConvBoundary,
) -> Result<ProblemInstance<T>> {
    if image.nrows() != image.ncols() {
        return domain(format!(
            "blind deconvolution expects a square image, got {}x{}",
            image.nrows(),
            image.ncols()
        ));
    }
    let x = rescale_unit(image)?;
    let model = PsfBlurModel::new(x.shape()).with_boundary(boundary);
    ProblemInstance::build(
        ProblemFamily::Blur2d(model),
        x.shape(),
        DVector::from_column_slice(x.as_slice()),
        y_true.to_vector(),
        level,
        seed,
    )
}

pub fn make_builtin_problem<T: Scalar>(
    image: BuiltinImage,
    size: usize,
    y_true: &PsfParams<T>,
    level: T,
    seed: u64,
    boundary: ConvBoundary,
) -> Result<ProblemInstance<T>> {
    make_blind_deconv_problem(&image.render(size)?, y_true, level, seed, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lstsq;

    #[test]
    fn zero_noise_is_exact() {
        let d = DVector::from_vec(vec![1.0, 2.0, -3.0]);
        let (dn, e) = add_noise(&d, 0.0, 5).unwrap();
        assert_eq!(dn, d);
        assert_eq!(e.amax(), 0.0);
    }

    #[test]
    fn noise_ratio_is_exact_and_deterministic() {
        let d = DVector::from_fn(500, |i, _| (i as f64 * 0.1).sin() + 1.5);
        let (a, e) = add_noise(&d, 0.01, 42).unwrap();
        assert!((e.norm() / d.norm() - 0.01).abs() < 1e-14);
        let (b, _) = add_noise(&d, 0.01, 42).unwrap();
        assert_eq!(a, b);
        let (c, _) = add_noise(&d, 0.01, 43).unwrap();
        assert_ne!(a, c);
        assert!(add_noise(&DVector::<f64>::zeros(4), 0.01, 1).is_err());
        assert!(add_noise(&d, -0.1, 1).is_err());
    }

    #[test]
    fn signal_contract() {
        let x = signal_1d::<f64>(128);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(x.max() > 0.95);
        let edges = (1..128).filter(|&i| (x[i] - x[i - 1]).abs() > 0.2).count();
        assert_eq!(edges, 5);
    }

    #[test]
    fn one_dimensional_instance() {
        let p = make_1d_problem(128, 2.0f64, 0.01, 7).unwrap();
        let g = p.family.at(&p.y_true).unwrap().to_dense();
        assert!((&g * &p.x_true - &p.d_true).amax() < 1e-12);
        assert!(((&p.d - &p.d_true).norm() / p.d_true.norm() - 0.01).abs() < 1e-12);
        let sv = g.singular_values();
        let cond = sv.max() / sv.min();
        assert!(cond > 1.7e7 && cond < 1.7e9);
        assert!(make_1d_problem(8, 2.0f64, 0.01, 7).is_err());
    }

    #[test]
    fn noiseless_recovery_with_tiny_regularization() {
        let p = make_1d_problem(128, 2.0f64, 0.0, 0).unwrap();
        let g = p.family.at(&p.y_true).unwrap().to_dense();
        let lam = 1e-20f64;
        let mut a = DMatrix::zeros(256, 128);
        a.rows_mut(0, 128).copy_from(&g);
        a.rows_mut(128, 128).copy_from(&(DMatrix::identity(128, 128) * lam.sqrt()));
        let mut b = DVector::zeros(256);
        b.rows_mut(0, 128).copy_from(&p.d);
        let x = lstsq(&a, &b).unwrap();
        assert!((&x - &p.x_true).norm() / p.x_true.norm() < 1e-3);
    }

    #[test]
    fn builtin_images() {
        for b in [BuiltinImage::SatelliteLike, BuiltinImage::GrainLike] {
            let img = b.render::<f64>(64).unwrap();
            assert!(img.min() >= 0.0 && img.max() <= 1.0);
            assert_eq!(b.render::<f64>(64).unwrap(), img);
            assert_eq!(b.to_string().parse::<BuiltinImage>().unwrap(), b);
        }
        let sat = BuiltinImage::SatelliteLike.render::<f64>(128).unwrap();
        let lit = sat.iter().filter(|&&v| v > 0.0).count();
        assert!(lit < 128 * 128 / 4, "satellite should be sparse: {lit}");
        assert!("moon".parse::<BuiltinImage>().is_err());
    }

    #[test]
    fn blind_instance_consistency() {
        let y = PsfParams::new(1.5, 2.0, 1.0).unwrap();
        let p = make_builtin_problem(BuiltinImage::SatelliteLike, 64, &y, 0.05, 3, ConvBoundary::Periodic)
            .unwrap();
        let g = p.family.at(&p.y_true).unwrap();
        assert!((g.apply(&p.x_true) - &p.d_true).amax() < 1e-12);
        let ratio: f64 = (&p.d - &p.d_true).norm() / p.d_true.norm();
        assert!((ratio - 0.05).abs() < 1e-12);
        let q = make_builtin_problem(BuiltinImage::SatelliteLike, 64, &y, 0.05, 3, ConvBoundary::Periodic)
            .unwrap();
        assert_eq!(p.d, q.d);
    }

    #[test]
    fn narrow_psf_leaves_image_unchanged() {
        let y = PsfParams::new(0.1, 0.1, 0.0).unwrap();
        let p = make_builtin_problem(BuiltinImage::GrainLike, 32, &y, 0.0, 0, ConvBoundary::Periodic).unwrap();
        assert!((&p.d_true - &p.x_true).amax() < 1e-6);
    }

    #[test]
    fn non_square_image_rejected() {
        let y = PsfParams::new(1.0, 1.0, 0.0).unwrap();
        let img = DMatrix::<f64>::from_fn(8, 10, |i, j| (i + j) as f64);
        assert!(make_blind_deconv_problem(&img, &y, 0.01, 0, ConvBoundary::Periodic).is_err());
    }
}
