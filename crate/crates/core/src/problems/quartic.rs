//! Separable quartic saddles, optionally rotated and carrying zero-mean
//! component noise:
//!
//! ```text
//! F(x)   = sum_j  lambda_j y_j^2 / 2 + c y_j^4 / 4,      y = Q^T x
//! f_k(x) = F(x) + b_k . x + sum_j c_kj x_j^2 / 2
//! ```
//!
//! With `Q = I` and spectrum `(1, .., 1, lambda_neg)` this is the strict-saddle
//! fixture: the origin has zero gradient and bottom Hessian eigenvalue
//! `lambda_neg`, and the minimizers sit at `+-sqrt(-lambda_neg / c) e_d`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{estimate_sigma2, ComponentModel, FiniteSumProblem, Population, SmoothnessSpec, StreamingProblem};
use crate::error::{Error, Result};
use crate::rng::{self, hashed_symmetric_unit};

const DEFAULT_OFFSET_NOISE: f64 = 0.1;
const DEFAULT_CURVATURE_NOISE: f64 = 0.05;
const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone)]
enum Noise {
    None,
    /// Row-major `n x d` tables, centered over components.
    Table { offsets: Vec<f64>, curvatures: Vec<f64> },
    /// Uniform noise regenerated from the sample key; per-coordinate standard
    /// deviations are the two scales.
    Hashed { offset: f64, curvature: f64 },
}

#[derive(Debug, Clone)]
pub struct QuarticModel {
    spectrum: Vec<f64>,
    quartic: f64,
    rotation: Option<DMatrix<f64>>,
    noise: Noise,
}

impl QuarticModel {
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn quartic(&self) -> f64 {
        self.quartic
    }

    fn to_local(&self, x: &[f64]) -> Vec<f64> {
        match &self.rotation {
            None => x.to_vec(),
            Some(q) => {
                let d = x.len();
                (0..d).map(|j| (0..d).map(|i| q[(i, j)] * x[i]).sum()).collect()
            }
        }
    }

    /// `out += scale * grad F(x)`
    fn add_base_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match &self.rotation {
            None => {
                for ((o, &xi), &l) in out.iter_mut().zip(x).zip(&self.spectrum) {
                    *o += scale * (l * xi + self.quartic * xi * xi * xi);
                }
            }
            Some(q) => {
                let y = self.to_local(x);
                let d = x.len();
                let w: Vec<f64> = y
                    .iter()
                    .zip(&self.spectrum)
                    .map(|(&yj, &l)| l * yj + self.quartic * yj * yj * yj)
                    .collect();
                for (i, o) in out.iter_mut().enumerate().take(d) {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += q[(i, j)] * w[j];
                    }
                    *o += scale * acc;
                }
            }
        }
    }

    fn max_abs_curvature_noise(&self) -> f64 {
        match &self.noise {
            Noise::None => 0.0,
            Noise::Table { curvatures, .. } => curvatures.iter().fold(0.0, |m, c| m.max(c.abs())),
            Noise::Hashed { curvature, .. } => SQRT3 * curvature,
        }
    }

    /// Component gradient Lipschitz constant on the ball of radius `r` around the origin.
    fn component_l1(&self, r: f64) -> f64 {
        let bump = 3.0 * self.quartic * r * r;
        match (&self.rotation, &self.noise) {
            (None, Noise::Table { curvatures, .. }) => {
                let d = self.spectrum.len();
                let mut worst: f64 = 0.0;
                for row in curvatures.chunks(d) {
                    for (l, c) in self.spectrum.iter().zip(row) {
                        let lo = l + c;
                        worst = worst.max(lo.abs()).max((lo + bump).abs());
                    }
                }
                worst
            }
            _ => {
                let base = self
                    .spectrum
                    .iter()
                    .fold(0.0f64, |m, l| m.max(l.abs()).max((l + bump).abs()));
                base + self.max_abs_curvature_noise()
            }
        }
    }

    fn min_value(&self) -> Option<f64> {
        if self.quartic > 0.0 {
            Some(
                self.spectrum
                    .iter()
                    .filter(|l| **l < 0.0)
                    .map(|l| -l * l / (4.0 * self.quartic))
                    .sum(),
            )
        } else if self.spectrum.iter().all(|l| *l >= 0.0) {
            Some(0.0)
        } else {
            None
        }
    }
}

impl ComponentModel for QuarticModel {
    fn dim(&self) -> usize {
        self.spectrum.len()
    }

    fn add_sample_gradient(&self, key: u64, x: &[f64], scale: f64, out: &mut [f64]) {
        self.add_batch_gradient(std::slice::from_ref(&key), x, scale, out);
    }

    fn add_batch_gradient(&self, keys: &[u64], x: &[f64], scale: f64, out: &mut [f64]) {
        self.add_base_gradient(x, scale * keys.len() as f64, out);
        let d = x.len();
        match &self.noise {
            Noise::None => {}
            Noise::Table { offsets, curvatures } => {
                for &key in keys {
                    let row = key as usize * d;
                    let b = &offsets[row..row + d];
                    let c = &curvatures[row..row + d];
                    for j in 0..d {
                        out[j] += scale * (b[j] + c[j] * x[j]);
                    }
                }
            }
            Noise::Hashed { offset, curvature } => {
                for &key in keys {
                    for j in 0..d {
                        let b = SQRT3 * offset * hashed_symmetric_unit(key, 2 * j as u64);
                        let c = SQRT3 * curvature * hashed_symmetric_unit(key, 2 * j as u64 + 1);
                        out[j] += scale * (b + c * x[j]);
                    }
                }
            }
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.to_local(x)
            .iter()
            .zip(&self.spectrum)
            .map(|(&y, &l)| 0.5 * l * y * y + 0.25 * self.quartic * y * y * y * y)
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_base_gradient(x, 1.0, &mut g);
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let y = self.to_local(x);
        let diag = DVector::from_iterator(
            y.len(),
            y.iter().zip(&self.spectrum).map(|(&yj, &l)| l + 3.0 * self.quartic * yj * yj),
        );
        match &self.rotation {
            None => DMatrix::from_diagonal(&diag),
            Some(q) => {
                let h = q * DMatrix::from_diagonal(&diag) * q.transpose();
                // exact symmetry
                (&h + h.transpose()) * 0.5
            }
        }
    }
}

/// Builder for quartic saddle fixtures.
#[derive(Clone, Debug)]
pub struct SaddleBuilder {
    spectrum: Vec<f64>,
    quartic: f64,
    rotate: bool,
    components: usize,
    offset_noise: f64,
    curvature_noise: f64,
    radius: Option<f64>,
    start: Option<Vec<f64>>,
    seed: u64,
}

impl SaddleBuilder {
    /// Spectrum `(1, .., 1, negative_eigenvalue)`, unit quartic coefficient.
    pub fn new(dim: usize, negative_eigenvalue: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("saddle needs dim >= 2, got {dim}")));
        }
        if !(negative_eigenvalue < 0.0 && negative_eigenvalue.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "negative eigenvalue must be < 0, got {negative_eigenvalue}"
            )));
        }
        let mut spectrum = vec![1.0; dim];
        spectrum[dim - 1] = negative_eigenvalue;
        Ok(Self::with_spectrum(spectrum))
    }

    /// Arbitrary Hessian spectrum at the origin.
    pub fn with_spectrum(spectrum: Vec<f64>) -> Self {
        Self {
            spectrum,
            quartic: 1.0,
            rotate: false,
            components: 1,
            offset_noise: DEFAULT_OFFSET_NOISE,
            curvature_noise: DEFAULT_CURVATURE_NOISE,
            radius: None,
            start: None,
            seed: 0,
        }
    }

    pub fn quartic(mut self, c: f64) -> Self {
        self.quartic = c;
        self
    }

    /// Conjugate the spectrum by a seeded random orthogonal matrix.
    pub fn rotated(mut self) -> Self {
        self.rotate = true;
        self
    }

    pub fn components(mut self, n: usize) -> Self {
        self.components = n;
        self
    }

    pub fn noise(mut self, offset: f64, curvature: f64) -> Self {
        self.offset_noise = offset;
        self.curvature_noise = curvature;
        self
    }

    pub fn radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    pub fn start(mut self, x0: Vec<f64>) -> Self {
        self.start = Some(x0);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.spectrum.is_empty() || self.spectrum.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("spectrum must be nonempty and finite".into()));
        }
        if !(self.quartic >= 0.0 && self.quartic.is_finite()) {
            return Err(Error::InvalidArgument("quartic coefficient must be >= 0".into()));
        }
        if self.offset_noise < 0.0 || self.curvature_noise < 0.0 {
            return Err(Error::InvalidArgument("noise scales must be >= 0".into()));
        }
        if let Some(x0) = &self.start {
            if x0.len() != self.spectrum.len() {
                return Err(Error::InvalidArgument("start point dimension mismatch".into()));
            }
        }
        Ok(())
    }

    fn default_radius(&self) -> f64 {
        if self.quartic == 0.0 {
            return f64::INFINITY;
        }
        let deepest = self.spectrum.iter().fold(0.0f64, |m, l| m.max(-l));
        1.2 * (deepest / self.quartic).sqrt().max(1.0)
    }

    fn rotation(&self) -> Option<DMatrix<f64>> {
        if !self.rotate {
            return None;
        }
        let d = self.spectrum.len();
        let mut r = rng::labelled(self.seed, "saddle-rotation", 0);
        let g = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
        Some(g.qr().q())
    }

    fn build(&self, noise: Noise, population: Population) -> Result<(Arc<QuarticModel>, Vec<f64>, SmoothnessSpec, f64)> {
        self.validate()?;
        let model = QuarticModel {
            spectrum: self.spectrum.clone(),
            quartic: self.quartic,
            rotation: self.rotation(),
            noise,
        };
        let radius = self.radius.unwrap_or_else(|| self.default_radius());
        let start = self.start.clone().unwrap_or_else(|| vec![0.0; self.spectrum.len()]);
        let reach = radius + crate::linalg::norm(&start);
        let l1 = model.component_l1(reach);
        if !l1.is_finite() {
            return Err(Error::InvalidArgument(
                "quartic fixtures need a finite radius to certify L1".into(),
            ));
        }
        let (l2, l3) = if self.quartic > 0.0 {
            (6.0 * self.quartic * reach, 6.0 * self.quartic)
        } else {
            // constant Hessian: any positive constant is valid
            (1.0, 1.0)
        };
        let min = model.min_value().ok_or_else(|| {
            Error::InvalidArgument("negative curvature without a quartic term is unbounded below".into())
        })?;
        let delta_f = (model.value(&start) - min).max(1e-12);
        let mut r = rng::labelled(self.seed, "saddle-sigma2", 0);
        let sigma2 = estimate_sigma2(&model, population, &start, radius, &mut r).max(1e-12);
        let spec = SmoothnessSpec { l1, l2, l3: Some(l3), sigma2, delta_f };
        Ok((Arc::new(model), start, spec, radius))
    }

    pub fn finite(self) -> Result<FiniteSumProblem> {
        let n = self.components;
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one component".into()));
        }
        let d = self.spectrum.len();
        let mut r = rng::labelled(self.seed, "saddle-noise", 0);
        let mut table = |scale: f64| {
            let mut t: Vec<f64> = (0..n * d).map(|_| scale * r.random_range(-SQRT3..SQRT3)).collect();
            for j in 0..d {
                let mean = (0..n).map(|i| t[i * d + j]).sum::<f64>() / n as f64;
                (0..n).for_each(|i| t[i * d + j] -= mean);
            }
            t
        };
        let noise = if (self.offset_noise == 0.0 && self.curvature_noise == 0.0) || n == 1 {
            Noise::None
        } else {
            let offsets = table(self.offset_noise);
            let curvatures = table(self.curvature_noise);
            Noise::Table { offsets, curvatures }
        };
        let (model, start, spec, radius) = self.build(noise, Population::Finite(n))?;
        FiniteSumProblem::new(model, n, start, spec, radius)
    }

    pub fn streaming(self) -> Result<StreamingProblem> {
        let noise = if self.offset_noise == 0.0 && self.curvature_noise == 0.0 {
            Noise::None
        } else {
            Noise::Hashed { offset: self.offset_noise, curvature: self.curvature_noise }
        };
        let (model, start, spec, radius) = self.build(noise, Population::Streaming)?;
        StreamingProblem::new(model, start, spec, radius)
    }
}

/// Strict saddle at the origin: `F = x^T A x / 2 + sum_j x_j^4 / 4` with
/// `A = diag(1, .., 1, negative_eigenvalue)`, split into `n` noisy components.
pub fn make_saddle_problem(dim: usize, n: usize, negative_eigenvalue: f64, seed: u64) -> Result<FiniteSumProblem> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    SaddleBuilder::new(dim, negative_eigenvalue)?.components(n).seed(seed).finite()
}

/// Streaming counterpart of [`make_saddle_problem`]: each sample adds fresh
/// zero-mean offset and curvature noise.
pub fn make_streaming_saddle_problem(dim: usize, negative_eigenvalue: f64, seed: u64) -> Result<StreamingProblem> {
    SaddleBuilder::new(dim, negative_eigenvalue)?.seed(seed).streaming()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::problems::Problem;

    #[test]
    fn origin_is_a_strict_saddle() {
        let p = make_saddle_problem(2, 1, -1.0, 0).unwrap();
        assert!(linalg::norm(&p.gradient(&[0.0, 0.0])) == 0.0);
        let lmin = linalg::min_eigenvalue(&p.hessian(&[0.0, 0.0]));
        assert!((lmin + 1.0).abs() < 1e-15);
    }

    #[test]
    fn minimizers_of_planar_saddle() {
        let p = make_saddle_problem(2, 1, -1.0, 0).unwrap();
        for s in [1.0, -1.0] {
            let x = [0.0, s];
            assert!(linalg::norm(&p.gradient(&x)) < 1e-15);
            assert!((p.value(&x) + 0.25).abs() < 1e-15);
        }
        assert!((p.smoothness().delta_f - 0.25).abs() < 1e-15);
    }

    #[test]
    fn quartic_hessian_lipschitz_on_ball() {
        // d/dx (3x^2) = 6x, so 6R bounds the Lipschitz constant on |x| <= R
        let p = SaddleBuilder::new(3, -1.0).unwrap().radius(2.0).finite().unwrap();
        assert!((p.smoothness().l2 - 12.0).abs() < 1e-15);
        assert_eq!(p.smoothness().l3, Some(6.0));
    }

    #[test]
    fn rotated_spectrum_is_preserved() {
        let spectrum = vec![-0.2, 0.1, 0.5, 1.0];
        let p = SaddleBuilder::with_spectrum(spectrum.clone()).rotated().seed(4).finite().unwrap();
        let h = p.hessian(&[0.0; 4]);
        let mut eig: Vec<f64> = nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(&spectrum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unbounded_quadratic_is_rejected() {
        let r = SaddleBuilder::with_spectrum(vec![-1.0, 1.0]).quartic(0.0).finite();
        assert!(r.is_err());
    }

    #[test]
    fn single_component_is_noise_free() {
        let p = make_saddle_problem(4, 1, -0.5, 3).unwrap();
        assert!(p.smoothness().sigma2 <= 1e-12);
    }
}
