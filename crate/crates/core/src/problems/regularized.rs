//! Least squares with the smooth nonconvex penalty `phi(t) = t^2 / (1 + t^2)`:
//!
//! ```text
//! f_i(x) = (a_i . x - y_i)^2 / 2 + lambda * sum_j phi(x_j)
//! ```

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{estimate_sigma2, ComponentModel, FiniteSumProblem, Population, SmoothnessSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// `sup |phi''|`, attained at 0.
pub const PHI_SECOND_BOUND: f64 = 2.0;
/// Upper bound on `sup |phi'''|` (about 4.67, near |t| = 0.32).
pub const PHI_THIRD_BOUND: f64 = 4.7;
/// `sup |phi''''|`, attained at 0.
pub const PHI_FOURTH_BOUND: f64 = 24.0;

const PENALTY_WEIGHT: f64 = 1.0;
const TARGET_NOISE: f64 = 0.1;

pub fn phi(t: f64) -> f64 {
    t * t / (1.0 + t * t)
}

pub fn phi_prime(t: f64) -> f64 {
    let s = 1.0 + t * t;
    2.0 * t / (s * s)
}

pub fn phi_second(t: f64) -> f64 {
    let s = 1.0 + t * t;
    (2.0 - 6.0 * t * t) / (s * s * s)
}

#[derive(Debug, Clone)]
pub struct RegularizedLeastSquares {
    dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    lambda: f64,
    // verification route: F = x^T G x / 2 - h . x + k + penalty
    gram: DMatrix<f64>,
    moment: Vec<f64>,
    offset: f64,
}

impl RegularizedLeastSquares {
    pub fn new(dim: usize, features: Vec<f64>, targets: Vec<f64>, lambda: f64) -> Result<Self> {
        let n = targets.len();
        if n == 0 || features.len() != n * dim {
            return Err(Error::InvalidArgument("features must be n x dim".into()));
        }
        let a = DMatrix::from_row_slice(n, dim, &features);
        let gram = a.transpose() * &a / n as f64;
        let moment: Vec<f64> = (0..dim)
            .map(|j| (0..n).map(|i| features[i * dim + j] * targets[i]).sum::<f64>() / n as f64)
            .collect();
        let offset = targets.iter().map(|y| y * y).sum::<f64>() / (2.0 * n as f64);
        Ok(Self { dim, features, targets, lambda, gram, moment, offset })
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn component_l1(&self) -> f64 {
        let widest = (0..self.n()).map(|i| linalg::dot(self.row(i), self.row(i))).fold(0.0, f64::max);
        widest + PHI_SECOND_BOUND * self.lambda
    }
}

impl ComponentModel for RegularizedLeastSquares {
    fn dim(&self) -> usize {
        self.dim
    }

    fn add_sample_gradient(&self, key: u64, x: &[f64], scale: f64, out: &mut [f64]) {
        let i = key as usize;
        let a = self.row(i);
        let r = linalg::dot(a, x) - self.targets[i];
        for j in 0..self.dim {
            out[j] += scale * (r * a[j] + self.lambda * phi_prime(x[j]));
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let gx = linalg::mat_vec(&self.gram, x);
        0.5 * linalg::dot(x, &gx) - linalg::dot(&self.moment, x)
            + self.offset
            + self.lambda * x.iter().map(|t| phi(*t)).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let gx = linalg::mat_vec(&self.gram, x);
        (0..self.dim)
            .map(|j| gx[j] - self.moment[j] + self.lambda * phi_prime(x[j]))
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = self.gram.clone();
        for j in 0..self.dim {
            h[(j, j)] += self.lambda * phi_second(x[j]);
        }
        (&h + h.transpose()) * 0.5
    }
}

/// Random regression instance with `n` samples in `dim` dimensions.
///
/// Features are standard normal scaled by `1/sqrt(dim)`, targets come from a
/// random planted vector plus small noise, and the start point is an
/// independent standard normal draw. The constants hold globally.
pub fn make_regularized_problem(dim: usize, n: usize, seed: u64) -> Result<FiniteSumProblem> {
    if dim == 0 || n < 2 {
        return Err(Error::InvalidArgument(format!("need dim >= 1 and n >= 2 (dim={dim}, n={n})")));
    }
    let mut r = rng::labelled(seed, "regularized-data", 0);
    let scale = 1.0 / (dim as f64).sqrt();
    let features: Vec<f64> = (0..n * dim).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
    let planted: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let targets: Vec<f64> = (0..n)
        .map(|i| {
            linalg::dot(&features[i * dim..(i + 1) * dim], &planted)
                + TARGET_NOISE * r.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let start: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let model = RegularizedLeastSquares::new(dim, features, targets, PENALTY_WEIGHT)?;
    let l1 = model.component_l1();
    // F >= 0, so F(x0) bounds the optimality gap
    let delta_f = model.value(&start).max(1e-12);
    let mut rs = rng::labelled(seed, "regularized-sigma2", 0);
    let sigma2 = estimate_sigma2(&model, Population::Finite(n), &start, f64::INFINITY, &mut rs).max(1e-12);
    let spec = SmoothnessSpec {
        l1,
        l2: PHI_THIRD_BOUND * PENALTY_WEIGHT,
        l3: Some(PHI_FOURTH_BOUND * PENALTY_WEIGHT),
        sigma2,
        delta_f,
    };
    FiniteSumProblem::new(Arc::new(model), n, start, spec, f64::INFINITY)
}
