//! Objective oracles, gradient-evaluation accounting and synthetic problems.
//!
//! A problem is a [`ComponentModel`] (the per-sample gradient oracle plus the
//! exact value/gradient/Hessian used only for verification) wrapped with a
//! start point, its smoothness constants and the radius of the ball on which
//! those constants hold. [`FiniteSumProblem`] addresses components by index in
//! `0..n`; [`StreamingProblem`] treats every key as a fresh sample.

mod quartic;
mod regularized;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

pub use quartic::{make_saddle_problem, make_streaming_saddle_problem, QuarticModel, SaddleBuilder};
pub use regularized::{make_regularized_problem, RegularizedLeastSquares};

/// Samples per point used to measure the gradient-noise constant.
pub const SIGMA2_SAMPLES: usize = 10_000;
/// Random probe points (besides the start point) used to measure the noise constant.
pub const SIGMA2_PROBES: usize = 10;

/// Smoothness metadata of a problem.
///
/// `l1`: gradient Lipschitz constant of every component. `l2`: Hessian
/// Lipschitz constant. `l3`: third-derivative Lipschitz constant, present only
/// for problems declared third-order smooth. `sigma2`: gradient-noise
/// constant. `delta_f`: upper bound on `F(x0) - inf F`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothnessSpec {
    pub l1: f64,
    pub l2: f64,
    pub l3: Option<f64>,
    pub sigma2: f64,
    pub delta_f: f64,
}

impl SmoothnessSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
            }
        };
        check("L1", self.l1)?;
        check("L2", self.l2)?;
        if let Some(l3) = self.l3 {
            check("L3", l3)?;
        }
        check("sigma2", self.sigma2)?;
        check("delta_F", self.delta_f)
    }

    pub fn l3(&self) -> Result<f64> {
        self.l3.ok_or(Error::MissingConstant("L3"))
    }
}

/// Cumulative count of stochastic-gradient evaluations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GradCounter {
    count: u64,
}

impl GradCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, evaluations: u64) {
        self.count += evaluations;
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Who the sample keys address.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Population {
    /// Components `0..n`; batches are drawn without replacement.
    Finite(usize),
    /// Every key is an independent fresh sample.
    Streaming,
}

impl Population {
    pub fn size(&self) -> Option<u64> {
        match self {
            Population::Finite(n) => Some(*n as u64),
            Population::Streaming => None,
        }
    }
}

/// Per-sample gradient oracle plus exact verification oracles.
///
/// `add_sample_gradient` must be a deterministic function of `(key, x)` so
/// that the same sample can be evaluated at two points.
pub trait ComponentModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// `out += scale * grad f_key(x)`
    fn add_sample_gradient(&self, key: u64, x: &[f64], scale: f64, out: &mut [f64]);
    /// `out += scale * sum_k grad f_k(x)`
    fn add_batch_gradient(&self, keys: &[u64], x: &[f64], scale: f64, out: &mut [f64]) {
        for &k in keys {
            self.add_sample_gradient(k, x, scale, out);
        }
    }
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// Common surface of finite-sum and streaming problems used by the epoch
/// engine, the curvature finder and the drivers.
pub trait Problem: Send + Sync {
    fn model(&self) -> &dyn ComponentModel;
    fn population(&self) -> Population;
    fn start(&self) -> &[f64];
    fn smoothness(&self) -> &SmoothnessSpec;
    /// Radius of the ball around the start point on which the smoothness
    /// constants are certified.
    fn radius(&self) -> f64;

    fn dim(&self) -> usize {
        self.model().dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.model().value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.model().gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.model().hessian(x)
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        linalg::dist(x, self.start()) <= self.radius()
    }
}

#[derive(Clone)]
pub struct FiniteSumProblem {
    n: usize,
    model: Arc<dyn ComponentModel>,
    start: Vec<f64>,
    smoothness: SmoothnessSpec,
    radius: f64,
}

impl fmt::Debug for FiniteSumProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteSumProblem")
            .field("n", &self.n)
            .field("dim", &self.model.dim())
            .field("smoothness", &self.smoothness)
            .field("radius", &self.radius)
            .finish()
    }
}

impl FiniteSumProblem {
    pub fn new(
        model: Arc<dyn ComponentModel>,
        n: usize,
        start: Vec<f64>,
        smoothness: SmoothnessSpec,
        radius: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("finite-sum problem needs n >= 1".into()));
        }
        if start.len() != model.dim() {
            return Err(Error::InvalidArgument(format!(
                "start point has {} coordinates, model has {}",
                start.len(),
                model.dim()
            )));
        }
        smoothness.validate()?;
        Ok(Self { n, model, start, smoothness, radius })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Same problem with replaced smoothness metadata.
    pub fn with_smoothness(mut self, smoothness: SmoothnessSpec) -> Result<Self> {
        smoothness.validate()?;
        self.smoothness = smoothness;
        Ok(self)
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        if start.len() != self.model.dim() {
            return Err(Error::InvalidArgument("start point dimension mismatch".into()));
        }
        self.start = start;
        Ok(self)
    }
}

impl Problem for FiniteSumProblem {
    fn model(&self) -> &dyn ComponentModel {
        self.model.as_ref()
    }
    fn population(&self) -> Population {
        Population::Finite(self.n)
    }
    fn start(&self) -> &[f64] {
        &self.start
    }
    fn smoothness(&self) -> &SmoothnessSpec {
        &self.smoothness
    }
    fn radius(&self) -> f64 {
        self.radius
    }
}

#[derive(Clone)]
pub struct StreamingProblem {
    model: Arc<dyn ComponentModel>,
    start: Vec<f64>,
    smoothness: SmoothnessSpec,
    radius: f64,
}

impl fmt::Debug for StreamingProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StreamingProblem")
            .field("dim", &self.model.dim())
            .field("smoothness", &self.smoothness)
            .field("radius", &self.radius)
            .finish()
    }
}

impl StreamingProblem {
    pub fn new(
        model: Arc<dyn ComponentModel>,
        start: Vec<f64>,
        smoothness: SmoothnessSpec,
        radius: f64,
    ) -> Result<Self> {
        if start.len() != model.dim() {
            return Err(Error::InvalidArgument("start point dimension mismatch".into()));
        }
        smoothness.validate()?;
        Ok(Self { model, start, smoothness, radius })
    }

    pub fn with_smoothness(mut self, smoothness: SmoothnessSpec) -> Result<Self> {
        smoothness.validate()?;
        self.smoothness = smoothness;
        Ok(self)
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        if start.len() != self.model.dim() {
            return Err(Error::InvalidArgument("start point dimension mismatch".into()));
        }
        self.start = start;
        Ok(self)
    }
}

impl Problem for StreamingProblem {
    fn model(&self) -> &dyn ComponentModel {
        self.model.as_ref()
    }
    fn population(&self) -> Population {
        Population::Streaming
    }
    fn start(&self) -> &[f64] {
        &self.start
    }
    fn smoothness(&self) -> &SmoothnessSpec {
        &self.smoothness
    }
    fn radius(&self) -> f64 {
        self.radius
    }
}

/// Borrowed handle to either kind of problem, for APIs that dispatch on mode.
#[derive(Clone, Copy, Debug)]
pub enum ProblemRef<'a> {
    Finite(&'a FiniteSumProblem),
    Streaming(&'a StreamingProblem),
}

impl<'a> ProblemRef<'a> {
    pub fn as_dyn(&self) -> &'a dyn Problem {
        match *self {
            ProblemRef::Finite(p) => p,
            ProblemRef::Streaming(p) => p,
        }
    }
}

/// `m` distinct indices from `0..n`, uniform over size-`m` subsets.
pub fn sample_indices_without_replacement<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::Sizing { requested: m as u64, available: n as u64 });
    }
    if m == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if m == n {
        return Ok((0..n).collect());
    }
    Ok(rand::seq::index::sample(rng, n, m).into_vec())
}

/// Sample keys for one batch: distinct component indices for finite sums,
/// fresh independent keys for streaming problems.
pub fn draw_batch<R: Rng + ?Sized>(
    population: Population,
    size: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    match population {
        Population::Finite(n) => {
            let m = usize::try_from(size).map_err(|_| Error::Sizing {
                requested: size,
                available: n as u64,
            })?;
            Ok(sample_indices_without_replacement(n, m, rng)?
                .into_iter()
                .map(|i| i as u64)
                .collect())
        }
        Population::Streaming => {
            if size == 0 {
                return Err(Error::InvalidArgument("batch size must be at least 1".into()));
            }
            Ok((0..size).map(|_| rng.random::<u64>()).collect())
        }
    }
}

/// Evaluation points for [`minibatch_gradient`].
#[derive(Clone, Copy, Debug)]
pub enum Points<'a> {
    One(&'a [f64]),
    /// `(x, y)`: the batch average of `grad f_i(x) - grad f_i(y)`.
    Two(&'a [f64], &'a [f64]),
}

/// Batch-averaged gradient (one point) or gradient difference (two points).
///
/// Charges `|keys|` evaluations for one point and `2|keys|` for two.
pub fn minibatch_gradient(
    problem: &dyn Problem,
    points: Points<'_>,
    keys: &[u64],
    counter: &mut GradCounter,
) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::InvalidArgument("empty index set".into()));
    }
    let model = problem.model();
    let mut out = vec![0.0; model.dim()];
    let w = 1.0 / keys.len() as f64;
    match points {
        Points::One(x) => {
            model.add_batch_gradient(keys, x, w, &mut out);
            counter.charge(keys.len() as u64);
        }
        Points::Two(x, y) => {
            model.add_batch_gradient(keys, x, w, &mut out);
            model.add_batch_gradient(keys, y, -w, &mut out);
            counter.charge(2 * keys.len() as u64);
        }
    }
    Ok(out)
}

/// Largest mean squared deviation `E|grad f_k(x) - grad F(x)|^2` over the
/// start point and [`SIGMA2_PROBES`] random points of the certified ball,
/// each from [`SIGMA2_SAMPLES`] samples.
pub fn estimate_sigma2<R: Rng + ?Sized>(
    model: &dyn ComponentModel,
    population: Population,
    start: &[f64],
    radius: f64,
    rng: &mut R,
) -> f64 {
    let d = model.dim();
    let probe_radius = if radius.is_finite() { radius } else { 1.0 };
    let mut points = vec![start.to_vec()];
    for _ in 0..SIGMA2_PROBES {
        points.push(random_point_in_ball(start, probe_radius, rng));
    }
    let mut worst: f64 = 0.0;
    let mut g = vec![0.0; d];
    for x in &points {
        let full = model.gradient(x);
        let mut acc = 0.0;
        for _ in 0..SIGMA2_SAMPLES {
            let key = match population {
                Population::Finite(n) => rng.random_range(0..n as u64),
                Population::Streaming => rng.random::<u64>(),
            };
            g.iter_mut().for_each(|v| *v = 0.0);
            model.add_sample_gradient(key, x, 1.0, &mut g);
            acc += g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        worst = worst.max(acc / SIGMA2_SAMPLES as f64);
    }
    worst
}

/// Uniform point in the Euclidean ball of radius `r` around `center`.
pub fn random_point_in_ball<R: Rng + ?Sized>(center: &[f64], r: f64, rng: &mut R) -> Vec<f64> {
    let d = center.len();
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    linalg::normalize(&mut dir);
    let radius = r * rng.random::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, u)| c + radius * u).collect()
}

/// Monte-Carlo estimate of `E |(1/m) sum_{j in J} a_j|^2` for a uniform
/// size-`m` subset `J`, next to the upper bound `mean|a_j|^2 / m` (zero when
/// `m = N`).
#[derive(Clone, Debug)]
pub struct SamplingVarianceReport {
    pub family_size: usize,
    pub subset_size: usize,
    pub estimate: f64,
    pub standard_error: f64,
    pub bound: f64,
}

pub fn sampling_variance_check<R: Rng + ?Sized>(
    vectors: &[Vec<f64>],
    m: usize,
    draws: usize,
    rng: &mut R,
) -> Result<SamplingVarianceReport> {
    let n = vectors.len();
    if n == 0 || m == 0 || m > n || draws == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= m <= N and draws >= 1 (N={n}, m={m}, draws={draws})"
        )));
    }
    let d = vectors[0].len();
    let mean_sq = vectors.iter().map(|a| linalg::dot(a, a)).sum::<f64>() / n as f64;
    let mut s = 0.0;
    let mut s2 = 0.0;
    let mut acc = vec![0.0; d];
    for _ in 0..draws {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for j in rand::seq::index::sample(rng, n, m) {
            linalg::axpy(1.0 / m as f64, &vectors[j], &mut acc);
        }
        let v = linalg::dot(&acc, &acc);
        s += v;
        s2 += v * v;
    }
    let k = draws as f64;
    let estimate = s / k;
    let var = (s2 / k - estimate * estimate).max(0.0);
    let bound = if m < n { mean_sq / m as f64 } else { 0.0 };
    Ok(SamplingVarianceReport {
        family_size: n,
        subset_size: m,
        estimate,
        standard_error: (var / k).sqrt(),
        bound,
    })
}
