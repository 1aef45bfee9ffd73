//! First-order negative-curvature search.
//!
//! Shifted power iteration on `L1 I - H`, where the Hessian action is a
//! finite difference of minibatch gradients. A candidate is returned only
//! after a large-batch Rayleigh check certifies `v^T H v <= -eps_H / 2`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{
    draw_batch, minibatch_gradient, FiniteSumProblem, GradCounter, Points, Problem, ProblemRef,
    StreamingProblem,
};

/// Certification threshold as a multiple of `eps_H`.
pub const CERTIFY_LEVEL: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct NcQuery {
    pub z: Vec<f64>,
    pub eps_h: f64,
    pub delta: f64,
    pub l1: f64,
    pub l2: f64,
}

impl NcQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_h > 0.0 && self.eps_h < 1.0) {
            return Err(Error::InvalidArgument(format!("eps_H must lie in (0, 1), got {}", self.eps_h)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.l1 > 0.0 && self.l1.is_finite()) {
            return Err(Error::InvalidArgument(format!("L1 must be positive, got {}", self.l1)));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::InvalidArgument(format!("L2 must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }

    /// Finite-difference step; its Taylor error `L2 q / 2` is `eps_H / 20`.
    pub fn displacement(&self) -> f64 {
        if self.l2 > 0.0 && self.l2.is_finite() {
            self.eps_h / (10.0 * self.l2)
        } else {
            1e-5 * (1.0 + linalg::norm(&self.z))
        }
    }

    /// Upper bound on the Taylor error of one difference quotient.
    pub fn taylor_error(&self) -> f64 {
        if self.l2 > 0.0 && self.l2.is_finite() {
            self.l2 * self.displacement() / 2.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NcResult {
    /// Unit vector with certified `v^T H v <= -eps_H / 2`.
    Direction(Vec<f64>),
    Bottom,
}

impl NcResult {
    pub fn direction(&self) -> Option<&[f64]> {
        match self {
            NcResult::Direction(v) => Some(v),
            NcResult::Bottom => None,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, NcResult::Bottom)
    }
}

#[derive(Clone, Debug)]
pub struct NcProbe {
    pub result: NcResult,
    /// Large-batch Rayleigh estimate of the returned direction, or the
    /// smallest one seen when nothing was certified.
    pub rayleigh_estimate: f64,
    /// Every restart ran to its step budget without a certificate.
    pub budget_exhausted: bool,
    pub restarts: usize,
    pub power_steps: u64,
    pub certifications: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NcSettings {
    /// `c` in the per-restart budget `c (L1 / eps_H) ln(d / delta)`.
    pub power_constant: f64,
    /// Search minibatch; defaults to `ceil(sqrt n)` (finite) or
    /// `ceil(L1 / eps_H)` (streaming).
    pub search_batch: Option<u64>,
    /// Streaming certification starts here and doubles up to the max.
    pub min_certify_batch: u64,
    pub max_certify_batch: u64,
}

impl Default for NcSettings {
    fn default() -> Self {
        Self { power_constant: 8.0, search_batch: None, min_certify_batch: 256, max_certify_batch: 1 << 16 }
    }
}

impl NcSettings {
    pub fn steps_per_restart(&self, query: &NcQuery, dim: usize) -> u64 {
        let v = self.power_constant * (query.l1 / query.eps_h) * (dim as f64 / query.delta).ln();
        v.ceil().max(1.0) as u64
    }

    pub fn restarts(&self, query: &NcQuery) -> usize {
        (1.0 / query.delta).ln().ceil().max(1.0) as usize
    }
}

/// `(1/|I|) sum_i [grad f_i(z + q v) - grad f_i(z)] / q`; charges `2|I|`.
pub fn hvp_estimate(
    problem: &dyn Problem,
    z: &[f64],
    v: &[f64],
    q: f64,
    keys: &[u64],
    counter: &mut GradCounter,
) -> Result<Vec<f64>> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("displacement must be positive, got {q}")));
    }
    let mut shifted = z.to_vec();
    linalg::axpy(q, v, &mut shifted);
    let mut out = minibatch_gradient(problem, Points::Two(&shifted, z), keys, counter)?;
    out.iter_mut().for_each(|x| *x /= q);
    Ok(out)
}

/// `v^T H(z) v / |v|^2` from the verification Hessian. Never charges.
pub fn rayleigh(problem: &dyn Problem, z: &[f64], v: &[f64]) -> f64 {
    let h = problem.hessian(z);
    let hv = linalg::mat_vec(&h, v);
    linalg::dot(v, &hv) / linalg::dot(v, v)
}

pub fn neon_finite<R: Rng + ?Sized>(
    problem: &FiniteSumProblem,
    query: &NcQuery,
    settings: &NcSettings,
    rng: &mut R,
    counter: &mut GradCounter,
) -> Result<NcProbe> {
    query.validate()?;
    let n = problem.n() as u64;
    let batch = settings
        .search_batch
        .unwrap_or_else(|| (n as f64).sqrt().ceil() as u64)
        .clamp(1, n);
    let all: Vec<u64> = (0..n).collect();
    let q = query.displacement();
    let threshold = -CERTIFY_LEVEL * query.eps_h;
    let certify = |v: &[f64], _rng: &mut R, counter: &mut GradCounter| -> Result<(bool, f64)> {
        let hv = hvp_estimate(problem, &query.z, v, q, &all, counter)?;
        let est = linalg::dot(v, &hv);
        Ok((est <= threshold, est))
    };
    search(problem, query, settings, batch, rng, counter, certify)
}

pub fn neon_online<R: Rng + ?Sized>(
    problem: &StreamingProblem,
    query: &NcQuery,
    settings: &NcSettings,
    rng: &mut R,
    counter: &mut GradCounter,
) -> Result<NcProbe> {
    query.validate()?;
    let batch = settings
        .search_batch
        .unwrap_or_else(|| (query.l1 / query.eps_h).ceil() as u64)
        .max(1);
    let q = query.displacement();
    let z_score = (2.0 * (1.0 / query.delta).ln()).sqrt();
    let accept = -0.5 * query.eps_h - query.taylor_error();
    let threshold = -CERTIFY_LEVEL * query.eps_h;
    let model = problem.model();
    let d = problem.dim();
    let certify = |v: &[f64], rng: &mut R, counter: &mut GradCounter| -> Result<(bool, f64)> {
        let mut shifted = query.z.clone();
        linalg::axpy(q, v, &mut shifted);
        let mut diff = vec![0.0; d];
        let (mut sum, mut sq, mut count) = (0.0, 0.0, 0u64);
        let mut target = settings.min_certify_batch.max(2);
        loop {
            while count < target {
                let key: u64 = rng.random();
                diff.iter_mut().for_each(|x| *x = 0.0);
                model.add_sample_gradient(key, &shifted, 1.0, &mut diff);
                model.add_sample_gradient(key, &query.z, -1.0, &mut diff);
                let r = linalg::dot(v, &diff) / q;
                sum += r;
                sq += r * r;
                count += 1;
            }
            let c = count as f64;
            let mean = sum / c;
            let var = ((sq - c * mean * mean) / (c - 1.0)).max(0.0);
            let half = z_score * (var / c).sqrt();
            if mean <= threshold && mean + half <= accept {
                counter.charge(2 * count);
                return Ok((true, mean));
            }
            if mean - half > accept || count >= settings.max_certify_batch {
                counter.charge(2 * count);
                return Ok((false, mean));
            }
            target = (2 * count).min(settings.max_certify_batch);
        }
    };
    search(problem, query, settings, batch, rng, counter, certify)
}

/// Dispatches on the problem kind with default settings.
pub fn find_negative_curvature<R: Rng + ?Sized>(
    problem: ProblemRef<'_>,
    query: &NcQuery,
    settings: &NcSettings,
    rng: &mut R,
    counter: &mut GradCounter,
) -> Result<NcProbe> {
    match problem {
        ProblemRef::Finite(p) => neon_finite(p, query, settings, rng, counter),
        ProblemRef::Streaming(p) => neon_online(p, query, settings, rng, counter),
    }
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if linalg::normalize(&mut v) > 0.0 {
            return v;
        }
    }
}

fn search<R, C>(
    problem: &dyn Problem,
    query: &NcQuery,
    settings: &NcSettings,
    batch: u64,
    rng: &mut R,
    counter: &mut GradCounter,
    mut certify: C,
) -> Result<NcProbe>
where
    R: Rng + ?Sized,
    C: FnMut(&[f64], &mut R, &mut GradCounter) -> Result<(bool, f64)>,
{
    let d = problem.dim();
    if query.z.len() != d {
        return Err(Error::InvalidArgument("query point dimension mismatch".into()));
    }
    let q = query.displacement();
    let steps = settings.steps_per_restart(query, d);
    let restarts = settings.restarts(query);
    let trigger = -CERTIFY_LEVEL * query.eps_h;
    let mut probe = NcProbe {
        result: NcResult::Bottom,
        rayleigh_estimate: f64::INFINITY,
        budget_exhausted: true,
        restarts: 0,
        power_steps: 0,
        certifications: 0,
    };
    for _ in 0..restarts {
        probe.restarts += 1;
        let mut v = random_unit(d, rng);
        let mut wait = 0u64;
        let mut next_check = 0u64;
        let mut last_est = f64::INFINITY;
        for step in 0..steps {
            let keys = draw_batch(problem.population(), batch, rng)?;
            let hv = hvp_estimate(problem, &query.z, &v, q, &keys, counter)?;
            probe.power_steps += 1;
            last_est = linalg::dot(&v, &hv);
            if last_est <= trigger && step >= next_check {
                probe.certifications += 1;
                let (ok, est) = certify(&v, rng, counter)?;
                if ok {
                    return Ok(certified(probe, v, est));
                }
                probe.rayleigh_estimate = probe.rayleigh_estimate.min(est);
                wait = (2 * wait).max(16);
                next_check = step + wait;
            }
            let mut y: Vec<f64> = v.iter().zip(&hv).map(|(a, b)| query.l1 * a - b).collect();
            if linalg::normalize(&mut y) == 0.0 {
                y = random_unit(d, rng);
            }
            v = y;
        }
        if last_est <= 0.0 {
            probe.certifications += 1;
            let (ok, est) = certify(&v, rng, counter)?;
            if ok {
                return Ok(certified(probe, v, est));
            }
            probe.rayleigh_estimate = probe.rayleigh_estimate.min(est);
        } else {
            probe.rayleigh_estimate = probe.rayleigh_estimate.min(last_est);
        }
    }
    Ok(probe)
}

fn certified(mut probe: NcProbe, v: Vec<f64>, est: f64) -> NcProbe {
    probe.result = NcResult::Direction(v);
    probe.rayleigh_estimate = est;
    probe.budget_exhausted = false;
    probe
}
