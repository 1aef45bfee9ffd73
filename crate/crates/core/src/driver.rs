//! Outer loops that alternate variance-reduced epochs with negative-curvature
//! escapes, plus the theorem parameter choices that configure them.
//!
//! The finite-sum loop tests the full gradient against `eps`; the streaming
//! loop tests a fresh subsample average against `eps / 2`. Below the
//! threshold the curvature finder is probed: a bottom answer certifies the
//! point, a direction triggers a random-sign step of length `eta`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::epoch::run_epoch;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ncfinder::{neon_finite, neon_online, NcQuery, NcResult, NcSettings};
use crate::problems::{
    draw_batch, minibatch_gradient, FiniteSumProblem, GradCounter, Points, Problem, ProblemRef,
    StreamingProblem,
};
use crate::rng;
use crate::schedule::{derive_schedule, NestedSchedule};
use crate::trace::{EventKind, RunTrace};

/// `C1` of the streaming base-batch rule.
pub const C1: f64 = 200.0;
/// `C` of the third-order finite-sum epoch count, taken as printed.
pub const C_FINITE_THIRD: f64 = 600.0;
/// Smallest per-call failure probability handed to the curvature finder.
pub const NC_DELTA_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Finite,
    Online,
}

/// Escape-step length for third-order smooth streaming problems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `sqrt(eps_H / L3)`
    #[default]
    Theorem,
    /// `sqrt(3 eps_H / L3)`
    Lemma,
}

/// User substitutions for theory-sized quantities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0_check: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_rule: Option<StepRule>,
}

/// Problem constants the parameter formulas read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryInputs {
    pub l1: f64,
    pub l2: f64,
    pub l3: Option<f64>,
    pub sigma2: f64,
    pub delta_f: f64,
    /// Component count; `None` for streaming problems.
    pub n: Option<u64>,
}

impl TheoryInputs {
    pub fn of(problem: &dyn Problem) -> Self {
        let s = problem.smoothness();
        Self {
            l1: s.l1,
            l2: s.l2,
            l3: s.l3,
            sigma2: s.sigma2,
            delta_f: s.delta_f,
            n: problem.population().size(),
        }
    }

    fn l3(&self) -> Result<f64> {
        self.l3.ok_or(Error::MissingConstant("L3"))
    }

    fn n(&self) -> Result<f64> {
        self.n.map(|n| n as f64).ok_or_else(|| Error::Config("finite-sum rule needs n".into()))
    }
}

/// Unrounded parameter values as the formulas give them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryValues {
    pub b0: f64,
    pub rho: Option<f64>,
    pub m: f64,
    pub u: f64,
    pub delta: f64,
    pub eta: f64,
}

fn check_eps(eps: f64, eps_h: f64) -> Result<()> {
    for (name, v) in [("eps", eps), ("eps_H", eps_h)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    Ok(())
}

pub fn theory_finite_2nd(k: &TheoryInputs, eps: f64, eps_h: f64) -> Result<TheoryValues> {
    check_eps(eps, eps_h)?;
    let n = k.n()?;
    Ok(TheoryValues {
        b0: n,
        rho: None,
        m: 6.0 * k.l1,
        u: 24.0 * k.l2 * k.l2 * k.delta_f / eps_h.powi(3) + 1800.0 * k.l1 * k.delta_f / (eps * eps * n.sqrt()),
        delta: eps_h.powi(3) / (144.0 * k.l2 * k.l2 * k.delta_f),
        eta: eps_h / k.l2,
    })
}

pub fn theory_finite_3rd(k: &TheoryInputs, eps: f64, eps_h: f64) -> Result<TheoryValues> {
    check_eps(eps, eps_h)?;
    let n = k.n()?;
    let l3 = k.l3()?;
    Ok(TheoryValues {
        b0: n,
        rho: None,
        m: 6.0 * k.l1,
        u: 12.0 * l3 * k.delta_f / (eps_h * eps_h)
            + 1800.0 * C_FINITE_THIRD * k.l1 * k.delta_f / (eps * eps * n.sqrt()),
        delta: eps_h * eps_h / (72.0 * l3 * k.delta_f),
        eta: (3.0 * eps_h / l3).sqrt(),
    })
}

/// Streaming base batch
/// `sigma^2 eps^-2 max{64 (1 + log2[2500 C1 max{a, 6} dF L1 eps^-2]), 96 C1}`.
pub fn online_base_batch(k: &TheoryInputs, eps: f64, a: f64) -> f64 {
    let inner = 2500.0 * C1 * a.max(6.0) * k.delta_f * k.l1 / (eps * eps);
    let log_branch = 64.0 * (1.0 + inner.log2());
    k.sigma2 / (eps * eps) * log_branch.max(96.0 * C1)
}

/// `b0` replaces the base-batch formula when given; `rho`, `M` and `U`
/// follow whichever base batch is in force.
pub fn theory_online_2nd(k: &TheoryInputs, eps: f64, eps_h: f64, b0: Option<f64>) -> Result<TheoryValues> {
    check_eps(eps, eps_h)?;
    let a = 54.0 * k.sigma2 * k.l2 * k.l2 / (k.l1 * eps_h.powi(3));
    let b0 = b0.unwrap_or_else(|| online_base_batch(k, eps, a));
    let rho = (a / b0.sqrt()).max(6.0);
    let curv = k.delta_f * k.l2 * k.l2 / eps_h.powi(3);
    Ok(TheoryValues {
        b0,
        rho: Some(rho),
        m: 2.0 * rho * k.l1,
        u: 216.0 * curv + 96.0 * C1 * rho * k.delta_f * k.l1 / (b0.sqrt() * eps * eps),
        delta: 1.0 / (3000.0 * curv),
        eta: eps_h / k.l2,
    })
}

pub fn theory_online_3rd(
    k: &TheoryInputs,
    eps: f64,
    eps_h: f64,
    b0: Option<f64>,
    rule: StepRule,
) -> Result<TheoryValues> {
    check_eps(eps, eps_h)?;
    let l3 = k.l3()?;
    let a = 36.0 * k.sigma2 * l3 / (k.l1 * eps_h * eps_h);
    let b0 = b0.unwrap_or_else(|| online_base_batch(k, eps, a));
    let rho = (a / b0.sqrt()).max(6.0);
    let curv = k.delta_f * l3 / (eps_h * eps_h);
    let eta = match rule {
        StepRule::Theorem => (eps_h / l3).sqrt(),
        StepRule::Lemma => (3.0 * eps_h / l3).sqrt(),
    };
    Ok(TheoryValues {
        b0,
        rho: Some(rho),
        m: 2.0 * rho * k.l1,
        u: 72.0 * curv + 96.0 * C1 * rho * k.delta_f * k.l1 / (b0.sqrt() * eps * eps),
        delta: 1.0 / (1000.0 * curv),
        eta,
    })
}

/// Subsample size `2 sigma^2 / r^2 (1 + sqrt(log2(1/delta)))^2` that puts a
/// sampled gradient within `r` of the true one with probability `1 - delta`.
pub fn subsample_size(sigma2: f64, r: f64, delta: f64) -> u64 {
    let s = 2.0 * sigma2 / (r * r) * (1.0 + (1.0 / delta).log2().sqrt()).powi(2);
    s.ceil().max(1.0) as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriverConfig {
    pub mode: Mode,
    pub smoothness_order: u8,
    pub eps: f64,
    pub eps_h: f64,
    /// Formula values before any override.
    pub theory: TheoryValues,
    pub b0: u64,
    pub rho: Option<f64>,
    pub u: u64,
    pub m: f64,
    pub eta: f64,
    /// Per-call failure probability handed to the curvature finder.
    pub delta: f64,
    /// Streaming gradient-test sample size.
    pub b0_check: u64,
    pub schedule: NestedSchedule,
    pub nc: NcSettings,
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        check_eps(self.eps, self.eps_h)?;
        if self.u == 0 {
            return Err(Error::Config("U must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::Config(format!("M must be positive, got {}", self.m)));
        }
        if self.mode == Mode::Online && self.b0_check == 0 {
            return Err(Error::Config("b0_check must be at least 1".into()));
        }
        Ok(())
    }
}

fn to_count(x: f64, what: &str) -> Result<u64> {
    if x.is_nan() || x < 1.0 || x >= u64::MAX as f64 {
        return Err(Error::Config(format!("{what} = {x} is not a usable count; override it")));
    }
    Ok(x.ceil() as u64)
}

/// Builds a configuration from the theorem matching `(mode, order)`.
pub fn configure(problem: ProblemRef<'_>, order: u8, eps: f64, eps_h: f64, overrides: &Overrides) -> Result<DriverConfig> {
    let p = problem.as_dyn();
    p.smoothness().validate()?;
    let k = TheoryInputs::of(p);
    let rule = overrides.step_rule.unwrap_or_default();
    let (mode, theory, effective) = match (problem, order) {
        (ProblemRef::Finite(_), 2) => {
            let t = theory_finite_2nd(&k, eps, eps_h)?;
            (Mode::Finite, t, t)
        }
        (ProblemRef::Finite(_), 3) => {
            let t = theory_finite_3rd(&k, eps, eps_h)?;
            (Mode::Finite, t, t)
        }
        (ProblemRef::Streaming(_), 2) => {
            let t = theory_online_2nd(&k, eps, eps_h, None)?;
            let e = theory_online_2nd(&k, eps, eps_h, overrides.b0.map(|b| b as f64))?;
            (Mode::Online, t, e)
        }
        (ProblemRef::Streaming(_), 3) => {
            let t = theory_online_3rd(&k, eps, eps_h, None, rule)?;
            let e = theory_online_3rd(&k, eps, eps_h, overrides.b0.map(|b| b as f64), rule)?;
            (Mode::Online, t, e)
        }
        (_, o) => return Err(Error::Config(format!("smoothness order must be 2 or 3, got {o}"))),
    };
    let b0 = match overrides.b0 {
        Some(b) => b,
        None => to_count(effective.b0, "B0")?,
    };
    let m = overrides.m.unwrap_or(effective.m);
    let u = match overrides.u {
        Some(u) => u,
        None => to_count(effective.u.max(1.0), "U")?,
    };
    let eta = overrides.eta.unwrap_or(effective.eta);
    let schedule = derive_schedule(b0, m)?.clamp(k.n);
    let b0_check = overrides.b0_check.unwrap_or(b0);
    let config = DriverConfig {
        mode,
        smoothness_order: order,
        eps,
        eps_h,
        theory,
        b0,
        rho: effective.rho,
        u,
        m,
        eta,
        delta: effective.delta.clamp(NC_DELTA_FLOOR, 0.5),
        b0_check,
        schedule,
        nc: NcSettings::default(),
    };
    config.validate()?;
    Ok(config)
}

pub fn config_finite_2nd(problem: &FiniteSumProblem, eps: f64, eps_h: f64) -> Result<DriverConfig> {
    configure(ProblemRef::Finite(problem), 2, eps, eps_h, &Overrides::default())
}

pub fn config_finite_3rd(problem: &FiniteSumProblem, eps: f64, eps_h: f64) -> Result<DriverConfig> {
    configure(ProblemRef::Finite(problem), 3, eps, eps_h, &Overrides::default())
}

pub fn config_online_2nd(problem: &StreamingProblem, eps: f64, eps_h: f64) -> Result<DriverConfig> {
    configure(ProblemRef::Streaming(problem), 2, eps, eps_h, &Overrides::default())
}

pub fn config_online_3rd(problem: &StreamingProblem, eps: f64, eps_h: f64) -> Result<DriverConfig> {
    configure(ProblemRef::Streaming(problem), 3, eps, eps_h, &Overrides::default())
}

/// `z + zeta eta v` with a fair random sign `zeta`.
pub fn nc_descent_step<R: Rng + ?Sized>(z: &[f64], v: &[f64], eta: f64, rng: &mut R) -> Vec<f64> {
    let zeta = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut out = z.to_vec();
    linalg::axpy(zeta * eta, v, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    CertifiedSosp,
    BudgetExhausted,
}

impl OutcomeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeStatus::CertifiedSosp => "certified-sosp",
            OutcomeStatus::BudgetExhausted => "budget-exhausted",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DriverOutcome {
    pub z_final: Vec<f64>,
    pub status: OutcomeStatus,
    pub trace: RunTrace,
    pub grads_total: u64,
    pub epochs: usize,
    pub probes: usize,
    /// Some epoch iterate left the problem's certified ball.
    pub left_domain: bool,
}

pub fn run<R: Rng + ?Sized>(problem: ProblemRef<'_>, config: &DriverConfig, rng: &mut R) -> Result<DriverOutcome> {
    match problem {
        ProblemRef::Finite(p) => run_finite(p, config, rng),
        ProblemRef::Streaming(p) => run_online(p, config, rng),
    }
}

pub fn run_finite<R: Rng + ?Sized>(problem: &FiniteSumProblem, config: &DriverConfig, rng: &mut R) -> Result<DriverOutcome> {
    if config.mode != Mode::Finite {
        return Err(Error::Config("finite-sum driver needs a finite-mode config".into()));
    }
    let all: Vec<u64> = (0..problem.n() as u64).collect();
    outer_loop(problem, config, rng, config.eps, |z, _rng, counter| {
        minibatch_gradient(problem, Points::One(z), &all, counter)
    }, |q, rng, counter| neon_finite(problem, q, &config.nc, rng, counter))
}

pub fn run_online<R: Rng + ?Sized>(problem: &StreamingProblem, config: &DriverConfig, rng: &mut R) -> Result<DriverOutcome> {
    if config.mode != Mode::Online {
        return Err(Error::Config("streaming driver needs an online-mode config".into()));
    }
    outer_loop(problem, config, rng, config.eps / 2.0, |z, rng, counter| {
        sampled_gradient(problem, z, config.b0_check, rng, counter)
    }, |q, rng, counter| neon_online(problem, q, &config.nc, rng, counter))
}

/// Average of `size` fresh stochastic gradients at `z`; charges `size`.
pub fn sampled_gradient<R: Rng + ?Sized>(
    problem: &StreamingProblem,
    z: &[f64],
    size: u64,
    rng: &mut R,
    counter: &mut GradCounter,
) -> Result<Vec<f64>> {
    let keys = draw_batch(problem.population(), size, rng)?;
    minibatch_gradient(problem, Points::One(z), &keys, counter)
}

/// The streaming loop's gradient test: does the sampled gradient norm
/// reach `eps / 2`? Returns the decision and the sampled norm.
pub fn online_gradient_test<R: Rng + ?Sized>(
    problem: &StreamingProblem,
    z: &[f64],
    size: u64,
    eps: f64,
    rng: &mut R,
    counter: &mut GradCounter,
) -> Result<(bool, f64)> {
    let g = linalg::norm(&sampled_gradient(problem, z, size, rng, counter)?);
    Ok((g >= eps / 2.0, g))
}

fn outer_loop<R, G, N>(
    problem: &dyn Problem,
    config: &DriverConfig,
    rng: &mut R,
    threshold: f64,
    mut gradient: G,
    mut probe: N,
) -> Result<DriverOutcome>
where
    R: Rng + ?Sized,
    G: FnMut(&[f64], &mut R, &mut GradCounter) -> Result<Vec<f64>>,
    N: FnMut(&NcQuery, &mut R, &mut GradCounter) -> Result<crate::ncfinder::NcProbe>,
{
    config.validate()?;
    let s = problem.smoothness();
    let mut counter = GradCounter::new();
    let mut trace = RunTrace::new();
    let mut z = problem.start().to_vec();
    let mut status = OutcomeStatus::BudgetExhausted;
    let (mut epochs, mut probes, mut left_domain) = (0, 0, false);
    let mut last_norm = None;
    let mut last_rayleigh = None;
    let mut u_last = 0;
    for u in 1..=config.u {
        u_last = u;
        let g = gradient(&z, rng, &mut counter)?;
        let gn = linalg::norm(&g);
        last_norm = Some(gn);
        trace.push(EventKind::GradCheck, u, counter.count(), problem.value(&z), Some(gn), None);
        if gn >= threshold {
            let out = run_epoch(&z, problem, &config.schedule, rng, &mut counter)?;
            left_domain |= out.left_domain;
            z = out.x_out;
            epochs += 1;
            trace.push(EventKind::Epoch, u, counter.count(), problem.value(&z), None, None);
            continue;
        }
        let query = NcQuery { z: z.clone(), eps_h: config.eps_h, delta: config.delta, l1: s.l1, l2: s.l2 };
        let found = probe(&query, rng, &mut counter)?;
        probes += 1;
        last_rayleigh = Some(found.rayleigh_estimate);
        trace.push(EventKind::NcProbe, u, counter.count(), problem.value(&z), Some(gn), Some(found.rayleigh_estimate));
        match found.result {
            NcResult::Bottom => {
                status = OutcomeStatus::CertifiedSosp;
                break;
            }
            NcResult::Direction(v) => {
                z = nc_descent_step(&z, &v, config.eta, rng);
                trace.push(EventKind::NcStep, u, counter.count(), problem.value(&z), None, None);
            }
        }
    }
    if status == OutcomeStatus::BudgetExhausted {
        last_norm = None;
    }
    trace.push(EventKind::Terminate, u_last, counter.count(), problem.value(&z), last_norm, last_rayleigh);
    Ok(DriverOutcome { z_final: z, status, trace, grads_total: counter.count(), epochs, probes, left_domain })
}

#[derive(Clone, Debug)]
pub struct BoostOutcome {
    pub outcome: DriverOutcome,
    pub runs: usize,
}

/// Number of independent repetitions for overall success probability
/// `1 - p_target`: `ceil(log2(1 / p_target))`.
pub fn boost_runs(p_target: f64) -> Result<usize> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::InvalidArgument(format!("target must lie in (0, 1), got {p_target}")));
    }
    Ok(((1.0 / p_target).log2() - 1e-12).ceil().max(1.0) as usize)
}

/// Repeats the driver with independent seeds until one run certifies;
/// otherwise keeps the run with the smallest final gradient norm.
pub fn boost<R: Rng + ?Sized>(
    problem: ProblemRef<'_>,
    config: &DriverConfig,
    rng: &mut R,
    p_target: f64,
) -> Result<BoostOutcome> {
    let total = boost_runs(p_target)?;
    let p = problem.as_dyn();
    let mut best: Option<(f64, DriverOutcome)> = None;
    for i in 0..total {
        let mut child = rng::stream(rng.random(), i as u64);
        let out = run(problem, config, &mut child)?;
        if out.status == OutcomeStatus::CertifiedSosp {
            return Ok(BoostOutcome { outcome: out, runs: i + 1 });
        }
        let gn = linalg::norm(&p.gradient(&out.z_final));
        if best.as_ref().is_none_or(|(b, _)| gn < *b) {
            best = Some((gn, out));
        }
    }
    let (_, outcome) = best.expect("at least one run");
    Ok(BoostOutcome { outcome, runs: total })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointClass {
    pub gradient_norm: f64,
    pub lambda_min: f64,
    pub is_sosp: bool,
}

/// Exact gradient norm and smallest Hessian eigenvalue. Never charges.
pub fn classify_point(problem: &dyn Problem, z: &[f64], eps: f64, eps_h: f64) -> PointClass {
    let gradient_norm = linalg::norm(&problem.gradient(z));
    let lambda_min = linalg::min_eigenvalue(&problem.hessian(z));
    PointClass { gradient_norm, lambda_min, is_sosp: gradient_norm <= eps && lambda_min >= -eps_h }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_saddle_problem, SaddleBuilder};

    fn inputs(n: Option<u64>) -> TheoryInputs {
        TheoryInputs { l1: 1.0, l2: 1.0, l3: Some(1.0), sigma2: 1.0, delta_f: 1.0, n }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
    }

    #[test]
    fn finite_second_order_values() {
        let mut k = inputs(Some(100));
        k.l2 = 2.0;
        assert!(close(theory_finite_2nd(&k, 0.1, 0.1).unwrap().eta, 0.05));
        k.l2 = 1.0;
        assert!(close(theory_finite_2nd(&k, 0.1, 0.1).unwrap().delta, 1e-3 / 144.0));
        let t = theory_finite_2nd(&k, 0.1, 0.5).unwrap();
        assert!(close(t.u, 18192.0));
        assert_eq!((t.b0, t.m), (100.0, 6.0));
    }

    #[test]
    fn finite_third_order_values() {
        let mut k = inputs(Some(100));
        k.l3 = Some(1.0);
        let t = theory_finite_3rd(&k, 0.1, 0.3).unwrap();
        assert!(close(t.eta, 0.9f64.sqrt()));
        k.l3 = Some(2.0);
        assert!(close(theory_finite_3rd(&k, 0.1, 0.1).unwrap().delta, 0.01 / 144.0));
        k.l3 = None;
        assert!(matches!(theory_finite_3rd(&k, 0.1, 0.1), Err(Error::MissingConstant("L3"))));
    }

    #[test]
    fn online_base_batch_takes_larger_branch() {
        let k = inputs(None);
        let (eps, eps_h) = (0.1, 0.5);
        let a: f64 = 54.0 / 0.125;
        let log_branch = 64.0 * (1.0 + (2500.0 * 200.0 * a * 100.0_f64).log2());
        assert!(log_branch < 19200.0);
        let t = theory_online_2nd(&k, eps, eps_h, None).unwrap();
        assert!(close(t.b0, 1_920_000.0));
    }

    #[test]
    fn online_rho_floor_and_step_parameter() {
        let k = inputs(None);
        let t = theory_online_2nd(&k, 0.1, 0.5, None).unwrap();
        // 432 / sqrt(1.92e6) is far below the floor
        assert_eq!(t.rho, Some(6.0));
        assert!(close(t.m, 12.0));
        let curv = 8.0;
        assert!(close(t.delta, 1.0 / (3000.0 * curv)));
        let u = 216.0 * curv + 96.0 * 200.0 * 6.0 / (1_920_000f64.sqrt() * 0.01);
        assert!(close(t.u, u));
    }

    #[test]
    fn online_rho_above_floor() {
        let mut k = inputs(None);
        k.sigma2 = 4.0;
        let t = theory_online_2nd(&k, 0.5, 0.1, Some(100.0)).unwrap();
        let want = 54.0 * 4.0 / 1e-3 / 10.0;
        assert!(close(t.rho.unwrap(), want));
        assert!(close(t.m, 2.0 * want));
    }

    #[test]
    fn online_third_order_values() {
        let k = inputs(None);
        let t = theory_online_3rd(&k, 0.1, 0.25, None, StepRule::Theorem).unwrap();
        assert!(close(t.eta, 0.5));
        let t3 = theory_online_3rd(&k, 0.1, 0.25, None, StepRule::Lemma).unwrap();
        assert!(close(t3.eta, 0.75f64.sqrt()));
        assert!(close(theory_online_3rd(&k, 0.1, 0.1, None, StepRule::Theorem).unwrap().delta, 1e-5));
    }

    #[test]
    fn eps_bounds_enforced() {
        let k = inputs(Some(10));
        assert!(theory_finite_2nd(&k, 1.0, 0.1).is_err());
        assert!(theory_finite_2nd(&k, 0.1, 0.0).is_err());
    }

    #[test]
    fn subsample_sizing() {
        // 2 * 1 / 0.01 * (1 + sqrt(log2 4))^2 = 200 * (1 + sqrt 2)^2
        let want = (200.0 * (1.0 + 2f64.sqrt()).powi(2)).ceil() as u64;
        assert_eq!(subsample_size(1.0, 0.1, 0.25), want);
    }

    #[test]
    fn descent_step_length_and_signs() {
        let mut r = rng::stream(0, 0);
        let v = [0.6, 0.8];
        let mut seen = (false, false);
        for _ in 0..64 {
            let z = nc_descent_step(&[1.0, 1.0], &v, 0.5, &mut r);
            let d = linalg::dist(&z, &[1.0, 1.0]);
            assert!((d - 0.5).abs() < 1e-15);
            if z[0] > 1.0 { seen.0 = true } else { seen.1 = true }
        }
        assert!(seen.0 && seen.1);
        assert_eq!(nc_descent_step(&[1.0, 2.0], &v, 0.0, &mut r), vec![1.0, 2.0]);
    }

    #[test]
    fn classify_saddle_and_minimum() {
        let p = make_saddle_problem(2, 1, -1.0, 0).unwrap();
        let c = classify_point(&p, &[0.0, 0.0], 0.1, 0.5);
        assert_eq!((c.gradient_norm, c.is_sosp), (0.0, false));
        assert!((c.lambda_min + 1.0).abs() < 1e-14);
        let c = classify_point(&p, &[0.0, 1.0], 0.1, 0.5);
        assert!(c.is_sosp);
        assert!((c.lambda_min - 1.0).abs() < 1e-14);
    }

    #[test]
    fn boost_run_counts() {
        assert_eq!(boost_runs(0.5).unwrap(), 1);
        assert_eq!(boost_runs(1.0 / 16.0).unwrap(), 4);
        assert!(boost_runs(1.0).is_err());
    }

    fn desk_saddle() -> FiniteSumProblem {
        SaddleBuilder::new(4, -1.0).unwrap().components(64).seed(3).finite().unwrap()
    }

    fn desk_config(p: &FiniteSumProblem, u: u64) -> DriverConfig {
        let o = Overrides { u: Some(u), ..Default::default() };
        configure(ProblemRef::Finite(p), 2, 1e-3, 0.1, &o).unwrap()
    }

    #[test]
    fn zero_gradient_saddle_probes_first() {
        let p = desk_saddle();
        let c = desk_config(&p, 1);
        let out = run_finite(&p, &c, &mut rng::stream(1, 0)).unwrap();
        let kinds: Vec<EventKind> = out.trace.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::GradCheck, EventKind::NcProbe, EventKind::NcStep, EventKind::Terminate]);
        assert_eq!(out.status, OutcomeStatus::BudgetExhausted);
    }

    #[test]
    fn single_iteration_budget_runs_one_epoch() {
        let p = SaddleBuilder::new(4, -1.0).unwrap().components(64).seed(3).start(vec![0.5, 0.5, 0.0, 0.3]).finite().unwrap();
        let c = desk_config(&p, 1);
        let out = run_finite(&p, &c, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(out.trace.count(EventKind::Epoch), 1);
        assert_eq!(out.status, OutcomeStatus::BudgetExhausted);
    }

    #[test]
    fn local_minimum_is_certified_at_once() {
        let p = SaddleBuilder::new(3, -1.0).unwrap().components(8).noise(0.0, 0.0).start(vec![0.0, 0.0, 1.0]).finite().unwrap();
        let c = desk_config(&p, 10);
        let out = run_finite(&p, &c, &mut rng::stream(2, 0)).unwrap();
        assert_eq!(out.status, OutcomeStatus::CertifiedSosp);
        assert_eq!(out.probes, 1);
        assert_eq!(out.z_final, p.start());
        assert!(out.trace.last().unwrap().rayleigh.is_some());
    }

    #[test]
    fn saddle_escape_certifies() {
        let p = SaddleBuilder::new(4, -1.0).unwrap().components(256).seed(3).finite().unwrap();
        let c = desk_config(&p, 500);
        let out = run_finite(&p, &c, &mut rng::stream(4, 0)).unwrap();
        assert_eq!(out.status, OutcomeStatus::CertifiedSosp);
        let cls = classify_point(&p, &out.z_final, 2e-3, 0.2);
        assert!(cls.is_sosp, "{cls:?}");
        let g: Vec<u64> = out.trace.events.iter().map(|e| e.grads_cum).collect();
        assert!(g.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn streaming_driver_is_deterministic() {
        let p = SaddleBuilder::new(3, -1.0).unwrap().seed(2).streaming().unwrap();
        let o = Overrides { b0: Some(64), u: Some(30), b0_check: Some(512), ..Default::default() };
        let c = configure(ProblemRef::Streaming(&p), 2, 0.05, 0.2, &o).unwrap();
        let a = run_online(&p, &c, &mut rng::stream(5, 0)).unwrap();
        let b = run_online(&p, &c, &mut rng::stream(5, 0)).unwrap();
        assert_eq!(a.trace.events.len(), b.trace.events.len());
        for (x, y) in a.trace.events.iter().zip(&b.trace.events) {
            assert_eq!((x.kind, x.u, x.grads_cum, x.f_value, x.grad_norm, x.rayleigh), (y.kind, y.u, y.grads_cum, y.f_value, y.grad_norm, y.rayleigh));
        }
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let p = desk_saddle();
        let mut c = desk_config(&p, 3);
        c.mode = Mode::Online;
        assert!(run_finite(&p, &c, &mut rng::stream(0, 0)).is_err());
    }

    #[test]
    fn boost_stops_at_first_certificate() {
        let p = SaddleBuilder::new(3, -1.0).unwrap().components(8).noise(0.0, 0.0).start(vec![0.0, 0.0, 1.0]).finite().unwrap();
        let c = desk_config(&p, 10);
        let b = boost(ProblemRef::Finite(&p), &c, &mut rng::stream(0, 0), 1.0 / 16.0).unwrap();
        assert_eq!(b.runs, 1);
    }
}
