//! Experiment configuration, trial orchestration, output files and the
//! verification suites behind the `verify` subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::driver::{classify_point, configure, run, DriverConfig, DriverOutcome, Mode, Overrides, PointClass, TheoryValues};
use crate::epoch::run_epoch;
use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{
    make_regularized_problem, sampling_variance_check, FiniteSumProblem, GradCounter, Population, Problem,
    ProblemRef, SaddleBuilder, StreamingProblem,
};
use crate::rng;
use crate::schedule::{check_series_inequalities, derive_schedule, epoch_cost_bound, NestedSchedule};
use crate::trace::{write_events_csv, write_summary, TrialSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Quartic strict saddle at the origin.
    Saddle,
    /// Least squares with a smooth nonconvex penalty.
    Regularized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub family: Family,
    pub dim: usize,
    /// Component count; omit for a streaming problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_eigenvalue: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub mode: Mode,
    #[serde(default = "default_order")]
    pub smoothness_order: u8,
    pub eps: f64,
    pub eps_h: f64,
    #[serde(default)]
    pub overrides: Overrides,
}

fn default_order() -> u8 {
    2
}

fn default_trials() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// An owned problem of either kind.
#[derive(Debug)]
pub enum BuiltProblem {
    Finite(FiniteSumProblem),
    Streaming(StreamingProblem),
}

impl BuiltProblem {
    pub fn as_ref(&self) -> ProblemRef<'_> {
        match self {
            BuiltProblem::Finite(p) => ProblemRef::Finite(p),
            BuiltProblem::Streaming(p) => ProblemRef::Streaming(p),
        }
    }

    pub fn as_dyn(&self) -> &dyn Problem {
        self.as_ref().as_dyn()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let a = &self.algorithm;
        let bad = |m: String| Err(Error::Config(m));
        if p.dim == 0 {
            return bad("problem.dim must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        for (name, v) in [("algorithm.eps", a.eps), ("algorithm.eps_h", a.eps_h)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !matches!(a.smoothness_order, 2 | 3) {
            return bad(format!("algorithm.smoothness_order must be 2 or 3, got {}", a.smoothness_order));
        }
        match (a.mode, p.n) {
            (Mode::Finite, None) => return bad("problem.n is required in finite mode".into()),
            (Mode::Finite, Some(n)) if n < 4 => return bad(format!("problem.n must be at least 4, got {n}")),
            (Mode::Online, Some(_)) => return bad("problem.n must be omitted in online mode".into()),
            _ => {}
        }
        match p.family {
            Family::Saddle => {
                if p.dim < 2 {
                    return bad("problem.dim must be at least 2 for the saddle family".into());
                }
                if let Some(l) = p.negative_eigenvalue {
                    if !(l < 0.0 && l.is_finite()) {
                        return bad(format!("problem.negative_eigenvalue must be negative, got {l}"));
                    }
                }
            }
            Family::Regularized => {
                if p.negative_eigenvalue.is_some() {
                    return bad("problem.negative_eigenvalue does not apply to the regularized family".into());
                }
                if a.mode == Mode::Online {
                    return bad("the regularized family is finite-sum only".into());
                }
            }
        }
        let o = &a.overrides;
        if o.b0.is_some_and(|b| b < 4) {
            return bad("algorithm.overrides.b0 must be at least 4".into());
        }
        if o.u == Some(0) || o.b0_check == Some(0) {
            return bad("algorithm.overrides counts must be at least 1".into());
        }
        for (name, v) in [("m", o.m), ("eta", o.eta)] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return bad(format!("algorithm.overrides.{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<BuiltProblem> {
        let p = &self.problem;
        match p.family {
            Family::Saddle => {
                let b = SaddleBuilder::new(p.dim, p.negative_eigenvalue.unwrap_or(-1.0))?.seed(p.seed);
                match p.n {
                    Some(n) => Ok(BuiltProblem::Finite(b.components(n).finite()?)),
                    None => Ok(BuiltProblem::Streaming(b.streaming()?)),
                }
            }
            Family::Regularized => {
                let n = p.n.ok_or_else(|| Error::Config("problem.n is required".into()))?;
                Ok(BuiltProblem::Finite(make_regularized_problem(p.dim, n, p.seed)?))
            }
        }
    }

    pub fn driver_config(&self, problem: &BuiltProblem) -> Result<DriverConfig> {
        let a = &self.algorithm;
        configure(problem.as_ref(), a.smoothness_order, a.eps, a.eps_h, &a.overrides)
    }
}

/// Requested and effective parameters of a run, written next to the traces.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedParameters {
    pub theory: TheoryValues,
    pub b0: u64,
    pub rho: Option<f64>,
    pub u: u64,
    pub m: f64,
    pub eta: f64,
    pub delta: f64,
    pub b0_check: u64,
    pub schedule: NestedSchedule,
}

impl From<&DriverConfig> for ResolvedParameters {
    fn from(c: &DriverConfig) -> Self {
        Self {
            theory: c.theory,
            b0: c.b0,
            rho: c.rho,
            u: c.u,
            m: c.m,
            eta: c.eta,
            delta: c.delta,
            b0_check: c.b0_check,
            schedule: c.schedule.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub outcome: DriverOutcome,
    pub class: PointClass,
}

impl TrialResult {
    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            status: self.outcome.status.as_str().to_string(),
            grads_total: self.outcome.grads_total,
            final_grad_norm: self.class.gradient_norm,
            final_lambda_min: self.class.lambda_min,
        }
    }
}

/// Runs `trials` independent driver runs, trial `i` on RNG stream `i` of
/// `seed`, on up to `jobs` threads. Results come back in trial order.
pub fn run_trials(
    problem: &BuiltProblem,
    config: &DriverConfig,
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<TrialResult>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TrialResult>>>> = Mutex::new((0..trials).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= trials {
            break;
        }
        let mut r = rng::stream(seed, i as u64);
        let res = run(problem.as_ref(), config, &mut r).map(|outcome| {
            let class = classify_point(problem.as_dyn(), &outcome.z_final, config.eps, config.eps_h);
            TrialResult { trial: i, outcome, class }
        });
        slots.lock().expect("no worker panicked")[i] = Some(res);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1).min(trials) {
            s.spawn(worker);
        }
        worker();
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every trial ran"))
        .collect()
}

/// Writes `events.csv`, `summary-{trial}.json` and `parameters.json` to `dir`.
pub fn write_trace(results: &[TrialResult], config: &DriverConfig, dir: &Path, wall_time: bool) -> Result<()> {
    let io = |source| Error::Io { path: dir.to_path_buf(), source };
    fs::create_dir_all(dir).map_err(io)?;
    write_events_csv(&dir.join("events.csv"), results.iter().map(|r| (r.trial, &r.outcome.trace)), wall_time)?;
    for r in results {
        write_summary(&dir.join(format!("summary-{}.json", r.trial)), &r.summary())?;
    }
    let path = dir.join("parameters.json");
    let text = serde_json::to_string_pretty(&ResolvedParameters::from(config))
        .map_err(|source| Error::Json { path: path.clone(), source })?;
    fs::write(&path, text + "\n").map_err(|source| Error::Io { path, source })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Suite {
    LemmaC2,
    LemmaD4,
    LemmaD2,
    Lemma51,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma-c2" => Ok(Suite::LemmaC2),
            "lemma-d4" => Ok(Suite::LemmaD4),
            "lemma-d2" => Ok(Suite::LemmaD2),
            "lemma-51" => Ok(Suite::Lemma51),
            "all" => Ok(Suite::All),
            _ => Err(Error::InvalidArgument(format!("unknown suite {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn verify(suite: &Suite, seed: u64) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();
    let all = *suite == Suite::All;
    if all || *suite == Suite::LemmaC2 {
        out.push(verify_lemma_c2(&mut rng::labelled(seed, "lemma-c2", 0)));
    }
    if all || *suite == Suite::LemmaD4 {
        out.push(verify_lemma_d4(&mut rng::labelled(seed, "lemma-d4", 0))?);
    }
    if all || *suite == Suite::LemmaD2 {
        out.push(verify_lemma_d2()?);
    }
    if all || *suite == Suite::Lemma51 {
        let p = make_regularized_problem(50, 1000, seed)?;
        let s = derive_schedule(256, 6.0 * p.smoothness().l1)?.clamp(Some(1000));
        let r = verify_lemma_51(&p, &s, 200, seed)?;
        out.push(SuiteReport { name: "lemma-51", passed: r.passed(), detail: r.to_string() });
    }
    Ok(out)
}

/// `E[b(G)]` and `(1-p)/p E[a(G)]` for `G ~ Geom(p)`, summed exactly up to
/// the first `k` with tail mass below `tol`. `a` must lie in `[0, 1]` and
/// `b(k) <= k + slack`.
pub fn geometric_sides(p: f64, a: impl Fn(usize) -> f64, b: impl Fn(usize) -> f64, slack: f64, tol: f64) -> (f64, f64, f64) {
    let q = 1.0 - p;
    let tail = |k: usize| q.powi(k as i32) * (k as f64 + 1.0 + q / p) * (1.0 + slack);
    let mut k = 1;
    while tail(k) >= tol {
        k *= 2;
    }
    let (mut ea, mut eb) = (0.0, 0.0);
    let mut w = p;
    for j in 0..k {
        ea += w * a(j);
        eb += w * b(j);
        w *= q;
    }
    (q / p * ea, eb, tail(k))
}

pub fn verify_lemma_c2<R: Rng + ?Sized>(r: &mut R) -> SuiteReport {
    let mut worst = f64::INFINITY;
    let mut max_tail: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..100 {
        let p = r.random_range(0.02..0.9);
        let key: u64 = r.random();
        let slack = if r.random::<bool>() { r.random_range(0.0..2.0) } else { 0.0 };
        let a = move |j: usize| (rng::hashed_symmetric_unit(key, j as u64) + 1.0) / 2.0;
        // b(k) = sum_{j<k} a(j) + slack, accumulated once
        let len = 1 << 16;
        let mut prefix = vec![0.0; len + 1];
        for j in 0..len {
            prefix[j + 1] = prefix[j] + a(j);
        }
        let b = |k: usize| prefix[k.min(len)] + slack;
        let (lhs, rhs, tail) = geometric_sides(p, a, b, slack, 1e-12);
        max_tail = max_tail.max(tail);
        // exact identity when slack is zero; allow rounding
        if lhs > rhs + 1e-9 * rhs.max(1.0) {
            failures += 1;
        }
        worst = worst.min(rhs - lhs);
    }
    SuiteReport {
        name: "lemma-c2",
        passed: failures == 0 && max_tail < 1e-12,
        detail: format!("100 instances, {failures} violations, min gap {worst:.3e}, max tail {max_tail:.1e}"),
    }
}

pub fn verify_lemma_d4<R: Rng + ?Sized>(r: &mut R) -> Result<SuiteReport> {
    let mut failures = 0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(2..=40usize);
        let d = r.random_range(1..=5usize);
        let mut family: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect()).collect();
        let mut mean = vec![0.0; d];
        for v in &family {
            linalg::axpy(1.0 / n as f64, v, &mut mean);
        }
        family.iter_mut().for_each(|v| linalg::axpy(-1.0, &mean, v));
        let m = r.random_range(1..=n);
        let rep = sampling_variance_check(&family, m, 100_000, r)?;
        let ok = if m == n { rep.estimate <= 1e-24 } else { rep.estimate <= 1.05 * rep.bound };
        if !ok {
            failures += 1;
        }
        if rep.bound > 0.0 {
            worst_ratio = worst_ratio.max(rep.estimate / rep.bound);
        }
    }
    Ok(SuiteReport {
        name: "lemma-d4",
        passed: failures == 0,
        detail: format!("50 families, {failures} violations, max estimate/bound {worst_ratio:.4}"),
    })
}

pub fn verify_lemma_d2() -> Result<SuiteReport> {
    let mut failures = Vec::new();
    for b0 in [16u64, 256, 65_536, 1 << 32] {
        let s = derive_schedule(b0, 6.0)?;
        let rep = check_series_inequalities(&s, 1.0)?;
        if !(rep.applicable && rep.passed()) {
            failures.push(b0);
        }
    }
    Ok(SuiteReport {
        name: "lemma-d2",
        passed: failures.is_empty(),
        detail: format!("B0 in {{16, 256, 65536, 2^32}} with M = 6L; failing: {failures:?}"),
    })
}

/// Monte-Carlo evaluation of the single-epoch guarantee.
#[derive(Clone, Debug)]
pub struct EpochGuaranteeReport {
    pub trials: usize,
    /// Mean of `|grad F(x_T)|^2`.
    pub grad_sq: f64,
    /// Mean of `100 (M / sqrt(B0)) (F(x0) - F(x_T))`.
    pub decrease_term: f64,
    /// `100 (2 sigma^2 / B0) 1{B0 < n}`.
    pub variance_term: f64,
    /// Standard error of the per-trial difference of the two sides.
    pub standard_error: f64,
    pub mean_cost: f64,
    pub cost_bound: f64,
    pub closed_form_cost: u64,
    pub exact_mean_cost: f64,
    pub left_domain: usize,
}

impl EpochGuaranteeReport {
    pub fn inequality_holds(&self) -> bool {
        self.grad_sq - self.decrease_term - 3.0 * self.standard_error <= self.variance_term
    }

    pub fn cost_holds(&self) -> bool {
        self.mean_cost <= self.cost_bound
    }

    pub fn passed(&self) -> bool {
        self.inequality_holds() && self.cost_holds() && self.left_domain == 0
    }
}

impl std::fmt::Display for EpochGuaranteeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} epochs: |grad|^2 {:.4e} vs {:.4e} + {:.4e} (se {:.2e}); cost {:.0} <= {:.0} (closed form {}, exact {:.0})",
            self.trials,
            self.grad_sq,
            self.decrease_term,
            self.variance_term,
            self.standard_error,
            self.mean_cost,
            self.cost_bound,
            self.closed_form_cost,
            self.exact_mean_cost
        )
    }
}

pub fn verify_lemma_51(
    problem: &FiniteSumProblem,
    schedule: &NestedSchedule,
    trials: usize,
    seed: u64,
) -> Result<EpochGuaranteeReport> {
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let x0 = problem.start();
    let f0 = problem.value(x0);
    let b0 = schedule.b0 as f64;
    let coef = 100.0 * schedule.m / b0.sqrt();
    let n = problem.n() as u64;
    let variance_term = if schedule.b0 < n { 100.0 * 2.0 * problem.smoothness().sigma2 / b0 } else { 0.0 };
    let (mut g_sum, mut dec_sum, mut diff_sum, mut diff_sq, mut cost_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut left_domain = 0;
    for t in 0..trials {
        let mut r = rng::labelled(seed, "epoch-guarantee", t as u64);
        let mut counter = GradCounter::new();
        let out = run_epoch(x0, problem, schedule, &mut r, &mut counter)?;
        let g = linalg::norm(&problem.gradient(&out.x_out)).powi(2);
        let dec = coef * (f0 - problem.value(&out.x_out));
        g_sum += g;
        dec_sum += dec;
        diff_sum += g - dec;
        diff_sq += (g - dec) * (g - dec);
        cost_sum += out.grads_used as f64;
        left_domain += usize::from(out.left_domain);
    }
    let k = trials as f64;
    let mean_diff = diff_sum / k;
    let var = ((diff_sq - k * mean_diff * mean_diff) / (k - 1.0)).max(0.0);
    Ok(EpochGuaranteeReport {
        trials,
        grad_sq: g_sum / k,
        decrease_term: dec_sum / k,
        variance_term,
        standard_error: (var / k).sqrt(),
        mean_cost: cost_sum / k,
        cost_bound: epoch_cost_bound(schedule.b0),
        closed_form_cost: schedule.expected_epoch_cost(),
        exact_mean_cost: schedule.mean_epoch_cost(),
        left_domain,
    })
}

/// Population kind of a built problem, for reporting.
pub fn population_label(problem: &BuiltProblem) -> String {
    match problem.as_dyn().population() {
        Population::Finite(n) => format!("finite (n = {n})"),
        Population::Streaming => "streaming".into(),
    }
}
