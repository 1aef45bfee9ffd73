//! One epoch of the nested variance-reduced gradient method.
//!
//! Each level `l` keeps a reference point `x^(l)` and a reference gradient
//! `g^(l)`; the estimator is `v = sum_l g^(l)` and the step is
//! `x <- x - v / (10 M)`. The epoch length is geometric, so the returned
//! point is distributed like a uniformly chosen iterate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{draw_batch, minibatch_gradient, GradCounter, Points, Problem};
use crate::schedule::NestedSchedule;

/// Geometric draws are capped at this multiple of `prod T_l`.
pub const LENGTH_CAP_FACTOR: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochState {
    pub t: u64,
    pub x: Vec<f64>,
    /// `x^(0) .. x^(K)`.
    pub x_ref: Vec<Vec<f64>>,
    /// `g^(0) .. g^(K)`.
    pub g_ref: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EpochResult {
    pub x_out: Vec<f64>,
    /// Realized epoch length `T`.
    pub length: u64,
    pub grads_used: u64,
    /// `(t, |v_t|)` when requested.
    pub trajectory: Option<Vec<(u64, f64)>>,
    /// Some iterate left the problem's certified ball.
    pub left_domain: bool,
    /// The geometric draw hit [`LENGTH_CAP_FACTOR`].
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EpochLength {
    #[default]
    Geometric,
    Fixed(u64),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EpochOptions {
    pub length: EpochLength,
    pub record_trajectory: bool,
}

/// Least `j` in `0..=K` with `t mod prod_{l>j} T_l == 0`.
pub fn reset_level(t: u64, schedule: &NestedSchedule) -> usize {
    (0..=schedule.k)
        .find(|&j| t.is_multiple_of(schedule.period(j)))
        .unwrap_or(schedule.k)
}

/// Keeps levels `< r` and moves levels `r..=K` to `x`.
pub fn update_reference_points(refs: &mut [Vec<f64>], x: &[f64], r: usize) {
    for level in refs.iter_mut().skip(r) {
        level.copy_from_slice(x);
    }
}

/// Refreshes level `r` and zeroes every finer level.
///
/// For `r > 0` the new `g^(r)` is the batch-`B_r` average of
/// `grad f_i(x^(r)) - grad f_i(x^(r-1))`; for `r = 0` it is the batch-`B0`
/// gradient at `x^(0)`.
pub fn update_reference_gradients<R: Rng + ?Sized>(
    grads: &mut [Vec<f64>],
    refs: &[Vec<f64>],
    r: usize,
    problem: &dyn Problem,
    schedule: &NestedSchedule,
    rng: &mut R,
    counter: &mut GradCounter,
) -> Result<()> {
    let keys = draw_batch(problem.population(), schedule.batch(r), rng)?;
    grads[r] = if r == 0 {
        minibatch_gradient(problem, Points::One(&refs[0]), &keys, counter)?
    } else {
        minibatch_gradient(problem, Points::Two(&refs[r], &refs[r - 1]), &keys, counter)?
    };
    for g in grads.iter_mut().skip(r + 1) {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(())
}

/// `T ~ Geom(p)` with `P(T = k) = p (1 - p)^k`, by inverse CDF. Returns the
/// draw and whether it was capped at `cap`.
pub fn draw_geometric<R: Rng + ?Sized>(p: f64, cap: u64, rng: &mut R) -> (u64, bool) {
    if p >= 1.0 {
        return (0, false);
    }
    let u = 1.0 - rng.random::<f64>();
    let t = (u.ln() / (-p).ln_1p()).floor();
    if t >= cap as f64 {
        (cap, true)
    } else {
        (t as u64, false)
    }
}

pub fn run_epoch<R: Rng + ?Sized>(
    x0: &[f64],
    problem: &dyn Problem,
    schedule: &NestedSchedule,
    rng: &mut R,
    counter: &mut GradCounter,
) -> Result<EpochResult> {
    run_epoch_with(x0, problem, schedule, rng, counter, EpochOptions::default(), None)
}

/// [`run_epoch`] with an explicit length policy, optional trajectory, and an
/// observer called once per step after `v_t` is assembled.
pub fn run_epoch_with<R: Rng + ?Sized>(
    x0: &[f64],
    problem: &dyn Problem,
    schedule: &NestedSchedule,
    rng: &mut R,
    counter: &mut GradCounter,
    options: EpochOptions,
    mut observer: Option<&mut dyn FnMut(&EpochState)>,
) -> Result<EpochResult> {
    let d = problem.dim();
    if x0.len() != d {
        return Err(Error::InvalidArgument(format!(
            "start point has dimension {}, problem has {d}",
            x0.len()
        )));
    }
    let (length, truncated) = match options.length {
        EpochLength::Fixed(t) => (t, false),
        EpochLength::Geometric => {
            let cap = LENGTH_CAP_FACTOR.saturating_mul(schedule.loop_product());
            draw_geometric(schedule.geometric_p(), cap, rng)
        }
    };
    let before = counter.count();
    let step = 1.0 / (10.0 * schedule.m);
    let levels = schedule.k + 1;
    let mut state = EpochState {
        t: 0,
        x: x0.to_vec(),
        x_ref: vec![x0.to_vec(); levels],
        g_ref: vec![vec![0.0; d]; levels],
        v: vec![0.0; d],
    };
    let mut trajectory = options.record_trajectory.then(Vec::new);
    let mut left_domain = false;
    for t in 0..length {
        state.t = t;
        let r = reset_level(t, schedule);
        update_reference_points(&mut state.x_ref, &state.x, r);
        update_reference_gradients(&mut state.g_ref, &state.x_ref, r, problem, schedule, rng, counter)?;
        state.v.iter_mut().for_each(|v| *v = 0.0);
        for g in &state.g_ref {
            linalg::axpy(1.0, g, &mut state.v);
        }
        if let Some(obs) = observer.as_mut() {
            obs(&state);
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push((t, linalg::norm(&state.v)));
        }
        let v = std::mem::take(&mut state.v);
        linalg::axpy(-step, &v, &mut state.x);
        state.v = v;
        if !left_domain && !problem.in_domain(&state.x) {
            left_domain = true;
        }
    }
    Ok(EpochResult {
        x_out: state.x,
        length,
        grads_used: counter.count() - before,
        trajectory,
        left_domain,
        truncated,
    })
}
