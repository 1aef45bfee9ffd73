//! The nested loop-length / batch-size schedule of one epoch.
//!
//! For base batch `B0` with `K = floor(log2 log2 B0)` levels:
//!
//! ```text
//! T_1 = 2,            T_l = 2^(2^(l-2))                 (2 <= l <= K)
//! B_1 = 6^K B0,       B_l = 6^(K-l+1) B0 / 2^(2^(l-1))  (2 <= l <= K)
//! ```
//!
//! so that `prod T_l = sqrt(B0)` when `B0 = 2^(2^K)`. Epoch lengths are
//! geometric with parameter `p = 1 / (1 + prod T_l)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedSchedule {
    /// Base batch size `B0`.
    pub b0: u64,
    /// Nesting depth `K`.
    pub k: usize,
    /// Step-size parameter; the epoch step is `1 / (10 M)`.
    pub m: f64,
    /// `T_1 .. T_K`.
    pub loops: Vec<u64>,
    /// `B_1 .. B_K`.
    pub batches: Vec<u64>,
    /// Set when any batch was cut down to the population size.
    pub clamped: bool,
}

/// Canonical schedule for base batch `b0` and step parameter `m`.
pub fn derive_schedule(b0: u64, m: f64) -> Result<NestedSchedule> {
    if b0 < 4 {
        return Err(Error::ScheduleUnderflow { b0 });
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!("step parameter M must be positive, got {m}")));
    }
    let overflow = || Error::ScheduleOverflow { b0 };
    let k = b0.ilog2().ilog2() as usize;
    let mut loops = Vec::with_capacity(k);
    let mut batches = Vec::with_capacity(k);
    for l in 1..=k {
        let t = if l == 1 { 2 } else { 1u64 << (1u32 << (l - 2)) };
        loops.push(t);
        let six = 6u128.checked_pow((k - l + 1) as u32).ok_or_else(overflow)?;
        let num = six.checked_mul(u128::from(b0)).ok_or_else(overflow)?;
        let b = if l == 1 {
            num
        } else {
            let den = 1u128 << (1u32 << (l - 1));
            num.div_ceil(den).max(1)
        };
        batches.push(u64::try_from(b).map_err(|_| overflow())?);
    }
    Ok(NestedSchedule { b0, k, m, loops, batches, clamped: false })
}

/// Clamps every batch to the population size `n`; `None` (streaming) leaves
/// the schedule unchanged.
pub fn clamp_schedule(schedule: &NestedSchedule, n: Option<u64>) -> NestedSchedule {
    schedule.clamp(n)
}

/// Closed-form expected charge of one epoch,
/// `B0 + 2 sum_l B_l prod_{j<=l} T_j`.
pub fn expected_epoch_cost(schedule: &NestedSchedule) -> u64 {
    schedule.expected_epoch_cost()
}

/// `7 B0 log2^3 B0`.
pub fn epoch_cost_bound(b0: u64) -> f64 {
    let lg = (b0 as f64).log2();
    7.0 * b0 as f64 * lg * lg * lg
}

impl NestedSchedule {
    /// `prod_{j=from}^{K} T_j` with 1-based `from`; empty products are 1.
    pub fn loop_product_from(&self, from: usize) -> u64 {
        self.loops.iter().skip(from.saturating_sub(1)).product()
    }

    pub fn loop_product(&self) -> u64 {
        self.loop_product_from(1)
    }

    /// Reset period of `level`: `prod_{j=level+1}^{K} T_j`. Level `K` has period 1.
    pub fn period(&self, level: usize) -> u64 {
        self.loop_product_from(level + 1)
    }

    /// Geometric parameter `1 / (1 + prod T_l)`.
    pub fn geometric_p(&self) -> f64 {
        1.0 / (1.0 + self.loop_product() as f64)
    }

    /// Batch size at `level` (0 is the base batch).
    pub fn batch(&self, level: usize) -> u64 {
        if level == 0 {
            self.b0
        } else {
            self.batches[level - 1]
        }
    }

    pub fn clamp(&self, n: Option<u64>) -> NestedSchedule {
        let Some(n) = n else {
            return self.clone();
        };
        let mut out = self.clone();
        let mut cut = false;
        for b in std::iter::once(&mut out.b0).chain(out.batches.iter_mut()) {
            if *b > n {
                *b = n;
                cut = true;
            }
        }
        out.clamped |= cut;
        out
    }

    /// Every batch (base included) set to the population size `n`.
    pub fn with_full_batches(&self, n: u64) -> NestedSchedule {
        let mut out = self.clone();
        out.b0 = n;
        out.batches.iter_mut().for_each(|b| *b = n);
        out.clamped = true;
        out
    }

    pub fn expected_epoch_cost(&self) -> u64 {
        let mut total = self.b0;
        let mut prefix = 1u64;
        for (t, b) in self.loops.iter().zip(&self.batches) {
            prefix *= t;
            total += 2 * b * prefix;
        }
        total
    }

    /// Exact mean charge of one epoch as run by the epoch engine.
    ///
    /// At step `t` only the coarsest level `r` whose period divides `t` is
    /// refreshed, so level `l >= 1` is refreshed at multiples of its period
    /// that are not multiples of the coarser period. With `q = 1 - p`, the
    /// mean number of multiples of `P` in `[0, T)` is `q / (1 - q^P)`.
    pub fn mean_epoch_cost(&self) -> f64 {
        let q = 1.0 - self.geometric_p();
        let hits = |period: u64| q / (1.0 - q.powf(period as f64));
        let mut total = self.b0 as f64 * hits(self.period(0));
        for l in 1..=self.k {
            let fresh = hits(self.period(l)) - hits(self.period(l - 1));
            total += 2.0 * self.batch(l) as f64 * fresh;
        }
        total
    }

    /// `B_l >= 6^(K-l+1) (prod_{s=l}^K T_s)^2` for every level.
    pub fn satisfies_batch_condition(&self) -> bool {
        (1..=self.k).all(|l| {
            let p = u128::from(self.loop_product_from(l));
            let need = 6u128.pow((self.k - l + 1) as u32) * p * p;
            u128::from(self.batch(l)) >= need
        })
    }

    pub fn summary(&self) -> ScheduleSummary {
        ScheduleSummary {
            b0: self.b0,
            k: self.k,
            m: self.m,
            t: self.loops.clone(),
            b: self.batches.clone(),
            p: self.geometric_p(),
            expected_epoch_cost: self.expected_epoch_cost(),
        }
    }
}

/// JSON view printed by the `derive-schedule` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    #[serde(rename = "B0")]
    pub b0: u64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "T")]
    pub t: Vec<u64>,
    #[serde(rename = "B")]
    pub b: Vec<u64>,
    pub p: f64,
    pub expected_epoch_cost: u64,
}

/// The backward constant series `c_0^(s) .. c_{T_s}^(s)` of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct CSeries {
    pub level: usize,
    pub values: Vec<f64>,
}

impl CSeries {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("series is never empty")
    }
}

/// `c_{T_s} = M / (6^(K-s+1) prod_{l>=s} T_l)` and, going backwards,
/// `c_j = (1 + 1/T_s) c_{j+1} + (3 L^2 / M) prod_{l>s} T_l / B_s`.
pub fn c_series(schedule: &NestedSchedule, l: f64, s: usize) -> Result<CSeries> {
    if s == 0 || s > schedule.k {
        return Err(Error::InvalidArgument(format!("level {s} outside 1..={}", schedule.k)));
    }
    let k = schedule.k;
    let m = schedule.m;
    let t_s = schedule.loops[s - 1] as usize;
    let end = m / (6f64.powi((k - s + 1) as i32) * schedule.loop_product_from(s) as f64);
    let add = 3.0 * l * l / m * schedule.loop_product_from(s + 1) as f64 / schedule.batch(s) as f64;
    let grow = 1.0 + 1.0 / t_s as f64;
    let mut values = vec![0.0; t_s + 1];
    values[t_s] = end;
    for j in (0..t_s).rev() {
        values[j] = grow * values[j + 1] + add;
    }
    Ok(CSeries { level: s, values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InequalityCheck {
    pub level: usize,
    pub j: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Numeric evaluation of the two constant-series inequalities
///
/// ```text
/// c_j^(s-1) (1 + T_{s-1}) < c_{T_s}^(s)   for 2 <= s <= K, 0 <= j <= T_{s-1}
/// c_j^(K)   (1 + T_K)     < M             for 0 <= j <= T_K
/// ```
#[derive(Clone, Debug)]
pub struct SeriesReport {
    /// Hypotheses met: `M >= 6L`, unclamped, batch condition satisfied.
    pub applicable: bool,
    pub level_links: Vec<InequalityCheck>,
    pub top_level: Vec<InequalityCheck>,
}

impl SeriesReport {
    pub fn level_links_hold(&self) -> bool {
        self.level_links.iter().all(|c| c.holds)
    }

    pub fn top_level_holds(&self) -> bool {
        self.top_level.iter().all(|c| c.holds)
    }

    pub fn passed(&self) -> bool {
        self.level_links_hold() && self.top_level_holds()
    }
}

pub fn check_series_inequalities(schedule: &NestedSchedule, l: f64) -> Result<SeriesReport> {
    let k = schedule.k;
    let series: Vec<CSeries> = (1..=k).map(|s| c_series(schedule, l, s)).collect::<Result<_>>()?;
    let mut level_links = Vec::new();
    for s in 2..=k {
        let prev = &series[s - 2];
        let t_prev = schedule.loops[s - 2] as f64;
        let rhs = series[s - 1].last();
        for (j, c) in prev.values.iter().enumerate() {
            let lhs = c * (1.0 + t_prev);
            level_links.push(InequalityCheck { level: s, j, lhs, rhs, holds: lhs < rhs });
        }
    }
    let top = &series[k - 1];
    let t_k = schedule.loops[k - 1] as f64;
    let top_level = top
        .values
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let lhs = c * (1.0 + t_k);
            InequalityCheck { level: k, j, lhs, rhs: schedule.m, holds: lhs < schedule.m }
        })
        .collect();
    Ok(SeriesReport {
        applicable: schedule.m >= 6.0 * l && !schedule.clamped && schedule.satisfies_batch_condition(),
        level_links,
        top_level,
    })
}
