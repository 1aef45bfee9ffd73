use proptest::prelude::*;
use snvrg::epoch::{reset_level, run_epoch, run_epoch_with, EpochLength, EpochOptions, EpochState};
use snvrg::problems::{make_regularized_problem, GradCounter, Problem, SaddleBuilder};
use snvrg::schedule::derive_schedule;
use snvrg::{linalg, rng};

fn fixed(t: u64) -> EpochOptions {
    EpochOptions { length: EpochLength::Fixed(t), record_trajectory: true }
}

/// Counter charge of a fixed-length epoch computed by hand from the reset rule.
fn hand_cost(t_len: u64, k: usize, period: impl Fn(usize) -> u64, batch: impl Fn(usize) -> u64) -> u64 {
    (0..t_len)
        .map(|t| {
            let r = (0..=k).find(|&j| t % period(j) == 0).unwrap();
            // finer levels restart at the same point and cost nothing
            if r == 0 {
                batch(0)
            } else {
                2 * batch(r)
            }
        })
        .sum()
}

#[test]
fn reset_level_examples() {
    let s = derive_schedule(256, 1.0).unwrap();
    // periods: level 0 -> 16, level 1 -> 8, level 2 -> 4, level 3 -> 1
    let want = [(0, 0), (1, 3), (4, 2), (8, 1), (12, 2), (16, 0), (17, 3), (24, 1)];
    for (t, r) in want {
        assert_eq!(reset_level(t, &s), r, "t = {t}");
    }
}

#[test]
fn reference_points_follow_the_reset_law() {
    let p = make_regularized_problem(8, 300, 1).unwrap();
    let s = derive_schedule(256, 6.0 * p.smoothness().l1).unwrap().clamp(Some(300));
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut checked = 0;
    let mut obs = |st: &EpochState| {
        history.push(st.x.clone());
        assert_eq!(st.x_ref[s.k], st.x);
        for l in 0..=s.k {
            let per = s.period(l);
            let anchor = (st.t / per * per) as usize;
            assert_eq!(st.x_ref[l], history[anchor], "t {} level {l}", st.t);
        }
        let sum = st.g_ref.iter().fold(vec![0.0; st.v.len()], |mut acc, g| {
            linalg::axpy(1.0, g, &mut acc);
            acc
        });
        assert!(linalg::dist(&sum, &st.v) <= 1e-12 * (1.0 + linalg::norm(&st.v)));
        checked += 1;
    };
    run_epoch_with(p.start(), &p, &s, &mut rng::stream(1, 0), &mut GradCounter::new(), fixed(70), Some(&mut obs)).unwrap();
    assert_eq!(checked, 70);
}

#[test]
fn zero_length_epoch_does_no_work() {
    let p = make_regularized_problem(5, 100, 2).unwrap();
    let s = derive_schedule(16, 6.0).unwrap().clamp(Some(100));
    let mut c = GradCounter::new();
    let r = run_epoch_with(p.start(), &p, &s, &mut rng::stream(2, 0), &mut c, fixed(0), None).unwrap();
    assert_eq!(r.length, 0);
    assert_eq!(r.grads_used, 0);
    assert_eq!(c.count(), 0);
    assert_eq!(r.x_out, p.start());
}

#[test]
fn step_is_one_tenth_over_m() {
    let p = make_regularized_problem(5, 100, 3).unwrap();
    let s = derive_schedule(16, 6.0 * p.smoothness().l1).unwrap().with_full_batches(100);
    let r = run_epoch_with(p.start(), &p, &s, &mut rng::stream(3, 0), &mut GradCounter::new(), fixed(1), None).unwrap();
    let mut want = p.start().to_vec();
    linalg::axpy(-1.0 / (10.0 * s.m), &p.gradient(p.start()), &mut want);
    assert!(linalg::dist(&want, &r.x_out) < 1e-12);
}

#[test]
fn geometric_epochs_report_their_cost() {
    let p = make_regularized_problem(5, 400, 4).unwrap();
    let s = derive_schedule(256, 6.0 * p.smoothness().l1).unwrap().clamp(Some(400));
    for e in 0..50 {
        let mut c = GradCounter::new();
        let r = run_epoch(p.start(), &p, &s, &mut rng::stream(4, e), &mut c).unwrap();
        assert_eq!(r.grads_used, c.count());
        assert_eq!(r.grads_used, hand_cost(r.length, s.k, |j| s.period(j), |l| s.batch(l)));
        assert!(!r.truncated);
    }
}

#[test]
fn streaming_epochs_run() {
    let p = SaddleBuilder::new(6, -1.0).unwrap().seed(5).streaming().unwrap();
    let s = derive_schedule(16, 6.0 * p.smoothness().l1).unwrap();
    let r = run_epoch_with(p.start(), &p, &s, &mut rng::stream(5, 0), &mut GradCounter::new(), fixed(9), None).unwrap();
    assert_eq!(r.grads_used, hand_cost(9, s.k, |j| s.period(j), |l| s.batch(l)));
    assert_eq!(r.trajectory.unwrap().len(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn full_batches_track_the_true_gradient(seed in 0u64..1000, len in 1u64..60) {
        let p = make_regularized_problem(6, 64, seed).unwrap();
        let s = derive_schedule(16, 6.0 * p.smoothness().l1).unwrap().with_full_batches(64);
        let mut worst: f64 = 0.0;
        let mut obs = |st: &EpochState| {
            let g = p.gradient(&st.x);
            worst = worst.max(linalg::dist(&st.v, &g) / (1.0 + linalg::norm(&g)));
        };
        run_epoch_with(p.start(), &p, &s, &mut rng::stream(seed, 0), &mut GradCounter::new(), fixed(len), Some(&mut obs)).unwrap();
        prop_assert!(worst <= 1e-10);
    }

    #[test]
    fn fixed_length_cost_is_exact(seed in 0u64..1000, len in 0u64..80) {
        let p = make_regularized_problem(4, 500, seed).unwrap();
        let s = derive_schedule(256, 6.0 * p.smoothness().l1).unwrap().clamp(Some(500));
        let mut c = GradCounter::new();
        run_epoch_with(p.start(), &p, &s, &mut rng::stream(seed, 1), &mut c, fixed(len), None).unwrap();
        prop_assert_eq!(c.count(), hand_cost(len, s.k, |j| s.period(j), |l| s.batch(l)));
    }

    #[test]
    fn epochs_are_deterministic(seed in 0u64..1000) {
        let p = make_regularized_problem(4, 200, 7).unwrap();
        let s = derive_schedule(16, 6.0 * p.smoothness().l1).unwrap().clamp(Some(200));
        let a = run_epoch(p.start(), &p, &s, &mut rng::stream(seed, 0), &mut GradCounter::new()).unwrap();
        let b = run_epoch(p.start(), &p, &s, &mut rng::stream(seed, 0), &mut GradCounter::new()).unwrap();
        prop_assert_eq!(a.x_out, b.x_out);
        prop_assert_eq!(a.length, b.length);
    }
}
