use proptest::prelude::*;
use snvrg::driver::{
    boost, boost_runs, configure, nc_descent_step, run, run_finite, run_online, subsample_size, DriverOutcome, Overrides,
    OutcomeStatus,
};
use snvrg::problems::{FiniteSumProblem, Problem, ProblemRef, SaddleBuilder};
use snvrg::trace::EventKind;
use snvrg::{linalg, rng};

fn saddle(seed: u64) -> FiniteSumProblem {
    SaddleBuilder::new(4, -1.0).unwrap().components(64).seed(seed).finite().unwrap()
}

fn desk(u: u64) -> Overrides {
    Overrides { u: Some(u), ..Default::default() }
}

/// Every outer iteration is a grad-check followed by exactly one branch.
fn check_trace(out: &DriverOutcome) {
    let ev = &out.trace.events;
    assert!(ev.windows(2).all(|w| w[0].grads_cum <= w[1].grads_cum));
    let last = ev.last().unwrap();
    assert_eq!(last.kind, EventKind::Terminate);
    let body = &ev[..ev.len() - 1];
    let mut i = 0;
    let mut iterations = 0;
    while i < body.len() {
        assert_eq!(body[i].kind, EventKind::GradCheck, "event {i}");
        let u = body[i].u;
        iterations += 1;
        assert_eq!(u, iterations);
        match body.get(i + 1).map(|e| e.kind) {
            Some(EventKind::Epoch) => i += 2,
            Some(EventKind::NcProbe) => match body.get(i + 2).map(|e| e.kind) {
                Some(EventKind::NcStep) => i += 3,
                _ => {
                    // a probe without a step is terminal
                    assert_eq!(i + 2, body.len());
                    assert_eq!(out.status, OutcomeStatus::CertifiedSosp);
                    i += 2;
                }
            },
            other => panic!("grad-check at u = {u} followed by {other:?}"),
        }
        assert!(body[i - 1].u == u);
    }
    assert_eq!(out.epochs, out.trace.count(EventKind::Epoch));
    assert_eq!(out.probes, out.trace.count(EventKind::NcProbe));
    assert_eq!(out.grads_total, last.grads_cum);
    match out.status {
        OutcomeStatus::CertifiedSosp => {
            assert!(last.grad_norm.is_some());
            assert_eq!(body.last().unwrap().kind, EventKind::NcProbe);
        }
        OutcomeStatus::BudgetExhausted => assert!(last.grad_norm.is_none()),
    }
}

#[test]
fn finite_runs_charge_the_full_gradient() {
    let p = saddle(1);
    let c = configure(ProblemRef::Finite(&p), 2, 1e-3, 0.1, &desk(1)).unwrap();
    let out = run_finite(&p, &c, &mut rng::stream(1, 0)).unwrap();
    assert_eq!(out.trace.events[0].grads_cum, 64);
}

#[test]
fn online_runs_obey_branch_exclusivity() {
    let p = SaddleBuilder::new(4, -1.0).unwrap().seed(2).streaming().unwrap();
    let o = Overrides { u: Some(60), b0: Some(64), b0_check: Some(2000), ..Default::default() };
    let c = configure(ProblemRef::Streaming(&p), 2, 0.05, 0.1, &o).unwrap();
    let out = run_online(&p, &c, &mut rng::stream(2, 0)).unwrap();
    check_trace(&out);
    assert!(out.epochs > 0);
    assert_eq!(out.trace.events[0].grads_cum, 2000);
}

#[test]
fn third_order_needs_l3() {
    let p = snvrg::problems::make_regularized_problem(5, 50, 0).unwrap();
    let spec = snvrg::problems::SmoothnessSpec { l3: None, ..p.smoothness().clone() };
    let p = p.with_smoothness(spec).unwrap();
    assert!(configure(ProblemRef::Finite(&p), 3, 1e-3, 0.1, &Overrides::default()).is_err());
    assert!(configure(ProblemRef::Finite(&p), 4, 1e-3, 0.1, &Overrides::default()).is_err());
    assert!(configure(ProblemRef::Finite(&p), 2, 0.0, 0.1, &Overrides::default()).is_err());
    assert!(configure(ProblemRef::Finite(&p), 2, 1e-3, 1.5, &Overrides::default()).is_err());
}

#[test]
fn nc_step_on_a_quadratic_is_exact() {
    let p = SaddleBuilder::with_spectrum(vec![0.5, 1.0, 2.0]).quartic(0.0).components(8).noise(0.0, 0.0).finite().unwrap();
    let z = vec![0.2, -0.1, 0.3];
    let v = vec![1.0, 0.0, 0.0];
    let eta = 0.3;
    let f0 = p.value(&z);
    let mut avg = 0.0;
    let mut r = rng::stream(4, 0);
    let mut signs = [0, 0];
    while signs.contains(&0) {
        let z1 = nc_descent_step(&z, &v, eta, &mut r);
        let k = usize::from(z1[0] > z[0]);
        if signs[k] == 0 {
            avg += (p.value(&z1) - f0) / 2.0;
        }
        signs[k] += 1;
    }
    // the first-order terms cancel between the two signs
    assert!((avg - eta * eta / 2.0 * 0.5).abs() < 1e-14);
}

#[test]
fn boost_counts_and_prefers_certified_runs() {
    assert_eq!(boost_runs(0.5).unwrap(), 1);
    assert_eq!(boost_runs(0.01).unwrap(), 7);
    assert!(boost_runs(0.0).is_err());
    let p = SaddleBuilder::new(4, -1.0).unwrap().components(256).seed(5).finite().unwrap();
    let c = configure(ProblemRef::Finite(&p), 2, 1e-2, 0.1, &desk(400)).unwrap();
    let b = boost(ProblemRef::Finite(&p), &c, &mut rng::stream(5, 0), 0.1).unwrap();
    assert!(b.runs >= 1 && b.runs <= 4);
    assert_eq!(b.outcome.status, OutcomeStatus::CertifiedSosp);
}

#[test]
fn subsample_size_formula() {
    let want = (2.0 * 0.5 / 0.01 * (1.0 + 20f64.log2().sqrt()).powi(2)).ceil() as u64;
    assert_eq!(subsample_size(0.5, 0.1, 0.05), want);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn traces_obey_branch_exclusivity(seed in 0u64..1000, u in 1u64..120) {
        let p = saddle(seed);
        let c = configure(ProblemRef::Finite(&p), 2, 1e-3, 0.1, &desk(u)).unwrap();
        let out = run(ProblemRef::Finite(&p), &c, &mut rng::stream(seed, 1)).unwrap();
        check_trace(&out);
        prop_assert!(out.trace.events.len() as u64 <= 3 * u + 1);
    }

    #[test]
    fn runs_are_deterministic(seed in 0u64..1000) {
        let p = saddle(seed);
        let c = configure(ProblemRef::Finite(&p), 2, 1e-3, 0.1, &desk(40)).unwrap();
        let a = run_finite(&p, &c, &mut rng::stream(seed, 2)).unwrap();
        let b = run_finite(&p, &c, &mut rng::stream(seed, 2)).unwrap();
        prop_assert_eq!(&a.z_final, &b.z_final);
        prop_assert_eq!(a.grads_total, b.grads_total);
        let strip = |o: &DriverOutcome| o.trace.events.iter().map(|e| (e.kind, e.u, e.grads_cum, e.f_value.to_bits())).collect::<Vec<_>>();
        prop_assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn nc_steps_have_length_eta(seed in 0u64..1000, eta in 0.01f64..2.0) {
        let mut v = vec![1.0, -2.0, 0.5];
        linalg::normalize(&mut v);
        let z = vec![0.1, 0.2, 0.3];
        let z1 = nc_descent_step(&z, &v, eta, &mut rng::stream(seed, 0));
        prop_assert!((linalg::dist(&z, &z1) - eta).abs() < 1e-12);
    }
}
