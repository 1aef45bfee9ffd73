use proptest::prelude::*;
use snvrg::linalg;
use snvrg::problems::{
    draw_batch, make_regularized_problem, minibatch_gradient, random_point_in_ball, sample_indices_without_replacement,
    sampling_variance_check, FiniteSumProblem, GradCounter, Points, Problem, SaddleBuilder,
};
use snvrg::rng;

fn fixtures(seed: u64) -> Vec<FiniteSumProblem> {
    vec![
        SaddleBuilder::new(6, -1.0).unwrap().components(40).seed(seed).finite().unwrap(),
        SaddleBuilder::new(5, -0.3).unwrap().rotated().components(25).seed(seed).finite().unwrap(),
        make_regularized_problem(7, 60, seed).unwrap(),
    ]
}

fn central_difference_hessian(p: &dyn Problem, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|j| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[j] += h;
            b[j] -= h;
            let (ga, gb) = (p.gradient(&a), p.gradient(&b));
            ga.iter().zip(&gb).map(|(u, v)| (u - v) / (2.0 * h)).collect()
        })
        .collect()
}

/// Plain gradient descent on the verification gradient.
fn descend(p: &dyn Problem, mut x: Vec<f64>) -> Vec<f64> {
    let step = 0.5 / p.smoothness().l1;
    for _ in 0..20_000 {
        let g = p.gradient(&x);
        linalg::axpy(-step, &g, &mut x);
    }
    x
}

#[test]
fn component_mean_matches_full_gradient() {
    let mut r = rng::stream(1, 0);
    for p in fixtures(1) {
        let keys: Vec<u64> = (0..p.n() as u64).collect();
        for _ in 0..100 {
            let x = random_point_in_ball(p.start(), p.radius().min(2.0), &mut r);
            let g = p.gradient(&x);
            let m = minibatch_gradient(&p, Points::One(&x), &keys, &mut GradCounter::new()).unwrap();
            assert!(linalg::dist(&g, &m) <= 1e-10 * (1.0 + linalg::norm(&g)));
        }
    }
}

#[test]
fn hessian_matches_differences_and_is_symmetric() {
    let mut r = rng::stream(2, 0);
    for p in fixtures(2) {
        for _ in 0..20 {
            let x = random_point_in_ball(p.start(), p.radius().min(2.0), &mut r);
            let h = p.hessian(&x);
            let fd = central_difference_hessian(&p, &x, 1e-5);
            for j in 0..x.len() {
                let col: Vec<f64> = (0..x.len()).map(|i| h[(i, j)]).collect();
                assert!(linalg::dist(&col, &fd[j]) <= 1e-5 * (1.0 + linalg::norm(&col)));
                for i in 0..x.len() {
                    assert!((h[(i, j)] - h[(j, i)]).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn gap_bound_covers_the_minimum() {
    let mut r = rng::stream(3, 0);
    for p in fixtures(3) {
        let f0 = p.value(p.start());
        let mut best = f0;
        for _ in 0..8 {
            let x0 = random_point_in_ball(&vec![0.0; p.dim()], 3.0, &mut r);
            best = best.min(p.value(&descend(&p, x0)));
        }
        assert!(f0 - best <= p.smoothness().delta_f * (1.0 + 1e-9), "{f0} - {best} vs {}", p.smoothness().delta_f);
    }
}

#[test]
fn streaming_samples_are_unbiased() {
    let p = SaddleBuilder::new(4, -1.0).unwrap().seed(4).streaming().unwrap();
    let x = vec![0.3, -0.2, 0.1, 0.4];
    let mut r = rng::stream(4, 0);
    let draws = 100_000u64;
    let keys = draw_batch(p.population(), draws, &mut r).unwrap();
    let g = p.gradient(&x);
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for &k in &keys {
        let s = minibatch_gradient(&p, Points::One(&x), &[k], &mut GradCounter::new()).unwrap();
        for j in 0..4 {
            sum[j] += s[j];
            sq[j] += (s[j] - g[j]).powi(2);
        }
    }
    let n = draws as f64;
    for j in 0..4 {
        let sd = (sq[j] / n).sqrt();
        assert!((sum[j] / n - g[j]).abs() <= 4.0 * sd / n.sqrt(), "coordinate {j}");
    }
}

#[test]
fn counter_is_exact() {
    let p = make_regularized_problem(3, 50, 5).unwrap();
    let x = p.start().to_vec();
    let y = vec![0.5; 3];
    let mut c = GradCounter::new();
    let mut want = 0;
    for (i, size) in [1usize, 7, 50, 13].into_iter().enumerate() {
        let keys: Vec<u64> = (0..size as u64).collect();
        if i % 2 == 0 {
            minibatch_gradient(&p, Points::One(&x), &keys, &mut c).unwrap();
            want += size as u64;
        } else {
            minibatch_gradient(&p, Points::Two(&x, &y), &keys, &mut c).unwrap();
            want += 2 * size as u64;
        }
        assert_eq!(c.count(), want);
    }
    // verification oracles are free
    p.gradient(&x);
    p.hessian(&x);
    assert_eq!(c.count(), want);
}

#[test]
fn subset_variance_bound() {
    let mut r = rng::stream(6, 0);
    let n = 30;
    let mut vs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 / 10.0]).collect();
    let mean: Vec<f64> = (0..3).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    vs.iter_mut().for_each(|v| linalg::axpy(-1.0, &mean, v));
    for m in [1, 5, 17, 29] {
        let rep = sampling_variance_check(&vs, m, 100_000, &mut r).unwrap();
        assert!(rep.estimate <= rep.bound * 1.05, "m {m}: {} vs {}", rep.estimate, rep.bound);
    }
    let full = sampling_variance_check(&vs, n, 100, &mut r).unwrap();
    assert!(full.estimate <= 1e-24);
}

proptest! {
    #[test]
    fn index_samples_are_distinct(n in 1usize..500, frac in 0.0f64..1.0, seed in 0u64..1000) {
        let m = ((n as f64 * frac) as usize).max(1);
        let mut idx = sample_indices_without_replacement(n, m, &mut rng::stream(seed, 0)).unwrap();
        prop_assert_eq!(idx.len(), m);
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), m);
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert!(sample_indices_without_replacement(n, n + 1, &mut rng::stream(seed, 0)).is_err());
    }

    #[test]
    fn smoothness_constants_are_positive(seed in 0u64..1000, dim in 2usize..8) {
        let p = SaddleBuilder::new(dim, -1.0).unwrap().components(10).seed(seed).finite().unwrap();
        prop_assert!(p.smoothness().validate().is_ok());
        prop_assert!(p.smoothness().l3.is_some());
        let q = make_regularized_problem(dim, 20, seed).unwrap();
        prop_assert!(q.smoothness().validate().is_ok());
    }
}
