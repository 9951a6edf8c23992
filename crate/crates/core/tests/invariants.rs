use nalgebra::DMatrix;
use proptest::prelude::*;

use capfade_core::attribution::shapley_exact;
use capfade_core::correlation::{grey_coefficients, grey_degree};
use capfade_core::data::{split_rows, train_size};
use capfade_core::fusion::joint_affinities;
use capfade_core::models::elm_solve_beta;
use capfade_core::pipeline::{r_squared, rmse, standard_deviation, taylor_points};
use capfade_core::woa::{encircle_step, woa_optimize, WoaConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn series(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(n in 3usize..200, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let s = split_rows(n, ratio, seed).unwrap();
        prop_assert_eq!(s.train.len(), train_size(n, ratio));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_rows(n, ratio, seed).unwrap(), s);
    }

    #[test]
    fn woa_is_elitist_bounded_and_repeatable(
        seed in any::<u64>(),
        dim in 1usize..5,
        pop in 2usize..10,
        shift in -3.0f64..3.0,
    ) {
        let f = move |x: &[f64]| x.iter().map(|v| (v - shift).abs() + (3.0 * v).sin()).sum::<f64>();
        let cfg = WoaConfig { pop_size: pop, t_max: 25, ..WoaConfig::uniform(dim, -2.0, 2.0, seed) };
        let s = woa_optimize(&f, &cfg).unwrap();
        prop_assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*s.history.last().unwrap(), s.best_cost);
        for p in s.positions.iter().chain(std::iter::once(&s.best_position)) {
            prop_assert!(p.iter().all(|v| (-2.0..=2.0).contains(v)));
        }
        prop_assert!((f(&s.best_position) - s.best_cost).abs() < 1e-12);
        prop_assert_eq!(woa_optimize(&f, &cfg).unwrap(), s);
    }

    #[test]
    fn encircle_commutes_with_scaling_and_translation(
        x in series(4..5), best in series(4..5), shift in series(4..5),
        a in prop::collection::vec(-2.0f64..2.0, 4), c in prop::collection::vec(0.0f64..2.0, 4),
        s in 0.01f64..10.0,
    ) {
        let base = encircle_step(&x, &best, &a, &c, None);
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        let bs: Vec<f64> = best.iter().map(|v| v * s).collect();
        let scaled = encircle_step(&xs, &bs, &a, &c, None);
        for (u, v) in base.iter().zip(&scaled) {
            prop_assert!((u * s - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
        // translation only commutes when C = 1
        let ones = vec![1.0; 4];
        let base = encircle_step(&x, &best, &a, &ones, None);
        let xt: Vec<f64> = x.iter().zip(&shift).map(|(u, d)| u + d).collect();
        let bt: Vec<f64> = best.iter().zip(&shift).map(|(u, d)| u + d).collect();
        let moved = encircle_step(&xt, &bt, &a, &ones, None);
        for ((u, v), d) in base.iter().zip(&moved).zip(&shift) {
            prop_assert!((u + d - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn least_squares_beats_any_perturbation(
        rows in 3usize..12, cols in 1usize..6,
        entries in prop::collection::vec(-3.0f64..3.0, 72),
        targets in prop::collection::vec(-5.0f64..5.0, 12),
        noise in prop::collection::vec(-1.0f64..1.0, 6 * 100),
    ) {
        let h = DMatrix::from_fn(rows, cols, |i, j| entries[i * 6 + j]);
        let t = DMatrix::from_fn(rows, 1, |i, _| targets[i]);
        let beta = elm_solve_beta(&h, &t).unwrap();
        let best = (&h * &beta - &t).norm_squared();
        for k in 0..100 {
            let mut other = beta.clone();
            for j in 0..cols {
                other[j] += 0.1 * noise[k * 6 + j];
            }
            prop_assert!((&h * &other - &t).norm_squared() >= best - 1e-9 * (1.0 + best));
        }
    }

    #[test]
    fn error_statistics_agree(actual in series(3..40), noise in series(40..41), gain in -2.0f64..2.0) {
        prop_assume!(standard_deviation(&actual).unwrap() > 1e-3);
        let pred: Vec<f64> = actual.iter().zip(&noise).map(|(a, e)| gain * a + 0.1 * e).collect();
        let e = rmse(&pred, &actual).unwrap();
        let sa = standard_deviation(&actual).unwrap();
        let r2 = r_squared(&pred, &actual).unwrap();
        prop_assert!((r2 - (1.0 - e * e / (sa * sa))).abs() < 1e-9 * (1.0 + r2.abs()));

        let taylor = taylor_points(&[("m".into(), pred.clone())], &actual).unwrap();
        let p = &taylor.points[0];
        if let Some(r) = p.pearson_r {
            let rhs = p.sd_pred.powi(2) + sa * sa - 2.0 * p.sd_pred * sa * r;
            prop_assert!((p.centered_rmse.powi(2) - rhs).abs() < 1e-8 * (1.0 + rhs));
            let bias = mean(&pred) - mean(&actual);
            prop_assert!((e * e - (bias * bias + p.centered_rmse.powi(2))).abs() < 1e-8 * (1.0 + e * e));
        }
    }

    #[test]
    fn shapley_sums_to_prediction_gap(
        x in prop::collection::vec(-2.0f64..2.0, 1..8),
        w in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let m = x.len();
        let f = move |z: &[f64]| {
            z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + (z[0] * z[m - 1]).tanh() + z.iter().product::<f64>()
        };
        let bg = vec![0.3; m];
        let rep = shapley_exact(&f, &x, &bg).unwrap();
        let total: f64 = rep.phi.iter().sum();
        prop_assert!((rep.base_value + total - rep.prediction).abs() < 1e-10);
        prop_assert!((rep.prediction - f(&x)).abs() < 1e-12);
        prop_assert!((rep.base_value - f(&bg)).abs() < 1e-12);
    }

    #[test]
    fn grey_coefficients_lie_in_unit_interval(
        reference in series(5..6), a in series(5..6), b in series(5..6), rho in 0.05f64..1.0,
    ) {
        let xi = grey_coefficients(&reference, &[&a, &b, &reference], rho).unwrap();
        for row in &xi {
            prop_assert!(row.iter().all(|v| *v > 0.0 && *v <= 1.0));
            let g = grey_degree(row).unwrap();
            prop_assert!(g > 0.0 && g <= 1.0);
        }
        prop_assert!(xi[2].iter().all(|v| *v == 1.0));
    }

    #[test]
    fn joint_affinities_are_a_distribution(
        flat in prop::collection::vec(-5.0f64..5.0, 30..61),
        perplexity in 2.0f64..5.0,
    ) {
        let n = flat.len() / 3;
        let x: Vec<Vec<f64>> = flat.chunks(3).take(n).map(<[f64]>::to_vec).collect();
        let p = joint_affinities(&x, perplexity).unwrap();
        prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert_eq!(p.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(p.get(i, j) >= 0.0);
                prop_assert!((p.get(i, j) - p.get(j, i)).abs() < 1e-15);
            }
        }
    }
}
