use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use specdyn_core::continual::{
    entropy_measures, fisher_diagonal, ContinualProtocol, FisherKind, FisherScale,
    PolarReadoutInit, ReadoutInit,
};
use specdyn_core::linear_dynamics::{DataStatistics, Pathway, PathwayConfig, PathwayGd};
use specdyn_core::meanfield::averages::{i2, i3, i4};
use specdyn_core::meanfield::{ode_rhs, Activation, OrderParams, Task};
use specdyn_core::rng;

fn psd(p: usize, entries: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |i, j| entries[i * p + j]);
    &a * a.transpose() + DMatrix::identity(p, p) * 1e-3
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn entropies_bounded_and_scale_free(
        p in 2usize..6,
        entries in prop::collection::vec(-2.0f64..2.0, 36),
        h in prop::collection::vec(-3.0f64..3.0, 6),
        c in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0],
    ) {
        let q = psd(p, &entries);
        let h = DVector::from_column_slice(&h[..p]);
        prop_assume!(h.amax() > 1e-6);
        let e = entropy_measures(&q, &h).unwrap();
        let top = (p as f64).ln() + 1e-12;
        prop_assert!((0.0..=top).contains(&e.h_h));
        prop_assert!((0.0..=top).contains(&e.h_q));
        prop_assert!(e.h_m >= 0.0);
        let s = entropy_measures(&(&q * (c * c)), &(&h * c)).unwrap();
        prop_assert!((s.h_h - e.h_h).abs() < 1e-12);
        prop_assert!((s.h_q - e.h_q).abs() < 1e-12);
        prop_assert!((s.h_m - e.h_m).abs() < 1e-12);
    }

    #[test]
    fn polar_readout_has_requested_norm_and_angle(
        r in 1e-3f64..10.0,
        theta in 0.0f64..=std::f64::consts::FRAC_PI_4,
    ) {
        let v = PolarReadoutInit::new(r, theta).unwrap().vector();
        prop_assert!((v.norm() - r).abs() < 1e-12 * r);
        prop_assert!((v[1].atan2(v[0]) - theta).abs() < 1e-12);
    }

    #[test]
    fn closed_form_starts_at_initial_product(
        s in 0.5f64..105.0,
        lambda in prop_oneof![0.1f64..100.0, -0.9e-6f64..-0.1e-6, Just(0.0)],
        a0 in 1e-3f64..0.1,
    ) {
        let cfg = PathwayConfig::new(a0, lambda, 1e-5).unwrap();
        let p = Pathway::new(DataStatistics::whitened(s).unwrap(), cfg).unwrap();
        let w0 = p.omega(0.0).unwrap();
        prop_assert!((w0 - cfg.omega0()).abs() <= 1e-9 * cfg.omega0());
    }

    #[test]
    fn descent_moves_imbalance_at_second_order(
        s in 0.1f64..10.0,
        d in 0.5f64..2.0,
        w in prop::collection::vec(-1.0f64..1.0, 1..4),
        h in 0.1f64..3.0,
        eta in 1e-6f64..1e-2,
    ) {
        let stats = DataStatistics::new(s, d).unwrap();
        let mut gd = PathwayGd::new(stats, w.clone(), h, eta).unwrap();
        let before = gd.imbalance();
        let rmag2: f64 = w
            .iter()
            .enumerate()
            .map(|(i, &wi)| (if i == 0 { s } else { 0.0 } - h * d * wi).powi(2))
            .sum();
        // h'² − |w'|² = λ + η²·((Σ rᵢwᵢ)² − h²·Σ rᵢ²) with rᵢ the per-coordinate residual.
        let rw: f64 = w
            .iter()
            .enumerate()
            .map(|(i, &wi)| (if i == 0 { s } else { 0.0 } - h * d * wi) * wi)
            .sum();
        let expected = before + eta * eta * (rw * rw - h * h * rmag2);
        gd.step();
        prop_assert!((gd.imbalance() - expected).abs() < 1e-12 * (1.0 + before.abs()));
    }

    #[test]
    fn averages_respect_index_symmetries(entries in prop::collection::vec(-1.5f64..1.5, 16)) {
        let c = psd(4, &entries);
        let a = i2(&c, 0, 1).unwrap();
        prop_assert_eq!(a, i2(&c, 1, 0).unwrap());
        prop_assert!(a.abs() <= 1.0);
        let four = i4(&c, 0, 1, 2, 3).unwrap();
        prop_assert!((four - i4(&c, 1, 0, 2, 3).unwrap()).abs() < 1e-12);
        prop_assert!((four - i4(&c, 0, 1, 3, 2).unwrap()).abs() < 1e-12);
        let three = i3(&c, 0, 1, 2).unwrap();
        let mut flipped = c.clone();
        for k in 0..4 {
            if k != 1 {
                flipped[(1, k)] = -flipped[(1, k)];
                flipped[(k, 1)] = -flipped[(k, 1)];
            }
        }
        prop_assert!((three + i3(&flipped, 0, 1, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_reproducible(seed in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assert_eq!(rng::derive_seed(seed, &[i, j]), rng::derive_seed(seed, &[i, j]));
        if i != j {
            prop_assert_ne!(rng::derive_seed(seed, &[i, j]), rng::derive_seed(seed, &[j, i]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ode_rates_permute_with_students(seed in 0u64..1000, gamma in 0.0f64..1.0) {
        let proto = ContinualProtocol {
            d: 60,
            p: 3,
            p_star: 2,
            gamma,
            sigma_w: 1.0,
            init1: ReadoutInit::Gaussian { std: 1.0 },
            init2: ReadoutInit::Gaussian { std: 1.0 },
            seed,
            ..Default::default()
        };
        let (ens, student) = proto.setup().unwrap();
        let perm = [2usize, 0, 1];
        let mut moved = student.clone();
        for (k, &src) in perm.iter().enumerate() {
            moved.w.set_column(k, &student.w.column(src));
            moved.h1[k] = student.h1[src];
            moved.h2[k] = student.h2[src];
        }
        for task in [Task::One, Task::Two] {
            let a = ode_rhs(&OrderParams::from_weights(&student, &ens), task, 0.7).unwrap();
            let b = ode_rhs(&OrderParams::from_weights(&moved, &ens), task, 0.7).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((b.q[(i, j)] - a.q[(perm[i], perm[j])]).abs() < 1e-12);
                }
                for n in 0..2 {
                    prop_assert!((b.r1[(i, n)] - a.r1[(perm[i], n)]).abs() < 1e-12);
                    prop_assert!((b.r2[(i, n)] - a.r2[(perm[i], n)]).abs() < 1e-12);
                }
                prop_assert!((b.readout(task)[i] - a.readout(task)[perm[i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_units_get_equal_importance(seed in 0u64..1000, h in 0.1f64..2.0) {
        let proto = ContinualProtocol {
            d: 80,
            sigma_w: 0.5,
            init1: ReadoutInit::polar(h, std::f64::consts::FRAC_PI_4),
            seed,
            ..Default::default()
        };
        let (ens, mut student) = proto.setup().unwrap();
        let first = student.w.column(0).into_owned();
        student.w.set_column(1, &first);
        for kind in [FisherKind::Empirical, FisherKind::Model] {
            let mut r = rng::stream(seed, 3);
            let f = fisher_diagonal(
                &student,
                &ens,
                Task::One,
                200,
                kind,
                FisherScale::PerSample,
                Activation::ScaledErf,
                &mut r,
            )
            .unwrap();
            for j in 0..proto.d {
                let gap = (f.values[(j, 0)] - f.values[(j, 1)]).abs();
                let se = (f.stderr[(j, 0)].powi(2) + f.stderr[(j, 1)].powi(2)).sqrt();
                prop_assert!(gap <= 3.0 * se + 1e-15);
            }
        }
    }
}
