use proptest::prelude::*;

use quasiexit_core::action::{geometric_action, DiscretePath, MetricField};
use quasiexit_core::domain::{first_exit_scan, hitting_time_tau_prime, HitTag};
use quasiexit_core::mv::{derive_constants, w2_to_dirac, ParticleEnsemble, SummaryKind};
use quasiexit_core::numeric::exact_sum;
use quasiexit_core::perturb::sigma_bound;
use quasiexit_core::presets::{DoubleWell, MaierStein};
use quasiexit_core::stats::{kramers_fit, wilson_ci, Interval, KramersPoint};
use quasiexit_core::{simulate_path, Domain, IntegratorConfig, RngStream};

fn positive() -> impl Strategy<Value = f64> {
    0.01f64..10.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn contraction_factor_lies_strictly_between_half_and_one(k1 in 0.01f64..5.0, gap in 0.01f64..5.0, c in positive(), kappa in positive()) {
        let k = derive_constants(k1 + gap, k1, c, kappa, 1.0, 1.0, 2.0).unwrap();
        prop_assert!(k.m > 0.5 && k.m < 1.0, "m = {}", k.m);
        prop_assert!(k.k_tilde1 < k.k_tilde2 && k.k_tilde2 < k.k_tilde);
        prop_assert!(k.t1 > 0.0);
    }

    #[test]
    fn constants_reject_misordered_rates(k in 0.01f64..5.0, extra in 0.0f64..5.0) {
        prop_assert!(derive_constants(k, k + extra, 1.0, 0.1, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn deviation_bound_grows_with_delta_and_shrinks_with_kappa(kappa in 0.01f64..1.0, d1 in 0.0f64..2.0, dd in 0.001f64..2.0, c in 0.1f64..5.0) {
        let lo = sigma_bound(kappa, 1.0, d1, c).unwrap();
        let hi = sigma_bound(kappa, 1.0, d1 + dd, c).unwrap();
        prop_assert!(hi > lo);
        let weaker = sigma_bound(kappa * 2.0, 1.0, d1 + dd, c).unwrap();
        prop_assert!(weaker < hi);
    }

    #[test]
    fn geometric_action_is_nonnegative(pts in prop::collection::vec((-1.8f64..-0.2, -0.8f64..0.8), 3..16), beta in 0.0f64..10.0) {
        let nodes: Vec<Vec<f64>> = pts.iter().map(|(x, y)| vec![*x, *y]).collect();
        let path = DiscretePath::geometric(nodes).unwrap();
        let f = MaierStein { beta };
        prop_assert!(geometric_action(&path, &MetricField::new(&f)).unwrap() >= 0.0);
    }

    #[test]
    fn geometric_action_ignores_parametrization(bow in -0.4f64..0.4, warp in 0.5f64..2.0) {
        // one curve, two node placements: uniform in s versus s^warp
        let curve = |s: f64| vec![-1.0 + 0.9 * s, bow * (core::f64::consts::PI * s).sin()];
        let n = 4000;
        let uniform = DiscretePath::geometric((0..=n).map(|k| curve(k as f64 / n as f64)).collect()).unwrap();
        let warped = DiscretePath::geometric((0..=n).map(|k| curve((k as f64 / n as f64).powf(warp))).collect()).unwrap();
        let f = MaierStein { beta: 3.0 };
        let m = MetricField::new(&f);
        let (a, b) = (geometric_action(&uniform, &m).unwrap(), geometric_action(&warped, &m).unwrap());
        prop_assert!((a - b).abs() <= 1e-4 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn w2_to_dirac_squares_to_the_second_moment(states in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..60), a in prop::collection::vec(-2.0f64..2.0, 2)) {
        let ens = ParticleEnsemble::from_states(states.clone(), &RngStream::new(0, 0)).unwrap();
        let w2 = w2_to_dirac(&ens, &a);
        let ms = exact_sum(states.iter().map(|x| (x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2))) / states.len() as f64;
        prop_assert!((w2 * w2 - ms).abs() <= 1e-12 * ms.max(1.0));
        // raw moment route: E|x|^2 - 2 a.E[x] + |a|^2
        let s = ens.summary(SummaryKind::SecondMoment).unwrap();
        let raw = s.second_moment[0] + s.second_moment[3] - 2.0 * (a[0] * s.mean[0] + a[1] * s.mean[1]) + a[0] * a[0] + a[1] * a[1];
        prop_assert!((raw - ms).abs() <= 1e-9 * ms.max(1.0));
    }

    #[test]
    fn ensemble_statistics_are_permutation_invariant(states in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 1), 2..80), seed in any::<u64>()) {
        let mut ens = ParticleEnsemble::from_states(states, &RngStream::new(1, 2)).unwrap();
        let before = (w2_to_dirac(&ens, &[-1.0]), ens.summary(SummaryKind::SecondMoment).unwrap());
        ens.shuffle(&mut RngStream::new(seed, 9));
        let after = (w2_to_dirac(&ens, &[-1.0]), ens.summary(SummaryKind::SecondMoment).unwrap());
        prop_assert_eq!(before.0.to_bits(), after.0.to_bits());
        prop_assert_eq!(before.1, after.1);
    }

    #[test]
    fn exact_sum_does_not_depend_on_order(mut v in prop::collection::vec(-1e12f64..1e12, 0..200), seed in any::<u64>()) {
        let a = exact_sum(v.iter().copied());
        let mut s = RngStream::new(seed, 0);
        for i in (1..v.len()).rev() {
            let j = s.index(i + 1);
            v.swap(i, j);
        }
        prop_assert_eq!(a.to_bits(), exact_sum(v.iter().copied()).to_bits());
    }

    #[test]
    fn enlarged_domain_contains_the_rho_collar(rho in 0.01f64..0.09, s in 0.0f64..1.0) {
        let base = DoubleWell::standard();
        let d = DoubleWell::domain();
        let big = d.enlarge(rho, &base).unwrap();
        // every point within rho of the closed interval, collar included
        let x = -2.0 - 0.999 * rho + s * (1.9 + 2.0 * 0.999 * rho);
        prop_assert!(big.contains(&[x]), "{x} not in the enlargement by {rho}");
        let ball = Domain::ball(vec![-1.0, 0.0], 0.9, vec![-1.0, 0.0]).unwrap();
        let bigger = ball.enlarge(rho, &MaierStein { beta: 1.0 }).unwrap();
        let bp = ball.boundary_point_at(s).unwrap();
        prop_assert!(bigger.distance_to_boundary(&bp.point) >= rho - 1e-12);
    }

    #[test]
    fn ball_hit_never_follows_exit(seed in any::<u64>(), rho in 0.05f64..0.4) {
        let f = DoubleWell::standard();
        let dom = DoubleWell::domain();
        let cfg = IntegratorConfig::new(1e-3, 30.0, 1).unwrap();
        let path = simulate_path(&f, &[-0.5], 0.3, &cfg, &mut RngStream::new(seed, 3)).unwrap();
        let exit = first_exit_scan(&path, &dom).unwrap();
        let hit = hitting_time_tau_prime(&path, &dom, rho).unwrap();
        prop_assert!(hit.time <= exit.tau + 1e-12);
        if hit.tag == HitTag::Boundary {
            prop_assert!((hit.time - exit.tau).abs() <= 1e-12);
        }
    }

    #[test]
    fn kramers_intercept_shifts_with_log_tau(shift in -0.2f64..0.2, h in 0.1f64..0.5, c in -0.5f64..0.5) {
        let grid = [0.25, 0.2, 0.15, 0.125, 0.1];
        let make = |dh: f64| -> Vec<KramersPoint> {
            grid.iter().map(|&e| KramersPoint {
                eps: e,
                mean_tau: (2.0 * (h + dh + c * e) / e).exp(),
                ci: Interval { lo: 0.0, hi: 0.0 },
                censored: false,
            }).collect()
        };
        let base = kramers_fit(&make(0.0)).unwrap();
        let moved = kramers_fit(&make(shift)).unwrap();
        prop_assert!((base.h_hat - h).abs() < 1e-9);
        prop_assert!((moved.h_hat - base.h_hat - shift).abs() < 1e-9);
        prop_assert!((moved.slope - base.slope).abs() < 1e-8);
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(n in 1usize..5000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac) as usize;
        let ci = wilson_ci(k, n, 0.95);
        let p = k as f64 / n as f64;
        prop_assert!(ci.lo <= p + 1e-12 && p <= ci.hi + 1e-12);
        prop_assert!(0.0 <= ci.lo && ci.hi <= 1.0);
    }

    #[test]
    fn replicate_streams_are_label_and_index_addressed(seed in any::<u64>(), k in 0u64..1000) {
        let mut a = RngStream::for_replicate(seed, "x:eps=0.1", k);
        let mut b = RngStream::for_replicate(seed, "x:eps=0.1", k);
        let mut c = RngStream::for_replicate(seed, "x:eps=0.1", k + 1);
        let (va, vb, vc) = (a.standard_normal(), b.standard_normal(), c.standard_normal());
        prop_assert_eq!(va.to_bits(), vb.to_bits());
        prop_assert_ne!(va.to_bits(), vc.to_bits());
    }
}
