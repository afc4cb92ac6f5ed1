use cmz::curves::{push_forward, z_function, CurveMesh, Doubling, PushOptions, StandardFamily};
use cmz::dynamics::billiard::BilliardTable;
use cmz::dynamics::falling_balls::FallingBalls;
use cmz::dynamics::tables::{flat_point_table, flowers_table, FlatPointSpec, FlowerSpec};
use cmz::estat::{correlation, predicted_correlation, zeta, TailSource};
use cmz::rv::{self, estimate_index, ratio_limit_check, Modifier, RegVar, TailSumOptions};
use cmz::tower::{exact_tails, simulate_tower, Cell, CmzModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn modifier() -> impl Strategy<Value = (Modifier, f64)> {
    prop_oneof![
        Just((Modifier::PurePower, 1.0)),
        (-2.0..2.0f64).prop_map(|beta| (Modifier::LogPower { beta }, 3.0)),
        (0.1..0.9f64).prop_map(|gamma| (Modifier::ExpLogPower { gamma }, 1.0)),
    ]
}

fn cells(max_sigma: u32, max_r: u64) -> impl Strategy<Value = Vec<Cell>> {
    prop::collection::vec(
        (0.01..1.0f64, 1..=max_sigma).prop_flat_map(move |(mass, sigma)| {
            prop::collection::vec(1..=max_r, sigma as usize).prop_map(move |returns| Cell { mass, sigma, returns })
        }),
        1..12,
    )
    .prop_map(|cs| {
        let total: f64 = cs.iter().map(|c| c.mass).sum();
        cs.into_iter().map(|c| Cell { mass: c.mass / total, ..c }).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pure_power_index_is_exact(alpha in 1.01..8.0f64, lo in 1.0..1e3f64, span in 10.0..1e4f64) {
        let r = RegVar::pure_power(alpha);
        let xs: Vec<f64> = (0..50).map(|i| lo * span.powf(i as f64 / 49.0)).collect();
        let samples: Vec<(f64, f64)> = xs.iter().map(|&x| (x, r.evaluate(x).unwrap())).collect();
        let est = estimate_index(&samples, (lo, lo * span)).unwrap();
        prop_assert!((est.alpha - alpha).abs() < 1e-9, "{} vs {}", est.alpha, alpha);
    }

    #[test]
    fn tail_sum_is_sandwiched(alpha in 1.2..6.0f64, (m, cutoff) in modifier(), n in 1u64..5000) {
        let r = RegVar::new(alpha, m, 1.0, cutoff).unwrap();
        let n = n.max(cutoff.ceil() as u64);
        prop_assume!(r.is_non_increasing_from(n as f64));
        let ts = rv::tail_sum_and_integral(&r, n, TailSumOptions::default()).unwrap();
        let rn = r.evaluate(n as f64).unwrap();
        prop_assert!(ts.integral <= ts.sum, "integral {} > sum {}", ts.integral, ts.sum);
        prop_assert!(ts.sum <= ts.integral + rn, "sum {} > integral + r(n) {}", ts.sum, ts.integral + rn);
    }

    #[test]
    fn reciprocal_ratios_multiply_to_one(alpha in 0.5..5.0f64, (m, cutoff) in modifier(), lambda in 1.1..10.0f64) {
        let r = RegVar::new(alpha, m, 1.0, cutoff).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| 10.0 * lambda * 2f64.powi(i)).collect();
        let up = ratio_limit_check(&r, lambda, &xs, 1e-3).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x * lambda).collect();
        let down = ratio_limit_check(&r, 1.0 / lambda, &shifted, 1e-3).unwrap();
        for (a, b) in up.ratios.iter().zip(&down.ratios) {
            prop_assert!((a.1 * b.1 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sigma_one_gives_identical_a_and_h(returns in prop::collection::vec((0.01..1.0f64, 1u64..500), 1..40)) {
        let total: f64 = returns.iter().map(|(m, _)| m).sum();
        let cells = returns.iter().map(|&(m, r)| Cell { mass: m / total, sigma: 1, returns: vec![r] }).collect();
        let model = CmzModel::from_cells(cells, 0.5, false).unwrap();
        let t = exact_tails(&model, 600);
        prop_assert_eq!(t.a.entries.len(), t.h.entries.len());
        for (a, h) in t.a.entries.iter().zip(&t.h.entries) {
            prop_assert_eq!(a.survival.to_bits(), h.survival.to_bits());
        }
    }

    #[test]
    fn exact_tails_are_monotone_and_mean_is_h_bar(cs in cells(4, 30)) {
        let model = CmzModel::from_cells(cs, 0.5, false).unwrap();
        let t = exact_tails(&model, model.max_height() + 2);
        for curve in [&t.a, &t.h, &t.d] {
            prop_assert!(curve.entries[0].survival <= 1.0);
            for w in curve.entries.windows(2) {
                prop_assert!(w[1].survival <= w[0].survival);
            }
        }
        // Σ_n (A_{n-1} - A_n) n = Σ_{n>=0} A_n for a tail that reaches zero.
        let mean: f64 = t.a.entries.iter().map(|e| e.survival).sum();
        prop_assert!((mean - model.h_bar()).abs() < 1e-9 * model.h_bar(), "{} vs {}", mean, model.h_bar());
    }

    #[test]
    fn cells_are_at_least_as_tall_as_their_levels(cs in cells(6, 20)) {
        let model = CmzModel::from_cells(cs, 0.5, false).unwrap();
        for c in model.cells() {
            prop_assert!(c.height() >= u64::from(c.sigma));
        }
    }

    #[test]
    fn constant_shift_and_scale_pass_through_correlation(
        xs in prop::collection::vec(-1.0..1.0f64, 400..800),
        a in 0.1..5.0f64,
        b in -3.0..3.0f64,
    ) {
        let g: Vec<f64> = xs.iter().rev().copied().collect();
        let af: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let lags = [0, 1, 3, 7];
        let base = correlation(&xs, &g, &lags, None).unwrap();
        let scaled = correlation(&af, &g, &lags, None).unwrap();
        for (u, v) in base.estimates.iter().zip(&scaled.estimates) {
            prop_assert!((a * u - v).abs() <= 1e-9 * (1.0 + v.abs()), "{} vs {}", a * u, v);
        }
    }

    #[test]
    fn prediction_is_linear_and_matches_tail_sum(alpha in 1.2..5.0f64, h_bar in 1.0..10.0f64, mf in -2.0..2.0f64, mg in 0.1..2.0f64, n in 1u64..1000) {
        let r = RegVar::pure_power(alpha);
        let p = predicted_correlation(TailSource::Proxy(&r), h_bar, mf, mg, n).unwrap();
        let p2 = predicted_correlation(TailSource::Proxy(&r), h_bar, 2.0 * mf, mg, n).unwrap();
        prop_assert!((p2 - 2.0 * p).abs() <= 1e-12 * p.abs().max(1e-300));
        let ts = rv::tail_sum_and_integral(&r, n, TailSumOptions::default()).unwrap();
        prop_assert!((p - h_bar * (mf * mg).abs() * ts.sum).abs() <= 1e-9 * p.abs().max(1e-300));
    }

    #[test]
    fn zeta_is_dominated(a in 1.0001..6.0f64, n in 3u64..100_000) {
        let z = zeta(a, n).unwrap();
        let x = n as f64;
        prop_assert!(z <= x.powf(1.0 - a));
        // The lower branch n^(-2(a-1)) exceeds 1/n when a < 3/2.
        if a >= 1.5 {
            prop_assert!(z <= 1.0 / x);
        }
    }

    #[test]
    fn single_curve_z_is_two_over_length(len in 1e-4..50.0f64, points in 16usize..400) {
        let mesh = CurveMesh::uniform([0.0, 1.0], [len, 1.0], points).unwrap();
        let z = z_function(&StandardFamily::single(mesh, "c"), None).z;
        prop_assert!((z * len / 2.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn splitting_never_lowers_z(len in 0.1..2.0f64, cut in 0.1..0.9f64) {
        let n = 1024;
        let whole = CurveMesh::uniform([0.0, 0.0], [len, 0.0], n + 1).unwrap();
        let k = (cut * n as f64).round() as usize;
        let p = len * k as f64 / n as f64;
        let left = CurveMesh::uniform([0.0, 0.0], [p, 0.0], k + 1).unwrap();
        let right = CurveMesh::uniform([p, 0.0], [len, 0.0], n - k + 1).unwrap();
        let orig = StandardFamily::single(whole, "whole");
        let split = StandardFamily::new(vec![(left, p), (right, len - p)], "split").unwrap();
        let grid = cmz::curves::default_eps_grid(&orig);
        let z0 = z_function(&orig, Some(&grid)).z;
        let z1 = z_function(&split, Some(&grid)).z;
        prop_assert!(z1 >= z0 * (1.0 - 1e-12));
        // Below the smaller half-fragment both families see the same mass per ε.
        let small: Vec<f64> = grid.iter().copied().filter(|e| *e < 0.5 * p.min(len - p)).collect();
        if !small.is_empty() {
            let a = z_function(&orig, Some(&small)).z;
            let b = z_function(&split, Some(&small)).z;
            prop_assert!((b - 2.0 * a).abs() <= 1e-9 * b, "split {} vs 2 x whole {}", b, a);
        }
    }

    #[test]
    fn push_forward_conserves_mass(x0 in 0.0..0.9f64, len in 0.01..1.0f64, w in 0.1..1.0f64) {
        let b = (x0 + len).min(1.2);
        let c1 = CurveMesh::uniform([x0, 0.0], [b, 0.0], 65).unwrap();
        let c2 = CurveMesh::uniform([0.1, 0.5], [0.3, 0.5], 33).unwrap();
        let fam = StandardFamily::new(vec![(c1, w), (c2, 1.0 - w + 0.01)], "mixed").unwrap();
        let out = push_forward(&fam, &Doubling, &PushOptions::default()).unwrap();
        prop_assert!((out.kept + out.leakage - 1.0).abs() < 1e-12, "kept {} leak {}", out.kept, out.leakage);
        let weights: f64 = out.family.curves.iter().map(|(_, w)| w).sum();
        prop_assert!((weights - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flower_validation_ignores_rigid_motion(
        n in 3usize..8,
        petal in 0.05..0.8f64,
        span in 1.0..3.6f64,
        disp in 0.3..2.0f64,
        angle in -3.2..3.2f64,
        dx in -5.0..5.0f64,
        dy in -5.0..5.0f64,
    ) {
        let spec = FlowerSpec::tangent(n, petal, span, disp);
        let moved = spec.moved(angle, [dx, dy]);
        prop_assert_eq!(flowers_table(&spec).is_ok(), flowers_table(&moved).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn billiard_orbits_are_reversible(seed in 0u64..10_000, table in 0usize..3, k in 1usize..=100) {
        // Rounding grows by the expansion rate per collision, so chaotic
        // tables are checked inside their Lyapunov horizon only.
        let (table, k) = match table {
            0 => (BilliardTable::circle(1.0), k),
            1 => (flowers_table(&FlowerSpec::default()).unwrap(), k.min(8)),
            _ => (flat_point_table(&FlatPointSpec::default()).unwrap(), k.min(16)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = table.sample_liouville(&mut rng);
        let mut s = start;
        let mut path = vec![s];
        for _ in 0..k {
            match table.step(&s) {
                Ok(n) => s = n,
                Err(_) => return Ok(()),
            }
            path.push(s);
        }
        // Near-tangent collisions amplify rounding beyond any fixed tolerance.
        prop_assume!(path.iter().all(|c| c.phi.abs() < 1.4));
        let mut back = s.reversed(&table);
        for _ in 0..k {
            back = table.step(&back).unwrap();
        }
        let dp = ((back.pos[0] - start.pos[0]).powi(2) + (back.pos[1] - start.pos[1]).powi(2)).sqrt();
        prop_assert!(dp < 1e-6, "position error {}", dp);
        prop_assert!((back.phi + start.phi).abs() < 1e-6, "angle error {}", (back.phi + start.phi).abs());
    }

    #[test]
    fn falling_balls_conserve_energy(seed in 0u64..10_000, m1 in 1.05..4.0f64, energy in 0.5..3.0f64) {
        let sys = FallingBalls::new(m1, 1.0, 1.0, energy).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = sys.fiducial(&mut rng);
        let e0 = sys.energy_of(&s);
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            if sys.step(&mut s).is_err() {
                break;
            }
            worst = worst.max(((sys.energy_of(&s) - e0) / e0).abs());
        }
        // 1e-9 per 1e6 events, so 1e-10 for this run length.
        prop_assert!(worst < 1e-10, "drift {}", worst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_agrees_with_exact_tails(cs in cells(3, 12), seed in 0u64..1000) {
        let model = CmzModel::from_cells(cs, 0.5, false).unwrap();
        let sim = simulate_tower(&model, 400_000, seed);
        let exact = exact_tails(&model, model.max_height() + 1);
        for (s, e) in [(&sim.a, &exact.a), (&sim.h, &exact.h), (&sim.d, &exact.d)] {
            for (x, y) in s.entries.iter().zip(&e.entries) {
                let se = x.stderr.unwrap_or(0.0).max(1e-4);
                prop_assert!((x.survival - y.survival).abs() <= 4.0 * se + 1e-3,
                    "{:?} n={} sim {} exact {}", s.kind, x.n, x.survival, y.survival);
            }
        }
    }
}
