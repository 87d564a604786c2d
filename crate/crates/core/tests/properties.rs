use lattice_chaos::analytic::{d_blended, d_chaotic, d_regular};
use lattice_chaos::chaos::ChaosStats;
use lattice_chaos::config::{emit_config, parse_config, RunConfig};
use lattice_chaos::dynamics::{deriv, AtomState};
use lattice_chaos::emission::{apply_jump, RecoilLaw};
use lattice_chaos::ensemble::{PositionLaw, SweepFlag};
use lattice_chaos::output::{parse_sweep_table, sweep_table_csv, SweepTableRow};
use lattice_chaos::SimParams;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = SimParams> {
    (0.0..0.1f64, 1e-6..1e-3f64, -0.1..0.1f64).prop_map(|(g, w, d)| SimParams::new(g, w, d))
}

fn bloch() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0..std::f64::consts::PI, 0.0..std::f64::consts::TAU, 0.0..=1.0f64).prop_map(|(th, ph, r)| {
        (r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos())
    })
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => any::<f64>().prop_filter("finite", |x| x.is_finite()),
        1 => Just(f64::NAN),
        1 => Just(f64::INFINITY),
        1 => Just(f64::NEG_INFINITY),
    ]
}

fn flag() -> impl Strategy<Value = SweepFlag> {
    prop_oneof![
        Just(SweepFlag::Unreliable),
        Just(SweepFlag::NonBallistic),
        Just(SweepFlag::NoEstimate),
        Just(SweepFlag::ChaosFailed),
        Just(SweepFlag::RamanNathViolated),
        Just(SweepFlag::StrongDetuning),
    ]
}

fn row() -> impl Strategy<Value = SweepTableRow> {
    (prop::array::uniform7(number()), prop::collection::vec(flag(), 0..3)).prop_map(|(v, flags)| SweepTableRow {
        p: v[0],
        lambda: v[1],
        d_measured: v[2],
        d_stderr: v[3],
        d_ch: v[4],
        d_reg: v[5],
        d_blend: v[6],
        flags,
    })
}

fn same_bits(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits()
}

proptest! {
    #[test]
    fn bloch_flow_is_tangent_to_the_sphere(
        x in -1e3..1e3f64,
        p in -1e4..1e4f64,
        (u, v, z) in bloch(),
        params in params(),
    ) {
        let s = AtomState::new(x, p, u, v, z);
        let d = deriv(&s, &params).unwrap();
        prop_assert!(d.bloch_tangency(&s).abs() < 1e-15, "{}", d.bloch_tangency(&s));
    }

    #[test]
    fn jumps_land_on_the_ground_state(
        x in -1e3..1e3f64,
        p in 1.0..1e4f64,
        (u, v, z) in bloch(),
        p_j in -1.0..=1.0f64,
    ) {
        let s = apply_jump(&AtomState::new(x, p, u, v, z), p_j);
        prop_assert_eq!(s.bloch_norm_sq(), 1.0);
        prop_assert_eq!((s.x, s.p), (x, p + p_j));
    }

    #[test]
    fn blended_law_is_affine_in_lambda(
        params in params().prop_filter("γ > 0", |p| p.gamma > 1e-4),
        p in 100.0..1e5f64,
        a in 0.0..=1.0f64,
        b in 0.0..=1.0f64,
        t in 0.0..=1.0f64,
    ) {
        let f = |l: f64| d_blended(&params, p, l).unwrap();
        let mixed = f(t * a + (1.0 - t) * b);
        let combo = t * f(a) + (1.0 - t) * f(b);
        prop_assert!((mixed - combo).abs() <= 1e-12 * mixed.abs());
        prop_assert!((f(0.0) - d_regular(&params, p)).abs() <= 1e-14 * f(0.0));
        prop_assert!((f(1.0) - d_chaotic(&params, p)).abs() <= 1e-14 * f(1.0));
    }

    #[test]
    fn chaos_probability_falls_with_threshold(
        lambdas in prop::collection::vec(prop::option::weighted(0.9, -1e-3..1e-2f64), 1..64),
        lo in 0.0..5e-3f64,
        step in 0.0..5e-3f64,
    ) {
        let a = ChaosStats::from_exponents(&lambdas, lo);
        let b = ChaosStats::from_exponents(&lambdas, lo + step);
        if a.n_chaotic + a.n_regular > 0 {
            prop_assert!(b.probability <= a.probability);
        }
        prop_assert_eq!(a.n_chaotic + a.n_regular, b.n_chaotic + b.n_regular);
    }

    #[test]
    fn sweep_csv_round_trips(rows in prop::collection::vec(row(), 0..8)) {
        let parsed = parse_sweep_table(&sweep_table_csv(&rows, 17)).unwrap();
        prop_assert_eq!(parsed.len(), rows.len());
        for (a, b) in rows.iter().zip(&parsed) {
            let (x, y) = (
                [a.p, a.lambda, a.d_measured, a.d_stderr, a.d_ch, a.d_reg, a.d_blend],
                [b.p, b.lambda, b.d_measured, b.d_stderr, b.d_ch, b.d_reg, b.d_blend],
            );
            for k in 0..7 {
                prop_assert!(same_bits(x[k], y[k]), "{} vs {}", x[k], y[k]);
            }
            prop_assert_eq!(&a.flags, &b.flags);
        }
    }

    #[test]
    fn config_round_trips(
        params in params(),
        n_traj in 2usize..1000,
        p0 in 100.0..1e4f64,
        sigma in prop::option::of(0.0..10.0f64),
        seed in any::<u64>(),
        zero_recoil in any::<bool>(),
        chaos_n in 1usize..64,
        bins in 8usize..40,
        explicit_grid in any::<bool>(),
        digits in 9usize..=17,
    ) {
        let mut c = RunConfig::with_params(params);
        c.ensemble.n_traj = n_traj;
        c.ensemble.p0_mean = p0;
        c.ensemble.seed = seed;
        if let Some(s) = sigma {
            c.ensemble.x0 = PositionLaw::Gaussian { sigma: s };
        }
        if zero_recoil {
            c.ensemble.recoil = RecoilLaw::Zero;
        }
        c.chaos.n_traj = chaos_n;
        c.sweep.bins = bins;
        if explicit_grid {
            c.sweep.grid = Some((0..bins).map(|i| p0 * (1.0 + i as f64 / 7.0)).collect());
        }
        c.output.digits = digits;
        prop_assume!(c.validate().is_ok());
        let back = parse_config(&emit_config(&c)).unwrap();
        prop_assert_eq!(back, c);
    }
}
