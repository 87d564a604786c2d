use lattice_chaos::dynamics::{energy, integrate_observed, AtomState, Integrator, NoObserver, Observer};
use lattice_chaos::emission::{propagate_with_jumps, JumpEvent, JumpPropagation, RngStream};
use lattice_chaos::SimParams;

fn integrate(state: AtomState, params: &SimParams, h: f64, duration: f64) -> AtomState {
    integrate_observed(state, params, &Integrator::new(h).unwrap(), duration, duration, &mut NoObserver)
        .unwrap()
        .final_state
}

#[test]
fn hamiltonian_drift_over_ten_thousand() {
    for (delta, p) in [(-0.01, 1000.0), (-0.0005, 3000.0), (0.0, 800.0)] {
        let params = SimParams::new(0.0, 1e-5, delta);
        let s0 = AtomState::new(0.37, p, 0.2, -0.4, -0.6);
        let h0 = energy(&s0, &params);
        let s1 = integrate(s0, &params, 1e-2, 1e4);
        let drift = (energy(&s1, &params) - h0).abs() / h0.abs();
        assert!(drift < 1e-6, "delta={delta} p={p} drift={drift:e}");
    }
}

#[test]
fn hamiltonian_drift_in_slow_trapped_motion() {
    let params = SimParams::new(0.0, 1e-5, -0.01);
    let s0 = AtomState::ground(0.3, 50.0);
    let h0 = energy(&s0, &params);
    let s1 = integrate(s0, &params, 1e-2, 1e4);
    assert!((energy(&s1, &params) - h0).abs() / h0.abs() < 1e-6);
}

#[test]
fn bloch_norm_without_jumps() {
    for gamma in [0.0, 3.3e-3, 0.05] {
        let params = SimParams::new(gamma, 1e-5, -0.01);
        let s0 = AtomState::new(1.1, 1200.0, 0.6, 0.0, -0.8);
        let s1 = integrate(s0, &params, 1e-2, 1e3);
        let drift = (s1.bloch_norm_sq() - s0.bloch_norm_sq()).abs();
        assert!(drift < 1e-8, "gamma={gamma} drift={drift:e}");
    }
}

struct NormWatch {
    worst: f64,
}

impl Observer for NormWatch {
    fn on_step(&mut self, _prev: &AtomState, next: &AtomState) {
        self.worst = self.worst.max((next.bloch_norm_sq() - 1.0).abs());
    }

    fn on_jump(&mut self, pre: &AtomState, _event: &JumpEvent) {
        self.worst = self.worst.max((pre.bloch_norm_sq() - 1.0).abs());
    }
}

#[test]
fn bloch_norm_with_jumps() {
    let params = SimParams::cesium(-0.01);
    let mut rng = RngStream::new(11, 0);
    let mut watch = NormWatch { worst: 0.0 };
    let t = propagate_with_jumps(
        AtomState::ground(0.4, 1000.0),
        &params,
        &Integrator::default(),
        &JumpPropagation::new(1e4, 100.0),
        &mut rng,
        &mut watch,
    )
    .unwrap();
    assert!(t.jumps.len() > 5);
    // the norm restarts at 1 after every jump, so any τ = 10³ stretch is covered
    assert!(watch.worst < 1e-8, "{:e}", watch.worst);
}

#[test]
fn fourth_order_convergence() {
    let params = SimParams::new(0.0, 1e-3, -0.3);
    let s0 = AtomState::new(0.2, 40.0, 0.1, 0.5, -0.7);
    let duration = 40.0;
    let reference = integrate(s0, &params, 1e-3, duration);
    let err = |h: f64| {
        let s = integrate(s0, &params, h, duration);
        [(s.x - reference.x), (s.p - reference.p), (s.u - reference.u), (s.v - reference.v), (s.z - reference.z)]
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    };
    let (e1, e2, e3) = (err(0.2), err(0.1), err(0.05));
    for ratio in [e1 / e2, e2 / e3] {
        assert!((11.0..22.0).contains(&ratio), "ratios {} {}", e1 / e2, e2 / e3);
    }
}
