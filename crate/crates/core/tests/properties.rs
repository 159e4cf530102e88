use ionhop::chain::ModeParams;
use ionhop::dynamics::{
    build_hamiltonian, evolve, evolve_with, excitation_operator, DriveParams, HamiltonianSpec, Propagator, Spectrum,
};
use ionhop::hilbert::{expectation, CMatrix, QuantumState, SpaceSpec};
use ionhop::spam::{spam_matrix, SpamModel};
use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;

const TWO_PI_KHZ: f64 = 2.0 * std::f64::consts::PI * 1e3;

fn pure_state(spec: SpaceSpec, amps: &[(f64, f64)]) -> QuantumState {
    let d = spec.dim();
    let mut psi = DVector::from_fn(d, |i, _| {
        let (re, im) = amps[i % amps.len()];
        Complex64::new(re + 0.01 * i as f64, im)
    });
    psi /= Complex64::new(psi.norm(), 0.0);
    QuantumState::new(spec, &psi * psi.adjoint()).unwrap()
}

fn spec_for(kappa: f64, offset: f64, rabi: f64, kind: u8) -> HamiltonianSpec {
    let mode = ModeParams::from_nearest_neighbour(vec![0.0, offset * TWO_PI_KHZ], &[kappa * TWO_PI_KHZ]).unwrap();
    let drive = match kind {
        0 => DriveParams::off(2),
        1 => DriveParams::red(2, 1, rabi * TWO_PI_KHZ),
        2 => DriveParams::blue(2, 0, rabi * TWO_PI_KHZ),
        _ => DriveParams::carrier(2, 1, rabi * TWO_PI_KHZ),
    };
    HamiltonianSpec { mode, drive, include_hopping: true }
}

fn arb_amps() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energy_trace_and_purity_conserved(
        kappa in 0.5..5.0f64, offset in -15.0..15.0f64, rabi in 5.0..60.0f64, kind in 0u8..4,
        t in 0.0..1e-3f64, amps in arb_amps(),
    ) {
        let spec = SpaceSpec::new(2, 2).unwrap();
        let h = build_hamiltonian(spec, &spec_for(kappa, offset, rabi, kind)).unwrap();
        let s0 = pure_state(spec, &amps);
        let s1 = evolve(&s0, &h, t).unwrap();
        let e0 = expectation(&s0, &h).unwrap();
        let e1 = expectation(&s1, &h).unwrap();
        let scale = h.max_abs();
        prop_assert!((e1 - e0).abs() < 1e-9 * scale);
        prop_assert!((s1.trace() - 1.0).abs() < 1e-10);
        prop_assert!((s1.purity() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn propagators_compose(
        kappa in 0.5..5.0f64, offset in -15.0..15.0f64, rabi in 5.0..60.0f64, kind in 0u8..4,
        t1 in 0.0..5e-4f64, t2 in 0.0..5e-4f64,
    ) {
        let spec = SpaceSpec::new(2, 2).unwrap();
        let s = Spectrum::new(&build_hamiltonian(spec, &spec_for(kappa, offset, rabi, kind)).unwrap()).unwrap();
        let both = s.propagator(t1 + t2).to_dense();
        let split = Propagator::compose(spec.dim(), &[s.propagator(t1), s.propagator(t2)]).unwrap();
        prop_assert!((split.to_dense() - both).iter().all(|z| z.norm() < 1e-10));
        prop_assert!(split.unitarity_error() < 1e-10);
    }

    #[test]
    fn red_sideband_and_hopping_conserve_excitations(
        kappa in 0.5..5.0f64, offset in -15.0..15.0f64, rabi in 5.0..60.0f64, red in any::<bool>(),
        t in 0.0..1e-3f64, amps in arb_amps(),
    ) {
        let spec = SpaceSpec::new(2, 2).unwrap();
        let h = build_hamiltonian(spec, &spec_for(kappa, offset, rabi, if red { 1 } else { 0 })).unwrap();
        let n = excitation_operator(spec);
        let s0 = pure_state(spec, &amps);
        let u = Spectrum::new(&h).unwrap().propagator(t);
        let s1 = evolve_with(&s0, &u).unwrap();
        prop_assert!((expectation(&s1, &n).unwrap() - expectation(&s0, &n).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn spam_matrix_is_column_stochastic(
        eps_g in 0.0..0.5f64, eps_e in 0.0..0.5f64, eps_e_prime in 0.0..0.5f64, p in 0.0..1.0f64,
    ) {
        let m = spam_matrix(&SpamModel { eps_g, eps_e, eps_e_prime, nbar: vec![0.0] });
        prop_assert!(m.stochasticity_error() < 1e-15);
        let (g, e) = m.apply(1.0 - p, p);
        prop_assert!((g + e - 1.0).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn hopping_matrix_is_symmetric_with_cubic_tail(k12 in 0.1..10.0f64, k23 in 0.1..10.0f64) {
        let m = ModeParams::from_nearest_neighbour(vec![0.0; 3], &[k12, k23]).unwrap();
        let k: &nalgebra::DMatrix<f64> = &m.kappa;
        prop_assert!((k - k.transpose()).amax() == 0.0);
        prop_assert!(k[(0, 0)] == 0.0 && k[(1, 1)] == 0.0);
        prop_assert!(k[(0, 2)] > 0.0);
    }
}

#[test]
fn carrier_breaks_excitation_conservation() {
    let spec = SpaceSpec::new(2, 2).unwrap();
    let h = build_hamiltonian(spec, &spec_for(2.9, 11.58, 500.0, 3)).unwrap();
    let n = excitation_operator(spec);
    let s0 = QuantumState::basis(spec, 0).unwrap();
    let s1 = evolve(&s0, &h, 0.5e-6).unwrap();
    assert!((expectation(&s1, &n).unwrap() - expectation(&s0, &n).unwrap()).abs() > 0.1);
}

#[test]
fn dense_conjugation_matches_state_evolution() {
    let spec = SpaceSpec::new(2, 1).unwrap();
    let h = build_hamiltonian(spec, &spec_for(3.0, 5.0, 20.0, 1)).unwrap();
    let s0 = pure_state(spec, &[(0.3, -0.2), (0.5, 0.1)]);
    let u: CMatrix = Spectrum::new(&h).unwrap().propagator(2e-4).to_dense();
    let manual = &u * &s0.rho * u.adjoint();
    let s1 = evolve(&s0, &h, 2e-4).unwrap();
    assert!((manual - s1.rho).iter().all(|z| z.norm() < 1e-12));
}
