use memxfer::analysis::spectral_radius;
use memxfer::hamiltonian::{random_chain, ChainSpec, Model};
use memxfer::linalg::{op_norm, unitarity_defect};
use memxfer::propagator::{build_t, SectorDynamics};
use memxfer::protocol::{
    recovery_metrics, simulate, survival_curve, transfer_map, AliceState, ProtocolSchedule,
};
use memxfer::sector_basis::SiteLayout;
use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn layouts() -> impl Strategy<Value = SiteLayout> {
    (1usize..=2, 0usize..=3, 1usize..=2).prop_map(|(a, c, b)| SiteLayout::new(a, c, b).unwrap())
}

fn chains() -> impl Strategy<Value = ChainSpec> {
    (layouts(), prop::bool::ANY, any::<u64>()).prop_map(|(l, heis, seed)| {
        let model = if heis { Model::Heisenberg } else { Model::Xy };
        random_chain(l, model, (0.5, 1.5), seed).unwrap()
    })
}

fn inputs(n_a: usize) -> impl Strategy<Value = AliceState> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1 << n_a)
        .prop_filter("nonzero", |v| {
            v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3)
        })
        .prop_map(move |v| {
            let norm = v.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
            let amps =
                DVector::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b) / norm));
            AliceState::new(n_a, amps).unwrap()
        })
}

fn chain_and_input() -> impl Strategy<Value = (ChainSpec, AliceState)> {
    chains().prop_flat_map(|spec| {
        let n_a = spec.layout.n_a;
        (Just(spec), inputs(n_a))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn propagators_are_unitary_and_contractions_contract(spec in chains(), tau in 0.05f64..8.0) {
        for n in 0..=spec.sites() {
            let u = SectorDynamics::new(&spec, n).unwrap().evolve(tau).unwrap();
            prop_assert!(unitarity_defect(&u.matrix) < 1e-10);
            if n > 0 && n <= spec.layout.n_a + spec.layout.n_c {
                let t = build_t(&u, &spec.layout).unwrap();
                let norm = op_norm(&t.matrix);
                prop_assert!(norm <= 1.0 + 1e-12);
                let rho = spectral_radius(&t.matrix).unwrap().value;
                prop_assert!(rho <= norm + 1e-10);
            }
        }
    }

    #[test]
    fn success_is_monotone_and_norm_is_kept(
        (spec, input) in chain_and_input(),
        taus in prop::collection::vec(0.1f64..4.0, 1..6),
    ) {
        let schedule = ProtocolSchedule::new(taus).unwrap();
        let sim = simulate(&spec, &schedule, &input).unwrap();
        prop_assert!((sim.state.norm_sqr() - 1.0).abs() < 1e-10);
        let mut prev = 0.0;
        for s in &sim.record.steps {
            prop_assert!(s.success_prob >= prev - 1e-10);
            prop_assert!(s.success_prob <= 1.0 + 1e-10);
            prop_assert!(s.fidelity_bound <= s.success_prob + 1e-10);
            for w in s.occupation.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            prev = s.success_prob;
        }
    }

    #[test]
    fn transfer_map_is_a_contraction(spec in chains(), taus in prop::collection::vec(0.1f64..4.0, 1..5)) {
        let schedule = ProtocolSchedule::new(taus).unwrap();
        let k = transfer_map(&spec, &schedule).unwrap();
        for c in k.column_norms_sqr() {
            prop_assert!(c <= 1.0 + 1e-10);
        }
        let m = recovery_metrics(&k);
        prop_assert!(m.singular_values[0] <= 1.0 + 1e-10);
        prop_assert!(m.worst_case_fidelity_bound >= 0.0);
        for w in m.singular_values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn full_occupation_equals_power_norm_bound(spec in chains(), tau in 0.1f64..4.0, steps in 1usize..6) {
        // With every Alice site excited, keeping all of them is exactly ‖T^j ψ‖².
        let n_a = spec.layout.n_a;
        let schedule = ProtocolSchedule::uniform(tau, steps).unwrap();
        let sim = simulate(&spec, &schedule, &AliceState::all_up(n_a).unwrap()).unwrap();
        let q = survival_curve(&spec, tau, n_a, steps).unwrap();
        for s in &sim.record.steps {
            prop_assert!(s.occupation[n_a - 1] <= q[s.step] + 1e-10);
        }
        for w in q.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn runs_are_deterministic((spec, input) in chain_and_input(), tau in 0.1f64..3.0) {
        let schedule = ProtocolSchedule::uniform(tau, 3).unwrap();
        let a = simulate(&spec, &schedule, &input).unwrap();
        let b = simulate(&spec, &schedule, &input).unwrap();
        prop_assert_eq!(a.record, b.record);
    }
}
