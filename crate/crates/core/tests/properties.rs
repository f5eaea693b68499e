use mflab_core::dynamics::{flow_stability_bound, master_step, mf_step, FlowState, MasterState, Scheme};
use mflab_core::exact_gibbs::{chain_rule, ConfigDistribution};
use mflab_core::models;
use mflab_core::{relative_entropy, Grid, GridMeasure};
use proptest::prelude::*;

fn weights(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..5.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_rule_holds(raw in weights(64), m in weights(4)) {
        let g = Grid::periodic(4).unwrap();
        let nu = ConfigDistribution::new(&g, 3, &raw).unwrap();
        let m = GridMeasure::normalize(&m, &g).unwrap();
        let (l, r) = chain_rule(&nu, &m).unwrap();
        prop_assert!((l - r).abs() <= 1e-10 * (1.0 + l.abs()));
        prop_assert!(l >= -1e-12);
    }

    #[test]
    fn symmetrization_is_idempotent(raw in weights(125)) {
        let g = Grid::periodic(5).unwrap();
        let s = ConfigDistribution::new(&g, 3, &raw).unwrap().symmetrized();
        prop_assert!(s.is_symmetric(1e-14));
        let twice = s.symmetrized();
        prop_assert!(s.tv_distance(&twice).unwrap() <= 1e-14);
    }

    #[test]
    fn product_entropy_tensorizes(a in weights(6), b in weights(6)) {
        let g = Grid::periodic(6).unwrap();
        let (a, b) = (GridMeasure::normalize(&a, &g).unwrap(), GridMeasure::normalize(&b, &g).unwrap());
        let joint = ConfigDistribution::iid(&a, 3).unwrap();
        let h = joint.relative_entropy_product(&b).unwrap();
        prop_assert!((h - 3.0 * relative_entropy(&a, &b).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn flow_conserves_mass_and_positivity(raw in weights(16), j in 0.1f64..2.5, semi in any::<bool>()) {
        let model = models::xy(16, j).unwrap();
        let m = GridMeasure::normalize(&raw, model.grid()).unwrap();
        let scheme = if semi { Scheme::SemiImplicit } else { Scheme::ExplicitUpwind };
        let dt = 0.5 * flow_stability_bound(&m, &model).unwrap();
        let mut s = FlowState::new(m, dt, scheme).unwrap();
        for _ in 0..20 {
            s = mf_step(&s, &model).unwrap();
        }
        prop_assert!((s.mass() - 1.0).abs() <= 1e-12);
        prop_assert!(s.m.min_weight() > 0.0);
        prop_assert_eq!(s.clip_events, 0);
    }

    #[test]
    fn master_entropy_to_gibbs_decreases(raw in weights(64), j in 0.2f64..2.0) {
        let model = models::xy(4, j).unwrap();
        let joint = ConfigDistribution::new(model.grid(), 3, &raw).unwrap();
        let gibbs = ConfigDistribution::gibbs_measure(&model, 3).unwrap();
        let mut s = MasterState::new(joint, &model, 0.02).unwrap();
        let mut h = s.joint.relative_entropy(&gibbs).unwrap();
        for _ in 0..25 {
            s = master_step(&s).unwrap();
            let next = s.joint.relative_entropy(&gibbs).unwrap();
            prop_assert!(next <= h + 1e-13);
            h = next;
        }
        prop_assert!((s.mass() - 1.0).abs() <= 1e-12);
    }
}
