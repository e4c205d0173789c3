use proptest::prelude::*;

use udabound::bounds::{evaluate, grid_search, BoundInputs, BoundKind, ParamGrid};
use udabound::risk::{Estimate, RiskEstimates};

fn est(v: f64) -> Estimate {
    Estimate { value: v, mc_std: 0.0 }
}

prop_compose! {
    fn inputs()(
        m in 10usize..100_000,
        n in 10usize..100_000,
        kl in 0.0f64..500.0,
        delta in 0.001f64..0.5,
        r in prop::array::uniform5(0.0f64..1.0),
        beta in 1.0f64..20.0,
        mmd in 0.0f64..1.0,
    ) -> BoundInputs {
        let estimates = RiskEstimates {
            gibbs_risk: est(r[0]),
            gibbs_weighted_risk: Some(est(r[1] * beta)),
            disagreement_source: est(r[2]),
            disagreement_target: est(r[3]),
            joint_error_source: est(r[4]),
        };
        BoundInputs {
            beta_inf: Some(beta),
            mmd_value: Some(mmd),
            lambda_rho: Some(r[0] * r[4]),
            ..BoundInputs::new(m, n, kl, delta, estimates)
        }
    }
}

fn params(kind: BoundKind) -> Vec<f64> {
    match kind {
        BoundKind::Mult | BoundKind::Add => vec![0.7, 1.3],
        _ => vec![0.4],
    }
}

proptest! {
    #[test]
    fn terms_sum_to_value(i in inputs()) {
        for kind in BoundKind::ALL {
            let e = evaluate(kind, &i, &params(kind)).unwrap();
            let sum: f64 = e.terms.iter().map(|t| t.value).sum();
            prop_assert_eq!(sum, e.value);
            prop_assert!(e.value.is_finite() && e.value >= 0.0);
        }
    }

    #[test]
    fn smaller_delta_never_tightens(i in inputs(), shrink in 0.01f64..0.99) {
        let tighter = BoundInputs { delta: i.delta * shrink, ..i.clone() };
        for kind in BoundKind::ALL {
            let p = params(kind);
            prop_assert!(evaluate(kind, &tighter, &p).unwrap().value >= evaluate(kind, &i, &p).unwrap().value);
        }
    }

    #[test]
    fn more_kl_never_tightens(i in inputs(), extra in 0.0f64..100.0) {
        let looser = BoundInputs { kl: i.kl + extra, ..i.clone() };
        for kind in BoundKind::ALL {
            let p = params(kind);
            prop_assert!(evaluate(kind, &looser, &p).unwrap().value >= evaluate(kind, &i, &p).unwrap().value);
        }
    }

    #[test]
    fn complexity_term_scales_as_one_over_m(i in inputs()) {
        let double = BoundInputs { m_source: 2 * i.m_source, ..i.clone() };
        for kind in [BoundKind::Mcallester, BoundKind::Iw] {
            let a = evaluate(kind, &i, &[0.4]).unwrap();
            let b = evaluate(kind, &double, &[0.4]).unwrap();
            let (ka, kb) = (a.terms[1].value, b.terms[1].value);
            prop_assert!((ka - 2.0 * kb).abs() <= 1e-12 * ka.max(1e-300));
            prop_assert_eq!(a.terms[0].value, b.terms[0].value);
        }
    }

    #[test]
    fn grid_minimum_below_every_point(i in inputs(), g in prop::collection::vec(0.01f64..0.99, 1..6)) {
        let grid = ParamGrid::new(vec![("gamma".into(), g)]).unwrap();
        let best = grid_search(BoundKind::Mcallester, &i, &grid).unwrap();
        let corrected = BoundInputs { delta: i.delta / grid.size() as f64, ..i.clone() };
        for p in grid.points() {
            prop_assert!(best.value <= evaluate(BoundKind::Mcallester, &corrected, &p).unwrap().value);
        }
        prop_assert_eq!(best.delta_effective, i.delta / grid.size() as f64);
    }

    #[test]
    fn unit_weights_reduce_iw_to_mcallester(i in inputs(), gamma in 0.01f64..0.99) {
        let mut unit = i.clone();
        unit.beta_inf = Some(1.0);
        unit.estimates.gibbs_weighted_risk = Some(unit.estimates.gibbs_risk);
        let a = evaluate(BoundKind::Iw, &unit, &[gamma]).unwrap().value;
        let b = evaluate(BoundKind::Mcallester, &unit, &[gamma]).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * b);
    }
}

#[test]
fn add_refuses_without_oracle() {
    let i = BoundInputs::new(100, 100, 1.0, 0.05, RiskEstimates::default());
    assert!(evaluate(BoundKind::Add, &i, &[1.0, 1.0]).is_err());
    assert!(evaluate(BoundKind::Iw, &i, &[0.5]).is_err());
}
