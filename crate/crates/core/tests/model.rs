mod common;

use misadapt::bnm::{b_minimax_estimate, Bound};
use misadapt::error::Error;
use misadapt::model::{
    assemble_from_delta, assemble_with, from_estimates, gmm_estimate, infer_covariance_hausman, Covariance,
    EstimatePair, Policy, PolicyTable,
};
use proptest::prelude::*;

fn pair_strategy() -> impl Strategy<Value = EstimatePair> {
    (-5.0..5.0f64, 0.1..3.0f64, -5.0..5.0f64, 0.05..3.0f64, -0.95..0.95f64).prop_map(|(yu, su, yr, sr, rho)| {
        EstimatePair::from_standard_errors(yu, su, yr, sr, Covariance::CorrelationUo(rho))
    })
}

#[test]
fn turnout_scaled_problem() {
    let p = from_estimates(&common::turnout()).unwrap();
    assert!((p.rho + 0.77).abs() < 1e-12);
    assert!((p.y_o + 0.0017).abs() < 1e-15);
    assert!((gmm_estimate(&p) - 0.0024).abs() < 1e-4);
}

#[test]
fn equal_estimates_give_zero_contrast() {
    let pair = EstimatePair::from_standard_errors(2.5, 1.0, 2.5, 0.5, Covariance::EfficientRestricted);
    let p = from_estimates(&pair).unwrap();
    assert_eq!(p.t_o, 0.0);
    assert_eq!(gmm_estimate(&p), 2.5);
}

#[test]
fn hausman_inference_needs_ordered_variances() {
    assert!(matches!(
        infer_covariance_hausman(0.0, 1.0, 0.5, 1.5),
        Err(Error::HausmanOrderViolated { .. })
    ));
}

#[test]
fn perfectly_collinear_pair_is_rejected() {
    let pair = EstimatePair::from_standard_errors(1.0, 1.0, 2.0, 1.0, Covariance::Explicit(1.0));
    assert!(from_estimates(&pair).is_err());
}

proptest! {
    #[test]
    fn contrast_geometry(pair in pair_strategy()) {
        if let Ok(p) = from_estimates(&pair) {
            prop_assert!((p.y_o - (pair.y_r - pair.y_u)).abs() < 1e-12);
            prop_assert!((p.t_o * p.sigma_o.sqrt() - p.y_o).abs() < 1e-9);
            prop_assert!(p.rho.abs() < 1.0);
            // GMM variance is Sigma_U (1 - rho^2), never above Sigma_U
            let var_gmm = p.sigma_u * (1.0 - p.rho * p.rho);
            prop_assert!(var_gmm <= p.sigma_u);
        }
    }

    #[test]
    fn endpoint_policies(pair in pair_strategy()) {
        if let Ok(p) = from_estimates(&pair) {
            prop_assert!((assemble_with(&p, &Policy::Identity) - p.y_u).abs() < 1e-9);
            prop_assert!((assemble_with(&p, &Policy::Zero) - gmm_estimate(&p)).abs() < 1e-9);
            prop_assert!((assemble_from_delta(&p, p.t_o) - p.y_u).abs() < 1e-9);
        }
    }

    #[test]
    fn location_and_scale_equivariance(pair in pair_strategy(), shift in -10.0..10.0f64, scale in 0.1..10.0f64) {
        let Ok(p) = from_estimates(&pair) else { return Ok(()) };
        let moved = EstimatePair {
            y_u: scale * pair.y_u + shift,
            y_r: scale * pair.y_r + shift,
            sigma_u: scale * scale * pair.sigma_u,
            sigma_r: scale * scale * pair.sigma_r,
            covariance: pair.covariance,
        };
        let q = from_estimates(&moved).unwrap();
        prop_assert!((q.t_o - p.t_o).abs() < 1e-9 * (1.0 + p.t_o.abs()));
        prop_assert!((q.rho - p.rho).abs() < 1e-9);
        let g = scale * gmm_estimate(&p) + shift;
        prop_assert!((gmm_estimate(&q) - g).abs() < 1e-8 * (1.0 + g.abs()));
    }

    #[test]
    fn b_minimax_endpoints(pair in pair_strategy()) {
        let Ok(p) = from_estimates(&pair) else { return Ok(()) };
        let at_zero = b_minimax_estimate(&p, Bound::Finite(0.0)).unwrap();
        let at_inf = b_minimax_estimate(&p, Bound::Infinite).unwrap();
        prop_assert!((at_zero - gmm_estimate(&p)).abs() < 1e-9 * (1.0 + at_zero.abs()));
        prop_assert!((at_inf - p.y_u).abs() < 1e-9 * (1.0 + at_inf.abs()));
    }

    #[test]
    fn policy_table_interpolates_odd_data(s in 0.0..1.0f64, t in -5.0..5.0f64) {
        let grid: Vec<f64> = (-100..=100).map(|k| k as f64 * 0.1).collect();
        let values = grid.iter().map(|g| s * g).collect();
        let table = PolicyTable::new(grid, values).unwrap();
        prop_assert!((table.eval(t) - s * t).abs() < 1e-9);
        prop_assert!(table.odd_asymmetry().unwrap() < 1e-12);
    }
}
