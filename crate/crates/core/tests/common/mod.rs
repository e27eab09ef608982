#![allow(dead_code)]

use misadapt::model::{Covariance, EstimatePair};
use misadapt::multivar::MultiEstimates;
use misadapt::normal;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn turnout() -> EstimatePair {
    EstimatePair::from_standard_errors(0.0043, 0.0014, 0.0026, 0.0009, Covariance::CorrelationUo(-0.77))
}

/// `E[f(b + Z)]` for standard normal `Z` by composite Simpson on `[-12, 12]`.
pub fn normal_expectation(b: f64, f: impl Fn(f64) -> f64) -> f64 {
    normal_expectation_split(b, &[], f)
}

/// As `normal_expectation`, with Simpson panels split at the points `breaks`
/// (in the argument of `f`) where `f` may jump.
pub fn normal_expectation_split(b: f64, breaks: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut cuts = vec![-12.0];
    cuts.extend(breaks.iter().map(|x| x - b).filter(|z| z.abs() < 12.0));
    cuts.push(12.0);
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .map(|w| {
            let n = 2 * ((w[1] - w[0]) * 500.0).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                // nudge the endpoints inside the panel so jumps take the panel's side
                let z = (w[0] + i as f64 * h).clamp(w[0] + 1e-13, w[1] - 1e-13);
                let wt = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += wt * normal::pdf(z) * f(b + z);
            }
            s * h / 3.0
        })
        .sum()
}

/// Random two-restriction problem with unit `var(Y_U)`. Restricted standard
/// errors lie in `[0.3, 0.9]`, their correlation in `[0.3, 0.8]`, and
/// `cov(Y_U, Y_Rj) = k_j var(Y_Rj)` with `k_j` in `[0.5, 1]`.
pub fn random_fixture(seed: u64) -> MultiEstimates {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let s1: f64 = rng.gen_range(0.3..0.9);
        let s2: f64 = rng.gen_range(0.3..0.9);
        let r12: f64 = rng.gen_range(0.3..0.8);
        let k1: f64 = rng.gen_range(0.5..1.0);
        let k2: f64 = rng.gen_range(0.5..1.0);
        let y_r = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let c = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0,
                k1 * s1 * s1,
                k2 * s2 * s2,
                k1 * s1 * s1,
                s1 * s1,
                r12 * s1 * s2,
                k2 * s2 * s2,
                r12 * s1 * s2,
                s2 * s2,
            ],
        );
        if let Ok(me) = MultiEstimates::from_restricted(0.0, &y_r, c) {
            return me;
        }
    }
}
