//! Fixtures for the benchmarks.

use hetdetect_core::simlab::{gen_block, replicate_rng, ParetoSpec, Phase};
use hetdetect_core::{BlockData, LossModel};
use nalgebra::{DMatrix, DVector};

/// Dense Wald numerator through the `(K−1)×K` contrast matrix; the reference
/// the closed form is measured against.
pub fn dense_quad_form(estimates: &[f64], variances: &[f64]) -> f64 {
    let k = estimates.len();
    let r = DMatrix::from_fn(k - 1, k, |i, j| match j as isize - i as isize {
        0 => 1.0,
        1 => -1.0,
        _ => 0.0,
    });
    let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
    let rt = &r * DVector::from_column_slice(estimates);
    let m = &r * lambda * r.transpose();
    rt.dot(&m.cholesky().expect("positive definite").solve(&rt))
}

/// Deterministic pseudo-random estimates and variances for K blocks.
pub fn slice_inputs(k: usize) -> (Vec<f64>, Vec<f64>) {
    let est = (0..k).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
    let var = (0..k).map(|i| 0.5 + ((i * 104_729) % 1000) as f64 / 1000.0).collect();
    (est, var)
}

pub fn pareto_block(model: LossModel, n: usize, p: usize, seed: u64) -> BlockData {
    let mut rng = replicate_rng(seed, Phase::Null, 0);
    let theta = match model {
        LossModel::Linear => DVector::from_element(p, 1.0),
        // moderate coefficients keep the logistic MLE finite
        LossModel::Logistic => DVector::from_fn(p, |j, _| if j == 0 { 0.3 } else { -0.1 }),
    };
    gen_block(0, &theta, model, n, &ParetoSpec::default(), &mut rng).expect("valid block")
}
