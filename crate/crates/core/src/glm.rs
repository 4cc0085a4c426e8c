//! Per-block M-estimation: loss evaluators, a damped Newton solver and the
//! sandwich covariance of the resulting estimate.
//!
//! Both shipped losses are GLM negative log-likelihoods with canonical link, so
//! every per-observation quantity is a scalar function of the linear predictor
//! `s = xᵀθ` times `x` (gradient) or `x xᵀ` (Hessian).

use crate::error::{HetError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Observations held by one data block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockData {
    block_id: usize,
    design: DMatrix<f64>,
    response: DVector<f64>,
}

impl BlockData {
    pub fn new(block_id: usize, design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(HetError::ShapeMismatch(format!(
                "design has {} rows but response has {} entries",
                design.nrows(),
                response.len()
            )));
        }
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(HetError::TooFewObservations {
                n: design.nrows(),
                p: design.ncols(),
            });
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(HetError::NonFiniteInput("design"));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(HetError::NonFiniteInput("response"));
        }
        Ok(Self {
            block_id,
            design,
            response,
        })
    }

    /// Builds a block from row-major covariate rows.
    pub fn from_rows(block_id: usize, rows: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(HetError::ShapeMismatch("ragged covariate rows".into()));
        }
        let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(block_id, design, DVector::from_vec(response))
    }

    pub fn block_id(&self) -> usize {
        self.block_id
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    /// New block made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> BlockData {
        BlockData {
            block_id: self.block_id,
            design: self.design.select_rows(rows),
            response: self.response.select_rows(rows),
        }
    }

    fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.design.as_slice()[j * n..(j + 1) * n]
    }
}

/// Loss family used for local M-estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossModel {
    /// Squared error, `½(y − xᵀθ)²`.
    Linear,
    /// Bernoulli negative log-likelihood with logit link.
    Logistic,
}

impl std::fmt::Display for LossModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossModel::Linear => f.write_str("linear"),
            LossModel::Logistic => f.write_str("logistic"),
        }
    }
}

impl std::str::FromStr for LossModel {
    type Err = HetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LossModel::Linear),
            "logistic" => Ok(LossModel::Logistic),
            other => Err(HetError::Domain(format!("unknown model '{other}'"))),
        }
    }
}

/// `(loss, dloss/ds, d²loss/ds²)` at linear predictor `s` and response `y`.
#[inline]
fn scalar_terms(model: LossModel, s: f64, y: f64) -> (f64, f64, f64) {
    match model {
        LossModel::Linear => {
            let r = s - y;
            (0.5 * r * r, r, 1.0)
        }
        LossModel::Logistic => {
            let e = (-s.abs()).exp();
            let softplus = s.max(0.0) + e.ln_1p();
            // σ(s) and σ(−s) without cancellation
            let (sig_pos, sig_neg) = if s >= 0.0 {
                (1.0 / (1.0 + e), e / (1.0 + e))
            } else {
                (e / (1.0 + e), 1.0 / (1.0 + e))
            };
            let d = if y == 1.0 {
                -sig_neg
            } else if y == 0.0 {
                sig_pos
            } else {
                sig_pos - y
            };
            let w = e / ((1.0 + e) * (1.0 + e));
            (softplus - y * s, d, w)
        }
    }
}

impl LossModel {
    /// Checks that the response is admissible for this loss.
    pub fn validate(&self, data: &BlockData) -> Result<()> {
        if let LossModel::Logistic = self {
            if let Some((row, &value)) = data
                .response()
                .iter()
                .enumerate()
                .find(|(_, &y)| y != 0.0 && y != 1.0)
            {
                return Err(HetError::NonBinaryResponse { row, value });
            }
        }
        Ok(())
    }

    /// Per-observation loss `M(x, y; θ)`.
    pub fn value(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        scalar_terms(*self, dot(x, theta), y).0
    }

    /// Per-observation gradient in θ.
    pub fn gradient(&self, x: &[f64], y: f64, theta: &[f64]) -> DVector<f64> {
        let d = scalar_terms(*self, dot(x, theta), y).1;
        DVector::from_iterator(x.len(), x.iter().map(|v| d * v))
    }

    /// Per-observation Hessian in θ.
    pub fn hessian(&self, x: &[f64], y: f64, theta: &[f64]) -> DMatrix<f64> {
        let w = scalar_terms(*self, dot(x, theta), y).2;
        DMatrix::from_fn(x.len(), x.len(), |a, b| w * x[a] * x[b])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sample averages of loss, score and Hessian at one θ.
struct Averages {
    loss: f64,
    score: DVector<f64>,
    hessian: DMatrix<f64>,
    /// Per-row derivative of the loss in the linear predictor.
    dloss: Vec<f64>,
}

fn weighted_gram(data: &BlockData, weights: &[f64], scale: f64) -> DMatrix<f64> {
    let p = data.p();
    let mut out = DMatrix::zeros(p, p);
    for a in 0..p {
        let ca = data.column(a);
        for b in 0..=a {
            let cb = data.column(b);
            let mut acc = 0.0;
            for i in 0..weights.len() {
                acc += weights[i] * ca[i] * cb[i];
            }
            out[(a, b)] = acc * scale;
            out[(b, a)] = acc * scale;
        }
    }
    out
}

fn averages(data: &BlockData, model: LossModel, theta: &DVector<f64>) -> Averages {
    let n = data.n();
    let scale = 1.0 / n as f64;
    let eta = data.design() * theta;
    let y = data.response();
    let mut loss = 0.0;
    let mut dloss = Vec::with_capacity(n);
    let mut curv = Vec::with_capacity(n);
    for i in 0..n {
        let (l, d, w) = scalar_terms(model, eta[i], y[i]);
        loss += l;
        dloss.push(d);
        curv.push(w);
    }
    let score = DVector::from_fn(data.p(), |j, _| {
        let col = data.column(j);
        col.iter().zip(&dloss).map(|(x, d)| x * d).sum::<f64>() * scale
    });
    let hessian = weighted_gram(data, &curv, scale);
    Averages {
        loss: loss * scale,
        score,
        hessian,
        dloss,
    }
}

/// Numerical rank via column-pivoted QR, threshold `1e-10 · max column norm`.
pub fn numerical_rank(design: &DMatrix<f64>) -> usize {
    let max_norm = design
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    if max_norm == 0.0 {
        return 0;
    }
    let qr = design.clone().col_piv_qr();
    let r = qr.r();
    let threshold = 1e-10 * max_norm;
    (0..r.nrows().min(r.ncols()))
        .filter(|&i| r[(i, i)].abs() > threshold)
        .count()
}

/// Newton solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative tolerance on the averaged score norm.
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 100,
            max_halvings: 50,
        }
    }
}

// A converged iterate must also have a negligible Newton step. Under
// separation the score vanishes at infinity while the step stays O(1).
const STEP_TOL: f64 = 1e-6;

/// Result of fitting one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub block_id: usize,
    pub theta_hat: DVector<f64>,
    /// Sandwich covariance of `√n(θ̂ − θ*)`.
    pub cov_hat: DMatrix<f64>,
    /// `sqrt(diag(cov_hat))`.
    pub sigma_hat: DVector<f64>,
    pub n_used: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Set when some coordinate has zero estimated variance (e.g. a perfect fit).
    pub degenerate: bool,
}

impl LocalFit {
    /// Squared standard error `σ̂_j² / n` of coordinate `j`.
    pub fn variance_of_mean(&self, j: usize) -> f64 {
        self.sigma_hat[j] * self.sigma_hat[j] / self.n_used as f64
    }

    pub fn standard_error(&self, j: usize) -> f64 {
        self.variance_of_mean(j).sqrt()
    }
}

/// Solves the local score equation by damped Newton and attaches the sandwich
/// covariance.
pub fn fit_block(data: &BlockData, model: LossModel, settings: &SolverSettings) -> Result<LocalFit> {
    model.validate(data)?;
    let (n, p) = (data.n(), data.p());
    if n < p {
        return Err(HetError::TooFewObservations { n, p });
    }
    let rank = numerical_rank(data.design());
    if rank < p {
        return Err(HetError::RankDeficientDesign { rank, p });
    }

    let mut theta = DVector::zeros(p);
    let mut current = averages(data, model, &theta);
    let score_scale = 1.0 + current.score.norm();
    let mut iterations = 0;
    let mut converged = false;

    while iterations <= settings.max_iterations {
        if !current.loss.is_finite() || current.score.iter().any(|v| !v.is_finite()) {
            return Err(HetError::NonFiniteInput("loss evaluation"));
        }
        let Some(chol) = current.hessian.clone().cholesky() else {
            return Err(HetError::NonConvergence { iterations });
        };
        let step = chol.solve(&(-&current.score));
        let score_ok = current.score.norm() <= settings.tol * score_scale;
        if score_ok && step.norm() <= STEP_TOL * (1.0 + theta.norm()) {
            converged = true;
            break;
        }
        if iterations == settings.max_iterations {
            break;
        }

        let slack = 1e-12 * (1.0 + current.loss.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let candidate = &theta + &step * t;
            let next = averages(data, model, &candidate);
            if next.loss.is_finite() && next.loss <= current.loss + slack {
                accepted = Some((candidate, next));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, next)) => {
                theta = candidate;
                current = next;
                iterations += 1;
            }
            None if score_ok => {
                converged = true;
                break;
            }
            None => return Err(HetError::NonConvergence { iterations }),
        }
    }
    if !converged {
        return Err(HetError::NonConvergence { iterations });
    }

    let cov_hat = sandwich_from(&current, data)?;
    let sigma_hat = DVector::from_fn(p, |j, _| cov_hat[(j, j)].max(0.0).sqrt());
    let degenerate = sigma_hat.iter().any(|&s| s == 0.0);
    Ok(LocalFit {
        block_id: data.block_id(),
        theta_hat: theta,
        cov_hat,
        sigma_hat,
        n_used: n,
        converged,
        iterations,
        degenerate,
    })
}

/// Sandwich covariance `Â⁻¹ B̂ Â⁻¹` with `Â` the averaged Hessian and `B̂` the
/// averaged outer product of per-observation gradients, both at `theta_hat`.
///
/// The result estimates the covariance of `√n(θ̂ − θ*)`; it is not divided by n.
pub fn sandwich_variance(
    data: &BlockData,
    model: LossModel,
    theta_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if theta_hat.len() != data.p() {
        return Err(HetError::ShapeMismatch(format!(
            "theta has {} entries, design has {} columns",
            theta_hat.len(),
            data.p()
        )));
    }
    if theta_hat.iter().any(|v| !v.is_finite()) {
        return Err(HetError::NonFiniteInput("theta_hat"));
    }
    let avg = averages(data, model, theta_hat);
    sandwich_from(&avg, data)
}

fn sandwich_from(avg: &Averages, data: &BlockData) -> Result<DMatrix<f64>> {
    let n = data.n() as f64;
    // Residual-level roundoff from an exact fit must not leak into the meat.
    let y_scale = 1.0 + data.response().amax();
    let exact = avg.dloss.iter().all(|d| d.abs() <= 1e-12 * y_scale);
    let squared: Vec<f64> = if exact {
        vec![0.0; avg.dloss.len()]
    } else {
        avg.dloss.iter().map(|d| d * d).collect()
    };
    let meat = weighted_gram(data, &squared, 1.0 / n);
    let chol = avg
        .hessian
        .clone()
        .cholesky()
        .ok_or(HetError::SingularHessian)?;
    let left = chol.solve(&meat);
    let v = chol.solve(&left.transpose());
    let sym = (&v + v.transpose()) * 0.5;
    if sym.iter().any(|x| !x.is_finite()) {
        return Err(HetError::NonFiniteInput("sandwich covariance"));
    }
    Ok(sym)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(rows: &[&[f64]], y: &[f64]) -> BlockData {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        BlockData::from_rows(0, &rows, y.to_vec()).unwrap()
    }

    #[test]
    fn linear_symmetric_residuals() {
        let data = block(&[&[1.0], &[1.0]], &[0.0, 2.0]);
        let fit = fit_block(&data, LossModel::Linear, &SolverSettings::default()).unwrap();
        assert!((fit.theta_hat[0] - 1.0).abs() < 1e-14);
        assert_eq!(fit.iterations, 1);
        assert!((fit.cov_hat[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn logistic_symmetric_design_gives_zero() {
        let data = block(&[&[1.0], &[-1.0]], &[1.0, 1.0]);
        let fit = fit_block(&data, LossModel::Logistic, &SolverSettings::default()).unwrap();
        assert!(fit.theta_hat[0].abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn logistic_complete_separation_fails() {
        let data = block(&[&[1.0], &[-1.0]], &[1.0, 0.0]);
        let err = fit_block(&data, LossModel::Logistic, &SolverSettings::default()).unwrap_err();
        assert!(matches!(err, HetError::NonConvergence { .. }), "{err:?}");
    }

    #[test]
    fn separation_score_is_monotone() {
        // score(θ) = 2 − 2σ(θ) > 0 everywhere, so no finite root exists
        let data = block(&[&[1.0], &[-1.0]], &[1.0, 0.0]);
        let mut prev = f64::INFINITY;
        for i in -50..50 {
            let theta = DVector::from_element(1, i as f64 * 0.7);
            let g = -averages(&data, LossModel::Logistic, &theta).score[0];
            assert!(g > 0.0 && g < prev);
            prev = g;
        }
    }

    #[test]
    fn perfect_fit_is_degenerate() {
        let data = block(&[&[1.0], &[2.0], &[3.0]], &[2.0, 4.0, 6.0]);
        let fit = fit_block(&data, LossModel::Linear, &SolverSettings::default()).unwrap();
        assert!((fit.theta_hat[0] - 2.0).abs() < 1e-12);
        assert_eq!(fit.cov_hat[(0, 0)], 0.0);
        assert!(fit.degenerate);
    }

    #[test]
    fn rank_deficient_design_rejected() {
        let data = block(
            &[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]],
            &[1.0, 2.0, 3.0],
        );
        let err = fit_block(&data, LossModel::Linear, &SolverSettings::default()).unwrap_err();
        assert_eq!(err, HetError::RankDeficientDesign { rank: 1, p: 2 });
    }

    #[test]
    fn too_few_rows() {
        let data = block(&[&[1.0, 2.0]], &[1.0]);
        let err = fit_block(&data, LossModel::Linear, &SolverSettings::default()).unwrap_err();
        assert_eq!(err, HetError::TooFewObservations { n: 1, p: 2 });
    }

    #[test]
    fn non_binary_response_rejected() {
        let data = block(&[&[1.0], &[2.0]], &[1.0, 2.0]);
        let err = fit_block(&data, LossModel::Logistic, &SolverSettings::default()).unwrap_err();
        assert_eq!(err, HetError::NonBinaryResponse { row: 1, value: 2.0 });
    }

    #[test]
    fn non_finite_input_rejected() {
        let err = BlockData::from_rows(0, &[vec![f64::NAN]], vec![1.0]).unwrap_err();
        assert_eq!(err, HetError::NonFiniteInput("design"));
    }

    #[test]
    fn singular_hessian_in_sandwich() {
        let data = block(&[&[0.0], &[0.0]], &[1.0, 0.0]);
        let err = sandwich_variance(&data, LossModel::Linear, &DVector::zeros(1)).unwrap_err();
        assert_eq!(err, HetError::SingularHessian);
    }

    #[test]
    fn logistic_scalar_terms_are_stable() {
        let (l, d, w) = scalar_terms(LossModel::Logistic, 800.0, 1.0);
        assert!(l.is_finite() && l >= 0.0);
        assert!(d <= 0.0 && d.is_finite());
        assert!(w >= 0.0);
        let (l, d, _) = scalar_terms(LossModel::Logistic, -800.0, 0.0);
        assert!(l.abs() < 1e-300 && d.abs() < 1e-300);
    }
}
