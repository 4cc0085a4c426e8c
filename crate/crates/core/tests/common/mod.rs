//! Reference oracles and invariant checks shared by the integration tests.
//! Every check is deterministic given its seed and returns a description of
//! the first violation.
#![allow(dead_code)]

use hetdetect_core::inference::{extreme_contrast, first_part_len, EctBlock};
use hetdetect_core::normal;
use hetdetect_core::power::{
    classify_regime, detection_boundary, gamma_recommendation, snr_wald, LocalAlternative, Verdict,
};
use hetdetect_core::simlab::{replicate_rng, Phase};
use hetdetect_core::{
    combined_statistic, fit_block, sandwich_variance, split_block, wald_statistic, BlockData,
    CombinedOutcome, DimensionSlice, LossModel, SolverSettings, SplitMode, WaldOutcome,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> impl Rng {
    replicate_rng(seed, Phase::Null, 0)
}

pub fn normal_draw<R: Rng>(rng: &mut R) -> f64 {
    normal::quantile(1.0 - rng.random::<f64>())
}

pub fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- oracles

/// Dense Wald numerator `θᵀRᵀ(RΛRᵀ)⁻¹Rθ` with `R` the successive-difference
/// contrast matrix.
pub fn dense_wald_quad_form(estimates: &[f64], variances: &[f64]) -> f64 {
    let k = estimates.len();
    let r = DMatrix::from_fn(k - 1, k, |i, j| {
        if j == i {
            1.0
        } else if j == i + 1 {
            -1.0
        } else {
            0.0
        }
    });
    let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
    let theta = DVector::from_column_slice(estimates);
    let rt = &r * &theta;
    let m = &r * lambda * r.transpose();
    let solved = m.lu().solve(&rt).expect("contrast covariance is invertible");
    rt.dot(&solved)
}

pub fn check_wald_projection_identity(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let k = 2 + case % 7;
        let est: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let var: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.05, 5.0)).collect();
        let fast = wald_statistic(&DimensionSlice::new(0, est.clone(), var.clone()).unwrap())
            .unwrap()
            .quad_form;
        let dense = dense_wald_quad_form(&est, &var);
        ensure(rel_err(fast, dense) <= 1e-10, || {
            format!("case {case}, K={k}: O(K) {fast} vs dense {dense}")
        })?;
    }
    Ok(())
}

/// Random Gaussian-design linear block with heteroscedastic noise.
pub fn random_linear_block<R: Rng>(rng: &mut R, id: usize, n: usize, p: usize) -> BlockData {
    let design = DMatrix::from_fn(n, p, |_, _| normal_draw(rng));
    let theta: Vec<f64> = (0..p).map(|_| uniform(rng, -2.0, 2.0)).collect();
    let response = DVector::from_fn(n, |i, _| {
        let mean: f64 = (0..p).map(|j| design[(i, j)] * theta[j]).sum();
        mean + (1.0 + design[(i, 0)].abs()) * normal_draw(rng)
    });
    BlockData::new(id, design, response).unwrap()
}

/// `n · (XᵀX)⁻¹ (Σ e_i² x_i x_iᵀ) (XᵀX)⁻¹` at the least-squares fit, via
/// explicit inverses.
pub fn hc0_oracle(data: &BlockData) -> (DVector<f64>, DMatrix<f64>) {
    let x = data.design();
    let y = data.response();
    let xtx_inv = (x.transpose() * x).try_inverse().expect("full rank");
    let beta = &xtx_inv * x.transpose() * y;
    let resid = y - x * &beta;
    let mut meat = DMatrix::zeros(x.ncols(), x.ncols());
    for i in 0..x.nrows() {
        let xi = x.row(i).transpose();
        meat += &xi * xi.transpose() * (resid[i] * resid[i]);
    }
    let v = &xtx_inv * meat * &xtx_inv * x.nrows() as f64;
    (beta, v)
}

pub fn check_sandwich_hc0(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let data = random_linear_block(&mut rng, case, 50, 3);
        let (beta, oracle) = hc0_oracle(&data);
        let v = sandwich_variance(&data, LossModel::Linear, &beta).map_err(|e| e.to_string())?;
        let err = mat_rel_err(&v, &oracle);
        ensure(err <= 1e-10, || format!("case {case}: relative error {err:e}"))?;
    }
    Ok(())
}

fn logistic_score(x: &[f64], y: &[f64], theta: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| xi * (1.0 / (1.0 + (-xi * theta).exp()) - yi))
        .sum()
}

/// Root of the 1-D logistic score by grid bracketing on [-30, 30] then
/// bisection. The score is increasing in θ.
pub fn logistic_root_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let grid: Vec<f64> = (0..=240).map(|i| -30.0 + 0.25 * i as f64).collect();
    let w = grid
        .windows(2)
        .find(|w| logistic_score(x, y, w[0]) <= 0.0 && logistic_score(x, y, w[1]) >= 0.0)?;
    let (mut lo, mut hi) = (w[0], w[1]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if logistic_score(x, y, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

pub fn check_logistic_solver(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut done = 0;
    let mut attempts = 0;
    while done < cases {
        attempts += 1;
        ensure(attempts < 50 * cases, || "too many separated instances".into())?;
        let n = 40 + (rng.random::<u64>() % 160) as usize;
        let theta0 = uniform(&mut rng, -2.0, 2.0);
        let x: Vec<f64> = (0..n).map(|_| normal_draw(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let p = 1.0 / (1.0 + (-xi * theta0).exp());
                (rng.random::<f64>() < p) as u8 as f64
            })
            .collect();
        let Some(root) = logistic_root_oracle(&x, &y) else {
            continue;
        };
        let data = BlockData::new(done, DMatrix::from_column_slice(n, 1, &x), DVector::from_vec(y))
            .unwrap();
        let fit = fit_block(&data, LossModel::Logistic, &SolverSettings::default())
            .map_err(|e| format!("instance {done}: {e}"))?;
        let err = (fit.theta_hat[0] - root).abs();
        ensure(err <= 1e-6, || {
            format!("instance {done}: solver {} vs oracle {root}", fit.theta_hat[0])
        })?;
        done += 1;
    }
    Ok(())
}

// ------------------------------------------------------------- glm layer

pub fn check_gradient_hessian_fd(probes: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for model in [LossModel::Linear, LossModel::Logistic] {
        for probe in 0..probes {
            let p = 3;
            let x: Vec<f64> = (0..p).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
            let theta: Vec<f64> = (0..p).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            let y = match model {
                LossModel::Linear => uniform(&mut rng, -3.0, 3.0),
                LossModel::Logistic => (rng.random::<f64>() < 0.5) as u8 as f64,
            };
            let g = model.gradient(&x, y, &theta);
            let h = model.hessian(&x, y, &theta);
            for j in 0..p {
                let step = 1e-5 * (1.0 + theta[j].abs());
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += step;
                dn[j] -= step;
                let fd = (model.value(&x, y, &up) - model.value(&x, y, &dn)) / (2.0 * step);
                let scale = g.amax().max(1e-8);
                ensure((fd - g[j]).abs() <= 1e-4 * scale, || {
                    format!("{model} probe {probe}: d/dθ{j} analytic {} vs fd {fd}", g[j])
                })?;
                let fd_h = (model.gradient(&x, y, &up) - model.gradient(&x, y, &dn)) / (2.0 * step);
                let scale = h.amax().max(1e-8);
                for i in 0..p {
                    ensure((fd_h[i] - h[(i, j)]).abs() <= 1e-4 * scale, || {
                        format!("{model} probe {probe}: H[{i},{j}] {} vs fd {}", h[(i, j)], fd_h[i])
                    })?;
                }
            }
        }
    }
    Ok(())
}

pub fn check_linear_fit_closed_form(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let data = random_linear_block(&mut rng, case, 30 + case, 3);
        let (beta, _) = hc0_oracle(&data);
        let fit = fit_block(&data, LossModel::Linear, &SolverSettings::default())
            .map_err(|e| e.to_string())?;
        let err = (&fit.theta_hat - &beta).norm() / beta.norm();
        ensure(err <= 1e-10, || format!("case {case}: relative error {err:e}"))?;
    }
    Ok(())
}

/// Logistic block with moderate signal so that the MLE exists.
pub fn random_logistic_block<R: Rng>(rng: &mut R, id: usize, n: usize, p: usize) -> BlockData {
    let design = DMatrix::from_fn(n, p, |_, _| normal_draw(rng));
    let theta: Vec<f64> = (0..p).map(|_| uniform(rng, -0.5, 0.5)).collect();
    let response = DVector::from_fn(n, |i, _| {
        let s: f64 = (0..p).map(|j| design[(i, j)] * theta[j]).sum();
        (rng.random::<f64>() < 1.0 / (1.0 + (-s).exp())) as u8 as f64
    });
    BlockData::new(id, design, response).unwrap()
}

pub fn check_sandwich_symmetric_psd(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let (data, model) = if case % 2 == 0 {
            (random_linear_block(&mut rng, case, 60, 3), LossModel::Linear)
        } else {
            (random_logistic_block(&mut rng, case, 200, 3), LossModel::Logistic)
        };
        let fit = fit_block(&data, model, &SolverSettings::default()).map_err(|e| e.to_string())?;
        let v = &fit.cov_hat;
        let asym = (v - v.transpose()).amax();
        ensure(asym <= 1e-12 * v.amax().max(1.0), || format!("case {case}: asymmetry {asym:e}"))?;
        let min_eig = v.clone().symmetric_eigen().eigenvalues.min();
        ensure(min_eig >= -1e-10 * v.trace(), || format!("case {case}: eigenvalue {min_eig:e}"))?;
    }
    Ok(())
}

pub fn duplicate_rows(data: &BlockData) -> BlockData {
    let rows: Vec<usize> = (0..data.n()).chain(0..data.n()).collect();
    data.select_rows(&rows)
}

pub fn check_duplication_invariance(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let settings = SolverSettings::default();
    for case in 0..cases {
        let (data, model) = if case % 2 == 0 {
            (random_linear_block(&mut rng, case, 40, 3), LossModel::Linear)
        } else {
            (random_logistic_block(&mut rng, case, 150, 2), LossModel::Logistic)
        };
        let once = fit_block(&data, model, &settings).map_err(|e| e.to_string())?;
        let twice = fit_block(&duplicate_rows(&data), model, &settings).map_err(|e| e.to_string())?;
        let dt = (&once.theta_hat - &twice.theta_hat).norm() / once.theta_hat.norm().max(1e-12);
        let dv = mat_rel_err(&twice.cov_hat, &once.cov_hat);
        ensure(dt <= 1e-8 && dv <= 1e-8, || {
            format!("{model} case {case}: theta drift {dt:e}, cov drift {dv:e}")
        })?;
    }
    Ok(())
}

// -------------------------------------------------------- inference layer

pub fn check_wald_location_scale(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let k = 2 + case % 20;
        let est: Vec<f64> = (0..k).map(|_| normal_draw(&mut rng)).collect();
        let var: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.1, 3.0)).collect();
        let base = wald(&est, &var).statistic;
        let c = uniform(&mut rng, -50.0, 50.0);
        let shifted: Vec<f64> = est.iter().map(|t| t + c).collect();
        let s = uniform(&mut rng, 0.01, 100.0);
        let scaled_est: Vec<f64> = est.iter().map(|t| t * s).collect();
        // λ_k is a standard deviation; its square scales by s²
        let scaled_var: Vec<f64> = var.iter().map(|v| v * s * s).collect();
        let a = wald(&shifted, &var).statistic;
        let b = wald(&scaled_est, &scaled_var).statistic;
        let tol = 1e-8 * (1.0 + base.abs());
        ensure((a - base).abs() <= tol, || format!("case {case}: shift by {c} moved W {base} -> {a}"))?;
        ensure((b - base).abs() <= tol, || format!("case {case}: scale by {s} moved W {base} -> {b}"))?;
    }
    Ok(())
}

fn wald(est: &[f64], var: &[f64]) -> WaldOutcome {
    wald_statistic(&DimensionSlice::new(0, est.to_vec(), var.to_vec()).unwrap()).unwrap()
}

pub fn check_ect_selection_shift(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let k = 2 + case % 30;
        let blocks: Vec<EctBlock> = (0..k)
            .map(|label| EctBlock {
                label,
                // coarse values so that ties occur
                first_estimate: (normal_draw(&mut rng) * 2.0).round(),
                second_estimate: normal_draw(&mut rng),
                second_se: uniform(&mut rng, 0.1, 1.0),
            })
            .collect();
        let base = extreme_contrast(&blocks, 0.5).unwrap();
        let c = (uniform(&mut rng, -100.0, 100.0)).round();
        let moved: Vec<EctBlock> = blocks
            .iter()
            .map(|b| EctBlock {
                first_estimate: b.first_estimate + c,
                ..*b
            })
            .collect();
        let out = extreme_contrast(&moved, 0.5).unwrap();
        ensure((out.k_max, out.k_min) == (base.k_max, base.k_min), || {
            format!("case {case}: selection changed under shift {c}")
        })?;
        ensure(out.k_max != out.k_min, || format!("case {case}: same block selected twice"))?;
    }
    Ok(())
}

pub fn check_split_determinism(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let n = 10 + case * 7;
        let data = random_linear_block(&mut rng, case, n, 2);
        let gamma = uniform(&mut rng, 0.2, 0.8);
        let (a1, b1) = split_block(&data, gamma, SplitMode::Prefix).map_err(|e| e.to_string())?;
        let (a2, b2) = split_block(&data, gamma, SplitMode::Prefix).unwrap();
        ensure(a1 == a2 && b1 == b2, || format!("case {case}: prefix split not repeatable"))?;
        let first = first_part_len(n, gamma);
        ensure(a1.n() == first && b1.n() == n - first, || format!("case {case}: sizes"))?;
        let prefix: Vec<usize> = (0..first).collect();
        ensure(a1 == data.select_rows(&prefix), || format!("case {case}: prefix rows"))?;

        let mode = SplitMode::SeededShuffle { seed: case as u64 };
        let (s1, t1) = split_block(&data, gamma, mode).unwrap();
        let (s2, t2) = split_block(&data, gamma, mode).unwrap();
        ensure(s1 == s2 && t1 == t2, || format!("case {case}: shuffle not repeatable"))?;
        // the two parts partition the rows
        let mut all: Vec<f64> = s1.response().iter().chain(t1.response().iter()).copied().collect();
        let mut orig: Vec<f64> = data.response().iter().copied().collect();
        all.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        ensure(all == orig, || format!("case {case}: shuffle lost rows"))?;
    }
    Ok(())
}

fn combined(w: f64, t: f64, r: f64) -> CombinedOutcome {
    let wald = WaldOutcome {
        statistic: w,
        p_value: normal::upper_tail(w),
        quad_form: 0.0,
        df_equiv: 1,
    };
    let ect = hetdetect_core::EctOutcome {
        statistic: t,
        p_value: normal::upper_tail(t),
        k_max: 0,
        k_min: 1,
        max_estimate: 0.0,
        min_estimate: 0.0,
        gamma: 0.5,
    };
    combined_statistic(&wald, &ect, r).unwrap()
}

pub fn check_combined_monotone(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let r = uniform(&mut rng, 1e-3, 1.0);
        let w = uniform(&mut rng, -10.0, 10.0);
        let t = uniform(&mut rng, -10.0, 10.0);
        let d = uniform(&mut rng, 1e-3, 5.0);
        let base = combined(w, t, r).statistic;
        ensure(combined(w + d, t, r).statistic > base, || format!("case {case}: not increasing in W"))?;
        ensure(combined(w, t + d, r).statistic > base, || format!("case {case}: not increasing in T"))?;
    }
    Ok(())
}

pub fn check_p_value_symmetry(cases: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for case in 0..cases {
        let x = uniform(&mut rng, -40.0, 40.0);
        let s = normal::upper_tail(x) + normal::upper_tail(-x);
        ensure((s - 1.0).abs() <= 1e-12, || format!("case {case}: p({x}) + p(-{x}) = {s}"))?;
    }
    ensure(normal::upper_tail(30.0) > 0.0, || "tail underflow at 30".into())
}

// ------------------------------------------------------------ power layer

pub fn check_detection_boundary_monotone() -> Check {
    let mut prev = 0.0;
    for i in 1..1000 {
        let b = i as f64 / 1000.0;
        let v = detection_boundary(b).unwrap();
        ensure(v > prev && v < 1.0, || format!("rho({b}) = {v} after {prev}"))?;
        prev = v;
    }
    ensure(detection_boundary(1e-9).unwrap() < 1e-9, || "rho not near 0 at 0".into())?;
    ensure(detection_boundary(1.0 - 1e-12).unwrap() > 0.99, || "rho not near 1 at 1".into())
}

pub fn check_snr_wald_monotone() -> Check {
    let alt = |k, beta| LocalAlternative::new(k, 500, beta, 1.0, 1.0, 2.0 / 3.0).unwrap();
    for k in [3, 10, 100, 1000] {
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let s = snr_wald(&alt(k, i as f64 / 100.0));
            ensure(s < prev, || format!("snr_wald not decreasing in beta at K={k}"))?;
            prev = s;
        }
    }
    for beta in [0.1, 0.25, 0.45] {
        let mut prev = 0.0;
        for k in 3..500 {
            let s = snr_wald(&alt(k, beta));
            ensure(s > prev, || format!("snr_wald not increasing in K at beta={beta}"))?;
            prev = s;
        }
    }
    Ok(())
}

pub fn check_regime_structure() -> Check {
    for bi in 1..20 {
        for ci in 0..40 {
            for (lo, hi) in [(1.0, 1.0), (0.5, 2.0), (0.8, 1.0)] {
                let beta = bi as f64 / 20.0;
                let c = 0.05 + ci as f64 * 0.1;
                let alt = LocalAlternative::new(100, 500, beta, c, 1.0, 2.0 / 3.0).unwrap();
                let v = classify_regime(&alt, lo, hi).unwrap();
                let member = v.wald == Verdict::Consistent || v.ect == Verdict::Consistent;
                ensure(!member || v.combined == Verdict::Consistent, || {
                    format!("beta={beta} c={c}: {v:?}")
                })?;
                ensure(v.combined != Verdict::Inconsistent || !member, || format!("{v:?}"))?;
            }
        }
    }
    Ok(())
}

pub fn check_gamma_rescaling() -> Check {
    for (n, mu, k) in [(10_000, 0.5, 100), (500, 0.2, 10), (2_000, 0.05, 1000), (40, 1.0, 2)] {
        let a = gamma_recommendation(n, mu, k).unwrap();
        let b = gamma_recommendation(4 * n, mu / 2.0, k).unwrap();
        ensure(a.gamma > 0.0 && a.gamma < 1.0, || format!("gamma {} outside (0,1)", a.gamma))?;
        ensure(a.gamma == b.gamma, || {
            format!("n={n} mu={mu} K={k}: {} vs rescaled {}", a.gamma, b.gamma)
        })?;
    }
    Ok(())
}
