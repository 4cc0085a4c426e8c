//! Monte Carlo harness for size, power and coverage of the three tests.
//!
//! A replicate draws block parameters, generates K blocks of Pareto-design GLM
//! data, fits every block on its full sample and on both splits, and records
//! the three statistics for every coordinate. Replicates are independent work
//! items; each one reads its own ChaCha stream selected by `(phase, index)`, so
//! results do not depend on scheduling or thread count.

use crate::error::{HetError, Result};
use crate::glm::{fit_block, BlockData, LocalFit, LossModel, SolverSettings};
use crate::inference::{
    combine, combined_weight, ect_statistic, extreme_contrast, split_block, wald_statistic,
    DimensionSlice, EctBlock, SplitMode, TestFamily, WeightPreset,
};
use crate::normal;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Which family of replicates a random stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    /// Null replicates (calibration, coverage, size).
    Null = 1,
    /// Replicates under the configured alternative.
    Alternative = 2,
}

/// Random stream for replicate `index` of `phase`.
///
/// ChaCha is counter based: the 64-bit seed fixes the key and the stream id
/// `(phase << 48) | index` selects a disjoint keystream, so distinct
/// replicates never share output.
pub fn replicate_rng(seed: u64, phase: Phase, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((phase as u64) << 48) | index);
    rng
}

/// Pareto (type I) law with density `η ζ^η / x^{η+1}` on `x ≥ ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoSpec {
    pub eta: f64,
    pub zeta: f64,
}

impl Default for ParetoSpec {
    fn default() -> Self {
        Self {
            eta: 4.1,
            zeta: 2.0,
        }
    }
}

impl ParetoSpec {
    pub fn new(eta: f64, zeta: f64) -> Result<Self> {
        let spec = Self { eta, zeta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta > 0.0 && self.zeta > 0.0 && self.eta.is_finite() && self.zeta.is_finite() {
            Ok(())
        } else {
            Err(HetError::Domain(format!(
                "Pareto parameters must be positive, got eta={} zeta={}",
                self.eta, self.zeta
            )))
        }
    }

    /// `ηζ/(η−1)`, defined for η > 1.
    pub fn mean(&self) -> Option<f64> {
        (self.eta > 1.0).then(|| self.eta * self.zeta / (self.eta - 1.0))
    }

    /// `ζ u^{-1/η}` for u in (0, 1].
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        self.zeta * u.powf(-1.0 / self.eta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // random::<f64>() is in [0, 1); flip it onto (0, 1]
        let u = 1.0 - rng.random::<f64>();
        self.inverse_cdf(u)
    }
}

/// Block parameter design: every coordinate equals `base_value` except
/// `hetero_dim`, which per block takes `base_value + shift` with probability
/// `K^{-β}`. `beta = None` is the global null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySpec {
    pub beta: Option<f64>,
    pub hetero_dim: usize,
    pub base_value: f64,
    pub shift_scale: f64,
}

impl HeterogeneitySpec {
    pub fn null(base_value: f64) -> Self {
        Self {
            beta: None,
            hetero_dim: 0,
            base_value,
            shift_scale: 0.0,
        }
    }

    /// `K^{-β}`.
    pub fn mixing_probability(&self, k: usize) -> f64 {
        self.beta.map_or(0.0, |b| (k as f64).powf(-b))
    }

    /// `shift_scale · K^{(β−0.5)/2} · n^{-1/2}`.
    pub fn shift(&self, k: usize, n: usize) -> f64 {
        self.beta.map_or(0.0, |b| {
            self.shift_scale * (k as f64).powf((b - 0.5) / 2.0) / (n as f64).sqrt()
        })
    }
}

/// Realized block parameters and the truly heterogeneous coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    pub thetas: Vec<DVector<f64>>,
    /// Coordinates on which at least two blocks differ, ascending.
    pub heterogeneous: Vec<usize>,
}

pub fn gen_params<R: Rng + ?Sized>(
    spec: &HeterogeneitySpec,
    k: usize,
    n: usize,
    p: usize,
    rng: &mut R,
) -> TrueParams {
    let base = DVector::from_element(p, spec.base_value);
    let mut thetas = vec![base; k];
    if spec.beta.is_some() {
        let prob = spec.mixing_probability(k);
        let shift = spec.shift(k, n);
        for theta in thetas.iter_mut() {
            if rng.random::<f64>() < prob {
                theta[spec.hetero_dim] += shift;
            }
        }
    }
    let heterogeneous = (0..p)
        .filter(|&j| thetas.iter().any(|t| t[j] != thetas[0][j]))
        .collect();
    TrueParams {
        thetas,
        heterogeneous,
    }
}

/// Draws `n` observations with i.i.d. Pareto covariates. Linear responses add
/// Pareto noise centred at its mean; logistic responses are Bernoulli with
/// success probability `σ(xᵀθ)`.
pub fn gen_block<R: Rng + ?Sized>(
    block_id: usize,
    theta: &DVector<f64>,
    model: LossModel,
    n: usize,
    pareto: &ParetoSpec,
    rng: &mut R,
) -> Result<BlockData> {
    let p = theta.len();
    let noise_mean = pareto
        .mean()
        .ok_or_else(|| HetError::Domain("Pareto noise needs eta > 1 to be centred".into()))?;
    let mut design = DMatrix::zeros(n, p);
    let mut response = DVector::zeros(n);
    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..p {
            let x = pareto.sample(rng);
            design[(i, j)] = x;
            eta += x * theta[j];
        }
        response[i] = match model {
            LossModel::Linear => eta + pareto.sample(rng) - noise_mean,
            LossModel::Logistic => {
                let prob = 1.0 / (1.0 + (-eta).exp());
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    BlockData::new(block_id, design, response)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Reject when the statistic exceeds `Φ⁻¹(1 − α/p)`.
    #[default]
    Nominal,
    /// Reject when the statistic exceeds the empirical `(1 − α/p)` quantile of
    /// the same statistic over null replicates, per family and coordinate.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate Pareto-design GLM data and fit every block.
    #[default]
    Glm,
    /// Skip data generation: per-block estimates are exact Gaussians with
    /// known unit-per-observation variance. Used to check the harness and the
    /// statistics' null laws in isolation from estimation error.
    GaussianOracle,
}

/// Full description of a Monte Carlo experiment. Every field is materialized
/// when serialized so the echo reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub model: LossModel,
    /// Sparsity level; `None` runs the global null.
    pub beta: Option<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub gamma: f64,
    pub weight: WeightPreset,
    pub calibration: Calibration,
    pub hetero_dim: usize,
    pub base_value: f64,
    pub shift_scale: f64,
    pub pareto: ParetoSpec,
    pub coverage_levels: Vec<f64>,
    pub coverage_dim: usize,
    pub source: DataSource,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: 100,
            n: 500,
            p: 3,
            model: LossModel::Linear,
            beta: None,
            alpha: 0.05,
            replicates: 500,
            seed: 20240101,
            gamma: 2.0 / 3.0,
            weight: WeightPreset::Theory,
            calibration: Calibration::Nominal,
            hetero_dim: 2,
            base_value: 1.0,
            shift_scale: 4.5,
            pareto: ParetoSpec::default(),
            coverage_levels: vec![0.95, 0.9, 0.1, 0.05],
            coverage_dim: 0,
            source: DataSource::Glm,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HetError::Domain(m));
        if self.k < 2 {
            return Err(HetError::KTooSmall(self.k));
        }
        if self.p == 0 || self.n < self.p {
            return fail(format!("need 1 <= p <= n, got p={} n={}", self.p, self.n));
        }
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b <= 1.0) {
                return fail(format!("beta must lie in (0, 1], got {b}"));
            }
        }
        if self.hetero_dim >= self.p || self.coverage_dim >= self.p {
            return fail(format!(
                "hetero_dim {} / coverage_dim {} out of range for p={}",
                self.hetero_dim, self.coverage_dim, self.p
            ));
        }
        if !self.base_value.is_finite() || !(self.shift_scale.is_finite() && self.shift_scale >= 0.0) {
            return fail("base_value and shift_scale must be finite, shift_scale >= 0".into());
        }
        if self
            .coverage_levels
            .iter()
            .any(|&t| !(t > 0.0 && t < 1.0))
        {
            return fail("coverage levels must lie in (0, 1)".into());
        }
        self.pareto.validate()?;
        if self.source == DataSource::Glm && self.pareto.mean().is_none() {
            return fail("Pareto eta must exceed 1 for centred noise".into());
        }
        Ok(())
    }

    pub fn heterogeneity(&self) -> HeterogeneitySpec {
        HeterogeneitySpec {
            beta: self.beta,
            hetero_dim: self.hetero_dim,
            base_value: self.base_value,
            shift_scale: self.shift_scale,
        }
    }

    pub fn is_null(&self) -> bool {
        self.beta.is_none()
    }

    fn combined_weight(&self) -> f64 {
        combined_weight(self.n, self.k, self.weight)
    }
}

/// Statistics recorded by one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStats {
    /// `[W, T, TW]` for each coordinate.
    pub stats: Vec<[f64; 3]>,
    pub heterogeneous: Vec<usize>,
}

fn family_index(f: TestFamily) -> usize {
    match f {
        TestFamily::Wald => 0,
        TestFamily::Ect => 1,
        TestFamily::Combined => 2,
    }
}

/// Runs replicate `index` of `phase`. Null-phase replicates ignore `beta`.
pub fn simulate_replicate(cfg: &SimConfig, phase: Phase, index: u64) -> Result<ReplicateStats> {
    let mut rng = replicate_rng(cfg.seed, phase, index);
    let spec = match phase {
        Phase::Null => HeterogeneitySpec::null(cfg.base_value),
        Phase::Alternative => cfg.heterogeneity(),
    };
    let truth = gen_params(&spec, cfg.k, cfg.n, cfg.p, &mut rng);
    let weight = cfg.combined_weight();
    let stats = match cfg.source {
        DataSource::Glm => glm_replicate(cfg, &truth, weight, &mut rng)?,
        DataSource::GaussianOracle => oracle_replicate(cfg, &truth, weight, &mut rng)?,
    };
    Ok(ReplicateStats {
        stats,
        heterogeneous: truth.heterogeneous,
    })
}

fn glm_replicate(
    cfg: &SimConfig,
    truth: &TrueParams,
    weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 3]>> {
    let settings = SolverSettings::default();
    let mut full: Vec<LocalFit> = Vec::with_capacity(cfg.k);
    let mut first = Vec::with_capacity(cfg.k);
    let mut second = Vec::with_capacity(cfg.k);
    for (k, theta) in truth.thetas.iter().enumerate() {
        let data = gen_block(k, theta, cfg.model, cfg.n, &cfg.pareto, rng)?;
        let (a, b) = split_block(&data, cfg.gamma, SplitMode::Prefix)?;
        full.push(fit_block(&data, cfg.model, &settings)?);
        first.push(fit_block(&a, cfg.model, &settings)?);
        second.push(fit_block(&b, cfg.model, &settings)?);
    }
    (0..cfg.p)
        .map(|dim| {
            let w = wald_statistic(&DimensionSlice::from_fits(&full, dim)?)?.statistic;
            let t = ect_statistic(&first, &second, dim, cfg.gamma)?.statistic;
            Ok([w, t, combine(w, t, weight)])
        })
        .collect()
}

// Sample-mean model: block k's first and second parts have means
// θ_k + N(0, 1/n_part), the full-sample estimate is their size-weighted
// average, and all variances are the exact ones.
fn oracle_replicate(
    cfg: &SimConfig,
    truth: &TrueParams,
    weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 3]>> {
    let n = cfg.n as f64;
    let n1 = crate::inference::first_part_len(cfg.n, cfg.gamma);
    let n2 = cfg.n - n1;
    if n1 == 0 || n2 == 0 {
        return Err(HetError::SplitTooSmall {
            first: n1,
            second: n2,
            p: 1,
        });
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let mut draws = vec![[0.0f64; 2]; cfg.k * cfg.p];
    for k in 0..cfg.k {
        for j in 0..cfg.p {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let mu = truth.thetas[k][j];
            draws[k * cfg.p + j] = [mu + z1 / n1f.sqrt(), mu + z2 / n2f.sqrt()];
        }
    }
    (0..cfg.p)
        .map(|dim| {
            let parts = |k: usize| draws[k * cfg.p + dim];
            let estimates = (0..cfg.k)
                .map(|k| (n1f * parts(k)[0] + n2f * parts(k)[1]) / n)
                .collect();
            let slice = DimensionSlice::new(dim, estimates, vec![1.0 / n; cfg.k])?;
            let w = wald_statistic(&slice)?.statistic;
            let blocks: Vec<EctBlock> = (0..cfg.k)
                .map(|k| EctBlock {
                    label: k,
                    first_estimate: parts(k)[0],
                    second_estimate: parts(k)[1],
                    second_se: 1.0 / n2f.sqrt(),
                })
                .collect();
            let t = extreme_contrast(&blocks, cfg.gamma)?.statistic;
            Ok([w, t, combine(w, t, weight)])
        })
        .collect()
}

/// Outcome of a batch of replicates: usable statistics plus the number that
/// were discarded after a numerical failure.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateBatch {
    pub replicates: Vec<ReplicateStats>,
    pub failed: usize,
}

/// Runs `count` replicates of `phase` in parallel on the current rayon pool.
///
/// Numerical failures (non-convergence, singular curvature, zero variance)
/// discard the replicate. Any other error aborts the batch since it would
/// recur in every replicate.
pub fn run_batch(cfg: &SimConfig, phase: Phase, count: usize) -> Result<ReplicateBatch> {
    let results: Vec<Result<ReplicateStats>> = (0..count as u64)
        .into_par_iter()
        .map(|r| simulate_replicate(cfg, phase, r))
        .collect();
    let mut replicates = Vec::with_capacity(count);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(s) => replicates.push(s),
            Err(e) if e.is_numerical() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ReplicateBatch { replicates, failed })
}

/// Type-1 empirical quantile: the smallest order statistic with ECDF ≥ q.
pub fn empirical_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Some(sorted[idx])
}

/// Per-family, per-coordinate critical values: `crit[dim][family]`.
pub fn empirical_critical_values(null: &[ReplicateStats], p: usize, alpha: f64) -> Option<Vec<[f64; 3]>> {
    let q = 1.0 - alpha / p as f64;
    (0..p)
        .map(|dim| {
            let mut out = [0.0; 3];
            for (f, slot) in out.iter_mut().enumerate() {
                let col: Vec<f64> = null.iter().map(|r| r.stats[dim][f]).collect();
                *slot = empirical_quantile(&col, q)?;
            }
            Some(out)
        })
        .collect()
}

pub fn nominal_critical_values(p: usize, alpha: f64) -> Vec<[f64; 3]> {
    let z = normal::quantile(1.0 - alpha / p as f64);
    vec![[z; 3]; p]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: TestFamily,
    /// Fraction of replicates rejecting at least one homogeneous coordinate.
    pub fwer: Option<f64>,
    /// Among replicates with a heterogeneous coordinate, the fraction in which
    /// every heterogeneous coordinate is rejected.
    pub power: Option<f64>,
    /// Critical value applied to each coordinate.
    pub critical_values: Vec<f64>,
}

/// Empirical FWER and power of each family with rejection rule
/// `stat > crit[dim][family]`.
pub fn aggregate(replicates: &[ReplicateStats], critical: &[[f64; 3]]) -> Vec<FamilyResult> {
    TestFamily::ALL
        .iter()
        .map(|&family| {
            let f = family_index(family);
            let mut false_hits = 0usize;
            let mut alt_total = 0usize;
            let mut alt_hits = 0usize;
            for rep in replicates {
                let rejected = |dim: usize| rep.stats[dim][f] > critical[dim][f];
                let any_false = (0..critical.len())
                    .filter(|d| !rep.heterogeneous.contains(d))
                    .any(rejected);
                false_hits += any_false as usize;
                if !rep.heterogeneous.is_empty() {
                    alt_total += 1;
                    alt_hits += rep.heterogeneous.iter().all(|&d| rejected(d)) as usize;
                }
            }
            let rate = |hits: usize, total: usize| (total > 0).then(|| hits as f64 / total as f64);
            FamilyResult {
                family,
                fwer: rate(false_hits, replicates.len()),
                power: rate(alt_hits, alt_total),
                critical_values: critical.iter().map(|c| c[f]).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub level: f64,
    pub wald: Option<f64>,
    pub combined: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    /// Coordinate the coverage refers to.
    pub dim: usize,
    pub replicates_used: usize,
    pub replicates_failed: usize,
    pub rows: Vec<CoverageRow>,
}

/// Fraction of null replicates with statistic `≤ Φ⁻¹(τ)` for each level τ.
pub fn coverage_from(replicates: &[ReplicateStats], dim: usize, levels: &[f64]) -> Vec<CoverageRow> {
    let frac = |f: usize, z: f64| {
        (!replicates.is_empty()).then(|| {
            replicates.iter().filter(|r| r.stats[dim][f] <= z).count() as f64
                / replicates.len() as f64
        })
    };
    levels
        .iter()
        .map(|&level| {
            let z = normal::quantile(level);
            CoverageRow {
                level,
                wald: frac(0, z),
                combined: frac(2, z),
            }
        })
        .collect()
}

/// Empirical coverage of W and TW under the null configuration.
pub fn coverage_table(cfg: &SimConfig, levels: &[f64]) -> Result<CoverageTable> {
    cfg.validate()?;
    if !cfg.is_null() {
        return Err(HetError::Domain("coverage requires a null configuration (beta unset)".into()));
    }
    let batch = run_batch(cfg, Phase::Null, cfg.replicates)?;
    Ok(CoverageTable {
        dim: cfg.coverage_dim,
        replicates_used: batch.replicates.len(),
        replicates_failed: batch.failed,
        rows: coverage_from(&batch.replicates, cfg.coverage_dim, levels),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub replicates_failed: usize,
    /// Used replicates in which some coordinate was truly heterogeneous.
    pub heterogeneous_replicates: usize,
    /// Null replicates behind empirical critical values, if any.
    pub calibration_replicates_used: Option<usize>,
    pub calibration_replicates_failed: Option<usize>,
    pub families: Vec<FamilyResult>,
    /// Present for null configurations.
    pub coverage: Option<CoverageTable>,
    /// Wall-clock time; kept out of serialized output so that it stays
    /// byte-identical across runs.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl SimResult {
    pub fn family(&self, family: TestFamily) -> &FamilyResult {
        &self.families[family_index(family)]
    }
}

/// Runs the configured experiment.
///
/// Null configurations evaluate size (and coverage) on null replicates.
/// Alternative configurations evaluate power and FWER on alternative
/// replicates; with empirical calibration a separate batch of null replicates
/// fixes the critical values first.
pub fn run_experiment(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let start = Instant::now();
    let main_phase = if cfg.is_null() {
        Phase::Null
    } else {
        Phase::Alternative
    };
    let main = run_batch(cfg, main_phase, cfg.replicates)?;

    let (critical, calib_used, calib_failed) = match cfg.calibration {
        Calibration::Nominal => (nominal_critical_values(cfg.p, cfg.alpha), None, None),
        Calibration::Empirical => {
            let null_batch = if cfg.is_null() {
                main.clone()
            } else {
                run_batch(cfg, Phase::Null, cfg.replicates)?
            };
            let crit = empirical_critical_values(&null_batch.replicates, cfg.p, cfg.alpha)
                .ok_or_else(|| {
                    HetError::NonConvergence {
                        iterations: SolverSettings::default().max_iterations,
                    }
                })?;
            (crit, Some(null_batch.replicates.len()), Some(null_batch.failed))
        }
    };

    let families = aggregate(&main.replicates, &critical);
    let coverage = cfg.is_null().then(|| CoverageTable {
        dim: cfg.coverage_dim,
        replicates_used: main.replicates.len(),
        replicates_failed: main.failed,
        rows: coverage_from(&main.replicates, cfg.coverage_dim, &cfg.coverage_levels),
    });
    Ok(SimResult {
        replicates_requested: cfg.replicates,
        replicates_used: main.replicates.len(),
        replicates_failed: main.failed,
        heterogeneous_replicates: main
            .replicates
            .iter()
            .filter(|r| !r.heterogeneous.is_empty())
            .count(),
        calibration_replicates_used: calib_used,
        calibration_replicates_failed: calib_failed,
        families,
        coverage,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
