//! Per-dimension heterogeneity tests over K local fits.
//!
//! All three statistics are asymptotically N(0, 1) under the null and are
//! referred to the upper tail: p = 1 − Φ(stat). Family-wise error over the p
//! dimensions is controlled by Bonferroni, rejecting when p-value < α/p.

use crate::error::{HetError, Result};
use crate::glm::{BlockData, LocalFit};
use crate::normal;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The K per-block estimates of one coordinate and their variances
/// `λ_k² = σ̂_k² / n_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSlice {
    pub dim: usize,
    estimates: Vec<f64>,
    variances: Vec<f64>,
}

impl DimensionSlice {
    pub fn new(dim: usize, estimates: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if estimates.len() != variances.len() {
            return Err(HetError::ShapeMismatch(format!(
                "{} estimates but {} variances",
                estimates.len(),
                variances.len()
            )));
        }
        if estimates.len() < 2 {
            return Err(HetError::KTooSmall(estimates.len()));
        }
        if estimates.iter().any(|v| !v.is_finite()) {
            return Err(HetError::NonFiniteInput("estimates"));
        }
        check_variances(&variances)?;
        Ok(Self {
            dim,
            estimates,
            variances,
        })
    }

    /// Collects coordinate `dim` from full-sample fits.
    pub fn from_fits(fits: &[LocalFit], dim: usize) -> Result<Self> {
        let mut estimates = Vec::with_capacity(fits.len());
        let mut variances = Vec::with_capacity(fits.len());
        for fit in fits {
            if dim >= fit.theta_hat.len() {
                return Err(HetError::ShapeMismatch(format!(
                    "dimension {dim} out of range for block {}",
                    fit.block_id
                )));
            }
            estimates.push(fit.theta_hat[dim]);
            variances.push(fit.variance_of_mean(dim));
        }
        Self::new(dim, estimates, variances)
    }

    pub fn k(&self) -> usize {
        self.estimates.len()
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

fn check_variances(variances: &[f64]) -> Result<()> {
    match variances
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v.is_finite()))
    {
        Some((block, &value)) => Err(HetError::NonPositiveVariance { block, value }),
        None => Ok(()),
    }
}

/// Entries of `R_Kᵀ(R_K Λ R_Kᵀ)⁻¹R_K` for diagonal `Λ`, in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseWeights {
    precisions: Vec<f64>,
    total: f64,
}

impl PairwiseWeights {
    /// `r_{k1,k2} = λ_{k1}⁻² λ_{k2}⁻² / Σ_l λ_l⁻²`.
    pub fn weight(&self, k1: usize, k2: usize) -> f64 {
        self.precisions[k1] * self.precisions[k2] / self.total
    }

    pub fn k(&self) -> usize {
        self.precisions.len()
    }
}

pub fn pairwise_weights(variances: &[f64]) -> Result<PairwiseWeights> {
    if variances.len() < 2 {
        return Err(HetError::KTooSmall(variances.len()));
    }
    check_variances(variances)?;
    let precisions: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let total = precisions.iter().sum();
    Ok(PairwiseWeights { precisions, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// Un-normalized homogeneity quadratic form, χ²(K−1) under the null.
    pub quad_form: f64,
    pub df_equiv: usize,
}

/// Re-normalized Wald statistic `(Q − (K−1)) / √(2K−2)`.
///
/// `Q` is evaluated in O(K) as the precision-weighted sum of squared
/// deviations from the precision-weighted mean, which equals the contrast
/// quadratic form `θᵀRᵀ(RΛRᵀ)⁻¹Rθ`.
pub fn wald_statistic(slice: &DimensionSlice) -> Result<WaldOutcome> {
    let k = slice.k();
    if k < 2 {
        return Err(HetError::KTooSmall(k));
    }
    check_variances(slice.variances())?;
    let precisions: Vec<f64> = slice.variances().iter().map(|v| 1.0 / v).collect();
    let total: f64 = precisions.iter().sum();
    let mean = precisions
        .iter()
        .zip(slice.estimates())
        .map(|(w, t)| w * t)
        .sum::<f64>()
        / total;
    let quad_form: f64 = precisions
        .iter()
        .zip(slice.estimates())
        .map(|(w, t)| w * (t - mean) * (t - mean))
        .sum();
    let df = (k - 1) as f64;
    let statistic = (quad_form - df) / (2.0 * df).sqrt();
    Ok(WaldOutcome {
        statistic,
        p_value: normal::upper_tail(statistic),
        quad_form,
        df_equiv: k - 1,
    })
}

/// Warning text when K is not small relative to the smallest block.
pub fn wald_guard(k: usize, n_min: usize) -> Option<String> {
    (k >= n_min).then(|| {
        format!(
            "K = {k} >= n_min = {n_min}: the Wald statistic's null calibration needs K much smaller than n_min"
        )
    })
}

/// How a block is ordered before splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Rows in their stored order.
    #[default]
    Prefix,
    /// Rows permuted by a seeded shuffle first.
    SeededShuffle { seed: u64 },
}

/// Size of the first (selection) part, `⌊(1−γ)n⌋`.
pub fn first_part_len(n: usize, gamma: f64) -> usize {
    // the epsilon absorbs representation error such as (1 - 0.9) * 10 = 0.99..98
    ((1.0 - gamma) * n as f64 + 1e-9).floor() as usize
}

/// Splits a block into a selection part of `⌊(1−γ)n⌋` rows and a testing part
/// with the remainder.
pub fn split_block(data: &BlockData, gamma: f64, mode: SplitMode) -> Result<(BlockData, BlockData)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(HetError::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let n = data.n();
    let p = data.p();
    let first = first_part_len(n, gamma);
    let second = n - first;
    if first < p.max(1) || second < p.max(1) {
        return Err(HetError::SplitTooSmall { first, second, p });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let SplitMode::SeededShuffle { seed } = mode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    Ok((
        data.select_rows(&order[..first]),
        data.select_rows(&order[first..]),
    ))
}

/// Summary a block contributes to the extreme contrast test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EctBlock {
    pub label: usize,
    pub first_estimate: f64,
    pub second_estimate: f64,
    pub second_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EctOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub k_max: usize,
    pub k_min: usize,
    /// First-split estimates at the selected blocks.
    pub max_estimate: f64,
    pub min_estimate: f64,
    pub gamma: f64,
}

/// Picks the extreme blocks on the first-split estimates and contrasts their
/// second-split estimates.
///
/// Ties go to the smallest label. When every first-split estimate is equal the
/// minimum is taken among the remaining blocks so the two labels differ.
pub fn extreme_contrast(blocks: &[EctBlock], gamma: f64) -> Result<EctOutcome> {
    if blocks.len() < 2 {
        return Err(HetError::KTooSmall(blocks.len()));
    }
    if blocks
        .iter()
        .any(|b| !b.first_estimate.is_finite() || !b.second_estimate.is_finite())
    {
        return Err(HetError::NonFiniteInput("split estimates"));
    }
    let better = |a: &EctBlock, b: &EctBlock, larger: bool| {
        let ord = a.first_estimate.total_cmp(&b.first_estimate);
        let ord = if larger { ord } else { ord.reverse() };
        ord.then(b.label.cmp(&a.label)).is_gt()
    };
    let pick = |larger: bool, skip: Option<usize>| {
        blocks
            .iter()
            .filter(|b| Some(b.label) != skip)
            .fold(None::<&EctBlock>, |best, b| match best {
                Some(cur) if !better(b, cur, larger) => Some(cur),
                _ => Some(b),
            })
            .expect("at least one block remains")
    };
    let hi = pick(true, None);
    let mut lo = pick(false, None);
    if lo.label == hi.label {
        lo = pick(false, Some(hi.label));
    }
    for b in [hi, lo] {
        let v = b.second_se * b.second_se;
        if !(v > 0.0 && v.is_finite()) {
            return Err(HetError::NonPositiveVariance {
                block: b.label,
                value: v,
            });
        }
    }
    let statistic = (hi.second_estimate - lo.second_estimate)
        / (hi.second_se * hi.second_se + lo.second_se * lo.second_se).sqrt();
    Ok(EctOutcome {
        statistic,
        p_value: normal::upper_tail(statistic),
        k_max: hi.label,
        k_min: lo.label,
        max_estimate: hi.first_estimate,
        min_estimate: lo.first_estimate,
        gamma,
    })
}

/// Extreme contrast statistic for coordinate `dim` from the two sets of split
/// fits. Both slices must list the same blocks in the same order.
///
/// The second-split standard error uses the actual size of the testing part.
pub fn ect_statistic(
    first_fits: &[LocalFit],
    second_fits: &[LocalFit],
    dim: usize,
    gamma: f64,
) -> Result<EctOutcome> {
    if first_fits.len() != second_fits.len() {
        return Err(HetError::MissingFit(format!(
            "{} first-split fits vs {} second-split fits",
            first_fits.len(),
            second_fits.len()
        )));
    }
    let mut blocks = Vec::with_capacity(first_fits.len());
    for (a, b) in first_fits.iter().zip(second_fits) {
        if a.block_id != b.block_id {
            return Err(HetError::MissingFit(format!(
                "block {} paired with block {}",
                a.block_id, b.block_id
            )));
        }
        if !a.converged || !b.converged {
            return Err(HetError::MissingFit(format!(
                "block {} has an unconverged split fit",
                a.block_id
            )));
        }
        if dim >= a.theta_hat.len() || dim >= b.theta_hat.len() {
            return Err(HetError::ShapeMismatch(format!("dimension {dim} out of range")));
        }
        blocks.push(EctBlock {
            label: a.block_id,
            first_estimate: a.theta_hat[dim],
            second_estimate: b.theta_hat[dim],
            second_se: b.standard_error(dim),
        });
    }
    extreme_contrast(&blocks, gamma)
}

/// Down-weighting rule for the Wald part of the combined statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightPreset {
    /// `min(n_min / (K ln K), 1)`.
    #[default]
    Theory,
    /// `min(n_min / K^1.1, 1)`.
    Simulation,
}

impl std::str::FromStr for WeightPreset {
    type Err = HetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(WeightPreset::Theory),
            "simulation" => Ok(WeightPreset::Simulation),
            other => Err(HetError::Domain(format!("unknown weight preset '{other}'"))),
        }
    }
}

pub fn combined_weight(n_min: usize, k: usize, preset: WeightPreset) -> f64 {
    let n = n_min as f64;
    let k = k as f64;
    let raw = match preset {
        WeightPreset::Theory => n / (k * k.ln()),
        WeightPreset::Simulation => n / k.powf(1.1),
    };
    raw.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub weight: f64,
}

/// `(W·r + T) / √(r² + 1)`.
pub fn combine(wald: f64, ect: f64, weight: f64) -> f64 {
    (wald * weight + ect) / (weight * weight + 1.0).sqrt()
}

pub fn combined_statistic(wald: &WaldOutcome, ect: &EctOutcome, weight: f64) -> Result<CombinedOutcome> {
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(HetError::Domain(format!("combined weight must be positive, got {weight}")));
    }
    let statistic = combine(wald.statistic, ect.statistic, weight);
    Ok(CombinedOutcome {
        statistic,
        p_value: normal::upper_tail(statistic),
        weight,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFamily {
    Wald,
    Ect,
    Combined,
}

impl TestFamily {
    pub const ALL: [TestFamily; 3] = [TestFamily::Wald, TestFamily::Ect, TestFamily::Combined];

    pub fn name(self) -> &'static str {
        match self {
            TestFamily::Wald => "wald",
            TestFamily::Ect => "ect",
            TestFamily::Combined => "combined",
        }
    }
}

/// All three outcomes for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionOutcome {
    pub dim: usize,
    pub wald: WaldOutcome,
    pub ect: EctOutcome,
    pub combined: CombinedOutcome,
}

impl DimensionOutcome {
    pub fn p_value(&self, family: TestFamily) -> f64 {
        match family {
            TestFamily::Wald => self.wald.p_value,
            TestFamily::Ect => self.ect.p_value,
            TestFamily::Combined => self.combined.p_value,
        }
    }

    pub fn statistic(&self, family: TestFamily) -> f64 {
        match family {
            TestFamily::Wald => self.wald.statistic,
            TestFamily::Ect => self.ect.statistic,
            TestFamily::Combined => self.combined.statistic,
        }
    }
}

/// Rejected coordinates per test family, each sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejections {
    pub wald: Vec<usize>,
    pub ect: Vec<usize>,
    pub combined: Vec<usize>,
}

impl Rejections {
    pub fn get(&self, family: TestFamily) -> &[usize] {
        match family {
            TestFamily::Wald => &self.wald,
            TestFamily::Ect => &self.ect,
            TestFamily::Combined => &self.combined,
        }
    }

    fn get_mut(&mut self, family: TestFamily) -> &mut Vec<usize> {
        match family {
            TestFamily::Wald => &mut self.wald,
            TestFamily::Ect => &mut self.ect,
            TestFamily::Combined => &mut self.combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub alpha: f64,
    pub p: usize,
    /// Per-dimension p-value threshold `α / p`.
    pub p_threshold: f64,
    /// Equivalent statistic threshold `Φ⁻¹(1 − α/p)`.
    pub critical_value: f64,
    pub per_dim: Vec<DimensionOutcome>,
    pub rejected: Rejections,
    pub warnings: Vec<String>,
}

/// Bonferroni decisions: reject coordinate j for a family iff its p-value is
/// strictly below `α / p`.
pub fn decide(outcomes: Vec<DimensionOutcome>, alpha: f64, p: usize) -> Result<HeterogeneityReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HetError::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if p == 0 {
        return Err(HetError::Domain("p must be positive".into()));
    }
    let p_threshold = alpha / p as f64;
    let mut per_dim = outcomes;
    per_dim.sort_by_key(|o| o.dim);
    let mut rejected = Rejections::default();
    for family in TestFamily::ALL {
        let set = rejected.get_mut(family);
        set.extend(
            per_dim
                .iter()
                .filter(|o| o.p_value(family) < p_threshold)
                .map(|o| o.dim),
        );
    }
    Ok(HeterogeneityReport {
        alpha,
        p,
        p_threshold,
        critical_value: normal::quantile(1.0 - p_threshold),
        per_dim,
        rejected,
        warnings: Vec::new(),
    })
}

/// Fits that feed one run of the three tests.
pub struct BlockFits<'a> {
    pub full: &'a [LocalFit],
    pub first: &'a [LocalFit],
    pub second: &'a [LocalFit],
}

/// Evaluates all three tests on every coordinate and applies the Bonferroni
/// rule.
pub fn run_tests(
    fits: &BlockFits<'_>,
    gamma: f64,
    alpha: f64,
    preset: WeightPreset,
) -> Result<HeterogeneityReport> {
    let k = fits.full.len();
    if k < 2 {
        return Err(HetError::KTooSmall(k));
    }
    let p = fits.full[0].theta_hat.len();
    let n_min = fits.full.iter().map(|f| f.n_used).min().unwrap_or(0);
    let weight = combined_weight(n_min, k, preset);
    let outcomes = (0..p)
        .map(|dim| {
            let wald = wald_statistic(&DimensionSlice::from_fits(fits.full, dim)?)?;
            let ect = ect_statistic(fits.first, fits.second, dim, gamma)?;
            let combined = combined_statistic(&wald, &ect, weight)?;
            Ok(DimensionOutcome {
                dim,
                wald,
                ect,
                combined,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = decide(outcomes, alpha, p)?;
    report.warnings.extend(wald_guard(k, n_min));
    Ok(report)
}
