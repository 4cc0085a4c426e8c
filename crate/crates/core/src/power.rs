//! Closed-form diagnostics for sparse local alternatives.
//!
//! The alternative shifts a fraction `K^{-β}` of blocks by
//! `μ(K, n) = √(2 c log K / n)` in one coordinate with a common per-block
//! standard deviation σ. The formulas below are the leading-order signal to
//! noise ratios of the two tests and the resulting consistency regimes; they
//! assume equal variances across blocks and are not extended beyond that.

use crate::error::{HetError, Result};
use crate::normal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalAlternative {
    pub k: usize,
    pub n: usize,
    pub beta: f64,
    /// Signal constant c in `μ = √(2 c log K / n)`.
    pub c: f64,
    pub sigma: f64,
    pub gamma: f64,
}

impl LocalAlternative {
    pub fn new(k: usize, n: usize, beta: f64, c: f64, sigma: f64, gamma: f64) -> Result<Self> {
        let alt = Self {
            k,
            n,
            beta,
            c,
            sigma,
            gamma,
        };
        alt.validate()?;
        Ok(alt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(HetError::KTooSmall(self.k));
        }
        if self.n == 0 {
            return Err(HetError::Domain("n must be positive".into()));
        }
        in_open_unit("beta", self.beta)?;
        in_open_unit("gamma", self.gamma)?;
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(HetError::Domain(format!("c must be positive, got {}", self.c)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(HetError::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Fraction of shifted blocks, `K^{-β}`.
    pub fn sparsity(&self) -> f64 {
        (self.k as f64).powf(-self.beta)
    }

    /// Shift size `√(2 c log K / n)`.
    pub fn shift(&self) -> f64 {
        (2.0 * self.c * (self.k as f64).ln() / self.n as f64).sqrt()
    }
}

fn in_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(HetError::Domain(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// `ρ(β) = (1 − √(1 − β))²`.
pub fn detection_boundary(beta: f64) -> Result<f64> {
    in_open_unit("beta", beta)?;
    let r = 1.0 - (1.0 - beta).sqrt();
    Ok(r * r)
}

/// `√2 · c · σ⁻² · K^{0.5−β} · log K`.
pub fn snr_wald(alt: &LocalAlternative) -> f64 {
    let k = alt.k as f64;
    std::f64::consts::SQRT_2 * alt.c / (alt.sigma * alt.sigma) * k.powf(0.5 - alt.beta) * k.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EctSnr {
    /// `σ⁻¹ √(2 γ c log K)`.
    pub value: f64,
    /// Whether `c > σ² ρ(β) / (1 − γ)`, i.e. the extreme blocks are selected
    /// correctly. Below it the value overstates the signal.
    pub selection_valid: bool,
}

pub fn snr_ect(alt: &LocalAlternative) -> Result<EctSnr> {
    let k = alt.k as f64;
    let value = (2.0 * alt.gamma * alt.c * k.ln()).sqrt() / alt.sigma;
    let threshold = alt.sigma * alt.sigma * detection_boundary(alt.beta)? / (1.0 - alt.gamma);
    Ok(EctSnr {
        value,
        selection_valid: alt.c > threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Power tends to one.
    Consistent,
    /// Power tends to the nominal per-dimension level.
    Inconsistent,
    /// Signal lies between the two thresholds, where no limit is known.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeVerdict {
    pub wald: Verdict,
    pub ect: Verdict,
    pub combined: Verdict,
}

/// Asymptotic power regime of each test for the given alternative, treating
/// `alt.c` as the limit `c_∞` and `[sigma_minus, sigma_plus]` as the range of
/// per-block standard deviations.
pub fn classify_regime(
    alt: &LocalAlternative,
    sigma_minus: f64,
    sigma_plus: f64,
) -> Result<RegimeVerdict> {
    alt.validate()?;
    if !(sigma_minus > 0.0 && sigma_minus <= sigma_plus && sigma_plus.is_finite()) {
        return Err(HetError::Domain(format!(
            "need 0 < sigma_minus <= sigma_plus, got {sigma_minus} and {sigma_plus}"
        )));
    }
    let rho = detection_boundary(alt.beta)?;
    let lower = rho * sigma_minus * sigma_minus / (1.0 - alt.gamma);
    let upper = rho * sigma_plus * sigma_plus / (1.0 - alt.gamma);
    let dense = alt.beta <= 0.5;

    let wald = if dense {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    };
    let ect = if alt.c > upper {
        Verdict::Consistent
    } else if alt.c < lower {
        Verdict::Inconsistent
    } else {
        Verdict::Boundary
    };
    let combined = if wald == Verdict::Consistent || ect == Verdict::Consistent {
        Verdict::Consistent
    } else if !dense && alt.c < lower {
        Verdict::Inconsistent
    } else {
        Verdict::Boundary
    };
    Ok(RegimeVerdict { wald, ect, combined })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRecommendation {
    pub gamma: f64,
    /// Two-term error bound at the recommended γ.
    pub total_error: f64,
    /// `(γ, ln total error)` over the whole grid.
    pub grid: Vec<(f64, f64)>,
}

/// Natural log of the two-term type II error bound for split fraction γ:
/// a ranking error `Φ(−√(n(1−γ))μ − √(2 log K))` plus a testing error
/// `Φ(−√(nγ/2)μ)`.
pub fn log_split_error(n: f64, mu: f64, k: f64, gamma: f64) -> f64 {
    let ranking = (n * (1.0 - gamma)).sqrt() * mu + (2.0 * k.ln()).sqrt();
    let testing = (n * gamma / 2.0).sqrt() * mu;
    let a = normal::log_upper_tail(ranking);
    let b = normal::log_upper_tail(testing);
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Grid search (step 0.01 over (0, 1)) for the split fraction minimizing the
/// error bound. The bound depends on n and μ only through nμ².
pub fn gamma_recommendation(n: usize, mu: f64, k: usize) -> Result<GammaRecommendation> {
    if n == 0 {
        return Err(HetError::Domain("n must be positive".into()));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(HetError::Domain(format!("mu must be positive, got {mu}")));
    }
    if k < 2 {
        return Err(HetError::KTooSmall(k));
    }
    let grid: Vec<(f64, f64)> = (1..100)
        .map(|i| {
            let g = i as f64 / 100.0;
            (g, log_split_error(n as f64, mu, k as f64, g))
        })
        .collect();
    let &(gamma, log_err) = grid
        .iter()
        .fold(None::<&(f64, f64)>, |best, cand| match best {
            Some(b) if b.1 <= cand.1 => Some(b),
            _ => Some(cand),
        })
        .expect("non-empty grid");
    Ok(GammaRecommendation {
        gamma,
        total_error: log_err.exp(),
        grid,
    })
}
