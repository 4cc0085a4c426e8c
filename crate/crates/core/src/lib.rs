//! Detection of heterogeneous parameter components across distributed data
//! blocks.
//!
//! Each block fits a local M-estimator ([`glm`]); a central step combines the
//! per-block estimates into three per-dimension tests ([`inference`]): a
//! re-normalized Wald statistic, an extreme contrast test built on sample
//! splitting, and their weighted combination. [`simlab`] runs Monte Carlo
//! size/power studies and [`power`] evaluates closed-form local-alternative
//! diagnostics.

pub mod error;
pub mod glm;
pub mod inference;
pub mod normal;
pub mod power;
pub mod simlab;

pub use error::{HetError, Result};
pub use glm::{fit_block, sandwich_variance, BlockData, LocalFit, LossModel, SolverSettings};
pub use inference::{
    combined_statistic, combined_weight, decide, ect_statistic, pairwise_weights, split_block,
    wald_statistic, CombinedOutcome, DimensionSlice, EctOutcome, HeterogeneityReport, SplitMode,
    TestFamily, WaldOutcome, WeightPreset,
};
pub use simlab::{SimConfig, SimResult};
