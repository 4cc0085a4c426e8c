//! Output documents and their JSON / flat CSV encodings.

use hetdetect_core::inference::DimensionOutcome;
use hetdetect_core::power::{EctSnr, GammaRecommendation, RegimeVerdict};
use hetdetect_core::simlab::CoverageTable;
use hetdetect_core::{CombinedOutcome, HeterogeneityReport, SimResult, TestFamily, WaldOutcome};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "hetdetect-report/1";

pub fn tool_version() -> String {
    format!("hetdetect/{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Top-level output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<C, R> {
    pub schema: String,
    pub version: String,
    pub command: String,
    pub config: C,
    pub results: R,
}

impl<C, R> Document<C, R> {
    pub fn new(command: &str, config: C, results: R) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            version: tool_version(),
            command: command.to_string(),
            config,
            results,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EctReport {
    pub statistic: f64,
    pub p_value: f64,
    pub max_block: String,
    pub min_block: String,
    pub max_estimate: f64,
    pub min_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimReport {
    /// 1-based position of the feature in the manifest.
    pub dim: usize,
    pub feature: String,
    pub wald: WaldOutcome,
    pub ect: EctReport,
    pub combined: CombinedOutcome,
}

/// Rejected dimensions per family, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectedDims {
    pub wald: Vec<usize>,
    pub ect: Vec<usize>,
    pub combined: Vec<usize>,
}

impl RejectedDims {
    pub fn get(&self, family: TestFamily) -> &[usize] {
        match family {
            TestFamily::Wald => &self.wald,
            TestFamily::Ect => &self.ect,
            TestFamily::Combined => &self.combined,
        }
    }
}

/// Blocks holding the largest and smallest first-split estimate of a feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeRow {
    pub dim: usize,
    pub feature: String,
    pub max_block: String,
    pub min_block: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResults {
    pub k: usize,
    pub p: usize,
    pub n_min: usize,
    pub alpha: f64,
    pub p_threshold: f64,
    pub critical_value: f64,
    pub weight: f64,
    pub features: Vec<String>,
    pub blocks: Vec<String>,
    pub per_dim: Vec<DimReport>,
    pub rejected: RejectedDims,
    pub extremes: Vec<ExtremeRow>,
    pub warnings: Vec<String>,
}

impl TestResults {
    pub fn from_report(
        report: &HeterogeneityReport,
        features: &[String],
        blocks: &[String],
        n_min: usize,
    ) -> Self {
        let label = |k: usize| blocks[k].clone();
        let per_dim: Vec<DimReport> = report
            .per_dim
            .iter()
            .map(|o: &DimensionOutcome| DimReport {
                dim: o.dim + 1,
                feature: features[o.dim].clone(),
                wald: o.wald,
                ect: EctReport {
                    statistic: o.ect.statistic,
                    p_value: o.ect.p_value,
                    max_block: label(o.ect.k_max),
                    min_block: label(o.ect.k_min),
                    max_estimate: o.ect.max_estimate,
                    min_estimate: o.ect.min_estimate,
                },
                combined: o.combined,
            })
            .collect();
        let one_based = |v: &[usize]| v.iter().map(|d| d + 1).collect();
        let extremes = per_dim
            .iter()
            .map(|d| ExtremeRow {
                dim: d.dim,
                feature: d.feature.clone(),
                max_block: d.ect.max_block.clone(),
                min_block: d.ect.min_block.clone(),
            })
            .collect();
        Self {
            k: blocks.len(),
            p: report.p,
            n_min,
            alpha: report.alpha,
            p_threshold: report.p_threshold,
            critical_value: report.critical_value,
            weight: report.per_dim.first().map_or(f64::NAN, |o| o.combined.weight),
            features: features.to_vec(),
            blocks: blocks.to_vec(),
            per_dim,
            rejected: RejectedDims {
                wald: one_based(&report.rejected.wald),
                ect: one_based(&report.rejected.ect),
                combined: one_based(&report.rejected.combined),
            },
            extremes,
            warnings: report.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCalcResults {
    pub sparsity: f64,
    pub shift: f64,
    pub detection_boundary: f64,
    pub snr_wald: f64,
    pub snr_ect: EctSnr,
    pub regime: RegimeVerdict,
}

/// One CSV output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub entity: String,
    pub dim: String,
    pub metric: String,
    pub value: String,
}

fn row(entity: &str, dim: Option<usize>, metric: &str, value: impl ToString) -> CsvRow {
    CsvRow {
        entity: entity.to_string(),
        dim: dim.map(|d| d.to_string()).unwrap_or_default(),
        metric: metric.to_string(),
        value: value.to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub trait CsvRows {
    fn csv_rows(&self) -> Vec<CsvRow>;
}

impl CsvRows for TestResults {
    fn csv_rows(&self) -> Vec<CsvRow> {
        let mut out = vec![
            row("report", None, "k", self.k),
            row("report", None, "p", self.p),
            row("report", None, "n_min", self.n_min),
            row("report", None, "alpha", self.alpha),
            row("report", None, "critical_value", self.critical_value),
            row("report", None, "weight", self.weight),
        ];
        for d in &self.per_dim {
            let dim = Some(d.dim);
            let families = [
                (TestFamily::Wald, d.wald.statistic, d.wald.p_value),
                (TestFamily::Ect, d.ect.statistic, d.ect.p_value),
                (TestFamily::Combined, d.combined.statistic, d.combined.p_value),
            ];
            for (family, stat, p) in families {
                let name = family.name();
                out.push(row(name, dim, "statistic", stat));
                out.push(row(name, dim, "p_value", p));
                out.push(row(name, dim, "rejected", self.rejected.get(family).contains(&d.dim) as u8));
            }
            out.push(row("wald", dim, "quad_form", d.wald.quad_form));
            out.push(row("ect", dim, "max_block", &d.ect.max_block));
            out.push(row("ect", dim, "min_block", &d.ect.min_block));
        }
        out.extend(self.warnings.iter().map(|w| row("warning", None, "message", w)));
        out
    }
}

fn coverage_rows(table: &CoverageTable, out: &mut Vec<CsvRow>) {
    let dim = Some(table.dim + 1);
    for r in &table.rows {
        let metric = format!("coverage@{}", r.level);
        out.push(row("wald", dim, &metric, opt(r.wald)));
        out.push(row("combined", dim, &metric, opt(r.combined)));
    }
}

impl CsvRows for SimResult {
    fn csv_rows(&self) -> Vec<CsvRow> {
        let mut out = vec![
            row("replicates", None, "requested", self.replicates_requested),
            row("replicates", None, "used", self.replicates_used),
            row("replicates", None, "failed", self.replicates_failed),
            row("replicates", None, "heterogeneous", self.heterogeneous_replicates),
        ];
        if let (Some(u), Some(f)) = (self.calibration_replicates_used, self.calibration_replicates_failed) {
            out.push(row("calibration", None, "used", u));
            out.push(row("calibration", None, "failed", f));
        }
        for fam in &self.families {
            let name = fam.family.name();
            out.push(row(name, None, "fwer", opt(fam.fwer)));
            out.push(row(name, None, "power", opt(fam.power)));
            for (j, c) in fam.critical_values.iter().enumerate() {
                out.push(row(name, Some(j + 1), "critical_value", c));
            }
        }
        if let Some(table) = &self.coverage {
            coverage_rows(table, &mut out);
        }
        out
    }
}

impl CsvRows for CoverageTable {
    fn csv_rows(&self) -> Vec<CsvRow> {
        let mut out = vec![
            row("replicates", None, "used", self.replicates_used),
            row("replicates", None, "failed", self.replicates_failed),
        ];
        coverage_rows(self, &mut out);
        out
    }
}

impl CsvRows for PowerCalcResults {
    fn csv_rows(&self) -> Vec<CsvRow> {
        let verdict = |v| serde_json::to_value(v).ok().and_then(|x| x.as_str().map(String::from)).unwrap_or_default();
        vec![
            row("alternative", None, "sparsity", self.sparsity),
            row("alternative", None, "shift", self.shift),
            row("alternative", None, "detection_boundary", self.detection_boundary),
            row("wald", None, "snr", self.snr_wald),
            row("ect", None, "snr", self.snr_ect.value),
            row("ect", None, "selection_valid", self.snr_ect.selection_valid),
            row("wald", None, "regime", verdict(self.regime.wald)),
            row("ect", None, "regime", verdict(self.regime.ect)),
            row("combined", None, "regime", verdict(self.regime.combined)),
        ]
    }
}

impl CsvRows for GammaRecommendation {
    fn csv_rows(&self) -> Vec<CsvRow> {
        let mut out = vec![
            row("recommendation", None, "gamma", self.gamma),
            row("recommendation", None, "total_error", self.total_error),
        ];
        out.extend(
            self.grid
                .iter()
                .map(|(g, e)| row("grid", None, &format!("log_error@{g}"), e)),
        );
        out
    }
}

pub fn to_json<C: Serialize, R: Serialize>(doc: &Document<C, R>) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn to_csv(rows: &[CsvRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
