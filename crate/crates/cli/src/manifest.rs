//! Block manifest and per-block CSV ingestion.

use crate::error::{CliError, DataError};
use hetdetect_core::{BlockData, LossModel};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

/// Which CSV columns to read and where each block lives. Feature order defines
/// the dimension indices reported as 1..p.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockManifest {
    pub response: String,
    pub features: Vec<String>,
    pub blocks: Vec<BlockEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BlockManifest {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Data(DataError::FileNotFound(path.to_path_buf())),
            _ => CliError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        let mut manifest: BlockManifest = serde_json::from_str(&text)
            .map_err(|e| DataError::InvalidManifest(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.features.is_empty() {
            return Err(DataError::InvalidManifest("no feature columns listed".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.as_str()) || f == &self.response {
                return Err(DataError::InvalidManifest(format!("column '{f}' listed twice")));
            }
        }
        let mut ids = HashSet::new();
        for b in &self.blocks {
            if !ids.insert(b.id.as_str()) {
                return Err(DataError::InvalidManifest(format!("duplicate block id '{}'", b.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &BlockEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }
}

/// Reads every block in manifest order. Block `k` of the result has
/// `block_id() == k` and keeps its file's row order.
pub fn load_blocks(manifest: &BlockManifest) -> Result<Vec<BlockData>, DataError> {
    manifest.validate()?;
    manifest
        .blocks
        .iter()
        .enumerate()
        .map(|(k, entry)| load_block(manifest, k, entry))
        .collect()
}

fn load_block(manifest: &BlockManifest, k: usize, entry: &BlockEntry) -> Result<BlockData, DataError> {
    let path = manifest.resolve(entry);
    if !path.is_file() {
        return Err(DataError::FileNotFound(path));
    }
    let csv_err = |source| DataError::Csv {
        block: entry.id.clone(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::SchemaMismatch {
                block: entry.id.clone(),
                column: name.to_string(),
            })
    };
    let response_col = index_of(&manifest.response)?;
    let feature_cols = manifest
        .features
        .iter()
        .map(|f| index_of(f))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut response = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let cell = |col: usize, name: &str| -> Result<f64, DataError> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::NonNumericCell {
                    block: entry.id.clone(),
                    row: i + 1,
                    column: name.to_string(),
                    value: raw.to_string(),
                })
        };
        response.push(cell(response_col, &manifest.response)?);
        rows.push(
            feature_cols
                .iter()
                .zip(&manifest.features)
                .map(|(&c, name)| cell(c, name))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    if rows.is_empty() {
        return Err(DataError::EmptyBlock(entry.id.clone()));
    }
    BlockData::from_rows(k, &rows, response).map_err(|source| DataError::Block {
        block: entry.id.clone(),
        source,
    })
}

/// Domain checks that depend on the model, such as binary responses for
/// logistic fits.
pub fn check_model(blocks: &[BlockData], ids: &[String], model: LossModel) -> Result<(), DataError> {
    for (b, id) in blocks.iter().zip(ids) {
        model.validate(b).map_err(|source| DataError::Block {
            block: id.clone(),
            source,
        })?;
    }
    Ok(())
}
