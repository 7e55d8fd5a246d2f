//! Run configuration: a TOML file whose every field has a default, plus
//! command-line overrides.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tplab::autodiff::AdamConfig;
use tplab::model::{GridEgoSource, Variant};
use tplab::scene::SelectionCriteria;
use tplab::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw trajectory files; several are merged.
    pub raw: Vec<PathBuf>,
    /// Holds `tracks.bin`, `pieces.jsonl` and the extraction stats.
    pub cache: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            raw: Vec::new(),
            cache: "tplab-cache".into(),
            checkpoints: "tplab-runs/checkpoints".into(),
            reports: "tplab-runs/reports".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Field name to zero-based column, overriding the header.
    pub columns: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    /// Seed of the train/test split.
    pub seed: u64,
    pub selection: SelectionCriteria,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub variants: Vec<Variant>,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub grid_ego: GridEgoSource,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::new(Variant::CnnLstm, 0);
        Self {
            variants: vec![Variant::CnnLstm],
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.adam.lr,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
            seed: d.seed,
            grid_ego: d.grid_ego,
        }
    }
}

impl TrainSection {
    pub fn for_variant(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            seed: self.seed,
            grid_ego: self.grid_ego,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub selectors: Vec<String>,
    /// Most plots written per selector.
    pub max: usize,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self { selectors: vec!["before-lc".into()], max: 10 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub ingest: IngestSection,
    pub extract: ExtractSection,
    pub train: TrainSection,
    pub plot: PlotSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.paths.raw.iter_mut().for_each(fix);
        fix(&mut cfg.paths.cache);
        fix(&mut cfg.paths.checkpoints);
        fix(&mut cfg.paths.reports);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for v in &self.train.variants {
            self.train.for_variant(*v).validate().map_err(|e| CliError::usage(e.to_string()))?;
        }
        if self.train.variants.is_empty() {
            return Err(CliError::usage("train.variants is empty"));
        }
        for s in &self.plot.selectors {
            crate::commands::Selector::parse(s)?;
        }
        let known = ["vehicle_id", "frame_id", "local_x", "local_y", "lane_id"];
        if let Some(k) = self.ingest.columns.keys().find(|k| !known.contains(&k.to_ascii_lowercase().as_str())) {
            return Err(CliError::usage(format!("ingest.columns: unknown field `{k}`")));
        }
        Ok(())
    }

    pub fn column_overrides(&self) -> HashMap<String, usize> {
        self.ingest.columns.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    /// Hash of everything that shapes the extracted pieces.
    pub fn extract_hash(&self) -> String {
        short_hash(&(&self.ingest, &self.extract))
    }

    /// Hash of the training settings shared by all variants.
    pub fn train_hash(&self) -> String {
        let mut t = self.train.clone();
        t.variants.clear();
        short_hash(&(&self.ingest, &self.extract, &t))
    }
}

fn short_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    format!("{digest:x}")[..16].to_string()
}

/// Hex SHA-256 of the concatenated contents of `paths`.
pub fn file_checksum(paths: &[PathBuf]) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for p in paths {
        let mut f = std::fs::File::open(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        std::io::copy(&mut f, &mut h).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
    }
    Ok(format!("{:x}", h.finalize()))
}
