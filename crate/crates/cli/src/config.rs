//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 0
//! size = 100
//! max_iter = 1000
//! row_limits = [3, 100]
//! col_limits = [2, 2]
//! weights = [1.0]
//! best_prop = 0.2
//! lucky_prop = 0.0
//! mutation_prob = 0.01
//!
//! [[families]]
//! family = "uniform"
//! limits = { a = [0.0, 1.0], b = [0.0, 1.0] }
//!
//! [fitness]
//! name = "inertia"
//! k = 2
//!
//! [output]
//! root = "runs/inertia"
//! retention = "all"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use edo_core::clustering::ClusteringFitness;
use edo_core::dataset::{ColumnLimits, FamilyColumns, RowLimits};
use edo_core::distributions::{FamilySpec, Interval, NormalSampler, UniformSampler};
use edo_core::evolution::{EdoConfig, MultiplicativeDecay, NoImprovement};
use edo_core::history::Retention;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub size: usize,
    pub max_iter: usize,
    pub row_limits: [usize; 2],
    pub col_limits: ColumnLimitsConfig,
    pub families: Vec<FamilyConfig>,
    /// Defaults to equal weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub best_prop: f64,
    #[serde(default)]
    pub lucky_prop: f64,
    pub mutation_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shrinkage: Option<f64>,
    /// 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    pub fitness: ClusteringFitness,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<NoImprovement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_schedule: Option<MultiplicativeDecay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnLimitsConfig {
    Aggregate([usize; 2]),
    Detailed {
        min: usize,
        max: usize,
        per_family: Vec<FamilyColumns>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    /// `uniform` or `normal`.
    pub family: String,
    /// Unique label; defaults to the family kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub limits: BTreeMap<String, [f64; 2]>,
    #[serde(default = "one")]
    pub max_subtypes: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub retention: RetentionConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionConfig {
    #[default]
    All,
    Every(usize),
}

impl From<RetentionConfig> for Retention {
    fn from(r: RetentionConfig) -> Self {
        match r {
            RetentionConfig::All => Retention::All,
            RetentionConfig::Every(interval) => Retention::Every { interval },
        }
    }
}

const KINDS: [(&str, [&str; 2]); 2] = [("uniform", ["a", "b"]), ("normal", ["mean", "std"])];

impl FamilyConfig {
    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.family)
    }

    fn to_spec(&self, position: usize) -> anyhow::Result<FamilySpec> {
        let field = format!("families[{position}]");
        let Some((_, params)) = KINDS.iter().find(|(k, _)| *k == self.family) else {
            bail!(
                "{field}.family: unknown family {:?}; expected uniform or normal",
                self.family
            );
        };
        if let Some(extra) = self.limits.keys().find(|k| !params.contains(&k.as_str())) {
            bail!(
                "{field}.limits: unknown parameter {extra:?} for {}",
                self.family
            );
        }
        let mut limits = Vec::new();
        for p in params {
            let Some([lo, hi]) = self.limits.get(*p) else {
                bail!("{field}.limits.{p}: missing");
            };
            limits.push(Interval::new(*lo, *hi).with_context(|| format!("{field}.limits.{p}"))?);
        }
        if self.family == "normal" && limits[1].lower < 0.0 {
            bail!("{field}.limits.std: standard deviation limits must be non-negative");
        }
        let sampler: Arc<dyn edo_core::distributions::ColumnSampler> = match self.family.as_str() {
            "uniform" => Arc::new(UniformSampler),
            _ => Arc::new(NormalSampler),
        };
        FamilySpec::new(
            self.label(),
            params.iter().map(|p| p.to_string()).collect(),
            limits,
            self.max_subtypes,
            sampler,
        )
        .with_context(|| field.clone())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.to_edo_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Validates every field and builds the engine configuration.
    pub fn to_edo_config(&self) -> anyhow::Result<EdoConfig> {
        let mut families = Vec::new();
        for (i, f) in self.families.iter().enumerate() {
            if self.families[..i].iter().any(|g| g.label() == f.label()) {
                bail!("families[{i}].name: duplicate family name {:?}", f.label());
            }
            families.push(f.to_spec(i)?);
        }
        let weights = self
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / families.len().max(1) as f64; families.len()]);
        let col_limits = match &self.col_limits {
            ColumnLimitsConfig::Aggregate([min, max]) => ColumnLimits::aggregate(*min, *max),
            ColumnLimitsConfig::Detailed {
                min,
                max,
                per_family,
            } => ColumnLimits {
                min: *min,
                max: *max,
                per_family: Some(per_family.clone()),
            },
        };
        let row_limits: RowLimits = self.row_limits.into();
        if let RetentionConfig::Every(0) = self.output.retention {
            bail!("output.retention.every: interval must be at least 1");
        }
        if let Some(NoImprovement { patience: 0 }) = self.stopping {
            bail!("stopping.patience: must be at least 1");
        }
        if let Some(MultiplicativeDecay { factor }) = self.mutation_schedule {
            if !(0.0..=1.0).contains(&factor) {
                bail!("mutation_schedule.factor: {factor} is not in [0, 1]");
            }
        }
        self.fitness.validate()?;
        let cfg = EdoConfig {
            population_size: self.size,
            max_iter: self.max_iter,
            row_limits,
            col_limits,
            families,
            weights,
            best_prop: self.best_prop,
            lucky_prop: self.lucky_prop,
            mutation_prob: self.mutation_prob,
            shrinkage: self.shrinkage,
            seed: self.seed,
            stopping: self.stopping.map(|s| Arc::new(s) as _),
            mutation_schedule: self.mutation_schedule.map(|m| Arc::new(m) as _),
            workers: self.workers,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
