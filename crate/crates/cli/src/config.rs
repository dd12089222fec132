//! Run configuration files.
//!
//! A run is described by one or more TOML files layered left to right, then
//! `--set section.key=value` overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use mifr_core::data::{
    load_adult, load_csv, load_csv_cached, load_csv_pair, load_german, split, synthetic_gen, ColumnSchema,
    SyntheticSpec,
};
use mifr_core::eval::{EvalOptions, DEFAULT_SUBSAMPLE};
use mifr_core::numcore::{AdamConfig, LrSchedule};
use mifr_core::objective::{ConstraintId, ConstraintSpec, Multipliers};
use mifr_core::trainer::model_config_for;
use mifr_core::{Mode, TabularDataset, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Adult,
    German,
    Csv,
    Synthetic,
}

impl DatasetKind {
    fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Adult => "adult",
            DatasetKind::German => "german",
            DatasetKind::Csv => "csv",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Directory holding the raw files of `adult` or `german`; defaults to
    /// `$MIFR_DATA_DIR/<dataset>`, then `data/<dataset>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// `csv`: the data file (or the training file when `test_path` is set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// `csv`: column schema file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Held-out share when the source has no fixed test partition.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_age_threshold")]
    pub age_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_age_threshold() -> f64 {
    25.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Defaults to 10.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_dim: Option<usize>,
    pub hidden_dim: usize,
}

fn default_hidden() -> usize {
    50
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            z_dim: None,
            hidden_dim: default_hidden(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Mode,
    /// Defaults to 2000, or 10000 for `german`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    pub batch_size: usize,
    pub adversary_steps: usize,
    pub adversary_warmup_steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eta_lambda: f64,
    /// `0` feeds raw minibatch values to the multiplier update.
    pub ema_decay: f64,
    pub log_every: u64,
    pub pin_encoder_to_prior: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let sched = LrSchedule::default();
        let adam = AdamConfig::default();
        Self {
            mode: Mode::Lmifr,
            epochs: None,
            batch_size: 128,
            adversary_steps: 10,
            adversary_warmup_steps: 0,
            lr: sched.base_lr,
            lr_decay: sched.decay_factor,
            lr_decay_every: sched.decay_every,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eta_lambda: 0.01,
            ema_decay: 0.95,
            log_every: 100,
            pin_encoder_to_prior: false,
        }
    }
}

/// Presence enables the constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintEntry {
    /// Budget in nats; required by `lmifr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Initial (`lmifr`) or fixed (`mifr`) multiplier; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<ConstraintEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<ConstraintEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eo: Option<ConstraintEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eopp: Option<ConstraintEntry>,
}

impl ConstraintsSection {
    pub fn get(&self, id: ConstraintId) -> Option<ConstraintEntry> {
        match id {
            ConstraintId::C1 => self.c1,
            ConstraintId::C2 => self.c2,
            ConstraintId::Eo => self.eo,
            ConstraintId::Eopp => self.eopp,
        }
    }

    pub fn get_mut(&mut self, id: ConstraintId) -> &mut Option<ConstraintEntry> {
        match id {
            ConstraintId::C1 => &mut self.c1,
            ConstraintId::C2 => &mut self.c2,
            ConstraintId::Eo => &mut self.eo,
            ConstraintId::Eopp => &mut self.eopp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub subsample: usize,
    pub l2: f64,
    pub include_pca: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_k: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            subsample: DEFAULT_SUBSAMPLE,
            l2: 1e-4,
            include_pca: false,
            pca_k: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Run directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub constraints: ConstraintsSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Recursively overlay `top` onto `base`; tables merge, everything else is
/// replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Apply `a.b.c=value`; the value is read as TOML, falling back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override {assignment:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("override {key:?} descends into a non-table")))?;
        node = table.entry(p.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| CliError::usage(format!("override {key:?} descends into a non-table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self, CliError> {
        let cfg: RunConfig = v.try_into().map_err(|e: toml::de::Error| CliError::usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let v: Value = text
            .parse::<toml::Table>()
            .map(Value::Table)
            .map_err(|e| CliError::usage(format!("config: {e}")))?;
        Self::from_value(v)
    }

    /// Layer `files`, then apply `overrides`.
    pub fn load(files: &[PathBuf], overrides: &[String]) -> Result<Self, CliError> {
        if files.is_empty() {
            return Err(CliError::usage("at least one --config file is required"));
        }
        let mut root = Value::Table(Default::default());
        for f in files {
            let text = std::fs::read_to_string(f)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", f.display())))?;
            let v = text
                .parse::<toml::Table>()
                .map_err(|e| CliError::usage(format!("{}: {e}", f.display())))?;
            merge(&mut root, Value::Table(v));
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        Self::from_value(root)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(CliError::usage("data.test_fraction must be in (0, 1)"));
        }
        match d.dataset {
            DatasetKind::Csv if d.path.is_none() || d.schema.is_none() => {
                Err(CliError::usage("dataset = \"csv\" needs data.path and data.schema"))
            }
            DatasetKind::Synthetic if d.synthetic.is_none() => {
                Err(CliError::usage("dataset = \"synthetic\" needs a [data.synthetic] table"))
            }
            _ => Ok(()),
        }
    }

    pub fn epochs(&self) -> u64 {
        self.train.epochs.unwrap_or(match self.data.dataset {
            DatasetKind::German => 10_000,
            _ => 2000,
        })
    }

    pub fn constraint_spec(&self) -> ConstraintSpec {
        let mut spec = ConstraintSpec::new();
        for id in ConstraintId::ALL {
            if let Some(e) = self.constraints.get(id) {
                spec = match e.eps {
                    Some(eps) => spec.with(id, eps),
                    None => spec.with_unbudgeted(id),
                };
            }
        }
        spec
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            seed: self.seed,
            subsample: self.eval.subsample,
            l2: self.eval.l2,
            include_pca: self.eval.include_pca,
            pca_k: self.eval.pca_k,
        }
    }

    /// The trainer configuration for a dataset with `train`'s layout.
    pub fn train_config(&self, train: &TabularDataset) -> Result<TrainConfig, CliError> {
        let spec = self.constraint_spec();
        let model = model_config_for(train, self.model.z_dim.unwrap_or(10), self.model.hidden_dim, spec.needs_labels());
        let t = &self.train;
        let mut config = TrainConfig::new(t.mode, model, spec);
        config.epochs = self.epochs();
        config.batch_size = t.batch_size;
        config.adversary_steps = t.adversary_steps;
        config.adversary_warmup_steps = t.adversary_warmup_steps;
        config.schedule = LrSchedule::new(t.lr, t.lr_decay, t.lr_decay_every).map_err(CliError::from)?;
        config.adam = AdamConfig {
            beta1: t.beta1,
            beta2: t.beta2,
            ..AdamConfig::default()
        };
        config.eta_lambda = t.eta_lambda;
        config.ema_decay = Some(t.ema_decay);
        config.log_every = t.log_every;
        config.pin_encoder_to_prior = t.pin_encoder_to_prior;
        config.seed = self.seed;
        let mut lambda = Multipliers::splat(1.0);
        for id in ConstraintId::ALL {
            if let Some(l) = self.constraints.get(id).and_then(|e| e.lambda) {
                lambda.lambda[id] = l;
            }
        }
        config.initial_multipliers = lambda;
        config.validate().map_err(CliError::from)?;
        Ok(config)
    }

    fn data_dir(&self) -> PathBuf {
        if let Some(d) = &self.data.dir {
            return d.clone();
        }
        let name = self.data.dataset.dir_name();
        match std::env::var_os("MIFR_DATA_DIR") {
            Some(root) => Path::new(&root).join(name),
            None => Path::new("data").join(name),
        }
    }

    /// `(train, test)` as the configuration describes them.
    pub fn load_data(&self) -> Result<(TabularDataset, TabularDataset), CliError> {
        let d = &self.data;
        let (train, test) = match d.dataset {
            DatasetKind::Adult => load_adult(&self.data_dir())?,
            DatasetKind::German => {
                let all = load_german(&self.data_dir(), d.age_threshold)?;
                split(&all, d.test_fraction, d.split_seed)?
            }
            DatasetKind::Csv => {
                let schema_path = d.schema.as_ref().expect("validated");
                let schema = ColumnSchema::from_file(schema_path)?;
                let path = d.path.as_ref().expect("validated");
                match (&d.test_path, &d.cache_dir) {
                    (Some(test), _) => load_csv_pair(path, test, &schema)?,
                    (None, cache) => {
                        let all = match cache {
                            Some(dir) => {
                                std::fs::create_dir_all(dir)?;
                                load_csv_cached(path, &schema, dir)?
                            }
                            None => load_csv(path, &schema)?,
                        };
                        split(&all, d.test_fraction, d.split_seed)?
                    }
                }
            }
            DatasetKind::Synthetic => {
                let spec = d.synthetic.as_ref().expect("validated");
                let all = synthetic_gen(spec, d.split_seed)?;
                split(&all, d.test_fraction, d.split_seed)?
            }
        };
        Ok((train, test))
    }
}
