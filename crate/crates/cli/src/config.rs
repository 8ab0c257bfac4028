//! Flat `key = value` run configuration.
//!
//! Every field has a default. A config file overrides the defaults, and
//! flags override the file. `DIALOPRE_SEED` supplies the seed when neither
//! the file nor a flag sets one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use dialopre_core::model::ModelConfig;
use dialopre_core::objectives::{CorruptionMode, LossWeights};
use dialopre_core::optim::AdamWConfig;
use dialopre_core::tasks::TaskKind;
use dialopre_core::Vocabulary;

use crate::error::CliError;

pub const SEED_ENV: &str = "DIALOPRE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus_dir: String,
    pub out_dir: String,
    /// Where earlier stages' outputs are read from; empty means `out_dir`.
    pub input_dir: String,
    /// Empty means `<input_dir>/pretrain/model.ckpt`.
    pub checkpoint: String,

    pub delta_t_ms: i64,
    pub context_size: usize,
    pub stride: usize,
    pub max_utt_tokens: usize,
    pub min_conf: f64,
    pub max_vocab: usize,
    pub heldout_share: f64,

    pub dim: usize,
    pub heads: usize,
    pub layers_u: usize,
    pub layers_d: usize,
    pub layers_dec: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub init_std: f64,

    pub p_omega: f64,
    pub p_c: f64,
    /// Comma-separated subset of MUG, TMUG, MMUG.
    pub modes: String,
    pub lambda_u: f64,
    pub lambda_d: f64,
    pub lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub steps: u64,
    pub batch_size: usize,

    pub task: String,
    pub p_lprime: f64,
    pub distractors: usize,
    pub task_count: usize,
    /// `model` or `random`.
    pub scorer: String,
    /// Row name in reports; empty means the mode list.
    pub label: String,
    pub finetune_steps: u64,
    pub finetune_lr: f64,

    pub joints: usize,
    pub max_joint_size: usize,
    pub critic_steps: usize,
    pub critic_lr: f64,

    pub coordinates: usize,
    pub epsilon: f64,
    pub fault: bool,

    pub synth_movies: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::desk(0, Default::default());
        let opt = AdamWConfig::default();
        Self {
            seed: 0,
            corpus_dir: "corpus".into(),
            out_dir: "out".into(),
            input_dir: String::new(),
            checkpoint: String::new(),
            delta_t_ms: dialopre_core::corpus::DEFAULT_DELTA_T_MS,
            context_size: dialopre_core::corpus::DEFAULT_CONTEXT_SIZE,
            stride: dialopre_core::corpus::DEFAULT_CONTEXT_SIZE,
            max_utt_tokens: dialopre_core::corpus::DEFAULT_MAX_UTT_TOKENS,
            min_conf: dialopre_core::corpus::DEFAULT_MIN_CONF,
            max_vocab: 30_000,
            heldout_share: 0.25,
            dim: model.dim,
            heads: model.heads,
            layers_u: model.layers_u,
            layers_d: model.layers_d,
            layers_dec: model.layers_dec,
            ffn_dim: model.ffn_dim,
            dropout: model.dropout,
            init_std: model.init_std,
            p_omega: dialopre_core::objectives::DEFAULT_P_OMEGA,
            p_c: dialopre_core::objectives::DEFAULT_P_C,
            modes: "MUG".into(),
            lambda_u: 1.0,
            lambda_d: 1.0,
            lr: opt.lr,
            warmup: opt.warmup,
            weight_decay: opt.weight_decay,
            steps: 200,
            batch_size: 8,
            task: "ii".into(),
            p_lprime: dialopre_core::tasks::DEFAULT_P_LPRIME,
            distractors: dialopre_core::tasks::DEFAULT_DISTRACTORS,
            task_count: 1000,
            scorer: "model".into(),
            label: String::new(),
            finetune_steps: 0,
            finetune_lr: 1e-3,
            joints: 20,
            max_joint_size: 16,
            critic_steps: 800,
            critic_lr: 0.1,
            coordinates: 200,
            epsilon: 1e-5,
            fault: false,
            synth_movies: 8,
        }
    }
}

fn to_map(cfg: &RunConfig) -> Map<String, Value> {
    match serde_json::to_value(cfg).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config is a struct"),
    }
}

impl RunConfig {
    pub fn keys() -> Vec<String> {
        to_map(&RunConfig::default()).keys().cloned().collect()
    }

    /// Set one field from its textual form, typed after the field's default.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        let mut map = to_map(self);
        let current = map.get(key).ok_or_else(|| CliError::Usage(format!("unknown config key `{key}`")))?;
        let bad = || CliError::Usage(format!("invalid value `{raw}` for `{key}`"));
        let value = match current {
            Value::String(_) => Value::String(raw.to_string()),
            Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
            Value::Number(n) if n.is_f64() => {
                let v: f64 = raw.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
            }
            Value::Number(n) if n.is_i64() && raw.starts_with('-') => Value::from(raw.parse::<i64>().map_err(|_| bad())?),
            Value::Number(_) => {
                if let Ok(v) = raw.parse::<u64>() {
                    Value::from(v)
                } else {
                    Value::from(raw.parse::<i64>().map_err(|_| bad())?)
                }
            }
            _ => return Err(bad()),
        };
        map.insert(key.to_string(), value);
        *self = serde_json::from_value(Value::Object(map)).map_err(|_| bad())?;
        Ok(())
    }

    /// Parse a flat config file. Blank lines and `#` comments are ignored;
    /// returns the keys it set.
    pub fn apply_file(&mut self, path: &Path) -> Result<Vec<String>, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut set = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
            let key = k.trim();
            self.set(key, v.trim()).map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
            set.push(key.to_string());
        }
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.modes()?;
        self.task_kind()?;
        if !matches!(self.scorer.as_str(), "model" | "random") {
            return Err(CliError::Usage(format!("scorer must be `model` or `random`, got `{}`", self.scorer)));
        }
        if !(0.0..1.0).contains(&self.heldout_share) {
            return Err(CliError::Usage("heldout_share must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn modes(&self) -> Result<Vec<CorruptionMode>, CliError> {
        let modes: Vec<CorruptionMode> = self
            .modes
            .split(',')
            .map(|m| m.trim().parse().map_err(|_| CliError::Usage(format!("unknown loss mode `{m}`"))))
            .collect::<Result<_, _>>()?;
        if modes.is_empty() {
            return Err(CliError::Usage("at least one loss mode is required".into()));
        }
        Ok(modes)
    }

    pub fn task_kind(&self) -> Result<TaskKind, CliError> {
        self.task.parse().map_err(|_| CliError::Usage(format!("unknown task `{}`", self.task)))
    }

    pub fn input_root(&self) -> PathBuf {
        PathBuf::from(if self.input_dir.is_empty() { &self.out_dir } else { &self.input_dir })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.is_empty() {
            self.input_root().join("pretrain").join("model.ckpt")
        } else {
            PathBuf::from(&self.checkpoint)
        }
    }

    pub fn window(&self) -> dialopre_core::corpus::WindowConfig {
        dialopre_core::corpus::WindowConfig {
            context_size: self.context_size,
            stride: self.stride,
            max_utt_tokens: self.max_utt_tokens,
        }
    }

    pub fn model_config(&self, vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            heads: self.heads,
            layers_u: self.layers_u,
            layers_d: self.layers_d,
            layers_dec: self.layers_dec,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            init_std: self.init_std,
            max_utt_tokens: self.max_utt_tokens,
            context_size: self.context_size,
            ..ModelConfig::for_vocab(vocab)
        }
    }

    pub fn optimizer(&self, lr: f64) -> AdamWConfig {
        AdamWConfig { lr, warmup: self.warmup, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { utterance: self.lambda_u, dialog: self.lambda_d }
    }

    pub fn row_label(&self) -> String {
        if self.label.is_empty() {
            self.modes.replace(',', "+")
        } else {
            self.label.clone()
        }
    }
}

/// Defaults, then the config file, then the seed variable, then `overrides`
/// in order.
pub fn resolve(
    file: Option<&Path>,
    env_seed: Option<&str>,
    overrides: &[(String, String)],
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    let from_file = match file {
        Some(p) => cfg.apply_file(p)?,
        None => Vec::new(),
    };
    if let Some(s) = env_seed.filter(|_| !from_file.iter().any(|k| k == "seed")) {
        cfg.set("seed", s.trim()).map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an integer, got `{s}`")))?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
