//! Pretraining and downstream fine-tuning loops.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::corpus::{AlignedContextPair, Context};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Net};
use crate::objectives::{
    pretraining_loss, CorruptionMode, CorruptionSource, LossValue, LossWeights, PretrainExample, DEFAULT_P_C,
    DEFAULT_P_OMEGA,
};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::Gradients;
use crate::rng::item_stream;
use crate::tasks::{InconsistencyInstance, RetrievalInstance};

#[derive(Clone, Debug, Default)]
pub struct PretrainData {
    pub monolingual: Vec<Context>,
    pub aligned: Vec<AlignedContextPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub p_omega: f64,
    pub p_c: f64,
    pub weights: LossWeights,
    /// Cycled over batch slots.
    pub modes: Vec<CorruptionMode>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            p_omega: DEFAULT_P_OMEGA,
            p_c: DEFAULT_P_C,
            weights: LossWeights::default(),
            modes: vec![CorruptionMode::Mug],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: LossValue,
}

fn mean_loss(values: &[LossValue]) -> LossValue {
    let n = values.len() as f64;
    LossValue {
        total: values.iter().map(|v| v.total).sum::<f64>() / n,
        utterance_part: values.iter().map(|v| v.utterance_part).sum::<f64>() / n,
        dialog_part: values.iter().map(|v| v.dialog_part).sum::<f64>() / n,
        token_count: values.iter().map(|v| v.token_count).sum(),
    }
}

/// Draw the example for global batch slot `ordinal`.
pub fn sample_example(data: &PretrainData, cfg: &PretrainConfig, ordinal: u64) -> Result<PretrainExample> {
    let mode = cfg.modes[(ordinal % cfg.modes.len() as u64) as usize];
    let mut rng = item_stream(cfg.seed, "pretrain.example", ordinal);
    let source = match mode {
        CorruptionMode::Mug if !data.monolingual.is_empty() => {
            CorruptionSource::Context(&data.monolingual[rng.random_range(0..data.monolingual.len())])
        }
        CorruptionMode::Mug if !data.aligned.is_empty() => {
            CorruptionSource::Context(&data.aligned[rng.random_range(0..data.aligned.len())].base)
        }
        CorruptionMode::Tmug | CorruptionMode::Mmug if !data.aligned.is_empty() => {
            CorruptionSource::Aligned(&data.aligned[rng.random_range(0..data.aligned.len())])
        }
        _ => return Err(Error::Input(format!("no training data for {mode}"))),
    };
    PretrainExample::build(source, mode, cfg.p_omega, cfg.p_c, &mut rng)
}

fn example_gradients(model: &ModelParams, ex: &PretrainExample, weights: LossWeights, dropout_seed: Option<(u64, u64)>) -> Result<(Gradients, LossValue)> {
    let mut g = Graph::new(&model.store);
    let mut rng;
    let mut net = match dropout_seed {
        Some((seed, ordinal)) => {
            rng = item_stream(seed, "pretrain.dropout", ordinal);
            Net::training(&mut g, model, &mut rng)
        }
        None => Net::new(&mut g, model),
    };
    let (loss, value) = pretraining_loss(&mut net, ex, weights)?;
    Ok((g.backward(loss), value))
}

/// Sum per-example gradients in index order so results do not depend on the
/// thread count.
fn batch_gradients(model: &ModelParams, results: Vec<(Gradients, LossValue)>) -> Result<(Gradients, LossValue)> {
    let n = results.len() as f64;
    let mut total = Gradients::zeros_like(&model.store);
    let mut losses = Vec::with_capacity(results.len());
    for (g, l) in results {
        total.add_assign(&g)?;
        losses.push(l);
    }
    total.scale(1.0 / n);
    Ok((total, mean_loss(&losses)))
}

pub fn pretrain(
    model: &mut ModelParams,
    data: &PretrainData,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    if cfg.batch_size == 0 || cfg.modes.is_empty() {
        return Err(Error::Config("batch_size and modes must be non-empty".into()));
    }
    let mut opt = AdamW::new(cfg.optimizer, &model.store);
    let mut logs = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let first = step * cfg.batch_size as u64;
        let examples = (first..first + cfg.batch_size as u64)
            .map(|o| sample_example(data, cfg, o).map(|e| (o, e)))
            .collect::<Result<Vec<_>>>()?;
        let frozen: &ModelParams = model;
        let results = examples
            .par_iter()
            .map(|(o, ex)| example_gradients(frozen, ex, cfg.weights, Some((cfg.seed, *o))))
            .collect::<Result<Vec<_>>>()?;
        let (grads, loss) = batch_gradients(model, results)?;
        let lr = opt.step(&mut model.store, &grads, |_| true)?;
        let log = StepLog { step, lr, loss };
        on_step(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Mean pretraining loss without dropout.
pub fn evaluate_pretrain_loss(model: &ModelParams, examples: &[PretrainExample], weights: LossWeights) -> Result<LossValue> {
    if examples.is_empty() {
        return Err(Error::Input("no examples to evaluate".into()));
    }
    let values = examples
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new(&model.store);
            let mut net = Net::new(&mut g, model);
            pretraining_loss(&mut net, ex, weights).map(|(_, v)| v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_loss(&values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Train only the task head and keep the encoder frozen.
    pub head_only: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { steps: 200, batch_size: 16, optimizer: AdamWConfig::default(), head_only: false, seed: 0 }
    }
}

fn finetune<T: Sync>(
    model: &mut ModelParams,
    instances: &[T],
    cfg: &FinetuneConfig,
    stream: &str,
    loss: impl Fn(&mut Net<'_, '_>, &T) -> Result<crate::autodiff::Var> + Sync,
) -> Result<Vec<f64>> {
    if instances.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Task("fine-tuning needs instances and a positive batch size".into()));
    }
    let mut opt = AdamW::new(cfg.optimizer, &model.store);
    let heads = model.layout.head_params();
    let mut history = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let mut rng = item_stream(cfg.seed, stream, step);
        let batch: Vec<(u64, &T)> = (0..cfg.batch_size)
            .map(|i| (step * cfg.batch_size as u64 + i as u64, &instances[rng.random_range(0..instances.len())]))
            .collect();
        let frozen: &ModelParams = model;
        let results = batch
            .par_iter()
            .map(|(o, inst)| {
                let mut g = Graph::new(&frozen.store);
                let mut drop_rng = item_stream(cfg.seed, "finetune.dropout", *o);
                let mut net = Net::training(&mut g, frozen, &mut drop_rng);
                let v = loss(&mut net, inst)?;
                let value = g.value(v).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite("fine-tuning loss".into()));
                }
                Ok((g.backward(v), LossValue { total: value, utterance_part: 0.0, dialog_part: value, token_count: 1 }))
            })
            .collect::<Result<Vec<_>>>()?;
        let (grads, l) = batch_gradients(model, results)?;
        opt.step(&mut model.store, &grads, |id| !cfg.head_only || heads.contains(&id))?;
        history.push(l.total);
    }
    Ok(history)
}

/// Cross-entropy over the T slot logits.
pub fn finetune_ii(model: &mut ModelParams, instances: &[InconsistencyInstance], cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    finetune(model, instances, cfg, "finetune.ii", |net, inst| {
        let (_, pooled) = net.encode(&inst.context)?;
        let logits = net.ii_logits(pooled);
        Ok(net.g.cross_entropy(logits, &[inst.label]))
    })
}

/// Binary cross-entropy of each candidate against "is the next utterance".
pub fn finetune_nur(model: &mut ModelParams, instances: &[RetrievalInstance], cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    finetune(model, instances, cfg, "finetune.nur", |net, inst| {
        let (_, pooled) = net.encode(&inst.context)?;
        let mut scores = Vec::with_capacity(inst.candidates.len());
        for c in &inst.candidates {
            let (e, _) = net.utterance_embedding(&c.tokens)?;
            scores.push(net.nur_logit(pooled, e));
        }
        let logits = net.g.concat_rows(&scores);
        let targets: Vec<f64> = (0..inst.candidates.len()).map(|i| f64::from(u8::from(i == inst.label))).collect();
        Ok(net.g.bce_with_logits(logits, &targets))
    })
}
