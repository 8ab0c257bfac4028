//! Does code-switched pretraining help multilingual inconsistency
//! identification? Two models of equal size and step count, one pretrained
//! with MUG only and one with MUG+TMUG+MMUG, are fine-tuned and tested on
//! mII built from disjoint sets of synthetic bilingual movies.
//!
//! Alongside the fine-tuned accuracy, each arm also reports a zero-shot
//! accuracy read straight off the pretrained decoder, before any fine-tuning.

use serde::{Deserialize, Serialize};

use crate::corpus::WindowConfig;
use crate::model::{ModelConfig, ModelParams};
use crate::objectives::CorruptionMode;
use crate::optim::AdamWConfig;
use crate::rng::substream;
use crate::synthetic::{build_dataset, corpus_texts, generate, SyntheticConfig, SyntheticDataset};
use crate::tasks::{compute_metrics, make_mii, model_ii_rankings, reconstruction_ii_rankings, InconsistencyInstance, UtterancePool};
use crate::train::{finetune_ii, pretrain, FinetuneConfig, PretrainConfig, PretrainData};
use crate::{Error, Result, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSwitchConfig {
    pub corpus_seed: u64,
    /// Movies used for pretraining, mII fine-tuning and mII testing, in that order.
    pub pretrain_movies: usize,
    pub finetune_movies: usize,
    pub test_movies: usize,
    pub init_std: f64,
    pub dropout: f64,
    pub pretrain_steps: u64,
    pub pretrain_lr: f64,
    pub pretrain_warmup: u64,
    pub batch_size: usize,
    pub finetune_steps: u64,
    pub finetune_lr: f64,
    /// Independent mII draws over the fine-tuning pairs.
    pub finetune_draws: u64,
    pub test_draws: u64,
    pub p_lprime: f64,
    pub seeds: Vec<u64>,
}

impl Default for CodeSwitchConfig {
    fn default() -> Self {
        Self {
            corpus_seed: 5,
            pretrain_movies: 10,
            finetune_movies: 4,
            test_movies: 4,
            init_std: 0.2,
            dropout: 0.1,
            pretrain_steps: 1000,
            pretrain_lr: 3e-3,
            pretrain_warmup: 30,
            batch_size: 16,
            finetune_steps: 1200,
            finetune_lr: 2e-3,
            finetune_draws: 8,
            test_draws: 4,
            p_lprime: 0.4,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mug_only: f64,
    pub code_switch: f64,
    pub mug_only_zero_shot: f64,
    pub code_switch_zero_shot: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSwitchReport {
    pub finetune_instances: usize,
    pub test_instances: usize,
    pub seeds: Vec<SeedOutcome>,
    pub mean_mug_only: f64,
    pub mean_code_switch: f64,
    pub mean_mug_only_zero_shot: f64,
    pub mean_code_switch_zero_shot: f64,
}

struct Split {
    vocab: Vocabulary,
    pretrain: SyntheticDataset,
    finetune: SyntheticDataset,
    test: SyntheticDataset,
}

fn split_corpus(cfg: &CodeSwitchConfig) -> Result<Split> {
    let total = cfg.pretrain_movies + cfg.finetune_movies + cfg.test_movies;
    let movies = generate(&SyntheticConfig { movies: total, seed: cfg.corpus_seed, ..Default::default() });
    let (pre, rest) = movies.split_at(cfg.pretrain_movies);
    let (ft, test) = rest.split_at(cfg.finetune_movies);
    let vocab = Vocabulary::build(corpus_texts(pre), 1000)?;
    let window = WindowConfig { stride: 1, ..Default::default() };
    Ok(Split {
        pretrain: build_dataset(pre, &vocab, &window)?,
        finetune: build_dataset(ft, &vocab, &window)?,
        test: build_dataset(test, &vocab, &window)?,
        vocab,
    })
}

fn mii_draws(ds: &SyntheticDataset, p: f64, seed: u64, draws: u64) -> Result<Vec<InconsistencyInstance>> {
    let pool = UtterancePool::from_sources(&[], &ds.pairs);
    let mut out = Vec::new();
    for d in 0..draws {
        out.extend(make_mii(&ds.pairs, &pool, p, seed.wrapping_mul(1000).wrapping_add(d))?);
    }
    Ok(out)
}

fn accuracy(rankings: &[Vec<usize>], test: &[InconsistencyInstance]) -> Result<f64> {
    let labels: Vec<usize> = test.iter().map(|i| i.label).collect();
    Ok(compute_metrics(rankings, &labels, &[1])?.accuracy)
}

/// Pretrain with `modes`, then return zero-shot and fine-tuned test accuracy.
fn pretrain_and_test(
    cfg: &CodeSwitchConfig,
    split: &Split,
    modes: &[CorruptionMode],
    seed: u64,
    finetune: &[InconsistencyInstance],
    test: &[InconsistencyInstance],
) -> Result<(f64, f64)> {
    let mut mc = ModelConfig::for_vocab(&split.vocab);
    mc.init_std = cfg.init_std;
    mc.dropout = cfg.dropout;
    // Same initial weights for both arms of a seed
    let mut model = ModelParams::init(mc, &mut substream(seed, "experiment.init"))?;
    let data = PretrainData {
        monolingual: split.pretrain.contexts.values().flatten().cloned().collect(),
        aligned: if modes.len() > 1 { split.pretrain.pairs.clone() } else { Vec::new() },
    };
    let pc = PretrainConfig {
        steps: cfg.pretrain_steps,
        batch_size: cfg.batch_size,
        optimizer: AdamWConfig { lr: cfg.pretrain_lr, warmup: cfg.pretrain_warmup, ..Default::default() },
        modes: modes.to_vec(),
        seed,
        ..Default::default()
    };
    pretrain(&mut model, &data, &pc, |_| {})?;
    let zero_shot = accuracy(&reconstruction_ii_rankings(&model, test)?, test)?;
    let fc = FinetuneConfig {
        steps: cfg.finetune_steps,
        batch_size: cfg.batch_size,
        optimizer: AdamWConfig { lr: cfg.finetune_lr, warmup: (cfg.finetune_steps / 4).max(1), ..Default::default() },
        head_only: false,
        seed,
    };
    finetune_ii(&mut model, finetune, &fc)?;
    Ok((zero_shot, accuracy(&model_ii_rankings(&model, test)?, test)?))
}

/// Run both arms for every seed; `progress` sees each seed as it finishes.
pub fn codeswitch_comparison(cfg: &CodeSwitchConfig, mut progress: impl FnMut(&SeedOutcome)) -> Result<CodeSwitchReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Input("at least one seed is needed".into()));
    }
    let split = split_corpus(cfg)?;
    let mug = [CorruptionMode::Mug];
    let all = [CorruptionMode::Mug, CorruptionMode::Tmug, CorruptionMode::Mmug];
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let (mut n_ft, mut n_test) = (0, 0);
    for &seed in &cfg.seeds {
        let ft = mii_draws(&split.finetune, cfg.p_lprime, seed, cfg.finetune_draws)?;
        let test = mii_draws(&split.test, cfg.p_lprime, seed.wrapping_add(500), cfg.test_draws)?;
        if ft.is_empty() || test.is_empty() {
            return Err(Error::Task("no mII instances could be built".into()));
        }
        (n_ft, n_test) = (ft.len(), test.len());
        let (mug_zs, mug_ft) = pretrain_and_test(cfg, &split, &mug, seed, &ft, &test)?;
        let (cs_zs, cs_ft) = pretrain_and_test(cfg, &split, &all, seed, &ft, &test)?;
        let outcome = SeedOutcome {
            seed,
            mug_only: mug_ft,
            code_switch: cs_ft,
            mug_only_zero_shot: mug_zs,
            code_switch_zero_shot: cs_zs,
        };
        progress(&outcome);
        seeds.push(outcome);
    }
    let mean = |f: fn(&SeedOutcome) -> f64| seeds.iter().map(f).sum::<f64>() / seeds.len() as f64;
    Ok(CodeSwitchReport {
        finetune_instances: n_ft,
        test_instances: n_test,
        mean_mug_only: mean(|s| s.mug_only),
        mean_code_switch: mean(|s| s.code_switch),
        mean_mug_only_zero_shot: mean(|s| s.mug_only_zero_shot),
        mean_code_switch_zero_shot: mean(|s| s.code_switch_zero_shot),
        seeds,
    })
}
