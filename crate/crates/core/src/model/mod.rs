//! Tiny hierarchical transformer: an utterance encoder over tokens, a dialog
//! encoder over utterance embeddings, and an autoregressive decoder that
//! cross-attends to the dialog-level states of a corrupted context.

mod checkpoint;
mod forward;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::Lang;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::{TokenId, Vocabulary};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    context_embedding_of, decode_masked_utterance, encode_context, encode_utterance, ContextEmbedding, Net,
    UtteranceEmbedding,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers_u: usize,
    pub layers_d: usize,
    pub layers_dec: usize,
    pub ffn_dim: usize,
    pub max_utt_tokens: usize,
    pub context_size: usize,
    pub dropout: f64,
    pub tie_embeddings: bool,
    pub init_std: f64,
    /// Token announcing each target language to the decoder.
    pub lang_tokens: BTreeMap<Lang, u32>,
}

impl ModelConfig {
    /// Desk-scale defaults: width 32, two heads, two layers per stack.
    pub fn desk(vocab_size: usize, lang_tokens: BTreeMap<Lang, u32>) -> Self {
        Self {
            vocab_size,
            dim: 32,
            heads: 2,
            layers_u: 2,
            layers_d: 2,
            layers_dec: 2,
            ffn_dim: 128,
            max_utt_tokens: 50,
            context_size: 5,
            dropout: 0.1,
            tie_embeddings: true,
            init_std: 0.02,
            lang_tokens,
        }
    }

    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        Self::desk(vocab.len(), vocab.lang_ids().iter().map(|(&l, &id)| (l, id.0)).collect())
    }

    /// The published SMALL hierarchical encoder (about 80M parameters with
    /// its 105,879-token vocabulary). Constructible, far too large for desk use.
    pub fn small_preset(vocab_size: usize, lang_tokens: BTreeMap<Lang, u32>) -> Self {
        Self {
            dim: 768,
            heads: 6,
            layers_u: 4,
            layers_d: 4,
            layers_dec: 4,
            ffn_dim: 768,
            ..Self::desk(vocab_size, lang_tokens)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.layers_u == 0 || self.layers_d == 0 || self.layers_dec == 0 {
            return bad("every stack needs at least one layer".into());
        }
        if self.ffn_dim == 0 || self.max_utt_tokens == 0 || self.context_size == 0 {
            return bad("ffn_dim, max_utt_tokens and context_size must be positive".into());
        }
        if self.vocab_size <= TokenId::MASK.index() {
            return bad(format!("vocab_size {} cannot hold the mask token", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if let Some((l, id)) = self.lang_tokens.iter().find(|(_, &id)| id as usize >= self.vocab_size) {
            return bad(format!("language token {id} for {l} exceeds the vocabulary"));
        }
        Ok(())
    }

    pub fn lang_token(&self, lang: Lang) -> Result<TokenId> {
        self.lang_tokens.get(&lang).map(|&id| TokenId(id)).ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnIds {
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnIds {
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlockIds {
    pub attn: AttnIds,
    pub ffn: FfnIds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlockIds {
    pub self_attn: AttnIds,
    pub cross_attn: AttnIds,
    pub ffn: FfnIds,
}

/// Two-layer MLP task head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub tok_emb: ParamId,
    pub out_proj: Option<ParamId>,
    pub pos_tok: ParamId,
    pub pos_utt: ParamId,
    pub utt_blocks: Vec<EncoderBlockIds>,
    pub utt_ln: (ParamId, ParamId),
    pub ctx_blocks: Vec<EncoderBlockIds>,
    pub ctx_ln: (ParamId, ParamId),
    pub dec_blocks: Vec<DecoderBlockIds>,
    pub dec_ln: (ParamId, ParamId),
    /// Inconsistency identification: context embedding to T logits.
    pub ii_head: HeadIds,
    /// Next-utterance retrieval: [context; candidate] embedding to one logit.
    pub nur_head: HeadIds,
}

impl Layout {
    pub fn head_params(&self) -> Vec<ParamId> {
        [&self.ii_head, &self.nur_head].iter().flat_map(|h| [h.w1, h.b1, h.w2, h.b2]).collect()
    }
}

/// All learnable tensors of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub layout: Layout,
}

#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal,
}

struct Builder<'r, R: Rng> {
    store: ParamStore,
    rng: Option<&'r mut R>,
    std: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let value = match (init, self.rng.as_deref_mut()) {
            (Init::Ones, _) => Tensor::filled(rows, cols, 1.0),
            (Init::Normal, Some(rng)) => {
                let normal = Normal::new(0.0, self.std).expect("init std must be finite and non-negative");
                Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
            }
            _ => Tensor::zeros(rows, cols),
        };
        let decay = matches!(init, Init::Normal) && rows > 1;
        self.store.push(name, value, decay)
    }

    fn attn(&mut self, p: &str, d: usize) -> AttnIds {
        AttnIds {
            ln_g: self.add(format!("{p}.ln.gain"), 1, d, Init::Ones),
            ln_b: self.add(format!("{p}.ln.bias"), 1, d, Init::Zeros),
            wq: self.add(format!("{p}.wq"), d, d, Init::Normal),
            bq: self.add(format!("{p}.bq"), 1, d, Init::Zeros),
            wk: self.add(format!("{p}.wk"), d, d, Init::Normal),
            bk: self.add(format!("{p}.bk"), 1, d, Init::Zeros),
            wv: self.add(format!("{p}.wv"), d, d, Init::Normal),
            bv: self.add(format!("{p}.bv"), 1, d, Init::Zeros),
            wo: self.add(format!("{p}.wo"), d, d, Init::Normal),
            bo: self.add(format!("{p}.bo"), 1, d, Init::Zeros),
        }
    }

    fn ffn(&mut self, p: &str, d: usize, f: usize) -> FfnIds {
        FfnIds {
            ln_g: self.add(format!("{p}.ln.gain"), 1, d, Init::Ones),
            ln_b: self.add(format!("{p}.ln.bias"), 1, d, Init::Zeros),
            w1: self.add(format!("{p}.w1"), d, f, Init::Normal),
            b1: self.add(format!("{p}.b1"), 1, f, Init::Zeros),
            w2: self.add(format!("{p}.w2"), f, d, Init::Normal),
            b2: self.add(format!("{p}.b2"), 1, d, Init::Zeros),
        }
    }

    fn norm(&mut self, p: &str, d: usize) -> (ParamId, ParamId) {
        (self.add(format!("{p}.gain"), 1, d, Init::Ones), self.add(format!("{p}.bias"), 1, d, Init::Zeros))
    }

    fn head(&mut self, p: &str, input: usize, hidden: usize, out: usize) -> HeadIds {
        HeadIds {
            w1: self.add(format!("{p}.w1"), input, hidden, Init::Normal),
            b1: self.add(format!("{p}.b1"), 1, hidden, Init::Zeros),
            w2: self.add(format!("{p}.w2"), hidden, out, Init::Normal),
            b2: self.add(format!("{p}.b2"), 1, out, Init::Zeros),
        }
    }
}

impl ModelParams {
    /// Randomly initialised parameters: N(0, init_std) weights, zero biases,
    /// unit layer-norm gains.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, Some(rng))
    }

    /// All-zero weights with unit layer-norm gains; the canonical shape template.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::build::<rand::rngs::ThreadRng>(config, None)
    }

    fn build<R: Rng>(config: ModelConfig, rng: Option<&mut R>) -> Result<Self> {
        config.validate()?;
        let (v, d, f, t) = (config.vocab_size, config.dim, config.ffn_dim, config.context_size);
        let mut b = Builder { store: ParamStore::new(), rng, std: config.init_std };
        let tok_emb = b.add("tok_emb".into(), v, d, Init::Normal);
        let out_proj = (!config.tie_embeddings).then(|| b.add("out_proj".into(), v, d, Init::Normal));
        let pos_tok = b.add("pos_tok".into(), config.max_utt_tokens, d, Init::Normal);
        let pos_utt = b.add("pos_utt".into(), t, d, Init::Normal);
        let utt_blocks = (0..config.layers_u)
            .map(|i| EncoderBlockIds { attn: b.attn(&format!("utt.{i}.attn"), d), ffn: b.ffn(&format!("utt.{i}.ffn"), d, f) })
            .collect();
        let utt_ln = b.norm("utt.ln", d);
        let ctx_blocks = (0..config.layers_d)
            .map(|i| EncoderBlockIds { attn: b.attn(&format!("ctx.{i}.attn"), d), ffn: b.ffn(&format!("ctx.{i}.ffn"), d, f) })
            .collect();
        let ctx_ln = b.norm("ctx.ln", d);
        let dec_blocks = (0..config.layers_dec)
            .map(|i| DecoderBlockIds {
                self_attn: b.attn(&format!("dec.{i}.self"), d),
                cross_attn: b.attn(&format!("dec.{i}.cross"), d),
                ffn: b.ffn(&format!("dec.{i}.ffn"), d, f),
            })
            .collect();
        let dec_ln = b.norm("dec.ln", d);
        let ii_head = b.head("head.ii", d, d, t);
        let nur_head = b.head("head.nur", 2 * d, d, 1);
        let layout = Layout {
            tok_emb,
            out_proj,
            pos_tok,
            pos_utt,
            utt_blocks,
            utt_ln,
            ctx_blocks,
            ctx_ln,
            dec_blocks,
            dec_ln,
            ii_head,
            nur_head,
        };
        Ok(Self { config, store: b.store, layout })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Whether a parameter belongs to one of the downstream task heads.
    pub fn is_head_param(&self, id: ParamId) -> bool {
        self.layout.head_params().contains(&id)
    }
}
