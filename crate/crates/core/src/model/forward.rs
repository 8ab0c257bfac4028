use rand::Rng;

use super::{AttnIds, EncoderBlockIds, FfnIds, HeadIds, ModelParams};
use crate::autodiff::{Graph, Var};
use crate::corpus::Context;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::rng::StageRng;
use crate::tensor::Tensor;
use crate::vocab::TokenId;

/// Mean-pooled final utterance-encoder states.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceEmbedding(pub Vec<f64>);

/// Mean-pooled final dialog-encoder states.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEmbedding(pub Vec<f64>);

/// Model forward pass recorded on a [`Graph`].
pub struct Net<'a, 'p> {
    pub g: &'a mut Graph<'p>,
    pub model: &'p ModelParams,
    dropout: Option<&'a mut StageRng>,
}

impl<'a, 'p> Net<'a, 'p> {
    /// Inference mode: dropout disabled.
    pub fn new(g: &'a mut Graph<'p>, model: &'p ModelParams) -> Self {
        Self { g, model, dropout: None }
    }

    /// Training mode: dropout masks drawn from `rng`.
    pub fn training(g: &'a mut Graph<'p>, model: &'p ModelParams, rng: &'a mut StageRng) -> Self {
        Self { g, model, dropout: Some(rng) }
    }

    fn p(&mut self, id: ParamId) -> Var {
        self.g.param(id)
    }

    fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.p(w);
        let b = self.p(b);
        let y = self.g.matmul(x, w);
        self.g.add_row(y, b)
    }

    fn drop(&mut self, x: Var) -> Var {
        let rate = self.model.config.dropout;
        match self.dropout.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let keep: Vec<bool> = (0..self.g.value(x).len()).map(|_| rng.random::<f64>() >= rate).collect();
                self.g.dropout(x, &keep, rate)
            }
            _ => x,
        }
    }

    fn layer_norm(&mut self, x: Var, (gain, bias): (ParamId, ParamId)) -> Var {
        let g = self.p(gain);
        let b = self.p(bias);
        self.g.layer_norm(x, g, b)
    }

    /// Pre-norm attention sublayer with residual. Keys and values come from
    /// `memory` when given (cross-attention), otherwise from the normed input.
    fn attention(&mut self, x: Var, memory: Option<Var>, ids: &AttnIds, causal: bool) -> Var {
        let h = self.layer_norm(x, (ids.ln_g, ids.ln_b));
        let kv = memory.unwrap_or(h);
        let q = self.linear(h, ids.wq, ids.bq);
        let k = self.linear(kv, ids.wk, ids.bk);
        let v = self.linear(kv, ids.wv, ids.bv);
        let dh = self.model.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.model.config.heads)
            .map(|i| {
                let qh = self.g.slice_cols(q, i * dh, dh);
                let kh = self.g.slice_cols(k, i * dh, dh);
                let vh = self.g.slice_cols(v, i * dh, dh);
                let s = self.g.matmul_nt(qh, kh);
                let s = self.g.scale(s, scale);
                let a = self.g.softmax(s, causal);
                self.g.matmul(a, vh)
            })
            .collect();
        let o = if heads.len() == 1 { heads[0] } else { self.g.concat_cols(&heads) };
        let o = self.linear(o, ids.wo, ids.bo);
        let o = self.drop(o);
        self.g.add(x, o)
    }

    fn ffn(&mut self, x: Var, ids: &FfnIds) -> Var {
        let h = self.layer_norm(x, (ids.ln_g, ids.ln_b));
        let h = self.linear(h, ids.w1, ids.b1);
        let h = self.g.gelu(h);
        let h = self.linear(h, ids.w2, ids.b2);
        let h = self.drop(h);
        self.g.add(x, h)
    }

    fn encoder(&mut self, mut x: Var, blocks: &[EncoderBlockIds], ln: (ParamId, ParamId)) -> Var {
        for b in blocks {
            x = self.attention(x, None, &b.attn, false);
            x = self.ffn(x, &b.ffn);
        }
        self.layer_norm(x, ln)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let c = &self.model.config;
        if tokens.is_empty() || tokens.len() > c.max_utt_tokens {
            return Err(Error::Input(format!("utterance length {} outside 1..={}", tokens.len(), c.max_utt_tokens)));
        }
        if let Some(t) = tokens.iter().find(|t| t.index() >= c.vocab_size) {
            return Err(Error::Input(format!("token {t} outside the vocabulary of {}", c.vocab_size)));
        }
        Ok(())
    }

    fn positions(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    /// Final token states of the utterance encoder (`len × dim`).
    pub fn utterance_states(&mut self, tokens: &[TokenId]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let m = self.model;
        let ids: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
        let emb = self.p(m.layout.tok_emb);
        let pos = self.p(m.layout.pos_tok);
        let x = self.g.gather(emb, &ids);
        let p = self.g.gather(pos, &Self::positions(ids.len()));
        let x = self.g.add(x, p);
        let x = self.drop(x);
        Ok(self.encoder(x, &m.layout.utt_blocks, m.layout.utt_ln))
    }

    /// Utterance embedding (`1 × dim`) plus the token states it pools.
    pub fn utterance_embedding(&mut self, tokens: &[TokenId]) -> Result<(Var, Var)> {
        let states = self.utterance_states(tokens)?;
        Ok((self.g.mean_rows(states), states))
    }

    /// Final dialog-encoder states (`n × dim`) from `n ≤ T` utterance
    /// embeddings; retrieval contexts hold `T − 1` utterances.
    pub fn context_states(&mut self, utterance_embeddings: &[Var]) -> Result<Var> {
        let m = self.model;
        let t = utterance_embeddings.len();
        if t == 0 || t > m.config.context_size {
            return Err(Error::Input(format!("expected 1..={} utterance embeddings, got {t}", m.config.context_size)));
        }
        let x = self.g.concat_rows(utterance_embeddings);
        let pos = self.p(m.layout.pos_utt);
        let p = self.g.gather(pos, &Self::positions(t));
        let x = self.g.add(x, p);
        Ok(self.encoder(x, &m.layout.ctx_blocks, m.layout.ctx_ln))
    }

    /// Encode a full context: returns (dialog states `T × dim`, pooled `1 × dim`).
    pub fn encode(&mut self, ctx: &Context) -> Result<(Var, Var)> {
        let embs = ctx
            .utterances
            .iter()
            .map(|u| self.utterance_embedding(&u.tokens).map(|(e, _)| e))
            .collect::<Result<Vec<_>>>()?;
        let states = self.context_states(&embs)?;
        let pooled = self.g.mean_rows(states);
        Ok((states, pooled))
    }

    /// Vocabulary logits for a block of states.
    pub fn token_logits(&mut self, states: Var) -> Var {
        let m = self.model;
        let proj = self.p(m.layout.out_proj.unwrap_or(m.layout.tok_emb));
        self.g.matmul_nt(states, proj)
    }

    /// Teacher-forced decoder logits (`len × |V|`) for the utterance at `slot`.
    ///
    /// The decoder reads the target-language token followed by the target
    /// shifted right by one; row `j` predicts `targets[j]`. The slot's
    /// utterance-position embedding tells the decoder which masked utterance
    /// to produce.
    pub fn decoder_logits(&mut self, memory: Var, slot: usize, lang: TokenId, targets: &[TokenId]) -> Result<Var> {
        self.check_tokens(targets)?;
        self.check_tokens(&[lang])?;
        let m = self.model;
        if slot >= m.config.context_size {
            return Err(Error::Input(format!("slot {slot} outside the context")));
        }
        let inputs: Vec<usize> =
            std::iter::once(lang.index()).chain(targets[..targets.len() - 1].iter().map(|t| t.index())).collect();
        let emb = self.p(m.layout.tok_emb);
        let pos = self.p(m.layout.pos_tok);
        let pos_utt = self.p(m.layout.pos_utt);
        let x = self.g.gather(emb, &inputs);
        let p = self.g.gather(pos, &Self::positions(inputs.len()));
        let x = self.g.add(x, p);
        let s = self.g.gather(pos_utt, &[slot]);
        let mut x = self.g.add_row(x, s);
        x = self.drop(x);
        for b in &m.layout.dec_blocks {
            x = self.attention(x, None, &b.self_attn, true);
            x = self.attention(x, Some(memory), &b.cross_attn, false);
            x = self.ffn(x, &b.ffn);
        }
        let x = self.layer_norm(x, m.layout.dec_ln);
        Ok(self.token_logits(x))
    }

    fn head(&mut self, x: Var, h: &HeadIds) -> Var {
        let z = self.linear(x, h.w1, h.b1);
        let z = self.g.gelu(z);
        self.linear(z, h.w2, h.b2)
    }

    /// Inconsistency-identification logits (`1 × T`).
    pub fn ii_logits(&mut self, context_embedding: Var) -> Var {
        let h = self.model.layout.ii_head.clone();
        self.head(context_embedding, &h)
    }

    /// Next-utterance score (`1 × 1`) of a candidate embedding given the context embedding.
    pub fn nur_logit(&mut self, context_embedding: Var, candidate_embedding: Var) -> Var {
        let h = self.model.layout.nur_head.clone();
        let x = self.g.concat_cols(&[context_embedding, candidate_embedding]);
        self.head(x, &h)
    }
}

pub fn encode_utterance(model: &ModelParams, tokens: &[TokenId]) -> Result<(UtteranceEmbedding, Tensor)> {
    let mut g = Graph::new(&model.store);
    let mut net = Net::new(&mut g, model);
    let (e, s) = net.utterance_embedding(tokens)?;
    Ok((UtteranceEmbedding(g.value(e).data().to_vec()), g.value(s).clone()))
}

pub fn encode_context(model: &ModelParams, utterances: &[UtteranceEmbedding]) -> Result<(ContextEmbedding, Tensor)> {
    if let Some(u) = utterances.iter().find(|u| u.0.len() != model.config.dim) {
        return Err(Error::Input(format!("utterance embedding of width {} for a model of width {}", u.0.len(), model.config.dim)));
    }
    let mut g = Graph::new(&model.store);
    let inputs: Vec<Var> = utterances.iter().map(|u| g.input(Tensor::row_vector(u.0.clone()))).collect();
    let mut net = Net::new(&mut g, model);
    let states = net.context_states(&inputs)?;
    let pooled = g.mean_rows(states);
    Ok((ContextEmbedding(g.value(pooled).data().to_vec()), g.value(states).clone()))
}

pub fn context_embedding_of(model: &ModelParams, ctx: &Context) -> Result<ContextEmbedding> {
    let mut g = Graph::new(&model.store);
    let mut net = Net::new(&mut g, model);
    let (_, pooled) = net.encode(ctx)?;
    Ok(ContextEmbedding(g.value(pooled).data().to_vec()))
}

/// Per-step logits (`len × |V|`) for generating `targets` at `slot` given the
/// dialog-level states of a (corrupted) context.
pub fn decode_masked_utterance(
    model: &ModelParams,
    context_states: &Tensor,
    slot: usize,
    lang: TokenId,
    targets: &[TokenId],
) -> Result<Tensor> {
    if context_states.cols() != model.config.dim {
        return Err(Error::Input("context states do not match the model width".into()));
    }
    let mut g = Graph::new(&model.store);
    let memory = g.input(context_states.clone());
    let mut net = Net::new(&mut g, model);
    let logits = net.decoder_logits(memory, slot, lang, targets)?;
    Ok(g.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Lang;
    use crate::model::ModelConfig;
    use rand::SeedableRng;

    fn model() -> ModelParams {
        let mut c = ModelConfig::desk(16, [(Lang::En, 5), (Lang::Fr, 6)].into_iter().collect());
        c.init_std = 0.3;
        c.dim = 8;
        c.ffn_dim = 16;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        ModelParams::init(c, &mut rng).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn utterance_encoding_contract() {
        let m = model();
        let (a, states) = encode_utterance(&m, &ids(&[7, 8, 9])).unwrap();
        let (b, _) = encode_utterance(&m, &ids(&[7, 8, 9])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 8);
        assert_eq!(states.shape(), (3, 8));
        let (c, _) = encode_utterance(&m, &ids(&[9, 8, 7])).unwrap();
        assert_ne!(a, c);
        assert!(encode_utterance(&m, &[]).is_err());
        assert!(encode_utterance(&m, &ids(&[16])).is_err());
        assert!(encode_utterance(&m, &ids(&[7; 51])).is_err());
    }

    #[test]
    fn context_encoding_contract() {
        let m = model();
        let embs: Vec<_> = (0..5).map(|i| encode_utterance(&m, &ids(&[7 + i, 8])).unwrap().0).collect();
        let (a, states) = encode_context(&m, &embs).unwrap();
        assert_eq!(a.0.len(), 8);
        assert_eq!(states.shape(), (5, 8));
        assert_eq!(encode_context(&m, &embs).unwrap().0, a);
        let mut swapped = embs.clone();
        swapped.swap(1, 3);
        assert_ne!(encode_context(&m, &swapped).unwrap().0, a);
        assert_eq!(encode_context(&m, &embs[..4]).unwrap().1.shape(), (4, 8));
        assert!(encode_context(&m, &[]).is_err());
        let mut six = embs.clone();
        six.push(embs[0].clone());
        assert!(encode_context(&m, &six).is_err());
    }

    #[test]
    fn decoder_is_causal_and_language_aware() {
        let m = model();
        let embs: Vec<_> = (0..5).map(|i| encode_utterance(&m, &ids(&[7 + i])).unwrap().0).collect();
        let (_, states) = encode_context(&m, &embs).unwrap();
        let x = decode_masked_utterance(&m, &states, 2, TokenId(5), &ids(&[10, 11, 12])).unwrap();
        let y = decode_masked_utterance(&m, &states, 2, TokenId(5), &ids(&[10, 13, 14])).unwrap();
        assert_eq!(x.shape(), (3, 16));
        assert_eq!(x.row(0), y.row(0));
        assert_eq!(x.row(1), y.row(1));
        assert_ne!(x.row(2), y.row(2));
        let z = decode_masked_utterance(&m, &states, 2, TokenId(6), &ids(&[10, 11, 12])).unwrap();
        assert_ne!(x.row(0), z.row(0));
    }
}
