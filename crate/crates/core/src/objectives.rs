//! Corruption planning and the pretraining losses: token-level masked
//! utterance modelling (MUM) and the dialog-level generation losses MUG,
//! TMUG and MMUG.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::{AlignedContextPair, Context, Utterance};
use crate::error::{Error, Result};
use crate::lang::Lang;
use crate::model::{ModelParams, Net};
use crate::tensor::Tensor;
use crate::vocab::TokenId;

pub const DEFAULT_P_OMEGA: f64 = 0.15;
pub const DEFAULT_P_C: f64 = 0.2;

fn check_proportion(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Proportion(p))
    }
}

/// `max(1, round(p · n))`, capped at `n`.
pub fn mask_count(p: f64, n: usize) -> usize {
    ((p * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Token positions hidden from the utterance encoder, with their originals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked_token_positions: Vec<usize>,
    pub target_tokens: Vec<TokenId>,
}

impl MaskPlan {
    /// The utterance with every planned position replaced by MASK.
    pub fn apply(&self, utt: &[TokenId]) -> Vec<TokenId> {
        let mut out = utt.to_vec();
        for &p in &self.masked_token_positions {
            out[p] = TokenId::MASK;
        }
        out
    }
}

pub fn plan_token_masks<R: Rng>(utt: &[TokenId], p_omega: f64, rng: &mut R) -> Result<MaskPlan> {
    check_proportion(p_omega)?;
    if utt.is_empty() {
        return Err(Error::Input("cannot mask an empty utterance".into()));
    }
    let mut positions = sample(rng, utt.len(), mask_count(p_omega, utt.len())).into_vec();
    positions.sort_unstable();
    let target_tokens = positions.iter().map(|&p| utt[p]).collect();
    Ok(MaskPlan { masked_token_positions: positions, target_tokens })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CorruptionMode {
    Mug,
    Tmug,
    Mmug,
}

impl CorruptionMode {
    pub const ALL: [CorruptionMode; 3] = [CorruptionMode::Mug, CorruptionMode::Tmug, CorruptionMode::Mmug];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionMode::Mug => "MUG",
            CorruptionMode::Tmug => "TMUG",
            CorruptionMode::Mmug => "MMUG",
        }
    }
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MUG" => Ok(CorruptionMode::Mug),
            "TMUG" => Ok(CorruptionMode::Tmug),
            "MMUG" => Ok(CorruptionMode::Mmug),
            _ => Err(Error::Config(format!("unknown corruption mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum CorruptionSource<'a> {
    Context(&'a Context),
    Aligned(&'a AlignedContextPair),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub position: usize,
    pub tokens: Vec<TokenId>,
    pub lang: Lang,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedContext {
    /// Masked slots hold a MASK run as long as their target.
    pub context: Context,
    pub masked_positions: Vec<usize>,
    /// One per masked position, same order.
    pub targets: Vec<Target>,
    pub mode: CorruptionMode,
}

impl CorruptedContext {
    /// The pre-corruption context: every target put back in its slot.
    pub fn reconstruct(&self) -> Context {
        let mut ctx = self.context.clone();
        for t in &self.targets {
            ctx.utterances[t.position] = Utterance { tokens: t.tokens.clone(), lang: t.lang };
        }
        ctx
    }

    /// Structural invariants every corruption must satisfy.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        let t = self.context.len();
        if self.masked_positions.is_empty() || self.targets.is_empty() {
            return Err(Error::NothingMasked);
        }
        if self.masked_positions.len() != self.targets.len() {
            return bad("one target per masked position expected".into());
        }
        let set: BTreeSet<usize> = self.masked_positions.iter().copied().collect();
        if set.len() != self.masked_positions.len() || set.iter().any(|&p| p >= t) {
            return bad(format!("masked positions {:?} are not distinct slots of a {t}-context", self.masked_positions));
        }
        for (p, tg) in self.masked_positions.iter().zip(&self.targets) {
            if tg.position != *p || tg.tokens.is_empty() {
                return bad(format!("target for slot {p} is empty or misplaced"));
            }
            let slot = &self.context.utterances[*p].tokens;
            if slot.len() != tg.tokens.len() || slot.iter().any(|&x| x != TokenId::MASK) {
                return bad(format!("slot {p} is not a MASK run of the target length"));
            }
        }
        if self.mode == CorruptionMode::Tmug {
            let surviving: BTreeSet<Lang> =
                (0..t).filter(|k| !set.contains(k)).map(|k| self.context.utterances[k].lang).collect();
            if surviving.len() > 1 {
                return bad("TMUG left a code-switched context".into());
            }
            if self.targets.iter().any(|tg| surviving.contains(&tg.lang)) {
                return bad("TMUG target shares the surviving language".into());
            }
        }
        Ok(())
    }
}

fn mask_slot(ctx: &mut Context, target: &Target) {
    let lang = ctx.utterances[target.position].lang;
    ctx.utterances[target.position] = Utterance { tokens: vec![TokenId::MASK; target.tokens.len()], lang };
}

fn random_positions<R: Rng>(t: usize, p_c: f64, rng: &mut R) -> Vec<usize> {
    let mut pos = sample(rng, t, mask_count(p_c, t)).into_vec();
    pos.sort_unstable();
    pos
}

pub fn corrupt_context<R: Rng>(
    source: CorruptionSource<'_>,
    mode: CorruptionMode,
    p_c: f64,
    rng: &mut R,
) -> Result<CorruptedContext> {
    check_proportion(p_c)?;
    let (visible, targets) = match (mode, source) {
        (CorruptionMode::Mug, CorruptionSource::Context(ctx)) => {
            let lang = ctx.monolingual_lang().ok_or(Error::ModeInput { mode: "MUG", expected: "a monolingual context" })?;
            let targets = random_positions(ctx.len(), p_c, rng)
                .into_iter()
                .map(|k| Target { position: k, tokens: ctx.utterances[k].tokens.clone(), lang })
                .collect::<Vec<_>>();
            (ctx.clone(), targets)
        }
        (CorruptionMode::Tmug, CorruptionSource::Aligned(pair)) => {
            let slots = pair.translated_slots();
            if slots.is_empty() {
                return Err(Error::ModeInput { mode: "TMUG", expected: "at least one translated slot" });
            }
            let targets = slots
                .iter()
                .map(|&k| {
                    let u = &pair.translated[k].as_ref().expect("translated slot").utterance;
                    Target { position: k, tokens: u.tokens.clone(), lang: u.lang }
                })
                .collect::<Vec<_>>();
            (pair.multilingual(), targets)
        }
        (CorruptionMode::Mmug, CorruptionSource::Aligned(pair)) => {
            if pair.translated_slots().is_empty() {
                return Err(Error::ModeInput { mode: "MMUG", expected: "a context with a translated slot" });
            }
            let visible = pair.multilingual();
            let targets = random_positions(visible.len(), p_c, rng)
                .into_iter()
                .map(|k| {
                    let base = &pair.base.utterances[k];
                    let u = match &pair.translated[k] {
                        Some(t) if rng.random_bool(0.5) => &t.utterance,
                        _ => base,
                    };
                    Target { position: k, tokens: u.tokens.clone(), lang: u.lang }
                })
                .collect::<Vec<_>>();
            (visible, targets)
        }
        (CorruptionMode::Mmug, CorruptionSource::Context(ctx)) => {
            if ctx.monolingual_lang().is_some() {
                return Err(Error::ModeInput { mode: "MMUG", expected: "a multilingual context" });
            }
            let targets = random_positions(ctx.len(), p_c, rng)
                .into_iter()
                .map(|k| {
                    let u = &ctx.utterances[k];
                    Target { position: k, tokens: u.tokens.clone(), lang: u.lang }
                })
                .collect::<Vec<_>>();
            (ctx.clone(), targets)
        }
        (CorruptionMode::Mug, CorruptionSource::Aligned(_)) => {
            return Err(Error::ModeInput { mode: "MUG", expected: "a monolingual context" })
        }
        (CorruptionMode::Tmug, CorruptionSource::Context(_)) => {
            return Err(Error::ModeInput { mode: "TMUG", expected: "an aligned context pair" })
        }
    };
    let mut context = visible;
    for t in &targets {
        mask_slot(&mut context, t);
    }
    let cc = CorruptedContext { context, masked_positions: targets.iter().map(|t| t.position).collect(), targets, mode };
    cc.validate()?;
    Ok(cc)
}

/// JSONL form of a corrupted context for offline batch generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub movie_id: String,
    pub context_tokens: Vec<Vec<TokenId>>,
    pub context_langs: Vec<Lang>,
    pub masked_positions: Vec<usize>,
    pub targets: Vec<RecordTarget>,
    pub mode: CorruptionMode,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordTarget {
    pub tokens: Vec<TokenId>,
    pub lang: Lang,
}

impl CorruptionRecord {
    pub fn from_corrupted(cc: &CorruptedContext, seed: u64) -> Self {
        Self {
            movie_id: cc.context.movie_id.clone(),
            context_tokens: cc.context.utterances.iter().map(|u| u.tokens.clone()).collect(),
            context_langs: cc.context.utterances.iter().map(|u| u.lang).collect(),
            masked_positions: cc.masked_positions.clone(),
            targets: cc.targets.iter().map(|t| RecordTarget { tokens: t.tokens.clone(), lang: t.lang }).collect(),
            mode: cc.mode,
            seed,
        }
    }

    pub fn to_corrupted(&self) -> Result<CorruptedContext> {
        if self.context_tokens.len() != self.context_langs.len() || self.masked_positions.len() != self.targets.len() {
            return Err(Error::Input("inconsistent corruption record".into()));
        }
        let utterances = self
            .context_tokens
            .iter()
            .zip(&self.context_langs)
            .map(|(t, &lang)| Utterance { tokens: t.clone(), lang })
            .collect();
        let cc = CorruptedContext {
            context: Context { movie_id: self.movie_id.clone(), utterances },
            masked_positions: self.masked_positions.clone(),
            targets: self
                .masked_positions
                .iter()
                .zip(&self.targets)
                .map(|(&position, t)| Target { position, tokens: t.tokens.clone(), lang: t.lang })
                .collect(),
            mode: self.mode,
        };
        cc.validate()?;
        Ok(cc)
    }
}

/// Mean negative log-likelihood of `targets` under the row-wise softmax of `logits`.
pub fn masked_token_nll(logits: &Tensor, targets: &[TokenId]) -> f64 {
    assert_eq!(logits.rows(), targets.len());
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let row = logits.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[t.index()]
        })
        .sum();
    total / targets.len() as f64
}

fn indices(tokens: &[TokenId]) -> Vec<usize> {
    tokens.iter().map(|t| t.index()).collect()
}

/// MUM loss over several utterances, averaged over all masked tokens.
pub fn mum_loss_graph(net: &mut Net<'_, '_>, items: &[(&[TokenId], &MaskPlan)]) -> Result<Var> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (utt, plan) in items {
        if plan.masked_token_positions.iter().any(|&p| p >= utt.len()) {
            return Err(Error::Input("mask plan does not fit the utterance".into()));
        }
        let states = net.utterance_states(&plan.apply(utt))?;
        let picked = net.g.select_rows(states, &plan.masked_token_positions);
        rows.push(net.token_logits(picked));
        targets.extend(indices(&plan.target_tokens));
    }
    if rows.is_empty() {
        return Err(Error::Input("no utterance to mask".into()));
    }
    let logits = if rows.len() == 1 { rows[0] } else { net.g.concat_rows(&rows) };
    Ok(net.g.cross_entropy(logits, &targets))
}

/// Teacher-forced generation loss for every masked utterance, averaged over
/// all target tokens.
pub fn dialog_loss_graph(net: &mut Net<'_, '_>, cc: &CorruptedContext) -> Result<Var> {
    if cc.targets.is_empty() {
        return Err(Error::NothingMasked);
    }
    let (states, _) = net.encode(&cc.context)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for t in &cc.targets {
        let lang = net.model.config.lang_token(t.lang)?;
        rows.push(net.decoder_logits(states, t.position, lang, &t.tokens)?);
        targets.extend(indices(&t.tokens));
    }
    let logits = if rows.len() == 1 { rows[0] } else { net.g.concat_rows(&rows) };
    Ok(net.g.cross_entropy(logits, &targets))
}

pub fn utterance_loss(model: &ModelParams, utt: &[TokenId], plan: &MaskPlan) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let mut net = Net::new(&mut g, model);
    let loss = mum_loss_graph(&mut net, &[(utt, plan)])?;
    Ok(g.value(loss).item())
}

pub fn context_loss(model: &ModelParams, cc: &CorruptedContext) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let mut net = Net::new(&mut g, model);
    let loss = dialog_loss_graph(&mut net, cc)?;
    Ok(g.value(loss).item())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub utterance: f64,
    pub dialog: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { utterance: 1.0, dialog: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub utterance_part: f64,
    pub dialog_part: f64,
    pub token_count: usize,
}

pub fn total_loss(u_part: f64, d_part: f64, weights: LossWeights) -> LossValue {
    LossValue {
        total: weights.utterance * u_part + weights.dialog * d_part,
        utterance_part: u_part,
        dialog_part: d_part,
        token_count: 0,
    }
}

/// One pretraining example: a corrupted context plus token masks for the
/// utterances of its pre-corruption context.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainExample {
    pub corrupted: CorruptedContext,
    pub utterances: Vec<Vec<TokenId>>,
    pub mum_plans: Vec<MaskPlan>,
}

impl PretrainExample {
    pub fn build<R: Rng>(
        source: CorruptionSource<'_>,
        mode: CorruptionMode,
        p_omega: f64,
        p_c: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let corrupted = corrupt_context(source, mode, p_c, rng)?;
        let utterances: Vec<Vec<TokenId>> = corrupted.reconstruct().utterances.into_iter().map(|u| u.tokens).collect();
        let mum_plans = utterances.iter().map(|u| plan_token_masks(u, p_omega, rng)).collect::<Result<Vec<_>>>()?;
        Ok(Self { corrupted, utterances, mum_plans })
    }

    pub fn token_count(&self) -> usize {
        self.mum_plans.iter().map(|p| p.target_tokens.len()).sum::<usize>()
            + self.corrupted.targets.iter().map(|t| t.tokens.len()).sum::<usize>()
    }
}

/// Weighted hierarchical loss node and its value breakdown.
pub fn pretraining_loss(net: &mut Net<'_, '_>, ex: &PretrainExample, weights: LossWeights) -> Result<(Var, LossValue)> {
    let items: Vec<(&[TokenId], &MaskPlan)> =
        ex.utterances.iter().map(|u| u.as_slice()).zip(ex.mum_plans.iter()).collect();
    let u = mum_loss_graph(net, &items)?;
    let d = dialog_loss_graph(net, &ex.corrupted)?;
    let su = net.g.scale(u, weights.utterance);
    let sd = net.g.scale(d, weights.dialog);
    let total = net.g.sum(&[su, sd]);
    let mut value = total_loss(net.g.value(u).item(), net.g.value(d).item(), weights);
    value.token_count = ex.token_count();
    if !value.total.is_finite() {
        return Err(Error::NonFinite("pretraining loss".into()));
    }
    Ok((total, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AlignmentLink, TranslatedUtterance};
    use crate::model::ModelConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    fn utt(tokens: &[u32], lang: Lang) -> Utterance {
        Utterance { tokens: ids(tokens), lang }
    }

    fn mono(lang: Lang) -> Context {
        Context { movie_id: "m".into(), utterances: (0..5).map(|i| utt(&[10 + i, 20 + i], lang)).collect() }
    }

    fn pair(slots: &[usize]) -> AlignedContextPair {
        let base = mono(Lang::En);
        let translated = (0..5)
            .map(|k| {
                slots.contains(&k).then(|| TranslatedUtterance {
                    utterance: utt(&[30 + k as u32, 31, 32], Lang::Fr),
                    link: AlignmentLink { src_index: k, tgt_index: k, confidence: 0.95 },
                })
            })
            .collect();
        AlignedContextPair { base, translated, lang_pair: (Lang::En, Lang::Fr) }
    }

    #[test]
    fn mask_count_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u: Vec<TokenId> = (0..20).map(|i| TokenId(10 + i)).collect();
        assert_eq!(plan_token_masks(&u, 0.15, &mut rng).unwrap().masked_token_positions.len(), 3);
        assert_eq!(plan_token_masks(&u[..1], 0.15, &mut rng).unwrap().masked_token_positions, vec![0]);
        let a = plan_token_masks(&u, 0.15, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = plan_token_masks(&u, 0.15, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(plan_token_masks(&u, 0.0, &mut rng).is_err());
        assert!(plan_token_masks(&u, 1.5, &mut rng).is_err());
    }

    #[test]
    fn mug_masks_sampled_slots() {
        let ctx = mono(Lang::En);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cc = corrupt_context(CorruptionSource::Context(&ctx), CorruptionMode::Mug, 0.4, &mut rng).unwrap();
        assert_eq!(cc.masked_positions.len(), 2);
        for t in &cc.targets {
            assert_eq!(t.lang, Lang::En);
            assert_eq!(t.tokens, ctx.utterances[t.position].tokens);
            assert!(cc.context.utterances[t.position].tokens.iter().all(|&x| x == TokenId::MASK));
        }
        assert_eq!(cc.reconstruct(), ctx);
    }

    #[test]
    fn tmug_masks_every_translated_slot() {
        let p = pair(&[1, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cc = corrupt_context(CorruptionSource::Aligned(&p), CorruptionMode::Tmug, 0.2, &mut rng).unwrap();
        assert_eq!(cc.masked_positions, vec![1, 3, 4]);
        assert!(cc.targets.iter().all(|t| t.lang == Lang::Fr));
        let surviving: BTreeSet<Lang> = [0, 2].iter().map(|&k| cc.context.utterances[k].lang).collect();
        assert_eq!(surviving, [Lang::En].into_iter().collect());
        assert_eq!(cc.reconstruct(), p.multilingual());
        assert!(corrupt_context(CorruptionSource::Aligned(&pair(&[])), CorruptionMode::Tmug, 0.2, &mut rng).is_err());
    }

    #[test]
    fn mmug_targets_carry_their_language() {
        let mut ctx = mono(Lang::En);
        ctx.utterances[2].lang = Lang::It;
        ctx.utterances[3].lang = Lang::Es;
        let mut found = false;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cc = corrupt_context(CorruptionSource::Context(&ctx), CorruptionMode::Mmug, 0.4, &mut rng).unwrap();
            if cc.masked_positions == vec![2, 3] {
                assert_eq!(cc.targets.iter().map(|t| t.lang).collect::<Vec<_>>(), vec![Lang::It, Lang::Es]);
                found = true;
            }
            assert_eq!(cc.reconstruct(), ctx);
        }
        assert!(found);
    }

    #[test]
    fn mode_input_mismatches_are_errors() {
        let ctx = mono(Lang::En);
        let p = pair(&[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (src, mode) in [
            (CorruptionSource::Aligned(&p), CorruptionMode::Mug),
            (CorruptionSource::Context(&ctx), CorruptionMode::Tmug),
            (CorruptionSource::Context(&ctx), CorruptionMode::Mmug),
        ] {
            assert!(matches!(corrupt_context(src, mode, 0.2, &mut rng), Err(Error::ModeInput { .. })));
        }
        assert!(matches!(
            corrupt_context(CorruptionSource::Context(&ctx), CorruptionMode::Mug, 0.0, &mut rng),
            Err(Error::Proportion(_))
        ));
    }

    #[test]
    fn total_loss_combination() {
        let w = LossWeights::default();
        assert_eq!(total_loss(2.0, 3.0, w).total, 5.0);
        assert_eq!(total_loss(1.25, 0.0, w).total, 1.25);
        assert_eq!(total_loss(2.0, 3.0, LossWeights { utterance: 0.5, dialog: 2.0 }).total, 7.0);
    }

    #[test]
    fn nll_matches_hand_softmax() {
        let logits = Tensor::from_vec(1, 3, vec![1.0, 0.0, 0.0]);
        let expect = (1f64.exp() + 2.0).ln() - 1.0;
        assert!((masked_token_nll(&logits, &[TokenId(0)]) - expect).abs() < 1e-12);
    }

    fn zero_model(v: usize) -> ModelParams {
        let mut c = ModelConfig::desk(v, [(Lang::En, 5), (Lang::Fr, 6)].into_iter().collect());
        c.dim = 8;
        c.ffn_dim = 8;
        ModelParams::zeros(c).unwrap()
    }

    #[test]
    fn uniform_model_gives_log_vocab() {
        let m = zero_model(40);
        let u = ids(&[10, 11, 12, 13, 14, 15, 16, 17, 18, 19]);
        let plan = plan_token_masks(&u, 0.3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((utterance_loss(&m, &u, &plan).unwrap() - 40f64.ln()).abs() < 1e-12);
        let ctx = mono(Lang::En);
        let cc = corrupt_context(CorruptionSource::Context(&ctx), CorruptionMode::Mug, 0.2, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert!((context_loss(&m, &cc).unwrap() - 40f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dialog_loss_matches_closed_form_on_two_slot_fixture() {
        // With a zero final-LN gain every decoder state equals the LN bias h,
        // so each step's logits are tok_emb · h and the loss is closed-form.
        let mut c = ModelConfig::desk(12, [(Lang::En, 5), (Lang::Fr, 6)].into_iter().collect());
        c.dim = 4;
        c.ffn_dim = 4;
        c.context_size = 2;
        let mut m = ModelParams::zeros(c).unwrap();
        let emb: Vec<f64> = (0..48).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        let h = [0.3, -0.2, 0.5, 0.1];
        *m.store.get_mut(m.store.find("tok_emb").unwrap()) = Tensor::from_vec(12, 4, emb.clone());
        *m.store.get_mut(m.store.find("dec.ln.gain").unwrap()) = Tensor::zeros(1, 4);
        *m.store.get_mut(m.store.find("dec.ln.bias").unwrap()) = Tensor::row_vector(h.to_vec());
        let ctx = Context { movie_id: "m".into(), utterances: vec![utt(&[7, 8, 9], Lang::En), utt(&[10, 11], Lang::En)] };
        let cc = corrupt_context(CorruptionSource::Context(&ctx), CorruptionMode::Mug, 0.5, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert_eq!(cc.targets.len(), 1);
        let logits: Vec<f64> = (0..12).map(|v| (0..4).map(|k| emb[v * 4 + k] * h[k]).sum()).collect();
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        let t = &cc.targets[0].tokens;
        let expect = t.iter().map(|tok| lse - logits[tok.index()]).sum::<f64>() / t.len() as f64;
        assert!((context_loss(&m, &cc).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn doubling_dialog_weight_doubles_its_gradient() {
        let mut c = ModelConfig::desk(40, [(Lang::En, 5), (Lang::Fr, 6)].into_iter().collect());
        c.dim = 8;
        c.ffn_dim = 8;
        c.dropout = 0.0;
        let m = ModelParams::init(c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ctx = mono(Lang::En);
        let ex = PretrainExample::build(CorruptionSource::Context(&ctx), CorruptionMode::Mug, 0.3, 0.2, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        let grads = |w: f64| {
            let mut g = Graph::new(&m.store);
            let mut net = Net::new(&mut g, &m);
            let (loss, _) = pretraining_loss(&mut net, &ex, LossWeights { utterance: 0.0, dialog: w }).unwrap();
            g.backward(loss)
        };
        let (one, two) = (grads(1.0), grads(2.0));
        let mut nonzero = 0;
        for ((_, a), (_, b)) in one.iter().zip(two.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
                nonzero += usize::from(*x != 0.0);
            }
        }
        assert!(nonzero > 0);
    }

    proptest! {
        #[test]
        fn corruption_is_lossless(seed in any::<u64>(), p in 0.05f64..=1.0, mode_i in 0usize..3) {
            let p_pair = pair(&[0, 2, 3]);
            let ctx = mono(Lang::En);
            let mode = CorruptionMode::ALL[mode_i];
            let src = match mode {
                CorruptionMode::Mug => CorruptionSource::Context(&ctx),
                _ => CorruptionSource::Aligned(&p_pair),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cc = corrupt_context(src, mode, p, &mut rng).unwrap();
            cc.validate().unwrap();
            let again = corrupt_context(src, mode, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&cc, &again);
            let back = cc.reconstruct();
            for k in 0..5 {
                if !cc.masked_positions.contains(&k) {
                    prop_assert_eq!(&back.utterances[k], &cc.context.utterances[k]);
                }
            }
            let record = CorruptionRecord::from_corrupted(&cc, seed);
            let json = serde_json::to_string(&record).unwrap();
            let parsed: CorruptionRecord = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(parsed.to_corrupted().unwrap(), cc);
        }
    }
}
