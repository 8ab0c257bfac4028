//! Inconsistency identification (II) and next-utterance retrieval (NUR)
//! instances, their code-switched variants, scoring and metrics.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::corpus::{AlignedContextPair, Context, Utterance};
use crate::error::{Error, Result};
use crate::lang::Lang;
use crate::model::{ModelParams, Net};
use crate::rng::{item_stream, StageRng};
use crate::vocab::TokenId;

pub const DEFAULT_DISTRACTORS: usize = 9;
pub const DEFAULT_P_LPRIME: f64 = 0.4;

/// Distinct utterances of each movie, in every language seen.
#[derive(Clone, Debug, Default)]
pub struct UtterancePool {
    by_movie: BTreeMap<String, Vec<Utterance>>,
    seen: BTreeSet<(String, Lang, Vec<TokenId>)>,
}

impl UtterancePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, movie_id: &str, utt: &Utterance) {
        if self.seen.insert((movie_id.to_string(), utt.lang, utt.tokens.clone())) {
            self.by_movie.entry(movie_id.to_string()).or_default().push(utt.clone());
        }
    }

    pub fn add_context(&mut self, ctx: &Context) {
        for u in &ctx.utterances {
            self.add(&ctx.movie_id, u);
        }
    }

    pub fn add_pair(&mut self, pair: &AlignedContextPair) {
        self.add_context(&pair.base);
        for t in pair.translated.iter().flatten() {
            self.add(&pair.base.movie_id, &t.utterance);
        }
    }

    pub fn from_sources(contexts: &[Context], pairs: &[AlignedContextPair]) -> Self {
        let mut pool = Self::new();
        contexts.iter().for_each(|c| pool.add_context(c));
        pairs.iter().for_each(|p| pool.add_pair(p));
        pool
    }

    pub fn movie(&self, movie_id: &str) -> &[Utterance] {
        self.by_movie.get(movie_id).map(Vec::as_slice).unwrap_or(&[])
    }

    fn candidates<'a>(&'a self, movie_id: &str, lang: Lang) -> Vec<&'a Utterance> {
        self.movie(movie_id).iter().filter(|u| u.lang == lang).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Ii,
    Mii,
    Nur,
    Mnur,
}

impl TaskKind {
    pub fn is_retrieval(self) -> bool {
        matches!(self, TaskKind::Nur | TaskKind::Mnur)
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ii" => Ok(TaskKind::Ii),
            "mii" => Ok(TaskKind::Mii),
            "nur" => Ok(TaskKind::Nur),
            "mnur" => Ok(TaskKind::Mnur),
            _ => Err(Error::Task(format!("unknown task {s:?}"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Ii => "ii",
            TaskKind::Mii => "mii",
            TaskKind::Nur => "nur",
            TaskKind::Mnur => "mnur",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyInstance {
    pub context: Context,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalInstance {
    /// The first `T − 1` utterances.
    pub context: Context,
    pub candidates: Vec<Utterance>,
    pub label: usize,
}

/// `round(p · n)` slots swapped to their translation, chosen among the
/// translated slots below `n`. `None` when the pair has too few.
fn swap_slots(pair: &AlignedContextPair, p: f64, n: usize, rng: &mut StageRng) -> Option<Vec<usize>> {
    let k = (p * n as f64).round() as usize;
    let avail: Vec<usize> = pair.translated_slots().into_iter().filter(|&s| s < n).collect();
    if avail.len() < k {
        return None;
    }
    let mut chosen: Vec<usize> = avail.choose_multiple(rng, k).copied().collect();
    chosen.sort_unstable();
    Some(chosen)
}

fn ii_instance(ctx: Context, pool: &UtterancePool, rng: &mut StageRng) -> Result<InconsistencyInstance> {
    let label = rng.random_range(0..ctx.len());
    let original = &ctx.utterances[label];
    let options: Vec<&Utterance> =
        pool.candidates(&ctx.movie_id, original.lang).into_iter().filter(|u| u.tokens != original.tokens).collect();
    if options.is_empty() {
        return Err(Error::Task(format!("movie {} has no replacement for slot {label}", ctx.movie_id)));
    }
    // Uniform over the differing candidates, i.e. rejection sampling on the
    // full pool with the draws that equal the original discarded.
    let negative = (*options.choose(rng).expect("non-empty")).clone();
    let mut context = ctx;
    context.utterances[label] = negative;
    Ok(InconsistencyInstance { context, label })
}

/// One II instance per context: a uniformly chosen slot replaced by a
/// different utterance of the same movie and language.
pub fn make_ii(contexts: &[Context], pool: &UtterancePool, seed: u64) -> Result<Vec<InconsistencyInstance>> {
    contexts
        .par_iter()
        .enumerate()
        .map(|(i, ctx)| ii_instance(ctx.clone(), pool, &mut item_stream(seed, "task.ii", i as u64)))
        .collect()
}

/// mII: `round(p · T)` slots switched to their aligned translation before the
/// replacement. Pairs with too few translated slots are skipped.
pub fn make_mii(pairs: &[AlignedContextPair], pool: &UtterancePool, p_lprime: f64, seed: u64) -> Result<Vec<InconsistencyInstance>> {
    let out: Result<Vec<Option<InconsistencyInstance>>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = item_stream(seed, "task.mii", i as u64);
            match swap_slots(pair, p_lprime, pair.base.len(), &mut rng) {
                Some(slots) => ii_instance(pair.with_translations(&slots), pool, &mut rng).map(Some),
                None => Ok(None),
            }
        })
        .collect();
    Ok(out?.into_iter().flatten().collect())
}

fn nur_instance(
    ctx: Context,
    truth_options: Vec<Utterance>,
    distractor_langs: &[Lang],
    pool: &UtterancePool,
    d: usize,
    rng: &mut StageRng,
) -> Result<RetrievalInstance> {
    let truth = truth_options.choose(rng).expect("at least the base utterance").clone();
    let excluded: BTreeSet<&[TokenId]> = truth_options.iter().map(|u| u.tokens.as_slice()).collect();
    let mut remaining: BTreeMap<Lang, Vec<&Utterance>> = distractor_langs
        .iter()
        .map(|&l| {
            let c = pool.candidates(&ctx.movie_id, l).into_iter().filter(|u| !excluded.contains(u.tokens.as_slice())).collect();
            (l, c)
        })
        .collect();
    let total: usize = remaining.values().map(Vec::len).sum();
    if total < d {
        return Err(Error::Task(format!("movie {} offers {total} distractors, {d} needed", ctx.movie_id)));
    }
    let mut candidates = vec![truth];
    while candidates.len() <= d {
        let mut lang = *distractor_langs.choose(rng).expect("a language");
        if remaining[&lang].is_empty() {
            lang = *remaining.iter().find(|(_, v)| !v.is_empty()).expect("distractors left").0;
        }
        let list = remaining.get_mut(&lang).expect("language present");
        let pick = list.swap_remove(rng.random_range(0..list.len()));
        candidates.push(pick.clone());
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(rng);
    let label = order.iter().position(|&i| i == 0).expect("truth present");
    let candidates = order.into_iter().map(|i| candidates[i].clone()).collect();
    let mut context = ctx;
    context.utterances.pop();
    Ok(RetrievalInstance { context, candidates, label })
}

/// NUR: the first `T − 1` utterances, the true `T`-th one and `d`
/// same-movie distractors, shuffled.
pub fn make_nur(contexts: &[Context], pool: &UtterancePool, d: usize, seed: u64) -> Result<Vec<RetrievalInstance>> {
    contexts
        .par_iter()
        .enumerate()
        .map(|(i, ctx)| {
            if ctx.len() < 2 {
                return Err(Error::Task("retrieval needs at least two utterances".into()));
            }
            let last = ctx.utterances[ctx.len() - 1].clone();
            let lang = last.lang;
            nur_instance(ctx.clone(), vec![last], &[lang], pool, d, &mut item_stream(seed, "task.nur", i as u64))
        })
        .collect()
}

/// mNUR: `round(p · (T − 1))` context slots switched to L′; the true
/// candidate and every distractor independently in L or L′.
pub fn make_mnur(
    pairs: &[AlignedContextPair],
    pool: &UtterancePool,
    d: usize,
    p_lprime: f64,
    seed: u64,
) -> Result<Vec<RetrievalInstance>> {
    let out: Result<Vec<Option<RetrievalInstance>>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = item_stream(seed, "task.mnur", i as u64);
            let t = pair.base.len();
            if t < 2 {
                return Err(Error::Task("retrieval needs at least two utterances".into()));
            }
            let Some(slots) = swap_slots(pair, p_lprime, t - 1, &mut rng) else { return Ok(None) };
            let mut truth = vec![pair.base.utterances[t - 1].clone()];
            if let Some(tr) = &pair.translated[t - 1] {
                truth.push(tr.utterance.clone());
            }
            let langs = [pair.lang_pair.0, pair.lang_pair.1];
            nur_instance(pair.with_translations(&slots), truth, &langs, pool, d, &mut rng).map(Some)
        })
        .collect();
    Ok(out?.into_iter().flatten().collect())
}

/// Indices sorted by score, highest first; ties keep index order.
pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Produces one score per class (II) or per candidate (NUR).
pub trait Scorer {
    fn score_ii(&mut self, inst: &InconsistencyInstance) -> Result<Vec<f64>>;
    fn score_nur(&mut self, inst: &RetrievalInstance) -> Result<Vec<f64>>;
}

/// Uniform random scores: the chance baseline.
pub struct RandomScorer {
    rng: StageRng,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        Self { rng: crate::rng::substream(seed, "scorer.random") }
    }
}

impl Scorer for RandomScorer {
    fn score_ii(&mut self, inst: &InconsistencyInstance) -> Result<Vec<f64>> {
        Ok((0..inst.context.len()).map(|_| self.rng.random()).collect())
    }

    fn score_nur(&mut self, inst: &RetrievalInstance) -> Result<Vec<f64>> {
        Ok((0..inst.candidates.len()).map(|_| self.rng.random()).collect())
    }
}

/// The model's task heads.
pub struct ModelScorer<'m> {
    pub model: &'m ModelParams,
}

impl Scorer for ModelScorer<'_> {
    fn score_ii(&mut self, inst: &InconsistencyInstance) -> Result<Vec<f64>> {
        ii_logits(self.model, &inst.context)
    }

    fn score_nur(&mut self, inst: &RetrievalInstance) -> Result<Vec<f64>> {
        nur_scores(self.model, inst)
    }
}

pub fn ii_logits(model: &ModelParams, ctx: &Context) -> Result<Vec<f64>> {
    let mut g = Graph::new(&model.store);
    let mut net = Net::new(&mut g, model);
    let (_, pooled) = net.encode(ctx)?;
    let logits = net.ii_logits(pooled);
    Ok(g.value(logits).data().to_vec())
}

pub fn nur_scores(model: &ModelParams, inst: &RetrievalInstance) -> Result<Vec<f64>> {
    let mut g = Graph::new(&model.store);
    let mut net = Net::new(&mut g, model);
    let (_, pooled) = net.encode(&inst.context)?;
    inst.candidates
        .iter()
        .map(|c| {
            let (e, _) = net.utterance_embedding(&c.tokens)?;
            let s = net.nur_logit(pooled, e);
            Ok(net.g.value(s).item())
        })
        .collect()
}

/// Predicted II slot: argmax, lowest index on ties.
pub fn score_ii(scorer: &mut dyn Scorer, inst: &InconsistencyInstance) -> Result<usize> {
    Ok(rank_scores(&scorer.score_ii(inst)?)[0])
}

pub fn score_nur(scorer: &mut dyn Scorer, inst: &RetrievalInstance) -> Result<Vec<usize>> {
    Ok(rank_scores(&scorer.score_nur(inst)?))
}

/// Rankings of every instance, computed in parallel for the model heads.
pub fn model_ii_rankings(model: &ModelParams, instances: &[InconsistencyInstance]) -> Result<Vec<Vec<usize>>> {
    instances.par_iter().map(|i| ii_logits(model, &i.context).map(|s| rank_scores(&s))).collect()
}

/// Zero-shot II: mask each slot in turn and rank slots by how badly the
/// pretrained decoder regenerates the utterance that is actually there.
pub fn reconstruction_ii_rankings(model: &ModelParams, instances: &[InconsistencyInstance]) -> Result<Vec<Vec<usize>>> {
    use crate::objectives::{context_loss, CorruptedContext, CorruptionMode, Target};
    instances
        .par_iter()
        .map(|inst| {
            let losses = (0..inst.context.len())
                .map(|k| {
                    let u = &inst.context.utterances[k];
                    let mut context = inst.context.clone();
                    context.utterances[k] = Utterance { tokens: vec![TokenId::MASK; u.tokens.len()], lang: u.lang };
                    let cc = CorruptedContext {
                        context,
                        masked_positions: vec![k],
                        targets: vec![Target { position: k, tokens: u.tokens.clone(), lang: u.lang }],
                        mode: CorruptionMode::Mug,
                    };
                    context_loss(model, &cc)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(rank_scores(&losses))
        })
        .collect()
}

pub fn model_nur_rankings(model: &ModelParams, instances: &[RetrievalInstance]) -> Result<Vec<Vec<usize>>> {
    instances.par_iter().map(|i| nur_scores(model, i).map(|s| rank_scores(&s))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_instances: usize,
}

/// Accuracy of the top-ranked entry and recall at each `N`.
pub fn compute_metrics(rankings: &[Vec<usize>], labels: &[usize], ns: &[usize]) -> Result<Metrics> {
    if rankings.len() != labels.len() {
        return Err(Error::Metrics(format!("{} rankings for {} labels", rankings.len(), labels.len())));
    }
    if rankings.is_empty() {
        return Err(Error::Metrics("no instances to score".into()));
    }
    let n = labels.len() as f64;
    let mut hits = vec![0usize; ns.len()];
    let mut correct = 0usize;
    for (r, &l) in rankings.iter().zip(labels) {
        let pos = r.iter().position(|&i| i == l).ok_or_else(|| Error::Metrics(format!("label {l} missing from a ranking")))?;
        correct += usize::from(pos == 0);
        for (h, &k) in hits.iter_mut().zip(ns) {
            *h += usize::from(pos < k);
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / n,
        recall_at: ns.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n)).collect(),
        n_instances: labels.len(),
    })
}

/// JSONL form shared by both task families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: TaskKind,
    pub movie_id: String,
    pub context_tokens: Vec<Vec<TokenId>>,
    pub langs: Vec<Lang>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Utterance>>,
    pub label: usize,
    pub seed: u64,
}

fn split(ctx: &Context) -> (Vec<Vec<TokenId>>, Vec<Lang>) {
    (ctx.utterances.iter().map(|u| u.tokens.clone()).collect(), ctx.utterances.iter().map(|u| u.lang).collect())
}

fn join(movie_id: &str, tokens: &[Vec<TokenId>], langs: &[Lang]) -> Result<Context> {
    if tokens.len() != langs.len() {
        return Err(Error::Task("context tokens and languages differ in length".into()));
    }
    let utterances = tokens.iter().zip(langs).map(|(t, &lang)| Utterance { tokens: t.clone(), lang }).collect();
    Ok(Context { movie_id: movie_id.to_string(), utterances })
}

impl TaskRecord {
    pub fn from_ii(task: TaskKind, inst: &InconsistencyInstance, seed: u64) -> Self {
        let (context_tokens, langs) = split(&inst.context);
        Self { task, movie_id: inst.context.movie_id.clone(), context_tokens, langs, candidates: None, label: inst.label, seed }
    }

    pub fn from_nur(task: TaskKind, inst: &RetrievalInstance, seed: u64) -> Self {
        let (context_tokens, langs) = split(&inst.context);
        Self {
            task,
            movie_id: inst.context.movie_id.clone(),
            context_tokens,
            langs,
            candidates: Some(inst.candidates.clone()),
            label: inst.label,
            seed,
        }
    }

    pub fn to_ii(&self) -> Result<InconsistencyInstance> {
        let context = join(&self.movie_id, &self.context_tokens, &self.langs)?;
        if self.task.is_retrieval() || self.label >= context.len() {
            return Err(Error::Task("not a valid inconsistency record".into()));
        }
        Ok(InconsistencyInstance { context, label: self.label })
    }

    pub fn to_nur(&self) -> Result<RetrievalInstance> {
        let context = join(&self.movie_id, &self.context_tokens, &self.langs)?;
        let candidates = self.candidates.clone().ok_or_else(|| Error::Task("retrieval record without candidates".into()))?;
        if !self.task.is_retrieval() || self.label >= candidates.len() {
            return Err(Error::Task("not a valid retrieval record".into()));
        }
        Ok(RetrievalInstance { context, candidates, label: self.label })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AlignmentLink, TranslatedUtterance};
    use proptest::prelude::*;

    fn utt(t: u32, lang: Lang) -> Utterance {
        Utterance { tokens: vec![TokenId(t), TokenId(t + 1)], lang }
    }

    fn movie_contexts(movie: &str, n: usize) -> Vec<Context> {
        (0..n)
            .map(|c| Context {
                movie_id: movie.into(),
                utterances: (0..5).map(|k| utt(100 + 10 * c as u32 + 2 * k, Lang::En)).collect(),
            })
            .collect()
    }

    fn pairs(movie: &str, n: usize) -> Vec<AlignedContextPair> {
        movie_contexts(movie, n)
            .into_iter()
            .map(|base| {
                let translated = base
                    .utterances
                    .iter()
                    .enumerate()
                    .map(|(k, u)| {
                        (k % 4 != 1).then(|| TranslatedUtterance {
                            utterance: Utterance { tokens: u.tokens.iter().map(|t| TokenId(t.0 + 1000)).collect(), lang: Lang::Fr },
                            link: AlignmentLink { src_index: k, tgt_index: k, confidence: 1.0 },
                        })
                    })
                    .collect();
                AlignedContextPair { base, translated, lang_pair: (Lang::En, Lang::Fr) }
            })
            .collect()
    }

    #[test]
    fn ii_replaces_exactly_one_slot() {
        let ctxs = movie_contexts("a", 6);
        let pool = UtterancePool::from_sources(&ctxs, &[]);
        let inst = make_ii(&ctxs, &pool, 4).unwrap();
        for (src, i) in ctxs.iter().zip(&inst) {
            let diff: Vec<usize> = (0..5).filter(|&k| src.utterances[k] != i.context.utterances[k]).collect();
            assert_eq!(diff, vec![i.label]);
            assert!(pool.movie("a").contains(&i.context.utterances[i.label]));
        }
        assert_eq!(make_ii(&ctxs, &pool, 4).unwrap(), inst);
        assert!(make_ii(&ctxs, &UtterancePool::new(), 4).is_err());
    }

    #[test]
    fn mii_switches_two_slots() {
        let ps = pairs("a", 6);
        let pool = UtterancePool::from_sources(&[], &ps);
        for i in make_mii(&ps, &pool, 0.4, 9).unwrap() {
            let fr = i.context.utterances.iter().enumerate().filter(|(k, u)| *k != i.label && u.lang == Lang::Fr).count();
            let label_fr = usize::from(i.context.utterances[i.label].lang == Lang::Fr);
            assert_eq!(fr + label_fr, 2);
        }
    }

    #[test]
    fn nur_instances_are_well_formed() {
        let ctxs = movie_contexts("a", 6);
        let pool = UtterancePool::from_sources(&ctxs, &[]);
        for (src, i) in ctxs.iter().zip(make_nur(&ctxs, &pool, 9, 2).unwrap()) {
            assert_eq!(i.candidates.len(), 10);
            assert_eq!(i.context.len(), 4);
            assert_eq!(i.candidates[i.label], src.utterances[4]);
            assert_eq!(i.candidates.iter().filter(|c| **c == src.utterances[4]).count(), 1);
            let distinct: BTreeSet<_> = i.candidates.iter().map(|c| c.tokens.clone()).collect();
            assert_eq!(distinct.len(), 10);
        }
        let small = movie_contexts("b", 1);
        assert!(make_nur(&small, &UtterancePool::from_sources(&small, &[]), 9, 2).is_err());
    }

    #[test]
    fn mnur_switches_two_context_slots() {
        let ps = pairs("a", 6);
        let pool = UtterancePool::from_sources(&[], &ps);
        let inst = make_mnur(&ps, &pool, 9, 0.4, 1).unwrap();
        assert!(!inst.is_empty());
        for i in inst {
            assert_eq!(i.context.utterances.iter().filter(|u| u.lang == Lang::Fr).count(), 2);
            assert_eq!(i.candidates.len(), 10);
        }
    }

    #[test]
    fn recall_definition_and_ties() {
        assert_eq!(rank_scores(&[0.5; 4]), vec![0, 1, 2, 3]);
        assert_eq!(rank_scores(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        let m = compute_metrics(&[vec![4, 1, 0, 2, 3]], &[0], &[1, 2, 5]).unwrap();
        assert_eq!(m.recall_at[&5], 1.0);
        assert_eq!(m.recall_at[&2], 0.0);
        let m = compute_metrics(&[vec![0, 1], vec![0, 1]], &[0, 1], &[1]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        let m = compute_metrics(&[vec![0, 1], vec![1, 0]], &[0, 1], &[1, 2]).unwrap();
        assert_eq!((m.accuracy, m.recall_at[&1], m.recall_at[&2]), (1.0, 1.0, 1.0));
        assert!(compute_metrics(&[], &[], &[1]).is_err());
        assert!(compute_metrics(&[vec![0]], &[0, 1], &[1]).is_err());
    }

    #[test]
    fn record_round_trip() {
        let ctxs = movie_contexts("a", 3);
        let pool = UtterancePool::from_sources(&ctxs, &[]);
        let nur = &make_nur(&ctxs, &pool, 9, 2).unwrap()[0];
        let r = TaskRecord::from_nur(TaskKind::Nur, nur, 2);
        let back: TaskRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(&back.to_nur().unwrap(), nur);
        let ii = &make_ii(&ctxs, &pool, 2).unwrap()[0];
        assert_eq!(&TaskRecord::from_ii(TaskKind::Ii, ii, 2).to_ii().unwrap(), ii);
    }

    proptest! {
        #[test]
        fn recall_is_monotone(perm_seed in any::<u64>(), label in 0usize..10) {
            let mut rng = item_stream(perm_seed, "t", 0);
            let mut r: Vec<usize> = (0..10).collect();
            r.shuffle(&mut rng);
            let m = compute_metrics(&[r], &[label], &[1, 2, 5, 10]).unwrap();
            let v: Vec<f64> = m.recall_at.values().copied().collect();
            prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(m.recall_at[&10], 1.0);
        }
    }
}
