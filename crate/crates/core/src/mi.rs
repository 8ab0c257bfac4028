//! Exact mutual information of small discrete joints and InfoNCE-style
//! lower bounds with table or scalar-product critics.
//!
//! The default bound weights the candidate set by the marginal of `B`:
//!
//! `E_{p(a,b)}[f(a,b)] − E_{p(a)} ln Σ_b̃ p(b̃)·exp f(a,b̃)`
//!
//! which is the many-negatives limit of InfoNCE and never exceeds the true
//! MI. With a uniform marginal it coincides with the textbook form
//! `f(a,b) − ln Σ_b̃ exp f(a,b̃) + ln|B̃|`, available as
//! [`CandidateWeighting::Uniform`]. That literal form is only a bound when
//! `p(b)` is uniform.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StageRng;
use crate::synthetic::{translate_word, SyntheticMovie};
use crate::tensor::Tensor;

const SUM_TOLERANCE: f64 = 1e-12;

/// `p(a, b)` with `a` indexing rows and `b` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    p: Tensor,
}

impl DiscreteJoint {
    pub fn new(p: Tensor) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Joint("empty table".into()));
        }
        if p.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Joint("entries must be finite and non-negative".into()));
        }
        let total: f64 = p.data().iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Joint(format!("entries sum to {total}, not 1")));
        }
        Ok(Self { p })
    }

    /// Normalise non-negative weights into a joint.
    pub fn from_weights(w: Tensor) -> Result<Self> {
        let total: f64 = w.data().iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Joint("weights must have a positive finite sum".into()));
        }
        let mut p = w.map(|v| v / total);
        // Push the rounding residue into the largest cell so the sum is 1 to
        // within an ulp or two.
        let residue = 1.0 - p.data().iter().sum::<f64>();
        let (imax, _) = p.data().iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        p.data_mut()[imax] += residue;
        Self::new(p)
    }

    pub fn product(pa: &[f64], pb: &[f64]) -> Result<Self> {
        let data = pa.iter().flat_map(|a| pb.iter().map(move |b| a * b)).collect();
        Self::from_weights(Tensor::from_vec(pa.len(), pb.len(), data))
    }

    /// Uniform mass on the diagonal of a `k × k` table.
    pub fn diagonal(k: usize) -> Result<Self> {
        let mut t = Tensor::zeros(k, k);
        for i in 0..k {
            t.data_mut()[i * k + i] = 1.0;
        }
        Self::from_weights(t)
    }

    /// Random joint with cell weights `exp(sharpness · z)`, `z ~ N(0, 1)`.
    pub fn random(rng: &mut StageRng, na: usize, nb: usize, sharpness: f64) -> Result<Self> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..na * nb).map(|_| (sharpness * normal.sample(rng)).exp()).collect();
        Self::from_weights(Tensor::from_vec(na, nb, data))
    }

    pub fn table(&self) -> &Tensor {
        &self.p
    }

    pub fn shape(&self) -> (usize, usize) {
        self.p.shape()
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        (0..self.p.rows()).map(|a| self.p.row(a).iter().sum()).collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p.cols()];
        for a in 0..self.p.rows() {
            for (o, v) in out.iter_mut().zip(self.p.row(a)) {
                *o += v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self { p: self.p.transpose() }
    }
}

/// `Σ p(a,b) ln p(a,b) / (p(a) p(b))` with `0 · ln 0 = 0`.
pub fn true_mi(joint: &DiscreteJoint) -> f64 {
    let (pa, pb) = (joint.marginal_a(), joint.marginal_b());
    let mut mi = 0.0;
    for (a, &pa) in pa.iter().enumerate() {
        for (b, &pb) in pb.iter().enumerate() {
            let p = joint.p.get(a, b);
            if p > 0.0 {
                mi += p * (p / (pa * pb)).ln();
            }
        }
    }
    mi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Critic {
    /// `f(a, b)` stored as an `|A| × |B|` table.
    Table { scores: Vec<Vec<f64>> },
    /// `f(a, b) = ⟨g_b[b], g_a[a]⟩`.
    Factored { g_b: Vec<Vec<f64>>, g_a: Vec<Vec<f64>> },
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged critic table".into()));
    }
    Ok(Tensor::from_vec(rows.len(), cols, rows.concat()))
}

impl Critic {
    pub fn table(t: &Tensor) -> Self {
        Critic::Table { scores: to_rows(t) }
    }

    pub fn constant(na: usize, nb: usize, c: f64) -> Self {
        Self::table(&Tensor::filled(na, nb, c))
    }

    pub fn random_table(rng: &mut StageRng, na: usize, nb: usize, scale: f64) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite scale");
        Self::table(&Tensor::from_vec(na, nb, (0..na * nb).map(|_| normal.sample(rng)).collect()))
    }

    pub fn random_factored(rng: &mut StageRng, na: usize, nb: usize, d: usize, scale: f64) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite scale");
        let mut draw = |n: usize| Tensor::from_vec(n, d, (0..n * d).map(|_| normal.sample(rng)).collect());
        let g_b = draw(nb);
        let g_a = draw(na);
        Critic::Factored { g_b: to_rows(&g_b), g_a: to_rows(&g_a) }
    }

    /// The full `|A| × |B|` score table.
    pub fn scores(&self) -> Result<Tensor> {
        let t = match self {
            Critic::Table { scores } => from_rows(scores)?,
            Critic::Factored { g_b, g_a } => {
                let (gb, ga) = (from_rows(g_b)?, from_rows(g_a)?);
                if gb.cols() != ga.cols() {
                    return Err(Error::Shape("factored critic embeddings differ in width".into()));
                }
                ga.matmul_nt(&gb)
            }
        };
        if !t.is_finite() {
            return Err(Error::NonFinite("critic scores".into()));
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateWeighting {
    /// Candidates weighted by `p(b̃)`: a valid lower bound for every joint.
    #[default]
    Marginal,
    /// Every candidate weighted `1/|B̃|`: the literal textbook expression,
    /// a bound only when `p(b)` is uniform.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub candidate_set_size: usize,
    pub exact: bool,
    pub sample_count: Option<usize>,
    pub std_error: Option<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = (f64, f64)>) -> f64 {
    // (log-weight, score) pairs
    let items: Vec<f64> = values.filter(|(lw, _)| lw.is_finite()).map(|(lw, s)| lw + s).collect();
    let m = items.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + items.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn candidate_log_weights(joint: &DiscreteJoint, weighting: CandidateWeighting) -> Vec<f64> {
    match weighting {
        CandidateWeighting::Marginal => joint.marginal_b().iter().map(|p| p.ln()).collect(),
        CandidateWeighting::Uniform => vec![-(joint.shape().1 as f64).ln(); joint.shape().1],
    }
}

fn check_shapes(joint: &DiscreteJoint, scores: &Tensor) -> Result<()> {
    if scores.shape() != joint.shape() {
        return Err(Error::Shape(format!("critic {:?} for a joint of {:?}", scores.shape(), joint.shape())));
    }
    Ok(())
}

/// Exact expectation of the bound over the joint, with `B̃ = B`.
pub fn infonce_bound(joint: &DiscreteJoint, critic: &Critic, weighting: CandidateWeighting) -> Result<BoundEstimate> {
    let f = critic.scores()?;
    check_shapes(joint, &f)?;
    let lw = candidate_log_weights(joint, weighting);
    let mut value = 0.0;
    for a in 0..f.rows() {
        let pa: f64 = joint.p.row(a).iter().sum();
        if pa == 0.0 {
            continue;
        }
        let lse = log_sum_exp(lw.iter().copied().zip(f.row(a).iter().copied()));
        let pos: f64 = joint.p.row(a).iter().zip(f.row(a)).map(|(p, s)| p * s).sum();
        value += pos - pa * lse;
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("InfoNCE bound".into()));
    }
    Ok(BoundEstimate { value, candidate_set_size: joint.shape().1, exact: true, sample_count: None, std_error: None })
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let mut u: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Sampled InfoNCE: `samples` positive pairs, each scored against itself
/// plus `candidates − 1` negatives drawn from `p(b)`. Reported with its
/// standard error. Never exceeds `ln candidates`.
pub fn infonce_monte_carlo(
    joint: &DiscreteJoint,
    critic: &Critic,
    candidates: usize,
    samples: usize,
    rng: &mut StageRng,
) -> Result<BoundEstimate> {
    if candidates < 2 || samples < 2 {
        return Err(Error::Joint("need at least two candidates and two samples".into()));
    }
    let f = critic.scores()?;
    check_shapes(joint, &f)?;
    let flat = joint.p.data();
    let pb = joint.marginal_b();
    let nb = joint.shape().1;
    let ln_k = (candidates as f64).ln();
    let terms: Vec<f64> = (0..samples)
        .map(|_| {
            let cell = sample_index(rng, flat);
            let (a, b) = (cell / nb, cell % nb);
            let mut scores = vec![f.get(a, b)];
            scores.extend((1..candidates).map(|_| f.get(a, sample_index(rng, &pb))));
            let lse = log_sum_exp(scores.iter().map(|&s| (0.0, s)));
            f.get(a, b) - lse + ln_k
        })
        .collect();
    let n = samples as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BoundEstimate {
        value: mean,
        candidate_set_size: candidates,
        exact: false,
        sample_count: Some(samples),
        std_error: Some((var / n).sqrt()),
    })
}

/// Gradient of the marginal-weighted bound with respect to the score table:
/// `p(a,b) − p(a)·q(b|a)` with `q(b|a) ∝ p(b)·exp f(a,b)`.
fn table_gradient(joint: &DiscreteJoint, f: &Tensor, lw: &[f64]) -> Tensor {
    let mut g = Tensor::zeros(f.rows(), f.cols());
    for a in 0..f.rows() {
        let pa: f64 = joint.p.row(a).iter().sum();
        let lse = log_sum_exp(lw.iter().copied().zip(f.row(a).iter().copied()));
        for b in 0..f.cols() {
            let q = if lw[b].is_finite() { (lw[b] + f.get(a, b) - lse).exp() } else { 0.0 };
            g.data_mut()[a * f.cols() + b] = joint.p.get(a, b) - pa * q;
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CriticKind {
    Table,
    Factored { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedCritic {
    pub critic: Critic,
    pub bound_initial: f64,
    pub bound_final: f64,
    pub steps: usize,
}

/// Adam ascent on the marginal-weighted bound. Table critics start at zero;
/// factored critics start from small random embeddings. The best critic seen
/// is returned, so the result is never below the start.
pub fn optimize_critic(
    joint: &DiscreteJoint,
    kind: CriticKind,
    steps: usize,
    lr: f64,
    rng: &mut StageRng,
) -> Result<OptimizedCritic> {
    let (na, nb) = joint.shape();
    let weighting = CandidateWeighting::Marginal;
    let lw = candidate_log_weights(joint, weighting);
    let mut params: Vec<Tensor> = match kind {
        CriticKind::Table => vec![Tensor::zeros(na, nb)],
        CriticKind::Factored { dim } => {
            if dim == 0 {
                return Err(Error::Joint("factored critic needs d ≥ 1".into()));
            }
            let Critic::Factored { g_b, g_a } = Critic::random_factored(rng, na, nb, dim, 0.1) else { unreachable!() };
            vec![from_rows(&g_a)?, from_rows(&g_b)?]
        }
    };
    let build = |params: &[Tensor]| match kind {
        CriticKind::Table => Critic::table(&params[0]),
        CriticKind::Factored { .. } => Critic::Factored { g_b: to_rows(&params[1]), g_a: to_rows(&params[0]) },
    };
    let bound = |c: &Critic| infonce_bound(joint, c, weighting).map(|b| b.value);
    let start = build(&params);
    let bound_initial = bound(&start)?;
    let (mut best, mut best_value) = (start, bound_initial);
    let mut m: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
    let mut v = m.clone();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for t in 1..=steps {
        let f = match kind {
            CriticKind::Table => params[0].clone(),
            CriticKind::Factored { .. } => params[0].matmul_nt(&params[1]),
        };
        let d = table_gradient(joint, &f, &lw);
        let grads = match kind {
            CriticKind::Table => vec![d],
            CriticKind::Factored { .. } => vec![d.matmul(&params[1]), d.matmul_tn(&params[0])],
        };
        for ((p, g), (m, v)) in params.iter_mut().zip(&grads).zip(m.iter_mut().zip(v.iter_mut())) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / (1.0 - b1.powi(t as i32));
                let vh = *v / (1.0 - b2.powi(t as i32));
                *w += lr * mh / (vh.sqrt() + eps);
            }
        }
        let critic = build(&params);
        let value = bound(&critic).map_err(|_| Error::NonFinite("critic optimisation diverged".into()))?;
        if value > best_value {
            best = critic;
            best_value = value;
        }
    }
    Ok(OptimizedCritic { critic: best, bound_initial, bound_final: best_value, steps })
}

/// Natural log of the candidate count a sentence-level bound would have to
/// enumerate: `|V|^L`. Reported, never enumerated.
pub fn sentence_level_log_candidates(vocab_size: usize, length: usize) -> f64 {
    length as f64 * (vocab_size as f64).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub joint_id: String,
    pub true_mi: f64,
    pub bound_initial: f64,
    pub bound_final: f64,
    pub candidate_set_size: usize,
    pub steps: usize,
}

pub fn run_experiment(joint_id: &str, joint: &DiscreteJoint, kind: CriticKind, steps: usize, lr: f64, rng: &mut StageRng) -> Result<ExperimentReport> {
    let opt = optimize_critic(joint, kind, steps, lr, rng)?;
    Ok(ExperimentReport {
        joint_id: joint_id.to_string(),
        true_mi: true_mi(joint),
        bound_initial: opt.bound_initial,
        bound_final: opt.bound_final,
        candidate_set_size: joint.shape().1,
        steps,
    })
}

/// Toy versions of the three masked-modelling settings: `b` is a masked
/// topic word, `a` is what the model sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetExperiment {
    /// `a`: the other topic word of the same utterance.
    UtteranceLevel,
    /// `a`: the first topic word of the previous utterance.
    ContextLevel,
    /// `a`: the French translation of the previous utterance's first topic word.
    Multilingual,
}

impl PresetExperiment {
    pub const ALL: [PresetExperiment; 3] =
        [PresetExperiment::UtteranceLevel, PresetExperiment::ContextLevel, PresetExperiment::Multilingual];

    pub fn name(self) -> &'static str {
        match self {
            PresetExperiment::UtteranceLevel => "utterance-level",
            PresetExperiment::ContextLevel => "context-level",
            PresetExperiment::Multilingual => "multilingual",
        }
    }
}

/// Empirical joint of (observed, masked) word pairs in the generated corpus,
/// restricted to the words that occur.
pub fn preset_joint(kind: PresetExperiment, movies: &[SyntheticMovie]) -> Result<DiscreteJoint> {
    let mut counts: BTreeMap<(String, String), f64> = BTreeMap::new();
    for m in movies {
        let words: Vec<Vec<&str>> = m.en.iter().map(|u| u.text.split_whitespace().collect()).collect();
        for (i, w) in words.iter().enumerate() {
            if w.len() < 4 {
                continue;
            }
            let masked = w[3].to_string();
            let observed = match kind {
                PresetExperiment::UtteranceLevel => Some(w[2].to_string()),
                PresetExperiment::ContextLevel => i.checked_sub(1).map(|j| words[j][2].to_string()),
                PresetExperiment::Multilingual => {
                    i.checked_sub(1).and_then(|j| translate_word(words[j][2])).map(str::to_string)
                }
            };
            if let Some(a) = observed {
                *counts.entry((a, masked)).or_default() += 1.0;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Joint("corpus yields no word pairs".into()));
    }
    let index = |keys: Vec<&String>| -> BTreeMap<String, usize> {
        let mut set: Vec<String> = keys.into_iter().cloned().collect();
        set.sort();
        set.dedup();
        set.into_iter().enumerate().map(|(i, k)| (k, i)).collect()
    };
    let ia = index(counts.keys().map(|(a, _)| a).collect());
    let ib = index(counts.keys().map(|(_, b)| b).collect());
    let mut t = Tensor::zeros(ia.len(), ib.len());
    for ((a, b), c) in &counts {
        t.data_mut()[ia[a] * ib.len() + ib[b]] += c;
    }
    DiscreteJoint::from_weights(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub joints: usize,
    /// Largest side of a random joint; sides are drawn from `2..=max_size`.
    pub max_size: usize,
    pub critic_steps: usize,
    pub critic_lr: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { joints: 20, max_size: 16, critic_steps: 800, critic_lr: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticResult {
    pub critic: String,
    pub bound: f64,
    pub below_mi: bool,
    pub below_log_candidates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointResult {
    pub joint_id: String,
    pub rows: usize,
    pub cols: usize,
    pub true_mi: f64,
    pub log_candidates: f64,
    pub critics: Vec<CriticResult>,
    /// MI minus the optimized full-table bound.
    pub optimized_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub joints: Vec<JointResult>,
    pub violations: usize,
    /// Joints with `MI ≤ 0.8·ln|B̃|`, where the optimized table must come close.
    pub eligible: usize,
    pub max_eligible_gap: f64,
}

/// Random joints scored by constant, random and optimized critics. Every
/// bound must stay below both the exact MI and `ln|B̃|` (1e-9 slack).
pub fn validity_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.max_size < 2 {
        return Err(Error::Joint("max_size must be at least 2".into()));
    }
    let mut joints = Vec::with_capacity(cfg.joints);
    for j in 0..cfg.joints {
        let mut rng = crate::rng::item_stream(cfg.seed, "mi.joint", j as u64);
        let (na, nb) = (rng.random_range(2..=cfg.max_size), rng.random_range(2..=cfg.max_size));
        let sharpness = rng.random_range(0.2..2.5);
        let joint = DiscreteJoint::random(&mut rng, na, nb, sharpness)?;
        let mi = true_mi(&joint);
        let log_k = (nb as f64).ln();
        let mut scored = vec![
            ("constant".to_string(), Critic::constant(na, nb, 3.7)),
            ("random-1".to_string(), Critic::random_table(&mut rng, na, nb, 1.0)),
            ("random-4".to_string(), Critic::random_table(&mut rng, na, nb, 4.0)),
        ];
        let table = optimize_critic(&joint, CriticKind::Table, cfg.critic_steps, cfg.critic_lr, &mut rng)?;
        let optimized_gap = mi - table.bound_final;
        scored.push(("table-opt".into(), table.critic));
        for dim in [1, na.min(nb)] {
            let f = optimize_critic(&joint, CriticKind::Factored { dim }, cfg.critic_steps, cfg.critic_lr, &mut rng)?;
            scored.push((format!("factored-opt-{dim}"), f.critic));
        }
        let critics = scored
            .into_iter()
            .map(|(name, c)| {
                let bound = infonce_bound(&joint, &c, CandidateWeighting::Marginal)?.value;
                Ok(CriticResult { critic: name, bound, below_mi: bound <= mi + 1e-9, below_log_candidates: bound <= log_k + 1e-9 })
            })
            .collect::<Result<Vec<_>>>()?;
        joints.push(JointResult {
            joint_id: format!("joint-{j:03}"),
            rows: na,
            cols: nb,
            true_mi: mi,
            log_candidates: log_k,
            critics,
            optimized_gap,
        });
    }
    let violations =
        joints.iter().flat_map(|j| &j.critics).filter(|c| !(c.below_mi && c.below_log_candidates)).count();
    let eligible: Vec<f64> =
        joints.iter().filter(|j| j.true_mi <= 0.8 * j.log_candidates).map(|j| j.optimized_gap).collect();
    Ok(SuiteReport {
        violations,
        eligible: eligible.len(),
        max_eligible_gap: eligible.iter().copied().fold(0.0, f64::max),
        joints,
    })
}
