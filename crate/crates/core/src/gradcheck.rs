//! Central finite-difference check of the analytic gradients.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Fault, Graph, Var};
use crate::error::{Error, Result};
use crate::corpus::{Context, Utterance};
use crate::lang::Lang;
use crate::model::{ModelConfig, ModelParams, Net};
use crate::objectives::{pretraining_loss, CorruptionMode, CorruptionSource, LossWeights, PretrainExample};
use crate::vocab::TokenId;
use crate::params::ParamId;
use crate::rng::StageRng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub coordinates: usize,
    pub seed: u64,
    /// Inject a known backward bug to confirm the harness notices it.
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { epsilon: 1e-5, coordinates: 200, seed: 0, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    pub worst: Coordinate,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`, with differences at or below `noise`
/// counted as agreement.
pub fn relative_error(a: f64, n: f64, noise: f64) -> f64 {
    let diff = (a - n).abs();
    if diff <= noise {
        return 0.0;
    }
    diff / a.abs().max(n.abs()).max(1e-6)
}

/// Rounding noise of a central difference on a loss of magnitude `loss`:
/// both evaluations carry about one ulp each, divided by `2ε`, with a safety
/// factor of 8. Gradients below this cannot be resolved by the oracle.
pub fn rounding_noise(loss: f64, epsilon: f64) -> f64 {
    8.0 * f64::EPSILON * loss.abs().max(1.0) / epsilon
}

/// Every tensor contributes up to two coordinates; the rest are drawn
/// uniformly over all scalars.
fn pick_coordinates(model: &ModelParams, n: usize, rng: &mut StageRng) -> Vec<(ParamId, usize)> {
    let mut chosen = BTreeSet::new();
    let mut offsets = Vec::new();
    let mut total = 0;
    for (id, p) in model.store.iter() {
        let len = p.value.len();
        for i in sample(rng, len, len.min(2)).into_iter() {
            chosen.insert((id, i));
        }
        offsets.push((total, id, len));
        total += len;
    }
    let want = n.max(chosen.len()).min(total);
    while chosen.len() < want {
        for flat in sample(rng, total, (want - chosen.len()).min(total)).into_iter() {
            let &(start, id, _) = offsets.iter().rev().find(|(s, _, _)| *s <= flat).expect("offset table");
            chosen.insert((id, flat - start));
            if chosen.len() == want {
                break;
            }
        }
    }
    chosen.into_iter().collect()
}

/// Compare the backward pass of `loss` against central differences.
/// `loss` must be deterministic (no dropout).
pub fn gradient_check<F>(model: &ModelParams, loss: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Net<'_, '_>) -> Result<Var>,
{
    let eval = |m: &ModelParams| -> Result<f64> {
        let mut g = Graph::new(&m.store);
        let mut net = Net::new(&mut g, m);
        let v = loss(&mut net)?;
        Ok(g.value(v).item())
    };
    let (grads, base) = {
        let mut g = Graph::with_fault(&model.store, cfg.fault);
        let mut net = Net::new(&mut g, model);
        let v = loss(&mut net)?;
        let base = g.value(v).item();
        if !base.is_finite() {
            return Err(Error::NonFinite("gradient-check loss".into()));
        }
        (g.backward(v), base)
    };
    let noise = rounding_noise(base, cfg.epsilon);
    let mut rng = StageRng::seed_from_u64(cfg.seed);
    let coords = pick_coordinates(model, cfg.coordinates, &mut rng);
    let mut probe = model.clone();
    let mut worst: Option<Coordinate> = None;
    for &(id, i) in &coords {
        let orig = probe.store.get(id).data()[i];
        probe.store.get_mut(id).data_mut()[i] = orig + cfg.epsilon;
        let up = eval(&probe)?;
        probe.store.get_mut(id).data_mut()[i] = orig - cfg.epsilon;
        let down = eval(&probe)?;
        probe.store.get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.epsilon);
        let analytic = grads.get(id).data()[i];
        let rel_error = relative_error(analytic, numeric, noise);
        if !rel_error.is_finite() {
            return Err(Error::NonFinite("finite-difference gradient".into()));
        }
        if worst.as_ref().is_none_or(|w| rel_error > w.rel_error) {
            worst = Some(Coordinate { param: model.store.param(id).name.clone(), index: i, analytic, numeric, rel_error });
        }
    }
    let worst = worst.ok_or_else(|| Error::Input("model has no parameters".into()))?;
    Ok(GradCheckReport { max_rel_error: worst.rel_error, coordinates_checked: coords.len(), worst })
}

/// The standard check: a width-8 model over an 11-token vocabulary and
/// three-utterance contexts, total pretraining loss of one MUG example.
pub fn fixture_check(cfg: &GradCheckConfig, model_seed: u64) -> Result<GradCheckReport> {
    let mut c = ModelConfig::desk(11, [(Lang::En, 5)].into_iter().collect());
    c.dim = 8;
    c.ffn_dim = 16;
    c.context_size = 3;
    c.max_utt_tokens = 6;
    c.dropout = 0.0;
    c.init_std = 0.5;
    let model = ModelParams::init(c, &mut StageRng::seed_from_u64(model_seed))?;
    let u = |ids: &[u32]| Utterance { tokens: ids.iter().map(|&i| TokenId(i)).collect(), lang: Lang::En };
    let ctx = Context { movie_id: "fixture".into(), utterances: vec![u(&[6, 7, 8]), u(&[9, 10]), u(&[7, 10, 6, 9])] };
    let mut rng = StageRng::seed_from_u64(model_seed.wrapping_add(1));
    let ex = PretrainExample::build(CorruptionSource::Context(&ctx), CorruptionMode::Mug, 0.4, 0.34, &mut rng)?;
    gradient_check(&model, |net| pretraining_loss(net, &ex, LossWeights::default()).map(|(v, _)| v), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_rule() {
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 0.0) - 1e-3).abs() < 1e-15);
        assert_eq!(relative_error(1e-10, 0.0, rounding_noise(5.0, 1e-5)), 0.0);
        assert!(rounding_noise(5.0, 1e-5) < 1e-9);
    }
}
