//! End-to-end acceptance checks, one test per criterion. Each prints a
//! `PASS`/`FAIL` line with the measured quantities (`--nocapture` shows them).

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dialopre_core::corpus::{segment_conversations, Context, TimedUtterance, WindowConfig};
use dialopre_core::experiment::{codeswitch_comparison, CodeSwitchConfig};
use dialopre_core::gradcheck::{fixture_check, GradCheckConfig};
use dialopre_core::mi::{validity_suite, SuiteConfig};
use dialopre_core::model::{ModelConfig, ModelParams};
use dialopre_core::objectives::{
    context_loss, corrupt_context, plan_token_masks, utterance_loss, CorruptionMode, CorruptionSource, LossWeights,
    PretrainExample,
};
use dialopre_core::optim::AdamWConfig;
use dialopre_core::rng::{item_stream, substream};
use dialopre_core::synthetic::{build_dataset, corpus_texts, generate, SyntheticConfig, SyntheticDataset};
use dialopre_core::tasks::{
    compute_metrics, make_ii, make_nur, model_ii_rankings, rank_scores, RandomScorer, Scorer, UtterancePool,
};
use dialopre_core::train::{evaluate_pretrain_loss, pretrain, PretrainConfig, PretrainData};
use dialopre_core::{Lang, Vocabulary};

fn verdict(n: u32, ok: bool, detail: String, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let pass = ok && in_time;
    println!(
        "criterion {n}: {}  {detail}  [{:.1}s of {}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

/// Synthetic corpus with enough stride-1 English contexts for `n` instances.
fn contexts(n: usize) -> (Vec<Context>, UtterancePool) {
    let movies = generate(&SyntheticConfig { movies: 40, conversations_per_movie: 12, ..Default::default() });
    let vocab = Vocabulary::build(corpus_texts(&movies), 1000).unwrap();
    let ds = build_dataset(&movies, &vocab, &WindowConfig { stride: 1, ..Default::default() }).unwrap();
    let base = &ds.contexts[&Lang::En];
    assert!(!base.is_empty());
    let pool = UtterancePool::from_sources(base, &[]);
    let ctx: Vec<Context> = base.iter().cycle().take(n).cloned().collect();
    (ctx, pool)
}

fn small_dataset(movies: usize) -> (Vocabulary, SyntheticDataset) {
    let movies = generate(&SyntheticConfig { movies, ..Default::default() });
    let vocab = Vocabulary::build(corpus_texts(&movies), 1000).unwrap();
    let ds = build_dataset(&movies, &vocab, &WindowConfig::default()).unwrap();
    (vocab, ds)
}

#[test]
fn criterion_1_random_retrieval_recall() {
    let t = Instant::now();
    let (ctx, pool) = contexts(10_000);
    let inst = make_nur(&ctx, &pool, 9, 1).unwrap();
    let mut scorer = RandomScorer::new(1);
    let rankings: Vec<Vec<usize>> = inst.iter().map(|i| rank_scores(&scorer.score_nur(i).unwrap())).collect();
    let labels: Vec<usize> = inst.iter().map(|i| i.label).collect();
    let m = compute_metrics(&rankings, &labels, &[1, 2, 5]).unwrap();
    let (r1, r2, r5) = (m.recall_at[&1], m.recall_at[&2], m.recall_at[&5]);
    let ok = inst.len() == 10_000
        && inst.iter().all(|i| i.candidates.len() == 10)
        && (r1 - 0.10).abs() <= 0.01
        && (r2 - 0.20).abs() <= 0.01
        && (r5 - 0.50).abs() <= 0.02;
    let detail = format!("R@1 {r1:.4}  R@2 {r2:.4}  R@5 {r5:.4} over {} instances", inst.len());
    assert!(verdict(1, ok, detail, t.elapsed(), Duration::from_secs(60)));
}

#[test]
fn criterion_2_untrained_inconsistency_head() {
    let t = Instant::now();
    let (ctx, pool) = contexts(10_000);
    let inst = make_ii(&ctx, &pool, 2).unwrap();
    let vocab_size = ctx.iter().flat_map(|c| &c.utterances).flat_map(|u| &u.tokens).map(|t| t.index()).max().unwrap() + 1;
    let cfg = ModelConfig::desk(vocab_size.max(10), [(Lang::En, 5), (Lang::Fr, 6)].into_iter().collect());
    let model = ModelParams::init(cfg, &mut substream(2, "model.init")).unwrap();
    let rankings = model_ii_rankings(&model, &inst).unwrap();
    let labels: Vec<usize> = inst.iter().map(|i| i.label).collect();
    let acc = compute_metrics(&rankings, &labels, &[1]).unwrap().accuracy;
    let ok = inst.len() == 10_000 && inst.iter().all(|i| i.context.len() == 5) && (acc - 0.20).abs() <= 0.01;
    assert!(verdict(2, ok, format!("accuracy {acc:.4} over {} instances", inst.len()), t.elapsed(), Duration::from_secs(60)));
}

#[test]
fn criterion_3_infonce_validity() {
    let t = Instant::now();
    let r = validity_suite(&SuiteConfig { joints: 24, max_size: 16, seed: 3, ..Default::default() }).unwrap();
    let critics = r.joints.iter().map(|j| j.critics.len()).min().unwrap_or(0);
    let largest = r.joints.iter().map(|j| j.rows.max(j.cols)).max().unwrap_or(0);
    let ok = r.joints.len() >= 20 && critics >= 5 && largest <= 16 && r.violations == 0 && r.eligible > 0 && r.max_eligible_gap < 0.05;
    let detail = format!(
        "{} joints × ≥{critics} critics, {} violations, optimized-table gap ≤ {:.2e} on {} eligible joints",
        r.joints.len(),
        r.violations,
        r.max_eligible_gap,
        r.eligible
    );
    assert!(verdict(3, ok, detail, t.elapsed(), Duration::from_secs(120)));
}

#[test]
fn criterion_4_gradient_check() {
    let t = Instant::now();
    let r = fixture_check(&GradCheckConfig { epsilon: 1e-5, coordinates: 240, seed: 4, fault: None }, 4).unwrap();
    let ok = r.coordinates_checked >= 200 && r.max_rel_error < 1e-4;
    let detail = format!("{} coordinates, max relative error {:.2e}", r.coordinates_checked, r.max_rel_error);
    assert!(verdict(4, ok, detail, t.elapsed(), Duration::from_secs(120)));
}

#[test]
fn criterion_5_near_zero_init_loss() {
    let t = Instant::now();
    let (vocab, ds) = small_dataset(2);
    let mut cfg = ModelConfig::for_vocab(&vocab);
    cfg.init_std = 1e-4;
    cfg.dropout = 0.0;
    let model = ModelParams::init(cfg, &mut substream(5, "model.init")).unwrap();
    let ln_v = (vocab.len() as f64).ln();
    let ctx = &ds.contexts[&Lang::En];
    let (mut u_sum, mut d_sum) = (0.0, 0.0);
    let n = 16.min(ctx.len());
    for (i, c) in ctx.iter().take(n).enumerate() {
        let mut rng = item_stream(5, "init-sanity", i as u64);
        let utt = &c.utterances[0].tokens;
        let plan = plan_token_masks(utt, 0.15, &mut rng).unwrap();
        u_sum += utterance_loss(&model, utt, &plan).unwrap();
        let cc = corrupt_context(CorruptionSource::Context(c), CorruptionMode::Mug, 0.2, &mut rng).unwrap();
        d_sum += context_loss(&model, &cc).unwrap();
    }
    let (u, d) = (u_sum / n as f64, d_sum / n as f64);
    let ok = ((u - ln_v) / ln_v).abs() <= 0.05 && ((d - ln_v) / ln_v).abs() <= 0.05;
    let detail = format!("utterance loss {u:.4}, dialog loss {d:.4}, ln|V| {ln_v:.4} (|V| = {})", vocab.len());
    assert!(verdict(5, ok, detail, t.elapsed(), Duration::from_secs(10)));
}

#[test]
fn criterion_6_trainability() {
    let t = Instant::now();
    let (vocab, ds) = small_dataset(8);
    let mut ctx = ds.contexts[&Lang::En].clone();
    ctx.truncate(64);
    let mut cfg = ModelConfig::for_vocab(&vocab);
    cfg.dropout = 0.0;
    let mut model = ModelParams::init(cfg, &mut substream(6, "model.init")).unwrap();
    let eval: Vec<PretrainExample> = ctx
        .iter()
        .enumerate()
        .map(|(i, c)| {
            PretrainExample::build(CorruptionSource::Context(c), CorruptionMode::Mug, 0.15, 0.2, &mut item_stream(6, "eval", i as u64))
                .unwrap()
        })
        .collect();
    let before = evaluate_pretrain_loss(&model, &eval, LossWeights::default()).unwrap().total;
    let data = PretrainData { monolingual: ctx.clone(), aligned: vec![] };
    let pc = PretrainConfig {
        steps: 200,
        batch_size: 16,
        optimizer: AdamWConfig { lr: 3e-3, warmup: 20, ..Default::default() },
        seed: 6,
        ..Default::default()
    };
    pretrain(&mut model, &data, &pc, |_| {}).unwrap();
    let after = evaluate_pretrain_loss(&model, &eval, LossWeights::default()).unwrap().total;
    let reduction = 1.0 - after / before;
    let ok = ctx.len() == 64 && reduction >= 0.5;
    let detail = format!("MUG loss {before:.3} → {after:.3} ({:.1}% lower) on {} contexts", reduction * 100.0, ctx.len());
    assert!(verdict(6, ok, detail, t.elapsed(), Duration::from_secs(300)));
}

#[test]
fn criterion_7_code_switch_helps_mii() {
    let t = Instant::now();
    let cfg = CodeSwitchConfig::default();
    let report = codeswitch_comparison(&cfg, |s| {
        println!(
            "  seed {}: fine-tuned MUG {:.3} vs MUG+TMUG+MMUG {:.3}; zero-shot {:.3} vs {:.3}",
            s.seed, s.mug_only, s.code_switch, s.mug_only_zero_shot, s.code_switch_zero_shot
        )
    })
    .unwrap();
    let ok = report.seeds.len() == 5 && report.mean_code_switch > report.mean_mug_only;
    let detail = format!(
        "mean mII accuracy over {} seeds: MUG+TMUG+MMUG {:.3} vs MUG {:.3} (zero-shot {:.3} vs {:.3}; {} test instances)",
        report.seeds.len(),
        report.mean_code_switch,
        report.mean_mug_only,
        report.mean_code_switch_zero_shot,
        report.mean_mug_only_zero_shot,
        report.test_instances
    );
    assert!(verdict(7, ok, detail, t.elapsed(), Duration::from_secs(1800)));
}

const BIN: &str = env!("CARGO_BIN_EXE_dialopre");

fn dialopre(dir: &Path, args: &[&str]) {
    let o = Command::new(BIN).args(args).current_dir(dir).env_remove("DIALOPRE_SEED").output().unwrap();
    assert!(o.status.success(), "dialopre {args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn gaps_split(gaps: &[i64], delta: i64) -> Vec<usize> {
    let mut utts = Vec::new();
    let mut t = 0;
    for (i, g) in std::iter::once(&0).chain(gaps).enumerate() {
        t += g;
        utts.push(TimedUtterance { text: format!("u{i}"), start_ms: t, end_ms: t + 500, movie_id: "m".into(), lang: Lang::En, speaker: None });
        t += 500;
    }
    segment_conversations(&utts, delta).unwrap().iter().map(|c| c.utterances.len()).collect()
}

#[test]
fn criterion_8_pipeline_replay() {
    let t = Instant::now();
    let boundaries = gaps_split(&[1000, 7000, 500], 6000) == [2, 2]
        && gaps_split(&[1000, 5999, 500], 6000) == [4]
        && gaps_split(&[6000], 6000) == [1, 1];

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = ["--set", "dim=16", "--set", "ffn_dim=32", "--set", "heads=2"];
    dialopre(d, &["synth", "--movies", "6", "--seed", "8", "--out", "corpus"]);
    dialopre(d, &["ingest", "--corpus", "corpus", "--out", "run"]);
    dialopre(d, &["segment", "--out", "run"]);
    dialopre(d, &["vocab", "--out", "run"]);
    dialopre(d, &["align", "--corpus", "corpus", "--out", "run"]);
    dialopre(d, &[&["pretrain", "--steps", "4", "--batch-size", "4", "--modes", "MUG,TMUG,MMUG", "--out", "run"][..], &small].concat());
    for task in ["ii", "mii", "nur", "mnur"] {
        dialopre(d, &["make-tasks", "--task", task, "--count", "40", "--out", "run"]);
    }
    dialopre(d, &["evaluate", "--task", "mnur", "--scorer", "random", "--label", "random", "--out", "run"]);
    dialopre(d, &["evaluate", "--task", "mii", "--finetune-steps", "2", "--out", "run"]);
    dialopre(d, &["report", "--out", "run", "run/eval/mnur.random.json", "run/eval/mii.MUG.json"]);

    let mut manifests: Vec<_> = fs::read_dir(d.join("run/manifests")).unwrap().map(|e| e.unwrap().path()).collect();
    manifests.sort();
    let mut replayed = 0;
    for (i, m) in manifests.iter().enumerate() {
        let out = format!("replay{i}");
        let o = Command::new(BIN)
            .args(["replay", m.to_str().unwrap(), "--out", &out])
            .current_dir(d)
            .env_remove("DIALOPRE_SEED")
            .output()
            .unwrap();
        if o.status.success() {
            replayed += 1;
        } else {
            println!("replay of {} failed: {}", m.display(), String::from_utf8_lossy(&o.stderr));
        }
    }
    let ok = boundaries && manifests.len() == 12 && replayed == manifests.len();
    let detail = format!("δ_T boundary cases {}, {replayed}/{} manifests replayed byte-identically", if boundaries { "hold" } else { "broken" }, manifests.len());
    assert!(verdict(8, ok, detail, t.elapsed(), Duration::from_secs(60)));
}

#[test]
fn criterion_9_corruption_invariants() {
    let t = Instant::now();
    let movies = generate(&SyntheticConfig { movies: 8, seed: 9, ..Default::default() });
    let vocab = Vocabulary::build(corpus_texts(&movies), 1000).unwrap();
    let ds = build_dataset(&movies, &vocab, &WindowConfig { stride: 1, ..Default::default() }).unwrap();
    let mono: Vec<&Context> = ds.contexts.values().flatten().collect();
    // Code-switched contexts: the first translated slot of each pair swapped in
    let mixed: Vec<Context> = ds
        .pairs
        .iter()
        .filter_map(|p| p.translated_slots().first().map(|&k| p.with_translations(&[k])))
        .filter(|c| c.monolingual_lang().is_none())
        .collect();
    let mut details = Vec::new();
    let mut ok = !mono.is_empty() && !mixed.is_empty() && !ds.pairs.is_empty();
    for mode in [CorruptionMode::Mug, CorruptionMode::Tmug, CorruptionMode::Mmug] {
        let mut violations = 0;
        let mut calls = 0;
        for i in 0..10_000u64 {
            let mut rng = item_stream(9, mode.name(), i);
            let p_c = 0.05 + 0.95 * (i % 20) as f64 / 19.0;
            let source = match mode {
                CorruptionMode::Mug => CorruptionSource::Context(mono[i as usize % mono.len()]),
                CorruptionMode::Tmug => CorruptionSource::Aligned(&ds.pairs[i as usize % ds.pairs.len()]),
                CorruptionMode::Mmug if i % 2 == 0 => CorruptionSource::Context(&mixed[i as usize % mixed.len()]),
                CorruptionMode::Mmug => CorruptionSource::Aligned(&ds.pairs[i as usize % ds.pairs.len()]),
            };
            calls += 1;
            match corrupt_context(source, mode, p_c, &mut rng) {
                Ok(cc) => {
                    let original = match source {
                        CorruptionSource::Context(c) => Some(c.clone()),
                        CorruptionSource::Aligned(_) => None,
                    };
                    let lossless = original.map_or(true, |c| cc.reconstruct() == c);
                    if cc.validate().is_err() || !lossless || cc.mode != mode {
                        violations += 1;
                    }
                }
                // A TMUG pair with no translated slot has nothing to mask
                Err(dialopre_core::Error::NothingMasked) if mode == CorruptionMode::Tmug => {}
                Err(_) => violations += 1,
            }
        }
        ok &= calls == 10_000 && violations == 0;
        details.push(format!("{} {violations}/{calls}", mode.name()));
    }
    assert!(verdict(9, ok, format!("violations: {}", details.join(", ")), t.elapsed(), Duration::from_secs(60)));
}
