//! One function per subcommand. Each reads its inputs through a [`Stage`],
//! writes its outputs under the output directory and returns the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dialopre_core::corpus::{
    join_movie_alignments, parse_alignment_stream, parse_subtitle_stream, segment_conversations, window_contexts,
    AlignedContextPair, Context, ContextRecord, Conversation, TimedUtterance,
};
use dialopre_core::gradcheck::{fixture_check, GradCheckConfig, GradCheckReport};
use dialopre_core::mi::{preset_joint, run_experiment, validity_suite, CriticKind, ExperimentReport, PresetExperiment, SuiteConfig, SuiteReport};
use dialopre_core::model::{load_checkpoint, save_checkpoint, ModelParams};
use dialopre_core::rng::{substream, substream_seed};
use dialopre_core::synthetic::{generate, SyntheticConfig};
use dialopre_core::tasks::{
    compute_metrics, make_ii, make_mii, make_mnur, make_nur, model_ii_rankings, model_nur_rankings, score_ii, score_nur,
    InconsistencyInstance, Metrics, RandomScorer, RetrievalInstance, TaskKind, TaskRecord, UtterancePool,
};
use dialopre_core::train::{finetune_ii, finetune_nur, pretrain, FinetuneConfig, PretrainConfig, PretrainData};
use dialopre_core::{Lang, Vocabulary};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{Manifest, Stage};
use crate::report::{render_report, MetricsFile};

pub const UTTERANCES: &str = "ingest/utterances.jsonl";
pub const INGEST_STATS: &str = "ingest/stats.json";
pub const CONVERSATIONS: &str = "segment/conversations.jsonl";
pub const VOCAB: &str = "vocab/vocab.json";
pub const CONTEXTS: &str = "align/contexts.jsonl";
pub const PAIRS: &str = "align/pairs.jsonl";
pub const SPLIT: &str = "align/split.json";
pub const PRETRAIN_LOG: &str = "pretrain/log.jsonl";
pub const CHECKPOINT: &str = "pretrain/model.ckpt";

pub fn task_file(task: TaskKind, part: &str) -> String {
    format!("tasks/{task}.{part}.jsonl")
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let reader = BufReader::new(File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_vocab(stage: &mut Stage) -> Result<Vocabulary, CliError> {
    let path = stage.input(stage.cfg.input_root().join(VOCAB))?;
    Ok(Vocabulary::read_json(File::open(&path)?)?)
}

// ---------------------------------------------------------------- synth

#[derive(Serialize)]
struct SubtitleLine<'a> {
    start_ms: i64,
    end_ms: i64,
    text: &'a str,
}

/// Write a synthetic English/French corpus in the ingestion format.
pub fn synth(mut stage: Stage) -> Result<Manifest, CliError> {
    let movies = generate(&SyntheticConfig { movies: stage.cfg.synth_movies, seed: stage.cfg.seed, ..Default::default() });
    for m in &movies {
        for (lang, utts) in [(Lang::En, &m.en), (Lang::Fr, &m.fr)] {
            let lines: Vec<SubtitleLine> =
                utts.iter().map(|u| SubtitleLine { start_ms: u.start_ms, end_ms: u.end_ms, text: &u.text }).collect();
            stage.write_jsonl(format!("{}.{lang}.jsonl", m.movie_id), &lines)?;
        }
        stage.write_jsonl(format!("{}.en-fr.align.jsonl", m.movie_id), &m.links)?;
    }
    println!("wrote {} synthetic movies", movies.len());
    stage.finish()
}

// ---------------------------------------------------------------- ingest

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub movie_id: String,
    pub lang: Lang,
    pub accepted: usize,
    pub skipped: usize,
}

enum CorpusFile {
    Stream { movie_id: String, lang: Lang },
    Alignment { movie_id: String, a: Lang, b: Lang },
}

fn classify(name: &str) -> Option<CorpusFile> {
    if let Some(stem) = name.strip_suffix(".align.jsonl") {
        let (movie, pair) = stem.rsplit_once('.')?;
        let (a, b) = pair.split_once('-')?;
        return Some(CorpusFile::Alignment { movie_id: movie.to_string(), a: a.parse().ok()?, b: b.parse().ok()? });
    }
    let (movie, lang) = name.strip_suffix(".jsonl")?.rsplit_once('.')?;
    Some(CorpusFile::Stream { movie_id: movie.to_string(), lang: lang.parse().ok()? })
}

fn corpus_files(dir: &Path) -> Result<Vec<(String, CorpusFile)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("corpus directory {}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names.into_iter().filter_map(|n| classify(&n).map(|c| (n, c))).collect())
}

/// Parse every `<movie>.<lang>.jsonl` stream of the corpus directory.
pub fn ingest(mut stage: Stage) -> Result<Manifest, CliError> {
    let dir = PathBuf::from(&stage.cfg.corpus_dir);
    let mut all = Vec::new();
    let mut stats = Vec::new();
    for (name, file) in corpus_files(&dir)? {
        let CorpusFile::Stream { movie_id, lang } = file else { continue };
        let path = stage.input(dir.join(&name))?;
        let parsed = parse_subtitle_stream(BufReader::new(File::open(&path)?), lang, &movie_id)?;
        stats.push(StreamStats { movie_id, lang, accepted: parsed.utterances.len(), skipped: parsed.skipped });
        all.extend(parsed.utterances);
    }
    if stats.is_empty() {
        return Err(CliError::data(format!("no <movie>.<lang>.jsonl streams in {}", dir.display())));
    }
    stage.write_jsonl(UTTERANCES, &all)?;
    stage.write_json(INGEST_STATS, &stats)?;
    let skipped: usize = stats.iter().map(|s| s.skipped).sum();
    println!("ingested {} utterances from {} streams ({skipped} malformed lines skipped)", all.len(), stats.len());
    stage.finish()
}

// ---------------------------------------------------------------- segment

pub fn segment(mut stage: Stage) -> Result<Manifest, CliError> {
    let path = stage.input(stage.cfg.input_root().join(UTTERANCES))?;
    let utts: Vec<TimedUtterance> = read_jsonl(&path)?;
    let mut streams: BTreeMap<(String, Lang), Vec<TimedUtterance>> = BTreeMap::new();
    for u in utts {
        streams.entry((u.movie_id.clone(), u.lang)).or_default().push(u);
    }
    let mut convs = Vec::new();
    for s in streams.values() {
        convs.extend(segment_conversations(s, stage.cfg.delta_t_ms)?);
    }
    stage.write_jsonl(CONVERSATIONS, &convs)?;
    println!("{} conversations from {} streams", convs.len(), streams.len());
    stage.finish()
}

// ---------------------------------------------------------------- vocab

pub fn vocab(mut stage: Stage) -> Result<Manifest, CliError> {
    let path = stage.input(stage.cfg.input_root().join(CONVERSATIONS))?;
    let convs: Vec<Conversation> = read_jsonl(&path)?;
    let vocab = Vocabulary::build(convs.iter().flat_map(|c| &c.utterances).map(|u| u.text.as_str()), stage.cfg.max_vocab)?;
    let out = stage.output(VOCAB)?;
    let mut w = BufWriter::new(File::create(&out)?);
    vocab.write_json(&mut w)?;
    w.flush()?;
    println!("vocabulary of {} tokens", vocab.len());
    stage.finish()
}

// ---------------------------------------------------------------- align

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub heldout: Vec<String>,
}

impl Split {
    /// Movies ordered by a seeded hash; the first `ceil(share · n)` are held
    /// out (at least one when there are two or more movies).
    pub fn new(movies: &BTreeSet<String>, share: f64, seed: u64) -> Self {
        let mut order: Vec<&String> = movies.iter().collect();
        order.sort_by_key(|m| (substream_seed(seed, &format!("split/{m}")), m.to_string()));
        let n = order.len();
        let k = if share > 0.0 && n >= 2 { ((share * n as f64).ceil() as usize).clamp(1, n - 1) } else { 0 };
        let mut heldout: Vec<String> = order[..k].iter().map(|s| s.to_string()).collect();
        let mut train: Vec<String> = order[k..].iter().map(|s| s.to_string()).collect();
        heldout.sort();
        train.sort();
        Self { train, heldout }
    }
}

/// Window monolingual contexts and join alignment files into bilingual pairs.
pub fn align(mut stage: Stage) -> Result<Manifest, CliError> {
    let vocab = read_vocab(&mut stage)?;
    let path = stage.input(stage.cfg.input_root().join(CONVERSATIONS))?;
    let convs: Vec<Conversation> = read_jsonl(&path)?;
    let window = stage.cfg.window();
    let mut by_movie: BTreeMap<(String, Lang), Vec<Conversation>> = BTreeMap::new();
    let mut contexts = Vec::new();
    for c in convs {
        let Some(lang) = c.lang() else { continue };
        for ctx in window_contexts(&c, &vocab, &window)? {
            contexts.push(ContextRecord::from_context(&ctx)?);
        }
        by_movie.entry((c.movie_id.clone(), lang)).or_default().push(c);
    }
    let dir = PathBuf::from(&stage.cfg.corpus_dir);
    let mut pairs = Vec::new();
    for (name, file) in corpus_files(&dir)? {
        let CorpusFile::Alignment { movie_id, a, b } = file else { continue };
        let path = stage.input(dir.join(&name))?;
        let (Some(ca), Some(cb)) = (by_movie.get(&(movie_id.clone(), a)), by_movie.get(&(movie_id.clone(), b))) else {
            return Err(CliError::data(format!("{}: no ingested {a} and {b} streams for movie {movie_id}", path.display())));
        };
        let links = parse_alignment_stream(BufReader::new(File::open(&path)?))
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let stream_b = Conversation { movie_id: movie_id.clone(), utterances: cb.iter().flat_map(|c| c.utterances.clone()).collect() };
        let joined = join_movie_alignments(ca, &stream_b, &links, &vocab, &window, stage.cfg.min_conf)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        pairs.extend(joined.iter().map(ContextRecord::from_pair));
    }
    let movies: BTreeSet<String> = by_movie.keys().map(|(m, _)| m.clone()).collect();
    let split = Split::new(&movies, stage.cfg.heldout_share, stage.cfg.seed);
    stage.write_jsonl(CONTEXTS, &contexts)?;
    stage.write_jsonl(PAIRS, &pairs)?;
    stage.write_json(SPLIT, &split)?;
    println!(
        "{} contexts, {} aligned pairs; {} training and {} held-out movies",
        contexts.len(),
        pairs.len(),
        split.train.len(),
        split.heldout.len()
    );
    stage.finish()
}

struct Shards {
    contexts: Vec<Context>,
    pairs: Vec<AlignedContextPair>,
}

fn load_shards(stage: &mut Stage, movies: &[String], need_pairs: bool) -> Result<Shards, CliError> {
    let keep: BTreeSet<&str> = movies.iter().map(String::as_str).collect();
    let root = stage.cfg.input_root();
    let cpath = stage.input(root.join(CONTEXTS))?;
    let contexts = read_jsonl::<ContextRecord>(&cpath)?
        .iter()
        .filter(|r| keep.contains(r.movie_id.as_str()))
        .map(|r| r.to_context().map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = if need_pairs || root.join(PAIRS).is_file() {
        let ppath = stage.input(root.join(PAIRS))?;
        read_jsonl::<ContextRecord>(&ppath)?
            .iter()
            .filter(|r| keep.contains(r.movie_id.as_str()))
            .map(|r| r.to_pair().map_err(CliError::from))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    Ok(Shards { contexts, pairs })
}

fn read_split(stage: &mut Stage) -> Result<Split, CliError> {
    let path = stage.input(stage.cfg.input_root().join(SPLIT))?;
    read_json(&path)
}

// ---------------------------------------------------------------- pretrain

pub fn pretrain_cmd(mut stage: Stage) -> Result<Manifest, CliError> {
    let cfg = stage.cfg.clone();
    let modes = cfg.modes()?;
    let vocab = read_vocab(&mut stage)?;
    let split = read_split(&mut stage)?;
    let bilingual = modes.iter().any(|m| *m != dialopre_core::objectives::CorruptionMode::Mug);
    let shards = load_shards(&mut stage, &split.train, bilingual)?;
    if bilingual && shards.pairs.is_empty() {
        return Err(CliError::data("TMUG/MMUG need aligned pairs, but the training movies have none"));
    }
    let data = PretrainData { monolingual: shards.contexts, aligned: shards.pairs };
    let mut model = ModelParams::init(cfg.model_config(&vocab), &mut substream(cfg.seed, "model.init"))?;
    let pc = PretrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer(cfg.lr),
        p_omega: cfg.p_omega,
        p_c: cfg.p_c,
        weights: cfg.loss_weights(),
        modes,
        seed: cfg.seed,
    };
    let report_every = (cfg.steps / 10).max(1);
    let logs = pretrain(&mut model, &data, &pc, |l| {
        if (l.step + 1) % report_every == 0 {
            println!("step {:>6}  lr {:.2e}  loss {:.4}", l.step + 1, l.lr, l.loss.total);
        }
    })?;
    stage.write_jsonl(PRETRAIN_LOG, &logs)?;
    let ckpt = stage.output(CHECKPOINT)?;
    save_checkpoint(&model, &ckpt)?;
    stage.finish()
}

// ---------------------------------------------------------------- make-tasks

fn instances_to_records(task: TaskKind, ii: &[InconsistencyInstance], nur: &[RetrievalInstance], seed: u64) -> Vec<TaskRecord> {
    if task.is_retrieval() {
        nur.iter().map(|i| TaskRecord::from_nur(task, i, seed)).collect()
    } else {
        ii.iter().map(|i| TaskRecord::from_ii(task, i, seed)).collect()
    }
}

fn build_task(task: TaskKind, shards: &Shards, cfg: &RunConfig, seed: u64) -> Result<Vec<TaskRecord>, CliError> {
    let pool = UtterancePool::from_sources(&shards.contexts, &shards.pairs);
    let (mut ii, mut nur) = (Vec::new(), Vec::new());
    match task {
        TaskKind::Ii => ii = make_ii(&shards.contexts, &pool, seed)?,
        TaskKind::Mii => ii = make_mii(&shards.pairs, &pool, cfg.p_lprime, seed)?,
        TaskKind::Nur => nur = make_nur(&shards.contexts, &pool, cfg.distractors, seed)?,
        TaskKind::Mnur => nur = make_mnur(&shards.pairs, &pool, cfg.distractors, cfg.p_lprime, seed)?,
    }
    ii.truncate(cfg.task_count);
    nur.truncate(cfg.task_count);
    Ok(instances_to_records(task, &ii, &nur, seed))
}

/// Task instances from held-out movies only: the first half of them (in
/// seeded order) for fine-tuning, the rest for testing.
pub fn make_tasks(mut stage: Stage) -> Result<Manifest, CliError> {
    let cfg = stage.cfg.clone();
    let task = cfg.task_kind()?;
    stage.manifest_name = format!("make-tasks.{task}");
    let multilingual = matches!(task, TaskKind::Mii | TaskKind::Mnur);
    if multilingual {
        let pairs = cfg.input_root().join(PAIRS);
        if !pairs.is_file() {
            return Err(CliError::data(format!("{task} needs aligned pairs: missing input file {}", pairs.display())));
        }
    }
    let split = read_split(&mut stage)?;
    if split.heldout.is_empty() {
        return Err(CliError::data("no held-out movies; raise heldout_share or add movies"));
    }
    let ordered = Split::new(&split.heldout.iter().cloned().collect(), 0.5, substream_seed(cfg.seed, "tasks.halves"));
    for (part, movies) in [("train", &ordered.train), ("test", &ordered.heldout)] {
        let shards = load_shards(&mut stage, movies, multilingual)?;
        let seed = substream_seed(cfg.seed, &format!("tasks.{task}.{part}"));
        let records = if movies.is_empty() { Vec::new() } else { build_task(task, &shards, &cfg, seed)? };
        if part == "test" && records.is_empty() {
            return Err(CliError::data(format!("held-out movies yield no {task} instances")));
        }
        stage.write_jsonl(task_file(task, part), &records)?;
        println!("{task} {part}: {} instances from {} movies", records.len(), movies.len());
    }
    stage.finish()
}

// ---------------------------------------------------------------- evaluate

pub fn recall_ns(task: TaskKind, candidates: usize) -> Vec<usize> {
    if task.is_retrieval() {
        [1, 2, 5].into_iter().filter(|&n| n <= candidates).collect()
    } else {
        vec![1]
    }
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '+' || c == '-' { c } else { '_' }).collect()
}

pub fn evaluate(mut stage: Stage) -> Result<Manifest, CliError> {
    let cfg = stage.cfg.clone();
    let task = cfg.task_kind()?;
    stage.manifest_name = format!("evaluate.{task}.{}", sanitize(&cfg.row_label()));
    let test_path = stage.input(cfg.input_root().join(task_file(task, "test")))?;
    let records: Vec<TaskRecord> = read_jsonl(&test_path)?;
    if records.is_empty() {
        return Err(CliError::data(format!("{} holds no instances", test_path.display())));
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let retrieval = task.is_retrieval();
    let ii: Vec<InconsistencyInstance> =
        if retrieval { Vec::new() } else { records.iter().map(|r| r.to_ii()).collect::<Result<_, _>>()? };
    let nur: Vec<RetrievalInstance> =
        if retrieval { records.iter().map(|r| r.to_nur()).collect::<Result<_, _>>()? } else { Vec::new() };
    let rankings = if cfg.scorer == "random" {
        let mut scorer = RandomScorer::new(substream_seed(cfg.seed, "evaluate"));
        if retrieval {
            nur.iter().map(|i| score_nur(&mut scorer, i)).collect::<Result<Vec<_>, _>>()?
        } else {
            // Full ranking: the predicted slot first, the rest in index order.
            ii.iter()
                .map(|i| {
                    let top = score_ii(&mut scorer, i)?;
                    Ok(std::iter::once(top).chain((0..i.context.len()).filter(|&k| k != top)).collect())
                })
                .collect::<Result<Vec<_>, CliError>>()?
        }
    } else {
        let ckpt = stage.input(cfg.checkpoint_path())?;
        let mut model = load_checkpoint(&ckpt)?;
        if cfg.finetune_steps > 0 {
            let train_path = stage.input(cfg.input_root().join(task_file(task, "train")))?;
            let train: Vec<TaskRecord> = read_jsonl(&train_path)?;
            let fc = FinetuneConfig {
                steps: cfg.finetune_steps,
                batch_size: cfg.batch_size,
                optimizer: cfg.optimizer(cfg.finetune_lr),
                head_only: false,
                seed: substream_seed(cfg.seed, "finetune"),
            };
            let history = if retrieval {
                let inst: Vec<RetrievalInstance> = train.iter().map(|r| r.to_nur()).collect::<Result<_, _>>()?;
                finetune_nur(&mut model, &inst, &fc)?
            } else {
                let inst: Vec<InconsistencyInstance> = train.iter().map(|r| r.to_ii()).collect::<Result<_, _>>()?;
                finetune_ii(&mut model, &inst, &fc)?
            };
            if let Some(last) = history.last() {
                println!("fine-tuned {} steps, final loss {last:.4}", history.len());
            }
        }
        if retrieval {
            model_nur_rankings(&model, &nur)?
        } else {
            model_ii_rankings(&model, &ii)?
        }
    };
    let candidates = rankings.first().map_or(0, Vec::len);
    let metrics: Metrics = compute_metrics(&rankings, &labels, &recall_ns(task, candidates))?;
    let label = cfg.row_label();
    let file = MetricsFile { task, label: label.clone(), scorer: cfg.scorer.clone(), metrics };
    stage.write_json(format!("eval/{task}.{}.json", sanitize(&label)), &file)?;
    println!("{}", serde_json::to_string(&file)?);
    stage.finish()
}

// ---------------------------------------------------------------- mi-check

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiCheckReport {
    pub suite: SuiteReport,
    pub presets: Vec<ExperimentReport>,
}

pub fn mi_check(mut stage: Stage) -> Result<Manifest, CliError> {
    let cfg = stage.cfg.clone();
    let suite = validity_suite(&SuiteConfig {
        joints: cfg.joints,
        max_size: cfg.max_joint_size,
        critic_steps: cfg.critic_steps,
        critic_lr: cfg.critic_lr,
        seed: cfg.seed,
    })?;
    let movies = generate(&SyntheticConfig { movies: cfg.synth_movies, seed: cfg.seed, ..Default::default() });
    let mut rng = substream(cfg.seed, "mi.presets");
    let presets = PresetExperiment::ALL
        .iter()
        .map(|&p| run_experiment(p.name(), &preset_joint(p, &movies)?, CriticKind::Table, cfg.critic_steps, cfg.critic_lr, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let report = MiCheckReport { suite, presets };
    stage.write_json("mi/report.json", &report)?;
    println!(
        "{} joints, {} violations; optimized-table gap ≤ {:.2e} on {} eligible joints",
        report.suite.joints.len(),
        report.suite.violations,
        report.suite.max_eligible_gap,
        report.suite.eligible
    );
    for p in &report.presets {
        println!("{:<16} MI {:.4}  bound {:.4}  |B| {}", p.joint_id, p.true_mi, p.bound_final, p.candidate_set_size);
    }
    let violations = report.suite.violations;
    let manifest = stage.finish()?;
    if violations > 0 {
        return Err(CliError::Numeric(format!("{violations} bounds exceeded the exact MI or ln|B|")));
    }
    Ok(manifest)
}

// ---------------------------------------------------------------- grad-check

pub const GRAD_TOLERANCE: f64 = 1e-4;

pub fn grad_check(mut stage: Stage) -> Result<Manifest, CliError> {
    let cfg = stage.cfg.clone();
    let gc = GradCheckConfig {
        epsilon: cfg.epsilon,
        coordinates: cfg.coordinates,
        seed: cfg.seed,
        fault: cfg.fault.then_some(dialopre_core::autodiff::Fault::DropAttentionScoreGrad),
    };
    let report: GradCheckReport = fixture_check(&gc, cfg.seed)?;
    stage.write_json("gradcheck/report.json", &report)?;
    println!(
        "{} coordinates, max relative error {:.3e} at {}[{}]",
        report.coordinates_checked, report.max_rel_error, report.worst.param, report.worst.index
    );
    let manifest = stage.finish()?;
    if report.max_rel_error >= GRAD_TOLERANCE {
        return Err(CliError::Numeric(format!("max relative error {:.3e} ≥ {GRAD_TOLERANCE:e}", report.max_rel_error)));
    }
    Ok(manifest)
}

// ---------------------------------------------------------------- report

pub fn report(mut stage: Stage, files: &[PathBuf]) -> Result<Manifest, CliError> {
    if files.is_empty() {
        return Err(CliError::data("report needs at least one metrics file"));
    }
    let mut parsed = Vec::with_capacity(files.len());
    for f in files {
        let path = stage.input(f)?;
        let m: MetricsFile =
            read_json(&path).map_err(|e| CliError::data(format!("malformed metrics file: {e}")))?;
        parsed.push(m);
    }
    let (text, summary) = render_report(&parsed);
    let out = stage.output("report/summary.txt")?;
    fs::write(out, &text)?;
    stage.write_json("report/summary.json", &summary)?;
    print!("{text}");
    stage.finish()
}
