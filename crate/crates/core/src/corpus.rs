//! Timed subtitle ingestion, conversation segmentation, context windowing and
//! cross-language alignment joins.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::Lang;
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_DELTA_T_MS: i64 = 6000;
pub const DEFAULT_CONTEXT_SIZE: usize = 5;
pub const DEFAULT_MAX_UTT_TOKENS: usize = 50;
pub const DEFAULT_MIN_CONF: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedUtterance {
    pub text: String,
    pub start_ms: i64,
    pub end_ms: i64,
    pub movie_id: String,
    pub lang: Lang,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

/// One line of a subtitle stream.
#[derive(Debug, Deserialize)]
struct SubtitleRecord {
    start_ms: i64,
    end_ms: i64,
    text: String,
    #[serde(default)]
    speaker: Option<String>,
}

/// Collapse runs of whitespace and trim.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedStream {
    pub utterances: Vec<TimedUtterance>,
    /// Lines rejected as malformed, including records that would break time order.
    pub skipped: usize,
}

/// Parse a JSONL subtitle stream (`start_ms`, `end_ms`, `text` per line).
///
/// Records that fail to parse, have `end_ms < start_ms`, have empty text, or
/// start before the previously accepted record are skipped and counted.
/// Blank lines are ignored.
pub fn parse_subtitle_stream<R: BufRead>(reader: R, lang: Lang, movie_id: &str) -> Result<ParsedStream> {
    let mut out = ParsedStream::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SubtitleRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(_) => {
                out.skipped += 1;
                continue;
            }
        };
        let text = normalize_text(&rec.text);
        let in_order = out.utterances.last().map_or(true, |p| p.start_ms <= rec.start_ms);
        if rec.end_ms < rec.start_ms || text.is_empty() || !in_order {
            out.skipped += 1;
            continue;
        }
        out.utterances.push(TimedUtterance {
            text,
            start_ms: rec.start_ms,
            end_ms: rec.end_ms,
            movie_id: movie_id.to_string(),
            lang,
            speaker: rec.speaker,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub movie_id: String,
    pub utterances: Vec<TimedUtterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn lang(&self) -> Option<Lang> {
        self.utterances.first().map(|u| u.lang)
    }
}

fn check_stream(utts: &[TimedUtterance]) -> Result<()> {
    for (i, pair) in utts.windows(2).enumerate() {
        if pair[1].start_ms < pair[0].start_ms {
            return Err(Error::Unordered { index: i + 1 });
        }
        if pair[1].movie_id != pair[0].movie_id {
            return Err(Error::MixedMovies { first: pair[0].movie_id.clone(), other: pair[1].movie_id.clone() });
        }
    }
    Ok(())
}

/// Split a time-ordered stream into conversations. Two consecutive utterances
/// stay together iff the silence between them is shorter than `delta_t_ms`.
pub fn segment_conversations(utts: &[TimedUtterance], delta_t_ms: i64) -> Result<Vec<Conversation>> {
    check_stream(utts)?;
    let mut out: Vec<Conversation> = Vec::new();
    let mut current: Vec<TimedUtterance> = Vec::new();
    for u in utts {
        if let Some(prev) = current.last() {
            if u.start_ms - prev.end_ms >= delta_t_ms {
                out.push(Conversation { movie_id: prev.movie_id.clone(), utterances: std::mem::take(&mut current) });
            }
        }
        current.push(u.clone());
    }
    if let Some(first) = current.first() {
        out.push(Conversation { movie_id: first.movie_id.clone(), utterances: current });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<TokenId>,
    pub lang: Lang,
}

/// A window of exactly `T` consecutive tokenized utterances.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub movie_id: String,
    pub utterances: Vec<Utterance>,
}

impl Context {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// The shared language when every utterance is in the same language.
    pub fn monolingual_lang(&self) -> Option<Lang> {
        let first = self.utterances.first()?.lang;
        self.utterances.iter().all(|u| u.lang == first).then_some(first)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub context_size: usize,
    pub stride: usize,
    pub max_utt_tokens: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { context_size: DEFAULT_CONTEXT_SIZE, stride: DEFAULT_CONTEXT_SIZE, max_utt_tokens: DEFAULT_MAX_UTT_TOKENS }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_size == 0 || self.stride == 0 || self.max_utt_tokens == 0 {
            return Err(Error::Window(format!("{self:?}: all sizes must be at least 1")));
        }
        Ok(())
    }
}

pub fn tokenize_utterance(vocab: &Vocabulary, text: &str, lang: Lang, max_tokens: usize) -> Utterance {
    let mut tokens = vocab.encode(text);
    if tokens.is_empty() {
        tokens.push(TokenId::UNK);
    }
    tokens.truncate(max_tokens);
    Utterance { tokens, lang }
}

fn window_starts(len: usize, cfg: &WindowConfig) -> impl Iterator<Item = usize> {
    let last = len.checked_sub(cfg.context_size);
    (0..).step_by(cfg.stride).take_while(move |&s| last.is_some_and(|l| s <= l))
}

/// Cut a conversation into contexts starting at 0, stride, 2·stride, …
/// Conversations shorter than the context size yield nothing.
pub fn window_contexts(conv: &Conversation, vocab: &Vocabulary, cfg: &WindowConfig) -> Result<Vec<Context>> {
    cfg.validate()?;
    let tokenized: Vec<Utterance> = conv
        .utterances
        .iter()
        .map(|u| tokenize_utterance(vocab, &u.text, u.lang, cfg.max_utt_tokens))
        .collect();
    Ok(window_starts(tokenized.len(), cfg)
        .map(|s| Context { movie_id: conv.movie_id.clone(), utterances: tokenized[s..s + cfg.context_size].to_vec() })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentLink {
    #[serde(rename = "src")]
    pub src_index: usize,
    #[serde(rename = "tgt")]
    pub tgt_index: usize,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

pub fn parse_alignment_stream<R: BufRead>(reader: R) -> Result<Vec<AlignmentLink>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslatedUtterance {
    pub utterance: Utterance,
    pub link: AlignmentLink,
}

/// A monolingual context plus, for some of its positions, the aligned
/// utterance in a second language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedContextPair {
    pub base: Context,
    pub translated: Vec<Option<TranslatedUtterance>>,
    pub lang_pair: (Lang, Lang),
}

impl AlignedContextPair {
    pub fn translated_slots(&self) -> Vec<usize> {
        self.translated.iter().enumerate().filter_map(|(i, t)| t.as_ref().map(|_| i)).collect()
    }

    /// The code-switched context: every translated slot carries its translation.
    pub fn multilingual(&self) -> Context {
        self.with_translations(&self.translated_slots())
    }

    /// The base context with the given translated slots swapped in.
    pub fn with_translations(&self, slots: &[usize]) -> Context {
        let mut ctx = self.base.clone();
        for &k in slots {
            if let Some(t) = &self.translated[k] {
                ctx.utterances[k] = t.utterance.clone();
            }
        }
        ctx
    }
}

/// Keep links at or above `min_conf`; for duplicate sources keep the most
/// confident one (lowest target index on exact ties).
pub fn filter_links(links: &[AlignmentLink], min_conf: f64) -> BTreeMap<usize, AlignmentLink> {
    let mut best: BTreeMap<usize, AlignmentLink> = BTreeMap::new();
    for l in links.iter().filter(|l| l.confidence >= min_conf) {
        best.entry(l.src_index)
            .and_modify(|cur| {
                if l.confidence > cur.confidence || (l.confidence == cur.confidence && l.tgt_index < cur.tgt_index) {
                    *cur = *l;
                }
            })
            .or_insert(*l);
    }
    best
}

/// Join a conversation in language L with utterances in L′ through alignment
/// links (indices local to `conv_a` and `conv_b`). Windows of `conv_a` without
/// any surviving link are dropped.
pub fn join_alignments(
    conv_a: &Conversation,
    conv_b: &Conversation,
    links: &[AlignmentLink],
    vocab: &Vocabulary,
    cfg: &WindowConfig,
    min_conf: f64,
) -> Result<Vec<AlignedContextPair>> {
    cfg.validate()?;
    let (Some(la), Some(lb)) = (conv_a.lang(), conv_b.lang()) else {
        return Ok(Vec::new());
    };
    if la == lb {
        return Err(Error::SameLanguage(la));
    }
    if let Some(bad) = links.iter().find(|l| l.src_index >= conv_a.len() || l.tgt_index >= conv_b.len()) {
        return Err(Error::LinkOutOfRange { src: bad.src_index, tgt: bad.tgt_index });
    }
    let kept = filter_links(links, min_conf);
    let contexts = window_contexts(conv_a, vocab, cfg)?;
    let mut out = Vec::new();
    for (ctx, start) in contexts.into_iter().zip(window_starts(conv_a.len(), cfg)) {
        let translated: Vec<Option<TranslatedUtterance>> = (0..cfg.context_size)
            .map(|k| {
                kept.get(&(start + k)).map(|link| {
                    let u = &conv_b.utterances[link.tgt_index];
                    TranslatedUtterance { utterance: tokenize_utterance(vocab, &u.text, u.lang, cfg.max_utt_tokens), link: *link }
                })
            })
            .collect();
        if translated.iter().any(Option::is_some) {
            out.push(AlignedContextPair { base: ctx, translated, lang_pair: (la, lb) });
        }
    }
    Ok(out)
}

/// Movie-level join: `links` index the whole L stream (the conversations of
/// `convs_a` in order) and the whole L′ stream `stream_b`. Each conversation
/// is joined with its own slice of the links against the full L′ stream, so
/// a link may cross an L′ conversation boundary.
pub fn join_movie_alignments(
    convs_a: &[Conversation],
    stream_b: &Conversation,
    links: &[AlignmentLink],
    vocab: &Vocabulary,
    cfg: &WindowConfig,
    min_conf: f64,
) -> Result<Vec<AlignedContextPair>> {
    let total: usize = convs_a.iter().map(Conversation::len).sum();
    if let Some(bad) = links.iter().find(|l| l.src_index >= total) {
        return Err(Error::LinkOutOfRange { src: bad.src_index, tgt: bad.tgt_index });
    }
    let mut out = Vec::new();
    let mut first = 0;
    for conv in convs_a {
        let local: Vec<AlignmentLink> = links
            .iter()
            .filter(|l| (first..first + conv.len()).contains(&l.src_index))
            .map(|l| AlignmentLink { src_index: l.src_index - first, ..*l })
            .collect();
        out.extend(join_alignments(conv, stream_b, &local, vocab, cfg, min_conf)?);
        first += conv.len();
    }
    Ok(out)
}

/// On-disk form of a context shard record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub movie_id: String,
    pub langs: Vec<Lang>,
    pub utterances: Vec<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translated: Option<Vec<Option<TranslatedRecord>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslatedRecord {
    pub tokens: Vec<TokenId>,
    pub src: usize,
    pub tgt: usize,
    pub conf: f64,
}

impl ContextRecord {
    pub fn from_context(ctx: &Context) -> Result<Self> {
        let lang = ctx.monolingual_lang().ok_or(Error::ModeInput {
            mode: "context record",
            expected: "a monolingual context",
        })?;
        Ok(Self {
            movie_id: ctx.movie_id.clone(),
            langs: vec![lang],
            utterances: ctx.utterances.iter().map(|u| u.tokens.clone()).collect(),
            translated: None,
        })
    }

    pub fn from_pair(pair: &AlignedContextPair) -> Self {
        Self {
            movie_id: pair.base.movie_id.clone(),
            langs: vec![pair.lang_pair.0, pair.lang_pair.1],
            utterances: pair.base.utterances.iter().map(|u| u.tokens.clone()).collect(),
            translated: Some(
                pair.translated
                    .iter()
                    .map(|t| {
                        t.as_ref().map(|t| TranslatedRecord {
                            tokens: t.utterance.tokens.clone(),
                            src: t.link.src_index,
                            tgt: t.link.tgt_index,
                            conf: t.link.confidence,
                        })
                    })
                    .collect(),
            ),
        }
    }

    pub fn to_context(&self) -> Result<Context> {
        let lang = *self.langs.first().ok_or_else(|| Error::Input("context record without language".into()))?;
        Ok(Context {
            movie_id: self.movie_id.clone(),
            utterances: self.utterances.iter().map(|t| Utterance { tokens: t.clone(), lang }).collect(),
        })
    }

    pub fn to_pair(&self) -> Result<AlignedContextPair> {
        let base = self.to_context()?;
        let (&[la, lb], Some(tr)) = (self.langs.as_slice(), &self.translated) else {
            return Err(Error::Input("aligned record needs two languages and translations".into()));
        };
        if tr.len() != base.len() {
            return Err(Error::Input("translation slots do not match the context length".into()));
        }
        let translated = tr
            .iter()
            .map(|t| {
                t.as_ref().map(|t| TranslatedUtterance {
                    utterance: Utterance { tokens: t.tokens.clone(), lang: lb },
                    link: AlignmentLink { src_index: t.src, tgt_index: t.tgt, confidence: t.conf },
                })
            })
            .collect();
        Ok(AlignedContextPair { base, translated, lang_pair: (la, lb) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utt(start: i64, end: i64, text: &str) -> TimedUtterance {
        TimedUtterance { text: text.into(), start_ms: start, end_ms: end, movie_id: "m1".into(), lang: Lang::En, speaker: None }
    }

    /// Utterances with the given silences between them (each lasts 1 s).
    fn with_gaps(gaps: &[i64]) -> Vec<TimedUtterance> {
        let mut t = 0;
        let mut out = vec![utt(0, 1000, "u0")];
        for (i, g) in gaps.iter().enumerate() {
            t += 1000 + g;
            out.push(utt(t, t + 1000, &format!("u{}", i + 1)));
        }
        out
    }

    #[test]
    fn parse_keeps_time_order() {
        let src = "{\"start_ms\":0,\"end_ms\":500,\"text\":\"hello  there\"}\n{\"start_ms\":600,\"end_ms\":900,\"text\":\"hi\"}\n";
        let p = parse_subtitle_stream(src.as_bytes(), Lang::En, "m1").unwrap();
        assert_eq!(p.utterances.len(), 2);
        assert_eq!(p.utterances[0].text, "hello there");
        assert_eq!(p.skipped, 0);
    }

    #[test]
    fn parse_skips_malformed_lines() {
        let src = "{\"start_ms\":900,\"end_ms\":500,\"text\":\"bad\"}\n{\"start_ms\":0,\"end_ms\":10,\"text\":\"ok\"}\n";
        let p = parse_subtitle_stream(src.as_bytes(), Lang::En, "m1").unwrap();
        assert_eq!(p.utterances.len(), 1);
        assert_eq!(p.skipped, 1);

        let src = "not json\n{\"start_ms\":0,\"end_ms\":10,\"text\":\"   \"}\n{\"start_ms\":5,\"end_ms\":10,\"text\":\"a\"}\n{\"start_ms\":1,\"end_ms\":10,\"text\":\"late\"}\n";
        let p = parse_subtitle_stream(src.as_bytes(), Lang::En, "m1").unwrap();
        assert_eq!(p.utterances.len(), 1);
        assert_eq!(p.skipped, 3);
    }

    #[test]
    fn parse_empty_stream() {
        let p = parse_subtitle_stream(&b""[..], Lang::En, "m1").unwrap();
        assert!(p.utterances.is_empty());
        assert_eq!(p.skipped, 0);
    }

    #[test]
    fn segmentation_boundaries() {
        let convs = segment_conversations(&with_gaps(&[1000, 7000, 500]), 6000).unwrap();
        assert_eq!(convs.iter().map(Conversation::len).collect::<Vec<_>>(), [2, 2]);

        let convs = segment_conversations(&with_gaps(&[1000, 5999, 500]), 6000).unwrap();
        assert_eq!(convs.len(), 1);

        let convs = segment_conversations(&with_gaps(&[6000]), 6000).unwrap();
        assert_eq!(convs.len(), 2);
    }

    #[test]
    fn segmentation_rejects_unordered_input() {
        let mut u = with_gaps(&[100, 100]);
        u.swap(0, 2);
        assert!(matches!(segment_conversations(&u, 6000), Err(Error::Unordered { .. })));

        let mut u = with_gaps(&[100]);
        u[1].movie_id = "m2".into();
        assert!(matches!(segment_conversations(&u, 6000), Err(Error::MixedMovies { .. })));
    }

    fn conv_of(n: usize, words_each: usize) -> (Conversation, Vocabulary) {
        let utts: Vec<_> = (0..n)
            .map(|i| utt(i as i64 * 1000, i as i64 * 1000 + 500, &vec![format!("w{i}"); words_each].join(" ")))
            .collect();
        let vocab = Vocabulary::build(utts.iter().map(|u| u.text.as_str()), 1000).unwrap();
        (Conversation { movie_id: "m1".into(), utterances: utts }, vocab)
    }

    #[test]
    fn windowing_drops_trailing_and_short() {
        let (conv, vocab) = conv_of(12, 2);
        let ctxs = window_contexts(&conv, &vocab, &WindowConfig::default()).unwrap();
        assert_eq!(ctxs.len(), 2);
        assert_eq!(ctxs[1].utterances[0].tokens, vocab.encode("w5 w5"));

        let (conv, vocab) = conv_of(4, 2);
        assert!(window_contexts(&conv, &vocab, &WindowConfig::default()).unwrap().is_empty());

        let (conv, vocab) = conv_of(7, 2);
        let cfg = WindowConfig { stride: 1, ..Default::default() };
        assert_eq!(window_contexts(&conv, &vocab, &cfg).unwrap().len(), 3);
        assert!(window_contexts(&conv, &vocab, &WindowConfig { stride: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn windowing_trims_long_utterances() {
        let (conv, vocab) = conv_of(5, 80);
        let ctxs = window_contexts(&conv, &vocab, &WindowConfig::default()).unwrap();
        assert_eq!(ctxs[0].utterances[0].tokens.len(), 50);
    }

    fn bilingual() -> (Conversation, Conversation, Vocabulary) {
        let en: Vec<_> = (0..5).map(|i| utt(i * 1000, i * 1000 + 500, &format!("e{i}"))).collect();
        let fr: Vec<_> = (0..5)
            .map(|i| TimedUtterance { lang: Lang::Fr, ..utt(i * 1000, i * 1000 + 500, &format!("f{i}")) })
            .collect();
        let vocab = Vocabulary::build(en.iter().chain(&fr).map(|u| u.text.as_str()), 100).unwrap();
        (
            Conversation { movie_id: "m1".into(), utterances: en },
            Conversation { movie_id: "m1".into(), utterances: fr },
            vocab,
        )
    }

    fn link(s: usize, t: usize, c: f64) -> AlignmentLink {
        AlignmentLink { src_index: s, tgt_index: t, confidence: c }
    }

    #[test]
    fn join_fills_only_confident_slots() {
        let (a, b, vocab) = bilingual();
        let links = [link(1, 1, 0.95), link(3, 3, 0.99), link(4, 4, 0.9), link(0, 0, 0.5)];
        let pairs = join_alignments(&a, &b, &links, &vocab, &WindowConfig::default(), 0.9).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].translated_slots(), [1, 3, 4]);
        assert_eq!(pairs[0].lang_pair, (Lang::En, Lang::Fr));
        assert_eq!(pairs[0].translated[3].as_ref().unwrap().utterance.tokens, vocab.encode("f3"));

        let weak = [link(1, 1, 0.5), link(2, 2, 0.89)];
        assert!(join_alignments(&a, &b, &weak, &vocab, &WindowConfig::default(), 0.9).unwrap().is_empty());
    }

    #[test]
    fn join_keeps_most_confident_duplicate() {
        let (a, b, vocab) = bilingual();
        let links = [link(2, 1, 0.91), link(2, 2, 0.95)];
        let pairs = join_alignments(&a, &b, &links, &vocab, &WindowConfig::default(), 0.9).unwrap();
        let t = pairs[0].translated[2].as_ref().unwrap();
        assert_eq!(t.link.confidence, 0.95);
        assert_eq!(t.utterance.tokens, vocab.encode("f2"));
    }

    #[test]
    fn join_rejects_bad_input() {
        let (a, b, vocab) = bilingual();
        assert!(matches!(
            join_alignments(&a, &a, &[], &vocab, &WindowConfig::default(), 0.9),
            Err(Error::SameLanguage(Lang::En))
        ));
        assert!(matches!(
            join_alignments(&a, &b, &[link(9, 0, 1.0)], &vocab, &WindowConfig::default(), 0.9),
            Err(Error::LinkOutOfRange { .. })
        ));
    }

    #[test]
    fn record_roundtrip() {
        let (a, b, vocab) = bilingual();
        let pairs = join_alignments(&a, &b, &[link(1, 1, 0.95)], &vocab, &WindowConfig::default(), 0.9).unwrap();
        let rec = ContextRecord::from_pair(&pairs[0]);
        assert_eq!(rec.to_pair().unwrap(), pairs[0]);
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<ContextRecord>(&json).unwrap(), rec);
    }

    proptest! {
        #[test]
        fn segmentation_conserves_and_is_idempotent(gaps in prop::collection::vec(-500i64..12_000, 0..40), delta in 1i64..10_000) {
            let utts = with_gaps(&gaps);
            let convs = segment_conversations(&utts, delta).unwrap();
            let flat: Vec<_> = convs.iter().flat_map(|c| c.utterances.clone()).collect();
            prop_assert_eq!(&flat, &utts);
            for c in &convs {
                for w in c.utterances.windows(2) {
                    prop_assert!(w[1].start_ms - w[0].end_ms < delta);
                }
            }
            let again = segment_conversations(&flat, delta).unwrap();
            prop_assert_eq!(again, convs);
        }

        #[test]
        fn joined_translations_are_confident(
            confs in prop::collection::vec(0.0f64..1.0, 5..20),
            min_conf in 0.0f64..1.0,
        ) {
            let n = confs.len();
            let en: Vec<_> = (0..n).map(|i| utt(i as i64 * 1000, i as i64 * 1000 + 500, &format!("e{i}"))).collect();
            let fr: Vec<_> = en.iter().map(|u| TimedUtterance { lang: Lang::Fr, text: u.text.replace('e', "f"), ..u.clone() }).collect();
            let vocab = Vocabulary::build(en.iter().chain(&fr).map(|u| u.text.as_str()), 200).unwrap();
            let a = Conversation { movie_id: "m1".into(), utterances: en };
            let b = Conversation { movie_id: "m1".into(), utterances: fr };
            let links: Vec<_> = confs.iter().enumerate().map(|(i, &c)| link(i, i, c)).collect();
            let pairs = join_alignments(&a, &b, &links, &vocab, &WindowConfig::default(), min_conf).unwrap();
            for p in &pairs {
                prop_assert_eq!(p.base.len(), 5);
                prop_assert!(!p.translated_slots().is_empty());
                for t in p.translated.iter().flatten() {
                    prop_assert!(t.link.confidence >= min_conf);
                }
            }
        }
    }
}
