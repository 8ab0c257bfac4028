//! A small synthetic English/French subtitle corpus with a deterministic
//! word-for-word translation map. Each conversation sticks to one topic and
//! walks through its words in a fixed cycle, so masked utterances are
//! predictable from their neighbours.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::corpus::{
    join_movie_alignments, segment_conversations, window_contexts, AlignedContextPair, AlignmentLink, Context, Conversation,
    TimedUtterance, WindowConfig, DEFAULT_DELTA_T_MS, DEFAULT_MIN_CONF,
};
use crate::error::Result;
use crate::lang::Lang;
use crate::rng::item_stream;
use crate::vocab::Vocabulary;

const TOPICS: [[(&str, &str); 6]; 8] = [
    [("bread", "pain"), ("cheese", "fromage"), ("apple", "pomme"), ("soup", "soupe"), ("wine", "vin"), ("cake", "gateau")],
    [("rain", "pluie"), ("snow", "neige"), ("wind", "vent"), ("cloud", "nuage"), ("storm", "orage"), ("sun", "soleil")],
    [("subway", "metro"), ("car", "voiture"), ("bus", "autobus"), ("plane", "avion"), ("boat", "bateau"), ("bike", "velo")],
    [("dog", "chien"), ("cat", "chat"), ("horse", "cheval"), ("bird", "oiseau"), ("fish", "poisson"), ("mouse", "souris")],
    [("song", "chanson"), ("organ", "orgue"), ("drum", "tambour"), ("guitar", "guitare"), ("voice", "voix"), ("dance", "danse")],
    [("doctor", "medecin"), ("fever", "fievre"), ("pill", "pilule"), ("nurse", "infirmiere"), ("ache", "douleur"), ("bed", "lit")],
    [("money", "argent"), ("bank", "banque"), ("price", "prix"), ("coin", "piece"), ("debt", "dette"), ("shop", "magasin")],
    [("book", "livre"), ("sheet", "feuille"), ("poem", "poeme"), ("letter", "lettre"), ("pen", "stylo"), ("story", "histoire")],
];

const SUBJECTS: [(&str, &str); 4] = [("i", "je"), ("you", "tu"), ("we", "nous"), ("they", "ils")];
const VERBS: [(&str, &str); 4] = [("like", "aime"), ("see", "vois"), ("want", "veux"), ("need", "faut")];

/// French counterpart of an English word produced by the generator.
pub fn translate_word(en: &str) -> Option<&'static str> {
    TOPICS
        .iter()
        .flatten()
        .chain(SUBJECTS.iter())
        .chain(VERBS.iter())
        .find(|(e, _)| *e == en)
        .map(|(_, f)| *f)
}

pub fn translate_text(en: &str) -> String {
    en.split_whitespace().map(|w| translate_word(w).unwrap_or(w)).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub movies: usize,
    pub conversations_per_movie: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    /// Share of alignment links at or above the default confidence cut.
    pub confident_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { movies: 8, conversations_per_movie: 4, min_utterances: 10, max_utterances: 15, confident_share: 0.7, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMovie {
    pub movie_id: String,
    pub en: Vec<TimedUtterance>,
    pub fr: Vec<TimedUtterance>,
    /// Movie-level indices into `en` (source) and `fr` (target).
    pub links: Vec<AlignmentLink>,
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<SyntheticMovie> {
    (0..cfg.movies).map(|m| generate_movie(cfg, m)).collect()
}

fn generate_movie(cfg: &SyntheticConfig, m: usize) -> SyntheticMovie {
    let mut rng = item_stream(cfg.seed, "synthetic.movie", m as u64);
    let movie_id = format!("movie{m:03}");
    let (mut en, mut fr, mut links) = (Vec::new(), Vec::new(), Vec::new());
    let mut clock: i64 = rng.random_range(0..5_000);
    // Conversations of one movie cycle through a shuffled topic order, so
    // neighbouring conversations never share a topic.
    let mut topics: Vec<usize> = (0..TOPICS.len()).collect();
    topics.shuffle(&mut rng);
    for c in 0..cfg.conversations_per_movie {
        let topic = &TOPICS[topics[c % TOPICS.len()]];
        let offset = rng.random_range(0..6);
        let n = rng.random_range(cfg.min_utterances..=cfg.max_utterances);
        for j in 0..n {
            let (s_en, s_fr) = *SUBJECTS.choose(&mut rng).expect("subjects");
            let (v_en, v_fr) = *VERBS.choose(&mut rng).expect("verbs");
            let (a_en, a_fr) = topic[(offset + j) % 6];
            let (b_en, b_fr) = topic[(offset + j + 1) % 6];
            let dur = rng.random_range(1_000..2_500);
            let (start, end) = (clock, clock + dur);
            let make = |text: String, lang| TimedUtterance {
                text,
                start_ms: start,
                end_ms: end,
                movie_id: movie_id.clone(),
                lang,
                speaker: None,
            };
            let idx = en.len();
            en.push(make(format!("{s_en} {v_en} {a_en} {b_en}"), Lang::En));
            fr.push(make(format!("{s_fr} {v_fr} {a_fr} {b_fr}"), Lang::Fr));
            let confidence = if rng.random_bool(cfg.confident_share) {
                rng.random_range(0.9..=1.0)
            } else {
                rng.random_range(0.3..0.9)
            };
            links.push(AlignmentLink { src_index: idx, tgt_index: idx, confidence });
            clock = end + rng.random_range(200..3_000);
        }
        clock += rng.random_range(7_000..12_000);
    }
    SyntheticMovie { movie_id, en, fr, links }
}

/// All utterance texts, for vocabulary building.
pub fn corpus_texts(movies: &[SyntheticMovie]) -> impl Iterator<Item = &str> {
    movies.iter().flat_map(|m| m.en.iter().chain(&m.fr)).map(|u| u.text.as_str())
}

#[derive(Clone, Debug, Default)]
pub struct SyntheticDataset {
    pub vocab: Option<Vocabulary>,
    /// Monolingual contexts per language.
    pub contexts: BTreeMap<Lang, Vec<Context>>,
    /// English contexts with their French alignments.
    pub pairs: Vec<AlignedContextPair>,
}

/// Run the corpus pipeline (segmentation, windowing, alignment join) on
/// generated movies.
pub fn build_dataset(movies: &[SyntheticMovie], vocab: &Vocabulary, window: &WindowConfig) -> Result<SyntheticDataset> {
    let mut out = SyntheticDataset { vocab: Some(vocab.clone()), ..Default::default() };
    for m in movies {
        let en = segment_conversations(&m.en, DEFAULT_DELTA_T_MS)?;
        let fr = segment_conversations(&m.fr, DEFAULT_DELTA_T_MS)?;
        for conv in en.iter().chain(&fr) {
            let lang = conv.lang().expect("generated conversations are non-empty");
            out.contexts.entry(lang).or_default().extend(window_contexts(conv, vocab, window)?);
        }
        let whole_fr = Conversation { movie_id: m.movie_id.clone(), utterances: m.fr.clone() };
        out.pairs.extend(join_movie_alignments(&en, &whole_fr, &m.links, vocab, window, DEFAULT_MIN_CONF)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenId;

    #[test]
    fn translation_is_word_for_word() {
        assert_eq!(translate_text("i like bread cheese"), "je aime pain fromage");
        let french: std::collections::BTreeSet<_> = TOPICS.iter().flatten().map(|(_, f)| *f).collect();
        assert_eq!(french.len(), 48);
        let english: std::collections::BTreeSet<_> =
            TOPICS.iter().flatten().chain(&SUBJECTS).chain(&VERBS).map(|(e, _)| *e).collect();
        assert!(TOPICS.iter().flatten().chain(&SUBJECTS).chain(&VERBS).all(|(_, f)| !english.contains(f)));
    }

    #[test]
    fn conversations_segment_as_generated() {
        let cfg = SyntheticConfig { movies: 2, ..Default::default() };
        let movies = generate(&cfg);
        assert_eq!(movies, generate(&cfg));
        for m in &movies {
            let convs = segment_conversations(&m.en, DEFAULT_DELTA_T_MS).unwrap();
            assert_eq!(convs.len(), cfg.conversations_per_movie);
            assert_eq!(m.en.len(), m.fr.len());
            for (e, f) in m.en.iter().zip(&m.fr) {
                assert_eq!(translate_text(&e.text), f.text);
            }
        }
    }

    #[test]
    fn dataset_has_aligned_pairs() {
        let movies = generate(&SyntheticConfig::default());
        let vocab = Vocabulary::build(corpus_texts(&movies), 1000).unwrap();
        let ds = build_dataset(&movies, &vocab, &WindowConfig::default()).unwrap();
        assert!(!ds.pairs.is_empty());
        assert_eq!(ds.contexts[&Lang::En].len(), ds.contexts[&Lang::Fr].len());
        for p in &ds.pairs {
            for t in p.translated.iter().flatten() {
                assert!(t.link.confidence >= DEFAULT_MIN_CONF);
                assert!(!t.utterance.tokens.contains(&TokenId::UNK));
            }
        }
    }
}
