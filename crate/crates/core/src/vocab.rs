//! Shared multilingual word-level vocabulary.
//!
//! One table covers every language. Ids 0..5 are the special tokens, followed
//! (in freshly built vocabularies) by one identifier token per language, then
//! the regular tokens ranked by frequency.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::Lang;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const UNK: TokenId = TokenId(1);
    pub const MASK: TokenId = TokenId(2);
    pub const BOS: TokenId = TokenId(3);
    pub const EOS: TokenId = TokenId(4);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[MASK]", "[BOS]", "[EOS]"];

fn lang_token(lang: Lang) -> String {
    format!("<{}>", lang.code())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    lang_ids: BTreeMap<Lang, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    specials: BTreeMap<String, u32>,
    lang_ids: BTreeMap<Lang, u32>,
    tokens: Vec<String>,
}

/// Lowercased whitespace tokenization.
pub fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.to_lowercase())
}

impl Vocabulary {
    /// Build a vocabulary from a corpus. Regular tokens are ranked by
    /// descending frequency, ties broken lexicographically, and the table is
    /// capped at `max_size` entries in total.
    pub fn build<I, S>(corpus: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let reserved = SPECIAL_TOKENS.len() + Lang::ALL.len();
        if max_size <= reserved {
            return Err(Error::Vocabulary(format!(
                "max_size {max_size} must exceed the {reserved} reserved tokens"
            )));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in corpus {
            for w in split_words(line.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIAL_TOKENS.contains(&w.as_str()))
            .filter(|(w, _)| !Lang::ALL.iter().any(|&l| lang_token(l) == *w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - reserved);

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut lang_ids = BTreeMap::new();
        for lang in Lang::ALL {
            lang_ids.insert(lang, TokenId(tokens.len() as u32));
            tokens.push(lang_token(lang));
        }
        tokens.extend(ranked.into_iter().map(|(w, _)| w));
        Self::from_parts(tokens, lang_ids)
    }

    /// Assemble a vocabulary from an id-ordered token list and explicit
    /// language-token ids.
    pub fn from_parts(tokens: Vec<String>, lang_ids: BTreeMap<Lang, TokenId>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Vocabulary("missing special tokens".into()));
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::Vocabulary(format!("id {i} must be {s}, found {}", tokens[i])));
            }
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        for (&lang, &id) in &lang_ids {
            if id.index() < SPECIAL_TOKENS.len() || id.index() >= tokens.len() {
                return Err(Error::Vocabulary(format!("language id {id} for {lang} is out of range")));
            }
            if tokens[id.index()] != lang_token(lang) {
                return Err(Error::Vocabulary(format!(
                    "id {id} should hold {} but holds {:?}",
                    lang_token(lang),
                    tokens[id.index()]
                )));
            }
        }
        Ok(Self { id_to_token: tokens, token_to_id, lang_ids })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id.index()).map(String::as_str)
    }

    /// Regular (non-special, non-language) tokens in id order.
    pub fn regular_tokens(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.id_to_token
            .iter()
            .enumerate()
            .skip(SPECIAL_TOKENS.len())
            .map(|(i, t)| (TokenId(i as u32), t.as_str()))
            .filter(move |(id, _)| !self.lang_ids.values().any(|l| l == id))
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        split_words(text).map(|w| self.id(&w).unwrap_or(TokenId::UNK)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[1]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Identifier token announcing the target language to the decoder.
    pub fn language_token(&self, lang: Lang) -> Result<TokenId> {
        self.lang_ids
            .get(&lang)
            .copied()
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }

    /// Same as [`Self::language_token`] for a language given by code.
    pub fn language_token_for(&self, code: &str) -> Result<TokenId> {
        let lang: Lang = code.parse()?;
        self.language_token(lang)
    }

    pub fn lang_ids(&self) -> &BTreeMap<Lang, TokenId> {
        &self.lang_ids
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let file = VocabFile {
            specials: SPECIAL_TOKENS.iter().enumerate().map(|(i, s)| (s.to_string(), i as u32)).collect(),
            lang_ids: self.lang_ids.iter().map(|(&l, &id)| (l, id.0)).collect(),
            tokens: self.id_to_token.clone(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let file: VocabFile = serde_json::from_reader(r)?;
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if file.specials.get(*s) != Some(&(i as u32)) {
                return Err(Error::Vocabulary(format!("special {s} must have id {i}")));
            }
        }
        let lang_ids = file.lang_ids.into_iter().map(|(l, id)| (l, TokenId(id))).collect();
        Self::from_parts(file.tokens, lang_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn regular(v: &Vocabulary) -> Vec<&str> {
        v.regular_tokens().map(|(_, t)| t).collect()
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocabulary::build(["a b a"], 100).unwrap();
        assert_eq!(regular(&v), ["a", "b"]);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());

        let v = Vocabulary::build(["y x"], 100).unwrap();
        assert_eq!(regular(&v), ["x", "y"]);
    }

    #[test]
    fn empty_corpus_holds_only_reserved_tokens() {
        let v = Vocabulary::build(Vec::<String>::new(), 100).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v.id("[MASK]"), Some(TokenId::MASK));
        assert_eq!(v.language_token(Lang::De).unwrap(), TokenId(5));
    }

    #[test]
    fn max_size_caps_the_table() {
        let v = Vocabulary::build(["a a a b b c"], 12).unwrap();
        assert_eq!(regular(&v), ["a", "b"]);
        assert!(Vocabulary::build(["a"], 10).is_err());
    }

    #[test]
    fn encode_maps_unknown_words() {
        let v = Vocabulary::build(["a b"], 100).unwrap();
        assert_eq!(v.encode("a b"), vec![v.id("a").unwrap(), v.id("b").unwrap()]);
        assert_eq!(v.encode("zzz"), vec![TokenId::UNK]);
        assert_eq!(v.encode("A  B"), v.encode("a b"));
    }

    /// Vocabulary whose language ids sit where the original multilingual
    /// tokenizer put them (en = 99, es = 98).
    fn pinned_fixture() -> Vocabulary {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        while tokens.len() < 95 {
            tokens.push(format!("w{}", tokens.len()));
        }
        // 95..=99: de, fr, it, es, en
        for l in [Lang::De, Lang::Fr, Lang::It, Lang::Es, Lang::En] {
            tokens.push(lang_token(l));
        }
        let lang_ids = [(Lang::De, 95), (Lang::Fr, 96), (Lang::It, 97), (Lang::Es, 98), (Lang::En, 99)]
            .into_iter()
            .map(|(l, i)| (l, TokenId(i)))
            .collect();
        Vocabulary::from_parts(tokens, lang_ids).unwrap()
    }

    #[test]
    fn pinned_language_ids() {
        let v = pinned_fixture();
        assert_eq!(v.language_token(Lang::En).unwrap(), TokenId(99));
        assert_eq!(v.language_token(Lang::Es).unwrap(), TokenId(98));
        assert!(matches!(v.language_token_for("pt"), Err(Error::UnknownLanguage(_))));

        let mut buf = Vec::new();
        v.write_json(&mut buf).unwrap();
        let back = Vocabulary::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn rejects_inconsistent_parts() {
        let v = Vocabulary::build(["a"], 100).unwrap();
        let mut lang_ids = v.lang_ids().clone();
        lang_ids.insert(Lang::En, TokenId(10));
        assert!(Vocabulary::from_parts(v.id_to_token.clone(), lang_ids).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(
            words in prop::collection::vec("[a-z]{1,6}", 1..20),
            pick in prop::collection::vec(0usize..100, 1..12),
        ) {
            let corpus = words.join(" ");
            let v = Vocabulary::build([corpus.as_str()], 1000).unwrap();
            let sentence = pick.iter().map(|&i| words[i % words.len()].as_str()).collect::<Vec<_>>().join(" ");
            let ids = v.encode(&sentence);
            prop_assert!(ids.iter().all(|id| id.index() < v.len()));
            prop_assert_eq!(v.decode(&ids), sentence);
        }

        #[test]
        fn build_ignores_corpus_order(mut lines in prop::collection::vec("[a-c ]{0,12}", 0..8)) {
            let a = Vocabulary::build(&lines, 20).unwrap();
            lines.reverse();
            let b = Vocabulary::build(&lines, 20).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
