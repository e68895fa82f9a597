use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;
/// First id assigned to an ordinary word.
pub const FIRST_WORD: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[MASK]", "[BOS]", "[EOS]"];
pub const MASK_TOKEN: &str = "[MASK]";

/// Word-level vocabulary with fixed special-token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from the full token list, specials first. Used when loading
    /// checkpoints.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::CorruptCheckpoint(
                "vocabulary does not start with the special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::CorruptCheckpoint(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { words: tokens, index })
    }

    /// Keeps the `max_size` most frequent words of `texts` (ties broken
    /// alphabetically). Every word in `forced` is kept regardless of
    /// frequency, even if that exceeds `max_size`.
    pub fn build<I, S>(texts: I, max_size: usize, forced: &BTreeSet<String>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut any = false;
        for text in texts {
            for token in tokenize(text.as_ref()) {
                any = true;
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::Argument("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: BTreeSet<String> = forced
            .iter()
            .filter(|w| !SPECIAL_TOKENS.contains(&w.as_str()))
            .cloned()
            .collect();
        let mut by_freq: Vec<(&String, &usize)> = counts.iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (word, _) in by_freq {
            if kept.len() >= max_size {
                break;
            }
            kept.insert(word.clone());
        }
        let mut ordered: Vec<String> = kept.into_iter().collect();
        ordered.sort_by(|a, b| {
            let fa = counts.get(a).copied().unwrap_or(0);
            let fb = counts.get(b).copied().unwrap_or(0);
            fb.cmp(&fa).then_with(|| a.cmp(b))
        });
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ordered)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, mapping out-of-vocabulary words to `[UNK]`.
    pub fn encode_token(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn is_special(id: u32) -> bool {
        id < FIRST_WORD
    }

    /// `[BOS] w1 … wn [EOS]`.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend(words.iter().map(|w| self.encode_token(w.as_ref())));
        ids.push(EOS);
        ids
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        self.encode_words(&tokenize(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_then_words() {
        let v = Vocabulary::build(["she runs", "he runs"], 10, &BTreeSet::new()).unwrap();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as u32));
        }
        for w in ["she", "he", "runs"] {
            assert!(v.contains(w), "{w}");
        }
        assert_eq!(v.len(), 8);
        // most frequent word gets the first word id
        assert_eq!(v.id("runs"), Some(FIRST_WORD));
    }

    #[test]
    fn out_of_vocabulary_maps_to_unk() {
        let v = Vocabulary::build(["she runs"], 10, &BTreeSet::new()).unwrap();
        assert_eq!(v.encode_token("zebra"), UNK);
        assert_eq!(v.encode_text("she flies"), vec![BOS, v.id("she").unwrap(), UNK, EOS]);
    }

    #[test]
    fn forced_words_survive_truncation() {
        let mut texts: Vec<String> = (0..50).map(|_| "common words dominate".to_string()).collect();
        texts.push("wife".into());
        let forced: BTreeSet<String> = ["wife".to_string(), "husband".to_string()].into();
        let v = Vocabulary::build(&texts, 3, &forced).unwrap();
        assert!(v.contains("wife"));
        assert!(v.contains("husband"));
        assert_eq!(v.len(), SPECIAL_TOKENS.len() + 3);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocabulary::build(Vec::<String>::new(), 10, &BTreeSet::new()).is_err());
        assert!(Vocabulary::build(["", " ... "], 10, &BTreeSet::new()).is_err());
    }
}
