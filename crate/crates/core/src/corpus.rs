//! Mining single-gender sentences out of an unannotated corpus.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Gender, GenderLexicon};
use crate::text::tokenize;

pub const DEFAULT_MAX_TOKENS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: u64,
    pub text: String,
    /// Lowercased word tokens used for matching.
    pub tokens: Vec<String>,
}

impl Sentence {
    /// Returns `None` when `text` has no word tokens.
    pub fn new(id: u64, text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            None
        } else {
            Some(Self { id, text, tokens })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Female,
    Male,
    Excluded,
}

impl Classification {
    pub fn gender(self) -> Option<Gender> {
        match self {
            Classification::Female => Some(Gender::Female),
            Classification::Male => Some(Gender::Male),
            Classification::Excluded => None,
        }
    }
}

/// Female iff some token is a female word and none is a male word; male
/// symmetrically; everything else is excluded.
pub fn classify_tokens<S: AsRef<str>>(tokens: &[S], lex: &GenderLexicon) -> Classification {
    let mut female = false;
    let mut male = false;
    for token in tokens {
        match lex.gender_of(token.as_ref()) {
            Some(Gender::Female) => female = true,
            Some(Gender::Male) => male = true,
            None => {}
        }
    }
    match (female, male) {
        (true, false) => Classification::Female,
        (false, true) => Classification::Male,
        _ => Classification::Excluded,
    }
}

pub fn classify_sentence(sentence: &Sentence, lex: &GenderLexicon) -> Classification {
    classify_tokens(&sentence.tokens, lex)
}

/// Equal-size female and male sentence sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenderedCorpus {
    pub female: Vec<Sentence>,
    pub male: Vec<Sentence>,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusRecord {
    id: u64,
    gender: Gender,
    text: String,
}

impl GenderedCorpus {
    pub fn side(&self, gender: Gender) -> &[Sentence] {
        match gender {
            Gender::Female => &self.female,
            Gender::Male => &self.male,
        }
    }

    pub fn get(&self, gender: Gender, id: u64) -> Option<&Sentence> {
        let side = self.side(gender);
        side.binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &side[i])
    }

    pub fn all_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.female.iter().chain(self.male.iter())
    }

    /// Writes one `{id, gender, text}` JSON record per line, female first.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (gender, side) in [(Gender::Female, &self.female), (Gender::Male, &self.male)] {
            for s in side.iter() {
                let record = CorpusRecord {
                    id: s.id,
                    gender,
                    text: s.text.clone(),
                };
                serde_json::to_writer(&mut out, &record)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R, seed: u64) -> Result<Self> {
        let mut female = Vec::new();
        let mut male = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if !seen.insert(record.id) {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("duplicate sentence id {}", record.id),
                });
            }
            let sentence = Sentence::new(record.id, record.text).ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "sentence has no tokens".into(),
            })?;
            match record.gender {
                Gender::Female => female.push(sentence),
                Gender::Male => male.push(sentence),
            }
        }
        if female.len() != male.len() {
            return Err(Error::Config(format!(
                "unbalanced corpus: {} female vs {} male sentences",
                female.len(),
                male.len()
            )));
        }
        female.sort_by_key(|s| s.id);
        male.sort_by_key(|s| s.id);
        Ok(Self {
            n: female.len(),
            female,
            male,
            seed,
        })
    }
}

/// Counters collected while scanning a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    pub lines: usize,
    pub empty: usize,
    pub too_long: usize,
    pub female: usize,
    pub male: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct MinedCorpus {
    /// Training sets of `n` sentences per side.
    pub train: GenderedCorpus,
    /// Held-out sentences, disjoint from `train`.
    pub dev: GenderedCorpus,
    pub stats: MiningStats,
}

#[derive(Debug, Clone)]
pub struct MineOptions {
    pub n: usize,
    pub dev_n: usize,
    pub seed: u64,
    pub max_tokens: usize,
}

impl MineOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            dev_n: 0,
            seed,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Mines `n` female-only and `n` male-only sentences from one-per-line text.
pub fn mine_corpus<I, S>(lines: I, lex: &GenderLexicon, n: usize, seed: u64) -> Result<GenderedCorpus>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    Ok(mine_with_options(lines, lex, &MineOptions::new(n, seed))?.train)
}

pub fn mine_with_options<I, S>(lines: I, lex: &GenderLexicon, opts: &MineOptions) -> Result<MinedCorpus>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut stats = MiningStats::default();
    let mut female = Vec::new();
    let mut male = Vec::new();
    for (idx, line) in lines.into_iter().enumerate() {
        stats.lines += 1;
        let Some(sentence) = Sentence::new(idx as u64, line.as_ref().trim()) else {
            stats.empty += 1;
            continue;
        };
        if sentence.tokens.len() > opts.max_tokens {
            stats.too_long += 1;
            continue;
        }
        match classify_sentence(&sentence, lex) {
            Classification::Female => female.push(sentence),
            Classification::Male => male.push(sentence),
            Classification::Excluded => stats.excluded += 1,
        }
    }
    stats.female = female.len();
    stats.male = male.len();

    let wanted = opts.n + opts.dev_n;
    for (side, pool) in [("female", &female), ("male", &male)] {
        if pool.len() < wanted {
            return Err(Error::InsufficientSentences {
                side,
                available: pool.len(),
                requested: wanted,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (female_train, female_dev) = downsample(female, opts.n, opts.dev_n, &mut rng);
    let (male_train, male_dev) = downsample(male, opts.n, opts.dev_n, &mut rng);
    Ok(MinedCorpus {
        train: GenderedCorpus {
            female: female_train,
            male: male_train,
            n: opts.n,
            seed: opts.seed,
        },
        dev: GenderedCorpus {
            female: female_dev,
            male: male_dev,
            n: opts.dev_n,
            seed: opts.seed,
        },
        stats,
    })
}

/// Uniform draw without replacement of `n + dev_n` sentences, split into a
/// training part and a dev part. Both parts come back sorted by id.
fn downsample(
    pool: Vec<Sentence>,
    n: usize,
    dev_n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Sentence>, Vec<Sentence>) {
    let picked = index::sample(rng, pool.len(), n + dev_n).into_vec();
    let mut slots: Vec<Option<Sentence>> = pool.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| {
        let mut out: Vec<Sentence> = ids.iter().map(|&i| slots[i].take().expect("index sampled once")).collect();
        out.sort_by_key(|s| s.id);
        out
    };
    let train = take(&picked[..n]);
    let dev = take(&picked[n..]);
    (train, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::sha256_hex;

    fn lex() -> GenderLexicon {
        GenderLexicon::default_lists()
    }

    fn toy_stream() -> Vec<&'static str> {
        vec![
            "she went home",
            "the weather is nice",
            "her sister called",
            "he ran fast",
            "my mother is a writer",
            "he told his wife a story",
            "the girl sang",
            "his brother left",
            "a woman smiled",
            "the boy laughed",
        ]
    }

    #[test]
    fn classification_rules() {
        let lex = lex();
        let s = |t: &str| Sentence::new(0, t).unwrap();
        assert_eq!(classify_sentence(&s("she went home"), &lex), Classification::Female);
        assert_eq!(classify_sentence(&s("he told his wife a story"), &lex), Classification::Excluded);
        assert_eq!(classify_sentence(&s("the weather is nice"), &lex), Classification::Excluded);
        assert_eq!(classify_sentence(&s("He left."), &lex), Classification::Male);
        // whole-token matching only
        assert_eq!(classify_sentence(&s("the hero shepherd"), &lex), Classification::Excluded);
    }

    #[test]
    fn exact_downsample() {
        let corpus = mine_corpus(toy_stream(), &lex(), 3, 7).unwrap();
        assert_eq!(corpus.female.len(), 3);
        assert_eq!(corpus.male.len(), 3);
        assert_eq!(corpus.n, 3);
    }

    #[test]
    fn insufficient_side_reports_counts() {
        let err = mine_corpus(toy_stream(), &lex(), 4, 7).unwrap_err();
        assert_eq!(err.to_string(), "male side has 3 < 4 sentences");
    }

    #[test]
    fn mined_sentences_respect_the_lexicon() {
        let lex = lex();
        let corpus = mine_corpus(toy_stream(), &lex, 3, 1).unwrap();
        for s in &corpus.female {
            assert!(s.tokens.iter().any(|t| lex.female_words().contains(t)));
            assert!(!s.tokens.iter().any(|t| lex.male_words().contains(t)));
        }
        for s in &corpus.male {
            assert!(s.tokens.iter().any(|t| lex.male_words().contains(t)));
            assert!(!s.tokens.iter().any(|t| lex.female_words().contains(t)));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let encode = |c: &GenderedCorpus| {
            let mut buf = Vec::new();
            c.write_jsonl(&mut buf).unwrap();
            sha256_hex(&buf)
        };
        let a = mine_corpus(toy_stream(), &lex(), 3, 42).unwrap();
        let b = mine_corpus(toy_stream(), &lex(), 3, 42).unwrap();
        assert_eq!(encode(&a), encode(&b));
    }

    #[test]
    fn long_sentences_are_skipped_and_counted() {
        let long = format!("she {}", "word ".repeat(200));
        let lines = vec![long.as_str(), "she sang", "he sang"];
        let mined = mine_with_options(lines, &lex(), &MineOptions::new(1, 0)).unwrap();
        assert_eq!(mined.stats.too_long, 1);
        assert_eq!(mined.train.female[0].text, "she sang");
    }

    #[test]
    fn dev_split_is_disjoint() {
        let opts = MineOptions {
            n: 2,
            dev_n: 1,
            seed: 3,
            max_tokens: DEFAULT_MAX_TOKENS,
        };
        let mined = mine_with_options(toy_stream(), &lex(), &opts).unwrap();
        assert_eq!(mined.dev.female.len(), 1);
        for g in [Gender::Female, Gender::Male] {
            let dev_id = mined.dev.side(g)[0].id;
            assert!(mined.train.get(g, dev_id).is_none());
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let corpus = mine_corpus(toy_stream(), &lex(), 3, 9).unwrap();
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let back = GenderedCorpus::read_jsonl(buf.as_slice(), 9).unwrap();
        assert_eq!(back, corpus);
    }
}
