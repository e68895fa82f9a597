//! Sentence pairs for the pairwise measures: alignment, files, and
//! gender-swap construction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{classify_tokens, Classification};
use crate::error::{Error, Result};
use crate::lexicon::{Gender, GenderLexicon};
use crate::text::tokenize;

/// Which gender the `stereo` side of a pair expresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Male,
    Female,
    Unknown,
}

impl Direction {
    pub fn flipped(self) -> Direction {
        match self {
            Direction::Male => Direction::Female,
            Direction::Female => Direction::Male,
            Direction::Unknown => Direction::Unknown,
        }
    }
}

impl From<Gender> for Direction {
    fn from(g: Gender) -> Self {
        match g {
            Gender::Female => Direction::Female,
            Gender::Male => Direction::Male,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Male => "male",
            Direction::Female => "female",
            Direction::Unknown => "unknown",
        })
    }
}

/// One side of a pair with its positions split by the alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSide {
    pub tokens: Vec<String>,
    pub modified: Vec<usize>,
    pub unmodified: Vec<usize>,
}

/// Two sentences aligned token by token. Unmodified positions pair up in
/// order: `stereo.unmodified[i]` and `anti.unmodified[i]` hold the same
/// token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub stereo: PairSide,
    pub anti: PairSide,
    pub direction: Direction,
}

/// Longest common subsequence as matched index pairs. Ties prefer the
/// earliest match, so identical prefixes align position by position.
pub fn lcs_alignment<S: AsRef<str>>(a: &[S], b: &[S]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[idx(i, j)] = if a[i].as_ref() == b[j].as_ref() {
                table[idx(i + 1, j + 1)] + 1
            } else {
                table[idx(i + 1, j)].max(table[idx(i, j + 1)])
            };
        }
    }
    let mut out = Vec::with_capacity(table[0]);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i].as_ref() == b[j].as_ref() && table[idx(i, j)] == table[idx(i + 1, j + 1)] + 1 {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if table[idx(i + 1, j)] >= table[idx(i, j + 1)] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn side(tokens: Vec<String>, unmodified: Vec<usize>) -> PairSide {
    let modified = (0..tokens.len()).filter(|i| unmodified.binary_search(i).is_err()).collect();
    PairSide {
        tokens,
        modified,
        unmodified,
    }
}

impl EvalPair {
    pub fn from_tokens(stereo: Vec<String>, anti: Vec<String>, direction: Direction) -> Result<Self> {
        if stereo.is_empty() || anti.is_empty() {
            return Err(Error::MalformedPair("empty sentence".into()));
        }
        if stereo == anti {
            return Err(Error::MalformedPair(format!("both sides read {:?}", stereo.join(" "))));
        }
        let matches = lcs_alignment(&stereo, &anti);
        let (su, au): (Vec<usize>, Vec<usize>) = matches.into_iter().unzip();
        Ok(Self {
            stereo: side(stereo, su),
            anti: side(anti, au),
            direction,
        })
    }

    pub fn from_texts(stereo: &str, anti: &str, direction: Direction) -> Result<Self> {
        Self::from_tokens(tokenize(stereo), tokenize(anti), direction)
    }

    /// The same pair with the stereo and anti labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            stereo: self.anti.clone(),
            anti: self.stereo.clone(),
            direction: self.direction.flipped(),
        }
    }

    pub fn to_record(&self) -> PairRecord {
        PairRecord {
            stereo_text: self.stereo.tokens.join(" "),
            anti_text: self.anti.tokens.join(" "),
            direction: self.direction,
        }
    }
}

/// Line of an eval-pair file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub stereo_text: String,
    pub anti_text: String,
    pub direction: Direction,
}

pub fn write_pairs<W: Write>(mut out: W, pairs: &[EvalPair]) -> Result<()> {
    for p in pairs {
        let line = serde_json::to_string(&p.to_record()).expect("pair records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io("<pairs>", e))?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<EvalPair>> {
    let mut pairs = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let parse_err = |message: String| Error::Parse { line: idx + 1, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let pair = EvalPair::from_texts(&rec.stereo_text, &rec.anti_text, rec.direction)
            .map_err(|e| parse_err(e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Converts a CrowS-Pairs style CSV (columns `sent_more`, `sent_less`,
/// `stereo_antistereo`, `bias_type`) into pairs, keeping the gender rows.
/// Rows marked `antistereo` have their sides exchanged so that `stereo`
/// always holds the stereotypical sentence. The direction is the gender of
/// the stereo side when the lexicon decides it.
pub fn import_crows_pairs<R: std::io::Read>(input: R, lex: &GenderLexicon) -> Result<(Vec<EvalPair>, usize)> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let (more, less, label, bias) = (col("sent_more")?, col("sent_less")?, col("stereo_antistereo")?, col("bias_type")?);
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: idx + 2,
            message: e.to_string(),
        })?;
        if row.get(bias) != Some("gender") {
            continue;
        }
        let (m, l) = (row.get(more).unwrap_or(""), row.get(less).unwrap_or(""));
        let (stereo, anti) = if row.get(label) == Some("antistereo") { (l, m) } else { (m, l) };
        let stereo_tokens = tokenize(stereo);
        let direction = classify_tokens(&stereo_tokens, lex)
            .gender()
            .map(Direction::from)
            .unwrap_or(Direction::Unknown);
        match EvalPair::from_tokens(stereo_tokens, tokenize(anti), direction) {
            Ok(p) => pairs.push(p),
            Err(_) => skipped += 1,
        }
    }
    Ok((pairs, skipped))
}

/// Gendered-word replacements for building swap pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapMap {
    map: BTreeMap<String, String>,
}

/// Words after which a following "her" is an object, not a possessive.
const NON_NOUN_FOLLOWERS: &[&str] = &[
    "a", "about", "after", "again", "all", "an", "and", "as", "at", "back", "because", "before", "but", "by",
    "down", "for", "from", "here", "home", "if", "in", "into", "is", "last", "not", "of", "off", "on", "once",
    "or", "out", "over", "so", "that", "the", "then", "there", "these", "this", "those", "to", "today", "too",
    "up", "was", "when", "while", "with", "yesterday",
];

const DEFAULT_SWAPS: &[(&str, &str)] = &[
    ("he", "she"),
    ("him", "her"),
    ("his", "her"),
    ("man", "woman"),
    ("male", "female"),
    ("husband", "wife"),
    ("father", "mother"),
    ("boy", "girl"),
    ("brother", "sister"),
    ("son", "daughter"),
    ("boyfriend", "girlfriend"),
];

impl Default for SwapMap {
    fn default() -> Self {
        Self::from_pairs(DEFAULT_SWAPS.iter().copied())
    }
}

impl SwapMap {
    /// Builds a map from (male, female) pairs. When a word appears in
    /// several pairs (female "her" pairs with both "him" and "his") the
    /// first pairing wins and [`SwapMap::swap_at`] disambiguates "her".
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut map = BTreeMap::new();
        for (m, f) in pairs {
            map.entry(m.to_string()).or_insert_with(|| f.to_string());
            map.entry(f.to_string()).or_insert_with(|| m.to_string());
        }
        Self { map }
    }

    /// Replacement for `tokens[i]`, if it is swappable. "her" becomes
    /// "his" before a likely noun and "him" otherwise.
    pub fn swap_at<S: AsRef<str>>(&self, tokens: &[S], i: usize) -> Option<String> {
        let word = tokens[i].as_ref();
        if word == "her" && self.map.contains_key("his") && self.map.contains_key("him") {
            let possessive = tokens
                .get(i + 1)
                .map(|next| !NON_NOUN_FOLLOWERS.contains(&next.as_ref()))
                .unwrap_or(false);
            return Some(if possessive { "his" } else { "him" }.to_string());
        }
        self.map.get(word).cloned()
    }
}

/// Result of [`generate_swap_pairs`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SwapOutcome {
    pub pairs: Vec<EvalPair>,
    /// Sentences without exactly one gender, or with a gendered word the
    /// map cannot replace.
    pub skipped: usize,
}

/// Builds (male variant, female variant) pairs from single-gender
/// sentences by replacing every gendered word. A sentence is kept only if
/// both variants classify as single-gender, with opposite genders.
pub fn generate_swap_pairs<S: AsRef<str>>(sentences: &[S], lex: &GenderLexicon, swaps: &SwapMap) -> SwapOutcome {
    let mut out = SwapOutcome::default();
    for s in sentences {
        match swap_sentence(&tokenize(s.as_ref()), lex, swaps) {
            Some(pair) => out.pairs.push(pair),
            None => out.skipped += 1,
        }
    }
    out
}

fn swap_sentence(tokens: &[String], lex: &GenderLexicon, swaps: &SwapMap) -> Option<EvalPair> {
    let gender = classify_tokens(tokens, lex).gender()?;
    let mut swapped = tokens.to_vec();
    let mut modified = Vec::new();
    for i in 0..tokens.len() {
        if lex.gender_of(&tokens[i]).is_some() {
            swapped[i] = swaps.swap_at(tokens, i)?;
            modified.push(i);
        }
    }
    let expected = match gender {
        Gender::Female => Classification::Male,
        Gender::Male => Classification::Female,
    };
    if classify_tokens(&swapped, lex) != expected {
        return None;
    }
    let unmodified: Vec<usize> = (0..tokens.len()).filter(|i| modified.binary_search(i).is_err()).collect();
    let (male, female) = match gender {
        Gender::Male => (tokens.to_vec(), swapped),
        Gender::Female => (swapped, tokens.to_vec()),
    };
    let mk = |t: Vec<String>| PairSide {
        tokens: t,
        modified: modified.clone(),
        unmodified: unmodified.clone(),
    };
    Some(EvalPair {
        stereo: mk(male),
        anti: mk(female),
        direction: Direction::Male,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn lcs_substitution_and_insertion() {
        assert_eq!(lcs_alignment(&toks("he is a doctor"), &toks("she is a doctor")), vec![(1, 1), (2, 2), (3, 3)]);
        let p = EvalPair::from_texts("the poor man ran", "the man ran fast", Direction::Unknown).unwrap();
        assert_eq!(p.stereo.unmodified, vec![0, 2, 3]);
        assert_eq!(p.stereo.modified, vec![1]);
        assert_eq!(p.anti.unmodified, vec![0, 1, 2]);
        assert_eq!(p.anti.modified, vec![3]);
    }

    #[test]
    fn identical_sides_are_malformed() {
        assert!(matches!(
            EvalPair::from_texts("he ran", "He ran!", Direction::Male),
            Err(Error::MalformedPair(_))
        ));
    }

    #[test]
    fn swap_simple_sentence() {
        let lex = GenderLexicon::default_lists();
        let out = generate_swap_pairs(&["He is a doctor.", "the dog barked"], &lex, &SwapMap::default());
        assert_eq!(out.skipped, 1);
        let p = &out.pairs[0];
        assert_eq!(p.stereo.tokens, toks("he is a doctor"));
        assert_eq!(p.anti.tokens, toks("she is a doctor"));
        assert_eq!(p.stereo.modified, vec![0]);
        assert_eq!(p.direction, Direction::Male);
    }

    #[test]
    fn female_sentence_becomes_the_anti_side() {
        let lex = GenderLexicon::default_lists();
        let out = generate_swap_pairs(&["she called her mother today", "the cook thanked her for the map"], &lex, &SwapMap::default());
        assert_eq!(out.pairs[0].stereo.tokens, toks("he called his father today"));
        assert_eq!(out.pairs[0].anti.tokens, toks("she called her mother today"));
        assert_eq!(out.pairs[1].stereo.tokens, toks("the cook thanked him for the map"));
        assert_eq!(out.pairs[0].stereo.modified, vec![0, 2, 3]);
    }

    #[test]
    fn mixed_sentence_is_skipped() {
        let lex = GenderLexicon::default_lists();
        let out = generate_swap_pairs(&["his sister called him"], &lex, &SwapMap::default());
        assert_eq!(out.skipped, 1);
        assert!(out.pairs.is_empty());
    }

    #[test]
    fn unmappable_gender_word_is_skipped() {
        let lex = GenderLexicon::new(["she", "queen"], ["he", "king"]).unwrap();
        let out = generate_swap_pairs(&["she is a queen"], &lex, &SwapMap::default());
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn pair_file_round_trip_keeps_alignment() {
        let lex = GenderLexicon::default_lists();
        let out = generate_swap_pairs(
            &["she is a poet", "his son fixed the old lamp", "the female artist read the map"],
            &lex,
            &SwapMap::default(),
        );
        let mut buf = Vec::new();
        write_pairs(&mut buf, &out.pairs).unwrap();
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), out.pairs);
    }

    #[test]
    fn swapped_pair_exchanges_sides() {
        let p = EvalPair::from_texts("he ran", "she ran", Direction::Male).unwrap();
        let s = p.swapped();
        assert_eq!(s.stereo, p.anti);
        assert_eq!(s.direction, Direction::Female);
        assert_eq!(s.swapped(), p);
    }

    #[test]
    fn crows_pairs_import() {
        let csv = "\
,sent_more,sent_less,stereo_antistereo,bias_type
0,He couldn't cook.,She couldn't cook.,antistereo,gender
1,The poor are lazy.,The rich are lazy.,stereo,socioeconomic
2,She cried a lot.,He cried a lot.,stereo,gender
3,Same text.,Same text.,stereo,gender
";
        let lex = GenderLexicon::default_lists();
        let (pairs, skipped) = import_crows_pairs(csv.as_bytes(), &lex).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].stereo.tokens[0], "she");
        assert_eq!(pairs[0].direction, Direction::Female);
        assert_eq!(pairs[1].direction, Direction::Female);
    }
}
