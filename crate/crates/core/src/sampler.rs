//! Bias-controlled training sets: `round(n·r)` male sentences plus
//! `n − round(n·r)` female sentences, each drawn uniformly without
//! replacement.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::GenderedCorpus;
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::lexicon::Gender;

/// The eleven rates `0.0, 0.1, …, 1.0`.
pub fn default_rates() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// A sampled training set tagged with its rate of bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDataset {
    pub r: f64,
    pub seed: u64,
    pub n: usize,
    pub male_ids: Vec<u64>,
    pub female_ids: Vec<u64>,
}

/// `⌊n·r + 0.5⌋`, the number of male sentences in a dataset of size `n`.
pub fn male_count(n: usize, r: f64) -> usize {
    ((n as f64) * r + 0.5).floor() as usize
}

pub fn validate_rate(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!("rate of bias {r} is outside [0, 1]")));
    }
    Ok(())
}

pub fn sample_dataset(corpus: &GenderedCorpus, r: f64, seed: u64) -> Result<BiasDataset> {
    validate_rate(r)?;
    let n = corpus.n;
    let males = male_count(n, r).min(n);
    let females = n - males;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |side: &[crate::corpus::Sentence], k: usize, rng: &mut ChaCha8Rng| {
        let mut ids: Vec<u64> = index::sample(rng, side.len(), k)
            .into_iter()
            .map(|i| side[i].id)
            .collect();
        ids.sort_unstable();
        ids
    };
    let male_ids = pick(&corpus.male, males, &mut rng);
    let female_ids = pick(&corpus.female, females, &mut rng);
    Ok(BiasDataset {
        r,
        seed,
        n,
        male_ids,
        female_ids,
    })
}

/// Seed for the dataset at rate `r`, derived from the sweep seed.
pub fn rate_seed(seed: u64, r: f64) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(&r.to_bits().to_le_bytes());
    let digest = sha256_hex(&bytes);
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

pub fn sample_sweep(corpus: &GenderedCorpus, rates: &[f64], seed: u64) -> Result<Vec<BiasDataset>> {
    if rates.is_empty() {
        return Err(Error::Argument("rate list is empty".into()));
    }
    rates
        .iter()
        .map(|&r| sample_dataset(corpus, r, rate_seed(seed, r)))
        .collect()
}

impl BiasDataset {
    pub fn len(&self) -> usize {
        self.male_ids.len() + self.female_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training text for this dataset: male sentences then female sentences.
    pub fn texts<'a>(&self, corpus: &'a GenderedCorpus) -> Result<Vec<&'a str>> {
        let mut out = Vec::with_capacity(self.len());
        for (gender, ids) in [(Gender::Male, &self.male_ids), (Gender::Female, &self.female_ids)] {
            for &id in ids {
                let s = corpus.get(gender, id).ok_or_else(|| {
                    Error::Config(format!("{gender} sentence {id} is not in the corpus"))
                })?;
                out.push(s.text.as_str());
            }
        }
        Ok(out)
    }

    /// Writes the dataset's sentences, one per line.
    pub fn materialize<W: Write>(&self, corpus: &GenderedCorpus, mut out: W) -> Result<()> {
        for text in self.texts(corpus)? {
            writeln!(out, "{text}").map_err(|e| Error::io("<dataset>", e))?;
        }
        Ok(())
    }
}
