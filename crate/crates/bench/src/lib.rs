//! Shared fixtures for the benchmarks under `benches/`.

use biasmeta::experiment::build_vocabulary;
use biasmeta::probes::default_occupations;
use biasmeta::synth::{generate, SynthMix};
use biasmeta::{EvalPair, GenderLexicon, MaskedLm, ModelConfig};

/// A synthetic corpus of `lines` sentences.
pub fn corpus(lines: usize) -> Vec<String> {
    let occs = default_occupations();
    let refs: Vec<&str> = occs.iter().map(String::as_str).collect();
    generate(SynthMix::for_total(lines), &refs, 1)
}

/// An untrained model with the default architecture over `texts`.
pub fn model(texts: &[String]) -> MaskedLm {
    let vocab = build_vocabulary(texts, &GenderLexicon::default_lists(), 2000).unwrap();
    MaskedLm::new(vocab, ModelConfig::new(0), 7).unwrap()
}

/// `n` he/she pairs built from occupation sentences.
pub fn pairs(n: usize) -> Vec<EvalPair> {
    default_occupations()
        .iter()
        .cycle()
        .take(n)
        .map(|o| {
            EvalPair::from_texts(
                &format!("he said that the {o} was late again today"),
                &format!("she said that the {o} was late again today"),
                biasmeta::measures::pairs::Direction::Male,
            )
            .unwrap()
        })
        .collect()
}
