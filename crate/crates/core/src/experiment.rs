//! Building blocks of a bias-control sweep: the shared vocabulary, the
//! base model and one fine-tuned model per rate of bias.

use std::collections::BTreeSet;

use crate::corpus::GenderedCorpus;
use crate::error::Result;
use crate::lexicon::GenderLexicon;
use crate::mlm::{MaskedLm, ModelConfig, TrainConfig, TrainReport, Vocabulary};
use crate::sampler::BiasDataset;

/// Vocabulary of the most frequent corpus words plus every lexicon word.
pub fn build_vocabulary<S: AsRef<str>>(texts: &[S], lex: &GenderLexicon, max_size: usize) -> Result<Vocabulary> {
    let forced: BTreeSet<String> = lex.female_words().union(lex.male_words()).cloned().collect();
    Vocabulary::build(texts.iter().map(|t| t.as_ref()), max_size, &forced)
}

/// Initializes a model over `texts` and trains it with masked-token
/// prediction.
pub fn pretrain_base<S: AsRef<str>>(
    texts: &[S],
    lex: &GenderLexicon,
    max_vocab: usize,
    model: ModelConfig,
    train: &TrainConfig,
) -> Result<(MaskedLm, TrainReport)> {
    let vocab = build_vocabulary(texts, lex, max_vocab)?;
    let mut lm = MaskedLm::new(vocab, model, train.seed)?;
    let report = lm.pretrain(texts, train)?;
    Ok((lm, report))
}

/// Copy of `base` fine-tuned on `dataset`. Shuffling and masking are seeded
/// from the dataset's own seed.
pub fn finetune_on(
    base: &MaskedLm,
    corpus: &GenderedCorpus,
    dataset: &BiasDataset,
    train: &TrainConfig,
) -> Result<(MaskedLm, TrainReport)> {
    let texts = dataset.texts(corpus)?;
    let mut lm = base.clone();
    let cfg = TrainConfig {
        seed: dataset.seed,
        ..*train
    };
    let report = lm.finetune(&texts, &cfg)?;
    Ok((lm, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::mine_corpus;
    use crate::sampler::sample_dataset;

    #[test]
    fn lexicon_words_always_in_vocabulary() {
        let v = build_vocabulary(&["the cat sat"], &GenderLexicon::default_lists(), 2).unwrap();
        assert!(v.contains("boyfriend") && v.contains("she"));
    }

    #[test]
    fn finetuning_is_deterministic_and_moves_weights() {
        let lines: Vec<String> = (0..40)
            .map(|i| if i % 2 == 0 { format!("she is a cook {i}") } else { format!("he is a poet {i}") })
            .collect();
        let lex = GenderLexicon::default_lists();
        let corpus = mine_corpus(&lines, &lex, 15, 1).unwrap();
        let texts: Vec<&str> = corpus.all_sentences().map(|s| s.text.as_str()).collect();
        let mut cfg = ModelConfig::new(0);
        cfg.d_model = 16;
        cfg.heads = 2;
        cfg.d_ff = 32;
        cfg.max_len = 16;
        let train = TrainConfig {
            epochs: 1,
            ..TrainConfig::pretrain_defaults()
        };
        let (base, _) = pretrain_base(&texts, &lex, 100, cfg, &train).unwrap();
        let ds = sample_dataset(&corpus, 1.0, 3).unwrap();
        let (a, _) = finetune_on(&base, &corpus, &ds, &TrainConfig::finetune_defaults()).unwrap();
        let (b, _) = finetune_on(&base, &corpus, &ds, &TrainConfig::finetune_defaults()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, base.params);
    }
}
