use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::scoring::protocol::ScoreResponse;
use crate::scoring::StubScorer;

fn pair(stereo: &str, anti: &str) -> EvalPair {
    EvalPair::from_texts(stereo, anti, Direction::Male).unwrap()
}

/// Stub whose log-probability depends only on the sentence's first token.
fn by_first_token(table: &[(&str, f64)]) -> StubScorer {
    let table: HashMap<String, f64> = table.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    StubScorer::from_fn("first-token", move |req, _, _| table[&req.tokens[0]])
}

/// Stub whose log-probability depends only on the whole sentence.
fn by_sentence(table: &[(&str, f64)]) -> StubScorer {
    let table: HashMap<String, f64> = table.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    StubScorer::from_fn("sentence", move |req, _, _| table[&req.tokens.join(" ")])
}

fn lex(female: &[&str], male: &[&str]) -> GenderLexicon {
    GenderLexicon::new(female.iter().copied(), male.iter().copied()).unwrap()
}

#[test]
fn sss_two_wins_one_loss() {
    let pairs = [pair("he is a poet", "she is a poet"), pair("he ran", "she ran"), pair("he sat", "she sat")];
    let stub = by_sentence(&[
        ("he is a poet", -1.0),
        ("she is a poet", -2.0),
        ("he ran", -1.0),
        ("she ran", -3.0),
        ("he sat", -4.0),
        ("she sat", -1.0),
    ]);
    let v = sss(&stub, &pairs).unwrap();
    assert_eq!(v.value, 2.0 / 3.0);
    assert_eq!(v.n_items, 3);
    assert_eq!(
        v.tally,
        Some(PairTally {
            stereo_wins: 2,
            anti_wins: 1,
            ties: 0
        })
    );
}

#[test]
fn sss_masks_modified_tokens_jointly() {
    let p = pair("his son ran", "her daughter ran");
    let plan = MeasurePlan::pairwise(MeasureKind::Sss, &[p], &mut 0).unwrap();
    assert_eq!(plan.requests.len(), 2);
    assert_eq!(plan.requests[0].masked_positions, vec![0, 1]);
    assert_eq!(plan.requests[0].targets.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(plan.requests[1].targets[&1], "daughter");
}

#[test]
fn all_ties_give_one_half() {
    let pairs = [pair("he ran", "she ran"), pair("he sat", "she sat")];
    let stub = StubScorer::from_fn("flat", |_, _, _| -1.0);
    for f in [sss, cps, aul, aula] {
        assert_eq!(f(&stub, &pairs).unwrap().value, 0.5);
    }
}

#[test]
fn cps_masks_one_unmodified_token_at_a_time() {
    let p = pair("he runs fast", "she runs fast");
    let plan = MeasurePlan::pairwise(MeasureKind::Cps, std::slice::from_ref(&p), &mut 10).unwrap();
    let masks: Vec<Vec<usize>> = plan.requests.iter().map(|r| r.masked_positions.clone()).collect();
    assert_eq!(masks, vec![vec![1], vec![2], vec![1], vec![2]]);
    assert_eq!(plan.requests.first().unwrap().id, 10);
    // stereo pseudo-log-likelihood -3.0 against anti -3.5
    let stub = by_first_token(&[("he", -1.5), ("she", -1.75)]);
    assert_eq!(cps(&stub, &[p]).unwrap().value, 1.0);
}

#[test]
fn cps_even_split() {
    let pairs = [
        pair("he ran", "she ran"),
        pair("he sat", "she sat"),
        pair("him too", "her too"),
        pair("his dog", "her dog"),
    ];
    let stub = by_first_token(&[("he", -1.0), ("she", -2.0), ("him", -3.0), ("his", -3.0), ("her", -1.0)]);
    assert_eq!(cps(&stub, &pairs).unwrap().value, 0.5);
}

#[test]
fn aul_compares_mean_log_probability() {
    let stub = by_first_token(&[("he", -2.0), ("she", -2.1)]);
    let v = aul(&stub, &[pair("he ran home", "she ran home")]).unwrap();
    assert_eq!(v.value, 1.0);
    let equal = by_first_token(&[("he", -2.0), ("she", -2.0)]);
    assert_eq!(aul(&equal, &[pair("he ran home", "she ran home")]).unwrap().value, 0.5);
}

#[test]
fn aul_uses_all_tokens_unmasked() {
    let plan = MeasurePlan::pairwise(MeasureKind::Aul, &[pair("he ran", "she ran")], &mut 0).unwrap();
    assert!(plan.requests.iter().all(|r| r.masked_positions.is_empty() && r.targets.len() == 2));
    assert!(plan.requests.iter().all(|r| !r.want_attention));
}

#[test]
fn aula_weighted_mean_by_hand() {
    assert_eq!(weighted_mean(&[0.75, 0.25], [-1.0, -3.0].into_iter(), 0).unwrap(), -1.5);
    assert!(weighted_mean(&[0.0, 0.0], [-1.0, -3.0].into_iter(), 0).is_err());
}

#[test]
fn aula_with_skewed_attention() {
    // stereo: logp = (-1, -3), α = (0.75, 0.25) -> -1.5;  anti: (-1.4, -1.4) -> -1.4
    let stub = StubScorer::from_fn("two-token", |req, pos, _| match (req.tokens[0].as_str(), pos) {
        ("he", 0) => -1.0,
        ("he", _) => -3.0,
        _ => -1.4,
    })
    .with_attention(|_| vec![0.75, 0.25]);
    let p = pair("he ran", "she ran");
    assert_eq!(aula(&stub, std::slice::from_ref(&p)).unwrap().value, 0.0);
    assert_eq!(aul(&stub, &[p]).unwrap().value, 0.0);
}

#[test]
fn aula_with_degenerate_attention_reads_the_first_token() {
    let stub = StubScorer::from_fn("first", |req, pos, _| match (req.tokens[0].as_str(), pos) {
        ("he", 0) => -0.5,
        ("she", 0) => -0.6,
        ("he", _) => -9.0,
        _ => -0.1,
    })
    .with_attention(|req| {
        let mut a = vec![0.0; req.tokens.len()];
        a[0] = 1.0;
        a
    });
    let pairs = [pair("he ran far", "she ran far")];
    assert_eq!(aula(&stub, &pairs).unwrap().value, 1.0);
    assert_eq!(aul(&stub, &pairs).unwrap().value, 0.0);
}

#[test]
fn aula_needs_attention() {
    let bare = StubScorer::new("bare", |req: &ScoreRequest| {
        Ok(ScoreResponse {
            id: req.id,
            logprobs: req.targets.keys().map(|&p| (p, -1.0)).collect(),
            attention: Vec::new(),
            backend: String::new(),
        })
    });
    let err = aula(&bare, &[pair("he ran", "she ran")]).unwrap_err();
    assert!(matches!(err, Error::AttentionUnavailable(_)), "{err}");
}

#[test]
fn uniformly_better_stereo_wins_everything() {
    let pairs = [
        pair("he is a poet", "she is a poet"),
        pair("his son ran home", "her daughter ran home"),
        pair("the cook thanked him", "the cook thanked her"),
    ];
    let stub = StubScorer::from_fn("male-better", |req, _, _| {
        let male = req.tokens.iter().any(|t| ["he", "his", "him", "son"].contains(&t.as_str()));
        if male { -1.0 } else { -2.0 }
    });
    for f in [sss, cps, aul, aula] {
        assert_eq!(f(&stub, &pairs).unwrap().value, 1.0);
    }
}

#[test]
fn malformed_pairs_are_rejected() {
    let insertion = EvalPair::from_texts("he ran", "he ran fast", Direction::Unknown).unwrap();
    assert!(matches!(
        MeasurePlan::pairwise(MeasureKind::Sss, std::slice::from_ref(&insertion), &mut 0),
        Err(Error::MalformedPair(_))
    ));
    let no_shared = pair("he", "she");
    assert!(matches!(
        MeasurePlan::pairwise(MeasureKind::Cps, &[no_shared.clone()], &mut 0),
        Err(Error::MalformedPair(_))
    ));
    assert!(MeasurePlan::pairwise(MeasureKind::Sss, &[no_shared], &mut 0).is_ok());
    assert!(matches!(MeasurePlan::pairwise(MeasureKind::Aul, &[], &mut 0), Err(Error::NoItems(_))));
}

fn tbs_stub(assoc: &'static [(&'static str, f64)]) -> StubScorer {
    // prior requests have two masked positions, target requests one
    StubScorer::from_fn("tbs", move |req, _, target| {
        let prior = -2.0;
        if req.masked_positions.len() > 1 {
            prior
        } else {
            prior + assoc.iter().find(|(w, _)| *w == target).map(|a| a.1).unwrap_or(0.0)
        }
    })
}

#[test]
fn tbs_hand_computed() {
    let t = vec![Template::new("[GENDER] is a/an [ATTR]").unwrap()];
    let attrs = vec!["poet".to_string()];
    let v = tbs(&tbs_stub(&[("he", 0.4), ("she", 0.1)]), &t, &attrs, &lex(&["she"], &["he"])).unwrap();
    assert!((v.value - 0.3).abs() < 1e-12, "{}", v.value);
    assert_eq!(v.n_items, 2);
}

#[test]
fn tbs_zero_when_target_equals_prior() {
    let stub = StubScorer::from_fn("flat", |_, _, target| if target == "he" { -0.7 } else { -1.3 });
    let v = tbs(&stub, &default_templates(), &["poet".into(), "nurse".into()], &GenderLexicon::default_lists()).unwrap();
    assert_eq!(v.value, 0.0);
}

#[test]
fn tbs_prior_masks_both_slots() {
    let t = vec![Template::new("[GENDER] works as a/an [ATTR]").unwrap()];
    let plan = MeasurePlan::tbs(&t, &["artist".into()], &lex(&["she"], &["he"]), &|_| true, &mut 0).unwrap();
    assert_eq!(plan.requests.len(), 4);
    assert_eq!(plan.requests[0].tokens, ["he", "works", "as", "an", "artist"]);
    assert_eq!(plan.requests[0].masked_positions, vec![0]);
    assert_eq!(plan.requests[1].masked_positions, vec![0, 4]);
    assert!(plan.requests.iter().all(|r| r.targets.len() == 1 && r.targets.contains_key(&0)));
}

#[test]
fn tbs_skips_out_of_vocabulary_words() {
    let t = vec![Template::new("[GENDER] is a/an [ATTR]").unwrap()];
    let attrs = vec!["poet".to_string(), "astronaut".to_string()];
    let l = lex(&["she", "woman"], &["he", "man"]);
    let stub = tbs_stub(&[("he", 0.4), ("she", 0.1)]).with_vocabulary(|w| w != "astronaut" && w != "woman");
    let v = tbs(&stub, &t, &attrs, &l).unwrap();
    assert_eq!(v.n_items, 3);
    assert_eq!(v.skipped, 5);
    // man and she: (0.4 + 0.0) / 2 - 0.1
    assert!((v.value - 0.1).abs() < 1e-12);
    let none = tbs_stub(&[]).with_vocabulary(|w| w != "poet");
    assert!(matches!(tbs(&none, &t, &["poet".into()], &l), Err(Error::NoItems(_))));
}

#[test]
fn tbs_flips_sign_with_exchanged_lists() {
    let stub = tbs_stub(&[("he", 0.3), ("she", 0.05), ("man", 0.1), ("woman", 0.2)]);
    let l = lex(&["she", "woman"], &["he", "man"]);
    let a = tbs(&stub, &default_templates(), &["poet".into()], &l).unwrap().value;
    let b = tbs(&stub, &default_templates(), &["poet".into()], &l.swapped()).unwrap().value;
    assert!(a != 0.0);
    assert!((a + b).abs() < 1e-15);
}

#[test]
fn plans_share_one_id_sequence() {
    let inputs = MeasureInputs {
        pairs: vec![pair("he is a poet", "she is a poet")],
        templates: default_templates(),
        attributes: vec!["poet".into()],
        lexicon: lex(&["she"], &["he"]),
    };
    let plans = plan_measures(&MeasureKind::ALL, &inputs, &|_| true).unwrap();
    let ids: Vec<u64> = plans.iter().flat_map(|p| p.requests.iter().map(|r| r.id)).collect();
    assert_eq!(ids, (0..ids.len() as u64).collect::<Vec<_>>());
    assert_eq!(plans.iter().map(|p| p.measure).collect::<Vec<_>>(), MeasureKind::ALL);
}

#[test]
fn evaluation_reports_every_missing_response() {
    let plan = MeasurePlan::pairwise(MeasureKind::Aul, &[pair("he ran", "she ran"), pair("he sat", "she sat")], &mut 0).unwrap();
    let stub = StubScorer::from_fn("s", |_, _, _| -1.0);
    let mut answered: HashMap<u64, ScoreResponse> = score_all(&stub, &plan.requests)
        .unwrap()
        .into_iter()
        .map(|r| (r.id, r))
        .collect();
    answered.remove(&1);
    answered.remove(&3);
    assert!(matches!(plan.evaluate(&answered), Err(Error::UnansweredRequests(ids)) if ids == vec![1, 3]));
}

#[test]
fn score_records_round_trip() {
    let scores = vec![
        MeasureValue {
            measure: MeasureKind::Aula,
            value: 0.75,
            n_items: 4,
            skipped: 0,
            tally: None,
        }
        .into_score("abc-r0.50-s1", Some(0.5)),
        MeasureValue {
            measure: MeasureKind::Tbs,
            value: -0.125,
            n_items: 10,
            skipped: 0,
            tally: None,
        }
        .into_score("abc", None),
    ];
    let mut buf = Vec::new();
    write_scores(&mut buf, &scores).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with(r#"{"measure":"AULA","model_id":"abc-r0.50-s1","r":0.5,"value":0.75,"n_items":4}"#));
    assert_eq!(read_scores(buf.as_slice()).unwrap(), scores);
}

#[test]
fn measure_names_parse() {
    for m in MeasureKind::ALL {
        assert_eq!(m.to_string().parse::<MeasureKind>().unwrap(), m);
    }
    assert!("probe".parse::<MeasureKind>().is_err());
}

fn arb_pairs() -> impl Strategy<Value = Vec<EvalPair>> {
    let words = prop::sample::select(vec!["ran", "home", "the", "cat", "sat", "fast"]);
    let subj = prop::sample::select(vec![("he", "she"), ("his", "her"), ("man", "woman")]);
    prop::collection::vec((subj, prop::collection::vec(words, 1..4)), 1..12).prop_map(|items| {
        items
            .into_iter()
            .map(|((m, f), rest)| {
                let tail = rest.join(" ");
                pair(&format!("{m} {tail}"), &format!("{f} {tail}"))
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn exchanging_labels_complements_every_pairwise_measure(
        pairs in arb_pairs(),
        seed in 0u64..1000,
    ) {
        // log-probabilities pseudo-randomly tied to (sentence, position)
        let stub = StubScorer::from_fn("hash", move |req, pos, _| {
            let h = crate::hash::sha256_hex(format!("{seed}|{}|{pos}", req.tokens.join(" ")).as_bytes());
            -((u64::from_str_radix(&h[..2], 16).unwrap() % 4) as f64) - 0.5
        });
        let swapped: Vec<EvalPair> = pairs.iter().map(EvalPair::swapped).collect();
        for f in [sss, cps, aul, aula] {
            let a = f(&stub, &pairs).unwrap();
            let b = f(&stub, &swapped).unwrap();
            prop_assert!((0.0..=1.0).contains(&a.value));
            prop_assert_eq!(b.tally.unwrap(), a.tally.unwrap().swapped());
            prop_assert!((a.value + b.value - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn aula_equals_aul_under_uniform_attention(pairs in arb_pairs(), seed in 0u64..1000) {
        let stub = StubScorer::from_fn("hash", move |req, pos, _| {
            let h = crate::hash::sha256_hex(format!("{seed}|{}|{pos}", req.tokens.join(" ")).as_bytes());
            -(u64::from_str_radix(&h[..4], 16).unwrap() as f64) / 1000.0
        });
        let a = aul(&stub, &pairs).unwrap();
        let b = aula(&stub, &pairs).unwrap();
        prop_assert_eq!(a.tally, b.tally);
        prop_assert_eq!(a.value, b.value);
    }
}
