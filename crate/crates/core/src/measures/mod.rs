//! The five intrinsic bias measures.
//!
//! Every measure is computed in two steps: a [`MeasurePlan`] lists the
//! score requests it needs, and [`MeasurePlan::evaluate`] folds the
//! responses into a value. The split lets requests be answered by an
//! external backend between the two steps.

pub mod pairs;
pub mod template;

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Gender, GenderLexicon};
use crate::scoring::{score_all, Protocol, ScoreRequest, ScoreResponse, Scorer};

pub use pairs::{generate_swap_pairs, Direction, EvalPair, SwapMap};
pub use template::{default_templates, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasureKind {
    #[serde(rename = "TBS")]
    Tbs,
    #[serde(rename = "SSS")]
    Sss,
    #[serde(rename = "CPS")]
    Cps,
    #[serde(rename = "AUL")]
    Aul,
    #[serde(rename = "AULA")]
    Aula,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 5] = [
        MeasureKind::Tbs,
        MeasureKind::Sss,
        MeasureKind::Cps,
        MeasureKind::Aul,
        MeasureKind::Aula,
    ];

    pub fn as_str(self) -> &'static str {
        self.protocol().as_str()
    }

    pub fn protocol(self) -> Protocol {
        match self {
            MeasureKind::Tbs => Protocol::Tbs,
            MeasureKind::Sss => Protocol::Sss,
            MeasureKind::Cps => Protocol::Cps,
            MeasureKind::Aul => Protocol::Aul,
            MeasureKind::Aula => Protocol::Aula,
        }
    }

    pub fn is_pairwise(self) -> bool {
        self != MeasureKind::Tbs
    }

    /// How to read the value.
    pub fn direction_note(self) -> &'static str {
        if self.is_pairwise() {
            "fraction of pairs preferring the male variant; higher = more male-biased"
        } else {
            "mean male minus female log-odds; higher = more male-biased"
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p: Protocol = s.parse()?;
        MeasureKind::ALL
            .into_iter()
            .find(|m| m.protocol() == p)
            .ok_or_else(|| Error::Argument(format!("{s} is not a bias measure")))
    }
}

/// Win counts of a pairwise measure. Kept as integers so that exchanging
/// every pair's labels maps `stereo_wins` to `anti_wins` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairTally {
    pub stereo_wins: usize,
    pub anti_wins: usize,
    pub ties: usize,
}

impl PairTally {
    pub fn add(&mut self, stereo: f64, anti: f64) {
        if stereo > anti {
            self.stereo_wins += 1;
        } else if stereo < anti {
            self.anti_wins += 1;
        } else {
            self.ties += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.stereo_wins + self.anti_wins + self.ties
    }

    /// `(stereo_wins + ties / 2) / total`.
    pub fn value(&self) -> f64 {
        (2 * self.stereo_wins + self.ties) as f64 / (2 * self.total()) as f64
    }

    pub fn swapped(&self) -> Self {
        Self {
            stereo_wins: self.anti_wins,
            anti_wins: self.stereo_wins,
            ties: self.ties,
        }
    }
}

/// Outcome of one measure on one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    pub measure: MeasureKind,
    pub value: f64,
    pub n_items: usize,
    pub skipped: usize,
    pub tally: Option<PairTally>,
}

impl MeasureValue {
    pub fn into_score(self, model_id: impl Into<String>, r: Option<f64>) -> MeasureScore {
        MeasureScore {
            measure: self.measure,
            model_id: model_id.into(),
            r,
            value: self.value,
            n_items: self.n_items,
        }
    }
}

/// Record written for every (measure, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureScore {
    pub measure: MeasureKind,
    pub model_id: String,
    pub r: Option<f64>,
    pub value: f64,
    pub n_items: usize,
}

pub fn write_scores<W: Write>(mut out: W, scores: &[MeasureScore]) -> Result<()> {
    for s in scores {
        let line = serde_json::to_string(s).expect("scores serialize");
        writeln!(out, "{line}").map_err(|e| Error::io("<scores>", e))?;
    }
    Ok(())
}

pub fn read_scores<R: BufRead>(input: R) -> Result<Vec<MeasureScore>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let parse_err = |message: String| Error::Parse { line: idx + 1, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?);
        }
    }
    Ok(out)
}

/// Everything the measures are computed from.
#[derive(Debug, Clone)]
pub struct MeasureInputs {
    pub pairs: Vec<EvalPair>,
    pub templates: Vec<Template>,
    pub attributes: Vec<String>,
    pub lexicon: GenderLexicon,
}

/// Request ids in one (stereo, anti) comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PairItem {
    stereo: Vec<u64>,
    anti: Vec<u64>,
}

/// Request ids of one (template, attribute, gender word) association.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Association {
    gender: Gender,
    target: u64,
    prior: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Items {
    Pairwise(Vec<PairItem>),
    Tbs(Vec<Vec<Association>>),
}

/// Requests for one measure and how to fold their answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurePlan {
    pub measure: MeasureKind,
    pub requests: Vec<ScoreRequest>,
    pub skipped: usize,
    items: Items,
}

fn request(id: &mut u64, tokens: &[String], masked: Vec<usize>, targets: &[usize], protocol: Protocol, want_attention: bool) -> ScoreRequest {
    let req = ScoreRequest {
        id: *id,
        tokens: tokens.to_vec(),
        masked_positions: masked,
        targets: targets.iter().map(|&p| (p, tokens[p].clone())).collect(),
        want_attention,
        protocol,
    };
    *id += 1;
    req
}

fn side_requests(kind: MeasureKind, side: &pairs::PairSide, id: &mut u64, pair_idx: usize) -> Result<Vec<ScoreRequest>> {
    let p = kind.protocol();
    let all: Vec<usize> = (0..side.tokens.len()).collect();
    Ok(match kind {
        MeasureKind::Sss => {
            if side.modified.is_empty() {
                return Err(Error::MalformedPair(format!("pair {pair_idx} has a side without modified tokens")));
            }
            vec![request(id, &side.tokens, side.modified.clone(), &side.modified, p, false)]
        }
        MeasureKind::Cps => {
            if side.unmodified.is_empty() {
                return Err(Error::MalformedPair(format!("pair {pair_idx} has no unmodified tokens")));
            }
            side.unmodified
                .iter()
                .map(|&u| request(id, &side.tokens, vec![u], &[u], p, false))
                .collect()
        }
        MeasureKind::Aul => vec![request(id, &side.tokens, vec![], &all, p, false)],
        MeasureKind::Aula => vec![request(id, &side.tokens, vec![], &all, p, true)],
        MeasureKind::Tbs => unreachable!("TBS is not pairwise"),
    })
}

impl MeasurePlan {
    /// Plans SSS, CPS, AUL or AULA over `pairs`, numbering requests from
    /// `next_id`.
    pub fn pairwise(kind: MeasureKind, pairs: &[EvalPair], next_id: &mut u64) -> Result<Self> {
        if !kind.is_pairwise() {
            return Err(Error::Argument(format!("{kind} is not a pairwise measure")));
        }
        if pairs.is_empty() {
            return Err(Error::NoItems(kind.to_string()));
        }
        let mut requests = Vec::new();
        let mut items = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let s = side_requests(kind, &pair.stereo, next_id, i)?;
            let a = side_requests(kind, &pair.anti, next_id, i)?;
            items.push(PairItem {
                stereo: s.iter().map(|r| r.id).collect(),
                anti: a.iter().map(|r| r.id).collect(),
            });
            requests.extend(s);
            requests.extend(a);
        }
        Ok(Self {
            measure: kind,
            requests,
            skipped: 0,
            items: Items::Pairwise(items),
        })
    }

    /// Plans TBS. Attributes with a token outside the backend's vocabulary
    /// and gender words outside it are skipped; each skipped
    /// (template, attribute, word) triple is counted.
    pub fn tbs(
        templates: &[Template],
        attributes: &[String],
        lex: &GenderLexicon,
        knows_word: &dyn Fn(&str) -> bool,
        next_id: &mut u64,
    ) -> Result<Self> {
        let mut requests = Vec::new();
        let mut items = Vec::new();
        let mut skipped = 0;
        let words: Vec<(Gender, &String)> = [Gender::Male, Gender::Female]
            .into_iter()
            .flat_map(|g| lex.words(g).iter().map(move |w| (g, w)))
            .collect();
        for template in templates {
            for attr in attributes {
                let attr_known = crate::text::tokenize(attr).iter().all(|t| knows_word(t));
                let mut item = Vec::new();
                for &(gender, word) in &words {
                    if !attr_known || !knows_word(word) {
                        skipped += 1;
                        continue;
                    }
                    let inst = template.instantiate(word, attr)?;
                    let g = inst.gender_pos;
                    let target = request(next_id, &inst.tokens, vec![g], &[g], Protocol::Tbs, false);
                    let mut both: Vec<usize> = inst.attr_positions.clone();
                    both.push(g);
                    both.sort_unstable();
                    let prior = request(next_id, &inst.tokens, both, &[g], Protocol::Tbs, false);
                    item.push(Association {
                        gender,
                        target: target.id,
                        prior: prior.id,
                    });
                    requests.push(target);
                    requests.push(prior);
                }
                if !item.is_empty() {
                    items.push(item);
                }
            }
        }
        Ok(Self {
            measure: MeasureKind::Tbs,
            requests,
            skipped,
            items: Items::Tbs(items),
        })
    }

    /// Plans `kind` from `inputs`.
    pub fn for_measure(
        kind: MeasureKind,
        inputs: &MeasureInputs,
        knows_word: &dyn Fn(&str) -> bool,
        next_id: &mut u64,
    ) -> Result<Self> {
        match kind {
            MeasureKind::Tbs => Self::tbs(&inputs.templates, &inputs.attributes, &inputs.lexicon, knows_word, next_id),
            k => Self::pairwise(k, &inputs.pairs, next_id),
        }
    }

    /// Folds the answers into the measure value. `responses` may hold
    /// answers to other plans' requests too.
    pub fn evaluate(&self, responses: &HashMap<u64, ScoreResponse>) -> Result<MeasureValue> {
        let missing: Vec<u64> = self
            .requests
            .iter()
            .map(|r| r.id)
            .filter(|id| !responses.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnansweredRequests(missing));
        }
        for req in &self.requests {
            let resp = &responses[&req.id];
            resp.validate_for(req)?;
            if req.want_attention && resp.attention().is_none() {
                return Err(Error::AttentionUnavailable(resp.backend.clone()));
            }
        }
        match &self.items {
            Items::Pairwise(items) => self.evaluate_pairwise(items, responses),
            Items::Tbs(items) => self.evaluate_tbs(items, responses),
        }
    }

    fn side_score(&self, ids: &[u64], responses: &HashMap<u64, ScoreResponse>) -> Result<f64> {
        let sum_all = |ids: &[u64]| -> f64 { ids.iter().flat_map(|id| responses[id].logprobs.values()).sum() };
        Ok(match self.measure {
            MeasureKind::Sss | MeasureKind::Cps => sum_all(ids),
            MeasureKind::Aul => {
                let r = &responses[&ids[0]];
                r.logprobs.values().sum::<f64>() / r.logprobs.len() as f64
            }
            MeasureKind::Aula => {
                let r = &responses[&ids[0]];
                let att = r.attention().expect("checked in evaluate");
                weighted_mean(att, r.logprobs.values().copied(), r.id)?
            }
            MeasureKind::Tbs => unreachable!("TBS is not pairwise"),
        })
    }

    fn evaluate_pairwise(&self, items: &[PairItem], responses: &HashMap<u64, ScoreResponse>) -> Result<MeasureValue> {
        let mut tally = PairTally::default();
        for item in items {
            let s = self.side_score(&item.stereo, responses)?;
            let a = self.side_score(&item.anti, responses)?;
            tally.add(s, a);
        }
        Ok(MeasureValue {
            measure: self.measure,
            value: tally.value(),
            n_items: tally.total(),
            skipped: self.skipped,
            tally: Some(tally),
        })
    }

    fn evaluate_tbs(&self, items: &[Vec<Association>], responses: &HashMap<u64, ScoreResponse>) -> Result<MeasureValue> {
        let lp = |id: u64| responses[&id].logprobs.values().next().copied().expect("one target");
        let mut biases = Vec::new();
        let mut n_items = 0;
        let mut skipped = self.skipped;
        for item in items {
            let mean_for = |g: Gender| {
                let assoc: Vec<f64> = item
                    .iter()
                    .filter(|a| a.gender == g)
                    .map(|a| lp(a.target) - lp(a.prior))
                    .collect();
                (!assoc.is_empty()).then(|| assoc.iter().sum::<f64>() / assoc.len() as f64)
            };
            match (mean_for(Gender::Male), mean_for(Gender::Female)) {
                (Some(m), Some(f)) => {
                    biases.push(m - f);
                    n_items += item.len();
                }
                _ => skipped += item.len(),
            }
        }
        if biases.is_empty() {
            return Err(Error::NoItems("TBS".into()));
        }
        Ok(MeasureValue {
            measure: MeasureKind::Tbs,
            value: biases.iter().sum::<f64>() / biases.len() as f64,
            n_items,
            skipped,
            tally: None,
        })
    }
}

/// `Σ αᵢ·xᵢ / Σ αᵢ`. Equal weights reduce to the plain mean, computed as
/// such so that uniform attention reproduces AUL bit for bit.
pub fn weighted_mean(weights: &[f64], values: impl Iterator<Item = f64>, id: u64) -> Result<f64> {
    if weights.windows(2).all(|w| w[0] == w[1]) && weights.first().is_some_and(|&w| w > 0.0) {
        let xs: Vec<f64> = values.take(weights.len()).collect();
        return Ok(xs.iter().sum::<f64>() / xs.len() as f64);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, x) in weights.iter().zip(values) {
        num += w * x;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::InvalidResponse {
            id,
            message: "attention weights sum to zero".into(),
        });
    }
    Ok(num / den)
}

fn run(plan: MeasurePlan, scorer: &dyn Scorer) -> Result<MeasureValue> {
    let responses = score_all(scorer, &plan.requests)?;
    let index = responses.into_iter().map(|r| (r.id, r)).collect();
    plan.evaluate(&index)
}

pub fn tbs(scorer: &dyn Scorer, templates: &[Template], attributes: &[String], lex: &GenderLexicon) -> Result<MeasureValue> {
    let plan = MeasurePlan::tbs(templates, attributes, lex, &|w| scorer.knows_word(w), &mut 0)?;
    run(plan, scorer)
}

pub fn sss(scorer: &dyn Scorer, pairs: &[EvalPair]) -> Result<MeasureValue> {
    run(MeasurePlan::pairwise(MeasureKind::Sss, pairs, &mut 0)?, scorer)
}

pub fn cps(scorer: &dyn Scorer, pairs: &[EvalPair]) -> Result<MeasureValue> {
    run(MeasurePlan::pairwise(MeasureKind::Cps, pairs, &mut 0)?, scorer)
}

pub fn aul(scorer: &dyn Scorer, pairs: &[EvalPair]) -> Result<MeasureValue> {
    run(MeasurePlan::pairwise(MeasureKind::Aul, pairs, &mut 0)?, scorer)
}

pub fn aula(scorer: &dyn Scorer, pairs: &[EvalPair]) -> Result<MeasureValue> {
    run(MeasurePlan::pairwise(MeasureKind::Aula, pairs, &mut 0)?, scorer)
}

/// Plans every measure in `kinds` with one id sequence starting at 0.
pub fn plan_measures(kinds: &[MeasureKind], inputs: &MeasureInputs, knows_word: &dyn Fn(&str) -> bool) -> Result<Vec<MeasurePlan>> {
    let mut next = 0;
    kinds
        .iter()
        .map(|&k| MeasurePlan::for_measure(k, inputs, knows_word, &mut next))
        .collect()
}

/// Scores and evaluates every measure in `kinds` against `scorer`.
pub fn run_measures(kinds: &[MeasureKind], inputs: &MeasureInputs, scorer: &dyn Scorer) -> Result<Vec<MeasureValue>> {
    plan_measures(kinds, inputs, &|w| scorer.knows_word(w))?
        .into_iter()
        .map(|plan| run(plan, scorer))
        .collect()
}

#[cfg(test)]
mod tests;
