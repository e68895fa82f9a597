//! Pronoun-probability diagnostics: the occupation probe and top-k
//! predictions for a masked sentence.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Gender, GenderLexicon};
use crate::measures::Template;
use crate::mlm::vocab::MASK_TOKEN;
use crate::scoring::{score_all, Protocol, ScoreRequest, ScoreResponse, Scorer};
use crate::text::tokenize;

const DEFAULT_OCCUPATIONS: &str = include_str!("../data/occupations.txt");

/// Gender- and stereotype-neutral occupation words shipped with the crate.
pub fn default_occupations() -> Vec<String> {
    parse_word_list(DEFAULT_OCCUPATIONS)
}

/// One word per line; blank lines and `#` comments are ignored.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub const PROBE_TEMPLATE: &str = "[GENDER] is a/an [ATTR]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationProbe {
    pub occupation: String,
    pub p_he: f64,
    pub p_she: f64,
}

impl OccupationProbe {
    /// `p_he` renormalized over the pronoun pair.
    pub fn p_he_renorm(&self) -> f64 {
        self.p_he / (self.p_he + self.p_she)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub model_id: String,
    pub r: Option<f64>,
    pub occupations: Vec<OccupationProbe>,
    pub skipped: usize,
    pub mean_p_he: f64,
    pub mean_p_she: f64,
    /// Mean over occupations of `p_he / (p_he + p_she)`.
    pub mean_p_he_renorm: f64,
}

impl ProbeResult {
    pub fn mean_p_she_renorm(&self) -> f64 {
        1.0 - self.mean_p_he_renorm
    }
}

/// Requests of an occupation probe, two per occupation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbePlan {
    pub requests: Vec<ScoreRequest>,
    pub skipped: usize,
    items: Vec<(String, u64, u64)>,
}

impl ProbePlan {
    /// Masks the gender slot of `"[MASK] is a/an [occupation]"` and asks
    /// for `he` and `she` there. Occupations the backend does not know are
    /// skipped.
    pub fn new(
        occupations: &[String],
        pronouns: (&str, &str),
        knows_word: &dyn Fn(&str) -> bool,
        next_id: &mut u64,
    ) -> Result<Self> {
        if occupations.is_empty() {
            return Err(Error::Argument("occupation list is empty".into()));
        }
        let template = Template::new(PROBE_TEMPLATE)?;
        let mut requests = Vec::new();
        let mut items = Vec::new();
        let mut skipped = 0;
        for occ in occupations {
            if !tokenize(occ).iter().all(|t| knows_word(t)) {
                skipped += 1;
                continue;
            }
            let mut ids = [0u64; 2];
            for (slot, pronoun) in [pronouns.0, pronouns.1].into_iter().enumerate() {
                let inst = template.instantiate(pronoun, occ)?;
                ids[slot] = *next_id;
                requests.push(ScoreRequest {
                    id: *next_id,
                    masked_positions: vec![inst.gender_pos],
                    targets: [(inst.gender_pos, pronoun.to_string())].into(),
                    tokens: inst.tokens,
                    want_attention: false,
                    protocol: Protocol::Probe,
                });
                *next_id += 1;
            }
            items.push((occ.clone(), ids[0], ids[1]));
        }
        Ok(Self {
            requests,
            skipped,
            items,
        })
    }

    pub fn evaluate(&self, responses: &HashMap<u64, ScoreResponse>, model_id: &str, r: Option<f64>) -> Result<ProbeResult> {
        let missing: Vec<u64> = self
            .requests
            .iter()
            .map(|q| q.id)
            .filter(|id| !responses.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnansweredRequests(missing));
        }
        for q in &self.requests {
            responses[&q.id].validate_for(q)?;
        }
        if self.items.is_empty() {
            return Err(Error::NoItems("occupation probe".into()));
        }
        let p = |id: u64| responses[&id].logprobs.values().next().expect("one target").exp();
        let occupations: Vec<OccupationProbe> = self
            .items
            .iter()
            .map(|(occ, he, she)| OccupationProbe {
                occupation: occ.clone(),
                p_he: p(*he),
                p_she: p(*she),
            })
            .collect();
        let n = occupations.len() as f64;
        let mean = |f: &dyn Fn(&OccupationProbe) -> f64| occupations.iter().map(f).sum::<f64>() / n;
        Ok(ProbeResult {
            model_id: model_id.to_string(),
            r,
            mean_p_he: mean(&|o| o.p_he),
            mean_p_she: mean(&|o| o.p_she),
            mean_p_he_renorm: mean(&|o| o.p_he_renorm()),
            skipped: self.skipped,
            occupations,
        })
    }
}

/// Runs the occupation probe directly against `scorer`.
pub fn occupation_probe(
    scorer: &dyn Scorer,
    occupations: &[String],
    pronouns: (&str, &str),
    model_id: &str,
    r: Option<f64>,
) -> Result<ProbeResult> {
    let plan = ProbePlan::new(occupations, pronouns, &|w| scorer.knows_word(w), &mut 0)?;
    let responses = score_all(scorer, &plan.requests)?;
    plan.evaluate(&responses.into_iter().map(|x| (x.id, x)).collect(), model_id, r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKEntry {
    pub token: String,
    pub prob: f64,
    pub gender: Option<Gender>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub sentence: String,
    pub entries: Vec<TopKEntry>,
}

/// Tokenizes a sentence containing `[MASK]` markers and returns the
/// tokens (the marker kept as `[MASK]`) and the marker positions.
pub fn parse_masked_sentence(sentence: &str) -> (Vec<String>, Vec<usize>) {
    let mut tokens = Vec::new();
    let mut masks = Vec::new();
    for (i, piece) in sentence.split(MASK_TOKEN).enumerate() {
        if i > 0 {
            masks.push(tokens.len());
            tokens.push(MASK_TOKEN.to_string());
        }
        tokens.extend(tokenize(piece));
    }
    (tokens, masks)
}

/// The `k` most probable words at the single `[MASK]` of `sentence`, with
/// gendered words flagged.
pub fn topk_probe(scorer: &dyn Scorer, sentence: &str, k: usize, lex: &GenderLexicon) -> Result<TopK> {
    let (tokens, masks) = parse_masked_sentence(sentence);
    if masks.len() != 1 {
        return Err(Error::Argument(format!(
            "top-k probe needs exactly one {MASK_TOKEN}, found {}",
            masks.len()
        )));
    }
    let dist = scorer.masked_distribution(&tokens, masks[0])?;
    Ok(TopK {
        sentence: sentence.to_string(),
        entries: dist
            .into_iter()
            .take(k)
            .map(|(token, prob)| TopKEntry {
                gender: lex.gender_of(&token),
                token,
                prob,
            })
            .collect(),
    })
}

/// Per-occupation rows `r,occupation,p_he,p_she`; `r` is empty for a
/// model outside the sweep.
pub fn write_probe_csv<W: Write>(out: W, results: &[ProbeResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::io("<probe csv>", e.into());
    w.write_record(["r", "occupation", "p_he", "p_she"]).map_err(err)?;
    for res in results {
        let r = res.r.map(|r| r.to_string()).unwrap_or_default();
        for o in &res.occupations {
            w.write_record([r.as_str(), &o.occupation, &o.p_he.to_string(), &o.p_she.to_string()])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<probe csv>", e))
}

/// One row per model with raw and renormalized means.
pub fn write_aggregate_csv<W: Write>(out: W, results: &[ProbeResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::io("<probe csv>", e.into());
    w.write_record([
        "r",
        "model_id",
        "n_occupations",
        "mean_p_he",
        "mean_p_she",
        "mean_p_he_renorm",
        "mean_p_she_renorm",
    ])
    .map_err(err)?;
    for res in results {
        w.write_record([
            res.r.map(|r| r.to_string()).unwrap_or_default(),
            res.model_id.clone(),
            res.occupations.len().to_string(),
            res.mean_p_he.to_string(),
            res.mean_p_she.to_string(),
            res.mean_p_he_renorm.to_string(),
            res.mean_p_she_renorm().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<probe csv>", e))
}

/// Line chart of mean pronoun probabilities against r, raw (solid) and
/// renormalized over the pair (dashed), as a standalone SVG document.
pub fn render_probe_svg(results: &[ProbeResult]) -> String {
    let mut pts: Vec<&ProbeResult> = results.iter().filter(|r| r.r.is_some()).collect();
    pts.sort_by(|a, b| a.r.unwrap().total_cmp(&b.r.unwrap()));
    let (w, h, left, top, pw, ph) = (560.0, 380.0, 60.0, 30.0, 440.0, 280.0);
    let x = |r: f64| left + r * pw;
    let y = |p: f64| top + (1.0 - p) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">Mean pronoun probability at "[MASK] is a/an [occupation]"</text>"#,
        left + pw / 2.0
    );
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#e4e4e4"/>"##,
            left,
            y(v),
            left + pw,
            y(v)
        );
        if i % 2 == 0 {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 6.0, y(v) + 4.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, x(v), top + ph + 18.0);
        }
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">rate of bias r</text>"#,
        left + pw / 2.0,
        top + ph + 38.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">probability</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    let series: [(&str, &str, bool, fn(&ProbeResult) -> f64); 4] = [
        ("p(he)", "#1f5fa8", false, |r| r.mean_p_he),
        ("p(she)", "#c2452d", false, |r| r.mean_p_she),
        ("p(he), renormalized", "#1f5fa8", true, |r| r.mean_p_he_renorm),
        ("p(she), renormalized", "#c2452d", true, |r| r.mean_p_she_renorm()),
    ];
    for (i, (label, color, dashed, f)) in series.iter().enumerate() {
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let points: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", x(p.r.unwrap()), y(f(p)))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            points.join(" ")
        );
        for p in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, x(p.r.unwrap()), y(f(p)));
        }
        let ly = top + 14.0 + i as f64 * 16.0;
        let lx = left + pw + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 18.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="9">{label}</text>"#, lx, ly + 12.0);
    }
    s.push_str("</svg>\n");
    s
}
