//! Score requests and responses, and their line-delimited JSON files.
//!
//! Request record: `{id, tokens[], masked_positions[], targets{pos:token},
//! want_attention, protocol}`. Response record: `{id, logprobs{pos:value},
//! attention[], backend}`. An empty `attention` array means the backend
//! supplied none.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attention weights must sum to one within this tolerance.
pub const ATTENTION_SUM_TOLERANCE: f64 = 1e-6;
/// Largest log-probability accepted from a backend.
pub const LOGPROB_CEILING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
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
    #[serde(rename = "PROBE")]
    Probe,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tbs => "TBS",
            Protocol::Sss => "SSS",
            Protocol::Cps => "CPS",
            Protocol::Aul => "AUL",
            Protocol::Aula => "AULA",
            Protocol::Probe => "PROBE",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "TBS" => Protocol::Tbs,
            "SSS" => Protocol::Sss,
            "CPS" => Protocol::Cps,
            "AUL" => Protocol::Aul,
            "AULA" => Protocol::Aula,
            "PROBE" => Protocol::Probe,
            other => return Err(Error::Argument(format!("unknown protocol {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub tokens: Vec<String>,
    pub masked_positions: Vec<usize>,
    pub targets: BTreeMap<usize, String>,
    pub want_attention: bool,
    pub protocol: Protocol,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidResponse { id: self.id, message };
        if self.tokens.is_empty() {
            return Err(bad("request has no tokens".into()));
        }
        let n = self.tokens.len();
        if let Some(p) = self.masked_positions.iter().find(|&&p| p >= n) {
            return Err(bad(format!("masked position {p} outside a {n}-token sequence")));
        }
        if self.masked_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("masked positions must be strictly increasing".into()));
        }
        if let Some(p) = self.targets.keys().find(|&&p| p >= n) {
            return Err(bad(format!("target position {p} outside a {n}-token sequence")));
        }
        Ok(())
    }

    pub fn is_masked(&self, pos: usize) -> bool {
        self.masked_positions.binary_search(&pos).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub logprobs: BTreeMap<usize, f64>,
    #[serde(default)]
    pub attention: Vec<f64>,
    pub backend: String,
}

impl ScoreResponse {
    pub fn attention(&self) -> Option<&[f64]> {
        if self.attention.is_empty() {
            None
        } else {
            Some(&self.attention)
        }
    }

    /// Checks the response on its own: log-probabilities finite and not
    /// positive, attention weights non-negative and normalized.
    pub fn validate(&self) -> Result<()> {
        for (&pos, &lp) in &self.logprobs {
            if !lp.is_finite() || lp > LOGPROB_CEILING {
                return Err(Error::InvalidResponse {
                    id: self.id,
                    message: format!("log-probability {lp} at position {pos} is not a finite value <= 0"),
                });
            }
        }
        if let Some(att) = self.attention() {
            if att.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return Err(Error::InvalidResponse {
                    id: self.id,
                    message: "attention weights must be finite and non-negative".into(),
                });
            }
            let sum: f64 = att.iter().sum();
            if (sum - 1.0).abs() > ATTENTION_SUM_TOLERANCE {
                return Err(Error::InvalidResponse {
                    id: self.id,
                    message: format!("attention weights sum to {sum}, not 1"),
                });
            }
        }
        Ok(())
    }

    /// Checks the response against the request it answers.
    pub fn validate_for(&self, request: &ScoreRequest) -> Result<()> {
        self.validate()?;
        if self.id != request.id {
            return Err(Error::InvalidResponse {
                id: self.id,
                message: format!("answers request {} instead", request.id),
            });
        }
        if !self.logprobs.keys().eq(request.targets.keys()) {
            return Err(Error::InvalidResponse {
                id: self.id,
                message: "log-probability positions do not match the request targets".into(),
            });
        }
        if let Some(att) = self.attention() {
            if att.len() != request.tokens.len() {
                return Err(Error::InvalidResponse {
                    id: self.id,
                    message: format!(
                        "{} attention weights for {} tokens",
                        att.len(),
                        request.tokens.len()
                    ),
                });
            }
        }
        Ok(())
    }
}

fn write_records<W: Write, T: Serialize>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::io("<records>", e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io("<records>", e))?;
    }
    Ok(())
}

fn read_records<R: BufRead, T: for<'de> Deserialize<'de>>(input: R, id_of: impl Fn(&T) -> u64) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = id_of(&record);
        if !seen.insert(id) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate id {id}"),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_requests<W: Write>(out: W, requests: &[ScoreRequest]) -> Result<()> {
    if requests.is_empty() {
        return Err(Error::Argument("request batch is empty".into()));
    }
    write_records(out, requests)
}

/// Parses a request file, rejecting duplicate ids and malformed records
/// with the offending line number.
pub fn read_requests<R: BufRead>(input: R) -> Result<Vec<ScoreRequest>> {
    let requests: Vec<ScoreRequest> = read_records(input, |r: &ScoreRequest| r.id)?;
    for (idx, r) in requests.iter().enumerate() {
        r.validate().map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
    }
    Ok(requests)
}

pub fn write_responses<W: Write>(out: W, responses: &[ScoreResponse]) -> Result<()> {
    write_records(out, responses)
}

/// Parses a response file and checks every record's invariants.
pub fn read_responses<R: BufRead>(input: R) -> Result<Vec<ScoreResponse>> {
    let responses: Vec<ScoreResponse> = read_records(input, |r: &ScoreResponse| r.id)?;
    for r in &responses {
        r.validate()?;
    }
    Ok(responses)
}

/// Checks that `responses` answer `requests` one to one.
pub fn match_responses(requests: &[ScoreRequest], responses: &[ScoreResponse]) -> Result<()> {
    let by_id: HashMap<u64, &ScoreResponse> = responses.iter().map(|r| (r.id, r)).collect();
    let missing: Vec<u64> = requests
        .iter()
        .filter(|r| !by_id.contains_key(&r.id))
        .map(|r| r.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnansweredRequests(missing));
    }
    let known: HashSet<u64> = requests.iter().map(|r| r.id).collect();
    if let Some(extra) = responses.iter().find(|r| !known.contains(&r.id)) {
        return Err(Error::InvalidResponse {
            id: extra.id,
            message: "response to an unknown request".into(),
        });
    }
    for req in requests {
        by_id[&req.id].validate_for(req)?;
    }
    Ok(())
}
