use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::protocol::{ScoreRequest, ScoreResponse};
use crate::error::{Error, Result};
use crate::mlm::vocab::{Vocabulary, MASK_TOKEN};
use crate::mlm::MaskedLm;

/// Anything that can answer score requests.
pub trait Scorer: Send + Sync {
    /// Identifier recorded in every response.
    fn backend_id(&self) -> String;

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse>;

    /// Whether `word` is a single in-vocabulary token for this backend.
    fn knows_word(&self, _word: &str) -> bool {
        true
    }

    /// Probabilities of every candidate word at `pos` with that position
    /// masked, sorted by decreasing probability.
    fn masked_distribution(&self, _tokens: &[String], _pos: usize) -> Result<Vec<(String, f64)>> {
        Err(Error::Unsupported(format!("{} cannot list a masked distribution", self.backend_id())))
    }
}

/// Scores a batch, checking every response against its request.
pub fn score_all(scorer: &dyn Scorer, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
    requests
        .iter()
        .map(|req| {
            let resp = scorer.score(req)?;
            resp.validate_for(req)?;
            if req.want_attention && resp.attention().is_none() {
                return Err(Error::AttentionUnavailable(scorer.backend_id()));
            }
            Ok(resp)
        })
        .collect()
}

/// Which layers contribute to the attention reported for AULA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionLayers {
    #[default]
    All,
    Last,
}

impl std::str::FromStr for AttentionLayers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(AttentionLayers::All),
            "last" => Ok(AttentionLayers::Last),
            other => Err(Error::Config(format!("attention layers must be all or last, got {other:?}"))),
        }
    }
}

/// Scores requests with the in-process masked LM. Out-of-vocabulary
/// targets are scored as `[UNK]`. Attention is the attention received by
/// each word, renormalized after dropping `[BOS]` and `[EOS]`.
pub struct TinyMlmScorer {
    model: MaskedLm,
    backend: String,
    attention_layers: AttentionLayers,
}

impl TinyMlmScorer {
    pub fn new(model: MaskedLm, model_id: impl Into<String>) -> Self {
        Self {
            model,
            backend: format!("tinymlm:{}", model_id.into()),
            attention_layers: AttentionLayers::All,
        }
    }

    pub fn with_attention_layers(mut self, layers: AttentionLayers) -> Self {
        self.attention_layers = layers;
        self
    }

    pub fn model(&self) -> &MaskedLm {
        &self.model
    }

    fn input_words<'a>(&self, tokens: &'a [String], masked: impl Fn(usize) -> bool) -> Vec<&'a str> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| if masked(i) { MASK_TOKEN } else { t.as_str() })
            .collect()
    }
}

impl Scorer for TinyMlmScorer {
    fn backend_id(&self) -> String {
        self.backend.clone()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        request.validate()?;
        let words = self.input_words(&request.tokens, |i| request.is_masked(i));
        let vocab = &self.model.vocab;
        let params = &self.model.params;
        let fwd = params.forward(&vocab.encode_words(&words))?;
        let logprobs = request
            .targets
            .iter()
            .map(|(&pos, target)| {
                let lp = fwd.log_probs(params, pos + 1);
                (pos, lp[vocab.encode_token(target) as usize])
            })
            .collect();
        let attention = if request.want_attention {
            let n = fwd.num_layers();
            let received = match self.attention_layers {
                AttentionLayers::All => fwd.received_attention(),
                AttentionLayers::Last => fwd.received_attention_in(n - 1..n),
            };
            let words = &received[1..received.len() - 1];
            let total: f64 = words.iter().sum();
            words.iter().map(|a| a / total).collect()
        } else {
            Vec::new()
        };
        Ok(ScoreResponse {
            id: request.id,
            logprobs,
            attention,
            backend: self.backend.clone(),
        })
    }

    fn knows_word(&self, word: &str) -> bool {
        self.model.vocab.contains(word)
    }

    fn masked_distribution(&self, tokens: &[String], pos: usize) -> Result<Vec<(String, f64)>> {
        if pos >= tokens.len() {
            return Err(Error::Argument(format!("mask position {pos} outside the sentence")));
        }
        let words = self.input_words(tokens, |i| i == pos);
        let lp = self.model.word_log_probs(&words, pos)?;
        let mut out: Vec<(String, f64)> = lp
            .iter()
            .enumerate()
            .filter(|(id, _)| !Vocabulary::is_special(*id as u32))
            .map(|(id, l)| (self.model.vocab.token(id as u32).to_string(), l.exp()))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }
}

/// Answers requests from a previously produced response file.
pub struct DumpScorer {
    responses: HashMap<u64, ScoreResponse>,
    backend: String,
}

impl DumpScorer {
    pub fn new(responses: Vec<ScoreResponse>) -> Self {
        let backend = responses
            .first()
            .map(|r| r.backend.clone())
            .unwrap_or_else(|| "dump".to_string());
        Self {
            responses: responses.into_iter().map(|r| (r.id, r)).collect(),
            backend,
        }
    }

    /// Fails with every request id the dump does not answer.
    pub fn check_complete(&self, requests: &[ScoreRequest]) -> Result<()> {
        let missing: Vec<u64> = requests
            .iter()
            .map(|r| r.id)
            .filter(|id| !self.responses.contains_key(id))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::UnansweredRequests(missing))
        }
    }
}

impl Scorer for DumpScorer {
    fn backend_id(&self) -> String {
        self.backend.clone()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        self.responses
            .get(&request.id)
            .cloned()
            .ok_or_else(|| Error::UnansweredRequests(vec![request.id]))
    }
}

type ScoreFn = dyn Fn(&ScoreRequest) -> Result<ScoreResponse> + Send + Sync;

type VocabFn = dyn Fn(&str) -> bool + Send + Sync;
type AttentionFn = dyn Fn(&ScoreRequest) -> Vec<f64> + Send + Sync;

/// Hand-specified scorer for tests and oracles.
#[derive(Clone)]
pub struct StubScorer {
    name: String,
    answer: Arc<ScoreFn>,
    vocabulary: Option<Arc<VocabFn>>,
    attention: Option<Arc<AttentionFn>>,
}

impl StubScorer {
    /// Responses come from `answer`; the id and backend fields are filled in.
    pub fn new<F>(name: impl Into<String>, answer: F) -> Self
    where
        F: Fn(&ScoreRequest) -> Result<ScoreResponse> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            answer: Arc::new(answer),
            vocabulary: None,
            attention: None,
        }
    }

    /// Every target gets `logprob(request, pos, target)`; attention, when
    /// requested, is uniform unless overridden by [`StubScorer::with_attention`].
    pub fn from_fn<L>(name: impl Into<String>, logprob: L) -> Self
    where
        L: Fn(&ScoreRequest, usize, &str) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, move |req: &ScoreRequest| {
            let logprobs: BTreeMap<usize, f64> = req
                .targets
                .iter()
                .map(|(&pos, t)| (pos, logprob(req, pos, t)))
                .collect();
            Ok(ScoreResponse {
                id: req.id,
                logprobs,
                attention: if req.want_attention {
                    uniform(req.tokens.len())
                } else {
                    Vec::new()
                },
                backend: String::new(),
            })
        })
    }

    /// Every target of request `id` gets `table[id]`.
    pub fn from_id_table(name: impl Into<String>, table: HashMap<u64, f64>) -> Self {
        Self::from_fn(name, move |req, _, _| table.get(&req.id).copied().unwrap_or(-1.0))
    }

    /// Restricts `knows_word` to the given predicate.
    pub fn with_vocabulary<V>(mut self, known: V) -> Self
    where
        V: Fn(&str) -> bool + Send + Sync + 'static,
    {
        self.vocabulary = Some(Arc::new(known));
        self
    }

    /// Attention weights returned for requests that want them.
    pub fn with_attention<A>(mut self, attention: A) -> Self
    where
        A: Fn(&ScoreRequest) -> Vec<f64> + Send + Sync + 'static,
    {
        self.attention = Some(Arc::new(attention));
        self
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

impl Scorer for StubScorer {
    fn backend_id(&self) -> String {
        format!("stub:{}", self.name)
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        let mut resp = (self.answer)(request)?;
        resp.id = request.id;
        resp.backend = self.backend_id();
        if let (true, Some(attention)) = (request.want_attention, &self.attention) {
            resp.attention = attention(request);
        }
        Ok(resp)
    }

    fn knows_word(&self, word: &str) -> bool {
        self.vocabulary.as_ref().is_none_or(|known| known(word))
    }
}
