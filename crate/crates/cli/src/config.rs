//! Run configuration: a `key = value` text file, overridden by flags and
//! environment variables, resolved into [`Settings`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biasmeta::measures::{default_templates, Template};
use biasmeta::mlm::ModelConfig;
use biasmeta::sampler::{default_rates, validate_rate};
use biasmeta::scoring::AttentionLayers;
use biasmeta::{MeasureKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    TinyMlm,
    Dump,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tinymlm" => Ok(Backend::TinyMlm),
            "dump" => Ok(Backend::Dump),
            other => Err(format!("backend must be tinymlm or dump, got {other:?}")),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::TinyMlm => "tinymlm",
            Backend::Dump => "dump",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub occupations: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub n: usize,
    pub dev_fraction: f64,
    pub max_tokens: usize,
    pub rates: Vec<f64>,
    pub max_vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub clip_norm: f64,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    pub backend: Backend,
    pub attention_layers: String,
    pub measures: Vec<MeasureKind>,
    pub templates: Vec<Template>,
    pub topk_sentences: Vec<String>,
    pub topk_k: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let pre = TrainConfig::pretrain_defaults();
        let fine = TrainConfig::finetune_defaults();
        let model = ModelConfig::new(0);
        Self {
            seed: 13,
            corpus: None,
            lexicon: None,
            occupations: None,
            pairs: None,
            n: 10_000,
            dev_fraction: 0.05,
            max_tokens: biasmeta::corpus::DEFAULT_MAX_TOKENS,
            rates: default_rates(),
            max_vocab: 5000,
            d_model: model.d_model,
            heads: model.heads,
            layers: model.layers,
            d_ff: model.d_ff,
            max_len: model.max_len,
            batch_size: pre.batch_size,
            mask_prob: pre.mask_prob,
            clip_norm: pre.clip_norm,
            pretrain_lr: pre.learning_rate,
            pretrain_epochs: pre.epochs,
            finetune_lr: fine.learning_rate,
            finetune_epochs: fine.epochs,
            backend: Backend::TinyMlm,
            attention_layers: "all".into(),
            measures: MeasureKind::ALL.to_vec(),
            templates: default_templates(),
            topk_sentences: vec!["[MASK] has no time for the family due to work.".into()],
            topk_k: 5,
        }
    }
}

/// Parses `0.0,0.5,1.0`, or `start:step:end` for an inclusive grid.
pub fn parse_rates(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    let rates: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("rate grid {s:?} must read start:step:end"));
        }
        let num = |p: &str| p.parse::<f64>().map_err(|_| format!("bad number {p:?} in rate grid"));
        let (start, step, end) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(format!("rate grid {s:?} is empty or has a non-positive step"));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize;
        (0..=count)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad rate {p:?}")))
            .collect::<std::result::Result<_, _>>()?
    };
    if rates.is_empty() {
        return Err("rate list is empty".into());
    }
    for &r in &rates {
        validate_rate(r).map_err(|e| e.to_string())?;
    }
    let mut sorted = rates.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err("rates must be distinct".into());
    }
    Ok(rates)
}

/// Parses one rate in `[0, 1]`.
pub fn parse_rate(s: &str) -> std::result::Result<f64, String> {
    let r: f64 = s.trim().parse().map_err(|_| format!("bad rate {s:?}"))?;
    validate_rate(r).map_err(|e| e.to_string())?;
    Ok(r)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().ok().with_context(|| format!("config key {key}: cannot parse {v:?}"))
}

fn join_rates(rates: &[f64]) -> String {
    rates.iter().map(|r| format!("{r}")).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Splits `key = value` lines. `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected key = value, got {line:?}", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "corpus" => self.corpus = opt_path(v),
            "lexicon" => self.lexicon = opt_path(v),
            "occupations" => self.occupations = opt_path(v),
            "pairs" => self.pairs = opt_path(v),
            "n" => self.n = parse_num(key, v)?,
            "dev_fraction" => self.dev_fraction = parse_num(key, v)?,
            "max_tokens" => self.max_tokens = parse_num(key, v)?,
            "rates" => self.rates = parse_rates(v).map_err(anyhow::Error::msg)?,
            "max_vocab" => self.max_vocab = parse_num(key, v)?,
            "d_model" => self.d_model = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "layers" => self.layers = parse_num(key, v)?,
            "d_ff" => self.d_ff = parse_num(key, v)?,
            "max_len" => self.max_len = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "mask_prob" => self.mask_prob = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = parse_num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, v)?,
            "finetune_lr" => self.finetune_lr = parse_num(key, v)?,
            "finetune_epochs" => self.finetune_epochs = parse_num(key, v)?,
            "backend" => self.backend = v.parse().map_err(anyhow::Error::msg)?,
            "attention_layers" => {
                v.parse::<AttentionLayers>()?;
                self.attention_layers = v.to_string();
            }
            "measures" => {
                self.measures = v
                    .split(',')
                    .map(|m| m.trim().parse::<MeasureKind>())
                    .collect::<biasmeta::Result<_>>()?;
            }
            "templates" => {
                self.templates = v
                    .split(';')
                    .map(|t| Template::new(t.trim()))
                    .collect::<biasmeta::Result<_>>()?;
            }
            "topk_sentences" => self.topk_sentences = v.split(';').map(|s| s.trim().to_string()).collect(),
            "topk_k" => self.topk_k = parse_num(key, v)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (k, v) in parse_pairs(text)? {
            s.set(&k, &v)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            bail!("n must be positive");
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            bail!("dev_fraction must lie in [0, 1)");
        }
        if self.measures.is_empty() {
            bail!("no measures selected");
        }
        self.model_config().validate()?;
        self.pretrain_config().validate()?;
        self.finetune_config().validate()?;
        Ok(())
    }

    /// Held-out sentences per gender.
    pub fn dev_n(&self) -> usize {
        (self.n as f64 * self.dev_fraction).round() as usize
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: 1,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            d_ff: self.d_ff,
            max_len: self.max_len,
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.pretrain_lr,
            batch_size: self.batch_size,
            epochs: self.pretrain_epochs,
            mask_prob: self.mask_prob,
            seed: self.seed,
            clip_norm: self.clip_norm,
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.finetune_lr,
            epochs: self.finetune_epochs,
            ..self.pretrain_config()
        }
    }

    pub fn attention(&self) -> AttentionLayers {
        self.attention_layers.parse().expect("validated on set")
    }

    /// Resolved configuration, one `key = value` per line in a fixed order.
    pub fn to_text(&self) -> String {
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("corpus", path_str(&self.corpus)),
            ("lexicon", path_str(&self.lexicon)),
            ("occupations", path_str(&self.occupations)),
            ("pairs", path_str(&self.pairs)),
            ("n", self.n.to_string()),
            ("dev_fraction", self.dev_fraction.to_string()),
            ("max_tokens", self.max_tokens.to_string()),
            ("rates", join_rates(&self.rates)),
            ("max_vocab", self.max_vocab.to_string()),
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("layers", self.layers.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("max_len", self.max_len.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("mask_prob", self.mask_prob.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("finetune_lr", self.finetune_lr.to_string()),
            ("finetune_epochs", self.finetune_epochs.to_string()),
            ("backend", self.backend.to_string()),
            ("attention_layers", self.attention_layers.clone()),
            (
                "measures",
                self.measures.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
            ),
            (
                "templates",
                self.templates.iter().map(|t| t.pattern()).collect::<Vec<_>>().join("; "),
            ),
            ("topk_sentences", self.topk_sentences.join("; ")),
            ("topk_k", self.topk_k.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Layers, lowest priority first: built-in defaults, the config file,
/// then `overrides` (flags and environment variables).
pub fn resolve(config_file: Option<&Path>, overrides: &BTreeMap<String, String>) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (k, v) in parse_pairs(&text)? {
            s.set(&k, &v).with_context(|| format!("in {}", path.display()))?;
        }
    }
    for (k, v) in overrides {
        s.set(k, v)?;
    }
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut s = Settings::default();
        s.corpus = Some("data/x.txt".into());
        s.rates = vec![0.0, 0.5, 1.0];
        s.measures = vec![MeasureKind::Aul, MeasureKind::Tbs];
        let back = Settings::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), s.to_text());
    }

    #[test]
    fn rate_grids() {
        assert_eq!(parse_rates("0:0.25:1").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_rates("0:0.1:1").unwrap(), default_rates());
        assert_eq!(parse_rates("0.3, 0.1").unwrap(), vec![0.3, 0.1]);
        assert!(parse_rates("0,1.5").is_err());
        assert!(parse_rates("0.5,0.5").is_err());
        assert!(parse_rates("abc").is_err());
        assert!(parse_rate("1.5").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(Settings::from_text("colour = red").is_err());
        assert!(Settings::from_text("n = many").is_err());
        assert!(Settings::from_text("no equals sign").is_err());
        assert!(Settings::from_text("heads = 3").is_err());
        assert!(Settings::from_text("backend = gpu").is_err());
    }

    #[test]
    fn overrides_beat_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# demo\nn = 100\nseed = 4\n").unwrap();
        let overrides = [("seed".to_string(), "9".to_string())].into();
        let s = resolve(Some(&path), &overrides).unwrap();
        assert_eq!((s.n, s.seed), (100, 9));
        assert_eq!(s.dev_n(), 5);
    }
}
