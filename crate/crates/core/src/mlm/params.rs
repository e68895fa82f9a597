use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder shape. `max_len` counts the `[BOS]`/`[EOS]` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            heads: 4,
            layers: 1,
            d_ff: 256,
            max_len: 128,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let zero = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ]
        .into_iter()
        .find(|(_, v)| *v == 0);
        if let Some((name, _)) = zero {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Weights of one pre-norm encoder block. Matrices are row-major
/// `[in × out]`, applied as `x · W + b`. Keys carry no bias: it would
/// shift every score in a softmax row equally.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub ff_in: Vec<f64>,
    pub ff_in_bias: Vec<f64>,
    pub ff_out: Vec<f64>,
    pub ff_out_bias: Vec<f64>,
}

const LAYER_TENSORS: [&str; 15] = [
    "ln1_gain", "ln1_bias", "wq", "bq", "wk", "wv", "bv", "wo", "bo", "ln2_gain",
    "ln2_bias", "ff_in", "ff_in_bias", "ff_out", "ff_out_bias",
];

impl LayerParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        Self {
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            wq: vec![0.0; d * d],
            bq: vec![0.0; d],
            wk: vec![0.0; d * d],
            wv: vec![0.0; d * d],
            bv: vec![0.0; d],
            wo: vec![0.0; d * d],
            bo: vec![0.0; d],
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            ff_in: vec![0.0; d * f],
            ff_in_bias: vec![0.0; f],
            ff_out: vec![0.0; f * d],
            ff_out_bias: vec![0.0; d],
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 15] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ff_in,
            &self.ff_in_bias,
            &self.ff_out,
            &self.ff_out_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 15] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ff_in,
            &mut self.ff_in_bias,
            &mut self.ff_out,
            &mut self.ff_out_bias,
        ]
    }
}

/// All trainable tensors. The output projection is tied to `token_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmParams {
    pub config: ModelConfig,
    pub token_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: Vec<f64>,
    pub final_ln_bias: Vec<f64>,
    pub out_bias: Vec<f64>,
}

impl MlmParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            config,
            token_emb: vec![0.0; config.vocab_size * d],
            pos_emb: vec![0.0; config.max_len * d],
            layers: (0..config.layers).map(|_| LayerParams::zeros(&config)).collect(),
            final_ln_gain: vec![0.0; d],
            final_ln_bias: vec![0.0; d],
            out_bias: vec![0.0; config.vocab_size],
        }
    }

    /// Random initialization: embeddings with standard deviation
    /// `emb_std`, projections scaled by `1/sqrt(fan_in)`, unit layer-norm
    /// gains and zero biases.
    pub fn init(config: ModelConfig, seed: u64, emb_std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        let fill = |v: &mut Vec<f64>, std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in v.iter_mut() {
                *x = normal.sample(rng);
            }
        };
        let d = config.d_model as f64;
        let f = config.d_ff as f64;
        fill(&mut p.token_emb, emb_std, &mut rng);
        fill(&mut p.pos_emb, emb_std, &mut rng);
        for layer in &mut p.layers {
            for w in [&mut layer.wq, &mut layer.wk, &mut layer.wv, &mut layer.wo, &mut layer.ff_in] {
                fill(w, 1.0 / d.sqrt(), &mut rng);
            }
            fill(&mut layer.ff_out, 1.0 / f.sqrt(), &mut rng);
            layer.ln1_gain.fill(1.0);
            layer.ln2_gain.fill(1.0);
        }
        p.final_ln_gain.fill(1.0);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Tensor names in the fixed order used by checkpoints and gradient
    /// checks.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["token_emb".to_string(), "pos_emb".to_string()];
        for l in 0..self.layers.len() {
            names.extend(LAYER_TENSORS.iter().map(|t| format!("layer{l}.{t}")));
        }
        names.extend(["final_ln_gain", "final_ln_bias", "out_bias"].map(String::from));
        names
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.token_emb, &self.pos_emb];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend([&self.final_ln_gain, &self.final_ln_bias, &self.out_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.token_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([&mut self.final_ln_gain, &mut self.final_ln_bias, &mut self.out_bias]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// `self -= lr * grad`.
    pub fn apply_update(&mut self, grad: &MlmParams, lr: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(grad.tensors()) {
            for (x, dx) in p.iter_mut().zip(g.iter()) {
                *x -= lr * dx;
            }
        }
    }
}
