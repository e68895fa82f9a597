//! Forward and backward passes of the encoder.
//!
//! Each block is pre-norm:
//! `x ← x + Attn(LN₁(x))`, `x ← x + W₂·gelu(W₁·LN₂(x))`,
//! followed by a final layer norm and a vocabulary projection that shares
//! weights with the token embedding. Gradients are derived by hand.

use super::params::{LayerParams, MlmParams};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    norm1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]` attention probabilities.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    norm2: NormCache,
    b: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

/// Activations of one forward pass, kept for scoring and backprop.
pub struct Forward {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
    hidden: Vec<f64>,
    heads: usize,
}

impl Forward {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Vocabulary logits at position `pos`.
    pub fn logits(&self, params: &MlmParams, pos: usize) -> Vec<f64> {
        let d = params.config.d_model;
        let h = &self.hidden[pos * d..(pos + 1) * d];
        params
            .token_emb
            .chunks_exact(d)
            .zip(&params.out_bias)
            .map(|(row, b)| b + dot(row, h))
            .collect()
    }

    /// Natural-log probabilities over the vocabulary at `pos`.
    pub fn log_probs(&self, params: &MlmParams, pos: usize) -> Vec<f64> {
        log_softmax(&self.logits(params, pos))
    }

    /// Attention received by each position: column sums of every head's
    /// attention matrix, averaged over heads and layers and divided by the
    /// sequence length, so the result sums to one.
    pub fn received_attention(&self) -> Vec<f64> {
        self.received_attention_in(0..self.layers.len())
    }

    /// As [`Forward::received_attention`], restricted to `layers`.
    pub fn received_attention_in(&self, layers: std::ops::Range<usize>) -> Vec<f64> {
        let t = self.len();
        let mut out = vec![0.0; t];
        let count = layers.len().max(1);
        for layer in &self.layers[layers] {
            for row in layer.probs.chunks_exact(t) {
                for (o, p) in out.iter_mut().zip(row) {
                    *o += p;
                }
            }
        }
        let denom = (count * self.heads * t) as f64;
        out.iter_mut().for_each(|x| *x /= denom);
        out
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    logits.iter().map(|l| l - log_z).collect()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x · W + b` for `rows` row vectors.
fn affine(x: &[f64], rows: usize, w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        out.extend_from_slice(b);
        let y = &mut out[r * n_out..(r + 1) * n_out];
        for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yj, wij) in y.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                *yj += xi * wij;
            }
        }
    }
    out
}

/// Accumulates `dW`, `db` and returns `dx` for [`affine`].
#[allow(clippy::too_many_arguments)]
fn affine_backward(
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * n_in];
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (dbj, g) in db.iter_mut().zip(dyr) {
            *dbj += g;
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
        for i in 0..n_in {
            let wi = &w[i * n_out..(i + 1) * n_out];
            dxr[i] = dot(dyr, wi);
            let xi = xr[i];
            if xi != 0.0 {
                for (dwij, g) in dw[i * n_out..(i + 1) * n_out].iter_mut().zip(dyr) {
                    *dwij += xi * g;
                }
            }
        }
    }
    dx
}

fn layer_norm(x: &[f64], rows: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let mut out = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let h = (xr[j] - mean) * s;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (out, NormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &NormCache,
    gain: &[f64],
    rows: usize,
    d: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dot(&dxhat, xh) / d as f64;
        let s = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = s * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn zero_bias(d: usize) -> Vec<f64> {
    vec![0.0; d]
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

impl MlmParams {
    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Argument("empty token sequence".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_len,
            });
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Argument(format!(
                "token id {bad} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, ids: &[u32]) -> Result<Forward> {
        self.check_ids(ids)?;
        let cfg = self.config;
        let d = cfg.d_model;
        let t = ids.len();
        let mut x = Vec::with_capacity(t * d);
        for (pos, &id) in ids.iter().enumerate() {
            let tok = &self.token_emb[id as usize * d..(id as usize + 1) * d];
            let p = &self.pos_emb[pos * d..(pos + 1) * d];
            x.extend(tok.iter().zip(p).map(|(a, b)| a + b));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer_forward(layer, &x, t, cfg.d_model, cfg.heads, cfg.d_ff);
            x = next;
            caches.push(cache);
        }
        let (hidden, final_norm) = layer_norm(&x, t, d, &self.final_ln_gain, &self.final_ln_bias);
        Ok(Forward {
            ids: ids.to_vec(),
            layers: caches,
            final_norm,
            hidden,
            heads: cfg.heads,
        })
    }

    /// Summed cross-entropy of `targets` (position, token id) given `ids`.
    pub fn loss(&self, ids: &[u32], targets: &[(usize, u32)]) -> Result<f64> {
        let fwd = self.forward(ids)?;
        let mut total = 0.0;
        for &(pos, target) in targets {
            total -= fwd.log_probs(self, pos)[target as usize];
        }
        Ok(total)
    }

    /// Summed cross-entropy of `targets`; its gradient is added into `grad`.
    pub fn loss_and_grad(&self, ids: &[u32], targets: &[(usize, u32)], grad: &mut MlmParams) -> Result<f64> {
        let fwd = self.forward(ids)?;
        let cfg = self.config;
        let d = cfg.d_model;
        let t = ids.len();
        let mut loss = 0.0;
        let mut dhidden = vec![0.0; t * d];
        for &(pos, target) in targets {
            if pos >= t || target as usize >= cfg.vocab_size {
                return Err(Error::Argument(format!("target ({pos}, {target}) out of range")));
            }
            let logp = fwd.log_probs(self, pos);
            loss -= logp[target as usize];
            let h = &fwd.hidden[pos * d..(pos + 1) * d];
            let dh = &mut dhidden[pos * d..(pos + 1) * d];
            for (w, lp) in logp.iter().enumerate() {
                let mut g = lp.exp();
                if w == target as usize {
                    g -= 1.0;
                }
                grad.out_bias[w] += g;
                let row = &self.token_emb[w * d..(w + 1) * d];
                let drow = &mut grad.token_emb[w * d..(w + 1) * d];
                for j in 0..d {
                    drow[j] += g * h[j];
                    dh[j] += g * row[j];
                }
            }
        }

        let mut dx = layer_norm_backward(
            &dhidden,
            &fwd.final_norm,
            &self.final_ln_gain,
            t,
            d,
            &mut grad.final_ln_gain,
            &mut grad.final_ln_bias,
        );
        for (li, layer) in self.layers.iter().enumerate().rev() {
            dx = layer_backward(layer, &fwd.layers[li], &dx, t, &cfg, &mut grad.layers[li]);
        }
        for (pos, &id) in ids.iter().enumerate() {
            let g = &dx[pos * d..(pos + 1) * d];
            for (a, b) in grad.token_emb[id as usize * d..(id as usize + 1) * d].iter_mut().zip(g) {
                *a += b;
            }
            for (a, b) in grad.pos_emb[pos * d..(pos + 1) * d].iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(loss)
    }
}

fn layer_forward(p: &LayerParams, x: &[f64], t: usize, d: usize, heads: usize, d_ff: usize) -> (Vec<f64>, LayerCache) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (a, norm1) = layer_norm(x, t, d, &p.ln1_gain, &p.ln1_bias);
    let q = affine(&a, t, &p.wq, &p.bq, d, d);
    let k = affine(&a, t, &p.wk, &zero_bias(d), d, d);
    let v = affine(&a, t, &p.wv, &p.bv, d, d);
    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let qi = &q[i * d + off..i * d + off + dh];
            let row = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
            }
            softmax_in_place(row);
            let out = &mut ctx[i * d + off..i * d + off + dh];
            for (j, &pij) in row.iter().enumerate() {
                for (o, vj) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                    *o += pij * vj;
                }
            }
        }
    }
    let attn_out = affine(&ctx, t, &p.wo, &p.bo, d, d);
    let mid: Vec<f64> = x.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
    let (b, norm2) = layer_norm(&mid, t, d, &p.ln2_gain, &p.ln2_bias);
    let pre_act = affine(&b, t, &p.ff_in, &p.ff_in_bias, d, d_ff);
    let act: Vec<f64> = pre_act.iter().map(|&z| gelu(z)).collect();
    let ff = affine(&act, t, &p.ff_out, &p.ff_out_bias, d_ff, d);
    let out = mid.iter().zip(&ff).map(|(a, b)| a + b).collect();
    (
        out,
        LayerCache {
            norm1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            norm2,
            b,
            pre_act,
            act,
        },
    )
}

fn layer_backward(
    p: &LayerParams,
    c: &LayerCache,
    dout: &[f64],
    t: usize,
    cfg: &super::params::ModelConfig,
    g: &mut LayerParams,
) -> Vec<f64> {
    let d = cfg.d_model;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // feed-forward branch
    let dact = affine_backward(&c.act, dout, &p.ff_out, t, cfg.d_ff, d, &mut g.ff_out, &mut g.ff_out_bias);
    let dpre: Vec<f64> = dact.iter().zip(&c.pre_act).map(|(da, &z)| da * gelu_grad(z)).collect();
    let db = affine_backward(&c.b, &dpre, &p.ff_in, t, d, cfg.d_ff, &mut g.ff_in, &mut g.ff_in_bias);
    let dnorm2 = layer_norm_backward(&db, &c.norm2, &p.ln2_gain, t, d, &mut g.ln2_gain, &mut g.ln2_bias);
    let dmid: Vec<f64> = dout.iter().zip(&dnorm2).map(|(a, b)| a + b).collect();

    // attention branch
    let dctx = affine_backward(&c.ctx, &dmid, &p.wo, t, d, d, &mut g.wo, &mut g.bo);
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let row = &c.probs[(h * t + i) * t..(h * t + i + 1) * t];
            let dci = &dctx[i * d + off..i * d + off + dh];
            for j in 0..t {
                dp[j] = dot(dci, &c.v[j * d + off..j * d + off + dh]);
                for (dvj, dc) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                    *dvj += row[j] * dc;
                }
            }
            let weighted = dot(row, &dp);
            for j in 0..t {
                let ds = row[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for m in 0..dh {
                    dq[i * d + off + m] += ds * c.k[j * d + off + m];
                    dk[j * d + off + m] += ds * c.q[i * d + off + m];
                }
            }
        }
    }
    let mut da = affine_backward(&c.a, &dq, &p.wq, t, d, d, &mut g.wq, &mut g.bq);
    let mut unused_bias = vec![0.0; d];
    let from_k = affine_backward(&c.a, &dk, &p.wk, t, d, d, &mut g.wk, &mut unused_bias);
    let from_v = affine_backward(&c.a, &dv, &p.wv, t, d, d, &mut g.wv, &mut g.bv);
    for ((x, y), z) in da.iter_mut().zip(from_k).zip(from_v) {
        *x += y + z;
    }
    let dnorm1 = layer_norm_backward(&da, &c.norm1, &p.ln1_gain, t, d, &mut g.ln1_gain, &mut g.ln1_bias);
    dmid.iter().zip(&dnorm1).map(|(a, b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::super::params::ModelConfig;
    use super::*;

    fn tiny() -> MlmParams {
        let cfg = ModelConfig {
            vocab_size: 30,
            d_model: 8,
            heads: 2,
            layers: 1,
            d_ff: 16,
            max_len: 8,
        };
        MlmParams::init(cfg, 3, 0.5).unwrap()
    }

    #[test]
    fn distributions_are_normalized() {
        let p = tiny();
        let fwd = p.forward(&[3, 7, 2, 11, 4]).unwrap();
        for pos in 0..5 {
            let total: f64 = fwd.log_probs(&p, pos).iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn received_attention_is_a_distribution() {
        let p = tiny();
        let att = p.forward(&[3, 7, 2, 11, 4]).unwrap().received_attention();
        assert!(att.iter().all(|&a| a >= 0.0));
        assert!((att.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let single = p.forward(&[9]).unwrap().received_attention();
        assert_eq!(single.len(), 1);
        assert!((single[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_long_sequence() {
        let p = tiny();
        let err = p.forward(&[5; 9]).err().unwrap();
        assert!(matches!(err, Error::SequenceTooLong { len: 9, max: 8 }));
    }

    #[test]
    fn out_of_range_id() {
        assert!(tiny().forward(&[30]).is_err());
    }

    #[test]
    fn log_softmax_survives_large_logits() {
        let lp = log_softmax(&[1000.0, 0.0, -1000.0]);
        assert!(lp.iter().all(|x| x.is_finite()));
        assert!(lp[0].abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn loss_and_grad_agrees_with_loss() {
        let p = tiny();
        let ids = [3, 7, 2, 11, 4];
        let targets = [(2, 13), (1, 7)];
        let mut g = p.zeros_like();
        let a = p.loss_and_grad(&ids, &targets, &mut g).unwrap();
        let b = p.loss(&ids, &targets).unwrap();
        assert_eq!(a, b);
    }
}
