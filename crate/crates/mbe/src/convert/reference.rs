//! Deterministic random-weight transformer block with a pure float forward.
//!
//! Pre-LayerNorm blocks: `x += Attn(LN1(x))`, then `x += MLP(LN2(x))`.
//! Stands in for full-scale pretrained models at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::normal_cdf;

/// seq_len x d_model activation grid.
pub type TokenGrid = Vec<Vec<f64>>;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Gelu,
    Tanh,
}

impl ActivationKind {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Gelu => x * normal_cdf(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefTransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub activation: ActivationKind,
}

impl RefTransformerConfig {
    /// Small enough for exhaustive comparison, large enough to exercise every
    /// site kind.
    pub fn desk_scale(seed: u64) -> Self {
        RefTransformerConfig {
            d_model: 32,
            n_heads: 2,
            d_ff: 64,
            n_layers: 2,
            seq_len: 8,
            seed,
            activation: ActivationKind::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.seq_len == 0 {
            return Err(Error::invalid("transformer dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Vec<Vec<f64>>,
    pub bq: Vec<f64>,
    pub wk: Vec<Vec<f64>>,
    pub bk: Vec<f64>,
    pub wv: Vec<Vec<f64>>,
    pub bv: Vec<f64>,
    pub wo: Vec<Vec<f64>>,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatTransformer {
    pub config: RefTransformerConfig,
    pub layers: Vec<LayerWeights>,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows)
        .map(|_| (0..cols).map(|_| limit * (2.0 * rng.gen::<f64>() - 1.0)).collect())
        .collect()
}

fn small_uniform(rng: &mut ChaCha8Rng, len: usize, limit: f64) -> Vec<f64> {
    (0..len).map(|_| limit * (2.0 * rng.gen::<f64>() - 1.0)).collect()
}

/// Build a transformer with deterministic random weights.
pub fn build_reference(config: &RefTransformerConfig) -> Result<FloatTransformer> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d_model;
    let f = config.d_ff;
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            ln1_gamma: (0..d).map(|_| 0.8 + 0.4 * rng.gen::<f64>()).collect(),
            ln1_beta: small_uniform(&mut rng, d, 0.1),
            wq: xavier(&mut rng, d, d),
            bq: small_uniform(&mut rng, d, 0.05),
            wk: xavier(&mut rng, d, d),
            bk: small_uniform(&mut rng, d, 0.05),
            wv: xavier(&mut rng, d, d),
            bv: small_uniform(&mut rng, d, 0.05),
            wo: xavier(&mut rng, d, d),
            bo: small_uniform(&mut rng, d, 0.05),
            ln2_gamma: (0..d).map(|_| 0.8 + 0.4 * rng.gen::<f64>()).collect(),
            ln2_beta: small_uniform(&mut rng, d, 0.1),
            w1: xavier(&mut rng, d, f),
            b1: small_uniform(&mut rng, f, 0.05),
            w2: xavier(&mut rng, f, d),
            b2: small_uniform(&mut rng, d, 0.05),
        })
        .collect();
    Ok(FloatTransformer {
        config: *config,
        layers,
    })
}

/// Standard-normal input grid, deterministic from the seed.
pub fn random_input(config: &RefTransformerConfig, seed: u64) -> TokenGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xda7a);
    (0..config.seq_len)
        .map(|_| {
            (0..config.d_model)
                .map(|_| {
                    // Box-Muller on ChaCha uniforms keeps this reproducible.
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect()
        })
        .collect()
}

/// Bit pattern of every weight tensor in a fixed order, for the
/// weights-untouched contract.
pub fn weights_fingerprint(model: &FloatTransformer) -> Vec<u64> {
    let mut out = Vec::new();
    let push_vec = |out: &mut Vec<u64>, v: &[f64]| {
        out.extend(v.iter().map(|x| x.to_bits()));
    };
    for l in &model.layers {
        push_vec(&mut out, &l.ln1_gamma);
        push_vec(&mut out, &l.ln1_beta);
        for m in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2] {
            for row in m {
                push_vec(&mut out, row);
            }
        }
        for b in [&l.bq, &l.bk, &l.bv, &l.bo, &l.b1, &l.b2] {
            push_vec(&mut out, b);
        }
        push_vec(&mut out, &l.ln2_gamma);
        push_vec(&mut out, &l.ln2_beta);
    }
    out
}

// --- float forward ---------------------------------------------------------

pub(crate) fn matmul_bias(x: &TokenGrid, w: &[Vec<f64>], b: &[f64]) -> TokenGrid {
    x.iter()
        .map(|row| {
            let mut out = b.to_vec();
            for (xi, wrow) in row.iter().zip(w) {
                for (o, wij) in out.iter_mut().zip(wrow) {
                    *o += xi * wij;
                }
            }
            out
        })
        .collect()
}

pub(crate) fn layernorm_row(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    row.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(x, (g, b))| g * (x - mean) * inv_std + b)
        .collect()
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub(crate) fn head_slice(x: &TokenGrid, head: usize, d_head: usize) -> TokenGrid {
    x.iter()
        .map(|row| row[head * d_head..(head + 1) * d_head].to_vec())
        .collect()
}

pub(crate) fn transpose(x: &TokenGrid) -> TokenGrid {
    if x.is_empty() {
        return Vec::new();
    }
    (0..x[0].len())
        .map(|j| x.iter().map(|row| row[j]).collect())
        .collect()
}

pub(crate) fn add_grids(a: &TokenGrid, b: &TokenGrid) -> TokenGrid {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

impl FloatTransformer {
    pub fn forward(&self, input: &TokenGrid) -> TokenGrid {
        self.forward_traced(input).0
    }

    /// Forward pass returning the activation grid after every layer.
    pub fn forward_traced(&self, input: &TokenGrid) -> (TokenGrid, Vec<TokenGrid>) {
        let mut x = input.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = self.layer_forward(layer, &x, &mut NoHook);
            traces.push(x.clone());
        }
        (x, traces)
    }

    pub(crate) fn forward_hooked<H: ForwardHook>(&self, input: &TokenGrid, hook: &mut H) -> TokenGrid {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            hook.enter_layer(i);
            x = self.layer_forward(layer, &x, hook);
        }
        x
    }

    fn layer_forward<H: ForwardHook>(
        &self,
        layer: &LayerWeights,
        x: &TokenGrid,
        hook: &mut H,
    ) -> TokenGrid {
        let cfg = &self.config;
        let d_head = cfg.d_head();
        let scale = 1.0 / (d_head as f64).sqrt();

        hook.layernorm_input(1, x);
        let h: TokenGrid = x
            .iter()
            .map(|row| layernorm_row(row, &layer.ln1_gamma, &layer.ln1_beta, LN_EPS))
            .collect();

        let q = matmul_bias(&h, &layer.wq, &layer.bq);
        let k = matmul_bias(&h, &layer.wk, &layer.bk);
        let v = matmul_bias(&h, &layer.wv, &layer.bv);
        hook.attention_inputs(&q, &k, &v);

        let mut ctx = vec![vec![0.0; cfg.d_model]; cfg.seq_len];
        for head in 0..cfg.n_heads {
            let qh = head_slice(&q, head, d_head);
            let kh = head_slice(&k, head, d_head);
            let vh = head_slice(&v, head, d_head);
            let kt = transpose(&kh);
            let scores: TokenGrid = qh
                .iter()
                .map(|qrow| {
                    kt.iter()
                        .zip(0..cfg.seq_len)
                        .map(|(_, j)| {
                            qrow.iter().zip(&kh[j]).map(|(a, b)| a * b).sum::<f64>() * scale
                        })
                        .collect()
                })
                .collect();
            let probs: TokenGrid = scores
                .iter()
                .map(|row| {
                    hook.softmax_row(row);
                    softmax_row(row)
                })
                .collect();
            hook.attention_probs(&probs);
            for (i, prow) in probs.iter().enumerate() {
                for (j, &p) in prow.iter().enumerate() {
                    for c in 0..d_head {
                        ctx[i][head * d_head + c] += p * vh[j][c];
                    }
                }
            }
        }
        let attn = matmul_bias(&ctx, &layer.wo, &layer.bo);
        let x = add_grids(x, &attn);

        hook.layernorm_input(2, &x);
        let h2: TokenGrid = x
            .iter()
            .map(|row| layernorm_row(row, &layer.ln2_gamma, &layer.ln2_beta, LN_EPS))
            .collect();
        let pre = matmul_bias(&h2, &layer.w1, &layer.b1);
        hook.activation_input(&pre);
        let act: TokenGrid = pre
            .iter()
            .map(|row| row.iter().map(|&z| cfg.activation.eval(z)).collect())
            .collect();
        let ff = matmul_bias(&act, &layer.w2, &layer.b2);
        add_grids(&x, &ff)
    }
}

/// Observation points used by calibration. The float forward is identical
/// with or without a hook installed.
pub(crate) trait ForwardHook {
    fn enter_layer(&mut self, _layer: usize) {}
    fn layernorm_input(&mut self, _which: u8, _x: &TokenGrid) {}
    fn attention_inputs(&mut self, _q: &TokenGrid, _k: &TokenGrid, _v: &TokenGrid) {}
    fn softmax_row(&mut self, _scores: &[f64]) {}
    fn attention_probs(&mut self, _probs: &TokenGrid) {}
    fn activation_input(&mut self, _pre: &TokenGrid) {}
}

pub(crate) struct NoHook;
impl ForwardHook for NoHook {}
