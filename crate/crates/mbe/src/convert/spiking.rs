//! Swap float nonlinearities for spiking backends and run the converted
//! forward with firing statistics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::calibration::{CalibrationProfile, SiteId, SiteKind, SiteRole};
use super::reference::{
    add_grids, head_slice, matmul_bias, transpose, FloatTransformer, TokenGrid, LN_EPS,
};
use crate::arith::{spike_matmul, IdentityEncoder, MatmulStats};
use crate::error::{Error, Result};
use crate::fit::TargetKind;
use crate::ops::{
    spiking_activation, spiking_layernorm, spiking_softmax, OpStats, ProductSite, SpikingOpSet,
};

/// Spike product sites for one layernorm: squared deviations (intensity
/// matrix pre-scaled by 1/n) and the final centered-times-inv-std product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSites {
    pub variance: ProductSite,
    pub scale: ProductSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSites {
    pub ln1: NormSites,
    pub ln2: NormSites,
    pub qk: ProductSite,
    pub softmax: ProductSite,
    pub av: ProductSite,
}

/// A converted transformer: unchanged weights plus per-site spiking backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikingTransformer {
    pub model: FloatTransformer,
    pub timesteps: usize,
    pub n_act: usize,
    pub n_other: usize,
    pub opset: SpikingOpSet,
    pub layer_sites: Vec<LayerSites>,
}

/// Spike/saturation activity of one logical site across a forward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteActivity {
    pub spikes: u64,
    pub slots: u64,
    pub clamped: u64,
    pub encodes: u64,
}

impl SiteActivity {
    fn absorb(&mut self, stats: &OpStats) {
        self.spikes += stats.spikes;
        self.slots += stats.slots;
        self.clamped += stats.clamped;
        self.encodes += stats.encodes;
    }
}

/// Per-site activity accumulated over one or more spiking forwards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub sites: BTreeMap<String, SiteActivity>,
}

impl RunStats {
    fn at(&mut self, key: String) -> &mut SiteActivity {
        self.sites.entry(key).or_default()
    }

    fn absorb_matmul(&mut self, prefix: &str, timesteps: usize, stats: &MatmulStats) {
        let left = self.at(format!("{prefix}/left"));
        left.spikes += stats.left_spikes;
        left.slots += stats.left_total * timesteps as u64;
        left.clamped += stats.left_clamped;
        left.encodes += stats.left_total;
        let right = self.at(format!("{prefix}/right"));
        right.spikes += stats.right_spikes;
        right.slots += stats.right_total * timesteps as u64;
        right.clamped += stats.right_clamped;
        right.encodes += stats.right_total;
    }

    pub fn merge(&mut self, other: &RunStats) {
        for (key, activity) in &other.sites {
            let slot = self.at(key.clone());
            slot.spikes += activity.spikes;
            slot.slots += activity.slots;
            slot.clamped += activity.clamped;
            slot.encodes += activity.encodes;
        }
    }

    /// Total synaptic operations: every emitted spike across all sites.
    pub fn total_sops(&self) -> u64 {
        self.sites.values().map(|s| s.spikes).sum()
    }
}

fn encoder_from_profile(
    profile: &CalibrationProfile,
    site: SiteId,
    timesteps: usize,
) -> Result<IdentityEncoder> {
    let record = profile.record(&site).ok_or_else(|| Error::ConversionError {
        site: site.key(),
    })?;
    let (min, max) = (record.min, record.max);
    let width = max - min;
    let pad = if width > 0.0 {
        0.05 * width
    } else {
        (min.abs() * 0.1).max(1e-6)
    };
    let mut lo = min - pad;
    let mut hi = max + pad;
    if min < 0.0 && max > 0.0 {
        // Signed site: symmetric range keeps zero exactly representable.
        let m = lo.abs().max(hi.abs());
        lo = -m;
        hi = m;
    } else if min >= 0.0 {
        lo = lo.max(0.0);
    } else {
        hi = hi.min(0.0);
    }
    IdentityEncoder::new(lo, hi, timesteps)
}

fn require_slot(
    opset: &SpikingOpSet,
    kind: TargetKind,
    basis_count: usize,
    timesteps: usize,
) -> Result<()> {
    let fitted = opset.slot(kind)?;
    if fitted.neuron.timesteps != timesteps || fitted.neuron.basis_count() != basis_count {
        return Err(Error::invalid(format!(
            "approximator '{}' has N={}, T={}, conversion wants N={basis_count}, T={timesteps}",
            kind.as_str(),
            fitted.neuron.basis_count(),
            fitted.neuron.timesteps
        )));
    }
    Ok(())
}

/// Replace every activation, softmax, layernorm and activation-activation
/// product with spiking backends. Weights are carried over untouched.
pub fn convert(
    model: &FloatTransformer,
    profile: &CalibrationProfile,
    opset: SpikingOpSet,
    timesteps: usize,
    n_act: usize,
    n_other: usize,
) -> Result<SpikingTransformer> {
    model.config.validate()?;
    if model.config.n_layers > 0 {
        let act_kind = match model.config.activation {
            super::reference::ActivationKind::Gelu => TargetKind::Gelu,
            super::reference::ActivationKind::Tanh => TargetKind::Tanh,
        };
        require_slot(&opset, act_kind, n_act, timesteps)?;
        require_slot(&opset, TargetKind::Exp2Frac, n_other, timesteps)?;
        require_slot(&opset, TargetKind::Inv, n_other, timesteps)?;
        require_slot(&opset, TargetKind::InvSqrt, n_other, timesteps)?;
    }

    let d_model = model.config.d_model;
    let qk_scale = 1.0 / (model.config.d_head() as f64).sqrt();
    let mut layer_sites = Vec::with_capacity(model.config.n_layers);
    for layer in 0..model.config.n_layers {
        let enc = |kind: SiteKind, role: SiteRole| {
            encoder_from_profile(profile, SiteId::new(layer, kind, role), timesteps)
        };
        let norm_sites = |kind: SiteKind| -> Result<NormSites> {
            let centered = enc(kind, SiteRole::Centered)?;
            let inv_std = enc(kind, SiteRole::InvStd)?;
            Ok(NormSites {
                variance: ProductSite::new(centered.clone(), centered.clone(), 1.0 / d_model as f64)?,
                scale: ProductSite::new(centered, inv_std, 1.0)?,
            })
        };
        layer_sites.push(LayerSites {
            ln1: norm_sites(SiteKind::LayerNorm1)?,
            ln2: norm_sites(SiteKind::LayerNorm2)?,
            // The attention 1/sqrt(d_head) scaling folds into the intensity
            // matrix, mirroring the 1/n pre-scaling of the layernorm variance.
            qk: ProductSite::new(
                enc(SiteKind::QkProduct, SiteRole::Left)?,
                enc(SiteKind::QkProduct, SiteRole::Right)?,
                qk_scale,
            )?,
            softmax: ProductSite::new(
                enc(SiteKind::SoftmaxProduct, SiteRole::Left)?,
                enc(SiteKind::SoftmaxProduct, SiteRole::Right)?,
                1.0,
            )?,
            av: ProductSite::new(
                enc(SiteKind::AvProduct, SiteRole::Left)?,
                enc(SiteKind::AvProduct, SiteRole::Right)?,
                1.0,
            )?,
        });
    }

    Ok(SpikingTransformer {
        model: model.clone(),
        timesteps,
        n_act,
        n_other,
        opset,
        layer_sites,
    })
}

impl SpikingTransformer {
    pub fn forward_spiking(&self, input: &TokenGrid) -> Result<(TokenGrid, RunStats)> {
        let (out, _, stats) = self.forward_spiking_traced(input)?;
        Ok((out, stats))
    }

    /// Spiking forward that also returns the grid after every layer.
    pub fn forward_spiking_traced(
        &self,
        input: &TokenGrid,
    ) -> Result<(TokenGrid, Vec<TokenGrid>, RunStats)> {
        let cfg = &self.model.config;
        if input.len() != cfg.seq_len || input.iter().any(|r| r.len() != cfg.d_model) {
            return Err(Error::ShapeMismatch(format!(
                "input must be seq_len={} by d_model={}",
                cfg.seq_len, cfg.d_model
            )));
        }
        let mut stats = RunStats::default();
        let mut traces = Vec::with_capacity(self.model.layers.len());
        let mut x = input.clone();
        for (l, (layer, sites)) in self.model.layers.iter().zip(&self.layer_sites).enumerate() {
            x = self.layer_forward(l, layer, sites, &x, &mut stats)?;
            traces.push(x.clone());
        }
        Ok((x, traces, stats))
    }

    fn spiking_norm(
        &self,
        prefix: &str,
        sites: &NormSites,
        gamma: &[f64],
        beta: &[f64],
        x: &TokenGrid,
        stats: &mut RunStats,
    ) -> Result<TokenGrid> {
        let mut out = Vec::with_capacity(x.len());
        for row in x {
            let (normed, ln_stats) =
                spiking_layernorm(&self.opset, &sites.variance, &sites.scale, row, gamma, beta, LN_EPS)?;
            stats.at(format!("{prefix}/variance")).absorb(&ln_stats.variance);
            stats.at(format!("{prefix}/inv_sqrt")).absorb(&ln_stats.inv_sqrt);
            stats.at(format!("{prefix}/scale")).absorb(&ln_stats.scale);
            out.push(normed);
        }
        Ok(out)
    }

    fn layer_forward(
        &self,
        l: usize,
        layer: &super::reference::LayerWeights,
        sites: &LayerSites,
        x: &TokenGrid,
        stats: &mut RunStats,
    ) -> Result<TokenGrid> {
        let cfg = &self.model.config;
        let d_head = cfg.d_head();

        let h = self.spiking_norm(
            &format!("L{l}/ln1"),
            &sites.ln1,
            &layer.ln1_gamma,
            &layer.ln1_beta,
            x,
            stats,
        )?;

        // Weight-activation products stay standard accumulation.
        let q = matmul_bias(&h, &layer.wq, &layer.bq);
        let k = matmul_bias(&h, &layer.wk, &layer.bk);
        let v = matmul_bias(&h, &layer.wv, &layer.bv);

        let mut ctx = vec![vec![0.0; cfg.d_model]; cfg.seq_len];
        for head in 0..cfg.n_heads {
            let qh = head_slice(&q, head, d_head);
            let kh = head_slice(&k, head, d_head);
            let vh = head_slice(&v, head, d_head);
            let kt = transpose(&kh);

            let (scores, mstats) =
                spike_matmul(&qh, &kt, &sites.qk.left, &sites.qk.right, &sites.qk.matrix)?;
            stats.absorb_matmul(&format!("L{l}/qk"), self.timesteps, &mstats);

            let mut probs = Vec::with_capacity(scores.len());
            for row in &scores {
                let (p, softmax_stats) = spiking_softmax(&self.opset, &sites.softmax, row)?;
                stats.at(format!("L{l}/softmax/exp")).absorb(&softmax_stats.exp);
                stats
                    .at(format!("L{l}/softmax/reciprocal"))
                    .absorb(&softmax_stats.reciprocal);
                stats
                    .at(format!("L{l}/softmax/product"))
                    .absorb(&softmax_stats.product);
                probs.push(p);
            }

            let (ctx_h, mstats) =
                spike_matmul(&probs, &vh, &sites.av.left, &sites.av.right, &sites.av.matrix)?;
            stats.absorb_matmul(&format!("L{l}/av"), self.timesteps, &mstats);
            for (i, row) in ctx_h.iter().enumerate() {
                for (c, &val) in row.iter().enumerate() {
                    ctx[i][head * d_head + c] = val;
                }
            }
        }
        let attn = matmul_bias(&ctx, &layer.wo, &layer.bo);
        let x = add_grids(x, &attn);

        let h2 = self.spiking_norm(
            &format!("L{l}/ln2"),
            &sites.ln2,
            &layer.ln2_gamma,
            &layer.ln2_beta,
            &x,
            stats,
        )?;
        let pre = matmul_bias(&h2, &layer.w1, &layer.b1);
        let activation = self.opset.slot(match cfg.activation {
            super::reference::ActivationKind::Gelu => TargetKind::Gelu,
            super::reference::ActivationKind::Tanh => TargetKind::Tanh,
        })?;
        let mut act = Vec::with_capacity(pre.len());
        for row in &pre {
            let (vals, act_stats) = spiking_activation(activation, row);
            stats.at(format!("L{l}/act")).absorb(&act_stats);
            act.push(vals);
        }
        let ff = matmul_bias(&act, &layer.w2, &layer.b2);
        Ok(add_grids(&x, &ff))
    }

    /// Structural audit: every nonlinear or activation-activation site and
    /// the backend serving it after conversion.
    pub fn audit(&self) -> ConversionAudit {
        let mut spiking_sites = Vec::new();
        for l in 0..self.layer_sites.len() {
            spiking_sites.push(format!("L{l}/ln1"));
            spiking_sites.push(format!("L{l}/ln2"));
            spiking_sites.push(format!("L{l}/qk"));
            spiking_sites.push(format!("L{l}/softmax"));
            spiking_sites.push(format!("L{l}/av"));
            spiking_sites.push(format!("L{l}/act"));
        }
        ConversionAudit {
            spiking_sites,
            float_nonlinearities: 0,
            float_activation_products: 0,
            // Six weight-activation linear maps per layer: Q, K, V, O, FF1, FF2.
            weight_linear_ops: 6 * self.layer_sites.len(),
            residual_additions: 2 * self.layer_sites.len(),
        }
    }
}

/// What remains float after conversion (weight linears and residual adds)
/// and what became spike-driven.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionAudit {
    pub spiking_sites: Vec<String>,
    pub float_nonlinearities: usize,
    pub float_activation_products: usize,
    pub weight_linear_ops: usize,
    pub residual_additions: usize,
}
