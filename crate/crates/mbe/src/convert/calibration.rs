//! Per-site input-range and histogram collection from float forwards.
//!
//! Sites are addressed by layer, operation kind and operand role, so signed
//! operands of one product are calibrated independently.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use super::reference::{FloatTransformer, ForwardHook, TokenGrid};
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    LayerNorm1,
    LayerNorm2,
    QkProduct,
    SoftmaxProduct,
    AvProduct,
    Activation,
}

impl SiteKind {
    fn as_str(&self) -> &'static str {
        match self {
            SiteKind::LayerNorm1 => "ln1",
            SiteKind::LayerNorm2 => "ln2",
            SiteKind::QkProduct => "qk",
            SiteKind::SoftmaxProduct => "softmax",
            SiteKind::AvProduct => "av",
            SiteKind::Activation => "act",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteRole {
    Left,
    Right,
    Centered,
    InvStd,
    Input,
}

impl SiteRole {
    fn as_str(&self) -> &'static str {
        match self {
            SiteRole::Left => "left",
            SiteRole::Right => "right",
            SiteRole::Centered => "centered",
            SiteRole::InvStd => "inv_std",
            SiteRole::Input => "input",
        }
    }
}

/// (layer, op kind, operand role) address of one calibrated stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteId {
    pub layer: usize,
    pub kind: SiteKind,
    pub role: SiteRole,
}

impl SiteId {
    pub fn new(layer: usize, kind: SiteKind, role: SiteRole) -> Self {
        SiteId { layer, kind, role }
    }

    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L{}/{}/{}",
            self.layer,
            self.kind.as_str(),
            self.role.as_str()
        )
    }
}

/// Range, histogram and sample count of one calibrated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub layer: usize,
    pub kind: SiteKind,
    pub role: SiteRole,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<u64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub bins: usize,
    pub sites: BTreeMap<String, SiteRecord>,
}

impl CalibrationProfile {
    pub fn record(&self, site: &SiteId) -> Option<&SiteRecord> {
        self.sites.get(&site.key())
    }

    pub fn range(&self, site: &SiteId) -> Option<(f64, f64)> {
        self.record(site).map(|r| (r.min, r.max))
    }
}

#[derive(Default)]
struct Collector {
    layer: usize,
    values: BTreeMap<SiteId, Vec<f64>>,
}

impl Collector {
    fn push_all(&mut self, site: SiteId, grid: &TokenGrid) {
        let bucket = self.values.entry(site).or_default();
        for row in grid {
            bucket.extend_from_slice(row);
        }
    }

    fn push_slice(&mut self, site: SiteId, values: &[f64]) {
        self.values.entry(site).or_default().extend_from_slice(values);
    }
}

impl ForwardHook for Collector {
    fn enter_layer(&mut self, layer: usize) {
        self.layer = layer;
    }

    fn layernorm_input(&mut self, which: u8, x: &TokenGrid) {
        let kind = if which == 1 {
            SiteKind::LayerNorm1
        } else {
            SiteKind::LayerNorm2
        };
        let centered = SiteId::new(self.layer, kind, SiteRole::Centered);
        let inv_std_site = SiteId::new(self.layer, kind, SiteRole::InvStd);
        for row in x {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
            let var = c.iter().map(|v| v * v).sum::<f64>() / n;
            let inv_std = 1.0 / (var + super::reference::LN_EPS).sqrt();
            self.push_slice(centered, &c);
            self.push_slice(inv_std_site, &[inv_std]);
        }
    }

    fn attention_inputs(&mut self, q: &TokenGrid, k: &TokenGrid, v: &TokenGrid) {
        self.push_all(SiteId::new(self.layer, SiteKind::QkProduct, SiteRole::Left), q);
        self.push_all(SiteId::new(self.layer, SiteKind::QkProduct, SiteRole::Right), k);
        self.push_all(SiteId::new(self.layer, SiteKind::AvProduct, SiteRole::Right), v);
    }

    fn softmax_row(&mut self, scores: &[f64]) {
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|x| (x - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        self.push_slice(
            SiteId::new(self.layer, SiteKind::SoftmaxProduct, SiteRole::Left),
            &exps,
        );
        self.push_slice(
            SiteId::new(self.layer, SiteKind::SoftmaxProduct, SiteRole::Right),
            &[1.0 / total],
        );
    }

    fn attention_probs(&mut self, probs: &TokenGrid) {
        self.push_all(SiteId::new(self.layer, SiteKind::AvProduct, SiteRole::Left), probs);
    }

    fn activation_input(&mut self, pre: &TokenGrid) {
        self.push_all(
            SiteId::new(self.layer, SiteKind::Activation, SiteRole::Input),
            pre,
        );
    }
}

/// Run float forwards over the batches and record min/max/histogram per site.
pub fn calibrate(model: &FloatTransformer, batches: &[TokenGrid]) -> Result<CalibrationProfile> {
    if batches.is_empty() {
        return Err(Error::invalid("calibration requires at least one batch"));
    }
    let mut collector = Collector::default();
    for batch in batches {
        if batch.len() != model.config.seq_len
            || batch.iter().any(|row| row.len() != model.config.d_model)
        {
            return Err(Error::ShapeMismatch(format!(
                "batch shape does not match seq_len={} d_model={}",
                model.config.seq_len, model.config.d_model
            )));
        }
        model.forward_hooked(batch, &mut collector);
    }

    let mut sites = BTreeMap::new();
    for (site, values) in collector.values {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in &values {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite activation at site {site}"
                )));
            }
            min = min.min(v);
            max = max.max(v);
        }
        let width = max - min;
        let mut histogram = vec![0u64; HISTOGRAM_BINS];
        for &v in &values {
            let bin = if width == 0.0 {
                0
            } else {
                (((v - min) / width) * HISTOGRAM_BINS as f64).min(HISTOGRAM_BINS as f64 - 1.0)
                    as usize
            };
            histogram[bin] += 1;
        }
        sites.insert(
            site.key(),
            SiteRecord {
                layer: site.layer,
                kind: site.kind,
                role: site.role,
                min,
                max,
                histogram,
                count: values.len() as u64,
            },
        );
    }
    Ok(CalibrationProfile {
        bins: HISTOGRAM_BINS,
        sites,
    })
}
