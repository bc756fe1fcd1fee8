//! Fidelity metrics between float and spiking forwards.

use serde::{Deserialize, Serialize};

use super::reference::{FloatTransformer, TokenGrid};
use super::spiking::{RunStats, SpikingTransformer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerFidelity {
    pub layer: usize,
    pub mse: f64,
    pub linf: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteReport {
    pub site: String,
    pub firing_rate: f64,
    pub spikes: u64,
    pub slots: u64,
    pub clamped: u64,
    pub encodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub mse: f64,
    pub linf: f64,
    pub cosine: f64,
    pub per_layer: Vec<LayerFidelity>,
    pub sites: Vec<SiteReport>,
    /// Total synaptic operations (sum of per-site spike counts).
    pub sops: u64,
}

fn check_shapes(a: &TokenGrid, b: &TokenGrid) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(ra, rb)| ra.len() != rb.len()) {
        return Err(Error::ShapeMismatch(
            "fidelity comparison requires identical shapes".into(),
        ));
    }
    if a.is_empty() || a[0].is_empty() {
        return Err(Error::invalid("fidelity comparison over empty grids"));
    }
    Ok(())
}

pub(crate) fn grid_metrics(a: &TokenGrid, b: &TokenGrid) -> (f64, f64, f64) {
    let mut sq = 0.0;
    let mut linf: f64 = 0.0;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    let mut count = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        for (&x, &y) in ra.iter().zip(rb) {
            let d = x - y;
            sq += d * d;
            linf = linf.max(d.abs());
            dot += x * y;
            na += x * x;
            nb += y * y;
            count += 1;
        }
    }
    let mse = sq / count as f64;
    let cosine = if sq == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    };
    (mse, linf, cosine)
}

fn site_reports(stats: &RunStats) -> Vec<SiteReport> {
    stats
        .sites
        .iter()
        .map(|(site, a)| SiteReport {
            site: site.clone(),
            firing_rate: if a.slots == 0 {
                0.0
            } else {
                a.spikes as f64 / a.slots as f64
            },
            spikes: a.spikes,
            slots: a.slots,
            clamped: a.clamped,
            encodes: a.encodes,
        })
        .collect()
}

/// Final-output fidelity plus per-site firing/saturation from `stats`.
pub fn compare(
    float_out: &TokenGrid,
    spiking_out: &TokenGrid,
    stats: &RunStats,
) -> Result<FidelityReport> {
    check_shapes(float_out, spiking_out)?;
    let (mse, linf, cosine) = grid_metrics(float_out, spiking_out);
    Ok(FidelityReport {
        mse,
        linf,
        cosine,
        per_layer: Vec::new(),
        sites: site_reports(stats),
        sops: stats.total_sops(),
    })
}

/// Run float and spiking forwards in lockstep on the same input and report
/// per-layer and final fidelity.
pub fn run_fidelity(
    model: &FloatTransformer,
    snn: &SpikingTransformer,
    input: &TokenGrid,
) -> Result<FidelityReport> {
    let (float_out, float_traces) = model.forward_traced(input);
    let (spiking_out, spiking_traces, stats) = snn.forward_spiking_traced(input)?;
    let mut report = compare(&float_out, &spiking_out, &stats)?;
    report.per_layer = float_traces
        .iter()
        .zip(&spiking_traces)
        .enumerate()
        .map(|(layer, (f, s))| {
            let (mse, linf, cosine) = grid_metrics(f, s);
            LayerFidelity {
                layer,
                mse,
                linf,
                cosine,
            }
        })
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::spiking::RunStats;

    #[test]
    fn identical_grids_are_perfect() {
        let g = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        let report = compare(&g, &g, &RunStats::default()).unwrap();
        assert_eq!(report.mse, 0.0);
        assert_eq!(report.linf, 0.0);
        assert_eq!(report.cosine, 1.0);
        assert_eq!(report.sops, 0);
    }

    #[test]
    fn orthogonal_vectors_have_zero_cosine() {
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0]];
        let report = compare(&a, &b, &RunStats::default()).unwrap();
        assert_eq!(report.cosine, 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = vec![vec![1.0, 2.0]];
        let b = vec![vec![1.0]];
        assert!(compare(&a, &b, &RunStats::default()).is_err());
    }
}
