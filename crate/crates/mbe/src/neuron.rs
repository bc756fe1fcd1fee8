//! Deterministic simulation of few-spike (FS) and multi-basis exponential-decay
//! (MBE) neuron dynamics over discrete timesteps.
//!
//! Both neuron families share the same membrane mechanics: the potential is
//! initialized to the input, a spike fires whenever the potential reaches the
//! current threshold, each spike subtracts the current reset value, and the
//! decoded output is the intensity-weighted spike count.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// A length-T binary spike sequence, the only inter-op information carrier in
/// converted paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub bits: Vec<bool>,
}

impl SpikeTrain {
    pub fn zeros(len: usize) -> Self {
        SpikeTrain {
            bits: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of emitted spikes.
    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// Exponentially decaying parameter sequence: value at step `t` is
/// `alpha * exp(-t * dt / tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub alpha: f64,
    pub tau: f64,
    pub dt: f64,
    pub len: usize,
}

impl DecaySchedule {
    pub fn new(alpha: f64, tau: f64, dt: f64, len: usize) -> Result<Self> {
        validate_decay_args(tau, dt, len)?;
        Ok(DecaySchedule {
            alpha,
            tau,
            dt,
            len,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len)
            .map(|t| self.alpha * (-(t as f64) * self.dt / self.tau).exp())
            .collect()
    }
}

fn validate_decay_args(tau: f64, dt: f64, len: usize) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if len == 0 {
        return Err(Error::invalid("timestep count must be >= 1"));
    }
    Ok(())
}

/// Evaluate the decay schedule `alpha * exp(-t * dt / tau)` for `t = 0..len`.
///
/// Element 0 equals `alpha` exactly.
pub fn decay_schedule(alpha: f64, tau: f64, dt: f64, len: usize) -> Result<Vec<f64>> {
    Ok(DecaySchedule::new(alpha, tau, dt, len)?.values())
}

/// Per-timestep FS neuron parameters: spike intensities, reset magnitudes and
/// firing thresholds, all of length T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsParams {
    pub intensities: Vec<f64>,
    pub resets: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl FsParams {
    pub fn new(intensities: Vec<f64>, resets: Vec<f64>, thresholds: Vec<f64>) -> Result<Self> {
        if intensities.is_empty() {
            return Err(Error::invalid("timestep count must be >= 1"));
        }
        if intensities.len() != resets.len() || intensities.len() != thresholds.len() {
            return Err(Error::invalid(format!(
                "schedule lengths disagree: {} intensities, {} resets, {} thresholds",
                intensities.len(),
                resets.len(),
                thresholds.len()
            )));
        }
        Ok(FsParams {
            intensities,
            resets,
            thresholds,
        })
    }

    /// Identical geometric schedule for all three parameter roles:
    /// `scale * 2^-(t+1)` at step t, so representable values tile `[0, scale)`
    /// with step `scale * 2^-T`.
    pub fn binary(timesteps: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if timesteps == 0 {
            return Err(Error::invalid("timestep count must be >= 1"));
        }
        let seq: Vec<f64> = (0..timesteps)
            .map(|t| scale * 0.5f64.powi(t as i32 + 1))
            .collect();
        Ok(FsParams {
            intensities: seq.clone(),
            resets: seq.clone(),
            thresholds: seq,
        })
    }

    /// Quantization step of the binary schedule: `scale * 2^-T`.
    pub fn binary_step(timesteps: usize, scale: f64) -> f64 {
        scale * 0.5f64.powi(timesteps as i32)
    }

    pub fn timesteps(&self) -> usize {
        self.intensities.len()
    }
}

/// Convenience alias mirroring the operation vocabulary.
pub fn binary_fs_params(timesteps: usize, scale: f64) -> Result<FsParams> {
    FsParams::binary(timesteps, scale)
}

/// Decay time constants for one MBE basis. Schedule amplitude is
/// `neuron.alpha * self.scale`; `scale` is +-1 in the common case and lets a
/// neuron mix bases that cover positive and negative input ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbeBasis {
    pub tau_intensity: f64,
    pub tau_reset: f64,
    pub tau_threshold: f64,
    pub dt: f64,
    pub scale: f64,
}

impl MbeBasis {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_intensity", self.tau_intensity),
            ("tau_reset", self.tau_reset),
            ("tau_threshold", self.tau_threshold),
            ("dt", self.dt),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.scale.is_finite() || self.scale == 0.0 {
            return Err(Error::invalid(format!(
                "basis scale must be finite and nonzero, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    fn materialize(&self, alpha: f64, timesteps: usize) -> FsParams {
        let amp = alpha * self.scale;
        let gen = |tau: f64| -> Vec<f64> {
            (0..timesteps)
                .map(|t| amp * (-(t as f64) * self.dt / tau).exp())
                .collect()
        };
        FsParams {
            intensities: gen(self.tau_intensity),
            resets: gen(self.tau_reset),
            thresholds: gen(self.tau_threshold),
        }
    }
}

/// How an MBE neuron's per-timestep schedules are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasisParams {
    /// Each basis holds decay constants; schedules follow the exponential law.
    Decay(Vec<MbeBasis>),
    /// Each basis holds raw per-timestep schedules (the no-decay ablation).
    Free(Vec<FsParams>),
}

impl BasisParams {
    pub fn basis_count(&self) -> usize {
        match self {
            BasisParams::Decay(b) => b.len(),
            BasisParams::Free(b) => b.len(),
        }
    }
}

/// N parallel spike-generating bases with a weighted readout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MbeNeuron {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub timesteps: usize,
    pub bases: BasisParams,
    #[serde(skip)]
    compiled: OnceLock<Vec<FsParams>>,
}

impl PartialEq for MbeNeuron {
    fn eq(&self, other: &Self) -> bool {
        self.alpha == other.alpha
            && self.weights == other.weights
            && self.timesteps == other.timesteps
            && self.bases == other.bases
    }
}

impl MbeNeuron {
    pub fn new(alpha: f64, weights: Vec<f64>, timesteps: usize, bases: BasisParams) -> Result<Self> {
        let neuron = MbeNeuron {
            alpha,
            weights,
            timesteps,
            bases,
            compiled: OnceLock::new(),
        };
        neuron.validate()?;
        Ok(neuron)
    }

    pub fn basis_count(&self) -> usize {
        self.bases.basis_count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.basis_count();
        if n == 0 {
            return Err(Error::invalid("basis count must be >= 1"));
        }
        if self.weights.len() != n {
            return Err(Error::invalid(format!(
                "{} weights for {} bases",
                self.weights.len(),
                n
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("readout weights must be finite"));
        }
        if self.timesteps == 0 {
            return Err(Error::invalid("timestep count must be >= 1"));
        }
        match &self.bases {
            BasisParams::Decay(bases) => {
                for b in bases {
                    b.validate()?;
                }
            }
            BasisParams::Free(bases) => {
                for b in bases {
                    if b.timesteps() != self.timesteps {
                        return Err(Error::invalid(format!(
                            "free schedule length {} does not match T={}",
                            b.timesteps(),
                            self.timesteps
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Materialized per-basis schedules, computed once per neuron.
    pub fn schedules(&self) -> &[FsParams] {
        self.compiled.get_or_init(|| match &self.bases {
            BasisParams::Decay(bases) => bases
                .iter()
                .map(|b| b.materialize(self.alpha, self.timesteps))
                .collect(),
            BasisParams::Free(bases) => bases.clone(),
        })
    }

    pub fn simulate(&self, x: f64) -> SpikeRecord {
        simulate_bases(self.schedules(), &self.weights, x, false)
    }

    /// Like [`simulate`](Self::simulate) but retains the membrane trace.
    pub fn simulate_traced(&self, x: f64) -> SpikeRecord {
        simulate_bases(self.schedules(), &self.weights, x, true)
    }
}

/// Simulation output: spike matrix, decoded value, optional membrane trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeRecord {
    /// One train per basis.
    pub spikes: Vec<SpikeTrain>,
    /// Decoded output: sum over bases of `w[n] * sum_t d_n[t] * s_n[t]`,
    /// accumulated in basis-then-time order.
    pub approx: f64,
    /// Membrane potential at the start of each step, per basis.
    pub membrane_trace: Option<Vec<Vec<f64>>>,
}

impl SpikeRecord {
    /// Total spikes across all bases.
    pub fn spike_count(&self) -> u64 {
        self.spikes.iter().map(|s| s.count_ones()).sum()
    }
}

fn simulate_bases(schedules: &[FsParams], weights: &[f64], x: f64, trace: bool) -> SpikeRecord {
    let mut spikes = Vec::with_capacity(schedules.len());
    let mut traces = if trace {
        Some(Vec::with_capacity(schedules.len()))
    } else {
        None
    };
    let mut approx = 0.0;
    for (params, &w) in schedules.iter().zip(weights) {
        let t_steps = params.timesteps();
        let mut bits = vec![false; t_steps];
        let mut row = if trace {
            Some(Vec::with_capacity(t_steps))
        } else {
            None
        };
        let mut u = x;
        let mut out = 0.0;
        for t in 0..t_steps {
            if let Some(r) = row.as_mut() {
                r.push(u);
            }
            if u >= params.thresholds[t] {
                bits[t] = true;
                out += params.intensities[t];
                u -= params.resets[t];
            }
        }
        approx += w * out;
        spikes.push(SpikeTrain { bits });
        if let (Some(ts), Some(r)) = (traces.as_mut(), row) {
            ts.push(r);
        }
    }
    SpikeRecord {
        spikes,
        approx,
        membrane_trace: traces,
    }
}

/// Run FS neuron dynamics on one input. The membrane starts at `x`, a spike
/// fires whenever the potential reaches the step's threshold, and each spike
/// subtracts the step's reset value.
pub fn fs_simulate(params: &FsParams, x: f64) -> SpikeRecord {
    simulate_bases(std::slice::from_ref(params), &[1.0], x, false)
}

/// Run MBE neuron dynamics on one input; every basis starts at `u[0] = x`.
pub fn mbe_simulate(neuron: &MbeNeuron, x: f64) -> SpikeRecord {
    neuron.simulate(x)
}
