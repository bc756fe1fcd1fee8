//! Energy estimation and approximation-bound diagnostics.
//!
//! Energy follows the accumulate-vs-multiply-accumulate model: spiking
//! modules cost synaptic operations (SOPs) at `E_AC` each, while the float
//! network costs FLOPs at `E_MAC` each. Bound calculators evaluate the
//! empirical / parametric / quantization gap terms for FS and MBE neurons
//! with all big-O constants set to 1, so outputs are comparable up to
//! constants only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-operation energy constants in picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        EnergyConstants {
            e_mac: 4.6,
            e_ac: 0.9,
        }
    }
}

impl EnergyConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_mac > 0.0) || !(self.e_ac > 0.0) {
            return Err(Error::invalid("energy constants must be positive"));
        }
        Ok(())
    }
}

fn check_rate(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!(
            "firing rate must lie in [0, 1], got {eta}"
        )));
    }
    Ok(())
}

/// Energy of a single MBE module over `T` timesteps:
/// `T * eta * basis_count * channels * heads * E_AC` picojoules.
pub fn energy_mbe(
    timesteps: usize,
    eta: f64,
    basis_count: usize,
    channels: usize,
    heads: usize,
    consts: &EnergyConstants,
) -> Result<f64> {
    consts.validate()?;
    check_rate(eta)?;
    Ok(timesteps as f64 * eta * basis_count as f64 * channels as f64 * heads as f64 * consts.e_ac)
}

/// Energy of spike-driven multiplication:
/// `T^2 * eta1 * eta2 * op_count * E_AC` picojoules.
pub fn energy_fp_mult(
    timesteps: usize,
    eta1: f64,
    eta2: f64,
    op_count: usize,
    consts: &EnergyConstants,
) -> Result<f64> {
    consts.validate()?;
    check_rate(eta1)?;
    check_rate(eta2)?;
    let t = timesteps as f64;
    Ok(t * t * eta1 * eta2 * op_count as f64 * consts.e_ac)
}

/// SNN-to-ANN energy ratio `(sops * E_AC) / (flops * E_MAC)`.
pub fn energy_ratio(sops: f64, flops: f64, consts: &EnergyConstants) -> Result<f64> {
    consts.validate()?;
    if !(flops > 0.0) {
        return Err(Error::invalid(format!(
            "flops must be positive, got {flops}"
        )));
    }
    Ok(sops * consts.e_ac / (flops * consts.e_mac))
}

/// Inputs to the bound-term calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub timesteps: usize,
    pub basis_count: usize,
    pub samples: usize,
    /// Lipschitz constant of the target.
    pub lipschitz: f64,
    /// Maximum absolute value of the target.
    pub y_max: f64,
    /// L1 norm of spike intensities (FS) or readout weights (MBE).
    pub l1_norm: f64,
    /// Absolute scale parameter (MBE only).
    pub alpha_abs: f64,
    /// Largest time constant across schedules (MBE only).
    pub tau_max: f64,
    pub dt: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.basis_count == 0 {
            return Err(Error::invalid("counts must be >= 1"));
        }
        if self.samples < 2 {
            return Err(Error::invalid("sample count must be >= 2"));
        }
        for (name, v) in [
            ("lipschitz", self.lipschitz),
            ("y_max", self.y_max),
            ("l1_norm", self.l1_norm),
            ("alpha_abs", self.alpha_abs),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.tau_max > 0.0) || !(self.dt > 0.0) {
            return Err(Error::invalid("tau_max and dt must be positive"));
        }
        Ok(())
    }
}

/// Empirical, parametric and quantization gap values (constants suppressed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub empirical: f64,
    pub parametric: f64,
    pub quantization: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.empirical + self.parametric + self.quantization
    }
}

/// FS neuron gap terms:
/// `sqrt(T ln T ln M / M)`, `L_f |y|_max / T`, `||d||_1 / T`.
pub fn bound_fs(inputs: &BoundInputs) -> Result<BoundTerms> {
    inputs.validate()?;
    let t = inputs.timesteps as f64;
    let m = inputs.samples as f64;
    Ok(BoundTerms {
        empirical: (t * t.ln() * m.ln() / m).sqrt(),
        parametric: inputs.lipschitz * inputs.y_max / t,
        quantization: inputs.l1_norm / t,
    })
}

/// MBE neuron gap terms:
/// `sqrt(N ln N ln M / M)`, `L_f |y|_max / (N T)`,
/// `||w||_1 |alpha| tau_max / (T dt)`.
pub fn bound_mbe(inputs: &BoundInputs) -> Result<BoundTerms> {
    inputs.validate()?;
    let t = inputs.timesteps as f64;
    let n = inputs.basis_count as f64;
    let m = inputs.samples as f64;
    Ok(BoundTerms {
        empirical: (n * n.ln() * m.ln() / m).sqrt(),
        parametric: inputs.lipschitz * inputs.y_max / (n * t),
        quantization: inputs.l1_norm * inputs.alpha_abs * inputs.tau_max / (t * inputs.dt),
    })
}

/// Learnable parameter count of an FS neuron: `3T`.
pub fn fs_param_count(timesteps: usize) -> usize {
    3 * timesteps
}

/// Learnable parameter count of an MBE neuron: `5N`
/// (three time constants, one step size and one weight per basis).
pub fn mbe_param_count(basis_count: usize) -> usize {
    5 * basis_count
}

/// Spike activity of one site: emitted spikes over available slots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiringStats {
    pub spikes: u64,
    pub slots: u64,
}

impl FiringStats {
    pub fn merge(&mut self, other: &FiringStats) {
        self.spikes += other.spikes;
        self.slots += other.slots;
    }
}

/// Firing rate `spikes / (T * N * elements)` of a recorded site, in [0, 1].
pub fn firing_rate(stats: &FiringStats) -> Result<f64> {
    if stats.slots == 0 {
        return Err(Error::invalid("no recorded slots"));
    }
    Ok(stats.spikes as f64 / stats.slots as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONSTS: EnergyConstants = EnergyConstants {
        e_mac: 4.6,
        e_ac: 0.9,
    };

    #[test]
    fn mbe_energy_worked_example() {
        // T=16, eta=0.3822, N=4, C=1, heads=1 -> 22.01 pJ.
        let pj = energy_mbe(16, 0.3822, 4, 1, 1, &CONSTS).unwrap();
        assert!((pj - 22.01472).abs() < 1e-9);
        assert!((pj - 22.01).abs() < 0.01);

        assert_eq!(energy_mbe(16, 0.0, 4, 1, 1, &CONSTS).unwrap(), 0.0);
        let doubled = energy_mbe(16, 0.3822, 4, 2, 1, &CONSTS).unwrap();
        assert_eq!(doubled, 2.0 * pj);
    }

    #[test]
    fn fp_mult_energy_worked_example() {
        let pj = energy_fp_mult(16, 0.0831, 0.0831, 1, &CONSTS).unwrap();
        assert!((pj - 256.0 * 0.0831 * 0.0831 * 0.9).abs() < 1e-12);
        assert!((pj - 1.591).abs() < 1e-3);

        assert_eq!(energy_fp_mult(16, 0.0, 0.5, 3, &CONSTS).unwrap(), 0.0);
        let one = energy_fp_mult(16, 0.1, 0.2, 1, &CONSTS).unwrap();
        let five = energy_fp_mult(16, 0.1, 0.2, 5, &CONSTS).unwrap();
        assert!((five - 5.0 * one).abs() < 1e-12);
    }

    #[test]
    fn rates_outside_unit_interval_rejected() {
        assert!(energy_mbe(16, 1.5, 4, 1, 1, &CONSTS).is_err());
        assert!(energy_mbe(16, -0.1, 4, 1, 1, &CONSTS).is_err());
        assert!(energy_fp_mult(16, 0.5, 2.0, 1, &CONSTS).is_err());
    }

    #[test]
    fn ratio_behaviour() {
        let r = energy_ratio(100.0, 100.0, &CONSTS).unwrap();
        assert!((r - 0.9 / 4.6).abs() < 1e-12);
        assert_eq!(energy_ratio(0.0, 10.0, &CONSTS).unwrap(), 0.0);
        assert!(energy_ratio(1.0, 0.0, &CONSTS).is_err());
        assert!(energy_ratio(1.0, -2.0, &CONSTS).is_err());
    }

    fn base_inputs() -> BoundInputs {
        BoundInputs {
            timesteps: 16,
            basis_count: 4,
            samples: 10_000,
            lipschitz: 1.0,
            y_max: 10.0,
            l1_norm: 20.0,
            alpha_abs: 10.0,
            tau_max: 8.0,
            dt: 1.0,
        }
    }

    #[test]
    fn fs_bound_worked_example() {
        let terms = bound_fs(&base_inputs()).unwrap();
        assert!((terms.empirical - 0.2021).abs() < 1e-4, "{}", terms.empirical);
        assert!((terms.parametric - 0.625).abs() < 1e-12);
        assert!((terms.quantization - 1.25).abs() < 1e-12);

        // T = 1 zeroes the empirical term via ln 1 = 0.
        let mut one = base_inputs();
        one.timesteps = 1;
        assert_eq!(bound_fs(&one).unwrap().empirical, 0.0);

        // Doubling T halves the 1/T terms.
        let mut doubled = base_inputs();
        doubled.timesteps = 32;
        let d = bound_fs(&doubled).unwrap();
        assert!((d.parametric - terms.parametric / 2.0).abs() < 1e-12);
        assert!((d.quantization - terms.quantization / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mbe_bound_worked_example() {
        let inputs = BoundInputs {
            l1_norm: 1.0,
            ..base_inputs()
        };
        let terms = bound_mbe(&inputs).unwrap();
        assert!((terms.empirical - 0.0715).abs() < 1e-4, "{}", terms.empirical);
        assert!((terms.parametric - 0.15625).abs() < 1e-12);
        assert!((terms.quantization - 5.0).abs() < 1e-12);

        let mut single = inputs;
        single.basis_count = 1;
        assert_eq!(bound_mbe(&single).unwrap().empirical, 0.0);

        // Quadrupling N quarters the parametric term.
        let mut quad = inputs;
        quad.basis_count = 16;
        let q = bound_mbe(&quad).unwrap();
        assert!((q.parametric - terms.parametric / 4.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_monotone_in_denominators() {
        let base = BoundInputs {
            l1_norm: 1.0,
            ..base_inputs()
        };
        let t0 = bound_mbe(&base).unwrap();
        for (field, check_terms) in [("t", 0), ("n", 1), ("m", 2)] {
            let mut bigger = base;
            match field {
                "t" => bigger.timesteps *= 2,
                "n" => bigger.basis_count *= 2,
                _ => bigger.samples *= 4,
            }
            let t1 = bound_mbe(&bigger).unwrap();
            match check_terms {
                0 => {
                    assert!(t1.parametric < t0.parametric);
                    assert!(t1.quantization < t0.quantization);
                }
                1 => assert!(t1.parametric < t0.parametric),
                _ => assert!(t1.empirical < t0.empirical),
            }
        }
        assert!(bound_mbe(&BoundInputs {
            samples: 1,
            ..base
        })
        .is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(fs_param_count(16), 48);
        assert_eq!(mbe_param_count(4), 20);
        assert_eq!(mbe_param_count(8), 40);
    }

    #[test]
    fn firing_rate_bounds() {
        assert!(firing_rate(&FiringStats::default()).is_err());
        let silent = FiringStats {
            spikes: 0,
            slots: 640,
        };
        assert_eq!(firing_rate(&silent).unwrap(), 0.0);
        let saturated = FiringStats {
            spikes: 640,
            slots: 640,
        };
        assert_eq!(firing_rate(&saturated).unwrap(), 1.0);
        let mut merged = silent;
        merged.merge(&saturated);
        assert_eq!(firing_rate(&merged).unwrap(), 0.5);
    }
}
