//! Reference float transformer block, calibrate-fit-swap conversion, and
//! spiking forward execution with fidelity comparison.
//!
//! Conversion never touches weights: linear layers stay standard weighted
//! accumulation over spike-decoded activations, residual additions stay exact,
//! and only the four non-spike-friendly op classes are replaced (activation
//! functions, softmax, layernorm, and activation-activation matrix products).

mod calibration;
mod reference;
mod report;
mod spiking;

pub use calibration::{calibrate, CalibrationProfile, SiteId, SiteKind, SiteRecord, SiteRole};
pub use reference::{
    build_reference, random_input, weights_fingerprint, ActivationKind, FloatTransformer,
    RefTransformerConfig, TokenGrid,
};
pub use report::{compare, run_fidelity, FidelityReport, LayerFidelity, SiteReport};
pub use spiking::{convert, ConversionAudit, RunStats, SiteActivity, SpikingTransformer};
