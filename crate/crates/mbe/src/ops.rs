//! Spike-driven implementations of transformer nonlinearities.
//!
//! GELU/Tanh are direct MBE approximations. The exponential splits into an
//! integer power of two (exact scaling) and a fractional part approximated on
//! [0, 1]. Reciprocal and inverse square root extract mantissa and exponent
//! bit-exactly, approximate on the mantissa interval, and scale back by exact
//! powers of two. Softmax and LayerNorm compose these pieces with
//! spike-driven multiplication.

use serde::{Deserialize, Serialize};

use crate::arith::{IdentityEncoder, IntensityMatrix};
use crate::error::{Error, Result};
use crate::fit::{FittedApproximator, TargetKind};
use crate::neuron::MbeNeuron;

/// Mantissa/exponent split of a positive float: `mantissa * 2^exponent == x`
/// with `mantissa` in `[0.5, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrexpParts {
    pub mantissa: f64,
    pub exponent: i32,
}

/// Bit-level mantissa/exponent extraction for finite positive inputs.
pub fn frexp_decompose(x: f64) -> Result<FrexpParts> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!(
            "frexp requires a finite positive input, got {x}"
        )));
    }
    let (mantissa, exponent) = frexp(x);
    Ok(FrexpParts { mantissa, exponent })
}

fn frexp(x: f64) -> (f64, i32) {
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    if exp_bits == 0 {
        // Subnormal: renormalize through a 2^64 scale.
        if x == 0.0 {
            return (x, 0);
        }
        let (m, e) = frexp(x * f64::from_bits(0x43f0000000000000));
        return (m, e - 64);
    }
    (
        f64::from_bits((bits & 0x800fffffffffffff) | 0x3fe0000000000000),
        exp_bits - 0x3fe,
    )
}

/// Exact power of two, including subnormals; saturates to 0 / infinity
/// outside the representable range.
pub fn pow2(e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if (-1074..=-1023).contains(&e) {
        f64::from_bits(1u64 << (e + 1074))
    } else if e > 1023 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// The fitted approximators a converted network draws on. Slots are filled
/// on demand; using an absent slot is a `NotFitted` error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikingOpSet {
    pub gelu: Option<FittedApproximator>,
    pub tanh: Option<FittedApproximator>,
    pub exp2frac: Option<FittedApproximator>,
    pub inv: Option<FittedApproximator>,
    pub invsqrt: Option<FittedApproximator>,
}

impl SpikingOpSet {
    pub fn slot(&self, kind: TargetKind) -> Result<&FittedApproximator> {
        let slot = match kind {
            TargetKind::Gelu => &self.gelu,
            TargetKind::Tanh => &self.tanh,
            TargetKind::Exp2Frac => &self.exp2frac,
            TargetKind::Inv => &self.inv,
            TargetKind::InvSqrt => &self.invsqrt,
            other => {
                return Err(Error::invalid(format!(
                    "op set has no slot for target '{}'",
                    other.as_str()
                )))
            }
        };
        slot.as_ref()
            .ok_or_else(|| Error::NotFitted(format!("no fitted approximator for '{}'", kind.as_str())))
    }

    pub fn insert(&mut self, fitted: FittedApproximator) -> Result<()> {
        match fitted.target.kind {
            TargetKind::Gelu => self.gelu = Some(fitted),
            TargetKind::Tanh => self.tanh = Some(fitted),
            TargetKind::Exp2Frac => self.exp2frac = Some(fitted),
            TargetKind::Inv => self.inv = Some(fitted),
            TargetKind::InvSqrt => self.invsqrt = Some(fitted),
            other => {
                return Err(Error::invalid(format!(
                    "op set has no slot for target '{}'",
                    other.as_str()
                )))
            }
        }
        Ok(())
    }
}

/// Spike and saturation activity of one operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStats {
    pub spikes: u64,
    pub slots: u64,
    pub clamped: u64,
    pub encodes: u64,
}

impl OpStats {
    pub fn merge(&mut self, other: &OpStats) {
        self.spikes += other.spikes;
        self.slots += other.slots;
        self.clamped += other.clamped;
        self.encodes += other.encodes;
    }
}

fn simulate_counted(neuron: &MbeNeuron, x: f64, stats: &mut OpStats) -> f64 {
    let rec = neuron.simulate(x);
    stats.spikes += rec.spike_count();
    stats.slots += (neuron.basis_count() * neuron.timesteps) as u64;
    rec.approx
}

/// Elementwise MBE activation with clipping to the fitted interval.
pub fn spiking_activation(op: &FittedApproximator, xs: &[f64]) -> (Vec<f64>, OpStats) {
    let mut stats = OpStats::default();
    let out = xs
        .iter()
        .map(|&x| {
            stats.encodes += 1;
            let clipped = x.clamp(op.target.lo, op.target.hi);
            if clipped != x {
                stats.clamped += 1;
            }
            simulate_counted(&op.neuron, clipped, &mut stats)
        })
        .collect();
    (out, stats)
}

/// `e^x` as `2^k * 2^frac` with the fractional power approximated by the
/// fitted `2^x` neuron and the `2^k` factor applied as an exact scaling.
///
/// The split keeps `frac` in `(0, 1]`: a spiking neuron with positive
/// thresholds is structurally silent at exactly zero, so integer multiples
/// of `log 2` (including the shifted maximum of every softmax row) must land
/// on the fully-covered upper end of the fitted interval instead.
pub fn spiking_exp(exp2frac: &FittedApproximator, x: f64, stats: &mut OpStats) -> f64 {
    let z = x * std::f64::consts::LOG2_E;
    let k = z.ceil() - 1.0;
    let frac = z - k;
    let fractional = simulate_counted(&exp2frac.neuron, frac, stats);
    let k = k.clamp(-1100.0, 1100.0) as i32;
    fractional * pow2(k)
}

/// `1/x` via mantissa/exponent split: `2^-E * (1/M)` with `M` in `[0.5, 1)`.
pub fn spiking_reciprocal(inv: &FittedApproximator, x: f64, stats: &mut OpStats) -> Result<f64> {
    let parts = frexp_decompose(x)?;
    let mantissa_inv = simulate_counted(&inv.neuron, parts.mantissa, stats);
    Ok(mantissa_inv * pow2(-parts.exponent))
}

/// `1/sqrt(x)`: after the mantissa/exponent split, an odd exponent folds one
/// factor of two into the mantissa so the remaining exponent is even and the
/// mantissa stays inside the fitted [0.5, 2) interval.
pub fn spiking_inv_sqrt(invsqrt: &FittedApproximator, x: f64, stats: &mut OpStats) -> Result<f64> {
    let parts = frexp_decompose(x)?;
    let (mantissa, exponent) = if parts.exponent % 2 != 0 {
        (parts.mantissa * 2.0, parts.exponent - 1)
    } else {
        (parts.mantissa, parts.exponent)
    };
    let mantissa_rsqrt = simulate_counted(&invsqrt.neuron, mantissa, stats);
    Ok(mantissa_rsqrt * pow2(-exponent / 2))
}

/// Encoders and the shared intensity matrix for one multiplication site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSite {
    pub left: IdentityEncoder,
    pub right: IdentityEncoder,
    pub matrix: IntensityMatrix,
}

impl ProductSite {
    pub fn new(left: IdentityEncoder, right: IdentityEncoder, scale: f64) -> Result<Self> {
        let matrix = IntensityMatrix::new(&left, &right, scale)?;
        Ok(ProductSite {
            left,
            right,
            matrix,
        })
    }

    pub fn multiply(&self, x1: f64, x2: f64, stats: &mut OpStats) -> Result<f64> {
        if self.left.timesteps != self.matrix.timesteps()
            || self.right.timesteps != self.matrix.timesteps()
        {
            return Err(Error::invalid("product site timesteps disagree"));
        }
        let e1 = self.left.encode(x1);
        let e2 = self.right.encode(x2);
        stats.encodes += 2;
        stats.clamped += e1.clamped as u64 + e2.clamped as u64;
        stats.spikes += e1.train.count_ones() + e2.train.count_ones();
        stats.slots += 2 * self.matrix.timesteps() as u64;
        crate::arith::spike_product_decoded(&self.left, &e1.train, &self.right, &e2.train, &self.matrix)
    }
}

/// Activity of one softmax evaluation, split by stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftmaxStats {
    pub exp: OpStats,
    pub reciprocal: OpStats,
    pub product: OpStats,
}

/// Spiking softmax: per-element spiking exp, exact accumulation, spiking
/// reciprocal of the sum, and one spike-driven product per output.
///
/// Inputs are shifted by their maximum first; the shift is an exact linear
/// operation and keeps the exponent terms in (0, 1].
pub fn spiking_softmax(
    opset: &SpikingOpSet,
    product_site: &ProductSite,
    xs: &[f64],
) -> Result<(Vec<f64>, SoftmaxStats)> {
    if xs.is_empty() {
        return Err(Error::invalid("softmax input must be non-empty"));
    }
    let exp2frac = opset.slot(TargetKind::Exp2Frac)?;
    let inv = opset.slot(TargetKind::Inv)?;
    let mut stats = SoftmaxStats::default();

    let shift = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs
        .iter()
        .map(|&x| spiking_exp(exp2frac, x - shift, &mut stats.exp))
        .collect();
    let total: f64 = exps.iter().sum();
    let reciprocal = spiking_reciprocal(inv, total, &mut stats.reciprocal)?;
    let out = exps
        .iter()
        .map(|&e| product_site.multiply(e, reciprocal, &mut stats.product))
        .collect::<Result<Vec<f64>>>()?;
    Ok((out, stats))
}

/// Canonical fitting interval per approximator slot. GELU inputs are
/// constrained to (-120, 10); the mantissa-domain ops use the intervals their
/// decompositions guarantee.
pub fn canonical_interval(kind: TargetKind) -> Result<(f64, f64)> {
    match kind {
        TargetKind::Gelu => Ok((-120.0, 10.0)),
        TargetKind::Tanh => Ok((-8.0, 8.0)),
        TargetKind::Exp2Frac => Ok((0.0, 1.0)),
        TargetKind::Inv => Ok((0.5, 1.0)),
        TargetKind::InvSqrt => Ok((0.5, 2.0)),
        other => Err(Error::invalid(format!(
            "no canonical interval for '{}'",
            other.as_str()
        ))),
    }
}

/// Fit the full op set a conversion needs: the activation at `n_act` bases
/// and the softmax/layernorm helpers at `n_other`, all over `timesteps`.
pub fn fit_default_opset(
    activation: TargetKind,
    timesteps: usize,
    n_act: usize,
    n_other: usize,
    seed: u64,
) -> Result<SpikingOpSet> {
    use crate::fit::{fit_mbe, FitConfig, TargetFn};
    let mut set = SpikingOpSet::default();
    for (kind, n, seed_offset) in [
        (activation, n_act, 1),
        (TargetKind::Exp2Frac, n_other, 2),
        (TargetKind::Inv, n_other, 3),
        (TargetKind::InvSqrt, n_other, 4),
    ] {
        let (lo, hi) = canonical_interval(kind)?;
        let target = TargetFn::new(kind, lo, hi)?;
        let cfg = FitConfig::new(n, timesteps).with_seed(seed.wrapping_add(seed_offset));
        set.insert(fit_mbe(&target, &cfg)?)?;
    }
    Ok(set)
}

/// Activity of one layernorm evaluation, split by stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNormStats {
    pub variance: OpStats,
    pub inv_sqrt: OpStats,
    pub scale: OpStats,
}

/// Spiking LayerNorm.
///
/// Mean subtraction and the affine output transform are exact; the squared
/// deviations come from spike products whose intensity matrix is pre-scaled
/// by `1/n`, and the inverse standard deviation uses the spiking inverse
/// square root on `variance + eps`.
pub fn spiking_layernorm(
    opset: &SpikingOpSet,
    variance_site: &ProductSite,
    scale_site: &ProductSite,
    xs: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, LayerNormStats)> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::invalid("layernorm input must be non-empty"));
    }
    if gamma.len() != n || beta.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "gamma/beta lengths {}/{} for input length {n}",
            gamma.len(),
            beta.len()
        )));
    }
    let invsqrt = opset.slot(TargetKind::InvSqrt)?;
    let mut stats = LayerNormStats::default();

    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|&x| x - mean).collect();

    let mut variance = 0.0;
    for &c in &centered {
        variance += variance_site.multiply(c, c, &mut stats.variance)?;
    }
    let inv_std = spiking_inv_sqrt(invsqrt, variance + eps, &mut stats.inv_sqrt)?;

    let mut out = Vec::with_capacity(n);
    for ((&c, &g), &b) in centered.iter().zip(gamma).zip(beta) {
        let scaled = scale_site.multiply(c, inv_std, &mut stats.scale)?;
        out.push(g * scaled + b);
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_mbe, FitConfig, TargetFn};

    fn quick_fit(kind: TargetKind, lo: f64, hi: f64, n: usize) -> FittedApproximator {
        let target = TargetFn::new(kind, lo, hi).unwrap();
        let cfg = FitConfig {
            samples: 3000,
            epochs: 80,
            starts: 2,
            ..FitConfig::new(n, 16)
        }
        .with_seed(17);
        fit_mbe(&target, &cfg).unwrap()
    }

    fn quick_opset() -> SpikingOpSet {
        let mut set = SpikingOpSet::default();
        set.insert(quick_fit(TargetKind::Exp2Frac, 0.0, 1.0, 8)).unwrap();
        set.insert(quick_fit(TargetKind::Inv, 0.5, 1.0, 8)).unwrap();
        set.insert(quick_fit(TargetKind::InvSqrt, 0.5, 2.0, 8)).unwrap();
        set
    }

    #[test]
    fn frexp_examples_and_roundtrip() {
        let p = frexp_decompose(1.0).unwrap();
        assert_eq!((p.mantissa, p.exponent), (0.5, 1));
        let p = frexp_decompose(0.75).unwrap();
        assert_eq!((p.mantissa, p.exponent), (0.75, 0));
        let p = frexp_decompose(6.0).unwrap();
        assert_eq!((p.mantissa, p.exponent), (0.75, 3));

        for &x in &[1e-300, 3.7e-12, 0.001, 0.5, 1.0, 3.0, 1.6e17, 5e-324] {
            let p = frexp_decompose(x).unwrap();
            assert!(p.mantissa >= 0.5 && p.mantissa < 1.0, "mantissa {}", p.mantissa);
            assert_eq!(p.mantissa * pow2(p.exponent), x, "roundtrip for {x}");
        }
    }

    #[test]
    fn frexp_rejects_nonpositive() {
        assert!(frexp_decompose(0.0).is_err());
        assert!(frexp_decompose(-1.0).is_err());
        assert!(frexp_decompose(f64::INFINITY).is_err());
        assert!(frexp_decompose(f64::NAN).is_err());
    }

    #[test]
    fn pow2_is_exact() {
        assert_eq!(pow2(0), 1.0);
        assert_eq!(pow2(10), 1024.0);
        assert_eq!(pow2(-3), 0.125);
        assert_eq!(pow2(2000), f64::INFINITY);
        assert_eq!(pow2(-2000), 0.0);
    }

    #[test]
    fn missing_slot_is_not_fitted() {
        let set = SpikingOpSet::default();
        assert!(matches!(
            set.slot(TargetKind::Gelu),
            Err(Error::NotFitted(_))
        ));
    }

    #[test]
    fn activation_clips_and_tracks_saturation() {
        let gelu = quick_fit(TargetKind::Gelu, -8.0, 8.0, 4);
        let (out, stats) = spiking_activation(&gelu, &[0.0, 100.0, -100.0, 1.0]);
        assert_eq!(out.len(), 4);
        assert_eq!(stats.clamped, 2);
        assert_eq!(stats.encodes, 4);
        assert!(out[0].abs() < 0.1, "gelu(0) ~ 0, got {}", out[0]);
    }

    #[test]
    fn exp_power_of_two_inputs() {
        let set = quick_opset();
        let exp2 = set.slot(TargetKind::Exp2Frac).unwrap();
        let mut stats = OpStats::default();

        let at_zero = spiking_exp(exp2, 0.0, &mut stats);
        assert!((at_zero - 1.0).abs() < 0.05, "e^0 ~ 1, got {at_zero}");

        let at_ln2 = spiking_exp(exp2, std::f64::consts::LN_2, &mut stats);
        assert!((at_ln2 - 2.0).abs() < 0.1, "e^ln2 ~ 2, got {at_ln2}");

        let at_one = spiking_exp(exp2, 1.0, &mut stats);
        assert!(
            (at_one - std::f64::consts::E).abs() < 0.15,
            "e^1 ~ e, got {at_one}"
        );
        assert!(stats.spikes > 0);
    }

    #[test]
    fn reciprocal_and_inv_sqrt_examples() {
        let set = quick_opset();
        let inv = set.slot(TargetKind::Inv).unwrap();
        let invsqrt = set.slot(TargetKind::InvSqrt).unwrap();
        let mut stats = OpStats::default();

        assert!((spiking_reciprocal(inv, 1.0, &mut stats).unwrap() - 1.0).abs() < 0.05);
        assert!((spiking_reciprocal(inv, 4.0, &mut stats).unwrap() - 0.25).abs() < 0.02);
        assert!((spiking_reciprocal(inv, 3.0, &mut stats).unwrap() - 1.0 / 3.0).abs() < 0.02);

        assert!((spiking_inv_sqrt(invsqrt, 1.0, &mut stats).unwrap() - 1.0).abs() < 0.05);
        assert!((spiking_inv_sqrt(invsqrt, 4.0, &mut stats).unwrap() - 0.5).abs() < 0.03);
        // Odd and even exponents both hit the fitted [0.5, 2) interval.
        assert!(
            (spiking_inv_sqrt(invsqrt, 2.0, &mut stats).unwrap() - 1.0 / 2.0f64.sqrt()).abs()
                < 0.03
        );
        assert!((spiking_inv_sqrt(invsqrt, 0.25, &mut stats).unwrap() - 2.0).abs() < 0.1);

        assert!(spiking_reciprocal(inv, 0.0, &mut stats).is_err());
    }

    fn float_softmax(xs: &[f64]) -> Vec<f64> {
        let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|&x| (x - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / total).collect()
    }

    fn softmax_site() -> ProductSite {
        ProductSite::new(
            IdentityEncoder::new(0.0, 1.05, 16).unwrap(),
            IdentityEncoder::new(0.0, 1.05, 16).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn softmax_basics() {
        let set = quick_opset();
        let site = softmax_site();

        let (single, _) = spiking_softmax(&set, &site, &[0.7]).unwrap();
        assert!((single[0] - 1.0).abs() < 0.05, "K=1 gives ~1, got {}", single[0]);

        let (uniform, _) = spiking_softmax(&set, &site, &[0.3; 4]).unwrap();
        for v in &uniform {
            assert!((v - 0.25).abs() < 0.03, "uniform inputs give ~0.25, got {v}");
        }

        let (out, _) = spiking_softmax(&set, &site, &[1.0, 2.0, 3.0]).unwrap();
        let want = float_softmax(&[1.0, 2.0, 3.0]);
        for (o, w) in out.iter().zip(&want) {
            assert!((o - w).abs() < 0.05, "got {o}, want {w}");
        }

        assert!(spiking_softmax(&set, &site, &[]).is_err());
    }

    #[test]
    fn layernorm_basics() {
        let set = quick_opset();
        let centered = IdentityEncoder::new(-4.0, 4.0, 16).unwrap();
        let inv_std_enc = IdentityEncoder::new(0.0, 4.0, 16).unwrap();
        let n = 4;
        let variance_site = ProductSite::new(centered.clone(), centered.clone(), 1.0 / n as f64).unwrap();
        let scale_site = ProductSite::new(centered, inv_std_enc, 1.0).unwrap();
        let gamma = vec![1.0; n];
        let beta = vec![0.5; n];

        // Constant vector: variance collapses to eps, output ~ beta.
        let (out, _) = spiking_layernorm(
            &set,
            &variance_site,
            &scale_site,
            &[2.0; 4],
            &gamma,
            &beta,
            1e-5,
        )
        .unwrap();
        for v in &out {
            assert!((v - 0.5).abs() < 0.05, "constant input gives ~beta, got {v}");
        }

        // [1, -1] normalizes to ~[1, -1] as eps -> 0.
        let variance_site2 =
            ProductSite::new(scale_site.left.clone(), scale_site.left.clone(), 0.5).unwrap();
        let (out, _) = spiking_layernorm(
            &set,
            &variance_site2,
            &scale_site,
            &[1.0, -1.0],
            &[1.0, 1.0],
            &[0.0, 0.0],
            1e-9,
        )
        .unwrap();
        assert!((out[0] - 1.0).abs() < 0.05, "got {}", out[0]);
        assert!((out[1] + 1.0).abs() < 0.05, "got {}", out[1]);
    }

    #[test]
    fn layernorm_shape_errors() {
        let set = quick_opset();
        let enc = IdentityEncoder::new(-1.0, 1.0, 8).unwrap();
        let site = ProductSite::new(enc.clone(), enc, 1.0).unwrap();
        assert!(spiking_layernorm(&set, &site, &site, &[], &[], &[], 1e-5).is_err());
        assert!(
            spiking_layernorm(&set, &site, &site, &[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).is_err()
        );
    }
}
