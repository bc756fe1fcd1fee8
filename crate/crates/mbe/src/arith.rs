//! Spike-driven floating-point multiplication.
//!
//! Values are spike-encoded by identity encoders with fixed binary-geometric
//! intensities. A product of two encoded values is the sum over the Hadamard
//! product of a precomputed intensity matrix (outer product of the two
//! intensity schedules) with the binary spike outer product, plus constant
//! offset corrections for signed ranges. The intensity matrix is input
//! independent and can be shared across a whole network.

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::neuron::SpikeTrain;

/// Spike encoder for an approximate identity mapping over a fixed range.
///
/// Parameters are fixed, not learned. A value `x` in `[lo, hi]` is encoded as
/// the binary expansion of `x - lo` over intensities `(hi-lo) * 2^-(t+1)`, so
/// decoding reproduces `x` within `(hi-lo) * 2^-T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEncoder {
    pub lo: f64,
    pub hi: f64,
    pub timesteps: usize,
    intensities: Vec<f64>,
}

impl IdentityEncoder {
    pub fn new(lo: f64, hi: f64, timesteps: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!(
                "encoder range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if timesteps == 0 {
            return Err(Error::invalid("timestep count must be >= 1"));
        }
        let width = hi - lo;
        let intensities = (0..timesteps)
            .map(|t| width * 0.5f64.powi(t as i32 + 1))
            .collect();
        Ok(IdentityEncoder {
            lo,
            hi,
            timesteps,
            intensities,
        })
    }

    /// Offset added back at decode time (the range's lower bound).
    pub fn offset(&self) -> f64 {
        self.lo
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// Quantization step: `(hi - lo) * 2^-T`.
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) * 0.5f64.powi(self.timesteps as i32)
    }

    /// Spike-encode `x`. Out-of-range inputs are clamped and flagged.
    pub fn encode(&self, x: f64) -> Encoded {
        let clamped = !(x >= self.lo && x <= self.hi);
        let x = x.clamp(self.lo, self.hi);
        let mut residue = x - self.lo;
        let mut bits = vec![false; self.timesteps];
        for (t, &d) in self.intensities.iter().enumerate() {
            if residue >= d {
                bits[t] = true;
                residue -= d;
            }
        }
        Encoded {
            train: SpikeTrain { bits },
            clamped,
        }
    }

    /// Decoded value: `lo + sum_t d[t] * s[t]`.
    pub fn decode(&self, train: &SpikeTrain) -> f64 {
        let mut acc = 0.0;
        for (t, &bit) in train.bits.iter().enumerate() {
            if bit {
                acc += self.intensities[t];
            }
        }
        self.lo + acc
    }

    /// Encode-then-decode: the quantized representative of `x`.
    pub fn quantize(&self, x: f64) -> f64 {
        self.decode(&self.encode(x).train)
    }
}

/// Result of spike-encoding one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub train: SpikeTrain,
    /// True when the input fell outside the encoder range and was clamped.
    pub clamped: bool,
}

pub fn make_identity_encoder(lo: f64, hi: f64, timesteps: usize) -> Result<IdentityEncoder> {
    IdentityEncoder::new(lo, hi, timesteps)
}

/// Precomputed T x T matrix `scale * (d outer d')`, input independent and
/// immutable at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityMatrix {
    values: Vec<f64>,
    timesteps: usize,
    pub scale: f64,
    /// Ranges of the two source encoders, for provenance checks.
    pub left_range: (f64, f64),
    pub right_range: (f64, f64),
}

impl IntensityMatrix {
    pub fn new(left: &IdentityEncoder, right: &IdentityEncoder, scale: f64) -> Result<Self> {
        if left.timesteps != right.timesteps {
            return Err(Error::invalid(format!(
                "encoder timestep counts differ: {} vs {}",
                left.timesteps, right.timesteps
            )));
        }
        let t = left.timesteps;
        let mut values = Vec::with_capacity(t * t);
        for &di in left.intensities() {
            for &dj in right.intensities() {
                values.push(scale * di * dj);
            }
        }
        Ok(IntensityMatrix {
            values,
            timesteps: t,
            scale,
            left_range: (left.lo, left.hi),
            right_range: (right.lo, right.hi),
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `sum_ij (D . S)_ij` where `S = s outer s'`: only spike-gated additions.
    pub fn masked_sum(&self, left: &SpikeTrain, right: &SpikeTrain) -> Result<f64> {
        if left.len() != self.timesteps || right.len() != self.timesteps {
            return Err(Error::ShapeMismatch(format!(
                "spike trains of length {} and {} against T={}",
                left.len(),
                right.len(),
                self.timesteps
            )));
        }
        let mut acc = 0.0;
        for (i, &si) in left.bits.iter().enumerate() {
            if !si {
                continue;
            }
            let row = &self.values[i * self.timesteps..(i + 1) * self.timesteps];
            for (j, &sj) in right.bits.iter().enumerate() {
                if sj {
                    acc += row[j];
                }
            }
        }
        Ok(acc)
    }
}

/// Rank-1 binary spike matrix `S = s outer s'`. Mostly useful in tests; the
/// multiply path keeps the factors and never materializes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeMatrix {
    pub bits: Vec<bool>,
    pub timesteps: usize,
}

impl SpikeMatrix {
    pub fn outer(left: &SpikeTrain, right: &SpikeTrain) -> Self {
        let t = left.len();
        let mut bits = Vec::with_capacity(t * right.len());
        for &si in &left.bits {
            for &sj in &right.bits {
                bits.push(si && sj);
            }
        }
        SpikeMatrix {
            bits,
            timesteps: t,
        }
    }
}

/// Concurrent saturation counter: clamped encodes over total encodes.
#[derive(Debug, Default)]
pub struct SaturationCounter {
    clamped: AtomicU64,
    total: AtomicU64,
}

impl SaturationCounter {
    pub fn record(&self, clamped: bool) {
        self.total.fetch_add(1, Ordering::Relaxed);
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn clamped(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }
}

/// Product of one multiplication with saturation flags for both operands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductOutcome {
    pub value: f64,
    pub left_clamped: bool,
    pub right_clamped: bool,
}

/// Spike-driven product of two values.
///
/// With offsets `lo` and spike-decoded magnitudes `m`, the product expands as
/// `(lo1 + m1) * (lo2 + m2)`; `lo1 * lo2` is a constant, the cross terms are
/// constant-weighted spike sums, and `m1 * m2` is the masked intensity-matrix
/// sum. The result equals the product of the decoded operands up to float
/// rounding, scaled by the matrix's `scale`.
pub fn spike_multiply(
    left: &IdentityEncoder,
    x1: f64,
    right: &IdentityEncoder,
    x2: f64,
    matrix: &IntensityMatrix,
) -> Result<ProductOutcome> {
    if left.timesteps != matrix.timesteps() || right.timesteps != matrix.timesteps() {
        return Err(Error::invalid(format!(
            "encoder timesteps ({}, {}) do not match matrix T={}",
            left.timesteps,
            right.timesteps,
            matrix.timesteps()
        )));
    }
    let e1 = left.encode(x1);
    let e2 = right.encode(x2);
    let value = spike_product_decoded(left, &e1.train, right, &e2.train, matrix)?;
    Ok(ProductOutcome {
        value,
        left_clamped: e1.clamped,
        right_clamped: e2.clamped,
    })
}

/// Product from already-encoded spike trains.
pub fn spike_product_decoded(
    left: &IdentityEncoder,
    s1: &SpikeTrain,
    right: &IdentityEncoder,
    s2: &SpikeTrain,
    matrix: &IntensityMatrix,
) -> Result<f64> {
    let m1 = left.decode(s1) - left.lo;
    let m2 = right.decode(s2) - right.lo;
    let cross = matrix.masked_sum(s1, s2)?;
    Ok(matrix.scale * (left.lo * right.lo + left.lo * m2 + right.lo * m1) + cross)
}

/// Grid product where every output entry is a sum of spike-driven products:
/// `out[i][j] = sum_k left[i][k] * right[k][j]`, with operands encoded once
/// per side. Returns the grid plus saturation counts for both operands.
pub fn spike_matmul(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    left: &IdentityEncoder,
    right: &IdentityEncoder,
    matrix: &IntensityMatrix,
) -> Result<(Vec<Vec<f64>>, MatmulStats)> {
    let rows = a.len();
    if rows == 0 {
        return Err(Error::ShapeMismatch("empty left operand".into()));
    }
    let inner = a[0].len();
    if a.iter().any(|r| r.len() != inner) {
        return Err(Error::ShapeMismatch("ragged left operand".into()));
    }
    if b.len() != inner {
        return Err(Error::ShapeMismatch(format!(
            "inner dimensions disagree: {} vs {}",
            inner,
            b.len()
        )));
    }
    let cols = b[0].len();
    if b.iter().any(|r| r.len() != cols) {
        return Err(Error::ShapeMismatch("ragged right operand".into()));
    }

    let mut stats = MatmulStats::default();
    let mut enc_a = Vec::with_capacity(rows);
    for row in a {
        let mut out = Vec::with_capacity(inner);
        for &v in row {
            let e = left.encode(v);
            stats.left_total += 1;
            stats.left_clamped += e.clamped as u64;
            stats.left_spikes += e.train.count_ones();
            out.push(e.train);
        }
        enc_a.push(out);
    }
    let mut enc_b = Vec::with_capacity(inner);
    for row in b {
        let mut out = Vec::with_capacity(cols);
        for &v in row {
            let e = right.encode(v);
            stats.right_total += 1;
            stats.right_clamped += e.clamped as u64;
            stats.right_spikes += e.train.count_ones();
            out.push(e.train);
        }
        enc_b.push(out);
    }

    let mut result = vec![vec![0.0; cols]; rows];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for k in 0..inner {
                acc += spike_product_decoded(left, &enc_a[i][k], right, &enc_b[k][j], matrix)?;
            }
            result[i][j] = acc;
        }
    }
    Ok((result, stats))
}

/// Encoder activity during one grid product.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatmulStats {
    pub left_spikes: u64,
    pub left_total: u64,
    pub left_clamped: u64,
    pub right_spikes: u64,
    pub right_total: u64,
    pub right_clamped: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_examples() {
        let e = IdentityEncoder::new(0.0, 8.0, 3).unwrap();
        assert_eq!(e.intensities(), &[4.0, 2.0, 1.0]);
        assert_eq!(e.offset(), 0.0);

        let enc = e.encode(5.0);
        assert_eq!(enc.train.bits, vec![true, false, true]);
        assert!(!enc.clamped);
        assert_eq!(e.decode(&enc.train), 5.0);

        // x = lo encodes to silence.
        let enc = e.encode(0.0);
        assert_eq!(enc.train.count_ones(), 0);
        assert_eq!(e.decode(&enc.train), 0.0);

        // x = hi - eps saturates every step.
        let enc = e.encode(8.0 - 1e-9);
        assert_eq!(enc.train.bits, vec![true, true, true]);

        let shifted = IdentityEncoder::new(-4.0, 4.0, 3).unwrap();
        assert_eq!(shifted.offset(), -4.0);
        assert_eq!(shifted.intensities(), &[4.0, 2.0, 1.0]);

        let wide = IdentityEncoder::new(0.0, 62.0, 16).unwrap();
        assert!((wide.step() - 62.0 * 0.5f64.powi(16)).abs() < 1e-18);
    }

    #[test]
    fn encoder_rejects_empty_range() {
        assert!(IdentityEncoder::new(1.0, 1.0, 4).is_err());
        assert!(IdentityEncoder::new(2.0, 1.0, 4).is_err());
        assert!(IdentityEncoder::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn out_of_range_is_clamped_and_flagged() {
        let e = IdentityEncoder::new(-1.0, 1.0, 8).unwrap();
        let enc = e.encode(2.0);
        assert!(enc.clamped);
        assert!((e.decode(&enc.train) - 1.0).abs() <= e.step());
        let enc = e.encode(-3.0);
        assert!(enc.clamped);
        assert_eq!(e.decode(&enc.train), -1.0);
        assert!(!e.encode(0.5).clamped);
    }

    #[test]
    fn quantization_error_below_step() {
        let e = IdentityEncoder::new(-3.0, 5.0, 12).unwrap();
        let step = e.step();
        for i in 0..200 {
            let x = -3.0 + 8.0 * (i as f64 / 200.0);
            let q = e.quantize(x);
            assert!((x - q).abs() < step, "x={x} q={q}");
            assert!(q <= x + 1e-15, "binary truncation never rounds up");
        }
    }

    #[test]
    fn multiply_hand_case() {
        let e = IdentityEncoder::new(0.0, 8.0, 3).unwrap();
        let d = IntensityMatrix::new(&e, &e, 1.0).unwrap();
        // 5 * 3 = (4+1)(2+1) = 15 exactly on dyadic grids.
        let out = spike_multiply(&e, 5.0, &e, 3.0, &d).unwrap();
        assert_eq!(out.value, 15.0);

        // Zero operand gives an empty spike matrix.
        assert_eq!(spike_multiply(&e, 0.0, &e, 3.0, &d).unwrap().value, 0.0);
    }

    #[test]
    fn multiply_with_signed_offsets() {
        let e = IdentityEncoder::new(-4.0, 4.0, 3).unwrap();
        let d = IntensityMatrix::new(&e, &e, 1.0).unwrap();
        // -2 and 3 are exactly representable on the dyadic grid.
        let out = spike_multiply(&e, -2.0, &e, 3.0, &d).unwrap();
        assert_eq!(out.value, -6.0);
    }

    #[test]
    fn multiply_equals_decoded_product() {
        let e1 = IdentityEncoder::new(-4.0, 4.0, 16).unwrap();
        let e2 = IdentityEncoder::new(0.0, 8.0, 16).unwrap();
        let d = IntensityMatrix::new(&e1, &e2, 1.0).unwrap();
        for i in 0..100 {
            let x1 = -4.0 + 8.0 * (i as f64 / 100.0) + 0.013;
            let x2 = 8.0 * ((i * 37 % 100) as f64 / 100.0) + 0.007;
            let out = spike_multiply(&e1, x1, &e2, x2, &d).unwrap();
            let want = e1.quantize(x1) * e2.quantize(x2);
            // Dyadic widths make both routes exact in f64.
            assert_eq!(out.value, want, "x1={x1} x2={x2}");
        }
    }

    #[test]
    fn mismatched_timesteps_rejected() {
        let e1 = IdentityEncoder::new(0.0, 1.0, 8).unwrap();
        let e2 = IdentityEncoder::new(0.0, 1.0, 16).unwrap();
        assert!(IntensityMatrix::new(&e1, &e2, 1.0).is_err());
        let d = IntensityMatrix::new(&e1, &e1, 1.0).unwrap();
        assert!(spike_multiply(&e2, 0.5, &e2, 0.5, &d).is_err());
    }

    #[test]
    fn masked_sum_matches_explicit_hadamard() {
        let e = IdentityEncoder::new(0.0, 3.0, 6).unwrap();
        let d = IntensityMatrix::new(&e, &e, 1.0).unwrap();
        let s1 = e.encode(1.9).train;
        let s2 = e.encode(2.6).train;
        let fast = d.masked_sum(&s1, &s2).unwrap();
        let mat = SpikeMatrix::outer(&s1, &s2);
        let mut slow = 0.0;
        for (v, &m) in d.values().iter().zip(&mat.bits) {
            if m {
                slow += v;
            }
        }
        assert_eq!(fast, slow);
    }

    #[test]
    fn matmul_identity_passthrough() {
        let enc = IdentityEncoder::new(0.0, 4.0, 16).unwrap();
        let d = IntensityMatrix::new(&enc, &enc, 1.0).unwrap();
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let grid = vec![vec![0.5, 1.25], vec![2.0, 3.5]];
        let (out, _) = spike_matmul(&eye, &grid, &enc, &enc, &d).unwrap();
        for (row_out, row_in) in out.iter().zip(&grid) {
            for (o, i) in row_out.iter().zip(row_in) {
                assert_eq!(*o, *i, "identity matmul must pass dyadic values through");
            }
        }
    }

    #[test]
    fn matmul_matches_decoded_float_product() {
        let ea = IdentityEncoder::new(-2.0, 2.0, 16).unwrap();
        let eb = IdentityEncoder::new(-1.0, 3.0, 16).unwrap();
        let d = IntensityMatrix::new(&ea, &eb, 1.0).unwrap();
        let a: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| -2.0 + 0.23 * ((i * 4 + j) as f64 % 17.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| -1.0 + 0.19 * ((i * 5 + j) as f64 % 20.0)).collect())
            .collect();
        let (out, _) = spike_matmul(&a, &b, &ea, &eb, &d).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut want = 0.0;
                for k in 0..4 {
                    want += ea.quantize(a[i][k]) * eb.quantize(b[k][j]);
                }
                assert_eq!(out[i][j], want, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn matmul_shape_errors() {
        let e = IdentityEncoder::new(0.0, 1.0, 4).unwrap();
        let d = IntensityMatrix::new(&e, &e, 1.0).unwrap();
        let a = vec![vec![0.1, 0.2]];
        let b = vec![vec![0.3]];
        assert!(spike_matmul(&a, &b, &e, &e, &d).is_err());
    }

    #[test]
    fn saturation_counter_accumulates() {
        let c = SaturationCounter::default();
        c.record(false);
        c.record(true);
        c.record(true);
        assert_eq!(c.total(), 3);
        assert_eq!(c.clamped(), 2);
    }
}
