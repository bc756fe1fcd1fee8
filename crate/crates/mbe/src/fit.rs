//! Fitting FS and MBE neuron parameters to scalar targets on an interval.
//!
//! One fit follows a fixed protocol: uniformly sample the target, initialize
//! the neuron, then run full-batch gradient descent for a fixed number of
//! epochs with an exponentially decayed learning rate. The spike forward pass
//! is always exact; the backward pass routes gradients through a rectangular
//! surrogate window around each threshold. Time constants and step sizes are
//! optimized in log space so they stay positive.
//!
//! Because the loss surface is rugged, each MBE fit runs a small number of
//! starts over different decay-rate palettes (seed-jittered) and keeps the
//! best final-epoch result. Readout weights are initialized by ridge
//! regression on the initial basis responses, which is the exact optimum of
//! the linear readout at initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::neuron::{BasisParams, FsParams, MbeBasis, MbeNeuron};

/// Scalar functions a neuron can be fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Gelu,
    Tanh,
    Silu,
    Relu,
    /// `2^x`, the fractional-power component of the spiking exponential.
    Exp2Frac,
    /// `1/x`.
    Inv,
    /// `1/sqrt(x)`.
    InvSqrt,
    Identity,
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::Gelu => "gelu",
            TargetKind::Tanh => "tanh",
            TargetKind::Silu => "silu",
            TargetKind::Relu => "relu",
            TargetKind::Exp2Frac => "exp2frac",
            TargetKind::Inv => "inv",
            TargetKind::InvSqrt => "invsqrt",
            TargetKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(TargetKind::Gelu),
            "tanh" => Ok(TargetKind::Tanh),
            "silu" => Ok(TargetKind::Silu),
            "relu" => Ok(TargetKind::Relu),
            "exp2frac" => Ok(TargetKind::Exp2Frac),
            "inv" => Ok(TargetKind::Inv),
            "invsqrt" => Ok(TargetKind::InvSqrt),
            "identity" => Ok(TargetKind::Identity),
            other => Err(Error::invalid(format!("unknown target '{other}'"))),
        }
    }
}

/// A target function restricted to a finite interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFn {
    pub kind: TargetKind,
    pub lo: f64,
    pub hi: f64,
}

impl TargetFn {
    pub fn new(kind: TargetKind, lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
            return Err(Error::invalid(format!(
                "interval must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if matches!(kind, TargetKind::Inv | TargetKind::InvSqrt) && !(lo > 0.0) {
            return Err(Error::invalid(format!(
                "{} requires a strictly positive interval, got lo = {lo}",
                kind.as_str()
            )));
        }
        Ok(TargetFn { kind, lo, hi })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            TargetKind::Gelu => x * normal_cdf(x),
            TargetKind::Tanh => x.tanh(),
            TargetKind::Silu => x / (1.0 + (-x).exp()),
            TargetKind::Relu => x.max(0.0),
            TargetKind::Exp2Frac => x.exp2(),
            TargetKind::Inv => 1.0 / x,
            TargetKind::InvSqrt => 1.0 / x.sqrt(),
            TargetKind::Identity => x,
        }
    }
}

/// Standard normal CDF via the error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Draw `m` uniform samples of the target, deterministically from `seed`.
pub fn sample_target(target: &TargetFn, m: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if m < 2 {
        return Err(Error::invalid(format!("sample count must be >= 2, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = target.hi - target.lo;
    Ok((0..m)
        .map(|_| {
            let x = target.lo + width * rng.gen::<f64>();
            (x, target.eval(x))
        })
        .collect())
}

/// Fitting protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Training sample count M.
    pub samples: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub seed: u64,
    /// Basis count N.
    pub basis_count: usize,
    /// Timestep count T.
    pub timesteps: usize,
    /// Width of the rectangular surrogate-gradient window.
    pub surrogate_width: f64,
    /// Independent initializations to try; the best final MSE wins.
    pub starts: usize,
}

impl FitConfig {
    pub fn new(basis_count: usize, timesteps: usize) -> Self {
        FitConfig {
            samples: 10_000,
            epochs: 200,
            lr: 0.01,
            lr_decay: 0.99,
            seed: 0,
            basis_count,
            timesteps,
            surrogate_width: 1.0,
            starts: 3,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::invalid("sample count must be >= 2"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr decay must lie in (0, 1]"));
        }
        if self.basis_count == 0 || self.timesteps == 0 {
            return Err(Error::invalid("basis and timestep counts must be >= 1"));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(Error::invalid("surrogate width must be positive"));
        }
        if self.starts == 0 {
            return Err(Error::invalid("starts must be >= 1"));
        }
        Ok(())
    }
}

/// A fitted neuron together with its training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedApproximator {
    pub format_version: u32,
    pub target: TargetFn,
    pub neuron: MbeNeuron,
    /// Final-epoch MSE on the training sample.
    pub mse: f64,
    pub config: FitConfig,
}

/// A fitted FS parameter set together with its training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFs {
    pub target: TargetFn,
    pub params: FsParams,
    pub mse: f64,
    pub init: FsInit,
    pub config: FitConfig,
}

/// FS initialization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FsInit {
    /// Geometric `d = r = vth` schedules scaled to the target range.
    Binary,
    /// All schedule entries drawn uniformly from `(0, scale]`.
    Random,
}

/// Anything that maps an input to a decoded spike readout.
pub trait Approximator {
    fn approximate(&self, x: f64) -> f64;
}

impl Approximator for MbeNeuron {
    fn approximate(&self, x: f64) -> f64 {
        self.simulate(x).approx
    }
}

impl Approximator for FsParams {
    fn approximate(&self, x: f64) -> f64 {
        crate::neuron::fs_simulate(self, x).approx
    }
}

/// Mean squared error of an approximator over a dataset.
pub fn evaluate_mse<A: Approximator + ?Sized>(approx: &A, data: &[(f64, f64)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("dataset must be non-empty"));
    }
    let mut acc = 0.0;
    for &(x, y) in data {
        let diff = approx.approximate(x) - y;
        acc += diff * diff;
    }
    Ok(acc / data.len() as f64)
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Per-step decay factors `(threshold, intensity, reset)` for one basis.
type Profile = (f64, f64, f64);

/// Signed amplitude layout derived from the target's structure.
struct AmplitudePlan {
    /// Nominal scale: max |f| on the interval.
    alpha: f64,
    /// Per-basis multipliers on `alpha` (sign carries the covered side).
    scales: Vec<f64>,
}

fn plan_amplitudes(target: &TargetFn, samples: &[(f64, f64)], n: usize) -> Result<AmplitudePlan> {
    let mut y_absmax: f64 = 0.0;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &(_, y) in samples {
        if !y.is_finite() {
            return Err(Error::invalid("target produced a non-finite value"));
        }
        y_absmax = y_absmax.max(y.abs());
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if y_max - y_min == 0.0 {
        return Err(Error::invalid(
            "constant targets cannot be fitted (no bias term in the readout)",
        ));
    }

    let alpha = y_absmax;

    // Entirely non-positive interval: negative schedules sweep the input
    // range from below; a positive threshold would never fire.
    if target.hi <= 0.0 {
        let amp = target.lo.abs().max(y_absmax) * 1.05;
        return Ok(AmplitudePlan {
            alpha,
            scales: vec![-(amp / alpha); n],
        });
    }

    // How far below zero the target is materially nonzero.
    let mut neg_cover: f64 = 0.0;
    let mut y_neg_absmax: f64 = 0.0;
    for &(x, y) in samples {
        if x < 0.0 && y.abs() > 0.005 * y_absmax {
            neg_cover = neg_cover.max(-x);
            y_neg_absmax = y_neg_absmax.max(y.abs());
        }
    }

    // At least two bases must cover a side whose values matter: their
    // always-on sums on the opposite side can then cancel through the
    // readout, while one alone would pin the crossover error to the side's
    // amplitude.
    let neg_count = if target.lo >= 0.0 || neg_cover == 0.0 || n == 1 {
        0
    } else if y_neg_absmax < 0.1 * y_absmax {
        if n >= 4 {
            2
        } else {
            1
        }
    } else {
        n / 2
    };

    // Positive-side amplitude covers the inputs so threshold sweeps pass
    // through the whole region, not just the output range.
    let pos_scale = y_absmax.max(target.hi) / alpha;
    let mut scales = vec![pos_scale; n];
    if neg_count > 0 {
        let amp_neg = (neg_cover * 1.1).max(y_neg_absmax);
        for s in scales.iter_mut().skip(n - neg_count) {
            *s = -(amp_neg / alpha);
        }
    }
    Ok(AmplitudePlan { alpha, scales })
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp()
}

/// Random profile: a third of draws tie all three decay rates together
/// (binary-style quantizers), the rest draw each rate independently.
fn random_profile(rng: &mut ChaCha8Rng) -> Profile {
    if rng.gen::<f64>() < 0.33 {
        let rho = log_uniform(rng, 0.30, 0.999);
        (rho, rho, rho)
    } else {
        (
            log_uniform(rng, 0.30, 0.999),
            log_uniform(rng, 0.30, 0.999),
            log_uniform(rng, 0.30, 0.999),
        )
    }
}

/// Build the initial decay bases for one start. Jitter grows with the start
/// index so repeated palettes still explore.
/// Decay rate whose threshold sweep bottoms out at `knot` after T steps,
/// placing the basis's response knee inside the input region.
fn rho_for_knot(knot: f64, amp: f64, timesteps: usize) -> f64 {
    let frac = (knot / amp).clamp(1e-4, 0.995);
    frac.powf(1.0 / (timesteps.max(2) - 1) as f64).clamp(0.05, 0.995)
}

fn init_bases(
    plan: &AmplitudePlan,
    target: &TargetFn,
    cfg: &FitConfig,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<MbeBasis> {
    let n = cfg.basis_count;
    let sigma = 0.05;
    let jitter = |rng: &mut ChaCha8Rng| (sigma * (2.0 * rng.gen::<f64>() - 1.0)).exp();

    // Group bases by covered side; knots spread over each side's inputs.
    let mut group_size = [0usize; 2];
    for &scale in &plan.scales {
        group_size[(scale < 0.0) as usize] += 1;
    }
    let mut group_index = [0usize; 2];

    (0..n)
        .map(|i| {
            let negative = plan.scales[i] < 0.0;
            let amp = (plan.alpha * plan.scales[i]).abs();
            let g = group_index[negative as usize];
            group_index[negative as usize] += 1;
            let size = group_size[negative as usize];

            // Input region this group serves, in magnitude terms.
            let (region_lo, region_hi) = if negative {
                ((-target.hi).max(0.0), -target.lo)
            } else {
                (target.lo.max(0.0), target.hi)
            };
            let cap = (region_hi.min(amp)) * 0.99;

            let (rho_vth, rho_d, rho_r) = if g == 0 {
                // Workhorse: binary identity-style expansion of the range.
                (0.5, 0.5, 0.5)
            } else if start >= 3 {
                random_profile(rng)
            } else {
                // Knot grid over the input region.
                let f = (g as f64 - 0.5) / (size.max(2) - 1) as f64;
                let knot = region_lo.max(0.01 * amp) * (1.0 - f) + cap * f.min(1.0);
                let rho_v = rho_for_knot(knot, amp, cfg.timesteps);
                match start {
                    0 => {
                        if g % 2 == 0 {
                            (rho_v, 0.93, rho_v)
                        } else {
                            (rho_v, rho_v, rho_v)
                        }
                    }
                    1 => (rho_v, 0.95, 0.75),
                    _ => (rho_v, rho_v, rho_v),
                }
            };
            let tau_of = |rho: f64, rng: &mut ChaCha8Rng| -1.0 / rho.ln() * jitter(rng);
            let scale = if start >= 3 && g != 0 && rng.gen::<f64>() < 0.5 {
                plan.scales[i] * log_uniform(rng, 0.35, 1.0)
            } else {
                plan.scales[i]
            };
            MbeBasis {
                tau_threshold: tau_of(rho_vth, rng),
                tau_intensity: tau_of(rho_d, rng),
                tau_reset: tau_of(rho_r, rng),
                dt: 1.0,
                scale,
            }
        })
        .collect()
}

/// Ridge-regression readout weights for fixed basis responses; falls back to
/// uniform 1/N when the normal equations are degenerate.
fn initial_weights(features: &[Vec<f64>], targets: &[f64], n: usize) -> Vec<f64> {
    let m = targets.len();
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (row, &y) in features.iter().zip(targets) {
        for i in 0..n {
            rhs[i] += row[i] * y;
            for j in i..n {
                gram[i * n + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            gram[i * n + j] = gram[j * n + i];
        }
    }
    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    if trace == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let ridge = 1e-9 * trace / n as f64 + 1e-12 * m as f64;
    for i in 0..n {
        gram[i * n + i] += ridge;
    }
    match solve_dense(&mut gram, &mut rhs, n) {
        Some(w) if w.iter().all(|v| v.is_finite()) => w,
        _ => vec![1.0 / n as f64; n],
    }
}

/// Gaussian elimination with partial pivoting on an n x n system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Training engine
// ---------------------------------------------------------------------------

/// Materialized schedules plus log-derivative factors for one basis.
struct BasisRuntime {
    intensities: Vec<f64>,
    resets: Vec<f64>,
    thresholds: Vec<f64>,
    /// Amplitude of this basis, fixing the surrogate window scale.
    amp_abs: f64,
    /// `d[t] * t * dt / tau_d` etc., the per-step derivative of each schedule
    /// w.r.t. its log time constant (and minus that w.r.t. log dt).
    p_intensity: Vec<f64>,
    p_reset: Vec<f64>,
    p_threshold: Vec<f64>,
}

struct DecayState {
    /// Per basis: [log tau_d, log tau_r, log tau_vth, log dt].
    logs: Vec<[f64; 4]>,
    /// Signed amplitude per basis (`alpha * scale`, fixed).
    amps: Vec<f64>,
    weights: Vec<f64>,
}

impl DecayState {
    fn materialize(&self, timesteps: usize) -> Vec<BasisRuntime> {
        self.logs
            .iter()
            .zip(&self.amps)
            .map(|(lg, &amp)| {
                let (tau_d, tau_r, tau_v, dt) =
                    (lg[0].exp(), lg[1].exp(), lg[2].exp(), lg[3].exp());
                let mut rt = BasisRuntime {
                    intensities: Vec::with_capacity(timesteps),
                    resets: Vec::with_capacity(timesteps),
                    thresholds: Vec::with_capacity(timesteps),
                    amp_abs: amp.abs(),
                    p_intensity: Vec::with_capacity(timesteps),
                    p_reset: Vec::with_capacity(timesteps),
                    p_threshold: Vec::with_capacity(timesteps),
                };
                for t in 0..timesteps {
                    let tf = t as f64;
                    let d = amp * (-tf * dt / tau_d).exp();
                    let r = amp * (-tf * dt / tau_r).exp();
                    let v = amp * (-tf * dt / tau_v).exp();
                    rt.intensities.push(d);
                    rt.resets.push(r);
                    rt.thresholds.push(v);
                    rt.p_intensity.push(d * tf * dt / tau_d);
                    rt.p_reset.push(r * tf * dt / tau_r);
                    rt.p_threshold.push(v * tf * dt / tau_v);
                }
                rt
            })
            .collect()
    }
}

struct FreeState {
    schedules: Vec<FsParams>,
    weights: Vec<f64>,
    weights_fixed: bool,
}

enum TrainState {
    Decay(DecayState),
    Free(FreeState),
}

struct TrainOutcome {
    state: TrainState,
    diverged_at: Option<usize>,
}

/// Parameter update rule. Plain descent suits raw per-timestep schedules;
/// log-space decay parameters need the per-parameter scaling of an
/// exponential-moving-average optimizer to stay stable at a fixed rate.
#[derive(Clone, Copy)]
enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    fn step(&self, param: &mut f64, grad: f64, moments: &mut [f64; 2], step_no: usize, lr: f64) {
        match self {
            Optimizer::Sgd => *param -= lr * grad,
            Optimizer::Adam { beta1, beta2, eps } => {
                moments[0] = beta1 * moments[0] + (1.0 - beta1) * grad;
                moments[1] = beta2 * moments[1] + (1.0 - beta2) * grad * grad;
                let t = (step_no + 1) as i32;
                let m_hat = moments[0] / (1.0 - beta1.powi(t));
                let v_hat = moments[1] / (1.0 - beta2.powi(t));
                *param -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Shared forward/backward over the training set with parameter updates.
fn train(
    mut state: TrainState,
    samples: &[(f64, f64)],
    cfg: &FitConfig,
    optimizer: Optimizer,
    refresh_weights: bool,
) -> TrainOutcome {
    let t_steps = cfg.timesteps;
    let n = match &state {
        TrainState::Decay(s) => s.weights.len(),
        TrainState::Free(s) => s.weights.len(),
    };
    let inv_m = 1.0 / samples.len() as f64;

    let mut z_buf = vec![0.0f64; n * t_steps];
    let mut s_buf = vec![false; n * t_steps];
    let mut o_buf = vec![0.0f64; n];

    // Moment state for the EMA optimizer.
    let mut v_logs = vec![[[0.0f64; 2]; 4]; n];
    let mut v_sched: Vec<[Vec<[f64; 2]>; 3]> = (0..n)
        .map(|_| {
            [
                vec![[0.0; 2]; t_steps],
                vec![[0.0; 2]; t_steps],
                vec![[0.0; 2]; t_steps],
            ]
        })
        .collect();
    let mut v_w = vec![[0.0f64; 2]; n];

    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        let runtimes: Vec<BasisRuntime> = match &state {
            TrainState::Decay(s) => s.materialize(t_steps),
            TrainState::Free(s) => s.schedules.iter().map(free_runtime).collect(),
        };
        let weights: Vec<f64> = match &state {
            TrainState::Decay(s) => s.weights.clone(),
            TrainState::Free(s) => s.weights.clone(),
        };

        // Gradient accumulators.
        let mut g_logs = vec![[0.0f64; 4]; n];
        let mut g_sched: Vec<[Vec<f64>; 3]> = (0..n)
            .map(|_| {
                [
                    vec![0.0; t_steps],
                    vec![0.0; t_steps],
                    vec![0.0; t_steps],
                ]
            })
            .collect();
        let mut g_w = vec![0.0f64; n];
        let mut gram = if refresh_weights {
            vec![0.0f64; n * n]
        } else {
            Vec::new()
        };
        let mut rhs = vec![0.0f64; n];
        let decay_mode = matches!(state, TrainState::Decay(_));

        let mut loss = 0.0;
        for &(x, y) in samples {
            // Forward.
            let mut yhat = 0.0;
            for (b, rt) in runtimes.iter().enumerate() {
                let mut u = x;
                let mut o = 0.0;
                let base = b * t_steps;
                for t in 0..t_steps {
                    z_buf[base + t] = u - rt.thresholds[t];
                    let fire = u >= rt.thresholds[t];
                    s_buf[base + t] = fire;
                    if fire {
                        o += rt.intensities[t];
                        u -= rt.resets[t];
                    }
                }
                o_buf[b] = o;
                yhat += weights[b] * o;
            }
            let res = yhat - y;
            loss += res * res;
            let gy = 2.0 * res * inv_m;
            if refresh_weights {
                for i in 0..n {
                    rhs[i] += o_buf[i] * y;
                    for j in i..n {
                        gram[i * n + j] += o_buf[i] * o_buf[j];
                    }
                }
            }

            // Backward through each basis.
            for (b, rt) in runtimes.iter().enumerate() {
                let go = gy * weights[b];
                g_w[b] += gy * o_buf[b];
                if go == 0.0 {
                    continue;
                }
                // Surrogate window proportional to the basis amplitude; a
                // fixed absolute width either drowns small-scale schedules
                // or starves large ones.
                let width = cfg.surrogate_width * 0.1 * rt.amp_abs;
                let half_width = width / 2.0;
                let inv_width = 1.0 / width;
                let base = b * t_steps;
                let mut lambda = 0.0f64;
                for t in (0..t_steps).rev() {
                    let z = z_buf[base + t];
                    let sg = if z.abs() <= half_width { inv_width } else { 0.0 };
                    let a = rt.intensities[t] - rt.resets[t] * lambda;
                    let fired = s_buf[base + t];
                    let c_d = if fired { go } else { 0.0 };
                    let c_r = if fired { -go * lambda } else { 0.0 };
                    let c_v = -go * sg * a;
                    if decay_mode {
                        if fired {
                            let pd = c_d * rt.p_intensity[t];
                            let pr = c_r * rt.p_reset[t];
                            g_logs[b][0] += pd;
                            g_logs[b][1] += pr;
                            g_logs[b][3] -= pd + pr;
                        }
                        if sg != 0.0 {
                            let pv = c_v * rt.p_threshold[t];
                            g_logs[b][2] += pv;
                            g_logs[b][3] -= pv;
                        }
                    } else {
                        if fired {
                            g_sched[b][0][t] += c_d;
                            g_sched[b][1][t] += c_r;
                        }
                        g_sched[b][2][t] += c_v;
                    }
                    if sg != 0.0 {
                        lambda += sg * a;
                    }
                }
            }
        }
        loss *= inv_m;
        if !loss.is_finite() {
            return TrainOutcome {
                state,
                diverged_at: Some(epoch),
            };
        }

        // Update.
        match &mut state {
            TrainState::Decay(s) => {
                for b in 0..n {
                    for k in 0..4 {
                        optimizer.step(&mut s.logs[b][k], g_logs[b][k], &mut v_logs[b][k], epoch, lr);
                    }
                    if !refresh_weights {
                        optimizer.step(&mut s.weights[b], g_w[b], &mut v_w[b], epoch, lr);
                    }
                }
            }
            TrainState::Free(s) => {
                for b in 0..n {
                    for t in 0..t_steps {
                        optimizer.step(
                            &mut s.schedules[b].intensities[t],
                            g_sched[b][0][t],
                            &mut v_sched[b][0][t],
                            epoch,
                            lr,
                        );
                        optimizer.step(
                            &mut s.schedules[b].resets[t],
                            g_sched[b][1][t],
                            &mut v_sched[b][1][t],
                            epoch,
                            lr,
                        );
                        optimizer.step(
                            &mut s.schedules[b].thresholds[t],
                            g_sched[b][2][t],
                            &mut v_sched[b][2][t],
                            epoch,
                            lr,
                        );
                    }
                    if !s.weights_fixed && !refresh_weights {
                        optimizer.step(&mut s.weights[b], g_w[b], &mut v_w[b], epoch, lr);
                    }
                }
            }
        }
        if refresh_weights {
            if let Some(w) = solve_normal_equations(&mut gram, &mut rhs, n) {
                match &mut state {
                    TrainState::Decay(s) => s.weights = w,
                    TrainState::Free(s) => s.weights = w,
                }
            }
        }
        lr *= cfg.lr_decay;
    }

    // One exact readout solve on the final schedules.
    if refresh_weights {
        let runtimes: Vec<BasisRuntime> = match &state {
            TrainState::Decay(s) => s.materialize(t_steps),
            TrainState::Free(s) => s.schedules.iter().map(free_runtime).collect(),
        };
        let features = basis_features(&runtimes, samples, t_steps);
        let targets: Vec<f64> = samples.iter().map(|&(_, y)| y).collect();
        let w = initial_weights(&features, &targets, n);
        match &mut state {
            TrainState::Decay(s) => s.weights = w,
            TrainState::Free(s) => s.weights = w,
        }
    }
    TrainOutcome {
        state,
        diverged_at: None,
    }
}

/// Solve the (symmetric-upper) normal equations accumulated during an epoch.
fn solve_normal_equations(gram: &mut [f64], rhs: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for i in 0..n {
        for j in 0..i {
            gram[i * n + j] = gram[j * n + i];
        }
    }
    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    if trace == 0.0 || !trace.is_finite() {
        return None;
    }
    let ridge = 1e-9 * trace / n as f64;
    for i in 0..n {
        gram[i * n + i] += ridge;
    }
    match solve_dense(gram, rhs, n) {
        Some(w) if w.iter().all(|v| v.is_finite()) => Some(w),
        _ => None,
    }
}

fn free_runtime(p: &FsParams) -> BasisRuntime {
    let amp_abs = p
        .intensities
        .iter()
        .chain(&p.resets)
        .chain(&p.thresholds)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    BasisRuntime {
        intensities: p.intensities.clone(),
        resets: p.resets.clone(),
        thresholds: p.thresholds.clone(),
        amp_abs,
        p_intensity: Vec::new(),
        p_reset: Vec::new(),
        p_threshold: Vec::new(),
    }
}

/// Basis responses at the current parameters, one row per sample.
fn basis_features(
    runtimes: &[BasisRuntime],
    samples: &[(f64, f64)],
    t_steps: usize,
) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|&(x, _)| {
            runtimes
                .iter()
                .map(|rt| {
                    let mut u = x;
                    let mut o = 0.0;
                    for t in 0..t_steps {
                        if u >= rt.thresholds[t] {
                            o += rt.intensities[t];
                            u -= rt.resets[t];
                        }
                    }
                    o
                })
                .collect()
        })
        .collect()
}

/// Candidate pool for the greedy structure search: the deterministic
/// knot-grid anchors plus seeded random single-basis profiles.
fn draw_pool(
    plan: &AmplitudePlan,
    target: &TargetFn,
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<MbeBasis> {
    let mut pool = Vec::new();
    for anchor in 0..3 {
        pool.extend(init_bases(plan, target, cfg, anchor, rng));
    }
    let neg_fraction = plan.scales.iter().filter(|&&s| s < 0.0).count() as f64
        / plan.scales.len() as f64;
    let pos_scale = plan
        .scales
        .iter()
        .cloned()
        .find(|&s| s > 0.0)
        .unwrap_or(1.0);
    let neg_scale = plan
        .scales
        .iter()
        .cloned()
        .find(|&s| s < 0.0)
        .unwrap_or(-pos_scale);
    let randoms = 60 * cfg.basis_count;
    for _ in 0..randoms {
        let (rho_v, rho_d, rho_r) = random_profile(rng);
        let base_scale = if rng.gen::<f64>() < neg_fraction {
            neg_scale
        } else {
            pos_scale
        };
        let scale = if rng.gen::<f64>() < 0.5 {
            base_scale
        } else {
            base_scale * log_uniform(rng, 0.35, 1.0)
        };
        pool.push(MbeBasis {
            tau_threshold: -1.0 / rho_v.ln(),
            tau_intensity: -1.0 / rho_d.ln(),
            tau_reset: -1.0 / rho_r.ln(),
            dt: 1.0,
            scale,
        });
    }
    pool
}

/// Orthogonal matching pursuit over the pool: greedily add the basis most
/// correlated with the residual, re-solving the exact readout each step.
fn select_bases(
    pool: &[MbeBasis],
    alpha: f64,
    samples: &[(f64, f64)],
    targets: &[f64],
    cfg: &FitConfig,
) -> Vec<MbeBasis> {
    let m = samples.len();
    let columns: Vec<Vec<f64>> = pool
        .iter()
        .map(|b| {
            let rt = DecayState {
                logs: logs_of(std::slice::from_ref(b)),
                amps: vec![alpha * b.scale],
                weights: Vec::new(),
            }
            .materialize(cfg.timesteps);
            samples
                .iter()
                .map(|&(x, _)| {
                    let mut u = x;
                    let mut o = 0.0;
                    for t in 0..cfg.timesteps {
                        if u >= rt[0].thresholds[t] {
                            o += rt[0].intensities[t];
                            u -= rt[0].resets[t];
                        }
                    }
                    o
                })
                .collect()
        })
        .collect();
    let norms: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut residual = targets.to_vec();
    let mut selected: Vec<usize> = Vec::new();
    for _ in 0..cfg.basis_count {
        let mut best_idx = None;
        let mut best_score = 0.0;
        for (idx, col) in columns.iter().enumerate() {
            if selected.contains(&idx) || norms[idx] == 0.0 {
                continue;
            }
            let dot: f64 = col.iter().zip(&residual).map(|(a, b)| a * b).sum();
            let score = dot.abs() / norms[idx];
            if best_idx.is_none() || score > best_score {
                best_idx = Some(idx);
                best_score = score;
            }
        }
        let Some(idx) = best_idx else { break };
        selected.push(idx);

        // Exact readout over the selected set, then refresh the residual.
        let k = selected.len();
        let features: Vec<Vec<f64>> = (0..m)
            .map(|row| selected.iter().map(|&i| columns[i][row]).collect())
            .collect();
        let w = initial_weights(&features, targets, k);
        for (row, r) in residual.iter_mut().enumerate() {
            let yhat: f64 = selected
                .iter()
                .zip(&w)
                .map(|(&i, wi)| columns[i][row] * wi)
                .sum();
            *r = targets[row] - yhat;
        }
    }
    // Pad with pool entries if the pool degenerated.
    let mut bases: Vec<MbeBasis> = selected.iter().map(|&i| pool[i].clone()).collect();
    let mut fill = 0;
    while bases.len() < cfg.basis_count {
        bases.push(pool[fill % pool.len()].clone());
        fill += 1;
    }
    bases
}

/// Exact-readout MSE of a basis set at its initialization.
fn readout_mse(
    bases: &[MbeBasis],
    alpha: f64,
    samples: &[(f64, f64)],
    targets: &[f64],
    cfg: &FitConfig,
) -> f64 {
    let state = DecayState {
        logs: logs_of(bases),
        amps: bases.iter().map(|b| alpha * b.scale).collect(),
        weights: Vec::new(),
    };
    let runtimes = state.materialize(cfg.timesteps);
    let features = basis_features(&runtimes, samples, cfg.timesteps);
    let w = initial_weights(&features, targets, bases.len());
    let mut acc = 0.0;
    for (row, &y) in features.iter().zip(targets) {
        let yhat: f64 = row.iter().zip(&w).map(|(f, wi)| f * wi).sum();
        acc += (yhat - y) * (yhat - y);
    }
    acc / targets.len() as f64
}

/// Seeded stochastic refinement of a candidate structure: perturb one basis
/// at a time and keep exact-readout improvements.
fn hill_climb(
    mut bases: Vec<MbeBasis>,
    mut current: f64,
    alpha: f64,
    samples: &[(f64, f64)],
    targets: &[f64],
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<MbeBasis> {
    let rounds = 140;
    for _ in 0..rounds {
        let idx = rng.gen_range(0..bases.len());
        let mut proposal = bases.clone();
        let b = &mut proposal[idx];
        let wiggle = |rng: &mut ChaCha8Rng| (0.25 * (2.0 * rng.gen::<f64>() - 1.0)).exp();
        b.tau_threshold *= wiggle(rng);
        b.tau_intensity *= wiggle(rng);
        b.tau_reset *= wiggle(rng);
        b.dt *= (0.1 * (2.0 * rng.gen::<f64>() - 1.0)).exp();
        if rng.gen::<f64>() < 0.3 {
            b.scale *= (0.2 * (2.0 * rng.gen::<f64>() - 1.0)).exp();
        }
        let mse = readout_mse(&proposal, alpha, samples, targets, cfg);
        if mse < current {
            current = mse;
            bases = proposal;
        }
    }
    bases
}

fn logs_of(bases: &[MbeBasis]) -> Vec<[f64; 4]> {
    bases
        .iter()
        .map(|b| {
            [
                b.tau_intensity.ln(),
                b.tau_reset.ln(),
                b.tau_threshold.ln(),
                b.dt.ln(),
            ]
        })
        .collect()
}

fn build_decay_neuron(state: &DecayState, alpha: f64, scales: &[f64], timesteps: usize) -> Result<MbeNeuron> {
    let bases: Vec<MbeBasis> = state
        .logs
        .iter()
        .zip(scales)
        .map(|(lg, &scale)| MbeBasis {
            tau_intensity: lg[0].exp(),
            tau_reset: lg[1].exp(),
            tau_threshold: lg[2].exp(),
            dt: lg[3].exp(),
            scale,
        })
        .collect();
    MbeNeuron::new(alpha, state.weights.clone(), timesteps, BasisParams::Decay(bases))
}

fn fit_failure(target: &TargetFn, epoch: usize, seed: u64) -> Error {
    Error::FitFailure {
        target: target.kind.as_str().to_string(),
        epoch,
        seed,
        reason: "loss became non-finite".into(),
    }
}

/// Fit an MBE neuron with exponential-decay schedules to the target.
pub fn fit_mbe(target: &TargetFn, config: &FitConfig) -> Result<FittedApproximator> {
    config.validate()?;
    let samples = sample_target(target, config.samples, config.seed)?;
    let plan = plan_amplitudes(target, &samples, config.basis_count)?;

    // Structure search before gradient descent: deterministic knot-grid
    // anchors, joint random draws, and matching-pursuit selections all
    // compete on exact-readout MSE; the best few go through the full
    // training protocol.
    let subsample = &samples[..samples.len().min(2000)];
    let sub_targets: Vec<f64> = subsample.iter().map(|&(_, y)| y).collect();

    let mut candidates: Vec<(f64, Vec<MbeBasis>)> = Vec::new();
    let joint_draws = 3 + 80 * config.starts;
    for c in 0..joint_draws {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + c as u64);
        let bases = init_bases(&plan, target, config, c, &mut rng);
        let mse = readout_mse(&bases, plan.alpha, subsample, &sub_targets, config);
        candidates.push((mse, bases));
    }
    for start in 0..config.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(5000 + start as u64);
        let pool = draw_pool(&plan, target, config, &mut rng);
        let bases = select_bases(&pool, plan.alpha, subsample, &sub_targets, config);
        let mse = readout_mse(&bases, plan.alpha, subsample, &sub_targets, config);
        candidates.push((mse, bases));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<(f64, MbeNeuron)> = None;
    let mut last_divergence: Option<usize> = None;
    for (start, (cand_mse, cand_bases)) in
        candidates.into_iter().take(config.starts).enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(9000 + start as u64);
        let bases = hill_climb(
            cand_bases,
            cand_mse,
            plan.alpha,
            subsample,
            &sub_targets,
            config,
            &mut rng,
        );
        let scales: Vec<f64> = bases.iter().map(|b| b.scale).collect();
        let state = DecayState {
            logs: logs_of(&bases),
            amps: bases.iter().map(|b| plan.alpha * b.scale).collect(),
            weights: Vec::new(),
        };
        let runtimes = state.materialize(config.timesteps);
        let features = basis_features(&runtimes, &samples, config.timesteps);
        let targets: Vec<f64> = samples.iter().map(|&(_, y)| y).collect();
        let weights = initial_weights(&features, &targets, config.basis_count);
        let state = DecayState { weights, ..state };

        let outcome = train(
            TrainState::Decay(state),
            &samples,
            config,
            Optimizer::adam(),
            true,
        );
        if let Some(epoch) = outcome.diverged_at {
            last_divergence = Some(epoch);
            continue;
        }
        let TrainState::Decay(state) = outcome.state else {
            unreachable!()
        };
        let neuron = build_decay_neuron(&state, plan.alpha, &scales, config.timesteps)?;
        let mse = evaluate_mse(&neuron, &samples)?;
        if !mse.is_finite() {
            last_divergence = Some(config.epochs);
            continue;
        }
        if best.as_ref().map_or(true, |(m, _)| mse < *m) {
            best = Some((mse, neuron));
        }
    }

    match best {
        Some((mse, neuron)) => Ok(FittedApproximator {
            format_version: crate::store::FORMAT_VERSION,
            target: *target,
            neuron,
            mse,
            config: *config,
        }),
        None => Err(fit_failure(target, last_divergence.unwrap_or(0), config.seed)),
    }
}

/// Ablation: per-timestep schedules learned freely with no decay structure.
/// Schedules start from uniform random draws over the planned amplitude.
pub fn fit_mbe_no_decay(target: &TargetFn, config: &FitConfig) -> Result<FittedApproximator> {
    config.validate()?;
    let samples = sample_target(target, config.samples, config.seed)?;
    let plan = plan_amplitudes(target, &samples, config.basis_count)?;

    let mut best: Option<(f64, MbeNeuron)> = None;
    let mut last_divergence: Option<usize> = None;
    for start in 0..config.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(101 + start as u64);
        let schedules: Vec<FsParams> = plan
            .scales
            .iter()
            .map(|&scale| {
                let amp = plan.alpha * scale;
                let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..config.timesteps).map(|_| amp * rng.gen::<f64>()).collect()
                };
                FsParams {
                    intensities: draw(&mut rng),
                    resets: draw(&mut rng),
                    thresholds: draw(&mut rng),
                }
            })
            .collect();
        let runtimes: Vec<BasisRuntime> = schedules.iter().map(free_runtime).collect();
        let features = basis_features(&runtimes, &samples, config.timesteps);
        let targets: Vec<f64> = samples.iter().map(|&(_, y)| y).collect();
        let weights = initial_weights(&features, &targets, config.basis_count);

        let outcome = train(
            TrainState::Free(FreeState {
                schedules,
                weights,
                weights_fixed: false,
            }),
            &samples,
            config,
            Optimizer::adam(),
            true,
        );
        if let Some(epoch) = outcome.diverged_at {
            last_divergence = Some(epoch);
            continue;
        }
        let TrainState::Free(state) = outcome.state else {
            unreachable!()
        };
        let neuron = MbeNeuron::new(
            plan.alpha,
            state.weights,
            config.timesteps,
            BasisParams::Free(state.schedules),
        )?;
        let mse = evaluate_mse(&neuron, &samples)?;
        if !mse.is_finite() {
            last_divergence = Some(config.epochs);
            continue;
        }
        if best.as_ref().map_or(true, |(m, _)| mse < *m) {
            best = Some((mse, neuron));
        }
    }

    match best {
        Some((mse, neuron)) => Ok(FittedApproximator {
            format_version: crate::store::FORMAT_VERSION,
            target: *target,
            neuron,
            mse,
            config: *config,
        }),
        None => Err(fit_failure(target, last_divergence.unwrap_or(0), config.seed)),
    }
}

/// Fit FS parameters (`d`, `r`, `vth` jointly) from the stated init. Runs a
/// single optimization so initialization quality stays observable.
pub fn fit_fs(target: &TargetFn, init: FsInit, config: &FitConfig) -> Result<FittedFs> {
    config.validate()?;
    let samples = sample_target(target, config.samples, config.seed)?;

    let mut y_absmax: f64 = 0.0;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &(_, y) in &samples {
        if !y.is_finite() {
            return Err(Error::invalid("target produced a non-finite value"));
        }
        y_absmax = y_absmax.max(y.abs());
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if y_max - y_min == 0.0 {
        return Err(Error::invalid(
            "constant targets cannot be fitted (no bias term in the readout)",
        ));
    }
    let scale = if target.hi > 0.0 {
        target.hi.max(y_absmax)
    } else {
        y_absmax
    };

    let params = match init {
        FsInit::Binary => FsParams::binary(config.timesteps, scale)?,
        FsInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(7);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..config.timesteps).map(|_| scale * rng.gen::<f64>()).collect()
            };
            FsParams {
                intensities: draw(&mut rng),
                resets: draw(&mut rng),
                thresholds: draw(&mut rng),
            }
        }
    };

    let outcome = train(
        TrainState::Free(FreeState {
            schedules: vec![params],
            weights: vec![1.0],
            weights_fixed: true,
        }),
        &samples,
        config,
        Optimizer::Sgd,
        false,
    );
    if let Some(epoch) = outcome.diverged_at {
        return Err(fit_failure(target, epoch, config.seed));
    }
    let TrainState::Free(state) = outcome.state else {
        unreachable!()
    };
    let params = state.schedules.into_iter().next().expect("one basis");
    let mse = evaluate_mse(&params, &samples)?;
    if !mse.is_finite() {
        return Err(fit_failure(target, config.epochs, config.seed));
    }
    Ok(FittedFs {
        target: *target,
        params,
        mse,
        init,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::binary_fs_params;

    #[test]
    fn sampling_is_deterministic_and_exact() {
        let t = TargetFn::new(TargetKind::Identity, 0.0, 1.0).unwrap();
        let a = sample_target(&t, 3, 42).unwrap();
        let b = sample_target(&t, 3, 42).unwrap();
        assert_eq!(a, b);
        for &(x, y) in &a {
            assert_eq!(x, y);
            assert!((0.0..=1.0).contains(&x));
        }

        let g = TargetFn::new(TargetKind::Gelu, -120.0, 10.0).unwrap();
        for &(x, y) in &sample_target(&g, 100, 9).unwrap() {
            assert_eq!(y, x * normal_cdf(x));
        }

        let inv = TargetFn::new(TargetKind::Inv, 0.5, 1.0).unwrap();
        for &(_, y) in &sample_target(&inv, 100, 3).unwrap() {
            assert!((1.0..=2.0).contains(&y));
        }
    }

    #[test]
    fn sampling_rejects_tiny_counts() {
        let t = TargetFn::new(TargetKind::Identity, 0.0, 1.0).unwrap();
        assert!(sample_target(&t, 1, 0).is_err());
    }

    #[test]
    fn target_validation() {
        assert!(TargetFn::new(TargetKind::Inv, 0.0, 1.0).is_err());
        assert!(TargetFn::new(TargetKind::InvSqrt, -0.5, 2.0).is_err());
        assert!(TargetFn::new(TargetKind::Gelu, 1.0, 1.0).is_err());
        assert!(TargetFn::new(TargetKind::Gelu, f64::NEG_INFINITY, 1.0).is_err());
        assert!(TargetKind::parse("gelu").is_ok());
        assert!(TargetKind::parse("gibberish").is_err());
    }

    #[test]
    fn evaluate_mse_trivial_cases() {
        // Perfect binary identity on its representable grid.
        let params = binary_fs_params(4, 1.0).unwrap();
        let data: Vec<(f64, f64)> = (0..16).map(|k| (k as f64 / 16.0, k as f64 / 16.0)).collect();
        assert_eq!(evaluate_mse(&params, &data).unwrap(), 0.0);

        // A silent neuron against f = 1 has MSE exactly 1.
        let silent = FsParams::new(vec![1.0; 4], vec![1.0; 4], vec![10.0; 4]).unwrap();
        let ones: Vec<(f64, f64)> = (0..8).map(|k| (k as f64 / 8.0, 1.0)).collect();
        assert_eq!(evaluate_mse(&silent, &ones).unwrap(), 1.0);

        let empty: Vec<(f64, f64)> = Vec::new();
        assert!(evaluate_mse(&silent, &empty).is_err());
    }

    #[test]
    fn constant_target_rejected() {
        // ReLU on a strictly negative interval is constant zero.
        let t = TargetFn::new(TargetKind::Relu, -2.0, -1.0).unwrap();
        let cfg = FitConfig {
            samples: 64,
            epochs: 2,
            ..FitConfig::new(2, 4)
        };
        assert!(matches!(
            fit_mbe(&t, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fit_is_reproducible() {
        let t = TargetFn::new(TargetKind::Exp2Frac, 0.0, 1.0).unwrap();
        let cfg = FitConfig {
            samples: 256,
            epochs: 12,
            starts: 2,
            ..FitConfig::new(2, 8)
        }
        .with_seed(11);
        let a = fit_mbe(&t, &cfg).unwrap();
        let b = fit_mbe(&t, &cfg).unwrap();
        assert_eq!(a, b, "same seed and config must be bit-identical");
        assert!(a.mse.is_finite());
    }

    #[test]
    fn reported_mse_matches_recomputation() {
        let t = TargetFn::new(TargetKind::Inv, 0.5, 1.0).unwrap();
        let cfg = FitConfig {
            samples: 512,
            epochs: 20,
            starts: 2,
            ..FitConfig::new(4, 8)
        }
        .with_seed(5);
        let fitted = fit_mbe(&t, &cfg).unwrap();
        let samples = sample_target(&t, cfg.samples, cfg.seed).unwrap();
        let recomputed = evaluate_mse(&fitted.neuron, &samples).unwrap();
        assert_eq!(fitted.mse, recomputed);
    }

    #[test]
    fn fitted_parameters_stay_positive() {
        let t = TargetFn::new(TargetKind::InvSqrt, 0.5, 2.0).unwrap();
        let cfg = FitConfig {
            samples: 512,
            epochs: 30,
            ..FitConfig::new(3, 8)
        };
        let fitted = fit_mbe(&t, &cfg).unwrap();
        if let BasisParams::Decay(bases) = &fitted.neuron.bases {
            for b in bases {
                assert!(b.tau_intensity > 0.0);
                assert!(b.tau_reset > 0.0);
                assert!(b.tau_threshold > 0.0);
                assert!(b.dt > 0.0);
            }
        } else {
            panic!("decay fit must produce decay bases");
        }
    }

    #[test]
    fn fs_binary_init_beats_random_on_relu() {
        let t = TargetFn::new(TargetKind::Relu, -1.0, 1.0).unwrap();
        let cfg = FitConfig {
            samples: 1000,
            epochs: 40,
            ..FitConfig::new(1, 8)
        };
        let binary = fit_fs(&t, FsInit::Binary, &cfg).unwrap();
        let random = fit_fs(&t, FsInit::Random, &cfg).unwrap();
        assert!(
            binary.mse < random.mse,
            "binary {} vs random {}",
            binary.mse,
            random.mse
        );
    }

    #[test]
    fn no_decay_fit_runs_and_reports() {
        let t = TargetFn::new(TargetKind::Exp2Frac, 0.0, 1.0).unwrap();
        let cfg = FitConfig {
            samples: 256,
            epochs: 10,
            starts: 1,
            ..FitConfig::new(2, 8)
        };
        let fitted = fit_mbe_no_decay(&t, &cfg).unwrap();
        assert!(matches!(fitted.neuron.bases, BasisParams::Free(_)));
        assert!(fitted.mse.is_finite());
    }
}
