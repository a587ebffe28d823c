//! Fully connected approximator with hand-written reverse mode, wrapped by
//! preconditioning schemes that turn its raw output `F_θ` into a data
//! predictor `x_θ` or a consistency function `h_θ`.
//!
//! Every preconditioned output has the affine form
//! `out = base(x_t, t, y) + scale(t) · F_θ(input(x_t, t, y))`, so the
//! parameter gradient only needs `scale · d_out` pushed through the network.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::bridge::{check_dim, Coupling, DataPredictor};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::schedule::{Preset, ScheduleSpec};
use crate::solver::OdeStepCoeffs;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Variances below this are treated as degenerate and floored.
pub const VAR_FLOOR: f64 = 1e-6;

const SINUSOID_DIM: usize = 16;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Plain MLP with SiLU hidden activations and a linear output layer.
///
/// Parameters are stored flat, layer by layer: the row-major weight matrix
/// `(n_out × n_in)` followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// layer inputs; `inputs[0]` is the network input
    inputs: Vec<Vec<f64>>,
    /// pre-activations of hidden layers
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        Ok(())
    }

    /// Scaled-normal weights (`1/√n_in`), zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        Self::check_widths(widths)?;
        let mut rng = rng::stream(seed, Domain::Init, 0);
        let mut params = Vec::with_capacity(Self::param_count(widths));
        for w in widths.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(scale * rng::normal(&mut rng));
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self { widths: widths.to_vec(), params })
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_widths(widths)?;
        check_dim(Self::param_count(widths), params.len())?;
        Ok(Self { widths: widths.to_vec(), params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(input.len(), self.input_dim());
        let n_layers = self.widths.len() - 1;
        let mut cache = MlpCache { inputs: Vec::with_capacity(n_layers), pre: Vec::with_capacity(n_layers) };
        let mut h = input.to_vec();
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|j| b[j] + w[j * n_in..(j + 1) * n_in].iter().zip(&h).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            let last = l + 1 == n_layers;
            let next = if last { z.clone() } else { z.iter().map(|v| silu(*v)).collect() };
            cache.inputs.push(std::mem::replace(&mut h, next));
            if !last {
                cache.pre.push(z);
            }
        }
        (h, cache)
    }

    /// Accumulates `∂(d_out · F)/∂θ` into `grad` and returns the input cotangent.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers: Vec<_> = self.layers().collect();
        let mut delta = d_out.to_vec();
        for l in (0..layers.len()).rev() {
            let (off, n_in, n_out) = layers[l];
            if l + 1 < layers.len() {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= silu_grad(*z);
                }
            }
            let input = &cache.inputs[l];
            let w = &self.params[off..off + n_in * n_out];
            let mut d_in = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = j * n_in;
                for i in 0..n_in {
                    grad[off + row + i] += dj * input[i];
                    d_in[i] += dj * w[row + i];
                }
                grad[off + n_in * n_out + j] += dj;
            }
            delta = d_in;
        }
        delta
    }
}

/// How the network output is turned into a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `c_skip x_t + c_out F(c_in x_t, c_noise, y)` with endpoint statistics.
    #[serde(rename = "edm")]
    EdmStyle,
    /// `x_t - σ_t̃ F(x_t, t̃, y)`.
    #[serde(rename = "i2sb")]
    I2sbStyle,
    /// Data prediction `F` directly; as a consistency function, the
    /// one-step exponential-integrator solve from `t` to `ε` around `F`.
    Universal,
}

/// What the preconditioned output represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    DataPredictor,
    Consistency,
}

/// Pooled endpoint moments `Var[x₀]`, `Var[x_T]`, `Cov[x₀, x_T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointStats {
    pub var0: f64,
    pub var_t: f64,
    pub cov0t: f64,
    pub degenerate: bool,
}

impl EndpointStats {
    pub fn new(var0: f64, var_t: f64, cov0t: f64) -> Self {
        Self { var0, var_t, cov0t, degenerate: var0 < VAR_FLOOR || var_t < VAR_FLOOR }
    }

    fn floored(&self) -> (f64, f64, f64) {
        let var0 = self.var0.max(VAR_FLOOR);
        let var_t = self.var_t.max(VAR_FLOOR);
        let bound = (var0 * var_t).sqrt();
        (var0, var_t, self.cov0t.clamp(-bound, bound))
    }
}

/// Unbiased per-dimension moments, averaged over dimensions.
pub fn estimate_endpoint_stats(pairs: &[Coupling]) -> Result<EndpointStats> {
    if pairs.len() < 2 {
        return Err(Error::TooFewSamples { min: 2, got: pairs.len() });
    }
    let d = pairs[0].dim();
    for p in pairs {
        check_dim(d, p.dim())?;
    }
    let n = pairs.len() as f64;
    let (mut v0, mut vt, mut c) = (0.0, 0.0, 0.0);
    for k in 0..d {
        let mx = pairs.iter().map(|p| p.x[k]).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.y[k]).sum::<f64>() / n;
        for p in pairs {
            let (dx, dy) = (p.x[k] - mx, p.y[k] - my);
            v0 += dx * dx;
            vt += dy * dy;
            c += dx * dy;
        }
    }
    let norm = (n - 1.0) * d as f64;
    Ok(EndpointStats::new(v0 / norm, vt / norm, c / norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precondition {
    pub scheme: Scheme,
    pub role: Role,
    #[serde(default)]
    pub stats: Option<EndpointStats>,
    /// `t̃ = t - clock_shift`; `ε` for consistency functions, 0 otherwise.
    pub clock_shift: f64,
}

/// EDM-style coefficients at shifted time `t̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmCoeffs {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
}

/// `c_in = 1/√(a²σ_T² + b²σ₀² + 2abσ₀T + c_t²)`,
/// `c_skip = (bσ₀² + aσ₀T) c_in²`, `c_out = √(a²(σ_T²σ₀² − σ₀T²) + σ₀² c_t²) c_in`.
pub fn edm_coeffs(spec: &ScheduleSpec, t_shifted: f64, stats: &EndpointStats) -> Result<EdmCoeffs> {
    if t_shifted == 0.0 {
        return Ok(EdmCoeffs { c_skip: 1.0, c_out: 0.0, c_in: 1.0 / stats.floored().0.sqrt() });
    }
    let k = spec.bridge_coeffs(t_shifted)?;
    let (v0, vt, cov) = stats.floored();
    let var = k.variance();
    let radicand = k.a * k.a * vt + k.b * k.b * v0 + 2.0 * k.a * k.b * cov + var;
    let c_in = 1.0 / radicand.sqrt();
    let c_skip = (k.b * v0 + k.a * cov) / radicand;
    let c_out = (k.a * k.a * (vt * v0 - cov * cov) + v0 * var).max(0.0).sqrt() * c_in;
    Ok(EdmCoeffs { c_skip, c_out, c_in })
}

/// `¼ log t` on the unshifted clock.
pub fn c_noise(t: f64) -> f64 {
    0.25 * t.ln()
}

/// Sinusoidal features of `t̃ / T` at geometric frequencies from 1 to 200.
pub fn sinusoidal_embedding(t_shifted: f64, horizon: f64) -> [f64; SINUSOID_DIM] {
    let u = t_shifted / horizon;
    let half = SINUSOID_DIM / 2;
    let mut out = [0.0; SINUSOID_DIM];
    for k in 0..half {
        let w = (200f64.ln() * k as f64 / (half - 1) as f64).exp();
        out[k] = (w * u).sin();
        out[half + k] = (w * u).cos();
    }
    out
}

impl Precondition {
    pub fn new(scheme: Scheme, role: Role, stats: Option<EndpointStats>, clock_shift: f64) -> Result<Self> {
        if scheme == Scheme::EdmStyle && stats.is_none() {
            return Err(Error::MissingStats);
        }
        if !(clock_shift.is_finite() && clock_shift >= 0.0) {
            return Err(Error::Config(format!("clock shift must be non-negative, got {clock_shift}")));
        }
        Ok(Self { scheme, role, stats, clock_shift })
    }

    pub fn embedding_dim(&self) -> usize {
        match self.scheme {
            Scheme::EdmStyle => 1,
            _ => SINUSOID_DIM,
        }
    }

    /// Network input width for `d`-dimensional states.
    pub fn input_dim(&self, d: usize) -> usize {
        2 * d + self.embedding_dim()
    }

    /// Splits the output at `(x_t, t, y)` into its base, scale and network input.
    pub fn prepare(&self, spec: &ScheduleSpec, x_t: &[f64], t: f64, y: &[f64]) -> Result<Prepared> {
        check_dim(x_t.len(), y.len())?;
        let t = spec.check_time(t)?;
        let t_shifted = t - self.clock_shift;
        if t_shifted < 0.0 {
            return Err(Error::TimeOutOfRange { t, horizon: spec.horizon() });
        }
        let identity = |scale_input: f64, emb: &[f64]| Prepared {
            base: x_t.to_vec(),
            scale: 0.0,
            net_input: layout(x_t, scale_input, emb, y),
        };
        let horizon = spec.horizon();
        match self.scheme {
            Scheme::EdmStyle => {
                let stats = self.stats.as_ref().ok_or(Error::MissingStats)?;
                let k = edm_coeffs(spec, t_shifted, stats)?;
                if t <= 0.0 {
                    return Ok(identity(k.c_in, &[0.0]));
                }
                let emb = [c_noise(t)];
                if t_shifted == 0.0 {
                    return Ok(identity(k.c_in, &emb));
                }
                Ok(Prepared {
                    base: x_t.iter().map(|x| k.c_skip * x).collect(),
                    scale: k.c_out,
                    net_input: layout(x_t, k.c_in, &emb, y),
                })
            }
            Scheme::I2sbStyle => {
                let emb = sinusoidal_embedding(t_shifted, horizon);
                if t_shifted == 0.0 {
                    return Ok(identity(1.0, &emb));
                }
                let sigma = spec.eval(t_shifted)?.sigma;
                Ok(Prepared { base: x_t.to_vec(), scale: -sigma, net_input: layout(x_t, 1.0, &emb, y) })
            }
            Scheme::Universal => {
                let emb = sinusoidal_embedding(t_shifted, horizon);
                match self.role {
                    Role::DataPredictor => Ok(Prepared {
                        base: vec![0.0; x_t.len()],
                        scale: 1.0,
                        net_input: layout(x_t, 1.0, &emb, y),
                    }),
                    Role::Consistency => {
                        if t_shifted == 0.0 {
                            return Ok(identity(1.0, &emb));
                        }
                        let k = OdeStepCoeffs::new(spec, t, self.clock_shift)?;
                        Ok(Prepared {
                            base: x_t.iter().zip(y).map(|(x, yi)| k.k1 * x + k.k3 * yi).collect(),
                            scale: k.k2,
                            net_input: layout(x_t, 1.0, &emb, y),
                        })
                    }
                }
            }
        }
    }
}

fn layout(x_t: &[f64], scale: f64, emb: &[f64], y: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * x_t.len() + emb.len());
    v.extend(x_t.iter().map(|x| scale * x));
    v.extend_from_slice(emb);
    v.extend_from_slice(y);
    v
}

/// `out = base + scale · F(net_input)`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub base: Vec<f64>,
    pub scale: f64,
    pub net_input: Vec<f64>,
}

impl Prepared {
    fn combine(&self, f: &[f64]) -> Vec<f64> {
        if self.scale == 0.0 {
            return self.base.clone();
        }
        self.base.iter().zip(f).map(|(b, fi)| b + self.scale * fi).collect()
    }
}

/// A parametric map `(x_t, t, y) ↦ output` that can push cotangents back to
/// its parameters.
pub trait Trainable: Sync {
    fn num_params(&self) -> usize;

    fn eval(&self, x_t: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>>;

    /// Evaluates, asks `cotangent` for `∂L/∂out` given the output, and adds
    /// `∂L/∂θ` into `grad`. Returns the output.
    fn eval_vjp(
        &self,
        x_t: &[f64],
        t: f64,
        y: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>>;
}

/// Approximator plus its schedule and precondition.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ScheduleSpec,
    pub precond: Precondition,
    pub net: Mlp,
}

impl Model {
    /// Fresh model for `dim`-dimensional data with the given hidden widths.
    pub fn new(spec: ScheduleSpec, precond: Precondition, dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![precond.input_dim(dim)];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let net = Mlp::init(&widths, seed)?;
        Ok(Self { spec, precond, net })
    }

    pub fn from_parts(spec: ScheduleSpec, precond: Precondition, net: Mlp) -> Result<Self> {
        let d = net.output_dim();
        check_dim(precond.input_dim(d), net.input_dim())?;
        Ok(Self { spec, precond, net })
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    /// Same network weights under a different precondition role, e.g. a
    /// consistency function initialised from a pretrained data predictor.
    pub fn with_precondition(&self, precond: Precondition) -> Result<Self> {
        Self::from_parts(self.spec.clone(), precond, self.net.clone())
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Result<Checkpoint> {
        let schedule = self
            .spec
            .as_preset()
            .ok_or_else(|| Error::Checkpoint("custom schedules cannot be checkpointed".into()))?;
        let bytes: Vec<u8> = self.params().iter().flat_map(|p| p.to_le_bytes()).collect();
        Ok(Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            schedule,
            precond: self.precond,
            widths: self.net.widths().to_vec(),
            params: B64.encode(bytes),
            seed,
            step,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!("unsupported schema version {}", ck.schema_version)));
        }
        let bytes = B64.decode(&ck.params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint("parameter payload is not a whole number of f64".into()));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let spec = ScheduleSpec::preset(ck.schedule)?;
        Self::from_parts(spec, ck.precond, Mlp::from_params(&ck.widths, params)?)
    }
}

impl Trainable for Model {
    fn num_params(&self) -> usize {
        self.net.params().len()
    }

    fn eval(&self, x_t: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x_t.len())?;
        let p = self.precond.prepare(&self.spec, x_t, t, y)?;
        if p.scale == 0.0 {
            return Ok(p.base);
        }
        Ok(p.combine(&self.net.forward(&p.net_input)))
    }

    fn eval_vjp(
        &self,
        x_t: &[f64],
        t: f64,
        y: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_dim(self.dim(), x_t.len())?;
        let p = self.precond.prepare(&self.spec, x_t, t, y)?;
        if p.scale == 0.0 {
            cotangent(&p.base)?;
            return Ok(p.base);
        }
        let (f, cache) = self.net.forward_cached(&p.net_input);
        let out = p.combine(&f);
        let d_out = cotangent(&out)?;
        check_dim(out.len(), d_out.len())?;
        let d_f: Vec<f64> = d_out.iter().map(|d| p.scale * d).collect();
        self.net.backward(&cache, &d_f, grad);
        Ok(out)
    }
}

impl DataPredictor for Model {
    fn predict(&self, x_t: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>> {
        Trainable::eval(self, x_t, t, y)
    }
}

/// Universal-precondition consistency function around a fixed data
/// predictor; has no parameters of its own.
pub struct UniversalConsistency<'a, P: DataPredictor + ?Sized> {
    pub spec: ScheduleSpec,
    pub predictor: &'a P,
    pub eps: f64,
}

impl<P: DataPredictor + ?Sized> Trainable for UniversalConsistency<'_, P> {
    fn num_params(&self) -> usize {
        0
    }

    fn eval(&self, x_t: &[f64], t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let k = OdeStepCoeffs::new(&self.spec, t, self.eps)?;
        if (k.k1, k.k2, k.k3) == (1.0, 0.0, 0.0) {
            return Ok(x_t.to_vec());
        }
        let pred = self.predictor.predict(x_t, t, y)?;
        Ok(k.apply(x_t, &pred, y))
    }

    fn eval_vjp(
        &self,
        x_t: &[f64],
        t: f64,
        y: &[f64],
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        _grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let out = self.eval(x_t, t, y)?;
        cotangent(&out)?;
        Ok(out)
    }
}

/// Serialized model: schedule, precondition, widths and raw parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub schedule: Preset,
    pub precond: Precondition,
    pub widths: Vec<usize>,
    /// base64 of the little-endian f64 parameter array
    pub params: String,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}
