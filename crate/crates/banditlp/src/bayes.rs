//! Small feed-forward predictors with a last-layer Laplace posterior.
//!
//! Models are trained to a MAP point by seeded mini-batch gradient descent,
//! then a Gauss-Newton precision matrix over the last-layer parameters turns
//! the point estimate into a posterior that supports Thompson draws. The
//! posterior predictive for a context z* is Normal(f(z*), tau * V) on the
//! latent scale, with V = sigma0^2 + g(z*)' Omega^{-1} g(z*), where g(z*) is
//! the penultimate activation vector (plus a constant 1 when the output layer
//! has a bias).

use crate::linalg::{self, LinalgError};
use crate::seeds;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("empty training set")]
    EmptyData,
    #[error("input has dimension {got}, spec expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("label {0} is not 0/1 but the head is binary")]
    InvalidLabel(f64),
    #[error("temperature must be finite and nonnegative, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Binary,
    Gaussian,
}

impl Head {
    /// Maps the latent output to the reported prediction: a probability for
    /// the binary head, the identity for the gaussian head.
    #[inline]
    pub fn transform(self, f: f64) -> f64 {
        match self {
            Head::Binary => sigmoid(f),
            Head::Gaussian => f,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log(1 + e^x).
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_prior_variance() -> f64 {
    1.0
}

fn default_noise_variance() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_layer_sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub head: Head,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    /// Whether the scalar output layer carries a bias term. On by default;
    /// disable for strictly linear-in-features fixtures.
    #[serde(default = "default_true")]
    pub output_bias: bool,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<(), BayesError> {
        if self.input_dim == 0 {
            return Err(BayesError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.hidden_layer_sizes.iter().any(|&h| h == 0) {
            return Err(BayesError::InvalidSpec(
                "hidden layer sizes must be positive".into(),
            ));
        }
        if !(self.prior_variance > 0.0) || !self.prior_variance.is_finite() {
            return Err(BayesError::InvalidSpec(format!(
                "prior_variance must be positive, got {}",
                self.prior_variance
            )));
        }
        if self.head == Head::Gaussian && (!(self.noise_variance > 0.0) || !self.noise_variance.is_finite()) {
            return Err(BayesError::InvalidSpec(format!(
                "noise_variance must be positive for the gaussian head, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Width of the last-layer feature vector g(z).
    pub fn feature_dim(&self) -> usize {
        let penultimate = self.hidden_layer_sizes.last().copied().unwrap_or(self.input_dim);
        penultimate + usize::from(self.output_bias)
    }
}

/// One dense layer, weights stored row-major as w[out][in].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    /// Hidden layers followed by the scalar output layer (identity
    /// activation). The output layer's bias vector is empty when
    /// `spec.output_bias` is false.
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Full-data MAP loss at the end of each epoch.
    pub loss_history: Vec<f64>,
}

struct Trace {
    /// Post-activation values per layer; the last entry is [f].
    post: Vec<Vec<f64>>,
}

impl Mlp {
    /// Seeded random initialization: weights ~ Normal(0, 1/fan_in), biases 0.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self, BayesError> {
        spec.validate()?;
        let mut dims = vec![spec.input_dim];
        dims.extend_from_slice(&spec.hidden_layer_sizes);
        dims.push(1);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut rng = seeds::stream(seed, &[seeds::purpose::INIT_WEIGHTS, l as u64]);
            let std = (1.0 / fan_in as f64).sqrt();
            let w = (0..fan_out)
                .map(|_| {
                    (0..fan_in)
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let is_output = l == dims.len() - 2;
            let b = if is_output && !spec.output_bias {
                vec![]
            } else {
                vec![0.0; fan_out]
            };
            layers.push(Layer { w, b });
        }
        Ok(Self { spec, layers })
    }

    fn forward_trace(&self, z: &[f64]) -> Trace {
        let mut post = Vec::with_capacity(self.layers.len());
        let mut input = z.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out: Vec<f64> = layer
                .w
                .iter()
                .map(|row| linalg::dot(row, &input))
                .collect();
            for (o, bias) in out.iter_mut().zip(&layer.b) {
                *o += bias;
            }
            if l != last {
                for o in out.iter_mut() {
                    *o = self.spec.activation.apply(*o);
                }
            }
            post.push(out.clone());
            input = out;
        }
        Trace { post }
    }

    /// Latent scalar output f(z).
    pub fn forward(&self, z: &[f64]) -> f64 {
        self.forward_trace(z).post.last().unwrap()[0]
    }

    /// Head-transformed prediction.
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.spec.head.transform(self.forward(z))
    }

    /// Last-layer feature vector g(z): penultimate activations, plus a
    /// trailing 1 when the output layer has a bias.
    pub fn features(&self, z: &[f64]) -> Vec<f64> {
        let trace = self.forward_trace(z);
        let mut g = if self.layers.len() >= 2 {
            trace.post[self.layers.len() - 2].clone()
        } else {
            z.to_vec()
        };
        if self.spec.output_bias {
            g.push(1.0);
        }
        g
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.iter().map(Vec::len).sum::<usize>() + l.b.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            for row in &layer.w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.b);
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let mut it = theta.iter();
        for layer in &mut self.layers {
            for row in &mut layer.w {
                for v in row.iter_mut() {
                    *v = *it.next().expect("theta too short");
                }
            }
            for v in layer.b.iter_mut() {
                *v = *it.next().expect("theta too short");
            }
        }
        assert!(it.next().is_none(), "theta too long");
    }

    /// Per-example negative log-likelihood of the head at latent value f.
    fn nll(&self, f: f64, y: f64) -> f64 {
        match self.spec.head {
            Head::Binary => softplus(f) - y * f,
            Head::Gaussian => {
                let d = f - y;
                d * d / (2.0 * self.spec.noise_variance)
            }
        }
    }

    /// d nll / d f.
    fn nll_grad(&self, f: f64, y: f64) -> f64 {
        match self.spec.head {
            Head::Binary => sigmoid(f) - y,
            Head::Gaussian => (f - y) / self.spec.noise_variance,
        }
    }

    /// The MAP objective on `data`: mean per-example NLL plus the Gaussian
    /// prior penalty ||theta||^2 / (2 sigma0^2 N), N = data.len().
    pub fn loss(&self, data: &[(Vec<f64>, f64)]) -> f64 {
        let n = data.len().max(1) as f64;
        let nll: f64 = data
            .iter()
            .map(|(z, y)| self.nll(self.forward(z), *y))
            .sum::<f64>()
            / n;
        let reg = linalg::norm_sq(&self.params()) / (2.0 * self.spec.prior_variance * n);
        nll + reg
    }

    /// Loss and its gradient over the flattened parameters, for a batch. The
    /// prior penalty is scaled by `total_n` (the full dataset size) so that
    /// mini-batch gradients are unbiased estimates of the full-data gradient.
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, f64)], total_n: usize) -> (f64, Vec<f64>) {
        let nb = batch.len().max(1) as f64;
        let n = total_n.max(1) as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        for (z, y) in batch {
            let trace = self.forward_trace(z);
            let f = trace.post.last().unwrap()[0];
            loss += self.nll(f, *y);
            let df = self.nll_grad(f, *y) / nb;
            self.backprop(z, &trace, df, &mut grad);
        }
        loss /= nb;

        let theta = self.params();
        let scale = 1.0 / (self.spec.prior_variance * n);
        for (g, t) in grad.iter_mut().zip(&theta) {
            *g += t * scale;
        }
        loss += linalg::norm_sq(&theta) / (2.0 * self.spec.prior_variance * n);
        (loss, grad)
    }

    /// Accumulates d loss / d theta for one example into `grad` (flattened in
    /// the same order as `params`). `df` is d loss / d f already including any
    /// batch scaling.
    fn backprop(&self, z: &[f64], trace: &Trace, df: f64, grad: &mut [f64]) {
        let num_layers = self.layers.len();
        // Offsets of each layer's block in the flattened parameter vector.
        let mut offsets = Vec::with_capacity(num_layers);
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.w.iter().map(Vec::len).sum::<usize>() + layer.b.len();
        }

        // delta holds d loss / d (post-activation output of layer l).
        let mut delta = vec![df];
        for l in (0..num_layers).rev() {
            let layer = &self.layers[l];
            let input: &[f64] = if l == 0 { z } else { &trace.post[l - 1] };
            // d loss / d pre-activation of layer l.
            let dpre: Vec<f64> = if l == num_layers - 1 {
                delta.clone()
            } else {
                delta
                    .iter()
                    .zip(&trace.post[l])
                    .map(|(d, y)| d * self.spec.activation.derivative_from_output(*y))
                    .collect()
            };
            let base = offsets[l];
            let fan_in = input.len();
            for (o, d) in dpre.iter().enumerate() {
                let row = base + o * fan_in;
                for (i, zi) in input.iter().enumerate() {
                    grad[row + i] += d * zi;
                }
            }
            let bias_base = base + layer.w.len() * fan_in;
            for (o, d) in dpre.iter().enumerate().take(layer.b.len()) {
                grad[bias_base + o] += *d;
            }
            if l > 0 {
                let mut next = vec![0.0; fan_in];
                for (o, d) in dpre.iter().enumerate() {
                    for (i, n) in next.iter_mut().enumerate() {
                        *n += layer.w[o][i] * d;
                    }
                }
                delta = next;
            }
        }
    }
}

fn validate_data(spec: &MlpSpec, data: &[(Vec<f64>, f64)]) -> Result<(), BayesError> {
    for (z, y) in data {
        if z.len() != spec.input_dim {
            return Err(BayesError::DimensionMismatch {
                got: z.len(),
                expected: spec.input_dim,
            });
        }
        if spec.head == Head::Binary && *y != 0.0 && *y != 1.0 {
            return Err(BayesError::InvalidLabel(*y));
        }
    }
    Ok(())
}

/// Trains a fresh model to the MAP point with seeded mini-batch gradient
/// descent. Deterministic given the schedule seed.
pub fn train_map(
    spec: MlpSpec,
    data: &[(Vec<f64>, f64)],
    schedule: &TrainSchedule,
) -> Result<(Mlp, TrainReport), BayesError> {
    if data.is_empty() {
        return Err(BayesError::EmptyData);
    }
    validate_data(&spec, data)?;
    let model = Mlp::init(spec, schedule.seed)?;
    train_map_warm(model, data, schedule)
}

/// Continues gradient descent from an existing model's weights; used for the
/// per-round incremental refresh on pooled feedback.
pub fn train_map_warm(
    mut model: Mlp,
    data: &[(Vec<f64>, f64)],
    schedule: &TrainSchedule,
) -> Result<(Mlp, TrainReport), BayesError> {
    if data.is_empty() {
        return Err(BayesError::EmptyData);
    }
    validate_data(&model.spec, data)?;
    let n = data.len();
    let batch_size = schedule.batch_size.clamp(1, n);
    let mut loss_history = Vec::with_capacity(schedule.epochs);
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..schedule.epochs {
        let mut rng: ChaCha8Rng =
            seeds::stream(schedule.seed, &[seeds::purpose::TRAIN_SHUFFLE, epoch as u64]);
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(batch_size) {
            let batch: Vec<(Vec<f64>, f64)> =
                chunk.iter().map(|&i| data[i].clone()).collect();
            let (_, grad) = model.loss_and_grad(&batch, n);
            let mut theta = model.params();
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= schedule.learning_rate * g;
            }
            model.set_params(&theta);
        }
        let loss = model.loss(data);
        if !loss.is_finite() {
            return Err(BayesError::DivergenceDetected { epoch, loss });
        }
        loss_history.push(loss);
    }
    Ok((model, TrainReport { loss_history }))
}

/// Gauss-Newton curvature of the per-example log-likelihood at latent f.
#[inline]
fn gauss_newton_hpp(head: Head, f: f64, noise_variance: f64) -> f64 {
    match head {
        Head::Binary => {
            let s = sigmoid(f);
            s * (1.0 - s)
        }
        Head::Gaussian => 1.0 / noise_variance,
    }
}

/// A trained model plus its last-layer posterior precision.
#[derive(Debug, Clone)]
pub struct LaplaceState {
    pub model: Mlp,
    pub omega: Vec<Vec<f64>>,
    omega_cholesky: Vec<Vec<f64>>,
    pub temperature: f64,
}

/// One Thompson draw from the posterior predictive at a context.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorDraw {
    pub mean: f64,
    pub variance: f64,
    pub sampled_value: f64,
    pub output: f64,
}

/// Serializable form of a LaplaceState; the Cholesky factor is recomputed on
/// load (it is a pure function of omega), so round-trips are bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Mlp,
    pub omega: Vec<Vec<f64>>,
    pub temperature: f64,
}

/// Builds the last-layer Gauss-Newton precision
/// Omega = sum_n g(z_n) h''(f_n) g(z_n)' + (1/sigma0^2) I
/// and caches its Cholesky factor. Labels in `data` are ignored: the
/// Gauss-Newton curvature depends only on the fitted latent values.
pub fn fit_laplace(
    model: &Mlp,
    data: &[(Vec<f64>, f64)],
    temperature: f64,
) -> Result<LaplaceState, BayesError> {
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(BayesError::InvalidTemperature(temperature));
    }
    validate_data(&model.spec, data)?;
    let p = model.spec.feature_dim();
    let mut omega = vec![vec![0.0; p]; p];
    let prior_precision = 1.0 / model.spec.prior_variance;
    for (i, row) in omega.iter_mut().enumerate() {
        row[i] = prior_precision;
    }
    for (z, _) in data {
        let trace = model.forward_trace(z);
        let f = trace.post.last().unwrap()[0];
        let mut g = if model.layers.len() >= 2 {
            trace.post[model.layers.len() - 2].clone()
        } else {
            z.to_vec()
        };
        if model.spec.output_bias {
            g.push(1.0);
        }
        let h = gauss_newton_hpp(model.spec.head, f, model.spec.noise_variance);
        for a in 0..p {
            let ga_h = g[a] * h;
            for b in 0..p {
                omega[a][b] += ga_h * g[b];
            }
        }
    }
    let omega_cholesky = linalg::cholesky(&omega)?;
    Ok(LaplaceState {
        model: model.clone(),
        omega,
        omega_cholesky,
        temperature,
    })
}

impl LaplaceState {
    /// Posterior predictive variance of the latent output at z*.
    pub fn predictive_variance(&self, z: &[f64]) -> f64 {
        let g = self.model.features(z);
        self.model.spec.prior_variance + linalg::quad_form_inv(&self.omega_cholesky, &g)
    }

    /// One Thompson draw: latent mu ~ Normal(f(z*), tau * V). At tau = 0 the
    /// draw equals the mean exactly (no degenerate-normal sampling).
    pub fn predictive_sample<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> PosteriorDraw {
        let mean = self.model.forward(z);
        let variance = self.predictive_variance(z);
        let sampled_value = if self.temperature == 0.0 {
            mean
        } else {
            mean + (self.temperature * variance).sqrt() * rng.sample::<f64, _>(StandardNormal)
        };
        PosteriorDraw {
            mean,
            variance,
            sampled_value,
            output: self.model.spec.head.transform(sampled_value),
        }
    }

    /// Exploit-mode prediction: the head-transformed latent mean, no sampling.
    pub fn predict_mean(&self, z: &[f64]) -> f64 {
        self.model.predict(z)
    }

    /// The same posterior with a different sampling temperature.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self, BayesError> {
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(BayesError::InvalidTemperature(temperature));
        }
        let mut state = self.clone();
        state.temperature = temperature;
        Ok(state)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            omega: self.omega.clone(),
            temperature: self.temperature,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, BayesError> {
        ck.model.spec.validate()?;
        if !ck.temperature.is_finite() || ck.temperature < 0.0 {
            return Err(BayesError::InvalidTemperature(ck.temperature));
        }
        let omega_cholesky = linalg::cholesky(&ck.omega)?;
        Ok(Self {
            model: ck.model,
            omega: ck.omega,
            omega_cholesky,
            temperature: ck.temperature,
        })
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<(), std::io::Error> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())
            .expect("checkpoint serialization cannot fail");
        std::fs::write(path, text)
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let ck: Checkpoint =
            serde_path_to_error::deserialize(&mut de).map_err(|e| e.to_string())?;
        Self::from_checkpoint(ck).map_err(|e| e.to_string())
    }
}
