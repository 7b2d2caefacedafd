//! Fully connected regression head with exact reverse-mode gradients.
//!
//! Architecture: `input -> [dense -> ELU -> dropout] x hidden -> dense`, with
//! one output (mean logit) or two (mean logit, SD logit). The mean head is
//! `tanh`; the SD head is `sigma = 1 / (1 + e^z)`, whose log is
//! [`neg_softplus`]`(z)`.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! row-major (`out x in`) followed by its bias vector; gradients and optimizer
//! moments use the same layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    MeanOnly,
    MeanVariance,
}

impl HeadMode {
    pub fn outputs(self) -> usize {
        match self {
            HeadMode::MeanOnly => 1,
            HeadMode::MeanVariance => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Fresh dropout masks, tape kept for backward.
    Train,
    /// No dropout, no rescaling.
    Eval,
    /// Dropout kept on at inference.
    McDropout,
}

#[inline]
pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// `-log(1 + e^z)`, evaluated without overflow. Equals `log(sigma_hat)`.
#[inline]
pub fn neg_softplus(z: f64) -> f64 {
    -(z.max(0.0) + (-z.abs()).exp().ln_1p())
}

/// Logistic function `1 / (1 + e^-z)`, stable for large `|z|`.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Model output for one stimulus, with the logits it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrediction {
    pub mean_logit: f64,
    pub sd_logit: Option<f64>,
    pub mu_hat: f64,
    pub sigma_hat: Option<f64>,
}

impl GaussianPrediction {
    pub fn from_logits(mean_logit: f64, sd_logit: Option<f64>) -> Self {
        Self {
            mean_logit,
            sd_logit,
            mu_hat: mean_logit.tanh(),
            sigma_hat: sd_logit.map(|z| neg_softplus(z).exp()),
        }
    }

    /// Inverts both heads: builds the prediction whose outputs are
    /// `(mu_hat, sigma_hat)`. Requires `|mu_hat| < 1` and `0 < sigma_hat < 1`.
    pub fn from_outputs(mu_hat: f64, sigma_hat: Option<f64>) -> Self {
        Self::from_logits(mu_hat.atanh(), sigma_hat.map(|s| (1.0 / s - 1.0).ln()))
    }

    /// `log(sigma_hat)` computed from the logit, finite even where
    /// `sigma_hat` underflows.
    pub fn log_sigma_hat(&self) -> Option<f64> {
        self.sd_logit.map(neg_softplus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    /// Offset of the weight block in the flat parameter vector.
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Architecture description, separate from the parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub head_mode: HeadMode,
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn new(input_dim: usize, head_mode: HeadMode) -> Self {
        Self {
            input_dim,
            hidden_sizes: DEFAULT_HIDDEN.to_vec(),
            head_mode,
            dropout_rate: DEFAULT_DROPOUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Network("input dimension must be positive".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Network(format!(
                "hidden sizes must be positive, got {:?}",
                self.hidden_sizes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Network(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_sizes);
        dims.push(self.head_mode.outputs());
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    offset,
                };
                offset += shape.len();
                shape
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }

    pub fn keep_probability(&self) -> f64 {
        1.0 - self.dropout_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    arch: Architecture,
    shapes: Vec<LayerShape>,
    values: Vec<f64>,
}

/// Fan-in scaled uniform initialization with bound `1 / sqrt(fan_in)`, zero
/// biases. Identical seeds give bit-identical parameters.
pub fn init_parameters(arch: Architecture, seed: u64) -> Result<NetworkParameters> {
    arch.validate()?;
    let shapes = arch.layer_shapes();
    let mut values = vec![0.0; arch.parameter_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for shape in &shapes {
        let bound = (1.0 / shape.inputs as f64).sqrt();
        for w in &mut values[shape.weight_range()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(NetworkParameters { arch, shapes, values })
}

impl NetworkParameters {
    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.parameter_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        let shapes = arch.layer_shapes();
        Ok(Self { arch, shapes, values })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = arch.parameter_count();
        Self::from_values(arch, vec![0.0; n])
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn head_mode(&self) -> HeadMode {
        self.arch.head_mode
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with a different dropout rate (same weights).
    pub fn with_dropout_rate(&self, rate: f64) -> Result<Self> {
        let mut arch = self.arch.clone();
        arch.dropout_rate = rate;
        Self::from_values(arch, self.values.clone())
    }
}

/// Per-hidden-layer keep masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Vec<bool>>,
    pub keep_probability: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Vec<f64>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<f64>>,
    /// Hidden outputs after ELU and dropout (inputs to the next layer).
    post: Vec<Vec<f64>>,
    mask: Option<DropoutMask>,
    layer_shapes: Vec<LayerShape>,
}

impl Tape {
    pub fn mask(&self) -> Option<&DropoutMask> {
        self.mask.as_ref()
    }
}

fn dense(values: &[f64], shape: &LayerShape, input: &[f64], out: &mut Vec<f64>) {
    let w = &values[shape.weight_range()];
    let b = &values[shape.bias_range()];
    out.clear();
    out.extend(
        w.chunks_exact(shape.inputs)
            .zip(b)
            .map(|(row, bias)| bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()),
    );
}

/// Runs the network on one feature vector.
///
/// `Train` and `McDropout` draw one keep mask per hidden layer from `rng`
/// and scale kept activations by `1 / keep_probability`; `Eval` leaves
/// `rng` untouched.
pub fn forward<R: Rng + ?Sized>(
    params: &NetworkParameters,
    x: &[f64],
    mode: ForwardMode,
    rng: &mut R,
) -> Result<(GaussianPrediction, Tape)> {
    if x.len() != params.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.arch.input_dim,
            actual: x.len(),
        });
    }
    let keep = params.arch.keep_probability();
    let use_dropout = mode != ForwardMode::Eval && params.arch.dropout_rate > 0.0;
    let n_hidden = params.arch.hidden_sizes.len();
    let mut pre = Vec::with_capacity(n_hidden);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
    let mut masks = Vec::with_capacity(if use_dropout { n_hidden } else { 0 });
    for (l, shape) in params.shapes[..n_hidden].iter().enumerate() {
        let input = if l == 0 { x } else { post[l - 1].as_slice() };
        let mut z = Vec::with_capacity(shape.outputs);
        dense(&params.values, shape, input, &mut z);
        let mut a: Vec<f64> = z.iter().map(|&v| elu(v)).collect();
        if use_dropout {
            let mask: Vec<bool> = (0..shape.outputs).map(|_| rng.random::<f64>() < keep).collect();
            for (v, &m) in a.iter_mut().zip(&mask) {
                *v = if m { *v / keep } else { 0.0 };
            }
            masks.push(mask);
        }
        pre.push(z);
        post.push(a);
    }
    let last = params.shapes[n_hidden];
    let input = if n_hidden == 0 {
        x
    } else {
        post[n_hidden - 1].as_slice()
    };
    let mut out = Vec::with_capacity(last.outputs);
    dense(&params.values, &last, input, &mut out);
    let prediction = GaussianPrediction::from_logits(out[0], out.get(1).copied());
    let tape = Tape {
        input: x.to_vec(),
        pre,
        post,
        mask: use_dropout.then_some(DropoutMask {
            layers: masks,
            keep_probability: keep,
        }),
        layer_shapes: params.shapes.clone(),
    };
    Ok((prediction, tape))
}

/// Eval-mode prediction without a random stream.
pub fn predict(params: &NetworkParameters, x: &[f64]) -> Result<GaussianPrediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    forward(params, x, ForwardMode::Eval, &mut rng).map(|(p, _)| p)
}

/// Adds `scale * d(loss)/d(theta)` into `grad`, given the loss gradients
/// with respect to the mean and SD logits. The dropout masks recorded on
/// the tape are reused.
pub fn backward_accumulate(
    params: &NetworkParameters,
    tape: &Tape,
    d_mean_logit: f64,
    d_sd_logit: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    if tape.layer_shapes != params.shapes || grad.len() != params.values.len() {
        return Err(Error::Network(
            "tape or gradient buffer does not match the parameters".into(),
        ));
    }
    let n_hidden = params.arch.hidden_sizes.len();
    let mut delta: Vec<f64> = vec![d_mean_logit * scale];
    if params.arch.head_mode == HeadMode::MeanVariance {
        delta.push(d_sd_logit * scale);
    }
    for l in (0..=n_hidden).rev() {
        let shape = params.shapes[l];
        let input = if l == 0 {
            tape.input.as_slice()
        } else {
            tape.post[l - 1].as_slice()
        };
        let w = &params.values[shape.weight_range()];
        let (gw, gb) = grad[shape.offset..shape.offset + shape.len()].split_at_mut(shape.inputs * shape.outputs);
        for (j, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[j] += d;
            for (g, x) in gw[j * shape.inputs..(j + 1) * shape.inputs].iter_mut().zip(input) {
                *g += d * x;
            }
        }
        if l == 0 {
            break;
        }
        // Propagate through W, dropout and ELU of the hidden layer below.
        let mut d_in = vec![0.0; shape.inputs];
        for (j, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (acc, a) in d_in.iter_mut().zip(&w[j * shape.inputs..(j + 1) * shape.inputs]) {
                *acc += a * d;
            }
        }
        let z = &tape.pre[l - 1];
        if let Some(mask) = &tape.mask {
            let keep = mask.keep_probability;
            for ((d, &m), &zv) in d_in.iter_mut().zip(&mask.layers[l - 1]).zip(z) {
                *d = if m { *d / keep * elu_grad(zv) } else { 0.0 };
            }
        } else {
            for (d, &zv) in d_in.iter_mut().zip(z) {
                *d *= elu_grad(zv);
            }
        }
        delta = d_in;
    }
    Ok(())
}

/// Parameter gradient for one sample.
pub fn backward(params: &NetworkParameters, tape: &Tape, d_mean_logit: f64, d_sd_logit: f64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    backward_accumulate(params, tape, d_mean_logit, d_sd_logit, 1.0, &mut grad)?;
    Ok(grad)
}

const CHECKPOINT_FORMAT: &str = "uqr-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointRecord {
    format: String,
    version: u32,
    architecture: Architecture,
    training_seed: u64,
    layers: Vec<LayerRecord>,
}

/// Trained parameters plus the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParameters,
    pub training_seed: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let params = &self.params;
        let record = CheckpointRecord {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: params.arch.clone(),
            training_seed: self.training_seed,
            layers: params
                .shapes
                .iter()
                .map(|s| LayerRecord {
                    rows: s.outputs,
                    cols: s.inputs,
                    weights: params.values[s.weight_range()].to_vec(),
                    biases: params.values[s.bias_range()].to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&record).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: CheckpointRecord = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if record.format != CHECKPOINT_FORMAT || record.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                record.format, record.version
            )));
        }
        let shapes = record.architecture.layer_shapes();
        if shapes.len() != record.layers.len() {
            return Err(Error::Checkpoint("layer count does not match architecture".into()));
        }
        let mut values = Vec::with_capacity(record.architecture.parameter_count());
        for (shape, layer) in shapes.iter().zip(&record.layers) {
            if layer.rows != shape.outputs
                || layer.cols != shape.inputs
                || layer.weights.len() != shape.inputs * shape.outputs
                || layer.biases.len() != shape.outputs
            {
                return Err(Error::Checkpoint(format!(
                    "layer shape {}x{} does not match architecture {}x{}",
                    layer.rows, layer.cols, shape.outputs, shape.inputs
                )));
            }
            values.extend(&layer.weights);
            values.extend(&layer.biases);
        }
        let params = NetworkParameters::from_values(record.architecture, values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self {
            params,
            training_seed: record.training_seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
