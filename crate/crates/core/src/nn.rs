//! Minimal fully connected binary classifier.
//!
//! Parameters live in one flat vector, laid out layer by layer: the weight
//! matrix of each layer in row-major `(out, in)` order followed by its biases.
//! The network ends in a single logit; `predict` thresholds it at zero.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArchitecture(format!("unknown activation {other:?}"))),
        }
    }
}

/// Layer widths (input first, single-logit output last) and hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawArchitecture", into = "RawArchitecture")]
pub struct MlpArchitecture {
    widths: Vec<usize>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct RawArchitecture {
    layer_widths: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

impl TryFrom<RawArchitecture> for MlpArchitecture {
    type Error = Error;

    fn try_from(raw: RawArchitecture) -> Result<Self> {
        MlpArchitecture::new(raw.layer_widths, raw.activation)
    }
}

impl From<MlpArchitecture> for RawArchitecture {
    fn from(a: MlpArchitecture) -> Self {
        RawArchitecture {
            layer_widths: a.widths,
            activation: a.activation,
        }
    }
}

impl MlpArchitecture {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least 2 layers, got {}",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArchitecture("all widths must be >= 1".into()));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidArchitecture(
                "output layer must be a single logit".into(),
            ));
        }
        Ok(Self { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Σ (w_i·w_{i+1} + w_{i+1}).
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn max_width(&self) -> usize {
        *self.widths.iter().max().unwrap()
    }

    /// `(weight_offset, bias_offset, fan_in, fan_out)` for each layer.
    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut off = 0;
        self.widths.windows(2).map(move |p| {
            let (fan_in, fan_out) = (p[0], p[1]);
            let w_off = off;
            let b_off = off + fan_in * fan_out;
            off = b_off + fan_out;
            (w_off, b_off, fan_in, fan_out)
        })
    }
}

/// Flat parameter vector of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Checked construction: length must match `arch` and every entry be finite.
    pub fn new(arch: &MlpArchitecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(arch: &MlpArchitecture) -> Self {
        Self(vec![0.0; arch.param_count()])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn squared_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Weights ~ U(−1/√fan_in, 1/√fan_in), biases zero.
pub fn init_weights(arch: &MlpArchitecture, seed: u64) -> WeightVector {
    let mut rng = stream_rng(seed, Stream::Init);
    let mut w = vec![0.0; arch.param_count()];
    for (w_off, _, fan_in, fan_out) in arch.layer_offsets() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut w[w_off..w_off + fan_in * fan_out] {
            *v = rng.random_range(-bound..bound);
        }
    }
    WeightVector(w)
}

fn check_input(arch: &MlpArchitecture, w: &WeightVector, x: &[f64]) -> Result<()> {
    if w.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: w.len(),
        });
    }
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Forward pass into caller-provided ping-pong buffers.
fn forward_into(arch: &MlpArchitecture, w: &[f64], x: &[f64], buf: &mut [Vec<f64>; 2]) -> f64 {
    let last = arch.num_layers() - 1;
    buf[0][..x.len()].copy_from_slice(x);
    for (l, (w_off, b_off, fan_in, fan_out)) in arch.layer_offsets().enumerate() {
        let (src, dst) = if l % 2 == 0 {
            let (a, b) = buf.split_at_mut(1);
            (&a[0], &mut b[0])
        } else {
            let (a, b) = buf.split_at_mut(1);
            (&b[0], &mut a[0])
        };
        for j in 0..fan_out {
            let row = &w[w_off + j * fan_in..w_off + (j + 1) * fan_in];
            let z = w[b_off + j]
                + row
                    .iter()
                    .zip(&src[..fan_in])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            dst[j] = if l == last { z } else { arch.activation.apply(z) };
        }
    }
    buf[arch.num_layers() % 2][0]
}

fn scratch(arch: &MlpArchitecture) -> [Vec<f64>; 2] {
    let n = arch.max_width();
    [vec![0.0; n], vec![0.0; n]]
}

/// Output logit for a single feature vector.
pub fn forward(arch: &MlpArchitecture, w: &WeightVector, x: &[f64]) -> Result<f64> {
    check_input(arch, w, x)?;
    Ok(forward_into(arch, &w.0, x, &mut scratch(arch)))
}

/// Logits for every row of a row-major feature buffer.
pub fn forward_rows(arch: &MlpArchitecture, w: &WeightVector, features: &[f64]) -> Result<Vec<f64>> {
    let d = arch.input_dim();
    if !features.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: features.len() % d,
        });
    }
    if w.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: w.len(),
        });
    }
    let mut buf = scratch(arch);
    Ok(features
        .chunks_exact(d)
        .map(|x| forward_into(arch, &w.0, x, &mut buf))
        .collect())
}

/// Label 1 iff the logit is strictly positive.
#[inline]
pub fn predict(logit: f64) -> u32 {
    u32::from(logit > 0.0)
}

/// Predicted labels for every row.
pub fn predict_rows(arch: &MlpArchitecture, w: &WeightVector, features: &[f64]) -> Result<Vec<u32>> {
    Ok(forward_rows(arch, w, features)?
        .into_iter()
        .map(predict)
        .collect())
}

/// Binary cross-entropy of a logit, `softplus(z) − y·z`, without overflow.
#[inline]
pub fn bce_loss(logit: f64, label: u32) -> f64 {
    let y = f64::from(label);
    logit.max(0.0) - y * logit + (-logit.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-layer pre-activations and outputs kept for backprop.
struct Tape {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl Tape {
    fn new(arch: &MlpArchitecture) -> Self {
        Self {
            pre: arch.widths[1..].iter().map(|&n| vec![0.0; n]).collect(),
            post: arch.widths.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; arch.max_width()],
            next_delta: vec![0.0; arch.max_width()],
        }
    }
}

/// Adds ∂BCE/∂w for one example into `grad` and returns its loss.
fn accumulate_example(
    arch: &MlpArchitecture,
    w: &[f64],
    x: &[f64],
    y: u32,
    grad: &mut [f64],
    tape: &mut Tape,
) -> f64 {
    let last = arch.num_layers() - 1;
    let offsets: Vec<_> = arch.layer_offsets().collect();
    tape.post[0].copy_from_slice(x);
    for (l, &(w_off, b_off, fan_in, fan_out)) in offsets.iter().enumerate() {
        for j in 0..fan_out {
            let row = &w[w_off + j * fan_in..w_off + (j + 1) * fan_in];
            let z = w[b_off + j]
                + row
                    .iter()
                    .zip(&tape.post[l])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            tape.pre[l][j] = z;
            tape.post[l + 1][j] = if l == last { z } else { arch.activation.apply(z) };
        }
    }
    let logit = tape.pre[last][0];
    let loss = bce_loss(logit, y);

    tape.delta[0] = sigmoid(logit) - f64::from(y);
    for l in (0..=last).rev() {
        let (w_off, b_off, fan_in, fan_out) = offsets[l];
        for j in 0..fan_out {
            let d = tape.delta[j];
            grad[b_off + j] += d;
            let g = &mut grad[w_off + j * fan_in..w_off + (j + 1) * fan_in];
            for (gi, ai) in g.iter_mut().zip(&tape.post[l]) {
                *gi += d * ai;
            }
        }
        if l == 0 {
            break;
        }
        for i in 0..fan_in {
            let mut s = 0.0;
            for j in 0..fan_out {
                s += w[w_off + j * fan_in + i] * tape.delta[j];
            }
            let z = tape.pre[l - 1][i];
            let a = tape.post[l][i];
            tape.next_delta[i] = s * arch.activation.derivative(z, a);
        }
        std::mem::swap(&mut tape.delta, &mut tape.next_delta);
    }
    loss
}

/// Mean BCE loss and its gradient over the rows `idx` of `data`.
fn batch_gradient(
    arch: &MlpArchitecture,
    w: &[f64],
    data: &LabeledSample,
    idx: &[usize],
    grad: &mut [f64],
    tape: &mut Tape,
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for &i in idx {
        loss += accumulate_example(arch, w, data.row(i), data.labels()[i], grad, tape);
    }
    let scale = 1.0 / idx.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    loss * scale
}

/// Gradient of the mean BCE over `batch` with respect to the weights.
pub fn bce_gradient(
    arch: &MlpArchitecture,
    w: &WeightVector,
    batch: &LabeledSample,
) -> Result<WeightVector> {
    if batch.is_empty() {
        return Err(Error::EmptyData("gradient batch"));
    }
    if batch.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: batch.dim(),
        });
    }
    batch.ensure_binary()?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; arch.param_count()];
    let loss = batch_gradient(arch, &w.0, batch, &idx, &mut grad, &mut Tape::new(arch));
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("batch loss {loss}")));
    }
    Ok(WeightVector(grad))
}

/// Mean BCE over a sample.
pub fn mean_bce(arch: &MlpArchitecture, w: &WeightVector, data: &LabeledSample) -> Result<f64> {
    let logits = forward_rows(arch, w, data.features())?;
    if logits.is_empty() {
        return Err(Error::EmptyData("loss sample"));
    }
    Ok(logits
        .iter()
        .zip(data.labels())
        .map(|(&z, &y)| bce_loss(z, y))
        .sum::<f64>()
        / logits.len() as f64)
}

/// SGD-with-momentum hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            momentum: 0.95,
            batch_size: 128,
            epochs: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// When to snapshot weights during training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointSchedule {
    /// Evenly spaced snapshots strictly inside the first epoch.
    pub first_epoch_checkpoints: usize,
    /// Snapshot at the end of every epoch; otherwise only at the end of training.
    pub per_epoch_after: bool,
}

impl Default for CheckpointSchedule {
    fn default() -> Self {
        Self {
            first_epoch_checkpoints: 10,
            per_epoch_after: true,
        }
    }
}

impl CheckpointSchedule {
    /// Optimizer step counts (1-based, after the step) at which to snapshot.
    pub fn steps(&self, steps_per_epoch: usize, epochs: usize) -> Vec<usize> {
        let n = self.first_epoch_checkpoints;
        let mut steps: Vec<usize> = (1..=n)
            .map(|k| k * steps_per_epoch / (n + 1))
            .filter(|&s| s >= 1 && s < steps_per_epoch)
            .collect();
        if self.per_epoch_after {
            steps.extend((1..=epochs).map(|e| e * steps_per_epoch));
        } else {
            steps.push(epochs * steps_per_epoch);
        }
        steps.dedup();
        steps
    }
}

/// A snapshot taken during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Samples seen so far divided by the training-set size.
    pub seen_fraction: f64,
    pub seen_samples: usize,
    pub step: usize,
    pub weights: WeightVector,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: WeightVector,
    pub checkpoints: Vec<Checkpoint>,
    pub steps: usize,
}

/// Mini-batch SGD with heavy-ball momentum (`v ← μv + g`, `w ← w − ηv`).
/// Each epoch reshuffles with a stream derived from `cfg.seed`; a final
/// partial batch is kept.
pub fn train(
    arch: &MlpArchitecture,
    w0: &WeightVector,
    data: &LabeledSample,
    cfg: &TrainConfig,
    sched: &CheckpointSchedule,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData("training sample"));
    }
    if data.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: data.dim(),
        });
    }
    if w0.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: w0.len(),
        });
    }
    data.ensure_binary()?;

    let m = data.len();
    let steps_per_epoch = m.div_ceil(cfg.batch_size);
    let snap_steps = sched.steps(steps_per_epoch, cfg.epochs);
    let mut next_snap = snap_steps.iter().copied().peekable();

    let mut rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut w = w0.0.clone();
    let mut velocity = vec![0.0; w.len()];
    let mut grad = vec![0.0; w.len()];
    let mut tape = Tape::new(arch);
    let mut order: Vec<usize> = (0..m).collect();
    let mut checkpoints = Vec::with_capacity(snap_steps.len());
    let mut step = 0;
    let mut seen = 0;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let loss = batch_gradient(arch, &w, data, batch, &mut grad, &mut tape);
            if !loss.is_finite() {
                return Err(Error::Diverged { step, what: "loss" });
            }
            for ((wi, vi), gi) in w.iter_mut().zip(&mut velocity).zip(&grad) {
                *vi = cfg.momentum * *vi + gi;
                *wi -= cfg.learning_rate * *vi;
            }
            step += 1;
            seen += batch.len();
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step, what: "weights" });
            }
            if next_snap.peek() == Some(&step) {
                next_snap.next();
                checkpoints.push(Checkpoint {
                    seen_fraction: seen as f64 / m as f64,
                    seen_samples: seen,
                    step,
                    weights: WeightVector(w.clone()),
                });
            }
        }
    }
    Ok(TrainOutput {
        weights: WeightVector(w),
        checkpoints,
        steps: step,
    })
}

const CHECKPOINT_MAGIC: &str = "udabound-checkpoint v1";

/// Write a checkpoint: one ASCII header line followed by the weights as
/// little-endian `f64` in flat-vector order.
pub fn write_checkpoint<W: Write>(
    mut out: W,
    arch: &MlpArchitecture,
    seen_fraction: f64,
    w: &WeightVector,
) -> Result<()> {
    let widths: Vec<String> = arch.widths.iter().map(usize::to_string).collect();
    writeln!(
        out,
        "{CHECKPOINT_MAGIC} widths={} activation={} seen_fraction={} params={}",
        widths.join(","),
        arch.activation,
        seen_fraction,
        w.len()
    )?;
    for v in &w.0 {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_checkpoint`].
pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<(MlpArchitecture, f64, WeightVector)> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let rest = header
        .trim_end()
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| Error::Checkpoint("bad magic".into()))?;
    let mut widths = None;
    let mut activation = None;
    let mut seen = None;
    let mut params = None;
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad header field {field:?}")))?;
        let bad = |_| Error::Checkpoint(format!("bad value for {k}: {v:?}"));
        match k {
            "widths" => {
                widths = Some(
                    v.split(',')
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(e.to_string()))?,
                )
            }
            "activation" => activation = Some(v.parse::<Activation>()?),
            "seen_fraction" => seen = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "params" => params = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(Error::Checkpoint(format!("unknown header field {k:?}"))),
        }
    }
    let missing = |f: &str| Error::Checkpoint(format!("header lacks {f}"));
    let arch = MlpArchitecture::new(
        widths.ok_or_else(|| missing("widths"))?,
        activation.ok_or_else(|| missing("activation"))?,
    )?;
    let seen = seen.ok_or_else(|| missing("seen_fraction"))?;
    let params = params.ok_or_else(|| missing("params"))?;
    if params != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "params={params} but architecture has {}",
            arch.param_count()
        )));
    }
    let mut bytes = Vec::with_capacity(params * 8);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != params * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} payload bytes, found {}",
            params * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let w = WeightVector::new(&arch, values)?;
    Ok((arch, seen, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(widths: &[usize]) -> MlpArchitecture {
        MlpArchitecture::new(widths.to_vec(), Activation::Tanh).unwrap()
    }

    /// Straightforward matrix-vector forward pass used as an oracle.
    fn naive_forward(arch: &MlpArchitecture, w: &[f64], x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut off = 0;
        let n = arch.widths().len() - 1;
        for l in 0..n {
            let (fi, fo) = (arch.widths()[l], arch.widths()[l + 1]);
            let mat: Vec<Vec<f64>> = (0..fo)
                .map(|j| w[off + j * fi..off + (j + 1) * fi].to_vec())
                .collect();
            let bias = &w[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z = vec![0.0; fo];
            for j in 0..fo {
                z[j] = bias[j];
                for i in 0..fi {
                    z[j] += mat[j][i] * a[i];
                }
            }
            a = if l + 1 == n {
                z
            } else {
                z.iter().map(|v| arch.activation().apply(*v)).collect()
            };
        }
        a[0]
    }

    fn random_weights(arch: &MlpArchitecture, rng: &mut ChaCha8Rng) -> WeightVector {
        WeightVector::new(
            arch,
            (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn architecture_validation() {
        assert!(MlpArchitecture::new(vec![3], Activation::Relu).is_err());
        assert!(MlpArchitecture::new(vec![3, 0, 1], Activation::Relu).is_err());
        assert!(MlpArchitecture::new(vec![3, 2], Activation::Relu).is_err());
        assert_eq!(arch(&[2, 3, 1]).param_count(), 13);
        assert_eq!(arch(&[1024, 600, 600, 1]).param_count(), 1024 * 600 + 600 + 600 * 600 + 600 + 601);
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = arch(&[2, 3, 1]);
        let w1 = init_weights(&a, 7);
        assert_eq!(w1.len(), 13);
        assert_eq!(w1, init_weights(&a, 7));
        assert_ne!(w1, init_weights(&a, 8));
        // biases zero, weights within the fan-in bound
        let v = w1.values();
        assert!(v[6..9].iter().all(|b| *b == 0.0));
        assert_eq!(v[12], 0.0);
        let bound = 1.0 / 2f64.sqrt();
        assert!(v[..6].iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn forward_trivial_cases() {
        let a = arch(&[2, 3, 1]);
        let z = WeightVector::zeros(&a);
        assert_eq!(forward(&a, &z, &[0.3, -4.0]).unwrap(), 0.0);
        let one = arch(&[1, 1]);
        let w = WeightVector::new(&one, vec![1.0, 0.0]).unwrap();
        assert_eq!(forward(&one, &w, &[0.5]).unwrap(), 0.5);
        assert!(matches!(
            forward(&a, &z, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for widths in [[3, 5, 4, 1], [4, 7, 2, 1]] {
            for act in [Activation::Relu, Activation::Tanh] {
                let a = MlpArchitecture::new(widths.to_vec(), act).unwrap();
                for _ in 0..50 {
                    let w = random_weights(&a, &mut rng);
                    let x: Vec<f64> = (0..a.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let got = forward(&a, &w, &x).unwrap();
                    let want = naive_forward(&a, w.values(), &x);
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn predict_tie_break() {
        assert_eq!(predict(3.2), 1);
        assert_eq!(predict(0.0), 0);
        assert_eq!(predict(-0.001), 0);
    }

    #[test]
    fn bce_is_stable() {
        assert!(bce_loss(1e4, 1) < 1e-300);
        assert!((bce_loss(-1e4, 1) - 1e4).abs() < 1e-9);
        assert!((bce_loss(0.0, 0) - 2f64.ln()).abs() < 1e-15);
    }

    proptest! {
        /// BCE/ln2 dominates the 0-1 loss at the zero threshold.
        #[test]
        fn bce_over_ln2_upper_bounds_zero_one(z in -50.0f64..50.0, y in 0u32..2) {
            let zero_one = f64::from(predict(z) != y);
            prop_assert!(bce_loss(z, y) / 2f64.ln() >= zero_one - 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_confident_fit() {
        let a = arch(&[1, 1]);
        let w = WeightVector::new(&a, vec![0.0, 40.0]).unwrap();
        let s = LabeledSample::new(1, vec![0.3], vec![1]).unwrap();
        assert!(bce_gradient(&a, &w, &s).unwrap().norm() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = arch(&[3, 4, 3, 1]);
        let w = random_weights(&a, &mut rng);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let s = LabeledSample::from_rows(&rows, vec![0, 1, 1, 0, 1]).unwrap();
        let g = bce_gradient(&a, &w, &s).unwrap();
        let h = 1e-5;
        for k in 0..a.param_count() {
            let mut plus = w.clone();
            plus.values_mut()[k] += h;
            let mut minus = w.clone();
            minus.values_mut()[k] -= h;
            let fd = (mean_bce(&a, &plus, &s).unwrap() - mean_bce(&a, &minus, &s).unwrap()) / (2.0 * h);
            let got = g.values()[k];
            assert!((got - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "coord {k}: {got} vs {fd}");
        }
    }

    #[test]
    fn gradient_is_mean_of_per_point_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = arch(&[2, 3, 1]);
        let w = random_weights(&a, &mut rng);
        let both = LabeledSample::from_rows(&[vec![0.1, 0.7], vec![-1.2, 0.4]], vec![1, 0]).unwrap();
        let g = bce_gradient(&a, &w, &both).unwrap();
        let g0 = bce_gradient(&a, &w, &both.subset(&[0])).unwrap();
        let g1 = bce_gradient(&a, &w, &both.subset(&[1])).unwrap();
        for k in 0..g.len() {
            let mean = 0.5 * (g0.values()[k] + g1.values()[k]);
            assert!((g.values()[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_rejects_bad_input() {
        let a = arch(&[1, 1]);
        let w = WeightVector::zeros(&a);
        let s = LabeledSample::new(1, vec![0.3], vec![2]).unwrap();
        assert!(bce_gradient(&a, &w, &s).is_err());
    }

    #[test]
    fn schedule_counts() {
        let s = CheckpointSchedule::default();
        let steps = s.steps(32, 5);
        assert_eq!(steps.len(), 15);
        assert!(steps.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(&steps[10..], &[32, 64, 96, 128, 160]);
        // tiny epochs collapse duplicate in-epoch snapshots
        let small = s.steps(3, 2);
        assert!(small.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(small, vec![1, 2, 3, 6]);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert_eq!(c.momentum, 0.95);
        assert_eq!(c.batch_size, 128);
        c.epochs = 0;
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let a = arch(&[2, 3, 1]);
        let w0 = init_weights(&a, 1);
        let s = LabeledSample::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&a, &w0, &s, &cfg, &CheckpointSchedule::default()).unwrap();
        assert_eq!(out.weights, w0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let a = arch(&[2, 3, 1]);
        let w = init_weights(&a, 9);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &a, 0.25, &w).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..header_end]).unwrap(),
            "udabound-checkpoint v1 widths=2,3,1 activation=tanh seen_fraction=0.25 params=13"
        );
        assert_eq!(buf.len(), header_end + 1 + 13 * 8);
        let (a2, seen, w2) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!((a2, seen, w2), (a, 0.25, w));
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }
}
