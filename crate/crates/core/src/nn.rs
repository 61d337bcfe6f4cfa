//! A small fully-connected model with hand-written analytic gradients.
//!
//! Three components share one parameter container:
//! * feature extractor: `input -> hidden (relu) -> embed` (no final nonlinearity),
//! * classifier: `embed -> classes` linear + softmax,
//! * domain discriminator: `embed -> disc_hidden (relu) -> disc_hidden (relu) -> 1` logistic.
//!
//! Forward passes return caches so the per-loss backward routines can reuse
//! activations. All arithmetic is f64 and single-threaded deterministic.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ProbDist;

/// Layer widths of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub disc_hidden: usize,
    pub classes: usize,
}

impl NetDims {
    pub fn new(
        input: usize,
        hidden: usize,
        embed: usize,
        disc_hidden: usize,
        classes: usize,
    ) -> Self {
        NetDims {
            input,
            hidden,
            embed,
            disc_hidden,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input", self.input),
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("disc_hidden", self.disc_hidden),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!(
                    "net dimension {name} must be > 0"
                )));
            }
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "classifier needs at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Row-major dense matrix, `rows` outputs by `cols` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// `out = W x + b`
    fn affine(&self, x: &[f64], b: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = b[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out[r] = acc;
        }
    }

    /// `out = W^T d` (gradient through the affine map back to its input).
    fn affine_back(&self, d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dr) in d.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * dr;
            }
        }
    }
}

/// One dense layer; also reused as the per-layer block of a [`GradientSet`]
/// and of the optimizer's momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl DenseLayer {
    fn zeros(rows: usize, cols: usize) -> Self {
        DenseLayer {
            w: Mat::zeros(rows, cols),
            b: vec![0.0; rows],
        }
    }
}

pub const LAYER_COUNT: usize = 6;
pub const LAYER_NAMES: [&str; LAYER_COUNT] =
    ["feat1", "feat2", "classifier", "disc1", "disc2", "disc3"];

const FEAT1: usize = 0;
const FEAT2: usize = 1;
const CLF: usize = 2;
const DISC1: usize = 3;
const DISC2: usize = 4;
const DISC3: usize = 5;

fn layer_shapes(dims: &NetDims) -> [(usize, usize); LAYER_COUNT] {
    [
        (dims.hidden, dims.input),
        (dims.embed, dims.hidden),
        (dims.classes, dims.embed),
        (dims.disc_hidden, dims.embed),
        (dims.disc_hidden, dims.disc_hidden),
        (1, dims.disc_hidden),
    ]
}

/// All trainable parameters of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub dims: NetDims,
    pub layers: Vec<DenseLayer>,
}

impl NetParams {
    /// All-zero parameters (useful as a degenerate baseline in tests).
    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        let layers = layer_shapes(&dims)
            .iter()
            .map(|&(r, c)| DenseLayer::zeros(r, c))
            .collect();
        Ok(NetParams { dims, layers })
    }

    /// Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`), zero biases.
    pub fn init(dims: NetDims, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        for layer in &mut p.layers {
            let bound = (6.0 / (layer.w.cols + layer.w.rows) as f64).sqrt();
            for v in &mut layer.w.data {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.data.len() + l.b.len()).sum()
    }

    /// Flat read access over all parameters, weights before biases per layer.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.data.len() {
                return l.w.data[idx];
            }
            idx -= l.w.data.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.w.data.len() {
                l.w.data[idx] = value;
                return;
            }
            idx -= l.w.data.len();
            if idx < l.b.len() {
                l.b[idx] = value;
                return;
            }
            idx -= l.b.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.data.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// Gradients with exactly the shapes of [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<DenseLayer>,
}

impl GradientSet {
    pub fn zeros(dims: &NetDims) -> Self {
        GradientSet {
            layers: layer_shapes(dims)
                .iter()
                .map(|&(r, c)| DenseLayer::zeros(r, c))
                .collect(),
        }
    }

    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.data.len() {
                return l.w.data[idx];
            }
            idx -= l.w.data.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("flat gradient index out of range");
    }

    /// Global L2 norm over every block.
    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.data.iter().chain(l.b.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.w.data.iter_mut().for_each(|v| *v *= factor);
            l.b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &GradientSet, factor: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.data.iter_mut().zip(&b.w.data) {
                *x += factor * y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += factor * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.data.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// SGD with momentum, weight decay folded into the momentum buffer:
/// `v <- mu*v + (g + wd*theta); theta <- theta - lr*v`.
/// The same learning rate applies to every block.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<DenseLayer>,
}

impl OptimState {
    pub fn new(dims: &NetDims, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: layer_shapes(dims)
                .iter()
                .map(|&(r, c)| DenseLayer::zeros(r, c))
                .collect(),
        }
    }
}

pub fn sgd_step(params: &mut NetParams, grads: &GradientSet, opt: &mut OptimState) {
    for ((p, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity)
    {
        for ((pw, gw), vw) in p.w.data.iter_mut().zip(&g.w.data).zip(&mut v.w.data) {
            *vw = opt.momentum * *vw + (gw + opt.weight_decay * *pw);
            *pw -= opt.learning_rate * *vw;
        }
        for ((pb, gb), vb) in p.b.iter_mut().zip(&g.b).zip(&mut v.b) {
            *vb = opt.momentum * *vb + (gb + opt.weight_decay * *pb);
            *pb -= opt.learning_rate * *vb;
        }
    }
}

/// Scales the whole gradient to `max_norm` when its global L2 norm exceeds it.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut GradientSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Activations of one feature-extractor pass, kept for backward.
#[derive(Debug, Clone)]
pub struct FeatCache {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub embed: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClfCache {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub logit: f64,
    pub output: f64,
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Numerically stable logistic, clamped into the open interval (0, 1).
fn logistic(t: f64) -> f64 {
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    s.clamp(1e-300, 1.0 - 1e-16)
}

pub fn forward_features(params: &NetParams, x: &[f64]) -> Result<FeatCache> {
    if x.len() != params.dims.input {
        return Err(Error::Dimension {
            context: "forward_features input",
            expected: params.dims.input,
            actual: x.len(),
        });
    }
    let f1 = &params.layers[FEAT1];
    let mut z1 = vec![0.0; params.dims.hidden];
    f1.w.affine(x, &f1.b, &mut z1);
    let a1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();
    let f2 = &params.layers[FEAT2];
    let mut embed = vec![0.0; params.dims.embed];
    f2.w.affine(&a1, &f2.b, &mut embed);
    Ok(FeatCache {
        input: x.to_vec(),
        z1,
        a1,
        embed,
    })
}

pub fn forward_classifier_cached(params: &NetParams, feat: &FeatCache) -> ClfCache {
    let clf = &params.layers[CLF];
    let mut logits = vec![0.0; params.dims.classes];
    clf.w.affine(&feat.embed, &clf.b, &mut logits);
    let probs = softmax(&logits);
    ClfCache { logits, probs }
}

/// Softmax output of the classifier head.
pub fn forward_classifier(params: &NetParams, x: &[f64]) -> Result<ProbDist> {
    let feat = forward_features(params, x)?;
    let clf = forward_classifier_cached(params, &feat);
    ProbDist::new(clf.probs)
}

pub fn forward_discriminator_cached(params: &NetParams, feat: &FeatCache) -> DiscCache {
    let d1 = &params.layers[DISC1];
    let mut z1 = vec![0.0; params.dims.disc_hidden];
    d1.w.affine(&feat.embed, &d1.b, &mut z1);
    let a1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();
    let d2 = &params.layers[DISC2];
    let mut z2 = vec![0.0; params.dims.disc_hidden];
    d2.w.affine(&a1, &d2.b, &mut z2);
    let a2: Vec<f64> = z2.iter().map(|&z| relu(z)).collect();
    let d3 = &params.layers[DISC3];
    let mut logit = [0.0];
    d3.w.affine(&a2, &d3.b, &mut logit);
    DiscCache {
        z1,
        a1,
        z2,
        a2,
        logit: logit[0],
        output: logistic(logit[0]),
    }
}

/// Probability (in the open interval (0,1)) that `x` belongs to the labeled
/// pool, per the discriminator head.
pub fn forward_discriminator(params: &NetParams, x: &[f64]) -> Result<f64> {
    let feat = forward_features(params, x)?;
    Ok(forward_discriminator_cached(params, &feat).output)
}

/// Embedding vector `g(x)`.
pub fn embedding(params: &NetParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_features(params, x)?.embed)
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

fn accumulate_affine(grad: &mut DenseLayer, d_out: &[f64], input: &[f64]) {
    for (r, &d) in d_out.iter().enumerate() {
        let row = &mut grad.w.data[r * grad.w.cols..(r + 1) * grad.w.cols];
        for (g, &xi) in row.iter_mut().zip(input) {
            *g += d * xi;
        }
        grad.b[r] += d;
    }
}

/// Accumulates classifier gradients for one sample given `d(loss)/d(logits)`
/// and returns `d(loss)/d(embedding)`.
pub fn backward_classifier(
    params: &NetParams,
    feat: &FeatCache,
    dlogits: &[f64],
    grads: &mut GradientSet,
) -> Vec<f64> {
    accumulate_affine(&mut grads.layers[CLF], dlogits, &feat.embed);
    let mut d_embed = vec![0.0; params.dims.embed];
    params.layers[CLF].w.affine_back(dlogits, &mut d_embed);
    d_embed
}

/// Accumulates feature-extractor gradients for one sample given
/// `d(loss)/d(embedding)`; optionally returns `d(loss)/d(input)`.
pub fn backward_features(
    params: &NetParams,
    feat: &FeatCache,
    d_embed: &[f64],
    grads: &mut GradientSet,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    accumulate_affine(&mut grads.layers[FEAT2], d_embed, &feat.a1);
    let mut d_a1 = vec![0.0; params.dims.hidden];
    params.layers[FEAT2].w.affine_back(d_embed, &mut d_a1);
    let d_z1: Vec<f64> = d_a1
        .iter()
        .zip(&feat.z1)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    accumulate_affine(&mut grads.layers[FEAT1], &d_z1, &feat.input);
    if want_input_grad {
        let mut dx = vec![0.0; params.dims.input];
        params.layers[FEAT1].w.affine_back(&d_z1, &mut dx);
        Some(dx)
    } else {
        None
    }
}

/// Accumulates discriminator gradients for one sample given
/// `d(loss)/d(disc logit)` and returns `d(loss)/d(embedding)`.
pub fn backward_discriminator(
    params: &NetParams,
    feat: &FeatCache,
    disc: &DiscCache,
    dlogit: f64,
    grads: &mut GradientSet,
) -> Vec<f64> {
    accumulate_affine(&mut grads.layers[DISC3], &[dlogit], &disc.a2);
    let mut d_a2 = vec![0.0; params.dims.disc_hidden];
    params.layers[DISC3].w.affine_back(&[dlogit], &mut d_a2);
    let d_z2: Vec<f64> = d_a2
        .iter()
        .zip(&disc.z2)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    accumulate_affine(&mut grads.layers[DISC2], &d_z2, &disc.a1);
    let mut d_a1 = vec![0.0; params.dims.disc_hidden];
    params.layers[DISC2].w.affine_back(&d_z2, &mut d_a1);
    let d_z1: Vec<f64> = d_a1
        .iter()
        .zip(&disc.z1)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    accumulate_affine(&mut grads.layers[DISC1], &d_z1, &feat.embed);
    let mut d_embed = vec![0.0; params.dims.embed];
    params.layers[DISC1].w.affine_back(&d_z1, &mut d_embed);
    d_embed
}

/// Smallest |pre-activation| across every rectifier unit the model evaluates
/// for the given inputs (classifier and discriminator heads both included).
/// Finite-difference checks reject bases with kinks closer than their step.
pub fn min_abs_preactivation(params: &NetParams, inputs: &[Vec<f64>]) -> Result<f64> {
    let mut min = f64::INFINITY;
    for x in inputs {
        let feat = forward_features(params, x)?;
        let disc = forward_discriminator_cached(params, &feat);
        for z in feat.z1.iter().chain(disc.z1.iter()).chain(disc.z2.iter()) {
            min = min.min(z.abs());
        }
    }
    Ok(min)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointBlock {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    dims: NetDims,
    blocks: BTreeMap<String, CheckpointBlock>,
}

impl NetParams {
    /// Serializes every block as `name.w` / `name.b` with row-major values.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let mut blocks = BTreeMap::new();
        for (name, layer) in LAYER_NAMES.iter().zip(&self.layers) {
            blocks.insert(
                format!("{name}.w"),
                CheckpointBlock {
                    shape: vec![layer.w.rows, layer.w.cols],
                    values: layer.w.data.clone(),
                },
            );
            blocks.insert(
                format!("{name}.b"),
                CheckpointBlock {
                    shape: vec![layer.b.len()],
                    values: layer.b.clone(),
                },
            );
        }
        Ok(serde_json::to_string_pretty(&Checkpoint {
            dims: self.dims,
            blocks,
        })?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        let mut params = NetParams::zeros(ckpt.dims)?;
        for (name, layer) in LAYER_NAMES.iter().zip(&mut params.layers) {
            let w = ckpt
                .blocks
                .get(&format!("{name}.w"))
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint misses block {name}.w")))?;
            if w.shape != [layer.w.rows, layer.w.cols] || w.values.len() != layer.w.data.len() {
                return Err(Error::InvalidInput(format!(
                    "checkpoint block {name}.w has shape {:?}, expected [{}, {}]",
                    w.shape, layer.w.rows, layer.w.cols
                )));
            }
            layer.w.data.copy_from_slice(&w.values);
            let b = ckpt
                .blocks
                .get(&format!("{name}.b"))
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint misses block {name}.b")))?;
            if b.shape != [layer.b.len()] {
                return Err(Error::InvalidInput(format!(
                    "checkpoint block {name}.b has shape {:?}, expected [{}]",
                    b.shape,
                    layer.b.len()
                )));
            }
            layer.b.copy_from_slice(&b.values);
        }
        if !params.all_finite() {
            return Err(Error::InvalidInput(
                "checkpoint holds non-finite values".into(),
            ));
        }
        Ok(params)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_checkpoint_json(&text)
    }
}
