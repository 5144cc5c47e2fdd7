//! Synthetic 10-class task and small trainable models.
//!
//! Inputs are 64-value (8x8) `u8` patterns drawn around one random
//! prototype per class. Models are bias-free ReLU networks trained in
//! float and quantized to `i8` weights with a power-of-two scale per
//! layer; without biases the network is positively homogeneous, so a
//! per-layer right shift is the only requantization needed.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::model::{Activation, LayerSpec, ModelDescriptor, Pooling, QuantLayer, QuantModel};
use crate::quant::QuantMatrix;
use crate::rng::SeedTree;
use crate::system::{accuracy, requantize};

pub const CLASSES: usize = 10;
pub const INPUT_DIM: usize = 64;

const PROTO_LOW: f64 = 48.0;
const PROTO_HIGH: f64 = 208.0;
const NOISE_SD: f64 = 115.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub train_x: Vec<Vec<u8>>,
    pub train_y: Vec<u8>,
    pub test_x: Vec<Vec<u8>>,
    pub test_y: Vec<u8>,
}

impl SyntheticDataset {
    pub fn dim(&self) -> usize {
        INPUT_DIM
    }
}

/// Class-balanced samples: sample `i` has label `i % 10`.
pub fn generate_dataset(seed: u64, n_train: usize, n_test: usize) -> Result<SyntheticDataset> {
    if n_train < 100 || n_test < 100 {
        return Err(Error::Config(format!(
            "dataset needs at least 100 train and test samples, got {n_train}/{n_test}"
        )));
    }
    let tree = SeedTree::new(seed).child("dataset");
    let mut rng = tree.child("prototypes").rng();
    let proto_dist = Uniform::new(PROTO_LOW, PROTO_HIGH).expect("valid range");
    let protos: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| (0..INPUT_DIM).map(|_| proto_dist.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let draw = |label: &str, n: usize| {
        let mut rng = tree.child(label).rng();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % CLASSES;
            xs.push(
                protos[y]
                    .iter()
                    .map(|&mu| (mu + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                    .collect(),
            );
            ys.push(y as u8);
        }
        (xs, ys)
    };
    let (train_x, train_y) = draw("train", n_train);
    let (test_x, test_y) = draw("test", n_test);
    Ok(SyntheticDataset {
        train_x,
        train_y,
        test_x,
        test_y,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZooModel {
    /// 64-80-48-10 fully connected.
    Mlp,
    /// Conv over the two 32-pixel image halves with global max pool, then 64-48-10.
    Cnn,
}

impl ZooModel {
    pub const ALL: [ZooModel; 2] = [ZooModel::Mlp, ZooModel::Cnn];

    pub fn name(&self) -> &'static str {
        match self {
            ZooModel::Mlp => "mlp",
            ZooModel::Cnn => "cnn",
        }
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        match self {
            ZooModel::Mlp => ModelDescriptor::mlp(&[64, 80, 48, 10]),
            // the conv layer slides one 64-wide filter bank over two halves
            // of the hidden vector and max-pools them
            ZooModel::Cnn => ModelDescriptor::new(vec![
                LayerSpec::fc(64, 128, Activation::Relu),
                LayerSpec::conv(2, 64, 48, Activation::Relu, Pooling::Max),
                LayerSpec::fc(48, 10, Activation::None),
            ]),
        }
        .expect("zoo descriptors are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Row-major `m x n` float weights per layer.
    pub float_weights: Vec<Vec<f64>>,
    pub quant: QuantModel,
    pub float_accuracy: f64,
    pub quant_accuracy: f64,
}

struct Cache {
    /// Input of each layer (flattened positions).
    inputs: Vec<Vec<f64>>,
    /// Per layer, per output vector: pre-activation values.
    pre: Vec<Vec<f64>>,
    /// Per layer: winning position per channel under max pooling.
    argpos: Vec<Vec<usize>>,
}

fn forward(desc: &ModelDescriptor, weights: &[Vec<f64>], x: &[f64]) -> (Vec<f64>, Cache) {
    let mut cache = Cache {
        inputs: Vec::new(),
        pre: Vec::new(),
        argpos: Vec::new(),
    };
    let mut act = x.to_vec();
    for (spec, w) in desc.layers.iter().zip(weights) {
        let (m, n) = (spec.m, spec.n);
        let per_pos: Vec<Vec<f64>> = act
            .chunks(m)
            .map(|xp| {
                let mut z = vec![0.0; n];
                for (i, &xi) in xp.iter().enumerate() {
                    if xi != 0.0 {
                        for (zj, &wij) in z.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                            *zj += xi * wij;
                        }
                    }
                }
                z
            })
            .collect();
        let (pre, argpos) = match spec.pooling {
            Pooling::None => (per_pos.concat(), Vec::new()),
            Pooling::Max => {
                let mut best = per_pos[0].clone();
                let mut arg = vec![0usize; n];
                for (p, z) in per_pos.iter().enumerate().skip(1) {
                    for j in 0..n {
                        if z[j] > best[j] {
                            best[j] = z[j];
                            arg[j] = p;
                        }
                    }
                }
                (best, arg)
            }
        };
        let out: Vec<f64> = match spec.activation {
            Activation::Relu => pre.iter().map(|v| v.max(0.0)).collect(),
            Activation::None => pre.clone(),
        };
        cache.inputs.push(act);
        cache.pre.push(pre);
        cache.argpos.push(argpos);
        act = out;
    }
    (act, cache)
}

fn sgd_step(desc: &ModelDescriptor, weights: &mut [Vec<f64>], x: &[f64], y: usize, lr: f64) {
    let (logits, cache) = forward(desc, weights, x);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[y] -= 1.0;
    for li in (0..desc.len()).rev() {
        let spec = desc.layers[li];
        let (m, n) = (spec.m, spec.n);
        if spec.activation == Activation::Relu {
            for (g, &z) in grad.iter_mut().zip(&cache.pre[li]) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        // gradient per position
        let per_pos: Vec<Vec<f64>> = match spec.pooling {
            Pooling::None => grad.chunks(n).map(|c| c.to_vec()).collect(),
            Pooling::Max => {
                let mut out = vec![vec![0.0; n]; spec.positions];
                for j in 0..n {
                    out[cache.argpos[li][j]][j] = grad[j];
                }
                out
            }
        };
        let input = &cache.inputs[li];
        let mut dx = vec![0.0; input.len()];
        if li > 0 {
            let w = &weights[li];
            for (p, gp) in per_pos.iter().enumerate() {
                for i in 0..m {
                    let row = &w[i * n..(i + 1) * n];
                    dx[p * m + i] = row.iter().zip(gp).map(|(a, b)| a * b).sum();
                }
            }
        }
        let w = &mut weights[li];
        for (p, gp) in per_pos.iter().enumerate() {
            for i in 0..m {
                let xi = input[p * m + i];
                if xi == 0.0 {
                    continue;
                }
                for (wij, &g) in w[i * n..(i + 1) * n].iter_mut().zip(gp) {
                    *wij -= lr * xi * g;
                }
            }
        }
        grad = dx;
    }
}

fn scaled(x: &[u8]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v) / 255.0).collect()
}

fn float_accuracy(desc: &ModelDescriptor, weights: &[Vec<f64>], xs: &[Vec<u8>], ys: &[u8]) -> f64 {
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| {
            let (out, _) = forward(desc, weights, &scaled(x));
            let mut best = 0;
            for (i, v) in out.iter().enumerate() {
                if *v > out[best] {
                    best = i;
                }
            }
            best == usize::from(y)
        })
        .count();
    hits as f64 / ys.len() as f64
}

/// Power-of-two exponent putting the largest magnitude just inside `i8`.
fn weight_exponent(w: &[f64]) -> i32 {
    let max = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    (127.0 / max).log2().floor() as i32
}

/// Smallest shift keeping `u8` saturation under 1% of the outputs.
fn calibrate_shift(values: &[i32]) -> i8 {
    for s in 0..=31i8 {
        let sat = values.iter().filter(|&&v| (v >> s) > 255).count();
        if (sat as f64) < 0.01 * values.len() as f64 {
            return s;
        }
    }
    31
}

/// Quantizes float weights, calibrating each layer's shift on `calib`.
pub fn quantize(desc: &ModelDescriptor, weights: &[Vec<f64>], calib: &[Vec<u8>]) -> Result<QuantModel> {
    desc.validate()?;
    if weights.len() != desc.len() {
        return Err(Error::dim(desc.len(), weights.len(), "float layers"));
    }
    for spec in &desc.layers {
        // u8 inputs times i8 weights summed over m rows must fit i32
        if (spec.m as i64) * 255 * 128 >= i64::from(i32::MAX) {
            return Err(Error::Capacity(format!(
                "layer height {} can overflow i32 accumulation",
                spec.m
            )));
        }
    }
    let mut acts: Vec<Vec<u8>> = calib.to_vec();
    let mut layers = Vec::with_capacity(desc.len());
    for (li, (spec, w)) in desc.layers.iter().zip(weights).enumerate() {
        let e = weight_exponent(w);
        let factor = 2f64.powi(e);
        let values: Vec<i8> = w
            .iter()
            .map(|v| (v * factor).round().clamp(-128.0, 127.0) as i8)
            .collect();
        let mut layer = QuantLayer {
            spec: *spec,
            weights: QuantMatrix::new(spec.m, spec.n, values, e)?,
            shift: 0,
        };
        if li + 1 < desc.len() {
            let single = QuantModel::new(vec![layer.clone()])?;
            let outs: Vec<Vec<i32>> = acts
                .iter()
                .map(|a| crate::system::infer_unprotected(&single, a).map(|r| r.logits))
                .collect::<Result<_>>()?;
            layer.shift = calibrate_shift(&outs.concat());
            acts = outs
                .iter()
                .map(|o| o.iter().map(|&v| requantize(v, layer.shift)).collect())
                .collect();
        }
        layers.push(layer);
    }
    QuantModel::new(layers)
}

/// Plain SGD on softmax cross-entropy; deterministic per seed.
pub fn train(ds: &SyntheticDataset, desc: &ModelDescriptor, epochs: usize, seed: u64) -> Result<TrainedModel> {
    desc.validate()?;
    if desc.input_width() != INPUT_DIM || desc.output_width() != CLASSES {
        return Err(Error::Config(format!(
            "zoo models map {INPUT_DIM} inputs to {CLASSES} classes, got {} -> {}",
            desc.input_width(),
            desc.output_width()
        )));
    }
    let tree = SeedTree::new(seed).child("train");
    let mut init = tree.child("init").rng();
    let mut weights: Vec<Vec<f64>> = desc
        .layers
        .iter()
        .map(|s| {
            let he = Normal::new(0.0, (2.0 / s.m as f64).sqrt()).expect("valid sd");
            (0..s.m * s.n).map(|_| he.sample(&mut init)).collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..ds.train_x.len()).collect();
    let mut shuffle = tree.child("order").rng();
    let base_lr = 0.01;
    for epoch in 0..epochs {
        order.shuffle(&mut shuffle);
        let lr = base_lr / (1.0 + epoch as f64 * 0.2);
        for &i in &order {
            sgd_step(
                desc,
                &mut weights,
                &scaled(&ds.train_x[i]),
                usize::from(ds.train_y[i]),
                lr,
            );
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Training(format!(
                "weights diverged in epoch {epoch}; try another seed"
            )));
        }
    }

    let float_acc = float_accuracy(desc, &weights, &ds.test_x, &ds.test_y);
    if epochs > 0 && float_acc < 0.5 {
        return Err(Error::Training(format!(
            "test accuracy {float_acc:.3} below 0.5; try another seed"
        )));
    }
    let calib_n = ds.train_x.len().min(500);
    let quant = quantize(desc, &weights, &ds.train_x[..calib_n])?;
    let quant_acc = accuracy(&quant, &ds.test_x, &ds.test_y)?;
    Ok(TrainedModel {
        float_weights: weights,
        quant,
        float_accuracy: float_acc,
        quant_accuracy: quant_acc,
    })
}

pub fn train_mlp(ds: &SyntheticDataset, layer_dims: &[usize], epochs: usize, seed: u64) -> Result<TrainedModel> {
    if layer_dims.first() != Some(&INPUT_DIM) || layer_dims.last() != Some(&CLASSES) {
        return Err(Error::Config(format!(
            "layer_dims must start at {INPUT_DIM} and end at {CLASSES}"
        )));
    }
    train(ds, &ModelDescriptor::mlp(layer_dims)?, epochs, seed)
}
