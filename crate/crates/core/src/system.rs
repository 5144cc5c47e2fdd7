//! Integer inference: the unprotected reference path and the protected
//! crossbar dataflow.
//!
//! Per layer the protected path runs: permute the input through the
//! module and compact it with the row index vectors (1), crossbar VMM on
//! every tile (2), add partials of tiles sharing a grid column (3), pool
//! (4), activate (5), then expand through the column index vectors and
//! reverse-permute (6). Requantization to `u8` follows, except after the
//! last layer, which emits `i32` logits.

use rayon::prelude::*;

use crate::benes::{PermutationModule, PmKey};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::keys::{KeySchedule, TileIndex};
use crate::mapping::{adversary_extract, CrossbarPair, ProtectedMapping};
use crate::model::{Activation, Pooling, QuantLayer, QuantModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub logits: Vec<i32>,
    pub class: usize,
}

impl Inference {
    fn new(logits: Vec<i32>) -> Self {
        let class = argmax(&logits);
        Self { logits, class }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[i32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn requantize(v: i32, shift: i8) -> u8 {
    (v >> shift).clamp(0, 255) as u8
}

/// Bit-sliced VMM over one tile. `v` has one entry per crossbar row.
pub fn crossbar_vmm(slices: &[CrossbarPair], v: &[u8]) -> Result<Vec<i32>> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Config("tile has no crossbar pairs".into()))?;
    let c = first.size();
    if v.len() != c {
        return Err(Error::dim(c, v.len(), "crossbar input"));
    }
    if !matches!(slices.len(), 1 | 2 | 4 | 8) {
        return Err(Error::Config(format!("{} bit slices per tile", slices.len())));
    }
    let p = 8 / slices.len();
    let mut out = vec![0i32; c];
    for (s, pair) in slices.iter().enumerate() {
        let (rows, cols) = (pair.used_rows, pair.used_cols);
        let (pos, neg) = (pair.pos(), pair.neg());
        let shift = p * s;
        for (i, &x) in v.iter().enumerate().take(rows) {
            if x == 0 {
                continue;
            }
            let x = i32::from(x) << shift;
            let base = i * c;
            for (j, o) in out.iter_mut().enumerate().take(cols) {
                *o += x * (i32::from(pos[base + j]) - i32::from(neg[base + j]));
            }
        }
    }
    Ok(out)
}

fn pool_and_activate(layer: &QuantLayer, per_position: Vec<Vec<i32>>) -> Vec<Vec<i32>> {
    let mut vectors = match layer.spec.pooling {
        Pooling::None => per_position,
        Pooling::Max => {
            let mut it = per_position.into_iter();
            let mut acc = it.next().expect("at least one position");
            for v in it {
                for (a, b) in acc.iter_mut().zip(v) {
                    *a = (*a).max(b);
                }
            }
            vec![acc]
        }
    };
    if layer.spec.activation == Activation::Relu {
        for v in &mut vectors {
            for x in v.iter_mut() {
                *x = (*x).max(0);
            }
        }
    }
    vectors
}

fn layer_forward(layer: &QuantLayer, input: &[u8]) -> Result<Vec<i32>> {
    let m = layer.spec.m;
    let outs = input
        .chunks(m)
        .map(|x| {
            layer
                .weights
                .vecmul(&x.iter().map(|&b| i32::from(b)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pool_and_activate(layer, outs).concat())
}

pub fn infer_unprotected(model: &QuantModel, input: &[u8]) -> Result<Inference> {
    if input.len() != model.input_width() {
        return Err(Error::dim(model.input_width(), input.len(), "model input"));
    }
    let mut act = input.to_vec();
    let last = model.len() - 1;
    for (i, layer) in model.layers.iter().enumerate() {
        let out = layer_forward(layer, &act)?;
        if i == last {
            return Ok(Inference::new(out));
        }
        act = out.iter().map(|&v| requantize(v, layer.shift)).collect();
    }
    unreachable!("model has at least one layer")
}

/// Runs the stolen (still permuted) weights as if they were the model.
pub fn infer_as_adversary(mapping: &ProtectedMapping, input: &[u8]) -> Result<Inference> {
    infer_unprotected(&adversary_extract(mapping)?, input)
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(model: &QuantModel, features: &[Vec<u8>], labels: &[u8]) -> Result<f64> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::dim(features.len(), labels.len(), "evaluation set"));
    }
    let hits = features
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| infer_unprotected(model, x).map(|r| usize::from(r.class == usize::from(y))))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / labels.len() as f64)
}

/// Intermediate values of one protected layer, for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTrace {
    /// `[position][grid_row]`: crossbar wordline inputs.
    pub crossbar_inputs: Vec<Vec<Vec<u8>>>,
    /// `[position][tile]`: bitline outputs, compacted.
    pub partials: Vec<Vec<Vec<i32>>>,
    /// `[position][grid_col]`: sums over grid rows.
    pub aggregated: Vec<Vec<Vec<i32>>>,
    /// `[vector][grid_col]` after pooling.
    pub pooled: Vec<Vec<Vec<i32>>>,
    /// `[vector][grid_col]` after the activation.
    pub activated: Vec<Vec<Vec<i32>>>,
    /// Reverse-permuted layer output, before requantization.
    pub output: Vec<i32>,
}

/// Legitimate execution of a protected mapping.
pub struct ProtectedSystem<'a> {
    mapping: &'a ProtectedMapping,
    index: &'a [Vec<TileIndex>],
    pm: PermutationModule,
    keys: Vec<&'a PmKey>,
    reverse: Vec<PmKey>,
}

impl<'a> ProtectedSystem<'a> {
    pub fn new(mapping: &'a ProtectedMapping, sched: &'a KeySchedule, cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        if mapping.crossbar_size != cfg.crossbar_size || mapping.device_precision != cfg.device_precision {
            return Err(Error::Config(format!(
                "mapping uses C={} p={}, system has C={} p={}",
                mapping.crossbar_size, mapping.device_precision, cfg.crossbar_size, cfg.device_precision
            )));
        }
        if sched.arch() != cfg.arch {
            return Err(Error::Config(format!(
                "schedule built for {} but system is {}",
                sched.arch(),
                cfg.arch
            )));
        }
        let pm = sched.pm();
        if pm.width() != cfg.crossbar_size || pm.block_ports() != cfg.bn_ports {
            return Err(Error::Config("schedule module does not match the system".into()));
        }
        let index = sched
            .index_vectors()
            .ok_or_else(|| Error::Key("no index vectors in key storage".into()))?;
        if sched.layers() != mapping.layers.len() || index.len() != mapping.layers.len() {
            return Err(Error::Key(format!(
                "key storage covers {} layers, mapping has {}",
                sched.layers(),
                mapping.layers.len()
            )));
        }
        for (l, iv) in mapping.layers.iter().zip(index) {
            if iv.len() != l.tiles.len() {
                return Err(Error::Key(format!(
                    "layer {}: index vectors do not match tiles",
                    l.layer
                )));
            }
        }
        let keys: Vec<&PmKey> = (0..sched.layers()).map(|i| sched.key(i)).collect();
        let mut reverse: Vec<PmKey> = Vec::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            let same = (0..i).find(|&j| std::ptr::eq(keys[j], *k));
            reverse.push(match same {
                Some(j) => reverse[j].clone(),
                None => pm.reverse_key(k)?,
            });
        }
        Ok(Self {
            mapping,
            index,
            pm,
            keys,
            reverse,
        })
    }

    pub fn trace_layer(&self, li: usize, input: &[u8]) -> Result<LayerTrace> {
        let arch = &self.mapping.architecture[li];
        let grid = &self.mapping.layers[li];
        let spec = arch.spec;
        let c = self.mapping.crossbar_size;
        if input.len() != spec.input_width() {
            return Err(Error::dim(spec.input_width(), input.len(), "layer input"));
        }
        let key = self.keys[li];
        let index = &self.index[li];

        let mut crossbar_inputs = Vec::with_capacity(spec.positions);
        let mut partials = Vec::with_capacity(spec.positions);
        let mut aggregated = Vec::with_capacity(spec.positions);
        for x in input.chunks(spec.m) {
            // 1: permute, then pack real lines with the row index vector
            let mut rows_in = Vec::with_capacity(grid.grid_rows);
            for gr in 0..grid.grid_rows {
                let seg = &x[gr * c..(gr * c + c).min(spec.m)];
                let mut padded: Vec<Option<u8>> = vec![None; c];
                for (slot, &v) in padded.iter_mut().zip(seg) {
                    *slot = Some(v);
                }
                let permuted = self.pm.partial_apply(key, &padded)?;
                let positions = index[gr * grid.grid_cols].row.positions();
                let mut xin = vec![0u8; c];
                for (k, &pos) in positions.iter().enumerate() {
                    xin[k] = permuted[pos]
                        .ok_or_else(|| Error::Key(format!("layer {li}: row index vector marks an empty line")))?;
                }
                rows_in.push(xin);
            }
            // 2: VMM per tile
            let part = grid
                .tiles
                .iter()
                .map(|t| crossbar_vmm(&t.slices, &rows_in[t.grid_row]))
                .collect::<Result<Vec<_>>>()?;
            // 3: add tiles sharing an output column block
            let mut agg = vec![vec![0i32; c]; grid.grid_cols];
            for (t, p) in grid.tiles.iter().zip(&part) {
                for (a, v) in agg[t.grid_col].iter_mut().zip(p) {
                    *a += v;
                }
            }
            crossbar_inputs.push(rows_in);
            partials.push(part);
            aggregated.push(agg);
        }

        // 4: pool per channel across positions
        let pooled = match spec.pooling {
            Pooling::None => aggregated.clone(),
            Pooling::Max => {
                let mut acc = aggregated[0].clone();
                for pos in &aggregated[1..] {
                    for (a, b) in acc.iter_mut().flatten().zip(pos.iter().flatten()) {
                        *a = (*a).max(*b);
                    }
                }
                vec![acc]
            }
        };
        // 5: activation
        let mut activated = pooled.clone();
        if spec.activation == Activation::Relu {
            for v in activated.iter_mut().flatten().flatten() {
                *v = (*v).max(0);
            }
        }
        // 6: expand through the column index vectors and reverse-permute
        let mut output = Vec::with_capacity(spec.output_width());
        for vector in &activated {
            for (gc, vals) in vector.iter().enumerate() {
                let width = c.min(spec.n - gc * c);
                let mut expanded: Vec<Option<i32>> = vec![None; c];
                let positions = index[gc].col.positions();
                if positions.len() != width {
                    return Err(Error::Key(format!("layer {li}: column index vector has wrong weight")));
                }
                for (k, &pos) in positions.iter().enumerate() {
                    expanded[pos] = Some(vals[k]);
                }
                let restored = self.pm.apply(&self.reverse[li], &expanded)?;
                for slot in &restored[..width] {
                    output.push(
                        slot.ok_or_else(|| Error::Key(format!("layer {li}: reverse permutation lost a channel")))?,
                    );
                }
            }
        }
        Ok(LayerTrace {
            crossbar_inputs,
            partials,
            aggregated,
            pooled,
            activated,
            output,
        })
    }

    pub fn infer(&self, input: &[u8]) -> Result<Inference> {
        let arch = &self.mapping.architecture;
        if input.len() != arch[0].spec.input_width() {
            return Err(Error::dim(arch[0].spec.input_width(), input.len(), "model input"));
        }
        let mut act = input.to_vec();
        let last = arch.len() - 1;
        for (i, layer) in arch.iter().enumerate() {
            let out = self.trace_layer(i, &act)?.output;
            if i == last {
                return Ok(Inference::new(out));
            }
            act = out.iter().map(|&v| requantize(v, layer.shift)).collect();
        }
        unreachable!("mapping has at least one layer")
    }
}

pub fn infer_protected(
    mapping: &ProtectedMapping,
    sched: &KeySchedule,
    cfg: &SystemConfig,
    input: &[u8],
) -> Result<Inference> {
    ProtectedSystem::new(mapping, sched, cfg)?.infer(input)
}
