//! Protected mapping of weight matrices onto crossbar pairs.
//!
//! A layer's `m x n` matrix is cut into `C x C` submatrices. Each
//! submatrix has its rows and then its columns pushed through the
//! permutation module with the layer key; padding slots are fed as high
//! impedance so a short submatrix only permutes its real lines. The real
//! lines are then packed into the lowest crossbar rows/columns in permuted
//! order, and the occupied permuted positions are written to index vectors
//! held in key storage. Finally each cell is split into positive and
//! negative parts and sliced into `8 / p` device-precision digits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benes::{PermutationModule, PmKey};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::keys::{KeySchedule, TileIndex};
use crate::model::{ModelDescriptor, QuantLayer, QuantModel};
use crate::perm::Permutation;
use crate::quant::QuantMatrix;

/// Occupancy of permuted positions by real (non-padding) lines.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexVector {
    bits: Vec<bool>,
}

impl IndexVector {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Occupied permuted positions in ascending order; entry `k` is where
    /// the line stored at crossbar index `k` really belongs.
    pub fn positions(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// How `len` real lines land on the crossbar under one key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinePlacement {
    /// Real line `i` is stored at crossbar index `compact.get(i)`.
    pub compact: Permutation,
    pub index: IndexVector,
}

impl LinePlacement {
    pub fn new(pm: &PermutationModule, key: &PmKey, len: usize) -> Result<Self> {
        if len > pm.width() {
            return Err(Error::Capacity(format!(
                "{len} lines do not fit a {}-port permutation module",
                pm.width()
            )));
        }
        let padded: Vec<Option<usize>> = (0..pm.width()).map(|i| (i < len).then_some(i)).collect();
        let permuted = pm.partial_apply(key, &padded)?;
        let mut dest = vec![0usize; len];
        let mut bits = vec![false; pm.width()];
        let mut next = 0;
        for (pos, slot) in permuted.iter().enumerate() {
            if let Some(i) = slot {
                bits[pos] = true;
                dest[*i] = next;
                next += 1;
            }
        }
        Ok(Self {
            compact: Permutation::new(dest)?,
            index: IndexVector::from_bits(bits),
        })
    }
}

/// One bit slice of a signed submatrix: device levels in `[0, 2^p)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrossbarPair {
    size: usize,
    pos: Vec<u8>,
    neg: Vec<u8>,
    pub used_rows: usize,
    pub used_cols: usize,
}

impl CrossbarPair {
    pub fn new(size: usize, pos: Vec<u8>, neg: Vec<u8>, used_rows: usize, used_cols: usize) -> Result<Self> {
        if pos.len() != size * size || neg.len() != size * size {
            return Err(Error::dim(size * size, pos.len().min(neg.len()), "crossbar levels"));
        }
        if used_rows > size || used_cols > size {
            return Err(Error::Capacity(format!(
                "{used_rows}x{used_cols} used region exceeds a {size}x{size} crossbar"
            )));
        }
        Ok(Self {
            size,
            pos,
            neg,
            used_rows,
            used_cols,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pos(&self) -> &[u8] {
        &self.pos
    }

    pub fn neg(&self) -> &[u8] {
        &self.neg
    }

    #[inline]
    pub fn level(&self, r: usize, c: usize) -> (u8, u8) {
        let i = r * self.size + c;
        (self.pos[i], self.neg[i])
    }
}

/// Splits `m` into `ceil(m / c)` segment lengths.
fn segments(m: usize, c: usize) -> Vec<usize> {
    (0..m.div_ceil(c)).map(|i| c.min(m - i * c)).collect()
}

/// Cuts `w` into a grid of at most `c x c` submatrices.
pub fn tile_matrix(w: &QuantMatrix, c: usize) -> Vec<Vec<QuantMatrix>> {
    let rows = segments(w.rows(), c);
    let cols = segments(w.cols(), c);
    rows.iter()
        .enumerate()
        .map(|(gr, &h)| {
            cols.iter()
                .enumerate()
                .map(|(gc, &wd)| w.block(gr * c, gc * c, h, wd))
                .collect()
        })
        .collect()
}

/// Inverse of [`tile_matrix`].
pub fn reassemble(grid: &[Vec<QuantMatrix>]) -> Result<QuantMatrix> {
    let first = grid
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Config("empty tile grid".into()))?;
    let rows: usize = grid.iter().map(|r| r[0].rows()).sum();
    let cols: usize = grid[0].iter().map(|t| t.cols()).sum();
    let mut out = QuantMatrix::zeros(rows, cols).with_scale(first.scale());
    let mut r0 = 0;
    for row in grid {
        let mut c0 = 0;
        for t in row {
            for r in 0..t.rows() {
                for c in 0..t.cols() {
                    out.set(r0 + r, c0 + c, t.get(r, c));
                }
            }
            c0 += t.cols();
        }
        r0 += row[0].rows();
    }
    Ok(out)
}

/// A submatrix after permutation and compaction, before slicing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedSubmatrix {
    /// `C x C`; real data in the top-left `used_rows x used_cols` block.
    pub matrix: QuantMatrix,
    pub used_rows: usize,
    pub used_cols: usize,
    pub row_index: IndexVector,
    pub col_index: IndexVector,
}

pub fn protect_submatrix(sub: &QuantMatrix, pm: &PermutationModule, key: &PmKey) -> Result<ProtectedSubmatrix> {
    let c = pm.width();
    if sub.rows() > c || sub.cols() > c {
        return Err(Error::Capacity(format!(
            "{}x{} submatrix exceeds the {c}x{c} crossbar",
            sub.rows(),
            sub.cols()
        )));
    }
    let rows = LinePlacement::new(pm, key, sub.rows())?;
    let cols = LinePlacement::new(pm, key, sub.cols())?;
    let placed = sub.permute(&rows.compact, &cols.compact)?;
    let mut matrix = QuantMatrix::zeros(c, c).with_scale(sub.scale());
    for r in 0..placed.rows() {
        for col in 0..placed.cols() {
            matrix.set(r, col, placed.get(r, col));
        }
    }
    Ok(ProtectedSubmatrix {
        matrix,
        used_rows: sub.rows(),
        used_cols: sub.cols(),
        row_index: rows.index,
        col_index: cols.index,
    })
}

/// Splits signed weights into `8 / p` crossbar pairs, least significant
/// digit first. `matrix` must be square; `used_*` bound the real data.
pub fn bit_slice(matrix: &QuantMatrix, p: u32, used_rows: usize, used_cols: usize) -> Result<Vec<CrossbarPair>> {
    if !matches!(p, 1 | 2 | 4 | 8) {
        return Err(Error::Config(format!("device precision {p} not in {{1,2,4,8}}")));
    }
    if matrix.rows() != matrix.cols() {
        return Err(Error::dim(matrix.rows(), matrix.cols(), "square crossbar matrix"));
    }
    let size = matrix.rows();
    let slices = (8 / p) as usize;
    let mask = (1u32 << p) - 1;
    let mut pos = vec![vec![0u8; size * size]; slices];
    let mut neg = vec![vec![0u8; size * size]; slices];
    for (i, &w) in matrix.values().iter().enumerate() {
        let w = i32::from(w);
        let (mag, target) = if w >= 0 {
            (w as u32, &mut pos)
        } else {
            ((-w) as u32, &mut neg)
        };
        for (s, slice) in target.iter_mut().enumerate() {
            slice[i] = ((mag >> (p as usize * s)) & mask) as u8;
        }
    }
    pos.into_iter()
        .zip(neg)
        .map(|(p, n)| CrossbarPair::new(size, p, n, used_rows, used_cols))
        .collect()
}

/// Signed value of cell `(r, c)` summed over all slices.
pub fn cell_value(slices: &[CrossbarPair], p: u32, r: usize, c: usize) -> i32 {
    slices
        .iter()
        .enumerate()
        .map(|(s, pair)| {
            let (a, b) = pair.level(r, c);
            (i32::from(a) - i32::from(b)) << (p as usize * s)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileMapping {
    pub grid_row: usize,
    pub grid_col: usize,
    pub slices: Vec<CrossbarPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerMapping {
    pub layer: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Row-major over the tile grid.
    pub tiles: Vec<TileMapping>,
}

impl LayerMapping {
    pub fn tile(&self, gr: usize, gc: usize) -> &TileMapping {
        &self.tiles[gr * self.grid_cols + gc]
    }
}

/// Everything stored in the crossbars: readable by an adversary.
///
/// `architecture` carries the public layer graph (shapes, activations,
/// shifts) with the weights zeroed; only the device levels hold weights.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtectedMapping {
    pub crossbar_size: usize,
    pub device_precision: u32,
    pub architecture: Vec<QuantLayer>,
    pub layers: Vec<LayerMapping>,
}

fn check_schedule(cfg: &SystemConfig, sched: &KeySchedule, layers: usize) -> Result<PermutationModule> {
    cfg.validate()?;
    if sched.arch() != cfg.arch {
        return Err(Error::Config(format!(
            "schedule built for {} but system is {}",
            sched.arch(),
            cfg.arch
        )));
    }
    let pm = sched.pm();
    if pm.width() != cfg.crossbar_size {
        return Err(Error::Config(format!(
            "permutation module width {} differs from crossbar size {}",
            pm.width(),
            cfg.crossbar_size
        )));
    }
    if sched.layers() != layers {
        return Err(Error::Key(format!(
            "schedule covers {} layers, model has {layers}",
            sched.layers()
        )));
    }
    Ok(pm)
}

fn protect_layer(
    index: usize,
    layer: &QuantLayer,
    pm: &PermutationModule,
    key: &PmKey,
    p: u32,
) -> Result<(LayerMapping, Vec<TileIndex>)> {
    let c = pm.width();
    let grid = tile_matrix(&layer.weights, c);
    let mut tiles = Vec::new();
    let mut index_vectors = Vec::new();
    for (gr, row) in grid.iter().enumerate() {
        for (gc, sub) in row.iter().enumerate() {
            let prot = protect_submatrix(sub, pm, key)?;
            tiles.push(TileMapping {
                grid_row: gr,
                grid_col: gc,
                slices: bit_slice(&prot.matrix, p, prot.used_rows, prot.used_cols)?,
            });
            index_vectors.push(TileIndex {
                row: prot.row_index,
                col: prot.col_index,
            });
        }
    }
    Ok((
        LayerMapping {
            layer: index,
            grid_rows: grid.len(),
            grid_cols: grid[0].len(),
            tiles,
        },
        index_vectors,
    ))
}

/// Tiles, permutes and slices every layer; attaches index vectors to `sched`.
pub fn protect_model(model: &QuantModel, cfg: &SystemConfig, sched: &mut KeySchedule) -> Result<ProtectedMapping> {
    let pm = check_schedule(cfg, sched, model.len())?;
    let results: Vec<_> = model
        .layers
        .par_iter()
        .enumerate()
        .map(|(i, layer)| protect_layer(i, layer, &pm, sched.key(i), cfg.device_precision))
        .collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(results.len());
    let mut index = Vec::with_capacity(results.len());
    for (l, iv) in results {
        layers.push(l);
        index.push(iv);
    }
    sched.attach_index_vectors(index);
    Ok(ProtectedMapping {
        crossbar_size: cfg.crossbar_size,
        device_precision: cfg.device_precision,
        architecture: model
            .layers
            .iter()
            .map(|l| QuantLayer {
                spec: l.spec,
                weights: QuantMatrix::zeros(l.spec.m, l.spec.n).with_scale(l.weights.scale()),
                shift: l.shift,
            })
            .collect(),
        layers,
    })
}

/// Recomputes the index vectors from the keys and the public layer shapes,
/// as the key storage does after power-up. Gives the same vectors that
/// [`protect_model`] attached.
pub fn restore_index_vectors(sched: &mut KeySchedule, model: &ModelDescriptor) -> Result<()> {
    if sched.layers() != model.len() {
        return Err(Error::Key(format!(
            "schedule covers {} layers, model has {}",
            sched.layers(),
            model.len()
        )));
    }
    let pm = sched.pm();
    let c = pm.width();
    let mut index = Vec::with_capacity(model.len());
    for (i, spec) in model.layers.iter().enumerate() {
        let key = sched.key(i);
        let mut tiles = Vec::new();
        for gr in 0..spec.m.div_ceil(c) {
            for gc in 0..spec.n.div_ceil(c) {
                let (rows, cols) = tile_dims(spec.m, spec.n, c, gr, gc);
                tiles.push(TileIndex {
                    row: LinePlacement::new(&pm, key, rows)?.index,
                    col: LinePlacement::new(&pm, key, cols)?.index,
                });
            }
        }
        index.push(tiles);
    }
    sched.attach_index_vectors(index);
    Ok(())
}

fn tile_dims(m: usize, n: usize, c: usize, gr: usize, gc: usize) -> (usize, usize) {
    (c.min(m - gr * c), c.min(n - gc * c))
}

fn check_mapping(pm: &ProtectedMapping) -> Result<()> {
    if pm.architecture.len() != pm.layers.len() {
        return Err(Error::Format(format!(
            "{} layer descriptors for {} mapped layers",
            pm.architecture.len(),
            pm.layers.len()
        )));
    }
    let c = pm.crossbar_size;
    let slices = (8 / pm.device_precision.max(1)) as usize;
    for (arch, layer) in pm.architecture.iter().zip(&pm.layers) {
        let (gr, gc) = (arch.spec.m.div_ceil(c), arch.spec.n.div_ceil(c));
        if layer.grid_rows != gr || layer.grid_cols != gc || layer.tiles.len() != gr * gc {
            return Err(Error::Format(format!(
                "layer {}: tile grid does not match {}x{} weights",
                layer.layer, arch.spec.m, arch.spec.n
            )));
        }
        for t in &layer.tiles {
            if t.slices.len() != slices || t.slices.iter().any(|s| s.size() != c) {
                return Err(Error::Format(format!(
                    "layer {} tile ({}, {}): expected {slices} slices of {c}x{c}",
                    layer.layer, t.grid_row, t.grid_col
                )));
            }
        }
    }
    Ok(())
}

/// Reads the device levels back into signed weights, as stored
/// (permuted and compacted). Uses no key material.
pub fn adversary_extract(pm: &ProtectedMapping) -> Result<QuantModel> {
    check_mapping(pm)?;
    let c = pm.crossbar_size;
    let p = pm.device_precision;
    let mut layers = Vec::with_capacity(pm.layers.len());
    for (arch, layer) in pm.architecture.iter().zip(&pm.layers) {
        let (m, n) = (arch.spec.m, arch.spec.n);
        let mut w = QuantMatrix::zeros(m, n).with_scale(arch.weights.scale());
        for t in &layer.tiles {
            let (h, wd) = tile_dims(m, n, c, t.grid_row, t.grid_col);
            for r in 0..h {
                for col in 0..wd {
                    let v = cell_value(&t.slices, p, r, col);
                    let v =
                        i8::try_from(v).map_err(|_| Error::Format(format!("cell value {v} outside the int8 range")))?;
                    w.set(t.grid_row * c + r, t.grid_col * c + col, v);
                }
            }
        }
        layers.push(QuantLayer {
            spec: arch.spec,
            weights: w,
            shift: arch.shift,
        });
    }
    QuantModel::new(layers)
}

/// Legitimate recovery: undoes compaction through the index vectors and
/// the permutation through the layer key.
pub fn extract_with_key(pm: &ProtectedMapping, sched: &KeySchedule) -> Result<QuantModel> {
    let stored = adversary_extract(pm)?;
    if sched.layers() != stored.len() {
        return Err(Error::Key(format!(
            "schedule covers {} layers, mapping has {}",
            sched.layers(),
            stored.len()
        )));
    }
    let index = sched
        .index_vectors()
        .ok_or_else(|| Error::Key("schedule carries no index vectors".into()))?;
    let module = sched.pm();
    let c = pm.crossbar_size;
    if module.width() != c {
        return Err(Error::Config("schedule module width differs from crossbar size".into()));
    }
    let mut weights = Vec::with_capacity(stored.len());
    for (i, layer) in stored.layers.iter().enumerate() {
        let (m, n) = (layer.spec.m, layer.spec.n);
        let grid = &pm.layers[i];
        if index[i].len() != grid.tiles.len() {
            return Err(Error::Key(format!(
                "layer {i}: index vectors do not match the tile grid"
            )));
        }
        let sigma_inv = module.realized_permutation(sched.key(i))?.inverse();
        let mut w = QuantMatrix::zeros(m, n).with_scale(layer.weights.scale());
        for (t, iv) in grid.tiles.iter().zip(&index[i]) {
            let (h, wd) = tile_dims(m, n, c, t.grid_row, t.grid_col);
            let rows = iv.row.positions();
            let cols = iv.col.positions();
            if rows.len() != h || cols.len() != wd {
                return Err(Error::Key(format!(
                    "layer {i} tile ({}, {}): index vectors mark {}x{} lines, tile is {h}x{wd}",
                    t.grid_row,
                    t.grid_col,
                    rows.len(),
                    cols.len()
                )));
            }
            for (k, &rp) in rows.iter().enumerate() {
                let orig_r = sigma_inv.get(rp);
                for (l, &cp) in cols.iter().enumerate() {
                    let orig_c = sigma_inv.get(cp);
                    if orig_r >= h || orig_c >= wd {
                        return Err(Error::Key(format!("layer {i}: index vector and key disagree")));
                    }
                    w.set(
                        t.grid_row * c + orig_r,
                        t.grid_col * c + orig_c,
                        layer.weights.get(t.grid_row * c + k, t.grid_col * c + l),
                    );
                }
            }
        }
        weights.push(w);
    }
    stored.with_weights(weights)
}

/// Per-axis placements for every tile row/column of an `m x n` layer.
#[derive(Debug, Clone)]
pub struct LayerPlacement {
    pub rows: Vec<Permutation>,
    pub cols: Vec<Permutation>,
    crossbar: usize,
}

impl LayerPlacement {
    pub fn new(pm: &PermutationModule, key: &PmKey, m: usize, n: usize) -> Result<Self> {
        let c = pm.width();
        let sigma = pm.realized_permutation(key)?;
        let along = |len: usize| segments(len, c).into_iter().map(|s| sigma.compacted(s)).collect();
        Ok(Self {
            rows: along(m),
            cols: along(n),
            crossbar: c,
        })
    }

    fn map(&self, w: &QuantMatrix, inverse: bool) -> Result<QuantMatrix> {
        let c = self.crossbar;
        let (rows, cols): (Vec<Permutation>, Vec<Permutation>) = if inverse {
            (
                self.rows.iter().map(Permutation::inverse).collect(),
                self.cols.iter().map(Permutation::inverse).collect(),
            )
        } else {
            (self.rows.clone(), self.cols.clone())
        };
        let total_r: usize = rows.iter().map(Permutation::len).sum();
        let total_c: usize = cols.iter().map(Permutation::len).sum();
        if total_r != w.rows() || total_c != w.cols() {
            return Err(Error::dim(total_r * total_c, w.rows() * w.cols(), "layer placement"));
        }
        let mut out = QuantMatrix::zeros(w.rows(), w.cols()).with_scale(w.scale());
        for i in 0..w.rows() {
            let (gr, li) = (i / c, i % c);
            let ri = gr * c + rows[gr].get(li);
            for j in 0..w.cols() {
                let (gc, lj) = (j / c, j % c);
                out.set(ri, gc * c + cols[gc].get(lj), w.get(i, j));
            }
        }
        Ok(out)
    }

    /// The stored (adversary-visible) arrangement of `w`.
    pub fn place(&self, w: &QuantMatrix) -> Result<QuantMatrix> {
        self.map(w, false)
    }

    /// Undoes [`place`](Self::place).
    pub fn unplace(&self, stored: &QuantMatrix) -> Result<QuantMatrix> {
        self.map(stored, true)
    }
}
