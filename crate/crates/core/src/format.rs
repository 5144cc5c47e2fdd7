//! Binary containers. All integers are little-endian.
//!
//! * `TDPD` dataset: `u32` train count, `u32` test count, `u32` feature
//!   width, then train features, train labels, test features, test labels.
//! * `TDPQ` model: `u16` version, `u16` layer count, then per layer a kind
//!   byte, `u32` m, `u32` n, `i8` shift and `m * n` `i8` weights.
//! * `TDPM` crossbar dump: `u16` version, then one record per tile until
//!   end of file: `u16` layer, `u16` grid row, `u16` grid col, `u8` p,
//!   `u8` slice count, `u16` C, then per slice the `C * C` positive levels
//!   followed by the `C * C` negative levels.
//!
//! The kind byte packs the layer graph: bits 0-1 kind (0 fc, 1 conv),
//! bit 2 ReLU, bit 3 max pooling, bits 4-7 `log2(positions)`.
//!
//! Weight scale exponents are not stored; they do not enter integer
//! inference and read back as 0.

use crate::error::{Error, Result};
use crate::mapping::{CrossbarPair, LayerMapping, ProtectedMapping, TileMapping};
use crate::model::{Activation, LayerKind, LayerSpec, Pooling, QuantLayer, QuantModel};
use crate::quant::QuantMatrix;
use crate::zoo::SyntheticDataset;

pub const DATASET_MAGIC: &[u8; 4] = b"TDPD";
pub const MODEL_MAGIC: &[u8; 4] = b"TDPQ";
pub const MAPPING_MAGIC: &[u8; 4] = b"TDPM";
pub const VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(Error::Format(format!(
                "missing {} magic",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Self { buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u16()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
}

fn u16_of(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u16")))
}

pub fn write_dataset(ds: &SyntheticDataset) -> Result<Vec<u8>> {
    let dim = ds.dim();
    if ds.train_x.iter().chain(&ds.test_x).any(|x| x.len() != dim) {
        return Err(Error::Format("ragged feature rows".into()));
    }
    let mut out = DATASET_MAGIC.to_vec();
    out.extend(u32_of(ds.train_x.len(), "train count")?.to_le_bytes());
    out.extend(u32_of(ds.test_x.len(), "test count")?.to_le_bytes());
    out.extend(u32_of(dim, "feature width")?.to_le_bytes());
    for x in &ds.train_x {
        out.extend(x);
    }
    out.extend(&ds.train_y);
    for x in &ds.test_x {
        out.extend(x);
    }
    out.extend(&ds.test_y);
    Ok(out)
}

pub fn read_dataset(buf: &[u8]) -> Result<SyntheticDataset> {
    let mut r = Reader::new(buf, DATASET_MAGIC)?;
    let n_train = r.u32()? as usize;
    let n_test = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim != crate::zoo::INPUT_DIM {
        return Err(Error::Format(format!(
            "feature width {dim}, expected {}",
            crate::zoo::INPUT_DIM
        )));
    }
    let mut rows = |n: usize| -> Result<Vec<Vec<u8>>> { (0..n).map(|_| Ok(r.take(dim)?.to_vec())).collect() };
    let train_x = rows(n_train)?;
    let train_y = r.take(n_train)?.to_vec();
    let mut rows = |n: usize| -> Result<Vec<Vec<u8>>> { (0..n).map(|_| Ok(r.take(dim)?.to_vec())).collect() };
    let test_x = rows(n_test)?;
    let test_y = r.take(n_test)?.to_vec();
    if !r.done() {
        return Err(Error::Format("trailing bytes after dataset".into()));
    }
    if train_y
        .iter()
        .chain(&test_y)
        .any(|&y| usize::from(y) >= crate::zoo::CLASSES)
    {
        return Err(Error::Format("label out of range".into()));
    }
    Ok(SyntheticDataset {
        train_x,
        train_y,
        test_x,
        test_y,
    })
}

fn kind_byte(spec: &LayerSpec) -> u8 {
    let kind = match spec.kind {
        LayerKind::Fc => 0,
        LayerKind::Conv => 1,
    };
    let relu = u8::from(spec.activation == Activation::Relu) << 2;
    let pool = u8::from(spec.pooling == Pooling::Max) << 3;
    let pos = (spec.positions.trailing_zeros() as u8) << 4;
    kind | relu | pool | pos
}

fn spec_from(byte: u8, m: usize, n: usize) -> Result<LayerSpec> {
    let kind = match byte & 0b11 {
        0 => LayerKind::Fc,
        1 => LayerKind::Conv,
        k => return Err(Error::Format(format!("unknown layer kind {k}"))),
    };
    Ok(LayerSpec {
        kind,
        m,
        n,
        activation: if byte & 0b100 != 0 {
            Activation::Relu
        } else {
            Activation::None
        },
        pooling: if byte & 0b1000 != 0 {
            Pooling::Max
        } else {
            Pooling::None
        },
        positions: 1 << (byte >> 4),
    })
}

pub fn write_model(model: &QuantModel) -> Result<Vec<u8>> {
    let mut out = MODEL_MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    out.extend(u16_of(model.len(), "layer count")?.to_le_bytes());
    for l in &model.layers {
        out.push(kind_byte(&l.spec));
        out.extend(u32_of(l.spec.m, "m")?.to_le_bytes());
        out.extend(u32_of(l.spec.n, "n")?.to_le_bytes());
        out.push(l.shift as u8);
        out.extend(l.weights.values().iter().map(|&v| v as u8));
    }
    Ok(out)
}

pub fn read_model(buf: &[u8]) -> Result<QuantModel> {
    let mut r = Reader::new(buf, MODEL_MAGIC)?;
    r.version()?;
    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8()?;
        let m = r.u32()? as usize;
        let n = r.u32()? as usize;
        let shift = r.u8()? as i8;
        let spec = spec_from(kind, m, n)?;
        let values = r.take(m * n)?.iter().map(|&b| b as i8).collect();
        layers.push(QuantLayer {
            spec,
            weights: QuantMatrix::new(m, n, values, 0)?,
            shift,
        });
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    QuantModel::new(layers).map_err(|e| Error::Format(format!("invalid model: {e}")))
}

pub fn write_mapping(pm: &ProtectedMapping) -> Result<Vec<u8>> {
    let mut out = MAPPING_MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    let p = u8::try_from(pm.device_precision).map_err(|_| Error::Format("device precision".into()))?;
    let c = u16_of(pm.crossbar_size, "crossbar size")?;
    for layer in &pm.layers {
        for t in &layer.tiles {
            out.extend(u16_of(layer.layer, "layer id")?.to_le_bytes());
            out.extend(u16_of(t.grid_row, "grid row")?.to_le_bytes());
            out.extend(u16_of(t.grid_col, "grid col")?.to_le_bytes());
            out.push(p);
            out.push(u8::try_from(t.slices.len()).map_err(|_| Error::Format("slice count".into()))?);
            out.extend(c.to_le_bytes());
            for s in &t.slices {
                out.extend(s.pos());
                out.extend(s.neg());
            }
        }
    }
    Ok(out)
}

/// Rebuilds a mapping from its dump and the public layer graph.
pub fn read_mapping(buf: &[u8], architecture: &QuantModel) -> Result<ProtectedMapping> {
    let mut r = Reader::new(buf, MAPPING_MAGIC)?;
    r.version()?;
    let mut layers: Vec<LayerMapping> = Vec::new();
    let mut geometry: Option<(u32, usize)> = None;
    while !r.done() {
        let layer = r.u16()? as usize;
        let gr = r.u16()? as usize;
        let gc = r.u16()? as usize;
        let p = u32::from(r.u8()?);
        let slices = r.u8()? as usize;
        let c = r.u16()? as usize;
        match geometry {
            None => geometry = Some((p, c)),
            Some(g) if g != (p, c) => return Err(Error::Format("records disagree on p or C".into())),
            _ => {}
        }
        if c == 0 || !matches!(p, 1 | 2 | 4 | 8) || slices != (8 / p) as usize {
            return Err(Error::Format(format!("bad tile header p={p} slices={slices} C={c}")));
        }
        let spec = architecture
            .layers
            .get(layer)
            .ok_or_else(|| Error::Format(format!("record for unknown layer {layer}")))?
            .spec;
        if gr * c >= spec.m || gc * c >= spec.n {
            return Err(Error::Format(format!("tile ({gr}, {gc}) outside layer {layer}")));
        }
        let (h, w) = (c.min(spec.m - gr * c), c.min(spec.n - gc * c));
        let mut pairs = Vec::with_capacity(slices);
        for _ in 0..slices {
            let pos = r.take(c * c)?.to_vec();
            let neg = r.take(c * c)?.to_vec();
            pairs.push(CrossbarPair::new(c, pos, neg, h, w)?);
        }
        if layer == layers.len() {
            layers.push(LayerMapping {
                layer,
                grid_rows: spec.m.div_ceil(c),
                grid_cols: spec.n.div_ceil(c),
                tiles: Vec::new(),
            });
        } else if layer + 1 != layers.len() {
            return Err(Error::Format(format!("layer {layer} records out of order")));
        }
        let current = layers.last_mut().expect("pushed above");
        if gr * current.grid_cols + gc != current.tiles.len() {
            return Err(Error::Format(format!("layer {layer}: tile ({gr}, {gc}) out of order")));
        }
        current.tiles.push(TileMapping {
            grid_row: gr,
            grid_col: gc,
            slices: pairs,
        });
    }
    let (p, c) = geometry.ok_or_else(|| Error::Format("mapping has no tiles".into()))?;
    let mapping = ProtectedMapping {
        crossbar_size: c,
        device_precision: p,
        architecture: architecture
            .layers
            .iter()
            .map(|l| QuantLayer {
                spec: l.spec,
                weights: QuantMatrix::zeros(l.spec.m, l.spec.n).with_scale(l.weights.scale()),
                shift: l.shift,
            })
            .collect(),
        layers,
    };
    // full validation of the tile grid
    crate::mapping::adversary_extract(&mapping)?;
    Ok(mapping)
}
