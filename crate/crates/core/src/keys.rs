//! Key generation and per-architecture key schedules.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::benes::{PermutationModule, PmKey};
use crate::config::{Arch, SystemConfig};
use crate::error::{Error, Result};
use crate::mapping::IndexVector;
use crate::model::ModelDescriptor;
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferId {
    Global,
    Tile(u32),
}

/// Startup values of one on-chip buffer, modelled as a seeded bit stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PufSource {
    pub device_seed: u64,
    pub buffer: BufferId,
}

impl PufSource {
    pub fn global(device_seed: u64) -> Self {
        Self {
            device_seed,
            buffer: BufferId::Global,
        }
    }

    pub fn tile(device_seed: u64, tile: u32) -> Self {
        Self {
            device_seed,
            buffer: BufferId::Tile(tile),
        }
    }

    pub fn bits(&self, n: usize) -> Vec<bool> {
        let root = SeedTree::new(self.device_seed).child("puf");
        let node = match self.buffer {
            BufferId::Global => root.child("global"),
            BufferId::Tile(t) => root.child("tile").index(u64::from(t)),
        };
        let mut rng = node.rng();
        (0..n).map(|_| rng.random()).collect()
    }
}

/// User-held key, XORed cyclically into the raw startup bits.
#[derive(Clone, PartialEq, Eq)]
pub struct UserKey {
    bits: Vec<bool>,
}

impl UserKey {
    pub const MIN_BITS: usize = 128;

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() < Self::MIN_BITS {
            return Err(Error::Key(format!(
                "user key has {} bits, need at least {}",
                bits.len(),
                Self::MIN_BITS
            )));
        }
        Ok(Self { bits })
    }

    /// Hex digits, optional `0x` prefix; each byte contributes its bits LSB first.
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).map_err(|e| Error::Key(format!("user key is not valid hex: {e}")))?;
        Self::from_bits(
            bytes
                .iter()
                .flat_map(|b| (0..8).map(move |i| (b >> i) & 1 == 1))
                .collect(),
        )
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

impl fmt::Debug for UserKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UserKey({} bits)", self.bits.len())
    }
}

pub fn generate_pm_key(src: &PufSource, pm: &PermutationModule, user: Option<&UserKey>) -> PmKey {
    let raw = PmKey::from_bits(src.bits(pm.key_len()));
    match user {
        Some(u) => raw.xor_cyclic(u.bits()),
        None => raw,
    }
}

/// Row and column index vectors of one tile.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TileIndex {
    pub row: IndexVector,
    pub col: IndexVector,
}

/// Volatile key storage: layer keys plus the index vectors written while
/// mapping. Never serialized.
#[derive(Clone)]
pub struct KeySchedule {
    arch: Arch,
    pm: PermutationModule,
    keys: Vec<Arc<PmKey>>,
    index: Option<Vec<Vec<TileIndex>>>,
}

impl KeySchedule {
    pub fn new(arch: Arch, pm: PermutationModule, keys: Vec<Arc<PmKey>>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Key("schedule needs at least one layer key".into()));
        }
        if let Some(k) = keys.iter().find(|k| k.len() != pm.key_len()) {
            return Err(Error::dim(pm.key_len(), k.len(), "schedule key length"));
        }
        if arch == Arch::Config1 && keys.iter().any(|k| !Arc::ptr_eq(k, &keys[0])) {
            return Err(Error::Key("config1 layers must share one key".into()));
        }
        Ok(Self {
            arch,
            pm,
            keys,
            index: None,
        })
    }

    /// One shared key for `layers` layers.
    pub fn global(pm: PermutationModule, key: PmKey, layers: usize) -> Result<Self> {
        let key = Arc::new(key);
        Self::new(Arch::Config1, pm, vec![key; layers])
    }

    pub fn per_layer(pm: PermutationModule, keys: Vec<PmKey>) -> Result<Self> {
        Self::new(Arch::Config2, pm, keys.into_iter().map(Arc::new).collect())
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn pm(&self) -> PermutationModule {
        self.pm
    }

    pub fn layers(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, layer: usize) -> &PmKey {
        &self.keys[layer]
    }

    pub fn key_handle(&self, layer: usize) -> &Arc<PmKey> {
        &self.keys[layer]
    }

    /// Number of distinct key objects (not distinct bit patterns).
    pub fn distinct_keys(&self) -> usize {
        let mut seen: Vec<&Arc<PmKey>> = Vec::new();
        for k in &self.keys {
            if !seen.iter().any(|s| Arc::ptr_eq(s, k)) {
                seen.push(k);
            }
        }
        seen.len()
    }

    pub fn index_vectors(&self) -> Option<&[Vec<TileIndex>]> {
        self.index.as_deref()
    }

    pub(crate) fn attach_index_vectors(&mut self, index: Vec<Vec<TileIndex>>) {
        self.index = Some(index);
    }
}

impl fmt::Debug for KeySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeySchedule")
            .field("arch", &self.arch)
            .field("pm", &self.pm)
            .field("layers", &self.keys.len())
            .field("distinct_keys", &self.distinct_keys())
            .field("indexed", &self.index.is_some())
            .finish()
    }
}

pub fn build_schedule(
    cfg: &SystemConfig,
    model: &ModelDescriptor,
    device_seed: u64,
    user: Option<&UserKey>,
) -> Result<KeySchedule> {
    cfg.validate()?;
    model.validate()?;
    let pm = PermutationModule::new(cfg.crossbar_size, cfg.bn_ports)?;
    match cfg.arch {
        Arch::Config1 => {
            let key = generate_pm_key(&PufSource::global(device_seed), &pm, user);
            KeySchedule::global(pm, key, model.len())
        }
        Arch::Config2 => {
            if model.len() > cfg.tile_count {
                return Err(Error::Capacity(format!(
                    "config2 maps one layer per tile: {} layers, {} tiles",
                    model.len(),
                    cfg.tile_count
                )));
            }
            let keys = (0..model.len())
                .map(|i| generate_pm_key(&PufSource::tile(device_seed, i as u32), &pm, user))
                .collect();
            KeySchedule::per_layer(pm, keys)
        }
    }
}
