//! Area and power model for the permutation hardware and two MUX-based
//! baseline protections.
//!
//! Everything is linear in symbolic counts: switch data bits, MUX/DEMUX
//! input data bits, and stored key bits. Unit costs live in [`CostTable`];
//! its defaults are placeholders, so only ratios are meaningful.

use serde::{Deserialize, Serialize};

use crate::benes::switch_count;
use crate::config::{Arch, SystemConfig, WEIGHT_PRECISION};
use crate::error::{Error, Result};

/// Data bits carried by every switch and MUX input.
const DATA_BITS: u64 = WEIGHT_PRECISION as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    /// Per 2:2 switch per data bit.
    pub switch_area: f64,
    pub switch_power: f64,
    /// Per volatile storage bit.
    pub storage_area: f64,
    pub storage_power: f64,
    /// Per MUX/DEMUX input per data bit.
    pub mux_area: f64,
    pub mux_power: f64,
    /// Per memristive cell (1T1R), um^2.
    pub cell_area: f64,
    pub cell_power: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            switch_area: 0.0575,
            switch_power: 0.0575,
            storage_area: 0.05,
            storage_power: 0.05,
            mux_area: 0.0426,
            mux_power: 0.0426,
            cell_area: 0.029,
            cell_power: 0.029,
        }
    }
}

impl CostTable {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.switch_area,
            self.switch_power,
            self.storage_area,
            self.storage_power,
            self.mux_area,
            self.mux_power,
            self.cell_area,
            self.cell_power,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("all unit costs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TdppCounts {
    /// Switches in one permutation module.
    pub switches: u64,
    /// Key bits held for one module.
    pub key_bits: u64,
    /// Upper bound on index-vector bits: two vectors of `C` bits per tile.
    pub index_bits: u64,
    pub instances: u64,
}

impl TdppCounts {
    pub fn storage_bits(&self) -> u64 {
        self.instances * self.key_bits + self.index_bits
    }
}

pub fn tdpp_counts(cfg: &SystemConfig) -> Result<TdppCounts> {
    cfg.validate()?;
    let switches = (cfg.pm_blocks() * switch_count(cfg.bn_ports)?) as u64;
    let instances = match cfg.arch {
        Arch::Config1 => 1,
        Arch::Config2 => cfg.tile_count as u64,
    };
    Ok(TdppCounts {
        switches,
        key_bits: switches,
        index_bits: 2 * cfg.crossbar_size as u64 * cfg.tile_count as u64,
        instances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BaselineCounts {
    /// False where the scheme cannot be built for this `x`.
    pub applicable: bool,
    pub muxes_per_pair: u64,
    pub demuxes_per_pair: u64,
    /// Inputs per MUX (= outputs per DEMUX).
    pub fan: u64,
    /// Data bits per MUX input.
    pub width: u64,
    pub pairs: u64,
    /// Shared by every pair of one PE.
    pub key_bits_per_pe: u64,
}

impl BaselineCounts {
    pub fn mux_input_bits(&self) -> u64 {
        self.pairs * (self.muxes_per_pair + self.demuxes_per_pair) * self.fan * self.width
    }
}

fn fan(x: usize) -> Result<(u64, u64)> {
    if x == 0 || !x.is_power_of_two() || x > 256 {
        return Err(Error::Config(format!(
            "activated lines {x} must be a power of two in 1..=256"
        )));
    }
    let f = (256 / x) as u64;
    Ok((f, u64::from(f.trailing_zeros())))
}

/// Row-shuffling baseline: `2x` (256/x):1 MUXes and `x` 1:(256/x) DEMUXes
/// per crossbar pair; only buildable at `x = 16`.
pub fn baseline_zou_counts(x: usize, pairs: u64) -> Result<BaselineCounts> {
    let (f, lg) = fan(x)?;
    let x = x as u64;
    Ok(BaselineCounts {
        applicable: x == 16,
        muxes_per_pair: 2 * x,
        demuxes_per_pair: x,
        fan: f,
        width: DATA_BITS,
        pairs,
        key_bits_per_pe: x * 3 * lg * f,
    })
}

/// VOU baseline: one (256/x):1 MUX and one 1:(256/x) DEMUX of width `8x`
/// per pair; not buildable at `x` = 1 or 256.
pub fn baseline_wang_counts(x: usize, pairs: u64) -> Result<BaselineCounts> {
    let (f, lg) = fan(x)?;
    Ok(BaselineCounts {
        applicable: x != 1 && x != 256,
        muxes_per_pair: 1,
        demuxes_per_pair: 1,
        fan: f,
        width: DATA_BITS * x as u64,
        pairs,
        key_bits_per_pe: 256 * lg + lg * 2 * f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Config1,
    Config2,
    Zou,
    Wang,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Config1, Scheme::Config2, Scheme::Zou, Scheme::Wang];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Config1 => "config1",
            Scheme::Config2 => "config2",
            Scheme::Zou => "zou",
            Scheme::Wang => "wang",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeCost {
    pub scheme: Scheme,
    pub applicable: bool,
    /// Switch data bits (TDPP) or MUX/DEMUX input data bits (baselines).
    pub logic_bits: u64,
    pub storage_bits: u64,
    pub area: f64,
    pub power: f64,
}

fn tdpp_cost(scheme: Scheme, counts: &TdppCounts, costs: &CostTable) -> SchemeCost {
    let logic = counts.instances * counts.switches * DATA_BITS;
    let storage = counts.storage_bits();
    SchemeCost {
        scheme,
        applicable: true,
        logic_bits: logic,
        storage_bits: storage,
        area: logic as f64 * costs.switch_area + storage as f64 * costs.storage_area,
        power: logic as f64 * costs.switch_power + storage as f64 * costs.storage_power,
    }
}

fn baseline_cost(scheme: Scheme, counts: &BaselineCounts, pes: u64, costs: &CostTable) -> SchemeCost {
    let logic = counts.mux_input_bits();
    let storage = pes * counts.key_bits_per_pe;
    SchemeCost {
        scheme,
        applicable: counts.applicable,
        logic_bits: logic,
        storage_bits: storage,
        area: logic as f64 * costs.mux_area + storage as f64 * costs.storage_area,
        power: logic as f64 * costs.mux_power + storage as f64 * costs.storage_power,
    }
}

/// Parameter sweep for the comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadGrid {
    pub tiles: Vec<usize>,
    pub activated_lines: Vec<usize>,
    pub device_precision: Vec<u32>,
    pub crossbar_size: usize,
    pub pe_per_tile: usize,
    /// Block ports for the config1 module.
    pub config1_ports: usize,
    /// Block ports for each config2 module.
    pub config2_ports: usize,
}

impl Default for OverheadGrid {
    fn default() -> Self {
        Self {
            tiles: vec![20, 40, 60, 80, 100],
            activated_lines: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
            device_precision: vec![1, 8],
            crossbar_size: 256,
            pe_per_tile: 8,
            config1_ports: 64,
            config2_ports: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadRow {
    pub tiles: usize,
    pub activated_lines: usize,
    pub device_precision: u32,
    pub crossbar_area: f64,
    pub crossbar_power: f64,
    pub schemes: Vec<SchemeCost>,
}

impl OverheadRow {
    pub fn cost(&self, scheme: Scheme) -> &SchemeCost {
        self.schemes
            .iter()
            .find(|s| s.scheme == scheme)
            .expect("every scheme is evaluated")
    }

    /// Area relative to TDPP config1; `None` where not applicable.
    pub fn normalized_area(&self, scheme: Scheme) -> Option<f64> {
        let s = self.cost(scheme);
        s.applicable.then(|| s.area / self.cost(Scheme::Config1).area)
    }

    pub fn normalized_power(&self, scheme: Scheme) -> Option<f64> {
        let s = self.cost(scheme);
        s.applicable.then(|| s.power / self.cost(Scheme::Config1).power)
    }

    /// Scheme area as a fraction of the crossbar area.
    pub fn relative_to_crossbars(&self, scheme: Scheme) -> f64 {
        self.cost(scheme).area / self.crossbar_area
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub rows: Vec<OverheadRow>,
}

pub fn evaluate(tiles: usize, x: usize, p: u32, grid: &OverheadGrid, costs: &CostTable) -> Result<OverheadRow> {
    let base = SystemConfig {
        crossbar_size: grid.crossbar_size,
        device_precision: p,
        activated_lines: x.min(grid.crossbar_size),
        pe_per_tile: grid.pe_per_tile,
        tile_count: tiles,
        ..SystemConfig::default()
    };
    let c1 = tdpp_counts(&SystemConfig {
        arch: Arch::Config1,
        bn_ports: grid.config1_ports,
        ..base.clone()
    })?;
    let c2 = tdpp_counts(&SystemConfig {
        arch: Arch::Config2,
        bn_ports: grid.config2_ports,
        ..base.clone()
    })?;
    let pes = (tiles * grid.pe_per_tile) as u64;
    let pairs = pes * (WEIGHT_PRECISION / p) as u64;
    let cells = pairs as f64 * 2.0 * (grid.crossbar_size * grid.crossbar_size) as f64;
    Ok(OverheadRow {
        tiles,
        activated_lines: x,
        device_precision: p,
        crossbar_area: cells * costs.cell_area,
        crossbar_power: cells * costs.cell_power,
        schemes: vec![
            tdpp_cost(Scheme::Config1, &c1, costs),
            tdpp_cost(Scheme::Config2, &c2, costs),
            baseline_cost(Scheme::Zou, &baseline_zou_counts(x, pairs)?, pes, costs),
            baseline_cost(Scheme::Wang, &baseline_wang_counts(x, pairs)?, pes, costs),
        ],
    })
}

pub fn compare(grid: &OverheadGrid, costs: &CostTable) -> Result<OverheadReport> {
    costs.validate()?;
    let mut rows = Vec::new();
    for &p in &grid.device_precision {
        for &t in &grid.tiles {
            for &x in &grid.activated_lines {
                rows.push(evaluate(t, x, p, grid, costs)?);
            }
        }
    }
    Ok(OverheadReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Area,
    Power,
}

impl OverheadReport {
    /// One line per (p, T, scheme) with a column per `x`; `-` marks
    /// inapplicable cells.
    pub fn to_csv(&self, metric: Metric) -> String {
        let mut xs: Vec<usize> = self.rows.iter().map(|r| r.activated_lines).collect();
        xs.sort_unstable();
        xs.dedup();
        let mut out = String::from("metric,p,T,scheme");
        for x in &xs {
            out.push_str(&format!(",x={x}"));
        }
        out.push('\n');
        let mut keys: Vec<(u32, usize)> = self.rows.iter().map(|r| (r.device_precision, r.tiles)).collect();
        keys.dedup();
        let name = match metric {
            Metric::Area => "area",
            Metric::Power => "power",
        };
        for (p, t) in keys {
            for scheme in Scheme::ALL {
                out.push_str(&format!("{name},{p},{t},{}", scheme.name()));
                for x in &xs {
                    let row = self
                        .rows
                        .iter()
                        .find(|r| r.device_precision == p && r.tiles == t && r.activated_lines == *x);
                    let v = row.and_then(|r| match metric {
                        Metric::Area => r.normalized_area(scheme),
                        Metric::Power => r.normalized_power(scheme),
                    });
                    match v {
                        Some(v) => out.push_str(&format!(",{v:.1}")),
                        None => out.push_str(",-"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}
