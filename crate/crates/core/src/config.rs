//! Accelerator configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the arithmetic unit (and hence the permutation module) lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// One global AU and buffer; layers run one after another and share a key.
    Config1,
    /// One AU and buffer per tile; layers run in parallel with per-layer keys.
    Config2,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Config1 => f.write_str("config1"),
            Arch::Config2 => f.write_str("config2"),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "config1" | "config-1" | "1" => Ok(Arch::Config1),
            "config2" | "config-2" | "2" => Ok(Arch::Config2),
            other => Err(Error::Config(format!("unknown arch `{other}`"))),
        }
    }
}

pub const WEIGHT_PRECISION: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemConfig {
    pub arch: Arch,
    /// Crossbar side length `C`.
    pub crossbar_size: usize,
    /// Bits stored per memristive device.
    pub device_precision: u32,
    pub weight_precision: u32,
    /// Word/bit lines activated per cycle. Only the overhead model reads it.
    pub activated_lines: usize,
    pub pe_per_tile: usize,
    pub tile_count: usize,
    /// Ports of each Benes block inside the permutation module.
    pub bn_ports: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Config1,
            crossbar_size: 256,
            device_precision: 1,
            weight_precision: WEIGHT_PRECISION,
            activated_lines: 16,
            pe_per_tile: 8,
            tile_count: 20,
            bn_ports: 16,
            seed: 0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.crossbar_size;
        if !c.is_power_of_two() || c < 2 {
            return Err(Error::Config(format!(
                "crossbar_size must be a power of two >= 2, got {c}"
            )));
        }
        if self.weight_precision != WEIGHT_PRECISION {
            return Err(Error::Config(format!(
                "weight_precision is fixed at {WEIGHT_PRECISION}, got {}",
                self.weight_precision
            )));
        }
        if !matches!(self.device_precision, 1 | 2 | 4 | 8) {
            return Err(Error::Config(format!(
                "device_precision must be one of 1, 2, 4, 8, got {}",
                self.device_precision
            )));
        }
        let x = self.activated_lines;
        if x == 0 || !x.is_power_of_two() || x > c {
            return Err(Error::Config(format!(
                "activated_lines must be a power of two in 1..={c}, got {x}"
            )));
        }
        let b = self.bn_ports;
        if b < 2 || !b.is_power_of_two() || b > c {
            return Err(Error::Config(format!(
                "bn_ports must be a power of two in 2..={c}, got {b}"
            )));
        }
        if self.pe_per_tile == 0 || self.tile_count == 0 {
            return Err(Error::Config("pe_per_tile and tile_count must be >= 1".into()));
        }
        if (self.pe_per_tile as u32) * self.device_precision < self.weight_precision {
            return Err(Error::Config(format!(
                "pe_per_tile * device_precision must be >= {}",
                self.weight_precision
            )));
        }
        Ok(())
    }

    /// Bit slices (crossbar pairs) per stored weight: `8 / p`.
    pub fn slices(&self) -> usize {
        (self.weight_precision / self.device_precision) as usize
    }

    /// Benes blocks per permutation module.
    pub fn pm_blocks(&self) -> usize {
        self.crossbar_size / self.bn_ports
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SystemConfig::default().validate().unwrap();
        assert_eq!(SystemConfig::default().slices(), 8);
        assert_eq!(SystemConfig::default().pm_blocks(), 16);
    }

    #[test]
    fn rejects_bad_values() {
        let base = SystemConfig::default();
        for bad in [
            SystemConfig {
                crossbar_size: 100,
                ..base.clone()
            },
            SystemConfig {
                device_precision: 3,
                ..base.clone()
            },
            SystemConfig {
                activated_lines: 3,
                ..base.clone()
            },
            SystemConfig {
                activated_lines: 512,
                ..base.clone()
            },
            SystemConfig {
                bn_ports: 512,
                ..base.clone()
            },
            SystemConfig {
                bn_ports: 1,
                ..base.clone()
            },
            SystemConfig {
                weight_precision: 4,
                ..base.clone()
            },
            SystemConfig {
                pe_per_tile: 4,
                device_precision: 1,
                ..base.clone()
            },
            SystemConfig {
                tile_count: 0,
                ..base.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn arch_parsing() {
        assert_eq!("config1".parse::<Arch>().unwrap(), Arch::Config1);
        assert_eq!("config-2".parse::<Arch>().unwrap(), Arch::Config2);
        assert!("config3".parse::<Arch>().is_err());
        assert_eq!(Arch::Config2.to_string(), "config2");
    }
}
