//! Experiment configuration file (TOML).
//!
//! ```toml
//! seed = 0
//! out = "out"
//!
//! [system]
//! arch = "config1"        # or "config2"
//! crossbar_size = 256
//! bn_ports = 16
//! device_precision = 1
//! activated_lines = 16
//! pe_per_tile = 8
//! tile_count = 20
//!
//! [zoo]
//! model = "mlp"           # or "cnn"
//! dims = [64, 80, 48, 10] # mlp only
//! n_train = 2000
//! n_test = 1000
//! epochs = 10
//!
//! [attack]
//! trials = 40
//! eval_samples = 300
//! partial_row_layer = 0
//! dnc = true
//!
//! [overhead]              # sweep for the comparison tables
//! tiles = [20, 40, 60, 80, 100]
//! activated_lines = [1, 2, 4, 8, 16, 32, 64, 128, 256]
//! device_precision = [1, 8]
//! crossbar_size = 256
//! pe_per_tile = 8
//! config1_ports = 64
//! config2_ports = 4
//!
//! [costs]                 # placeholder unit costs per bit
//! switch_area = 0.0575
//! # ...
//! ```
//!
//! Every field is optional and defaults to the values above.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tdpp_core::overhead::OverheadGrid;
use tdpp_core::{Arch, CostTable, ModelDescriptor, SystemConfig, ZooModel};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub arch: Arch,
    pub crossbar_size: usize,
    pub bn_ports: usize,
    pub device_precision: u32,
    pub activated_lines: usize,
    pub pe_per_tile: usize,
    pub tile_count: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        let d = SystemConfig::default();
        Self {
            arch: d.arch,
            crossbar_size: d.crossbar_size,
            bn_ports: d.bn_ports,
            device_precision: d.device_precision,
            activated_lines: d.activated_lines,
            pe_per_tile: d.pe_per_tile,
            tile_count: d.tile_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZooSection {
    pub model: String,
    pub dims: Option<Vec<usize>>,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
}

impl Default for ZooSection {
    fn default() -> Self {
        Self {
            model: "mlp".into(),
            dims: None,
            n_train: 2000,
            n_test: 1000,
            epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub trials: usize,
    /// Test samples used as the attacker's evaluation set.
    pub eval_samples: usize,
    pub partial_row_layer: usize,
    /// Run the divide-and-conquer search.
    pub dnc: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            trials: 40,
            eval_samples: 300,
            partial_row_layer: 0,
            dnc: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub system: SystemSection,
    pub zoo: ZooSection,
    pub attack: AttackSection,
    pub overhead: OverheadGrid,
    pub costs: CostTable,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            system: SystemSection::default(),
            zoo: ZooSection::default(),
            attack: AttackSection::default(),
            overhead: OverheadGrid::default(),
            costs: CostTable::default(),
        }
    }
}

/// Command-line overrides; set flags win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub arch: Option<Arch>,
    pub bn_ports: Option<usize>,
    pub device_precision: Option<u32>,
    pub tiles: Option<usize>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("reading {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.arch {
            self.system.arch = v;
        }
        if let Some(v) = o.bn_ports {
            self.system.bn_ports = v;
        }
        if let Some(v) = o.device_precision {
            self.system.device_precision = v;
        }
        if let Some(v) = o.tiles {
            self.system.tile_count = v;
        }
        if let Some(v) = o.trials {
            self.attack.trials = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
    }

    pub fn system(&self) -> SystemConfig {
        let s = &self.system;
        SystemConfig {
            arch: s.arch,
            crossbar_size: s.crossbar_size,
            device_precision: s.device_precision,
            activated_lines: s.activated_lines,
            pe_per_tile: s.pe_per_tile,
            tile_count: s.tile_count,
            bn_ports: s.bn_ports,
            seed: self.seed,
            ..SystemConfig::default()
        }
    }

    pub fn descriptor(&self) -> Result<ModelDescriptor, CliError> {
        let z = &self.zoo;
        match (z.model.as_str(), &z.dims) {
            ("mlp", None) => Ok(ZooModel::Mlp.descriptor()),
            ("mlp", Some(d)) => {
                if d.first() != Some(&64) || d.last() != Some(&10) || d.len() < 2 {
                    return Err(CliError::Config(format!(
                        "zoo.dims: must start at 64 and end at 10, got {d:?}"
                    )));
                }
                if d.contains(&0) {
                    return Err(CliError::Config("zoo.dims: widths must be positive".into()));
                }
                ModelDescriptor::mlp(d).map_err(|e| CliError::Config(format!("zoo.dims: {e}")))
            }
            ("cnn", None) => Ok(ZooModel::Cnn.descriptor()),
            ("cnn", Some(_)) => Err(CliError::Config("zoo.dims: only the mlp model takes dims".into())),
            (other, _) => Err(CliError::Config(format!("zoo.model: unknown model `{other}`"))),
        }
    }

    /// Checks every section; messages name the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        self.system()
            .validate()
            .map_err(|e| CliError::Config(format!("system: {e}")))?;
        self.descriptor()?;
        let z = &self.zoo;
        if z.n_train < 100 || z.n_test < 100 {
            return Err(CliError::Config(
                "zoo.n_train / zoo.n_test: need at least 100 samples".into(),
            ));
        }
        let a = &self.attack;
        if a.trials == 0 {
            return Err(CliError::Config("attack.trials: must be >= 1".into()));
        }
        if a.eval_samples == 0 || a.eval_samples > z.n_test {
            return Err(CliError::Config(format!(
                "attack.eval_samples: must be in 1..={}",
                z.n_test
            )));
        }
        if a.partial_row_layer >= self.descriptor()?.len() {
            return Err(CliError::Config("attack.partial_row_layer: out of range".into()));
        }
        self.costs
            .validate()
            .map_err(|e| CliError::Config(format!("costs: {e}")))?;
        if self.overhead.tiles.is_empty()
            || self.overhead.activated_lines.is_empty()
            || self.overhead.device_precision.is_empty()
        {
            return Err(CliError::Config("overhead: sweep lists must not be empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration, excluding the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
        assert_eq!(c.attack.trials, 40);
    }

    #[test]
    fn unknown_fields_rejected() {
        let e = ExperimentConfig::parse("[system]\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        assert_eq!(e.exit_code(), 2);
        assert!(ExperimentConfig::parse("[costs]\nswitch = 1.0\n").is_err());
    }

    #[test]
    fn bad_dims_name_the_field() {
        let c = ExperimentConfig::parse("[zoo]\ndims = [64, 32, 8]\n").unwrap();
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("zoo.dims"), "{e}");
    }

    #[test]
    fn flags_win() {
        let mut c = ExperimentConfig::parse("seed = 3\n[system]\nbn_ports = 8\n").unwrap();
        c.apply(&Overrides {
            bn_ports: Some(64),
            ..Overrides::default()
        });
        assert_eq!(c.seed, 3);
        assert_eq!(c.system.bn_ports, 64);
    }

    #[test]
    fn hash_ignores_output_path() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
