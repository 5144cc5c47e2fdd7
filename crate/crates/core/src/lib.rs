//! Functional simulator and security-analysis toolkit for two-dimensional
//! permutation protection of DNN weights on memristive crossbars.
//!
//! Weight matrices are tiled onto `C x C` crossbars, their rows and columns
//! permuted by a Benes-network permutation module keyed from buffer startup
//! values, and bit-sliced into positive/negative crossbar pairs. The crate
//! models the legitimate dataflow (which must leave inference bit-exact),
//! the adversary's view of the stored devices, the attacks on that view, and
//! the hardware cost of the scheme against two baseline protections.

pub mod attacks;
pub mod benes;
pub mod config;
pub mod error;
pub mod format;
pub mod keys;
pub mod mapping;
pub mod model;
pub mod overhead;
pub mod perm;
pub mod quant;
pub mod rng;
pub mod system;
pub mod zoo;

pub use attacks::{brute_force_layer, brute_force_model, DncResult, SecurityEstimate};
pub use benes::{reduction_ratio, switch_count, BenesNetwork, PermutationModule, PmKey};
pub use config::{Arch, SystemConfig};
pub use error::{Error, Result};
pub use keys::{build_schedule, generate_pm_key, BufferId, KeySchedule, PufSource, TileIndex, UserKey};
pub use mapping::{
    adversary_extract, bit_slice, extract_with_key, protect_model, protect_submatrix, restore_index_vectors,
    tile_matrix, CrossbarPair, IndexVector, LayerMapping, ProtectedMapping, TileMapping,
};
pub use model::{Activation, LayerKind, LayerSpec, ModelDescriptor, Pooling, QuantLayer, QuantModel};
pub use overhead::{CostTable, OverheadReport};
pub use perm::Permutation;
pub use quant::{matrix_permute, QuantMatrix};
pub use rng::SeedTree;
pub use system::{
    accuracy, crossbar_vmm, infer_as_adversary, infer_protected, infer_unprotected, Inference, ProtectedSystem,
};
pub use zoo::{SyntheticDataset, TrainedModel, ZooModel};
