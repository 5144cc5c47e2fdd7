//! Fixtures shared by the benchmarks.

use rand::Rng;
use tdpp_core::{Activation, LayerSpec, PermutationModule, PmKey, QuantLayer, QuantMatrix, QuantModel, SeedTree};

pub fn random_key(pm: &PermutationModule, seed: u64) -> PmKey {
    let mut rng = SeedTree::new(seed).rng();
    PmKey::from_bits((0..pm.key_len()).map(|_| rng.random()).collect())
}

pub fn random_matrix(m: usize, n: usize, seed: u64) -> QuantMatrix {
    let mut rng = SeedTree::new(seed).rng();
    QuantMatrix::from_fn(m, n, |_, _| rng.random::<i8>())
}

/// Random-weight MLP with the given widths; shifts keep activations in range.
pub fn random_mlp(dims: &[usize], seed: u64) -> QuantModel {
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == dims.len() {
                Activation::None
            } else {
                Activation::Relu
            };
            QuantLayer {
                spec: LayerSpec::fc(w[0], w[1], act),
                weights: random_matrix(w[0], w[1], seed + i as u64),
                shift: 10,
            }
        })
        .collect();
    QuantModel::new(layers).expect("valid widths")
}

pub fn random_input(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = SeedTree::new(seed).rng();
    (0..n).map(|_| rng.random()).collect()
}
