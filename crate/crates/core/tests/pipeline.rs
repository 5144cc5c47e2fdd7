//! End-to-end checks of protection, extraction and protected inference.

use std::sync::OnceLock;

use rand::Rng;
use tdpp_core::format::{read_mapping, read_model, write_mapping, write_model};
use tdpp_core::mapping::LayerPlacement;
use tdpp_core::zoo::{generate_dataset, train};
use tdpp_core::{
    adversary_extract, build_schedule, extract_with_key, infer_unprotected, protect_model, Activation, Arch, LayerSpec,
    ModelDescriptor, Pooling, ProtectedSystem, QuantLayer, QuantMatrix, QuantModel, SeedTree, SyntheticDataset,
    SystemConfig, TrainedModel, ZooModel,
};

struct Fixture {
    ds: SyntheticDataset,
    mlp: TrainedModel,
    cnn: TrainedModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let ds = generate_dataset(0, 2000, 400).unwrap();
        let mlp = train(&ds, &ZooModel::Mlp.descriptor(), 6, 1).unwrap();
        let cnn = train(&ds, &ZooModel::Cnn.descriptor(), 6, 1).unwrap();
        Fixture { ds, mlp, cnn }
    })
}

fn cfg(arch: Arch, c: usize, ports: usize, p: u32) -> SystemConfig {
    SystemConfig {
        arch,
        crossbar_size: c,
        bn_ports: ports,
        device_precision: p,
        activated_lines: c.min(16),
        seed: 5,
        ..SystemConfig::default()
    }
}

/// Straight-line integer interpreter written directly from the layer
/// definitions, sharing no code with the library's forward pass.
fn reference_logits(model: &QuantModel, input: &[u8]) -> Vec<i32> {
    let mut act: Vec<i64> = input.iter().map(|&v| i64::from(v)).collect();
    for (li, layer) in model.layers.iter().enumerate() {
        let s = layer.spec;
        let mut vectors: Vec<Vec<i64>> = Vec::new();
        for pos in 0..s.positions {
            let mut y = vec![0i64; s.n];
            for (j, yj) in y.iter_mut().enumerate() {
                for i in 0..s.m {
                    *yj += act[pos * s.m + i] * i64::from(layer.weights.get(i, j));
                }
            }
            vectors.push(y);
        }
        if s.pooling == Pooling::Max {
            let mut best = vectors[0].clone();
            for v in &vectors[1..] {
                for j in 0..s.n {
                    if v[j] > best[j] {
                        best[j] = v[j];
                    }
                }
            }
            vectors = vec![best];
        }
        let mut flat: Vec<i64> = vectors.concat();
        if s.activation == Activation::Relu {
            for v in &mut flat {
                if *v < 0 {
                    *v = 0;
                }
            }
        }
        if li + 1 == model.layers.len() {
            return flat.iter().map(|&v| i32::try_from(v).unwrap()).collect();
        }
        act = flat
            .iter()
            .map(|&v| {
                let q = v >> layer.shift;
                q.clamp(0, 255)
            })
            .collect();
    }
    unreachable!()
}

#[test]
fn library_forward_pass_matches_reference() {
    let f = fixture();
    for model in [&f.mlp.quant, &f.cnn.quant] {
        for x in f.ds.test_x.iter().take(300) {
            assert_eq!(infer_unprotected(model, x).unwrap().logits, reference_logits(model, x));
        }
    }
}

#[test]
fn round_trips_for_all_architectures() {
    let f = fixture();
    for model in [&f.mlp.quant, &f.cnn.quant] {
        for arch in [Arch::Config1, Arch::Config2] {
            for (c, ports) in [(16, 4), (32, 8), (256, 16)] {
                for p in [1, 8] {
                    let cfg = cfg(arch, c, ports, p);
                    let mut sched = build_schedule(&cfg, &model.descriptor(), cfg.seed, None).unwrap();
                    let mapping = protect_model(model, &cfg, &mut sched).unwrap();
                    assert_eq!(&extract_with_key(&mapping, &sched).unwrap(), model);
                    let bytes = write_mapping(&mapping).unwrap();
                    let back = read_mapping(&bytes, model).unwrap();
                    assert_eq!(back, mapping, "{arch} C={c} p={p}");
                }
            }
        }
    }
}

#[test]
fn protected_inference_is_bit_exact_on_tiled_layers() {
    let f = fixture();
    for model in [&f.mlp.quant, &f.cnn.quant] {
        for arch in [Arch::Config1, Arch::Config2] {
            // C=16 splits the 64/80/48 wide layers across tile grids
            for (c, ports, p) in [(16, 4, 1), (16, 16, 8), (32, 4, 2)] {
                let cfg = cfg(arch, c, ports, p);
                let mut sched = build_schedule(&cfg, &model.descriptor(), 9, None).unwrap();
                let mapping = protect_model(model, &cfg, &mut sched).unwrap();
                let sys = ProtectedSystem::new(&mapping, &sched, &cfg).unwrap();
                for x in f.ds.test_x.iter().take(200) {
                    assert_eq!(sys.infer(x).unwrap(), infer_unprotected(model, x).unwrap());
                }
            }
        }
    }
}

#[test]
fn mapping_bytes_carry_no_key_material() {
    let f = fixture();
    for arch in [Arch::Config1, Arch::Config2] {
        let cfg = cfg(arch, 256, 256, 1);
        let mut sched = build_schedule(&cfg, &f.mlp.quant.descriptor(), 3, None).unwrap();
        let mapping = protect_model(&f.mlp.quant, &cfg, &mut sched).unwrap();
        let bytes = write_mapping(&mapping).unwrap();
        for l in 0..sched.layers() {
            let key = sched.key(l).to_bytes();
            // any 16-byte window of the key would be a leak
            for w in key.windows(16) {
                assert!(!bytes.windows(16).any(|b| b == w), "{arch} layer {l}");
            }
        }
        let model_bytes = write_model(&adversary_extract(&mapping).unwrap()).unwrap();
        assert!(read_model(&model_bytes).is_ok());
    }
}

#[test]
fn random_keys_disturb_most_cells() {
    let mut rng = SeedTree::new(77).rng();
    let spec = LayerSpec::fc(256, 256, Activation::None);
    for trial in 0..5u64 {
        let w = QuantMatrix::from_fn(256, 256, |_, _| rng.random::<i8>());
        let model = QuantModel::new(vec![QuantLayer {
            spec,
            weights: w.clone(),
            shift: 0,
        }])
        .unwrap();
        for ports in [16, 256] {
            let cfg = cfg(Arch::Config1, 256, ports, 1);
            let mut sched = build_schedule(&cfg, &model.descriptor(), trial, None).unwrap();
            let stolen = adversary_extract(&protect_model(&model, &cfg, &mut sched).unwrap()).unwrap();
            let moved = stolen.layers[0].weights.hamming(&w).unwrap();
            assert!(moved as f64 >= 0.9 * 65536.0, "B={ports}: {moved}");
        }
    }
}

#[test]
fn adversary_sees_the_placed_matrix() {
    let f = fixture();
    let cfg = cfg(Arch::Config2, 32, 8, 4);
    let model = &f.mlp.quant;
    let mut sched = build_schedule(&cfg, &model.descriptor(), 4, None).unwrap();
    let mapping = protect_model(model, &cfg, &mut sched).unwrap();
    let stolen = adversary_extract(&mapping).unwrap();
    let pm = sched.pm();
    for (i, l) in model.layers.iter().enumerate() {
        let place = LayerPlacement::new(&pm, sched.key(i), l.spec.m, l.spec.n).unwrap();
        assert_eq!(
            stolen.layers[i].weights.values(),
            place.place(&l.weights).unwrap().values()
        );
        assert_eq!(stolen.layers[i].spec, l.spec);
    }
}

#[test]
fn conv_layer_trace_on_two_by_two_crossbars() {
    // 4 positions of a 4-wide input onto a 2 x 2 grid of 2 x 2 crossbars
    let spec = LayerSpec::conv(4, 4, 4, Activation::Relu, Pooling::Max);
    let w = QuantMatrix::new(4, 4, vec![3, -1, 2, 0, -2, 4, 1, -3, 1, 1, -1, 2, 0, -2, 3, 1], 0).unwrap();
    let model = QuantModel::new(vec![QuantLayer {
        spec,
        weights: w.clone(),
        shift: 0,
    }])
    .unwrap();
    let desc = ModelDescriptor::new(vec![spec]).unwrap();
    let input: Vec<u8> = vec![1, 2, 3, 4, 5, 0, 2, 1, 0, 0, 7, 1, 2, 2, 2, 2];
    for seed in 0..4 {
        let c = cfg(Arch::Config1, 2, 2, 1);
        let mut sched = build_schedule(&c, &desc, seed, None).unwrap();
        let mapping = protect_model(&model, &c, &mut sched).unwrap();
        let sys = ProtectedSystem::new(&mapping, &sched, &c).unwrap();
        let tr = sys.trace_layer(0, &input).unwrap();
        let stored = adversary_extract(&mapping).unwrap().layers[0].weights.clone();
        let sigma = sched.pm().realized_permutation(sched.key(0)).unwrap();
        for pos in 0..4 {
            let x = &input[pos * 4..pos * 4 + 4];
            for gr in 0..2 {
                // both rows of a tile are real, so the input is just permuted
                let mut expect = [0u8; 2];
                for k in 0..2 {
                    expect[sigma.get(k)] = x[gr * 2 + k];
                }
                assert_eq!(tr.crossbar_inputs[pos][gr], expect);
            }
            for gr in 0..2 {
                for gc in 0..2 {
                    let part = &tr.partials[pos][gr * 2 + gc];
                    for (k, &got) in part.iter().enumerate() {
                        let dot: i32 = (0..2)
                            .map(|r| {
                                i32::from(tr.crossbar_inputs[pos][gr][r])
                                    * i32::from(stored.get(gr * 2 + r, gc * 2 + k))
                            })
                            .sum();
                        assert_eq!(got, dot);
                    }
                }
            }
            for gc in 0..2 {
                for k in 0..2 {
                    assert_eq!(
                        tr.aggregated[pos][gc][k],
                        tr.partials[pos][gc][k] + tr.partials[pos][2 + gc][k]
                    );
                }
            }
        }
        for gc in 0..2 {
            for k in 0..2 {
                let best = (0..4).map(|p| tr.aggregated[p][gc][k]).max().unwrap();
                assert_eq!(tr.pooled[0][gc][k], best);
                assert_eq!(tr.activated[0][gc][k], best.max(0));
            }
        }
        assert_eq!(tr.output, reference_logits(&model, &input));
    }
}

#[test]
fn index_vectors_regenerate_from_keys() {
    let f = fixture();
    for model in [&f.mlp.quant, &f.cnn.quant] {
        for arch in [Arch::Config1, Arch::Config2] {
            let cfg = cfg(arch, 32, 8, 1);
            let desc = model.descriptor();
            let mut sched = build_schedule(&cfg, &desc, 6, None).unwrap();
            let mapping = protect_model(model, &cfg, &mut sched).unwrap();
            let mut fresh = build_schedule(&cfg, &desc, 6, None).unwrap();
            assert!(fresh.index_vectors().is_none());
            tdpp_core::restore_index_vectors(&mut fresh, &desc).unwrap();
            assert_eq!(fresh.index_vectors(), sched.index_vectors());
            assert_eq!(&extract_with_key(&mapping, &fresh).unwrap(), model);
        }
    }
}
