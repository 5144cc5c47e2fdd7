use rand::Rng;
use tdpp_core::format::{write_dataset, write_model};
use tdpp_core::zoo::{generate_dataset, train, train_mlp};
use tdpp_core::{infer_unprotected, Activation, LayerSpec, QuantLayer, QuantMatrix, QuantModel, SeedTree, ZooModel};

#[test]
fn mlp_reaches_target_accuracy_and_quantizes_cleanly() {
    let ds = generate_dataset(0, 2000, 1000).unwrap();
    let t = train_mlp(&ds, &[64, 80, 48, 10], 10, 0).unwrap();
    assert!(t.float_accuracy >= 0.80, "{}", t.float_accuracy);
    assert!(t.quant_accuracy >= 0.80, "{}", t.quant_accuracy);
    assert!((t.float_accuracy - t.quant_accuracy).abs() <= 0.02);

    let again = train_mlp(&ds, &[64, 80, 48, 10], 10, 0).unwrap();
    assert_eq!(write_model(&t.quant).unwrap(), write_model(&again.quant).unwrap());
}

#[test]
fn cnn_trains() {
    let ds = generate_dataset(1, 2000, 1000).unwrap();
    let t = train(&ds, &ZooModel::Cnn.descriptor(), 10, 0).unwrap();
    assert!(t.float_accuracy >= 0.80, "{}", t.float_accuracy);
    assert!(
        (t.float_accuracy - t.quant_accuracy).abs() <= 0.02,
        "{} {}",
        t.float_accuracy,
        t.quant_accuracy
    );
}

#[test]
fn datasets_are_seeded() {
    let a = write_dataset(&generate_dataset(3, 100, 100).unwrap()).unwrap();
    let b = write_dataset(&generate_dataset(3, 100, 100).unwrap()).unwrap();
    let c = write_dataset(&generate_dataset(4, 100, 100).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn random_guessing_is_at_chance() {
    let ds = generate_dataset(0, 100, 5000).unwrap();
    let mut rng = SeedTree::new(1).rng();
    let hits = ds.test_y.iter().filter(|&&y| rng.random_range(0..10u8) == y).count();
    let acc = hits as f64 / ds.test_y.len() as f64;
    assert!((acc - 0.10).abs() <= 0.02, "{acc}");
}

#[test]
fn worst_case_accumulation_fits() {
    assert!(i64::from(i32::MAX) > 64 * 255 * 128);
    let spec = LayerSpec::fc(64, 10, Activation::None);
    let model = QuantModel::new(vec![QuantLayer {
        spec,
        weights: QuantMatrix::from_fn(64, 10, |_, _| -128),
        shift: 0,
    }])
    .unwrap();
    let out = infer_unprotected(&model, &[255u8; 64]).unwrap();
    assert!(out.logits.iter().all(|&v| v == -64 * 255 * 128));
}
