use ndarray::Array3;
use rand::{Rng, SeedableRng};
use thumbqc_core::backbone::{BackboneConfig, VisionTransformer};

#[test]
fn inference_forward_matches_training_forward() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let vit = VisionTransformer::new(BackboneConfig::desk(), &mut rng).unwrap();
    let (h, w) = vit.input_size();
    let img = Array3::from_shape_fn((h, w, 3), |_| rng.random_range(-2.0..2.0));
    let a = vit.forward(&img).unwrap();
    let (b, _) = vit.forward_train(&img).unwrap();
    let d = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    assert!(d < 1e-9, "max difference {d}");
}
