mod common;

use agiqa_core::encoder::{Backbone, DualEncoder, StubEncoder, StubEncoderConfig};
use agiqa_core::head::RegressionHead;
use agiqa_core::model::{fuse_features, ModelConfig, PromptModel, Readout, ReadoutKind};
use agiqa_core::prompt::{assemble_prompts, LearnableContext, QualityCategorySet};
use agiqa_core::zero_shot::{zero_shot_from_features, zero_shot_quality, AntonymPromptPair};
use ndarray::{s, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn categories(k: usize) -> QualityCategorySet {
    QualityCategorySet::with_uniform_levels((0..k).map(|i| format!("q{i}"))).unwrap()
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

#[test]
fn default_config_fuses_to_3584() {
    let enc = StubEncoder::for_backbone(Backbone::VitB16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = PromptModel::init(&ModelConfig::default(), 16, enc.width(), &mut rng).unwrap();
    assert_eq!(model.fused_width(), 3584);
    assert_eq!(model.head().unwrap().input_width(), 7 * 512);
    assert_eq!(model.head().unwrap().hidden_width(), 512);

    let image = enc.encode_image(&common::noise_image(224, 1)).unwrap();
    assert_eq!(image.len(), 512);
    let text = model.text_features(&enc).unwrap();
    assert_eq!(fuse_features(image.view(), text.view()).unwrap().len(), 3584);
}

#[test]
fn fused_width_is_k_plus_one_times_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let k = rng.random_range(2..10);
        let d = rng.random_range(1..64);
        let image = random_vec(d, &mut rng);
        let text = Array2::from_shape_simple_fn((k, d), || rng.random::<f64>());
        let fused = fuse_features(image.view(), text.view()).unwrap();
        assert_eq!(fused.len(), (k + 1) * d);
        assert_eq!(fused.slice(s![..d]), image);
        assert_eq!(fused.slice(s![d..2 * d]), text.row(0));
    }
}

#[test]
fn default_prompt_layout() {
    let enc = StubEncoder::for_backbone(Backbone::VitB16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ctx = LearnableContext::random(16, 512, &mut rng);
    let batch = assemble_prompts(&ctx, &QualityCategorySet::adjectives(), &enc).unwrap();
    assert_eq!(batch.embeddings.dim(), (6, 77, 512));
    assert_eq!(batch.eos_positions, vec![18; 6]);
}

#[test]
fn distinct_images_get_distinct_features() {
    let enc = StubEncoder::for_backbone(Backbone::VitB16).unwrap();
    let a = enc.encode_image(&common::noise_image(224, 1)).unwrap();
    let b = enc.encode_image(&common::noise_image(224, 2)).unwrap();
    assert!(a.iter().all(|v| v.is_finite()));
    assert_ne!(a, b);
}

/// Central differences over every trainable parameter.
#[test]
fn analytic_gradient_matches_finite_differences() {
    let enc = StubEncoder::new(StubEncoderConfig::tiny(8)).unwrap();
    assert_eq!(enc.context_window(), 16);
    let cfg = ModelConfig {
        categories: categories(3),
        hidden_width: 6,
        activation: agiqa_core::head::Activation::Tanh,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = PromptModel::init(&cfg, 2, 8, &mut rng).unwrap();
    let feats = common::noise_features(&enc, 5, 9);
    let targets = [0.1, 0.9, 0.4, 0.7, 0.2];

    let (_, grad) = model.loss_and_gradient(feats.view(), &targets, &enc).unwrap();
    let analytic = grad.flatten();
    let params = model.flat_parameters();
    assert_eq!(analytic.len(), params.len());
    assert_eq!(params.len(), 2 * 8 + 6 * 32 + 6 + 6 + 1);

    let loss_at = |p: &[f64]| {
        let mut m = model.clone();
        m.set_flat_parameters(p).unwrap();
        m.loss_and_gradient(feats.view(), &targets, &enc).unwrap().0
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let up = loss_at(&p);
        p[i] -= 2.0 * h;
        let down = loss_at(&p);
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn zero_shot_is_antisymmetric_over_stub_images() {
    let enc = StubEncoder::new(StubEncoderConfig::tiny(16)).unwrap();
    let pair = AntonymPromptPair::default();
    let swapped = pair.swapped();
    for seed in 0..50 {
        let img = common::noise_image(enc.image_size(), seed);
        let a = zero_shot_quality(&img, &pair, &enc).unwrap();
        let b = zero_shot_quality(&img, &swapped, &enc).unwrap();
        assert!(a > 0.0 && a < 1.0);
        assert!((a + b - 1.0).abs() <= 1e-6);
    }
    let t = Array1::from(vec![1.0, 2.0, 3.0]);
    assert_eq!(zero_shot_from_features(t.view(), t.view(), t.view()).unwrap(), 0.5);
}

fn permuted_model(model: &PromptModel, order: &[usize], d: usize) -> PromptModel {
    let head = model.head().unwrap();
    let mut w1 = head.w1().clone();
    for (new_k, &old_k) in order.iter().enumerate() {
        w1.slice_mut(s![.., (new_k + 1) * d..(new_k + 2) * d])
            .assign(&head.w1().slice(s![.., (old_k + 1) * d..(old_k + 2) * d]));
    }
    let mut out = model.clone();
    out.categories = model.categories.permuted(order);
    out.readout = Readout::Regression(
        RegressionHead::from_parts(w1, head.b1().clone(), head.w2().clone(), head.b2(), head.activation)
            .unwrap(),
    );
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permuting_categories_leaves_predictions(seed in any::<u64>(), k in 2usize..6) {
        let enc = common::tiny_encoder(8);
        let cfg = ModelConfig { categories: categories(k), hidden_width: 5, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = PromptModel::init(&cfg, 3, 8, &mut rng).unwrap();
        let mut order: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let permuted = permuted_model(&model, &order, 8);

        let feats = common::noise_features(&enc, 3, seed % 1000);
        let a = model.predict_from_features(feats.view(), &enc).unwrap();
        let b = permuted.predict_from_features(feats.view(), &enc).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn fused_width_invariant(k in 2usize..8, d in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { categories: categories(k), hidden_width: 3, ..ModelConfig::default() };
        let model = PromptModel::init(&cfg, 2, d, &mut rng).unwrap();
        prop_assert_eq!(model.fused_width(), (k + 1) * d);
        let sim = ModelConfig { readout: ReadoutKind::Similarity, ..cfg };
        prop_assert!(PromptModel::init(&sim, 2, d, &mut rng).unwrap().head().is_none());
    }

    #[test]
    fn zero_shot_antisymmetric_and_scale_free(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, p, n) = (random_vec(12, &mut rng), random_vec(12, &mut rng), random_vec(12, &mut rng));
        let a = zero_shot_from_features(x.view(), p.view(), n.view()).unwrap();
        let b = zero_shot_from_features(x.view(), n.view(), p.view()).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
        let scaled = &x * c;
        let s = zero_shot_from_features(scaled.view(), p.view(), n.view()).unwrap();
        prop_assert!((a - s).abs() <= 1e-12);
    }
}
