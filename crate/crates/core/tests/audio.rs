mod common;

use common::{mfcc_clip_suite, mfcc_oracle};
use edgenn::audio::{classify, classify_with, mfcc, AudioClip, MfccConfig};
use edgenn::kernels::{ids, Executor};
use edgenn::netbuilder::{build_network, kws9};
use edgenn::passes::{compile, CompileOptions};
use edgenn::{Error, Registry, Tensor};
use edgenn::graph::{TensorData, TensorDesc};
use rand::{Rng, SeedableRng};

fn max_abs_diff(clip: &[f32]) -> f64 {
    let ours = mfcc(&AudioClip::new(clip.to_vec()), &MfccConfig::default()).unwrap();
    assert_eq!((ours.desc.shape.c, ours.desc.shape.h, ours.desc.shape.w), (1, 40, 32));
    let want = mfcc_oracle(clip, 16_000.0, 2048, 512, 40, 40);
    ours.data.iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max)
}

#[test]
fn sine_440_matches_oracle() {
    let clip = &mfcc_clip_suite()[0];
    assert_eq!(clip.0, "sine_440");
    let d = max_abs_diff(&clip.1);
    assert!(d <= 1e-3, "max diff {}", d);
}

#[test]
fn clip_suite_matches_oracle() {
    for (name, clip) in mfcc_clip_suite() {
        let d = max_abs_diff(&clip);
        assert!(d <= 1e-3, "{}: max diff {}", name, d);
    }
}

fn kws9_features(seed: u64) -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(TensorDesc::f32(1, 40, 32), (0..1280).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

#[test]
fn uniform_logits_give_uniform_probabilities() {
    let mut g = build_network(&kws9(), 1).unwrap();
    for name in ["fc.weight", "fc.bias"] {
        if let TensorData::F32(v) = &mut g.weights.get_mut(name).unwrap().data {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let reg = Registry::with_defaults();
    let plan = compile(&g, &CompileOptions::default()).unwrap();
    let a = reg.default_assignment(&plan.graph).unwrap();
    let c = classify(&plan, &reg, &a, &kws9_features(0)).unwrap();
    assert_eq!(c.probabilities.len(), 12);
    for p in &c.probabilities {
        assert!((p - 1.0 / 12.0).abs() < 1e-6);
    }
    assert_eq!(c.index, 0);
    assert_eq!(c.label, "yes");
}

#[test]
fn classification_is_deterministic_and_normalized() {
    let g = build_network(&kws9(), 9).unwrap();
    let reg = Registry::with_defaults();
    let plan = compile(&g, &CompileOptions::default()).unwrap();
    let a = reg.default_assignment(&plan.graph).unwrap();
    let bound = plan.bind(&reg, &a).unwrap();
    let mut exec = Executor::new(&bound, &reg, &a).unwrap();
    let x = kws9_features(3);
    let first = classify_with(&mut exec, &bound, &x).unwrap();
    for _ in 0..3 {
        assert_eq!(classify_with(&mut exec, &bound, &x).unwrap(), first);
        assert_eq!(classify(&plan, &reg, &a, &x).unwrap().label, first.label);
    }
    let sum: f32 = first.probabilities.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-6);
}

#[test]
fn direct_and_winograd_agree_on_label() {
    let reg = Registry::with_defaults();
    for seed in 0..5 {
        let g = build_network(&kws9(), seed).unwrap();
        let plan = compile(&g, &CompileOptions::default()).unwrap();
        let direct = reg.uniform_assignment(&plan.graph, &[ids::CONV_DIRECT]).unwrap();
        let wino = reg.uniform_assignment(&plan.graph, &[ids::CONV_WINOGRAD, ids::CONV_DIRECT]).unwrap();
        assert!(wino.iter().any(|(_, id)| id == ids::CONV_WINOGRAD));
        let x = kws9_features(seed + 100);
        let a = classify(&plan, &reg, &direct, &x).unwrap();
        let b = classify(&plan, &reg, &wino, &x).unwrap();
        assert_eq!(a.index, b.index);
        for (p, q) in a.probabilities.iter().zip(&b.probabilities) {
            assert!((p - q).abs() <= 1e-4 * p.abs().max(1e-3));
        }
    }
}

#[test]
fn wrong_feature_shape_rejected() {
    let g = build_network(&kws9(), 0).unwrap();
    let reg = Registry::with_defaults();
    let plan = compile(&g, &CompileOptions::default()).unwrap();
    let a = reg.default_assignment(&plan.graph).unwrap();
    let x = Tensor::zeros(TensorDesc::f32(1, 40, 31));
    assert!(matches!(classify(&plan, &reg, &a, &x), Err(Error::InputMismatch(_))));
}
