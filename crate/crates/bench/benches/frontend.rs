use criterion::{criterion_group, criterion_main, Criterion};
use edgenn::audio::{Mfcc, MfccConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn mfcc_one_second(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clip: Vec<f32> = (0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let m = Mfcc::new(MfccConfig::default()).unwrap();
    c.bench_function("mfcc_40x32", |b| b.iter(|| black_box(m.compute(&clip))));
}

criterion_group!(benches, mfcc_one_second);
criterion_main!(benches);
