//! Independent oracles shared by integration tests. None of these call into
//! the library's implementations of the quantities they check.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Straight-from-definition MFCC: explicit DFT, mel filters built from the
/// natural-log form of the HTK formula, DCT-II written out per coefficient.
/// Returns `coeffs × frames` row-major.
pub fn mfcc_oracle(samples: &[f32], sr: f64, n_fft: usize, hop: usize, bands: usize, coeffs: usize) -> Vec<f64> {
    let half = n_fft / 2;
    let n = samples.len();
    let at = |i: isize| -> f64 {
        let mut j = i;
        if j < 0 {
            j = -j;
        }
        if j >= n as isize {
            j = 2 * (n as isize - 1) - j;
        }
        samples[j as usize] as f64
    };
    let frames = 1 + n / hop;
    let cos_t: Vec<f64> = (0..n_fft).map(|i| (2.0 * PI * i as f64 / n_fft as f64).cos()).collect();
    let sin_t: Vec<f64> = (0..n_fft).map(|i| (2.0 * PI * i as f64 / n_fft as f64).sin()).collect();

    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let top = mel(sr / 2.0);
    let centers: Vec<f64> = (0..bands + 2).map(|i| inv(top * i as f64 / (bands + 1) as f64)).collect();

    let mut out = vec![0.0; coeffs * frames];
    for t in 0..frames {
        let start = (t * hop) as isize - half as isize;
        let x: Vec<f64> = (0..n_fft)
            .map(|i| {
                let w = 0.5 * (1.0 - cos_t[i]);
                w * at(start + i as isize)
            })
            .collect();
        let mut power = vec![0.0; half + 1];
        for (k, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let idx = (k * i) % n_fft;
                re += v * cos_t[idx];
                im -= v * sin_t[idx];
            }
            *p = re * re + im * im;
        }
        let mut logmel = vec![0.0; bands];
        for b in 0..bands {
            let (l, c, r) = (centers[b], centers[b + 1], centers[b + 2]);
            let mut e = 0.0;
            for (k, p) in power.iter().enumerate() {
                let f = k as f64 * sr / n_fft as f64;
                let w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                e += w * p;
            }
            logmel[b] = if e > 1e-10 { e.ln() } else { (1e-10f64).ln() };
        }
        for k in 0..coeffs {
            let mut s = 0.0;
            for (i, v) in logmel.iter().enumerate() {
                s += v * (PI / bands as f64 * (i as f64 + 0.5) * k as f64).cos();
            }
            let norm = if k == 0 { (1.0 / bands as f64).sqrt() } else { (2.0 / bands as f64).sqrt() };
            out[k * frames + t] = s * norm;
        }
    }
    out
}

/// Ten one-second 16 kHz clips covering tones, noise, transients and silence.
pub fn mfcc_clip_suite() -> Vec<(&'static str, Vec<f32>)> {
    use rand::{Rng, SeedableRng};
    let sr = 16_000.0;
    let t = |i: usize| i as f64 / sr;
    let tone = |f: f64, a: f64| -> Vec<f32> { (0..16_000).map(|i| (a * (2.0 * PI * f * t(i)).sin()) as f32).collect() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let noise: Vec<f32> = (0..16_000).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    vec![
        ("sine_440", tone(440.0, 0.5)),
        ("sine_3k", tone(3000.0, 0.2)),
        ("two_tone", tone(300.0, 0.3).iter().zip(tone(1200.0, 0.3)).map(|(a, b)| a + b).collect()),
        (
            "chirp",
            (0..16_000).map(|i| (0.4 * (2.0 * PI * (100.0 * t(i) + 1900.0 * t(i) * t(i))).sin()) as f32).collect(),
        ),
        ("noise", noise.clone()),
        (
            "am_noise",
            noise.iter().enumerate().map(|(i, v)| v * (0.5 + 0.5 * (2.0 * PI * 3.0 * t(i)).sin()) as f32).collect(),
        ),
        ("silence", vec![0.0; 16_000]),
        ("impulses", (0..16_000).map(|i| if i % 4000 == 100 { 0.9 } else { 0.0 }).collect()),
        ("square_250", (0..16_000).map(|i| if (i / 32) % 2 == 0 { 0.25 } else { -0.25 }).collect()),
        (
            "short_word",
            (0..16_000).map(|i| if (4000..9000).contains(&i) { (0.6 * (2.0 * PI * 700.0 * t(i)).sin()) as f32 } else { 0.0 }).collect(),
        ),
    ]
}
