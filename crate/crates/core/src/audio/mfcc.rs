use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};
use crate::graph::TensorDesc;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub sample_rate: u32,
    /// Samples per analysis frame; also the FFT size.
    pub frame_len: usize,
    pub hop: usize,
    pub mel_bands: usize,
    pub coefficients: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    /// 128 ms frames every 32 ms at 16 kHz, 40 mel bands over 0-8 kHz,
    /// all 40 cepstral coefficients kept.
    fn default() -> Self {
        MfccConfig {
            sample_rate: 16_000,
            frame_len: 2048,
            hop: 512,
            mel_bands: 40,
            coefficients: 40,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Audio(format!("invalid MFCC config: {}", m)));
        if self.frame_len < 2 || self.hop == 0 || self.mel_bands == 0 {
            return bad("frame_len, hop and mel_bands must be positive");
        }
        if self.coefficients == 0 || self.coefficients > self.mel_bands {
            return bad("coefficients must be in 1..=mel_bands");
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if self.log_floor <= 0.0 {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// 1 + floor(samples / hop).
    pub fn frames_for(&self, samples: usize) -> usize {
        1 + samples / self.hop
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with unit peak on the HTK mel scale, evaluated at the
/// FFT bin frequencies. Row-major `bands × (frame_len/2 + 1)`.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<f64> {
    let bins = cfg.frame_len / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.mel_bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bands + 1) as f64))
        .collect();
    let mut fb = vec![0.0; cfg.mel_bands * bins];
    for m in 0..cfg.mel_bands {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.frame_len as f64;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            fb[m * bins + k] = up.min(down).max(0.0);
        }
    }
    fb
}

/// Precomputed window, filterbank, DCT basis and FFT plan.
pub struct Mfcc {
    cfg: MfccConfig,
    window: Vec<f64>,
    filterbank: Vec<f64>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Mfcc {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.check()?;
        let n = cfg.frame_len;
        // periodic Hann
        let window = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let m = cfg.mel_bands;
        let mut dct = vec![0.0; cfg.coefficients * m];
        for k in 0..cfg.coefficients {
            let s = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            for i in 0..m {
                dct[k * m + i] = s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * m) as f64).cos();
            }
        }
        Ok(Mfcc {
            window,
            filterbank: mel_filterbank(&cfg),
            dct,
            fft: FftPlanner::new().plan_fft_forward(n),
            cfg,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// `1 × coefficients × frames` tensor: rows are coefficients, columns are
    /// frames.
    pub fn compute(&self, samples: &[f32]) -> Tensor {
        let cfg = &self.cfg;
        let (n, pad) = (cfg.frame_len, cfg.frame_len / 2);
        let x: Vec<f64> = samples.iter().map(|v| *v as f64).collect();
        let padded = reflect_pad(&x, pad);
        let frames = cfg.frames_for(x.len());
        let bins = n / 2 + 1;
        let (bands, coeffs) = (cfg.mel_bands, cfg.coefficients);

        let mut out = vec![0.0f32; coeffs * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut power = vec![0.0; bins];
        let mut logmel = vec![0.0; bands];
        for t in 0..frames {
            let start = t * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (m, lm) in logmel.iter_mut().enumerate() {
                let row = &self.filterbank[m * bins..(m + 1) * bins];
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                *lm = e.max(cfg.log_floor).ln();
            }
            for k in 0..coeffs {
                let basis = &self.dct[k * bands..(k + 1) * bands];
                let c: f64 = basis.iter().zip(&logmel).map(|(a, b)| a * b).sum();
                out[k * frames + t] = c as f32;
            }
        }
        Tensor::new(TensorDesc::f32(1, coeffs, frames), out)
    }
}

/// Mirror padding that does not repeat the edge sample. Falls back to zero
/// padding where the signal is too short to mirror.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for j in (1..=pad).rev() {
        out.push(if j < n { x[j] } else { 0.0 });
    }
    out.extend_from_slice(x);
    for j in 1..=pad {
        out.push(if j < n { x[n - 1 - j] } else { 0.0 });
    }
    out
}

pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<Tensor> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "clip is {} Hz, config expects {} Hz",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    Ok(Mfcc::new(*cfg)?.compute(&clip.samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_mirrors_without_edge() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn mel_scale_round_trip_and_peaks() {
        for f in [0.0, 440.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 999.9855).abs() < 1e-3);
        let cfg = MfccConfig::default();
        let fb = mel_filterbank(&cfg);
        let bins = cfg.frame_len / 2 + 1;
        for m in 0..cfg.mel_bands {
            let peak = fb[m * bins..(m + 1) * bins].iter().cloned().fold(0.0, f64::max);
            assert!(peak > 0.5 && peak <= 1.0, "band {} peak {}", m, peak);
        }
    }

    #[test]
    fn one_second_gives_40_by_32() {
        let clip = AudioClip::new(vec![0.0; 16_000]);
        let f = mfcc(&clip, &MfccConfig::default()).unwrap();
        assert_eq!((f.desc.shape.c, f.desc.shape.h, f.desc.shape.w), (1, 40, 32));
        assert!(f.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dc_signal_columns_identical() {
        let clip = AudioClip::new(vec![0.25; 16_000]);
        let f = mfcc(&clip, &MfccConfig::default()).unwrap();
        for k in 0..40 {
            let row = &f.data[k * 32..(k + 1) * 32];
            assert!(row.iter().all(|v| (v - row[0]).abs() <= 1e-4 * row[0].abs().max(1.0)));
        }
    }

    #[test]
    fn doubling_amplitude_shifts_only_c0() {
        use rand::{Rng, SeedableRng};
        // broadband so no band sits at the log floor
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let sig: Vec<f32> = (0..16_000).map(|_| rng.random_range(-0.3..0.3)).collect();
        let a = mfcc(&AudioClip::new(sig.clone()), &MfccConfig::default()).unwrap();
        let b = mfcc(&AudioClip::new(sig.iter().map(|v| v * 2.0).collect()), &MfccConfig::default()).unwrap();
        assert_eq!(a.desc, b.desc);
        let shift = (40f64).sqrt() * 4f64.ln();
        for t in 0..32 {
            assert!(((b.data[t] - a.data[t]) as f64 - shift).abs() < 1e-3);
            for k in 1..40 {
                assert!((b.data[k * 32 + t] - a.data[k * 32 + t]).abs() < 1e-3);
            }
        }
    }
}
