//! Audio ingestion, MFCC features, dataset partitioning and keyword
//! classification.

mod dataset;
mod mfcc;

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::Serialize;

pub use dataset::{
    extract_features, import_dataset, read_feature_file, write_feature_file, write_synthetic_dataset, DatasetEntry, DatasetManifest,
    Partition, Split,
};
pub use mfcc::{hz_to_mel, mel_filterbank, mel_to_hz, mfcc, Mfcc, MfccConfig};

use crate::error::{Error, Result, WavError};
use crate::kernels::{Assignment, Executor, Registry};
use crate::passes::ExecutablePlan;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
/// One second at [`SAMPLE_RATE`].
pub const CLIP_SAMPLES: usize = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    /// Mono, in [-1, 1].
    pub samples: Vec<f32>,
}

impl AudioClip {
    /// A 16 kHz clip.
    pub fn new(samples: Vec<f32>) -> Self {
        AudioClip {
            sample_rate: SAMPLE_RATE,
            samples,
        }
    }
}

fn wav_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            WavError::Truncated(io.to_string()).into()
        }
        hound::Error::IoError(io) => WavError::Truncated(io.to_string()).into(),
        hound::Error::FormatError(m) => WavError::Format(m.to_string()).into(),
        other => WavError::Format(other.to_string()).into(),
    }
}

/// Decodes a 16-bit PCM mono 16 kHz WAV stream. Samples are scaled by
/// 1/32768; clips under one second are zero-padded to exactly one second,
/// longer ones rejected.
pub fn read_wav<R: Read>(reader: R) -> Result<AudioClip> {
    let mut r = hound::WavReader::new(reader).map_err(wav_error)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(WavError::Channels(spec.channels).into());
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(WavError::Format(format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample)).into());
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(WavError::SampleRate(spec.sample_rate).into());
    }
    let declared = r.len() as usize;
    if declared > CLIP_SAMPLES {
        return Err(WavError::TooLong(declared).into());
    }
    let mut samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(wav_error)?;
    if samples.len() != declared {
        return Err(WavError::Truncated(format!("{} of {} samples present", samples.len(), declared)).into());
    }
    samples.resize(CLIP_SAMPLES, 0.0);
    Ok(AudioClip::new(samples))
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_wav(BufReader::new(f))
}

/// Writes 16-bit PCM mono; samples are scaled by 32768 and saturated.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_error)?;
    for s in &clip.samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        w.write_sample(v).map_err(wav_error)?;
    }
    w.finalize().map_err(wav_error)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub index: usize,
    pub label: String,
    pub probabilities: Vec<f32>,
}

fn check_features(plan: &ExecutablePlan, features: &Tensor) -> Result<()> {
    if features.desc.shape != plan.graph.input.shape {
        return Err(Error::InputMismatch(format!(
            "features are {}, network expects {}",
            features.desc.shape, plan.graph.input.shape
        )));
    }
    Ok(())
}

fn label_of(plan: &ExecutablePlan, i: usize) -> String {
    plan.graph.labels.get(i).cloned().unwrap_or_else(|| i.to_string())
}

/// Runs `features` through an executor built from a bound plan and reports
/// the most probable class.
pub fn classify_with(exec: &mut Executor, plan: &ExecutablePlan, features: &Tensor) -> Result<Classification> {
    check_features(plan, features)?;
    let out = exec.run(features)?;
    let index = out.argmax();
    Ok(Classification {
        index,
        label: label_of(plan, index),
        probabilities: out.data,
    })
}

/// Binds `plan` to `assignment` and classifies one feature tensor.
pub fn classify(
    plan: &ExecutablePlan,
    registry: &Registry,
    assignment: &Assignment,
    features: &Tensor,
) -> Result<Classification> {
    check_features(plan, features)?;
    let bound = plan.bind(registry, assignment)?;
    let mut exec = Executor::new(&bound, registry, assignment)?;
    classify_with(&mut exec, &bound, features)
}
