use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{load_wav, write_wav, AudioClip, Mfcc, MfccConfig, CLIP_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::graph::{read_container_file, write_container_file};
use crate::graph::{TensorDesc, WeightTensor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        })
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            _ => Err(Error::Dataset(format!("unknown partition `{}`", s))),
        }
    }
}

/// Partition fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Split {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl Split {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Split { train, validation, test }
    }

    pub fn check(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Dataset(format!(
                "fractions {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.validation, self.test
            )));
        }
        Ok(())
    }

    /// Train and validation counts are rounded; test takes the remainder.
    fn counts(&self, n: usize) -> (usize, usize) {
        let train = ((n as f64 * self.train).round() as usize).min(n);
        let validation = ((n as f64 * self.validation).round() as usize).min(n - train);
        (train, validation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Relative to the dataset root.
    pub path: PathBuf,
    /// `label/file_name`, unique within a dataset.
    pub id: String,
    pub label: String,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Class names in index order.
    pub labels: Vec<String>,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.partition == p)
    }

    pub fn count(&self, p: Partition) -> usize {
        self.partition(p).count()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// One record per sample with columns `path,id,label,partition`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::Dataset(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Dataset(e.to_string()))
    }

    /// Labels are recovered in order of first appearance.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for rec in r.deserialize() {
            let e: DatasetEntry = rec.map_err(|e| Error::Dataset(e.to_string()))?;
            entries.push(e);
        }
        let mut labels: Vec<String> = Vec::new();
        for e in &entries {
            if !labels.contains(&e.label) {
                labels.push(e.label.clone());
            }
        }
        Ok(DatasetManifest { labels, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

fn split_key(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

fn is_wav(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Scans `root/<label>/*.wav` and assigns every file to exactly one
/// partition. Within each class, files are ordered by a SHA-256 of the seed
/// and sample id, so the split only depends on names and seed.
pub fn import_dataset(root: &Path, split: Split, seed: u64) -> Result<DatasetManifest> {
    split.check()?;
    let mut labels = Vec::new();
    let mut entries = Vec::new();
    for class_dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = class_dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut files: Vec<(String, PathBuf)> = sorted_dir(&class_dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_wav(p))
            .map(|p| {
                let file = p.file_name().unwrap().to_string_lossy().into_owned();
                (format!("{}/{}", label, file), PathBuf::from(&label).join(file))
            })
            .collect();
        if files.is_empty() {
            return Err(Error::Dataset(format!("class directory `{}` has no WAV files", label)));
        }
        files.sort_by_cached_key(|(id, _)| split_key(seed, id));
        let (n_train, n_val) = split.counts(files.len());
        for (i, (id, path)) in files.into_iter().enumerate() {
            let partition = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Validation
            } else {
                Partition::Test
            };
            entries.push(DatasetEntry {
                path,
                id,
                label: label.clone(),
                partition,
            });
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Dataset(format!("no class directories under {}", root.display())));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest { labels, entries })
}

/// MFCC features for the selected entries, keyed by sample id. Clips are
/// processed on all available cores; output order follows `entries`.
pub fn extract_features<'a>(
    root: &Path,
    entries: impl IntoIterator<Item = &'a DatasetEntry>,
    cfg: &MfccConfig,
) -> Result<Vec<(String, Tensor)>> {
    let entries: Vec<&DatasetEntry> = entries.into_iter().collect();
    let mfcc = Mfcc::new(*cfg)?;
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = entries.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<(String, Tensor)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = entries
            .chunks(chunk)
            .map(|part| {
                let mfcc = &mfcc;
                s.spawn(move || {
                    part.iter()
                        .map(|e| {
                            let clip = load_wav(&root.join(&e.path))?;
                            Ok((e.id.clone(), mfcc.compute(&clip.samples)))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("feature worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(entries.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Stores feature tensors in the weight container format, one named tensor
/// of dims `[c, h, w]` per sample.
pub fn write_feature_file(path: &Path, features: &[(String, Tensor)]) -> Result<()> {
    let tensors: Vec<WeightTensor> = features
        .iter()
        .map(|(id, t)| {
            let s = t.to_channel_major();
            WeightTensor::f32(id.clone(), vec![s.desc.shape.c, s.desc.shape.h, s.desc.shape.w], s.data)
        })
        .collect();
    write_container_file(path, &tensors)
}

pub fn read_feature_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_container_file(path)?
        .into_iter()
        .map(|w| {
            let (c, h, wd) = match w.dims[..] {
                [c, h, wd] => (c, h, wd),
                _ => return Err(Error::Dataset(format!("feature `{}` has dims {:?}", w.name, w.dims))),
            };
            let data = w
                .as_f32()
                .ok_or_else(|| Error::Dataset(format!("feature `{}` is not f32", w.name)))?
                .to_vec();
            Ok((w.name, Tensor::new(TensorDesc::f32(c, h, wd), data)))
        })
        .collect()
}

/// Writes `per_class` clips for each label under `root/<label>/`. Each class
/// is a noisy tone at its own pitch with random phase, onset and length, so
/// the classes are separable from MFCCs alone.
pub fn write_synthetic_dataset(root: &Path, labels: &[&str], per_class: usize, seed: u64) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for (ci, label) in labels.iter().enumerate() {
        let dir = root.join(label);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let freq = 200.0 * 1.35f32.powi(ci as i32);
        for i in 0..per_class {
            let len = rng.random_range(8_000..=CLIP_SAMPLES);
            let onset = rng.random_range(0..=(CLIP_SAMPLES - len) / 2);
            let phase = rng.random_range(0.0..std::f32::consts::TAU);
            let samples: Vec<f32> = (0..onset + len)
                .map(|t| {
                    let noise = rng.random_range(-0.05f32..0.05);
                    if t < onset {
                        noise
                    } else {
                        let x = (t - onset) as f32 / SAMPLE_RATE as f32;
                        0.4 * (std::f32::consts::TAU * freq * x + phase).sin() + noise
                    }
                })
                .collect();
            write_wav(&dir.join(format!("{}_{:04}.wav", label, i)), &AudioClip::new(samples))?;
        }
    }
    Ok(())
}
