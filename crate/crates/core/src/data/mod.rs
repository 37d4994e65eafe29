//! Labeled image datasets: folder ingestion, preprocessing, synthetic data.
//!
//! On disk a dataset is `root/<class_name>/<file>` where files are binary
//! PPM (`.ppm`) or single-record raw tensors (`.rt32`). Class indices follow
//! the lexicographic order of the class directory names.

mod ppm;
mod synth;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use ppm::{decode_ppm, encode_ppm};
pub use synth::{class_angle, synth_dataset, SynthSpec, DEFAULT_NOISE, MAX_SYNTH_CLASSES};

use crate::par;
use crate::tensor::{Shape, Tensor};
use crate::weights;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed PPM at byte {offset}: {reason}")]
    Ppm { offset: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },
    #[error("no class subdirectories under {}", .0.display())]
    NoClasses(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(1, H, W, 3)` image.
    pub image: Tensor<f32>,
    pub label: usize,
    pub source_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
}

/// Result of [`load_image_folder`].
#[derive(Clone, Debug)]
pub struct FolderLoad {
    pub dataset: Dataset,
    /// Files ignored because of an unsupported extension.
    pub skipped: Vec<PathBuf>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Applies [`preprocess`] to every sample.
    pub fn preprocessed(&self, target: (usize, usize), normalize: bool) -> Result<Dataset, DataError> {
        let images = par::map_range(self.samples.len(), |i| {
            preprocess(&self.samples[i].image, target, normalize)
        });
        let samples = self
            .samples
            .iter()
            .zip(images)
            .map(|(s, img)| {
                Ok(Sample {
                    image: img?,
                    label: s.label,
                    source_path: s.source_path.clone(),
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(Dataset {
            samples,
            class_names: self.class_names.clone(),
        })
    }

    /// Stratified split: from every class, `round(count · holdout)` samples
    /// chosen by a seeded shuffle go to the second set. Both keep the
    /// original relative order.
    pub fn split(&self, holdout: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..1.0).contains(&holdout) {
            return Err(DataError::Invalid(format!("holdout ratio {holdout} outside [0, 1)")));
        }
        let mut held = vec![false; self.len()];
        for class in 0..self.num_classes() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].label == class).collect();
            let take = (idx.len() as f64 * holdout).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            idx.shuffle(&mut rng);
            for &i in &idx[..take] {
                held[i] = true;
            }
        }
        let pick = |want: bool| Dataset {
            samples: self
                .samples
                .iter()
                .zip(&held)
                .filter(|(_, &h)| h == want)
                .map(|(s, _)| s.clone())
                .collect(),
            class_names: self.class_names.clone(),
        };
        Ok((pick(false), pick(true)))
    }
}

/// Decodes an image file by extension (`.ppm` or `.rt32`).
pub fn decode_image_file(path: &Path) -> Result<Tensor<f32>, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    let decoded = match extension(path).as_deref() {
        Some("ppm") => decode_ppm(&bytes),
        Some("rt32") => decode_rt32(&bytes),
        _ => Err(DataError::Invalid("unsupported image extension".into())),
    };
    decoded.map_err(|e| DataError::Decode {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

/// Decodes a raw tensor file holding a single `(1, H, W, 3)` record.
pub fn decode_rt32(bytes: &[u8]) -> Result<Tensor<f32>, DataError> {
    let mut records = weights::decode(bytes).map_err(|e| DataError::Invalid(e.to_string()))?;
    if records.len() != 1 {
        return Err(DataError::Invalid(format!(
            "raw tensor file must hold one record, found {}",
            records.len()
        )));
    }
    let (_, t) = records.pop().expect("one record");
    let s = t.shape();
    if s.n != 1 || s.c != 3 || s.h == 0 || s.w == 0 {
        return Err(DataError::Invalid(format!("raw tensor image must be (1,H,W,3), got {s}")));
    }
    Ok(t)
}

pub fn encode_rt32(image: &Tensor<f32>) -> Vec<u8> {
    weights::encode(&[("image", image)])
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let io_err = |source| DataError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        out.push(entry.map_err(io_err)?.path());
    }
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/<file>` into a dataset. Every subdirectory is a
/// class, even if it holds no images.
pub fn load_image_folder(root: &Path) -> Result<FolderLoad, DataError> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(DataError::NoClasses(root.to_owned()));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut files = Vec::new();
    let mut skipped = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        for path in sorted_entries(dir)? {
            if !path.is_file() {
                continue;
            }
            match extension(&path).as_deref() {
                Some("ppm" | "rt32") => files.push((path, label)),
                _ => skipped.push(path),
            }
        }
    }
    let images = par::map_range(files.len(), |i| decode_image_file(&files[i].0));
    let samples = files
        .into_iter()
        .zip(images)
        .map(|((path, label), image)| {
            Ok(Sample {
                image: image?,
                label,
                source_path: Some(path),
            })
        })
        .collect::<Result<_, DataError>>()?;
    Ok(FolderLoad {
        dataset: Dataset {
            samples,
            class_names,
        },
        skipped,
    })
}

/// Writes a dataset as `root/<class>/<class>_<index>.ppm`.
pub fn write_image_folder(ds: &Dataset, root: &Path) -> Result<Vec<PathBuf>, DataError> {
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| DataError::Io { path, source }
    };
    for name in &ds.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut counters = vec![0usize; ds.num_classes()];
    let mut written = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let name = &ds.class_names[s.label];
        let path = root
            .join(name)
            .join(format!("{name}_{:05}.ppm", counters[s.label]));
        counters[s.label] += 1;
        fs::write(&path, encode_ppm(&s.image)?).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Bilinear resize with aligned corners, then optional `(x - 0.5) / 0.5`.
pub fn preprocess(image: &Tensor<f32>, target: (usize, usize), normalize: bool) -> Result<Tensor<f32>, DataError> {
    let (th, tw) = target;
    let s = image.shape();
    if th == 0 || tw == 0 {
        return Err(DataError::Invalid(format!("target size {th}x{tw} must be non-zero")));
    }
    if s.n != 1 || s.h == 0 || s.w == 0 {
        return Err(DataError::Invalid(format!("cannot preprocess image of shape {s}")));
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let out = Tensor::from_fn(Shape::new(1, th, tw, s.c), |[_, y, x, c]| {
        let (y0, y1, fy) = coord(y, s.h, th);
        let (x0, x1, fx) = coord(x, s.w, tw);
        let p = |yy, xx| image.get(0, yy, xx, c) as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        let v = top * (1.0 - fy) + bottom * fy;
        let v = if normalize { (v - 0.5) / 0.5 } else { v };
        v as f32
    });
    Ok(out)
}
