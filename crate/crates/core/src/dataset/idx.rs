use std::fs;
use std::io::Read;
use std::io::Write;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{LabeledSet, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Real;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label file pair; gzip-compressed files are detected by
/// their magic bytes. Pixels are scaled from `0..=255` to `[0, 1]`.
pub fn load_idx<T: Real>(images_path: &Path, labels_path: &Path) -> Result<LabeledSet<T>> {
    let images = read_maybe_gz(images_path)?;
    let labels = read_maybe_gz(labels_path)?;

    let fmt = |path: &Path, offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };

    let magic = be_u32(&images, 0).ok_or_else(|| fmt(images_path, images.len(), "truncated header".into()))?;
    if magic != IMAGES_MAGIC {
        return Err(fmt(images_path, 0, format!("bad image magic {magic:#010x}")));
    }
    let header = (be_u32(&images, 4), be_u32(&images, 8), be_u32(&images, 12));
    let (count, rows, cols) = match header {
        (Some(c), Some(r), Some(k)) => (c as usize, r as usize, k as usize),
        _ => return Err(fmt(images_path, images.len(), "truncated header".into())),
    };
    let dim = rows * cols;
    let needed = 16 + count * dim;
    if images.len() < needed {
        return Err(fmt(
            images_path,
            images.len(),
            format!("truncated pixel data: {count} images of {rows}x{cols} need {needed} bytes"),
        ));
    }

    let magic = be_u32(&labels, 0).ok_or_else(|| fmt(labels_path, labels.len(), "truncated header".into()))?;
    if magic != LABELS_MAGIC {
        return Err(fmt(labels_path, 0, format!("bad label magic {magic:#010x}")));
    }
    let label_count = be_u32(&labels, 4).ok_or_else(|| fmt(labels_path, labels.len(), "truncated header".into()))? as usize;
    if label_count != count {
        return Err(fmt(
            labels_path,
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }
    if labels.len() < 8 + count {
        return Err(fmt(labels_path, labels.len(), "truncated label data".into()));
    }

    let max = T::lit(255.0);
    let features = images[16..needed].iter().map(|&b| T::from_u8(b).unwrap() / max).collect();
    let labels = labels[8..8 + count].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= super::NUM_CLASSES) {
        return Err(fmt(labels_path, 8 + pos, format!("label {} out of range", labels[pos])));
    }
    LabeledSet::new(dim, features, labels, Provenance::Mnist)
}

/// Writes `set` as an IDX pair (`rows x cols` images, pixels rounded to bytes).
/// Paths ending in `.gz` are gzip-compressed.
pub fn write_idx<T: Real>(set: &LabeledSet<T>, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    if rows * cols != set.dim() {
        return Err(Error::Shape(format!("{rows}x{cols} images for dimension {}", set.dim())));
    }
    let mut img = Vec::with_capacity(16 + set.len() * set.dim());
    for v in [IMAGES_MAGIC, set.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for k in 0..set.len() {
        img.extend(set.features(k).iter().map(|x| (x.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let mut lab = Vec::with_capacity(8 + set.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(set.len() as u32).to_be_bytes());
    lab.extend_from_slice(set.labels());
    write_maybe_gz(images_path, &img)?;
    write_maybe_gz(labels_path, &lab)
}

/// Locates the standard MNIST file names inside a directory, preferring
/// uncompressed files when both variants exist.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Result<Self> {
        let find = |stem: &str| -> Result<PathBuf> {
            let plain = dir.join(stem);
            if plain.is_file() {
                return Ok(plain);
            }
            let gz = dir.join(format!("{stem}.gz"));
            if gz.is_file() {
                return Ok(gz);
            }
            Err(Error::Data(format!("missing {stem}[.gz] in {}", dir.display())))
        };
        Ok(Self {
            train_images: find("train-images-idx3-ubyte")?,
            train_labels: find("train-labels-idx1-ubyte")?,
            test_images: find("t10k-images-idx3-ubyte")?,
            test_labels: find("t10k-labels-idx1-ubyte")?,
        })
    }

    pub fn load_train<T: Real>(&self) -> Result<LabeledSet<T>> {
        load_idx(&self.train_images, &self.train_labels)
    }

    pub fn load_test<T: Real>(&self) -> Result<LabeledSet<T>> {
        load_idx(&self.test_images, &self.test_labels)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: out.len() as u64,
                message: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let data = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, data).map_err(|e| Error::io(path, e))
}
