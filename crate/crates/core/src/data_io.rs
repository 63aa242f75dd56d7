//! Dataset ingestion: IDX-format reader (gzip accepted transparently),
//! bit-plane input preparation, +-1 one-vs-rest target encoding, and a
//! synthetic separable dataset for fast tests.

use std::fs::File;
use std::io::Read as _;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::bitkernel::BitPlanes8;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Immutable labelled byte-image dataset. Images are row-major `n x dim`
/// with pixel values in [0, 255]; labels index into `[0, classes)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    /// Borrow a contiguous range of examples as a sub-dataset view copy.
    pub fn slice(&self, start: usize, len: usize) -> Dataset {
        Dataset {
            images: self.images[start * self.dim..(start + len) * self.dim].to_vec(),
            labels: self.labels[start..start + len].to_vec(),
            n: len,
            dim: self.dim,
            classes: self.classes,
        }
    }
}

/// Read a whole file, decompressing if it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], off: usize) -> Result<u32> {
    if buf.len() < off + 4 {
        return Err(Error::Truncated {
            needed: off + 4,
            got: buf.len(),
        });
    }
    Ok(u32::from_be_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]]))
}

/// Parse IDX image and label files and pair them into a dataset.
/// Magic mismatch, truncated payload and image/label count mismatch are
/// reported as distinct errors; nothing is silently truncated.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_maybe_gz(images_path)?;
    let magic = be_u32(&img, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            got: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n = be_u32(&img, 4)? as usize;
    let rows = be_u32(&img, 8)? as usize;
    let cols = be_u32(&img, 12)? as usize;
    let dim = rows * cols;
    let needed = 16 + n * dim;
    if img.len() < needed {
        return Err(Error::Truncated {
            needed,
            got: img.len(),
        });
    }

    let lab = read_maybe_gz(labels_path)?;
    let magic = be_u32(&lab, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxMagic {
            got: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n_lab = be_u32(&lab, 4)? as usize;
    if n_lab != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_lab,
        });
    }
    let needed = 8 + n;
    if lab.len() < needed {
        return Err(Error::Truncated {
            needed,
            got: lab.len(),
        });
    }

    let labels = lab[8..8 + n].to_vec();
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(1);
    for &l in labels.iter() {
        if (l as usize) >= classes {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                num_classes: classes,
            });
        }
    }
    Ok(Dataset {
        images: img[16..16 + n * dim].to_vec(),
        labels,
        n,
        dim,
        classes,
    })
}

/// Load the standard MNIST file quartet from one directory, accepting
/// either plain or `.gz` file names.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let find = |base: &str| -> std::path::PathBuf {
        let plain = dir.join(base);
        if plain.exists() {
            plain
        } else {
            dir.join(format!("{base}.gz"))
        }
    };
    let mut train = load_idx(
        &find("train-images-idx3-ubyte"),
        &find("train-labels-idx1-ubyte"),
    )?;
    let mut test = load_idx(
        &find("t10k-images-idx3-ubyte"),
        &find("t10k-labels-idx1-ubyte"),
    )?;
    train.classes = 10;
    test.classes = 10;
    Ok((train, test))
}

/// Decompose a batch of byte rows into eight LSB-first bit planes.
pub fn to_bitplanes(rows: usize, cols: usize, bytes: &[u8]) -> Result<BitPlanes8> {
    BitPlanes8::from_bytes(rows, cols, bytes)
}

/// One-vs-rest +-1 targets: +1 at the true class, -1 elsewhere.
pub fn encode_targets<T: Real>(labels: &[u8], num_classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut t = Tensor::full(labels.len(), num_classes, -T::one())?;
    for (i, &l) in labels.iter().enumerate() {
        if (l as usize) >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                num_classes,
            });
        }
        t.set(i, l as usize, T::one());
    }
    Ok(t)
}

/// Synthetic dataset: one Gaussian blob per class with centers spread far
/// enough apart that a linear classifier separates them exactly, quantized
/// to bytes. Class counts are balanced within one example.
pub fn synth_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || dim == 0 || n < classes {
        return Err(Error::InvalidDims { rows: n, cols: dim });
    }
    if classes > 256 {
        return Err(Error::LabelOutOfRange {
            label: classes,
            num_classes: 256,
        });
    }
    let mut rng = Rng::new(seed).stream(0x51);
    let mut images = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    // center for class c: coordinate j gets 200 when j mod classes == c,
    // else 55; +-20 of uniform noise keeps blobs separated by >120
    for i in 0..n {
        let c = i % classes;
        labels.push(c as u8);
        for j in 0..dim {
            let base = if j % classes == c { 200.0 } else { 55.0 };
            let v = base + rng.uniform(-20.0, 20.0);
            images.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Dataset {
        images,
        labels,
        n,
        dim,
        classes,
    })
}
