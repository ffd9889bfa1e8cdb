//! Classification datasets: a seeded Gaussian mixture and raw IDX files.
//!
//! IDX layout (all integers big-endian):
//!
//! ```text
//! bytes 0-1  zero
//! byte  2    element type, only 0x08 (unsigned byte) is accepted
//! byte  3    number of dimensions D
//! next 4*D   dimension sizes as u32
//! rest       row-major payload, one byte per element
//! ```
//!
//! Image files have D >= 2 (count, then the per-item shape, flattened);
//! label files have D = 1. Pixels are scaled to `[0, 1]` by dividing by 255.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    IdxFiles,
}

#[derive(Debug, Clone)]
pub struct ClassifDataset {
    /// One example per row.
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub source: DataSource,
}

impl ClassifDataset {
    pub fn new(
        inputs: DMatrix<f64>,
        labels: Vec<usize>,
        classes: usize,
        source: DataSource,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::OutOfRange("dataset needs at least one example".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                got: labels.len(),
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::OutOfRange(format!("label {l} not below {classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows `idx` as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> ClassifDataset {
        let d = self.dim();
        let inputs = DMatrix::from_fn(idx.len(), d, |r, c| self.inputs[(idx[r], c)]);
        ClassifDataset {
            inputs,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            source: self.source,
        }
    }
}

/// Gaussian mixture: class means drawn once from `N(0, separation^2 I_d)`,
/// examples `mean_y + N(0, noise^2 I_d)` with balanced labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    pub d: usize,
    pub classes: usize,
    pub separation: f64,
    pub noise: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            d: 32,
            classes: 4,
            separation: 1.0,
            noise: 1.5,
        }
    }
}

/// Draws a train and a test split from one mixture. The class means come
/// from stream `(seed, 0)`, training rows from `(seed, 1)`, test rows from
/// `(seed, 2)`.
pub fn gaussian_mixture(
    spec: &MixtureSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(ClassifDataset, ClassifDataset)> {
    if spec.d == 0 || spec.classes < 2 || n_train == 0 || n_test == 0 {
        return Err(Error::OutOfRange(
            "mixture needs d >= 1, at least two classes, and nonempty splits".into(),
        ));
    }
    let mut r = rng::stream(seed, 0);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| rng::normal_vec(&mut r, spec.d, spec.separation))
        .collect();
    let draw = |n: usize, stream: u64| {
        let mut r = rng::stream(seed, stream);
        let labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
        let mut inputs = DMatrix::zeros(n, spec.d);
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..spec.d {
                inputs[(i, j)] = means[l][j] + spec.noise * rng::normal(&mut r);
            }
        }
        ClassifDataset::new(inputs, labels, spec.classes, DataSource::Synthetic)
    };
    Ok((draw(n_train, 1)?, draw(n_test, 2)?))
}

fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("missing IDX magic number".into()));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Format(format!(
            "unsupported IDX element type 0x{:02x} (only unsigned byte)",
            bytes[2]
        )));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|k| {
            let o = 4 + 4 * k;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let total: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != total {
        return Err(Error::Format(format!(
            "IDX payload has {} bytes, header declares {total}",
            payload.len()
        )));
    }
    Ok((dims, payload))
}

/// Parses an image file and a label file already in memory.
pub fn idx_from_bytes(images: &[u8], labels: &[u8], classes: usize) -> Result<ClassifDataset> {
    let (idims, ipix) = parse_idx(images)?;
    let (ldims, lbytes) = parse_idx(labels)?;
    if idims.len() < 2 {
        return Err(Error::Format("image file needs at least two dimensions".into()));
    }
    if ldims.len() != 1 {
        return Err(Error::Format("label file must be one-dimensional".into()));
    }
    let n = idims[0];
    if ldims[0] != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ldims[0],
        });
    }
    let d: usize = idims[1..].iter().product();
    let inputs = DMatrix::from_fn(n, d, |i, j| ipix[i * d + j] as f64 / 255.0);
    let labels = lbytes.iter().map(|&b| b as usize).collect();
    ClassifDataset::new(inputs, labels, classes, DataSource::IdxFiles)
}

pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<ClassifDataset> {
    let ib = std::fs::read(images)?;
    let lb = std::fs::read(labels)?;
    idx_from_bytes(&ib, &lb, classes)
}

#[cfg(test)]
pub(crate) fn encode_idx(dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}
