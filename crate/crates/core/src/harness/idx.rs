//! IDX image/label files.
//!
//! Header: two zero bytes, a type byte (`0x08`, unsigned byte), a dimension
//! count byte, then one big-endian `u32` extent per dimension. Image files use
//! magic `0x00000803` (count × rows × cols), label files `0x00000801` (count).
//! The payload is the product of the extents in bytes, nothing more.
//!
//! Rejected malformations, each reported with the byte offset where it was
//! detected:
//!
//! 1. wrong magic number,
//! 2. header shorter than its declared dimensions,
//! 3. payload shorter than the header's extents,
//! 4. bytes left over after the payload,
//! 5. a zero extent,
//! 6. image and label files disagreeing on the sample count.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::data::{stratified_split, Dataset, Provenance};
use super::HarnessError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("byte 0: magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("byte {offset}: header truncated, needs {needed} bytes, file has {available}")]
    TruncatedHeader { offset: usize, needed: usize, available: usize },
    #[error("byte {offset}: payload truncated, needs {needed} bytes, file has {available}")]
    TruncatedPayload { offset: usize, needed: usize, available: usize },
    #[error("byte {offset}: {extra} unexpected trailing bytes after payload")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("byte {offset}: dimension {index} has extent 0")]
    ZeroExtent { offset: usize, index: usize },
    #[error("image file holds {images} samples, label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
}

/// Parsed unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::TruncatedHeader { offset: bytes.len(), needed: 4, available: bytes.len() });
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(IdxError::BadMagic { found: magic, expected: expected_magic });
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(IdxError::TruncatedHeader { offset: bytes.len(), needed: header, available: bytes.len() });
    }
    let mut dims = Vec::with_capacity(ndim);
    for k in 0..ndim {
        let off = 4 + 4 * k;
        let d = u32::from_be_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
        if d == 0 {
            return Err(IdxError::ZeroExtent { offset: off, index: k });
        }
        dims.push(d);
    }
    let payload: usize = dims.iter().product();
    let needed = header + payload;
    if bytes.len() < needed {
        return Err(IdxError::TruncatedPayload { offset: bytes.len(), needed, available: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(IdxError::TrailingBytes { offset: needed, extra: bytes.len() - needed });
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}

/// Serializes an unsigned-byte IDX array (used for fixtures and round trips).
pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Builds a dataset from in-memory image and label files.
///
/// Pixels are scaled to `[0, 1]`, split 80/20 per class, and standardized
/// with per-feature mean and standard deviation of the training split (a
/// constant feature keeps unit scale).
pub fn dataset_from_idx(
    images: &[u8],
    labels: &[u8],
    seed: u64,
    provenance: Provenance,
) -> Result<Dataset, HarnessError> {
    let img = parse_idx(images, IMAGES_MAGIC)?;
    let lab = parse_idx(labels, LABELS_MAGIC)?;
    let count = img.dims[0];
    if count != lab.dims[0] {
        return Err(IdxError::CountMismatch { images: count, labels: lab.dims[0] }.into());
    }
    let n_features: usize = img.dims[1..].iter().product();
    let y: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    let classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = stratified_split(&y, classes, &mut rng);

    let mut x: Vec<f64> = img.data.iter().map(|&p| p as f64 / 255.0).collect();
    let mut mean = vec![0.0; n_features];
    let mut var = vec![0.0; n_features];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(&x[i * n_features..(i + 1) * n_features]) {
            *m += v;
        }
    }
    let nt = train.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= nt);
    for &i in &train {
        for ((s, v), m) in var.iter_mut().zip(&x[i * n_features..(i + 1) * n_features]).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / nt).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    for row in x.chunks_mut(n_features) {
        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
            *v = (*v - m) / s;
        }
    }
    Dataset::new(x, n_features, y, classes, train, test, provenance)
}

/// Reads an image/label file pair from disk.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, seed: u64) -> Result<Dataset, HarnessError> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let read = |p: &Path| fs::read(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())));
    let (ib, lb) = (read(ip)?, read(lp)?);
    let mut h = Sha256::new();
    h.update(&ib);
    h.update(&lb);
    let sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    dataset_from_idx(
        &ib,
        &lb,
        seed,
        Provenance::Files { images: ip.display().to_string(), labels: lp.display().to_string(), sha256 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> (Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..n * 4).map(|i| (i * 37 % 256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        (encode_idx(IMAGES_MAGIC, &[n, 2, 2], &pixels), encode_idx(LABELS_MAGIC, &[n], &labels))
    }

    fn provenance() -> Provenance {
        Provenance::Files { images: "mem".into(), labels: "mem".into(), sha256: String::new() }
    }

    #[test]
    fn well_formed_pair() {
        let (i, l) = fixture(30);
        let d = dataset_from_idx(&i, &l, 0, provenance()).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(d.n_features(), 4);
        assert_eq!(d.classes(), 3);
    }

    #[test]
    fn train_features_are_standardized() {
        let (i, l) = fixture(50);
        let d = dataset_from_idx(&i, &l, 1, provenance()).unwrap();
        for f in 0..d.n_features() {
            let mean: f64 = d.train().iter().map(|&s| d.row(s)[f]).sum::<f64>() / d.train().len() as f64;
            assert!(mean.abs() < 1e-9, "feature {f} mean {mean}");
        }
    }

    #[test]
    fn wrong_magic() {
        let (i, l) = fixture(5);
        assert_eq!(
            parse_idx(&l, IMAGES_MAGIC),
            Err(IdxError::BadMagic { found: LABELS_MAGIC, expected: IMAGES_MAGIC })
        );
        assert!(matches!(
            dataset_from_idx(&l, &i, 0, provenance()),
            Err(HarnessError::Idx(IdxError::BadMagic { .. }))
        ));
    }
}
