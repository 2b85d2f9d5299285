// SPDX-License-Identifier: Apache-2.0

//! IDX image/label files as distributed for MNIST, optionally gzipped.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::labels::Label;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Pixel scaling applied on ingest: `(p / 255 - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: f32,
    pub std: f32,
}

impl Normalization {
    pub const MNIST: Normalization = Normalization {
        mean: 0.1307,
        std: 0.3081,
    };
    pub const NONE: Normalization = Normalization { mean: 0.0, std: 1.0 };

    pub fn apply(&self, pixel: u8) -> f32 {
        (pixel as f32 / 255.0 - self.mean) / self.std
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("bad gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], words: usize, path: &Path) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::format(path, "truncated file: header incomplete"));
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Raw images: `(count, rows, cols, pixels)`.
pub fn read_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let h = header(&bytes, 4, path)?;
    if h[0] != IMAGES_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic number {:#010x} for images", h[0]),
        ));
    }
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let body = &bytes[16..];
    if body.len() < n * rows * cols {
        return Err(Error::format(
            path,
            format!(
                "truncated file: {n} images of {rows}x{cols} need {} bytes, found {}",
                n * rows * cols,
                body.len()
            ),
        ));
    }
    Ok((n, rows, cols, body[..n * rows * cols].to_vec()))
}

/// Raw 0-based class indices.
pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let h = header(&bytes, 2, path)?;
    if h[0] != LABELS_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic number {:#010x} for labels", h[0]),
        ));
    }
    let n = h[1] as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            path,
            format!("truncated file: {n} labels, found {}", body.len()),
        ));
    }
    Ok(body[..n].to_vec())
}

pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    classes: usize,
    norm: Normalization,
    split: Split,
) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_images(images)?;
    let raw_labels = read_labels(labels)?;
    if raw_labels.len() != n {
        return Err(Error::format(
            labels,
            format!("count mismatch: {} labels for {n} images", raw_labels.len()),
        ));
    }
    let labels = raw_labels
        .iter()
        .map(|&l| Label::new(l as u32 + 1, classes))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(labels, e.to_string()))?;
    let features = pixels.iter().map(|&p| norm.apply(p)).collect();
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, split, classes, vec![1, rows, cols], features, labels)
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    ))
}

/// Loads `train-*` or `t10k-*` IDX files (plain or `.gz`) from `dir`.
pub fn load_mnist_dir(dir: &Path, split: Split, norm: Normalization) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = find(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let mut ds = load_idx_dataset(&images, &labels, 10, norm, split)?;
    ds.name = format!("mnist-{prefix}");
    Ok(ds)
}

/// Encodes a dataset of `u8` pixels and 0-based labels as IDX byte streams.
pub fn encode_idx(rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, labels.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for word in [LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&word.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn round_trips_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..3 * 4).map(|i| (i * 20) as u8).collect();
        let (img, lab) = encode_idx(2, 2, &pixels, &[0, 9, 4]);
        let ip = write(dir.path(), "i", &img);
        let lp = write(dir.path(), "l", &lab);
        let ds = load_idx_dataset(&ip, &lp, 10, Normalization::NONE, Split::Train).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_shape(), &[1, 2, 2]);
        assert_eq!(ds.labels().iter().map(|l| l.get()).collect::<Vec<_>>(), vec![1, 10, 5]);
        assert!((ds.features(1)[0] - 80.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn empty_file_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "empty", &[]);
        let err = read_images(&p).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(read_labels(&p).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = encode_idx(1, 1, &[0], &[0]);
        let p = write(dir.path(), "swapped", &img);
        assert!(read_labels(&p).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = encode_idx(2, 2, &[0; 9 * 4], &[0; 9]);
        let (_, lab) = encode_idx(2, 2, &[], &[1; 10]);
        let ip = write(dir.path(), "i", &img);
        let lp = write(dir.path(), "l", &lab);
        let err = load_idx_dataset(&ip, &lp, 10, Normalization::NONE, Split::Train).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn truncated_pixel_body_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mut img, _) = encode_idx(2, 2, &[0; 8], &[0, 0]);
        img.truncate(img.len() - 1);
        let p = write(dir.path(), "short", &img);
        assert!(read_images(&p).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn gzip_is_detected_by_content() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = encode_idx(1, 2, &[10, 20], &[3]);
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&img).unwrap();
        let ip = write(dir.path(), "train-images-idx3-ubyte.gz", &enc.finish().unwrap());
        write(dir.path(), "train-labels-idx1-ubyte", &lab);
        let ds = load_mnist_dir(dir.path(), Split::Train, Normalization::NONE).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ip.exists());
    }
}
