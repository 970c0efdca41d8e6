//! Reader for the IDX format used by MNIST-style image archives.
//!
//! Images: big-endian magic `0x00000803`, count, rows, cols, then one
//! byte per pixel. Labels: magic `0x00000801`, count, one byte per label.
//! Pixels are scaled to `[0, 1]`.

use std::path::Path;

use crate::datagen::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or(Error::Truncated {
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != want {
        return Err(Error::Format(format!("{what} file has magic {magic:#010x}, expected {want:#010x}")));
    }
    Ok(())
}

/// Parses in-memory image and label files. `class_count` defaults to one
/// more than the largest label.
pub fn parse_idx(images: &[u8], labels: &[u8], class_count: Option<usize>) -> Result<LabeledDataset> {
    check_magic(images, IMAGE_MAGIC, "image")?;
    check_magic(labels, LABEL_MAGIC, "label")?;
    let n_img = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let n_lab = be_u32(labels, 4)? as usize;
    if n_img != n_lab {
        return Err(Error::CountMismatch {
            images: n_img,
            labels: n_lab,
        });
    }
    let dim = rows * cols;
    let need_img = 16 + n_img * dim;
    if images.len() < need_img {
        return Err(Error::Truncated {
            expected: need_img,
            found: images.len(),
        });
    }
    if labels.len() < 8 + n_lab {
        return Err(Error::Truncated {
            expected: 8 + n_lab,
            found: labels.len(),
        });
    }
    let features: Vec<f64> = images[16..need_img].iter().map(|&p| f64::from(p) / 255.0).collect();
    let ys: Vec<usize> = labels[8..8 + n_lab].iter().map(|&y| usize::from(y)).collect();
    let k = class_count.unwrap_or_else(|| ys.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(Tensor::matrix(n_img, dim, features)?, ys, k)
}

pub fn load_idx(images: &Path, labels: &Path, class_count: Option<usize>) -> Result<LabeledDataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?, class_count)
}

#[cfg(test)]
pub(crate) fn encode_idx(pixels: &[Vec<u8>], rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend(IMAGE_MAGIC.to_be_bytes());
    img.extend((pixels.len() as u32).to_be_bytes());
    img.extend(rows.to_be_bytes());
    img.extend(cols.to_be_bytes());
    pixels.iter().for_each(|p| img.extend(p));
    let mut lab = Vec::new();
    lab.extend(LABEL_MAGIC.to_be_bytes());
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend(labels);
    (img, lab)
}
