//! Binary dataset container.
//!
//! Layout (little-endian): magic `CPCFLDS\0`, u32 version, u32 kind
//! (0 unlabeled, 1 labeled), u64 rows, u64 dim, u32 class count, then
//! `rows·dim` f64 features and, for labeled sets, `rows` u32 labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::datagen::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::io::{read_exact_vec, read_u32, read_u64};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CPCFLDS\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StoredDataset {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

impl StoredDataset {
    pub fn features(&self) -> &Tensor {
        match self {
            StoredDataset::Labeled(d) => &d.features,
            StoredDataset::Unlabeled(d) => &d.samples,
        }
    }

    pub fn into_labeled(self) -> Result<LabeledDataset> {
        match self {
            StoredDataset::Labeled(d) => Ok(d),
            StoredDataset::Unlabeled(_) => Err(Error::Format("expected a labeled dataset".into())),
        }
    }

    pub fn into_unlabeled(self) -> UnlabeledDataset {
        match self {
            StoredDataset::Labeled(d) => d.unlabeled(),
            StoredDataset::Unlabeled(d) => d,
        }
    }
}

fn write_header<W: Write>(w: &mut W, kind: u32, features: &Tensor, classes: u32) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&(features.rows() as u64).to_le_bytes())?;
    w.write_all(&(features.cols() as u64).to_le_bytes())?;
    w.write_all(&classes.to_le_bytes())?;
    for v in features.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_dataset<W: Write>(w: &mut W, data: &StoredDataset) -> Result<()> {
    match data {
        StoredDataset::Unlabeled(d) => write_header(w, 0, &d.samples, 0),
        StoredDataset::Labeled(d) => {
            write_header(w, 1, &d.features, d.class_count as u32)?;
            for &y in &d.labels {
                w.write_all(&(y as u32).to_le_bytes())?;
            }
            Ok(())
        }
    }
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<StoredDataset> {
    let magic = read_exact_vec(r, MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::Format("not a dataset container".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let kind = read_u32(r)?;
    let rows = read_u64(r)? as usize;
    let dim = read_u64(r)? as usize;
    let classes = read_u32(r)? as usize;
    let bytes = read_exact_vec(r, rows * dim * 8)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let features = Tensor::matrix(rows, dim, data)?;
    match kind {
        0 => Ok(StoredDataset::Unlabeled(UnlabeledDataset::new(features)?)),
        1 => {
            let bytes = read_exact_vec(r, rows * 4)?;
            let labels = bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
                .collect();
            Ok(StoredDataset::Labeled(LabeledDataset::new(features, labels, classes)?))
        }
        k => Err(Error::Format(format!("unknown dataset kind {k}"))),
    }
}

pub fn save_dataset(path: &Path, data: &StoredDataset) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<StoredDataset> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}
