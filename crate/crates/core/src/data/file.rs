//! Dataset persistence: magic `AVDD`, a fixed-width header, one label word
//! per video, then all pixels as little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{DataError, Dataset, SourceVideo};
use crate::binfmt;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"AVDD";
pub const DATASET_VERSION: u32 = 1;

fn as_u32(v: usize) -> Result<u32, DataError> {
    u32::try_from(v).map_err(|_| DataError::DimensionTooLarge(v))
}

/// Writes a dataset; `load_dataset` restores it bit-exactly.
pub fn save_dataset<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DATASET_MAGIC)?;
    binfmt::write_u32(&mut w, DATASET_VERSION)?;
    binfmt::write_u32(&mut w, as_u32(dataset.len())?)?;
    binfmt::write_u32(&mut w, as_u32(dataset.num_classes)?)?;
    binfmt::write_u32(&mut w, as_u32(dataset.frames)?)?;
    binfmt::write_u32(&mut w, as_u32(dataset.height)?)?;
    binfmt::write_u32(&mut w, as_u32(dataset.width)?)?;
    for v in &dataset.videos {
        binfmt::write_u32(&mut w, as_u32(v.label)?)?;
    }
    for v in &dataset.videos {
        binfmt::write_f32_slice(&mut w, v.frames.data())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`], validating the header.
pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    binfmt::read_magic(&mut r, DATASET_MAGIC)?;
    binfmt::expect_version(&mut r, DATASET_VERSION)?;
    let count = binfmt::read_u32(&mut r)? as usize;
    let num_classes = binfmt::read_u32(&mut r)? as usize;
    let frames = binfmt::read_u32(&mut r)? as usize;
    let height = binfmt::read_u32(&mut r)? as usize;
    let width = binfmt::read_u32(&mut r)? as usize;
    let labels: Vec<usize> = (0..count)
        .map(|_| binfmt::read_u32(&mut r).map(|l| l as usize))
        .collect::<Result<_, _>>()?;

    let per_video = 3 * frames * height * width;
    let videos = labels
        .into_iter()
        .map(|label| {
            let data = binfmt::read_f32_vec(&mut r, per_video)?;
            let volume = Tensor::new(vec![3, frames, height, width], data)?;
            Ok(SourceVideo { frames: volume, label })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Dataset::with_dims(videos, num_classes, frames, height, width)
}
