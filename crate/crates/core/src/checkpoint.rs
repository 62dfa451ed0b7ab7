//! Model checkpoints: magic `AVDC`, a version word, then one named entry per
//! tensor — name, rank, dims, and the payload as little-endian f32. Batch-norm
//! running statistics ride along with the learnable parameters, so a reloaded
//! model behaves identically in eval mode.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::binfmt::{self, FormatError};
use crate::model::AvdParams;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AVDC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("tensor name of {0} bytes exceeds the u16 limit")]
    NameTooLong(usize),
    #[error("tensor rank {0} exceeds the u8 limit")]
    RankTooLarge(usize),
    #[error("{0} entries exceed the u32 limit")]
    TooManyEntries(usize),
    #[error("entry name is not UTF-8")]
    NameNotUtf8,
    #[error("entry {name} is too large to load")]
    EntryTooLarge { name: String },
    #[error("checkpoint entry {0} does not exist in this model")]
    UnknownEntry(String),
    #[error("model tensor {0} is missing from the checkpoint")]
    MissingEntry(String),
    #[error("entry {name} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes named tensors in the order given; same input, same bytes.
pub fn write_entries<T: Scalar, W: Write>(
    mut w: W,
    entries: &[(String, &Tensor<T>)],
) -> Result<(), CheckpointError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    binfmt::write_u32(&mut w, CHECKPOINT_VERSION)?;
    let count =
        u32::try_from(entries.len()).map_err(|_| CheckpointError::TooManyEntries(entries.len()))?;
    binfmt::write_u32(&mut w, count)?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        let len =
            u16::try_from(bytes.len()).map_err(|_| CheckpointError::NameTooLong(bytes.len()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = tensor.shape();
        let rank =
            u8::try_from(shape.len()).map_err(|_| CheckpointError::RankTooLarge(shape.len()))?;
        w.write_all(&[rank])?;
        for &dim in shape {
            binfmt::write_u64(&mut w, dim as u64)?;
        }
        binfmt::write_f32_slice(&mut w, tensor.data())?;
    }
    Ok(())
}

/// Reads every entry of a checkpoint stream, in file order.
pub fn read_entries<T: Scalar, R: Read>(
    mut r: R,
) -> Result<Vec<(String, Tensor<T>)>, CheckpointError> {
    binfmt::read_magic(&mut r, CHECKPOINT_MAGIC)?;
    binfmt::expect_version(&mut r, CHECKPOINT_VERSION)?;
    let count = binfmt::read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 10));
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_filled(&mut r, &mut len)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_filled(&mut r, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::NameNotUtf8)?;
        let mut rank = [0u8; 1];
        read_filled(&mut r, &mut rank)?;
        let shape: Vec<usize> = (0..rank[0])
            .map(|_| binfmt::read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<_, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::EntryTooLarge { name: name.clone() })?;
        let data = binfmt::read_f32_vec(&mut r, numel)?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

fn read_filled<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Truncated { needed: buf.len() }
        } else {
            FormatError::Io(e)
        }
    })
}

/// Saves all parameters and running statistics of a model.
pub fn save_checkpoint<T: Scalar>(
    params: &AvdParams<T>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_entries(&mut w, &params.named_tensors())?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into an existing model of the same architecture. The
/// name sets must match exactly; gradient-tracking flags stay as initialized.
pub fn load_checkpoint<T: Scalar>(
    params: &mut AvdParams<T>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let entries = read_entries(BufReader::new(File::open(path)?))?;
    let mut slots: BTreeMap<String, &mut Tensor<T>> =
        params.named_tensors_mut().into_iter().collect();
    for (name, tensor) in entries {
        let slot = slots.remove(&name).ok_or_else(|| CheckpointError::UnknownEntry(name.clone()))?;
        if slot.shape() != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: slot.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        slot.data_mut().copy_from_slice(tensor.data());
    }
    if let Some(name) = slots.into_keys().next() {
        return Err(CheckpointError::MissingEntry(name));
    }
    Ok(())
}
