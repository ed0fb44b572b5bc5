//! Little-endian binary checkpoint.
//!
//! Layout: magic `CFSMODEL`, `u32` version, `u32` item-function code,
//! `u32` embedding width, `u32` block count, then per block `u64` rows,
//! `u64` cols and `rows*cols` row-major `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{EmbeddingModel, ItemFnKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CFSMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_model(model: &EmbeddingModel, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for x in [CHECKPOINT_VERSION, model.kind.code(), model.dim as u32, model.params.len() as u32] {
        w.write_all(&x.to_le_bytes())?;
    }
    for block in &model.params {
        w.write_all(&(block.nrows() as u64).to_le_bytes())?;
        w.write_all(&(block.ncols() as u64).to_le_bytes())?;
        for x in block.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EmbeddingModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut BufReader::new(file))
}

fn read_model(r: &mut impl Read) -> Result<EmbeddingModel> {
    let truncated = |_| Error::Checkpoint("truncated checkpoint".into());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint".into()));
    }
    let mut u32s = [0u32; 4];
    for x in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(truncated)?;
        *x = u32::from_le_bytes(b);
    }
    let [version, code, dim, nblocks] = u32s;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let kind = ItemFnKind::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown item function code {code}")))?;
    if nblocks > 16 {
        return Err(Error::Checkpoint(format!("implausible block count {nblocks}")));
    }
    let mut params = Vec::with_capacity(nblocks as usize);
    for _ in 0..nblocks {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(truncated)?;
        let rows = u64::from_le_bytes(b) as usize;
        r.read_exact(&mut b).map_err(truncated)?;
        let cols = u64::from_le_bytes(b) as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("block too large".into()))?;
        let mut bytes = Vec::new();
        r.take(8 * n as u64).read_to_end(&mut bytes).map_err(truncated)?;
        if bytes.len() != 8 * n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"));
    }
    let model = EmbeddingModel::from_blocks(kind, params)?;
    if model.dim != dim as usize {
        return Err(Error::Checkpoint("header width disagrees with blocks".into()));
    }
    Ok(model)
}
