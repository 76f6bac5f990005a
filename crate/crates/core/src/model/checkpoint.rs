//! CSLM model checkpoints: magic `CSLM`, `u32` version, `u32`
//! embedding dim, `u32` hidden dim, then every parameter as a little-endian
//! `f32` in [`LstmParams`] block order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{LstmParams, ModelShape};
use super::ModelError;

pub const MAGIC: &[u8; 4] = b"CSLM";
pub const VERSION: u32 = 1;

pub fn write_checkpoint_to<W: Write>(params: &LstmParams, mut w: W) -> std::io::Result<()> {
    let shape = params.shape();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(shape.embedding_dim as u32).to_le_bytes())?;
    w.write_all(&(shape.hidden_dim as u32).to_le_bytes())?;
    for v in params.as_slice() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()
}

pub fn save_checkpoint(path: &Path, params: &LstmParams) -> Result<(), ModelError> {
    let f = File::create(path).map_err(|e| ModelError::io(path, e))?;
    write_checkpoint_to(params, BufWriter::new(f)).map_err(|e| ModelError::io(path, e))
}

pub fn read_checkpoint_from<R: Read>(mut r: R) -> Result<LstmParams, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {}", word(4))));
    }
    let shape = ModelShape::new(word(8) as usize, word(12) as usize);
    if shape.embedding_dim == 0 || shape.hidden_dim == 0 {
        return Err(bad("zero dimension"));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|_| bad("read error"))?;
    if body.len() != shape.param_count() * 4 {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            shape.param_count(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(LstmParams::from_vec(shape, data).expect("length checked"))
}

pub fn load_checkpoint(path: &Path) -> Result<LstmParams, ModelError> {
    let f = File::open(path).map_err(|e| ModelError::io(path, e))?;
    read_checkpoint_from(BufReader::new(f))
}
