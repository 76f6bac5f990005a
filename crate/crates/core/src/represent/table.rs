//! Reader and writer for the CSLG precomputed embedding table.
//!
//! Layout (little-endian): magic `CSLG`, `u32` version (1), `u32` dim,
//! `u64` count, then `count` records of `u64` key followed by `dim` `f32`
//! values. Keys are FNV-1a-64 of the preprocessed event text.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{fnv1a64, EmbeddingProvider, EventEmbedding, HashingProvider, RepresentError};

pub const MAGIC: &[u8; 4] = b"CSLG";
pub const VERSION: u32 = 1;

/// In-memory form of a CSLG file, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub records: Vec<(u64, Vec<f32>)>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            records: Vec::new(),
        }
    }

    /// Adds the vector for `text` unless its key is already present.
    /// Returns whether a record was added.
    pub fn insert_text(&mut self, text: &str, values: Vec<f32>, seen: &mut std::collections::HashSet<u64>) -> bool {
        let key = fnv1a64(text.as_bytes());
        if !seen.insert(key) {
            return false;
        }
        self.records.push((key, values));
        true
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for (key, values) in &self.records {
            debug_assert_eq!(values.len(), self.dim);
            w.write_all(&key.to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn write(&self, path: &Path) -> Result<(), RepresentError> {
        let f = File::create(path).map_err(|e| RepresentError::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| RepresentError::io(path, e))
    }

    /// Parses and validates a table: magic, version, duplicate keys and
    /// exact length are all checked.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, RepresentError> {
        let fmt = |m: &str| RepresentError::Format(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = read_u32(&mut r).ok_or_else(|| fmt("truncated header"))?;
        if version != VERSION {
            return Err(RepresentError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r).ok_or_else(|| fmt("truncated header"))? as usize;
        let count = read_u64(&mut r).ok_or_else(|| fmt("truncated header"))?;
        if dim == 0 {
            return Err(fmt("zero dimension"));
        }

        let mut records = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut buf = vec![0u8; dim * 4];
        for i in 0..count {
            let key = read_u64(&mut r).ok_or_else(|| RepresentError::Format(format!("truncated at record {i}")))?;
            if !seen.insert(key) {
                return Err(RepresentError::Format(format!("duplicate key {key:#018x}")));
            }
            r.read_exact(&mut buf)
                .map_err(|_| RepresentError::Format(format!("truncated at record {i}")))?;
            let values = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push((key, values));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|_| fmt("read error"))? != 0 {
            return Err(fmt("trailing bytes after last record"));
        }
        Ok(EmbeddingTable { dim, records })
    }

    pub fn read(path: &Path) -> Result<Self, RepresentError> {
        let f = File::open(path).map_err(|e| RepresentError::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Option<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}

/// Lookup provider over a loaded table, optionally falling back to feature
/// hashing for texts the table does not cover.
#[derive(Debug, Clone)]
pub struct TableProvider {
    dim: usize,
    map: HashMap<u64, Vec<f32>>,
    fallback: Option<HashingProvider>,
}

impl TableProvider {
    pub fn from_table(table: EmbeddingTable) -> Self {
        TableProvider {
            dim: table.dim,
            map: table.records.into_iter().collect(),
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, fallback: HashingProvider) -> Self {
        assert_eq!(fallback.embedding_dim(), self.dim, "fallback dim must match table dim");
        self.fallback = Some(fallback);
        self
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl EmbeddingProvider for TableProvider {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EventEmbedding, RepresentError> {
        let key = fnv1a64(text.as_bytes());
        match self.map.get(&key) {
            Some(v) => Ok(EventEmbedding { values: v.clone() }),
            None => match &self.fallback {
                Some(h) => h.embed(text),
                None => Err(RepresentError::MissingEmbedding {
                    key,
                    text: text.chars().take(60).collect(),
                }),
            },
        }
    }
}

/// Loads a CSLG file and checks it against the configured dimension.
pub fn load_embedding_table(path: &Path, expected_dim: usize) -> Result<TableProvider, RepresentError> {
    let table = EmbeddingTable::read(path)?;
    if table.dim != expected_dim {
        return Err(RepresentError::DimMismatch {
            file: table.dim,
            configured: expected_dim,
        });
    }
    Ok(TableProvider::from_table(table))
}
