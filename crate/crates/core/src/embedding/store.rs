//! Binary embedding store.
//!
//! Layout (little-endian): magic `ARGE`, format version `u16`, dim `u32`, then
//! records of key length `u16`, UTF-8 key bytes and `dim` `f32` values. The
//! key→offset index is rebuilt on open.

use std::collections::HashMap;
use std::path::Path;

use super::{EmbedInput, EmbeddingProvider, EmbeddingVector, Granularity, ProviderDescriptor, ProviderKind};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"ARGE";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4;

#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    data: Vec<u8>,
    index: HashMap<String, usize>,
    keys: Vec<String>,
}

impl VectorStore {
    /// Serializes `entries` in the given order. Duplicate keys are an error.
    pub fn to_bytes<'a>(
        dim: usize,
        entries: impl IntoIterator<Item = (&'a str, &'a EmbeddingVector)>,
    ) -> Result<Vec<u8>> {
        let dim32 = u32::try_from(dim).map_err(|_| Error::Validation(format!("dim {dim} too large")))?;
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dim32.to_le_bytes());
        let mut seen = std::collections::HashSet::new();
        for (key, vector) in entries {
            if vector.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: vector.dim(),
                });
            }
            if !seen.insert(key) {
                return Err(Error::Validation(format!("duplicate store key `{key}`")));
            }
            let len = u16::try_from(key.len())
                .map_err(|_| Error::Validation(format!("store key longer than 65535 bytes: `{key}`")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn write<'a>(
        path: &Path,
        dim: usize,
        entries: impl IntoIterator<Item = (&'a str, &'a EmbeddingVector)>,
    ) -> Result<()> {
        let bytes = Self::to_bytes(dim, entries)?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(data)
    }

    pub fn from_bytes(data: Vec<u8>) -> Result<Self> {
        let corrupt = |what: &str| Error::Protocol(format!("embedding store: {what}"));
        if data.len() < HEADER_LEN || &data[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([data[4], data[5]]);
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes([data[6], data[7], data[8], data[9]]) as usize;
        if dim == 0 {
            return Err(corrupt("dim is 0"));
        }
        let mut index = HashMap::new();
        let mut keys = Vec::new();
        let mut pos = HEADER_LEN;
        while pos < data.len() {
            if pos + 2 > data.len() {
                return Err(corrupt("truncated key length"));
            }
            let len = u16::from_le_bytes([data[pos], data[pos + 1]]) as usize;
            pos += 2;
            let key_end = pos + len;
            let rec_end = key_end + 4 * dim;
            if rec_end > data.len() {
                return Err(corrupt("truncated record"));
            }
            let key = std::str::from_utf8(&data[pos..key_end])
                .map_err(|_| corrupt("key is not UTF-8"))?
                .to_string();
            if index.insert(key.clone(), key_end).is_some() {
                return Err(corrupt(&format!("duplicate key `{key}`")));
            }
            keys.push(key);
            pos = rec_end;
        }
        Ok(VectorStore {
            dim,
            data,
            index,
            keys,
        })
    }

    pub fn in_memory<'a>(
        dim: usize,
        entries: impl IntoIterator<Item = (&'a str, &'a EmbeddingVector)>,
    ) -> Result<Self> {
        Self::from_bytes(Self::to_bytes(dim, entries)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Keys in file order.
    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &str) -> Result<EmbeddingVector> {
        let &offset = self.index.get(key).ok_or_else(|| Error::Lookup(key.to_string()))?;
        let values = self.data[offset..offset + 4 * self.dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        EmbeddingVector::new(values)
    }
}

/// Serves precomputed vectors by key; text and span are ignored.
#[derive(Debug, Clone)]
pub struct FileStoreProvider {
    store: VectorStore,
}

impl FileStoreProvider {
    pub fn new(store: VectorStore) -> Self {
        FileStoreProvider { store }
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }
}

impl EmbeddingProvider for FileStoreProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            kind: ProviderKind::FileStore,
            dim: self.store.dim(),
            granularity: Granularity::Sentence,
        }
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<EmbeddingVector> {
        self.store.get(input.key)
    }
}
