//! Named embedding vectors and their binary file format.
//!
//! File layout (little-endian): magic `RIDEMB01`, record count (u64),
//! dimension (u32), normalized flag (u8), then per record the image id as a
//! u32 byte length plus UTF-8 bytes, followed by `D` 32-bit floats.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{normalized, Scalar};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"RIDEMB01";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<T>,
    normalized: bool,
    index: HashMap<String, usize>,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(dim: usize, normalized: bool) -> Self {
        Self {
            ids: Vec::new(),
            dim,
            vectors: Vec::new(),
            normalized,
            index: HashMap::new(),
        }
    }

    pub fn from_rows(dim: usize, normalized: bool, rows: impl IntoIterator<Item = (String, Vec<T>)>) -> Result<Self> {
        let mut set = Self::new(dim, normalized);
        for (id, v) in rows {
            set.push(id, v)?;
        }
        Ok(set)
    }

    /// Appends a vector, L2-normalizing it when the set is normalized.
    pub fn push(&mut self, id: String, vector: Vec<T>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding for `{id}` has dimension {}, set has {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateImage(id));
        }
        let v = if self.normalized { normalized(&vector) } else { vector };
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.extend(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[T] {
        &self.vectors
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<EmbeddingSet<T>> {
        let mut out = EmbeddingSet::new(self.dim, self.normalized);
        let missing: Vec<String> = ids.iter().filter(|id| !self.index.contains_key(*id)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::MissingInputs(missing));
        }
        for id in ids {
            out.push(id.clone(), self.get(id).unwrap().to_vec())?;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.len() * (4 + 16 + 4 * self.dim));
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(u8::from(self.normalized));
        for (id, v) in self.iter() {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for &x in v {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        if bytes.len() < 21 || &bytes[..8] != EMBEDDING_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let normalized = bytes[20] != 0;
        let mut set = EmbeddingSet {
            ids: Vec::with_capacity(count),
            dim,
            vectors: Vec::with_capacity(count * dim),
            normalized,
            index: HashMap::with_capacity(count),
        };
        let mut off = 21;
        for _ in 0..count {
            let len_bytes = bytes.get(off..off + 4).ok_or_else(|| corrupt("truncated record"))?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            off += 4;
            let id_bytes = bytes.get(off..off + len).ok_or_else(|| corrupt("truncated id"))?;
            let id = std::str::from_utf8(id_bytes).map_err(|_| corrupt("id is not UTF-8"))?.to_string();
            off += len;
            let raw = bytes.get(off..off + 4 * dim).ok_or_else(|| corrupt("truncated vector"))?;
            off += 4 * dim;
            if set.index.insert(id.clone(), set.ids.len()).is_some() {
                return Err(Error::DuplicateImage(id));
            }
            set.ids.push(id);
            set.vectors
                .extend(raw.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)));
        }
        if off != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout() {
        let set = EmbeddingSet::from_rows(2, false, [("ab".to_string(), vec![1.0f32, -2.0])]).unwrap();
        let b = set.to_bytes();
        assert_eq!(&b[..8], b"RIDEMB01");
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(b[20], 0);
        assert_eq!(&b[21..25], &2u32.to_le_bytes());
        assert_eq!(&b[25..27], b"ab");
        assert_eq!(&b[27..31], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 35);
    }

    #[test]
    fn normalized_sets_store_unit_vectors() {
        let set = EmbeddingSet::from_rows(2, true, [("a".to_string(), vec![3.0f64, 4.0])]).unwrap();
        assert_eq!(set.row(0), &[0.6, 0.8]);
    }

    #[test]
    fn dimension_and_duplicate_errors() {
        let mut set = EmbeddingSet::<f32>::new(3, false);
        assert!(set.push("a".into(), vec![1.0; 2]).is_err());
        set.push("a".into(), vec![1.0; 3]).unwrap();
        assert!(matches!(set.push("a".into(), vec![1.0; 3]), Err(Error::DuplicateImage(_))));
        assert!(matches!(set.select(&["b".to_string()]), Err(Error::MissingInputs(_))));
    }

    proptest! {
        #[test]
        fn binary_roundtrip(rows in proptest::collection::vec(("[a-z0-9_]{1,12}", proptest::collection::vec(-10.0f32..10.0, 4)), 0..8), normalized in any::<bool>()) {
            let mut set = EmbeddingSet::<f32>::new(4, normalized);
            for (id, v) in rows {
                if set.position(&id).is_none() {
                    set.push(id, v).unwrap();
                }
            }
            let back = EmbeddingSet::<f32>::from_bytes(&set.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, set);
        }
    }
}
