//! Binary image-feature files.
//!
//! Layout (little-endian): magic `VSF1`, `u32` record count, `u32` dim,
//! then per record a `u16` id length, the UTF-8 id bytes and `dim` `f32`
//! values.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::seeded;

pub const FEATURE_MAGIC: &[u8; 4] = b"VSF1";

/// Feature vectors keyed by image id, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        FeatureSet {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "feature {id:?} has {} values, file dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Config(format!("image id longer than {} bytes", u16::MAX)));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Config(format!("duplicate image id {id:?}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    /// The vector for `id` widened to `f64`, or a lookup error.
    pub fn lookup(&self, id: &str) -> Result<Vec<f64>> {
        self.get(id)
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| Error::MissingFeature(id.to_owned()))
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::Config(format!(
                "feature dim {} does not match model feature_dim {expected}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, source_name);
        let magic = r.take(4, "magic")?;
        if magic != FEATURE_MAGIC {
            return Err(Error::format(source_name, 0, format!("bad magic {magic:?}, expected \"VSF1\"")));
        }
        let count = r.u32("record count")? as usize;
        let dim = r.u32("dim")? as usize;
        let mut set = FeatureSet::new(dim);
        for i in 0..count {
            let at = r.offset();
            let len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(len, "id bytes")?)
                .map_err(|e| Error::format(source_name, at, format!("record {i}: id is not UTF-8: {e}")))?
                .to_owned();
            let raw = r.take(4 * dim, "feature values")?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            set.insert(id, v)
                .map_err(|e| Error::format(source_name, at, e.to_string()))?;
        }
        if r.offset() as usize != bytes.len() {
            return Err(Error::format(source_name, r.offset(), "trailing bytes after last record"));
        }
        Ok(set)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source_name: &'a str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], source_name: &'a str) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            source_name,
        }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.source_name,
                self.pos as u64,
                format!("truncated: needed {n} bytes for {what}, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn write_features(path: &Path, set: &FeatureSet) -> Result<()> {
    std::fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSet::from_bytes(&bytes, &path.display().to_string())
}

/// Deterministic pseudo-random unit-norm vectors, one per id.
pub fn synth_features(seed: u64, ids: &[String], dim: usize) -> Result<FeatureSet> {
    let mut rng = seeded(seed);
    let mut set = FeatureSet::new(dim);
    for id in ids {
        let raw: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        set.insert(id.clone(), raw.iter().map(|x| (x / norm) as f32).collect())?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> FeatureSet {
        let ids: Vec<String> = ["a", "bb", "ccc"].iter().map(|s| s.to_string()).collect();
        synth_features(3, &ids, 5).unwrap()
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let set = sample_set();
        let back = FeatureSet::from_bytes(&set.to_bytes(), "mem").unwrap();
        assert_eq!(back.ids(), set.ids());
        for id in set.ids() {
            let a: Vec<u32> = set.get(id).unwrap().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.get(id).unwrap().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample_set().to_bytes();
        assert_eq!(&bytes[..4], b"VSF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 1);
        assert_eq!(bytes[14], b'a');
        assert_eq!(bytes.len(), 12 + 3 * 2 + 6 + 3 * 20);
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let mut bytes = sample_set().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            FeatureSet::from_bytes(&bytes, "f"),
            Err(Error::Format { offset: 0, .. })
        ));
        let bytes = sample_set().to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match FeatureSet::from_bytes(cut, "f") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synth_is_deterministic_and_unit_norm() {
        let a = sample_set();
        assert_eq!(a.to_bytes(), sample_set().to_bytes());
        for id in a.ids() {
            let n: f64 = a.get(id).unwrap().iter().map(|&x| (x as f64).powi(2)).sum();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!(matches!(a.lookup("zzz"), Err(Error::MissingFeature(id)) if id == "zzz"));
        assert!(matches!(a.check_dim(4), Err(Error::Config(_))));
    }
}
