//! RLDM model archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "RLDM"
//! version    u16
//! count      u32      number of sections
//! section*   name_len u16, name (UTF-8), dtype u8 (0 = f32), rank u8,
//!            dims rank x u32, payload_len u64, payload (f32 LE)
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::numkit::DenseTensor;

pub const ARCHIVE_MAGIC: [u8; 4] = *b"RLDM";
pub const ARCHIVE_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub tensor: DenseTensor,
}

/// Named tensors, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelArchive {
    sections: Vec<Section>,
}

impl ModelArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: DenseTensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(FormatError::DuplicateSection(name).into());
        }
        if name.len() > u16::MAX as usize || tensor.rank() > u8::MAX as usize {
            return Err(Error::Parameter(format!("section {name:?} too large to encode")));
        }
        self.sections.push(Section { name, tensor });
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, tensor: DenseTensor) -> Result<Self> {
        self.push(name, tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&DenseTensor> {
        self.get(name)
            .ok_or_else(|| FormatError::MissingSection(name.to_string()).into())
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(s.tensor.rank() as u8);
            for &d in s.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&((s.tensor.len() * 4) as u64).to_le_bytes());
            for v in s.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if magic != ARCHIVE_MAGIC {
            return Err(FormatError::ArchiveMagic(magic).into());
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != ARCHIVE_VERSION {
            return Err(FormatError::ArchiveVersion(version).into());
        }
        let count = u32::from_le_bytes(cur.array()?) as usize;
        let mut archive = ModelArchive::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.array()?) as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| FormatError::SectionName)?
                .to_string();
            let dtype = cur.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(FormatError::DType(dtype).into());
            }
            let rank = cur.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(cur.array()?) as usize);
            }
            let declared = u64::from_le_bytes(cur.array()?) as usize;
            let expected = 4 * dims.iter().product::<usize>();
            if declared != expected {
                return Err(FormatError::SectionLength {
                    name,
                    expected,
                    actual: declared,
                }
                .into());
            }
            let payload = cur.take(declared)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if !seen.insert(name.clone()) {
                return Err(FormatError::DuplicateSection(name).into());
            }
            archive.sections.push(Section {
                tensor: DenseTensor::new(&dims, data)?,
                name,
            });
        }
        if cur.pos != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - cur.pos).into());
        }
        Ok(archive)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(FormatError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            }),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn save_model(archive: &ModelArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, archive.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArchive::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ModelArchive {
        ModelArchive::new()
            .with("a", DenseTensor::new(&[2, 3], (0..6).map(|v| v as f32).collect()).unwrap())
            .unwrap()
            .with("b", DenseTensor::from_slice(&[-1.5]))
            .unwrap()
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            ModelArchive::from_bytes(&bytes),
            Err(Error::Format(FormatError::ArchiveMagic(m))) if &m == b"XXXX"
        ));
    }

    #[test]
    fn bad_version() {
        let mut bytes = sample().to_bytes();
        bytes[4..6].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(
            ModelArchive::from_bytes(&bytes),
            Err(Error::Format(FormatError::ArchiveVersion(7)))
        ));
    }

    #[test]
    fn declared_length_must_match_dims() {
        // single section "w", dims 2x3, declared payload 20 bytes
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RLDM");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'w');
        bytes.extend_from_slice(&[0, 2]);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&20u64.to_le_bytes());
        bytes.extend_from_slice(&[0; 20]);
        assert!(matches!(
            ModelArchive::from_bytes(&bytes),
            Err(Error::Format(FormatError::SectionLength { expected: 24, actual: 20, .. }))
        ));
    }

    #[test]
    fn duplicate_and_missing_sections() {
        let mut a = sample();
        assert!(a.push("a", DenseTensor::from_slice(&[0.0])).is_err());
        assert!(matches!(
            a.require("zz"),
            Err(Error::Format(FormatError::MissingSection(_)))
        ));
    }

    #[test]
    fn trailing_and_truncated() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(
            ModelArchive::from_bytes(&bytes),
            Err(Error::Format(FormatError::TrailingBytes(1)))
        ));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            ModelArchive::from_bytes(&bytes),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rldm");
        save_model(&sample(), &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, sample());
        assert_eq!(fs::read(&path).unwrap(), loaded.to_bytes());
    }

    fn section_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<u32>)> {
        proptest::collection::vec(1usize..4, 1..4).prop_flat_map(|dims| {
            let len: usize = dims.iter().product();
            (Just(dims), proptest::collection::vec(any::<u32>(), len))
        })
    }

    proptest! {
        #[test]
        fn byte_identical_round_trip(sections in proptest::collection::vec(section_strategy(), 0..6)) {
            let mut archive = ModelArchive::new();
            for (i, (dims, bits)) in sections.into_iter().enumerate() {
                // arbitrary bit patterns, NaN payloads included
                let data = bits.into_iter().map(f32::from_bits).collect();
                archive.push(format!("s{i}.w"), DenseTensor::new(&dims, data).unwrap()).unwrap();
            }
            let bytes = archive.to_bytes();
            let back = ModelArchive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            for (a, b) in archive.sections().iter().zip(back.sections()) {
                prop_assert_eq!(&a.name, &b.name);
                let ab: Vec<u32> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
