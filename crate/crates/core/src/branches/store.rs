//! Precomputed embeddings for the external branch.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic    b"MBSTEMB1"
//! count    u32
//! record*  u32 sequence, u32 frame, u8 role, u16 H, u16 W, u16 C, u16 stride,
//!          H*W*C f32 (row-major, channels innermost)
//! ```
//!
//! Role byte 0 is the exemplar; `1 + k` is search scale `k`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use super::FeatureMap;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MBSTEMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatchRole {
    Exemplar,
    Search(u8),
}

impl PatchRole {
    pub fn to_byte(self) -> Result<u8> {
        match self {
            PatchRole::Exemplar => Ok(0),
            PatchRole::Search(k) if k < u8::MAX => Ok(k + 1),
            PatchRole::Search(k) => Err(Error::InvalidArgument(format!("search scale index {k} too large"))),
        }
    }

    pub fn from_byte(b: u8) -> Self {
        match b {
            0 => PatchRole::Exemplar,
            k => PatchRole::Search(k - 1),
        }
    }

    fn group(&self) -> &'static str {
        match self {
            PatchRole::Exemplar => "exemplar",
            PatchRole::Search(_) => "search",
        }
    }
}

impl fmt::Display for PatchRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchRole::Exemplar => f.write_str("exemplar"),
            PatchRole::Search(k) => write!(f, "search:{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchKey {
    pub sequence: u32,
    pub frame: u32,
    pub role: PatchRole,
}

impl PatchKey {
    pub fn new(sequence: u32, frame: u32, role: PatchRole) -> Self {
        Self { sequence, frame, role }
    }
}

/// Feature maps indexed by (sequence, frame, role). All exemplar maps share
/// one shape and stride, and so do all search maps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    maps: BTreeMap<PatchKey, FeatureMap>,
}

type Shape = (usize, usize, usize, usize);

fn shape(m: &FeatureMap) -> Shape {
    (m.height(), m.width(), m.channels(), m.stride())
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, key: &PatchKey) -> Option<&FeatureMap> {
        self.maps.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PatchKey, &FeatureMap)> {
        self.maps.iter()
    }

    fn group_shape(&self, key: &PatchKey) -> Option<Shape> {
        self.maps
            .iter()
            .find(|(k, _)| k.role.group() == key.role.group() && *k != key)
            .map(|(_, m)| shape(m))
    }

    /// Adds (or replaces) a map, rejecting shapes that disagree with maps
    /// already stored for the same role group.
    pub fn insert(&mut self, key: PatchKey, map: FeatureMap) -> Result<()> {
        key.role.to_byte()?;
        for (name, v) in [("height", map.height()), ("width", map.width()), ("channels", map.channels()), ("stride", map.stride())] {
            if v > u16::MAX as usize {
                return Err(Error::InvalidArgument(format!("{name} {v} does not fit the file format")));
            }
        }
        if let Some(expected) = self.group_shape(&key) {
            let got = shape(&map);
            if got != expected {
                return Err(Error::DimensionMismatch {
                    role: key.role.group().to_string(),
                    detail: format!("expected HxWxC/stride {expected:?}, got {got:?}"),
                });
            }
        }
        self.maps.insert(key, map);
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.maps.len() as u32).to_le_bytes())?;
        for (key, map) in &self.maps {
            w.write_all(&key.sequence.to_le_bytes())?;
            w.write_all(&key.frame.to_le_bytes())?;
            w.write_all(&[key.role.to_byte().expect("validated on insert")])?;
            for v in [map.height(), map.width(), map.channels(), map.stride()] {
                w.write_all(&(v as u16).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(map.data().len() * 4);
            for v in map.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let corrupt = |what: &str| Error::CorruptEmbeddings(what.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let count = read_u32(&mut r).map_err(|_| corrupt("truncated record count"))?;
        let mut store = EmbeddingStore::default();
        for i in 0..count {
            let trunc = |_| Error::CorruptEmbeddings(format!("record {i} truncated"));
            let sequence = read_u32(&mut r).map_err(trunc)?;
            let frame = read_u32(&mut r).map_err(trunc)?;
            let mut role = [0u8; 1];
            r.read_exact(&mut role).map_err(trunc)?;
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                let mut b = [0u8; 2];
                r.read_exact(&mut b).map_err(trunc)?;
                *d = u16::from_le_bytes(b) as usize;
            }
            let [h, w, c, stride] = dims;
            let mut raw = vec![0u8; h * w * c * 4];
            r.read_exact(&mut raw).map_err(trunc)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let map = FeatureMap::new(h, w, c, stride, data)
                .map_err(|e| Error::CorruptEmbeddings(format!("record {i}: {e}")))?;
            let key = PatchKey::new(sequence, frame, PatchRole::from_byte(role[0]));
            store.insert(key, map)?;
        }
        Ok(store)
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_embedding_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::read_from(std::io::BufReader::new(file))
}

pub fn write_embedding_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    store.write_to(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
