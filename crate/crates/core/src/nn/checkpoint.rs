//! Self-describing binary checkpoints.
//!
//! Layout: the magic bytes `MPCKPT\0\0`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! the raw little-endian payload of every entry in manifest order. The
//! manifest holds free-form metadata and the ordered `(name, shape, dtype)`
//! list.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::layers::{Module, StateMut};
use super::tensor::{Real, Tensor, REAL_DTYPE};
use super::{NnError, Result};

pub const MAGIC: &[u8; 8] = b"MPCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on the manifest size, to reject garbage before allocating.
const MAX_MANIFEST_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U64(Vec<u64>),
}

impl Payload {
    pub fn dtype(&self) -> &'static str {
        match self {
            Payload::F64(_) => "f64",
            Payload::F32(_) => "f32",
            Payload::U64(_) => "u64",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_reals(values: &[Real]) -> Self {
        #[cfg(not(feature = "f32"))]
        return Payload::F64(values.to_vec());
        #[cfg(feature = "f32")]
        return Payload::F32(values.to_vec());
    }

    /// Float payloads converted to [`Real`].
    pub fn to_reals(&self) -> Option<Vec<Real>> {
        match self {
            Payload::F64(v) => Some(v.iter().map(|&x| x as Real).collect()),
            Payload::F32(v) => Some(v.iter().map(|&x| x as Real).collect()),
            Payload::U64(_) => None,
        }
    }

    fn write_le<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        match self {
            Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
            Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
            Payload::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes())),
        }
    }

    fn read_le<R: Read>(r: &mut R, dtype: &str, len: usize) -> Result<Self> {
        let width = match dtype {
            "f64" | "u64" => 8,
            "f32" => 4,
            other => return Err(NnError::Corrupt(format!("unknown dtype {other:?}"))),
        };
        let want = len
            .checked_mul(width)
            .ok_or_else(|| NnError::Corrupt("payload size overflows".into()))?;
        // grow with the data actually present rather than trusting the manifest
        let mut bytes = Vec::new();
        r.take(want as u64).read_to_end(&mut bytes)?;
        if bytes.len() != want {
            return Err(NnError::Corrupt(format!("truncated payload: {} of {want} bytes", bytes.len())));
        }
        Ok(match dtype {
            "f64" => Payload::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            "u64" => Payload::U64(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => Payload::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Payload,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: BTreeMap<String, Value>,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, Value>,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Payload) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Shape(format!("entry {name}: shape {shape:?} vs {} values", data.len())));
        }
        if self.get(&name).is_some() {
            return Err(NnError::InvalidArgument(format!("duplicate entry {name}")));
        }
        self.entries.push(Entry { name, shape: shape.to_vec(), data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<Value>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry { name: e.name.clone(), shape: e.shape.clone(), dtype: e.data.dtype().into() })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Corrupt(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for e in &self.entries {
            e.data.write_le(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| NnError::BadMagic)?;
        if &magic != MAGIC {
            return Err(NnError::BadMagic);
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|e| NnError::Corrupt(e.to_string()))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(NnError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|e| NnError::Corrupt(e.to_string()))?;
        let len = u64::from_le_bytes(len);
        if len > MAX_MANIFEST_BYTES {
            return Err(NnError::Corrupt(format!("manifest of {len} bytes")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json).map_err(|e| NnError::Corrupt(format!("truncated manifest: {e}")))?;
        let manifest: Manifest =
            serde_json::from_slice(&json).map_err(|e| NnError::Corrupt(format!("manifest: {e}")))?;
        let mut ckpt = Checkpoint { meta: manifest.meta, entries: Vec::with_capacity(manifest.entries.len()) };
        for m in manifest.entries {
            let n = m.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| NnError::Corrupt(format!("entry {} shape overflows", m.name)))?;
            let data = Payload::read_le(r, &m.dtype, n)?;
            ckpt.push(m.name, &m.shape, data)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(NnError::Corrupt("trailing bytes after payload".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Stores every parameter (value, ADAM moments, step) and buffer of
    /// `module` under `prefix`.
    pub fn export_module(&mut self, module: &mut dyn Module, prefix: &str) -> Result<()> {
        let mut state = Vec::new();
        module.collect_state(prefix, &mut state);
        self.export_state(state)
    }

    /// Stores already-collected named state, see [`Module::collect_state`].
    pub fn export_state(&mut self, state: Vec<(String, StateMut<'_>)>) -> Result<()> {
        for (name, s) in state {
            match s {
                StateMut::Param(p) => {
                    let shape = p.value.shape().to_vec();
                    self.push(&name, &shape, Payload::from_reals(p.value.data()))?;
                    self.push(format!("{name}#adam_m"), &shape, Payload::from_reals(p.m.data()))?;
                    self.push(format!("{name}#adam_v"), &shape, Payload::from_reals(p.v.data()))?;
                    self.push(format!("{name}#adam_step"), &[1], Payload::U64(vec![p.step]))?;
                }
                StateMut::Buffer(b) => {
                    let len = b.len();
                    self.push(&name, &[len], Payload::from_reals(b))?;
                }
            }
        }
        Ok(())
    }

    /// Restores state written by [`Checkpoint::export_module`]. Every
    /// tensor of the module must be present with the same shape.
    pub fn import_module(&self, module: &mut dyn Module, prefix: &str) -> Result<()> {
        let mut state = Vec::new();
        module.collect_state(prefix, &mut state);
        self.import_state(state)
    }

    /// Counterpart of [`Checkpoint::export_state`].
    pub fn import_state(&self, state: Vec<(String, StateMut<'_>)>) -> Result<()> {
        for (name, s) in state {
            match s {
                StateMut::Param(p) => {
                    let shape = p.value.shape().to_vec();
                    p.value = self.real_tensor(&name, &shape)?;
                    p.m = self.real_tensor(&format!("{name}#adam_m"), &shape)?;
                    p.v = self.real_tensor(&format!("{name}#adam_v"), &shape)?;
                    p.step = match self.get(&format!("{name}#adam_step")).map(|e| &e.data) {
                        Some(Payload::U64(v)) if v.len() == 1 => v[0],
                        _ => return Err(NnError::StateMismatch(format!("missing step counter for {name}"))),
                    };
                    p.zero_grad();
                }
                StateMut::Buffer(b) => {
                    let len = b.len();
                    *b = self.real_tensor(&name, &[len])?.into_data();
                }
            }
        }
        Ok(())
    }

    fn real_tensor(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let e = self.get(name).ok_or_else(|| NnError::StateMismatch(format!("missing entry {name}")))?;
        if e.shape != shape {
            return Err(NnError::StateMismatch(format!("{name}: stored shape {:?}, model has {shape:?}", e.shape)));
        }
        let data = e
            .data
            .to_reals()
            .ok_or_else(|| NnError::StateMismatch(format!("{name}: expected float data, found {}", e.data.dtype())))?;
        if e.data.dtype() != REAL_DTYPE {
            log::warn!("{name}: converting {} checkpoint data to {REAL_DTYPE}", e.data.dtype());
        }
        Tensor::from_vec(shape, data)
    }
}
