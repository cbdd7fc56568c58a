//! Tensor files for volumes and sinograms.
//!
//! ```text
//! bytes 0..12   magic "DECTTENSOR\0\0"
//! bytes 12..16  format version, u32 little-endian
//! byte  16      dtype code (1 = f32)
//! byte  17      byte order of everything that follows (0 = little, 1 = big)
//! bytes 18..20  axis count A, u16
//! then          A axis sizes, u64 each
//! then          A axis labels, each a u16 byte length and UTF-8 bytes
//! then          the samples, f32, last axis fastest
//! ```
//!
//! Each file has a JSON sidecar at `<path>.json` with the energy labels,
//! geometry fingerprint, seeds, and, for sinograms, the angle set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::data::{Sinogram, Volume, ENERGY_LABELS};
use crate::error::{Error, Result};
use crate::geometry::AngleSet;

pub const TENSOR_MAGIC: [u8; 12] = *b"DECTTENSOR\0\0";
pub const TENSOR_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

pub const VOLUME_AXES: [&str; 4] = ["energy", "z", "y", "x"];
pub const SINOGRAM_AXES: [&str; 4] = ["energy", "view", "z", "detector"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

/// Raw content of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub labels: Vec<String>,
    pub data: Vec<f32>,
}

pub fn encode_tensor(t: &TensorFile, order: ByteOrder) -> Result<Vec<u8>> {
    if t.dims.len() != t.labels.len() || t.dims.len() > u16::MAX as usize {
        return Err(Error::Format("axis sizes and labels disagree".into()));
    }
    if t.data.len() != t.dims.iter().product::<usize>() {
        return Err(Error::Format(format!("{} samples do not fill {:?}", t.data.len(), t.dims)));
    }
    let big = order == ByteOrder::Big;
    let u16b = |v: u16| if big { v.to_be_bytes() } else { v.to_le_bytes() };
    let mut out = Vec::with_capacity(64 + 4 * t.data.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(u8::from(big));
    out.extend_from_slice(&u16b(t.dims.len() as u16));
    for &d in &t.dims {
        out.extend_from_slice(&if big { (d as u64).to_be_bytes() } else { (d as u64).to_le_bytes() });
    }
    for l in &t.labels {
        let len = u16::try_from(l.len()).map_err(|_| Error::Format("axis label too long".into()))?;
        out.extend_from_slice(&u16b(len));
        out.extend_from_slice(l.as_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&if big { v.to_be_bytes() } else { v.to_le_bytes() });
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    big: bool,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("file truncated in {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b: [u8; 2] = self.take(2, what)?.try_into().unwrap();
        Ok(if self.big { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) })
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b: [u8; 8] = self.take(8, what)?.try_into().unwrap();
        Ok(if self.big { u64::from_be_bytes(b) } else { u64::from_le_bytes(b) })
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorFile> {
    let mut c = Cursor { bytes, pos: 0, big: false };
    if c.take(12, "magic")? != TENSOR_MAGIC {
        return Err(Error::Format("not a tensor file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.take(4, "version")?.try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("tensor format version {version}, expected {TENSOR_VERSION}")));
    }
    let head = c.take(2, "header")?;
    if head[0] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {}", head[0])));
    }
    c.big = match head[1] {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("unknown byte-order flag {b}"))),
    };
    let n_axes = c.u16("axis count")? as usize;
    let mut dims = Vec::with_capacity(n_axes);
    for _ in 0..n_axes {
        dims.push(usize::try_from(c.u64("axis sizes")?).map_err(|_| Error::Format("axis size overflows".into()))?);
    }
    let mut labels = Vec::with_capacity(n_axes);
    for _ in 0..n_axes {
        let len = c.u16("axis labels")? as usize;
        let raw = c.take(len, "axis labels")?;
        labels.push(String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("axis label is not UTF-8".into()))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let payload = c.take(count, "payload")?;
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the payload", bytes.len() - c.pos)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| {
            let b: [u8; 4] = b.try_into().unwrap();
            if c.big {
                f32::from_be_bytes(b)
            } else {
                f32::from_le_bytes(b)
            }
        })
        .collect();
    Ok(TensorFile { dims, labels, data })
}

/// Sidecar metadata of a tensor file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// "volume" or "sinogram".
    pub kind: String,
    pub energy_labels: Vec<String>,
    pub geometry_fingerprint: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub angles: Option<AngleSet>,
    pub notes: BTreeMap<String, String>,
}

impl Metadata {
    pub fn new(geometry_fingerprint: Option<String>) -> Self {
        Self {
            geometry_fingerprint,
            energy_labels: ENERGY_LABELS.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn array_to_file(data: &Array4<f64>, labels: [&str; 4]) -> TensorFile {
    let (a, b, c, d) = data.dim();
    TensorFile {
        dims: vec![a, b, c, d],
        labels: labels.iter().map(|s| s.to_string()).collect(),
        data: data.iter().map(|v| *v as f32).collect(),
    }
}

fn file_to_array(t: TensorFile, labels: [&str; 4], path: &Path) -> Result<Array4<f64>> {
    if t.labels != labels {
        return Err(Error::Format(format!("{} has axes {:?}, expected {labels:?}", path.display(), t.labels)));
    }
    let dims = (t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
    Array4::from_shape_vec(dims, t.data.into_iter().map(f64::from).collect()).map_err(|e| Error::Format(e.to_string()))
}

fn write_pair(path: &Path, t: &TensorFile, meta: &Metadata) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_tensor(t, ByteOrder::Little)?)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

fn read_pair(path: &Path) -> Result<(TensorFile, Metadata)> {
    let t = decode_tensor(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let side = sidecar_path(path);
    let meta: Metadata = serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    Ok((t, meta))
}

/// Saves at `f32` precision; samples already at that precision round-trip
/// exactly.
pub fn save_volume(path: &Path, vol: &Volume, meta: &Metadata) -> Result<()> {
    let meta = Metadata {
        kind: "volume".into(),
        angles: None,
        ..meta.clone()
    };
    write_pair(path, &array_to_file(&vol.data, VOLUME_AXES), &meta)
}

pub fn load_volume(path: &Path) -> Result<(Volume, Metadata)> {
    let (t, meta) = read_pair(path)?;
    if meta.kind != "volume" {
        return Err(Error::Format(format!("{} holds a {}, not a volume", path.display(), meta.kind)));
    }
    Ok((Volume::from_array(file_to_array(t, VOLUME_AXES, path)?)?, meta))
}

pub fn save_sinogram(path: &Path, sino: &Sinogram, meta: &Metadata) -> Result<()> {
    let meta = Metadata {
        kind: "sinogram".into(),
        angles: Some(sino.angles.clone()),
        ..meta.clone()
    };
    write_pair(path, &array_to_file(&sino.data, SINOGRAM_AXES), &meta)
}

pub fn load_sinogram(path: &Path) -> Result<(Sinogram, Metadata)> {
    let (t, meta) = read_pair(path)?;
    if meta.kind != "sinogram" {
        return Err(Error::Format(format!("{} holds a {}, not a sinogram", path.display(), meta.kind)));
    }
    let stored = meta
        .angles
        .clone()
        .ok_or_else(|| Error::Format(format!("{} has no angle set in its metadata", path.display())))?;
    let angles = AngleSet::new(stored.indices().to_vec(), stored.n_full())?;
    Ok((Sinogram::new(file_to_array(t, SINOGRAM_AXES, path)?, angles)?, meta))
}
