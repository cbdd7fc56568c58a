//! Model files.
//!
//! ```text
//! bytes 0..8    magic "DECTCNN\0"
//! bytes 8..12   format version, u32 little-endian
//! bytes 12..16  descriptor length L, u32 little-endian
//! bytes 16..    L bytes of JSON: architecture, domain, data scale, blob sizes
//! then          f32 little-endian blobs in layer order; per convolution
//!               weight then bias, per batch-norm gamma, beta, running
//!               mean, running variance
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Architecture;
use super::model::{Domain, LayerParams, Model};
use super::Scalar;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 8] = *b"DECTCNN\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    architecture: Architecture,
    domain: Domain,
    data_scale: f64,
    /// Length of every blob, in file order.
    blobs: Vec<usize>,
}

fn blobs<T: Scalar>(model: &Model<T>) -> Vec<&Vec<T>> {
    let mut out = Vec::new();
    for p in &model.params {
        match p {
            LayerParams::None => {}
            LayerParams::Conv { weight, bias } => out.extend([weight, bias]),
            LayerParams::Norm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => out.extend([gamma, beta, running_mean, running_var]),
        }
    }
    out
}

/// Writes a model with weights rounded to `f32`.
pub fn write_model<T: Scalar>(model: &Model<T>, mut w: impl Write) -> Result<()> {
    let blobs = blobs(model);
    let descriptor = Descriptor {
        architecture: model.architecture.clone(),
        domain: model.domain,
        data_scale: model.data_scale,
        blobs: blobs.iter().map(|b| b.len()).collect(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for b in blobs {
        for v in b {
            w.write_all(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("model file truncated in {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_model(mut r: impl Read) -> Result<Model<f32>> {
    let mut head = [0u8; 16];
    read_exact(&mut r, &mut head, "header")?;
    if head[..8] != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("model format version {version}, expected {MODEL_VERSION}")));
    }
    let len = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    if len > 1 << 26 {
        return Err(Error::Format(format!("descriptor length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    read_exact(&mut r, &mut json, "descriptor")?;
    let d: Descriptor = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("bad descriptor: {e}")))?;
    let mut model = Model::<f32>::new(d.architecture, d.domain, 0)?;
    model.data_scale = d.data_scale;
    let expected: Vec<usize> = blobs(&model).iter().map(|b| b.len()).collect();
    if expected != d.blobs {
        return Err(Error::Format("blob sizes do not match the architecture".into()));
    }
    let mut fill = |v: &mut Vec<f32>| -> Result<()> {
        let mut bytes = vec![0u8; 4 * v.len()];
        read_exact(&mut r, &mut bytes, "weights")?;
        for (x, c) in v.iter_mut().zip(bytes.chunks_exact(4)) {
            *x = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    };
    for p in &mut model.params {
        match p {
            LayerParams::None => {}
            LayerParams::Conv { weight, bias } => {
                fill(weight)?;
                fill(bias)?;
            }
            LayerParams::Norm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                for v in [gamma, beta, running_mean, running_var] {
                    fill(v)?;
                }
            }
        }
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    read_model(BufReader::new(File::open(path)?))
}
