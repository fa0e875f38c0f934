//! Versioned binary weight container.
//!
//! Layout: magic `STRC`, format version (u32 LE), section count (u32 LE),
//! then a shape table — per section a u16 LE name length, the UTF-8 name,
//! a u8 rank and rank u32 LE dims — followed by the payload: each section's
//! values as 32-bit little-endian floats, in table order. A plain-text
//! `.meta` sidecar carries seed, config and iteration.
//!
//! Live training state is quantized through f32 after every update, so a
//! save/load round trip through this container is bit-lossless.

use super::{DiscriminatorParams, GeneratorParams};
use crate::tensor::Tensor;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"STRC";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io { path: PathBuf, message: String },
    Format(String),
    MissingSection(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io { path, message } => {
                write!(f, "checkpoint io error at {}: {message}", path.display())
            }
            CheckpointError::Format(reason) => write!(f, "bad checkpoint: {reason}"),
            CheckpointError::MissingSection(name) => {
                write!(f, "checkpoint is missing section {name:?}")
            }
        }
    }
}

impl std::error::Error for CheckpointError {}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |e| CheckpointError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One named float buffer with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Section {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Section {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn from_slice(name: impl Into<String>, data: &[f64]) -> Self {
        Section {
            name: name.into(),
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn write_container(path: &Path, sections: &[Section]) -> Result<(), CheckpointError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    f.write_all(MAGIC).map_err(io_err(path))?;
    f.write_all(&VERSION.to_le_bytes()).map_err(io_err(path))?;
    f.write_all(&(sections.len() as u32).to_le_bytes())
        .map_err(io_err(path))?;
    for s in sections {
        if s.numel() != s.data.len() {
            return Err(CheckpointError::Format(format!(
                "section {} shape/buffer disagreement",
                s.name
            )));
        }
        let name = s.name.as_bytes();
        f.write_all(&(name.len() as u16).to_le_bytes())
            .map_err(io_err(path))?;
        f.write_all(name).map_err(io_err(path))?;
        f.write_all(&[s.shape.len() as u8]).map_err(io_err(path))?;
        for &d in &s.shape {
            f.write_all(&(d as u32).to_le_bytes()).map_err(io_err(path))?;
        }
    }
    for s in sections {
        for &v in &s.data {
            f.write_all(&(v as f32).to_le_bytes()).map_err(io_err(path))?;
        }
    }
    f.flush().map_err(io_err(path))
}

pub fn read_container(path: &Path) -> Result<Vec<Section>, CheckpointError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err(path))?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf).map_err(io_err(path))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version}"
        )));
    }
    f.read_exact(&mut u32buf).map_err(io_err(path))?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut sections = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        f.read_exact(&mut u16buf).map_err(io_err(path))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name).map_err(io_err(path))?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Format("non-UTF8 section name".into()))?;
        let mut rank = [0u8; 1];
        f.read_exact(&mut rank).map_err(io_err(path))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            f.read_exact(&mut u32buf).map_err(io_err(path))?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        sections.push(Section {
            name,
            shape,
            data: Vec::new(),
        });
    }
    for s in &mut sections {
        let numel = s.numel();
        let mut bytes = vec![0u8; numel * 4];
        f.read_exact(&mut bytes).map_err(io_err(path))?;
        s.data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect();
    }
    Ok(sections)
}

/// Sidecar path for a container: `<path>.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Write the plain-text metadata sidecar (`key=value` lines).
pub fn write_sidecar(path: &Path, entries: &[(String, String)]) -> Result<(), CheckpointError> {
    let side = sidecar_path(path);
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(&side, text).map_err(io_err(&side))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<(String, String)>, CheckpointError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

/// All persistent buffers of a generator under `prefix.` names, in
/// declaration order (trainable tensors, then running statistics).
pub fn generator_sections(prefix: &str, p: &GeneratorParams) -> Vec<Section> {
    let mut out: Vec<Section> = p
        .named_trainable()
        .into_iter()
        .map(|(name, t)| Section::from_tensor(format!("{prefix}.{name}"), t))
        .collect();
    for (name, bn) in [
        ("bn2", &p.bn2),
        ("bn3", &p.bn3),
        ("bnu1", &p.bnu1),
        ("bnu2", &p.bnu2),
    ] {
        out.push(Section::from_slice(
            format!("{prefix}.{name}.run_mean"),
            &bn.running.mean,
        ));
        out.push(Section::from_slice(
            format!("{prefix}.{name}.run_var"),
            &bn.running.var,
        ));
    }
    out
}

pub fn discriminator_sections(prefix: &str, p: &DiscriminatorParams) -> Vec<Section> {
    p.named_trainable()
        .into_iter()
        .map(|(name, t)| Section::from_tensor(format!("{prefix}.{name}"), t))
        .collect()
}

fn find<'a>(sections: &'a [Section], name: &str) -> Result<&'a Section, CheckpointError> {
    sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| CheckpointError::MissingSection(name.to_string()))
}

fn load_tensor(t: &mut Tensor, s: &Section) -> Result<(), CheckpointError> {
    if t.shape() != s.shape.as_slice() {
        return Err(CheckpointError::Format(format!(
            "section {} has shape {:?}, expected {:?}",
            s.name,
            s.shape,
            t.shape()
        )));
    }
    t.data_mut().copy_from_slice(&s.data);
    Ok(())
}

/// Fill generator parameters from container sections under `prefix.`.
pub fn load_generator(
    prefix: &str,
    sections: &[Section],
    p: &mut GeneratorParams,
) -> Result<(), CheckpointError> {
    for (name, t) in p.named_trainable_mut() {
        load_tensor(t, find(sections, &format!("{prefix}.{name}"))?)?;
    }
    for (name, bn) in [
        ("bn2", &mut p.bn2),
        ("bn3", &mut p.bn3),
        ("bnu1", &mut p.bnu1),
        ("bnu2", &mut p.bnu2),
    ] {
        let mean = find(sections, &format!("{prefix}.{name}.run_mean"))?;
        let var = find(sections, &format!("{prefix}.{name}.run_var"))?;
        bn.running.mean.copy_from_slice(&mean.data);
        bn.running.var.copy_from_slice(&var.data);
    }
    Ok(())
}

pub fn load_discriminator(
    prefix: &str,
    sections: &[Section],
    p: &mut DiscriminatorParams,
) -> Result<(), CheckpointError> {
    for (name, t) in p.named_trainable_mut() {
        load_tensor(t, find(sections, &format!("{prefix}.{name}"))?)?;
    }
    Ok(())
}
