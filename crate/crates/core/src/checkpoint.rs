//! Binary checkpoint, little-endian:
//!
//! ```text
//! "ROPH" | u32 version | u32 header_len | header JSON
//! repeated until EOF:
//!   u32 name_len | name | u32 rank | rank × u64 extent | Π extents × f64
//! ```
//!
//! The header holds the model spec and the fitted preprocessor. Records
//! cover every parameter entry, running statistics included.

use std::collections::HashSet;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelSpec};
use crate::preprocess::PreprocessorState;
use crate::tensor::{SeededRng, Tensor};

pub const MAGIC: [u8; 4] = *b"ROPH";
pub const FORMAT_VERSION: u32 = 1;
/// Versions this reader accepts.
pub const SUPPORTED_VERSIONS: [u32; 1] = [1];

const MAX_HEADER_BYTES: u32 = 1 << 24;
const MAX_NAME_BYTES: u32 = 1 << 12;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    preprocessor: Option<PreprocessorState>,
}

fn corrupt(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::CorruptCheckpoint("file is truncated".into())
    } else {
        Error::CorruptCheckpoint(e.to_string())
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(corrupt)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(corrupt)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_checkpoint(
    mut w: impl Write,
    model: &Model,
    pre: Option<&PreprocessorState>,
) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        model: model.spec().clone(),
        preprocessor: pre.cloned(),
    })?;
    let io_err = |e| Error::io("<checkpoint writer>", e);
    w.write_all(&MAGIC).map_err(io_err)?;
    write_u32(&mut w, FORMAT_VERSION).map_err(io_err)?;
    write_u32(&mut w, header.len() as u32).map_err(io_err)?;
    w.write_all(&header).map_err(io_err)?;
    for entry in model.params().entries() {
        let name = entry.name.as_bytes();
        write_u32(&mut w, name.len() as u32).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        write_u32(&mut w, entry.value.rank() as u32).map_err(io_err)?;
        for &e in entry.value.shape() {
            w.write_all(&(e as u64).to_le_bytes()).map_err(io_err)?;
        }
        let mut buf = Vec::with_capacity(entry.value.len() * 8);
        for v in entry.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads the next record, or `None` at a clean end of file.
fn read_record(r: &mut impl Read) -> Result<Option<(String, Tensor)>> {
    let mut first = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut first[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::CorruptCheckpoint("file is truncated".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(corrupt(e)),
        }
    }
    let name_len = u32::from_le_bytes(first);
    if name_len == 0 || name_len > MAX_NAME_BYTES {
        return Err(Error::CorruptCheckpoint(format!(
            "implausible parameter name length {name_len}"
        )));
    }
    let mut name = vec![0u8; name_len as usize];
    r.read_exact(&mut name).map_err(corrupt)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::CorruptCheckpoint("parameter name is not UTF-8".into()))?;
    let rank = read_u32(r)?;
    if !(1..=3).contains(&rank) {
        return Err(Error::CorruptCheckpoint(format!(
            "parameter {name:?} has rank {rank}"
        )));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let e = read_u64(r)?;
        if e == 0 || e > u32::MAX as u64 {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter {name:?} has extent {e}"
            )));
        }
        shape.push(e as usize);
    }
    let len: usize = shape.iter().product();
    let mut raw = vec![0u8; len * 8];
    r.read_exact(&mut raw).map_err(corrupt)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Some((
        name.clone(),
        Tensor::new(&shape, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
    )))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(Model, Option<PreprocessorState>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if magic != MAGIC {
        return Err(Error::IncompatibleCheckpoint(format!(
            "bad magic bytes {magic:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if !SUPPORTED_VERSIONS.contains(&version) {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {version} is not supported (supported: {SUPPORTED_VERSIONS:?})"
        )));
    }
    let header_len = read_u32(&mut r)?;
    if header_len > MAX_HEADER_BYTES {
        return Err(Error::CorruptCheckpoint(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header).map_err(corrupt)?;
    let header: Header = serde_json::from_slice(&header)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    let mut model = build_model(&header.model, &mut SeededRng::new(0))?;
    let mut seen = HashSet::new();
    while let Some((name, value)) = read_record(&mut r)? {
        if !seen.insert(name.clone()) {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter {name:?} appears twice"
            )));
        }
        model
            .params_mut()
            .assign(&name, value)
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    }
    let missing: Vec<&str> = model
        .params()
        .entries()
        .iter()
        .filter(|e| !seen.contains(&e.name))
        .map(|e| e.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::CorruptCheckpoint(format!(
            "missing parameters: {}",
            missing.join(", ")
        )));
    }
    Ok((model, header.preprocessor))
}

pub fn save_checkpoint(model: &Model, pre: Option<&PreprocessorState>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(io::BufWriter::new(file), model, pre)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<PreprocessorState>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(io::BufReader::new(file))
}
