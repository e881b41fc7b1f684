//! Self-describing tensor file format.
//!
//! A file is an ASCII header followed by a raw little-endian payload:
//!
//! ```text
//! gkpd-tensor v1
//! name: conv1.weight
//! dtype: f64
//! shape: 64,3,7,7
//! byte_order: little
//! data_offset: 0000000105
//! end
//! <payload: prod(shape) scalars, row-major>
//! ```
//!
//! `data_offset` is the absolute byte offset of the payload and is written
//! with exactly ten digits. The payload must run to the end of the file.
//! `f32` payloads are widened to `f64` on load.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, DenseTensor};

pub const MAGIC: &str = "gkpd-tensor v1";
const MAX_HEADER_BYTES: u64 = 64 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unsupported dtype {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub name: String,
    pub dtype: Dtype,
    pub tensor: DenseTensor,
}

impl TensorFile {
    pub fn new(name: impl Into<String>, dtype: Dtype, tensor: DenseTensor) -> Self {
        Self {
            name: name.into(),
            dtype,
            tensor,
        }
    }
}

fn header_text(name: &str, dtype: Dtype, shape: &[usize]) -> Result<String> {
    if name.contains(['\n', '\r']) {
        return Err(Error::Format("tensor name must not contain line breaks".into()));
    }
    let shape: Vec<String> = shape.iter().map(usize::to_string).collect();
    let body = format!(
        "{MAGIC}\nname: {name}\ndtype: {}\nshape: {}\nbyte_order: little\n",
        dtype.as_str(),
        shape.join(",")
    );
    let offset_line_len = "data_offset: ".len() + 10 + 1;
    let offset = body.len() + offset_line_len + "end\n".len();
    Ok(format!("{body}data_offset: {offset:010}\nend\n"))
}

/// Serializes to bytes. `f32` output rounds each value to nearest.
pub fn encode(file: &TensorFile) -> Result<Vec<u8>> {
    let header = header_text(&file.name, file.dtype, file.tensor.shape())?;
    let mut out = header.into_bytes();
    out.reserve(file.tensor.len() * file.dtype.size());
    match file.dtype {
        Dtype::F64 => {
            for v in file.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &v in file.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
struct Header {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    data_offset: u64,
}

fn parse_header(reader: &mut impl BufRead) -> Result<Header> {
    let mut consumed = 0u64;
    let mut next_line = |reader: &mut dyn BufRead| -> Result<String> {
        let mut buf = Vec::new();
        let n = reader
            .take(MAX_HEADER_BYTES.saturating_sub(consumed))
            .read_until(b'\n', &mut buf)?;
        consumed += n as u64;
        if n == 0 || buf.last() != Some(&b'\n') {
            return Err(Error::Format("truncated or oversized header".into()));
        }
        buf.pop();
        String::from_utf8(buf).map_err(|_| Error::Format("header is not valid UTF-8".into()))
    };

    if next_line(reader)? != MAGIC {
        return Err(Error::Format(format!("missing {MAGIC:?} magic line")));
    }
    let (mut name, mut dtype, mut shape, mut byte_order, mut data_offset) = (None, None, None, None, None);
    loop {
        let line = next_line(reader)?;
        if line == "end" {
            break;
        }
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| Error::Format(format!("malformed header line {line:?}")))?;
        let slot_taken = match key {
            "name" => name.replace(value.to_string()).is_some(),
            "dtype" => dtype.replace(value.parse::<Dtype>()?).is_some(),
            "shape" => shape.replace(parse_shape(value)?).is_some(),
            "byte_order" => byte_order.replace(value.to_string()).is_some(),
            "data_offset" => data_offset
                .replace(
                    value
                        .parse::<u64>()
                        .map_err(|_| Error::Format(format!("bad data_offset {value:?}")))?,
                )
                .is_some(),
            other => return Err(Error::Format(format!("unknown header key {other:?}"))),
        };
        if slot_taken {
            return Err(Error::Format(format!("duplicate header key {key:?}")));
        }
    }
    let missing = |k: &str| Error::Format(format!("header lacks {k:?}"));
    if byte_order.ok_or_else(|| missing("byte_order"))? != "little" {
        return Err(Error::Format("only little-endian payloads are supported".into()));
    }
    let header = Header {
        name: name.ok_or_else(|| missing("name"))?,
        dtype: dtype.ok_or_else(|| missing("dtype"))?,
        shape: shape.ok_or_else(|| missing("shape"))?,
        data_offset: data_offset.ok_or_else(|| missing("data_offset"))?,
    };
    if header.data_offset < consumed {
        return Err(Error::Format(format!(
            "data_offset {} points inside the header ({consumed} bytes)",
            header.data_offset
        )));
    }
    Ok(header)
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let shape = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Format(format!("bad shape entry {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(shape)
}

fn decode_payload(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
    }
}

fn payload_len(header: &Header) -> Result<u64> {
    numel(&header.shape)
        .checked_mul(header.dtype.size())
        .map(|n| n as u64)
        .ok_or_else(|| Error::Format("payload size overflows".into()))
}

/// Parses a complete in-memory file.
pub fn decode(bytes: &[u8]) -> Result<TensorFile> {
    let mut cursor = std::io::Cursor::new(bytes);
    let header = parse_header(&mut cursor)?;
    let expected = payload_len(&header)?;
    let available = (bytes.len() as u64).saturating_sub(header.data_offset);
    if header.data_offset > bytes.len() as u64 || available != expected {
        return Err(Error::Format(format!(
            "payload holds {available} bytes, shape {:?} as {} needs {expected}",
            header.shape,
            header.dtype.as_str()
        )));
    }
    let payload = &bytes[header.data_offset as usize..];
    let tensor = DenseTensor::new(header.shape, decode_payload(payload, header.dtype))?;
    Ok(TensorFile::new(header.name, header.dtype, tensor))
}

/// Reads a tensor file. The header is fully validated against the file
/// size before any payload byte is read.
pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut reader = BufReader::new(file);
    let header = parse_header(&mut reader)?;
    let expected = payload_len(&header)?;
    if header.data_offset > file_len || file_len - header.data_offset != expected {
        return Err(Error::Format(format!(
            "{}: payload holds {} bytes, shape {:?} as {} needs {expected}",
            path.display(),
            file_len.saturating_sub(header.data_offset),
            header.shape,
            header.dtype.as_str()
        )));
    }
    reader.seek(SeekFrom::Start(header.data_offset))?;
    let mut payload = vec![0u8; expected as usize];
    reader.read_exact(&mut payload)?;
    let tensor = DenseTensor::new(header.shape, decode_payload(&payload, header.dtype))?;
    Ok(TensorFile::new(header.name, header.dtype, tensor))
}

pub fn write_tensor_file(path: impl AsRef<Path>, file: &TensorFile) -> Result<()> {
    let bytes = encode(file)?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}
