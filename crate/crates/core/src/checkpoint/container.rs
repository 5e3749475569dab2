//! Single-file tensor container.
//!
//! ```text
//! [u64 LE header length N][N bytes UTF-8 JSON header][raw LE tensor bytes]
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets"}`
//! (offsets relative to the start of the data region) and may carry a
//! `"__metadata__"` string map. Headers are space-padded to a multiple of 8
//! bytes so the data region stays aligned.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{DType, NamedTensor, TensorData};

pub(crate) const METADATA_KEY: &str = "__metadata__";

/// Header larger than this is treated as corrupt.
const MAX_HEADER_BYTES: u64 = 100 * 1024 * 1024;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Decodes a whole container held in memory.
pub fn decode(bytes: &[u8]) -> Result<(Vec<NamedTensor>, BTreeMap<String, String>)> {
    if bytes.len() < 8 {
        return Err(Error::format("file is shorter than the 8-byte header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    if header_len > MAX_HEADER_BYTES || 8 + header_len > bytes.len() as u64 {
        return Err(Error::format(format!(
            "declared header length {header_len} exceeds file length {}",
            bytes.len()
        )));
    }
    let header_end = 8 + header_len as usize;
    let header: BTreeMap<String, Value> = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::format(format!("malformed header: {e}")))?;
    let data = &bytes[header_end..];

    let mut metadata = BTreeMap::new();
    let mut spans = Vec::new();
    let mut tensors = Vec::with_capacity(header.len());
    for (name, value) in header {
        if name == METADATA_KEY {
            metadata = parse_metadata(value)?;
            continue;
        }
        let entry: TensorEntry = serde_json::from_value(value)
            .map_err(|e| Error::format(format!("bad header entry for `{name}`: {e}")))?;
        let dtype: DType = entry
            .dtype
            .parse()
            .map_err(|_| Error::format(format!("tensor `{name}` has unsupported dtype `{}`", entry.dtype)))?;
        let [start, end] = entry.data_offsets;
        if end < start || end > data.len() {
            return Err(Error::format(format!(
                "tensor `{name}` offsets [{start}, {end}] fall outside the {}-byte data region",
                data.len()
            )));
        }
        let numel: usize = entry.shape.iter().product();
        if numel * dtype.size() != end - start {
            return Err(Error::format(format!(
                "tensor `{name}` spans {} bytes but shape {:?} of {dtype} needs {}",
                end - start,
                entry.shape,
                numel * dtype.size()
            )));
        }
        spans.push((start, end, name.clone()));
        let data = TensorData::from_le_bytes(dtype, &data[start..end])?;
        tensors.push(
            NamedTensor::new(name, entry.shape, data).map_err(|e| Error::format(e.to_string()))?,
        );
    }

    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::format(format!(
                "tensors `{}` and `{}` overlap in the data region",
                pair[0].2, pair[1].2
            )));
        }
    }
    Ok((tensors, metadata))
}

fn parse_metadata(value: Value) -> Result<BTreeMap<String, String>> {
    let Value::Object(map) = value else {
        return Err(Error::format("__metadata__ must be an object"));
    };
    map.into_iter()
        .map(|(k, v)| match v {
            Value::String(s) => Ok((k, s)),
            other => Err(Error::format(format!(
                "__metadata__ value for `{k}` must be a string, got {other}"
            ))),
        })
        .collect()
}

/// Builds the padded header for `tensors` laid out back to back in the given order.
fn header_bytes(tensors: &[&NamedTensor], metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        header.insert(
            METADATA_KEY.to_string(),
            serde_json::to_value(metadata).expect("string map serializes"),
        );
    }
    let mut offset = 0;
    for t in tensors {
        let entry = TensorEntry {
            dtype: t.dtype().as_str().to_string(),
            shape: t.shape().to_vec(),
            data_offsets: [offset, offset + t.byte_len()],
        };
        offset += t.byte_len();
        header.insert(
            t.name().to_string(),
            serde_json::to_value(entry).expect("entry serializes"),
        );
    }
    let mut bytes = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
    while !bytes.len().is_multiple_of(8) {
        bytes.push(b' ');
    }
    bytes
}

/// Streams a container to `out`; tensors are laid out in the order given.
pub fn write<W: Write>(
    out: &mut W,
    tensors: &[&NamedTensor],
    metadata: &BTreeMap<String, String>,
) -> std::io::Result<()> {
    let header = header_bytes(tensors, metadata);
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::new();
    for t in tensors {
        buf.clear();
        t.data().write_le_bytes(&mut buf);
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn encode(tensors: &[&NamedTensor], metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let mut out = Vec::new();
    write(&mut out, tensors, metadata).expect("writing to a Vec cannot fail");
    out
}
