//! Frame/feature matrix files and the checksummed container used for model
//! and PCA files.
//!
//! Binary matrices: `FMAT` magic, then little-endian u32 version (1), u32 T,
//! u32 D, then `T·D` little-endian f32 values row-major. Files ending in
//! `.csv` hold one frame per line instead.
//!
//! Containers: a header line `<TAG> sha256:<hex>` followed by a JSON body.
//! The digest covers the body bytes exactly; numeric arrays inside the body
//! are base64-encoded little-endian f64 so parameters round-trip bit-exactly.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, ArrayView2, Array2, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FrameMatrix;

pub const FRAME_MAGIC: &[u8; 4] = b"FMAT";
pub const FRAME_VERSION: u32 = 1;

/// `fs::read` with the path in the error message.
pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<FrameMatrix> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let data = if is_csv(path) {
        let text = String::from_utf8(read_bytes(path)?).map_err(|_| Error::Format("CSV is not UTF-8".into()))?;
        parse_csv(&text)?
    } else {
        decode_fmat(&read_bytes(path)?)?
    };
    FrameMatrix::new(data, source)
}

/// Writes any matrix (frames or extracted features) in the format implied
/// by the extension.
pub fn write_features(path: impl AsRef<Path>, matrix: ArrayView2<f64>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        let mut out = String::new();
        for row in matrix.rows() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out.into_bytes()
    } else {
        encode_fmat(matrix)?
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_fmat(matrix: ArrayView2<f64>) -> Result<Vec<u8>> {
    let (t, d) = matrix.dim();
    let to_u32 = |n: usize| u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")));
    let mut out = Vec::with_capacity(16 + 4 * t * d);
    out.extend_from_slice(FRAME_MAGIC);
    out.write_u32::<LittleEndian>(FRAME_VERSION)?;
    out.write_u32::<LittleEndian>(to_u32(t)?)?;
    out.write_u32::<LittleEndian>(to_u32(d)?)?;
    for &x in matrix.iter() {
        out.write_f32::<LittleEndian>(x as f32)?;
    }
    Ok(out)
}

pub fn decode_fmat(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Format("file too short for an FMAT header".into()));
    }
    if &bytes[..4] != FRAME_MAGIC {
        return Err(Error::Format("magic mismatch: not an FMAT file".into()));
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let version = cur.read_u32::<LittleEndian>()?;
    if version != FRAME_VERSION {
        return Err(Error::Format(format!("unsupported FMAT version {version}")));
    }
    let t = cur.read_u32::<LittleEndian>()? as usize;
    let d = cur.read_u32::<LittleEndian>()? as usize;
    if t == 0 || d == 0 {
        return Err(Error::Empty("frame matrix".into()));
    }
    let payload = bytes.len() - 16;
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("declared size overflows".into()))?;
    if payload != expected {
        return Err(Error::Format(format!(
            "length mismatch: header declares {t}×{d} values ({expected} bytes), payload has {payload} bytes"
        )));
    }
    let mut data = Array2::zeros((t, d));
    for ((row, col), slot) in data.indexed_iter_mut() {
        let x = cur.read_f32::<LittleEndian>()?;
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("frame matrix at row {row}, column {col}")));
        }
        *slot = x as f64;
    }
    Ok(data)
}

fn parse_csv(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, field)| {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {line_no}, column {col}: cannot parse {field:?}")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::NonFinite(format!("frame matrix at row {line_no}, column {col}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "row {line_no} has {} columns, expected {}",
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("frame matrix".into()));
    }
    let d = rows[0].len();
    Ok(Array2::from_shape_vec((rows.len(), d), rows.concat()).expect("rows have equal length"))
}

/// A numeric array stored losslessly inside a JSON body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub shape: Vec<usize>,
    pub data: String,
}

impl Block {
    pub fn encode<'a>(shape: &[usize], values: impl IntoIterator<Item = &'a f64>) -> Self {
        let mut bytes = Vec::new();
        for &x in values {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        Block { shape: shape.to_vec(), data: STANDARD.encode(bytes) }
    }

    pub fn from_array(a: &ArrayD<f64>) -> Self {
        Self::encode(a.shape(), a.iter())
    }

    pub fn decode(&self, name: &str) -> Result<ArrayD<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Format(format!("block {name}: bad base64 ({e})")))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != expected * 8 {
            return Err(Error::Shape(format!(
                "block {name}: shape {:?} needs {expected} values, found {}",
                self.shape,
                bytes.len() / 8
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(ArrayD::from_shape_vec(IxDyn(&self.shape), values).expect("length checked"))
    }
}

pub fn write_container(path: impl AsRef<Path>, tag: &str, body: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(body).map_err(|e| Error::Format(e.to_string()))?;
    let digest = hex_digest(json.as_bytes());
    let mut file = fs::File::create(path)?;
    writeln!(file, "{tag} sha256:{digest}")?;
    file.write_all(json.as_bytes())?;
    Ok(())
}

/// Reads and verifies a container, returning its JSON body.
pub fn read_container(path: impl AsRef<Path>, tag: &str) -> Result<serde_json::Value> {
    let bytes = read_bytes(path.as_ref())?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::Checksum)?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let expected = header
        .strip_prefix(tag)
        .and_then(|rest| rest.trim().strip_prefix("sha256:"))
        .ok_or_else(|| Error::Format(format!("not a {tag} file")))?;
    let body = &bytes[newline + 1..];
    if hex_digest(body) != expected {
        return Err(Error::Checksum);
    }
    serde_json::from_slice(body).map_err(|e| Error::Format(e.to_string()))
}

/// First line of a file, if it looks like a container header.
pub fn container_tag(path: impl AsRef<Path>) -> Result<Option<String>> {
    let bytes = read_bytes(path.as_ref())?;
    let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    Ok(std::str::from_utf8(&bytes[..end])
        .ok()
        .and_then(|line| line.split_whitespace().next())
        .map(str::to_string))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
