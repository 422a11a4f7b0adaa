//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IRLR" | u32 version (=1) | u32 array count
//! per array: u16 name length | UTF-8 name | u8 rank | rank × u32 dims | f64 values (row-major)
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::numeric::{Head, Layer, Mlp};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IRLR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "array {name}: dims {dims:?} hold {expected} values, got {}",
                data.len()
            )));
        }
        Ok(NamedArray { name, dims, data })
    }

    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        let n = data.len();
        NamedArray {
            name: name.into(),
            dims: vec![n],
            data,
        }
    }

    pub fn matrix(name: impl Into<String>, m: &Array2<f64>) -> Self {
        NamedArray {
            name: name.into(),
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::shape(format!("array {} is not rank 2", self.name)));
        }
        Array2::from_shape_vec((self.dims[0], self.dims[1]), self.data.clone())
            .map_err(|e| Error::shape(e.to_string()))
    }

    pub fn to_vector(&self) -> Result<Array1<f64>> {
        if self.dims.len() != 1 {
            return Err(Error::shape(format!("array {} is not rank 1", self.name)));
        }
        Ok(Array1::from(self.data.clone()))
    }
}

/// Looks up an array by name.
pub fn find<'a>(arrays: &'a [NamedArray], name: &str) -> Result<&'a NamedArray> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Format(format!("checkpoint has no array named {name}")))
}

pub fn encode(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut seen = std::collections::HashSet::new();
    for a in arrays {
        if !seen.insert(a.name.as_str()) {
            return Err(Error::invalid(format!("duplicate array name {}", a.name)));
        }
        if a.name.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("array name too long: {}", a.name.len())));
        }
        if a.dims.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("array {} has rank {}", a.name, a.dims.len())));
        }
        if a.dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::invalid(format!("array {} has a dimension over u32", a.name)));
        }
        if a.dims.iter().product::<usize>() != a.data.len() {
            return Err(Error::shape(format!("array {} dims disagree with data", a.name)));
        }
    }
    let count = u32::try_from(arrays.len()).map_err(|_| Error::invalid("too many arrays"))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.push(a.dims.len() as u8);
        for &d in &a.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Corrupt("CRC32 mismatch".into()));
    }

    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(1024));
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("array name is not UTF-8".into()))?
            .to_owned();
        if !seen.insert(name.clone()) {
            return Err(Error::invalid(format!("duplicate array name {name}")));
        }
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("array {name} is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(NamedArray { name, dims, data });
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after last array".into()));
    }
    Ok(arrays)
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, arrays: &[NamedArray]) -> Result<()> {
    write_atomic(path.as_ref(), &encode(arrays)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<NamedArray>> {
    decode(&fs::read(path)?)
}

/// `prefix.W{k}` and `prefix.b{k}` for every layer.
pub fn mlp_arrays(prefix: &str, mlp: &Mlp) -> Vec<NamedArray> {
    let mut out = Vec::with_capacity(mlp.layers.len() * 2);
    for (k, l) in mlp.layers.iter().enumerate() {
        out.push(NamedArray::matrix(format!("{prefix}.W{k}"), &l.weights));
        out.push(NamedArray::vector(format!("{prefix}.b{k}"), l.bias.to_vec()));
    }
    out
}

pub fn mlp_from_arrays(prefix: &str, arrays: &[NamedArray], head: Head) -> Result<Mlp> {
    let mut layers = Vec::new();
    for k in 0.. {
        let w_name = format!("{prefix}.W{k}");
        let Some(w) = arrays.iter().find(|a| a.name == w_name) else {
            break;
        };
        let b = find(arrays, &format!("{prefix}.b{k}"))?;
        layers.push(Layer {
            weights: w.to_matrix()?,
            bias: b.to_vector()?,
        });
    }
    if layers.is_empty() {
        return Err(Error::Format(format!("checkpoint has no {prefix} network")));
    }
    Mlp::from_layers(layers, head)
}
