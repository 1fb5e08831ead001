//! Binary tensor (`TNSR`) and index-map (`IMAP`) files.
//!
//! Both formats start with a 4-byte magic, a little-endian `u16` version
//! (always 1), and a rank byte followed by `rank` little-endian `u32` dims.
//! `TNSR` inserts a dtype byte (0 = f32, 1 = f64) before the rank. Payloads
//! are row-major little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FeatureStack, FlowDirection, FlowField, FlowSet, LabelMap, SuperpixelStack};

pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";
pub const IMAP_MAGIC: &[u8; 4] = b"IMAP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

/// A decoded `TNSR` payload; values are widened to f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

/// A decoded `IMAP` payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    pub dims: Vec<usize>,
    pub data: Vec<u32>,
}

fn header(magic: &[u8; 4], dtype: Option<Dtype>, dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    if let Some(dtype) = dtype {
        out.push(dtype as u8);
    }
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

pub fn encode_tnsr(dims: &[usize], data: &[f64], dtype: Dtype) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let width = if dtype == Dtype::F32 { 4 } else { 8 };
    let mut out = header(TNSR_MAGIC, Some(dtype), dims);
    out.reserve(data.len() * width);
    for &v in data {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn encode_imap(dims: &[usize], data: &[u32]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = header(IMAP_MAGIC, None, dims);
    out.reserve(data.len() * 4);
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.name, "truncated file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn preamble(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::format(
                self.name,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(self.name, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.name,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_tnsr(bytes: &[u8], name: &Path) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0, name };
    cur.preamble(TNSR_MAGIC)?;
    let dtype = match cur.u8()? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(Error::format(name, format!("unknown dtype {other}"))),
    };
    let dims = cur.dims()?;
    let count: usize = dims.iter().product();
    let data = match dtype {
        Dtype::F32 => cur
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => cur
            .take(count * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    cur.finish()?;
    Ok(Tensor { dims, dtype, data })
}

pub fn decode_imap(bytes: &[u8], name: &Path) -> Result<IndexMap> {
    let mut cur = Cursor { bytes, pos: 0, name };
    cur.preamble(IMAP_MAGIC)?;
    let dims = cur.dims()?;
    let count: usize = dims.iter().product();
    let data = cur
        .take(count * 4)?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    cur.finish()?;
    Ok(IndexMap { dims, data })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn read_tnsr(path: &Path) -> Result<Tensor> {
    decode_tnsr(&read_bytes(path)?, path)
}

pub fn read_imap(path: &Path) -> Result<IndexMap> {
    decode_imap(&read_bytes(path)?, path)
}

fn expect_rank(path: &Path, dims: &[usize], rank: usize) -> Result<()> {
    if dims.len() != rank {
        return Err(Error::format(
            path,
            format!("expected rank {rank}, found rank {}", dims.len()),
        ));
    }
    Ok(())
}

pub fn save_features(path: &Path, features: &FeatureStack) -> Result<()> {
    write_bytes(path, &encode_tnsr(&features.shape(), features.data(), Dtype::F64))
}

pub fn load_features(path: &Path) -> Result<FeatureStack> {
    let t = read_tnsr(path)?;
    expect_rank(path, &t.dims, 4)?;
    FeatureStack::new(t.dims[0], t.dims[1], t.dims[2], t.dims[3], t.data)
}

/// Flow sets are stored as one rank-5 tensor `(2, N - 1, H, W, 2)`; the
/// leading axis is 0 for forward and 1 for backward flow.
pub fn save_flows(path: &Path, flows: &FlowSet, height: usize, width: usize) -> Result<()> {
    let steps = flows.steps();
    let mut data = Vec::with_capacity(2 * steps * height * width * 2);
    for f in flows.forward.iter().chain(&flows.backward) {
        data.extend_from_slice(f.data());
    }
    write_bytes(
        path,
        &encode_tnsr(&[2, steps, height, width, 2], &data, Dtype::F64),
    )
}

pub fn load_flows(path: &Path) -> Result<FlowSet> {
    let t = read_tnsr(path)?;
    expect_rank(path, &t.dims, 5)?;
    if t.dims[0] != 2 || t.dims[4] != 2 {
        return Err(Error::format(path, "flow tensor must be (2, N-1, H, W, 2)"));
    }
    let (steps, h, w) = (t.dims[1], t.dims[2], t.dims[3]);
    let field = h * w * 2;
    let mut fields = t.data.chunks_exact(field.max(1));
    let mut take = |direction| -> Result<Vec<FlowField>> {
        (0..steps)
            .map(|_| FlowField::new(h, w, direction, fields.next().unwrap().to_vec()))
            .collect()
    };
    let forward = take(FlowDirection::Forward)?;
    let backward = take(FlowDirection::Backward)?;
    Ok(FlowSet { forward, backward })
}

/// Superpixel stacks are stored `(N, H, W)`; `P` is recovered as one past
/// the largest non-sentinel index.
pub fn save_superpixels(path: &Path, superpixels: &SuperpixelStack) -> Result<()> {
    let dims = [superpixels.frames(), superpixels.height(), superpixels.width()];
    write_bytes(path, &encode_imap(&dims, superpixels.labels()))
}

pub fn load_superpixels(path: &Path) -> Result<SuperpixelStack> {
    let m = read_imap(path)?;
    expect_rank(path, &m.dims, 3)?;
    SuperpixelStack::from_labels(m.dims[0], m.dims[1], m.dims[2], m.data)
}

/// Label maps of equal size are stored together as `(N, H, W)`.
pub fn save_labels(path: &Path, labels: &[LabelMap]) -> Result<()> {
    let (h, w) = labels.first().map_or((0, 0), |l| (l.height(), l.width()));
    let data: Vec<u32> = labels.iter().flat_map(|l| l.labels().iter().copied()).collect();
    write_bytes(path, &encode_imap(&[labels.len(), h, w], &data))
}

/// Reads `(N, H, W)` or a single `(H, W)` map.
pub fn load_labels(path: &Path) -> Result<Vec<LabelMap>> {
    let m = read_imap(path)?;
    let (n, h, w) = match *m.dims.as_slice() {
        [h, w] => (1, h, w),
        [n, h, w] => (n, h, w),
        _ => return Err(Error::format(path, "label map must have rank 2 or 3")),
    };
    m.data
        .chunks_exact((h * w).max(1))
        .take(n)
        .map(|c| LabelMap::new(h, w, c.to_vec()))
        .collect()
}
