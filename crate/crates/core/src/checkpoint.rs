//! Flat little-endian parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes   "TKDW" (language model), "TKDT" (teacher), "TKDS" (student)
//! version      u16       1
//! echo_len     u32       byte length of the config echo
//! echo         UTF-8     `key = value` lines describing the producing run
//! count        u32       number of tensors
//! per tensor:  name_len u16, name bytes, rank u8, rank × u32 dims
//! data         f32 × Σ numel, tensors in declared order
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

pub const MAGIC_CLM: [u8; 4] = *b"TKDW";
pub const MAGIC_TEACHER: [u8; 4] = *b"TKDT";
pub const MAGIC_STUDENT: [u8; 4] = *b"TKDS";
pub const VERSION: u16 = 1;

/// A decoded parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub magic: [u8; 4],
    pub echo: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn encode<T: Real>(magic: [u8; 4], echo: &str, store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, t) in store.iter() {
        for &x in t.data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save<T: Real>(path: &Path, magic: [u8; 4], echo: &str, store: &ParamStore<T>) -> Result<()> {
    write_atomic(path, &encode(magic, echo, store))
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn position(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!("truncated: wanted {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamFile> {
    let mut c = Cursor::new(bytes);
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let echo_len = c.u32()? as usize;
    let at = c.position();
    let echo = String::from_utf8(c.take(echo_len)?.to_vec()).map_err(|_| Error::Format {
        offset: at,
        msg: "config echo is not UTF-8".into(),
    })?;
    let count = c.u32()? as usize;
    let mut heads = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u16()? as usize;
        let at = c.position();
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            msg: "tensor name is not UTF-8".into(),
        })?;
        let rank = c.u8()? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        heads.push((name, shape));
    }
    let mut tensors = Vec::with_capacity(heads.len());
    for (name, shape) in heads {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
        tensors.push((name, shape, data));
    }
    if !c.is_empty() {
        return Err(Error::Format {
            offset: c.position(),
            msg: "trailing bytes".into(),
        });
    }
    Ok(ParamFile {
        magic,
        echo,
        tensors,
    })
}

pub fn load(path: &Path, magic: [u8; 4]) -> Result<ParamFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file = decode(&bytes)?;
    if file.magic != magic {
        return Err(Error::Format {
            offset: 0,
            msg: format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&file.magic)
            ),
        });
    }
    Ok(file)
}

impl ParamFile {
    /// Copies values into a store with exactly the same names and shapes.
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let layout_err = |msg: String| Error::Format { offset: 0, msg };
        if self.tensors.len() != store.len() {
            return Err(layout_err(format!(
                "file has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store
            .iter()
            .map(|(name, t)| (name.to_string(), t.shape().to_vec()))
            .collect();
        for ((name, shape), (fname, fshape, data)) in ids.iter().zip(&self.tensors) {
            if name != fname || shape != fshape {
                return Err(layout_err(format!(
                    "tensor {fname} {fshape:?} does not match model {name} {shape:?}"
                )));
            }
            let id = store.id_of(name).expect("name from store");
            let values: Vec<T> = data.iter().map(|&x| T::lit(x as f64)).collect();
            store.set(id, &values)?;
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| Tensor::new(s.clone(), d.clone()).expect("decoded shape"))
    }
}
