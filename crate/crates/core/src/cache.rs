//! Per-window teacher outputs on disk, so distillation never re-runs the
//! language model.
//!
//! ```text
//! magic "TKDC" | version u16 | N u32 | D_m u32 | horizon u32 | count u32 | config hash u64
//! then per window, in index order: A_PE (N×N) followed by E_GT (N×D_m)
//! ```
//!
//! All integers and reals are little-endian. Version 1 stores 32-bit reals;
//! version 2 stores 64-bit reals for exactness tests.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::checkpoint::{write_atomic, Cursor};
use crate::error::{contract, Error, Result};
use crate::teacher::PrivilegedArtifact;
use crate::tensor::Tensor;

pub const CACHE_MAGIC: [u8; 4] = *b"TKDC";
pub const VERSION_F32: u16 = 1;
pub const VERSION_F64: u16 = 2;
pub const HEADER_LEN: u64 = 4 + 2 + 4 * 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub n_vars: u32,
    pub width: u32,
    pub horizon: u32,
    pub count: u32,
    pub config_hash: u64,
    /// 64-bit storage.
    pub wide: bool,
}

impl CacheHeader {
    fn real_bytes(&self) -> u64 {
        if self.wide {
            8
        } else {
            4
        }
    }

    fn reals_per_record(&self) -> u64 {
        let (n, d) = (self.n_vars as u64, self.width as u64);
        n * n + n * d
    }

    pub fn record_len(&self) -> u64 {
        self.reals_per_record() * self.real_bytes()
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN + self.count as u64 * self.record_len()
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN as usize);
        out.extend_from_slice(&CACHE_MAGIC);
        let version = if self.wide { VERSION_F64 } else { VERSION_F32 };
        out.extend_from_slice(&version.to_le_bytes());
        for v in [self.n_vars, self.width, self.horizon, self.count] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        if c.take(4)? != CACHE_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "not a cache file".into(),
            });
        }
        let wide = match c.u16()? {
            VERSION_F32 => false,
            VERSION_F64 => true,
            v => {
                return Err(Error::Format {
                    offset: 4,
                    msg: format!("unsupported cache version {v}"),
                })
            }
        };
        Ok(Self {
            n_vars: c.u32()?,
            width: c.u32()?,
            horizon: c.u32()?,
            count: c.u32()?,
            config_hash: c.u64()?,
            wide,
        })
    }
}

/// Writes artifacts atomically. Their indices must be `0..len` in order and
/// their shapes must match the header.
pub fn cache_write(
    path: &Path,
    n_vars: usize,
    width: usize,
    horizon: usize,
    config_hash: u64,
    wide: bool,
    artifacts: &[PrivilegedArtifact],
) -> Result<()> {
    let header = CacheHeader {
        n_vars: n_vars as u32,
        width: width as u32,
        horizon: horizon as u32,
        count: artifacts.len() as u32,
        config_hash,
        wide,
    };
    let mut out = header.encode();
    out.reserve(header.file_len() as usize - out.len());
    for (i, a) in artifacts.iter().enumerate() {
        if a.index != i {
            return Err(contract(format!("artifact {} stored at position {i}", a.index)));
        }
        if a.a_pe.shape() != [n_vars, n_vars] || a.e_gt.shape() != [n_vars, width] {
            return Err(contract(format!(
                "artifact {i} has shapes {:?} and {:?}",
                a.a_pe.shape(),
                a.e_gt.shape()
            )));
        }
        for &x in a.a_pe.data().iter().chain(a.e_gt.data()) {
            if wide {
                out.extend_from_slice(&x.to_le_bytes());
            } else {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    write_atomic(path, &out)
}

/// Random-access reader; records are read on demand. Safe to share between
/// threads.
#[derive(Debug)]
pub struct CacheReader {
    path: PathBuf,
    header: CacheHeader,
    file: Mutex<File>,
}

impl CacheReader {
    /// Opens and validates a cache. A hash differing from `expected_hash`
    /// means the teacher configuration changed since the cache was written.
    pub fn open(path: &Path, expected_hash: u64) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let actual_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut head = vec![0u8; HEADER_LEN.min(actual_len) as usize];
        file.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
        let header = CacheHeader::decode(&head)?;
        if header.config_hash != expected_hash {
            return Err(Error::StaleCache {
                expected: expected_hash,
                found: header.config_hash,
            });
        }
        if actual_len != header.file_len() {
            return Err(Error::Format {
                offset: actual_len.min(header.file_len()),
                msg: format!(
                    "cache is {actual_len} bytes but its header declares {}",
                    header.file_len()
                ),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            file: Mutex::new(file),
        })
    }

    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    /// The record of window `index`.
    pub fn get(&self, index: usize) -> Result<PrivilegedArtifact> {
        if index >= self.len() {
            return Err(Error::CacheMiss { index });
        }
        let h = &self.header;
        let mut buf = vec![0u8; h.record_len() as usize];
        {
            let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
            f.seek(SeekFrom::Start(HEADER_LEN + index as u64 * h.record_len()))
                .map_err(|e| Error::io(&self.path, e))?;
            f.read_exact(&mut buf).map_err(|e| Error::io(&self.path, e))?;
        }
        let reals: Vec<f64> = if h.wide {
            buf.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        } else {
            buf.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        };
        let (n, d) = (h.n_vars as usize, h.width as usize);
        let (a, e) = reals.split_at(n * n);
        Ok(PrivilegedArtifact {
            index,
            a_pe: Tensor::new([n, n], a.to_vec())?,
            e_gt: Tensor::new([n, d], e.to_vec())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn artifact(index: usize, seed: f64) -> PrivilegedArtifact {
        PrivilegedArtifact {
            index,
            a_pe: Tensor::from_f64([2, 2], &[0.25, 0.75, 0.5, 0.5]).unwrap(),
            e_gt: Tensor::from_fn([2, 3], |i| seed + i as f64 * 0.125),
        }
    }

    #[test]
    fn round_trip_and_random_access() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tkdc");
        let arts: Vec<_> = (0..3).map(|i| artifact(i, i as f64)).collect();
        cache_write(&path, 2, 3, 5, 42, false, &arts).unwrap();
        let r = CacheReader::open(&path, 42).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.get(0).unwrap(), arts[0]);
        assert_eq!(r.get(2).unwrap(), arts[2]);
        assert!(matches!(r.get(3), Err(Error::CacheMiss { index: 3 })));
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, HEADER_LEN + 3 * (4 + 6) * 4);
    }

    #[test]
    fn empty_cache_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tkdc");
        cache_write(&path, 2, 3, 5, 1, true, &[]).unwrap();
        let r = CacheReader::open(&path, 1).unwrap();
        assert!(r.is_empty());
        assert!(r.header().wide);
    }

    #[test]
    fn stale_and_truncated_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tkdc");
        cache_write(&path, 2, 3, 5, 7, false, &[artifact(0, 1.0)]).unwrap();
        let err = CacheReader::open(&path, 8).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        let err = CacheReader::open(&path, 7).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset == bytes.len() as u64 - 1));
    }

    #[test]
    fn misordered_artifacts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tkdc");
        assert!(cache_write(&path, 2, 3, 5, 7, false, &[artifact(1, 0.0)]).is_err());
    }
}
