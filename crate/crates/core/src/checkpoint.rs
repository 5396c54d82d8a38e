//! Versioned binary model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   8 bytes  "RBKMODEL"
//! version u32      1
//! kind    u32      1 = linear, 2 = latent
//! linear: dim u64, then dim f64 values of omega
//! latent: dim u64, contexts u64, items u64, then U rows, then V rows
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load cycle is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lcr::LatentModel;
use crate::ltr::LinearModel;

pub const MAGIC: &[u8; 8] = b"RBKMODEL";
pub const VERSION: u32 = 1;

const KIND_LINEAR: u32 = 1;
const KIND_LATENT: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Linear(LinearModel),
    Latent(LatentModel),
}

impl Checkpoint {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Checkpoint::Linear(_) => "linear",
            Checkpoint::Latent(_) => "latent",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let values: &[&[f64]] = match self {
            Checkpoint::Linear(m) => {
                out.extend_from_slice(&KIND_LINEAR.to_le_bytes());
                out.extend_from_slice(&(m.omega.len() as u64).to_le_bytes());
                &[&m.omega]
            }
            Checkpoint::Latent(m) => {
                out.extend_from_slice(&KIND_LATENT.to_le_bytes());
                for n in [m.dim, m.num_contexts, m.num_items] {
                    out.extend_from_slice(&(n as u64).to_le_bytes());
                }
                &[&m.u, &m.v]
            }
        };
        for block in values {
            for v in block.iter() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let ckpt = match r.u32()? {
            KIND_LINEAR => {
                let dim = r.count()?;
                Checkpoint::Linear(LinearModel { omega: r.f64s(dim)? })
            }
            KIND_LATENT => {
                let dim = r.count()?;
                let num_contexts = r.count()?;
                let num_items = r.count()?;
                let nu = dim.checked_mul(num_contexts).ok_or_else(too_large)?;
                let nv = dim.checked_mul(num_items).ok_or_else(too_large)?;
                let u = r.f64s(nu)?;
                let v = r.f64s(nv)?;
                Checkpoint::Latent(LatentModel { dim, num_contexts, num_items, u, v })
            }
            other => return Err(Error::Checkpoint(format!("unknown model kind {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ckpt)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn into_linear(self) -> Result<LinearModel> {
        match self {
            Checkpoint::Linear(m) => Ok(m),
            other => Err(Error::Checkpoint(format!("expected a linear model, found {}", other.kind_name()))),
        }
    }

    pub fn into_latent(self) -> Result<LatentModel> {
        match self {
            Checkpoint::Latent(m) => Ok(m),
            other => Err(Error::Checkpoint(format!("expected a latent model, found {}", other.kind_name()))),
        }
    }
}

fn too_large() -> Error {
    Error::Checkpoint("model dimensions overflow".into())
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn count(&mut self) -> Result<usize> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(n).map_err(|_| too_large())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(too_large)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}
