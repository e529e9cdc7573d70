//! Binary checkpoint format.
//!
//! ```text
//! b"NUVO1"
//! u32 version (1)
//! u32 n, pe_degree_c, pe_degree_ts, texture_res, layers, width
//! u8  include_input
//! u32 mlp_count (2n + 1)
//! f64 normalization centre x, y, z, scale
//! f32 parameters: c, t_1..t_n, s_1..s_n, sigma, N_1..N_n
//!     (each MLP layer as its in x out row-major weight, then bias)
//! ```
//! All integers and reals are little-endian.

use std::fs;
use std::path::Path;

use super::{AtlasModel, ModelConfig};
use crate::error::{Error, Result};
use crate::geometry::{Normalization, Vec3};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"NUVO1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &AtlasModel) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(64 + 4 * model.store.scalar_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        cfg.n_charts as u32,
        cfg.pe_degree_c as u32,
        cfg.pe_degree_ts as u32,
        cfg.texture_res as u32,
        cfg.layers as u32,
        cfg.width as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(u8::from(cfg.include_input));
    out.extend_from_slice(&(model.mlp_count() as u32).to_le_bytes());
    let nz = &model.normalization;
    for v in [nz.center.x, nz.center.y, nz.center.z, nz.scale] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in model.store.iter() {
        for v in &p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated file: needed {end} bytes, have {}", self.bytes.len())))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<AtlasModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len()).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut header = [0usize; 6];
    for h in &mut header {
        *h = r.u32()? as usize;
    }
    let [n_charts, pe_degree_c, pe_degree_ts, texture_res, layers, width] = header;
    let include_input = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("invalid include_input flag {b}"))),
    };
    let mlp_count = r.u32()? as usize;
    if mlp_count != 2 * n_charts + 1 {
        return Err(Error::Checkpoint(format!(
            "header declares {mlp_count} MLPs for {n_charts} charts"
        )));
    }
    let center = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
    let scale = r.f64()?;
    let config = ModelConfig {
        n_charts,
        texture_res,
        layers,
        width,
        pe_degree_c,
        pe_degree_ts,
        include_input,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
    // guard the allocation below against absurd headers
    let declared = layers.saturating_mul(width).saturating_mul(width).saturating_mul(mlp_count);
    if declared > bytes.len() || texture_res.saturating_mul(texture_res) > bytes.len() {
        return Err(Error::Checkpoint("truncated file: header sizes exceed file length".into()));
    }
    let mut model = AtlasModel::new(config, 0)?;
    model.normalization = Normalization { center, scale };
    for p in model.store.iter_mut() {
        let raw = r.take(4 * p.values.len())?;
        for (v, b) in p.values.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn checkpoint(model: &AtlasModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn restore(path: impl AsRef<Path>) -> Result<AtlasModel> {
    read_checkpoint(&fs::read(path)?)
}
