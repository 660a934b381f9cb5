//! `samples.bin` + `manifest.json` on disk.
//!
//! `samples.bin` is little-endian: magic `PEPVSAMP`, `u32` version, `u64`
//! record count, then per record: `u16` match-id length and UTF-8 bytes, `u8`
//! player count, per player `x, y, vx, vy` as `f64` and a `u8` team flag
//! (1 attacking), ball `x, y, z` as `f64`, `u8` carrier, `u16` dest x and y,
//! `u8` success, `i8` value label.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::samples::{success_percentage, BuildStats, PassSample};
use super::split::DatasetSplit;
use super::{DataError, Result};
use crate::grid::CHANNEL_NAMES;
use crate::state::{GameState, PlayerState, Side, GRID_X, GRID_Y};

pub const MAGIC: &[u8; 8] = b"PEPVSAMP";
pub const VERSION: u32 = 1;
pub const SAMPLES_FILE: &str = "samples.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub grid: [usize; 2],
    pub channels: Vec<String>,
    /// How rasterized features are laid out when the samples are consumed.
    pub feature_layout: String,
    pub count: usize,
    pub success_pct: f64,
    /// Counts of value labels -1, 0, +1.
    pub value_counts: [usize; 3],
    pub sha256: String,
    pub seed: u64,
    pub split: DatasetSplit,
    pub build: BuildStats,
}

fn encode(samples: &[PassSample]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.write_all(MAGIC)?;
    buf.write_u32::<LittleEndian>(VERSION)?;
    buf.write_u64::<LittleEndian>(samples.len() as u64)?;
    for s in samples {
        let id = s.match_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| DataError::Invalid("match id too long".into()))?;
        buf.write_u16::<LittleEndian>(id_len)?;
        buf.write_all(id)?;
        let n = u8::try_from(s.state.players.len()).map_err(|_| DataError::Invalid("too many players".into()))?;
        buf.write_u8(n)?;
        for p in &s.state.players {
            for v in [p.x, p.y, p.vx, p.vy] {
                buf.write_f64::<LittleEndian>(v)?;
            }
            buf.write_u8(u8::from(p.team == Side::Attacking))?;
        }
        for v in s.state.ball {
            buf.write_f64::<LittleEndian>(v)?;
        }
        buf.write_u8(s.state.carrier as u8)?;
        buf.write_u16::<LittleEndian>(s.dest.0)?;
        buf.write_u16::<LittleEndian>(s.dest.1)?;
        buf.write_u8(u8::from(s.success))?;
        buf.write_i8(s.value)?;
    }
    Ok(buf)
}

fn decode(mut r: &[u8]) -> Result<Vec<PassSample>> {
    let corrupt = |what: &str| DataError::Invalid(format!("corrupt samples file: {what}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("short header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(DataError::Invalid(format!("unsupported samples version {version}")));
    }
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut record = || -> std::io::Result<PassSample> {
        let id_len = r.read_u16::<LittleEndian>()? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let n = r.read_u8()? as usize;
        let mut players = Vec::with_capacity(n);
        for _ in 0..n {
            let x = r.read_f64::<LittleEndian>()?;
            let y = r.read_f64::<LittleEndian>()?;
            let vx = r.read_f64::<LittleEndian>()?;
            let vy = r.read_f64::<LittleEndian>()?;
            let team = if r.read_u8()? == 1 { Side::Attacking } else { Side::Defending };
            players.push(PlayerState { x, y, vx, vy, team });
        }
        let ball = [r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?];
        let carrier = r.read_u8()? as usize;
        let dest = (r.read_u16::<LittleEndian>()?, r.read_u16::<LittleEndian>()?);
        let success = r.read_u8()? == 1;
        let value = r.read_i8()?;
        Ok(PassSample {
            match_id: String::from_utf8_lossy(&id).into_owned(),
            state: GameState { players, ball, carrier },
            dest,
            success,
            value,
        })
    };
    for _ in 0..count {
        out.push(record().map_err(|_| corrupt("truncated record"))?);
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes both files into `dir` (created if needed) and returns the manifest.
pub fn write_dataset(dir: &Path, samples: &[PassSample], split: DatasetSplit, build: BuildStats, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let bytes = encode(samples)?;
    let mut value_counts = [0usize; 3];
    for s in samples {
        value_counts[(s.value + 1) as usize] += 1;
    }
    let manifest = Manifest {
        version: VERSION,
        grid: [GRID_X, GRID_Y],
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        feature_layout: "f32 channel-major; index = c*104*68 + ix*68 + iy".into(),
        count: samples.len(),
        success_pct: success_percentage(samples),
        value_counts,
        sha256: sha256_hex(&bytes),
        seed,
        split,
        build,
    };
    fs::write(dir.join(SAMPLES_FILE), &bytes)?;
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    writeln!(f)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<PassSample>)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != VERSION {
        return Err(DataError::Invalid(format!("unsupported manifest version {}", manifest.version)));
    }
    let bytes = fs::read(dir.join(SAMPLES_FILE))?;
    if sha256_hex(&bytes) != manifest.sha256 {
        return Err(DataError::Invalid("samples.bin does not match manifest hash".into()));
    }
    let samples = decode(&bytes)?;
    if samples.len() != manifest.count {
        return Err(DataError::Invalid("sample count differs from manifest".into()));
    }
    Ok((manifest, samples))
}
