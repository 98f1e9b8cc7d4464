//! Versioned binary checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "PVMCKPT1"            8-byte magic
//! u32 version           currently 1
//! section*              4-byte tag, u64 payload length, payload
//! ```
//!
//! Sections, in order:
//!
//! | tag    | payload |
//! |--------|---------|
//! | `CONF` | model config as UTF-8 JSON |
//! | `STEP` | u64 step counter, u64 model seed |
//! | `PUBL` | u64 count + f64 published hidden, u64 count + f64 published readout |
//! | `UNIT` | u64 unit count, then per unit eight arrays (u64 count + f64 values): `w_hidden`, `w_predict`, `w_readout`, `prev_signal`, `integral`, `prev_prediction`, `signal`, `context` |
//! | `HASH` | SHA-256 of every byte before this section |
//!
//! Weight matrices are row-major, one row per output, bias last. Stepping
//! draws no random numbers, so the seed is the only RNG state a checkpoint
//! needs. The worker count is not stored: it does not affect the state.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{parse_config, PvmConfig};
use crate::error::{PvmError, Result};
use crate::executor::{geometry_of, System};
use crate::mlp::Mlp;
use crate::topology::Topology;
use crate::unit::{UnitBuffers, UnitState};

pub const MAGIC: &[u8; 8] = b"PVMCKPT1";
pub const VERSION: u32 = 1;

const SECTIONS: [&str; 5] = ["CONF", "STEP", "PUBL", "UNIT", "HASH"];

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, values: &[f64]) {
    put_u64(out, values.len() as u64);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_section(out: &mut Vec<u8>, tag: &str, payload: &[u8]) {
    out.extend_from_slice(tag.as_bytes());
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

/// Serializes the complete state of `system`.
pub fn to_bytes(system: &System) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    put_section(&mut out, "CONF", system.config().to_json().as_bytes());

    let mut step = Vec::with_capacity(16);
    put_u64(&mut step, system.step_counter());
    put_u64(&mut step, system.config().seed);
    put_section(&mut out, "STEP", &step);

    let mut publ = Vec::new();
    put_array(&mut publ, system.published_hidden());
    put_array(&mut publ, system.published_readout());
    put_section(&mut out, "PUBL", &publ);

    let mut units = Vec::new();
    put_u64(&mut units, system.units().len() as u64);
    for u in system.units() {
        let b = u.buffers();
        for a in [
            u.mlp().w_hidden(),
            u.mlp().w_predict(),
            u.mlp().w_readout(),
            &b.prev_signal,
            &b.integral,
            &b.prev_prediction,
            &b.signal,
            &b.context,
        ] {
            put_array(&mut units, a);
        }
    }
    put_section(&mut out, "UNIT", &units);

    let digest = Sha256::digest(&out);
    put_section(&mut out, "HASH", &digest);
    out
}

/// Hex SHA-256 of the serialized state.
pub fn state_hash(system: &System) -> String {
    hex(&Sha256::digest(to_bytes(system)))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(system: &System, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PvmError::io(dir, e))?;
    }
    // write then rename so an interrupted save leaves the old file intact
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(system)).map_err(|e| PvmError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PvmError::io(path, e))
}

pub fn load(path: impl AsRef<Path>, workers: usize) -> Result<System> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PvmError::io(path, e))?;
    from_bytes(&bytes, workers)
}

struct Reader<'a> {
    data: &'a [u8],
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() < n {
            return Err(PvmError::checkpoint(self.section, "truncated"));
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.data.len() / 8 {
            return Err(PvmError::checkpoint(self.section, "array length exceeds payload"));
        }
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(PvmError::checkpoint(self.section, "trailing bytes"))
        }
    }
}

/// Splits the container into its sections, checking order and the digest.
fn sections(bytes: &[u8]) -> Result<Vec<&[u8]>> {
    let mut r = Reader {
        data: bytes,
        section: "HEADER",
    };
    if r.take(8)? != MAGIC {
        return Err(PvmError::checkpoint("HEADER", "bad magic"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(PvmError::checkpoint("HEADER", format!("unsupported version {version}")));
    }
    let mut out = Vec::with_capacity(SECTIONS.len());
    for tag in SECTIONS {
        r.section = tag;
        let hashed_len = bytes.len() - r.data.len();
        let found = r.take(4)?;
        if found != tag.as_bytes() {
            return Err(PvmError::checkpoint(
                tag,
                format!("expected tag {tag}, found {:?}", String::from_utf8_lossy(found)),
            ));
        }
        let len = r.u64()?;
        if len > r.data.len() as u64 {
            return Err(PvmError::checkpoint(tag, "truncated"));
        }
        let payload = r.take(len as usize)?;
        if tag == "HASH" && payload != Sha256::digest(&bytes[..hashed_len]).as_slice() {
            return Err(PvmError::checkpoint("HASH", "digest mismatch"));
        }
        out.push(payload);
    }
    r.section = "HASH";
    r.finish()?;
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], workers: usize) -> Result<System> {
    let s = sections(bytes)?;

    let text = std::str::from_utf8(s[0]).map_err(|_| PvmError::checkpoint("CONF", "not UTF-8"))?;
    let config: PvmConfig =
        parse_config(text).map_err(|e| PvmError::checkpoint("CONF", e.to_string()))?;
    config
        .validate()
        .map_err(|e| PvmError::checkpoint("CONF", e.to_string()))?;
    let topology = Topology::build(&config).map_err(|e| PvmError::checkpoint("CONF", e.to_string()))?;

    let mut r = Reader {
        data: s[1],
        section: "STEP",
    };
    let step = r.u64()?;
    let seed = r.u64()?;
    r.finish()?;
    if seed != config.seed {
        return Err(PvmError::checkpoint("STEP", "seed disagrees with config"));
    }

    let mut r = Reader {
        data: s[2],
        section: "PUBL",
    };
    let hidden = r.array()?;
    let readout = r.array()?;
    r.finish()?;

    let mut r = Reader {
        data: s[3],
        section: "UNIT",
    };
    let count = r.u64()? as usize;
    if count != topology.unit_count() {
        return Err(PvmError::checkpoint(
            "UNIT",
            format!("{count} units stored, topology has {}", topology.unit_count()),
        ));
    }
    let mut units = Vec::with_capacity(count);
    for id in 0..count {
        let mut a: Vec<Vec<f64>> = (0..8).map(|_| r.array()).collect::<Result<_>>()?;
        let geometry = geometry_of(&topology, id);
        let bad = |e: PvmError| PvmError::checkpoint("UNIT", format!("unit {id}: {e}"));
        let buffers = UnitBuffers {
            context: a.pop().unwrap(),
            signal: a.pop().unwrap(),
            prev_prediction: a.pop().unwrap(),
            integral: a.pop().unwrap(),
            prev_signal: a.pop().unwrap(),
        };
        let w_readout = a.pop().unwrap();
        let w_predict = a.pop().unwrap();
        let w_hidden = a.pop().unwrap();
        let mlp = Mlp::from_parts(geometry.mlp_shape(), w_hidden, w_predict, w_readout).map_err(bad)?;
        let mut unit = UnitState::with_mlp(geometry, config.tau, mlp).map_err(bad)?;
        unit.restore_buffers(buffers).map_err(bad)?;
        units.push(unit);
    }
    r.finish()?;

    let mut system = System::assemble(config, topology, units, workers)?;
    system
        .restore_published(hidden, readout)
        .map_err(|e| PvmError::checkpoint("PUBL", e.to_string()))?;
    system.set_step_counter(step);
    Ok(system)
}

/// Section names and payload sizes, for inspection tools.
pub fn section_sizes(bytes: &[u8]) -> Result<Vec<(&'static str, usize)>> {
    Ok(SECTIONS.iter().copied().zip(sections(bytes)?.iter().map(|p| p.len())).collect())
}
