//! Run-record file, little-endian throughout:
//!
//! ```text
//! "VSR1" | u32 version=1 | u32 n_sensors | u64 n_samples | f64 sensor_rate_hz
//! | f64 label_rate_hz | u32 label_len | u8 generator_family | 15 zero bytes
//! | f32 sensors[n_sensors * n_samples] (sensor-major)
//! | f64 ref_speed_raw[label_len] | f64 true_speed[label_len] | f64 ref_aoa[label_len]
//! | u32 meta_len | meta (UTF-8 JSON: run spec and sensor pitch)
//! | u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArraySpec, RunRecord, RunSpec};
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, CrcWriter, Cursor};

pub const RUN_MAGIC: &[u8; 4] = b"VSR1";
pub const RUN_VERSION: u32 = 1;
/// ChaCha8 streams with standard-normal draws; see `synthesize_run`.
pub const GENERATOR_CHACHA8: u8 = 1;

const HEADER_LEN: usize = 56;

#[derive(Serialize, Deserialize)]
struct Metadata {
    spec: RunSpec,
    sensor_pitch: f64,
}

pub fn write_run(record: &RunRecord, path: &Path) -> Result<()> {
    record.check_invariants()?;
    let meta = serde_json::to_vec(&Metadata { spec: record.spec.clone(), sensor_pitch: record.array.sensor_pitch })
        .map_err(|e| Error::invalid(format!("cannot encode run metadata: {e}")))?;
    atomic_write(path, |w| {
        let mut w = CrcWriter::new(w);
        w.put(RUN_MAGIC)?;
        w.u32(RUN_VERSION)?;
        w.u32(record.array.n_sensors as u32)?;
        w.u64(record.n_samples() as u64)?;
        w.f64(record.array.sensor_rate)?;
        w.f64(record.array.label_rate)?;
        w.u32(record.ref_speed_raw.len() as u32)?;
        w.u8(GENERATOR_CHACHA8)?;
        w.put(&[0u8; 15])?;
        w.f32s(&record.sensors)?;
        w.f64s(&record.ref_speed_raw)?;
        w.f64s(&record.true_speed)?;
        w.f64s(&record.ref_aoa)?;
        w.u32(meta.len() as u32)?;
        w.put(&meta)?;
        w.finish()?;
        Ok(())
    })
}

pub fn read_run(path: &Path) -> Result<RunRecord> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<RunRecord> {
    let mut c = Cursor::new(bytes);
    c.require(HEADER_LEN, HEADER_LEN as u64)?;
    let magic = c.take(4)?;
    if magic != RUN_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad magic {magic:?}, expected \"VSR1\"") });
    }
    let version = c.u32()?;
    if version != RUN_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: RUN_VERSION });
    }
    let n_sensors = c.u32()? as usize;
    let n_samples_off = c.offset();
    let n_samples = c.u64()? as usize;
    let sensor_rate = c.f64()?;
    let label_rate = c.f64()?;
    let label_len = c.u32()? as usize;
    let family_off = c.offset();
    let family = c.u8()?;
    if family != GENERATOR_CHACHA8 {
        return Err(Error::Format { offset: family_off, message: format!("unknown generator family {family}") });
    }
    let reserved_off = c.offset();
    if c.take(15)?.iter().any(|&b| b != 0) {
        return Err(Error::Format { offset: reserved_off, message: "reserved header bytes are not zero".into() });
    }

    let n_values = n_sensors
        .checked_mul(n_samples)
        .ok_or_else(|| Error::Format { offset: n_samples_off, message: "sensor matrix size overflows".into() })?;
    let fixed = (HEADER_LEN + n_values * 4 + 3 * label_len * 8 + 4) as u64;
    c.require((fixed - c.offset()) as usize, fixed + 4)?;
    let sensors = c.f32s(n_values)?;
    let ref_speed_raw = c.f64s(label_len)?;
    let true_speed = c.f64s(label_len)?;
    let ref_aoa = c.f64s(label_len)?;
    let meta_len = c.u32()? as usize;
    c.require(meta_len + 4, fixed + meta_len as u64 + 4)?;
    let meta_off = c.offset();
    let meta: Metadata = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| Error::Format { offset: meta_off, message: format!("metadata: {e}") })?;
    c.verify_crc()?;

    let record = RunRecord {
        array: ArraySpec { n_sensors, sensor_pitch: meta.sensor_pitch, sensor_rate, label_rate },
        spec: meta.spec,
        sensors,
        ref_speed_raw,
        ref_aoa,
        true_speed,
    };
    record
        .check_invariants()
        .map_err(|e| Error::Format { offset: meta_off, message: format!("inconsistent record: {e}") })?;
    Ok(record)
}
