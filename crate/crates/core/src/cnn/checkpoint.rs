//! Checkpoint file, little-endian:
//!
//! ```text
//! "VSCK" | u32 version=1
//! | u32 in_sensors | u32 n_stages | u32 channels[n_stages] | u32 pools[n_stages]
//! | u32 kernel_sensor | u32 kernel_time | u32 norm_groups | f64 leaky_slope
//! | u32 pool_out_sensor | u32 pool_out_time | u32 head_out | f64 norm_eps
//! | u32 n_sensors | f64 sensor_mean[n] | f64 sensor_std[n]
//! | u32 k | f64 target_offset[k] | f64 target_scale[k]
//! | u64 m | f64 theta[m]
//! | u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelState, NormStats};
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, CrcWriter, Cursor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, state: &ModelState, stats: &NormStats) -> Result<()> {
    atomic_write(path, |w| {
        let mut w = CrcWriter::new(w);
        encode(&mut w, state, stats)?;
        w.finish()?;
        Ok(())
    })
}

fn encode<W: std::io::Write>(w: &mut CrcWriter<W>, state: &ModelState, stats: &NormStats) -> Result<()> {
    let c = &state.config;
    let u = |v: usize| v as u32;
    w.put(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.u32(u(c.in_sensors))?;
    w.u32(u(c.stage_channels.len()))?;
    for &ch in &c.stage_channels {
        w.u32(u(ch))?;
    }
    for &p in &c.stage_time_pool {
        w.u32(u(p))?;
    }
    w.u32(u(c.kernel.0))?;
    w.u32(u(c.kernel.1))?;
    w.u32(u(c.norm_groups))?;
    w.f64(c.leaky_slope)?;
    w.u32(u(c.adaptive_pool_out.0))?;
    w.u32(u(c.adaptive_pool_out.1))?;
    w.u32(u(c.head_out))?;
    w.f64(c.norm_eps)?;
    w.u32(u(stats.sensor_mean.len()))?;
    w.f64s(&stats.sensor_mean)?;
    w.f64s(&stats.sensor_std)?;
    w.u32(u(stats.target_offset.len()))?;
    w.f64s(&stats.target_offset)?;
    w.f64s(&stats.target_scale)?;
    w.u64(state.theta.len() as u64)?;
    w.f64s(&state.theta)
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelState, NormStats)> {
    decode(&fs::read(path)?)
}

fn decode(bytes: &[u8]) -> Result<(ModelState, NormStats)> {
    let mut c = Cursor::new(bytes);
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected \"VSCK\"".into() });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    // Counts are bounded before allocation so a corrupt header cannot request
    // an absurd buffer; the cursor reports truncation for anything else.
    let count = |c: &mut Cursor, limit: usize| -> Result<usize> {
        let at = c.offset();
        let v = c.u32()? as usize;
        if v > limit {
            return Err(Error::Format { offset: at, message: format!("count {v} exceeds {limit}") });
        }
        Ok(v)
    };
    let in_sensors = count(&mut c, 1 << 16)?;
    let n_stages = count(&mut c, 64)?;
    let stage_channels = (0..n_stages).map(|_| count(&mut c, 1 << 16)).collect::<Result<_>>()?;
    let stage_time_pool = (0..n_stages).map(|_| count(&mut c, 1 << 16)).collect::<Result<_>>()?;
    let kernel = (count(&mut c, 1 << 10)?, count(&mut c, 1 << 10)?);
    let norm_groups = count(&mut c, 1 << 16)?;
    let leaky_slope = c.f64()?;
    let adaptive_pool_out = (count(&mut c, 1 << 10)?, count(&mut c, 1 << 10)?);
    let head_out = count(&mut c, 2)?;
    let norm_eps = c.f64()?;
    let config = ModelConfig {
        in_sensors,
        stage_channels,
        kernel,
        stage_time_pool,
        norm_groups,
        leaky_slope,
        adaptive_pool_out,
        head_out,
        norm_eps,
    };
    let cfg_at = c.offset();
    config.validate().map_err(|e| Error::Format { offset: cfg_at, message: e.to_string() })?;

    let n = count(&mut c, 1 << 16)?;
    let sensor_mean = c.f64s(n)?;
    let sensor_std = c.f64s(n)?;
    let k = count(&mut c, 2)?;
    let target_offset = c.f64s(k)?;
    let target_scale = c.f64s(k)?;
    let m_at = c.offset();
    let m = c.u64()? as usize;
    if m != config.param_count() {
        return Err(Error::Format {
            offset: m_at,
            message: format!("{m} parameters stored for a model with {}", config.param_count()),
        });
    }
    c.require(m * 8 + 4, c.offset() + m as u64 * 8 + 4)?;
    let theta = c.f64s(m)?;
    c.verify_crc()?;

    let stats = NormStats { sensor_mean, sensor_std, target_offset, target_scale };
    stats.validate()?;
    Ok((ModelState::new(config, theta)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::init_params;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.vsck");
        let state = init_params(&ModelConfig::desk().with_head(1), 3).unwrap();
        let mut stats = NormStats::identity(48, 1);
        stats.target_offset[0] = 1081.0;
        stats.sensor_std[7] = 0.25;
        write_checkpoint(&p, &state, &stats).unwrap();
        let (s2, n2) = read_checkpoint(&p).unwrap();
        assert_eq!(s2, state);
        assert_eq!(n2, stats);

        let mut bytes = fs::read(&p).unwrap();
        let len = bytes.len();
        assert!(matches!(decode(&bytes[..len - 9]), Err(Error::Truncated { .. })));
        bytes[len - 20] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::Checksum { .. })));
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion { found: 9, .. })));
    }
}
