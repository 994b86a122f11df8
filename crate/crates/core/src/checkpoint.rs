//! Binary checkpoint container.
//!
//! Layout: `DDIF`, u32 format version, u64 payload length, then the payload.
//! All integers and floats are little-endian; weights are f32.

use std::fs;
use std::path::Path;

use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 4] = b"DDIF";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub schedule: ScheduleConfig,
}

impl Checkpoint {
    /// Fails with a mismatch error naming the first differing field.
    pub fn expect_denoiser(&self, expected: &DenoiserConfig) -> Result<()> {
        let found = self.state.params.config();
        let fields = [
            ("base_channels", expected.base_channels, found.base_channels),
            ("depth", expected.depth, found.depth),
            ("time_embed_dim", expected.time_embed_dim, found.time_embed_dim),
            ("image_channels", expected.image_channels, found.image_channels),
        ];
        for (field, e, f) in fields {
            if e != f {
                return Err(Error::ConfigMismatch {
                    field,
                    expected: e.to_string(),
                    found: f.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn expect_schedule(&self, expected: &ScheduleConfig) -> Result<()> {
        let found = &self.schedule;
        if expected.steps != found.steps {
            return Err(Error::ConfigMismatch {
                field: "steps",
                expected: expected.steps.to_string(),
                found: found.steps.to_string(),
            });
        }
        let reals = [
            ("eta_start", expected.eta_start, found.eta_start),
            ("eta_end", expected.eta_end, found.eta_end),
            ("curvature_p", expected.curvature_p, found.curvature_p),
        ];
        for (field, e, f) in reals {
            if e.to_bits() != f.to_bits() {
                return Err(Error::ConfigMismatch {
                    field,
                    expected: e.to_string(),
                    found: f.to_string(),
                });
            }
        }
        Ok(())
    }
}

pub fn encode(state: &TrainState, schedule: &ScheduleConfig) -> Vec<u8> {
    let mut p = Vec::new();
    let c = state.params.config();
    for v in [c.base_channels, c.depth, c.time_embed_dim, c.image_channels] {
        put_u32(&mut p, v as u32);
    }
    put_u32(&mut p, schedule.steps as u32);
    for v in [schedule.eta_start, schedule.eta_end, schedule.curvature_p] {
        p.extend_from_slice(&v.to_le_bytes());
    }
    p.extend_from_slice(&state.step.to_le_bytes());

    let specs = state.params.specs();
    put_u32(&mut p, specs.len() as u32);
    for (spec, data) in specs.iter().zip(state.params.arrays()) {
        put_u32(&mut p, spec.name.len() as u32);
        p.extend_from_slice(spec.name.as_bytes());
        put_u32(&mut p, spec.shape.len() as u32);
        for &d in &spec.shape {
            put_u32(&mut p, d as u32);
        }
        put_f32s(&mut p, data);
    }
    for moments in [&state.moment1, &state.moment2] {
        for m in moments {
            put_f32s(&mut p, m);
        }
    }
    p.extend_from_slice(&(state.loss_history.len() as u64).to_le_bytes());
    for &(step, loss) in &state.loss_history {
        p.extend_from_slice(&step.to_le_bytes());
        p.extend_from_slice(&loss.to_le_bytes());
    }

    let mut out = Vec::with_capacity(HEADER_LEN + p.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    out.extend_from_slice(&p);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Integrity(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Integrity(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if declared != actual {
        return Err(Error::Integrity(format!(
            "header declares {declared} payload bytes, file has {actual}"
        )));
    }

    let mut r = Reader { buf: &bytes[HEADER_LEN..], pos: 0 };
    let config = DenoiserConfig {
        base_channels: r.u32()? as usize,
        depth: r.u32()? as usize,
        time_embed_dim: r.u32()? as usize,
        image_channels: r.u32()? as usize,
    };
    let schedule = ScheduleConfig {
        steps: r.u32()? as usize,
        eta_start: r.f64()?,
        eta_end: r.f64()?,
        curvature_p: r.f64()?,
    };
    let step = r.u64()?;

    let n = r.u32()? as usize;
    let mut named = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Integrity("array name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| Error::Integrity(format!("array `{name}` has overflowing shape")))?;
        let data = r.f32s(count)?;
        named.push((name, shape, data));
    }
    let lens: Vec<usize> = named.iter().map(|(_, _, d)| d.len()).collect();
    let params = DenoiserParams::from_named(config, named)?;
    let mut moments = [Vec::new(), Vec::new()];
    for m in &mut moments {
        for &len in &lens {
            m.push(r.f32s(len)?);
        }
    }
    let [moment1, moment2] = moments;

    let hist_len = r.u64()? as usize;
    let mut loss_history = Vec::with_capacity(hist_len.min(1 << 20));
    for _ in 0..hist_len {
        loss_history.push((r.u64()?, r.f64()?));
    }
    if r.pos != r.buf.len() {
        return Err(Error::Integrity(format!("{} trailing bytes", r.buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        state: TrainState {
            params,
            moment1,
            moment2,
            step,
            loss_history,
        },
        schedule,
    })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save_checkpoint(state: &TrainState, schedule: &ScheduleConfig, path: &Path) -> Result<()> {
    let bytes = encode(state, schedule);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Integrity(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Integrity("array too large".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
