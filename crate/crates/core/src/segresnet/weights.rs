//! `SRW1` weight files.
//!
//! ```text
//! "SRW1"
//! u32 LE  config block length, then that many bytes of UTF-8 key=value lines
//! u32 LE  record count
//! per record:
//!   u16 LE name length, UTF-8 name
//!   u8 rank, rank × u32 LE dims
//!   f32 LE values, row-major
//! ```
//!
//! Parameters come first in canonical order, followed by
//! `<layer>.running_mean` / `<layer>.running_var` for every batch-norm layer.

use std::collections::HashMap;
use std::path::Path;

use super::model::Plan;
use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{RunningStats, Tensor};

pub const MAGIC: &[u8; 4] = b"SRW1";

struct Record {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn push_record(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let cfg = model.config().to_kv();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let n_records = model.params().len() + 2 * model.norm_names().len();
    out.extend_from_slice(&(n_records as u32).to_le_bytes());
    for (name, p) in model.param_names().iter().zip(model.params()) {
        push_record(&mut out, name, p.shape(), p.data());
    }
    for (name, st) in model.norm_names().iter().zip(model.running_stats()) {
        let c = [st.mean.len()];
        push_record(&mut out, &format!("{name}.running_mean"), &c, &st.mean);
        push_record(&mut out, &format!("{name}.running_var"), &c, &st.var);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.what,
                self.pos,
                format!(
                    "truncated while reading {field}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], what: &str) -> Result<Model<f32>> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what,
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(
            what,
            0,
            format!("bad magic {magic:?}, expected \"SRW1\""),
        ));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_at = r.pos;
    let cfg_text = std::str::from_utf8(r.take(cfg_len, "config block")?)
        .map_err(|_| Error::format(what, cfg_at, "config block is not UTF-8"))?;
    let config =
        ModelConfig::from_kv(cfg_text).map_err(|e| Error::format(what, cfg_at, format!("bad config block: {e}")))?;
    let plan = Plan::new(&config).map_err(|e| Error::format(what, cfg_at, e.to_string()))?;

    let count = r.u32("record count")? as usize;
    let mut records: HashMap<String, (usize, Record)> = HashMap::new();
    for i in 0..count {
        let at = r.pos;
        let name_len = r.u16("record name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "record name")?)
            .map_err(|_| Error::format(what, at, format!("record {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.take(1, "record rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&format!("dims of {name}"))? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4, &format!("values of {name}"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if records
            .insert(
                name.clone(),
                (
                    at,
                    Record {
                        name: name.clone(),
                        dims,
                        values,
                    },
                ),
            )
            .is_some()
        {
            return Err(Error::format(what, at, format!("duplicate record {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(what, r.pos, "trailing bytes after last record"));
    }

    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let (at, rec) = records
            .remove(name)
            .ok_or_else(|| Error::format(what, bytes.len(), format!("missing record {name:?}")))?;
        if rec.dims != shape {
            return Err(Error::format(
                what,
                at,
                format!(
                    "record {:?} has shape {:?}, config requires {:?}",
                    rec.name, rec.dims, shape
                ),
            ));
        }
        Ok(rec.values)
    };
    let mut params = Vec::with_capacity(plan.params.len());
    for spec in &plan.params {
        params.push(Tensor::from_vec(&spec.shape, take(&spec.name, &spec.shape)?)?);
    }
    let mut stats = Vec::with_capacity(plan.norms.len());
    for (name, c) in &plan.norms {
        let mean = take(&format!("{name}.running_mean"), &[*c])?;
        let var = take(&format!("{name}.running_var"), &[*c])?;
        stats.push(RunningStats {
            mean,
            var,
            recorded: true,
        });
    }
    if let Some((at, rec)) = records.into_values().min_by_key(|(at, _)| *at) {
        return Err(Error::format(what, at, format!("unexpected record {:?}", rec.name)));
    }
    Ok(Model::assemble(config, plan, params, Some(stats)))
}

pub fn save_weights(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    fn trained_tiny() -> Model<f32> {
        let mut m = Model::build(&ModelConfig::tiny(), 5).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| (i % 17) as f32 / 17.0);
        m.forward(&x, Mode::Train).unwrap();
        m
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let m = trained_tiny();
        let bytes = encode(&m);
        let back = decode(&bytes, "mem").unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.config(), m.config());
        assert_eq!(back.running_stats()[0].mean, m.running_stats()[0].mean);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = encode(&trained_tiny());
        bytes[0] = b'X';
        let e = decode(&bytes, "mem").unwrap_err();
        assert_eq!(e.category(), "format");
        assert!(e.to_string().contains("magic"));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&trained_tiny());
        let e = decode(&bytes[..bytes.len() - 3], "mem").unwrap_err();
        match e {
            Error::Format { offset, reason, .. } => {
                assert!(offset > 0);
                assert!(reason.contains("truncated"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_record() {
        let m = trained_tiny();
        let mut bytes = encode(&m);
        // claim a wider stem in the config block, records stay the same
        let text = m.config().to_kv();
        let bad = text.replace("init_filters=8", "init_filters=4");
        assert_eq!(bad.len(), text.len());
        let start = 8;
        bytes[start..start + bad.len()].copy_from_slice(bad.as_bytes());
        let e = decode(&bytes, "mem").unwrap_err().to_string();
        assert!(e.contains("stem.weight"), "{e}");
    }

    #[test]
    fn reloaded_model_predicts_bitwise_identically() {
        let m = trained_tiny();
        let x = Tensor::from_fn(&[1, 1, 32, 32], |i| ((i * 7) % 23) as f32 / 23.0);
        let before = m.predict(&x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.srw");
        save_weights(&m, &path).unwrap();
        let after = load_weights(&path).unwrap().predict(&x).unwrap();
        let a: Vec<u32> = before.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = after.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
