//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "PDPMCKPT"
//! version u32      currently 1
//! then length-prefixed sections until EOF:
//!   name_len u32, name utf-8, payload_len u64, payload
//! ```
//!
//! Sections: `config` (canonical key=value echo), `schedule` (step
//! count + betas), `params` (named f64 blobs), `optim` (Adam step
//! counter + moment blobs), `step` (global step), `rng` (stream key +
//! counter). Unknown sections are rejected. Parameters round-trip
//! bitwise, and optimizer moments are included so that loading a
//! checkpoint and taking one step reproduces the uninterrupted run
//! exactly.

use std::collections::HashMap;
use std::path::Path;

use crate::config::TrainConfig;
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{AdamState, Model};

const MAGIC: &[u8; 8] = b"PDPMCKPT";
const VERSION: u32 = 1;

fn err(message: impl Into<String>) -> Error {
    Error::Checkpoint {
        message: message.into(),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Writer { buf }
    }

    fn section(&mut self, name: &str, payload: &[u8]) {
        self.buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(payload);
    }
}

fn encode_blobs(blobs: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, t) in blobs {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(err("truncated"));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
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

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| err(format!("bad utf-8: {e}")))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

fn decode_blobs(payload: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor {
        bytes: payload,
        at: 0,
    };
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(c.f64()?);
        }
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    if !c.done() {
        return Err(err("trailing bytes in blob section"));
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.section("config", model.config.to_kv().as_bytes());

    let mut sched = Vec::new();
    sched.extend_from_slice(&(model.sched.t_max() as u64).to_le_bytes());
    for &b in model.sched.betas() {
        sched.extend_from_slice(&b.to_le_bytes());
    }
    w.section("schedule", &sched);

    w.section("params", &encode_blobs(&model.named_params()));

    let mut optim = Vec::new();
    optim.extend_from_slice(&model.adam.t.to_le_bytes());
    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    let moment_blobs: Vec<(String, &Tensor)> = names
        .iter()
        .zip(&model.adam.m)
        .map(|(n, t)| (format!("adam.m.{n}"), t))
        .chain(
            names
                .iter()
                .zip(&model.adam.v)
                .map(|(n, t)| (format!("adam.v.{n}"), t)),
        )
        .collect();
    optim.extend_from_slice(&encode_blobs(&moment_blobs));
    w.section("optim", &optim);

    w.section("step", &model.step.to_le_bytes());

    let (key, counter) = model.run_rng.state();
    let mut rng = Vec::new();
    rng.extend_from_slice(&key.to_le_bytes());
    rng.extend_from_slice(&counter.to_le_bytes());
    w.section("rng", &rng);

    std::fs::write(path, w.buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut c = Cursor {
        bytes: &bytes,
        at: 0,
    };
    if c.take(8)? != MAGIC {
        return Err(err("bad magic (not a checkpoint file)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(err(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }

    let mut sections: HashMap<String, &[u8]> = HashMap::new();
    while !c.done() {
        let name = c.string()?;
        let len = c.u64()? as usize;
        let payload = c.take(len)?;
        match name.as_str() {
            "config" | "schedule" | "params" | "optim" | "step" | "rng" => {
                if sections.insert(name.clone(), payload).is_some() {
                    return Err(err(format!("duplicate section '{name}'")));
                }
            }
            other => return Err(err(format!("unknown section '{other}'"))),
        }
    }
    let take = |name: &str| -> Result<&[u8]> {
        sections
            .get(name)
            .copied()
            .ok_or_else(|| err(format!("missing section '{name}'")))
    };

    let config_text =
        String::from_utf8(take("config")?.to_vec()).map_err(|e| err(format!("config: {e}")))?;
    let config = TrainConfig::from_kv(&config_text)?;

    let mut sc = Cursor {
        bytes: take("schedule")?,
        at: 0,
    };
    let t_max = sc.u64()? as usize;
    let betas: Vec<f64> = (0..t_max).map(|_| sc.f64()).collect::<Result<_>>()?;
    if !sc.done() {
        return Err(err("trailing bytes in schedule"));
    }
    if t_max != config.t_steps {
        return Err(err(format!(
            "schedule length {t_max} disagrees with config t_steps {}",
            config.t_steps
        )));
    }
    let sched = DiffusionSchedule::from_betas(betas)?;

    // fresh model with the right shapes, then overwrite every tensor
    let mut model = Model::init(config)?;
    model.sched = sched;

    let blobs = decode_blobs(take("params")?)?;
    let mut by_name: HashMap<String, Tensor> = blobs.into_iter().collect();
    for (name, param) in model.named_params_mut() {
        let loaded = by_name
            .remove(&name)
            .ok_or_else(|| err(format!("missing parameter '{name}'")))?;
        if loaded.shape() != param.shape() {
            return Err(err(format!(
                "parameter '{name}': shape {:?} does not match config shape {:?}",
                loaded.shape(),
                param.shape()
            )));
        }
        *param = loaded;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(err(format!("unexpected parameter '{extra}'")));
    }

    let mut oc = Cursor {
        bytes: take("optim")?,
        at: 0,
    };
    let adam_t = oc.u64()?;
    let moment_blobs = decode_blobs(&oc.bytes[oc.at..])?;
    let mut moments: HashMap<String, Tensor> = moment_blobs.into_iter().collect();
    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    let mut adam = AdamState {
        t: adam_t,
        m: Vec::with_capacity(names.len()),
        v: Vec::with_capacity(names.len()),
    };
    for n in &names {
        adam.m.push(
            moments
                .remove(&format!("adam.m.{n}"))
                .ok_or_else(|| err(format!("missing optimizer moment for '{n}'")))?,
        );
        adam.v.push(
            moments
                .remove(&format!("adam.v.{n}"))
                .ok_or_else(|| err(format!("missing optimizer moment for '{n}'")))?,
        );
    }
    model.adam = adam;

    let step_bytes = take("step")?;
    if step_bytes.len() != 8 {
        return Err(err("bad step section"));
    }
    model.step = u64::from_le_bytes(step_bytes.try_into().unwrap());

    let rng_bytes = take("rng")?;
    if rng_bytes.len() != 16 {
        return Err(err("bad rng section"));
    }
    let key = u64::from_le_bytes(rng_bytes[..8].try_into().unwrap());
    let counter = u64::from_le_bytes(rng_bytes[8..].try_into().unwrap());
    model.run_rng = Rng::from_state(key, counter);

    Ok(model)
}
