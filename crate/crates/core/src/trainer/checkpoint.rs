//! Checkpoint files.
//!
//! Layout (little endian, strings and arrays length-prefixed with a u64):
//!
//! ```text
//! b"MIFRCKPT" | u32 format version | str library version
//! str dataset schema fingerprint | str TrainConfig as JSON
//! u64 iteration | 4 x f64 multipliers (C1, C2, EO, EOpp)
//! 5 x (u8 present, f64 value) running averages (L_r, C1, C2, EO, EOpp)
//! u8 has label adversary | u64 Adam step per optimizer (3 or 4)
//! u64 tensor count | (str name, u64s shape, f64s data) per tensor
//! ```
//!
//! Tensors are the network parameters by name followed by the Adam moments
//! (`adam.<network>.m.<k>`, `adam.<network>.v.<k>`).

use std::collections::HashMap;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{AdversaryParams, DecoderParams, EncoderParams, ModelParams, ParamSet};
use crate::numcore::{AdamState, Tensor};
use crate::objective::{ConstraintId, Multipliers, PerConstraint};
use crate::trainer::{OptimizerStates, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MIFRCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub config: TrainConfig,
    pub fingerprint: String,
    pub version: String,
}

fn put_opt(w: &mut Writer, v: Option<f64>) {
    w.u8(u8::from(v.is_some()));
    w.f64(v.unwrap_or(0.0));
}

fn get_opt(r: &mut Reader) -> Result<Option<f64>> {
    let present = r.u8()? == 1;
    let v = r.f64()?;
    Ok(present.then_some(v))
}

fn named_tensors(state: &TrainState) -> Vec<(String, &Tensor)> {
    let p = &state.params;
    let mut out: Vec<(String, &Tensor)> = Vec::new();
    out.extend(p.encoder.named().into_iter().map(|(n, t)| (n.to_string(), t)));
    out.extend(p.decoder.named().into_iter().map(|(n, t)| (n.to_string(), t)));
    out.extend(p.adversary.named().into_iter().map(|(n, t)| (n.to_string(), t)));
    if let Some(a) = &p.label_adversary {
        out.extend(a.named().into_iter().map(|(n, t)| (format!("label_{n}"), t)));
    }
    let o = &state.optim;
    let mut opts = vec![("encoder", &o.encoder), ("decoder", &o.decoder), ("adversary", &o.adversary)];
    if let Some(l) = &o.label_adversary {
        opts.push(("label_adversary", l));
    }
    for (name, s) in opts {
        for (k, m) in s.first_moments().iter().enumerate() {
            out.push((format!("adam.{name}.m.{k}"), m));
        }
        for (k, v) in s.second_moments().iter().enumerate() {
            out.push((format!("adam.{name}.v.{k}"), v));
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, state: &TrainState, config: &TrainConfig, fingerprint: &str) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(crate::VERSION);
    w.str(fingerprint);
    w.str(&serde_json::to_string(config).map_err(|e| Error::Checkpoint(e.to_string()))?);
    w.u64(state.iteration);
    for id in ConstraintId::ALL {
        w.f64(state.multipliers.lambda[id]);
    }
    put_opt(&mut w, state.ema_l_r);
    for id in ConstraintId::ALL {
        put_opt(&mut w, state.ema[id]);
    }
    let o = &state.optim;
    w.u8(u8::from(o.label_adversary.is_some()));
    w.u64(o.encoder.step_count());
    w.u64(o.decoder.step_count());
    w.u64(o.adversary.step_count());
    if let Some(l) = &o.label_adversary {
        w.u64(l.step_count());
    }
    let tensors = named_tensors(state);
    w.u64(tensors.len() as u64);
    for (name, t) in tensors {
        w.str(&name);
        w.tensor(t);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, w.buf)?;
    Ok(())
}

struct Table(HashMap<String, Tensor>);

impl Table {
    fn take(&mut self, name: &str, like: &Tensor) -> Result<Tensor> {
        let t = self
            .0
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} missing")))?;
        if t.shape() != like.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, configuration expects {:?}",
                t.shape(),
                like.shape()
            )));
        }
        Ok(t)
    }

    fn fill<P: ParamSet>(&mut self, params: &mut P, prefix: &str) -> Result<()> {
        let names: Vec<String> = params.named().iter().map(|(n, _)| format!("{prefix}{n}")).collect();
        let shapes: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        for ((slot, name), like) in params.tensors_mut().into_iter().zip(&names).zip(&shapes) {
            *slot = self.take(name, like)?;
        }
        Ok(())
    }

    fn adam(&mut self, name: &str, params: &[&Tensor], config: crate::numcore::AdamConfig, step: u64) -> Result<AdamState> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (k, p) in params.iter().enumerate() {
            m.push(self.take(&format!("adam.{name}.m.{k}"), p)?);
            v.push(self.take(&format!("adam.{name}.v.{k}"), p)?);
        }
        AdamState::from_parts(config, m, v, step)
    }
}

/// Load a checkpoint; with `expected_fingerprint` the stored dataset
/// fingerprint must match.
pub fn load_checkpoint(path: &Path, expected_fingerprint: Option<&str>) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf, "checkpoint");
    if r.bytes(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let format = r.u32()?;
    if format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint format {format}")));
    }
    let version = r.str()?;
    if version != crate::VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint written by version {version}, this is {}",
            crate::VERSION
        )));
    }
    let fingerprint = r.str()?;
    if let Some(expected) = expected_fingerprint {
        if expected != fingerprint {
            return Err(Error::Checkpoint(format!(
                "dataset schema fingerprint mismatch: checkpoint {fingerprint}, dataset {expected}"
            )));
        }
    }
    let config: TrainConfig =
        serde_json::from_str(&r.str()?).map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    let iteration = r.u64()?;
    let mut multipliers = Multipliers::splat(0.0);
    for id in ConstraintId::ALL {
        multipliers.lambda[id] = r.f64()?;
    }
    let ema_l_r = get_opt(&mut r)?;
    let mut ema: PerConstraint<Option<f64>> = PerConstraint::default();
    for id in ConstraintId::ALL {
        ema[id] = get_opt(&mut r)?;
    }
    let has_label = r.u8()? == 1;
    let steps = [r.u64()?, r.u64()?, r.u64()?];
    let label_step = if has_label { Some(r.u64()?) } else { None };
    let count = r.u64()?;
    let mut table = Table(HashMap::new());
    for _ in 0..count {
        let name = r.str()?;
        let t = r.tensor()?;
        table.0.insert(name, t);
    }
    r.finish()?;

    let m = &config.model;
    if has_label != m.label_conditioned_adversaries {
        return Err(Error::Checkpoint("label adversary presence disagrees with the config".into()));
    }
    let mut params = ModelParams {
        encoder: EncoderParams::zeros(m),
        decoder: DecoderParams::zeros(m),
        adversary: AdversaryParams::zeros(m, false),
        label_adversary: has_label.then(|| AdversaryParams::zeros(m, true)),
    };
    table.fill(&mut params.encoder, "")?;
    table.fill(&mut params.decoder, "")?;
    table.fill(&mut params.adversary, "")?;
    if let Some(a) = &mut params.label_adversary {
        table.fill(a, "label_")?;
    }
    let optim = OptimizerStates {
        encoder: table.adam("encoder", &params.encoder.tensors(), config.adam, steps[0])?,
        decoder: table.adam("decoder", &params.decoder.tensors(), config.adam, steps[1])?,
        adversary: table.adam("adversary", &params.adversary.tensors(), config.adam, steps[2])?,
        label_adversary: match (&params.label_adversary, label_step) {
            (Some(a), Some(s)) => Some(table.adam("label_adversary", &a.tensors(), config.adam, s)?),
            _ => None,
        },
    };
    if !table.0.is_empty() {
        return Err(Error::Checkpoint(format!("{} unexpected tensors", table.0.len())));
    }
    Ok(Checkpoint {
        state: TrainState {
            params,
            multipliers,
            optim,
            iteration,
            ema_l_r,
            ema,
        },
        config,
        fingerprint,
        version,
    })
}
