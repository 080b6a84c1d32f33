//! `CDIF` checkpoint container, version 1.
//!
//! Payload, in order: the schedule (`β_1..β_T`, `λ_1..λ_T`), the network
//! configuration, every parameter (name, shape, values), the Adam state, the
//! EMA decay and shadow weights, and the fingerprint of the schedule the model
//! was trained with (0 when untrained).

use std::path::Path;

use super::{AdamConfig, DenoiserModel, OptimizerState, ParamSet, Tensor, UNetConfig};
use crate::codec::{self, ContainerError, Reader, Writer};
use crate::schedule::ScheduleTable;

pub const MAGIC: &[u8; 4] = b"CDIF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleTable,
    pub model: DenoiserModel,
    pub optimizer: OptimizerState,
}

fn write_params(w: &mut Writer, p: &ParamSet) {
    w.u32(p.len() as u32);
    for (name, t) in p.iter() {
        w.str(name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        w.f64s(t.data());
    }
}

fn read_params(r: &mut Reader) -> Result<ParamSet, ContainerError> {
    let n = r.u32()?;
    let mut p = ParamSet::default();
    for _ in 0..n {
        let name = r.str()?;
        let nd = r.u32()? as usize;
        if nd > 8 {
            return Err(ContainerError::Malformed(format!("{name}: rank {nd}")));
        }
        let shape = (0..nd).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let data = r.f64s()?;
        let t = Tensor::new(shape, data).map_err(|e| ContainerError::Malformed(format!("{name}: {e}")))?;
        p.push(name, t);
    }
    Ok(p)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.f64s(self.schedule.betas());
        w.f64s(self.schedule.lambdas());

        let cfg = self.model.config();
        w.u32(cfg.widths.len() as u32);
        for &c in &cfg.widths {
            w.u32(c as u32);
        }
        w.u32(cfg.time_dim as u32);
        w.u32(cfg.steps as u32);
        w.u8(cfg.zero_init_output as u8);
        write_params(&mut w, self.model.params());

        let o = &self.optimizer;
        w.f64(o.adam.lr);
        w.f64(o.adam.beta1);
        w.f64(o.adam.beta2);
        w.f64(o.adam.eps);
        w.u64(o.step_count());
        for m in o.first_moments() {
            w.f64s(m);
        }
        for v in o.second_moments() {
            w.f64s(v);
        }
        w.f64(o.ema_decay);
        write_params(&mut w, o.shadow());
        w.u64(self.model.trained_with().unwrap_or(0));
        codec::frame(MAGIC, VERSION, &w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let payload = codec::unframe(bytes, MAGIC, VERSION)?;
        let mut r = Reader::new(payload, 16);
        let betas = r.f64s()?;
        let lambdas = r.f64s()?;
        let schedule = ScheduleTable::from_arrays(&betas, &lambdas)
            .map_err(|e| ContainerError::Malformed(format!("schedule: {e}")))?;

        let nw = r.u32()? as usize;
        if nw > 16 {
            return Err(ContainerError::Malformed(format!("{nw} levels")));
        }
        let widths = (0..nw).map(|_| r.u32().map(|c| c as usize)).collect::<Result<Vec<_>, _>>()?;
        let config = UNetConfig {
            widths,
            time_dim: r.u32()? as usize,
            steps: r.u32()? as usize,
            zero_init_output: r.u8()? != 0,
        };
        let params = read_params(&mut r)?;

        let adam = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let step = r.u64()?;
        let m = (0..params.len()).map(|_| r.f64s()).collect::<Result<Vec<_>, _>>()?;
        let v = (0..params.len()).map(|_| r.f64s()).collect::<Result<Vec<_>, _>>()?;
        let ema_decay = r.f64()?;
        let shadow = read_params(&mut r)?;
        let fp = r.u64()?;
        r.finish()?;

        if !params.same_layout(&shadow)
            || m.iter().chain(&v).zip(params.tensors().iter().chain(params.tensors()))
                .any(|(a, t)| a.len() != t.numel())
        {
            return Err(ContainerError::Malformed("optimizer state does not match parameters".into()));
        }
        let model = DenoiserModel::from_parts(config, params, (fp != 0).then_some(fp))
            .map_err(|e| ContainerError::Malformed(e.to_string()))?;
        if let Some(fp) = model.trained_with() {
            if fp != schedule.fingerprint() {
                return Err(ContainerError::Malformed(
                    "embedded schedule does not match the training fingerprint".into(),
                ));
            }
        }
        let optimizer = OptimizerState::from_parts(adam, ema_decay, step, m, v, shadow);
        Ok(Self {
            schedule,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&codec::read_file(path)?)
    }

    /// The EMA-weighted model used for sampling.
    pub fn sampling_model(&self) -> DenoiserModel {
        self.optimizer
            .ema_model(&self.model)
            .expect("layout validated on construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::LambdaShape;

    fn sample() -> Checkpoint {
        let schedule = ScheduleTable::build(10, 0.05, 0.3, LambdaShape::Linear).unwrap();
        let mut model = DenoiserModel::new(
            UNetConfig {
                widths: vec![2, 4],
                time_dim: 4,
                steps: 10,
                zero_init_output: false,
            },
            5,
        )
        .unwrap();
        model.bind_schedule(schedule.fingerprint());
        let mut optimizer = OptimizerState::new(&model, AdamConfig::default(), 0.99);
        let g: Vec<_> = model
            .params()
            .tensors()
            .iter()
            .map(|t| Some(Tensor::new(t.shape().to_vec(), vec![0.1; t.numel()]).unwrap()))
            .collect();
        optimizer.adam_step(&mut model, &g).unwrap();
        Checkpoint {
            schedule,
            model,
            optimizer,
        }
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"CDIF");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(ContainerError::Checksum { .. })));
        let mut bytes = sample().to_bytes();
        bytes[..4].copy_from_slice(b"CDPR");
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(ContainerError::WrongContainer { .. })));
    }
}
