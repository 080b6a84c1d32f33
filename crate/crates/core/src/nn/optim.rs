use super::{DenoiserModel, NnError, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments plus an exponential moving average of the weights.
///
/// After every step the shadow is updated as
/// `shadow ← d·shadow + (1-d)·weights`, starting from the initial weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub adam: AdamConfig,
    pub ema_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    shadow: ParamSet,
}

impl OptimizerState {
    pub fn new(model: &DenoiserModel, adam: AdamConfig, ema_decay: f64) -> Self {
        let p = model.params();
        Self {
            adam,
            ema_decay,
            step: 0,
            m: p.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: p.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            shadow: p.clone(),
        }
    }

    pub(crate) fn from_parts(
        adam: AdamConfig,
        ema_decay: f64,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        shadow: ParamSet,
    ) -> Self {
        Self {
            adam,
            ema_decay,
            step,
            m,
            v,
            shadow,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn shadow(&self) -> &ParamSet {
        &self.shadow
    }

    /// The model with its weights replaced by the EMA shadow.
    pub fn ema_model(&self, model: &DenoiserModel) -> Result<DenoiserModel, NnError> {
        model.with_params(self.shadow.clone())
    }

    /// One bias-corrected Adam update followed by the EMA update. A missing
    /// gradient is treated as zero.
    pub fn adam_step(&mut self, model: &mut DenoiserModel, grads: &[Option<Tensor>]) -> Result<(), NnError> {
        let params = model.params_mut();
        if grads.len() > params.len() || !params.same_layout(&self.shadow) {
            return Err(NnError::Shape("optimizer state does not match the model".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.adam;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads.get(i).and_then(|g| g.as_ref());
            if let Some(g) = g {
                if g.shape() != params.get(i).shape() {
                    return Err(NnError::Shape(format!("gradient for {}", params.name(i))));
                }
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.get_mut(i).data_mut();
            for j in 0..w.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                w[j] -= lr * mh / (vh.sqrt() + eps);
            }
            let d = self.ema_decay;
            for (s, &wj) in self.shadow.get_mut(i).data_mut().iter_mut().zip(w.iter()) {
                *s = d * *s + (1.0 - d) * wj;
            }
        }
        Ok(())
    }
}
