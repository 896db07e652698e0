use super::tensor::{Parameter, Tensor};
use crate::error::{FedQuadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimizer hyperparameters. `beta1`/`beta2`/`eps` are ignored by SGD.
///
/// Weight decay is coupled: `weight_decay * w` is added to the gradient
/// before the moment estimates are updated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            // not given for the reference setup; usual Adam defaults
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl OptimizerConfig {
    /// A zero learning rate is accepted and turns every step into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(FedQuadError::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(FedQuadError::Config(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(FedQuadError::Config(format!(
                "eps must be non-negative, got {}",
                self.eps
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(FedQuadError::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    /// One bias-corrected Adam update of `param` from its current gradient.
    pub fn step(&mut self, param: &mut Parameter, cfg: &OptimizerConfig) -> Result<()> {
        cfg.validate()?;
        param
            .value
            .check_same_shape(&self.first_moment, "adam_step")?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);

        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        let grad = param.gradient.data();
        for (i, w) in param.value.data_mut().iter_mut().enumerate() {
            let g = grad[i] + cfg.weight_decay * *w;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        param.value.ensure_finite("adam_step")
    }
}

/// Optimizer over an ordered parameter list; state is private to one client.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[Parameter]) -> Result<Self> {
        config.validate()?;
        let states = match config.kind {
            OptimizerKind::Adam => params
                .iter()
                .map(|p| AdamState::new(p.value.shape()))
                .collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Ok(Optimizer { config, states })
    }

    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Adam => {
                if self.states.len() != params.len() {
                    return Err(FedQuadError::State(format!(
                        "optimizer tracks {} parameters, got {}",
                        self.states.len(),
                        params.len()
                    )));
                }
                for (state, p) in self.states.iter_mut().zip(params.iter_mut()) {
                    state.step(p, &self.config)?;
                }
            }
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let grad = p.gradient.data();
                    for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                        *w -= self.config.lr * (grad[i] + self.config.weight_decay * *w);
                    }
                    p.value.ensure_finite("sgd_step")?;
                }
            }
        }
        Ok(())
    }
}
