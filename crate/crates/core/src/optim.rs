//! Adam with bias correction, one moment pair per parameter column.

use serde::{Deserialize, Serialize};

use crate::cloud::{CloudGrad, GaussianCloud, ParamGroup};
use crate::error::{Error, Result};

/// Learning rate per parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl LearningRates {
    /// Engineering defaults; the position rate scales with the image diagonal.
    pub fn for_image(width: usize, height: usize) -> Self {
        let diagonal = ((width * width + height * height) as f64).sqrt();
        LearningRates {
            position: 2e-3 * diagonal,
            rotation: 5e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }

    pub fn zero() -> Self {
        LearningRates {
            position: 0.0,
            rotation: 0.0,
            scale: 0.0,
            opacity: 0.0,
            color: 0.0,
        }
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Color => self.color,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let lr = self.get(g);
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("learning rate for {} must be finite and >= 0, got {lr}", g.name())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    /// Indexed like [`ParamGroup::ALL`].
    pub moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(cloud: &GaussianCloud, config: AdamConfig) -> Self {
        let moments = ParamGroup::ALL
            .iter()
            .map(|&g| {
                let len = cloud.column(g).len();
                Moments {
                    m: vec![0.0; len],
                    v: vec![0.0; len],
                }
            })
            .collect();
        OptimizerState {
            config,
            step: 0,
            moments,
        }
    }

    /// Applies one Adam update to every parameter column of `cloud`.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grad: &CloudGrad, lr: &LearningRates) -> Result<()> {
        if grad.len() != cloud.len() {
            return Err(Error::InvalidArgument(format!("gradient has {} rows, cloud has {}", grad.len(), cloud.len())));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (k, group) in ParamGroup::ALL.into_iter().enumerate() {
            let rate = lr.get(group);
            let g = grad.column(group);
            let Moments { m, v } = &mut self.moments[k];
            let params = cloud.column_mut(group);
            for i in 0..params.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                params[i] -= rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Keeps moment rows at `kept`, mirroring [`GaussianCloud::compact`].
    pub fn compact(&mut self, kept: &[usize]) {
        for (k, group) in ParamGroup::ALL.into_iter().enumerate() {
            let w = group.width();
            let Moments { m, v } = &mut self.moments[k];
            let pick = |col: &[f64]| -> Vec<f64> { kept.iter().flat_map(|&i| col[i * w..(i + 1) * w].iter().copied()).collect() };
            *m = pick(m);
            *v = pick(v);
        }
    }
}
