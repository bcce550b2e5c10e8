//! Adam with the training recipe's hyperparameters, cosine learning-rate
//! annealing, and the exponential p / lambda schedules.
//!
//! Adam defaults here are beta2 = 0.99 and epsilon = 1e-10 instead of the
//! common 0.999 / 1e-8: during relaxation the exponent changes every epoch,
//! so old second-moment information goes stale quickly, and the sparse
//! late-stage gradients make a large epsilon dominate the denominator.

use crate::core_math::PExponent;
use crate::error::Error;
use crate::network::{DistanceNet, ParamGrads};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Adam moment buffers for every parameter tensor of a net (weights and
/// biases per layer, plus the scalar temperature).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m_layers: Vec<TensorMoments>,
    m_temperature: (f64, f64),
}

#[derive(Debug, Clone)]
struct TensorMoments {
    w_m: Vec<f64>,
    w_v: Vec<f64>,
    b_m: Vec<f64>,
    b_v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &DistanceNet) -> Self {
        Self::with_hyperparams(net, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON)
    }

    pub fn with_hyperparams(net: &DistanceNet, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0);
        AdamState {
            step: 0,
            beta1,
            beta2,
            epsilon,
            m_layers: net
                .layers
                .iter()
                .map(|l| TensorMoments {
                    w_m: vec![0.0; l.weights.len()],
                    w_v: vec![0.0; l.weights.len()],
                    b_m: vec![0.0; l.bias.len()],
                    b_v: vec![0.0; l.bias.len()],
                })
                .collect(),
            m_temperature: (0.0, 0.0),
        }
    }

    /// One Adam step with bias correction. `lr` applies to weights and
    /// biases; the temperature uses `temperature_lr` (one fifth of the base
    /// rate in the trainer's wiring).
    pub fn step(
        &mut self,
        net: &mut DistanceNet,
        grads: &ParamGrads,
        lr: f64,
        temperature_lr: f64,
    ) -> Result<(), Error> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::DimMismatch {
                expected: net.layers.len(),
                got: grads.layers.len(),
                context: "adam grads",
            });
        }
        for (li, g) in grads.layers.iter().enumerate() {
            if g.weights.iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(format!("layer {li} weights")));
            }
            if g.bias.iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(format!("layer {li} bias")));
            }
        }
        if grads.temperature.is_nan() {
            return Err(Error::NanGradient("temperature".into()));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);

        let update = |param: &mut f32, grad: f64, m: &mut f64, v: &mut f64, lr: f64| {
            *m = b1 * *m + (1.0 - b1) * grad;
            *v = b2 * *v + (1.0 - b2) * grad * grad;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param = (*param as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        };

        for (li, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let mom = &mut self.m_layers[li];
            if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
                return Err(Error::DimMismatch {
                    expected: layer.weights.len(),
                    got: g.weights.len(),
                    context: "adam layer grads",
                });
            }
            for k in 0..layer.weights.len() {
                update(
                    &mut layer.weights[k],
                    g.weights[k],
                    &mut mom.w_m[k],
                    &mut mom.w_v[k],
                    lr,
                );
            }
            for k in 0..layer.bias.len() {
                update(&mut layer.bias[k], g.bias[k], &mut mom.b_m[k], &mut mom.b_v[k], lr);
            }
        }
        // temperature is an f64 scalar, updated with the same rule
        {
            let (m, v) = &mut self.m_temperature;
            *m = b1 * *m + (1.0 - b1) * grads.temperature;
            *v = b2 * *v + (1.0 - b2) * grads.temperature * grads.temperature;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            net.temperature -= temperature_lr * m_hat / (v_hat.sqrt() + eps);
            if net.temperature < 1e-6 {
                net.temperature = 1e-6;
            }
        }
        Ok(())
    }
}

/// Epoch counts and schedule endpoints for the three training stages.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleConfig {
    /// Warmup epochs at `p_start`, `lambda0`.
    pub e1: usize,
    /// Relaxation epochs: p grows `p_start -> p_end`, lambda decays
    /// `lambda0 -> lambda_end`, both geometrically.
    pub e2: usize,
    /// Final epochs at `p = inf`, `lambda = 0`.
    pub e3: usize,
    pub p_start: f64,
    pub p_end: f64,
    pub lambda0: f64,
    pub lambda_end: f64,
    pub lr0: f64,
}

impl ScheduleConfig {
    pub fn total_epochs(&self) -> usize {
        self.e1 + self.e2 + self.e3
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.p_start < 1.0 || self.p_start > self.p_end {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= p_start <= p_end, got {} and {}",
                self.p_start, self.p_end
            )));
        }
        if self.lambda0 < self.lambda_end || self.lambda_end < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "need lambda0 >= lambda_end >= 0, got {} and {}",
                self.lambda0, self.lambda_end
            )));
        }
        if self.lambda0 == 0.0 && self.lambda_end > 0.0 {
            return Err(Error::InvalidConfig("lambda0 = 0 with lambda_end > 0".into()));
        }
        if self.lr0 <= 0.0 {
            return Err(Error::InvalidConfig("lr0 must be positive".into()));
        }
        if self.total_epochs() == 0 {
            return Err(Error::InvalidConfig("zero total epochs".into()));
        }
        Ok(())
    }
}

fn check_epoch(epoch: usize, total: usize) -> Result<(), Error> {
    if epoch >= total {
        return Err(Error::InvalidConfig(format!(
            "epoch {epoch} out of range for {total} total epochs"
        )));
    }
    Ok(())
}

/// Cosine annealing: `lr0 * 0.5 * (1 + cos(pi * epoch / total))`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64, Error> {
    check_epoch(epoch, total_epochs)?;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos()))
}

/// Stage-wise p: `p_start` during warmup, geometric growth to `p_end`
/// across relaxation (endpoint reached at the last relaxation epoch),
/// infinity afterwards.
pub fn p_schedule(epoch: usize, cfg: &ScheduleConfig) -> Result<PExponent, Error> {
    check_epoch(epoch, cfg.total_epochs())?;
    if epoch < cfg.e1 {
        PExponent::finite(cfg.p_start)
    } else if epoch < cfg.e1 + cfg.e2 {
        let span = (cfg.e2 - 1).max(1) as f64;
        let frac = (epoch - cfg.e1) as f64 / span;
        PExponent::finite(cfg.p_start * (cfg.p_end / cfg.p_start).powf(frac))
    } else {
        Ok(PExponent::Infinity)
    }
}

/// Stage-wise lambda: `lambda0`, geometric decay to `lambda_end`, then 0.
pub fn lambda_schedule(epoch: usize, cfg: &ScheduleConfig) -> Result<f64, Error> {
    check_epoch(epoch, cfg.total_epochs())?;
    if epoch < cfg.e1 {
        Ok(cfg.lambda0)
    } else if epoch < cfg.e1 + cfg.e2 {
        if cfg.lambda0 == 0.0 {
            return Ok(0.0);
        }
        let span = (cfg.e2 - 1).max(1) as f64;
        let frac = (epoch - cfg.e1) as f64 / span;
        Ok(cfg.lambda0 * (cfg.lambda_end / cfg.lambda0).powf(frac))
    } else {
        Ok(0.0)
    }
}
