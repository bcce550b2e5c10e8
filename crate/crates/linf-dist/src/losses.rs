//! Objective functions: the plain hinge, the clipped hinge, scaled
//! cross-entropy, the thresholded cross-entropy variant and the composite
//! objective that mixes scaled CE with the clipped hinge.

use crate::core_math::log_sum_exp;
use crate::error::Error;

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Plain hinge `max(theta - margin, 0)`.
    Hinge,
    /// Scaled cross-entropy only.
    ScaledCe,
    /// Cross-entropy with the true-class logit reduced by theta.
    CeThreshold,
    /// `lambda * scaled_ce + clipped_hinge` with a fixed lambda.
    CompositeFixedLambda,
    /// The same composite with lambda decaying on the relaxation schedule.
    CompositeDecayingLambda,
}

#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Hinge threshold, must exceed `2 * eps` for certification-aligned training.
    pub theta: f64,
    /// Mixing coefficient for the composite kinds.
    pub lambda: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, theta: f64, lambda: f64) -> Result<Self, Error> {
        if theta <= 0.0 {
            return Err(Error::InvalidConfig(format!("theta must be > 0, got {theta}")));
        }
        if lambda < 0.0 {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(LossSpec { kind, theta, lambda })
    }
}

fn check_label(len: usize, y: usize) -> Result<(), Error> {
    if y >= len {
        return Err(Error::LabelOutOfRange { label: y, classes: len });
    }
    if len < 2 {
        return Err(Error::InvalidConfig("need at least 2 classes".into()));
    }
    Ok(())
}

/// Output margin: true-class logit minus the best other logit.
pub fn margin(logits: &[f64], y: usize) -> Result<f64, Error> {
    check_label(logits.len(), y)?;
    let mut best_other = f64::NEG_INFINITY;
    for (j, &z) in logits.iter().enumerate() {
        if j != y && z > best_other {
            best_other = z;
        }
    }
    Ok(logits[y] - best_other)
}

/// Index of the largest logit other than `y` (the runner-up when `y` wins).
fn best_other_index(logits: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (j, &z) in logits.iter().enumerate() {
        if j != y && z > best_v {
            best_v = z;
            best = j;
        }
    }
    best
}

/// Plain hinge `max(theta - margin, 0)`.
pub fn hinge_loss(logits: &[f64], y: usize, theta: f64) -> Result<f64, Error> {
    Ok((theta - margin(logits, y)?).max(0.0))
}

/// Gradient of [`hinge_loss`] w.r.t. the logits (zero-side subgradient at
/// the kink).
pub fn hinge_loss_grad(logits: &[f64], y: usize, theta: f64) -> Result<Vec<f64>, Error> {
    let m = margin(logits, y)?;
    let mut g = vec![0.0; logits.len()];
    if m < theta {
        g[y] = -1.0;
        g[best_other_index(logits, y)] = 1.0;
    }
    Ok(g)
}

/// Clipped hinge `min(max(1 - margin/theta, 0), 1)`: plateaus at 1 for
/// misclassified samples and at 0 once the margin clears theta.
pub fn clipped_hinge(logits: &[f64], y: usize, theta: f64) -> Result<f64, Error> {
    let m = margin(logits, y)?;
    Ok((1.0 - m / theta).clamp(0.0, 1.0))
}

/// Gradient of [`clipped_hinge`]: zero on both plateaus, else `-1/theta` on
/// the true-class logit and `+1/theta` on the runner-up.
pub fn clipped_hinge_grad(logits: &[f64], y: usize, theta: f64) -> Result<Vec<f64>, Error> {
    let m = margin(logits, y)?;
    let mut g = vec![0.0; logits.len()];
    if m > 0.0 && m < theta {
        g[y] = -1.0 / theta;
        g[best_other_index(logits, y)] = 1.0 / theta;
    }
    Ok(g)
}

/// Scaled cross-entropy `log_sum_exp(s*z) - s*z_y` with exact gradients for
/// the logits and the temperature `s`.
pub fn scaled_ce(logits: &[f64], y: usize, s: f64) -> Result<(f64, Vec<f64>, f64), Error> {
    check_label(logits.len(), y)?;
    if s <= 0.0 {
        return Err(Error::InvalidConfig(format!("temperature must be > 0, got {s}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|&z| s * z).collect();
    let lse = log_sum_exp(&scaled)?;
    let loss = lse - scaled[y];
    let mut grad_logits = vec![0.0; logits.len()];
    let mut grad_s = 0.0;
    for (i, &sz) in scaled.iter().enumerate() {
        let soft = (sz - lse).exp();
        let delta = soft - if i == y { 1.0 } else { 0.0 };
        grad_logits[i] = delta * s;
        grad_s += delta * logits[i];
    }
    Ok((loss, grad_logits, grad_s))
}

/// Cross-entropy with threshold: scaled CE applied after reducing the
/// true-class logit by `theta`.
pub fn ce_threshold(logits: &[f64], y: usize, s: f64, theta: f64) -> Result<(f64, Vec<f64>, f64), Error> {
    if theta <= 0.0 {
        return Err(Error::InvalidConfig(format!("theta must be > 0, got {theta}")));
    }
    let mut shifted = logits.to_vec();
    shifted[y] -= theta;
    scaled_ce(&shifted, y, s)
}

/// The composite objective `lambda * scaled_ce + clipped_hinge`.
/// Returns `(loss, grad_logits, grad_s)`.
pub fn composite_loss(
    logits: &[f64],
    y: usize,
    theta: f64,
    lambda: f64,
    s: f64,
) -> Result<(f64, Vec<f64>, f64), Error> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let ch = clipped_hinge(logits, y, theta)?;
    let ch_grad = clipped_hinge_grad(logits, y, theta)?;
    if lambda == 0.0 {
        return Ok((ch, ch_grad, 0.0));
    }
    let (ce, ce_grad, ce_gs) = scaled_ce(logits, y, s)?;
    let loss = lambda * ce + ch;
    let grad: Vec<f64> = ce_grad
        .iter()
        .zip(ch_grad.iter())
        .map(|(&a, &b)| lambda * a + b)
        .collect();
    Ok((loss, grad, lambda * ce_gs))
}

/// Per-sample loss + logits gradient + temperature gradient for a
/// [`LossSpec`], with `lambda` supplied by the schedule.
pub fn sample_loss(
    spec: &LossSpec,
    lambda: f64,
    logits: &[f64],
    y: usize,
    s: f64,
) -> Result<(f64, Vec<f64>, f64), Error> {
    match spec.kind {
        LossKind::Hinge => {
            let l = hinge_loss(logits, y, spec.theta)?;
            let g = hinge_loss_grad(logits, y, spec.theta)?;
            Ok((l, g, 0.0))
        }
        LossKind::ScaledCe => scaled_ce(logits, y, s),
        LossKind::CeThreshold => ce_threshold(logits, y, s, spec.theta),
        LossKind::CompositeFixedLambda => composite_loss(logits, y, spec.theta, spec.lambda, s),
        LossKind::CompositeDecayingLambda => composite_loss(logits, y, spec.theta, lambda, s),
    }
}
