//! Regression losses (plain and safety-biased) and the domain cross-entropy.
//!
//! All losses use sum reduction over batch and sections.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, NdFloat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::cast;

/// Probability clamp used inside the logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the extra penalty on over-estimates.
    pub alpha: f64,
    /// Weight of the squared L2 norm of the parameters.
    pub lambda: f64,
    pub safety_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            lambda: 5e-4,
            safety_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// The unsafe-penalty weight actually applied.
    pub fn effective_alpha(&self) -> f64 {
        if self.safety_enabled {
            self.alpha
        } else {
            0.0
        }
    }
}

fn check_shapes<F>(t: &ArrayView2<F>, t_hat: &ArrayView2<F>) -> Result<()> {
    if t.dim() != t_hat.dim() {
        return Err(Error::shape(format!("{:?}", t.dim()), format!("{:?}", t_hat.dim())));
    }
    Ok(())
}

fn to64<F: NdFloat>(v: F) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// `sum (t - t_hat)^2`.
pub fn mse_loss<F: NdFloat>(t: ArrayView2<F>, t_hat: ArrayView2<F>) -> Result<f64> {
    check_shapes(&t, &t_hat)?;
    Ok(ndarray::Zip::from(&t)
        .and(&t_hat)
        .fold(0.0, |acc, &a, &b| {
            let d = to64(b) - to64(a);
            acc + d * d
        }))
}

/// Data term of the safety loss: `sum (t_hat - t)^2 + alpha * max(0, t_hat - t)^2`.
pub fn safety_data_loss<F: NdFloat>(t: ArrayView2<F>, t_hat: ArrayView2<F>, alpha: f64) -> Result<f64> {
    check_shapes(&t, &t_hat)?;
    Ok(ndarray::Zip::from(&t)
        .and(&t_hat)
        .fold(0.0, |acc, &a, &b| {
            let d = to64(b) - to64(a);
            let over = d.max(0.0);
            acc + d * d + alpha * over * over
        }))
}

/// Full safety loss including `lambda * ||theta||^2` over `params`.
///
/// `params` may be `None` only when `lambda == 0`.
pub fn safety_loss<F: NdFloat>(
    t: ArrayView2<F>,
    t_hat: ArrayView2<F>,
    cfg: &LossConfig,
    params: Option<&[&[F]]>,
) -> Result<f64> {
    cfg.validate()?;
    let data = safety_data_loss(t, t_hat, cfg.effective_alpha())?;
    let reg = match params {
        Some(p) if cfg.lambda > 0.0 => cfg.lambda * squared_norm(p),
        None if cfg.lambda > 0.0 => {
            return Err(Error::config("parameters are required when lambda > 0"));
        }
        _ => 0.0,
    };
    Ok(data + reg)
}

pub fn squared_norm<F: NdFloat>(params: &[&[F]]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.iter())
        .map(|&v| {
            let v = to64(v);
            v * v
        })
        .sum()
}

/// Gradient of [`safety_data_loss`] w.r.t. `t_hat`. The kink uses subgradient 0.
pub fn safety_loss_grad<F: NdFloat>(t: ArrayView2<F>, t_hat: ArrayView2<F>, alpha: f64) -> Result<Array2<F>> {
    check_shapes(&t, &t_hat)?;
    let two: F = cast(2.0);
    let a: F = cast(alpha);
    Ok(ndarray::Zip::from(&t).and(&t_hat).map_collect(|&target, &pred| {
        let d = pred - target;
        let over = if d > F::zero() { d } else { F::zero() };
        two * d + two * a * over
    }))
}

fn check_probs<F: NdFloat>(p: &ArrayView1<F>, labels: &ArrayView1<F>) -> Result<()> {
    if p.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", p.len()), format!("{} labels", labels.len())));
    }
    if let Some(bad) = p.iter().find(|v| !(**v >= F::zero() && **v <= F::one())) {
        return Err(Error::OutOfRange(format!("probability {bad} outside (0, 1)")));
    }
    if let Some(bad) = labels.iter().find(|l| **l != F::zero() && **l != F::one()) {
        return Err(Error::OutOfRange(format!("domain label {bad} is not 0 or 1")));
    }
    Ok(())
}

/// `-sum [l log p + (1 - l) log(1 - p)]` with `p` clamped to `[eps, 1 - eps]`.
pub fn domain_bce_loss<F: NdFloat>(p: ArrayView1<F>, labels: ArrayView1<F>) -> Result<f64> {
    check_probs(&p, &labels)?;
    Ok(p.iter()
        .zip(labels.iter())
        .map(|(&p, &l)| {
            let p = to64(p).clamp(PROB_EPS, 1.0 - PROB_EPS);
            let l = to64(l);
            -(l * p.ln() + (1.0 - l) * (1.0 - p).ln())
        })
        .sum())
}

/// Gradient of [`domain_bce_loss`] w.r.t. `p`.
pub fn domain_bce_grad<F: NdFloat>(p: ArrayView1<F>, labels: ArrayView1<F>) -> Result<Array1<F>> {
    check_probs(&p, &labels)?;
    Ok(ndarray::Zip::from(&p).and(&labels).map_collect(|&p, &l| {
        let pc = to64(p).clamp(PROB_EPS, 1.0 - PROB_EPS);
        let l = to64(l);
        cast(-l / pc + (1.0 - l) / (1.0 - pc))
    }))
}
