//! Adam and momentum SGD over flat parameter slices.

use ndarray::NdFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::cast;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
        }
    }
}

/// Serializable optimizer state: a step counter plus named per-parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: String,
    pub step: u64,
    pub slots: Vec<(String, Vec<f32>)>,
}

fn check_lengths<F>(params: &[&mut [F]], grads: &[&[F]], state: &[Vec<F>]) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient group mismatch");
    assert_eq!(params.len(), state.len(), "optimizer state built for another model");
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: NdFloat> Adam<F> {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, mut params: Vec<&mut [F]>, grads: Vec<&[F]>) {
        check_lengths(&params, &grads, &self.m);
        self.step += 1;
        let (b1, b2): (F, F) = (cast(self.cfg.beta1), cast(self.cfg.beta2));
        let bc1: F = cast(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2: F = cast(1.0 - self.cfg.beta2.powi(self.step as i32));
        let lr: F = cast(self.cfg.lr);
        let eps: F = cast(self.cfg.eps);
        for (((p, g), m), v) in params.iter_mut().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (F::one() - b1) * gi;
                v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn state(&self) -> OptimizerState {
        let to32 = |v: &Vec<F>| v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect();
        let mut slots = Vec::new();
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            slots.push((format!("m{i}"), to32(m)));
            slots.push((format!("v{i}"), to32(v)));
        }
        OptimizerState {
            kind: "adam".into(),
            step: self.step,
            slots,
        }
    }

    pub fn load_state(&mut self, state: &OptimizerState) -> Result<()> {
        if state.kind != "adam" || state.slots.len() != 2 * self.m.len() {
            return Err(Error::Checkpoint("adam state does not match model".into()));
        }
        for (i, pair) in state.slots.chunks(2).enumerate() {
            if pair[0].1.len() != self.m[i].len() || pair[1].1.len() != self.v[i].len() {
                return Err(Error::Checkpoint(format!("adam slot {i} has the wrong size")));
            }
            self.m[i] = pair[0].1.iter().map(|&x| cast(x as f64)).collect();
            self.v[i] = pair[1].1.iter().map(|&x| cast(x as f64)).collect();
        }
        self.step = state.step;
        Ok(())
    }
}

/// SGD with heavy-ball momentum: `buf = momentum * buf + g; p -= lr * buf`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<F> {
    pub cfg: SgdConfig,
    step: u64,
    buf: Vec<Vec<F>>,
}

impl<F: NdFloat> SgdMomentum<F> {
    pub fn new(cfg: SgdConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            step: 0,
            buf: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, mut params: Vec<&mut [F]>, grads: Vec<&[F]>) {
        check_lengths(&params, &grads, &self.buf);
        let mu: F = cast(self.cfg.momentum);
        let lr: F = cast(self.cfg.lr);
        let first = self.step == 0;
        self.step += 1;
        for ((p, g), b) in params.iter_mut().zip(&grads).zip(&mut self.buf) {
            for i in 0..p.len() {
                b[i] = if first { g[i] } else { mu * b[i] + g[i] };
                p[i] -= lr * b[i];
            }
        }
    }

    pub fn state(&self) -> OptimizerState {
        OptimizerState {
            kind: "sgd_momentum".into(),
            step: self.step,
            slots: self
                .buf
                .iter()
                .enumerate()
                .map(|(i, b)| (format!("buf{i}"), b.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect()))
                .collect(),
        }
    }

    pub fn load_state(&mut self, state: &OptimizerState) -> Result<()> {
        if state.kind != "sgd_momentum" || state.slots.len() != self.buf.len() {
            return Err(Error::Checkpoint("sgd state does not match model".into()));
        }
        for (i, (_, data)) in state.slots.iter().enumerate() {
            if data.len() != self.buf[i].len() {
                return Err(Error::Checkpoint(format!("sgd slot {i} has the wrong size")));
            }
            self.buf[i] = data.iter().map(|&x| cast(x as f64)).collect();
        }
        self.step = state.step;
        Ok(())
    }
}
