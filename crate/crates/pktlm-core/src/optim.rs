//! Adaptive-moment optimizer with decoupled weight decay, global-norm
//! gradient clipping, and the warmup/cosine learning-rate schedule.

use alloc::string::String;
use core::fmt;

use crate::model::{ModelParams, TensorClass};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig { lr: 3e-4, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OptError {
    Config(String),
}

impl fmt::Display for OptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptError::Config(msg) => write!(f, "optimizer: {}", msg),
        }
    }
}

/// First/second moment estimates plus the step counter.
pub struct OptState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Real> OptState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        OptState {
            m: ModelParams::zeros_like(params),
            v: ModelParams::zeros_like(params),
            step: 0,
        }
    }
}

/// The scalar update rule, exposed for direct testing. `decay` controls
/// whether decoupled weight decay applies to this tensor.
pub fn adamw_update<T: Real>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    cfg: &OptConfig,
    decay: bool,
) {
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
    let bias1 = 1.0 - libm::pow(cfg.beta1, step as f64);
    let bias2 = 1.0 - libm::pow(cfg.beta2, step as f64);
    let inv_bias1 = T::from_f64(1.0 / bias1);
    let inv_bias2 = T::from_f64(1.0 / bias2);
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let wd = T::from_f64(cfg.lr * cfg.weight_decay);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + one_m_b1 * g[i];
        v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
        let mhat = m[i] * inv_bias1;
        let vhat = v[i] * inv_bias2;
        let mut upd = lr * mhat / (vhat.sqrt() + eps);
        if decay {
            upd += wd * p[i];
        }
        p[i] -= upd;
    }
}

/// One optimizer step over every tensor. Weight decay applies to matrix
/// tensors only (embeddings and projection weights), not to biases or
/// layer-norm parameters.
pub fn opt_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut OptState<T>,
    cfg: &OptConfig,
) -> Result<(), OptError> {
    if cfg.lr <= 0.0 {
        return Err(OptError::Config("learning rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(OptError::Config("betas must lie in [0, 1)".into()));
    }
    state.step += 1;
    let step = state.step;

    fn upd<T: Real>(
        p: &mut [T],
        g: &[T],
        m: &mut [T],
        v: &mut [T],
        step: u64,
        cfg: &OptConfig,
        class: TensorClass,
    ) {
        adamw_update(p, g, m, v, step, cfg, class == TensorClass::Matrix);
    }

    let s = state;
    upd(&mut params.tok_emb.data, &grads.tok_emb.data, &mut s.m.tok_emb.data, &mut s.v.tok_emb.data, step, cfg, TensorClass::Matrix);
    upd(&mut params.pos_emb.data, &grads.pos_emb.data, &mut s.m.pos_emb.data, &mut s.v.pos_emb.data, step, cfg, TensorClass::Matrix);
    for i in 0..params.layers.len() {
        let (p, g, m, v) = (&mut params.layers[i], &grads.layers[i], &mut s.m.layers[i], &mut s.v.layers[i]);
        upd(&mut p.ln1_g, &g.ln1_g, &mut m.ln1_g, &mut v.ln1_g, step, cfg, TensorClass::Vector);
        upd(&mut p.ln1_b, &g.ln1_b, &mut m.ln1_b, &mut v.ln1_b, step, cfg, TensorClass::Vector);
        upd(&mut p.w_qkv.data, &g.w_qkv.data, &mut m.w_qkv.data, &mut v.w_qkv.data, step, cfg, TensorClass::Matrix);
        upd(&mut p.b_qkv, &g.b_qkv, &mut m.b_qkv, &mut v.b_qkv, step, cfg, TensorClass::Vector);
        upd(&mut p.w_o.data, &g.w_o.data, &mut m.w_o.data, &mut v.w_o.data, step, cfg, TensorClass::Matrix);
        upd(&mut p.b_o, &g.b_o, &mut m.b_o, &mut v.b_o, step, cfg, TensorClass::Vector);
        upd(&mut p.ln2_g, &g.ln2_g, &mut m.ln2_g, &mut v.ln2_g, step, cfg, TensorClass::Vector);
        upd(&mut p.ln2_b, &g.ln2_b, &mut m.ln2_b, &mut v.ln2_b, step, cfg, TensorClass::Vector);
        upd(&mut p.w_fc.data, &g.w_fc.data, &mut m.w_fc.data, &mut v.w_fc.data, step, cfg, TensorClass::Matrix);
        upd(&mut p.b_fc, &g.b_fc, &mut m.b_fc, &mut v.b_fc, step, cfg, TensorClass::Vector);
        upd(&mut p.w_proj.data, &g.w_proj.data, &mut m.w_proj.data, &mut v.w_proj.data, step, cfg, TensorClass::Matrix);
        upd(&mut p.b_proj, &g.b_proj, &mut m.b_proj, &mut v.b_proj, step, cfg, TensorClass::Vector);
    }
    upd(&mut params.lnf_g, &grads.lnf_g, &mut s.m.lnf_g, &mut s.v.lnf_g, step, cfg, TensorClass::Vector);
    upd(&mut params.lnf_b, &grads.lnf_b, &mut s.m.lnf_b, &mut s.v.lnf_b, step, cfg, TensorClass::Vector);
    if let (Some(p), Some(g)) = (&mut params.classifier, &grads.classifier) {
        let m = s.m.classifier.get_or_insert_with(|| crate::tensor::Mat::zeros(p.rows, p.cols));
        let v = s.v.classifier.get_or_insert_with(|| crate::tensor::Mat::zeros(p.rows, p.cols));
        upd(&mut p.data, &g.data, &mut m.data, &mut v.data, step, cfg, TensorClass::Matrix);
    }
    Ok(())
}

/// Scale gradients in place when their global L2 norm exceeds `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grads: &mut ModelParams<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    grads.visit(|_, t, _| {
        for x in t {
            let v = x.to_f64();
            sq += v * v;
        }
    });
    let norm = libm::sqrt(sq);
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Linear warmup then cosine decay to zero over `total` steps.
pub fn warmup_cosine_lr(step: u64, total: u64, base_lr: f64, warmup: u64) -> f64 {
    if warmup > 0 && step < warmup {
        return base_lr * (step + 1) as f64 / warmup as f64;
    }
    if total <= warmup {
        return base_lr;
    }
    let progress = (step.saturating_sub(warmup)) as f64 / (total - warmup) as f64;
    let progress = progress.min(1.0);
    base_lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}
