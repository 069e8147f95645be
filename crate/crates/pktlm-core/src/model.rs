//! Decoder-only transformer: embeddings with learned positions, pre-norm
//! residual blocks (causal multi-head attention + GELU MLP), weight-tied
//! output projection, and exact analytic gradients for both the next-token
//! cross-entropy and the classification head.
//!
//! Generic over [`Real`] so training can run in `f32` while gradient
//! verification runs in `f64`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, vecmat, Mat};
use crate::vocab::{TokenId, PAD};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: small enough to train on a CPU.
    pub fn toy_default(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            context_len: 512,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            d_ff: 512,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.vocab_size > 0
            && self.context_len > 0
            && self.d_model > 0
            && self.n_layers > 0
            && self.n_heads > 0
            && self.d_ff > 0
            && self.d_model % self.n_heads == 0
            && self.dropout_rate >= 0.0
            && self.dropout_rate < 1.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    Config,
    /// Input longer than the context window.
    Length { len: usize, cap: usize },
    /// A token id outside the vocabulary.
    BadToken { position: usize },
    /// Loss needs at least two tokens.
    TooShort,
    /// Non-finite value produced; carries the tensor name.
    NonFinite { tensor: String },
    /// No classifier head on this model.
    NoClassifier,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config => write!(f, "model: invalid configuration"),
            ModelError::Length { len, cap } => {
                write!(f, "model: sequence length {} exceeds context {}", len, cap)
            }
            ModelError::BadToken { position } => {
                write!(f, "model: token id out of vocabulary at {}", position)
            }
            ModelError::TooShort => write!(f, "model: sequence too short for a loss"),
            ModelError::NonFinite { tensor } => write!(f, "model: non-finite value in {}", tensor),
            ModelError::NoClassifier => write!(f, "model: no classifier head"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_g: Vec<T>,
    pub ln1_b: Vec<T>,
    pub w_qkv: Mat<T>,
    pub b_qkv: Vec<T>,
    pub w_o: Mat<T>,
    pub b_o: Vec<T>,
    pub ln2_g: Vec<T>,
    pub ln2_b: Vec<T>,
    pub w_fc: Mat<T>,
    pub b_fc: Vec<T>,
    pub w_proj: Mat<T>,
    pub b_proj: Vec<T>,
}

/// All model weights. The token embedding doubles as the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub tok_emb: Mat<T>,
    pub pos_emb: Mat<T>,
    pub layers: Vec<LayerParams<T>>,
    pub lnf_g: Vec<T>,
    pub lnf_b: Vec<T>,
    pub classifier: Option<Mat<T>>,
}

/// Whether a tensor takes decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorClass {
    Matrix,
    Vector,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = || LayerParams {
            ln1_g: vec![T::ZERO; d],
            ln1_b: vec![T::ZERO; d],
            w_qkv: Mat::zeros(d, 3 * d),
            b_qkv: vec![T::ZERO; 3 * d],
            w_o: Mat::zeros(d, d),
            b_o: vec![T::ZERO; d],
            ln2_g: vec![T::ZERO; d],
            ln2_b: vec![T::ZERO; d],
            w_fc: Mat::zeros(d, config.d_ff),
            b_fc: vec![T::ZERO; config.d_ff],
            w_proj: Mat::zeros(config.d_ff, d),
            b_proj: vec![T::ZERO; d],
        };
        ModelParams {
            tok_emb: Mat::zeros(config.vocab_size, d),
            pos_emb: Mat::zeros(config.context_len, d),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            lnf_g: vec![T::ZERO; d],
            lnf_b: vec![T::ZERO; d],
            classifier: None,
        }
    }

    /// Random initialization: normal(0, 0.02) weights, zero biases, unit
    /// layer-norm gains.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = Rng::derive(config.seed, "init", 0);
        let mut p = Self::zeros(config);
        let mut fill = |m: &mut [T]| {
            for x in m.iter_mut() {
                *x = T::from_f64(rng.normal() * 0.02);
            }
        };
        fill(&mut p.tok_emb.data);
        fill(&mut p.pos_emb.data);
        for l in p.layers.iter_mut() {
            fill(&mut l.w_qkv.data);
            fill(&mut l.w_o.data);
            fill(&mut l.w_fc.data);
            fill(&mut l.w_proj.data);
            for g in l.ln1_g.iter_mut().chain(l.ln2_g.iter_mut()) {
                *g = T::ONE;
            }
        }
        for g in p.lnf_g.iter_mut() {
            *g = T::ONE;
        }
        p
    }

    /// Attach a freshly initialized classifier head.
    pub fn with_classifier(mut self, config: &ModelConfig, n_classes: usize) -> Self {
        let mut rng = Rng::derive(config.seed, "classifier-init", 0);
        let mut w = Mat::zeros(config.d_model, n_classes);
        for x in w.data.iter_mut() {
            *x = T::from_f64(rng.normal() * 0.02);
        }
        self.classifier = Some(w);
        self
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.classifier.as_ref().map(|c| c.cols)
    }

    /// Visit every tensor in a fixed order (the checkpoint and optimizer
    /// order). Names are stable identifiers.
    pub fn visit(&self, mut f: impl FnMut(&str, &[T], TensorClass)) {
        f("tok_emb", &self.tok_emb.data, TensorClass::Matrix);
        f("pos_emb", &self.pos_emb.data, TensorClass::Matrix);
        for (i, l) in self.layers.iter().enumerate() {
            let name = |s: &str| alloc::format!("layer{}.{}", i, s);
            f(&name("ln1_g"), &l.ln1_g, TensorClass::Vector);
            f(&name("ln1_b"), &l.ln1_b, TensorClass::Vector);
            f(&name("w_qkv"), &l.w_qkv.data, TensorClass::Matrix);
            f(&name("b_qkv"), &l.b_qkv, TensorClass::Vector);
            f(&name("w_o"), &l.w_o.data, TensorClass::Matrix);
            f(&name("b_o"), &l.b_o, TensorClass::Vector);
            f(&name("ln2_g"), &l.ln2_g, TensorClass::Vector);
            f(&name("ln2_b"), &l.ln2_b, TensorClass::Vector);
            f(&name("w_fc"), &l.w_fc.data, TensorClass::Matrix);
            f(&name("b_fc"), &l.b_fc, TensorClass::Vector);
            f(&name("w_proj"), &l.w_proj.data, TensorClass::Matrix);
            f(&name("b_proj"), &l.b_proj, TensorClass::Vector);
        }
        f("lnf_g", &self.lnf_g, TensorClass::Vector);
        f("lnf_b", &self.lnf_b, TensorClass::Vector);
        if let Some(c) = &self.classifier {
            f("classifier", &c.data, TensorClass::Matrix);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [T], TensorClass)) {
        f("tok_emb", &mut self.tok_emb.data, TensorClass::Matrix);
        f("pos_emb", &mut self.pos_emb.data, TensorClass::Matrix);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let name = |s: &str| alloc::format!("layer{}.{}", i, s);
            f(&name("ln1_g"), &mut l.ln1_g, TensorClass::Vector);
            f(&name("ln1_b"), &mut l.ln1_b, TensorClass::Vector);
            f(&name("w_qkv"), &mut l.w_qkv.data, TensorClass::Matrix);
            f(&name("b_qkv"), &mut l.b_qkv, TensorClass::Vector);
            f(&name("w_o"), &mut l.w_o.data, TensorClass::Matrix);
            f(&name("b_o"), &mut l.b_o, TensorClass::Vector);
            f(&name("ln2_g"), &mut l.ln2_g, TensorClass::Vector);
            f(&name("ln2_b"), &mut l.ln2_b, TensorClass::Vector);
            f(&name("w_fc"), &mut l.w_fc.data, TensorClass::Matrix);
            f(&name("b_fc"), &mut l.b_fc, TensorClass::Vector);
            f(&name("w_proj"), &mut l.w_proj.data, TensorClass::Matrix);
            f(&name("b_proj"), &mut l.b_proj, TensorClass::Vector);
        }
        f("lnf_g", &mut self.lnf_g, TensorClass::Vector);
        f("lnf_b", &mut self.lnf_b, TensorClass::Vector);
        if let Some(c) = &mut self.classifier {
            f("classifier", &mut c.data, TensorClass::Matrix);
        }
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t, _| n += t.len());
        n
    }

    /// First tensor containing a non-finite value, if any.
    pub fn find_non_finite(&self) -> Option<String> {
        let mut bad: Option<String> = None;
        self.visit(|name, t, _| {
            if bad.is_none() && t.iter().any(|x| !x.is_finite()) {
                bad = Some(name.into());
            }
        });
        bad
    }

    /// Convert precision (used when loading 32-bit checkpoints into the
    /// 64-bit verification mode and back).
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
            v.iter().map(|x| U::from_f64(x.to_f64())).collect()
        }
        fn cast_mat<T: Real, U: Real>(m: &Mat<T>) -> Mat<U> {
            Mat { rows: m.rows, cols: m.cols, data: cast_vec(&m.data) }
        }
        ModelParams {
            tok_emb: cast_mat(&self.tok_emb),
            pos_emb: cast_mat(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: cast_vec(&l.ln1_g),
                    ln1_b: cast_vec(&l.ln1_b),
                    w_qkv: cast_mat(&l.w_qkv),
                    b_qkv: cast_vec(&l.b_qkv),
                    w_o: cast_mat(&l.w_o),
                    b_o: cast_vec(&l.b_o),
                    ln2_g: cast_vec(&l.ln2_g),
                    ln2_b: cast_vec(&l.ln2_b),
                    w_fc: cast_mat(&l.w_fc),
                    b_fc: cast_vec(&l.b_fc),
                    w_proj: cast_mat(&l.w_proj),
                    b_proj: cast_vec(&l.b_proj),
                })
                .collect(),
            lnf_g: cast_vec(&self.lnf_g),
            lnf_b: cast_vec(&self.lnf_b),
            classifier: self.classifier.as_ref().map(cast_mat),
        }
    }
}

/// Forward mode. Dropout only fires in `Train`; masks derive from the model
/// seed and the caller-provided step counter, so runs are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { step: u64 },
}

fn gelu<T: Real>(x: T) -> T {
    // exact: x * Phi(x)
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    half * x * (T::ONE + (x * inv_sqrt2).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    let phi_big = half * (T::ONE + (x * inv_sqrt2).erf());
    let inv_sqrt_2pi = T::from_f64(0.3989422804014327);
    let pdf = inv_sqrt_2pi * (-(half * x * x)).exp();
    phi_big + x * pdf
}

/// Row-wise layer norm; returns normalized rows and caches (xhat, inv_std).
fn layer_norm<T: Real>(x: &Mat<T>, g: &[T], b: &[T]) -> (Mat<T>, Mat<T>, Vec<T>) {
    let d = x.cols;
    let mut out = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut inv_std = vec![T::ZERO; x.rows];
    let dn = T::from_f64(d as f64);
    for r in 0..x.rows {
        let row = x.row(r);
        let mut mean = T::ZERO;
        for &v in row {
            mean += v;
        }
        mean /= dn;
        let mut var = T::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var /= dn;
        let istd = T::ONE / (var + T::from_f64(LN_EPS)).sqrt();
        inv_std[r] = istd;
        let xh = xhat.row_mut(r);
        let o = &mut out.data[r * d..(r + 1) * d];
        for j in 0..d {
            let h = (row[j] - mean) * istd;
            xh[j] = h;
            o[j] = g[j] * h + b[j];
        }
    }
    (out, xhat, inv_std)
}

/// Backward through layer norm for one activation matrix.
fn layer_norm_backward<T: Real>(
    d_out: &Mat<T>,
    xhat: &Mat<T>,
    inv_std: &[T],
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
) -> Mat<T> {
    let d = d_out.cols;
    let dn = T::from_f64(d as f64);
    let mut dx = Mat::zeros(d_out.rows, d);
    for r in 0..d_out.rows {
        let dy = d_out.row(r);
        let xh = xhat.row(r);
        let mut sum_dxhat = T::ZERO;
        let mut sum_dxhat_xhat = T::ZERO;
        for j in 0..d {
            dg[j] += dy[j] * xh[j];
            db[j] += dy[j];
            let dxh = dy[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let mean_dxhat = sum_dxhat / dn;
        let mean_dxhat_xhat = sum_dxhat_xhat / dn;
        let out = dx.row_mut(r);
        for j in 0..d {
            let dxh = dy[j] * g[j];
            out[j] = inv_std[r] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Inverted dropout mask: entries are 0 or 1/(1-p).
fn dropout_mask<T: Real>(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Mat<T> {
    let keep = T::from_f64(1.0 / (1.0 - p));
    let mut m = Mat::zeros(rows, cols);
    for x in m.data.iter_mut() {
        *x = if rng.uniform() < p { T::ZERO } else { keep };
    }
    m
}

fn apply_mask<T: Real>(x: &mut Mat<T>, m: &Mat<T>) {
    for (a, b) in x.data.iter_mut().zip(m.data.iter()) {
        *a *= *b;
    }
}

struct LayerCache<T> {
    x_in: Mat<T>,
    ln1_xhat: Mat<T>,
    ln1_inv_std: Vec<T>,
    qkv: Mat<T>,
    /// Post-softmax attention probabilities, one T*T matrix per head.
    probs: Vec<Mat<T>>,
    probs_mask: Option<Vec<Mat<T>>>,
    z: Mat<T>,
    attn_mask: Option<Mat<T>>,
    x_mid: Mat<T>,
    ln2_xhat: Mat<T>,
    ln2_inv_std: Vec<T>,
    fc_pre: Mat<T>,
    fc_act: Mat<T>,
    mlp_mask: Option<Mat<T>>,
}

/// Everything the backward pass needs from a forward run.
pub struct ForwardCache<T> {
    emb_mask: Option<Mat<T>>,
    layers: Vec<LayerCache<T>>,
    lnf_in: Mat<T>,
    lnf_xhat: Mat<T>,
    lnf_inv_std: Vec<T>,
    /// Final hidden states after the last layer norm, one row per position.
    pub hidden: Mat<T>,
}

fn check_input(ids: &[TokenId], config: &ModelConfig) -> Result<(), ModelError> {
    if ids.len() > config.context_len {
        return Err(ModelError::Length { len: ids.len(), cap: config.context_len });
    }
    if let Some(p) = ids.iter().position(|&t| t as usize >= config.vocab_size) {
        return Err(ModelError::BadToken { position: p });
    }
    Ok(())
}

/// Full-sequence forward pass. Returns the cache whose `hidden` field holds
/// the final per-position representations.
pub fn forward<T: Real>(
    ids: &[TokenId],
    params: &ModelParams<T>,
    config: &ModelConfig,
    mode: Mode,
) -> Result<ForwardCache<T>, ModelError> {
    check_input(ids, config)?;
    if ids.is_empty() {
        return Err(ModelError::TooShort);
    }
    let t_len = ids.len();
    let d = config.d_model;
    let h = config.n_heads;
    let dh = d / h;
    let scale = T::from_f64(1.0 / libm::sqrt(dh as f64));
    let dropout = match mode {
        Mode::Train { .. } => config.dropout_rate,
        Mode::Eval => 0.0,
    };
    let mut drop_rng = match mode {
        Mode::Train { step } => Some(Rng::derive(config.seed, "dropout", step)),
        Mode::Eval => None,
    };

    // Embedding sum.
    let mut x = Mat::zeros(t_len, d);
    for (t, &id) in ids.iter().enumerate() {
        let e = params.tok_emb.row(id as usize);
        let p = params.pos_emb.row(t);
        let row = x.row_mut(t);
        for j in 0..d {
            row[j] = e[j] + p[j];
        }
    }
    let emb_mask = if dropout > 0.0 {
        let m = dropout_mask(t_len, d, dropout, drop_rng.as_mut().unwrap());
        apply_mask(&mut x, &m);
        Some(m)
    } else {
        None
    };

    let neg_inf = T::from_f64(-1e30);
    let mut layer_caches = Vec::with_capacity(config.n_layers);

    for lp in params.layers.iter() {
        let x_in = x.clone();
        let (ln1_out, ln1_xhat, ln1_inv_std) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);

        // QKV projection.
        let mut qkv = Mat::zeros(t_len, 3 * d);
        for r in 0..t_len {
            qkv.row_mut(r).copy_from_slice(&lp.b_qkv);
        }
        gemm_nn(&mut qkv, &ln1_out, &lp.w_qkv);

        // Per-head causal attention.
        let mut z = Mat::zeros(t_len, d);
        let mut probs = Vec::with_capacity(h);
        let mut probs_mask: Option<Vec<Mat<T>>> = if dropout > 0.0 { Some(Vec::new()) } else { None };
        for head in 0..h {
            let q_off = head * dh;
            let k_off = d + head * dh;
            let v_off = 2 * d + head * dh;
            let mut p_mat = Mat::zeros(t_len, t_len);
            for i in 0..t_len {
                let qrow = &qkv.row(i)[q_off..q_off + dh];
                // scores for j <= i
                let mut maxv = neg_inf;
                let prow = p_mat.row_mut(i);
                for j in 0..=i {
                    let krow = &qkv.row(j)[k_off..k_off + dh];
                    let s = dot(qrow, krow) * scale;
                    prow[j] = s;
                    maxv = maxv.maximum(s);
                }
                // stable softmax over the causal prefix
                let mut denom = T::ZERO;
                for j in 0..=i {
                    let e = (prow[j] - maxv).exp();
                    prow[j] = e;
                    denom += e;
                }
                for j in 0..=i {
                    prow[j] /= denom;
                }
            }
            let p_used = if dropout > 0.0 {
                let m = dropout_mask(t_len, t_len, dropout, drop_rng.as_mut().unwrap());
                let mut pd = p_mat.clone();
                apply_mask(&mut pd, &m);
                probs_mask.as_mut().unwrap().push(m);
                pd
            } else {
                p_mat.clone()
            };
            // z_head = P * V
            for i in 0..t_len {
                let prow = p_used.row(i);
                let zrow = &mut z.data[i * d + q_off..i * d + q_off + dh];
                for j in 0..=i {
                    let vrow = &qkv.row(j)[v_off..v_off + dh];
                    let pv = prow[j];
                    for c in 0..dh {
                        zrow[c] += pv * vrow[c];
                    }
                }
            }
            probs.push(p_mat);
        }

        // Output projection + residual.
        let mut attn_out = Mat::zeros(t_len, d);
        for r in 0..t_len {
            attn_out.row_mut(r).copy_from_slice(&lp.b_o);
        }
        gemm_nn(&mut attn_out, &z, &lp.w_o);
        let attn_mask = if dropout > 0.0 {
            let m = dropout_mask(t_len, d, dropout, drop_rng.as_mut().unwrap());
            apply_mask(&mut attn_out, &m);
            Some(m)
        } else {
            None
        };
        let mut x_mid = x_in.clone();
        x_mid.add_assign(&attn_out);

        // MLP.
        let (ln2_out, ln2_xhat, ln2_inv_std) = layer_norm(&x_mid, &lp.ln2_g, &lp.ln2_b);
        let mut fc_pre = Mat::zeros(t_len, config.d_ff);
        for r in 0..t_len {
            fc_pre.row_mut(r).copy_from_slice(&lp.b_fc);
        }
        gemm_nn(&mut fc_pre, &ln2_out, &lp.w_fc);
        let mut fc_act = Mat::zeros(t_len, config.d_ff);
        for (a, &p) in fc_act.data.iter_mut().zip(fc_pre.data.iter()) {
            *a = gelu(p);
        }
        let mut mlp_out = Mat::zeros(t_len, d);
        for r in 0..t_len {
            mlp_out.row_mut(r).copy_from_slice(&lp.b_proj);
        }
        gemm_nn(&mut mlp_out, &fc_act, &lp.w_proj);
        let mlp_mask = if dropout > 0.0 {
            let m = dropout_mask(t_len, d, dropout, drop_rng.as_mut().unwrap());
            apply_mask(&mut mlp_out, &m);
            Some(m)
        } else {
            None
        };
        let mut x_out = x_mid.clone();
        x_out.add_assign(&mlp_out);

        layer_caches.push(LayerCache {
            x_in,
            ln1_xhat,
            ln1_inv_std,
            qkv,
            probs,
            probs_mask,
            z,
            attn_mask,
            x_mid,
            ln2_xhat,
            ln2_inv_std,
            fc_pre,
            fc_act,
            mlp_mask,
        });
        x = x_out;
    }

    let lnf_in = x.clone();
    let (hidden, lnf_xhat, lnf_inv_std) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    Ok(ForwardCache { emb_mask, layers: layer_caches, lnf_in, lnf_xhat, lnf_inv_std, hidden })
}

/// Language-model logits for every position: `hidden * tok_emb^T`.
pub fn lm_logits<T: Real>(hidden: &Mat<T>, params: &ModelParams<T>) -> Mat<T> {
    let mut logits = Mat::zeros(hidden.rows, params.tok_emb.rows);
    gemm_nt(&mut logits, hidden, &params.tok_emb);
    logits
}

/// Numerically stable softmax of one logit row, accumulated in f64.
pub fn softmax_row<T: Real>(row: &[T]) -> Vec<f64> {
    let maxv = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.to_f64()));
    let mut out: Vec<f64> = row.iter().map(|x| libm::exp(x.to_f64() - maxv)).collect();
    let denom: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= denom;
    }
    out
}

/// Next-token probability distribution after a prefix (eval mode).
pub fn next_token_distribution<T: Real>(
    prefix: &[TokenId],
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<Vec<f64>, ModelError> {
    if prefix.is_empty() {
        return Err(ModelError::TooShort);
    }
    let cache = forward(prefix, params, config, Mode::Eval)?;
    let last = cache.hidden.row(cache.hidden.rows - 1);
    let mut logits = vec![T::ZERO; config.vocab_size];
    vecmat(&mut logits, last, &transpose_view(&params.tok_emb), None);
    Ok(softmax_row(&logits))
}

// tok_emb is V x d; the output projection needs d x V. Materializing the
// transpose once per call is fine at these sizes for the non-hot path;
// the hot paths use gemm_nt directly.
fn transpose_view<T: Real>(m: &Mat<T>) -> Mat<T> {
    let mut t = Mat::zeros(m.cols, m.rows);
    for r in 0..m.rows {
        for c in 0..m.cols {
            t.data[c * m.rows + r] = m.data[r * m.cols + c];
        }
    }
    t
}

/// Cross-entropy loss value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// Number of predicted (non-pad) target tokens.
    pub tokens: usize,
}

impl LossValue {
    pub fn per_token(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.total / self.tokens as f64
        }
    }
}

/// Autoregressive sequence loss: `-sum log P(x_t | x_<t)` over targets
/// `t = 2..=T`, skipping pad targets.
pub fn sequence_loss<T: Real>(
    ids: &[TokenId],
    params: &ModelParams<T>,
    config: &ModelConfig,
    mode: Mode,
) -> Result<LossValue, ModelError> {
    if ids.len() < 2 {
        return Err(ModelError::TooShort);
    }
    let cache = forward(ids, params, config, mode)?;
    let logits = lm_logits(&cache.hidden, params);
    let mut total = 0.0f64;
    let mut tokens = 0usize;
    for t in 0..ids.len() - 1 {
        let target = ids[t + 1];
        if target == PAD {
            continue;
        }
        let probs = softmax_row(logits.row(t));
        total -= libm::log(probs[target as usize].max(1e-300));
        tokens += 1;
    }
    if !total.is_finite() {
        return Err(ModelError::NonFinite { tensor: "loss".into() });
    }
    Ok(LossValue { total, tokens })
}

/// What drives the backward pass.
pub enum LossHead<'a> {
    /// Next-token cross entropy over the whole sequence.
    Autoregressive,
    /// Classification cross entropy from the hidden state at `position`.
    Classifier { label: usize, position: usize },
    /// Externally supplied gradient on the final hidden states (tests).
    HiddenGrad(&'a Mat<f64>),
}

/// Loss and exact gradients in one pass.
///
/// Returns the loss value and a gradient set with the same shapes as the
/// parameters. Gradient of the loss *sum* (not the mean); callers average.
pub fn backward<T: Real>(
    ids: &[TokenId],
    params: &ModelParams<T>,
    config: &ModelConfig,
    mode: Mode,
    head: LossHead<'_>,
) -> Result<(LossValue, ModelParams<T>), ModelError> {
    let cache = forward(ids, params, config, mode)?;
    let t_len = ids.len();
    let d = config.d_model;
    let mut grads = ModelParams::<T>::zeros_like(params);

    // d_loss / d_hidden, plus the loss itself.
    let mut d_hidden = Mat::<T>::zeros(t_len, d);
    let loss;
    match head {
        LossHead::Autoregressive => {
            if t_len < 2 {
                return Err(ModelError::TooShort);
            }
            let logits = lm_logits(&cache.hidden, params);
            let mut total = 0.0f64;
            let mut tokens = 0usize;
            // dlogits then fold into d_hidden and tok_emb grads.
            let mut d_logits = Mat::<T>::zeros(t_len, config.vocab_size);
            for t in 0..t_len - 1 {
                let target = ids[t + 1];
                if target == PAD {
                    continue;
                }
                let probs = softmax_row(logits.row(t));
                total -= libm::log(probs[target as usize].max(1e-300));
                tokens += 1;
                let drow = d_logits.row_mut(t);
                for (v, &p) in probs.iter().enumerate() {
                    drow[v] = T::from_f64(p);
                }
                drow[target as usize] -= T::ONE;
            }
            loss = LossValue { total, tokens };
            // d_hidden += d_logits * tok_emb ; d_tok_emb += d_logits^T * hidden
            gemm_nn(&mut d_hidden, &d_logits, &params.tok_emb);
            gemm_tn(&mut grads.tok_emb, &d_logits, &cache.hidden);
        }
        LossHead::Classifier { label, position } => {
            let w = params.classifier.as_ref().ok_or(ModelError::NoClassifier)?;
            let gw = grads.classifier.as_mut().unwrap();
            if position >= t_len || label >= w.cols {
                return Err(ModelError::Config);
            }
            let hrow = cache.hidden.row(position);
            let mut logits = vec![T::ZERO; w.cols];
            vecmat(&mut logits, hrow, w, None);
            let probs = softmax_row(&logits);
            let total = -libm::log(probs[label].max(1e-300));
            loss = LossValue { total, tokens: 1 };
            // d_logits = probs - onehot
            let mut d_logits = vec![T::ZERO; w.cols];
            for (k, &p) in probs.iter().enumerate() {
                d_logits[k] = T::from_f64(p);
            }
            d_logits[label] -= T::ONE;
            // dW += h^T outer d_logits ; d_h += W * d_logits
            for r in 0..d {
                let grow = &mut gw.data[r * w.cols..(r + 1) * w.cols];
                for k in 0..w.cols {
                    grow[k] += hrow[r] * d_logits[k];
                }
            }
            let dh = d_hidden.row_mut(position);
            for r in 0..d {
                let wrow = &w.data[r * w.cols..(r + 1) * w.cols];
                let mut acc = T::ZERO;
                for k in 0..w.cols {
                    acc += wrow[k] * d_logits[k];
                }
                dh[r] = acc;
            }
        }
        LossHead::HiddenGrad(g) => {
            for (a, b) in d_hidden.data.iter_mut().zip(g.data.iter()) {
                *a = T::from_f64(*b);
            }
            loss = LossValue { total: 0.0, tokens: 0 };
        }
    }

    // Final layer norm.
    let mut dx = layer_norm_backward(
        &d_hidden,
        &cache.lnf_xhat,
        &cache.lnf_inv_std,
        &params.lnf_g,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
    );
    let _ = &cache.lnf_in;

    let h = config.n_heads;
    let dh_dim = d / h;
    let scale = T::from_f64(1.0 / libm::sqrt(dh_dim as f64));

    for (li, lp) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let gl = &mut grads.layers[li];

        // ---- MLP branch ----
        let mut d_mlp_out = dx.clone();
        if let Some(m) = &lc.mlp_mask {
            apply_mask(&mut d_mlp_out, m);
        }
        // w_proj: fc_act (T*ff) x w_proj (ff*d) = mlp_out
        gemm_tn(&mut gl.w_proj, &lc.fc_act, &d_mlp_out);
        for r in 0..t_len {
            let drow = d_mlp_out.row(r);
            for j in 0..d {
                gl.b_proj[j] += drow[j];
            }
        }
        let mut d_fc_act = Mat::zeros(t_len, config.d_ff);
        gemm_nt(&mut d_fc_act, &d_mlp_out, &lp.w_proj);
        // GELU'
        for (dv, &pre) in d_fc_act.data.iter_mut().zip(lc.fc_pre.data.iter()) {
            *dv *= gelu_grad(pre);
        }
        // w_fc: ln2_out (T*d) x w_fc (d*ff)
        let ln2_out = recompose_ln(&lc.ln2_xhat, &lp.ln2_g, &lp.ln2_b);
        gemm_tn(&mut gl.w_fc, &ln2_out, &d_fc_act);
        for r in 0..t_len {
            let drow = d_fc_act.row(r);
            for j in 0..config.d_ff {
                gl.b_fc[j] += drow[j];
            }
        }
        let mut d_ln2_out = Mat::zeros(t_len, d);
        gemm_nt(&mut d_ln2_out, &d_fc_act, &lp.w_fc);
        let d_x_mid_from_ln2 = layer_norm_backward(
            &d_ln2_out,
            &lc.ln2_xhat,
            &lc.ln2_inv_std,
            &lp.ln2_g,
            &mut gl.ln2_g,
            &mut gl.ln2_b,
        );
        // Residual: d_x_mid = dx (carried) + contribution through LN2.
        let mut d_x_mid = dx;
        d_x_mid.add_assign(&d_x_mid_from_ln2);

        // ---- attention branch ----
        let mut d_attn_out = d_x_mid.clone();
        if let Some(m) = &lc.attn_mask {
            apply_mask(&mut d_attn_out, m);
        }
        gemm_tn(&mut gl.w_o, &lc.z, &d_attn_out);
        for r in 0..t_len {
            let drow = d_attn_out.row(r);
            for j in 0..d {
                gl.b_o[j] += drow[j];
            }
        }
        let mut d_z = Mat::zeros(t_len, d);
        gemm_nt(&mut d_z, &d_attn_out, &lp.w_o);

        // per-head: accumulate into d_qkv
        let mut d_qkv = Mat::zeros(t_len, 3 * d);
        for head in 0..h {
            let q_off = head * dh_dim;
            let k_off = d + head * dh_dim;
            let v_off = 2 * d + head * dh_dim;
            let p_mat = &lc.probs[head];
            let keep_mask = lc.probs_mask.as_ref().map(|ms| &ms[head]);

            // Row-by-row: dP' = dZ_h V^T, dV += P'^T dZ_h, softmax backward
            // to dS, then dQ/dK.
            for i in 0..t_len {
                let dz_row = &d_z.data[i * d + q_off..i * d + q_off + dh_dim];
                let prow = p_mat.row(i);
                let mut dp_row = vec![T::ZERO; i + 1];
                for j in 0..=i {
                    let vrow = &lc.qkv.row(j)[v_off..v_off + dh_dim];
                    let mut dp = T::ZERO;
                    for c in 0..dh_dim {
                        dp += dz_row[c] * vrow[c];
                    }
                    // p' = p (x) mask; dV_j += p' * dZ_i; dP = dP' (x) mask
                    let keep = keep_mask.map(|m| m.get(i, j)).unwrap_or(T::ONE);
                    let pm = prow[j] * keep;
                    let dvrow = &mut d_qkv.data[j * 3 * d + v_off..j * 3 * d + v_off + dh_dim];
                    for c in 0..dh_dim {
                        dvrow[c] += pm * dz_row[c];
                    }
                    dp_row[j] = dp * keep;
                }
                // softmax backward: dS_j = P_j * (dP_j - sum_k dP_k P_k)
                let mut inner = T::ZERO;
                for j in 0..=i {
                    inner += dp_row[j] * prow[j];
                }
                let qrow = &lc.qkv.row(i)[q_off..q_off + dh_dim];
                let mut dq_acc = vec![T::ZERO; dh_dim];
                for j in 0..=i {
                    let ds = prow[j] * (dp_row[j] - inner) * scale;
                    let krow = &lc.qkv.row(j)[k_off..k_off + dh_dim];
                    // dQ_i += dS_ij * K_j ; dK_j += dS_ij * Q_i
                    for c in 0..dh_dim {
                        dq_acc[c] += ds * krow[c];
                    }
                    let dkrow = &mut d_qkv.data[j * 3 * d + k_off..j * 3 * d + k_off + dh_dim];
                    for c in 0..dh_dim {
                        dkrow[c] += ds * qrow[c];
                    }
                }
                let dqrow = &mut d_qkv.data[i * 3 * d + q_off..i * 3 * d + q_off + dh_dim];
                for c in 0..dh_dim {
                    dqrow[c] += dq_acc[c];
                }
            }
        }

        // qkv = ln1_out * w_qkv + b
        let ln1_out = recompose_ln(&lc.ln1_xhat, &lp.ln1_g, &lp.ln1_b);
        gemm_tn(&mut gl.w_qkv, &ln1_out, &d_qkv);
        for r in 0..t_len {
            let drow = d_qkv.row(r);
            for j in 0..3 * d {
                gl.b_qkv[j] += drow[j];
            }
        }
        let mut d_ln1_out = Mat::zeros(t_len, d);
        gemm_nt(&mut d_ln1_out, &d_qkv, &lp.w_qkv);
        let d_x_from_ln1 = layer_norm_backward(
            &d_ln1_out,
            &lc.ln1_xhat,
            &lc.ln1_inv_std,
            &lp.ln1_g,
            &mut gl.ln1_g,
            &mut gl.ln1_b,
        );
        let mut d_x_in = d_x_mid;
        d_x_in.add_assign(&d_x_from_ln1);
        let _ = &lc.x_in;
        let _ = &lc.x_mid;
        dx = d_x_in;
    }

    // Embeddings.
    if let Some(m) = &cache.emb_mask {
        apply_mask(&mut dx, m);
    }
    for (t, &id) in ids.iter().enumerate() {
        let drow = dx.row(t);
        let erow = &mut grads.tok_emb.data[id as usize * d..(id as usize + 1) * d];
        let prow = &mut grads.pos_emb.data[t * d..(t + 1) * d];
        for j in 0..d {
            erow[j] += drow[j];
            prow[j] += drow[j];
        }
    }

    if let Some(tensor) = grads.find_non_finite() {
        return Err(ModelError::NonFinite { tensor });
    }
    Ok((loss, grads))
}

fn recompose_ln<T: Real>(xhat: &Mat<T>, g: &[T], b: &[T]) -> Mat<T> {
    let mut out = Mat::zeros(xhat.rows, xhat.cols);
    for r in 0..xhat.rows {
        let xr = xhat.row(r);
        let or = &mut out.data[r * xhat.cols..(r + 1) * xhat.cols];
        for j in 0..xhat.cols {
            or[j] = g[j] * xr[j] + b[j];
        }
    }
    out
}

impl<T: Real> ModelParams<T> {
    /// Zero tensors with the same shapes as `other` (gradient container).
    pub fn zeros_like(other: &ModelParams<T>) -> Self {
        let mut p = ModelParams {
            tok_emb: Mat::zeros(other.tok_emb.rows, other.tok_emb.cols),
            pos_emb: Mat::zeros(other.pos_emb.rows, other.pos_emb.cols),
            layers: other
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: vec![T::ZERO; l.ln1_g.len()],
                    ln1_b: vec![T::ZERO; l.ln1_b.len()],
                    w_qkv: Mat::zeros(l.w_qkv.rows, l.w_qkv.cols),
                    b_qkv: vec![T::ZERO; l.b_qkv.len()],
                    w_o: Mat::zeros(l.w_o.rows, l.w_o.cols),
                    b_o: vec![T::ZERO; l.b_o.len()],
                    ln2_g: vec![T::ZERO; l.ln2_g.len()],
                    ln2_b: vec![T::ZERO; l.ln2_b.len()],
                    w_fc: Mat::zeros(l.w_fc.rows, l.w_fc.cols),
                    b_fc: vec![T::ZERO; l.b_fc.len()],
                    w_proj: Mat::zeros(l.w_proj.rows, l.w_proj.cols),
                    b_proj: vec![T::ZERO; l.b_proj.len()],
                })
                .collect(),
            lnf_g: vec![T::ZERO; other.lnf_g.len()],
            lnf_b: vec![T::ZERO; other.lnf_b.len()],
            classifier: None,
        };
        if let Some(c) = &other.classifier {
            p.classifier = Some(Mat::zeros(c.rows, c.cols));
        }
        p
    }

    /// Element-wise accumulate (for batch gradient reduction).
    pub fn accumulate(&mut self, other: &ModelParams<T>) {
        fn add<T: Real>(a: &mut [T], b: &[T]) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += *y;
            }
        }
        add(&mut self.tok_emb.data, &other.tok_emb.data);
        add(&mut self.pos_emb.data, &other.pos_emb.data);
        for (l, o) in self.layers.iter_mut().zip(other.layers.iter()) {
            add(&mut l.ln1_g, &o.ln1_g);
            add(&mut l.ln1_b, &o.ln1_b);
            add(&mut l.w_qkv.data, &o.w_qkv.data);
            add(&mut l.b_qkv, &o.b_qkv);
            add(&mut l.w_o.data, &o.w_o.data);
            add(&mut l.b_o, &o.b_o);
            add(&mut l.ln2_g, &o.ln2_g);
            add(&mut l.ln2_b, &o.ln2_b);
            add(&mut l.w_fc.data, &o.w_fc.data);
            add(&mut l.b_fc, &o.b_fc);
            add(&mut l.w_proj.data, &o.w_proj.data);
            add(&mut l.b_proj, &o.b_proj);
        }
        add(&mut self.lnf_g, &other.lnf_g);
        add(&mut self.lnf_b, &other.lnf_b);
        if let (Some(c), Some(o)) = (&mut self.classifier, &other.classifier) {
            add(&mut c.data, &o.data);
        }
    }

    /// Scale every entry (for batch averaging).
    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        self.visit_mut(|_, t, _| {
            for x in t.iter_mut() {
                *x *= f;
            }
        });
    }
}

/// Incremental KV cache for autoregressive sampling.
pub struct KvCache<T> {
    /// Per layer: cached keys and values, rows = positions seen so far.
    k: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
    len: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(config: &ModelConfig) -> Self {
        KvCache {
            k: (0..config.n_layers).map(|_| Mat::zeros(config.context_len, config.d_model)).collect(),
            v: (0..config.n_layers).map(|_| Mat::zeros(config.context_len, config.d_model)).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One-position eval-mode forward using the cache. Returns the final hidden
/// state of the new position.
pub fn forward_incremental<T: Real>(
    id: TokenId,
    params: &ModelParams<T>,
    config: &ModelConfig,
    cache: &mut KvCache<T>,
) -> Result<Vec<T>, ModelError> {
    let pos = cache.len;
    if pos >= config.context_len {
        return Err(ModelError::Length { len: pos + 1, cap: config.context_len });
    }
    if id as usize >= config.vocab_size {
        return Err(ModelError::BadToken { position: pos });
    }
    let d = config.d_model;
    let h = config.n_heads;
    let dh = d / h;
    let scale = T::from_f64(1.0 / libm::sqrt(dh as f64));

    let mut x = vec![T::ZERO; d];
    {
        let e = params.tok_emb.row(id as usize);
        let p = params.pos_emb.row(pos);
        for j in 0..d {
            x[j] = e[j] + p[j];
        }
    }

    for (li, lp) in params.layers.iter().enumerate() {
        let xhat = ln_row(&x, &lp.ln1_g, &lp.ln1_b);
        let mut qkv = lp.b_qkv.clone();
        vecmat(&mut qkv, &xhat, &lp.w_qkv, None);
        // store k, v
        cache.k[li].row_mut(pos).copy_from_slice(&qkv[d..2 * d]);
        cache.v[li].row_mut(pos).copy_from_slice(&qkv[2 * d..3 * d]);
        let mut z = vec![T::ZERO; d];
        for head in 0..h {
            let off = head * dh;
            let q = &qkv[off..off + dh];
            // scores over positions 0..=pos
            let mut scores = vec![T::ZERO; pos + 1];
            let mut maxv = T::from_f64(-1e30);
            for j in 0..=pos {
                let krow = &cache.k[li].row(j)[off..off + dh];
                let s = dot(q, krow) * scale;
                scores[j] = s;
                maxv = maxv.maximum(s);
            }
            let mut denom = T::ZERO;
            for s in scores.iter_mut() {
                *s = (*s - maxv).exp();
                denom += *s;
            }
            for j in 0..=pos {
                let p = scores[j] / denom;
                let vrow = &cache.v[li].row(j)[off..off + dh];
                for c in 0..dh {
                    z[off + c] += p * vrow[c];
                }
            }
        }
        let mut attn_out = lp.b_o.clone();
        vecmat(&mut attn_out, &z, &lp.w_o, None);
        for j in 0..d {
            x[j] += attn_out[j];
        }
        let x2hat = ln_row(&x, &lp.ln2_g, &lp.ln2_b);
        let mut fc = lp.b_fc.clone();
        vecmat(&mut fc, &x2hat, &lp.w_fc, None);
        for v in fc.iter_mut() {
            *v = gelu(*v);
        }
        let mut proj = lp.b_proj.clone();
        vecmat(&mut proj, &fc, &lp.w_proj, None);
        for j in 0..d {
            x[j] += proj[j];
        }
    }
    cache.len += 1;
    Ok(ln_row(&x, &params.lnf_g, &params.lnf_b))
}

fn ln_row<T: Real>(x: &[T], g: &[T], b: &[T]) -> Vec<T> {
    let d = x.len();
    let dn = T::from_f64(d as f64);
    let mut mean = T::ZERO;
    for &v in x {
        mean += v;
    }
    mean /= dn;
    let mut var = T::ZERO;
    for &v in x {
        let c = v - mean;
        var += c * c;
    }
    var /= dn;
    let istd = T::ONE / (var + T::from_f64(LN_EPS)).sqrt();
    let mut out = vec![T::ZERO; d];
    for j in 0..d {
        out[j] = g[j] * ((x[j] - mean) * istd) + b[j];
    }
    out
}

/// Logits for one hidden row under weight tying.
pub fn logits_for_hidden<T: Real>(hidden: &[T], params: &ModelParams<T>) -> Vec<T> {
    let v = params.tok_emb.rows;
    let mut out = vec![T::ZERO; v];
    for i in 0..v {
        out[i] = dot(hidden, params.tok_emb.row(i));
    }
    out
}

/// Classifier scores (softmax) for one hidden row.
pub fn class_scores<T: Real>(hidden: &[T], params: &ModelParams<T>) -> Result<Vec<f64>, ModelError> {
    let w = params.classifier.as_ref().ok_or(ModelError::NoClassifier)?;
    let mut logits = vec![T::ZERO; w.cols];
    vecmat(&mut logits, hidden, w, None);
    Ok(softmax_row(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            context_len: 16,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            dropout_rate: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::zeros(&cfg);
        let dist = next_token_distribution(&[1], &params, &cfg).unwrap();
        for p in &dist {
            assert!((p - 1.0 / 11.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let row = [1.0f64, 2.0, 3.0];
        let shifted = [101.0f64, 102.0, 103.0];
        let a = softmax_row(&row);
        let b = softmax_row(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // ln 1, ln 2, ln 3 -> 1/6, 2/6, 3/6
        let c = softmax_row(&[0.0f64, libm::log(2.0), libm::log(3.0)]);
        assert!((c[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((c[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((c[2] - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_stable_for_huge_logits() {
        let a = softmax_row(&[1e4f64, -1e4, 0.0]);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a[0] > 0.999);
    }

    #[test]
    fn causality_logits_do_not_depend_on_future() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg);
        let ids_a = [1u32, 5, 7, 2, 9];
        let mut ids_b = ids_a;
        ids_b[4] = 3; // mutate the last token
        let ca = forward(&ids_a, &params, &cfg, Mode::Eval).unwrap();
        let cb = forward(&ids_b, &params, &cfg, Mode::Eval).unwrap();
        let la = lm_logits(&ca.hidden, &params);
        let lb = lm_logits(&cb.hidden, &params);
        for t in 0..4 {
            assert_eq!(la.row(t), lb.row(t), "position {} changed", t);
        }
    }

    #[test]
    fn uniform_loss_for_zero_params() {
        // zero params, vocab 2 -> every prediction uniform: loss = (T-1) ln 2
        let cfg = ModelConfig { vocab_size: 2, ..tiny_config() };
        let params = ModelParams::<f64>::zeros(&cfg);
        let ids = [1u32, 0, 1, 0, 1];
        // pad target positions are skipped; here targets 0 are PAD!
        // use vocab 3 with non-pad ids instead
        let cfg3 = ModelConfig { vocab_size: 3, ..tiny_config() };
        let p3 = ModelParams::<f64>::zeros(&cfg3);
        let ids3 = [1u32, 2, 1, 2, 1];
        let l = sequence_loss(&ids3, &p3, &cfg3, Mode::Eval).unwrap();
        assert!((l.total - 4.0 * libm::log(3.0)).abs() < 1e-9);
        // and the vocab-2 case, counting only non-pad targets
        let l2 = sequence_loss(&ids, &params, &cfg, Mode::Eval).unwrap();
        assert_eq!(l2.tokens, 2);
        assert!((l2.total - 2.0 * libm::log(2.0)).abs() < 1e-9);
    }

    #[test]
    fn loss_composes_from_next_token_distribution() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg);
        let ids = [1u32, 4, 9];
        let l = sequence_loss(&ids, &params, &cfg, Mode::Eval).unwrap();
        let mut expect = 0.0;
        for t in 1..ids.len() {
            let dist = next_token_distribution(&ids[..t], &params, &cfg).unwrap();
            expect -= libm::log(dist[ids[t] as usize]);
        }
        assert!((l.total - expect).abs() < 1e-10);
    }

    #[test]
    fn hand_computed_two_token_forward() {
        // 1 layer, d_model = 2, 1 head, d_ff = 2, identity-ish weights kept
        // tiny so the expected numbers are computable by hand (all matmuls
        // against zero weights vanish; residual stream = embeddings; final
        // hidden = lnf of embeddings).
        let cfg = ModelConfig {
            vocab_size: 4,
            context_len: 4,
            d_model: 2,
            n_layers: 1,
            n_heads: 1,
            d_ff: 2,
            dropout_rate: 0.0,
            seed: 0,
        };
        let mut params = ModelParams::<f64>::zeros(&cfg);
        params.lnf_g = vec![1.0, 1.0];
        params.tok_emb.set(2, 0, 3.0);
        params.tok_emb.set(2, 1, 1.0);
        params.pos_emb.set(0, 0, 1.0); // x0 = [4, 1]
        let cache = forward(&[2], &params, &cfg, Mode::Eval).unwrap();
        // x = [4,1]: mean 2.5, var = ((1.5)^2 + (1.5)^2)/2 = 2.25
        // xhat = [1.5, -1.5] / sqrt(2.25 + 1e-5)
        let istd = 1.0 / (2.25f64 + 1e-5).sqrt();
        let expect = [1.5 * istd, -1.5 * istd];
        let got = cache.hidden.row(0);
        assert!((got[0] - expect[0]).abs() < 1e-12);
        assert!((got[1] - expect[1]).abs() < 1e-12);
        // logits = hidden . emb rows; row2 = [3,1] -> 3*h0 + h1
        let logits = lm_logits(&cache.hidden, &params);
        assert!((logits.get(0, 2) - (3.0 * expect[0] + expect[1])).abs() < 1e-12);
    }

    #[test]
    fn length_and_token_errors() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::zeros(&cfg);
        let too_long = vec![1u32; cfg.context_len + 1];
        assert!(matches!(
            forward(&too_long, &params, &cfg, Mode::Eval),
            Err(ModelError::Length { .. })
        ));
        assert!(matches!(
            forward(&[99u32], &params, &cfg, Mode::Eval),
            Err(ModelError::BadToken { position: 0 })
        ));
    }

    #[test]
    fn train_mode_is_deterministic_given_step() {
        let cfg = ModelConfig { dropout_rate: 0.3, ..tiny_config() };
        let params = ModelParams::<f64>::init(&cfg);
        let ids = [1u32, 2, 3, 4];
        let a = sequence_loss(&ids, &params, &cfg, Mode::Train { step: 7 }).unwrap();
        let b = sequence_loss(&ids, &params, &cfg, Mode::Train { step: 7 }).unwrap();
        let c = sequence_loss(&ids, &params, &cfg, Mode::Train { step: 8 }).unwrap();
        assert_eq!(a.total, b.total);
        assert_ne!(a.total, c.total);
    }

    #[test]
    fn incremental_forward_matches_full_forward() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg);
        let ids = [1u32, 5, 7, 2, 9, 3];
        let full = forward(&ids, &params, &cfg, Mode::Eval).unwrap();
        let mut cache = KvCache::new(&cfg);
        for (t, &id) in ids.iter().enumerate() {
            let hid = forward_incremental(id, &params, &cfg, &mut cache).unwrap();
            let frow = full.hidden.row(t);
            for j in 0..cfg.d_model {
                assert!(
                    (hid[j] - frow[j]).abs() < 1e-10,
                    "position {} dim {}: {} vs {}",
                    t,
                    j,
                    hid[j],
                    frow[j]
                );
            }
        }
    }

    #[test]
    fn doubling_hidden_grad_doubles_param_grads() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg);
        let ids = [1u32, 5, 7];
        let mut g1 = Mat::zeros(3, cfg.d_model);
        for (i, x) in g1.data.iter_mut().enumerate() {
            *x = 0.01 * (i as f64 + 1.0);
        }
        let mut g2 = g1.clone();
        for x in g2.data.iter_mut() {
            *x *= 2.0;
        }
        let (_, ga) = backward(&ids, &params, &cfg, Mode::Eval, LossHead::HiddenGrad(&g1)).unwrap();
        let (_, gb) = backward(&ids, &params, &cfg, Mode::Eval, LossHead::HiddenGrad(&g2)).unwrap();
        let mut flat_a = Vec::new();
        ga.visit(|_, t, _| flat_a.extend(t.iter().copied()));
        let mut flat_b = Vec::new();
        gb.visit(|_, t, _| flat_b.extend(t.iter().copied()));
        for (a, b) in flat_a.iter().zip(flat_b.iter()) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pad_targets_contribute_zero_gradient() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg);
        // all targets are pad -> zero loss, zero grads
        let ids = [1u32, PAD, PAD, PAD];
        let (loss, grads) = backward(&ids, &params, &cfg, Mode::Eval, LossHead::Autoregressive).unwrap();
        assert_eq!(loss.tokens, 0);
        assert_eq!(loss.total, 0.0);
        let mut all_zero = true;
        grads.visit(|_, t, _| {
            if t.iter().any(|&x| x != 0.0) {
                all_zero = false;
            }
        });
        assert!(all_zero);
    }
}
