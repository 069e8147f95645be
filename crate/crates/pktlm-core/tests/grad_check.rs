//! Gradient verification: analytic gradients against central finite
//! differences in 64-bit mode.

use pktlm_core::model::{
    backward, sequence_loss, LossHead, Mode, ModelConfig, ModelParams,
};
use pktlm_core::rng::Rng;

fn probe_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        context_len: 12,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        dropout_rate: 0.0,
        seed: 17,
    }
}

/// Flatten parameters into (name, index-within-tensor) addressable storage.
fn flatten(params: &ModelParams<f64>) -> Vec<(String, usize, f64)> {
    let mut out = Vec::new();
    params.visit(|name, t, _| {
        for (i, &v) in t.iter().enumerate() {
            out.push((name.to_string(), i, v));
        }
    });
    out
}

fn set_param(params: &mut ModelParams<f64>, name: &str, idx: usize, value: f64) {
    let mut done = false;
    params.visit_mut(|n, t, _| {
        if n == name && !done {
            t[idx] = value;
            done = true;
        }
    });
    assert!(done, "parameter {} not found", name);
}

fn get_grad(grads: &ModelParams<f64>, name: &str, idx: usize) -> f64 {
    let mut out = None;
    grads.visit(|n, t, _| {
        if n == name {
            out = Some(t[idx]);
        }
    });
    out.expect("gradient tensor present")
}

#[test]
fn analytic_gradients_match_central_differences() {
    let cfg = probe_config();
    let params = ModelParams::<f64>::init(&cfg);
    let ids = [1u32, 4, 7, 2, 9, 3, 5];

    let (_, grads) = backward(&ids, &params, &cfg, Mode::Eval, LossHead::Autoregressive).unwrap();

    let flat = flatten(&params);
    let mut rng = Rng::seed_from(99);
    let eps = 1e-4;
    let mut max_rel = 0.0f64;
    for probe in 0..20 {
        let pick = rng.below(flat.len() as u64) as usize;
        let (name, idx, base) = flat[pick].clone();

        let mut plus = params.clone();
        set_param(&mut plus, &name, idx, base + eps);
        let lp = sequence_loss(&ids, &plus, &cfg, Mode::Eval).unwrap().total;

        let mut minus = params.clone();
        set_param(&mut minus, &name, idx, base - eps);
        let lm = sequence_loss(&ids, &minus, &cfg, Mode::Eval).unwrap().total;

        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = get_grad(&grads, &name, idx);
        let rel = (analytic - numeric).abs() / (analytic.abs() + 1e-8);
        max_rel = max_rel.max(rel);
        assert!(
            rel < 1e-4,
            "probe {} on {}[{}]: analytic {} vs numeric {} (rel {})",
            probe,
            name,
            idx,
            analytic,
            numeric,
            rel
        );
    }
    println!("max relative gradient error over 20 probes: {:.3e}", max_rel);
}

#[test]
fn classifier_gradients_match_central_differences() {
    let cfg = probe_config();
    let params = ModelParams::<f64>::init(&cfg).with_classifier(&cfg, 3);
    let ids = [1u32, 4, 7, 2, 9];
    let head = LossHead::Classifier { label: 2, position: ids.len() - 1 };

    let (_, grads) = backward(&ids, &params, &cfg, Mode::Eval, head).unwrap();

    let loss_of = |p: &ModelParams<f64>| {
        let (l, _) = backward(
            &ids,
            p,
            &cfg,
            Mode::Eval,
            LossHead::Classifier { label: 2, position: ids.len() - 1 },
        )
        .unwrap();
        l.total
    };

    let flat = flatten(&params);
    let mut rng = Rng::seed_from(123);
    let eps = 1e-4;
    for _ in 0..20 {
        let pick = rng.below(flat.len() as u64) as usize;
        let (name, idx, base) = flat[pick].clone();
        let mut plus = params.clone();
        set_param(&mut plus, &name, idx, base + eps);
        let mut minus = params.clone();
        set_param(&mut minus, &name, idx, base - eps);
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
        let analytic = get_grad(&grads, &name, idx);
        let rel = (analytic - numeric).abs() / (analytic.abs() + 1e-8);
        assert!(rel < 1e-4, "{}[{}]: {} vs {} (rel {})", name, idx, analytic, numeric, rel);
    }
}

#[test]
fn dropout_gradients_match_when_mask_is_fixed() {
    // Same step seed => same masks; finite differences stay valid.
    let cfg = ModelConfig { dropout_rate: 0.2, ..probe_config() };
    let params = ModelParams::<f64>::init(&cfg);
    let ids = [1u32, 4, 7, 2];
    let mode = Mode::Train { step: 5 };
    let (_, grads) = backward(&ids, &params, &cfg, mode, LossHead::Autoregressive).unwrap();

    let flat = flatten(&params);
    let mut rng = Rng::seed_from(7);
    let eps = 1e-4;
    for _ in 0..10 {
        let pick = rng.below(flat.len() as u64) as usize;
        let (name, idx, base) = flat[pick].clone();
        let mut plus = params.clone();
        set_param(&mut plus, &name, idx, base + eps);
        let mut minus = params.clone();
        set_param(&mut minus, &name, idx, base - eps);
        let lp = sequence_loss(&ids, &plus, &cfg, mode).unwrap().total;
        let lm = sequence_loss(&ids, &minus, &cfg, mode).unwrap().total;
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = get_grad(&grads, &name, idx);
        let rel = (analytic - numeric).abs() / (analytic.abs() + 1e-8);
        assert!(rel < 1e-4, "{}[{}]: {} vs {} (rel {})", name, idx, analytic, numeric, rel);
    }
}
