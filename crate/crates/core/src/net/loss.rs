//! Training loss and its analytic gradient: squared value error plus policy
//! cross-entropy plus L2 regularization.

use ndarray::Array3;
use rayon::prelude::*;

use super::layers::masked_softmax;
use super::NetParams;

/// Log arguments are clamped here so degenerate probabilities cannot produce
/// infinite losses.
pub const LOG_FLOOR: f64 = 1e-12;

/// Gradients are accumulated over fixed-size sample chunks merged in order,
/// so results do not depend on the worker count.
const GRAD_CHUNK: usize = 8;

/// One replay sample viewed by the trainer.
#[derive(Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a Array3<f64>,
    pub mask: &'a [bool],
    pub policy: &'a [f64],
    pub value: f64,
}

/// Per-sample loss terms: squared value error and policy cross-entropy.
pub fn loss_terms(p: &[f64], v: f64, target_pi: &[f64], target_v: f64) -> (f64, f64) {
    let value_term = (target_v - v) * (target_v - v);
    let ce: f64 = target_pi
        .iter()
        .zip(p)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, pr)| -pi * pr.max(LOG_FLOOR).ln())
        .sum();
    (value_term, ce)
}

/// Mean batch loss: `alpha * mean((V - v)^2) - beta * mean(pi^T log p)
/// + lambda * ||theta||^2`.
pub fn loss_only(params: &NetParams, samples: &[Sample]) -> f64 {
    assert!(!samples.is_empty());
    let cfg = &params.config;
    let mut value_acc = 0.0;
    let mut ce_acc = 0.0;
    for s in samples {
        let (p, v) = params.forward(s.features, s.mask);
        let (vt, ce) = loss_terms(&p, v, s.policy, s.value);
        value_acc += vt;
        ce_acc += ce;
    }
    let n = samples.len() as f64;
    cfg.loss_alpha * value_acc / n + cfg.loss_beta * ce_acc / n
        + cfg.weight_decay * params.squared_norm()
}

/// Batch loss together with the analytic parameter gradient.
pub fn loss_and_grad(params: &NetParams, samples: &[Sample]) -> (f64, NetParams) {
    assert!(!samples.is_empty());
    let cfg = params.config.clone();
    let n = samples.len() as f64;

    let partials: Vec<(f64, f64, NetParams)> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = params.zeros_like();
            let mut value_acc = 0.0;
            let mut ce_acc = 0.0;
            for s in chunk {
                let (logits, v, trace) = params.forward_trace(s.features);
                let p = masked_softmax(&logits, s.mask);
                let (vt, ce) = loss_terms(&p, v, s.policy, s.value);
                value_acc += vt;
                ce_acc += ce;

                let pi_sum: f64 = s
                    .policy
                    .iter()
                    .zip(s.mask)
                    .filter(|(_, m)| **m)
                    .map(|(pi, _)| pi)
                    .sum();
                let grad_logits: Vec<f64> = (0..logits.len())
                    .map(|a| {
                        if s.mask[a] {
                            cfg.loss_beta / n * (p[a] * pi_sum - s.policy[a])
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let grad_value = 2.0 * cfg.loss_alpha / n * (v - s.value);
                params.backward(&trace, &grad_logits, grad_value, &mut grads);
            }
            (value_acc, ce_acc, grads)
        })
        .collect();

    let mut grads = params.zeros_like();
    let mut value_acc = 0.0;
    let mut ce_acc = 0.0;
    for (vt, ce, partial) in partials {
        value_acc += vt;
        ce_acc += ce;
        grads.axpy(&partial, 1.0);
    }
    // L2 term and its gradient.
    grads.axpy(params, 2.0 * cfg.weight_decay);
    let loss = cfg.loss_alpha * value_acc / n + cfg.loss_beta * ce_acc / n
        + cfg.weight_decay * params.squared_norm();
    (loss, grads)
}
