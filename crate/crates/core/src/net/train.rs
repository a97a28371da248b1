//! SGD training steps with a one-cycle learning-rate schedule.

use rand::seq::SliceRandom;

use super::loss::{loss_and_grad, Sample};
use super::NetParams;
use crate::rng::{rng_for, stream};

/// One-cycle learning rate: linear warmup from `peak/25` to `peak` over the
/// first 45% of steps, then cosine decay to `peak/100`.
pub fn one_cycle_lr(step: usize, total_steps: usize, peak: f64) -> f64 {
    let start = peak / 25.0;
    let end = peak / 100.0;
    if total_steps <= 1 {
        return start;
    }
    let pct = step as f64 / (total_steps - 1) as f64;
    if pct <= 0.45 {
        start + (peak - start) * (pct / 0.45)
    } else {
        let t = (pct - 0.45) / 0.55;
        end + (peak - end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Runs `config.epochs` shuffled passes over `samples` with mini-batch SGD
/// and the one-cycle schedule. Returns the per-step losses.
pub fn train_epochs(params: &mut NetParams, samples: &[Sample], seed: u64) -> Vec<f64> {
    assert!(!samples.is_empty(), "training requires at least one sample");
    let cfg = params.config.clone();
    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;

    let mut losses = Vec::with_capacity(total_steps);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_for(seed, stream::SHUFFLE, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let (loss, mut grads) = loss_and_grad(params, &batch);
            if cfg.grad_clip_norm > 0.0 {
                let norm = grads.squared_norm().sqrt();
                if norm > cfg.grad_clip_norm {
                    grads.scale(cfg.grad_clip_norm / norm);
                }
            }
            let lr = one_cycle_lr(step, total_steps, cfg.peak_lr);
            params.axpy(&grads, -lr);
            losses.push(loss);
            step += 1;
        }
    }
    losses
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::rng::{rng_for, stream};
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use rand::Rng;

    #[test]
    fn one_cycle_endpoints() {
        let peak = 1e-2;
        // 21 steps puts step 9 exactly at the 45% mark.
        let total = 21;
        assert_relative_eq!(one_cycle_lr(0, total, peak), peak / 25.0, epsilon = 1e-15);
        assert_relative_eq!(one_cycle_lr(9, total, peak), peak, epsilon = 1e-12);
        assert_relative_eq!(one_cycle_lr(20, total, peak), peak / 100.0, epsilon = 1e-12);
        // Monotone warmup, then decay.
        for s in 1..=9 {
            assert!(one_cycle_lr(s, total, peak) >= one_cycle_lr(s - 1, total, peak));
        }
        for s in 10..21 {
            assert!(one_cycle_lr(s, total, peak) <= one_cycle_lr(s - 1, total, peak));
        }
    }

    #[test]
    fn training_reduces_loss_on_synthetic_buffer() {
        let cfg = NetConfig {
            channels: 4,
            encoder_blocks: 2,
            pool_every: 2,
            value_channels: 4,
            history_frames: 0,
            batch_size: 25,
            peak_lr: 5e-2,
            ..NetConfig::default()
        };
        let g = 6;
        let actions = 2 * g * g;

        let mut improved = 0;
        for seed in 0..10u64 {
            let mut rng = rng_for(seed, stream::SHUFFLE, 77);
            // Fixed 200-record synthetic buffer with a learnable signal: the
            // target policy prefers a quadrant keyed to the budget plane.
            let mut features = Vec::new();
            let mut masks = Vec::new();
            let mut policies = Vec::new();
            let mut values = Vec::new();
            for _ in 0..200 {
                let budget: f64 = rng.random_range(0.0..1.0);
                let mut f = Array3::from_elem((cfg.input_planes(2), g, g), 0.3);
                f.index_axis_mut(ndarray::Axis(0), 1).fill(budget);
                features.push(f);
                masks.push(vec![true; actions]);
                let hot = if budget > 0.5 { 0 } else { actions - 1 };
                let mut pi = vec![0.2 / (actions - 1) as f64; actions];
                pi[hot] = 0.8 + 0.2 / (actions - 1) as f64 - 0.2 / (actions - 1) as f64;
                let sum: f64 = pi.iter().sum();
                pi.iter_mut().for_each(|v| *v /= sum);
                policies.push(pi);
                values.push(2.0 * budget);
            }
            let samples = crate::net::loss::tests::make_samples(
                &features, &masks, &policies, &values,
            );
            let mut params = crate::net::NetParams::init(&cfg, 2, seed);
            let losses = train_epochs(&mut params, &samples, seed);
            let per_epoch = losses.len() / cfg.epochs;
            let first: f64 =
                losses[..per_epoch].iter().sum::<f64>() / per_epoch as f64;
            let last: f64 = losses[losses.len() - per_epoch..].iter().sum::<f64>()
                / per_epoch as f64;
            if last < first {
                improved += 1;
            }
        }
        assert!(improved >= 9, "loss improved in only {improved}/10 seeds");
    }
}
