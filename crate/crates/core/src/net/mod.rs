//! Policy-value function approximator: a small convolutional encoder of
//! 1D-factorized residual blocks with global-pooling bias layers, a per-cell
//! policy head, and a pooled scalar value head. Forward and backward passes
//! are implemented directly so training has no external runtime dependency.

pub mod checkpoint;
pub mod features;
pub mod layers;
pub mod loss;
pub mod train;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{rng_for, stream};
use layers::{
    global_avg_max_pool, global_avg_max_pool_backward, masked_softmax, sigmoid, silu_backward,
    silu_forward, softplus, Conv2d, GlobalPoolBias, Linear, PoolBiasCache,
};

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Encoder channel width.
    pub channels: usize,
    /// Number of residual encoder blocks.
    pub encoder_blocks: usize,
    /// A global-pooling bias layer closes every `pool_every`-th encoder block.
    pub pool_every: usize,
    /// Channel width of the final value-head projection.
    pub value_channels: usize,
    /// Enables global-pooling bias layers (encoder and head entries).
    pub global_pooling: bool,
    /// Input-plane history depth.
    pub history_frames: usize,
    /// One-cycle peak learning rate.
    pub peak_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Value-loss coefficient.
    pub loss_alpha: f64,
    /// Policy-loss coefficient.
    pub loss_beta: f64,
    /// L2 regularization coefficient.
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip_norm: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            encoder_blocks: 10,
            pool_every: 3,
            value_channels: 16,
            global_pooling: true,
            history_frames: 2,
            peak_lr: 1e-2,
            batch_size: 96,
            epochs: 3,
            loss_alpha: 1.0,
            loss_beta: 1.0,
            weight_decay: 1e-4,
            grad_clip_norm: 5.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("net.channels", self.channels),
            ("net.encoder_blocks", self.encoder_blocks),
            ("net.pool_every", self.pool_every),
            ("net.value_channels", self.value_channels),
            ("net.batch_size", self.batch_size),
            ("net.epochs", self.epochs),
        ] {
            if value == 0 {
                return Err(CoreError::config(field, "must be >= 1"));
            }
        }
        if !(self.peak_lr > 0.0) {
            return Err(CoreError::config("net.peak_lr", "must be > 0"));
        }
        for (field, value) in [
            ("net.loss_alpha", self.loss_alpha),
            ("net.loss_beta", self.loss_beta),
            ("net.weight_decay", self.weight_decay),
            ("net.grad_clip_norm", self.grad_clip_norm),
        ] {
            if value < 0.0 {
                return Err(CoreError::config(field, "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn input_planes(&self, n_altitudes: usize) -> usize {
        features::FeatureLayout {
            n_altitudes,
            history_frames: self.history_frames,
        }
        .plane_count()
    }
}

struct ResBlock {
    conv_a: Conv2d, // 3x1
    conv_b: Conv2d, // 1x3
    pool: Option<GlobalPoolBias>,
}

/// Network parameters. One instance also serves as the gradient accumulator
/// for another instance of the same architecture.
pub struct NetParams {
    pub config: NetConfig,
    pub n_altitudes: usize,
    input_conv: Conv2d,
    blocks: Vec<ResBlock>,
    policy_conv1: Conv2d,
    policy_pool: Option<GlobalPoolBias>,
    policy_conv2: Conv2d,
    policy_proj: Conv2d,
    value_conv1: Conv2d,
    value_pool: Option<GlobalPoolBias>,
    value_conv2: Conv2d,
    value_conv3: Conv2d,
    value_fc: Linear,
}

/// Intermediate activations retained for the backward pass.
pub struct Trace {
    input: Array3<f64>,
    input_pre: Array3<f64>,
    enc_in: Vec<Array3<f64>>, // block inputs; enc_in[0] = silu(input_pre)
    blk_t1: Vec<Array3<f64>>,
    blk_t2: Vec<Array3<f64>>,
    blk_pool: Vec<Option<PoolBiasCache>>,
    blk_sum: Vec<Array3<f64>>,
    p1_cache: Option<PoolBiasCache>,
    p1_biased: Array3<f64>,
    p1_act: Array3<f64>,
    p2_pre: Array3<f64>,
    p2_act: Array3<f64>,
    v1_cache: Option<PoolBiasCache>,
    v1_biased: Array3<f64>,
    v1_act: Array3<f64>,
    v2_pre: Array3<f64>,
    v2_act: Array3<f64>,
    v3_pre: Array3<f64>,
    v3_act: Array3<f64>,
    pooled: Vec<f64>,
    pool_argmax: Vec<usize>,
    value_pre: f64, // pre-softplus
}

impl NetParams {
    /// Fresh parameters with He-style scaled-uniform init; the output
    /// projections start 10x smaller so initial policies are near uniform
    /// and initial values near softplus(0).
    pub fn init(config: &NetConfig, n_altitudes: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, stream::NET_INIT, 0);
        let c = config.channels;
        let in_planes = config.input_planes(n_altitudes);

        let blocks = (0..config.encoder_blocks)
            .map(|i| ResBlock {
                conv_a: Conv2d::init(&mut rng, c, c, 3, 1, 1.0),
                conv_b: Conv2d::init(&mut rng, c, c, 1, 3, 1.0),
                pool: (config.global_pooling && (i + 1) % config.pool_every == 0)
                    .then(|| GlobalPoolBias::init(&mut rng, c)),
            })
            .collect();

        Self {
            input_conv: Conv2d::init(&mut rng, c, in_planes, 3, 3, 1.0),
            blocks,
            policy_conv1: Conv2d::init(&mut rng, c, c, 3, 3, 1.0),
            policy_pool: config.global_pooling.then(|| GlobalPoolBias::init(&mut rng, c)),
            policy_conv2: Conv2d::init(&mut rng, c, c, 3, 3, 1.0),
            policy_proj: Conv2d::init(&mut rng, n_altitudes, c, 1, 1, 0.02),
            value_conv1: Conv2d::init(&mut rng, c, c, 3, 3, 1.0),
            value_pool: config.global_pooling.then(|| GlobalPoolBias::init(&mut rng, c)),
            value_conv2: Conv2d::init(&mut rng, c, c, 3, 3, 1.0),
            value_conv3: Conv2d::init(&mut rng, config.value_channels, c, 1, 1, 1.0),
            value_fc: Linear::init(&mut rng, 1, 2 * config.value_channels, 0.1),
            config: config.clone(),
            n_altitudes,
        }
    }

    /// Zero parameters of the same architecture (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let c = self.config.channels;
        Self {
            config: self.config.clone(),
            n_altitudes: self.n_altitudes,
            input_conv: Conv2d::zeros(c, self.config.input_planes(self.n_altitudes), 3, 3),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResBlock {
                    conv_a: Conv2d::zeros(c, c, 3, 1),
                    conv_b: Conv2d::zeros(c, c, 1, 3),
                    pool: b.pool.as_ref().map(|_| GlobalPoolBias::zeros(c)),
                })
                .collect(),
            policy_conv1: Conv2d::zeros(c, c, 3, 3),
            policy_pool: self.policy_pool.as_ref().map(|_| GlobalPoolBias::zeros(c)),
            policy_conv2: Conv2d::zeros(c, c, 3, 3),
            policy_proj: Conv2d::zeros(self.n_altitudes, c, 1, 1),
            value_conv1: Conv2d::zeros(c, c, 3, 3),
            value_pool: self.value_pool.as_ref().map(|_| GlobalPoolBias::zeros(c)),
            value_conv2: Conv2d::zeros(c, c, 3, 3),
            value_conv3: Conv2d::zeros(self.config.value_channels, c, 1, 1),
            value_fc: Linear::zeros(1, 2 * self.config.value_channels),
        }
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        macro_rules! push_conv {
            ($c:expr) => {
                out.push($c.weight.as_slice().unwrap());
                out.push($c.bias.as_slice().unwrap());
            };
        }
        macro_rules! push_pool {
            ($p:expr) => {
                if let Some(p) = $p.as_ref() {
                    out.push(p.weight.as_slice().unwrap());
                    out.push(p.bias.as_slice().unwrap());
                }
            };
        }
        push_conv!(self.input_conv);
        for b in &self.blocks {
            push_conv!(b.conv_a);
            push_conv!(b.conv_b);
            push_pool!(b.pool);
        }
        push_conv!(self.policy_conv1);
        push_pool!(self.policy_pool);
        push_conv!(self.policy_conv2);
        push_conv!(self.policy_proj);
        push_conv!(self.value_conv1);
        push_pool!(self.value_pool);
        push_conv!(self.value_conv2);
        push_conv!(self.value_conv3);
        out.push(self.value_fc.weight.as_slice().unwrap());
        out.push(self.value_fc.bias.as_slice().unwrap());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        macro_rules! push_conv {
            ($c:expr) => {
                out.push($c.weight.as_slice_mut().unwrap());
                out.push($c.bias.as_slice_mut().unwrap());
            };
        }
        macro_rules! push_pool {
            ($p:expr) => {
                if let Some(p) = $p.as_mut() {
                    out.push(p.weight.as_slice_mut().unwrap());
                    out.push(p.bias.as_slice_mut().unwrap());
                }
            };
        }
        push_conv!(self.input_conv);
        for b in &mut self.blocks {
            push_conv!(b.conv_a);
            push_conv!(b.conv_b);
            push_pool!(b.pool);
        }
        push_conv!(self.policy_conv1);
        push_pool!(self.policy_pool);
        push_conv!(self.policy_conv2);
        push_conv!(self.policy_proj);
        push_conv!(self.value_conv1);
        push_pool!(self.value_pool);
        push_conv!(self.value_conv2);
        push_conv!(self.value_conv3);
        out.push(self.value_fc.weight.as_slice_mut().unwrap());
        out.push(self.value_fc.bias.as_slice_mut().unwrap());
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Canonical flattening of all parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CoreError::Checkpoint(format!(
                "parameter blob has {} values, architecture expects {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// `self *= a` over all parameters.
    pub fn scale(&mut self, a: f64) {
        for s in self.param_slices_mut() {
            for v in s.iter_mut() {
                *v *= a;
            }
        }
    }

    /// `self += a * other` over all parameters.
    pub fn axpy(&mut self, other: &NetParams, a: f64) {
        let other_slices = other.param_slices();
        for (dst, src) in self.param_slices_mut().into_iter().zip(other_slices) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn clone_params(&self) -> Self {
        let mut out = self.zeros_like();
        out.load_flat(&self.flatten()).expect("same architecture");
        out
    }

    /// Policy over the full action space (masked softmax) and non-negative
    /// value for one feature stack.
    pub fn forward(&self, features: &Array3<f64>, mask: &[bool]) -> (Vec<f64>, f64) {
        let (logits, value, _) = self.forward_trace(features);
        (masked_softmax(&logits, mask), value)
    }

    /// Raw action logits and value.
    pub fn logits_value(&self, features: &Array3<f64>) -> (Vec<f64>, f64) {
        let (logits, value, _) = self.forward_trace(features);
        (logits, value)
    }

    /// Forward pass retaining every intermediate needed by [`Self::backward`].
    pub fn forward_trace(&self, features: &Array3<f64>) -> (Vec<f64>, f64, Trace) {
        debug_assert_eq!(
            features.shape()[0],
            self.config.input_planes(self.n_altitudes)
        );
        let input_pre = self.input_conv.forward(features);
        let mut enc_in = vec![silu_forward(&input_pre)];
        let mut blk_t1 = Vec::with_capacity(self.blocks.len());
        let mut blk_t2 = Vec::with_capacity(self.blocks.len());
        let mut blk_pool = Vec::with_capacity(self.blocks.len());
        let mut blk_sum = Vec::with_capacity(self.blocks.len());

        for block in &self.blocks {
            let x = enc_in.last().unwrap();
            let t1 = block.conv_a.forward(x);
            let t2 = silu_forward(&t1);
            let t3 = block.conv_b.forward(&t2);
            let (t4, cache) = match &block.pool {
                Some(pool) => {
                    let (y, c) = pool.forward(&t3);
                    (y, Some(c))
                }
                None => (t3, None),
            };
            let sum = x + &t4;
            enc_in.push(silu_forward(&sum));
            blk_t1.push(t1);
            blk_t2.push(t2);
            blk_pool.push(cache);
            blk_sum.push(sum);
        }
        let enc_out = enc_in.last().unwrap().clone();

        // Policy head: conv -> pooling bias -> SiLU, conv -> SiLU, 1x1
        // projection to one logit plane per altitude.
        let p1_pre = self.policy_conv1.forward(&enc_out);
        let (p1_biased, p1_cache) = match &self.policy_pool {
            Some(pool) => {
                let (y, c) = pool.forward(&p1_pre);
                (y, Some(c))
            }
            None => (p1_pre, None),
        };
        let p1_act = silu_forward(&p1_biased);
        let p2_pre = self.policy_conv2.forward(&p1_act);
        let p2_act = silu_forward(&p2_pre);
        let logit_planes = self.policy_proj.forward(&p2_act);
        let logits: Vec<f64> = logit_planes.iter().copied().collect();

        // Value head: two conv blocks, a 1x1 projection, global average+max
        // pooling, and a dense layer into softplus.
        let v1_pre = self.value_conv1.forward(&enc_out);
        let (v1_biased, v1_cache) = match &self.value_pool {
            Some(pool) => {
                let (y, c) = pool.forward(&v1_pre);
                (y, Some(c))
            }
            None => (v1_pre, None),
        };
        let v1_act = silu_forward(&v1_biased);
        let v2_pre = self.value_conv2.forward(&v1_act);
        let v2_act = silu_forward(&v2_pre);
        let v3_pre = self.value_conv3.forward(&v2_act);
        let v3_act = silu_forward(&v3_pre);
        let (pooled, pool_argmax) = global_avg_max_pool(&v3_act);
        let fc_out = self.value_fc.forward(&pooled);
        let value_pre = fc_out[0];
        let value = softplus(value_pre);

        let trace = Trace {
            input: features.clone(),
            input_pre,
            enc_in,
            blk_t1,
            blk_t2,
            blk_pool,
            blk_sum,
            p1_cache,
            p1_biased,
            p1_act,
            p2_pre,
            p2_act,
            v1_cache,
            v1_biased,
            v1_act,
            v2_pre,
            v2_act,
            v3_pre,
            v3_act,
            pooled,
            pool_argmax,
            value_pre,
        };
        (logits, value, trace)
    }

    /// Accumulates parameter gradients for one sample given the logit
    /// gradient and the post-softplus value gradient.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_logits: &[f64],
        grad_value: f64,
        grads: &mut NetParams,
    ) {
        let g = trace.p2_act.shape()[1];
        let grad_logit_planes =
            Array3::from_shape_vec((self.n_altitudes, g, g), grad_logits.to_vec())
                .expect("logit gradient matches the action lattice");

        // Policy head backward.
        let d_p2_act = self
            .policy_proj
            .backward(&trace.p2_act, &grad_logit_planes, &mut grads.policy_proj);
        let d_p2_pre = silu_backward(&trace.p2_pre, &d_p2_act);
        let d_p1_act = self
            .policy_conv2
            .backward(&trace.p1_act, &d_p2_pre, &mut grads.policy_conv2);
        let d_p1_biased = silu_backward(&trace.p1_biased, &d_p1_act);
        let d_p1_pre = match (&self.policy_pool, &trace.p1_cache) {
            (Some(pool), Some(cache)) => {
                pool.backward(cache, &d_p1_biased, grads.policy_pool.as_mut().unwrap())
            }
            _ => d_p1_biased,
        };
        let mut d_enc = self
            .policy_conv1
            .backward(trace.enc_in.last().unwrap(), &d_p1_pre, &mut grads.policy_conv1);

        // Value head backward.
        let d_value_pre = grad_value * sigmoid(trace.value_pre);
        let d_pooled =
            self.value_fc
                .backward(&trace.pooled, &[d_value_pre], &mut grads.value_fc);
        let shape = (
            trace.v3_act.shape()[0],
            trace.v3_act.shape()[1],
            trace.v3_act.shape()[2],
        );
        let d_v3_act = global_avg_max_pool_backward(&d_pooled, &trace.pool_argmax, shape);
        let d_v3_pre = silu_backward(&trace.v3_pre, &d_v3_act);
        let d_v2_act = self
            .value_conv3
            .backward(&trace.v2_act, &d_v3_pre, &mut grads.value_conv3);
        let d_v2_pre = silu_backward(&trace.v2_pre, &d_v2_act);
        let d_v1_act = self
            .value_conv2
            .backward(&trace.v1_act, &d_v2_pre, &mut grads.value_conv2);
        let d_v1_biased = silu_backward(&trace.v1_biased, &d_v1_act);
        let d_v1_pre = match (&self.value_pool, &trace.v1_cache) {
            (Some(pool), Some(cache)) => {
                pool.backward(cache, &d_v1_biased, grads.value_pool.as_mut().unwrap())
            }
            _ => d_v1_biased,
        };
        d_enc += &self
            .value_conv1
            .backward(trace.enc_in.last().unwrap(), &d_v1_pre, &mut grads.value_conv1);

        // Encoder blocks in reverse.
        let mut d_out = d_enc;
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let d_sum = silu_backward(&trace.blk_sum[i], &d_out);
            let d_t4 = d_sum.clone();
            let d_t3 = match (&block.pool, &trace.blk_pool[i]) {
                (Some(pool), Some(cache)) => {
                    pool.backward(cache, &d_t4, grads.blocks[i].pool.as_mut().unwrap())
                }
                _ => d_t4,
            };
            let d_t2 = block
                .conv_b
                .backward(&trace.blk_t2[i], &d_t3, &mut grads.blocks[i].conv_b);
            let d_t1 = silu_backward(&trace.blk_t1[i], &d_t2);
            let d_x_conv =
                block
                    .conv_a
                    .backward(&trace.enc_in[i], &d_t1, &mut grads.blocks[i].conv_a);
            d_out = d_sum + &d_x_conv;
        }

        let d_input_pre = silu_backward(&trace.input_pre, &d_out);
        self.input_conv
            .backward(&trace.input, &d_input_pre, &mut grads.input_conv);
    }
}

/// Policy-value oracle backed by network inference: featurizes the plan
/// state, masks the policy to the reachable set, and returns priors aligned
/// with it.
pub struct NetEvaluator<'a> {
    pub net: &'a NetParams,
    pub layout: features::FeatureLayout,
}

impl crate::search::PolicyValueFn<crate::search::IppProblem> for NetEvaluator<'_> {
    fn evaluate(
        &self,
        problem: &crate::search::IppProblem,
        state: &crate::search::PlanState,
        reachable: &[usize],
    ) -> (Vec<f64>, f64) {
        let input = features::featurize(
            &state.belief,
            &state.pose,
            state.remaining_budget,
            problem.total_budget,
            &state.history,
            &problem.terrain,
            &problem.kinematics,
            &problem.interest,
            &self.layout,
        );
        let mut mask = vec![false; problem.terrain.action_count()];
        for &a in reachable {
            mask[a] = true;
        }
        let (p, v) = self.forward(&input, &mask);
        (reachable.iter().map(|&a| p[a]).collect(), v)
    }
}

impl NetEvaluator<'_> {
    fn forward(&self, input: &Array3<f64>, mask: &[bool]) -> (Vec<f64>, f64) {
        self.net.forward(input, mask)
    }
}
