//! Micro-encoders: a strided conv backbone, projector and predictor heads,
//! built on the tape graph for any float element type.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use vfs_tensor::{BnMode, BnStats, ConvParams, Element, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::params::{Bound, NamedTensors};
use crate::objectives::Regime;
use crate::rng::Rng;
use crate::video::Frame;

pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of each conv block (3x3, stride 2, pad 1).
    pub channels: Vec<usize>,
    /// Training resolution (square).
    pub input_size: usize,
    pub proj_hidden: usize,
    pub embed_dim: usize,
    pub pred_hidden: usize,
    /// Block whose map feeds label propagation.
    pub intermediate_block: usize,
    /// Block whose map feeds the tracker.
    pub final_block: usize,
    pub bn_eps: f64,
    /// Weight of the newest batch in the running statistics.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: vec![8, 16, 32, 64],
            input_size: 32,
            proj_hidden: 128,
            embed_dim: 64,
            pred_hidden: 32,
            intermediate_block: 2,
            final_block: 3,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.channels.len();
        if d == 0 || self.channels.contains(&0) {
            return Err(Error::Config("backbone needs at least one non-empty block".into()));
        }
        if self.intermediate_block >= d || self.final_block >= d {
            return Err(Error::Config(format!(
                "block tags {}/{} outside {} blocks",
                self.intermediate_block, self.final_block, d
            )));
        }
        if self.input_size >> d == 0 {
            return Err(Error::Config(format!(
                "input {} too small for {} stride-2 blocks",
                self.input_size, d
            )));
        }
        if self.embed_dim == 0 || self.proj_hidden == 0 || self.pred_hidden == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(Error::Config("bn_momentum in [0, 1] and bn_eps > 0 required".into()));
        }
        Ok(())
    }

    pub fn training_strides(&self) -> Vec<usize> {
        vec![2; self.channels.len()]
    }

    /// Strides for dense readouts: every block from `from` on runs at stride 1.
    pub fn dense_strides(&self, from: usize) -> Vec<usize> {
        (0..self.channels.len()).map(|i| if i >= from { 1 } else { 2 }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    /// Three-layer projector with normalization after every layer; two-layer
    /// without normalization otherwise.
    pub deep_projector: bool,
    pub predictor: bool,
}

impl HeadSpec {
    pub fn for_regime(regime: Regime, predictor: bool) -> Self {
        match regime {
            Regime::WithoutNeg => HeadSpec {
                deep_projector: true,
                predictor,
            },
            Regime::WithNeg => HeadSpec {
                deep_projector: false,
                predictor: false,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Predictor,
    Target,
}

fn he_normal(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

fn linear_params(p: &mut NamedTensors<f32>, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize, zero: bool) {
    let w = if zero {
        Tensor::zeros(vec![fan_in, fan_out])
    } else {
        he_normal(rng, vec![fan_in, fan_out], fan_in)
    };
    p.insert(format!("{}.w", name), w);
    p.insert(format!("{}.b", name), Tensor::zeros(vec![fan_out]));
}

fn bn_params(p: &mut NamedTensors<f32>, buffers: &mut NamedTensors<f32>, name: &str, c: usize) {
    p.insert(format!("{}.gamma", name), Tensor::full(vec![c], 1.0));
    p.insert(format!("{}.beta", name), Tensor::zeros(vec![c]));
    buffers.insert(format!("{}.mean", name), Tensor::zeros(vec![c]));
    buffers.insert(format!("{}.var", name), Tensor::full(vec![c], 1.0));
}

/// Fan-in scaled normal weights, unit BN affine, zero biases. The last
/// predictor layer starts at zero so the residual predictor is the identity.
pub fn init_params(cfg: &ModelConfig, heads: HeadSpec, rng: &mut Rng) -> (NamedTensors<f32>, NamedTensors<f32>) {
    let mut p = NamedTensors::new();
    let mut buffers = NamedTensors::new();
    let mut cin = 3;
    for (i, &c) in cfg.channels.iter().enumerate() {
        p.insert(format!("backbone.{}.w", i), he_normal(rng, vec![c, cin, 3, 3], cin * 9));
        bn_params(&mut p, &mut buffers, &format!("backbone.{}.bn", i), c);
        cin = c;
    }
    let (h, d) = (cfg.proj_hidden, cfg.embed_dim);
    if heads.deep_projector {
        linear_params(&mut p, rng, "proj.0", cin, h, false);
        bn_params(&mut p, &mut buffers, "proj.0.bn", h);
        linear_params(&mut p, rng, "proj.1", h, h, false);
        bn_params(&mut p, &mut buffers, "proj.1.bn", h);
        linear_params(&mut p, rng, "proj.2", h, d, false);
        bn_params(&mut p, &mut buffers, "proj.2.bn", d);
    } else {
        linear_params(&mut p, rng, "proj.0", cin, h, false);
        linear_params(&mut p, rng, "proj.1", h, d, false);
    }
    if heads.predictor {
        linear_params(&mut p, rng, "pred.0", d, cfg.pred_hidden, false);
        bn_params(&mut p, &mut buffers, "pred.0.bn", cfg.pred_hidden);
        linear_params(&mut p, rng, "pred.1", cfg.pred_hidden, d, true);
    }
    (p, buffers)
}

/// How normalization layers see their statistics.
pub enum BnCtx<'a, T: Element> {
    /// Batch statistics; the ones used are collected by layer name.
    Train(Vec<(String, BnStats<T>)>),
    /// Running statistics.
    Eval(&'a NamedTensors<T>),
}

impl<T: Element> BnCtx<'_, T> {
    fn apply(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, name: &str, eps: f64) -> Result<Var> {
        let gamma = b.var(&format!("{}.gamma", name))?;
        let beta = b.var(&format!("{}.beta", name))?;
        let eps = T::from_f64(eps);
        match self {
            BnCtx::Train(stats) => {
                let (y, s) = g.batch_norm(x, gamma, beta, BnMode::Train { eps })?;
                stats.push((name.to_string(), s.expect("train statistics")));
                Ok(y)
            }
            BnCtx::Eval(buffers) => {
                let mean = buffers.require(&format!("{}.mean", name))?;
                let var = buffers.require(&format!("{}.var", name))?;
                let (y, _) = g.batch_norm(
                    x,
                    gamma,
                    beta,
                    BnMode::Eval {
                        mean: mean.data(),
                        var: var.data(),
                        eps,
                    },
                )?;
                Ok(y)
            }
        }
    }
}

fn linear<T: Element>(g: &mut Graph<T>, b: &Bound, x: Var, name: &str) -> Result<Var> {
    let w = b.var(&format!("{}.w", name))?;
    let bias = b.var(&format!("{}.b", name))?;
    let y = g.matmul(x, w)?;
    Ok(g.bias_add(y, bias)?)
}

/// Block maps `B_0 ..= B_upto` for a `[N, 3, H, W]` input.
pub fn backbone<T: Element>(
    g: &mut Graph<T>,
    b: &Bound,
    x: Var,
    cfg: &ModelConfig,
    strides: &[usize],
    upto: usize,
    bn: &mut BnCtx<'_, T>,
) -> Result<Vec<Var>> {
    if strides.len() < upto + 1 {
        return Err(Error::Contract(format!("{} strides for block {}", strides.len(), upto)));
    }
    let mut maps = Vec::with_capacity(upto + 1);
    let mut h = x;
    for (i, &stride) in strides.iter().enumerate().take(upto + 1) {
        let w = b.var(&format!("backbone.{}.w", i))?;
        let y = g.conv2d(h, w, None, ConvParams { stride, pad: 1 })?;
        let y = bn.apply(g, b, y, &format!("backbone.{}.bn", i), cfg.bn_eps)?;
        h = g.relu(y);
        maps.push(h);
    }
    Ok(maps)
}

pub fn projector<T: Element>(
    g: &mut Graph<T>,
    b: &Bound,
    pooled: Var,
    cfg: &ModelConfig,
    heads: HeadSpec,
    bn: &mut BnCtx<'_, T>,
) -> Result<Var> {
    if heads.deep_projector {
        let mut h = pooled;
        for layer in ["proj.0", "proj.1"] {
            let y = linear(g, b, h, layer)?;
            let y = bn.apply(g, b, y, &format!("{}.bn", layer), cfg.bn_eps)?;
            h = g.relu(y);
        }
        let y = linear(g, b, h, "proj.2")?;
        bn.apply(g, b, y, "proj.2.bn", cfg.bn_eps)
    } else {
        let y = linear(g, b, pooled, "proj.0")?;
        let y = g.relu(y);
        linear(g, b, y, "proj.1")
    }
}

/// Residual two-layer predictor `h + W1 relu(bn(W0 h))`.
pub fn predictor<T: Element>(
    g: &mut Graph<T>,
    b: &Bound,
    h: Var,
    cfg: &ModelConfig,
    bn: &mut BnCtx<'_, T>,
) -> Result<Var> {
    let y = linear(g, b, h, "pred.0")?;
    let y = bn.apply(g, b, y, "pred.0.bn", cfg.bn_eps)?;
    let y = g.relu(y);
    let y = linear(g, b, y, "pred.1")?;
    Ok(g.add(h, y)?)
}

/// Graph handles of one encoded batch.
#[derive(Clone, Debug)]
pub struct PyramidVars {
    pub blocks: Vec<Var>,
    /// `[N, D]`, unit rows.
    pub embedding: Var,
}

/// Full encoder at training strides. The target side is detached unless
/// `detach_target` is false; the predictor side passes through the
/// predictor head when the heads include one.
#[allow(clippy::too_many_arguments)]
pub fn encode<T: Element>(
    g: &mut Graph<T>,
    b: &Bound,
    x: Var,
    cfg: &ModelConfig,
    heads: HeadSpec,
    side: Side,
    detach_target: bool,
    bn: &mut BnCtx<'_, T>,
) -> Result<PyramidVars> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.input_size || s[3] != cfg.input_size {
        return Err(Error::Contract(format!(
            "encoder expects [N, 3, {}, {}], got {:?}",
            cfg.input_size, cfg.input_size, s
        )));
    }
    let strides = cfg.training_strides();
    let last = cfg.channels.len() - 1;
    let blocks = backbone(g, b, x, cfg, &strides, last, bn)?;
    let pooled = g.mean_pool(blocks[last])?;
    let mut h = projector(g, b, pooled, cfg, heads, bn)?;
    if side == Side::Predictor && heads.predictor {
        h = predictor(g, b, h, cfg, bn)?;
    }
    let mut embedding = g.l2_normalize(h, 1, T::from_f64(NORM_EPS))?;
    if side == Side::Target && detach_target {
        embedding = g.stop_gradient(embedding);
    }
    Ok(PyramidVars { blocks, embedding })
}

/// `[N, 3, H, W]` input tensor from frames, centred around zero.
pub fn frames_to_tensor<T: Element>(frames: &[&Frame]) -> Result<Tensor<T>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Contract("no frames to encode".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
    for f in frames {
        if f.height != h || f.width != w {
            return Err(Error::Contract("frames in a batch must share one size".into()));
        }
        data.extend(f.to_chw().into_iter().map(|v| T::from_f64(v as f64 - 0.5)));
    }
    Ok(Tensor::new(vec![frames.len(), 3, h, w], data)?)
}

/// Updates running statistics from the batch statistics of one step.
pub fn update_running<T: Element>(buffers: &mut NamedTensors<T>, stats: &[(String, BnStats<T>)], momentum: f64) -> Result<()> {
    let m = T::from_f64(momentum);
    let keep = T::one() - m;
    for (name, s) in stats {
        let unbias = T::from_f64(s.count as f64 / (s.count as f64 - 1.0).max(1.0));
        let mean = buffers
            .get_mut(&format!("{}.mean", name))
            .ok_or_else(|| Error::Contract(format!("no running mean for {}", name)))?;
        for (r, &b) in mean.data_mut().iter_mut().zip(&s.mean) {
            *r = keep * *r + m * b;
        }
        let var = buffers
            .get_mut(&format!("{}.var", name))
            .ok_or_else(|| Error::Contract(format!("no running var for {}", name)))?;
        for (r, &b) in var.data_mut().iter_mut().zip(&s.var) {
            *r = keep * *r + m * b * unbias;
        }
    }
    Ok(())
}

/// Frozen encoder for inference, evaluated with running statistics.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: ModelConfig,
    pub heads: HeadSpec,
    pub params: NamedTensors<f32>,
    pub buffers: NamedTensors<f32>,
}

impl Encoder {
    pub fn random(cfg: &ModelConfig, heads: HeadSpec, rng: &mut Rng) -> Self {
        let (params, buffers) = init_params(cfg, heads, rng);
        Encoder {
            cfg: cfg.clone(),
            heads,
            params,
            buffers,
        }
    }

    /// Map of block `block` for each frame, as `[C, H', W']` tensors.
    pub fn block_maps(&self, frames: &[&Frame], strides: &[usize], block: usize) -> Result<Vec<Tensor<f32>>> {
        let x = frames_to_tensor::<f32>(frames)?;
        let mut g = Graph::new();
        let b = Bound::bind(&mut g, &self.params, false);
        let xv = g.constant(x);
        let mut bn = BnCtx::Eval(&self.buffers);
        let maps = backbone(&mut g, &b, xv, &self.cfg, strides, block, &mut bn)?;
        let out = g.value(maps[block]);
        let s = out.shape();
        let per = s[1] * s[2] * s[3];
        Ok(out
            .data()
            .chunks_exact(per)
            .map(|c| Tensor::new(vec![s[1], s[2], s[3]], c.to_vec()).expect("map shape"))
            .collect())
    }

    /// Unit-norm projector outputs (target-side embeddings) at training
    /// resolution.
    pub fn embeddings(&self, frames: &[&Frame]) -> Result<Vec<Vec<f32>>> {
        let x = frames_to_tensor::<f32>(frames)?;
        let mut g = Graph::new();
        let b = Bound::bind(&mut g, &self.params, false);
        let xv = g.constant(x);
        let mut bn = BnCtx::Eval(&self.buffers);
        let out = encode(&mut g, &b, xv, &self.cfg, self.heads, Side::Target, true, &mut bn)?;
        let d = self.cfg.embed_dim;
        Ok(g.value(out.embedding).data().chunks_exact(d).map(<[f32]>::to_vec).collect())
    }
}
