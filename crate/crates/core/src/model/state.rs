//! Training state and the single training step of both regimes.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use vfs_tensor::{BnStats, Element, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::encoder::{encode, frames_to_tensor, init_params, update_running, BnCtx, Encoder, HeadSpec, ModelConfig, Side};
use crate::model::optim::{lr_schedule, sgd_step, SgdConfig};
use crate::model::params::{Bound, NamedTensors};
use crate::objectives::{momentum_update_in_place, multi_pair_loss_graph, NegativeBank, Regime};
use crate::rng::{stream, Rng};
use crate::video::{augment, sample, AugmentSpec, Frame, SampleMode, SamplerSpec, VideoClip};

/// How the `n` sampled frames of a clip are split between the two sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitOrder {
    /// First `n/2` sampled frames to the predictor, the rest to the target.
    FirstHalf,
    /// Even positions to the predictor, odd to the target.
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mode: SampleMode,
    /// Frame interval for continuous sampling.
    pub delta: usize,
    /// Fixed first index for continuous sampling; uniform when absent.
    pub start: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            mode: SampleMode::Distant,
            delta: 0,
            start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub sampling: SamplingConfig,
    /// Frames sampled per clip (even).
    pub n_frames: usize,
    pub augment: AugmentSpec,
    /// When false every view of a clip comes from its first sampled frame.
    pub different_frame: bool,
    pub split: SplitOrder,
    /// Clips per step, all from distinct videos.
    pub batch_size: usize,
    pub steps: u64,
    pub sgd: SgdConfig,
    pub tau: f64,
    /// Target momentum `m` (with-negatives regime).
    pub momentum: f64,
    /// Bank capacity `K` (with-negatives regime).
    pub bank_size: usize,
    /// Predictor head on the predictor side (without-negatives regime).
    pub predictor: bool,
    /// Detach the target branch (without-negatives regime).
    pub stop_gradient: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::WithoutNeg,
            sampling: SamplingConfig::default(),
            n_frames: 2,
            augment: AugmentSpec::default(),
            different_frame: true,
            split: SplitOrder::FirstHalf,
            batch_size: 32,
            steps: 625,
            sgd: SgdConfig::default(),
            tau: 0.2,
            momentum: 0.999,
            bank_size: 256,
            predictor: true,
            stop_gradient: true,
        }
    }
}

impl TrainConfig {
    pub fn heads(&self) -> HeadSpec {
        HeadSpec::for_regime(self.regime, self.predictor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 || !self.n_frames.is_multiple_of(2) {
            return Err(Error::Config(format!("n_frames {} must be even and >= 2", self.n_frames)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.regime == Regime::WithNeg && self.batch_size > self.bank_size {
            return Err(Error::Config(format!(
                "batch of {} clips exceeds bank size {}",
                self.batch_size, self.bank_size
            )));
        }
        if self.sgd.base_lr < 0.0 || self.sgd.momentum < 0.0 || self.sgd.weight_decay < 0.0 {
            return Err(Error::Config("optimizer hyperparameters must be non-negative".into()));
        }
        self.augment.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct SiameseState {
    pub model: ModelConfig,
    pub heads: HeadSpec,
    pub regime: Regime,
    pub params: NamedTensors<f32>,
    /// Running normalization statistics of the online encoder.
    pub buffers: NamedTensors<f32>,
    /// Momentum copy of `params` (with-negatives regime only).
    pub target: Option<NamedTensors<f32>>,
    pub bank: Option<NegativeBank>,
    pub velocity: NamedTensors<f32>,
    pub step: u64,
    /// Drives batch choice, frame sampling and augmentation.
    pub rng: Rng,
}

impl SiameseState {
    pub fn new(model: &ModelConfig, train: &TrainConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        let heads = train.heads();
        let (params, buffers) = init_params(model, heads, &mut stream(seed, "init"));
        let (target, bank) = match train.regime {
            Regime::WithNeg => (
                Some(params.clone()),
                Some(NegativeBank::new(train.bank_size, model.embed_dim)),
            ),
            Regime::WithoutNeg => (None, None),
        };
        Ok(SiameseState {
            model: model.clone(),
            heads,
            regime: train.regime,
            velocity: params.zeros_like(),
            params,
            buffers,
            target,
            bank,
            step: 0,
            rng: stream(seed, "train-batches"),
        })
    }

    pub fn encoder(&self) -> Encoder {
        Encoder {
            cfg: self.model.clone(),
            heads: self.heads,
            params: self.params.clone(),
            buffers: self.buffers.clone(),
        }
    }
}

/// Augmented views of a batch, predictor side and target side, each
/// `clips * n/2` frames with a clip's frames contiguous.
#[derive(Clone, Debug)]
pub struct ViewBatch {
    pub clips: usize,
    pub predictor: Vec<Frame>,
    pub target: Vec<Frame>,
}

pub fn assemble_views(corpus: &[VideoClip], cfg: &TrainConfig, input_size: usize, rng: &mut Rng) -> Result<ViewBatch> {
    if cfg.batch_size > corpus.len() {
        return Err(Error::Contract(format!(
            "batch of {} distinct videos from a corpus of {}",
            cfg.batch_size,
            corpus.len()
        )));
    }
    let ids = sample_indices(rng, corpus.len(), cfg.batch_size);
    let mut aug = cfg.augment.clone();
    aug.output_size = Some((input_size, input_size));
    let half = cfg.n_frames / 2;
    let mut predictor = Vec::with_capacity(cfg.batch_size * half);
    let mut target = Vec::with_capacity(cfg.batch_size * half);
    for id in ids.iter() {
        let clip = &corpus[id];
        let spec = SamplerSpec {
            mode: cfg.sampling.mode,
            clip_len: clip.len(),
            n: cfg.n_frames,
            delta: cfg.sampling.delta,
            start: cfg.sampling.start,
        };
        let mut idx = sample(&spec, rng)?;
        if !cfg.different_frame {
            idx = vec![idx[0]; idx.len()];
        }
        let views: Vec<Frame> = idx.iter().map(|&t| augment(&clip.frames[t], &aug, rng)).collect();
        for (pos, v) in views.into_iter().enumerate() {
            let to_pred = match cfg.split {
                SplitOrder::FirstHalf => pos < half,
                SplitOrder::Interleaved => pos % 2 == 0,
            };
            if to_pred {
                predictor.push(v);
            } else {
                target.push(v);
            }
        }
    }
    Ok(ViewBatch {
        clips: cfg.batch_size,
        predictor,
        target,
    })
}

/// Handles of one loss evaluation.
pub struct LossParts<T: Element> {
    pub loss: Var,
    pub p: Var,
    pub z: Var,
    /// Batch statistics of the predictor branch.
    pub stats: Vec<(String, BnStats<T>)>,
}

/// Loss of a frozen target: `z` is a given `[clips * n/2, D]` embedding.
#[allow(clippy::too_many_arguments)]
pub fn loss_given_target<T: Element>(
    g: &mut Graph<T>,
    online: &Bound,
    x_p: Var,
    z: Var,
    bank: Option<Var>,
    clips: usize,
    model: &ModelConfig,
    heads: HeadSpec,
    cfg: &TrainConfig,
    detach_target: bool,
) -> Result<LossParts<T>> {
    let mut bn = BnCtx::Train(Vec::new());
    let p = encode(g, online, x_p, model, heads, Side::Predictor, true, &mut bn)?.embedding;
    let loss = multi_pair_loss_graph(g, p, z, bank, clips, cfg.regime, cfg.tau, detach_target)?;
    let stats = match bn {
        BnCtx::Train(s) => s,
        BnCtx::Eval(_) => unreachable!(),
    };
    Ok(LossParts { loss, p, z, stats })
}

/// Full loss graph of one step. `target` holds the momentum encoder in the
/// with-negatives regime; otherwise the online weights are shared.
#[allow(clippy::too_many_arguments)]
pub fn build_loss<T: Element>(
    g: &mut Graph<T>,
    online: &Bound,
    target: Option<&Bound>,
    x_p: Var,
    x_t: Var,
    bank: Option<Var>,
    clips: usize,
    model: &ModelConfig,
    heads: HeadSpec,
    cfg: &TrainConfig,
) -> Result<LossParts<T>> {
    let detach = cfg.regime == Regime::WithNeg || cfg.stop_gradient;
    let mut target_bn = BnCtx::Train(Vec::new());
    let z = encode(g, target.unwrap_or(online), x_t, model, heads, Side::Target, detach, &mut target_bn)?.embedding;
    loss_given_target(g, online, x_p, z, bank, clips, model, heads, cfg, detach)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub step: u64,
    pub lr: f64,
    pub loss: f32,
}

fn diagnostics(g: &Graph<f32>, loss: f32, online: &Bound, names: &[String], grads: &[Tensor<f32>]) -> String {
    let mut worst_param = (String::new(), 0.0f32);
    for (name, &v) in names.iter().zip(online.order()) {
        let m = g.value(v).data().iter().fold(0.0f32, |a, x| a.max(x.abs()));
        if !(m <= worst_param.1) {
            worst_param = (name.clone(), m);
        }
    }
    let bad: Vec<&str> = names
        .iter()
        .zip(grads)
        .filter(|(_, t)| !t.all_finite())
        .map(|(n, _)| n.as_str())
        .collect();
    format!(
        "loss={} largest |param| {}={} non-finite grads in {:?}",
        loss, worst_param.0, worst_param.1, bad
    )
}

/// One optimization step on a batch drawn from `corpus`.
pub fn train_step(state: &mut SiameseState, corpus: &[VideoClip], cfg: &TrainConfig) -> Result<StepOutput> {
    if cfg.regime != state.regime || cfg.heads() != state.heads {
        return Err(Error::Contract("training config does not match the state's regime".into()));
    }
    let views = assemble_views(corpus, cfg, state.model.input_size, &mut state.rng)?;
    let pred_refs: Vec<&Frame> = views.predictor.iter().collect();
    let targ_refs: Vec<&Frame> = views.target.iter().collect();

    let mut g = Graph::<f32>::new();
    let online = Bound::bind(&mut g, &state.params, true);
    let target = state.target.as_ref().map(|t| Bound::bind(&mut g, t, false));
    let bank = state.bank.as_ref().map(|b| g.constant(b.to_tensor()));
    let x_p = g.constant(frames_to_tensor(&pred_refs)?);
    let x_t = g.constant(frames_to_tensor(&targ_refs)?);
    let parts = build_loss(&mut g, &online, target.as_ref(), x_p, x_t, bank, views.clips, &state.model, state.heads, cfg)?;
    let loss = g.value(parts.loss).item()?;
    let mut grads = g.backward(parts.loss)?;
    let grads: Vec<Tensor<f32>> = online
        .order()
        .iter()
        .map(|&v| grads.take(v).expect("parameter gradient"))
        .collect();
    if !loss.is_finite() || grads.iter().any(|t| !t.all_finite()) {
        return Err(Error::Training {
            step: state.step,
            detail: diagnostics(&g, loss, &online, state.params.names(), &grads),
        });
    }

    let lr = lr_schedule(state.step, cfg.steps, cfg.sgd.base_lr);
    sgd_step(&mut state.params, &mut state.velocity, &grads, &cfg.sgd, lr)?;
    update_running(&mut state.buffers, &parts.stats, state.model.bn_momentum)?;
    if let (Some(target), Some(bank)) = (state.target.as_mut(), state.bank.as_mut()) {
        momentum_update_in_place(state.params.tensors(), target.tensors_mut(), cfg.momentum)?;
        let d = state.model.embed_dim;
        let half = cfg.n_frames / 2;
        let z = g.value(parts.z).data();
        let keys: Vec<f32> = (0..views.clips)
            .flat_map(|c| z[c * half * d..(c * half + 1) * d].iter().copied())
            .collect();
        bank.enqueue(&keys)?;
    }
    state.step += 1;
    Ok(StepOutput {
        step: state.step,
        lr,
        loss,
    })
}

/// Mean over dimensions of the per-dimension standard deviation of unit
/// embeddings across `frames`.
pub fn embedding_std(encoder: &Encoder, frames: &[&Frame]) -> Result<f64> {
    let emb = encoder.embeddings(frames)?;
    let n = emb.len() as f64;
    let d = encoder.cfg.embed_dim;
    let mut total = 0.0;
    for k in 0..d {
        let mean = emb.iter().map(|e| e[k] as f64).sum::<f64>() / n;
        let var = emb.iter().map(|e| (e[k] as f64 - mean).powi(2)).sum::<f64>() / n;
        total += var.sqrt();
    }
    Ok(total / d as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{gen_synthetic_clip, GenSpec};

    fn corpus(n: usize) -> Vec<VideoClip> {
        let spec = GenSpec {
            num_frames: 8,
            ..Default::default()
        };
        (0..n as u64).map(|s| gen_synthetic_clip(&spec, s).unwrap()).collect()
    }

    fn small_cfg(regime: Regime) -> TrainConfig {
        TrainConfig {
            regime,
            batch_size: 4,
            steps: 10,
            bank_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn fresh_state_starts_at_zero() {
        let s = SiameseState::new(&ModelConfig::default(), &small_cfg(Regime::WithNeg), 1).unwrap();
        assert_eq!(s.step, 0);
        assert!(s.bank.as_ref().unwrap().is_empty());
        assert_eq!(s.target.as_ref().unwrap(), &s.params);
    }

    #[test]
    fn same_seed_same_losses() {
        let data = corpus(6);
        for regime in [Regime::WithoutNeg, Regime::WithNeg] {
            let cfg = small_cfg(regime);
            let mut a = SiameseState::new(&ModelConfig::default(), &cfg, 3).unwrap();
            let mut b = SiameseState::new(&ModelConfig::default(), &cfg, 3).unwrap();
            for _ in 0..2 {
                let la = train_step(&mut a, &data, &cfg).unwrap().loss;
                let lb = train_step(&mut b, &data, &cfg).unwrap().loss;
                assert_eq!(la.to_bits(), lb.to_bits());
            }
        }
    }

    #[test]
    fn zero_lr_keeps_online_params() {
        let data = corpus(6);
        let mut cfg = small_cfg(Regime::WithNeg);
        cfg.sgd.base_lr = 0.0;
        let mut s = SiameseState::new(&ModelConfig::default(), &cfg, 5).unwrap();
        let before = s.params.clone();
        train_step(&mut s, &data, &cfg).unwrap();
        assert_eq!(s.params, before);
        assert_eq!(s.bank.as_ref().unwrap().len(), 4);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn identical_views_give_zero_loss_at_init() {
        let data = corpus(4);
        let mut cfg = small_cfg(Regime::WithoutNeg);
        cfg.augment = AugmentSpec::none();
        cfg.different_frame = false;
        let model = ModelConfig::default();
        let s = SiameseState::new(&model, &cfg, 2).unwrap();
        let views = assemble_views(&data, &cfg, model.input_size, &mut s.rng.clone()).unwrap();
        assert_eq!(views.predictor, views.target);
        let mut g = Graph::<f32>::new();
        let online = Bound::bind(&mut g, &s.params, true);
        let x: Vec<&Frame> = views.predictor.iter().collect();
        let xp = g.constant(frames_to_tensor(&x).unwrap());
        let xt = g.constant(frames_to_tensor(&x).unwrap());
        let parts = build_loss(&mut g, &online, None, xp, xt, None, views.clips, &model, s.heads, &cfg).unwrap();
        assert!(g.value(parts.loss).item().unwrap().abs() < 1e-5);
    }
}
