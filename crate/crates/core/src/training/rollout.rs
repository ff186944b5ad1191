use crate::error::{Error, Result};
use crate::model::{Bound, ModelParams};
use crate::numerics::{Tape, Tensor, Var};

use super::{Batch, TrainConfig, TrainMode};

/// Tape handles produced by one rollout over a batch.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// All `T` frames: ground truth before `T0`, predictions from `T0` on.
    pub frames: Vec<Var>,
    /// The `T − T0` predicted frames.
    pub predictions: Vec<Var>,
    /// Leaked features `f̂_t` of the clip ending at `t`, for `t = c … T−2`.
    /// Empty in ablation mode.
    pub features: Vec<Var>,
    /// Guider outputs `m̂_t`, aligned with `features`.
    pub guidance: Vec<Var>,
    /// Guider hidden states after each step, aligned with `features`.
    pub hidden: Vec<Var>,
}

/// Teacher-forced on the first `context` frames, autoregressive after.
///
/// With `detach_guidance`, the leaked features and guider outputs enter the
/// generator as constants, so gradients reach the generator only through
/// its own earlier predictions.
pub fn rollout(
    tape: &mut Tape<f32>,
    model: &Bound,
    real: &[Var],
    context: usize,
    mode: TrainMode,
    detach_guidance: bool,
) -> Result<Rollout> {
    let c = model.config().clip_len;
    let t_len = real.len();
    if context < c + 1 || context >= t_len {
        return Err(Error::contract(
            "rollout",
            format!("need c+1={} <= T0={context} < T={t_len}", c + 1),
        ));
    }
    let mut ro = Rollout {
        frames: real[..context].to_vec(),
        predictions: Vec::with_capacity(t_len - context),
        features: Vec::new(),
        guidance: Vec::new(),
        hidden: Vec::new(),
    };
    match mode {
        TrainMode::Full => {
            let [b, _, h, w] = *tape.shape(real[0]) else {
                return Err(Error::contract("rollout", format!("frames must be [B, C, H, W], got {:?}", tape.shape(real[0]))));
            };
            let mut hidden = model.initial_hidden(tape, b, h, w);
            for t in c..t_len - 1 {
                let clip = model.clip(tape, &ro.frames[t - c..=t])?;
                let mut f = model.extract_features(tape, clip)?;
                if detach_guidance {
                    f = tape.detach(f);
                }
                let (mut m, h2) = model.guide_motion(tape, f, hidden)?;
                hidden = h2;
                if detach_guidance {
                    m = tape.detach(m);
                }
                ro.features.push(f);
                ro.guidance.push(m);
                ro.hidden.push(hidden);
                if t + 1 >= context {
                    let next = model.predict_next(tape, ro.frames[t], m)?;
                    ro.frames.push(next);
                    ro.predictions.push(next);
                }
            }
        }
        TrainMode::Ablation => {
            for t in context - 1..t_len - 1 {
                let now = model.encode_spatial(tape, ro.frames[t])?;
                let before = model.encode_spatial(tape, ro.frames[t - 1])?;
                let motion = tape.sub(now, before)?;
                let next = model.predict_next(tape, ro.frames[t], motion)?;
                ro.frames.push(next);
                ro.predictions.push(next);
            }
        }
    }
    Ok(ro)
}

/// Leaked features `f_t` of real clips ending at `t = c … T−1`.
pub fn real_features(tape: &mut Tape<f32>, model: &Bound, real: &[Var]) -> Result<Vec<Var>> {
    let c = model.config().clip_len;
    if real.len() < c + 2 {
        return Err(Error::contract("real_features", format!("{} frames cannot form two clips of {}", real.len(), c + 1)));
    }
    (c..real.len())
        .map(|t| {
            let clip = model.clip(tape, &real[t - c..=t])?;
            model.extract_features(tape, clip)
        })
        .collect()
}

/// Values of a forward-only rollout together with the real-branch features
/// and motion targets.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutCache {
    pub predictions: Vec<Tensor<f32>>,
    pub fake_features: Vec<Tensor<f32>>,
    pub guidance: Vec<Tensor<f32>>,
    pub hidden: Vec<Tensor<f32>>,
    pub real_features: Vec<Tensor<f32>>,
    pub real_targets: Vec<Tensor<f32>>,
}

pub fn rollout_batch(params: &ModelParams, cfg: &TrainConfig, batch: &Batch) -> Result<RolloutCache> {
    let mut tape = Tape::new();
    let model = params.bind(&cfg.model, &mut tape, &[])?;
    let real = batch.on_tape(&mut tape);
    let ro = rollout(&mut tape, &model, &real, cfg.context, cfg.mode, false)?;
    let f = real_features(&mut tape, &model, &real)?;
    let m = crate::losses::motion_targets(&mut tape, &f)?;
    let vals = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
    Ok(RolloutCache {
        predictions: vals(&ro.predictions),
        fake_features: vals(&ro.features),
        guidance: vals(&ro.guidance),
        hidden: vals(&ro.hidden),
        real_features: vals(&f),
        real_targets: vals(&m),
    })
}
