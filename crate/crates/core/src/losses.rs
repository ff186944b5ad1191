//! Training objectives.
//!
//! * [`loss_dis`]: discriminator cross-entropy over real and generated clips.
//! * [`loss_guider_learner`]: motion guider regression onto the difference of
//!   consecutive leaked features of real clips.
//! * [`loss_guider_teacher`]: generator term asking the leaked-feature change
//!   caused by a predicted frame to match the guider's motion prediction.
//! * [`loss_recons`]: pixel BCE or MSE plus the gradient difference loss.
//! * [`loss_gen`]: `recons + γ · teacher`.
//!
//! Losses are built on a [`Tape`] so they can be differentiated; all of them
//! are generic over the scalar type so they can be gradient-checked in `f64`.

use crate::error::{Error, Result};
use crate::numerics::{DiffAxis, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconMode {
    Bce,
    Mse,
}

impl ReconMode {
    pub fn name(self) -> &'static str {
        match self {
            ReconMode::Bce => "bce",
            ReconMode::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bce" => Some(ReconMode::Bce),
            "mse" => Some(ReconMode::Mse),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the teacher term in the generator loss.
    pub gamma: f64,
    pub gdl_weight: f64,
    pub gdl_exponent: f64,
    pub recon: ReconMode,
    /// Probability clamp for every log term.
    pub prob_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 0.1, gdl_weight: 1.0, gdl_exponent: 1.0, recon: ReconMode::Bce, prob_eps: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.gamma.is_nan() || self.gamma < 0.0 {
            bad.push(format!("gamma={} must be >= 0", self.gamma));
        }
        if self.gdl_weight.is_nan() || self.gdl_weight < 0.0 {
            bad.push(format!("gdl_weight={} must be >= 0", self.gdl_weight));
        }
        if self.gdl_exponent.is_nan() || self.gdl_exponent < 1.0 {
            bad.push(format!("gdl_exponent={} must be >= 1", self.gdl_exponent));
        }
        if !(self.prob_eps > 0.0 && self.prob_eps < 0.5) {
            bad.push(format!("prob_eps={} must lie in (0, 0.5)", self.prob_eps));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// `-mean(ln D(real)) - mean(ln(1 - D(fake)))` with probabilities clamped to
/// `[eps, 1 - eps]`.
pub fn loss_dis<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var, eps: f64) -> Result<Var> {
    if tape.value(real).numel() == 0 || tape.value(fake).numel() == 0 {
        return Err(Error::contract("loss_dis", "need at least one real and one generated probability"));
    }
    let r = tape.clamp(real, eps, 1.0 - eps)?;
    let f = tape.clamp(fake, eps, 1.0 - eps)?;
    let log_r = tape.ln(r)?;
    let real_term = tape.mean(log_r)?;
    let one_minus_f = tape.affine(f, -1.0, 1.0)?;
    let log_f = tape.ln(one_minus_f)?;
    let fake_term = tape.mean(log_f)?;
    let both = tape.add(real_term, fake_term)?;
    tape.scale(both, -1.0)
}

/// `m_t = f_{t+1} - f_t` for consecutive leaked features.
pub fn motion_targets<T: Real>(tape: &mut Tape<T>, features: &[Var]) -> Result<Vec<Var>> {
    if features.len() < 2 {
        return Err(Error::contract("motion_target", format!("need at least 2 feature maps, got {}", features.len())));
    }
    features.windows(2).map(|w| tape.sub(w[1], w[0])).collect()
}

fn batch_of<T: Real>(tape: &Tape<T>, v: Var) -> usize {
    match tape.shape(v) {
        [b, _, _, _] => *b,
        _ => 1,
    }
}

/// `Σ_t ‖m̂_t − m_t‖²`, averaged over the batch axis when the maps are
/// batched `[B, F, h, w]`.
pub fn loss_guider_learner<T: Real>(tape: &mut Tape<T>, predicted: &[Var], targets: &[Var]) -> Result<Var> {
    const OP: &str = "loss_guider_learner";
    if predicted.len() != targets.len() || predicted.is_empty() {
        return Err(Error::contract(OP, format!("{} predictions vs {} targets", predicted.len(), targets.len())));
    }
    let mut total: Option<Var> = None;
    for (&p, &m) in predicted.iter().zip(targets) {
        if tape.shape(p) != tape.shape(m) {
            return Err(Error::contract(OP, format!("shape {:?} vs {:?}", tape.shape(p), tape.shape(m))));
        }
        let d = tape.sub(p, m)?;
        let sq = tape.square(d)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let batch = batch_of(tape, predicted[0]);
    tape.scale(total.expect("non-empty"), 1.0 / batch as f64)
}

/// One step of the teacher objective.
#[derive(Clone, Copy, Debug)]
pub struct TeacherTerm {
    /// Leaked features of the clip extended by the newly generated frame;
    /// carries the gradient back into the generator.
    pub extended: Var,
    /// Detached leaked features of the clip ending at the current frame.
    pub features: Var,
    /// Detached motion guidance used to generate the new frame.
    pub guidance: Var,
}

/// `Σ_t ‖(F(extended clip) − f̂_t) − m̂_t‖²`, batch-averaged like
/// [`loss_guider_learner`]. `f̂_t` and `m̂_t` must be detached constants.
pub fn loss_guider_teacher<T: Real>(tape: &mut Tape<T>, terms: &[TeacherTerm]) -> Result<Var> {
    const OP: &str = "loss_guider_teacher";
    let first = terms.first().ok_or_else(|| Error::contract(OP, "no rollout steps"))?;
    let mut total: Option<Var> = None;
    for t in terms {
        if !tape.is_constant(t.features) || !tape.is_constant(t.guidance) {
            return Err(Error::contract(OP, "leaked features and guidance must be detached inputs"));
        }
        let drift = tape.sub(t.extended, t.features)?;
        let err = tape.sub(drift, t.guidance)?;
        let sq = tape.square(err)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let batch = batch_of(tape, first.extended);
    tape.scale(total.expect("non-empty"), 1.0 / batch as f64)
}

/// Components of the reconstruction loss.
#[derive(Clone, Copy, Debug)]
pub struct Recons {
    pub pixel: Var,
    pub gdl: Var,
    pub total: Var,
}

/// Gradient difference loss: mean over all horizontally and vertically
/// adjacent pixel pairs of `||Δx| − |Δx̂||^α`.
pub fn gdl<T: Real>(tape: &mut Tape<T>, truth: Var, pred: Var, exponent: f64) -> Result<Var> {
    let mut sums = Vec::with_capacity(2);
    let mut count = 0usize;
    for axis in [DiffAxis::Horizontal, DiffAxis::Vertical] {
        let dt = tape.spatial_diff(truth, axis)?;
        let dt = tape.abs(dt)?;
        let dp = tape.spatial_diff(pred, axis)?;
        let dp = tape.abs(dp)?;
        let d = tape.sub(dt, dp)?;
        let d = tape.abs(d)?;
        let d = if exponent == 1.0 { d } else { tape.powf(d, exponent)? };
        count += tape.value(d).numel();
        sums.push(tape.sum(d)?);
    }
    if count == 0 {
        return Err(Error::contract("gdl", "images too small for adjacent pairs"));
    }
    let total = tape.add(sums[0], sums[1])?;
    tape.scale(total, 1.0 / count as f64)
}

/// Pixel term (mean BCE or mean squared error) plus `λ · GDL`.
pub fn loss_recons<T: Real>(tape: &mut Tape<T>, truth: Var, pred: Var, cfg: &LossConfig) -> Result<Recons> {
    if tape.shape(truth) != tape.shape(pred) {
        return Err(Error::contract(
            "loss_recons",
            format!("truth {:?} vs prediction {:?}", tape.shape(truth), tape.shape(pred)),
        ));
    }
    let pixel = match cfg.recon {
        ReconMode::Mse => {
            let d = tape.sub(pred, truth)?;
            let sq = tape.square(d)?;
            tape.mean(sq)?
        }
        ReconMode::Bce => {
            let p = tape.clamp(pred, cfg.prob_eps, 1.0 - cfg.prob_eps)?;
            let log_p = tape.ln(p)?;
            let q = tape.affine(p, -1.0, 1.0)?;
            let log_q = tape.ln(q)?;
            let not_truth = tape.affine(truth, -1.0, 1.0)?;
            let a = tape.mul(truth, log_p)?;
            let b = tape.mul(not_truth, log_q)?;
            let ll = tape.add(a, b)?;
            let m = tape.mean(ll)?;
            tape.scale(m, -1.0)?
        }
    };
    let gdl = gdl(tape, truth, pred, cfg.gdl_exponent)?;
    let weighted = tape.scale(gdl, cfg.gdl_weight)?;
    let total = tape.add(pixel, weighted)?;
    Ok(Recons { pixel, gdl, total })
}

/// `recons + γ · teacher`; without a teacher term this is `recons`.
pub fn loss_gen<T: Real>(tape: &mut Tape<T>, recons: Var, teacher: Option<Var>, gamma: f64) -> Result<Var> {
    match teacher {
        Some(t) if gamma != 0.0 => {
            let w = tape.scale(t, gamma)?;
            tape.add(recons, w)
        }
        _ => tape.affine(recons, 1.0, 0.0),
    }
}
