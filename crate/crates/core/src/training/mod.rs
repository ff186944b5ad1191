//! Alternating optimization: discriminator, motion guider and generator,
//! preceded by a pretraining stage. Also checkpointing and held-out
//! evaluation.
//!
//! Each phase runs on a fresh [`Tape`] where only the updated network is
//! bound as parameters, so the other networks cannot move.

mod checkpoint;
mod evaluate;
mod rollout;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CKPT_MAGIC, CKPT_VERSION};
pub use evaluate::{evaluate, predict, EvalTable, EVAL_CSV_HEADER};
pub use rollout::{real_features, rollout, rollout_batch, Rollout, RolloutCache};

use crate::data::{epoch_order, VideoSet};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, TeacherTerm};
use crate::model::{Bound, ModelConfig, ModelParams, ParamGroup};
use crate::numerics::{AdamConfig, AdamSlot, AdamState, Gradients, Tape, Tensor, Var};

const SHUFFLE_SALT: u64 = 0x5348_5546_464C_4521;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Full,
    /// No motion guider: the generator's motion input is the difference of
    /// spatial encodings of the last two frames and the teacher term is off.
    Ablation,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::Ablation => "ablation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(TrainMode::Full),
            "ablation" => Some(TrainMode::Ablation),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    /// `T0`: frames given as context before the first prediction.
    pub context: usize,
    pub adam_discriminator: AdamConfig,
    pub adam_guider: AdamConfig,
    pub adam_generator: AdamConfig,
    pub batch_size: usize,
    pub pretrain_iters: u64,
    pub main_iters: u64,
    /// Checkpoint cadence for the command-line trainer.
    pub eval_interval: u64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            context: 6,
            adam_discriminator: AdamConfig::default(),
            adam_guider: AdamConfig::default(),
            adam_generator: AdamConfig::default(),
            batch_size: 8,
            pretrain_iters: 300,
            main_iters: 1500,
            eval_interval: 100,
            seed: 0,
            mode: TrainMode::Full,
        }
    }
}

fn check_adam(name: &str, a: &AdamConfig, bad: &mut Vec<String>) {
    if a.lr.is_nan() || a.lr <= 0.0 {
        bad.push(format!("{name} lr={} must be > 0", a.lr));
    }
    if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
        bad.push(format!("{name} betas ({}, {}) must lie in [0, 1)", a.beta1, a.beta2));
    }
    if a.eps.is_nan() || a.eps <= 0.0 {
        bad.push(format!("{name} eps={} must be > 0", a.eps));
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let mut bad = Vec::new();
        if self.context < self.model.clip_len + 1 {
            bad.push(format!("T0={} must be >= c+1={}", self.context, self.model.clip_len + 1));
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".into());
        }
        if self.eval_interval == 0 {
            bad.push("eval_interval must be >= 1".into());
        }
        check_adam("adam_discriminator", &self.adam_discriminator, &mut bad);
        check_adam("adam_guider", &self.adam_guider, &mut bad);
        check_adam("adam_generator", &self.adam_generator, &mut bad);
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Checks that videos of `frames` frames and `channels` channels fit.
    pub fn check_videos(&self, frames: usize, channels: usize) -> Result<()> {
        if self.context >= frames {
            return Err(Error::Config(format!("T0={} leaves nothing to predict in T={frames} frames", self.context)));
        }
        if channels != self.model.channels {
            return Err(Error::Compatibility(format!(
                "videos have C={channels}, model expects C={}",
                self.model.channels
            )));
        }
        Ok(())
    }

    /// Teacher weight actually used; zero in ablation mode.
    pub fn gamma(&self) -> f64 {
        match self.mode {
            TrainMode::Full => self.loss.gamma,
            TrainMode::Ablation => 0.0,
        }
    }

    pub fn total_iterations(&self) -> u64 {
        self.pretrain_iters + self.main_iters
    }

    /// Groups updated by the joint pretraining step.
    fn pretrain_groups(&self) -> &'static [ParamGroup] {
        match self.mode {
            TrainMode::Full => &[ParamGroup::Extractor, ParamGroup::Guider, ParamGroup::Generator],
            TrainMode::Ablation => &[ParamGroup::Generator],
        }
    }

    /// Number of Adam updates a group has received after `iteration`
    /// iterations.
    pub fn adam_steps(&self, group: ParamGroup, iteration: u64) -> u64 {
        let p = iteration.min(self.pretrain_iters);
        let q = iteration - p;
        match (group, self.mode) {
            (ParamGroup::Extractor, TrainMode::Full) => 2 * p + q,
            (ParamGroup::Guider, TrainMode::Ablation) => 0,
            _ => p + q,
        }
    }
}

/// One mini-batch as `T` frames, each `[B, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    frames: Vec<Tensor<f32>>,
}

impl Batch {
    pub fn gather(set: &VideoSet, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::contract("batch", "empty batch"));
        }
        let (t, h, w, c) = set.frame_dims();
        let plane = c * h * w;
        let mut frames = Vec::with_capacity(t);
        for step in 0..t {
            let mut data = Vec::with_capacity(indices.len() * plane);
            for &i in indices {
                if i >= set.len() {
                    return Err(Error::contract("batch", format!("video index {i} out of range {}", set.len())));
                }
                data.extend(set.frame_chw(i, step));
            }
            frames.push(Tensor::from_parts(vec![indices.len(), c, h, w], data));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn size(&self) -> usize {
        self.frames.first().map_or(0, |f| f.shape()[0])
    }

    fn on_tape(&self, tape: &mut Tape<f32>) -> Vec<Var> {
        self.frames.iter().map(|f| tape.constant(f.clone())).collect()
    }
}

/// Videos used at global iteration `iteration`: consecutive slices of a
/// per-epoch permutation, so the schedule depends only on the counter.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let bs = batch_size.clamp(1, n.max(1));
    let per_epoch = n.div_ceil(bs).max(1) as u64;
    let (epoch, k) = (iteration / per_epoch, (iteration % per_epoch) as usize);
    let order = epoch_order(n, seed ^ SHUFFLE_SALT, epoch);
    order[k * bs..((k + 1) * bs).min(n)].to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Net {
    Discriminator,
    Guider,
    Generator,
}

fn net_of(group: ParamGroup) -> Net {
    match group {
        ParamGroup::Extractor | ParamGroup::Classifier => Net::Discriminator,
        ParamGroup::Guider => Net::Guider,
        ParamGroup::Generator => Net::Generator,
    }
}

/// One Adam state per network. Extractor tensors live in the
/// discriminator's state even when pretraining updates them jointly with
/// the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub discriminator: AdamState,
    pub guider: AdamState,
    pub generator: AdamState,
    slots: Vec<(Net, usize)>,
}

impl Optimizers {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let mut counts = [0usize; 3];
        let mut states = [
            AdamState::new(cfg.adam_discriminator, []),
            AdamState::new(cfg.adam_guider, []),
            AdamState::new(cfg.adam_generator, []),
        ];
        let slots = params
            .entries()
            .iter()
            .map(|e| {
                let net = net_of(e.group);
                let k = net as usize;
                states[k].slots.push(AdamSlot::zeros_like(&e.value));
                counts[k] += 1;
                (net, counts[k] - 1)
            })
            .collect();
        let [discriminator, guider, generator] = states;
        Self { discriminator, guider, generator, slots }
    }

    fn state_mut(&mut self, net: Net) -> &mut AdamState {
        match net {
            Net::Discriminator => &mut self.discriminator,
            Net::Guider => &mut self.guider,
            Net::Generator => &mut self.generator,
        }
    }

    /// Moments of parameter `index` (in [`ModelParams`] order).
    pub fn slot(&self, index: usize) -> &AdamSlot {
        let (net, k) = self.slots[index];
        match net {
            Net::Discriminator => &self.discriminator.slots[k],
            Net::Guider => &self.guider.slots[k],
            Net::Generator => &self.generator.slots[k],
        }
    }

    pub fn slot_mut(&mut self, index: usize) -> &mut AdamSlot {
        let (net, k) = self.slots[index];
        &mut self.state_mut(net).slots[k]
    }

    fn apply(&mut self, params: &mut ModelParams, model: &Bound, indices: &[usize], grads: &Gradients) -> Result<()> {
        for &i in indices {
            let g = grads
                .get(model.var(i))
                .ok_or_else(|| Error::contract("optimizer", format!("no gradient for parameter {i}")))?;
            let (net, k) = self.slots[i];
            self.state_mut(net).update(k, params.value_mut(i), g)?;
        }
        Ok(())
    }
}

/// Parameters, optimizer moments and the number of finished iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optim: Optimizers,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(params: ModelParams, cfg: &TrainConfig) -> Self {
        let optim = Optimizers::new(&params, cfg);
        Self { params, optim, iteration: 0 }
    }

    /// Fresh parameters drawn from `cfg.seed`.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new(ModelParams::init(&cfg.model, cfg.seed)?, cfg))
    }

    pub fn in_pretrain(&self, cfg: &TrainConfig) -> bool {
        self.iteration < cfg.pretrain_iters
    }

    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let tensors = self
            .params
            .entries()
            .iter()
            .map(|e| NamedTensor { name: e.name.clone(), value: e.value.clone() })
            .collect();
        let mut moments = Vec::with_capacity(2 * self.params.len());
        for (i, e) in self.params.entries().iter().enumerate() {
            let s = self.optim.slot(i);
            moments.push(NamedTensor { name: format!("{}.m", e.name), value: s.m.clone() });
            moments.push(NamedTensor { name: format!("{}.v", e.name), value: s.v.clone() });
        }
        Checkpoint { tensors, moments, iteration: self.iteration, seed: cfg.seed }
    }

    /// Rebuilds a state from a checkpoint; Adam step counters follow from
    /// the iteration counter and the schedule in `cfg`.
    pub fn restore(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let params = checkpoint::params_from(ckpt)?;
        params.check_layout(&cfg.model)?;
        if ckpt.seed != cfg.seed {
            return Err(Error::Compatibility(format!(
                "checkpoint was trained with seed {}, configuration has {}",
                ckpt.seed, cfg.seed
            )));
        }
        if ckpt.iteration > cfg.total_iterations() {
            return Err(Error::Compatibility(format!(
                "checkpoint is at iteration {}, beyond the configured {}",
                ckpt.iteration,
                cfg.total_iterations()
            )));
        }
        let mut state = Self::new(params, cfg);
        state.iteration = ckpt.iteration;
        if ckpt.moments.len() != 2 * state.params.len() {
            return Err(Error::Compatibility(format!(
                "{} moment tensors for {} parameters",
                ckpt.moments.len(),
                state.params.len()
            )));
        }
        for i in 0..state.params.len() {
            let entry = &state.params.entries()[i];
            let (name, group) = (entry.name.clone(), entry.group);
            let (m, v) = (&ckpt.moments[2 * i], &ckpt.moments[2 * i + 1]);
            if m.name != format!("{name}.m") || v.name != format!("{name}.v") {
                return Err(Error::Compatibility(format!("moments {} / {} do not belong to {name}", m.name, v.name)));
            }
            let slot = state.optim.slot_mut(i);
            if m.value.shape() != slot.m.shape() || v.value.shape() != slot.v.shape() {
                return Err(Error::Compatibility(format!("moment shapes of {name} differ from the parameter")));
            }
            slot.m = m.value.clone();
            slot.v = v.value.clone();
            slot.step = cfg.adam_steps(group, ckpt.iteration);
        }
        Ok(state)
    }
}

/// Loss values of one iteration. Terms a phase does not compute are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseReport {
    pub iter: u64,
    pub loss_dis: f64,
    pub loss_recons: f64,
    pub loss_teacher: f64,
    pub loss_gen: f64,
    pub loss_guider: f64,
}

impl PhaseReport {
    pub const CSV_HEADER: &'static str = "iter,loss_dis,loss_recons,loss_teacher,loss_gen,loss_guider";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.loss_dis, self.loss_recons, self.loss_teacher, self.loss_gen, self.loss_guider
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    PretrainDiscriminator,
    PretrainJoint,
    Discriminator,
    Guider,
    Generator,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainDiscriminator => "pretrain/discriminator",
            Phase::PretrainJoint => "pretrain/joint",
            Phase::Discriminator => "discriminator",
            Phase::Guider => "guider",
            Phase::Generator => "generator",
        }
    }
}

fn numerical(phase: Phase, iter: u64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Numerical { phase: phase.name(), iter, source: Box::new(e) },
        other => other,
    }
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).item() as f64
}

fn fake_frames(params: &ModelParams, cfg: &TrainConfig, batch: &Batch) -> Result<Vec<Tensor<f32>>> {
    let mut tape = Tape::new();
    let model = params.bind(&cfg.model, &mut tape, &[])?;
    let real = batch.on_tape(&mut tape);
    let ro = rollout(&mut tape, &model, &real, cfg.context, cfg.mode, true)?;
    Ok(ro.frames.iter().map(|&v| tape.value(v).clone()).collect())
}

fn discriminator_step(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<f64> {
    let fakes = fake_frames(&state.params, cfg, batch)?;
    let mut tape = Tape::new();
    let model = state.params.bind(&cfg.model, &mut tape, &ParamGroup::DISCRIMINATOR)?;
    let real = batch.on_tape(&mut tape);
    let fake: Vec<Var> = fakes.into_iter().map(|f| tape.constant(f)).collect();
    let c = cfg.model.clip_len;
    let (mut pr, mut pf) = (Vec::new(), Vec::new());
    for t in cfg.context..real.len() {
        let clip = model.clip(&mut tape, &real[t - c..=t])?;
        pr.push(model.discriminate(&mut tape, clip)?);
        let clip = model.clip(&mut tape, &fake[t - c..=t])?;
        pf.push(model.discriminate(&mut tape, clip)?);
    }
    let pr = tape.concat(&pr, 0)?;
    let pf = tape.concat(&pf, 0)?;
    let loss = losses::loss_dis(&mut tape, pr, pf, cfg.loss.prob_eps)?;
    let idx = state.params.indices_in(&ParamGroup::DISCRIMINATOR);
    let grads = tape.backward(loss, &model.vars_at(&idx))?;
    state.optim.apply(&mut state.params, &model, &idx, &grads)?;
    Ok(scalar(&tape, loss))
}

/// Phase 1: one Adam step on the extractor and classifier from the
/// discriminator loss over real and generated clips.
pub fn phase_discriminator(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<f64> {
    discriminator_step(state, cfg, batch).map_err(numerical(Phase::Discriminator, state.iteration + 1))
}

/// Phase 2: one Adam step on the guider, regressing feature differences of
/// real clips.
pub fn phase_guider(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<f64> {
    let run = |state: &mut TrainState| -> Result<f64> {
        let feats = {
            let mut scratch = Tape::new();
            let model = state.params.bind(&cfg.model, &mut scratch, &[])?;
            let real = batch.on_tape(&mut scratch);
            let f = real_features(&mut scratch, &model, &real)?;
            f.iter().map(|&v| scratch.value(v).clone()).collect::<Vec<_>>()
        };
        let mut tape = Tape::new();
        let model = state.params.bind(&cfg.model, &mut tape, &[ParamGroup::Guider])?;
        let f: Vec<Var> = feats.into_iter().map(|t| tape.constant(t)).collect();
        let targets = losses::motion_targets(&mut tape, &f)?;
        let dims = batch.frames[0].shape();
        let mut hidden = model.initial_hidden(&mut tape, batch.size(), dims[2], dims[3]);
        let mut preds = Vec::with_capacity(targets.len());
        for &ft in &f[..targets.len()] {
            let (m, h2) = model.guide_motion(&mut tape, ft, hidden)?;
            hidden = h2;
            preds.push(m);
        }
        let loss = losses::loss_guider_learner(&mut tape, &preds, &targets)?;
        let idx = state.params.indices_in(&[ParamGroup::Guider]);
        let grads = tape.backward(loss, &model.vars_at(&idx))?;
        state.optim.apply(&mut state.params, &model, &idx, &grads)?;
        Ok(scalar(&tape, loss))
    };
    let iter = state.iteration + 1;
    run(state).map_err(numerical(Phase::Guider, iter))
}

/// Generator losses of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenLosses {
    pub recons: f64,
    pub teacher: f64,
    pub total: f64,
}

fn recons_over_predictions(
    tape: &mut Tape<f32>,
    cfg: &TrainConfig,
    real: &[Var],
    ro: &Rollout,
) -> Result<losses::Recons> {
    let truth = tape.concat(&real[cfg.context..], 0)?;
    let pred = tape.concat(&ro.predictions, 0)?;
    losses::loss_recons(tape, truth, pred, &cfg.loss)
}

/// Phase 3: one Adam step on the generator from reconstruction plus the
/// teacher term, with leaked features and guidance detached.
pub fn phase_generator(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<GenLosses> {
    let run = |state: &mut TrainState| -> Result<GenLosses> {
        let mut tape = Tape::new();
        let model = state.params.bind(&cfg.model, &mut tape, &[ParamGroup::Generator])?;
        let real = batch.on_tape(&mut tape);
        let ro = rollout(&mut tape, &model, &real, cfg.context, cfg.mode, true)?;
        let recons = recons_over_predictions(&mut tape, cfg, &real, &ro)?;
        let gamma = cfg.gamma();
        let teacher = if gamma > 0.0 {
            let c = cfg.model.clip_len;
            let mut terms = Vec::with_capacity(ro.predictions.len());
            for t in cfg.context - 1..real.len() - 1 {
                let clip = model.clip(&mut tape, &ro.frames[t + 1 - c..=t + 1])?;
                let extended = model.extract_features(&mut tape, clip)?;
                terms.push(TeacherTerm { extended, features: ro.features[t - c], guidance: ro.guidance[t - c] });
            }
            Some(losses::loss_guider_teacher(&mut tape, &terms)?)
        } else {
            None
        };
        let total = losses::loss_gen(&mut tape, recons.total, teacher, gamma)?;
        let idx = state.params.indices_in(&[ParamGroup::Generator]);
        let grads = tape.backward(total, &model.vars_at(&idx))?;
        state.optim.apply(&mut state.params, &model, &idx, &grads)?;
        Ok(GenLosses {
            recons: scalar(&tape, recons.total),
            teacher: teacher.map_or(0.0, |t| scalar(&tape, t)),
            total: scalar(&tape, total),
        })
    };
    let iter = state.iteration + 1;
    run(state).map_err(numerical(Phase::Generator, iter))
}

/// Joint pretraining step on the reconstruction loss alone. Guidance is
/// not detached, so the extractor and guider learn through the generator.
pub fn phase_pretrain_joint(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<f64> {
    let run = |state: &mut TrainState| -> Result<f64> {
        let groups = cfg.pretrain_groups();
        let mut tape = Tape::new();
        let model = state.params.bind(&cfg.model, &mut tape, groups)?;
        let real = batch.on_tape(&mut tape);
        let ro = rollout(&mut tape, &model, &real, cfg.context, cfg.mode, false)?;
        let recons = recons_over_predictions(&mut tape, cfg, &real, &ro)?;
        let idx = state.params.indices_in(groups);
        let grads = tape.backward(recons.total, &model.vars_at(&idx))?;
        state.optim.apply(&mut state.params, &model, &idx, &grads)?;
        Ok(scalar(&tape, recons.total))
    };
    let iter = state.iteration + 1;
    run(state).map_err(numerical(Phase::PretrainJoint, iter))
}

/// One pretraining iteration: discriminator step, then the joint
/// reconstruction step.
pub fn pretrain_iteration(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<PhaseReport> {
    let iter = state.iteration + 1;
    let loss_dis = discriminator_step(state, cfg, batch).map_err(numerical(Phase::PretrainDiscriminator, iter))?;
    let recons = phase_pretrain_joint(state, cfg, batch)?;
    state.iteration = iter;
    Ok(PhaseReport { iter, loss_dis, loss_recons: recons, loss_teacher: 0.0, loss_gen: recons, loss_guider: 0.0 })
}

/// One main iteration: discriminator, guider, generator. The guider phase is
/// skipped in ablation mode.
pub fn train_iteration(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<PhaseReport> {
    let iter = state.iteration + 1;
    let loss_dis = phase_discriminator(state, cfg, batch)?;
    let loss_guider = match cfg.mode {
        TrainMode::Full => phase_guider(state, cfg, batch)?,
        TrainMode::Ablation => 0.0,
    };
    let g = phase_generator(state, cfg, batch)?;
    state.iteration = iter;
    Ok(PhaseReport { iter, loss_dis, loss_recons: g.recons, loss_teacher: g.teacher, loss_gen: g.total, loss_guider })
}

/// Runs the next scheduled iteration (pretraining or main) on its batch.
pub fn step(state: &mut TrainState, cfg: &TrainConfig, data: &VideoSet) -> Result<PhaseReport> {
    let idx = batch_indices(data.len(), cfg.batch_size, cfg.seed, state.iteration);
    let batch = Batch::gather(data, &idx)?;
    if state.in_pretrain(cfg) {
        pretrain_iteration(state, cfg, &batch)
    } else {
        train_iteration(state, cfg, &batch)
    }
}

fn check_data(cfg: &TrainConfig, data: &VideoSet) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("train", "empty training set"));
    }
    let (t, _, _, c) = data.frame_dims();
    cfg.check_videos(t, c)
}

/// Runs the remaining pretraining iterations.
pub fn pretrain(data: &VideoSet, cfg: &TrainConfig, state: &mut TrainState, mut log: impl FnMut(&PhaseReport)) -> Result<()> {
    check_data(cfg, data)?;
    while state.in_pretrain(cfg) {
        let r = step(state, cfg, data)?;
        log(&r);
    }
    Ok(())
}

/// Runs every remaining iteration up to `cfg.total_iterations()`, calling
/// `on_iter` after each one.
pub fn train(
    data: &VideoSet,
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_iter: impl FnMut(&TrainState, &PhaseReport) -> Result<()>,
) -> Result<()> {
    check_data(cfg, data)?;
    while state.iteration < cfg.total_iterations() {
        let r = step(state, cfg, data)?;
        log::debug!("{}", r.csv_row());
        on_iter(state, &r)?;
    }
    Ok(())
}

impl Bound {
    /// Tape handles of the parameters at `indices`.
    pub fn vars_at(&self, indices: &[usize]) -> Vec<Var> {
        indices.iter().map(|&i| self.var(i)).collect()
    }
}
