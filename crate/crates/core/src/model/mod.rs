//! The three networks: the feature-leaking discriminator `D = head ∘ F`,
//! the recurrent motion guider `M`, and the dynamic-filter generator `G`.
//!
//! Parameters live in [`ModelParams`]; a forward pass first binds them onto a
//! [`Tape`] with [`ModelParams::bind`], choosing which groups are trainable on
//! that tape. Every forward op works on batched `[B, C, H, W]` tensors.

mod params;

pub use params::{ModelParams, ParamEntry, ParamGroup};

use crate::error::{Error, Result};
use crate::numerics::{conv_gru_step, Activation, ConvGruParams, Padding, Tape, Var};

const LEAK: f64 = 0.2;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Image channels `C`.
    pub channels: usize,
    /// Clip length `c`; clips hold `c + 1` frames.
    pub clip_len: usize,
    /// Side `K` of the per-pixel filters.
    pub filter_size: usize,
    pub base_channels: usize,
    /// Channels `F_ch` of every feature map (leaked features, motion, encoders).
    pub feature_channels: usize,
    pub guider_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { channels: 1, clip_len: 3, filter_size: 5, base_channels: 32, feature_channels: 64, guider_hidden: 64 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.filter_size.is_multiple_of(2) {
            bad.push(format!("filter_size={} must be odd", self.filter_size));
        }
        if self.channels == 0 || self.base_channels == 0 || self.feature_channels == 0 || self.guider_hidden == 0 {
            bad.push("channel counts must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Shape `(F_ch, H/4, W/4)` of every feature map for `H × W` frames.
    pub fn feature_shape(&self, height: usize, width: usize) -> [usize; 3] {
        [self.feature_channels, height.div_ceil(4), width.div_ceil(4)]
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvVars {
    w: Var,
    b: Var,
}

/// Parameters of one model bound onto one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    cfg: ModelConfig,
    extractor: [ConvVars; 3],
    head_conv: ConvVars,
    head_fc: ConvVars,
    gru: ConvGruParams,
    guider_out: ConvVars,
    spatial: [ConvVars; 3],
    motion: ConvVars,
    decoder: [ConvVars; 2],
    filter: ConvVars,
}

impl ModelParams {
    /// Puts every parameter on `tape`: groups in `trainable` as parameter
    /// leaves, the rest as constants.
    pub fn bind(&self, cfg: &ModelConfig, tape: &mut Tape<f32>, trainable: &[ParamGroup]) -> Result<Bound> {
        let vars: Vec<Var> = self
            .entries()
            .iter()
            .map(|e| {
                if trainable.contains(&e.group) {
                    tape.param(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        let look = |name: &str| -> Result<Var> {
            self.index_of(name)
                .map(|i| vars[i])
                .ok_or_else(|| Error::contract("bind", format!("missing parameter {name}")))
        };
        let conv = |name: &str| -> Result<ConvVars> { Ok(ConvVars { w: look(&format!("{name}.w"))?, b: look(&format!("{name}.b"))? }) };
        let gru = ConvGruParams {
            update_w: look("M.gru.update.w")?,
            update_b: look("M.gru.update.b")?,
            reset_w: look("M.gru.reset.w")?,
            reset_b: look("M.gru.reset.b")?,
            cand_w: look("M.gru.cand.w")?,
            cand_b: look("M.gru.cand.b")?,
        };
        Ok(Bound {
            extractor: [conv("F.conv1")?, conv("F.conv2")?, conv("F.conv3")?],
            head_conv: conv("D.conv")?,
            head_fc: conv("D.fc")?,
            gru,
            guider_out: conv("M.out")?,
            spatial: [conv("G.spatial1")?, conv("G.spatial2")?, conv("G.spatial3")?],
            motion: conv("G.motion")?,
            decoder: [conv("G.dec1")?, conv("G.dec2")?],
            filter: conv("G.filter")?,
            cfg: cfg.clone(),
            vars,
        })
    }
}

fn conv_block(tape: &mut Tape<f32>, x: Var, layer: ConvVars, stride: usize, act: Option<Activation>) -> Result<Var> {
    let y = tape.conv2d(x, layer.w, stride, Padding::SameZero)?;
    let y = tape.add_bias(y, layer.b)?;
    match act {
        Some(kind) => tape.activation(y, kind),
        None => Ok(y),
    }
}

impl Bound {
    /// Tape handle of parameter `index` (in [`ModelParams`] order).
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Stacks `c + 1` frames (each `[B, C, H, W]`) on the channel axis.
    pub fn clip(&self, tape: &mut Tape<f32>, frames: &[Var]) -> Result<Var> {
        if frames.len() != self.cfg.clip_len + 1 {
            return Err(Error::contract(
                "clip",
                format!("clip needs {} frames, got {}", self.cfg.clip_len + 1, frames.len()),
            ));
        }
        tape.concat_channels(frames)
    }

    /// Leaked feature extractor `F`: `[B, (c+1)·C, H, W] -> [B, F_ch, H/4, W/4]`.
    pub fn extract_features(&self, tape: &mut Tape<f32>, clip: Var) -> Result<Var> {
        let want = (self.cfg.clip_len + 1) * self.cfg.channels;
        let got = tape.shape(clip).get(1).copied();
        if tape.shape(clip).len() != 4 || got != Some(want) {
            return Err(Error::contract(
                "extract_features",
                format!("clip {:?} must have {want} stacked channels ({} frames)", tape.shape(clip), self.cfg.clip_len + 1),
            ));
        }
        let lrelu = Some(Activation::LeakyRelu(LEAK));
        let x = conv_block(tape, clip, self.extractor[0], 1, lrelu)?;
        let x = conv_block(tape, x, self.extractor[1], 2, lrelu)?;
        conv_block(tape, x, self.extractor[2], 2, lrelu)
    }

    /// Classifier head on leaked features; returns `[B]` probabilities.
    pub fn discriminate_features(&self, tape: &mut Tape<f32>, features: Var) -> Result<Var> {
        let x = conv_block(tape, features, self.head_conv, 2, Some(Activation::LeakyRelu(LEAK)))?;
        let pooled = tape.global_avg_pool(x)?;
        let logit = tape.dense(pooled, self.head_fc.w, self.head_fc.b)?;
        let p = tape.sigmoid(logit)?;
        let b = tape.shape(p)[0];
        tape.reshape(p, [b])
    }

    /// `D(clip) = head(F(clip))`.
    pub fn discriminate(&self, tape: &mut Tape<f32>, clip: Var) -> Result<Var> {
        let f = self.extract_features(tape, clip)?;
        self.discriminate_features(tape, f)
    }

    /// Zero initial guider state for a batch of `batch` videos at `H × W`.
    pub fn initial_hidden(&self, tape: &mut Tape<f32>, batch: usize, height: usize, width: usize) -> Var {
        let [_, fh, fw] = self.cfg.feature_shape(height, width);
        tape.zeros([batch, self.cfg.guider_hidden, fh, fw])
    }

    /// One motion-guider step: returns the predicted motion feature and the
    /// next hidden state.
    pub fn guide_motion(&self, tape: &mut Tape<f32>, features: Var, hidden: Var) -> Result<(Var, Var)> {
        let fs = tape.shape(features).to_vec();
        let hs = tape.shape(hidden).to_vec();
        if fs.len() != 4 || hs.len() != 4 || fs[0] != hs[0] || fs[2..] != hs[2..] || hs[1] != self.cfg.guider_hidden {
            return Err(Error::contract("guide_motion", format!("features {fs:?} incompatible with hidden {hs:?}")));
        }
        let h = conv_gru_step(tape, hidden, features, &self.gru)?;
        let m = conv_block(tape, h, self.guider_out, 1, None)?;
        Ok((m, h))
    }

    /// Spatial encoder: `[B, C, H, W] -> [B, F_ch, H/4, W/4]`.
    pub fn encode_spatial(&self, tape: &mut Tape<f32>, frame: Var) -> Result<Var> {
        let relu = Some(Activation::Relu);
        let x = conv_block(tape, frame, self.spatial[0], 1, relu)?;
        let x = conv_block(tape, x, self.spatial[1], 2, relu)?;
        conv_block(tape, x, self.spatial[2], 2, relu)
    }

    /// Pre-activation of the motion encoder.
    pub fn encode_motion_linear(&self, tape: &mut Tape<f32>, motion: Var) -> Result<Var> {
        conv_block(tape, motion, self.motion, 1, None)
    }

    /// Motion encoder: one 3×3 conv + ReLU preserving spatial dims.
    pub fn encode_motion(&self, tape: &mut Tape<f32>, motion: Var) -> Result<Var> {
        let pre = self.encode_motion_linear(tape, motion)?;
        tape.relu(pre)
    }

    /// Filter logits before per-pixel normalization: `[B, K², H, W]`.
    pub fn filter_logits(&self, tape: &mut Tape<f32>, spatial: Var, motion: Var) -> Result<Var> {
        let (ss, ms) = (tape.shape(spatial).to_vec(), tape.shape(motion).to_vec());
        if ss != ms {
            return Err(Error::contract("make_filters", format!("spatial {ss:?} and motion {ms:?} features differ")));
        }
        let relu = Some(Activation::Relu);
        let x = tape.concat_channels(&[spatial, motion])?;
        let x = tape.upsample2(x)?;
        let x = conv_block(tape, x, self.decoder[0], 1, relu)?;
        let x = tape.upsample2(x)?;
        let x = conv_block(tape, x, self.decoder[1], 1, relu)?;
        conv_block(tape, x, self.filter, 1, None)
    }

    /// Filter network: per-pixel `K × K` filters, softmax-normalized.
    pub fn make_filters(&self, tape: &mut Tape<f32>, spatial: Var, motion: Var) -> Result<Var> {
        let logits = self.filter_logits(tape, spatial, motion)?;
        tape.softmax_sites(logits)
    }

    /// Applies per-pixel filters to the current frame.
    pub fn apply_dynamic_filter(&self, tape: &mut Tape<f32>, frame: Var, filters: Var) -> Result<Var> {
        let k2 = tape.shape(filters).get(1).copied();
        if k2 != Some(self.cfg.filter_size * self.cfg.filter_size) {
            return Err(Error::contract(
                "apply_dynamic_filter",
                format!("filters {:?} do not hold K²={} weights", tape.shape(filters), self.cfg.filter_size.pow(2)),
            ));
        }
        tape.dynamic_filter(frame, filters)
    }

    /// `G(frame, motion)`: the next frame from the current frame and a motion
    /// feature. The output is a per-pixel convex combination of input pixels.
    pub fn predict_next(&self, tape: &mut Tape<f32>, frame: Var, motion: Var) -> Result<Var> {
        let fs = self.encode_spatial(tape, frame)?;
        let fm = self.encode_motion(tape, motion)?;
        let filters = self.make_filters(tape, fs, fm)?;
        self.apply_dynamic_filter(tape, frame, filters)
    }
}
