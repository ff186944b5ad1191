use rayon::prelude::*;

use crate::data::VideoSet;
use crate::error::{Error, Result};
use crate::metrics::{FrameDims, MetricRecord, MetricRow};
use crate::model::ModelParams;
use crate::numerics::{Tape, Tensor};

use super::{rollout, Batch, TrainConfig};

pub const EVAL_CSV_HEADER: &str = "step,bce,mse,psnr,ssim,baseline_bce,baseline_mse,baseline_psnr,baseline_ssim";

/// Per-step metrics of the model and of the last-frame-copy baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub model: MetricRecord,
    pub baseline: MetricRecord,
}

impl EvalTable {
    /// Header plus one row per prediction step (1-based).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(EVAL_CSV_HEADER);
        s.push('\n');
        for (k, (m, b)) in self.model.steps.iter().zip(&self.baseline.steps).enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                k + 1,
                m.bce,
                m.mse,
                m.psnr,
                m.ssim,
                b.bce,
                b.mse,
                b.psnr,
                b.ssim
            ));
        }
        s
    }
}

/// Predicted frames `T0 … T−1` for a batch, each `[B, C, H, W]`.
pub fn predict(params: &ModelParams, cfg: &TrainConfig, batch: &Batch) -> Result<Vec<Tensor<f32>>> {
    let mut tape = Tape::new();
    let model = params.bind(&cfg.model, &mut tape, &[])?;
    let real = batch.on_tape(&mut tape);
    let ro = rollout(&mut tape, &model, &real, cfg.context, cfg.mode, true)?;
    Ok(ro.predictions.iter().map(|&v| tape.value(v).clone()).collect())
}

type VideoRows = (Vec<MetricRow>, Vec<MetricRow>);

fn chunk_rows(test: &VideoSet, params: &ModelParams, cfg: &TrainConfig, indices: &[usize]) -> Result<Vec<VideoRows>> {
    let batch = Batch::gather(test, indices)?;
    let preds = predict(params, cfg, &batch)?;
    let (_, h, w, c) = test.frame_dims();
    let dims = FrameDims { channels: c, height: h, width: w };
    let n = dims.numel();
    let last = &batch.frames()[cfg.context - 1];
    (0..indices.len())
        .map(|b| {
            let mut model = Vec::with_capacity(preds.len());
            let mut base = Vec::with_capacity(preds.len());
            for (k, p) in preds.iter().enumerate() {
                let truth = &batch.frames()[cfg.context + k].data()[b * n..(b + 1) * n];
                model.push(MetricRow::of_frame(truth, &p.data()[b * n..(b + 1) * n], dims)?);
                base.push(MetricRow::of_frame(truth, &last.data()[b * n..(b + 1) * n], dims)?);
            }
            Ok((model, base))
        })
        .collect()
}

/// Metrics per prediction step, averaged over the videos of `test`.
///
/// Videos are processed in parallel batches; the averages are summed in
/// video order, so the result does not depend on the thread count.
pub fn evaluate(test: &VideoSet, params: &ModelParams, cfg: &TrainConfig) -> Result<EvalTable> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::contract("evaluate", "empty test set"));
    }
    let (t, _, _, c) = test.frame_dims();
    cfg.check_videos(t, c)?;
    params.check_layout(&cfg.model)?;
    let all: Vec<usize> = (0..test.len()).collect();
    let per_video: Vec<VideoRows> = all
        .par_chunks(cfg.batch_size.max(1))
        .map(|idx| chunk_rows(test, params, cfg, idx))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let steps = t - cfg.context;
    let mut model = Vec::with_capacity(steps);
    let mut base = Vec::with_capacity(steps);
    for k in 0..steps {
        let m: Vec<MetricRow> = per_video.iter().map(|v| v.0[k]).collect();
        let b: Vec<MetricRow> = per_video.iter().map(|v| v.1[k]).collect();
        model.push(MetricRow::mean(&m)?);
        base.push(MetricRow::mean(&b)?);
    }
    Ok(EvalTable { model: MetricRecord::from_steps(model)?, baseline: MetricRecord::from_steps(base)? })
}
