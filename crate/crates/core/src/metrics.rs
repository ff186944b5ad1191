//! Evaluation metrics on frames with values in `[0, 1]`.
//!
//! Frames are channel-first `[C, H, W]` slices. Everything is accumulated in
//! `f64`.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP: f64 = 99.0;
pub const BCE_EPS: f64 = 1e-7;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameDims {
    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn check_pair(op: &'static str, truth: &[f32], pred: &[f32]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::contract(op, format!("{} truth values vs {} predicted", truth.len(), pred.len())));
    }
    if truth.is_empty() {
        return Err(Error::contract(op, "empty frame"));
    }
    Ok(())
}

/// Mean per-pixel binary cross-entropy, prediction clamped to `[ε, 1−ε]`.
pub fn bce(truth: &[f32], pred: &[f32]) -> Result<f64> {
    check_pair("bce", truth, pred)?;
    let s: f64 = truth
        .iter()
        .zip(pred)
        .map(|(&x, &p)| {
            let (x, p) = (x as f64, (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS));
            -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / truth.len() as f64)
}

pub fn mse(truth: &[f32], pred: &[f32]) -> Result<f64> {
    check_pair("mse", truth, pred)?;
    let s: f64 = truth.iter().zip(pred).map(|(&x, &p)| (x as f64 - p as f64).powi(2)).sum();
    Ok(s / truth.len() as f64)
}

/// `10 log10(1 / mse)` for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode Gaussian filter of one plane.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 windows, averaged over channels.
pub fn ssim(truth: &[f32], pred: &[f32], dims: FrameDims) -> Result<f64> {
    check_pair("ssim", truth, pred)?;
    let FrameDims { channels, height: h, width: w } = dims;
    if truth.len() != dims.numel() {
        return Err(Error::contract("ssim", format!("{} values for frame {dims:?}", truth.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract("ssim", format!("frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..channels {
        let x: Vec<f64> = truth[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = pred[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, my) = (blur(&x, h, w, &taps), blur(&y, h, w, &taps));
        let (exx, eyy, exy) = (blur(&xx, h, w, &taps), blur(&yy, h, w, &taps), blur(&xy, h, w, &taps));
        let n = mx.len();
        let mut s = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cov = exy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / n as f64;
    }
    Ok(total / channels as f64)
}

/// Metric values for one frame or an average of frames.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub bce: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub fn of_frame(truth: &[f32], pred: &[f32], dims: FrameDims) -> Result<Self> {
        let mse = mse(truth, pred)?;
        Ok(Self { bce: bce(truth, pred)?, mse, psnr: psnr(mse), ssim: ssim(truth, pred, dims)? })
    }

    /// Field-wise mean, summed in slice order.
    pub fn mean(rows: &[MetricRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("metric_mean", "no rows"));
        }
        let mut acc = MetricRow::default();
        for r in rows {
            acc.bce += r.bce;
            acc.mse += r.mse;
            acc.psnr += r.psnr;
            acc.ssim += r.ssim;
        }
        let n = rows.len() as f64;
        Ok(MetricRow { bce: acc.bce / n, mse: acc.mse / n, psnr: acc.psnr / n, ssim: acc.ssim / n })
    }
}

/// Per-frame metrics and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub steps: Vec<MetricRow>,
    pub aggregate: MetricRow,
}

impl MetricRecord {
    pub fn from_steps(steps: Vec<MetricRow>) -> Result<Self> {
        let aggregate = MetricRow::mean(&steps)?;
        Ok(Self { steps, aggregate })
    }
}

/// Compares two frame sequences shaped `[T, C, H, W]`.
pub fn evaluate_metrics(truth: &Tensor<f32>, pred: &Tensor<f32>) -> Result<MetricRecord> {
    if truth.shape() != pred.shape() {
        return Err(Error::contract(
            "evaluate_metrics",
            format!("truth {:?} vs prediction {:?}", truth.shape(), pred.shape()),
        ));
    }
    let &[t, c, h, w] = truth.shape() else {
        return Err(Error::contract("evaluate_metrics", format!("expected [T, C, H, W], got {:?}", truth.shape())));
    };
    let dims = FrameDims { channels: c, height: h, width: w };
    let n = dims.numel();
    let steps = (0..t)
        .map(|i| MetricRow::of_frame(&truth.data()[i * n..(i + 1) * n], &pred.data()[i * n..(i + 1) * n], dims))
        .collect::<Result<Vec<_>>>()?;
    MetricRecord::from_steps(steps)
}
