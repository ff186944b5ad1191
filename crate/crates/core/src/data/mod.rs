//! Synthetic bouncing-sprite videos, the `LMVPVID1` container and
//! mini-batch iteration.

mod batch;
mod container;
mod generate;

pub use batch::{epoch_order, BatchIter};
pub use container::{read_videoset, write_videoset, HEADER_LEN, MAGIC as VIDEO_MAGIC};
pub use generate::{generate_bouncing, rasterize, DataConfig, Sprite, SpriteKind, SpriteState};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A batch of videos shaped `(N, T, H, W, C)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSet {
    tensor: Tensor<f32>,
}

impl VideoSet {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.rank() != 5 {
            return Err(Error::contract("video_set", format!("expected (N,T,H,W,C), got {:?}", tensor.shape())));
        }
        if tensor.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("video_set", "values must lie in [0, 1]"));
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(T, H, W, C)`.
    pub fn frame_dims(&self) -> (usize, usize, usize, usize) {
        let s = self.tensor.shape();
        (s[1], s[2], s[3], s[4])
    }

    pub fn video(&self, i: usize) -> Tensor<f32> {
        self.tensor.index_outer(i)
    }

    /// Frame `t` of video `i` in channel-first `[C, H, W]` layout.
    pub fn frame_chw(&self, i: usize, t: usize) -> Vec<f32> {
        let (tn, h, w, c) = self.frame_dims();
        let frame = h * w * c;
        let base = (i * tn + t) * frame;
        let src = &self.tensor.data()[base..base + frame];
        let mut out = vec![0.0; frame];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = src[(y * w + x) * c + ch];
                }
            }
        }
        out
    }

    /// Subset of videos in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<VideoSet> {
        let (t, h, w, c) = self.frame_dims();
        let per = t * h * w * c;
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract("select", format!("video index {i} out of range {}", self.len())));
            }
            data.extend_from_slice(&self.tensor.data()[i * per..(i + 1) * per]);
        }
        Ok(VideoSet { tensor: Tensor::new([indices.len(), t, h, w, c], data)? })
    }
}
