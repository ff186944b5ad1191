use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::training::Batch;

const LINE: u8 = 255;

/// 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Grid {
    fn blank(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![LINE; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Binary P5 with maxval 255.
pub fn write_pgm(path: &Path, grid: &Grid) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    bytes.extend_from_slice(&grid.pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Three rows of `T` tiles for video `b` of a batch: input and ground
/// truth, the model's predictions after the context, and the last-frame
/// baseline. Each tile is framed by a 1-pixel line inside a 1-pixel border,
/// so the grid is `T·(W+2)+2` wide. Channels are averaged.
pub fn prediction_grid(batch: &Batch, preds: &[Tensor<f32>], b: usize, context: usize) -> Result<Grid> {
    let frames = batch.frames();
    if context == 0 || context + preds.len() != frames.len() || b >= batch.size() {
        return Err(Error::contract(
            "prediction_grid",
            format!("{} frames, context {context}, {} predictions, video {b}", frames.len(), preds.len()),
        ));
    }
    let &[_, c, h, w] = frames[0].shape() else {
        return Err(Error::contract("prediction_grid", "frames must be [B, C, H, W]"));
    };
    let t_len = frames.len();
    let mut grid = Grid::blank(t_len * (w + 2) + 2, 3 * (h + 2) + 2);
    let plane = c * h * w;
    for row in 0..3 {
        for t in 0..t_len {
            let src = match (row, t >= context) {
                (1, true) => &preds[t - context],
                (2, true) => &frames[context - 1],
                _ => &frames[t],
            };
            let img = &src.data()[b * plane..(b + 1) * plane];
            let (x0, y0) = (2 + t * (w + 2), 2 + row * (h + 2));
            for y in 0..h {
                for x in 0..w {
                    let v: f32 = (0..c).map(|ch| img[(ch * h + y) * w + x]).sum::<f32>() / c as f32;
                    grid.pixels[(y0 + y) * grid.width + x0 + x] = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
                }
            }
        }
    }
    Ok(grid)
}
