use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::VideoSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpriteKind {
    Square,
    Cross,
    /// Filled disc-like blob.
    Blob,
}

impl SpriteKind {
    pub fn name(self) -> &'static str {
        match self {
            SpriteKind::Square => "square",
            SpriteKind::Cross => "cross",
            SpriteKind::Blob => "blob",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "square" => Some(SpriteKind::Square),
            "cross" => Some(SpriteKind::Cross),
            "blob" => Some(SpriteKind::Blob),
            _ => None,
        }
    }

    /// Binary `size × size` bitmap, row-major.
    pub fn bitmap(self, size: usize) -> Vec<bool> {
        let mut bits = vec![false; size * size];
        let mid = (size as f64 - 1.0) / 2.0;
        for y in 0..size {
            for x in 0..size {
                bits[y * size + x] = match self {
                    SpriteKind::Square => true,
                    SpriteKind::Cross => {
                        let band = (size / 4).max(1) as f64 / 2.0;
                        (y as f64 - mid).abs() <= band || (x as f64 - mid).abs() <= band
                    }
                    SpriteKind::Blob => {
                        let (dy, dx) = (y as f64 - mid, x as f64 - mid);
                        dy * dy + dx * dx <= (size as f64 / 2.0).powi(2)
                    }
                };
            }
        }
        bits
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Number of conditioning frames.
    pub context: usize,
    pub objects: usize,
    pub sprite: SpriteKind,
    pub sprite_size: usize,
    pub speed_min: u32,
    pub speed_max: u32,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            videos: 256,
            frames: 12,
            height: 32,
            width: 32,
            channels: 1,
            context: 6,
            objects: 2,
            sprite: SpriteKind::Square,
            sprite_size: 8,
            speed_min: 1,
            speed_max: 2,
            seed: 0,
        }
    }
}

impl DataConfig {
    /// Lists every violated field, or `Ok` when the configuration is usable.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.context >= self.frames {
            bad.push(format!("T0={} must be < T={}", self.context, self.frames));
        }
        if self.sprite_size == 0 || self.sprite_size >= self.height.min(self.width) {
            bad.push(format!(
                "sprite_size={} must be in 1..min(H,W)={}",
                self.sprite_size,
                self.height.min(self.width)
            ));
        }
        if self.speed_min > self.speed_max {
            bad.push(format!("speed_min={} exceeds speed_max={}", self.speed_min, self.speed_max));
        }
        if self.channels != 1 && self.channels != 3 {
            bad.push(format!("C={} must be 1 or 3", self.channels));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Independent RNG stream for video `index`.
    pub fn video_rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ splitmix64(index as u64))
    }
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Integer position (top-left corner) and velocity of one sprite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpriteState {
    pub x: i64,
    pub y: i64,
    pub vx: i64,
    pub vy: i64,
}

impl SpriteState {
    /// Advances one frame inside a box of `[0, max_x] × [0, max_y]`,
    /// reflecting the velocity component of any wall that is crossed.
    pub fn step(&mut self, max_x: i64, max_y: i64) {
        (self.x, self.vx) = reflect(self.x + self.vx, self.vx, max_x);
        (self.y, self.vy) = reflect(self.y + self.vy, self.vy, max_y);
    }
}

fn reflect(pos: i64, v: i64, max: i64) -> (i64, i64) {
    if pos < 0 {
        ((-pos).min(max), -v)
    } else if pos > max {
        ((2 * max - pos).max(0), -v)
    } else {
        (pos, v)
    }
}

#[derive(Clone, Debug)]
pub struct Sprite {
    pub size: usize,
    pub bits: Vec<bool>,
    pub state: SpriteState,
}

/// Draws sprites into an `H × W × C` frame (HWC order), compositing by
/// pixelwise max.
pub fn rasterize(sprites: &[Sprite], height: usize, width: usize, channels: usize) -> Vec<f32> {
    let mut frame = vec![0.0f32; height * width * channels];
    for s in sprites {
        for dy in 0..s.size {
            for dx in 0..s.size {
                if !s.bits[dy * s.size + dx] {
                    continue;
                }
                let (y, x) = (s.state.y + dy as i64, s.state.x + dx as i64);
                if y < 0 || x < 0 || y >= height as i64 || x >= width as i64 {
                    continue;
                }
                let base = (y as usize * width + x as usize) * channels;
                for v in &mut frame[base..base + channels] {
                    *v = v.max(1.0);
                }
            }
        }
    }
    frame
}

fn initial_sprites(cfg: &DataConfig, rng: &mut ChaCha8Rng) -> Vec<Sprite> {
    let bits = cfg.sprite.bitmap(cfg.sprite_size);
    let max_x = (cfg.width - cfg.sprite_size) as i64;
    let max_y = (cfg.height - cfg.sprite_size) as i64;
    (0..cfg.objects)
        .map(|_| {
            let x = rng.gen_range(0..=max_x);
            let y = rng.gen_range(0..=max_y);
            let mut speed = || {
                let s = rng.gen_range(cfg.speed_min..=cfg.speed_max) as i64;
                if rng.gen::<bool>() {
                    s
                } else {
                    -s
                }
            };
            let (vx, vy) = (speed(), speed());
            Sprite { size: cfg.sprite_size, bits: bits.clone(), state: SpriteState { x, y, vx, vy } }
        })
        .collect()
}

fn generate_video(cfg: &DataConfig, index: usize) -> Vec<f32> {
    let mut rng = cfg.video_rng(index);
    let mut sprites = initial_sprites(cfg, &mut rng);
    let max_x = (cfg.width - cfg.sprite_size) as i64;
    let max_y = (cfg.height - cfg.sprite_size) as i64;
    let mut out = Vec::with_capacity(cfg.frames * cfg.height * cfg.width * cfg.channels);
    for t in 0..cfg.frames {
        if t > 0 {
            for s in &mut sprites {
                s.state.step(max_x, max_y);
            }
        }
        out.extend(rasterize(&sprites, cfg.height, cfg.width, cfg.channels));
    }
    out
}

/// Generates `cfg.videos` bouncing-sprite videos.
///
/// Every video draws from its own RNG stream, so the result does not depend
/// on how the work is scheduled across threads.
pub fn generate_bouncing(cfg: &DataConfig) -> Result<VideoSet> {
    cfg.validate()?;
    let videos: Vec<Vec<f32>> = (0..cfg.videos).into_par_iter().map(|i| generate_video(cfg, i)).collect();
    let data = videos.concat();
    VideoSet::new(Tensor::new([cfg.videos, cfg.frames, cfg.height, cfg.width, cfg.channels], data)?)
}
