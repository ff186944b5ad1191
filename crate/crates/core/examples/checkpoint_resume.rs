//! Interrupts training, saves a checkpoint, restores it and finishes; the
//! result matches an uninterrupted run bit for bit.

use lmvp::data::{generate_bouncing, DataConfig};
use lmvp::model::ModelConfig;
use lmvp::training::{self, load_checkpoint, save_checkpoint, step, TrainConfig, TrainState};

fn main() -> lmvp::Result<()> {
    let data = generate_bouncing(&DataConfig { videos: 6, frames: 7, height: 16, width: 16, context: 4, sprite_size: 4, ..DataConfig::default() })?;
    let cfg = TrainConfig {
        model: ModelConfig { clip_len: 2, filter_size: 3, base_channels: 4, feature_channels: 6, guider_hidden: 5, ..ModelConfig::default() },
        context: 4,
        batch_size: 2,
        pretrain_iters: 2,
        main_iters: 4,
        ..TrainConfig::default()
    };

    let mut straight = TrainState::init(&cfg)?;
    training::train(&data, &cfg, &mut straight, |_, _| Ok(()))?;

    let mut first = TrainState::init(&cfg)?;
    for _ in 0..3 {
        step(&mut first, &cfg, &data)?;
    }
    let path = std::env::temp_dir().join("lmvp-example.lmvpckpt");
    save_checkpoint(&path, &first.checkpoint(&cfg))?;
    let mut resumed = TrainState::restore(&load_checkpoint(&path)?, &cfg)?;
    println!("resumed at iteration {} from {}", resumed.iteration, path.display());
    training::train(&data, &cfg, &mut resumed, |_, r| {
        println!("{}", r.csv_row());
        Ok(())
    })?;

    println!("identical to uninterrupted run: {}", resumed == straight);
    Ok(())
}
