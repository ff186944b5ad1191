//! Trains a reduced model for a few dozen iterations and compares it with the
//! copy-last-frame baseline on held-out videos.
//!
//! `cargo run --release --example train_small [iterations]`

use lmvp::data::{generate_bouncing, DataConfig};
use lmvp::model::ModelConfig;
use lmvp::training::{self, evaluate, TrainConfig, TrainState};

fn main() -> lmvp::Result<()> {
    let iters: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let data_cfg = DataConfig { videos: 32, frames: 8, height: 16, width: 16, context: 4, sprite_size: 4, ..DataConfig::default() };
    let train = generate_bouncing(&data_cfg)?;
    let test = generate_bouncing(&DataConfig { videos: 8, seed: 99, ..data_cfg.clone() })?;

    let cfg = TrainConfig {
        model: ModelConfig { base_channels: 8, feature_channels: 16, guider_hidden: 16, ..ModelConfig::default() },
        context: data_cfg.context,
        batch_size: 4,
        pretrain_iters: iters / 2,
        main_iters: iters - iters / 2,
        ..TrainConfig::default()
    };
    let mut state = TrainState::init(&cfg)?;
    println!("{}", training::PhaseReport::CSV_HEADER);
    training::train(&train, &cfg, &mut state, |_, r| {
        if r.iter % 5 == 0 {
            println!("{}", r.csv_row());
        }
        Ok(())
    })?;

    let table = evaluate(&test, &state.params, &cfg)?;
    print!("{}", table.to_csv());
    println!("aggregate bce: model {:.4}, baseline {:.4}", table.model.aggregate.bce, table.baseline.aggregate.bce);
    Ok(())
}
