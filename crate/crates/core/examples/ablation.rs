//! Trains the full model and the no-guider control on the same data and
//! prints their held-out BCE side by side.

use lmvp::data::{generate_bouncing, DataConfig};
use lmvp::model::ModelConfig;
use lmvp::training::{self, evaluate, TrainConfig, TrainMode, TrainState};

fn main() -> lmvp::Result<()> {
    let data_cfg = DataConfig { videos: 16, frames: 8, height: 16, width: 16, context: 4, sprite_size: 4, ..DataConfig::default() };
    let train = generate_bouncing(&data_cfg)?;
    let test = generate_bouncing(&DataConfig { videos: 8, seed: 5, ..data_cfg.clone() })?;
    let base = TrainConfig {
        model: ModelConfig { base_channels: 8, feature_channels: 16, guider_hidden: 16, ..ModelConfig::default() },
        context: data_cfg.context,
        batch_size: 4,
        pretrain_iters: 10,
        main_iters: 10,
        ..TrainConfig::default()
    };
    for mode in [TrainMode::Full, TrainMode::Ablation] {
        let cfg = TrainConfig { mode, ..base.clone() };
        let mut state = TrainState::init(&cfg)?;
        training::train(&train, &cfg, &mut state, |_, _| Ok(()))?;
        let table = evaluate(&test, &state.params, &cfg)?;
        let per_step: Vec<String> = table.model.steps.iter().map(|r| format!("{:.3}", r.bce)).collect();
        println!("{:>8}: bce {:.4} per step [{}]", mode.name(), table.model.aggregate.bce, per_step.join(", "));
    }
    Ok(())
}
