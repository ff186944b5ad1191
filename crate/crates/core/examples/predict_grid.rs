//! Rolls an untrained model over a test video and writes the
//! truth / prediction / baseline grid as a PGM image.

use lmvp::cli::{prediction_grid, write_pgm};
use lmvp::data::{generate_bouncing, DataConfig};
use lmvp::training::{predict, Batch, TrainConfig, TrainState};

fn main() -> lmvp::Result<()> {
    let cfg = TrainConfig::default();
    let data = generate_bouncing(&DataConfig { videos: 1, ..DataConfig::default() })?;
    let state = TrainState::init(&cfg)?;
    let batch = Batch::gather(&data, &[0])?;
    let preds = predict(&state.params, &cfg, &batch)?;
    let grid = prediction_grid(&batch, &preds, 0, cfg.context)?;
    let path = std::env::temp_dir().join("lmvp-example-grid.pgm");
    write_pgm(&path, &grid)?;
    println!("{} predicted frames, {}x{} grid written to {}", preds.len(), grid.width, grid.height, path.display());
    Ok(())
}
