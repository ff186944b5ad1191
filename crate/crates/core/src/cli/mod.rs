//! Command implementations behind the `lmvp` binary.
//!
//! Every command reads a [`RunConfig`], writes its artifacts under an
//! output directory and echoes the resolved configuration there.

mod config;
mod pgm;

pub use config::{parse_config, RunConfig};
pub use pgm::{prediction_grid, write_pgm, Grid};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{generate_bouncing, read_videoset, write_videoset, DataConfig, VideoSet};
use crate::error::{Error, Result};
use crate::training::{
    self, evaluate, load_checkpoint, save_checkpoint, Batch, EvalTable, PhaseReport, TrainMode, TrainState,
};

pub const TRAIN_FILE: &str = "train.lmvpvid";
pub const TEST_FILE: &str = "test.lmvpvid";
pub const CHECKPOINT_FILE: &str = "checkpoint.lmvpckpt";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const ECHO_FILE: &str = "config.resolved";

const TEST_SEED_SALT: u64 = 0x7465_7374_7365_7421;

/// Flags shared by all commands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<TrainMode>,
}

/// Reads `path` (or uses defaults), applies flag overrides and checks the
/// result.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = overrides.seed {
        cfg.set("seed", &seed.to_string()).map_err(Error::Config)?;
    }
    if let Some(mode) = overrides.mode {
        cfg.set("mode", mode.name()).map_err(Error::Config)?;
    }
    Ok(cfg)
}

/// Resolved paths of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub out: PathBuf,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub eval: PathBuf,
}

impl Paths {
    pub fn new(cfg: &RunConfig, out: &Path) -> Self {
        let or = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.join(name));
        Self {
            out: out.to_path_buf(),
            train_data: or(&cfg.train_data, TRAIN_FILE),
            test_data: or(&cfg.test_data, TEST_FILE),
            checkpoint: or(&cfg.checkpoint, CHECKPOINT_FILE),
            loss_log: out.join(LOSS_LOG_FILE),
            eval: out.join(EVAL_FILE),
        }
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<Paths> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let echo = out.join(ECHO_FILE);
    fs::write(&echo, cfg.echo()).map_err(|e| Error::io(&echo, e))?;
    Ok(Paths::new(cfg, out))
}

/// Generator settings for the held-out set: same dynamics, a disjoint seed
/// stream.
pub fn test_data_config(cfg: &RunConfig) -> DataConfig {
    DataConfig {
        videos: cfg.test_videos,
        seed: cfg.data.seed ^ TEST_SEED_SALT,
        ..cfg.data.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub train_shape: Vec<usize>,
    pub test_shape: Vec<usize>,
    pub paths: Paths,
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<GenSummary> {
    let paths = prepare_out(cfg, out)?;
    let train = generate_bouncing(&cfg.data)?;
    let test = generate_bouncing(&test_data_config(cfg))?;
    write_videoset(&paths.train_data, &train)?;
    write_videoset(&paths.test_data, &test)?;
    for (name, set) in [("train", &train), ("test", &test)] {
        let (t, h, w, c) = set.frame_dims();
        println!("{name}: N={} T={t} H={h} W={w} C={c}", set.len());
    }
    Ok(GenSummary {
        train_shape: train.tensor().shape().to_vec(),
        test_shape: test.tensor().shape().to_vec(),
        paths,
    })
}

fn check_dataset(cfg: &RunConfig, set: &VideoSet, what: &str) -> Result<()> {
    let (t, h, w, c) = set.frame_dims();
    let want = (cfg.data.frames, cfg.data.height, cfg.data.width, cfg.train.model.channels);
    if (t, h, w, c) != want {
        return Err(Error::Compatibility(format!(
            "{what} videos are (T,H,W,C)=({t},{h},{w},{c}), configuration expects {want:?}"
        )));
    }
    Ok(())
}

/// Keeps the header and the rows up to `iteration` of an existing loss log.
fn truncated_log(path: &Path, iteration: u64) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from(PhaseReport::CSV_HEADER);
    out.push('\n');
    for row in text.lines().skip(1) {
        let it: u64 = row.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
        if it <= iteration {
            out.push_str(row);
            out.push('\n');
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: u64,
    pub last: Option<PhaseReport>,
    pub paths: Paths,
}

/// Pretraining then the main loop; checkpoints every `eval_interval`
/// iterations and at the end.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let paths = prepare_out(cfg, out)?;
    let tc = &cfg.train;
    let data = read_videoset(&paths.train_data)?;
    check_dataset(cfg, &data, "training")?;
    let resuming = cfg.resume && paths.checkpoint.exists();
    let (mut state, mut log) = if resuming {
        let state = TrainState::restore(&load_checkpoint(&paths.checkpoint)?, tc)?;
        log::info!("resuming from iteration {}", state.iteration);
        let log = if paths.loss_log.exists() {
            truncated_log(&paths.loss_log, state.iteration)?
        } else {
            format!("{}\n", PhaseReport::CSV_HEADER)
        };
        (state, log)
    } else {
        (TrainState::init(tc)?, format!("{}\n", PhaseReport::CSV_HEADER))
    };
    fs::write(&paths.loss_log, &log).map_err(|e| Error::io(&paths.loss_log, e))?;
    let mut file = fs::OpenOptions::new()
        .append(true)
        .open(&paths.loss_log)
        .map_err(|e| Error::io(&paths.loss_log, e))?;
    let mut last = None;
    let total = tc.total_iterations();
    training::train(&data, tc, &mut state, |st, r| {
        let row = format!("{}\n", r.csv_row());
        file.write_all(row.as_bytes()).map_err(|e| Error::io(&paths.loss_log, e))?;
        log.push_str(&row);
        last = Some(*r);
        if st.iteration % tc.eval_interval == 0 || st.iteration == total {
            save_checkpoint(&paths.checkpoint, &st.checkpoint(tc))?;
            log::info!(
                "iter {}/{total}: dis {:.4} recons {:.4} teacher {:.4} guider {:.4}",
                r.iter,
                r.loss_dis,
                r.loss_recons,
                r.loss_teacher,
                r.loss_guider
            );
        }
        Ok(())
    })?;
    if last.is_none() {
        save_checkpoint(&paths.checkpoint, &state.checkpoint(tc))?;
    }
    println!("trained {} iterations, checkpoint {}", state.iteration, paths.checkpoint.display());
    Ok(TrainSummary { iterations: state.iteration, last, paths })
}

fn load_for_inference(cfg: &RunConfig, paths: &Paths) -> Result<(crate::model::ModelParams, VideoSet)> {
    let ckpt = load_checkpoint(&paths.checkpoint)?;
    let params = ckpt.params()?;
    let test = read_videoset(&paths.test_data)?;
    let (t, h, w, c) = test.frame_dims();
    let conv1 = params.get("F.conv1.w").map(|t| t.shape().to_vec()).unwrap_or_default();
    let spatial1 = params.get("G.spatial1.w").map(|t| t.shape().to_vec()).unwrap_or_default();
    let stored_c = spatial1.get(1).copied().unwrap_or(0);
    let stored_clip = conv1.get(1).map(|&k| k / stored_c.max(1)).unwrap_or(0);
    let want_clip = cfg.train.model.clip_len + 1;
    if stored_c != c || stored_clip != want_clip || (h, w) != (cfg.data.height, cfg.data.width) {
        return Err(Error::Compatibility(format!(
            "checkpoint holds C={stored_c}, clip of {stored_clip} frames (trained at H×W={}×{}); \
             dataset has (T,H,W,C)=({t},{h},{w},{c}) with clips of {want_clip} frames",
            cfg.data.height, cfg.data.width
        )));
    }
    params.check_layout(&cfg.train.model)?;
    check_dataset(cfg, &test, "test")?;
    Ok((params, test))
}

/// Per-step metrics of the checkpoint and of the last-frame baseline on the
/// test set, written as CSV.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<EvalTable> {
    let paths = prepare_out(cfg, out)?;
    let (params, test) = load_for_inference(cfg, &paths)?;
    let table = evaluate(&test, &params, &cfg.train)?;
    fs::write(&paths.eval, table.to_csv()).map_err(|e| Error::io(&paths.eval, e))?;
    let (m, b) = (table.model.aggregate, table.baseline.aggregate);
    println!("mode {}: {} steps over {} videos", cfg.train.mode.name(), table.model.steps.len(), test.len());
    println!("model     bce {:.5} mse {:.5} psnr {:.3} ssim {:.4}", m.bce, m.mse, m.psnr, m.ssim);
    println!("baseline  bce {:.5} mse {:.5} psnr {:.3} ssim {:.4}", b.bce, b.mse, b.psnr, b.ssim);
    Ok(table)
}

/// Writes one PGM grid per shown test video into `<out>/predict/`.
pub fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let paths = prepare_out(cfg, out)?;
    let (params, test) = load_for_inference(cfg, &paths)?;
    let n = cfg.n_show.min(test.len());
    let dir = out.join("predict");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = (0..n).collect();
    let batch = Batch::gather(&test, &idx)?;
    let preds = training::predict(&params, &cfg.train, &batch)?;
    let mut written = Vec::with_capacity(n);
    for b in 0..n {
        let grid = prediction_grid(&batch, &preds, b, cfg.train.context)?;
        let path = dir.join(format!("video_{b:03}.pgm"));
        write_pgm(&path, &grid)?;
        written.push(path);
    }
    println!("wrote {n} grids to {}", dir.display());
    Ok(written)
}
