//! Acceptance suite. Runs without the libtest harness and prints one
//! pass/fail line per criterion; exits non-zero if any criterion fails.
//!
//! `LMVP_ACCEPTANCE_ONLY=1,2,3` restricts the run to the listed criteria.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use lmvp::cli::{self, RunConfig, CHECKPOINT_FILE, EVAL_FILE, LOSS_LOG_FILE, TEST_FILE, TRAIN_FILE};
use lmvp::data::{generate_bouncing, DataConfig};
use lmvp::model::ParamGroup;
use lmvp::numerics::Tensor;
use lmvp::training::{
    batch_indices, phase_discriminator, phase_generator, phase_guider, rollout_batch, Batch, EvalTable, TrainConfig,
    TrainMode, TrainState, EVAL_CSV_HEADER,
};

const GRAD_TOLERANCE: f64 = FD_TOLERANCE;
const GRAD_INSTANCES: u64 = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const METRIC_TOLERANCE: f64 = 1e-6;
const METRIC_PAIRS: u64 = 20;
const FILTER_INSTANCES: u64 = 100;
const ISOLATION_ITERS: u64 = 50;
const RECONS_RATIO: f64 = 0.5;
const DESK_BUDGET: Duration = Duration::from_secs(60 * 60);

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = ("", 0.0f64);
    let mut failed = Vec::new();
    for case in grad_cases() {
        let err = check_case(&case, GRAD_INSTANCES);
        if err > worst.1 {
            worst = (case.name, err);
        }
        if err.is_nan() || err > GRAD_TOLERANCE {
            failed.push(case.name);
        }
    }
    let elapsed = start.elapsed();
    let pass = failed.is_empty() && elapsed <= GRAD_BUDGET;
    outcome(
        pass,
        format!(
            "{} cases x {GRAD_INSTANCES}, worst rel err {:.2e} ({}), failing {failed:?}, {:.1}s",
            grad_cases().len(),
            worst.1,
            worst.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracles() -> Outcome {
    use lmvp::metrics::{ssim, FrameDims};
    let errs = metric_oracle_errors(METRIC_PAIRS);
    let within = errs.iter().all(|(_, e)| *e <= METRIC_TOLERANCE);
    let dims = FrameDims { channels: 1, height: 16, width: 16 };
    let (x, _) = frame_pair(&mut rng(77));
    let self_ssim = ssim(&x, &x, dims).unwrap();
    let flat = gdl_on_tape(&[0.4; 256], &[0.9; 256], &[1, 1, 16, 16], 1.0);
    let pass = within && self_ssim == 1.0 && flat == 0.0;
    let list: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(pass, format!("max |diff| {} ; SSIM(x,x)={self_ssim} GDL(const,const)={flat}", list.join(", ")))
}

fn filter_properties() -> Outcome {
    let (mut hull, mut copy) = (0usize, 0usize);
    for i in 0..FILTER_INSTANCES {
        let k = [1, 3, 5][i as usize % 3];
        let c = 1 + i as usize % 3;
        let (frame, filters) = filter_instance(&mut rng(9000 + i), 2, c, 8, 7, k);
        hull += hull_violations(&frame, &apply_filter(&frame, &filters), k);
        let out = apply_filter(&frame, &one_hot_center(2, 8, 7, 3 + 2 * (i as usize % 2)));
        copy += usize::from(out.data() != frame.data());
    }
    outcome(
        hull == 0 && copy == 0,
        format!("{FILTER_INSTANCES} instances: {hull} pixels outside hull, {copy} inexact centre-tap copies"),
    )
}

fn desk_data(videos: usize) -> DataConfig {
    DataConfig { videos, ..DataConfig::default() }
}

fn group_state(state: &TrainState, group: ParamGroup) -> Vec<Tensor<f32>> {
    let mut out = Vec::new();
    for i in state.params.indices_in(&[group]) {
        let slot = state.optim.slot(i);
        out.push(state.params.entries()[i].value.clone());
        out.push(slot.m.clone());
        out.push(slot.v.clone());
    }
    out
}

fn groups_changed(before: &[Vec<Tensor<f32>>], state: &TrainState) -> Vec<ParamGroup> {
    ParamGroup::ALL
        .iter()
        .zip(before)
        .filter(|(&g, b)| group_state(state, g) != **b)
        .map(|(&g, _)| g)
        .collect()
}

fn phase_isolation() -> Outcome {
    let data = generate_bouncing(&desk_data(32)).unwrap();
    let cfg = TrainConfig { pretrain_iters: 0, main_iters: ISOLATION_ITERS, ..TrainConfig::default() };
    let mut state = TrainState::init(&cfg).unwrap();
    let snap = |s: &TrainState| ParamGroup::ALL.iter().map(|&g| group_state(s, g)).collect::<Vec<_>>();
    let want = [
        ParamGroup::DISCRIMINATOR.to_vec(),
        vec![ParamGroup::Guider],
        vec![ParamGroup::Generator],
    ];
    let mut violations = Vec::new();
    for it in 0..ISOLATION_ITERS {
        let batch = Batch::gather(&data, &batch_indices(data.len(), cfg.batch_size, cfg.seed, it)).unwrap();
        for (phase, expect) in want.iter().enumerate() {
            let before = snap(&state);
            match phase {
                0 => drop(phase_discriminator(&mut state, &cfg, &batch).unwrap()),
                1 => drop(phase_guider(&mut state, &cfg, &batch).unwrap()),
                _ => drop(phase_generator(&mut state, &cfg, &batch).unwrap()),
            }
            let got = groups_changed(&before, &state);
            if &got != expect {
                violations.push(format!("iter {} phase {}: {got:?}", it + 1, phase + 1));
            }
        }
        state.iteration = it + 1;
    }
    outcome(
        violations.is_empty(),
        format!("{ISOLATION_ITERS} iterations x 3 phases, parameters and Adam moments compared; violations {violations:?}"),
    )
}

fn static_zero_motion() -> Outcome {
    let data = generate_bouncing(&DataConfig { videos: 16, speed_min: 0, speed_max: 0, ..DataConfig::default() }).unwrap();
    let still = (0..data.len()).all(|v| (1..12).all(|t| data.frame_chw(v, t) == data.frame_chw(v, 0)));
    let cfg = TrainConfig::default();
    let state = TrainState::init(&cfg).unwrap();
    let (mut targets, mut nonzero) = (0, 0);
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(cfg.batch_size) {
        let cache = rollout_batch(&state.params, &cfg, &Batch::gather(&data, chunk).unwrap()).unwrap();
        for m in &cache.real_targets {
            targets += 1;
            nonzero += m.data().iter().filter(|v| v.to_bits() != 0).count();
        }
    }
    outcome(
        still && nonzero == 0 && targets > 0,
        format!("{targets} target maps over {} static videos, {nonzero} entries differ from +0.0", data.len()),
    )
}

fn loss_column(log: &str, iter: u64, col: usize) -> Option<f64> {
    log.lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|c| c[0].parse::<u64>().ok() == Some(iter))
        .and_then(|c| c[col].parse().ok())
}

fn run_pipeline(cfg: &RunConfig, dir: &Path, gen: bool) -> (EvalTable, Duration) {
    let start = Instant::now();
    if gen {
        cli::cmd_gen_data(cfg, dir).unwrap();
    }
    cli::cmd_train(cfg, dir).unwrap();
    let table = cli::cmd_eval(cfg, dir).unwrap();
    (table, start.elapsed())
}

fn desk_training(dir: &Path) -> Outcome {
    let cfg = RunConfig::default();
    let (table, elapsed) = run_pipeline(&cfg, dir, true);
    let log = fs::read_to_string(dir.join(LOSS_LOG_FILE)).unwrap();
    let p = cfg.train.pretrain_iters;
    let (r10, r_end) = (loss_column(&log, 10, 2).unwrap(), loss_column(&log, p, 2).unwrap());
    let (m, b) = (table.model.aggregate, table.baseline.aggregate);
    let (s1, s6) = (table.model.steps[0].ssim, table.model.steps[table.model.steps.len() - 1].ssim);
    let a = r_end <= RECONS_RATIO * r10;
    let bce = m.bce < b.bce;
    let c = s1 >= s6;
    let time = elapsed <= DESK_BUDGET;
    outcome(
        a && bce && c && time,
        format!(
            "(a) recons@{p} {r_end:.4} vs recons@10 {r10:.4} (ratio {:.3}) {}; (b) BCE model {:.5} vs last-frame {:.5} {}; \
             (c) SSIM step1 {s1:.4} vs step{} {s6:.4} {}; runtime {:.1} min {}",
            r_end / r10,
            ok(a),
            m.bce,
            b.bce,
            ok(bce),
            table.model.steps.len(),
            ok(c),
            elapsed.as_secs_f64() / 60.0,
            ok(time)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn determinism() -> Outcome {
    let full = tiny_run("");
    let dirs = [workdir("determinism_a"), workdir("determinism_b"), workdir("determinism_split")];
    run_pipeline(&full, &dirs[0], true);
    run_pipeline(&full, &dirs[1], true);
    cli::cmd_gen_data(&full, &dirs[2]).unwrap();
    cli::cmd_train(&tiny_run("main_iters = 1\n"), &dirs[2]).unwrap();
    cli::cmd_train(&tiny_run("resume = true\n"), &dirs[2]).unwrap();
    cli::cmd_eval(&full, &dirs[2]).unwrap();
    let files = [TRAIN_FILE, TEST_FILE, LOSS_LOG_FILE, EVAL_FILE, CHECKPOINT_FILE];
    let same = |a: &Path, b: &Path, f: &str| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
    let rerun: Vec<&str> = files.iter().copied().filter(|f| !same(&dirs[0], &dirs[1], f)).collect();
    let split: Vec<&str> = files.iter().copied().filter(|f| !same(&dirs[0], &dirs[2], f)).collect();
    outcome(
        rerun.is_empty() && split.is_empty(),
        format!("{} artifacts compared; differing on rerun {rerun:?}, differing after checkpoint/resume {split:?}", files.len()),
    )
}

fn ablation(desk: &Path) -> Outcome {
    let dir = workdir("ablation");
    let mut cfg = RunConfig::default();
    cfg.set("mode", TrainMode::Ablation.name()).unwrap();
    cfg.train_data = Some(desk.join(TRAIN_FILE));
    cfg.test_data = Some(desk.join(TEST_FILE));
    let (table, elapsed) = run_pipeline(&cfg, &dir, false);
    let full_csv = fs::read_to_string(desk.join(EVAL_FILE)).unwrap_or_default();
    let abl_csv = fs::read_to_string(dir.join(EVAL_FILE)).unwrap();
    let header = |s: &str| s.lines().next().map(str::to_string);
    let log = fs::read_to_string(dir.join(LOSS_LOG_FILE)).unwrap();
    let same_schema = header(&abl_csv).as_deref() == Some(EVAL_CSV_HEADER)
        && header(&full_csv) == header(&abl_csv)
        && full_csv.lines().count() == abl_csv.lines().count();
    let rows = log.lines().count() - 1;
    let budget = rows as u64 == cfg.train.total_iterations();
    let m = table.model.aggregate;
    let full = full_csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum::<f64>()
        / (full_csv.lines().count().max(2) - 1) as f64;
    outcome(
        same_schema && budget,
        format!(
            "{rows} iterations logged; eval schema {}; BCE ablation {:.5} vs full {full:.5} (no ordering required); {:.1} min",
            if same_schema { "identical" } else { "DIFFERENT" },
            m.bce,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn main() {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
        eprintln!("could not pin the thread pool: {e}");
    }
    let desk = workdir("desk");
    let criteria: Vec<Criterion> = vec![
        ("gradient suite", Box::new(gradients)),
        ("metric oracles", Box::new(metric_oracles)),
        ("filter properties", Box::new(filter_properties)),
        ("phase isolation", Box::new(phase_isolation)),
        ("static-video zero motion", Box::new(static_zero_motion)),
        ("desk-scale training", Box::new(|| desk_training(&desk))),
        ("determinism", Box::new(determinism)),
        ("ablation harness", Box::new(|| ablation(&desk))),
    ];
    let only: Option<Vec<usize>> = std::env::var("LMVP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failures = 0;
    let mut lines = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let line = format!(
            "criterion {} {name}: {} [{:.1}s] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        println!("{line}");
        lines.push(line);
        failures += usize::from(!o.pass);
    }
    println!("\nacceptance summary:");
    for l in &lines {
        println!("  {}", l.split(" [").next().unwrap_or(l));
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
