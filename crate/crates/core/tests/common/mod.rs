#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use lmvp::data::{DataConfig, VideoSet};
use lmvp::losses::{self, LossConfig, ReconMode, TeacherTerm};
use lmvp::model::ModelConfig;
use lmvp::numerics::{conv_gru_step, Activation, ConvGruParams, Padding, Tape, Tensor, Var};
use lmvp::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_FLOOR: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-3;
/// Entries probed per input tensor; larger tensors are subsampled.
pub const FD_PROBES: usize = 24;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// Uniform values with magnitude in `[gap, hi)`, keeping clear of kinks at 0.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..hi);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Builds a scalar from parameter leaves; tensor-valued ops are reduced
/// with a fixed random projection.
pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> lmvp::Result<Var>;

fn eval(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).item()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over (a sample of) every input entry.
pub fn max_grad_error(build: &Build, inputs: &[Tensor<f64>], probe_seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    assert_eq!(tape.value(out).numel(), 1, "builder must return a scalar");
    let grads = tape.backward(out, &vars).unwrap();
    let mut pick = rng(probe_seed);
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let n = input.numel();
        let probes: Vec<usize> = if n <= FD_PROBES { (0..n).collect() } else { (0..FD_PROBES).map(|_| pick.gen_range(0..n)).collect() };
        for j in probes {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> lmvp::Result<Var> {
    let shape = tape.shape(v).to_vec();
    let r = uniform(&mut rng(seed), &shape, -1.0, 1.0);
    let r = tape.constant(r);
    let p = tape.mul(v, r)?;
    tape.sum(p)
}

/// A named gradient-check case: builder plus a generator of random inputs.
pub struct GradCase {
    pub name: &'static str,
    pub build: Box<Build>,
    pub inputs: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>,
}

pub fn grad_cases() -> Vec<GradCase> {
    let mut cases = Vec::new();
    for (name, padding, stride) in [
        ("conv2d same-zero", Padding::SameZero, 1),
        ("conv2d strided", Padding::SameZero, 2),
        ("conv2d replicate", Padding::SameReplicate, 1),
        ("conv2d valid", Padding::Valid, 1),
    ] {
        cases.push(GradCase {
            name,
            build: Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], stride, padding)?;
                project(t, y, 11)
            }),
            inputs: Box::new(|r| vec![uniform(r, &[2, 2, 6, 5], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)]),
        });
    }
    cases.push(GradCase {
        name: "dense",
        build: Box::new(|t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            project(t, y, 12)
        }),
        inputs: Box::new(|r| vec![uniform(r, &[3, 5], -1.0, 1.0), uniform(r, &[4, 5], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)]),
    });
    for (name, kind) in [
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
        ("relu", Activation::Relu),
        ("leaky relu", Activation::LeakyRelu(0.2)),
    ] {
        cases.push(GradCase {
            name,
            build: Box::new(move |t, v| {
                let y = t.activation(v[0], kind)?;
                project(t, y, 13)
            }),
            inputs: Box::new(|r| vec![away_from_zero(r, &[2, 3, 4, 4], 0.05, 2.0)]),
        });
    }
    cases.push(GradCase {
        name: "softmax_sites",
        build: Box::new(|t, v| {
            let y = t.softmax_sites(v[0])?;
            project(t, y, 14)
        }),
        inputs: Box::new(|r| vec![uniform(r, &[2, 9, 3, 4], -2.0, 2.0)]),
    });
    cases.push(GradCase {
        name: "conv_gru_step",
        build: Box::new(|t, v| {
            let p = ConvGruParams { update_w: v[2], update_b: v[3], reset_w: v[4], reset_b: v[5], cand_w: v[6], cand_b: v[7] };
            let h = conv_gru_step(t, v[0], v[1], &p)?;
            project(t, h, 15)
        }),
        inputs: Box::new(|r| {
            let (cx, ch) = (2, 3);
            let mut v = vec![uniform(r, &[2, ch, 4, 4], -1.0, 1.0), uniform(r, &[2, cx, 4, 4], -1.0, 1.0)];
            for _ in 0..3 {
                v.push(uniform(r, &[ch, cx + ch, 3, 3], -0.5, 0.5));
                v.push(uniform(r, &[ch], -0.5, 0.5));
            }
            v
        }),
    });
    cases.push(GradCase {
        name: "apply_dynamic_filter",
        build: Box::new(|t, v| {
            let w = t.softmax_sites(v[1])?;
            let y = t.dynamic_filter(v[0], w)?;
            project(t, y, 16)
        }),
        inputs: Box::new(|r| vec![uniform(r, &[2, 2, 5, 6], 0.0, 1.0), uniform(r, &[2, 9, 5, 6], -2.0, 2.0)]),
    });
    cases.push(GradCase {
        name: "loss_dis",
        build: Box::new(|t, v| {
            let pr = t.sigmoid(v[0])?;
            let pf = t.sigmoid(v[1])?;
            losses::loss_dis(t, pr, pf, 1e-7)
        }),
        inputs: Box::new(|r| vec![uniform(r, &[6, 1], -2.0, 2.0), uniform(r, &[6, 1], -2.0, 2.0)]),
    });
    cases.push(GradCase {
        name: "loss_guider learner",
        build: Box::new(|t, v| losses::loss_guider_learner(t, &[v[0], v[1]], &[v[2], v[3]])),
        inputs: Box::new(|r| (0..4).map(|_| uniform(r, &[2, 3, 2, 2], -1.0, 1.0)).collect()),
    });
    cases.push(GradCase {
        name: "loss_guider teacher",
        build: Box::new(|t, v| {
            let f = uniform(&mut rng(17), &[2, 3, 2, 2], -1.0, 1.0);
            let m = uniform(&mut rng(18), &[2, 3, 2, 2], -1.0, 1.0);
            let features = t.constant(f);
            let guidance = t.constant(m);
            let extended = t.tanh(v[0])?;
            losses::loss_guider_teacher(t, &[TeacherTerm { extended, features, guidance }])
        }),
        inputs: Box::new(|r| vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0)]),
    });
    for (name, recon) in [("loss_recons bce", ReconMode::Bce), ("loss_recons mse", ReconMode::Mse)] {
        cases.push(GradCase {
            name,
            build: Box::new(move |t, v| {
                let cfg = LossConfig { recon, ..LossConfig::default() };
                let truth: Vec<f64> = (0..50).map(|i| if (i * 7 + i / 5) % 3 == 0 { 0.95 } else { 0.05 }).collect();
                let truth = t.constant(Tensor::new(vec![2, 1, 5, 5], truth).unwrap());
                let pred = t.sigmoid(v[0])?;
                Ok(losses::loss_recons(t, truth, pred, &cfg)?.total)
            }),
            inputs: Box::new(|r| {
                // Checkerboard logits keep every adjacent difference of the
                // prediction well away from the GDL kinks.
                let logits = (0..50)
                    .map(|i| {
                        let (y, x) = ((i % 25) / 5, i % 5);
                        let sign = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
                        0.6 * sign + r.gen_range(-0.1..0.1)
                    })
                    .collect();
                vec![Tensor::new(vec![2, 1, 5, 5], logits).unwrap()]
            }),
        });
    }
    cases.push(GradCase {
        name: "loss_gen",
        build: Box::new(|t, v| {
            let a = t.square(v[0])?;
            let recons = t.mean(a)?;
            let b = t.tanh(v[1])?;
            let teacher = t.sum(b)?;
            losses::loss_gen(t, recons, Some(teacher), 0.1)
        }),
        inputs: Box::new(|r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)]),
    });
    cases
}

/// Runs `instances` random instances of a case; returns the worst error.
pub fn check_case(case: &GradCase, instances: u64) -> f64 {
    (0..instances)
        .map(|i| {
            let inputs = (case.inputs)(&mut rng(1000 + i));
            max_grad_error(&*case.build, &inputs, 2000 + i)
        })
        .fold(0.0, f64::max)
}

/// Small architecture for fast end-to-end tests.
pub fn tiny_model() -> ModelConfig {
    ModelConfig { channels: 1, clip_len: 2, filter_size: 3, base_channels: 4, feature_channels: 6, guider_hidden: 5 }
}

pub fn tiny_data(videos: usize, seed: u64) -> DataConfig {
    DataConfig {
        videos,
        frames: 7,
        height: 16,
        width: 16,
        context: 4,
        sprite_size: 4,
        seed,
        ..DataConfig::default()
    }
}

pub fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        model: tiny_model(),
        context: 4,
        batch_size: 2,
        pretrain_iters: 2,
        main_iters: 3,
        eval_interval: 2,
        seed,
        ..TrainConfig::default()
    }
}

/// `n` videos of `t` identical frames with a fixed bright square.
pub fn static_videos(n: usize, t: usize, h: usize, w: usize) -> VideoSet {
    let mut data = Vec::with_capacity(n * t * h * w);
    for v in 0..n {
        for _ in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let on = (3..8).contains(&((y + v) % h)) && (4..9).contains(&x);
                    data.push(if on { 1.0 } else { 0.0 });
                }
            }
        }
    }
    VideoSet::new(Tensor::new(vec![n, t, h, w, 1], data).unwrap()).unwrap()
}

/// Key-value configuration for a run that finishes in well under a second.
pub const TINY_CONFIG: &str = "\
videos = 5
test_videos = 3
T = 7
T0 = 4
H = 16
W = 16
sprite_size = 4
c = 2
K = 3
base_channels = 4
feature_channels = 6
guider_hidden = 5
batch_size = 2
pretrain_iters = 2
main_iters = 3
eval_interval = 2
n_show = 2
";

/// [`TINY_CONFIG`] with the keys in `extra` replaced or added.
pub fn tiny_run(extra: &str) -> lmvp::cli::RunConfig {
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = TINY_CONFIG.lines().filter(|l| !overridden.contains(&key(l))).map(|l| format!("{l}\n")).collect();
    text.push_str(extra);
    lmvp::cli::parse_config(&text).unwrap()
}

/// Direct SSIM: explicit 2-D Gaussian window and two-pass moments at every
/// valid 11×11 position of each channel.
pub fn ssim_oracle(x: &[f32], y: &[f32], c: usize, h: usize, w: usize) -> f64 {
    const N: usize = 11;
    let sigma = 1.5f64;
    let mut win = [[0.0f64; N]; N];
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let norm: f64 = win.iter().flatten().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut per_channel = 0.0;
    for ch in 0..c {
        let at = |v: &[f32], i: usize, j: usize| v[(ch * h + i) * w + j] as f64;
        let mut acc = 0.0;
        let mut count = 0;
        for oi in 0..=h - N {
            for oj in 0..=w - N {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..N {
                    for j in 0..N {
                        let g = win[i][j] / norm;
                        mx += g * at(x, oi + i, oj + j);
                        my += g * at(y, oi + i, oj + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..N {
                    for j in 0..N {
                        let g = win[i][j] / norm;
                        let (dx, dy) = (at(x, oi + i, oj + j) - mx, at(y, oi + i, oj + j) - my);
                        vx += g * dx * dx;
                        vy += g * dy * dy;
                        cov += g * dx * dy;
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        per_channel += acc / count as f64;
    }
    per_channel / c as f64
}

pub fn bce_oracle(x: &[f32], p: &[f32]) -> f64 {
    let eps = 1e-7;
    let total: f64 = x
        .iter()
        .zip(p)
        .map(|(&t, &q)| {
            let q = (q as f64).max(eps).min(1.0 - eps);
            if t == 1.0 {
                -q.ln()
            } else if t == 0.0 {
                -(1.0 - q).ln()
            } else {
                -(t as f64) * q.ln() - (1.0 - t as f64) * (1.0 - q).ln()
            }
        })
        .sum();
    total / x.len() as f64
}

pub fn mse_oracle(x: &[f32], p: &[f32]) -> f64 {
    x.iter().zip(p).map(|(&a, &b)| (a as f64 - b as f64) * (a as f64 - b as f64)).sum::<f64>() / x.len() as f64
}

pub fn psnr_oracle(x: &[f32], p: &[f32]) -> f64 {
    let m = mse_oracle(x, p);
    if m == 0.0 { 99.0 } else { (-10.0 * m.log10()).min(99.0) }
}

/// Mean of `||Δx| − |Δp||^α` over every horizontal and vertical neighbour
/// pair of each `[C, H, W]` plane.
pub fn gdl_oracle(x: &[f64], p: &[f64], planes: usize, h: usize, w: usize, alpha: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..planes {
        let at = |v: &[f64], i: usize, j: usize| v[(n * h + i) * w + j];
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    let d = ((at(x, i, j + 1) - at(x, i, j)).abs() - (at(p, i, j + 1) - at(p, i, j)).abs()).abs();
                    total += d.powf(alpha);
                    count += 1;
                }
                if i + 1 < h {
                    let d = ((at(x, i + 1, j) - at(x, i, j)).abs() - (at(p, i + 1, j) - at(p, i, j)).abs()).abs();
                    total += d.powf(alpha);
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// `gdl` from the loss module evaluated on an f64 tape.
pub fn gdl_on_tape(x: &[f64], p: &[f64], shape: &[usize], alpha: f64) -> f64 {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::new(shape.to_vec(), x.to_vec()).unwrap());
    let b = tape.constant(Tensor::new(shape.to_vec(), p.to_vec()).unwrap());
    let g = losses::gdl(&mut tape, a, b, alpha).unwrap();
    tape.value(g).item()
}

/// Random 16×16 single-channel frame pair in `(0, 1)`.
pub fn frame_pair(r: &mut ChaCha8Rng) -> (Vec<f32>, Vec<f32>) {
    let x: Vec<f32> = (0..256).map(|_| r.gen_range(0.0f32..1.0)).collect();
    let y: Vec<f32> = x.iter().map(|&v| (v + r.gen_range(-0.3f32..0.3)).clamp(0.001, 0.999)).collect();
    (x, y)
}

/// Worst disagreement of every metric with its oracle over `pairs` frames.
pub fn metric_oracle_errors(pairs: u64) -> Vec<(&'static str, f64)> {
    use lmvp::metrics::{bce, mse, psnr, ssim, FrameDims};
    let dims = FrameDims { channels: 1, height: 16, width: 16 };
    let mut worst = [("ssim", 0.0f64), ("psnr", 0.0), ("bce", 0.0), ("mse", 0.0), ("gdl", 0.0)];
    for i in 0..pairs {
        let (x, y) = frame_pair(&mut rng(500 + i));
        let m = mse(&x, &y).unwrap();
        let errs = [
            (ssim(&x, &y, dims).unwrap() - ssim_oracle(&x, &y, 1, 16, 16)).abs(),
            (psnr(m) - psnr_oracle(&x, &y)).abs(),
            (bce(&x, &y).unwrap() - bce_oracle(&x, &y)).abs(),
            (m - mse_oracle(&x, &y)).abs(),
            {
                let (a, b): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).map(|(&a, &b)| (a as f64, b as f64)).unzip();
                let alpha = if i % 2 == 0 { 1.0 } else { 2.0 };
                (gdl_on_tape(&a, &b, &[1, 1, 16, 16], alpha) - gdl_oracle(&a, &b, 1, 16, 16, alpha)).abs()
            },
        ];
        for (slot, e) in worst.iter_mut().zip(errs) {
            slot.1 = slot.1.max(e);
        }
    }
    worst.to_vec()
}

/// Random frame in `[0, 1]` and random per-pixel softmax filters.
pub fn filter_instance(r: &mut ChaCha8Rng, b: usize, c: usize, h: usize, w: usize, k: usize) -> (Tensor<f32>, Tensor<f32>) {
    let frame: Vec<f32> = (0..b * c * h * w).map(|_| r.gen_range(0.0f32..=1.0)).collect();
    let mut tape = Tape::<f32>::new();
    let logits: Vec<f32> = (0..b * k * k * h * w).map(|_| r.gen_range(-4.0f32..4.0)).collect();
    let l = tape.constant(Tensor::new(vec![b, k * k, h, w], logits).unwrap());
    let f = tape.softmax_sites(l).unwrap();
    (Tensor::new(vec![b, c, h, w], frame).unwrap(), tape.value(f).clone())
}

pub fn apply_filter(frame: &Tensor<f32>, filters: &Tensor<f32>) -> Tensor<f32> {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(frame.clone());
    let f = tape.constant(filters.clone());
    let y = tape.dynamic_filter(x, f).unwrap();
    tape.value(y).clone()
}

/// Number of output pixels outside the range of their replicate-padded
/// K×K neighbourhood.
pub fn hull_violations(frame: &Tensor<f32>, out: &Tensor<f32>, k: usize) -> usize {
    let &[b, c, h, w] = frame.shape() else { panic!("rank 4") };
    let r = (k / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut bad = 0;
    for n in 0..b * c {
        let plane = &frame.data()[n * h * w..(n + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                for du in -r..=r {
                    for dv in -r..=r {
                        let v = plane[clampi(i as isize + du, h) * w + clampi(j as isize + dv, w)];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                let y = out.data()[n * h * w + i * w + j];
                if !(lo <= y && y <= hi) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Filters with all weight on the centre tap.
pub fn one_hot_center(b: usize, h: usize, w: usize, k: usize) -> Tensor<f32> {
    let mut f = Tensor::zeros(vec![b, k * k, h, w]);
    let center = (k * k) / 2;
    for n in 0..b {
        let base = (n * k * k + center) * h * w;
        f.data_mut()[base..base + h * w].fill(1.0);
    }
    f
}
