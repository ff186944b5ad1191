//! Flat `key = value` run configuration.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{DataConfig, SpriteKind};
use crate::error::{Error, Result};
use crate::losses::ReconMode;
use crate::numerics::AdamConfig;
use crate::training::{TrainConfig, TrainMode};

/// Everything a command needs: data generation, training and file paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Training-set generator; `channels`, `context` and `seed` mirror the
    /// training configuration.
    pub data: DataConfig,
    pub test_videos: usize,
    pub train: TrainConfig,
    /// Videos exported by `predict`.
    pub n_show: usize,
    /// Continue from an existing checkpoint instead of starting over.
    pub resume: bool,
    /// Input and output files; `None` means the default name in the output
    /// directory.
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let data = DataConfig {
            channels: train.model.channels,
            context: train.context,
            seed: train.seed,
            ..DataConfig::default()
        };
        Self {
            data,
            test_videos: 64,
            train,
            n_show: 4,
            resume: false,
            train_data: None,
            test_data: None,
            checkpoint: None,
        }
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn adam_mut<'a>(t: &'a mut TrainConfig, net: &str) -> &'a mut AdamConfig {
    match net {
        "d" => &mut t.adam_discriminator,
        "m" => &mut t.adam_guider,
        _ => &mut t.adam_generator,
    }
}

impl RunConfig {
    /// Every key with its current value, in echo order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let (d, t) = (&self.data, &self.train);
        let mut out: Vec<(String, String)> = vec![
            ("videos".into(), d.videos.to_string()),
            ("test_videos".into(), self.test_videos.to_string()),
            ("T".into(), d.frames.to_string()),
            ("T0".into(), t.context.to_string()),
            ("H".into(), d.height.to_string()),
            ("W".into(), d.width.to_string()),
            ("C".into(), t.model.channels.to_string()),
            ("objects".into(), d.objects.to_string()),
            ("sprite".into(), d.sprite.name().into()),
            ("sprite_size".into(), d.sprite_size.to_string()),
            ("speed_min".into(), d.speed_min.to_string()),
            ("speed_max".into(), d.speed_max.to_string()),
            ("c".into(), t.model.clip_len.to_string()),
            ("K".into(), t.model.filter_size.to_string()),
            ("base_channels".into(), t.model.base_channels.to_string()),
            ("feature_channels".into(), t.model.feature_channels.to_string()),
            ("guider_hidden".into(), t.model.guider_hidden.to_string()),
            ("gamma".into(), t.loss.gamma.to_string()),
            ("gdl_weight".into(), t.loss.gdl_weight.to_string()),
            ("gdl_exponent".into(), t.loss.gdl_exponent.to_string()),
            ("recon".into(), t.loss.recon.name().into()),
            ("prob_eps".into(), t.loss.prob_eps.to_string()),
        ];
        for (net, a) in [("d", &t.adam_discriminator), ("m", &t.adam_guider), ("g", &t.adam_generator)] {
            out.push((format!("lr_{net}"), a.lr.to_string()));
            out.push((format!("beta1_{net}"), a.beta1.to_string()));
            out.push((format!("beta2_{net}"), a.beta2.to_string()));
            out.push((format!("adam_eps_{net}"), a.eps.to_string()));
        }
        out.extend([
            ("batch_size".into(), t.batch_size.to_string()),
            ("pretrain_iters".into(), t.pretrain_iters.to_string()),
            ("main_iters".into(), t.main_iters.to_string()),
            ("eval_interval".into(), t.eval_interval.to_string()),
            ("seed".into(), t.seed.to_string()),
            ("mode".into(), t.mode.name().into()),
            ("n_show".into(), self.n_show.to_string()),
            ("resume".into(), self.resume.to_string()),
            ("train_data".into(), show_path(&self.train_data)),
            ("test_data".into(), show_path(&self.test_data)),
            ("checkpoint".into(), show_path(&self.checkpoint)),
        ]);
        out
    }

    /// Sets one key; the message of the error explains the value problem.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (d, t) = (&mut self.data, &mut self.train);
        match key {
            "videos" => d.videos = num(v)?,
            "test_videos" => self.test_videos = num(v)?,
            "T" => d.frames = num(v)?,
            "T0" => {
                t.context = num(v)?;
                d.context = t.context;
            }
            "H" => d.height = num(v)?,
            "W" => d.width = num(v)?,
            "C" => {
                t.model.channels = num(v)?;
                d.channels = t.model.channels;
            }
            "objects" => d.objects = num(v)?,
            "sprite" => d.sprite = SpriteKind::parse(v).ok_or_else(|| format!("unknown sprite `{v}`"))?,
            "sprite_size" => d.sprite_size = num(v)?,
            "speed_min" => d.speed_min = num(v)?,
            "speed_max" => d.speed_max = num(v)?,
            "c" => t.model.clip_len = num(v)?,
            "K" => t.model.filter_size = num(v)?,
            "base_channels" => t.model.base_channels = num(v)?,
            "feature_channels" => t.model.feature_channels = num(v)?,
            "guider_hidden" => t.model.guider_hidden = num(v)?,
            "gamma" => t.loss.gamma = num(v)?,
            "gdl_weight" => t.loss.gdl_weight = num(v)?,
            "gdl_exponent" => t.loss.gdl_exponent = num(v)?,
            "recon" => t.loss.recon = ReconMode::parse(v).ok_or_else(|| format!("expected bce or mse, got `{v}`"))?,
            "prob_eps" => t.loss.prob_eps = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "pretrain_iters" => t.pretrain_iters = num(v)?,
            "main_iters" => t.main_iters = num(v)?,
            "eval_interval" => t.eval_interval = num(v)?,
            "seed" => {
                t.seed = num(v)?;
                d.seed = t.seed;
            }
            "mode" => t.mode = TrainMode::parse(v).ok_or_else(|| format!("expected full or ablation, got `{v}`"))?,
            "n_show" => self.n_show = num(v)?,
            "resume" => self.resume = num(v)?,
            "train_data" => self.train_data = path(v),
            "test_data" => self.test_data = path(v),
            "checkpoint" => self.checkpoint = path(v),
            _ => {
                let adam = ["lr_", "beta1_", "beta2_", "adam_eps_"]
                    .iter()
                    .find_map(|p| key.strip_prefix(p).map(|net| (*p, net)))
                    .filter(|(_, net)| matches!(*net, "d" | "m" | "g"));
                let Some((field, net)) = adam else {
                    return Err("unknown key".into());
                };
                let a = adam_mut(t, net);
                let x: f64 = num(v)?;
                match field {
                    "lr_" => a.lr = x,
                    "beta1_" => a.beta1 = x,
                    "beta2_" => a.beta2 = x,
                    _ => a.eps = x,
                }
            }
        }
        Ok(())
    }

    /// The resolved configuration in the input format, one key per line.
    pub fn echo(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Cross-field checks. `lines` maps keys to the line that set them.
    fn check(&self, lines: &HashMap<String, usize>) -> Result<()> {
        let line_of = |k: &str| lines.get(k).copied().unwrap_or(0);
        let blame = |a: &'static str, b: &'static str| -> &'static str { if line_of(a) >= line_of(b) { a } else { b } };
        let (d, t) = (&self.data, &self.train);
        if t.context >= d.frames {
            let key = blame("T0", "T");
            return Err(Error::ConfigLine {
                line: line_of(key),
                key: key.into(),
                msg: format!("T0 = {} must be smaller than T = {}", t.context, d.frames),
            });
        }
        if t.context < t.model.clip_len + 1 {
            let key = blame("T0", "c");
            return Err(Error::ConfigLine {
                line: line_of(key),
                key: key.into(),
                msg: format!("T0 = {} must be at least c + 1 = {}", t.context, t.model.clip_len + 1),
            });
        }
        if d.height % 4 != 0 || d.width % 4 != 0 {
            let key = blame("H", "W");
            return Err(Error::ConfigLine {
                line: line_of(key),
                key: key.into(),
                msg: format!("H = {} and W = {} must be multiples of 4", d.height, d.width),
            });
        }
        if self.test_videos == 0 {
            return Err(Error::ConfigLine { line: line_of("test_videos"), key: "test_videos".into(), msg: "must be >= 1".into() });
        }
        d.validate()?;
        t.validate()
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored; omitted keys keep their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut lines = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ConfigLine { line, key: content.into(), msg: "expected `key = value`".into() });
        };
        let (key, value) = (key.trim(), value.trim());
        if lines.insert(key.to_string(), line).is_some() {
            return Err(Error::ConfigLine { line, key: key.into(), msg: "key given twice".into() });
        }
        cfg.set(key, value).map_err(|msg| Error::ConfigLine { line, key: key.into(), msg })?;
    }
    cfg.check(&lines)?;
    Ok(cfg)
}
