use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::ModelConfig;

/// Which network a trainable tensor belongs to.
///
/// The discriminator is `Extractor ∪ Classifier`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Extractor,
    Classifier,
    Guider,
    Generator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] =
        [ParamGroup::Extractor, ParamGroup::Classifier, ParamGroup::Guider, ParamGroup::Generator];
    pub const DISCRIMINATOR: [ParamGroup; 2] = [ParamGroup::Extractor, ParamGroup::Classifier];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Extractor => "F.",
            ParamGroup::Classifier => "D.",
            ParamGroup::Guider => "M.",
            ParamGroup::Generator => "G.",
        }
    }

    pub fn of_name(name: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| name.starts_with(g.prefix()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<f32>,
}

/// Every trainable tensor of the three networks, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

struct Layout(Vec<(String, Vec<usize>)>);

impl Layout {
    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) {
        self.0.push((format!("{name}.w"), vec![out, inp, k, k]));
        self.0.push((format!("{name}.b"), vec![out]));
    }
}

/// Names and shapes of every parameter for `cfg`.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c, base, feat, hid) = (cfg.channels, cfg.base_channels, cfg.feature_channels, cfg.guider_hidden);
    let mut l = Layout(Vec::new());
    l.conv("F.conv1", base, (cfg.clip_len + 1) * c, 3);
    l.conv("F.conv2", feat, base, 3);
    l.conv("F.conv3", feat, feat, 3);
    l.conv("D.conv", feat, feat, 3);
    l.0.push(("D.fc.w".into(), vec![1, feat]));
    l.0.push(("D.fc.b".into(), vec![1]));
    l.conv("M.gru.update", hid, feat + hid, 3);
    l.conv("M.gru.reset", hid, feat + hid, 3);
    l.conv("M.gru.cand", hid, feat + hid, 3);
    l.conv("M.out", feat, hid, 3);
    l.conv("G.spatial1", base, c, 3);
    l.conv("G.spatial2", feat, base, 3);
    l.conv("G.spatial3", feat, feat, 3);
    l.conv("G.motion", feat, feat, 3);
    l.conv("G.dec1", feat, 2 * feat, 3);
    l.conv("G.dec2", base, feat, 3);
    l.conv("G.filter", cfg.filter_size * cfg.filter_size, base, 1);
    l.0
}

fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match *shape {
        [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
        [o, i] => (i, o),
        _ => (1, 1),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ModelParams {
    /// Weights uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// biases zero, drawn in declaration order from one seeded stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4C4D_5650_5041_5241);
        let entries = layout(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let value = if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    let a = glorot_bound(&shape);
                    let data = (0..n).map(|_| rng.gen_range(-a..=a) as f32).collect();
                    Tensor::from_parts(shape, data)
                };
                let group = ParamGroup::of_name(&name).expect("layout names carry a group prefix");
                ParamEntry { name, group, value }
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::contract("model_params", format!("duplicate parameter name {}", e.name)));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<f32> {
        &mut self.entries[i].value
    }

    pub fn set(&mut self, name: &str, value: Tensor<f32>) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::contract("model_params", format!("unknown parameter {name}")))?;
        if self.entries[i].value.shape() != value.shape() {
            return Err(Error::contract(
                "model_params",
                format!("{name}: shape {:?} != {:?}", value.shape(), self.entries[i].value.shape()),
            ));
        }
        self.entries[i].value = value;
        Ok(())
    }

    /// Indices of the parameters in any of `groups`.
    pub fn indices_in(&self, groups: &[ParamGroup]) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| groups.contains(&self.entries[i].group)).collect()
    }

    /// Copies of every tensor in `group`, for before/after comparisons.
    pub fn snapshot(&self, group: ParamGroup) -> Vec<Tensor<f32>> {
        self.entries.iter().filter(|e| e.group == group).map(|e| e.value.clone()).collect()
    }

    /// Checks that names and shapes match the layout `cfg` would create.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let want = layout(cfg);
        let mut problems = Vec::new();
        for (name, shape) in &want {
            match self.get(name) {
                None => problems.push(format!("{name}: missing, expected {shape:?}")),
                Some(t) if t.shape() != shape.as_slice() => {
                    problems.push(format!("{name}: stored {:?}, configuration needs {shape:?}", t.shape()))
                }
                Some(_) => {}
            }
        }
        if self.len() != want.len() {
            problems.push(format!("{} stored tensors, configuration has {}", self.len(), want.len()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Compatibility(problems.join("; ")))
        }
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}
