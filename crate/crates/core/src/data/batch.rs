use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generate::splitmix64;

/// Deterministic permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed ^ splitmix64(epoch));
    order.shuffle(&mut rng);
    order
}

/// Yields index batches over one shuffled pass of a dataset; the last batch
/// may be short.
#[derive(Clone, Debug)]
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    /// Set when the requested batch size exceeded the dataset size.
    pub warning: Option<String>,
}

impl BatchIter {
    pub fn new(n: usize, batch_size: usize, shuffle_seed: u64) -> Self {
        let batch_size = batch_size.max(1);
        let warning = (batch_size > n && n > 0).then(|| {
            let msg = format!("batch size {batch_size} exceeds dataset size {n}; using one batch of {n}");
            log::warn!("{msg}");
            msg
        });
        Self { order: epoch_order(n, shuffle_seed, 0), batch_size, pos: 0, warning }
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}
