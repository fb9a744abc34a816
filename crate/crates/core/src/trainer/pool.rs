use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Ages stop growing here.
pub const MAX_AGE: u64 = 1_000_000;

/// A pooled state and the number of steps it has evolved since its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry<T = f32> {
    pub state: Grid<T>,
    pub age: u64,
}

/// States taken out of the pool for one epoch.
#[derive(Clone, Debug)]
pub struct Batch<T = f32> {
    pub indices: Vec<usize>,
    pub entries: Vec<PoolEntry<T>>,
    /// Whether the first entry was replaced by the seed.
    pub reseeded: bool,
}

/// Reservoir of evolved states, reseeded once every `reseed_period` epochs.
#[derive(Clone, Debug)]
pub struct CheckpointPool<T = f32> {
    entries: Vec<PoolEntry<T>>,
    checked_out: Vec<bool>,
    seed: Grid<T>,
    reseed_period: usize,
    reseed_events: usize,
}

impl<T: Scalar> CheckpointPool<T> {
    /// A pool of `capacity` copies of `seed`.
    pub fn new(seed: Grid<T>, capacity: usize, reseed_period: usize) -> Result<Self> {
        if capacity == 0 || reseed_period == 0 {
            return Err(Error::Invalid(format!(
                "pool needs positive capacity and reseed period, got {capacity} and {reseed_period}"
            )));
        }
        Ok(Self {
            entries: vec![
                PoolEntry {
                    state: seed.clone(),
                    age: 0
                };
                capacity
            ],
            checked_out: vec![false; capacity],
            seed,
            reseed_period,
            reseed_events: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry<T>] {
        &self.entries
    }

    pub fn reseed_events(&self) -> usize {
        self.reseed_events
    }

    pub fn reseed_period(&self) -> usize {
        self.reseed_period
    }

    pub fn seed(&self) -> &Grid<T> {
        &self.seed
    }

    /// Whether epoch `epoch` (zero-based) replaces a sampled state by the seed.
    pub fn reseed_due(&self, epoch: usize) -> bool {
        (epoch + 1) % self.reseed_period == 0
    }

    /// Draws `batch` distinct entries uniformly and marks them checked out.
    pub fn checkout(&mut self, epoch: usize, batch: usize, rng: &mut impl Rng) -> Result<Batch<T>> {
        if batch == 0 || batch > self.len() {
            return Err(Error::Invalid(format!(
                "batch of {batch} from a pool of {}",
                self.len()
            )));
        }
        if self.checked_out.iter().any(|&c| c) {
            return Err(Error::Invalid("previous batch was not returned".into()));
        }
        let indices = sample(rng, self.len(), batch).into_vec();
        let mut entries: Vec<_> = indices.iter().map(|&i| self.entries[i].clone()).collect();
        for &i in &indices {
            self.checked_out[i] = true;
        }
        let reseeded = self.reseed_due(epoch);
        if reseeded {
            entries[0] = PoolEntry {
                state: self.seed.clone(),
                age: 0,
            };
            self.reseed_events += 1;
        }
        Ok(Batch {
            indices,
            entries,
            reseeded,
        })
    }

    /// Puts evolved states back in the slots they were drawn from.
    pub fn checkin(&mut self, indices: &[usize], entries: Vec<PoolEntry<T>>) -> Result<()> {
        if indices.len() != entries.len() {
            return Err(Error::Invalid(format!(
                "{} slots for {} states",
                indices.len(),
                entries.len()
            )));
        }
        for &i in indices {
            if !self.checked_out.get(i).copied().unwrap_or(false) {
                return Err(Error::Invalid(format!("pool slot {i} is not checked out")));
            }
        }
        for e in &entries {
            if !e.state.same_shape(&self.seed) {
                return Err(Error::Shape(format!(
                    "pool state {:?} vs seed {:?}",
                    e.state.shape(),
                    self.seed.shape()
                )));
            }
        }
        for (&i, mut e) in indices.iter().zip(entries) {
            e.age = e.age.min(MAX_AGE);
            self.entries[i] = e;
            self.checked_out[i] = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(n: usize) -> CheckpointPool<f32> {
        CheckpointPool::new(Grid::zeros(2, 2, 1), n, 8).unwrap()
    }

    #[test]
    fn full_batch_returns_every_entry_once() {
        let mut p = pool(16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = p.checkout(0, 16, &mut rng).unwrap();
        let mut idx = b.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_reproducible() {
        let draw = |seed| {
            let mut p = pool(32);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            p.checkout(0, 4, &mut rng).unwrap().indices
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn misuse_is_rejected() {
        let mut p = pool(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(p.checkout(0, 5, &mut rng).is_err());
        assert!(p.checkout(0, 0, &mut rng).is_err());
        let b = p.checkout(0, 2, &mut rng).unwrap();
        assert!(p.checkout(1, 1, &mut rng).is_err());
        assert!(p.checkin(&b.indices, vec![]).is_err());
        let wrong = PoolEntry {
            state: Grid::zeros(3, 3, 1),
            age: 1,
        };
        assert!(p.checkin(&b.indices[..1], vec![wrong]).is_err());
        assert!(p.checkin(&b.indices, b.entries.clone()).is_ok());
        assert!(p.checkin(&b.indices, b.entries).is_err());
    }

    #[test]
    fn ages_are_capped() {
        let mut p = pool(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = p.checkout(0, 1, &mut rng).unwrap();
        let e = PoolEntry {
            state: Grid::zeros(2, 2, 1),
            age: MAX_AGE + 7,
        };
        p.checkin(&b.indices, vec![e]).unwrap();
        assert_eq!(p.entries()[0].age, MAX_AGE);
    }
}
