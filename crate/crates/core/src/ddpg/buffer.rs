use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::sim::Observation;

/// One `(s, a, r, s', done)` tuple. `action` is in m/s^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: f64,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 20)), cursor: 0 }
    }

    /// A buffer sized exactly to hold `transitions`.
    pub fn from_transitions(transitions: Vec<Transition>) -> Self {
        let capacity = transitions.len().max(1);
        Self { capacity, items: transitions, cursor: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions in storage order (not insertion order once wrapped).
    pub fn as_slice(&self) -> &[Transition] {
        &self.items
    }

    /// Oldest-first iteration.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform indices drawn with replacement.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Result<Vec<Transition>> {
        if self.is_empty() && n > 0 {
            return invalid("cannot sample from an empty replay buffer");
        }
        Ok(self.sample_indices(rng, n).into_iter().map(|i| self.items[i]).collect())
    }
}

/// Number of practical transitions in a batch of `batch` at ratio `r`
/// (round half up).
pub fn practical_share(batch: usize, r: f64) -> usize {
    ((r * batch as f64) + 0.5).floor() as usize
}

/// A minibatch with `round(r B)` practical transitions and the remainder from
/// the simulation buffer, both drawn uniformly with replacement, then shuffled.
/// Also returns how many came from the practical buffer.
pub fn sample_mixed<R: Rng>(
    sim: &ReplayBuffer,
    practical: &ReplayBuffer,
    batch: usize,
    r: f64,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    Ok(sample_mixed_tagged(sim, practical, batch, r, rng)?.into_iter().map(|(t, _)| t).collect())
}

/// Like [`sample_mixed`] but tags each transition with `true` when it came from
/// the practical buffer.
pub fn sample_mixed_tagged<R: Rng>(
    sim: &ReplayBuffer,
    practical: &ReplayBuffer,
    batch: usize,
    r: f64,
    rng: &mut R,
) -> Result<Vec<(Transition, bool)>> {
    if !(0.0..=1.0).contains(&r) {
        return invalid(format!("mixing ratio must lie in [0, 1], got {r}"));
    }
    let n_p = practical_share(batch, r).min(batch);
    let n_s = batch - n_p;
    if n_p > 0 && practical.is_empty() {
        return invalid("practical buffer is empty but the ratio requires practical samples");
    }
    if n_s > 0 && sim.is_empty() {
        return invalid("simulation buffer is empty but the ratio requires simulation samples");
    }
    let mut out = Vec::with_capacity(batch);
    out.extend(practical.sample(rng, n_p)?.into_iter().map(|t| (t, true)));
    out.extend(sim.sample(rng, n_s)?.into_iter().map(|t| (t, false)));
    out.shuffle(rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition {
            state: Observation([i as f64, 0.0, 0.0, 0.0]),
            action: 0.0,
            reward: i as f64,
            next_state: Observation::default(),
            done: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(5);
        for i in 0..8 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 5);
        let rewards: Vec<f64> = b.iter_fifo().map(|x| x.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        assert!(b.as_slice().iter().all(|x| x.reward >= 3.0));
    }

    #[test]
    fn mixed_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sim = ReplayBuffer::from_transitions((0..10).map(t).collect());
        let prac = ReplayBuffer::from_transitions((100..110).map(t).collect());
        let count = |r: f64, rng: &mut ChaCha8Rng| {
            sample_mixed_tagged(&sim, &prac, 32, r, rng).unwrap().iter().filter(|x| x.1).count()
        };
        assert_eq!(count(1.0, &mut rng), 32);
        assert_eq!(count(0.6, &mut rng), 19);
        assert_eq!(count(0.0, &mut rng), 0);
        assert_eq!(practical_share(32, 0.5), 16);
    }

    #[test]
    fn mixed_rejects_empty_required_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sim = ReplayBuffer::from_transitions((0..4).map(t).collect());
        let empty = ReplayBuffer::new(4);
        assert!(sample_mixed(&sim, &empty, 32, 0.1, &mut rng).is_err());
        assert!(sample_mixed(&sim, &empty, 32, 0.0, &mut rng).is_ok());
        assert!(sample_mixed(&empty, &sim, 32, 1.0, &mut rng).is_ok());
        assert!(sample_mixed(&empty, &sim, 32, 0.9, &mut rng).is_err());
        assert!(sample_mixed(&sim, &sim, 32, 1.2, &mut rng).is_err());
    }
}
