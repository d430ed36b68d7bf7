use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// One `(state, action, reward)` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `B x state_dim`
    pub states: DMatrix<f64>,
    /// `B x action_dim`
    pub actions: DMatrix<f64>,
    pub rewards: DVector<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_experiences(items: &[Experience]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        if items.iter().any(|e| e.state.len() != sd || e.action.len() != ad) {
            return Err(Error::dimension("batch", format!("{sd}+{ad}"), "ragged experiences"));
        }
        Ok(Self {
            states: DMatrix::from_fn(items.len(), sd, |r, c| items[r].state[c]),
            actions: DMatrix::from_fn(items.len(), ad, |r, c| items[r].action[c]),
            rewards: DVector::from_iterator(items.len(), items.iter().map(|e| e.reward)),
        })
    }

    /// `[state | action]` rows, the critic input.
    pub fn critic_input(&self) -> DMatrix<f64> {
        concat_columns(&self.states, &self.actions)
    }
}

pub fn concat_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Fixed-capacity FIFO ring of experiences.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    min_samples: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    /// Slot the next push writes to.
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, min_samples: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 || min_samples == 0 || min_samples > capacity {
            return Err(Error::Config(format!(
                "buffer needs 0 < min_samples ({min_samples}) <= capacity ({capacity})"
            )));
        }
        Ok(Self {
            capacity,
            min_samples,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            head: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn min_samples(&self) -> usize {
        self.min_samples
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ready(&self) -> bool {
        self.len >= self.min_samples
    }

    pub fn push(&mut self, e: Experience) -> Result<()> {
        if e.state.len() != self.state_dim || e.action.len() != self.action_dim {
            return Err(Error::dimension(
                "experience",
                format!("{}+{}", self.state_dim, self.action_dim),
                format!("{}+{}", e.state.len(), e.action.len()),
            ));
        }
        if !(e.reward.is_finite() && e.reward >= 0.0) {
            return Err(Error::NonFinite(format!("reward {}", e.reward)));
        }
        if e.state.iter().chain(&e.action).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("experience state or action".into()));
        }
        if self.len < self.capacity {
            self.states.extend(&e.state);
            self.actions.extend(&e.action);
            self.rewards.push(e.reward);
            self.len += 1;
        } else {
            let h = self.head;
            self.states[h * self.state_dim..(h + 1) * self.state_dim].copy_from_slice(&e.state);
            self.actions[h * self.action_dim..(h + 1) * self.action_dim].copy_from_slice(&e.action);
            self.rewards[h] = e.reward;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Experience by age, `0` being the oldest held.
    pub fn get(&self, index: usize) -> Option<Experience> {
        if index >= self.len {
            return None;
        }
        let start = if self.len < self.capacity { 0 } else { self.head };
        Some(self.slot((start + index) % self.capacity))
    }

    fn slot(&self, s: usize) -> Experience {
        Experience {
            state: self.states[s * self.state_dim..(s + 1) * self.state_dim].to_vec(),
            action: self.actions[s * self.action_dim..(s + 1) * self.action_dim].to_vec(),
            reward: self.rewards[s],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Experience> + '_ {
        (0..self.len).filter_map(|i| self.get(i))
    }

    /// `B` slots drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if !self.ready() {
            return Err(Error::BufferUnderfilled {
                have: self.len,
                need: self.min_samples,
            });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Batch> {
        let idx = self.sample_indices(batch, rng)?;
        Ok(Batch {
            states: DMatrix::from_fn(batch, self.state_dim, |r, c| self.states[idx[r] * self.state_dim + c]),
            actions: DMatrix::from_fn(batch, self.action_dim, |r, c| self.actions[idx[r] * self.action_dim + c]),
            rewards: DVector::from_iterator(batch, idx.iter().map(|&i| self.rewards[i])),
        })
    }

    /// Flat persistence: `[capacity, min, state_dim, action_dim, head, len]` and the data.
    pub fn to_parts(&self) -> (Vec<u64>, Vec<f64>) {
        let header = [self.capacity, self.min_samples, self.state_dim, self.action_dim, self.head, self.len]
            .iter()
            .map(|&v| v as u64)
            .collect();
        let mut data = self.states.clone();
        data.extend(&self.actions);
        data.extend(&self.rewards);
        (header, data)
    }

    pub fn from_parts(header: &[u64], data: &[f64]) -> Result<Self> {
        let bad = || Error::Config("corrupt replay buffer record".into());
        let h: Vec<usize> = header.iter().map(|&v| usize::try_from(v).map_err(|_| bad())).collect::<Result<_>>()?;
        let [capacity, min_samples, state_dim, action_dim, head, len] = h[..] else {
            return Err(bad());
        };
        let mut buf = Self::new(capacity, min_samples, state_dim, action_dim)?;
        let (s, a) = (len * state_dim, len * action_dim);
        if len > capacity || head >= capacity || data.len() != s + a + len {
            return Err(bad());
        }
        buf.states = data[..s].to_vec();
        buf.actions = data[s..s + a].to_vec();
        buf.rewards = data[s + a..].to_vec();
        buf.head = head;
        buf.len = len;
        Ok(buf)
    }
}
