use crate::envs::{ActionVec, Observation, ACTION_DIM, OBS_LEN};
use crate::numcore::{RngStream, Tensor2};

/// One environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub action: ActionVec,
    pub reward: f64,
    pub next_obs: Observation,
    /// Terminal (not merely truncated) step.
    pub done: bool,
    /// Cached teacher action, if one applies to this step.
    pub teacher_action: Option<ActionVec>,
    /// Steps since the cached teacher action was inferred.
    pub teacher_age: usize,
    /// Discounted return-to-go, attached once the episode ends.
    pub ret: Option<f64>,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            pushed: 0,
        }
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

    /// Stores `t`, evicting the oldest entry when full. Returns a stable id.
    pub fn push(&mut self, t: Transition) -> u64 {
        let id = self.pushed;
        let slot = (id % self.capacity as u64) as usize;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.pushed += 1;
        id
    }

    pub fn get(&self, id: u64) -> Option<&Transition> {
        if id >= self.pushed || id + (self.capacity as u64) < self.pushed {
            return None;
        }
        self.items.get((id % self.capacity as u64) as usize)
    }

    /// Attaches a return to a stored transition; a no-op once it has been evicted.
    pub fn set_return(&mut self, id: u64, ret: f64) {
        if id < self.pushed && id + (self.capacity as u64) >= self.pushed {
            let slot = (id % self.capacity as u64) as usize;
            self.items[slot].ret = Some(ret);
        }
    }

    /// Uniform sample without replacement inside the batch.
    pub fn sample(&self, rng: &mut RngStream, batch_size: usize) -> Vec<&Transition> {
        rng.sample_indices(self.items.len(), batch_size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Column-stacked view of a set of transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Tensor2,
    pub actions: Tensor2,
    pub rewards: Vec<f64>,
    pub next_obs: Tensor2,
    pub dones: Vec<bool>,
    pub teacher_actions: Vec<Option<ActionVec>>,
    pub returns: Vec<Option<f64>>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Batch {
        let n = ts.len();
        let obs_dim = OBS_LEN;
        let act_dim = ACTION_DIM;
        let mut obs = Tensor2::zeros(n, obs_dim);
        let mut next_obs = Tensor2::zeros(n, obs_dim);
        let mut actions = Tensor2::zeros(n, act_dim);
        for (i, t) in ts.iter().enumerate() {
            t.obs.write_into(obs.row_mut(i));
            t.next_obs.write_into(next_obs.row_mut(i));
            actions.row_mut(i).copy_from_slice(&t.action.0);
        }
        Batch {
            obs,
            actions,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs,
            dones: ts.iter().map(|t| t.done).collect(),
            teacher_actions: ts.iter().map(|t| t.teacher_action).collect(),
            returns: ts.iter().map(|t| t.ret).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
