//! Episode-structured replay buffer with stored recurrent states.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::valuenet::{AgentWindow, SequenceSample};

/// Joint experience of one episode of `T` slots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeRecord {
    /// `[agent][t]`, `T + 1` encoded observations per agent.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `[agent][t]`, recurrent state before observation `t`, `T + 1` per agent.
    pub hidden: Vec<Vec<Vec<f64>>>,
    /// `[agent][t]`, `T` action indices per agent.
    pub actions: Vec<Vec<usize>>,
    /// `T` team rewards.
    pub rewards: Vec<f64>,
}

impl EpisodeRecord {
    pub fn new(n_agents: usize) -> Self {
        Self {
            obs: vec![Vec::new(); n_agents],
            hidden: vec![Vec::new(); n_agents],
            actions: vec![Vec::new(); n_agents],
            rewards: Vec::new(),
        }
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        for a in 0..self.obs.len() {
            if self.obs[a].len() != t + 1 || self.hidden[a].len() != t + 1 {
                return Err(Error::Shape { expected: t + 1, actual: self.obs[a].len().min(self.hidden[a].len()) });
            }
            if self.actions[a].len() != t {
                return Err(Error::Shape { expected: t, actual: self.actions[a].len() });
            }
        }
        Ok(())
    }

    /// Window of `len` transitions starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> SequenceSample {
        SequenceSample {
            agents: (0..self.obs.len())
                .map(|a| AgentWindow {
                    h_start: self.hidden[a][start].clone(),
                    h_next: self.hidden[a][start + 1].clone(),
                    obs: self.obs[a][start..=start + len].to_vec(),
                    actions: self.actions[a][start..start + len].to_vec(),
                })
                .collect(),
            rewards: self.rewards[start..start + len].to_vec(),
        }
    }
}

/// Holds at most `capacity` transitions; whole episodes are evicted oldest first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, episodes: VecDeque::new(), transitions: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn push(&mut self, episode: EpisodeRecord) -> Result<()> {
        episode.validate()?;
        if episode.len() > self.capacity {
            return Err(Error::Config(format!(
                "episode of {} transitions exceeds buffer capacity {}",
                episode.len(),
                self.capacity
            )));
        }
        while self.transitions + episode.len() > self.capacity {
            let old = self.episodes.pop_front().expect("buffer holds transitions");
            self.transitions -= old.len();
        }
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        Ok(())
    }

    /// `batch` windows of up to `window` transitions, anchored at uniformly
    /// drawn transitions and shifted left where they would overrun an episode.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, window: usize, rng: &mut R) -> Result<Vec<SequenceSample>> {
        if self.transitions == 0 || batch == 0 || window == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut k = rng.random_range(0..self.transitions);
            let ep = self
                .episodes
                .iter()
                .find(|e| {
                    if k < e.len() {
                        true
                    } else {
                        k -= e.len();
                        false
                    }
                })
                .expect("index within stored transitions");
            let len = window.min(ep.len());
            let start = k.min(ep.len() - len);
            out.push(ep.window(start, len));
        }
        Ok(out)
    }
}
