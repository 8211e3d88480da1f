//! Episode storage with hindsight goal relabeling.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gmdp::{reward, ActionId, StateId, Trajectory};

pub const DEFAULT_CAPACITY: usize = 5_000;
pub const DEFAULT_K_RELABEL: usize = 4;

/// Attempts per requested pair before pair sampling gives up.
const PAIR_RETRIES_PER_PAIR: usize = 10;

/// A training tuple `(s, a, r, s', g)` with its provenance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HerTuple {
    pub state: StateId,
    pub action: ActionId,
    pub reward: i32,
    pub next_state: StateId,
    pub goal: StateId,
    pub episode: u64,
    pub step: usize,
    /// Index into the episode's state sequence that supplied the goal;
    /// `None` for the stored (unrelabeled) tuple.
    pub goal_index: Option<usize>,
}

/// Start/end pairs for anticipation training.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<(StateId, StateId)>,
    /// Set when the retry budget ran out before `batch` pairs were found.
    pub short: bool,
}

/// Ring buffer of whole episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<(u64, Trajectory)>,
    capacity: usize,
    total_stored: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { episodes: VecDeque::with_capacity(capacity.min(1024)), capacity, total_stored: 0 }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_stored(&self) -> u64 {
        self.total_stored
    }

    /// Stored episodes, oldest first, with their ids.
    pub fn episodes(&self) -> impl Iterator<Item = (u64, &Trajectory)> {
        self.episodes.iter().map(|(id, t)| (*id, t))
    }

    /// Appends an episode, evicting the oldest when full.
    pub fn store(&mut self, traj: Trajectory) -> Result<()> {
        if traj.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back((self.total_stored, traj));
        self.total_stored += 1;
        Ok(())
    }

    /// Samples `batch` stored transitions and adds `k_relabel` hindsight
    /// copies of each, whose goal is a state reached at a uniformly drawn
    /// later position of the same episode ("future" strategy). Rewards of
    /// relabeled copies are recomputed against the new goal.
    pub fn sample_her_batch<R: Rng + ?Sized>(&self, batch: usize, k_relabel: usize, rng: &mut R) -> Vec<HerTuple> {
        assert!(!self.is_empty(), "cannot sample from an empty buffer");
        let mut out = Vec::with_capacity(batch * (1 + k_relabel));
        for _ in 0..batch {
            let (id, traj) = &self.episodes[rng.gen_range(0..self.episodes.len())];
            let step = rng.gen_range(0..traj.len());
            let t = traj.transitions[step];
            out.push(HerTuple {
                state: t.state,
                action: t.action,
                reward: t.reward,
                next_state: t.next_state,
                goal: t.subgoal,
                episode: *id,
                step,
                goal_index: None,
            });
            for _ in 0..k_relabel {
                // State positions step + 1 ..= len lie strictly after s_step.
                let idx = rng.gen_range(step + 1..=traj.len());
                let goal = traj.state_at(idx);
                out.push(HerTuple {
                    state: t.state,
                    action: t.action,
                    reward: reward(t.next_state, goal),
                    next_state: t.next_state,
                    goal,
                    episode: *id,
                    step,
                    goal_index: Some(idx),
                });
            }
        }
        out
    }

    /// Draws `(s_i, s_j)` with `i < j` from a uniformly chosen episode,
    /// discarding pairs of equal states.
    pub fn sample_state_pairs<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> PairBatch {
        assert!(!self.is_empty(), "cannot sample from an empty buffer");
        let mut pairs = Vec::with_capacity(batch);
        let mut attempts = 0;
        let budget = batch * PAIR_RETRIES_PER_PAIR;
        while pairs.len() < batch && attempts < budget {
            attempts += 1;
            let (_, traj) = &self.episodes[rng.gen_range(0..self.episodes.len())];
            let states = traj.num_states();
            let i = rng.gen_range(0..states - 1);
            let j = rng.gen_range(i + 1..states);
            let (a, b) = (traj.state_at(i), traj.state_at(j));
            if a != b {
                pairs.push((a, b));
            }
        }
        let short = pairs.len() < batch;
        PairBatch { pairs, short }
    }

    /// One JSON record per stored transition.
    pub fn write_records<W: Write>(&self, mut out: W) -> io::Result<()> {
        #[derive(Serialize)]
        struct Record {
            episode: u64,
            step: usize,
            s: usize,
            a: usize,
            r: i32,
            s_next: usize,
            subgoal: usize,
        }
        for (id, traj) in &self.episodes {
            for (step, t) in traj.transitions.iter().enumerate() {
                let rec = Record {
                    episode: *id,
                    step,
                    s: t.state.0,
                    a: t.action.0,
                    r: t.reward,
                    s_next: t.next_state.0,
                    subgoal: t.subgoal.0,
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}
