//! Tabular goal-conditioned Q-learning with a target table and greedy policy.
//!
//! Every primitive step costs one, including the step that arrives at the
//! goal, so the fixed point is `Q*(s, a, g) = -1 + E[V*(s', g)]` with
//! `V*(g, g) = 0`, i.e. `V* = -d` without slip and minus the expected
//! hitting time with slip. Arrival is terminal: no bootstrap from `s' = g`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gmdp::{ActionId, GridSpec, StateId, NUM_ACTIONS};
use crate::oracle::OracleTables;
use crate::replay::HerTuple;
use crate::scalar::Scalar;
use crate::value::ValueView;

/// Learning-rate schedule and value range of a [`QTable`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// `alpha = alpha0 / (1 + visits / lr_decay_visits)` per entry.
    pub alpha0: f64,
    pub lr_decay_visits: f64,
    pub init_value: f64,
    /// Lower clamp for TD targets, normally `-horizon`.
    pub floor: f64,
}

impl CriticConfig {
    pub fn for_horizon(horizon: usize) -> Self {
        Self { alpha0: 0.5, lr_decay_visits: 1000.0, init_value: 0.0, floor: -(horizon as f64) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTable<F> {
    n: usize,
    q: Vec<F>,
    visits: Vec<u32>,
    cfg: CriticConfig,
}

#[inline]
fn slot(n: usize, s: StateId, a: ActionId, g: StateId) -> usize {
    (s.0 * n + g.0) * NUM_ACTIONS + a.0
}

fn max_over_actions<F: Scalar>(q: &[F], n: usize, s: StateId, g: StateId) -> F {
    if s == g {
        return F::zero();
    }
    let base = (s.0 * n + g.0) * NUM_ACTIONS;
    q[base..base + NUM_ACTIONS].iter().copied().fold(F::neg_infinity(), F::max)
}

impl<F: Scalar> QTable<F> {
    pub fn new(num_states: usize, cfg: CriticConfig) -> Self {
        let len = num_states * num_states * NUM_ACTIONS;
        Self { n: num_states, q: vec![F::lit(cfg.init_value); len], visits: vec![0; len], cfg }
    }

    /// Rebuilds a table from raw values laid out as `[s][g][a]`.
    pub fn from_raw(num_states: usize, q: Vec<F>, visits: Vec<u32>, cfg: CriticConfig) -> Self {
        assert_eq!(q.len(), num_states * num_states * NUM_ACTIONS);
        assert_eq!(visits.len(), q.len());
        Self { n: num_states, q, visits, cfg }
    }

    /// `Q*` computed from the oracle: `-1 + sum_s' P(s'|s,a) V*(s', g)`.
    pub fn from_oracle(spec: &GridSpec, oracle: &OracleTables<F>, cfg: CriticConfig) -> Self {
        let n = spec.num_states();
        let mut table = Self::new(n, cfg);
        for s in spec.states() {
            for g in spec.states() {
                for a in ActionId::ALL {
                    let q = if s == g {
                        F::zero()
                    } else {
                        let expected: F = spec
                            .transition_dist(s, a)
                            .into_iter()
                            .map(|(t, p)| F::lit(p) * oracle.optimal_value(t, g).expect("connected map"))
                            .sum();
                        expected - F::one()
                    };
                    table.q[slot(n, s, a, g)] = q;
                }
            }
        }
        table
    }

    pub fn config(&self) -> &CriticConfig {
        &self.cfg
    }

    pub fn raw(&self) -> &[F] {
        &self.q
    }

    pub fn visits(&self) -> &[u32] {
        &self.visits
    }

    #[inline]
    pub fn q(&self, s: StateId, a: ActionId, g: StateId) -> F {
        self.q[slot(self.n, s, a, g)]
    }

    pub fn set_q(&mut self, s: StateId, a: ActionId, g: StateId, value: F) {
        self.q[slot(self.n, s, a, g)] = value;
    }

    /// One Q-learning pass over `batch` against `target`. Returns the mean
    /// squared TD error before the update. Tuples that start at their goal
    /// are skipped: those entries are never read.
    pub fn td_update(&mut self, target: &impl ValueView<F>, batch: &[HerTuple]) -> F {
        let floor = F::lit(self.cfg.floor);
        let decay = F::lit(self.cfg.lr_decay_visits);
        let alpha0 = F::lit(self.cfg.alpha0);
        let bounded = self.cfg.init_value >= self.cfg.floor && self.cfg.init_value <= 0.0;
        let mut sq = F::zero();
        let mut count = 0usize;
        for t in batch {
            if t.state == t.goal {
                continue;
            }
            let bootstrap = if t.next_state == t.goal { F::zero() } else { target.value(t.next_state, t.goal) };
            let y = (bootstrap - F::one()).max(floor).min(F::zero());
            let i = slot(self.n, t.state, t.action, t.goal);
            let alpha = alpha0 / (F::one() + F::lit(self.visits[i] as f64) / decay);
            let err = y - self.q[i];
            self.q[i] += alpha * err;
            self.visits[i] = self.visits[i].saturating_add(1);
            sq += err * err;
            count += 1;
            debug_assert!(!bounded || (self.q[i] >= floor && self.q[i] <= F::zero()), "q left [floor, 0]");
        }
        if count == 0 {
            F::zero()
        } else {
            sq / F::lit(count as f64)
        }
    }

    /// Highest-valued action, lowest index on ties.
    pub fn greedy_action(&self, s: StateId, g: StateId) -> ActionId {
        let base = (s.0 * self.n + g.0) * NUM_ACTIONS;
        let row = &self.q[base..base + NUM_ACTIONS];
        let mut best = 0;
        for a in 1..NUM_ACTIONS {
            if row[a] > row[best] {
                best = a;
            }
        }
        ActionId(best)
    }

    /// Uniform random action with probability `epsilon`, greedy otherwise.
    pub fn act_epsilon_greedy<R: Rng + ?Sized>(&self, s: StateId, g: StateId, epsilon: f64, rng: &mut R) -> ActionId {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            ActionId(rng.gen_range(0..NUM_ACTIONS))
        } else {
            self.greedy_action(s, g)
        }
    }
}

impl<F: Scalar> ValueView<F> for QTable<F> {
    fn num_states(&self) -> usize {
        self.n
    }

    #[inline]
    fn value(&self, s: StateId, g: StateId) -> F {
        max_over_actions(&self.q, self.n, s, g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// `target <- rate * live + (1 - rate) * target`, once per episode.
    Polyak { rate: f64 },
    /// Full copy every `every` critic updates.
    Periodic { every: u64 },
}

impl Default for TargetMode {
    fn default() -> Self {
        TargetMode::Periodic { every: 100 }
    }
}

/// Frozen copy of a [`QTable`]'s values used for bootstrapping.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetQ<F> {
    n: usize,
    q: Vec<F>,
    mode: TargetMode,
    syncs: u64,
}

impl<F: Scalar> TargetQ<F> {
    pub fn new(live: &QTable<F>, mode: TargetMode) -> Self {
        Self { n: live.n, q: live.q.clone(), mode, syncs: 0 }
    }

    pub fn mode(&self) -> TargetMode {
        self.mode
    }

    pub fn raw(&self) -> &[F] {
        &self.q
    }

    /// Applies the mode: a Polyak blend, or a periodic copy when the sync
    /// counter reaches a multiple of the period.
    pub fn sync(&mut self, live: &QTable<F>) {
        self.syncs += 1;
        match self.mode {
            TargetMode::Polyak { rate } => {
                let rate = F::lit(rate);
                for (t, &l) in self.q.iter_mut().zip(&live.q) {
                    *t = rate * l + (F::one() - rate) * *t;
                }
            }
            TargetMode::Periodic { every } => {
                if self.syncs.is_multiple_of(every.max(1)) {
                    self.q.copy_from_slice(&live.q);
                }
            }
        }
    }

    pub fn hard_sync(&mut self, live: &QTable<F>) {
        self.q.copy_from_slice(&live.q);
    }
}

impl<F: Scalar> ValueView<F> for TargetQ<F> {
    fn num_states(&self) -> usize {
        self.n
    }

    #[inline]
    fn value(&self, s: StateId, g: StateId) -> F {
        max_over_actions(&self.q, self.n, s, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DEFAULT_TOL;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tuple(s: usize, a: ActionId, s_next: usize, g: usize) -> HerTuple {
        HerTuple {
            state: StateId(s),
            action: a,
            reward: crate::gmdp::reward(StateId(s_next), StateId(g)),
            next_state: StateId(s_next),
            goal: StateId(g),
            episode: 0,
            step: 0,
            goal_index: None,
        }
    }

    fn unit_rate(horizon: usize) -> CriticConfig {
        CriticConfig { alpha0: 1.0, lr_decay_visits: f64::INFINITY, ..CriticConfig::for_horizon(horizon) }
    }

    #[test]
    fn arrival_target_is_terminal() {
        let mut q = QTable::<f64>::new(3, unit_rate(12));
        let target = TargetQ::new(&QTable::new(3, CriticConfig { init_value: -5.0, ..unit_rate(12) }), TargetMode::default());
        q.td_update(&target, &[tuple(1, ActionId::EAST, 2, 2)]);
        assert_eq!(q.q(StateId(1), ActionId::EAST, StateId(2)), -1.0);
    }

    #[test]
    fn fixed_point_update_is_noop() {
        let mut q = QTable::<f64>::new(3, CriticConfig::for_horizon(12));
        q.set_q(StateId(0), ActionId::EAST, StateId(2), -2.0);
        let mut t = QTable::<f64>::new(3, CriticConfig::for_horizon(12));
        for a in ActionId::ALL {
            t.set_q(StateId(1), a, StateId(2), -1.0);
        }
        let target = TargetQ::new(&t, TargetMode::default());
        q.td_update(&target, &[tuple(0, ActionId::EAST, 1, 2)]);
        assert_eq!(q.q(StateId(0), ActionId::EAST, StateId(2)), -2.0);
    }

    #[test]
    fn sweep_per_distance_level_recovers_corridor_distances() {
        let spec = GridSpec::corridor(5).unwrap();
        let mut q = QTable::<f64>::new(5, unit_rate(spec.horizon()));
        let mut target = TargetQ::new(&q, TargetMode::Periodic { every: 1 });
        let batch: Vec<HerTuple> = spec
            .states()
            .flat_map(|s| spec.states().map(move |g| (s, g)))
            .flat_map(|(s, g)| ActionId::ALL.map(|a| tuple(s.0, a, spec.intended(s, a).0, g.0)))
            .collect();
        for _ in 0..5 {
            q.td_update(&target, &batch);
            target.sync(&q);
        }
        for s in spec.states() {
            for g in spec.states() {
                assert_eq!(q.value(s, g), -((s.0 as f64) - (g.0 as f64)).abs());
            }
        }
        assert_eq!(q.value(StateId(0), StateId(4)), -4.0);
        assert_eq!(q.greedy_action(StateId(1), StateId(4)), ActionId::EAST);
    }

    #[test]
    fn value_and_tie_breaks() {
        let q = QTable::<f64>::new(4, CriticConfig { init_value: -1.0, ..CriticConfig::for_horizon(16) });
        assert_eq!(q.value(StateId(2), StateId(2)), 0.0);
        assert_eq!(q.value(StateId(0), StateId(3)), -1.0);
        assert_eq!(q.greedy_action(StateId(0), StateId(3)), ActionId(0));
        let mut q = q;
        q.set_q(StateId(0), ActionId::WEST, StateId(3), -0.5);
        assert_eq!(q.greedy_action(StateId(0), StateId(3)), ActionId::WEST);
    }

    #[test]
    fn oracle_table_is_bellman_consistent() {
        let spec = GridSpec::open(3, 3).unwrap().with_slip(0.2).unwrap();
        let oracle = OracleTables::<f64>::compute(&spec, DEFAULT_TOL).unwrap();
        let q = QTable::from_oracle(&spec, &oracle, CriticConfig::for_horizon(spec.horizon()));
        for s in spec.states() {
            for g in spec.states() {
                let v = q.value(s, g);
                assert!((v - oracle.optimal_value(s, g).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn epsilon_extremes() {
        let mut q = QTable::<f64>::new(2, CriticConfig::for_horizon(8));
        q.set_q(StateId(0), ActionId::SOUTH, StateId(1), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(q.act_epsilon_greedy(StateId(0), StateId(1), 0.0, &mut rng), ActionId::SOUTH);
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| q.act_epsilon_greedy(StateId(0), StateId(1), 0.5, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn uniform_exploration_passes_chi_square() {
        let q = QTable::<f64>::new(2, CriticConfig::for_horizon(8));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        let mut counts = [0usize; NUM_ACTIONS];
        for _ in 0..draws {
            counts[q.act_epsilon_greedy(StateId(0), StateId(1), 1.0, &mut rng).0] += 1;
        }
        let expected = draws as f64 / NUM_ACTIONS as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 3 degrees of freedom.
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn target_modes() {
        let mut live = QTable::<f64>::new(2, CriticConfig { init_value: -4.0, ..CriticConfig::for_horizon(8) });
        let mut target = TargetQ::new(&live, TargetMode::Polyak { rate: 1.0 });
        live.set_q(StateId(0), ActionId::NORTH, StateId(1), -1.0);
        target.sync(&live);
        assert_eq!(target.raw(), live.raw());

        let start = QTable::<f64>::new(2, CriticConfig { init_value: -4.0, ..CriticConfig::for_horizon(8) });
        let constant = QTable::<f64>::new(2, CriticConfig { init_value: 0.0, ..CriticConfig::for_horizon(8) });
        let mut target = TargetQ::new(&start, TargetMode::Polyak { rate: 0.5 });
        target.sync(&constant);
        target.sync(&constant);
        for &t in target.raw() {
            assert!(t.abs() <= 0.25 * 4.0 + 1e-12);
        }

        let mut target = TargetQ::new(&start, TargetMode::Periodic { every: 1 });
        let mut live = start.clone();
        live.set_q(StateId(1), ActionId::EAST, StateId(0), -2.0);
        target.sync(&live);
        assert_eq!(target.raw(), live.raw());

        let mut target = TargetQ::new(&start, TargetMode::Periodic { every: 3 });
        target.sync(&live);
        target.sync(&live);
        assert_eq!(target.raw(), start.raw());
        target.sync(&live);
        assert_eq!(target.raw(), live.raw());
    }

    #[test]
    fn distinct_entries_update_order_free() {
        let spec = GridSpec::open(3, 3).unwrap();
        let base = QTable::<f64>::new(9, CriticConfig::for_horizon(36));
        let target = TargetQ::new(&QTable::new(9, CriticConfig { init_value: -3.0, ..CriticConfig::for_horizon(36) }), TargetMode::default());
        let batch: Vec<HerTuple> = spec
            .states()
            .flat_map(|s| ActionId::ALL.map(|a| tuple(s.0, a, spec.intended(s, a).0, 4)))
            .collect();
        let mut forward = base.clone();
        forward.td_update(&target, &batch);
        let mut reversed = base;
        let rev: Vec<_> = batch.iter().rev().copied().collect();
        reversed.td_update(&target, &rev);
        assert_eq!(forward, reversed);
    }
}
