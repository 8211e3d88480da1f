//! Exact ground truth: shortest-path distances, optimal expected hitting
//! times, optimal subgoal sets and the exhaustive anticipation-loss argmin.

use std::collections::VecDeque;
use std::fmt;

use crate::anticipation::{loss_at, LossConfig};
use crate::error::{Error, Result};
use crate::gmdp::{ActionId, GridSpec, StateId};
use crate::scalar::Scalar;
use crate::value::{ValueTable, ValueView};

/// Default sup-norm tolerance for value iteration.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Sweep cap for value iteration.
pub const MAX_SWEEPS: usize = 1_000_000;

/// A shortest-path length, or explicitly unreachable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Distance {
    Finite(u32),
    Unreachable,
}

impl Distance {
    pub fn finite(self) -> Option<u32> {
        match self {
            Distance::Finite(d) => Some(d),
            Distance::Unreachable => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Distance::Finite(_))
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(d) => write!(f, "{d}"),
            Distance::Unreachable => f.write_str("inf"),
        }
    }
}

/// Shortest-path distances `d(s, g)` over the intended-move graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistTable {
    n: usize,
    d: Vec<Distance>,
}

impl DistTable {
    pub fn num_states(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, s: StateId, g: StateId) -> Distance {
        self.d[s.0 * self.n + g.0]
    }

    /// Finite distance or `None`.
    #[inline]
    pub fn steps(&self, s: StateId, g: StateId) -> Option<u32> {
        self.get(s, g).finite()
    }

    /// `V* = -d`, with unreachable pairs mapped to `None`.
    pub fn optimal_value<F: Scalar>(&self, s: StateId, g: StateId) -> Option<F> {
        self.steps(s, g).map(|d| -F::lit(d as f64))
    }

    /// `V* = -d` as a dense view. Panics if any pair is unreachable.
    pub fn value_table<F: Scalar>(&self) -> ValueTable<F> {
        ValueTable::from_fn(self.n, |s, g| {
            self.optimal_value(s, g).expect("value table requires a connected map")
        })
    }

    /// Overwrites one entry. Fault injection for checks.
    pub fn corrupt(&mut self, s: StateId, g: StateId, d: Distance) {
        self.d[s.0 * self.n + g.0] = d;
    }
}

/// Breadth-first search from every goal over the reversed move graph.
///
/// With slip the distances are those of the intended-move skeleton, which
/// lower-bound the expected hitting times.
pub fn shortest_distances(spec: &GridSpec) -> DistTable {
    let n = spec.num_states();
    let mut pred: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for s in spec.states() {
        for a in ActionId::ALL {
            let t = spec.intended(s, a);
            if t != s && !pred[t.0].contains(&s) {
                pred[t.0].push(s);
            }
        }
    }
    let mut d = vec![Distance::Unreachable; n * n];
    let mut queue = VecDeque::new();
    for g in 0..n {
        d[g * n + g] = Distance::Finite(0);
        queue.push_back((g, 0u32));
        while let Some((u, du)) = queue.pop_front() {
            for p in &pred[u] {
                let slot = &mut d[p.0 * n + g];
                if *slot == Distance::Unreachable {
                    *slot = Distance::Finite(du + 1);
                    queue.push_back((p.0, du + 1));
                }
            }
        }
    }
    DistTable { n, d }
}

/// Minimal expected steps `h(s, g)` to reach `g` from `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct HittingTable<F> {
    n: usize,
    h: Vec<F>,
    tol: F,
    sweeps: usize,
}

impl<F: Scalar> HittingTable<F> {
    pub fn num_states(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, s: StateId, g: StateId) -> F {
        self.h[s.0 * self.n + g.0]
    }

    pub fn tol(&self) -> F {
        self.tol
    }

    /// Largest sweep count over all goals.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// `V* = -h` as a dense view.
    pub fn value_table(&self) -> ValueTable<F> {
        ValueTable::from_fn(self.n, |s, g| -self.get(s, g))
    }

    /// Overwrites one entry. Fault injection for checks.
    pub fn corrupt(&mut self, s: StateId, g: StateId, h: F) {
        self.h[s.0 * self.n + g.0] = h;
    }
}

/// Solves `h(g) = 0`, `h(s) = 1 + min_a sum_s' P(s'|s,a) h(s')` per goal by
/// value iteration.
///
/// Iteration starts from the skeleton distances, which the Bellman operator
/// maps upward, so the iterates increase monotonically to the fixed point.
/// A sweep sequence stops once the sup-norm change is below `tol` and the
/// geometric-tail estimate of the remaining error is below `tol` as well.
pub fn expected_hitting_times<F: Scalar>(spec: &GridSpec, tol: F) -> Result<HittingTable<F>> {
    if let Some((from, to)) = spec.disconnected_pair() {
        return Err(Error::NotCommunicating { from, to });
    }
    let n = spec.num_states();
    let dist = shortest_distances(spec);
    let dynamics: Vec<Vec<Vec<(usize, F)>>> = spec
        .states()
        .map(|s| {
            ActionId::ALL
                .iter()
                .map(|&a| {
                    spec.transition_dist(s, a)
                        .into_iter()
                        .map(|(t, p)| (t.0, F::lit(p)))
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut h = vec![F::zero(); n * n];
    let mut max_sweeps = 0;
    let mut column = vec![F::zero(); n];
    let mut next = vec![F::zero(); n];
    for g in 0..n {
        for (s, c) in column.iter_mut().enumerate() {
            let d = dist.steps(StateId(s), StateId(g)).expect("communicating map is connected");
            *c = F::lit(d as f64);
        }
        let mut prev_change = F::infinity();
        let mut sweeps = 0;
        loop {
            if sweeps >= MAX_SWEEPS {
                return Err(Error::NoConvergence { iterations: sweeps, last_change: prev_change.as_f64() });
            }
            sweeps += 1;
            let mut change = F::zero();
            for s in 0..n {
                if s == g {
                    next[s] = F::zero();
                    continue;
                }
                let best = dynamics[s]
                    .iter()
                    .map(|outcomes| outcomes.iter().map(|&(t, p)| p * column[t]).sum::<F>())
                    .fold(F::infinity(), F::min);
                next[s] = F::one() + best;
                change = change.max((next[s] - column[s]).abs());
            }
            std::mem::swap(&mut column, &mut next);
            if change == F::zero() {
                break;
            }
            if change < tol && prev_change.is_finite() {
                let ratio = change / prev_change;
                if ratio < F::one() && change * ratio / (F::one() - ratio) < tol {
                    break;
                }
            }
            prev_change = change;
        }
        max_sweeps = max_sweeps.max(sweeps);
        for s in 0..n {
            h[s * n + g] = column[s];
        }
    }
    Ok(HittingTable { n, h, tol, sweeps: max_sweeps })
}

/// Ground-truth tables for one environment.
#[derive(Clone, Debug)]
pub struct OracleTables<F> {
    pub dist: DistTable,
    /// Present for communicating maps; equals `dist` without slip.
    pub hitting: Option<HittingTable<F>>,
    pub tol: F,
    deterministic: bool,
}

impl<F: Scalar> OracleTables<F> {
    /// Distances always; hitting times when the map is communicating.
    /// A stochastic map that is not communicating is refused.
    pub fn compute(spec: &GridSpec, tol: F) -> Result<Self> {
        let dist = shortest_distances(spec);
        let hitting = if spec.is_deterministic() && !spec.is_communicating() {
            None
        } else {
            Some(expected_hitting_times(spec, tol)?)
        };
        Ok(Self { dist, hitting, tol, deterministic: spec.is_deterministic() })
    }

    pub fn num_states(&self) -> usize {
        self.dist.num_states()
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Optimal cost: `d` without slip, expected hitting time with slip.
    pub fn optimal_cost(&self, s: StateId, g: StateId) -> Option<F> {
        if self.deterministic {
            self.dist.steps(s, g).map(|d| F::lit(d as f64))
        } else {
            self.hitting.as_ref().map(|h| h.get(s, g))
        }
    }

    /// `V*(s, g) = -optimal_cost(s, g)`.
    pub fn optimal_value(&self, s: StateId, g: StateId) -> Option<F> {
        self.optimal_cost(s, g).map(|c| -c)
    }

    /// Dense `V*`. Panics on maps with unreachable pairs.
    pub fn value_table(&self) -> ValueTable<F> {
        ValueTable::from_fn(self.num_states(), |s, g| {
            self.optimal_value(s, g).expect("optimal value requires a connected map")
        })
    }
}

/// `{ z : d(s, z) + d(z, g) = d(s, g) }`, sorted. Empty if `g` is
/// unreachable from `s`.
pub fn optimal_subgoal_set(s: StateId, g: StateId, dist: &DistTable) -> Vec<StateId> {
    let Some(total) = dist.steps(s, g) else {
        return Vec::new();
    };
    (0..dist.num_states())
        .map(StateId)
        .filter(|&z| match (dist.steps(s, z), dist.steps(z, g)) {
            (Some(a), Some(b)) => a + b == total,
            _ => false,
        })
        .collect()
}

/// Candidate minimizing the regularized anticipation loss at `(s, g)` under
/// `values`; ties go to the lowest state id.
pub fn brute_force_anticipation_argmin<F: Scalar>(
    s: StateId,
    g: StateId,
    values: &impl ValueView<F>,
    cfg: &LossConfig<F>,
) -> StateId {
    let mut best = StateId(0);
    let mut best_loss = F::infinity();
    for z in (0..values.num_states()).map(StateId) {
        let loss = loss_at(s, g, z, values, cfg).total;
        if loss < best_loss {
            best = z;
            best_loss = loss;
        }
    }
    best
}
