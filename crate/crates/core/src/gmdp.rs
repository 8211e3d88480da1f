//! Finite goal-conditioned gridworld: states, actions, dynamics and the sparse reward.
//!
//! Goals live in the state space. Blocked moves are self-loops, and slip
//! noise only ever perturbs a move into one of its two perpendicular
//! directions. The horizon is carried here but enforced by the episode
//! runner, so every oracle computation is horizon-free.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a free cell, row-major over the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

pub const NUM_ACTIONS: usize = 4;

impl ActionId {
    pub const NORTH: ActionId = ActionId(0);
    pub const SOUTH: ActionId = ActionId(1);
    pub const EAST: ActionId = ActionId(2);
    pub const WEST: ActionId = ActionId(3);
    pub const ALL: [ActionId; NUM_ACTIONS] = [Self::NORTH, Self::SOUTH, Self::EAST, Self::WEST];

    /// (row, col) displacement.
    fn delta(self) -> (isize, isize) {
        match self.0 {
            0 => (-1, 0),
            1 => (1, 0),
            2 => (0, 1),
            3 => (0, -1),
            _ => unreachable!("invalid action {}", self.0),
        }
    }

    pub fn perpendicular(self) -> [ActionId; 2] {
        match self.0 {
            0 | 1 => [Self::EAST, Self::WEST],
            _ => [Self::NORTH, Self::SOUTH],
        }
    }

    pub fn name(self) -> &'static str {
        ["N", "S", "E", "W"][self.0]
    }
}

/// Sparse shortest-path reward: 0 on arrival at the goal, -1 otherwise.
///
/// Depends on the arrival state only; the departure state and action are
/// irrelevant.
#[inline]
pub fn reward(next_state: StateId, goal: StateId) -> i32 {
    if next_state == goal {
        0
    } else {
        -1
    }
}

/// A finite goal-conditioned MDP over the free cells of a rectangular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    width: usize,
    height: usize,
    walls: BTreeSet<(usize, usize)>,
    slip_prob: f64,
    horizon: usize,
    initial_states: Vec<StateId>,
    cells: Vec<(usize, usize)>,
    index: Vec<Option<StateId>>,
    moves: Vec<[StateId; NUM_ACTIONS]>,
}

impl GridSpec {
    /// Builds a deterministic grid. An empty `initial` means every free cell
    /// may start an episode. The horizon defaults to four times the number
    /// of states.
    pub fn new(
        width: usize,
        height: usize,
        walls: BTreeSet<(usize, usize)>,
        initial: &[(usize, usize)],
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid("grid must have at least one row and column".into()));
        }
        if let Some(&(r, c)) = walls.iter().find(|&&(r, c)| r >= height || c >= width) {
            return Err(Error::InvalidGrid(format!("wall ({r}, {c}) outside the grid")));
        }
        let mut index = vec![None; width * height];
        let mut cells = Vec::new();
        for r in 0..height {
            for c in 0..width {
                if !walls.contains(&(r, c)) {
                    index[r * width + c] = Some(StateId(cells.len()));
                    cells.push((r, c));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidGrid("no free cells".into()));
        }
        let mut initial_states = Vec::with_capacity(initial.len());
        for &(r, c) in initial {
            let free = if r < height && c < width { index[r * width + c] } else { None };
            match free {
                Some(s) => initial_states.push(s),
                _ => {
                    return Err(Error::InvalidGrid(format!(
                        "initial state ({r}, {c}) is not a free cell"
                    )))
                }
            }
        }
        initial_states.sort();
        initial_states.dedup();
        if initial_states.is_empty() {
            initial_states = (0..cells.len()).map(StateId).collect();
        }
        let moves = cells
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                ActionId::ALL.map(|a| {
                    let (dr, dc) = a.delta();
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr as usize >= height || nc as usize >= width {
                        return StateId(i);
                    }
                    index[nr as usize * width + nc as usize].unwrap_or(StateId(i))
                })
            })
            .collect();
        let horizon = 4 * cells.len();
        Ok(Self {
            width,
            height,
            walls,
            slip_prob: 0.0,
            horizon,
            initial_states,
            cells,
            index,
            moves,
        })
    }

    pub fn with_slip(mut self, slip_prob: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&slip_prob) {
            return Err(Error::InvalidGrid(format!("slip probability {slip_prob} not in [0, 1)")));
        }
        self.slip_prob = slip_prob;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidGrid("horizon must be at least 1".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// A 1 x `cells` corridor with no walls.
    pub fn corridor(cells: usize) -> Result<Self> {
        Self::new(cells, 1, BTreeSet::new(), &[])
    }

    pub fn open(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, BTreeSet::new(), &[])
    }

    pub fn num_states(&self) -> usize {
        self.cells.len()
    }

    pub fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn walls(&self) -> &BTreeSet<(usize, usize)> {
        &self.walls
    }

    pub fn slip_prob(&self) -> f64 {
        self.slip_prob
    }

    pub fn is_deterministic(&self) -> bool {
        self.slip_prob == 0.0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_states(&self) -> &[StateId] {
        &self.initial_states
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.cells.len()).map(StateId)
    }

    pub fn cell(&self, s: StateId) -> (usize, usize) {
        self.cells[s.0]
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<StateId> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.index[row * self.width + col]
    }

    /// The outcome of `a` without slip.
    #[inline]
    pub fn intended(&self, s: StateId, a: ActionId) -> StateId {
        self.moves[s.0][a.0]
    }

    /// Outcome distribution of `(s, a)`, merged over coinciding outcomes and
    /// sorted by state.
    pub fn transition_dist(&self, s: StateId, a: ActionId) -> Vec<(StateId, f64)> {
        let mut out: Vec<(StateId, f64)> = Vec::with_capacity(3);
        let mut add = |t: StateId, p: f64| {
            if p == 0.0 {
                return;
            }
            match out.iter_mut().find(|(u, _)| *u == t) {
                Some(entry) => entry.1 += p,
                None => out.push((t, p)),
            }
        };
        add(self.intended(s, a), 1.0 - self.slip_prob);
        for side in a.perpendicular() {
            add(self.intended(s, side), 0.5 * self.slip_prob);
        }
        out.sort_by_key(|&(t, _)| t);
        out
    }

    /// Samples the next state.
    pub fn step<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> StateId {
        if self.slip_prob == 0.0 {
            return self.intended(s, a);
        }
        let u: f64 = rng.gen();
        let [left, right] = a.perpendicular();
        if u < 1.0 - self.slip_prob {
            self.intended(s, a)
        } else if u < 1.0 - 0.5 * self.slip_prob {
            self.intended(s, left)
        } else {
            self.intended(s, right)
        }
    }

    /// Successors of `s` with positive probability under some action.
    pub fn support_successors(&self, s: StateId) -> BTreeSet<StateId> {
        ActionId::ALL
            .iter()
            .flat_map(|&a| self.transition_dist(s, a))
            .map(|(t, _)| t)
            .collect()
    }

    /// First ordered pair `(from, to)` such that `to` is unreachable from
    /// `from`, or `None` when the support graph is strongly connected.
    pub fn disconnected_pair(&self) -> Option<(StateId, StateId)> {
        let n = self.num_states();
        let succ: Vec<BTreeSet<StateId>> = self.states().map(|s| self.support_successors(s)).collect();
        let mut pred = vec![Vec::new(); n];
        for (s, outs) in succ.iter().enumerate() {
            for t in outs {
                pred[t.0].push(StateId(s));
            }
        }
        let reach = |adj: &dyn Fn(usize) -> Vec<StateId>| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for v in adj(u) {
                    if !seen[v.0] {
                        seen[v.0] = true;
                        queue.push_back(v.0);
                    }
                }
            }
            seen
        };
        let forward = reach(&|u| succ[u].iter().copied().collect());
        if let Some(t) = forward.iter().position(|&x| !x) {
            return Some((StateId(0), StateId(t)));
        }
        let backward = reach(&|u| pred[u].clone());
        backward.iter().position(|&x| !x).map(|s| (StateId(s), StateId(0)))
    }

    /// Every state reaches every other with positive probability.
    pub fn is_communicating(&self) -> bool {
        self.disconnected_pair().is_none()
    }

    /// Map text in the same grammar [`parse_grid`] accepts.
    pub fn render(&self) -> String {
        let all_initial = self.initial_states.len() == self.num_states();
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = match self.state_at(r, c) {
                    None => '#',
                    Some(s) if !all_initial && self.initial_states.binary_search(&s).is_ok() => 'S',
                    Some(_) => '.',
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Renders one character per cell using `label` for free cells.
    pub fn overlay(&self, mut label: impl FnMut(StateId) -> char) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(self.state_at(r, c).map_or('#', &mut label));
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the map grammar: `#` wall, `.` free, `S` free start cell; rows
/// separated by newlines and all of equal length. Trailing blank lines are
/// ignored.
pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let mut rows: Vec<&str> = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    while rows.last().is_some_and(|l| l.trim().is_empty()) {
        rows.pop();
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 1, column: 1, message: "empty map".into() });
    }
    let width = rows[0].chars().count();
    let mut walls = BTreeSet::new();
    let mut starts = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let len = row.chars().count();
        if len != width {
            return Err(Error::Parse {
                line: r + 1,
                column: len.min(width) + 1,
                message: format!("row has {len} cells, expected {width}"),
            });
        }
        for (c, ch) in row.chars().enumerate() {
            match ch {
                '#' => {
                    walls.insert((r, c));
                }
                '.' => {}
                'S' => starts.push((r, c)),
                other => {
                    return Err(Error::Parse {
                        line: r + 1,
                        column: c + 1,
                        message: format!("unexpected character {other:?}"),
                    })
                }
            }
        }
    }
    if walls.len() == width * rows.len() {
        return Err(Error::Parse { line: 1, column: 1, message: "map has no free cells".into() });
    }
    GridSpec::new(width, rows.len(), walls, &starts)
}

/// One environment step as stored in the replay buffer. The reward is
/// relative to the segment subgoal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateId,
    pub action: ActionId,
    pub reward: i32,
    pub next_state: StateId,
    pub subgoal: StateId,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Transition indices at which a new subgoal was issued.
    pub segment_boundaries: Vec<usize>,
    pub final_goal: Option<StateId>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// State at position `i` of the visited sequence `s_0, ..., s_T`.
    pub fn state_at(&self, i: usize) -> StateId {
        if i < self.transitions.len() {
            self.transitions[i].state
        } else {
            assert_eq!(i, self.transitions.len(), "state index out of range");
            self.transitions[i - 1].next_state
        }
    }

    /// Number of visited states, `T + 1`.
    pub fn num_states(&self) -> usize {
        if self.transitions.is_empty() {
            0
        } else {
            self.transitions.len() + 1
        }
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        let mut bounds = self.segment_boundaries.clone();
        bounds.push(self.transitions.len());
        bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TWO_ROOMS_SEALED: &str = "#######\n#..#..#\n#..#..#\n#######\n";
    const TWO_ROOMS_DOOR: &str = "#######\n#..#..#\n#.....#\n#######\n";

    #[test]
    fn parses_smallest_open_grid() {
        let g = parse_grid("..\n..").unwrap();
        assert_eq!(g.num_states(), 4);
        assert_eq!(g.num_actions(), 4);
        assert_eq!(g.initial_states().len(), 4);
    }

    #[test]
    fn parses_single_wall() {
        let g = parse_grid("#.\n..").unwrap();
        assert_eq!(g.num_states(), 3);
        assert!(g.walls().contains(&(0, 0)));
        assert_eq!(g.cell(StateId(0)), (0, 1));
    }

    #[test]
    fn start_cells_define_initial_set() {
        let g = parse_grid("S..\n..S").unwrap();
        assert_eq!(g.initial_states(), &[StateId(0), StateId(5)]);
    }

    #[test]
    fn parse_errors_name_position() {
        match parse_grid("..\n.x") {
            Err(Error::Parse { line: 2, column: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_grid("...\n..") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_grid("##\n##"), Err(Error::Parse { .. })));
        assert!(matches!(parse_grid("\n\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn deterministic_moves_and_blocking() {
        let g = GridSpec::open(3, 3).unwrap();
        let center = g.state_at(1, 1).unwrap();
        let east = g.state_at(1, 2).unwrap();
        assert_eq!(g.transition_dist(center, ActionId::EAST), vec![(east, 1.0)]);
        assert_eq!(g.transition_dist(east, ActionId::EAST), vec![(east, 1.0)]);
        let walled = parse_grid("..#\n...").unwrap();
        let s = walled.state_at(0, 1).unwrap();
        assert_eq!(walled.intended(s, ActionId::EAST), s);
    }

    #[test]
    fn slip_distribution_splits_perpendicular() {
        let g = GridSpec::open(3, 3).unwrap().with_slip(0.2).unwrap();
        let center = g.state_at(1, 1).unwrap();
        let dist = g.transition_dist(center, ActionId::NORTH);
        let mass = |r, c| {
            let t = g.state_at(r, c).unwrap();
            dist.iter().find(|(u, _)| *u == t).map(|(_, p)| *p).unwrap()
        };
        assert!((mass(0, 1) - 0.8).abs() < 1e-12);
        assert!((mass(1, 2) - 0.1).abs() < 1e-12);
        assert!((mass(1, 0) - 0.1).abs() < 1e-12);
        assert!((dist.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reward_depends_on_arrival_only() {
        let g = StateId(3);
        assert_eq!(reward(g, g), 0);
        assert_eq!(reward(StateId(2), g), -1);
        // Departing from the goal without returning is still a step cost.
        assert_eq!(reward(StateId(4), g), -1);
    }

    #[test]
    fn step_is_seed_deterministic() {
        let g = GridSpec::open(4, 4).unwrap().with_slip(0.3).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = StateId(0);
            (0..200)
                .map(|i| {
                    s = g.step(s, ActionId::ALL[i % 4], &mut rng);
                    s
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn deterministic_step_hits_unique_support() {
        let g = GridSpec::open(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in g.states() {
            for a in ActionId::ALL {
                let dist = g.transition_dist(s, a);
                assert_eq!(dist.len(), 1);
                assert_eq!(g.step(s, a, &mut rng), dist[0].0);
            }
        }
    }

    #[test]
    fn communicating_examples() {
        assert!(GridSpec::open(3, 3).unwrap().is_communicating());
        let sealed = parse_grid(TWO_ROOMS_SEALED).unwrap();
        assert!(!sealed.is_communicating());
        assert!(sealed.disconnected_pair().is_some());
        assert!(parse_grid(TWO_ROOMS_DOOR).unwrap().is_communicating());
        assert!(!parse_grid(TWO_ROOMS_SEALED).unwrap().with_slip(0.2).unwrap().is_communicating());
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = GridSpec::open(2, 2).unwrap();
        assert!(g.clone().with_slip(1.0).is_err());
        assert!(g.clone().with_slip(-0.1).is_err());
        assert!(g.with_horizon(0).is_err());
    }

    #[test]
    fn trajectory_state_sequence() {
        let t = |s, n| Transition {
            state: StateId(s),
            action: ActionId::EAST,
            reward: -1,
            next_state: StateId(n),
            subgoal: StateId(9),
        };
        let traj = Trajectory {
            transitions: vec![t(0, 1), t(1, 2), t(2, 3)],
            segment_boundaries: vec![0, 2],
            final_goal: Some(StateId(3)),
        };
        assert_eq!(traj.num_states(), 4);
        assert_eq!(traj.state_at(3), StateId(3));
        assert_eq!(traj.segment_lengths(), vec![2, 1]);
    }
}
