//! Error-constant estimation against the oracle and mechanical checks of
//! the detour and suboptimality bounds.
//!
//! All constants are measured, never assumed. `eps_v` is a maximum over every
//! reachable `(s, g)` pair. `eps_psi`, `eps_pi` and `eps_drift` are maxima
//! over the `(s, ŝ, g)` triples the planner actually produced while
//! evaluating the task set, which is the domain the bounds sum over.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{all_tasks, evaluate, mean_stderr, sample_task, Agent, Phase, SegmentRule, TaskSummary};
use crate::anticipation::{detour_at, AnticipationModel, LossConfig};
use crate::critic::QTable;
use crate::error::{Error, Result};
use crate::gmdp::{GridSpec, StateId};
use crate::oracle::{optimal_subgoal_set, DistTable, OracleTables};
use crate::scalar::Scalar;
use crate::value::ValueView;

/// Absolute slack for floating-point rounding in bound comparisons.
pub const ROUNDING_SLACK: f64 = 1e-9;

/// A maximum together with the size of its domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub domain: usize,
    /// Pairs left out because the goal is unreachable.
    pub excluded: usize,
}

/// `max |V(s, g) - V*(s, g)|` over reachable pairs with `s != g`.
pub fn estimate_eps_v<F: Scalar>(learned: &impl ValueView<F>, oracle: &OracleTables<F>) -> Estimate {
    let n = oracle.num_states();
    let (mut value, mut domain, mut excluded) = (0.0f64, 0, 0);
    for s in (0..n).map(StateId) {
        for g in (0..n).map(StateId).filter(|&g| g != s) {
            match oracle.optimal_value(s, g) {
                Some(v) => {
                    value = value.max((learned.value(s, g) - v).abs().as_f64());
                    domain += 1;
                }
                None => excluded += 1,
            }
        }
    }
    Estimate { value, domain, excluded }
}

/// Pairs `s != g` whose value admits a zero-loss subgoal.
pub fn feasible_pairs<F: Scalar>(values: &impl ValueView<F>, cfg: &LossConfig<F>) -> Vec<(StateId, StateId)> {
    let n = values.num_states();
    (0..n)
        .flat_map(|s| (0..n).map(move |g| (StateId(s), StateId(g))))
        .filter(|&(s, g)| s != g && cfg.is_feasible(values.value(s, g)))
        .collect()
}

/// Maximum detour term at the model's proposal over `pairs`.
pub fn estimate_eps_psi<F: Scalar>(
    model: &AnticipationModel<F>,
    values: &impl ValueView<F>,
    pairs: &[(StateId, StateId)],
) -> F {
    pairs.iter().map(|&(s, g)| detour_at(s, g, model.propose(s, g, values), values)).fold(F::zero(), F::max)
}

/// Maximum detour term over recorded `(s, ŝ, g)` triples.
pub fn max_detour<F: Scalar>(values: &impl ValueView<F>, triples: &[(StateId, StateId, StateId)]) -> F {
    triples.iter().map(|&(s, z, g)| detour_at(s, g, z, values)).fold(F::zero(), F::max)
}

/// Greedy rollout from `s` until `target` is reached; `None` if the horizon
/// runs out first.
pub fn reach_cost<F: Scalar, R: Rng + ?Sized>(
    env: &GridSpec,
    critic: &QTable<F>,
    s: StateId,
    target: StateId,
    rng: &mut R,
) -> Option<usize> {
    let mut cur = s;
    for t in 0..env.horizon() {
        if cur == target {
            return Some(t);
        }
        cur = env.step(cur, critic.greedy_action(cur, target), rng);
    }
    (cur == target).then_some(env.horizon())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCost {
    pub from: StateId,
    pub to: StateId,
    pub mean_cost: f64,
    pub stderr: f64,
    pub optimal_cost: f64,
    /// Rollouts that did not reach `to` within the horizon.
    pub failures: usize,
    pub rollouts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsPi {
    /// Maximum excess cost over pairs without failures; never negative.
    pub value: f64,
    pub per_pair: Vec<PolicyCost>,
    /// Pairs where some rollout failed; tasks using them are exempt from
    /// the suboptimality bound.
    pub failed: Vec<(StateId, StateId)>,
}

/// Greedy-policy excess cost `mean C(s, ŝ) - optimal(s, ŝ)` over `pairs`.
pub fn estimate_eps_pi<F: Scalar, R: Rng + ?Sized>(
    env: &GridSpec,
    critic: &QTable<F>,
    oracle: &OracleTables<F>,
    pairs: &[(StateId, StateId)],
    rollouts: usize,
    rng: &mut R,
) -> Result<EpsPi> {
    assert!(rollouts >= 1, "need at least one rollout");
    let mut out = EpsPi { value: 0.0, per_pair: Vec::with_capacity(pairs.len()), failed: Vec::new() };
    for &(from, to) in pairs {
        let optimal = oracle.optimal_cost(from, to).ok_or(Error::NotCommunicating { from, to })?.as_f64();
        let mut costs = Vec::with_capacity(rollouts);
        let mut failures = 0;
        for _ in 0..rollouts {
            match reach_cost(env, critic, from, to, rng) {
                Some(c) => costs.push(c as f64),
                None => {
                    failures += 1;
                    costs.push(env.horizon() as f64);
                }
            }
        }
        let (mean_cost, stderr) = mean_stderr(&costs);
        if failures > 0 {
            out.failed.push((from, to));
        } else {
            out.value = out.value.max(mean_cost - optimal);
        }
        out.per_pair.push(PolicyCost { from, to, mean_cost, stderr, optimal_cost: optimal, failures, rollouts });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub value: f64,
    /// Monte Carlo standard error at the maximizing triple.
    pub stderr: f64,
}

/// `max |E[V*(s_end, g)] - V*(ŝ, g)|` where `s_end` ends one segment run
/// greedily toward `ŝ` from `s` under `rule`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_eps_drift<F: Scalar, R: Rng + ?Sized>(
    env: &GridSpec,
    critic: &QTable<F>,
    oracle: &OracleTables<F>,
    triples: &[(StateId, StateId, StateId)],
    rule: SegmentRule,
    rollouts: usize,
    rng: &mut R,
) -> Result<Drift> {
    let mut best = Drift { value: 0.0, stderr: 0.0 };
    for &(s, z, g) in triples {
        let v_sub = oracle.optimal_value(z, g).ok_or(Error::NotCommunicating { from: z, to: g })?.as_f64();
        let mut outcomes = Vec::with_capacity(rollouts);
        for _ in 0..rollouts {
            let end = run_segment(env, critic, s, z, g, rule, rng);
            outcomes.push(oracle.optimal_value(end, g).ok_or(Error::NotCommunicating { from: end, to: g })?.as_f64());
        }
        let (mean, stderr) = mean_stderr(&outcomes);
        let drift = (mean - v_sub).abs();
        if drift > best.value {
            best = Drift { value: drift, stderr };
        }
    }
    Ok(best)
}

fn run_segment<F: Scalar, R: Rng + ?Sized>(
    env: &GridSpec,
    critic: &QTable<F>,
    mut s: StateId,
    subgoal: StateId,
    goal: StateId,
    rule: SegmentRule,
    rng: &mut R,
) -> StateId {
    for _ in 0..rule.steps {
        if s == goal || (rule.early_stop_subgoal && s == subgoal) {
            break;
        }
        s = env.step(s, critic.greedy_action(s, subgoal), rng);
    }
    s
}

/// A triple `(s_i, z, s_j)` where going through `z` is cheaper than the
/// table's direct cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleViolation {
    pub table: String,
    pub from: StateId,
    pub via: StateId,
    pub to: StateId,
    pub direct: f64,
    pub through: f64,
}

/// Exhaustive `cost(s_i, s_j) <= cost(s_i, z) + cost(z, s_j)` scan over
/// distances (exact) and, when present, hitting times (slack `3 tol`).
pub fn check_triangle<F: Scalar>(oracle: &OracleTables<F>) -> Vec<TriangleViolation> {
    let n = oracle.num_states();
    let mut out = Vec::new();
    let dist = |a, b| oracle.dist.steps(StateId(a), StateId(b)).map(f64::from);
    scan_triangle(n, "dist", 0.0, dist, &mut out);
    if let Some(h) = &oracle.hitting {
        let slack = 3.0 * h.tol().as_f64();
        scan_triangle(n, "hitting", slack, |a, b| Some(h.get(StateId(a), StateId(b)).as_f64()), &mut out);
    }
    out
}

fn scan_triangle(
    n: usize,
    table: &str,
    slack: f64,
    cost: impl Fn(usize, usize) -> Option<f64>,
    out: &mut Vec<TriangleViolation>,
) {
    for i in 0..n {
        for z in 0..n {
            let Some(a) = cost(i, z) else { continue };
            for j in 0..n {
                let Some(b) = cost(z, j) else { continue };
                let direct = cost(i, j).unwrap_or(f64::INFINITY);
                if direct > a + b + slack {
                    out.push(TriangleViolation {
                        table: table.to_string(),
                        from: StateId(i),
                        via: StateId(z),
                        to: StateId(j),
                        direct,
                        through: a + b,
                    });
                }
            }
        }
    }
}

/// True detour `d(s, ŝ) + d(ŝ, g) - d(s, g)`; `None` if any leg is
/// unreachable.
pub fn true_detour(dist: &DistTable, s: StateId, z: StateId, g: StateId) -> Option<u32> {
    Some(dist.steps(s, z)? + dist.steps(z, g)? - dist.steps(s, g)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetourCheck {
    pub bound: f64,
    pub max_detour: f64,
    pub passed: Vec<bool>,
}

impl DetourCheck {
    pub fn all_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }
}

/// Compares each recorded triple's true detour against `3 eps_v + eps_psi`.
pub fn check_detour_bound(
    triples: &[(StateId, StateId, StateId)],
    dist: &DistTable,
    eps_v: f64,
    eps_psi: f64,
) -> DetourCheck {
    let bound = 3.0 * eps_v + eps_psi;
    let mut max_detour = 0.0f64;
    let passed = triples
        .iter()
        .map(|&(s, z, g)| match true_detour(dist, s, z, g) {
            Some(d) => {
                max_detour = max_detour.max(d as f64);
                d as f64 <= bound + ROUNDING_SLACK
            }
            None => false,
        })
        .collect();
    DetourCheck { bound, max_detour, passed }
}

/// Measured error constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorConstants {
    pub eps_v: f64,
    pub eps_psi: f64,
    pub eps_pi: f64,
    pub eps_drift: f64,
}

impl ErrorConstants {
    pub fn per_segment(&self) -> f64 {
        self.eps_pi + 3.0 * self.eps_v + self.eps_psi + self.eps_drift
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub start: StateId,
    pub goal: StateId,
    pub eps_v: f64,
    pub eps_psi: f64,
    pub eps_pi: f64,
    pub eps_drift: f64,
    pub m: f64,
    pub realized_cost: f64,
    pub optimal_cost: f64,
    pub bound_value: f64,
    /// Statistical slack added to the bound (zero when deterministic).
    pub slack: f64,
    pub applicable: bool,
    pub satisfied: bool,
    /// `bound_value + slack - realized_cost`.
    pub margin: f64,
}

/// Per-task bound check. Deterministic: `cost <= d + M * c` with `M` the
/// realized segment count. Stochastic: `mean cost <= hitting + mean M * c +
/// 2 stderr`. Tasks with failed episodes, or whose segments used a pair
/// the low-level policy cannot reach, are inapplicable.
pub fn check_suboptimality_bound<F: Scalar>(
    tasks: &[TaskSummary],
    consts: &ErrorConstants,
    oracle: &OracleTables<F>,
    failed_pairs: &[(StateId, StateId)],
) -> Vec<ErrorReport> {
    let stochastic = !oracle.is_deterministic();
    let failed: BTreeSet<_> = failed_pairs.iter().copied().collect();
    tasks
        .iter()
        .map(|t| {
            let optimal = oracle.optimal_cost(t.start, t.goal).map_or(f64::INFINITY, Scalar::as_f64);
            let (m, slack) = if stochastic { (t.mean_m, 2.0 * t.stderr_cost) } else { (t.first.m as f64, 0.0) };
            let bound_value = optimal + m * consts.per_segment();
            let applicable = t.successes == t.episodes
                && optimal.is_finite()
                && !t.triples.iter().any(|&(s, z, _)| failed.contains(&(s, z)));
            let margin = bound_value + slack - t.mean_cost;
            ErrorReport {
                start: t.start,
                goal: t.goal,
                eps_v: consts.eps_v,
                eps_psi: consts.eps_psi,
                eps_pi: consts.eps_pi,
                eps_drift: consts.eps_drift,
                m,
                realized_cost: t.mean_cost,
                optimal_cost: optimal,
                bound_value,
                slack,
                applicable,
                satisfied: !applicable || margin >= -ROUNDING_SLACK,
                margin,
            }
        })
        .collect()
}

/// `sum_k [d(s_k, g) - d(s_{k+1}, g)] == d(s_0, g)` for a chain ending at `g`.
pub fn telescoping_holds(chain: &[StateId], goal: StateId, dist: &DistTable) -> bool {
    if chain.last() != Some(&goal) {
        return false;
    }
    let d = |s| dist.steps(s, goal).map(i64::from);
    let mut sum = 0i64;
    for w in chain.windows(2) {
        match (d(w[0]), d(w[1])) {
            (Some(a), Some(b)) => sum += a - b,
            _ => return false,
        }
    }
    Some(sum) == d(chain[0])
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    /// Quantifier domain the measurement ranges over.
    pub domain: String,
    pub measured: Vec<(String, f64)>,
    pub passed: bool,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub map_states: usize,
    pub deterministic: bool,
    /// Segment semantics used for every rollout in the suite.
    pub semantics: String,
    pub constants: ErrorConstants,
    pub checks: Vec<CheckResult>,
    pub tasks: Vec<ErrorReport>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kind = if self.deterministic { "deterministic" } else { "stochastic" };
        let _ = writeln!(out, "verification report: {} states, {kind}", self.map_states);
        let _ = writeln!(out, "segment semantics: {}", self.semantics);
        for c in &self.checks {
            let _ = writeln!(out, "\n[{}] {}", if c.passed { "PASS" } else { "FAIL" }, c.check);
            let _ = writeln!(out, "  domain: {}", c.domain);
            for (k, v) in &c.measured {
                let _ = writeln!(out, "  {k} = {v}");
            }
            for n in &c.notes {
                let _ = writeln!(out, "  note: {n}");
            }
        }
        let verdict = if self.all_passed() { "all checks passed" } else { "some checks failed" };
        let _ = writeln!(out, "\nverdict: {verdict}");
        out
    }

    /// One JSON object per check, then one per task.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for c in &self.checks {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        for t in &self.tasks {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    pub rule: SegmentRule,
    /// Evaluation tasks; `None` means every pair (deterministic) or
    /// `stochastic_tasks` sampled pairs (stochastic).
    pub tasks: Option<Vec<(StateId, StateId)>>,
    pub stochastic_tasks: usize,
    /// Episodes per task on stochastic maps.
    pub episodes_per_task: usize,
    /// Rollouts per pair for `eps_pi` and per triple for `eps_drift` on
    /// stochastic maps.
    pub policy_rollouts: usize,
    pub seed: u64,
}

impl SuiteOptions {
    pub fn new(rule: SegmentRule) -> Self {
        Self { rule, tasks: None, stochastic_tasks: 20, episodes_per_task: 1000, policy_rollouts: 500, seed: 0 }
    }
}

fn check(check: &str, domain: &str, measured: Vec<(&str, f64)>, passed: bool, notes: Vec<String>) -> CheckResult {
    CheckResult {
        check: check.to_string(),
        domain: domain.to_string(),
        measured: measured.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        passed,
        notes,
    }
}

/// Runs every applicable check on frozen components. The planner's values
/// are the live critic, so all constants are measured on it.
pub fn run_suite<F: Scalar>(
    env: &GridSpec,
    agent: &Agent<F>,
    oracle: &OracleTables<F>,
    opts: &SuiteOptions,
) -> Result<VerificationReport> {
    let n = env.num_states();
    if agent.num_states() != n || agent.model.num_states() != n {
        return Err(Error::DimensionMismatch { what: "checkpoint states", expected: n, found: agent.num_states() });
    }
    let deterministic = oracle.is_deterministic();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();

    let violations = check_triangle(oracle);
    checks.push(check(
        "triangle inequality on oracle tables",
        "all |S|^3 triples",
        vec![("violations", violations.len() as f64)],
        violations.is_empty(),
        violations.iter().take(5).map(|v| format!("{v:?}")).collect(),
    ));

    let tasks = match &opts.tasks {
        Some(t) => t.clone(),
        None if deterministic => all_tasks(env),
        None => (0..opts.stochastic_tasks).map(|_| sample_task(env, &mut rng)).collect(),
    };
    let episodes = if deterministic { 1 } else { opts.episodes_per_task };
    let eval = evaluate(env, agent, opts.rule, Phase::Full, &tasks, episodes, &mut rng);
    let triples: Vec<_> =
        eval.tasks.iter().flat_map(|t| t.triples.iter().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    let seg_pairs: Vec<_> = triples.iter().map(|&(s, z, _)| (s, z)).collect::<BTreeSet<_>>().into_iter().collect();

    let eps_v = estimate_eps_v(&agent.critic, oracle);
    let eps_psi = max_detour(&agent.critic, &triples).as_f64();
    let rollouts = if deterministic { 1 } else { opts.policy_rollouts };
    let eps_pi = estimate_eps_pi(env, &agent.critic, oracle, &seg_pairs, rollouts, &mut rng)?;
    let eps_drift = if deterministic {
        Drift { value: 0.0, stderr: 0.0 }
    } else {
        estimate_eps_drift(env, &agent.critic, oracle, &triples, opts.rule, rollouts, &mut rng)?
    };
    let constants =
        ErrorConstants { eps_v: eps_v.value, eps_psi, eps_pi: eps_pi.value, eps_drift: eps_drift.value };
    checks.push(check(
        "error constants",
        &format!(
            "eps_v: {} reachable pairs ({} unreachable excluded); eps_psi, eps_pi, eps_drift: {} visited (s, subgoal, goal) triples over {} tasks",
            eps_v.domain,
            eps_v.excluded,
            triples.len(),
            tasks.len()
        ),
        vec![
            ("eps_v", constants.eps_v),
            ("eps_psi", constants.eps_psi),
            ("eps_pi", constants.eps_pi),
            ("eps_drift", constants.eps_drift),
            ("eps_drift_stderr", eps_drift.stderr),
            ("unreachable_segment_pairs", eps_pi.failed.len() as f64),
        ],
        true,
        eps_pi.failed.iter().take(5).map(|(a, b)| format!("greedy policy never reaches {b} from {a}")).collect(),
    ));

    checks.push(check(
        "evaluation",
        &format!("{} tasks, {episodes} episode(s) each", tasks.len()),
        vec![("success_rate", eval.success_rate), ("mean_cost", eval.mean_cost), ("mean_M", eval.mean_m)],
        true,
        Vec::new(),
    ));

    if deterministic {
        let detour = check_detour_bound(&triples, &oracle.dist, constants.eps_v, constants.eps_psi);
        checks.push(check(
            "detour bound d(s,z) + d(z,g) - d(s,g) <= 3 eps_v + eps_psi",
            "visited (s, subgoal, goal) triples",
            vec![
                ("bound", detour.bound),
                ("max_detour", detour.max_detour),
                ("violations", detour.passed.iter().filter(|&&p| !p).count() as f64),
            ],
            detour.all_passed(),
            Vec::new(),
        ));
        let mut broken = 0;
        let mut checked = 0;
        for t in eval.tasks.iter().filter(|t| t.first.success) {
            let mut chain = t.first.segment_starts.clone();
            chain.push(t.goal);
            checked += 1;
            broken += !telescoping_holds(&chain, t.goal, &oracle.dist) as usize;
        }
        checks.push(check(
            "telescoping identity over segment chains",
            "successful evaluation episodes",
            vec![("episodes", checked as f64), ("violations", broken as f64)],
            broken == 0,
            Vec::new(),
        ));
    }

    let reports = check_suboptimality_bound(&eval.tasks, &constants, oracle, &eps_pi.failed);
    let applicable = reports.iter().filter(|r| r.applicable).count();
    let violated = reports.iter().filter(|r| !r.satisfied).count();
    let min_margin = reports.iter().filter(|r| r.applicable).map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let name = if deterministic {
        "suboptimality bound C <= d + M (eps_pi + 3 eps_v + eps_psi)"
    } else {
        "stochastic bound E[C] <= -V* + M (eps_pi + 3 eps_v + eps_psi + eps_drift) + 2 stderr"
    };
    checks.push(check(
        name,
        &format!("{} evaluation tasks, {applicable} applicable", reports.len()),
        vec![
            ("violations", violated as f64),
            ("inapplicable", (reports.len() - applicable) as f64),
            ("min_margin", if applicable > 0 { min_margin } else { 0.0 }),
        ],
        violated == 0,
        Vec::new(),
    ));

    Ok(VerificationReport {
        map_states: n,
        deterministic,
        semantics: semantics_label(opts.rule),
        constants,
        checks,
        tasks: reports,
    })
}

pub fn semantics_label(rule: SegmentRule) -> String {
    let stop = if rule.early_stop_subgoal { "until the subgoal is reached or" } else { "for exactly" };
    format!("segments run {stop} K = {} steps, J = {}; episodes end at the goal", rule.steps, rule.depth)
}

/// Per-subgoal check of the exactness regime: every model proposal lies in
/// `optimal_subgoal_set(s_0, g) \ {s_0, g}` with zero true detour.
pub fn proposals_on_shortest_paths(report: &crate::agent::EpisodeReport, dist: &DistTable) -> bool {
    let on_path = optimal_subgoal_set(report.start, report.goal, dist);
    report.segment_starts.iter().zip(&report.subgoals).zip(&report.anticipated).filter(|(_, &a)| a).all(
        |((&s, &z), _)| {
            z != report.start
                && z != report.goal
                && on_path.binary_search(&z).is_ok()
                && true_detour(dist, s, z, report.goal) == Some(0)
        },
    )
}
