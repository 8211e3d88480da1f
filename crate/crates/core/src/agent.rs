//! The plan-act loop and the joint training schedule.
//!
//! Every segment the planner picks a subgoal `ŝ`, then the greedy (or
//! epsilon-greedy) low-level policy acts toward `ŝ` for up to `K` steps.
//! The planner starts from `ŝ = g` and applies the anticipation model up to
//! `J` times, each time aiming at the previous proposal. It stops refining
//! once the current target is closer than the loss margin, since no
//! zero-loss subgoal exists for such pairs, or when the model returns the
//! target itself, the current state, or a state the critic does not rate
//! strictly closer to the target than `s`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anticipation::{AnticipationModel, LossConfig, ModelMode};
use crate::config::Hyperparams;
use crate::critic::{QTable, TargetMode, TargetQ};
use crate::error::{Error, Result};
use crate::gmdp::{reward, GridSpec, StateId, Trajectory, Transition};
use crate::oracle::OracleTables;
use crate::replay::ReplayBuffer;
use crate::scalar::Scalar;
use crate::value::ValueView;
use crate::verify;

/// Offset separating the evaluation random stream from the training one.
const EVAL_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Uniformly random subgoals; the anticipation model is not consulted.
    Warmup,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActMode {
    Explore { epsilon: f64 },
    Greedy,
}

/// How a segment is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentRule {
    pub steps: usize,
    pub depth: usize,
    pub hierarchy: bool,
    pub early_stop_subgoal: bool,
}

impl SegmentRule {
    pub fn from_hyperparams(hp: &Hyperparams) -> Self {
        Self {
            steps: hp.segment_steps,
            depth: hp.recursion_depth,
            hierarchy: hp.hierarchy,
            early_stop_subgoal: hp.early_stop_subgoal,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Agent<F: Scalar> {
    pub critic: QTable<F>,
    pub target: TargetQ<F>,
    pub model: AnticipationModel<F>,
}

impl<F: Scalar> Agent<F> {
    pub fn new(env: &GridSpec, hp: &Hyperparams) -> Self {
        let critic = QTable::new(env.num_states(), hp.critic.for_horizon(env.horizon()));
        let target = TargetQ::new(&critic, hp.target);
        let model = AnticipationModel::new(env.num_states(), loss_config(hp));
        Self { critic, target, model }
    }

    /// Critic set to `Q*` from the oracle, target in sync.
    pub fn with_oracle_critic(env: &GridSpec, hp: &Hyperparams, oracle: &OracleTables<F>) -> Self {
        let mut agent = Self::new(env, hp);
        agent.critic = QTable::from_oracle(env, oracle, hp.critic.for_horizon(env.horizon()));
        agent.target.hard_sync(&agent.critic);
        agent
    }

    pub fn num_states(&self) -> usize {
        self.critic.num_states()
    }
}

pub fn loss_config<F: Scalar>(hp: &Hyperparams) -> LossConfig<F> {
    LossConfig { lambda: F::lit(hp.loss.lambda), c_prog: F::lit(hp.loss.c_prog), c_non_trivial: F::lit(hp.loss.c_non_trivial) }
}

/// Subgoal for state `s` and final goal `g`, and whether the model produced
/// it (`false` means the planner fell back to `g`).
pub fn plan_subgoal<F: Scalar>(
    s: StateId,
    g: StateId,
    model: &AnticipationModel<F>,
    values: &impl ValueView<F>,
    depth: usize,
) -> (StateId, bool) {
    let margin = model.loss_config().margin();
    let mut target = g;
    let mut anticipated = false;
    for _ in 0..depth {
        if s == target || values.value(s, target) > -margin {
            break;
        }
        let next = model.propose(s, target, values);
        if next == target || next == s || values.value(next, target) <= values.value(s, target) {
            break;
        }
        target = next;
        anticipated = true;
    }
    (target, anticipated)
}

/// Start from the initial set, goal uniform over the remaining states.
pub fn sample_task<R: Rng + ?Sized>(env: &GridSpec, rng: &mut R) -> (StateId, StateId) {
    let starts = env.initial_states();
    let start = starts[rng.gen_range(0..starts.len())];
    let n = env.num_states();
    assert!(n > 1, "a task needs at least two states");
    let mut goal = StateId(rng.gen_range(0..n - 1));
    if goal >= start {
        goal = StateId(goal.0 + 1);
    }
    (start, goal)
}

/// Every `(start, goal)` pair with `start` in the initial set and
/// `goal != start`, in lexicographic order.
pub fn all_tasks(env: &GridSpec) -> Vec<(StateId, StateId)> {
    env.initial_states().iter().flat_map(|&s| env.states().filter(move |&g| g != s).map(move |g| (s, g))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub start: StateId,
    pub goal: StateId,
    pub success: bool,
    /// Primitive steps taken.
    pub total_cost: usize,
    /// Number of segments, one planner call each.
    pub m: usize,
    pub subgoals: Vec<StateId>,
    /// State at the start of each segment.
    pub segment_starts: Vec<StateId>,
    pub segment_costs: Vec<usize>,
    /// Per segment: whether the model (not the fallback) chose the subgoal.
    pub anticipated: Vec<bool>,
}

impl EpisodeReport {
    pub fn anticipation_calls(&self) -> usize {
        self.anticipated.iter().filter(|&&a| a).count()
    }
}

/// Runs one episode of at most `H` primitive steps.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<F: Scalar, R: Rng + ?Sized>(
    env: &GridSpec,
    agent: &Agent<F>,
    rule: SegmentRule,
    phase: Phase,
    act: ActMode,
    (start, goal): (StateId, StateId),
    rng: &mut R,
) -> (Trajectory, EpisodeReport) {
    let horizon = env.horizon();
    let mut traj = Trajectory { final_goal: Some(goal), ..Trajectory::default() };
    let mut report = EpisodeReport {
        start,
        goal,
        success: start == goal,
        total_cost: 0,
        m: 0,
        subgoals: Vec::new(),
        segment_starts: Vec::new(),
        segment_costs: Vec::new(),
        anticipated: Vec::new(),
    };
    let mut s = start;
    while s != goal && traj.len() < horizon {
        let (subgoal, anticipated) = if !rule.hierarchy {
            (goal, false)
        } else {
            match phase {
                Phase::Warmup => (StateId(rng.gen_range(0..env.num_states())), false),
                Phase::Full => plan_subgoal(s, goal, &agent.model, &agent.critic, rule.depth),
            }
        };
        traj.segment_boundaries.push(traj.len());
        report.subgoals.push(subgoal);
        report.segment_starts.push(s);
        report.anticipated.push(anticipated);
        let seg_start = traj.len();
        for _ in 0..rule.steps {
            if traj.len() == horizon {
                break;
            }
            let action = match act {
                ActMode::Explore { epsilon } => agent.critic.act_epsilon_greedy(s, subgoal, epsilon, rng),
                ActMode::Greedy => agent.critic.greedy_action(s, subgoal),
            };
            let next = env.step(s, action, rng);
            traj.transitions.push(Transition { state: s, action, reward: reward(next, subgoal), next_state: next, subgoal });
            s = next;
            if s == goal || (rule.early_stop_subgoal && s == subgoal) {
                break;
            }
        }
        report.segment_costs.push(traj.len() - seg_start);
    }
    report.success = s == goal;
    report.total_cost = traj.len();
    report.m = report.subgoals.len();
    (traj, report)
}

/// Aggregate over repeated episodes of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub start: StateId,
    pub goal: StateId,
    pub episodes: usize,
    pub successes: usize,
    pub mean_cost: f64,
    /// Standard error of the mean cost; zero for a single episode.
    pub stderr_cost: f64,
    pub mean_m: f64,
    pub max_m: usize,
    /// Report of the first episode, kept for subgoal-level checks.
    pub first: EpisodeReport,
    /// Distinct `(segment start, subgoal, goal)` triples over all episodes.
    pub triples: Vec<(StateId, StateId, StateId)>,
}

impl TaskSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskSummary>,
    pub success_rate: f64,
    pub mean_cost: f64,
    pub mean_m: f64,
}

/// Greedy evaluation of frozen components over `tasks`.
pub fn evaluate<F: Scalar, R: Rng + ?Sized>(
    env: &GridSpec,
    agent: &Agent<F>,
    rule: SegmentRule,
    phase: Phase,
    tasks: &[(StateId, StateId)],
    episodes_per_task: usize,
    rng: &mut R,
) -> EvalReport {
    assert!(episodes_per_task >= 1, "need at least one episode per task");
    let mut summaries = Vec::with_capacity(tasks.len());
    for &task in tasks {
        let mut costs = Vec::with_capacity(episodes_per_task);
        let mut successes = 0;
        let mut m_sum = 0usize;
        let mut max_m = 0usize;
        let mut first = None;
        let mut triples = BTreeSet::new();
        for _ in 0..episodes_per_task {
            let (_, rep) = run_episode(env, agent, rule, phase, ActMode::Greedy, task, rng);
            triples.extend(rep.segment_starts.iter().zip(&rep.subgoals).map(|(&s, &z)| (s, z, task.1)));
            costs.push(rep.total_cost as f64);
            successes += rep.success as usize;
            m_sum += rep.m;
            max_m = max_m.max(rep.m);
            first.get_or_insert(rep);
        }
        let (mean_cost, stderr_cost) = mean_stderr(&costs);
        summaries.push(TaskSummary {
            start: task.0,
            goal: task.1,
            episodes: episodes_per_task,
            successes,
            mean_cost,
            stderr_cost,
            mean_m: m_sum as f64 / episodes_per_task as f64,
            max_m,
            first: first.expect("at least one episode"),
            triples: triples.into_iter().collect(),
        });
    }
    let k = summaries.len().max(1) as f64;
    EvalReport {
        success_rate: summaries.iter().map(TaskSummary::success_rate).sum::<f64>() / k,
        mean_cost: summaries.iter().map(|t| t.mean_cost).sum::<f64>() / k,
        mean_m: summaries.iter().map(|t| t.mean_m).sum::<f64>() / k,
        tasks: summaries,
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub episode: usize,
    pub success_rate: f64,
    pub mean_cost: f64,
    #[serde(rename = "mean_M")]
    pub mean_m: f64,
    /// Mean squared TD error since the previous record.
    pub critic_loss: f64,
    /// Mean anticipation expected loss since the previous record; zero
    /// before any anticipation update.
    pub anticipation_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps_psi: Option<f64>,
}

/// Component overrides for a training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Replace the learned model with exhaustive loss minimization.
    pub exact_argmin: bool,
    /// Start from `Q*` and never update the critic. Requires an oracle.
    pub oracle_critic: bool,
}

pub struct TrainOutcome<F: Scalar> {
    pub agent: Agent<F>,
    pub history: Vec<MetricsRecord>,
    pub buffer: ReplayBuffer,
}

/// The evaluation tasks used by [`train`]: all pairs, or `eval_tasks`
/// sampled from a stream seeded by `seed`.
pub fn eval_task_set(env: &GridSpec, hp: &Hyperparams) -> Vec<(StateId, StateId)> {
    if hp.eval_tasks == 0 {
        all_tasks(env)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ EVAL_STREAM);
        (0..hp.eval_tasks).map(|_| sample_task(env, &mut rng)).collect()
    }
}

/// Trains critic and anticipation model. `on_record` sees every metrics
/// record as it is produced.
pub fn train<F: Scalar>(
    env: &GridSpec,
    hp: &Hyperparams,
    opts: TrainOptions,
    oracle: Option<&OracleTables<F>>,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome<F>> {
    hp.validate()?;
    if env.num_states() < 2 {
        return Err(Error::Config("training needs at least two states".into()));
    }
    let mut agent = match (opts.oracle_critic, oracle) {
        (true, Some(o)) => Agent::with_oracle_critic(env, hp, o),
        (true, None) => return Err(Error::Config("oracle critic requested without oracle tables".into())),
        (false, _) => Agent::new(env, hp),
    };
    if opts.exact_argmin {
        agent.model.set_mode(ModelMode::ExactArgmin);
    }
    let rule = SegmentRule::from_hyperparams(hp);
    let lr = F::lit(hp.lr_anticipation);
    let eval_tasks = eval_task_set(env, hp);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(EVAL_STREAM));
    let mut buffer = ReplayBuffer::new(hp.replay_capacity);
    let mut history = Vec::new();
    let (mut critic_sum, mut critic_n) = (0.0, 0usize);
    let (mut antic_sum, mut antic_n) = (0.0, 0usize);

    for episode in 1..=hp.episodes {
        let phase = if episode <= hp.n_warmup { Phase::Warmup } else { Phase::Full };
        let epsilon = hp.epsilon.at(episode, hp.episodes);
        let task = sample_task(env, &mut rng);
        let (traj, _) = run_episode(env, &agent, rule, phase, ActMode::Explore { epsilon }, task, &mut rng);
        if !traj.is_empty() {
            buffer.store(traj)?;
        }
        if !buffer.is_empty() {
            for _ in 0..hp.n_updates {
                let batch = buffer.sample_her_batch(hp.batch_size, hp.k_relabel, &mut rng);
                if !opts.oracle_critic {
                    critic_sum += agent.critic.td_update(&agent.target, &batch).as_f64();
                    critic_n += 1;
                    if matches!(hp.target, TargetMode::Periodic { .. }) {
                        agent.target.sync(&agent.critic);
                    }
                }
                if phase == Phase::Full && hp.hierarchy && agent.model.mode() == ModelMode::Learned {
                    let cfg = *agent.model.loss_config();
                    let pairs: Vec<_> = buffer
                        .sample_state_pairs(hp.pair_batch_size, &mut rng)
                        .pairs
                        .into_iter()
                        .filter(|&(a, b)| cfg.is_feasible(agent.target.value(a, b)))
                        .collect();
                    if !pairs.is_empty() {
                        antic_sum += agent.model.update_with(&pairs, &agent.target, lr, hp.anticipation_step).total.as_f64();
                        antic_n += 1;
                    }
                }
            }
        }
        if matches!(hp.target, TargetMode::Polyak { .. }) && !opts.oracle_critic {
            agent.target.sync(&agent.critic);
        }
        if episode % hp.eval_interval == 0 || episode == hp.episodes {
            let eval_phase = if episode <= hp.n_warmup { Phase::Warmup } else { Phase::Full };
            // Random warm-up subgoals only serve exploration; evaluation
            // during warm-up aims at the goal directly.
            let eval_rule = SegmentRule { hierarchy: rule.hierarchy && eval_phase == Phase::Full, ..rule };
            let report = evaluate(env, &agent, eval_rule, eval_phase, &eval_tasks, 1, &mut eval_rng);
            let (eps_v, eps_psi) = match oracle {
                Some(o) => {
                    let eps_v = verify::estimate_eps_v(&agent.critic, o).value;
                    let pairs = verify::feasible_pairs(&agent.target, agent.model.loss_config());
                    let eps_psi = verify::estimate_eps_psi(&agent.model, &agent.target, &pairs);
                    (Some(eps_v), Some(eps_psi.as_f64()))
                }
                None => (None, None),
            };
            let record = MetricsRecord {
                episode,
                success_rate: report.success_rate,
                mean_cost: report.mean_cost,
                mean_m: report.mean_m,
                critic_loss: if critic_n > 0 { critic_sum / critic_n as f64 } else { 0.0 },
                anticipation_loss: if antic_n > 0 { antic_sum / antic_n as f64 } else { 0.0 },
                eps_v,
                eps_psi,
            };
            on_record(&record);
            history.push(record);
            (critic_sum, critic_n, antic_sum, antic_n) = (0.0, 0, 0.0, 0);
        }
    }
    if !opts.oracle_critic {
        agent.target.hard_sync(&agent.critic);
    }
    Ok(TrainOutcome { agent, history, buffer })
}

/// First evaluation episode at which the success rate reached `threshold`.
pub fn episodes_to_threshold(history: &[MetricsRecord], threshold: f64) -> Option<usize> {
    history.iter().find(|r| r.success_rate >= threshold).map(|r| r.episode)
}
