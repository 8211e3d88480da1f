//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the output; exits nonzero on failure.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subgoal_rl::agent::{all_tasks, sample_task, train, ActMode, TrainOptions};
use subgoal_rl::anticipation::detour_at;
use subgoal_rl::checkpoint::{CriticCheckpoint, ModelCheckpoint};
use subgoal_rl::compare::{medians_by_length, run_comparison, strictly_faster};
use subgoal_rl::oracle::{brute_force_anticipation_argmin, DEFAULT_TOL};
use subgoal_rl::verify::{check_triangle, feasible_pairs, run_suite, SuiteOptions};
use subgoal_rl::{
    run_episode, Agent64, EnvKind, GridSpec, Hyperparams, LossConfig, ModelMode, OracleTables64, Phase, ReplayBuffer,
    SegmentRule, StateId, ValueTable64, ValueView,
};

use common::{bfs_all, load_map, SHIPPED_MAPS};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn early_stop(hp: &Hyperparams) -> SegmentRule {
    SegmentRule { early_stop_subgoal: true, ..SegmentRule::from_hyperparams(hp) }
}

fn oracle(env: &GridSpec) -> OracleTables64 {
    OracleTables64::compute(env, DEFAULT_TOL).unwrap()
}

fn idealized_planning_is_exact() -> Outcome {
    let hp = Hyperparams::default();
    let (mut tasks, mut subgoals, mut failures) = (0usize, 0usize, Vec::new());
    for name in ["corridor_9.txt", "open_7x7.txt", "two_rooms_9x9.txt"] {
        let env = load_map(name);
        let d = bfs_all(&env);
        let mut agent = Agent64::with_oracle_critic(&env, &hp, &oracle(&env));
        agent.model.set_mode(ModelMode::ExactArgmin);
        let margin = agent.model.loss_config().margin();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (s0, g) in all_tasks(&env) {
            let dist = d[s0.0][g.0].unwrap();
            if -(dist as f64) > -margin {
                continue;
            }
            tasks += 1;
            let (_, rep) = run_episode(&env, &agent, early_stop(&hp), Phase::Full, ActMode::Greedy, (s0, g), &mut rng);
            if !rep.success || rep.total_cost != dist as usize {
                failures.push(format!("{name} {s0:?}->{g:?}: cost {} vs d {dist}", rep.total_cost));
            }
            for ((&s, &z), &used) in rep.segment_starts.iter().zip(&rep.subgoals).zip(&rep.anticipated) {
                if !used {
                    continue;
                }
                subgoals += 1;
                let (a, b, c) = (d[s.0][z.0].unwrap(), d[z.0][g.0].unwrap(), d[s.0][g.0].unwrap());
                if a + b != c || z == s || z == g {
                    failures.push(format!("{name} {s:?}->{z:?}->{g:?}: detour {}", a + b - c));
                }
            }
        }
    }
    let detail = format!("{tasks} feasible tasks, {subgoals} subgoals, {} exceptions", failures.len());
    outcome(failures.is_empty() && subgoals > 0, detail)
}

fn triangle_inequality_everywhere() -> Outcome {
    let mut triples = 0usize;
    let mut violations = 0usize;
    let mut hitting_tables = 0;
    for &name in SHIPPED_MAPS {
        let det = load_map(name);
        let n = det.num_states();
        assert!(n <= 64, "{name} has {n} states");
        let o = oracle(&det);
        violations += check_triangle(&o).len();
        let d = bfs_all(&det);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    triples += 1;
                    if let (Some(x), Some(y), Some(z)) = (d[a][c], d[a][b], d[b][c]) {
                        violations += usize::from(x > y + z);
                    }
                }
            }
        }
        let slip = det.clone().with_slip(0.2).unwrap();
        if !slip.is_communicating() {
            assert!(OracleTables64::compute(&slip, DEFAULT_TOL).is_err(), "{name} under slip should be refused");
            continue;
        }
        let o = oracle(&slip);
        let h = o.hitting.as_ref().unwrap();
        hitting_tables += 1;
        violations += check_triangle(&o).len();
        let tol = 3.0 * DEFAULT_TOL;
        for a in (0..n).map(StateId) {
            for b in (0..n).map(StateId) {
                for c in (0..n).map(StateId) {
                    triples += 1;
                    violations += usize::from(h.get(a, c) > h.get(a, b) + h.get(b, c) + tol);
                }
            }
        }
    }
    let detail = format!("{} maps, {hitting_tables} slip tables, {triples} triples, {violations} violations", SHIPPED_MAPS.len());
    outcome(violations == 0, detail)
}

fn detour_bound_under_noise() -> Outcome {
    let env = load_map("open_7x7.txt");
    let d = bfs_all(&env);
    let n = env.num_states();
    let exact: ValueTable64 = ValueTable64::from_fn(n, |s, g| -(d[s.0][g.0].unwrap() as f64));
    let cfg = LossConfig::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut proposals, mut bad) = (0usize, 0usize);
    let mut parts = Vec::new();
    for eta in [0.05, 0.1, 0.3] {
        let noisy = exact.perturbed(eta, &mut rng);
        let mut eps_v = 0.0f64;
        for s in (0..n).map(StateId) {
            for g in (0..n).map(StateId) {
                eps_v = eps_v.max((noisy.value(s, g) - exact.value(s, g)).abs());
            }
        }
        let pairs = feasible_pairs(&noisy, &cfg);
        let chosen: Vec<_> =
            pairs.iter().map(|&(s, g)| (s, brute_force_anticipation_argmin(s, g, &noisy, &cfg), g)).collect();
        let eps_psi = chosen.iter().map(|&(s, z, g)| detour_at(s, g, z, &noisy)).fold(0.0, f64::max);
        let bound = 3.0 * eps_v + eps_psi;
        for &(s, z, g) in &chosen {
            proposals += 1;
            let true_detour = d[s.0][z.0].unwrap() + d[z.0][g.0].unwrap() - d[s.0][g.0].unwrap();
            bad += usize::from(true_detour as f64 > bound);
        }
        parts.push(format!("eta {eta}: eps_v {eps_v:.3} eps_psi {eps_psi:.3}"));
    }
    outcome(bad == 0, format!("{proposals} proposals, {bad} over bound; {}", parts.join(", ")))
}

fn learned_system_converges(agent: &Agent64, env: &GridSpec, secs: f64) -> Outcome {
    let o = oracle(env);
    let eps_v = subgoal_rl::verify::estimate_eps_v(&agent.critic, &o).value;
    let hp = Hyperparams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let report = subgoal_rl::evaluate(env, agent, SegmentRule::from_hyperparams(&hp), Phase::Full, &all_tasks(env), 1, &mut rng);
    let pairs = feasible_pairs(&agent.target, agent.model.loss_config());
    let loss = agent.model.expected_loss(&pairs, &agent.target);
    let passed = eps_v <= 0.05 && report.success_rate >= 0.95 && loss <= 0.05;
    let detail = format!(
        "eps_v {eps_v:.2e}, success {:.4}, expected loss {loss:.4} on {} pairs, trained in {secs:.1}s",
        report.success_rate,
        pairs.len()
    );
    outcome(passed, detail)
}

fn deterministic_bound_holds(agent: &Agent64, env: &GridSpec) -> Outcome {
    let hp = Hyperparams::default();
    let d = bfs_all(env);
    let report = run_suite(env, agent, &oracle(env), &SuiteOptions::new(early_stop(&hp))).unwrap();
    let c = report.constants;
    let per = c.eps_pi + 3.0 * c.eps_v + c.eps_psi;
    let mut bad = 0;
    for t in &report.tasks {
        let bound = d[t.start.0][t.goal.0].unwrap() as f64 + t.m * per;
        bad += usize::from(!t.applicable || t.realized_cost > bound + 1e-9);
    }
    let detail = format!(
        "{} tasks, {bad} not applicable or over bound; eps_pi {:.3} eps_v {:.2e} eps_psi {:.3}",
        report.tasks.len(),
        c.eps_pi,
        c.eps_v,
        c.eps_psi
    );
    outcome(bad == 0 && report.all_passed() && !report.tasks.is_empty(), detail)
}

fn stochastic_bound_holds() -> Outcome {
    let env = load_map("open_7x7.txt").with_slip(0.2).unwrap();
    let hp = Hyperparams::default();
    let o = oracle(&env);
    let out = train::<f64>(&env, &hp, TrainOptions::default(), None, |_| {}).unwrap();
    let opts = SuiteOptions::new(early_stop(&hp));
    assert!(opts.episodes_per_task >= 1000 && opts.stochastic_tasks == 20);
    let report = run_suite(&env, &out.agent, &o, &opts).unwrap();
    let c = report.constants;
    let bad = report.tasks.iter().filter(|t| !t.applicable || !t.satisfied).count();
    let min_margin = report.tasks.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min);
    let detail = format!(
        "{} tasks x {} rollouts, {bad} not applicable or over bound, min margin {min_margin:.3}; eps_pi {:.3} eps_v {:.3} eps_psi {:.3} eps_drift {:.3}",
        report.tasks.len(),
        opts.episodes_per_task,
        c.eps_pi,
        c.eps_v,
        c.eps_psi,
        c.eps_drift
    );
    outcome(bad == 0 && report.tasks.len() == 20 && report.all_passed(), detail)
}

fn relabeling_is_consistent() -> Outcome {
    let env = load_map("open_7x7.txt");
    let agent = Agent64::new(&env, &Hyperparams::default());
    let rule = SegmentRule::from_hyperparams(&Hyperparams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut buffer = ReplayBuffer::new(10_000);
    let mut episodes = Vec::new();
    for _ in 0..200 {
        let task = sample_task(&env, &mut rng);
        let (traj, _) = run_episode(&env, &agent, rule, Phase::Warmup, ActMode::Explore { epsilon: 1.0 }, task, &mut rng);
        if !traj.is_empty() {
            episodes.push(traj.clone());
            buffer.store(traj).unwrap();
        }
    }
    let (mut relabeled, mut bad) = (0usize, 0usize);
    while relabeled < 100_000 {
        for t in buffer.sample_her_batch(256, 4, &mut rng) {
            let Some(idx) = t.goal_index else {
                bad += usize::from((t.reward == 0) != (t.next_state == t.goal));
                continue;
            };
            relabeled += 1;
            let traj = &episodes[t.episode as usize];
            let consistent = (t.reward == 0) == (t.next_state == t.goal)
                && idx > t.step
                && idx <= traj.len()
                && traj.state_at(idx) == t.goal
                && traj.transitions[t.step].state == t.state;
            bad += usize::from(!consistent);
        }
    }
    outcome(bad == 0, format!("{relabeled} relabeled tuples, {bad} exceptions"))
}

fn gradient_matches_finite_differences() -> Outcome {
    let maps: Vec<GridSpec> = ["corridor_9.txt", "open_7x7.txt", "two_rooms_9x9.txt"].iter().map(|m| load_map(m)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let env = &maps[rng.gen_range(0..maps.len())];
        let n = env.num_states();
        let o = oracle(env);
        let values = o.value_table().perturbed(0.5, &mut rng);
        let cfg = LossConfig { lambda: rng.gen_range(0.1..2.0), c_prog: rng.gen_range(0.0..2.0), c_non_trivial: rng.gen_range(0.0..2.0) };
        let (s, g) = (StateId(rng.gen_range(0..n)), StateId(rng.gen_range(0..n)));
        let logits: Vec<f64> = (0..n * n * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let model = subgoal_rl::AnticipationModel64::from_logits(n, logits, cfg);
        let (_, analytic) = model.pair_gradient(s, g, &values);
        let mut numeric = Vec::with_capacity(n);
        for z in 0..n {
            let mut probe = model.clone();
            probe.pair_logits_mut(s, g)[z] += h;
            let up = probe.pair_expected_loss(s, g, &values).total;
            probe.pair_logits_mut(s, g)[z] -= 2.0 * h;
            let down = probe.pair_expected_loss(s, g, &values).total;
            numeric.push((up - down) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        worst = worst.max(rel);
    }
    outcome(worst <= 1e-6, format!("100 instances, worst relative error {worst:.2e}"))
}

fn flat_baseline_is_slower() -> Outcome {
    let hp = Hyperparams::corridor_comparison();
    let seeds: Vec<u64> = (0..5).collect();
    let rows = run_comparison(&[20, 40], &seeds, &hp, EnvKind::Deterministic, false, 0.9).unwrap();
    let medians = medians_by_length(&rows);
    let show = |m: Option<f64>| m.map_or("never".to_string(), |v| v.to_string());
    let passed = medians.len() == 2 && medians.iter().all(|&(_, rla, flat)| strictly_faster(rla, flat));
    let detail = medians
        .iter()
        .map(|&(l, rla, flat)| format!("L={l}: median rla {} vs flat {}", show(rla), show(flat)))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(passed, detail)
}

fn runs_are_reproducible() -> Outcome {
    let env = load_map("open_7x7.txt");
    let hp = Hyperparams { episodes: 600, n_warmup: 100, eval_interval: 50, seed: 17, ..Hyperparams::default() };
    let o = oracle(&env);
    let run = |hp: &Hyperparams| {
        let mut metrics = Vec::new();
        let out = train::<f64>(&env, hp, TrainOptions::default(), Some(&o), |r| {
            serde_json::to_writer(&mut metrics, r).unwrap();
            metrics.push(b'\n');
        })
        .unwrap();
        let critic = serde_json::to_vec(&CriticCheckpoint::from_table(&out.agent.critic)).unwrap();
        let model = serde_json::to_vec(&ModelCheckpoint::from_model(&out.agent.model)).unwrap();
        (metrics, critic, model)
    };
    let a = run(&hp);
    let b = run(&hp);
    let other = run(&Hyperparams { seed: 18, ..hp.clone() });
    let identical = a == b;
    let sensitive = a.0 != other.0;
    let detail = format!(
        "metrics {} bytes, checkpoints {} + {} bytes, identical {identical}, other seed differs {sensitive}",
        a.0.len(),
        a.1.len(),
        a.2.len()
    );
    outcome(identical && sensitive, detail)
}

fn report(id: u32, name: &str, started: Instant, o: &Outcome) -> bool {
    let verdict = if o.passed { "PASS" } else { "FAIL" };
    println!("{verdict} {id:>2} {name}: {} ({:.1}s)", o.detail, started.elapsed().as_secs_f64());
    o.passed
}

fn main() {
    // Accept and ignore libtest flags such as --nocapture or a filter.
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "exact planning with oracle components", t, &idealized_planning_is_exact());
    let t = Instant::now();
    all &= report(2, "triangle inequality on shipped maps", t, &triangle_inequality_everywhere());
    let t = Instant::now();
    all &= report(3, "detour bound under injected value noise", t, &detour_bound_under_noise());

    let t = Instant::now();
    let env = load_map("open_7x7.txt");
    let out = train::<f64>(&env, &Hyperparams::default(), TrainOptions::default(), None, |_| {}).unwrap();
    let trained = t.elapsed().as_secs_f64();
    all &= report(4, "learned components converge on the open map", t, &learned_system_converges(&out.agent, &env, trained));
    let t = Instant::now();
    all &= report(5, "deterministic suboptimality bound", t, &deterministic_bound_holds(&out.agent, &env));

    let t = Instant::now();
    all &= report(6, "stochastic suboptimality bound under slip 0.2", t, &stochastic_bound_holds());
    let t = Instant::now();
    all &= report(7, "hindsight relabeling consistency", t, &relabeling_is_consistent());
    let t = Instant::now();
    all &= report(8, "anticipation gradient against finite differences", t, &gradient_matches_finite_differences());
    let t = Instant::now();
    all &= report(9, "hierarchy beats the flat baseline on corridors", t, &flat_baseline_is_slower());
    let t = Instant::now();
    all &= report(10, "identical config and seed give identical artifacts", t, &runs_are_reproducible());

    if !all {
        std::process::exit(1);
    }
}
