use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subgoal_rl::agent::{all_tasks, plan_subgoal, train as train_agent, TrainOptions};
use subgoal_rl::checkpoint::{self, CriticCheckpoint, ModelCheckpoint};
use subgoal_rl::compare::{medians_by_length, run_comparison, strictly_faster};
use subgoal_rl::oracle::DEFAULT_TOL;
use subgoal_rl::tables::{write_dist_csv, write_value_csv};
use subgoal_rl::verify::{check_triangle, run_suite, SuiteOptions};
use subgoal_rl::{
    evaluate, Agent, EnvKind, GridSpec, Hyperparams, ModelMode, OracleTables64, Phase, QTable, RunConfig, SegmentRule,
    StateId,
};

use crate::setup::{self, Manifest, CRITIC, MANIFEST, METRICS, MODEL};
use crate::{Shared, Status};

const DEFAULT_OUT: &str = "out";

/// One seed's outcome and the text to print for it.
type SeedRun = Result<(Status, String)>;

/// Runs `job` for every seed, concurrently when there is more than one, and
/// prints the logs in seed order.
fn for_each_seed(seeds: &[u64], job: impl Fn(u64) -> SeedRun + Sync) -> Result<Status> {
    let results: Vec<SeedRun> = if seeds.len() == 1 {
        vec![job(seeds[0])]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = seeds.iter().map(|&seed| scope.spawn({
                let job = &job;
                move || job(seed)
            })).collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        })
    };
    let mut status = Status::Ok;
    let mut first_err = None;
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok((s, log)) => {
                if seeds.len() > 1 {
                    println!("== seed {seed}");
                }
                print!("{log}");
                status = status.max(s);
            }
            Err(e) => {
                eprintln!("error (seed {seed}): {e:#}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(status),
    }
}

fn oracle_for(env: &GridSpec) -> Result<OracleTables64> {
    OracleTables64::compute(env, DEFAULT_TOL).context("cannot compute oracle tables")
}

fn inject_oracle_critic(agent: &mut Agent<f64>, env: &GridSpec, oracle: &OracleTables64) -> Result<()> {
    if oracle.hitting.is_none() {
        bail!("--oracle-critic needs a map where every state can reach every other");
    }
    agent.critic = QTable::from_oracle(env, oracle, *agent.critic.config());
    agent.target.hard_sync(&agent.critic);
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

pub fn train(shared: &Shared) -> Result<Status> {
    let hp = setup::hyperparams(shared, Hyperparams::default())?;
    let map = setup::map_path(shared)?;
    let kind = shared.env.unwrap_or(EnvKind::Deterministic);
    let env = setup::load_map(map, kind, hp.horizon)?;
    let seeds = setup::seeds(shared, &hp, true)?;
    let oracle = oracle_for(&env)?;
    if shared.oracle_critic && oracle.hitting.is_none() {
        bail!("--oracle-critic needs a map where every state can reach every other");
    }
    let base = shared.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let sweep = seeds.len() > 1;
    for_each_seed(&seeds, |seed| {
        let dir = setup::seed_dir(&base, seed, sweep);
        let run = RunConfig {
            map_path: map.display().to_string(),
            env: kind,
            hyperparams: Hyperparams { seed, ..hp.clone() },
            out_dir: dir.display().to_string(),
            exact_argmin: shared.exact_argmin,
            oracle_critic: shared.oracle_critic,
            early_stop_subgoal: hp.early_stop_subgoal,
        };
        train_one(&env, &oracle, run, &dir)
    })
}

fn train_one(env: &GridSpec, oracle: &OracleTables64, run: RunConfig, dir: &Path) -> SeedRun {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    checkpoint::write_json(&Manifest::new(run.clone(), env), &dir.join(MANIFEST))?;
    let mut metrics = create(&dir.join(METRICS))?;
    let mut write_err = None;
    let opts = TrainOptions { exact_argmin: run.exact_argmin, oracle_critic: run.oracle_critic };
    let out = train_agent::<f64>(env, &run.hyperparams, opts, Some(oracle), |r| {
        if write_err.is_none() {
            let line = serde_json::to_string(r).expect("metrics serialize");
            if let Err(e) = writeln!(metrics, "{line}") {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("cannot write metrics");
    }
    metrics.flush()?;
    checkpoint::write_json(&CriticCheckpoint::from_table(&out.agent.critic), &dir.join(CRITIC))?;
    checkpoint::write_json(&ModelCheckpoint::from_model(&out.agent.model), &dir.join(MODEL))?;

    let mut log = String::new();
    let last = out.history.last().expect("training records at least one evaluation");
    let _ = writeln!(log, "wrote {}", dir.display());
    let _ = writeln!(
        log,
        "episode {}: success {:.3}, mean cost {:.3}, mean M {:.3}, eps_v {}",
        last.episode,
        last.success_rate,
        last.mean_cost,
        last.mean_m,
        last.eps_v.map_or("n/a".to_string(), |v| format!("{v:.3e}"))
    );
    if out.agent.critic.raw().iter().any(|q| !q.is_finite()) {
        let _ = writeln!(log, "training diverged: non-finite critic values");
        return Ok((Status::Violation, log));
    }
    Ok((Status::Ok, log))
}

pub fn eval(shared: &Shared, dir: &Path, episodes: usize, overlay: Option<(usize, usize)>) -> Result<Status> {
    let mut loaded = setup::load_run(dir, shared)?;
    if shared.oracle_critic {
        let oracle = oracle_for(&loaded.env)?;
        inject_oracle_critic(&mut loaded.agent, &loaded.env, &oracle)?;
    }
    let hp = &loaded.manifest.run.hyperparams;
    let seeds = setup::seeds(shared, hp, false)?;
    let sweep = seeds.len() > 1;
    let rule = SegmentRule::from_hyperparams(hp);
    let env = &loaded.env;
    let agent = &loaded.agent;
    let goal = match overlay {
        Some((r, c)) => Some(env.state_at(r, c).with_context(|| format!("overlay goal ({r}, {c}) is not a free cell"))?),
        None => None,
    };
    let tasks = all_tasks(env);
    let per_task = if env.is_deterministic() { 1 } else { episodes.max(1) };
    for_each_seed(&seeds, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = evaluate(env, agent, rule, Phase::Full, &tasks, per_task, &mut rng);
        let mut log = String::new();
        let _ = writeln!(
            log,
            "{} tasks x {per_task} episode(s): success {:.4}, mean cost {:.3}, mean M {:.3}",
            tasks.len(),
            report.success_rate,
            report.mean_cost,
            report.mean_m
        );
        if let Some(g) = goal {
            log.push_str(&proposal_overlay(env, agent, rule, g));
        }
        if let Some(base) = &shared.out {
            let out = setup::seed_dir(base, seed, sweep);
            fs::create_dir_all(&out)?;
            let mut w = create(&out.join("eval.jsonl"))?;
            for t in &report.tasks {
                serde_json::to_writer(&mut w, t)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Ok((Status::Ok, log))
    })
}

/// Map with the goal `G`, states whose planned subgoal differs from the goal
/// marked `a`, and the subgoals they plan marked `o`.
fn proposal_overlay(env: &GridSpec, agent: &Agent<f64>, rule: SegmentRule, goal: StateId) -> String {
    let n = env.num_states();
    let mut planned = vec![false; n];
    let mut anticipates = vec![false; n];
    if rule.hierarchy {
        for s in env.states() {
            let (z, used) = plan_subgoal(s, goal, &agent.model, &agent.target, rule.depth);
            if used {
                anticipates[s.0] = true;
                planned[z.0] = true;
            }
        }
    }
    let map = env.overlay(|s| {
        if s == goal {
            'G'
        } else if planned[s.0] {
            'o'
        } else if anticipates[s.0] {
            'a'
        } else {
            '.'
        }
    });
    format!("subgoals towards {:?} (G goal, o planned subgoal, a anticipating state):\n{map}", env.cell(goal))
}

pub struct SuiteSizes {
    pub tasks: usize,
    pub episodes_per_task: usize,
    pub rollouts: usize,
}

pub fn verify(shared: &Shared, checkpoint: Option<&Path>, sizes: SuiteSizes) -> Result<Status> {
    let (env, hp, loaded) = match checkpoint {
        Some(dir) => {
            let l = setup::load_run(dir, shared)?;
            (l.env.clone(), l.manifest.run.hyperparams.clone(), Some(l.agent))
        }
        None => {
            let hp = setup::hyperparams(shared, Hyperparams::default())?;
            let env = setup::load_map(setup::map_path(shared)?, shared.env.unwrap_or(EnvKind::Deterministic), hp.horizon)?;
            (env, hp, None)
        }
    };
    let oracle = oracle_for(&env)?;
    if oracle.hitting.is_none() {
        bail!("verification needs a map where every state can reach every other");
    }
    let seeds = setup::seeds(shared, &hp, false)?;
    let sweep = seeds.len() > 1;
    // The segment decomposition behind the bounds ends each segment at its
    // subgoal.
    let rule = SegmentRule { early_stop_subgoal: true, ..SegmentRule::from_hyperparams(&hp) };
    for_each_seed(&seeds, |seed| {
        let hp = Hyperparams { seed, ..hp.clone() };
        let mut agent = match &loaded {
            Some(a) => a.clone(),
            None if shared.oracle_critic && shared.exact_argmin => Agent::with_oracle_critic(&env, &hp, &oracle),
            None => {
                let opts = TrainOptions { exact_argmin: shared.exact_argmin, oracle_critic: shared.oracle_critic };
                train_agent::<f64>(&env, &hp, opts, Some(&oracle), |_| {})?.agent
            }
        };
        if shared.exact_argmin {
            agent.model.set_mode(ModelMode::ExactArgmin);
        }
        if shared.oracle_critic {
            inject_oracle_critic(&mut agent, &env, &oracle)?;
        }
        let opts = SuiteOptions {
            rule,
            tasks: None,
            stochastic_tasks: sizes.tasks,
            episodes_per_task: sizes.episodes_per_task,
            policy_rollouts: sizes.rollouts,
            seed,
        };
        let report = run_suite(&env, &agent, &oracle, &opts)?;
        let text = report.to_text();
        if let Some(base) = &shared.out {
            let out = setup::seed_dir(base, seed, sweep);
            fs::create_dir_all(&out)?;
            fs::write(out.join("verify.txt"), &text)?;
            let mut w = create(&out.join("verify.jsonl"))?;
            report.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Ok((if report.all_passed() { Status::Ok } else { Status::Violation }, text))
    })
}

pub fn oracle(shared: &Shared) -> Result<Status> {
    let map = setup::map_path(shared)?;
    let kind = shared.env.unwrap_or(EnvKind::Deterministic);
    let env = setup::load_map(map, kind, None)?;
    let oracle = oracle_for(&env)?;
    let out = shared.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;

    let mut w = create(&out.join("dist.csv"))?;
    write_dist_csv(&oracle.dist, &mut w)?;
    w.flush()?;
    let mut written = vec!["dist.csv"];
    if let Some(h) = &oracle.hitting {
        let mut w = create(&out.join("hitting.csv"))?;
        write_value_csv(&h.value_table(), true, &mut w)?;
        w.flush()?;
        written.push("hitting.csv");
    }
    let violations = check_triangle(&oracle);
    let n = env.num_states();
    let mut verdict = String::new();
    let _ = writeln!(verdict, "triangle inequality over {} triples: {} violation(s)", n * n * n, violations.len());
    for v in violations.iter().take(10) {
        let _ = writeln!(verdict, "  {v:?}");
    }
    fs::write(out.join("triangle.txt"), &verdict)?;
    written.push("triangle.txt");

    println!("{} states, {}", n, if env.is_deterministic() { "deterministic".to_string() } else { format!("slip {}", env.slip_prob()) });
    if let Some((a, b)) = env.disconnected_pair() {
        println!("state {} cannot reach state {}; hitting times omitted", a.0, b.0);
    }
    println!("wrote {} in {}", written.join(", "), out.display());
    print!("{verdict}");
    Ok(if violations.is_empty() { Status::Ok } else { Status::Violation })
}

pub fn compare_flat(shared: &Shared, lengths: &[usize], threshold: f64) -> Result<Status> {
    let hp = setup::hyperparams(shared, Hyperparams::corridor_comparison())?;
    if lengths.iter().any(|&l| l < 2) {
        bail!("corridor lengths must be at least 2");
    }
    let seeds: Vec<u64> = match (&shared.seeds, shared.seed) {
        (Some(r), _) => r.clone().collect(),
        (None, Some(s)) => vec![s],
        (None, None) => (0..5).collect(),
    };
    let kind = shared.env.unwrap_or(EnvKind::Deterministic);
    let rows = run_comparison(lengths, &seeds, &hp, kind, shared.exact_argmin, threshold)?;

    let show = |x: Option<usize>| x.map_or("never".to_string(), |e| e.to_string());
    println!("episodes to {:.0}% success ({} episodes per run)", threshold * 100.0, hp.episodes);
    println!("{:>4} {:>3} {:>5} {:>7} {:>7} {:>6}", "L", "K", "seed", "rla", "flat", "ratio");
    for r in &rows {
        let ratio = r.ratio().map_or("-".to_string(), |x| format!("{x:.2}"));
        println!("{:>4} {:>3} {:>5} {:>7} {:>7} {:>6}", r.length, r.segment_steps, r.seed, show(r.rla), show(r.flat), ratio);
    }
    let fmt = |m: Option<f64>| m.map_or("never".to_string(), |v| format!("{v}"));
    for (l, rla, flat) in medians_by_length(&rows) {
        let verdict = if strictly_faster(rla, flat) { "rla faster" } else { "rla not faster" };
        println!("L={l}: median rla {}, median flat {} ({verdict})", fmt(rla), fmt(flat));
    }
    if let Some(out) = &shared.out {
        fs::create_dir_all(out)?;
        let mut w = create(&out.join("compare.csv"))?;
        writeln!(w, "length,segment_steps,seed,rla,flat,ratio")?;
        for r in &rows {
            let opt = |x: Option<usize>| x.map_or(String::new(), |e| e.to_string());
            writeln!(w, "{},{},{},{},{},{}", r.length, r.segment_steps, r.seed, opt(r.rla), opt(r.flat), r.ratio().map_or(String::new(), |x| x.to_string()))?;
        }
        w.flush()?;
    }
    Ok(Status::Ok)
}
