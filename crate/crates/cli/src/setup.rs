//! Loading maps, configs and checkpoints, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use subgoal_rl::checkpoint::{self, CriticCheckpoint, ModelCheckpoint};
use subgoal_rl::{parse_grid, Agent, EnvKind, GridSpec, Hyperparams, ModelMode, RunConfig, TargetQ};

use crate::Shared;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.jsonl";
pub const CRITIC: &str = "critic.json";
pub const MODEL: &str = "model.json";

/// Config echo plus what is needed to reload a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub num_states: usize,
    pub horizon: usize,
    pub run: RunConfig,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(run: RunConfig, env: &GridSpec) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            num_states: env.num_states(),
            horizon: env.horizon(),
            run,
            artifacts: vec![METRICS.into(), CRITIC.into(), MODEL.into()],
        }
    }
}

pub fn hyperparams(shared: &Shared, base: Hyperparams) -> Result<Hyperparams> {
    let mut hp = match &shared.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            Hyperparams::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => base,
    };
    hp.early_stop_subgoal |= shared.early_stop_subgoal;
    hp.validate()?;
    Ok(hp)
}

pub fn map_path(shared: &Shared) -> Result<&Path> {
    shared.map.as_deref().context("--map is required")
}

pub fn load_map(path: &Path, kind: EnvKind, horizon: Option<usize>) -> Result<GridSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read map {}", path.display()))?;
    let mut env = parse_grid(&text).with_context(|| format!("invalid map {}", path.display()))?;
    if let EnvKind::Slip(p) = kind {
        env = env.with_slip(p)?;
    }
    if let Some(h) = horizon {
        env = env.with_horizon(h)?;
    }
    Ok(env)
}

/// Seeds to run. `required` refuses to fall back to the config seed.
pub fn seeds(shared: &Shared, hp: &Hyperparams, required: bool) -> Result<Vec<u64>> {
    match (&shared.seeds, shared.seed) {
        (Some(r), _) => Ok(r.clone().collect()),
        (None, Some(s)) => Ok(vec![s]),
        (None, None) if required => bail!("a seed is required: pass --seed <n> or --seeds <a..b>"),
        (None, None) => Ok(vec![hp.seed]),
    }
}

/// Output directory for one seed; sweeps get a subdirectory per seed.
pub fn seed_dir(base: &Path, seed: u64, sweep: bool) -> PathBuf {
    if sweep {
        base.join(format!("seed-{seed}"))
    } else {
        base.to_path_buf()
    }
}

/// A trained agent together with the run it came from.
pub struct Loaded {
    pub manifest: Manifest,
    pub env: GridSpec,
    pub agent: Agent<f64>,
}

/// Reloads a `train` output directory. `--map`, `--env` and `--config`
/// override the manifest.
pub fn load_run(dir: &Path, shared: &Shared) -> Result<Loaded> {
    let manifest: Manifest = checkpoint::read_json(&dir.join(MANIFEST))
        .with_context(|| format!("cannot load run manifest from {}", dir.display()))?;
    let hp = match &shared.config {
        Some(_) => hyperparams(shared, Hyperparams::default())?,
        None => {
            let mut hp = manifest.run.hyperparams.clone();
            hp.early_stop_subgoal |= shared.early_stop_subgoal;
            hp
        }
    };
    let path = shared.map.clone().unwrap_or_else(|| PathBuf::from(&manifest.run.map_path));
    let kind = shared.env.unwrap_or(manifest.run.env);
    let env = load_map(&path, kind, hp.horizon)?;
    let n = env.num_states();
    let critic: CriticCheckpoint = checkpoint::read_json(&dir.join(CRITIC))?;
    let model: ModelCheckpoint = checkpoint::read_json(&dir.join(MODEL))?;
    let critic = critic
        .into_table::<f64>(n)
        .with_context(|| format!("checkpoint in {} does not fit map {} ({n} states)", dir.display(), path.display()))?;
    let mut model = model
        .into_model::<f64>(n)
        .with_context(|| format!("checkpoint in {} does not fit map {} ({n} states)", dir.display(), path.display()))?;
    if shared.exact_argmin || manifest.run.exact_argmin {
        model.set_mode(ModelMode::ExactArgmin);
    }
    let mut target = TargetQ::new(&critic, hp.target);
    target.hard_sync(&critic);
    let mut run = manifest.run.clone();
    run.map_path = path.display().to_string();
    run.env = kind;
    run.hyperparams = hp;
    Ok(Loaded { manifest: Manifest { run, ..manifest }, env, agent: Agent { critic, target, model } })
}
