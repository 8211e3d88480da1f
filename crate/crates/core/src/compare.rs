//! Head-to-head sample efficiency of the hierarchical agent against the
//! flat baseline (same critic, same relabeling, no subgoals) on corridors.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::agent::{episodes_to_threshold, train, TrainOptions};
use crate::config::{EnvKind, Hyperparams};
use crate::error::Result;
use crate::gmdp::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub length: usize,
    pub segment_steps: usize,
    pub seed: u64,
    /// First evaluated episode at the threshold; `None` if never reached.
    pub rla: Option<usize>,
    pub flat: Option<usize>,
}

impl ComparisonRow {
    /// `rla / flat` when both reached the threshold.
    pub fn ratio(&self) -> Option<f64> {
        match (self.rla, self.flat) {
            (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
            _ => None,
        }
    }
}

/// Trains both agents on every `(length, seed)` cell, one thread per cell.
pub fn run_comparison(
    lengths: &[usize],
    seeds: &[u64],
    hp: &Hyperparams,
    env_kind: EnvKind,
    exact_argmin: bool,
    threshold: f64,
) -> Result<Vec<ComparisonRow>> {
    let cells: Vec<(usize, u64)> = lengths.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|&(length, seed)| scope.spawn(move || compare_cell(length, seed, hp, env_kind, exact_argmin, threshold)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("comparison worker panicked")).collect()
    })
}

fn compare_cell(
    length: usize,
    seed: u64,
    hp: &Hyperparams,
    env_kind: EnvKind,
    exact_argmin: bool,
    threshold: f64,
) -> Result<ComparisonRow> {
    let mut env = GridSpec::corridor(length)?.with_slip(env_kind.slip_prob())?;
    if let Some(h) = hp.horizon {
        env = env.with_horizon(h)?;
    }
    let mut reached = [None; 2];
    for (slot, hierarchy) in reached.iter_mut().zip([true, false]) {
        let run = Hyperparams { seed, hierarchy, ..hp.clone() };
        let opts = TrainOptions { exact_argmin, oracle_critic: false };
        let out = train::<f64>(&env, &run, opts, None, |_| {})?;
        *slot = episodes_to_threshold(&out.history, threshold);
    }
    Ok(ComparisonRow { length, segment_steps: hp.segment_steps, seed, rla: reached[0], flat: reached[1] })
}

/// Median episodes-to-threshold, counting runs that never reached it as
/// slower than any run that did. `None` if the median run never reached it.
pub fn median_episodes(values: impl IntoIterator<Item = Option<usize>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().map(|x| x.map_or(f64::INFINITY, |e| e as f64)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    let m = if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 };
    m.is_finite().then_some(m)
}

/// Per-length medians for the hierarchical and flat agents.
pub fn medians_by_length(rows: &[ComparisonRow]) -> Vec<(usize, Option<f64>, Option<f64>)> {
    let mut lengths: Vec<usize> = rows.iter().map(|r| r.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    lengths
        .into_iter()
        .map(|l| {
            let of = |f: fn(&ComparisonRow) -> Option<usize>| median_episodes(rows.iter().filter(|r| r.length == l).map(f));
            (l, of(|r| r.rla), of(|r| r.flat))
        })
        .collect()
}

/// Strictly fewer episodes; a median that never reached the threshold
/// loses to one that did.
pub fn strictly_faster(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    }
}
