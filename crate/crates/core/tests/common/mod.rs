#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use subgoal_rl::{parse_grid, ActionId, GridSpec, StateId};

pub const SHIPPED_MAPS: &[&str] =
    &["corridor_9.txt", "open_7x7.txt", "two_rooms_9x9.txt", "sealed.txt", "corridor_20.txt", "corridor_40.txt"];

pub fn map_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../maps").join(name)
}

pub fn load_map(name: &str) -> GridSpec {
    let text = std::fs::read_to_string(map_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    parse_grid(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Breadth-first distances over intended moves, computed without the
/// crate's oracle. `None` marks unreachable pairs.
pub fn bfs_all(env: &GridSpec) -> Vec<Vec<Option<u32>>> {
    let n = env.num_states();
    (0..n)
        .map(|src| {
            let mut d = vec![None; n];
            d[src] = Some(0);
            let mut queue = VecDeque::from([StateId(src)]);
            while let Some(s) = queue.pop_front() {
                let ds = d[s.0].unwrap();
                for a in (0..4).map(ActionId) {
                    let t = env.intended(s, a);
                    if d[t.0].is_none() {
                        d[t.0] = Some(ds + 1);
                        queue.push_back(t);
                    }
                }
            }
            d
        })
        .collect()
}
