use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Recording, Terrain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TerrainTag {
    Stable(Terrain),
    Transition(Terrain, Terrain),
}

impl TerrainTag {
    pub fn is_transition(self) -> bool {
        matches!(self, TerrainTag::Transition(..))
    }
}

impl fmt::Display for TerrainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerrainTag::Stable(t) => write!(f, "{t}"),
            TerrainTag::Transition(a, b) => write!(f, "{a}->{b}"),
        }
    }
}

/// Indices `c` with `terrain[c] != terrain[c-1]`.
fn changes(rec: &Recording) -> Vec<usize> {
    (1..rec.len()).filter(|&c| rec.terrain[c] != rec.terrain[c - 1]).collect()
}

fn tag_with(rec: &Recording, changes: &[usize], end: usize, lookback: usize) -> TerrainTag {
    let start = (end + 1).saturating_sub(lookback);
    let reach = rec.stride_len(rec.stride_of(end));
    let transition = |c: usize| TerrainTag::Transition(rec.terrain[c - 1], rec.terrain[c]);
    // Latest change inside the window: labels not uniform.
    let i = changes.partition_point(|&c| c <= end);
    if i > 0 && changes[i - 1] > start {
        return transition(changes[i - 1]);
    }
    // Otherwise the nearest change within one stride of the last sample.
    let before = (i > 0).then(|| changes[i - 1]).filter(|&c| end - c <= reach);
    let after = changes.get(i).copied().filter(|&c| c - end <= reach);
    match (before, after) {
        (Some(b), Some(a)) if a - end < end - b => transition(a),
        (Some(b), _) => transition(b),
        (None, Some(a)) => transition(a),
        (None, None) => TerrainTag::Stable(rec.terrain[end]),
    }
}

/// Tag of the window of length `lookback` ending at sample `end`.
pub fn tag_at(rec: &Recording, end: usize, lookback: usize) -> TerrainTag {
    tag_with(rec, &changes(rec), end, lookback)
}

/// Tags for every stride-1 window, in order of their last sample
/// (`lookback-1 ..= T-1`).
pub fn segment_stable_vs_transition(rec: &Recording, lookback: usize) -> Vec<TerrainTag> {
    let ch = changes(rec);
    (lookback.saturating_sub(1)..rec.len())
        .map(|end| tag_with(rec, &ch, end, lookback))
        .collect()
}
