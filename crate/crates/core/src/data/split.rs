use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::WindowSet;
use crate::error::{Error, Result};

/// Training share of a class of `count` members: round-half-up of
/// `count * fraction`, kept within `1..count` so both sides are non-empty.
pub fn train_count(count: usize, fraction: f64) -> usize {
    let raw = (count as f64 * fraction + 0.5).floor() as usize;
    raw.clamp(1, count.saturating_sub(1).max(1))
}

/// Per-class shuffled split. Each side keeps the original window order.
pub fn stratified_split(
    ws: &WindowSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(WindowSet, WindowSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param("train_fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..ws.len()).filter(|&i| ws.labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::param(format!(
                "class {class} has {} member(s); stratification needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = train_count(members.len(), train_fraction);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ws.select(&train), ws.select(&test)))
}
