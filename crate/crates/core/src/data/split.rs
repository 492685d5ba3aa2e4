use crate::error::{Error, Result};
use crate::tensor::{Rng, Stream};

/// Validation count: `round_half_up(fraction * n)`, kept within `[1, n - 1]`.
pub fn val_count(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n - 1)
}

/// Seeded shuffle of whole scenes, then the first `val_count` go to validation.
/// Returns `(train, val)`.
pub fn split_dataset<S>(scenes: Vec<S>, val_fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if scenes.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 scenes to split, got {}",
            scenes.len()
        )));
    }
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::config(format!("val_fraction {val_fraction} outside [0, 1]")));
    }
    let n = scenes.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).split(Stream::Split).shuffle(&mut order);
    let n_val = val_count(n, val_fraction);
    let mut slots: Vec<Option<S>> = scenes.into_iter().map(Some).collect();
    let mut val = Vec::with_capacity(n_val);
    let mut train = Vec::with_capacity(n - n_val);
    for (rank, i) in order.into_iter().enumerate() {
        let s = slots[i].take().unwrap();
        if rank < n_val {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_round_half_up() {
        assert_eq!(val_count(10, 0.2), 2);
        assert_eq!(val_count(299, 0.2), 60);
        assert_eq!(val_count(2, 0.2), 1);
        assert_eq!(val_count(5, 0.9), 4);
        let (t, v) = split_dataset((0..299).collect(), 0.2, 3).unwrap();
        assert_eq!((t.len(), v.len()), (239, 60));
    }
}
