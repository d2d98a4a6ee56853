use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{to_jsonl, SkeletonSequence};
use crate::error::{Error, Result};

/// Seeded random partition of `0..n` into `round(fraction·n)` and the rest.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must be in (0,1), got {fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = (fraction * n as f64).round() as usize;
    let test = order.split_off(take);
    Ok((order, test))
}

/// Splits a target-domain dataset into an adaptation part (whose labels the
/// trainer never reads) and a held-out test part.
pub fn split_target(
    dataset: &[SkeletonSequence],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    let (train, test) = split_indices(dataset.len(), fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect();
    Ok((pick(&train), pick(&test)))
}

/// Hex SHA-256 identifying the contents and order of a split.
pub fn split_hash(train: &[SkeletonSequence], test: &[SkeletonSequence]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(to_jsonl(train)?.as_bytes());
    h.update(b"--");
    h.update(to_jsonl(test)?.as_bytes());
    Ok(format!("{:x}", h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let (a, b) = split_indices(10, 0.3, 1).unwrap();
        assert_eq!((a.len(), b.len()), (3, 7));
        assert_eq!(split_indices(10, 0.3, 1).unwrap(), (a, b));
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let (a, b) = split_indices(200, 0.3, 9).unwrap();
        assert_eq!((a.len(), b.len()), (60, 140));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        assert!(matches!(split_indices(0, 0.3, 0), Err(Error::Data(_))));
        assert!(split_indices(5, 0.0, 0).is_err());
        assert!(split_indices(5, 1.0, 0).is_err());
    }
}
