use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::error::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Target-data fractions swept in the data-size experiments.
pub const SWEEP_FRACTIONS: [f64; 7] = [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 1.0];

/// Number of sentences kept for a fraction: `max(1, floor(n · fraction))`.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    // The small epsilon absorbs products like 0.29 * 100 = 28.999999999999996.
    (((n as f64) * fraction + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Uniform sample without replacement; original sentence order is kept.
pub fn subsample<S: Clone>(corpus: &Corpus<S>, fraction: f64, seed: u64) -> Result<Corpus<S>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = corpus.len();
    if n == 0 {
        return Err(Error::input("cannot subsample an empty corpus"));
    }
    let k = subsample_size(n, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(Corpus::new(
        picked.into_iter().map(|i| corpus.sentences[i].clone()).collect(),
        corpus.split,
        corpus.domain.clone(),
    ))
}

/// Sentence indices of one mini-batch plus their lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sentence_ids: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sentence_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence_ids.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn token_count(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// `len × max_len` mask: 1 on real tokens, 0 on padding.
    pub fn mask(&self) -> Vec<Vec<f64>> {
        let m = self.max_len();
        self.lengths
            .iter()
            .map(|&l| (0..m).map(|j| if j < l { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Shuffle sentences with `seed` and cut into batches of `batch_size`
/// (the last one may be smaller).
pub fn make_batches(lengths: &[usize], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|ids| Batch {
            sentence_ids: ids.to_vec(),
            lengths: ids.iter().map(|&i| lengths[i]).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn corpus(n: usize) -> Corpus<Vec<String>> {
        Corpus::new(
            (0..n).map(|i| vec![format!("w{i}")]).collect(),
            Split::Train,
            "d",
        )
    }

    #[test]
    fn one_percent_of_ten_thousand() {
        let c = corpus(10_000);
        assert_eq!(subsample(&c, 0.01, 3).unwrap().len(), 100);
        assert_eq!(subsample_size(100, 0.29), 29);
        assert_eq!(subsample_size(50, 0.01), 1);
    }

    #[test]
    fn deterministic_and_full_fraction_identity() {
        let c = corpus(500);
        assert_eq!(subsample(&c, 0.1, 9).unwrap(), subsample(&c, 0.1, 9).unwrap());
        assert_eq!(subsample(&c, 1.0, 9).unwrap(), c);
        assert!(subsample(&c, 0.0, 1).is_err());
        assert!(subsample(&c, 1.5, 1).is_err());
    }

    #[test]
    fn sweep_points() {
        let pct: Vec<u32> = SWEEP_FRACTIONS.iter().map(|f| (f * 100.0).round() as u32).collect();
        assert_eq!(pct, [1, 5, 10, 25, 50, 75, 100]);
    }

    #[test]
    fn batch_sizes() {
        let b = make_batches(&[3; 100], DEFAULT_BATCH_SIZE, 1).unwrap();
        let sizes: Vec<_> = b.iter().map(Batch::len).collect();
        assert_eq!(sizes, [32, 32, 32, 4]);
        assert!(make_batches(&[1], 0, 1).is_err());
    }

    #[test]
    fn mask_marks_real_tokens() {
        let b = Batch {
            sentence_ids: vec![0, 1],
            lengths: vec![3, 1],
        };
        assert_eq!(b.mask(), vec![vec![1.0, 1.0, 1.0], vec![1.0, 0.0, 0.0]]);
        assert_eq!(b.mask().iter().flatten().sum::<f64>(), b.token_count() as f64);
    }

    proptest! {
        #[test]
        fn batches_partition_the_corpus(n in 0usize..200, bs in 1usize..40, seed in any::<u64>()) {
            let lengths: Vec<usize> = (0..n).map(|i| i % 7 + 1).collect();
            let batches = make_batches(&lengths, bs, seed).unwrap();
            let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.sentence_ids.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for b in &batches {
                prop_assert!(b.len() <= bs && !b.is_empty());
            }
        }

        #[test]
        fn subsample_is_a_subset(n in 1usize..300, f in 0.001f64..=1.0, seed in any::<u64>()) {
            let c = corpus(n);
            let s = subsample(&c, f, seed).unwrap();
            prop_assert_eq!(s.len(), subsample_size(n, f));
            for w in &s.sentences {
                prop_assert!(c.sentences.contains(w));
            }
        }
    }
}
