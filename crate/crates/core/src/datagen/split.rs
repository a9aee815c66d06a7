use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::TrainingExample;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Label-stratified random partition with exact sizes
/// `round(n * train)`, `round(n * valid)` and the remainder.
pub fn split_dataset<T: Clone>(
    items: &[T],
    label: impl Fn(&T) -> bool,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits<T>> {
    let (r0, r1, r2) = ratios;
    if [r0, r1, r2].iter().any(|r| !r.is_finite() || *r < 0.0) || ((r0 + r1 + r2) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let n = items.len();
    if n == 0 {
        log::warn!("splitting an empty dataset");
        return Ok(Splits { train: Vec::new(), valid: Vec::new(), test: Vec::new() });
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| label(&items[i]));
    pos.shuffle(&mut rng_from(derive_seed(seed, "split-pos")));
    neg.shuffle(&mut rng_from(derive_seed(seed, "split-neg")));

    // Interleave the strata so every prefix has close to the overall label mix.
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for stratum in [&pos, &neg] {
        let m = stratum.len() as f64;
        order.extend(stratum.iter().enumerate().map(|(r, &i)| ((r as f64 + 0.5) / m, i)));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n_train = ((n as f64) * r0).round() as usize;
    let n_valid = (((n as f64) * r1).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let pick = |range: std::ops::Range<usize>| -> Vec<T> {
        let mut idx: Vec<usize> = order[range].iter().map(|&(_, i)| i).collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| items[i].clone()).collect()
    };
    Ok(Splits { train: pick(0..n_train), valid: pick(n_train..n_train + n_valid), test: pick(n_train + n_valid..n) })
}

pub fn split_examples(
    examples: &[TrainingExample],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits<TrainingExample>> {
    split_dataset(examples, |e| e.label, ratios, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_to_train() {
        let items: Vec<u32> = (0..50).collect();
        let s = split_dataset(&items, |&i| i % 3 == 0, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(s.train, items);
        assert!(s.valid.is_empty() && s.test.is_empty());
    }

    #[test]
    fn exact_sizes_and_determinism() {
        let items: Vec<u32> = (0..1000).collect();
        let s = split_dataset(&items, |&i| i % 7 == 0, (0.7, 0.15, 0.15), 5).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (700, 150, 150));
        assert_eq!(s, split_dataset(&items, |&i| i % 7 == 0, (0.7, 0.15, 0.15), 5).unwrap());
        let pos = |v: &[u32]| v.iter().filter(|&&i| i % 7 == 0).count() as f64 / v.len() as f64;
        assert!((pos(&s.test) - 1.0 / 7.0).abs() < 0.01);
    }

    #[test]
    fn empty_and_bad_ratios() {
        let s = split_dataset::<u32>(&[], |_| true, (0.5, 0.25, 0.25), 1).unwrap();
        assert!(s.train.is_empty());
        assert!(split_dataset(&[1u32], |_| true, (0.5, 0.5, 0.5), 1).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_exact(n in 0usize..300, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in 0u64..1000) {
            let (r0, r1) = (a, (1.0 - a) * b);
            let ratios = (r0, r1, 1.0 - r0 - r1);
            let items: Vec<usize> = (0..n).collect();
            let s = split_dataset(&items, |&i| i % 4 == 0, ratios, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
            prop_assert!((s.train.len() as f64 - n as f64 * r0).abs() <= 1.0);
            prop_assert!((s.valid.len() as f64 - n as f64 * r1).abs() <= 1.0);
        }
    }
}
