//! Match-level train/validation/test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::samples::{success_percentage, PassSample};
use super::{DataError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitPart {
    pub matches: Vec<String>,
    pub samples: usize,
    pub success_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: SplitPart,
    pub validation: SplitPart,
    pub test: SplitPart,
}

/// Shuffles sorted match ids by `seed`; validation and test get
/// `floor(n * ratio)` matches each and the remainder goes to train.
pub fn split_by_match(matches: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut ids: Vec<String> = matches.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 3 {
        return Err(DataError::Invalid(format!("{} matches cannot fill 3 splits", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len() as f64;
    let n_val = (n * ratios[1] + 1e-9).floor() as usize;
    let n_test = (n * ratios[2] + 1e-9).floor() as usize;
    let n_train = ids.len() - n_val - n_test;
    let part = |s: &[String]| {
        let mut m = s.to_vec();
        m.sort();
        SplitPart { matches: m, ..Default::default() }
    };
    Ok(DatasetSplit {
        train: part(&ids[..n_train]),
        validation: part(&ids[n_train..n_train + n_val]),
        test: part(&ids[n_train + n_val..]),
    })
}

impl DatasetSplit {
    /// Fills per-part sample counts and success percentages.
    pub fn annotate(&mut self, samples: &[PassSample]) {
        for part in [&mut self.train, &mut self.validation, &mut self.test] {
            let own: Vec<PassSample> = samples.iter().filter(|s| part.matches.contains(&s.match_id)).cloned().collect();
            part.samples = own.len();
            part.success_pct = success_percentage(&own);
        }
    }

    pub fn select<'a>(&self, part: &SplitPart, samples: &'a [PassSample]) -> Vec<&'a PassSample> {
        samples.iter().filter(|s| part.matches.contains(&s.match_id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i:04}")).collect()
    }

    #[test]
    fn floor_counts_with_remainder_to_train() {
        let s = split_by_match(&ids(624), [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((s.train.matches.len(), s.validation.matches.len(), s.test.matches.len()), (500, 62, 62));
        let s = split_by_match(&ids(63), [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!((s.train.matches.len(), s.validation.matches.len(), s.test.matches.len()), (39, 12, 12));
    }

    #[test]
    fn deterministic_partition() {
        let a = split_by_match(&ids(40), [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(a, split_by_match(&ids(40), [0.8, 0.1, 0.1], 3).unwrap());
        let mut all: Vec<String> =
            [&a.train, &a.validation, &a.test].iter().flat_map(|p| p.matches.clone()).collect();
        all.sort();
        assert_eq!(all, ids(40));
    }

    #[test]
    fn too_few_matches() {
        assert!(split_by_match(&ids(2), [0.8, 0.1, 0.1], 0).is_err());
        assert!(split_by_match(&ids(10), [0.8, 0.1, 0.2], 0).is_err());
    }
}
