use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

/// Disjoint train/validation/test subject sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn sets(&self) -> [&[String]; 3] {
        [&self.train, &self.val, &self.test]
    }

    pub fn by_name(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" | "validation" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Shuffles the distinct subject ids with a seeded generator and cuts them into
/// three parts. Part `i` gets `floor(n · ratios[i])` subjects; the leftover
/// subjects are handed out one at a time to train, val, test, train, ….
pub fn subject_level_split<S: AsRef<str>>(
    subject_ids: &[S],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitSpec, DataError> {
    if ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(DataError::Invalid(format!(
            "split ratios must be non-negative, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }
    let unique: BTreeSet<&str> = subject_ids.iter().map(AsRef::as_ref).collect();
    let mut ids: Vec<String> = unique.into_iter().map(str::to_string).collect();
    let n = ids.len();
    if n < 3 {
        return Err(DataError::Invalid(format!(
            "need at least 3 subjects for a train/val/test split, got {n}"
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // The epsilon keeps e.g. 0.7 · 20 = 13.999… from flooring to 13.
    let mut counts = ratios.map(|r| (n as f64 * r + 1e-9).floor() as usize);
    let mut i = 0;
    while counts.iter().sum::<usize>() < n {
        counts[i % 3] += 1;
        i += 1;
    }
    let val_start = counts[0];
    let test_start = counts[0] + counts[1];
    Ok(SplitSpec {
        train: ids[..val_start].to_vec(),
        val: ids[val_start..test_start].to_vec(),
        test: ids[test_start..].to_vec(),
        ratios,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:04}")).collect()
    }

    #[test]
    fn rounding_examples() {
        let s = subject_level_split(&ids(636), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (446, 95, 95));
        let s = subject_level_split(&ids(20), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));
        let s = subject_level_split(&ids(200), [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (120, 40, 40));
    }

    #[test]
    fn seeded_and_rejects_bad_input() {
        assert_eq!(
            subject_level_split(&ids(50), DEFAULT_RATIOS, 9).unwrap(),
            subject_level_split(&ids(50), DEFAULT_RATIOS, 9).unwrap()
        );
        assert!(subject_level_split(&ids(2), DEFAULT_RATIOS, 0).is_err());
        assert!(subject_level_split(&ids(10), [0.5, 0.5, 0.1], 0).is_err());
    }
}
