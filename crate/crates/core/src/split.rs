//! Image-disjoint train/test partitioning.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::qa::QAPair;
use crate::vocab::QuestionType;

/// Test-side image fraction matching a 1158/290 image split.
pub const DEFAULT_TEST_IMAGE_FRACTION: f64 = 290.0 / 1448.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<QAPair>,
    pub test: Vec<QAPair>,
    pub seed: u64,
    pub test_image_fraction: f64,
    pub image_ids_train: BTreeSet<String>,
    pub image_ids_test: BTreeSet<String>,
}

impl DatasetSplit {
    /// Rebuilds a split from pinned image-id sets. Every pair's image must be
    /// on exactly one side.
    pub fn from_image_sets(
        pairs: &[QAPair],
        image_ids_train: BTreeSet<String>,
        image_ids_test: BTreeSet<String>,
        seed: u64,
        test_image_fraction: f64,
    ) -> Result<Self> {
        if let Some(shared) = image_ids_train.intersection(&image_ids_test).next() {
            return Err(Error::Split(format!("image {shared} is on both sides")));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for pair in pairs {
            if image_ids_test.contains(&pair.image_id) {
                test.push(pair.clone());
            } else if image_ids_train.contains(&pair.image_id) {
                train.push(pair.clone());
            } else {
                return Err(Error::Split(format!(
                    "question {} refers to image {} which is on neither side",
                    pair.question_id, pair.image_id
                )));
            }
        }
        Ok(DatasetSplit {
            train,
            test,
            seed,
            test_image_fraction,
            image_ids_train,
            image_ids_test,
        })
    }

    /// Checks the disjointness and coverage invariants exhaustively.
    pub fn check_invariants(&self) -> Result<()> {
        if let Some(shared) = self.image_ids_train.intersection(&self.image_ids_test).next() {
            return Err(Error::Split(format!("image {shared} is on both sides")));
        }
        for (side, pairs, ids) in [
            ("train", &self.train, &self.image_ids_train),
            ("test", &self.test, &self.image_ids_test),
        ] {
            if let Some(p) = pairs.iter().find(|p| !ids.contains(&p.image_id)) {
                return Err(Error::Split(format!(
                    "{side} question {} has image {} outside the {side} image set",
                    p.question_id, p.image_id
                )));
            }
        }
        Ok(())
    }
}

/// Shuffles the distinct image ids with a seeded permutation and assigns the
/// first `round(fraction * n_images)` of them to the test side. Questions
/// follow their image and keep their input order within each side.
pub fn split_by_image(pairs: &[QAPair], test_image_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if pairs.is_empty() {
        return Err(Error::Split("no pairs to split".into()));
    }
    if !(test_image_fraction > 0.0 && test_image_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test image fraction must lie strictly between 0 and 1, got {test_image_fraction}"
        )));
    }

    let distinct: BTreeSet<&str> = pairs.iter().map(|p| p.image_id.as_str()).collect();
    let n_images = distinct.len();
    if n_images < 2 {
        return Err(Error::Split("a disjoint split needs at least two distinct images".into()));
    }
    let n_test = num_traits::Float::round(test_image_fraction * n_images as f64) as usize;
    if n_test == 0 || n_test >= n_images {
        return Err(Error::Split(format!(
            "fraction {test_image_fraction} over {n_images} images leaves one side empty"
        )));
    }

    let mut images: Vec<&str> = distinct.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    images.shuffle(&mut rng);

    let image_ids_test: BTreeSet<String> = images[..n_test].iter().map(|s| String::from(*s)).collect();
    let image_ids_train: BTreeSet<String> = images[n_test..].iter().map(|s| String::from(*s)).collect();

    let (test, train): (Vec<QAPair>, Vec<QAPair>) =
        pairs.iter().cloned().partition(|p| image_ids_test.contains(&p.image_id));

    Ok(DatasetSplit {
        train,
        test,
        seed,
        test_image_fraction,
        image_ids_train,
        image_ids_test,
    })
}

/// Counts pairs per question type. All five types are present in the result.
pub fn type_histogram(pairs: &[QAPair]) -> BTreeMap<QuestionType, usize> {
    let mut hist: BTreeMap<QuestionType, usize> = QuestionType::ALL.iter().map(|t| (*t, 0)).collect();
    for p in pairs {
        *hist.entry(p.question_type).or_default() += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn synthetic(n_images: usize, per_image: usize) -> Vec<QAPair> {
        let mut out = Vec::new();
        for i in 0..n_images {
            for q in 0..per_image {
                let (ty, ans) = match (i + q) % 5 {
                    0 => (QuestionType::SimpleCount, (q % 51).to_string()),
                    1 => (QuestionType::ComplexCount, "3".to_string()),
                    2 => (QuestionType::YesNo, "Yes".to_string()),
                    3 => (QuestionType::ImageCondition, "flooded".to_string()),
                    _ => (QuestionType::RoadCondition, "non-flooded".to_string()),
                };
                out.push(QAPair::new(format!("q{i}_{q}"), format!("img{i}"), "?", &ans, ty).unwrap());
            }
        }
        out
    }

    #[test]
    fn default_fraction_proportions() {
        let pairs = synthetic(1448, 3);
        let split = split_by_image(&pairs, DEFAULT_TEST_IMAGE_FRACTION, 7).unwrap();
        assert_eq!(split.image_ids_test.len(), 290);
        assert_eq!(split.image_ids_train.len(), 1158);
        assert_eq!(split.test.len(), 870);
        split.check_invariants().unwrap();
    }

    #[test]
    fn deterministic() {
        let pairs = synthetic(40, 2);
        let a = split_by_image(&pairs, 0.5, 11).unwrap();
        let b = split_by_image(&pairs, 0.5, 11).unwrap();
        assert_eq!(a, b);
        let c = split_by_image(&pairs, 0.5, 12).unwrap();
        assert_ne!(a.image_ids_test, c.image_ids_test);
    }

    #[test]
    fn error_paths() {
        assert!(split_by_image(&[], 0.5, 0).is_err());
        let one = synthetic(1, 4);
        assert!(split_by_image(&one, 0.5, 0).is_err());
        let few = synthetic(3, 1);
        assert!(split_by_image(&few, 0.1, 0).is_err());
        assert!(split_by_image(&few, 0.0, 0).is_err());
        assert!(split_by_image(&few, 1.0, 0).is_err());
        assert!(split_by_image(&few, f64::NAN, 0).is_err());
    }

    #[test]
    fn empty_histogram() {
        let h = type_histogram(&[]);
        assert_eq!(h.len(), 5);
        assert!(h.values().all(|c| *c == 0));
    }

    #[test]
    fn rebuild_from_image_sets() {
        let pairs = synthetic(10, 2);
        let split = split_by_image(&pairs, 0.3, 5).unwrap();
        let rebuilt = DatasetSplit::from_image_sets(
            &pairs,
            split.image_ids_train.clone(),
            split.image_ids_test.clone(),
            5,
            0.3,
        )
        .unwrap();
        assert_eq!(rebuilt, split);

        let mut missing = split.image_ids_train.clone();
        missing.pop_first();
        assert!(DatasetSplit::from_image_sets(&pairs, missing, split.image_ids_test.clone(), 5, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn split_is_image_disjoint_partition(n_images in 2usize..60, per_image in 1usize..4,
                                             frac in 0.05f64..0.95, seed: u64) {
            let pairs = synthetic(n_images, per_image);
            if let Ok(split) = split_by_image(&pairs, frac, seed) {
                prop_assert!(split.image_ids_train.is_disjoint(&split.image_ids_test));
                split.check_invariants().unwrap();
                let mut all: Vec<QAPair> = split.train.iter().chain(split.test.iter()).cloned().collect();
                let mut expected = pairs.clone();
                all.sort();
                expected.sort();
                prop_assert_eq!(all, expected);
            }
        }

        #[test]
        fn histogram_sums_to_len(mask in proptest::collection::vec(any::<bool>(), 0..120)) {
            let pairs = synthetic(30, 4);
            let subset: Vec<QAPair> = pairs.iter().zip(mask.iter()).filter(|(_, m)| **m).map(|(p, _)| p.clone()).collect();
            let hist = type_histogram(&subset);
            prop_assert_eq!(hist.values().sum::<usize>(), subset.len());
            for t in QuestionType::ALL {
                prop_assert_eq!(hist[&t], subset.iter().filter(|p| p.question_type == t).count());
            }
        }
    }
}
