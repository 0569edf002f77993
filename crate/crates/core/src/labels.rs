//! Quantified pairwise similarity between multi-hot label vectors.
//!
//! Similarity is the cosine of the two label vectors. A pair is *hard* when
//! the label sets are identical (`s = 1`) or disjoint (`s = 0`), and *soft*
//! otherwise. The hard/soft decision is made in integer arithmetic so no
//! floating-point tolerance is involved.

use crate::error::{Error, Result};

/// Multi-hot class membership vector with at least one set flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    /// Validates that every entry is 0 or 1 and at least one is set.
    pub fn new(flags: Vec<u8>) -> Result<Self> {
        if flags.is_empty() {
            return Err(Error::Empty("label vector"));
        }
        if let Some((index, &value)) = flags.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryLabel { index, value });
        }
        if flags.iter().all(|&v| v == 0) {
            return Err(Error::EmptyLabel);
        }
        Ok(Self(flags))
    }

    /// Builds a vector of `num_classes` flags with the given classes set.
    pub fn from_classes(num_classes: usize, classes: &[usize]) -> Result<Self> {
        let mut flags = vec![0u8; num_classes];
        for &c in classes {
            if c >= num_classes {
                return Err(Error::InvalidParameter(format!(
                    "class {c} out of range for {num_classes} classes"
                )));
            }
            flags[c] = 1;
        }
        Self::new(flags)
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn flags(&self) -> &[u8] {
        &self.0
    }

    /// Number of set flags, i.e. the squared norm.
    pub fn count(&self) -> u32 {
        self.0.iter().map(|&v| u32::from(v)).sum()
    }

    /// Integer inner product, the number of shared classes.
    pub fn shared(&self, other: &LabelVector) -> Result<u32> {
        if self.0.len() != other.0.len() {
            return Err(Error::DimensionMismatch {
                context: "label vectors",
                expected: self.0.len(),
                actual: other.0.len(),
            });
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| u32::from(a & b))
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilarityMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSimilarity {
    pub value: f64,
    pub mode: SimilarityMode,
}

impl PairSimilarity {
    pub fn is_hard(&self) -> bool {
        self.mode == SimilarityMode::Hard
    }
}

/// Cosine similarity of two label vectors, in `[0, 1]`.
pub fn cosine_label_similarity(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    Ok(classify_pair(a, b)?.value)
}

/// Similarity value plus hard/soft classification.
pub fn classify_pair(a: &LabelVector, b: &LabelVector) -> Result<PairSimilarity> {
    let inner = u64::from(a.shared(b)?);
    let na = u64::from(a.count());
    let nb = u64::from(b.count());
    if inner == 0 {
        return Ok(PairSimilarity {
            value: 0.0,
            mode: SimilarityMode::Hard,
        });
    }
    if inner * inner == na * nb {
        return Ok(PairSimilarity {
            value: 1.0,
            mode: SimilarityMode::Hard,
        });
    }
    let value = inner as f64 / ((na as f64) * (nb as f64)).sqrt();
    Ok(PairSimilarity {
        value,
        mode: SimilarityMode::Soft,
    })
}

/// Dense symmetric similarity matrix.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<PairSimilarity>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> PairSimilarity {
        self.entries[i * self.n + j]
    }
}

pub fn similarity_matrix(labels: &[LabelVector]) -> Result<SimilarityMatrix> {
    if labels.is_empty() {
        return Err(Error::Empty("label set"));
    }
    let n = labels.len();
    let mut entries = vec![
        PairSimilarity {
            value: 1.0,
            mode: SimilarityMode::Hard,
        };
        n * n
    ];
    for i in 0..n {
        // diagonal still goes through classify_pair to surface dimension errors
        entries[i * n + i] = classify_pair(&labels[i], &labels[i])?;
        for j in (i + 1)..n {
            let s = classify_pair(&labels[i], &labels[j])?;
            entries[i * n + j] = s;
            entries[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { n, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(v: &[u8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_label_similarity(&lv(&[1, 0, 1]), &lv(&[1, 0, 1])).unwrap(), 1.0);
        assert_eq!(cosine_label_similarity(&lv(&[1, 0, 0]), &lv(&[0, 1, 0])).unwrap(), 0.0);
        let s = cosine_label_similarity(&lv(&[1, 1, 0]), &lv(&[1, 0, 1])).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classify_examples() {
        let p = classify_pair(&lv(&[0, 1, 1]), &lv(&[0, 1, 1])).unwrap();
        assert_eq!((p.value, p.mode), (1.0, SimilarityMode::Hard));
        let p = classify_pair(&lv(&[0, 1, 0]), &lv(&[1, 0, 1])).unwrap();
        assert_eq!((p.value, p.mode), (0.0, SimilarityMode::Hard));
        let p = classify_pair(&lv(&[1, 1, 0]), &lv(&[1, 0, 0])).unwrap();
        assert_eq!(p.mode, SimilarityMode::Soft);
        assert!((p.value - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(matches!(LabelVector::new(vec![0, 0, 0]), Err(Error::EmptyLabel)));
        assert!(matches!(
            LabelVector::new(vec![1, 2]),
            Err(Error::NonBinaryLabel { index: 1, value: 2 })
        ));
        assert!(LabelVector::new(vec![]).is_err());
        let err = classify_pair(&lv(&[1, 0]), &lv(&[1, 0, 0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn matrix_examples() {
        let m = similarity_matrix(&[lv(&[1, 0])]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(0, 0).mode, SimilarityMode::Hard);
        assert_eq!(m.get(0, 0).value, 1.0);

        let m = similarity_matrix(&[lv(&[1, 0]), lv(&[0, 1])]).unwrap();
        assert_eq!(m.get(0, 1).value, 0.0);
        assert!(m.get(1, 0).is_hard());

        let items = [lv(&[1, 1, 0, 0]), lv(&[1, 0, 0, 0]), lv(&[0, 1, 1, 1])];
        let m = similarity_matrix(&items).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), classify_pair(&items[i], &items[j]).unwrap());
            }
        }
        assert!(similarity_matrix(&[]).is_err());
        assert!(similarity_matrix(&[lv(&[1]), lv(&[1, 0])]).is_err());
    }

    fn label_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..12).prop_flat_map(|c| {
            (
                proptest::collection::vec(0u8..2, c),
                proptest::collection::vec(0u8..2, c),
            )
        })
        .prop_filter("non-empty", |(a, b)| a.contains(&1) && b.contains(&1))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn symmetric_bounded_and_exact((a, b) in label_pair()) {
            let (la, lb) = (lv(&a), lv(&b));
            let ab = classify_pair(&la, &lb).unwrap();
            let ba = classify_pair(&lb, &la).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab.value));

            let identical = a == b;
            let disjoint = a.iter().zip(&b).all(|(x, y)| x & y == 0);
            prop_assert_eq!(ab.is_hard(), identical || disjoint);
            if identical { prop_assert_eq!(ab.value, 1.0); }
            if disjoint { prop_assert_eq!(ab.value, 0.0); }
        }

        #[test]
        fn permutation_equivariant((a, b) in label_pair(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..a.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pa: Vec<u8> = perm.iter().map(|&k| a[k]).collect();
            let pb: Vec<u8> = perm.iter().map(|&k| b[k]).collect();
            let s0 = cosine_label_similarity(&lv(&a), &lv(&b)).unwrap();
            let s1 = cosine_label_similarity(&lv(&pa), &lv(&pb)).unwrap();
            prop_assert_eq!(s0, s1);
        }
    }
}
