//! Joint pairwise loss over relaxed codes and its analytic gradient.
//!
//! Hard pairs (`s` exactly 0 or 1) use the logistic negative log-likelihood of
//! `omega = alpha * <u_i, u_j>`. Soft pairs (`0 < s < 1`) regress the shifted
//! inner product `(<u_i, u_j> + q) / 2` onto `s * q`. An L1 quantization term
//! pulls every entry toward `+-1`. The batch cost is the mean over pairs.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::labels::PairSimilarity;
use crate::scalar::{sigmoid, softplus, Scalar};

/// Which similarity loss is applied to which pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Cross-entropy on hard pairs, weighted MSE on soft pairs.
    #[default]
    Joint,
    /// Cross-entropy on every pair, with the quantified similarity as target.
    CrossEntropyOnly,
    /// Cross-entropy on every pair, target 1 when any label is shared, else 0.
    CoarseCrossEntropy,
    /// Weighted MSE on every pair.
    MseOnly,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(LossMode::Joint),
            "ce" | "cross-entropy" => Ok(LossMode::CrossEntropyOnly),
            "coarse-ce" => Ok(LossMode::CoarseCrossEntropy),
            "mse" => Ok(LossMode::MseOnly),
            other => Err(Error::InvalidParameter(format!(
                "unknown loss mode '{other}' (expected joint, ce, coarse-ce or mse)"
            ))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Joint => "joint",
            LossMode::CrossEntropyOnly => "ce",
            LossMode::CoarseCrossEntropy => "coarse-ce",
            LossMode::MseOnly => "mse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub bits: usize,
    pub alpha: T,
    pub gamma: T,
    pub lambda: T,
    pub mode: LossMode,
}

impl<T: Scalar> LossConfig<T> {
    /// `alpha = 5/q`, `gamma = 0.1/q`, `lambda = 0.1`.
    pub fn with_defaults(bits: usize) -> Self {
        let q = bits.max(1) as f64;
        Self {
            bits,
            alpha: T::of(5.0 / q),
            gamma: T::of(0.1 / q),
            lambda: T::of(0.1),
            mode: LossMode::Joint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::InvalidParameter("code length must be at least 1".into()));
        }
        if !(self.alpha > T::zero() && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.gamma >= T::zero() && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lambda >= T::zero() && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Unordered training pair of code-buffer rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub similarity: PairSimilarity,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairBatch {
    pairs: Vec<Pair>,
}

impl PairBatch {
    /// Rejects self-pairs.
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.i == p.j) {
            return Err(Error::InvalidParameter(format!("self-pair ({}, {})", p.i, p.j)));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check_indices(&self, rows: usize) -> Result<()> {
        match self.pairs.iter().find(|p| p.i >= rows || p.j >= rows) {
            Some(p) => Err(Error::InvalidParameter(format!(
                "pair ({}, {}) out of range for {rows} codes",
                p.i, p.j
            ))),
            None => Ok(()),
        }
    }
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "relaxed code pair",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `alpha * <u_i, u_j>`.
pub fn inner_product_logit<T: Scalar>(u_i: &[T], u_j: &[T], alpha: T) -> Result<T> {
    check_len(u_i, u_j)?;
    Ok(alpha * dot(u_i, u_j))
}

/// `log(1 + e^omega) - s * omega` for a target `s` in `[0, 1]`.
pub fn cross_entropy_loss<T: Scalar>(omega: T, s: T) -> T {
    softplus(omega) - s * omega
}

/// Cross-entropy for a hard pair; `similar` encodes `s = 1`.
pub fn hard_pair_loss<T: Scalar>(omega: T, similar: bool) -> T {
    cross_entropy_loss(omega, if similar { T::one() } else { T::zero() })
}

fn mse_residual<T: Scalar>(inner: T, s: T, bits: usize) -> T {
    let q = T::of(bits as f64);
    (inner + q) / T::of(2.0) - s * q
}

/// `((<u_i, u_j> + q) / 2 - s * q)^2`.
pub fn soft_pair_loss<T: Scalar>(u_i: &[T], u_j: &[T], s: T, bits: usize) -> Result<T> {
    check_len(u_i, u_j)?;
    let r = mse_residual(dot(u_i, u_j), s, bits);
    Ok(r * r)
}

fn coarse<T: Scalar>(sim: &PairSimilarity) -> T {
    if sim.value > 0.0 {
        T::one()
    } else {
        T::zero()
    }
}

/// Similarity loss of one pair under `cfg.mode`.
pub fn pair_loss<T: Scalar>(u_i: &[T], u_j: &[T], sim: &PairSimilarity, cfg: &LossConfig<T>) -> Result<T> {
    check_len(u_i, u_j)?;
    let inner = dot(u_i, u_j);
    let s = T::of(sim.value);
    Ok(match (cfg.mode, sim.is_hard()) {
        (LossMode::Joint, true) | (LossMode::CrossEntropyOnly, _) => cross_entropy_loss(cfg.alpha * inner, s),
        (LossMode::CoarseCrossEntropy, _) => cross_entropy_loss(cfg.alpha * inner, coarse(sim)),
        (LossMode::Joint, false) | (LossMode::MseOnly, _) => {
            let r = mse_residual(inner, s, cfg.bits);
            cfg.gamma * r * r
        }
    })
}

/// Sum of `| |u_k| - 1 |` over both codes.
pub fn quantization_loss<T: Scalar>(u_i: &[T], u_j: &[T]) -> T {
    let one = |u: &[T]| u.iter().fold(T::zero(), |acc, &v| acc + (v.abs() - T::one()).abs());
    one(u_i) + one(u_j)
}

/// Subgradient of `| |u| - 1 |` inside `(-1, 1)`; `-1` at zero.
fn quantization_subgradient<T: Scalar>(u: T) -> T {
    if u > -T::one() && u < T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// Mean batch cost split into its parts. `total = similarity + lambda * quantization`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown<T> {
    pub total: T,
    pub similarity: T,
    pub quantization: T,
}

fn check_batch<T: Scalar>(codes: &ArrayView2<'_, T>, batch: &PairBatch, cfg: &LossConfig<T>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("pair batch"));
    }
    cfg.validate()?;
    if codes.ncols() != cfg.bits {
        return Err(Error::DimensionMismatch {
            context: "code length",
            expected: cfg.bits,
            actual: codes.ncols(),
        });
    }
    batch.check_indices(codes.nrows())
}

fn row<'a, T: Scalar>(codes: &'a ArrayView2<'_, T>, i: usize) -> ArrayView1<'a, T> {
    codes.row(i)
}

fn row_slice<T: Scalar>(codes: &ArrayView2<'_, T>, i: usize) -> Vec<T> {
    row(codes, i).to_vec()
}

/// Mean over pairs of `pair_loss + lambda * quantization_loss`.
///
/// `codes` holds one relaxed code per row; pairs index into its rows.
pub fn total_cost<T: Scalar>(codes: ArrayView2<'_, T>, batch: &PairBatch, cfg: &LossConfig<T>) -> Result<CostBreakdown<T>> {
    check_batch(&codes, batch, cfg)?;
    let terms: Vec<(T, T)> = batch
        .pairs
        .par_iter()
        .map(|p| {
            let (ui, uj) = (row_slice(&codes, p.i), row_slice(&codes, p.j));
            let sim = pair_loss(&ui, &uj, &p.similarity, cfg)?;
            Ok((sim, quantization_loss(&ui, &uj)))
        })
        .collect::<Result<_>>()?;
    let n = T::of(terms.len() as f64);
    let (sim, quant) = terms
        .iter()
        .fold((T::zero(), T::zero()), |(a, b), &(s, q)| (a + s, b + q));
    let similarity = sim / n;
    let quantization = quant / n;
    Ok(CostBreakdown {
        total: similarity + cfg.lambda * quantization,
        similarity,
        quantization,
    })
}

/// Derivative of the pair's similarity loss with respect to `<u_i, u_j>`.
fn pair_coefficient<T: Scalar>(inner: T, sim: &PairSimilarity, cfg: &LossConfig<T>) -> T {
    let s = T::of(sim.value);
    match (cfg.mode, sim.is_hard()) {
        (LossMode::Joint, true) | (LossMode::CrossEntropyOnly, _) => cfg.alpha * (sigmoid(cfg.alpha * inner) - s),
        (LossMode::CoarseCrossEntropy, _) => cfg.alpha * (sigmoid(cfg.alpha * inner) - coarse(sim)),
        (LossMode::Joint, false) | (LossMode::MseOnly, _) => cfg.gamma * mse_residual(inner, s, cfg.bits),
    }
}

/// Gradient of [`total_cost`] with respect to every code row.
///
/// Rows not referenced by any pair get a zero gradient. Accumulation runs in
/// pair order, so the result does not depend on the thread count.
pub fn cost_gradient<T: Scalar>(codes: ArrayView2<'_, T>, batch: &PairBatch, cfg: &LossConfig<T>) -> Result<Array2<T>> {
    check_batch(&codes, batch, cfg)?;
    let coefficients: Vec<T> = batch
        .pairs
        .par_iter()
        .map(|p| pair_coefficient(row(&codes, p.i).dot(&row(&codes, p.j)), &p.similarity, cfg))
        .collect();

    let mut grad = Array2::<T>::zeros(codes.dim());
    let mut memberships = vec![0usize; codes.nrows()];
    for (p, &c) in batch.pairs.iter().zip(&coefficients) {
        grad.row_mut(p.i).scaled_add(c, &row(&codes, p.j));
        grad.row_mut(p.j).scaled_add(c, &row(&codes, p.i));
        memberships[p.i] += 1;
        memberships[p.j] += 1;
    }
    if cfg.lambda > T::zero() {
        for (i, &m) in memberships.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let w = cfg.lambda * T::of(m as f64);
            for (g, &u) in grad.row_mut(i).iter_mut().zip(row(&codes, i)) {
                *g += w * quantization_subgradient(u);
            }
        }
    }
    let n = T::of(batch.len() as f64);
    grad.mapv_inplace(|g| g / n);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::SimilarityMode;
    use ndarray::array;
    use proptest::prelude::*;

    fn hard(v: f64) -> PairSimilarity {
        PairSimilarity { value: v, mode: SimilarityMode::Hard }
    }

    fn soft(v: f64) -> PairSimilarity {
        PairSimilarity { value: v, mode: SimilarityMode::Soft }
    }

    #[test]
    fn logit_examples() {
        assert_eq!(inner_product_logit(&[0.0f64; 3], &[0.0; 3], 1.0).unwrap(), 0.0);
        let u = [0.8f64; 4];
        assert!((inner_product_logit(&u, &u, 5.0 / 4.0).unwrap() - 3.2).abs() < 1e-12);
        assert!(inner_product_logit(&[0.1f64], &[0.1, 0.2], 1.0).is_err());
    }

    #[test]
    fn hard_loss_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((hard_pair_loss(0.0, true) - ln2).abs() < 1e-12);
        assert!((hard_pair_loss(0.0, false) - ln2).abs() < 1e-12);
        assert!((hard_pair_loss(10.0f64, true) - 4.539889921686e-5).abs() < 1e-12);
        for &w in &[500.0f64, -500.0] {
            for &s in &[true, false] {
                let l = hard_pair_loss(w, s);
                assert!(l.is_finite());
                let closed = w.max(0.0) + (-w.abs()).exp().ln_1p() - if s { w } else { 0.0 };
                assert_eq!(l, closed);
            }
        }
    }

    #[test]
    fn soft_loss_examples() {
        // q = 4, s = 0.75 => target inner = 2 s q - q = 2
        let u = [0.5f64, 0.5, 0.5, 0.5];
        let v = [1.0f64, 1.0, 1.0, 1.0];
        assert_eq!(soft_pair_loss(&u, &v, 0.75, 4).unwrap(), 0.0);
        let z = [0.0f64; 16];
        assert_eq!(soft_pair_loss(&z, &z, 0.5, 16).unwrap(), 0.0);
        assert_eq!(soft_pair_loss(&z, &z, 0.75, 16).unwrap(), 16.0);
    }

    #[test]
    fn pair_loss_examples() {
        let cfg = LossConfig::<f64>::with_defaults(4);
        let z = [0.0f64; 4];
        assert!((pair_loss(&z, &z, &hard(1.0), &cfg).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let u = [0.5f64; 4];
        let v = [1.0f64; 4];
        assert_eq!(pair_loss(&u, &v, &soft(0.75), &cfg).unwrap(), 0.0);
        let cfg0 = LossConfig { gamma: 0.0, ..cfg };
        assert_eq!(pair_loss(&z, &z, &soft(0.3), &cfg0).unwrap(), 0.0);
    }

    #[test]
    fn coarse_mode_binarizes_target() {
        let cfg = LossConfig { mode: LossMode::CoarseCrossEntropy, ..LossConfig::<f64>::with_defaults(4) };
        let u = [0.3f64, -0.2, 0.5, 0.1];
        let v = [0.4f64, 0.6, -0.1, 0.2];
        let omega = cfg.alpha * u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        let partial = pair_loss(&u, &v, &soft(0.4), &cfg).unwrap();
        assert!((partial - hard_pair_loss(omega, true)).abs() < 1e-15);
        let none = pair_loss(&u, &v, &hard(0.0), &cfg).unwrap();
        assert!((none - hard_pair_loss(omega, false)).abs() < 1e-15);
    }

    #[test]
    fn quantization_examples() {
        assert_eq!(quantization_loss(&[1.0f64, -1.0], &[-1.0, -1.0]), 0.0);
        assert_eq!(quantization_loss(&[0.0f64; 8], &[0.0; 8]), 16.0);
        assert_eq!(quantization_loss(&[0.5f64, -0.5], &[1.0, -1.0]), 1.0);
        assert_eq!(quantization_subgradient(0.0f64), -1.0);
        assert_eq!(quantization_subgradient(-0.3f64), 1.0);
        assert_eq!(quantization_subgradient(0.3f64), -1.0);
    }

    #[test]
    fn cost_requires_pairs_and_valid_rows() {
        let cfg = LossConfig::<f64>::with_defaults(2);
        let codes = array![[0.1, 0.2], [0.3, -0.4]];
        assert!(matches!(total_cost(codes.view(), &PairBatch::default(), &cfg), Err(Error::Empty(_))));
        let out_of_range = PairBatch::new(vec![Pair { i: 0, j: 5, similarity: hard(1.0) }]).unwrap();
        assert!(total_cost(codes.view(), &out_of_range, &cfg).is_err());
        assert!(PairBatch::new(vec![Pair { i: 1, j: 1, similarity: hard(1.0) }]).is_err());
    }

    #[test]
    fn single_soft_pair_at_target_costs_nothing() {
        let mut cfg = LossConfig::<f64>::with_defaults(4);
        cfg.lambda = 0.0;
        let codes = array![[0.5, 0.5, 0.5, 0.5], [0.9, 0.9, 0.9, 0.9]];
        // inner = 1.8 => s = (1.8 + 4) / 8
        let batch = PairBatch::new(vec![Pair { i: 0, j: 1, similarity: soft(5.8 / 8.0) }]).unwrap();
        let c = total_cost(codes.view(), &batch, &cfg).unwrap();
        assert!(c.total.abs() < 1e-24);
        let g = cost_gradient(codes.view(), &batch, &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn saturated_hard_pair_has_vanishing_similarity_gradient() {
        let cfg = LossConfig { alpha: 50.0, lambda: 0.0, ..LossConfig::<f64>::with_defaults(4) };
        let codes = array![[0.99, 0.99, 0.99, 0.99], [0.99, 0.99, 0.99, 0.99]];
        let batch = PairBatch::new(vec![Pair { i: 0, j: 1, similarity: hard(1.0) }]).unwrap();
        let g = cost_gradient(codes.view(), &batch, &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-50));
    }

    #[test]
    fn mean_matches_naive_resummation() {
        let cfg = LossConfig::<f64>::with_defaults(3);
        let codes = array![
            [0.1, -0.7, 0.4],
            [0.9, 0.2, -0.3],
            [-0.5, -0.5, 0.6],
            [0.05, 0.8, -0.95]
        ];
        let pairs = vec![
            Pair { i: 0, j: 1, similarity: hard(1.0) },
            Pair { i: 0, j: 2, similarity: soft(0.5) },
            Pair { i: 1, j: 3, similarity: hard(0.0) },
            Pair { i: 2, j: 3, similarity: soft(0.70710678) },
            Pair { i: 1, j: 2, similarity: hard(0.0) },
        ];
        let mut naive = 0.0;
        for p in &pairs {
            let (a, b) = (codes.row(p.i).to_vec(), codes.row(p.j).to_vec());
            let ip: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let sim = if p.similarity.is_hard() {
                let w = cfg.alpha * ip;
                (1.0 + w.exp()).ln() - p.similarity.value * w
            } else {
                cfg.gamma * ((ip + 3.0) / 2.0 - p.similarity.value * 3.0).powi(2)
            };
            let quant: f64 = a.iter().chain(&b).map(|v| (v.abs() - 1.0).abs()).sum();
            naive += sim + cfg.lambda * quant;
        }
        naive /= 5.0;
        let batch = PairBatch::new(pairs.clone()).unwrap();
        let got = total_cost(codes.view(), &batch, &cfg).unwrap();
        assert!((got.total - naive).abs() < 1e-12);

        let doubled = PairBatch::new(pairs.iter().chain(&pairs).copied().collect()).unwrap();
        let twice = total_cost(codes.view(), &doubled, &cfg).unwrap();
        assert!((twice.total - got.total).abs() < 1e-12);
    }

    #[test]
    fn binary_codes_zero_quantization() {
        let cfg = LossConfig::<f64>::with_defaults(2);
        let codes = array![[1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
        let batch = PairBatch::new(vec![
            Pair { i: 0, j: 1, similarity: hard(1.0) },
            Pair { i: 0, j: 2, similarity: hard(0.0) },
        ])
        .unwrap();
        let c = total_cost(codes.view(), &batch, &cfg).unwrap();
        assert_eq!(c.quantization, 0.0);
        assert_eq!(c.total, c.similarity);
    }

    #[test]
    fn loss_mode_parsing() {
        assert_eq!("joint".parse::<LossMode>().unwrap(), LossMode::Joint);
        assert_eq!("ce".parse::<LossMode>().unwrap(), LossMode::CrossEntropyOnly);
        assert_eq!("mse".parse::<LossMode>().unwrap(), LossMode::MseOnly);
        assert_eq!("coarse-ce".parse::<LossMode>().unwrap(), LossMode::CoarseCrossEntropy);
        assert_eq!(LossMode::CoarseCrossEntropy.to_string(), "coarse-ce");
        assert!("x".parse::<LossMode>().is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = LossConfig::<f64>::with_defaults(8);
        assert!((cfg.alpha - 0.625).abs() < 1e-15);
        assert!((cfg.gamma - 0.0125).abs() < 1e-15);
        assert!(cfg.validate().is_ok());
        assert!(LossConfig { alpha: 0.0, ..cfg }.validate().is_err());
        assert!(LossConfig { gamma: -1.0, ..cfg }.validate().is_err());
        assert!(LossConfig { bits: 0, ..cfg }.validate().is_err());
    }

    proptest! {
        #[test]
        fn losses_nonnegative(w in -600.0f64..600.0, s in any::<bool>(),
                              u in proptest::collection::vec(-0.999f64..0.999, 6),
                              v in proptest::collection::vec(-0.999f64..0.999, 6),
                              sv in 0.01f64..0.99) {
            prop_assert!(hard_pair_loss(w, s) >= 0.0);
            prop_assert!(soft_pair_loss(&u, &v, sv, 6).unwrap() >= 0.0);
            prop_assert!(quantization_loss(&u, &v) >= 0.0);
        }

        #[test]
        fn hard_loss_monotone(a in -30.0f64..30.0, d in 0.01f64..5.0) {
            prop_assert!(hard_pair_loss(a + d, true) < hard_pair_loss(a, true));
            prop_assert!(hard_pair_loss(a + d, false) > hard_pair_loss(a, false));
        }
    }
}
