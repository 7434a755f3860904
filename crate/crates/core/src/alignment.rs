//! Cosine similarity between image and response embeddings and the
//! symmetric contrastive objective that aligns them.
//!
//! For a batch of `N` matched pairs with similarity matrix `w` (rows are
//! images, columns responses) the loss is
//!
//! ```text
//! L = -1/(2N) Σ_i [ log softmax(w_i·)_i + log softmax(w_·i)_i ]
//! ```
//!
//! with raw cosine similarities as logits. An optional temperature divides
//! the logits first; it is off by default.

use serde::{Deserialize, Serialize};

use crate::autodiff::{note_degenerate, Graph, Var, DEGENERATE_NORM};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    /// Logit temperature; `None` uses the cosine similarities unscaled.
    pub temperature: Option<f64>,
}

/// `a·b / (‖a‖‖b‖)` clamped to `[-1, 1]`. A vector with norm below
/// [`DEGENERATE_NORM`] scores 0 and is counted in
/// [`crate::autodiff::degenerate_count`].
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(shape_err!("cosine similarity of lengths {} and {}", a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        note_degenerate(1);
        return Ok(T::zero());
    }
    Ok(T::of((dot / (na * nb)).clamp(-1.0, 1.0)))
}

/// Cosine score of every candidate against `query`, in input order.
pub fn rank_candidates<T: Scalar>(query: &[T], candidates: &[&[T]]) -> Result<Vec<T>> {
    if candidates.is_empty() {
        return Err(invalid!("rank_candidates: empty candidate list"));
    }
    candidates.iter().map(|c| cosine_similarity(query, c)).collect()
}

/// Differentiable `[N,N]` matrix of cosines between the rows of `images`
/// and the rows of `responses`.
pub fn similarity_matrix<T: Scalar>(g: &mut Graph<T>, images: Var, responses: Var) -> Result<Var> {
    let (a, b) = (g.shape(images).to_vec(), g.shape(responses).to_vec());
    if a.len() != 2 || b.len() != 2 || a != b {
        return Err(shape_err!("similarity matrix needs equal [N,d] inputs, got {a:?} and {b:?}"));
    }
    let ia = g.normalize_rows(images)?;
    let rb = g.normalize_rows(responses)?;
    let rbt = g.transpose(rb)?;
    let w = g.matmul(ia, rbt)?;
    Ok(g.clamp(w, -T::one(), T::one()))
}

/// Differentiable symmetric contrastive loss of a square similarity matrix.
pub fn contrastive_loss<T: Scalar>(g: &mut Graph<T>, w: Var, config: ContrastiveConfig) -> Result<Var> {
    let shape = g.shape(w).to_vec();
    let n = match shape[..] {
        [r, c] if r == c && r > 0 => r,
        _ => return Err(shape_err!("contrastive loss needs a square matrix, got {shape:?}")),
    };
    let logits = match config.temperature {
        Some(t) if t > 0.0 => g.scale(w, T::of(1.0 / t)),
        Some(t) => return Err(invalid!("temperature must be positive, got {t}")),
        None => w,
    };
    let rows = g.logsumexp(logits, 1)?;
    let cols = g.logsumexp(logits, 0)?;
    let diag = g.diag(logits)?;
    let rows = g.sum(rows);
    let cols = g.sum(cols);
    let diag = g.sum(diag);
    let both = g.add(rows, cols)?;
    let twice = g.scale(diag, T::of(2.0));
    let total = g.sub(both, twice)?;
    Ok(g.scale(total, T::of(1.0 / (2.0 * n as f64))))
}

/// `log(1 + (N−1)e^{-2})`: no batch of cosine logits can score below this.
pub fn contrastive_lower_bound(n: usize) -> f64 {
    (1.0 + (n as f64 - 1.0) * (-2.0f64).exp()).ln()
}

/// Concrete `[N,N]` similarity values; entry `(i, j)` compares image `i`
/// with response `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T> {
    values: Tensor<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        match *values.shape() {
            [r, c] if r == c => Ok(SimilarityMatrix { values }),
            ref s => Err(shape_err!("similarity matrix must be square, got {s:?}")),
        }
    }

    pub fn from_embeddings(images: &Tensor<T>, responses: &Tensor<T>) -> Result<Self> {
        let mut g = Graph::new();
        let (a, b) = (g.constant(images.clone()), g.constant(responses.clone()));
        let w = similarity_matrix(&mut g, a, b)?;
        Self::new(g.value(w).clone())
    }

    pub fn size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values.data()[i * self.size() + j]
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn transpose(&self) -> Self {
        let n = self.size();
        let values = Tensor::from_fn(vec![n, n], |k| self.get(k % n, k / n));
        SimilarityMatrix { values }
    }

    pub fn contrastive_loss(&self, config: ContrastiveConfig) -> Result<T> {
        let mut g = Graph::new();
        let w = g.constant(self.values.clone());
        let l = contrastive_loss(&mut g, w, config)?;
        g.value(l).item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_grad, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(n: usize, data: &[f64]) -> SimilarityMatrix<f64> {
        SimilarityMatrix::new(Tensor::from_f64(vec![n, n], data).unwrap()).unwrap()
    }

    fn loss(w: &SimilarityMatrix<f64>) -> f64 {
        w.contrastive_loss(ContrastiveConfig::default()).unwrap()
    }

    fn random_embeddings(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![n, d], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0f64).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0f64, 0.0], &[3.0, 4.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(cosine_similarity(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn degenerate_vectors_score_zero_and_are_counted() {
        let before = crate::autodiff::degenerate_count();
        assert_eq!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(crate::autodiff::degenerate_count() > before);
    }

    #[test]
    fn similarity_matrix_examples() {
        let eye = Tensor::<f64>::from_f64(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = SimilarityMatrix::from_embeddings(&eye, &eye).unwrap();
        assert_eq!(w.values().data(), &[1.0, 0.0, 0.0, 1.0]);

        let swapped = Tensor::<f64>::from_f64(vec![2, 2], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let w = SimilarityMatrix::from_embeddings(&eye, &swapped).unwrap();
        assert_eq!(w.values().data(), &[0.0, 1.0, 1.0, 0.0]);

        let a = Tensor::<f64>::from_f64(vec![1, 2], &[1.0, 0.0]).unwrap();
        let b = Tensor::<f64>::from_f64(vec![1, 2], &[3.0, 4.0]).unwrap();
        let w = SimilarityMatrix::from_embeddings(&a, &b).unwrap();
        assert_eq!(w.size(), 1);
        assert!((w.get(0, 0) - 0.6).abs() < 1e-15);

        let c = Tensor::<f64>::zeros(vec![3, 2]);
        assert!(SimilarityMatrix::from_embeddings(&a, &c).is_err());
    }

    #[test]
    fn contrastive_loss_examples() {
        assert_eq!(loss(&m(1, &[0.37])), 0.0);
        assert!((loss(&m(4, &[0.0; 16])) - 4f64.ln()).abs() < 1e-12);
        let want = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss(&m(2, &[1.0, -1.0, -1.0, 1.0])) - want).abs() < 1e-12);
        let rect = Tensor::<f64>::zeros(vec![2, 3]);
        let mut g = Graph::new();
        let w = g.constant(rect);
        assert!(contrastive_loss(&mut g, w, ContrastiveConfig::default()).is_err());
    }

    #[test]
    fn temperature_rescales_logits() {
        let w = m(2, &[0.5, -0.2, 0.1, 0.3]);
        let scaled = m(2, &[5.0, -2.0, 1.0, 3.0]);
        let hot = w.contrastive_loss(ContrastiveConfig { temperature: Some(0.1) }).unwrap();
        assert!((hot - loss(&scaled)).abs() < 1e-12);
    }

    #[test]
    fn rank_candidates_examples() {
        let e1 = [1.0f64, 0.0];
        let e2 = [0.0f64, 1.0];
        assert_eq!(rank_candidates(&e1, &[&e1, &e2]).unwrap(), vec![1.0, 0.0]);
        let same = rank_candidates(&e2, &[&e1, &e1, &e1]).unwrap();
        assert!(same.iter().all(|&s| s == same[0]));
        let s = rank_candidates(&[1.0f64, 1.0], &[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0]]).unwrap();
        let r = 0.5f64.sqrt();
        assert!((s[0] - r).abs() < 1e-15 && (s[1] - r).abs() < 1e-15 && (s[2] + 1.0).abs() < 1e-15);
        assert!(rank_candidates::<f64>(&e1, &[]).is_err());
    }

    #[test]
    fn lower_bound_holds_on_random_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 4, 16] {
            let bound = contrastive_lower_bound(n);
            for _ in 0..50 {
                let w = SimilarityMatrix::from_embeddings(
                    &random_embeddings(&mut rng, n, 8),
                    &random_embeddings(&mut rng, n, 8),
                )
                .unwrap();
                assert!(loss(&w) >= bound);
            }
        }
    }

    #[test]
    fn symmetric_under_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = m(5, &(0..25).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        assert!((loss(&w) - loss(&w.transpose())).abs() < 1e-12);
    }

    #[test]
    fn scale_invariant_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_embeddings(&mut rng, 6, 4);
        let b = random_embeddings(&mut rng, 6, 4);
        let w = SimilarityMatrix::from_embeddings(&a, &b).unwrap();
        let scales: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..10.0)).collect();
        let a2 = Tensor::from_fn(vec![6, 4], |k| a.data()[k] * scales[k / 4]);
        let w2 = SimilarityMatrix::from_embeddings(&a2, &b).unwrap();
        assert!(relative_error(w.values().data(), w2.values().data()) < 1e-10);
        assert!((loss(&w) - loss(&w2)).abs() < 1e-10);
        let cands: Vec<&[f64]> = (0..6).map(|i| b.row(i)).collect();
        let q2: Vec<f64> = a.row(0).iter().map(|v| v * 3.5).collect();
        let s1 = rank_candidates(a.row(0), &cands).unwrap();
        let s2 = rank_candidates(&q2, &cands).unwrap();
        assert!(relative_error(&s1, &s2) < 1e-10);
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let w = m(n, &(0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let perm = [3, 0, 4, 1, 2];
        let p = SimilarityMatrix::new(Tensor::from_fn(vec![n, n], |k| w.get(perm[k / n], perm[k % n]))).unwrap();
        assert!((loss(&w) - loss(&p)).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let point = Tensor::from_fn(vec![5, 5], |_| rng.random_range(-1.0..1.0));
            let mut g = Graph::new();
            let w = g.param(point.clone());
            let l = contrastive_loss(&mut g, w, ContrastiveConfig::default()).unwrap();
            g.backward(l).unwrap();
            let numeric = finite_diff_grad(|t| loss(&SimilarityMatrix::new(t.clone()).unwrap()), &point, 1e-5);
            let err = relative_error(g.grad(w).unwrap().data(), numeric.data());
            assert!(err < 1e-6, "relative error {err:e}");
        }
    }

    #[test]
    fn end_to_end_gradient_through_cosines() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_embeddings(&mut rng, 4, 3);
        let b = random_embeddings(&mut rng, 4, 3);
        let f = |a: &Tensor<f64>| loss(&SimilarityMatrix::from_embeddings(a, &b).unwrap());
        let mut g = Graph::new();
        let (av, bv) = (g.param(a.clone()), g.constant(b.clone()));
        let w = similarity_matrix(&mut g, av, bv).unwrap();
        let l = contrastive_loss(&mut g, w, ContrastiveConfig::default()).unwrap();
        g.backward(l).unwrap();
        let numeric = finite_diff_grad(f, &a, 1e-5);
        assert!(relative_error(g.grad(av).unwrap().data(), numeric.data()) < 1e-4);
    }
}
