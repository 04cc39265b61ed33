//! Cross-domain contrastive loss over class queries.
//!
//! For the set `P` of present categories,
//!
//! ```text
//! L = -(1/|P|) Σ_{i∈P} log( exp(s_i · a_i) / Σ_{j∈P} exp(s_j · a_i) )
//! ```
//!
//! with `s_j` the source-domain query of category `j` and `a_i` the
//! augmented-domain query of category `i`. Logits are raw dot products; rows
//! of absent categories get exactly zero gradient.

use crate::error::{Error, Result};
use crate::tensor::{dot, log_sum_exp, DenseArray};

pub const DEFAULT_LAMBDA_C: f64 = 0.1;

/// Paired class queries from the source and augmented domains.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub q_source: DenseArray,
    pub q_augmented: DenseArray,
    pub present: Vec<bool>,
}

impl ContrastiveBatch {
    pub fn new(q_source: DenseArray, q_augmented: DenseArray, present: Vec<bool>) -> Result<Self> {
        if q_source.ndim() != 2 || q_source.shape() != q_augmented.shape() {
            return Err(Error::arg(format!(
                "query sets must be equal C x d matrices, got {:?} and {:?}",
                q_source.shape(),
                q_augmented.shape()
            )));
        }
        if present.len() != q_source.rows() {
            return Err(Error::arg(format!(
                "{} presence flags for {} categories",
                present.len(),
                q_source.rows()
            )));
        }
        let batch = Self {
            q_source,
            q_augmented,
            present,
        };
        batch.check_finite()?;
        Ok(batch)
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self
            .q_source
            .data()
            .iter()
            .chain(self.q_augmented.data())
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::arg("query sets contain non-finite values"))
        }
    }

    pub fn categories(&self) -> usize {
        self.present.len()
    }

    pub fn present_indices(&self) -> Vec<usize> {
        (0..self.present.len()).filter(|&i| self.present[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContrastiveOptions {
    /// L2-normalise every query row before taking dot products.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_contra: f64,
    /// `l_det + λ_c · l_contra`; equals `l_contra` until
    /// [`LossReport::with_detection_loss`] is applied.
    pub l_total: f64,
    /// `∂ l_contra / ∂ Q^S`.
    pub grad_q_source: DenseArray,
    /// `∂ l_contra / ∂ Q^A`.
    pub grad_q_augmented: DenseArray,
}

impl LossReport {
    pub fn with_detection_loss(mut self, l_det: f64, lambda_c: f64) -> Result<Self> {
        self.l_total = total_loss(l_det, self.l_contra, lambda_c)?;
        Ok(self)
    }
}

/// `l_det + λ_c · l_contra`.
pub fn total_loss(l_det: f64, l_contra: f64, lambda_c: f64) -> Result<f64> {
    if !(l_det.is_finite() && l_contra.is_finite() && lambda_c.is_finite()) {
        return Err(Error::arg("loss terms must be finite"));
    }
    if lambda_c < 0.0 {
        return Err(Error::arg(format!("lambda_c must be non-negative, got {lambda_c}")));
    }
    Ok(l_det + lambda_c * l_contra)
}

/// Loss value only.
pub fn contrastive_value(batch: &ContrastiveBatch, options: &ContrastiveOptions) -> Result<f64> {
    contrastive_loss(batch, options).map(|r| r.l_contra)
}

pub fn contrastive_loss(batch: &ContrastiveBatch, options: &ContrastiveOptions) -> Result<LossReport> {
    batch.check_finite()?;
    let present = batch.present_indices();
    if present.is_empty() {
        return Err(Error::state("contrastive loss needs at least one present category"));
    }

    let (src, src_norms) = maybe_normalize(&batch.q_source, &present, options.normalize)?;
    let (aug, aug_norms) = maybe_normalize(&batch.q_augmented, &present, options.normalize)?;

    let n = present.len() as f64;
    let mut grad_s = DenseArray::zeros(src.shape().to_vec());
    let mut grad_a = DenseArray::zeros(aug.shape().to_vec());
    let mut loss = 0.0;
    for &i in &present {
        let anchor = aug.row(i);
        let logits: Vec<f64> = present.iter().map(|&j| dot(src.row(j), anchor)).collect();
        let lse = log_sum_exp(&logits);
        let positive = dot(src.row(i), anchor);
        loss += lse - positive;

        // d(lse - s_i·a_i)/d a_i = Σ_j p_ij s_j - s_i ; d/d s_j = p_ij a_i - [i == j] a_i
        for (&j, &logit) in present.iter().zip(&logits) {
            let p = (logit - lse).exp() / n;
            for (g, &s) in grad_a.row_mut(i).iter_mut().zip(src.row(j)) {
                *g += p * s;
            }
            for (g, &a) in grad_s.row_mut(j).iter_mut().zip(anchor) {
                *g += p * a;
            }
        }
        for (g, &s) in grad_a.row_mut(i).iter_mut().zip(src.row(i)) {
            *g -= s / n;
        }
        for (g, &a) in grad_s.row_mut(i).iter_mut().zip(anchor) {
            *g -= a / n;
        }
    }
    let loss = loss / n;

    if options.normalize {
        backprop_normalize(&mut grad_s, &src, &src_norms, &present);
        backprop_normalize(&mut grad_a, &aug, &aug_norms, &present);
    }

    Ok(LossReport {
        l_contra: loss,
        l_total: loss,
        grad_q_source: grad_s,
        grad_q_augmented: grad_a,
    })
}

fn maybe_normalize(q: &DenseArray, rows: &[usize], normalize: bool) -> Result<(DenseArray, Vec<f64>)> {
    let mut out = q.clone();
    let mut norms = vec![1.0; q.rows()];
    if !normalize {
        return Ok((out, norms));
    }
    for &i in rows {
        let norm = dot(q.row(i), q.row(i)).sqrt();
        if norm == 0.0 {
            return Err(Error::arg(format!("query row {i} has zero norm")));
        }
        norms[i] = norm;
        out.row_mut(i).iter_mut().for_each(|v| *v /= norm);
    }
    Ok((out, norms))
}

/// Chain rule through `u = q / |q|`: `dq = (g - u (u·g)) / |q|`.
fn backprop_normalize(grad: &mut DenseArray, unit: &DenseArray, norms: &[f64], rows: &[usize]) {
    for &i in rows {
        let u = unit.row(i);
        let proj = dot(u, grad.row(i));
        for (g, &uk) in grad.row_mut(i).iter_mut().zip(u) {
            *g = (*g - uk * proj) / norms[i];
        }
    }
}

/// Central finite differences of the loss value with respect to every query
/// entry. Independent of the analytic gradient path.
pub fn finite_difference_gradients(
    batch: &ContrastiveBatch,
    options: &ContrastiveOptions,
    step: f64,
) -> Result<(DenseArray, DenseArray)> {
    let perturb = |which_source: bool| -> Result<DenseArray> {
        let base = if which_source {
            &batch.q_source
        } else {
            &batch.q_augmented
        };
        let mut grad = DenseArray::zeros(base.shape().to_vec());
        for k in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut b = batch.clone();
                let target = if which_source {
                    &mut b.q_source
                } else {
                    &mut b.q_augmented
                };
                target.data_mut()[k] += delta;
                contrastive_value(&b, options)
            };
            grad.data_mut()[k] = (eval(step)? - eval(-step)?) / (2.0 * step);
        }
        Ok(grad)
    };
    Ok((perturb(true)?, perturb(false)?))
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
///
/// The floor keeps entries whose true value is ~0 from turning round-off in
/// the finite difference into an unbounded ratio.
pub fn max_relative_error(a: &DenseArray, b: &DenseArray, floor: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::arg("gradient shapes differ"));
    }
    Ok(a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut impl Rng, c: usize, d: usize, p_present: f64) -> ContrastiveBatch {
        let mut present: Vec<bool> = (0..c).map(|_| rng.random_bool(p_present)).collect();
        present[0] = true;
        ContrastiveBatch::new(
            DenseArray::from_fn(vec![c, d], |_| rng.random_range(-0.5..0.5)),
            DenseArray::from_fn(vec![c, d], |_| rng.random_range(-0.5..0.5)),
            present,
        )
        .unwrap()
    }

    #[test]
    fn identical_rows_give_log_c() {
        for c in 1..6 {
            let v = [0.3, -1.2, 0.7];
            let q = DenseArray::from_fn(vec![c, 3], |k| v[k % 3]);
            let batch = ContrastiveBatch::new(q.clone(), q, vec![true; c]).unwrap();
            let l = contrastive_value(&batch, &Default::default()).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_category_closed_form() {
        for s in [0.0f64, 1.0, 5.0] {
            // Diagonal dot products s, off-diagonal 0.
            let src = DenseArray::new(vec![2, 2], vec![s.sqrt(), 0.0, 0.0, s.sqrt()]).unwrap();
            let batch = ContrastiveBatch::new(src.clone(), src, vec![true, true]).unwrap();
            let l = contrastive_value(&batch, &Default::default()).unwrap();
            let want = -(s.exp() / (s.exp() + 1.0)).ln();
            assert!((l - want).abs() < 1e-12, "s = {s}");
        }
    }

    #[test]
    fn no_present_category_is_state_error() {
        let q = DenseArray::zeros(vec![2, 3]);
        let batch = ContrastiveBatch::new(q.clone(), q, vec![false, false]).unwrap();
        assert!(matches!(
            contrastive_loss(&batch, &Default::default()),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let mut batch = ContrastiveBatch::new(
            DenseArray::zeros(vec![1, 2]),
            DenseArray::zeros(vec![1, 2]),
            vec![true],
        )
        .unwrap();
        batch.q_source.data_mut()[0] = f64::INFINITY;
        assert!(matches!(
            contrastive_loss(&batch, &Default::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.0, 0.0, 0.1).unwrap(), 1.0);
        assert!((total_loss(0.0, 2.0, DEFAULT_LAMBDA_C).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(total_loss(1.5, 2.0, 0.0).unwrap(), 1.5);
        assert!(total_loss(f64::NAN, 0.0, 0.1).is_err());
        assert!(total_loss(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn swapping_domains_can_change_loss() {
        let s = DenseArray::new(vec![2, 2], vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let a = DenseArray::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let fwd = ContrastiveBatch::new(s.clone(), a.clone(), vec![true, true]).unwrap();
        let rev = ContrastiveBatch::new(a, s, vec![true, true]).unwrap();
        let opts = ContrastiveOptions::default();
        let l1 = contrastive_value(&fwd, &opts).unwrap();
        let l2 = contrastive_value(&rev, &opts).unwrap();
        assert!((l1 - l2).abs() > 1e-3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for normalize in [false, true] {
            let opts = ContrastiveOptions { normalize };
            for _ in 0..10 {
                let batch = random_batch(&mut rng, 7, 16, 0.7);
                let r = contrastive_loss(&batch, &opts).unwrap();
                let (fs, fa) = finite_difference_gradients(&batch, &opts, 1e-5).unwrap();
                assert!(max_relative_error(&r.grad_q_source, &fs, 1e-4).unwrap() < 1e-6);
                assert!(max_relative_error(&r.grad_q_augmented, &fa, 1e-4).unwrap() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn absent_rows_have_zero_gradient(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = random_batch(&mut rng, 6, 5, 0.5);
            let r = contrastive_loss(&batch, &Default::default()).unwrap();
            for (i, &p) in batch.present.iter().enumerate() {
                if !p {
                    prop_assert!(r.grad_q_source.row(i).iter().all(|&g| g == 0.0));
                    prop_assert!(r.grad_q_augmented.row(i).iter().all(|&g| g == 0.0));
                }
            }
        }

        #[test]
        fn permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = random_batch(&mut rng, 5, 4, 0.7);
            let perm = [3usize, 1, 4, 0, 2];
            let permuted = ContrastiveBatch::new(
                batch.q_source.select_rows(&perm).unwrap(),
                batch.q_augmented.select_rows(&perm).unwrap(),
                perm.iter().map(|&i| batch.present[i]).collect(),
            ).unwrap();
            let opts = ContrastiveOptions::default();
            let a = contrastive_value(&batch, &opts).unwrap();
            let b = contrastive_value(&permuted, &opts).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
