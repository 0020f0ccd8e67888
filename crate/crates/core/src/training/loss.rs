//! Objectives with analytic gradients.

use num_traits::Float;

use crate::encoder::SimilarityConfig;
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Matrix};

/// Loss value plus gradients with respect to both embedding matrices.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput<T> {
    pub loss: T,
    pub grad_anchor: Matrix<T>,
    pub grad_positive: Matrix<T>,
}

fn log_sum_exp<T: Float>(xs: &[T]) -> T {
    let m = xs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let s = xs.iter().fold(T::zero(), |a, &x| a + (x - m).exp());
    m + s.ln()
}

fn softmax<T: Float>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// In-batch-negatives contrastive loss
/// `-(1/M) Σᵢ log softmax_j(scale · cos(aᵢ, pⱼ))[i]`.
///
/// Cosine is computed on the raw rows, so the loss does not change when a row
/// is rescaled by a positive factor.
pub fn contrastive_loss<T: Float>(
    anchors: &Matrix<T>,
    positives: &Matrix<T>,
    cfg: &SimilarityConfig,
) -> Result<ContrastiveOutput<T>> {
    cfg.validate()?;
    if anchors.shape() != positives.shape() {
        return Err(Error::input(format!(
            "anchor shape {:?} differs from positive shape {:?}",
            anchors.shape(),
            positives.shape()
        )));
    }
    let (m, d) = anchors.shape();
    if m == 0 {
        return Err(Error::input("contrastive loss needs at least one pair"));
    }
    let unit = |x: &Matrix<T>, what: &str| -> Result<(Matrix<T>, Vec<T>)> {
        let mut u = x.clone();
        let mut norms = Vec::with_capacity(m);
        for i in 0..m {
            let n = l2_norm(x.row(i));
            if n <= T::zero() || !n.is_finite() {
                return Err(Error::Numeric(format!("{what} row {i} has zero norm; cosine is undefined")));
            }
            u.row_mut(i).iter_mut().for_each(|v| *v = *v / n);
            norms.push(n);
        }
        Ok((u, norms))
    };
    let (ua, na) = unit(anchors, "anchor")?;
    let (up, np) = unit(positives, "positive")?;
    let scale = T::from(cfg.scale).expect("scale fits");
    let inv_m = T::one() / T::from(m).expect("batch fits");

    let mut cos = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            cos.set(i, j, dot(ua.row(i), up.row(j)));
        }
    }
    let mut loss = T::zero();
    // dL/dcos_ij = scale/M · (softmax_ij - δ_ij)
    let mut dcos = Matrix::zeros(m, m);
    for i in 0..m {
        let logits: Vec<T> = cos.row(i).iter().map(|&c| c * scale).collect();
        loss = loss - (logits[i] - log_sum_exp(&logits));
        let p = softmax(&logits);
        for j in 0..m {
            let delta = if i == j { T::one() } else { T::zero() };
            dcos.set(i, j, scale * inv_m * (p[j] - delta));
        }
    }
    loss = loss * inv_m;

    // d cos(a, p) / d a = (p̂ - cos · â) / |a|
    let mut ga = Matrix::zeros(m, d);
    let mut gp = Matrix::zeros(m, d);
    for i in 0..m {
        for j in 0..m {
            let g = dcos.get(i, j);
            if g.is_zero() {
                continue;
            }
            let c = cos.get(i, j);
            for k in 0..d {
                let da = (up.get(j, k) - c * ua.get(i, k)) / na[i];
                let dp = (ua.get(i, k) - c * up.get(j, k)) / np[j];
                ga.set(i, k, ga.get(i, k) + g * da);
                gp.set(j, k, gp.get(j, k) + g * dp);
            }
        }
    }
    Ok(ContrastiveOutput {
        loss,
        grad_anchor: ga,
        grad_positive: gp,
    })
}

/// Mean cross-entropy over masked positions, with its gradient w.r.t. the logits.
pub fn mlm_loss<T: Float>(logits: &Matrix<T>, targets: &[u32]) -> Result<(T, Matrix<T>)> {
    let (n, v) = logits.shape();
    if n == 0 || targets.is_empty() {
        return Err(Error::input("MLM loss needs at least one masked position"));
    }
    if targets.len() != n {
        return Err(Error::input(format!("{} targets for {n} logit rows", targets.len())));
    }
    let inv = T::one() / T::from(n).expect("count fits");
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(n, v);
    for (r, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= v {
            return Err(Error::input(format!("target id {t} out of range for {v} classes")));
        }
        let row = logits.row(r);
        loss = loss + log_sum_exp(row) - row[t];
        for (g, p) in grad.row_mut(r).iter_mut().zip(softmax(row)) {
            *g = p * inv;
        }
        let g = grad.get(r, t);
        grad.set(r, t, g - inv);
    }
    Ok((loss * inv, grad))
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of scores in `(0, 1)` against 0/1 labels, with
/// its gradient w.r.t. the scores. Scores are clamped `1e-7` inside the
/// boundary.
pub fn pair_classification_loss<T: Float>(scores: &[T], labels: &[bool]) -> Result<(T, Vec<T>)> {
    if scores.is_empty() {
        return Err(Error::input("pair classification loss needs at least one score"));
    }
    if scores.len() != labels.len() {
        return Err(Error::input(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let eps = T::from(BCE_CLAMP).expect("eps fits");
    let inv = T::one() / T::from(scores.len()).expect("count fits");
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        if !s.is_finite() {
            return Err(Error::Numeric("non-finite pair score".into()));
        }
        let s = s.max(eps).min(T::one() - eps);
        if y {
            loss = loss - s.ln();
            grad.push(-inv / s);
        } else {
            loss = loss - (T::one() - s).ln();
            grad.push(inv / (T::one() - s));
        }
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(scale: f64) -> SimilarityConfig {
        SimilarityConfig { scale, ..Default::default() }
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let a = Matrix::from_rows(&[vec![0.3, -0.2, 0.9]]);
        let p = Matrix::from_rows(&[vec![-1.0, 0.5, 0.1]]);
        let out = contrastive_loss(&a, &p, &cfg(20.0)).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn identical_embeddings_give_ln2() {
        let r = vec![0.6, 0.8];
        let a = Matrix::from_rows(&[r.clone(), r.clone()]);
        let out = contrastive_loss(&a, &a.clone(), &cfg(20.0)).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_numeric_error() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(contrastive_loss(&a, &p, &cfg(1.0)), Err(Error::Numeric(_))));
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let (loss, grad) = mlm_loss(&Matrix::<f64>::zeros(3, 8), &[0, 5, 7]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);
        assert!((grad.get(1, 5) - (1.0 / 8.0 - 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let mut l = Matrix::<f64>::zeros(1, 4);
        l.set(0, 2, 60.0);
        let (loss, _) = mlm_loss(&l, &[2]).unwrap();
        assert!(loss < 1e-20);
        assert!(mlm_loss(&l, &[4]).is_err());
        assert!(mlm_loss(&Matrix::<f64>::zeros(0, 4), &[]).is_err());
    }

    #[test]
    fn bce_anchors() {
        let (loss, _) = pair_classification_loss(&[0.5, 0.5, 0.5], &[true, false, true]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let (better, _) = pair_classification_loss(&[0.8, 0.1], &[true, false]).unwrap();
        assert!(better < std::f64::consts::LN_2);
        let (clamped, _) = pair_classification_loss(&[1.0f64, 0.0], &[false, true]).unwrap();
        assert!(clamped.is_finite());
        assert!((clamped - -(BCE_CLAMP.ln())).abs() < 1e-6);
    }
}
