//! Scalar abstraction for the numeric kernels.
//!
//! The divergence, similarity, curve-fitting, and partitioning kernels are
//! generic over [`Real`] so they work with `f32` or `f64`; the pipeline
//! instantiates them at [`crate::Scalar`].

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numeric kernels.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Default + 'static
{
    /// Lossless-enough conversion from `f64` for constants and config values.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    /// Conversion from a count.
    fn from_usize_c(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Softmax of a slice. Max-subtracted for stability; output sums to 1.
pub fn softmax<S: Real>(values: &[S]) -> Vec<S> {
    let max = values.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = values.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(S::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Jensen-Shannon divergence between two distributions, log base 2.
/// Both slices must sum to 1; the result lies in [0, 1].
pub fn js_divergence_rows<S: Real>(p: &[S], q: &[S]) -> S {
    let half = S::from_f64_c(0.5);
    let ln2 = S::from_f64_c(std::f64::consts::LN_2);
    let mut acc = S::zero();
    for (&a, &b) in p.iter().zip(q.iter()) {
        let m = half * (a + b);
        if a > S::zero() {
            acc = acc + half * a * (a / m).ln();
        }
        if b > S::zero() {
            acc = acc + half * b * (b / m).ln();
        }
    }
    acc / ln2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax(&[0.9f64, 0.5, 0.1]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[1] && w[1] > w[2]);
    }

    #[test]
    fn js_identical_is_zero() {
        let p = [0.25f64; 4];
        assert!(js_divergence_rows(&p, &p).abs() < 1e-15);
    }

    #[test]
    fn js_disjoint_one_hot_is_one() {
        let p = [1.0f64, 0.0];
        let q = [0.0f64, 1.0];
        assert!((js_divergence_rows(&p, &q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn js_f32_matches_f64() {
        let p64 = [0.5f64, 0.5];
        let q64 = [0.9f64, 0.1];
        let v64 = js_divergence_rows(&p64, &q64);
        let v32 = js_divergence_rows(&[0.5f32, 0.5], &[0.9f32, 0.1]);
        assert!((v64 - v32 as f64).abs() < 1e-6);
    }
}
