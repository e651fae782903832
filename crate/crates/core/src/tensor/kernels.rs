//! Slice-level numeric kernels shared by eager tensors and the tape.
//!
//! All accumulations run left to right along the reduced axis.

use super::{Real, MASKED_THRESHOLD};
use crate::error::{shape_err, Error, Result};

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(shape_err(format!("matmul {a:?} x {b:?}"))),
    }
}

/// `out += a[m×k] · b[k×n]`. The i-k-j loop keeps each output's sum in k order.
pub fn matmul<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (t, &av) in a_row.iter().enumerate() {
            let b_row = &b[t * n..(t + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// In-place numerically stabilized softmax over rows of width `width`.
pub fn softmax_rows<T: Real>(x: &mut [T], width: usize) -> Result<()> {
    if width == 0 {
        return Err(shape_err("softmax over an empty axis"));
    }
    let threshold = T::lit(MASKED_THRESHOLD);
    for (r, row) in x.chunks_mut(width).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        if max <= threshold || !max.is_finite() {
            return Err(Error::DegenerateRow { row: r });
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(())
}

/// Row-wise layer normalization. Returns the output together with the
/// normalized input and per-row inverse standard deviation for backward.
pub fn layer_norm<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = gamma.len();
    let rows = x.len() / d;
    let n = T::from_usize(d).unwrap();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().fold(T::zero(), |a, b| a + b) / n;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .fold(T::zero(), |a, b| a + b)
            / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gamma[j] * h + beta[j];
        }
    }
    (out, xhat, inv_std)
}

/// Elementwise SmoothL1 with unit threshold.
pub fn smooth_l1<T: Real>(d: T) -> T {
    let a = d.abs();
    if a < T::one() {
        T::lit(0.5) * d * d
    } else {
        a - T::lit(0.5)
    }
}

/// Derivative of [`smooth_l1`] with respect to its argument.
pub fn smooth_l1_grad<T: Real>(d: T) -> T {
    if d.abs() < T::one() {
        d
    } else {
        d.signum()
    }
}

/// Mean SmoothL1 of `pred - target` over all elements.
pub fn smooth_l1_mean<T: Real>(pred: &[T], target: &[T]) -> T {
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        acc += smooth_l1(p - t);
    }
    acc / T::from_usize(pred.len().max(1)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let mut x = vec![0.0f64, 0.0];
        softmax_rows(&mut x, 2).unwrap();
        assert_eq!(x, vec![0.5, 0.5]);

        let mut x = vec![1.0f64.ln(), 3.0f64.ln()];
        softmax_rows(&mut x, 2).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-12);
        assert!((x[1] - 0.75).abs() < 1e-12);

        let mut x = vec![-1e30f64, -1e30];
        assert!(matches!(
            softmax_rows(&mut x, 2),
            Err(Error::DegenerateRow { row: 0 })
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let (y, _, _) = layer_norm(&[5.0f64, 5.0, 5.0], &[1.0; 3], &[0.0; 3], 1e-5);
        assert!(y.iter().all(|v| v.abs() < 1e-12));

        let (y, _, _) = layer_norm(&[1.0f64, 3.0], &[1.0; 2], &[0.0; 2], 1e-5);
        assert!((y[0] + 1.0).abs() < 1e-4 && (y[1] - 1.0).abs() < 1e-4);

        let (y, _, _) = layer_norm(&[1.0f64, 3.0], &[2.0; 2], &[1.0; 2], 1e-5);
        assert!((y[0] + 1.0).abs() < 1e-4 && (y[1] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0f64), 0.0);
        assert_eq!(smooth_l1(0.5f64), 0.125);
        assert_eq!(smooth_l1(2.0f64), 1.5);
        assert_eq!(smooth_l1(-2.0f64), 1.5);
    }
}
