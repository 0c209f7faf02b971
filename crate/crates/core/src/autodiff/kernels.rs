//! Numeric kernels shared by the tape and the direct evaluation path.
//!
//! Both paths must call exactly these functions so that values computed on a
//! tape are bit-identical to values computed without one.

use ndarray::{Array2, ArrayView2, Zip};

/// `ln(1 + e^x)` in the form `max(x, 0) + ln(1 + e^{-|x|})`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x · Wᵀ (+ b)` for row-major batches: `x` is n×in, `w` is out×in, `b` is 1×out.
pub fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: Option<ArrayView2<f64>>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    if let Some(b) = b {
        y += &b;
    }
    y
}

pub fn map(x: ArrayView2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    x.mapv(f)
}

pub fn mul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    Zip::from(&mut out).and(&b).for_each(|o, &y| *o *= y);
    out
}

pub fn row_sums(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, 1));
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut s = 0.0;
        for &v in row {
            s += v;
        }
        out[[i, 0]] = s;
    }
    out
}

/// Sum of all entries in row-major order.
pub fn sum_all(x: ArrayView2<f64>) -> f64 {
    let mut s = 0.0;
    for &v in x.iter() {
        s += v;
    }
    s
}

/// Column-wise maximum with the lowest row index winning ties.
pub fn max_pool_rows(x: ArrayView2<f64>) -> (Array2<f64>, Vec<usize>) {
    let cols = x.ncols();
    let mut out = Array2::from_elem((1, cols), f64::NEG_INFINITY);
    let mut arg = vec![0usize; cols];
    for (i, row) in x.rows().into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > out[[0, c]] || i == 0 {
                out[[0, c]] = v;
                arg[c] = i;
            }
        }
    }
    (out, arg)
}

pub fn all_finite(x: ArrayView2<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(0.0) - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!(sigmoid(-1000.0).is_finite() && sigmoid(1000.0) == 1.0);
    }

    #[test]
    fn max_pool_prefers_lowest_index_on_ties() {
        let x = array![[1.0, 5.0], [3.0, 5.0], [3.0, 2.0]];
        let (m, arg) = max_pool_rows(x.view());
        assert_eq!(m, array![[3.0, 5.0]]);
        assert_eq!(arg, vec![1, 0]);
    }
}
