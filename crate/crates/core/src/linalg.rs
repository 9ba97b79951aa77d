//! Dense row-major kernels used by the fusion heads, backed by
//! `matrixmultiply`.

use core::fmt::Debug;

use num_traits::Float;

/// Floating-point element type of a fusion head: `f32` for training, `f64`
/// for gradient checks.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a·b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// The strided views described by `(m, k, rsa, csa)`, `(k, n, rsb, csb)`
    /// and `(m, n, rsc, csc)` must lie within `a`, `b` and `c`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("literal representable")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `out (rows×n) = x (rows×k) · wᵀ` where `w` is `n×k` row-major.
pub fn matmul_xwt<T: Scalar>(x: &[T], w: &[T], rows: usize, k: usize, n: usize, out: &mut [T]) {
    assert_eq!(x.len(), rows * k);
    assert_eq!(w.len(), n * k);
    assert_eq!(out.len(), rows * n);
    if rows == 0 || n == 0 {
        return;
    }
    unsafe {
        T::gemm_raw(
            rows,
            k,
            n,
            T::one(),
            x.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            T::zero(),
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `out (n×k) += dyᵀ (n×rows) · x (rows×k)`; accumulates a weight gradient.
pub fn accumulate_dyt_x<T: Scalar>(dy: &[T], x: &[T], rows: usize, n: usize, k: usize, out: &mut [T]) {
    assert_eq!(dy.len(), rows * n);
    assert_eq!(x.len(), rows * k);
    assert_eq!(out.len(), n * k);
    if rows == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        T::gemm_raw(
            n,
            rows,
            k,
            T::one(),
            dy.as_ptr(),
            1,
            n as isize,
            x.as_ptr(),
            k as isize,
            1,
            T::one(),
            out.as_mut_ptr(),
            k as isize,
            1,
        )
    }
}

/// `out (rows×k) = dy (rows×n) · w (n×k)`; propagates a gradient to the input.
pub fn matmul_dy_w<T: Scalar>(dy: &[T], w: &[T], rows: usize, n: usize, k: usize, out: &mut [T]) {
    assert_eq!(dy.len(), rows * n);
    assert_eq!(w.len(), n * k);
    assert_eq!(out.len(), rows * k);
    if rows == 0 || k == 0 {
        return;
    }
    unsafe {
        T::gemm_raw(
            rows,
            n,
            k,
            T::one(),
            dy.as_ptr(),
            n as isize,
            1,
            w.as_ptr(),
            k as isize,
            1,
            T::zero(),
            out.as_mut_ptr(),
            k as isize,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn kernels_match_naive() {
        let (rows, k, n) = (3, 4, 2);
        let x: alloc::vec::Vec<f64> = (0..rows * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let w: alloc::vec::Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let mut y = vec![0.0; rows * n];
        matmul_xwt(&x, &w, rows, k, n, &mut y);
        for r in 0..rows {
            for j in 0..n {
                let naive: f64 = (0..k).map(|c| x[r * k + c] * w[j * k + c]).sum();
                assert!((y[r * n + j] - naive).abs() < 1e-12);
            }
        }

        let dy: alloc::vec::Vec<f64> = (0..rows * n).map(|i| i as f64 - 2.0).collect();
        let mut dw = vec![1.0; n * k];
        accumulate_dyt_x(&dy, &x, rows, n, k, &mut dw);
        for j in 0..n {
            for c in 0..k {
                let naive: f64 = 1.0 + (0..rows).map(|r| dy[r * n + j] * x[r * k + c]).sum::<f64>();
                assert!((dw[j * k + c] - naive).abs() < 1e-12);
            }
        }

        let mut dx = vec![0.0; rows * k];
        matmul_dy_w(&dy, &w, rows, n, k, &mut dx);
        for r in 0..rows {
            for c in 0..k {
                let naive: f64 = (0..n).map(|j| dy[r * n + j] * w[j * k + c]).sum();
                assert!((dx[r * k + c] - naive).abs() < 1e-12);
            }
        }
    }
}
