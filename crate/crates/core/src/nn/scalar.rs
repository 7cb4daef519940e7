use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rayon::prelude::*;

/// Element type of the engine: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static {
    /// `c = a * b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(c.len() >= m * n);
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    (rows.saturating_sub(1) as isize * rs + cols.saturating_sub(1) as isize * cs) as usize
                };
                assert!(k == 0 || (last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len()));
                // SAFETY: every index the kernel touches was bounds-checked above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Rows of the output handled by one task. Fixed so that results do not
/// depend on the number of threads.
const ROW_BLOCK: usize = 1024;

/// `c = a · b` with `a: m×k`, `b: k×n`, all row-major.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    c[..m * n].par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(i, cb)| {
        let rows = cb.len() / n;
        let a_blk = &a[i * ROW_BLOCK * k..(i * ROW_BLOCK + rows) * k];
        T::gemm(rows, k, n, a_blk, k as isize, 1, b, n as isize, 1, T::zero(), cb);
    });
}

/// `c = a · bᵀ` with `a: m×k` and `b: n×k`.
pub fn matmul_bt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    c[..m * n].par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(i, cb)| {
        let rows = cb.len() / n;
        let a_blk = &a[i * ROW_BLOCK * k..(i * ROW_BLOCK + rows) * k];
        T::gemm(rows, k, n, a_blk, k as isize, 1, b, 1, k as isize, T::zero(), cb);
    });
}

/// Reduction rows per partial product in [`matmul_at_acc`].
const REDUCE_BLOCK: usize = 4096;

/// `c += aᵀ · b` with `a: r×m` and `b: r×n`, reducing over the shared rows in
/// fixed blocks summed in order.
pub fn matmul_at_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], r: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), r * m);
    debug_assert_eq!(b.len(), r * n);
    let blocks = r.div_ceil(REDUCE_BLOCK);
    if blocks <= 1 {
        let mut part = vec![T::zero(); m * n];
        T::gemm(m, r, n, a, 1, m as isize, b, n as isize, 1, T::zero(), &mut part);
        c.iter_mut().zip(&part).for_each(|(x, &p)| *x += p);
        return;
    }
    let partials: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|i| {
            let lo = i * REDUCE_BLOCK;
            let hi = (lo + REDUCE_BLOCK).min(r);
            let mut part = vec![T::zero(); m * n];
            T::gemm(
                m,
                hi - lo,
                n,
                &a[lo * m..hi * m],
                1,
                m as isize,
                &b[lo * n..hi * n],
                n as isize,
                1,
                T::zero(),
                &mut part,
            );
            part
        })
        .collect();
    for part in &partials {
        c.iter_mut().zip(part).for_each(|(x, &p)| *x += p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn products_match_naive() {
        let (m, k, n) = (1100, 7, 5);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 31 % 17) as f64) - 8.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 13 % 11) as f64) * 0.5).collect();
        let expected = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n);
        assert_eq!(c, expected);

        let bt = transpose(&b, k, n);
        let mut c2 = vec![0.0; m * n];
        matmul_bt(&a, &bt, &mut c2, m, k, n);
        assert_eq!(c2, expected);

        // aᵀ·b over 1100 shared rows, spanning a reduction block boundary.
        let rows = 5000;
        let x: Vec<f64> = (0..rows * 3).map(|i| (i % 7) as f64).collect();
        let y: Vec<f64> = (0..rows * 2).map(|i| (i % 5) as f64).collect();
        let mut acc = vec![1.0; 6];
        matmul_at_acc(&x, &y, &mut acc, rows, 3, 2);
        let want = naive(&transpose(&x, rows, 3), &y, 3, rows, 2);
        for (g, w) in acc.iter().zip(&want) {
            assert_eq!(*g, w + 1.0);
        }
    }
}
