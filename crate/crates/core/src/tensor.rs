//! Dense row-major matrix kernels shared by the convolution, attention and
//! linear layers. Loop orders are chosen so the innermost loop runs over
//! contiguous, independent output elements, which lets the compiler vectorize
//! without reassociating floating-point sums — accumulation order is fixed,
//! keeping results bit-reproducible.

use crate::scalar::Scalar;

/// out[m×n] += a[m×k] · b[k×n]
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] = out_row[j] + aip * b_row[j];
            }
        }
    }
}

/// out[m×n] = a[m×k] · b[k×n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    out.fill(T::zero());
    matmul_acc(a, b, m, k, n, out);
}

/// Lane-parallel dot product with a fixed reduction order.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        for l in 0..LANES {
            acc[l] = acc[l] + a[base + l] * b[base + l];
        }
    }
    let mut s = T::zero();
    for l in 0..LANES {
        s += acc[l];
    }
    for i in chunks * LANES..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// out[m×n] = a[m×k] · b[n×k]ᵀ  (rows of `b` are the columns of the product)
///
/// `b` is transposed into scratch first so the multiply runs with the same
/// contiguous inner loop as [`matmul_acc`]; the O(kn) copy is noise next to
/// the O(mkn) product.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m == 1 {
        // single row: the dot form avoids the transpose entirely
        for j in 0..n {
            out[j] = dot(a, &b[j * k..(j + 1) * k]);
        }
        return;
    }
    let mut bt = vec![T::zero(); k * n];
    for j in 0..n {
        let row = &b[j * k..(j + 1) * k];
        for p in 0..k {
            bt[p * n + j] = row[p];
        }
    }
    matmul(a, &bt, m, k, n, out);
}

/// out[m×n] += a[k×m]ᵀ · b[k×n]
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] = out_row[j] + api * b_row[j];
            }
        }
    }
}
