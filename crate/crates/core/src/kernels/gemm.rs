//! Cache-blocked dense matrix multiply on row-major slices.

use num_traits::Float;

const KC: usize = 128;
const MC: usize = 32;
const NC: usize = 512;

/// Layout of one operand: stored as-is or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Normal,
    Transposed,
}

/// `c (m×n) += op(a) (m×k) · op(b) (k×n)`.
///
/// With `Layout::Transposed`, `a` is stored `k×m` and `b` is stored `n×k`.
/// Transposed operands are copied into normal layout first so the inner
/// loop always runs over contiguous rows of `b` and `c`. For every output
/// element the reduction over `k` runs in increasing index order.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Float>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    a_layout: Layout,
    b: &[T],
    b_layout: Layout,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let a_owned;
    let a = match a_layout {
        Layout::Normal => a,
        Layout::Transposed => {
            a_owned = transpose(a, k, m);
            &a_owned[..]
        }
    };
    let b_owned;
    let b = match b_layout {
        Layout::Normal => b,
        Layout::Transposed => {
            b_owned = transpose(b, n, k);
            &b_owned[..]
        }
    };

    for j0 in (0..n).step_by(NC) {
        let j1 = (j0 + NC).min(n);
        for p0 in (0..k).step_by(KC) {
            let p1 = (p0 + KC).min(k);
            for i0 in (0..m).step_by(MC) {
                let i1 = (i0 + MC).min(m);
                for i in i0..i1 {
                    let c_row = &mut c[i * n + j0..i * n + j1];
                    let a_row = &a[i * k..(i + 1) * k];
                    for p in p0..p1 {
                        let a_ip = a_row[p];
                        let b_row = &b[p * n + j0..p * n + j1];
                        for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                            *cv = *cv + a_ip * bv;
                        }
                    }
                }
            }
        }
    }
}

/// Transpose a `rows×cols` row-major matrix.
pub fn transpose<T: Float>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
