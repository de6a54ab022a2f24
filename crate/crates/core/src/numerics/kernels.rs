//! Thin wrapper over the `matrixmultiply` dgemm kernel.
//!
//! All matrices are row-major `f64` slices. Transposed operands are handled
//! by swapping strides, so no operand is ever materialized transposed.

/// `c = A · B + beta * c` where `A` is `a` (or its transpose) with effective
/// shape `m×k`, and `B` is `b` (or its transpose) with effective shape `k×n`.
///
/// `a_rows`/`a_cols` describe the stored layout of `a`, not the effective one.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    c: &mut [f64],
    beta: f64,
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
) {
    let (m, k) = if trans_a { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (kb, n) = if trans_b { (b_cols, b_rows) } else { (b_rows, b_cols) };
    assert_eq!(k, kb, "gemm inner dimension mismatch: {k} vs {kb}");
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    assert_eq!(c.len(), m * n);

    let (rsa, csa) = if trans_a {
        (1, a_cols as isize)
    } else {
        (a_cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b_cols as isize)
    } else {
        (b_cols as isize, 1)
    };

    unsafe {
        matrixmultiply::dgemm(
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(&mut c, 0.0, &a, 2, 2, false, &b, 2, 2, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_operands() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        // a^T (3x2) * b^T (2x3) = (b*a)^T
        let mut c = [0.0; 9];
        gemm(&mut c, 0.0, &a, 2, 3, true, &b, 3, 2, true);
        let mut ba = [0.0; 9];
        // b (3x2) * a (2x3)
        gemm(&mut ba, 0.0, &b, 3, 2, false, &a, 2, 3, false);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c[i * 3 + j], ba[j * 3 + i]);
            }
        }
    }

    #[test]
    fn beta_accumulates() {
        let a = [1.0, 1.0];
        let b = [2.0, 3.0];
        let mut c = [10.0, 10.0, 10.0, 10.0];
        gemm(&mut c, 1.0, &a, 2, 1, false, &b, 1, 2, false);
        assert_eq!(c, [12.0, 13.0, 12.0, 13.0]);
    }
}
