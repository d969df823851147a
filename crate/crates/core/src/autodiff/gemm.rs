//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// Row/column strides of a matrix operand, in elements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` buffer, seen as `cols x rows`.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows - 1) * self.row_stride as usize + (self.cols - 1) * self.col_stride as usize
    }
}

/// `c = a * b + (accumulate ? c : 0)`, with `c` row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], accumulate: bool) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    let (m, k, n) = (la.rows, la.cols, lb.cols);
    assert!(c.len() >= m * n, "gemm output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    assert!(la.max_offset() < a.len(), "gemm lhs out of bounds");
    assert!(lb.max_offset() < b.len(), "gemm rhs out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every index the kernel touches is bounded by the max_offset checks
    // above and by `c.len() >= m * n` with row-major output strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride,
            la.col_stride,
            b.as_ptr(),
            lb.row_stride,
            lb.col_stride,
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
    fn matches_naive_product_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(
            &a,
            Layout::row_major(m, k),
            &bt,
            Layout::transposed(n, k),
            &mut c,
            false,
        );
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * bt[j * k + p]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }
}
