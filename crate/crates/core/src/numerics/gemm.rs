//! Safe wrapper over `matrixmultiply::dgemm` for row-major, optionally
//! transposed, strided operands.

/// A row-major view of an `[rows, cols]` matrix whose rows start `ld`
/// elements apart, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub ld: usize,
    pub transposed: bool,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], ld: usize) -> Self {
        Self { data, ld, transposed: false }
    }

    pub fn t(data: &'a [f64], ld: usize) -> Self {
        Self { data, ld, transposed: true }
    }

    /// Strides of the logical (possibly transposed) matrix, after checking
    /// that every logical element `[rows, cols]` lies inside `data`.
    fn strides(&self, rows: usize, cols: usize) -> (isize, isize) {
        let (stored_rows, stored_cols) = if self.transposed { (cols, rows) } else { (rows, cols) };
        if rows > 0 && cols > 0 {
            assert!(stored_cols <= self.ld && (stored_rows - 1) * self.ld + stored_cols <= self.data.len());
        }
        if self.transposed {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }
}

/// `c = a · b + beta · c` for logical `a: [m, k]`, `b: [k, n]` and a row-major
/// `c: [m, n]` with leading dimension `ldc`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    let (rsa, csa) = a.strides(m, k);
    let (rsb, csb) = b.strides(k, n);
    if m > 0 && n > 0 {
        assert!(n <= ldc && (m - 1) * ldc + n <= c.len());
    }
    // SAFETY: every element addressed through the strides was bounds checked above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.data.as_ptr(), rsa, csa,
            b.data.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), ldc as isize, 1,
        );
    }
}
