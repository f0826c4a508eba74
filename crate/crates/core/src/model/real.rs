use num_traits::Float;

/// Scalar type the transformer kernels are generic over. Training and
/// inference run in `f32`; gradient checks instantiate `f64`.
pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    fn of(x: f64) -> Self;

    /// `c = alpha * op(a) * op(b) + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides and dimensions must describe valid, non-overlapping regions of
    /// the three buffers.
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
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }

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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }

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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major view of a matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub transposed: bool,
}

impl Mat {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            row_stride: cols,
            transposed: false,
        }
    }

    pub fn strided(rows: usize, cols: usize, row_stride: usize) -> Self {
        Mat {
            rows,
            cols,
            row_stride,
            transposed: false,
        }
    }

    /// The transpose of this view (no data movement).
    pub fn t(self) -> Self {
        Mat {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.row_stride,
            transposed: !self.transposed,
        }
    }

    fn strides(self) -> (isize, isize) {
        if self.transposed {
            (1, self.row_stride as isize)
        } else {
            (self.row_stride as isize, 1)
        }
    }

    fn extent(self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        let (rs, cs) = self.strides();
        (self.rows - 1) * rs as usize + (self.cols - 1) * cs as usize + 1
    }
}

/// `c (+)= a * b` over strided views; `accumulate` selects beta = 1.
pub(crate) fn gemm<T: Real>(a: &[T], am: Mat, b: &[T], bm: Mat, c: &mut [T], cm: Mat, accumulate: bool) {
    assert_eq!(am.cols, bm.rows, "inner dimensions differ");
    assert_eq!((am.rows, bm.cols), (cm.rows, cm.cols), "output shape differs");
    assert!(a.len() >= am.extent() && b.len() >= bm.extent() && c.len() >= cm.extent());
    let (rsa, csa) = am.strides();
    let (rsb, csb) = bm.strides();
    let (rsc, csc) = cm.strides();
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: extents checked above; `c` is borrowed mutably and cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            am.rows,
            am.cols,
            bm.cols,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}
