//! Low-level numeric kernels shared by the forward and backward passes.

/// Row-major view of a matrix inside a flat buffer; `trans` reads it transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a> MatView<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, trans: false }
    }

    pub fn t(self) -> Self {
        Self { trans: !self.trans, ..self }
    }

    fn logical(&self) -> (usize, usize) {
        if self.trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta * c + a · b` where `c` is `m × n` row-major.
pub(crate) fn gemm(a: MatView<'_>, b: MatView<'_>, c: &mut [f64], beta: f64) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "inner dimensions differ: {k} vs {k2}");
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in &mut c[..m * n] {
            *x *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the views were bounds-checked above; strides describe dense
    // row-major (or transposed) matrices inside their slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one `[cin, len]` signal into `[cin * k, len]` columns with zero padding `pad`.
pub(crate) fn im2col(x: &[f64], cin: usize, len: usize, k: usize, pad: usize, cols: &mut [f64]) {
    for c in 0..cin {
        for j in 0..k {
            let row = &mut cols[(c * k + j) * len..(c * k + j + 1) * len];
            for (t, out) in row.iter_mut().enumerate() {
                let src = t as isize + j as isize - pad as isize;
                *out = if src >= 0 && (src as usize) < len { x[c * len + src as usize] } else { 0.0 };
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a `[cin, len]` gradient.
pub(crate) fn col2im(cols: &[f64], cin: usize, len: usize, k: usize, pad: usize, dx: &mut [f64]) {
    for c in 0..cin {
        for j in 0..k {
            let row = &cols[(c * k + j) * len..(c * k + j + 1) * len];
            for (t, &v) in row.iter().enumerate() {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    dx[c * len + src as usize] += v;
                }
            }
        }
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1., 2., 3., 4.];
        let b = [5., 6., 7., 8.];
        let mut c = [0.0; 4];
        gemm(MatView::new(&a, 2, 2), MatView::new(&b, 2, 2), &mut c, 0.0);
        assert_eq!(c, [19., 22., 43., 50.]);
        gemm(MatView::new(&a, 2, 2).t(), MatView::new(&b, 2, 2), &mut c, 0.0);
        assert_eq!(c, [26., 30., 38., 44.]);
        gemm(MatView::new(&a, 2, 2), MatView::new(&b, 2, 2).t(), &mut c, 0.0);
        assert_eq!(c, [17., 23., 39., 53.]);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
