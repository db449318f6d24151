use super::NnError;

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch {
                name: "matrix".into(),
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `y = self * x` for a column vector `x`, accumulated in `f64`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            *out = dot_f32_f64(self.row(r), x);
        }
    }

    /// `y += selfᵀ * g`, used to push a gradient back through the map.
    pub fn matvec_t_acc(&self, g: &[f64], y: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (yc, &w) in y.iter_mut().zip(self.row(r)) {
                *yc += gr * w as f64;
            }
        }
    }
}

/// Dot product with four interleaved partial sums combined in a fixed
/// order, so the result is deterministic and the loop vectorizes.
#[inline]
pub(crate) fn dot_f32_f64(w: &[f32], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [0.0f64; 4];
    let (wc, wr) = w.split_at(w.len() / 4 * 4);
    let (xc, xr) = x.split_at(wc.len());
    for (a, b) in wc.chunks_exact(4).zip(xc.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += a[k] as f64 * b[k];
        }
    }
    let mut tail = 0.0;
    for (&a, &b) in wr.iter().zip(xr) {
        tail += a as f64 * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose() {
        let m = DenseMatrix::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut y = [0.0; 2];
        m.matvec(&[1.0, 0.0, -1.0], &mut y);
        assert_eq!(y, [-2.0, -2.0]);
        let mut back = [0.0; 3];
        m.matvec_t_acc(&[1.0, 1.0], &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(DenseMatrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
