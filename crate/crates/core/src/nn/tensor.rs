use super::{NnError, Result};

/// Dense row-major array with an optional gradient buffer of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{n} values for shape {shape:?}"),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.item_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.values.len()]),
        }
    }

    pub fn expect_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", self.shape),
            })
        }
    }

    /// Concatenates two `[N, a]` and `[N, b]` tensors into `[N, a + b]`.
    pub fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.len() != 2 || b.shape.len() != 2 || a.batch() != b.batch() {
            return Err(NnError::ShapeMismatch {
                expected: "two [N, _] tensors with equal N".into(),
                found: format!("{:?} and {:?}", a.shape, b.shape),
            });
        }
        let (n, da, db) = (a.batch(), a.shape[1], b.shape[1]);
        let mut values = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            values.extend_from_slice(a.row(i));
            values.extend_from_slice(b.row(i));
        }
        Tensor::new(vec![n, da + db], values)
    }

    /// Inverse of [`Tensor::concat_rows`] on a `[N, a + b]` tensor.
    pub fn split_rows(&self, first: usize) -> Result<(Tensor, Tensor)> {
        if self.shape.len() != 2 || self.shape[1] < first {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, >= {first}]"),
                found: format!("{:?}", self.shape),
            });
        }
        let (n, d) = (self.batch(), self.shape[1]);
        let mut a = Vec::with_capacity(n * first);
        let mut b = Vec::with_capacity(n * (d - first));
        for i in 0..n {
            let r = self.row(i);
            a.extend_from_slice(&r[..first]);
            b.extend_from_slice(&r[first..]);
        }
        Ok((
            Tensor::new(vec![n, first], a)?,
            Tensor::new(vec![n, d - first], b)?,
        ))
    }
}

/// `sum(a[i] * b[i])` with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked_construction() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        let c = Tensor::concat_rows(&a, &b).unwrap();
        assert_eq!(c.values, vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let (a2, b2) = c.split_rows(2).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
