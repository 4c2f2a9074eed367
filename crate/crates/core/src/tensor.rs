//! Dense row-major `f64` tensors.
//!
//! Only the handful of operations the rest of the crate needs: positionwise
//! arithmetic with strict shape checks (no broadcasting) and the three
//! matrix products used by the MLP forward and backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Positionwise `a op b`. Shapes must match exactly; division by an exact
/// zero and non-finite results from finite inputs are reported as errors.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b)?;
    let mut out = Vec::with_capacity(a.len());
    for (i, (&x, &y)) in a.data.iter().zip(&b.data).enumerate() {
        let r = match op {
            ElementwiseOp::Add => x + y,
            ElementwiseOp::Sub => x - y,
            ElementwiseOp::Mul => x * y,
            ElementwiseOp::Div => {
                if y == 0.0 {
                    return Err(Error::DivisionByZero { index: i });
                }
                x / y
            }
        };
        if !r.is_finite() && x.is_finite() && y.is_finite() {
            return Err(Error::NumericOverflow(format!("{op:?} at flat index {i}: {x} and {y}")));
        }
        out.push(r);
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: out,
    })
}

/// `a [m×k] · b [k×n]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!("matmul {m}x{k} by {k2}x{n}")));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` for `a [k×m]`, `b [k×n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!("matmul_tn {k}x{m} by {k2}x{n}")));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ` for `a [m×k]`, `b [n×k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!("matmul_nt {m}x{k} by {n}x{k2}")));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn mul_is_positionwise() {
        let r = elementwise(ElementwiseOp::Mul, &t(&[1.0, 2.0]), &t(&[3.0, 4.0])).unwrap();
        assert_eq!(r.data(), &[3.0, 8.0]);
    }

    #[test]
    fn sub_self_is_zero() {
        let x = t(&[1.5, -2.25, 1e300]);
        let r = elementwise(ElementwiseOp::Sub, &x, &x).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn div_by_zero_errors() {
        let err = elementwise(ElementwiseOp::Div, &t(&[2.0, 2.0]), &t(&[4.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DivisionByZero { index: 1 }));
    }

    #[test]
    fn shape_mismatch_errors() {
        let err = elementwise(ElementwiseOp::Add, &t(&[1.0]), &t(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn overflow_is_reported() {
        let err = elementwise(ElementwiseOp::Mul, &t(&[1e200]), &t(&[1e200])).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow(_)));
    }

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let ab = matmul(&a, &b).unwrap();
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);

        let at = Tensor::new(vec![3, 2], vec![1., 4., 2., 5., 3., 6.]).unwrap();
        assert_eq!(matmul_tn(&at, &b).unwrap(), ab);

        let bt = Tensor::new(vec![2, 3], vec![7., 9., 11., 8., 10., 12.]).unwrap();
        assert_eq!(matmul_nt(&a, &bt).unwrap(), ab);
    }
}
