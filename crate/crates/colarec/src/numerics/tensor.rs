//! Dense row-major tensors of rank 1 or 2.

use super::real::Real;
use super::NumericsError;

/// Dense tensor. Rank-1 tensors have shape `[n]`, rank-2 `[rows, cols]`.
/// A scalar is represented as shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Real> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::ZERO; n],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::BadConstruction {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a rank-2 tensor; a rank-1 tensor is treated as a single row.
    pub fn rows(&self) -> usize {
        if self.rank() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a rank-2 tensor; for rank-1 this is its length.
    pub fn cols(&self) -> usize {
        if self.rank() == 2 {
            self.shape[1]
        } else {
            self.shape[0]
        }
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols() + c]
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Element-wise `self += other`, shapes must already agree.
    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `C = A · B` for rank-2 operands, ikj loop order for cache locality.
pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let p = b.shape()[1];
    debug_assert_eq!(k, b.shape()[0]);
    let mut out = Tensor::zeros(&[n, p]);
    for i in 0..n {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b.data()[kk * p..(kk + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ik * bv;
            }
        }
    }
    out
}
