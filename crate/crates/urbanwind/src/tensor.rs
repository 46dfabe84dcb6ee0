use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element of a [`Tensor`]. Training and inference run in `f32`;
/// gradient checking runs in `f64`.
pub trait Element:
    Float + Sum + Debug + Display + Send + Sync + 'static + std::ops::AddAssign + std::ops::MulAssign
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Gaussian CDF, used by the exact GELU.
    fn norm_cdf(self) -> Self;
    /// Standard normal density, used by the GELU backward pass.
    fn norm_pdf(self) -> Self;
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Element for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn norm_cdf(self) -> Self {
        (0.5 * (1.0 + libm::erf(self as f64 * FRAC_1_SQRT_2))) as f32
    }
    fn norm_pdf(self) -> Self {
        let x = self as f64;
        (INV_SQRT_2PI * (-0.5 * x * x).exp()) as f32
    }
}

impl Element for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn norm_cdf(self) -> Self {
        0.5 * (1.0 + libm::erf(self * FRAC_1_SQRT_2))
    }
    fn norm_pdf(self) -> Self {
        INV_SQRT_2PI * (-0.5 * self * self).exp()
    }
}

/// Dense 4-D array in (batch, channel, height, width) layout, row-major with
/// width fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: [usize; 4],
    data: Vec<E>,
}

impl<E: Element> Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

impl<E: Element> Tensor<E> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![E::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: E) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// 1-D tensor of length `n`, stored as shape (1, n, 1, 1). Used for
    /// biases and normalization scale/shift vectors.
    pub fn vector(data: Vec<E>) -> Self {
        let n = data.len();
        Tensor {
            shape: [1, n, 1, 1],
            data,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        let [_, cc, hh, ww] = self.shape;
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut E {
        let [_, cc, hh, ww] = self.shape;
        &mut self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element count must match; shapes may differ (used when accumulating
    /// gradients for vector parameters).
    pub fn add_assign(&mut self, other: &Tensor<E>) {
        assert_eq!(self.data.len(), other.data.len(), "add_assign length");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: E) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Converts precision elementwise.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_checked() {
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(0, 1, 0, 1), 4.0);
    }

    #[test]
    fn norm_cdf_matches_known_values() {
        assert!((1.0f64.norm_cdf() - 0.841344746068543).abs() < 1e-12);
        assert!((0.0f64.norm_cdf() - 0.5).abs() < 1e-15);
    }
}
