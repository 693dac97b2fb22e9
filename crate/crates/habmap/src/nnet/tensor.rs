//! Dense row-major tensors generic over the float element type.
//!
//! Training runs in f32; gradient-check tests instantiate the same code at
//! f64 so finite-difference comparisons are meaningful.

use num_traits::Float;

/// Float element for tensors and layers. Reductions (means, pooled sums)
/// always accumulate in f64 regardless of `E`.
pub trait Element:
    Float + num_traits::NumAssign + Default + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        f64::from(v)
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "data length must match shape product");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![E::zero(); numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn fill(&mut self, v: E) {
        self.data.fill(v);
    }

    /// Flat index of (b, c, y, x) in an NCHW tensor.
    #[inline]
    pub fn idx4(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    /// Flat index of (r, c) in a matrix.
    #[inline]
    pub fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        r * self.shape[1] + c
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> E {
        self.data[self.idx4(b, c, y, x)]
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> E {
        self.data[self.idx2(r, c)]
    }

    /// Convert element type (f32 network ↔ f64 gradient-check network).
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// A parameter tensor with its gradient accumulator and trainable flag.
#[derive(Debug, Clone)]
pub struct Param<E> {
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
    pub trainable: bool,
}

impl<E: Element> Param<E> {
    pub fn new(value: Tensor<E>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value, grad, trainable: true }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(E::zero());
    }
}
