//! Dense row-major tensor values.

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array in row-major order.
///
/// A rank-0 tensor (empty shape) holds a single scalar. Every dimension of a
/// non-scalar tensor is at least one.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(contract!("shape {shape:?} has a zero dimension"));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(contract!("shape {shape:?} holds {} values but {} were given", numel(&shape), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: Vec::new(), data: vec![v] }
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        check_shape(&shape).expect("positive dimensions");
        let n = numel(&shape);
        Self { shape, data: vec![v; n] }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        check_shape(&shape).expect("positive dimensions");
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self { shape, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if numel(&shape) != self.data.len() {
            return Err(contract!("cannot reshape {:?} ({} values) to {shape:?}", self.shape, self.data.len()));
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self { shape: vec![c, r], data: out })
    }

    pub(crate) fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(contract!("expected a rank-2 tensor, got shape {:?}", self.shape)),
        }
    }

    pub(crate) fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(contract!("expected a rank-3 tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} contains non-finite values")))
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Channel slice `i` of a tensor whose leading axis is channels.
    pub fn channel(&self, i: usize) -> Result<Self> {
        let (&c, rest) = self.shape.split_first().ok_or_else(|| contract!("channel() on a scalar"))?;
        if i >= c {
            return Err(contract!("channel {i} out of range for {c} channels"));
        }
        let stride = numel(rest);
        let rest = if rest.is_empty() { vec![1] } else { rest.to_vec() };
        Ok(Self { shape: rest, data: self.data[i * stride..(i + 1) * stride].to_vec() })
    }

    /// Replaces `A` by `(A + Aᵀ) / 2` in place. Square rank-2 only.
    pub fn symmetrize_in_place(&mut self) -> Result<()> {
        let (r, c) = self.dims2()?;
        if r != c {
            return Err(contract!("symmetrize needs a square matrix, got {r}x{c}"));
        }
        let half = T::of(0.5);
        for i in 0..r {
            for j in (i + 1)..c {
                let m = (self.data[i * c + j] + self.data[j * c + i]) * half;
                self.data[i * c + j] = m;
                self.data[j * c + i] = m;
            }
        }
        Ok(())
    }
}
