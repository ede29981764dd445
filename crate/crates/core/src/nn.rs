//! Convolution layers shared by the segmentation and rectification networks.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{fan_in_uniform, he_uniform, join, Binder, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 3×3 convolution with bias, padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3<T> {
    /// `[cout×cin×3×3]`
    pub kernel: Tensor<T>,
    /// `[cout]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> Conv3<T> {
    pub fn init(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self { kernel: he_uniform([cout, cin, 3, 3], cin * 9, rng), bias: Tensor::zeros([cout]) }
    }

    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self { kernel: Tensor::zeros([cout, cin, 3, 3]), bias: Tensor::zeros([cout]) }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn bind(&self, prefix: &str, b: &mut Binder<'_, T>) -> LayerVars {
        LayerVars {
            weight: b.bind(join(prefix, "kernel"), &self.kernel),
            bias: b.bind(join(prefix, "bias"), &self.bias),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Conv3<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-pixel linear map, i.e. a 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1<T> {
    /// `[cout×cin]`
    pub weight: Tensor<T>,
    /// `[cout]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv1<T> {
    pub fn init(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self { weight: fan_in_uniform([cout, cin], cin, rng), bias: Tensor::zeros([cout]) }
    }

    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self { weight: Tensor::zeros([cout, cin]), bias: Tensor::zeros([cout]) }
    }

    pub fn bind(&self, prefix: &str, b: &mut Binder<'_, T>) -> LayerVars {
        LayerVars {
            weight: b.bind(join(prefix, "weight"), &self.weight),
            bias: b.bind(join(prefix, "bias"), &self.bias),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Conv1<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// `conv(x) + bias`, optionally rectified.
pub fn conv3<T: Scalar>(tape: &mut Tape<T>, l: &LayerVars, x: Var, stride: usize, relu: bool) -> Result<Var> {
    let y = tape.conv2d(x, l.weight, stride)?;
    let y = tape.bias_add(y, l.bias)?;
    if relu {
        tape.relu(y)
    } else {
        Ok(y)
    }
}

/// Applies a 1×1 convolution to `x [cin×h×w]`.
pub fn conv1<T: Scalar>(tape: &mut Tape<T>, l: &LayerVars, x: Var) -> Result<Var> {
    let (cin, h, w) = tape.value(x).dims3()?;
    let cout = tape.shape(l.weight)[0];
    let flat = tape.reshape(x, [cin, h * w])?;
    let y = tape.matmul(l.weight, flat)?;
    let y = tape.reshape(y, [cout, h, w])?;
    tape.bias_add(y, l.bias)
}

/// Per-pixel softmax over the leading (class) axis of `[c×h×w]` values.
pub fn pixel_softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = logits.dims3()?;
    logits.ensure_finite("logits")?;
    let np = h * w;
    let x = logits.data();
    let mut out = vec![T::zero(); c * np];
    for p in 0..np {
        let mut max = T::neg_infinity();
        for k in 0..c {
            max = max.max(x[k * np + p]);
        }
        let mut z = T::zero();
        for k in 0..c {
            let e = (x[k * np + p] - max).exp();
            out[k * np + p] = e;
            z += e;
        }
        for k in 0..c {
            out[k * np + p] /= z;
        }
    }
    Tensor::new([c, h, w], out)
}

/// Per-pixel argmax over the leading axis; ties go to the lowest index.
pub fn pixel_argmax<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = scores.dims3()?;
    let np = h * w;
    let x = scores.data();
    Ok((0..np)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if x[k * np + p] > x[best * np + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect())
}

/// One-hot encoding of a label map as `[c×h×w]`.
pub fn one_hot<T: Scalar>(labels: &[u8], c: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    if labels.len() != h * w {
        return Err(crate::error::contract!("{} labels for a {h}x{w} map", labels.len()));
    }
    let np = h * w;
    let mut data = vec![T::zero(); c * np];
    for (p, &l) in labels.iter().enumerate() {
        if l as usize >= c {
            return Err(crate::Error::Data(format!("label {l} out of range for {c} classes")));
        }
        data[l as usize * np + p] = T::one();
    }
    Tensor::new([c, h, w], data)
}
