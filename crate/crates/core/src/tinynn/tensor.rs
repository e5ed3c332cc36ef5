use crate::error::{Error, Result};

/// Dense row-major float32 array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                layer: "tensor".into(),
                expected: format!("{n} elements for shape {shape:?}"),
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                layer: "reshape".into(),
                expected: format!("{} elements", self.data.len()),
                got: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    /// View of sample `i` along the leading (batch) dimension.
    pub fn row(&self, i: usize) -> &[f32] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Stack equally shaped tensors along a new leading dimension.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape() != first.shape() {
                return Err(Error::Shape {
                    layer: "stack".into(),
                    expected: format!("{:?}", first.shape()),
                    got: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        Tensor::new(shape, data)
    }
}

/// A learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
    pub(crate) velocity: Vec<f32>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = vec![0.0; value.numel()];
        Self {
            name: name.into(),
            value,
            grad,
            frozen: false,
            velocity,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn reset_momentum(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Accumulate `g` into the gradient unless the parameter is frozen.
    pub(crate) fn accumulate(&mut self, g: &[f32]) {
        if self.frozen {
            return;
        }
        for (dst, src) in self.grad.data_mut().iter_mut().zip(g) {
            *dst += *src;
        }
    }
}
