use crate::error::{Error, Result};

/// Dense row-major array of `f64` values, last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let dims = dims.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} hold {n} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: f64) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Tensor { dims, data: vec![value; n] }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor { dims: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let dims = dims.into();
        let n: usize = dims.iter().product();
        Tensor { dims, data: (0..n).map(&mut f).collect() }
    }

    /// Rows of one-hot weights for `labels` over `classes` classes.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes];
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::arg(format!("label {label} out of range for {classes} classes")));
            }
            data[row * classes + label] = 1.0;
        }
        Tensor::new(vec![labels.len(), classes], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(format!("item() on tensor with dims {:?}", self.dims))),
        }
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// True when both tensors have identical dims and bit-identical values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
