use crate::error::{Error, Result};

/// Dense row-major `f32` array.
///
/// Every constructor except [`Tensor::new_unchecked`] rejects NaN and
/// infinities. Tensors are values: operations return new tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::invalid("tensor needs at least one dimension"));
    }
    if dims.len() > u8::MAX as usize {
        return Err(Error::invalid(format!("{} dimensions exceed 255", dims.len())));
    }
    let mut n = 1usize;
    for &d in dims {
        if d == 0 {
            return Err(Error::invalid(format!("zero-sized dimension in {dims:?}")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::invalid(format!("dims {dims:?} overflow")))?;
    }
    Ok(n)
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let t = Self::new_unchecked(dims, data)?;
        if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite element {} at index {i}",
                t.data[i]
            )));
        }
        Ok(t)
    }

    /// Skips the finiteness check; shape is still validated.
    pub fn new_unchecked(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if n != data.len() {
            return Err(Error::invalid(format!(
                "dims {dims:?} hold {n} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        })
    }

    pub fn filled(dims: &[usize], value: f32) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.fill(value);
        Self::new(t.dims, t.data)
    }

    /// Builds a tensor from `f64` values, rounding to `f32`.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new_unchecked(dims, self.data)
    }

    pub fn expect_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::DimMismatch {
                expected: dims.to_vec(),
                got: self.dims.clone(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, a: f32) -> Result<Self> {
        self.map(|v| v * a)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        other.expect_dims(&self.dims)?;
        Self::new(
            self.dims.clone(),
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        other.expect_dims(&self.dims)?;
        Self::new(
            self.dims.clone(),
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        )
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max)
    }
}
