use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex array stored as separate real and imaginary planes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if re.len() != n || im.len() != n {
            return Err(Error::shape(
                format!("{n} entries for shape {shape:?}"),
                format!("re {} / im {}", re.len(), im.len()),
            ));
        }
        Ok(Self { shape, re, im })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_complex(shape: Vec<usize>, values: &[Complex64]) -> Result<Self> {
        let re = values.iter().map(|z| z.re).collect();
        let im = values.iter().map(|z| z.im).collect();
        Self::new(shape, re, im)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, flat: usize) -> Complex64 {
        Complex64::new(self.re[flat], self.im[flat])
    }

    pub fn set(&mut self, flat: usize, z: Complex64) {
        self.re[flat] = z.re;
        self.im[flat] = z.im;
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(
                format!("{} entries", self.len()),
                format!("{shape:?}"),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    /// Rows of a `[batch, features]` tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn row_len(&self) -> usize {
        if self.shape.is_empty() {
            0
        } else {
            self.shape[1..].iter().product()
        }
    }

    /// Stacks equally shaped tensors into `[n, ...shape]`.
    pub fn stack(items: &[&ComplexTensor]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Ok(Self::zeros(vec![0]));
        };
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        let mut re = Vec::with_capacity(items.len() * first.len());
        let mut im = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape() != first.shape() {
                return Err(Error::shape(
                    format!("{:?}", first.shape()),
                    format!("{:?}", t.shape()),
                ));
            }
            re.extend_from_slice(&t.re);
            im.extend_from_slice(&t.im);
        }
        Self::new(shape, re, im)
    }

    /// Row `i` of a `[n, ...]` tensor as its own tensor.
    pub fn row(&self, i: usize) -> ComplexTensor {
        let d = self.row_len();
        ComplexTensor {
            shape: self.shape[1..].to_vec(),
            re: self.re[i * d..(i + 1) * d].to_vec(),
            im: self.im[i * d..(i + 1) * d].to_vec(),
        }
    }
}
