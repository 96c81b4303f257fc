use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ComplexTensor;
use crate::error::{Error, Result};

/// Phase-preserving complex activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActivationSpec {
    /// `ReLU(|z| + b) · z/|z|`
    ModRelu { bias: f64 },
    /// `((1 + α) + cos arg z) · z / 2`
    LeakyCardioid { alpha: f64 },
}

impl ActivationSpec {
    pub fn label(&self) -> String {
        match self {
            ActivationSpec::ModRelu { bias } => format!("modrelu(b={bias})"),
            ActivationSpec::LeakyCardioid { alpha } => format!("cardioid(alpha={alpha})"),
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            ActivationSpec::ModRelu { bias } => modrelu_scalar(x, y, bias),
            ActivationSpec::LeakyCardioid { alpha } => cardioid_scalar(x, y, alpha),
        }
    }

    /// Vector-Jacobian product at pre-activation `(x, y)` with upstream `(gx, gy)`.
    #[inline]
    pub fn vjp(&self, x: f64, y: f64, gx: f64, gy: f64) -> (f64, f64) {
        let [[a, b], [c, d]] = self.jacobian(x, y);
        // Jᵀ g
        (a * gx + c * gy, b * gx + d * gy)
    }

    /// Real 2×2 Jacobian `[[∂u/∂x, ∂u/∂y], [∂v/∂x, ∂v/∂y]]` of `f(x + iy) = u + iv`.
    pub fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let r2 = x * x + y * y;
        match *self {
            ActivationSpec::ModRelu { bias } => {
                let r = r2.sqrt();
                if r == 0.0 || r + bias <= 0.0 {
                    return [[0.0, 0.0], [0.0, 0.0]];
                }
                let s = bias / (r2 * r);
                [[1.0 + s * y * y, -s * x * y], [-s * x * y, 1.0 + s * x * x]]
            }
            ActivationSpec::LeakyCardioid { alpha } => {
                let lin = 0.5 * (1.0 + alpha);
                if r2 == 0.0 {
                    return [[lin, 0.0], [0.0, lin]];
                }
                let r3 = r2 * r2.sqrt();
                // u = lin·x + x²/(2r), v = lin·y + xy/(2r)
                [
                    [
                        lin + 0.5 * x * (x * x + 2.0 * y * y) / r3,
                        -0.5 * x * x * y / r3,
                    ],
                    [0.5 * y * y * y / r3, lin + 0.5 * x * x * x / r3],
                ]
            }
        }
    }

    pub fn forward(&self, z: &ComplexTensor) -> ComplexTensor {
        let mut out = z.clone();
        out.re
            .par_iter_mut()
            .zip(out.im.par_iter_mut())
            .for_each(|(x, y)| {
                let (u, v) = self.apply(*x, *y);
                *x = u;
                *y = v;
            });
        out
    }

    /// Input gradient given the pre-activation `z` and upstream gradient `g`.
    pub fn backward(&self, z: &ComplexTensor, g: &ComplexTensor) -> Result<ComplexTensor> {
        if z.shape() != g.shape() {
            return Err(Error::shape(
                format!("{:?}", z.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        let mut out = g.clone();
        out.re
            .par_iter_mut()
            .zip(out.im.par_iter_mut())
            .zip(z.re.par_iter().zip(z.im.par_iter()))
            .for_each(|((gx, gy), (&x, &y))| {
                let (a, b) = self.vjp(x, y, *gx, *gy);
                *gx = a;
                *gy = b;
            });
        Ok(out)
    }
}

#[inline]
fn modrelu_scalar(x: f64, y: f64, bias: f64) -> (f64, f64) {
    let r = (x * x + y * y).sqrt();
    if r == 0.0 || r + bias < 0.0 {
        return (0.0, 0.0);
    }
    let s = (r + bias) / r;
    (s * x, s * y)
}

#[inline]
fn cardioid_scalar(x: f64, y: f64, alpha: f64) -> (f64, f64) {
    let r = (x * x + y * y).sqrt();
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let s = 0.5 * ((1.0 + alpha) + x / r);
    (s * x, s * y)
}

pub fn modrelu(z: &ComplexTensor, bias: f64) -> ComplexTensor {
    ActivationSpec::ModRelu { bias }.forward(z)
}

pub fn leaky_cardioid(z: &ComplexTensor, alpha: f64) -> ComplexTensor {
    ActivationSpec::LeakyCardioid { alpha }.forward(z)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Logistic sigmoid on every real and imaginary component, averaged over all `2n`.
pub fn split_sigmoid_mean(z: &ComplexTensor) -> f64 {
    if z.is_empty() {
        return 0.5;
    }
    let s: f64 = z.re.iter().chain(&z.im).map(|&v| sigmoid(v)).sum();
    s / (2 * z.len()) as f64
}

/// Gradient of [`split_sigmoid_mean`] scaled by `upstream`.
pub fn split_sigmoid_mean_backward(z: &ComplexTensor, upstream: f64) -> ComplexTensor {
    let n = (2 * z.len().max(1)) as f64;
    let d = |v: f64| {
        let s = sigmoid(v);
        upstream * s * (1.0 - s) / n
    };
    let re = z.re.iter().map(|&v| d(v)).collect();
    let im = z.im.iter().map(|&v| d(v)).collect();
    ComplexTensor::new(z.shape().to_vec(), re, im).expect("shape preserved")
}

/// Per-row [`split_sigmoid_mean`] of a `[batch, features]` tensor.
pub fn split_sigmoid_rows(z: &ComplexTensor) -> Vec<f64> {
    (0..z.rows())
        .map(|i| split_sigmoid_mean(&z.row(i)))
        .collect()
}

/// Per-row backward of [`split_sigmoid_rows`] with one upstream scalar per row.
pub fn split_sigmoid_rows_backward(z: &ComplexTensor, upstream: &[f64]) -> ComplexTensor {
    let d = z.row_len();
    let n = (2 * d.max(1)) as f64;
    let mut out = ComplexTensor::zeros(z.shape().to_vec());
    for (s, &u) in upstream.iter().enumerate() {
        for j in s * d..(s + 1) * d {
            let a = sigmoid(z.re[j]);
            let b = sigmoid(z.im[j]);
            out.re[j] = u * a * (1.0 - a) / n;
            out.im[j] = u * b * (1.0 - b) / n;
        }
    }
    out
}
