use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::ComplexTensor;
use crate::error::{Error, Result};

/// Bias-free complexified linear map `L(p_r) + i L(p_i)`.
///
/// Weights are row-major `[fan_out, fan_in]`. The same parameters also serve a
/// full-kernel convolution (input flattened to `fan_in`) and, through
/// [`forward_transposed`](Self::forward_transposed), its transposed convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLinear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub wr: Vec<f64>,
    pub wi: Vec<f64>,
}

/// Gradient with the layout of [`ComplexLinear`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub wr: Vec<f64>,
    pub wi: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &ComplexLinear) -> Self {
        Self {
            wr: vec![0.0; layer.wr.len()],
            wi: vec![0.0; layer.wi.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LinearGrad) {
        for (a, b) in self.wr.iter_mut().zip(&other.wr) {
            *a += b;
        }
        for (a, b) in self.wi.iter_mut().zip(&other.wi) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.wr
            .iter_mut()
            .chain(self.wi.iter_mut())
            .for_each(|v| *v *= s);
    }
}

impl ComplexLinear {
    pub fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            wr: vec![0.0; fan_in * fan_out],
            wi: vec![0.0; fan_in * fan_out],
        }
    }

    /// Independent `N(0, 1/(2·fan))` real and imaginary parts, so the complex
    /// weight variance is `1/fan`. `fan` is chosen by the caller.
    pub fn gaussian<R: Rng>(fan_out: usize, fan_in: usize, fan: usize, rng: &mut R) -> Self {
        let std = (0.5 / fan.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n = fan_in * fan_out;
        let wr = (0..n).map(|_| normal.sample(rng)).collect();
        let wi = (0..n).map(|_| normal.sample(rng)).collect();
        Self {
            fan_in,
            fan_out,
            wr,
            wi,
        }
    }

    pub fn param_count(&self) -> usize {
        self.wr.len()
    }

    fn check(&self, x: &ComplexTensor, width: usize) -> Result<()> {
        if x.row_len() != width || x.shape().len() < 2 {
            return Err(Error::shape(
                format!("[batch, {width}]"),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// `y = W x` for every row of `x: [batch, fan_in]`.
    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.check(x, self.fan_in)?;
        let (n_in, n_out) = (self.fan_in, self.fan_out);
        let b = x.rows();
        let mut out = ComplexTensor::zeros(vec![b, n_out]);
        out.re
            .par_chunks_mut(n_out)
            .zip(out.im.par_chunks_mut(n_out))
            .enumerate()
            .for_each(|(s, (yr, yi))| {
                let xr = &x.re[s * n_in..(s + 1) * n_in];
                let xi = &x.im[s * n_in..(s + 1) * n_in];
                for o in 0..n_out {
                    let wr = &self.wr[o * n_in..(o + 1) * n_in];
                    let wi = &self.wi[o * n_in..(o + 1) * n_in];
                    let (mut ar, mut ai) = (0.0, 0.0);
                    for i in 0..n_in {
                        ar += wr[i] * xr[i] - wi[i] * xi[i];
                        ai += wr[i] * xi[i] + wi[i] * xr[i];
                    }
                    yr[o] = ar;
                    yi[o] = ai;
                }
            });
        Ok(out)
    }

    /// `y = Wᵀ x` (plain transpose) for every row of `x: [batch, fan_out]`.
    pub fn forward_transposed(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.check(x, self.fan_out)?;
        Ok(self.apply_transposed(x, false))
    }

    /// `Wᵀ x`, or `W̄ x` when `conjugate`, row by row.
    fn apply_transposed(&self, x: &ComplexTensor, conjugate: bool) -> ComplexTensor {
        let (n_in, n_out) = (self.fan_in, self.fan_out);
        let b = x.rows();
        let sign = if conjugate { -1.0 } else { 1.0 };
        let mut out = ComplexTensor::zeros(vec![b, n_in]);
        out.re
            .par_chunks_mut(n_in)
            .zip(out.im.par_chunks_mut(n_in))
            .enumerate()
            .for_each(|(s, (yr, yi))| {
                let xr = &x.re[s * n_out..(s + 1) * n_out];
                let xi = &x.im[s * n_out..(s + 1) * n_out];
                for o in 0..n_out {
                    let (gr, gi) = (xr[o], xi[o]);
                    if gr == 0.0 && gi == 0.0 {
                        continue;
                    }
                    let wr = &self.wr[o * n_in..(o + 1) * n_in];
                    let wi = &self.wi[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        let wim = sign * wi[i];
                        yr[i] += wr[i] * gr - wim * gi;
                        yi[i] += wr[i] * gi + wim * gr;
                    }
                }
            });
        out
    }

    /// `W x` with `W` conjugated, used for the input gradient of the transposed map.
    fn apply_conjugate(&self, x: &ComplexTensor) -> ComplexTensor {
        let (n_in, n_out) = (self.fan_in, self.fan_out);
        let b = x.rows();
        let mut out = ComplexTensor::zeros(vec![b, n_out]);
        out.re
            .par_chunks_mut(n_out)
            .zip(out.im.par_chunks_mut(n_out))
            .enumerate()
            .for_each(|(s, (yr, yi))| {
                let xr = &x.re[s * n_in..(s + 1) * n_in];
                let xi = &x.im[s * n_in..(s + 1) * n_in];
                for o in 0..n_out {
                    let wr = &self.wr[o * n_in..(o + 1) * n_in];
                    let wi = &self.wi[o * n_in..(o + 1) * n_in];
                    let (mut ar, mut ai) = (0.0, 0.0);
                    for i in 0..n_in {
                        ar += wr[i] * xr[i] + wi[i] * xi[i];
                        ai += wr[i] * xi[i] - wi[i] * xr[i];
                    }
                    yr[o] = ar;
                    yi[o] = ai;
                }
            });
        out
    }

    /// Weight gradient `Σ_b ∂L/∂W` where `row_side` indexes rows of `W` and
    /// `col_side` its columns; samples are reduced in order. `row_is_upstream`
    /// tells which side carries the upstream gradient.
    fn weight_grad(
        &self,
        row_side: &ComplexTensor,
        col_side: &ComplexTensor,
        row_is_upstream: bool,
    ) -> LinearGrad {
        let sign = if row_is_upstream { 1.0 } else { -1.0 };
        let (n_in, n_out) = (self.fan_in, self.fan_out);
        let b = row_side.rows();
        let mut grad = LinearGrad::zeros_like(self);
        grad.wr
            .par_chunks_mut(n_in)
            .zip(grad.wi.par_chunks_mut(n_in))
            .enumerate()
            .for_each(|(o, (gwr, gwi))| {
                for s in 0..b {
                    let gr = row_side.re[s * n_out + o];
                    let gi = row_side.im[s * n_out + o];
                    if gr == 0.0 && gi == 0.0 {
                        continue;
                    }
                    let xr = &col_side.re[s * n_in..(s + 1) * n_in];
                    let xi = &col_side.im[s * n_in..(s + 1) * n_in];
                    for i in 0..n_in {
                        gwr[i] += gr * xr[i] + gi * xi[i];
                        gwi[i] += sign * (gi * xr[i] - gr * xi[i]);
                    }
                }
            });
        grad
    }

    /// Gradients of [`forward`](Self::forward) given the upstream gradient `gy`
    /// (`∂L/∂Re y`, `∂L/∂Im y`). Returns the weight gradient summed over the batch
    /// and the input gradient `Wᴴ gy`.
    pub fn backward(
        &self,
        x: &ComplexTensor,
        gy: &ComplexTensor,
    ) -> Result<(LinearGrad, ComplexTensor)> {
        self.check(x, self.fan_in)?;
        self.check(gy, self.fan_out)?;
        let grad = self.weight_grad(gy, x, true);
        let gx = self.apply_transposed(gy, true);
        Ok((grad, gx))
    }

    /// Input gradient `Wᴴ gy` of [`forward`](Self::forward) alone.
    pub fn input_grad(&self, gy: &ComplexTensor) -> Result<ComplexTensor> {
        self.check(gy, self.fan_out)?;
        Ok(self.apply_transposed(gy, true))
    }

    /// Gradients of [`forward_transposed`](Self::forward_transposed).
    pub fn backward_transposed(
        &self,
        x: &ComplexTensor,
        gy: &ComplexTensor,
    ) -> Result<(LinearGrad, ComplexTensor)> {
        self.check(x, self.fan_out)?;
        self.check(gy, self.fan_in)?;
        let grad = self.weight_grad(x, gy, false);
        let gx = self.apply_conjugate(gy);
        Ok((grad, gx))
    }
}
