//! Complex-valued network primitives in real representation.
//!
//! Every linear map is the complexification of a real one and acts on separate
//! real/imaginary planes. Gradients are with respect to the real parameters
//! `(p_r, p_i)` and the real and imaginary parts of inputs, so non-holomorphic
//! activations go through their real 2×2 Jacobians.

mod activation;
mod adam;
pub mod checkpoint;
mod linear;
mod tensor;

pub use activation::{
    leaky_cardioid, modrelu, split_sigmoid_mean, split_sigmoid_mean_backward, split_sigmoid_rows,
    split_sigmoid_rows_backward, ActivationSpec,
};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedBlob};
pub use linear::{ComplexLinear, LinearGrad};
pub use tensor::ComplexTensor;

use crate::error::{Error, Result};

/// Full-kernel convolution of an `[h, w, c]` input into `[1, 1, n_filters]`.
///
/// With a kernel covering the whole input and no padding this is the dense map on
/// the flattened input.
pub fn full_conv_forward(params: &ComplexLinear, x: &ComplexTensor) -> Result<ComplexTensor> {
    if x.len() != params.fan_in {
        return Err(Error::shape(params.fan_in, x.len()));
    }
    let flat = x.clone().reshape(vec![1, params.fan_in])?;
    params.forward(&flat)?.reshape(vec![1, 1, params.fan_out])
}

/// Transposed full-kernel convolution `[1, 1, n_filters] → output_shape`.
pub fn full_conv_transpose(
    params: &ComplexLinear,
    h: &ComplexTensor,
    output_shape: Vec<usize>,
) -> Result<ComplexTensor> {
    if h.len() != params.fan_out {
        return Err(Error::shape(params.fan_out, h.len()));
    }
    let flat = h.clone().reshape(vec![1, params.fan_out])?;
    params.forward_transposed(&flat)?.reshape(output_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn random_tensor<R: Rng>(shape: Vec<usize>, rng: &mut R) -> ComplexTensor {
        let n: usize = shape.iter().product();
        let re = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let im = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        ComplexTensor::new(shape, re, im).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
        (a - b).abs() <= abs.max(rel * a.abs().max(b.abs()))
    }

    /// Scalar test loss `Σ c_re·Re y + c_im·Im y` with fixed random weights.
    fn probe(y: &ComplexTensor, c: &ComplexTensor) -> f64 {
        y.re.iter().zip(&c.re).map(|(a, b)| a * b).sum::<f64>()
            + y.im.iter().zip(&c.im).map(|(a, b)| a * b).sum::<f64>()
    }

    fn fd_vec(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let mut xs = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = xs[i];
                xs[i] = orig + h;
                let up = f(&xs);
                xs[i] = orig - h;
                let down = f(&xs);
                xs[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            assert!(close(*a, *n, 1e-5, 1e-7), "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn linear_matches_complex_arithmetic() {
        let mut r = rng();
        let layer = ComplexLinear::gaussian(5, 7, 7, &mut r);
        let x = random_tensor(vec![3, 7], &mut r);
        let y = layer.forward(&x).unwrap();
        for s in 0..3 {
            for o in 0..5 {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..7 {
                    let w = Complex64::new(layer.wr[o * 7 + i], layer.wi[o * 7 + i]);
                    acc += w * x.get(s * 7 + i);
                }
                assert!((acc - y.get(s * 5 + o)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_real_specializations() {
        let mut r = rng();
        let mut layer = ComplexLinear::gaussian(4, 6, 6, &mut r);
        layer.wi.iter_mut().for_each(|v| *v = 0.0);
        let x = random_tensor(vec![1, 6], &mut r);
        let y = layer.forward(&x).unwrap();
        for o in 0..4 {
            let real: f64 = (0..6).map(|i| layer.wr[o * 6 + i] * x.re[i]).sum();
            let imag: f64 = (0..6).map(|i| layer.wr[o * 6 + i] * x.im[i]).sum();
            assert!((y.re[o] - real).abs() < 1e-14);
            assert!((y.im[o] - imag).abs() < 1e-14);
        }

        let mut layer = ComplexLinear::gaussian(4, 6, 6, &mut r);
        layer.wr.iter_mut().for_each(|v| *v = 0.0);
        let mut x = random_tensor(vec![1, 6], &mut r);
        x.im.iter_mut().for_each(|v| *v = 0.0);
        let y = layer.forward(&x).unwrap();
        assert!(y.re.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_shape_errors() {
        let layer = ComplexLinear::zeros(3, 4);
        assert!(layer.forward(&ComplexTensor::zeros(vec![2, 5])).is_err());
        assert!(layer
            .forward_transposed(&ComplexTensor::zeros(vec![2, 4]))
            .is_err());
        assert!(ComplexTensor::new(vec![2, 2], vec![0.0; 4], vec![0.0; 3]).is_err());
    }

    #[test]
    fn full_conv_one_hot_and_zero() {
        let shape = vec![4, 4, 2];
        let d = 32;
        let mut layer = ComplexLinear::zeros(3, d);
        let mut r = rng();
        let x = random_tensor(shape.clone(), &mut r);
        // filter 1 selects entry (i=2, j=1, k=1)
        let flat = (2 * 4 + 1) * 2 + 1;
        layer.wr[d + flat] = 1.0;
        let y = full_conv_forward(&layer, &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3]);
        assert_eq!(y.get(1), x.get(flat));

        let layer = ComplexLinear::gaussian(3, d, d, &mut r);
        let y = full_conv_forward(&layer, &ComplexTensor::zeros(shape)).unwrap();
        assert!(y.re.iter().chain(&y.im).all(|v| *v == 0.0));
    }

    #[test]
    fn conv_then_transpose_is_gram_action() {
        let mut r = rng();
        let shape = vec![3, 3, 2];
        let d = 18;
        let layer = ComplexLinear::gaussian(4, d, d, &mut r);
        let x = random_tensor(shape.clone(), &mut r);
        let h = full_conv_forward(&layer, &x).unwrap();
        let back = full_conv_transpose(&layer, &h, shape).unwrap();

        // explicit W (4 × 18) and Wᵀ W
        let w = |o: usize, i: usize| Complex64::new(layer.wr[o * d + i], layer.wi[o * d + i]);
        let xs = x.to_complex();
        for i in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..d {
                let mut g = Complex64::new(0.0, 0.0);
                for o in 0..4 {
                    g += w(o, i) * w(o, j);
                }
                acc += g * xs[j];
            }
            assert!((acc - back.get(i)).norm() < 1e-10);
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut r = rng();
        let layer = ComplexLinear::gaussian(3, 5, 5, &mut r);
        let x = random_tensor(vec![2, 5], &mut r);
        let c = random_tensor(vec![2, 3], &mut r);
        let (grad, gx) = layer.backward(&x, &c).unwrap();

        let mut f = |wr: &[f64]| {
            let mut l = layer.clone();
            l.wr.copy_from_slice(wr);
            probe(&l.forward(&x).unwrap(), &c)
        };
        assert_grad(&grad.wr, &fd_vec(&mut f, &layer.wr));
        let mut f = |wi: &[f64]| {
            let mut l = layer.clone();
            l.wi.copy_from_slice(wi);
            probe(&l.forward(&x).unwrap(), &c)
        };
        assert_grad(&grad.wi, &fd_vec(&mut f, &layer.wi));
        let mut f = |xr: &[f64]| {
            let mut xx = x.clone();
            xx.re.copy_from_slice(xr);
            probe(&layer.forward(&xx).unwrap(), &c)
        };
        assert_grad(&gx.re, &fd_vec(&mut f, &x.re));
        let mut f = |xi: &[f64]| {
            let mut xx = x.clone();
            xx.im.copy_from_slice(xi);
            probe(&layer.forward(&xx).unwrap(), &c)
        };
        assert_grad(&gx.im, &fd_vec(&mut f, &x.im));
    }

    #[test]
    fn transposed_gradients_match_finite_differences() {
        let mut r = rng();
        let layer = ComplexLinear::gaussian(3, 5, 3, &mut r);
        let x = random_tensor(vec![2, 3], &mut r);
        let c = random_tensor(vec![2, 5], &mut r);
        let (grad, gx) = layer.backward_transposed(&x, &c).unwrap();

        let mut f = |wr: &[f64]| {
            let mut l = layer.clone();
            l.wr.copy_from_slice(wr);
            probe(&l.forward_transposed(&x).unwrap(), &c)
        };
        assert_grad(&grad.wr, &fd_vec(&mut f, &layer.wr));
        let mut f = |wi: &[f64]| {
            let mut l = layer.clone();
            l.wi.copy_from_slice(wi);
            probe(&l.forward_transposed(&x).unwrap(), &c)
        };
        assert_grad(&grad.wi, &fd_vec(&mut f, &layer.wi));
        let mut f = |xr: &[f64]| {
            let mut xx = x.clone();
            xx.re.copy_from_slice(xr);
            probe(&layer.forward_transposed(&xx).unwrap(), &c)
        };
        assert_grad(&gx.re, &fd_vec(&mut f, &x.re));
        let mut f = |xi: &[f64]| {
            let mut xx = x.clone();
            xx.im.copy_from_slice(xi);
            probe(&layer.forward_transposed(&xx).unwrap(), &c)
        };
        assert_grad(&gx.im, &fd_vec(&mut f, &x.im));
    }

    #[test]
    fn real_weights_give_real_gradient() {
        let mut r = rng();
        let mut layer = ComplexLinear::gaussian(3, 4, 4, &mut r);
        layer.wi.iter_mut().for_each(|v| *v = 0.0);
        let mut x = random_tensor(vec![1, 4], &mut r);
        x.im.iter_mut().for_each(|v| *v = 0.0);
        let mut c = random_tensor(vec![1, 3], &mut r);
        c.im.iter_mut().for_each(|v| *v = 0.0);
        let (grad, _) = layer.backward(&x, &c).unwrap();
        // real case: dL/dW = c xᵀ
        for o in 0..3 {
            for i in 0..4 {
                assert!((grad.wr[o * 4 + i] - c.re[o] * x.re[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn modrelu_values() {
        let z = ComplexTensor::from_complex(
            vec![4],
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.1, 0.1),
                Complex64::new(0.0, 0.0),
                Complex64::new(-3.0, 4.0),
            ],
        )
        .unwrap();
        let y = modrelu(&z, -0.25);
        assert!((y.re[0] - 0.75).abs() < 1e-15);
        assert_eq!((y.re[1], y.im[1]), (0.0, 0.0));
        assert_eq!((y.re[2], y.im[2]), (0.0, 0.0));
        // |z| = 5 → 4.75, same phase
        assert!((y.get(3).norm() - 4.75).abs() < 1e-12);
        assert!((y.get(3).arg() - z.get(3).arg()).abs() < 1e-12);
    }

    #[test]
    fn cardioid_values() {
        let z = ComplexTensor::from_complex(
            vec![4],
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(-2.0, 0.0),
                Complex64::new(0.0, 3.0),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let y = leaky_cardioid(&z, 0.5);
        assert!((y.re[0] - 2.5).abs() < 1e-15);
        assert!((y.re[1] + 0.5).abs() < 1e-15);
        let y0 = leaky_cardioid(&z, 0.0);
        assert!((y0.im[2] - 1.5).abs() < 1e-15);
        assert_eq!(y.get(3), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn activations_preserve_phase() {
        let mut r = rng();
        let z = random_tensor(vec![200], &mut r);
        for spec in [
            ActivationSpec::ModRelu { bias: -0.25 },
            ActivationSpec::ModRelu { bias: -0.125 },
            ActivationSpec::LeakyCardioid { alpha: 0.5 },
            ActivationSpec::LeakyCardioid { alpha: 0.0 },
        ] {
            let y = spec.forward(&z);
            for i in 0..z.len() {
                let out = y.get(i);
                if out.norm() > 0.0 {
                    let d = (out.arg() - z.get(i).arg()).abs();
                    assert!(d < 1e-12 || (d - 2.0 * std::f64::consts::PI).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut r = rng();
        let z = random_tensor(vec![1, 40], &mut r);
        let c = random_tensor(vec![1, 40], &mut r);
        for spec in [
            ActivationSpec::ModRelu { bias: -0.25 },
            ActivationSpec::ModRelu { bias: 0.3 },
            ActivationSpec::LeakyCardioid { alpha: 0.5 },
            ActivationSpec::LeakyCardioid { alpha: 0.0 },
        ] {
            let g = spec.backward(&z, &c).unwrap();
            let mut f = |re: &[f64]| {
                let mut zz = z.clone();
                zz.re.copy_from_slice(re);
                probe(&spec.forward(&zz), &c)
            };
            assert_grad(&g.re, &fd_vec(&mut f, &z.re));
            let mut f = |im: &[f64]| {
                let mut zz = z.clone();
                zz.im.copy_from_slice(im);
                probe(&spec.forward(&zz), &c)
            };
            assert_grad(&g.im, &fd_vec(&mut f, &z.im));
        }
    }

    #[test]
    fn activation_kink_conventions() {
        let m = ActivationSpec::ModRelu { bias: -1.0 };
        assert_eq!(m.jacobian(1.0, 0.0), [[0.0, 0.0], [0.0, 0.0]]);
        let c = ActivationSpec::LeakyCardioid { alpha: 0.5 };
        assert_eq!(c.jacobian(0.0, 0.0), [[0.75, 0.0], [0.0, 0.75]]);
    }

    #[test]
    fn split_sigmoid_values() {
        assert_eq!(split_sigmoid_mean(&ComplexTensor::zeros(vec![5])), 0.5);
        let big = ComplexTensor::new(vec![2], vec![800.0, 900.0], vec![1e3, 750.0]).unwrap();
        assert_eq!(split_sigmoid_mean(&big), 1.0);
        let one = ComplexTensor::new(vec![1], vec![0.0], vec![1e3]).unwrap();
        assert_eq!(split_sigmoid_mean(&one), 0.75);
    }

    #[test]
    fn split_sigmoid_gradient() {
        let mut r = rng();
        let z = random_tensor(vec![2, 6], &mut r);
        let up = [0.7, -1.3];
        let g = split_sigmoid_rows_backward(&z, &up);
        let loss = |t: &ComplexTensor| -> f64 {
            split_sigmoid_rows(t)
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut f = |re: &[f64]| {
            let mut zz = z.clone();
            zz.re.copy_from_slice(re);
            loss(&zz)
        };
        assert_grad(&g.re, &fd_vec(&mut f, &z.re));
        let mut f = |im: &[f64]| {
            let mut zz = z.clone();
            zz.im.copy_from_slice(im);
            loss(&zz)
        };
        assert_grad(&g.im, &fd_vec(&mut f, &z.im));
    }

    #[test]
    fn linear_cardioid_chain_gradient() {
        let mut r = rng();
        let layer = ComplexLinear::gaussian(4, 6, 6, &mut r);
        let act = ActivationSpec::LeakyCardioid { alpha: 0.5 };
        let x = random_tensor(vec![2, 6], &mut r);
        let c = random_tensor(vec![2, 4], &mut r);
        let pre = layer.forward(&x).unwrap();
        let g_pre = act.backward(&pre, &c).unwrap();
        let (grad, _) = layer.backward(&x, &g_pre).unwrap();
        let mut f = |wr: &[f64]| {
            let mut l = layer.clone();
            l.wr.copy_from_slice(wr);
            probe(&act.forward(&l.forward(&x).unwrap()), &c)
        };
        assert_grad(&grad.wr, &fd_vec(&mut f, &layer.wr));
        let mut f = |wi: &[f64]| {
            let mut l = layer.clone();
            l.wi.copy_from_slice(wi);
            probe(&act.forward(&l.forward(&x).unwrap()), &c)
        };
        assert_grad(&grad.wi, &fd_vec(&mut f, &layer.wi));
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut state = AdamState::new(AdamConfig::gan(2e-4), &[3]);
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        for _ in 0..10 {
            state.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let lr = 2e-4;
        let mut state = AdamState::new(AdamConfig::gan(lr), &[2]);
        let mut p = vec![0.5, 0.5];
        let g = vec![0.3, -4e-8];
        state.step(&mut [&mut p], &[&g]).unwrap();
        // m = (1-β1) g, v = (1-β2) g², corrected back to g and g²: Δ = -lr g / (|g| + ε)
        let expect = |g: f64| 0.5 - lr * g / (g.abs() + 1e-7);
        assert!((p[0] - expect(0.3)).abs() < 1e-15);
        assert!((p[1] - expect(-4e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_approaches_sign_step() {
        let lr = 1e-3;
        let mut state = AdamState::new(AdamConfig::gan(lr), &[1]);
        let mut p = vec![0.0];
        let g = vec![-0.02];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            state.step(&mut [&mut p], &[&g]).unwrap();
            last = p[0] - before;
        }
        assert!((last - lr).abs() < 1e-8);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut state = AdamState::new(AdamConfig::gan(1e-3), &[2]);
        let mut p = vec![0.0; 3];
        assert!(state.step(&mut [&mut p], &[&[0.0; 3]]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let ck = Checkpoint {
            descriptor: "{\"a\":1}".into(),
            blobs: vec![NamedBlob {
                name: "enc.conv".into(),
                shape: vec![2, 3],
                re: vec![1.0, 2.0, 3.0, 4.0, 5.0, f64::MIN_POSITIVE],
                im: vec![-1.0, 0.0, 0.5, 1e300, -0.0, 7.0],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert!(Checkpoint::read_from(&b"NOPE"[..]).is_err());
    }
}
