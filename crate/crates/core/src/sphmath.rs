//! Special functions and quadrature behind the piston and ambient-field formulas.
//!
//! Conventions:
//! - `P_l^m` carries the Condon–Shortley phase `(-1)^m`.
//! - `Y_l^m` is the fully orthonormal complex harmonic,
//!   `Y_l^m = N_lm P_l^m(cos θ) e^{imφ}` with `Y_l^{-m} = (-1)^m (Y_l^m)*`.
//! - `h_l^{(2)} = j_l - i y_l` (outgoing under `exp(iωt)`), `h_l^{(1)} = j_l + i y_l`.
//!
//! Coefficient tables over `(l, m)` use the flat index `l² + l + m`, see [`lm_index`].

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Degree used for every simulated expansion.
pub const L_MAX: usize = 15;

/// Default Gauss–Legendre order for piston-spectrum integrals.
pub const DEFAULT_QUADRATURE_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DegreeOrder {
    pub l: usize,
    pub m: i64,
}

impl DegreeOrder {
    pub fn new(l: usize, m: i64) -> Result<Self> {
        if m.unsigned_abs() as usize > l {
            return Err(Error::domain(format!("order {m} exceeds degree {l}")));
        }
        Ok(Self { l, m })
    }

    pub fn index(self) -> usize {
        lm_index(self.l, self.m)
    }
}

/// Flat index of `(l, m)` in a coefficient table, `l² + l + m`.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of `(l, m)` pairs with `l <= l_max`.
#[inline]
pub fn lm_count(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Associated Legendre function `P_l^m(x)` for `0 <= m <= l`, Condon–Shortley phase included.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return Err(Error::domain(format!("order {m} exceeds degree {l}")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("argument {x} outside [-1, 1]")));
    }
    Ok(assoc_legendre_unchecked(l, m, x))
}

fn assoc_legendre_unchecked(l: usize, m: usize, x: f64) -> f64 {
    // P_m^m = (-1)^m (2m-1)!! (1-x²)^{m/2}
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= -fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Legendre polynomial `P_l(x)`.
pub fn legendre(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut p0, mut p1) = (1.0, x);
            for n in 2..=l {
                let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// `sqrt((2l+1)/(4π) · (l-m)!/(l+m)!)` for `m >= 0`.
fn sh_norm(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for j in (l - m + 1)..=(l + m) {
        ratio /= j as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Orthonormal complex spherical harmonic `Y_l^m(θ, φ)`.
pub fn spherical_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    DegreeOrder::new(l, m)?;
    let am = m.unsigned_abs() as usize;
    let p = assoc_legendre_unchecked(l, am, theta.cos().clamp(-1.0, 1.0));
    let y = Complex64::from_polar(sh_norm(l, am) * p, am as f64 * phi);
    if m < 0 {
        let sign = if am % 2 == 0 { 1.0 } else { -1.0 };
        Ok(y.conj() * sign)
    } else {
        Ok(y)
    }
}

/// All `Y_l^m(θ, φ)` with `l <= l_max`, indexed by [`lm_index`].
pub fn spherical_harmonic_table(l_max: usize, theta: f64, phi: f64) -> Vec<Complex64> {
    let x = theta.cos().clamp(-1.0, 1.0);
    let mut out = vec![Complex64::new(0.0, 0.0); lm_count(l_max)];
    for m in 0..=l_max {
        let phase = Complex64::from_polar(1.0, m as f64 * phi);
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        for l in m..=l_max {
            let y = phase * (sh_norm(l, m) * assoc_legendre_unchecked(l, m, x));
            out[lm_index(l, m as i64)] = y;
            if m > 0 {
                out[lm_index(l, -(m as i64))] = y.conj() * sign;
            }
        }
    }
    out
}

fn check_positive(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "argument {x} must be positive and finite"
        )))
    }
}

/// Spherical Bessel functions `j_0(x) ..= j_{l_max}(x)` for `x > 0`.
///
/// Upward recurrence when `x > l_max`, Miller's downward recurrence otherwise.
pub fn spherical_bessel_j(l_max: usize, x: f64) -> Result<Vec<f64>> {
    check_positive(x)?;
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    let mut out = vec![0.0; l_max + 1];
    out[0] = j0;
    if l_max == 0 {
        return Ok(out);
    }
    out[1] = j1;
    if x > l_max as f64 {
        for l in 1..l_max {
            out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
        }
        return Ok(out);
    }

    let start = l_max + x as usize + 40;
    let mut f_next = 0.0;
    let mut f = 1e-30;
    let mut trial = vec![0.0; l_max + 1];
    for n in (1..=start).rev() {
        let f_prev = (2 * n + 1) as f64 / x * f - f_next;
        f_next = f;
        f = f_prev;
        if n - 1 <= l_max {
            trial[n - 1] = f;
        }
        if f.abs() > 1e200 {
            f *= 1e-200;
            f_next *= 1e-200;
            for t in trial.iter_mut() {
                *t *= 1e-200;
            }
        }
    }
    // Least-squares scale against the closed forms of j_0 and j_1; robust near zeros of either.
    let norm = trial[0].abs().max(trial[1].abs());
    let (a, b) = (trial[0] / norm, trial[1] / norm);
    let scale = (j0 * a + j1 * b) / (a * a + b * b) / norm;
    for (o, t) in out.iter_mut().zip(&trial) {
        *o = t * scale;
    }
    Ok(out)
}

/// Spherical Bessel functions of the second kind `y_0(x) ..= y_{l_max}(x)` for `x > 0`.
pub fn spherical_bessel_y(l_max: usize, x: f64) -> Result<Vec<f64>> {
    check_positive(x)?;
    let (s, c) = x.sin_cos();
    let mut out = vec![0.0; l_max + 1];
    out[0] = -c / x;
    if l_max >= 1 {
        out[1] = -c / (x * x) - s / x;
    }
    for l in 1..l_max {
        out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
    }
    Ok(out)
}

/// `h_l^{(2)}(x)` for `l = 0 ..= l_max`.
pub fn spherical_hankel2_table(l_max: usize, x: f64) -> Result<Vec<Complex64>> {
    let j = spherical_bessel_j(l_max, x)?;
    let y = spherical_bessel_y(l_max, x)?;
    Ok(j.iter()
        .zip(&y)
        .map(|(&j, &y)| Complex64::new(j, -y))
        .collect())
}

/// `h_l^{(1)}(x)` for `l = 0 ..= l_max`.
pub fn spherical_hankel1_table(l_max: usize, x: f64) -> Result<Vec<Complex64>> {
    let j = spherical_bessel_j(l_max, x)?;
    let y = spherical_bessel_y(l_max, x)?;
    Ok(j.iter()
        .zip(&y)
        .map(|(&j, &y)| Complex64::new(j, y))
        .collect())
}

pub fn spherical_hankel2(l: usize, x: f64) -> Result<Complex64> {
    Ok(spherical_hankel2_table(l, x)?[l])
}

pub fn spherical_hankel1(l: usize, x: f64) -> Result<Complex64> {
    Ok(spherical_hankel1_table(l, x)?[l])
}

/// Derivatives `h_l^{(2)'}(x)` for `l = 0 ..= l_max`.
///
/// `h_0' = -h_1`, `h_l' = h_{l-1} - (l+1)/x · h_l`.
pub fn spherical_hankel2_deriv_table(l_max: usize, x: f64) -> Result<Vec<Complex64>> {
    let h = spherical_hankel2_table(l_max.max(1), x)?;
    let mut out = Vec::with_capacity(l_max + 1);
    out.push(-h[1]);
    for l in 1..=l_max {
        out.push(h[l - 1] - h[l] * ((l + 1) as f64 / x));
    }
    Ok(out)
}

pub fn spherical_hankel2_deriv(l: usize, x: f64) -> Result<Complex64> {
    Ok(spherical_hankel2_deriv_table(l, x)?[l])
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Integral over `[a, b]` by affine mapping of the nodes.
    pub fn integrate_on<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        half * self.integrate(|t| f(mid + half * t))
    }
}

/// Nodes and weights of the `order`-point Gauss–Legendre rule.
pub fn gauss_legendre(order: usize) -> Result<QuadratureRule> {
    if order == 0 {
        return Err(Error::domain("quadrature order must be at least 1"));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        order,
    })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `∫_a^1 P_l(x) dx` in closed form.
pub fn legendre_band_integral(l: usize, a: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&a) {
        return Err(Error::domain(format!("lower limit {a} outside [-1, 1]")));
    }
    if l == 0 {
        return Ok(1.0 - a);
    }
    Ok((legendre(l - 1, a) - legendre(l + 1, a)) / (2 * l + 1) as f64)
}
