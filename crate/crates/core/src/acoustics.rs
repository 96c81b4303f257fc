//! Random acoustic scenes of smooth spherical pistons and their time-harmonic
//! pressures at a spherical microphone array.
//!
//! A scene holds three pistons on the `z = 0` plane, each with its own image-source
//! reflection plane and Gaussian spectral weight, plus an incoming ambient field of
//! degree 15. Pressures are evaluated per frequency bin from the surface-velocity
//! spectrum of every piston, rotated to the piston axis.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sphmath::{
    gauss_legendre, legendre, legendre_band_integral, lm_count, lm_index, spherical_bessel_j,
    spherical_hankel1_table, spherical_hankel2_deriv_table, spherical_hankel2_table,
    spherical_harmonic_table, QuadratureRule, DEFAULT_QUADRATURE_ORDER, L_MAX,
};

pub type Vec3 = Vector3<f64>;

/// Frequency bin spacing, 192 kHz / 1024.
pub const DELTA_F: f64 = 192_000.0 / 1024.0;
/// Side length of the cube holding the scene, meters.
pub const SCENE_EDGE: f64 = 2.56;
/// Distance of the array center above the source plane, meters.
pub const ARRAY_DISTANCE: f64 = 2.56;
pub const ARRAY_DIAMETER: f64 = 0.35;
pub const PAPER_MICS: usize = 48;
pub const PAPER_BINS: usize = 16;
pub const SOURCES_PER_MODEL: usize = 3;
/// Reference for sound velocity levels, m/s.
pub const VELOCITY_REFERENCE: f64 = 5e-8;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Speed of sound and air density at temperature `celsius`.
pub fn environment(celsius: f64) -> Result<(f64, f64)> {
    if !(celsius > -273.15) {
        return Err(Error::domain(format!(
            "temperature {celsius} °C is at or below absolute zero"
        )));
    }
    let kelvin = celsius + 273.15;
    let c = 331.3 * (1.0 + celsius / 273.15).sqrt();
    let rho0 = 101_325.0 / (287.058 * kelvin);
    Ok((c, rho0))
}

/// Gaussian spectral distribution `g(f)` of a source.
pub fn spectral_weight(f: f64, f_c: f64, f_w: f64) -> Result<f64> {
    if !(f_w > 0.0) {
        return Err(Error::domain(format!(
            "spectral width {f_w} must be positive"
        )));
    }
    let d = f - f_c;
    Ok((-0.5 * d * d / (f_w * f_w)).exp())
}

fn check_aperture(alpha: f64, max: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= max {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "aperture {alpha} outside (0, {max}]"
        )))
    }
}

/// Velocity profile `ŵ^α(cos θ)` of the smooth piston.
pub fn smooth_piston_profile(alpha: f64, velocity: f64, x: f64) -> f64 {
    if alpha <= PI {
        let width = 1.0 - (0.5 * alpha).cos();
        let t = (1.0 - x) / width;
        velocity * (-t * t).exp()
    } else {
        let base = smooth_piston_profile(PI, velocity, x);
        (2.0 * PI - alpha) / PI * base + (alpha - PI) / PI * velocity
    }
}

/// m = 0 surface-velocity spectrum `w_{l0}`, `l = 0 ..= l_max`, of a smooth piston.
pub fn smooth_piston_spectrum(alpha: f64, velocity: f64, l_max: usize) -> Result<Vec<f64>> {
    let rule = gauss_legendre(DEFAULT_QUADRATURE_ORDER)?;
    smooth_piston_spectrum_with(&rule, alpha, velocity, l_max)
}

pub fn smooth_piston_spectrum_with(
    rule: &QuadratureRule,
    alpha: f64,
    velocity: f64,
    l_max: usize,
) -> Result<Vec<f64>> {
    check_aperture(alpha, 2.0 * PI)?;
    let mut out = vec![0.0; l_max + 1];
    if alpha == 2.0 * PI {
        // constant profile: only the monopole term survives
        out[0] = 2.0 * PI.sqrt() * velocity;
        return Ok(out);
    }
    let profile: Vec<f64> = rule
        .nodes
        .iter()
        .map(|&x| smooth_piston_profile(alpha, velocity, x))
        .collect();
    for (l, o) in out.iter_mut().enumerate() {
        let integral: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .zip(&profile)
            .map(|((&x, &w), &p)| w * legendre(l, x) * p)
            .sum();
        *o = ((2 * l + 1) as f64 * PI).sqrt() * integral;
    }
    Ok(out)
}

/// m = 0 spectrum `v_{l0}` of a sharp spherical cap piston.
pub fn cap_piston_spectrum(alpha: f64, velocity: f64, l_max: usize) -> Result<Vec<f64>> {
    check_aperture(alpha, PI)?;
    let a = (0.5 * alpha).cos().clamp(-1.0, 1.0);
    (0..=l_max)
        .map(|l| Ok(velocity * ((2 * l + 1) as f64 * PI).sqrt() * legendre_band_integral(l, a)?))
        .collect()
}

/// Rotates an axisymmetric (m = 0) spectrum so its axis points along `(θ̃, φ̃)`.
///
/// Output is indexed by [`lm_index`].
pub fn rotate_spectrum(coeffs: &[f64], theta_t: f64, phi_t: f64) -> Vec<Complex64> {
    let l_max = coeffs.len().saturating_sub(1);
    let y = spherical_harmonic_table(l_max, theta_t, phi_t);
    let mut out = vec![Complex64::new(0.0, 0.0); lm_count(l_max)];
    for (l, &v) in coeffs.iter().enumerate() {
        let scale = (4.0 * PI / (2 * l + 1) as f64).sqrt() * v;
        for m in -(l as i64)..=(l as i64) {
            let idx = lm_index(l, m);
            out[idx] = y[idx].conj() * scale;
        }
    }
    out
}

fn l_max_of(count: usize) -> Result<usize> {
    let l = (count as f64).sqrt().round() as usize;
    if l == 0 || l * l != count {
        return Err(Error::shape("(l_max+1)² coefficients", count));
    }
    Ok(l - 1)
}

/// Spherical coordinates `(r, θ, φ)` of `p`.
pub fn to_spherical(p: &Vec3) -> (f64, f64, f64) {
    let r = p.norm();
    if r == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let theta = (p.z / r).clamp(-1.0, 1.0).acos();
    let phi = p.y.atan2(p.x);
    (r, theta, phi)
}

/// Pressure radiated by a rigid-sphere source with rotated velocity spectrum `spectrum`
/// at `point`, given relative to the sphere center.
pub fn radiated_pressure(
    spectrum: &[Complex64],
    r0: f64,
    k: f64,
    rho0: f64,
    c: f64,
    point: &Vec3,
) -> Result<Complex64> {
    let l_max = l_max_of(spectrum.len())?;
    let (r, theta, phi) = to_spherical(point);
    if r <= r0 {
        return Err(Error::domain(format!(
            "evaluation radius {r} not outside source radius {r0}"
        )));
    }
    if !(k > 0.0) {
        return Err(Error::domain(format!("wavenumber {k} must be positive")));
    }
    let y = spherical_harmonic_table(l_max, theta, phi);
    let ratio = radial_ratios(l_max, k, r, r0)?;
    Ok(sum_pressure(spectrum, &y, &ratio, rho0 * c))
}

fn radial_ratios(l_max: usize, k: f64, r: f64, r0: f64) -> Result<Vec<Complex64>> {
    let h = spherical_hankel2_table(l_max, k * r)?;
    let hd = spherical_hankel2_deriv_table(l_max, k * r0)?;
    Ok(h.iter().zip(&hd).map(|(a, b)| a / b).collect())
}

fn sum_pressure(
    spectrum: &[Complex64],
    y: &[Complex64],
    ratio: &[Complex64],
    impedance: f64,
) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for (l, rl) in ratio.iter().enumerate() {
        let mut inner = Complex64::new(0.0, 0.0);
        for m in -(l as i64)..=(l as i64) {
            let idx = lm_index(l, m);
            inner += spectrum[idx] * y[idx];
        }
        total += rl * inner;
    }
    -I * impedance * total
}

/// Radial basis of the ambient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmbientBasis {
    /// `h_l^{(1)}(kr)`, incoming under `exp(iωt)`.
    #[default]
    Incoming,
    /// `j_l(kr)`, regular at the origin.
    Regular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbientField {
    pub l_max: usize,
    /// `a_{lm}` indexed by [`lm_index`].
    pub coefficients: Vec<Complex64>,
    /// `u0`, in pascal.
    pub amplitude_bound: f64,
}

impl AmbientField {
    pub fn zero(l_max: usize) -> Self {
        Self {
            l_max,
            coefficients: vec![Complex64::new(0.0, 0.0); lm_count(l_max)],
            amplitude_bound: 0.0,
        }
    }

    /// Magnitude bound `u(l)` for the coefficients of degree `l`.
    pub fn bound(&self, l: usize) -> f64 {
        ambient_bound(self.amplitude_bound, self.l_max, l)
    }
}

/// `u(l) = u0 · exp(-(L+1)·((l+1)² - 1)/((L+1)² - 1))`.
pub fn ambient_bound(u0: f64, l_max: usize, l: usize) -> f64 {
    let lp = (l_max + 1) as f64;
    let num = ((l + 1) * (l + 1)) as f64 - 1.0;
    let den = lp * lp - 1.0;
    if den == 0.0 {
        return u0;
    }
    u0 * (-lp * num / den).exp()
}

/// Ambient pressure at `point` (relative to the origin).
pub fn ambient_pressure(field: &AmbientField, k: f64, point: &Vec3) -> Result<Complex64> {
    ambient_pressure_with(field, k, point, AmbientBasis::Incoming)
}

pub fn ambient_pressure_with(
    field: &AmbientField,
    k: f64,
    point: &Vec3,
    basis: AmbientBasis,
) -> Result<Complex64> {
    let (r, theta, phi) = to_spherical(point);
    if r == 0.0 {
        return Err(Error::domain("ambient field evaluated at the origin"));
    }
    let y = spherical_harmonic_table(field.l_max, theta, phi);
    let radial: Vec<Complex64> = match basis {
        AmbientBasis::Incoming => spherical_hankel1_table(field.l_max, k * r)?,
        AmbientBasis::Regular => spherical_bessel_j(field.l_max, k * r)?
            .into_iter()
            .map(|j| Complex64::new(j, 0.0))
            .collect(),
    };
    let mut total = Complex64::new(0.0, 0.0);
    for (l, rl) in radial.iter().enumerate() {
        let mut inner = Complex64::new(0.0, 0.0);
        for m in -(l as i64)..=(l as i64) {
            let idx = lm_index(l, m);
            inner += field.coefficients[idx] * y[idx];
        }
        total += rl * inner;
    }
    Ok(total)
}

/// Specular reflector `{x : normal·x = offset}` with a real reflection factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionPlane {
    pub normal: Vec3,
    pub offset: f64,
    pub coefficient: f64,
}

impl ReflectionPlane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn mirror_point(&self, p: &Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    pub fn mirror_direction(&self, d: &Vec3) -> Vec3 {
        d - self.normal * (2.0 * self.normal.dot(d))
    }

    /// A specular path exists only when both points lie strictly on the same side.
    pub fn is_realizable(&self, source: &Vec3, receiver: &Vec3) -> bool {
        let a = self.signed_distance(source);
        let b = self.signed_distance(receiver);
        a * b > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PistonSource {
    pub position: Vec3,
    /// Axis direction `(θ̃, φ̃)`.
    pub orientation: (f64, f64),
    pub aperture: f64,
    pub radius: f64,
    pub velocity_amplitude: f64,
    pub spectral_center: f64,
    pub spectral_width: f64,
    pub reflection: ReflectionPlane,
}

impl PistonSource {
    pub fn axis(&self) -> Vec3 {
        direction(self.orientation.0, self.orientation.1)
    }

    pub fn as_monopole(&self) -> Self {
        Self {
            aperture: 2.0 * PI,
            ..self.clone()
        }
    }

    /// Image of this source in its own reflection plane.
    pub fn image(&self) -> Self {
        let plane = &self.reflection;
        let axis = plane.mirror_direction(&self.axis());
        let (_, theta, phi) = to_spherical(&axis);
        Self {
            position: plane.mirror_point(&self.position),
            orientation: (theta, phi),
            ..self.clone()
        }
    }
}

pub fn direction(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub index: u64,
    pub seed: u64,
    pub sources: Vec<PistonSource>,
    pub temperature: f64,
    /// Model sound velocity level, dB re [`VELOCITY_REFERENCE`].
    pub level: f64,
    pub ambient: AmbientField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub center: Vec3,
    pub radius: f64,
    pub positions: Vec<Vec3>,
}

impl ArrayGeometry {
    /// Fibonacci-sphere layout of `count` microphones.
    pub fn fibonacci(count: usize, center: Vec3, radius: f64) -> Self {
        let golden = PI * (3.0 - 5f64.sqrt());
        let positions = (0..count)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * i as f64;
                center + Vec3::new(rho * phi.cos(), rho * phi.sin(), z) * radius
            })
            .collect();
        Self {
            center,
            radius,
            positions,
        }
    }

    /// Array of `count` microphones on the 0.35 m sphere at `(0, 0, 2.56)`.
    pub fn standard(count: usize) -> Self {
        Self::fibonacci(
            count,
            Vec3::new(0.0, 0.0, ARRAY_DISTANCE),
            0.5 * ARRAY_DIAMETER,
        )
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub bins: Vec<f64>,
}

impl FrequencyGrid {
    /// Bins `10·Δf ..= 25·Δf`.
    pub fn full() -> Self {
        Self::from_multiples((10..10 + PAPER_BINS as u32).collect())
    }

    /// `count` bins spread evenly over the full grid, always including both ends.
    pub fn spread(count: usize) -> Self {
        if count <= 1 {
            return Self::from_multiples(vec![10]);
        }
        let span = (PAPER_BINS - 1) as f64;
        let multiples = (0..count)
            .map(|i| 10 + (i as f64 * span / (count - 1) as f64).round() as u32)
            .collect();
        Self::from_multiples(multiples)
    }

    pub fn from_multiples(multiples: Vec<u32>) -> Self {
        Self {
            bins: multiples.into_iter().map(|m| m as f64 * DELTA_F).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SimulationVariant {
    pub directivity: bool,
    pub reflections: bool,
    pub ambient: bool,
}

impl SimulationVariant {
    pub const BASELINE: Self = Self {
        directivity: false,
        reflections: false,
        ambient: false,
    };
    pub const ALL: Self = Self {
        directivity: true,
        reflections: true,
        ambient: true,
    };

    pub fn bits(self) -> u8 {
        self.directivity as u8 | (self.reflections as u8) << 1 | (self.ambient as u8) << 2
    }

    pub fn from_bits(bits: u8) -> Self {
        Self {
            directivity: bits & 1 != 0,
            reflections: bits & 2 != 0,
            ambient: bits & 4 != 0,
        }
    }
}

/// Complex pressures, `mics × bins`, row-major by microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureMatrix {
    pub mics: usize,
    pub bins: usize,
    pub values: Vec<Complex64>,
}

impl PressureMatrix {
    pub fn zeros(mics: usize, bins: usize) -> Self {
        Self {
            mics,
            bins,
            values: vec![Complex64::new(0.0, 0.0); mics * bins],
        }
    }

    pub fn get(&self, mic: usize, bin: usize) -> Complex64 {
        self.values[mic * self.bins + bin]
    }

    pub fn at_mut(&mut self, mic: usize, bin: usize) -> &mut Complex64 {
        &mut self.values[mic * self.bins + bin]
    }

    /// Pressure vector over microphones at one bin.
    pub fn column(&self, bin: usize) -> Vec<Complex64> {
        (0..self.mics).map(|m| self.get(m, bin)).collect()
    }
}

/// Pressure evaluation with fixed truncation and quadrature.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub l_max: usize,
    pub ambient_basis: AmbientBasis,
    rule: QuadratureRule,
}

impl Default for Simulator {
    fn default() -> Self {
        Self::new(L_MAX)
    }
}

impl Simulator {
    pub fn new(l_max: usize) -> Self {
        Self {
            l_max,
            ambient_basis: AmbientBasis::Incoming,
            rule: gauss_legendre(DEFAULT_QUADRATURE_ORDER).expect("order is positive"),
        }
    }

    pub fn with_ambient_basis(mut self, basis: AmbientBasis) -> Self {
        self.ambient_basis = basis;
        self
    }

    fn source_spectrum(&self, source: &PistonSource) -> Result<Vec<Complex64>> {
        let w = smooth_piston_spectrum_with(
            &self.rule,
            source.aperture,
            source.velocity_amplitude,
            self.l_max,
        )?;
        Ok(rotate_spectrum(
            &w,
            source.orientation.0,
            source.orientation.1,
        ))
    }

    /// Adds the direct field of `source` (scaled by `scale`) at every mic and bin.
    fn accumulate_source(
        &self,
        out: &mut PressureMatrix,
        source: &PistonSource,
        scale: f64,
        array: &ArrayGeometry,
        grid: &FrequencyGrid,
        c: f64,
        rho0: f64,
    ) -> Result<()> {
        let spectrum = self.source_spectrum(source)?;
        let weights: Vec<f64> = grid
            .bins
            .iter()
            .map(|&f| spectral_weight(f, source.spectral_center, source.spectral_width))
            .collect::<Result<_>>()?;
        let derivs: Vec<Vec<Complex64>> = grid
            .bins
            .iter()
            .map(|&f| spherical_hankel2_deriv_table(self.l_max, 2.0 * PI * f / c * source.radius))
            .collect::<Result<_>>()?;
        for (mic, pos) in array.positions.iter().enumerate() {
            let rel = pos - source.position;
            let (r, theta, phi) = to_spherical(&rel);
            if r <= source.radius {
                return Err(Error::domain(format!(
                    "microphone {mic} lies inside source sphere"
                )));
            }
            let y = spherical_harmonic_table(self.l_max, theta, phi);
            for (bin, &f) in grid.bins.iter().enumerate() {
                let g = weights[bin] * scale;
                if g == 0.0 {
                    continue;
                }
                let k = 2.0 * PI * f / c;
                let h = spherical_hankel2_table(self.l_max, k * r)?;
                let ratio: Vec<Complex64> =
                    h.iter().zip(&derivs[bin]).map(|(a, b)| a / b).collect();
                *out.at_mut(mic, bin) += sum_pressure(&spectrum, &y, &ratio, rho0 * c) * g;
            }
        }
        Ok(())
    }

    /// Image-source contribution of `source`'s reflection plane. Zero when no specular
    /// path connects the source and the array center.
    fn accumulate_reflection(
        &self,
        out: &mut PressureMatrix,
        source: &PistonSource,
        array: &ArrayGeometry,
        grid: &FrequencyGrid,
        c: f64,
        rho0: f64,
    ) -> Result<()> {
        let plane = &source.reflection;
        if plane.coefficient == 0.0 || !plane.is_realizable(&source.position, &array.center) {
            return Ok(());
        }
        self.accumulate_source(
            out,
            &source.image(),
            plane.coefficient,
            array,
            grid,
            c,
            rho0,
        )
    }

    /// Pressure matrix of `model` at `array` over `grid`.
    pub fn simulate(
        &self,
        model: &AcousticModel,
        array: &ArrayGeometry,
        grid: &FrequencyGrid,
        variant: SimulationVariant,
    ) -> Result<PressureMatrix> {
        let (c, rho0) = environment(model.temperature)?;
        let mut out = PressureMatrix::zeros(array.len(), grid.len());
        for source in &model.sources {
            let source = if variant.directivity {
                source.clone()
            } else {
                source.as_monopole()
            };
            self.accumulate_source(&mut out, &source, 1.0, array, grid, c, rho0)?;
            if variant.reflections {
                self.accumulate_reflection(&mut out, &source, array, grid, c, rho0)?;
            }
        }
        if variant.ambient {
            for (mic, pos) in array.positions.iter().enumerate() {
                for (bin, &f) in grid.bins.iter().enumerate() {
                    let k = 2.0 * PI * f / c;
                    *out.at_mut(mic, bin) +=
                        ambient_pressure_with(&model.ambient, k, pos, self.ambient_basis)?;
                }
            }
        }
        Ok(out)
    }

    /// Direct field of a single source, without spectral weighting.
    pub fn source_pressure(
        &self,
        source: &PistonSource,
        k: f64,
        rho0: f64,
        c: f64,
        point: &Vec3,
    ) -> Result<Complex64> {
        let spectrum = self.source_spectrum(source)?;
        radiated_pressure(
            &spectrum,
            source.radius,
            k,
            rho0,
            c,
            &(point - source.position),
        )
    }

    /// Image-source field of `source` at `point`, without spectral weighting.
    pub fn reflected_pressure(
        &self,
        source: &PistonSource,
        k: f64,
        rho0: f64,
        c: f64,
        point: &Vec3,
    ) -> Result<Complex64> {
        let plane = &source.reflection;
        if plane.coefficient == 0.0 || !plane.is_realizable(&source.position, point) {
            return Ok(Complex64::new(0.0, 0.0));
        }
        Ok(self.source_pressure(&source.image(), k, rho0, c, point)? * plane.coefficient)
    }
}

/// Pressures of `model` with the default simulator (degree 15, incoming ambient).
pub fn simulate_pressures(
    model: &AcousticModel,
    array: &ArrayGeometry,
    grid: &FrequencyGrid,
    variant: SimulationVariant,
) -> Result<PressureMatrix> {
    Simulator::default().simulate(model, array, grid, variant)
}

/// Image-source field of `source` at `point` with the default simulator.
pub fn reflected_pressure(
    source: &PistonSource,
    k: f64,
    rho0: f64,
    c: f64,
    point: &Vec3,
) -> Result<Complex64> {
    Simulator::default().reflected_pressure(source, k, rho0, c, point)
}

// ---------------------------------------------------------------------------
// Sampling

mod tag {
    pub const SCENE: u64 = 1;
    pub const SOURCE: u64 = 16;
    pub const AMBIENT: u64 = 2;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream keyed by `(seed, index, tag)`; independent of any other draw.
pub fn derived_rng(seed: u64, index: u64, tag: u64) -> ChaCha8Rng {
    let mut state = seed;
    let _ = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let _ = splitmix64(&mut state);
    state ^= tag.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn uniform_direction<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    ((1.0 - 2.0 * u).clamp(-1.0, 1.0).acos(), 2.0 * PI * v)
}

/// Deterministic scene number `index` of the model set keyed by `seed`.
pub fn sample_model(seed: u64, index: u64) -> AcousticModel {
    let mut rng = derived_rng(seed, index, tag::SCENE);
    let level = rng.random_range(35.0..=85.0);
    let temperature = Normal::new(20.0, 2.5)
        .expect("finite parameters")
        .sample(&mut rng);
    let ambient_level = level - 10.0 - rng.random_range(0.0..=15.0);
    let half = 0.5 * SCENE_EDGE;
    let sources = (0..SOURCES_PER_MODEL as u64)
        .map(|s| {
            let mut rng = derived_rng(seed, index, tag::SOURCE + s);
            let position = Vec3::new(
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
                0.0,
            );
            let orientation = uniform_direction(&mut rng);
            let aperture = rng.random_range(1.5 * PI..=2.0 * PI);
            let radius = rng.random_range(0.1..=0.3);
            let source_level = level - rng.random_range(0.0..=15.0);
            let spectral_center = rng.random_range(4.0 * DELTA_F..=35.0 * DELTA_F);
            let spectral_width = rng.random_range(0.5 * DELTA_F..=64.0 * DELTA_F);
            let (nt, np) = uniform_direction(&mut rng);
            let reflection = ReflectionPlane {
                normal: direction(nt, np),
                offset: rng.random_range(-3.0..=3.0),
                coefficient: db_to_linear(rng.random_range(-15.0..=-3.0)),
            };
            PistonSource {
                position,
                orientation,
                aperture,
                radius,
                velocity_amplitude: VELOCITY_REFERENCE * db_to_linear(source_level),
                spectral_center,
                spectral_width,
                reflection,
            }
        })
        .collect();

    let (c, rho0) = environment(temperature).expect("temperature above absolute zero");
    let u0 = rho0 * c * VELOCITY_REFERENCE * db_to_linear(ambient_level);
    let mut rng = derived_rng(seed, index, tag::AMBIENT);
    let mut coefficients = vec![Complex64::new(0.0, 0.0); lm_count(L_MAX)];
    for l in 0..=L_MAX {
        let bound = ambient_bound(u0, L_MAX, l);
        for m in -(l as i64)..=(l as i64) {
            let magnitude = rng.random_range(0.0..=1.0) * bound;
            let phase = rng.random_range(0.0..2.0 * PI);
            coefficients[lm_index(l, m)] = Complex64::from_polar(magnitude, phase);
        }
    }
    AcousticModel {
        index,
        seed,
        sources,
        temperature,
        level,
        ambient: AmbientField {
            l_max: L_MAX,
            coefficients,
            amplitude_bound: u0,
        },
    }
}

// ---------------------------------------------------------------------------
// Model-set text format

pub const MODEL_SET_HEADER: &str = "# csmgan model-set v1";

/// Writes models as whitespace-separated records.
///
/// ```text
/// model <index> <seed> <temperature> <level> <u0> <l_max> <n_sources>
/// source <x> <y> <z> <theta> <phi> <aperture> <radius> <velocity> <f_c> <f_w> <nx> <ny> <nz> <offset> <coefficient>
/// ambient <re a_00> <im a_00> <re a_1-1> ...
/// ```
///
/// Floats use shortest round-trip formatting, so reading back is lossless.
pub fn write_model_set<W: Write>(mut out: W, models: &[AcousticModel]) -> std::io::Result<()> {
    writeln!(out, "{MODEL_SET_HEADER}")?;
    writeln!(
        out,
        "# model index seed temperature_c level_db ambient_u0_pa ambient_lmax n_sources"
    )?;
    writeln!(
        out,
        "# source x y z axis_theta axis_phi aperture radius velocity f_c f_w plane_nx plane_ny plane_nz plane_offset plane_coefficient"
    )?;
    writeln!(out, "# ambient re/im pairs in l² + l + m order")?;
    for m in models {
        writeln!(
            out,
            "model {} {} {} {} {} {} {}",
            m.index,
            m.seed,
            m.temperature,
            m.level,
            m.ambient.amplitude_bound,
            m.ambient.l_max,
            m.sources.len()
        )?;
        for s in &m.sources {
            let p = &s.reflection;
            writeln!(
                out,
                "source {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
                s.position.x,
                s.position.y,
                s.position.z,
                s.orientation.0,
                s.orientation.1,
                s.aperture,
                s.radius,
                s.velocity_amplitude,
                s.spectral_center,
                s.spectral_width,
                p.normal.x,
                p.normal.y,
                p.normal.z,
                p.offset,
                p.coefficient
            )?;
        }
        let mut line = String::from("ambient");
        for a in &m.ambient.coefficients {
            let _ = write!(line, " {} {}", a.re, a.im);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn parse_fields<T: std::str::FromStr>(fields: &[&str], lineno: usize) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<T>().map_err(|_| {
                Error::format("model set", format!("line {lineno}: cannot parse `{f}`"))
            })
        })
        .collect()
}

pub fn read_model_set<R: BufRead>(input: R) -> Result<Vec<AcousticModel>> {
    let mut models: Vec<AcousticModel> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::format("model set", e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap_or_default();
        let fields: Vec<&str> = parts.collect();
        let err = |msg: &str| Error::format("model set", format!("line {lineno}: {msg}"));
        match kind {
            "model" => {
                if fields.len() != 7 {
                    return Err(err("model record needs 7 fields"));
                }
                let ints: Vec<u64> = parse_fields(&[fields[0], fields[1]], lineno)?;
                let floats: Vec<f64> = parse_fields(&fields[2..5], lineno)?;
                let l_max: usize = parse_fields(&[fields[5]], lineno)?[0];
                let n_sources: usize = parse_fields(&[fields[6]], lineno)?[0];
                let mut ambient = AmbientField::zero(l_max);
                ambient.amplitude_bound = floats[2];
                models.push(AcousticModel {
                    index: ints[0],
                    seed: ints[1],
                    sources: Vec::with_capacity(n_sources),
                    temperature: floats[0],
                    level: floats[1],
                    ambient,
                });
            }
            "source" => {
                let model = models
                    .last_mut()
                    .ok_or_else(|| err("source before any model"))?;
                let v: Vec<f64> = parse_fields(&fields, lineno)?;
                if v.len() != 15 {
                    return Err(err("source record needs 15 fields"));
                }
                model.sources.push(PistonSource {
                    position: Vec3::new(v[0], v[1], v[2]),
                    orientation: (v[3], v[4]),
                    aperture: v[5],
                    radius: v[6],
                    velocity_amplitude: v[7],
                    spectral_center: v[8],
                    spectral_width: v[9],
                    reflection: ReflectionPlane {
                        normal: Vec3::new(v[10], v[11], v[12]),
                        offset: v[13],
                        coefficient: v[14],
                    },
                });
            }
            "ambient" => {
                let model = models
                    .last_mut()
                    .ok_or_else(|| err("ambient before any model"))?;
                let v: Vec<f64> = parse_fields(&fields, lineno)?;
                if v.len() != 2 * model.ambient.coefficients.len() {
                    return Err(err("ambient record has wrong coefficient count"));
                }
                for (a, pair) in model.ambient.coefficients.iter_mut().zip(v.chunks_exact(2)) {
                    *a = Complex64::new(pair[0], pair[1]);
                }
            }
            other => return Err(err(&format!("unknown record kind `{other}`"))),
        }
    }
    Ok(models)
}
