//! Encoder/decoder generator with a Hermitian output map, a one-layer
//! discriminator, the adversarial plus transformation losses, and training.

use std::fs::OpenOptions;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::derived_rng;
use crate::csm::{csm_distance_grad, hermitianize, hermitianize_raw, CsmTensor, SliceMetricParams};
use crate::cxnn::{
    split_sigmoid_rows, split_sigmoid_rows_backward, ActivationSpec, AdamConfig, AdamState,
    Checkpoint, ComplexLinear, ComplexTensor, LinearGrad, NamedBlob,
};
use crate::error::{Error, Result};

/// Clamp applied to discriminator outputs inside the logarithms.
pub const LOG_CLAMP: f64 = 1e-7;

const CHECKPOINT_KIND: &str = "csmgan-gan";
const EVAL_CHUNK: usize = 32;

mod tag {
    pub const INIT_GEN: u64 = 101;
    pub const INIT_DIS: u64 = 102;
    pub const EPOCH: u64 = 103;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanArchitecture {
    pub n_gen: usize,
    pub n_dis: usize,
    pub n_den: usize,
    pub n_lay: usize,
    pub activation: ActivationSpec,
}

impl GanArchitecture {
    /// Best grid point at full scale.
    pub fn paper_best() -> Self {
        Self {
            n_gen: 64,
            n_dis: 16,
            n_den: 512,
            n_lay: 1,
            activation: ActivationSpec::LeakyCardioid { alpha: 0.5 },
        }
    }

    pub fn desk() -> Self {
        Self {
            n_gen: 16,
            n_dis: 16,
            n_den: 64,
            n_lay: 1,
            activation: ActivationSpec::LeakyCardioid { alpha: 0.5 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("n_gen", self.n_gen),
            ("n_dis", self.n_dis),
            ("n_den", self.n_den),
            ("n_lay", self.n_lay),
        ] {
            if v == 0 {
                return Err(Error::validation(
                    format!("architecture.{key}"),
                    "must be positive",
                ));
            }
        }
        match self.activation {
            ActivationSpec::LeakyCardioid { alpha } if !(alpha >= 0.0 && alpha.is_finite()) => Err(
                Error::validation("architecture.activation.alpha", "must be finite and >= 0"),
            ),
            ActivationSpec::ModRelu { bias } if !bias.is_finite() => Err(Error::validation(
                "architecture.activation.bias",
                "must be finite",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub lr_gen: f64,
    pub lr_dis: f64,
    pub noise_sigma: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Test accuracy every this many epochs (and after the last); 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lambda: 200.0,
            kappa: 0.9,
            lr_gen: 2e-5,
            lr_dis: 2e-5,
            noise_sigma: 1e-2,
            epochs: 100,
            seed: 0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("optimizer.batch_size", "must be >= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation(
                "optimizer.lambda",
                "must be finite and > 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::validation("optimizer.kappa", "must lie in [0, 1]"));
        }
        for (key, lr) in [
            ("optimizer.lr_gen", self.lr_gen),
            ("optimizer.lr_dis", self.lr_dis),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::validation(key, "must be finite and > 0"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation("noise.sigma", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn metric(&self, bins: usize) -> Result<SliceMetricParams> {
        SliceMetricParams::new(self.kappa, bins)
    }
}

/// Rows of a batch tensor `[n, d]` laid end to end.
fn concat_rows(parts: &[&ComplexTensor]) -> Result<ComplexTensor> {
    let d = parts.first().map_or(0, |t| t.row_len());
    let mut re = Vec::new();
    let mut im = Vec::new();
    let mut rows = 0;
    for t in parts {
        if t.row_len() != d {
            return Err(Error::shape(d, t.row_len()));
        }
        re.extend_from_slice(&t.re);
        im.extend_from_slice(&t.im);
        rows += t.rows();
    }
    ComplexTensor::new(vec![rows, d], re, im)
}

/// `[n, m·m·b]` batch from CSM tensors.
pub fn batch_of(items: &[&CsmTensor]) -> Result<ComplexTensor> {
    let tensors: Vec<&ComplexTensor> = items.iter().map(|c| c.tensor()).collect();
    let stacked = ComplexTensor::stack(&tensors)?;
    let d = stacked.row_len();
    stacked.reshape(vec![items.len(), d])
}

fn hermitianize_rows(t: &ComplexTensor, m: usize, b: usize) -> ComplexTensor {
    let d = t.row_len();
    let mut out = ComplexTensor::zeros(t.shape().to_vec());
    out.re
        .par_chunks_mut(d)
        .zip(out.im.par_chunks_mut(d))
        .enumerate()
        .for_each(|(s, (or, oi))| {
            hermitianize_raw(
                &t.re[s * d..(s + 1) * d],
                &t.im[s * d..(s + 1) * d],
                or,
                oi,
                m,
                b,
            );
        });
    out
}

/// Layer inputs and pre-activations of one generator pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    inputs: Vec<ComplexTensor>,
    pre: Vec<ComplexTensor>,
}

/// Full-kernel conv, `n_lay` dense layers to `n_den`, `n_lay` dense layers back
/// to `n_gen`, transposed conv, then the Hermitian part.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub layers: Vec<ComplexLinear>,
    pub activation: ActivationSpec,
    pub mics: usize,
    pub bins: usize,
}

impl Generator {
    fn widths(arch: &GanArchitecture) -> Vec<usize> {
        // conv output, encoder dense outputs, decoder dense outputs
        let mut w = vec![arch.n_gen];
        w.extend(std::iter::repeat_n(arch.n_den, arch.n_lay));
        w.extend(std::iter::repeat_n(arch.n_den, arch.n_lay - 1));
        w.push(arch.n_gen);
        w
    }

    pub fn new<R: Rng>(arch: &GanArchitecture, mics: usize, bins: usize, rng: &mut R) -> Self {
        let d = mics * mics * bins;
        let w = Self::widths(arch);
        let mut layers = vec![ComplexLinear::gaussian(arch.n_gen, d, d, rng)];
        for pair in w.windows(2) {
            layers.push(ComplexLinear::gaussian(pair[1], pair[0], pair[0], rng));
        }
        layers.push(ComplexLinear::gaussian(arch.n_gen, d, d, rng));
        Self {
            layers,
            activation: arch.activation,
            mics,
            bins,
        }
    }

    pub fn zeros(arch: &GanArchitecture, mics: usize, bins: usize) -> Self {
        let d = mics * mics * bins;
        let w = Self::widths(arch);
        let mut layers = vec![ComplexLinear::zeros(arch.n_gen, d)];
        for pair in w.windows(2) {
            layers.push(ComplexLinear::zeros(pair[1], pair[0]));
        }
        layers.push(ComplexLinear::zeros(arch.n_gen, d));
        Self {
            layers,
            activation: arch.activation,
            mics,
            bins,
        }
    }

    pub fn input_len(&self) -> usize {
        self.mics * self.mics * self.bins
    }

    pub fn layer_names(&self) -> Vec<String> {
        let n_lay = (self.layers.len() - 2) / 2;
        let mut names = vec!["enc.conv".to_string()];
        names.extend((0..n_lay).map(|i| format!("enc.dense{i}")));
        names.extend((0..n_lay).map(|i| format!("dec.dense{i}")));
        names.push("dec.conv".into());
        names
    }

    /// Shapes from input through each layer output.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        let full = vec![self.mics, self.mics, self.bins];
        let mut trace = vec![full.clone()];
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            trace.push(vec![1, 1, layer.fan_out]);
        }
        trace.push(full);
        trace
    }

    /// Number of complex weights.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn forward(&self, z: &ComplexTensor) -> Result<ComplexTensor> {
        Ok(self.forward_traced(z)?.0)
    }

    pub fn forward_traced(&self, z: &ComplexTensor) -> Result<(ComplexTensor, GeneratorTrace)> {
        if z.row_len() != self.input_len() {
            return Err(Error::shape(self.input_len(), z.row_len()));
        }
        let z = z.clone().reshape(vec![z.rows(), self.input_len()])?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = z;
        for (i, layer) in self.layers.iter().enumerate() {
            let a = if i == last {
                layer.forward_transposed(&h)?
            } else {
                layer.forward(&h)?
            };
            inputs.push(h);
            h = self.activation.forward(&a);
            pre.push(a);
        }
        let out = hermitianize_rows(&h, self.mics, self.bins);
        debug_assert!((0..out.rows()).all(|s| {
            CsmTensor::from_flat(out.row(s), self.mics, self.bins)
                .map(|c| c.is_hermitian(0.0))
                .unwrap_or(false)
        }));
        Ok((out, GeneratorTrace { inputs, pre }))
    }

    /// Parameter gradients given `∂L/∂(output)`.
    pub fn backward(
        &self,
        trace: &GeneratorTrace,
        g_out: &ComplexTensor,
    ) -> Result<Vec<LinearGrad>> {
        let last = self.layers.len() - 1;
        // the Hermitian projection is self-adjoint
        let mut g = hermitianize_rows(g_out, self.mics, self.bins);
        let mut grads = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            g = self.activation.backward(&trace.pre[i], &g)?;
            let (gw, gx) = if i == last {
                self.layers[i].backward_transposed(&trace.inputs[i], &g)?
            } else {
                self.layers[i].backward(&trace.inputs[i], &g)?
            };
            grads[i] = Some(gw);
            g = gx;
        }
        Ok(grads
            .into_iter()
            .map(|g| g.expect("every layer visited"))
            .collect())
    }

    pub fn apply(&self, c: &CsmTensor) -> Result<CsmTensor> {
        let out = self.forward(&batch_of(&[c])?)?;
        CsmTensor::from_flat(out.row(0), self.mics, self.bins)
    }

    /// Outputs for a list of inputs, evaluated in fixed chunks.
    pub fn generate(&self, xs: &[CsmTensor]) -> Result<Vec<CsmTensor>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(EVAL_CHUNK) {
            let refs: Vec<&CsmTensor> = chunk.iter().collect();
            let y = self.forward(&batch_of(&refs)?)?;
            for s in 0..y.rows() {
                out.push(CsmTensor::from_flat(y.row(s), self.mics, self.bins)?);
            }
        }
        Ok(out)
    }
}

/// Full-kernel conv, activation, split sigmoid mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub conv: ComplexLinear,
    pub activation: ActivationSpec,
}

impl Discriminator {
    pub fn new<R: Rng>(arch: &GanArchitecture, input_len: usize, rng: &mut R) -> Self {
        Self {
            conv: ComplexLinear::gaussian(arch.n_dis, input_len, input_len, rng),
            activation: arch.activation,
        }
    }

    pub fn zeros(arch: &GanArchitecture, input_len: usize) -> Self {
        Self {
            conv: ComplexLinear::zeros(arch.n_dis, input_len),
            activation: arch.activation,
        }
    }

    fn flat(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        if x.row_len() != self.conv.fan_in {
            return Err(Error::shape(self.conv.fan_in, x.row_len()));
        }
        x.clone().reshape(vec![x.rows(), self.conv.fan_in])
    }

    /// One probability per row of `x`.
    pub fn forward(&self, x: &ComplexTensor) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &ComplexTensor) -> Result<(Vec<f64>, ComplexTensor)> {
        let pre = self.conv.forward(&self.flat(x)?)?;
        let probs = split_sigmoid_rows(&self.activation.forward(&pre));
        Ok((probs, pre))
    }

    pub fn probability(&self, c: &CsmTensor) -> Result<f64> {
        Ok(self.forward(&batch_of(&[c])?)?[0])
    }

    fn pre_grad(&self, pre: &ComplexTensor, upstream: &[f64]) -> Result<ComplexTensor> {
        let post = self.activation.forward(pre);
        let g = split_sigmoid_rows_backward(&post, upstream);
        self.activation.backward(pre, &g)
    }

    /// Weight gradient for per-row upstream scalars `∂L/∂D(x_s)`.
    pub fn param_grad(
        &self,
        x: &ComplexTensor,
        pre: &ComplexTensor,
        upstream: &[f64],
    ) -> Result<LinearGrad> {
        let g = self.pre_grad(pre, upstream)?;
        Ok(self.conv.backward(&self.flat(x)?, &g)?.0)
    }

    /// Input gradient for per-row upstream scalars.
    pub fn input_grad(&self, pre: &ComplexTensor, upstream: &[f64]) -> Result<ComplexTensor> {
        let g = self.pre_grad(pre, upstream)?;
        self.conv.input_grad(&g)
    }
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
}

/// `d/dp log(clamp p)`, zero where the clamp is active.
fn dlog(p: f64) -> f64 {
    if (LOG_CLAMP..=1.0 - LOG_CLAMP).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}

/// `−mean log D(x) − mean log(1 − D(G(z)))`.
pub fn loss_discriminator(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let real = d_real.iter().map(|&p| -clamp_p(p).ln()).sum::<f64>() / d_real.len().max(1) as f64;
    let fake = d_fake
        .iter()
        .map(|&p| -(1.0 - clamp_p(p)).ln())
        .sum::<f64>()
        / d_fake.len().max(1) as f64;
    real + fake
}

/// Adversarial term plus `λ/(2N)·Σ [ε(y, G(z_x)) + ε(y, G(z_y))]`.
pub fn loss_generator(
    d_fake_x: &[f64],
    g_zx: &[CsmTensor],
    g_zy: &[CsmTensor],
    y: &[CsmTensor],
    lambda: f64,
    params: &SliceMetricParams,
) -> Result<f64> {
    let n = d_fake_x.len();
    if g_zx.len() != n || g_zy.len() != n || y.len() != n {
        return Err(Error::shape(
            n,
            format!("{} / {} / {}", g_zx.len(), g_zy.len(), y.len()),
        ));
    }
    let adv = d_fake_x.iter().map(|&p| -clamp_p(p).ln()).sum::<f64>() / n.max(1) as f64;
    let mut trafo = 0.0;
    for i in 0..n {
        trafo += crate::csm::csm_distance(&y[i], &g_zx[i], params)?
            + crate::csm::csm_distance(&y[i], &g_zy[i], params)?;
    }
    Ok(adv + lambda / (2.0 * n.max(1) as f64) * trafo)
}

/// Add per-slice complex Gaussian noise of std `sigma·‖slice‖/mics`, then take
/// the Hermitian part.
pub fn make_noisy<R: Rng>(c: &CsmTensor, sigma: f64, rng: &mut R) -> CsmTensor {
    if sigma == 0.0 {
        return hermitianize(c);
    }
    let (m, b) = (c.mics(), c.bins());
    let mut out = c.clone();
    let t = out.tensor_mut();
    for k in 0..b {
        let std = sigma * c.slice_norm(k) / m as f64;
        let comp = std * std::f64::consts::FRAC_1_SQRT_2;
        for ij in 0..m * m {
            let idx = ij * b + k;
            let nr: f64 = StandardNormal.sample(rng);
            let ni: f64 = StandardNormal.sample(rng);
            t.re[idx] += comp * nr;
            t.im[idx] += comp * ni;
        }
    }
    hermitianize(&out)
}

/// Discriminator loss and its weight gradient.
pub fn discriminator_objective(
    d: &Discriminator,
    real: &ComplexTensor,
    fake: &ComplexTensor,
) -> Result<(f64, LinearGrad)> {
    let (pr, pre_r) = d.forward_traced(real)?;
    let (pf, pre_f) = d.forward_traced(fake)?;
    let loss = loss_discriminator(&pr, &pf);
    let nr = pr.len().max(1) as f64;
    let nf = pf.len().max(1) as f64;
    let up_r: Vec<f64> = pr.iter().map(|&p| -dlog(p) / nr).collect();
    // d/dp −log(1 − p) = 1/(1 − p)
    let up_f: Vec<f64> = pf.iter().map(|&p| dlog(1.0 - p) / nf).collect();
    let mut grad = d.param_grad(real, &pre_r, &up_r)?;
    grad.add_assign(&d.param_grad(fake, &pre_f, &up_f)?);
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct GeneratorObjective {
    pub loss: f64,
    pub adversarial: f64,
    /// Mean of the `2N` distance terms.
    pub transformation: f64,
    pub grads: Vec<LinearGrad>,
}

/// Generator loss over noisy inputs `z_x`, `z_y` with targets `y` (all `[N, d]`),
/// and its gradient with respect to every generator weight.
pub fn generator_objective(
    g: &Generator,
    d: &Discriminator,
    zx: &ComplexTensor,
    zy: &ComplexTensor,
    y: &ComplexTensor,
    lambda: f64,
    params: &SliceMetricParams,
) -> Result<GeneratorObjective> {
    let n = zx.rows();
    if zy.rows() != n || y.rows() != n || n == 0 {
        return Err(Error::shape(n, format!("{} / {}", zy.rows(), y.rows())));
    }
    let (m, b) = (g.mics, g.bins);
    let dlen = g.input_len();
    let z = concat_rows(&[zx, zy])?;
    let (out, trace) = g.forward_traced(&z)?;

    let fake_x = ComplexTensor::new(
        vec![n, dlen],
        out.re[..n * dlen].to_vec(),
        out.im[..n * dlen].to_vec(),
    )?;
    let (probs, pre) = d.forward_traced(&fake_x)?;
    let adversarial = probs.iter().map(|&p| -clamp_p(p).ln()).sum::<f64>() / n as f64;
    let up: Vec<f64> = probs.iter().map(|&p| -dlog(p) / n as f64).collect();
    let g_adv = d.input_grad(&pre, &up)?;

    let terms: Vec<(f64, ComplexTensor)> = (0..2 * n)
        .into_par_iter()
        .map(|s| {
            let target = CsmTensor::from_flat(y.row(s % n), m, b)?;
            let output = CsmTensor::from_flat(out.row(s), m, b)?;
            csm_distance_grad(&target, &output, params)
        })
        .collect::<Result<_>>()?;
    let weight = lambda / (2.0 * n as f64);
    let mut g_out = ComplexTensor::zeros(vec![2 * n, dlen]);
    let mut trafo_sum = 0.0;
    for (s, (eps, grad)) in terms.iter().enumerate() {
        trafo_sum += eps;
        let base = s * dlen;
        for j in 0..dlen {
            g_out.re[base + j] = weight * grad.re[j];
            g_out.im[base + j] = weight * grad.im[j];
        }
    }
    for j in 0..n * dlen {
        g_out.re[j] += g_adv.re[j];
        g_out.im[j] += g_adv.im[j];
    }
    let grads = g.backward(&trace, &g_out)?;
    Ok(GeneratorObjective {
        loss: adversarial + weight * trafo_sum,
        adversarial,
        transformation: trafo_sum / (2 * n) as f64,
        grads,
    })
}

fn layer_sizes(layers: &[ComplexLinear]) -> Vec<usize> {
    layers
        .iter()
        .flat_map(|l| [l.wr.len(), l.wi.len()])
        .collect()
}

fn adam_update(
    opt: &mut AdamState,
    layers: &mut [ComplexLinear],
    grads: &[LinearGrad],
) -> Result<()> {
    let mut params: Vec<&mut [f64]> = layers
        .iter_mut()
        .flat_map(|l| {
            let ComplexLinear { wr, wi, .. } = l;
            [wr.as_mut_slice(), wi.as_mut_slice()]
        })
        .collect();
    let g: Vec<&[f64]> = grads
        .iter()
        .flat_map(|g| [g.wr.as_slice(), g.wi.as_slice()])
        .collect();
    opt.step(&mut params, &g)
}

/// Generator, discriminator and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub arch: GanArchitecture,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_gen: AdamState,
    pub opt_dis: AdamState,
    /// Completed epochs.
    pub epoch: usize,
}

impl GanModel {
    pub fn new(
        arch: GanArchitecture,
        mics: usize,
        bins: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        arch.validate()?;
        let generator = Generator::new(
            &arch,
            mics,
            bins,
            &mut derived_rng(config.seed, 0, tag::INIT_GEN),
        );
        let discriminator = Discriminator::new(
            &arch,
            generator.input_len(),
            &mut derived_rng(config.seed, 0, tag::INIT_DIS),
        );
        Ok(Self::assemble(arch, generator, discriminator, config))
    }

    fn assemble(
        arch: GanArchitecture,
        generator: Generator,
        discriminator: Discriminator,
        config: &TrainConfig,
    ) -> Self {
        let opt_gen = AdamState::new(
            AdamConfig::gan(config.lr_gen),
            &layer_sizes(&generator.layers),
        );
        let opt_dis = AdamState::new(
            AdamConfig::gan(config.lr_dis),
            &layer_sizes(std::slice::from_ref(&discriminator.conv)),
        );
        Self {
            arch,
            generator,
            discriminator,
            opt_gen,
            opt_dis,
            epoch: 0,
        }
    }

    pub fn mics(&self) -> usize {
        self.generator.mics
    }

    pub fn bins(&self) -> usize {
        self.generator.bins
    }

    pub fn step_discriminator(&mut self, grad: &LinearGrad) -> Result<()> {
        adam_update(
            &mut self.opt_dis,
            std::slice::from_mut(&mut self.discriminator.conv),
            std::slice::from_ref(grad),
        )
    }

    pub fn step_generator(&mut self, grads: &[LinearGrad]) -> Result<()> {
        adam_update(&mut self.opt_gen, &mut self.generator.layers, grads)
    }

    pub fn to_checkpoint(&self, config: &TrainConfig) -> Result<Checkpoint> {
        let desc = Descriptor {
            kind: CHECKPOINT_KIND.into(),
            arch: self.arch,
            mics: self.mics(),
            bins: self.bins(),
            epoch: self.epoch,
            train: *config,
            adam_gen: self.opt_gen.config,
            steps_gen: self.opt_gen.step_count,
            adam_dis: self.opt_dis.config,
            steps_dis: self.opt_dis.step_count,
        };
        let descriptor = serde_json::to_string(&desc)
            .map_err(|e| Error::format("checkpoint descriptor", e.to_string()))?;
        let mut blobs = Vec::new();
        for (name, l) in self
            .generator
            .layer_names()
            .iter()
            .zip(&self.generator.layers)
        {
            blobs.push(layer_blob(&format!("gen.{name}"), l));
        }
        blobs.push(layer_blob("dis.conv", &self.discriminator.conv));
        blobs.extend(adam_blobs("adam.gen", &self.opt_gen));
        blobs.extend(adam_blobs("adam.dis", &self.opt_dis));
        Ok(Checkpoint { descriptor, blobs })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainConfig)> {
        let desc: Descriptor = serde_json::from_str(&ck.descriptor)
            .map_err(|e| Error::format("checkpoint descriptor", e.to_string()))?;
        if desc.kind != CHECKPOINT_KIND {
            return Err(Error::format(
                "checkpoint",
                format!("unexpected kind {}", desc.kind),
            ));
        }
        desc.arch.validate()?;
        let mut model = Self::assemble(
            desc.arch,
            Generator::zeros(&desc.arch, desc.mics, desc.bins),
            Discriminator::zeros(&desc.arch, desc.mics * desc.mics * desc.bins),
            &desc.train,
        );
        let names = model.generator.layer_names();
        for (name, layer) in names.iter().zip(model.generator.layers.iter_mut()) {
            load_layer(ck, &format!("gen.{name}"), layer)?;
        }
        load_layer(ck, "dis.conv", &mut model.discriminator.conv)?;
        model.opt_gen.config = desc.adam_gen;
        model.opt_gen.step_count = desc.steps_gen;
        load_adam(ck, "adam.gen", &mut model.opt_gen)?;
        model.opt_dis.config = desc.adam_dis;
        model.opt_dis.step_count = desc.steps_dis;
        load_adam(ck, "adam.dis", &mut model.opt_dis)?;
        model.epoch = desc.epoch;
        Ok((model, desc.train))
    }

    pub fn save(&self, path: &Path, config: &TrainConfig) -> Result<()> {
        self.to_checkpoint(config)?.save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, TrainConfig)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    kind: String,
    arch: GanArchitecture,
    mics: usize,
    bins: usize,
    epoch: usize,
    train: TrainConfig,
    adam_gen: AdamConfig,
    steps_gen: u64,
    adam_dis: AdamConfig,
    steps_dis: u64,
}

fn layer_blob(name: &str, l: &ComplexLinear) -> NamedBlob {
    NamedBlob {
        name: name.into(),
        shape: vec![l.fan_out, l.fan_in],
        re: l.wr.clone(),
        im: l.wi.clone(),
    }
}

fn load_layer(ck: &Checkpoint, name: &str, layer: &mut ComplexLinear) -> Result<()> {
    let blob = ck.blob(name)?;
    if blob.shape != [layer.fan_out, layer.fan_in] {
        return Err(Error::shape(
            format!("{name} [{}, {}]", layer.fan_out, layer.fan_in),
            format!("{:?}", blob.shape),
        ));
    }
    layer.wr.clone_from(&blob.re);
    layer.wi.clone_from(&blob.im);
    Ok(())
}

/// One blob per parameter slice: first moment in `re`, second in `im`.
fn adam_blobs(prefix: &str, s: &AdamState) -> Vec<NamedBlob> {
    s.first_moment
        .iter()
        .zip(&s.second_moment)
        .enumerate()
        .map(|(i, (m, v))| NamedBlob {
            name: format!("{prefix}.{i}"),
            shape: vec![m.len()],
            re: m.clone(),
            im: v.clone(),
        })
        .collect()
}

fn load_adam(ck: &Checkpoint, prefix: &str, s: &mut AdamState) -> Result<()> {
    for i in 0..s.first_moment.len() {
        let blob = ck.blob(&format!("{prefix}.{i}"))?;
        if blob.re.len() != s.first_moment[i].len() {
            return Err(Error::shape(s.first_moment[i].len(), blob.re.len()));
        }
        s.first_moment[i].clone_from(&blob.re);
        s.second_moment[i].clone_from(&blob.im);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss_d: f64,
    pub loss_g: f64,
    pub adversarial: f64,
    pub transformation: f64,
}

/// One discriminator update then one generator update on a mini-batch.
pub fn train_step<R: Rng>(
    model: &mut GanModel,
    x: &[&CsmTensor],
    y: &[&CsmTensor],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::shape(x.len(), y.len()));
    }
    let metric = config.metric(model.bins())?;
    let mut zx = Vec::with_capacity(x.len());
    let mut zy = Vec::with_capacity(y.len());
    for (xi, yi) in x.iter().zip(y) {
        zx.push(make_noisy(xi, config.noise_sigma, rng));
        zy.push(make_noisy(yi, config.noise_sigma, rng));
    }
    let xb = batch_of(x)?;
    let yb = batch_of(y)?;
    let zxb = batch_of(&zx.iter().collect::<Vec<_>>())?;
    let zyb = batch_of(&zy.iter().collect::<Vec<_>>())?;

    let fake = model.generator.forward(&zxb)?;
    let (loss_d, grad_d) = discriminator_objective(&model.discriminator, &xb, &fake)?;
    model.step_discriminator(&grad_d)?;

    let obj = generator_objective(
        &model.generator,
        &model.discriminator,
        &zxb,
        &zyb,
        &yb,
        config.lambda,
        &metric,
    )?;
    model.step_generator(&obj.grads)?;
    if !(loss_d.is_finite() && obj.loss.is_finite()) {
        return Err(Error::domain(format!(
            "non-finite loss (L_D = {loss_d}, L_G = {})",
            obj.loss
        )));
    }
    Ok(StepReport {
        loss_d,
        loss_g: obj.loss,
        adversarial: obj.adversarial,
        transformation: obj.transformation,
    })
}

/// `1 − mean ε(y, G(x))` over a test set.
pub fn test_accuracy(g: &Generator, xs: &[CsmTensor], ys: &[CsmTensor], kappa: f64) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::shape(xs.len(), ys.len()));
    }
    let params = SliceMetricParams::new(kappa, g.bins)?;
    let out = g.generate(xs)?;
    let per: Vec<f64> = out
        .par_iter()
        .zip(ys.par_iter())
        .map(|(o, y)| crate::csm::accuracy(o, y, &params))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub transformation: f64,
    pub test_g_acc: Option<f64>,
}

/// Paired training or test inputs.
#[derive(Debug, Clone, Copy)]
pub struct PairSlices<'a> {
    pub x: &'a [CsmTensor],
    pub y: &'a [CsmTensor],
}

/// Run epochs `model.epoch..config.epochs`. Each epoch shuffles the training pairs
/// with a stream derived from `(seed, epoch)`, so a run resumed from a checkpoint
/// continues exactly as an uninterrupted one.
pub fn train_loop<F>(
    model: &mut GanModel,
    train: PairSlices<'_>,
    test: Option<PairSlices<'_>>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochRecord>>
where
    F: FnMut(&GanModel, &EpochRecord) -> Result<()>,
{
    config.validate()?;
    if train.x.is_empty() || train.x.len() != train.y.len() {
        return Err(Error::domain(
            "training set must be nonempty with paired targets",
        ));
    }
    let mut records = Vec::new();
    for epoch in model.epoch..config.epochs {
        let mut rng = derived_rng(config.seed, epoch as u64, tag::EPOCH);
        let mut order: Vec<usize> = (0..train.x.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<&CsmTensor> = chunk.iter().map(|&i| &train.x[i]).collect();
            let ys: Vec<&CsmTensor> = chunk.iter().map(|&i| &train.y[i]).collect();
            let r = train_step(model, &xs, &ys, config, &mut rng)?;
            sums[0] += r.loss_d;
            sums[1] += r.loss_g;
            sums[2] += r.transformation;
            batches += 1;
        }
        let done = epoch + 1;
        let eval_now =
            config.eval_every > 0 && (done % config.eval_every == 0 || done == config.epochs);
        let test_g_acc = match test {
            Some(t) if eval_now => Some(test_accuracy(&model.generator, t.x, t.y, config.kappa)?),
            _ => None,
        };
        model.epoch = done;
        let rec = EpochRecord {
            epoch: done,
            batches,
            loss_d: sums[0] / batches as f64,
            loss_g: sums[1] / batches as f64,
            transformation: sums[2] / batches as f64,
            test_g_acc,
        };
        log::info!(
            "epoch {done}: L_D {:.5} L_G {:.5} eps {:.5}{}",
            rec.loss_d,
            rec.loss_g,
            rec.transformation,
            test_g_acc
                .map(|a| format!(" g_acc {a:.5}"))
                .unwrap_or_default()
        );
        on_epoch(model, &rec)?;
        records.push(rec);
    }
    Ok(records)
}

/// Append epoch records to a CSV log, writing the header for a new file.
pub fn append_epoch_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    if fresh {
        w.write_record([
            "epoch",
            "batches",
            "loss_d",
            "loss_g",
            "transformation",
            "test_g_acc",
        ])?;
    }
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.batches.to_string(),
            r.loss_d.to_string(),
            r.loss_g.to_string(),
            r.transformation.to_string(),
            r.test_g_acc.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse an epoch log written by [`append_epoch_log`].
pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::format("epoch log", format!("bad number {:?}", field(i))))
        };
        out.push(EpochRecord {
            epoch: num(0)? as usize,
            batches: num(1)? as usize,
            loss_d: num(2)?,
            loss_g: num(3)?,
            transformation: num(4)?,
            test_g_acc: if field(5).is_empty() {
                None
            } else {
                Some(num(5)?)
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::PressureMatrix;
    use crate::csm::{build_csm, csm_distance, normalize_slices};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mini_arch(activation: ActivationSpec) -> GanArchitecture {
        GanArchitecture {
            n_gen: 2,
            n_dis: 3,
            n_den: 4,
            n_lay: 1,
            activation,
        }
    }

    fn random_csm<R: Rng>(m: usize, b: usize, rng: &mut R) -> CsmTensor {
        let mut p = PressureMatrix::zeros(m, b);
        for v in p.values.iter_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        normalize_slices(&build_csm(&p))
    }

    fn random_batch<R: Rng>(
        n: usize,
        m: usize,
        b: usize,
        rng: &mut R,
    ) -> (Vec<CsmTensor>, ComplexTensor) {
        let items: Vec<CsmTensor> = (0..n).map(|_| random_csm(m, b, rng)).collect();
        let t = batch_of(&items.iter().collect::<Vec<_>>()).unwrap();
        (items, t)
    }

    fn fd_check_layers(
        layers: &mut [ComplexLinear],
        grads: &[LinearGrad],
        f: &mut dyn FnMut(&[ComplexLinear]) -> f64,
        rel: f64,
    ) {
        let h = 1e-6;
        for li in 0..layers.len() {
            for part in 0..2 {
                let len = layers[li].wr.len();
                for k in 0..len {
                    let orig = if part == 0 {
                        layers[li].wr[k]
                    } else {
                        layers[li].wi[k]
                    };
                    let set = |ls: &mut [ComplexLinear], v: f64| {
                        if part == 0 {
                            ls[li].wr[k] = v
                        } else {
                            ls[li].wi[k] = v
                        }
                    };
                    set(layers, orig + h);
                    let up = f(layers);
                    set(layers, orig - h);
                    let down = f(layers);
                    set(layers, orig);
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = if part == 0 {
                        grads[li].wr[k]
                    } else {
                        grads[li].wi[k]
                    };
                    let tol = 1e-7f64.max(rel * numeric.abs().max(analytic.abs()));
                    assert!(
                        (numeric - analytic).abs() <= tol,
                        "layer {li} part {part} idx {k}: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn generator_output_is_hermitian_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = mini_arch(ActivationSpec::LeakyCardioid { alpha: 0.5 });
        let g = Generator::new(&arch, 4, 2, &mut rng);
        let mut z = ComplexTensor::zeros(vec![3, 32]);
        for v in z.re.iter_mut().chain(z.im.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let out = g.forward(&z).unwrap();
        assert_eq!(out.shape(), &[3, 32]);
        for s in 0..3 {
            let c = CsmTensor::from_flat(out.row(s), 4, 2).unwrap();
            assert!(c.is_hermitian(1e-12));
        }
        let zero = Generator::zeros(&arch, 4, 2).forward(&z).unwrap();
        assert!(zero.re.iter().chain(&zero.im).all(|v| *v == 0.0));
    }

    #[test]
    fn paper_architecture_shapes_and_count() {
        let g = Generator::zeros(&GanArchitecture::paper_best(), 48, 16);
        assert_eq!(
            g.shape_trace(),
            vec![
                vec![48, 48, 16],
                vec![1, 1, 64],
                vec![1, 1, 512],
                vec![1, 1, 64],
                vec![48, 48, 16]
            ]
        );
        let conv = 48 * 48 * 16 * 64;
        assert_eq!(g.param_count(), conv + 64 * 512 + 512 * 64 + conv);
        let deep = GanArchitecture {
            n_lay: 3,
            ..GanArchitecture::paper_best()
        };
        let g = Generator::zeros(&deep, 48, 16);
        assert_eq!(g.layers.len(), 8);
        assert_eq!(g.param_count(), 2 * conv + 2 * 64 * 512 + 4 * 512 * 512);
    }

    #[test]
    fn discriminator_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let arch = mini_arch(ActivationSpec::ModRelu { bias: -0.25 });
        let (_, x) = random_batch(5, 4, 2, &mut rng);
        let zero = Discriminator::zeros(&arch, 32);
        assert!(zero.forward(&x).unwrap().iter().all(|&p| p == 0.5));

        let d = Discriminator::new(&arch, 32, &mut rng);
        let mut big = ComplexTensor::zeros(vec![1000, 32]);
        for v in big.re.iter_mut().chain(big.im.iter_mut()) {
            *v = rng.random_range(-50.0..50.0);
        }
        assert!(d
            .forward(&big)
            .unwrap()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));

        let p0 = d.forward(&x).unwrap();
        let mut xp = x.clone();
        xp.re.iter_mut().for_each(|v| *v += 1e-9);
        let p1 = d.forward(&xp).unwrap();
        assert!(p0.iter().zip(&p1).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn loss_examples() {
        let ld = loss_discriminator(&[1.0 - 1e-12], &[1e-12]);
        assert!(ld < 1e-6);
        assert!((loss_discriminator(&[0.5, 0.5], &[0.5]) - 2.0 * 2f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let real: Vec<f64> = (0..7).map(|_| rng.random_range(0.01..0.99)).collect();
        let fake: Vec<f64> = (0..7).map(|_| rng.random_range(0.01..0.99)).collect();
        let direct = real.iter().map(|p| -p.ln()).sum::<f64>() / 7.0
            + fake.iter().map(|p| -(1.0 - p).ln()).sum::<f64>() / 7.0;
        assert!((loss_discriminator(&real, &fake) - direct).abs() < 1e-12);

        let params = SliceMetricParams::new(0.9, 2).unwrap();
        let ys: Vec<CsmTensor> = (0..3).map(|_| random_csm(3, 2, &mut rng)).collect();
        let half = [0.5; 3];
        let lg = loss_generator(&half, &ys, &ys, &ys, 0.0, &params).unwrap();
        assert!((lg - 2f64.ln()).abs() < 1e-15);
        let lg = loss_generator(&half, &ys, &ys, &ys, 200.0, &params).unwrap();
        assert!((lg - 2f64.ln()).abs() < 1e-12);

        let gx: Vec<CsmTensor> = (0..3).map(|_| random_csm(3, 2, &mut rng)).collect();
        let gy: Vec<CsmTensor> = (0..3).map(|_| random_csm(3, 2, &mut rng)).collect();
        let dfx = [0.2, 0.7, 0.4];
        let mut adv = 0.0;
        let mut trafo = 0.0;
        for i in 0..3 {
            adv -= f64::ln(dfx[i]);
            trafo += csm_distance(&ys[i], &gx[i], &params).unwrap();
            trafo += csm_distance(&ys[i], &gy[i], &params).unwrap();
        }
        let expect = adv / 3.0 + 200.0 / 6.0 * trafo;
        let lg = loss_generator(&dfx, &gx, &gy, &ys, 200.0, &params).unwrap();
        assert!((lg - expect).abs() < 1e-12);
    }

    #[test]
    fn make_noisy_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_csm(3, 2, &mut rng);
        assert_eq!(make_noisy(&c, 0.0, &mut rng), c);
        let noisy = make_noisy(&c, 0.5, &mut rng);
        assert!(noisy.is_hermitian(1e-12));
        assert_ne!(noisy, c);

        // zero-mean noise: off-diagonal real part of slice 0 entry (0, 1)
        let draws = 10_000;
        let std = 0.5 * c.slice_norm(0) / 3.0;
        // Hermitian part of two independent entries halves the variance of each component
        let comp_std = std * 0.5;
        let mut sum = 0.0;
        for _ in 0..draws {
            sum += make_noisy(&c, 0.5, &mut rng).get(0, 1, 0).re - c.get(0, 1, 0).re;
        }
        let mean = sum / draws as f64;
        let se = comp_std / (draws as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn generator_objective_gradient_matches_finite_differences() {
        for activation in [
            ActivationSpec::LeakyCardioid { alpha: 0.5 },
            ActivationSpec::ModRelu { bias: -0.125 },
        ] {
            let arch = mini_arch(activation);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let g = Generator::new(&arch, 4, 2, &mut rng);
            let d = Discriminator::new(&arch, 32, &mut rng);
            let (_, zx) = random_batch(2, 4, 2, &mut rng);
            let (_, zy) = random_batch(2, 4, 2, &mut rng);
            let (_, y) = random_batch(2, 4, 2, &mut rng);
            let params = SliceMetricParams::new(0.9, 2).unwrap();
            let obj = generator_objective(&g, &d, &zx, &zy, &y, 200.0, &params).unwrap();
            let mut layers = g.layers.clone();
            let mut f = |ls: &[ComplexLinear]| {
                let mut gg = g.clone();
                gg.layers = ls.to_vec();
                generator_objective(&gg, &d, &zx, &zy, &y, 200.0, &params)
                    .unwrap()
                    .loss
            };
            fd_check_layers(&mut layers, &obj.grads, &mut f, 1e-5);
        }
    }

    #[test]
    fn discriminator_objective_gradient_matches_finite_differences() {
        let arch = mini_arch(ActivationSpec::LeakyCardioid { alpha: 0.5 });
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = Discriminator::new(&arch, 32, &mut rng);
        let (_, real) = random_batch(3, 4, 2, &mut rng);
        let (_, fake) = random_batch(3, 4, 2, &mut rng);
        let (_, grad) = discriminator_objective(&d, &real, &fake).unwrap();
        let mut layers = vec![d.conv.clone()];
        let mut f = |ls: &[ComplexLinear]| {
            let mut dd = d.clone();
            dd.conv = ls[0].clone();
            discriminator_objective(&dd, &real, &fake).unwrap().0
        };
        fd_check_layers(&mut layers, &[grad], &mut f, 1e-5);
    }

    #[test]
    fn classical_objective_when_lambda_vanishes() {
        let arch = mini_arch(ActivationSpec::LeakyCardioid { alpha: 0.5 });
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Generator::new(&arch, 4, 2, &mut rng);
        let d = Discriminator::new(&arch, 32, &mut rng);
        let (_, x) = random_batch(3, 4, 2, &mut rng);
        let (_, y) = random_batch(3, 4, 2, &mut rng);
        let params = SliceMetricParams::new(0.9, 2).unwrap();
        let obj = generator_objective(&g, &d, &x, &x, &y, 1e-300, &params).unwrap();
        let p = d.forward(&g.forward(&x).unwrap()).unwrap();
        let classical = -p.iter().map(|v| v.ln()).sum::<f64>() / 3.0;
        assert!((obj.loss - classical).abs() < 1e-12);
    }

    fn tiny_data(n: usize, seed: u64) -> (Vec<CsmTensor>, Vec<CsmTensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<CsmTensor> = (0..n).map(|_| random_csm(3, 2, &mut rng)).collect();
        (x.clone(), x)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            lr_gen: 1e-3,
            lr_dis: 1e-3,
            epochs: 3,
            seed: 9,
            eval_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn large_lambda_step_reduces_distance() {
        let arch = mini_arch(ActivationSpec::LeakyCardioid { alpha: 0.5 });
        let config = TrainConfig {
            lambda: 1e6,
            lr_gen: 1e-4,
            noise_sigma: 0.0,
            ..tiny_config()
        };
        let mut model = GanModel::new(arch, 3, 2, &config).unwrap();
        let (x, y) = tiny_data(2, 10);
        let before = test_accuracy(&model.generator, &x, &y, 0.9).unwrap();
        let xs: Vec<&CsmTensor> = x.iter().collect();
        let ys: Vec<&CsmTensor> = y.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        train_step(&mut model, &xs, &ys, &config, &mut rng).unwrap();
        let after = test_accuracy(&model.generator, &x, &y, 0.9).unwrap();
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn discriminator_step_descends() {
        let arch = mini_arch(ActivationSpec::LeakyCardioid { alpha: 0.5 });
        let config = TrainConfig {
            lr_dis: 1e-4,
            ..tiny_config()
        };
        let mut model = GanModel::new(arch, 3, 2, &config).unwrap();
        let (x, _) = tiny_data(4, 11);
        let real = batch_of(&x.iter().collect::<Vec<_>>()).unwrap();
        let fake = model.generator.forward(&real).unwrap();
        let (before, grad) = discriminator_objective(&model.discriminator, &real, &fake).unwrap();
        model.step_discriminator(&grad).unwrap();
        let (after, _) = discriminator_objective(&model.discriminator, &real, &fake).unwrap();
        assert!(after < before);
    }

    #[test]
    fn training_is_deterministic_and_counts_batches() {
        let arch = mini_arch(ActivationSpec::LeakyCardioid { alpha: 0.5 });
        let config = tiny_config();
        let (x, y) = tiny_data(10, 12);
        let run = || {
            let mut model = GanModel::new(arch, 3, 2, &config).unwrap();
            let set = PairSlices { x: &x, y: &y };
            let recs = train_loop(&mut model, set, Some(set), &config, |_, _| Ok(())).unwrap();
            (model, recs)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(r1.len(), 3);
        assert!(r1.iter().all(|r| r.batches == 3 && r.test_g_acc.is_some()));

        let mut idle = GanModel::new(arch, 3, 2, &config).unwrap();
        let fresh = idle.clone();
        let zero = TrainConfig {
            epochs: 0,
            ..config
        };
        let set = PairSlices { x: &x, y: &y };
        assert!(train_loop(&mut idle, set, None, &zero, |_, _| Ok(()))
            .unwrap()
            .is_empty());
        assert_eq!(idle, fresh);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let arch = mini_arch(ActivationSpec::ModRelu { bias: -0.125 });
        let config = tiny_config();
        let (x, y) = tiny_data(6, 13);
        let set = PairSlices { x: &x, y: &y };
        let mut full = GanModel::new(arch, 3, 2, &config).unwrap();
        train_loop(&mut full, set, None, &config, |_, _| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut part = GanModel::new(arch, 3, 2, &config).unwrap();
        let first = TrainConfig {
            epochs: 1,
            ..config
        };
        train_loop(&mut part, set, None, &first, |_, _| Ok(())).unwrap();
        part.save(&path, &config).unwrap();
        let (mut resumed, cfg) = GanModel::load(&path).unwrap();
        assert_eq!(cfg, config);
        assert_eq!(resumed, part);
        train_loop(&mut resumed, set, None, &config, |_, _| Ok(())).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn epoch_log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epochs.csv");
        let a = EpochRecord {
            epoch: 1,
            batches: 16,
            loss_d: 1.25,
            loss_g: 33.1,
            transformation: 0.1,
            test_g_acc: None,
        };
        let b = EpochRecord {
            epoch: 2,
            test_g_acc: Some(0.5),
            ..a
        };
        append_epoch_log(&path, &[a]).unwrap();
        append_epoch_log(&path, &[b]).unwrap();
        assert_eq!(read_epoch_log(&path).unwrap(), vec![a, b]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,batches,loss_d"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            kappa: 1.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GanArchitecture {
            n_lay: 0,
            ..GanArchitecture::desk()
        }
        .validate()
        .is_err());
    }
}
