//! Cross-spectral matrices: assembly, symmetrization, normalization, and the
//! weighted slice distance used for training and scoring.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::acoustics::PressureMatrix;
use crate::cxnn::ComplexTensor;
use crate::error::{Error, Result};

pub const CSMD_MAGIC: &[u8; 4] = b"CSMD";
pub const CSMD_VERSION: u32 = 1;

/// Stack of `bins` Hermitian `mics × mics` matrices, entry `(i, j, k)` at
/// `(i·mics + j)·bins + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmTensor(ComplexTensor);

impl CsmTensor {
    pub fn zeros(mics: usize, bins: usize) -> Self {
        CsmTensor(ComplexTensor::zeros(vec![mics, mics, bins]))
    }

    pub fn from_tensor(t: ComplexTensor) -> Result<Self> {
        match *t.shape() {
            [a, b, _] if a == b => Ok(CsmTensor(t)),
            _ => Err(Error::shape("[m, m, bins]", format!("{:?}", t.shape()))),
        }
    }

    /// Reinterpret a flat tensor of `mics²·bins` entries.
    pub fn from_flat(t: ComplexTensor, mics: usize, bins: usize) -> Result<Self> {
        Ok(CsmTensor(t.reshape(vec![mics, mics, bins])?))
    }

    pub fn mics(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.mics(), self.mics(), self.bins())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.mics() + j) * self.bins() + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.0.get(self.index(i, j, k))
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, z: Complex64) {
        let idx = self.index(i, j, k);
        self.0.set(idx, z);
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut ComplexTensor {
        &mut self.0
    }

    pub fn into_tensor(self) -> ComplexTensor {
        self.0
    }

    /// Slice `k` as a row-major `mics × mics` matrix.
    pub fn slice(&self, k: usize) -> Vec<Complex64> {
        let m = self.mics();
        (0..m * m)
            .map(|ij| self.0.get(ij * self.bins() + k))
            .collect()
    }

    pub fn slice_norm(&self, k: usize) -> f64 {
        let (m, b) = (self.mics(), self.bins());
        slice_norm_raw(&self.0.re, &self.0.im, m, b, k)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let (m, b) = (self.mics(), self.bins());
        (0..b).all(|k| {
            (0..m).all(|i| {
                (i..m).all(|j| (self.get(i, j, k) - self.get(j, i, k).conj()).norm() <= tol)
            })
        })
    }
}

fn slice_norm_raw(re: &[f64], im: &[f64], m: usize, b: usize, k: usize) -> f64 {
    slice_sq_norm(re, im, m, b, k).sqrt()
}

/// Rank-1 cross-spectral matrix per bin, `C[·,·,k] = p_k p_kᴴ`.
pub fn build_csm(p: &PressureMatrix) -> CsmTensor {
    let (m, b) = (p.mics, p.bins);
    let mut c = CsmTensor::zeros(m, b);
    for i in 0..m {
        for j in 0..m {
            for k in 0..b {
                c.set(i, j, k, p.get(i, k) * p.get(j, k).conj());
            }
        }
    }
    c
}

/// Divide each slice by its Frobenius norm; zero slices stay zero.
pub fn normalize_slices(c: &CsmTensor) -> CsmTensor {
    let mut out = c.clone();
    let (m, b) = (c.mics(), c.bins());
    for k in 0..b {
        let n = c.slice_norm(k);
        if n == 0.0 {
            continue;
        }
        for ij in 0..m * m {
            let idx = ij * b + k;
            out.0.re[idx] /= n;
            out.0.im[idx] /= n;
        }
    }
    out
}

/// `(C_ijk + conj C_jik) / 2`.
pub fn hermitianize(c: &CsmTensor) -> CsmTensor {
    let (m, b) = (c.mics(), c.bins());
    let mut out = c.clone();
    hermitianize_raw(&c.0.re, &c.0.im, &mut out.0.re, &mut out.0.im, m, b);
    out
}

/// Hermitian part of one flat `m·m·b` sample, written into `out_re`/`out_im`.
pub fn hermitianize_raw(
    re: &[f64],
    im: &[f64],
    out_re: &mut [f64],
    out_im: &mut [f64],
    m: usize,
    b: usize,
) {
    for i in 0..m {
        for j in 0..m {
            for k in 0..b {
                let a = (i * m + j) * b + k;
                let t = (j * m + i) * b + k;
                out_re[a] = 0.5 * (re[a] + re[t]);
                out_im[a] = 0.5 * (im[a] - im[t]);
            }
        }
    }
}

/// Metric weights: `kappa` balances the correlation term against the norm
/// difference, `slices` is the number of averaged bins.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SliceMetricParams {
    pub kappa: f64,
    pub slices: usize,
}

impl Default for SliceMetricParams {
    fn default() -> Self {
        Self {
            kappa: 0.9,
            slices: 16,
        }
    }
}

impl SliceMetricParams {
    pub fn new(kappa: f64, slices: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::domain(format!("kappa {kappa} outside [0, 1]")));
        }
        if slices == 0 {
            return Err(Error::domain("slice count must be positive"));
        }
        Ok(Self { kappa, slices })
    }
}

/// Per-slice sums shared by distance and gradient.
struct SliceStats {
    trace: f64,
    sq_a: f64,
    sq_b: f64,
    norm_a: f64,
    norm_b: f64,
}

impl SliceStats {
    /// `‖a‖‖b‖` as `√(‖a‖²‖b‖²)`, exactly `tr(a a)` when `a = b` is Hermitian.
    fn norm_product(&self) -> f64 {
        (self.sq_a * self.sq_b).sqrt()
    }
}

fn slice_sq_norm(re: &[f64], im: &[f64], m: usize, b: usize, k: usize) -> f64 {
    (0..m * m)
        .map(|ij| {
            let n = ij * b + k;
            re[n] * re[n] + im[n] * im[n]
        })
        .sum::<f64>()
}

fn slice_stats(
    a: &ComplexTensor,
    b: &ComplexTensor,
    m: usize,
    bins: usize,
    k: usize,
) -> SliceStats {
    let mut trace = 0.0;
    for i in 0..m {
        for j in 0..m {
            let p = (i * m + j) * bins + k;
            let q = (j * m + i) * bins + k;
            // Re(A_ij B_ji)
            trace += a.re[p] * b.re[q] - a.im[p] * b.im[q];
        }
    }
    let sq_a = slice_sq_norm(&a.re, &a.im, m, bins, k);
    let sq_b = slice_sq_norm(&b.re, &b.im, m, bins, k);
    SliceStats {
        trace,
        sq_a,
        sq_b,
        norm_a: sq_a.sqrt(),
        norm_b: sq_b.sqrt(),
    }
}

fn stats_distance(s: &SliceStats, kappa: f64) -> f64 {
    if s.norm_a == 0.0 && s.norm_b == 0.0 {
        return 0.0;
    }
    let corr = if s.norm_a == 0.0 || s.norm_b == 0.0 {
        1.0
    } else {
        1.0 - s.trace / s.norm_product()
    };
    kappa * corr + (1.0 - kappa) * (s.norm_a - s.norm_b).abs()
}

/// Weighted correlation-matrix distance between two `m × m` row-major matrices.
pub fn slice_distance(a: &[Complex64], b: &[Complex64], params: &SliceMetricParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let m = (a.len() as f64).sqrt().round() as usize;
    if m * m != a.len() {
        return Err(Error::shape("square matrix", a.len()));
    }
    let ta = ComplexTensor::from_complex(vec![m, m, 1], a)?;
    let tb = ComplexTensor::from_complex(vec![m, m, 1], b)?;
    Ok(stats_distance(
        &slice_stats(&ta, &tb, m, 1, 0),
        params.kappa,
    ))
}

fn check_pair(a: &CsmTensor, b: &CsmTensor, params: &SliceMetricParams) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            format!("{:?}", a.dims()),
            format!("{:?}", b.dims()),
        ));
    }
    if params.slices != a.bins() {
        return Err(Error::shape(format!("{} slices", params.slices), a.bins()));
    }
    Ok(())
}

/// Mean slice distance over all bins.
pub fn csm_distance(a: &CsmTensor, b: &CsmTensor, params: &SliceMetricParams) -> Result<f64> {
    check_pair(a, b, params)?;
    let (m, bins) = (a.mics(), a.bins());
    let sum: f64 = (0..bins)
        .map(|k| stats_distance(&slice_stats(&a.0, &b.0, m, bins, k), params.kappa))
        .sum();
    Ok(sum / bins as f64)
}

/// [`csm_distance`] and its gradient with respect to the real and imaginary
/// parts of `b`.
pub fn csm_distance_grad(
    a: &CsmTensor,
    b: &CsmTensor,
    params: &SliceMetricParams,
) -> Result<(f64, ComplexTensor)> {
    check_pair(a, b, params)?;
    let (m, bins) = (a.mics(), a.bins());
    let kappa = params.kappa;
    let scale = 1.0 / bins as f64;
    let mut grad = ComplexTensor::zeros(b.0.shape().to_vec());
    let mut total = 0.0;
    for k in 0..bins {
        let s = slice_stats(&a.0, &b.0, m, bins, k);
        total += stats_distance(&s, kappa);
        if s.norm_b == 0.0 {
            continue;
        }
        // d = κ(1 − t/(na nb)) + (1−κ)|na − nb|
        let (dt, dnb) = if s.norm_a == 0.0 {
            (0.0, (1.0 - kappa) * (s.norm_b - s.norm_a).signum())
        } else {
            let nn = s.norm_product();
            let sign = if s.norm_b > s.norm_a {
                1.0
            } else if s.norm_b < s.norm_a {
                -1.0
            } else {
                0.0
            };
            (
                -kappa / nn,
                kappa * s.trace / (nn * s.norm_b) + (1.0 - kappa) * sign,
            )
        };
        for i in 0..m {
            for j in 0..m {
                let p = (i * m + j) * bins + k;
                let q = (j * m + i) * bins + k;
                // ∂t/∂B_pq = (A_qp.re, −A_qp.im); ∂nb/∂B_pq = B_pq / nb
                grad.re[p] = scale * (dt * a.0.re[q] + dnb * b.0.re[p] / s.norm_b);
                grad.im[p] = scale * (-dt * a.0.im[q] + dnb * b.0.im[p] / s.norm_b);
            }
        }
    }
    Ok((total * scale, grad))
}

/// `1 − ε(target, output)`.
pub fn accuracy(output: &CsmTensor, target: &CsmTensor, params: &SliceMetricParams) -> Result<f64> {
    Ok(1.0 - csm_distance(target, output, params)?)
}

/// Dataset-level accuracy: mean of per-pair accuracies in input order.
pub fn mean_accuracy<'a, I>(pairs: I, params: &SliceMetricParams) -> Result<f64>
where
    I: IntoIterator<Item = (&'a CsmTensor, &'a CsmTensor)>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (output, target) in pairs {
        sum += accuracy(output, target, params)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain("accuracy over an empty set"));
    }
    Ok(sum / n as f64)
}

/// One stored CSM with the model it came from and the simulation variant bits.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmRecord {
    pub model_index: u64,
    pub variant: u8,
    pub csm: CsmTensor,
}

/// In-memory CSMD container.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmdFile {
    pub mics: usize,
    pub bins: usize,
    pub records: Vec<CsmRecord>,
}

impl CsmdFile {
    pub fn new(mics: usize, bins: usize) -> Self {
        Self {
            mics,
            bins,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: CsmRecord) -> Result<()> {
        if record.csm.dims() != (self.mics, self.mics, self.bins) {
            return Err(Error::shape(
                format!("({0}, {0}, {1})", self.mics, self.bins),
                format!("{:?}", record.csm.dims()),
            ));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CSMD_MAGIC)?;
        w.write_all(&CSMD_VERSION.to_le_bytes())?;
        for d in [self.mics, self.mics, self.bins] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * self.mics * self.mics * self.bins);
        for r in &self.records {
            w.write_all(&r.model_index.to_le_bytes())?;
            w.write_all(&[r.variant])?;
            buf.clear();
            let t = r.csm.tensor();
            for (x, y) in t.re.iter().zip(&t.im) {
                buf.extend_from_slice(&x.to_le_bytes());
                buf.extend_from_slice(&y.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |reason: String| Error::format("CSMD file", reason);
        let io = |e: std::io::Error| bad(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CSMD_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32b).map_err(io)?;
            Ok(u32::from_le_bytes(u32b))
        };
        let version = read_u32(&mut r)?;
        if version != CSMD_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let d0 = read_u32(&mut r)? as usize;
        let d1 = read_u32(&mut r)? as usize;
        let bins = read_u32(&mut r)? as usize;
        if d0 != d1 {
            return Err(bad(format!("non-square slices {d0}×{d1}")));
        }
        r.read_exact(&mut u64b).map_err(io)?;
        let count = u64::from_le_bytes(u64b);
        let n = d0 * d1 * bins;
        let mut file = CsmdFile::new(d0, bins);
        let mut raw = vec![0u8; 16 * n];
        for _ in 0..count {
            r.read_exact(&mut u64b).map_err(io)?;
            let model_index = u64::from_le_bytes(u64b);
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag).map_err(io)?;
            r.read_exact(&mut raw).map_err(io)?;
            let mut re = Vec::with_capacity(n);
            let mut im = Vec::with_capacity(n);
            for c in raw.chunks_exact(16) {
                re.push(f64::from_le_bytes(c[..8].try_into().expect("8 bytes")));
                im.push(f64::from_le_bytes(c[8..].try_into().expect("8 bytes")));
            }
            let csm = CsmTensor(ComplexTensor::new(vec![d0, d0, bins], re, im)?);
            file.records.push(CsmRecord {
                model_index,
                variant: flag[0],
                csm,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(bad("trailing bytes".into()));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("csmd.tmp");
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(&tmp, e))?;
        w.into_inner()
            .map_err(|e| Error::io(&tmp, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}
