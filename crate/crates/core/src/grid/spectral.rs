//! FFT plumbing: n-dimensional transforms, spectral derivatives, band projection
//! and the 3/2-rule padding used for dealiased products.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;

fn plan(len: usize, inverse: bool) -> Plan {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Plan>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// Unnormalized n-dimensional FFT in place (row-major, last axis fastest).
pub(crate) fn fft_nd(data: &mut [Complex64], dim: usize, len: usize, inverse: bool) {
    let fft = plan(len, inverse);
    let total = data.len();
    debug_assert_eq!(total, len.pow(dim as u32));
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut lines = Vec::new();
    for axis in 0..dim {
        let stride = len.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        // gather the `stride` lines of a block contiguously and transform them in one call
        let block = stride * len;
        lines.resize(block, Complex64::default());
        for outer in (0..total).step_by(block) {
            let src = &data[outer..outer + block];
            for j in 0..len {
                for inner in 0..stride {
                    lines[inner * len + j] = src[j * stride + inner];
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            let dst = &mut data[outer..outer + block];
            for j in 0..len {
                for inner in 0..stride {
                    dst[j * stride + inner] = lines[inner * len + j];
                }
            }
        }
    }
}

/// Signed wavenumber of FFT bin `j`, or `None` for the Nyquist bin.
#[inline]
pub(crate) fn wavenumber(j: usize, len: usize) -> Option<i64> {
    let half = len / 2;
    if j < half {
        Some(j as i64)
    } else if j == half {
        None
    } else {
        Some(j as i64 - len as i64)
    }
}

/// Decompose a flat index into per-axis indices.
#[inline]
pub(crate) fn unravel(mut idx: usize, dim: usize, len: usize, out: &mut [usize; 3]) {
    for axis in (0..dim).rev() {
        out[axis] = idx % len;
        idx /= len;
    }
}

/// Per-bin signed wavevectors; `None` marks bins that touch a Nyquist frequency.
pub(crate) fn wavevectors(dim: usize, len: usize) -> Vec<Option<[i64; 3]>> {
    let total = len.pow(dim as u32);
    let mut idx = [0usize; 3];
    (0..total)
        .map(|flat| {
            unravel(flat, dim, len, &mut idx);
            let mut k = [0i64; 3];
            for axis in 0..dim {
                k[axis] = wavenumber(idx[axis], len)?;
            }
            Some(k)
        })
        .collect()
}

pub(crate) fn forward(values: &[f64], dim: usize, len: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, dim, len, false);
    data
}

pub(crate) fn inverse(mut spec: Vec<Complex64>, dim: usize, len: usize) -> Vec<f64> {
    fft_nd(&mut spec, dim, len, true);
    let scale = 1.0 / spec.len() as f64;
    spec.iter().map(|c| c.re * scale).collect()
}

/// Spectral engine for one grid: wavevector table plus the padded grid of the 3/2 rule.
#[derive(Debug, Clone)]
pub(crate) struct Spectral {
    pub dim: usize,
    pub len: usize,
    pub fine: usize,
    kvec: Arc<Vec<Option<[i64; 3]>>>,
    embed: Arc<Vec<Option<usize>>>,
}

impl Spectral {
    pub fn get(dim: usize, len: usize) -> Spectral {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Spectral>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("spectral cache poisoned");
        map.entry((dim, len))
            .or_insert_with(|| Spectral::build(dim, len))
            .clone()
    }

    fn build(dim: usize, len: usize) -> Spectral {
        let fine = 3 * len / 2;
        let kvec = wavevectors(dim, len);
        let embed = kvec
            .iter()
            .map(|k| {
                let k = (*k)?;
                let mut flat = 0usize;
                for &ki in k.iter().take(dim) {
                    let j = if ki >= 0 { ki as usize } else { (fine as i64 + ki) as usize };
                    flat = flat * fine + j;
                }
                Some(flat)
            })
            .collect();
        Spectral {
            dim,
            len,
            fine,
            kvec: Arc::new(kvec),
            embed: Arc::new(embed),
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        forward(values, self.dim, self.len)
    }

    pub fn inverse(&self, spec: Vec<Complex64>) -> Vec<f64> {
        inverse(spec, self.dim, self.len)
    }

    /// Zero every Nyquist-touching bin.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (c, k) in spec.iter_mut().zip(self.kvec.iter()) {
            if k.is_none() {
                *c = Complex64::default();
            }
        }
        self.inverse(spec)
    }

    /// Derivative along `axis` of a field given by its spectrum.
    pub fn derivative_of(&self, spec: &[Complex64], axis: usize) -> Vec<f64> {
        let out: Vec<Complex64> = spec
            .iter()
            .zip(self.kvec.iter())
            .map(|(c, k)| match k {
                Some(k) => *c * Complex64::new(0.0, k[axis] as f64),
                None => Complex64::default(),
            })
            .collect();
        self.inverse(out)
    }

    pub fn derivative(&self, values: &[f64], axis: usize) -> Vec<f64> {
        self.derivative_of(&self.forward(values), axis)
    }

    /// Band-limited interpolation of a spectrum onto the padded grid.
    #[cfg(test)]
    fn lift_of(&self, spec: &[Complex64]) -> Vec<f64> {
        let fine_total = self.fine.pow(self.dim as u32);
        let mut data = vec![Complex64::default(); fine_total];
        let ratio = (self.fine as f64 / self.len as f64).powi(self.dim as i32);
        for (c, slot) in spec.iter().zip(self.embed.iter()) {
            if let Some(j) = slot {
                data[*j] = *c * ratio;
            }
        }
        inverse(data, self.dim, self.fine)
    }

    #[cfg(test)]
    fn lift(&self, values: &[f64]) -> Vec<f64> {
        self.lift_of(&self.forward(values))
    }

    /// Truncate padded-grid data back to the Nyquist-free band of the coarse grid.
    pub fn lower(&self, fine_values: &[f64]) -> Vec<f64> {
        let big = forward(fine_values, self.dim, self.fine);
        let ratio = (self.len as f64 / self.fine as f64).powi(self.dim as i32);
        let spec: Vec<Complex64> = self
            .embed
            .iter()
            .map(|slot| match slot {
                Some(j) => big[*j] * ratio,
                None => Complex64::default(),
            })
            .collect();
        self.inverse(spec)
    }

    /// `lift` of two fields with one forward and one inverse transform: the
    /// pair travels as `a + ib`, and both maps are linear and keep real data real.
    pub fn lift_pair(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut data: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        fft_nd(&mut data, self.dim, self.len, false);
        let fine_total = self.fine.pow(self.dim as u32);
        let mut fine = vec![Complex64::default(); fine_total];
        let ratio = (self.fine as f64 / self.len as f64).powi(self.dim as i32);
        for (c, slot) in data.iter().zip(self.embed.iter()) {
            if let Some(j) = slot {
                fine[*j] = *c * ratio;
            }
        }
        fft_nd(&mut fine, self.dim, self.fine, true);
        let scale = 1.0 / fine_total as f64;
        fine.iter().map(|c| (c.re * scale, c.im * scale)).unzip()
    }

    /// `lower` of two padded fields at once.
    pub fn lower_pair(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut big: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        fft_nd(&mut big, self.dim, self.fine, false);
        let ratio = (self.len as f64 / self.fine as f64).powi(self.dim as i32);
        let mut spec: Vec<Complex64> = self
            .embed
            .iter()
            .map(|slot| match slot {
                Some(j) => big[*j] * ratio,
                None => Complex64::default(),
            })
            .collect();
        fft_nd(&mut spec, self.dim, self.len, true);
        let scale = 1.0 / spec.len() as f64;
        spec.iter().map(|c| (c.re * scale, c.im * scale)).unzip()
    }

    /// Spectrum of the derivative along `axis`.
    pub fn derivative_spectrum(&self, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
        spec.iter()
            .zip(self.kvec.iter())
            .map(|(c, k)| match k {
                Some(k) => *c * Complex64::new(0.0, k[axis] as f64),
                None => Complex64::default(),
            })
            .collect()
    }

    /// `lift_of` for spectra of real fields, two per inverse transform.
    pub fn lift_spectra(&self, specs: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
        let fine_total = self.fine.pow(self.dim as u32);
        let ratio = (self.fine as f64 / self.len as f64).powi(self.dim as i32);
        let scale = 1.0 / fine_total as f64;
        let mut out = Vec::with_capacity(specs.len());
        for pair in specs.chunks(2) {
            let mut data = vec![Complex64::default(); fine_total];
            let i = Complex64::new(0.0, 1.0);
            for (idx, slot) in self.embed.iter().enumerate() {
                if let Some(j) = slot {
                    let b = pair.get(1).map_or(Complex64::default(), |s| s[idx]);
                    data[*j] = (pair[0][idx] + i * b) * ratio;
                }
            }
            fft_nd(&mut data, self.dim, self.fine, true);
            out.push(data.iter().map(|c| c.re * scale).collect());
            if pair.len() == 2 {
                out.push(data.iter().map(|c| c.im * scale).collect());
            }
        }
        out
    }

    /// `lower` of several padded fields, two per transform pair.
    pub fn lower_many(&self, fine: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(fine.len());
        for pair in fine.chunks(2) {
            match pair {
                [a, b] => {
                    let (x, y) = self.lower_pair(a, b);
                    out.push(x);
                    out.push(y);
                }
                [a] => out.push(self.lower(a)),
                _ => unreachable!(),
            }
        }
        out
    }

    /// Apply a real Fourier multiplier `m(k)` (Nyquist bins are zeroed).
    pub fn multiplier(&self, values: &[f64], m: impl Fn(&[i64; 3]) -> f64) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (c, k) in spec.iter_mut().zip(self.kvec.iter()) {
            *c = match k {
                Some(k) => *c * m(k),
                None => Complex64::default(),
            };
        }
        self.inverse(spec)
    }

    /// Keep only modes with `max |k_i| <= band`.
    pub fn low_pass(&self, values: &[f64], band: i64) -> Vec<f64> {
        self.multiplier(values, |k| {
            if k.iter().take(self.dim).all(|v| v.abs() <= band) {
                1.0
            } else {
                0.0
            }
        })
    }
}
