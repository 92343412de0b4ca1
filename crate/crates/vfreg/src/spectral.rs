//! Littlewood-Paley filter bank, Zygmund norms and exponent fitting.
//!
//! Frequencies are angular wavenumbers `k = pi*m/L` of the torus `[-L, L)^n`,
//! so the bump radii 3/2 and 8/3 refer to `|k|`. The Nyquist mode of each
//! axis is treated as unresolved: derivative symbols vanish there, which keeps
//! `d∘d = 0` and the Hodge identity exact on the grid.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FormField, GridSpec, ScalarField};
use crate::real::Real;

/// Relative level below which a block counts as numerical noise.
pub const NOISE_FLOOR: f64 = 1e-13;

/// FFT plans and wavenumbers for one grid.
pub struct Fourier<T: Real> {
    spec: GridSpec,
    forward: Vec<Arc<dyn Fft<T>>>,
    inverse: Vec<Arc<dyn Fft<T>>>,
    /// Per-axis derivative wavenumbers (zero at Nyquist).
    wavenumbers: Vec<Vec<T>>,
    /// `|k|` per lattice point, Nyquist entries included.
    radius: Vec<T>,
}

fn cache() -> &'static Mutex<HashMap<(TypeId, &'static str, Vec<u64>), Arc<dyn Any + Send + Sync>>> {
    static CACHE: OnceLock<Mutex<HashMap<(TypeId, &'static str, Vec<u64>), Arc<dyn Any + Send + Sync>>>> =
        OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cache_key(spec: &GridSpec) -> Vec<u64> {
    let mut k: Vec<u64> = spec.sizes().iter().map(|&n| n as u64).collect();
    k.push(spec.half_width().to_bits());
    k
}

fn cached<V: Any + Send + Sync>(spec: &GridSpec, tag: &'static str, build: impl FnOnce() -> Result<V>) -> Result<Arc<V>> {
    let key = (TypeId::of::<V>(), tag, cache_key(spec));
    if let Some(v) = cache().lock().unwrap().get(&key) {
        return Ok(v.clone().downcast::<V>().expect("cache entry type"));
    }
    let v = Arc::new(build()?);
    cache().lock().unwrap().insert(key, v.clone());
    Ok(v)
}

fn signed_mode(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl<T: Real> Fourier<T> {
    /// Shared instance for a grid.
    pub fn for_spec(spec: &GridSpec) -> Result<Arc<Self>> {
        cached(spec, "fourier", || Ok(Self::build(spec)))
    }

    fn build(spec: &GridSpec) -> Self {
        let mut planner = FftPlanner::<T>::new();
        let forward = spec.sizes().iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = spec.sizes().iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let l = spec.half_width();
        let wavenumbers: Vec<Vec<T>> = spec
            .sizes()
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|i| if i == n / 2 { T::zero() } else { T::of(std::f64::consts::PI * signed_mode(i, n) as f64 / l) })
                    .collect()
            })
            .collect();
        let radius = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let ix = spec.unravel(idx);
                let r2: f64 = (0..spec.ndim())
                    .map(|a| {
                        let k = std::f64::consts::PI * signed_mode(ix[a], spec.sizes()[a]) as f64 / l;
                        k * k
                    })
                    .sum();
                T::of(r2.sqrt())
            })
            .collect();
        Self { spec: spec.clone(), forward, inverse, wavenumbers, radius }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// `|k|` at every lattice point in FFT order.
    pub fn radius(&self) -> &[T] {
        &self.radius
    }

    pub fn wavenumber(&self, axis: usize, idx: usize) -> T {
        let s = self.spec.stride(axis);
        self.wavenumbers[axis][(idx / s) % self.spec.sizes()[axis]]
    }

    /// Whether the lattice point sits on the Nyquist plane of some axis.
    pub fn on_nyquist(&self, idx: usize) -> bool {
        let ix = self.spec.unravel(idx);
        (0..self.spec.ndim()).any(|a| ix[a] == self.spec.sizes()[a] / 2)
    }

    fn transform(&self, data: &mut [Complex<T>], plans: &[Arc<dyn Fft<T>>]) {
        let spec = &self.spec;
        for (axis, plan) in plans.iter().enumerate() {
            let n = spec.sizes()[axis];
            let stride = spec.stride(axis);
            if stride == 1 {
                data.par_chunks_mut(n).for_each(|line| plan.process(line));
                continue;
            }
            let lines = data.len() / n;
            let mut tmp = vec![Complex::new(T::zero(), T::zero()); data.len()];
            {
                let src = &*data;
                tmp.par_chunks_mut(n).enumerate().for_each(|(l, line)| {
                    let base = (l / stride) * n * stride + l % stride;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = src[base + k * stride];
                    }
                    plan.process(line);
                });
            }
            data.par_iter_mut().enumerate().for_each(|(idx, v)| {
                let outer = idx / (n * stride);
                let k = (idx / stride) % n;
                let inner = idx % stride;
                *v = tmp[(outer * stride + inner) * n + k];
            });
            debug_assert_eq!(lines * n, data.len());
        }
    }

    pub fn forward(&self, f: &ScalarField<T>) -> Vec<Complex<T>> {
        let mut data: Vec<Complex<T>> = f.data().par_iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse transform keeping the real part.
    pub fn inverse(&self, mut data: Vec<Complex<T>>) -> ScalarField<T> {
        self.transform(&mut data, &self.inverse);
        let scale = T::one() / T::of(self.spec.len() as f64);
        ScalarField::from_fn(&self.spec, |i| data[i].re * scale)
    }

    /// Applies a complex symbol evaluated at each lattice index.
    pub fn apply<F>(&self, f: &ScalarField<T>, symbol: F) -> ScalarField<T>
    where
        F: Fn(usize) -> Complex<T> + Sync,
    {
        let mut hat = self.forward(f);
        hat.par_iter_mut().enumerate().for_each(|(i, v)| *v = *v * symbol(i));
        self.inverse(hat)
    }

    pub fn apply_real(&self, hat: &[Complex<T>], mult: &[T]) -> ScalarField<T> {
        let data = hat.par_iter().zip(mult).map(|(&v, &m)| v * m).collect();
        self.inverse(data)
    }

    /// Spectral partial derivative along `axis`.
    pub fn derivative(&self, f: &ScalarField<T>, axis: usize) -> ScalarField<T> {
        self.apply(f, |i| Complex::new(T::zero(), self.wavenumber(axis, i)))
    }

    /// Trigonometric interpolant on a grid `factor` times finer.
    ///
    /// Nyquist coefficients are split evenly between the two fine modes so the
    /// result stays real and agrees with `f` at the coarse nodes.
    pub fn upsample(&self, f: &ScalarField<T>, factor: usize) -> Result<ScalarField<T>> {
        let spec = &self.spec;
        let fine_sizes: Vec<usize> = spec.sizes().iter().map(|&n| n * factor).collect();
        let fine = GridSpec::new(&fine_sizes, spec.half_width())?;
        let hat = self.forward(f);
        let mut out = vec![Complex::new(T::zero(), T::zero()); fine.len()];
        let n = spec.ndim();
        for (idx, &v) in hat.iter().enumerate() {
            let ix = spec.unravel(idx);
            let mut targets: Vec<(usize, f64)> = vec![(0, 1.0)];
            for a in 0..n {
                let (nc, nf) = (spec.sizes()[a], fine_sizes[a]);
                let stride = fine.stride(a);
                let m = signed_mode(ix[a], nc);
                let modes: Vec<(i64, f64)> = if ix[a] == nc / 2 { vec![(m, 0.5), (-m, 0.5)] } else { vec![(m, 1.0)] };
                targets = targets
                    .iter()
                    .flat_map(|&(off, w)| modes.iter().map(move |&(mm, ww)| (off + mm.rem_euclid(nf as i64) as usize * stride, w * ww)))
                    .collect();
            }
            for (t, w) in targets {
                out[t] = out[t] + v * T::of(w);
            }
        }
        let scale = T::of((fine.len() / spec.len()) as f64);
        out.par_iter_mut().for_each(|v| *v = *v * scale);
        Ok(Fourier::for_spec(&fine)?.inverse(out))
    }

    /// Symbol of the positive Laplacian consistent with `derivative`.
    pub fn laplacian_symbol(&self, idx: usize) -> T {
        (0..self.spec.ndim()).map(|a| self.wavenumber(a, idx).powi(2)).sum()
    }

    /// Positive Laplacian `-Σ ∂²`.
    pub fn laplacian(&self, f: &ScalarField<T>) -> ScalarField<T> {
        self.apply(f, |i| Complex::new(self.laplacian_symbol(i), T::zero()))
    }
}

/// Radial profile of the low-pass bump: 1 up to 3/2, 0 from 8/3 on.
pub fn bump_profile(r: f64) -> f64 {
    const LO: f64 = 1.5;
    const HI: f64 = 8.0 / 3.0;
    if r <= LO {
        1.0
    } else if r >= HI {
        0.0
    } else {
        smooth_step((HI - r) / (HI - LO))
    }
}

/// C^∞ step from 0 at `t <= 0` to 1 at `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    let e = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let (a, b) = (e(t), e(1.0 - t));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

pub struct FilterBank<T: Real> {
    fourier: Arc<Fourier<T>>,
    jmax: usize,
    lowpass: Vec<OnceLock<Vec<T>>>,
}

impl<T: Real> FilterBank<T> {
    /// Shared bank for a grid; errors if fewer than two blocks fit.
    pub fn for_spec(spec: &GridSpec) -> Result<Arc<Self>> {
        cached(spec, "bank", || Self::build(spec))
    }

    fn build(spec: &GridSpec) -> Result<Self> {
        let jmax = top_block(spec)?;
        Ok(Self { fourier: Fourier::for_spec(spec)?, jmax, lowpass: (0..=jmax).map(|_| OnceLock::new()).collect() })
    }

    pub fn jmax(&self) -> usize {
        self.jmax
    }

    pub fn fourier(&self) -> &Fourier<T> {
        &self.fourier
    }

    pub fn spec(&self) -> &GridSpec {
        self.fourier.spec()
    }

    /// Multiplier of the low-pass filter at scale `2^j`; zero for negative `j`.
    pub fn lowpass(&self, j: i64) -> Vec<T> {
        if j < 0 {
            return vec![T::zero(); self.spec().len()];
        }
        let j = (j as usize).min(self.jmax);
        self.lowpass[j]
            .get_or_init(|| {
                let s = 0.5f64.powi(j as i32);
                self.fourier.radius().par_iter().map(|&r| T::of(bump_profile(r.as_f64() * s))).collect()
            })
            .clone()
    }

    /// Multiplier of block `j`: `lowpass(j) - lowpass(j-1)`.
    pub fn block_multiplier(&self, j: usize) -> Vec<T> {
        let hi = self.lowpass(j as i64);
        let lo = self.lowpass(j as i64 - 1);
        hi.iter().zip(&lo).map(|(&a, &b)| a - b).collect()
    }

    fn check_j(&self, j: usize) -> Result<()> {
        if j > self.jmax {
            Err(Error::OutOfRange(format!("block {j} above jmax = {}", self.jmax)))
        } else {
            Ok(())
        }
    }

    pub fn block(&self, f: &ScalarField<T>, j: usize) -> Result<ScalarField<T>> {
        self.check_j(j)?;
        f.spec().check_same(self.spec())?;
        Ok(self.fourier.apply_real(&self.fourier.forward(f), &self.block_multiplier(j)))
    }

    /// All blocks `0..=jmax` from a single forward transform.
    pub fn blocks(&self, f: &ScalarField<T>) -> Result<Vec<ScalarField<T>>> {
        f.spec().check_same(self.spec())?;
        let hat = self.fourier.forward(f);
        Ok((0..=self.jmax).into_par_iter().map(|j| self.fourier.apply_real(&hat, &self.block_multiplier(j))).collect())
    }

    /// Low-pass part `ψ_j * f`; zero for negative `j`.
    pub fn low(&self, f: &ScalarField<T>, j: i64) -> Result<ScalarField<T>> {
        f.spec().check_same(self.spec())?;
        if j < 0 {
            return Ok(ScalarField::zeros(f.spec()));
        }
        Ok(self.fourier.apply_real(&self.fourier.forward(f), &self.lowpass(j)))
    }

    /// Sup norm of every block.
    pub fn block_norms(&self, f: &ScalarField<T>) -> Result<Vec<T>> {
        f.spec().check_same(self.spec())?;
        let hat = self.fourier.forward(f);
        Ok((0..=self.jmax)
            .into_par_iter()
            .map(|j| self.fourier.apply_real(&hat, &self.block_multiplier(j)).max_abs())
            .collect())
    }

    /// Componentwise maximum of block norms.
    pub fn form_block_norms(&self, comps: &[ScalarField<T>]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.jmax + 1];
        for c in comps {
            for (o, b) in out.iter_mut().zip(self.block_norms(c)?) {
                *o = o.max(b);
            }
        }
        Ok(out)
    }
}

/// Largest block whose multiplier support fits below the Nyquist wavenumber.
pub fn top_block(spec: &GridSpec) -> Result<usize> {
    let n = *spec.sizes().iter().min().unwrap() as f64;
    let nyquist = std::f64::consts::PI * n / (2.0 * spec.half_width());
    let j = (nyquist * 3.0 / 8.0).log2().floor();
    if j < 1.0 {
        return Err(Error::InvalidGrid(format!("grid resolves {j} dyadic blocks; need at least two")));
    }
    Ok(j as usize)
}

fn weighted_sup<T: Real>(norms: &[T], s: f64) -> T {
    norms.iter().enumerate().map(|(j, &b)| b * T::of(2f64.powf(j as f64 * s))).fold(T::zero(), T::max)
}

/// `max(‖ψ₀*f‖, sup_j 2^{js}‖Δ_j f‖)` for any real `s`.
pub fn norm_dyadic<T: Real>(f: &ScalarField<T>, s: f64) -> Result<T> {
    let bank = FilterBank::for_spec(f.spec())?;
    Ok(weighted_sup(&bank.block_norms(f)?, s))
}

/// Dyadic norm of a form: maximum over components.
pub fn norm_dyadic_form<T: Real>(w: &FormField<T>, s: f64) -> Result<T> {
    let bank = FilterBank::for_spec(w.spec())?;
    Ok(weighted_sup(&bank.form_block_norms(w.components())?, s))
}

/// Shifts `m` with `|m_a| <= cap_a`, one representative per `±m` pair.
fn half_lattice(spec: &GridSpec, cap: Option<usize>) -> Vec<[i64; 3]> {
    let n = spec.ndim();
    let caps: Vec<i64> = spec.sizes().iter().map(|&s| cap.unwrap_or(s / 2).min(s / 2) as i64).collect();
    let mut out = Vec::new();
    let mut m = [0i64; 3];
    fn rec(a: usize, n: usize, caps: &[i64], m: &mut [i64; 3], out: &mut Vec<[i64; 3]>) {
        if a == n {
            if let Some(first) = m[..n].iter().find(|&&v| v != 0) {
                if *first > 0 {
                    out.push(*m);
                }
            }
            return;
        }
        for v in -caps[a]..=caps[a] {
            m[a] = v;
            rec(a + 1, n, caps, m, out);
        }
    }
    rec(0, n, &caps, &mut m, &mut out);
    out
}

fn shift_index(spec: &GridSpec, idx: usize, m: &[i64; 3], times: i64) -> usize {
    let mut j = idx;
    for a in 0..spec.ndim() {
        if m[a] != 0 {
            j = spec.shifted(j, a, (m[a] * times) as isize);
        }
    }
    j
}

fn shift_length(spec: &GridSpec, m: &[i64; 3]) -> f64 {
    (0..spec.ndim()).map(|a| (m[a] as f64 * spec.spacing(a)).powi(2)).sum::<f64>().sqrt()
}

/// Second-difference Zygmund norm for `0 < s < 2`.
///
/// `max_shift` caps the lattice shifts per axis; `None` scans all of them.
pub fn norm_diff2<T: Real>(f: &ScalarField<T>, s: f64, max_shift: Option<usize>) -> Result<f64> {
    if !(s > 0.0 && s < 2.0) {
        return Err(Error::OutOfRange(format!("second-difference order {s} outside (0, 2)")));
    }
    let spec = f.spec();
    let d = f.data();
    let sup = half_lattice(spec, max_shift)
        .par_iter()
        .map(|m| {
            let worst = (0..spec.len())
                .map(|i| {
                    let a = d[shift_index(spec, i, m, 2)].as_f64();
                    let b = d[shift_index(spec, i, m, 1)].as_f64();
                    (a - 2.0 * b + d[i].as_f64()).abs()
                })
                .fold(0.0, f64::max);
            worst / shift_length(spec, m).powf(s)
        })
        .reduce(|| 0.0, f64::max);
    Ok(f.max_abs().as_f64() + sup)
}

/// First-difference Hölder norm for `0 < s < 1`.
pub fn norm_holder<T: Real>(f: &ScalarField<T>, s: f64, max_shift: Option<usize>) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::OutOfRange(format!("Hölder order {s} outside (0, 1)")));
    }
    let spec = f.spec();
    let d = f.data();
    let sup = half_lattice(spec, max_shift)
        .par_iter()
        .map(|m| {
            let worst = (0..spec.len())
                .map(|i| (d[shift_index(spec, i, m, 1)].as_f64() - d[i].as_f64()).abs())
                .fold(0.0, f64::max);
            worst / shift_length(spec, m).powf(s)
        })
        .reduce(|| 0.0, f64::max);
    Ok(f.max_abs().as_f64() + sup)
}

/// Negative-order norm with the witness `f = g0 + Σ ∂_j g_j`.
pub struct NegativeNorm<T> {
    pub value: T,
    pub g0: ScalarField<T>,
    pub g: Vec<ScalarField<T>>,
}

pub fn norm_negative<T: Real>(f: &ScalarField<T>, s: f64) -> Result<NegativeNorm<T>> {
    if s > 0.0 {
        return Err(Error::OutOfRange(format!("negative-order norm asked for s = {s}")));
    }
    let four = Fourier::for_spec(f.spec())?;
    let g0 = four.apply(f, |i| Complex::new(T::one() / (T::one() + four.laplacian_symbol(i)), T::zero()));
    let g = (0..f.spec().ndim()).map(|a| four.derivative(&g0, a).scale(-T::one())).collect();
    Ok(NegativeNorm { value: norm_dyadic(f, s)?, g0, g })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub block_norms: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub diff2: Vec<f64>,
    /// `None` when the spectrum sinks into the noise floor inside the window.
    pub exponent: Option<f64>,
    pub window: (usize, usize),
    pub residual: f64,
    pub smooth: bool,
    pub convention: String,
}

impl RegularityReport {
    /// Fits `log2 ‖Δ_j f‖ = c - s*j` over the window.
    pub fn from_blocks(block_norms: Vec<f64>, magnitude: f64, window: (usize, usize)) -> Result<Self> {
        let (lo, hi) = window;
        if lo > hi || hi >= block_norms.len() || hi - lo < 2 {
            return Err(Error::OutOfRange(format!("fit window ({lo}, {hi}) with {} blocks", block_norms.len())));
        }
        let floor = NOISE_FLOOR * magnitude;
        let usable: Vec<(f64, f64)> =
            (lo..=hi).filter(|&j| block_norms[j] > floor).map(|j| (j as f64, block_norms[j].log2())).collect();
        let smooth = usable.len() < 3 || block_norms[hi] <= floor;
        let mut report = Self {
            block_norms,
            s_grid: vec![],
            diff2: vec![],
            exponent: None,
            window,
            residual: 0.0,
            smooth,
            convention: "angular wavenumber k = pi*m/L".into(),
        };
        if !smooth {
            let (slope, intercept) = least_squares(&usable);
            report.exponent = Some(-slope);
            let ss: f64 = usable.iter().map(|&(x, y)| (y - intercept - slope * x).powi(2)).sum();
            report.residual = (ss / usable.len() as f64).sqrt();
        }
        Ok(report)
    }

    /// Adds second-difference norms over an order grid.
    pub fn with_diff2<T: Real>(mut self, f: &ScalarField<T>, s_grid: &[f64], max_shift: Option<usize>) -> Result<Self> {
        self.diff2 = s_grid.iter().map(|&s| norm_diff2(f, s, max_shift)).collect::<Result<_>>()?;
        self.s_grid = s_grid.to_vec();
        Ok(self)
    }
}

/// Slope and intercept of the least-squares line.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Default fit window: the four finest blocks below the top one.
///
/// Lower blocks of compactly supported test data are dominated by the smooth
/// envelope (cutoffs, global shape) and bias the slope.
pub fn default_window(jmax: usize) -> (usize, usize) {
    let hi = jmax.saturating_sub(1);
    (hi.saturating_sub(3), hi)
}

pub fn fit_exponent<T: Real>(f: &ScalarField<T>, window: Option<(usize, usize)>) -> Result<RegularityReport> {
    fit_exponent_many(std::slice::from_ref(f), window)
}

/// Joint fit over several components (forms, matrices, vector fields).
pub fn fit_exponent_many<T: Real>(comps: &[ScalarField<T>], window: Option<(usize, usize)>) -> Result<RegularityReport> {
    let spec = comps.first().ok_or_else(|| Error::OutOfRange("no components to fit".into()))?.spec();
    let bank = FilterBank::for_spec(spec)?;
    let norms: Vec<f64> = bank.form_block_norms(comps)?.into_iter().map(Real::as_f64).collect();
    let mag = comps.iter().map(|c| c.max_abs().as_f64()).fold(0.0, f64::max);
    RegularityReport::from_blocks(norms, mag, window.unwrap_or_else(|| default_window(bank.jmax())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize) -> GridSpec {
        GridSpec::cube(1, n, 2.0).unwrap()
    }

    /// Real trigonometric polynomial with modes `|m| <= mcap` per axis.
    pub(crate) fn random_bandlimited(spec: &GridSpec, mcap: i64, seed: u64) -> ScalarField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.ndim();
        let l = spec.half_width();
        let mut terms = Vec::new();
        for _ in 0..12 {
            let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-mcap..=mcap) as f64).collect();
            terms.push((m, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU)));
        }
        ScalarField::sample(spec, |x| {
            terms
                .iter()
                .map(|(m, a, p)| a * (std::f64::consts::PI / l * m.iter().zip(x).map(|(m, x)| m * x).sum::<f64>() + p).cos())
                .sum()
        })
        .unwrap()
    }

    fn cutoff(r: f64) -> f64 {
        smooth_step((0.9 - r) / 0.4)
    }

    fn cusp(n: usize, sigma: f64) -> ScalarField<f64> {
        ScalarField::sample(&grid1(n), |x| x[0].max(0.0).powf(sigma) * cutoff(x[0].abs())).unwrap()
    }

    #[test]
    fn jmax_by_lattice_enumeration() {
        // Oracle: the largest |k| on the lattice of N = 256 below Nyquist, by enumeration.
        let spec = grid1(256);
        let kmax = (0..256).map(|i| (std::f64::consts::PI * signed_mode(i, 256) as f64 / 2.0).abs()).fold(0.0, f64::max);
        let mut j = 0;
        while 8.0 / 3.0 * 2f64.powi(j + 1) <= kmax {
            j += 1;
        }
        assert_eq!(top_block(&spec).unwrap(), j as usize);
        assert!(j >= 4);
        assert_eq!(top_block(&GridSpec::cube(2, 1024, 2.0).unwrap()).unwrap(), 8);
    }

    #[test]
    fn bump_plateau_and_support() {
        assert_eq!(bump_profile(0.0), 1.0);
        assert_eq!(bump_profile(1.5), 1.0);
        assert_eq!(bump_profile(8.0 / 3.0), 0.0);
        let bank = FilterBank::<f64>::for_spec(&GridSpec::cube(2, 64, 2.0).unwrap()).unwrap();
        let psi0 = bank.lowpass(0);
        for (r, p) in bank.fourier().radius().iter().zip(&psi0) {
            if *r <= 1.5 {
                assert_eq!(*p, 1.0);
            }
            if *r >= 8.0 / 3.0 {
                assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn telescoping_is_exact() {
        for spec in [grid1(256), GridSpec::cube(2, 128, 2.0).unwrap()] {
            let bank = FilterBank::<f64>::for_spec(&spec).unwrap();
            let mut acc = vec![0.0; spec.len()];
            for j in 0..=bank.jmax() {
                for (a, m) in acc.iter_mut().zip(bank.block_multiplier(j)) {
                    *a += m;
                }
            }
            assert_eq!(acc, bank.lowpass(bank.jmax() as i64));
        }
    }

    #[test]
    fn constant_and_zero_blocks() {
        let spec = grid1(128);
        let bank = FilterBank::<f64>::for_spec(&spec).unwrap();
        let c = ScalarField::constant(&spec, 3.0);
        let b = bank.blocks(&c).unwrap();
        assert!(b[0].data().iter().all(|v| (v - 3.0).abs() < 1e-14));
        for blk in &b[1..] {
            assert!(blk.max_abs() < 1e-14);
        }
        assert!(bank.block_norms(&ScalarField::zeros(&spec)).unwrap().iter().all(|&v| v == 0.0));
        assert!(bank.block(&c, bank.jmax() + 1).is_err());
    }

    #[test]
    fn pure_mode_lands_in_predicted_blocks() {
        let spec = grid1(512);
        let bank = FilterBank::<f64>::for_spec(&spec).unwrap();
        for j0 in 0..bank.jmax() - 1 {
            // |k| = 2^{j0} * 2, lattice mode m = k L / pi rounded.
            let m = (2f64.powi(j0 as i32) * 2.0 * 2.0 / std::f64::consts::PI).round();
            let k = std::f64::consts::PI * m / 2.0;
            let f = ScalarField::sample(&spec, |x| (k * x[0]).cos()).unwrap();
            let norms = bank.block_norms(&f).unwrap();
            for (j, &v) in norms.iter().enumerate() {
                // Oracle: multiplier value at k, evaluated directly from the profile.
                let expect = bump_profile(k / 2f64.powi(j as i32))
                    - if j == 0 { 0.0 } else { bump_profile(k / 2f64.powi(j as i32 - 1)) };
                assert!((v - expect.abs()).abs() < 1e-12, "j0 {j0} j {j}: {v} vs {expect}");
                if v > 1e-12 {
                    assert!(j + 1 >= j0.max(1) && j <= j0 + 2, "mode at 2^{j0}*2 leaked into block {j}");
                }
            }
        }
    }

    #[test]
    fn dyadic_norm_of_constants() {
        let spec = grid1(64);
        assert_eq!(norm_dyadic(&ScalarField::<f64>::zeros(&spec), 0.7).unwrap(), 0.0);
        for s in [-1.0, 0.0, 0.5, 1.7] {
            assert!((norm_dyadic(&ScalarField::<f64>::constant(&spec, 1.0), s).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cusp_block_norms_scale_like_the_exponent() {
        let f = cusp(4096, 0.7);
        let bank = FilterBank::for_spec(f.spec()).unwrap();
        let norms = bank.block_norms(&f).unwrap();
        let (lo, hi) = default_window(bank.jmax());
        let w: Vec<f64> = (lo..=hi).map(|j| 2f64.powf(0.7 * j as f64) * norms[j]).collect();
        let ratio = w.iter().cloned().fold(0.0, f64::max) / w.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(ratio < 4.0, "ratio {ratio}");
    }

    #[test]
    fn diff2_of_quadratic_on_plateau() {
        let spec = grid1(64);
        let f = ScalarField::<f64>::sample(&spec, |x| x[0] * x[0] * cutoff(x[0].abs())).unwrap();
        let h = spec.spacing(0);
        let i = spec.ravel(&[30]);
        for m in 1..4 {
            let d = f.get(i + 2 * m) - 2.0 * f.get(i + m) + f.get(i);
            assert!((d - 2.0 * (m as f64 * h).powi(2)).abs() < 1e-14);
        }
        assert_eq!(norm_diff2(&ScalarField::<f64>::zeros(&spec), 1.0, None).unwrap(), 0.0);
        assert!(norm_diff2(&f, 2.0, None).is_err());
    }

    #[test]
    fn diff2_detects_excess_order_on_cusp() {
        // Oracle: the second difference at x = 0 along +x is (2^σ - 2) h^σ exactly, so the
        // seminorm part grows like h^{σ-s} under refinement.
        let semi = |n: usize, s: f64| {
            let f = cusp(n, 0.7);
            norm_diff2(&f, s, None).unwrap() - f.max_abs()
        };
        let growth = semi(4096, 0.9) / semi(1024, 0.9);
        assert!((growth / 4f64.powf(0.2) - 1.0).abs() < 0.05, "growth {growth}");
        let stable = semi(4096, 0.7) / semi(2048, 0.7);
        assert!((stable - 1.0).abs() < 0.1, "{stable}");
    }

    #[test]
    fn holder_norm_constant_and_linear() {
        let spec = grid1(64);
        let c = ScalarField::<f64>::constant(&spec, 2.5);
        assert_eq!(norm_holder(&c, 0.5, None).unwrap(), 2.5);
        assert_eq!(norm_holder(&ScalarField::<f64>::zeros(&spec), 0.5, None).unwrap(), 0.0);
        // Brute force over all pairs on a coarse grid, torus distance.
        let spec = grid1(32);
        let f = ScalarField::<f64>::sample(&spec, |x| x[0] * cutoff(x[0].abs())).unwrap();
        let h = spec.spacing(0);
        let mut brute: f64 = 0.0;
        for i in 0..32 {
            for j in 0..32 {
                if i != j {
                    let dist = ((i as i64 - j as i64).rem_euclid(32).min((j as i64 - i as i64).rem_euclid(32))) as f64 * h;
                    brute = brute.max((f.get(i) - f.get(j)).abs() / dist.sqrt());
                }
            }
        }
        let got = norm_holder(&f, 0.5, None).unwrap();
        assert!((got - (f.max_abs() + brute)).abs() < 1e-12);
    }

    #[test]
    fn negative_norm_witness_reconstructs() {
        let spec = GridSpec::cube(2, 64, 2.0).unwrap();
        let f = random_bandlimited(&spec, 10, 3);
        let w = norm_negative(&f, -0.5).unwrap();
        let four = Fourier::for_spec(&spec).unwrap();
        let mut rec = w.g0.clone();
        for (a, g) in w.g.iter().enumerate() {
            rec.axpy(1.0, &four.derivative(g, a)).unwrap();
        }
        let err = rec.sub(&f).unwrap().max_abs() / f.max_abs();
        assert!(err < 1e-10, "{err}");
        let bump = ScalarField::<f64>::sample(&spec, |x| (-(x[0] * x[0] + x[1] * x[1]) * 8.0).exp()).unwrap();
        assert!(norm_negative(&bump, -0.5).unwrap().value <= norm_dyadic(&bump, 0.0).unwrap());
    }

    #[test]
    fn spike_norms_flat_in_j() {
        let spike = |n: usize| {
            let spec = grid1(n);
            let mut f = ScalarField::<f64>::zeros(&spec);
            f.data_mut()[n / 2] = 1.0;
            f
        };
        let neg = norm_negative(&spike(1024), -0.5).unwrap().value;
        assert!(neg.is_finite() && neg > 0.0);
        let p1 = norm_dyadic(&spike(1024), 0.5).unwrap();
        let p2 = norm_dyadic(&spike(4096), 0.5).unwrap();
        assert!(p2 > 1.5 * p1, "{p1} {p2}");
    }

    #[test]
    fn fit_recovers_cusp_exponents() {
        for sigma in [0.4, 1.3] {
            let r = fit_exponent(&cusp(4096, sigma), None).unwrap();
            let e = r.exponent.unwrap();
            assert!((e - sigma).abs() <= 0.1, "sigma {sigma}: {e}");
        }
    }

    #[test]
    fn gaussian_is_smooth_beyond_resolution() {
        let f = ScalarField::<f64>::sample(&grid1(4096), |x| (-x[0] * x[0] / (2.0 * 0.04)).exp()).unwrap();
        let r = fit_exponent(&f, None).unwrap();
        assert!(r.smooth && r.exponent.is_none());
    }

    #[test]
    fn report_json_shape() {
        let r = fit_exponent(&cusp(1024, 0.7), None).unwrap().with_diff2(&cusp(1024, 0.7), &[0.5], Some(8)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["block_norms", "s_grid", "diff2", "exponent", "window", "residual"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn single_precision_bank_agrees() {
        let f = cusp(1024, 0.7);
        let r64 = fit_exponent(&f, None).unwrap().exponent.unwrap();
        let r32 = fit_exponent(&f.cast::<f32>(), None).unwrap().exponent.unwrap();
        assert!((r64 - r32).abs() < 0.02);
    }

    #[test]
    fn upsample_agrees_at_coarse_nodes_and_with_band_limited_data() {
        let spec = GridSpec::new(&[16, 32], 2.0).unwrap();
        let k = std::f64::consts::PI / 2.0;
        let rule = |x: &[f64]| (k * x[0]).sin() * (2.0 * k * x[1]).cos() + (4.0 * k * x[0]).cos();
        let f = ScalarField::<f64>::sample(&spec, rule).unwrap();
        let four = Fourier::for_spec(&spec).unwrap();
        let up = four.upsample(&f, 4).unwrap();
        let err = (0..up.spec().len()).map(|i| (up.get(i) - rule(&up.spec().node(i))).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        let fine = up.spec().clone();
        let coarse_err = (0..spec.len())
            .map(|i| {
                let ix = spec.unravel(i);
                (f.get(i) - up.get(fine.ravel(&[4 * ix[0], 4 * ix[1]]))).abs()
            })
            .fold(0.0, f64::max);
        assert!(coarse_err < 1e-12, "{coarse_err}");
    }

    #[test]
    fn derivative_of_sine() {
        let spec = grid1(64);
        let k = std::f64::consts::PI;
        let f = ScalarField::<f64>::sample(&spec, |x| (k * x[0]).sin()).unwrap();
        let d = Fourier::for_spec(&spec).unwrap().derivative(&f, 0);
        let exact = ScalarField::sample(&spec, |x| k * (k * x[0]).cos()).unwrap();
        assert!(d.sub(&exact).unwrap().max_abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn dyadic_norm_monotone_in_s(seed in 0u64..500, s in -1.0f64..2.0, ds in 0.0f64..1.0) {
            let f = random_bandlimited(&grid1(256), 60, seed);
            prop_assert!(norm_dyadic(&f, s).unwrap() <= norm_dyadic(&f, s + ds).unwrap());
        }

        #[test]
        fn blocks_sum_to_top_lowpass(seed in 0u64..500) {
            let spec = GridSpec::cube(2, 32, 2.0).unwrap();
            let f = random_bandlimited(&spec, 12, seed);
            let bank = FilterBank::for_spec(&spec).unwrap();
            let mut acc = ScalarField::zeros(&spec);
            for b in bank.blocks(&f).unwrap() {
                acc.axpy(1.0, &b).unwrap();
            }
            let top = bank.low(&f, bank.jmax() as i64).unwrap();
            prop_assert!(acc.sub(&top).unwrap().max_abs() < 1e-12 * f.max_abs().max(1.0));
        }

        #[test]
        fn diff2_dyadic_equivalence(seed in 0u64..10_000, si in 0usize..3) {
            let s = [0.5, 1.0, 1.5][si];
            let f = random_bandlimited(&grid1(256), 40, seed);
            let r = norm_diff2(&f, s, None).unwrap() / norm_dyadic(&f, s).unwrap();
            prop_assert!((1.0 / 50.0..=50.0).contains(&r), "ratio {}", r);
        }
    }
}
