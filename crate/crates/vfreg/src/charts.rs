//! Flows of frames and the charts built from them: canonical coordinates,
//! the ray equation for the pulled-back frame, dilation to small data and
//! harmonic coordinates.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{BallMask, BallOperator, CG_TOL};
use crate::error::{Error, Result};
use crate::exterior::{ext_d, fd_partial, interp, DiffeoGrid};
use crate::spectral::{norm_dyadic, norm_dyadic_form, smooth_step};
use crate::{FormField, Frame, GridSpec, MatrixField, ScalarField, VectorField};

/// A frame given pointwise: `eval(x, out)` writes field `i`, component `a`
/// to `out[i * dim + a]`.
pub trait FrameRule: Sync {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);

    fn field_at(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; self.count() * n];
        self.eval(x, &mut out);
        out[i * n..(i + 1) * n].to_vec()
    }
}

/// Frame from a closure.
pub struct RuleFrame<F> {
    dim: usize,
    count: usize,
    rule: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> RuleFrame<F> {
    pub fn new(dim: usize, count: usize, rule: F) -> Self {
        Self { dim, count, rule }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FrameRule for RuleFrame<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.count
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.rule)(x, out)
    }
}

/// Grid frame read through cubic interpolation.
pub struct GridFrame<'a>(pub &'a Frame);

impl FrameRule for GridFrame<'_> {
    fn dim(&self) -> usize {
        self.0.spec().ndim()
    }
    fn count(&self) -> usize {
        self.0.q()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (i, f) in self.0.fields().iter().enumerate() {
            for (a, c) in f.components().iter().enumerate() {
                out[i * n + a] = interp(c, x);
            }
        }
    }
}

/// `f(y) = α max(0, y)^{α-1}`, with `f(0) = 0` also at `α = 1`.
pub fn cusp_rate(alpha: f64, y: f64) -> f64 {
    if y > 0.0 {
        alpha * y.powf(alpha - 1.0)
    } else {
        0.0
    }
}

/// The frame `X = ∂x`, `Y = x f(y) ∂x + ∂y` with `f = cusp_rate(α, ·)`.
/// `[X, Y] = f X`, so the only structure coefficients are `c_12^1 = -c_21^1 = f`.
#[derive(Clone, Copy, Debug)]
pub struct CuspFrame {
    pub alpha: f64,
}

impl FrameRule for CuspFrame {
    fn dim(&self) -> usize {
        2
    }
    fn count(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = x[0] * cusp_rate(self.alpha, x[1]);
        out[3] = 1.0;
    }
}

impl CuspFrame {
    /// Structure coefficients at a point, `c[(i*2 + k)*2 + j] = c_ik^j`.
    pub fn structure(&self, x: &[f64]) -> Vec<f64> {
        let f = cusp_rate(self.alpha, x[1]);
        vec![0.0, 0.0, f, 0.0, -f, 0.0, 0.0, 0.0]
    }

    /// Coefficients of the dual coframe `λ¹ = dx - x f dy`, `λ² = dy`,
    /// as `A[k][i]` with `λ^k = dx^k + Σ_i A[k][i] dx^i`.
    pub fn coframe_coefficients(&self, spec: &GridSpec) -> Result<MatrixField> {
        let mut a = MatrixField::zeros(spec, 2, 2);
        *a.get_mut(0, 1) = ScalarField::sample(spec, |x| -x[0] * cusp_rate(self.alpha, x[1]))?;
        Ok(a)
    }
}

/// The rotation frame `X = cos θ ∂x + sin θ ∂y`, `Y = -sin θ ∂x + cos θ ∂y`.
pub struct RotationFrame<F> {
    pub angle: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FrameRule for RotationFrame<F> {
    fn dim(&self) -> usize {
        2
    }
    fn count(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = (self.angle)(x).sin_cos();
        out.copy_from_slice(&[c, s, -s, c]);
    }
}

/// Samples a frame rule on the grid.
pub fn sample_frame(rule: &dyn FrameRule, spec: &GridSpec) -> Result<Frame> {
    let n = spec.ndim();
    let q = rule.count();
    let vals: Vec<Vec<f64>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; q * n];
            rule.eval(&spec.node(i)[..n], &mut out);
            out
        })
        .collect();
    let fields = (0..q)
        .map(|f| VectorField::new((0..n).map(|a| ScalarField::new(spec.clone(), vals.iter().map(|v| v[f * n + a]).collect())).collect::<Result<_>>()?))
        .collect::<Result<_>>()?;
    Frame::new(fields, None)
}

// ---------------------------------------------------------------------------
// Canonical profile of the cusp frame.

/// `∫_0^s e^{-ρ^α} dρ` for `s ≥ 0`, by its power series.
fn damped_integral(alpha: f64, s: f64) -> f64 {
    let mut sum = 0.0;
    let mut fact = 1.0;
    let sa = s.powf(alpha);
    let mut pow = s;
    for k in 0..200 {
        if k > 0 {
            fact *= k as f64;
            pow *= -sa;
        }
        let term = pow / (fact * (k as f64 * alpha + 1.0));
        sum += term;
        if term.abs() < 1e-17 * sum.abs() && k > 3 {
            break;
        }
    }
    sum
}

/// `g(s)` with `Φ(t, s) = (t g(s), s)` the canonical chart of `CuspFrame`
/// at the origin: `e^{s^α}/s ∫_0^s e^{-ρ^α} dρ` for `s > 0`, 1 otherwise.
pub fn canonical_profile(alpha: f64, s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else {
        s.powf(alpha).exp() * damped_integral(alpha, s) / s
    }
}

/// `g'(s)`, from `s g' = (s^α)' s g + 1 - g`; zero for `s ≤ 0`.
pub fn canonical_profile_slope(alpha: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let g = canonical_profile(alpha, s);
    cusp_rate(alpha, s) * g + (1.0 - g) / s
}

/// Leading coefficient `c` of `g(s) = 1 + c s^α + O(s^{2α})`.
pub fn canonical_series_coefficient(alpha: f64) -> f64 {
    alpha / (alpha + 1.0)
}

// ---------------------------------------------------------------------------
// Flows.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub step: f64,
    /// Integrate `dE/dr = r Σ tⁱXᵢ(E)` instead of `dE/dr = Σ tⁱXᵢ(E)`.
    /// The weighted curve reaches `e^{(t·X)/2}p` at `r = 1`.
    pub weighted: bool,
    /// Trajectories leaving the cube `|x|_∞ ≤ bound` fail.
    pub bound: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { step: 1e-3, weighted: false, bound: f64::INFINITY }
    }
}

/// Classical RK4 for `y' = f(r, y)` from `r = 0` to `r = end` in `steps` steps.
fn rk4<F>(rhs: F, y: &mut [f64], end: f64, steps: usize) -> Result<()>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let m = y.len();
    let h = end / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for s in 0..steps {
        let r = s as f64 * h;
        rhs(r, y, &mut k1)?;
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(r + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(r + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..m {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(r + h, &tmp, &mut k4)?;
        for i in 0..m {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(())
}

/// `e^{t·X}(p)`: the time-one point of the flow of `Σ tⁱXᵢ` from `p`.
pub fn flow(frame: &dyn FrameRule, p: &[f64], t: &[f64], opts: &FlowOptions) -> Result<Vec<f64>> {
    let n = frame.dim();
    if p.len() != n || t.len() != frame.count() {
        return Err(Error::Degree(format!("point of length {} and times of length {} for {} fields in dimension {n}", p.len(), t.len(), frame.count())));
    }
    if !(opts.step > 0.0 && opts.step <= 1.0) {
        return Err(Error::OutOfRange(format!("flow step {}", opts.step)));
    }
    let steps = (1.0 / opts.step).round().max(1.0) as usize;
    let buf = RefCell::new(vec![0.0; n * frame.count()]);
    let mut y = p.to_vec();
    let rhs = |r: f64, x: &[f64], out: &mut [f64]| -> Result<()> {
        if x.iter().any(|v| !v.is_finite() || v.abs() > opts.bound) {
            return Err(Error::Flow(format!("trajectory from {p:?} left the domain near {x:?}")));
        }
        let mut vals = buf.borrow_mut();
        frame.eval(x, &mut vals);
        let w = if opts.weighted { r } else { 1.0 };
        for a in 0..n {
            out[a] = w * t.iter().enumerate().map(|(i, ti)| ti * vals[i * n + a]).sum::<f64>();
        }
        Ok(())
    };
    rk4(rhs, &mut y, 1.0, steps)?;
    if y.iter().any(|v| !v.is_finite() || v.abs() > opts.bound) {
        return Err(Error::Flow(format!("trajectory from {p:?} ends outside the domain at {y:?}")));
    }
    Ok(y)
}

/// Canonical coordinates `Φ_p(t) = e^{t·X}(p)` sampled at the nodes with
/// `|t| < radius`; other nodes carry the identity and are outside the region.
///
/// The returned map sends chart coordinates to the manifold, so
/// `pushforward_vf_with` on it gives `Φ^*X`.
pub fn canonical_chart(frame: &dyn FrameRule, p: &[f64], radius: f64, spec: &GridSpec, opts: &FlowOptions) -> Result<DiffeoGrid> {
    let n = spec.ndim();
    if frame.dim() != n || frame.count() != n {
        return Err(Error::Degree(format!("canonical chart needs {n} fields in dimension {n}")));
    }
    let region: Vec<bool> = (0..spec.len()).map(|i| spec.radius(i) < radius).collect();
    let pts: Vec<Result<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let t = &spec.node(i)[..n];
            if region[i] {
                flow(frame, p, t, opts)
            } else {
                Ok(t.to_vec())
            }
        })
        .collect();
    let pts = pts.into_iter().collect::<Result<Vec<_>>>()?;
    let phi = (0..n).map(|a| ScalarField::new(spec.clone(), pts.iter().map(|v| v[a]).collect())).collect::<Result<_>>()?;
    DiffeoGrid::from_inverse(phi, region)
}

/// `A` with `Φ^*Xᵢ = Σ_j (δ + A)_{ij} ∂_j` from a chart, on its region.
pub fn chart_coefficients(chart: &DiffeoGrid, frame: &dyn FrameRule) -> Result<MatrixField> {
    let n = chart.spec().ndim();
    let mut entries = vec![];
    for i in 0..n {
        let y = crate::exterior::pushforward_vf_with(chart, |x| frame.field_at(i, x))?;
        for (j, c) in y.into_components().into_iter().enumerate() {
            let region = chart.region();
            entries.push(ScalarField::from_fn(chart.spec(), |idx| {
                if region[idx] {
                    c.get(idx) - f64::from(u8::from(i == j))
                } else {
                    0.0
                }
            }));
        }
    }
    MatrixField::new(n, n, entries)
}

// ---------------------------------------------------------------------------
// Ray equation.

/// Options for `ray_coefficients`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayOptions {
    /// Step in `|x|`.
    pub step: f64,
    /// Nodes with `|x| < radius` are integrated; others get 0.
    pub radius: f64,
    /// `‖A‖` beyond which the integration is declared to blow up.
    pub blowup: f64,
}

impl Default for RayOptions {
    fn default() -> Self {
        Self { step: 1e-3, radius: 1.0, blowup: 1e6 }
    }
}

/// Integrates `∂_r(r A(rθ)) = -A² - C A - C` along the ray through each node,
/// where `C(x)_i^j = Σ_k x_k c_ik^j(Φ(x))` and `A(0) = 0`.
///
/// `structure(x)` returns `c_ik^j` at the chart point `x` (already composed
/// with the chart), indexed `(i*n + k)*n + j`. Writing `x = ρx₀` and
/// `W = ρ A(ρx₀)` the equation reads `W' = -(W/ρ)² - Ĉ W - ρĈ` with
/// `Ĉ_i^j = Σ_k x₀_k c_ik^j(ρx₀)`, regular at `ρ = 0`.
pub fn ray_coefficients<C>(structure: C, spec: &GridSpec, opts: &RayOptions) -> Result<MatrixField>
where
    C: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = spec.ndim();
    let solved: Vec<Result<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let r0 = spec.radius(idx);
            if r0 >= opts.radius || r0 == 0.0 {
                return Ok(vec![0.0; n * n]);
            }
            let x0 = &spec.node(idx)[..n];
            let steps = (r0 / opts.step).ceil().max(1.0) as usize;
            let mut w = vec![0.0; n * n];
            let rhs = |rho: f64, w: &[f64], out: &mut [f64]| -> Result<()> {
                let size = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if !size.is_finite() || size > opts.blowup * rho.max(1e-300) {
                    return Err(Error::Flow(format!("ray equation blows up at radius {:.4}", rho * r0)));
                }
                let x: Vec<f64> = x0.iter().map(|v| rho * v).collect();
                let c = structure(&x);
                let mut ch = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        ch[i * n + j] = (0..n).map(|k| x0[k] * c[(i * n + k) * n + j]).sum();
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let quad = if rho > 0.0 { (0..n).map(|l| w[i * n + l] * w[l * n + j]).sum::<f64>() / (rho * rho) } else { 0.0 };
                        let lin: f64 = (0..n).map(|l| ch[i * n + l] * w[l * n + j]).sum();
                        out[i * n + j] = -quad - lin - rho * ch[i * n + j];
                    }
                }
                Ok(())
            };
            rk4(rhs, &mut w, 1.0, steps)?;
            Ok(w)
        })
        .collect();
    let solved = solved.into_iter().collect::<Result<Vec<_>>>()?;
    MatrixField::new(n, n, (0..n * n).map(|e| ScalarField::new(spec.clone(), solved.iter().map(|v| v[e]).collect())).collect::<Result<_>>()?)
}

/// Largest `‖A(x)‖_∞ / |x|` over nodes with `0 < |x| < radius`.
pub fn linear_growth(a: &MatrixField, radius: f64) -> f64 {
    let spec = a.spec();
    (0..spec.len())
        .filter(|&i| spec.radius(i) > 0.0 && spec.radius(i) < radius)
        .map(|i| a.at(i).iter().map(|v| v.abs()).fold(0.0, f64::max) / spec.radius(i))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Dilation to small data.

/// Cutoff equal to 1 on the third ball and 0 from radius 0.45 on.
pub fn inner_cutoff(r: f64) -> f64 {
    const LO: f64 = 1.0 / 3.0;
    const HI: f64 = 0.45;
    smooth_step((HI - r) / (HI - LO))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub target: f64,
    /// Radius the coframe is given on; the search starts at `κ = mu0`.
    pub mu0: f64,
}

#[derive(Clone, Debug)]
pub struct Scaled {
    /// `λ^k = dx^k + Σ_i A[k][i] dx^i`.
    pub coefficients: MatrixField,
    pub kappa: f64,
    pub smallness: f64,
    /// Linear change `T^{-1}` applied so that the coframe is `dx` at the origin.
    pub normalization: Vec<f64>,
    /// `(κ, smallness)` for every scale tried.
    pub history: Vec<(f64, f64)>,
}

/// `Σ_k ‖λ^k - dx^k‖_{C^α} + ‖dλ^k‖_{C^{β-1}}` with dyadic norms.
pub fn smallness(coefficients: &MatrixField, alpha: f64, beta: f64) -> Result<f64> {
    let n = coefficients.rows();
    let mut total = 0.0;
    for k in 0..n {
        let row = FormField::new(1, (0..n).map(|i| coefficients.get(k, i).clone()).collect())?;
        total += norm_dyadic_form(&row, alpha)? + norm_dyadic_form(&ext_d(&row)?, beta - 1.0)?;
    }
    Ok(total)
}

/// Rescales a coframe around the origin until it is small:
/// `λ_κ^k = dx^k + χ(x)·(θ̃^k - dx^k)(κx)` in components, where `θ̃` is `θ`
/// after the linear change that makes it `dx` at the origin and `χ` is
/// `inner_cutoff`. `κ` halves from `mu0` until `smallness < target`.
///
/// `theta(x)` returns the matrix `θ^k_i` (row-major) at a point.
pub fn scaling_prepare<T>(theta: T, spec: &GridSpec, cfg: &ScalingConfig) -> Result<Scaled>
where
    T: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = spec.ndim();
    if !(cfg.mu0 > 0.0 && cfg.target > 0.0) {
        return Err(Error::OutOfRange(format!("scaling from radius {} to target {}", cfg.mu0, cfg.target)));
    }
    let origin = theta(&vec![0.0; n]);
    let (tinv, det) = crate::exterior::inverse_small(&origin, n);
    if det.abs() < 1e-8 {
        return Err(Error::Singular { node: 0, det });
    }
    let floor = 8.0 * spec.h();
    let mut kappa = cfg.mu0;
    let mut history = vec![];
    loop {
        let entries: Vec<Vec<f64>> = (0..spec.len())
            .into_par_iter()
            .map(|i| scaled_coefficients(&theta, kappa, &tinv, &spec.node(i)[..n]))
            .collect();
        let coefficients = MatrixField::new(n, n, (0..n * n).map(|e| ScalarField::new(spec.clone(), entries.iter().map(|v| v[e]).collect())).collect::<Result<_>>()?)?;
        let s = smallness(&coefficients, cfg.alpha, cfg.beta)?;
        history.push((kappa, s));
        if s < cfg.target {
            return Ok(Scaled { coefficients, kappa, smallness: s, normalization: tinv, history });
        }
        kappa /= 2.0;
        if kappa < floor {
            return Err(Error::OutOfRange(format!("smallness {s:.3e} above target {:.1e} at the scale floor {floor:.3e}", cfg.target)));
        }
    }
}

/// `χ(x)·(T^{-1}θ(κx) - I)`, the coefficients `scaling_prepare` samples.
pub fn scaled_coefficients<T>(theta: &T, kappa: f64, normalization: &[f64], x: &[f64]) -> Vec<f64>
where
    T: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let chi = inner_cutoff(x.iter().map(|v| v * v).sum::<f64>().sqrt());
    if chi == 0.0 {
        return vec![0.0; n * n];
    }
    let y: Vec<f64> = x.iter().map(|v| kappa * v).collect();
    let normed = crate::exterior::matmul_small(normalization, &theta(&y), n);
    (0..n * n).map(|e| chi * (normed[e] - f64::from(u8::from(e / n == e % n)))).collect()
}

/// `‖χ·f(κ·)‖_{C^γ}` for each `κ`, with `χ = inner_cutoff`.
pub fn dilation_norms<F>(f: F, gamma: f64, kappas: &[f64], spec: &GridSpec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = spec.ndim();
    kappas
        .iter()
        .map(|&k| {
            let g = ScalarField::from_fn(spec, |i| {
                let y: Vec<f64> = spec.node(i)[..n].iter().map(|v| k * v).collect();
                inner_cutoff(spec.radius(i)) * f(&y)
            });
            norm_dyadic(&g, gamma)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Harmonic coordinates.

/// Coordinates `ψ^k` with `Σ ∂_j(√det g g^{ij} ∂_i ψ^k) = 0` in the ball.
#[derive(Clone, Debug)]
pub struct HarmonicChart {
    pub psi: Vec<ScalarField>,
    pub cg_iters: usize,
    pub residual: f64,
    mask: BallMask,
}

impl HarmonicChart {
    pub fn mask(&self) -> &BallMask {
        &self.mask
    }

    /// `ψ_*X` evaluated at x-nodes: `X(ψ^k)` by fourth-order differences.
    /// Only meaningful two nodes or more inside the ball.
    pub fn frame_components(&self, field: &VectorField) -> Result<Vec<ScalarField>> {
        let spec = self.mask.spec();
        spec.check_same(field.spec())?;
        let n = spec.ndim();
        self.psi
            .iter()
            .map(|p| {
                let mut acc = ScalarField::zeros(spec);
                for a in 0..n {
                    acc.axpy(1.0, &fd_partial(p, a).mul(field.component(a))?)?;
                }
                Ok(acc)
            })
            .collect()
    }

    /// The chart as a coordinate change `F = ψ` (identity off the ball).
    pub fn diffeo(&self) -> Result<DiffeoGrid> {
        let spec = self.mask.spec();
        let inside = self.mask.inside();
        let r = self
            .psi
            .iter()
            .enumerate()
            .map(|(k, p)| ScalarField::from_fn(spec, |i| if inside[i] { p.get(i) - spec.node(i)[k] } else { 0.0 }))
            .collect();
        DiffeoGrid::from_displacement(r)
    }
}

/// Solves for harmonic coordinates of the metric `(g^{ij}, √det g)` with
/// `ψ = seed` off the ball. `seed` is usually the coordinate functions.
pub fn harmonic_chart(ginv: &MatrixField, sqrtdet: &ScalarField, mask: &BallMask, seed: &[ScalarField]) -> Result<HarmonicChart> {
    let n = ginv.rows();
    let k = MatrixField::new(n, n, ginv.entries().iter().map(|g| g.mul(sqrtdet)).collect::<Result<_>>()?)?;
    let op = BallOperator::divergence_form(mask, &k)?;
    let zero = ScalarField::zeros(mask.spec());
    let (mut psi, mut iters, mut residual) = (vec![], 0, 0.0f64);
    for s in seed {
        let sol = op.solve(&zero, Some(s), Some(s), CG_TOL)?;
        iters += sol.iters;
        residual = residual.max(sol.residual);
        psi.push(sol.u);
    }
    Ok(HarmonicChart { psi, cg_iters: iters, residual, mask: mask.clone() })
}

/// The coordinate functions `x^k` on a grid.
pub fn coordinate_functions(spec: &GridSpec) -> Vec<ScalarField> {
    (0..spec.ndim()).map(|k| ScalarField::from_fn(spec, |i| spec.node(i)[k])).collect()
}
