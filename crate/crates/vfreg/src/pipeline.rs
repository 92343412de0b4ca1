//! End-to-end runs: coordinate improvement, the frame-regularity tester,
//! frame-adapted norms and the canonical/harmonic comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::{self, CuspFrame, FlowOptions, FrameRule};
use crate::elliptic::{self, BallMask, Domain, EquationResidual, FixedPointReport, PicardOptions, Telemetry};
use crate::error::{Error, Result};
use crate::exterior::{self, DiffeoGrid};
use crate::spectral::{fit_exponent_many, norm_dyadic, RegularityReport};
use crate::{FormField, Frame, GridSpec, MatrixField, ScalarField, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImproveConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Largest accepted `smallness` of the input.
    pub target: f64,
    pub kappa_floor: f64,
    pub picard: PicardOptions,
    /// Oversampling used when inverting `F`.
    pub refine: usize,
    pub fixed_point_iterations: usize,
    pub window: Option<(usize, usize)>,
}

impl ImproveConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self {
            alpha,
            beta,
            target: 1e-2,
            kappa_floor: 0.0,
            picard: PicardOptions::default(),
            refine: 4,
            fixed_point_iterations: 40,
            window: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.alpha, self.beta);
        if !(a > 0.0 && a <= b && b <= a + 1.0) {
            return Err(Error::OutOfRange(format!("orders α = {a}, β = {b} need 0 < α ≤ β ≤ α + 1")));
        }
        if self.refine == 0 || self.fixed_point_iterations == 0 {
            return Err(Error::OutOfRange("refinement and fixed-point iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImproveTelemetry {
    pub smallness: f64,
    pub picard: Telemetry,
    pub inversion_error: f64,
    pub newton_iters: usize,
    pub min_forward_det: f64,
    pub transformed_residual: EquationResidual,
    pub fixed_point: FixedPointReport,
    /// `‖T^∞[0] - B‖_∞ / ‖B‖_∞` over the ball.
    pub recovery: f64,
}

#[derive(Clone, Debug)]
pub struct Improvement {
    /// The sampled input `A`.
    pub a: MatrixField,
    pub chart: DiffeoGrid,
    /// `η^k = F_*λ^k`.
    pub eta: Vec<FormField>,
    /// `η^k = dy^k + Σ_j B[k][j] dy^j` on the y-grid.
    pub b: MatrixField,
    /// `B∘F = (A - ∇R)(I + ∇R)^{-1}` on the x-grid.
    pub b_at_source: MatrixField,
    pub input_report: RegularityReport,
    pub output_report: RegularityReport,
    pub telemetry: ImproveTelemetry,
}

impl Improvement {
    /// Fitted exponent gain of `B` over `A`; `None` if either is smooth.
    pub fn gain(&self) -> Option<f64> {
        Some(self.output_report.exponent? - self.input_report.exponent?)
    }

    /// The expected-improvement check `ŝ_B ≥ ŝ_A + 0.8(β - α) - 0.15`.
    pub fn meets_expected_gain(&self, cfg: &ImproveConfig) -> bool {
        match (self.input_report.exponent, self.output_report.exponent) {
            (Some(a), Some(b)) => b >= a + 0.8 * (cfg.beta - cfg.alpha) - 0.15,
            (_, None) => true,
            (None, Some(_)) => false,
        }
    }

    /// `‖F - id‖_{C^{α+1}} + Σ_k ‖η^k - dy^k‖_{C^β}`, the left side of the estimate.
    pub fn estimate_lhs(&self, cfg: &ImproveConfig) -> Result<f64> {
        let r = self.chart.displacement().ok_or_else(|| Error::Degree("chart without displacement".into()))?;
        let mut total = 0.0;
        for c in r {
            total += norm_dyadic(c, cfg.alpha + 1.0)?;
        }
        for e in self.b.entries() {
            total += norm_dyadic(e, cfg.beta)?;
        }
        Ok(total)
    }
}

fn sample_matrix<R>(spec: &GridSpec, n: usize, rule: &R) -> Result<MatrixField>
where
    R: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let vals: Vec<Vec<f64>> = (0..spec.len()).into_par_iter().map(|i| rule(&spec.node(i)[..n])).collect();
    if let Some(i) = vals.iter().position(|v| v.len() != n * n || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite { node: i });
    }
    MatrixField::new(n, n, (0..n * n).map(|e| ScalarField::new(spec.clone(), vals.iter().map(|v| v[e]).collect())).collect::<Result<_>>()?)
}

/// `(A - ∇R)(I + ∇R)^{-1}` with spectral `∇R`, `(∇R)[k][i] = ∂_i R^k`.
fn coefficients_at_source(a: &MatrixField, r: &[ScalarField]) -> Result<MatrixField> {
    let spec = a.spec().clone();
    let n = spec.ndim();
    let grads: Vec<Vec<ScalarField>> = r.iter().map(exterior::gradient).collect::<Result<_>>()?;
    let vals: Vec<Result<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let dr: Vec<f64> = (0..n * n).map(|e| grads[e / n][e % n].get(i)).collect();
            let jac: Vec<f64> = (0..n * n).map(|e| dr[e] + f64::from(u8::from(e / n == e % n))).collect();
            let (inv, det) = exterior::inverse_small(&jac, n);
            if det.abs() < 1e-3 {
                return Err(Error::Singular { node: i, det });
            }
            let diff: Vec<f64> = a.at(i).iter().zip(&dr).map(|(a, d)| a - d).collect();
            Ok(exterior::matmul_small(&diff, &inv, n))
        })
        .collect();
    let vals = vals.into_iter().collect::<Result<Vec<_>>>()?;
    MatrixField::new(n, n, (0..n * n).map(|e| ScalarField::new(spec.clone(), vals.iter().map(|v| v[e]).collect())).collect::<Result<_>>()?)
}

/// Improves the coframe `λ^k = dx^k + Σ_i A[k][i] dx^i`, given pointwise by
/// `coefficients(x) = A(x)` (row-major) and supported in the half ball.
///
/// Solves the displacement system on the periodic cell, inverts `F = id + R`,
/// pushes `λ` forward with the exact coefficients, checks the transformed
/// equation and the fixed point on the ball, and fits exponents of `A` and
/// of `B` (the latter as `B∘F` on the x-grid, free of interpolation).
pub fn improve_chart<R>(coefficients: R, spec: &GridSpec, cfg: &ImproveConfig) -> Result<Improvement>
where
    R: Fn(&[f64]) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let n = spec.ndim();
    let a = sample_matrix(spec, n, &coefficients)?;
    let small = charts::smallness(&a, cfg.alpha, cfg.beta)?;
    if small >= cfg.target {
        return Err(Error::OutOfRange(format!("input smallness {small:.3e} above target {:.1e}; rescale first", cfg.target)));
    }
    let disp = elliptic::solve_displacement(&a, &Domain::Torus, &cfg.picard)?;
    let chart = DiffeoGrid::from_displacement_refined(disp.r.clone(), cfg.refine)?;
    let eta: Vec<FormField> = (0..n)
        .map(|k| {
            exterior::pushforward_form_with(&chart, 1, |x| {
                let c = coefficients(x);
                (0..n).map(|i| c[k * n + i] + f64::from(u8::from(k == i))).collect()
            })
        })
        .collect::<Result<_>>()?;
    let b = MatrixField::new(
        n,
        n,
        (0..n * n)
            .map(|e| {
                let c = &eta[e / n].components()[e % n];
                if e / n == e % n {
                    c.map(|v| v - 1.0)
                } else {
                    c.clone()
                }
            })
            .collect(),
    )?;
    let mask = BallMask::new(spec)?;
    let transformed_residual = elliptic::transformed_residual(&b, &mask)?;
    let deta = elliptic::coframe_derivatives(&b)?;
    let (fixed, fixed_point) = elliptic::contraction_iterate(&b, &deta, &mask, cfg.fixed_point_iterations)?;
    let inside = mask.inside();
    let (mut diff, mut size) = (0.0f64, 0.0f64);
    for (f, e) in fixed.entries().iter().zip(b.entries()) {
        for i in (0..spec.len()).filter(|&i| inside[i]) {
            diff = diff.max((f.get(i) - e.get(i)).abs());
            size = size.max(e.get(i).abs());
        }
    }
    let recovery = if size > 0.0 { diff / size } else { diff };
    let b_at_source = coefficients_at_source(&a, &disp.r)?;
    let input_report = fit_exponent_many(a.entries(), cfg.window)?;
    let output_report = fit_exponent_many(b_at_source.entries(), cfg.window)?;
    let telemetry = ImproveTelemetry {
        smallness: small,
        picard: disp.telemetry,
        inversion_error: chart.inversion_error(),
        newton_iters: chart.newton_iters(),
        min_forward_det: chart.min_forward_det(),
        transformed_residual,
        fixed_point,
        recovery,
    };
    Ok(Improvement { a, chart, eta, b, b_at_source, input_report, output_report, telemetry })
}


/// Test coframe `θ = dx + a dy`, `θ² = dy` with `a` supported in a small ball:
/// `a = ε w(x) (max(0,y)^{0.6} + max(0,x)^{1.4})`, so `θ ∈ C^{0.6}` and
/// `dθ ∈ C^{0.4}`. The control `a = ε w(x) max(0,x)^{0.6}` has `dθ ∈ C^{-0.4}`.
/// `w = (1 - |x|²/ρ²)^4` keeps the data inside the flat part of the scaling cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedCoframe {
    pub amplitude: f64,
    pub radius: f64,
    pub control: bool,
}

impl ManufacturedCoframe {
    pub fn new(amplitude: f64, control: bool) -> Self {
        Self { amplitude, radius: 0.15, control }
    }

    /// `θ^k_i` row-major.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let r2 = (x[0] * x[0] + x[1] * x[1]) / (self.radius * self.radius);
        let w = (1.0 - r2).max(0.0).powi(4);
        let (xp, yp) = (x[0].max(0.0), x[1].max(0.0));
        let a = if self.control { xp.powf(0.6) } else { yp.powf(0.6) + xp.powf(1.4) };
        vec![1.0, self.amplitude * w * a, 0.0, 1.0]
    }

    /// The frame dual to `θ`: `X_1 = ∂x`, `X_2 = ∂y - a ∂x`.
    pub fn frame(&self, spec: &GridSpec) -> Result<Frame> {
        let rule = charts::RuleFrame::new(2, 2, |x: &[f64], out: &mut [f64]| {
            let a = self.eval(x)[1];
            out.copy_from_slice(&[1.0, 0.0, -a, 1.0]);
        });
        charts::sample_frame(&rule, spec)
    }
}

/// Scales `theta` to the target smallness, then improves it.
pub fn improve_scaled<T>(theta: T, spec: &GridSpec, cfg: &ImproveConfig, mu0: f64) -> Result<(charts::Scaled, Improvement)>
where
    T: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let scfg = charts::ScalingConfig { alpha: cfg.alpha, beta: cfg.beta, target: cfg.target, mu0 };
    let scaled = charts::scaling_prepare(&theta, spec, &scfg)?;
    if scaled.kappa < cfg.kappa_floor {
        return Err(Error::OutOfRange(format!("scale {} below the floor {}", scaled.kappa, cfg.kappa_floor)));
    }
    let (kappa, norm) = (scaled.kappa, scaled.normalization.clone());
    let out = improve_chart(|x: &[f64]| charts::scaled_coefficients(&theta, kappa, &norm, x), spec, cfg)?;
    Ok((scaled, out))
}

/// Runs `improve_chart` on three amplitudes `a, a/2, a/4` of a family and
/// compares the drop of the estimate's left side with the drop of the input
/// smallness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateTrend {
    pub amplitudes: Vec<f64>,
    pub smallness: Vec<f64>,
    pub lhs: Vec<f64>,
    /// `(lhs_i / lhs_{i+1}) / (smallness_i / smallness_{i+1})`, 1 for a linear estimate.
    pub ratios: Vec<f64>,
}

impl EstimateTrend {
    pub fn within(&self, tol: f64) -> bool {
        self.ratios.iter().all(|r| (r - 1.0).abs() <= tol)
    }
}

pub fn estimate_trend<R, M>(family: M, amplitudes: &[f64], spec: &GridSpec, cfg: &ImproveConfig) -> Result<EstimateTrend>
where
    M: Fn(f64) -> R,
    R: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let (mut smallness, mut lhs) = (vec![], vec![]);
    for &amp in amplitudes {
        let out = improve_chart(family(amp), spec, cfg)?;
        smallness.push(out.telemetry.smallness);
        lhs.push(out.estimate_lhs(cfg)?);
    }
    let ratios = (1..amplitudes.len()).map(|i| (lhs[i - 1] / lhs[i]) / (smallness[i - 1] / smallness[i])).collect();
    Ok(EstimateTrend { amplitudes: amplitudes.to_vec(), smallness, lhs, ratios })
}

/// The frame dual to `λ^k = dx^k + Σ_i A[k][i] dx^i`.
pub fn frame_of_coefficients(a: &MatrixField) -> Result<Frame> {
    let spec = a.spec().clone();
    let n = a.rows();
    let inv: Vec<Result<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let m: Vec<f64> = a.at(i).iter().enumerate().map(|(e, v)| v + f64::from(u8::from(e / n == e % n))).collect();
            let (inv, det) = exterior::inverse_small(&m, n);
            if det.abs() < elliptic::MIN_DET {
                Err(Error::Singular { node: i, det })
            } else {
                Ok(inv)
            }
        })
        .collect();
    let inv = inv.into_iter().collect::<Result<Vec<_>>>()?;
    // λ(X_i) = δ: X_i is column i of the inverse.
    let fields = (0..n)
        .map(|i| VectorField::new((0..n).map(|c| ScalarField::new(spec.clone(), inv.iter().map(|m| m[c * n + i]).collect())).collect::<Result<_>>()?))
        .collect::<Result<_>>()?;
    Frame::new(fields, None)
}

// ---------------------------------------------------------------------------
// Frame-adapted norms and the condition-(b) tester.

/// Deepest recursion of the frame-adapted norms and of the tester.
pub const MAX_DEPTH: usize = 3;

fn check_span(frame: &Frame) -> Result<()> {
    let spec = frame.spec();
    let n = spec.ndim();
    if frame.q() < n {
        return Err(Error::Degree(format!("{} fields cannot span dimension {n}", frame.q())));
    }
    let bad = (0..spec.len()).into_par_iter().find_any(|&i| {
        let m: Vec<f64> = (0..n * n).map(|e| frame.field(e / n).component(e % n).get(i)).collect();
        exterior::det_small(&m, n).abs() < elliptic::MIN_DET
    });
    match bad {
        Some(node) => {
            let m: Vec<f64> = (0..n * n).map(|e| frame.field(e / n).component(e % n).get(node)).collect();
            Err(Error::Singular { node, det: exterior::det_small(&m, n) })
        }
        None => Ok(()),
    }
}

fn recursion_depth(beta: f64) -> Result<usize> {
    if !(beta > 0.0) {
        return Err(Error::OutOfRange(format!("order {beta} must be positive")));
    }
    let depth = (beta.ceil() as usize).saturating_sub(1);
    if depth > MAX_DEPTH {
        return Err(Error::OutOfRange(format!("order {beta} needs {depth} derivative levels, more than {MAX_DEPTH}")));
    }
    Ok(depth)
}

/// `‖f‖_{C^β_X}`: the dyadic norm for `β ≤ 1`, otherwise
/// `‖f‖_{C^{β-1}_X} + Σ_j ‖X_j f‖_{C^{β-1}_X}` with spectral `X_j f`.
pub fn cx_norm(f: &ScalarField, frame: &Frame, beta: f64) -> Result<f64> {
    recursion_depth(beta)?;
    check_span(frame)?;
    f.spec().check_same(frame.spec())?;
    cx_rec(f, frame, beta)
}

fn cx_rec(f: &ScalarField, frame: &Frame, beta: f64) -> Result<f64> {
    if beta <= 1.0 {
        return norm_dyadic(f, beta);
    }
    let mut total = cx_rec(f, frame, beta - 1.0)?;
    for x in frame.fields() {
        total += cx_rec(&exterior::directional(x, f)?, frame, beta - 1.0)?;
    }
    Ok(total)
}

/// `(1 - r²/ρ²)^8` inside radius `ρ`: a window with a spectrum that is
/// negligible in the fit blocks, used to localize non-periodic data.
pub fn measurement_window(r: f64, radius: f64) -> f64 {
    (1.0 - (r / radius).powi(2)).max(0.0).powi(8)
}

fn window_field(spec: &GridSpec, radius: f64) -> ScalarField {
    ScalarField::from_fn(spec, |i| measurement_window(spec.radius(i), radius))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    /// Slack on fitted exponents.
    pub tolerance: f64,
    /// Radius of the measurement window around the origin.
    pub radius: f64,
    pub window: Option<(usize, usize)>,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self { tolerance: 0.15, radius: 1.5, window: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub quantity: String,
    pub order: f64,
    /// `None`: smooth to resolution.
    pub exponent: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub beta: f64,
    pub passed: bool,
    pub checks: Vec<ConditionCheck>,
    /// `‖⟨λ^j, X_k⟩‖_{C^β_X}` for the fields beyond the first `n`, localized.
    pub coefficient_norms: Vec<f64>,
}

struct Tester<'a> {
    frame: &'a Frame,
    cfg: &'a ConditionConfig,
    checks: Vec<ConditionCheck>,
}

impl Tester<'_> {
    fn record(&mut self, quantity: String, order: f64, comps: &[ScalarField]) -> Result<()> {
        if self.checks.iter().any(|c| c.quantity == quantity) {
            return Ok(());
        }
        let report = fit_exponent_many(comps, self.cfg.window)?;
        let passed = report.exponent.is_none_or(|e| e >= order - self.cfg.tolerance);
        self.checks.push(ConditionCheck { quantity, order, exponent: report.exponent, passed });
        Ok(())
    }

    /// `w ∈ C^s_X` for a closed 2-form: `w ∈ C^{s-1}_X` and `L_{X_i} w = d ι_{X_i} w ∈ C^{s-1}_X`.
    fn form(&mut self, w: &FormField, s: f64, label: String) -> Result<()> {
        if s <= 1.0 {
            return self.record(label, s, w.components());
        }
        self.form(w, s - 1.0, label.clone())?;
        let n = w.ndim();
        for i in 0..n {
            let lie = exterior::ext_d(&exterior::interior(self.frame.field(i), w)?)?;
            self.form(&lie, s - 1.0, format!("L_{} {label}", i + 1))?;
        }
        Ok(())
    }

    fn scalar(&mut self, f: &ScalarField, s: f64, label: String) -> Result<()> {
        if s <= 1.0 {
            return self.record(label, s, std::slice::from_ref(f));
        }
        self.scalar(f, s - 1.0, label.clone())?;
        for i in 0..self.frame.spec().ndim() {
            let g = exterior::directional(self.frame.field(i), f)?;
            self.scalar(&g, s - 1.0, format!("X_{} {label}", i + 1))?;
        }
        Ok(())
    }
}

/// Checks `dλ^j ∈ C^{β-1}_X` and `⟨λ^j, X_k⟩ ∈ C^β_X` (`k > n`) for the
/// coframe `λ` dual to the first `n` fields, by fitted exponents of the
/// localized quantities down the recursion.
///
/// `λ - λ(0)` is multiplied by `measurement_window` before `d`, so the
/// extra term `dζ ∧ (λ - λ(0))` is only as rough as `λ` itself.
pub fn test_condition_b(frame: &Frame, beta: f64, cfg: &ConditionConfig) -> Result<ConditionReport> {
    recursion_depth(beta)?;
    check_span(frame)?;
    let spec = frame.spec();
    let n = spec.ndim();
    let zeta = window_field(spec, cfg.radius);
    let coframe = exterior::dual_coframe(frame)?;
    let mut tester = Tester { frame, cfg, checks: vec![] };
    // Subtracting the constant coframe at the origin drops the smooth
    // `dζ ∧ λ(0)`, which would otherwise swamp small rough parts.
    let origin = (0..spec.len()).min_by(|&a, &b| spec.radius(a).total_cmp(&spec.radius(b))).unwrap_or(0);
    for (j, l) in coframe.iter().enumerate() {
        let centred = FormField::new(1, l.components().iter().map(|c| c.map(|v| v - c.get(origin))).collect())?;
        let w = exterior::ext_d(&centred.mul_scalar(&zeta)?)?;
        tester.form(&w, beta - 1.0, format!("dλ^{}", j + 1))?;
    }
    let mut coefficient_norms = vec![];
    for k in n..frame.q() {
        for (j, l) in coframe.iter().enumerate() {
            let b = exterior::pairing(l, frame.field(k))?.mul(&zeta)?;
            tester.scalar(&b, beta, format!("<λ^{}, X_{}>", j + 1, k + 1))?;
            coefficient_norms.push(cx_norm(&b, frame, beta)?);
        }
    }
    let checks = tester.checks;
    let passed = checks.iter().all(|c| c.passed);
    Ok(ConditionReport { beta, passed, checks, coefficient_norms })
}

// ---------------------------------------------------------------------------
// Canonical against harmonic coordinates for the cusp frame.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOptions {
    /// Canonical coordinates are computed for `|(t, s)| < chart_radius`.
    pub chart_radius: f64,
    /// Radius of the measurement window, inside both charts.
    pub window_radius: f64,
    pub flow: FlowOptions,
    pub fit_window: Option<(usize, usize)>,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self { chart_radius: 0.95, window_radius: 0.9, flow: FlowOptions::default(), fit_window: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub alpha: f64,
    /// `sup |Φ - (t g(s), s)|` over the measurement window.
    pub closed_form_error: f64,
    pub series_coefficient: f64,
    /// `(g(s) - 1)/s^α` at `s = 1e-3`.
    pub series_estimate: f64,
    pub canonical: RegularityReport,
    pub harmonic: RegularityReport,
    pub harmonic_cg_iters: usize,
}

impl ComparisonReport {
    pub fn canonical_exponent_ok(&self, tol: f64) -> bool {
        self.canonical.exponent.is_some_and(|e| (e - (self.alpha - 1.0)).abs() <= tol)
    }

    pub fn harmonic_exponent_ok(&self, tol: f64) -> bool {
        self.harmonic.exponent.is_none_or(|e| e >= self.alpha - tol)
    }

    pub fn series_ok(&self, rel: f64) -> bool {
        (self.series_estimate / self.series_coefficient - 1.0).abs() <= rel
    }
}

/// Regularity of `Y` for the cusp frame in canonical coordinates at the
/// origin (by flow) and in harmonic coordinates of its metric on the ball.
///
/// Both sides fit the localized `Y - ∂_2` in the chart: `Φ^*Y` on the chart
/// grid, and `Y(ψ^k)` at the x-nodes for harmonic `ψ`.
pub fn canonical_vs_harmonic(alpha: f64, spec: &GridSpec, opts: &ComparisonOptions) -> Result<ComparisonReport> {
    if !(alpha > 0.0) || spec.ndim() != 2 {
        return Err(Error::OutOfRange(format!("cusp comparison needs α > 0 in two dimensions, got α = {alpha}")));
    }
    if opts.window_radius > opts.chart_radius || opts.window_radius >= 1.0 {
        return Err(Error::OutOfRange("measurement window must lie inside both charts".into()));
    }
    let frame = CuspFrame { alpha };
    let zeta = window_field(spec, opts.window_radius);
    let localized = |v: &VectorField| -> Result<Vec<ScalarField>> {
        v.components().iter().enumerate().map(|(k, c)| c.map(|x| x - f64::from(u8::from(k == 1))).mul(&zeta)).collect()
    };

    let chart = charts::canonical_chart(&frame, &[0.0, 0.0], opts.chart_radius, spec, &opts.flow)?;
    let closed_form_error = (0..spec.len())
        .filter(|&i| spec.radius(i) < opts.window_radius)
        .map(|i| {
            let p = spec.node(i);
            let x = chart.phi_at(i);
            (x[0] - p[0] * charts::canonical_profile(alpha, p[1])).abs().max((x[1] - p[1]).abs())
        })
        .fold(0.0, f64::max);
    let pulled = exterior::pushforward_vf_with(&chart, |x| frame.field_at(1, x))?;
    let canonical = fit_exponent_many(&localized(&pulled)?, opts.fit_window)?;

    let a = frame.coframe_coefficients(spec)?;
    let (ginv, sqrtdet) = elliptic::metric_from_coefficients(&a)?;
    let mask = BallMask::new(spec)?;
    let hc = charts::harmonic_chart(&ginv, &sqrtdet, &mask, &charts::coordinate_functions(spec))?;
    let y = VectorField::sample(spec, |x| frame.field_at(1, x))?;
    let pushed = VectorField::new(hc.frame_components(&y)?)?;
    let harmonic = fit_exponent_many(&localized(&pushed)?, opts.fit_window)?;

    let s = 1e-3f64;
    Ok(ComparisonReport {
        alpha,
        closed_form_error,
        series_coefficient: charts::canonical_series_coefficient(alpha),
        series_estimate: (charts::canonical_profile(alpha, s) - 1.0) / s.powf(alpha),
        canonical,
        harmonic,
        harmonic_cg_iters: hc.cg_iters,
    })
}

// ---------------------------------------------------------------------------
// Run manifests.

/// Everything a run produced, for the CLI's JSON output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub telemetry: serde_json::Value,
    pub reports: serde_json::Value,
    pub passed: Option<bool>,
}
