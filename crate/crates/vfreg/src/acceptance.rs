//! The acceptance criteria as runnable checks, shared by the `acceptance`
//! integration tests and the `selftest` command.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::charts::{self, CuspFrame, FlowOptions, FrameRule, RayOptions, RotationFrame};
use crate::elliptic::{self, BallMask, BallOperator};
use crate::error::Result;
use crate::exterior;
use crate::fields::multi_indices;
use crate::pipeline::{self, ComparisonOptions, ConditionConfig, ImproveConfig, Improvement, ManufacturedCoframe};
use crate::potential_para::{bony_check, leibniz_check};
use crate::spectral::{fit_exponent, least_squares, norm_diff2, norm_dyadic, smooth_step};
use crate::{FilterBank, FormField, GridSpec, ScalarField, VectorField};

pub const COUNT: usize = 10;

const TITLES: [&str; COUNT] = [
    "closed-form canonical chart",
    "canonical vs harmonic regularity",
    "improvement pipeline",
    "linear estimate trend",
    "harmonic-analysis identities",
    "elliptic solver",
    "scaling law",
    "ray-equation pullback",
    "norm-estimator calibration",
    "condition-(b) tester",
];

/// Wall-clock budgets in seconds, where the criterion states one.
const BUDGETS: [Option<f64>; COUNT] = [Some(30.0), Some(300.0), Some(600.0), None, Some(60.0), Some(120.0), Some(60.0), None, None, None];

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!("{} criterion {:>2} {} ({:.1} s): {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.title, self.seconds, self.detail)
    }
}

/// Runs criterion `id` (1-based). Errors count as failures.
pub fn run(id: usize) -> Outcome {
    assert!((1..=COUNT).contains(&id), "no criterion {id}");
    let t0 = Instant::now();
    let result = match id {
        1 => closed_form(),
        2 => canonical_vs_harmonic(),
        3 => improvement(),
        4 => estimate_trend(),
        5 => identities(),
        6 => elliptic_solver(),
        7 => scaling_law(),
        8 => ray_pullback(),
        9 => calibration(),
        _ => condition_b(),
    };
    let mut seconds = t0.elapsed().as_secs_f64();
    let (mut passed, mut detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    if id == 3 {
        // The run may have been cached by criterion 10.
        if let Ok(c) = controls() {
            seconds = seconds.max(c.positive_seconds);
        }
    }
    if let Some(budget) = BUDGETS[id - 1] {
        if seconds > budget {
            passed = false;
            detail.push_str(&format!("; over the {budget} s budget"));
        }
    }
    Outcome { id, title: TITLES[id - 1], passed, detail, seconds }
}

pub fn run_all() -> Vec<Outcome> {
    (1..=COUNT).map(run).collect()
}

type Check = Result<(bool, String)>;

fn grid(n: usize) -> GridSpec {
    GridSpec::cube(2, n, 2.0).expect("valid grid")
}

fn grid1(n: usize) -> GridSpec {
    GridSpec::cube(1, n, 2.0).expect("valid grid")
}

/// Trigonometric polynomial with random modes `|m| ≤ mcap` per axis.
fn random_trig(spec: &GridSpec, mcap: i64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = spec.half_width();
    let terms: Vec<(Vec<f64>, f64, f64)> = (0..12)
        .map(|_| ((0..spec.ndim()).map(|_| rng.gen_range(-mcap..=mcap) as f64).collect(), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    ScalarField::from_fn(spec, |i| {
        let x = spec.node(i);
        terms.iter().map(|(m, a, p)| a * (PI / l * m.iter().zip(&x).map(|(m, x)| m * x).sum::<f64>() + p).cos()).sum()
    })
}

fn random_form(spec: &GridSpec, k: usize, mcap: i64, seed: u64) -> Result<FormField> {
    let count = multi_indices(spec.ndim(), k).len();
    FormField::new(k, (0..count).map(|c| random_trig(spec, mcap, seed * 17 + c as u64)).collect())
}

// ---------------------------------------------------------------------------

fn closed_form() -> Check {
    let frame = CuspFrame { alpha: 1.0 };
    let opts = FlowOptions::default();
    let (mut literal, mut corrected) = (0.0f64, 0.0f64);
    for i in 0..512 {
        let s = (i + 1) as f64 / 512.0;
        for t in [-1.0, 0.5, 1.0] {
            let x = charts::flow(&frame, &[0.0, 0.0], &[t, s], &opts)?;
            literal = literal.max((x[0] - t * (1.0 - (-s).exp()) / s).abs());
            corrected = corrected.max((x[0] - t * s.exp_m1() / s).abs());
        }
    }
    let s = 1e-3f64;
    let mut literal_series = true;
    let mut corrected_series = true;
    let mut series = vec![];
    for alpha in [1.0, 1.5, 2.0] {
        let g = charts::flow(&CuspFrame { alpha }, &[0.0, 0.0], &[1.0, s], &opts)?[0];
        let target = 1.0 - 1.0 / (alpha + 1.0);
        let lit = (1.0 - g) / s.powf(alpha);
        literal_series &= (lit / target - 1.0).abs() <= 0.02;
        corrected_series &= (-lit / target - 1.0).abs() <= 0.02;
        series.push(format!("α={alpha}: (1-g)/s^α = {lit:.5}"));
    }
    let passed = literal < 1e-6 && literal_series;
    Ok((
        passed,
        format!(
            "as stated: max|φ - t(1-e^(-s))/s| = {literal:.3e}, series sign {}; corrected form t(e^s-1)/s: max error {corrected:.3e} ({}), series magnitude within 2% ({}); {}",
            if literal_series { "ok" } else { "wrong" },
            if corrected < 1e-6 { "ok" } else { "FAIL" },
            if corrected_series { "ok" } else { "FAIL" },
            series.join(", ")
        ),
    ))
}

fn canonical_vs_harmonic() -> Check {
    let spec = grid(1024);
    let mut passed = true;
    let mut parts = vec![];
    for alpha in [1.3, 1.7] {
        let r = pipeline::canonical_vs_harmonic(alpha, &spec, &ComparisonOptions::default())?;
        passed &= r.canonical_exponent_ok(0.15) && r.harmonic_exponent_ok(0.15);
        parts.push(format!(
            "α={alpha}: canonical {:.3} (want {:.2}±0.15), harmonic {:.3} (want ≥ {:.2})",
            r.canonical.exponent.unwrap_or(f64::NAN),
            alpha - 1.0,
            r.harmonic.exponent.unwrap_or(f64::INFINITY),
            alpha - 0.15
        ));
    }
    Ok((passed, parts.join("; ")))
}

/// The criterion-3 run and its rough control, shared with criterion 10.
pub struct Controls {
    pub cfg: ImproveConfig,
    pub positive: Improvement,
    pub positive_seconds: f64,
    pub control: Improvement,
}

const POSITIVE_AMPLITUDE: f64 = 0.004;
const CONTROL_AMPLITUDE: f64 = 0.0008;

pub fn controls() -> std::result::Result<&'static Controls, String> {
    static CELL: OnceLock<std::result::Result<Controls, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = grid(512);
        let cfg = ImproveConfig::new(0.6, 1.4).map_err(|e| e.to_string())?;
        let t0 = Instant::now();
        let pos = ManufacturedCoframe::new(POSITIVE_AMPLITUDE, false);
        let (_, positive) = pipeline::improve_scaled(|x: &[f64]| pos.eval(x), &spec, &cfg, 0.5).map_err(|e| format!("positive run: {e}"))?;
        let positive_seconds = t0.elapsed().as_secs_f64();
        let neg = ManufacturedCoframe::new(CONTROL_AMPLITUDE, true);
        let (_, control) = pipeline::improve_scaled(|x: &[f64]| neg.eval(x), &spec, &cfg, 0.5).map_err(|e| format!("control run: {e}"))?;
        Ok(Controls { cfg, positive, positive_seconds, control })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn improvement() -> Check {
    let c = match controls() {
        Ok(c) => c,
        Err(e) => return Ok((false, e)),
    };
    let out = &c.positive;
    let t = &out.telemetry;
    let a = out.input_report.exponent.unwrap_or(f64::NAN);
    let b = out.output_report.exponent.unwrap_or(f64::INFINITY);
    let residual = t.transformed_residual.absolute.iter().cloned().fold(0.0, f64::max);
    let ratio = t.fixed_point.ratios.iter().chain(&t.picard.picard_ratio).cloned().fold(0.0, f64::max);
    let passed = t.smallness <= 1e-2 && b >= 1.2 && b - a >= 0.5 && residual < 1e-5 && ratio < 0.8 && t.recovery < 1e-5;
    let control_gain = c.control.gain().unwrap_or(f64::NAN);
    Ok((
        passed,
        format!(
            "smallness {:.2e}, A exponent {a:.3}, B exponent {b:.3} (gain {:.3}), weak residual {residual:.2e}, worst contraction ratio {ratio:.2e}, recovery {:.2e}; rough control gain {control_gain:.3}",
            t.smallness,
            b - a,
            t.recovery
        ),
    ))
}

fn estimate_trend() -> Check {
    let spec = grid(256);
    let cfg = ImproveConfig::new(0.6, 1.4)?;
    let trend = pipeline::estimate_trend(
        |amp| {
            let theta = ManufacturedCoframe::new(amp, false);
            move |x: &[f64]| charts::scaled_coefficients(&|y: &[f64]| theta.eval(y), 0.5, &[1.0, 0.0, 0.0, 1.0], x)
        },
        &[0.004, 0.002, 0.001],
        &spec,
        &cfg,
    )?;
    Ok((trend.within(0.3), format!("smallness {}, left side {}, ratio of drops {:.4?}", sci(&trend.smallness), sci(&trend.lhs), trend.ratios)))
}

fn identities() -> Check {
    let mut worst = [0.0f64; 5];
    for (n, ndim, mcap) in [(64usize, 2usize, 15i64), (32, 3, 7)] {
        let spec = GridSpec::cube(ndim, n, 2.0)?;
        let bank = FilterBank::for_spec(&spec)?;
        for seed in 0..3u64 {
            for (k, l) in [(0, 0), (0, 1), (1, 1)] {
                let s = random_form(&spec, k, mcap, 10 * seed + 1)?;
                let w = random_form(&spec, l, mcap, 10 * seed + 2)?;
                worst[0] = worst[0].max(bony_check(&s, &w, &bank)?);
            }
            for (k, l) in [(0, 0), (0, 1), (1, 0)] {
                let s = random_form(&spec, k, mcap, 10 * seed + 3)?;
                let w = random_form(&spec, l, mcap, 10 * seed + 4)?;
                worst[1] = worst[1].max(leibniz_check(&s, &w, &bank)?);
            }
            let f = random_trig(&spec, mcap, 10 * seed + 5);
            let mut acc = ScalarField::zeros(&spec);
            for b in bank.blocks(&f)? {
                acc.axpy(1.0, &b)?;
            }
            worst[2] = worst[2].max(acc.sub(&bank.low(&f, bank.jmax() as i64)?)?.max_abs() / f.max_abs());
            let y = VectorField::new((0..ndim).map(|a| random_trig(&spec, mcap, 10 * seed + 6 + a as u64)).collect())?;
            for k in 0..=ndim {
                let w = random_form(&spec, k, mcap, 10 * seed + 9)?;
                let scale = w.max_abs();
                let hodge = exterior::hodge_laplacian(&w)?;
                worst[3] = worst[3].max(hodge.sub(&exterior::component_laplacian(&w)?)?.max_abs() / hodge.max_abs());
                let dd = if k + 2 <= ndim { exterior::ext_d(&exterior::ext_d(&w)?)?.max_abs() } else { 0.0 };
                let cc = if k >= 2 { exterior::codifferential(&exterior::codifferential(&w)?)?.max_abs() } else { 0.0 };
                let ii = if k >= 2 { exterior::interior(&y, &exterior::interior(&y, &w)?)?.max_abs() } else { 0.0 };
                // d and ϑ scale by the largest wavenumber, so compare against it.
                let kmax = PI / spec.half_width() * mcap as f64 * (ndim as f64).sqrt();
                worst[4] = worst[4].max(dd.max(cc) / (scale * kmax * kmax)).max(ii / (scale * y.max_abs().powi(2)));
            }
        }
    }
    let passed = worst.iter().all(|&w| w < 1e-10);
    Ok((
        passed,
        format!(
            "Bony {:.1e}, Leibniz {:.1e}, telescoping {:.1e}, Hodge vs -Σ∂² {:.1e}, d²/ϑ²/ι² {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    ))
}

fn inside_max(mask: &BallMask, f: impl Fn(usize) -> f64) -> f64 {
    (0..mask.spec().len()).filter(|&i| mask.inside()[i]).map(f).fold(0.0, f64::max)
}

fn elliptic_solver() -> Check {
    let exact = |x: &[f64]| (1.0 - x[0] * x[0] - x[1] * x[1]) * (PI * x[0]).sin();
    let mut errs = vec![];
    for n in [128, 256, 512] {
        let spec = grid(n);
        let mask = BallMask::new(&spec)?;
        let f = ScalarField::sample(&spec, |x| {
            let (s, c) = (PI * x[0]).sin_cos();
            let w = 1.0 - x[0] * x[0] - x[1] * x[1];
            4.0 * s + 4.0 * PI * x[0] * c + PI * PI * w * s
        })?;
        let u = elliptic::dirichlet_solve(&f, None, &mask)?;
        errs.push(inside_max(&mask, |i| (u.get(i) - exact(&spec.node(i))).abs()));
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let mut parabola = vec![];
    for n in [128, 256] {
        let spec = grid(n);
        let mask = BallMask::new(&spec)?;
        let u = elliptic::dirichlet_solve(&ScalarField::constant(&spec, 1.0), None, &mask)?;
        parabola.push(inside_max(&mask, |i| (u.get(i) - (1.0 - spec.radius(i).powi(2)) / 4.0).abs()));
    }
    let parabola_order = (parabola[0] / parabola[1]).log2();
    let spec = grid(128);
    let mask = BallMask::new(&spec)?;
    let op = BallOperator::laplacian(&mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = ScalarField::new(spec.clone(), (0..spec.len()).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let u = op.solve(&f, None, None, 1e-12)?.u;
    let min_inside = (0..spec.len()).filter(|&i| mask.inside()[i]).map(|i| u.get(i)).fold(f64::INFINITY, f64::min);
    let passed = orders.iter().all(|o| (o - 2.0).abs() <= 0.2) && (parabola_order - 2.0).abs() <= 0.3 && min_inside >= 0.0;
    Ok((
        passed,
        format!("manufactured errors {}, orders {orders:.3?}; unit source errors {} (order {parabola_order:.2}); min of solution for f ≥ 0: {min_inside:.2e}", sci(&errs), sci(&parabola)),
    ))
}

fn scaling_law() -> Check {
    let spec = grid1(4096);
    let kappas = [1.0, 0.5, 0.25, 0.125];
    let mut passed = true;
    let mut parts = vec![];
    for gamma in [0.3, 0.7, 1.2] {
        let norms = charts::dilation_norms(|x| x[0].max(0.0).powf(gamma) + 0.4 * x[0], gamma, &kappas, &spec)?;
        let pts: Vec<(f64, f64)> = kappas.iter().zip(&norms).map(|(k, n)| (k.log2(), n.log2())).collect();
        let (slope, _) = least_squares(&pts);
        let want = gamma.min(0.5) - 0.1;
        passed &= slope >= want;
        parts.push(format!("γ={gamma}: slope {slope:.3} (want ≥ {want:.2})"));
    }
    Ok((passed, parts.join("; ")))
}

/// `Φ^*X_i - ∂_i` from the flow differentiated at each node: centred in `t`
/// and left-sided in `s`, so nodes on `s = 0` see the `s ≤ 0` side where the
/// rate vanishes.
fn differentiated_chart(frame: &CuspFrame, p: &[f64]) -> Result<Vec<f64>> {
    let opts = FlowOptions::default();
    let d = 1e-5;
    let at = |t: f64, s: f64| charts::flow(frame, &[0.0, 0.0], &[t, s], &opts);
    let (tp, tm) = (at(p[0] + d, p[1])?, at(p[0] - d, p[1])?);
    let (s0, s1, s2) = (at(p[0], p[1])?, at(p[0], p[1] - d)?, at(p[0], p[1] - 2.0 * d)?);
    let mut jac = [0.0; 4];
    for a in 0..2 {
        jac[a * 2] = (tp[a] - tm[a]) / (2.0 * d);
        jac[a * 2 + 1] = (3.0 * s0[a] - 4.0 * s1[a] + s2[a]) / (2.0 * d);
    }
    let (inv, _) = exterior::inverse_small(&jac, 2);
    let mut out = vec![0.0; 4];
    for i in 0..2 {
        let v = frame.field_at(i, &s0);
        for j in 0..2 {
            out[i * 2 + j] = inv[j * 2] * v[0] + inv[j * 2 + 1] * v[1] - f64::from(u8::from(i == j));
        }
    }
    Ok(out)
}

fn ray_pullback() -> Check {
    let spec = grid(256);
    let frame = CuspFrame { alpha: 1.0 };
    let ray = charts::ray_coefficients(|x| frame.structure(&[0.0, x[1]]), &spec, &RayOptions::default())?;
    let mut worst = 0.0f64;
    for i in (0..spec.len()).filter(|&i| spec.radius(i) < 0.8) {
        let direct = differentiated_chart(&frame, &spec.node(i)[..2])?;
        for (e, v) in direct.iter().enumerate() {
            worst = worst.max((ray.entries()[e].get(i) - v).abs());
        }
    }
    let radii = [0.1, 0.2, 0.4, 0.8];
    let ds: Vec<f64> = radii.iter().map(|&r| charts::linear_growth(&ray, r)).collect();
    let passed = worst < 1e-4 && ds.iter().all(|d| d.is_finite());
    Ok((passed, format!("sup |Ã_ray - Ã_chart| = {worst:.2e}; growth constants D over radii {radii:?}: {ds:.3?}")))
}

fn calibration() -> Check {
    let spec = grid1(4096);
    let mut passed = true;
    let mut parts = vec![];
    for sigma in [0.4, 0.7, 1.3] {
        let f = ScalarField::sample(&spec, |x| x[0].max(0.0).powf(sigma) * smooth_step((0.9 - x[0].abs()) / 0.4))?;
        let e = fit_exponent(&f, None)?.exponent.unwrap_or(f64::INFINITY);
        passed &= (e - sigma).abs() <= 0.1;
        parts.push(format!("σ={sigma}: {e:.3}"));
    }
    let small = grid1(256);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for seed in 0..20 {
        let f = random_trig(&small, 40, 1000 + seed);
        for s in [0.5, 1.0, 1.5] {
            let r = norm_diff2(&f, s, None)? / norm_dyadic(&f, s)?;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    passed &= lo >= 1.0 / 50.0 && hi <= 50.0;
    Ok((passed, format!("cusp exponents {}; diff2/dyadic ratios in [{lo:.3}, {hi:.3}]", parts.join(", "))))
}

fn condition_b() -> Check {
    let cfg = ConditionConfig::default();
    let spec = grid(512);
    let mut parts = vec![];
    let smooth = charts::sample_frame(&RotationFrame { angle: |x: &[f64]| 0.4 * x[0].sin() * (2.0 * x[1]).cos() }, &spec)?;
    let mut smooth_ok = true;
    for beta in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0] {
        smooth_ok &= pipeline::test_condition_b(&smooth, beta, &cfg)?.passed;
    }
    parts.push(format!("smooth frame passes β ≤ 4: {smooth_ok}"));
    let cusp = charts::sample_frame(&CuspFrame { alpha: 0.7 }, &spec)?;
    let at = pipeline::test_condition_b(&cusp, 0.7, &cfg)?;
    let above = pipeline::test_condition_b(&cusp, 1.3, &cfg)?;
    let cusp_ok = at.passed && !above.passed;
    parts.push(format!("cusp α=0.7: β=0.7 {}, β=1.3 {}", verdict(at.passed), verdict(above.passed)));

    let c = match controls() {
        Ok(c) => c,
        Err(e) => return Ok((false, e)),
    };
    // The improvement inputs themselves, after scaling.
    let pos = pipeline::test_condition_b(&pipeline::frame_of_coefficients(&c.positive.a)?, c.cfg.beta, &cfg)?;
    let neg = pipeline::test_condition_b(&pipeline::frame_of_coefficients(&c.control.a)?, c.cfg.beta, &cfg)?;
    let improved = c.positive.meets_expected_gain(&c.cfg);
    let control_improved = c.control.gain().is_some_and(|g| g > 0.2);
    let consistent = pos.passed == improved && neg.passed == control_improved;
    parts.push(format!(
        "β=1.4 on the improvement input {} (improved: {improved}), on the rough control {} (improved: {control_improved})",
        verdict(pos.passed),
        verdict(neg.passed)
    ));
    // Achieved gain g must be matched by condition (b) at α + g - 0.2.
    let mut implied_ok = true;
    if let Some(g) = c.positive.gain() {
        let beta = (c.cfg.alpha + g - 0.2).clamp(c.cfg.alpha, c.cfg.alpha + 1.0);
        let r = pipeline::test_condition_b(&pipeline::frame_of_coefficients(&c.positive.a)?, beta, &cfg)?;
        implied_ok = r.passed;
        parts.push(format!("gain {g:.2} implies β={beta:.2}: {}", verdict(r.passed)));
    }
    Ok((smooth_ok && cusp_ok && consistent && implied_ok, parts.join("; ")))
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "passes"
    } else {
        "fails"
    }
}
