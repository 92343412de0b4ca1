//! Exterior calculus on grid forms and coordinate changes.
//!
//! Derivatives are spectral on the torus. Composition with maps uses
//! separable 4-point Lagrange interpolation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{multi_index_position, multi_indices, sort_with_sign, GridSpec};
use crate::spectral::Fourier;
use crate::{FormField, Frame, MatrixField, ScalarField, VectorField};

/// All first partials of a field, computed from one forward transform.
pub fn gradient(f: &ScalarField) -> Result<Vec<ScalarField>> {
    let four = Fourier::<f64>::for_spec(f.spec())?;
    let hat = four.forward(f);
    Ok((0..f.spec().ndim())
        .map(|a| {
            let mut h = hat.clone();
            h.par_iter_mut().enumerate().for_each(|(i, v)| *v *= rustfft::num_complex::Complex::new(0.0, four.wavenumber(a, i)));
            four.inverse(h)
        })
        .collect())
}

pub fn partial(f: &ScalarField, axis: usize) -> Result<ScalarField> {
    Ok(Fourier::<f64>::for_spec(f.spec())?.derivative(f, axis))
}

pub fn ext_d(w: &FormField) -> Result<FormField> {
    let n = w.ndim();
    let k = w.degree();
    if k >= n {
        return Err(Error::Degree(format!("d of a top-degree form (k = {k})")));
    }
    let grads: Vec<Vec<ScalarField>> = w.components().iter().map(gradient).collect::<Result<_>>()?;
    let comps = multi_indices(n, k + 1)
        .into_iter()
        .map(|big| {
            let mut acc = ScalarField::zeros(w.spec());
            for (l, &a) in big.iter().enumerate() {
                let rest: Vec<usize> = big.iter().copied().filter(|&b| b != a).collect();
                let p = multi_index_position(n, &rest).unwrap();
                acc.axpy(if l % 2 == 0 { 1.0 } else { -1.0 }, &grads[p][a])?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    FormField::new(k + 1, comps)
}

pub fn wedge(s: &FormField, w: &FormField) -> Result<FormField> {
    s.spec().check_same(w.spec())?;
    let n = s.ndim();
    let (k, l) = (s.degree(), w.degree());
    if k + l > n {
        return Err(Error::Degree(format!("wedge of degrees {k} and {l} in dimension {n}")));
    }
    let si = s.indices();
    let wi = w.indices();
    let comps = multi_indices(n, k + l)
        .into_iter()
        .map(|big| {
            let mut acc = ScalarField::zeros(s.spec());
            for (a, ia) in si.iter().enumerate() {
                for (b, ib) in wi.iter().enumerate() {
                    let mut cat: Vec<usize> = ia.iter().chain(ib).copied().collect();
                    let sign = sort_with_sign(&mut cat);
                    if sign != 0 && cat == big {
                        acc.axpy(sign as f64, &s.components()[a].mul(&w.components()[b])?)?;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    FormField::new(k + l, comps)
}

pub fn interior(y: &VectorField, w: &FormField) -> Result<FormField> {
    y.spec().check_same(w.spec())?;
    let n = w.ndim();
    let k = w.degree();
    if k == 0 {
        return Err(Error::Degree("interior product of a 0-form".into()));
    }
    let comps = multi_indices(n, k - 1)
        .into_iter()
        .map(|small| {
            let mut acc = ScalarField::zeros(w.spec());
            for a in 0..n {
                let mut cat = Vec::with_capacity(k);
                cat.push(a);
                cat.extend_from_slice(&small);
                let sign = sort_with_sign(&mut cat);
                if sign != 0 {
                    let p = multi_index_position(n, &cat).unwrap();
                    acc.axpy(sign as f64, &y.component(a).mul(&w.components()[p])?)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    FormField::new(k - 1, comps)
}

/// Codifferential; on 1-forms it is minus the divergence.
pub fn codifferential(w: &FormField) -> Result<FormField> {
    let n = w.ndim();
    let k = w.degree();
    if k == 0 {
        return Err(Error::Degree("codifferential of a 0-form".into()));
    }
    let grads: Vec<Vec<ScalarField>> = w.components().iter().map(gradient).collect::<Result<_>>()?;
    let mut comps = vec![ScalarField::zeros(w.spec()); multi_indices(n, k - 1).len()];
    for (p, idx) in w.indices().iter().enumerate() {
        for (l, &a) in idx.iter().enumerate() {
            let rest: Vec<usize> = idx.iter().copied().filter(|&b| b != a).collect();
            let q = multi_index_position(n, &rest).unwrap();
            // Position l is 1-based in the signed formula.
            comps[q].axpy(if l % 2 == 0 { -1.0 } else { 1.0 }, &grads[p][a])?;
        }
    }
    FormField::new(k - 1, comps)
}

pub fn hodge_laplacian(w: &FormField) -> Result<FormField> {
    let n = w.ndim();
    let k = w.degree();
    let mut out = FormField::zeros(w.spec(), k)?;
    if k > 0 {
        out = out.add(&ext_d(&codifferential(w)?)?)?;
    }
    if k < n {
        out = out.add(&codifferential(&ext_d(w)?)?)?;
    }
    Ok(out)
}

/// Componentwise positive Laplacian `-Σ ∂²`.
pub fn component_laplacian(w: &FormField) -> Result<FormField> {
    let four = Fourier::<f64>::for_spec(w.spec())?;
    Ok(w.map_components(|c| four.laplacian(c)))
}

/// Cartan formula `d ι_Y ω + ι_Y dω`.
pub fn lie_derivative(y: &VectorField, w: &FormField) -> Result<FormField> {
    let n = w.ndim();
    let k = w.degree();
    let mut out = FormField::zeros(w.spec(), k)?;
    if k > 0 {
        out = out.add(&ext_d(&interior(y, w)?)?)?;
    }
    if k < n {
        out = out.add(&interior(y, &ext_d(w)?)?)?;
    }
    Ok(out)
}

/// `Yf` by spectral gradient contraction.
pub fn directional(y: &VectorField, f: &ScalarField) -> Result<ScalarField> {
    let g = gradient(f)?;
    let mut acc = ScalarField::zeros(f.spec());
    for (a, ga) in g.iter().enumerate() {
        acc.axpy(1.0, &y.component(a).mul(ga)?)?;
    }
    Ok(acc)
}

/// Pairing `⟨λ, X⟩` of a 1-form with a vector field.
pub fn pairing(l: &FormField, x: &VectorField) -> Result<ScalarField> {
    if l.degree() != 1 {
        return Err(Error::Degree("pairing needs a 1-form".into()));
    }
    let mut acc = ScalarField::zeros(l.spec());
    for (a, c) in l.components().iter().enumerate() {
        acc.axpy(1.0, &c.mul(x.component(a))?)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Small dense matrices (n <= 3), row-major.

pub fn det_small(m: &[f64], n: usize) -> f64 {
    match n {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => unreachable!("matrices up to 3x3"),
    }
}

/// Inverse by cofactors; returns the determinant alongside.
pub fn inverse_small(m: &[f64], n: usize) -> (Vec<f64>, f64) {
    let det = det_small(m, n);
    let inv = match n {
        1 => vec![1.0 / m[0]],
        2 => vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det],
        3 => {
            let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0 * 3 + c0] * m[r1 * 3 + c1] - m[r0 * 3 + c1] * m[r1 * 3 + c0];
            let cof = [
                c(1, 2, 1, 2),
                -c(1, 2, 0, 2),
                c(1, 2, 0, 1),
                -c(0, 2, 1, 2),
                c(0, 2, 0, 2),
                -c(0, 2, 0, 1),
                c(0, 1, 1, 2),
                -c(0, 1, 0, 2),
                c(0, 1, 0, 1),
            ];
            // Inverse is the transposed cofactor matrix over det.
            (0..9).map(|i| cof[(i % 3) * 3 + i / 3] / det).collect()
        }
        _ => unreachable!("matrices up to 3x3"),
    };
    (inv, det)
}

pub fn matmul_small(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    c
}

// ---------------------------------------------------------------------------
// Interpolation.

fn lagrange(t: f64) -> ([f64; 4], [f64; 4]) {
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    let dw = [
        -(3.0 * t * t - 6.0 * t + 2.0) / 6.0,
        (3.0 * t * t - 4.0 * t - 1.0) / 2.0,
        -(3.0 * t * t - 2.0 * t - 2.0) / 2.0,
        (3.0 * t * t - 1.0) / 6.0,
    ];
    (w, dw)
}

/// Periodic separable cubic interpolation with its gradient.
pub fn interp_grad(f: &ScalarField, x: &[f64]) -> (f64, [f64; 3]) {
    let spec = f.spec();
    let n = spec.ndim();
    let mut base = [0i64; 3];
    let mut w = [[0.0; 4]; 3];
    let mut dw = [[0.0; 4]; 3];
    for a in 0..n {
        let h = spec.spacing(a);
        let u = (x[a] + spec.half_width()) / h;
        let b = u.floor();
        base[a] = b as i64;
        let (wa, dwa) = lagrange(u - b);
        w[a] = wa;
        dw[a] = dwa.map(|v| v / h);
    }
    let sizes = spec.sizes();
    let wrap = |a: usize, i: i64| i.rem_euclid(sizes[a] as i64) as usize;
    let d = f.data();
    let mut val = 0.0;
    let mut grad = [0.0; 3];
    match n {
        1 => {
            for p in 0..4 {
                let v = d[wrap(0, base[0] + p as i64 - 1)];
                val += w[0][p] * v;
                grad[0] += dw[0][p] * v;
            }
        }
        2 => {
            for p in 0..4 {
                let i = wrap(0, base[0] + p as i64 - 1) * sizes[1];
                for q in 0..4 {
                    let v = d[i + wrap(1, base[1] + q as i64 - 1)];
                    val += w[0][p] * w[1][q] * v;
                    grad[0] += dw[0][p] * w[1][q] * v;
                    grad[1] += w[0][p] * dw[1][q] * v;
                }
            }
        }
        _ => {
            for p in 0..4 {
                let i = wrap(0, base[0] + p as i64 - 1) * sizes[1];
                for q in 0..4 {
                    let j = (i + wrap(1, base[1] + q as i64 - 1)) * sizes[2];
                    for r in 0..4 {
                        let v = d[j + wrap(2, base[2] + r as i64 - 1)];
                        val += w[0][p] * w[1][q] * w[2][r] * v;
                        grad[0] += dw[0][p] * w[1][q] * w[2][r] * v;
                        grad[1] += w[0][p] * dw[1][q] * w[2][r] * v;
                        grad[2] += w[0][p] * w[1][q] * dw[2][r] * v;
                    }
                }
            }
        }
    }
    (val, grad)
}

pub fn interp(f: &ScalarField, x: &[f64]) -> f64 {
    interp_grad(f, x).0
}

/// Fourth-order centred difference along `axis`.
pub fn fd_partial(f: &ScalarField, axis: usize) -> ScalarField {
    let spec = f.spec();
    let h = spec.spacing(axis);
    let d = f.data();
    ScalarField::from_fn(spec, |i| {
        let at = |o: isize| d[spec.shifted(i, axis, o)];
        (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h)
    })
}

// ---------------------------------------------------------------------------
// Coordinate changes.

/// A coordinate change `F = id + R` from x-space to y-space.
///
/// `inverse` holds `Φ = F^{-1}` sampled on the y-grid and `jac_inverse`
/// its Jacobian `∂Φ^i/∂y^j`. `region` marks the y-nodes where `Φ` is resolved.
#[derive(Clone, Debug)]
pub struct DiffeoGrid {
    spec: GridSpec,
    displacement: Option<Vec<ScalarField>>,
    /// Fields Newton interpolated (the displacement or its refinement).
    lookup: Vec<ScalarField>,
    inverse: Vec<ScalarField>,
    jac_inverse: MatrixField,
    region: Vec<bool>,
    newton_iters: usize,
}

/// Tolerance of `|F(Φ(y)) - y|` relative to the half width.
pub const INVERSION_TOL: f64 = 1e-9;

impl DiffeoGrid {
    pub fn identity(spec: &GridSpec) -> Result<Self> {
        Self::from_displacement(vec![ScalarField::zeros(spec); spec.ndim()])
    }

    /// Builds `F = id + R` and inverts it by damped Newton at every y-node.
    pub fn from_displacement(r: Vec<ScalarField>) -> Result<Self> {
        Self::from_displacement_refined(r, 1)
    }

    /// As `from_displacement`, but Newton evaluates `R` through cubic
    /// interpolation of its trigonometric interpolant on a grid `factor`
    /// times finer. Rough displacements need this: plain cubic interpolation
    /// of a `C^{1+s}` field leaves errors in the finest blocks of `∇Φ`.
    pub fn from_displacement_refined(r: Vec<ScalarField>, factor: usize) -> Result<Self> {
        let spec = r.first().ok_or_else(|| Error::Degree("empty displacement".into()))?.spec().clone();
        let n = spec.ndim();
        if r.len() != n {
            return Err(Error::Degree(format!("{} displacement components in dimension {n}", r.len())));
        }
        if factor == 0 {
            return Err(Error::OutOfRange("refinement factor 0".into()));
        }
        let lookup: Vec<ScalarField> = if factor == 1 {
            r.clone()
        } else {
            let four = Fourier::<f64>::for_spec(&spec)?;
            r.iter().map(|c| four.upsample(c, factor)).collect::<Result<_>>()?
        };
        let tol = INVERSION_TOL * spec.half_width() * 1e-3;
        let solved: Vec<Result<(Vec<f64>, usize)>> = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let y = spec.node(idx);
                let eval = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
                    let mut res = vec![0.0; n];
                    let mut jac = vec![0.0; n * n];
                    for i in 0..n {
                        let (v, g) = interp_grad(&lookup[i], x);
                        res[i] = x[i] + v - y[i];
                        for j in 0..n {
                            jac[i * n + j] = g[j] + if i == j { 1.0 } else { 0.0 };
                        }
                    }
                    (res, jac)
                };
                let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let mut x: Vec<f64> = (0..n).map(|i| y[i] - r[i].get(idx)).collect();
                let (mut res, mut jac) = eval(&x);
                let mut it = 0;
                while norm(&res) > tol {
                    it += 1;
                    if it > 60 {
                        return Err(Error::NoConvergence { stage: "map inversion", iters: it, residual: norm(&res) });
                    }
                    let (inv, det) = inverse_small(&jac, n);
                    if det.abs() < 1e-3 {
                        return Err(Error::Singular { node: idx, det });
                    }
                    let step: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i * n + j] * res[j]).sum()).collect();
                    let mut lam = 1.0;
                    loop {
                        let trial: Vec<f64> = (0..n).map(|i| x[i] - lam * step[i]).collect();
                        let (tr, tj) = eval(&trial);
                        if norm(&tr) < norm(&res) || lam < 1e-4 {
                            x = trial;
                            res = tr;
                            jac = tj;
                            break;
                        }
                        lam *= 0.5;
                    }
                }
                Ok((x, it))
            })
            .collect();
        let mut inverse = vec![vec![0.0; spec.len()]; n];
        let mut iters = 0;
        for (idx, s) in solved.into_iter().enumerate() {
            let (x, it) = s?;
            iters = iters.max(it);
            for i in 0..n {
                inverse[i][idx] = x[i];
            }
        }
        let inverse: Vec<ScalarField> = inverse.into_iter().map(|d| ScalarField::new(spec.clone(), d)).collect::<Result<_>>()?;
        // Spectral Jacobian of the sampled inverse, so that it matches the
        // derivative used by `ext_d`; the Newton Jacobians only serve the solve.
        let mut entries = Vec::with_capacity(n * n);
        for (i, p) in inverse.iter().enumerate() {
            let periodic = ScalarField::from_fn(&spec, |idx| p.get(idx) - spec.node(idx)[i]);
            for (j, g) in gradient(&periodic)?.into_iter().enumerate() {
                entries.push(if i == j { g.map(|v| v + 1.0) } else { g });
            }
        }
        let jac_inverse = MatrixField::new(n, n, entries)?;
        for idx in 0..spec.len() {
            let det = det_small(&jac_inverse.at(idx), n);
            if det.abs() < 1e-3 {
                return Err(Error::Singular { node: idx, det });
            }
        }
        Ok(Self {
            region: vec![true; spec.len()],
            spec,
            displacement: Some(r),
            lookup,
            inverse,
            jac_inverse,
            newton_iters: iters,
        })
    }

    /// Wraps a sampled map `Φ` (e.g. a chart); the Jacobian comes from
    /// fourth-order differences. Nodes outside `region` carry the identity.
    pub fn from_inverse(phi: Vec<ScalarField>, region: Vec<bool>) -> Result<Self> {
        let spec = phi.first().ok_or_else(|| Error::Degree("empty map".into()))?.spec().clone();
        let n = spec.ndim();
        let mut entries = Vec::with_capacity(n * n);
        for p in &phi {
            for a in 0..n {
                entries.push(fd_partial(p, a));
            }
        }
        Ok(Self {
            jac_inverse: MatrixField::new(n, n, entries)?,
            spec,
            displacement: None,
            lookup: vec![],
            inverse: phi,
            region,
            newton_iters: 0,
        })
    }

    /// Replaces the finite-difference Jacobian with a supplied one.
    pub fn with_jacobian(mut self, jac: MatrixField) -> Result<Self> {
        self.spec.check_same(jac.spec())?;
        self.jac_inverse = jac;
        Ok(self)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn displacement(&self) -> Option<&[ScalarField]> {
        self.displacement.as_deref()
    }

    pub fn inverse(&self) -> &[ScalarField] {
        &self.inverse
    }

    pub fn jac_inverse(&self) -> &MatrixField {
        &self.jac_inverse
    }

    pub fn region(&self) -> &[bool] {
        &self.region
    }

    pub fn newton_iters(&self) -> usize {
        self.newton_iters
    }

    /// `Φ(y)` at a node.
    pub fn phi_at(&self, idx: usize) -> Vec<f64> {
        self.inverse.iter().map(|p| p.get(idx)).collect()
    }

    /// `sup |F(Φ(y)) - y|` over the resolved region.
    pub fn inversion_error(&self) -> f64 {
        if self.displacement.is_none() {
            return 0.0;
        }
        let r = &self.lookup;
        (0..self.spec.len())
            .into_par_iter()
            .filter(|&i| self.region[i])
            .map(|i| {
                let x = self.phi_at(i);
                let y = self.spec.node(i);
                (0..x.len()).map(|a| (x[a] + interp(&r[a], &x) - y[a]).abs()).fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Smallest `det ∇F = 1/det ∇Φ` over the region.
    pub fn min_forward_det(&self) -> f64 {
        let n = self.spec.ndim();
        (0..self.spec.len())
            .into_par_iter()
            .filter(|&i| self.region[i])
            .map(|i| 1.0 / det_small(&self.jac_inverse.at(i), n))
            .reduce(|| f64::INFINITY, f64::min)
    }

    fn image_radius(&self) -> f64 {
        let rmax = (0..self.spec.len()).filter(|&i| self.region[i]).map(|i| self.spec.radius(i)).fold(0.0, f64::max);
        (0..self.spec.len())
            .filter(|&i| self.region[i] && self.spec.radius(i) >= 0.95 * rmax)
            .map(|i| self.phi_at(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    fn check_support(&self, w: &FormField) -> Result<()> {
        if self.region.iter().all(|&b| b) {
            return Ok(());
        }
        let r = self.image_radius();
        let mag = w.max_abs();
        let leak = w
            .components()
            .iter()
            .flat_map(|c| (0..c.spec().len()).filter(move |&i| c.spec().radius(i) > r).map(move |i| c.get(i).abs()))
            .fold(0.0, f64::max);
        if leak > 1e-13 * mag.max(f64::MIN_POSITIVE) {
            return Err(Error::Support(format!("form has mass {leak:.2e} outside the resolved image radius {r:.3}")));
        }
        Ok(())
    }
}

/// Value of the minor of `m` (n×n, row-major) on rows `rows`, cols `cols`.
fn minor(m: &[f64], n: usize, rows: &[usize], cols: &[usize]) -> f64 {
    let k = rows.len();
    if k == 0 {
        return 1.0;
    }
    let sub: Vec<f64> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| m[r * n + c])).collect();
    det_small(&sub, k)
}

/// `F_*ω = Φ^*ω` with component values supplied at points of x-space.
pub fn pushforward_form_with<R>(d: &DiffeoGrid, degree: usize, rule: R) -> Result<FormField>
where
    R: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let spec = d.spec();
    let n = spec.ndim();
    let idx_list = multi_indices(n, degree);
    let m = idx_list.len();
    let vals: Vec<Vec<f64>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            if !d.region[i] {
                return vec![0.0; m];
            }
            let x = d.phi_at(i);
            let w = rule(&x);
            let jac = d.jac_inverse.at(i);
            idx_list
                .iter()
                .map(|cols| idx_list.iter().zip(&w).map(|(rows, wv)| wv * minor(&jac, n, rows, cols)).sum())
                .collect()
        })
        .collect();
    let comps = (0..m)
        .map(|c| ScalarField::new(spec.clone(), vals.iter().map(|v| v[c]).collect()))
        .collect::<Result<_>>()?;
    FormField::new(degree, comps)
}

/// `F_*ω` for a grid form, composing by cubic interpolation.
pub fn pushforward_form(d: &DiffeoGrid, w: &FormField) -> Result<FormField> {
    d.spec().check_same(w.spec())?;
    d.check_support(w)?;
    pushforward_form_with(d, w.degree(), |x| w.components().iter().map(|c| interp(c, x)).collect())
}

/// `F_*X = (∇Φ)^{-1} (X∘Φ)` on the y-grid, with `X` supplied pointwise.
pub fn pushforward_vf_with<R>(d: &DiffeoGrid, rule: R) -> Result<VectorField>
where
    R: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let spec = d.spec();
    let n = spec.ndim();
    let vals: Vec<Vec<f64>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            if !d.region[i] {
                return vec![0.0; n];
            }
            let x = d.phi_at(i);
            let v = rule(&x);
            let (inv, _) = inverse_small(&d.jac_inverse.at(i), n);
            (0..n).map(|a| (0..n).map(|b| inv[a * n + b] * v[b]).sum()).collect()
        })
        .collect();
    VectorField::new((0..n).map(|a| ScalarField::new(spec.clone(), vals.iter().map(|v| v[a]).collect())).collect::<Result<_>>()?)
}

pub fn pushforward_vf(d: &DiffeoGrid, x: &VectorField) -> Result<VectorField> {
    d.spec().check_same(x.spec())?;
    pushforward_vf_with(d, |p| x.components().iter().map(|c| interp(c, p)).collect())
}

/// `F^*X = (∇F)^{-1} (X∘F)` on the x-grid; `X` lives on the y-grid.
pub fn pullback_vf(d: &DiffeoGrid, x: &VectorField) -> Result<VectorField> {
    let r = d.displacement().ok_or_else(|| Error::Degree("pullback needs the forward map".into()))?;
    let spec = d.spec();
    spec.check_same(x.spec())?;
    let n = spec.ndim();
    let grads: Vec<Vec<ScalarField>> = r.iter().map(|ri| (0..n).map(|a| fd_partial(ri, a)).collect()).collect();
    let vals: Vec<Result<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let p = spec.node(i);
            let fx: Vec<f64> = (0..n).map(|a| p[a] + r[a].get(i)).collect();
            let jac: Vec<f64> =
                (0..n * n).map(|e| grads[e / n][e % n].get(i) + if e / n == e % n { 1.0 } else { 0.0 }).collect();
            let (inv, det) = inverse_small(&jac, n);
            if det.abs() < 0.1 {
                return Err(Error::Singular { node: i, det });
            }
            let v: Vec<f64> = x.components().iter().map(|c| interp(c, &fx)).collect();
            Ok((0..n).map(|a| (0..n).map(|b| inv[a * n + b] * v[b]).sum()).collect())
        })
        .collect();
    let vals = vals.into_iter().collect::<Result<Vec<_>>>()?;
    VectorField::new((0..n).map(|a| ScalarField::new(spec.clone(), vals.iter().map(|v| v[a]).collect())).collect::<Result<_>>()?)
}

// ---------------------------------------------------------------------------
// Frames.

/// Component matrix `M[i][j] = X_j^i` of the first `n` fields at a node.
fn frame_matrix(frame: &Frame, idx: usize) -> Vec<f64> {
    let n = frame.spec().ndim();
    (0..n * n).map(|e| frame.field(e % n).component(e / n).get(idx)).collect()
}

/// Dual basis `λ^i` of the first `n` fields of a frame.
pub fn dual_coframe(frame: &Frame) -> Result<Vec<FormField>> {
    let spec = frame.spec().clone();
    let n = spec.ndim();
    if frame.q() < n {
        return Err(Error::Degree(format!("{} fields cannot span dimension {n}", frame.q())));
    }
    let inv: Vec<Result<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let (inv, det) = inverse_small(&frame_matrix(frame, i), n);
            if det.abs() < 0.05 {
                Err(Error::Singular { node: i, det })
            } else {
                Ok(inv)
            }
        })
        .collect();
    let inv = inv.into_iter().collect::<Result<Vec<_>>>()?;
    (0..n)
        .map(|i| {
            let comps = (0..n)
                .map(|j| ScalarField::new(spec.clone(), inv.iter().map(|m| m[i * n + j]).collect()))
                .collect::<Result<_>>()?;
            FormField::new(1, comps)
        })
        .collect()
}

/// Evaluates a 2-form on a pair of vector fields.
pub fn two_form_on(w: &FormField, a: &VectorField, b: &VectorField) -> Result<ScalarField> {
    if w.degree() != 2 {
        return Err(Error::Degree("expected a 2-form".into()));
    }
    let mut acc = ScalarField::zeros(w.spec());
    for (p, idx) in w.indices().iter().enumerate() {
        let (u, v) = (idx[0], idx[1]);
        let cross = a.component(u).mul(b.component(v))?.sub(&a.component(v).mul(b.component(u))?)?;
        acc.axpy(1.0, &w.components()[p].mul(&cross)?)?;
    }
    Ok(acc)
}

/// Structure coefficients in the commutator convention `[X_i, X_j] = Σ c_ij^k X_k`,
/// computed as `c_ij^k = -dλ^k(X_i, X_j)`; flat index `(i*n + j)*n + k`.
pub fn structure_coefficients(coframe: &[FormField], frame: &Frame) -> Result<Vec<ScalarField>> {
    let n = frame.spec().ndim();
    let dl: Vec<FormField> = coframe.iter().map(ext_d).collect::<Result<_>>()?;
    let mut c = vec![ScalarField::zeros(frame.spec()); n * n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..n {
                let v = two_form_on(&dl[k], frame.field(i), frame.field(j))?.scale(-1.0);
                c[(j * n + i) * n + k] = v.scale(-1.0);
                c[(i * n + j) * n + k] = v;
            }
        }
    }
    Ok(c)
}
