//! Dirichlet problems on the unit ball and the coordinate-improvement system.
//!
//! Sign convention: `△ = -Σ∂²` throughout, so `𝔇(1) ≥ 0`.
//!
//! Ball problems use a conservative finite-difference stencil: diagonal
//! coefficients averaged to half points, mixed terms centred. An axis
//! neighbour outside the ball is replaced by the boundary value at the
//! crossing point, at distance `θh`, which only changes the diagonal. The
//! matrix stays symmetric positive definite and the solution is second order
//! up to the sphere.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::{codifferential, det_small, ext_d, gradient, inverse_small, DiffeoGrid};
use crate::potential_para::{invert_laplacian, HALF_BALL};
use crate::spectral::Fourier;
use crate::{FormField, GridSpec, MatrixField, ScalarField};

/// Relative residual at which CG stops.
pub const CG_TOL: f64 = 1e-10;
/// Smallest `det(I + A)` accepted when building a metric.
pub const MIN_DET: f64 = 0.05;
/// Crossing fractions below this are clamped; keeps the diagonal bounded.
const MIN_THETA: f64 = 1e-3;

/// Partition of the grid into the open unit ball, a boundary band of width
/// `2h` and the rest.
#[derive(Clone, Debug)]
pub struct BallMask {
    spec: GridSpec,
    inside: Vec<bool>,
    band: Vec<bool>,
}

impl BallMask {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        let h = (0..spec.ndim()).map(|a| spec.spacing(a)).fold(0.0, f64::max);
        if spec.half_width() < 1.0 + 3.0 * h {
            return Err(Error::InvalidGrid(format!("half width {} leaves no room around the unit ball", spec.half_width())));
        }
        let radii: Vec<f64> = (0..spec.len()).map(|i| spec.radius(i)).collect();
        Ok(Self {
            spec: spec.clone(),
            inside: radii.iter().map(|&r| r < 1.0).collect(),
            band: radii.iter().map(|&r| (1.0..=1.0 + 2.0 * h).contains(&r)).collect(),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn band(&self) -> &[bool] {
        &self.band
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Nodes with `|x|` in an open annulus, all inside the ball.
    pub fn annulus(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.spec.len()).filter(|&i| (lo..hi).contains(&self.spec.radius(i)) && self.inside[i]).collect()
    }
}

// ---------------------------------------------------------------------------
// Metric algebra.

/// `(g^{ij}, √det g)` for the coframe `λ^k = dx^k + Σ_i a_i^k dx^i`, where
/// `A` is stored with rows indexing the form: `A[k][i] = a_i^k`.
///
/// `g_{ij} = ((I+A)^⊤(I+A))_{ij}`, so `g^{-1} = (I+A)^{-1}(I+A)^{-⊤}` and
/// `√det g = det(I+A)`.
pub fn metric_from_coefficients(a: &MatrixField) -> Result<(MatrixField, ScalarField)> {
    let n = square_dim(a)?;
    let spec = a.spec().clone();
    let per_node: Vec<Result<(Vec<f64>, f64)>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let m = plus_identity(&a.at(i), n);
            let (inv, det) = inverse_small(&m, n);
            if det < MIN_DET {
                return Err(Error::Singular { node: i, det });
            }
            let mut ginv = vec![0.0; n * n];
            for p in 0..n {
                for q in 0..n {
                    ginv[p * n + q] = (0..n).map(|k| inv[p * n + k] * inv[q * n + k]).sum();
                }
            }
            Ok((ginv, det))
        })
        .collect();
    let per_node = per_node.into_iter().collect::<Result<Vec<_>>>()?;
    let entries = (0..n * n)
        .map(|e| ScalarField::new(spec.clone(), per_node.iter().map(|(g, _)| g[e]).collect()))
        .collect::<Result<_>>()?;
    let sqrtdet = ScalarField::new(spec, per_node.iter().map(|(_, d)| *d).collect())?;
    Ok((MatrixField::new(n, n, entries)?, sqrtdet))
}

/// Divergence-form coefficients `√det g · g^{ij}`.
pub fn conductivity(a: &MatrixField) -> Result<MatrixField> {
    let (ginv, sqrtdet) = metric_from_coefficients(a)?;
    let n = ginv.rows();
    let entries = ginv.entries().iter().map(|g| g.mul(&sqrtdet)).collect::<Result<_>>()?;
    MatrixField::new(n, n, entries)
}

fn square_dim(a: &MatrixField) -> Result<usize> {
    let n = a.spec().ndim();
    if a.rows() != n || a.cols() != n {
        return Err(Error::Degree(format!("{}x{} coefficient matrix in dimension {n}", a.rows(), a.cols())));
    }
    Ok(n)
}

fn plus_identity(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = m.to_vec();
    for i in 0..n {
        out[i * n + i] += 1.0;
    }
    out
}

/// `ℛ_i^k(u) = Σ_j (√det h h^{ij} − δ^{ij}) u_j^k` at one node; `u[k*n + j] = u_j^k`.
/// Quadratic at the origin.
pub fn quadratic_remainder(u: &[f64], n: usize) -> Option<Vec<f64>> {
    let m = plus_identity(u, n);
    let (inv, det) = inverse_small(&m, n);
    if det < MIN_DET {
        return None;
    }
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..n {
            out[k * n + i] = (0..n)
                .map(|j| {
                    let kij: f64 = det * (0..n).map(|l| inv[i * n + l] * inv[j * n + l]).sum::<f64>();
                    (kij - if i == j { 1.0 } else { 0.0 }) * u[k * n + j]
                })
                .sum();
        }
    }
    Some(out)
}

// ---------------------------------------------------------------------------
// Ball operator.

/// Sparse symmetric operator on the inside nodes, with the couplings to
/// non-inside nodes kept apart for boundary data.
#[derive(Clone, Debug)]
pub struct BallOperator {
    mask: BallMask,
    rows: Vec<usize>,
    compact: Vec<usize>,
    indptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    bnd_ptr: Vec<usize>,
    bnd: Vec<(usize, f64)>,
    /// Axis crossings `(row, axis, direction, θ)`, for the energy sum.
    cuts: Vec<(usize, usize, isize, f64)>,
    coeffs: Option<MatrixField>,
}

const NOT_INSIDE: usize = usize::MAX;

impl BallOperator {
    /// Positive Laplacian.
    pub fn laplacian(mask: &BallMask) -> Result<Self> {
        Self::assemble(mask, None)
    }

    /// `-Σ ∂_j(K^{ij} ∂_i ·)` for a symmetric coefficient field `K`.
    pub fn divergence_form(mask: &BallMask, k: &MatrixField) -> Result<Self> {
        mask.spec.check_same(k.spec())?;
        square_dim(k)?;
        Self::assemble(mask, Some(k.clone()))
    }

    fn assemble(mask: &BallMask, coeffs: Option<MatrixField>) -> Result<Self> {
        let spec = &mask.spec;
        let n = spec.ndim();
        let rows: Vec<usize> = (0..spec.len()).filter(|&i| mask.inside[i]).collect();
        let mut compact = vec![NOT_INSIDE; spec.len()];
        for (c, &g) in rows.iter().enumerate() {
            compact[g] = c;
        }
        let kget = |a: usize, b: usize, idx: usize| -> f64 {
            match &coeffs {
                Some(k) => k.get(a, b).get(idx),
                None => f64::from(u8::from(a == b)),
            }
        };
        type Row = (Vec<(usize, f64)>, Vec<(usize, f64)>, f64, Vec<(usize, isize, f64)>);
        let assembled: Vec<Row> = rows
            .par_iter()
            .map(|&p| {
                let x = spec.node(p);
                let r2: f64 = x[..n].iter().map(|v| v * v).sum();
                let mut inner = Vec::new();
                let mut outer = Vec::new();
                let mut diag = 0.0;
                let mut cuts = Vec::new();
                for a in 0..n {
                    let h = spec.spacing(a);
                    for s in [1isize, -1] {
                        let q = spec.shifted(p, a, s);
                        let c = 0.5 * (kget(a, a, p) + kget(a, a, q)) / (h * h);
                        if mask.inside[q] {
                            diag += c;
                            inner.push((q, -c));
                        } else {
                            let rest = r2 - x[a] * x[a];
                            let t = (((1.0 - rest).max(0.0).sqrt() - s as f64 * x[a]) / h).clamp(MIN_THETA, 1.0);
                            diag += c / t;
                            // Boundary value at the crossing, linear along the edge.
                            outer.push((p, c * (1.0 - t) / t));
                            outer.push((q, c));
                            cuts.push((a, s, t));
                        }
                    }
                    for b in 0..n {
                        if b == a {
                            continue;
                        }
                        let hab = 4.0 * h * spec.spacing(b);
                        for sb in [1isize, -1] {
                            let pb = spec.shifted(p, b, sb);
                            let kab = kget(a, b, pb);
                            if kab == 0.0 {
                                continue;
                            }
                            for sa in [1isize, -1] {
                                let q = spec.shifted(pb, a, sa);
                                let v = -(sb * sa) as f64 * kab / hab;
                                if mask.inside[q] {
                                    inner.push((q, v));
                                } else {
                                    outer.push((q, -v));
                                }
                            }
                        }
                    }
                }
                (inner, outer, diag, cuts)
            })
            .collect();
        let mut indptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(rows.len());
        let mut bnd_ptr = vec![0];
        let mut bnd = Vec::new();
        let mut cuts = Vec::new();
        for (row, (inner, outer, d, cut)) in assembled.into_iter().enumerate() {
            cols.push(row);
            vals.push(d);
            for (q, v) in inner {
                cols.push(compact[q]);
                vals.push(v);
            }
            indptr.push(cols.len());
            diag.push(d);
            bnd.extend(outer);
            bnd_ptr.push(bnd.len());
            cuts.extend(cut.into_iter().map(|(a, s, t)| (row, a, s, t)));
        }
        Ok(Self { mask: mask.clone(), rows, compact, indptr, cols, vals, diag, bnd_ptr, bnd, cuts, coeffs })
    }

    pub fn mask(&self) -> &BallMask {
        &self.mask
    }

    pub fn unknowns(&self) -> usize {
        self.rows.len()
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            *out = (self.indptr[r]..self.indptr[r + 1]).map(|e| self.vals[e] * x[self.cols[e]]).sum();
        });
    }

    /// `f` at the inside nodes plus the boundary coupling of `g`.
    fn rhs(&self, f: &ScalarField, g: Option<&ScalarField>) -> Vec<f64> {
        self.rows
            .par_iter()
            .enumerate()
            .map(|(r, &p)| {
                let mut v = f.get(p);
                if let Some(g) = g {
                    v += self.bnd[self.bnd_ptr[r]..self.bnd_ptr[r + 1]].iter().map(|&(q, c)| c * g.get(q)).sum::<f64>();
                }
                v
            })
            .collect()
    }

    fn gather(&self, u: &ScalarField) -> Vec<f64> {
        self.rows.iter().map(|&p| u.get(p)).collect()
    }

    /// Embeds inside values; every other node takes `g` (or zero).
    fn scatter(&self, x: &[f64], g: Option<&ScalarField>) -> ScalarField {
        let spec = &self.mask.spec;
        ScalarField::from_fn(spec, |i| match self.compact[i] {
            NOT_INSIDE => g.map_or(0.0, |g| g.get(i)),
            c => x[c],
        })
    }

    /// Operator applied to the inside values of `u`, boundary data zero;
    /// zero off the ball.
    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let x = self.gather(u);
        let mut y = vec![0.0; x.len()];
        self.matvec(&x, &mut y);
        self.scatter(&y, None)
    }

    /// Solves `L u = f` inside with `u = g` off the ball.
    pub fn solve(&self, f: &ScalarField, g: Option<&ScalarField>, warm: Option<&ScalarField>, tol: f64) -> Result<Solve> {
        let spec = &self.mask.spec;
        spec.check_same(f.spec())?;
        if let Some(g) = g {
            spec.check_same(g.spec())?;
        }
        if let Some(p) = self.rows.iter().find(|&&p| !f.get(p).is_finite()) {
            return Err(Error::NonFinite { node: *p });
        }
        let b = self.rhs(f, g);
        let mut x = warm.map_or_else(|| vec![0.0; b.len()], |w| self.gather(w));
        let max_iter = 10 * spec.sizes().iter().copied().max().unwrap_or(16);
        let (iters, residual) = self.pcg(&b, &mut x, tol, max_iter)?;
        Ok(Solve { u: self.scatter(&x, g), iters, residual })
    }

    /// Jacobi-preconditioned CG; returns iterations and relative residual.
    fn pcg(&self, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<(usize, f64)> {
        let dot = |u: &[f64], v: &[f64]| -> f64 { u.par_iter().zip(v).map(|(a, b)| a * b).sum() };
        let bnorm = dot(b, b).sqrt();
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok((0, 0.0));
        }
        let mut ax = vec![0.0; b.len()];
        self.matvec(x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut q = vec![0.0; b.len()];
        for it in 0..=max_iter {
            let res = dot(&r, &r).sqrt() / bnorm;
            if res <= tol {
                return Ok((it, res));
            }
            if it == max_iter {
                return Err(Error::NoConvergence { stage: "conjugate gradient", iters: it, residual: res });
            }
            self.matvec(&p, &mut q);
            let alpha = rz / dot(&p, &q);
            x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.par_iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
            z.par_iter_mut().zip(&r).zip(&self.diag).for_each(|((z, r), d)| *z = r / d);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        unreachable!()
    }

    fn k(&self, a: usize, b: usize, idx: usize) -> f64 {
        match &self.coeffs {
            Some(k) => k.get(a, b).get(idx),
            None => f64::from(u8::from(a == b)),
        }
    }

    /// Discrete energy `Σ K (D⁺u)² + mixed terms`, by edges, for `u` vanishing
    /// off the ball. Equals `u · L u` by summation by parts.
    pub fn energy(&self, u: &ScalarField) -> f64 {
        let spec = &self.mask.spec;
        let n = spec.ndim();
        let val = |i: usize| if self.mask.inside[i] { u.get(i) } else { 0.0 };
        let edges: f64 = (0..spec.len())
            .into_par_iter()
            .map(|p| {
                let mut acc = 0.0;
                for a in 0..n {
                    let h = spec.spacing(a);
                    let q = spec.shifted(p, a, 1);
                    if self.mask.inside[p] && self.mask.inside[q] {
                        let c = 0.5 * (self.k(a, a, p) + self.k(a, a, q));
                        acc += c * ((val(q) - val(p)) / h).powi(2);
                    }
                    for b in 0..n {
                        if a != b && self.k(a, b, p) != 0.0 {
                            acc += self.k(a, b, p) * centred(spec, &val, p, a) * centred(spec, &val, p, b);
                        }
                    }
                }
                acc
            })
            .sum();
        let cuts: f64 = self
            .cuts
            .iter()
            .map(|&(row, a, s, t)| {
                let p = self.rows[row];
                let q = spec.shifted(p, a, s);
                let h = spec.spacing(a);
                0.5 * (self.k(a, a, p) + self.k(a, a, q)) * (u.get(p) / h).powi(2) / t
            })
            .sum();
        edges + cuts
    }

    /// Flux pairing `Σ K v · D u` by edges; equals `u · (-Div_K v)` for `u`
    /// vanishing off the ball.
    pub fn flux_pairing(&self, v: &[ScalarField], u: &ScalarField) -> f64 {
        let spec = &self.mask.spec;
        let n = spec.ndim();
        let val = |i: usize| if self.mask.inside[i] { u.get(i) } else { 0.0 };
        (0..spec.len())
            .into_par_iter()
            .map(|p| {
                let mut acc = 0.0;
                for a in 0..n {
                    let h = spec.spacing(a);
                    let q = spec.shifted(p, a, 1);
                    let flux = 0.5 * (self.k(a, a, p) + self.k(a, a, q)) * 0.5 * (v[a].get(p) + v[a].get(q));
                    acc += flux * (val(q) - val(p)) / h;
                    for b in 0..n {
                        if a != b && self.k(a, b, p) != 0.0 {
                            acc += self.k(a, b, p) * v[a].get(p) * centred(spec, &val, p, b);
                        }
                    }
                }
                acc
            })
            .sum()
    }

    /// `-Div_K v`: the conservative discretisation of `-Σ ∂_j(K^{ij} v_i)`
    /// matching the operator's stencil, at every node of the torus.
    pub fn neg_divergence(&self, v: &[ScalarField]) -> ScalarField {
        let spec = &self.mask.spec;
        let n = spec.ndim();
        ScalarField::from_fn(spec, |p| {
            let mut acc = 0.0;
            for a in 0..n {
                let h = spec.spacing(a);
                let (qp, qm) = (spec.shifted(p, a, 1), spec.shifted(p, a, -1));
                let fp = 0.5 * (self.k(a, a, p) + self.k(a, a, qp)) * 0.5 * (v[a].get(p) + v[a].get(qp));
                let fm = 0.5 * (self.k(a, a, p) + self.k(a, a, qm)) * 0.5 * (v[a].get(p) + v[a].get(qm));
                acc -= (fp - fm) / h;
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let (bp, bm) = (spec.shifted(p, b, 1), spec.shifted(p, b, -1));
                    acc -= (self.k(a, b, bp) * v[a].get(bp) - self.k(a, b, bm) * v[a].get(bm)) / (2.0 * spec.spacing(b));
                }
            }
            acc
        })
    }
}

fn centred(spec: &GridSpec, val: &impl Fn(usize) -> f64, p: usize, a: usize) -> f64 {
    (val(spec.shifted(p, a, 1)) - val(spec.shifted(p, a, -1))) / (2.0 * spec.spacing(a))
}

/// Result of one ball solve.
#[derive(Clone, Debug)]
pub struct Solve {
    pub u: ScalarField,
    pub iters: usize,
    pub residual: f64,
}

/// `u` with `△u = f` in the ball and `u = g` (default zero) off it.
pub fn dirichlet_solve(f: &ScalarField, g: Option<&ScalarField>, mask: &BallMask) -> Result<ScalarField> {
    Ok(BallOperator::laplacian(mask)?.solve(f, g, None, CG_TOL)?.u)
}

// ---------------------------------------------------------------------------
// The displacement system.

/// Where the displacement system is posed.
#[derive(Clone, Debug)]
pub enum Domain {
    /// Unit ball, `R = 0` on the sphere, finite differences and CG.
    Ball(BallMask),
    /// Whole periodic cell with spectral derivatives; no boundary condition.
    Torus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub picard_ratio: Vec<f64>,
    pub cg_iters: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Stop once the relative update falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 200, cg_tol: CG_TOL }
    }
}

#[derive(Clone, Debug)]
pub struct Displacement {
    pub r: Vec<ScalarField>,
    pub telemetry: Telemetry,
}

/// Rows of `A` as covectors: `rows[k][i] = a_i^k`.
fn coefficient_rows(a: &MatrixField) -> Vec<Vec<ScalarField>> {
    let n = a.rows();
    (0..n).map(|k| (0..n).map(|i| a.get(k, i).clone()).collect()).collect()
}

fn check_half_ball(a: &MatrixField) -> Result<()> {
    let spec = a.spec();
    let mag = a.max_abs();
    let leak = a
        .entries()
        .iter()
        .flat_map(|c| (0..spec.len()).filter(|&i| spec.radius(i) > HALF_BALL).map(move |i| c.get(i).abs()))
        .fold(0.0, f64::max);
    if leak > 1e-13 * mag {
        return Err(Error::Support(format!("coefficient matrix reaches {leak:.2e} outside the half ball")));
    }
    Ok(())
}

/// Solves `Σ_{ij} ∂_j(√det g g^{ij} ∂_i R^k) = Σ_{ij} ∂_j(√det g g^{ij} a_i^k)`
/// by Picard iteration around the flat Laplacian:
/// `△R_{m+1} = b - L_{K-δ} R_m` with `b = -Σ∂_j(K^{ij} a_i)`.
pub fn solve_displacement(a: &MatrixField, domain: &Domain, opts: &PicardOptions) -> Result<Displacement> {
    check_half_ball(a)?;
    solve_displacement_unchecked(a, domain, opts)
}

/// `solve_displacement` without the support check, for data that is already
/// a solution and spreads over the whole cell.
pub(crate) fn solve_displacement_unchecked(a: &MatrixField, domain: &Domain, opts: &PicardOptions) -> Result<Displacement> {
    let n = square_dim(a)?;
    let k = conductivity(a)?;
    let rows = coefficient_rows(a);
    match domain {
        Domain::Ball(mask) => picard_ball(&k, &rows, mask, opts, n),
        Domain::Torus => picard_torus(&k, &rows, opts, n),
    }
}

fn update_ratio(ratios: &mut Vec<f64>, prev: &mut Option<f64>, delta: f64) -> Result<()> {
    if let Some(p) = *prev {
        if p > 0.0 {
            let ratio = delta / p;
            ratios.push(ratio);
            let tail = &ratios[ratios.len().saturating_sub(3)..];
            if ratios.len() >= 3 && tail.iter().all(|&r| r >= 1.0) {
                return Err(Error::NotContraction { ratio });
            }
        }
    }
    *prev = Some(delta);
    Ok(())
}

fn picard_ball(k: &MatrixField, rows: &[Vec<ScalarField>], mask: &BallMask, opts: &PicardOptions, n: usize) -> Result<Displacement> {
    let spec = mask.spec().clone();
    spec.check_same(k.spec())?;
    let flat = BallOperator::laplacian(mask)?;
    let full = BallOperator::divergence_form(mask, k)?;
    let rhs: Vec<ScalarField> = rows.iter().map(|v| full.neg_divergence(v)).collect();
    let mut r = vec![ScalarField::zeros(&spec); n];
    let mut ratios = Vec::new();
    let mut prev = None;
    let mut cg_iters = 0;
    for it in 0..opts.max_iter {
        let mut delta: f64 = 0.0;
        let mut size: f64 = 0.0;
        for c in 0..n {
            // b - (L_K - L_δ) R_m
            let mut f = rhs[c].sub(&full.apply(&r[c]))?;
            f.axpy(1.0, &flat.apply(&r[c]))?;
            let s = flat.solve(&f, None, Some(&r[c]), opts.cg_tol)?;
            cg_iters += s.iters;
            delta = delta.max(s.u.sub(&r[c])?.max_abs());
            size = size.max(s.u.max_abs());
            r[c] = s.u;
        }
        update_ratio(&mut ratios, &mut prev, delta)?;
        if delta <= opts.tol * size || size == 0.0 {
            let residual = ball_residual(&full, &rhs, &r);
            return Ok(Displacement { r, telemetry: Telemetry { picard_ratio: ratios, cg_iters, residual } });
        }
        if it + 1 == opts.max_iter {
            return Err(Error::NoConvergence { stage: "picard", iters: opts.max_iter, residual: delta / size });
        }
    }
    unreachable!()
}

/// Relative `ℓ²` residual of `L_K R = b` over the inside nodes.
fn ball_residual(op: &BallOperator, rhs: &[ScalarField], r: &[ScalarField]) -> f64 {
    let inside = op.mask().inside();
    let (mut num, mut den) = (0.0, 0.0);
    for (b, rc) in rhs.iter().zip(r) {
        let lr = op.apply(rc);
        for i in (0..inside.len()).filter(|&i| inside[i]) {
            num += (lr.get(i) - b.get(i)).powi(2);
            den += b.get(i).powi(2);
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// `Σ_j ∂_j(Σ_i K^{ij} v_i)` with spectral derivatives.
fn spectral_divergence(k: &MatrixField, v: &[ScalarField]) -> Result<ScalarField> {
    let spec = k.spec();
    let four = Fourier::<f64>::for_spec(spec)?;
    let n = spec.ndim();
    let mut acc = ScalarField::zeros(spec);
    for j in 0..n {
        let mut flux = ScalarField::zeros(spec);
        for (i, vi) in v.iter().enumerate() {
            flux.axpy(1.0, &k.get(i, j).mul(vi)?)?;
        }
        acc.axpy(1.0, &four.derivative(&flux, j))?;
    }
    Ok(acc)
}

fn picard_torus(k: &MatrixField, rows: &[Vec<ScalarField>], opts: &PicardOptions, n: usize) -> Result<Displacement> {
    let spec = k.spec().clone();
    let mut r = vec![ScalarField::zeros(&spec); n];
    let mut ratios = Vec::new();
    let mut prev = None;
    let kd = MatrixField::new(
        n,
        n,
        (0..n * n).map(|e| if e / n == e % n { k.entries()[e].map(|v| v - 1.0) } else { k.entries()[e].clone() }).collect(),
    )?;
    let forcing: Vec<ScalarField> = rows.iter().map(|v| spectral_divergence(k, v)).collect::<Result<_>>()?;
    for it in 0..opts.max_iter {
        let mut delta: f64 = 0.0;
        let mut size: f64 = 0.0;
        for c in 0..n {
            // -Σ∂²R = Σ∂_j((K-δ)∂_i R_m) - Σ∂_j(K a)
            let g = gradient(&r[c])?;
            let f = spectral_divergence(&kd, &g)?.sub(&forcing[c])?;
            let next = invert_laplacian(&f)?;
            delta = delta.max(next.sub(&r[c])?.max_abs());
            size = size.max(next.max_abs());
            r[c] = next;
        }
        update_ratio(&mut ratios, &mut prev, delta)?;
        if delta <= opts.tol * size || size == 0.0 {
            let (mut num, mut den) = (0.0, 0.0);
            for (c, rc) in r.iter().enumerate() {
                let g = gradient(rc)?;
                let res = spectral_divergence(k, &g)?.sub(&forcing[c])?;
                num += res.data().iter().map(|v| v * v).sum::<f64>();
                den += forcing[c].data().iter().map(|v| v * v).sum::<f64>();
            }
            let residual = if den == 0.0 { num.sqrt() } else { (num / den).sqrt() };
            return Ok(Displacement { r, telemetry: Telemetry { picard_ratio: ratios, cg_iters: 0, residual } });
        }
        if it + 1 == opts.max_iter {
            return Err(Error::NoConvergence { stage: "picard", iters: opts.max_iter, residual: delta / size });
        }
    }
    unreachable!()
}

/// Solves the displacement system and inverts `F = id + R`.
///
/// `refine` is the oversampling used by the inversion (see
/// `DiffeoGrid::from_displacement_refined`).
pub fn solve_coordinates(a: &MatrixField, domain: &Domain, opts: &PicardOptions, refine: usize) -> Result<(DiffeoGrid, Telemetry)> {
    let d = solve_displacement(a, domain, opts)?;
    Ok((DiffeoGrid::from_displacement_refined(d.r, refine)?, d.telemetry))
}

/// Energy check for a ball solution: `⟨∇R, ∇R⟩_K` against `⟨a, ∇R⟩_K`,
/// both summed by edges. Returns the relative gap per component.
pub fn energy_gap(a: &MatrixField, r: &[ScalarField], mask: &BallMask) -> Result<Vec<f64>> {
    let op = BallOperator::divergence_form(mask, &conductivity(a)?)?;
    Ok(coefficient_rows(a)
        .iter()
        .zip(r)
        .map(|(v, rc)| {
            let lhs = op.energy(rc);
            let rhs = op.flux_pairing(v, rc);
            if rhs == 0.0 {
                lhs.abs()
            } else {
                (lhs - rhs).abs() / rhs.abs()
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// The transformed system.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationResidual {
    /// Ball `H^{-1}` norm of `Σ_i ∂_i(√det h h^{ij} b_j^k)`, per `k`.
    pub absolute: Vec<f64>,
    /// The same divided by the ball `L²` norm of the flux.
    pub relative: Vec<f64>,
}

/// Weak residual of `Σ_i ∂_i(√det h h^{ij} b_j^k) = 0` on the ball, with
/// `h` the metric of `η^k = dy^k + Σ_j b_j^k dy^j`.
pub fn transformed_residual(b: &MatrixField, mask: &BallMask) -> Result<EquationResidual> {
    mask.spec().check_same(b.spec())?;
    let k = conductivity(b)?;
    let lap = BallOperator::laplacian(mask)?;
    let vol = mask.spec().cell_volume();
    let (mut absolute, mut relative) = (vec![], vec![]);
    for row in coefficient_rows(b) {
        let div = spectral_divergence(&k, &row)?;
        let u = lap.solve(&div, None, None, CG_TOL)?.u;
        let dual: f64 = (0..div.spec().len()).filter(|&i| mask.inside[i]).map(|i| div.get(i) * u.get(i)).sum::<f64>() * vol;
        let abs = dual.max(0.0).sqrt();
        let mut flux2 = 0.0;
        for j in 0..row.len() {
            for i in (0..div.spec().len()).filter(|&i| mask.inside[i]) {
                let f: f64 = row.iter().enumerate().map(|(l, v)| k.get(l, j).get(i) * v.get(i)).sum();
                flux2 += f * f * vol;
            }
        }
        absolute.push(abs);
        relative.push(if flux2 > 0.0 { abs / flux2.sqrt() } else { abs });
    }
    Ok(EquationResidual { absolute, relative })
}

/// Entrywise `ℛ_i^k(f)`, as a matrix field with rows `k`, columns `i`.
pub fn remainder_field(f: &MatrixField) -> Result<MatrixField> {
    let n = square_dim(f)?;
    let spec = f.spec().clone();
    let vals: Vec<Result<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let u = f.at(i);
            quadratic_remainder(&u, n).ok_or_else(|| Error::Singular { node: i, det: det_small(&plus_identity(&u, n), n) })
        })
        .collect();
    let vals = vals.into_iter().collect::<Result<Vec<_>>>()?;
    MatrixField::new(n, n, (0..n * n).map(|e| ScalarField::new(spec.clone(), vals.iter().map(|v| v[e]).collect())).collect::<Result<_>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// `‖f_{m+1} - f_m‖_∞`.
    pub increments: Vec<f64>,
    /// Successive increment ratios.
    pub ratios: Vec<f64>,
    pub cg_iters: usize,
}

/// Iterates `f ↦ T[f]` from `f = 0`, where
///
/// `T[f]^k_j = b_j^k - 𝔇(△b_j^k) + 𝔇(⟨ϑdη^k, ∂_j⟩) + Σ_i 𝔇(∂_j ∂_i ℛ_i^k(f))`.
///
/// `B` is a solution candidate, `dη` the exterior derivatives of its forms.
/// The first two terms are the harmonic part of `B` (its boundary data);
/// `△` and the derivatives are spectral, `𝔇` the ball solver.
pub fn contraction_iterate(b: &MatrixField, deta: &[FormField], mask: &BallMask, iterations: usize) -> Result<(MatrixField, FixedPointReport)> {
    let n = square_dim(b)?;
    let spec = mask.spec().clone();
    spec.check_same(b.spec())?;
    if deta.len() != n || deta.iter().any(|w| w.degree() != 2 && n >= 2) {
        return Err(Error::Degree(format!("expected {n} two-forms")));
    }
    let four = Fourier::<f64>::for_spec(&spec)?;
    let lap = BallOperator::laplacian(mask)?;
    let mut cg_iters = 0;
    let mut solve = |f: &ScalarField, warm: Option<&ScalarField>| -> Result<ScalarField> {
        let s = lap.solve(f, None, warm, CG_TOL)?;
        cg_iters += s.iters;
        Ok(s.u)
    };
    let mut fixed = Vec::with_capacity(n * n);
    for (kk, eta) in deta.iter().enumerate() {
        let vd = codifferential(eta)?;
        for j in 0..n {
            let bj = b.get(kk, j);
            let mut f = vd.components()[j].sub(&four.laplacian(bj))?;
            f = solve(&f, None)?;
            fixed.push(f.add(bj)?);
        }
    }
    let mut f = MatrixField::zeros(&spec, n, n);
    let mut corr: Vec<Option<ScalarField>> = vec![None; n * n];
    let (mut increments, mut ratios) = (vec![], vec![]);
    for _ in 0..iterations {
        let rem = remainder_field(&f)?;
        let mut next = Vec::with_capacity(n * n);
        for kk in 0..n {
            let row: Vec<ScalarField> = (0..n).map(|i| rem.get(kk, i).clone()).collect();
            let mut div = ScalarField::zeros(&spec);
            for (i, c) in row.iter().enumerate() {
                div.axpy(1.0, &four.derivative(c, i))?;
            }
            for j in 0..n {
                let e = kk * n + j;
                let g = solve(&four.derivative(&div, j), corr[e].as_ref())?;
                next.push(fixed[e].add(&g)?);
                corr[e] = Some(g);
            }
        }
        let next = MatrixField::new(n, n, next)?;
        let inc = next.sub(&f)?.max_abs();
        if let Some(&last) = increments.last() {
            if last > 0.0 {
                let ratio = inc / last;
                ratios.push(ratio);
                if ratio >= 1.0 {
                    return Err(Error::NotContraction { ratio });
                }
            }
        }
        increments.push(inc);
        f = next;
        if inc == 0.0 {
            break;
        }
    }
    Ok((f, FixedPointReport { increments, ratios, cg_iters }))
}

/// Exterior derivatives `dη^k` of `η^k = dy^k + Σ_j b_j^k dy^j`.
pub fn coframe_derivatives(b: &MatrixField) -> Result<Vec<FormField>> {
    let n = square_dim(b)?;
    (0..n)
        .map(|k| {
            let comps: Vec<ScalarField> = (0..n).map(|j| b.get(k, j).clone()).collect();
            ext_d(&FormField::new(1, comps)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exterior::tests::grid;
    use crate::spectral::{norm_dyadic, smooth_step};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(spec: &GridSpec, seed: u64, draw: impl Fn(&mut ChaCha8Rng) -> f64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::new(spec.clone(), (0..spec.len()).map(|_| draw(&mut rng)).collect()).unwrap()
    }

    fn inside_max(mask: &BallMask, f: impl Fn(usize) -> f64) -> f64 {
        (0..mask.spec().len()).filter(|&i| mask.inside()[i]).map(f).fold(0.0, f64::max)
    }

    /// Smooth bump, 1 at the origin, zero from radius 0.45 on.
    fn bump(r: f64) -> f64 {
        smooth_step((0.45 - r) / 0.35)
    }

    fn unit_disc_error(n: usize) -> f64 {
        let spec = grid(n);
        let mask = BallMask::new(&spec).unwrap();
        let u = dirichlet_solve(&ScalarField::constant(&spec, 1.0), None, &mask).unwrap();
        inside_max(&mask, |i| (u.get(i) - (1.0 - spec.radius(i).powi(2)) / 4.0).abs())
    }

    fn manufactured_error(n: usize) -> f64 {
        let spec = grid(n);
        let mask = BallMask::new(&spec).unwrap();
        let exact = |x: &[f64]| (1.0 - x[0] * x[0] - x[1] * x[1]) * (PI * x[0]).sin();
        let f = ScalarField::sample(&spec, |x| {
            let (s, c) = (PI * x[0]).sin_cos();
            let w = 1.0 - x[0] * x[0] - x[1] * x[1];
            4.0 * s + 4.0 * PI * x[0] * c + PI * PI * w * s
        })
        .unwrap();
        let u = dirichlet_solve(&f, None, &mask).unwrap();
        inside_max(&mask, |i| (u.get(i) - exact(&spec.node(i))).abs())
    }

    #[test]
    fn mask_partitions_grid_and_closes_the_stencil() {
        let spec = grid(64);
        let mask = BallMask::new(&spec).unwrap();
        for i in 0..spec.len() {
            assert!(!(mask.inside()[i] && mask.band()[i]));
            if mask.inside()[i] {
                for a in 0..2 {
                    for s in [-1, 1] {
                        for b in 0..2 {
                            for t in [-1, 1] {
                                let q = spec.shifted(spec.shifted(i, a, s), b, t);
                                assert!(mask.inside()[q] || mask.band()[q]);
                            }
                        }
                    }
                }
            }
        }
        assert!(BallMask::new(&GridSpec::cube(2, 16, 1.2).unwrap()).is_err());
    }

    #[test]
    fn unit_source_gives_the_radial_parabola_at_second_order() {
        let (e1, e2) = (unit_disc_error(64), unit_disc_error(128));
        assert!(e2 < 2e-4, "{e2}");
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.3, "order {order} ({e1:.2e}, {e2:.2e})");
    }

    #[test]
    fn zero_data_gives_zero() {
        let spec = grid(32);
        let mask = BallMask::new(&spec).unwrap();
        let u = dirichlet_solve(&ScalarField::zeros(&spec), None, &mask).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let errs: Vec<f64> = [64, 128, 256].iter().map(|&n| manufactured_error(n)).collect();
        println!("manufactured errors {errs:?}");
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order} from {errs:?}");
        }
    }

    #[test]
    fn boundary_data_linear_functions_are_reproduced() {
        let spec = grid(64);
        let mask = BallMask::new(&spec).unwrap();
        let g = ScalarField::sample(&spec, |x| 0.3 + x[0] - 2.0 * x[1]).unwrap();
        let op = BallOperator::laplacian(&mask).unwrap();
        let u = op.solve(&ScalarField::zeros(&spec), Some(&g), None, 1e-13).unwrap().u;
        let err = (0..spec.len()).map(|i| (u.get(i) - g.get(i)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn solver_is_linear() {
        let spec = grid(64);
        let mask = BallMask::new(&spec).unwrap();
        let op = BallOperator::laplacian(&mask).unwrap();
        let f = noise(&spec, 3, |r| r.gen_range(-1.0..1.0));
        let g = noise(&spec, 4, |r| r.gen_range(-1.0..1.0));
        let (a, b) = (0.7, -1.3);
        let solve = |f: &ScalarField| op.solve(f, None, None, 1e-15).map(|s| s.u).unwrap_or_else(|e| panic!("{e}"));
        let mut comb = f.scale(a);
        comb.axpy(b, &g).unwrap();
        let lhs = solve(&comb);
        let mut rhs = solve(&f).scale(a);
        rhs.axpy(b, &solve(&g)).unwrap();
        let err = lhs.sub(&rhs).unwrap().max_abs() / lhs.max_abs();
        assert!(err < 1e-12, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn nonnegative_source_gives_nonnegative_solution(seed in 0u64..1000) {
            let spec = grid(32);
            let mask = BallMask::new(&spec).unwrap();
            let f = noise(&spec, seed, |r| r.gen_range(0.0..1.0f64).powi(4));
            let u = dirichlet_solve(&f, None, &mask).unwrap();
            let min = (0..spec.len()).map(|i| u.get(i)).fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-12, "{}", min);
        }
    }

    fn single_entry(spec: &GridSpec, eps: f64, row: usize, col: usize) -> MatrixField {
        let mut a = MatrixField::zeros(spec, 2, 2);
        *a.get_mut(row, col) = ScalarField::from_fn(spec, |i| eps * bump(spec.radius(i)));
        a
    }

    #[test]
    fn flat_metric_for_zero_coefficients() {
        let spec = grid(16);
        let (ginv, sd) = metric_from_coefficients(&MatrixField::zeros(&spec, 2, 2)).unwrap();
        for i in 0..spec.len() {
            assert_eq!(ginv.at(i), vec![1.0, 0.0, 0.0, 1.0]);
            assert_eq!(sd.get(i), 1.0);
        }
    }

    #[test]
    fn diagonal_coefficients_give_diagonal_metric() {
        let spec = grid(16);
        let eps = 0.2;
        let mut a = MatrixField::zeros(&spec, 2, 2);
        *a.get_mut(0, 0) = ScalarField::constant(&spec, eps);
        let (ginv, sd) = metric_from_coefficients(&a).unwrap();
        assert!((sd.get(5) - (1.0 + eps)).abs() < 1e-15);
        assert!((ginv.get(0, 0).get(5) - (1.0 + eps).powi(-2)).abs() < 1e-15);
        assert!((ginv.get(1, 1).get(5) - 1.0).abs() < 1e-15);
        assert_eq!(ginv.get(0, 1).get(5), 0.0);
    }

    #[test]
    fn near_singular_coefficients_are_rejected() {
        let spec = grid(16);
        let mut a = MatrixField::zeros(&spec, 2, 2);
        *a.get_mut(0, 0) = ScalarField::constant(&spec, -0.99);
        assert!(matches!(metric_from_coefficients(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn inverse_metric_inverts_the_metric_and_tracks_the_coefficients() {
        let spec = grid(64);
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amp = rng.gen_range(0.01..0.2);
            let entries: Vec<ScalarField> = (0..4)
                .map(|e| {
                    let f = crate::exterior::tests::rand_field(&spec, 4, seed * 10 + e);
                    let m = f.max_abs();
                    ScalarField::from_fn(&spec, |i| amp * f.get(i) / m * bump(spec.radius(i)))
                })
                .collect();
            let a = MatrixField::new(2, 2, entries).unwrap();
            let (ginv, _) = metric_from_coefficients(&a).unwrap();
            for i in (0..spec.len()).step_by(37) {
                let m = plus_identity(&a.at(i), 2);
                let g: Vec<f64> = (0..4).map(|e| (0..2).map(|k| m[k * 2 + e / 2] * m[k * 2 + e % 2]).sum()).collect();
                let prod = crate::exterior::matmul_small(&g, &ginv.at(i), 2);
                for (e, v) in prod.iter().enumerate() {
                    assert!((v - f64::from(u8::from(e / 2 == e % 2))).abs() < 1e-12);
                }
            }
            let gamma = 0.5;
            let lhs: f64 = (0..4)
                .map(|e| {
                    let d = if e / 2 == e % 2 { ginv.entries()[e].map(|v| v - 1.0) } else { ginv.entries()[e].clone() };
                    norm_dyadic(&d, gamma).unwrap()
                })
                .sum();
            let rhs: f64 = a.entries().iter().map(|c| norm_dyadic(c, gamma).unwrap()).sum();
            assert!(lhs <= 20.0 * rhs, "seed {seed}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn remainder_matches_its_quadratic_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // K - I = tr(u) I - u - uᵀ + O(u²), so ℛ(tu) = t² u(tr(u) I - u - uᵀ) + O(t³).
        let tr = u[0] + u[3];
        let q: Vec<f64> = (0..4)
            .map(|e| {
                let (k, i) = (e / 2, e % 2);
                (0..2)
                    .map(|j| u[k * 2 + j] * (if i == j { tr } else { 0.0 } - u[j * 2 + i] - u[i * 2 + j]))
                    .sum()
            })
            .collect();
        let mut prev = f64::INFINITY;
        for t in [1e-2, 5e-3, 2.5e-3] {
            let tu: Vec<f64> = u.iter().map(|v| t * v).collect();
            let r = quadratic_remainder(&tu, 2).unwrap();
            let err = r.iter().zip(&q).map(|(a, b)| (a - t * t * b).abs()).fold(0.0, f64::max);
            assert!(err < 10.0 * t.powi(3));
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn zero_coefficients_give_zero_displacement() {
        let spec = grid(32);
        let mask = BallMask::new(&spec).unwrap();
        let a = MatrixField::zeros(&spec, 2, 2);
        let d = solve_displacement(&a, &Domain::Ball(mask), &PicardOptions::default()).unwrap();
        assert!(d.r.iter().all(|c| c.max_abs() == 0.0));
        let (f, _) = solve_coordinates(&a, &Domain::Torus, &PicardOptions::default(), 1).unwrap();
        assert!(f.inversion_error() < 1e-15);
        assert!(f.inverse()[0].sub(&ScalarField::sample(&spec, |x| x[0]).unwrap()).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn ball_displacement_solves_the_system_and_scales_linearly() {
        let spec = grid(128);
        let mask = BallMask::new(&spec).unwrap();
        let opts = PicardOptions::default();
        let run = |eps: f64| {
            let a = single_entry(&spec, eps, 0, 0);
            let d = solve_displacement(&a, &Domain::Ball(mask.clone()), &opts).unwrap();
            (a, d)
        };
        let (a, big) = run(0.05);
        assert!(big.telemetry.residual < 1e-8, "{:?}", big.telemetry);
        assert!(big.telemetry.picard_ratio.iter().all(|&r| r < 1.0));
        for gap in energy_gap(&a, &big.r, &mask).unwrap() {
            assert!(gap < 1e-8, "{gap}");
        }
        let (_, small) = run(0.025);
        let size = |d: &Displacement| d.r.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
        let ratio = size(&big) / size(&small);
        assert!((ratio / 2.0 - 1.0).abs() < 0.05, "{ratio}");
        // Harmonic between the support and the sphere.
        let lap = BallOperator::laplacian(&mask).unwrap();
        let norm = size(&big);
        for c in &big.r {
            let l = lap.apply(c);
            let worst = mask.annulus(0.6, 0.9).into_iter().map(|i| l.get(i).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-6 * norm, "{worst} vs {norm}");
        }
        // The sphere stays fixed.
        for c in &big.r {
            assert!((0..spec.len()).filter(|&i| !mask.inside()[i]).all(|i| c.get(i) == 0.0));
        }
    }

    /// Leak of `△R` into the annulus relative to its peak. Spectral
    /// derivatives of the cutoff leak there, so this only decays with `N`.
    fn torus_leak(n: usize) -> f64 {
        let spec = grid(n);
        let a = single_entry(&spec, 0.05, 0, 1);
        let d = solve_displacement(&a, &Domain::Torus, &PicardOptions::default()).unwrap();
        assert!(d.telemetry.residual < 1e-10, "{:?}", d.telemetry);
        let four = Fourier::<f64>::for_spec(&spec).unwrap();
        d.r.iter()
            .map(|c| {
                let l = four.laplacian(c);
                let worst = (0..spec.len())
                    .filter(|&i| (0.6..0.9).contains(&spec.radius(i)))
                    .map(|i| l.get(i).abs())
                    .fold(0.0, f64::max);
                worst / l.max_abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn torus_displacement_solves_the_system_spectrally() {
        let (coarse, fine) = (torus_leak(128), torus_leak(256));
        assert!(fine < 1e-4, "{fine}");
        assert!(coarse > 10.0 * fine, "{coarse} {fine}");
    }

    #[test]
    fn coefficients_outside_the_half_ball_are_rejected() {
        let spec = grid(32);
        let mut a = MatrixField::zeros(&spec, 2, 2);
        *a.get_mut(1, 0) = ScalarField::constant(&spec, 0.01);
        assert!(matches!(solve_displacement(&a, &Domain::Torus, &PicardOptions::default()), Err(Error::Support(_))));
    }

    #[test]
    fn transformed_residual_vanishes_for_zero_and_not_for_noise() {
        let spec = grid(64);
        let mask = BallMask::new(&spec).unwrap();
        let zero = transformed_residual(&MatrixField::zeros(&spec, 2, 2), &mask).unwrap();
        assert!(zero.absolute.iter().all(|&v| v == 0.0));
        let entries = (0..4).map(|e| crate::exterior::tests::rand_field(&spec, 8, 40 + e).scale(0.2)).collect();
        let b = MatrixField::new(2, 2, entries).unwrap();
        let noisy = transformed_residual(&b, &mask).unwrap();
        assert!(noisy.relative.iter().all(|&v| v > 0.1), "{noisy:?}");
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let spec = grid(32);
        let mask = BallMask::new(&spec).unwrap();
        let b = MatrixField::zeros(&spec, 2, 2);
        let deta = coframe_derivatives(&b).unwrap();
        let (f, rep) = contraction_iterate(&b, &deta, &mask, 3).unwrap();
        assert_eq!(f.max_abs(), 0.0);
        assert_eq!(rep.increments[0], 0.0);
    }

    fn pattern(spec: &GridSpec, eps: f64) -> MatrixField {
        let entries = [1.0, 0.5, -0.5, 1.0]
            .iter()
            .map(|&w| ScalarField::sample(spec, |x| eps * w * (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0).powi(3)).unwrap())
            .collect();
        MatrixField::new(2, 2, entries).unwrap()
    }

    #[test]
    fn contraction_ratio_grows_with_amplitude() {
        let spec = grid(64);
        let mask = BallMask::new(&spec).unwrap();
        let mut ratios = vec![];
        let mut failed_at = None;
        for eps in [0.02, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2] {
            let b = pattern(&spec, eps);
            let deta = coframe_derivatives(&b).unwrap();
            match contraction_iterate(&b, &deta, &mask, 4) {
                Ok((_, rep)) => ratios.push(rep.ratios.iter().copied().fold(0.0, f64::max)),
                Err(Error::NotContraction { ratio }) => {
                    ratios.push(ratio);
                    failed_at = Some(eps);
                    break;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
        assert!(ratios[0] < 0.5, "{ratios:?}");
        println!("contraction ratios {ratios:?}, first failure at {failed_at:?}");
    }
}
