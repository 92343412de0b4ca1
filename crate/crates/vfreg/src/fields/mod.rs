//! Grid description and field containers.
//!
//! Every field lives on the periodic torus `[-L, L)^n`, sampled at the cell
//! corners `-L + i*h`. Samples are row-major with axis 0 slowest.

mod zygf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub use zygf::{read_zygf, write_zygf, Zygf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    sizes: Vec<usize>,
    half_width: f64,
}

impl GridSpec {
    pub fn new(sizes: &[usize], half_width: f64) -> Result<Self> {
        if sizes.is_empty() || sizes.len() > 3 {
            return Err(Error::InvalidGrid(format!("ndim must be 1..=3, got {}", sizes.len())));
        }
        if let Some(&n) = sizes.iter().find(|&&n| n < 16 || !n.is_power_of_two()) {
            return Err(Error::InvalidGrid(format!("size {n} is not a power of two >= 16")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width {half_width}")));
        }
        Ok(Self { sizes: sizes.to_vec(), half_width })
    }

    /// `ndim` axes of `n` samples each.
    pub fn cube(ndim: usize, n: usize, half_width: f64) -> Result<Self> {
        Self::new(&vec![n; ndim], half_width)
    }

    pub fn ndim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_width / self.sizes[axis] as f64
    }

    /// Smallest spacing over the axes.
    pub fn h(&self) -> f64 {
        (0..self.ndim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume element `h^n` of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.ndim()).map(|a| self.spacing(a)).product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.sizes[axis + 1..].iter().product()
    }

    pub fn unravel(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.ndim()).rev() {
            out[a] = idx % self.sizes[a];
            idx /= self.sizes[a];
        }
        out
    }

    pub fn ravel(&self, ix: &[usize]) -> usize {
        ix.iter().zip(&self.sizes).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Periodic neighbour of `idx` displaced by `offset` samples along `axis`.
    pub fn shifted(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let n = self.sizes[axis] as isize;
        let s = self.stride(axis);
        let i = ((idx / s) as isize) % n;
        let j = (i + offset).rem_euclid(n);
        (idx as isize + (j - i) * s as isize) as usize
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing(axis)
    }

    /// Physical coordinates of node `idx`; entries past `ndim` are zero.
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let ix = self.unravel(idx);
        let mut x = [0.0; 3];
        for a in 0..self.ndim() {
            x[a] = self.coord(a, ix[a]);
        }
        x
    }

    pub fn radius(&self, idx: usize) -> f64 {
        let x = self.node(idx);
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Real samples, one per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    spec: GridSpec,
    data: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(spec: GridSpec, data: Vec<T>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "{} samples for a grid of {} nodes",
                data.len(),
                spec.len()
            )));
        }
        if let Some(node) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(Self { spec, data })
    }

    pub fn zeros(spec: &GridSpec) -> Self {
        Self::constant(spec, T::zero())
    }

    pub fn constant(spec: &GridSpec, c: T) -> Self {
        Self { spec: spec.clone(), data: vec![c; spec.len()] }
    }

    /// Samples a pointwise rule at every node; the rule sees `ndim` coordinates.
    pub fn sample<F>(spec: &GridSpec, rule: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n = spec.ndim();
        let data: Vec<T> = (0..spec.len())
            .into_par_iter()
            .map(|i| T::of(rule(&spec.node(i)[..n])))
            .collect();
        Self::new(spec.clone(), data)
    }

    /// Builds from node indices; callers guarantee finiteness.
    pub fn from_fn<F>(spec: &GridSpec, f: F) -> Self
    where
        F: Fn(usize) -> T + Sync + Send,
    {
        Self { spec: spec.clone(), data: (0..spec.len()).into_par_iter().map(f).collect() }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, idx: usize) -> T {
        self.data[idx]
    }

    pub fn map<F: Fn(T) -> T + Sync>(&self, f: F) -> Self {
        Self { spec: self.spec.clone(), data: self.data.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(T, T) -> T + Sync>(&self, other: &Self, f: F) -> Result<Self> {
        self.spec.check_same(&other.spec)?;
        Ok(Self {
            spec: self.spec.clone(),
            data: self.data.par_iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: T, other: &Self) -> Result<()> {
        self.spec.check_same(&other.spec)?;
        self.data.par_iter_mut().zip(&other.data).for_each(|(a, &b)| *a = *a + c * b);
        Ok(())
    }

    pub fn max_abs(&self) -> T {
        self.data.par_iter().map(|v| v.abs()).reduce(T::zero, T::max)
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::of(self.data.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ScalarField<U> {
        ScalarField { spec: self.spec.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }
}

/// Strictly increasing multi-indices of length `k` from `0..n`, lexicographic.
pub fn multi_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Position of a sorted multi-index in the `multi_indices(n, k)` ordering.
pub fn multi_index_position(n: usize, idx: &[usize]) -> Option<usize> {
    multi_indices(n, idx.len()).iter().position(|m| m == idx)
}

/// Sorts `idx` in place; returns the permutation sign, or 0 on a repeated entry.
pub fn sort_with_sign(idx: &mut [usize]) -> i32 {
    let mut sign = 1;
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1] > idx[j] {
            idx.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    if idx.windows(2).any(|w| w[0] == w[1]) {
        0
    } else {
        sign
    }
}

/// Degree-k differential form, components keyed by sorted multi-indices.
#[derive(Clone, Debug, PartialEq)]
pub struct FormField<T> {
    degree: usize,
    components: Vec<ScalarField<T>>,
}

impl<T: Real> FormField<T> {
    pub fn new(degree: usize, components: Vec<ScalarField<T>>) -> Result<Self> {
        let spec = components
            .first()
            .ok_or_else(|| Error::Degree("form without components".into()))?
            .spec()
            .clone();
        let n = spec.ndim();
        if degree > n {
            return Err(Error::Degree(format!("degree {degree} on a {n}-dimensional grid")));
        }
        let expect = multi_indices(n, degree).len();
        if components.len() != expect {
            return Err(Error::Degree(format!(
                "degree {degree} needs {expect} components, got {}",
                components.len()
            )));
        }
        for c in &components {
            spec.check_same(c.spec())?;
        }
        Ok(Self { degree, components })
    }

    pub fn zeros(spec: &GridSpec, degree: usize) -> Result<Self> {
        let count = multi_indices(spec.ndim(), degree).len();
        Self::new(degree, vec![ScalarField::zeros(spec); count.max(1)])
    }

    pub fn scalar(f: ScalarField<T>) -> Self {
        Self { degree: 0, components: vec![f] }
    }

    /// The coordinate 1-form `dx^axis`.
    pub fn coordinate(spec: &GridSpec, axis: usize) -> Result<Self> {
        let comps = (0..spec.ndim())
            .map(|a| ScalarField::constant(spec, if a == axis { T::one() } else { T::zero() }))
            .collect();
        Self::new(1, comps)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn spec(&self) -> &GridSpec {
        self.components[0].spec()
    }

    pub fn ndim(&self) -> usize {
        self.spec().ndim()
    }

    pub fn indices(&self) -> Vec<Vec<usize>> {
        multi_indices(self.ndim(), self.degree)
    }

    pub fn components(&self) -> &[ScalarField<T>] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [ScalarField<T>] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<ScalarField<T>> {
        self.components
    }

    /// Component for a sorted multi-index.
    pub fn component(&self, idx: &[usize]) -> Option<&ScalarField<T>> {
        multi_index_position(self.ndim(), idx).map(|p| &self.components[p])
    }

    fn zip(&self, other: &Self, f: impl Fn(&ScalarField<T>, &ScalarField<T>) -> Result<ScalarField<T>>) -> Result<Self> {
        if self.degree != other.degree {
            return Err(Error::Degree(format!("degrees {} and {}", self.degree, other.degree)));
        }
        let comps = self.components.iter().zip(&other.components).map(|(a, b)| f(a, b)).collect::<Result<_>>()?;
        Ok(Self { degree: self.degree, components: comps })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, c: T) -> Self {
        self.map_components(|f| f.scale(c))
    }

    /// Multiplies every component by a function.
    pub fn mul_scalar(&self, f: &ScalarField<T>) -> Result<Self> {
        let comps = self.components.iter().map(|c| c.mul(f)).collect::<Result<_>>()?;
        Ok(Self { degree: self.degree, components: comps })
    }

    pub fn map_components(&self, f: impl Fn(&ScalarField<T>) -> ScalarField<T>) -> Self {
        Self { degree: self.degree, components: self.components.iter().map(f).collect() }
    }

    pub fn max_abs(&self) -> T {
        self.components.iter().map(|c| c.max_abs()).fold(T::zero(), T::max)
    }
}

/// `ndim` component functions.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    components: Vec<ScalarField<T>>,
}

impl<T: Real> VectorField<T> {
    pub fn new(components: Vec<ScalarField<T>>) -> Result<Self> {
        let spec = components.first().ok_or_else(|| Error::Degree("empty vector field".into()))?.spec().clone();
        if components.len() != spec.ndim() {
            return Err(Error::Degree(format!("{} components on a {}-d grid", components.len(), spec.ndim())));
        }
        for c in &components {
            spec.check_same(c.spec())?;
        }
        Ok(Self { components })
    }

    /// The coordinate field `d/dx^axis`.
    pub fn coordinate(spec: &GridSpec, axis: usize) -> Self {
        Self {
            components: (0..spec.ndim())
                .map(|a| ScalarField::constant(spec, if a == axis { T::one() } else { T::zero() }))
                .collect(),
        }
    }

    pub fn sample<F>(spec: &GridSpec, rule: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let comps = (0..spec.ndim())
            .map(|a| ScalarField::sample(spec, |x| rule(x)[a]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn spec(&self) -> &GridSpec {
        self.components[0].spec()
    }

    pub fn components(&self) -> &[ScalarField<T>] {
        &self.components
    }

    pub fn component(&self, a: usize) -> &ScalarField<T> {
        &self.components[a]
    }

    pub fn into_components(self) -> Vec<ScalarField<T>> {
        self.components
    }

    pub fn max_abs(&self) -> T {
        self.components.iter().map(|c| c.max_abs()).fold(T::zero(), T::max)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let comps = self.components.iter().zip(&other.components).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
        Ok(Self { components: comps })
    }
}

/// `q` vector fields with optional structure coefficients `c[i][j][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    vfs: Vec<VectorField<T>>,
    coeffs: Option<Vec<ScalarField<T>>>,
}

impl<T: Real> Frame<T> {
    pub fn new(vfs: Vec<VectorField<T>>, coeffs: Option<Vec<ScalarField<T>>>) -> Result<Self> {
        let spec = vfs.first().ok_or_else(|| Error::Degree("empty frame".into()))?.spec().clone();
        for v in &vfs {
            spec.check_same(v.spec())?;
        }
        let q = vfs.len();
        if let Some(c) = &coeffs {
            if c.len() != q * q * q {
                return Err(Error::Degree(format!("{} structure coefficients for q = {q}", c.len())));
            }
            let mag = c.iter().map(|f| f.max_abs()).fold(T::zero(), T::max);
            let tol = T::of(1e-12) * mag.max(T::one());
            for i in 0..q {
                for j in 0..q {
                    for k in 0..q {
                        let a = &c[(i * q + j) * q + k];
                        let b = &c[(j * q + i) * q + k];
                        spec.check_same(a.spec())?;
                        if a.data().iter().zip(b.data()).any(|(x, y)| (*x + *y).abs() > tol) {
                            return Err(Error::OutOfRange(format!(
                                "structure coefficients not antisymmetric in ({i},{j}) for k = {k}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { vfs, coeffs })
    }

    pub fn q(&self) -> usize {
        self.vfs.len()
    }

    pub fn spec(&self) -> &GridSpec {
        self.vfs[0].spec()
    }

    pub fn fields(&self) -> &[VectorField<T>] {
        &self.vfs
    }

    pub fn field(&self, i: usize) -> &VectorField<T> {
        &self.vfs[i]
    }

    pub fn coeffs(&self) -> Option<&[ScalarField<T>]> {
        self.coeffs.as_deref()
    }

    /// `c_ij^k` when present.
    pub fn coeff(&self, i: usize, j: usize, k: usize) -> Option<&ScalarField<T>> {
        let q = self.q();
        self.coeffs.as_ref().map(|c| &c[(i * q + j) * q + k])
    }

    pub fn with_coeffs(mut self, coeffs: Vec<ScalarField<T>>) -> Result<Self> {
        let vfs = std::mem::take(&mut self.vfs);
        Self::new(vfs, Some(coeffs))
    }
}

/// Row-major matrix of fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField<T> {
    rows: usize,
    cols: usize,
    entries: Vec<ScalarField<T>>,
}

impl<T: Real> MatrixField<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<ScalarField<T>>) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::Degree(format!("{} entries for a {rows}x{cols} matrix", entries.len())));
        }
        let spec = entries[0].spec().clone();
        for e in &entries {
            spec.check_same(e.spec())?;
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn zeros(spec: &GridSpec, rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![ScalarField::zeros(spec); rows * cols] }
    }

    pub fn identity(spec: &GridSpec, n: usize) -> Self {
        let mut m = Self::zeros(spec, n, n);
        for i in 0..n {
            m.entries[i * n + i] = ScalarField::constant(spec, T::one());
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spec(&self) -> &GridSpec {
        self.entries[0].spec()
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField<T> {
        &self.entries[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut ScalarField<T> {
        &mut self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[ScalarField<T>] {
        &self.entries
    }

    /// Row-major matrix at one node.
    pub fn at(&self, idx: usize) -> Vec<T> {
        self.entries.iter().map(|e| e.get(idx)).collect()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Degree("matrix shapes differ".into()));
        }
        let e = self.entries.iter().zip(&other.entries).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
        Ok(Self { rows: self.rows, cols: self.cols, entries: e })
    }

    pub fn scale(&self, c: T) -> Self {
        Self { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|e| e.scale(c)).collect() }
    }

    /// Largest entrywise sup norm.
    pub fn max_abs(&self) -> T {
        self.entries.iter().map(|e| e.max_abs()).fold(T::zero(), T::max)
    }

    /// Samplewise operator 2-norm bound via the Frobenius norm.
    pub fn frobenius_at(&self, idx: usize) -> T {
        self.entries.iter().map(|e| e.get(idx) * e.get(idx)).sum::<T>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(GridSpec::new(&[8], 2.0).is_err());
        assert!(GridSpec::new(&[48], 2.0).is_err());
        assert!(GridSpec::new(&[16, 16, 16, 16], 2.0).is_err());
        let g = GridSpec::new(&[64, 32], 2.0).unwrap();
        assert_eq!(g.spacing(0) * 64.0, 4.0);
        assert_eq!(g.spacing(1) * 32.0, 4.0);
    }

    #[test]
    fn node_positions_are_cell_corners() {
        // The grid minimum is 16 so sample every fourth node of N = 16 to mimic N = 4.
        let g = GridSpec::new(&[16], 2.0).unwrap();
        let f = ScalarField::<f64>::sample(&g, |x| x[0]).unwrap();
        let picked: Vec<f64> = (0..4).map(|i| f.get(4 * i)).collect();
        assert_eq!(picked, vec![-2.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_and_step_sampling() {
        let g = GridSpec::cube(2, 16, 2.0).unwrap();
        let one = ScalarField::<f64>::sample(&g, |_| 1.0).unwrap();
        assert!(one.data().iter().all(|&v| v == 1.0));
        let step = ScalarField::<f64>::sample(&g, |x| if x[1] >= 0.0 { 1.0 } else { 0.0 }).unwrap();
        for i in 0..g.len() {
            let y = g.node(i)[1];
            assert_eq!(step.get(i), if y >= 0.0 { 1.0 } else { 0.0 }, "y = {y}");
        }
    }

    #[test]
    fn non_finite_rule_is_rejected() {
        let g = GridSpec::cube(1, 16, 2.0).unwrap();
        assert!(matches!(ScalarField::<f64>::sample(&g, |x| 1.0 / x[0]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn mismatched_specs_do_not_combine() {
        let a = ScalarField::<f64>::zeros(&GridSpec::cube(1, 16, 2.0).unwrap());
        let b = ScalarField::<f64>::zeros(&GridSpec::cube(1, 32, 2.0).unwrap());
        assert!(matches!(a.add(&b), Err(Error::GridMismatch)));
    }

    #[test]
    fn forms_have_binomial_component_counts() {
        let g = GridSpec::cube(3, 16, 2.0).unwrap();
        for (k, n) in [(0, 1), (1, 3), (2, 3), (3, 1)] {
            assert_eq!(FormField::<f64>::zeros(&g, k).unwrap().components().len(), n);
        }
        let g1 = GridSpec::cube(1, 16, 2.0).unwrap();
        assert!(FormField::<f64>::zeros(&g1, 2).is_err());
    }

    #[test]
    fn permutation_signs() {
        let mut a = [2, 0, 1];
        assert_eq!(sort_with_sign(&mut a), 1);
        assert_eq!(a, [0, 1, 2]);
        let mut b = [1, 0];
        assert_eq!(sort_with_sign(&mut b), -1);
        let mut c = [1, 1];
        assert_eq!(sort_with_sign(&mut c), 0);
    }

    #[test]
    fn frame_checks_antisymmetry() {
        let g = GridSpec::cube(2, 16, 2.0).unwrap();
        let vfs = vec![VectorField::<f64>::coordinate(&g, 0), VectorField::coordinate(&g, 1)];
        let mut c = vec![ScalarField::zeros(&g); 8];
        let at = |i: usize, j: usize| (i * 2 + j) * 2;
        c[at(0, 1)] = ScalarField::constant(&g, 1.0);
        assert!(Frame::new(vfs.clone(), Some(c.clone())).is_err());
        c[at(1, 0)] = ScalarField::constant(&g, -1.0);
        assert!(Frame::new(vfs, Some(c)).is_ok());
    }

    #[test]
    fn shifted_wraps_periodically() {
        let g = GridSpec::new(&[16, 32], 2.0).unwrap();
        let idx = g.ravel(&[15, 31]);
        assert_eq!(g.unravel(g.shifted(idx, 0, 1)), [0, 31, 0]);
        assert_eq!(g.unravel(g.shifted(idx, 1, 2)), [15, 1, 0]);
        assert_eq!(g.unravel(g.shifted(idx, 1, -33)), [15, 30, 0]);
    }

    proptest! {
        #[test]
        fn sampling_commutes_with_power_of_two_combinations(ea in -4i32..4, eb in -4i32..4, seed in 0u64..1000) {
            let g = GridSpec::cube(1, 32, 2.0).unwrap();
            let (a, b) = (2f64.powi(ea), 2f64.powi(eb));
            let s = seed as f64 * 0.01;
            let f = move |x: &[f64]| (x[0] + s).sin();
            let h = move |x: &[f64]| (2.0 * x[0] - s).cos();
            let lhs = ScalarField::<f64>::sample(&g, |x| a * f(x) + b * h(x)).unwrap();
            let mut rhs = ScalarField::<f64>::sample(&g, f).unwrap().scale(a);
            rhs.axpy(b, &ScalarField::sample(&g, h).unwrap()).unwrap();
            prop_assert_eq!(lhs.data(), rhs.data());
        }

        #[test]
        fn ravel_inverts_unravel(i in 0usize..(16 * 32 * 64)) {
            let g = GridSpec::new(&[16, 32, 64], 1.0).unwrap();
            prop_assert_eq!(g.ravel(&g.unravel(i)[..3]), i);
        }
    }
}
