//! Periodic grids on the flat torus and the fields sampled on them.
//!
//! Every field is stored as nodal values. Calculus is spectral; products are
//! evaluated on a 3/2-padded grid and truncated back to the Nyquist-free band.

mod affine;
mod basis;
pub(crate) mod calculus;
mod modes;
pub(crate) mod spectral;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

pub use affine::{AffineDiffeo, Pullback};
pub use basis::BandBasis;
pub use calculus::{
    directional, ext_deriv, grad_form, interior, lie_bracket, lie_form, lie_sym, mul_form, mul_scalar,
    mul_vector, wedge,
};
pub use modes::{random_values, to_csv, FourierMode, FourierModeSpec};

/// The torus `(R / 2πZ)^dim` sampled with `res` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    res: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, res: usize) -> Result<Self> {
        let reason = if !(2..=3).contains(&dim) {
            Some("dimension must be 2 or 3")
        } else if res % 2 == 1 {
            Some("resolution must be even")
        } else if res < 8 {
            Some("resolution must be at least 8")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(GeomError::InvalidGrid { dim, res, reason }),
            None => Ok(TorusGrid { dim, res }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn len(&self) -> usize {
        self.res.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.res as f64
    }

    /// Quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// Integer node coordinates of a flat index.
    pub fn node(&self, flat: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        spectral::unravel(flat, self.dim, self.res, &mut out);
        out
    }

    pub fn flat_index(&self, node: &[usize]) -> usize {
        node.iter()
            .take(self.dim)
            .fold(0, |acc, &j| acc * self.res + j % self.res)
    }

    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let node = self.node(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = node[a] as f64 * h;
        }
        x
    }

    pub(crate) fn spectral(&self) -> spectral::Spectral {
        spectral::Spectral::get(self.dim, self.res)
    }

    /// Largest admissible wavenumber magnitude.
    pub fn band(&self) -> i64 {
        self.res as i64 / 2 - 1
    }
}

pub(crate) fn same_grid(a: TorusGrid, b: TorusGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(GeomError::GridMismatch)
    }
}

/// Anything made of grid-sampled real components.
pub trait Field: Clone {
    fn grid(&self) -> TorusGrid;
    fn parts(&self) -> Vec<&[f64]>;
    fn parts_mut(&mut self) -> Vec<&mut [f64]>;

    fn dof(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.parts().concat()
    }

    fn assign(&mut self, data: &[f64]) {
        let mut offset = 0;
        for part in self.parts_mut() {
            let n = part.len();
            part.copy_from_slice(&data[offset..offset + n]);
            offset += n;
        }
    }

    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for p in z.parts_mut() {
            p.fill(0.0);
        }
        z
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        for (p, q) in self.parts_mut().into_iter().zip(other.parts()) {
            for (x, y) in p.iter_mut().zip(q) {
                *x += a * y;
            }
        }
    }

    fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        for p in out.parts_mut() {
            p.iter_mut().for_each(|x| *x *= a);
        }
        out
    }

    fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    fn minus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Discrete L² norm with unit coefficients (trapezoid rule).
    fn norm(&self) -> f64 {
        let ss: f64 = self.parts().iter().flat_map(|p| p.iter()).map(|v| v * v).sum();
        (ss * self.grid().cell_volume()).sqrt()
    }

    fn max_abs(&self) -> f64 {
        self.parts()
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Euclidean dot product of the flattened data times the cell volume.
    fn dot(&self, other: &Self) -> f64 {
        let s: f64 = self
            .parts()
            .iter()
            .zip(other.parts())
            .map(|(p, q)| p.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        s * self.grid().cell_volume()
    }

    /// Remove every Nyquist-touching mode from each component.
    fn band_limited(&self) -> Self {
        let sp = self.grid().spectral();
        let mut out = self.clone();
        for p in out.parts_mut() {
            let proj = sp.project(p);
            p.copy_from_slice(&proj);
        }
        out
    }
}

/// A function on the grid (a 0-form).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(GeomError::Shape(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.coords(i)[..grid.dim()]))
            .collect();
        ScalarField { grid, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Spectral partial derivative.
    pub fn partial(&self, axis: usize) -> ScalarField {
        let values = self.grid.spectral().derivative(&self.values, axis);
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    pub fn as_form(&self) -> KForm {
        KForm {
            grid: self.grid,
            degree: 0,
            comps: vec![self.values.clone()],
        }
    }
}

impl Field for ScalarField {
    fn grid(&self) -> TorusGrid {
        self.grid
    }
    fn parts(&self) -> Vec<&[f64]> {
        vec![&self.values]
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.values]
    }
}

/// A vector field in the coordinate frame `∂_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: TorusGrid) -> Self {
        VectorField {
            grid,
            comps: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    pub fn from_components(grid: TorusGrid, comps: Vec<ScalarField>) -> Result<Self> {
        if comps.len() != grid.dim() {
            return Err(GeomError::Shape(format!(
                "vector field needs {} components",
                grid.dim()
            )));
        }
        let mut out = Vec::with_capacity(comps.len());
        for c in comps {
            same_grid(grid, c.grid)?;
            out.push(c.values);
        }
        Ok(VectorField { grid, comps: out })
    }

    /// Constant coefficients.
    pub fn constant(grid: TorusGrid, coeffs: &[f64]) -> Self {
        VectorField {
            grid,
            comps: (0..grid.dim())
                .map(|i| vec![coeffs.get(i).copied().unwrap_or(0.0); grid.len()])
                .collect(),
        }
    }

    /// The coordinate field `∂_axis`.
    pub fn coordinate(grid: TorusGrid, axis: usize) -> Self {
        let mut c = vec![0.0; grid.dim()];
        c[axis] = 1.0;
        Self::constant(grid, &c)
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        VectorField {
            grid,
            comps: (0..grid.dim())
                .map(|i| {
                    (0..grid.len())
                        .map(|p| f(i, &grid.coords(p)[..grid.dim()]))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.comps[i]
    }

    pub fn scalar(&self, i: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.comps[i].clone(),
        }
    }

    /// The 1-form with the same coefficients (index lowering by the flat metric).
    pub fn flat_dual(&self) -> KForm {
        KForm {
            grid: self.grid,
            degree: 1,
            comps: self.comps.clone(),
        }
    }
}

impl Field for VectorField {
    fn grid(&self) -> TorusGrid {
        self.grid
    }
    fn parts(&self) -> Vec<&[f64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        self.comps.iter_mut().map(|c| c.as_mut_slice()).collect()
    }
}

/// Increasing multi-indices of length `k` drawn from `0..n`, lexicographic.
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
        rec(0, n, k, &mut Vec::new(), &mut out);
    }
    out
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

pub(crate) fn index_position(n: usize, idx: &[usize]) -> Option<usize> {
    multi_indices(n, idx.len()).iter().position(|m| m == idx)
}

/// Sign of the permutation sorting `seq` (0 if it has a repeated entry).
pub(crate) fn sort_sign(seq: &[usize]) -> (i32, Vec<usize>) {
    let mut v = seq.to_vec();
    let mut sign = 1;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] == v[j + 1] {
                return (0, v);
            }
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return (0, v);
    }
    (sign, v)
}

/// A differential form of fixed degree; components follow [`multi_indices`].
#[derive(Debug, Clone, PartialEq)]
pub struct KForm {
    grid: TorusGrid,
    degree: usize,
    comps: Vec<Vec<f64>>,
}

impl KForm {
    /// The zero form. Degrees above the dimension give a form with no components.
    pub fn zeros(grid: TorusGrid, degree: usize) -> Self {
        KForm {
            grid,
            degree,
            comps: vec![vec![0.0; grid.len()]; binomial(grid.dim(), degree)],
        }
    }

    pub fn from_components(grid: TorusGrid, degree: usize, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != binomial(grid.dim(), degree) || comps.iter().any(|c| c.len() != grid.len())
        {
            return Err(GeomError::Shape(format!(
                "degree {degree} form needs {} components of length {}",
                binomial(grid.dim(), degree),
                grid.len()
            )));
        }
        Ok(KForm { grid, degree, comps })
    }

    /// Constant-coefficient form.
    pub fn constant(grid: TorusGrid, degree: usize, coeffs: &[f64]) -> Self {
        let count = binomial(grid.dim(), degree);
        KForm {
            grid,
            degree,
            comps: (0..count)
                .map(|i| vec![coeffs.get(i).copied().unwrap_or(0.0); grid.len()])
                .collect(),
        }
    }

    /// `f dx^I` for an increasing multi-index `I`.
    pub fn monomial(f: &ScalarField, index: &[usize]) -> Result<Self> {
        let n = f.grid.dim();
        let pos = index_position(n, index).ok_or_else(|| GeomError::Component(index.to_vec()))?;
        let mut out = KForm::zeros(f.grid, index.len());
        out.comps[pos] = f.values.clone();
        Ok(out)
    }

    pub fn from_fn(grid: TorusGrid, degree: usize, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let count = binomial(grid.dim(), degree);
        KForm {
            grid,
            degree,
            comps: (0..count)
                .map(|c| {
                    (0..grid.len())
                        .map(|p| f(c, &grid.coords(p)[..grid.dim()]))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn component_count(&self) -> usize {
        self.comps.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.comps[i]
    }

    pub fn scalar(&self, i: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.comps[i].clone(),
        }
    }

    /// Component for an arbitrary increasing multi-index.
    pub fn get(&self, index: &[usize]) -> Option<&[f64]> {
        index_position(self.grid.dim(), index).map(|p| self.comps[p].as_slice())
    }

    pub fn as_scalar(&self) -> Result<ScalarField> {
        if self.degree != 0 {
            return Err(GeomError::Degree {
                op: "as_scalar",
                degree: self.degree,
            });
        }
        Ok(self.scalar(0))
    }

    /// Mean value of each component.
    pub fn means(&self) -> Vec<f64> {
        self.comps
            .iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub(crate) fn comps(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub(crate) fn raw(grid: TorusGrid, degree: usize, comps: Vec<Vec<f64>>) -> Self {
        KForm { grid, degree, comps }
    }
}

impl Field for KForm {
    fn grid(&self) -> TorusGrid {
        self.grid
    }
    fn parts(&self) -> Vec<&[f64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        self.comps.iter_mut().map(|c| c.as_mut_slice()).collect()
    }
}

/// Symmetric 2-tensor with components `(i, j)`, `i <= j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor2 {
    grid: TorusGrid,
    comps: Vec<Vec<f64>>,
}

pub(crate) fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    // rows before `a` hold n, n-1, ... entries
    a * n - a * a.saturating_sub(1) / 2 + (b - a)
}

impl SymTensor2 {
    pub fn zeros(grid: TorusGrid) -> Self {
        let n = grid.dim();
        SymTensor2 {
            grid,
            comps: vec![vec![0.0; grid.len()]; n * (n + 1) / 2],
        }
    }

    /// The flat metric `Σ dx_i²`.
    pub fn identity(grid: TorusGrid) -> Self {
        let mut g = Self::zeros(grid);
        for i in 0..grid.dim() {
            g.comps[sym_index(grid.dim(), i, i)].fill(1.0);
        }
        g
    }

    /// Constant coefficients from a full symmetric matrix (row-major, `n × n`).
    pub fn constant(grid: TorusGrid, matrix: &[f64]) -> Self {
        let n = grid.dim();
        Self::from_fn(grid, |i, j, _| matrix[i * n + j])
    }

    /// Build from `f(i, j, x)`, read for `i <= j`.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(usize, usize, &[f64]) -> f64) -> Self {
        let n = grid.dim();
        let mut g = Self::zeros(grid);
        for i in 0..n {
            for j in i..n {
                let c = sym_index(n, i, j);
                for p in 0..grid.len() {
                    g.comps[c][p] = f(i, j, &grid.coords(p)[..n]);
                }
            }
        }
        g
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[sym_index(self.grid.dim(), i, j)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let n = self.grid.dim();
        &mut self.comps[sym_index(n, i, j)]
    }

    /// Full matrix at one node.
    pub fn at(&self, node: usize) -> nalgebra::DMatrix<f64> {
        let n = self.grid.dim();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.get(i, j)[node])
    }

    /// Conformal rescaling `f · g` evaluated pointwise.
    pub fn scaled_by(&self, f: &ScalarField) -> Self {
        let mut out = self.clone();
        for c in out.comps.iter_mut() {
            for (v, s) in c.iter_mut().zip(f.values()) {
                *v *= s;
            }
        }
        out
    }

    /// Index of the first node where the tensor fails to be positive definite.
    pub fn first_indefinite_node(&self) -> Option<usize> {
        (0..self.grid.len()).find(|&p| self.at(p).cholesky().is_none())
    }
}

impl Field for SymTensor2 {
    fn grid(&self) -> TorusGrid {
        self.grid
    }
    fn parts(&self) -> Vec<&[f64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        self.comps.iter_mut().map(|c| c.as_mut_slice()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes_and_rejections() {
        assert_eq!(TorusGrid::new(2, 16).unwrap().len(), 256);
        assert_eq!(TorusGrid::new(3, 8).unwrap().len(), 512);
        assert!(TorusGrid::new(2, 7).is_err());
        assert!(TorusGrid::new(2, 6).is_err());
        assert!(TorusGrid::new(4, 8).is_err());
    }

    #[test]
    fn coordinates_are_uniform() {
        let g = TorusGrid::new(2, 8).unwrap();
        let x = g.coords(g.flat_index(&[3, 5]));
        assert!((x[0] - 3.0 * PI / 4.0).abs() < 1e-15);
        assert!((x[1] - 5.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn multi_index_counts() {
        for n in 2..=3 {
            for k in 0..=n {
                assert_eq!(multi_indices(n, k).len(), binomial(n, k));
            }
        }
        assert_eq!(multi_indices(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn symmetric_index_layout() {
        let n = 3;
        let mut seen = Vec::new();
        for i in 0..n {
            for j in i..n {
                seen.push(sym_index(n, i, j));
            }
        }
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert_eq!(sym_index(2, 1, 0), 1);
        assert_eq!(sym_index(2, 1, 1), 2);
    }

    #[test]
    fn sort_sign_tracks_parity() {
        assert_eq!(sort_sign(&[1, 0]).0, -1);
        assert_eq!(sort_sign(&[0, 2, 1]).0, -1);
        assert_eq!(sort_sign(&[2, 0, 1]).0, 1);
        assert_eq!(sort_sign(&[1, 1]).0, 0);
    }
}
