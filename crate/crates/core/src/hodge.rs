//! Hodge theory on the torus for an arbitrary metric.
//!
//! Forms live in the Nyquist-free band. The metric enters through pointwise
//! weights `W_k = √det g · Λ^k(g⁻¹)`; the mass operator is `M_k = P W_k` with
//! `P` the band projection, and the codifferential is the exact discrete
//! adjoint `d* = M⁻¹ dᵀ M`. For the flat identity metric everything reduces to
//! Fourier multipliers.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::grid::calculus::{d_any, d_transpose};
use crate::grid::{binomial, multi_indices, sort_sign, BandBasis, Field, KForm, SymTensor2, TorusGrid};
use crate::linalg::pcg;

const INNER_TOL: f64 = 1e-13;
const OUTER_TOL: f64 = 1e-12;
const MAX_ITER: usize = 2000;

/// Pointwise weight matrices for one degree, stored entry-major.
#[derive(Debug, Clone)]
struct Weights {
    size: usize,
    /// `entries[a * size + b][node]`
    entries: Vec<Vec<f64>>,
    inverse: Vec<Vec<f64>>,
}

impl Weights {
    fn apply(&self, x: &KForm, inverse: bool) -> KForm {
        let table = if inverse { &self.inverse } else { &self.entries };
        let mut out = x.zeroed();
        for a in 0..self.size {
            let row = out.component_mut(a);
            for b in 0..self.size {
                let w = &table[a * self.size + b];
                for ((o, wv), xv) in row.iter_mut().zip(w).zip(x.component(b)) {
                    *o += wv * xv;
                }
            }
        }
        out
    }
}

/// Metric data plus eagerly computed harmonic bases.
#[derive(Debug, Clone)]
pub struct HodgeContext {
    grid: TorusGrid,
    metric: SymTensor2,
    flat: bool,
    density: Vec<f64>,
    weights: Vec<Weights>,
    harmonic: Vec<Vec<KForm>>,
}

/// The three orthogonal pieces of a form.
#[derive(Debug, Clone)]
pub struct HodgeParts {
    pub exact: KForm,
    pub coexact: KForm,
    pub harmonic: KForm,
}

impl HodgeContext {
    /// Context for the flat metric `Σ dx_i²`.
    pub fn flat(grid: TorusGrid) -> Self {
        Self::new(SymTensor2::identity(grid)).expect("identity metric is positive definite")
    }

    pub fn new(metric: SymTensor2) -> Result<Self> {
        let grid = metric.grid();
        if let Some(node) = metric.first_indefinite_node() {
            return Err(GeomError::NotPositiveDefinite { node });
        }
        let n = grid.dim();
        let identity = SymTensor2::identity(grid);
        let flat = metric.minus(&identity).max_abs() == 0.0;
        let mut density = vec![0.0; grid.len()];
        let mut weights: Vec<Weights> = (0..=n)
            .map(|k| {
                let size = binomial(n, k);
                Weights {
                    size,
                    entries: vec![vec![0.0; grid.len()]; size * size],
                    inverse: vec![vec![0.0; grid.len()]; size * size],
                }
            })
            .collect();
        let indices: Vec<Vec<Vec<usize>>> = (0..=n).map(|k| multi_indices(n, k)).collect();
        for p in 0..grid.len() {
            let g = metric.at(p);
            let vol = g.determinant().sqrt();
            density[p] = vol;
            let ginv = g.try_inverse().ok_or(GeomError::NotPositiveDefinite { node: p })?;
            for k in 0..=n {
                let size = binomial(n, k);
                let w = DMatrix::from_fn(size, size, |a, b| {
                    let (ia, ib) = (&indices[k][a], &indices[k][b]);
                    let sub = DMatrix::from_fn(k, k, |r, c| ginv[(ia[r], ib[c])]);
                    vol * sub.determinant()
                });
                let winv = w.clone().try_inverse().ok_or(GeomError::NotPositiveDefinite { node: p })?;
                for a in 0..size {
                    for b in 0..size {
                        weights[k].entries[a * size + b][p] = w[(a, b)];
                        weights[k].inverse[a * size + b][p] = winv[(a, b)];
                    }
                }
            }
        }
        let mut ctx = HodgeContext {
            grid,
            metric,
            flat,
            density,
            weights,
            harmonic: Vec::new(),
        };
        ctx.harmonic = (0..=n)
            .map(|k| ctx.compute_harmonic_basis(k))
            .collect::<Result<_>>()?;
        Ok(ctx)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn metric(&self) -> &SymTensor2 {
        &self.metric
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    /// `√det g` at every node.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    fn check(&self, w: &KForm) -> Result<()> {
        if w.grid() != self.grid {
            return Err(GeomError::GridMismatch);
        }
        if w.degree() > self.grid.dim() {
            return Err(GeomError::Degree {
                op: "hodge",
                degree: w.degree(),
            });
        }
        Ok(())
    }

    /// `M_k x = P(W_k x)`.
    fn mass(&self, x: &KForm) -> KForm {
        self.weights[x.degree()].apply(x, false).band_limited()
    }

    fn mass_inverse(&self, x: &KForm) -> Result<KForm> {
        if self.flat {
            return Ok(x.band_limited());
        }
        let template = x.zeroed();
        let k = x.degree();
        let b = x.band_limited().flatten();
        let sol = pcg(
            "mass solve",
            |v| {
                let mut f = template.clone();
                f.assign(v);
                self.mass(&f).flatten()
            },
            |v| {
                let mut f = template.clone();
                f.assign(v);
                self.weights[k].apply(&f, true).band_limited().flatten()
            },
            &b,
            INNER_TOL,
            MAX_ITER,
        )?;
        let mut out = template;
        out.assign(&sol);
        Ok(out)
    }

    /// Pointwise Hodge star, projected onto the band.
    pub fn star(&self, w: &KForm) -> Result<KForm> {
        self.check(w)?;
        let n = self.grid.dim();
        let k = w.degree();
        let weighted = self.weights[k].apply(w, false);
        let mut out = KForm::zeros(self.grid, n - k);
        let lower = multi_indices(n, n - k);
        for (c, index) in multi_indices(n, k).iter().enumerate() {
            let comp: Vec<usize> = (0..n).filter(|i| !index.contains(i)).collect();
            let mut seq = index.clone();
            seq.extend_from_slice(&comp);
            let s = sort_sign(&seq).0 as f64;
            let pos = lower.iter().position(|m| *m == comp).expect("valid index");
            for (o, v) in out.component_mut(pos).iter_mut().zip(weighted.component(c)) {
                *o = s * v;
            }
        }
        Ok(out.band_limited())
    }

    /// `∫ ⟨α, β⟩_g dvol_g` by the periodic trapezoid rule.
    pub fn l2_inner(&self, a: &KForm, b: &KForm) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        if a.degree() != b.degree() {
            return Err(GeomError::Degree {
                op: "l2_inner",
                degree: b.degree(),
            });
        }
        Ok(self.inner(a, b))
    }

    fn inner(&self, a: &KForm, b: &KForm) -> f64 {
        self.weights[a.degree()].apply(b, false).dot(a)
    }

    pub fn l2_norm(&self, w: &KForm) -> f64 {
        self.inner(w, w).max(0.0).sqrt()
    }

    /// The L² adjoint of `d`.
    pub fn codiff(&self, w: &KForm) -> Result<KForm> {
        self.check(w)?;
        if w.degree() == 0 {
            return Err(GeomError::Degree {
                op: "codiff",
                degree: 0,
            });
        }
        self.codiff_any(w)
    }

    fn codiff_any(&self, w: &KForm) -> Result<KForm> {
        if w.degree() == 0 {
            return Ok(KForm::zeros(self.grid, 0));
        }
        if self.flat {
            return Ok(d_transpose(w));
        }
        let rhs = d_transpose(&self.weights[w.degree()].apply(w, false));
        self.mass_inverse(&rhs)
    }

    /// `Δ = dd* + d*d`.
    pub fn laplacian(&self, w: &KForm) -> Result<KForm> {
        self.check(w)?;
        let n = self.grid.dim();
        let k = w.degree();
        if self.flat {
            return Ok(flat_multiplier(w, |k2| k2));
        }
        let mut out = KForm::zeros(self.grid, k);
        if k > 0 {
            out.axpy(1.0, &d_any(&self.codiff_any(w)?));
        }
        if k < n {
            out.axpy(1.0, &self.codiff_any(&d_any(w))?);
        }
        Ok(out)
    }

    /// `M Δ x` without inner solves where possible.
    fn mass_laplacian(&self, x: &KForm) -> Result<KForm> {
        let n = self.grid.dim();
        let k = x.degree();
        let mut out = KForm::zeros(self.grid, k);
        if k < n {
            out.axpy(1.0, &d_transpose(&self.weights[k + 1].apply(&d_any(x), false)));
        }
        if k > 0 {
            out.axpy(1.0, &self.mass(&d_any(&self.codiff_any(x)?)));
        }
        Ok(out)
    }

    /// L²-orthonormal basis of the harmonic `k`-forms.
    pub fn harmonic_basis(&self, k: usize) -> Result<&[KForm]> {
        self.harmonic
            .get(k)
            .map(|v| v.as_slice())
            .ok_or(GeomError::Degree {
                op: "harmonic_basis",
                degree: k,
            })
    }

    /// Harmonic representatives of the constant forms `dx^I`, orthonormalized.
    ///
    /// A closed form minus its exact part is harmonic, and the exact part of
    /// `dx^I` solves `dᵀ W d α = dᵀ W dx^I`, which needs no inner solves.
    fn compute_harmonic_basis(&self, k: usize) -> Result<Vec<KForm>> {
        let n = self.grid.dim();
        let count = binomial(n, k);
        let mut reps = Vec::with_capacity(count);
        for c in 0..count {
            let mut coeffs = vec![0.0; count];
            coeffs[c] = 1.0;
            let w = KForm::constant(self.grid, k, &coeffs);
            if self.flat || k == 0 {
                reps.push(w);
                continue;
            }
            let rhs = d_transpose(&self.weights[k].apply(&w, false));
            let template = KForm::zeros(self.grid, k - 1);
            let sol = pcg(
                "harmonic projection",
                |v| {
                    let mut a = template.clone();
                    a.assign(v);
                    d_transpose(&self.weights[k].apply(&d_any(&a), false)).flatten()
                },
                |v| {
                    let mut a = template.clone();
                    a.assign(v);
                    flat_multiplier(&a, |k2| if k2 == 0.0 { 1.0 } else { 1.0 / k2 }).flatten()
                },
                &rhs.flatten(),
                OUTER_TOL,
                MAX_ITER,
            )?;
            let mut alpha = template;
            alpha.assign(&sol);
            reps.push(w.minus(&d_any(&alpha)));
        }
        // two passes of modified Gram–Schmidt
        let mut basis: Vec<KForm> = Vec::with_capacity(count);
        for mut v in reps {
            for _ in 0..2 {
                for e in &basis {
                    let c = self.inner(e, &v);
                    v.axpy(-c, e);
                }
            }
            let norm = self.l2_norm(&v);
            if norm < 1e-8 {
                return Err(GeomError::NoConvergence {
                    what: "harmonic basis",
                    residual: norm,
                });
            }
            basis.push(v.scaled(1.0 / norm));
        }
        Ok(basis)
    }

    /// L²-orthogonal projection onto harmonic forms.
    pub fn harmonic_projection(&self, w: &KForm) -> Result<KForm> {
        self.check(w)?;
        let mut out = KForm::zeros(self.grid, w.degree());
        for e in &self.harmonic[w.degree()] {
            out.axpy(self.inner(e, w), e);
        }
        Ok(out)
    }

    /// Coordinates of `w` against the harmonic basis.
    pub fn harmonic_coordinates(&self, w: &KForm) -> Result<Vec<f64>> {
        self.check(w)?;
        Ok(self.harmonic[w.degree()].iter().map(|e| self.inner(e, w)).collect())
    }

    /// Green operator: `ΔGω = ω − h(ω)`, `G` vanishing on harmonics.
    pub fn green(&self, w: &KForm) -> Result<KForm> {
        self.check(w)?;
        if self.flat {
            return Ok(flat_multiplier(w, |k2| if k2 == 0.0 { 0.0 } else { 1.0 / k2 }));
        }
        let k = w.degree();
        let harmonic = &self.harmonic[k];
        let mass_harmonic: Vec<KForm> = harmonic.iter().map(|e| self.mass(e)).collect();
        let src = w.band_limited().minus(&self.harmonic_projection(w)?);
        let rhs = self.mass(&src);
        let template = KForm::zeros(self.grid, k);
        let failure = std::cell::Cell::new(None);
        // deflated operator `MΔ + Σ (Me_i)(Me_i)ᵀ` is nonsingular
        let sol = pcg(
            "green",
            |v| {
                let mut x = template.clone();
                x.assign(v);
                let mut y = match self.mass_laplacian(&x) {
                    Ok(y) => y,
                    Err(e) => {
                        failure.set(Some(e));
                        return vec![0.0; v.len()];
                    }
                };
                for me in &mass_harmonic {
                    let c = me.flatten().iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
                        * self.grid.cell_volume();
                    y.axpy(c, me);
                }
                y.flatten()
            },
            |v| {
                let mut x = template.clone();
                x.assign(v);
                flat_multiplier(&x, |k2| if k2 == 0.0 { 1.0 } else { 1.0 / k2 }).flatten()
            },
            &rhs.flatten(),
            OUTER_TOL,
            MAX_ITER,
        );
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let mut out = template;
        out.assign(&sol?);
        let h = self.harmonic_projection(&out)?;
        Ok(out.minus(&h))
    }

    /// `ω = dGd*ω + d*Gdω + h(ω)`.
    pub fn hodge_decompose(&self, w: &KForm) -> Result<HodgeParts> {
        self.check(w)?;
        let n = self.grid.dim();
        let k = w.degree();
        let exact = if k > 0 {
            d_any(&self.green(&self.codiff_any(w)?)?)
        } else {
            KForm::zeros(self.grid, k)
        };
        let coexact = if k < n {
            self.codiff_any(&self.green(&d_any(w))?)?
        } else {
            KForm::zeros(self.grid, k)
        };
        Ok(HodgeParts {
            exact,
            coexact,
            harmonic: self.harmonic_projection(w)?,
        })
    }

    /// Gram matrix of the L² product on degree-`k` forms in a band basis.
    pub fn gram_matrix(&self, basis: &BandBasis, k: usize) -> DMatrix<f64> {
        let m = basis.len();
        let size = binomial(self.grid.dim(), k);
        let cell = self.grid.cell_volume();
        let mut out = DMatrix::zeros(size * m, size * m);
        for a in 0..size {
            for b in 0..size {
                let block = basis.weighted_gram(&self.weights[k].entries[a * size + b]) * cell;
                out.view_mut((a * m, b * m), (m, m)).copy_from(&block);
            }
        }
        out
    }

    /// All eigenvalues of `Δ_k` on the band, ascending, from a dense assembly.
    ///
    /// Independent of the iterative solvers: `d` is assembled column by column
    /// and the generalized problem `K v = λ M v` is reduced by Cholesky.
    pub fn dense_spectrum(&self, k: usize) -> Result<Vec<f64>> {
        let n = self.grid.dim();
        if k > n {
            return Err(GeomError::Degree {
                op: "dense_spectrum",
                degree: k,
            });
        }
        let basis = BandBasis::new(self.grid);
        let size = binomial(n, k) * basis.len();
        if size > 2500 {
            return Err(GeomError::TooLarge(format!("dense Laplacian of size {size}")));
        }
        let mass_k = self.gram_matrix(&basis, k);
        let mut stiff = DMatrix::zeros(size, size);
        if k < n {
            let dk = dense_d(&basis, k);
            let mass_up = self.gram_matrix(&basis, k + 1);
            stiff += dk.transpose() * mass_up * &dk;
        }
        if k > 0 {
            let dl = dense_d(&basis, k - 1);
            let mass_low = self.gram_matrix(&basis, k - 1);
            let chol = mass_low
                .cholesky()
                .ok_or(GeomError::NotPositiveDefinite { node: 0 })?;
            let t = dl.transpose() * &mass_k;
            stiff += t.transpose() * chol.solve(&t);
        }
        let chol = mass_k
            .cholesky()
            .ok_or(GeomError::NotPositiveDefinite { node: 0 })?;
        let l = chol.l();
        let left = l
            .solve_lower_triangular(&stiff)
            .ok_or(GeomError::NotPositiveDefinite { node: 0 })?;
        let reduced = l
            .solve_lower_triangular(&left.transpose())
            .ok_or(GeomError::NotPositiveDefinite { node: 0 })?;
        let sym = (&reduced + reduced.transpose()) * 0.5;
        let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        Ok(eig)
    }
}

/// Matrix of `d` from degree `k` to `k + 1` in a band basis (exact on the band).
pub(crate) fn dense_d(basis: &BandBasis, k: usize) -> DMatrix<f64> {
    let grid = basis.grid();
    let n = grid.dim();
    let m = basis.len();
    let (src, dst) = (binomial(n, k), binomial(n, k + 1));
    let mut out = DMatrix::zeros(dst * m, src * m);
    let template = KForm::zeros(grid, k);
    for col in 0..src * m {
        let mut coeffs = vec![0.0; src * m];
        coeffs[col] = 1.0;
        let w = basis.synthesize(&template, &coeffs);
        let dw = basis.coefficients(&d_any(&w));
        out.set_column(col, &dw);
    }
    out
}

/// Apply a multiplier in `|k|²` to every component (Nyquist zeroed).
pub(crate) fn flat_multiplier(w: &KForm, m: impl Fn(f64) -> f64) -> KForm {
    let sp = w.grid().spectral();
    let n = w.grid().dim();
    let mut out = w.clone();
    for p in out.parts_mut() {
        let v = sp.multiplier(p, |k| m(k[..n].iter().map(|x| (x * x) as f64).sum()));
        p.copy_from_slice(&v);
    }
    out
}

/// Number of eigenvalues below `rel · λ_max`.
pub fn kernel_dimension(spectrum: &[f64], rel: f64) -> usize {
    let top = spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    spectrum.iter().filter(|&&l| l.abs() <= rel * top).count()
}

/// Summary of one Hodge check, for reports.
#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub degree: usize,
    pub expected: usize,
    pub dense: usize,
    pub iterative: usize,
    pub smallest_nonzero: f64,
}

/// Dense and iterative kernel dimensions of every `Δ_k`.
pub fn kernel_report(ctx: &HodgeContext) -> Result<Vec<KernelReport>> {
    let n = ctx.grid().dim();
    (0..=n)
        .map(|k| {
            let spec = ctx.dense_spectrum(k)?;
            let dense = kernel_dimension(&spec, 1e-10);
            let iterative = ctx
                .harmonic_basis(k)?
                .iter()
                .filter(|e| {
                    ctx.laplacian(e)
                        .map(|l| ctx.l2_norm(&l) < 1e-8)
                        .unwrap_or(false)
                })
                .count();
            Ok(KernelReport {
                degree: k,
                expected: binomial(n, k),
                dense,
                iterative,
                smallest_nonzero: spec.get(dense).copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{AffineDiffeo, Pullback, ScalarField};
    use crate::rng::Stream;
    use std::f64::consts::PI;

    fn conformal(grid: TorusGrid) -> SymTensor2 {
        let f = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * x[0].sin());
        SymTensor2::identity(grid).scaled_by(&f)
    }

    fn skewed(grid: TorusGrid) -> SymTensor2 {
        SymTensor2::from_fn(grid, |i, j, x| match (i, j) {
            (0, 0) => 1.0 + 0.3 * x[1].cos(),
            (1, 1) => 1.0 + 0.3 * x[0].sin(),
            (2, 2) => 1.0 + 0.2 * (x[0] + x[1]).cos(),
            (0, 1) => 0.2 * (x[0] + x[1]).sin(),
            _ => 0.0,
        })
    }

    #[test]
    fn flat_star_examples() {
        let g = TorusGrid::new(2, 8).unwrap();
        let ctx = HodgeContext::flat(g);
        let dx1 = KForm::constant(g, 1, &[1.0, 0.0]);
        let s = ctx.star(&dx1).unwrap();
        assert!(s.minus(&KForm::constant(g, 1, &[0.0, 1.0])).max_abs() < 1e-14);
        let mut rng = Stream::new(3, 0);
        for k in 0..=2 {
            let w = KForm::random(g, k, 3, &mut rng);
            let ss = ctx.star(&ctx.star(&w).unwrap()).unwrap();
            let sign = if (k * (2 - k)) % 2 == 0 { 1.0 } else { -1.0 };
            assert!(ss.minus(&w.scaled(sign)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn conformal_star_on_one_forms_is_flat_star() {
        let g = TorusGrid::new(2, 16).unwrap();
        let ctx = HodgeContext::new(conformal(g)).unwrap();
        let flat = HodgeContext::flat(g);
        let w = KForm::random(g, 1, 4, &mut Stream::new(5, 0));
        let a = ctx.star(&w).unwrap();
        let b = flat.star(&w).unwrap();
        assert!(a.minus(&b).max_abs() < 1e-12);
    }

    #[test]
    fn inner_product_examples() {
        let g = TorusGrid::new(2, 16).unwrap();
        let ctx = HodgeContext::flat(g);
        let dx1 = KForm::constant(g, 1, &[1.0, 0.0]);
        let dx2 = KForm::constant(g, 1, &[0.0, 1.0]);
        assert_eq!(ctx.l2_inner(&dx1, &dx2).unwrap(), 0.0);
        let c = ScalarField::from_fn(g, |x| x[0].cos()).as_form();
        assert!((ctx.l2_inner(&c, &c).unwrap() - 2.0 * PI * PI).abs() < 1e-12);
        assert!(ctx.l2_inner(&c, &dx1).is_err());
    }

    #[test]
    fn adjoint_identity_for_curved_metric() {
        for g in [TorusGrid::new(2, 16).unwrap(), TorusGrid::new(3, 8).unwrap()] {
            let ctx = HodgeContext::new(skewed(g)).unwrap();
            let mut rng = Stream::new(11, g.dim() as u64);
            for k in 1..=g.dim() {
                let a = KForm::random(g, k - 1, 3, &mut rng);
                let w = KForm::random(g, k, 3, &mut rng);
                let lhs = ctx.l2_inner(&d_any(&a), &w).unwrap();
                let rhs = ctx.l2_inner(&a, &ctx.codiff(&w).unwrap()).unwrap();
                assert!((lhs - rhs).abs() <= 1e-9 * ctx.l2_norm(&a) * ctx.l2_norm(&w));
            }
        }
    }

    #[test]
    fn laplacian_and_green_on_cosine() {
        let g = TorusGrid::new(2, 16).unwrap();
        let ctx = HodgeContext::flat(g);
        let c = ScalarField::from_fn(g, |x| x[0].cos()).as_form();
        assert!(ctx.laplacian(&c).unwrap().minus(&c).max_abs() < 1e-12);
        assert!(ctx.green(&c).unwrap().minus(&c).max_abs() < 1e-12);
        let one = ScalarField::constant(g, 1.0).as_form();
        assert!(ctx.laplacian(&one).unwrap().max_abs() < 1e-14);
        assert!(ctx.green(&one).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn curved_green_inverts_laplacian() {
        let g = TorusGrid::new(2, 16).unwrap();
        let ctx = HodgeContext::new(conformal(g)).unwrap();
        let mut rng = Stream::new(2, 0);
        for k in 0..=2 {
            let w = KForm::random(g, k, 4, &mut rng);
            let gw = ctx.green(&w).unwrap();
            let back = ctx
                .laplacian(&gw)
                .unwrap()
                .plus(&ctx.harmonic_projection(&w).unwrap());
            assert!(back.minus(&w).norm() < 1e-9 * w.norm(), "degree {k}");
            for e in ctx.harmonic_basis(k).unwrap() {
                assert!(ctx.green(e).unwrap().norm() < 1e-9);
            }
        }
    }

    #[test]
    fn harmonic_bases_are_orthonormal_and_harmonic() {
        let g = TorusGrid::new(3, 8).unwrap();
        let ctx = HodgeContext::new(skewed(g)).unwrap();
        for k in 0..=3 {
            let basis = ctx.harmonic_basis(k).unwrap();
            assert_eq!(basis.len(), binomial(3, k));
            for (i, a) in basis.iter().enumerate() {
                assert!(ctx.l2_norm(&ctx.laplacian(a).unwrap()) < 1e-9);
                for (j, b) in basis.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ctx.l2_inner(a, b).unwrap() - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn flat_harmonic_one_forms_are_scaled_coordinates() {
        let g = TorusGrid::new(2, 8).unwrap();
        let ctx = HodgeContext::flat(g);
        let basis = ctx.harmonic_basis(1).unwrap();
        let s = 1.0 / (2.0 * PI);
        assert!(basis[0].minus(&KForm::constant(g, 1, &[s, 0.0])).max_abs() < 1e-14);
        assert!(basis[1].minus(&KForm::constant(g, 1, &[0.0, s])).max_abs() < 1e-14);
    }

    #[test]
    fn decomposition_is_orthogonal() {
        let g = TorusGrid::new(3, 8).unwrap();
        let ctx = HodgeContext::new(skewed(g)).unwrap();
        let w = KForm::random(g, 2, 3, &mut Stream::new(9, 0))
            .plus(&KForm::constant(g, 2, &[0.3, -0.2, 0.5]));
        let p = ctx.hodge_decompose(&w).unwrap();
        let sum = p.exact.plus(&p.coexact).plus(&p.harmonic);
        assert!(sum.minus(&w).norm() < 1e-9 * w.norm());
        let pairs = [(&p.exact, &p.coexact), (&p.exact, &p.harmonic), (&p.coexact, &p.harmonic)];
        for (a, b) in pairs {
            assert!(ctx.l2_inner(a, b).unwrap().abs() < 1e-10);
        }
        let closed = d_any(&KForm::random(g, 1, 3, &mut Stream::new(9, 1)));
        let q = ctx.hodge_decompose(&closed).unwrap();
        assert!(q.coexact.norm() < 1e-9 * closed.norm());
    }

    #[test]
    fn dense_kernel_dimensions_match_betti_numbers() {
        let g = TorusGrid::new(2, 8).unwrap();
        let ctx = HodgeContext::new(conformal(g)).unwrap();
        for k in 0..=2 {
            let spec = ctx.dense_spectrum(k).unwrap();
            assert_eq!(kernel_dimension(&spec, 1e-10), binomial(2, k));
        }
        let flat = HodgeContext::flat(g);
        let spec = flat.dense_spectrum(0).unwrap();
        // smallest nonzero eigenvalue of the flat Laplacian is |k|² = 1
        assert!((spec[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn isometries_commute_with_hodge_operators() {
        let g = TorusGrid::new(2, 16).unwrap();
        let ctx = HodgeContext::new(conformal(g)).unwrap();
        // x1 -> pi - x1, x2 -> -x2 + shift preserves (1 + sin x1/2) flat
        let phi = AffineDiffeo::new(g, vec![vec![-1, 0], vec![0, -1]], vec![8, 3]).unwrap();
        assert!(ctx.metric().pullback(&phi).unwrap().minus(ctx.metric()).max_abs() < 1e-14);
        let w = KForm::random(g, 1, 4, &mut Stream::new(4, 0));
        let pw = w.pullback(&phi).unwrap();
        let checks = [
            (ctx.star(&pw).unwrap(), ctx.star(&w).unwrap().pullback(&phi).unwrap()),
            (ctx.laplacian(&pw).unwrap(), ctx.laplacian(&w).unwrap().pullback(&phi).unwrap()),
            (ctx.green(&pw).unwrap(), ctx.green(&w).unwrap().pullback(&phi).unwrap()),
            (
                ctx.harmonic_projection(&pw).unwrap(),
                ctx.harmonic_projection(&w).unwrap().pullback(&phi).unwrap(),
            ),
        ];
        for (a, b) in checks {
            assert!(a.minus(&b).norm() < 1e-10 * w.norm());
        }
    }

    #[test]
    fn indefinite_metric_rejected() {
        let g = TorusGrid::new(2, 8).unwrap();
        let bad = SymTensor2::constant(g, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(HodgeContext::new(bad), Err(GeomError::NotPositiveDefinite { .. })));
    }
}
