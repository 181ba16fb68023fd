//! Dense matrix realizations of the operators around the slice construction.
//!
//! Every space is a product of band-limited components expanded in the
//! orthonormal [`BandBasis`]; a coefficient vector is the concatenation of the
//! component coefficients in `Field::parts` order. Gram matrices carry the
//! metric-dependent L² product, so adjoints, projectors and orthogonal
//! complements are all taken with respect to it.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::courant::{ExactSection, OddSection, TwistData};
use crate::error::{GeomError, Result};
use crate::genmetric::{GMTangent, GenMetric};
use crate::grid::calculus::{d_any, wedge_any};
use crate::grid::{
    binomial, lie_form, lie_sym, multi_indices, BandBasis, Field, KForm, ScalarField, SymTensor2,
    TorusGrid, VectorField,
};
use crate::hodge::HodgeContext;
use crate::linalg::{spd_sqrt, Svd};
use crate::rng::Stream;
use crate::symmetry::{iota_e_exact, iota_e_odd, Derivation};

/// Largest dense matrix (entries) the assembler will build.
pub const MAX_ENTRIES: usize = 30_000_000;

/// Relative singular-value threshold for numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// A pair `(b, a)` of forms of degrees `k` and `k − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormPair {
    pub top: KForm,
    pub low: KForm,
}

impl FormPair {
    pub fn zeros(grid: TorusGrid, degree: usize) -> Result<Self> {
        if degree == 0 || degree > grid.dim() + 1 {
            return Err(GeomError::Degree { op: "form pair", degree });
        }
        Ok(FormPair { top: KForm::zeros(grid, degree), low: KForm::zeros(grid, degree - 1) })
    }

    pub fn degree(&self) -> usize {
        self.top.degree()
    }
}

impl Field for FormPair {
    fn grid(&self) -> TorusGrid {
        self.top.grid()
    }
    fn parts(&self) -> Vec<&[f64]> {
        let mut p = self.top.parts();
        p.extend(self.low.parts());
        p
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.top.parts_mut();
        p.extend(self.low.parts_mut());
        p
    }
}

/// `d_F(b, a) = (db − 2(−1)^k a∧F, da)` for `b` of degree `k`.
pub fn twisted_differential(f: &KForm, x: &FormPair) -> Result<FormPair> {
    if f.degree() != 2 {
        return Err(GeomError::Degree { op: "twisted differential", degree: f.degree() });
    }
    let k = x.degree();
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let mut top = d_any(&x.top);
    top.axpy(-2.0 * sign, &wedge_any(&x.low, f));
    Ok(FormPair { top, low: d_any(&x.low) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Forms { degree: usize },
    ExactSections,
    OddSections,
    ExactTangents,
    OddTangents,
    ExactDerivations,
    OddDerivations,
    FormPairs { degree: usize },
}

/// Component counts for the blocks of a space, in `Field::parts` order.
fn component_layout(kind: SpaceKind) -> Vec<Block> {
    use Block::*;
    match kind {
        SpaceKind::Forms { degree } => vec![Form(degree)],
        SpaceKind::ExactSections => vec![Vector, Form(1)],
        SpaceKind::OddSections => vec![Vector, Form(0), Form(1)],
        SpaceKind::ExactTangents => vec![Sym, Form(2)],
        SpaceKind::OddTangents => vec![Sym, TwistedPair],
        SpaceKind::ExactDerivations => vec![Vector, Form(2)],
        SpaceKind::OddDerivations => vec![Vector, Form(2), Form(1)],
        SpaceKind::FormPairs { degree } => vec![Form(degree), Form(degree - 1)],
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Form(usize),
    Vector,
    Sym,
    /// `(ω̇, γ̇)` with the product `|ω̇ − γ∧γ̇|² + |γ̇|²`.
    TwistedPair,
}

impl Block {
    fn size(self, n: usize) -> usize {
        match self {
            Block::Form(k) => binomial(n, k),
            Block::Vector => n,
            Block::Sym => n * (n + 1) / 2,
            Block::TwistedPair => binomial(n, 2) + n,
        }
    }
}

/// `Λ^k(g⁻¹)` in the lexicographic basis of `k`-forms.
fn form_weight(ginv: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let idx = multi_indices(ginv.nrows(), k);
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
        DMatrix::from_fn(k, k, |r, c| ginv[(idx[a][r], idx[b][c])]).determinant()
    })
}

fn sym_weight(ginv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ginv.nrows();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let unit = |(i, j): (usize, usize)| {
        let mut e = DMatrix::zeros(n, n);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    };
    DMatrix::from_fn(pairs.len(), pairs.len(), |a, b| {
        (ginv * unit(pairs[a]) * ginv * unit(pairs[b])).trace()
    })
}

/// Pointwise weight of a block at node `p`, before the volume factor.
fn block_weight(block: Block, metric: &GenMetric, ginv: &DMatrix<f64>, gmat: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = ginv.nrows();
    match block {
        Block::Form(k) => form_weight(ginv, k),
        Block::Vector => gmat.clone(),
        Block::Sym => sym_weight(ginv),
        Block::TwistedPair => {
            let w2 = form_weight(ginv, 2);
            let w1 = ginv.clone();
            let gamma: Vec<f64> = match &metric.gamma {
                Some(gm) => (0..n).map(|i| gm.component(i)[p]).collect(),
                None => vec![0.0; n],
            };
            // (γ∧γ̇)_ij = γ_i γ̇_j − γ_j γ̇_i
            let pairs = multi_indices(n, 2);
            let mut wedge = DMatrix::zeros(pairs.len(), n);
            for (c, ij) in pairs.iter().enumerate() {
                wedge[(c, ij[1])] += gamma[ij[0]];
                wedge[(c, ij[0])] -= gamma[ij[1]];
            }
            let m = pairs.len();
            let mut out = DMatrix::zeros(m + n, m + n);
            let cross = -(&w2 * &wedge);
            out.view_mut((0, 0), (m, m)).copy_from(&w2);
            out.view_mut((0, m), (m, n)).copy_from(&cross);
            out.view_mut((m, 0), (n, m)).copy_from(&cross.transpose());
            out.view_mut((m, m), (n, n)).copy_from(&(wedge.transpose() * &w2 * &wedge + w1));
            out
        }
    }
}

/// A finite-dimensional space of band-limited fields with its L² Gram matrix.
#[derive(Debug)]
pub struct FieldSpace {
    kind: SpaceKind,
    grid: TorusGrid,
    components: usize,
    basis: Arc<BandBasis>,
    gram: DMatrix<f64>,
    roots: OnceLock<(DMatrix<f64>, DMatrix<f64>)>,
}

impl FieldSpace {
    /// The space of `kind` with the product induced by `metric`.
    pub fn new(kind: SpaceKind, metric: &GenMetric) -> Result<Self> {
        Self::with_basis(kind, metric, Arc::new(BandBasis::new(metric.grid())))
    }

    pub fn with_basis(kind: SpaceKind, metric: &GenMetric, basis: Arc<BandBasis>) -> Result<Self> {
        let grid = metric.grid();
        if basis.grid() != grid {
            return Err(GeomError::GridMismatch);
        }
        let n = grid.dim();
        let blocks = component_layout(kind);
        if blocks.iter().any(|b| matches!(b, Block::Form(k) if *k > n)) {
            return Err(GeomError::Shape(format!("{kind:?} does not exist in dimension {n}")));
        }
        let components: usize = blocks.iter().map(|b| b.size(n)).sum();
        let m = basis.len();
        if (components * m).pow(2) > MAX_ENTRIES {
            return Err(GeomError::TooLarge(format!("Gram matrix of size {}", components * m)));
        }
        // node-major weights: weights[p] is components × components
        let mut weights = Vec::with_capacity(grid.len());
        for p in 0..grid.len() {
            let gmat = metric.g.at(p);
            let vol = gmat.determinant().sqrt();
            let ginv = gmat.clone().try_inverse().ok_or(GeomError::NotPositiveDefinite { node: p })?;
            let mut w = DMatrix::zeros(components, components);
            let mut at = 0;
            for &b in &blocks {
                let s = b.size(n);
                w.view_mut((at, at), (s, s)).copy_from(&(block_weight(b, metric, &ginv, &gmat, p) * vol));
                at += s;
            }
            weights.push(w);
        }
        let cell = grid.cell_volume();
        let mut gram = DMatrix::zeros(components * m, components * m);
        for a in 0..components {
            for b in a..components {
                let w: Vec<f64> = weights.iter().map(|w| w[(a, b)]).collect();
                if w.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let block = basis.weighted_gram(&w) * cell;
                gram.view_mut((a * m, b * m), (m, m)).copy_from(&block);
                if a != b {
                    gram.view_mut((b * m, a * m), (m, m)).copy_from(&block.transpose());
                }
            }
        }
        Ok(FieldSpace { kind, grid, components, basis, gram, roots: OnceLock::new() })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.components * self.basis.len()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn basis(&self) -> &Arc<BandBasis> {
        &self.basis
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `G^{1/2}` and `G^{−1/2}`, computed once.
    pub fn gram_roots(&self) -> Result<&(DMatrix<f64>, DMatrix<f64>)> {
        if let Some(r) = self.roots.get() {
            return Ok(r);
        }
        let r = spd_sqrt(&self.gram)?;
        Ok(self.roots.get_or_init(|| r))
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.gram * y)[(0, 0)]
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    pub fn coefficients(&self, field: &impl Field) -> Result<DVector<f64>> {
        let c = self.basis.coefficients(field);
        if c.len() != self.dim() {
            return Err(GeomError::Shape(format!("field with {} coefficients in a space of dimension {}", c.len(), self.dim())));
        }
        Ok(c)
    }

    pub fn synthesize<F: Field>(&self, template: &F, x: &DVector<f64>) -> Result<F> {
        if template.parts().len() != self.components || x.len() != self.dim() {
            return Err(GeomError::Shape(format!("template does not match {:?}", self.kind)));
        }
        Ok(self.basis.synthesize(template, x.as_slice()))
    }

    /// A random coefficient vector with unit Gram norm.
    pub fn random(&self, rng: &mut Stream) -> DVector<f64> {
        let x = DVector::from_fn(self.dim(), |_, _| rng.uniform(-1.0, 1.0));
        let s = self.norm(&x);
        x / s
    }

    /// Gram-orthonormal basis for the span of the columns (numerical rank).
    pub fn orthonormalize(&self, cols: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (root, inv_root) = self.gram_roots()?;
        if cols.ncols() == 0 {
            return Ok(DMatrix::zeros(self.dim(), 0));
        }
        let svd = Svd::new(&(root * cols), RANK_THRESHOLD);
        Ok(inv_root * svd.range())
    }

    /// Gram-orthogonal projector onto the span of Gram-orthonormal columns.
    pub fn projector(&self, onb: &DMatrix<f64>) -> DMatrix<f64> {
        onb * onb.transpose() * &self.gram
    }
}

/// An assembled linear operator between two field spaces.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub name: String,
    pub domain: Arc<FieldSpace>,
    pub codomain: Arc<FieldSpace>,
    pub matrix: DMatrix<f64>,
}

fn space_eq(a: &FieldSpace, b: &FieldSpace) -> bool {
    a.kind == b.kind && a.grid == b.grid && a.dim() == b.dim()
}

impl OperatorMatrix {
    /// Column `j` is the coefficient vector of `op` applied to basis field `j`.
    pub fn assemble<D: Field, C: Field>(
        name: &str,
        domain: Arc<FieldSpace>,
        codomain: Arc<FieldSpace>,
        domain_template: &D,
        op: impl Fn(&D) -> Result<C>,
    ) -> Result<Self> {
        let (rows, cols) = (codomain.dim(), domain.dim());
        if rows * cols > MAX_ENTRIES {
            return Err(GeomError::TooLarge(format!("{name}: {rows} × {cols} matrix")));
        }
        let mut matrix = DMatrix::zeros(rows, cols);
        let mut e = DVector::zeros(cols);
        for j in 0..cols {
            e[j] = 1.0;
            let field = domain.synthesize(domain_template, &e)?;
            e[j] = 0.0;
            let image = codomain.coefficients(&op(&field)?)?;
            matrix.set_column(j, &image);
        }
        Ok(OperatorMatrix { name: name.to_string(), domain, codomain, matrix })
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    /// `G_dom⁻¹ Aᵀ G_cod`.
    pub fn adjoint(&self) -> Result<Self> {
        let chol = self
            .domain
            .gram
            .clone()
            .cholesky()
            .ok_or(GeomError::NotPositiveDefinite { node: 0 })?;
        let matrix = chol.solve(&(self.matrix.transpose() * &self.codomain.gram));
        let name = match self.name.strip_suffix('*') {
            Some(base) => base.to_string(),
            None => format!("{}*", self.name),
        };
        Ok(OperatorMatrix { name, domain: self.codomain.clone(), codomain: self.domain.clone(), matrix })
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if !space_eq(&other.codomain, &self.domain) {
            return Err(GeomError::Shape(format!("cannot compose {} after {}", self.name, other.name)));
        }
        Ok(OperatorMatrix {
            name: format!("{}∘{}", self.name, other.name),
            domain: other.domain.clone(),
            codomain: self.codomain.clone(),
            matrix: &self.matrix * &other.matrix,
        })
    }

    /// `R_cod A R_dom⁻¹`, the operator in Gram-orthonormal coordinates.
    pub fn orthonormal_matrix(&self) -> Result<DMatrix<f64>> {
        let (rc, _) = self.codomain.gram_roots()?;
        let (_, rd_inv) = self.domain.gram_roots()?;
        Ok(rc * &self.matrix * rd_inv)
    }

    pub fn svd(&self) -> Result<Svd> {
        Ok(Svd::new(&self.orthonormal_matrix()?, RANK_THRESHOLD))
    }

    /// Gram-orthonormal basis of `Im A`.
    pub fn image_basis(&self) -> Result<DMatrix<f64>> {
        let (_, rc_inv) = self.codomain.gram_roots()?;
        Ok(rc_inv * self.svd()?.range())
    }

    /// Gram-orthonormal basis of `ker A`.
    pub fn kernel_basis(&self) -> Result<DMatrix<f64>> {
        let (_, rd_inv) = self.domain.gram_roots()?;
        Ok(rd_inv * self.svd()?.kernel())
    }

    /// Gram-orthonormal basis of `ker A*`, from an independent SVD of the transpose.
    pub fn adjoint_kernel_basis(&self) -> Result<DMatrix<f64>> {
        let (_, rc_inv) = self.codomain.gram_roots()?;
        let t = Svd::new(&self.orthonormal_matrix()?.transpose(), RANK_THRESHOLD);
        Ok(rc_inv * t.kernel())
    }

    /// `max |⟨Ax, y⟩ − ⟨x, A*y⟩|` over random unit probes.
    pub fn adjoint_residual(&self, adjoint: &Self, probes: usize, rng: &mut Stream) -> f64 {
        (0..probes)
            .map(|_| {
                let x = self.domain.random(rng);
                let y = self.codomain.random(rng);
                (self.codomain.inner(&self.apply(&x), &y) - self.domain.inner(&x, &adjoint.apply(&y))).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    /// `u + α ↦ (L_u g, L_uω − i_uH + dα)`
    AExact,
    /// `f ↦ (0, df)`
    BExact,
    /// `(u, b) ↦ (L_u g, L_uω − b)` on derivations
    AFull,
    /// the odd operator, the derivation map followed by the odd tangent map
    AOdd,
    /// `f ↦ (0, 0, df)`
    BOdd,
    /// `(u, (b, a)) ↦ (L_u g, (L_uω − b − a∧γ, L_uγ − a))`
    AFullOdd,
    IotaExact,
    IotaOdd,
    /// `d_F` on pairs whose top degree is given
    DF { degree: usize },
    /// `d` on forms of the given degree
    Exterior { degree: usize },
}

impl OperatorName {
    pub fn label(self) -> String {
        match self {
            OperatorName::AExact => "A_exact".into(),
            OperatorName::BExact => "B_exact".into(),
            OperatorName::AFull => "A_full".into(),
            OperatorName::AOdd => "A_odd".into(),
            OperatorName::BOdd => "B_odd".into(),
            OperatorName::AFullOdd => "A_full_odd".into(),
            OperatorName::IotaExact => "iota_exact".into(),
            OperatorName::IotaOdd => "iota_odd".into(),
            OperatorName::DF { degree } => format!("d_F[{degree}]"),
            OperatorName::Exterior { degree } => format!("d[{degree}]"),
        }
    }
}

fn tangent_exact(v: &GenMetric, u: &VectorField, omega_dot: KForm) -> Result<GMTangent> {
    Ok(GMTangent { g: lie_sym(u, &v.g)?, omega: omega_dot, gamma: None })
}

/// `(u, (b, a)) ↦ (L_u g, (L_uω − b − a∧γ, L_uγ − a))`.
pub fn tangent_of_derivation(v: &GenMetric, d: &Derivation) -> Result<GMTangent> {
    let mut omega = lie_form(&d.u, &v.omega)?.minus(&d.b);
    match (&v.gamma, &d.a) {
        (Some(gm), Some(a)) => {
            omega.axpy(-1.0, &wedge_any(a, gm));
            let gamma = lie_form(&d.u, gm)?.minus(a);
            Ok(GMTangent { g: lie_sym(&d.u, &v.g)?, omega, gamma: Some(gamma) })
        }
        (None, None) => tangent_exact(v, &d.u, omega),
        _ => Err(GeomError::KindMismatch),
    }
}

/// Shared band basis and spaces for one `(V, T)` pair.
#[derive(Debug)]
pub struct SliceSetting {
    pub metric: GenMetric,
    pub twist: TwistData,
    basis: Arc<BandBasis>,
    spaces: std::sync::Mutex<Vec<Arc<FieldSpace>>>,
}

impl SliceSetting {
    pub fn new(metric: GenMetric, twist: TwistData) -> Result<Self> {
        if metric.grid() != twist.grid() {
            return Err(GeomError::GridMismatch);
        }
        if metric.is_odd() != twist.is_odd() {
            return Err(GeomError::KindMismatch);
        }
        let basis = Arc::new(BandBasis::new(metric.grid()));
        Ok(SliceSetting { metric, twist, basis, spaces: Default::default() })
    }

    pub fn grid(&self) -> TorusGrid {
        self.metric.grid()
    }

    pub fn space(&self, kind: SpaceKind) -> Result<Arc<FieldSpace>> {
        let mut cache = self.spaces.lock().expect("no panics while held");
        if let Some(s) = cache.iter().find(|s| s.kind == kind) {
            return Ok(s.clone());
        }
        let s = Arc::new(FieldSpace::with_basis(kind, &self.metric, self.basis.clone())?);
        cache.push(s.clone());
        Ok(s)
    }

    pub fn assemble(&self, name: OperatorName) -> Result<OperatorMatrix> {
        let grid = self.grid();
        let v = &self.metric;
        let t = &self.twist;
        let label = name.label();
        let odd_only = |odd: bool| if odd == t.is_odd() { Ok(()) } else { Err(GeomError::KindMismatch) };
        match name {
            OperatorName::AExact => {
                odd_only(false)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::ExactSections)?,
                    self.space(SpaceKind::ExactTangents)?,
                    &ExactSection::zeros(grid),
                    |s| tangent_of_derivation(v, &iota_e_exact(t, s)?),
                )
            }
            OperatorName::BExact => {
                odd_only(false)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::Forms { degree: 0 })?,
                    self.space(SpaceKind::ExactSections)?,
                    &KForm::zeros(grid, 0),
                    |f| Ok(ExactSection::form(d_any(f))),
                )
            }
            OperatorName::AFull => {
                odd_only(false)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::ExactDerivations)?,
                    self.space(SpaceKind::ExactTangents)?,
                    &Derivation::zeros(grid, false),
                    |d| tangent_of_derivation(v, d),
                )
            }
            OperatorName::AOdd => {
                odd_only(true)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::OddSections)?,
                    self.space(SpaceKind::OddTangents)?,
                    &OddSection::zeros(grid),
                    |s| tangent_of_derivation(v, &iota_e_odd(t, s)?),
                )
            }
            OperatorName::BOdd => {
                odd_only(true)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::Forms { degree: 0 })?,
                    self.space(SpaceKind::OddSections)?,
                    &KForm::zeros(grid, 0),
                    |f| {
                        OddSection::new(VectorField::zeros(grid), ScalarField::zeros(grid), d_any(f))
                    },
                )
            }
            OperatorName::AFullOdd => {
                odd_only(true)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::OddDerivations)?,
                    self.space(SpaceKind::OddTangents)?,
                    &Derivation::zeros(grid, true),
                    |d| tangent_of_derivation(v, d),
                )
            }
            OperatorName::IotaExact => {
                odd_only(false)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::ExactSections)?,
                    self.space(SpaceKind::ExactDerivations)?,
                    &ExactSection::zeros(grid),
                    |s| iota_e_exact(t, s),
                )
            }
            OperatorName::IotaOdd => {
                odd_only(true)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::OddSections)?,
                    self.space(SpaceKind::OddDerivations)?,
                    &OddSection::zeros(grid),
                    |s| iota_e_odd(t, s),
                )
            }
            OperatorName::DF { degree } => {
                let f = t.f().ok_or(GeomError::KindMismatch)?;
                OperatorMatrix::assemble(
                    &label,
                    self.space(SpaceKind::FormPairs { degree })?,
                    self.space(SpaceKind::FormPairs { degree: degree + 1 })?,
                    &FormPair::zeros(grid, degree)?,
                    |x| twisted_differential(f, x),
                )
            }
            OperatorName::Exterior { degree } => OperatorMatrix::assemble(
                &label,
                self.space(SpaceKind::Forms { degree })?,
                self.space(SpaceKind::Forms { degree: degree + 1 })?,
                &KForm::zeros(grid, degree),
                |w| Ok(d_any(w)),
            ),
        }
    }

    /// Coefficients of harmonic derivations spanning the complement of the
    /// image of the derivation map: `(0, h)` for harmonic 2-forms, and in the
    /// odd case `(0, (−h₂, 0))` and `(0, (−2η, −h₁))` with `η = G d*(h₁∧F)`.
    pub fn harmonic_derivations(&self, hodge: &HodgeContext) -> Result<Vec<Derivation>> {
        let grid = self.grid();
        let mut out = Vec::new();
        let odd = self.twist.is_odd();
        for h in hodge.harmonic_basis(2)? {
            let b = if odd { h.scaled(-1.0) } else { h.clone() };
            out.push(Derivation::new(VectorField::zeros(grid), b, odd.then(|| KForm::zeros(grid, 1)))?);
        }
        if let Some(f) = self.twist.f() {
            for h1 in hodge.harmonic_basis(1)? {
                let w = wedge_any(h1, f);
                let eta = if w.degree() <= grid.dim() && w.max_abs() > 0.0 {
                    hodge.green(&hodge.codiff(&w)?)?
                } else {
                    KForm::zeros(grid, 2)
                };
                out.push(Derivation::new(VectorField::zeros(grid), eta.scaled(-2.0), Some(h1.scaled(-1.0)))?);
            }
        }
        Ok(out)
    }
}

/// `‖A B x‖ / ‖x‖` maximized over random probes.
pub fn complex_check(b: &OperatorMatrix, a: &OperatorMatrix, probes: usize, rng: &mut Stream) -> Result<f64> {
    let ab = a.compose(b)?;
    Ok((0..probes)
        .map(|_| {
            let x = ab.domain.random(rng);
            ab.codomain.norm(&ab.apply(&x))
        })
        .fold(0.0, f64::max))
}

/// The Green operator of the complex `· →B E →A ·` on its middle space.
#[derive(Debug, Clone)]
pub struct ComplexGreen {
    pub laplacian: DMatrix<f64>,
    pub green: DMatrix<f64>,
    pub kernel_projector: DMatrix<f64>,
    pub kernel_dim: usize,
    pub smallest_nonzero: f64,
    pub largest: f64,
}

/// Ill-conditioning floor for the smallest retained eigenvalue.
pub const CONDITIONING_FLOOR: f64 = 1e-10;

/// `Δ = A*A + BB*` inverted on the complement of its kernel.
pub fn complex_green(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<ComplexGreen> {
    if !space_eq(&a.domain, &b.codomain) {
        return Err(GeomError::Shape(format!("{} does not feed {}", b.name, a.name)));
    }
    let mid = &a.domain;
    let laplacian = a.adjoint()?.matrix * &a.matrix + &b.matrix * b.adjoint()?.matrix;
    let (root, inv_root) = mid.gram_roots()?;
    let sym = root * &laplacian * inv_root;
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let cut = RANK_THRESHOLD * largest;
    let dim = mid.dim();
    let mut g = DMatrix::zeros(dim, dim);
    let mut k = DMatrix::zeros(dim, dim);
    let mut kernel_dim = 0;
    let mut smallest = f64::INFINITY;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let outer = v * v.transpose();
        if l > cut {
            g += outer / l;
            smallest = smallest.min(l);
        } else {
            k += outer;
            kernel_dim += 1;
        }
    }
    if smallest < CONDITIONING_FLOOR {
        return Err(GeomError::Uncertified(format!(
            "complex Laplacian is ill-conditioned: smallest nonzero eigenvalue {smallest:e}"
        )));
    }
    Ok(ComplexGreen {
        laplacian,
        green: inv_root * g * root,
        kernel_projector: inv_root * k * root,
        kernel_dim,
        smallest_nonzero: smallest,
        largest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreenResiduals {
    /// `‖ΔG + K − I‖`
    pub identity: f64,
    /// `‖GK‖`
    pub annihilation: f64,
    /// `‖MG − (MG)ᵀ‖` with `M` the Gram matrix
    pub symmetry: f64,
}

impl ComplexGreen {
    pub fn residuals(&self, mid: &FieldSpace) -> GreenResiduals {
        let dim = self.green.nrows();
        let id = &self.laplacian * &self.green + &self.kernel_projector - DMatrix::identity(dim, dim);
        let mg = mid.gram() * &self.green;
        GreenResiduals {
            identity: id.amax(),
            annihilation: (&self.green * &self.kernel_projector).amax(),
            symmetry: (&mg - mg.transpose()).amax(),
        }
    }
}

/// `P = A G A*`.
pub fn orbit_projector(a: &OperatorMatrix, green: &ComplexGreen) -> Result<OperatorMatrix> {
    let adj = a.adjoint()?;
    let matrix = &a.matrix * &green.green * &adj.matrix;
    Ok(OperatorMatrix {
        name: format!("P[{}]", a.name),
        domain: a.codomain.clone(),
        codomain: a.codomain.clone(),
        matrix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectorReport {
    pub rank: usize,
    pub trace: f64,
    /// `‖P² − P‖`
    pub idempotence: f64,
    /// `‖MP − (MP)ᵀ‖`
    pub gram_symmetry: f64,
    /// `‖PA − A‖`
    pub range: f64,
    /// `max ‖Pw‖` over a basis of `ker A*`
    pub cokernel: f64,
    /// `max |⟨Im A, ker A*⟩|` between orthonormal bases
    pub orthogonality: f64,
    pub image_dim: usize,
    pub cokernel_dim: usize,
    pub rank_ambiguous: bool,
}

pub fn projector_report(a: &OperatorMatrix, p: &OperatorMatrix) -> Result<ProjectorReport> {
    let cod = &a.codomain;
    let svd = a.svd()?;
    let image = a.image_basis()?;
    let coker = a.adjoint_kernel_basis()?;
    let mp = cod.gram() * &p.matrix;
    let scale = a.matrix.amax().max(1.0);
    Ok(ProjectorReport {
        rank: svd.rank,
        trace: p.matrix.trace(),
        idempotence: (&p.matrix * &p.matrix - &p.matrix).amax(),
        gram_symmetry: (&mp - mp.transpose()).amax(),
        range: (&p.matrix * &a.matrix - &a.matrix).amax() / scale,
        cokernel: if coker.ncols() == 0 { 0.0 } else { (&p.matrix * &coker).amax() },
        orthogonality: if coker.ncols() == 0 || image.ncols() == 0 {
            0.0
        } else {
            (image.transpose() * cod.gram() * &coker).amax()
        },
        image_dim: image.ncols(),
        cokernel_dim: coker.ncols(),
        rank_ambiguous: svd.rank_is_ambiguous(),
    })
}

/// Splitting of `Im A′` into `Im A ⊕ F` and of the codomain into
/// `Im A ⊕ F ⊕ F₃`.
#[derive(Debug, Clone)]
pub struct FullGroupDecomposition {
    /// Gram-orthonormal basis of `F`
    pub f_basis: DMatrix<f64>,
    /// Gram-orthonormal basis of `ker p_F ∩ ker A*`
    pub nu_prime: DMatrix<f64>,
    pub report: FullGroupReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FullGroupReport {
    pub rank_a: usize,
    pub rank_a_prime: usize,
    pub dim_f: usize,
    pub harmonic_count: usize,
    /// `|rank[A | A′H] − rank A − dim F|`
    pub rank_defect: usize,
    /// `max |⟨F, Im A⟩|`
    pub f_orthogonality: f64,
    /// reassembly of random codomain vectors from the three parts
    pub reassembly: f64,
    /// `max |⟨parts⟩|` between the three parts of random vectors
    pub split_orthogonality: f64,
    /// `max ‖(p_F − p₀) w‖` over probes `w ∈ ker A*`, when `p₀` is supplied
    pub p0_residual: Option<f64>,
    pub nu_prime_dim: usize,
}

/// `f_i = (I − P) A′h_i` for the harmonic generators `h_i`.
pub fn full_group_decomposition(
    a: &OperatorMatrix,
    a_prime: &OperatorMatrix,
    harmonic: &[DVector<f64>],
    p: &OperatorMatrix,
    p0: Option<&DMatrix<f64>>,
    probes: usize,
    rng: &mut Stream,
) -> Result<FullGroupDecomposition> {
    let cod = a.codomain.clone();
    if !space_eq(&cod, &a_prime.codomain) {
        return Err(GeomError::Shape("A and A′ have different codomains".into()));
    }
    let dim = cod.dim();
    let id = DMatrix::<f64>::identity(dim, dim);
    let images: Vec<DVector<f64>> = harmonic.iter().map(|h| a_prime.apply(h)).collect();
    let f_raw = DMatrix::from_fn(dim, images.len(), |r, c| images[c][r]);
    let f_raw = (&id - &p.matrix) * f_raw;
    let f_basis = cod.orthonormalize(&f_raw)?;
    let image = a.image_basis()?;
    let rank_a = image.ncols();
    let mut joined = DMatrix::zeros(dim, a.matrix.ncols() + images.len());
    joined.view_mut((0, 0), (dim, a.matrix.ncols())).copy_from(&a.matrix);
    for (c, v) in images.iter().enumerate() {
        joined.set_column(a.matrix.ncols() + c, v);
    }
    let (rc, _) = cod.gram_roots()?;
    let rank_a_prime = Svd::new(&(rc * &joined), RANK_THRESHOLD).rank;
    let dim_f = f_basis.ncols();
    let pf = cod.projector(&f_basis);
    let coker = a.adjoint_kernel_basis()?;
    // ν′: the part of ker A* orthogonal to F
    let nu_raw = (&id - &pf) * &coker;
    let nu_prime = cod.orthonormalize(&nu_raw)?;
    let p3 = cod.projector(&nu_prime);
    let mut reassembly = 0.0f64;
    let mut split = 0.0f64;
    let mut p0_residual = p0.map(|_| 0.0f64);
    for _ in 0..probes {
        let x = cod.random(rng);
        let parts = [&p.matrix * &x, &pf * &x, &p3 * &x];
        let sum = &parts[0] + &parts[1] + &parts[2];
        reassembly = reassembly.max(cod.norm(&(sum - &x)));
        for i in 0..3 {
            for j in i + 1..3 {
                split = split.max(cod.inner(&parts[i], &parts[j]).abs());
            }
        }
        if let (Some(res), Some(p0)) = (p0_residual.as_mut(), p0) {
            let w = (&id - &p.matrix) * &x;
            *res = res.max(cod.norm(&(&pf * &w - p0 * &w)));
        }
    }
    let report = FullGroupReport {
        rank_a,
        rank_a_prime,
        dim_f,
        harmonic_count: harmonic.len(),
        rank_defect: rank_a_prime.abs_diff(rank_a + dim_f),
        f_orthogonality: if dim_f == 0 || rank_a == 0 { 0.0 } else { (image.transpose() * cod.gram() * &f_basis).amax() },
        reassembly,
        split_orthogonality: split,
        p0_residual,
        nu_prime_dim: nu_prime.ncols(),
    };
    Ok(FullGroupDecomposition { f_basis, nu_prime, report })
}

/// `p₀(ġ, ω̇) = (0, Σ⟨ω̇, h_i⟩ h_i)` on the exact tangent space.
pub fn harmonic_two_form_projector(space: &FieldSpace, hodge: &HodgeContext) -> Result<DMatrix<f64>> {
    if space.kind() != SpaceKind::ExactTangents {
        return Err(GeomError::Shape("harmonic projector acts on exact tangents".into()));
    }
    let grid = space.grid();
    let harmonic = hodge.harmonic_basis(2)?;
    let mut cols = DMatrix::zeros(space.dim(), harmonic.len());
    for (c, h) in harmonic.iter().enumerate() {
        let t = GMTangent { g: SymTensor2::zeros(grid), omega: h.clone(), gamma: None };
        cols.set_column(c, &space.coefficients(&t)?);
    }
    Ok(space.projector(&cols))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectSumReport {
    pub dim_e: usize,
    pub dim_e0: usize,
    pub dim_ker_a: usize,
    pub dim_ker_a0: usize,
    /// dimension of the complement of `ker A₀` inside `ker A`
    pub kernel_complement: usize,
    pub dim_e2: usize,
    pub dim_h_prime: usize,
    /// `dim E − (dim ker A + dim E₂ + dim H′)`
    pub bookkeeping: i64,
    /// rank of `[ker A | E₂ | H′]` minus `dim E`
    pub direct_sum_defect: i64,
    /// `max |⟨Im A, ker A*⟩|`
    pub orthogonality: f64,
    pub pass: bool,
}

fn columns(list: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = list.first().map_or(0, |m| m.nrows());
    let total: usize = list.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, total);
    let mut at = 0;
    for m in list {
        out.view_mut((0, at), (rows, m.ncols())).copy_from(m);
        at += m.ncols();
    }
    out
}

/// Finite-dimensional kernel and image decompositions for `A′` on
/// `E = Im ι ⊕ span(harmonic)` with `E₀ = Im ι`.
pub fn direct_sum_checks(
    a_prime: &OperatorMatrix,
    iota: &OperatorMatrix,
    harmonic: &[DVector<f64>],
    a: &OperatorMatrix,
) -> Result<DirectSumReport> {
    let der = a_prime.domain.clone();
    if !space_eq(&der, &iota.codomain) {
        return Err(GeomError::Shape("ι does not land in the domain of A′".into()));
    }
    let rows = der.dim();
    let hmat = DMatrix::from_fn(rows, harmonic.len(), |r, c| harmonic[c][r]);
    let e0 = der.orthonormalize(&iota.matrix)?;
    let e = der.orthonormalize(&columns(&[&iota.matrix, &hmat]))?;
    let (rc, _) = a_prime.codomain.gram_roots()?;
    // kernels of A′ restricted to a subspace with Gram-orthonormal basis `s`
    let restricted_kernel = |s: &DMatrix<f64>| -> (DMatrix<f64>, DMatrix<f64>) {
        let m = rc * &a_prime.matrix * s;
        let svd = Svd::new(&m, RANK_THRESHOLD);
        let ker = s * svd.kernel();
        let row = s * svd.v_t.rows(0, svd.rank).transpose();
        (ker, row)
    };
    let (ker_a, _) = restricted_kernel(&e);
    let (ker_a0, e2) = restricted_kernel(&e0);
    let (rd, _) = der.gram_roots()?;
    let rank = |m: &DMatrix<f64>| if m.ncols() == 0 { 0 } else { Svd::new(&(rd * m), RANK_THRESHOLD).rank };
    let joined_ker = columns(&[&ker_a0, &ker_a]);
    let kernel_complement = rank(&joined_ker) - ker_a0.ncols();
    let mut chosen = columns(&[&ker_a, &e2]);
    let mut h_prime = 0;
    for h in harmonic {
        let cand = columns(&[&chosen, &DMatrix::from_column_slice(rows, 1, h.as_slice())]);
        if rank(&cand) > rank(&chosen) {
            chosen = cand;
            h_prime += 1;
        }
    }
    let dim_e = e.ncols();
    let bookkeeping = dim_e as i64 - (ker_a.ncols() + e2.ncols() + h_prime) as i64;
    let direct_sum_defect = rank(&chosen) as i64 - dim_e as i64;
    let image = a.image_basis()?;
    let coker = a.adjoint_kernel_basis()?;
    let orthogonality = if image.ncols() == 0 || coker.ncols() == 0 {
        0.0
    } else {
        (image.transpose() * a.codomain.gram() * &coker).amax()
    };
    Ok(DirectSumReport {
        dim_e,
        dim_e0: e0.ncols(),
        dim_ker_a: ker_a.ncols(),
        dim_ker_a0: ker_a0.ncols(),
        kernel_complement,
        dim_e2: e2.ncols(),
        dim_h_prime: h_prime,
        bookkeeping,
        direct_sum_defect,
        orthogonality,
        pass: bookkeeping == 0
            && direct_sum_defect == 0
            && ker_a.ncols() >= ker_a0.ncols()
            && orthogonality <= 1e-9,
    })
}

/// Largest deviation between matrix action and direct evaluation on random probes.
pub fn probe_consistency<D: Field, C: Field>(
    op: &OperatorMatrix,
    template: &D,
    functional: impl Fn(&D) -> Result<C>,
    probes: usize,
    rng: &mut Stream,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let x = op.domain.random(rng);
        let field = op.domain.synthesize(template, &x)?;
        let direct = functional(&field)?;
        let via = op.codomain.synthesize(&direct.zeroed(), &op.apply(&x))?;
        worst = worst.max(direct.minus(&via).max_abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FourierModeSpec;

    fn t2() -> TorusGrid {
        TorusGrid::new(2, 8).unwrap()
    }

    fn random_omega(grid: TorusGrid, seed: u64) -> KForm {
        KForm::random(grid, 2, 2, &mut Stream::new(seed, 0)).scaled(0.3)
    }

    fn exact_setting(omega: KForm) -> SliceSetting {
        let grid = omega.grid();
        let v = GenMetric::new(SymTensor2::identity(grid), omega, None).unwrap();
        SliceSetting::new(v, TwistData::zero_exact(grid)).unwrap()
    }

    #[test]
    fn gram_is_spd_and_matches_direct_quadrature() {
        let grid = t2();
        let mut rng = Stream::new(3, 1);
        let mut g = SymTensor2::identity(grid);
        g.axpy(0.2, &SymTensor2::random(grid, 1, &mut rng));
        let v = GenMetric::new(g, random_omega(grid, 4), Some(KForm::random(grid, 1, 1, &mut rng).scaled(0.4))).unwrap();
        let space = FieldSpace::new(SpaceKind::OddTangents, &v).unwrap();
        assert!(space.gram().clone().cholesky().is_some());
        let template = GMTangent::zeros(grid, true);
        for _ in 0..3 {
            let x = space.random(&mut rng);
            let t = space.synthesize(&template, &x).unwrap();
            let direct = v.tangent_inner(&t, &t).unwrap();
            assert!((space.inner(&x, &x) - direct).abs() < 1e-9, "{} vs {direct}", space.inner(&x, &x));
        }
    }

    #[test]
    fn b_exact_of_cosine() {
        let s = exact_setting(KForm::zeros(t2(), 2));
        let b = s.assemble(OperatorName::BExact).unwrap();
        let f = FourierModeSpec::new(0).with(&[], &[1, 0], 1.0, 0.0).sample(s.grid()).unwrap();
        let x = b.domain.coefficients(&f).unwrap();
        let out: ExactSection = b.codomain.synthesize(&ExactSection::zeros(s.grid()), &b.apply(&x)).unwrap();
        assert!(out.u.max_abs() < 1e-12);
        assert!(out.alpha.minus(&d_any(&f)).max_abs() < 1e-12);
    }

    #[test]
    fn exact_complex_projector_and_killing_directions() {
        let flat = exact_setting(KForm::zeros(t2(), 2));
        let a = flat.assemble(OperatorName::AExact).unwrap();
        let grid = flat.grid();
        // constant vectors and closed forms lie in the kernel
        for axis in 0..2 {
            let s = ExactSection::vector(VectorField::coordinate(grid, axis));
            let x = a.domain.coefficients(&s).unwrap();
            assert!(a.apply(&x).amax() < 1e-12);
        }
        let d0 = flat.assemble(OperatorName::Exterior { degree: 0 }).unwrap();
        for j in 0..d0.domain.dim() {
            let alpha: KForm = d0.codomain.synthesize(&KForm::zeros(grid, 1), &d0.matrix.column(j).into_owned()).unwrap();
            let x = a.domain.coefficients(&ExactSection::form(alpha)).unwrap();
            assert!(a.apply(&x).amax() < 1e-12);
        }

        let s = exact_setting(random_omega(grid, 9));
        let a = s.assemble(OperatorName::AExact).unwrap();
        let b = s.assemble(OperatorName::BExact).unwrap();
        let mut rng = Stream::new(5, 0);
        assert!(complex_check(&b, &a, 10, &mut rng).unwrap() < 1e-10);
        let adj = a.adjoint().unwrap();
        assert!(a.adjoint_residual(&adj, 10, &mut rng) < 1e-11);
        assert!((adj.adjoint().unwrap().matrix - &a.matrix).amax() < 1e-10);
        let green = complex_green(&a, &b).unwrap();
        let gr = green.residuals(&a.domain);
        assert!(gr.identity < 1e-8 && gr.annihilation < 1e-8 && gr.symmetry < 1e-9, "{gr:?}");
        let p = orbit_projector(&a, &green).unwrap();
        let rep = projector_report(&a, &p).unwrap();
        assert!(rep.idempotence < 1e-7, "{rep:?}");
        assert!(rep.gram_symmetry < 1e-9, "{rep:?}");
        assert!((rep.trace - rep.rank as f64).abs() < 0.5, "{rep:?}");
        assert!(rep.range < 1e-7 && rep.cokernel < 1e-7 && rep.orthogonality < 1e-9, "{rep:?}");
        assert_eq!(rep.image_dim + rep.cokernel_dim, a.codomain.dim());
    }

    #[test]
    fn adjoint_of_d_matches_codifferential() {
        let grid = t2();
        let mut rng = Stream::new(8, 0);
        let mut g = SymTensor2::identity(grid);
        g.axpy(0.15, &SymTensor2::random(grid, 1, &mut rng));
        let v = GenMetric::new(g.clone(), KForm::zeros(grid, 2), None).unwrap();
        let s = SliceSetting::new(v, TwistData::zero_exact(grid)).unwrap();
        let d = s.assemble(OperatorName::Exterior { degree: 0 }).unwrap();
        let adj = d.adjoint().unwrap();
        let hodge = HodgeContext::new(g).unwrap();
        for _ in 0..3 {
            let y = d.codomain.random(&mut rng);
            let w: KForm = d.codomain.synthesize(&KForm::zeros(grid, 1), &y).unwrap();
            let direct = d.domain.coefficients(&hodge.codiff(&w).unwrap()).unwrap();
            assert!((adj.apply(&y) - direct).amax() < 1e-9);
        }
    }

    #[test]
    fn full_group_and_direct_sums_exact() {
        let s = exact_setting(random_omega(t2(), 21));
        let hodge = HodgeContext::flat(s.grid());
        let a = s.assemble(OperatorName::AExact).unwrap();
        let b = s.assemble(OperatorName::BExact).unwrap();
        let ap = s.assemble(OperatorName::AFull).unwrap();
        let iota = s.assemble(OperatorName::IotaExact).unwrap();
        assert!((ap.compose(&iota).unwrap().matrix - &a.matrix).amax() < 1e-10);
        let harm: Vec<DVector<f64>> = s
            .harmonic_derivations(&hodge)
            .unwrap()
            .iter()
            .map(|d| ap.domain.coefficients(d).unwrap())
            .collect();
        let green = complex_green(&a, &b).unwrap();
        let p = orbit_projector(&a, &green).unwrap();
        let p0 = harmonic_two_form_projector(&a.codomain, &hodge).unwrap();
        let mut rng = Stream::new(2, 2);
        let fg = full_group_decomposition(&a, &ap, &harm, &p, Some(&p0), 10, &mut rng).unwrap();
        let r = &fg.report;
        assert_eq!(r.dim_f, 1);
        assert_eq!(r.rank_defect, 0);
        assert!(r.f_orthogonality < 1e-9 && r.reassembly < 1e-8 && r.split_orthogonality < 1e-8, "{r:?}");
        assert!(r.p0_residual.unwrap() < 1e-8, "{r:?}");
        assert_eq!(r.nu_prime_dim + r.dim_f + r.rank_a, a.codomain.dim());
        let ds = direct_sum_checks(&ap, &iota, &harm, &a).unwrap();
        assert!(ds.pass, "{ds:?}");
        assert!(ds.dim_ker_a >= ds.dim_ker_a0);
    }

    #[test]
    fn odd_complex_and_projector() {
        let grid = t2();
        let mut rng = Stream::new(6, 0);
        let f = KForm::constant(grid, 2, &[0.4]).plus(&d_any(&KForm::random(grid, 1, 1, &mut rng).scaled(0.3)));
        let t = TwistData::odd(KForm::zeros(grid, 3), f).unwrap();
        let v = GenMetric::new(SymTensor2::identity(grid), random_omega(grid, 7), Some(KForm::random(grid, 1, 1, &mut rng).scaled(0.3))).unwrap();
        let s = SliceSetting::new(v, t).unwrap();
        let a = s.assemble(OperatorName::AOdd).unwrap();
        let b = s.assemble(OperatorName::BOdd).unwrap();
        assert!(complex_check(&b, &a, 10, &mut rng).unwrap() < 1e-10);
        let green = complex_green(&a, &b).unwrap();
        let p = orbit_projector(&a, &green).unwrap();
        let rep = projector_report(&a, &p).unwrap();
        assert!(rep.idempotence < 1e-7 && rep.gram_symmetry < 1e-9, "{rep:?}");
        assert!((rep.trace - rep.rank as f64).abs() < 0.5);
        let ap = s.assemble(OperatorName::AFullOdd).unwrap();
        let iota = s.assemble(OperatorName::IotaOdd).unwrap();
        assert!((ap.compose(&iota).unwrap().matrix - &a.matrix).amax() < 1e-10);
        let hodge = HodgeContext::flat(grid);
        let gens = s.harmonic_derivations(&hodge).unwrap();
        for d in &gens {
            assert!(d.derivation_defect(&s.twist).unwrap().max() < 1e-10);
        }
        let harm: Vec<DVector<f64>> = gens.iter().map(|d| ap.domain.coefficients(d).unwrap()).collect();
        let fg = full_group_decomposition(&a, &ap, &harm, &p, None, 5, &mut rng).unwrap();
        assert_eq!(fg.report.rank_defect, 0, "{:?}", fg.report);
        assert!(fg.report.dim_f <= 3);
        let ds = direct_sum_checks(&ap, &iota, &harm, &a).unwrap();
        assert!(ds.pass, "{ds:?}");
    }

    #[test]
    fn twisted_complex_on_three_torus() {
        let grid = TorusGrid::new(3, 8).unwrap();
        let mut rng = Stream::new(1, 0);
        let closed = KForm::constant(grid, 2, &[0.3, -0.1, 0.2]).plus(&d_any(&KForm::random(grid, 1, 1, &mut rng).scaled(0.2)));
        let t = TwistData::odd(KForm::zeros(grid, 3), closed.clone()).unwrap();
        let s = SliceSetting::new(GenMetric::flat(grid, true), t).unwrap();
        let d1 = s.assemble(OperatorName::DF { degree: 1 }).unwrap();
        let d2 = s.assemble(OperatorName::DF { degree: 2 }).unwrap();
        assert!(complex_check(&d1, &d2, 5, &mut rng).unwrap() < 1e-9);
        let bad = closed.plus(&KForm::random(grid, 2, 1, &mut rng).scaled(0.3));
        let t = TwistData::unvalidated(KForm::zeros(grid, 3), Some(bad)).unwrap();
        let s = SliceSetting::new(GenMetric::flat(grid, true), t).unwrap();
        let d1 = s.assemble(OperatorName::DF { degree: 1 }).unwrap();
        let d2 = s.assemble(OperatorName::DF { degree: 2 }).unwrap();
        assert!(complex_check(&d1, &d2, 5, &mut rng).unwrap() > 1e-3);
    }

    #[test]
    fn matrix_matches_functional_evaluation() {
        let grid = t2();
        let s = exact_setting(random_omega(grid, 13));
        let a = s.assemble(OperatorName::AExact).unwrap();
        let mut rng = Stream::new(13, 1);
        let res = probe_consistency(
            &a,
            &ExactSection::zeros(grid),
            |x| tangent_of_derivation(&s.metric, &iota_e_exact(&s.twist, x)?),
            10,
            &mut rng,
        )
        .unwrap();
        assert!(res < 1e-9);
    }
}
