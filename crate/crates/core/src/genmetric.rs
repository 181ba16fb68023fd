//! Generalized metrics as graphs `(g, ω)` or `(g, (ω, γ))` and their symmetries.
//!
//! All algebra here is fiberwise: products are nodal, not dealiased, so the
//! pair formulas and the subbundle picture agree node by node.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::grid::{
    index_position, multi_indices, same_grid, Field, FourierModeSpec, KForm, Pullback, SymTensor2,
    TorusGrid,
};
use crate::symmetry::{GroupElement, MembershipDefect};
use crate::courant::TwistData;

#[derive(Debug, Clone, PartialEq)]
pub struct GenMetric {
    pub g: SymTensor2,
    pub omega: KForm,
    pub gamma: Option<KForm>,
}

/// A tangent vector `(ġ, ω̇[, γ̇])` to the space of generalized metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct GMTangent {
    pub g: SymTensor2,
    pub omega: KForm,
    pub gamma: Option<KForm>,
}

/// Per-node frames of the positive subbundle; rows are frame vectors in
/// coordinates `(u, α)` or `(u, f, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFrame {
    pub grid: TorusGrid,
    pub odd: bool,
    pub nodes: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IsometryDefect {
    pub membership: MembershipDefect,
    /// `‖φ*g − g‖`
    pub metric: f64,
    /// `‖act(gel, V) − V‖` over all components.
    pub generalized: f64,
}

impl IsometryDefect {
    pub fn max(&self) -> f64 {
        self.membership.max().max(self.metric).max(self.generalized)
    }
}

/// Value of a 2-form on `(∂_i, ∂_j)` at a node.
fn two_form_entry(w: &KForm, i: usize, j: usize, p: usize) -> f64 {
    let n = w.grid().dim();
    match i.cmp(&j) {
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Less => w.component(index_position(n, &[i, j]).expect("valid"))[p],
        std::cmp::Ordering::Greater => -w.component(index_position(n, &[j, i]).expect("valid"))[p],
    }
}

/// Pointwise pairing matrix on the fiber.
fn pairing_matrix(n: usize, odd: bool) -> DMatrix<f64> {
    let off = usize::from(odd);
    let dim = 2 * n + off;
    let mut p = DMatrix::zeros(dim, dim);
    for i in 0..n {
        p[(i, n + off + i)] = 0.5;
        p[(n + off + i, i)] = 0.5;
    }
    if odd {
        p[(n, n)] = 1.0;
    }
    p
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

impl GenMetric {
    pub fn new(g: SymTensor2, omega: KForm, gamma: Option<KForm>) -> Result<Self> {
        same_grid(g.grid(), omega.grid())?;
        if omega.degree() != 2 {
            return Err(GeomError::Degree { op: "generalized metric", degree: omega.degree() });
        }
        if let Some(gm) = &gamma {
            same_grid(g.grid(), gm.grid())?;
            if gm.degree() != 1 {
                return Err(GeomError::Degree { op: "generalized metric", degree: gm.degree() });
            }
        }
        if let Some(node) = g.first_indefinite_node() {
            return Err(GeomError::NotPositiveDefinite { node });
        }
        Ok(GenMetric { g, omega, gamma })
    }

    pub fn flat(grid: TorusGrid, odd: bool) -> Self {
        GenMetric {
            g: SymTensor2::identity(grid),
            omega: KForm::zeros(grid, 2),
            gamma: odd.then(|| KForm::zeros(grid, 1)),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.g.grid()
    }

    pub fn is_odd(&self) -> bool {
        self.gamma.is_some()
    }

    /// Largest componentwise difference.
    pub fn distance(&self, other: &Self) -> f64 {
        let dg = match (&self.gamma, &other.gamma) {
            (Some(a), Some(b)) => a.minus(b).max_abs(),
            (None, None) => 0.0,
            _ => return f64::INFINITY,
        };
        self.g.minus(&other.g).max_abs().max(self.omega.minus(&other.omega).max_abs()).max(dg)
    }

    /// L² norm of the difference over all components.
    pub fn l2_distance(&self, other: &Self) -> f64 {
        let dg = match (&self.gamma, &other.gamma) {
            (Some(a), Some(b)) => a.minus(b).norm(),
            (None, None) => 0.0,
            _ => return f64::INFINITY,
        };
        (self.g.minus(&other.g).norm().powi(2) + self.omega.minus(&other.omega).norm().powi(2) + dg * dg).sqrt()
    }

    /// The positive subbundle `{u + i_ug + i_uω}`, or its odd counterpart
    /// `{u + (r + γ(u)) + (i_ug + i_uω − γ(u)γ − 2rγ)}`.
    pub fn graph_frame(&self) -> Result<GraphFrame> {
        let grid = self.grid();
        let n = grid.dim();
        let odd = self.is_odd();
        let off = usize::from(odd);
        let pm = pairing_matrix(n, odd);
        let mut nodes = Vec::with_capacity(grid.len());
        for p in 0..grid.len() {
            let gamma: Vec<f64> = match &self.gamma {
                Some(gm) => (0..n).map(|i| gm.component(i)[p]).collect(),
                None => vec![0.0; n],
            };
            let mut f = DMatrix::zeros(n + off, 2 * n + off);
            for i in 0..n {
                f[(i, i)] = 1.0;
                if odd {
                    f[(i, n)] = gamma[i];
                }
                for j in 0..n {
                    f[(i, n + off + j)] = self.g.get(i, j)[p] + two_form_entry(&self.omega, i, j, p)
                        - gamma[i] * gamma[j];
                }
            }
            if odd {
                f[(n, n)] = 1.0;
                for j in 0..n {
                    f[(n, n + 1 + j)] = -2.0 * gamma[j];
                }
            }
            if !is_positive_definite(&(&f * &pm * f.transpose())) {
                return Err(GeomError::NotPositiveDefinite { node: p });
            }
            nodes.push(f);
        }
        Ok(GraphFrame { grid, odd, nodes })
    }

    /// Read `(g, ω[, γ])` back from any frame spanning a positive graph subbundle.
    pub fn from_subbundle(frame: &GraphFrame) -> Result<Self> {
        let grid = frame.grid;
        let n = grid.dim();
        let odd = frame.odd;
        let off = usize::from(odd);
        let rank = n + off;
        let pm = pairing_matrix(n, odd);
        let mut g = SymTensor2::zeros(grid);
        let mut omega = KForm::zeros(grid, 2);
        let mut gamma = odd.then(|| KForm::zeros(grid, 1));
        let pairs = multi_indices(n, 2);
        if frame.nodes.len() != grid.len() {
            return Err(GeomError::Shape(format!("{} frames for {} nodes", frame.nodes.len(), grid.len())));
        }
        for (p, f) in frame.nodes.iter().enumerate() {
            if f.nrows() != rank || f.ncols() != 2 * n + off {
                return Err(GeomError::Shape(format!("frame is {}×{}", f.nrows(), f.ncols())));
            }
            if !is_positive_definite(&(f * &pm * f.transpose())) {
                return Err(GeomError::NotPositiveDefinite { node: p });
            }
            let head = f.columns(0, rank).clone_owned();
            let inv = head
                .try_inverse()
                .ok_or_else(|| GeomError::Shape(format!("projection is singular at node {p}")))?;
            let normal = inv * f;
            let gm: Vec<f64> = if odd {
                (0..n).map(|j| -0.5 * normal[(n, n + 1 + j)]).collect()
            } else {
                vec![0.0; n]
            };
            let m = DMatrix::from_fn(n, n, |i, j| normal[(i, n + off + j)] - gm[i] * gm[j]);
            for i in 0..n {
                for j in i..n {
                    g.get_mut(i, j)[p] = 0.5 * (m[(i, j)] + m[(j, i)]);
                }
            }
            for (c, ij) in pairs.iter().enumerate() {
                omega.component_mut(c)[p] = 0.5 * (m[(ij[0], ij[1])] - m[(ij[1], ij[0])]);
            }
            if let Some(out) = gamma.as_mut() {
                for (j, v) in gm.iter().enumerate() {
                    out.component_mut(j)[p] = *v;
                }
            }
        }
        GenMetric::new(g, omega, gamma)
    }

    /// Right action `(φ*g, φ*ω − B)`; odd: `(φ*g, (φ*ω − B − A∧φ*γ, φ*γ − A))`.
    pub fn act(&self, gel: &GroupElement) -> Result<Self> {
        if gel.is_odd() != self.is_odd() {
            return Err(GeomError::KindMismatch);
        }
        same_grid(self.grid(), gel.grid())?;
        let g = self.g.pullback(&gel.phi)?;
        let mut omega = self.omega.pullback(&gel.phi)?.minus(&gel.b);
        let gamma = match (&self.gamma, &gel.a) {
            (Some(gm), Some(a)) => {
                let pulled = gm.pullback(&gel.phi)?;
                omega.axpy(-1.0, &wedge_nodal(a, &pulled));
                Some(pulled.minus(a))
            }
            _ => None,
        };
        Ok(GenMetric { g, omega, gamma })
    }

    /// The same action computed as the inverse image of the subbundle under the
    /// fiberwise section action of `gel`.
    pub fn act_via_subbundle(&self, gel: &GroupElement) -> Result<Self> {
        if gel.is_odd() != self.is_odd() {
            return Err(GeomError::KindMismatch);
        }
        let frame = self.graph_frame()?;
        let grid = self.grid();
        let n = grid.dim();
        let odd = self.is_odd();
        let off = usize::from(odd);
        let lin = DMatrix::from_fn(n, n, |i, j| gel.phi.matrix()[i][j] as f64);
        let lin_inv = lin.clone().try_inverse().ok_or_else(|| GeomError::NotUnimodular(vec![gel.phi.det()]))?;
        let mut nodes = Vec::with_capacity(grid.len());
        for p in 0..grid.len() {
            let image = grid.flat_index(&gel.phi.apply_node(&grid.node(p))[..n]);
            let src = &frame.nodes[image];
            let mut f = DMatrix::zeros(src.nrows(), src.ncols());
            for r in 0..src.nrows() {
                // undo the pushforward: u ↦ L⁻¹u, α ↦ Lᵀα
                let u = &lin_inv * src.row(r).columns(0, n).transpose();
                let alpha = lin.transpose() * src.row(r).columns(n + off, n).transpose();
                let s = if odd { src[(r, n)] } else { 0.0 };
                // then e^{−(B, A)} at p
                let contract_b: Vec<f64> = (0..n)
                    .map(|j| (0..n).map(|i| u[i] * two_form_entry(&gel.b, i, j, p)).sum())
                    .collect();
                let a: Vec<f64> = match &gel.a {
                    Some(a) => (0..n).map(|j| a.component(j)[p]).collect(),
                    None => vec![0.0; n],
                };
                let iua: f64 = (0..n).map(|i| u[i] * a[i]).sum();
                for i in 0..n {
                    f[(r, i)] = u[i];
                    f[(r, n + off + i)] = alpha[i] - contract_b[i] + 2.0 * s * a[i] - iua * a[i];
                }
                if odd {
                    f[(r, n)] = s - iua;
                }
            }
            nodes.push(f);
        }
        GenMetric::from_subbundle(&GraphFrame { grid, odd, nodes })
    }

    pub fn isometry_defect(&self, t: &TwistData, gel: &GroupElement) -> Result<IsometryDefect> {
        let moved = self.act(gel)?;
        Ok(IsometryDefect {
            membership: gel.membership_defect(t)?,
            metric: moved.g.minus(&self.g).norm(),
            generalized: moved.l2_distance(self),
        })
    }

    /// Average of `act(h, V)` over a finite group.
    pub fn average(&self, group: &[GroupElement]) -> Result<Self> {
        check_group(group)?;
        let mut acc: Option<GenMetric> = None;
        for h in group {
            let v = self.act(h)?;
            acc = Some(match acc {
                None => v,
                Some(mut a) => {
                    a.g.axpy(1.0, &v.g);
                    a.omega.axpy(1.0, &v.omega);
                    if let (Some(x), Some(y)) = (a.gamma.as_mut(), &v.gamma) {
                        x.axpy(1.0, y);
                    }
                    a
                }
            });
        }
        let a = acc.ok_or_else(|| GeomError::NotAGroup("empty list".into()))?;
        let w = 1.0 / group.len() as f64;
        GenMetric::new(a.g.scaled(w), a.omega.scaled(w), a.gamma.map(|x| x.scaled(w)))
    }

    /// `∫ |ω̇ − γ∧γ̇|²_g + |γ̇|²_g + |ġ|²_g dvol`, polarized, by nodal quadrature.
    pub fn tangent_inner(&self, t1: &GMTangent, t2: &GMTangent) -> Result<f64> {
        if t1.is_odd() != self.is_odd() || t2.is_odd() != self.is_odd() {
            return Err(GeomError::KindMismatch);
        }
        let grid = self.grid();
        let (w1, w2) = match &self.gamma {
            Some(gm) => (
                t1.omega.minus(&wedge_nodal(gm, t1.gamma.as_ref().expect("kind checked"))),
                t2.omega.minus(&wedge_nodal(gm, t2.gamma.as_ref().expect("kind checked"))),
            ),
            None => (t1.omega.clone(), t2.omega.clone()),
        };
        let mut total = 0.0;
        for p in 0..grid.len() {
            let gp = self.g.at(p);
            let vol = gp.determinant().sqrt();
            let ginv = gp.try_inverse().ok_or(GeomError::NotPositiveDefinite { node: p })?;
            let mut v = form_inner_at(&ginv, &w1, &w2, p);
            if let (Some(a), Some(b)) = (&t1.gamma, &t2.gamma) {
                v += form_inner_at(&ginv, a, b, p);
            }
            let a = t1.g.at(p);
            let b = t2.g.at(p);
            v += (&ginv * a * &ginv * b).trace();
            total += vol * v;
        }
        Ok(total * grid.cell_volume())
    }
}

/// `Σ_{I,J} a_I b_J det(g⁻¹[I,J])` at one node.
fn form_inner_at(ginv: &DMatrix<f64>, a: &KForm, b: &KForm, p: usize) -> f64 {
    let n = ginv.nrows();
    let k = a.degree();
    let idx = multi_indices(n, k);
    let mut s = 0.0;
    for (x, i) in idx.iter().enumerate() {
        let av = a.component(x)[p];
        if av == 0.0 {
            continue;
        }
        for (y, j) in idx.iter().enumerate() {
            let minor = DMatrix::from_fn(k, k, |r, c| ginv[(i[r], j[c])]).determinant();
            s += av * b.component(y)[p] * minor;
        }
    }
    s
}

/// Nodal wedge of two 1-forms.
fn wedge_nodal(a: &KForm, b: &KForm) -> KForm {
    let grid = a.grid();
    let n = grid.dim();
    let mut out = KForm::zeros(grid, 2);
    for (c, ij) in multi_indices(n, 2).iter().enumerate() {
        let (ai, aj, bi, bj) = (a.component(ij[0]), a.component(ij[1]), b.component(ij[0]), b.component(ij[1]));
        for (p, o) in out.component_mut(c).iter_mut().enumerate() {
            *o = ai[p] * bj[p] - aj[p] * bi[p];
        }
    }
    out
}

const GROUP_TOL: f64 = 1e-9;

/// Verify that a list is closed under products and inverses.
pub fn check_group(group: &[GroupElement]) -> Result<()> {
    let contains = |x: &GroupElement| group.iter().any(|y| y.distance(x) <= GROUP_TOL);
    for a in group {
        if !contains(&a.inverse()?) {
            return Err(GeomError::NotAGroup("missing an inverse".into()));
        }
        for b in group {
            if !contains(&a.compose(b)?) {
                return Err(GeomError::NotAGroup("not closed under composition".into()));
            }
        }
    }
    Ok(())
}

impl Field for GMTangent {
    fn grid(&self) -> TorusGrid {
        self.g.grid()
    }
    fn parts(&self) -> Vec<&[f64]> {
        let mut p = self.g.parts();
        p.extend(self.omega.parts());
        if let Some(gm) = &self.gamma {
            p.extend(gm.parts());
        }
        p
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.g.parts_mut();
        p.extend(self.omega.parts_mut());
        if let Some(gm) = &mut self.gamma {
            p.extend(gm.parts_mut());
        }
        p
    }
}

impl GMTangent {
    pub fn zeros(grid: TorusGrid, odd: bool) -> Self {
        GMTangent {
            g: SymTensor2::zeros(grid),
            omega: KForm::zeros(grid, 2),
            gamma: odd.then(|| KForm::zeros(grid, 1)),
        }
    }

    pub fn is_odd(&self) -> bool {
        self.gamma.is_some()
    }

    /// `(φ*ġ, φ*ω̇[ − A∧φ*γ̇, φ*γ̇])`.
    pub fn push(&self, gel: &GroupElement) -> Result<Self> {
        let g = self.g.pullback(&gel.phi)?;
        let mut omega = self.omega.pullback(&gel.phi)?;
        let gamma = match (&self.gamma, &gel.a) {
            (Some(gm), Some(a)) => {
                let pulled = gm.pullback(&gel.phi)?;
                omega.axpy(-1.0, &wedge_nodal(a, &pulled));
                Some(pulled)
            }
            (None, None) => None,
            _ => return Err(GeomError::KindMismatch),
        };
        Ok(GMTangent { g, omega, gamma })
    }
}

/// One entry `g_ij += value` of a metric specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricEntry {
    pub i: usize,
    pub j: usize,
    pub value: FourierModeSpec,
}

/// JSON form of a generalized metric; `g` lists perturbations of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenMetricSpec {
    #[serde(default)]
    pub g: Vec<MetricEntry>,
    #[serde(default = "two_form_spec")]
    pub omega: FourierModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<FourierModeSpec>,
}

fn two_form_spec() -> FourierModeSpec {
    FourierModeSpec::new(2)
}

impl Default for GenMetricSpec {
    fn default() -> Self {
        GenMetricSpec { g: Vec::new(), omega: two_form_spec(), gamma: None }
    }
}

impl GenMetricSpec {
    pub fn build(&self, grid: TorusGrid, odd: bool) -> Result<GenMetric> {
        let mut g = SymTensor2::identity(grid);
        for e in &self.g {
            if e.i >= grid.dim() || e.j >= grid.dim() {
                return Err(GeomError::Component(vec![e.i, e.j]));
            }
            let v = e.value.sample(grid)?.as_scalar()?;
            for (o, x) in g.get_mut(e.i, e.j).iter_mut().zip(v.values()) {
                *o += x;
            }
        }
        let gamma = match (&self.gamma, odd) {
            (Some(s), true) => Some(s.sample(grid)?),
            (None, true) => Some(KForm::zeros(grid, 1)),
            (Some(_), false) => return Err(GeomError::KindMismatch),
            (None, false) => None,
        };
        GenMetric::new(g, self.omega.sample(grid)?, gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AffineDiffeo;
    use crate::rng::Stream;

    fn random_metric(grid: TorusGrid, odd: bool, rng: &mut Stream) -> GenMetric {
        let pert = SymTensor2::random(grid, 1, rng).scaled(0.15);
        GenMetric::new(
            SymTensor2::identity(grid).plus(&pert),
            KForm::random(grid, 2, 2, rng),
            odd.then(|| KForm::random(grid, 1, 1, rng).scaled(0.5)),
        )
        .unwrap()
    }

    fn random_element(grid: TorusGrid, odd: bool, rng: &mut Stream) -> GroupElement {
        let phi = if grid.dim() == 3 {
            AffineDiffeo::new(grid, vec![vec![0, -1, 0], vec![1, 0, 0], vec![0, 0, 1]], vec![1, 0, 3]).unwrap()
        } else {
            AffineDiffeo::new(grid, vec![vec![1, 1], vec![0, 1]], vec![2, 5]).unwrap()
        };
        GroupElement::new(phi, KForm::random(grid, 2, 2, rng), odd.then(|| KForm::random(grid, 1, 1, rng))).unwrap()
    }

    #[test]
    fn flat_frame_is_graph_of_identity() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let f = GenMetric::flat(grid, false).graph_frame().unwrap();
        let want = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(f.nodes.iter().all(|m| *m == want));
        let f = GenMetric::flat(grid, true).graph_frame().unwrap();
        assert_eq!(f.nodes[0].row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn frame_gram_is_the_metric() {
        let grid = TorusGrid::new(3, 8).unwrap();
        let mut rng = Stream::new(1, 0);
        let v = random_metric(grid, false, &mut rng);
        let frame = v.graph_frame().unwrap();
        let pm = pairing_matrix(3, false);
        for (p, f) in frame.nodes.iter().enumerate() {
            let gram = f * &pm * f.transpose();
            assert!((gram - v.g.at(p)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn subbundle_round_trip_and_span_invariance() {
        let grid = TorusGrid::new(3, 8).unwrap();
        let mut rng = Stream::new(2, 0);
        for odd in [false, true] {
            let v = random_metric(grid, odd, &mut rng);
            let mut frame = v.graph_frame().unwrap();
            assert!(GenMetric::from_subbundle(&frame).unwrap().distance(&v) < 1e-12);
            for f in frame.nodes.iter_mut() {
                let r = f.nrows();
                let mix = DMatrix::from_fn(r, r, |i, j| if i == j { 2.0 } else { 0.3 * (i as f64 - j as f64) });
                *f = mix * &*f;
            }
            assert!(GenMetric::from_subbundle(&frame).unwrap().distance(&v) < 1e-12);
        }
    }

    #[test]
    fn b_field_image_of_flat_graph() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let b = KForm::random(grid, 2, 2, &mut Stream::new(3, 0));
        let v = GenMetric::flat(grid, false).act(&GroupElement::b_field(b.scaled(-1.0)).unwrap()).unwrap();
        assert!(v.omega.minus(&b).max_abs() < 1e-15);
        let back = GenMetric::from_subbundle(&v.graph_frame().unwrap()).unwrap();
        assert!(back.omega.minus(&b).max_abs() < 1e-12);
    }

    #[test]
    fn action_examples() {
        let grid = TorusGrid::new(3, 8).unwrap();
        let mut rng = Stream::new(4, 0);
        let v = random_metric(grid, false, &mut rng);
        let b = KForm::random(grid, 2, 1, &mut rng);
        let moved = v.act(&GroupElement::b_field(b.clone()).unwrap()).unwrap();
        assert!(moved.omega.minus(&v.omega.minus(&b)).max_abs() < 1e-15 && moved.g == v.g);
        assert_eq!(v.act(&GroupElement::identity(grid, false)).unwrap(), v);
        let c = GenMetric::new(
            SymTensor2::constant(grid, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 1.5]),
            KForm::constant(grid, 2, &[0.3, 0.0, 1.0]),
            Some(KForm::constant(grid, 1, &[0.1, 0.2, 0.3])),
        )
        .unwrap();
        let tr = GroupElement::diffeo(AffineDiffeo::translation(grid, &[1, 4, 7]), grid, true).unwrap();
        assert!(c.act(&tr).unwrap().distance(&c) < 1e-15);
    }

    #[test]
    fn right_action_law_and_subbundle_agreement() {
        for dim in [2, 3] {
            let grid = TorusGrid::new(dim, 8).unwrap();
            let mut rng = Stream::new(5, dim as u64);
            for odd in [false, true] {
                let v = random_metric(grid, odd, &mut rng);
                let g1 = random_element(grid, odd, &mut rng);
                let g2 = random_element(grid, odd, &mut rng);
                let lhs = v.act(&g1).unwrap().act(&g2).unwrap();
                let rhs = v.act(&g1.compose(&g2).unwrap()).unwrap();
                assert!(lhs.distance(&rhs) < 1e-12);
                let via = v.act_via_subbundle(&g1).unwrap();
                assert!(via.distance(&v.act(&g1).unwrap()) < 1e-10, "dim {dim} odd {odd}");
                // g-component ignores the form fields
                let mut g3 = g1.clone();
                g3.b = KForm::random(grid, 2, 2, &mut rng);
                assert_eq!(v.act(&g3).unwrap().g, v.act(&g1).unwrap().g);
            }
        }
    }

    #[test]
    fn averaging_over_rotations() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let rot = AffineDiffeo::linear(grid, vec![vec![0, -1], vec![1, 0]]).unwrap();
        let mut group = vec![GroupElement::identity(grid, false)];
        for _ in 0..3 {
            let next = group.last().unwrap().compose(&GroupElement::diffeo(rot.clone(), grid, false).unwrap()).unwrap();
            group.push(next);
        }
        let v = random_metric(grid, false, &mut Stream::new(6, 0));
        let avg = v.average(&group).unwrap();
        let t = TwistData::zero_exact(grid);
        for h in &group {
            let d = avg.isometry_defect(&t, h).unwrap();
            assert!(d.metric < 1e-9 && d.generalized < 1e-9);
        }
        assert!(avg.average(&group).unwrap().distance(&avg) < 1e-13);
        assert_eq!(v.average(&group[..1]).unwrap(), v);
        assert!(matches!(v.average(&group[..2]), Err(GeomError::NotAGroup(_))));
    }

    #[test]
    fn isometry_examples() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let mut rng = Stream::new(7, 0);
        let t = TwistData::zero_exact(grid);
        let v = random_metric(grid, false, &mut rng);
        assert_eq!(v.isometry_defect(&t, &GroupElement::identity(grid, false)).unwrap().max(), 0.0);
        let flat = GenMetric::new(SymTensor2::identity(grid), KForm::random(grid, 2, 2, &mut rng), None).unwrap();
        let phi = AffineDiffeo::new(grid, vec![vec![0, 1], vec![1, 0]], vec![3, 1]).unwrap();
        let b = flat.omega.pullback(&phi).unwrap().minus(&flat.omega);
        let gel = GroupElement::new(phi.clone(), b, None).unwrap();
        assert!(flat.isometry_defect(&t, &gel).unwrap().max() < 1e-12);
        let shear = AffineDiffeo::linear(grid, vec![vec![1, 1], vec![0, 1]]).unwrap();
        let d = flat.isometry_defect(&t, &GroupElement::diffeo(shear, grid, false).unwrap()).unwrap();
        assert!(d.metric > 1.0);
    }

    #[test]
    fn tangent_inner_examples_and_invariance() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let v = GenMetric::flat(grid, false);
        let mut t = GMTangent::zeros(grid, false);
        assert_eq!(v.tangent_inner(&t, &t).unwrap(), 0.0);
        t.omega = KForm::constant(grid, 2, &[1.0]);
        let four_pi2 = (2.0 * std::f64::consts::PI).powi(2);
        assert!((v.tangent_inner(&t, &t).unwrap() - four_pi2).abs() < 1e-12);

        let grid = TorusGrid::new(3, 8).unwrap();
        let mut rng = Stream::new(8, 0);
        for odd in [false, true] {
            let v = random_metric(grid, odd, &mut rng);
            let mk = |rng: &mut Stream| GMTangent {
                g: SymTensor2::random(grid, 2, rng),
                omega: KForm::random(grid, 2, 2, rng),
                gamma: odd.then(|| KForm::random(grid, 1, 2, rng)),
            };
            let (t1, t2) = (mk(&mut rng), mk(&mut rng));
            let gel = random_element(grid, odd, &mut rng);
            let a = v.tangent_inner(&t1, &t2).unwrap();
            let b = v.act(&gel).unwrap().tangent_inner(&t1.push(&gel).unwrap(), &t2.push(&gel).unwrap()).unwrap();
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
            assert!((a - v.tangent_inner(&t2, &t1).unwrap()).abs() < 1e-10);
            assert!(v.tangent_inner(&t1, &t1).unwrap() > 0.0);
        }
    }

    #[test]
    fn odd_with_zero_gamma_sums_component_norms() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let mut rng = Stream::new(9, 0);
        let v = GenMetric::flat(grid, true);
        let t = GMTangent {
            g: SymTensor2::zeros(grid),
            omega: KForm::random(grid, 2, 2, &mut rng),
            gamma: Some(KForm::random(grid, 1, 2, &mut rng)),
        };
        let want = t.omega.norm().powi(2) + t.gamma.as_ref().unwrap().norm().powi(2);
        assert!((v.tangent_inner(&t, &t).unwrap() - want).abs() < 1e-10);
    }
}
