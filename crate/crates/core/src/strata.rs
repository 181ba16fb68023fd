//! Finite generalized isometry groups, their conjugacy classes, and the
//! projections from generalized-metric strata to metric strata.
//!
//! Continuous isometries of a flat torus are represented by their grid-lattice
//! subgroups, and every search is confined to an explicit finite pool. Only the
//! exact algebroid is handled here.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::courant::TwistData;
use crate::error::{GeomError, Result};
use crate::genmetric::{GMTangent, GenMetric};
use crate::grid::calculus::d_any;
use crate::grid::{
    multi_indices, AffineDiffeo, Field, FourierModeSpec, KForm, Pullback, SymTensor2,
    TorusGrid,
};
use crate::hodge::HodgeContext;
use crate::symmetry::GroupElement;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolOptions {
    /// Grid step between candidate translations; `None` keeps linear maps only.
    pub translation_step: Option<usize>,
    /// Relative tolerance for `φ*g = g` and the isometry conditions.
    pub tolerance: f64,
    pub max_size: usize,
}

impl Default for PoolOptions {
    fn default() -> Self {
        PoolOptions { translation_step: Some(1), tolerance: 1e-9, max_size: 100_000 }
    }
}

fn mat_mul(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn is_identity_matrix(m: &[Vec<i64>]) -> bool {
    m.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, &v)| v == i64::from(i == j)))
}

fn order_of(m: &[Vec<i64>], bound: usize) -> Option<usize> {
    let mut p = m.to_vec();
    for k in 1..=bound {
        if is_identity_matrix(&p) {
            return Some(k);
        }
        p = mat_mul(&p, m);
    }
    None
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Signed permutation matrices, plus for `n = 2` every `GL(2, Z)` matrix with
/// entries in `{−1, 0, 1}` and order at most 6. Sorted and deduplicated.
pub fn linear_parts(n: usize) -> Vec<Vec<Vec<i64>>> {
    let mut out: Vec<Vec<Vec<i64>>> = Vec::new();
    for perm in permutations(n) {
        for signs in 0..(1u32 << n) {
            let m = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if perm[i] == j {
                                if signs >> i & 1 == 1 { -1 } else { 1 }
                            } else {
                                0
                            }
                        })
                        .collect()
                })
                .collect();
            out.push(m);
        }
    }
    if n == 2 {
        for code in 0..81u32 {
            let e: Vec<i64> = (0..4).map(|k| (code / 3u32.pow(k) % 3) as i64 - 1).collect();
            let m = vec![vec![e[0], e[1]], vec![e[2], e[3]]];
            let det = e[0] * e[3] - e[1] * e[2];
            if det.abs() == 1 && order_of(&m, 6).is_some() {
                out.push(m);
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Affine maps from [`linear_parts`] with grid translations that preserve `g`.
pub fn candidate_pool(grid: TorusGrid, g: &SymTensor2, opts: &PoolOptions) -> Result<Vec<AffineDiffeo>> {
    if g.grid() != grid {
        return Err(GeomError::GridMismatch);
    }
    let n = grid.dim();
    let res = grid.res();
    let shifts: Vec<Vec<i64>> = match opts.translation_step {
        None => vec![vec![0; n]],
        Some(step) => {
            let step = step.max(1);
            let axis: Vec<i64> = (0..res).step_by(step).map(|v| v as i64).collect();
            (0..axis.len().pow(n as u32))
                .map(|mut c| {
                    (0..n)
                        .map(|_| {
                            let v = axis[c % axis.len()];
                            c /= axis.len();
                            v
                        })
                        .rev()
                        .collect()
                })
                .collect()
        }
    };
    let linear = linear_parts(n);
    let total = linear.len() * shifts.len();
    if total > opts.max_size {
        return Err(GeomError::TooLarge(format!("candidate pool of {total} maps")));
    }
    let scale = 1.0 + g.max_abs();
    let mut out = Vec::new();
    for m in &linear {
        for s in &shifts {
            let phi = AffineDiffeo::new(grid, m.clone(), s.clone())?;
            if g.pullback(&phi)?.minus(g).max_abs() <= opts.tolerance * scale {
                out.push(phi);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// The element over `φ` that fixes `V`: `B = φ*ω − ω`.
pub fn lift_isometry(v: &GenMetric, phi: &AffineDiffeo) -> Result<GroupElement> {
    if v.is_odd() {
        return Err(GeomError::KindMismatch);
    }
    GroupElement::new(phi.clone(), v.omega.pullback(phi)?.minus(&v.omega), None)
}

/// Stable 64-bit FNV-1a.
fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// A finite group of generalized diffeomorphisms with its multiplication table.
///
/// Elements are sorted by their underlying map, which is injective on any
/// finite subgroup.
#[derive(Debug, Clone)]
pub struct FiniteSymmetryGroup {
    elements: Vec<GroupElement>,
    index: HashMap<AffineDiffeo, usize>,
    table: Vec<Vec<usize>>,
    inverses: Vec<usize>,
    identity: usize,
}

/// Relabelling-invariant data of a group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupInvariants {
    pub order: usize,
    /// hash of the sorted `(element order, number of square roots)` profile
    pub table_hash: String,
    /// sorted `(element order, trace on H¹, trace on H²)` triples
    pub harmonic_signature: Vec<[i64; 3]>,
}

impl FiniteSymmetryGroup {
    /// Build the table; fails unless the list is closed under products and
    /// inverses within `tol` and contains the identity.
    pub fn new(mut elements: Vec<GroupElement>, tol: f64) -> Result<Self> {
        if elements.is_empty() {
            return Err(GeomError::NotAGroup("empty list".into()));
        }
        elements.sort_by(|a, b| a.phi.cmp(&b.phi));
        let mut index = HashMap::with_capacity(elements.len());
        for (i, e) in elements.iter().enumerate() {
            if index.insert(e.phi.clone(), i).is_some() {
                return Err(GeomError::NotAGroup("two elements over the same map".into()));
            }
        }
        let lookup = |x: &GroupElement| -> Result<usize> {
            let i = *index
                .get(&x.phi)
                .ok_or_else(|| GeomError::NotAGroup("not closed: map missing".into()))?;
            let d = elements[i].distance(x);
            if d > tol * (1.0 + x.b.max_abs()) {
                return Err(GeomError::NotAGroup(format!("not closed: field mismatch {d:e}")));
            }
            Ok(i)
        };
        let identity = elements
            .iter()
            .position(|e| e.phi.is_identity())
            .ok_or_else(|| GeomError::NotAGroup("no identity".into()))?;
        if elements[identity].b.max_abs() > tol {
            return Err(GeomError::NotAGroup("identity map carries a field".into()));
        }
        let mut table = vec![vec![0; elements.len()]; elements.len()];
        for (i, a) in elements.iter().enumerate() {
            for (j, b) in elements.iter().enumerate() {
                table[i][j] = lookup(&a.compose(b)?)?;
            }
        }
        let inverses = elements.iter().map(|a| lookup(&a.inverse()?)).collect::<Result<Vec<_>>>()?;
        Ok(FiniteSymmetryGroup { elements, index, table, inverses, identity })
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn table(&self) -> &[Vec<usize>] {
        &self.table
    }

    pub fn inverse_index(&self, i: usize) -> usize {
        self.inverses[i]
    }

    pub fn identity_index(&self) -> usize {
        self.identity
    }

    pub fn grid(&self) -> TorusGrid {
        self.elements[0].grid()
    }

    /// Index of the element equal to `x`, if any.
    pub fn find(&self, x: &GroupElement, tol: f64) -> Option<usize> {
        let i = *self.index.get(&x.phi)?;
        (self.elements[i].distance(x) <= tol * (1.0 + x.b.max_abs())).then_some(i)
    }

    /// `other ⊆ self`.
    pub fn contains_all(&self, other: &Self, tol: f64) -> bool {
        other.elements.iter().all(|x| self.find(x, tol).is_some())
    }

    pub fn same_set(&self, other: &Self, tol: f64) -> bool {
        self.order() == other.order() && self.contains_all(other, tol)
    }

    /// `{h⁻¹ x h}`.
    pub fn conjugated(&self, h: &GroupElement, tol: f64) -> Result<Self> {
        let els = self.elements.iter().map(|x| x.conjugate(h)).collect::<Result<Vec<_>>>()?;
        Self::new(els, tol)
    }

    /// Whether `h⁻¹ self h = other`, stopping at the first element that misses.
    pub fn conjugates_to(&self, h: &GroupElement, other: &Self, tol: f64) -> Result<bool> {
        if self.order() != other.order() {
            return Ok(false);
        }
        for x in &self.elements {
            if other.find(&x.conjugate(h)?, tol).is_none() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn diffeos(&self) -> Vec<AffineDiffeo> {
        self.elements.iter().map(|e| e.phi.clone()).collect()
    }

    pub fn element_order(&self, i: usize) -> usize {
        let mut k = 1;
        let mut p = i;
        while p != self.identity {
            p = self.table[p][i];
            k += 1;
        }
        k
    }

    pub fn invariants(&self) -> GroupInvariants {
        let n = self.grid().dim();
        let orders: Vec<usize> = (0..self.order()).map(|i| self.element_order(i)).collect();
        let mut roots = vec![0usize; self.order()];
        for i in 0..self.order() {
            roots[self.table[i][i]] += 1;
        }
        let mut profile: Vec<(usize, usize)> = orders.iter().copied().zip(roots).collect();
        profile.sort_unstable();
        let bytes = profile.iter().flat_map(|(a, b)| (*a as u64).to_le_bytes().into_iter().chain((*b as u64).to_le_bytes()));
        let mut signature: Vec<[i64; 3]> = self
            .elements
            .iter()
            .zip(&orders)
            .map(|(e, &o)| {
                let m = e.phi.matrix();
                let tr1: i64 = (0..n).map(|i| m[i][i]).sum();
                let tr2: i64 = multi_indices(n, 2)
                    .iter()
                    .map(|ij| m[ij[0]][ij[0]] * m[ij[1]][ij[1]] - m[ij[0]][ij[1]] * m[ij[1]][ij[0]])
                    .sum();
                [o as i64, tr1, tr2]
            })
            .collect();
        signature.sort_unstable();
        GroupInvariants { order: self.order(), table_hash: format!("{:016x}", fnv1a(bytes)), harmonic_signature: signature }
    }
}

fn metric_scale(v: &GenMetric, t: &TwistData) -> f64 {
    1.0 + v.g.max_abs() + v.omega.max_abs() + t.h().max_abs()
}

/// Every `(φ, φ*ω − ω)` with `φ` in the pool that preserves `V` and the twist.
pub fn isometry_group(t: &TwistData, v: &GenMetric, pool: &[AffineDiffeo], tol: f64) -> Result<FiniteSymmetryGroup> {
    if t.is_odd() || v.is_odd() {
        return Err(GeomError::KindMismatch);
    }
    let scale = metric_scale(v, t);
    let mut members = Vec::new();
    for phi in pool {
        if v.g.pullback(phi)?.minus(&v.g).max_abs() > tol * scale {
            continue;
        }
        let gel = lift_isometry(v, phi)?;
        if v.isometry_defect(t, &gel)?.max() <= tol * scale {
            members.push(gel);
        }
    }
    FiniteSymmetryGroup::new(members, tol)
}

/// `Isom(g)` within the pool as the pure pairs `(φ, 0)`.
pub fn metric_isometry_group(v: &GenMetric, pool: &[AffineDiffeo], tol: f64) -> Result<FiniteSymmetryGroup> {
    let grid = v.grid();
    let scale = 1.0 + v.g.max_abs();
    let mut members = Vec::new();
    for phi in pool {
        if v.g.pullback(phi)?.minus(&v.g).max_abs() <= tol * scale {
            members.push(GroupElement::diffeo(phi.clone(), grid, false)?);
        }
    }
    FiniteSymmetryGroup::new(members, tol)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StratumLabel {
    pub class: usize,
    #[serde(flatten)]
    pub invariants: GroupInvariants,
}

/// B-field shifts `(id, c·cos(k·x + θ) dx^I)` with `|k_i| ≤ 2`, `θ ∈ {0, π/2}`
/// and `c ∈ {±1, ±½}`, preceded by the pure diffeomorphisms `(ψ, 0)`.
pub fn default_conjugators(grid: TorusGrid, diffeos: &[AffineDiffeo]) -> Result<Vec<GroupElement>> {
    let n = grid.dim();
    let mut out = diffeos
        .iter()
        .map(|p| GroupElement::diffeo(p.clone(), grid, false))
        .collect::<Result<Vec<_>>>()?;
    let mut ks: Vec<Vec<i64>> = (0..5usize.pow(n as u32))
        .map(|mut c| {
            (0..n)
                .map(|_| {
                    let v = (c % 5) as i64 - 2;
                    c /= 5;
                    v
                })
                .collect()
        })
        .filter(|k: &Vec<i64>| k.iter().find(|&&v| v != 0).map_or(true, |&v| v > 0))
        .collect();
    ks.sort();
    for comp in multi_indices(n, 2) {
        for k in &ks {
            for phase in [0.0, std::f64::consts::FRAC_PI_2] {
                if k.iter().all(|&v| v == 0) && phase != 0.0 {
                    continue;
                }
                for amp in [1.0, -1.0, 0.5, -0.5] {
                    let b = FourierModeSpec::new(2).with(&comp, k, amp, phase).sample(grid)?;
                    out.push(GroupElement::b_field(b)?);
                }
            }
        }
    }
    Ok(out)
}

/// Partition groups into conjugacy classes under the given conjugators.
pub fn conjugacy_classify(groups: &[FiniteSymmetryGroup], conjugators: &[GroupElement], tol: f64) -> Result<Vec<StratumLabel>> {
    let mut reps: Vec<(usize, GroupInvariants)> = Vec::new();
    let mut labels = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let inv = g.invariants();
        let mut class = None;
        'reps: for (c, (r, rinv)) in reps.iter().enumerate() {
            if *rinv != inv {
                continue;
            }
            let rep = &groups[*r];
            let id = GroupElement::identity(g.grid(), false);
            for h in std::iter::once(&id).chain(conjugators) {
                if g.conjugates_to(h, rep, tol)? {
                    class = Some(c);
                    break 'reps;
                }
            }
        }
        let class = class.unwrap_or_else(|| {
            reps.push((i, inv.clone()));
            reps.len() - 1
        });
        labels.push(StratumLabel { class, invariants: inv });
    }
    Ok(labels)
}

/// The conjugator `C = C₁ + C₂` and its posterior checks.
#[derive(Debug, Clone)]
pub struct StratumConjugator {
    pub c: KForm,
    pub c1: KForm,
    pub c2: KForm,
    pub averaged_twist: KForm,
    pub report: ConjugatorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugatorReport {
    /// `‖dC₁ − (H − H′)‖`
    pub exactness_residual: f64,
    /// largest field left on a conjugated element
    pub pure_defect: f64,
    /// conjugated maps equal `{φ ∈ Π(G) : φ*(ω − C) = ω − C}`
    pub matches_fixed_set: bool,
    /// membership of the conjugated elements for the twist `H − dC`
    pub membership_defect: f64,
    pub pass: bool,
}

/// Hodge-theoretic conjugator turning an isometry group into pure pairs.
///
/// `H′` is the average of `H` over the maps of the group, `C₁ = d*G(H − H′)`
/// and `C₂` is the closed part of `ω − C₁`.
pub fn stratum_conjugator(
    t: &TwistData,
    v: &GenMetric,
    group: &FiniteSymmetryGroup,
    hodge: &HodgeContext,
    tol: f64,
) -> Result<StratumConjugator> {
    if t.is_odd() || v.is_odd() {
        return Err(GeomError::KindMismatch);
    }
    let grid = v.grid();
    let n = grid.dim();
    let scale = metric_scale(v, t);
    let h = t.h();
    let mut averaged = KForm::zeros(grid, 3);
    for e in group.elements() {
        averaged.axpy(1.0, &h.pullback(&e.phi)?);
    }
    let averaged = averaged.scaled(1.0 / group.order() as f64);
    let (c1, exactness_residual) = if n >= 3 {
        let rhs = h.minus(&averaged);
        if hodge.harmonic_projection(&rhs)?.norm() > tol * scale {
            return Err(GeomError::Uncertified("the averaged twist differs from H by a non-exact form".into()));
        }
        let c1 = hodge.codiff(&hodge.green(&rhs)?)?;
        let res = d_any(&c1).minus(&rhs).norm();
        if res > 1e-9 * scale {
            return Err(GeomError::Uncertified(format!("dC₁ misses H − H′ by {res:e}")));
        }
        (c1, res)
    } else {
        (KForm::zeros(grid, 2), 0.0)
    };
    let rest = v.omega.minus(&c1);
    let parts = hodge.hodge_decompose(&rest)?;
    let c2 = parts.exact.plus(&parts.harmonic);
    let c = c1.plus(&c2);
    let conj = GroupElement::b_field(c.clone())?;
    let conjugated = group.conjugated(&conj, tol)?;
    let pure_defect = conjugated.elements().iter().map(|e| e.b.max_abs()).fold(0.0, f64::max);
    let target = v.omega.minus(&c);
    let mut fixed = Vec::new();
    for e in group.elements() {
        if target.pullback(&e.phi)?.minus(&target).max_abs() <= tol * scale {
            fixed.push(e.phi.clone());
        }
    }
    let matches_fixed_set = fixed == conjugated.diffeos();
    let shifted = TwistData::exact(h.minus(&d_any(&c)))?;
    let membership_defect = conjugated
        .elements()
        .iter()
        .map(|e| e.membership_defect(&shifted).map(|m| m.max()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let pass = pure_defect <= tol * scale && matches_fixed_set && membership_defect <= tol * scale;
    Ok(StratumConjugator {
        c,
        c1,
        c2,
        averaged_twist: averaged,
        report: ConjugatorReport { exactness_residual, pure_defect, matches_fixed_set, membership_defect, pass },
    })
}

/// `(ψ, C)⁻¹ Isom_H(V) (ψ, C)` against `Isom_{ψ*H − dC}(V·(ψ, C))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugationCheck {
    pub lhs_order: usize,
    pub rhs_order: usize,
    pub equal: bool,
}

pub fn conjugation_identity_check(
    t: &TwistData,
    v: &GenMetric,
    conj: &GroupElement,
    opts: &PoolOptions,
) -> Result<ConjugationCheck> {
    let grid = v.grid();
    let pool = candidate_pool(grid, &v.g, opts)?;
    let lhs = isometry_group(t, v, &pool, opts.tolerance)?.conjugated(conj, opts.tolerance)?;
    let moved = v.act(conj)?;
    let twist = TwistData::exact(t.h().pullback(&conj.phi)?.minus(&d_any(&conj.b)))?;
    let pool2 = candidate_pool(grid, &moved.g, opts)?;
    let rhs = isometry_group(&twist, &moved, &pool2, opts.tolerance)?;
    Ok(ConjugationCheck { lhs_order: lhs.order(), rhs_order: rhs.order(), equal: lhs.same_set(&rhs, opts.tolerance) })
}

/// A `G`-invariant perturbation breaking some element of `G′`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub h: SymTensor2,
    pub omega_h: KForm,
    /// lattice mode the search started from
    pub mode: String,
    pub certificate: Vec<CertificateLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateLine {
    pub t: f64,
    pub isom_order: usize,
    pub contains_small: bool,
    pub contains_large: bool,
}

#[derive(Debug, Clone)]
pub enum PerturbationOutcome {
    Found(Perturbation),
    NotFound { lattice_bound: i64, candidates: usize },
}

const LATTICE_BOUND: i64 = 2;

fn lattice_modes(grid: TorusGrid) -> Vec<(String, GMTangent)> {
    let n = grid.dim();
    let ks: Vec<Vec<i64>> = {
        let side = (2 * LATTICE_BOUND + 1) as usize;
        let mut v: Vec<Vec<i64>> = (0..side.pow(n as u32))
            .map(|mut c| {
                (0..n)
                    .map(|_| {
                        let x = (c % side) as i64 - LATTICE_BOUND;
                        c /= side;
                        x
                    })
                    .collect()
            })
            .filter(|k: &Vec<i64>| k.iter().find(|&&x| x != 0).map_or(true, |&x| x > 0))
            .collect();
        v.sort();
        v
    };
    let phases = [(0.0, "cos"), (std::f64::consts::FRAC_PI_2, "sin")];
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            for k in &ks {
                for (phase, tag) in phases {
                    let mode = FourierModeSpec::new(0).with(&[], k, 1.0, phase);
                    let Ok(f) = mode.sample(grid) else { continue };
                    let mut t = GMTangent::zeros(grid, false);
                    t.g.get_mut(i, j).copy_from_slice(f.component(0));
                    out.push((format!("g[{i}{j}] {tag} {k:?}"), t));
                }
            }
        }
    }
    for comp in multi_indices(n, 2) {
        for k in &ks {
            for (phase, tag) in phases {
                let Ok(w) = FourierModeSpec::new(2).with(&comp, k, 1.0, phase).sample(grid) else { continue };
                let mut t = GMTangent::zeros(grid, false);
                t.omega = w;
                out.push((format!("omega{comp:?} {tag} {k:?}"), t));
            }
        }
    }
    out
}

/// Search the mode lattice for a `G`-invariant `(h, ω_h)` that some element
/// of `G′` does not preserve, certified at `t ∈ {1e−2, 1e−3}`.
pub fn invariant_perturbation(
    twist: &TwistData,
    v: &GenMetric,
    small: &FiniteSymmetryGroup,
    large: &FiniteSymmetryGroup,
    tol: f64,
) -> Result<PerturbationOutcome> {
    let modes = lattice_modes(v.grid());
    let candidates = modes.len();
    if small.same_set(large, tol) {
        return Ok(PerturbationOutcome::NotFound { lattice_bound: LATTICE_BOUND, candidates: 0 });
    }
    let pool = large.diffeos();
    for (label, mode) in modes {
        let mut avg = mode.zeroed();
        for e in small.elements() {
            avg.axpy(1.0, &mode.push(e)?);
        }
        let avg = avg.scaled(1.0 / small.order() as f64);
        if avg.max_abs() < 1e-12 {
            continue;
        }
        let mut breaks = false;
        for e in large.elements() {
            if avg.push(e)?.minus(&avg).max_abs() > 1e-9 {
                breaks = true;
                break;
            }
        }
        if !breaks {
            continue;
        }
        let mut certificate = Vec::new();
        for t in [1e-2, 1e-3] {
            let mut g = v.g.clone();
            g.axpy(t, &avg.g);
            let mut omega = v.omega.clone();
            omega.axpy(t, &avg.omega);
            let vt = GenMetric::new(g, omega, None)?;
            let iso = isometry_group(twist, &vt, &pool, tol)?;
            certificate.push(CertificateLine {
                t,
                isom_order: iso.order(),
                contains_small: iso.contains_all(small, tol),
                contains_large: iso.contains_all(large, tol),
            });
        }
        if certificate.iter().all(|c| c.contains_small && !c.contains_large) {
            return Ok(PerturbationOutcome::Found(Perturbation { h: avg.g, omega_h: avg.omega, mode: label, certificate }));
        }
    }
    Ok(PerturbationOutcome::NotFound { lattice_bound: LATTICE_BOUND, candidates })
}

/// One `(T, V)` sample of a stratification study.
#[derive(Debug, Clone)]
pub struct StrataSample {
    pub name: String,
    pub twist: TwistData,
    pub metric: GenMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionLine {
    pub name: String,
    pub isom_order: usize,
    pub isom_class_label: usize,
    pub metric_isom_order: usize,
    pub metric_class_label: usize,
    pub conjugator_found: bool,
    /// metric stratum the generalized stratum lies over
    pub projection_class: usize,
    pub subgroup_of_metric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuliReport {
    pub lines: Vec<ProjectionLine>,
    /// generalized class → metric classes it was seen over
    pub projection: BTreeMap<usize, Vec<usize>>,
    /// some metric stratum carries more than one generalized stratum
    pub strictly_finer: bool,
    /// every generalized stratum lies over a single metric stratum
    pub well_defined: bool,
}

pub fn moduli_projection_report(samples: &[StrataSample], opts: &PoolOptions) -> Result<ModuliReport> {
    let tol = opts.tolerance;
    let mut iso_groups = Vec::new();
    let mut metric_groups = Vec::new();
    let mut found = Vec::new();
    let mut subgroup = Vec::new();
    let mut diffeos: Vec<AffineDiffeo> = Vec::new();
    for s in samples {
        let grid = s.metric.grid();
        let pool = candidate_pool(grid, &s.metric.g, opts)?;
        let iso = isometry_group(&s.twist, &s.metric, &pool, tol)?;
        let metric = metric_isometry_group(&s.metric, &pool, tol)?;
        let hodge = if s.metric.g.minus(&SymTensor2::identity(grid)).max_abs() == 0.0 {
            HodgeContext::flat(grid)
        } else {
            HodgeContext::new(s.metric.g.clone())?
        };
        let conj = stratum_conjugator(&s.twist, &s.metric, &iso, &hodge, tol);
        found.push(matches!(&conj, Ok(c) if c.report.pass));
        subgroup.push(iso.elements().iter().all(|e| metric.find(&GroupElement { b: e.b.zeroed(), ..e.clone() }, tol).is_some()));
        for p in &pool {
            if p.shift().iter().all(|&x| x == 0) && !diffeos.contains(p) {
                diffeos.push(p.clone());
            }
        }
        iso_groups.push(iso);
        metric_groups.push(metric);
    }
    diffeos.sort();
    let grid = samples.first().map(|s| s.metric.grid()).ok_or_else(|| GeomError::Shape("no samples".into()))?;
    let conjugators = default_conjugators(grid, &diffeos)?;
    let iso_labels = conjugacy_classify(&iso_groups, &conjugators, tol)?;
    let diffeo_only: Vec<GroupElement> = conjugators.iter().filter(|c| c.b.max_abs() == 0.0).cloned().collect();
    let metric_labels = conjugacy_classify(&metric_groups, &diffeo_only, tol)?;
    let mut projection: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut lines = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let (gc, mc) = (iso_labels[i].class, metric_labels[i].class);
        let entry = projection.entry(gc).or_default();
        if !entry.contains(&mc) {
            entry.push(mc);
            entry.sort_unstable();
        }
        lines.push(ProjectionLine {
            name: s.name.clone(),
            isom_order: iso_groups[i].order(),
            isom_class_label: gc,
            metric_isom_order: metric_groups[i].order(),
            metric_class_label: mc,
            conjugator_found: found[i],
            projection_class: mc,
            subgroup_of_metric: subgroup[i],
        });
    }
    let mut per_metric: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for l in &lines {
        let e = per_metric.entry(l.metric_class_label).or_default();
        if !e.contains(&l.isom_class_label) {
            e.push(l.isom_class_label);
        }
    }
    Ok(ModuliReport {
        strictly_finer: per_metric.values().any(|v| v.len() > 1),
        well_defined: projection.values().all(|v| v.len() == 1),
        projection,
        lines,
    })
}
