//! Symmetry groups of the twisted algebroids and their Lie algebras of derivations.

use serde::{Deserialize, Serialize};

use crate::courant::{ExactSection, OddSection, TwistData};
use crate::error::{GeomError, Result};
use crate::grid::calculus::{d_any, interior_any, wedge_any};
use crate::grid::{
    grad_form, lie_bracket, lie_form, mul_form, same_grid, AffineDiffeo, Field, FourierModeSpec,
    KForm, Pullback, TorusGrid, VectorField,
};
use crate::hodge::HodgeContext;

/// An orthogonal, anchor-preserving symmetry `(φ, B)` or `(φ, (B, A))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub phi: AffineDiffeo,
    pub b: KForm,
    pub a: Option<KForm>,
}

/// Residuals of the membership equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MembershipDefect {
    /// `‖φ*H − H − dB‖`, plus `A∧(2F + dA)` in the odd case.
    pub three_form: f64,
    /// `‖φ*F − F − dA‖` (odd case only).
    pub two_form: Option<f64>,
}

impl MembershipDefect {
    pub fn max(&self) -> f64 {
        self.three_form.max(self.two_form.unwrap_or(0.0))
    }
}

fn check_kind(t: &TwistData, odd: bool) -> Result<()> {
    if t.is_odd() == odd {
        Ok(())
    } else {
        Err(GeomError::KindMismatch)
    }
}

fn check_degree(op: &'static str, w: &KForm, degree: usize) -> Result<()> {
    if w.degree() == degree {
        Ok(())
    } else {
        Err(GeomError::Degree { op, degree: w.degree() })
    }
}

impl GroupElement {
    pub fn new(phi: AffineDiffeo, b: KForm, a: Option<KForm>) -> Result<Self> {
        check_degree("group element", &b, 2)?;
        if let Some(a) = &a {
            check_degree("group element", a, 1)?;
            same_grid(a.grid(), b.grid())?;
        }
        if phi.dim() != b.grid().dim() {
            return Err(GeomError::GridMismatch);
        }
        Ok(GroupElement { phi, b, a })
    }

    pub fn identity(grid: TorusGrid, odd: bool) -> Self {
        GroupElement {
            phi: AffineDiffeo::identity(grid),
            b: KForm::zeros(grid, 2),
            a: odd.then(|| KForm::zeros(grid, 1)),
        }
    }

    pub fn diffeo(phi: AffineDiffeo, grid: TorusGrid, odd: bool) -> Result<Self> {
        Self::new(phi, KForm::zeros(grid, 2), odd.then(|| KForm::zeros(grid, 1)))
    }

    pub fn b_field(b: KForm) -> Result<Self> {
        let grid = b.grid();
        Self::new(AffineDiffeo::identity(grid), b, None)
    }

    /// `(id, (B, A))`.
    pub fn odd_field(b: KForm, a: KForm) -> Result<Self> {
        let grid = b.grid();
        Self::new(AffineDiffeo::identity(grid), b, Some(a))
    }

    /// The member of the symmetry group of `t` covering `φ` with coexact fields.
    ///
    /// Fails with [`GeomError::NotAGroup`] when `φ` does not preserve the
    /// cohomology classes of the twist.
    pub fn lift(t: &TwistData, hodge: &HodgeContext, phi: &AffineDiffeo) -> Result<Self> {
        let grid = t.grid();
        let solve = |rhs: &KForm| -> Result<KForm> {
            let scale = 1.0 + rhs.norm();
            if hodge.harmonic_projection(rhs)?.norm() > 1e-9 * scale {
                return Err(GeomError::NotAGroup("the map moves the twist class".into()));
            }
            hodge.green(&hodge.codiff(rhs)?)
        };
        let dh = t.h().pullback(phi)?.minus(t.h());
        match t.f() {
            None => Self::new(phi.clone(), solve(&dh)?, None),
            Some(f) => {
                let a = solve(&f.pullback(phi)?.minus(f))?;
                let twice = f.scaled(2.0).plus(&d_any(&a));
                let rhs = dh.plus(&wedge_any(&a, &twice));
                let b = if rhs.component_count() == 0 {
                    KForm::zeros(grid, 2)
                } else {
                    solve(&rhs)?
                };
                Self::new(phi.clone(), b, Some(a))
            }
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.b.grid()
    }

    pub fn is_odd(&self) -> bool {
        self.a.is_some()
    }

    fn same_kind(&self, other: &Self) -> Result<()> {
        same_grid(self.grid(), other.grid())?;
        if self.is_odd() != other.is_odd() {
            return Err(GeomError::KindMismatch);
        }
        Ok(())
    }

    /// `(φ,B)(ψ,B′) = (φψ, ψ*B + B′)`; odd: `(φψ, (ψ*B + B′ + ψ*A∧A′, ψ*A + A′))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.same_kind(other)?;
        let psi = &other.phi;
        let phi = self.phi.compose(psi);
        let mut b = self.b.pullback(psi)?.plus(&other.b);
        let a = match (&self.a, &other.a) {
            (Some(a1), Some(a2)) => {
                let pulled = a1.pullback(psi)?;
                b.axpy(1.0, &wedge_any(&pulled, a2));
                Some(pulled.plus(a2))
            }
            _ => None,
        };
        Ok(GroupElement { phi, b, a })
    }

    /// `(φ⁻¹, −(φ⁻¹)*B[, −(φ⁻¹)*A])`.
    pub fn inverse(&self) -> Result<Self> {
        let inv = self.phi.inverse();
        Ok(GroupElement {
            b: self.b.pullback(&inv)?.scaled(-1.0),
            a: self
                .a
                .as_ref()
                .map(|a| a.pullback(&inv).map(|p| p.scaled(-1.0)))
                .transpose()?,
            phi: inv,
        })
    }

    /// `h⁻¹ · self · h`.
    pub fn conjugate(&self, h: &Self) -> Result<Self> {
        h.inverse()?.compose(self)?.compose(h)
    }

    /// `u + α ↦ φ_*u + φ_*(α + i_uB)`.
    pub fn act_exact(&self, s: &ExactSection) -> Result<ExactSection> {
        if self.is_odd() {
            return Err(GeomError::KindMismatch);
        }
        same_grid(self.grid(), s.grid())?;
        let alpha = s.alpha.plus(&interior_any(&s.u, &self.b));
        Ok(ExactSection {
            u: s.u.pushforward(&self.phi)?,
            alpha: alpha.pushforward(&self.phi)?,
        })
    }

    /// `u + f + α ↦ φ_*(u + (f + i_uA) + (α + i_uB − 2fA − (i_uA)A))`.
    pub fn act_odd(&self, s: &OddSection) -> Result<OddSection> {
        let a = self.a.as_ref().ok_or(GeomError::KindMismatch)?;
        same_grid(self.grid(), s.grid())?;
        let iua = interior_any(&s.u, a).as_scalar()?;
        let f = s.f.plus(&iua);
        let mut alpha = s.alpha.plus(&interior_any(&s.u, &self.b));
        alpha.axpy(-2.0, &mul_form(&s.f, a)?);
        alpha.axpy(-1.0, &mul_form(&iua, a)?);
        Ok(OddSection {
            u: s.u.pushforward(&self.phi)?,
            f: f.pushforward(&self.phi)?,
            alpha: alpha.pushforward(&self.phi)?,
        })
    }

    pub fn membership_defect(&self, t: &TwistData) -> Result<MembershipDefect> {
        check_kind(t, self.is_odd())?;
        same_grid(self.grid(), t.grid())?;
        let mut r = t.h().pullback(&self.phi)?.minus(t.h());
        r.axpy(-1.0, &d_any(&self.b));
        match (t.f(), &self.a) {
            (Some(f), Some(a)) => {
                let da = d_any(a);
                r.axpy(1.0, &wedge_any(a, &f.scaled(2.0).plus(&da)));
                let r2 = f.pullback(&self.phi)?.minus(f).minus(&da);
                Ok(MembershipDefect {
                    three_form: r.norm(),
                    two_form: Some(r2.norm()),
                })
            }
            _ => Ok(MembershipDefect {
                three_form: r.norm(),
                two_form: None,
            }),
        }
    }

    /// Largest pointwise difference between two elements over the same map, or `∞`.
    pub fn distance(&self, other: &Self) -> f64 {
        if self.phi != other.phi || self.is_odd() != other.is_odd() {
            return f64::INFINITY;
        }
        let da = match (&self.a, &other.a) {
            (Some(x), Some(y)) => x.minus(y).max_abs(),
            _ => 0.0,
        };
        self.b.minus(&other.b).max_abs().max(da)
    }
}

/// JSON form of a group element; translations are in grid units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupElementSpec {
    pub matrix: Vec<Vec<i64>>,
    pub translation: Vec<i64>,
    #[serde(rename = "B")]
    pub b: FourierModeSpec,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<FourierModeSpec>,
}

impl GroupElementSpec {
    pub fn build(&self, grid: TorusGrid) -> Result<GroupElement> {
        let phi = AffineDiffeo::new(grid, self.matrix.clone(), self.translation.clone())?;
        let a = self.a.as_ref().map(|a| a.sample(grid)).transpose()?;
        GroupElement::new(phi, self.b.sample(grid)?, a)
    }
}

/// An infinitesimal symmetry `(u, b)` or `(u, (b, a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub u: VectorField,
    pub b: KForm,
    pub a: Option<KForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivationDefect {
    /// `‖d(i_uH − b)‖`, or `‖d(i_uH − b) + 2(i_uF + a)∧F‖`.
    pub three_form: f64,
    /// `‖d(i_uF − a)‖` (odd case only).
    pub two_form: Option<f64>,
}

impl DerivationDefect {
    pub fn max(&self) -> f64 {
        self.three_form.max(self.two_form.unwrap_or(0.0))
    }
}

/// Harmonic pairings of a derivation: `b₂` numbers, then `b₁` more in the odd case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactnessDefect(pub Vec<f64>);

impl ExactnessDefect {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `D = exact + (0, (harmonic_b, harmonic_a))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivationSplit {
    pub exact: Derivation,
    pub harmonic_b: KForm,
    pub harmonic_a: Option<KForm>,
}

const DERIVATION_TOL: f64 = 1e-9;

impl Field for Derivation {
    fn grid(&self) -> TorusGrid {
        self.u.grid()
    }
    fn parts(&self) -> Vec<&[f64]> {
        let mut p = self.u.parts();
        p.extend(self.b.parts());
        if let Some(a) = &self.a {
            p.extend(a.parts());
        }
        p
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.u.parts_mut();
        p.extend(self.b.parts_mut());
        if let Some(a) = &mut self.a {
            p.extend(a.parts_mut());
        }
        p
    }
}

impl Derivation {
    pub fn new(u: VectorField, b: KForm, a: Option<KForm>) -> Result<Self> {
        check_degree("derivation", &b, 2)?;
        same_grid(u.grid(), b.grid())?;
        if let Some(a) = &a {
            check_degree("derivation", a, 1)?;
            same_grid(u.grid(), a.grid())?;
        }
        Ok(Derivation { u, b, a })
    }

    pub fn zeros(grid: TorusGrid, odd: bool) -> Self {
        Derivation {
            u: VectorField::zeros(grid),
            b: KForm::zeros(grid, 2),
            a: odd.then(|| KForm::zeros(grid, 1)),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.u.grid()
    }

    pub fn is_odd(&self) -> bool {
        self.a.is_some()
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        same_grid(self.grid(), other.grid())?;
        let a = match (&self.a, &other.a) {
            (Some(x), Some(y)) => Some(x.plus(y)),
            (None, None) => None,
            _ => return Err(GeomError::KindMismatch),
        };
        Ok(Derivation {
            u: self.u.plus(&other.u),
            b: self.b.plus(&other.b),
            a,
        })
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.plus(&other.scaled(-1.0))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Derivation {
            u: self.u.scaled(c),
            b: self.b.scaled(c),
            a: self.a.as_ref().map(|a| a.scaled(c)),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let a = self.a.as_ref().map_or(0.0, |a| a.max_abs());
        self.u.max_abs().max(self.b.max_abs()).max(a)
    }

    /// `(i_uH − b, i_uF − a)`.
    fn kappa(&self, t: &TwistData) -> (KForm, Option<KForm>) {
        let beta = interior_any(&self.u, t.h()).minus(&self.b);
        let alpha = match (t.f(), &self.a) {
            (Some(f), Some(a)) => Some(interior_any(&self.u, f).minus(a)),
            _ => None,
        };
        (beta, alpha)
    }

    pub fn derivation_defect(&self, t: &TwistData) -> Result<DerivationDefect> {
        check_kind(t, self.is_odd())?;
        same_grid(self.grid(), t.grid())?;
        let (beta, alpha) = self.kappa(t);
        let mut r = d_any(&beta);
        match (t.f(), &self.a, alpha) {
            (Some(f), Some(a), Some(alpha)) => {
                let s = interior_any(&self.u, f).plus(a);
                r.axpy(2.0, &wedge_any(&s, f));
                Ok(DerivationDefect {
                    three_form: r.norm(),
                    two_form: Some(d_any(&alpha).norm()),
                })
            }
            _ => Ok(DerivationDefect {
                three_form: r.norm(),
                two_form: None,
            }),
        }
    }

    /// Same as [`derivation_defect`](Self::derivation_defect), with the 3-form
    /// condition in the form `d(i_uH − b) − 2(i_uF − a)∧F`.
    pub fn derivation_defect_linearized(&self, t: &TwistData) -> Result<DerivationDefect> {
        let mut out = self.derivation_defect(t)?;
        if let (Some(f), Some(a)) = (t.f(), &self.a) {
            let (beta, _) = self.kappa(t);
            let mut r = d_any(&beta);
            let s = interior_any(&self.u, f).minus(a);
            r.axpy(-2.0, &wedge_any(&s, f));
            out.three_form = r.norm();
        }
        Ok(out)
    }

    fn require_derivation(&self, t: &TwistData) -> Result<()> {
        let defect = self.derivation_defect(t)?.max();
        if defect > DERIVATION_TOL * (1.0 + self.max_abs()) {
            return Err(GeomError::NotDerivation(defect));
        }
        Ok(())
    }

    /// Commutator `([u,v], L_u c − L_v b − 2a∧e, L_u e − L_v a)`.
    pub fn bracket(&self, other: &Self) -> Result<Self> {
        same_grid(self.grid(), other.grid())?;
        let u = lie_bracket(&self.u, &other.u)?;
        let mut b = lie_form(&self.u, &other.b)?;
        b.axpy(-1.0, &lie_form(&other.u, &self.b)?);
        let a = match (&self.a, &other.a) {
            (Some(a1), Some(a2)) => {
                b.axpy(-2.0, &wedge_any(a1, a2));
                let mut a = lie_form(&self.u, a2)?;
                a.axpy(-1.0, &lie_form(&other.u, a1)?);
                Some(a)
            }
            (None, None) => None,
            _ => return Err(GeomError::KindMismatch),
        };
        Ok(Derivation { u, b, a })
    }

    /// Harmonic pairings `I(κ)` (exact) or `I(κ₂κ₁)` (odd) against the bases of `hodge`.
    pub fn exactness_defect(&self, t: &TwistData, hodge: &HodgeContext) -> Result<ExactnessDefect> {
        self.require_derivation(t)?;
        let (beta, alpha) = self.kappa(t);
        match (alpha, t.f()) {
            (None, _) => Ok(ExactnessDefect(hodge.harmonic_coordinates(&beta)?)),
            (Some(alpha), Some(f)) => {
                let potential = green_codiff(hodge, &alpha)?.as_scalar()?;
                let first = beta.minus(&mul_form(&potential, f)?.scaled(2.0));
                let mut out = hodge.harmonic_coordinates(&first)?;
                out.extend(hodge.harmonic_coordinates(&alpha)?);
                Ok(ExactnessDefect(out))
            }
            (Some(_), None) => Err(GeomError::KindMismatch),
        }
    }

    /// Split off the harmonic part so that the remainder is exact.
    pub fn split(&self, t: &TwistData, hodge: &HodgeContext) -> Result<DerivationSplit> {
        self.require_derivation(t)?;
        let (beta, alpha) = self.kappa(t);
        match (alpha, t.f()) {
            (None, _) => {
                let h = hodge.harmonic_projection(&beta)?;
                Ok(DerivationSplit {
                    exact: Derivation {
                        u: self.u.clone(),
                        b: self.b.plus(&h),
                        a: None,
                    },
                    harmonic_b: h.scaled(-1.0),
                    harmonic_a: None,
                })
            }
            (Some(alpha), Some(f)) => {
                let potential = green_codiff(hodge, &alpha)?.as_scalar()?;
                let h1 = hodge.harmonic_projection(&alpha)?;
                let eta = green_codiff(hodge, &wedge_any(&h1, f))?;
                let rest = beta
                    .minus(&mul_form(&potential, f)?.scaled(2.0))
                    .minus(&eta.scaled(2.0));
                let h2 = hodge.harmonic_projection(&rest)?;
                let lift_b = h2.plus(&eta.scaled(2.0));
                let a = self.a.as_ref().expect("odd kind checked");
                Ok(DerivationSplit {
                    exact: Derivation {
                        u: self.u.clone(),
                        b: self.b.plus(&lift_b),
                        a: Some(a.plus(&h1)),
                    },
                    harmonic_b: lift_b.scaled(-1.0),
                    harmonic_a: Some(h1.scaled(-1.0)),
                })
            }
            (Some(_), None) => Err(GeomError::KindMismatch),
        }
    }
}

/// `G d* w`.
fn green_codiff(hodge: &HodgeContext, w: &KForm) -> Result<KForm> {
    hodge.green(&hodge.codiff(w)?)
}

/// `ι_e(u + α) = (u, i_uH − dα)`.
pub fn iota_e_exact(t: &TwistData, s: &ExactSection) -> Result<Derivation> {
    check_kind(t, false)?;
    same_grid(t.grid(), s.grid())?;
    let b = interior_any(&s.u, t.h()).minus(&d_any(&s.alpha));
    Derivation::new(s.u.clone(), b, None)
}

/// `(u, b) ↦ u + G d*(i_uH − b)`.
pub fn iota_e_inv_exact(t: &TwistData, hodge: &HodgeContext, d: &Derivation) -> Result<ExactSection> {
    check_kind(t, false)?;
    let (beta, _) = d.kappa(t);
    ExactSection::new(d.u.clone(), green_codiff(hodge, &beta)?)
}

/// `ι_e(u + f + α) = (u, (i_uH − 2fF − dα, i_uF − df))`.
pub fn iota_e_odd(t: &TwistData, s: &OddSection) -> Result<Derivation> {
    iota_e_odd_signed(t, s, -2.0)
}

/// The variant with `+2fF` in the 2-form slot; its images are derivations only when `df∧F = 0`.
pub fn iota_e_odd_plus_sign(t: &TwistData, s: &OddSection) -> Result<Derivation> {
    iota_e_odd_signed(t, s, 2.0)
}

fn iota_e_odd_signed(t: &TwistData, s: &OddSection, sign: f64) -> Result<Derivation> {
    check_kind(t, true)?;
    same_grid(t.grid(), s.grid())?;
    let f = t.f().expect("odd kind checked");
    let mut b = interior_any(&s.u, t.h()).minus(&d_any(&s.alpha));
    b.axpy(sign, &mul_form(&s.f, f)?);
    let a = interior_any(&s.u, f).minus(&grad_form(&s.f));
    Derivation::new(s.u.clone(), b, Some(a))
}

/// Right inverse of [`iota_e_odd`]: `f = G d*(i_uF − a)`, `α = G d*(i_uH − b − 2fF)`.
pub fn iota_e_inv_odd(t: &TwistData, hodge: &HodgeContext, d: &Derivation) -> Result<OddSection> {
    check_kind(t, true)?;
    let f = t.f().expect("odd kind checked");
    let (beta, alpha) = d.kappa(t);
    let alpha = alpha.ok_or(GeomError::KindMismatch)?;
    let potential = green_codiff(hodge, &alpha)?.as_scalar()?;
    let rhs = beta.minus(&mul_form(&potential, f)?.scaled(2.0));
    OddSection::new(d.u.clone(), potential, green_codiff(hodge, &rhs)?)
}

/// `κ₂(β, α) = (β − 2 G d*(α) F, α)`.
pub fn kappa2(t: &TwistData, hodge: &HodgeContext, beta: &KForm, alpha: &KForm) -> Result<(KForm, KForm)> {
    let f = t.f().ok_or(GeomError::KindMismatch)?;
    let potential = green_codiff(hodge, alpha)?.as_scalar()?;
    Ok((beta.minus(&mul_form(&potential, f)?.scaled(2.0)), alpha.clone()))
}

/// One candidate right inverse of `κ₂` and how far `κ₂ ∘ R` is from the identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RightInverseReading {
    pub reading: String,
    pub formula: String,
    pub well_typed: bool,
    pub residual: Option<f64>,
}

/// Evaluate the candidate right inverses of `κ₂` on `(γ, δ)`.
pub fn kappa2_right_inverse_report(
    t: &TwistData,
    hodge: &HodgeContext,
    gamma: &KForm,
    delta: &KForm,
) -> Result<Vec<RightInverseReading>> {
    let f = t.f().ok_or(GeomError::KindMismatch)?;
    check_degree("kappa2", gamma, 2)?;
    check_degree("kappa2", delta, 1)?;
    let correction = mul_form(&green_codiff(hodge, delta)?.as_scalar()?, f)?.scaled(2.0);
    let residual = |b: KForm| -> Result<f64> {
        let (x, y) = kappa2(t, hodge, &b, delta)?;
        Ok(x.minus(gamma).norm() + y.minus(delta).norm())
    };
    // G d*(γ) is a 1-form, so G d*(γ)·F cannot be subtracted from the 1-form δ.
    let literal_typed = false;
    Ok(vec![
        RightInverseReading {
            reading: "literal".into(),
            formula: "(γ, δ − 2 G d*(γ) F)".into(),
            well_typed: literal_typed,
            residual: None,
        },
        RightInverseReading {
            reading: "components-swapped".into(),
            formula: "(γ − 2 G d*(δ) F, δ)".into(),
            well_typed: true,
            residual: Some(residual(gamma.minus(&correction))?),
        },
        RightInverseReading {
            reading: "sign-corrected".into(),
            formula: "(γ + 2 G d*(δ) F, δ)".into(),
            well_typed: true,
            residual: Some(residual(gamma.plus(&correction))?),
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::courant::{dorfman_exact, dorfman_odd, pairing, pairing_odd};
    use crate::grid::ScalarField;
    use crate::rng::Stream;

    fn t3() -> TorusGrid {
        TorusGrid::new(3, 12).unwrap()
    }

    fn swap01(g: TorusGrid) -> AffineDiffeo {
        AffineDiffeo::new(g, vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, -1]], vec![3, 0, 5]).unwrap()
    }

    fn odd_twist(g: TorusGrid, rng: &mut Stream) -> TwistData {
        let f = KForm::constant(g, 2, &[0.5, -0.2, 0.3]).plus(&d_any(&KForm::random(g, 1, 1, rng)));
        TwistData::odd(KForm::random(g, 3, 2, rng), f).unwrap()
    }

    fn random_odd_element(g: TorusGrid, rng: &mut Stream) -> GroupElement {
        GroupElement::new(swap01(g), KForm::random(g, 2, 2, rng), Some(KForm::random(g, 1, 1, rng))).unwrap()
    }

    fn random_odd_section(g: TorusGrid, rng: &mut Stream) -> OddSection {
        OddSection::new(VectorField::random(g, 1, rng), ScalarField::random(g, 1, rng), KForm::random(g, 1, 1, rng)).unwrap()
    }

    #[test]
    fn product_examples() {
        let g = t3();
        let mut rng = Stream::new(1, 0);
        let (b1, b2) = (KForm::random(g, 2, 2, &mut rng), KForm::random(g, 2, 2, &mut rng));
        let x = GroupElement::new(swap01(g), b1.clone(), None).unwrap();
        let y = GroupElement::b_field(b2.clone()).unwrap();
        let xy = x.compose(&y).unwrap();
        assert_eq!(xy.phi, x.phi);
        assert!(xy.b.minus(&b1.plus(&b2)).max_abs() < 1e-14);
        let id = GroupElement::identity(g, false);
        assert!(id.compose(&x).unwrap().distance(&x) < 1e-14);
        assert!(x.compose(&id).unwrap().distance(&x) < 1e-14);

        let (a1, a2) = (KForm::random(g, 1, 1, &mut rng), KForm::random(g, 1, 1, &mut rng));
        let z0 = KForm::zeros(g, 2);
        let p = GroupElement::odd_field(z0.clone(), a1.clone()).unwrap();
        let q = GroupElement::odd_field(z0, a2.clone()).unwrap();
        let pq = p.compose(&q).unwrap();
        let qp = q.compose(&p).unwrap();
        assert!(pq.b.minus(&wedge_any(&a1, &a2)).max_abs() < 1e-13);
        assert!(pq.b.minus(&qp.b).minus(&wedge_any(&a1, &a2).scaled(2.0)).max_abs() < 1e-13);
        let inv = p.inverse().unwrap();
        assert!(inv.b.max_abs() < 1e-14 && inv.a.unwrap().plus(&a1).max_abs() < 1e-14);
    }

    #[test]
    fn inverse_and_associativity() {
        let g = t3();
        let mut rng = Stream::new(2, 0);
        let x = random_odd_element(g, &mut rng);
        let y = random_odd_element(g, &mut rng);
        let z = GroupElement::new(AffineDiffeo::translation(g, &[1, 2, 3]), KForm::random(g, 2, 1, &mut rng), Some(KForm::random(g, 1, 1, &mut rng))).unwrap();
        let l = x.compose(&y).unwrap().compose(&z).unwrap();
        let r = x.compose(&y.compose(&z).unwrap()).unwrap();
        assert!(l.distance(&r) < 1e-12);
        assert!(x.compose(&x.inverse().unwrap()).unwrap().distance(&GroupElement::identity(g, true)) < 1e-13);
        assert!(x.inverse().unwrap().compose(&x).unwrap().distance(&GroupElement::identity(g, true)) < 1e-13);
    }

    #[test]
    fn b_field_acts_by_contraction() {
        let g = t3();
        let b = KForm::constant(g, 2, &[1.0, 2.0, 3.0]);
        let e = ExactSection::vector(VectorField::coordinate(g, 0));
        let moved = GroupElement::b_field(b.clone()).unwrap().act_exact(&e).unwrap();
        assert!(moved.alpha.minus(&interior_any(&e.u, &b)).max_abs() < 1e-15);
        assert_eq!(GroupElement::identity(g, false).act_exact(&e).unwrap(), e);
    }

    #[test]
    fn action_is_a_left_action_preserving_pairing() {
        let g = t3();
        let mut rng = Stream::new(3, 0);
        let x = random_odd_element(g, &mut rng);
        let y = random_odd_element(g, &mut rng);
        let s = random_odd_section(g, &mut rng);
        let s2 = random_odd_section(g, &mut rng);
        let lhs = x.act_odd(&y.act_odd(&s).unwrap()).unwrap();
        let rhs = x.compose(&y).unwrap().act_odd(&s).unwrap();
        assert!(lhs.minus(&rhs).max_abs() < 1e-12);
        let p = pairing_odd(&x.act_odd(&s).unwrap(), &x.act_odd(&s2).unwrap()).unwrap();
        let q = pairing_odd(&s, &s2).unwrap().pushforward(&x.phi).unwrap();
        assert!(p.minus(&q).max_abs() < 1e-12);
    }

    #[test]
    fn members_preserve_brackets() {
        let g = t3();
        let mut rng = Stream::new(4, 0);
        let hodge = HodgeContext::flat(g);
        let h = KForm::random(g, 3, 2, &mut rng);
        let t = TwistData::exact(h.minus(&KForm::constant(g, 3, &[h.means()[0]]))).unwrap();
        let mut m = GroupElement::lift(&t, &hodge, &swap01(g)).unwrap();
        m.b.axpy(1.0, &KForm::constant(g, 2, &[0.3, 0.0, -0.1]));
        assert!(m.membership_defect(&t).unwrap().max() < 1e-10);
        let e = ExactSection::new(VectorField::random(g, 1, &mut rng), KForm::random(g, 1, 1, &mut rng)).unwrap();
        let e2 = ExactSection::new(VectorField::random(g, 1, &mut rng), KForm::random(g, 1, 1, &mut rng)).unwrap();
        let lhs = m.act_exact(&dorfman_exact(&t, &e, &e2).unwrap()).unwrap();
        let rhs = dorfman_exact(&t, &m.act_exact(&e).unwrap(), &m.act_exact(&e2).unwrap()).unwrap();
        assert!(lhs.minus(&rhs).norm() < 1e-8 * lhs.norm());
        let p = pairing(&m.act_exact(&e).unwrap(), &m.act_exact(&e2).unwrap()).unwrap();
        assert!(p.minus(&pairing(&e, &e2).unwrap().pushforward(&m.phi).unwrap()).max_abs() < 1e-12);
    }

    #[test]
    fn odd_members_preserve_brackets() {
        let g = t3();
        let mut rng = Stream::new(5, 0);
        let hodge = HodgeContext::flat(g);
        let f = KForm::constant(g, 2, &[0.5, 0.0, 0.0]).plus(&d_any(&KForm::random(g, 1, 1, &mut rng)));
        let t = TwistData::odd(KForm::zeros(g, 3), f).unwrap();
        let phi = AffineDiffeo::translation(g, &[2, 5, 1]);
        let mut m = GroupElement::lift(&t, &hodge, &phi).unwrap();
        let closed = KForm::constant(g, 2, &[0.2, 0.0, 0.1]);
        let extra = GroupElement::odd_field(closed, KForm::zeros(g, 1)).unwrap();
        m = m.compose(&extra).unwrap();
        assert!(m.membership_defect(&t).unwrap().max() < 1e-10, "{:?}", m.membership_defect(&t));
        let s1 = random_odd_section(g, &mut rng);
        let s2 = random_odd_section(g, &mut rng);
        let lhs = m.act_odd(&dorfman_odd(&t, &s1, &s2).unwrap()).unwrap();
        let rhs = dorfman_odd(&t, &m.act_odd(&s1).unwrap(), &m.act_odd(&s2).unwrap()).unwrap();
        assert!(lhs.minus(&rhs).norm() < 1e-8 * lhs.norm(), "{}", lhs.minus(&rhs).norm() / lhs.norm());
    }

    #[test]
    fn membership_examples() {
        let g = t3();
        let mut rng = Stream::new(6, 0);
        let t = TwistData::exact(KForm::constant(g, 3, &[2.0])).unwrap();
        let closed = d_any(&KForm::random(g, 1, 2, &mut rng));
        assert!(GroupElement::b_field(closed).unwrap().membership_defect(&t).unwrap().max() < 1e-12);
        let tr = GroupElement::diffeo(AffineDiffeo::translation(g, &[1, 1, 0]), g, false).unwrap();
        assert!(tr.membership_defect(&t).unwrap().max() < 1e-14);
        let b = KForm::random(g, 2, 2, &mut rng);
        let d = GroupElement::b_field(b.clone()).unwrap().membership_defect(&t).unwrap().max();
        assert!((d - d_any(&b).norm()).abs() < 1e-12);
    }

    #[test]
    fn conjugation_closed_form_and_twist() {
        let g = t3();
        let mut rng = Stream::new(7, 0);
        let hodge = HodgeContext::flat(g);
        let c = KForm::random(g, 2, 2, &mut rng);
        let h = GroupElement::b_field(c.clone()).unwrap();
        let phi = GroupElement::diffeo(swap01(g), g, false).unwrap();
        let conj = phi.conjugate(&h).unwrap();
        let want = c.minus(&c.pullback(&phi.phi).unwrap());
        assert!(conj.b.minus(&want).max_abs() < 1e-13);

        let raw = KForm::random(g, 3, 2, &mut rng);
        let t = TwistData::exact(raw.minus(&KForm::constant(g, 3, &[raw.means()[0]]))).unwrap();
        let m = GroupElement::lift(&t, &hodge, &swap01(g)).unwrap();
        let conj = m.conjugate(&h).unwrap();
        let lowered = TwistData::exact(t.h().minus(&d_any(&c))).unwrap();
        assert!(conj.membership_defect(&lowered).unwrap().max() < 1e-9);
        let raised = TwistData::exact(t.h().plus(&d_any(&c))).unwrap();
        assert!(conj.membership_defect(&raised).unwrap().max() > 1e-3);
    }

    #[test]
    fn derivation_examples() {
        let g = t3();
        let mut rng = Stream::new(8, 0);
        let hodge = HodgeContext::flat(g);
        let t = TwistData::exact(KForm::constant(g, 3, &[1.5])).unwrap();
        let h = KForm::constant(g, 2, &[0.0, 1.0, 0.0]);
        let d = Derivation::new(VectorField::zeros(g), h.clone(), None).unwrap();
        assert!(d.derivation_defect(&t).unwrap().max() < 1e-13);
        let coords = d.exactness_defect(&t, &hodge).unwrap();
        assert!(coords.norm() > 1.0);
        let u = VectorField::constant(g, &[1.0, -1.0, 0.5]);
        let d = Derivation::new(u.clone(), interior_any(&u, t.h()), None).unwrap();
        assert!(d.derivation_defect(&t).unwrap().max() < 1e-14);
        let r = Derivation::new(VectorField::random(g, 1, &mut rng), KForm::random(g, 2, 2, &mut rng), None).unwrap();
        let independent = d_any(&interior_any(&r.u, t.h()).minus(&r.b)).norm();
        assert!((r.derivation_defect(&t).unwrap().max() - independent).abs() < 1e-14);
        assert!(matches!(r.exactness_defect(&t, &hodge), Err(GeomError::NotDerivation(_))));
    }

    #[test]
    fn iota_e_round_trip_and_split() {
        let g = t3();
        let mut rng = Stream::new(9, 0);
        let hodge = HodgeContext::flat(g);
        let t = TwistData::exact(KForm::random(g, 3, 2, &mut rng)).unwrap();
        let d1 = iota_e_exact(&t, &ExactSection::vector(VectorField::coordinate(g, 0))).unwrap();
        assert!(d1.b.minus(&interior_any(&VectorField::coordinate(g, 0), t.h())).max_abs() < 1e-15);
        let alpha = KForm::random(g, 1, 2, &mut rng);
        let d2 = iota_e_exact(&t, &ExactSection::form(alpha.clone())).unwrap();
        assert!(d2.b.plus(&d_any(&alpha)).max_abs() < 1e-15);

        let s = ExactSection::new(VectorField::random(g, 2, &mut rng), alpha).unwrap();
        let d = iota_e_exact(&t, &s).unwrap();
        assert!(d.derivation_defect(&t).unwrap().max() < 1e-12);
        assert!(d.exactness_defect(&t, &hodge).unwrap().norm() < 1e-12);
        let back = iota_e_inv_exact(&t, &hodge, &d).unwrap();
        assert_eq!(back.u, s.u);
        assert!(iota_e_exact(&t, &back).unwrap().minus(&d).unwrap().max_abs() < 1e-11);

        let harmonic = KForm::constant(g, 2, &[0.3, 0.0, -0.7]);
        let mixed = d.plus(&Derivation::new(VectorField::zeros(g), harmonic.clone(), None).unwrap()).unwrap();
        let split = mixed.split(&t, &hodge).unwrap();
        assert!(split.harmonic_b.minus(&harmonic).max_abs() < 1e-11);
        assert!(split.exact.minus(&d).unwrap().max_abs() < 1e-11);
        let again = split.exact.split(&t, &hodge).unwrap();
        assert!(again.harmonic_b.max_abs() < 1e-11);
        assert!(again.exact.minus(&split.exact).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn odd_iota_e_and_split() {
        let g = t3();
        let mut rng = Stream::new(10, 0);
        let hodge = HodgeContext::flat(g);
        let t = odd_twist(g, &mut rng);
        let mut s = random_odd_section(g, &mut rng);
        s.f = s.f.minus(&ScalarField::constant(g, s.f.mean()));
        let d = iota_e_odd(&t, &s).unwrap();
        assert!(d.derivation_defect(&t).unwrap().max() < 1e-11);
        assert!(d.derivation_defect_linearized(&t).unwrap().max() < 1e-11);
        assert!(d.exactness_defect(&t, &hodge).unwrap().norm() < 1e-11);
        assert!(iota_e_odd_plus_sign(&t, &s).unwrap().derivation_defect(&t).unwrap().max() > 1e-3);
        let back = iota_e_inv_odd(&t, &hodge, &d).unwrap();
        assert_eq!(back.u, s.u);
        assert!(iota_e_odd(&t, &back).unwrap().minus(&d).unwrap().max_abs() < 1e-10);

        // harmonic derivation with a 1-form part; h₁∧[F] = 0
        let h1 = KForm::constant(g, 1, &[0.2, 0.0, -0.12]);
        let f = t.f().unwrap();
        let eta = green_codiff(&hodge, &wedge_any(&h1, f)).unwrap();
        let lifted = Derivation::new(VectorField::zeros(g), eta.scaled(-2.0), Some(h1.scaled(-1.0))).unwrap();
        assert!(lifted.derivation_defect(&t).unwrap().max() < 1e-10);
        let mixed = d.plus(&lifted).unwrap();
        let split = mixed.split(&t, &hodge).unwrap();
        assert!(split.exact.exactness_defect(&t, &hodge).unwrap().norm() < 1e-10);
        assert!(split.harmonic_a.as_ref().unwrap().minus(&h1.scaled(-1.0)).max_abs() < 1e-12);
        let re = split.exact.plus(&Derivation::new(VectorField::zeros(g), split.harmonic_b.clone(), split.harmonic_a.clone()).unwrap()).unwrap();
        assert!(re.minus(&mixed).unwrap().max_abs() < 1e-12);
        let again = split.exact.split(&t, &hodge).unwrap();
        assert!(again.harmonic_b.max_abs() < 1e-10 && again.harmonic_a.unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn odd_scalar_derivation_examples() {
        let g = t3();
        let hodge = HodgeContext::flat(g);
        let t = TwistData::odd(KForm::zeros(g, 3), KForm::constant(g, 2, &[0.0, 0.0, 1.0])).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0].cos());
        let fl = mul_form(&f, t.f().unwrap()).unwrap();
        let printed = Derivation::new(VectorField::zeros(g), fl.scaled(2.0), Some(grad_form(&f).scaled(-1.0))).unwrap();
        assert!(printed.derivation_defect(&t).unwrap().max() > 1e-3);
        let consistent = Derivation::new(VectorField::zeros(g), fl.scaled(-2.0), Some(grad_form(&f).scaled(-1.0))).unwrap();
        assert!(consistent.derivation_defect(&t).unwrap().max() < 1e-13);
        assert!(consistent.exactness_defect(&t, &hodge).unwrap().norm() < 1e-13);
        // constant f: exact by definition, yet flagged
        let c = Derivation::new(VectorField::zeros(g), t.f().unwrap().scaled(-2.0), Some(KForm::zeros(g, 1))).unwrap();
        assert!(c.exactness_defect(&t, &hodge).unwrap().norm() > 1.0);
    }

    #[test]
    fn derivation_brackets_close() {
        let g = t3();
        let mut rng = Stream::new(11, 0);
        let t = TwistData::exact(KForm::random(g, 3, 1, &mut rng)).unwrap();
        let mk = |rng: &mut Stream| iota_e_exact(&t, &ExactSection::new(VectorField::random(g, 1, rng), KForm::random(g, 1, 1, rng)).unwrap()).unwrap();
        let (x, y) = (mk(&mut rng), mk(&mut rng));
        assert!(x.bracket(&y).unwrap().derivation_defect(&t).unwrap().max() < 1e-10);

        let t = odd_twist(g, &mut rng);
        let mk = |rng: &mut Stream| iota_e_odd(&t, &random_odd_section(g, rng)).unwrap();
        let (x, y) = (mk(&mut rng), mk(&mut rng));
        let br = x.bracket(&y).unwrap();
        assert!(br.derivation_defect(&t).unwrap().max() < 1e-9, "{:?}", br.derivation_defect(&t));
    }

    #[test]
    fn kappa2_readings() {
        let g = t3();
        let mut rng = Stream::new(12, 0);
        let hodge = HodgeContext::flat(g);
        let t = odd_twist(g, &mut rng);
        let rep = kappa2_right_inverse_report(&t, &hodge, &KForm::random(g, 2, 1, &mut rng), &KForm::random(g, 1, 1, &mut rng)).unwrap();
        assert!(!rep[0].well_typed);
        assert!(rep[1].residual.unwrap() > 1e-3);
        assert!(rep[2].residual.unwrap() < 1e-12);
    }
}
