//! Exact and odd exact Courant algebroids on the torus.
//!
//! `i_u i_v H` always means `i_u(i_v H) = H(v, u, ·)`.

use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::grid::calculus::{d_any, interior_any, wedge_any};
use crate::grid::{
    directional, grad_form, lie_bracket, lie_form, mul_form, mul_scalar, mul_vector, same_grid,
    Field, KForm, ScalarField, TorusGrid, VectorField,
};

const TWIST_TOL: f64 = 1e-10;

/// A section `u + α` of `TM + T*M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSection {
    pub u: VectorField,
    pub alpha: KForm,
}

/// A section `u + f + α` of `TM + 1 + T*M`.
#[derive(Debug, Clone, PartialEq)]
pub struct OddSection {
    pub u: VectorField,
    pub f: ScalarField,
    pub alpha: KForm,
}

impl ExactSection {
    pub fn new(u: VectorField, alpha: KForm) -> Result<Self> {
        same_grid(u.grid(), alpha.grid())?;
        if alpha.degree() != 1 {
            return Err(GeomError::Degree {
                op: "section",
                degree: alpha.degree(),
            });
        }
        Ok(ExactSection { u, alpha })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        ExactSection {
            u: VectorField::zeros(grid),
            alpha: KForm::zeros(grid, 1),
        }
    }

    pub fn vector(u: VectorField) -> Self {
        let grid = u.grid();
        ExactSection {
            u,
            alpha: KForm::zeros(grid, 1),
        }
    }

    pub fn form(alpha: KForm) -> Self {
        ExactSection {
            u: VectorField::zeros(alpha.grid()),
            alpha,
        }
    }
}

impl OddSection {
    pub fn new(u: VectorField, f: ScalarField, alpha: KForm) -> Result<Self> {
        same_grid(u.grid(), alpha.grid())?;
        same_grid(u.grid(), f.grid())?;
        if alpha.degree() != 1 {
            return Err(GeomError::Degree {
                op: "section",
                degree: alpha.degree(),
            });
        }
        Ok(OddSection { u, f, alpha })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        OddSection {
            u: VectorField::zeros(grid),
            f: ScalarField::zeros(grid),
            alpha: KForm::zeros(grid, 1),
        }
    }
}

impl Field for ExactSection {
    fn grid(&self) -> TorusGrid {
        self.u.grid()
    }
    fn parts(&self) -> Vec<&[f64]> {
        let mut p = self.u.parts();
        p.extend(self.alpha.parts());
        p
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.u.parts_mut();
        p.extend(self.alpha.parts_mut());
        p
    }
}

impl Field for OddSection {
    fn grid(&self) -> TorusGrid {
        self.u.grid()
    }
    fn parts(&self) -> Vec<&[f64]> {
        let mut p = self.u.parts();
        p.extend(self.f.parts());
        p.extend(self.alpha.parts());
        p
    }
    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.u.parts_mut();
        p.extend(self.f.parts_mut());
        p.extend(self.alpha.parts_mut());
        p
    }
}

/// Twisting data: a 3-form `H` and, for the odd algebroid, a closed 2-form `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistData {
    h: KForm,
    f: Option<KForm>,
}

impl TwistData {
    /// Exact twist; requires `dH = 0`.
    pub fn exact(h: KForm) -> Result<Self> {
        let t = Self::unvalidated(h, None)?;
        t.validate()?;
        Ok(t)
    }

    /// Odd twist; requires `dF = 0` and `dH + F∧F = 0`.
    pub fn odd(h: KForm, f: KForm) -> Result<Self> {
        let t = Self::unvalidated(h, Some(f))?;
        t.validate()?;
        Ok(t)
    }

    pub fn zero_exact(grid: TorusGrid) -> Self {
        TwistData {
            h: KForm::zeros(grid, 3),
            f: None,
        }
    }

    pub fn zero_odd(grid: TorusGrid) -> Self {
        TwistData {
            h: KForm::zeros(grid, 3),
            f: Some(KForm::zeros(grid, 2)),
        }
    }

    /// Skips the closure checks. Meant for negative controls only.
    #[doc(hidden)]
    pub fn unvalidated(h: KForm, f: Option<KForm>) -> Result<Self> {
        if h.degree() != 3 {
            return Err(GeomError::InvalidTwist(format!("H has degree {}", h.degree())));
        }
        if let Some(f) = &f {
            same_grid(h.grid(), f.grid())?;
            if f.degree() != 2 {
                return Err(GeomError::InvalidTwist(format!("F has degree {}", f.degree())));
            }
        }
        Ok(TwistData { h, f })
    }

    /// Residuals of the twist equations: `(‖dH + F∧F‖, ‖dF‖)`.
    pub fn closure_residuals(&self) -> (f64, f64) {
        let mut dh = d_any(&self.h);
        match &self.f {
            None => (dh.norm(), 0.0),
            Some(f) => {
                dh.axpy(1.0, &wedge_any(f, f));
                (dh.norm(), d_any(f).norm())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (anomaly, df) = self.closure_residuals();
        let scale = 1.0 + self.h.norm() + self.f.as_ref().map_or(0.0, |f| f.norm() * (1.0 + f.norm()));
        if df > TWIST_TOL * scale {
            return Err(GeomError::InvalidTwist(format!("dF = 0 violated (residual {df:.3e})")));
        }
        if anomaly > TWIST_TOL * scale {
            let what = if self.f.is_some() { "dH + F∧F = 0" } else { "dH = 0" };
            return Err(GeomError::InvalidTwist(format!(
                "{what} violated (residual {anomaly:.3e})"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> TorusGrid {
        self.h.grid()
    }

    pub fn h(&self) -> &KForm {
        &self.h
    }

    pub fn f(&self) -> Option<&KForm> {
        self.f.as_ref()
    }

    pub fn is_odd(&self) -> bool {
        self.f.is_some()
    }

    fn f_or_zero(&self) -> KForm {
        self.f.clone().unwrap_or_else(|| KForm::zeros(self.grid(), 2))
    }
}

/// `⟨u+α, v+β⟩ = ½(i_uβ + i_vα)`.
pub fn pairing(a: &ExactSection, b: &ExactSection) -> Result<ScalarField> {
    same_grid(a.grid(), b.grid())?;
    let mut s = interior_any(&a.u, &b.alpha).as_scalar()?;
    s.axpy(1.0, &interior_any(&b.u, &a.alpha).as_scalar()?);
    Ok(s.scaled(0.5))
}

/// `⟨u+f+α, v+g+β⟩ = ½(i_uβ + i_vα) + fg`.
pub fn pairing_odd(a: &OddSection, b: &OddSection) -> Result<ScalarField> {
    same_grid(a.grid(), b.grid())?;
    let mut s = interior_any(&a.u, &b.alpha).as_scalar()?;
    s.axpy(1.0, &interior_any(&b.u, &a.alpha).as_scalar()?);
    let mut s = s.scaled(0.5);
    s.axpy(1.0, &mul_scalar(&a.f, &b.f)?);
    Ok(s)
}

/// `i_u(i_v w)`.
fn double_interior(u: &VectorField, v: &VectorField, w: &KForm) -> KForm {
    interior_any(u, &interior_any(v, w))
}

/// `[u+α, v+γ]_H = [u,v] + L_uγ − i_v dα + i_u i_v H`.
pub fn dorfman_exact(t: &TwistData, a: &ExactSection, b: &ExactSection) -> Result<ExactSection> {
    same_grid(a.grid(), b.grid())?;
    same_grid(a.grid(), t.grid())?;
    let u = lie_bracket(&a.u, &b.u)?;
    let mut alpha = lie_form(&a.u, &b.alpha)?;
    alpha.axpy(-1.0, &interior_any(&b.u, &d_any(&a.alpha)));
    alpha.axpy(1.0, &double_interior(&a.u, &b.u, t.h()));
    Ok(ExactSection { u, alpha })
}

/// The `(H, F)`-twisted bracket on `TM + 1 + T*M`.
pub fn dorfman_odd(t: &TwistData, a: &OddSection, b: &OddSection) -> Result<OddSection> {
    same_grid(a.grid(), b.grid())?;
    same_grid(a.grid(), t.grid())?;
    let twist_f = t.f_or_zero();
    let u = lie_bracket(&a.u, &b.u)?;
    let mut f = directional(&a.u, &b.f)?;
    f.axpy(-1.0, &directional(&b.u, &a.f)?);
    f.axpy(1.0, &double_interior(&a.u, &b.u, &twist_f).as_scalar()?);
    let mut alpha = lie_form(&a.u, &b.alpha)?;
    alpha.axpy(-1.0, &interior_any(&b.u, &d_any(&a.alpha)));
    alpha.axpy(2.0, &mul_form(&b.f, &grad_form(&a.f))?);
    alpha.axpy(2.0, &mul_form(&b.f, &interior_any(&a.u, &twist_f))?);
    alpha.axpy(-2.0, &mul_form(&a.f, &interior_any(&b.u, &twist_f))?);
    alpha.axpy(1.0, &double_interior(&a.u, &b.u, t.h()));
    Ok(OddSection { u, f, alpha })
}

/// Operations shared by both kinds of section, used by the axiom checks.
pub trait CourantSection: Field {
    fn anchor(&self) -> &VectorField;
    fn pair(&self, other: &Self) -> Result<ScalarField>;
    fn bracket(t: &TwistData, a: &Self, b: &Self) -> Result<Self>;
    /// `D φ`: the differential placed in the cotangent slot.
    fn differential(phi: &ScalarField) -> Self;
    fn times(&self, phi: &ScalarField) -> Result<Self>;
}

impl CourantSection for ExactSection {
    fn anchor(&self) -> &VectorField {
        &self.u
    }
    fn pair(&self, other: &Self) -> Result<ScalarField> {
        pairing(self, other)
    }
    fn bracket(t: &TwistData, a: &Self, b: &Self) -> Result<Self> {
        dorfman_exact(t, a, b)
    }
    fn differential(phi: &ScalarField) -> Self {
        ExactSection::form(grad_form(phi))
    }
    fn times(&self, phi: &ScalarField) -> Result<Self> {
        Ok(ExactSection {
            u: mul_vector(phi, &self.u)?,
            alpha: mul_form(phi, &self.alpha)?,
        })
    }
}

impl CourantSection for OddSection {
    fn anchor(&self) -> &VectorField {
        &self.u
    }
    fn pair(&self, other: &Self) -> Result<ScalarField> {
        pairing_odd(self, other)
    }
    fn bracket(t: &TwistData, a: &Self, b: &Self) -> Result<Self> {
        dorfman_odd(t, a, b)
    }
    fn differential(phi: &ScalarField) -> Self {
        let grid = phi.grid();
        OddSection {
            u: VectorField::zeros(grid),
            f: ScalarField::zeros(grid),
            alpha: grad_form(phi),
        }
    }
    fn times(&self, phi: &ScalarField) -> Result<Self> {
        Ok(OddSection {
            u: mul_vector(phi, &self.u)?,
            f: mul_scalar(phi, &self.f)?,
            alpha: mul_form(phi, &self.alpha)?,
        })
    }
}

/// One line of an axiom report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AxiomResidual {
    pub axiom: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Whether the line counts towards the overall verdict.
    pub counted: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AxiomReport {
    pub lines: Vec<AxiomResidual>,
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.lines.iter().filter(|l| l.counted).all(|l| l.pass)
    }

    pub fn residual(&self, axiom: &str) -> Option<f64> {
        self.lines.iter().find(|l| l.axiom == axiom).map(|l| l.residual)
    }

    /// Largest counted residual.
    pub fn worst(&self) -> f64 {
        self.lines
            .iter()
            .filter(|l| l.counted)
            .fold(0.0, |m, l| m.max(l.residual))
    }
}

/// `‖residual‖ / Σ‖terms‖`, or the absolute residual when every term vanishes.
fn relative<F: Field>(residual: &F, terms: &[f64]) -> f64 {
    let scale: f64 = terms.iter().sum();
    let r = residual.norm();
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

/// Relative residuals of the five Courant axioms on a triple and a function.
///
/// C3 is checked on `e` itself; its polarized form is reported in both the
/// symmetric reading `[e,e′] + [e′,e]` and the literal `[e,e′] + [e′,e′]`, the
/// latter not counted.
pub fn axiom_residuals<S: CourantSection>(
    t: &TwistData,
    e: &S,
    e1: &S,
    e2: &S,
    phi: &ScalarField,
    tolerance: f64,
) -> Result<AxiomReport> {
    let br = |a: &S, b: &S| S::bracket(t, a, b);
    let line = |axiom: &str, residual: f64, counted: bool| AxiomResidual {
        axiom: axiom.to_string(),
        residual,
        tolerance,
        pass: residual <= tolerance,
        counted,
    };
    let mut lines = Vec::new();

    // C1: [e,[e1,e2]] = [[e,e1],e2] + [e1,[e,e2]]
    let lhs = br(e, &br(e1, e2)?)?;
    let r1 = br(&br(e, e1)?, e2)?;
    let r2 = br(e1, &br(e, e2)?)?;
    let c1 = lhs.minus(&r1).minus(&r2);
    lines.push(line("C1", relative(&c1, &[lhs.norm(), r1.norm(), r2.norm()]), true));

    // C2: π(e)⟨e1,e2⟩ = ⟨[e,e1],e2⟩ + ⟨e1,[e,e2]⟩
    let lhs = directional(e.anchor(), &e1.pair(e2)?)?;
    let a = br(e, e1)?.pair(e2)?;
    let b = e1.pair(&br(e, e2)?)?;
    let c2 = lhs.minus(&a).minus(&b);
    lines.push(line("C2", relative(&c2, &[lhs.norm(), a.norm(), b.norm()]), true));

    // C3: [e,e] = D⟨e,e⟩
    let ee = br(e, e)?;
    let dee = S::differential(&e.pair(e)?);
    lines.push(line("C3", relative(&ee.minus(&dee), &[ee.norm(), dee.norm()]), true));
    let sym = br(e, e1)?.plus(&br(e1, e)?);
    let twice = S::differential(&e.pair(e1)?).scaled(2.0);
    lines.push(line(
        "C3-polarized",
        relative(&sym.minus(&twice), &[sym.norm(), twice.norm()]),
        true,
    ));
    let literal = br(e, e1)?.plus(&br(e1, e1)?);
    lines.push(line(
        "C3-polarized-literal",
        relative(&literal.minus(&twice), &[literal.norm(), twice.norm()]),
        false,
    ));

    // C4: [e, φe1] = φ[e,e1] + (π(e)φ) e1
    let lhs = br(e, &e1.times(phi)?)?;
    let a = br(e, e1)?.times(phi)?;
    let b = e1.times(&directional(e.anchor(), phi)?)?;
    let c4 = lhs.minus(&a).minus(&b);
    lines.push(line("C4", relative(&c4, &[lhs.norm(), a.norm(), b.norm()]), true));

    // C5: π[e,e1] = [πe, πe1]
    let lhs = br(e, e1)?.anchor().clone();
    let rhs = lie_bracket(e.anchor(), e1.anchor())?;
    lines.push(line(
        "C5",
        relative(&lhs.minus(&rhs), &[lhs.norm(), rhs.norm()]),
        true,
    ));
    Ok(AxiomReport { lines })
}

/// Twist seen from a shifted splitting: `H + dB`, or in the odd case
/// `(H + dB − A∧(2F + dA), F + dA)`.
pub fn shift_splitting(t: &TwistData, b: &KForm, a: Option<&KForm>) -> Result<TwistData> {
    same_grid(t.grid(), b.grid())?;
    if b.degree() != 2 {
        return Err(GeomError::Degree {
            op: "shift_splitting",
            degree: b.degree(),
        });
    }
    let mut h = t.h().plus(&d_any(b));
    match (t.f(), a) {
        (None, None) => TwistData::exact(h),
        (None, Some(_)) => Err(GeomError::KindMismatch),
        (Some(f), a) => {
            let a = a.cloned().unwrap_or_else(|| KForm::zeros(t.grid(), 1));
            if a.degree() != 1 {
                return Err(GeomError::Degree {
                    op: "shift_splitting",
                    degree: a.degree(),
                });
            }
            let da = d_any(&a);
            let inner = f.scaled(2.0).plus(&da);
            h.axpy(-1.0, &wedge_any(&a, &inner));
            TwistData::odd(h, f.plus(&da))
        }
    }
}

/// Reassemble the 3-form of a splitting from its brackets on the coordinate frame.
///
/// With the `i_u i_v` convention above, `2⟨[λ∂_b, λ∂_a], λ∂_c⟩` is the `abc`
/// component; for `λ(u) = u + i_uB` inside `(TM+T*M)_H` this is `H − dB`.
pub fn three_form_of_splitting(
    grid: TorusGrid,
    bracket: impl Fn(&ExactSection, &ExactSection) -> Result<ExactSection>,
    splitting: impl Fn(&VectorField) -> Result<ExactSection>,
) -> Result<KForm> {
    let n = grid.dim();
    let frame: Vec<ExactSection> = (0..n)
        .map(|i| splitting(&VectorField::coordinate(grid, i)))
        .collect::<Result<_>>()?;
    let mut out = KForm::zeros(grid, 3);
    for (c, idx) in crate::grid::multi_indices(n, 3).iter().enumerate() {
        let (a, b, w) = (idx[0], idx[1], idx[2]);
        let br = bracket(&frame[b], &frame[a])?;
        let val = pairing(&br, &frame[w])?.scaled(2.0);
        out.component_mut(c).copy_from_slice(val.values());
    }
    Ok(out)
}

/// The splitting `u ↦ u + i_uB` of `(TM + T*M)_H`.
pub fn b_splitting(b: &KForm) -> impl Fn(&VectorField) -> Result<ExactSection> + '_ {
    move |u| ExactSection::new(u.clone(), interior_any(u, b))
}
