//! Check suites. Each draws its random inputs from its own stream of the run seed.

use std::time::Instant;

use gengeom::courant::{axiom_residuals, ExactSection, OddSection, TwistData};
use gengeom::genmetric::{GMTangent, GenMetric};
use gengeom::grid::{
    binomial, ext_deriv, wedge, AffineDiffeo, Field, KForm, Pullback, ScalarField, SymTensor2, TorusGrid,
    VectorField,
};
use gengeom::hodge::{kernel_report, HodgeContext};
use gengeom::rng::Stream;
use gengeom::slice::{
    complex_check, complex_green, direct_sum_checks, full_group_decomposition, harmonic_two_form_projector,
    orbit_projector, probe_consistency, projector_report, tangent_of_derivation, FieldSpace, OperatorName,
    SliceSetting, SpaceKind,
};
use gengeom::strata::{
    candidate_pool, conjugation_identity_check, invariant_perturbation, isometry_group, linear_parts,
    metric_isometry_group, moduli_projection_report, stratum_conjugator, FiniteSymmetryGroup,
    PerturbationOutcome, PoolOptions, StrataSample,
};
use gengeom::symmetry::{iota_e_exact, iota_e_odd, kappa2_right_inverse_report, Derivation, GroupElement};
use gengeom::Result;
use nalgebra::DVector;
use serde_json::json;

use crate::config::{Kind, RunConfig, SuiteName, Tolerances};
use crate::report::{CheckLine, SuiteReport};

/// Shared state of one run.
pub struct Runner<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    /// multiplies every tolerance
    pub scale: f64,
    pub timings: bool,
}

impl Runner<'_> {
    fn tol(&self) -> Tolerances {
        self.config.tolerances.scaled(self.scale)
    }

    fn fixed(&self, base: f64) -> f64 {
        base * self.scale
    }

    fn stream(&self, suite: SuiteName, id: u64) -> Stream {
        Stream::new(self.seed, (suite as u64) << 32 | id)
    }

    pub fn run(&self, suite: SuiteName) -> SuiteReport {
        let start = Instant::now();
        let mut report = SuiteReport::new(suite.label());
        let outcome = match suite {
            SuiteName::CourantAxioms => self.courant(&mut report),
            SuiteName::Hodge => self.hodge(&mut report),
            SuiteName::Group => self.group(&mut report),
            SuiteName::Derivation => self.derivation(&mut report),
            SuiteName::Slice => self.slice(&mut report),
            SuiteName::Strata => self.strata(&mut report),
        };
        if let Err(e) = outcome {
            report.push(CheckLine::new(format!("{}/error", suite.label()), e.to_string(), f64::NAN, 0.0));
        }
        report.elapsed_s = start.elapsed().as_secs_f64();
        if self.timings {
            report.wall_time_s = Some(report.elapsed_s);
        }
        report
    }

    fn courant(&self, report: &mut SuiteReport) -> Result<()> {
        let c = &self.config.courant;
        let grid = TorusGrid::new(c.dimension, c.resolution)?;
        let tol = self.tol().axiom;
        let mut rng = self.stream(SuiteName::CourantAxioms, 0);
        for kind in [Kind::Exact, Kind::Odd] {
            let label = kind_label(kind);
            let configured = match kind {
                Kind::Exact => &c.exact_twists,
                Kind::Odd => &c.odd_twists,
            };
            let mut twists = configured
                .iter()
                .take(c.twist_count)
                .map(|s| s.build(grid, kind))
                .collect::<Result<Vec<_>>>()?;
            while twists.len() < c.twist_count {
                twists.push(random_twist(grid, kind, &mut rng)?);
            }
            let closure = twists.iter().map(|t| { let (a, b) = t.closure_residuals(); a.max(b) }).fold(0.0, f64::max);
            report.push(CheckLine::new(format!("courant/{label}/twist-closure"), "twist closure equations", closure, self.tol().identity));
            let mut worst: Vec<(String, f64)> = Vec::new();
            for i in 0..c.samples {
                let t = &twists[i % twists.len()];
                let phi = ScalarField::random(grid, 1, &mut rng);
                let rep = match kind {
                    Kind::Exact => {
                        let (a, b, e) = (random_exact(grid, &mut rng), random_exact(grid, &mut rng), random_exact(grid, &mut rng));
                        axiom_residuals(t, &a, &b, &e, &phi, tol)?
                    }
                    Kind::Odd => {
                        let (a, b, e) = (random_odd(grid, &mut rng), random_odd(grid, &mut rng), random_odd(grid, &mut rng));
                        axiom_residuals(t, &a, &b, &e, &phi, tol)?
                    }
                };
                for l in rep.lines.iter().filter(|l| l.counted) {
                    match worst.iter_mut().find(|(n, _)| *n == l.axiom) {
                        Some((_, w)) => *w = w.max(l.residual),
                        None => worst.push((l.axiom.clone(), l.residual)),
                    }
                }
            }
            for (axiom, w) in worst {
                report.push(CheckLine::new(format!("courant/{label}/{axiom}"), axiom_anchor(&axiom), w, tol));
            }
        }
        // Every 3-form on a torus of dimension ≤ 3 is closed, so the twist is
        // broken through `dF ≠ 0`, which feeds the same Jacobiator.
        let good = random_twist(grid, Kind::Odd, &mut rng)?;
        let bad_f = good.f().expect("odd").plus(&KForm::random(grid, 2, 1, &mut rng).scaled(0.3));
        let bad = TwistData::unvalidated(good.h().clone(), Some(bad_f))?;
        let mut least = f64::INFINITY;
        for _ in 0..3 {
            let (a, b, e) = (random_odd(grid, &mut rng), random_odd(grid, &mut rng), random_odd(grid, &mut rng));
            let rep = axiom_residuals(&bad, &a, &b, &e, &ScalarField::random(grid, 1, &mut rng), tol)?;
            least = least.min(rep.residual("C1").unwrap_or(0.0));
        }
        report.push(CheckLine::exceeds("courant/odd/negative-control-C1", "Jacobi identity fails for a non-closed twist", least, 1e-3));
        Ok(())
    }

    fn hodge(&self, report: &mut SuiteReport) -> Result<()> {
        let h = &self.config.hodge;
        let mut rng = self.stream(SuiteName::Hodge, 0);
        for &[dim, res] in &h.grids {
            let grid = TorusGrid::new(dim, res)?;
            for m in 0..=h.perturbed_metrics {
                let (tag, ctx) = if m == 0 {
                    (format!("T{dim}-N{res}/flat"), HodgeContext::flat(grid))
                } else {
                    let mut g = SymTensor2::identity(grid);
                    g.axpy(h.amplitude, &SymTensor2::random(grid, 1, &mut rng));
                    (format!("T{dim}-N{res}/metric{m}"), HodgeContext::new(g)?)
                };
                for k in kernel_report(&ctx)? {
                    let anchor = "kernel of the Hodge Laplacian equals the Betti number";
                    report.push(CheckLine::count(format!("hodge/{tag}/kernel-dense-{}", k.degree), anchor, k.dense, k.expected));
                    report.push(CheckLine::count(format!("hodge/{tag}/kernel-iterative-{}", k.degree), anchor, k.iterative, k.expected));
                }
                let (mut reassembly, mut orth, mut green) = (0.0f64, 0.0f64, 0.0f64);
                for k in 0..=dim {
                    let mut w = KForm::random(grid, k, 3, &mut rng);
                    let harmonic_shift: Vec<f64> = (0..binomial(dim, k)).map(|_| rng.uniform(-0.5, 0.5)).collect();
                    w.axpy(1.0, &KForm::constant(grid, k, &harmonic_shift));
                    let size = ctx.l2_norm(&w);
                    let p = ctx.hodge_decompose(&w)?;
                    let sum = p.exact.plus(&p.coexact).plus(&p.harmonic);
                    reassembly = reassembly.max(ctx.l2_norm(&sum.minus(&w)) / size);
                    for (a, b) in [(&p.exact, &p.coexact), (&p.exact, &p.harmonic), (&p.coexact, &p.harmonic)] {
                        orth = orth.max(ctx.l2_inner(a, b)?.abs() / (size * size));
                    }
                    let back = ctx.laplacian(&ctx.green(&w)?)?.plus(&ctx.harmonic_projection(&w)?);
                    green = green.max(ctx.l2_norm(&back.minus(&w)) / size);
                }
                report.push(CheckLine::new(format!("hodge/{tag}/reassembly"), "exact + coexact + harmonic reassembles the form", reassembly, self.fixed(1e-9)));
                report.push(CheckLine::new(format!("hodge/{tag}/orthogonality"), "the three Hodge pieces are L2-orthogonal", orth, self.fixed(1e-10)));
                report.push(CheckLine::new(format!("hodge/{tag}/green-identity"), "Laplacian after Green plus harmonic projection is the identity", green, self.fixed(1e-9)));
            }
        }
        Ok(())
    }

    fn group(&self, report: &mut SuiteReport) -> Result<()> {
        let grid = TorusGrid::new(3, self.config.group.resolution)?;
        let hodge = HodgeContext::flat(grid);
        let pairs = self.config.group.pairs;
        let tol = self.tol().identity;
        let mut rng = self.stream(SuiteName::Group, 0);
        let rotations: Vec<Vec<Vec<i64>>> = linear_parts(3).into_iter().filter(|m| det3(m) == 1).collect();
        for kind in [Kind::Exact, Kind::Odd] {
            let label = kind_label(kind);
            let odd = kind == Kind::Odd;
            let t = match kind {
                Kind::Exact => {
                    let h = KForm::random(grid, 3, 2, &mut rng);
                    TwistData::exact(h.minus(&KForm::constant(grid, 3, &[h.means()[0]])).plus(&KForm::constant(grid, 3, &[0.4])))?
                }
                Kind::Odd => random_twist(grid, Kind::Odd, &mut rng)?,
            };
            let member = |rng: &mut Stream| -> Result<GroupElement> {
                let shift: Vec<i64> = (0..3).map(|_| rng.index(grid.res()) as i64).collect();
                let phi = if odd {
                    AffineDiffeo::translation(grid, &shift)
                } else {
                    AffineDiffeo::new(grid, rotations[rng.index(rotations.len())].clone(), shift)?
                };
                let base = GroupElement::lift(&t, &hodge, &phi)?;
                let consts: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
                let closed = KForm::constant(grid, 2, &consts).plus(&ext_deriv(&KForm::random(grid, 1, 2, rng))?);
                let extra = if odd {
                    GroupElement::odd_field(closed, KForm::zeros(grid, 1))?
                } else {
                    GroupElement::b_field(closed)?
                };
                base.compose(&extra)
            };
            let (mut assoc, mut inverse, mut action, mut closure, mut conj) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let id = GroupElement::identity(grid, odd);
            for _ in 0..pairs {
                let x = member(&mut rng)?;
                let y = member(&mut rng)?;
                let z = random_element(grid, odd, &rotations, &mut rng)?;
                let l = x.compose(&y)?.compose(&z)?;
                let r = x.compose(&y.compose(&z)?)?;
                assoc = assoc.max(l.distance(&r));
                inverse = inverse.max(x.compose(&x.inverse()?)?.distance(&id)).max(x.inverse()?.compose(&x)?.distance(&id));
                action = action.max(if odd {
                    let s = random_odd(grid, &mut rng);
                    x.act_odd(&y.act_odd(&s)?)?.minus(&x.compose(&y)?.act_odd(&s)?).max_abs()
                } else {
                    let s = random_exact(grid, &mut rng);
                    x.act_exact(&y.act_exact(&s)?)?.minus(&x.compose(&y)?.act_exact(&s)?).max_abs()
                });
                let xy = x.compose(&y)?;
                closure = closure
                    .max(x.membership_defect(&t)?.max())
                    .max(xy.membership_defect(&t)?.max())
                    .max(x.inverse()?.membership_defect(&t)?.max());
                let c = KForm::random(grid, 2, 2, &mut rng);
                let h = if odd { GroupElement::odd_field(c.clone(), KForm::zeros(grid, 1))? } else { GroupElement::b_field(c.clone())? };
                let closed_form = GroupElement::new(x.phi.clone(), x.b.plus(&c).minus(&c.pullback(&x.phi)?), x.a.clone())?;
                conj = conj.max(x.conjugate(&h)?.distance(&closed_form));
            }
            report.push(CheckLine::new(format!("group/{label}/associativity"), "the product is associative", assoc, tol));
            report.push(CheckLine::new(format!("group/{label}/inverse"), "inverse formula", inverse, tol));
            report.push(CheckLine::new(format!("group/{label}/left-action"), "the action on sections is a left action", action, tol));
            report.push(CheckLine::new(format!("group/{label}/membership-closure"), "members are closed under products and inverses", closure, tol));
            report.push(CheckLine::new(format!("group/{label}/conjugation-closed-form"), "conjugation by a B-field shifts B by C minus its pullback", conj, self.fixed(1e-12)));
        }
        Ok(())
    }

    fn derivation(&self, report: &mut SuiteReport) -> Result<()> {
        let d = &self.config.derivation;
        let grid = TorusGrid::new(3, d.resolution)?;
        let hodge = HodgeContext::flat(grid);
        let mut rng = self.stream(SuiteName::Derivation, 0);
        let tol = self.fixed(1e-9);
        for kind in [Kind::Exact, Kind::Odd] {
            let label = kind_label(kind);
            let t = match (&d.twist, d.kind == kind) {
                (Some(spec), true) => spec.build(grid, kind)?,
                _ => random_twist(grid, kind, &mut rng)?,
            };
            let (mut defect, mut exactness, mut reassembly, mut exact_part, mut recovered, mut idempotent) =
                (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for _ in 0..d.samples {
                let consts: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
                let c = KForm::constant(grid, 2, &consts);
                let (image, harmonic) = match kind {
                    Kind::Exact => {
                        let s = random_exact(grid, &mut rng);
                        (iota_e_exact(&t, &s)?, Derivation::new(VectorField::zeros(grid), c.clone(), None)?)
                    }
                    Kind::Odd => {
                        let mut s = random_odd(grid, &mut rng);
                        s.f = s.f.minus(&ScalarField::constant(grid, s.f.mean()));
                        let f = t.f().expect("odd twist");
                        // harmonic 1-forms with h₁∧[F] = 0
                        let fm = f.means();
                        let normal = [fm[2], -fm[1], fm[0]];
                        let mut h: Vec<f64> = (0..3).map(|_| rng.uniform(-0.3, 0.3)).collect();
                        let nn: f64 = normal.iter().map(|x| x * x).sum();
                        if nn > 0.0 {
                            let c = h.iter().zip(&normal).map(|(a, b)| a * b).sum::<f64>() / nn;
                            h.iter_mut().zip(&normal).for_each(|(a, b)| *a -= c * b);
                        }
                        let h1 = KForm::constant(grid, 1, &h);
                        let eta = hodge.green(&hodge.codiff(&wedge(&h1, f)?)?)?;
                        let b = c.minus(&eta.scaled(2.0));
                        (iota_e_odd(&t, &s)?, Derivation::new(VectorField::zeros(grid), b, Some(h1.scaled(-1.0)))?)
                    }
                };
                defect = defect.max(image.derivation_defect(&t)?.max()).max(harmonic.derivation_defect(&t)?.max());
                exactness = exactness.max(image.exactness_defect(&t, &hodge)?.norm());
                let mixed = image.plus(&harmonic)?;
                let split = mixed.split(&t, &hodge)?;
                let parts = Derivation::new(VectorField::zeros(grid), split.harmonic_b.clone(), split.harmonic_a.clone())?;
                reassembly = reassembly.max(split.exact.plus(&parts)?.minus(&mixed)?.max_abs());
                exact_part = exact_part.max(split.exact.exactness_defect(&t, &hodge)?.norm());
                let mut miss = hodge.harmonic_projection(&split.harmonic_b)?.minus(&c).max_abs();
                if let (Some(a), Some(want)) = (&split.harmonic_a, &harmonic.a) {
                    miss = miss.max(a.minus(want).max_abs());
                }
                recovered = recovered.max(miss);
                let again = split.exact.split(&t, &hodge)?;
                idempotent = idempotent
                    .max(again.harmonic_b.max_abs())
                    .max(again.harmonic_a.as_ref().map_or(0.0, |a| a.max_abs()));
            }
            let exactness_anchor = if kind == Kind::Exact { "harmonic pairings of the twisted b-part vanish" } else { "harmonic pairings after both corrections vanish" };
            report.push(CheckLine::new(format!("derivation/{label}/iota-derivation-defect"), "images of the section map are derivations", defect, tol));
            report.push(CheckLine::new(format!("derivation/{label}/iota-exactness-defect"), exactness_anchor, exactness, tol));
            report.push(CheckLine::new(format!("derivation/{label}/split-reassembly"), "exact part plus harmonic part returns the derivation", reassembly, tol));
            report.push(CheckLine::new(format!("derivation/{label}/split-exact-part"), exactness_anchor, exact_part, tol));
            report.push(CheckLine::new(format!("derivation/{label}/splitting-recovers-harmonics"), "derivations split as exact plus harmonic", recovered, tol));
            report.push(CheckLine::new(format!("derivation/{label}/split-idempotent"), "splitting the exact part again changes nothing", idempotent, self.fixed(1e-10)));
            if kind == Kind::Odd {
                let gamma = KForm::random(grid, 2, 2, &mut rng);
                let delta = KForm::random(grid, 1, 2, &mut rng);
                let readings = kappa2_right_inverse_report(&t, &hodge, &gamma, &delta)?;
                let best = readings
                    .iter()
                    .filter(|r| r.reading == "sign-corrected")
                    .filter_map(|r| r.residual)
                    .fold(f64::NAN, f64::min);
                report.push(CheckLine::new("derivation/odd/kappa2-right-inverse", "right inverse of the second correction", best, tol));
                report.details = json!({ "kappa2_readings": readings });
            }
        }
        if let Some(spec) = &d.derivation {
            let t = match &d.twist {
                Some(s) => s.build(grid, d.kind)?,
                None if d.kind == Kind::Odd => TwistData::zero_odd(grid),
                None => TwistData::zero_exact(grid),
            };
            let der = spec.build(grid)?;
            let split = der.split(&t, &hodge)?;
            let parts = Derivation::new(VectorField::zeros(grid), split.harmonic_b.clone(), split.harmonic_a.clone())?;
            let re = split.exact.plus(&parts)?.minus(&der)?.max_abs();
            report.push(CheckLine::new("derivation/configured/split-reassembly", "exact part plus harmonic part returns the derivation", re, tol));
            let configured = json!({
                "kind": kind_label(d.kind),
                "derivation_defect": der.derivation_defect(&t)?.max(),
                "exactness_defect_before": der.exactness_defect(&t, &hodge)?.0,
                "exactness_defect_after": split.exact.exactness_defect(&t, &hodge)?.0,
                "exact_part": {
                    "u_norm": split.exact.u.norm(),
                    "b_norm": split.exact.b.norm(),
                    "a_norm": split.exact.a.as_ref().map(|a| a.norm()),
                },
                "harmonic_b_coefficients": split.harmonic_b.means(),
                "harmonic_a_coefficients": split.harmonic_a.as_ref().map(|a| a.means()),
            });
            match &mut report.details {
                serde_json::Value::Object(m) => {
                    m.insert("configured".into(), configured);
                }
                other => *other = json!({ "configured": configured }),
            }
        }
        Ok(())
    }

    fn slice(&self, report: &mut SuiteReport) -> Result<()> {
        let s = &self.config.slice;
        let grid = TorusGrid::new(2, s.matrix_resolution)?;
        let mut rng = self.stream(SuiteName::Slice, 0);
        let probes = s.probes;
        let tol = self.tol();
        let hodge = HodgeContext::flat(grid);
        let exact_metric = match &s.metric {
            Some(spec) => spec.build(grid, false)?,
            None => GenMetric::new(SymTensor2::identity(grid), KForm::random(grid, 2, 2, &mut rng).scaled(0.3), None)?,
        };
        let f = KForm::constant(grid, 2, &[0.4]).plus(&ext_deriv(&KForm::random(grid, 1, 1, &mut rng).scaled(0.3))?);
        let odd_twist = TwistData::odd(KForm::zeros(grid, 3), f)?;
        let odd_metric = GenMetric::new(
            SymTensor2::identity(grid),
            KForm::random(grid, 2, 2, &mut rng).scaled(0.3),
            Some(KForm::random(grid, 1, 1, &mut rng).scaled(0.3)),
        )?;
        for kind in [Kind::Exact, Kind::Odd] {
            let label = kind_label(kind);
            let setting = match kind {
                Kind::Exact => SliceSetting::new(exact_metric.clone(), TwistData::zero_exact(grid))?,
                Kind::Odd => SliceSetting::new(odd_metric.clone(), odd_twist.clone())?,
            };
            let (an, bn, apn, iotan) = match kind {
                Kind::Exact => (OperatorName::AExact, OperatorName::BExact, OperatorName::AFull, OperatorName::IotaExact),
                Kind::Odd => (OperatorName::AOdd, OperatorName::BOdd, OperatorName::AFullOdd, OperatorName::IotaOdd),
            };
            let a = setting.assemble(an)?;
            let b = setting.assemble(bn)?;
            report.push(CheckLine::new(format!("slice/{label}/complex"), "consecutive operators of the elliptic complex compose to zero", complex_check(&b, &a, probes, &mut rng)?, self.fixed(1e-8)));
            let adj = a.adjoint()?;
            report.push(CheckLine::new(format!("slice/{label}/adjoint"), "adjoint identity for the weak metrics", a.adjoint_residual(&adj, probes, &mut rng), self.fixed(1e-10)));
            let fn_residual = match kind {
                Kind::Exact => probe_consistency(&a, &ExactSection::zeros(grid), |x| tangent_of_derivation(&setting.metric, &iota_e_exact(&setting.twist, x)?), probes, &mut rng)?,
                Kind::Odd => probe_consistency(&a, &OddSection::zeros(grid), |x| tangent_of_derivation(&setting.metric, &iota_e_odd(&setting.twist, x)?), probes, &mut rng)?,
            };
            report.push(CheckLine::new(format!("slice/{label}/matrix-matches-operator"), "assembled matrix agrees with the field operator", fn_residual, self.fixed(1e-9)));
            let green = complex_green(&a, &b)?;
            let p = orbit_projector(&a, &green)?;
            let rep = projector_report(&a, &p)?;
            report.push(CheckLine::new(format!("slice/{label}/projector-idempotence"), "orbit projector is idempotent", rep.idempotence, tol.matrix));
            report.push(CheckLine::new(format!("slice/{label}/projector-symmetry"), "orbit projector is self-adjoint for the weak metric", rep.gram_symmetry, self.fixed(1e-9)));
            report.push(CheckLine::new(format!("slice/{label}/projector-trace"), "trace of the projector equals the rank", (rep.trace - rep.rank as f64).abs(), 0.5));
            report.push(CheckLine::new(format!("slice/{label}/image-cokernel-orthogonal"), "codomain splits as image plus adjoint kernel", rep.orthogonality, self.fixed(1e-9)));
            report.push(CheckLine::count(format!("slice/{label}/image-cokernel-dimensions"), "codomain splits as image plus adjoint kernel", rep.image_dim + rep.cokernel_dim, a.codomain.dim()));
            let ap = setting.assemble(apn)?;
            let iota = setting.assemble(iotan)?;
            let factor = (ap.compose(&iota)?.matrix - &a.matrix).amax();
            report.push(CheckLine::new(format!("slice/{label}/factorization"), "full operator after the section map is the exact operator", factor, self.fixed(1e-10)));
            let gens = setting.harmonic_derivations(&hodge)?;
            let harm: Vec<DVector<f64>> = gens.iter().map(|d| ap.domain.coefficients(d)).collect::<Result<_>>()?;
            let p0 = match kind {
                Kind::Exact => Some(harmonic_two_form_projector(&a.codomain, &hodge)?),
                Kind::Odd => None,
            };
            let fg = full_group_decomposition(&a, &ap, &harm, &p, p0.as_ref(), probes, &mut rng)?;
            let r = &fg.report;
            let b2 = binomial(2, 2) + if kind == Kind::Odd { binomial(2, 1) } else { 0 };
            report.push(CheckLine::count(format!("slice/{label}/full-image-rank"), "image of the full operator is the exact image plus F", r.rank_defect, 0));
            report.push(CheckLine::holds(format!("slice/{label}/correction-dimension"), "the correction space is bounded by the harmonic count", r.dim_f <= b2));
            report.push(CheckLine::new(format!("slice/{label}/correction-orthogonal"), "the correction space is orthogonal to the exact image", r.f_orthogonality, self.fixed(1e-9)));
            if let Some(p0r) = r.p0_residual {
                report.push(CheckLine::new(format!("slice/{label}/harmonic-projector"), "projection onto F is the harmonic projector on the adjoint kernel", p0r, self.fixed(1e-8)));
            }
            let ds = direct_sum_checks(&ap, &iota, &harm, &a)?;
            report.push(CheckLine::holds(format!("slice/{label}/direct-sums"), "kernel and image direct-sum decompositions", ds.pass));
            if kind == Kind::Odd {
                let mut worst = 0.0f64;
                let template = GMTangent::zeros(grid, true);
                let v = odd_metric_curved(grid, &mut self.stream(SuiteName::Slice, 1))?;
                let space_v = FieldSpace::new(SpaceKind::OddTangents, &v)?;
                for _ in 0..3 {
                    let x = space_v.random(&mut rng);
                    let t = space_v.synthesize(&template, &x)?;
                    worst = worst.max((space_v.inner(&x, &x) - v.tangent_inner(&t, &t)?).abs());
                }
                report.push(CheckLine::new("slice/odd/twisted-gram-quadrature", "twisted weak metric matches direct quadrature", worst, self.fixed(1e-9)));
            }
        }
        let grid3 = TorusGrid::new(3, s.matrix_resolution)?;
        let closed = KForm::constant(grid3, 2, &[0.3, -0.1, 0.2]).plus(&ext_deriv(&KForm::random(grid3, 1, 1, &mut rng).scaled(0.2))?);
        let flat3 = GenMetric::flat(grid3, true);
        let setting = SliceSetting::new(flat3.clone(), TwistData::odd(KForm::zeros(grid3, 3), closed.clone())?)?;
        let d1 = setting.assemble(OperatorName::DF { degree: 1 })?;
        let d2 = setting.assemble(OperatorName::DF { degree: 2 })?;
        report.push(CheckLine::new("slice/odd/twisted-differential-complex", "the twisted differential squares to zero", complex_check(&d1, &d2, probes.min(5), &mut rng)?, self.fixed(1e-8)));
        let bad = closed.plus(&KForm::random(grid3, 2, 1, &mut rng).scaled(0.3));
        let setting = SliceSetting::new(flat3, TwistData::unvalidated(KForm::zeros(grid3, 3), Some(bad))?)?;
        let d1 = setting.assemble(OperatorName::DF { degree: 1 })?;
        let d2 = setting.assemble(OperatorName::DF { degree: 2 })?;
        report.push(CheckLine::exceeds("slice/odd/twisted-differential-negative-control", "a non-closed twist breaks the twisted complex", complex_check(&d1, &d2, probes.min(5), &mut rng)?, 1e-3));
        Ok(())
    }

    fn strata(&self, report: &mut SuiteReport) -> Result<()> {
        let st = &self.config.strata;
        let grid = TorusGrid::new(2, 8)?;
        let mut rng = self.stream(SuiteName::Strata, 0);
        let tol = self.fixed(1e-9);
        let opts = PoolOptions { translation_step: st.translation_step, tolerance: tol, ..Default::default() };
        let zero = TwistData::zero_exact(grid);
        let rotations = rotation_group(grid)?;
        let mut samples = Vec::new();
        for i in 0..st.samples {
            let omega = KForm::random(grid, 2, 2, &mut rng).scaled(0.3);
            let v = match i % 3 {
                0 => GenMetric::new(SymTensor2::identity(grid), omega, None)?,
                1 => GenMetric::new(SymTensor2::identity(grid), KForm::constant(grid, 2, &[rng.uniform(-1.0, 1.0)]), None)?,
                _ => {
                    let mut g = SymTensor2::identity(grid);
                    g.axpy(0.1, &SymTensor2::random(grid, 1, &mut rng));
                    GenMetric::new(g, omega, None)?.average(rotations.elements())?
                }
            };
            samples.push(v);
        }
        let (mut verified, mut pure, mut orders) = (0usize, 0usize, Vec::new());
        for v in &samples {
            let pool = candidate_pool(grid, &v.g, &opts)?;
            let ok = match isometry_group(&zero, v, &pool, tol) {
                Ok(g) => {
                    let metric = metric_isometry_group(v, &pool, tol)?;
                    let sub = g.diffeos().iter().all(|p| metric.diffeos().contains(p));
                    orders.push(g.order());
                    let c = stratum_conjugator(&zero, v, &g, &HodgeContext::flat(grid), tol);
                    if matches!(&c, Ok(c) if c.report.pass) {
                        pure += 1;
                    }
                    sub && g.elements().iter().all(|e| v.isometry_defect(&zero, e).map(|d| d.max() <= tol).unwrap_or(false))
                }
                Err(_) => false,
            };
            verified += usize::from(ok);
        }
        report.push(CheckLine::count("strata/isometry-groups-verified", "isometry groups are finite groups of isometries over metric isometries", verified, samples.len()));
        report.push(CheckLine::count("strata/conjugator-pure-pairs", "the stratum conjugator turns the isometry group into pure pairs", pure, samples.len()));
        let flat_pool = candidate_pool(grid, &SymTensor2::identity(grid), &opts)?;
        let mut equal = 0usize;
        let flat_samples: Vec<&GenMetric> = samples.iter().filter(|v| v.g.minus(&SymTensor2::identity(grid)).max_abs() == 0.0).collect();
        for i in 0..st.conjugators {
            let v = flat_samples[i % flat_samples.len()];
            let psi = flat_pool[rng.index(flat_pool.len())].clone();
            let conj = GroupElement::new(psi, KForm::random(grid, 2, 2, &mut rng), None)?;
            if conjugation_identity_check(&zero, v, &conj, &opts)?.equal {
                equal += 1;
            }
        }
        report.push(CheckLine::count("strata/conjugation-identity", "conjugating an isometry group gives the isometry group of the moved metric", equal, st.conjugators));
        let mut g = SymTensor2::identity(grid);
        g.axpy(0.1, &SymTensor2::random(grid, 1, &mut rng));
        let v = GenMetric::new(g, KForm::random(grid, 2, 2, &mut rng).scaled(0.3), None)?.average(rotations.elements())?;
        let iso = isometry_group(&zero, &v, &candidate_pool(grid, &v.g, &opts)?, tol)?;
        report.push(CheckLine::holds("strata/averaging-contains-group", "averaging over a finite group yields a metric it preserves", iso.contains_all(&rotations, tol)));
        let flat = GenMetric::flat(grid, false);
        let linear = PoolOptions { translation_step: None, ..opts };
        let full = isometry_group(&zero, &flat, &candidate_pool(grid, &flat.g, &linear)?, tol)?;
        let found = matches!(invariant_perturbation(&zero, &flat, &rotations, &full, tol)?, PerturbationOutcome::Found(_));
        report.push(CheckLine::holds("strata/invariant-perturbation", "a G-invariant perturbation separates G from a larger group", found));

        let grid3 = TorusGrid::new(3, 8)?;
        let flat3 = GenMetric::flat(grid3, false);
        let three = vec![
            StrataSample { name: "T3 untwisted".into(), twist: TwistData::zero_exact(grid3), metric: flat3.clone() },
            StrataSample { name: "T3 volume twist".into(), twist: TwistData::exact(KForm::constant(grid3, 3, &[1.0]))?, metric: flat3 },
        ];
        let r3 = moduli_projection_report(&three, &PoolOptions { translation_step: None, ..opts })?;
        report.push(CheckLine::holds("strata/projection-well-defined", "generalized strata map to metric strata", r3.well_defined));
        report.push(CheckLine::holds("strata/strictly-finer", "the twist separates strata over one metric stratum", r3.strictly_finer));
        let mut details = json!({ "t2_isometry_orders": orders, "t3_projection": r3 });
        if !st.family.is_empty() {
            let fgrid = TorusGrid::new(st.dimension, st.resolution)?;
            let family = st
                .family
                .iter()
                .map(|f| Ok(StrataSample { name: f.name.clone(), twist: f.twist.build(fgrid, Kind::Exact)?, metric: f.metric.build(fgrid, false)? }))
                .collect::<Result<Vec<_>>>()?;
            let rf = moduli_projection_report(&family, &opts)?;
            report.push(CheckLine::holds("strata/family/projection-well-defined", "generalized strata map to metric strata", rf.well_defined));
            report.push(CheckLine::holds(
                "strata/family/conjugators",
                "the stratum conjugator turns the isometry group into pure pairs",
                rf.lines.iter().all(|l| l.conjugator_found && l.subgroup_of_metric),
            ));
            details["family"] = serde_json::to_value(&rf).expect("serializable");
        }
        report.details = details;
        Ok(())
    }
}

fn kind_label(kind: Kind) -> &'static str {
    match kind {
        Kind::Exact => "exact",
        Kind::Odd => "odd",
    }
}

fn axiom_anchor(axiom: &str) -> &'static str {
    match axiom {
        "C1" => "Jacobi identity of the Dorfman bracket",
        "C2" => "anchor compatibility with the pairing",
        "C3" => "symmetric part of the bracket is the differential of the pairing",
        "C3-polarized" => "polarized symmetric part",
        "C4" => "Leibniz rule",
        "C5" => "anchor is a bracket homomorphism",
        _ => "Courant axiom",
    }
}

fn det3(m: &[Vec<i64>]) -> i64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn random_exact(grid: TorusGrid, rng: &mut Stream) -> ExactSection {
    ExactSection::new(VectorField::random(grid, 1, rng), KForm::random(grid, 1, 1, rng)).expect("same grid")
}

fn random_odd(grid: TorusGrid, rng: &mut Stream) -> OddSection {
    OddSection::new(VectorField::random(grid, 1, rng), ScalarField::random(grid, 1, rng), KForm::random(grid, 1, 1, rng))
        .expect("same grid")
}

/// Random closed twist; `F` is a constant plus an exact form.
fn random_twist(grid: TorusGrid, kind: Kind, rng: &mut Stream) -> Result<TwistData> {
    let n = grid.dim();
    let h = if n == 3 { KForm::random(grid, 3, 2, rng) } else { KForm::zeros(grid, 3) };
    match kind {
        Kind::Exact => TwistData::exact(h),
        Kind::Odd => {
            let consts: Vec<f64> = (0..binomial(n, 2)).map(|_| rng.uniform(-0.5, 0.5)).collect();
            let f = KForm::constant(grid, 2, &consts).plus(&ext_deriv(&KForm::random(grid, 1, 1, rng))?);
            TwistData::odd(h, f)
        }
    }
}

fn random_element(grid: TorusGrid, odd: bool, rotations: &[Vec<Vec<i64>>], rng: &mut Stream) -> Result<GroupElement> {
    let shift: Vec<i64> = (0..grid.dim()).map(|_| rng.index(grid.res()) as i64).collect();
    let phi = AffineDiffeo::new(grid, rotations[rng.index(rotations.len())].clone(), shift)?;
    let b = KForm::random(grid, 2, 2, rng);
    GroupElement::new(phi, b, odd.then(|| KForm::random(grid, 1, 1, rng)))
}

fn odd_metric_curved(grid: TorusGrid, rng: &mut Stream) -> Result<GenMetric> {
    let mut g = SymTensor2::identity(grid);
    g.axpy(0.2, &SymTensor2::random(grid, 1, rng));
    GenMetric::new(g, KForm::random(grid, 2, 2, rng).scaled(0.3), Some(KForm::random(grid, 1, 1, rng).scaled(0.4)))
}

/// The four rotations by quarter turns of `T²`.
pub fn rotation_group(grid: TorusGrid) -> Result<FiniteSymmetryGroup> {
    let mut m = vec![vec![1, 0], vec![0, 1]];
    let mut out = Vec::new();
    for _ in 0..4 {
        out.push(GroupElement::diffeo(AffineDiffeo::linear(grid, m.clone())?, grid, false)?);
        m = vec![vec![-m[1][0], -m[1][1]], vec![m[0][0], m[0][1]]];
    }
    FiniteSymmetryGroup::new(out, 1e-12)
}

/// Suites of a subcommand, in report order.
pub fn run_suites(runner: &Runner<'_>, suites: &[SuiteName]) -> Vec<SuiteReport> {
    suites.iter().map(|&s| runner.run(s)).collect()
}
