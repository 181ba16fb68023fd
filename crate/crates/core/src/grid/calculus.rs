//! Spectral Cartan calculus: d, wedge, interior products and Lie derivatives.

use super::spectral::Spectral;
use super::{
    binomial, index_position, multi_indices, same_grid, sort_sign, sym_index, Field, KForm,
    ScalarField, SymTensor2, VectorField,
};
use crate::error::{GeomError, Result};

fn lift_all(sp: &Spectral, comps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let specs: Vec<_> = comps.iter().map(|c| sp.forward(c)).collect();
    sp.lift_spectra(&specs)
}

fn lower_all(sp: &Spectral, fine: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    sp.lower_many(&fine)
}

fn fine_zeros(sp: &Spectral, count: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; sp.fine.pow(sp.dim as u32)]; count]
}

#[inline]
fn add_product(out: &mut [f64], s: f64, a: &[f64], b: &[f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o += s * x * y;
    }
}

/// Sign of `dx^i ∧ dx^I` relative to the sorted index.
fn insertion_sign(i: usize, index: &[usize]) -> f64 {
    if index.iter().filter(|&&j| j < i).count() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Exterior derivative without the top-degree guard.
pub(crate) fn d_any(w: &KForm) -> KForm {
    let grid = w.grid();
    let n = grid.dim();
    let k = w.degree();
    let sp = grid.spectral();
    let mut out = KForm::zeros(grid, k + 1);
    if k >= n {
        return out;
    }
    for (c, index) in multi_indices(n, k).iter().enumerate() {
        let spec = sp.forward(w.component(c));
        for i in (0..n).filter(|i| !index.contains(i)) {
            let mut target = index.clone();
            target.push(i);
            target.sort_unstable();
            let pos = index_position(n, &target).expect("valid index");
            let s = insertion_sign(i, index);
            let di = sp.derivative_of(&spec, i);
            for (o, v) in out.component_mut(pos).iter_mut().zip(di) {
                *o += s * v;
            }
        }
    }
    out
}

/// The de Rham differential, computed spectrally.
pub fn ext_deriv(w: &KForm) -> Result<KForm> {
    if w.degree() >= w.grid().dim() {
        return Err(GeomError::Degree {
            op: "ext_deriv",
            degree: w.degree(),
        });
    }
    Ok(d_any(w))
}

/// Euclidean transpose of `d`: the codifferential of the identity metric.
pub(crate) fn d_transpose(w: &KForm) -> KForm {
    let grid = w.grid();
    let n = grid.dim();
    let k = w.degree();
    let sp = grid.spectral();
    if k == 0 {
        return KForm::zeros(grid, 0);
    }
    let mut out = KForm::zeros(grid, k - 1);
    let lower = multi_indices(n, k - 1);
    for (c, index) in multi_indices(n, k).iter().enumerate() {
        if index.is_empty() {
            continue;
        }
        let spec = sp.forward(w.component(c));
        for i in index.iter().copied() {
            let rest: Vec<usize> = index.iter().copied().filter(|&j| j != i).collect();
            let pos = lower.iter().position(|m| *m == rest).expect("valid index");
            let s = insertion_sign(i, &rest);
            let di = sp.derivative_of(&spec, i);
            for (o, v) in out.component_mut(pos).iter_mut().zip(di) {
                *o -= s * v;
            }
        }
    }
    out
}

/// Dealiased wedge product without the degree guard (overflow gives an empty form).
pub(crate) fn wedge_any(a: &KForm, b: &KForm) -> KForm {
    let grid = a.grid();
    let n = grid.dim();
    let (p, q) = (a.degree(), b.degree());
    if p + q > n {
        return KForm::zeros(grid, p + q);
    }
    let sp = grid.spectral();
    let la = lift_all(&sp, a.comps());
    let lb = lift_all(&sp, b.comps());
    let mut fine = fine_zeros(&sp, binomial(n, p + q));
    let ia = multi_indices(n, p);
    let ib = multi_indices(n, q);
    for (x, i) in ia.iter().enumerate() {
        for (y, j) in ib.iter().enumerate() {
            let mut seq = i.clone();
            seq.extend_from_slice(j);
            let (s, sorted) = sort_sign(&seq);
            if s == 0 {
                continue;
            }
            let pos = index_position(n, &sorted).expect("valid index");
            add_product(&mut fine[pos], s as f64, &la[x], &lb[y]);
        }
    }
    KForm::raw(grid, p + q, lower_all(&sp, fine))
}

pub fn wedge(a: &KForm, b: &KForm) -> Result<KForm> {
    same_grid(a.grid(), b.grid())?;
    if a.degree() + b.degree() > a.grid().dim() {
        return Err(GeomError::Degree {
            op: "wedge",
            degree: a.degree() + b.degree(),
        });
    }
    Ok(wedge_any(a, b))
}

/// Interior product contracting the first slot; degree 0 yields zero.
pub(crate) fn interior_any(u: &VectorField, w: &KForm) -> KForm {
    let grid = w.grid();
    let n = grid.dim();
    let k = w.degree();
    if k == 0 {
        return KForm::zeros(grid, 0);
    }
    let mut out = KForm::zeros(grid, k - 1);
    if w.component_count() == 0 {
        return out;
    }
    let sp = grid.spectral();
    let lu = lift_all(&sp, &(0..n).map(|i| u.component(i).to_vec()).collect::<Vec<_>>());
    let lw = lift_all(&sp, w.comps());
    let mut fine = fine_zeros(&sp, out.component_count());
    let lower = multi_indices(n, k - 1);
    for (c, index) in multi_indices(n, k).iter().enumerate() {
        for (r, &i) in index.iter().enumerate() {
            let rest: Vec<usize> = index.iter().copied().filter(|&j| j != i).collect();
            let pos = lower.iter().position(|m| *m == rest).expect("valid index");
            let s = if r % 2 == 0 { 1.0 } else { -1.0 };
            add_product(&mut fine[pos], s, &lu[i], &lw[c]);
        }
    }
    for (c, v) in lower_all(&sp, fine).into_iter().enumerate() {
        out.component_mut(c).copy_from_slice(&v);
    }
    out
}

/// `i_u ω`, contracting `u` into the first slot.
pub fn interior(u: &VectorField, w: &KForm) -> Result<KForm> {
    same_grid(u.grid(), w.grid())?;
    if w.degree() == 0 {
        return Err(GeomError::Degree {
            op: "interior",
            degree: 0,
        });
    }
    Ok(interior_any(u, w))
}

/// Lie derivative of a form via Cartan's formula.
pub fn lie_form(u: &VectorField, w: &KForm) -> Result<KForm> {
    same_grid(u.grid(), w.grid())?;
    let n = w.grid().dim();
    let k = w.degree();
    let mut out = if k < n {
        interior_any(u, &d_any(w))
    } else {
        KForm::zeros(w.grid(), k)
    };
    if k > 0 {
        out.axpy(1.0, &d_any(&interior_any(u, w)));
    }
    Ok(out)
}

/// `u(f) = Σ u^i ∂_i f`.
pub fn directional(u: &VectorField, f: &ScalarField) -> Result<ScalarField> {
    same_grid(u.grid(), f.grid())?;
    let grid = f.grid();
    let n = grid.dim();
    let sp = grid.spectral();
    let spec = sp.forward(f.values());
    let mut specs: Vec<_> = (0..n).map(|i| sp.derivative_spectrum(&spec, i)).collect();
    specs.extend((0..n).map(|i| sp.forward(u.component(i))));
    let lifted = sp.lift_spectra(&specs);
    let mut fine = vec![0.0; sp.fine.pow(n as u32)];
    for i in 0..n {
        add_product(&mut fine, 1.0, &lifted[n + i], &lifted[i]);
    }
    ScalarField::new(grid, sp.lower(&fine))
}

/// Lie bracket `[u, v]^j = u^i ∂_i v^j − v^i ∂_i u^j`.
pub fn lie_bracket(u: &VectorField, v: &VectorField) -> Result<VectorField> {
    same_grid(u.grid(), v.grid())?;
    let grid = u.grid();
    let n = grid.dim();
    let sp = grid.spectral();
    let su: Vec<_> = (0..n).map(|i| sp.forward(u.component(i))).collect();
    let sv: Vec<_> = (0..n).map(|i| sp.forward(v.component(i))).collect();
    // layout: u, v, then ∂_i v^j and ∂_i u^j at n·j + i
    let mut specs: Vec<_> = su.iter().chain(&sv).cloned().collect();
    for s in [&sv, &su] {
        for j in 0..n {
            for i in 0..n {
                specs.push(sp.derivative_spectrum(&s[j], i));
            }
        }
    }
    let l = sp.lift_spectra(&specs);
    let (lu, lv) = (&l[..n], &l[n..2 * n]);
    let (dv, du) = (&l[2 * n..2 * n + n * n], &l[2 * n + n * n..]);
    let fine: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut acc = vec![0.0; sp.fine.pow(n as u32)];
            for i in 0..n {
                add_product(&mut acc, 1.0, &lu[i], &dv[n * j + i]);
                add_product(&mut acc, -1.0, &lv[i], &du[n * j + i]);
            }
            acc
        })
        .collect();
    VectorField::from_components(grid, sp.lower_many(&fine).into_iter().map(|c| ScalarField::new(grid, c)).collect::<Result<_>>()?)
}

/// `(L_u g)_{ij} = u^k ∂_k g_{ij} + g_{kj} ∂_i u^k + g_{ik} ∂_j u^k`.
pub fn lie_sym(u: &VectorField, g: &SymTensor2) -> Result<SymTensor2> {
    same_grid(u.grid(), g.grid())?;
    let grid = g.grid();
    let n = grid.dim();
    let sp = grid.spectral();
    let m = n * (n + 1) / 2;
    let su: Vec<_> = (0..n).map(|i| sp.forward(u.component(i))).collect();
    let sg: Vec<_> = (0..m).map(|c| sp.forward(g.parts()[c])).collect();
    // layout: u, g, ∂_i u^k at n·i + k, ∂_k g_c at n·c + k
    let mut specs: Vec<_> = su.iter().chain(&sg).cloned().collect();
    for i in 0..n {
        for k in 0..n {
            specs.push(sp.derivative_spectrum(&su[k], i));
        }
    }
    for s in &sg {
        for k in 0..n {
            specs.push(sp.derivative_spectrum(s, k));
        }
    }
    let l = sp.lift_spectra(&specs);
    let (lu, lg) = (&l[..n], &l[n..n + m]);
    let du = &l[n + m..n + m + n * n];
    let dg = &l[n + m + n * n..];
    let mut fine = Vec::with_capacity(m);
    let mut slots = Vec::with_capacity(m);
    for i in 0..n {
        for j in i..n {
            let mut acc = vec![0.0; sp.fine.pow(n as u32)];
            let c = sym_index(n, i, j);
            for k in 0..n {
                add_product(&mut acc, 1.0, &lu[k], &dg[n * c + k]);
                add_product(&mut acc, 1.0, &lg[sym_index(n, k, j)], &du[n * i + k]);
                add_product(&mut acc, 1.0, &lg[sym_index(n, i, k)], &du[n * j + k]);
            }
            fine.push(acc);
            slots.push((i, j));
        }
    }
    let mut out = SymTensor2::zeros(grid);
    for ((i, j), v) in slots.into_iter().zip(sp.lower_many(&fine)) {
        out.get_mut(i, j).copy_from_slice(&v);
    }
    Ok(out)
}

/// Dealiased pointwise product of two functions.
pub fn mul_scalar(f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    same_grid(f.grid(), g.grid())?;
    let sp = f.grid().spectral();
    let (a, b) = sp.lift_pair(f.values(), g.values());
    let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    ScalarField::new(f.grid(), sp.lower(&prod))
}

fn scale_parts(sp: &Spectral, f: &ScalarField, parts: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut comps: Vec<Vec<f64>> = vec![f.values().to_vec()];
    comps.extend(parts.iter().map(|p| p.to_vec()));
    let lifted = lift_all(sp, &comps);
    let fine: Vec<Vec<f64>> = lifted[1..]
        .iter()
        .map(|c| c.iter().zip(&lifted[0]).map(|(a, b)| a * b).collect())
        .collect();
    sp.lower_many(&fine)
}

/// Dealiased product `f · ω`.
pub fn mul_form(f: &ScalarField, w: &KForm) -> Result<KForm> {
    same_grid(f.grid(), w.grid())?;
    let sp = f.grid().spectral();
    let parts: Vec<&[f64]> = w.comps().iter().map(|c| c.as_slice()).collect();
    Ok(KForm::raw(w.grid(), w.degree(), scale_parts(&sp, f, &parts)))
}

/// Dealiased product `f · u`.
pub fn mul_vector(f: &ScalarField, u: &VectorField) -> Result<VectorField> {
    same_grid(f.grid(), u.grid())?;
    let sp = f.grid().spectral();
    let mut out = u.clone();
    let parts: Vec<Vec<f64>> = out.parts_mut().into_iter().map(|p| p.to_vec()).collect();
    let refs: Vec<&[f64]> = parts.iter().map(|p| p.as_slice()).collect();
    for (p, v) in out.parts_mut().into_iter().zip(scale_parts(&sp, f, &refs)) {
        p.copy_from_slice(&v);
    }
    Ok(out)
}

/// Exterior derivative of a function as a 1-form.
pub fn grad_form(f: &ScalarField) -> KForm {
    d_any(&f.as_form())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, TorusGrid};

    fn grid2() -> TorusGrid {
        TorusGrid::new(2, 16).unwrap()
    }

    fn close(a: &impl Field, b: &impl Field, tol: f64) -> bool {
        a.parts()
            .iter()
            .zip(b.parts())
            .all(|(p, q)| p.iter().zip(q).all(|(x, y)| (x - y).abs() <= tol))
    }

    #[test]
    fn d_of_cosine() {
        let g = grid2();
        let f = ScalarField::from_fn(g, |x| x[0].cos()).as_form();
        let df = ext_deriv(&f).unwrap();
        let want = KForm::from_fn(g, 1, |c, x| if c == 0 { -x[0].sin() } else { 0.0 });
        assert!(close(&df, &want, 1e-12));
    }

    #[test]
    fn d_of_constant_one_form_vanishes() {
        let g = grid2();
        let a = KForm::constant(g, 1, &[1.0, 0.0]);
        assert!(ext_deriv(&a).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn d_of_sin_dx2() {
        let g = grid2();
        let a = KForm::monomial(&ScalarField::from_fn(g, |x| x[0].sin()), &[1]).unwrap();
        let want = KForm::from_fn(g, 2, |_, x| x[0].cos());
        assert!(close(&ext_deriv(&a).unwrap(), &want, 1e-12));
    }

    #[test]
    fn top_degree_d_rejected() {
        let g = grid2();
        assert!(ext_deriv(&KForm::zeros(g, 2)).is_err());
    }

    #[test]
    fn wedge_signs() {
        let g = grid2();
        let dx1 = KForm::constant(g, 1, &[1.0, 0.0]);
        let dx2 = KForm::constant(g, 1, &[0.0, 1.0]);
        assert!(wedge(&dx1, &dx1).unwrap().max_abs() < 1e-15);
        let a = wedge(&dx1, &dx2).unwrap();
        let b = wedge(&dx2, &dx1).unwrap();
        assert!(close(&a, &b.scaled(-1.0), 1e-14));
        assert!((a.component(0)[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn wedge_matches_pointwise_oracle() {
        let g = grid2();
        let a = KForm::monomial(&ScalarField::from_fn(g, |x| x[0].cos()), &[0]).unwrap();
        let b = KForm::monomial(&ScalarField::from_fn(g, |x| x[1].sin()), &[1]).unwrap();
        let w = wedge(&a, &b).unwrap();
        for p in 0..g.len() {
            let x = g.coords(p);
            assert!((w.component(0)[p] - x[0].cos() * x[1].sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_frame_contractions() {
        let g = grid2();
        let vol = KForm::constant(g, 2, &[1.0]);
        let a = interior(&VectorField::coordinate(g, 0), &vol).unwrap();
        let b = interior(&VectorField::coordinate(g, 1), &vol).unwrap();
        assert!(close(&a, &KForm::constant(g, 1, &[0.0, 1.0]), 1e-14));
        assert!(close(&b, &KForm::constant(g, 1, &[-1.0, 0.0]), 1e-14));
        assert!(interior(&VectorField::coordinate(g, 0), &KForm::zeros(g, 0)).is_err());
    }

    #[test]
    fn interior_of_function_times_dx1() {
        let g = grid2();
        let f = ScalarField::from_fn(g, |x| x[1].cos());
        let u = VectorField::from_fn(g, |i, x| if i == 0 { x[0].sin() } else { 0.3 });
        let r = interior(&u, &KForm::monomial(&f, &[0]).unwrap()).unwrap();
        for p in 0..g.len() {
            let x = g.coords(p);
            assert!((r.component(0)[p] - x[1].cos() * x[0].sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn lie_of_cosine_along_first_axis() {
        let g = grid2();
        let f = ScalarField::from_fn(g, |x| x[0].cos()).as_form();
        let l = lie_form(&VectorField::coordinate(g, 0), &f).unwrap();
        let want = KForm::from_fn(g, 0, |_, x| -x[0].sin());
        assert!(close(&l, &want, 1e-12));
    }

    #[test]
    fn lie_of_constant_top_form() {
        let g = grid2();
        let vol = KForm::constant(g, 2, &[2.0]);
        let l = lie_form(&VectorField::constant(g, &[0.4, -1.0]), &vol).unwrap();
        assert!(l.max_abs() < 1e-13);
    }

    #[test]
    fn lie_sym_directional() {
        let g = grid2();
        let h = SymTensor2::from_fn(g, |i, j, x| if i == j { 1.0 + 0.5 * x[0].sin() } else { 0.0 });
        let l = lie_sym(&VectorField::coordinate(g, 0), &h).unwrap();
        let want = SymTensor2::from_fn(g, |i, j, x| if i == j { 0.5 * x[0].cos() } else { 0.0 });
        assert!(close(&l, &want, 1e-12));
        let flat = SymTensor2::identity(g);
        let k = lie_sym(&VectorField::constant(g, &[1.0, 2.0]), &flat).unwrap();
        assert!(k.max_abs() < 1e-13);
    }

    #[test]
    fn d_transpose_is_adjoint_of_d() {
        let g = TorusGrid::new(3, 8).unwrap();
        let a = KForm::from_fn(g, 1, |c, x| ((c + 1) as f64 * x[0] + x[2]).sin() + x[1].cos());
        let w = KForm::from_fn(g, 2, |c, x| (x[1] - (c as f64) * x[2]).cos() * 0.5);
        let lhs = d_any(&a).dot(&w);
        let rhs = a.dot(&d_transpose(&w));
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }
}
