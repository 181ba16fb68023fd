//! Small linear-algebra kernels: preconditioned conjugate gradients and
//! SVD-based rank, null-space and pseudo-inverse helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{GeomError, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG for a symmetric positive (semi)definite operator.
///
/// Stops when `‖b − A x‖ ≤ tol ‖b‖`.
pub fn pcg(
    what: &'static str,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best = 1.0;
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        best = rel;
        if rel <= tol {
            return Ok(x);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    // true residual, in case the recurrence drifted
    let ax = apply(&x);
    let res: Vec<f64> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
    let true_rel = dot(&res, &res).sqrt() / bnorm;
    if true_rel <= tol {
        Ok(x)
    } else {
        Err(GeomError::NoConvergence {
            what,
            residual: true_rel.max(best),
        })
    }
}

/// Singular value decomposition with a relative rank threshold.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular: DVector<f64>,
    pub v_t: DMatrix<f64>,
    pub rank: usize,
    pub threshold: f64,
}

impl Svd {
    /// Full SVD; singular values below `rel · σ_max` count as zero.
    pub fn new(m: &DMatrix<f64>, rel: f64) -> Svd {
        let (rows, cols) = m.shape();
        // pad to square so that `u` and `v_t` are complete bases
        let size = rows.max(cols);
        let mut sq = DMatrix::zeros(size, size);
        sq.view_mut((0, 0), (rows, cols)).copy_from(m);
        let svd = nalgebra::SVD::new(sq, true, true);
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u_full = svd.u.expect("requested");
        let vt_full = svd.v_t.expect("requested");
        let singular = DVector::from_iterator(size, order.iter().map(|&i| svd.singular_values[i]));
        let mut u = DMatrix::zeros(size, size);
        let mut v_t = DMatrix::zeros(size, size);
        for (new, &old) in order.iter().enumerate() {
            u.set_column(new, &u_full.column(old));
            v_t.set_row(new, &vt_full.row(old));
        }
        let threshold = rel * singular.get(0).copied().unwrap_or(0.0);
        let rank = singular
            .iter()
            .take(rows.min(cols))
            .filter(|&&s| s > threshold)
            .count();
        Svd {
            // kept with all `size` columns (rows for `v_t`) so the null spaces are complete
            u: u.rows(0, rows).into_owned(),
            singular,
            v_t: v_t.columns(0, cols).into_owned(),
            rank,
            threshold,
        }
    }

    /// Orthonormal basis of the column space.
    pub fn range(&self) -> DMatrix<f64> {
        self.u.columns(0, self.rank).into_owned()
    }

    /// Orthonormal basis of the null space.
    pub fn kernel(&self) -> DMatrix<f64> {
        // rows past the rank span ker ⊕ (padding); project and re-orthonormalize
        let cols = self.v_t.ncols();
        let size = self.v_t.nrows();
        let null = self.v_t.rows(self.rank, size - self.rank).transpose();
        complete_basis(&null, cols - self.rank)
    }

    /// Orthonormal basis of the left null space.
    pub fn cokernel(&self) -> DMatrix<f64> {
        let rows = self.u.nrows();
        let size = self.u.ncols();
        let null = self.u.columns(self.rank, size - self.rank).into_owned();
        complete_basis(&null, rows - self.rank)
    }

    /// Moore–Penrose inverse with the same threshold.
    pub fn pinv(&self) -> DMatrix<f64> {
        let (rows, cols) = (self.u.nrows(), self.v_t.ncols());
        let mut out = DMatrix::zeros(cols, rows);
        for i in 0..self.rank {
            let v = self.v_t.row(i).transpose();
            let u = self.u.column(i);
            out += (v * u.transpose()) / self.singular[i];
        }
        out
    }

    /// Smallest retained singular value.
    pub fn smallest_nonzero(&self) -> Option<f64> {
        self.rank.checked_sub(1).map(|i| self.singular[i])
    }

    /// True when some singular value sits within a factor 10 of the threshold.
    pub fn rank_is_ambiguous(&self) -> bool {
        let t = self.threshold;
        self.singular.iter().any(|&s| s > t / 10.0 && s < t * 10.0)
    }
}

/// Orthonormal basis (`want` columns) of the column span of `m`.
fn complete_basis(m: &DMatrix<f64>, want: usize) -> DMatrix<f64> {
    if want == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    if m.ncols() == want {
        return m.clone();
    }
    let svd = nalgebra::SVD::new(m.clone(), true, false);
    let u = svd.u.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(m.nrows(), want);
    for (c, &i) in order.iter().take(want).enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Symmetric square root of an SPD matrix and its inverse.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(GeomError::NotPositiveDefinite { node: 0 });
    }
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * q.transpose();
    let inv = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * q.transpose();
    Ok((root, inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcg_solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = [1.0, 2.0, 3.0];
        let x = pcg("test", |v| (&a * DVector::from_column_slice(v)).as_slice().to_vec(), |v| v.to_vec(), &b, 1e-14, 50).unwrap();
        let r = &a * DVector::from_vec(x) - DVector::from_column_slice(&b);
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn svd_subspaces() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let s = Svd::new(&m, 1e-10);
        assert_eq!(s.rank, 1);
        assert_eq!(s.kernel().ncols(), 1);
        assert_eq!(s.cokernel().ncols(), 2);
        assert!((&m * s.kernel()).amax() < 1e-12);
        assert!((s.cokernel().transpose() * &m).amax() < 1e-12);
        let p = s.pinv();
        assert!((&m * &p * &m - &m).amax() < 1e-12);
    }

    #[test]
    fn null_spaces_of_tall_and_wide_matrices() {
        let tall = DMatrix::from_fn(7, 3, |r, c| ((r + 1) * (c + 1)) as f64 + if c == 2 { r as f64 } else { 0.0 });
        for m in [tall.clone(), tall.transpose()] {
            let s = Svd::new(&m, 1e-10);
            let k = s.kernel();
            let c = s.cokernel();
            assert_eq!(k.ncols(), m.ncols() - s.rank);
            assert_eq!(c.ncols(), m.nrows() - s.rank);
            assert!((&m * &k).amax() < 1e-10);
            assert!((c.transpose() * &m).amax() < 1e-10);
            let kk = k.transpose() * &k;
            assert!((kk - DMatrix::identity(k.ncols(), k.ncols())).amax() < 1e-10);
        }
    }
}
