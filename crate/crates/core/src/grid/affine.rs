use serde::{Deserialize, Serialize};

use super::{multi_indices, Field, KForm, ScalarField, SymTensor2, TorusGrid, VectorField};
use crate::error::{GeomError, Result};

/// The torus map `x ↦ A x + 2π s / N` with `A ∈ GL(n, Z)` and integer shift `s`.
///
/// Such maps permute grid nodes, so pulling fields back is exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AffineDiffeo {
    matrix: Vec<Vec<i64>>,
    translation: Vec<i64>,
    res: usize,
}

fn det(m: &[Vec<i64>]) -> i64 {
    match m.len() {
        0 => 1,
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => (0..m.len())
            .map(|c| {
                let minor: Vec<Vec<i64>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(j, _)| *j != c)
                            .map(|(_, v)| *v)
                            .collect()
                    })
                    .collect();
                let s = if c % 2 == 0 { 1 } else { -1 };
                s * m[0][c] * det(&minor)
            })
            .sum(),
    }
}

impl AffineDiffeo {
    pub fn new(grid: TorusGrid, matrix: Vec<Vec<i64>>, translation: Vec<i64>) -> Result<Self> {
        let n = grid.dim();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) || translation.len() != n {
            return Err(GeomError::Shape(format!("affine map on T^{n} needs an {n}x{n} matrix")));
        }
        if det(&matrix).abs() != 1 {
            return Err(GeomError::NotUnimodular(matrix.concat()));
        }
        let res = grid.res() as i64;
        let translation = translation.iter().map(|t| t.rem_euclid(res)).collect();
        Ok(AffineDiffeo {
            matrix,
            translation,
            res: grid.res(),
        })
    }

    pub fn identity(grid: TorusGrid) -> Self {
        let n = grid.dim();
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| i64::from(i == j)).collect())
            .collect();
        AffineDiffeo {
            matrix,
            translation: vec![0; n],
            res: grid.res(),
        }
    }

    pub fn translation(grid: TorusGrid, shift: &[i64]) -> Self {
        let mut id = Self::identity(grid);
        id.translation = shift
            .iter()
            .map(|t| t.rem_euclid(grid.res() as i64))
            .collect();
        id
    }

    pub fn linear(grid: TorusGrid, matrix: Vec<Vec<i64>>) -> Result<Self> {
        let n = grid.dim();
        Self::new(grid, matrix, vec![0; n])
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn matrix(&self) -> &[Vec<i64>] {
        &self.matrix
    }

    pub fn shift(&self) -> &[i64] {
        &self.translation
    }

    pub fn det(&self) -> i64 {
        det(&self.matrix)
    }

    pub fn is_identity(&self) -> bool {
        self.translation.iter().all(|&t| t == 0)
            && self
                .matrix
                .iter()
                .enumerate()
                .all(|(i, r)| r.iter().enumerate().all(|(j, &v)| v == i64::from(i == j)))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineDiffeo) -> AffineDiffeo {
        let n = self.dim();
        let res = self.res as i64;
        let matrix = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| self.matrix[i][k] * other.matrix[k][j]).sum())
                    .collect()
            })
            .collect();
        let translation = (0..n)
            .map(|i| {
                let t: i64 = (0..n)
                    .map(|k| self.matrix[i][k] * other.translation[k])
                    .sum::<i64>()
                    + self.translation[i];
                t.rem_euclid(res)
            })
            .collect();
        AffineDiffeo {
            matrix,
            translation,
            res: self.res,
        }
    }

    fn inverse_matrix(&self) -> Vec<Vec<i64>> {
        let n = self.dim();
        let d = self.det();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        // adjugate entry (i, j) = cofactor (j, i)
                        let minor: Vec<Vec<i64>> = (0..n)
                            .filter(|&r| r != j)
                            .map(|r| {
                                (0..n)
                                    .filter(|&c| c != i)
                                    .map(|c| self.matrix[r][c])
                                    .collect()
                            })
                            .collect();
                        let s = if (i + j) % 2 == 0 { 1 } else { -1 };
                        s * det(&minor) * d
                    })
                    .collect()
            })
            .collect()
    }

    pub fn inverse(&self) -> AffineDiffeo {
        let n = self.dim();
        let inv = self.inverse_matrix();
        let res = self.res as i64;
        let translation = (0..n)
            .map(|i| {
                let t: i64 = -(0..n).map(|k| inv[i][k] * self.translation[k]).sum::<i64>();
                t.rem_euclid(res)
            })
            .collect();
        AffineDiffeo {
            matrix: inv,
            translation,
            res: self.res,
        }
    }

    /// Image of a grid node.
    pub fn apply_node(&self, node: &[usize]) -> [usize; 3] {
        let n = self.dim();
        let res = self.res as i64;
        let mut out = [0usize; 3];
        for i in 0..n {
            let v: i64 = (0..n).map(|k| self.matrix[i][k] * node[k] as i64).sum::<i64>()
                + self.translation[i];
            out[i] = v.rem_euclid(res) as usize;
        }
        out
    }

    /// `source[p]` is the node whose value lands at `p` under pullback.
    fn node_map(&self, grid: TorusGrid) -> Vec<usize> {
        let n = grid.dim();
        let res = self.res;
        // a unit step along axis k, wrap included, moves the image by column k mod res
        let mut col = [[0usize; 3]; 3];
        let mut img = [0usize; 3];
        for i in 0..n {
            img[i] = self.translation[i].rem_euclid(res as i64) as usize;
            for k in 0..n {
                col[k][i] = self.matrix[i][k].rem_euclid(res as i64) as usize;
            }
        }
        let mut node = [0usize; 3];
        let mut out = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            out.push(img[..n].iter().fold(0, |acc, &v| acc * res + v));
            for k in (0..n).rev() {
                for i in 0..n {
                    img[i] += col[k][i];
                    if img[i] >= res {
                        img[i] -= res;
                    }
                }
                node[k] += 1;
                if node[k] < res {
                    break;
                }
                node[k] = 0;
            }
        }
        out
    }

    /// Minor of the matrix with the given rows and columns.
    fn minor(&self, rows: &[usize], cols: &[usize]) -> i64 {
        let m: Vec<Vec<i64>> = rows
            .iter()
            .map(|&r| cols.iter().map(|&c| self.matrix[r][c]).collect())
            .collect();
        det(&m)
    }

    fn check(&self, grid: TorusGrid) -> Result<()> {
        if grid.dim() != self.dim() || grid.res() != self.res {
            return Err(GeomError::GridMismatch);
        }
        Ok(())
    }
}

fn permute(values: &[f64], map: &[usize]) -> Vec<f64> {
    map.iter().map(|&q| values[q]).collect()
}

/// Fields that can be pulled back along affine torus maps.
pub trait Pullback: Sized {
    fn pullback(&self, phi: &AffineDiffeo) -> Result<Self>;

    /// `φ_* = (φ⁻¹)^*`.
    fn pushforward(&self, phi: &AffineDiffeo) -> Result<Self> {
        self.pullback(&phi.inverse())
    }
}

impl Pullback for ScalarField {
    fn pullback(&self, phi: &AffineDiffeo) -> Result<Self> {
        phi.check(self.grid())?;
        let map = phi.node_map(self.grid());
        ScalarField::new(self.grid(), permute(self.values(), &map))
    }
}

impl Pullback for KForm {
    fn pullback(&self, phi: &AffineDiffeo) -> Result<Self> {
        let grid = self.grid();
        phi.check(grid)?;
        let map = phi.node_map(grid);
        let idx = multi_indices(grid.dim(), self.degree());
        let mut out = KForm::zeros(grid, self.degree());
        for (jc, j) in idx.iter().enumerate() {
            for (ic, i) in idx.iter().enumerate() {
                let m = phi.minor(i, j) as f64;
                if m != 0.0 {
                    let src = self.component(ic);
                    for (o, &q) in out.component_mut(jc).iter_mut().zip(&map) {
                        *o += m * src[q];
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Pullback for VectorField {
    fn pullback(&self, phi: &AffineDiffeo) -> Result<Self> {
        let grid = self.grid();
        phi.check(grid)?;
        let n = grid.dim();
        let map = phi.node_map(grid);
        let inv = phi.inverse_matrix();
        let moved: Vec<Vec<f64>> = (0..n).map(|i| permute(self.component(i), &map)).collect();
        let mut out = VectorField::zeros(grid);
        for a in 0..n {
            for i in 0..n {
                let m = inv[a][i] as f64;
                if m != 0.0 {
                    for (o, v) in out.component_mut(a).iter_mut().zip(&moved[i]) {
                        *o += m * v;
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Pullback for SymTensor2 {
    fn pullback(&self, phi: &AffineDiffeo) -> Result<Self> {
        let grid = self.grid();
        phi.check(grid)?;
        let n = grid.dim();
        let map = phi.node_map(grid);
        let mut out = SymTensor2::zeros(grid);
        for a in 0..n {
            for b in a..n {
                let mut acc = vec![0.0; grid.len()];
                for i in 0..n {
                    for j in 0..n {
                        let m = (phi.matrix[i][a] * phi.matrix[j][b]) as f64;
                        if m != 0.0 {
                            for (o, &q) in acc.iter_mut().zip(&map) {
                                *o += m * self.get(i, j)[q];
                            }
                        }
                    }
                }
                out.get_mut(a, b).copy_from_slice(&acc);
            }
        }
        Ok(out)
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ext_deriv, Field};

    fn rot90(grid: TorusGrid) -> AffineDiffeo {
        AffineDiffeo::linear(grid, vec![vec![0, -1], vec![1, 0]]).unwrap()
    }

    #[test]
    fn identity_and_translation_invariance() {
        let g = TorusGrid::new(2, 8).unwrap();
        let w = KForm::from_fn(g, 1, |c, x| (x[0] + c as f64 * x[1]).sin());
        assert_eq!(w.pullback(&AffineDiffeo::identity(g)).unwrap(), w);
        let c = KForm::constant(g, 2, &[3.0]);
        let t = AffineDiffeo::translation(g, &[3, 5]);
        assert_eq!(c.pullback(&t).unwrap(), c);
    }

    #[test]
    fn rotation_maps_dx1_to_dx2() {
        // φ(x) = (−x₂, x₁) so φ*dx₁ = −dx₂ and φ*dx₂ = dx₁
        let g = TorusGrid::new(2, 8).unwrap();
        let r = rot90(g);
        let dx1 = KForm::constant(g, 1, &[1.0, 0.0]);
        let p = dx1.pullback(&r).unwrap();
        assert!(p.component(0).iter().all(|v| v.abs() < 1e-15));
        assert!(p.component(1).iter().all(|v| (v + 1.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_non_unimodular() {
        let g = TorusGrid::new(2, 8).unwrap();
        assert!(AffineDiffeo::linear(g, vec![vec![2, 0], vec![0, 1]]).is_err());
    }

    #[test]
    fn composition_and_inverse() {
        let g = TorusGrid::new(3, 8).unwrap();
        let a = AffineDiffeo::new(g, vec![vec![0, 1, 0], vec![-1, 0, 0], vec![0, 0, 1]], vec![1, 2, 3])
            .unwrap();
        let b = AffineDiffeo::new(g, vec![vec![1, 0, 0], vec![0, 0, -1], vec![0, 1, 0]], vec![5, 0, 7])
            .unwrap();
        assert!(a.compose(&a.inverse()).is_identity());
        let w = KForm::from_fn(g, 2, |c, x| (x[c % 3] + 2.0 * x[(c + 1) % 3]).cos());
        // (a∘b)* = b* a*
        let lhs = w.pullback(&a.compose(&b)).unwrap();
        let rhs = w.pullback(&a).unwrap().pullback(&b).unwrap();
        assert!(lhs.minus(&rhs).max_abs() < 1e-14);
        let d1 = ext_deriv(&w.pullback(&a).unwrap()).unwrap();
        let d2 = ext_deriv(&w).unwrap().pullback(&a).unwrap();
        assert!(d1.minus(&d2).max_abs() < 1e-12);
    }

    #[test]
    fn vector_and_metric_pullbacks_are_consistent() {
        let g = TorusGrid::new(2, 8).unwrap();
        let r = rot90(g);
        let metric = SymTensor2::from_fn(g, |i, j, x| if i == j { 2.0 + x[0].sin() } else { 0.3 });
        let u = VectorField::from_fn(g, |i, x| (x[1] + i as f64).cos());
        // g(u,u) is a function, so (φ*g)(φ*u, φ*u) = φ*(g(u,u))
        let gu = |m: &SymTensor2, v: &VectorField| -> Vec<f64> {
            (0..g.len())
                .map(|p| {
                    let mut s = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            s += m.get(i, j)[p] * v.component(i)[p] * v.component(j)[p];
                        }
                    }
                    s
                })
                .collect()
        };
        let lhs = gu(&metric.pullback(&r).unwrap(), &u.pullback(&r).unwrap());
        let rhs = ScalarField::new(g, gu(&metric, &u)).unwrap().pullback(&r).unwrap();
        for (a, b) in lhs.iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
