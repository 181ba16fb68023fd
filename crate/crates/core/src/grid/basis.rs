use nalgebra::{DMatrix, DVector};

use super::spectral::wavevectors;
use super::{Field, TorusGrid};

/// Orthonormal real trigonometric basis of the Nyquist-free band.
///
/// Columns are `1`, `cos(k·x)` and `sin(k·x)` for one representative of each
/// `±k` pair, scaled to unit Euclidean norm over the nodes.
#[derive(Debug, Clone)]
pub struct BandBasis {
    grid: TorusGrid,
    columns: DMatrix<f64>,
}

impl BandBasis {
    pub fn new(grid: TorusGrid) -> Self {
        let n = grid.dim();
        let total = grid.len();
        let mut reps: Vec<[i64; 3]> = wavevectors(n, grid.res())
            .into_iter()
            .flatten()
            .filter(|k| {
                k[..n]
                    .iter()
                    .find(|&&v| v != 0)
                    .map_or(true, |&v| v > 0)
            })
            .collect();
        reps.sort_unstable();
        let count = 2 * reps.len() - 1;
        let mut columns = DMatrix::zeros(total, count);
        let coords: Vec<[f64; 3]> = (0..total).map(|p| grid.coords(p)).collect();
        let mut col = 0;
        for k in &reps {
            if k.iter().all(|&v| v == 0) {
                columns.column_mut(col).fill(1.0 / (total as f64).sqrt());
                col += 1;
                continue;
            }
            let s = (2.0 / total as f64).sqrt();
            for (p, x) in coords.iter().enumerate() {
                let phase: f64 = (0..n).map(|a| k[a] as f64 * x[a]).sum();
                columns[(p, col)] = s * phase.cos();
                columns[(p, col + 1)] = s * phase.sin();
            }
            col += 2;
        }
        BandBasis { grid, columns }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Number of basis functions, `(res − 1)^dim`.
    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.columns.column(j).iter().copied().collect()
    }

    /// Coefficients of every component, concatenated.
    pub fn coefficients(&self, field: &impl Field) -> DVector<f64> {
        let parts = field.parts();
        let m = self.len();
        let mut out = DVector::zeros(m * parts.len());
        for (c, part) in parts.iter().enumerate() {
            let coeff = self.columns.tr_mul(&DVector::from_column_slice(part));
            out.rows_mut(c * m, m).copy_from(&coeff);
        }
        out
    }

    /// Field shaped like `template` with the given concatenated coefficients.
    pub fn synthesize<F: Field>(&self, template: &F, coeffs: &[f64]) -> F {
        let m = self.len();
        let mut out = template.zeroed();
        for (c, part) in out.parts_mut().into_iter().enumerate() {
            let v = &self.columns * DVector::from_column_slice(&coeffs[c * m..(c + 1) * m]);
            part.copy_from_slice(v.as_slice());
        }
        out
    }

    /// `Qᵀ diag(w) Q`.
    pub fn weighted_gram(&self, weight: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.columns.clone();
        for (p, mut row) in scaled.row_iter_mut().enumerate() {
            row *= weight[p];
        }
        self.columns.tr_mul(&scaled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;

    #[test]
    fn basis_is_orthonormal_and_spans_band() {
        for (n, res) in [(2, 8), (3, 8)] {
            let g = TorusGrid::new(n, res).unwrap();
            let b = BandBasis::new(g);
            assert_eq!(b.len(), (res - 1).pow(n as u32));
            let gram = b.matrix().tr_mul(b.matrix());
            let err = (gram - DMatrix::identity(b.len(), b.len())).amax();
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn round_trip_of_band_limited_field() {
        let g = TorusGrid::new(2, 8).unwrap();
        let b = BandBasis::new(g);
        let f = ScalarField::from_fn(g, |x| (3.0 * x[0] - x[1]).sin() + 0.5);
        let back = b.synthesize(&f, b.coefficients(&f).as_slice());
        assert!(back.minus(&f).max_abs() < 1e-13);
    }
}
