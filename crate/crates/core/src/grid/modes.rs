use serde::{Deserialize, Serialize};

use super::{binomial, index_position, Field, KForm, ScalarField, SymTensor2, TorusGrid, VectorField};
use crate::error::{GeomError, Result};
use crate::rng::Stream;

/// One trigonometric term `amplitude · cos(k·x + phase)` of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub component: Vec<usize>,
    pub wavevector: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A band-limited form given as a sum of trigonometric modes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierModeSpec {
    pub degree: usize,
    #[serde(default)]
    pub modes: Vec<FourierMode>,
}

impl FourierModeSpec {
    pub fn new(degree: usize) -> Self {
        FourierModeSpec {
            degree,
            modes: Vec::new(),
        }
    }

    pub fn with(mut self, component: &[usize], wavevector: &[i64], amplitude: f64, phase: f64) -> Self {
        self.modes.push(FourierMode {
            component: component.to_vec(),
            wavevector: wavevector.to_vec(),
            amplitude,
            phase,
        });
        self
    }

    fn validate(&self, grid: TorusGrid) -> Result<()> {
        let n = grid.dim();
        if self.degree > n {
            return Err(GeomError::Degree {
                op: "sample",
                degree: self.degree,
            });
        }
        for m in &self.modes {
            if m.wavevector.len() != n {
                return Err(GeomError::Shape(format!(
                    "wavevector {:?} must have {n} entries",
                    m.wavevector
                )));
            }
            if m.wavevector.iter().any(|k| k.abs() > grid.band()) {
                return Err(GeomError::Aliased {
                    wavevector: m.wavevector.clone(),
                    res: grid.res(),
                });
            }
            if m.component.len() != self.degree || index_position(n, &m.component).is_none() {
                return Err(GeomError::Component(m.component.clone()));
            }
        }
        Ok(())
    }

    /// Sample the modes at the grid nodes.
    pub fn sample(&self, grid: TorusGrid) -> Result<KForm> {
        self.validate(grid)?;
        let n = grid.dim();
        let mut comps = vec![vec![0.0; grid.len()]; binomial(n, self.degree)];
        for m in &self.modes {
            let c = index_position(n, &m.component).expect("validated");
            for (p, slot) in comps[c].iter_mut().enumerate() {
                let x = grid.coords(p);
                let phase: f64 = (0..n).map(|a| m.wavevector[a] as f64 * x[a]).sum::<f64>() + m.phase;
                *slot += m.amplitude * phase.cos();
            }
        }
        KForm::from_components(grid, self.degree, comps)
    }

    /// Sample as a vector field (degree must be 1; component `[i]` is `∂_i`).
    pub fn sample_vector(&self, grid: TorusGrid) -> Result<VectorField> {
        if self.degree != 1 {
            return Err(GeomError::Degree {
                op: "sample_vector",
                degree: self.degree,
            });
        }
        let form = self.sample(grid)?;
        VectorField::from_components(grid, (0..grid.dim()).map(|i| form.scalar(i)).collect())
    }
}

/// Random band-limited data: white noise filtered to `max |k_i| <= band`, unit RMS.
pub fn random_values(grid: TorusGrid, band: i64, rng: &mut Stream) -> Vec<f64> {
    let raw: Vec<f64> = (0..grid.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let filtered = grid.spectral().low_pass(&raw, band.min(grid.band()));
    let rms = (filtered.iter().map(|v| v * v).sum::<f64>() / filtered.len() as f64).sqrt();
    if rms == 0.0 {
        return filtered;
    }
    filtered.iter().map(|v| v / rms).collect()
}

impl ScalarField {
    pub fn random(grid: TorusGrid, band: i64, rng: &mut Stream) -> Self {
        ScalarField::new(grid, random_values(grid, band, rng)).expect("sized")
    }
}

impl KForm {
    pub fn random(grid: TorusGrid, degree: usize, band: i64, rng: &mut Stream) -> Self {
        let comps = (0..binomial(grid.dim(), degree))
            .map(|_| random_values(grid, band, rng))
            .collect();
        KForm::raw(grid, degree, comps)
    }
}

impl VectorField {
    pub fn random(grid: TorusGrid, band: i64, rng: &mut Stream) -> Self {
        let comps = (0..grid.dim())
            .map(|_| ScalarField::random(grid, band, rng))
            .collect();
        VectorField::from_components(grid, comps).expect("sized")
    }
}

impl SymTensor2 {
    pub fn random(grid: TorusGrid, band: i64, rng: &mut Stream) -> Self {
        let mut out = SymTensor2::zeros(grid);
        for p in out.parts_mut() {
            p.copy_from_slice(&random_values(grid, band, rng));
        }
        out
    }
}

/// CSV rows `x_1,..,x_n,c_0,..` for plotting a field.
pub fn to_csv(field: &impl Field) -> String {
    let grid = field.grid();
    let n = grid.dim();
    let parts = field.parts();
    let mut out = String::new();
    let header: Vec<String> = (1..=n)
        .map(|a| format!("x{a}"))
        .chain((0..parts.len()).map(|c| format!("c{c}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in 0..grid.len() {
        let x = grid.coords(p);
        let row: Vec<String> = x[..n]
            .iter()
            .map(|v| format!("{v:.12}"))
            .chain(parts.iter().map(|c| format!("{:.15e}", c[p])))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_is_cosine() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = FourierModeSpec::new(0).with(&[], &[1, 0], 1.0, 0.0).sample(g).unwrap();
        for p in 0..g.len() {
            assert!((f.component(0)[p] - g.coords(p)[0].cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_and_cancelling_specs_give_zero() {
        let g = TorusGrid::new(3, 8).unwrap();
        assert_eq!(FourierModeSpec::new(2).sample(g).unwrap().max_abs(), 0.0);
        let s = FourierModeSpec::new(1)
            .with(&[2], &[1, 2, 0], 0.7, 0.3)
            .with(&[2], &[1, 2, 0], -0.7, 0.3);
        assert!(s.sample(g).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn aliased_and_bad_components_rejected() {
        let g = TorusGrid::new(2, 8).unwrap();
        assert!(FourierModeSpec::new(0).with(&[], &[4, 0], 1.0, 0.0).sample(g).is_err());
        assert!(FourierModeSpec::new(1).with(&[1, 0], &[1, 0], 1.0, 0.0).sample(g).is_err());
        assert!(FourierModeSpec::new(3).sample(g).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let s = FourierModeSpec::new(1).with(&[0], &[1, -2], 0.5, 1.0);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<FourierModeSpec>(&text).unwrap(), s);
        assert!(serde_json::from_str::<FourierModeSpec>(r#"{"degree":1,"extra":2}"#).is_err());
    }
}
