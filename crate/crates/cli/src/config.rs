//! Versioned run configuration.

use std::path::Path;

use gengeom::courant::TwistData;
use gengeom::genmetric::GenMetricSpec;
use gengeom::grid::{FourierModeSpec, TorusGrid};
use gengeom::symmetry::Derivation;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DERIVATION_SLACK: f64 = 1e-8;

pub const SCHEMA: &str = "gengeom-run/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    CourantAxioms,
    Hodge,
    Group,
    Derivation,
    Slice,
    Strata,
}

impl SuiteName {
    pub const ALL: [SuiteName; 6] = [
        SuiteName::CourantAxioms,
        SuiteName::Hodge,
        SuiteName::Group,
        SuiteName::Derivation,
        SuiteName::Slice,
        SuiteName::Strata,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SuiteName::CourantAxioms => "courant-axioms",
            SuiteName::Hodge => "hodge",
            SuiteName::Group => "group",
            SuiteName::Derivation => "derivation",
            SuiteName::Slice => "slice",
            SuiteName::Strata => "strata",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Exact,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub identity: f64,
    pub matrix: f64,
    pub axiom: f64,
    pub rank_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { identity: 1e-8, matrix: 1e-7, axiom: 1e-7, rank_factor: 1e-8 }
    }
}

impl Tolerances {
    pub fn scaled(&self, s: f64) -> Self {
        Tolerances {
            identity: self.identity * s,
            matrix: self.matrix * s,
            axiom: self.axiom * s,
            rank_factor: self.rank_factor,
        }
    }
}

/// `H` (and `F` for odd twists) as trigonometric sums.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistSpec {
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<FourierModeSpec>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub f: Option<FourierModeSpec>,
}

impl TwistSpec {
    pub fn build(&self, grid: TorusGrid, kind: Kind) -> gengeom::Result<TwistData> {
        let h = match &self.h {
            Some(s) => s.sample(grid)?,
            None => gengeom::grid::KForm::zeros(grid, 3),
        };
        match (kind, &self.f) {
            (Kind::Exact, None) => TwistData::exact(h),
            (Kind::Exact, Some(_)) => Err(gengeom::GeomError::KindMismatch),
            (Kind::Odd, f) => {
                let f = match f {
                    Some(s) => s.sample(grid)?,
                    None => gengeom::grid::KForm::zeros(grid, 2),
                };
                TwistData::odd(h, f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivationSpec {
    pub u: FourierModeSpec,
    pub b: FourierModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<FourierModeSpec>,
}

impl DerivationSpec {
    pub fn build(&self, grid: TorusGrid) -> gengeom::Result<Derivation> {
        Derivation::new(self.u.sample_vector(grid)?, self.b.sample(grid)?, self.a.as_ref().map(|a| a.sample(grid)).transpose()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CourantConfig {
    pub dimension: usize,
    pub resolution: usize,
    /// random triples per kind
    pub samples: usize,
    /// twists per kind; configured ones first, then random ones
    pub twist_count: usize,
    pub exact_twists: Vec<TwistSpec>,
    pub odd_twists: Vec<TwistSpec>,
}

impl Default for CourantConfig {
    fn default() -> Self {
        CourantConfig { dimension: 3, resolution: 12, samples: 100, twist_count: 5, exact_twists: vec![], odd_twists: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HodgeConfig {
    /// `[dimension, resolution]` pairs
    pub grids: Vec<[usize; 2]>,
    pub perturbed_metrics: usize,
    pub amplitude: f64,
}

impl Default for HodgeConfig {
    fn default() -> Self {
        HodgeConfig { grids: vec![[2, 16], [3, 8]], perturbed_metrics: 3, amplitude: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    pub resolution: usize,
    pub pairs: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig { resolution: 12, pairs: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivationConfig {
    pub resolution: usize,
    pub samples: usize,
    /// kind of the configured derivation
    pub kind: Kind,
    pub twist: Option<TwistSpec>,
    pub derivation: Option<DerivationSpec>,
}

impl Default for DerivationConfig {
    fn default() -> Self {
        DerivationConfig { resolution: 12, samples: 20, kind: Kind::Exact, twist: None, derivation: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub matrix_resolution: usize,
    pub probes: usize,
    /// exact metric on `T²`; a random `ω` is used when absent
    pub metric: Option<GenMetricSpec>,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig { matrix_resolution: 8, probes: 10, metric: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataSampleSpec {
    pub name: String,
    #[serde(default)]
    pub twist: TwistSpec,
    #[serde(default)]
    pub metric: GenMetricSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrataConfig {
    pub dimension: usize,
    pub resolution: usize,
    /// random `(T, V)` samples on top of the family
    pub samples: usize,
    pub conjugators: usize,
    /// `null` keeps linear maps only
    pub translation_step: Option<usize>,
    pub family: Vec<StrataSampleSpec>,
}

impl Default for StrataConfig {
    fn default() -> Self {
        StrataConfig { dimension: 2, resolution: 8, samples: 10, conjugators: 20, translation_step: Some(1), family: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_suites")]
    pub suites: Vec<SuiteName>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub courant: CourantConfig,
    #[serde(default)]
    pub hodge: HodgeConfig,
    #[serde(default)]
    pub group: GroupConfig,
    #[serde(default)]
    pub derivation: DerivationConfig,
    #[serde(default)]
    pub slice: SliceConfig,
    #[serde(default)]
    pub strata: StrataConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_suites() -> Vec<SuiteName> {
    SuiteName::ALL.to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA.into(),
            seed: default_seed(),
            suites: default_suites(),
            tolerances: Tolerances::default(),
            courant: CourantConfig::default(),
            hodge: HodgeConfig::default(),
            group: GroupConfig::default(),
            derivation: DerivationConfig::default(),
            slice: SliceConfig::default(),
            strata: StrataConfig::default(),
        }
    }
}

fn grid(field: &str, dim: usize, res: usize) -> Result<TorusGrid, ConfigError> {
    TorusGrid::new(dim, res).map_err(|e| invalid(field, e))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| ConfigError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA {
            return Err(invalid("schema", format!("expected \"{SCHEMA}\", found \"{}\"", self.schema)));
        }
        let t = &self.tolerances;
        for (name, v) in [("identity", t.identity), ("matrix", t.matrix), ("axiom", t.axiom), ("rank_factor", t.rank_factor)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(&format!("tolerances.{name}"), "must be positive"));
            }
        }
        let c = &self.courant;
        let g = grid("courant", c.dimension, c.resolution)?;
        if c.twist_count == 0 && c.samples > 0 {
            return Err(invalid("courant.twist_count", "must be positive"));
        }
        for (i, s) in c.exact_twists.iter().enumerate() {
            s.build(g, Kind::Exact).map_err(|e| invalid(&format!("courant.exact_twists[{i}]"), e))?;
        }
        for (i, s) in c.odd_twists.iter().enumerate() {
            s.build(g, Kind::Odd).map_err(|e| invalid(&format!("courant.odd_twists[{i}]"), e))?;
        }
        for (i, [d, r]) in self.hodge.grids.iter().enumerate() {
            grid(&format!("hodge.grids[{i}]"), *d, *r)?;
        }
        if !(self.hodge.amplitude >= 0.0 && self.hodge.amplitude < 0.5) {
            return Err(invalid("hodge.amplitude", "must lie in [0, 0.5)"));
        }
        grid("group.resolution", 3, self.group.resolution)?;
        let d = &self.derivation;
        let g = grid("derivation.resolution", 3, d.resolution)?;
        if let Some(t) = &d.twist {
            t.build(g, d.kind).map_err(|e| invalid("derivation.twist", e))?;
        }
        if let Some(spec) = &d.derivation {
            let der = spec.build(g).map_err(|e| invalid("derivation.derivation", e))?;
            if der.is_odd() != (d.kind == Kind::Odd) {
                return Err(invalid("derivation.derivation.a", "present exactly for odd derivations"));
            }
            let twist = match &d.twist {
                Some(t) => t.build(g, d.kind).map_err(|e| invalid("derivation.twist", e))?,
                None if d.kind == Kind::Odd => TwistData::zero_odd(g),
                None => TwistData::zero_exact(g),
            };
            let defect = der.derivation_defect(&twist).map_err(|e| invalid("derivation.derivation", e))?.max();
            if defect > DERIVATION_SLACK {
                return Err(invalid(
                    "derivation.derivation",
                    format!("not a derivation of the configured twist (defect {defect:.3e})"),
                ));
            }
        }
        let s = &self.slice;
        if s.matrix_resolution > 8 {
            return Err(invalid("slice.matrix_resolution", "the matrix regime is limited to resolution 8"));
        }
        let g = grid("slice.matrix_resolution", 2, s.matrix_resolution)?;
        if let Some(m) = &s.metric {
            m.build(g, false).map_err(|e| invalid("slice.metric", e))?;
        }
        let st = &self.strata;
        let g = grid("strata", st.dimension, st.resolution)?;
        if st.translation_step == Some(0) {
            return Err(invalid("strata.translation_step", "must be positive"));
        }
        for (i, f) in st.family.iter().enumerate() {
            f.twist.build(g, Kind::Exact).map_err(|e| invalid(&format!("strata.family[{i}].twist"), e))?;
            f.metric.build(g, false).map_err(|e| invalid(&format!("strata.family[{i}].metric"), e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::from_json(r#"{"schema": "gengeom-run/1"}"#).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_schema_rejected() {
        let e = RunConfig::from_json("{\n\"schema\": \"gengeom-run/1\",\n\"sead\": 3}").unwrap_err();
        assert!(matches!(e, ConfigError::Parse { line: 3, .. }), "{e}");
        assert!(e.to_string().contains("sead"));
        let e = RunConfig::from_json(r#"{"schema": "gengeom-run/0"}"#).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref field, .. } if field == "schema"));
    }

    #[test]
    fn non_closed_f_names_the_invariant() {
        let text = r#"{"schema": "gengeom-run/1", "derivation": {"kind": "odd", "twist": {
            "F": {"degree": 2, "modes": [{"component": [0, 1], "wavevector": [0, 0, 1], "amplitude": 1.0}]}}}}"#;
        let e = RunConfig::from_json(text).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref field, .. } if field == "derivation.twist"), "{e}");
        assert!(e.to_string().contains("dF"), "{e}");
    }

    #[test]
    fn configured_derivation_must_preserve_twist() {
        let text = r#"{"schema": "gengeom-run/1", "derivation": {"kind": "exact",
            "twist": {"H": {"degree": 3, "modes": [{"component": [0, 1, 2], "wavevector": [0, 0, 0], "amplitude": 1.0}]}},
            "derivation": {"u": {"degree": 1, "modes": [{"component": [0], "wavevector": [1, 0, 0], "amplitude": 1.0}]},
                           "b": {"degree": 2}}}}"#;
        let e = RunConfig::from_json(text).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref field, .. } if field == "derivation.derivation"), "{e}");
    }

    #[test]
    fn matrix_regime_is_bounded() {
        let e = RunConfig::from_json(r#"{"schema": "gengeom-run/1", "slice": {"matrix_resolution": 10}}"#).unwrap_err();
        assert!(e.to_string().starts_with("slice.matrix_resolution"));
    }
}
