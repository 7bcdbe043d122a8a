//! JSON run configuration: parsing, defaults, validation and digest.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjoint::CostSpec;
use crate::control::{ControlBox, OptimizeOptions};
use crate::dynamics::{InitialData, NewtonOptions, PhysicsParams};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, NeumannOptions, SpaceTimeField, TimeGrid};
use crate::potential::{Potential, PotentialKind};
use crate::problem::{ProblemSpec, SolverOptions};

/// Data for a field or a time-indexed field.
///
/// A bare number is a constant, `{"values": [...]}` lists one value per cell
/// (x fastest), `{"levels": [[...], ...]}` lists one such array per running
/// level, and `{"cosine": {...}}` samples `mean + amplitude · Π cos(kπx/L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    Constant(f64),
    Values { values: Vec<f64> },
    Levels { levels: Vec<Vec<f64>> },
    Cosine { cosine: CosineSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineSpec {
    #[serde(default)]
    pub mean: f64,
    pub amplitude: f64,
    /// Mode number per axis; missing axes use mode 0.
    #[serde(default = "default_modes")]
    pub modes: Vec<usize>,
}

fn default_modes() -> Vec<usize> {
    vec![1]
}

impl DataSpec {
    fn field(&self, grid: &Grid, what: &str, errors: &mut Vec<String>) -> Option<Field> {
        match self {
            DataSpec::Constant(c) => Some(Field::constant(grid, *c)),
            DataSpec::Values { values } => match Field::from_values(grid, values.clone()) {
                Ok(f) => Some(f),
                Err(_) if values.len() != grid.len() => {
                    errors.push(format!("{what}: expected {} values, found {}", grid.len(), values.len()));
                    None
                }
                Err(e) => {
                    errors.push(format!("{what}: {e}"));
                    None
                }
            },
            DataSpec::Levels { .. } => {
                errors.push(format!("{what}: a single field is expected, not time levels"));
                None
            }
            DataSpec::Cosine { cosine } => {
                let lengths = grid.lengths().to_vec();
                Some(Field::from_fn(grid, |x| {
                    let shape: f64 = x
                        .iter()
                        .enumerate()
                        .map(|(axis, xi)| {
                            let k = cosine.modes.get(axis).copied().unwrap_or(0) as f64;
                            (PI * k * xi / lengths[axis]).cos()
                        })
                        .product();
                    cosine.mean + cosine.amplitude * shape
                }))
            }
        }
    }

    fn levels(&self, grid: &Grid, steps: usize, what: &str, errors: &mut Vec<String>) -> Option<SpaceTimeField> {
        match self {
            DataSpec::Levels { levels } => {
                if levels.len() != steps {
                    errors.push(format!("{what}: expected {steps} levels, found {}", levels.len()));
                    return None;
                }
                let mut out = Vec::with_capacity(steps);
                for (k, values) in levels.iter().enumerate() {
                    out.push(DataSpec::Values { values: values.clone() }.field(grid, &format!("{what} level {k}"), errors)?);
                }
                SpaceTimeField::new(out).ok()
            }
            other => {
                let f = other.field(grid, what, errors)?;
                SpaceTimeField::new(vec![f; steps]).ok()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: Vec<usize>,
    #[serde(default)]
    pub lengths: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cells: vec![32],
            lengths: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub tau: f64,
    pub ell: f64,
    pub gamma: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        let p = PhysicsParams::default();
        Self {
            tau: p.tau,
            ell: p.ell,
            gamma: p.gamma,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialName {
    Regular,
    Logarithmic,
    LogLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: PotentialName,
    /// Coefficient of `-c r²`; defaults to 2 for `logarithmic`, 0 for `log_linear`.
    #[serde(default)]
    pub c: Option<f64>,
    /// Defaults to 0 (exact) for `regular` and 1e-3 for the singular kinds.
    #[serde(default)]
    pub yosida_eps: Option<f64>,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            kind: PotentialName::Regular,
            c: None,
            yosida_eps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default = "zero_data")]
    pub theta0: DataSpec,
    #[serde(default = "zero_data")]
    pub phi0: DataSpec,
}

fn zero_data() -> DataSpec {
    DataSpec::Constant(0.0)
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            theta0: zero_data(),
            phi0: zero_data(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default = "default_kappa")]
    pub kappa: [f64; 4],
    #[serde(default = "zero_data")]
    pub theta_q: DataSpec,
    #[serde(default = "zero_data")]
    pub phi_q: DataSpec,
    #[serde(default = "zero_data")]
    pub theta_omega: DataSpec,
    #[serde(default = "zero_data")]
    pub phi_omega: DataSpec,
}

fn default_kappa() -> [f64; 4] {
    [1.0, 1.0, 0.5, 0.5]
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            kappa: default_kappa(),
            theta_q: zero_data(),
            phi_q: zero_data(),
            theta_omega: zero_data(),
            phi_omega: zero_data(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub u_min: DataSpec,
    pub u_max: DataSpec,
}

impl Default for BoxConfig {
    fn default() -> Self {
        Self {
            u_min: DataSpec::Constant(-1.0),
            u_max: DataSpec::Constant(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Control for `solve`/`tangent`/`adjoint`/`gradcheck`, start of `optimize`.
    #[serde(default = "zero_data")]
    pub u0: DataSpec,
    /// Direction for `tangent`; a seeded random direction when absent.
    #[serde(default)]
    pub direction: Option<DataSpec>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            u0: zero_data(),
            direction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
    pub neumann_residual_tolerance: f64,
    pub neumann_mean_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let n = NewtonOptions::default();
        let m = NeumannOptions::default();
        Self {
            newton_tolerance: n.tolerance,
            newton_max_iterations: n.max_iterations,
            neumann_residual_tolerance: m.residual_tolerance,
            neumann_mean_tolerance: m.mean_tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub sigma: f64,
    pub initial_step: f64,
    /// Number of starts; extra starts are seeded random admissible controls.
    pub starts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        Self {
            tolerance: o.tolerance,
            max_iterations: o.max_iterations,
            sigma: o.sigma,
            initial_step: o.initial_step,
            starts: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn options(&self) -> OptimizeOptions {
        OptimizeOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            sigma: self.sigma,
            initial_step: self.initial_step,
            ..OptimizeOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a field snapshot every this many levels (level 0 and the final
    /// level are always written).
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { snapshot_stride: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub directions: usize,
    /// Largest accepted relative error of the finite-difference plateau.
    pub fd_tolerance: f64,
    /// Largest accepted relative gap between adjoint and tangent derivatives.
    pub duality_tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            directions: 5,
            fd_tolerance: 1e-6,
            duality_tolerance: 1e-8,
        }
    }
}

/// Everything a run needs. All sections are optional in the file; the
/// effective configuration (defaults filled in) is echoed with every run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub physics: PhysicsConfig,
    pub potential: PotentialConfig,
    pub initial: InitialConfig,
    pub cost: CostConfig,
    #[serde(rename = "box")]
    pub bounds: BoxConfig,
    pub control: ControlConfig,
    pub solver: SolverConfig,
    pub optimizer: OptimizerConfig,
    pub gradcheck: GradcheckConfig,
    pub output: OutputConfig,
    pub seed: u64,
}

/// A validated configuration with the problem built from it.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub spec: ProblemSpec,
    pub u0: SpaceTimeField,
    pub direction: Option<SpaceTimeField>,
    pub digest: String,
}

impl RunConfig {
    /// Fills the kind-dependent defaults so the echoed config is explicit.
    pub fn with_defaults(mut self) -> Self {
        let p = &mut self.potential;
        let singular = p.kind != PotentialName::Regular;
        p.c.get_or_insert(match p.kind {
            PotentialName::Logarithmic => 2.0,
            _ => 0.0,
        });
        p.yosida_eps.get_or_insert(if singular { 1e-3 } else { 0.0 });
        if self.grid.lengths.is_empty() {
            self.grid.lengths = vec![1.0; self.grid.cells.len()];
        }
        self
    }

    /// Hex SHA-256 of the canonical JSON of the effective configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    fn potential(&self, errors: &mut Vec<String>) -> Option<Potential> {
        let p = &self.potential;
        let c = p.c.unwrap_or(0.0);
        let kind = match p.kind {
            PotentialName::Regular => PotentialKind::Regular,
            PotentialName::Logarithmic => PotentialKind::Logarithmic { c },
            PotentialName::LogLinear => PotentialKind::LogLinear { c },
        };
        Potential::new(kind, p.yosida_eps.unwrap_or(0.0))
            .map_err(|e| errors.push(format!("potential: {e}")))
            .ok()
    }

    /// Builds the problem, collecting every violated rule.
    pub fn build(self) -> Result<LoadedConfig> {
        let config = self.with_defaults();
        let mut errors = Vec::new();
        let grid = Grid::new(&config.grid.cells, &config.grid.lengths)
            .map_err(|e| errors.push(format!("grid: {e}")))
            .ok();
        let time = TimeGrid::new(config.time.horizon, config.time.steps)
            .map_err(|e| errors.push(format!("time: {e}")))
            .ok();
        let potential = config.potential(&mut errors);
        if config.output.snapshot_stride == 0 {
            errors.push("output.snapshot_stride must be >= 1".into());
        }
        let (Some(grid), Some(time), Some(potential)) = (grid, time, potential) else {
            return Err(Error::Validation(errors));
        };
        let steps = time.steps();
        let e = &mut errors;
        let theta0 = config.initial.theta0.field(&grid, "initial.theta0", e);
        let phi0 = config.initial.phi0.field(&grid, "initial.phi0", e);
        let theta_q = config.cost.theta_q.levels(&grid, steps, "cost.theta_q", e);
        let phi_q = config.cost.phi_q.levels(&grid, steps, "cost.phi_q", e);
        let theta_omega = config.cost.theta_omega.field(&grid, "cost.theta_omega", e);
        let phi_omega = config.cost.phi_omega.field(&grid, "cost.phi_omega", e);
        let u_min = config.bounds.u_min.levels(&grid, steps, "box.u_min", e);
        let u_max = config.bounds.u_max.levels(&grid, steps, "box.u_max", e);
        let u0 = config.control.u0.levels(&grid, steps, "control.u0", e);
        let direction = config
            .control
            .direction
            .as_ref()
            .map(|d| d.levels(&grid, steps, "control.direction", e));

        let built = (|| {
            let spec = ProblemSpec {
                grid: grid.clone(),
                time,
                physics: PhysicsParams {
                    tau: config.physics.tau,
                    ell: config.physics.ell,
                    gamma: config.physics.gamma,
                },
                potential,
                init: InitialData {
                    theta0: theta0?,
                    phi0: phi0?,
                },
                cost: CostSpec {
                    kappa: config.cost.kappa,
                    theta_q: theta_q?,
                    phi_q: phi_q?,
                    theta_omega: theta_omega?,
                    phi_omega: phi_omega?,
                },
                bounds: ControlBox {
                    u_min: u_min?,
                    u_max: u_max?,
                },
                solver: SolverOptions {
                    newton: NewtonOptions {
                        tolerance: config.solver.newton_tolerance,
                        max_iterations: config.solver.newton_max_iterations,
                        ..NewtonOptions::default()
                    },
                    neumann: NeumannOptions {
                        mean_tolerance: config.solver.neumann_mean_tolerance,
                        residual_tolerance: config.solver.neumann_residual_tolerance,
                    },
                },
            };
            let direction = match direction {
                Some(d) => Some(d?),
                None => None,
            };
            Some((spec, u0?, direction))
        })();
        let Some((spec, u0, direction)) = built else {
            return Err(Error::Validation(errors));
        };
        errors.extend(spec.violations());
        let o = &config.optimizer;
        if !(o.tolerance > 0.0 && o.sigma > 0.0 && o.sigma < 1.0 && o.initial_step > 0.0) || o.starts == 0 {
            errors.push("optimizer: need tolerance > 0, 0 < sigma < 1, initial_step > 0 and starts >= 1".into());
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let digest = config.digest();
        Ok(LoadedConfig {
            config,
            spec,
            u0,
            direction,
            digest,
        })
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    config.build()
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_loads_with_defaults() {
        let loaded = parse_config("{}").unwrap();
        assert_eq!(loaded.spec.grid.cells(), &[32]);
        assert_eq!(loaded.config.potential.yosida_eps, Some(0.0));
        assert_eq!(loaded.config.grid.lengths, vec![1.0]);
        assert_eq!(loaded.digest.len(), 64);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = parse_config(r#"{"seed": 1}"#).unwrap().digest;
        let b = parse_config(r#"{"seed": 1}"#).unwrap().digest;
        let c = parse_config(r#"{"seed": 2}"#).unwrap().digest;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn singular_defaults_are_filled() {
        let loaded = parse_config(r#"{"potential": {"kind": "logarithmic"}, "physics": {"tau": 1.0}}"#).unwrap();
        assert_eq!(loaded.config.potential.c, Some(2.0));
        assert_eq!(loaded.config.potential.yosida_eps, Some(1e-3));
    }

    #[test]
    fn inverted_box_names_the_node() {
        let err = parse_config(r#"{"grid": {"cells": [3]}, "time": {"horizon": 1, "steps": 2},
            "box": {"u_min": 0, "u_max": {"levels": [[1, 1, 1], [1, -1, 1]]}}}"#)
        .unwrap_err();
        match err {
            Error::Validation(v) => assert!(v.iter().any(|s| s.contains("level 1, cell 1")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singular_potential_without_viscosity_is_rejected() {
        let err = parse_config(r#"{"potential": {"kind": "logarithmic", "yosida_eps": 0}}"#).unwrap_err();
        match err {
            Error::Validation(v) => assert!(v.iter().any(|s| s.contains("tau > 0")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let err = parse_config(r#"{"grid": {"cells": [4]}, "initial": {"phi0": {"values": [0, 0]}},
            "cost": {"kappa": [1, -1, 0, 0]}, "physics": {"gamma": -1}}"#)
        .unwrap_err();
        match err {
            Error::Validation(v) => {
                assert!(v.iter().any(|s| s.contains("expected 4 values, found 2")), "{v:?}");
            }
            other => panic!("{other:?}"),
        }
        let err = parse_config(r#"{"cost": {"kappa": [1, -1, 0, 0]}, "physics": {"gamma": -1}}"#).unwrap_err();
        match err {
            Error::Validation(v) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_json_are_parse_errors() {
        assert!(matches!(parse_config(r#"{"grdi": {}}"#), Err(Error::Parse(_))));
        assert!(matches!(parse_config("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn cosine_and_level_data() {
        let loaded = parse_config(r#"{"grid": {"cells": [4, 2], "lengths": [2, 1]}, "time": {"horizon": 1, "steps": 2},
            "initial": {"phi0": {"cosine": {"mean": 0.1, "amplitude": 0.5, "modes": [1, 0]}}},
            "control": {"u0": {"levels": [[0,0,0,0,0,0,0,0], [1,1,1,1,1,1,1,1]]}}}"#)
        .unwrap();
        let phi0 = loaded.spec.init.phi0.values();
        assert!((phi0[0] - (0.1 + 0.5 * (PI * 0.25 / 2.0).cos())).abs() < 1e-15);
        assert_eq!(phi0[0], phi0[4]);
        assert_eq!(loaded.u0.level(1).values()[7], 1.0);
    }
}
