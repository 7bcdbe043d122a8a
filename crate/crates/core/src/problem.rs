//! The full optimal control problem: discretization, physics, potential,
//! initial data, cost, control box and solver tolerances.

use std::f64::consts::PI;

use crate::adjoint::CostSpec;
use crate::control::ControlBox;
use crate::dynamics::{InitialData, NewtonOptions, PhysicsParams};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, NeumannOptions, SpaceTimeField, TimeGrid};
use crate::potential::Potential;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverOptions {
    pub newton: NewtonOptions,
    pub neumann: NeumannOptions,
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub time: TimeGrid,
    pub physics: PhysicsParams,
    pub potential: Potential,
    pub init: InitialData,
    pub cost: CostSpec,
    pub bounds: ControlBox,
    pub solver: SolverOptions,
}

impl ProblemSpec {
    /// Small 1D configuration: 32 cells on the unit interval, 16 steps up to
    /// `T = 1`, box `[-1, 1]`, weights `(1, 1, 0.5, 0.5)` and targets that
    /// are slightly perturbed constants.
    pub fn desk(potential: Potential, tau: f64) -> Result<Self> {
        let grid = Grid::unit_1d(32)?;
        let time = TimeGrid::new(1.0, 16)?;
        let steps = time.steps();
        let init = InitialData {
            theta0: Field::zeros(&grid),
            phi0: Field::from_fn(&grid, |x| 0.2 * (PI * x[0]).cos()),
        };
        let cost = CostSpec {
            kappa: [1.0, 1.0, 0.5, 0.5],
            theta_q: SpaceTimeField::from_fn(&grid, steps, |_, x| 0.3 + 0.05 * (PI * x[0]).cos()),
            phi_q: SpaceTimeField::from_fn(&grid, steps, |_, x| -0.2 + 0.05 * (2.0 * PI * x[0]).cos()),
            theta_omega: Field::from_fn(&grid, |x| 0.3 + 0.05 * (PI * x[0]).cos()),
            phi_omega: Field::from_fn(&grid, |x| -0.2 + 0.05 * (2.0 * PI * x[0]).cos()),
        };
        let spec = Self {
            bounds: ControlBox::constant(&grid, steps, -1.0, 1.0)?,
            grid,
            time,
            physics: PhysicsParams {
                tau,
                ell: 1.0,
                gamma: 1.0,
            },
            potential,
            init,
            cost,
            solver: SolverOptions::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every violated rule, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.physics.violations();
        let steps = self.time.steps();
        if self.potential.is_singular() && self.physics.tau <= 0.0 {
            out.push(format!(
                "the {} potential is singular, which requires tau > 0 (either D(beta) is the whole line or tau > 0)",
                self.potential.name()
            ));
        }
        if self.init.theta0.grid() != &self.grid || self.init.phi0.grid() != &self.grid {
            out.push("initial data do not live on the configured grid".into());
        }
        out.extend(self.init.violations(&self.potential));
        out.extend(self.cost.violations(&self.grid, steps));
        out.extend(self.bounds.violations(&self.grid, steps));
        let n = &self.solver.newton;
        if !(n.tolerance > 0.0) || n.max_iterations == 0 {
            out.push("solver.newton: tolerance must be > 0 and max_iterations >= 1".into());
        }
        let m = &self.solver.neumann;
        if !(m.mean_tolerance > 0.0 && m.residual_tolerance > 0.0) {
            out.push("solver.neumann: tolerances must be > 0".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn zero_control(&self) -> SpaceTimeField {
        SpaceTimeField::zeros(&self.grid, self.time.steps())
    }

    /// Same problem with the potential's Yosida parameter replaced.
    pub fn with_yosida_eps(&self, eps: f64) -> Result<Self> {
        let mut spec = self.clone();
        spec.potential = self.potential.with_yosida_eps(eps)?;
        Ok(spec)
    }

    /// Scales all cost weights by `s`.
    pub fn with_scaled_cost(&self, s: f64) -> Self {
        let mut spec = self.clone();
        spec.cost.kappa.iter_mut().for_each(|k| *k *= s);
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_configurations_validate() {
        assert!(ProblemSpec::desk(Potential::regular(), 0.0).is_ok());
        assert!(ProblemSpec::desk(Potential::logarithmic(2.0, 1e-3).unwrap(), 1.0).is_ok());
    }

    #[test]
    fn singular_potential_without_viscosity_is_rejected() {
        let err = ProblemSpec::desk(Potential::logarithmic(2.0, 0.0).unwrap(), 0.0).unwrap_err();
        match err {
            Error::Validation(v) => assert!(v.iter().any(|s| s.contains("tau > 0")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let mut spec = ProblemSpec::desk(Potential::logarithmic(2.0, 1e-3).unwrap(), 1.0).unwrap();
        spec.physics.tau = 0.0;
        spec.cost.kappa[1] = -1.0;
        spec.bounds.u_min.levels_mut()[3].values_mut()[5] = 2.0;
        let v = spec.violations();
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().any(|s| s.contains("level 3, cell 5")));
    }
}
