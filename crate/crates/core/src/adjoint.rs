//! Tracking cost and its adjoint. The adjoint sweep is the exact transpose of
//! the discrete tangent scheme, so `Σₙ dt <qⁿ, hⁿ>` reproduces the derivative
//! of the discrete cost to solver precision.

use crate::dynamics::{explicit_coefficients, implicit_coefficients, step_matrix, PhysicsParams, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{helmholtz_solve_with, Field, Grid, SpaceTimeField};
use crate::problem::ProblemSpec;

/// Weights and targets of
/// `J = κ₁/2 ‖θ-θ_Q‖²_Q + κ₂/2 ‖φ-φ_Q‖²_Q + κ₃/2 ‖θ(T)-θ_Ω‖² + κ₄/2 ‖φ(T)-φ_Ω‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub kappa: [f64; 4],
    /// Running targets at levels `1..=Nt`.
    pub theta_q: SpaceTimeField,
    pub phi_q: SpaceTimeField,
    pub theta_omega: Field,
    pub phi_omega: Field,
}

impl CostSpec {
    /// Zero weights and zero targets.
    pub fn zero(grid: &Grid, steps: usize) -> Self {
        Self {
            kappa: [0.0; 4],
            theta_q: SpaceTimeField::zeros(grid, steps),
            phi_q: SpaceTimeField::zeros(grid, steps),
            theta_omega: Field::zeros(grid),
            phi_omega: Field::zeros(grid),
        }
    }

    pub fn violations(&self, grid: &Grid, steps: usize) -> Vec<String> {
        let mut out = Vec::new();
        for (i, k) in self.kappa.iter().enumerate() {
            if !(k.is_finite() && *k >= 0.0) {
                out.push(format!("cost.kappa[{}] must be finite and >= 0, got {k}", i + 1));
            }
        }
        for (name, f) in [("theta_q", &self.theta_q), ("phi_q", &self.phi_q)] {
            if let Err(e) = f.check_shape(grid, steps, "running target") {
                out.push(format!("cost.{name}: {e}"));
            }
        }
        for (name, f) in [("theta_omega", &self.theta_omega), ("phi_omega", &self.phi_omega)] {
            if f.grid() != grid {
                out.push(format!("cost.{name} does not live on the configured grid"));
            }
        }
        out
    }

    pub fn is_trivial(&self) -> bool {
        self.kappa.iter().all(|k| *k == 0.0)
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        let grid = traj.grid();
        let steps = traj.steps();
        self.theta_q.check_shape(grid, steps, "cost running target")?;
        self.phi_q.check_shape(grid, steps, "cost running target")?;
        for f in [&self.theta_omega, &self.phi_omega] {
            if f.grid() != grid {
                return Err(Error::ShapeMismatch {
                    what: "cost terminal target",
                    expected: grid.len(),
                    found: f.len(),
                });
            }
        }
        Ok(())
    }

    /// Discrete cost: right-endpoint rectangle rule in time over levels
    /// `1..=Nt`, cell measure in space.
    pub fn evaluate(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        let dt = traj.time().dt();
        let [k1, k2, k3, k4] = self.kappa;
        let steps = traj.steps();
        let mut running = 0.0;
        for n in 1..=steps {
            let dtheta = traj.theta()[n].sub(self.theta_q.level(n - 1));
            let dphi = traj.phi()[n].sub(self.phi_q.level(n - 1));
            running += k1 * dtheta.dot(&dtheta) + k2 * dphi.dot(&dphi);
        }
        let dtheta = traj.theta()[steps].sub(&self.theta_omega);
        let dphi = traj.phi()[steps].sub(&self.phi_omega);
        Ok(0.5 * dt * running + 0.5 * (k3 * dtheta.dot(&dtheta) + k4 * dphi.dot(&dphi)))
    }

    /// `(g₁, g₂)` at running levels `1..=Nt`.
    pub fn running_sources(&self, traj: &Trajectory) -> Result<(SpaceTimeField, SpaceTimeField)> {
        self.check(traj)?;
        let [k1, k2, _, _] = self.kappa;
        let g1 = traj.running_theta().sub(&self.theta_q).scaled(k1);
        let g2 = traj.running_phi().sub(&self.phi_q).scaled(k2);
        Ok((g1, g2))
    }

    /// `(g₃, g₄)`.
    pub fn terminal_sources(&self, traj: &Trajectory) -> Result<(Field, Field)> {
        self.check(traj)?;
        let [_, _, k3, k4] = self.kappa;
        let steps = traj.steps();
        Ok((
            traj.theta()[steps].sub(&self.theta_omega).scaled(k3),
            traj.phi()[steps].sub(&self.phi_omega).scaled(k4),
        ))
    }

    /// Derivative of the cost at `traj` along the tangent solution `tangent`
    /// (chain rule through the quadrature).
    pub fn derivative(&self, traj: &Trajectory, tangent: &Trajectory) -> Result<f64> {
        let (g1, g2) = self.running_sources(traj)?;
        let (g3, g4) = self.terminal_sources(traj)?;
        let dt = traj.time().dt();
        let steps = traj.steps();
        let running = g1.dot_q(&tangent.running_theta(), dt) + g2.dot_q(&tangent.running_phi(), dt);
        Ok(running + g3.dot(&tangent.theta()[steps]) + g4.dot(&tangent.phi()[steps]))
    }
}

/// Adjoint variables `q`, `p` at levels `0..=Nt`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointSolution {
    pub q: Vec<Field>,
    pub p: Vec<Field>,
}

impl AdjointSolution {
    /// `q` at the running levels `1..=Nt`: the reduced gradient.
    pub fn gradient(&self) -> SpaceTimeField {
        SpaceTimeField::new(self.q[1..].to_vec()).expect("levels share a grid")
    }
}

/// `q_T = g₃` and `p_T` solving `(I - τΔ) p_T = g₄ - ℓ g₃`.
pub fn terminal_conditions(state: &Trajectory, cost: &CostSpec, physics: &PhysicsParams) -> Result<(Field, Field)> {
    terminal_conditions_with(state, cost, physics, 1e-10)
}

fn terminal_conditions_with(
    state: &Trajectory,
    cost: &CostSpec,
    physics: &PhysicsParams,
    tolerance: f64,
) -> Result<(Field, Field)> {
    let (g3, g4) = cost.terminal_sources(state)?;
    let rhs = g4.axpy(-physics.ell, &g3);
    let p = helmholtz_solve_with(physics.tau, &rhs, tolerance)?;
    Ok((g3, p))
}

/// `M_nᵀ y` for the step leaving level `n`: only the `θ` and `φ` slots are
/// nonzero.
fn explicit_transpose(y: &[f64], dt: f64, physics: &PhysicsParams, pi_prime: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for (i, c) in y.chunks_exact(3).enumerate() {
        out[3 * i] = c[0] / dt;
        out[3 * i + 1] = physics.ell * c[0] / dt + c[1] / dt + (-physics.tau / dt + pi_prime[i]) * c[2];
    }
    out
}

/// Backward sweep of the transposed tangent scheme with the cost as data.
pub fn solve_adjoint(state: &Trajectory, cost: &CostSpec, spec: &ProblemSpec) -> Result<AdjointSolution> {
    let grid = state.grid().clone();
    if grid != spec.grid {
        return Err(Error::ShapeMismatch {
            what: "adjoint state grid",
            expected: spec.grid.len(),
            found: grid.len(),
        });
    }
    let steps = state.steps();
    let n = grid.len();
    let dt = state.time().dt();
    let w = grid.cell_measure();
    let physics = &spec.physics;
    let tol = spec.solver.neumann.residual_tolerance;

    let (g1, g2) = cost.running_sources(state)?;
    let (q_t, p_t) = terminal_conditions_with(state, cost, physics, tol)?;
    // (w q_T, w (ℓ q_T + (I - τΔ) p_T)) equals (w g₃, w g₄)
    let mut lap_p = vec![0.0; n];
    grid.laplacian_into(p_t.values(), &mut lap_p);

    let implicit = implicit_coefficients(state, &spec.potential)?;
    let explicit = explicit_coefficients(state, &spec.potential);

    let mut y_levels: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    let mut carry: Option<Vec<f64>> = None;
    for level in (1..=steps).rev() {
        let mut rhs = vec![0.0; 3 * n];
        let (a, b) = (g1.level(level - 1).values(), g2.level(level - 1).values());
        for i in 0..n {
            rhs[3 * i] = dt * w * a[i];
            rhs[3 * i + 1] = dt * w * b[i];
        }
        if level == steps {
            let (qt, pt) = (q_t.values(), p_t.values());
            for i in 0..n {
                rhs[3 * i] += w * qt[i];
                rhs[3 * i + 1] += w * (physics.ell * qt[i] + pt[i] - physics.tau * lap_p[i]);
            }
        }
        if let Some(c) = &carry {
            rhs.iter_mut().zip(c).for_each(|(r, v)| *r += v);
        }
        let lu = step_matrix(&grid, dt, physics, implicit.level(level - 1).values()).factor()?;
        lu.solve_transpose(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDivergence {
                what: "adjoint step",
                residual: f64::INFINITY,
                tolerance: tol,
            });
        }
        carry = Some(explicit_transpose(&rhs, dt, physics, explicit.level(level - 1).values()));
        y_levels[level] = rhs;
    }

    let scale = 1.0 / (dt * w);
    let mut q = Vec::with_capacity(steps + 1);
    let mut p = Vec::with_capacity(steps + 1);
    // level 0 carries the sensitivity of J to the initial data, `M_0ᵀ y¹`
    let d0 = carry.unwrap_or_else(|| vec![0.0; 3 * n]);
    let q0: Vec<f64> = d0.iter().step_by(3).map(|v| v / w).collect();
    let p0_rhs: Vec<f64> = d0
        .iter()
        .skip(1)
        .step_by(3)
        .zip(&q0)
        .map(|(v, q)| v / w - physics.ell * q)
        .collect();
    q.push(Field::from_raw(&grid, q0));
    p.push(helmholtz_solve_with(physics.tau, &Field::from_raw(&grid, p0_rhs), tol)?);
    for y in &y_levels[1..] {
        q.push(Field::from_raw(&grid, y.iter().step_by(3).map(|v| v * scale).collect()));
        p.push(Field::from_raw(&grid, y.iter().skip(1).step_by(3).map(|v| v * scale).collect()));
    }
    Ok(AdjointSolution { q, p })
}
