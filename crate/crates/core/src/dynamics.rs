//! Forward solver for the conserved phase-field system with coefficient `λ`
//! and source `v`:
//!
//! ```text
//! (θ' - θ)/dt + ℓ (φ' - φ)/dt - Δθ' = v'
//! (φ' - φ)/dt - Δμ'                = 0
//! μ' = τ (φ' - φ)/dt - Δφ' + β_ε(φ') + λ π(φ) - γ θ'
//! ```
//!
//! Backward Euler with the monotone part implicit and the perturbation
//! explicit. Each step is a monolithic Newton solve on the interleaved
//! unknowns `(θ_i, φ_i, μ_i)` with a banded LU. The state system (`λ ≡ 1`,
//! `v = u`) and the tangent system are instances of the same solver.

use crate::error::{Error, Result};
use crate::grid::{mean, Field, Grid, SpaceTimeField, TimeGrid};
use crate::linalg::{BandLu, BandMatrix};
use crate::potential::Potential;
use crate::problem::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicsParams {
    /// Viscosity `τ ≥ 0`.
    pub tau: f64,
    /// Latent heat `ℓ`; zero only in the decoupled limit.
    pub ell: f64,
    /// Coupling `γ`; zero only in the decoupled limit.
    pub gamma: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            tau: 0.0,
            ell: 1.0,
            gamma: 1.0,
        }
    }
}

impl PhysicsParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("tau", self.tau), ("ell", self.ell), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("physics.{name} must be finite and >= 0, got {v}"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    pub theta0: Field,
    pub phi0: Field,
}

impl InitialData {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            theta0: Field::zeros(grid),
            phi0: Field::zeros(grid),
        }
    }

    /// Checks that `φ0` and its mean lie in D(β).
    pub fn violations(&self, potential: &Potential) -> Vec<String> {
        let mut out = Vec::new();
        if self.theta0.grid() != self.phi0.grid() {
            out.push("initial data: theta0 and phi0 live on different grids".into());
        }
        if potential.is_singular() {
            if let Some((i, v)) = self
                .phi0
                .values()
                .iter()
                .enumerate()
                .find(|(_, v)| !potential.in_domain(**v))
            {
                let (lo, hi) = potential.domain();
                out.push(format!(
                    "initial data: phi0 = {v} at cell {i} lies outside D(beta) = ({lo}, {hi})"
                ));
            }
            let m = mean(&self.phi0);
            if !potential.in_domain(m) {
                out.push(format!("initial data: mean(phi0) = {m} must lie inside D(beta)"));
            }
        }
        out
    }
}

/// A per-step coefficient field: constant, or one field for each step `n`
/// (multiplying level `n` quantities).
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Levels(SpaceTimeField),
}

impl Coefficient {
    fn fill(&self, step: usize, out: &mut [f64]) {
        match self {
            Coefficient::Constant(c) => out.iter_mut().for_each(|v| *v = *c),
            Coefficient::Levels(levels) => out.copy_from_slice(levels.level(step).values()),
        }
    }

    fn check(&self, grid: &Grid, steps: usize) -> Result<()> {
        match self {
            Coefficient::Constant(c) if !c.is_finite() => {
                Err(Error::Config(format!("coefficient {c} is not finite")))
            }
            Coefficient::Constant(_) => Ok(()),
            Coefficient::Levels(levels) => levels.check_shape(grid, steps, "coefficient levels"),
        }
    }
}

/// How the `μ` equation treats `φ`.
#[derive(Clone, Debug)]
pub enum Nonlinearity {
    /// `β_ε(φ') + λ π(φ)`.
    Full(Potential),
    /// `a' φ' + λ φ` with `β` switched off; `implicit` holds `a` for each step
    /// (entry `n` multiplies level `n + 1`).
    Linear { implicit: SpaceTimeField },
}

#[derive(Clone, Debug)]
pub struct GeneralizedProblem {
    /// Source at levels `1..=Nt` (entry `n` drives step `n → n + 1`).
    pub source: SpaceTimeField,
    /// `λ` at levels `0..Nt` (entry `n` multiplies the explicit term at level `n`).
    pub lambda: Coefficient,
    pub nonlinearity: Nonlinearity,
    pub physics: PhysicsParams,
    pub init: InitialData,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Residual tolerance on `max(dt |F1|, dt |F2|, |F3|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Take one extra Newton step after convergence, so that the discrete
    /// solution map is smooth to round-off.
    pub polish: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-11,
            max_iterations: 50,
            max_halvings: 30,
            polish: true,
        }
    }
}

/// Discrete solution: `θ`, `φ` at levels `0..=Nt`, `μ` at levels `1..=Nt`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    theta: Vec<Field>,
    phi: Vec<Field>,
    mu: Vec<Field>,
    source: SpaceTimeField,
    time: TimeGrid,
    newton_iterations: Vec<usize>,
}

impl Trajectory {
    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn grid(&self) -> &Grid {
        self.theta[0].grid()
    }

    pub fn steps(&self) -> usize {
        self.time.steps()
    }

    pub fn theta(&self) -> &[Field] {
        &self.theta
    }

    pub fn phi(&self) -> &[Field] {
        &self.phi
    }

    /// `μ` at levels `1..=Nt`; entry `k` is level `k + 1`.
    pub fn mu(&self) -> &[Field] {
        &self.mu
    }

    pub fn source(&self) -> &SpaceTimeField {
        &self.source
    }

    /// Newton iterations spent on each step.
    pub fn newton_iterations(&self) -> &[usize] {
        &self.newton_iterations
    }

    /// `max_n |mean(φⁿ) - mean(φ⁰)|`.
    pub fn max_mass_drift(&self) -> f64 {
        let m0 = mean(&self.phi[0]);
        self.phi
            .iter()
            .map(|f| (mean(f) - m0).abs())
            .fold(0.0, f64::max)
    }

    /// `θ` and `φ` at levels `1..=Nt` as space-time fields.
    pub fn running_theta(&self) -> SpaceTimeField {
        SpaceTimeField::new(self.theta[1..].to_vec()).expect("levels share a grid")
    }

    pub fn running_phi(&self) -> SpaceTimeField {
        SpaceTimeField::new(self.phi[1..].to_vec()).expect("levels share a grid")
    }
}

/// Discrete free energy `Σ [½|∇φ|² + β̂_ε(φ) + π̂(φ)] · cell_measure`, with
/// the Moreau envelope `β̂_ε` in place of `β̂` when ε > 0.
pub fn energy(phi: &Field, potential: &Potential) -> Result<f64> {
    let grid = phi.grid();
    let mut bulk = 0.0;
    for &v in phi.values() {
        bulk += potential.eval_w(v)?.w;
    }
    Ok(0.5 * grid.grad_norm_sq(phi.values()) + bulk * grid.cell_measure())
}

/// Half-bandwidth of the interleaved step matrix.
pub(crate) fn step_bandwidth(grid: &Grid) -> usize {
    3 * grid.stride(grid.dim() - 1) + 2
}

/// Assembles the Jacobian of the step residual with respect to the new level,
/// `implicit[i]` being `∂/∂φ_i` of the implicit nonlinearity.
pub(crate) fn step_matrix(grid: &Grid, dt: f64, physics: &PhysicsParams, implicit: &[f64]) -> BandMatrix {
    let n = grid.len();
    let bw = step_bandwidth(grid);
    let mut a = BandMatrix::zeros(3 * n, bw, bw);
    let inv_dt = 1.0 / dt;
    for i in 0..n {
        let (t, p, m) = (3 * i, 3 * i + 1, 3 * i + 2);
        a.add(t, t, inv_dt);
        a.add(t, p, physics.ell * inv_dt);
        a.add(p, p, inv_dt);
        a.add(m, m, 1.0);
        a.add(m, p, -physics.tau * inv_dt - implicit[i]);
        a.add(m, t, physics.gamma);
    }
    for axis in 0..grid.dim() {
        let cells = grid.cells()[axis];
        let stride = grid.stride(axis);
        let inv_h2 = 1.0 / (grid.spacing()[axis] * grid.spacing()[axis]);
        for i in 0..n {
            if (i / stride) % cells + 1 >= cells {
                continue;
            }
            let j = i + stride;
            // L_ij = L_ji = 1/h², L_ii = L_jj -= 1/h²
            for (r, c) in [(i, j), (j, i)] {
                // -Lθ in F1, -Lμ in F2, +Lφ in F3
                a.add(3 * r, 3 * c, -inv_h2);
                a.add(3 * r, 3 * r, inv_h2);
                a.add(3 * r + 1, 3 * c + 2, -inv_h2);
                a.add(3 * r + 1, 3 * r + 2, inv_h2);
                a.add(3 * r + 2, 3 * c + 1, inv_h2);
                a.add(3 * r + 2, 3 * r + 1, -inv_h2);
            }
        }
    }
    a
}

enum StepMode<'a> {
    Full(&'a Potential),
    Linear(&'a [f64]),
}

struct Step<'a> {
    grid: &'a Grid,
    dt: f64,
    physics: &'a PhysicsParams,
    theta_prev: &'a [f64],
    phi_prev: &'a [f64],
    source: &'a [f64],
    explicit: Vec<f64>,
    mode: StepMode<'a>,
}

struct Evaluation {
    residual: Vec<f64>,
    norm: f64,
    implicit: Vec<f64>,
}

impl Step<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let n = self.grid.len();
        let (theta, phi, mu) = split(x, n);
        let mut lap_theta = vec![0.0; n];
        let mut lap_phi = vec![0.0; n];
        let mut lap_mu = vec![0.0; n];
        self.grid.laplacian_into(&theta, &mut lap_theta);
        self.grid.laplacian_into(&phi, &mut lap_phi);
        self.grid.laplacian_into(&mu, &mut lap_mu);
        let inv_dt = 1.0 / self.dt;
        let PhysicsParams { tau, ell, gamma } = *self.physics;
        let mut residual = vec![0.0; 3 * n];
        let mut implicit = vec![0.0; n];
        let mut norm: f64 = 0.0;
        for i in 0..n {
            let dphi = (phi[i] - self.phi_prev[i]) * inv_dt;
            let (nl, dnl) = match self.mode {
                StepMode::Full(p) => p.beta_eps(phi[i])?,
                StepMode::Linear(a) => (a[i] * phi[i], a[i]),
            };
            implicit[i] = dnl;
            let f1 = (theta[i] - self.theta_prev[i]) * inv_dt + ell * dphi - lap_theta[i] - self.source[i];
            let f2 = dphi - lap_mu[i];
            let f3 = mu[i] - tau * dphi + lap_phi[i] - nl - self.explicit[i] + gamma * theta[i];
            residual[3 * i] = f1;
            residual[3 * i + 1] = f2;
            residual[3 * i + 2] = f3;
            norm = norm.max((self.dt * f1).abs()).max((self.dt * f2).abs()).max(f3.abs());
        }
        if !norm.is_finite() {
            norm = f64::INFINITY;
        }
        Ok(Evaluation {
            residual,
            norm,
            implicit,
        })
    }

    fn factor(&self, implicit: &[f64]) -> Result<BandLu> {
        step_matrix(self.grid, self.dt, self.physics, implicit).factor()
    }
}

fn split(x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut theta = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for c in x.chunks_exact(3) {
        theta.push(c[0]);
        phi.push(c[1]);
        mu.push(c[2]);
    }
    (theta, phi, mu)
}

/// Shifts the `φ` components so their mean equals `target`.
fn correct_mass(x: &mut [f64], target: f64) {
    let n = x.len() / 3;
    let m = x.iter().skip(1).step_by(3).sum::<f64>() / n as f64;
    let shift = target - m;
    x.iter_mut().skip(1).step_by(3).for_each(|v| *v += shift);
}

/// Largest step fraction keeping every `φ` strictly inside D(β).
fn fraction_to_boundary(x: &[f64], dx: &[f64], potential: &Potential) -> f64 {
    let (lo, hi) = potential.domain();
    let mut alpha: f64 = 1.0;
    for (v, d) in x.iter().zip(dx).skip(1).step_by(3) {
        if *d > 0.0 && hi.is_finite() {
            alpha = alpha.min(0.99 * (hi - v) / d);
        } else if *d < 0.0 && lo.is_finite() {
            alpha = alpha.min(0.99 * (lo - v) / d);
        }
    }
    alpha
}

fn newton_step(
    step: &Step<'_>,
    level: usize,
    x0: Vec<f64>,
    mass: f64,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, usize)> {
    let guard = match step.mode {
        StepMode::Full(p) if p.yosida_eps() == 0.0 && p.is_singular() => Some(p),
        _ => None,
    };
    let linear = matches!(step.mode, StepMode::Linear(_));
    let mut x = x0;
    let mut eval = step.evaluate(&x)?;
    let mut cached: Option<BandLu> = None;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        if eval.norm <= opts.tolerance {
            if converged || !opts.polish {
                return Ok((x, iterations));
            }
            converged = true;
        }
        iterations += 1;
        let lu = match (&cached, linear) {
            (Some(lu), true) => lu.clone(),
            _ => {
                let lu = step.factor(&eval.implicit)?;
                if linear {
                    cached = Some(lu.clone());
                }
                lu
            }
        };
        let mut dx: Vec<f64> = eval.residual.iter().map(|r| -r).collect();
        lu.solve(&mut dx);
        let mut alpha = match guard {
            Some(p) => fraction_to_boundary(&x, &dx, p),
            None => 1.0,
        };
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial: Vec<f64> = x.iter().zip(&dx).map(|(v, d)| v + alpha * d).collect();
            correct_mass(&mut trial, mass);
            let outside = guard.is_some_and(|p| trial.iter().skip(1).step_by(3).any(|v| !p.in_domain(*v)));
            if !outside {
                if let Ok(e) = step.evaluate(&trial) {
                    if converged || e.norm < eval.norm || e.norm <= opts.tolerance {
                        accepted = Some((trial, e));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, e)) => {
                if converged && e.norm > eval.norm {
                    // the polishing step made things worse; keep the converged iterate
                    return Ok((x, iterations));
                }
                x = trial;
                eval = e;
            }
            None if converged => return Ok((x, iterations)),
            None if guard.is_some() => return Err(Error::DomainEscape { level }),
            None => {
                return Err(Error::NewtonDivergence {
                    level,
                    residual: eval.norm,
                    iterations,
                })
            }
        }
    }
    if eval.norm <= opts.tolerance {
        Ok((x, iterations))
    } else {
        Err(Error::NewtonDivergence {
            level,
            residual: eval.norm,
            iterations,
        })
    }
}

/// Solves the generalized problem on `time`.
pub fn solve_generalized(
    problem: &GeneralizedProblem,
    time: &TimeGrid,
    opts: &NewtonOptions,
) -> Result<Trajectory> {
    let grid = problem.init.theta0.grid().clone();
    let steps = time.steps();
    let n = grid.len();
    if problem.init.phi0.grid() != &grid {
        return Err(Error::ShapeMismatch {
            what: "initial data",
            expected: n,
            found: problem.init.phi0.len(),
        });
    }
    problem.source.check_shape(&grid, steps, "source")?;
    problem.lambda.check(&grid, steps)?;
    let violations = problem.physics.violations();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    match &problem.nonlinearity {
        Nonlinearity::Full(p) => {
            if p.is_singular() && p.yosida_eps() == 0.0 && problem.physics.tau == 0.0 {
                return Err(Error::Config(
                    "a singular potential evaluated exactly requires tau > 0".into(),
                ));
            }
            let violations = problem.init.violations(p);
            if !violations.is_empty() {
                return Err(Error::Validation(violations));
            }
        }
        Nonlinearity::Linear { implicit } => implicit.check_shape(&grid, steps, "implicit coefficient")?,
    }

    let dt = time.dt();
    let mass = mean(&problem.init.phi0);
    let mut theta = vec![problem.init.theta0.clone()];
    let mut phi = vec![problem.init.phi0.clone()];
    let mut mu: Vec<Field> = Vec::with_capacity(steps);
    let mut newton_iterations = Vec::with_capacity(steps);
    let mut lambda = vec![0.0; n];
    let mut x = vec![0.0; 3 * n];

    for step_index in 0..steps {
        let theta_prev = theta[step_index].values();
        let phi_prev = phi[step_index].values();
        problem.lambda.fill(step_index, &mut lambda);
        let (mode, explicit) = match &problem.nonlinearity {
            Nonlinearity::Full(p) => (
                StepMode::Full(p),
                lambda
                    .iter()
                    .zip(phi_prev)
                    .map(|(l, v)| l * p.pi(*v))
                    .collect::<Vec<_>>(),
            ),
            Nonlinearity::Linear { implicit } => (
                StepMode::Linear(implicit.level(step_index).values()),
                lambda.iter().zip(phi_prev).map(|(l, v)| l * v).collect(),
            ),
        };
        let step = Step {
            grid: &grid,
            dt,
            physics: &problem.physics,
            theta_prev,
            phi_prev,
            source: problem.source.level(step_index).values(),
            explicit,
            mode,
        };
        for i in 0..n {
            x[3 * i] = theta_prev[i];
            x[3 * i + 1] = phi_prev[i];
            if step_index == 0 {
                x[3 * i + 2] = 0.0;
            }
        }
        let (solution, iterations) = newton_step(&step, step_index + 1, x.clone(), mass, opts)?;
        let (t, p, m) = split(&solution, n);
        theta.push(Field::from_raw(&grid, t));
        phi.push(Field::from_raw(&grid, p));
        mu.push(Field::from_raw(&grid, m));
        newton_iterations.push(iterations);
        x = solution;
    }
    Ok(Trajectory {
        theta,
        phi,
        mu,
        source: problem.source.clone(),
        time: *time,
        newton_iterations,
    })
}

/// Solves the state system for control `u` (levels `1..=Nt`).
pub fn solve_state(u: &SpaceTimeField, spec: &ProblemSpec) -> Result<Trajectory> {
    let problem = GeneralizedProblem {
        source: u.clone(),
        lambda: Coefficient::Constant(1.0),
        nonlinearity: Nonlinearity::Full(spec.potential.clone()),
        physics: spec.physics,
        init: spec.init.clone(),
    };
    solve_generalized(&problem, &spec.time, &spec.solver.newton)
}

/// `β_ε'(φⁿ)` for `n = 1..=Nt` along a state trajectory.
pub(crate) fn implicit_coefficients(base: &Trajectory, potential: &Potential) -> Result<SpaceTimeField> {
    let levels = base.phi[1..]
        .iter()
        .map(|f| {
            let values = f
                .values()
                .iter()
                .map(|&v| potential.beta_eps(v).map(|(_, d)| d))
                .collect::<Result<Vec<_>>>()?;
            Ok(Field::from_raw(f.grid(), values))
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(levels)
}

/// `π'(φⁿ)` for `n = 0..Nt`.
pub(crate) fn explicit_coefficients(base: &Trajectory, potential: &Potential) -> SpaceTimeField {
    let levels = base.phi[..base.steps()]
        .iter()
        .map(|f| f.map(|v| potential.pi_prime(v)))
        .collect();
    SpaceTimeField::new(levels).expect("levels share a grid")
}

/// Derivative of the discrete control-to-state map at `base` in direction
/// `h`, returned as `(Θ, Φ, Z)` in the `(θ, φ, μ)` slots of a trajectory.
pub fn solve_tangent(h: &SpaceTimeField, base: &Trajectory, spec: &ProblemSpec) -> Result<Trajectory> {
    let grid = base.grid();
    h.check_shape(grid, base.steps(), "tangent direction")?;
    let problem = GeneralizedProblem {
        source: h.clone(),
        lambda: Coefficient::Levels(explicit_coefficients(base, &spec.potential)),
        nonlinearity: Nonlinearity::Linear {
            implicit: implicit_coefficients(base, &spec.potential)?,
        },
        physics: spec.physics,
        init: InitialData::zeros(grid),
    };
    solve_generalized(&problem, &spec.time, &spec.solver.newton)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_levels(grid: &Grid, count: usize, amp: f64, rng: &mut ChaCha8Rng) -> SpaceTimeField {
        SpaceTimeField::new(
            (0..count)
                .map(|_| Field::from_raw(grid, (0..grid.len()).map(|_| rng.gen_range(-amp..amp)).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn spec(potential: Potential, tau: f64) -> ProblemSpec {
        let mut spec = ProblemSpec::desk(potential, tau).unwrap();
        spec.init.phi0 = Field::from_fn(&spec.grid, |x| 0.1 + 0.3 * (PI * x[0]).cos());
        spec
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let spec = spec(Potential::regular(), 0.0);
        let mut spec = spec;
        spec.init = InitialData::zeros(&spec.grid);
        let u = SpaceTimeField::zeros(&spec.grid, spec.time.steps());
        let traj = solve_state(&u, &spec).unwrap();
        for n in 0..=spec.time.steps() {
            assert_eq!(traj.theta()[n].max_abs(), 0.0);
            assert_eq!(traj.phi()[n].max_abs(), 0.0);
        }
        assert!(traj.mu().iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn spatially_constant_data_is_preserved() {
        for (potential, tau) in [(Potential::regular(), 0.0), (Potential::logarithmic(2.0, 1e-3).unwrap(), 1.0)] {
            let mut spec = spec(potential, tau);
            spec.init.theta0 = Field::constant(&spec.grid, 0.7);
            spec.init.phi0 = Field::constant(&spec.grid, -0.4);
            let u = SpaceTimeField::zeros(&spec.grid, spec.time.steps());
            let traj = solve_state(&u, &spec).unwrap();
            for n in 0..=spec.time.steps() {
                assert!(traj.theta()[n].values().iter().all(|v| (v - 0.7).abs() < 1e-12));
                assert!(traj.phi()[n].values().iter().all(|v| (v + 0.4).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn mass_is_conserved_for_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (potential, tau) in [(Potential::regular(), 0.0), (Potential::logarithmic(2.0, 1e-3).unwrap(), 1.0)] {
            let mut spec = spec(potential, tau);
            spec.init.phi0 = Field::from_raw(
                &spec.grid,
                (0..spec.grid.len()).map(|_| rng.gen_range(-0.8..0.8)).collect(),
            );
            let u = random_levels(&spec.grid, spec.time.steps(), 1.0, &mut rng);
            let traj = solve_state(&u, &spec).unwrap();
            let m0 = mean(&traj.phi()[0]);
            assert!(traj.max_mass_drift() <= 1e-12 * (1.0 + m0.abs()));
        }
    }

    #[test]
    fn state_solve_is_the_generalized_solve_with_unit_lambda() {
        let spec = spec(Potential::regular(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let u = random_levels(&spec.grid, spec.time.steps(), 1.0, &mut rng);
        let a = solve_state(&u, &spec).unwrap();
        let problem = GeneralizedProblem {
            source: u.clone(),
            lambda: Coefficient::Levels(SpaceTimeField::constant(&spec.grid, spec.time.steps(), 1.0)),
            nonlinearity: Nonlinearity::Full(spec.potential.clone()),
            physics: spec.physics,
            init: spec.init.clone(),
        };
        let b = solve_generalized(&problem, &spec.time, &spec.solver.newton).unwrap();
        assert_eq!(a.phi(), b.phi());
        assert_eq!(a.theta(), b.theta());
    }

    #[test]
    fn exact_singular_mode_needs_viscosity() {
        let mut spec = spec(Potential::logarithmic(2.0, 0.0).unwrap(), 1.0);
        spec.physics.tau = 0.0;
        let u = SpaceTimeField::zeros(&spec.grid, spec.time.steps());
        assert!(matches!(solve_state(&u, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn exact_singular_mode_stays_inside_the_domain() {
        let mut spec = spec(Potential::logarithmic(2.0, 0.0).unwrap(), 1.0);
        spec.init.phi0 = Field::from_fn(&spec.grid, |x| 0.9 * (PI * x[0]).cos());
        let u = SpaceTimeField::constant(&spec.grid, spec.time.steps(), 1.0);
        let traj = solve_state(&u, &spec).unwrap();
        assert!(traj.phi().iter().all(|f| f.max_abs() < 1.0));
    }

    #[test]
    fn tangent_is_linear_and_vanishes_for_zero_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = spec(Potential::logarithmic(2.0, 1e-3).unwrap(), 1.0);
        let u = random_levels(&spec.grid, spec.time.steps(), 1.0, &mut rng);
        let base = solve_state(&u, &spec).unwrap();
        let zero = solve_tangent(&SpaceTimeField::zeros(&spec.grid, spec.time.steps()), &base, &spec).unwrap();
        assert!(zero.phi().iter().chain(zero.theta()).chain(zero.mu()).all(|f| f.max_abs() == 0.0));
        let h = random_levels(&spec.grid, spec.time.steps(), 1.0, &mut rng);
        let t1 = solve_tangent(&h, &base, &spec).unwrap();
        let t2 = solve_tangent(&h.scaled(2.0), &base, &spec).unwrap();
        for (a, b) in t1.phi().iter().zip(t2.phi()).chain(t1.theta().iter().zip(t2.theta())) {
            assert!(b.sub(&a.scaled(2.0)).max_abs() <= 1e-12 * b.max_abs().max(1e-300));
        }
        assert!(t1.max_mass_drift() <= 1e-12);
    }

    #[test]
    fn energy_decreases_in_the_decoupled_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for (potential, tau) in [(Potential::regular(), 0.0), (Potential::logarithmic(2.0, 1e-3).unwrap(), 1.0)] {
            let mut spec = spec(potential, tau);
            spec.physics.ell = 0.0;
            spec.physics.gamma = 0.0;
            spec.init.phi0 = Field::from_raw(
                &spec.grid,
                (0..spec.grid.len()).map(|_| rng.gen_range(-0.9..0.9)).collect(),
            );
            let u = SpaceTimeField::zeros(&spec.grid, spec.time.steps());
            let traj = solve_state(&u, &spec).unwrap();
            let energies: Vec<f64> = traj.phi().iter().map(|f| energy(f, &spec.potential).unwrap()).collect();
            for w in energies.windows(2) {
                assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()), "{w:?}");
            }
        }
    }

    #[test]
    fn step_matrix_matches_residual_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let grid = Grid::new(&[4, 3], &[1.0, 0.8]).unwrap();
        let physics = PhysicsParams {
            tau: 0.3,
            ell: 0.7,
            gamma: 1.3,
        };
        let potential = Potential::regular();
        let n = grid.len();
        let prev: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let zeros = vec![0.0; n];
        let step = Step {
            grid: &grid,
            dt: 0.1,
            physics: &physics,
            theta_prev: &prev,
            phi_prev: &prev,
            source: &zeros,
            explicit: zeros.clone(),
            mode: StepMode::Full(&potential),
        };
        let x: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let e = step.evaluate(&x).unwrap();
        let a = step_matrix(&grid, 0.1, &physics, &e.implicit);
        for j in 0..3 * n {
            let d = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += d;
            xm[j] -= d;
            let rp = step.evaluate(&xp).unwrap().residual;
            let rm = step.evaluate(&xm).unwrap().residual;
            for i in 0..3 * n {
                let fd = (rp[i] - rm[i]) / (2.0 * d);
                assert!((fd - a.get(i, j)).abs() <= 1e-6 * (1.0 + fd.abs()), "({i},{j}) {fd} {}", a.get(i, j));
            }
        }
    }
}
