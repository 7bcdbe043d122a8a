//! Control box, reduced gradient, projected-gradient optimizer and first-order
//! diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{solve_adjoint, AdjointSolution};
use crate::dynamics::{solve_state, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, SpaceTimeField};
pub use crate::problem::ProblemSpec;

/// Nodewise bounds `u_min ≤ u ≤ u_max` on the running levels.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox {
    pub u_min: SpaceTimeField,
    pub u_max: SpaceTimeField,
}

impl ControlBox {
    pub fn new(u_min: SpaceTimeField, u_max: SpaceTimeField) -> Result<Self> {
        let b = Self { u_min, u_max };
        let grid = b
            .u_min
            .grid()
            .cloned()
            .ok_or_else(|| Error::Config("control box has no time levels".into()))?;
        let v = b.violations(&grid, b.u_min.len());
        if v.is_empty() {
            Ok(b)
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn constant(grid: &Grid, steps: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            SpaceTimeField::constant(grid, steps, lo),
            SpaceTimeField::constant(grid, steps, hi),
        )
    }

    pub fn violations(&self, grid: &Grid, steps: usize) -> Vec<String> {
        let mut out = Vec::new();
        for (name, f) in [("u_min", &self.u_min), ("u_max", &self.u_max)] {
            if let Err(e) = f.check_shape(grid, steps, "control bound") {
                out.push(format!("box.{name}: {e}"));
            }
        }
        if !out.is_empty() {
            return out;
        }
        for (k, (lo, hi)) in self.u_min.levels().iter().zip(self.u_max.levels()).enumerate() {
            for (i, (a, b)) in lo.values().iter().zip(hi.values()).enumerate() {
                if !(a.is_finite() && b.is_finite()) {
                    out.push(format!("box bounds must be finite (level {k}, cell {i})"));
                } else if a > b {
                    out.push(format!("u_min > u_max at level {k}, cell {i} ({a} > {b})"));
                }
            }
        }
        out
    }

    pub fn contains(&self, u: &SpaceTimeField) -> bool {
        self.u_min.flatten().iter().zip(self.u_max.flatten()).zip(u.flatten()).all(|((lo, hi), v)| *lo <= v && v <= hi)
    }
}

/// Discrete cost of the trajectory.
pub fn cost(traj: &Trajectory, spec: &ProblemSpec) -> Result<f64> {
    spec.cost.evaluate(traj)
}

/// Cost at `u`.
pub fn reduced_cost(u: &SpaceTimeField, spec: &ProblemSpec) -> Result<f64> {
    spec.cost.evaluate(&solve_state(u, spec)?)
}

/// Everything computed in one state + adjoint pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub cost: f64,
    pub gradient: SpaceTimeField,
    pub state: Trajectory,
    pub adjoint: AdjointSolution,
}

pub fn evaluate(u: &SpaceTimeField, spec: &ProblemSpec) -> Result<Evaluation> {
    let state = solve_state(u, spec)?;
    let cost = spec.cost.evaluate(&state)?;
    let adjoint = solve_adjoint(&state, &spec.cost, spec)?;
    Ok(Evaluation {
        cost,
        gradient: adjoint.gradient(),
        state,
        adjoint,
    })
}

/// `q` at the running levels: `<q, h>_Q = DJ(u)[h]`.
pub fn reduced_gradient(u: &SpaceTimeField, spec: &ProblemSpec) -> Result<SpaceTimeField> {
    Ok(evaluate(u, spec)?.gradient)
}

fn check_box_shape(u: &SpaceTimeField, bounds: &ControlBox) -> Result<()> {
    match bounds.u_min.grid() {
        Some(g) => u.check_shape(g, bounds.u_min.len(), "control"),
        None if u.is_empty() => Ok(()),
        None => Err(Error::ShapeMismatch {
            what: "control",
            expected: 0,
            found: u.len(),
        }),
    }
}

/// Nodewise clamp onto the box.
pub fn project_box(u: &SpaceTimeField, bounds: &ControlBox) -> Result<SpaceTimeField> {
    check_box_shape(u, bounds)?;
    let clamped = u
        .levels()
        .iter()
        .zip(bounds.u_min.levels().iter().zip(bounds.u_max.levels()))
        .map(|(f, (lo, hi))| {
            let values = f
                .values()
                .iter()
                .zip(lo.values().iter().zip(hi.values()))
                .map(|(v, (a, b))| v.max(*a).min(*b))
                .collect();
            Field::from_values(f.grid(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(clamped)
}

/// `‖u - P(u - g)‖_Q`; zero exactly at points satisfying the discrete
/// variational inequality.
pub fn stationarity_residual(u: &SpaceTimeField, g: &SpaceTimeField, bounds: &ControlBox, dt: f64) -> Result<f64> {
    let projected = project_box(&u.sub(g), bounds)?;
    Ok(u.sub(&projected).norm_q(dt))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BangBangReport {
    pub positive_nodes: usize,
    pub negative_nodes: usize,
    pub indeterminate_nodes: usize,
    /// Share of `{q > tol}` where `u* = u_min` (within tol).
    pub lower_fraction: f64,
    /// Share of `{q < -tol}` where `u* = u_max` (within tol).
    pub upper_fraction: f64,
    pub tolerance: f64,
}

pub fn bang_bang_classify(u: &SpaceTimeField, q: &SpaceTimeField, bounds: &ControlBox, tol: f64) -> BangBangReport {
    let (mut pos, mut neg, mut ind, mut lower_ok, mut upper_ok) = (0, 0, 0, 0, 0);
    let (u, q) = (u.flatten(), q.flatten());
    let (lo, hi) = (bounds.u_min.flatten(), bounds.u_max.flatten());
    for i in 0..u.len() {
        if q[i] > tol {
            pos += 1;
            lower_ok += usize::from((u[i] - lo[i]).abs() <= tol);
        } else if q[i] < -tol {
            neg += 1;
            upper_ok += usize::from((u[i] - hi[i]).abs() <= tol);
        } else {
            ind += 1;
        }
    }
    let frac = |ok: usize, n: usize| if n == 0 { 1.0 } else { ok as f64 / n as f64 };
    BangBangReport {
        positive_nodes: pos,
        negative_nodes: neg,
        indeterminate_nodes: ind,
        lower_fraction: frac(lower_ok, pos),
        upper_fraction: frac(upper_ok, neg),
        tolerance: tol,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OptimizeOptions {
    /// Stationarity tolerance in the discrete L²(Q) norm.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease parameter.
    pub sigma: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 500,
            sigma: 1e-4,
            initial_step: 1.0,
            max_backtracks: 40,
            min_step: 1e-10,
            max_step: 1e10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Backtracking could not find a decreasing step.
    LineSearchFailure,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizeReport {
    #[serde(skip)]
    pub control: SpaceTimeField,
    #[serde(skip)]
    pub gradient: SpaceTimeField,
    pub cost_history: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub bang_bang: BangBangReport,
}

impl OptimizeReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("history holds the initial cost")
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history holds the initial residual")
    }
}

/// Classification tolerance used at termination: `1e-8 ‖q‖∞`, widened to the
/// final stationarity defect (plus the rounding of `u - P(u - q)`) so nodes
/// still moving are not misclassified.
pub fn bang_bang_tolerance(u: &SpaceTimeField, q: &SpaceTimeField, bounds: &ControlBox) -> Result<f64> {
    let defect = u.sub(&project_box(&u.sub(q), bounds)?).max_abs();
    let rounding = 4.0 * f64::EPSILON * u.max_abs().max(1.0);
    Ok((1e-8 * q.max_abs()).max(defect + rounding))
}

/// Projected gradient with Armijo backtracking and Barzilai–Borwein steps.
pub fn optimize(spec: &ProblemSpec, u0: &SpaceTimeField, opts: &OptimizeOptions) -> Result<OptimizeReport> {
    spec.validate()?;
    let dt = spec.time.dt();
    let mut u = project_box(u0, &spec.bounds)?;
    let mut current = evaluate(&u, spec)?;
    let mut residual = stationarity_residual(&u, &current.gradient, &spec.bounds, dt)?;
    let mut cost_history = vec![current.cost];
    let mut residual_history = vec![residual];
    let mut step_history = Vec::new();
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < opts.max_iterations {
        if residual <= opts.tolerance {
            termination = Termination::Converged;
            break;
        }
        let mut s = step.clamp(opts.min_step, opts.max_step);
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = project_box(&u.axpy(-s, &current.gradient), &spec.bounds)?;
            let d = trial.sub(&u);
            let d2 = d.dot_q(&d, dt);
            if d2 == 0.0 {
                break;
            }
            // a failed solve counts as a rejected trial
            if let Ok(e) = evaluate(&trial, spec) {
                if e.cost <= current.cost - opts.sigma * d2 / s {
                    accepted = Some((trial, e, s));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((next, next_eval, s)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        iterations += 1;
        let du = next.sub(&u);
        let dg = next_eval.gradient.sub(&current.gradient);
        let curvature = du.dot_q(&dg, dt);
        step = if curvature > 0.0 { du.dot_q(&du, dt) / curvature } else { s * 2.0 };
        u = next;
        current = next_eval;
        residual = stationarity_residual(&u, &current.gradient, &spec.bounds, dt)?;
        cost_history.push(current.cost);
        residual_history.push(residual);
        step_history.push(s);
    }
    if residual <= opts.tolerance {
        termination = Termination::Converged;
    }
    let tol = bang_bang_tolerance(&u, &current.gradient, &spec.bounds)?;
    let bang_bang = bang_bang_classify(&u, &current.gradient, &spec.bounds, tol);
    Ok(OptimizeReport {
        control: u,
        gradient: current.gradient,
        cost_history,
        residual_history,
        step_history,
        iterations,
        termination,
        bang_bang,
    })
}

/// Runs [`optimize`] from each start in parallel and returns all reports plus
/// the index of the one with the lowest final cost. Failed runs are returned
/// as errors in place.
pub fn multistart(
    spec: &ProblemSpec,
    starts: &[SpaceTimeField],
    opts: &OptimizeOptions,
) -> (Vec<Result<OptimizeReport>>, Option<usize>) {
    let reports: Vec<_> = starts.par_iter().map(|u0| optimize(spec, u0, opts)).collect();
    let best = reports
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|r| (i, r.final_cost())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    (reports, best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Potential;
    use proptest::prelude::*;

    fn unit_box(lo: f64, hi: f64, n: usize, steps: usize) -> ControlBox {
        ControlBox::constant(&Grid::unit_1d(n).unwrap(), steps, lo, hi).unwrap()
    }

    fn from_vec(n: usize, values: &[f64]) -> SpaceTimeField {
        SpaceTimeField::from_flat(&Grid::unit_1d(n).unwrap(), values.len() / n, values).unwrap()
    }

    #[test]
    fn projection_clamps() {
        let b = unit_box(0.0, 1.0, 2, 1);
        let u = from_vec(2, &[1.7, -0.3]);
        assert_eq!(project_box(&u, &b).unwrap().flatten(), vec![1.0, 0.0]);
        let inside = from_vec(2, &[0.2, 0.9]);
        assert_eq!(project_box(&inside, &b).unwrap(), inside);
    }

    #[test]
    fn projection_rejects_wrong_shape() {
        let b = unit_box(0.0, 1.0, 2, 2);
        assert!(matches!(project_box(&from_vec(2, &[0.0, 0.0]), &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn box_ordering_is_checked() {
        let g = Grid::unit_1d(3).unwrap();
        let mut hi = SpaceTimeField::constant(&g, 2, 1.0);
        hi.levels_mut()[1].values_mut()[2] = -2.0;
        match ControlBox::new(SpaceTimeField::zeros(&g, 2), hi) {
            Err(Error::Validation(v)) => assert_eq!(v, vec!["u_min > u_max at level 1, cell 2 (0 > -2)".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stationarity_examples() {
        let b = unit_box(-1.0, 1.0, 4, 2);
        let dt = 0.5;
        let zero = from_vec(4, &[0.0; 8]);
        assert_eq!(stationarity_residual(&zero, &zero, &b, dt).unwrap(), 0.0);
        let lower = from_vec(4, &[-1.0; 8]);
        let g = from_vec(4, &[0.3; 8]);
        assert_eq!(stationarity_residual(&lower, &g, &b, dt).unwrap(), 0.0);
        let u = from_vec(4, &[0.1; 8]);
        let r = stationarity_residual(&u, &g, &b, dt).unwrap();
        assert!((r - g.norm_q(dt)).abs() < 1e-15);
    }

    #[test]
    fn bang_bang_examples() {
        let b = unit_box(-1.0, 1.0, 3, 1);
        let q = from_vec(3, &[0.5, -0.5, 0.0]);
        let u = from_vec(3, &[-1.0, 1.0, 0.3]);
        let r = bang_bang_classify(&u, &q, &b, 1e-12);
        assert_eq!((r.positive_nodes, r.negative_nodes, r.indeterminate_nodes), (1, 1, 1));
        assert_eq!((r.lower_fraction, r.upper_fraction), (1.0, 1.0));
        let r = bang_bang_classify(&u, &from_vec(3, &[0.0; 3]), &b, 0.0);
        assert_eq!((r.indeterminate_nodes, r.lower_fraction, r.upper_fraction), (3, 1.0, 1.0));
        let wrong = from_vec(3, &[0.0, 1.0, 0.3]);
        assert_eq!(bang_bang_classify(&wrong, &q, &b, 1e-12).lower_fraction, 0.0);
    }

    #[test]
    fn zero_weights_terminate_immediately() {
        let mut spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        spec.cost.kappa = [0.0; 4];
        let r = optimize(&spec, &spec.zero_control(), &OptimizeOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.final_cost(), 0.0);
        assert_eq!(r.final_residual(), 0.0);
        assert_eq!(r.termination, Termination::Converged);
    }

    #[test]
    fn gradient_step_decreases_cost() {
        let spec = ProblemSpec::desk(Potential::logarithmic(2.0, 1e-3).unwrap(), 1.0).unwrap();
        let u = spec.zero_control();
        let e = evaluate(&u, &spec).unwrap();
        let s = 1e-4 / e.gradient.max_abs();
        let j = reduced_cost(&u.axpy(-s, &e.gradient), &spec).unwrap();
        assert!(j < e.cost);
    }

    #[test]
    fn optimizer_descends_and_stays_feasible() {
        let spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        let opts = OptimizeOptions {
            max_iterations: 15,
            ..Default::default()
        };
        let u0 = SpaceTimeField::constant(&spec.grid, spec.time.steps(), 3.0);
        let r = optimize(&spec, &u0, &opts).unwrap();
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(spec.bounds.contains(&r.control));
        assert!(r.final_residual() < r.residual_history[0]);
    }

    #[test]
    fn multistart_picks_the_lowest_cost() {
        let spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        let opts = OptimizeOptions {
            max_iterations: 3,
            ..Default::default()
        };
        let starts: Vec<_> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|c| SpaceTimeField::constant(&spec.grid, spec.time.steps(), *c))
            .collect();
        let (reports, best) = multistart(&spec, &starts, &opts);
        let best = best.unwrap();
        let jb = reports[best].as_ref().unwrap().final_cost();
        assert!(reports.iter().all(|r| r.as_ref().unwrap().final_cost() >= jb));
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-3.0f64..3.0, 12),
            b in proptest::collection::vec(-3.0f64..3.0, 12),
        ) {
            let bx = unit_box(-1.0, 0.5, 4, 3);
            let (fa, fb) = (from_vec(4, &a), from_vec(4, &b));
            let (pa, pb) = (project_box(&fa, &bx).unwrap(), project_box(&fb, &bx).unwrap());
            prop_assert_eq!(project_box(&pa, &bx).unwrap(), pa.clone());
            prop_assert!(pa.sub(&pb).norm_q(0.1) <= fa.sub(&fb).norm_q(0.1) + 1e-15);
            prop_assert!(bx.contains(&pa));
        }
    }
}
