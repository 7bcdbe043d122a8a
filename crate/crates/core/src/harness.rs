//! Independent oracles and property probes: finite-difference gradients,
//! Fréchet remainder order, continuous-dependence ratios, Yosida convergence,
//! energy decay, separation from the singularities, and the identities of
//! the inverse Neumann operator.
//!
//! Every probe owns its forward solves and is deterministic for a given seed.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::solve_adjoint;
use crate::control::{project_box, reduced_cost, ControlBox};
use crate::dynamics::{energy, solve_state, solve_tangent, InitialData, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{
    dual_norm_v_prime, helmholtz_solve, inverse_neumann, laplacian_neumann, mean, norms, Field, Grid, SpaceTimeField,
    TimeGrid,
};
use crate::problem::ProblemSpec;

/// Spatial smoothing length² applied to random controls.
pub const SMOOTHING: f64 = 0.01;

/// Machine-readable outcome of a probe.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ProbeReport {
    pub name: String,
    pub config_digest: String,
    pub applicable: bool,
    pub passed: bool,
    pub measurements: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub thresholds: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Wall-clock time; kept out of serialized output so reports are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ProbeReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            applicable: true,
            ..Default::default()
        }
    }

    fn not_applicable(name: &str, note: &str) -> Self {
        Self {
            name: name.to_string(),
            applicable: false,
            passed: true,
            note: Some(note.to_string()),
            ..Default::default()
        }
    }

    fn measure(&mut self, key: &str, value: f64) {
        self.measurements.insert(key.to_string(), value);
    }

    fn threshold(&mut self, key: &str, value: f64) {
        self.thresholds.insert(key.to_string(), value);
    }

    fn series(&mut self, key: &str, values: Vec<f64>) {
        self.series.insert(key.to_string(), values);
    }

    pub fn with_digest(mut self, digest: &str) -> Self {
        self.config_digest = digest.to_string();
        self
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<ProbeReport>) -> Result<ProbeReport> {
    let start = Instant::now();
    let mut r = f()?;
    r.name = name.to_string();
    r.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(r)
}

/// `maxₙ ‖aⁿ‖_H + (Σₙ₌₁ ‖aⁿ‖²_V dt)^½` plus the same for `b`, over levels
/// `0..=Nt` for the maximum and `1..=Nt` for the sum.
pub fn y_norm(a: &[Field], b: &[Field], dt: f64) -> f64 {
    let part = |f: &[Field]| {
        let max = f.iter().map(|x| norms(x).h).fold(0.0, f64::max);
        let sum: f64 = f.iter().skip(1).map(|x| norms(x).v.powi(2)).sum();
        max + (sum * dt).sqrt()
    };
    part(a) + part(b)
}

/// Y-norm of the `(θ, φ)` difference of two trajectories.
pub fn y_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let dtheta: Vec<Field> = a.theta().iter().zip(b.theta()).map(|(x, y)| x.sub(y)).collect();
    let dphi: Vec<Field> = a.phi().iter().zip(b.phi()).map(|(x, y)| x.sub(y)).collect();
    y_norm(&dtheta, &dphi, a.time().dt())
}

/// `(1∗f)` at levels `0..=Nt`: cumulative right-endpoint sums, zero at level 0.
pub fn time_antiderivative(f: &SpaceTimeField, dt: f64) -> Vec<Field> {
    let Some(grid) = f.grid() else {
        return Vec::new();
    };
    let mut out = vec![Field::zeros(grid)];
    for level in f.levels() {
        let next = out.last().expect("nonempty").axpy(dt, level);
        out.push(next);
    }
    out
}

/// `(J(u + δh) - J(u - δh)) / 2δ` from two independent forward solves.
pub fn fd_directional_derivative(u: &SpaceTimeField, h: &SpaceTimeField, spec: &ProblemSpec, delta: f64) -> Result<f64> {
    let (jp, jm) = rayon::join(
        || reduced_cost(&u.axpy(delta, h), spec),
        || reduced_cost(&u.axpy(-delta, h), spec),
    );
    Ok((jp? - jm?) / (2.0 * delta))
}

/// Central differences over a step ladder, with the plateau value picked as
/// the pair of neighbouring steps that agree best.
#[derive(Clone, Debug, Serialize)]
pub struct FdSweep {
    pub deltas: Vec<f64>,
    pub values: Vec<f64>,
    pub plateau_delta: f64,
    pub plateau_value: f64,
}

pub fn fd_sweep(u: &SpaceTimeField, h: &SpaceTimeField, spec: &ProblemSpec) -> Result<FdSweep> {
    let scale = u.max_abs() + 1.0;
    let deltas: Vec<f64> = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7].iter().map(|d| d * scale).collect();
    let values = deltas
        .par_iter()
        .map(|d| fd_directional_derivative(u, h, spec, *d))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..values.len() - 1)
        .min_by(|&i, &j| {
            let a = (values[i] - values[i + 1]).abs();
            let b = (values[j] - values[j + 1]).abs();
            a.total_cmp(&b)
        })
        .expect("ladder has at least two steps");
    Ok(FdSweep {
        plateau_delta: deltas[best + 1],
        plateau_value: values[best + 1],
        deltas,
        values,
    })
}

/// Uniform random control in the box, smoothed by one implicit heat step and
/// projected back.
pub fn random_admissible_control(bounds: &ControlBox, rng: &mut ChaCha8Rng) -> Result<SpaceTimeField> {
    let levels = bounds
        .u_min
        .levels()
        .iter()
        .zip(bounds.u_max.levels())
        .map(|(lo, hi)| {
            let raw: Vec<f64> = lo
                .values()
                .iter()
                .zip(hi.values())
                .map(|(a, b)| if a < b { rng.gen_range(*a..*b) } else { *a })
                .collect();
            helmholtz_solve(SMOOTHING, &Field::from_values(lo.grid(), raw)?)
        })
        .collect::<Result<Vec<_>>>()?;
    project_box(&SpaceTimeField::new(levels)?, bounds)
}

/// Highest cosine mode per axis in [`random_direction`].
pub const DIRECTION_MODES: usize = 4;

/// Random smooth direction: a combination of the cosine modes `0..=4` along
/// each axis, with coefficients drawn from `[-1, 1]` independently per level.
pub fn random_direction(grid: &Grid, steps: usize, rng: &mut ChaCha8Rng) -> Result<SpaceTimeField> {
    let modes: Vec<Vec<usize>> = match grid.dim() {
        1 => (0..=DIRECTION_MODES).map(|k| vec![k]).collect(),
        _ => (0..=DIRECTION_MODES)
            .flat_map(|k| (0..=DIRECTION_MODES).map(move |j| vec![k, j]))
            .collect(),
    };
    let lengths = grid.lengths().to_vec();
    let levels = (0..steps)
        .map(|_| {
            let coeffs: Vec<f64> = modes.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            Field::from_fn(grid, |x| {
                modes
                    .iter()
                    .zip(&coeffs)
                    .map(|(m, c)| {
                        c * m
                            .iter()
                            .zip(x)
                            .zip(&lengths)
                            .map(|((k, xi), l)| (std::f64::consts::PI * *k as f64 * xi / l).cos())
                            .product::<f64>()
                    })
                    .sum()
            })
        })
        .collect();
    SpaceTimeField::new(levels)
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectionCheck {
    /// `<q, h>_Q` from the adjoint.
    pub adjoint: f64,
    /// Chain rule through the tangent solution.
    pub tangent: f64,
    pub fd: FdSweep,
    pub fd_relative_error: f64,
    pub duality_relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheck {
    pub cost: f64,
    pub directions: Vec<DirectionCheck>,
    pub max_fd_relative_error: f64,
    pub max_duality_relative_error: f64,
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the adjoint gradient against the tangent chain rule and the FD
/// oracle along each direction.
pub fn gradient_check(u: &SpaceTimeField, directions: &[SpaceTimeField], spec: &ProblemSpec) -> Result<GradientCheck> {
    let state = solve_state(u, spec)?;
    let cost = spec.cost.evaluate(&state)?;
    let gradient = solve_adjoint(&state, &spec.cost, spec)?.gradient();
    let dt = spec.time.dt();
    let checks = directions
        .par_iter()
        .map(|h| {
            let adjoint = gradient.dot_q(h, dt);
            let tangent = spec.cost.derivative(&state, &solve_tangent(h, &state, spec)?)?;
            let fd = fd_sweep(u, h, spec)?;
            Ok(DirectionCheck {
                adjoint,
                tangent,
                fd_relative_error: relative(adjoint, fd.plateau_value),
                duality_relative_error: relative(adjoint, tangent),
                fd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientCheck {
        cost,
        max_fd_relative_error: checks.iter().map(|c| c.fd_relative_error).fold(0.0, f64::max),
        max_duality_relative_error: checks.iter().map(|c| c.duality_relative_error).fold(0.0, f64::max),
        directions: checks,
    })
}

/// Least-squares slope of `log y` against `log x`, ignoring nonpositive `y`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub const FRECHET_DELTAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// `r(δ) = ‖S(u + δh) - S(u) - δ S'(u)h‖_Y` over a δ ladder, with the
/// log-log slope; the remainder is quadratic, so the slope should be near 2.
pub fn frechet_remainder_probe(
    u: &SpaceTimeField,
    h: &SpaceTimeField,
    spec: &ProblemSpec,
    deltas: &[f64],
) -> Result<ProbeReport> {
    timed("frechet", || {
        let base = solve_state(u, spec)?;
        let tangent = solve_tangent(h, &base, spec)?;
        let remainders = deltas
            .par_iter()
            .map(|d| {
                let moved = solve_state(&u.axpy(*d, h), spec)?;
                let rem = |a: &[Field], b: &[Field], t: &[Field]| -> Vec<Field> {
                    a.iter().zip(b).zip(t).map(|((x, y), z)| x.sub(y).axpy(-d, z)).collect()
                };
                let rt = rem(moved.theta(), base.theta(), tangent.theta());
                let rp = rem(moved.phi(), base.phi(), tangent.phi());
                Ok(y_norm(&rt, &rp, spec.time.dt()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut r = ProbeReport::new("frechet");
        if h.max_abs() == 0.0 {
            r.passed = remainders.iter().all(|v| *v == 0.0);
            r.note = Some("zero direction: remainder vanishes identically".into());
        } else {
            let slope = log_log_slope(deltas, &remainders);
            r.measure("slope", slope);
            r.passed = (1.8..=2.2).contains(&slope);
        }
        r.threshold("slope_min", 1.8);
        r.threshold("slope_max", 2.2);
        r.series("delta", deltas.to_vec());
        r.series("remainder", remainders);
        Ok(r)
    })
}

/// Doubles the cells along every axis and the number of time steps,
/// transferring data by piecewise-constant injection.
pub fn refine(spec: &ProblemSpec) -> Result<ProblemSpec> {
    let cells: Vec<usize> = spec.grid.cells().iter().map(|n| 2 * n).collect();
    let fine = Grid::new(&cells, spec.grid.lengths())?;
    let coarse = &spec.grid;
    let parent = |i: usize| -> usize {
        let mut rem = i;
        let mut idx = 0;
        for axis in 0..fine.dim() {
            let k = rem % cells[axis];
            rem /= cells[axis];
            idx += (k / 2) * coarse.stride(axis);
        }
        idx
    };
    let field = |f: &Field| Field::from_values(&fine, (0..fine.len()).map(|i| f.values()[parent(i)]).collect());
    let steps = 2 * spec.time.steps();
    // fine level k (1-based) sits inside coarse step ceil(k / 2)
    let levels = |f: &SpaceTimeField| -> Result<SpaceTimeField> {
        SpaceTimeField::new((0..steps).map(|k| field(f.level(k / 2))).collect::<Result<Vec<_>>>()?)
    };
    let mut out = spec.clone();
    out.grid = fine.clone();
    out.time = TimeGrid::new(spec.time.horizon(), steps)?;
    out.init = InitialData {
        theta0: field(&spec.init.theta0)?,
        phi0: field(&spec.init.phi0)?,
    };
    out.cost.theta_q = levels(&spec.cost.theta_q)?;
    out.cost.phi_q = levels(&spec.cost.phi_q)?;
    out.cost.theta_omega = field(&spec.cost.theta_omega)?;
    out.cost.phi_omega = field(&spec.cost.phi_omega)?;
    out.bounds = ControlBox::new(levels(&spec.bounds.u_min)?, levels(&spec.bounds.u_max)?)?;
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzRatios {
    /// `‖S(u₁) - S(u₂)‖_Y / ‖u₁ - u₂‖_Q`.
    pub ratios: Vec<f64>,
    /// Weaker norms over `‖1∗(u₁ - u₂)‖_Q`.
    pub weak_ratios: Vec<f64>,
    pub max_ratio: f64,
    pub max_weak_ratio: f64,
}

/// Ratios for `pairs` seeded pairs of random admissible controls.
pub fn lipschitz_ratios(spec: &ProblemSpec, pairs: usize, seed: u64) -> Result<LipschitzRatios> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let controls = (0..pairs)
        .map(|_| {
            Ok((
                random_admissible_control(&spec.bounds, &mut rng)?,
                random_admissible_control(&spec.bounds, &mut rng)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let dt = spec.time.dt();
    let tau = spec.physics.tau;
    let results = controls
        .par_iter()
        .map(|(u1, u2)| -> Result<Option<(f64, f64)>> {
            let du = u1.sub(u2);
            let denom = du.norm_q(dt);
            if denom == 0.0 {
                return Ok(None);
            }
            let (s1, s2) = rayon::join(|| solve_state(u1, spec), || solve_state(u2, spec));
            let (s1, s2) = (s1?, s2?);
            let strong = y_distance(&s1, &s2) / denom;

            let dtheta: Vec<Field> = s1.theta().iter().zip(s2.theta()).map(|(a, b)| a.sub(b)).collect();
            let dphi: Vec<Field> = s1.phi().iter().zip(s2.phi()).map(|(a, b)| a.sub(b)).collect();
            let theta_l2 = (dtheta[1..].iter().map(|f| f.dot(f)).sum::<f64>() * dt).sqrt();
            let running = SpaceTimeField::new(dtheta[1..].to_vec())?;
            let int_theta = time_antiderivative(&running, dt);
            let int_theta_v = int_theta.iter().map(|f| norms(f).v).fold(0.0, f64::max);
            let mut phi_vp: f64 = 0.0;
            for f in &dphi {
                phi_vp = phi_vp.max(dual_norm_v_prime(f)?);
            }
            let phi_l2v = (dphi[1..].iter().map(|f| norms(f).v.powi(2)).sum::<f64>() * dt).sqrt();
            let phi_h = dphi.iter().map(|f| norms(f).h).fold(0.0, f64::max);
            let weak_num = theta_l2 + int_theta_v + phi_vp + phi_l2v + tau * phi_h;
            let int_u = time_antiderivative(&du, dt);
            let weak_denom = (int_u[1..].iter().map(|f| f.dot(f)).sum::<f64>() * dt).sqrt();
            Ok(Some((strong, weak_num / weak_denom)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ratios, weak_ratios): (Vec<f64>, Vec<f64>) = results.into_iter().flatten().unzip();
    Ok(LipschitzRatios {
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        max_weak_ratio: weak_ratios.iter().copied().fold(0.0, f64::max),
        ratios,
        weak_ratios,
    })
}

/// Continuous-dependence ratios on `spec` and on its refinement; passes when
/// the maximal strong ratio changes by at most a factor 2.
pub fn lipschitz_probe(spec: &ProblemSpec, pairs: usize, seed: u64) -> Result<ProbeReport> {
    timed("lipschitz", || {
        let fine = refine(spec)?;
        let (coarse, refined) = rayon::join(
            || lipschitz_ratios(spec, pairs, seed),
            || lipschitz_ratios(&fine, pairs, seed),
        );
        let (coarse, refined) = (coarse?, refined?);
        let change = refined.max_ratio / coarse.max_ratio;
        let mut r = ProbeReport::new("lipschitz");
        r.measure("max_ratio", coarse.max_ratio);
        r.measure("max_ratio_refined", refined.max_ratio);
        r.measure("max_weak_ratio", coarse.max_weak_ratio);
        r.measure("max_weak_ratio_refined", refined.max_weak_ratio);
        r.measure("refinement_factor", change);
        r.threshold("refinement_factor_max", 2.0);
        r.threshold("refinement_factor_min", 0.5);
        let finite = coarse.ratios.iter().chain(&refined.ratios).all(|v| v.is_finite() && *v > 0.0);
        r.passed = finite && (0.5..=2.0).contains(&change);
        r.series("ratios", coarse.ratios);
        r.series("ratios_refined", refined.ratios);
        r.series("weak_ratios", coarse.weak_ratios);
        Ok(r)
    })
}

pub const YOSIDA_LADDER: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Solves the state system for each Yosida level and checks that
/// consecutive trajectory differences shrink, that `|β_ε| ≤ |β|` on the
/// computed value range, and that mass is conserved at every level.
pub fn yosida_convergence_probe(spec: &ProblemSpec, u: &SpaceTimeField, ladder: &[f64]) -> Result<ProbeReport> {
    timed("yosida", || {
        if !spec.potential.is_singular() {
            return Ok(ProbeReport::not_applicable("yosida", "D(beta) is the whole line"));
        }
        if spec.physics.tau <= 0.0 {
            return Err(Error::Config("the Yosida probe needs tau > 0".into()));
        }
        let specs = ladder.iter().map(|e| spec.with_yosida_eps(*e)).collect::<Result<Vec<_>>>()?;
        let trajectories = specs.par_iter().map(|s| solve_state(u, s)).collect::<Result<Vec<_>>>()?;
        let diffs: Vec<f64> = trajectories.windows(2).map(|w| y_distance(&w[0], &w[1])).collect();
        let decreasing = diffs.windows(2).all(|w| w[1] < w[0]);

        let (lo, hi) = spec.potential.domain();
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in &trajectories {
            for f in t.phi() {
                vmin = vmin.min(f.min());
                vmax = vmax.max(f.max());
            }
        }
        let margin = 1e-12;
        let (a, b) = (vmin.max(lo + margin), vmax.min(hi - margin));
        let mut worst_excess = f64::NEG_INFINITY;
        for k in 0..=200 {
            let r = a + (b - a) * k as f64 / 200.0;
            let exact = spec.potential.exact_split(r)?.beta.abs();
            for (s, _) in specs.iter().zip(ladder) {
                let reg = s.potential.beta_eps(r)?.0.abs();
                worst_excess = worst_excess.max(reg - exact);
            }
        }
        let drift = trajectories
            .iter()
            .map(|t| t.max_mass_drift() / (1.0 + mean(&t.phi()[0]).abs()))
            .fold(0.0, f64::max);

        let mut r = ProbeReport::new("yosida");
        r.series("epsilon", ladder.to_vec());
        r.series("consecutive_difference", diffs);
        r.measure("value_range_min", vmin);
        r.measure("value_range_max", vmax);
        r.measure("max_beta_excess", worst_excess);
        r.measure("max_relative_mass_drift", drift);
        r.threshold("max_beta_excess", 0.0);
        r.threshold("max_relative_mass_drift", 1e-12);
        r.measure("differences_strictly_decrease", f64::from(u8::from(decreasing)));
        r.passed = decreasing && worst_excess <= 0.0 && drift <= 1e-12;
        Ok(r)
    })
}

/// Energy along a run with `ℓ = γ = 0` and `u = 0`; passes when no step
/// raises the energy by more than `1e-10 (1 + |Eⁿ|)`.
pub fn energy_probe(spec: &ProblemSpec) -> Result<ProbeReport> {
    timed("energy", || {
        let mut decoupled = spec.clone();
        decoupled.physics.ell = 0.0;
        decoupled.physics.gamma = 0.0;
        let traj = solve_state(&decoupled.zero_control(), &decoupled)?;
        let energies = traj
            .phi()
            .iter()
            .map(|f| energy(f, &spec.potential))
            .collect::<Result<Vec<_>>>()?;
        let worst = energies
            .windows(2)
            .map(|w| (w[1] - w[0]) / (1.0 + w[0].abs()))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut r = ProbeReport::new("energy");
        r.measure("max_scaled_increase", worst);
        r.measure("steps", spec.time.steps() as f64);
        r.threshold("max_scaled_increase", 1e-10);
        r.passed = worst <= 1e-10;
        r.series("energy", energies);
        Ok(r)
    })
}

/// Minimal distance of `φ` to the boundary of D(β) over all levels.
pub fn separation_margin(traj: &Trajectory, spec: &ProblemSpec) -> f64 {
    traj.phi()
        .iter()
        .flat_map(|f| f.values().iter())
        .map(|v| spec.potential.boundary_distance(*v))
        .fold(f64::INFINITY, f64::min)
}

/// Separation margin for `u = 0` and `controls` seeded random admissible
/// controls; passes when every margin is positive.
pub fn separation_probe(spec: &ProblemSpec, controls: usize, seed: u64) -> Result<ProbeReport> {
    timed("separation", || {
        if !spec.potential.is_singular() {
            return Ok(ProbeReport::not_applicable("separation", "D(beta) is the whole line"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = vec![spec.zero_control()];
        for _ in 0..controls {
            inputs.push(random_admissible_control(&spec.bounds, &mut rng)?);
        }
        let margins = inputs
            .par_iter()
            .map(|u| Ok(separation_margin(&solve_state(u, spec)?, spec)))
            .collect::<Result<Vec<_>>>()?;
        let initial = spec
            .init
            .phi0
            .values()
            .iter()
            .map(|v| spec.potential.boundary_distance(*v))
            .fold(f64::INFINITY, f64::min);
        let mut r = ProbeReport::new("separation");
        let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
        r.measure("initial_margin", initial);
        r.measure("zero_control_margin", margins[0]);
        r.measure("min_margin", min);
        r.threshold("min_margin", 0.0);
        r.passed = min > 0.0;
        r.series("margins", margins);
        Ok(r)
    })
}

/// Random zero-mean field with entries from `[-1, 1]`.
pub fn random_zero_mean(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
    let f = Field::from_fn(grid, |_| rng.gen_range(-1.0..1.0));
    let m = mean(&f);
    f.map(|v| v - m)
}

/// Round trip `-Δ N f = f` and symmetry `<f, N g> = <g, N f>` on random
/// zero-mean fields for each 1D size.
pub fn operator_n_probe(sizes: &[usize], seed: u64) -> Result<ProbeReport> {
    timed("operator-n", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut round_trip: Vec<f64> = Vec::new();
        let mut symmetry: Vec<f64> = Vec::new();
        for &n in sizes {
            let grid = Grid::unit_1d(n)?;
            let (mut rt, mut sy): (f64, f64) = (0.0, 0.0);
            for _ in 0..5 {
                let f = random_zero_mean(&grid, &mut rng);
                let g = random_zero_mean(&grid, &mut rng);
                let (nf, ng) = (inverse_neumann(&f)?, inverse_neumann(&g)?);
                let back = laplacian_neumann(&nf).scaled(-1.0);
                rt = rt.max(back.sub(&f).max_abs() / f.max_abs());
                let scale = norms(&f).h * norms(&ng).h;
                sy = sy.max((f.dot(&ng) - g.dot(&nf)).abs() / scale);
            }
            round_trip.push(rt);
            symmetry.push(sy);
        }
        let mut r = ProbeReport::new("operator-n");
        let (rt, sy) = (
            round_trip.iter().copied().fold(0.0, f64::max),
            symmetry.iter().copied().fold(0.0, f64::max),
        );
        r.measure("max_round_trip", rt);
        r.measure("max_symmetry", sy);
        r.threshold("max_round_trip", 1e-10);
        r.threshold("max_symmetry", 1e-12);
        r.series("sizes", sizes.iter().map(|n| *n as f64).collect());
        r.series("round_trip", round_trip);
        r.series("symmetry", symmetry);
        r.passed = rt <= 1e-10 && sy <= 1e-12;
        Ok(r)
    })
}

/// Both forms of Young's inequality, `ab ≤ α a^{1/α} + (1-α) b^{1/(1-α)}`
/// and `ab ≤ δ a² + b²/(4δ)`, for `a, b ≥ 0`, `α ∈ (0,1)`, `δ > 0`.
/// Returns the two slacks (right minus left sides).
pub fn young_slack(a: f64, b: f64, alpha: f64, delta: f64) -> (f64, f64) {
    let ab = a * b;
    (
        alpha * a.powf(1.0 / alpha) + (1.0 - alpha) * b.powf(1.0 / (1.0 - alpha)) - ab,
        delta * a * a + b * b / (4.0 * delta) - ab,
    )
}

/// Names accepted by [`run_probe`].
pub const PROBES: [&str; 6] = ["frechet", "lipschitz", "yosida", "energy", "separation", "operator-n"];

/// Runs a named probe with the problem's own data and seeded inputs.
pub fn run_probe(name: &str, spec: &ProblemSpec, u: &SpaceTimeField, seed: u64) -> Result<ProbeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "frechet" => {
            let h = random_direction(&spec.grid, spec.time.steps(), &mut rng)?;
            frechet_remainder_probe(u, &h, spec, &FRECHET_DELTAS)
        }
        "lipschitz" => lipschitz_probe(spec, 20, seed),
        "yosida" => yosida_convergence_probe(spec, u, &YOSIDA_LADDER),
        "energy" => energy_probe(spec),
        "separation" => separation_probe(spec, 10, seed),
        "operator-n" => operator_n_probe(&[32, 64, 128], seed),
        other => Err(Error::Config(format!(
            "unknown probe '{other}', expected one of: {}",
            PROBES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Potential;
    use proptest::prelude::*;

    #[test]
    fn antiderivative_examples() {
        let grid = Grid::unit_1d(3).unwrap();
        let ones = SpaceTimeField::constant(&grid, 4, 1.0);
        let levels: Vec<f64> = time_antiderivative(&ones, 0.25).iter().map(|f| f.values()[1]).collect();
        assert_eq!(levels, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let zero = time_antiderivative(&SpaceTimeField::zeros(&grid, 4), 0.25);
        assert!(zero.iter().all(|f| f.max_abs() == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_direction(&grid, 4, &mut rng).unwrap();
        let b = random_direction(&grid, 4, &mut rng).unwrap();
        let sum = time_antiderivative(&a.axpy(1.0, &b), 0.25);
        let parts: Vec<Field> = time_antiderivative(&a, 0.25)
            .iter()
            .zip(time_antiderivative(&b, 0.25))
            .map(|(x, y)| x.axpy(1.0, &y))
            .collect();
        for (x, y) in sum.iter().zip(&parts) {
            assert!(x.sub(y).max_abs() < 1e-15);
        }
    }

    #[test]
    fn y_norm_of_constant_fields() {
        let grid = Grid::unit_1d(4).unwrap();
        let a = vec![Field::constant(&grid, 2.0); 3];
        let b = vec![Field::zeros(&grid); 3];
        // max H norm 2, plus sqrt(2 levels · 4 · 0.5)
        assert!((y_norm(&a, &b, 0.5) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn fd_of_zero_cost_vanishes_and_is_linear() {
        let mut spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_admissible_control(&spec.bounds, &mut rng).unwrap();
        let h = random_direction(&spec.grid, spec.time.steps(), &mut rng).unwrap();
        let d1 = fd_directional_derivative(&u, &h, &spec, 1e-4).unwrap();
        let d2 = fd_directional_derivative(&u, &h.scaled(2.0), &spec, 1e-4).unwrap();
        assert!((d2 - 2.0 * d1).abs() <= 1e-6 * d1.abs());
        spec.cost.kappa = [0.0; 4];
        assert_eq!(fd_directional_derivative(&u, &h, &spec, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn random_controls_are_admissible_and_seeded() {
        let spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        let a = random_admissible_control(&spec.bounds, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_admissible_control(&spec.bounds, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(spec.bounds.contains(&a));
        assert!(a.max_abs() > 0.0);
    }

    #[test]
    fn frechet_probe_with_zero_direction() {
        let spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        let u = spec.zero_control();
        let r = frechet_remainder_probe(&u, &spec.zero_control(), &spec, &FRECHET_DELTAS).unwrap();
        assert!(r.passed);
        assert!(r.series["remainder"].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn slope_fit_recovers_powers() {
        let x = [0.1, 0.01, 0.001];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_doubles_resolution() {
        let spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        let fine = refine(&spec).unwrap();
        assert_eq!(fine.grid.cells(), &[64]);
        assert_eq!(fine.time.steps(), 32);
        assert!((mean(&fine.init.phi0) - mean(&spec.init.phi0)).abs() < 1e-15);
    }

    #[test]
    fn regular_potential_has_no_separation_claim() {
        let spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        let r = separation_probe(&spec, 2, 1).unwrap();
        assert!(!r.applicable);
        assert!(r.note.unwrap().contains("whole line"));
    }

    #[test]
    fn equilibrium_has_constant_energy() {
        let mut spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        spec.init.phi0 = Field::constant(&spec.grid, 1.0);
        let r = energy_probe(&spec).unwrap();
        assert!(r.series["energy"].windows(2).all(|w| (w[1] - w[0]).abs() < 1e-14));
        assert!(r.passed);
    }

    #[test]
    fn unknown_probe_is_rejected() {
        let spec = ProblemSpec::desk(Potential::regular(), 0.0).unwrap();
        assert!(matches!(run_probe("nope", &spec, &spec.zero_control(), 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn young_inequalities_hold(a in 0.0f64..10.0, b in 0.0f64..10.0, alpha in 0.01f64..0.99, delta in 0.01f64..10.0) {
            let (s1, s2) = young_slack(a, b, alpha, delta);
            let scale = 1.0 + a * b;
            prop_assert!(s1 >= -1e-12 * scale);
            prop_assert!(s2 >= -1e-12 * scale);
        }
    }
}
