//! Cell-centered tensor-product grids on 1D/2D boxes with homogeneous Neumann
//! calculus.
//!
//! Node `i` along an axis of `n` cells sits at `(i + 1/2) h`. Boundary flux is
//! zero through mirror ghost cells, so the discrete Laplacian is in divergence
//! form and conserves the cell-measure-weighted sum.
//!
//! Solves with constant-coefficient operators (`-Δ` on zero-mean data and
//! `I - aΔ`) are done exactly in the cosine basis that diagonalizes the
//! mirror-ghost stencil, then checked against the configured residual
//! tolerance.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Orthonormal DCT-II basis of one axis together with the eigenvalues of the
/// 1D negative Neumann Laplacian (`4/h^2 sin^2(pi k / 2n)`).
#[derive(Debug)]
struct CosineBasis {
    n: usize,
    // row k, column i
    matrix: Vec<f64>,
    eigen: Vec<f64>,
}

impl CosineBasis {
    fn new(n: usize, h: f64) -> Self {
        let mut matrix = vec![0.0; n * n];
        for k in 0..n {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                matrix[k * n + i] = scale * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        let eigen = (0..n)
            .map(|k| {
                let s = (PI * k as f64 / (2.0 * n as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        Self { n, matrix, eigen }
    }

    /// Applies the basis (or its transpose) to a strided line of `data`.
    fn apply_line(&self, data: &mut [f64], start: usize, stride: usize, inverse: bool, scratch: &mut [f64]) {
        let n = self.n;
        for (k, out) in scratch.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for i in 0..n {
                let c = if inverse {
                    self.matrix[i * n + k]
                } else {
                    self.matrix[k * n + i]
                };
                acc += c * data[start + i * stride];
            }
            *out = acc;
        }
        for (i, v) in scratch.iter().enumerate().take(n) {
            data[start + i * stride] = *v;
        }
    }
}

#[derive(Debug)]
struct GridData {
    cells: Vec<usize>,
    lengths: Vec<f64>,
    spacing: Vec<f64>,
    cell_measure: f64,
    len: usize,
    bases: Vec<CosineBasis>,
}

/// Discrete spatial domain. Cheap to clone; all clones share the same data.
#[derive(Clone, Debug)]
pub struct Grid {
    inner: Arc<GridData>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.cells == other.inner.cells && self.inner.lengths == other.inner.lengths)
    }
}

impl Grid {
    pub fn new(cells: &[usize], lengths: &[f64]) -> Result<Self> {
        if cells.is_empty() || cells.len() > 2 {
            return Err(Error::Config(format!(
                "grid dimension must be 1 or 2, got {}",
                cells.len()
            )));
        }
        if cells.len() != lengths.len() {
            return Err(Error::Config(format!(
                "grid has {} cell counts but {} axis lengths",
                cells.len(),
                lengths.len()
            )));
        }
        if let Some(n) = cells.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("cells per axis must be >= 2, got {n}")));
        }
        if let Some(l) = lengths.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::Config(format!("axis length must be positive, got {l}")));
        }
        let spacing: Vec<f64> = cells
            .iter()
            .zip(lengths)
            .map(|(&n, &l)| l / n as f64)
            .collect();
        let bases = cells
            .iter()
            .zip(&spacing)
            .map(|(&n, &h)| CosineBasis::new(n, h))
            .collect();
        Ok(Self {
            inner: Arc::new(GridData {
                cells: cells.to_vec(),
                lengths: lengths.to_vec(),
                cell_measure: spacing.iter().product(),
                spacing,
                len: cells.iter().product(),
                bases,
            }),
        })
    }

    /// Unit-length 1D grid with `n` cells.
    pub fn unit_1d(n: usize) -> Result<Self> {
        Self::new(&[n], &[1.0])
    }

    pub fn dim(&self) -> usize {
        self.inner.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.inner.cells
    }

    pub fn lengths(&self) -> &[f64] {
        &self.inner.lengths
    }

    pub fn spacing(&self) -> &[f64] {
        &self.inner.spacing
    }

    pub fn cell_measure(&self) -> f64 {
        self.inner.cell_measure
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// |Ω|, the product of the axis lengths.
    pub fn measure(&self) -> f64 {
        self.inner.lengths.iter().product()
    }

    /// Cell-center coordinates of cell `index` (x fastest).
    pub fn center(&self, index: usize) -> Vec<f64> {
        let d = &self.inner;
        let mut rem = index;
        d.cells
            .iter()
            .zip(&d.spacing)
            .map(|(&n, &h)| {
                let i = rem % n;
                rem /= n;
                (i as f64 + 0.5) * h
            })
            .collect()
    }

    /// Offset between neighbouring cells along `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.inner.cells[..axis].iter().product()
    }

    /// Divergence-form Laplacian with zero boundary flux, on raw values.
    pub fn laplacian_into(&self, f: &[f64], out: &mut [f64]) {
        let d = &self.inner;
        out.iter_mut().for_each(|v| *v = 0.0);
        for axis in 0..d.cells.len() {
            let n = d.cells[axis];
            let stride = self.stride(axis);
            let inv_h2 = 1.0 / (d.spacing[axis] * d.spacing[axis]);
            for (idx, o) in out.iter_mut().enumerate() {
                let i = (idx / stride) % n;
                let mut acc = 0.0;
                if i > 0 {
                    acc += f[idx - stride] - f[idx];
                }
                if i + 1 < n {
                    acc += f[idx + stride] - f[idx];
                }
                *o += acc * inv_h2;
            }
        }
    }

    /// Squared L2 norm of the face gradient, `Σ_faces (Δf/h)^2 · cell_measure`.
    pub fn grad_norm_sq(&self, f: &[f64]) -> f64 {
        let d = &self.inner;
        let mut total = 0.0;
        for axis in 0..d.cells.len() {
            let n = d.cells[axis];
            let stride = self.stride(axis);
            let h = d.spacing[axis];
            for idx in 0..d.len {
                if (idx / stride) % n + 1 < n {
                    let g = (f[idx + stride] - f[idx]) / h;
                    total += g * g;
                }
            }
        }
        total * d.cell_measure
    }

    fn weighted_sum(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.inner.cell_measure
    }

    fn mean_of(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() / f.len() as f64
    }

    fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.inner.cell_measure
    }

    /// Transforms `f` into the cosine basis, scales each mode by
    /// `multiplier(eigenvalue)` (the constant mode gets `zero_mode`), and
    /// transforms back.
    fn spectral_apply(&self, f: &[f64], zero_mode: f64, multiplier: impl Fn(f64) -> f64) -> Vec<f64> {
        let d = &self.inner;
        let mut data = f.to_vec();
        let max_n = *d.cells.iter().max().unwrap_or(&1);
        let mut scratch = vec![0.0; max_n];
        self.transform(&mut data, false, &mut scratch);
        for (idx, v) in data.iter_mut().enumerate() {
            let mut rem = idx;
            let mut lambda = 0.0;
            let mut is_zero = true;
            for (axis, basis) in d.bases.iter().enumerate() {
                let k = rem % d.cells[axis];
                rem /= d.cells[axis];
                lambda += basis.eigen[k];
                is_zero &= k == 0;
            }
            *v *= if is_zero { zero_mode } else { multiplier(lambda) };
        }
        self.transform(&mut data, true, &mut scratch);
        data
    }

    fn transform(&self, data: &mut [f64], inverse: bool, scratch: &mut [f64]) {
        let d = &self.inner;
        for axis in 0..d.cells.len() {
            let n = d.cells[axis];
            let stride = self.stride(axis);
            for line_start in 0..d.len {
                if (line_start / stride) % n != 0 {
                    continue;
                }
                d.bases[axis].apply_line(data, line_start, stride, inverse, scratch);
            }
        }
    }
}

/// Values of a scalar quantity on a grid, one per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                what: "field values",
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("field value {v} is not finite")));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Builds a field by sampling `f` at cell centers.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.center(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self::from_raw(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Field) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn sub(&self, other: &Field) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// Weighted L2(Ω) inner product.
    pub fn dot(&self, other: &Field) -> f64 {
        self.grid.weighted_dot(&self.values, &other.values)
    }

    /// Weighted integral over Ω.
    pub fn integral(&self) -> f64 {
        self.grid.weighted_sum(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_h(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("time horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Config("number of time steps must be positive".into()));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of level `n`; level `steps` is exactly the horizon.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }
}

/// Tolerances for the Neumann solves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeumannOptions {
    /// Admissible `|mean(f)|` relative to `‖f‖∞`.
    pub mean_tolerance: f64,
    /// Admissible relative residual of the solve.
    pub residual_tolerance: f64,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            mean_tolerance: 1e-12,
            residual_tolerance: 1e-10,
        }
    }
}

/// `‖f‖_H`, `‖f‖_V` and `‖f‖_∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub h: f64,
    pub v: f64,
    pub inf: f64,
}

pub fn laplacian_neumann(f: &Field) -> Field {
    let mut out = vec![0.0; f.len()];
    f.grid.laplacian_into(&f.values, &mut out);
    Field::from_raw(&f.grid, out)
}

/// Cell-measure-weighted average.
pub fn mean(f: &Field) -> f64 {
    f.grid.mean_of(&f.values)
}

pub fn inverse_neumann(f: &Field) -> Result<Field> {
    inverse_neumann_with(f, &NeumannOptions::default())
}

/// The operator N: returns `g` with `-Δg = f` and `mean(g) = 0`.
pub fn inverse_neumann_with(f: &Field, opts: &NeumannOptions) -> Result<Field> {
    let grid = &f.grid;
    let m = mean(f);
    let scale = f.max_abs();
    let tolerance = opts.mean_tolerance * scale;
    if m.abs() > tolerance {
        return Err(Error::NonZeroMean { mean: m, tolerance });
    }
    if scale == 0.0 {
        return Ok(Field::zeros(grid));
    }
    let mut g = grid.spectral_apply(&f.values, 0.0, |lambda| 1.0 / lambda);
    let gm = grid.mean_of(&g);
    g.iter_mut().for_each(|v| *v -= gm);

    let mut lap = vec![0.0; g.len()];
    grid.laplacian_into(&g, &mut lap);
    let residual: f64 = lap
        .iter()
        .zip(&f.values)
        .map(|(l, v)| {
            let r = -l - (v - m);
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let norm: f64 = f.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = residual / norm;
    if !(rel <= opts.residual_tolerance) {
        return Err(Error::SolverDivergence {
            what: "inverse Neumann operator",
            residual: rel,
            tolerance: opts.residual_tolerance,
        });
    }
    Ok(Field::from_raw(grid, g))
}

/// Solves `(I - a Δ) g = f` with homogeneous Neumann conditions, `a >= 0`.
pub fn helmholtz_solve(a: f64, f: &Field) -> Result<Field> {
    helmholtz_solve_with(a, f, 1e-10)
}

pub fn helmholtz_solve_with(a: f64, f: &Field, residual_tolerance: f64) -> Result<Field> {
    let grid = &f.grid;
    if a == 0.0 {
        return Ok(f.clone());
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Config(format!("Helmholtz coefficient must be >= 0, got {a}")));
    }
    let g = grid.spectral_apply(&f.values, 1.0, |lambda| 1.0 / (1.0 + a * lambda));
    let mut lap = vec![0.0; g.len()];
    grid.laplacian_into(&g, &mut lap);
    let norm: f64 = f.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        let residual: f64 = g
            .iter()
            .zip(&lap)
            .zip(&f.values)
            .map(|((g, l), v)| {
                let r = g - a * l - v;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        if !(residual / norm <= residual_tolerance) {
            return Err(Error::SolverDivergence {
                what: "Helmholtz solve",
                residual: residual / norm,
                tolerance: residual_tolerance,
            });
        }
    }
    Ok(Field::from_raw(grid, g))
}

/// `‖f‖_* = sqrt(<f, N f>)` for zero-mean `f`.
pub fn dual_norm_star(f: &Field) -> Result<f64> {
    let g = inverse_neumann(f)?;
    Ok(f.dot(&g).max(0.0).sqrt())
}

/// Discrete `V'` norm, the Riesz representative being `(I - Δ)^{-1} f`.
pub fn dual_norm_v_prime(f: &Field) -> Result<f64> {
    let g = helmholtz_solve(1.0, f)?;
    Ok(f.dot(&g).max(0.0).sqrt())
}

pub fn norms(f: &Field) -> Norms {
    let h2 = f.dot(f);
    let grad2 = f.grid.grad_norm_sq(&f.values);
    Norms {
        h: h2.sqrt(),
        v: (h2 + grad2).sqrt(),
        inf: f.max_abs(),
    }
}

/// `‖∇f‖_H` with the face gradient.
pub fn grad_norm(f: &Field) -> f64 {
    f.grid.grad_norm_sq(&f.values).sqrt()
}

/// Time-indexed sequence of fields on one grid (controls, targets, sources).
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    levels: Vec<Field>,
}

impl SpaceTimeField {
    pub fn new(levels: Vec<Field>) -> Result<Self> {
        if let Some(first) = levels.first() {
            if levels.iter().any(|f| f.grid() != first.grid()) {
                return Err(Error::Config("time levels live on different grids".into()));
            }
        }
        Ok(Self { levels })
    }

    pub fn zeros(grid: &Grid, count: usize) -> Self {
        Self::constant(grid, count, 0.0)
    }

    pub fn constant(grid: &Grid, count: usize, value: f64) -> Self {
        Self {
            levels: vec![Field::constant(grid, value); count],
        }
    }

    /// Builds level `k` by sampling `f(k, x)`.
    pub fn from_fn(grid: &Grid, count: usize, mut f: impl FnMut(usize, &[f64]) -> f64) -> Self {
        Self {
            levels: (0..count)
                .map(|k| Field::from_fn(grid, |x| f(k, x)))
                .collect(),
        }
    }

    pub fn levels(&self) -> &[Field] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [Field] {
        &mut self.levels
    }

    pub fn level(&self, k: usize) -> &Field {
        &self.levels[k]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.levels.first().map(|f| f.grid())
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|f| f.len()).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        Self {
            levels: self.levels.iter().map(|l| l.map(f)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Copy) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .zip(&other.levels)
                .map(|(a, b)| a.zip_map(b, f))
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// Discrete L2(Q) inner product, `Σ_k dt <a_k, b_k>`.
    pub fn dot_q(&self, other: &Self, dt: f64) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.dot(b))
            .sum::<f64>()
            * dt
    }

    pub fn norm_q(&self, dt: f64) -> f64 {
        self.dot_q(self, dt).max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.levels.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|f| f.values().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn from_flat(grid: &Grid, count: usize, values: &[f64]) -> Result<Self> {
        if values.len() != count * grid.len() {
            return Err(Error::ShapeMismatch {
                what: "space-time values",
                expected: count * grid.len(),
                found: values.len(),
            });
        }
        let levels = values
            .chunks(grid.len())
            .map(|c| Field::from_values(grid, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub(crate) fn check_shape(&self, grid: &Grid, count: usize, what: &'static str) -> Result<()> {
        if self.levels.len() != count {
            return Err(Error::ShapeMismatch {
                what,
                expected: count,
                found: self.levels.len(),
            });
        }
        if let Some(f) = self.levels.iter().find(|f| f.grid() != grid) {
            return Err(Error::ShapeMismatch {
                what,
                expected: grid.len(),
                found: f.len(),
            });
        }
        Ok(())
    }
}
