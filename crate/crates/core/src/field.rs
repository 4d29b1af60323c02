//! Spatial and temporal grids, sampled fields, and Gaussian heat-kernel primitives.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel window half-width in units of √t. The Gaussian tail beyond 8σ is below 1e-14.
const KERNEL_WINDOW: f64 = 8.0;

/// Uniform grid on `[-L, L]` with `J` cells and zero-Dirichlet boundary.
///
/// Grid points are `x_j = -L + j·dx`, `j = 0..=J`, `dx = 2L/J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    half_width: f64,
    n_cells: usize,
}

impl GridSpec {
    pub fn new(half_width: f64, n_cells: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!(
                "grid half width must be positive, got {half_width}"
            )));
        }
        if n_cells < 8 || n_cells % 2 != 0 {
            return Err(Error::Config(format!(
                "grid cell count must be even and at least 8, got {n_cells}"
            )));
        }
        Ok(Self {
            half_width,
            n_cells,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Number of grid points, `J + 1`.
    pub fn len(&self) -> usize {
        self.n_cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n_cells as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |j| self.x(j))
    }

    /// Index of the grid point equal to `x` (to within 1e-9·dx).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let pos = (x + self.half_width) / self.dx();
        let j = pos.round();
        if (pos - j).abs() > 1e-9 || j < 0.0 || j > self.n_cells as f64 {
            return None;
        }
        Some(j as usize)
    }

    /// Trapezoid weight of grid point `j`.
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.n_cells {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }
}

/// Uniform time grid `t_m = m·dt`, `dt = T/M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Smallest step count whose `dt` does not exceed `dt_max`.
    pub fn with_max_dt(horizon: f64, dt_max: f64) -> Result<Self> {
        if !(dt_max.is_finite() && dt_max > 0.0) {
            return Err(Error::Config(format!("dt_max must be positive, got {dt_max}")));
        }
        let n = (horizon / dt_max - 1e-9).ceil().max(1.0) as usize;
        Self::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    /// Index `m` with `t_m = t` (to within 1e-9·dt).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = t / self.dt();
        let m = pos.round();
        if (pos - m).abs() > 1e-9 || m < 0.0 || m > self.n_steps as f64 {
            return None;
        }
        Some(m as usize)
    }

    /// Explicit-scheme stability: `dt ≤ dx²/2`.
    pub fn check_stable(&self, grid: &GridSpec) -> Result<()> {
        let limit = grid.dx() * grid.dx() / 2.0;
        if self.dt() > limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "unstable time step: dt = {:e} exceeds dx²/2 = {:e}",
                self.dt(),
                limit
            )));
        }
        Ok(())
    }
}

/// A real-valued function sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value {} at index {j}",
                values[j]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Constant in the interior, zero on the two boundary points.
    pub fn interior_constant(grid: GridSpec, c: f64) -> Self {
        let mut values = vec![c; grid.len()];
        values[0] = 0.0;
        values[grid.n_cells()] = 0.0;
        Self { grid, values }
    }

    /// Normal density with the given mean and variance, scaled to `mass`.
    pub fn gaussian(grid: GridSpec, center: f64, variance: f64, mass: f64) -> Self {
        let norm = mass / (2.0 * PI * variance).sqrt();
        Self::from_fn(grid, |x| norm * (-(x - center).powi(2) / (2.0 * variance)).exp())
    }

    pub fn grid(&self) -> &GridSpec {
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

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Trapezoid rule for `∫ f dx`.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| v * self.grid.weight(j))
            .sum()
    }

    /// Trapezoid rule for `∫ f g dx`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        inner_slices(&self.grid, &self.values, &other.values)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.x(j), v)?;
        }
        Ok(())
    }

    /// Reads a `x,value` CSV written on `grid`.
    pub fn read_csv<R: BufRead>(grid: GridSpec, r: R) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidField(e.to_string()))?;
            if i == 0 {
                if line.trim() != "x,value" {
                    return Err(Error::InvalidField(format!("bad header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (_, v) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidField(format!("bad row {line:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidField(format!("bad value {v:?}")))?;
            values.push(v);
        }
        Self::new(grid, values)
    }
}

pub(crate) fn inner_slices(grid: &GridSpec, a: &[f64], b: &[f64]) -> f64 {
    let n = grid.n_cells();
    let mut s = 0.5 * (a[0] * b[0] + a[n] * b[n]);
    for j in 1..n {
        s += a[j] * b[j];
    }
    s * grid.dx()
}

/// Exponentially weighted sup norm `|f|_p = max_j e^{p|x_j|}|f(x_j)|`.
pub fn rap_norm(f: &ScalarField, p: f64) -> Result<f64> {
    if !p.is_finite() {
        return Err(Error::Domain(format!("weight exponent must be finite, got {p}")));
    }
    let grid = f.grid();
    let mut best = 0.0f64;
    for (j, &v) in f.values().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidField(format!("non-finite value at index {j}")));
        }
        best = best.max((p * grid.x(j).abs()).exp() * v.abs());
    }
    Ok(best)
}

/// Gaussian heat kernel `p_t(x) = (2πt)^{-1/2} exp(-x²/2t)`, zero for `t ≤ 0`.
///
/// `t = 0, x = 0` is the point mass and is reported as [`Error::Singularity`].
pub fn heat_kernel(t: f64, x: f64) -> Result<f64> {
    if t > 0.0 {
        Ok((-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt())
    } else if t == 0.0 && x == 0.0 {
        Err(Error::Singularity)
    } else {
        Ok(0.0)
    }
}

/// Unnormalised kernel weights `p_t(k·dx)·dx` for `k = 0..=K`, rescaled to unit discrete mass.
pub(crate) fn kernel_weights(t: f64, dx: f64) -> Vec<f64> {
    let sd = t.sqrt();
    let k_max = ((KERNEL_WINDOW * sd / dx).ceil() as usize).max(1);
    let mut w: Vec<f64> = (0..=k_max)
        .map(|k| {
            let x = k as f64 * dx;
            (-x * x / (2.0 * t)).exp()
        })
        .collect();
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Heat semigroup `P_t f` by discrete Gaussian convolution with zero padding.
///
/// Kernel weights are summed over a window of half-width `8√t` and renormalised to unit
/// discrete mass, so constants are preserved away from the boundary.
pub fn heat_convolve(f: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("heat flow time must be ≥ 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let grid = *f.grid();
    let n = grid.n_cells();
    let w = kernel_weights(t, grid.dx());
    let k_max = w.len() - 1;
    // Trapezoid weights on the source side.
    let mut src = f.values().to_vec();
    src[0] *= 0.5;
    src[n] *= 0.5;
    let mut out = vec![0.0; grid.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(k_max);
        let hi = (i + k_max).min(n);
        let mut s = 0.0;
        for (j, v) in src.iter().enumerate().take(hi + 1).skip(lo) {
            s += w[i.abs_diff(j)] * v;
        }
        *o = s;
    }
    Ok(ScalarField { grid, values: out })
}

/// `(P_t f)(x_i)` at a single grid index.
pub(crate) fn heat_convolve_at(grid: &GridSpec, values: &[f64], weights: &[f64], i: usize) -> f64 {
    let n = grid.n_cells();
    let k_max = weights.len() - 1;
    let lo = i.saturating_sub(k_max);
    let hi = (i + k_max).min(n);
    let mut s = 0.0;
    for (j, v) in values.iter().enumerate().take(hi + 1).skip(lo) {
        let tw = if j == 0 || j == n { 0.5 } else { 1.0 };
        s += weights[i.abs_diff(j)] * v * tw;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> GridSpec {
        GridSpec::new(10.0, 2048).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 64).is_err());
        assert!(GridSpec::new(1.0, 7).is_err());
        assert!(GridSpec::new(1.0, 9).is_err());
        let g = GridSpec::new(5.0, 10).unwrap();
        assert_eq!(g.len(), 11);
        assert!((g.dx() - 1.0).abs() < 1e-15);
        assert_eq!(g.index_of(0.0), Some(5));
        assert_eq!(g.index_of(0.5), None);
    }

    #[test]
    fn stability_rule() {
        let g = GridSpec::new(10.0, 1024).unwrap();
        // dx²/2 ≈ 1.907e-4
        assert!(TimeGrid::new(0.5, 2500).unwrap().check_stable(&g).is_err());
        assert!(TimeGrid::with_max_dt(0.5, g.dx() * g.dx() / 2.0)
            .unwrap()
            .check_stable(&g)
            .is_ok());
    }

    #[test]
    fn rap_norm_examples() {
        let g = GridSpec::new(5.0, 100).unwrap();
        assert_eq!(rap_norm(&ScalarField::zeros(g), 3.0).unwrap(), 0.0);
        let f = ScalarField::from_fn(g, |x| (-2.0 * x.abs()).exp());
        assert!((rap_norm(&f, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let f = ScalarField::from_fn(g, |x| (-x.abs()).exp());
        let v = rap_norm(&f, 2.0).unwrap();
        assert!((v - 5f64.exp()).abs() < 1e-9, "{v}");
        assert!((v - 148.413).abs() < 1e-3);
        // p = 0 is the sup norm
        assert_eq!(rap_norm(&f, 0.0).unwrap(), f.max_abs());
    }

    #[test]
    fn rap_norm_rejects_non_finite() {
        let g = GridSpec::new(5.0, 10).unwrap();
        let mut f = ScalarField::zeros(g);
        f.values_mut()[3] = f64::NAN;
        assert!(matches!(rap_norm(&f, 1.0), Err(Error::InvalidField(_))));
        assert!(ScalarField::new(g, vec![f64::INFINITY; 11]).is_err());
    }

    #[test]
    fn heat_kernel_examples() {
        assert!((heat_kernel(1.0, 0.0).unwrap() - 0.398942).abs() < 1e-6);
        assert_eq!(heat_kernel(-0.5, 1.3).unwrap(), 0.0);
        assert_eq!(heat_kernel(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(heat_kernel(0.0, 0.0), Err(Error::Singularity));
        // p_2(2) = (4π)^{-1/2} e^{-1}
        let expected = (-1.0f64).exp() / (4.0 * PI).sqrt();
        assert!((heat_kernel(2.0, 2.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.103777).abs() < 1e-6);
    }

    #[test]
    fn heat_kernel_unit_mass() {
        for &t in &[0.01, 0.3, 1.0, 4.0] {
            let a = 20.0 * f64::sqrt(t);
            let n = 20_000;
            let h = 2.0 * a / n as f64;
            let mut s = 0.0;
            for k in 0..=n {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                s += w * heat_kernel(t, -a + k as f64 * h).unwrap();
            }
            assert!((s * h - 1.0).abs() < 1e-8, "t = {t}: {}", s * h);
        }
    }

    #[test]
    fn convolve_identity_and_zero() {
        let g = GridSpec::new(5.0, 200).unwrap();
        let f = ScalarField::gaussian(g, 0.3, 0.2, 1.0);
        assert_eq!(heat_convolve(&f, 0.0).unwrap(), f);
        let z = ScalarField::zeros(g);
        assert_eq!(heat_convolve(&z, 0.7).unwrap().max_abs(), 0.0);
        assert!(matches!(heat_convolve(&f, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn convolve_gaussian_closed_form() {
        let g = desk();
        let f = ScalarField::gaussian(g, 0.0, 0.5, 1.0);
        let out = heat_convolve(&f, 0.5).unwrap();
        let expected = ScalarField::gaussian(g, 0.0, 1.0, 1.0);
        assert!(out.max_abs_diff(&expected) <= 1e-6);
        assert!((out.integral() - 1.0).abs() < 1e-9);
        assert!(out.is_nonnegative());
    }

    #[test]
    fn convolve_semigroup_law() {
        let g = desk();
        // smooth compactly supported bump
        let f = ScalarField::from_fn(g, |x| {
            if x.abs() < 1.0 {
                (1.0 - x * x).powi(4)
            } else {
                0.0
            }
        });
        let a = heat_convolve(&heat_convolve(&f, 0.2).unwrap(), 0.3).unwrap();
        let b = heat_convolve(&f, 0.5).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let g = GridSpec::new(2.0, 16).unwrap();
        let f = ScalarField::gaussian(g, 0.1, 0.3, 2.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
