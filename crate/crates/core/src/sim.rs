//! Explicit finite-difference stepper for the stochastic heat equation.
//!
//! One step from `u` on interior cells is
//!
//! ```text
//! u*_j = u_j + dt·(½(u_{j+1} - 2u_j + u_{j-1})/dx² + b_j·u_j)
//! ```
//!
//! followed by a noise update of per-cell variance `γ_j·u*_j·dt/dx`:
//!
//! * [`NoiseMode::Gaussian`]: `u'_j = max(u*_j + amp_j·ξ_j·√(dt/dx), 0)` (Euler–Maruyama);
//! * [`NoiseMode::Feller`]: the exact transition of the per-cell Feller diffusion
//!   `dU = √(γ_j U/dx) dB` over `dt`, sampled as a Poisson mixture of Gammas. It preserves
//!   the conditional mean exactly and never leaves `[0, ∞)`.
//!
//! For the direct scheme `b_j = b(u_j)` and `γ_j = γ(u_j)`; under slab freezing both are
//! evaluated at the slab-start profile.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField, TimeGrid};
use crate::noise::{box_muller, NoiseSource};

/// Default overflow guard; a run exceeding it is stopped and reported.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Above this Poisson mean the Feller step switches to its Gaussian limit.
const FELLER_GAUSSIAN_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Direct,
    Slab(usize),
    Particle(usize),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Direct => f.write_str("direct"),
            Scheme::Slab(n) => write!(f, "slab({n})"),
            Scheme::Particle(n) => write!(f, "particle({n})"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "direct" {
            return Ok(Scheme::Direct);
        }
        let parse_arg = |prefix: &str| -> Option<usize> {
            s.strip_prefix(prefix)?.strip_suffix(')')?.trim().parse().ok()
        };
        if let Some(n) = parse_arg("slab(") {
            return Ok(Scheme::Slab(n));
        }
        if let Some(n) = parse_arg("particle(") {
            return Ok(Scheme::Particle(n));
        }
        Err(Error::Config(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Gaussian,
    #[default]
    Feller,
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseMode::Gaussian),
            "feller" => Ok(NoiseMode::Feller),
            _ => Err(Error::Config(format!("unknown noise mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub noise: NoiseMode,
    /// Store every `record_every`-th step (must divide the step count).
    pub record_every: usize,
    /// Keep per-step noise increments for mild-form replay.
    pub keep_ledger: bool,
    /// Replica index; selects the noise stream.
    pub stream: u64,
    pub overflow_guard: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            noise: NoiseMode::Feller,
            record_every: 1,
            keep_ledger: false,
            stream: 0,
            overflow_guard: OVERFLOW_GUARD,
        }
    }
}

/// Realised noise increments `u_{m+1} - (u_m + dt·(½Δu_m + a_m))`, clamping included.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLedger {
    width: usize,
    increments: Vec<f64>,
}

impl NoiseLedger {
    pub fn n_steps(&self) -> usize {
        self.increments.len() / self.width
    }

    pub fn step(&self, m: usize) -> &[f64] {
        &self.increments[m * self.width..(m + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunDiagnostics {
    /// Total mass `dx·Σ(clamped amount)` added by clamping at zero.
    pub clamped_mass: f64,
    pub clamp_events: usize,
}

/// Space-time array `u(t_m, x_j)` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryField {
    grid: GridSpec,
    time: TimeGrid,
    record_every: usize,
    frames: Vec<f64>,
    scheme: Scheme,
    noise: NoiseMode,
    coefficient_label: String,
    seed: u64,
    stream: u64,
    ledger: Option<NoiseLedger>,
    diagnostics: RunDiagnostics,
}

impl TrajectoryField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn record_every(&self) -> usize {
        self.record_every
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn noise_mode(&self) -> NoiseMode {
        self.noise
    }

    pub fn coefficient_label(&self) -> &str {
        &self.coefficient_label
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn ledger(&self) -> Option<&NoiseLedger> {
        self.ledger.as_ref()
    }

    pub fn diagnostics(&self) -> &RunDiagnostics {
        &self.diagnostics
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.grid.len()
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let w = self.grid.len();
        &self.frames[k * w..(k + 1) * w]
    }

    pub fn frame_field(&self, k: usize) -> ScalarField {
        ScalarField::new(self.grid, self.frame(k).to_vec()).expect("frames are finite")
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        self.time.time(k * self.record_every)
    }

    /// Frame index recorded at time `t`, if any.
    pub fn frame_at(&self, t: f64) -> Option<usize> {
        let m = self.time.index_of(t)?;
        (m % self.record_every == 0).then_some(m / self.record_every)
    }

    pub fn last_frame(&self) -> &[f64] {
        self.frame(self.n_frames() - 1)
    }

    /// Writes frame `k` as `x,value` CSV.
    pub fn write_frame_csv<W: Write>(&self, k: usize, w: W) -> std::io::Result<()> {
        self.frame_field(k).write_csv(w)
    }
}

/// One Euler–Maruyama step with externally supplied standard normals.
///
/// `u'_j = u_j + dt·(½Δ_h u_j + b(u_j)u_j) + σ(u_j)·ξ_j·√(dt/dx)`, clamped at 0, boundary
/// entries held at 0.
pub fn em_step(
    u: &ScalarField,
    c: &CoefficientSet,
    dt: f64,
    noise_row: &[f64],
) -> Result<ScalarField> {
    let grid = *u.grid();
    TimeGrid::new(dt, 1)?.check_stable(&grid)?;
    if noise_row.len() != grid.len() {
        return Err(Error::Config(format!(
            "noise row has {} entries, grid has {}",
            noise_row.len(),
            grid.len()
        )));
    }
    if !u.is_nonnegative() {
        return Err(Error::InvalidField("stepper input must be nonnegative".into()));
    }
    let v = u.values();
    let n = grid.n_cells();
    let dx = grid.dx();
    let scale = (dt / dx).sqrt();
    let mut out = vec![0.0; grid.len()];
    for j in 1..n {
        let lap = (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (dx * dx);
        let next = v[j] + dt * (0.5 * lap + c.drift(v[j])) + c.sigma(v[j]) * noise_row[j] * scale;
        if !next.is_finite() {
            return Err(Error::Numeric {
                step: 0,
                detail: format!("cell {j} became {next}"),
            });
        }
        out[j] = next.max(0.0);
    }
    ScalarField::new(grid, out)
}

/// Per-cell coefficient values held fixed during a step.
pub(crate) struct CellCoefficients {
    /// Drift factor b_j.
    pub b: Vec<f64>,
    /// Branching rate γ_j (Feller) or γ_j used in the Gaussian amplitude √(γ_j u_j).
    pub rate: Vec<f64>,
}

impl CellCoefficients {
    pub fn new(len: usize) -> Self {
        Self {
            b: vec![0.0; len],
            rate: vec![0.0; len],
        }
    }

    pub fn evaluate(&mut self, c: &CoefficientSet, profile: &[f64]) {
        for ((b, r), &u) in self.b.iter_mut().zip(self.rate.iter_mut()).zip(profile) {
            *b = c.b(u);
            *r = c.gamma_rate(u);
        }
    }
}

pub(crate) struct Stepper<'a> {
    pub grid: GridSpec,
    pub dt: f64,
    pub noise: NoiseMode,
    pub source: &'a NoiseSource,
    pub guard: f64,
    gauss: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(grid: GridSpec, dt: f64, noise: NoiseMode, source: &'a NoiseSource, guard: f64) -> Self {
        Self {
            grid,
            dt,
            noise,
            source,
            guard,
            gauss: vec![0.0; grid.len()],
        }
    }

    /// Advances `u` (step index `m`) into `out`. With `direct_sigma`, the Gaussian amplitude is
    /// σ(u_j) itself rather than √(γ_j u_j).
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        m: usize,
        u: &[f64],
        cells: &CellCoefficients,
        direct_sigma: Option<&CoefficientSet>,
        out: &mut [f64],
        mut ledger: Option<&mut [f64]>,
        diag: &mut RunDiagnostics,
    ) -> Result<()> {
        let n = self.grid.n_cells();
        let dx = self.grid.dx();
        let dt = self.dt;
        let inv_dx2 = 1.0 / (dx * dx);
        out[0] = 0.0;
        out[n] = 0.0;
        if let Some(l) = ledger.as_deref_mut() {
            l[0] = 0.0;
            l[n] = 0.0;
        }
        match self.noise {
            NoiseMode::Gaussian => {
                self.source.gaussian_row(m, &mut self.gauss);
                let scale = (dt / dx).sqrt();
                for j in 1..n {
                    let lap = (u[j + 1] - 2.0 * u[j] + u[j - 1]) * inv_dx2;
                    let det = u[j] + dt * (0.5 * lap + cells.b[j] * u[j]);
                    let amp = match direct_sigma {
                        Some(c) => c.sigma(u[j]),
                        None => (cells.rate[j] * u[j].max(0.0)).sqrt(),
                    };
                    let raw = det + amp * self.gauss[j] * scale;
                    let next = self.clamp(m, j, raw, diag)?;
                    out[j] = next;
                    if let Some(l) = ledger.as_deref_mut() {
                        l[j] = next - det;
                    }
                }
            }
            NoiseMode::Feller => {
                let mut rng = self.source.row(m);
                for j in 1..n {
                    let lap = (u[j + 1] - 2.0 * u[j] + u[j - 1]) * inv_dx2;
                    let det = u[j] + dt * (0.5 * lap + cells.b[j] * u[j]);
                    let start = self.clamp(m, j, det, diag)?;
                    let kappa = cells.rate[j] * dt / dx;
                    let next = feller_transition(start, kappa, &mut rng);
                    if !next.is_finite() {
                        return Err(Error::Numeric {
                            step: m,
                            detail: format!("cell {j} became {next}"),
                        });
                    }
                    if next > self.guard {
                        return Err(self.overflow(m, next));
                    }
                    out[j] = next;
                    if let Some(l) = ledger.as_deref_mut() {
                        l[j] = next - det;
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn clamp(&self, m: usize, j: usize, raw: f64, diag: &mut RunDiagnostics) -> Result<f64> {
        if !raw.is_finite() {
            return Err(Error::Numeric {
                step: m,
                detail: format!("cell {j} became {raw}"),
            });
        }
        if raw > self.guard {
            return Err(self.overflow(m, raw));
        }
        if raw < 0.0 {
            diag.clamped_mass -= raw * self.grid.dx();
            diag.clamp_events += 1;
            Ok(0.0)
        } else {
            Ok(raw)
        }
    }

    fn overflow(&self, m: usize, value: f64) -> Error {
        Error::Overflow {
            step: m + 1,
            time: (m + 1) as f64 * self.dt,
            value,
            guard: self.guard,
        }
    }
}

/// Exact transition over one step of `dU = √(κ U / dt) dB` started at `start`:
/// `U' = (κ/2)·Gamma(N, 1)` with `N ~ Poisson(2·start/κ)`. Mean `start`, variance `κ·start`.
#[inline]
pub(crate) fn feller_transition(start: f64, kappa: f64, rng: &mut ChaCha8Rng) -> f64 {
    if start <= 0.0 || kappa <= 0.0 {
        return start.max(0.0);
    }
    let lambda = 2.0 * start / kappa;
    if !lambda.is_finite() || lambda > FELLER_GAUSSIAN_LIMIT {
        let z = box_muller(rng);
        return (start + (kappa * start).sqrt() * z).max(0.0);
    }
    let n: f64 = if lambda < 30.0 {
        poisson_inversion(lambda, rng)
    } else {
        Poisson::new(lambda).expect("finite positive mean").sample(rng)
    };
    if n == 0.0 {
        return 0.0;
    }
    let g: f64 = Gamma::new(n, 1.0).expect("positive shape").sample(rng);
    0.5 * kappa * g
}

/// Poisson sampling by sequential inversion; exact for small means.
#[inline]
fn poisson_inversion(lambda: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0.0;
    while u > cdf {
        k += 1.0;
        p *= lambda / k;
        cdf += p;
        if p < 1e-300 && cdf < u {
            break;
        }
    }
    k
}

/// Prepares and validates the initial profile (boundary entries are forced to zero).
pub(crate) fn prepare_initial(u0: &ScalarField) -> Result<Vec<f64>> {
    if !u0.is_nonnegative() {
        return Err(Error::InvalidField("initial profile must be nonnegative".into()));
    }
    let n = u0.grid().n_cells();
    let mut v = u0.values().to_vec();
    let peak = u0.max_abs();
    for j in [0, n] {
        if v[j] > 1e-6 * peak.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidField(format!(
                "initial profile must vanish on the boundary (value {} at index {j})",
                v[j]
            )));
        }
        v[j] = 0.0;
    }
    Ok(v)
}

pub(crate) fn check_coefficients(c: &CoefficientSet, u0: &[f64]) -> Result<()> {
    let peak = u0.iter().cloned().fold(0.0, f64::max);
    let report = c.validate_growth((10.0 * peak).max(100.0), 1000)?;
    if let Some(v) = report.violation {
        return Err(Error::Config(format!(
            "coefficients {} violate {} at u = {} (value {}, bound {})",
            c.label(),
            v.condition,
            v.u,
            v.value,
            v.bound
        )));
    }
    Ok(())
}

/// Shared driver for the direct and slab schemes. `slab_steps` is the number of time steps per
/// slab (`None` for the direct scheme).
pub(crate) fn run(
    u0: &ScalarField,
    c: &CoefficientSet,
    time: TimeGrid,
    scheme: Scheme,
    slab_steps: Option<usize>,
    seed: u64,
    opts: &SimOptions,
) -> Result<TrajectoryField> {
    let grid = *u0.grid();
    time.check_stable(&grid)?;
    if opts.record_every == 0 || time.n_steps() % opts.record_every != 0 {
        return Err(Error::Config(format!(
            "record_every = {} must divide the step count {}",
            opts.record_every,
            time.n_steps()
        )));
    }
    let init = prepare_initial(u0)?;
    check_coefficients(c, &init)?;

    let width = grid.len();
    let n_steps = time.n_steps();
    let source = NoiseSource::new(seed, opts.stream);
    let mut stepper = Stepper::new(grid, time.dt(), opts.noise, &source, opts.overflow_guard);
    let mut frames = Vec::with_capacity(width * (n_steps / opts.record_every + 1));
    frames.extend_from_slice(&init);
    let mut ledger = opts.keep_ledger.then(|| vec![0.0; width * n_steps]);
    let mut diag = RunDiagnostics::default();
    let mut cells = CellCoefficients::new(width);
    let mut cur = init;
    let mut next = vec![0.0; width];
    let direct_sigma = match (scheme, opts.noise) {
        (Scheme::Direct, NoiseMode::Gaussian) => Some(c),
        _ => None,
    };
    for m in 0..n_steps {
        match slab_steps {
            None => cells.evaluate(c, &cur),
            Some(k) if m % k == 0 => cells.evaluate(c, &cur),
            Some(_) => {}
        }
        let row = ledger.as_mut().map(|l| &mut l[m * width..(m + 1) * width]);
        stepper.step(m, &cur, &cells, direct_sigma, &mut next, row, &mut diag)?;
        std::mem::swap(&mut cur, &mut next);
        if (m + 1) % opts.record_every == 0 {
            frames.extend_from_slice(&cur);
        }
    }
    Ok(TrajectoryField {
        grid,
        time,
        record_every: opts.record_every,
        frames,
        scheme,
        noise: opts.noise,
        coefficient_label: c.label().to_string(),
        seed,
        stream: opts.stream,
        ledger: ledger.map(|increments| NoiseLedger { width, increments }),
        diagnostics: diag,
    })
}

/// Simulates the SPDE directly (coefficients re-evaluated every step).
pub fn simulate_direct(
    u0: &ScalarField,
    c: &CoefficientSet,
    time: TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<TrajectoryField> {
    run(u0, c, time, Scheme::Direct, None, seed, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{catalog, catalog_with, CatalogId, FamilyParams, GrowthParams};
    use crate::field::heat_convolve;
    use rand::SeedableRng;

    fn small_grid() -> GridSpec {
        GridSpec::new(5.0, 200).unwrap()
    }

    #[test]
    fn em_step_zero_is_fixed() {
        let g = small_grid();
        let z = ScalarField::zeros(g);
        let xi: Vec<f64> = (0..g.len()).map(|j| (j as f64).sin() * 3.0).collect();
        for id in CatalogId::ALL {
            let out = em_step(&z, &catalog(id), 1e-3, &xi).unwrap();
            assert_eq!(out.max_abs(), 0.0);
        }
    }

    #[test]
    fn em_step_linear_cases() {
        let g = small_grid();
        let dt = 1e-3;
        let xi = vec![1.0; g.len()];
        let mut delta = ScalarField::zeros(g);
        delta.values_mut()[100] = 1.0;
        let out = em_step(&delta, &CoefficientSet::noiseless(0.0), dt, &xi).unwrap();
        let r = dt / (g.dx() * g.dx());
        assert!((out.values()[100] - (1.0 - r)).abs() < 1e-15);
        assert!((out.values()[99] - 0.5 * r).abs() < 1e-15);
        assert!((out.values()[101] - 0.5 * r).abs() < 1e-15);
        assert_eq!(out.values()[102], 0.0);

        let beta = 0.7;
        let ones = ScalarField::interior_constant(g, 1.0);
        let out = em_step(&ones, &CoefficientSet::noiseless(beta), dt, &xi).unwrap();
        for j in 2..g.n_cells() - 1 {
            assert!((out.values()[j] - (1.0 + beta * dt)).abs() < 1e-14);
        }
        assert_eq!(out.values()[0], 0.0);
        assert_eq!(out.values()[g.n_cells()], 0.0);
    }

    #[test]
    fn em_step_rejects_unstable_dt() {
        let g = small_grid();
        let u = ScalarField::zeros(g);
        let xi = vec![0.0; g.len()];
        let err = em_step(&u, &catalog(CatalogId::Kpz), 0.01, &xi).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn em_step_clamps() {
        let g = small_grid();
        let u = ScalarField::gaussian(g, 0.0, 0.1, 1.0);
        let xi = vec![-50.0; g.len()];
        let out = em_step(&u, &catalog(CatalogId::Kpz), 1e-3, &xi).unwrap();
        assert!(out.is_nonnegative());
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn feller_transition_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(start, kappa) in &[(0.3, 0.02), (2.0, 0.5), (1.0, 1e-3), (1e-4, 0.05)] {
            let n = 200_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let v = feller_transition(start, kappa, &mut rng);
                assert!(v >= 0.0);
                s += v;
                s2 += v * v;
            }
            let mean = s / n as f64;
            let var = s2 / n as f64 - mean * mean;
            let se = (kappa * start / n as f64).sqrt();
            assert!((mean - start).abs() < 5.0 * se, "{start} {kappa}: {mean}");
            assert!((var / (kappa * start) - 1.0).abs() < 0.05, "{start} {kappa}: {var}");
        }
    }

    #[test]
    fn noiseless_run_matches_heat_flow() {
        let g = GridSpec::new(10.0, 1000).unwrap();
        let time = TimeGrid::with_max_dt(0.5, 2e-4).unwrap();
        let u0 = ScalarField::gaussian(g, 0.0, 0.25, 1.0);
        let opts = SimOptions {
            record_every: 250,
            ..Default::default()
        };
        let traj = simulate_direct(&u0, &CoefficientSet::noiseless(0.0), time, 1, &opts).unwrap();
        for k in 0..traj.n_frames() {
            let exact = heat_convolve(&u0, traj.frame_time(k)).unwrap();
            assert!(traj.frame_field(k).max_abs_diff(&exact) <= 1e-3);
        }
    }

    #[test]
    fn zero_initial_stays_zero() {
        let g = small_grid();
        let time = TimeGrid::new(0.1, 100).unwrap();
        for mode in [NoiseMode::Gaussian, NoiseMode::Feller] {
            let opts = SimOptions {
                noise: mode,
                ..Default::default()
            };
            let traj =
                simulate_direct(&ScalarField::zeros(g), &catalog(CatalogId::Sbm), time, 3, &opts)
                    .unwrap();
            assert!(traj.frames.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deterministic_and_nonnegative() {
        let g = small_grid();
        let time = TimeGrid::new(0.1, 100).unwrap();
        let u0 = ScalarField::gaussian(g, 0.0, 0.25, 1.0);
        for id in [CatalogId::Kpz, CatalogId::Brwre, CatalogId::BrwreDual] {
            for mode in [NoiseMode::Gaussian, NoiseMode::Feller] {
                let opts = SimOptions {
                    noise: mode,
                    stream: 4,
                    ..Default::default()
                };
                let a = simulate_direct(&u0, &catalog(id), time, 9, &opts).unwrap();
                let b = simulate_direct(&u0, &catalog(id), time, 9, &opts).unwrap();
                assert_eq!(a, b);
                assert!(a.frames.iter().all(|&v| v >= 0.0));
                assert_eq!(a.frame(0), &prepare_initial(&u0).unwrap()[..]);
                for k in 0..a.n_frames() {
                    assert_eq!(a.frame(k)[0], 0.0);
                    assert_eq!(a.frame(k)[g.n_cells()], 0.0);
                }
            }
        }
    }

    #[test]
    fn ledger_replays_the_step() {
        let g = small_grid();
        let time = TimeGrid::new(0.05, 50).unwrap();
        let u0 = ScalarField::gaussian(g, 0.0, 0.25, 1.0);
        let c = catalog_with(CatalogId::Sbm, &FamilyParams {
            beta: 0.5,
            ..Default::default()
        })
        .unwrap();
        let opts = SimOptions {
            keep_ledger: true,
            ..Default::default()
        };
        let traj = simulate_direct(&u0, &c, time, 2, &opts).unwrap();
        let ledger = traj.ledger().unwrap();
        let dx = g.dx();
        let dt = time.dt();
        for m in 0..time.n_steps() {
            let u = traj.frame(m);
            let v = traj.frame(m + 1);
            for j in 1..g.n_cells() {
                let lap = (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (dx * dx);
                let det = u[j] + dt * (0.5 * lap + c.drift(u[j]));
                assert!((det + ledger.step(m)[j] - v[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_variance_scales_inversely_with_dx() {
        // Constant field, σ = √u with b = 0: per-cell noise variance is σ²·dt/dx.
        let params = GrowthParams {
            theta: 1.0,
            r: 0.5,
            upper_b: 0.0,
            lower_b: 0.0,
            l_sigma: 1.0,
        };
        let c = CoefficientSet::new("sqrt", |_| 0.0, |u: f64| u.sqrt(), params).unwrap();
        let dt = 1e-4;
        let mut variances = Vec::new();
        for n_cells in [400usize, 200] {
            let g = GridSpec::new(5.0, n_cells).unwrap();
            let u0 = ScalarField::from_fn(g, |x| if x.abs() < 4.0 { 1.0 } else { 0.0 });
            let time = TimeGrid::new(dt, 1).unwrap();
            for mode in [NoiseMode::Gaussian, NoiseMode::Feller] {
                let (mut s2, mut n) = (0.0, 0.0);
                for rep in 0..200 {
                    let opts = SimOptions {
                        noise: mode,
                        keep_ledger: true,
                        stream: rep,
                        ..Default::default()
                    };
                    let traj = simulate_direct(&u0, &c, time, 77, &opts).unwrap();
                    let inc = traj.ledger().unwrap().step(0);
                    for (j, x) in g.points().enumerate() {
                        if x.abs() < 3.0 {
                            s2 += inc[j] * inc[j];
                            n += 1.0;
                        }
                    }
                }
                let var = s2 / n;
                let expected = dt / g.dx();
                assert!((var / expected - 1.0).abs() < 0.05, "{mode:?} {n_cells}: {var}");
                variances.push(var);
            }
        }
        // doubling dx halves the per-cell variance
        assert!((variances[0] / variances[2] - 2.0).abs() < 0.15);
        assert!((variances[1] / variances[3] - 2.0).abs() < 0.15);
    }

    #[test]
    fn scheme_round_trip() {
        for s in [Scheme::Direct, Scheme::Slab(8), Scheme::Particle(10000)] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("slab(x)".parse::<Scheme>().is_err());
    }

    #[test]
    fn overflow_guard_reports_step() {
        let g = small_grid();
        let time = TimeGrid::new(0.1, 100).unwrap();
        let u0 = ScalarField::gaussian(g, 0.0, 0.25, 1.0);
        let c = CoefficientSet::noiseless(300.0);
        let opts = SimOptions {
            overflow_guard: 1e6,
            ..Default::default()
        };
        match simulate_direct(&u0, &c, time, 0, &opts) {
            Err(Error::Overflow { step, .. }) => assert!(step > 1 && step <= 100),
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
