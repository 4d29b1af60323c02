//! Martingale-problem statistics.
//!
//! For a test function φ the process
//!
//! ```text
//! Z_t(φ) = ⟨φ, u_t⟩ − ⟨φ, u_0⟩ − ∫₀ᵗ ⟨½φ″ + b(u_s)φ, u_s⟩ ds
//! ```
//!
//! must be a mean-zero martingale with `⟨Z(φ)⟩_t = ∫₀ᵗ∫σ(u)²φ² dx ds`. Under slab freezing
//! `b(u_s)` becomes `b(uⁿ_s)` and the quadratic-variation density becomes `γ(uⁿ)u`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::field::{inner_slices, GridSpec, ScalarField};
use crate::semigroup::semigroup_bound_field;
use crate::sim::{Scheme, TrajectoryField};
use crate::stats::Accumulator;

/// Minimum ensemble size for the statistical tests.
pub const MIN_REPLICAS: usize = 200;
/// Pass threshold in standard errors.
pub const Z_THRESHOLD: f64 = 3.0;
/// Accepted band for realised / predicted quadratic variation.
pub const QV_BAND: (f64, f64) = (0.85, 1.15);
/// Raw time steps between the increments summed into the realised quadratic variation.
pub const QV_STEP_STRIDE: usize = 10;
/// Test functions must vanish this many cells away from the boundary.
const SUPPORT_MARGIN_CELLS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    id: String,
    grid: GridSpec,
    phi: Vec<f64>,
    half_lap: Vec<f64>,
    /// Support is `[center − radius, center + radius]`; infinite for the constant.
    center: f64,
    radius: f64,
}

/// `cos⁴(πz/2)` on `|z| < 1` and its first two derivatives in z.
fn cos4(z: f64) -> (f64, f64, f64) {
    if z.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let th = 0.5 * PI * z;
    let (s, c) = th.sin_cos();
    let k = 0.5 * PI;
    (
        c.powi(4),
        -4.0 * c.powi(3) * s * k,
        (12.0 * c * c * s * s - 4.0 * c.powi(4)) * k * k,
    )
}

impl TestFunction {
    /// φ ≡ 1; exempt from the support rule since trajectories vanish on the boundary.
    pub fn constant(grid: GridSpec) -> Self {
        Self {
            id: "one".into(),
            grid,
            phi: vec![1.0; grid.len()],
            half_lap: vec![0.0; grid.len()],
            center: 0.0,
            radius: f64::INFINITY,
        }
    }

    /// Smooth bump `cos⁴(π(x − c)/2w)` supported on `[c − w, c + w]`.
    pub fn bump(grid: GridSpec, center: f64, width: f64) -> Self {
        let mut phi = Vec::with_capacity(grid.len());
        let mut half_lap = Vec::with_capacity(grid.len());
        for x in grid.points() {
            let (f, _, f2) = cos4((x - center) / width);
            phi.push(f);
            half_lap.push(0.5 * f2 / (width * width));
        }
        Self {
            id: format!("bump(c={center},w={width})"),
            grid,
            phi,
            half_lap,
            center,
            radius: width,
        }
    }

    /// Linear times bump: `((x − c)/w)·cos⁴(π(x − c)/2w)`, a sign-changing test function.
    pub fn poly_bump(grid: GridSpec, center: f64, width: f64) -> Self {
        let mut phi = Vec::with_capacity(grid.len());
        let mut half_lap = Vec::with_capacity(grid.len());
        for x in grid.points() {
            let y = (x - center) / width;
            let (f, f1, f2) = cos4(y);
            phi.push(y * f);
            // d²/dy²(y f) = 2f′ + y f″
            half_lap.push(0.5 * (2.0 * f1 + y * f2) / (width * width));
        }
        Self {
            id: format!("xbump(c={center},w={width})"),
            grid,
            phi,
            half_lap,
            center,
            radius: width,
        }
    }

    /// Standard catalog: the constant, two bumps and a sign-changing polynomial bump.
    pub fn catalog(grid: GridSpec) -> Vec<Self> {
        vec![
            Self::constant(grid),
            Self::bump(grid, 0.0, 1.0),
            Self::bump(grid, 0.5, 1.5),
            Self::poly_bump(grid, 0.0, 1.5),
        ]
    }

    /// Value at an arbitrary point: exact for the constant, linear interpolation otherwise,
    /// zero off the grid.
    pub fn at(&self, x: f64) -> f64 {
        if self.is_constant() {
            return self.phi[0];
        }
        let (l, dx) = (self.grid.half_width(), self.grid.dx());
        let s = (x + l) / dx;
        if !(0.0..=self.grid.n_cells() as f64).contains(&s) {
            return 0.0;
        }
        let j = (s.floor() as usize).min(self.grid.n_cells() - 1);
        let w = s - j as f64;
        (1.0 - w) * self.phi[j] + w * self.phi[j + 1]
    }

    pub fn negated(&self) -> Self {
        Self {
            id: format!("-{}", self.id),
            phi: self.phi.iter().map(|v| -v).collect(),
            half_lap: self.half_lap.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn half_laplacian(&self) -> &[f64] {
        &self.half_lap
    }

    pub fn support_radius(&self) -> f64 {
        self.radius
    }

    pub fn is_constant(&self) -> bool {
        self.radius.is_infinite()
    }

    pub fn abs_field(&self) -> ScalarField {
        ScalarField::new(self.grid, self.phi.iter().map(|v| v.abs()).collect())
            .expect("test functions are finite")
    }

    pub fn check_support(&self) -> Result<()> {
        if self.is_constant() {
            return Ok(());
        }
        let limit = self.grid.half_width() - SUPPORT_MARGIN_CELLS * self.grid.dx();
        if self.center - self.radius < -limit || self.center + self.radius > limit {
            return Err(Error::Config(format!(
                "support of {} leaves the interior [{:.4}, {:.4}]",
                self.id, -limit, limit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QvMode {
    /// `σ(u)²φ²`.
    #[default]
    Sigma,
    /// `γ(uⁿ)uφ²`, the slab scheme's own prediction.
    FrozenGamma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZOptions {
    /// Added to b in the compensator; nonzero values are a miscalibration control.
    pub drift_shift: f64,
    pub qv_mode: QvMode,
    pub qv_step_stride: usize,
}

impl Default for ZOptions {
    fn default() -> Self {
        Self {
            drift_shift: 0.0,
            qv_mode: QvMode::Sigma,
            qv_step_stride: QV_STEP_STRIDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSeries {
    pub phi_id: String,
    pub times: Vec<f64>,
    /// `⟨φ, u_t⟩`.
    pub pairing: Vec<f64>,
    pub z: Vec<f64>,
    pub predicted_qv: Vec<f64>,
    pub realized_qv: Vec<f64>,
}

impl MartingaleSeries {
    /// Index of the recorded time closest to `t`, if within half a frame.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        let gap = if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            1.0
        };
        let k = ((t - self.times[0]) / gap).round();
        if k < 0.0 || k as usize >= self.times.len() || (self.times[k as usize] - t).abs() > 1e-9 * (1.0 + t) {
            return Err(Error::OffGrid {
                what: format!("t = {t} is not a recorded time"),
            });
        }
        Ok(k as usize)
    }
}

/// Slab length in steps for a slab trajectory, else 1.
fn freeze_steps(traj: &TrajectoryField) -> usize {
    match traj.scheme() {
        Scheme::Slab(n) => (1.0 / (n as f64 * traj.time_grid().dt())).round() as usize,
        _ => 1,
    }
}

/// Computes `Z_t(φ)` and both quadratic-variation tracks at every recorded time.
///
/// The time integrals are left-point sums over the recorded frames. For slab trajectories the
/// compensator uses the frozen drift `b(uⁿ)`.
pub fn z_process(
    traj: &TrajectoryField,
    phi: &TestFunction,
    c: &CoefficientSet,
    opts: &ZOptions,
) -> Result<MartingaleSeries> {
    phi.check_support()?;
    if phi.grid() != traj.grid() {
        return Err(Error::Config("test function and trajectory grids differ".into()));
    }
    let freeze = freeze_steps(traj);
    let every = traj.record_every();
    if opts.qv_mode == QvMode::FrozenGamma && !matches!(traj.scheme(), Scheme::Slab(_)) {
        return Err(Error::Config(format!(
            "frozen-γ quadratic variation requested for a {} run",
            traj.scheme()
        )));
    }
    if freeze > 1 && freeze % every != 0 {
        return Err(Error::Config(format!(
            "slab starts every {freeze} steps are not all recorded (record_every = {every})"
        )));
    }
    if opts.qv_step_stride == 0 || opts.qv_step_stride % every != 0 {
        return Err(Error::Config(format!(
            "realised-QV stride {} is not a multiple of record_every = {every}",
            opts.qv_step_stride
        )));
    }
    let stride = opts.qv_step_stride / every;
    let grid = *traj.grid();
    let frame_dt = traj.time_grid().dt() * every as f64;
    let n = traj.n_frames();
    let phi_v = phi.values();
    let phi_sq: Vec<f64> = phi_v.iter().map(|v| v * v).collect();
    let mut weight = vec![0.0; grid.len()];
    let mut density = vec![0.0; grid.len()];

    let mut out = MartingaleSeries {
        phi_id: phi.id().to_string(),
        times: Vec::with_capacity(n),
        pairing: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        predicted_qv: Vec::with_capacity(n),
        realized_qv: Vec::with_capacity(n),
    };
    let mut compensator = 0.0;
    let mut predicted = 0.0;
    let mut blocks = 0.0;
    let p0 = inner_slices(&grid, phi_v, traj.frame(0));
    for k in 0..n {
        let u = traj.frame(k);
        let pairing = inner_slices(&grid, phi_v, u);
        let z = pairing - p0 - compensator;
        out.times.push(traj.frame_time(k));
        out.pairing.push(pairing);
        out.z.push(z);
        out.predicted_qv.push(predicted);
        let base = (k / stride) * stride;
        let tail = z - out.z[base];
        out.realized_qv.push(blocks + tail * tail);
        if k > 0 && k % stride == 0 {
            let d = z - out.z[k - stride];
            blocks += d * d;
            *out.realized_qv.last_mut().unwrap() = blocks;
        }

        let frozen = traj.frame(((k * every) / freeze) * freeze / every);
        for j in 0..grid.len() {
            weight[j] = phi.half_lap[j] + (c.b(frozen[j]) + opts.drift_shift) * phi_v[j];
            density[j] = match opts.qv_mode {
                QvMode::Sigma => {
                    let s = c.sigma(u[j]);
                    s * s
                }
                QvMode::FrozenGamma => {
                    if u[j] > 0.0 {
                        c.gamma_rate(frozen[j]) * u[j]
                    } else {
                        0.0
                    }
                }
            };
        }
        compensator += inner_slices(&grid, &weight, u) * frame_dt;
        predicted += inner_slices(&grid, &density, &phi_sq) * frame_dt;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub test_id: String,
    pub statistic: f64,
    pub se: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl TestVerdict {
    pub const CSV_HEADER: &'static str = "test_id,statistic,se,threshold,verdict";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            csv_escape(&self.test_id),
            self.statistic,
            self.se,
            self.threshold,
            if self.passed { "pass" } else { "fail" }
        )
    }
}

pub fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_verdicts_csv<W: Write>(verdicts: &[TestVerdict], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", TestVerdict::CSV_HEADER)?;
    for v in verdicts {
        writeln!(w, "{}", v.csv_row())?;
    }
    Ok(())
}

fn check_ensemble(series: &[MartingaleSeries]) -> Result<()> {
    if series.len() < MIN_REPLICAS {
        return Err(Error::InsufficientData(format!(
            "{} replicas, at least {MIN_REPLICAS} required",
            series.len()
        )));
    }
    let id = &series[0].phi_id;
    if series.iter().any(|s| &s.phi_id != id) {
        return Err(Error::Config("ensemble mixes test functions".into()));
    }
    Ok(())
}

/// Values `f(series, k)` at the recorded time `t` of every replica.
fn collect_at(
    series: &[MartingaleSeries],
    t: f64,
    f: impl Fn(&MartingaleSeries, usize) -> f64,
) -> Result<Accumulator> {
    let mut acc = Accumulator::new();
    for s in series {
        acc.push(f(s, s.index_at(t)?));
    }
    Ok(acc)
}

/// A pass iff `|mean| ≤ 3·SE` (degenerate ensembles with zero spread pass iff the mean is
/// below `floor`).
fn z_verdict(id: String, acc: &Accumulator, floor: f64) -> TestVerdict {
    let mean = acc.mean();
    let se = acc.std_err();
    let threshold = (Z_THRESHOLD * se).max(floor);
    TestVerdict {
        test_id: id,
        statistic: mean,
        se,
        threshold,
        passed: mean.abs() <= threshold,
    }
}

/// Absolute floor for degenerate (noise-free) ensembles, where the SE vanishes and only the
/// scheme's discretisation residual remains.
const DEGENERATE_FLOOR: f64 = 1e-3;

/// `E[Z_t(φ)] = 0`.
pub fn martingale_test(series: &[MartingaleSeries], t: f64) -> Result<TestVerdict> {
    check_ensemble(series)?;
    let acc = collect_at(series, t, |s, k| s.z[k])?;
    Ok(z_verdict(
        format!("martingale_mean[{}@{t}]", series[0].phi_id),
        &acc,
        DEGENERATE_FLOOR,
    ))
}

/// `E[(Z_t − Z_s)(g − ḡ)] = 0` with `g = ⟨φ, u_s⟩` and `s = t/2` (nearest recorded time).
pub fn orthogonality_test(series: &[MartingaleSeries], t: f64) -> Result<TestVerdict> {
    check_ensemble(series)?;
    let kt = series[0].index_at(t)?;
    let ks = kt / 2;
    let s_time = series[0].times[ks];
    let gbar = series.iter().map(|s| s.pairing[ks]).sum::<f64>() / series.len() as f64;
    let mut acc = Accumulator::new();
    for s in series {
        let kt = s.index_at(t)?;
        acc.push((s.z[kt] - s.z[ks]) * (s.pairing[ks] - gbar));
    }
    Ok(z_verdict(
        format!("martingale_orthogonality[{}@{s_time}->{t}]", series[0].phi_id),
        &acc,
        DEGENERATE_FLOOR * DEGENERATE_FLOOR,
    ))
}

/// Mean and orthogonality checks together.
pub fn martingale_suite(series: &[MartingaleSeries], t: f64) -> Result<Vec<TestVerdict>> {
    Ok(vec![martingale_test(series, t)?, orthogonality_test(series, t)?])
}

/// Realised against predicted quadratic variation; pass iff the ratio of means is in
/// [`QV_BAND`]. The reported SE is that of the ratio (delta method).
pub fn qv_compare(series: &[MartingaleSeries], t: f64) -> Result<TestVerdict> {
    check_ensemble(series)?;
    let real = collect_at(series, t, |s, k| s.realized_qv[k])?;
    let pred = collect_at(series, t, |s, k| s.predicted_qv[k])?;
    let id = format!("qv_ratio[{}@{t}]", series[0].phi_id);
    let (mr, mp) = (real.mean(), pred.mean());
    if mr.abs() <= 1e-14 && mp.abs() <= 1e-14 {
        return Ok(TestVerdict {
            test_id: id,
            statistic: 1.0,
            se: 0.0,
            threshold: QV_BAND.1 - 1.0,
            passed: true,
        });
    }
    let ratio = mr / mp;
    let diff: Accumulator = series
        .iter()
        .map(|s| {
            let k = s.index_at(t).expect("checked above");
            (s.realized_qv[k] - ratio * s.predicted_qv[k]) / mp
        })
        .collect();
    Ok(TestVerdict {
        test_id: id,
        statistic: ratio,
        se: diff.std_err(),
        threshold: QV_BAND.1 - 1.0,
        passed: ratio >= QV_BAND.0 && ratio <= QV_BAND.1,
    })
}

/// `E|⟨φ, u_t⟩| ≤ ∫P_t^{L_b}|φ| u₀ + 3·SE`.
pub fn domination_check(
    series: &[MartingaleSeries],
    u0: &ScalarField,
    phi: &TestFunction,
    t: f64,
    l_b: f64,
) -> Result<TestVerdict> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty ensemble".into()));
    }
    let acc = collect_at(series, t, |s, k| s.pairing[k].abs())?;
    let bound = semigroup_bound_field(u0, &phi.abs_field(), t, l_b)?;
    let se = if series.len() > 1 { acc.std_err() } else { 0.0 };
    Ok(TestVerdict {
        test_id: format!("domination[{}@{t},L_b={l_b}]", phi.id()),
        statistic: acc.mean(),
        se,
        threshold: bound + Z_THRESHOLD * se,
        passed: acc.mean() <= bound + Z_THRESHOLD * se,
    })
}

/// For `b ≡ β`: `E M_t = e^{βt} M_0`. The series must be for φ ≡ 1.
pub fn mass_law_check(
    series: &[MartingaleSeries],
    c: &CoefficientSet,
    beta: f64,
    t: f64,
) -> Result<TestVerdict> {
    check_ensemble(series)?;
    if series[0].phi_id != "one" {
        return Err(Error::Config("the mass law needs the constant test function".into()));
    }
    if !c.has_constant_drift(beta, 100.0) {
        return Err(Error::Config(format!(
            "declared β = {beta} does not match the drift of {}",
            c.label()
        )));
    }
    let m0 = series[0].pairing[0];
    let target = (beta * t).exp() * m0;
    let acc = collect_at(series, t, |s, k| s.pairing[k] / target)?;
    Ok(TestVerdict {
        test_id: format!("mass_law[beta={beta}@{t}]"),
        statistic: acc.mean(),
        se: acc.std_err(),
        threshold: Z_THRESHOLD * acc.std_err(),
        passed: (acc.mean() - 1.0).abs() <= Z_THRESHOLD * acc.std_err(),
    })
}
