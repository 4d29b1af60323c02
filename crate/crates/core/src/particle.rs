//! Branching Brownian particles approximating the super-Brownian motion with frozen drift
//! and branching-rate fields, and the dyadic-cell density reconstruction.
//!
//! Each particle carries mass `1/N`, moves as a Brownian motion and branches at rate `Nγ(x)`
//! into two particles with probability `½ + b(x)/(2Nγ(x))` and into none otherwise, so the
//! offspring mean is `1 + b/(Nγ)` and the mass drift is `b`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::field::{inner_slices, GridSpec, ScalarField};
use crate::sim::{CellCoefficients, SimOptions};
use crate::slab::{simulate_slab, SlabSchedule};
use crate::stats::{variance_with_se, Accumulator};
use crate::verify::{TestFunction, Z_THRESHOLD};

pub const MIN_PARTICLE_N: usize = 100;
/// Population size at which a run is abandoned as blown up.
pub const MAX_PARTICLES: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSystem {
    n: usize,
    positions: Vec<f64>,
    time: f64,
    stream: u64,
}

impl ParticleSystem {
    pub fn new(n: usize, positions: Vec<f64>, time: f64, stream: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("particle scale N must be positive".into()));
        }
        if let Some(x) = positions.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidField(format!("particle position {x} is not finite")));
        }
        Ok(Self {
            n,
            positions,
            time,
            stream,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn particle_mass(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `X_t(1)`.
    pub fn total_mass(&self) -> f64 {
        self.positions.len() as f64 / self.n as f64
    }

    /// `⟨φ, X_t⟩`.
    pub fn pairing(&self, phi: &TestFunction) -> f64 {
        self.positions.iter().map(|&x| phi.at(x)).sum::<f64>() / self.n as f64
    }

    fn write_rows<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let m = self.particle_mass();
        for x in &self.positions {
            writeln!(w, "{},{},{}", self.time, x, m)?;
        }
        Ok(())
    }
}

/// Writes snapshots as `time,position,mass` CSV.
pub fn write_snapshots_csv<W: Write>(snapshots: &[ParticleSystem], mut w: W) -> std::io::Result<()> {
    writeln!(w, "time,position,mass")?;
    for s in snapshots {
        s.write_rows(&mut w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleOptions {
    /// Particles per unit mass.
    pub n: usize,
    pub horizon: f64,
    /// Spacing of the snapshots; also the interval over which positions are synchronised.
    pub dt: f64,
    pub seed: u64,
    pub stream: u64,
}

/// Nearest grid node, or `None` off the grid (where b = γ = 0).
fn cell_of(grid: &GridSpec, x: f64) -> Option<usize> {
    let s = ((x + grid.half_width()) / grid.dx()).round();
    (s >= 0.0 && s <= grid.n_cells() as f64).then_some(s as usize)
}

/// Cells where γ = 0 but b ≠ 0; the drift there is lost by the particle backend.
pub fn inactive_drift_cells(b: &ScalarField, gamma: &ScalarField) -> Vec<usize> {
    b.values()
        .iter()
        .zip(gamma.values())
        .enumerate()
        .filter(|(_, (&b, &g))| g == 0.0 && b != 0.0)
        .map(|(j, _)| j)
        .collect()
}

fn check_validity(b: &ScalarField, gamma: &ScalarField, n: usize) -> Result<()> {
    let grid = b.grid();
    for (j, (&bj, &gj)) in b.values().iter().zip(gamma.values()).enumerate() {
        if !(gj >= 0.0) || !gj.is_finite() || !bj.is_finite() {
            return Err(Error::Config(format!(
                "cell {j} (x = {}): need finite b and γ ≥ 0, got b = {bj}, γ = {gj}",
                grid.x(j)
            )));
        }
        if gj > 0.0 && bj.abs() > n as f64 * gj {
            return Err(Error::Config(format!(
                "cell {j} (x = {}): |b| = {} exceeds Nγ = {}; offspring probabilities leave [0, 1]",
                grid.x(j),
                bj.abs(),
                n as f64 * gj
            )));
        }
    }
    Ok(())
}

/// Stratified inverse-CDF positions for `u0` read as piecewise linear between nodes.
fn initial_positions(u0: &ScalarField, count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let grid = u0.grid();
    let v = u0.values();
    let dx = grid.dx();
    let mut cdf = Vec::with_capacity(v.len());
    cdf.push(0.0);
    for j in 0..grid.n_cells() {
        cdf.push(cdf[j] + 0.5 * dx * (v[j] + v[j + 1]));
    }
    let total = cdf[grid.n_cells()];
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    for i in 0..count {
        let target = total * (i as f64 + rng.random::<f64>()) / count as f64;
        while k + 1 < grid.n_cells() && cdf[k + 1] <= target {
            k += 1;
        }
        let (a, c) = (v[k], v[k + 1]);
        let r = target - cdf[k];
        let slope = (c - a) / dx;
        // solve a·s + slope·s²/2 = r on [0, dx]
        let s = if slope.abs() <= 1e-12 * (a + c).max(f64::MIN_POSITIVE) {
            if a > 0.0 {
                r / a
            } else {
                0.5 * dx
            }
        } else {
            let disc = (a * a + 2.0 * slope * r).max(0.0);
            2.0 * r / (a + disc.sqrt())
        };
        out.push(grid.x(k) + s.clamp(0.0, dx));
    }
    out
}

/// Runs the particle system with frozen per-cell fields `b` and `γ`.
///
/// Starts from `⌈N∫u0⌉` particles and returns snapshots at `0, dt, 2dt, …, horizon`.
/// Branching clocks ring at the bound `N·max γ` and are thinned by `γ(x)/max γ` at the
/// position where they ring; between rings the motion is sampled exactly.
pub fn simulate_particles(
    u0: &ScalarField,
    b: &ScalarField,
    gamma: &ScalarField,
    opts: &ParticleOptions,
) -> Result<Vec<ParticleSystem>> {
    let n = opts.n;
    if n < MIN_PARTICLE_N {
        return Err(Error::Config(format!("N = {n} is below the minimum {MIN_PARTICLE_N}")));
    }
    if b.grid() != u0.grid() || gamma.grid() != u0.grid() {
        return Err(Error::Config("u0, b and γ must share one grid".into()));
    }
    if !u0.is_nonnegative() {
        return Err(Error::InvalidField("initial profile must be nonnegative".into()));
    }
    if !(opts.horizon > 0.0 && opts.dt > 0.0) {
        return Err(Error::Config(format!(
            "horizon and dump spacing must be positive, got T = {}, dt = {}",
            opts.horizon, opts.dt
        )));
    }
    let ratio = opts.horizon / opts.dt;
    let n_dumps = ratio.round();
    if n_dumps < 1.0 || (ratio - n_dumps).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "dump spacing {} does not divide T = {}",
            opts.dt, opts.horizon
        )));
    }
    check_validity(b, gamma, n)?;

    let grid = *u0.grid();
    let bv = b.values();
    let gv = gamma.values();
    let gamma_max = gv.iter().cloned().fold(0.0, f64::max);
    let ring_rate = n as f64 * gamma_max;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(opts.stream);

    let count = (n as f64 * u0.integral() - 1e-9).ceil().max(0.0) as usize;
    let mut positions = initial_positions(u0, count, &mut rng);
    let mut snaps = vec![ParticleSystem::new(n, positions.clone(), 0.0, opts.stream)?];
    let mut stack: Vec<(f64, f64)> = Vec::new();
    for k in 1..=n_dumps as usize {
        let (t0, t1) = ((k - 1) as f64 * opts.dt, k as f64 * opts.dt);
        stack.clear();
        stack.extend(positions.iter().map(|&x| (x, t0)));
        positions.clear();
        while let Some((mut x, mut t)) = stack.pop() {
            loop {
                let tau = if ring_rate > 0.0 {
                    rng.sample::<f64, _>(Exp1) / ring_rate
                } else {
                    f64::INFINITY
                };
                if t + tau >= t1 {
                    x += (t1 - t).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    positions.push(x);
                    break;
                }
                x += tau.sqrt() * rng.sample::<f64, _>(StandardNormal);
                t += tau;
                let Some(j) = cell_of(&grid, x) else { continue };
                let g = gv[j];
                if g <= 0.0 || rng.random::<f64>() * gamma_max >= g {
                    continue;
                }
                let p_two = 0.5 + bv[j] / (2.0 * n as f64 * g);
                if rng.random::<f64>() < p_two {
                    stack.push((x, t));
                    if stack.len() + positions.len() > MAX_PARTICLES {
                        return Err(Error::Overflow {
                            step: k,
                            time: t,
                            value: (stack.len() + positions.len()) as f64,
                            guard: MAX_PARTICLES as f64,
                        });
                    }
                } else {
                    break;
                }
            }
        }
        snaps.push(ParticleSystem::new(n, positions.clone(), t1, opts.stream)?);
    }
    Ok(snaps)
}

/// Particle counts on the dyadic cells `[j2^{-n}, (j+1)2^{-n})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicDensity {
    level: u32,
    first_cell: i64,
    counts: Vec<u64>,
    n: usize,
}

impl DyadicDensity {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn cell_width(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// Index of the cell containing `x`.
    pub fn cell_index(&self, x: f64) -> i64 {
        (x * self.level_scale()).floor() as i64
    }

    fn level_scale(&self) -> f64 {
        (self.level as f64).exp2()
    }

    /// `2^n X_t(I_n)` on cell `j`.
    pub fn density(&self, j: i64) -> f64 {
        let k = j - self.first_cell;
        if k < 0 || k as usize >= self.counts.len() {
            return 0.0;
        }
        self.counts[k as usize] as f64 * self.level_scale() / self.n as f64
    }

    /// Density at `x`.
    pub fn at(&self, x: f64) -> f64 {
        self.density(self.cell_index(x))
    }

    /// Occupied cell range as `(left edge, density)` pairs.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let w = self.cell_width();
        (0..self.counts.len()).map(move |k| {
            let j = self.first_cell + k as i64;
            (j as f64 * w, self.density(j))
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.n as f64
    }
}

pub fn density_estimate(ps: &ParticleSystem, level: u32) -> DyadicDensity {
    let mut d = DyadicDensity {
        level,
        first_cell: 0,
        counts: Vec::new(),
        n: ps.n,
    };
    if ps.is_empty() {
        return d;
    }
    let cells: Vec<i64> = ps.positions.iter().map(|&x| d.cell_index(x)).collect();
    let lo = *cells.iter().min().unwrap();
    let hi = *cells.iter().max().unwrap();
    d.first_cell = lo;
    d.counts = vec![0; (hi - lo + 1) as usize];
    for j in cells {
        d.counts[(j - lo) as usize] += 1;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub phi_id: String,
    pub mean_slab: f64,
    pub mean_particle: f64,
    pub z_mean: f64,
    pub var_slab: f64,
    pub var_particle: f64,
    pub z_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub t_check: f64,
    pub replicas: usize,
    pub rows: Vec<ComparisonRow>,
    /// Cells where the frozen γ vanishes but b does not.
    pub inactive_drift_cells: Vec<usize>,
    pub passed: bool,
}

impl ComparisonReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [r.z_mean.abs(), r.z_var.abs()])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckOptions {
    pub replicas: usize,
    /// Upper bound on the slab stepper's time step.
    pub dt_max: f64,
    pub seed: u64,
}

fn z_score(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let d = a - b;
    let s = se_a.hypot(se_b);
    if s > 0.0 {
        d / s
    } else if d.abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
        0.0
    } else {
        f64::INFINITY.copysign(d)
    }
}

/// Compares the slab stepper with the particle system on the first slab, where both run with
/// the frozen fields `b(u0)`, `γ(u0)`.
pub fn cross_validate_slab(
    u0: &ScalarField,
    c: &CoefficientSet,
    n_slabs: usize,
    n_particles: usize,
    t_check: f64,
    opts: &CrossCheckOptions,
) -> Result<ComparisonReport> {
    let sched = SlabSchedule::new(n_slabs)?;
    if !(t_check > 0.0 && t_check <= sched.delta() * (1.0 + 1e-9)) {
        return Err(Error::Config(format!(
            "t_check = {t_check} must lie in the first slab (0, {}]",
            sched.delta()
        )));
    }
    if opts.replicas < 2 {
        return Err(Error::InsufficientData("cross-check needs at least 2 replicas".into()));
    }
    let grid = *u0.grid();
    let mut cells = CellCoefficients::new(grid.len());
    cells.evaluate(c, u0.values());
    let b = ScalarField::new(grid, cells.b)?;
    let gamma = ScalarField::new(grid, cells.rate)?;
    check_validity(&b, &gamma, n_particles)?;

    let time = sched.align(t_check, opts.dt_max)?;
    let sim_opts = SimOptions {
        record_every: time.n_steps(),
        ..Default::default()
    };
    let phis = TestFunction::catalog(grid);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let traj = simulate_slab(u0, c, &sched, time, opts.seed, &SimOptions { stream: r, ..sim_opts })?;
            let last = traj.last_frame();
            let slab: Vec<f64> = phis.iter().map(|p| inner_slices(&grid, p.values(), last)).collect();
            let popts = ParticleOptions {
                n: n_particles,
                horizon: t_check,
                dt: t_check,
                seed: opts.seed,
                stream: r,
            };
            let snaps = simulate_particles(u0, &b, &gamma, &popts)?;
            let end = snaps.last().expect("at least one snapshot");
            let part: Vec<f64> = phis.iter().map(|p| end.pairing(p)).collect();
            Ok((slab, part))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<ComparisonRow> = phis
        .iter()
        .enumerate()
        .map(|(i, phi)| {
            let s: Vec<f64> = pairs.iter().map(|(a, _)| a[i]).collect();
            let p: Vec<f64> = pairs.iter().map(|(_, b)| b[i]).collect();
            let (sa, pa) = (Accumulator::from_slice(&s), Accumulator::from_slice(&p));
            let ((vs, vs_se), (vp, vp_se)) = (variance_with_se(&s), variance_with_se(&p));
            ComparisonRow {
                phi_id: phi.id().to_string(),
                mean_slab: sa.mean(),
                mean_particle: pa.mean(),
                z_mean: z_score(sa.mean(), sa.std_err(), pa.mean(), pa.std_err()),
                var_slab: vs,
                var_particle: vp,
                z_var: z_score(vs, vs_se, vp, vp_se),
            }
        })
        .collect();
    let passed = rows
        .iter()
        .all(|r| r.z_mean.abs() <= Z_THRESHOLD && r.z_var.abs() <= Z_THRESHOLD);
    Ok(ComparisonReport {
        t_check,
        replicas: opts.replicas,
        rows,
        inactive_drift_cells: inactive_drift_cells(&b, &gamma),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{catalog, CatalogId};
    use crate::field::heat_convolve;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(5.0, 200).unwrap()
    }

    fn constant_fields(b: f64, g: f64) -> (ScalarField, ScalarField) {
        (ScalarField::from_fn(grid(), |_| b), ScalarField::from_fn(grid(), |_| g))
    }

    fn opts(n: usize, horizon: f64, dt: f64, stream: u64) -> ParticleOptions {
        ParticleOptions {
            n,
            horizon,
            dt,
            seed: 11,
            stream,
        }
    }

    #[test]
    fn no_branching_keeps_mass_and_moves_brownian() {
        let (b, g) = constant_fields(0.0, 0.0);
        // one particle near x = 0 carrying mass 1/N
        let n = 1000;
        let u0 = ScalarField::from_fn(grid(), |x| if x.abs() < 1e-9 { 1.0 / (n as f64 * grid().dx()) } else { 0.0 });
        let mut acc = Accumulator::new();
        for r in 0..2000 {
            let s = simulate_particles(&u0, &b, &g, &opts(n, 0.5, 0.1, r)).unwrap();
            assert_eq!(s.len(), 6);
            for snap in &s {
                assert_eq!(snap.len(), 1);
                assert_eq!(snap.total_mass(), 1.0 / n as f64);
            }
            let x0 = s[0].positions()[0];
            acc.push(s[5].positions()[0] - x0);
        }
        assert!(acc.mean().abs() < 3.0 * acc.std_err());
        // Var = T = 0.5, SE of sample variance ≈ T√(2/n)
        assert!((acc.variance() - 0.5).abs() < 3.0 * 0.5 * (2.0f64 / 2000.0).sqrt());
    }

    #[test]
    fn initial_count_and_stratified_mass() {
        let u0 = ScalarField::gaussian(grid(), 0.3, 0.25, 0.8);
        let (b, g) = constant_fields(0.0, 0.0);
        let s = simulate_particles(&u0, &b, &g, &opts(1000, 0.1, 0.1, 0)).unwrap();
        assert_eq!(s[0].len(), (1000.0 * u0.integral() - 1e-9).ceil() as usize);
        let mean = s[0].positions().iter().sum::<f64>() / s[0].len() as f64;
        assert!((mean - 0.3).abs() < 2e-3, "{mean}");
        let zero = ScalarField::zeros(grid());
        let s = simulate_particles(&zero, &b, &g, &opts(1000, 0.1, 0.05, 0)).unwrap();
        assert!(s.iter().all(|p| p.is_empty()));
    }

    #[test]
    fn validity_condition_names_cell() {
        let u0 = ScalarField::gaussian(grid(), 0.0, 0.25, 1.0);
        let b = ScalarField::from_fn(grid(), |x| if (x - 1.0).abs() < 1e-9 { 500.0 } else { 0.0 });
        let g = ScalarField::from_fn(grid(), |_| 0.1);
        let err = simulate_particles(&u0, &b, &g, &opts(1000, 0.1, 0.1, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("cell 120"), "{msg}");
        let (b, g) = constant_fields(0.0, 1.0);
        assert!(simulate_particles(&u0, &b, &g, &opts(50, 0.1, 0.1, 0)).is_err());
        assert!(simulate_particles(&u0, &b, &g, &opts(1000, 0.1, 0.03, 0)).is_err());
    }

    #[test]
    fn critical_mass_is_martingale_with_linear_variance() {
        let (b, g) = constant_fields(0.0, 1.0);
        let u0 = ScalarField::gaussian(grid(), 0.0, 0.25, 0.2);
        let mut masses = vec![Vec::new(); 3];
        let mut m0 = 0.0;
        for r in 0..1500 {
            let s = simulate_particles(&u0, &b, &g, &opts(200, 0.5, 0.25, r)).unwrap();
            m0 = s[0].total_mass();
            for (m, p) in masses.iter_mut().zip(&s) {
                m.push(p.total_mass());
            }
        }
        for (k, m) in masses.iter().enumerate().skip(1) {
            let t = 0.25 * k as f64;
            let a = Accumulator::from_slice(m);
            assert!((a.mean() - m0).abs() <= 3.0 * a.std_err(), "t = {t}: {}", a.mean());
            let (v, se) = variance_with_se(m);
            assert!((v - m0 * t).abs() <= 3.0 * se, "t = {t}: {v}");
        }
    }

    #[test]
    fn supercritical_mean_grows_exponentially() {
        let (b, g) = constant_fields(0.5, 1.0);
        let u0 = ScalarField::gaussian(grid(), 0.0, 0.25, 0.2);
        let mut acc = Accumulator::new();
        let mut m0 = 0.0;
        for r in 0..1500 {
            let s = simulate_particles(&u0, &b, &g, &opts(200, 0.5, 0.5, r)).unwrap();
            m0 = s[0].total_mass();
            acc.push(s[1].total_mass());
        }
        let target = m0 * 0.25f64.exp();
        assert!((acc.mean() - target).abs() <= 3.0 * acc.std_err(), "{} vs {target}", acc.mean());
    }

    #[test]
    fn dyadic_examples() {
        let n = 1000;
        let ps = ParticleSystem::new(n, vec![0.3], 0.0, 0).unwrap();
        let d = density_estimate(&ps, 1);
        assert_eq!(d.density(0), 2.0 / n as f64);
        assert_eq!(d.at(0.49), 2.0 / n as f64);
        assert_eq!(d.at(0.5), 0.0);
        assert_eq!(d.at(-0.1), 0.0);
        let empty = ParticleSystem::new(n, vec![], 0.0, 0).unwrap();
        assert_eq!(density_estimate(&empty, 3).total_mass(), 0.0);
        assert_eq!(density_estimate(&empty, 3).cells().count(), 0);
        assert!(ParticleSystem::new(n, vec![f64::NAN], 0.0, 0).is_err());
    }

    #[test]
    fn heat_flow_recovered_by_density() {
        // γ ≡ 0, b ≡ 0: particles are independent Brownian motions
        let (b, g) = constant_fields(0.0, 0.0);
        let u0 = ScalarField::gaussian(grid(), 0.0, 0.25, 1.0);
        let t = 0.2;
        let heat = heat_convolve(&u0, t).unwrap();
        let level = 2;
        let reps = 25;
        let mut pooled = std::collections::BTreeMap::<i64, f64>::new();
        for r in 0..reps {
            let s = simulate_particles(&u0, &b, &g, &opts(10_000, t, t, r)).unwrap();
            let d = density_estimate(&s[1], level);
            for (edge, v) in d.cells() {
                *pooled.entry(d.cell_index(edge + 1e-12)).or_default() += v / reps as f64;
            }
        }
        let w = 0.25;
        let mut worst: f64 = 0.0;
        for j in -12..12i64 {
            // cell average of the heat flow from the grid values
            let (lo, hi) = (j as f64 * w, (j + 1) as f64 * w);
            let pts: Vec<f64> = grid().points().filter(|x| *x >= lo - 1e-12 && *x <= hi + 1e-12).collect();
            let vals: Vec<f64> = pts.iter().map(|&x| heat.values()[grid().index_of(x).unwrap()]).collect();
            let mut avg = 0.0;
            for k in 0..vals.len() - 1 {
                avg += 0.5 * (vals[k] + vals[k + 1]) * (pts[k + 1] - pts[k]);
            }
            avg /= w;
            worst = worst.max((pooled.get(&j).copied().unwrap_or(0.0) - avg).abs());
        }
        assert!(worst <= 2e-2, "{worst}");
    }

    #[test]
    fn snapshot_csv_format() {
        let ps = ParticleSystem::new(4, vec![0.5, -1.0], 0.25, 0).unwrap();
        let mut buf = Vec::new();
        write_snapshots_csv(&[ps], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,position,mass\n0.25,0.5,0.25\n0.25,-1,0.25\n");
    }

    #[test]
    fn determinism_per_stream() {
        let (b, g) = constant_fields(0.2, 1.0);
        let u0 = ScalarField::gaussian(grid(), 0.0, 0.25, 0.5);
        let a = simulate_particles(&u0, &b, &g, &opts(300, 0.2, 0.1, 4)).unwrap();
        let c = simulate_particles(&u0, &b, &g, &opts(300, 0.2, 0.1, 4)).unwrap();
        let d = simulate_particles(&u0, &b, &g, &opts(300, 0.2, 0.1, 5)).unwrap();
        assert_eq!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn cross_check_constant_fields() {
        let u0 = ScalarField::gaussian(grid(), 0.0, 0.25, 0.5);
        let c = catalog(CatalogId::Sbm);
        let o = CrossCheckOptions {
            replicas: 200,
            dt_max: 1e-3,
            seed: 3,
        };
        let rep = cross_validate_slab(&u0, &c, 8, 1000, 0.1, &o).unwrap();
        assert!(rep.passed, "{rep:#?}");
        assert!(rep.inactive_drift_cells.is_empty());
        let one = &rep.rows[0];
        assert!((one.mean_particle - 0.5).abs() < 3.0 * (0.05f64 / 200.0).sqrt() + 1e-3);
        assert!(cross_validate_slab(&u0, &c, 8, 1000, 0.2, &o).is_err());
    }

    #[test]
    fn cross_check_zero_initial() {
        let z = ScalarField::zeros(grid());
        let o = CrossCheckOptions {
            replicas: 4,
            dt_max: 1e-3,
            seed: 0,
        };
        let rep = cross_validate_slab(&z, &catalog(CatalogId::Kpz), 4, 1000, 0.1, &o).unwrap();
        assert!(rep.passed);
        for r in &rep.rows {
            assert_eq!((r.mean_slab, r.mean_particle, r.var_slab, r.var_particle), (0.0, 0.0, 0.0, 0.0));
        }
    }

    proptest! {
        #[test]
        fn dyadic_mass_is_count_over_n(xs in prop::collection::vec(-4.0..4.0f64, 0..200), n in 100usize..5000) {
            let ps = ParticleSystem::new(n, xs.clone(), 0.0, 0).unwrap();
            for level in 0..=6 {
                let d = density_estimate(&ps, level);
                prop_assert_eq!(d.total_mass(), xs.len() as f64 / n as f64);
                let from_cells: f64 = d.cells().map(|(_, v)| v * d.cell_width()).sum();
                prop_assert!((from_cells - d.total_mass()).abs() <= 1e-12);
            }
        }

        #[test]
        fn offspring_probabilities_valid(b in -50.0..50.0f64, g in 0.01..5.0f64, n in 100usize..10_000) {
            let p_two = 0.5 + b / (2.0 * n as f64 * g);
            let valid = b.abs() <= n as f64 * g;
            prop_assert_eq!(valid, (0.0..=1.0).contains(&p_two));
        }
    }
}
