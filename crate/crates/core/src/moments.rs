//! Quantitative estimates: weighted moments, the singular-kernel Gronwall inequality, the
//! heat-kernel difference functional and tightness (Hölder) exponents.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::semigroup::feynman_kac_const;
use crate::sim::TrajectoryField;
use crate::stats::{linear_fit, Accumulator};

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

// ---------------------------------------------------------------------------------------------
// weighted moments

/// `∫ e^{λ|x|} u(x)^q dx` (trapezoid).
pub fn weighted_moment(grid: &GridSpec, u: &[f64], lambda: f64, q: f64) -> f64 {
    let n = grid.n_cells();
    let mut s = 0.0;
    for (j, &v) in u.iter().enumerate() {
        if v > 0.0 {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            s += w * (lambda * grid.x(j).abs()).exp() * v.powf(q);
        }
    }
    s * grid.dx()
}

/// Per-frame weighted moments of one trajectory.
pub fn moment_trace(traj: &TrajectoryField, lambda: f64, q: f64) -> Vec<f64> {
    (0..traj.n_frames())
        .map(|k| weighted_moment(traj.grid(), traj.frame(k), lambda, q))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub lambda: f64,
    pub q: f64,
    pub t: f64,
    /// `ν̂ = sup_{s ≤ t} mean_r ∫e^{λ|x|}u_r(s,x)^q dx`.
    pub estimate: f64,
    /// Standard error at the maximising time.
    pub se: f64,
    pub trace_times: Vec<f64>,
    pub trace_mean: Vec<f64>,
    pub trace_se: Vec<f64>,
}

/// Monte Carlo `ν̂(λ, q, t)` from per-replica moment traces recorded at `times`.
pub fn nu_estimate(
    traces: &[Vec<f64>],
    times: &[f64],
    lambda: f64,
    q: f64,
    t: f64,
) -> Result<MomentReport> {
    if traces.is_empty() {
        return Err(Error::InsufficientData("no replicas".into()));
    }
    if !(lambda > 0.0 && q > 0.0) {
        return Err(Error::Domain(format!("need λ > 0 and q > 0, got λ = {lambda}, q = {q}")));
    }
    if traces.iter().any(|tr| tr.len() != times.len()) {
        return Err(Error::Config("moment traces and times differ in length".into()));
    }
    let upto = times.iter().take_while(|&&s| s <= t * (1.0 + 1e-12)).count();
    if upto == 0 {
        return Err(Error::OffGrid {
            what: format!("no recorded time ≤ {t}"),
        });
    }
    let mut report = MomentReport {
        lambda,
        q,
        t,
        estimate: 0.0,
        se: 0.0,
        trace_times: times[..upto].to_vec(),
        trace_mean: Vec::with_capacity(upto),
        trace_se: Vec::with_capacity(upto),
    };
    for k in 0..upto {
        let acc: Accumulator = traces.iter().map(|tr| tr[k]).collect();
        let se = if traces.len() > 1 { acc.std_err() } else { 0.0 };
        report.trace_mean.push(acc.mean());
        report.trace_se.push(se);
        if k == 0 || acc.mean() > report.estimate {
            report.estimate = acc.mean();
            report.se = se;
        }
    }
    Ok(report)
}

/// `P_s e^{λ|·|}(y)` in closed form.
pub fn heat_of_exp_abs(s: f64, lambda: f64, y: f64) -> f64 {
    if s <= 0.0 {
        return (lambda * y.abs()).exp();
    }
    let r = s.sqrt();
    (0.5 * lambda * lambda * s).exp()
        * ((lambda * y).exp() * normal_cdf((y + lambda * s) / r)
            + (-lambda * y).exp() * normal_cdf((-y + lambda * s) / r))
}

/// The first-moment bound chain
///
/// ```text
/// E∫e^{λ|x|}u_s ≤ e^{L_b s}∫P_s e^{λ|·|}(y)u₀(y)dy ≤ c(t,λ)∫e^{λ|y|}u₀(y)dy,  s ≤ t,
/// ```
///
/// with `c(t,λ) = sup_{s≤t} sup_y e^{L_b s}P_s e^{λ|·|}(y)/e^{λ|y|}` evaluated on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundChain {
    pub semigroup_bound: f64,
    pub c_hat: f64,
    pub weighted_initial: f64,
    pub chain_bound: f64,
}

pub fn bound_chain(u0: &ScalarField, lambda: f64, t: f64, l_b: f64, n_times: usize) -> Result<BoundChain> {
    if !(t >= 0.0) || n_times == 0 {
        return Err(Error::Domain(format!("invalid horizon {t}")));
    }
    let grid = *u0.grid();
    let weighted_initial = weighted_moment(&grid, u0.values(), lambda, 1.0);
    let mut semigroup_bound = 0.0f64;
    let mut c_hat = 1.0f64;
    for k in 0..=n_times {
        let s = t * k as f64 / n_times as f64;
        let growth = (l_b * s).exp();
        let pe: Vec<f64> = grid.points().map(|y| growth * heat_of_exp_abs(s, lambda, y)).collect();
        for (j, v) in pe.iter().enumerate() {
            c_hat = c_hat.max(v / (lambda * grid.x(j).abs()).exp());
        }
        let f = ScalarField::new(grid, pe)?;
        semigroup_bound = semigroup_bound.max(f.inner(u0));
    }
    Ok(BoundChain {
        semigroup_bound,
        c_hat,
        weighted_initial,
        chain_bound: c_hat * weighted_initial,
    })
}

// ---------------------------------------------------------------------------------------------
// singular Gronwall

/// Product-integration discretisation of `(Kg)(t) = ∫₀ᵗ (t−s)^{-1/2} g(s) ds`, exact for
/// piecewise-linear `g`, on the graded mesh `t_i = T(i/N)²`.
#[derive(Debug, Clone)]
pub struct SingularKernel {
    times: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl SingularKernel {
    pub fn graded(horizon: f64, n: usize) -> Self {
        let times: Vec<f64> = (0..=n)
            .map(|i| horizon * (i as f64 / n as f64).powi(2))
            .collect();
        Self::on_mesh(times)
    }

    pub fn on_mesh(times: Vec<f64>) -> Self {
        let rows = (0..times.len())
            .map(|i| {
                let t = times[i];
                let mut w = vec![0.0; i + 1];
                for j in 0..i {
                    let (a, b) = (times[j], times[j + 1]);
                    let h = b - a;
                    let (ra, rb) = ((t - a).sqrt(), (t - b).max(0.0).sqrt());
                    let i0 = 2.0 * (ra - rb);
                    let i1 = 2.0 / 3.0 * (ra.powi(3) - rb.powi(3));
                    // ∫_a^b (t−s)^{-1/2}·(b−s)/h and ·(s−a)/h
                    w[j] += (i1 - (t - b) * i0) / h;
                    w[j + 1] += ((t - a) * i0 - i1) / h;
                }
                w
            })
            .collect();
        Self { times, rows }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|w| w.iter().zip(g).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `G(g) = c(f + Kg)`.
    pub fn gronwall_operator(&self, f: &[f64], c: f64, g: &[f64]) -> Vec<f64> {
        self.apply(g)
            .into_iter()
            .zip(f)
            .map(|(k, fv)| c * (fv + k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallResult {
    pub times: Vec<f64>,
    pub f: Vec<f64>,
    /// Maximal solution `g*` (Richardson-extrapolated over three mesh levels).
    pub g_star: Vec<f64>,
    /// `f(t)·exp(4c√t)`.
    pub bound: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change per Picard iteration on the coarse mesh.
    pub trace: Vec<f64>,
    pub passed: bool,
}

pub const PICARD_TOL: f64 = 1e-10;
pub const PICARD_MAX_ITER: usize = 200;

/// Picard iteration from `g = 0`; returns the iterate, the iteration count and the trace.
fn picard(kernel: &SingularKernel, f: &[f64], c: f64) -> (Vec<f64>, usize, Vec<f64>) {
    let mut g = vec![0.0; f.len()];
    let mut trace = Vec::new();
    for it in 1..=PICARD_MAX_ITER {
        let next = kernel.gronwall_operator(f, c, &g);
        let change = next
            .iter()
            .zip(&g)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        g = next;
        trace.push(change);
        if change < PICARD_TOL {
            return (g, it, trace);
        }
    }
    (g, PICARD_MAX_ITER, trace)
}

/// Maximal solution of `g = c(f + ∫₀ᵗ(t−s)^{-1/2}g(s)ds)` on `[0, T]` and the check
/// `g*(t) ≤ f(t)exp(4c√t)` at every mesh time.
///
/// `n` is the coarse mesh size. The fixed point is also computed on the `2n` and `4n` meshes
/// (which contain the coarse nodes) and the three are combined by two Richardson steps, for
/// the `h²` and `h^{5/2}` error terms of product integration against `(t−s)^{-1/2}`.
pub fn gronwall_fixed_point(
    f: &dyn Fn(f64) -> f64,
    c: f64,
    horizon: f64,
    n: usize,
) -> Result<GronwallResult> {
    if !(c >= 0.0) || !(horizon > 0.0) || n < 2 {
        return Err(Error::Domain(format!(
            "need c ≥ 0, T > 0 and n ≥ 2, got c = {c}, T = {horizon}, n = {n}"
        )));
    }
    let coarse = SingularKernel::graded(horizon, n);
    let levels: Vec<(Vec<f64>, usize, Vec<f64>)> = [1, 2, 4]
        .into_iter()
        .map(|m| {
            let k = SingularKernel::graded(horizon, m * n);
            let fv: Vec<f64> = k.times().iter().map(|&t| f(t)).collect();
            for w in fv.windows(2) {
                if !(w[0] >= 0.0) || w[1] < w[0] {
                    return Err(Error::Domain("f must be nonnegative and nondecreasing".into()));
                }
            }
            Ok(picard(&k, &fv, c))
        })
        .collect::<Result<_>>()?;
    let fc: Vec<f64> = coarse.times().iter().map(|&t| f(t)).collect();
    let converged = levels.iter().all(|l| l.1 < PICARD_MAX_ITER || l.2.last().is_some_and(|&d| d < PICARD_TOL));
    let (g1, g2, g4) = (&levels[0].0, &levels[1].0, &levels[2].0);
    let r = 2f64.powf(2.5);
    let g_star: Vec<f64> = (0..=n)
        .map(|i| {
            let lo = (4.0 * g2[2 * i] - g1[i]) / 3.0;
            let hi = (4.0 * g4[4 * i] - g2[2 * i]) / 3.0;
            (r * hi - lo) / (r - 1.0)
        })
        .collect();
    let iterations = levels.iter().map(|l| l.1).max().unwrap_or(0);
    let trace = levels[0].2.clone();
    let bound: Vec<f64> = coarse
        .times()
        .iter()
        .zip(&fc)
        .map(|(&t, &fv)| fv * (4.0 * c * t.sqrt()).exp())
        .collect();
    let passed = g_star
        .iter()
        .zip(&bound)
        .all(|(g, b)| *g <= *b * (1.0 + 1e-12) + 1e-15);
    Ok(GronwallResult {
        times: coarse.times().to_vec(),
        f: fc,
        g_star,
        bound,
        iterations,
        converged,
        trace,
        passed,
    })
}

// ---------------------------------------------------------------------------------------------
// heat-kernel difference functional

/// `∫ N(y; m, v) e^{−λ|y|} dy`.
fn gauss_exp_abs(m: f64, v: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 1.0;
    }
    let r = v.sqrt();
    let g = 0.5 * lambda * lambda * v;
    (g - lambda * m).exp() * normal_cdf((m - lambda * v) / r)
        + (g + lambda * m).exp() * normal_cdf((-m - lambda * v) / r)
}

/// `∫ p_a(y − x) p_b(y − x') e^{−λ|y|} dy` for `a, b > 0`.
fn kernel_product(a: f64, x: f64, b: f64, xp: f64, lambda: f64) -> f64 {
    let s = a + b;
    let d = x - xp;
    let pref = (-d * d / (2.0 * s)).exp() / (2.0 * PI * s).sqrt();
    let m = (b * x + a * xp) / s;
    let v = a * b / s;
    pref * gauss_exp_abs(m, v, lambda)
}

/// Adaptive Gauss–Kronrod (7, 15) quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const XK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_728_8,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];
    fn gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WK[7] * fc;
        let mut g = WG[3] * fc;
        for i in 0..7 {
            let dx = h * XK[i];
            let s = f(c - dx) + f(c + dx);
            k += WK[i] * s;
            if i % 2 == 1 {
                g += WG[i / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (k, err) = gk(f, a, b);
        if err <= tol || depth == 0 || (b - a).abs() < 1e-15 {
            return k;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    rec(f, a, b, tol, 50)
}

/// Absolute tolerance of [`kernel_diff_functional`].
const KERNEL_QUAD_TOL: f64 = 1e-11;

/// `∫₀ᵗ ∫ (p_{t−s}(y−x) − p_{t′−s}(y−x′))² e^{−λ|y|} dy ds` for `0 < t ≤ t′`.
///
/// The y-integral is closed form; the s-integral substitutes `s = t − w²`, which removes the
/// `(t−s)^{-1/2}` endpoint singularity, and is evaluated adaptively.
pub fn kernel_diff_functional(t: f64, tp: f64, x: f64, xp: f64, lambda: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    if tp < t {
        return Err(Error::Domain(format!("need t ≤ t′, got t = {t}, t′ = {tp}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("λ must be ≥ 0, got {lambda}")));
    }
    if t == tp && x == xp {
        return Ok(0.0);
    }
    let integrand = |w: f64| {
        if w <= 0.0 {
            // limit w → 0: 2w·p_{2w²}(0) → 1/√π for each squared kernel that degenerates
            let same_b = if tp > t { 0.0 } else { (-lambda * xp.abs()).exp() };
            return ((-lambda * x.abs()).exp() + same_b) / PI.sqrt();
        }
        let a = w * w;
        let b = tp - t + a;
        let same_a = kernel_product(a, x, a, x, lambda);
        let same_b = kernel_product(b, xp, b, xp, lambda);
        let cross = kernel_product(a, x, b, xp, lambda);
        2.0 * w * (same_a + same_b - 2.0 * cross)
    };
    let v = integrate(&integrand, 0.0, t.sqrt(), KERNEL_QUAD_TOL);
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSweepSpec {
    /// Number of base times `t` in `(0, T]`.
    pub n_t: usize,
    /// Number of time offsets `t′ − t` (zero plus a geometric ladder).
    pub n_dt: usize,
    /// Number of base points `x` in `[−x_range, x_range]`.
    pub n_x: usize,
    /// Number of space offsets `x′ − x` (zero plus a geometric ladder down from 1).
    pub n_dx: usize,
    pub x_range: f64,
}

impl Default for KernelSweepSpec {
    fn default() -> Self {
        Self {
            n_t: 10,
            n_dt: 10,
            n_x: 10,
            n_dx: 10,
            x_range: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSweepPoint {
    pub t: f64,
    pub tp: f64,
    pub x: f64,
    pub xp: f64,
    pub lambda: f64,
    pub functional: f64,
    pub ratio: f64,
    /// True when every nonzero offset is on one of the two finest ladder levels.
    pub finest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSweepReport {
    pub horizon: f64,
    pub lambda: f64,
    pub c_hat: f64,
    pub c_coarse: f64,
    pub finest_max: f64,
    pub passed: bool,
    pub points: Vec<KernelSweepPoint>,
}

impl KernelSweepReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,t_prime,x,x_prime,lambda,functional,ratio")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                p.t, p.tp, p.x, p.xp, p.lambda, p.functional, p.ratio
            )?;
        }
        Ok(())
    }
}

/// Ratio `R = F / ((|x−x′| + |t′−t|^{1/2}) e^{−λ|x|})` over a sweep with `|x − x′| ≤ 1`,
/// `0 < t ≤ t′ ≤ T`. Identical pairs are excluded. The verdict requires the finest pairs to
/// stay within twice the maximum over the coarse pairs.
pub fn kernel_lemma_sweep(horizon: f64, lambda: f64, spec: &KernelSweepSpec) -> Result<KernelSweepReport> {
    if !(horizon > 0.0 && lambda > 0.0) {
        return Err(Error::Domain(format!("need T, λ > 0, got T = {horizon}, λ = {lambda}")));
    }
    if spec.n_t == 0 || spec.n_x == 0 || spec.n_dt < 3 || spec.n_dx < 3 {
        return Err(Error::Config("kernel sweep needs at least 3 offset levels".into()));
    }
    let ts: Vec<f64> = (1..=spec.n_t)
        .map(|i| horizon * i as f64 / spec.n_t as f64)
        .collect();
    // level 0 is the zero offset, level k ≥ 1 is base·2^{1−k}
    let dt_ladder: Vec<f64> = (0..spec.n_dt)
        .map(|k| if k == 0 { 0.0 } else { 0.5 * horizon * 0.5f64.powi(k as i32 - 1) })
        .collect();
    let dx_ladder: Vec<f64> = (0..spec.n_dx)
        .map(|k| if k == 0 { 0.0 } else { 0.5f64.powi(k as i32 - 1) })
        .collect();
    let xs: Vec<f64> = (0..spec.n_x)
        .map(|i| {
            if spec.n_x == 1 {
                0.0
            } else {
                -spec.x_range + 2.0 * spec.x_range * i as f64 / (spec.n_x - 1) as f64
            }
        })
        .collect();
    let fine_dt = spec.n_dt - 2;
    let fine_dx = spec.n_dx - 2;
    let mut tuples = Vec::new();
    for &t in &ts {
        for (it, &dt) in dt_ladder.iter().enumerate() {
            let tp = t + dt;
            if tp > horizon * (1.0 + 1e-12) {
                continue;
            }
            for &x in &xs {
                for (ix, &dx) in dx_ladder.iter().enumerate() {
                    if it == 0 && ix == 0 {
                        continue;
                    }
                    let finest = (it == 0 || it >= fine_dt) && (ix == 0 || ix >= fine_dx);
                    tuples.push((t, tp.min(horizon), x, x + dx, finest));
                }
            }
        }
    }
    let points: Vec<KernelSweepPoint> = tuples
        .par_iter()
        .map(|&(t, tp, x, xp, finest)| {
            let functional = kernel_diff_functional(t, tp, x, xp, lambda)?;
            let scale = ((xp - x).abs() + (tp - t).sqrt()) * (-lambda * x.abs()).exp();
            Ok(KernelSweepPoint {
                t,
                tp,
                x,
                xp,
                lambda,
                functional,
                ratio: functional / scale,
                finest,
            })
        })
        .collect::<Result<_>>()?;
    let max_of = |pred: &dyn Fn(&KernelSweepPoint) -> bool| {
        points
            .iter()
            .filter(|p| pred(p))
            .map(|p| p.ratio)
            .fold(0.0, f64::max)
    };
    let c_hat = max_of(&|_| true);
    let c_coarse = max_of(&|p| !p.finest);
    let finest_max = max_of(&|p| p.finest);
    Ok(KernelSweepReport {
        horizon,
        lambda,
        c_hat,
        c_coarse,
        finest_max,
        passed: c_hat.is_finite() && finest_max <= 2.0 * c_coarse,
        points,
    })
}

// ---------------------------------------------------------------------------------------------
// Hölder exponents

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderMode {
    Time,
    Space,
}

impl HolderMode {
    /// Verdict band for the exponent.
    pub fn band(&self) -> (f64, f64) {
        match self {
            HolderMode::Time => (0.15, 0.35),
            HolderMode::Space => (0.35, 0.65),
        }
    }
}

/// Increment design for `E|û(t,x) − û(t′,x′)|^{2q}` with `û = u − P_t^{L_b}u₀`.
#[derive(Debug, Clone)]
pub struct HolderProbe {
    mode: HolderMode,
    q: f64,
    /// Lags in frames (time mode) or cells (space mode).
    lags: Vec<usize>,
    base_frames: Vec<usize>,
    base_cells: Vec<usize>,
    frame_dt: f64,
    dx: f64,
    /// `P_t^{L_b}u₀` for every frame.
    reference: Vec<Vec<f64>>,
}

impl HolderProbe {
    /// Builds the probe for trajectories shaped like `template`.
    ///
    /// Both modes average over five base frames from `t0` on (time mode stops early enough
    /// for the largest lag). Base points cover `[−x_half, x_half]`.
    pub fn new(
        template: &TrajectoryField,
        mode: HolderMode,
        q: f64,
        l_b: f64,
        t0: f64,
        x_half: f64,
        lags: Vec<usize>,
    ) -> Result<Self> {
        if lags.len() < 3 {
            return Err(Error::InsufficientData("need at least three lags".into()));
        }
        let (lo, hi) = (*lags.iter().min().unwrap(), *lags.iter().max().unwrap());
        if lo == 0 || (hi as f64) < 10.0 * lo as f64 * (1.0 - 1e-12) {
            return Err(Error::InsufficientData(format!(
                "lags {lo}..{hi} must be positive and span at least a decade"
            )));
        }
        let grid = *template.grid();
        let u0 = template.frame_field(0);
        let n_frames = template.n_frames();
        let reference = (0..n_frames)
            .map(|k| Ok(feynman_kac_const(&u0, template.frame_time(k), l_b)?.into_values()))
            .collect::<Result<Vec<_>>>()?;
        let k0 = template.frame_at(t0).ok_or_else(|| Error::OffGrid {
            what: format!("base time {t0}"),
        })?;
        let centre = grid.n_cells() / 2;
        let half = (x_half / grid.dx()).round() as usize;
        let (base_cells, base_frames) = match mode {
            HolderMode::Time => {
                if k0 + hi >= n_frames {
                    return Err(Error::InsufficientData(format!(
                        "largest lag {hi} runs past the last frame"
                    )));
                }
                let step = (n_frames - 1 - hi - k0) / 4;
                let frames: Vec<usize> = (0..=4).map(|i| k0 + i * step).collect();
                ((centre - half..=centre + half).collect(), frames)
            }
            HolderMode::Space => {
                if centre + half + hi > grid.n_cells() || half + hi > centre {
                    return Err(Error::InsufficientData("largest lag leaves the grid".into()));
                }
                let step = (n_frames - 1 - k0).max(1) / 4;
                let frames: Vec<usize> = (0..=4).map(|i| k0 + i * step).filter(|&k| k < n_frames).collect();
                ((centre - half..=centre + half).collect(), frames)
            }
        };
        Ok(Self {
            mode,
            q,
            lags,
            base_frames,
            base_cells,
            frame_dt: template.time_grid().dt() * template.record_every() as f64,
            dx: grid.dx(),
            reference,
        })
    }

    pub fn mode(&self) -> HolderMode {
        self.mode
    }

    /// Lags in physical units.
    pub fn lag_values(&self) -> Vec<f64> {
        let unit = match self.mode {
            HolderMode::Time => self.frame_dt,
            HolderMode::Space => self.dx,
        };
        self.lags.iter().map(|&l| l as f64 * unit).collect()
    }

    /// Per-lag mean of `|Δû|^{2q}` over the base points of one trajectory.
    pub fn observe(&self, traj: &TrajectoryField) -> Vec<f64> {
        let uhat = |k: usize, j: usize| traj.frame(k)[j] - self.reference[k][j];
        self.lags
            .iter()
            .map(|&lag| {
                let mut s = 0.0;
                let mut n = 0.0;
                for &k in &self.base_frames {
                    for &j in &self.base_cells {
                        let d = match self.mode {
                            HolderMode::Time => uhat(k + lag, j) - uhat(k, j),
                            HolderMode::Space => uhat(k, j + lag) - uhat(k, j),
                        };
                        s += d.abs().powf(2.0 * self.q);
                        n += 1.0;
                    }
                }
                s / n
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub mode: HolderMode,
    pub q: f64,
    /// Fitted slope of `log E|Δû|^{2q}` against `log lag`.
    pub slope: f64,
    pub slope_se: f64,
    /// `slope / 2q`.
    pub exponent: f64,
    pub lags: Vec<f64>,
    pub moments: Vec<f64>,
    pub in_band: bool,
}

/// Regression estimate of the Hölder exponent from per-replica [`HolderProbe::observe`] rows.
pub fn holder_exponent(observations: &[Vec<f64>], probe: &HolderProbe) -> Result<HolderEstimate> {
    if observations.is_empty() {
        return Err(Error::InsufficientData("no replicas".into()));
    }
    let lags = probe.lag_values();
    let moments: Vec<f64> = (0..lags.len())
        .map(|i| observations.iter().map(|o| o[i]).sum::<f64>() / observations.len() as f64)
        .collect();
    if moments.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InsufficientData("increments vanish at some lag".into()));
    }
    let lx: Vec<f64> = lags.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = moments.iter().map(|v| v.ln()).collect();
    let (slope, _, slope_se) = linear_fit(&lx, &ly);
    let exponent = slope / (2.0 * probe.q);
    let (lo, hi) = probe.mode.band();
    Ok(HolderEstimate {
        mode: probe.mode,
        q: probe.q,
        slope,
        slope_se,
        exponent,
        lags,
        moments,
        in_band: exponent >= lo && exponent <= hi,
    })
}
