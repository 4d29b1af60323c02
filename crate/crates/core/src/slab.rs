//! Slab freezing: on `[kδ, (k+1)δ)` with `δ = 1/n` the drift factor and branching rate are
//! evaluated at the slab-start profile `u(kδ, ·)`, so each slab evolves as a super-Brownian
//! motion with frozen `(b, γ)` fields.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::field::{rap_norm, ScalarField, TimeGrid};
use crate::sim::{self, Scheme, SimOptions, TrajectoryField};

/// Relative slack when checking that a time is an integer multiple of a step.
const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabSchedule {
    n: usize,
}

impl SlabSchedule {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("slab count n must be at least 1".into()));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Start of the slab containing `t`.
    pub fn slab_start(&self, t: f64) -> f64 {
        let k = (t * self.n as f64 * (1.0 + ALIGN_TOL)).floor();
        k / self.n as f64
    }

    /// Slab boundaries `kδ` in `[0, horizon]`.
    pub fn boundaries(&self, horizon: f64) -> Vec<f64> {
        let last = (horizon * self.n as f64 * (1.0 + ALIGN_TOL)).floor() as usize;
        (0..=last).map(|k| k as f64 / self.n as f64).collect()
    }

    /// Number of time steps per slab, if `dt` divides `δ` exactly.
    pub fn steps_per_slab(&self, time: &TimeGrid) -> Result<usize> {
        let ratio = self.delta() / time.dt();
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > ALIGN_TOL * ratio {
            return Err(Error::Config(format!(
                "dt = {} does not divide the slab width 1/{}",
                time.dt(),
                self.n
            )));
        }
        Ok(k as usize)
    }

    /// Largest `dt' ≤ dt_max` that divides both `δ` and the horizon.
    pub fn align(&self, horizon: f64, dt_max: f64) -> Result<TimeGrid> {
        if !(dt_max > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt_max}")));
        }
        let first = (self.delta() / dt_max * (1.0 - ALIGN_TOL)).ceil().max(1.0) as usize;
        for k in first..first.saturating_mul(64).max(first + 64) {
            let steps = horizon * (self.n * k) as f64;
            let m = steps.round();
            if m >= 1.0 && (steps - m).abs() <= ALIGN_TOL * steps {
                return TimeGrid::new(horizon, m as usize);
            }
        }
        Err(Error::Config(format!(
            "no time step ≤ {dt_max} divides both 1/{} and T = {horizon}",
            self.n
        )))
    }
}

/// `uⁿ(t, ·) = u(⌊t/δ⌋δ, ·)`.
pub fn frozen_field(traj: &TrajectoryField, t: f64, sched: &SlabSchedule) -> Result<ScalarField> {
    let horizon = traj.time_grid().horizon();
    if !(0.0..=horizon * (1.0 + ALIGN_TOL)).contains(&t) {
        return Err(Error::OffGrid {
            what: format!("t = {t} outside [0, {horizon}]"),
        });
    }
    let start = sched.slab_start(t);
    let k = traj.frame_at(start).ok_or_else(|| Error::OffGrid {
        what: format!("slab start {start} not among the recorded frames"),
    })?;
    Ok(traj.frame_field(k))
}

/// Runs the slab-frozen scheme.
///
/// For `r < ½` the raw γ is unbounded near zero; pass [`CoefficientSet::regularized`] instead.
pub fn simulate_slab(
    u0: &ScalarField,
    c: &CoefficientSet,
    sched: &SlabSchedule,
    time: TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<TrajectoryField> {
    if c.params().r < 0.5 {
        return Err(Error::Config(format!(
            "coefficients {} have r = {} < 1/2; the frozen branching rate is unbounded, \
             use the regularized σ_n",
            c.label(),
            c.params().r
        )));
    }
    let k = sched.steps_per_slab(&time)?;
    sim::run(u0, c, time, Scheme::Slab(sched.n()), Some(k), seed, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingTracker {
    pub level: f64,
    pub lambda: f64,
    /// `T(ℓ)`: first recorded time with `|u_t|_λ' > ℓ`.
    pub hit: Option<f64>,
}

pub fn track_stopping(traj: &TrajectoryField, level: f64, lambda: f64) -> Result<StoppingTracker> {
    let mut hit = None;
    if level.is_finite() {
        for k in 0..traj.n_frames() {
            if rap_norm(&traj.frame_field(k), lambda)? > level {
                hit = Some(traj.frame_time(k));
                break;
            }
        }
    }
    Ok(StoppingTracker { level, lambda, hit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{catalog, catalog_with, CatalogId, FamilyParams};
    use crate::field::GridSpec;
    use crate::sim::{simulate_direct, NoiseMode};
    use proptest::prelude::*;

    fn setup() -> (ScalarField, TimeGrid) {
        let g = GridSpec::new(5.0, 200).unwrap();
        (ScalarField::gaussian(g, 0.0, 0.25, 1.0), TimeGrid::new(1.0, 1000).unwrap())
    }

    #[test]
    fn schedule_alignment() {
        let s = SlabSchedule::new(4).unwrap();
        assert_eq!(s.delta(), 0.25);
        assert_eq!(s.steps_per_slab(&TimeGrid::new(1.0, 1000).unwrap()).unwrap(), 250);
        assert!(s.steps_per_slab(&TimeGrid::new(1.0, 1001).unwrap()).is_err());
        let t = SlabSchedule::new(3).unwrap().align(0.5, 2e-4).unwrap();
        assert!(t.dt() <= 2e-4);
        assert!(SlabSchedule::new(3).unwrap().steps_per_slab(&t).is_ok());
        assert!(SlabSchedule::new(0).is_err());
        assert_eq!(s.boundaries(0.6), vec![0.0, 0.25, 0.5]);
    }

    #[test]
    fn frozen_field_examples() {
        let (u0, time) = setup();
        let c = catalog(CatalogId::Kpz);
        let s = SlabSchedule::new(4).unwrap();
        let traj = simulate_slab(&u0, &c, &s, time, 1, &SimOptions::default()).unwrap();
        assert_eq!(frozen_field(&traj, 0.1, &s).unwrap().values(), traj.frame(0));
        let half = traj.frame_at(0.5).unwrap();
        assert_eq!(frozen_field(&traj, 0.6, &s).unwrap().values(), traj.frame(half));
        assert_eq!(frozen_field(&traj, 0.5, &s).unwrap().values(), traj.frame(half));
        assert!(frozen_field(&traj, 1.5, &s).is_err());
    }

    #[test]
    fn constant_coefficients_make_slab_equal_direct() {
        let (u0, time) = setup();
        let c = catalog_with(CatalogId::Sbm, &FamilyParams {
            beta: 0.3,
            ..Default::default()
        })
        .unwrap();
        for mode in [NoiseMode::Feller, NoiseMode::Gaussian] {
            let opts = SimOptions {
                noise: mode,
                stream: 2,
                ..Default::default()
            };
            let d = simulate_direct(&u0, &c, time, 5, &opts).unwrap();
            for n in [1, 4, 8] {
                let s = SlabSchedule::new(n).unwrap();
                let sl = simulate_slab(&u0, &c, &s, time, 5, &opts).unwrap();
                for k in 0..d.n_frames() {
                    assert_eq!(d.frame(k), sl.frame(k));
                }
            }
        }
    }

    #[test]
    fn zero_initial_gives_zero_for_every_n() {
        let (u0, time) = setup();
        let z = ScalarField::zeros(*u0.grid());
        for n in [1, 2, 8] {
            let traj = simulate_slab(
                &z,
                &catalog(CatalogId::Brwre),
                &SlabSchedule::new(n).unwrap(),
                time,
                0,
                &SimOptions::default(),
            )
            .unwrap();
            for k in 0..traj.n_frames() {
                assert!(traj.frame(k).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn small_r_needs_regularization() {
        let (u0, time) = setup();
        let c = CoefficientSet::from_expressions(
            "0",
            "u^0.3 + u",
            crate::coefficients::GrowthParams {
                theta: 1.0,
                r: 0.3,
                upper_b: 0.0,
                lower_b: 0.0,
                l_sigma: 1.0,
            },
        )
        .unwrap();
        let s = SlabSchedule::new(8).unwrap();
        assert!(simulate_slab(&u0, &c, &s, time, 0, &SimOptions::default()).is_err());
        let reg = c.regularized(8).unwrap();
        let traj = simulate_slab(&u0, &reg, &s, time, 0, &SimOptions::default()).unwrap();
        assert!(traj.last_frame().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn amplitude_identity_at_slab_boundaries() {
        // √(γ(uⁿ)·u) = σ(u) when uⁿ = u
        let c = catalog(CatalogId::Brwre);
        for &u in &[1e-6, 0.01, 0.5, 1.0, 7.0, 100.0] {
            let amp = (c.gamma(u).unwrap() * u).sqrt();
            assert!((amp - c.sigma(u)).abs() <= 1e-12 * c.sigma(u));
        }
    }

    #[test]
    fn stopping_time_matches_scan() {
        let (u0, time) = setup();
        let traj = simulate_direct(
            &u0,
            &catalog(CatalogId::Kpz),
            time,
            3,
            &SimOptions {
                record_every: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let lambda = 0.5;
        assert_eq!(track_stopping(&traj, f64::INFINITY, lambda).unwrap().hit, None);
        let n0 = rap_norm(&traj.frame_field(0), lambda).unwrap();
        assert_eq!(track_stopping(&traj, 0.5 * n0, lambda).unwrap().hit, Some(0.0));
        let norms: Vec<f64> = (0..traj.n_frames())
            .map(|k| rap_norm(&traj.frame_field(k), lambda).unwrap())
            .collect();
        let running_max = norms.iter().cloned().fold(0.0, f64::max);
        let mut levels: Vec<f64> = (1..10).map(|i| running_max * i as f64 / 10.0).collect();
        levels.push(running_max * 2.0);
        let mut prev = 0.0;
        for &level in &levels {
            let brute = norms.iter().position(|&v| v > level).map(|k| traj.frame_time(k));
            let hit = track_stopping(&traj, level, lambda).unwrap().hit;
            assert_eq!(hit, brute);
            let h = hit.unwrap_or(f64::INFINITY);
            assert!(h >= prev);
            prev = h;
        }
    }

    proptest! {
        #[test]
        fn frozen_field_constant_within_slab(n in 1usize..10, k in 0usize..10, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let s = SlabSchedule::new(n).unwrap();
            let k = k % n;
            let t1 = (k as f64 + a * 0.999) * s.delta();
            let t2 = (k as f64 + b * 0.999) * s.delta();
            prop_assert_eq!(s.slab_start(t1), s.slab_start(t2));
            prop_assert!((s.slab_start(t1) - k as f64 * s.delta()).abs() < 1e-12);
        }
    }
}
