//! Heat and constant-potential Feynman–Kac semigroups, and the mild-form residual.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::field::{heat_convolve, heat_convolve_at, kernel_weights, GridSpec, ScalarField};
use crate::sim::{Scheme, TrajectoryField};

/// Below this many steps the Gaussian kernel is not resolvable on the grid and the discrete
/// heat propagator is used instead.
pub const KERNEL_CUTOFF_STEPS: usize = 4;

/// `P_t^g f = e^{gt} P_t f` for a constant potential `g`.
pub fn feynman_kac_const(f: &ScalarField, t: f64, g: f64) -> Result<ScalarField> {
    let p = heat_convolve(f, t)?;
    let factor = (g * t).exp();
    Ok(p.map(|v| v * factor))
}

/// `∫ P_t^{L_b}|φ|(y) u₀(y) dy`, the domination constant for `E|⟨φ, u_t⟩|`.
pub fn semigroup_bound_field(
    u0: &ScalarField,
    phi_abs: &ScalarField,
    t: f64,
    l_b: f64,
) -> Result<f64> {
    if !phi_abs.is_nonnegative() {
        return Err(Error::InvalidField("|φ| must be nonnegative".into()));
    }
    if u0.grid() != phi_abs.grid() {
        return Err(Error::Config("u₀ and |φ| live on different grids".into()));
    }
    Ok(feynman_kac_const(phi_abs, t, l_b)?.inner(u0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MildResidual {
    pub t: f64,
    pub x: f64,
    pub lhs: f64,
    /// `P_t u₀(x)` plus the drift convolution.
    pub rhs_deterministic: f64,
    /// Kernel-weighted sum of the recorded noise increments.
    pub rhs_stochastic: f64,
    pub residual: f64,
}

/// Row `i` of `A^k` for the explicit heat step `A = I + (dt/2)Δ_h` with zero boundary.
fn discrete_rows(grid: &GridSpec, dt: f64, i: usize, k_max: usize) -> Vec<Vec<f64>> {
    let n = grid.n_cells();
    let r = 0.5 * dt / (grid.dx() * grid.dx());
    let mut rows = Vec::with_capacity(k_max);
    let mut cur = vec![0.0; grid.len()];
    cur[i] = 1.0;
    for _ in 0..k_max {
        rows.push(cur.clone());
        let mut next = vec![0.0; grid.len()];
        for j in 1..n {
            next[j] = cur[j] + r * (cur[j + 1] - 2.0 * cur[j] + cur[j - 1]);
        }
        cur = next;
    }
    rows
}

/// Compares `u(t, x)` with the mild-form right-hand side
///
/// ```text
/// P_t u₀(x) + Σ_m p_{t−s_{m+1}} * (b(uⁿ_m)u_m dt + ΔZ_m)(x)
/// ```
///
/// built from the stored noise ledger. Terms closer than [`KERNEL_CUTOFF_STEPS`] steps to `t`
/// use the discrete heat propagator; all other terms use the Gaussian kernel.
pub fn mild_residual(
    traj: &TrajectoryField,
    c: &CoefficientSet,
    t: f64,
    x: f64,
) -> Result<MildResidual> {
    let ledger = traj
        .ledger()
        .ok_or_else(|| Error::InsufficientData("trajectory has no noise ledger".into()))?;
    if traj.record_every() != 1 {
        return Err(Error::InsufficientData(
            "mild residual needs every time step recorded".into(),
        ));
    }
    let grid = *traj.grid();
    let time = *traj.time_grid();
    let dt = time.dt();
    let big_m = time.index_of(t).ok_or_else(|| Error::OffGrid {
        what: format!("t = {t}"),
    })?;
    let i = grid.index_of(x).ok_or_else(|| Error::OffGrid {
        what: format!("x = {x}"),
    })?;
    if big_m < KERNEL_CUTOFF_STEPS {
        return Err(Error::Domain(format!(
            "t = {t} is closer than {KERNEL_CUTOFF_STEPS} steps to 0"
        )));
    }
    let freeze = match traj.scheme() {
        Scheme::Direct => 1,
        Scheme::Slab(n) => (1.0 / (n as f64 * dt)).round() as usize,
        Scheme::Particle(_) => {
            return Err(Error::Config("mild form is defined for grid schemes only".into()))
        }
    };
    let rows = discrete_rows(&grid, dt, i, KERNEL_CUTOFF_STEPS);
    let dot = |row: &[f64], v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();

    let u0 = traj.frame(0);
    let mut det = heat_convolve_at(&grid, u0, &kernel_weights(t, grid.dx()), i);
    let mut sto = 0.0;
    let mut drift = vec![0.0; grid.len()];
    for m in 0..big_m {
        let u = traj.frame(m);
        let frozen = traj.frame((m / freeze) * freeze);
        for j in 0..grid.len() {
            drift[j] = dt * c.b(frozen[j]) * u[j];
        }
        let noise = ledger.step(m);
        let k = big_m - 1 - m;
        if k < KERNEL_CUTOFF_STEPS {
            det += dot(&rows[k], &drift);
            sto += dot(&rows[k], noise);
        } else {
            let w = kernel_weights(k as f64 * dt, grid.dx());
            det += heat_convolve_at(&grid, &drift, &w, i);
            sto += heat_convolve_at(&grid, noise, &w, i);
        }
    }
    let lhs = traj.frame(big_m)[i];
    Ok(MildResidual {
        t,
        x,
        lhs,
        rhs_deterministic: det,
        rhs_stochastic: sto,
        residual: lhs - det - sto,
    })
}
