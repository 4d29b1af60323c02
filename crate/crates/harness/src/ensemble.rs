//! Replica scheduling over a worker pool.

use rayon::prelude::*;

use shelab_core::particle::{simulate_particles, ParticleOptions, ParticleSystem};
use shelab_core::sim::simulate_direct;
use shelab_core::slab::{simulate_slab, SlabSchedule};
use shelab_core::{ScalarField, Scheme, SimOptions, TrajectoryField};

use crate::config::{Resolved, RunConfig};
use crate::error::HarnessError;
use crate::manifest::ReplicaSeed;

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: RunConfig,
    pub resolved: Resolved,
}

impl Ensemble {
    pub fn new(config: RunConfig) -> Result<Self, HarnessError> {
        let resolved = config.resolve()?;
        Ok(Self { config, resolved })
    }

    pub fn replicas(&self) -> usize {
        self.config.run.replicas
    }

    /// Replica `r` draws from stream `r` of the base seed.
    pub fn seeds(&self) -> Vec<ReplicaSeed> {
        (0..self.replicas() as u64)
            .map(|r| ReplicaSeed {
                replica: r,
                seed: self.config.run.seed,
                stream: r,
            })
            .collect()
    }

    pub fn is_particle(&self) -> bool {
        matches!(self.resolved.scheme, Scheme::Particle(_))
    }

    pub fn run_field(&self, replica: u64, record_every: usize) -> shelab_core::Result<TrajectoryField> {
        let r = &self.resolved;
        let opts = SimOptions {
            noise: r.noise,
            record_every,
            stream: replica,
            ..Default::default()
        };
        let seed = self.config.run.seed;
        match r.scheme {
            Scheme::Direct => simulate_direct(&r.u0, &r.coefficients, r.time, seed, &opts),
            Scheme::Slab(n) => simulate_slab(&r.u0, &r.coefficients, &SlabSchedule::new(n)?, r.time, seed, &opts),
            Scheme::Particle(_) => Err(shelab_core::Error::Config(
                "the particle scheme produces particle snapshots, not grid trajectories".into(),
            )),
        }
    }

    /// Drift and branching-rate fields frozen at the initial profile.
    pub fn frozen_fields(&self) -> (ScalarField, ScalarField) {
        let r = &self.resolved;
        let c = &r.coefficients;
        (r.u0.map(|u| c.b(u)), r.u0.map(|u| c.gamma_rate(u)))
    }

    /// Particle snapshots every `dt` with the coefficients frozen at `u0` over the whole run.
    pub fn run_particles(&self, replica: u64) -> shelab_core::Result<Vec<ParticleSystem>> {
        let r = &self.resolved;
        let Scheme::Particle(n) = r.scheme else {
            return Err(shelab_core::Error::Config(format!("scheme {} is not a particle scheme", r.scheme)));
        };
        let (b, g) = self.frozen_fields();
        simulate_particles(
            &r.u0,
            &b,
            &g,
            &ParticleOptions {
                n,
                horizon: r.time.horizon(),
                dt: r.time.dt(),
                seed: self.config.run.seed,
                stream: replica,
            },
        )
    }
}

/// Maps `f` over `0..n` on a pool of `jobs` workers (0 = all cores), keeping input order.
pub fn par_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..n as u64).into_par_iter().map(f).collect()))
}
