//! Run configuration: a sectioned TOML document, validated field by field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shelab_core::coefficients::{catalog_with, FamilyParams};
use shelab_core::verify::{QvMode, TestFunction};
use shelab_core::{CatalogId, CoefficientSet, GridSpec, GrowthParams, NoiseMode, ScalarField, Scheme, TimeGrid};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default)]
    pub initial: InitialSection,
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "OutputSection::is_empty")]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub replicas: usize,
    /// Times at which profiles are written; empty means the horizon only.
    pub dump_times: Vec<f64>,
    /// Point at which marginal statistics are summarised.
    pub probe_x: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            replicas: 1,
            dump_times: Vec::new(),
            probe_x: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub half_width: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    /// Largest admissible step; the actual step divides the horizon.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum InitialSection {
    Gaussian { center: f64, variance: f64, mass: f64 },
    /// An `x,value` CSV on the configured grid.
    File { path: PathBuf },
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection::Gaussian {
            center: 0.0,
            variance: 0.25,
            mass: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    /// Catalog family; mutually exclusive with `b`/`sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default)]
    pub mutation: f64,
    #[serde(default)]
    pub selection: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthParams>,
    /// Replace σ by the regularised σₙ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularize: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSection {
    /// `direct`, `slab(n)` or `particle(N)`.
    pub kind: String,
    pub noise: NoiseMode,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self {
            kind: "direct".into(),
            noise: NoiseMode::Feller,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Martingale,
    Qv,
    Domination,
    MassLaw,
    Holder,
    Lemma,
}

impl Suite {
    pub fn needs_ensemble(&self) -> bool {
        !matches!(self, Suite::Lemma)
    }
}

impl std::str::FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| HarnessError::Config(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub suites: Vec<Suite>,
    pub times: Vec<f64>,
    pub qv_mode: QvMode,
    /// Added to b in the compensator; a nonzero value is the miscalibration control.
    pub drift_shift: f64,
    /// Declared constant drift for the mass law.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Drift bound for the domination check; defaults to the coefficients' upper bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_b: Option<f64>,
    pub holder: HolderSection,
    pub lemma: LemmaSection,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            suites: vec![Suite::Martingale],
            times: Vec::new(),
            qv_mode: QvMode::Sigma,
            drift_shift: 0.0,
            beta: None,
            l_b: None,
            holder: HolderSection::default(),
            lemma: LemmaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderSection {
    pub q: f64,
    pub t0: f64,
    pub x_half: f64,
    /// Lags in time steps.
    pub time_lags: Vec<usize>,
    /// Lags in cells.
    pub space_lags: Vec<usize>,
}

impl Default for HolderSection {
    fn default() -> Self {
        Self {
            q: 2.0,
            t0: 0.1,
            x_half: 0.5,
            time_lags: vec![8, 12, 16, 24, 32, 48, 64, 80],
            space_lags: vec![1, 2, 3, 5, 7, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaSection {
    pub gronwall_c: Vec<f64>,
    /// Forcing terms, `"1"` or `"t"`.
    pub gronwall_f: Vec<String>,
    pub gronwall_horizon: f64,
    pub gronwall_mesh: usize,
    pub kernel_horizons: Vec<f64>,
    pub kernel_lambdas: Vec<f64>,
}

impl Default for LemmaSection {
    fn default() -> Self {
        Self {
            gronwall_c: vec![0.25, 0.5, 1.0],
            gronwall_f: vec!["1".into(), "t".into()],
            gronwall_horizon: 1.0,
            gronwall_mesh: 500,
            kernel_horizons: vec![0.5, 1.0],
            kernel_lambdas: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Slab count.
    N,
    /// Particles per unit mass.
    Particles,
    /// Grid cells (dx halves as cells double).
    Dx,
    /// Time step.
    Dt,
    Replicas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// Weighted-moment parameters reported alongside the marginals.
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_q")]
    pub q: Vec<f64>,
    /// Time at which ν̂ is read off; the horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_time: Option<f64>,
    /// Bootstrap resamples for Wasserstein standard errors.
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

fn one() -> f64 {
    1.0
}

fn default_q() -> Vec<f64> {
    vec![1.0]
}

fn default_resamples() -> usize {
    200
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl OutputSection {
    fn is_empty(&self) -> bool {
        self.dir.is_none()
    }
}

impl CoefficientSection {
    pub fn family_params(&self) -> FamilyParams {
        FamilyParams {
            beta: self.beta,
            theta: self.theta,
            mutation: self.mutation,
            selection: self.selection,
        }
    }
}

fn cfg_err(field: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{field}: {msg}"))
}

/// Fully resolved objects a run needs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub grid: GridSpec,
    pub time: TimeGrid,
    pub u0: ScalarField,
    pub coefficients: CoefficientSet,
    pub scheme: Scheme,
    pub noise: NoiseMode,
    pub dump_times: Vec<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative initial-profile paths are taken from the config's directory
        if let InitialSection::File { path: p } = &mut cfg.initial {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 over the canonical JSON form without the output section, plus the contents of
    /// any referenced initial-profile file.
    pub fn hash(&self) -> Result<String, HarnessError> {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let canonical = serde_json::to_value(&c).expect("config serialises");
        let mut h = Sha256::new();
        h.update(canonical.to_string().as_bytes());
        if let InitialSection::File { path } = &self.initial {
            let bytes = std::fs::read(path)
                .map_err(|e| cfg_err("initial.path", format!("{}: {e}", path.display())))?;
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn coefficient_set(&self) -> Result<CoefficientSet, HarnessError> {
        let cs = &self.coefficients;
        let base = match (&cs.family, &cs.b, &cs.sigma) {
            (Some(f), None, None) => {
                let id: CatalogId = f.parse().map_err(|e| cfg_err("coefficients.family", e))?;
                catalog_with(id, &cs.family_params()).map_err(|e| cfg_err("coefficients", e))?
            }
            (None, Some(b), Some(s)) => {
                let g = cs
                    .growth
                    .ok_or_else(|| cfg_err("coefficients.growth", "custom coefficients need growth parameters"))?;
                CoefficientSet::from_expressions(b, s, g).map_err(|e| cfg_err("coefficients", e))?
            }
            _ => {
                return Err(cfg_err(
                    "coefficients",
                    "give either `family` or both `b` and `sigma`",
                ))
            }
        };
        match cs.regularize {
            Some(n) => base.regularized(n).map_err(|e| cfg_err("coefficients.regularize", e)),
            None => Ok(base),
        }
    }

    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        let grid = GridSpec::new(self.grid.half_width, self.grid.cells).map_err(|e| cfg_err("grid", e))?;
        let time = TimeGrid::with_max_dt(self.time.horizon, self.time.dt).map_err(|e| cfg_err("time", e))?;
        time.check_stable(&grid).map_err(|e| cfg_err("time.dt", e))?;
        if self.run.replicas == 0 {
            return Err(cfg_err("run.replicas", "must be at least 1"));
        }
        let scheme: Scheme = self.scheme.kind.parse().map_err(|e| cfg_err("scheme.kind", e))?;
        match scheme {
            Scheme::Slab(n) => {
                let sched = shelab_core::slab::SlabSchedule::new(n).map_err(|e| cfg_err("scheme.kind", e))?;
                sched.steps_per_slab(&time).map_err(|e| cfg_err("time.dt", e))?;
            }
            Scheme::Particle(n) if n < shelab_core::particle::MIN_PARTICLE_N => {
                return Err(cfg_err(
                    "scheme.kind",
                    format!("particle count {n} is below {}", shelab_core::particle::MIN_PARTICLE_N),
                ));
            }
            _ => {}
        }
        let u0 = match &self.initial {
            InitialSection::Gaussian {
                center,
                variance,
                mass,
            } => {
                if !(*variance > 0.0 && *mass >= 0.0) {
                    return Err(cfg_err("initial", "need variance > 0 and mass ≥ 0"));
                }
                let mut f = ScalarField::gaussian(grid, *center, *variance, *mass);
                let n = grid.n_cells();
                f.values_mut()[0] = 0.0;
                f.values_mut()[n] = 0.0;
                f
            }
            InitialSection::File { path } => {
                let file = std::fs::File::open(path)
                    .map_err(|e| cfg_err("initial.path", format!("{}: {e}", path.display())))?;
                ScalarField::read_csv(grid, std::io::BufReader::new(file)).map_err(|e| cfg_err("initial.path", e))?
            }
        };
        if !u0.is_nonnegative() {
            return Err(cfg_err("initial", "profile must be nonnegative"));
        }
        let coefficients = self.coefficient_set()?;
        let mut dump_times = if self.run.dump_times.is_empty() {
            vec![time.horizon()]
        } else {
            self.run.dump_times.clone()
        };
        dump_times.sort_by(f64::total_cmp);
        dump_times.dedup();
        for &t in &dump_times {
            if time.index_of(t).is_none() {
                return Err(cfg_err(
                    "run.dump_times",
                    format!("{t} is not a multiple of dt = {} in [0, {}]", time.dt(), time.horizon()),
                ));
            }
        }
        for &t in &self.verify.times {
            if time.index_of(t).is_none() || t <= 0.0 {
                return Err(cfg_err("verify.times", format!("{t} is not a positive time-grid point")));
            }
        }
        if self.verify.suites.iter().any(|s| matches!(s, Suite::Martingale | Suite::Qv | Suite::Domination)) {
            for phi in TestFunction::catalog(grid) {
                phi.check_support().map_err(|e| cfg_err("grid", e))?;
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(cfg_err("sweep.values", "sweep list is empty"));
            }
            if sw.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(cfg_err("sweep.values", "values must be positive"));
            }
            if sw.q.is_empty() || sw.q.iter().any(|q| !(*q > 0.0)) || !(sw.lambda > 0.0) {
                return Err(cfg_err("sweep.q", "need λ > 0 and a nonempty list of q > 0"));
            }
            if let Some(t) = sw.nu_time {
                if !(t > 0.0 && t <= time.horizon() * (1.0 + 1e-12)) {
                    return Err(cfg_err("sweep.nu_time", format!("{t} is outside (0, horizon]")));
                }
            }
        }
        Ok(Resolved {
            grid,
            time,
            u0,
            coefficients,
            scheme,
            noise: self.scheme.noise,
            dump_times,
        })
    }
}
