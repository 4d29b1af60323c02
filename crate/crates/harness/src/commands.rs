//! `simulate`, `verify` and `sweep`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use shelab_core::moments::{
    gronwall_fixed_point, holder_exponent, kernel_lemma_sweep, moment_trace, nu_estimate, HolderMode,
    HolderProbe, KernelSweepSpec,
};
use shelab_core::particle::density_estimate;
use shelab_core::semigroup::feynman_kac_const;
use shelab_core::stats::{variance_with_se, wasserstein1, wasserstein1_bootstrap_se, Accumulator};
use shelab_core::verify::{
    domination_check, martingale_suite, mass_law_check, qv_compare, write_verdicts_csv, z_process, MartingaleSeries,
    TestFunction, TestVerdict, ZOptions,
};
use shelab_core::{CatalogId, GridSpec, TrajectoryField};

use crate::config::{RunConfig, Suite, SweepVariable};
use crate::ensemble::{par_map, Ensemble};
use crate::error::HarnessError;
use crate::manifest::{sha256_hex, FileRecord, MarginalSummary, RunManifest, RunStatus, SweepRow};

pub const VERDICTS_FILE: &str = "verdicts.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone)]
pub struct CommandOptions {
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.manifest.status {
            RunStatus::Complete | RunStatus::Passed => 0,
            RunStatus::Failed => 1,
            RunStatus::Partial => 3,
        }
    }
}

fn version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn manifest_for(ens: &Ensemble, command: &str, hash: String) -> RunManifest {
    RunManifest {
        artifact_version: version(),
        command: command.into(),
        config_hash: hash,
        config: ens.config.clone(),
        scheme: ens.resolved.scheme.to_string(),
        coefficients: ens.resolved.coefficients.label().to_string(),
        seeds: ens.seeds(),
        files: Vec::new(),
        wall_clock_secs: 0.0,
        status: RunStatus::Complete,
        failures: Vec::new(),
        verdicts: Vec::new(),
        marginals: Vec::new(),
        sweep: Vec::new(),
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn nearest_cell(grid: &GridSpec, x: f64) -> usize {
    (((x + grid.half_width()) / grid.dx()).round().max(0.0) as usize).min(grid.n_cells())
}

/// `x,value` CSVs of the dump frames of one replica.
pub fn field_dump_files(traj: &TrajectoryField, replica: u64, dump_times: &[f64]) -> Vec<(PathBuf, Vec<u8>)> {
    dump_times
        .iter()
        .map(|&t| {
            let k = traj.frame_at(t).expect("dump times are recorded");
            let mut buf = Vec::new();
            traj.write_frame_csv(k, &mut buf).expect("writing to memory");
            (PathBuf::from("trajectories").join(format!("r{replica:04}_t{t:.6}.csv")), buf)
        })
        .collect()
}

struct ReplicaOutput {
    files: Vec<(PathBuf, Vec<u8>)>,
    /// `(u(t, probe), mass)` per dump time.
    probes: Vec<(f64, f64)>,
}

fn simulate_replica(ens: &Ensemble, r: u64, record_every: usize) -> shelab_core::Result<ReplicaOutput> {
    let res = &ens.resolved;
    let grid = res.grid;
    if ens.is_particle() {
        let snaps = ens.run_particles(r)?;
        let level = (1.0 / grid.dx()).log2().ceil().max(0.0) as u32;
        let chosen: Vec<_> = res
            .dump_times
            .iter()
            .map(|&t| snaps[res.time.index_of(t).expect("validated")].clone())
            .collect();
        let mut buf = Vec::new();
        shelab_core::particle::write_snapshots_csv(&chosen, &mut buf).expect("writing to memory");
        let probes = chosen
            .iter()
            .map(|s| (density_estimate(s, level).at(ens.config.run.probe_x), s.total_mass()))
            .collect();
        return Ok(ReplicaOutput {
            files: vec![(PathBuf::from("particles").join(format!("r{r:04}.csv")), buf)],
            probes,
        });
    }
    let traj = ens.run_field(r, record_every)?;
    let j = nearest_cell(&grid, ens.config.run.probe_x);
    let probes = res
        .dump_times
        .iter()
        .map(|&t| {
            let f = traj.frame_field(traj.frame_at(t).expect("dump times are recorded"));
            (f.values()[j], f.integral())
        })
        .collect();
    Ok(ReplicaOutput {
        files: field_dump_files(&traj, r, &res.dump_times),
        probes,
    })
}

fn write_files(dir: &Path, files: Vec<(PathBuf, Vec<u8>)>, records: &mut Vec<FileRecord>) -> Result<(), HarnessError> {
    for (rel, bytes) in files {
        let p = dir.join(&rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, &bytes)?;
        records.push(FileRecord {
            path: rel,
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(())
}

/// Runs the ensemble and writes one profile per replica and dump time (or one particle file
/// per replica) plus the manifest.
pub fn simulate(cfg: RunConfig, opts: &CommandOptions) -> Result<Outcome, HarnessError> {
    let start = Instant::now();
    let hash = cfg.hash()?;
    let ens = Ensemble::new(cfg)?;
    let res = &ens.resolved;
    let steps: Vec<usize> = res
        .dump_times
        .iter()
        .map(|&t| res.time.index_of(t).expect("validated"))
        .collect();
    let record_every = steps.iter().fold(res.time.n_steps(), |g, &m| gcd(g, m)).max(1);

    let outputs = par_map(opts.jobs, ens.replicas(), |r| simulate_replica(&ens, r, record_every))?;
    std::fs::create_dir_all(&opts.out)?;
    let mut manifest = manifest_for(&ens, "simulate", hash);
    let mut per_time = vec![(Vec::new(), Vec::new()); res.dump_times.len()];
    for (r, out) in outputs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                for (k, (u, m)) in o.probes.into_iter().enumerate() {
                    per_time[k].0.push(u);
                    per_time[k].1.push(m);
                }
                write_files(&opts.out, o.files, &mut manifest.files)?;
            }
            Err(e) => manifest.failures.push(format!("replica {r}: {e}")),
        }
    }
    for (k, (us, ms)) in per_time.iter().enumerate() {
        if us.is_empty() {
            continue;
        }
        let (a, m) = (Accumulator::from_slice(us), Accumulator::from_slice(ms));
        manifest.marginals.push(MarginalSummary {
            time: res.dump_times[k],
            x: ens.config.run.probe_x,
            mean: a.mean(),
            variance: a.variance(),
            se: a.std_err(),
            mass_mean: m.mean(),
            mass_se: m.std_err(),
        });
    }
    if !manifest.failures.is_empty() {
        manifest.status = RunStatus::Partial;
    }
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&opts.out)?;
    Ok(Outcome {
        dir: opts.out.clone(),
        manifest,
    })
}

/// Where `verify` takes its configuration from.
#[derive(Debug, Clone)]
pub enum VerifySource {
    /// Re-runs the manifest's ensemble after checking its files.
    Manifest(PathBuf),
    Config(Box<RunConfig>),
    /// Only standalone (quadrature) suites.
    Standalone,
}

fn lemma_verdicts(cfg: &crate::config::LemmaSection) -> Result<Vec<TestVerdict>, HarnessError> {
    let mut out = Vec::new();
    for name in &cfg.gronwall_f {
        let f: Box<dyn Fn(f64) -> f64> = match name.as_str() {
            "1" => Box::new(|_| 1.0),
            "t" => Box::new(|t| t),
            other => {
                return Err(HarnessError::Config(format!(
                    "verify.lemma.gronwall_f: unknown forcing {other:?} (use \"1\" or \"t\")"
                )))
            }
        };
        for &c in &cfg.gronwall_c {
            let r = gronwall_fixed_point(&*f, c, cfg.gronwall_horizon, cfg.gronwall_mesh)?;
            let worst = r
                .g_star
                .iter()
                .zip(&r.bound)
                .filter(|(_, b)| **b > 0.0)
                .map(|(g, b)| g / b)
                .fold(0.0, f64::max);
            out.push(TestVerdict {
                test_id: format!("gronwall[f={name},c={c}]"),
                statistic: worst,
                se: 0.0,
                threshold: 1.0,
                passed: r.passed && r.converged,
            });
        }
    }
    for &t in &cfg.kernel_horizons {
        for &lambda in &cfg.kernel_lambdas {
            let r = kernel_lemma_sweep(t, lambda, &KernelSweepSpec::default())?;
            out.push(TestVerdict {
                test_id: format!("kernel_lemma[T={t},lambda={lambda}]"),
                statistic: r.finest_max,
                se: 0.0,
                threshold: 2.0 * r.c_coarse,
                passed: r.passed,
            });
        }
    }
    Ok(out)
}

struct VerifyReplica {
    series: Vec<MartingaleSeries>,
    holder: Option<(Vec<f64>, Vec<f64>)>,
    digests: Vec<(PathBuf, String)>,
}

fn holder_verdict(obs: &[Vec<f64>], probe: &HolderProbe) -> Result<TestVerdict, HarnessError> {
    let e = holder_exponent(obs, probe)?;
    let (lo, hi) = e.mode.band();
    let mode = match e.mode {
        HolderMode::Time => "time",
        HolderMode::Space => "space",
    };
    Ok(TestVerdict {
        test_id: format!("holder_{mode}[q={},band={lo}..{hi}]", e.q),
        statistic: e.exponent,
        se: e.slope_se / (2.0 * e.q),
        threshold: hi,
        passed: e.in_band,
    })
}

fn ensemble_verdicts(
    ens: &Ensemble,
    suites: &[Suite],
    reproduce: Option<&RunManifest>,
    jobs: usize,
) -> Result<Vec<TestVerdict>, HarnessError> {
    if ens.is_particle() {
        return Err(HarnessError::Config(format!(
            "suites {suites:?} need grid trajectories; scheme {} produces particles",
            ens.resolved.scheme
        )));
    }
    let cfg = &ens.config;
    let res = &ens.resolved;
    let c = &res.coefficients;
    let grid = res.grid;
    let zopts = ZOptions {
        drift_shift: cfg.verify.drift_shift,
        qv_mode: cfg.verify.qv_mode,
        ..Default::default()
    };
    let phis = TestFunction::catalog(grid);
    let l_b = cfg.verify.l_b.unwrap_or(c.params().upper_b);
    let times = if cfg.verify.times.is_empty() {
        vec![res.time.horizon()]
    } else {
        cfg.verify.times.clone()
    };
    let probes = if suites.contains(&Suite::Holder) {
        let h = &cfg.verify.holder;
        let template = ens.run_field(0, 1)?;
        Some((
            HolderProbe::new(&template, HolderMode::Time, h.q, l_b, h.t0, h.x_half, h.time_lags.clone())?,
            HolderProbe::new(&template, HolderMode::Space, h.q, l_b, h.t0, h.x_half, h.space_lags.clone())?,
        ))
    } else {
        None
    };
    let reproduce_dumps = reproduce.map(|m| {
        let mut d = m.config.run.dump_times.clone();
        if d.is_empty() {
            d.push(res.time.horizon());
        }
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    });

    let outputs = par_map(jobs, ens.replicas(), |r| -> Result<VerifyReplica, HarnessError> {
        let traj = ens.run_field(r, 1)?;
        let series = phis
            .iter()
            .map(|p| z_process(&traj, p, c, &zopts))
            .collect::<shelab_core::Result<Vec<_>>>()?;
        let holder = probes.as_ref().map(|(pt, px)| (pt.observe(&traj), px.observe(&traj)));
        let digests = match &reproduce_dumps {
            Some(d) => field_dump_files(&traj, r, d)
                .into_iter()
                .map(|(p, b)| (p, sha256_hex(&b)))
                .collect(),
            None => Vec::new(),
        };
        Ok(VerifyReplica { series, holder, digests })
    })?;
    let outputs = outputs.into_iter().collect::<Result<Vec<_>, _>>()?;

    if let Some(m) = reproduce {
        for (path, digest) in outputs.iter().flat_map(|o| &o.digests) {
            if let Some(rec) = m.files.iter().find(|f| &f.path == path) {
                if &rec.sha256 != digest {
                    return Err(HarnessError::Runtime(format!(
                        "rerun does not reproduce {}",
                        path.display()
                    )));
                }
            }
        }
    }

    let by_phi: Vec<Vec<MartingaleSeries>> = (0..phis.len())
        .map(|i| outputs.iter().map(|o| o.series[i].clone()).collect())
        .collect();
    let mut verdicts = Vec::new();
    for suite in suites {
        match suite {
            Suite::Martingale => {
                for &t in &times {
                    for s in &by_phi {
                        verdicts.extend(martingale_suite(s, t)?);
                    }
                }
            }
            Suite::Qv => {
                for &t in &times {
                    for s in &by_phi {
                        verdicts.push(qv_compare(s, t)?);
                    }
                }
            }
            Suite::Domination => {
                for &t in &times {
                    for (phi, s) in phis.iter().zip(&by_phi) {
                        if phi.values().iter().all(|&v| v >= 0.0) {
                            verdicts.push(domination_check(s, &res.u0, phi, t, l_b)?);
                        }
                    }
                }
            }
            Suite::MassLaw => {
                let beta = match (cfg.verify.beta, &cfg.coefficients.family) {
                    (Some(b), _) => b,
                    (None, Some(f)) if f.parse::<CatalogId>().ok() == Some(CatalogId::Sbm) => cfg.coefficients.beta,
                    _ => {
                        return Err(HarnessError::Config(
                            "verify.beta: the mass law needs a declared constant drift".into(),
                        ))
                    }
                };
                for &t in &times {
                    verdicts.push(mass_law_check(&by_phi[0], c, beta, t)?);
                }
            }
            Suite::Holder => {
                let (pt, px) = probes.as_ref().expect("built above");
                let ot: Vec<Vec<f64>> = outputs.iter().map(|o| o.holder.as_ref().unwrap().0.clone()).collect();
                let ox: Vec<Vec<f64>> = outputs.iter().map(|o| o.holder.as_ref().unwrap().1.clone()).collect();
                verdicts.push(holder_verdict(&ot, pt)?);
                verdicts.push(holder_verdict(&ox, px)?);
            }
            Suite::Lemma => {}
        }
    }
    Ok(verdicts)
}

/// Runs the selected suites; the outcome fails iff some verdict fails.
pub fn verify(
    source: VerifySource,
    suites: Option<Vec<Suite>>,
    seed: Option<u64>,
    opts: &CommandOptions,
) -> Result<Outcome, HarnessError> {
    let start = Instant::now();
    let (cfg, reproduce) = match source {
        VerifySource::Manifest(path) => {
            let m = RunManifest::load(&path)?;
            let dir = if path.is_dir() {
                path.clone()
            } else {
                path.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            m.check_files(&dir)?;
            let mut cfg = m.config.clone();
            let same_seed = seed.is_none_or(|s| s == cfg.run.seed);
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            let repro = (m.command == "simulate" && same_seed && !m.scheme.starts_with("particle")).then_some(m);
            (Some(cfg), repro)
        }
        VerifySource::Config(mut cfg) => {
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            (Some(*cfg), None)
        }
        VerifySource::Standalone => (None, None),
    };
    let suites = suites
        .or_else(|| cfg.as_ref().map(|c| c.verify.suites.clone()))
        .unwrap_or_else(|| vec![Suite::Lemma]);
    if suites.is_empty() {
        return Err(HarnessError::Config("verify.suites: no suite selected".into()));
    }
    let needs_ensemble = suites.iter().any(Suite::needs_ensemble);
    let lemma_cfg = cfg.as_ref().map(|c| c.verify.lemma.clone()).unwrap_or_default();

    let mut verdicts = Vec::new();
    if suites.contains(&Suite::Lemma) {
        verdicts.extend(lemma_verdicts(&lemma_cfg)?);
    }
    let mut manifest = match (&cfg, needs_ensemble) {
        (Some(cfg), _) => {
            let ens = Ensemble::new(cfg.clone())?;
            let ensemble_suites: Vec<Suite> = suites.iter().copied().filter(Suite::needs_ensemble).collect();
            if needs_ensemble {
                verdicts.extend(ensemble_verdicts(&ens, &ensemble_suites, reproduce.as_ref(), opts.jobs)?);
            }
            manifest_for(&ens, "verify", cfg.hash()?)
        }
        (None, true) => {
            return Err(HarnessError::Config(format!(
                "suites {suites:?} need a configuration or manifest"
            )))
        }
        (None, false) => RunManifest {
            artifact_version: version(),
            command: "verify".into(),
            config_hash: String::new(),
            config: standalone_config(),
            scheme: String::new(),
            coefficients: String::new(),
            seeds: Vec::new(),
            files: Vec::new(),
            wall_clock_secs: 0.0,
            status: RunStatus::Complete,
            failures: Vec::new(),
            verdicts: Vec::new(),
            marginals: Vec::new(),
            sweep: Vec::new(),
        },
    };

    std::fs::create_dir_all(&opts.out)?;
    let mut buf = Vec::new();
    write_verdicts_csv(&verdicts, &mut buf)?;
    write_files(&opts.out, vec![(PathBuf::from(VERDICTS_FILE), buf)], &mut manifest.files)?;
    manifest.status = if verdicts.iter().all(|v| v.passed) {
        RunStatus::Passed
    } else {
        RunStatus::Failed
    };
    manifest.verdicts = verdicts;
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&opts.out)?;
    Ok(Outcome {
        dir: opts.out.clone(),
        manifest,
    })
}

/// Placeholder configuration recorded by standalone runs.
fn standalone_config() -> RunConfig {
    RunConfig::parse(
        "[grid]\nhalf_width = 1.0\ncells = 2\n[time]\nhorizon = 1.0\ndt = 1.0\n[coefficients]\nfamily = \"sbm\"\n",
    )
    .expect("static config parses")
}

/// Ensemble marginals at the horizon for one configuration.
fn horizon_marginals(ens: &Ensemble, jobs: usize) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let n = ens.resolved.time.n_steps();
    let probe = ens.config.run.probe_x;
    let grid = ens.resolved.grid;
    let out = par_map(jobs, ens.replicas(), |r| -> Result<(f64, f64), HarnessError> {
        if ens.is_particle() {
            let snaps = ens.run_particles(r)?;
            let last = snaps.last().expect("nonempty");
            let level = (1.0 / grid.dx()).log2().ceil().max(0.0) as u32;
            return Ok((density_estimate(last, level).at(probe), last.total_mass()));
        }
        let traj = ens.run_field(r, n)?;
        let f = traj.frame_field(traj.n_frames() - 1);
        Ok((f.values()[nearest_cell(&grid, probe)], f.integral()))
    })?;
    let pairs = out.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(pairs.into_iter().unzip())
}

fn push_mean_rows(rows: &mut Vec<SweepRow>, value: f64, us: &[f64], masses: &[f64]) {
    let a = Accumulator::from_slice(us);
    let m = Accumulator::from_slice(masses);
    let (v, v_se) = variance_with_se(us);
    rows.push(SweepRow {
        value,
        statistic: "marginal_mean".into(),
        estimate: a.mean(),
        se: a.std_err(),
    });
    rows.push(SweepRow {
        value,
        statistic: "marginal_variance".into(),
        estimate: v,
        se: v_se,
    });
    rows.push(SweepRow {
        value,
        statistic: "mass_mean".into(),
        estimate: m.mean(),
        se: m.std_err(),
    });
}

fn integer_value(v: f64, field: &str) -> Result<usize, HarnessError> {
    if v.fract() != 0.0 || v < 1.0 {
        return Err(HarnessError::Config(format!("{field}: {v} is not a positive integer")));
    }
    Ok(v as usize)
}

/// Largest divisor of `n` not above `target`.
fn divisor_near(n: usize, target: usize) -> usize {
    (1..=target.max(1)).rev().find(|d| n % d == 0).unwrap_or(1)
}

/// Pass iff the Wasserstein distances decrease, allowing one rise within one SE.
pub fn w1_trend_verdict(w: &[(f64, f64)]) -> TestVerdict {
    let mut inversions = 0;
    let mut excess: f64 = 0.0;
    let mut ok = true;
    for pair in w.windows(2) {
        let ((a, _), (b, se_b)) = (pair[0], pair[1]);
        if b > a {
            inversions += 1;
            excess = excess.max(b - a);
            if b - a > se_b {
                ok = false;
            }
        }
    }
    TestVerdict {
        test_id: "w1_monotone".into(),
        statistic: inversions as f64,
        se: excess,
        threshold: 1.0,
        passed: ok && inversions <= 1,
    }
}

/// Relative spread of ν̂ across the sweep must stay within [`NU_SPREAD`], and no
/// consecutive rise may exceed one combined SE.
pub fn nu_bounded_verdict(lambda: f64, q: f64, nu: &[(f64, f64)]) -> TestVerdict {
    let lo = nu.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = nu.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let spread = if lo > 0.0 { (hi - lo) / lo } else { f64::INFINITY };
    let mut rise: f64 = 0.0;
    let mut ok = true;
    for pair in nu.windows(2) {
        let ((a, sa), (b, sb)) = (pair[0], pair[1]);
        rise = rise.max(b - a);
        if b - a > sa.hypot(sb) {
            ok = false;
        }
    }
    TestVerdict {
        test_id: format!("nu_bounded[lambda={lambda},q={q}]"),
        statistic: spread,
        se: rise.max(0.0),
        threshold: NU_SPREAD,
        passed: ok && spread <= NU_SPREAD,
    }
}

pub const NU_SPREAD: f64 = 0.25;

/// Per-value ensembles of the sweep variable with convergence diagnostics.
pub fn sweep(cfg: RunConfig, opts: &CommandOptions) -> Result<Outcome, HarnessError> {
    let start = Instant::now();
    let hash = cfg.hash()?;
    let base = Ensemble::new(cfg.clone())?;
    let sw = cfg
        .sweep
        .clone()
        .ok_or_else(|| HarnessError::Config("sweep: the configuration has no [sweep] section".into()))?;
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    match sw.variable {
        SweepVariable::N => {
            let mut samples: Vec<Vec<f64>> = Vec::new();
            let mut w = Vec::new();
            let mut nus: Vec<Vec<(f64, f64)>> = vec![Vec::new(); sw.q.len()];
            for &v in &sw.values {
                let n = integer_value(v, "sweep.values")?;
                let mut c = cfg.clone();
                c.scheme.kind = format!("slab({n})");
                let ens = Ensemble::new(c)?;
                let steps = ens.resolved.time.n_steps();
                let every = divisor_near(steps, steps / 50);
                let nu_t = sw.nu_time.unwrap_or(ens.resolved.time.horizon());
                let j = nearest_cell(&ens.resolved.grid, ens.config.run.probe_x);
                type Obs = (f64, Vec<Vec<f64>>, Vec<f64>);
                let out = par_map(opts.jobs, ens.replicas(), |r| -> Result<Obs, HarnessError> {
                    let traj = ens.run_field(r, every)?;
                    let times: Vec<f64> = (0..traj.n_frames()).map(|k| traj.frame_time(k)).collect();
                    let traces = sw.q.iter().map(|&q| moment_trace(&traj, sw.lambda, q)).collect();
                    Ok((traj.last_frame()[j], traces, times))
                })?;
                let out = out.into_iter().collect::<Result<Vec<_>, _>>()?;
                let us: Vec<f64> = out.iter().map(|o| o.0).collect();
                let a = Accumulator::from_slice(&us);
                rows.push(SweepRow {
                    value: v,
                    statistic: "marginal_mean".into(),
                    estimate: a.mean(),
                    se: a.std_err(),
                });
                for (i, &q) in sw.q.iter().enumerate() {
                    let traces: Vec<Vec<f64>> = out.iter().map(|o| o.1[i].clone()).collect();
                    let nu = nu_estimate(&traces, &out[0].2, sw.lambda, q, nu_t)?;
                    rows.push(SweepRow {
                        value: v,
                        statistic: format!("nu[lambda={},q={q},t={nu_t}]", sw.lambda),
                        estimate: nu.estimate,
                        se: nu.se,
                    });
                    nus[i].push((nu.estimate, nu.se));
                }
                if let Some(prev) = samples.last() {
                    let d = wasserstein1(prev, &us);
                    let se = wasserstein1_bootstrap_se(prev, &us, sw.resamples, cfg.run.seed);
                    rows.push(SweepRow {
                        value: v,
                        statistic: "w1_to_previous".into(),
                        estimate: d,
                        se,
                    });
                    w.push((d, se));
                }
                samples.push(us);
            }
            if w.len() >= 2 {
                verdicts.push(w1_trend_verdict(&w));
            }
            if sw.values.len() >= 2 {
                for (&q, nu) in sw.q.iter().zip(&nus) {
                    verdicts.push(nu_bounded_verdict(sw.lambda, q, nu));
                }
            }
        }
        SweepVariable::Dx => {
            let c = &base.resolved.coefficients;
            let beta = cfg.coefficients.beta;
            let u_max = 10.0 * base.resolved.u0.max_abs().max(1.0);
            if !c.is_noiseless(u_max) || !c.has_constant_drift(beta, u_max) {
                return Err(HarnessError::Config(
                    "sweep.variable: a dx sweep needs σ ≡ 0 and constant drift b ≡ coefficients.beta".into(),
                ));
            }
            let dx0 = base.resolved.grid.dx();
            let mut prev: Option<f64> = None;
            for &v in &sw.values {
                let cells = integer_value(v, "sweep.values")?;
                let mut c = cfg.clone();
                c.grid.cells = cells;
                c.run.replicas = 1;
                let dx = 2.0 * c.grid.half_width / cells as f64;
                c.time.dt = cfg.time.dt * (dx / dx0).powi(2);
                let ens = Ensemble::new(c)?;
                let traj = ens.run_field(0, ens.resolved.time.n_steps())?;
                let exact = feynman_kac_const(&ens.resolved.u0, ens.resolved.time.horizon(), beta)?;
                let err = traj.frame_field(traj.n_frames() - 1).max_abs_diff(&exact);
                rows.push(SweepRow {
                    value: v,
                    statistic: "max_abs_error".into(),
                    estimate: err,
                    se: 0.0,
                });
                if let Some(p) = prev {
                    rows.push(SweepRow {
                        value: v,
                        statistic: "error_ratio".into(),
                        estimate: p / err,
                        se: 0.0,
                    });
                }
                prev = Some(err);
            }
        }
        SweepVariable::Particles | SweepVariable::Dt | SweepVariable::Replicas => {
            for &v in &sw.values {
                let mut c = cfg.clone();
                match sw.variable {
                    SweepVariable::Particles => {
                        c.scheme.kind = format!("particle({})", integer_value(v, "sweep.values")?)
                    }
                    SweepVariable::Dt => c.time.dt = v,
                    _ => c.run.replicas = integer_value(v, "sweep.values")?,
                }
                let ens = Ensemble::new(c)?;
                let (us, ms) = horizon_marginals(&ens, opts.jobs)?;
                push_mean_rows(&mut rows, v, &us, &ms);
                if sw.variable == SweepVariable::Particles {
                    let (mv, mv_se) = variance_with_se(&ms);
                    rows.push(SweepRow {
                        value: v,
                        statistic: "mass_variance".into(),
                        estimate: mv,
                        se: mv_se,
                    });
                }
            }
        }
    }

    std::fs::create_dir_all(&opts.out)?;
    let mut manifest = manifest_for(&base, "sweep", hash);
    let mut buf = Vec::new();
    let var = serde_json::to_value(sw.variable).expect("serialises");
    writeln!(buf, "variable,value,statistic,estimate,se")?;
    for r in &rows {
        writeln!(
            buf,
            "{},{},{},{},{}",
            var.as_str().unwrap_or_default(),
            r.value,
            r.statistic,
            r.estimate,
            r.se
        )?;
    }
    let mut files = vec![(PathBuf::from(SWEEP_FILE), buf)];
    if !verdicts.is_empty() {
        let mut vb = Vec::new();
        write_verdicts_csv(&verdicts, &mut vb)?;
        files.push((PathBuf::from(VERDICTS_FILE), vb));
        manifest.status = if verdicts.iter().all(|v| v.passed) {
            RunStatus::Passed
        } else {
            RunStatus::Failed
        };
    }
    write_files(&opts.out, files, &mut manifest.files)?;
    manifest.sweep = rows;
    manifest.verdicts = verdicts;
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&opts.out)?;
    Ok(Outcome {
        dir: opts.out.clone(),
        manifest,
    })
}
