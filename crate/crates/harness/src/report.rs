//! Consolidated report over one or more manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use shelab_core::verify::csv_escape;

use crate::error::HarnessError;
use crate::manifest::{RunManifest, RunStatus};

pub const REPORT_FILE: &str = "report.md";
pub const LONG_CSV: &str = "report_long.csv";
pub const VERDICTS_CSV: &str = "report_verdicts.csv";

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub path: PathBuf,
    pub failed: Vec<String>,
    pub conflicts: Vec<String>,
}

impl ReportOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            0
        } else {
            1
        }
    }
}

fn label(path: &Path, m: &RunManifest) -> String {
    format!("{} [{} {}]", path.display(), m.command, m.scheme)
}

/// Differences that make two manifests incomparable side by side.
fn conflicts(a: &RunManifest, b: &RunManifest) -> Vec<&'static str> {
    let (ca, cb) = (&a.config, &b.config);
    let mut out = Vec::new();
    if ca.grid != cb.grid {
        out.push("grid");
    }
    if ca.time.horizon != cb.time.horizon {
        out.push("time.horizon");
    }
    if ca.initial != cb.initial {
        out.push("initial");
    }
    if a.coefficients != b.coefficients && ca.coefficients.regularize == cb.coefficients.regularize {
        out.push("coefficients");
    }
    if ca.run.probe_x != cb.run.probe_x {
        out.push("run.probe_x");
    }
    out
}

pub fn report(paths: &[PathBuf], out: &Path) -> Result<ReportOutcome, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::Config("report needs at least one manifest".into()));
    }
    let manifests: Vec<RunManifest> = paths.iter().map(|p| RunManifest::load(p)).collect::<Result<_, _>>()?;
    let labels: Vec<String> = paths.iter().zip(&manifests).map(|(p, m)| label(p, m)).collect();

    let mut conflict_lines = Vec::new();
    for i in 0..manifests.len() {
        for j in i + 1..manifests.len() {
            let (a, b) = (&manifests[i], &manifests[j]);
            if a.config_hash == b.config_hash && a.command == b.command && a.files != b.files {
                conflict_lines.push(format!(
                    "{} and {} share config hash {} but produced different files",
                    labels[i], labels[j], a.config_hash
                ));
            }
            let c = conflicts(a, b);
            if !c.is_empty() && !a.marginals.is_empty() && !b.marginals.is_empty() {
                conflict_lines.push(format!("{} and {} differ in {}", labels[i], labels[j], c.join(", ")));
            }
        }
    }

    let mut md = String::new();
    let mut failed = Vec::new();
    writeln!(md, "# Run report\n").unwrap();
    if !conflict_lines.is_empty() {
        writeln!(md, "## CONFLICTS\n").unwrap();
        for c in &conflict_lines {
            writeln!(md, "- CONFLICT: {c}").unwrap();
        }
        writeln!(md).unwrap();
    }
    for (m, l) in manifests.iter().zip(&labels) {
        let status = match m.status {
            RunStatus::Failed => "**FAILED**",
            RunStatus::Partial => "**PARTIAL**",
            RunStatus::Passed => "passed",
            RunStatus::Complete => "complete",
        };
        if !m.passed() {
            failed.push(l.clone());
        }
        writeln!(md, "## {l}\n").unwrap();
        writeln!(md, "- status: {status}").unwrap();
        writeln!(md, "- coefficients: {}", m.coefficients).unwrap();
        writeln!(md, "- config hash: `{}`", m.config_hash).unwrap();
        writeln!(md, "- replicas: {}, wall clock {:.2} s\n", m.seeds.len(), m.wall_clock_secs).unwrap();
        for f in &m.failures {
            writeln!(md, "- failure: {f}").unwrap();
        }
        if !m.verdicts.is_empty() {
            writeln!(md, "| test | statistic | se | threshold | verdict |\n|---|---|---|---|---|").unwrap();
            for v in &m.verdicts {
                let verdict = if v.passed { "pass" } else { "**FAILED**" };
                writeln!(
                    md,
                    "| {} | {:.6} | {:.3e} | {:.6} | {verdict} |",
                    v.test_id, v.statistic, v.se, v.threshold
                )
                .unwrap();
            }
            writeln!(md).unwrap();
        }
        if !m.marginals.is_empty() {
            writeln!(md, "| t | x | mean u | se | var u | mean mass | se |\n|---|---|---|---|---|---|---|").unwrap();
            for s in &m.marginals {
                writeln!(
                    md,
                    "| {} | {} | {:.6} | {:.2e} | {:.6} | {:.6} | {:.2e} |",
                    s.time, s.x, s.mean, s.se, s.variance, s.mass_mean, s.mass_se
                )
                .unwrap();
            }
            writeln!(md).unwrap();
        }
        if !m.sweep.is_empty() {
            writeln!(md, "| value | statistic | estimate | se |\n|---|---|---|---|").unwrap();
            for r in &m.sweep {
                writeln!(md, "| {} | {} | {:.6} | {:.2e} |", r.value, r.statistic, r.estimate, r.se).unwrap();
            }
            writeln!(md).unwrap();
        }
    }

    let with_marginals: Vec<usize> = (0..manifests.len()).filter(|&i| !manifests[i].marginals.is_empty()).collect();
    if with_marginals.len() >= 2 {
        writeln!(md, "## Side by side\n").unwrap();
        let mut header = String::from("| t | x |");
        let mut rule = String::from("|---|---|");
        for &i in &with_marginals {
            write!(header, " {} |", manifests[i].scheme).unwrap();
            rule.push_str("---|");
        }
        header.push_str(" z (first two) |");
        rule.push_str("---|");
        writeln!(md, "{header}\n{rule}").unwrap();
        for s in &manifests[with_marginals[0]].marginals {
            let mut row = format!("| {} | {} |", s.time, s.x);
            let mut found = Vec::new();
            for &i in &with_marginals {
                match manifests[i].marginals.iter().find(|o| o.time == s.time && o.x == s.x) {
                    Some(o) => {
                        write!(row, " {:.6} ± {:.2e} |", o.mean, o.se).unwrap();
                        found.push(o);
                    }
                    None => row.push_str(" – |"),
                }
            }
            if found.len() >= 2 {
                let z = (found[0].mean - found[1].mean) / found[0].se.hypot(found[1].se);
                write!(row, " {z:.2} |").unwrap();
            } else {
                row.push_str(" – |");
            }
            writeln!(md, "{row}").unwrap();
        }
        writeln!(md).unwrap();
    }
    if !failed.is_empty() {
        writeln!(md, "**FAILED:** {}", failed.join("; ")).unwrap();
    }

    std::fs::create_dir_all(out)?;
    let mut long = String::from("source,kind,key,time,estimate,se\n");
    let mut vcsv = String::from("source,test_id,statistic,se,threshold,verdict\n");
    for (m, p) in manifests.iter().zip(paths) {
        let src = csv_escape(&p.display().to_string());
        for s in &m.marginals {
            writeln!(long, "{src},marginal_mean,u(x={}),{},{},{}", s.x, s.time, s.mean, s.se).unwrap();
            writeln!(long, "{src},marginal_variance,u(x={}),{},{},", s.x, s.time, s.variance).unwrap();
            writeln!(long, "{src},mass_mean,mass,{},{},{}", s.time, s.mass_mean, s.mass_se).unwrap();
        }
        for r in &m.sweep {
            let key = csv_escape(&format!("{}={}", r.statistic, r.value));
            writeln!(long, "{src},sweep,{key},,{},{}", r.estimate, r.se).unwrap();
        }
        for v in &m.verdicts {
            writeln!(long, "{src},verdict,{},,{},{}", csv_escape(&v.test_id), v.statistic, v.se).unwrap();
            writeln!(vcsv, "{src},{}", v.csv_row()).unwrap();
        }
    }
    std::fs::write(out.join(LONG_CSV), long)?;
    std::fs::write(out.join(VERDICTS_CSV), vcsv)?;
    let path = out.join(REPORT_FILE);
    std::fs::write(&path, md)?;
    Ok(ReportOutcome {
        path,
        failed,
        conflicts: conflict_lines,
    })
}
