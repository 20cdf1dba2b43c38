//! Configuration-driven experiments on top of `sdde-core`.

pub mod config;
pub mod pipeline;
pub mod suite;

use std::path::{Path, PathBuf};

use config::{Artifact, LoadedConfig};
use pipeline::Products;

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Ok = 0,
    Validation = 1,
    Runtime = 2,
    Verification = 3,
}

/// Validation for bad inputs and unmet preconditions, runtime otherwise.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sdde_core::Error>() {
            return match e {
                sdde_core::Error::InvalidArgument(_)
                | sdde_core::Error::Precondition(_)
                | sdde_core::Error::Domain(_) => ExitKind::Validation,
                _ => ExitKind::Runtime,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ExitKind::Runtime;
        }
    }
    ExitKind::Validation
}

fn wants(loaded: &LoadedConfig, a: Artifact) -> bool {
    loaded.config.outputs.artifacts.contains(&a)
}

fn warn_blow_downs(res: &pipeline::EnsembleResult) {
    for (i, t) in &res.blow_downs {
        eprintln!("warning: trajectory {i} blew down at t = {t}; its output ends there and it is excluded from measures");
    }
}

/// Time series, histogram, phase portrait and summary, as selected in `outputs.artifacts`.
pub fn figures(loaded: &LoadedConfig, dir: &Path, workers: Option<usize>) -> anyhow::Result<Vec<PathBuf>> {
    let products = Products {
        timeseries: wants(loaded, Artifact::Timeseries),
        histogram: wants(loaded, Artifact::Histogram),
        phase: wants(loaded, Artifact::Phase),
        pathwise: false,
    };
    let res = pipeline::run_ensemble(loaded, workers, products)?;
    warn_blow_downs(&res);
    pipeline::ensure_dir(dir)?;
    let mut files = Vec::new();
    if products.timeseries {
        files.push(pipeline::write_timeseries(&res, dir)?);
    }
    if products.histogram {
        files.push(pipeline::write_histogram(&res, dir)?);
        files.extend(pipeline::write_stationarity(&res, dir)?);
    }
    if products.phase {
        files.push(pipeline::write_phase(&res, dir)?);
    }
    if wants(loaded, Artifact::Summary) {
        files.push(pipeline::write_summary(&res, dir)?);
    }
    Ok(files)
}

/// Time series and summary only.
pub fn simulate(loaded: &LoadedConfig, dir: &Path, workers: Option<usize>) -> anyhow::Result<Vec<PathBuf>> {
    let products = Products {
        timeseries: true,
        ..Products::default()
    };
    let res = pipeline::run_ensemble(loaded, workers, products)?;
    warn_blow_downs(&res);
    pipeline::ensure_dir(dir)?;
    Ok(vec![pipeline::write_timeseries(&res, dir)?, pipeline::write_summary(&res, dir)?])
}

/// Occupation histogram, optional window comparison, and summary.
pub fn measure(loaded: &LoadedConfig, dir: &Path, workers: Option<usize>) -> anyhow::Result<Vec<PathBuf>> {
    let products = Products {
        histogram: true,
        ..Products::default()
    };
    let res = pipeline::run_ensemble(loaded, workers, products)?;
    warn_blow_downs(&res);
    pipeline::ensure_dir(dir)?;
    let mut files = vec![pipeline::write_histogram(&res, dir)?];
    files.extend(pipeline::write_stationarity(&res, dir)?);
    files.push(pipeline::write_summary(&res, dir)?);
    Ok(files)
}

pub fn phase(loaded: &LoadedConfig, dir: &Path, workers: Option<usize>) -> anyhow::Result<Vec<PathBuf>> {
    let products = Products {
        phase: true,
        ..Products::default()
    };
    let res = pipeline::run_ensemble(loaded, workers, products)?;
    warn_blow_downs(&res);
    pipeline::ensure_dir(dir)?;
    Ok(vec![pipeline::write_phase(&res, dir)?])
}

/// Outcome of `verify` on a config: files written and overall pass.
pub struct ConfigVerification {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
    pub pass: bool,
}

/// Monte Carlo bound checks and pathwise checks configured in the file.
pub fn verify_config(loaded: &LoadedConfig, dir: &Path, workers: Option<usize>) -> anyhow::Result<ConfigVerification> {
    let cfg = &loaded.config;
    let mut out = ConfigVerification {
        files: Vec::new(),
        lines: Vec::new(),
        pass: true,
    };
    let has_mc = cfg.bounds.as_ref().is_some_and(|b| b.verify.is_some());
    if !has_mc && cfg.pathwise.is_none() {
        anyhow::bail!("nothing to verify: add [bounds.verify] or [pathwise] to the config");
    }
    pipeline::ensure_dir(dir)?;
    if has_mc {
        let reports = pipeline::verify_bounds(cfg, workers)?;
        out.files.extend(pipeline::write_verification(cfg, &reports, dir)?);
        for (kind, rep) in &reports {
            out.pass &= rep.pass;
            out.lines.push(format!(
                "{}: {} ({} of {} points checked, {} advisories)",
                pipeline::kind_name(*kind),
                if rep.pass { "PASS" } else { "FAIL" },
                rep.checked(),
                rep.rows.len(),
                rep.advisories.len()
            ));
        }
    }
    if cfg.pathwise.is_some() {
        let products = Products {
            pathwise: true,
            ..Products::default()
        };
        let res = pipeline::run_ensemble(loaded, workers, products)?;
        warn_blow_downs(&res);
        out.files.push(pipeline::write_summary(&res, dir)?);
        for (name, rep) in [("upper", &res.upper), ("lower", &res.lower)] {
            if let Some(r) = rep {
                out.pass &= r.passed();
                out.lines.push(format!(
                    "pathwise {name}: {} ({} violations, {} active of {} checked)",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.violations.len(),
                    r.active,
                    r.checked
                ));
            }
        }
    }
    Ok(out)
}
