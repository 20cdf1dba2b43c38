use std::path::Path;
use std::process::Command;

use sdde_cli::config::{self, has_errors, Level};
use sdde_cli::pipeline;
use sdde_core::{FeedbackFn, Rate};

fn sdde() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sdde"));
    c.env_remove("SDDE_WORKERS");
    c
}

fn ov(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Short fig1 run keeping the shipped window shape.
const SHORT_FIG1: &[&str] = &[
    "trajectory.t_end=60.0",
    "measure.start=20.0",
    "measure.end=60.0",
];

#[test]
fn shipped_presets_validate_cleanly() {
    for (name, _) in config::PRESETS {
        let l = config::load(name, &[]).unwrap();
        let diags = l.config.diagnostics(&l.base_dir);
        assert!(
            diags.iter().all(|d| d.level != Level::Error),
            "{name}: {diags:?}"
        );
    }
    let l = config::load("fig1", &[]).unwrap();
    assert!(l.config.diagnostics(&l.base_dir).is_empty());
}

#[test]
fn presets_carry_the_figure_parameters() {
    for (name, p, b, psi, n) in [
        ("fig1", 8.0, 0.0, 0.5, 1),
        ("fig2_p4", 4.0, 0.01, 0.5, 100),
        ("fig2_p6", 6.0, 0.01, 0.5, 100),
        ("fig2_p8", 8.0, 0.01, 0.5, 100),
        ("fig3", 6.0, 0.01, 0.0, 100),
    ] {
        let c = config::load(name, &[]).unwrap().config;
        let m = c.model.as_ref().unwrap();
        assert_eq!(m.gamma, Rate::Constant(5.0), "{name}");
        assert_eq!(m.r, Rate::Constant(10.0), "{name}");
        assert_eq!(m.tau, 1.0, "{name}");
        assert_eq!(m.feedback, FeedbackFn::mackey_glass(p, 1), "{name}");
        assert_eq!(m.beta(), b, "{name}");
        assert_eq!(c.history.constant, Some(psi), "{name}");
        assert_eq!(c.n_trajectories, n, "{name}");
        let noise = c.noise.as_ref().unwrap();
        // a = -b²/2 for unit Brownian noise.
        let a = m.aux_drift(0.0, noise);
        assert!((a + b * b / 2.0).abs() < 1e-18, "{name}: a = {a}");
    }
    let f2 = config::load("fig2_p6", &[]).unwrap().config;
    let a = f2.model.as_ref().unwrap().aux_drift(0.0, f2.noise.as_ref().unwrap());
    assert!((a + 5e-5).abs() < 1e-18);
}

#[test]
fn non_integral_delay_grid_is_reported() {
    let l = config::load("fig1", &ov(&["trajectory.dt=0.0003"])).unwrap();
    let diags = l.config.diagnostics(&l.base_dir);
    assert!(has_errors(&diags));
    assert!(diags.iter().any(|d| d.message.contains("tau/dt must be integral")), "{diags:?}");
}

#[test]
fn jump_bound_condition_is_surfaced() {
    let l = config::load("levy_tail", &ov(&["bounds.alpha=0.5"])).unwrap();
    let diags = l.config.diagnostics(&l.base_dir);
    assert!(has_errors(&diags));
    assert!(
        diags.iter().any(|d| d.message.contains("alpha > lambda_n*zeta*beta")),
        "{diags:?}"
    );
}

#[test]
fn unknown_keys_list_the_valid_ones() {
    let err = config::load("fig1", &ov(&["trajectory.t_ned=5.0"])).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("t_ned") && msg.contains("t_end"), "{msg}");
    let err = config::parse_with_overrides("bogus = 1\n", &[]).unwrap_err();
    assert!(format!("{err:#}").contains("model"));
}

#[test]
fn overrides_reach_nested_tables_and_change_the_hash() {
    let base = config::load("fig1", &[]).unwrap().config;
    let moved = config::load("fig1", &ov(&["outputs.dir=\"elsewhere\""])).unwrap().config;
    assert_eq!(base.hash(), moved.hash());
    let p6 = config::load("fig1", &ov(&["model.feedback.p=6"])).unwrap().config;
    assert_eq!(p6.model.as_ref().unwrap().feedback, FeedbackFn::mackey_glass(6.0, 1));
    assert_ne!(base.hash(), p6.hash());
    let mut seeded = base.clone();
    seeded.set_seed(99);
    assert_eq!(seeded.seed(), 99);
    assert_ne!(base.hash(), seeded.hash());
    assert_eq!(base.hash().len(), 64);
    assert!(config::load("fig1", &ov(&["trajectory"])).is_err());
}

#[test]
fn fig1_figures_pipeline_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let l = config::load("fig1", &ov(SHORT_FIG1)).unwrap();
    let files = sdde_cli::figures(&l, dir.path(), Some(2)).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for want in ["timeseries.csv", "histogram.csv", "phase.csv", "summary.txt"] {
        assert!(names.iter().any(|n| n == want), "{names:?}");
    }
    let header = format!("# {}", l.config.provenance());
    for f in &files {
        assert_eq!(read(f).lines().next().unwrap(), header, "{}", f.display());
    }

    let ts = read(&dir.path().join("timeseries.csv"));
    let rows: Vec<(f64, f64)> = ts
        .lines()
        .skip(2)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[1].parse().unwrap(), c[2].parse().unwrap())
        })
        .collect();
    assert!((rows[0].0 + 1.0).abs() < 1e-12);
    assert!((rows.last().unwrap().0 - 50.0).abs() < 1e-9);
    // History ψ ≡ 0.5 in log space, shown in x.
    assert!((rows[0].1 - 0.5f64.exp()).abs() < 1e-15);

    let hist = read(&dir.path().join("histogram.csv"));
    assert_eq!(hist.lines().nth(1).unwrap(), "bin_lo,bin_hi,mass");
    let mass: f64 = hist.lines().skip(2).map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert!((mass - 1.0).abs() < 1e-9, "{mass}");
    assert_eq!(hist.lines().count(), 2 + 200);
}

#[test]
fn stability_report_for_figure_one() {
    let l = config::load("fig1", &[]).unwrap();
    let rep = pipeline::stability(&l.config, 5).unwrap();
    assert!((rep.x_star.unwrap() - 1.0).abs() < 1e-12);
    assert!((rep.tau_0.unwrap() - 0.1351).abs() < 1e-3);
    let text = pipeline::stability_text(&rep);
    assert!(text.contains("regime: (ii)-unstable"), "{text}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stability.toml");
    pipeline::write_stability_toml(&rep, &l.config.provenance(), &path).unwrap();
    let parsed: toml::Table = toml::from_str(&read(&path)).unwrap();
    assert!(parsed.contains_key("tau_0"));
}

#[test]
fn noisy_ensemble_is_identical_across_worker_counts() {
    let over = ov(&[
        "n_trajectories=8",
        "trajectory.t_end=20.0",
        "measure.start=10.0",
        "measure.end=20.0",
        "outputs.timeseries_end=5.0",
    ]);
    let l = config::load("fig2_p6", &over).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = sdde_cli::figures(&l, a.path(), Some(1)).unwrap();
    let fb = sdde_cli::figures(&l, b.path(), Some(4)).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    // A different seed changes the paths.
    let mut l2 = l.clone();
    l2.config.set_seed(1234);
    let c = tempfile::tempdir().unwrap();
    sdde_cli::figures(&l2, c.path(), Some(2)).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("histogram.csv")).unwrap(),
        std::fs::read(c.path().join("histogram.csv")).unwrap()
    );
}

#[test]
fn bounds_command_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let l = config::load("levy_tail", &[]).unwrap();
    let files = pipeline::bound_curves(&l.config, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    for f in files {
        let text = read(&f);
        assert_eq!(text.lines().nth(1).unwrap(), "R,bound,term_1,term_2,term_3");
        let vals: Vec<f64> = text.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(vals.len(), 25);
        assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{}", f.display());
        assert!(vals.iter().all(|&v| v > 1e-3 * (1.0 - 1e-9) && v < 1.0));
    }
}

#[test]
fn binary_validate_and_exit_codes() {
    let out = sdde().args(["validate", "fig1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");

    let out = sdde().args(["validate", "fig1", "--set", "trajectory.dt=0.0003"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("tau/dt must be integral"));

    let out = sdde().args(["simulate", "fig1", "--set", "bogus.key=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Output directory below a regular file cannot be created.
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = sdde()
        .args(["bounds", "window_sup_brownian", "--out"])
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn binary_verify_fails_with_code_three_when_a_bound_is_violated() {
    // Large jumps under the Brownian bound: the inequality does not apply and fails.
    let dir = tempfile::tempdir().unwrap();
    let out = sdde()
        .args([
            "verify",
            "reverse_sup_brownian",
            "--set",
            "noise.lambda_n=5.0",
            "--set",
            "noise.zeta=50.0",
            "--set",
            "bounds.verify.n_samples=2000",
            "--workers",
            "2",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = read(&dir.path().join("verify_reverse_sup_brownian.csv"));
    assert!(csv.lines().last().unwrap().starts_with("# summary: FAIL"));

    let out = sdde()
        .args(["verify", "window_sup_brownian", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn binary_acceptance_subset() {
    let out = sdde().args(["verify", "--criteria", "1,11"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("criterion")).count(), 2);
}

#[test]
fn window_invariance_against_an_earlier_window() {
    // [2500, 5000] against [5000, 10⁴] on the deterministic attractor.
    let early = config::load("fig1", &ov(&["measure.start=2500.0", "measure.end=5000.0"])).unwrap();
    let late = config::load("fig1", &[]).unwrap();
    let products = pipeline::Products {
        histogram: true,
        ..Default::default()
    };
    let a = pipeline::run_ensemble(&early, None, products).unwrap();
    let b = pipeline::run_ensemble(&late, None, products).unwrap();
    let d = sdde_core::measure::measure_distance(a.histogram.as_ref().unwrap(), b.histogram.as_ref().unwrap()).unwrap();
    assert!(d < 0.05, "{d}");
    assert_eq!(b.histogram.as_ref().unwrap().below, 0);
    assert!(b.support_lower_edge().unwrap() > 0.0);
}
