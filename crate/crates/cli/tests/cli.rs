use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fbmtrend");

const SUBCOMMANDS: [&str; 8] = [
    "synth",
    "fit-trend",
    "estimate-hurst",
    "test-bm",
    "test-gauss",
    "test-dma",
    "pipeline",
    "plot",
];

// Short series with a pronounced trend so every stage runs in seconds.
const QUICK_CONFIG: &str = r#"
seed = 11

[input.synth]
start_date = "2011-07-29"
start_value = 31.78
n_days = 590
missing_fraction = 0.05
seed = 5
trend = [
    { end = "2011-09-16", slope = 0.10 },
    { end = "2012-02-27", slope = -0.12 },
    { end = "2012-09-13", slope = 0.11 },
    { end = "2013-03-10", slope = -0.13 },
]
fbm = { hurst = 0.427, diffusion = 0.0846 }

[trend]
window = 30
min_separation = 90

[bm_test]
paths = 2000
steps = 256

[gaussianity]
sw_sims = 100
rjb_ns = [30]
rjb_blocks = 2
rjb_iterations = 1000

[dma]
subsets = 4
chi_square_samples = 200
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn fbmtrend")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("quick.toml");
    fs::write(&p, QUICK_CONFIG).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_lists_every_subcommand() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for sub in SUBCOMMANDS {
        assert!(text.contains(sub), "missing {sub} in help");
    }
}

#[test]
fn each_subcommand_has_help_with_common_flags() {
    for sub in SUBCOMMANDS {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success(), "{sub} --help failed");
        let text = stdout(&o);
        for flag in ["--config", "--seed", "--out"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
}

#[test]
fn synth_then_fit_trend_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    let o = run(&["synth", "--seed", "3", "--n-days", "600", "--out", s.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(s.join("series.csv")).unwrap();
    assert_eq!(csv.lines().count(), 601);
    assert!(csv.starts_with("date,value\n2011-07-29,31.78"));
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(s.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["truth"]["hurst"], 0.427);

    let f = tmp.path().join("f");
    let o = run(&[
        "fit-trend",
        "--input",
        s.join("series.csv").to_str().unwrap(),
        "--out",
        f.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("fit-trend: "));
    for name in ["series.csv", "breakpoints.csv", "residuals.csv", "trend.json"] {
        assert!(f.join(name).exists(), "missing {name}");
    }
}

#[test]
fn synth_is_deterministic_in_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |name: &str, seed: &str| {
        let d = tmp.path().join(name);
        let o = run(&["synth", "--seed", seed, "--n-days", "300", "--out", d.to_str().unwrap()]);
        assert!(o.status.success());
        fs::read(d.join("series.csv")).unwrap()
    };
    assert_eq!(read("a", "9"), read("b", "9"));
    assert_ne!(read("a", "9"), read("c", "10"));
}

#[test]
fn statistical_rejection_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("bm");
    // alpha close to 1 rejects whatever the statistic.
    let o = run(&[
        "test-bm",
        "--config",
        &cfg,
        "--alpha",
        "0.999",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bm_test.json")).unwrap()).unwrap();
    assert_eq!(r["decision"], "reject");
}

#[test]
fn estimate_hurst_writes_periodogram() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("h");
    let o = run(&["estimate-hurst", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("periodogram.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("hurst.json")).unwrap()).unwrap();
    assert!(r["spectral"]["beta"].is_number());
    assert!(r["diffusion"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn gauss_and_dma_with_explicit_params() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let g = tmp.path().join("g");
    let o = run(&[
        "test-gauss",
        "--config",
        &cfg,
        "--hurst",
        "0.427",
        "--diffusion",
        "0.0846",
        "--out",
        g.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(g.join("rjb_table.csv"))
        .unwrap()
        .starts_with("block,n=30\n"));
    assert!(g.join("sw_histogram.csv").exists());

    let d = tmp.path().join("d");
    let o = run(&[
        "test-dma",
        "--config",
        &cfg,
        "--hurst",
        "0.427",
        "--diffusion",
        "0.0846",
        "--window",
        "10",
        "--out",
        d.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("dma.json")).unwrap()).unwrap();
    assert_eq!(r["test"]["test"], "dma");
    let p = r["test"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn pipeline_then_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("p");
    let o = run(&["pipeline", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(report["stages_completed"].as_array().unwrap().len(), 12);
    assert!(report["failure"].is_null());
    assert!(stdout(&o).contains("12 of 12 stages completed"));
    assert_eq!(report["seed"], 11);

    let plots = tmp.path().join("plots");
    let o = run(&[
        "plot",
        "--report",
        out.join("report.json").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(&plots).unwrap().count(), 7);
}

#[test]
fn missing_input_is_an_operational_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = run(&[
        "pipeline",
        "--input",
        "/definitely/not/here.csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage load failed"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["failure"]["stage"], "load");
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "unknown_key = 1\n").unwrap();
    let o = run(&["test-bm", "--config", p.to_str().unwrap(), "--preset"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn input_and_preset_conflict() {
    let o = run(&["fit-trend", "--input", "x.csv", "--preset"]);
    assert_eq!(o.status.code(), Some(2));
}
