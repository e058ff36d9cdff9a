use std::path::Path;
use std::process::Command;

use sqs_cli::output::read_table;
use sqs_cli::{cmd_analytic, cmd_run, cmd_table1, CliError, ExperimentConfig};
use sqs_core::par::Execution;

const SMALL: &str = r#"
[field]
dim = 2
eta = 0.5
law = { kind = "bernoulli", q = 0.5 }

[domain]
sizes = [4]
r = 1

[sampler]
mode = "sqs_selection"
m = 4
trials = 40
pilot = 20
"#;

fn sqs(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sqs")).args(args).output().unwrap()
}

fn header_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().take_while(|l| l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn unknown_keys_are_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{SMALL}\n[offline]\nshell = 3\n")).unwrap();
    let out = dir.path().join("out");
    let res = sqs(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
    assert!(matches!(ExperimentConfig::parse("[sampler]\nmode = \"fancy\"\n"), Err(CliError::Config(_))));
    assert!(matches!(ExperimentConfig::parse("[field]\ndim = 2\neta = 0.5\nlaw = { kind = \"bernoulli\", q = 0.5, p = 1 }\n"), Err(CliError::Config(_))));
    assert!(matches!(ExperimentConfig::parse("[field]\ndim = 2\neta = 1.5\nlaw = { kind = \"uniform\" }\n"), Err(CliError::Config(_))));
}

#[test]
fn run_writes_reproducible_files_with_metadata() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = cmd_run(&cfg, a.path(), Execution::Parallel).unwrap();
    cmd_run(&cfg, b.path(), Execution::Sequential).unwrap();
    assert_eq!(first.files.len(), 3);
    for name in ["samples.csv", "summary.csv", "ratios.csv"] {
        let h = header_lines(&a.path().join(name));
        assert!(h.iter().any(|l| l.starts_with("# sqs ")));
        assert!(h.iter().any(|l| *l == format!("# config_hash {}", cfg.hash())));
        assert!(h.iter().any(|l| l.starts_with("# base_seed 0")));
    }
    let (header, rows) = read_table(&a.path().join("samples.csv")).unwrap();
    assert_eq!(header, ["mode", "N", "r", "seed", "err1", "err2", "A11", "A12", "A21", "A22", "iters", "ms"]);
    assert_eq!(rows.len(), 8);
    let (_, rows_b) = read_table(&b.path().join("samples.csv")).unwrap();
    let strip = |rows: &[Vec<String>]| rows.iter().map(|r| r[..11].to_vec()).collect::<Vec<_>>();
    assert_eq!(strip(&rows), strip(&rows_b));
    let (summary_header, summary) = read_table(&a.path().join("summary.csv")).unwrap();
    assert_eq!(summary_header, ["mode", "N", "entry", "mean", "var", "ci95", "ref", "total_error"]);
    let ref11: f64 = summary[0][6].parse().unwrap();
    assert!((ref11 - 0.75f64.sqrt()).abs() < 1e-15);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL.replace("sqs_selection", "classical")).unwrap();
    let out = dir.path().join("o");
    let res = sqs(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "77", "--workers", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (_, rows) = read_table(&out.join("samples.csv")).unwrap();
    let seeds: Vec<&str> = rows.iter().map(|r| r[3].as_str()).collect();
    assert_eq!(seeds, ["77", "78", "79", "80"]);
    assert!(header_lines(&out.join("summary.csv")).contains(&"# base_seed 77".to_string()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("cap.toml");
    std::fs::write(
        &cap,
        SMALL.replace("sizes = [4]", "sizes = [5]").replace("mode = \"sqs_selection\"", "mode = \"sqs_tolerance\"\ntol = 0.0\norder = \"first\"\nrejection_cap = 50"),
    )
    .unwrap();
    let out = dir.path().join("o");
    assert_eq!(sqs(&["run", "--config", cap.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(4));
    let slow = dir.path().join("slow.toml");
    std::fs::write(&slow, SMALL.replace("m = 4", "m = 4\nmax_iter = 2").replace("sqs_selection", "classical")).unwrap();
    assert_eq!(sqs(&["run", "--config", slow.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(sqs(&["run", "--out", out.to_str().unwrap()]).status.code(), Some(2));
    let failing = dir.path().join("fail.toml");
    std::fs::write(&failing, "[analytic]\ndraws = 200\nwindow_mean = { n = 50, windows = [[-1.0, 1.0]], ratio_tol = 1e-9 }\n").unwrap();
    assert_eq!(sqs(&["analytic", "--config", failing.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(5));
}

#[test]
fn table1_flags_zero_contrast() {
    let cfg = ExperimentConfig::parse(&format!(
        "{}\n[table1]\ncontrasts = [1.0, 3.0]\n",
        SMALL.replace("m = 4", "m = 6").replace("trials = 40", "trials = 30")
    ))
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_table1(&cfg, dir.path(), Execution::Parallel).unwrap();
    assert_eq!(rows[0].eta, 0.0);
    assert_eq!(rows[0].v_mc, 0.0);
    assert!(rows[0].ratio1.is_none() && rows[0].ratio2.is_none());
    assert!(rows[1].ratio1.is_some());
    let (header, table) = read_table(&dir.path().join("table1.csv")).unwrap();
    assert_eq!(header, ["contrast", "V_MC", "V_exactSQS1", "V_SQS2", "ratio1", "ratio2"]);
    assert_eq!(table[0][4], "degenerate");
}

#[test]
fn analytic_default_checks_pass_at_small_scale() {
    let cfg = ExperimentConfig::parse(
        "[analytic]\ndraws = 20000\nwindow_mean = { n = 10000, windows = [[1.0, 2.0]], ratio_tol = 0.05 }\ncomposite = { n = 200, sweep = [] }\n",
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_analytic(&cfg, dir.path(), Execution::Parallel).unwrap();
    assert!(rows.iter().any(|r| r.check == "harmonic_relative_error" && r.measured <= 1e-8));
    assert!(rows.iter().all(|r| r.pass));
}
