use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
[model]
sites = 4
field = 1.0
alpha = 1.5

[spectral]
dt = 0.1
t_max = 2.0
delta = 2.0
p_cut = 1e-6

[sampler]
temperatures = [2.0, 6.0]
n_mc = 600
burn_in = 100
n_chains = 2
seed = 11
error_scaling = [100, 250, 500]

[output]
traces = true
"#;

const TINY_PROTOCOL: &str = r#"
[protocol]
kind = "ghz"
spam_p = 1e-3
spam_inversion = true

[[protocol.levels]]
shots = 200
p_cut = 1e-2

[[protocol.levels]]
"#;

fn echotherm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echotherm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_in(dir: &Path, command: &str, config: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(format!("out-{command}-{}", extra.join("-")));
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (echotherm(&args), out)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn check_schema(summary: &Value) {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/summary.schema.json");
    let schema = read_json(&schema_path);
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(summary)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "timing.json" {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn run_writes_documented_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let (output, out) = run_in(tmp.path(), "run", &config, &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let summary = read_json(&out.join("summary.json"));
    check_schema(&summary);
    assert_eq!(summary["status"], "complete");
    let points = summary["runs"][0]["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    for p in points {
        assert_eq!(p["chains"], 2);
        let msq = p["estimates"]["msq"]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&msq));
    }
    assert_eq!(summary["error_scaling"]["points"].as_array().unwrap().len(), 3);

    assert_eq!(header(&out.join("curves.csv")), "T,msq,msq_err,binder,binder_err,energy,cv");
    assert_eq!(header(&out.join("error_scaling.csv")), "n_mc,error");
    assert_eq!(
        header(&out.join("traces/exact_T0_chain0.csv")),
        "iteration,state,diagonal_energy,sz,accepted,log_weight"
    );
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["config"]["model"]["sites"], 4);
    let timing = read_json(&out.join("timing.json"));
    assert!(timing["wall_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{TINY}{TINY_PROTOCOL}"));
    for command in ["run", "protocol"] {
        let (a, out_a) = run_in(tmp.path(), command, &config, &["--threads", "1"]);
        let (b, out_b) = run_in(tmp.path(), command, &config, &["--threads", "3"]);
        assert!(a.status.success() && b.status.success());
        let (sa, sb) = (snapshot(&out_a), snapshot(&out_b));
        assert!(!sa.is_empty());
        assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
        for (name, bytes) in &sa {
            assert!(bytes == &sb[name], "{command}: {} differs", name.display());
        }
    }
}

#[test]
fn seed_flag_changes_the_chains() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let (_, a) = run_in(tmp.path(), "run", &config, &["--seed", "1"]);
    let (_, b) = run_in(tmp.path(), "run", &config, &["--seed", "2"]);
    assert_ne!(fs::read(a.join("curves.csv")).unwrap(), fs::read(b.join("curves.csv")).unwrap());
    assert_eq!(read_json(&a.join("manifest.json"))["config"]["sampler"]["seed"], 1);
}

#[test]
fn protocol_reports_budget_and_levels() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{TINY}{TINY_PROTOCOL}"));
    let (output, out) = run_in(tmp.path(), "protocol", &config, &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary = read_json(&out.join("summary.json"));
    check_schema(&summary);
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs[0]["label"], "shots-200");
    assert_eq!(runs[1]["label"], "shots-exact");
    // GHZ: N_MC · (t_max/Δt) · N_s per chain, 2 temperatures × 2 chains.
    assert_eq!(runs[0]["nominal_shot_budget"], 4 * 600 * 20 * 200);
    assert!(runs[0]["measured_shots"].as_u64().unwrap() > 0);
    assert_eq!(runs[1]["nominal_shot_budget"], Value::Null);
    assert_eq!(runs[1]["measured_shots"], 0);
    for label in ["shots-200", "shots-exact"] {
        assert_eq!(
            header(&out.join(format!("curves_{label}.csv"))),
            "T,msq,msq_err,binder,binder_err,energy,cv"
        );
    }
}

#[test]
fn exact_protocol_level_matches_noiseless_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &format!("{TINY}\n[protocol]\nkind = \"sequential\"\n\n[[protocol.levels]]\n"),
    );
    let (_, run) = run_in(tmp.path(), "run", &config, &[]);
    let (_, protocol) = run_in(tmp.path(), "protocol", &config, &[]);
    let parse = |path: PathBuf| -> Vec<f64> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .flat_map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    let a = parse(run.join("curves.csv"));
    let b = parse(protocol.join("curves_shots-exact.csv"));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn oracle_and_echo_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{TINY}{TINY_PROTOCOL}"));
    let (output, out) = run_in(tmp.path(), "oracle", &config, &[]);
    assert!(output.status.success());
    assert_eq!(header(&out.join("oracle.csv")), "T,msq,binder,energy,cv");
    assert_eq!(fs::read_to_string(out.join("oracle.csv")).unwrap().lines().count(), 3);

    let (output, out) = run_in(tmp.path(), "echo", &config, &["--state", "1100"]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    for bits in ["1111", "1010", "1100"] {
        assert_eq!(header(&out.join(format!("echo_{bits}.csv"))), "t,re,im");
        assert_eq!(header(&out.join(format!("work_{bits}.csv"))), "omega_shifted,weight");
        assert_eq!(header(&out.join(format!("echo_{bits}_shots-200.csv"))), "t,re,im");
        assert_eq!(header(&out.join(format!("counts_{bits}_shots-200.csv"))), "j,theta,t,hits,shots");
    }
    let echo = fs::read_to_string(out.join("echo_1100.csv")).unwrap();
    assert_eq!(echo.lines().count(), 22);
    assert!(echo.lines().nth(1).unwrap().starts_with("0,1,0"));
}

#[test]
fn configuration_errors_exit_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<(String, Vec<&str>, &str)> = vec![
        (TINY.replace("delta = 2.0", "delta = -2.0"), vec![], "spectral.delta"),
        (TINY.replace("burn_in = 100", "burn_in = 600"), vec![], "sampler.burn_in"),
        (TINY.replace("[model]", "[model]\ncolour = 1"), vec![], "colour"),
        (TINY.replace("sites = 4", "sites = 15"), vec![], "model.sites"),
        (TINY.to_string(), vec!["--state", "10x1"], "state"),
        (TINY.to_string(), vec!["--state", "101"], "state"),
    ];
    for (i, (text, extra, needle)) in cases.iter().enumerate() {
        let dir = tmp.path().join(i.to_string());
        fs::create_dir_all(&dir).unwrap();
        let config = write_config(&dir, text);
        let command = if *needle == "model.sites" {
            "oracle"
        } else if *needle == "state" {
            "echo"
        } else {
            "run"
        };
        let (output, _) = run_in(&dir, command, &config, extra);
        let stderr = String::from_utf8_lossy(&output.stderr);
        assert_eq!(output.status.code(), Some(1), "case {i}: {stderr}");
        assert!(stderr.contains(needle), "case {i}: {stderr}");
    }

    let output = echotherm(&["run", "--preset", "no-such-preset"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("fig3-L8"));

    let config = write_config(tmp.path(), TINY);
    let (output, _) = run_in(tmp.path(), "protocol", &config, &[]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn presets_are_listed() {
    let output = echotherm(&["presets"]);
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    for name in ["fig3-L8", "fig2-L16", "fig4-noise", "fig4-noise-100k", "fig4-exact"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from\n{text}");
    }
}
