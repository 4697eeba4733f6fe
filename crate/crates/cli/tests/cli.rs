use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nacs_core::costmodel::{count_accesses, oracle_simulate, HardwareCostTables, OracleLimits};
use nacs_core::gads::{AcceleratorConfig, DataflowDesign, NocChoice};
use nacs_core::workload::{ConvLayerDesc, NetworkDesc};
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn nacs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nacs")).args(args).current_dir(root()).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string(v).unwrap()).unwrap();
    path
}

fn smoke_with(edit: impl FnOnce(&mut Value)) -> (tempfile::TempDir, PathBuf) {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(config("smoke.json")).unwrap()).unwrap();
    edit(&mut v);
    let dir = tempfile::tempdir().unwrap();
    let path = write_json(dir.path(), "cfg.json", &v);
    (dir, path)
}

#[test]
fn one_mac_network_takes_one_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let net = write_json(dir.path(), "net.json", &NetworkDesc::new(vec![ConvLayerDesc::standard(1, 1, 1, 1, 1, 1)]));
    let cfg = AcceleratorConfig::multi_cycle(1, DataflowDesign::trivial(NocChoice::OutputParallel));
    let accel = write_json(dir.path(), "accel.json", &cfg);
    let o = nacs(&["estimate", "--network", p(&net), "--accel", p(&accel)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["report"]["cycles"], 1);
    assert_eq!(v["legality"]["legal"], true);
}

#[test]
fn estimate_matches_golden_bytes() {
    let o = nacs(&["estimate", "--network", p(&golden("network.json")), "--accel", p(&golden("accel.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let expected = fs::read(golden("estimate.json")).unwrap();
    assert_eq!(o.stdout, expected);
}

#[test]
fn golden_counts_agree_with_oracle() {
    let net: NetworkDesc = serde_json::from_str(&fs::read_to_string(golden("network.json")).unwrap()).unwrap();
    let cfg: AcceleratorConfig = serde_json::from_str(&fs::read_to_string(golden("accel.json")).unwrap()).unwrap();
    let tables = HardwareCostTables::default();
    for (i, layer) in net.layers.iter().enumerate() {
        let design = &cfg.designs[cfg.design_index(i)];
        let oracle = oracle_simulate(layer, design, &OracleLimits::from_tables(&tables)).unwrap();
        assert_eq!(count_accesses(layer, design).unwrap(), oracle.counts, "layer {i}");
    }
}

#[test]
fn breakdown_csv_has_header_and_one_row_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    let o = nacs(&[
        "estimate",
        "--network",
        p(&golden("network.json")),
        "--accel",
        p(&golden("accel.json")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("breakdown.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("layer,chunk,macs,"));
    assert_eq!(lines.len(), 4);
    let cols = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == cols));
    assert_eq!(fs::read(dir.path().join("result.json")).unwrap(), o.stdout);
}

#[test]
fn illegal_config_exits_2_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(golden("accel.json")).unwrap()).unwrap();
    cfg["max_pes"] = Value::from(2);
    let accel = write_json(dir.path(), "accel.json", &cfg);
    let o = nacs(&["estimate", "--network", p(&golden("network.json")), "--accel", p(&accel)]);
    assert_eq!(code(&o), 2);
    let v = json(&o);
    assert_eq!(v["legality"]["legal"], false);
    assert!(v["report"]["cycles"].as_u64().unwrap() > 0);
    assert!(stderr(&o).contains("pe_overflow"));
}

#[test]
fn parse_errors_exit_1_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"layers\": [\n    { \"x\": 1,, }\n  ]\n}\n").unwrap();
    let o = nacs(&["estimate", "--network", p(&bad), "--accel", p(&golden("accel.json"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));

    let (_d, cfg) = smoke_with(|v| v["cosearch"]["bogus"] = Value::from(1));
    let o = nacs(&["cosearch", "--config", p(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));

    let (_d, cfg) = smoke_with(|v| v["schema_version"] = Value::from(99));
    assert_eq!(code(&nacs(&["das", "--config", p(&cfg)])), 1);
}

#[test]
fn no_legal_accelerator_exits_3() {
    let (_d, cfg) = smoke_with(|v| v["cost_tables"]["rf_capacity"] = Value::from(1));
    let o = nacs(&["das", "--config", p(&cfg)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

fn run_to_dir(cmd: &str, seed: &str) -> (tempfile::TempDir, Output) {
    let dir = tempfile::tempdir().unwrap();
    let o = nacs(&[cmd, "--config", p(&config("smoke.json")), "--seed", seed, "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    (dir, o)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn commands_are_deterministic() {
    for cmd in ["das", "cosearch", "seq", "random"] {
        let (a, oa) = run_to_dir(cmd, "5");
        let (b, ob) = run_to_dir(cmd, "5");
        assert_eq!(oa.stdout, ob.stdout, "{cmd}");
        let fa = files(a.path());
        assert!(fa.len() >= 2, "{cmd} wrote {:?}", fa.iter().map(|f| &f.0).collect::<Vec<_>>());
        assert_eq!(fa, files(b.path()), "{cmd}");
    }
}

fn shape(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), shape(v))).collect()),
        Value::Array(a) => Value::Array(a.first().map(shape).into_iter().collect()),
        Value::Number(_) => Value::from(0),
        _ => Value::Null,
    }
}

#[test]
fn seed_changes_trace_not_schema() {
    let (a, oa) = run_to_dir("cosearch", "1");
    let (b, ob) = run_to_dir("cosearch", "2");
    let ta = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    let tb = fs::read_to_string(b.path().join("trace.csv")).unwrap();
    assert_ne!(ta, tb);
    assert_eq!(ta.lines().next(), Some("epoch,val_loss,hw_loss,mean_das_cost,incumbent"));
    assert_eq!(ta.lines().next(), tb.lines().next());
    let (va, vb) = (json(&oa), json(&ob));
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&va), keys(&vb));
    assert_eq!(shape(&va["report"]), shape(&vb["report"]));
    assert_eq!(va["schema_version"], 1);
}

#[test]
fn auto_lambda_is_logged() {
    let o = nacs(&["cosearch", "--config", p(&config("smoke.json"))]);
    assert_eq!(code(&o), 0);
    let err = stderr(&o);
    let line = err.lines().find(|l| l.starts_with("lambda = ")).expect("lambda logged");
    let logged: f64 = line["lambda = ".len()..].parse().unwrap();
    assert_eq!(json(&o)["lambda"].as_f64().unwrap(), logged);
    assert!(logged > 0.0);
}

#[test]
fn results_pass_validation() {
    for cmd in ["das", "cosearch", "seq"] {
        let o = nacs(&[cmd, "--config", p(&config("smoke.json"))]);
        assert_eq!(code(&o), 0);
        let v = json(&o);
        assert_eq!(v["legality"]["violations"], Value::Array(vec![]), "{cmd}");
    }
}

#[test]
fn smoke_config_is_fast() {
    let t = Instant::now();
    for cmd in ["das", "cosearch", "seq", "random"] {
        let o = nacs(&[cmd, "--config", p(&config("smoke.json"))]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    assert!(t.elapsed() < Duration::from_secs(10), "{:?}", t.elapsed());
}

#[test]
fn oracle_check_passes_and_catches_corruption() {
    let o = nacs(&["oracle-check", "--config", p(&config("smoke.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert!(v["sweep"]["checked"].as_u64().unwrap() > 0);
    assert_eq!(v["sweep"]["mismatches"], 0);

    let o = nacs(&["oracle-check", "--config", p(&config("smoke.json")), "--corrupt-reuse"]);
    assert_eq!(code(&o), 2);
    let v = json(&o);
    assert!(v["sweep"]["first_counterexample"].is_object());
    assert!(stderr(&o).starts_with("FAIL"));

    let (_d, cfg) = smoke_with(|v| v["oracle_sweep"]["layers"] = Value::Array(vec![]));
    let o = nacs(&["oracle-check", "--config", p(&cfg)]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["sweep"]["checked"], 0);
}

#[test]
fn enumerate_reports_sizes() {
    let o = nacs(&["enumerate", "--config", p(&config("smoke.json"))]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_eq!(v["network_space"]["positions"], 2);
    assert_eq!(v["accelerator_space"]["dims"]["X"]["divisors"], serde_json::json!([1, 2, 4, 8]));
    assert!(v["accelerator_space"]["log10_size"].as_f64().unwrap() > 1.0);
}

#[test]
fn config_dir_env_var_supplies_default() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(config("smoke.json"), dir.path().join("default.json")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nacs"))
        .args(["enumerate"])
        .env("NACS_CONFIG_DIR", dir.path())
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["network_space"]["positions"], 2);
}

#[test]
fn threads_flag_keeps_results() {
    let a = nacs(&["--threads", "1", "cosearch", "--config", p(&config("smoke.json"))]);
    let b = nacs(&["cosearch", "--config", p(&config("smoke.json"))]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}
