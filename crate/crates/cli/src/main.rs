use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use nacs_core::config::{RunConfig, SCHEMA_VERSION};
use nacs_core::cosearch::{self, CoSearchResult, RandomPoint};
use nacs_core::costmodel::{self, network_cost, CostReport, HardwareCostTables};
use nacs_core::das::{das_optimize_network, DasTraceRow};
use nacs_core::gads::{divisors, validate, AccelSpaceSpec, AcceleratorConfig, AcceleratorSpace, LegalityReport};
use nacs_core::workload::{Dim, NetworkDesc};

const EXIT_PARSE: u8 = 1;
const EXIT_VIOLATIONS: u8 = 2;
const EXIT_NO_LEGAL: u8 = 3;

#[derive(Parser)]
#[command(name = "nacs", version, about = "Network/accelerator co-search")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (default: $NACS_CONFIG_DIR/default.json, else configs/default.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for result and trace files (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cost of one network on one accelerator.
    Estimate {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        accel: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Accelerator search for a fixed network.
    Das {
        /// Network JSON; defaults to the first non-skip candidate at every position.
        #[arg(long)]
        network: Option<PathBuf>,
        /// Candidate index per position, comma separated.
        #[arg(long, value_delimiter = ',', conflicts_with = "network")]
        choices: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
    /// Joint network/accelerator search.
    Cosearch {
        #[command(flatten)]
        common: Common,
    },
    /// Network search against MACs, then accelerator search.
    Seq {
        #[command(flatten)]
        common: Common,
    },
    /// Uniform random search over both spaces.
    Random {
        #[command(flatten)]
        common: Common,
    },
    /// Compare the analytical access model with the loop-nest oracle.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt_reuse: bool,
    },
    /// Space sizes and divisor tables.
    Enumerate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let code = match err.downcast_ref::<nacs_core::Error>() {
            Some(nacs_core::Error::NoLegalConfig { .. }) => EXIT_NO_LEGAL,
            _ => EXIT_PARSE,
        };
        Failure { code, err }
    }
}

type Outcome = Result<u8, Failure>;

fn default_config_path() -> PathBuf {
    match std::env::var_os("NACS_CONFIG_DIR") {
        Some(dir) => Path::new(&dir).join("default.json"),
        None => PathBuf::from("configs/default.json"),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let path = common.config.clone().unwrap_or_else(default_config_path);
    let text = fs::read_to_string(&path).with_context(|| format!("{}: cannot read", path.display()))?;
    let cfg = RunConfig::from_json(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_dir(common: &Common, cfg: Option<&RunConfig>) -> Option<PathBuf> {
    common.out.clone().or_else(|| cfg.and_then(|c| c.output.dir.as_ref().map(PathBuf::from)))
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn to_json(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

fn emit(dir: Option<&Path>, result: &Value, csvs: &[(&str, String)]) -> anyhow::Result<()> {
    let text = to_json(result);
    print!("{text}");
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("{}: cannot create", dir.display()))?;
        fs::write(dir.join("result.json"), &text)?;
        for (name, body) in csvs {
            fs::write(dir.join(name), body)?;
        }
    }
    Ok(())
}

fn envelope(command: &str, body: Value) -> Value {
    let mut v = json!({ "schema_version": SCHEMA_VERSION, "command": command });
    if let (Some(o), Value::Object(b)) = (v.as_object_mut(), body) {
        o.extend(b);
    }
    v
}

fn breakdown_csv(report: &CostReport) -> String {
    let mut s = String::from("layer,chunk,macs,pe_used,compute_cycles,dram_cycles,noc_cycles,cycles,energy");
    for level in costmodel::LEVEL_NAMES {
        for t in ["weights", "ifmap", "ofmap"] {
            let _ = write!(s, ",{level}_{t}_reads,{level}_{t}_writes");
        }
    }
    s.push('\n');
    for l in &report.layers {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            l.layer,
            l.chunk,
            l.macs,
            l.pe_used,
            l.compute_cycles,
            l.dram_cycles,
            l.noc_cycles,
            l.cycles,
            f(l.energy)
        );
        for tc in l.accesses.levels() {
            for rw in [tc.weights, tc.ifmap, tc.ofmap] {
                let _ = write!(s, ",{},{}", rw.reads, rw.writes);
            }
        }
        s.push('\n');
    }
    s
}

fn das_trace_csv(rows: &[DasTraceRow]) -> String {
    let mut s = String::from("step,sample,temp,sampled_cost,incumbent_cost,legal\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step,
            r.sample,
            f(r.temp),
            f(r.sampled_cost),
            f(r.incumbent_cost),
            r.legal
        );
    }
    s
}

fn epoch_trace_csv(r: &CoSearchResult) -> String {
    let mut s = String::from("epoch,val_loss,hw_loss,mean_das_cost,incumbent\n");
    for t in &r.trace {
        let _ = writeln!(s, "{},{},{},{},{}", t.epoch, f(t.val_loss), f(t.hw_loss), f(t.mean_das_cost), f(t.incumbent));
    }
    s
}

fn points_csv(points: &[RandomPoint]) -> String {
    let mut s = String::from("choices,accuracy,cost\n");
    for p in points {
        let c: Vec<String> = p.choices.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "{},{},{}", c.join(" "), f(p.accuracy), f(p.cost));
    }
    s
}

fn legality_json(l: &LegalityReport) -> Value {
    json!({ "legal": l.is_legal(), "overflow": l.overflow_sum(), "violations": l.violations })
}

fn estimate(network: &Path, accel: &Path, common: &Common) -> Outcome {
    let net: NetworkDesc = read_json(network)?;
    net.validate()?;
    let config: AcceleratorConfig = read_json(accel)?;
    let (spec, tables, dir) = match &common.config {
        Some(_) => {
            let cfg = load_config(common)?;
            let dir = out_dir(common, Some(&cfg));
            (cfg.accelerator_space, cfg.cost_tables, dir)
        }
        None => (AccelSpaceSpec::default(), HardwareCostTables::default(), out_dir(common, None)),
    };
    let space = AcceleratorSpace::for_network(spec, &net)?;
    let legality = validate(&config, &net, &space, &tables);
    let report = network_cost(&net, &config, &tables)?;
    let body = json!({ "legality": legality_json(&legality), "report": report });
    emit(dir.as_deref(), &envelope("estimate", body), &[("breakdown.csv", breakdown_csv(&report))])?;
    if !legality.is_legal() {
        for v in &legality.violations {
            eprintln!("violation: {}", serde_json::to_string(v)?);
        }
        return Ok(EXIT_VIOLATIONS);
    }
    Ok(0)
}

fn das(network: Option<&Path>, choices: Option<&[usize]>, common: &Common) -> Outcome {
    let cfg = load_config(common)?;
    let space = &cfg.network_space;
    let net = match (network, choices) {
        (Some(p), _) => read_json::<NetworkDesc>(p)?,
        (None, Some(c)) => space.expand(c)?,
        (None, None) => {
            let mask = space.allowed_mask();
            let c: Vec<usize> = mask
                .iter()
                .map(|m| {
                    (0..m.len())
                        .find(|&k| m[k] && !space.candidates[k].is_skip)
                        .or_else(|| m.iter().position(|&a| a))
                        .unwrap_or(0)
                })
                .collect();
            space.expand(&c)?
        }
    };
    net.validate()?;
    let accel = AcceleratorSpace::for_network(cfg.accelerator_space.clone(), &net)?;
    let objective = cfg.cosearch.objective;
    let r = das_optimize_network(&net, &accel, &cfg.cost_tables, objective, &cfg.das, None)?;
    let report = network_cost(&net, &r.best, &cfg.cost_tables)?;
    let legality = validate(&r.best, &net, &accel, &cfg.cost_tables);
    let body = json!({
        "objective": objective,
        "cost": r.best_cost,
        "legal_samples": r.legal_samples,
        "config": r.best,
        "legality": legality_json(&legality),
        "report": report,
    });
    let dir = out_dir(common, Some(&cfg));
    emit(dir.as_deref(), &envelope("das", body), &[("trace.csv", das_trace_csv(&r.trace))])?;
    Ok(0)
}

fn search(common: &Common, sequential: bool) -> Outcome {
    let cfg = load_config(common)?;
    if cfg.cosearch.lambda.is_none() {
        eprintln!("lambda not set; balancing against the initial validation loss");
    }
    let problem = cfg.problem();
    let r = if sequential {
        cosearch::run_sequential_baseline(&problem, &cfg.cosearch, &cfg.das, &cfg.dns)?
    } else {
        cosearch::run(&problem, &cfg.cosearch, &cfg.das, &cfg.dns)?
    };
    if cfg.cosearch.lambda.is_none() {
        eprintln!("lambda = {}", r.lambda);
    }
    let name = if sequential { "seq" } else { "cosearch" };
    let body = serde_json::to_value(&r)?;
    let dir = out_dir(common, Some(&cfg));
    emit(dir.as_deref(), &envelope(name, body), &[("trace.csv", epoch_trace_csv(&r))])?;
    Ok(0)
}

fn random(common: &Common) -> Outcome {
    let cfg = load_config(common)?;
    let r = cosearch::run_random_baseline(&cfg.problem(), &cfg.random, cfg.cosearch.objective, &cfg.dns)?;
    let body = serde_json::to_value(&r)?;
    let dir = out_dir(common, Some(&cfg));
    emit(
        dir.as_deref(),
        &envelope("random", body),
        &[("points.csv", points_csv(&r.points)), ("pareto.csv", points_csv(&r.pareto))],
    )?;
    Ok(0)
}

fn oracle_check(common: &Common, corrupt: bool) -> Outcome {
    let cfg = load_config(common)?;
    let model = if corrupt { costmodel::corrupted_reuse_model } else { costmodel::analytical_model };
    let report = costmodel::run_sweep(&cfg.oracle_sweep, model)?;
    eprintln!(
        "{}: {} configs checked, {} skipped for capacity, {} mismatches",
        if report.passed() { "pass" } else { "FAIL" },
        report.checked,
        report.skipped_capacity,
        report.mismatches
    );
    let body = json!({ "passed": report.passed(), "sweep": report });
    emit(out_dir(common, Some(&cfg)).as_deref(), &envelope("oracle-check", body), &[])?;
    Ok(if report.passed() { 0 } else { EXIT_VIOLATIONS })
}

fn enumerate(common: &Common) -> Outcome {
    let cfg = load_config(common)?;
    let space = &cfg.network_space;
    let mask = space.allowed_mask();
    let networks: u128 = mask.iter().map(|m| m.iter().filter(|&&a| a).count() as u128).product();
    let accel = cfg.problem().accel_space()?;
    let size = accel.space_size();
    let mut dims = serde_json::Map::new();
    for (d, dim) in Dim::ALL.iter().enumerate() {
        let r = accel.reference_dims[d];
        dims.insert(
            format!("{dim:?}"),
            json!({ "reference": r, "divisors": divisors(r), "tile_options": accel.tile_options[d] }),
        );
    }
    let body = json!({
        "network_space": {
            "positions": space.num_layers(),
            "candidates": space.num_candidates(),
            "allowed": mask,
            "networks": networks.to_string(),
        },
        "accelerator_space": {
            "slots": accel.slots.len(),
            "log10_size": size.log10,
            "exact_size": size.exact.map(|n| n.to_string()),
            "dims": dims,
        },
    });
    emit(out_dir(common, Some(&cfg)).as_deref(), &envelope("enumerate", body), &[])?;
    Ok(0)
}

fn dispatch(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.cmd {
        Cmd::Estimate { network, accel, common } => estimate(network, accel, common),
        Cmd::Das { network, choices, common } => das(network.as_deref(), choices.as_deref(), common),
        Cmd::Cosearch { common } => search(common, false),
        Cmd::Seq { common } => search(common, true),
        Cmd::Random { common } => random(common),
        Cmd::OracleCheck { common, corrupt_reuse } => oracle_check(common, *corrupt_reuse),
        Cmd::Enumerate { common } => enumerate(common),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
