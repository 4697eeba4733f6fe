use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nacs_core::config::RunConfig;
use nacs_core::cosearch::{run, run_random_baseline, run_sequential_baseline, CoSearchConfig, RandomSearchConfig};
use nacs_core::gads::{
    AccelSpaceSpec, Constraints, NocChoice, OrderSearch, OrderSearchSpec, PipelineOption, CANONICAL_ORDER,
};
use nacs_core::workload::{BlockChoice, LayerSlot, NetworkSpace};

const RANDOM_300_BUDGET: Duration = Duration::from_secs(30 * 60);

fn load(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

fn one_config_space() -> AccelSpaceSpec {
    let f = OrderSearch::Fixed(CANONICAL_ORDER);
    AccelSpaceSpec {
        noc_options: vec![NocChoice::OutputParallel],
        pe_count_options: vec![8],
        pipeline_options: vec![PipelineOption::MultiCycle],
        loop_orders: OrderSearchSpec { dram: f, gb: f, rf: f },
        tile_dims: vec![],
        constraints: Constraints::default(),
        reference_dims: None,
    }
}

fn degenerate(candidates: Vec<BlockChoice>) -> RunConfig {
    let mut cfg = load("smoke.json");
    cfg.network_space = NetworkSpace {
        input_channels: 4,
        input_spatial: 4,
        layers: vec![LayerSlot { out_channels: 4, stride: 1 }],
        candidates,
    };
    cfg.accelerator_space = one_config_space();
    cfg.cosearch = CoSearchConfig { max_epoch: 1, m: 1, final_das_steps: Some(1), ..cfg.cosearch };
    cfg.das.steps = 1;
    cfg.validate().unwrap();
    cfg
}

#[test]
fn degenerate_search_returns_the_unique_config() {
    let cfg = degenerate(vec![BlockChoice::new(3, 1, 1), BlockChoice::new(1, 2, 1)]);
    let space = cfg.problem().accel_space().unwrap();
    let only = space.enumerate_configs(1, 2).unwrap();
    assert_eq!(only.len(), 1);
    let r = run(&cfg.problem(), &cfg.cosearch, &cfg.das, &cfg.dns).unwrap();
    assert_eq!(r.config, only[0]);
    assert_eq!(r.trace.len(), 1);
    assert!(r.legality.is_legal());
}

#[test]
fn degenerate_sequential_equals_cosearch() {
    let cfg = degenerate(vec![BlockChoice::new(3, 1, 1)]);
    let p = cfg.problem();
    let co = run(&p, &cfg.cosearch, &cfg.das, &cfg.dns).unwrap();
    let sq = run_sequential_baseline(&p, &cfg.cosearch, &cfg.das, &cfg.dns).unwrap();
    assert_eq!(co.choices, sq.choices);
    assert_eq!(co.config, sq.config);
    assert_eq!(co.hw_cost, sq.hw_cost);
    assert_eq!(co.proxy_accuracy, sq.proxy_accuracy);
}

#[test]
fn degenerate_random_search_finds_the_unique_pair() {
    let cfg = degenerate(vec![BlockChoice::new(3, 1, 1)]);
    let rc = RandomSearchConfig { n_nets: 1, n_accels_per_net: 1, seed: 3 };
    let r = run_random_baseline(&cfg.problem(), &rc, cfg.cosearch.objective, &cfg.dns).unwrap();
    assert_eq!(r.points.len(), 1);
    assert_eq!(r.pareto, r.points);
    let co = run(&cfg.problem(), &cfg.cosearch, &cfg.das, &cfg.dns).unwrap();
    assert_eq!(r.points[0].config, co.config);
    assert_eq!(r.points[0].cost, co.hw_cost);
}

#[test]
fn dsp_limit_holds_for_both_searches() {
    let mut cfg = load("smoke.json");
    cfg.accelerator_space.pe_count_options = vec![4, 8, 16, 32];
    cfg.accelerator_space.constraints.dsp_limit = Some(8);
    for seed in 0..3 {
        let c = cfg.clone().with_seed(seed);
        let p = c.problem();
        let co = run(&p, &c.cosearch, &c.das, &c.dns).unwrap();
        let sq = run_sequential_baseline(&p, &c.cosearch, &c.das, &c.dns).unwrap();
        assert!(co.report.dsp_used <= 8 && sq.report.dsp_used <= 8);
        assert!(co.legality.is_legal() && sq.legality.is_legal());
    }
}

#[test]
fn runs_replay_exactly() {
    let cfg = load("smoke.json").with_seed(4);
    let p = cfg.problem();
    let a = run(&p, &cfg.cosearch, &cfg.das, &cfg.dns).unwrap();
    let b = run(&p, &cfg.cosearch, &cfg.das, &cfg.dns).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    // earlier epochs do not depend on how many follow
    let longer = CoSearchConfig { max_epoch: cfg.cosearch.max_epoch + 1, ..cfg.cosearch.clone() };
    let c = run(&p, &longer, &cfg.das, &cfg.dns).unwrap();
    let n = a.trace.len();
    assert_eq!(serde_json::to_string(&a.trace).unwrap(), serde_json::to_string(&c.trace[..n]).unwrap());
    assert_eq!(a.lambda, c.lambda);
}

#[test]
fn random_search_300_by_300_is_desk_scale() {
    let cfg = load("benchmark.json");
    let rc = RandomSearchConfig { n_nets: 300, n_accels_per_net: 300, seed: 1 };
    let t = Instant::now();
    let r = run_random_baseline(&cfg.problem(), &rc, cfg.cosearch.objective, &cfg.dns).unwrap();
    assert!(t.elapsed() < RANDOM_300_BUDGET, "{:?}", t.elapsed());
    assert_eq!(r.evaluations, 300 * 300);
    assert!(!r.pareto.is_empty());
}
