//! Joint network/accelerator search and its baselines.
//!
//! Each epoch samples `M` networks from the current architecture
//! distribution, searches an accelerator for each, turns those accelerators
//! into an expected per-operator cost table and runs one epoch of
//! architecture search against it. The final network is the per-layer argmax
//! and gets a fresh accelerator search of its own.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{network_cost, CostReport, HardwareCostTables, Objective};
use crate::das::{das_optimize_network, sample_config, DasConfig, GammaParams, HwEvaluator, NetworkEvaluator};
use crate::dns::{
    alpha_probabilities, derive_network, derived_widths, dns_epoch, hidden_widths, sample_networks,
    standalone_accuracy, supernet_val_loss, Dataset, DerivedNetwork, DnsConfig, DnsState, SyntheticTask,
};
use crate::error::{Error, Result};
use crate::gads::{chunk_budgets, validate, AccelSpaceSpec, AcceleratorConfig, AcceleratorSpace, LegalityReport};
use crate::rng::{derive_seed, stream};
use crate::workload::{BlockChoice, LayerSlot, NetworkDesc, NetworkSpace};

fn default_m() -> usize {
    10
}
fn default_epochs() -> usize {
    4
}
fn default_objective() -> Objective {
    Objective::Fps
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoSearchConfig {
    #[serde(default = "default_epochs")]
    pub max_epoch: usize,
    /// Networks sampled per epoch.
    #[serde(rename = "M", default = "default_m")]
    pub m: usize,
    /// Weight of the hardware term; `None` balances it against the initial
    /// validation loss.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    /// Start every per-network accelerator search from the shared logits.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Steps of the accelerator search for the derived network; `None` uses
    /// the per-network step count.
    #[serde(default)]
    pub final_das_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CoSearchConfig {
    fn default() -> Self {
        CoSearchConfig {
            max_epoch: default_epochs(),
            m: default_m(),
            lambda: None,
            objective: default_objective(),
            warm_start: true,
            final_das_steps: None,
            seed: 0,
        }
    }
}

impl CoSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.max_epoch == 0 || self.final_das_steps == Some(0) {
            return Err(Error::Config("cosearch M and max_epoch must be >= 1".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::Config("cosearch lambda must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Everything a search runs against.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchProblem {
    pub network_space: NetworkSpace,
    pub accelerator_space: AccelSpaceSpec,
    pub tables: HardwareCostTables,
    pub task: SyntheticTask,
}

impl SearchProblem {
    pub fn accel_space(&self) -> Result<AcceleratorSpace> {
        self.network_space.validate()?;
        AcceleratorSpace::new(
            self.accelerator_space.clone(),
            self.network_space.reference_dims()?,
            self.network_space.max_conv_layers(),
        )
    }
}

/// Expected cost of every candidate operator at every position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCostTable {
    pub costs: Vec<Vec<f64>>,
}

impl OpCostTable {
    pub fn scaled(&self, s: f64) -> Vec<Vec<f64>> {
        self.costs.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
    }
}

/// Cost of candidate `k` at position `l` run alone on the design that
/// executes position `l` of `net` under `hw`, multi-cycle, with the chunk's
/// PE share and the soft-constraint penalty applied.
#[allow(clippy::too_many_arguments)]
pub fn op_cost(
    space: &NetworkSpace,
    l: usize,
    k: usize,
    net: &DerivedNetwork,
    hw: &AcceleratorConfig,
    accel: &AcceleratorSpace,
    tables: &HardwareCostTables,
    objective: Objective,
    penalty: f64,
) -> Result<f64> {
    if space.candidates[k].is_skip || !space.allowed(l, k) {
        return Ok(0.0);
    }
    let layers = space.candidate_layers(l, k)?;
    // first conv layer of position l inside net
    let mut first = 0;
    for j in 0..l {
        first += space.candidate_layers(j, net.choices[j])?.len();
    }
    let first = first.min(net.network.len().saturating_sub(1));
    let chunk = hw.design_index(first);
    let design = *hw.designs.get(chunk).ok_or_else(|| Error::IllegalConfig(format!("missing design {chunk}")))?;
    let budgets = chunk_budgets(&net.network, hw, tables);
    let pes = budgets.get(chunk).map_or(hw.max_pes, |b| b.pes.max(1));
    let op_net = NetworkDesc::new(layers);
    let cfg = AcceleratorConfig::multi_cycle(pes, design);
    let report = network_cost(&op_net, &cfg, tables)?;
    let legality = validate(&cfg, &op_net, accel, tables);
    Ok(objective.value(&report) * (1.0 + penalty * legality.overflow_sum()))
}

/// Mean over the `M` (network, accelerator) pairs of every operator's cost;
/// skip candidates cost 0.
#[allow(clippy::too_many_arguments)]
pub fn expected_op_cost(
    space: &NetworkSpace,
    sampled: &[DerivedNetwork],
    hw_stars: &[AcceleratorConfig],
    accel: &AcceleratorSpace,
    tables: &HardwareCostTables,
    objective: Objective,
    penalty: f64,
) -> Result<OpCostTable> {
    if sampled.len() != hw_stars.len() || sampled.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} sampled networks vs {} accelerators",
            sampled.len(),
            hw_stars.len()
        )));
    }
    let mut costs = vec![vec![0.0; space.num_candidates()]; space.num_layers()];
    for (l, row) in costs.iter_mut().enumerate() {
        for (k, c) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for (net, hw) in sampled.iter().zip(hw_stars) {
                sum += op_cost(space, l, k, net, hw, accel, tables, objective, penalty)?;
            }
            *c = sum / sampled.len() as f64;
        }
    }
    Ok(OpCostTable { costs })
}

/// Nominal MACs of every operator (the sequential baseline's hardware term).
pub fn mac_table(space: &NetworkSpace) -> Result<OpCostTable> {
    let mut costs = vec![vec![0.0; space.num_candidates()]; space.num_layers()];
    for (l, row) in costs.iter_mut().enumerate() {
        for (k, c) in row.iter_mut().enumerate() {
            if space.allowed(l, k) {
                *c = space.candidate_layers(l, k)?.iter().map(|x| x.macs() as f64).sum();
            }
        }
    }
    Ok(OpCostTable { costs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochTraceRow {
    pub epoch: usize,
    pub val_loss: f64,
    pub hw_loss: f64,
    pub mean_das_cost: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoSearchResult {
    pub choices: Vec<usize>,
    pub blocks: Vec<BlockChoice>,
    pub network: NetworkDesc,
    pub config: AcceleratorConfig,
    pub report: CostReport,
    pub hw_cost: f64,
    pub legality: LegalityReport,
    pub proxy_accuracy: f64,
    pub lambda: f64,
    /// Hardware-cost evaluations spent in accelerator search.
    pub evaluations: usize,
    pub trace: Vec<EpochTraceRow>,
}

fn das_seeded(das: &DasConfig, seed: u64, path: &[u64]) -> DasConfig {
    DasConfig { rng_seed: derive_seed(seed, path), ..das.clone() }
}

fn dns_seeded(dns: &DnsConfig, seed: u64) -> DnsConfig {
    DnsConfig { seed: derive_seed(seed, &[1]), ..dns.clone() }
}

/// Which hardware signal drives the architecture step.
enum HwSignal {
    Searched,
    Macs(OpCostTable),
}

struct Finalized {
    derived: DerivedNetwork,
    config: AcceleratorConfig,
    report: CostReport,
    hw_cost: f64,
    legality: LegalityReport,
    accuracy: f64,
    evaluations: usize,
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    problem: &SearchProblem,
    accel: &AcceleratorSpace,
    state: &DnsState,
    data: &Dataset,
    dns: &DnsConfig,
    das: &DasConfig,
    cfg: &CoSearchConfig,
    gamma: Option<GammaParams>,
    hidden: &[Vec<Option<usize>>],
) -> Result<Finalized> {
    let derived = derive_network(&state.alpha, &problem.network_space)?;
    let mut das = das.clone();
    das.steps = cfg.final_das_steps.unwrap_or(das.steps);
    let starts: Vec<Option<GammaParams>> = std::iter::once(None).chain(gamma.map(Some)).collect();
    let mut best: Option<crate::das::DasResult> = None;
    for (i, init) in starts.iter().enumerate() {
        let das = das_seeded(&das, cfg.seed, &[3, i as u64]);
        let r = match das_optimize_network(&derived.network, accel, &problem.tables, cfg.objective, &das, init.clone())
        {
            Ok(r) => r,
            Err(Error::NoLegalConfig { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| r.best_cost < b.best_cost) {
            best = Some(r);
        }
    }
    let evaluations = starts.len() * das.steps * das.samples_per_step;
    let r = best.ok_or(Error::NoLegalConfig { samples: evaluations })?;
    let report = network_cost(&derived.network, &r.best, &problem.tables)?;
    let legality = validate(&r.best, &derived.network, accel, &problem.tables);
    if !legality.is_legal() {
        return Err(Error::NoLegalConfig { samples: evaluations });
    }
    let widths = derived_widths(hidden, &derived.choices);
    let accuracy = standalone_accuracy(&widths, data, dns, derive_seed(cfg.seed, &[4]))?;
    Ok(Finalized { derived, config: r.best, report, hw_cost: r.best_cost, legality, accuracy, evaluations })
}

fn search(
    problem: &SearchProblem,
    cfg: &CoSearchConfig,
    das: &DasConfig,
    dns: &DnsConfig,
    signal: HwSignal,
) -> Result<CoSearchResult> {
    cfg.validate()?;
    das.validate()?;
    problem.tables.validate()?;
    let accel = problem.accel_space()?;
    let data = problem.task.generate()?;
    let dns = dns_seeded(dns, cfg.seed);
    let mut state = DnsState::new(&problem.network_space, &problem.task, &dns)?;
    let hidden = hidden_widths(&problem.network_space, dns.hidden_max)?;
    let mask = problem.network_space.allowed_mask();
    let mut gamma = GammaParams::zeros(&accel);
    let mut norm: Option<f64> = None;
    let mut lambda = cfg.lambda;
    let mut trace = Vec::with_capacity(cfg.max_epoch);
    let mut evaluations = 0usize;

    for epoch in 0..cfg.max_epoch {
        let e = epoch as u64;
        let (table, mean_das, incumbent) = match &signal {
            HwSignal::Macs(t) => (t.clone(), f64::NAN, f64::NAN),
            HwSignal::Searched => {
                let temp = dns.temperature(epoch);
                let nets =
                    sample_networks(&state.alpha, &problem.network_space, cfg.m, temp, &mut stream(cfg.seed, &[2, e]))?;
                let init = if cfg.warm_start { Some(gamma.clone()) } else { None };
                let runs: Vec<Option<(DerivedNetwork, AcceleratorConfig, f64, GammaParams)>> = nets
                    .into_par_iter()
                    .enumerate()
                    .map(|(m, net)| {
                        if net.network.is_empty() {
                            return Ok(None);
                        }
                        let das = das_seeded(das, cfg.seed, &[5, e, m as u64]);
                        match das_optimize_network(
                            &net.network,
                            &accel,
                            &problem.tables,
                            cfg.objective,
                            &das,
                            init.clone(),
                        ) {
                            Ok(r) => Ok(Some((net, r.best, r.best_cost, r.gamma))),
                            Err(Error::NoLegalConfig { .. }) => Ok(None),
                            Err(err) => Err(err),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                evaluations += cfg.m * das.steps * das.samples_per_step;
                let runs: Vec<_> = runs.into_iter().flatten().collect();
                if runs.is_empty() {
                    return Err(Error::NoLegalConfig { samples: cfg.m * das.steps * das.samples_per_step });
                }
                if cfg.warm_start {
                    let mut acc = vec![0.0; gamma.logits.len()];
                    for r in &runs {
                        acc.iter_mut().zip(&r.3.logits).for_each(|(a, b)| *a += b);
                    }
                    gamma.logits = acc.into_iter().map(|v| v / runs.len() as f64).collect();
                }
                let nets: Vec<DerivedNetwork> = runs.iter().map(|r| r.0.clone()).collect();
                let stars: Vec<AcceleratorConfig> = runs.iter().map(|r| r.1.clone()).collect();
                let table = expected_op_cost(
                    &problem.network_space,
                    &nets,
                    &stars,
                    &accel,
                    &problem.tables,
                    cfg.objective,
                    das.penalty_multiplier,
                )?;
                let costs: Vec<f64> = runs.iter().map(|r| r.2).collect();
                let mean = costs.iter().sum::<f64>() / costs.len() as f64;
                let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
                (table, mean, best)
            }
        };
        if table.costs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss(format!("operator cost table at epoch {epoch}")));
        }
        let n = *norm.get_or_insert_with(|| {
            let probs = alpha_probabilities(&state.alpha, &mask);
            let v = crate::dns::hw_loss(&probs, &table.costs);
            if v > 0.0 {
                v
            } else {
                1.0
            }
        });
        let lam = match lambda {
            Some(l) => l,
            None => {
                let l = supernet_val_loss(&state, &data)?;
                lambda = Some(l);
                l
            }
        };
        let scaled = table.scaled(1.0 / n);
        let stats = dns_epoch(&mut state, &data, &dns, epoch, Some((&scaled, lam)))?;
        trace.push(EpochTraceRow {
            epoch,
            val_loss: stats.val_loss,
            hw_loss: stats.hw_loss,
            mean_das_cost: mean_das,
            incumbent,
        });
    }
    let warm = if cfg.warm_start && matches!(signal, HwSignal::Searched) { Some(gamma) } else { None };
    let fin = finalize(problem, &accel, &state, &data, &dns, das, cfg, warm, &hidden)?;
    evaluations += fin.evaluations;
    Ok(CoSearchResult {
        choices: fin.derived.choices,
        blocks: fin.derived.blocks,
        network: fin.derived.network,
        config: fin.config,
        report: fin.report,
        hw_cost: fin.hw_cost,
        legality: fin.legality,
        proxy_accuracy: fin.accuracy,
        lambda: lambda.unwrap_or(0.0),
        evaluations,
        trace,
    })
}

/// Joint search.
pub fn run(problem: &SearchProblem, cfg: &CoSearchConfig, das: &DasConfig, dns: &DnsConfig) -> Result<CoSearchResult> {
    search(problem, cfg, das, dns, HwSignal::Searched)
}

/// Network search against nominal MACs, then one accelerator search for the
/// derived network.
pub fn run_sequential_baseline(
    problem: &SearchProblem,
    cfg: &CoSearchConfig,
    das: &DasConfig,
    dns: &DnsConfig,
) -> Result<CoSearchResult> {
    let macs = mac_table(&problem.network_space)?;
    search(problem, cfg, das, dns, HwSignal::Macs(macs))
}

fn default_n() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSearchConfig {
    #[serde(default = "default_n")]
    pub n_nets: usize,
    #[serde(default = "default_n")]
    pub n_accels_per_net: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        RandomSearchConfig { n_nets: default_n(), n_accels_per_net: default_n(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomPoint {
    pub choices: Vec<usize>,
    pub accuracy: f64,
    pub cost: f64,
    pub config: AcceleratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomSearchResult {
    pub points: Vec<RandomPoint>,
    pub pareto: Vec<RandomPoint>,
    pub evaluations: usize,
}

/// True if `a` is at least as good as `b` in both accuracy and cost and
/// strictly better in one.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    let (acc_a, cost_a) = a;
    let (acc_b, cost_b) = b;
    acc_a >= acc_b && cost_a <= cost_b && (acc_a > acc_b || cost_a < cost_b)
}

/// Non-dominated points, first occurrence kept among exact duplicates.
pub fn pareto_front(points: &[RandomPoint]) -> Vec<RandomPoint> {
    let mut out: Vec<RandomPoint> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = (p.accuracy, p.cost);
        let dominated = points.iter().any(|q| dominates((q.accuracy, q.cost), key));
        let duplicate = points[..i].iter().any(|q| q.accuracy == p.accuracy && q.cost == p.cost);
        if !dominated && !duplicate {
            out.push(p.clone());
        }
    }
    out
}

/// Uniform sampling of both spaces: `n_nets` networks, each trained alone
/// and paired with `n_accels_per_net` uniformly drawn accelerators; illegal
/// accelerators are dropped.
pub fn run_random_baseline(
    problem: &SearchProblem,
    cfg: &RandomSearchConfig,
    objective: Objective,
    dns: &DnsConfig,
) -> Result<RandomSearchResult> {
    if cfg.n_nets == 0 || cfg.n_accels_per_net == 0 {
        return Err(Error::Config("random search counts must be >= 1".into()));
    }
    problem.tables.validate()?;
    let space = &problem.network_space;
    let accel = problem.accel_space()?;
    let data = problem.task.generate()?;
    let dns = dns_seeded(dns, cfg.seed);
    let hidden = hidden_widths(space, dns.hidden_max)?;
    let mask = space.allowed_mask();
    let uniform = GammaParams::zeros(&accel);

    let nets: Vec<Vec<usize>> = (0..cfg.n_nets)
        .map(|i| {
            let mut rng = stream(cfg.seed, &[1, i as u64]);
            mask.iter()
                .map(|m| {
                    let allowed: Vec<usize> = (0..m.len()).filter(|&k| m[k]).collect();
                    use rand::Rng;
                    allowed[rng.random_range(0..allowed.len())]
                })
                .collect()
        })
        .collect();
    let mut widths: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for c in &nets {
        widths.entry(derived_widths(&hidden, c)).or_insert(f64::NAN);
    }
    let keys: Vec<Vec<usize>> = widths.keys().cloned().collect();
    let accs: Vec<f64> = keys
        .par_iter()
        .map(|w| standalone_accuracy(w, &data, &dns, derive_seed(cfg.seed, &[4])))
        .collect::<Result<Vec<_>>>()?;
    for (k, a) in keys.into_iter().zip(accs) {
        widths.insert(k, a);
    }

    let per_net: Vec<Vec<RandomPoint>> = nets
        .par_iter()
        .enumerate()
        .map(|(i, choices)| {
            let net = space.expand(choices)?;
            if net.is_empty() {
                return Ok(Vec::new());
            }
            let accuracy = widths[&derived_widths(&hidden, choices)];
            let ev = NetworkEvaluator { net: &net, space: &accel, tables: &problem.tables, objective };
            let mut pts = Vec::new();
            for j in 0..cfg.n_accels_per_net {
                let mut rng = stream(cfg.seed, &[2, i as u64, j as u64]);
                let rec = sample_config(&accel, &uniform, 1.0, net.len(), &mut rng)?;
                let e = ev.evaluate(&rec.config)?;
                if e.legal {
                    pts.push(RandomPoint { choices: choices.clone(), accuracy, cost: e.cost, config: rec.config });
                }
            }
            Ok(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<RandomPoint> = per_net.into_iter().flatten().collect();
    let pareto = pareto_front(&points);
    Ok(RandomSearchResult { points, pareto, evaluations: cfg.n_nets * cfg.n_accels_per_net })
}

const PAIR_RESTARTS: u64 = 3;

/// Two MAC-equal blocks for `channels` in/out channels at `spatial`
/// resolution whose searched costs differ the most. Each block is costed as
/// `layers` repeats of itself inside the two-candidate space the pair would
/// form, best of a few seeded searches. Returns
/// `(unfriendly, friendly, cost ratio)`.
#[allow(clippy::too_many_arguments)]
pub fn mac_equal_pair(
    channels: u64,
    spatial: u64,
    layers: usize,
    pool: &[BlockChoice],
    accel_spec: &AccelSpaceSpec,
    tables: &HardwareCostTables,
    objective: Objective,
    das: &DasConfig,
) -> Result<(BlockChoice, BlockChoice, f64)> {
    let mut by_macs: BTreeMap<u64, Vec<BlockChoice>> = BTreeMap::new();
    for b in pool {
        if let Ok(l) = crate::workload::expand_block(b, channels, channels, spatial, 1) {
            by_macs.entry(l.iter().map(|x| x.macs()).sum()).or_default().push(*b);
        }
    }
    let mut pairs = Vec::new();
    for g in by_macs.values() {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                pairs.push((g[i], g[j]));
            }
        }
    }
    // a network with no legal accelerator costs infinity and never pairs up
    let scored: Vec<Option<(BlockChoice, BlockChoice, f64)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let space = mac_equal_space(channels, spatial, layers, (a, b));
            let accel = AcceleratorSpace::new(accel_spec.clone(), space.reference_dims()?, space.max_conv_layers())?;
            let mut cost = [0.0; 2];
            for (k, c) in cost.iter_mut().enumerate() {
                let net = space.expand(&vec![k; layers])?;
                *c = f64::INFINITY;
                for s in 0..PAIR_RESTARTS {
                    let das = das_seeded(das, das.rng_seed, &[k as u64, s]);
                    match das_optimize_network(&net, &accel, tables, objective, &das, None) {
                        Ok(r) => *c = c.min(r.best_cost),
                        Err(Error::NoLegalConfig { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            if !cost.iter().all(|c| c.is_finite()) || cost[0] == cost[1] {
                return Ok(None);
            }
            Ok(Some(if cost[0] > cost[1] { (a, b, cost[0] / cost[1]) } else { (b, a, cost[1] / cost[0]) }))
        })
        .collect::<Result<Vec<_>>>()?;
    scored
        .into_iter()
        .flatten()
        .fold(None, |best: Option<(BlockChoice, BlockChoice, f64)>, p| match best {
            Some(b) if b.2 >= p.2 => Some(b),
            _ => Some(p),
        })
        .ok_or_else(|| Error::Config("no MAC-equal pair with unequal mapped cost".into()))
}

/// A network space of `layers` same-shape positions whose only candidates
/// are `[unfriendly, friendly]`.
pub fn mac_equal_space(channels: u64, spatial: u64, layers: usize, pair: (BlockChoice, BlockChoice)) -> NetworkSpace {
    NetworkSpace {
        input_channels: channels,
        input_spatial: spatial,
        layers: vec![LayerSlot { out_channels: channels, stride: 1 }; layers],
        candidates: vec![pair.0, pair.1],
    }
}
