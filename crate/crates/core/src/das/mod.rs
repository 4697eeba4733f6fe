//! Differentiable accelerator search.
//!
//! Every slot of an [`AcceleratorSpace`] owns a logit vector (n x n for loop
//! orders). A step draws hard configs with Gumbel-Softmax, costs them, and
//! descends the surrogate `(sum of chosen soft probabilities) * L_hw` with
//! `L_hw` held constant.

mod gumbel;

pub use gumbel::{
    gumbel_noise, gumbel_softmax_masked, gumbel_softmax_sample, gumbel_softmax_with_noise, masked_softmax, relaxed,
    sample_loop_order, sample_loop_order_draws, GumbelDraw,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{network_cost, HardwareCostTables, Objective};
use crate::error::{Error, Result};
use crate::gads::{validate, AcceleratorConfig, AcceleratorSpace, Decider, LoopOrder, NUM_DIMS};
use crate::optim::Sgd;
use crate::rng::stream;
use crate::workload::{Dim, NetworkDesc};

/// Flat logits for every slot of a space; slot `s` owns
/// `logits[offsets[s]..offsets[s + 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub logits: Vec<f64>,
    pub offsets: Vec<usize>,
}

impl GammaParams {
    pub fn zeros(space: &AcceleratorSpace) -> Self {
        let mut offsets = vec![0];
        for s in &space.slots {
            offsets.push(offsets.last().unwrap() + s.logit_len());
        }
        GammaParams { logits: vec![0.0; *offsets.last().unwrap()], offsets }
    }

    pub fn matches(&self, space: &AcceleratorSpace) -> bool {
        self.offsets.len() == space.slots.len() + 1
            && space.slots.iter().enumerate().all(|(i, s)| self.offsets[i + 1] - self.offsets[i] == s.logit_len())
            && self.logits.len() == *self.offsets.last().unwrap()
    }

    pub fn slot(&self, s: usize) -> &[f64] {
        &self.logits[self.offsets[s]..self.offsets[s + 1]]
    }

    /// Categorical probabilities of a plain slot (no noise, no mask).
    pub fn probabilities(&self, s: usize) -> Vec<f64> {
        masked_softmax(self.slot(s), None)
    }

    /// Most likely config: per-slot argmax under the construction masks,
    /// sequential argmax for loop orders.
    pub fn argmax_config(&self, space: &AcceleratorSpace, num_layers: usize) -> Result<AcceleratorConfig> {
        if !self.matches(space) {
            return Err(Error::ShapeMismatch("gamma does not match the accelerator space".into()));
        }
        space.build_config(num_layers, &mut ArgmaxDecider { gamma: self })
    }
}

fn argmax_masked(v: &[f64], mask: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for i in 0..v.len() {
        if mask[i] && best.is_none_or(|b| v[i] > v[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

struct ArgmaxDecider<'a> {
    gamma: &'a GammaParams,
}

impl Decider for ArgmaxDecider<'_> {
    fn categorical(&mut self, slot: usize, mask: &[bool]) -> usize {
        argmax_masked(self.gamma.slot(slot), mask)
    }

    fn order(&mut self, slot: usize) -> LoopOrder {
        let m = self.gamma.slot(slot);
        let mut mask = [true; NUM_DIMS];
        let mut order = [Dim::X; NUM_DIMS];
        for (t, o) in order.iter_mut().enumerate() {
            let c = argmax_masked(&m[t * NUM_DIMS..(t + 1) * NUM_DIMS], &mask);
            mask[c] = false;
            *o = Dim::from_index(c);
        }
        order
    }
}

/// One categorical decision taken while sampling. `start` is the offset of
/// the logits used in the flat gamma vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDraw {
    pub slot: usize,
    pub start: usize,
    pub mask: Vec<bool>,
    pub noise: Vec<f64>,
    pub choice: usize,
    pub soft: Vec<f64>,
}

impl SlotDraw {
    pub fn chosen_prob(&self) -> f64 {
        self.soft[self.choice]
    }
}

struct GumbelDecider<'a, R: Rng> {
    gamma: &'a GammaParams,
    temp: f64,
    rng: &'a mut R,
    draws: Vec<SlotDraw>,
    err: Option<Error>,
}

impl<R: Rng> GumbelDecider<'_, R> {
    fn draw(&mut self, slot: usize, start: usize, len: usize, mask: &[bool]) -> usize {
        let logits = &self.gamma.logits[start..start + len];
        match gumbel_softmax_masked(logits, Some(mask), self.temp, self.rng) {
            Ok(d) => {
                let choice = d.choice;
                self.draws.push(SlotDraw { slot, start, mask: mask.to_vec(), noise: d.noise, choice, soft: d.soft });
                choice
            }
            Err(e) => {
                self.err.get_or_insert(e);
                0
            }
        }
    }
}

impl<R: Rng> Decider for GumbelDecider<'_, R> {
    fn categorical(&mut self, slot: usize, mask: &[bool]) -> usize {
        let start = self.gamma.offsets[slot];
        self.draw(slot, start, mask.len(), mask)
    }

    fn order(&mut self, slot: usize) -> LoopOrder {
        let base = self.gamma.offsets[slot];
        let mut mask = [true; NUM_DIMS];
        let mut order = [Dim::X; NUM_DIMS];
        for (t, o) in order.iter_mut().enumerate() {
            let c = self.draw(slot, base + t * NUM_DIMS, NUM_DIMS, &mask);
            mask[c] = false;
            *o = Dim::from_index(c);
        }
        order
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub config: AcceleratorConfig,
    pub draws: Vec<SlotDraw>,
    /// Soft probability of the taken option, one per draw.
    pub soft_probs: Vec<f64>,
    /// Raw objective value.
    pub hw_cost: f64,
    /// Objective times the soft-constraint penalty.
    pub penalized_cost: f64,
    pub legal: bool,
}

pub fn sample_config<R: Rng>(
    space: &AcceleratorSpace,
    gamma: &GammaParams,
    temp: f64,
    num_layers: usize,
    rng: &mut R,
) -> Result<SampleRecord> {
    if !gamma.matches(space) {
        return Err(Error::ShapeMismatch("gamma does not match the accelerator space".into()));
    }
    gumbel::check_temp(temp)?;
    let mut dec = GumbelDecider { gamma, temp, rng, draws: Vec::new(), err: None };
    let config = space.build_config(num_layers, &mut dec)?;
    if let Some(e) = dec.err {
        return Err(e);
    }
    let soft_probs = dec.draws.iter().map(SlotDraw::chosen_prob).collect();
    Ok(SampleRecord { config, draws: dec.draws, soft_probs, hw_cost: f64::NAN, penalized_cost: f64::NAN, legal: false })
}

/// Surrogate `(sum_s soft_s(chosen)) * loss`, re-evaluated from `gamma` under
/// the stored noise and choices.
pub fn surrogate_value(gamma: &GammaParams, draws: &[SlotDraw], temp: f64, loss: f64) -> f64 {
    draws
        .iter()
        .map(|d| {
            let logits = &gamma.logits[d.start..d.start + d.noise.len()];
            relaxed(logits, Some(&d.mask), &d.noise, temp)[d.choice]
        })
        .sum::<f64>()
        * loss
}

/// Analytic gradient of [`surrogate_value`]: for each draw,
/// `d p_c / d l_j = p_c (delta_jc - p_j) / temp`.
pub fn surrogate_gradient(gamma: &GammaParams, draws: &[SlotDraw], temp: f64, loss: f64) -> Vec<f64> {
    let mut grad = vec![0.0; gamma.logits.len()];
    accumulate_gradient(&mut grad, gamma, draws, temp, loss);
    grad
}

fn accumulate_gradient(grad: &mut [f64], gamma: &GammaParams, draws: &[SlotDraw], temp: f64, loss: f64) {
    for d in draws {
        let n = d.noise.len();
        let p = relaxed(&gamma.logits[d.start..d.start + n], Some(&d.mask), &d.noise, temp);
        let pc = p[d.choice];
        for j in 0..n {
            if d.mask[j] {
                let delta = if j == d.choice { 1.0 } else { 0.0 };
                grad[d.start + j] += pc * (delta - p[j]) / temp * loss;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrMode {
    /// Loss divided by the first sample's cost.
    Normalized,
    Raw,
}

fn default_steps() -> usize {
    300
}
fn default_samples() -> usize {
    1
}
fn default_lr() -> f64 {
    0.05
}
fn default_lr_mode() -> LrMode {
    LrMode::Normalized
}
fn default_momentum() -> f64 {
    0.9
}
fn default_temp_init() -> f64 {
    3.0
}
fn default_temp_decay() -> f64 {
    0.92
}
fn default_steps_per_epoch() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_penalty() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DasConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_lr_mode")]
    pub lr_mode: LrMode,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_temp_init")]
    pub temp_init: f64,
    #[serde(default = "default_temp_decay")]
    pub temp_decay: f64,
    /// Steps per annealing epoch when `anneal` is on.
    #[serde(default = "default_steps_per_epoch")]
    pub steps_per_epoch: usize,
    #[serde(default = "default_true")]
    pub anneal: bool,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_penalty")]
    pub penalty_multiplier: f64,
}

impl Default for DasConfig {
    fn default() -> Self {
        DasConfig {
            steps: default_steps(),
            samples_per_step: default_samples(),
            learning_rate: default_lr(),
            lr_mode: default_lr_mode(),
            momentum: default_momentum(),
            temp_init: default_temp_init(),
            temp_decay: default_temp_decay(),
            steps_per_epoch: default_steps_per_epoch(),
            anneal: true,
            rng_seed: 0,
            penalty_multiplier: default_penalty(),
        }
    }
}

impl DasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.samples_per_step == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("das steps, samples_per_step and steps_per_epoch must be >= 1".into()));
        }
        if !(self.temp_decay > 0.0 && self.temp_decay <= 1.0) {
            return Err(Error::Config("das temp_decay must be in (0, 1]".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("das learning_rate must be finite and >= 0".into()));
        }
        if !(self.penalty_multiplier >= 0.0) || !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Config("das penalty_multiplier must be >= 0 and momentum in [0, 1)".into()));
        }
        gumbel::check_temp(self.temp_init)
    }

    pub fn temperature(&self, step: usize) -> f64 {
        if self.anneal {
            self.temp_init * self.temp_decay.powi((step / self.steps_per_epoch) as i32)
        } else {
            self.temp_init
        }
    }
}

/// Outcome of costing one config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    /// Summed relative overshoot of soft constraints.
    pub overflow: f64,
    pub legal: bool,
}

pub trait HwEvaluator: Sync {
    fn evaluate(&self, config: &AcceleratorConfig) -> Result<Evaluation>;
}

impl<F> HwEvaluator for F
where
    F: Fn(&AcceleratorConfig) -> Evaluation + Sync,
{
    fn evaluate(&self, config: &AcceleratorConfig) -> Result<Evaluation> {
        Ok(self(config))
    }
}

/// Costs configs against one network with the analytical model.
pub struct NetworkEvaluator<'a> {
    pub net: &'a NetworkDesc,
    pub space: &'a AcceleratorSpace,
    pub tables: &'a HardwareCostTables,
    pub objective: Objective,
}

impl HwEvaluator for NetworkEvaluator<'_> {
    fn evaluate(&self, config: &AcceleratorConfig) -> Result<Evaluation> {
        let legality = validate(config, self.net, self.space, self.tables);
        let report = network_cost(self.net, config, self.tables)?;
        Ok(Evaluation {
            cost: self.objective.value(&report),
            overflow: legality.overflow_sum(),
            legal: legality.is_legal(),
        })
    }
}

/// Mutable optimizer state of one DAS run.
#[derive(Debug, Clone, PartialEq)]
pub struct DasState {
    pub gamma: GammaParams,
    opt: Sgd,
    ref_cost: Option<f64>,
}

impl DasState {
    pub fn new(gamma: GammaParams, cfg: &DasConfig) -> Self {
        let n = gamma.logits.len();
        DasState { gamma, opt: Sgd::new(cfg.learning_rate, cfg.momentum, n), ref_cost: None }
    }
}

/// One optimization step: draws `samples_per_step` configs, costs them and
/// applies the averaged surrogate gradient.
pub fn das_step<E: HwEvaluator + ?Sized>(
    space: &AcceleratorSpace,
    num_layers: usize,
    evaluator: &E,
    cfg: &DasConfig,
    state: &mut DasState,
    step: usize,
) -> Result<Vec<SampleRecord>> {
    let temp = cfg.temperature(step);
    let gamma = &state.gamma;
    let samples: Vec<Result<SampleRecord>> = (0..cfg.samples_per_step)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.rng_seed, &[step as u64, i as u64]);
            let mut rec = sample_config(space, gamma, temp, num_layers, &mut rng)?;
            let ev = evaluator.evaluate(&rec.config)?;
            rec.hw_cost = ev.cost;
            rec.penalized_cost = ev.cost * (1.0 + cfg.penalty_multiplier * ev.overflow);
            rec.legal = ev.legal;
            Ok(rec)
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;

    let mut grad = vec![0.0; state.gamma.logits.len()];
    for rec in &samples {
        let l = rec.penalized_cost;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss(format!("hardware cost {l} at step {step}")));
        }
        let scale = match cfg.lr_mode {
            LrMode::Raw => 1.0,
            LrMode::Normalized => {
                let r = *state.ref_cost.get_or_insert(if l > 0.0 { l } else { 1.0 });
                1.0 / r
            }
        };
        accumulate_gradient(&mut grad, &state.gamma, &rec.draws, temp, l * scale / samples.len() as f64);
    }
    state.opt.lr = cfg.learning_rate;
    state.opt.step(&mut state.gamma.logits, &grad);
    if state.gamma.logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(format!("accelerator logits diverged at step {step}")));
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DasTraceRow {
    pub step: usize,
    pub sample: usize,
    pub temp: f64,
    pub sampled_cost: f64,
    pub incumbent_cost: f64,
    pub legal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DasResult {
    pub best: AcceleratorConfig,
    pub best_cost: f64,
    pub gamma: GammaParams,
    pub trace: Vec<DasTraceRow>,
    pub legal_samples: usize,
}

/// Runs `cfg.steps` DAS steps and returns the cheapest legal sample seen.
pub fn das_optimize<E: HwEvaluator + ?Sized>(
    space: &AcceleratorSpace,
    num_layers: usize,
    evaluator: &E,
    cfg: &DasConfig,
    init: Option<GammaParams>,
) -> Result<DasResult> {
    cfg.validate()?;
    let gamma = match init {
        Some(g) if g.matches(space) => g,
        Some(_) => return Err(Error::ShapeMismatch("initial gamma does not match the accelerator space".into())),
        None => GammaParams::zeros(space),
    };
    let mut state = DasState::new(gamma, cfg);
    let mut best: Option<(f64, AcceleratorConfig)> = None;
    let mut trace = Vec::with_capacity(cfg.steps * cfg.samples_per_step);
    let mut legal_samples = 0;
    for step in 0..cfg.steps {
        let temp = cfg.temperature(step);
        let samples = das_step(space, num_layers, evaluator, cfg, &mut state, step)?;
        for (i, rec) in samples.into_iter().enumerate() {
            if rec.legal {
                legal_samples += 1;
                if best.as_ref().is_none_or(|(c, _)| rec.hw_cost < *c) {
                    best = Some((rec.hw_cost, rec.config));
                }
            }
            trace.push(DasTraceRow {
                step,
                sample: i,
                temp,
                sampled_cost: rec.penalized_cost,
                incumbent_cost: best.as_ref().map_or(f64::NAN, |b| b.0),
                legal: rec.legal,
            });
        }
    }
    let (best_cost, best) = best.ok_or(Error::NoLegalConfig { samples: cfg.steps * cfg.samples_per_step })?;
    Ok(DasResult { best, best_cost, gamma: state.gamma, trace, legal_samples })
}

/// DAS for a concrete network with the analytical cost model.
pub fn das_optimize_network(
    net: &NetworkDesc,
    space: &AcceleratorSpace,
    tables: &HardwareCostTables,
    objective: Objective,
    cfg: &DasConfig,
    init: Option<GammaParams>,
) -> Result<DasResult> {
    if net.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    let ev = NetworkEvaluator { net, space, tables, objective };
    das_optimize(space, net.len(), &ev, cfg, init)
}
