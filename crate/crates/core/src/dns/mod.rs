//! Differentiable network search on a dense proxy supernet.
//!
//! Architecture logits `alpha[l][k]` weight the candidates of layer `l`
//! through Gumbel-Softmax. Supernet weights train on the train split with
//! alpha frozen; alpha trains on the validation split plus a layer-wise
//! hardware term `lambda * sum_k w_lk * hw_lk`.

mod net;
mod task;

pub use net::{OpSlot, PassOutput, SuperNet};
pub use task::{Dataset, Split, SyntheticTask};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::das::{gumbel_noise, gumbel_softmax_with_noise, relaxed};
use crate::error::{Error, Result};
use crate::optim::{Adam, Sgd};
use crate::rng::stream;
use crate::workload::{BlockChoice, NetworkDesc, NetworkSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Forward mixes all candidates with relaxed weights.
    Relaxed,
    /// Forward uses the one-hot sample; gradients pass straight through the
    /// relaxed weights.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    pub logits: Vec<Vec<f64>>,
}

impl AlphaParams {
    pub fn zeros(layers: usize, candidates: usize) -> Self {
        AlphaParams { logits: vec![vec![0.0; candidates]; layers] }
    }

    pub fn for_space(space: &NetworkSpace) -> Self {
        Self::zeros(space.num_layers(), space.num_candidates())
    }

    fn flat(&self) -> Vec<f64> {
        self.logits.concat()
    }

    fn set_flat(&mut self, v: &[f64]) {
        let mut i = 0;
        for row in &mut self.logits {
            for x in row.iter_mut() {
                *x = v[i];
                i += 1;
            }
        }
    }
}

/// Per-candidate hidden width of the proxy op: proportional to the
/// candidate's MACs at that position, `Some(0)` for skip, `None` when the
/// candidate is not admissible.
pub fn hidden_widths(space: &NetworkSpace, hidden_max: usize) -> Result<Vec<Vec<Option<usize>>>> {
    space.validate()?;
    let mut macs = vec![vec![0u64; space.num_candidates()]; space.num_layers()];
    for (l, row) in macs.iter_mut().enumerate() {
        for (k, m) in row.iter_mut().enumerate() {
            if space.allowed(l, k) {
                *m = space.candidate_layers(l, k)?.iter().map(|x| x.macs()).sum();
            }
        }
    }
    let max = macs.iter().flatten().copied().max().unwrap_or(0).max(1);
    Ok((0..space.num_layers())
        .map(|l| {
            (0..space.num_candidates())
                .map(|k| {
                    if !space.allowed(l, k) {
                        None
                    } else if space.candidates[k].is_skip {
                        Some(0)
                    } else {
                        let h = (hidden_max as f64 * macs[l][k] as f64 / max as f64).round() as usize;
                        Some(h.max(1))
                    }
                })
                .collect()
        })
        .collect())
}

pub fn draw_noise<R: Rng + ?Sized>(alpha: &AlphaParams, rng: &mut R) -> Vec<Vec<f64>> {
    alpha.logits.iter().map(|r| gumbel_noise(r.len(), rng)).collect()
}

/// Forward mixing weights and relaxed weights for one noise realization.
pub fn mixing_weights(
    alpha: &AlphaParams,
    mask: &[Vec<bool>],
    noise: &[Vec<f64>],
    temp: f64,
    mode: SampleMode,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if alpha.logits.len() != mask.len() || noise.len() != mask.len() {
        return Err(Error::ShapeMismatch("alpha, mask and noise disagree on layer count".into()));
    }
    let mut fwd = Vec::with_capacity(mask.len());
    let mut soft = Vec::with_capacity(mask.len());
    for l in 0..mask.len() {
        if alpha.logits[l].len() != mask[l].len() || noise[l].len() != mask[l].len() {
            return Err(Error::ShapeMismatch(format!("layer {l}: alpha row does not match candidates")));
        }
        let d = gumbel_softmax_with_noise(&alpha.logits[l], Some(&mask[l]), noise[l].clone(), temp)?;
        match mode {
            SampleMode::Relaxed => fwd.push(d.soft.clone()),
            SampleMode::Hard => {
                let mut one = vec![0.0; d.soft.len()];
                one[d.choice] = 1.0;
                fwd.push(one);
            }
        }
        soft.push(d.soft);
    }
    Ok((fwd, soft))
}

/// One mixed layer `sum_k w_k O_lk(x)` with weights drawn from `alpha_row`.
pub fn forward_mixed<R: Rng + ?Sized>(
    net: &SuperNet,
    l: usize,
    x: &[f64],
    alpha_row: &[f64],
    temp: f64,
    rng: &mut R,
    mode: SampleMode,
) -> Result<Vec<f64>> {
    if x.len() != net.width {
        return Err(Error::WidthMismatch { expected: net.width, got: x.len() });
    }
    let mask: Vec<bool> = net.ops[l].iter().map(Option::is_some).collect();
    if alpha_row.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "alpha row has {} entries, layer has {}",
            alpha_row.len(),
            mask.len()
        )));
    }
    let d = gumbel_softmax_with_noise(alpha_row, Some(&mask), gumbel_noise(mask.len(), rng), temp)?;
    let w = match mode {
        SampleMode::Relaxed => d.soft,
        SampleMode::Hard => (0..mask.len()).map(|k| if k == d.choice { 1.0 } else { 0.0 }).collect(),
    };
    let mut out = vec![0.0; net.width];
    for (k, wk) in w.iter().enumerate() {
        if *wk != 0.0 {
            let o = net.op_forward(l, k, x)?;
            out.iter_mut().zip(&o).for_each(|(a, b)| *a += wk * b);
        }
    }
    Ok(out)
}

/// `sum_{l,k} w_lk * table_lk`.
pub fn hw_loss(weights: &[Vec<f64>], table: &[Vec<f64>]) -> f64 {
    weights.iter().zip(table).map(|(w, t)| w.iter().zip(t).map(|(a, b)| a * b).sum::<f64>()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchPass {
    /// Cross-entropy plus `lambda * hw`.
    pub loss: f64,
    pub ce: f64,
    pub hw: f64,
    pub correct: usize,
    pub grad_alpha: Vec<Vec<f64>>,
    pub grad_omega: Vec<f64>,
}

/// Loss and gradients for a fixed noise realization. In relaxed mode the
/// alpha gradient is exact; in hard mode it is the straight-through
/// estimate.
#[allow(clippy::too_many_arguments)]
pub fn architecture_pass(
    net: &SuperNet,
    alpha: &AlphaParams,
    batch: &Split,
    noise: &[Vec<f64>],
    temp: f64,
    mode: SampleMode,
    hw: Option<(&[Vec<f64>], f64)>,
    want_grad: bool,
) -> Result<ArchPass> {
    let mask = net.mask();
    let (fwd, soft) = mixing_weights(alpha, &mask, noise, temp, mode)?;
    let p = net.pass(&fwd, batch, want_grad)?;
    let (hw_val, lambda) = match hw {
        Some((table, lambda)) => {
            if table.len() != mask.len() || table.iter().zip(&mask).any(|(t, m)| t.len() != m.len()) {
                return Err(Error::ShapeMismatch("hardware cost table does not match alpha".into()));
            }
            (hw_loss(&soft, table), lambda)
        }
        None => (0.0, 0.0),
    };
    let mut grad_alpha = vec![Vec::new(); mask.len()];
    if want_grad {
        for l in 0..mask.len() {
            let g: Vec<f64> =
                (0..mask[l].len()).map(|k| p.grad_mix[l][k] + hw.map_or(0.0, |(t, lam)| lam * t[l][k])).collect();
            let s = &soft[l];
            let mean: f64 = (0..s.len()).filter(|&k| mask[l][k]).map(|k| s[k] * g[k]).sum();
            grad_alpha[l] = (0..s.len()).map(|j| if mask[l][j] { s[j] * (g[j] - mean) / temp } else { 0.0 }).collect();
        }
    }
    let loss = p.loss + lambda * hw_val;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("architecture loss {loss}")));
    }
    Ok(ArchPass { loss, ce: p.loss, hw: hw_val, correct: p.correct, grad_alpha, grad_omega: p.grad_omega })
}

/// One SGD step on the supernet weights with alpha frozen. Returns the
/// training loss before the step.
#[allow(clippy::too_many_arguments)]
pub fn train_step_weights<R: Rng + ?Sized>(
    net: &mut SuperNet,
    alpha: &AlphaParams,
    batch: &Split,
    opt: &mut Sgd,
    temp: f64,
    mode: SampleMode,
    rng: &mut R,
) -> Result<f64> {
    let noise = draw_noise(alpha, rng);
    let p = architecture_pass(net, alpha, batch, &noise, temp, mode, None, true)?;
    opt.step(&mut net.omega, &p.grad_omega);
    Ok(p.ce)
}

/// One Adam step on alpha for validation loss plus `lambda` times the
/// layer-wise hardware loss. Returns the pass before the step.
#[allow(clippy::too_many_arguments)]
pub fn update_alpha<R: Rng + ?Sized>(
    net: &SuperNet,
    alpha: &mut AlphaParams,
    batch: &Split,
    hw_table: &[Vec<f64>],
    lambda: f64,
    opt: &mut Adam,
    temp: f64,
    mode: SampleMode,
    rng: &mut R,
) -> Result<ArchPass> {
    if hw_table.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config("hardware cost table entries must be finite and >= 0".into()));
    }
    let noise = draw_noise(alpha, rng);
    let p = architecture_pass(net, alpha, batch, &noise, temp, mode, Some((hw_table, lambda)), true)?;
    let mut flat = alpha.flat();
    opt.step(&mut flat, &p.grad_alpha.concat());
    alpha.set_flat(&flat);
    Ok(p)
}

/// A concrete network picked from the space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedNetwork {
    pub choices: Vec<usize>,
    pub blocks: Vec<BlockChoice>,
    pub network: NetworkDesc,
}

impl DerivedNetwork {
    pub fn from_choices(space: &NetworkSpace, choices: Vec<usize>) -> Result<Self> {
        let network = space.expand(&choices)?;
        let blocks = choices.iter().map(|&k| space.candidates[k]).collect();
        Ok(DerivedNetwork { choices, blocks, network })
    }
}

/// Per layer, the admissible candidate with the largest logit (lowest index
/// on ties).
pub fn derive_network(alpha: &AlphaParams, space: &NetworkSpace) -> Result<DerivedNetwork> {
    if alpha.logits.len() != space.num_layers() {
        return Err(Error::ShapeMismatch("alpha does not match the network space".into()));
    }
    let mask = space.allowed_mask();
    let choices = alpha
        .logits
        .iter()
        .zip(&mask)
        .map(|(row, m)| {
            let mut best: Option<usize> = None;
            for k in 0..row.len() {
                if m[k] && best.is_none_or(|b| row[k] > row[b]) {
                    best = Some(k);
                }
            }
            best.unwrap_or(0)
        })
        .collect();
    DerivedNetwork::from_choices(space, choices)
}

/// `m` independent hard Gumbel samples of the whole network.
pub fn sample_networks<R: Rng + ?Sized>(
    alpha: &AlphaParams,
    space: &NetworkSpace,
    m: usize,
    temp: f64,
    rng: &mut R,
) -> Result<Vec<DerivedNetwork>> {
    if alpha.logits.len() != space.num_layers() {
        return Err(Error::ShapeMismatch("alpha does not match the network space".into()));
    }
    let mask = space.allowed_mask();
    (0..m)
        .map(|_| {
            let mut choices = Vec::with_capacity(mask.len());
            for (row, mk) in alpha.logits.iter().zip(&mask) {
                let d = gumbel_softmax_with_noise(row, Some(mk), gumbel_noise(row.len(), rng), temp)?;
                choices.push(d.choice);
            }
            DerivedNetwork::from_choices(space, choices)
        })
        .collect()
}

/// Expected relaxed weights `softmax(alpha)` per layer (no noise).
pub fn alpha_probabilities(alpha: &AlphaParams, mask: &[Vec<bool>]) -> Vec<Vec<f64>> {
    alpha.logits.iter().zip(mask).map(|(r, m)| relaxed(r, Some(m), &vec![0.0; r.len()], 1.0)).collect()
}

fn default_hidden_max() -> usize {
    16
}
fn default_batch() -> usize {
    32
}
fn default_weight_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_alpha_lr() -> f64 {
    0.05
}
fn default_temp_init() -> f64 {
    3.0
}
fn default_temp_decay() -> f64 {
    0.92
}
fn default_mode() -> SampleMode {
    SampleMode::Relaxed
}
fn default_retrain_epochs() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsConfig {
    #[serde(default = "default_hidden_max")]
    pub hidden_max: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_weight_lr")]
    pub weight_lr: f64,
    #[serde(default = "default_momentum")]
    pub weight_momentum: f64,
    #[serde(default = "default_alpha_lr")]
    pub alpha_lr: f64,
    #[serde(default = "default_temp_init")]
    pub temp_init: f64,
    #[serde(default = "default_temp_decay")]
    pub temp_decay: f64,
    #[serde(default = "default_mode")]
    pub mode: SampleMode,
    /// Epochs of weight-only training before alpha starts moving.
    #[serde(default)]
    pub warmup_epochs: usize,
    /// Epochs of standalone training used to score a derived network.
    #[serde(default = "default_retrain_epochs")]
    pub retrain_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DnsConfig {
    fn default() -> Self {
        DnsConfig {
            hidden_max: default_hidden_max(),
            batch_size: default_batch(),
            weight_lr: default_weight_lr(),
            weight_momentum: default_momentum(),
            alpha_lr: default_alpha_lr(),
            temp_init: default_temp_init(),
            temp_decay: default_temp_decay(),
            mode: default_mode(),
            warmup_epochs: 0,
            retrain_epochs: default_retrain_epochs(),
            seed: 0,
        }
    }
}

impl DnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_max == 0 || self.batch_size == 0 {
            return Err(Error::Config("dns hidden_max and batch_size must be >= 1".into()));
        }
        if !(self.temp_init > 0.0) || !(self.temp_decay > 0.0 && self.temp_decay <= 1.0) {
            return Err(Error::Config("dns temp_init must be > 0 and temp_decay in (0, 1]".into()));
        }
        if !(self.weight_lr >= 0.0) || !(self.alpha_lr >= 0.0) {
            return Err(Error::Config("dns learning rates must be >= 0".into()));
        }
        Ok(())
    }

    pub fn temperature(&self, epoch: usize) -> f64 {
        self.temp_init * self.temp_decay.powi(epoch as i32)
    }
}

/// Supernet, alpha and both optimizers of one search.
#[derive(Debug, Clone, PartialEq)]
pub struct DnsState {
    pub net: SuperNet,
    pub alpha: AlphaParams,
    pub weight_opt: Sgd,
    pub alpha_opt: Adam,
}

impl DnsState {
    pub fn new(space: &NetworkSpace, task: &SyntheticTask, cfg: &DnsConfig) -> Result<Self> {
        cfg.validate()?;
        let hidden = hidden_widths(space, cfg.hidden_max)?;
        let net = SuperNet::new(&hidden, task.input_dim, task.num_classes, cfg.seed)?;
        let alpha = AlphaParams::for_space(space);
        let n = net.omega.len();
        let a = space.num_layers() * space.num_candidates();
        Ok(DnsState {
            net,
            alpha,
            weight_opt: Sgd::new(cfg.weight_lr, cfg.weight_momentum, n),
            alpha_opt: Adam::new(cfg.alpha_lr, a),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub hw_loss: f64,
}

fn batches(n: usize, size: usize, seed: u64, path: &[u64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, path));
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

/// One epoch of interleaved updates: a weight step on a train batch, then an
/// alpha step on a validation batch (skipped during warmup).
pub fn dns_epoch(
    state: &mut DnsState,
    data: &Dataset,
    cfg: &DnsConfig,
    epoch: usize,
    hw: Option<(&[Vec<f64>], f64)>,
) -> Result<EpochStats> {
    let temp = cfg.temperature(epoch);
    let e = epoch as u64;
    let train = batches(data.train.len(), cfg.batch_size, cfg.seed, &[10, e]);
    let val = batches(data.val.len(), cfg.batch_size, cfg.seed, &[11, e]);
    let zero_table: Vec<Vec<f64>> = state.alpha.logits.iter().map(|r| vec![0.0; r.len()]).collect();
    let (table, lambda) = hw.unwrap_or((&zero_table, 0.0));
    let mut stats = EpochStats { train_loss: 0.0, val_loss: 0.0, hw_loss: 0.0 };
    let mut alpha_steps = 0usize;
    for (i, tb) in train.iter().enumerate() {
        let mut rng = stream(cfg.seed, &[12, e, i as u64]);
        let batch = data.train.gather(tb);
        stats.train_loss +=
            train_step_weights(&mut state.net, &state.alpha, &batch, &mut state.weight_opt, temp, cfg.mode, &mut rng)?;
        if epoch >= cfg.warmup_epochs {
            let vb = data.val.gather(&val[i % val.len()]);
            let p = update_alpha(
                &state.net,
                &mut state.alpha,
                &vb,
                table,
                lambda,
                &mut state.alpha_opt,
                temp,
                cfg.mode,
                &mut rng,
            )?;
            stats.val_loss += p.ce;
            stats.hw_loss += p.hw;
            alpha_steps += 1;
        }
    }
    stats.train_loss /= train.len() as f64;
    if alpha_steps > 0 {
        stats.val_loss /= alpha_steps as f64;
        stats.hw_loss /= alpha_steps as f64;
    }
    Ok(stats)
}

/// Mean validation cross-entropy of the supernet under noise-free relaxed
/// weights `softmax(alpha)`.
pub fn supernet_val_loss(state: &DnsState, data: &Dataset) -> Result<f64> {
    let mask = state.net.mask();
    let w = alpha_probabilities(&state.alpha, &mask);
    Ok(state.net.pass(&w, &data.val, false)?.loss)
}

/// Proxy accuracy of a single architecture given as hidden widths (0 =
/// skip): trained from scratch on the train split, scored on the validation
/// split. Depends only on `(widths, data, cfg, seed)`.
pub fn standalone_accuracy(widths: &[usize], data: &Dataset, cfg: &DnsConfig, seed: u64) -> Result<f64> {
    let hidden: Vec<Vec<Option<usize>>> = widths.iter().map(|&h| vec![Some(h)]).collect();
    let mut net = SuperNet::new(&hidden, data.train.dim, num_classes(data), seed)?;
    let mix: Vec<Vec<f64>> = vec![vec![1.0]; widths.len()];
    let mut opt = Sgd::new(cfg.weight_lr, cfg.weight_momentum, net.omega.len());
    for epoch in 0..cfg.retrain_epochs {
        for b in batches(data.train.len(), cfg.batch_size, seed, &[20, epoch as u64]) {
            let p = net.pass(&mix, &data.train.gather(&b), true)?;
            opt.step(&mut net.omega, &p.grad_omega);
        }
    }
    let p = net.pass(&mix, &data.val, false)?;
    Ok(p.correct as f64 / data.val.len() as f64)
}

fn num_classes(data: &Dataset) -> usize {
    data.train.y.iter().chain(&data.val.y).copied().max().unwrap_or(0) + 1
}

/// Hidden widths of a derived network's proxy.
pub fn derived_widths(hidden: &[Vec<Option<usize>>], choices: &[usize]) -> Vec<usize> {
    choices.iter().enumerate().map(|(l, &k)| hidden[l][k].unwrap_or(0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::LayerSlot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_space() -> NetworkSpace {
        NetworkSpace {
            input_channels: 4,
            input_spatial: 4,
            layers: vec![LayerSlot { out_channels: 8, stride: 2 }, LayerSlot { out_channels: 8, stride: 1 }],
            candidates: vec![BlockChoice::new(3, 1, 1), BlockChoice::new(1, 2, 1), BlockChoice::skip()],
        }
    }

    #[test]
    fn hidden_widths_follow_macs() {
        let s = small_space();
        let h = hidden_widths(&s, 16).unwrap();
        assert_eq!(h[0][2], None);
        assert_eq!(h[1][2], Some(0));
        assert!(h.iter().flatten().flatten().all(|&v| v <= 16));
        assert!(h.iter().flatten().flatten().any(|&v| v == 16));
    }

    #[test]
    fn derive_tie_break_and_invariance() {
        let s = small_space();
        let a = AlphaParams::for_space(&s);
        assert_eq!(derive_network(&a, &s).unwrap().choices, vec![0, 0]);
        let mut b = a.clone();
        b.logits = vec![vec![0.1, 0.5, 9.0], vec![0.0, 0.2, 1.0]];
        // skip excluded at layer 0
        assert_eq!(derive_network(&b, &s).unwrap().choices, vec![1, 2]);
        let mut c = b.clone();
        for row in &mut c.logits {
            for v in row.iter_mut() {
                *v = *v * 3.0 + 7.0;
            }
        }
        assert_eq!(derive_network(&c, &s).unwrap().choices, vec![1, 2]);
    }

    #[test]
    fn one_hot_alpha_samples_argmax() {
        let s = small_space();
        let a = AlphaParams { logits: vec![vec![f64::INFINITY, 0.0, 0.0], vec![0.0, 0.0, f64::INFINITY]] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nets = sample_networks(&a, &s, 3, 1.0, &mut rng).unwrap();
        assert!(nets.iter().all(|n| n.choices == vec![0, 2]));
    }

    #[test]
    fn relaxed_weights_sum_to_one() {
        let a = AlphaParams { logits: vec![vec![0.3, -1.0, 2.0], vec![0.0, 5.0, 0.0]] };
        let mask = vec![vec![true, true, false], vec![true; 3]];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = draw_noise(&a, &mut rng);
        let (fwd, soft) = mixing_weights(&a, &mask, &noise, 0.7, SampleMode::Relaxed).unwrap();
        assert_eq!(fwd, soft);
        for row in &soft {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(soft[0][2], 0.0);
        let (hard, _) = mixing_weights(&a, &mask, &noise, 0.7, SampleMode::Hard).unwrap();
        assert!(hard.iter().all(|r| r.iter().filter(|&&v| v == 1.0).count() == 1));
    }

    #[test]
    fn hw_loss_is_weighted_sum() {
        let w = vec![vec![0.25, 0.75], vec![0.5, 0.5]];
        let t = vec![vec![4.0, 8.0], vec![2.0, 6.0]];
        assert_eq!(hw_loss(&w, &t), 1.0 + 6.0 + 1.0 + 3.0);
    }
}
