//! Dense proxy supernet with hand-written backprop.
//!
//! Every non-skip candidate is the residual map `a + W2 tanh(W1 a + b1) + b2`
//! with a hidden width proportional to its MAC count; skip is the identity.
//! A linear head with softmax cross-entropy sits on top.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;

use super::task::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpSlot {
    /// 0 means identity.
    pub hidden: usize,
    pub offset: usize,
}

/// Candidate operators of every layer plus the head. `ops[l][k]` is `None`
/// for candidates that are structurally excluded at layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperNet {
    pub width: usize,
    pub num_classes: usize,
    pub ops: Vec<Vec<Option<OpSlot>>>,
    pub omega: Vec<f64>,
    pub head_offset: usize,
}

fn op_len(width: usize, h: usize) -> usize {
    2 * width * h + h + width
}

fn init_normal(dst: &mut [f64], std: f64, rng: &mut rand_chacha::ChaCha8Rng) {
    let n = Normal::new(0.0, std).expect("finite std");
    dst.iter_mut().for_each(|v| *v = n.sample(rng));
}

impl SuperNet {
    /// Builds a supernet from per-candidate hidden widths. Weights of the op
    /// at layer `l` with hidden width `h` depend only on `(seed, l, h)`, so
    /// equal-width candidates start identical.
    pub fn new(hidden: &[Vec<Option<usize>>], width: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if width == 0 || width > 64 || num_classes < 2 {
            return Err(Error::Config("proxy width must be in 1..=64 and classes >= 2".into()));
        }
        let mut omega = Vec::new();
        let mut ops = Vec::with_capacity(hidden.len());
        for (l, row) in hidden.iter().enumerate() {
            if row.iter().all(Option::is_none) {
                return Err(Error::Config(format!("layer {l} has no admissible candidate")));
            }
            let mut slots = Vec::with_capacity(row.len());
            for h in row {
                slots.push(h.map(|h| {
                    let offset = omega.len();
                    if h > 0 {
                        omega.resize(offset + op_len(width, h), 0.0);
                        let mut rng = stream(seed, &[1, l as u64, h as u64]);
                        let (w1, rest) = omega[offset..].split_at_mut(h * width);
                        init_normal(w1, (1.0 / width as f64).sqrt(), &mut rng);
                        let w2 = &mut rest[h..h + width * h];
                        init_normal(w2, (1.0 / h as f64).sqrt(), &mut rng);
                    }
                    OpSlot { hidden: h, offset }
                }));
            }
            ops.push(slots);
        }
        let head_offset = omega.len();
        omega.resize(head_offset + num_classes * width + num_classes, 0.0);
        let mut rng = stream(seed, &[2]);
        init_normal(&mut omega[head_offset..head_offset + num_classes * width], (1.0 / width as f64).sqrt(), &mut rng);
        Ok(SuperNet { width, num_classes, ops, omega, head_offset })
    }

    pub fn num_layers(&self) -> usize {
        self.ops.len()
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.ops.iter().map(|r| r.iter().map(Option::is_some).collect()).collect()
    }

    /// Output of candidate `k` at layer `l`.
    pub fn op_forward(&self, l: usize, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.width {
            return Err(Error::WidthMismatch { expected: self.width, got: x.len() });
        }
        let op = self.ops[l][k].ok_or_else(|| Error::InvalidChoice(format!("candidate {k} excluded at layer {l}")))?;
        let mut out = vec![0.0; self.width];
        let mut t = vec![0.0; op.hidden];
        self.apply(op, x, &mut t, &mut out);
        Ok(out)
    }

    fn apply(&self, op: OpSlot, x: &[f64], t: &mut [f64], out: &mut [f64]) {
        let (w, h) = (self.width, op.hidden);
        if h == 0 {
            out.copy_from_slice(x);
            return;
        }
        let p = &self.omega[op.offset..op.offset + op_len(w, h)];
        let (w1, rest) = p.split_at(h * w);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(w * h);
        for i in 0..h {
            let row = &w1[i * w..(i + 1) * w];
            t[i] = (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[i]).tanh();
        }
        for o in 0..w {
            let row = &w2[o * h..(o + 1) * h];
            out[o] = x[o] + row.iter().zip(t.iter()).map(|(a, b)| a * b).sum::<f64>() + b2[o];
        }
    }

    /// Accumulates parameter gradients of `op` for output gradient `gout`
    /// and adds the input gradient to `gx`.
    fn apply_backward(&self, op: OpSlot, x: &[f64], t: &[f64], gout: &[f64], grad: &mut [f64], gx: &mut [f64]) {
        let (w, h) = (self.width, op.hidden);
        if h == 0 {
            gx.iter_mut().zip(gout).for_each(|(a, b)| *a += b);
            return;
        }
        gx.iter_mut().zip(gout).for_each(|(a, b)| *a += b);
        let base = op.offset;
        let w1 = &self.omega[base..base + h * w];
        let w2 = &self.omega[base + h * w + h..base + h * w + h + w * h];
        let mut gt = vec![0.0; h];
        for o in 0..w {
            let g = gout[o];
            if g == 0.0 {
                continue;
            }
            let gw2 = base + h * w + h + o * h;
            for i in 0..h {
                grad[gw2 + i] += g * t[i];
                gt[i] += g * w2[o * h + i];
            }
            grad[base + 2 * h * w + h + o] += g;
        }
        for i in 0..h {
            let gpre = gt[i] * (1.0 - t[i] * t[i]);
            if gpre == 0.0 {
                continue;
            }
            grad[base + h * w + i] += gpre;
            for j in 0..w {
                grad[base + i * w + j] += gpre * x[j];
                gx[j] += gpre * w1[i * w + j];
            }
        }
    }

    /// Mixed forward over a batch with fixed mixing weights `mix[l][k]`
    /// (zero for excluded candidates). Returns the mean cross-entropy and,
    /// when `want_grad`, the gradients w.r.t. omega and w.r.t. the mixing
    /// weights.
    pub fn pass(&self, mix: &[Vec<f64>], batch: &Split, want_grad: bool) -> Result<PassOutput> {
        if batch.dim != self.width {
            return Err(Error::WidthMismatch { expected: self.width, got: batch.dim });
        }
        if mix.len() != self.ops.len() || mix.iter().zip(&self.ops).any(|(m, o)| m.len() != o.len()) {
            return Err(Error::ShapeMismatch("mixing weights do not match the supernet".into()));
        }
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let w = self.width;
        let c = self.num_classes;
        let n = batch.len() as f64;
        let mut out = PassOutput {
            loss: 0.0,
            correct: 0,
            grad_omega: if want_grad { vec![0.0; self.omega.len()] } else { Vec::new() },
            grad_mix: mix.iter().map(|r| vec![0.0; r.len()]).collect(),
        };
        let head_w = &self.omega[self.head_offset..self.head_offset + c * w];
        let head_b = &self.omega[self.head_offset + c * w..self.head_offset + c * w + c];

        for s in 0..batch.len() {
            // forward, keeping every evaluated op's hidden and output vectors
            let mut acts: Vec<Vec<f64>> = vec![batch.row(s).to_vec()];
            let mut cache: Vec<Vec<Option<(Vec<f64>, Vec<f64>)>>> = Vec::with_capacity(self.ops.len());
            for (l, row) in self.ops.iter().enumerate() {
                let x = acts.last().unwrap();
                let mut a = vec![0.0; w];
                let mut layer_cache = Vec::with_capacity(row.len());
                for (k, op) in row.iter().enumerate() {
                    let wk = mix[l][k];
                    match op {
                        Some(op) if wk != 0.0 || want_grad => {
                            let mut t = vec![0.0; op.hidden];
                            let mut o = vec![0.0; w];
                            self.apply(*op, x, &mut t, &mut o);
                            a.iter_mut().zip(&o).for_each(|(ai, oi)| *ai += wk * oi);
                            layer_cache.push(Some((t, o)));
                        }
                        _ => layer_cache.push(None),
                    }
                }
                cache.push(layer_cache);
                acts.push(a);
            }
            let a_l = acts.last().unwrap();
            let mut z: Vec<f64> = (0..c)
                .map(|i| head_w[i * w..(i + 1) * w].iter().zip(a_l).map(|(p, q)| p * q).sum::<f64>() + head_b[i])
                .collect();
            let y = batch.y[s];
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
            out.loss += (lse - z[y]) / n;
            let pred = (0..c).fold(0, |b, i| if z[i] > z[b] { i } else { b });
            if pred == y {
                out.correct += 1;
            }
            if !want_grad {
                continue;
            }
            // backward
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = ((*zi - lse).exp() - if i == y { 1.0 } else { 0.0 }) / n;
            }
            let gz = z;
            let mut ga = vec![0.0; w];
            for i in 0..c {
                for j in 0..w {
                    out.grad_omega[self.head_offset + i * w + j] += gz[i] * a_l[j];
                    ga[j] += gz[i] * head_w[i * w + j];
                }
                out.grad_omega[self.head_offset + c * w + i] += gz[i];
            }
            for l in (0..self.ops.len()).rev() {
                let x = &acts[l];
                let mut gx = vec![0.0; w];
                for (k, op) in self.ops[l].iter().enumerate() {
                    let (Some(op), Some((t, o))) = (op, &cache[l][k]) else { continue };
                    out.grad_mix[l][k] += ga.iter().zip(o).map(|(p, q)| p * q).sum::<f64>();
                    let wk = mix[l][k];
                    if wk != 0.0 {
                        let gout: Vec<f64> = ga.iter().map(|g| g * wk).collect();
                        self.apply_backward(*op, x, t, &gout, &mut out.grad_omega, &mut gx);
                    }
                }
                ga = gx;
            }
        }
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("cross-entropy {}", out.loss)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassOutput {
    pub loss: f64,
    pub correct: usize,
    pub grad_omega: Vec<f64>,
    /// d loss / d mix[l][k]
    pub grad_mix: Vec<Vec<f64>>,
}
