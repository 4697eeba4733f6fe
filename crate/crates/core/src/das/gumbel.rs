use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};

/// One Gumbel-Softmax draw. `noise` is kept so the relaxation can be
/// re-evaluated under the same realization.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelDraw {
    pub choice: usize,
    pub soft: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn check_temp(temp: f64) -> Result<()> {
    if temp > 0.0 && temp.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive and finite, got {temp}")))
    }
}

pub fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    (0..n).map(|_| g.sample(rng)).collect()
}

fn allowed(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// Softmax over the unmasked entries of `scores`; masked entries get 0.
/// Entries at +inf share all the mass.
pub fn masked_softmax(scores: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let max = (0..scores.len()).filter(|&i| allowed(mask, i)).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; scores.len()];
    if max == f64::INFINITY {
        let n = (0..scores.len()).filter(|&i| allowed(mask, i) && scores[i] == f64::INFINITY).count();
        for i in 0..scores.len() {
            if allowed(mask, i) && scores[i] == f64::INFINITY {
                out[i] = 1.0 / n as f64;
            }
        }
        return out;
    }
    let mut sum = 0.0;
    for i in 0..scores.len() {
        if allowed(mask, i) {
            out[i] = (scores[i] - max).exp();
            sum += out[i];
        }
    }
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Relaxed weights `softmax((logits + noise) / temp)` over the mask.
pub fn relaxed(logits: &[f64], mask: Option<&[bool]>, noise: &[f64], temp: f64) -> Vec<f64> {
    let scores: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / temp).collect();
    masked_softmax(&scores, mask)
}

pub fn gumbel_softmax_with_noise(
    logits: &[f64],
    mask: Option<&[bool]>,
    noise: Vec<f64>,
    temp: f64,
) -> Result<GumbelDraw> {
    check_temp(temp)?;
    let mut choice = None;
    let mut best = f64::NEG_INFINITY;
    for i in 0..logits.len() {
        if !allowed(mask, i) {
            continue;
        }
        let s = logits[i] + noise[i];
        if choice.is_none() || s > best {
            best = s;
            choice = Some(i);
        }
    }
    let choice = choice.ok_or(Error::EmptyOptions)?;
    let soft = relaxed(logits, mask, &noise, temp);
    Ok(GumbelDraw { choice, soft, noise })
}

pub fn gumbel_softmax_masked<R: Rng + ?Sized>(
    logits: &[f64],
    mask: Option<&[bool]>,
    temp: f64,
    rng: &mut R,
) -> Result<GumbelDraw> {
    let noise = gumbel_noise(logits.len(), rng);
    gumbel_softmax_with_noise(logits, mask, noise, temp)
}

/// Hard choice `argmax(logits + g)` and relaxed vector `softmax((logits + g)/temp)`
/// from one shared Gumbel realization.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(logits: &[f64], temp: f64, rng: &mut R) -> Result<(usize, Vec<f64>)> {
    let d = gumbel_softmax_masked(logits, None, temp, rng)?;
    Ok((d.choice, d.soft))
}

/// Samples a permutation of `n` items: step t draws from row t of the n x n
/// row-major `matrix`, with already chosen items masked out.
pub fn sample_loop_order_draws<R: Rng + ?Sized>(
    matrix: &[f64],
    n: usize,
    temp: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<(Vec<bool>, GumbelDraw)>)> {
    if matrix.len() != n * n {
        return Err(Error::ShapeMismatch(format!("order logits have {} entries, expected {}", matrix.len(), n * n)));
    }
    let mut mask = vec![true; n];
    let mut perm = Vec::with_capacity(n);
    let mut draws = Vec::with_capacity(n);
    for t in 0..n {
        let d = gumbel_softmax_masked(&matrix[t * n..(t + 1) * n], Some(&mask), temp, rng)?;
        perm.push(d.choice);
        let m = mask.clone();
        mask[d.choice] = false;
        draws.push((m, d));
    }
    Ok((perm, draws))
}

pub fn sample_loop_order<R: Rng + ?Sized>(
    matrix: &[f64],
    n: usize,
    temp: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let (perm, draws) = sample_loop_order_draws(matrix, n, temp, rng)?;
    let probs = draws.iter().map(|(_, d)| d.soft[d.choice]).collect();
    Ok((perm, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_and_soft_share_noise() {
        let d = gumbel_softmax_with_noise(&[0.0, 1.0, 0.0], None, vec![2.0, 0.0, 0.5], 1.0).unwrap();
        assert_eq!(d.choice, 0);
        let z: f64 = [2.0f64, 1.0, 0.5].iter().map(|v| v.exp()).sum();
        assert!((d.soft[0] - 2.0f64.exp() / z).abs() < 1e-15);
    }

    #[test]
    fn low_temperature_is_one_hot() {
        let d = gumbel_softmax_with_noise(&[0.3, 0.1], None, vec![0.0, 0.0], 1e-4).unwrap();
        assert_eq!(d.soft, vec![1.0, 0.0]);
    }

    #[test]
    fn masked_entries_never_win() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = gumbel_softmax_masked(&[10.0, 0.0, 0.0], Some(&[false, true, true]), 1.0, &mut rng).unwrap();
            assert_ne!(d.choice, 0);
            assert_eq!(d.soft[0], 0.0);
            assert!((d.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(gumbel_softmax_masked(&[0.0], Some(&[false]), 1.0, &mut rng), Err(Error::EmptyOptions)));
        assert!(matches!(gumbel_softmax_sample(&[], 1.0, &mut rng), Err(Error::EmptyOptions)));
        assert!(gumbel_softmax_sample(&[0.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn infinite_logit_takes_all_mass() {
        let w = masked_softmax(&[f64::INFINITY, 0.0, 5.0], None);
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_item_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (perm, p) = sample_loop_order(&[0.0], 1, 1.0, &mut rng).unwrap();
        assert_eq!(perm, vec![0]);
        assert_eq!(p, vec![1.0]);
    }
}
