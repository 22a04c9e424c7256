//! Plackett-Luce ranking policy over site permutations.
//!
//! A ranking is built top-down by repeatedly drawing one of the remaining
//! sites with probability proportional to `exp(score)`. Its log-probability
//! is the sum over positions of the placed score minus the log-sum-exp of
//! the scores still unplaced. For large candidate lists the Top-K proxy
//! replaces that product with the softmax mass of the first `K` sites.

use rand::Rng;

use crate::domain::Ranking;
use crate::error::{FairRankError, Result};

/// Lists longer than this default to the Top-K proxy.
pub const EXACT_MODE_MAX_SITES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    ExactPl,
    TopKProxy,
}

impl PolicyMode {
    pub fn auto(num_sites: usize) -> Self {
        if num_sites <= EXACT_MODE_MAX_SITES {
            PolicyMode::ExactPl
        } else {
            PolicyMode::TopKProxy
        }
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(FairRankError::invalid("empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FairRankError::invalid("non-finite score"));
    }
    Ok(())
}

fn check_ranking(scores: &[f64], r: &Ranking) -> Result<()> {
    check_scores(scores)?;
    if r.len() != scores.len() {
        return Err(FairRankError::dim(format!(
            "ranking over {} items, scores over {}",
            r.len(),
            scores.len()
        )));
    }
    Ok(())
}

fn check_k(m: usize, k: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(FairRankError::invalid(format!("K = {k} outside 1..={m}")));
    }
    Ok(())
}

/// Numerically stable `log(sum(exp(x)))` over an iterator of values.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of the whole score vector.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores.iter().copied());
    scores.iter().map(|s| (s - lse).exp()).collect()
}

/// Draws a ranking from the Plackett-Luce distribution defined by `scores`.
pub fn sample_ranking<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Result<Ranking> {
    check_scores(scores)?;
    Ok(sample_unchecked(scores, rng))
}

pub(crate) fn sample_unchecked<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Ranking {
    let m = scores.len();
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut weights = vec![0.0; m];
    let mut order = Vec::with_capacity(m);
    while remaining.len() > 1 {
        // re-shift by the max of what is left so small tails never underflow to zero mass
        let max = remaining.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, &i) in weights.iter_mut().zip(&remaining) {
            *w = (scores[i] - max).exp();
            total += *w;
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = remaining.len() - 1;
        for (j, w) in weights[..remaining.len()].iter().enumerate() {
            acc += w;
            if u < acc {
                pick = j;
                break;
            }
        }
        order.push(remaining.remove(pick));
    }
    order.extend(remaining);
    Ranking::from_permutation(order)
}

/// Suffix log-sum-exp: `out[i] = log sum_{j >= i} exp(scores[r(j)])`.
fn suffix_lse(scores: &[f64], order: &[usize]) -> Vec<f64> {
    let m = order.len();
    let mut out = vec![0.0; m];
    let mut acc = f64::NEG_INFINITY;
    for i in (0..m).rev() {
        let s = scores[order[i]];
        acc = if acc == f64::NEG_INFINITY {
            s
        } else {
            let hi = acc.max(s);
            hi + ((acc - hi).exp() + (s - hi).exp()).ln()
        };
        out[i] = acc;
    }
    out
}

/// Exact Plackett-Luce log-probability of a full ranking.
pub fn exact_log_prob(scores: &[f64], r: &Ranking) -> Result<f64> {
    check_ranking(scores, r)?;
    Ok(exact_log_prob_unchecked(scores, r))
}

fn exact_log_prob_unchecked(scores: &[f64], r: &Ranking) -> f64 {
    let order = r.order();
    let lse = suffix_lse(scores, order);
    order.iter().zip(&lse).map(|(&i, l)| scores[i] - l).sum()
}

/// Log of the summed softmax mass of the first `k` sites of `r`.
pub fn proxy_log_prob(scores: &[f64], r: &Ranking, k: usize) -> Result<f64> {
    check_ranking(scores, r)?;
    check_k(scores.len(), k)?;
    Ok(proxy_log_prob_unchecked(scores, r, k))
}

fn proxy_log_prob_unchecked(scores: &[f64], r: &Ranking, k: usize) -> f64 {
    if k == scores.len() {
        return 0.0;
    }
    let top = log_sum_exp(r.top_k(k).iter().map(|&i| scores[i]));
    top - log_sum_exp(scores.iter().copied())
}

pub fn log_prob(scores: &[f64], r: &Ranking, k: usize, mode: PolicyMode) -> Result<f64> {
    match mode {
        PolicyMode::ExactPl => exact_log_prob(scores, r),
        PolicyMode::TopKProxy => proxy_log_prob(scores, r, k),
    }
}

/// Gradient of [`log_prob`] with respect to the scores.
pub fn log_prob_grad(scores: &[f64], r: &Ranking, k: usize, mode: PolicyMode) -> Result<Vec<f64>> {
    check_ranking(scores, r)?;
    if mode == PolicyMode::TopKProxy {
        check_k(scores.len(), k)?;
    }
    let mut out = vec![0.0; scores.len()];
    accumulate_log_prob_grad(scores, r, k, mode, 1.0, &mut out);
    Ok(out)
}

/// Adds `weight * d log_prob / d scores` into `out`. Inputs must already be validated.
pub(crate) fn accumulate_log_prob_grad(
    scores: &[f64],
    r: &Ranking,
    k: usize,
    mode: PolicyMode,
    weight: f64,
    out: &mut [f64],
) {
    let order = r.order();
    match mode {
        PolicyMode::ExactPl => {
            // d/dh_a = 1 - sum over stages i up to a's position of exp(h_a - lse_i)
            let lse = suffix_lse(scores, order);
            for (pos, &a) in order.iter().enumerate() {
                let h = scores[a];
                let mass: f64 = lse[..=pos].iter().map(|l| (h - l).exp()).sum();
                out[a] += weight * (1.0 - mass);
            }
        }
        PolicyMode::TopKProxy => {
            if k >= order.len() {
                return;
            }
            let top = r.top_k(k);
            let lse_top = log_sum_exp(top.iter().map(|&i| scores[i]));
            let lse_all = log_sum_exp(scores.iter().copied());
            for (i, o) in out.iter_mut().enumerate() {
                *o -= weight * (scores[i] - lse_all).exp();
            }
            for &i in top {
                out[i] += weight * (scores[i] - lse_top).exp();
            }
        }
    }
}
