//! Ranking rewards: Top-K utility, entropy-based cohort diversity and the
//! one-sided exposure loss used by the exposure-fairness baseline.

use log::warn;

use crate::domain::{GroupDistribution, Ranking};
use crate::error::{FairRankError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairnessMode {
    /// Entropy of the mean group distribution of the selected sites.
    Entropy,
    /// Negated one-sided exposure loss.
    OneSidedExposure,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardValue {
    pub utility: f64,
    pub fairness: f64,
    pub combined: f64,
}

impl RewardValue {
    pub fn new(utility: f64, fairness: f64, lambda: f64) -> Self {
        // λ = 0 must reproduce the utility bit for bit
        let combined = if lambda == 0.0 {
            utility
        } else {
            utility + lambda * fairness
        };
        Self {
            utility,
            fairness,
            combined,
        }
    }
}

/// Enrollment of the Top-K sites minus the enrollment left outside it.
pub fn utility_reward(r: &Ranking, enrollment: &[f64], k: usize) -> f64 {
    assert_eq!(r.len(), enrollment.len(), "ranking and enrollment lengths differ");
    let k = k.min(r.len());
    let (top, rest) = r.order().split_at(k);
    top.iter().map(|&i| enrollment[i]).sum::<f64>() - rest.iter().map(|&i| enrollment[i]).sum::<f64>()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(weights: &[f64]) -> f64 {
    weights
        .iter()
        .filter(|&&w| w > 0.0 && w < 1.0)
        .map(|&w| -w * w.ln())
        // float Sum starts from -0.0, which would print a one-hot row as "-0"
        .fold(0.0, |acc, x| acc + x)
}

/// Arithmetic mean of the membership rows of `sites`.
pub fn mean_membership(sites: &[usize], membership: &[GroupDistribution]) -> Vec<f64> {
    let l = membership.first().map_or(0, GroupDistribution::len);
    let mut out = vec![0.0; l];
    if sites.is_empty() {
        return out;
    }
    for &i in sites {
        for (o, w) in out.iter_mut().zip(membership[i].weights()) {
            *o += w;
        }
    }
    let n = sites.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Entropy of the mean group distribution of the Top-K sites.
pub fn fairness_reward(r: &Ranking, membership: &[GroupDistribution], k: usize) -> f64 {
    assert_eq!(r.len(), membership.len(), "ranking and membership lengths differ");
    entropy(&mean_membership(r.top_k(k), membership))
}

/// 1 for sites inside the Top-K prefix, 0 elsewhere, indexed by site.
pub fn position_bias(r: &Ranking, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; r.len()];
    for &i in r.top_k(k) {
        v[i] = 1.0;
    }
    v
}

/// Group exposure of a single ranking: `sum_i P[i, l] * bias[i]`.
pub fn ranking_exposure(r: &Ranking, membership: &[GroupDistribution], k: usize) -> Vec<f64> {
    let l = membership.first().map_or(0, GroupDistribution::len);
    let mut v = vec![0.0; l];
    for &i in r.top_k(k) {
        for (o, w) in v.iter_mut().zip(membership[i].weights()) {
            *o += w;
        }
    }
    v
}

/// Monte-Carlo group exposure over a set of sampled rankings.
pub fn group_exposure(samples: &[Ranking], membership: &[GroupDistribution], k: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(FairRankError::invalid("group exposure needs at least one ranking"));
    }
    let m = membership.len();
    let mut item = vec![0.0; m];
    for r in samples {
        if r.len() != m {
            return Err(FairRankError::dim(format!("ranking over {} sites, membership over {m}", r.len())));
        }
        for &i in r.top_k(k) {
            item[i] += 1.0;
        }
    }
    let n = samples.len() as f64;
    let l = membership.first().map_or(0, GroupDistribution::len);
    let mut v = vec![0.0; l];
    for (i, row) in membership.iter().enumerate() {
        let exposure = item[i] / n;
        for (o, w) in v.iter_mut().zip(row.weights()) {
            *o += w * exposure;
        }
    }
    Ok(v)
}

/// Enrollment-weighted mean membership per group.
pub fn merit(membership: &[GroupDistribution], enrollment: &[f64]) -> Result<Vec<f64>> {
    if membership.len() != enrollment.len() {
        return Err(FairRankError::dim("membership and enrollment lengths differ"));
    }
    let total: f64 = enrollment.iter().sum();
    if total <= 0.0 {
        return Err(FairRankError::Undefined("merit needs positive total enrollment".into()));
    }
    let l = membership.first().map_or(0, GroupDistribution::len);
    let mut m = vec![0.0; l];
    for (row, e) in membership.iter().zip(enrollment) {
        let gamma = e / total;
        for (o, w) in m.iter_mut().zip(row.weights()) {
            *o += w * gamma;
        }
    }
    Ok(m)
}

/// Sum over group pairs with `m[l] > m[l']` of `max(0, v[l]/m[l] - v[l']/m[l'])`.
pub fn exposure_loss(exposure: &[f64], merit: &[f64]) -> Result<f64> {
    if exposure.len() != merit.len() {
        return Err(FairRankError::dim("exposure and merit lengths differ"));
    }
    if let Some(l) = merit.iter().position(|&m| m <= 0.0) {
        return Err(FairRankError::Undefined(format!("group {l} has zero merit")));
    }
    Ok(ExposureObjective::from_merit(merit.to_vec()).loss(exposure))
}

/// The one-sided exposure loss for a fixed candidate set. Groups with zero
/// merit are left out of the pairwise sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureObjective {
    merit: Vec<f64>,
}

impl ExposureObjective {
    pub fn new(membership: &[GroupDistribution], enrollment: &[f64]) -> Result<Self> {
        let merit = merit(membership, enrollment)?;
        let zero: Vec<usize> = (0..merit.len()).filter(|&l| merit[l] <= 0.0).collect();
        if !zero.is_empty() {
            warn!("groups {zero:?} have zero merit and are excluded from the exposure loss");
        }
        Ok(Self::from_merit(merit))
    }

    fn from_merit(merit: Vec<f64>) -> Self {
        Self { merit }
    }

    pub fn merit(&self) -> &[f64] {
        &self.merit
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = &self.merit;
        (0..m.len()).flat_map(move |a| {
            (0..m.len()).filter_map(move |b| (m[a] > 0.0 && m[b] > 0.0 && m[a] > m[b]).then_some((a, b)))
        })
    }

    fn gap(&self, v: &[f64], a: usize, b: usize) -> f64 {
        v[a] / self.merit[a] - v[b] / self.merit[b]
    }

    pub fn loss(&self, v: &[f64]) -> f64 {
        self.pairs().map(|(a, b)| self.gap(v, a, b).max(0.0)).sum()
    }

    /// Gradient of [`loss`](Self::loss) at `v`. The loss is piecewise linear,
    /// so `coef · v` equals the loss at `v` and `coef · v_r` is an unbiased
    /// per-ranking estimate of it when `v` is the mean of the `v_r`.
    pub fn linearization(&self, v: &[f64]) -> Vec<f64> {
        let mut coef = vec![0.0; self.merit.len()];
        for (a, b) in self.pairs() {
            if self.gap(v, a, b) > 0.0 {
                coef[a] += 1.0 / self.merit[a];
                coef[b] -= 1.0 / self.merit[b];
            }
        }
        coef
    }
}

/// Utility plus `λ` times the fairness term for one ranking. In exposure mode
/// the fairness term is the negated exposure loss of this ranking's own
/// group exposure.
pub fn combined_reward(
    r: &Ranking,
    enrollment: &[f64],
    membership: &[GroupDistribution],
    k: usize,
    lambda: f64,
    mode: FairnessMode,
) -> Result<RewardValue> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(FairRankError::invalid(format!("lambda = {lambda} must be >= 0")));
    }
    if r.len() != enrollment.len() || r.len() != membership.len() {
        return Err(FairRankError::dim("ranking, enrollment and membership lengths differ"));
    }
    let utility = utility_reward(r, enrollment, k);
    let fairness = match mode {
        FairnessMode::Entropy => fairness_reward(r, membership, k),
        FairnessMode::OneSidedExposure => {
            let obj = ExposureObjective::new(membership, enrollment)?;
            -obj.loss(&ranking_exposure(r, membership, k))
        }
        FairnessMode::None => 0.0,
    };
    Ok(RewardValue::new(utility, fairness, lambda))
}
