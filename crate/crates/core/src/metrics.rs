//! Evaluation metrics: relative enrollment error, recall, NDCG, selection
//! entropy and expected group representation, plus dataset-level
//! evaluation of a trained scorer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;

use crate::datagen::{Dataset, Split};
use crate::domain::{CandidateSet, GroupDistribution, Ranking};
use crate::error::{FairRankError, Result};
use crate::policy;
use crate::rewards::{self, FairnessMode};
use crate::rng;
use crate::scorer::{self, MlpParams};
use crate::trainer::rank_deterministic;

/// Sum of the `k` largest enrollments.
pub fn max_enrollment(enrollment: &[f64], k: usize) -> f64 {
    let mut e = enrollment.to_vec();
    e.sort_by(|a, b| b.total_cmp(a));
    e.iter().take(k).sum()
}

fn top_k_sum(r: &Ranking, enrollment: &[f64], k: usize) -> f64 {
    r.top_k(k).iter().map(|&i| enrollment[i]).sum()
}

/// `(Δmax − Δπ) / Δmax` with `Δπ` the mean Top-K enrollment over the samples.
pub fn relative_error(samples: &[Ranking], enrollment: &[f64], k: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(FairRankError::invalid("relative error needs at least one ranking"));
    }
    let best = max_enrollment(enrollment, k);
    if best <= 0.0 {
        return Err(FairRankError::Undefined("maximum Top-K enrollment is zero".into()));
    }
    let mean = samples.iter().map(|r| top_k_sum(r, enrollment, k)).sum::<f64>() / samples.len() as f64;
    Ok((best - mean) / best)
}

/// The true Top-K: the `min(#positive, k)` highest-enrollment sites, ties
/// broken by ascending index.
pub fn true_top_k(enrollment: &[f64], k: usize) -> Vec<usize> {
    let positive = enrollment.iter().filter(|&&e| e > 0.0).count();
    let mut idx: Vec<usize> = (0..enrollment.len()).collect();
    idx.sort_by(|&a, &b| enrollment[b].total_cmp(&enrollment[a]).then(a.cmp(&b)));
    idx.truncate(positive.min(k));
    idx
}

pub fn recall_at_k(selected: &[usize], true_topk: &[usize]) -> Result<f64> {
    if true_topk.is_empty() {
        return Err(FairRankError::Undefined("recall with an empty true Top-K".into()));
    }
    let hits = true_topk.iter().filter(|t| selected.contains(t)).count();
    Ok(hits as f64 / true_topk.len() as f64)
}

/// Maps enrollment to NDCG gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainTransform {
    /// `2^e` on the raw values.
    Raw,
    /// Affine map of `[min, max]` onto `[0, 10]`.
    Scaled { min: f64, max: f64 },
}

impl GainTransform {
    pub const SCALED_MAX: f64 = 10.0;

    pub fn fit<'a, I: IntoIterator<Item = &'a CandidateSet>>(sets: I) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for cs in sets {
            for &e in &cs.enrollment {
                min = min.min(e);
                max = max.max(e);
            }
        }
        if !min.is_finite() {
            (min, max) = (0.0, 0.0);
        }
        GainTransform::Scaled { min, max }
    }

    pub fn apply(&self, enrollment: &[f64]) -> Vec<f64> {
        match *self {
            GainTransform::Raw => enrollment.to_vec(),
            GainTransform::Scaled { min, max } => {
                let span = max - min;
                enrollment
                    .iter()
                    .map(|&e| if span > 0.0 { Self::SCALED_MAX * (e - min) / span } else { 0.0 })
                    .collect()
            }
        }
    }
}

fn dcg(items: impl Iterator<Item = f64>) -> Result<f64> {
    let mut total = 0.0;
    for (pos, g) in items.enumerate() {
        let gain = g.exp2() - 1.0;
        if !gain.is_finite() {
            return Err(FairRankError::Undefined(format!(
                "NDCG gain 2^{g} overflows; rescale the enrollment"
            )));
        }
        total += gain / ((pos + 2) as f64).log2();
    }
    Ok(total)
}

/// Top-K NDCG with exponential gains `2^g − 1` and `log2(k + 1)` discounts.
/// An all-zero ideal ranking scores 1.
pub fn ndcg_at_k(r: &Ranking, gains: &[f64], k: usize) -> Result<f64> {
    if r.len() != gains.len() {
        return Err(FairRankError::dim("ranking and gains lengths differ"));
    }
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let norm = dcg(ideal.into_iter().take(k))?;
    if norm <= 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(r.top_k(k).iter().map(|&i| gains[i]))? / norm)
}

/// Mean over samples of the average membership of the Top-K sites.
pub fn expected_group_representation(
    samples: &[Ranking],
    membership: &[GroupDistribution],
    k: usize,
) -> Result<GroupDistribution> {
    if samples.is_empty() {
        return Err(FairRankError::invalid("group representation needs at least one ranking"));
    }
    let l = membership.first().map_or(0, GroupDistribution::len);
    let mut acc = vec![0.0; l];
    for r in samples {
        for (a, v) in acc.iter_mut().zip(rewards::mean_membership(r.top_k(k), membership)) {
            *a += v;
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    GroupDistribution::new(acc)
}

/// Per-group `(with − without) / without`; `None` where `without` is zero.
pub fn relative_change(with_div: &[f64], without_div: &[f64]) -> Vec<Option<f64>> {
    with_div
        .iter()
        .zip(without_div)
        .map(|(&w, &wo)| (wo > 0.0).then(|| (w - wo) / wo))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingPolicy {
    /// Plackett-Luce samples from the scores.
    Sampled,
    /// Sort by score.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub n_samples: usize,
    pub policy: RankingPolicy,
    /// `None` fits the scaled transform on the whole dataset.
    pub gain: Option<GainTransform>,
    pub lambda: f64,
    pub fairness: FairnessMode,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_samples: 20,
            policy: RankingPolicy::Sampled,
            gain: None,
            lambda: 0.0,
            fairness: FairnessMode::Entropy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub n_trials: usize,
    pub relative_error: f64,
    pub recall: f64,
    pub ndcg: f64,
    /// Mean selection entropy, nats.
    pub entropy: f64,
    pub utility: f64,
    pub combined: f64,
    pub expected_enrollment: f64,
    pub max_enrollment: f64,
    /// Expected group representation of the selected sites.
    pub group_representation: GroupDistribution,
    pub relative_change: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone)]
struct TrialMetrics {
    relative_error: f64,
    recall: f64,
    ndcg: f64,
    entropy: f64,
    utility: f64,
    combined: f64,
    expected_enrollment: f64,
    max_enrollment: f64,
    representation: Vec<f64>,
}

fn evaluate_trial(
    params: &MlpParams,
    trial_index: usize,
    cs: &CandidateSet,
    cfg: &EvalConfig,
    gain: &GainTransform,
) -> Result<Option<TrialMetrics>> {
    let k = cfg.k;
    let best = max_enrollment(&cs.enrollment, k);
    if best <= 0.0 {
        return Ok(None);
    }
    let scores = scorer::score(params, &cs.trial, &cs.sites)?;
    let samples: Vec<Ranking> = match cfg.policy {
        RankingPolicy::Sampled => (0..cfg.n_samples)
            .map(|s| {
                let mut rng = rng::stream(cfg.seed, rng::STREAM_EVAL, &[trial_index as u64, s as u64]);
                policy::sample_unchecked(&scores, &mut rng)
            })
            .collect(),
        RankingPolicy::Deterministic => vec![rank_deterministic(&scores, k)?],
    };
    let gains = gain.apply(&cs.enrollment);
    let truth = true_top_k(&cs.enrollment, k);
    let n = samples.len() as f64;
    let (mut recall, mut ndcg, mut entropy, mut utility, mut combined, mut got) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for r in &samples {
        recall += recall_at_k(r.top_k(k), &truth)?;
        ndcg += ndcg_at_k(r, &gains, k)?;
        entropy += rewards::fairness_reward(r, &cs.membership, k);
        let rv = rewards::combined_reward(r, &cs.enrollment, &cs.membership, k, cfg.lambda, cfg.fairness)?;
        utility += rv.utility;
        combined += rv.combined;
        got += top_k_sum(r, &cs.enrollment, k);
    }
    let expected = got / n;
    Ok(Some(TrialMetrics {
        relative_error: (best - expected) / best,
        recall: recall / n,
        ndcg: ndcg / n,
        entropy: entropy / n,
        utility: utility / n,
        combined: combined / n,
        expected_enrollment: expected,
        max_enrollment: best,
        representation: expected_group_representation(&samples, &cs.membership, k)?.into_inner(),
    }))
}

/// Evaluates the scorer on the given `(dataset index, candidate set)` pairs.
pub fn evaluate_sets(
    params: &MlpParams,
    sets: &[(usize, &CandidateSet)],
    cfg: &EvalConfig,
    gain: &GainTransform,
    label: &str,
) -> Result<EvalReport> {
    if cfg.k == 0 {
        return Err(FairRankError::invalid("K must be >= 1"));
    }
    if cfg.policy == RankingPolicy::Sampled && cfg.n_samples == 0 {
        return Err(FairRankError::invalid("evaluation needs at least one sample"));
    }
    if let Some((_, cs)) = sets.iter().find(|(_, cs)| cs.num_sites() < cfg.k) {
        return Err(FairRankError::invalid(format!(
            "trial {} has {} sites, fewer than K = {}",
            cs.trial.id,
            cs.num_sites(),
            cfg.k
        )));
    }
    let per_trial: Vec<Option<TrialMetrics>> = sets
        .par_iter()
        .map(|&(idx, cs)| evaluate_trial(params, idx, cs, cfg, gain))
        .collect::<Result<_>>()?;
    let skipped = per_trial.iter().filter(|m| m.is_none()).count();
    if skipped > 0 {
        warn!("{skipped} trial(s) without positive enrollment skipped in evaluation");
    }
    let kept: Vec<TrialMetrics> = per_trial.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(FairRankError::invalid("nothing to evaluate: empty split"));
    }
    let n = kept.len() as f64;
    let mean = |f: fn(&TrialMetrics) -> f64| kept.iter().map(f).sum::<f64>() / n;
    let l = kept[0].representation.len();
    let mut rep = vec![0.0; l];
    for t in &kept {
        for (a, v) in rep.iter_mut().zip(&t.representation) {
            *a += v;
        }
    }
    rep.iter_mut().for_each(|a| *a /= n);
    Ok(EvalReport {
        label: label.to_string(),
        n_trials: kept.len(),
        relative_error: mean(|t| t.relative_error),
        recall: mean(|t| t.recall),
        ndcg: mean(|t| t.ndcg),
        entropy: mean(|t| t.entropy),
        utility: mean(|t| t.utility),
        combined: mean(|t| t.combined),
        expected_enrollment: mean(|t| t.expected_enrollment),
        max_enrollment: mean(|t| t.max_enrollment),
        group_representation: GroupDistribution::new(rep)?,
        relative_change: None,
    })
}

fn resolve_gain(dataset: &Dataset, cfg: &EvalConfig) -> GainTransform {
    cfg.gain.unwrap_or_else(|| GainTransform::fit(&dataset.sets))
}

/// Evaluates one split (or the whole dataset when `split` is `None`).
pub fn evaluate(params: &MlpParams, dataset: &Dataset, split: Option<Split>, cfg: &EvalConfig) -> Result<EvalReport> {
    let sets = dataset.indexed(split);
    let label = split.map_or("all", Split::as_str);
    evaluate_sets(params, &sets, cfg, &resolve_gain(dataset, cfg), label)
}

/// One report per distinct value of the trial tag `group_by`; trials without
/// the tag are reported under `"unknown"`.
pub fn evaluate_grouped(
    params: &MlpParams,
    dataset: &Dataset,
    split: Option<Split>,
    cfg: &EvalConfig,
    group_by: &str,
) -> Result<Vec<EvalReport>> {
    let gain = resolve_gain(dataset, cfg);
    let mut groups: BTreeMap<String, Vec<(usize, &CandidateSet)>> = BTreeMap::new();
    for (idx, cs) in dataset.indexed(split) {
        let key = cs.trial.tags.get(group_by).cloned().unwrap_or_else(|| "unknown".into());
        groups.entry(key).or_default().push((idx, cs));
    }
    if groups.is_empty() {
        return Err(FairRankError::invalid("nothing to evaluate: empty split"));
    }
    groups
        .into_iter()
        .map(|(key, sets)| evaluate_sets(params, &sets, cfg, &gain, &format!("{group_by}={key}")))
        .collect()
}

impl EvalReport {
    /// Fills `relative_change` against a reference report, typically the same
    /// method trained without the diversity term.
    pub fn with_reference(mut self, reference: &EvalReport) -> Self {
        self.relative_change = Some(relative_change(
            self.group_representation.weights(),
            reference.group_representation.weights(),
        ));
        self
    }

    pub fn csv_header(num_groups: usize) -> String {
        let mut h = String::from(
            "label,n_trials,rel_err,recall,ndcg,entropy,utility,combined,expected_enrollment,max_enrollment",
        );
        for l in 0..num_groups {
            write!(h, ",n_{l}").unwrap();
        }
        for l in 0..num_groups {
            write!(h, ",rel_change_{l}").unwrap();
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.n_trials,
            self.relative_error,
            self.recall,
            self.ndcg,
            self.entropy,
            self.utility,
            self.combined,
            self.expected_enrollment,
            self.max_enrollment
        );
        for w in self.group_representation.weights() {
            write!(row, ",{w}").unwrap();
        }
        for l in 0..self.group_representation.len() {
            match self.relative_change.as_ref().and_then(|c| c[l]) {
                Some(v) => write!(row, ",{v}").unwrap(),
                None => row.push_str(",undefined"),
            }
        }
        row
    }

    /// `key=value` lines, one block per report.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let p = &self.label;
        writeln!(s, "[{p}]").unwrap();
        writeln!(s, "n_trials={}", self.n_trials).unwrap();
        writeln!(s, "rel_err={}", self.relative_error).unwrap();
        writeln!(s, "recall={}", self.recall).unwrap();
        writeln!(s, "ndcg={}", self.ndcg).unwrap();
        writeln!(s, "entropy={}", self.entropy).unwrap();
        writeln!(s, "utility={}", self.utility).unwrap();
        writeln!(s, "combined={}", self.combined).unwrap();
        writeln!(s, "expected_enrollment={}", self.expected_enrollment).unwrap();
        writeln!(s, "max_enrollment={}", self.max_enrollment).unwrap();
        let join = |v: Vec<String>| v.join(",");
        writeln!(
            s,
            "group_representation={}",
            join(self.group_representation.weights().iter().map(f64::to_string).collect())
        )
        .unwrap();
        if let Some(c) = &self.relative_change {
            writeln!(
                s,
                "relative_change={}",
                join(c.iter().map(|v| v.map_or("undefined".into(), |x| x.to_string())).collect())
            )
            .unwrap();
        }
        s
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let l = reports.first().map_or(0, |r| r.group_representation.len());
    let mut out = EvalReport::csv_header(l);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perm(v: &[usize]) -> Ranking {
        Ranking::new(v.to_vec()).unwrap()
    }

    #[test]
    fn relative_error_examples() {
        let e = [100.0, 50.0];
        assert_eq!(relative_error(&[perm(&[0, 1])], &e, 1).unwrap(), 0.0);
        assert_eq!(relative_error(&[perm(&[1, 0])], &e, 1).unwrap(), 0.5);
        assert!(relative_error(&[perm(&[1, 0])], &[0.0, 0.0], 1).is_err());
        assert!(relative_error(&[], &e, 1).is_err());
    }

    #[test]
    fn recall_examples() {
        let truth: Vec<usize> = (0..10).collect();
        let sel = [0, 1, 2, 3, 4, 5, 6, 17, 18, 19];
        assert!((recall_at_k(&sel, &truth).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(recall_at_k(&truth, &truth).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[11, 12], &[0, 1]).unwrap(), 0.0);
        assert!(recall_at_k(&[0], &[]).is_err());
    }

    #[test]
    fn true_top_k_counts_only_enrolled_sites() {
        assert_eq!(true_top_k(&[0.0, 3.0, 0.0, 1.0], 3), vec![1, 3]);
        assert_eq!(true_top_k(&[2.0, 5.0, 5.0, 1.0], 2), vec![1, 2]);
    }

    #[test]
    fn ndcg_examples() {
        let g = [3.0, 2.0, 1.0];
        assert_eq!(ndcg_at_k(&perm(&[0, 1, 2]), &g, 2).unwrap(), 1.0);
        let v = ndcg_at_k(&perm(&[2, 1, 0]), &g, 2).unwrap();
        assert!((v - 0.3253).abs() < 1e-4, "{v}");
        assert_eq!(ndcg_at_k(&perm(&[2, 1, 0]), &[4.0; 3], 2).unwrap(), 1.0);
        assert!(ndcg_at_k(&perm(&[0, 1]), &[2000.0, 1.0], 1).is_err());
    }

    #[test]
    fn gain_transform_maps_to_unit_range() {
        let t = GainTransform::Scaled { min: 0.0, max: 5.0 };
        assert_eq!(t.apply(&[0.0, 2.5, 5.0]), vec![0.0, 5.0, 10.0]);
        assert_eq!(GainTransform::Raw.apply(&[1.5]), vec![1.5]);
    }

    #[test]
    fn relative_change_examples() {
        assert_eq!(relative_change(&[0.3, 0.7], &[0.3, 0.7]), vec![Some(0.0), Some(0.0)]);
        let c = relative_change(&[0.6, 0.06, 0.1], &[0.5, 0.04, 0.0]);
        assert!((c[0].unwrap() - 0.2).abs() < 1e-12);
        assert!((c[1].unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(c[2], None);
    }

    #[test]
    fn representation_with_full_k_is_column_mean() {
        let p: Vec<GroupDistribution> = [[0.2, 0.8], [0.6, 0.4], [1.0, 0.0]]
            .iter()
            .map(|r| GroupDistribution::new(r.to_vec()).unwrap())
            .collect();
        let n = expected_group_representation(&[perm(&[2, 0, 1]), perm(&[1, 2, 0])], &p, 3).unwrap();
        assert!((n.weights()[0] - 0.6).abs() < 1e-12);
        assert!((n.weights()[1] - 0.4).abs() < 1e-12);
    }
}
