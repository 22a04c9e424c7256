//! Policy-gradient training of the scorer, the two supervised baselines
//! (binary classification of the Top-K and enrollment regression), and
//! deterministic ranking by score.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::datagen::{Dataset, Split};
use crate::domain::{CandidateSet, Ranking};
use crate::error::{FairRankError, Result};
use crate::metrics::{self, EvalConfig, EvalReport, GainTransform, RankingPolicy};
use crate::policy::{self, PolicyMode};
use crate::rewards::{self, ExposureObjective, FairnessMode, RewardValue};
use crate::rng;
use crate::scorer::{self, init_params, MlpParams, ParamGrads, ScorerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// REINFORCE over the Plackett-Luce policy.
    PolicyGradient,
    /// Sigmoid outputs with binary cross-entropy against Top-K labels.
    BinaryClassification,
    /// Mean-squared error against enrollment.
    Regression,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::PolicyGradient => "pg",
            Method::BinaryClassification => "bc",
            Method::Regression => "regress",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pg" => Some(Method::PolicyGradient),
            "bc" => Some(Method::BinaryClassification),
            "regress" => Some(Method::Regression),
            _ => None,
        }
    }

    /// How rankings are produced from this method's scores at evaluation time.
    pub fn ranking_policy(self) -> RankingPolicy {
        match self {
            Method::PolicyGradient => RankingPolicy::Sampled,
            _ => RankingPolicy::Deterministic,
        }
    }

}

pub const DEFAULT_ETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceBaseline {
    None,
    /// Subtract the per-trial mean reward of the Monte-Carlo batch.
    MeanReward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub lambda: f64,
    pub eta: f64,
    pub k: usize,
    pub n_mc: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks exact Plackett-Luce for short lists and the proxy otherwise.
    pub policy_mode: Option<PolicyMode>,
    pub fairness: FairnessMode,
    pub baseline: VarianceBaseline,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub h1: usize,
    pub h2: usize,
    /// Monte-Carlo samples per validation trial.
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::PolicyGradient,
            lambda: 0.0,
            eta: DEFAULT_ETA,
            k: 10,
            n_mc: 20,
            epochs: 50,
            batch_size: 16,
            policy_mode: None,
            fairness: FairnessMode::Entropy,
            baseline: VarianceBaseline::MeanReward,
            clip_norm: Some(10.0),
            h1: ScorerConfig::DEFAULT_H1,
            h2: ScorerConfig::DEFAULT_H2,
            n_eval: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 || self.k == 0 || self.batch_size == 0 {
            return Err(FairRankError::invalid("n_mc, K and batch_size must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FairRankError::invalid(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(FairRankError::invalid(format!("eta = {} must be >= 0", self.eta)));
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(FairRankError::invalid("clip norm must be > 0"));
        }
        Ok(())
    }

    pub fn scorer_config(&self, p: usize, q: usize) -> ScorerConfig {
        ScorerConfig {
            p,
            q,
            h1: self.h1,
            h2: self.h2,
            init_seed: rng::derive_seed(self.seed, rng::STREAM_INIT, &[]),
        }
    }

    fn mode_for(&self, m: usize) -> Result<PolicyMode> {
        let mode = self.policy_mode.unwrap_or_else(|| PolicyMode::auto(m));
        if mode == PolicyMode::TopKProxy && self.k > m {
            return Err(FairRankError::invalid(format!("Top-K proxy needs K <= M, got K = {} > {m}", self.k)));
        }
        Ok(mode)
    }

    fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.k,
            n_samples: self.n_eval,
            policy: self.method.ranking_policy(),
            gain: None,
            lambda: self.lambda,
            fairness: self.fairness,
            seed: rng::derive_seed(self.seed, "validation", &[]),
        }
    }
}

/// Sorts by descending score; equal scores keep ascending site order.
pub fn rank_deterministic(scores: &[f64], _k: usize) -> Result<Ranking> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FairRankError::invalid("non-finite score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(Ranking::from_permutation(order))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub utility: f64,
    pub fairness: f64,
    pub combined: f64,
    /// Supervised loss for the baselines; negated combined reward for PG.
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

struct TrialOutcome {
    grads: ParamGrads,
    utility: f64,
    fairness: f64,
    combined: f64,
    loss: f64,
}

/// Mean of `values`, exact when all entries are equal.
fn stable_mean(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

/// Score-space REINFORCE gradient for one trial plus its reward statistics.
fn pg_score_gradient(scores: &[f64], cs: &CandidateSet, cfg: &TrainConfig, trial_seed: u64) -> Result<(Vec<f64>, [f64; 3])> {
    let m = scores.len();
    let k = cfg.k.min(m);
    let mode = cfg.mode_for(m)?;
    let samples: Vec<Ranking> = (0..cfg.n_mc)
        .map(|s| {
            let mut rng = rng::stream(trial_seed, rng::STREAM_SAMPLE, &[s as u64]);
            policy::sample_unchecked(scores, &mut rng)
        })
        .collect();

    let fairness: Vec<f64> = match cfg.fairness {
        FairnessMode::Entropy => samples
            .iter()
            .map(|r| rewards::fairness_reward(r, &cs.membership, k))
            .collect(),
        FairnessMode::OneSidedExposure => {
            if cs.has_positive_enrollment() {
                let obj = ExposureObjective::new(&cs.membership, &cs.enrollment)?;
                let exposures: Vec<Vec<f64>> = samples
                    .iter()
                    .map(|r| rewards::ranking_exposure(r, &cs.membership, k))
                    .collect();
                let l = cs.num_groups();
                let mean: Vec<f64> = (0..l)
                    .map(|g| exposures.iter().map(|v| v[g]).sum::<f64>() / exposures.len() as f64)
                    .collect();
                // batch-level loss, linearized so each sample gets its share
                let coef = obj.linearization(&mean);
                exposures
                    .iter()
                    .map(|v| -coef.iter().zip(v).map(|(c, x)| c * x).sum::<f64>())
                    .collect()
            } else {
                vec![0.0; samples.len()]
            }
        }
        FairnessMode::None => vec![0.0; samples.len()],
    };
    let values: Vec<RewardValue> = samples
        .iter()
        .zip(&fairness)
        .map(|(r, &f)| RewardValue::new(rewards::utility_reward(r, &cs.enrollment, k), f, cfg.lambda))
        .collect();
    let combined: Vec<f64> = values.iter().map(|v| v.combined).collect();
    let baseline = match cfg.baseline {
        VarianceBaseline::MeanReward => stable_mean(&combined),
        VarianceBaseline::None => 0.0,
    };
    let n = samples.len() as f64;
    let mut grad = vec![0.0; m];
    for (r, c) in samples.iter().zip(&combined) {
        let w = (c - baseline) / n;
        if w != 0.0 {
            policy::accumulate_log_prob_grad(scores, r, k, mode, w, &mut grad);
        }
    }
    let stats = [
        values.iter().map(|v| v.utility).sum::<f64>() / n,
        fairness.iter().sum::<f64>() / n,
        combined.iter().sum::<f64>() / n,
    ];
    Ok((grad, stats))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-y ln σ(h) - (1 - y) ln(1 - σ(h))`, computed stably.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    let softplus = if score > 0.0 {
        score + (-score).exp().ln_1p()
    } else {
        score.exp().ln_1p()
    };
    softplus - label * score
}

fn deterministic_rewards(scores: &[f64], cs: &CandidateSet, cfg: &TrainConfig) -> Result<RewardValue> {
    let r = rank_deterministic(scores, cfg.k)?;
    rewards::combined_reward(&r, &cs.enrollment, &cs.membership, cfg.k, cfg.lambda, cfg.fairness)
}

/// Ascent direction and statistics for one trial under the configured method.
fn trial_outcome(params: &MlpParams, cs: &CandidateSet, cfg: &TrainConfig, trial_seed: u64) -> Result<TrialOutcome> {
    let (scores, cache) = scorer::forward(params, &cs.trial, &cs.sites)?;
    let m = scores.len();
    let (grad_scores, utility, fairness, combined, loss) = match cfg.method {
        Method::PolicyGradient => {
            let (g, [u, f, c]) = pg_score_gradient(&scores, cs, cfg, trial_seed)?;
            (g, u, f, c, -c)
        }
        Method::BinaryClassification => {
            let truth = metrics::true_top_k(&cs.enrollment, cfg.k);
            let mut labels = vec![0.0; m];
            truth.iter().for_each(|&i| labels[i] = 1.0);
            let loss = scores.iter().zip(&labels).map(|(&h, &y)| bce_loss(h, y)).sum::<f64>() / m as f64;
            let g = scores
                .iter()
                .zip(&labels)
                .map(|(&h, &y)| -(sigmoid(h) - y) / m as f64)
                .collect();
            let rv = deterministic_rewards(&scores, cs, cfg)?;
            (g, rv.utility, rv.fairness, rv.combined, loss)
        }
        Method::Regression => {
            let loss = scores
                .iter()
                .zip(&cs.enrollment)
                .map(|(h, e)| (h - e) * (h - e))
                .sum::<f64>()
                / m as f64;
            let g = scores
                .iter()
                .zip(&cs.enrollment)
                .map(|(h, e)| -2.0 * (h - e) / m as f64)
                .collect();
            let rv = deterministic_rewards(&scores, cs, cfg)?;
            (g, rv.utility, rv.fairness, rv.combined, loss)
        }
    };
    let grads = scorer::backward(params, &cache, &grad_scores)?;
    Ok(TrialOutcome {
        grads,
        utility,
        fairness,
        combined,
        loss,
    })
}

/// Batch-averaged ascent direction, clipped. Per-trial work runs in
/// parallel; the reduction runs in batch order.
pub fn estimate_gradient(
    params: &MlpParams,
    batch: &[(usize, &CandidateSet)],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(ParamGrads, StepStats)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(FairRankError::invalid("empty batch"));
    }
    let outcomes: Vec<TrialOutcome> = batch
        .par_iter()
        .map(|&(key, cs)| trial_outcome(params, cs, cfg, rng::derive_seed(step_seed, "trial", &[key as u64])))
        .collect::<Result<_>>()?;
    let n = outcomes.len() as f64;
    let mut grads = params.zero_grads();
    let mut stats = StepStats::default();
    for o in &outcomes {
        grads.add_assign(&o.grads);
        stats.utility += o.utility / n;
        stats.fairness += o.fairness / n;
        stats.combined += o.combined / n;
        stats.loss += o.loss / n;
    }
    grads.scale(1.0 / n);
    if !grads.is_finite() {
        return Err(FairRankError::Divergence("non-finite gradient; lower the learning rate".into()));
    }
    stats.grad_norm = grads.norm();
    if let Some(limit) = cfg.clip_norm {
        if stats.grad_norm > limit {
            debug!("clipping gradient norm {:.3} to {limit}", stats.grad_norm);
            grads.scale(limit / stats.grad_norm);
            stats.clipped = true;
        }
    }
    Ok((grads, stats))
}

/// One gradient-ascent update `θ ← θ + η ∇(U + λF)` from `n_mc` sampled
/// rankings per trial. Deterministic in `(params, batch, cfg, step_seed)`.
pub fn reinforce_step(
    params: &MlpParams,
    batch: &[(usize, &CandidateSet)],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(MlpParams, StepStats)> {
    if cfg.method != Method::PolicyGradient {
        return Err(FairRankError::invalid("reinforce_step needs the policy-gradient method"));
    }
    let (grads, stats) = estimate_gradient(params, batch, cfg, step_seed)?;
    let mut next = params.clone();
    next.apply(&grads, cfg.eta);
    if !next.as_slice().iter().all(|v| v.is_finite()) {
        return Err(FairRankError::Divergence("parameters became non-finite".into()));
    }
    Ok((next, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub utility: f64,
    pub fairness: f64,
    pub combined: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub validation: Option<EvalReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,utility,fairness,combined,loss,grad_norm,val_rel_err,val_recall,val_ndcg,val_entropy,val_combined\n",
        );
        for r in &self.epochs {
            write!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.utility, r.fairness, r.combined, r.loss, r.grad_norm
            )
            .unwrap();
            match &r.validation {
                Some(v) => writeln!(
                    out,
                    ",{},{},{},{},{}",
                    v.relative_error, v.recall, v.ndcg, v.entropy, v.combined
                )
                .unwrap(),
                None => out.push_str(",,,,,\n"),
            }
        }
        out
    }
}

/// Trains the scorer with the configured method, returning the parameters
/// with the best validation combined reward (the final ones without a
/// validation split) and the per-epoch history.
pub fn fit(dataset: &Dataset, cfg: &TrainConfig) -> Result<(MlpParams, TrainHistory)> {
    cfg.validate()?;
    let train_sets = dataset.indexed(Some(Split::Train));
    if train_sets.is_empty() {
        return Err(FairRankError::invalid("training split is empty"));
    }
    if let Some((_, cs)) = train_sets.iter().find(|(_, cs)| cs.num_sites() < cfg.k) {
        return Err(FairRankError::invalid(format!(
            "trial {} has {} sites, fewer than K = {}",
            cs.trial.id,
            cs.num_sites(),
            cfg.k
        )));
    }
    let mut params = init_params(cfg.scorer_config(dataset.schema.p, dataset.schema.q))?;
    let val_sets = dataset.indexed(Some(Split::Val));
    let eval_cfg = cfg.eval_config();
    let gain = GainTransform::fit(&dataset.sets);
    let validate = |p: &MlpParams| -> Result<Option<EvalReport>> {
        if val_sets.is_empty() {
            return Ok(None);
        }
        metrics::evaluate_sets(p, &val_sets, &eval_cfg, &gain, "val").map(Some)
    };

    let mut history = TrainHistory::default();
    let mut best = params.clone();
    let mut best_score = if cfg.epochs > 0 {
        validate(&params)?.map_or(f64::NEG_INFINITY, |r| r.combined)
    } else {
        f64::NEG_INFINITY
    };
    let mut order: Vec<(usize, &CandidateSet)> = train_sets;
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut shuffle = rng::stream(cfg.seed, rng::STREAM_SHUFFLE, &[epoch as u64]);
        order.shuffle(&mut shuffle);
        let mut acc = StepStats::default();
        let mut n_steps = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let step_seed = rng::derive_seed(cfg.seed, rng::STREAM_SAMPLE, &[step]);
            let (grads, stats) = estimate_gradient(&params, batch, cfg, step_seed)?;
            params.apply(&grads, cfg.eta);
            if !params.as_slice().iter().all(|v| v.is_finite()) {
                return Err(FairRankError::Divergence(format!("parameters became non-finite in epoch {epoch}")));
            }
            acc.utility += stats.utility;
            acc.fairness += stats.fairness;
            acc.combined += stats.combined;
            acc.loss += stats.loss;
            acc.grad_norm += stats.grad_norm;
            n_steps += 1.0;
            step += 1;
        }
        let validation = validate(&params)?;
        if let Some(v) = &validation {
            if v.combined > best_score {
                best_score = v.combined;
                best = params.clone();
                history.best_epoch = epoch;
            }
        } else {
            best = params.clone();
            history.best_epoch = epoch;
        }
        info!(
            "epoch {epoch}: utility {:.4} fairness {:.4} loss {:.5} val {}",
            acc.utility / n_steps,
            acc.fairness / n_steps,
            acc.loss / n_steps,
            validation
                .as_ref()
                .map_or("-".into(), |v| format!("rel_err {:.4} entropy {:.4}", v.relative_error, v.entropy))
        );
        history.epochs.push(EpochRecord {
            epoch,
            utility: acc.utility / n_steps,
            fairness: acc.fairness / n_steps,
            combined: acc.combined / n_steps,
            loss: acc.loss / n_steps,
            grad_norm: acc.grad_norm / n_steps,
            validation,
        });
    }
    Ok((best, history))
}

/// Policy-gradient training.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(MlpParams, TrainHistory)> {
    fit(
        dataset,
        &TrainConfig {
            method: Method::PolicyGradient,
            ..cfg.clone()
        },
    )
}

/// Binary-classification baseline: Top-K sites labelled 1, the rest 0.
pub fn train_bc(dataset: &Dataset, cfg: &TrainConfig) -> Result<MlpParams> {
    fit(
        dataset,
        &TrainConfig {
            method: Method::BinaryClassification,
            ..cfg.clone()
        },
    )
    .map(|(p, _)| p)
}

/// Regression baseline on raw enrollment.
pub fn train_regress(dataset: &Dataset, cfg: &TrainConfig) -> Result<MlpParams> {
    fit(
        dataset,
        &TrainConfig {
            method: Method::Regression,
            ..cfg.clone()
        },
    )
    .map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};
    use crate::domain::{GroupDistribution, SiteFeatures, TrialFeatures};

    #[test]
    fn deterministic_ranking_examples() {
        assert_eq!(rank_deterministic(&[1.0, 3.0, 2.0], 1).unwrap().order(), &[1, 2, 0]);
        assert_eq!(rank_deterministic(&[0.5; 4], 2).unwrap().order(), &[0, 1, 2, 3]);
        let r = rank_deterministic(&[0.0, 1.0, 9.0, 3.0, 9.0], 1).unwrap();
        assert_eq!(&r.order()[..2], &[2, 4]);
        assert!(rank_deterministic(&[f64::NAN], 1).is_err());
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(40.0, 1.0) < 1e-15);
        assert!(bce_loss(-40.0, 0.0) < 1e-15);
        assert!((bce_loss(1.3, 1.0) + sigmoid(1.3).ln()).abs() < 1e-12);
    }

    fn toy_set(e: Vec<f64>) -> CandidateSet {
        let m = e.len();
        CandidateSet {
            trial: TrialFeatures::new("t", vec![0.5, -0.5]),
            sites: (0..m).map(|i| SiteFeatures::new(format!("s{i}"), vec![i as f64 * 0.3, 1.0])).collect(),
            enrollment: e,
            membership: vec![GroupDistribution::uniform(2); m],
        }
    }

    fn toy_params() -> MlpParams {
        init_params(ScorerConfig {
            p: 2,
            q: 2,
            h1: 4,
            h2: 3,
            init_seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn constant_reward_gives_zero_update() {
        let cs = toy_set(vec![1.0; 4]);
        let cfg = TrainConfig {
            k: 2,
            n_mc: 7,
            ..TrainConfig::default()
        };
        let p = toy_params();
        let (next, stats) = reinforce_step(&p, &[(0, &cs)], &cfg, 3).unwrap();
        assert_eq!(next, p);
        assert_eq!(stats.grad_norm, 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cs = toy_set(vec![3.0, 0.0, 1.0, 2.0]);
        let cfg = TrainConfig {
            k: 2,
            eta: 0.0,
            ..TrainConfig::default()
        };
        let p = toy_params();
        let (next, stats) = reinforce_step(&p, &[(0, &cs)], &cfg, 3).unwrap();
        assert_eq!(next, p);
        assert!(stats.grad_norm > 0.0);
    }

    #[test]
    fn step_is_deterministic() {
        let cs = toy_set(vec![3.0, 0.0, 1.0, 2.0]);
        let cfg = TrainConfig {
            k: 2,
            ..TrainConfig::default()
        };
        let p = toy_params();
        let a = reinforce_step(&p, &[(0, &cs), (1, &cs)], &cfg, 9).unwrap();
        let b = reinforce_step(&p, &[(0, &cs), (1, &cs)], &cfg, 9).unwrap();
        assert_eq!(a.0, b.0);
    }

    fn tiny_dataset() -> Dataset {
        generate(&GenConfig {
            n_trials: 12,
            m: 6,
            p: 5,
            q: 6,
            k: Some(2),
            split: (8, 2, 2),
            seed: 4,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            k: 2,
            epochs: 0,
            h1: 4,
            h2: 3,
            ..TrainConfig::default()
        };
        let (p, h) = train(&ds, &cfg).unwrap();
        assert_eq!(p, init_params(cfg.scorer_config(5, 6)).unwrap());
        assert!(h.epochs.is_empty());
    }

    #[test]
    fn lambda_zero_ignores_fairness_mode() {
        let ds = tiny_dataset();
        let base = TrainConfig {
            k: 2,
            epochs: 3,
            batch_size: 3,
            h1: 4,
            h2: 3,
            ..TrainConfig::default()
        };
        let with_none = TrainConfig {
            fairness: FairnessMode::None,
            ..base.clone()
        };
        let with_exposure = TrainConfig {
            fairness: FairnessMode::OneSidedExposure,
            ..base.clone()
        };
        let a = train(&ds, &base).unwrap().0;
        assert_eq!(a, train(&ds, &with_none).unwrap().0);
        assert_eq!(a, train(&ds, &with_exposure).unwrap().0);
    }

    #[test]
    fn history_has_one_row_per_epoch() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            method: Method::Regression,
            k: 2,
            epochs: 4,
            h1: 4,
            h2: 3,
            ..TrainConfig::default()
        };
        let (_, h) = fit(&ds, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 4);
        assert_eq!(h.to_csv().lines().count(), 5);
        assert!(h.epochs.iter().all(|r| r.validation.is_some()));
    }

    fn manual_dataset(n: usize, m: usize, k: usize, site: impl Fn(usize, usize) -> (f64, f64)) -> Dataset {
        let sets: Vec<CandidateSet> = (0..n)
            .map(|t| {
                let rows: Vec<(f64, f64)> = (0..m).map(|i| site(t, i)).collect();
                CandidateSet {
                    trial: TrialFeatures::new(format!("t{t}"), vec![1.0]),
                    sites: rows.iter().enumerate().map(|(i, r)| SiteFeatures::new(format!("s{i}"), vec![r.0])).collect(),
                    enrollment: rows.iter().map(|r| r.1).collect(),
                    membership: vec![GroupDistribution::uniform(2); m],
                }
            })
            .collect();
        let splits = (0..n)
            .map(|t| if t < n * 3 / 4 { Split::Train } else { Split::Val })
            .collect();
        Dataset {
            schema: crate::domain::FeatureSchema::dims(1, 1, 2),
            m,
            k: Some(k),
            sets,
            splits,
        }
    }

    /// Hash-based value in [0, 1) so the data needs no RNG plumbing.
    fn unit(t: usize, i: usize) -> f64 {
        (((t * 7919 + i * 104_729) % 1000) as f64 + 0.5) / 1000.0
    }

    #[test]
    fn bc_loss_decreases_on_separable_data() {
        // top half of every list has x > 0, bottom half x < 0
        let ds = manual_dataset(40, 6, 3, |t, i| {
            let x = if i % 2 == 0 { 0.5 + unit(t, i) } else { -0.5 - unit(t, i) };
            (x, x + 2.0)
        });
        let cfg = TrainConfig {
            method: Method::BinaryClassification,
            k: 3,
            epochs: 10,
            batch_size: 1000,
            eta: 0.05,
            h1: 8,
            h2: 4,
            ..TrainConfig::default()
        };
        let (_, h) = fit(&ds, &cfg).unwrap();
        let losses: Vec<f64> = h.epochs.iter().map(|r| r.loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn bc_loss_at_zero_scores_is_log2_per_node() {
        let ds = manual_dataset(4, 5, 2, |t, i| (unit(t, i), 0.0));
        let cfg = TrainConfig {
            method: Method::BinaryClassification,
            k: 2,
            h1: 3,
            h2: 2,
            ..TrainConfig::default()
        };
        let params = MlpParams::zeros(cfg.scorer_config(1, 1)).unwrap();
        let (_, stats) = estimate_gradient(&params, &ds.indexed(None), &cfg, 0).unwrap();
        assert!((stats.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn regression_fits_planted_linear_target() {
        let mut ds = manual_dataset(80, 8, 3, |t, i| {
            let x = 2.0 * unit(t, i) - 1.0;
            (x, 1.0 + 0.8 * x)
        });
        // hold out without a validation split so fit keeps the final epoch
        for s in ds.splits.iter_mut().filter(|s| **s == Split::Val) {
            *s = Split::Test;
        }
        let cfg = TrainConfig {
            method: Method::Regression,
            k: 3,
            epochs: 100,
            eta: 0.1,
            h1: 16,
            h2: 8,
            ..TrainConfig::default()
        };
        let params = train_regress(&ds, &cfg).unwrap();
        let mut targets = Vec::new();
        let mut sq_err = 0.0;
        for (_, cs) in ds.indexed(Some(Split::Test)) {
            let s = scorer::score(&params, &cs.trial, &cs.sites).unwrap();
            for (h, e) in s.iter().zip(&cs.enrollment) {
                sq_err += (h - e) * (h - e);
                targets.push(*e);
            }
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        assert!(sq_err / n < 0.1 * var, "mse {} var {var}", sq_err / n);
    }

    #[test]
    fn constant_predictor_is_stationary_for_constant_target() {
        let ds = manual_dataset(4, 5, 2, |t, i| (unit(t, i), 3.0));
        let cfg = TrainConfig {
            method: Method::Regression,
            k: 2,
            h1: 3,
            h2: 2,
            ..TrainConfig::default()
        };
        let mut params = MlpParams::zeros(cfg.scorer_config(1, 1)).unwrap();
        let b3 = params.layout().b3;
        params.as_mut_slice()[b3] = 3.0;
        let (g, stats) = estimate_gradient(&params, &ds.indexed(None), &cfg, 0).unwrap();
        assert!(g.is_zero());
        assert_eq!(stats.loss, 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let ds = tiny_dataset();
        for cfg in [
            TrainConfig {
                n_mc: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                k: 7,
                ..TrainConfig::default()
            },
        ] {
            assert!(train(&ds, &cfg).is_err());
        }
    }
}
