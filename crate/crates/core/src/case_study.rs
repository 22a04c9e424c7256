//! The five-site, four-group selection example with equal enrollment, used
//! to contrast exposure-based fairness with membership entropy when K = 1.
//!
//! Each variant trains a free logit per site (no features) with the same
//! REINFORCE update the scorer uses, then reports the resulting
//! first-position distribution.

use std::fmt::Write as _;

use crate::domain::{CandidateSet, GroupDistribution, Ranking, SiteFeatures, TrialFeatures};
use crate::error::{FairRankError, Result};
use crate::policy::{self, PolicyMode};
use crate::rewards::{self, ExposureObjective, FairnessMode};
use crate::rng;

const TABLE1_MEMBERSHIP: [[f64; 4]; 5] = [
    [0.2, 0.35, 0.25, 0.2],
    [0.6, 0.15, 0.15, 0.1],
    [0.65, 0.15, 0.1, 0.1],
    [0.55, 0.18, 0.15, 0.12],
    [0.7, 0.2, 0.08, 0.02],
];

/// Built-in instance: five sites, enrollment 100 each.
pub fn table1() -> CandidateSet {
    CandidateSet {
        trial: TrialFeatures::new("table1", vec![1.0]),
        sites: TABLE1_MEMBERSHIP
            .iter()
            .enumerate()
            .map(|(i, row)| SiteFeatures::new(format!("site{}", i + 1), row.to_vec()))
            .collect(),
        enrollment: vec![100.0; 5],
        membership: TABLE1_MEMBERSHIP
            .iter()
            .map(|row| GroupDistribution::new(row.to_vec()).expect("table rows are distributions"))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    UtilityOnly,
    ExposureLoss,
    Entropy,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::UtilityOnly, Variant::ExposureLoss, Variant::Entropy];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::UtilityOnly => "utility",
            Variant::ExposureLoss => "exposure",
            Variant::Entropy => "entropy",
        }
    }

    fn fairness(self) -> FairnessMode {
        match self {
            Variant::UtilityOnly => FairnessMode::None,
            Variant::ExposureLoss => FairnessMode::OneSidedExposure,
            Variant::Entropy => FairnessMode::Entropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyConfig {
    pub k: usize,
    pub lambda: f64,
    pub eta: f64,
    pub steps: usize,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            k: 1,
            lambda: 4.0,
            eta: 0.1,
            steps: 2000,
            n_mc: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub logits: Vec<f64>,
    /// Probability of each site being ranked first.
    pub first_choice: Vec<f64>,
    /// Exposure loss at the policy's expected group exposure.
    pub expected_exposure_loss: f64,
    /// Expected entropy of the selected Top-K membership.
    pub expected_entropy: f64,
}

impl VariantResult {
    /// Most probable first site and its probability.
    pub fn mode(&self) -> (usize, f64) {
        self.first_choice
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best })
    }
}

/// Per-site quantities when that site alone is placed first.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSummary {
    pub site: usize,
    pub entropy: f64,
    /// Exposure loss of the ranking that puts this site first.
    pub exposure_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyReport {
    pub merit: Vec<f64>,
    pub sites: Vec<SiteSummary>,
    pub variants: Vec<VariantResult>,
}

fn first(site: usize, m: usize) -> Ranking {
    let mut order = vec![site];
    order.extend((0..m).filter(|&i| i != site));
    Ranking::from_permutation(order)
}

/// Trains one free-logit policy with the given reward variant.
pub fn train_variant(cs: &CandidateSet, variant: Variant, cfg: &CaseStudyConfig) -> Result<VariantResult> {
    let m = cs.num_sites();
    if cfg.k == 0 || cfg.k > m {
        return Err(FairRankError::invalid(format!("K = {} must lie in 1..={m}", cfg.k)));
    }
    if cfg.n_mc == 0 {
        return Err(FairRankError::invalid("n_mc must be >= 1"));
    }
    let mode = PolicyMode::auto(m);
    let objective = match variant {
        Variant::ExposureLoss => Some(ExposureObjective::new(&cs.membership, &cs.enrollment)?),
        _ => None,
    };
    let mut logits = vec![0.0; m];
    let mut grad = vec![0.0; m];
    for step in 0..cfg.steps {
        let mut rng = rng::stream(cfg.seed, rng::STREAM_SAMPLE, &[variant as u64, step as u64]);
        let samples: Vec<Ranking> = (0..cfg.n_mc).map(|_| policy::sample_unchecked(&logits, &mut rng)).collect();
        let rewards: Vec<f64> = samples
            .iter()
            .map(|r| {
                rewards::combined_reward(r, &cs.enrollment, &cs.membership, cfg.k, cfg.lambda, variant.fairness())
                    .map(|v| v.combined)
            })
            .collect::<Result<_>>()?;
        let baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (r, reward) in samples.iter().zip(&rewards) {
            let w = (reward - baseline) / cfg.n_mc as f64;
            policy::accumulate_log_prob_grad(&logits, r, cfg.k, mode, w, &mut grad);
        }
        for (x, g) in logits.iter_mut().zip(&grad) {
            *x += cfg.eta * g;
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(FairRankError::Divergence(format!("{} variant diverged", variant.as_str())));
        }
    }
    summarize(cs, variant, logits, cfg, objective.as_ref())
}

fn summarize(
    cs: &CandidateSet,
    variant: Variant,
    logits: Vec<f64>,
    cfg: &CaseStudyConfig,
    objective: Option<&ExposureObjective>,
) -> Result<VariantResult> {
    let first_choice = policy::softmax(&logits);
    let l = cs.num_groups();
    let (expected_exposure_loss, expected_entropy) = if cfg.k == 1 {
        // with K = 1 only the first site matters
        let mut v = vec![0.0; l];
        let mut h = 0.0;
        for (i, &p) in first_choice.iter().enumerate() {
            let r = first(i, cs.num_sites());
            for (acc, x) in v.iter_mut().zip(rewards::ranking_exposure(&r, &cs.membership, 1)) {
                *acc += p * x;
            }
            h += p * rewards::fairness_reward(&r, &cs.membership, 1);
        }
        let loss = match objective {
            Some(o) => o.loss(&v),
            None => ExposureObjective::new(&cs.membership, &cs.enrollment)?.loss(&v),
        };
        (loss, h)
    } else {
        let mut rng = rng::stream(cfg.seed, rng::STREAM_EVAL, &[variant as u64]);
        let samples: Vec<Ranking> = (0..10_000).map(|_| policy::sample_unchecked(&logits, &mut rng)).collect();
        let v = rewards::group_exposure(&samples, &cs.membership, cfg.k)?;
        let h = samples
            .iter()
            .map(|r| rewards::fairness_reward(r, &cs.membership, cfg.k))
            .sum::<f64>()
            / samples.len() as f64;
        (ExposureObjective::new(&cs.membership, &cs.enrollment)?.loss(&v), h)
    };
    Ok(VariantResult {
        variant,
        logits,
        first_choice,
        expected_exposure_loss,
        expected_entropy,
    })
}

pub fn run(cs: &CandidateSet, cfg: &CaseStudyConfig) -> Result<CaseStudyReport> {
    let merit = rewards::merit(&cs.membership, &cs.enrollment)?;
    let objective = ExposureObjective::new(&cs.membership, &cs.enrollment)?;
    let m = cs.num_sites();
    let sites = (0..m)
        .map(|i| {
            let r = first(i, m);
            SiteSummary {
                site: i,
                entropy: rewards::entropy(cs.membership[i].weights()),
                exposure_loss: objective.loss(&rewards::ranking_exposure(&r, &cs.membership, cfg.k)),
            }
        })
        .collect();
    let variants = Variant::ALL
        .iter()
        .map(|&v| train_variant(cs, v, cfg))
        .collect::<Result<_>>()?;
    Ok(CaseStudyReport { merit, sites, variants })
}

fn fmt_vec(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}

impl CaseStudyReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "merit {}", fmt_vec(&self.merit, 3)).unwrap();
        writeln!(out, "site,entropy,exposure_loss_if_first").unwrap();
        for s in &self.sites {
            writeln!(out, "site{},{:.4},{:.4}", s.site + 1, s.entropy, s.exposure_loss).unwrap();
        }
        writeln!(out, "variant,first_choice,top_site,top_prob,exposure_loss,entropy").unwrap();
        for v in &self.variants {
            let (site, p) = v.mode();
            writeln!(
                out,
                "{},{},site{},{:.4},{:.4},{:.4}",
                v.variant.as_str(),
                fmt_vec(&v.first_choice, 3).replace(", ", " "),
                site + 1,
                p,
                v.expected_exposure_loss,
                v.expected_entropy
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_valid() {
        let t = table1();
        assert_eq!(t.num_sites(), 5);
        assert_eq!(t.num_groups(), 4);
        assert!(crate::domain::validate_candidate_set(t, None).is_ok());
    }

    #[test]
    fn only_site1_has_zero_exposure_loss() {
        let cfg = CaseStudyConfig {
            steps: 0,
            ..CaseStudyConfig::default()
        };
        let report = run(&table1(), &cfg).unwrap();
        let zero: Vec<usize> = report.sites.iter().filter(|s| s.exposure_loss == 0.0).map(|s| s.site).collect();
        assert_eq!(zero, vec![0]);
        let best = report
            .sites
            .iter()
            .max_by(|a, b| a.entropy.total_cmp(&b.entropy))
            .unwrap();
        assert_eq!(best.site, 0);
        // untrained policies are uniform
        for v in &report.variants {
            assert!(v.first_choice.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        }
        assert!(report.render().starts_with("merit [0.540, 0.206, 0.146, 0.108]"));
    }

    #[test]
    fn entropy_variant_concentrates_on_site1() {
        let r = train_variant(&table1(), Variant::Entropy, &CaseStudyConfig::default()).unwrap();
        let (site, p) = r.mode();
        assert_eq!(site, 0);
        assert!(p > 0.9, "p = {p}");
    }
}
