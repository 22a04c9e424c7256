//! Synthetic candidate-set generation with a planted enrollment model,
//! negative sampling, and the on-disk dataset format.
//!
//! Each trial and each site has a latent vector. A site's enrollment for a
//! trial is a softplus of an affinity made of a trial-independent site
//! quality term plus a bilinear trial/site match term. Observed features are
//! linear images of the latents (plus optional noise), and the site latent
//! includes the site's group membership so the scorer can learn diversity
//! preferences from features alone.

mod format;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::domain::{validate_candidate_set, CandidateSet, FeatureSchema, GroupDistribution, SiteFeatures, TrialFeatures};
use crate::error::{FairRankError, Result};
use crate::rng;

pub use format::{load, parse, save, write_to, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    /// Sites per candidate set.
    pub m: usize,
    /// Selection size the dataset was prepared for, if recorded.
    pub k: Option<usize>,
    pub sets: Vec<CandidateSet>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// `(dataset index, set)` pairs belonging to `split` (all when `None`).
    pub fn indexed(&self, split: Option<Split>) -> Vec<(usize, &CandidateSet)> {
        self.sets
            .iter()
            .enumerate()
            .filter(|(i, _)| split.is_none_or(|s| self.splits[*i] == s))
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }
}

pub const PHASES: [&str; 4] = ["1", "2", "3", "4"];
pub const AREAS: [&str; 5] = ["oncology", "cardiology", "neurology", "infectious", "immunology"];

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_trials: usize,
    pub m: usize,
    pub l: usize,
    pub p: usize,
    pub q: usize,
    /// Recorded in the dataset header; not used by generation.
    pub k: Option<usize>,
    pub latent_dim: usize,
    /// Std of the Gaussian noise on observed features; enrollment noise is
    /// `feature_noise * enrollment_scale`.
    pub feature_noise: f64,
    pub enrollment_scale: f64,
    /// Dirichlet concentration for membership rows, length `L`.
    pub group_concentration: Vec<f64>,
    /// Fraction of sites whose population is dominated by one group.
    pub homogeneous_fraction: f64,
    /// (train, val, test) counts.
    pub split: (usize, usize, usize),
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_trials: 400,
            m: 20,
            l: 6,
            p: 64,
            q: 26,
            k: Some(10),
            latent_dim: 6,
            feature_noise: 0.05,
            enrollment_scale: 1.0,
            group_concentration: vec![2.0; 6],
            homogeneous_fraction: 0.5,
            split: (300, 40, 60),
            seed: 0,
        }
    }
}

/// Mass a homogeneous site puts on its dominant group.
const DOMINANT_MASS: f64 = 0.85;
const QUALITY_WEIGHT: f64 = 1.5;
const MATCH_WEIGHT: f64 = 1.0;
const AFFINITY_OFFSET: f64 = -0.5;

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if a + b + c != self.n_trials {
            return Err(FairRankError::invalid(format!(
                "split {a}+{b}+{c} does not sum to n_trials = {}",
                self.n_trials
            )));
        }
        if self.m == 0 || self.l == 0 || self.p == 0 || self.q == 0 || self.latent_dim == 0 {
            return Err(FairRankError::invalid("M, L, p, q and latent_dim must be >= 1"));
        }
        if self.group_concentration.len() != self.l {
            return Err(FairRankError::invalid(format!(
                "group_concentration has {} entries, expected L = {}",
                self.group_concentration.len(),
                self.l
            )));
        }
        if self.group_concentration.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(FairRankError::invalid("group_concentration entries must be > 0"));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0)
            || !(self.enrollment_scale.is_finite() && self.enrollment_scale > 0.0)
        {
            return Err(FairRankError::invalid("feature_noise must be >= 0 and enrollment_scale > 0"));
        }
        if !(0.0..=1.0).contains(&self.homogeneous_fraction) {
            return Err(FairRankError::invalid("homogeneous_fraction must lie in [0, 1]"));
        }
        if self.k.is_some_and(|k| k == 0 || k > self.m) {
            return Err(FairRankError::invalid("K must lie in 1..=M"));
        }
        Ok(())
    }

    /// Index-based split assignment.
    pub fn split_of(&self, trial: usize) -> Split {
        let (train, val, _) = self.split;
        if trial < train {
            Split::Train
        } else if trial < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Latent quantities behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    /// `affinity[t][i]`: the planted trial/site affinity; enrollment is
    /// monotone in it when noise is zero.
    pub affinity: Vec<Vec<f64>>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("validated concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / alpha.len() as f64; alpha.len()]
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    generate_with_truth(cfg).map(|(d, _)| d)
}

/// Generates a dataset and returns the planted affinities alongside it.
pub fn generate_with_truth(cfg: &GenConfig) -> Result<(Dataset, PlantedTruth)> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    let l = cfg.l;
    let mut global = rng::stream(cfg.seed, rng::STREAM_GENERATE, &[0]);
    let trial_map = gaussian_matrix(&mut global, cfg.p, d, 1.0 / (d as f64).sqrt());
    let site_map = gaussian_matrix(&mut global, cfg.q, d + l, 1.0 / ((d + l) as f64).sqrt());
    let interaction = gaussian_matrix(&mut global, d, d, 1.0);
    let quality: Vec<f64> = (0..d).map(|_| global.sample(StandardNormal)).collect();
    let qnorm = quality.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let quality: Vec<f64> = quality.iter().map(|v| v / qnorm).collect();
    // majority group: largest concentration, lowest index on ties
    let dominant = (0..l).fold(0, |best, g| {
        if cfg.group_concentration[g] > cfg.group_concentration[best] {
            g
        } else {
            best
        }
    });
    let membership_gain = (l as f64).sqrt();

    let mut sets = Vec::with_capacity(cfg.n_trials);
    let mut splits = Vec::with_capacity(cfg.n_trials);
    let mut affinity = Vec::with_capacity(cfg.n_trials);
    for t in 0..cfg.n_trials {
        let mut rng = rng::stream(cfg.seed, rng::STREAM_GENERATE, &[1, t as u64]);
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let noisy = |v: f64, rng: &mut rng::StreamRng| {
            if cfg.feature_noise > 0.0 {
                v + cfg.feature_noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                v
            }
        };
        let trial_values: Vec<f64> = mat_vec(&trial_map, &z).into_iter().map(|v| noisy(v, &mut rng)).collect();
        let phase = PHASES[rng.random_range(0..PHASES.len())];
        let area = AREAS[rng.random_range(0..AREAS.len())];
        let trial = TrialFeatures::new(format!("T{t:05}"), trial_values)
            .with_tag("phase", phase)
            .with_tag("area", area);
        // trial-side factor of the bilinear match term
        let zw: Vec<f64> = (0..d).map(|j| (0..d).map(|i| z[i] * interaction[i][j]).sum()).collect();

        let mut sites = Vec::with_capacity(cfg.m);
        let mut enrollment = Vec::with_capacity(cfg.m);
        let mut membership = Vec::with_capacity(cfg.m);
        let mut aff_row = Vec::with_capacity(cfg.m);
        for i in 0..cfg.m {
            let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut row = dirichlet(&mut rng, &cfg.group_concentration);
            if rng.random::<f64>() < cfg.homogeneous_fraction {
                row.iter_mut().for_each(|v| *v *= 1.0 - DOMINANT_MASS);
                row[dominant] += DOMINANT_MASS;
            }
            let mut latent = w.clone();
            latent.extend(row.iter().map(|v| membership_gain * (v - 1.0 / l as f64)));
            let values: Vec<f64> = mat_vec(&site_map, &latent).into_iter().map(|v| noisy(v, &mut rng)).collect();

            let qual: f64 = quality.iter().zip(&w).map(|(a, b)| a * b).sum();
            let matched: f64 = zw.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let aff = QUALITY_WEIGHT * qual + MATCH_WEIGHT * matched + AFFINITY_OFFSET;
            let mut e = cfg.enrollment_scale * softplus(aff);
            if cfg.feature_noise > 0.0 {
                e += cfg.feature_noise * cfg.enrollment_scale * rng.sample::<f64, _>(StandardNormal);
            }
            sites.push(SiteFeatures::new(format!("T{t:05}-S{i:03}"), values));
            enrollment.push(e.max(0.0));
            membership.push(GroupDistribution::new(row)?);
            aff_row.push(aff);
        }
        let cs = CandidateSet {
            trial,
            sites,
            enrollment,
            membership,
        };
        sets.push(validate_candidate_set(cs, None)?);
        splits.push(cfg.split_of(t));
        affinity.push(aff_row);
    }
    Ok((
        Dataset {
            schema: FeatureSchema::dims(cfg.p, cfg.q, cfg.l),
            m: cfg.m,
            k: cfg.k,
            sets,
            splits,
        },
        PlantedTruth { affinity },
    ))
}

/// A site available for padding, with its group membership.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSite {
    pub features: SiteFeatures,
    pub membership: GroupDistribution,
}

/// Pads `present` up to `m_target` sites with uniform draws from `pool`,
/// each assigned zero enrollment.
pub fn negative_sample<R: Rng + ?Sized>(
    pool: &[PoolSite],
    present: CandidateSet,
    m_target: usize,
    rng: &mut R,
) -> Result<CandidateSet> {
    let have = present.num_sites();
    if have >= m_target {
        return Ok(present);
    }
    let need = m_target - have;
    if let Some(dup) = pool.iter().find(|p| present.sites.iter().any(|s| s.id == p.features.id)) {
        return Err(FairRankError::invalid(format!(
            "pool site {} is already in the candidate set",
            dup.features.id
        )));
    }
    if pool.len() < need {
        return Err(FairRankError::invalid(format!(
            "pool has {} sites, {need} needed",
            pool.len()
        )));
    }
    let mut cs = present;
    for i in index::sample(rng, pool.len(), need) {
        cs.sites.push(pool[i].features.clone());
        cs.membership.push(pool[i].membership.clone());
        cs.enrollment.push(0.0);
    }
    validate_candidate_set(cs, None)
}
