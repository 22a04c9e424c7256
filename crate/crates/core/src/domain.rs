//! Domain types shared by every stage of the pipeline: trial and site
//! features, per-site group distributions, candidate sets and rankings.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{FairRankError, Result};

/// Sums within this distance of 1 are accepted untouched.
pub const MEMBERSHIP_EXACT_TOL: f64 = 1e-9;
/// Sums within this distance of 1 are renormalized; anything further is rejected.
pub const MEMBERSHIP_RENORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFeatures {
    pub id: String,
    pub values: Vec<f64>,
    /// Categorical trial attributes such as `phase` or `area`, used for
    /// grouped evaluation. Not fed to the scorer.
    pub tags: BTreeMap<String, String>,
}

impl TrialFeatures {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            values,
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteFeatures {
    pub id: String,
    pub values: Vec<f64>,
}

impl SiteFeatures {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            values,
        }
    }
}

/// A distribution of a site's patient population over `L` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDistribution(Vec<f64>);

impl GroupDistribution {
    /// Validates the weights, renormalizing when the sum is off by at most
    /// [`MEMBERSHIP_RENORM_TOL`].
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::checked(weights, 0)
    }

    fn checked(weights: Vec<f64>, row: usize) -> Result<Self> {
        let bad = |reason: String| FairRankError::Membership { row, reason };
        if weights.is_empty() {
            return Err(bad("no groups".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(bad(format!("weight {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        let off = (sum - 1.0).abs();
        if off <= MEMBERSHIP_EXACT_TOL {
            Ok(Self(weights))
        } else if off <= MEMBERSHIP_RENORM_TOL {
            Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
        } else {
            Err(bad(format!("weights sum to {sum}")))
        }
    }

    /// Unchecked; must pass through [`validate_candidate_set`] before use.
    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        Self(weights)
    }

    pub fn uniform(l: usize) -> Self {
        Self(vec![1.0 / l as f64; l])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One trial together with its `M` candidate sites.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub trial: TrialFeatures,
    pub sites: Vec<SiteFeatures>,
    /// Past enrollment per site; any non-negative relevance signal.
    pub enrollment: Vec<f64>,
    /// `M x L` membership matrix, one distribution per site.
    pub membership: Vec<GroupDistribution>,
}

impl CandidateSet {
    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn num_groups(&self) -> usize {
        self.membership.first().map_or(0, GroupDistribution::len)
    }

    pub fn trial_dim(&self) -> usize {
        self.trial.values.len()
    }

    pub fn site_dim(&self) -> usize {
        self.sites.first().map_or(0, |s| s.values.len())
    }

    pub fn has_positive_enrollment(&self) -> bool {
        self.enrollment.iter().any(|&e| e > 0.0)
    }
}

/// Declared dimensions and optional segment metadata for feature vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSchema {
    pub p: usize,
    pub q: usize,
    pub l: usize,
    /// Trial-vector ranges holding one-hot / multi-hot indicators.
    pub trial_binary: Vec<Range<usize>>,
    /// Site-vector ranges holding histogram counts.
    pub site_histogram: Vec<Range<usize>>,
}

impl FeatureSchema {
    pub fn dims(p: usize, q: usize, l: usize) -> Self {
        Self {
            p,
            q,
            l,
            ..Default::default()
        }
    }
}

/// Checks every invariant of a candidate set and returns it, with membership
/// rows renormalized where they fall inside the tolerance band.
///
/// Without a schema, dimensions are inferred from the trial and the first
/// site and only consistency is enforced.
pub fn validate_candidate_set(cs: CandidateSet, schema: Option<&FeatureSchema>) -> Result<CandidateSet> {
    let m = cs.sites.len();
    if m == 0 {
        return Err(FairRankError::invalid("candidate set has no sites"));
    }
    let (p, q, l) = match schema {
        Some(s) => (s.p, s.q, s.l),
        None => (cs.trial_dim(), cs.site_dim(), cs.num_groups()),
    };

    if cs.trial.values.len() != p {
        return Err(FairRankError::dim(format!(
            "trial {} has {} features, expected {p}",
            cs.trial.id,
            cs.trial.values.len()
        )));
    }
    if cs.trial.values.iter().any(|v| !v.is_finite()) {
        return Err(FairRankError::invalid(format!("trial {} has non-finite features", cs.trial.id)));
    }
    for (i, site) in cs.sites.iter().enumerate() {
        if site.values.len() != q {
            return Err(FairRankError::dim(format!(
                "site {i} ({}) has {} features, expected {q}",
                site.id,
                site.values.len()
            )));
        }
        if site.values.iter().any(|v| !v.is_finite()) {
            return Err(FairRankError::invalid(format!("site {i} ({}) has non-finite features", site.id)));
        }
    }
    if cs.enrollment.len() != m {
        return Err(FairRankError::dim(format!(
            "enrollment has length {}, expected {m}",
            cs.enrollment.len()
        )));
    }
    if let Some((i, e)) = cs.enrollment.iter().enumerate().find(|(_, e)| !e.is_finite() || **e < 0.0) {
        return Err(FairRankError::invalid(format!("enrollment[{i}] = {e} is negative or non-finite")));
    }
    if cs.membership.len() != m {
        return Err(FairRankError::dim(format!(
            "membership has {} rows, expected {m}",
            cs.membership.len()
        )));
    }

    if let Some(s) = schema {
        for r in &s.trial_binary {
            let seg = cs.trial.values.get(r.clone()).ok_or_else(|| {
                FairRankError::dim(format!("binary segment {r:?} outside trial vector"))
            })?;
            if seg.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(FairRankError::invalid(format!(
                    "trial {} has non-binary entries in segment {r:?}",
                    cs.trial.id
                )));
            }
        }
        for r in &s.site_histogram {
            for site in &cs.sites {
                let seg = site.values.get(r.clone()).ok_or_else(|| {
                    FairRankError::dim(format!("histogram segment {r:?} outside site vector"))
                })?;
                if seg.iter().any(|&v| v < 0.0) {
                    return Err(FairRankError::invalid(format!(
                        "site {} has negative histogram counts",
                        site.id
                    )));
                }
            }
        }
    }

    let CandidateSet {
        trial,
        sites,
        enrollment,
        membership,
    } = cs;
    let membership = membership
        .into_iter()
        .enumerate()
        .map(|(row, d)| {
            if d.len() != l {
                return Err(FairRankError::dim(format!(
                    "membership row {row} has {} groups, expected {l}",
                    d.len()
                )));
            }
            GroupDistribution::checked(d.0, row)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CandidateSet {
        trial,
        sites,
        enrollment,
        membership,
    })
}

/// A permutation of site indices; position 0 is the top rank.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ranking(Vec<usize>);

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(FairRankError::invalid(format!("{order:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Self(order))
    }

    pub(crate) fn from_permutation(order: Vec<usize>) -> Self {
        debug_assert!(Ranking::new(order.clone()).is_ok());
        Self(order)
    }

    pub fn identity(m: usize) -> Self {
        Self((0..m).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The selected sites: the first `k` entries (clamped to `M`).
    pub fn top_k(&self, k: usize) -> &[usize] {
        &self.0[..k.min(self.0.len())]
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}
