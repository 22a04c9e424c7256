//! Two-hidden-layer ReLU network scoring one (trial, site) pair at a time,
//! with a hand-written backward pass.
//!
//! Parameters live in a single flat buffer laid out as
//! `w1 | b1 | w2 | b2 | w3 | b3`, row-major, so optimizers and finite
//! difference checks can treat them as one vector.

use std::ops::{Deref, Range};

use rand::Rng;

use crate::domain::{SiteFeatures, TrialFeatures};
use crate::error::{FairRankError, Result};
use crate::rng;

/// Per-site relevance scores for one candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FairRankError::Divergence("non-finite score".into()));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerConfig {
    pub p: usize,
    pub q: usize,
    pub h1: usize,
    pub h2: usize,
    pub init_seed: u64,
}

impl ScorerConfig {
    pub const DEFAULT_H1: usize = 64;
    pub const DEFAULT_H2: usize = 32;

    pub fn new(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            h1: Self::DEFAULT_H1,
            h2: Self::DEFAULT_H2,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.h1 == 0 || self.h2 == 0 {
            return Err(FairRankError::invalid(format!("scorer dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.p + self.q
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Offsets of each parameter block inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub w3: Range<usize>,
    pub b3: usize,
    pub len: usize,
}

impl Layout {
    fn new(c: &ScorerConfig) -> Self {
        let n_in = c.input_dim();
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w1 = take(c.h1 * n_in);
        let b1 = take(c.h1);
        let w2 = take(c.h2 * c.h1);
        let b2 = take(c.h2);
        let w3 = take(c.h2);
        let b3 = take(1).start;
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    config: ScorerConfig,
    layout: Layout,
    values: Vec<f64>,
}

/// Gradient with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub values: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_params(config: ScorerConfig) -> Result<MlpParams> {
    config.validate()?;
    let layout = config.layout();
    let mut values = vec![0.0; layout.len];
    let mut rng = rng::stream(config.init_seed, rng::STREAM_INIT, &[]);
    let n_in = config.input_dim();
    for (range, fan_in, fan_out) in [
        (layout.w1.clone(), n_in, config.h1),
        (layout.w2.clone(), config.h1, config.h2),
        (layout.w3.clone(), config.h2, 1),
    ] {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[range] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(MlpParams {
        config,
        layout,
        values,
    })
}

impl MlpParams {
    pub fn zeros(config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        Ok(Self {
            config,
            values: vec![0.0; layout.len],
            layout,
        })
    }

    pub fn from_values(config: ScorerConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if values.len() != layout.len {
            return Err(FairRankError::dim(format!(
                "expected {} parameters, got {}",
                layout.len,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FairRankError::invalid("non-finite parameter"));
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads::zeros(self.values.len())
    }

    /// `θ ← θ + step · g`
    pub fn apply(&mut self, grads: &ParamGrads, step: f64) {
        for (p, g) in self.values.iter_mut().zip(&grads.values) {
            *p += step * g;
        }
    }

    fn fingerprint(&self) -> u64 {
        self.values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// Pre-activations saved by [`forward`] for the matching [`backward`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    trial: Vec<f64>,
    sites: Vec<Vec<f64>>,
    z1: Vec<Vec<f64>>,
    z2: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Scores every site against the trial.
pub fn forward(params: &MlpParams, trial: &TrialFeatures, sites: &[SiteFeatures]) -> Result<(ScoreVector, ForwardCache)> {
    let c = &params.config;
    if trial.values.len() != c.p {
        return Err(FairRankError::dim(format!(
            "trial has {} features, scorer expects p = {}",
            trial.values.len(),
            c.p
        )));
    }
    if let Some(s) = sites.iter().find(|s| s.values.len() != c.q) {
        return Err(FairRankError::dim(format!(
            "site {} has {} features, scorer expects q = {}",
            s.id,
            s.values.len(),
            c.q
        )));
    }
    let lay = &params.layout;
    let w = &params.values;
    let n_in = c.input_dim();
    let w1 = &w[lay.w1.clone()];
    let b1 = &w[lay.b1.clone()];
    let w2 = &w[lay.w2.clone()];
    let b2 = &w[lay.b2.clone()];
    let w3 = &w[lay.w3.clone()];
    let b3 = w[lay.b3];

    // trial half of the first layer is shared by every site
    let trial_part: Vec<f64> = (0..c.h1)
        .map(|j| {
            let row = &w1[j * n_in..j * n_in + c.p];
            b1[j] + row.iter().zip(&trial.values).map(|(a, x)| a * x).sum::<f64>()
        })
        .collect();

    let mut scores = Vec::with_capacity(sites.len());
    let mut z1s = Vec::with_capacity(sites.len());
    let mut z2s = Vec::with_capacity(sites.len());
    for site in sites {
        let z1: Vec<f64> = (0..c.h1)
            .map(|j| {
                let row = &w1[j * n_in + c.p..(j + 1) * n_in];
                trial_part[j] + row.iter().zip(&site.values).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect();
        let z2: Vec<f64> = (0..c.h2)
            .map(|k| {
                let row = &w2[k * c.h1..(k + 1) * c.h1];
                b2[k] + row.iter().zip(&z1).map(|(a, z)| a * relu(*z)).sum::<f64>()
            })
            .collect();
        let s = b3 + w3.iter().zip(&z2).map(|(a, z)| a * relu(*z)).sum::<f64>();
        scores.push(s);
        z1s.push(z1);
        z2s.push(z2);
    }
    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        trial: trial.values.clone(),
        sites: sites.iter().map(|s| s.values.clone()).collect(),
        z1: z1s,
        z2: z2s,
    };
    Ok((ScoreVector::new(scores)?, cache))
}

/// Returns `d (grad_scores · scores) / d θ`, summed over sites.
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_scores: &[f64]) -> Result<ParamGrads> {
    if cache.fingerprint != params.fingerprint() {
        return Err(FairRankError::invalid("forward cache does not belong to these parameters"));
    }
    if grad_scores.len() != cache.num_sites() {
        return Err(FairRankError::dim(format!(
            "{} score gradients for {} cached sites",
            grad_scores.len(),
            cache.num_sites()
        )));
    }
    let c = &params.config;
    let lay = &params.layout;
    let w = &params.values;
    let n_in = c.input_dim();
    let w2 = &w[lay.w2.clone()];
    let w3 = &w[lay.w3.clone()];
    let w1 = &w[lay.w1.clone()];

    let mut g = params.zero_grads();
    let mut dz1_sum = vec![0.0; c.h1];
    let mut dz1 = vec![0.0; c.h1];
    let mut dz2 = vec![0.0; c.h2];
    for (i, &gs) in grad_scores.iter().enumerate() {
        if gs == 0.0 {
            continue;
        }
        let z1 = &cache.z1[i];
        let z2 = &cache.z2[i];
        g.values[lay.b3] += gs;
        for k in 0..c.h2 {
            g.values[lay.w3.start + k] += gs * relu(z2[k]);
            dz2[k] = if z2[k] > 0.0 { gs * w3[k] } else { 0.0 };
        }
        dz1.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..c.h2 {
            let d = dz2[k];
            g.values[lay.b2.start + k] += d;
            if d == 0.0 {
                continue;
            }
            let row = &w2[k * c.h1..(k + 1) * c.h1];
            let grow = &mut g.values[lay.w2.start + k * c.h1..lay.w2.start + (k + 1) * c.h1];
            for j in 0..c.h1 {
                grow[j] += d * relu(z1[j]);
                dz1[j] += d * row[j];
            }
        }
        let site = &cache.sites[i];
        for j in 0..c.h1 {
            let d = if z1[j] > 0.0 { dz1[j] } else { 0.0 };
            if d == 0.0 {
                continue;
            }
            dz1_sum[j] += d;
            let base = lay.w1.start + j * n_in + c.p;
            for (gv, x) in g.values[base..base + c.q].iter_mut().zip(site) {
                *gv += d * x;
            }
        }
    }
    for (j, &d) in dz1_sum.iter().enumerate().take(c.h1) {
        g.values[lay.b1.start + j] += d;
        if d == 0.0 {
            continue;
        }
        let base = lay.w1.start + j * n_in;
        for (gv, x) in g.values[base..base + c.p].iter_mut().zip(&cache.trial) {
            *gv += d * x;
        }
    }
    debug_assert_eq!(w1.len(), c.h1 * n_in);
    Ok(g)
}

/// Convenience: scores only.
pub fn score(params: &MlpParams, trial: &TrialFeatures, sites: &[SiteFeatures]) -> Result<ScoreVector> {
    forward(params, trial, sites).map(|(s, _)| s)
}
