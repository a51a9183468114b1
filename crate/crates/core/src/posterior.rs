//! Predictions, predictive samples, component importance and selection, and
//! scoring metrics computed from retained posterior draws.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmpiricalMarginals, StandardizationParams, TrainingSet};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::prior::sample_normal;
use crate::sampler::chain_rng;
use crate::tree::{evaluate, ComponentIndex, IdentifiableTree, TreeRecord};

/// Heuristic selection threshold on the standardized scale (0.05 sd(y)).
pub const DEFAULT_TAU: f64 = 0.05;

/// One retained state: the active trees and the noise variance, both on the
/// standardized response scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub sigma2: f64,
    pub trees: Vec<IdentifiableTree>,
}

impl Draw {
    pub fn f(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| evaluate(t, x)).sum()
    }

    pub fn to_record(&self) -> DrawRecord {
        DrawRecord {
            iteration: self.iteration,
            sigma2: self.sigma2,
            trees: self.trees.iter().map(IdentifiableTree::to_record).collect(),
        }
    }

    pub fn from_record(rec: &DrawRecord, m: &EmpiricalMarginals) -> Result<Self> {
        Ok(Draw {
            iteration: rec.iteration,
            sigma2: rec.sigma2,
            trees: rec
                .trees
                .iter()
                .map(|t| IdentifiableTree::from_record(t, m))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub iteration: usize,
    pub sigma2: f64,
    pub trees: Vec<TreeRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<Draw>,
    pub standardization: StandardizationParams,
}

impl PosteriorDraws {
    pub fn new(draws: Vec<Draw>, standardization: StandardizationParams) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::data("posterior has no draws"));
        }
        Ok(PosteriorDraws {
            draws,
            standardization,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Posterior mean of `f(x)` on the standardized scale.
    pub fn mean_f(&self, x: &[f64]) -> f64 {
        self.draws.iter().map(|d| d.f(x)).sum::<f64>() / self.draws.len() as f64
    }

    /// Posterior mean of `σ²` on the original response scale.
    pub fn mean_sigma2_original(&self) -> f64 {
        let s = self.standardization.y_scale;
        self.draws.iter().map(|d| d.sigma2).sum::<f64>() / self.draws.len() as f64 * s * s
    }

    /// Every component that appears in at least one draw.
    pub fn components(&self) -> Vec<ComponentIndex> {
        let set: BTreeSet<ComponentIndex> = self
            .draws
            .iter()
            .flat_map(|d| d.trees.iter().map(|t| t.component().clone()))
            .collect();
        set.into_iter().collect()
    }
}

fn check_width(rows: &[Vec<f64>], p: usize) -> Result<()> {
    match rows.iter().find(|r| r.len() != p) {
        Some(r) => Err(Error::data(format!("dimension mismatch: expected {p} columns, got {}", r.len()))),
        None => Ok(()),
    }
}

fn model_width(dr: &PosteriorDraws) -> usize {
    dr.standardization.x_means.len()
}

/// Posterior mean prediction on the original response scale.
pub fn predict_mean(dr: &PosteriorDraws, rows: &[Vec<f64>], exec: Execution) -> Result<Vec<f64>> {
    if dr.is_empty() {
        return Err(Error::data("posterior has no draws"));
    }
    check_width(rows, model_width(dr))?;
    let st = &dr.standardization;
    Ok(exec::map_slice(exec, rows, |x| st.to_original(dr.mean_f(x))))
}

/// Posterior mean of one component's contribution, original scale without
/// the response mean.
pub fn component_predict(dr: &PosteriorDraws, component: &ComponentIndex, rows: &[Vec<f64>], exec: Execution) -> Result<Vec<f64>> {
    check_width(rows, model_width(dr))?;
    let scale = dr.standardization.y_scale;
    let nd = dr.draws.len() as f64;
    Ok(exec::map_slice(exec, rows, |x| {
        let total: f64 = dr
            .draws
            .iter()
            .map(|d| {
                d.trees
                    .iter()
                    .filter(|t| t.component() == component)
                    .map(|t| evaluate(t, x))
                    .sum::<f64>()
            })
            .sum();
        total / nd * scale
    }))
}

/// `m` draws of `f(x) + ε` on the original scale; sample `i` uses retained
/// draw `i mod len` and noise with that draw's `σ²`.
pub fn predictive_samples<R: Rng + ?Sized>(dr: &PosteriorDraws, x: &[f64], rng: &mut R, m: usize) -> Result<Vec<f64>> {
    if dr.is_empty() {
        return Err(Error::data("posterior has no draws"));
    }
    if m == 0 {
        return Err(Error::data("at least one predictive sample is required"));
    }
    check_width(std::slice::from_ref(&x.to_vec()), model_width(dr))?;
    let st = &dr.standardization;
    let fx: Vec<f64> = dr.draws.iter().map(|d| d.f(x)).collect();
    Ok((0..m)
        .map(|i| {
            let k = i % fx.len();
            let eps = sample_normal(rng, 0.0, dr.draws[k].sigma2);
            st.to_original(fx[k] + eps)
        })
        .collect())
}

/// Sum of the draw's trees on `component` at every training row.
fn component_values(draw: &Draw, component: &ComponentIndex, train: &TrainingSet) -> Vec<f64> {
    let n = train.n();
    let mut total = vec![0.0; n];
    let mut mult = vec![0.0; n];
    for t in draw.trees.iter().filter(|t| t.component() == component) {
        t.structure().fill_multipliers(train, &mut mult);
        for (v, a) in total.iter_mut().zip(&mult) {
            *v += t.beta() * a;
        }
    }
    total
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Empirical L2 norm `‖f_S‖_{2,n}` of the draw's component `S` over the
/// training rows, standardized scale.
pub fn component_norm(draw: &Draw, component: &ComponentIndex, train: &TrainingSet) -> f64 {
    rms(&component_values(draw, component, train))
}

/// Per-draw norms of every component encountered.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentNorms {
    pub components: Vec<ComponentIndex>,
    /// `norms[c][d]` is the norm of component `c` in draw `d`.
    pub norms: Vec<Vec<f64>>,
}

pub fn component_norms(dr: &PosteriorDraws, train: &TrainingSet, exec: Execution) -> ComponentNorms {
    let components = dr.components();
    let index: BTreeMap<&ComponentIndex, usize> = components.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let per_draw: Vec<Vec<(usize, f64)>> = exec::map_slice(exec, &dr.draws, |draw| {
        let present: BTreeSet<&ComponentIndex> = draw.trees.iter().map(|t| t.component()).collect();
        present
            .into_iter()
            .map(|c| (index[c], component_norm(draw, c, train)))
            .collect()
    });
    let mut norms = vec![vec![0.0; dr.draws.len()]; components.len()];
    for (d, entries) in per_draw.into_iter().enumerate() {
        for (c, v) in entries {
            norms[c][d] = v;
        }
    }
    ComponentNorms { components, norms }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component: ComponentIndex,
    pub mean_norm: f64,
    /// `mean_norm` divided by the largest `mean_norm`.
    pub score: f64,
    /// Fraction of draws in which this component's norm exceeds `tau`.
    pub exceedance: f64,
    /// Fraction of draws in which the component has any tree.
    pub frequency: f64,
}

impl ComponentNorms {
    pub fn summaries(&self, tau: f64) -> Vec<ComponentSummary> {
        let nd = self.norms.first().map_or(0, Vec::len).max(1) as f64;
        let means: Vec<f64> = self.norms.iter().map(|v| v.iter().sum::<f64>() / nd).collect();
        let max = means.iter().copied().fold(0.0, f64::max);
        let mut out: Vec<ComponentSummary> = self
            .components
            .iter()
            .zip(&self.norms)
            .zip(&means)
            .map(|((c, v), &mean)| ComponentSummary {
                component: c.clone(),
                mean_norm: mean,
                score: if max > 0.0 { mean / max } else { 0.0 },
                exceedance: v.iter().filter(|&&x| x > tau).count() as f64 / nd,
                frequency: v.iter().filter(|&&x| x > 0.0).count() as f64 / nd,
            })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.component.cmp(&b.component)));
        out
    }
}

/// Normalized importance scores, highest first. Exceedance uses
/// [`DEFAULT_TAU`].
pub fn importance_scores(dr: &PosteriorDraws, train: &TrainingSet, exec: Execution) -> Vec<ComponentSummary> {
    component_norms(dr, train, exec).summaries(DEFAULT_TAU)
}

/// Keeps `S` iff the posterior probability of `‖f_S‖_{2,n} > tau` is at least
/// `delta`.
pub fn select_components(
    dr: &PosteriorDraws,
    train: &TrainingSet,
    tau: f64,
    delta: f64,
    exec: Execution,
) -> Result<Vec<ComponentIndex>> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Config(vec![format!("delta must be in (0, 1/2), got {delta}")]));
    }
    if !(tau >= 0.0) {
        return Err(Error::Config(vec![format!("tau must be >= 0, got {tau}")]));
    }
    Ok(component_norms(dr, train, exec)
        .summaries(tau)
        .into_iter()
        .filter(|s| s.exceedance >= delta)
        .map(|s| s.component)
        .collect())
}

/// CRPS of the empirical distribution of `samples` at `y`, via
/// `E|Z - y| - E|Z - Z'| / 2` on sorted samples.
pub fn crps(samples: &[f64], y: f64) -> f64 {
    let m = samples.len();
    assert!(m > 0, "crps needs at least one sample");
    let mut z = samples.to_vec();
    z.sort_by(f64::total_cmp);
    let mf = m as f64;
    let abs_dev = z.iter().map(|v| (v - y).abs()).sum::<f64>() / mf;
    let pair: f64 = z
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i as f64 + 1.0) - mf - 1.0) * v)
        .sum();
    abs_dev - pair / (mf * mf)
}

/// Mean CRPS over query rows with `m` predictive samples each. Row `i` draws
/// from the RNG stream `i` of `seed`.
pub fn mean_crps(dr: &PosteriorDraws, rows: &[Vec<f64>], y: &[f64], m: usize, seed: u64, exec: Execution) -> Result<f64> {
    if rows.len() != y.len() {
        return Err(Error::data("length mismatch between rows and responses"));
    }
    check_width(rows, model_width(dr))?;
    let idx: Vec<usize> = (0..rows.len()).collect();
    let scores = exec::map_slice(exec, &idx, |&i| {
        let mut rng = chain_rng(seed, i as u64);
        predictive_samples(dr, &rows[i], &mut rng, m).map(|s| crps(&s, y[i]))
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::data(format!(
            "length mismatch: {} predictions, {} actual values",
            pred.len(),
            actual.len()
        )));
    }
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn normalized_metric(values: &[f64], baseline: f64) -> Result<Vec<f64>> {
    if !(baseline > 0.0) {
        return Err(Error::data(format!("baseline must be positive, got {baseline}")));
    }
    Ok(values.iter().map(|v| v / baseline).collect())
}
