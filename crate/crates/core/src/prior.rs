//! Prior distributions over tree structure, heights, noise variance, the
//! number of trees and the slot-activity vector, with matching log-densities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::dataset::{DataMatrix, SplitGrid};
use crate::error::{Error, Result};
use crate::tree::{ComponentIndex, TreeStructure};

/// Floor applied to a calibrated `lambda`.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Either a fixed prior scale for the noise variance or the prior mass to put
/// below the least-squares residual variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    Fixed(f64),
    Quantile(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha_split: f64,
    pub gamma_split: f64,
    pub sigma_beta2: f64,
    pub v: f64,
    pub lambda: LambdaSpec,
    pub c_star: f64,
    pub t_max: usize,
    /// Truncation bound; `None` or infinity disables truncation.
    pub xi: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha_split: 0.95,
            gamma_split: 2.0,
            sigma_beta2: 0.1,
            v: 3.0,
            lambda: LambdaSpec::Quantile(0.95),
            c_star: 1e-2,
            t_max: 200,
            xi: None,
        }
    }
}

impl Hyperparams {
    /// Collects every violated range constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.alpha_split > 0.0 && self.alpha_split < 1.0) {
            bad.push(format!("alpha_split must be in (0,1), got {}", self.alpha_split));
        }
        if !(self.gamma_split > 0.0) {
            bad.push(format!("gamma_split must be > 0, got {}", self.gamma_split));
        }
        if !(self.sigma_beta2 > 0.0) {
            bad.push(format!("sigma_beta2 must be > 0, got {}", self.sigma_beta2));
        }
        if !(self.v > 0.0) {
            bad.push(format!("v must be > 0, got {}", self.v));
        }
        match self.lambda {
            LambdaSpec::Fixed(l) if !(l > 0.0) => bad.push(format!("lambda must be > 0, got {l}")),
            LambdaSpec::Quantile(q) if !(q > 0.0 && q < 1.0) => {
                bad.push(format!("q_lambda must be in (0,1), got {q}"))
            }
            _ => {}
        }
        if !(self.c_star > 0.0) {
            bad.push(format!("c_star must be > 0, got {}", self.c_star));
        }
        if self.t_max == 0 {
            bad.push("t_max must be a positive integer".to_string());
        }
        if let Some(xi) = self.xi {
            if !(xi > 0.0) {
                bad.push(format!("xi must be > 0, got {xi}"));
            }
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.problems();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// Soft advisory: the number of slots should grow at most linearly in n.
    pub fn t_max_warning(&self, n: usize) -> Option<String> {
        (self.t_max > 10 * n).then(|| format!("t_max = {} is large relative to n = {n}", self.t_max))
    }

    pub fn fixed_lambda(&self) -> Result<f64> {
        match self.lambda {
            LambdaSpec::Fixed(l) => Ok(l),
            LambdaSpec::Quantile(_) => Err(Error::Config(vec!["lambda has not been calibrated".into()])),
        }
    }

    /// Truncation bound, if truncation is active.
    pub fn truncation(&self) -> Option<f64> {
        self.xi.filter(|x| x.is_finite())
    }
}

/// Prior weights `ω_d` on the component size, `d = 1..=p` at index `d - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeWeights(Vec<f64>);

impl SizeWeights {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    /// Number of columns the weights were built for.
    pub fn p(&self) -> usize {
        self.0.len()
    }

    pub fn weight(&self, d: usize) -> f64 {
        self.0[d - 1]
    }
}

fn split_probability(d: usize, h: &Hyperparams) -> f64 {
    h.alpha_split * (1.0 + d as f64).powf(-h.gamma_split)
}

/// `ω_d ∝ (1 - p_split(d)) Π_{l=1}^{d-1} p_split(l)`, normalized over `1..=p`.
pub fn component_size_weights(p: usize, h: &Hyperparams) -> SizeWeights {
    let mut log_w = Vec::with_capacity(p);
    let mut log_prod = 0.0;
    for d in 1..=p {
        log_w.push((1.0 - split_probability(d, h)).ln() + log_prod);
        log_prod += split_probability(d, h).ln();
    }
    SizeWeights(normalize_log(&log_w))
}

fn normalize_log(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn sample_discrete<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws `|S| = d ~ ω` and then a uniform `d`-subset of `columns`.
pub fn sample_component<R: Rng + ?Sized>(rng: &mut R, columns: &[usize], w: &SizeWeights) -> Result<ComponentIndex> {
    if columns.is_empty() {
        return Err(Error::data("no splittable columns"));
    }
    if w.p() != columns.len() {
        return Err(Error::data("size weights do not match the number of splittable columns"));
    }
    let d = (sample_discrete(rng, w.weights()) + 1).min(crate::tree::MAX_COMPONENT_SIZE);
    let picked = rand::seq::index::sample(rng, columns.len(), d);
    ComponentIndex::new(picked.iter().map(|i| columns[i]).collect())
}

/// Uniform, independent grid indices for every variable of `component`.
pub fn sample_splits<R: Rng + ?Sized>(rng: &mut R, component: &ComponentIndex, grid: &SplitGrid) -> Result<Vec<u32>> {
    component
        .vars()
        .iter()
        .map(|&j| {
            let len = grid.len(j);
            if len == 0 {
                Err(Error::data(format!("column {j} has no candidate splits")))
            } else {
                Ok(rng.random_range(0..len) as u32)
            }
        })
        .collect()
}

/// Draws `(S, s)` from the prior.
pub fn sample_structure<R: Rng + ?Sized>(
    rng: &mut R,
    columns: &[usize],
    w: &SizeWeights,
    grid: &SplitGrid,
) -> Result<TreeStructure> {
    let component = sample_component(rng, columns, w)?;
    let idx = sample_splits(rng, &component, grid)?;
    TreeStructure::new(component, idx)
}

pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    Normal::new(mean, var.sqrt()).expect("finite variance").sample(rng)
}

/// Inverse gamma with density `∝ x^{-a-1} e^{-b/x}`, mean `b / (a - 1)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    scale / g
}

pub fn inv_gamma_cdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_ur(shape, scale / x)
    }
}

pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, h: &Hyperparams) -> f64 {
    sample_normal(rng, 0.0, h.sigma_beta2)
}

/// `σ² ~ IG(v/2, vλ/2)`; requires a fixed (or calibrated) `lambda`.
pub fn sample_sigma2<R: Rng + ?Sized>(rng: &mut R, h: &Hyperparams) -> Result<f64> {
    let lambda = h.fixed_lambda()?;
    Ok(sample_inv_gamma(rng, h.v / 2.0, h.v * lambda / 2.0))
}

/// `π{T = t} ∝ n^{-C* t}` for `t = 0..=T_max`.
pub fn t_prior_weights(n: usize, h: &Hyperparams) -> Vec<f64> {
    let log_n = (n as f64).ln();
    let log_w: Vec<f64> = (0..=h.t_max).map(|t| -h.c_star * t as f64 * log_n).collect();
    normalize_log(&log_w)
}

pub fn sample_t<R: Rng + ?Sized>(rng: &mut R, n: usize, h: &Hyperparams) -> usize {
    sample_discrete(rng, &t_prior_weights(n, h))
}

/// Uniform activity vector with exactly `t` ones among `t_max` slots.
#[allow(non_snake_case)]
pub fn sample_z_given_T<R: Rng + ?Sized>(rng: &mut R, t: usize, t_max: usize) -> Result<Vec<bool>> {
    if t > t_max {
        return Err(Error::data(format!("T = {t} exceeds T_max = {t_max}")));
    }
    let mut z = vec![false; t_max];
    for i in rand::seq::index::sample(rng, t_max, t).iter() {
        z[i] = true;
    }
    Ok(z)
}

pub fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `log[ω_|S| / C(p, |S|) · Π_{j∈S} 1/|A_j|]` with `p = w.p()`.
#[allow(non_snake_case)]
pub fn log_prior_S_s(component: &ComponentIndex, w: &SizeWeights, grid: &SplitGrid) -> f64 {
    let d = component.len();
    let mut lp = w.weight(d).ln() - ln_binomial(w.p(), d);
    for &j in component.vars() {
        lp -= (grid.len(j) as f64).ln();
    }
    lp
}

/// Closed-form log prior ratio for growing a size-`d` component by one
/// variable with `eta` candidate splits, among `p` columns:
/// `α(1 - α(2+d)^{-γ}) (d+1) / (((1+d)^γ - α)(p-d) η)`.
pub fn grow_log_prior_ratio(d: usize, p: usize, eta: usize, h: &Hyperparams) -> f64 {
    let (a, g) = (h.alpha_split, h.gamma_split);
    let df = d as f64;
    (a * (1.0 - a * (2.0 + df).powf(-g))).ln() - ((1.0 + df).powf(g) - a).ln() + (df + 1.0).ln()
        - ((p - d) as f64).ln()
        - (eta as f64).ln()
}

/// Log prior ratio for pruning a size-`d` component (the removed variable has
/// `eta` candidate splits); the reciprocal of the matching grow.
pub fn prune_log_prior_ratio(d: usize, p: usize, eta: usize, h: &Hyperparams) -> f64 {
    -grow_log_prior_ratio(d - 1, p, eta, h)
}

/// Residual variance of an ordinary least-squares fit with intercept, falling
/// back to the sample variance of `y` when the system is rank deficient or
/// has no residual degrees of freedom.
pub fn least_squares_residual_variance(d: &DataMatrix) -> f64 {
    let (n, p) = (d.n(), d.p());
    let y = DVector::from_column_slice(d.y());
    let mean = y.mean();
    let fallback = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if n <= p + 1 {
        return fallback;
    }
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { d.value(i, j - 1) });
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (n.max(p + 1) as f64);
    if svd.rank(tol) < p + 1 {
        return fallback;
    }
    match svd.solve(&y, tol) {
        Ok(coef) => {
            let resid = &y - &x * coef;
            resid.norm_squared() / (n - p - 1) as f64
        }
        Err(_) => fallback,
    }
}

/// Finds `λ` with `P{σ² <= σ̂²} = q` under `σ² ~ IG(v/2, vλ/2)`, where `σ̂²`
/// is the least-squares residual variance.
pub fn calibrate_lambda(q_lambda: f64, v: f64, d: &DataMatrix) -> Result<f64> {
    if !(q_lambda > 0.0 && q_lambda < 1.0) {
        return Err(Error::Config(vec![format!("q_lambda must be in (0,1), got {q_lambda}")]));
    }
    let sigma_hat2 = least_squares_residual_variance(d);
    Ok(lambda_for_quantile(q_lambda, v, sigma_hat2))
}

/// The CDF at `σ̂²` is decreasing in `λ`; bisect on `log λ`.
pub fn lambda_for_quantile(q: f64, v: f64, sigma_hat2: f64) -> f64 {
    if !(sigma_hat2 > 0.0) {
        return LAMBDA_FLOOR;
    }
    let cdf = |lambda: f64| inv_gamma_cdf(sigma_hat2, v / 2.0, v * lambda / 2.0);
    let (mut lo, mut hi) = (sigma_hat2.ln() - 10.0, sigma_hat2.ln() + 10.0);
    while cdf(lo.exp()) < q {
        lo -= 10.0;
        if lo < -745.0 {
            return LAMBDA_FLOOR;
        }
    }
    while cdf(hi.exp()) > q {
        hi += 10.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid.exp()) > q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp().max(LAMBDA_FLOOR)
}
