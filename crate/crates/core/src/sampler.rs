//! MCMC over the slot representation `f = Σ_t z_t T(x; S_t, s_t, β_t)`.
//!
//! One sweep updates every active slot (Metropolis-Hastings on `(S_t, s_t)`
//! with `β_t` integrated out, then a conjugate Gaussian draw of `β_t`), flips
//! one activity indicator by Metropolis-Hastings, and redraws `σ²` from its
//! inverse-gamma full conditional. Dormant slots keep stale parameters and are
//! refreshed from the prior only when a flip proposes to activate them.
//!
//! The running residual `y - f(x)` is maintained incrementally and audited
//! against a from-scratch recomputation on a fixed schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::posterior::Draw;
use crate::prior::{self, Hyperparams, SizeWeights};
use crate::tree::{IdentifiableTree, TreeStructure, MAX_COMPONENT_SIZE};

pub const PROB_GROW: f64 = 0.28;
pub const PROB_PRUNE: f64 = 0.28;
pub const PROB_CHANGE: f64 = 0.44;

/// Largest tolerated drift between the cached and recomputed residuals.
pub const AUDIT_TOLERANCE: f64 = 1e-8;

pub type ChainRng = ChaCha8Rng;

/// Per-chain RNG: the base seed selects the key, the chain index the stream.
pub fn chain_rng(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Stream index within `seed`; distinct chains use distinct streams.
    pub stream: u64,
    pub truncation_enabled: bool,
    pub audit_every: usize,
    /// Progress callback cadence in sweeps; 0 disables progress events.
    pub progress_every: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            stream: 0,
            truncation_enabled: false,
            audit_every: 100,
            progress_every: 0,
        }
    }
}

impl ChainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.burn_in >= self.n_iter {
            bad.push(format!("burn_in ({}) must be < n_iter ({})", self.burn_in, self.n_iter));
        }
        if self.thin == 0 {
            bad.push("thin must be >= 1".into());
        }
        if self.audit_every == 0 {
            bad.push("audit_every must be >= 1".into());
        }
        bad
    }

    /// Number of states recorded before any truncation filtering.
    pub fn recorded(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

impl MoveKind {
    pub const ALL: [MoveKind; 3] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change];

    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u: f64 = rng.random();
        if u < PROB_GROW {
            MoveKind::Grow
        } else if u < PROB_GROW + PROB_PRUNE {
            MoveKind::Prune
        } else {
            MoveKind::Change
        }
    }

    pub fn probability(self) -> f64 {
        match self {
            MoveKind::Grow => PROB_GROW,
            MoveKind::Prune => PROB_PRUNE,
            MoveKind::Change => PROB_CHANGE,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// A proposed structural move. `structure` is `None` when the drawn move is
/// impossible from the current state, which counts as a rejection.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub kind: MoveKind,
    pub structure: Option<TreeStructure>,
    pub log_q_forward: f64,
    pub log_q_reverse: f64,
    /// `log π(S', s') - log π(S, s)`.
    pub log_prior_ratio: f64,
}

/// Immutable pieces shared by every update in a chain.
#[derive(Clone, Debug)]
pub struct SamplerContext<'a> {
    pub train: &'a TrainingSet,
    pub h: &'a Hyperparams,
    pub lambda: f64,
    pub weights: SizeWeights,
}

impl<'a> SamplerContext<'a> {
    /// `h.lambda` must already be fixed (calibrated).
    pub fn new(train: &'a TrainingSet, h: &'a Hyperparams) -> Result<Self> {
        h.validate()?;
        let lambda = h.fixed_lambda()?;
        if train.splittable().is_empty() {
            return Err(Error::data("no column has two or more distinct values"));
        }
        let weights = prior::component_size_weights(train.splittable().len(), h);
        Ok(SamplerContext {
            train,
            h,
            lambda,
            weights,
        })
    }

    pub fn columns(&self) -> &[usize] {
        self.train.splittable()
    }

    pub fn n(&self) -> usize {
        self.train.n()
    }

    fn draw_structure<R: Rng + ?Sized>(&self, rng: &mut R) -> TreeStructure {
        prior::sample_structure(rng, self.columns(), &self.weights, self.train.grid())
            .expect("context guarantees splittable columns")
    }
}

fn complement(structure: &TreeStructure, columns: &[usize]) -> Vec<usize> {
    columns
        .iter()
        .copied()
        .filter(|&j| !structure.component().contains(j))
        .collect()
}

/// Draws GROW/PRUNE/CHANGE and builds the proposed `(S', s')` with its
/// forward and reverse proposal log-densities.
pub fn propose_move<R: Rng + ?Sized>(rng: &mut R, current: &TreeStructure, ctx: &SamplerContext<'_>) -> Proposal {
    let kind = MoveKind::draw(rng);
    propose_kind(rng, kind, current, ctx)
}

pub fn propose_kind<R: Rng + ?Sized>(
    rng: &mut R,
    kind: MoveKind,
    current: &TreeStructure,
    ctx: &SamplerContext<'_>,
) -> Proposal {
    let grid = ctx.train.grid();
    let p = ctx.columns().len();
    let d = current.len();
    let infeasible = Proposal {
        kind,
        structure: None,
        log_q_forward: f64::NEG_INFINITY,
        log_q_reverse: f64::NEG_INFINITY,
        log_prior_ratio: 0.0,
    };
    let ln = |x: usize| (x as f64).ln();
    let pairs: Vec<(usize, u32)> = current.pairs().collect();
    match kind {
        MoveKind::Grow => {
            if d >= p || d >= MAX_COMPONENT_SIZE {
                return infeasible;
            }
            let outside = complement(current, ctx.columns());
            let j = outside[rng.random_range(0..outside.len())];
            let eta = grid.len(j);
            let k = rng.random_range(0..eta) as u32;
            let mut next = pairs;
            next.push((j, k));
            Proposal {
                kind,
                structure: Some(TreeStructure::from_pairs(next).expect("valid grow")),
                log_q_forward: PROB_GROW.ln() - ln(p - d) - ln(eta),
                log_q_reverse: PROB_PRUNE.ln() - ln(d + 1),
                log_prior_ratio: prior::grow_log_prior_ratio(d, p, eta, ctx.h),
            }
        }
        MoveKind::Prune => {
            if d <= 1 {
                return infeasible;
            }
            let b = rng.random_range(0..d);
            let eta = grid.len(pairs[b].0);
            let mut next = pairs;
            next.remove(b);
            Proposal {
                kind,
                structure: Some(TreeStructure::from_pairs(next).expect("valid prune")),
                log_q_forward: PROB_PRUNE.ln() - ln(d),
                log_q_reverse: PROB_GROW.ln() - ln(p - d + 1) - ln(eta),
                log_prior_ratio: prior::prune_log_prior_ratio(d, p, eta, ctx.h),
            }
        }
        MoveKind::Change => {
            if d >= p {
                return infeasible;
            }
            let b = rng.random_range(0..d);
            let outside = complement(current, ctx.columns());
            let j = outside[rng.random_range(0..outside.len())];
            let eta_new = grid.len(j);
            let eta_old = grid.len(pairs[b].0);
            let k = rng.random_range(0..eta_new) as u32;
            let mut next = pairs;
            next[b] = (j, k);
            let base = PROB_CHANGE.ln() - ln(d) - ln(p - d);
            Proposal {
                kind,
                structure: Some(TreeStructure::from_pairs(next).expect("valid change")),
                log_q_forward: base - ln(eta_new),
                log_q_reverse: base - ln(eta_old),
                log_prior_ratio: ln(eta_old) - ln(eta_new),
            }
        }
    }
}

/// Sufficient statistics of a slot's marginal likelihood:
/// `A = Σ a_i² / σ² + 1/σ_β²`, `B = Σ a_i r_i / σ²`.
#[allow(non_snake_case)]
pub fn marginal_AB(resid_t: &[f64], mult: &[f64], sigma2: f64, sigma_beta2: f64) -> (f64, f64) {
    let (mut saa, mut sar) = (0.0, 0.0);
    for (&a, &r) in mult.iter().zip(resid_t) {
        saa += a * a;
        sar += a * r;
    }
    (saa / sigma2 + 1.0 / sigma_beta2, sar / sigma2)
}

/// `log(A^{-1/2} exp(B² / 2A))`: the structure's log marginal likelihood up
/// to terms that do not depend on the structure.
#[allow(non_snake_case)]
pub fn log_marginal(A: f64, B: f64) -> f64 {
    -0.5 * A.ln() + B * B / (2.0 * A)
}

/// Log acceptance ratio for moving from `current = (A, B, log prior)` to
/// `proposed`, with `log_q_ratio = log q(reverse) - log q(forward)`.
pub fn tree_log_acceptance(current: (f64, f64, f64), proposed: (f64, f64, f64), log_q_ratio: f64) -> f64 {
    log_marginal(proposed.0, proposed.1) - log_marginal(current.0, current.1) + proposed.2 - current.2 + log_q_ratio
}

pub fn mh_accept_tree<R: Rng + ?Sized>(
    rng: &mut R,
    current: (f64, f64, f64),
    proposed: (f64, f64, f64),
    log_q_ratio: f64,
) -> Result<bool> {
    let log_r = tree_log_acceptance(current, proposed, log_q_ratio);
    if log_r.is_nan() {
        return Err(Error::Numeric(format!(
            "NaN acceptance ratio: current {current:?}, proposed {proposed:?}"
        )));
    }
    Ok(log_r >= 0.0 || rng.random::<f64>().ln() < log_r)
}

/// `β ~ N(B/A, 1/A)`.
#[allow(non_snake_case)]
pub fn gibbs_beta<R: Rng + ?Sized>(rng: &mut R, A: f64, B: f64) -> f64 {
    prior::sample_normal(rng, B / A, 1.0 / A)
}

/// `σ² ~ IG((v + n)/2, (vλ + Σ r²)/2)`.
pub fn gibbs_sigma2<R: Rng + ?Sized>(rng: &mut R, resid: &[f64], v: f64, lambda: f64) -> f64 {
    let (shape, scale) = sigma2_posterior(resid, v, lambda);
    prior::sample_inv_gamma(rng, shape, scale)
}

pub fn sigma2_posterior(resid: &[f64], v: f64, lambda: f64) -> (f64, f64) {
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    ((v + resid.len() as f64) / 2.0, (v * lambda + rss) / 2.0)
}

/// `log π(z') - log π(z)` when the number of active slots goes from `t_old`
/// to `t_new`: `-C* (t_new - t_old) log n + log C(T_max, t_old) - log C(T_max, t_new)`.
pub fn z_log_prior_ratio(t_old: usize, t_new: usize, t_max: usize, c_star: f64, n: usize) -> f64 {
    -c_star * (t_new as f64 - t_old as f64) * (n as f64).ln() + prior::ln_binomial(t_max, t_old)
        - prior::ln_binomial(t_max, t_new)
}

/// One tree slot. `mult` holds the per-row cell multipliers while active.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub structure: TreeStructure,
    pub beta: f64,
    pub mult: Vec<f64>,
}

impl Slot {
    fn fit(&self, i: usize) -> f64 {
        self.beta * self.mult[i]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: [u64; 3],
    pub infeasible: [u64; 3],
    pub accepted: [u64; 3],
    pub z_proposed: u64,
    pub z_accepted: u64,
}

impl MoveStats {
    pub fn acceptance_rate(&self, kind: MoveKind) -> f64 {
        let i = kind.index();
        if self.proposed[i] == 0 {
            0.0
        } else {
            self.accepted[i] as f64 / self.proposed[i] as f64
        }
    }

    pub fn z_acceptance_rate(&self) -> f64 {
        if self.z_proposed == 0 {
            0.0
        } else {
            self.z_accepted as f64 / self.z_proposed as f64
        }
    }
}

/// Result of one structural Metropolis-Hastings step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[allow(non_snake_case)]
pub struct StructureStep {
    pub kind: MoveKind,
    pub accepted: bool,
    /// Statistics of the structure held after the step.
    pub A: f64,
    pub B: f64,
}

#[derive(Clone, Debug)]
pub struct McmcState {
    slots: Vec<Slot>,
    z: Vec<bool>,
    sigma2: f64,
    resid: Vec<f64>,
    scratch_partial: Vec<f64>,
    scratch_mult: Vec<f64>,
    stats: MoveStats,
}

impl PartialEq for McmcState {
    fn eq(&self, other: &Self) -> bool {
        self.slots == other.slots && self.z == other.z && self.sigma2 == other.sigma2 && self.resid == other.resid
    }
}

impl McmcState {
    /// Builds a state from explicit parts; residuals are computed from scratch.
    pub fn from_parts(
        ctx: &SamplerContext<'_>,
        structures: Vec<(TreeStructure, f64)>,
        z: Vec<bool>,
        sigma2: f64,
    ) -> Result<Self> {
        if structures.len() != z.len() {
            return Err(Error::data("one activity flag per slot required"));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::data("sigma2 must be positive"));
        }
        let n = ctx.n();
        let slots = structures
            .into_iter()
            .zip(&z)
            .map(|((structure, beta), &active)| {
                let mut mult = Vec::new();
                if active {
                    mult = vec![0.0; n];
                    structure.fill_multipliers(ctx.train, &mut mult);
                }
                Slot { structure, beta, mult }
            })
            .collect();
        let mut state = McmcState {
            slots,
            z,
            sigma2,
            resid: Vec::new(),
            scratch_partial: vec![0.0; n],
            scratch_mult: vec![0.0; n],
            stats: MoveStats::default(),
        };
        state.resid = state.recompute_resid(ctx);
        Ok(state)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn set_sigma2(&mut self, sigma2: f64) {
        self.sigma2 = sigma2;
    }

    pub fn resid(&self) -> &[f64] {
        &self.resid
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    pub fn active_count(&self) -> usize {
        self.z.iter().filter(|&&b| b).count()
    }

    /// `y - Σ_active β_t a_t(x_i)` with multipliers rebuilt from structure.
    pub fn recompute_resid(&self, ctx: &SamplerContext<'_>) -> Vec<f64> {
        let mut resid = ctx.train.data().y().to_vec();
        let mut mult = vec![0.0; ctx.n()];
        for (slot, _) in self.slots.iter().zip(&self.z).filter(|(_, &a)| a) {
            slot.structure.fill_multipliers(ctx.train, &mut mult);
            for (r, a) in resid.iter_mut().zip(&mult) {
                *r -= slot.beta * a;
            }
        }
        resid
    }

    /// Largest deviation of the cached residuals from a fresh recomputation.
    pub fn audit_drift(&self, ctx: &SamplerContext<'_>) -> f64 {
        self.recompute_resid(ctx)
            .iter()
            .zip(&self.resid)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks the cache, then resets it to the fresh value.
    pub fn audit(&mut self, ctx: &SamplerContext<'_>) -> Result<()> {
        let fresh = self.recompute_resid(ctx);
        let drift = fresh
            .iter()
            .zip(&self.resid)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(drift <= AUDIT_TOLERANCE) {
            return Err(Error::Numeric(format!(
                "residual cache drifted by {drift:e} (tolerance {AUDIT_TOLERANCE:e}) with {} active trees, sigma2 = {}",
                self.active_count(),
                self.sigma2
            )));
        }
        self.resid = fresh;
        Ok(())
    }

    /// Partial residuals `Resid_t` for an active slot, into the scratch buffer.
    fn load_partial(&mut self, t: usize) {
        let slot = &self.slots[t];
        for (i, (p, r)) in self.scratch_partial.iter_mut().zip(&self.resid).enumerate() {
            *p = r + slot.fit(i);
        }
    }

    /// Metropolis-Hastings on `(S_t, s_t)` against fixed partial residuals
    /// `partial`, with `β_t` integrated out. Leaves `β_t` untouched.
    pub fn structure_step<R: Rng + ?Sized>(
        rng: &mut R,
        ctx: &SamplerContext<'_>,
        slot: &mut Slot,
        partial: &[f64],
        sigma2: f64,
        scratch: &mut Vec<f64>,
        stats: &mut MoveStats,
    ) -> Result<StructureStep> {
        let sb2 = ctx.h.sigma_beta2;
        let (a_cur, b_cur) = marginal_AB(partial, &slot.mult, sigma2, sb2);
        let proposal = propose_move(rng, &slot.structure, ctx);
        let k = proposal.kind.index();
        stats.proposed[k] += 1;
        let Some(next) = proposal.structure else {
            stats.infeasible[k] += 1;
            return Ok(StructureStep {
                kind: proposal.kind,
                accepted: false,
                A: a_cur,
                B: b_cur,
            });
        };
        scratch.resize(partial.len(), 0.0);
        next.fill_multipliers(ctx.train, scratch);
        let (a_new, b_new) = marginal_AB(partial, scratch, sigma2, sb2);
        let accepted = mh_accept_tree(
            rng,
            (a_cur, b_cur, 0.0),
            (a_new, b_new, proposal.log_prior_ratio),
            proposal.log_q_reverse - proposal.log_q_forward,
        )?;
        if accepted {
            stats.accepted[k] += 1;
            slot.structure = next;
            std::mem::swap(&mut slot.mult, scratch);
            Ok(StructureStep {
                kind: proposal.kind,
                accepted,
                A: a_new,
                B: b_new,
            })
        } else {
            Ok(StructureStep {
                kind: proposal.kind,
                accepted,
                A: a_cur,
                B: b_cur,
            })
        }
    }

    /// Full update of active slot `t`: structure step, then `β_t` draw, then
    /// residual refresh.
    pub fn update_tree<R: Rng + ?Sized>(&mut self, rng: &mut R, ctx: &SamplerContext<'_>, t: usize) -> Result<()> {
        debug_assert!(self.z[t]);
        self.load_partial(t);
        let step = Self::structure_step(
            rng,
            ctx,
            &mut self.slots[t],
            &self.scratch_partial,
            self.sigma2,
            &mut self.scratch_mult,
            &mut self.stats,
        )?;
        let beta = gibbs_beta(rng, step.A, step.B);
        let slot = &mut self.slots[t];
        slot.beta = beta;
        for ((r, p), a) in self.resid.iter_mut().zip(&self.scratch_partial).zip(&slot.mult) {
            *r = p - beta * a;
        }
        Ok(())
    }

    /// Draws `β_t` for active slot `t` holding its structure fixed.
    pub fn update_beta<R: Rng + ?Sized>(&mut self, rng: &mut R, ctx: &SamplerContext<'_>, t: usize) {
        self.load_partial(t);
        let slot = &mut self.slots[t];
        let (a, b) = marginal_AB(&self.scratch_partial, &slot.mult, self.sigma2, ctx.h.sigma_beta2);
        slot.beta = gibbs_beta(rng, a, b);
        for ((r, p), m) in self.resid.iter_mut().zip(&self.scratch_partial).zip(&slot.mult) {
            *r = p - slot.beta * m;
        }
    }

    /// Proposes flipping a uniformly chosen slot; activation first redraws
    /// the dormant slot from the prior.
    pub fn mh_flip_z<R: Rng + ?Sized>(&mut self, rng: &mut R, ctx: &SamplerContext<'_>) -> Result<bool> {
        let t_max = self.z.len();
        let k = rng.random_range(0..t_max);
        self.flip_slot(rng, ctx, k)
    }

    pub fn flip_slot<R: Rng + ?Sized>(&mut self, rng: &mut R, ctx: &SamplerContext<'_>, k: usize) -> Result<bool> {
        self.stats.z_proposed += 1;
        let t_max = self.z.len();
        let t_old = self.active_count();
        let activating = !self.z[k];
        if activating {
            let structure = ctx.draw_structure(rng);
            let beta = prior::sample_beta(rng, ctx.h);
            let slot = &mut self.slots[k];
            slot.structure = structure;
            slot.beta = beta;
            slot.mult.resize(ctx.n(), 0.0);
            slot.structure.fill_multipliers(ctx.train, &mut slot.mult);
        }
        let slot = &self.slots[k];
        // change in residual sum of squares when the slot's fit is removed
        // (deactivation) or subtracted (activation)
        let sign = if activating { -1.0 } else { 1.0 };
        let mut delta_rss = 0.0;
        for (i, r) in self.resid.iter().enumerate() {
            let f = slot.fit(i);
            delta_rss += 2.0 * sign * r * f + f * f;
        }
        let t_new = if activating { t_old + 1 } else { t_old - 1 };
        let log_r = -delta_rss / (2.0 * self.sigma2) + z_log_prior_ratio(t_old, t_new, t_max, ctx.h.c_star, ctx.n());
        if log_r.is_nan() {
            return Err(Error::Numeric(format!("NaN activity acceptance ratio at slot {k}")));
        }
        let accept = log_r >= 0.0 || rng.random::<f64>().ln() < log_r;
        if accept {
            self.stats.z_accepted += 1;
            let slot = &self.slots[k];
            for (i, r) in self.resid.iter_mut().enumerate() {
                *r += sign * slot.fit(i);
            }
            self.z[k] = activating;
            if !activating {
                self.slots[k].mult.clear();
            }
        } else if activating {
            self.slots[k].mult.clear();
        }
        Ok(accept)
    }

    pub fn update_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R, ctx: &SamplerContext<'_>) {
        self.sigma2 = gibbs_sigma2(rng, &self.resid, ctx.h.v, ctx.lambda);
    }

    /// Active slots as standalone trees.
    pub fn active_trees(&self, ctx: &SamplerContext<'_>) -> Vec<IdentifiableTree> {
        self.slots
            .iter()
            .zip(&self.z)
            .filter(|(_, &a)| a)
            .map(|(s, _)| IdentifiableTree::new(s.structure.clone(), s.beta, ctx.train.marginals()))
            .collect()
    }

    /// Upper bound on `sup |f|`: `Σ_active |β_t| max_v |a_{t,v}|`.
    pub fn sup_norm_bound(&self, ctx: &SamplerContext<'_>) -> f64 {
        self.active_trees(ctx)
            .iter()
            .map(|t| t.beta().abs() * t.max_abs_multiplier())
            .sum()
    }
}

/// Draws every slot from the prior, then `T`, `z` and `σ²`.
pub fn init_state<R: Rng + ?Sized>(rng: &mut R, ctx: &SamplerContext<'_>) -> Result<McmcState> {
    let t_max = ctx.h.t_max;
    let t = prior::sample_t(rng, ctx.n(), ctx.h);
    let z = prior::sample_z_given_T(rng, t, t_max)?;
    let structures = (0..t_max)
        .map(|_| {
            let s = ctx.draw_structure(rng);
            (s, prior::sample_beta(rng, ctx.h))
        })
        .collect();
    let sigma2 = prior::sample_sigma2(rng, ctx.h)?;
    McmcState::from_parts(ctx, structures, z, sigma2)
}

/// One pass of the sampler. `iteration` is zero-based and drives the audit
/// schedule.
pub fn sweep<R: Rng + ?Sized>(
    rng: &mut R,
    state: &mut McmcState,
    ctx: &SamplerContext<'_>,
    iteration: usize,
    audit_every: usize,
) -> Result<()> {
    for t in 0..state.z.len() {
        if state.z[t] {
            state.update_tree(rng, ctx, t)?;
        }
    }
    state.mh_flip_z(rng, ctx)?;
    state.update_sigma2(rng, ctx);
    if !state.sigma2.is_finite() || state.sigma2 <= 0.0 {
        return Err(Error::Numeric(format!("invalid sigma2 draw {}", state.sigma2)));
    }
    if audit_every > 0 && (iteration + 1) % audit_every == 0 {
        state.audit(ctx)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub stream: u64,
    pub iteration: usize,
    pub active_trees: usize,
    pub sigma2: f64,
    pub stats: MoveStats,
}

impl ProgressReport {
    pub fn line(&self) -> String {
        format!(
            "chain {} iter {:>6}  T={:<4} sigma2={:.4}  accept grow={:.3} prune={:.3} change={:.3} z={:.3}",
            self.stream,
            self.iteration,
            self.active_trees,
            self.sigma2,
            self.stats.acceptance_rate(MoveKind::Grow),
            self.stats.acceptance_rate(MoveKind::Prune),
            self.stats.acceptance_rate(MoveKind::Change),
            self.stats.z_acceptance_rate()
        )
    }
}

pub enum ChainEvent<'a> {
    Progress(&'a ProgressReport),
    Draw(&'a Draw),
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub retained: usize,
    pub skipped: usize,
    pub stats: MoveStats,
}

pub fn run_chain(train: &TrainingSet, h: &Hyperparams, cfg: &ChainConfig) -> Result<ChainOutput> {
    run_chain_observed(train, h, cfg, &mut |_| Ok(()))
}

/// Runs the chain, recording every `thin`-th post-burn-in state. With
/// truncation enabled, states with `sup |f| > ξ` (bounded as in
/// [`McmcState::sup_norm_bound`]) or `σ² ∉ [1/ξ, ξ]` are not recorded.
pub fn run_chain_observed(
    train: &TrainingSet,
    h: &Hyperparams,
    cfg: &ChainConfig,
    observer: &mut dyn FnMut(ChainEvent<'_>) -> Result<()>,
) -> Result<ChainOutput> {
    let bad = cfg.problems();
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let ctx = SamplerContext::new(train, h)?;
    let mut rng = chain_rng(cfg.seed, cfg.stream);
    let mut state = init_state(&mut rng, &ctx)?;
    let xi = if cfg.truncation_enabled { h.truncation() } else { None };
    let mut draws = Vec::with_capacity(cfg.recorded());
    let mut skipped = 0;
    for it in 0..cfg.n_iter {
        sweep(&mut rng, &mut state, &ctx, it, cfg.audit_every)?;
        if cfg.progress_every > 0 && (it + 1) % cfg.progress_every == 0 {
            observer(ChainEvent::Progress(&ProgressReport {
                stream: cfg.stream,
                iteration: it + 1,
                active_trees: state.active_count(),
                sigma2: state.sigma2,
                stats: state.stats,
            }))?;
        }
        if it < cfg.burn_in || (it - cfg.burn_in) % cfg.thin != 0 {
            continue;
        }
        if let Some(xi) = xi {
            let s2 = state.sigma2;
            if state.sup_norm_bound(&ctx) > xi || s2 < 1.0 / xi || s2 > xi {
                skipped += 1;
                continue;
            }
        }
        let draw = Draw {
            iteration: it,
            sigma2: state.sigma2,
            trees: state.active_trees(&ctx),
        };
        observer(ChainEvent::Draw(&draw))?;
        draws.push(draw);
    }
    if draws.is_empty() {
        return Err(Error::Numeric(format!(
            "no draws retained ({skipped} skipped by truncation); increase xi or disable truncation"
        )));
    }
    Ok(ChainOutput {
        retained: draws.len(),
        skipped,
        draws,
        stats: state.stats,
    })
}
