//! Identifiable binary-product trees.
//!
//! A tree over the variable set `S` splits every `j ∈ S` once, giving `2^|S|`
//! cells. Cell heights are not free: they must integrate to zero along each
//! axis under the empirical marginals, which leaves a single free height
//! `beta` on the all-left cell. Every other cell height is `beta` times the
//! product of the per-variable leverages `a_j = -left_mass / right_mass` over
//! the variables on whose right side the cell lies.
//!
//! Cells are addressed by bitmask: bit `b` is set when the point is right of
//! the split on the `b`-th variable of `S` (ascending column order).

use serde::{Deserialize, Serialize};

use crate::dataset::{DataMatrix, EmpiricalMarginals, LeftMass, TrainingSet};
use crate::error::{Error, Result};

/// Largest component that gets a materialized height table.
pub const MAX_TABLE_BITS: usize = 24;

/// Largest component the sampler will grow to; cell masks are `u64`.
pub const MAX_COMPONENT_SIZE: usize = 64;

/// Sorted, non-empty set of column indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ComponentIndex(Vec<usize>);

impl ComponentIndex {
    pub fn new(mut vars: Vec<usize>) -> Result<Self> {
        vars.sort_unstable();
        if vars.is_empty() {
            return Err(Error::data("component must contain at least one variable"));
        }
        if vars.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data("component has repeated variables"));
        }
        if vars.len() > MAX_COMPONENT_SIZE {
            return Err(Error::data("component too large"));
        }
        Ok(ComponentIndex(vars))
    }

    pub fn vars(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn position(&self, j: usize) -> Option<usize> {
        self.0.binary_search(&j).ok()
    }

    /// One-based label such as `{1,2}`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|j| (j + 1).to_string()).collect();
        format!("{{{}}}", parts.join(","))
    }
}

impl TryFrom<Vec<usize>> for ComponentIndex {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        ComponentIndex::new(v)
    }
}

impl From<ComponentIndex> for Vec<usize> {
    fn from(c: ComponentIndex) -> Self {
        c.0
    }
}

/// `(S, s)` with splits addressed by their index into the column's grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeStructure {
    component: ComponentIndex,
    split_idx: Vec<u32>,
}

impl TreeStructure {
    pub fn new(component: ComponentIndex, split_idx: Vec<u32>) -> Result<Self> {
        if component.len() != split_idx.len() {
            return Err(Error::data("one split per variable required"));
        }
        Ok(TreeStructure {
            component,
            split_idx,
        })
    }

    /// Builds from unsorted `(column, split index)` pairs.
    pub fn from_pairs(mut pairs: Vec<(usize, u32)>) -> Result<Self> {
        pairs.sort_unstable();
        let (vars, idx) = pairs.into_iter().unzip();
        Self::new(ComponentIndex::new(vars)?, idx)
    }

    pub fn component(&self) -> &ComponentIndex {
        &self.component
    }

    pub fn split_idx(&self) -> &[u32] {
        &self.split_idx
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.component.vars().iter().copied().zip(self.split_idx.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.component.len()
    }

    pub fn is_empty(&self) -> bool {
        self.component.is_empty()
    }

    pub fn leverages(&self, m: &EmpiricalMarginals) -> Vec<f64> {
        self.pairs().map(|(j, k)| leverage_at(m, j, k as usize)).collect()
    }

    /// Fills `out` with the cell multiplier of every training row.
    pub fn fill_multipliers(&self, train: &TrainingSet, out: &mut [f64]) {
        out.fill(1.0);
        for (j, k) in self.pairs() {
            let a = leverage_at(train.marginals(), j, k as usize);
            for (o, &c) in out.iter_mut().zip(train.codes(j)) {
                if c > k {
                    *o *= a;
                }
            }
        }
    }
}

fn leverage_from(mass: LeftMass) -> f64 {
    -f64::from(mass.count) / f64::from(mass.right_count())
}

pub(crate) fn leverage_at(m: &EmpiricalMarginals, j: usize, split_idx: usize) -> f64 {
    leverage_from(m.left_mass_at(j, split_idx))
}

/// `a_j = -μ{X_j <= s_j} / μ{X_j > s_j}` for a grid value `s_j`.
pub fn leverage(j: usize, s_j: f64, m: &EmpiricalMarginals) -> Result<f64> {
    Ok(leverage_from(crate::dataset::left_mass(m, j, s_j)?))
}

/// Multiplier table indexed by cell mask; entry 0 (all-left) is 1.
pub fn height_multipliers(component: &ComponentIndex, splits: &[f64], m: &EmpiricalMarginals) -> Result<Vec<f64>> {
    if splits.len() != component.len() {
        return Err(Error::data("one split per variable required"));
    }
    if component.len() > MAX_TABLE_BITS {
        return Err(Error::data("component too large for a height table"));
    }
    let levs = component
        .vars()
        .iter()
        .zip(splits)
        .map(|(&j, &s)| leverage(j, s, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(multiplier_table(&levs))
}

fn multiplier_table(levs: &[f64]) -> Vec<f64> {
    let mut table = vec![1.0; 1 << levs.len()];
    for (mask, slot) in table.iter_mut().enumerate() {
        *slot = product_for_mask(levs, mask as u64);
    }
    table
}

fn product_for_mask(levs: &[f64], mask: u64) -> f64 {
    let mut v = 1.0;
    for (b, a) in levs.iter().enumerate() {
        if mask >> b & 1 == 1 {
            v *= a;
        }
    }
    v
}

/// Serialized form: heights are re-derived from the training marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    #[serde(rename = "S")]
    pub vars: Vec<usize>,
    #[serde(rename = "s")]
    pub splits: Vec<f64>,
    pub beta: f64,
}

/// A fully parameterized tree `T(x; S, s, beta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiableTree {
    structure: TreeStructure,
    splits: Vec<f64>,
    leverages: Vec<f64>,
    beta: f64,
}

impl IdentifiableTree {
    pub fn new(structure: TreeStructure, beta: f64, m: &EmpiricalMarginals) -> Self {
        let splits = structure
            .pairs()
            .map(|(j, k)| m.grid().candidates(j)[k as usize])
            .collect();
        let leverages = structure.leverages(m);
        IdentifiableTree {
            structure,
            splits,
            leverages,
            beta,
        }
    }

    /// Builds from split values, which must be grid candidates.
    pub fn from_values(component: ComponentIndex, splits: &[f64], beta: f64, m: &EmpiricalMarginals) -> Result<Self> {
        if splits.len() != component.len() {
            return Err(Error::data("one split per variable required"));
        }
        let mut idx = Vec::with_capacity(splits.len());
        for (&j, &s) in component.vars().iter().zip(splits) {
            if j >= m.grid().p() {
                return Err(Error::data(format!("column {j} out of range")));
            }
            let k = m
                .grid()
                .index_of(j, s)
                .ok_or_else(|| Error::data(format!("split {s} is not a candidate for column {j}")))?;
            idx.push(k as u32);
        }
        Ok(Self::new(TreeStructure::new(component, idx)?, beta, m))
    }

    pub fn from_record(rec: &TreeRecord, m: &EmpiricalMarginals) -> Result<Self> {
        Self::from_values(ComponentIndex::new(rec.vars.clone())?, &rec.splits, rec.beta, m)
    }

    pub fn to_record(&self) -> TreeRecord {
        TreeRecord {
            vars: self.component().vars().to_vec(),
            splits: self.splits.clone(),
            beta: self.beta,
        }
    }

    pub fn structure(&self) -> &TreeStructure {
        &self.structure
    }

    pub fn component(&self) -> &ComponentIndex {
        self.structure.component()
    }

    pub fn splits(&self) -> &[f64] {
        &self.splits
    }

    pub fn leverages(&self) -> &[f64] {
        &self.leverages
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    /// Bit `b` set iff `x[S_b] - s_b > 0`; a point on the split goes left.
    pub fn cell_mask(&self, x: &[f64]) -> u64 {
        let mut mask = 0u64;
        for (b, (&j, &s)) in self.component().vars().iter().zip(&self.splits).enumerate() {
            if x[j] - s > 0.0 {
                mask |= 1 << b;
            }
        }
        mask
    }

    pub fn multiplier(&self, mask: u64) -> f64 {
        product_for_mask(&self.leverages, mask)
    }

    /// `max_v |a_v|`.
    pub fn max_abs_multiplier(&self) -> f64 {
        self.leverages.iter().map(|a| a.abs().max(1.0)).product()
    }

    pub fn heights(&self) -> Result<Vec<f64>> {
        if self.structure.len() > MAX_TABLE_BITS {
            return Err(Error::data("component too large for a height table"));
        }
        Ok(multiplier_table(&self.leverages).into_iter().map(|a| self.beta * a).collect())
    }
}

pub fn evaluate(t: &IdentifiableTree, x: &[f64]) -> f64 {
    t.beta * t.multiplier(t.cell_mask(x))
}

/// Per-row cell masks and multipliers for a tree on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct CellAssignment {
    pub masks: Vec<u64>,
    pub multipliers: Vec<f64>,
}

pub fn assign_cells(t: &IdentifiableTree, d: &DataMatrix) -> CellAssignment {
    let mut masks = vec![0u64; d.n()];
    for (b, (&j, &s)) in t.component().vars().iter().zip(t.splits()).enumerate() {
        for (m, &x) in masks.iter_mut().zip(d.column(j)) {
            if x - s > 0.0 {
                *m |= 1 << b;
            }
        }
    }
    let multipliers = masks.iter().map(|&m| t.multiplier(m)).collect();
    CellAssignment { masks, multipliers }
}

/// Largest violation of the zero-integral condition along any axis for an
/// explicit height table (indexed by cell mask) and per-axis left masses.
pub fn axis_residual(heights: &[f64], masses: &[LeftMass]) -> f64 {
    let d = masses.len();
    assert_eq!(heights.len(), 1 << d);
    let mut worst: f64 = 0.0;
    for (b, mass) in masses.iter().enumerate() {
        let left = mass.value();
        let right = f64::from(mass.right_count()) / f64::from(mass.n);
        for mask in 0..heights.len() {
            if mask >> b & 1 == 0 {
                let r = left * heights[mask] + right * heights[mask | 1 << b];
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// Identifiability violation of `t`, normalized by `|beta|` when nonzero.
pub fn identifiability_residual(t: &IdentifiableTree, m: &EmpiricalMarginals) -> Result<f64> {
    let masses: Vec<LeftMass> = t.structure.pairs().map(|(j, k)| m.left_mass_at(j, k as usize)).collect();
    let r = axis_residual(&t.heights()?, &masses);
    Ok(if t.beta != 0.0 { r / t.beta.abs() } else { r })
}
