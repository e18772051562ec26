//! Attribute-compound frequency distributions, the Chernoff coefficient and
//! the attribute compound divergence `D = 1 - S(P_id, P_comp)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, Combination, CombinationSet};

/// Default Chernoff exponent (the Bhattacharyya coefficient).
pub const DEFAULT_ALPHA: f64 = 0.5;

/// An unordered pair of attribute values from two distinct aspects, stored
/// with `aspect_i < aspect_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompoundKey {
    aspect_i: usize,
    value_i: usize,
    aspect_j: usize,
    value_j: usize,
}

impl CompoundKey {
    /// Canonicalizes the order of the two `(aspect, value)` pairs.
    pub fn new(a: (usize, usize), b: (usize, usize)) -> Result<Self> {
        if a.0 == b.0 {
            return Err(Error::InvalidArgument(format!(
                "compound needs two distinct aspects, got aspect {} twice",
                a.0
            )));
        }
        let (lo, hi) = if a.0 < b.0 { (a, b) } else { (b, a) };
        Ok(Self {
            aspect_i: lo.0,
            value_i: lo.1,
            aspect_j: hi.0,
            value_j: hi.1,
        })
    }

    pub fn first(&self) -> (usize, usize) {
        (self.aspect_i, self.value_i)
    }

    pub fn second(&self) -> (usize, usize) {
        (self.aspect_j, self.value_j)
    }
}

/// Compounds of a single combination, one per aspect pair.
pub fn compounds_of(combo: &Combination) -> impl Iterator<Item = CompoundKey> + '_ {
    let v = combo.values();
    (0..v.len()).flat_map(move |i| {
        (i + 1..v.len()).map(move |j| CompoundKey {
            aspect_i: i,
            value_i: v[i],
            aspect_j: j,
            value_j: v[j],
        })
    })
}

/// Sparse normalized frequency over attribute compounds. Zero weights are
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundDistribution {
    schema: Arc<AttributeSchema>,
    weights: BTreeMap<CompoundKey, f64>,
}

impl CompoundDistribution {
    pub fn schema(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn weight(&self, key: &CompoundKey) -> f64 {
        self.weights.get(key).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = (&CompoundKey, f64)> + '_ {
        self.weights.iter().map(|(k, &w)| (k, w))
    }

    pub fn support_len(&self) -> usize {
        self.weights.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Frequency density of every attribute compound in `set`:
/// `f(key) = 2 * count(key) / (m (m - 1) |set|)`.
pub fn compound_frequency(set: &CombinationSet) -> Result<CompoundDistribution> {
    let m = set.schema().num_aspects();
    if m < 2 {
        return Err(Error::UndefinedDistribution(format!(
            "schema has {m} aspect(s)"
        )));
    }
    if set.is_empty() {
        return Err(Error::UndefinedDistribution("empty combination set".into()));
    }
    let mut counts: BTreeMap<CompoundKey, usize> = BTreeMap::new();
    for combo in set.iter() {
        for key in compounds_of(combo) {
            *counts.entry(key).or_default() += 1;
        }
    }
    let denom = (m * (m - 1) * set.len()) as f64;
    let weights = counts
        .into_iter()
        .map(|(k, c)| (k, 2.0 * c as f64 / denom))
        .collect();
    Ok(CompoundDistribution {
        schema: set.schema().clone(),
        weights,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Chernoff term `p^alpha q^(1-alpha)`; zero whenever either side is zero,
/// including the boundary exponents.
#[inline]
pub(crate) fn chernoff_term(p: f64, q: f64, alpha: f64) -> f64 {
    if p > 0.0 && q > 0.0 {
        p.powf(alpha) * q.powf(1.0 - alpha)
    } else {
        0.0
    }
}

/// `S(P, Q) = sum_k p_k^alpha q_k^(1-alpha)`, clamped to `[0, 1]`.
pub fn chernoff_similarity(
    p: &CompoundDistribution,
    q: &CompoundDistribution,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if !(Arc::ptr_eq(&p.schema, &q.schema) || p.schema == q.schema) {
        return Err(Error::SchemaMismatch(format!(
            "distributions over shapes {:?} and {:?}",
            p.schema.shape(),
            q.schema.shape()
        )));
    }
    // only keys in both supports contribute
    let (small, large, swapped) = if p.weights.len() <= q.weights.len() {
        (&p.weights, &q.weights, false)
    } else {
        (&q.weights, &p.weights, true)
    };
    let mut s = 0.0;
    for (key, &a) in small {
        if let Some(&b) = large.get(key) {
            let (pk, qk) = if swapped { (b, a) } else { (a, b) };
            s += chernoff_term(pk, qk, alpha);
        }
    }
    Ok(s.clamp(0.0, 1.0))
}

/// Attribute compound divergence between an in-distribution and a
/// compositional combination set.
pub fn compound_divergence(
    id_set: &CombinationSet,
    comp_set: &CombinationSet,
    alpha: f64,
) -> Result<f64> {
    id_set.check_schema(comp_set)?;
    let p = compound_frequency(id_set)?;
    let q = compound_frequency(comp_set)?;
    Ok(1.0 - chernoff_similarity(&p, &q, alpha)?)
}

/// Dense compound index: every `(i < j, t_i, t_j)` maps to one slot.
#[derive(Debug, Clone)]
pub(crate) struct CompoundIndex {
    // base[i][j] for i < j, flattened as i * m + j
    base: Vec<usize>,
    shape: Vec<usize>,
    len: usize,
}

impl CompoundIndex {
    pub(crate) fn new(schema: &AttributeSchema) -> Self {
        let shape = schema.shape();
        let m = shape.len();
        let mut base = vec![0; m * m];
        let mut len = 0;
        for i in 0..m {
            for j in i + 1..m {
                base[i * m + j] = len;
                len += shape[i] * shape[j];
            }
        }
        Self { base, shape, len }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn keys_of<'a>(
        &'a self,
        combo: &'a Combination,
    ) -> impl Iterator<Item = usize> + 'a {
        let v = combo.values();
        let m = self.shape.len();
        (0..m).flat_map(move |i| {
            (i + 1..m).map(move |j| self.base[i * m + j] + v[i] * self.shape[j] + v[j])
        })
    }
}

/// Mutable id/comp partition with compound counts, supporting O(m^2)
/// evaluation of single moves and swaps. Used by the split searches.
#[derive(Debug, Clone)]
pub(crate) struct PartitionState {
    index: CompoundIndex,
    alpha: f64,
    pairs: f64,
    id_counts: Vec<u32>,
    comp_counts: Vec<u32>,
    n_id: usize,
    n_comp: usize,
    // per flat attribute value: number of id members carrying it
    id_attr: Vec<u32>,
    offsets: Vec<usize>,
    scratch: Vec<usize>,
}

impl PartitionState {
    pub(crate) fn new<'a>(
        schema: &AttributeSchema,
        id: impl IntoIterator<Item = &'a Combination>,
        comp: impl IntoIterator<Item = &'a Combination>,
        alpha: f64,
    ) -> Self {
        let index = CompoundIndex::new(schema);
        let m = schema.num_aspects();
        let offsets = (0..m).map(|i| schema.flat_index(i, 0)).collect();
        let mut state = Self {
            id_counts: vec![0; index.len()],
            comp_counts: vec![0; index.len()],
            index,
            alpha,
            pairs: (m * (m - 1) / 2) as f64,
            n_id: 0,
            n_comp: 0,
            id_attr: vec![0; schema.total_values()],
            offsets,
            scratch: Vec::new(),
        };
        for c in id {
            state.add(c, true);
        }
        for c in comp {
            state.add(c, false);
        }
        state
    }

    fn add(&mut self, combo: &Combination, to_id: bool) {
        let counts = if to_id {
            &mut self.id_counts
        } else {
            &mut self.comp_counts
        };
        for k in self.index.keys_of(combo) {
            counts[k] += 1;
        }
        if to_id {
            self.n_id += 1;
            for (i, &t) in combo.values().iter().enumerate() {
                self.id_attr[self.offsets[i] + t] += 1;
            }
        } else {
            self.n_comp += 1;
        }
    }

    fn remove(&mut self, combo: &Combination, from_id: bool) {
        let counts = if from_id {
            &mut self.id_counts
        } else {
            &mut self.comp_counts
        };
        for k in self.index.keys_of(combo) {
            counts[k] -= 1;
        }
        if from_id {
            self.n_id -= 1;
            for (i, &t) in combo.values().iter().enumerate() {
                self.id_attr[self.offsets[i] + t] -= 1;
            }
        } else {
            self.n_comp -= 1;
        }
    }

    /// Moves `combo` from id to comp (`to_comp = true`) or back.
    pub(crate) fn apply(&mut self, combo: &Combination, to_comp: bool) {
        self.remove(combo, to_comp);
        self.add(combo, !to_comp);
    }

    fn similarity_from_raw(&self, raw: f64) -> f64 {
        if self.n_id == 0 || self.n_comp == 0 {
            return 0.0;
        }
        let zp = self.pairs * self.n_id as f64;
        let zq = self.pairs * self.n_comp as f64;
        let norm = zp.powf(self.alpha) * zq.powf(1.0 - self.alpha);
        (raw / norm).clamp(0.0, 1.0)
    }

    fn raw_over(&self, keys: &[usize]) -> f64 {
        keys.iter()
            .map(|&k| {
                chernoff_term(
                    self.id_counts[k] as f64,
                    self.comp_counts[k] as f64,
                    self.alpha,
                )
            })
            .sum()
    }

    /// Current divergence, computed from scratch over the dense index.
    pub(crate) fn divergence(&self) -> f64 {
        1.0 - self.similarity_from_raw(self.raw())
    }

    /// Divergence after applying `moves` (each `(combo, to_comp)`); the state
    /// is left unchanged.
    pub(crate) fn divergence_after(
        &mut self,
        base_raw: f64,
        moves: &[(&Combination, bool)],
    ) -> f64 {
        let mut keys = std::mem::take(&mut self.scratch);
        keys.clear();
        for (c, _) in moves {
            keys.extend(self.index.keys_of(c));
        }
        keys.sort_unstable();
        keys.dedup();
        let before = self.raw_over(&keys);
        for &(c, to_comp) in moves {
            self.apply(c, to_comp);
        }
        let after = self.raw_over(&keys);
        let d = 1.0 - self.similarity_from_raw(base_raw - before + after);
        for &(c, to_comp) in moves.iter().rev() {
            self.apply(c, !to_comp);
        }
        self.scratch = keys;
        d
    }

    /// Unnormalized `sum_k id_k^alpha comp_k^(1-alpha)` over all keys.
    pub(crate) fn raw(&self) -> f64 {
        (0..self.index.len())
            .map(|k| {
                chernoff_term(
                    self.id_counts[k] as f64,
                    self.comp_counts[k] as f64,
                    self.alpha,
                )
            })
            .sum()
    }

    /// True when every attribute value of `combo` is still carried by at least
    /// one id member.
    pub(crate) fn id_covers(&self, combo: &Combination) -> bool {
        combo
            .values()
            .iter()
            .enumerate()
            .all(|(i, &t)| self.id_attr[self.offsets[i] + t] > 0)
    }
}
