//! Split construction under every protocol.
//!
//! * Hold-Out: every eligible `k`-subset held out as the compositional set.
//! * Few-Shot: minimal covers of all attribute values, keeping the ones with
//!   the largest compound divergence.
//! * ACD: random-restart hill climbing on the compound divergence over
//!   balanced eligible splits. The same search with the objective flipped
//!   gives the minimum-divergence baseline.
//! * Random: uniformly sampled balanced eligible splits.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{compound_divergence, PartitionState, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::schema::{
    covered_attributes, is_eligible_split, AttributeSchema, Combination, CombinationSet, Protocol,
    Split,
};

/// Strict-improvement margin for the hill climbers.
const IMPROVEMENT_EPS: f64 = 1e-12;
/// Divergences within this distance of the optimum count as ties.
const TIE_EPS: f64 = 1e-12;
/// Uniform draws attempted before falling back to cover-and-fill
/// initialization of an ACD restart.
const INIT_REJECTION_ATTEMPTS: usize = 1_000;
/// Draw budget per requested sample in [`random_splits`].
pub const RANDOM_REJECTION_BUDGET: usize = 100_000;
/// Few-Shot covers are enumerated exhaustively up to this many candidates.
pub const FEWSHOT_ENUMERATION_BUDGET: usize = 200_000;
/// Environment variable capping restart parallelism.
pub const THREADS_ENV: &str = "COMPSPLIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Maximize,
    Minimize,
}

/// Parameters of the random-restart hill climber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcdSearchConfig {
    /// Number of random restarts.
    pub t1_restarts: usize,
    /// Maximum improvement passes per restart.
    pub t2_steps: usize,
    /// Splits are kept when their divergence reaches this threshold
    /// (for [`Objective::Minimize`]: when `1 - D` reaches it).
    pub eta_threshold: f64,
    pub alpha: f64,
    pub rng_seed: u64,
    pub objective: Objective,
}

impl Default for AcdSearchConfig {
    fn default() -> Self {
        Self {
            t1_restarts: 100,
            t2_steps: 50,
            eta_threshold: 0.5,
            alpha: DEFAULT_ALPHA,
            rng_seed: 0,
            objective: Objective::Maximize,
        }
    }
}

impl AcdSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t1_restarts == 0 {
            return Err(Error::InvalidArgument("t1_restarts must be >= 1".into()));
        }
        if self.t2_steps == 0 {
            return Err(Error::InvalidArgument("t2_steps must be >= 1".into()));
        }
        if !(self.eta_threshold > 0.0 && self.eta_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must lie in (0, 1), got {}",
                self.eta_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn score(&self, d: f64) -> f64 {
        match self.objective {
            Objective::Maximize => d,
            Objective::Minimize => -d,
        }
    }

    fn passes_threshold(&self, d: f64) -> bool {
        match self.objective {
            Objective::Maximize => d >= self.eta_threshold,
            Objective::Minimize => 1.0 - d >= self.eta_threshold,
        }
    }
}

/// Parameters recorded alongside a bundle; absent fields did not apply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl BundleConfig {
    fn from_search(config: &AcdSearchConfig) -> Self {
        Self {
            alpha: config.alpha,
            eta: Some(config.eta_threshold),
            t1: Some(config.t1_restarts),
            t2: Some(config.t2_steps),
            seed: Some(config.rng_seed),
            ..Default::default()
        }
    }
}

/// The splits produced by one protocol run.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub protocol: Protocol,
    pub schema: Arc<AttributeSchema>,
    pub config: BundleConfig,
    pub splits: Vec<Split>,
    /// Set when a search ends without splits, explaining why.
    pub diagnostic: Option<String>,
}

impl SplitBundle {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn best_divergence(&self) -> Option<f64> {
        self.splits
            .iter()
            .filter_map(|s| s.divergence)
            .reduce(f64::max)
    }

    pub fn mean_divergence(&self) -> Option<f64> {
        let ds: Vec<f64> = self.splits.iter().filter_map(|s| s.divergence).collect();
        if ds.is_empty() {
            None
        } else {
            Some(ds.iter().sum::<f64>() / ds.len() as f64)
        }
    }
}

fn require_full_product(full: &CombinationSet) -> Result<()> {
    if full.len() != full.schema().product_size() {
        return Err(Error::InvalidArgument(format!(
            "expected the full product of {} combinations, got {}",
            full.schema().product_size(),
            full.len()
        )));
    }
    Ok(())
}

fn make_split(
    full: &CombinationSet,
    protocol: Protocol,
    id: BTreeSet<Combination>,
    comp: BTreeSet<Combination>,
    alpha: f64,
    seed: u64,
) -> Result<Split> {
    let schema = full.schema().clone();
    let id_set = CombinationSet::from_trusted(schema.clone(), id);
    let comp_set = CombinationSet::from_trusted(schema, comp);
    let divergence = compound_divergence(&id_set, &comp_set, alpha)?;
    Ok(Split {
        protocol,
        id_set,
        comp_set,
        divergence: Some(divergence),
        seed,
    })
}

/// One split per eligible `k`-subset of `full` held out as the compositional
/// set, in lexicographic order of the held-out subset.
pub fn holdout_splits(full: &CombinationSet, k: usize, alpha: f64) -> Result<SplitBundle> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "k = 0 holds nothing out; use the Original protocol".into(),
        ));
    }
    if k >= full.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be smaller than |C| = {}",
            full.len()
        )));
    }
    let members: Vec<&Combination> = full.iter().collect();
    let mut splits = Vec::new();
    for held in members.iter().copied().combinations(k) {
        let comp: BTreeSet<Combination> = held.into_iter().cloned().collect();
        let id: BTreeSet<Combination> = full.members().difference(&comp).cloned().collect();
        let split = make_split(full, Protocol::HoldOut, id, comp, alpha, 0)?;
        if is_eligible_split(full, &split.id_set, &split.comp_set)?.is_eligible() {
            splits.push(split);
        }
    }
    if splits.is_empty() {
        return Err(Error::NoEligibleSplit(format!(
            "no eligible hold-out subset of size {k}"
        )));
    }
    Ok(SplitBundle {
        protocol: Protocol::HoldOut,
        schema: full.schema().clone(),
        config: BundleConfig {
            alpha,
            k: Some(k),
            ..Default::default()
        },
        splits,
        diagnostic: None,
    })
}

fn anchor_aspect(schema: &AttributeSchema) -> usize {
    let shape = schema.shape();
    // first aspect of maximal arity
    let max = *shape.iter().max().expect("schema has aspects");
    shape.iter().position(|&n| n == max).expect("max exists")
}

/// All surjections `{0..slots} -> {0..values}` as value vectors, in
/// lexicographic order.
fn surjections(slots: usize, values: usize) -> Vec<Vec<usize>> {
    (0..slots)
        .map(|_| 0..values)
        .multi_cartesian_product()
        .filter(|f| f.iter().collect::<HashSet<_>>().len() == values)
        .collect()
}

fn surjection_count(slots: usize, values: usize) -> u128 {
    // inclusion-exclusion: sum_j (-1)^j C(values, j) (values - j)^slots
    let mut total: i128 = 0;
    let mut binom: i128 = 1;
    for j in 0..=values {
        let term = binom * ((values - j) as i128).pow(slots as u32);
        total += if j % 2 == 0 { term } else { -term };
        binom = binom * (values - j) as i128 / (j + 1) as i128;
    }
    total as u128
}

/// Builds the cover whose member for anchor value `s` takes `maps[i][s]` on
/// every other aspect `i`.
fn cover_from_maps(
    anchor: usize,
    arity: usize,
    maps: &[Option<&Vec<usize>>],
) -> BTreeSet<Combination> {
    (0..arity)
        .map(|s| {
            Combination::new(
                maps.iter()
                    .enumerate()
                    .map(|(i, f)| {
                        if i == anchor {
                            s
                        } else {
                            f.expect("non-anchor map")[s]
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Number of minimal attribute covers of the full product.
pub fn minimal_cover_count(schema: &AttributeSchema) -> u128 {
    let anchor = anchor_aspect(schema);
    let big = schema.arity(anchor);
    schema
        .shape()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != anchor)
        .map(|(_, &n)| surjection_count(big, n))
        .product()
}

/// Few-Shot splits: in-distribution sets of exactly `max_i a_i` combinations
/// covering every attribute value, restricted to the covers of maximal
/// compound divergence.
pub fn fewshot_splits(full: &CombinationSet, config: &AcdSearchConfig) -> Result<SplitBundle> {
    config.validate()?;
    require_full_product(full)?;
    let schema = full.schema().clone();
    let count = minimal_cover_count(&schema);
    let candidates: Vec<BTreeSet<Combination>> = if count <= FEWSHOT_ENUMERATION_BUDGET as u128 {
        enumerate_covers(&schema)
    } else {
        log::info!("{count} minimal covers exceed the enumeration budget; hill climbing instead");
        climb_covers(full, config)?
    };

    let scored: Vec<(BTreeSet<Combination>, f64)> = with_pool(|| {
        candidates
            .into_par_iter()
            .map(|id| {
                let comp: BTreeSet<Combination> = full.members().difference(&id).cloned().collect();
                let d = divergence_of(&schema, &id, &comp, config.alpha)?;
                Ok((id, d))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let best = scored
        .iter()
        .map(|(_, d)| *d)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut seen = HashSet::new();
    let mut splits = Vec::new();
    for (id, d) in scored {
        if d >= best - TIE_EPS && seen.insert(id.clone()) {
            let comp = full.members().difference(&id).cloned().collect();
            splits.push(make_split(
                full,
                Protocol::FewShot,
                id,
                comp,
                config.alpha,
                config.rng_seed,
            )?);
        }
    }
    Ok(SplitBundle {
        protocol: Protocol::FewShot,
        schema,
        config: BundleConfig {
            alpha: config.alpha,
            seed: Some(config.rng_seed),
            ..Default::default()
        },
        splits,
        diagnostic: None,
    })
}

fn divergence_of(
    schema: &Arc<AttributeSchema>,
    id: &BTreeSet<Combination>,
    comp: &BTreeSet<Combination>,
    alpha: f64,
) -> Result<f64> {
    compound_divergence(
        &CombinationSet::from_trusted(schema.clone(), id.clone()),
        &CombinationSet::from_trusted(schema.clone(), comp.clone()),
        alpha,
    )
}

fn enumerate_covers(schema: &AttributeSchema) -> Vec<BTreeSet<Combination>> {
    let anchor = anchor_aspect(schema);
    let big = schema.arity(anchor);
    let per_aspect: Vec<Vec<Vec<usize>>> = schema
        .shape()
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if i == anchor {
                vec![Vec::new()]
            } else {
                surjections(big, n)
            }
        })
        .collect();
    per_aspect
        .iter()
        .map(|maps| maps.iter())
        .multi_cartesian_product()
        .map(|choice| {
            let maps: Vec<Option<&Vec<usize>>> = choice
                .into_iter()
                .enumerate()
                .map(|(i, f)| if i == anchor { None } else { Some(f) })
                .collect();
            cover_from_maps(anchor, big, &maps)
        })
        .collect()
}

/// A uniformly random surjection from `slots` onto `values`.
fn random_surjection(slots: usize, values: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut f: Vec<usize> = (0..values)
        .chain((values..slots).map(|_| rng.gen_range(0..values)))
        .collect();
    f.shuffle(rng);
    f
}

fn is_surjective(f: &[usize], values: usize) -> bool {
    f.iter().collect::<HashSet<_>>().len() == values
}

fn climb_covers(
    full: &CombinationSet,
    config: &AcdSearchConfig,
) -> Result<Vec<BTreeSet<Combination>>> {
    let schema = full.schema().clone();
    let anchor = anchor_aspect(&schema);
    let big = schema.arity(anchor);
    let shape = schema.shape();
    with_pool(|| {
        (0..config.t1_restarts)
            .into_par_iter()
            .map(|r| {
                let mut rng = restart_rng(config.rng_seed, r);
                let mut maps: Vec<Vec<usize>> = shape
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        if i == anchor {
                            Vec::new()
                        } else {
                            random_surjection(big, n, &mut rng)
                        }
                    })
                    .collect();
                let eval = |maps: &[Vec<usize>]| -> Result<(BTreeSet<Combination>, f64)> {
                    let refs: Vec<Option<&Vec<usize>>> = maps
                        .iter()
                        .enumerate()
                        .map(|(i, f)| (i != anchor).then_some(f))
                        .collect();
                    let id = cover_from_maps(anchor, big, &refs);
                    let comp: BTreeSet<Combination> =
                        full.members().difference(&id).cloned().collect();
                    let d = divergence_of(&schema, &id, &comp, config.alpha)?;
                    Ok((id, d))
                };
                let (mut id, mut d) = eval(&maps)?;
                for _ in 0..config.t2_steps {
                    let mut improved = false;
                    'pass: for i in (0..shape.len()).filter(|&i| i != anchor) {
                        for s in 0..big {
                            for v in 0..shape[i] {
                                if v == maps[i][s] {
                                    continue;
                                }
                                let old = maps[i][s];
                                maps[i][s] = v;
                                if is_surjective(&maps[i], shape[i]) {
                                    let (cand, dc) = eval(&maps)?;
                                    if config.score(dc) > config.score(d) + IMPROVEMENT_EPS {
                                        id = cand;
                                        d = dc;
                                        improved = true;
                                        break 'pass;
                                    }
                                }
                                maps[i][s] = old;
                            }
                        }
                    }
                    if !improved {
                        break;
                    }
                }
                Ok(id)
            })
            .collect()
    })
}

/// Runs `f` on a pool sized by `COMPSPLIT_THREADS` when set.
fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {n}-thread pool ({e}); using the global pool");
                f()
            }
        },
        _ => f(),
    }
}

/// Per-restart generator: the bundle seed selects the key, the restart index
/// selects an independent stream.
fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Outcome of a single hill-climbing restart.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub id_set: BTreeSet<Combination>,
    pub comp_set: BTreeSet<Combination>,
    pub divergence: f64,
    /// Divergence after initialization and after every accepted swap.
    pub trace: Vec<f64>,
}

fn uniform_balanced(
    members: &[Combination],
    rng: &mut impl Rng,
) -> (BTreeSet<Combination>, BTreeSet<Combination>) {
    let mut shuffled = members.to_vec();
    shuffled.shuffle(rng);
    let half = shuffled.len() / 2;
    let comp = shuffled.split_off(half);
    (shuffled.into_iter().collect(), comp.into_iter().collect())
}

fn id_covers_comp(
    schema: &AttributeSchema,
    id: &BTreeSet<Combination>,
    comp: &BTreeSet<Combination>,
) -> bool {
    let mut seen = vec![false; schema.total_values()];
    for c in id {
        for (i, &t) in c.values().iter().enumerate() {
            seen[schema.flat_index(i, t)] = true;
        }
    }
    comp.iter().all(|c| {
        c.values()
            .iter()
            .enumerate()
            .all(|(i, &t)| seen[schema.flat_index(i, t)])
    })
}

/// Random minimal cover extended with random members up to half of `full`.
fn cover_and_fill(
    full: &CombinationSet,
    rng: &mut impl Rng,
) -> (BTreeSet<Combination>, BTreeSet<Combination>) {
    let schema = full.schema();
    let anchor = anchor_aspect(schema);
    let big = schema.arity(anchor);
    let maps: Vec<Vec<usize>> = schema
        .shape()
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            if i == anchor {
                Vec::new()
            } else {
                random_surjection(big, n, rng)
            }
        })
        .collect();
    let refs: Vec<Option<&Vec<usize>>> = maps
        .iter()
        .enumerate()
        .map(|(i, f)| (i != anchor).then_some(f))
        .collect();
    let mut id = cover_from_maps(anchor, big, &refs);
    let mut rest: Vec<Combination> = full.members().difference(&id).cloned().collect();
    rest.shuffle(rng);
    let need = full.len() / 2 - id.len();
    id.extend(rest.drain(..need));
    (id, rest.into_iter().collect())
}

fn initial_split(
    full: &CombinationSet,
    members: &[Combination],
    rng: &mut impl Rng,
) -> (BTreeSet<Combination>, BTreeSet<Combination>) {
    let schema = full.schema();
    for _ in 0..INIT_REJECTION_ATTEMPTS {
        let (id, comp) = uniform_balanced(members, rng);
        if id_covers_comp(schema, &id, &comp) {
            return (id, comp);
        }
    }
    cover_and_fill(full, rng)
}

fn require_balanceable(full: &CombinationSet) -> Result<()> {
    require_full_product(full)?;
    if !full.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "balanced splits need an even |C|, got {}",
            full.len()
        )));
    }
    Ok(())
}

/// One restart of the ACD hill climber.
///
/// Each pass scans the in-distribution set in canonical order for a member
/// whose move to the compositional side improves the objective, then scans
/// the compositional side for a member whose move back improves it further.
/// The pair is applied as a swap, so the split stays balanced; swaps that
/// would break eligibility are rejected and an unmatched first move is
/// rolled back. A pass that changes nothing ends the restart.
pub fn acd_restart(
    full: &CombinationSet,
    config: &AcdSearchConfig,
    restart: usize,
) -> Result<RestartOutcome> {
    config.validate()?;
    require_balanceable(full)?;
    let schema = full.schema().clone();
    let members: Vec<Combination> = full.iter().cloned().collect();
    let mut rng = restart_rng(config.rng_seed, restart);
    let (mut id, mut comp) = initial_split(full, &members, &mut rng);

    let mut state = PartitionState::new(&schema, &id, &comp, config.alpha);
    let mut best = state.divergence();
    let mut trace = vec![best];

    for _ in 0..config.t2_steps {
        let raw = state.raw();
        let mut swapped: Option<(Combination, Combination)> = None;
        let outgoing: Vec<Combination> = id.iter().cloned().collect();
        let incoming: Vec<Combination> = comp.iter().cloned().collect();
        'outer: for c1 in &outgoing {
            let d1 = state.divergence_after(raw, &[(c1, true)]);
            if config.score(d1) <= config.score(best) + IMPROVEMENT_EPS {
                continue;
            }
            state.apply(c1, true);
            let raw1 = state.raw();
            for c in &incoming {
                let d2 = state.divergence_after(raw1, &[(c, false)]);
                if config.score(d2) <= config.score(d1) + IMPROVEMENT_EPS {
                    continue;
                }
                state.apply(c, false);
                if state.id_covers(c1) {
                    best = d2;
                    swapped = Some((c1.clone(), c.clone()));
                    break 'outer;
                }
                state.apply(c, true);
            }
            state.apply(c1, false);
        }
        match swapped {
            Some((out, back)) => {
                id.remove(&out);
                comp.insert(out);
                comp.remove(&back);
                id.insert(back);
                trace.push(best);
            }
            None => break,
        }
    }

    let divergence = divergence_of(&schema, &id, &comp, config.alpha)?;
    Ok(RestartOutcome {
        id_set: id,
        comp_set: comp,
        divergence,
        trace,
    })
}

/// Balanced eligible splits found by random-restart hill climbing that reach
/// the divergence threshold, deduplicated by their in-distribution set and
/// ordered best first.
///
/// With [`Objective::Minimize`] the bundle is tagged
/// [`Protocol::MinDivergence`].
pub fn acd_splits(full: &CombinationSet, config: &AcdSearchConfig) -> Result<SplitBundle> {
    config.validate()?;
    require_balanceable(full)?;
    let outcomes: Vec<RestartOutcome> = with_pool(|| {
        (0..config.t1_restarts)
            .into_par_iter()
            .map(|r| acd_restart(full, config, r))
            .collect::<Result<Vec<_>>>()
    })?;

    let protocol = match config.objective {
        Objective::Maximize => Protocol::Acd,
        Objective::Minimize => Protocol::MinDivergence,
    };
    let best = outcomes.iter().map(|o| o.divergence).reduce(|a, b| {
        if config.score(a) >= config.score(b) {
            a
        } else {
            b
        }
    });
    let mut seen = HashSet::new();
    let mut splits = Vec::new();
    for o in outcomes {
        if config.passes_threshold(o.divergence) && seen.insert(o.id_set.clone()) {
            let schema = full.schema().clone();
            splits.push(Split {
                protocol,
                id_set: CombinationSet::from_trusted(schema.clone(), o.id_set),
                comp_set: CombinationSet::from_trusted(schema, o.comp_set),
                divergence: Some(o.divergence),
                seed: config.rng_seed,
            });
        }
    }
    splits.sort_by(|a, b| {
        let key = |s: &Split| config.score(s.divergence.unwrap_or(f64::NAN));
        key(b).total_cmp(&key(a))
    });
    let diagnostic = splits.is_empty().then(|| {
        format!(
            "no restart reached the threshold eta = {} (best divergence {:.6})",
            config.eta_threshold,
            best.unwrap_or(f64::NAN)
        )
    });
    if let Some(msg) = &diagnostic {
        log::warn!("{msg}");
    }
    Ok(SplitBundle {
        protocol,
        schema: full.schema().clone(),
        config: BundleConfig::from_search(config),
        splits,
        diagnostic,
    })
}

/// Minimum-divergence comparison baseline.
pub fn min_divergence_splits(
    full: &CombinationSet,
    config: &AcdSearchConfig,
) -> Result<SplitBundle> {
    let config = AcdSearchConfig {
        objective: Objective::Minimize,
        ..config.clone()
    };
    acd_splits(full, &config)
}

/// `n` balanced eligible splits drawn uniformly by rejection sampling.
/// Draws are independent, so the bundle may repeat a partition.
pub fn random_splits(
    full: &CombinationSet,
    n: usize,
    seed: u64,
    alpha: f64,
) -> Result<SplitBundle> {
    require_balanceable(full)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let schema = full.schema().clone();
    let members: Vec<Combination> = full.iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Vec::with_capacity(n);
    for _ in 0..n {
        let mut drawn = None;
        for _ in 0..RANDOM_REJECTION_BUDGET {
            let (id, comp) = uniform_balanced(&members, &mut rng);
            if id_covers_comp(&schema, &id, &comp) {
                drawn = Some((id, comp));
                break;
            }
        }
        let (id, comp) = drawn.ok_or(Error::RejectionBudgetExhausted {
            attempts: RANDOM_REJECTION_BUDGET,
        })?;
        splits.push(make_split(full, Protocol::Random, id, comp, alpha, seed)?);
    }
    Ok(SplitBundle {
        protocol: Protocol::Random,
        schema,
        config: BundleConfig {
            alpha,
            n: Some(n),
            seed: Some(seed),
            ..Default::default()
        },
        splits,
        diagnostic: None,
    })
}

/// The single Original split: everything in-distribution.
pub fn original_split(full: &CombinationSet) -> SplitBundle {
    SplitBundle {
        protocol: Protocol::Original,
        schema: full.schema().clone(),
        config: BundleConfig {
            alpha: DEFAULT_ALPHA,
            ..Default::default()
        },
        splits: vec![Split::original(full.clone())],
        diagnostic: None,
    }
}

/// Every balanced eligible split of a small product with its divergence.
/// Exponential in `|C|`; meant for oracles and small demonstrations.
pub fn enumerate_balanced_eligible(full: &CombinationSet, alpha: f64) -> Result<Vec<Split>> {
    require_balanceable(full)?;
    let members: Vec<Combination> = full.iter().cloned().collect();
    let half = members.len() / 2;
    let mut out = Vec::new();
    for idx in (0..members.len()).combinations(half) {
        let id: BTreeSet<Combination> = idx.iter().map(|&i| members[i].clone()).collect();
        let comp: BTreeSet<Combination> = full.members().difference(&id).cloned().collect();
        if id_covers_comp(full.schema(), &id, &comp) {
            out.push(make_split(full, Protocol::Acd, id, comp, alpha, 0)?);
        }
    }
    Ok(out)
}

/// True if `id` covers every attribute value of the schema.
pub fn covers_all_attributes(id: &CombinationSet) -> bool {
    covered_attributes(id)
        .iter()
        .zip(id.schema().shape())
        .all(|(c, n)| c.len() == n)
}
