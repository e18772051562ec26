//! Pseudo-compositional batch construction and per-split record allocation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{
    covered_attributes, product_of, AttributeSchema, Combination, CombinationSet, Split,
};

/// A condition part paired with its text part. `T` is an opaque string at
/// the I/O layer and a token-id sequence inside the toy trainer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRecord<T = String> {
    pub combination: Combination,
    pub text: T,
}

impl<T> LabeledRecord<T> {
    pub fn new(combination: Combination, text: T) -> Self {
        Self { combination, text }
    }
}

/// A nonempty batch of records over one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = String> {
    schema: Arc<AttributeSchema>,
    records: Vec<LabeledRecord<T>>,
}

impl<T> Batch<T> {
    pub fn new(schema: Arc<AttributeSchema>, records: Vec<LabeledRecord<T>>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        }
        for r in &records {
            schema.validate(&r.combination)?;
        }
        Ok(Self { schema, records })
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn records(&self) -> &[LabeledRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct combinations carried by the batch.
    pub fn combinations(&self) -> CombinationSet {
        CombinationSet::from_trusted(
            self.schema.clone(),
            self.records.iter().map(|r| r.combination.clone()).collect(),
        )
    }
}

/// Cartesian product of the per-aspect attribute values covered by `combos`.
pub fn recombination_closure(combos: &CombinationSet) -> CombinationSet {
    if combos.is_empty() {
        return CombinationSet::empty(combos.schema().clone());
    }
    product_of(combos.schema(), &covered_attributes(combos))
}

/// Combinations admissible for a pseudo-compositional batch: recombinations
/// of the training batch's attributes that the batch does not itself carry.
pub fn pcomp_candidates(train: &CombinationSet) -> CombinationSet {
    let closure = recombination_closure(train);
    CombinationSet::from_trusted(
        train.schema().clone(),
        closure
            .members()
            .difference(train.members())
            .cloned()
            .collect(),
    )
}

/// Draws up to `size` pool records, uniformly without replacement, whose
/// combinations are recombinations of `train`'s attributes and disjoint from
/// `train`'s combinations.
///
/// The pool must only hold in-distribution records. When fewer than `size`
/// admissible records exist, all of them are returned (shuffled) and a
/// warning is logged.
pub fn sample_pcomp_batch<T: Clone>(
    train: &Batch<T>,
    pool: &[LabeledRecord<T>],
    size: usize,
    seed: u64,
) -> Result<Batch<T>> {
    if size == 0 {
        return Err(Error::InvalidArgument(
            "pseudo-comp batch size must be >= 1".into(),
        ));
    }
    let candidates = pcomp_candidates(&train.combinations());
    if candidates.is_empty() {
        return Err(Error::NoPseudoCompCandidates(format!(
            "the training batch's {} combination(s) admit no recombination outside themselves",
            train.combinations().len()
        )));
    }
    let admissible: Vec<&LabeledRecord<T>> = pool
        .iter()
        .filter(|r| candidates.contains(&r.combination))
        .collect();
    if admissible.is_empty() {
        return Err(Error::PoolExhausted(format!(
            "none of {} pool records carries one of the {} admissible combinations",
            pool.len(),
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = size.min(admissible.len());
    if take < size {
        log::warn!(
            "only {} admissible pseudo-comp records for a requested batch of {size}",
            admissible.len()
        );
    }
    let records = admissible
        .choose_multiple(&mut rng, take)
        .map(|r| (*r).clone())
        .collect();
    Batch::new(train.schema().clone(), records)
}

/// True when some in-distribution combination can appear in a pseudo-comp
/// batch: all of its attribute values are also carried by other members.
pub fn admits_pcomp(id_set: &CombinationSet) -> bool {
    id_set.iter().any(|c| {
        let others = CombinationSet::from_trusted(
            id_set.schema().clone(),
            id_set.iter().filter(|o| *o != c).cloned().collect(),
        );
        recombination_closure(&others).contains(c)
    })
}

/// Records routed to training and testing under one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T = String> {
    pub train: Vec<LabeledRecord<T>>,
    pub id_test: Vec<LabeledRecord<T>>,
    pub comp_test: Vec<LabeledRecord<T>>,
    /// Input record count per combination.
    pub counts: BTreeMap<Combination, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOptions {
    /// Fraction of each in-distribution combination's records moved from
    /// train to the in-distribution test pool.
    pub id_test_fraction: f64,
    pub seed: u64,
}

impl Default for AllocationOptions {
    fn default() -> Self {
        Self {
            id_test_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Routes records by combination: in-distribution combinations train,
/// compositional ones are test-only.
pub fn allocate_records<T: Clone>(
    dataset: &[LabeledRecord<T>],
    split: &Split,
) -> Result<Allocation<T>> {
    allocate_records_with(dataset, split, &AllocationOptions::default())
}

pub fn allocate_records_with<T: Clone>(
    dataset: &[LabeledRecord<T>],
    split: &Split,
    options: &AllocationOptions,
) -> Result<Allocation<T>> {
    if !(0.0..=1.0).contains(&options.id_test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "id_test_fraction must lie in [0, 1], got {}",
            options.id_test_fraction
        )));
    }
    let schema = split.schema();
    let mut by_combo: BTreeMap<Combination, Vec<&LabeledRecord<T>>> = BTreeMap::new();
    let mut comp_test = Vec::new();
    for (line, r) in dataset.iter().enumerate() {
        if split.id_set.contains(&r.combination) {
            by_combo.entry(r.combination.clone()).or_default().push(r);
        } else if split.comp_set.contains(&r.combination) {
            comp_test.push(r.clone());
        } else {
            let label = if schema.validate(&r.combination).is_ok() {
                schema.label(&r.combination)
            } else {
                r.combination.to_string()
            };
            return Err(Error::UnknownCombination(format!(
                "record {line} carries {label}, which the split does not assign"
            )));
        }
    }

    let mut counts: BTreeMap<Combination, usize> = BTreeMap::new();
    for r in dataset {
        *counts.entry(r.combination.clone()).or_default() += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut train = Vec::new();
    let mut id_test = Vec::new();
    for (_, mut records) in by_combo {
        let held = (records.len() as f64 * options.id_test_fraction).floor() as usize;
        if held > 0 {
            records.shuffle(&mut rng);
        }
        let (test, rest) = records.split_at(held);
        id_test.extend(test.iter().map(|r| (*r).clone()));
        train.extend(rest.iter().map(|r| (*r).clone()));
    }
    Ok(Allocation {
        train,
        id_test,
        comp_test,
        counts,
    })
}

/// Distinct combinations of a record slice.
pub fn combinations_of<T>(
    schema: &Arc<AttributeSchema>,
    records: &[LabeledRecord<T>],
) -> CombinationSet {
    let members: BTreeSet<Combination> = records.iter().map(|r| r.combination.clone()).collect();
    CombinationSet::from_trusted(schema.clone(), members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{full_product, AspectDef};

    fn review_schema() -> Arc<AttributeSchema> {
        Arc::new(
            AttributeSchema::new(vec![
                AspectDef::new("sentiment", ["positive", "negative"]),
                AspectDef::new("topic", ["sport", "movie"]),
                AspectDef::new("tense", ["past", "present"]),
            ])
            .unwrap(),
        )
    }

    fn rec(s: &AttributeSchema, labels: [&str; 3], text: &str) -> LabeledRecord {
        LabeledRecord::new(s.combination(&labels).unwrap(), text.to_string())
    }

    #[test]
    fn closure_of_two_opposite_combinations() {
        let s = review_schema();
        let train = CombinationSet::new(
            s.clone(),
            [
                s.combination(&["positive", "sport", "past"]).unwrap(),
                s.combination(&["negative", "movie", "present"]).unwrap(),
            ],
        )
        .unwrap();
        let closure = recombination_closure(&train);
        assert_eq!(closure.len(), 8);
        assert!(closure.contains(&s.combination(&["positive", "movie", "past"]).unwrap()));
        assert!(closure.contains(&s.combination(&["negative", "sport", "present"]).unwrap()));
    }

    #[test]
    fn closure_edge_cases() {
        let s = review_schema();
        let one = CombinationSet::new(s.clone(), [Combination::new(vec![1, 0, 1])]).unwrap();
        assert_eq!(recombination_closure(&one), one);
        let full = full_product(&s);
        assert_eq!(recombination_closure(&full), full);
    }

    #[test]
    fn pcomp_batch_recombines_two_records() {
        let s = review_schema();
        let train = Batch::new(
            s.clone(),
            vec![
                rec(&s, ["positive", "sport", "past"], "the match thrilled us"),
                rec(&s, ["negative", "movie", "present"], "this film drags"),
            ],
        )
        .unwrap();
        let pool = vec![
            rec(&s, ["positive", "sport", "past"], "a"),
            rec(&s, ["positive", "movie", "past"], "b"),
            rec(&s, ["negative", "sport", "present"], "c"),
            rec(&s, ["negative", "movie", "present"], "d"),
        ];
        let batch = sample_pcomp_batch(&train, &pool, 2, 3).unwrap();
        let texts: BTreeSet<&str> = batch.records().iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, BTreeSet::from(["b", "c"]));
    }

    #[test]
    fn single_combination_train_batch_has_no_candidates() {
        let s = review_schema();
        let train = Batch::new(
            s.clone(),
            vec![
                rec(&s, ["positive", "sport", "past"], "x"),
                rec(&s, ["positive", "sport", "past"], "y"),
            ],
        )
        .unwrap();
        let pool = vec![rec(&s, ["positive", "movie", "past"], "b")];
        assert!(matches!(
            sample_pcomp_batch(&train, &pool, 1, 0),
            Err(Error::NoPseudoCompCandidates(_))
        ));
    }

    #[test]
    fn pool_without_admissible_records() {
        let s = review_schema();
        let train = Batch::new(
            s.clone(),
            vec![
                rec(&s, ["positive", "sport", "past"], "x"),
                rec(&s, ["negative", "movie", "past"], "y"),
            ],
        )
        .unwrap();
        let pool = vec![
            rec(&s, ["positive", "sport", "present"], "b"),
            rec(&s, ["positive", "sport", "past"], "c"),
        ];
        assert!(matches!(
            sample_pcomp_batch(&train, &pool, 1, 0),
            Err(Error::PoolExhausted(_))
        ));
    }

    #[test]
    fn short_pool_returns_smaller_batch() {
        let s = review_schema();
        let train = Batch::new(
            s.clone(),
            vec![
                rec(&s, ["positive", "sport", "past"], "x"),
                rec(&s, ["negative", "movie", "past"], "y"),
            ],
        )
        .unwrap();
        let pool = vec![rec(&s, ["positive", "movie", "past"], "b")];
        let batch = sample_pcomp_batch(&train, &pool, 5, 0).unwrap();
        assert_eq!(batch.len(), 1);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(Batch::<String>::new(review_schema(), vec![]).is_err());
    }

    #[test]
    fn allocation_routes_by_split() {
        let s = review_schema();
        let full = full_product(&s);
        let comp: BTreeSet<Combination> = [Combination::new(vec![1, 1, 1])].into();
        let id: BTreeSet<Combination> = full.members().difference(&comp).cloned().collect();
        let split = Split {
            protocol: crate::schema::Protocol::HoldOut,
            id_set: CombinationSet::from_trusted(s.clone(), id),
            comp_set: CombinationSet::from_trusted(s.clone(), comp),
            divergence: None,
            seed: 0,
        };
        let data: Vec<LabeledRecord> = full
            .iter()
            .flat_map(|c| (0..4).map(move |i| LabeledRecord::new(c.clone(), format!("{c}#{i}"))))
            .collect();
        let alloc = allocate_records(&data, &split).unwrap();
        assert_eq!(alloc.train.len(), 28);
        assert_eq!(alloc.comp_test.len(), 4);
        assert!(alloc.id_test.is_empty());
        assert!(alloc.counts.values().all(|&n| n == 4));

        let alloc = allocate_records_with(
            &data,
            &split,
            &AllocationOptions {
                id_test_fraction: 0.25,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(alloc.train.len(), 21);
        assert_eq!(alloc.id_test.len(), 7);
    }

    #[test]
    fn allocation_rejects_unassigned_combination() {
        let s = review_schema();
        let split = Split {
            protocol: crate::schema::Protocol::HoldOut,
            id_set: CombinationSet::new(s.clone(), [Combination::new(vec![0, 0, 0])]).unwrap(),
            comp_set: CombinationSet::new(s.clone(), [Combination::new(vec![1, 1, 1])]).unwrap(),
            divergence: None,
            seed: 0,
        };
        let data = vec![LabeledRecord::new(
            Combination::new(vec![0, 1, 0]),
            String::new(),
        )];
        assert!(matches!(
            allocate_records(&data, &split),
            Err(Error::UnknownCombination(_))
        ));
    }

    #[test]
    fn admits_pcomp_detects_fewshot_sets() {
        let s = Arc::new(AttributeSchema::from_shape(&[2, 2]).unwrap());
        let diag = CombinationSet::from_indices(s.clone(), &[&[0, 0], &[1, 1]]).unwrap();
        assert!(!admits_pcomp(&diag));
        let three = CombinationSet::from_indices(s, &[&[0, 0], &[0, 1], &[1, 0]]).unwrap();
        assert!(admits_pcomp(&three));
    }
}
