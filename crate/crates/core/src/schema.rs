//! Attribute algebra: schemas, combinations, combination sets and the
//! eligible-split predicate.
//!
//! Combinations are index vectors. Value strings only appear at the I/O
//! boundary through [`AttributeSchema`] lookups.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One controllable aspect and its attribute values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectDef {
    pub name: String,
    pub values: Vec<String>,
}

impl AspectDef {
    pub fn new(
        name: impl Into<String>,
        values: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

/// The ordered aspects `A_1..A_m` of a labeled corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct AttributeSchema {
    aspects: Vec<AspectDef>,
    // offsets[i] = number of attribute values in aspects before i
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    aspects: Vec<AspectDef>,
}

impl TryFrom<SchemaRepr> for AttributeSchema {
    type Error = Error;
    fn try_from(repr: SchemaRepr) -> Result<Self> {
        AttributeSchema::new(repr.aspects)
    }
}

impl From<AttributeSchema> for SchemaRepr {
    fn from(schema: AttributeSchema) -> Self {
        SchemaRepr {
            aspects: schema.aspects,
        }
    }
}

impl AttributeSchema {
    /// Validates `m >= 2`, `a_i >= 2`, unique aspect names and unique values
    /// within each aspect.
    pub fn new(aspects: Vec<AspectDef>) -> Result<Self> {
        if aspects.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "need at least 2 aspects, got {}",
                aspects.len()
            )));
        }
        let mut names = HashSet::new();
        for aspect in &aspects {
            if !names.insert(aspect.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate aspect name '{}'",
                    aspect.name
                )));
            }
            if aspect.values.len() < 2 {
                return Err(Error::InvalidSchema(format!(
                    "aspect '{}' has {} value(s); at least 2 required",
                    aspect.name,
                    aspect.values.len()
                )));
            }
            let mut seen = HashSet::new();
            for value in &aspect.values {
                if !seen.insert(value.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "aspect '{}' lists value '{}' twice",
                        aspect.name, value
                    )));
                }
            }
        }
        let mut offsets = Vec::with_capacity(aspects.len());
        let mut acc = 0;
        for aspect in &aspects {
            offsets.push(acc);
            acc += aspect.values.len();
        }
        Ok(Self { aspects, offsets })
    }

    /// Synthetic schema with generated names: aspect `i` is `a{i}` with
    /// values `a{i}v{t}`.
    pub fn from_shape(shape: &[usize]) -> Result<Self> {
        let aspects = shape
            .iter()
            .enumerate()
            .map(|(i, &n)| AspectDef::new(format!("a{i}"), (0..n).map(|t| format!("a{i}v{t}"))))
            .collect();
        Self::new(aspects)
    }

    pub fn aspects(&self) -> &[AspectDef] {
        &self.aspects
    }

    /// Number of aspects `m`.
    pub fn num_aspects(&self) -> usize {
        self.aspects.len()
    }

    /// `(a_1, .., a_m)`.
    pub fn shape(&self) -> Vec<usize> {
        self.aspects.iter().map(|a| a.values.len()).collect()
    }

    pub fn arity(&self, aspect: usize) -> usize {
        self.aspects[aspect].values.len()
    }

    /// `|C| = prod a_i`.
    pub fn product_size(&self) -> usize {
        self.aspects.iter().map(|a| a.values.len()).product()
    }

    /// Total number of attribute values across all aspects.
    pub fn total_values(&self) -> usize {
        self.aspects.iter().map(|a| a.values.len()).sum()
    }

    /// Flat index of `(aspect, value)` among all attribute values.
    pub fn flat_index(&self, aspect: usize, value: usize) -> usize {
        self.offsets[aspect] + value
    }

    pub fn aspect_index(&self, name: &str) -> Option<usize> {
        self.aspects.iter().position(|a| a.name == name)
    }

    pub fn value_index(&self, aspect: usize, value: &str) -> Option<usize> {
        self.aspects[aspect].values.iter().position(|v| v == value)
    }

    pub fn value_name(&self, aspect: usize, value: usize) -> &str {
        &self.aspects[aspect].values[value]
    }

    /// Builds a combination from value strings given in aspect order.
    pub fn combination<S: AsRef<str>>(&self, values: &[S]) -> Result<Combination> {
        if values.len() != self.num_aspects() {
            return Err(Error::InvalidCombination(format!(
                "expected {} values, got {}",
                self.num_aspects(),
                values.len()
            )));
        }
        let idx = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                self.value_index(i, v.as_ref()).ok_or_else(|| {
                    Error::InvalidCombination(format!(
                        "'{}' is not a value of aspect '{}'",
                        v.as_ref(),
                        self.aspects[i].name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Combination::new(idx))
    }

    pub fn validate(&self, combo: &Combination) -> Result<()> {
        if combo.len() != self.num_aspects() {
            return Err(Error::InvalidCombination(format!(
                "{combo} has {} entries, schema has {} aspects",
                combo.len(),
                self.num_aspects()
            )));
        }
        for (i, &t) in combo.values().iter().enumerate() {
            if t >= self.arity(i) {
                return Err(Error::InvalidCombination(format!(
                    "{combo}: index {t} out of range for aspect '{}' ({} values)",
                    self.aspects[i].name,
                    self.arity(i)
                )));
            }
        }
        Ok(())
    }

    /// Value strings of a combination, in aspect order.
    pub fn names(&self, combo: &Combination) -> Vec<&str> {
        combo
            .values()
            .iter()
            .enumerate()
            .map(|(i, &t)| self.value_name(i, t))
            .collect()
    }

    /// `pos-male` style label.
    pub fn label(&self, combo: &Combination) -> String {
        self.names(combo).join("-")
    }
}

/// One value index per aspect; an element of the Cartesian product.
///
/// Ordering is lexicographic on the index vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Combination(Vec<usize>);

impl Combination {
    pub fn new(values: Vec<usize>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, aspect: usize) -> usize {
        self.0[aspect]
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// A set of combinations validated against one schema. Iteration is in
/// canonical (lexicographic) order.
#[derive(Debug, Clone)]
pub struct CombinationSet {
    schema: Arc<AttributeSchema>,
    members: BTreeSet<Combination>,
}

impl PartialEq for CombinationSet {
    fn eq(&self, other: &Self) -> bool {
        same_schema(&self.schema, &other.schema) && self.members == other.members
    }
}

impl Eq for CombinationSet {}

fn same_schema(a: &Arc<AttributeSchema>, b: &Arc<AttributeSchema>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

impl CombinationSet {
    pub fn empty(schema: Arc<AttributeSchema>) -> Self {
        Self {
            schema,
            members: BTreeSet::new(),
        }
    }

    /// Validates every member; duplicates collapse.
    pub fn new(
        schema: Arc<AttributeSchema>,
        members: impl IntoIterator<Item = Combination>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for combo in members {
            schema.validate(&combo)?;
            set.insert(combo);
        }
        Ok(Self {
            schema,
            members: set,
        })
    }

    /// Convenience constructor from raw index vectors.
    pub fn from_indices(schema: Arc<AttributeSchema>, members: &[&[usize]]) -> Result<Self> {
        Self::new(schema, members.iter().map(|m| Combination::new(m.to_vec())))
    }

    pub(crate) fn from_trusted(
        schema: Arc<AttributeSchema>,
        members: BTreeSet<Combination>,
    ) -> Self {
        Self { schema, members }
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, combo: &Combination) -> bool {
        self.members.contains(combo)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Combination> + '_ {
        self.members.iter()
    }

    pub fn members(&self) -> &BTreeSet<Combination> {
        &self.members
    }

    pub fn insert(&mut self, combo: Combination) -> Result<bool> {
        self.schema.validate(&combo)?;
        Ok(self.members.insert(combo))
    }

    pub fn remove(&mut self, combo: &Combination) -> bool {
        self.members.remove(combo)
    }

    /// `self \ other`.
    pub fn difference(&self, other: &CombinationSet) -> Result<CombinationSet> {
        self.check_schema(other)?;
        Ok(Self::from_trusted(
            self.schema.clone(),
            self.members.difference(&other.members).cloned().collect(),
        ))
    }

    pub fn union(&self, other: &CombinationSet) -> Result<CombinationSet> {
        self.check_schema(other)?;
        Ok(Self::from_trusted(
            self.schema.clone(),
            self.members.union(&other.members).cloned().collect(),
        ))
    }

    pub(crate) fn check_schema(&self, other: &CombinationSet) -> Result<()> {
        if same_schema(&self.schema, &other.schema) {
            Ok(())
        } else {
            Err(Error::SchemaMismatch(format!(
                "sets built over shapes {:?} and {:?}",
                self.schema.shape(),
                other.schema.shape()
            )))
        }
    }
}

/// Protocol under which a split was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Original,
    HoldOut,
    Acd,
    FewShot,
    Random,
    MinDivergence,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Original => "original",
            Protocol::HoldOut => "holdout",
            Protocol::Acd => "acd",
            Protocol::FewShot => "fewshot",
            Protocol::Random => "random",
            Protocol::MinDivergence => "mindivergence",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Protocol::Original),
            "holdout" | "hold-out" => Ok(Protocol::HoldOut),
            "acd" => Ok(Protocol::Acd),
            "fewshot" | "few-shot" => Ok(Protocol::FewShot),
            "random" => Ok(Protocol::Random),
            "mindiv" | "mindivergence" | "min-divergence" => Ok(Protocol::MinDivergence),
            other => Err(Error::InvalidArgument(format!(
                "unknown protocol '{other}'"
            ))),
        }
    }
}

/// A protocol-tagged partition of the full product into in-distribution and
/// compositional combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub protocol: Protocol,
    pub id_set: CombinationSet,
    pub comp_set: CombinationSet,
    /// Compound divergence; `None` for [`Protocol::Original`].
    pub divergence: Option<f64>,
    pub seed: u64,
}

impl Split {
    /// The Original protocol: every combination is in-distribution.
    pub fn original(full: CombinationSet) -> Self {
        let schema = full.schema().clone();
        Split {
            protocol: Protocol::Original,
            id_set: full,
            comp_set: CombinationSet::empty(schema),
            divergence: None,
            seed: 0,
        }
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        self.id_set.schema()
    }

    pub fn is_balanced(&self) -> bool {
        self.id_set.len() == self.comp_set.len()
    }
}

/// All `prod a_i` combinations in lexicographic order.
pub fn full_product(schema: &Arc<AttributeSchema>) -> CombinationSet {
    let per_aspect: Vec<BTreeSet<usize>> = schema
        .shape()
        .into_iter()
        .map(|n| (0..n).collect())
        .collect();
    product_of(schema, &per_aspect)
}

/// Cartesian product of per-aspect value sets.
pub(crate) fn product_of(
    schema: &Arc<AttributeSchema>,
    per_aspect: &[BTreeSet<usize>],
) -> CombinationSet {
    use itertools::Itertools;
    let members: BTreeSet<Combination> = per_aspect
        .iter()
        .map(|vals| vals.iter().copied().collect::<Vec<_>>())
        .multi_cartesian_product()
        .map(Combination::new)
        .collect();
    CombinationSet::from_trusted(schema.clone(), members)
}

/// For each aspect, the value indices that occur in at least one member.
pub fn covered_attributes(set: &CombinationSet) -> Vec<BTreeSet<usize>> {
    let mut covered = vec![BTreeSet::new(); set.schema().num_aspects()];
    for combo in set.iter() {
        for (i, &t) in combo.values().iter().enumerate() {
            covered[i].insert(t);
        }
    }
    covered
}

/// One failed clause of the eligibility predicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// (a) `id ∪ comp != C`.
    Coverage {
        missing: Vec<Combination>,
        extra: Vec<Combination>,
    },
    /// (b) `id ∩ comp != ∅`.
    Overlap { shared: Vec<Combination> },
    /// (c) attribute values used by comp but absent from id, as `(aspect, value)`.
    UnseenAttributes { attributes: Vec<(usize, usize)> },
}

impl Violation {
    pub fn clause(&self) -> char {
        match self {
            Violation::Coverage { .. } => 'a',
            Violation::Overlap { .. } => 'b',
            Violation::UnseenAttributes { .. } => 'c',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EligibilityReport {
    pub violations: Vec<Violation>,
}

impl EligibilityReport {
    pub fn is_eligible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn failed_clauses(&self) -> Vec<char> {
        self.violations.iter().map(Violation::clause).collect()
    }

    /// Human-readable description using value names.
    pub fn describe(&self, schema: &AttributeSchema) -> String {
        let fmt_combos = |cs: &[Combination]| {
            cs.iter()
                .map(|c| schema.label(c))
                .collect::<Vec<_>>()
                .join(", ")
        };
        self.violations
            .iter()
            .map(|v| match v {
                Violation::Coverage { missing, extra } => format!(
                    "clause (a): union differs from the full set; missing [{}], extra [{}]",
                    fmt_combos(missing),
                    fmt_combos(extra)
                ),
                Violation::Overlap { shared } => {
                    format!("clause (b): sets overlap on [{}]", fmt_combos(shared))
                }
                Violation::UnseenAttributes { attributes } => format!(
                    "clause (c): compositional set uses attributes absent from the in-distribution set: [{}]",
                    attributes
                        .iter()
                        .map(|&(i, t)| format!("{}={}", schema.aspects()[i].name, schema.value_name(i, t)))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Checks the eligible-split predicate: (a) `id ∪ comp = C`,
/// (b) `id ∩ comp = ∅`, (c) every attribute in comp occurs in id.
pub fn is_eligible_split(
    full: &CombinationSet,
    id_set: &CombinationSet,
    comp_set: &CombinationSet,
) -> Result<EligibilityReport> {
    full.check_schema(id_set)?;
    full.check_schema(comp_set)?;

    let mut violations = Vec::new();

    let union: BTreeSet<&Combination> = id_set.iter().chain(comp_set.iter()).collect();
    let missing: Vec<Combination> = full
        .iter()
        .filter(|c| !union.contains(c))
        .cloned()
        .collect();
    let extra: Vec<Combination> = union
        .iter()
        .filter(|c| !full.contains(c))
        .map(|c| (*c).clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        violations.push(Violation::Coverage { missing, extra });
    }

    let shared: Vec<Combination> = id_set
        .members()
        .intersection(comp_set.members())
        .cloned()
        .collect();
    if !shared.is_empty() {
        violations.push(Violation::Overlap { shared });
    }

    let id_cov = covered_attributes(id_set);
    let comp_cov = covered_attributes(comp_set);
    let unseen: Vec<(usize, usize)> = comp_cov
        .iter()
        .enumerate()
        .flat_map(|(i, vals)| vals.difference(&id_cov[i]).map(move |&t| (i, t)))
        .collect();
    if !unseen.is_empty() {
        violations.push(Violation::UnseenAttributes { attributes: unseen });
    }

    Ok(EligibilityReport { violations })
}
