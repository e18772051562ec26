//! File formats: line-delimited datasets, split manifests and score files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, mean_over_bundle, BenchmarkSummary, ProtocolScores};
use crate::protocols::{BundleConfig, SplitBundle};
use crate::sampler::LabeledRecord;
use crate::schema::{AspectDef, AttributeSchema, Combination, CombinationSet, Protocol, Split};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.display().to_string(),
        source,
    }
}

/// One dataset line as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub attributes: BTreeMap<String, String>,
    pub text: String,
}

/// A parsed dataset with its inferred schema.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Arc<AttributeSchema>,
    pub records: Vec<LabeledRecord>,
    /// Record count per combination present in the file.
    pub counts: BTreeMap<Combination, usize>,
}

/// Parses line-delimited records and infers the schema from them. Aspects
/// are ordered by name and values lexicographically. Blank lines are
/// skipped; `source` names the input in error messages.
pub fn parse_dataset<R: BufRead>(reader: R, source: &str) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut raw: Vec<(usize, RawRecord)> = Vec::new();
    let mut keys: Option<Vec<String>> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let these: Vec<String> = rec.attributes.keys().cloned().collect();
        match &keys {
            None => keys = Some(these),
            Some(k) if *k != these => {
                let missing: Vec<&String> = k.iter().filter(|a| !these.contains(a)).collect();
                let extra: Vec<&String> = these.iter().filter(|a| !k.contains(a)).collect();
                return Err(parse_err(
                    lineno,
                    format!("aspect keys differ from the first record (missing {missing:?}, unexpected {extra:?})"),
                ));
            }
            _ => {}
        }
        raw.push((lineno, rec));
    }
    let keys = keys.ok_or_else(|| parse_err(0, "dataset holds no records".into()))?;

    let mut values: BTreeMap<&str, BTreeSet<&str>> =
        keys.iter().map(|k| (k.as_str(), BTreeSet::new())).collect();
    for (_, rec) in &raw {
        for (k, v) in &rec.attributes {
            values
                .get_mut(k.as_str())
                .expect("keys checked")
                .insert(v.as_str());
        }
    }
    let aspects = values
        .iter()
        .map(|(name, vals)| AspectDef::new(*name, vals.iter().copied()))
        .collect();
    let schema = Arc::new(
        AttributeSchema::new(aspects)
            .map_err(|e| Error::InvalidSchema(format!("{source}: {e}")))?,
    );

    let mut records = Vec::with_capacity(raw.len());
    let mut counts = BTreeMap::new();
    for (lineno, rec) in raw {
        let labels: Vec<&str> = rec.attributes.values().map(String::as_str).collect();
        let combo = schema
            .combination(&labels)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        *counts.entry(combo.clone()).or_insert(0) += 1;
        records.push(LabeledRecord::new(combo, rec.text));
    }
    Ok(Dataset {
        schema,
        records,
        counts,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_dataset(BufReader::new(file), &path.display().to_string())
}

/// Schema and per-combination counts of a dataset file.
pub fn infer_schema(path: &Path) -> Result<(Arc<AttributeSchema>, BTreeMap<Combination, usize>)> {
    let ds = read_dataset(path)?;
    Ok((ds.schema, ds.counts))
}

pub fn write_dataset(
    path: &Path,
    schema: &AttributeSchema,
    records: &[LabeledRecord],
) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write_records(&mut out, schema, records).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Writes records as dataset lines.
pub fn write_records<W: Write>(
    mut out: W,
    schema: &AttributeSchema,
    records: &[LabeledRecord],
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &to_raw(schema, r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn to_raw(schema: &AttributeSchema, r: &LabeledRecord) -> RawRecord {
    RawRecord {
        attributes: combination_map(schema, &r.combination),
        text: r.text.clone(),
    }
}

fn combination_map(schema: &AttributeSchema, combo: &Combination) -> BTreeMap<String, String> {
    schema
        .aspects()
        .iter()
        .zip(schema.names(combo))
        .map(|(a, v)| (a.name.clone(), v.to_string()))
        .collect()
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// One split in serialized form. Combinations are aspect-name to value maps,
/// listed in the schema's canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema: AttributeSchema,
    pub protocol: Protocol,
    pub config: BundleConfig,
    pub divergence: Option<f64>,
    pub id_combinations: Vec<BTreeMap<String, String>>,
    pub comp_combinations: Vec<BTreeMap<String, String>>,
}

impl SplitManifest {
    /// `config.seed` is replaced by the split's own seed.
    pub fn from_split(split: &Split, config: &BundleConfig) -> Self {
        let schema = split.schema();
        let maps = |set: &CombinationSet| set.iter().map(|c| combination_map(schema, c)).collect();
        let mut config = config.clone();
        config.alpha = round_sig(config.alpha);
        config.eta = config.eta.map(round_sig);
        config.seed = Some(split.seed);
        Self {
            schema: (**schema).clone(),
            protocol: split.protocol,
            config,
            divergence: split.divergence.map(round_sig),
            id_combinations: maps(&split.id_set),
            comp_combinations: maps(&split.comp_set),
        }
    }

    pub fn to_split(&self) -> Result<Split> {
        let schema = Arc::new(self.schema.clone());
        let parse = |maps: &[BTreeMap<String, String>], field: &str| -> Result<CombinationSet> {
            let mut set = CombinationSet::empty(schema.clone());
            for (i, m) in maps.iter().enumerate() {
                let labels: Result<Vec<&str>> = schema
                    .aspects()
                    .iter()
                    .map(|a| {
                        m.get(&a.name).map(String::as_str).ok_or_else(|| {
                            Error::InvalidCombination(format!(
                                "{field}[{i}] lacks aspect '{}'",
                                a.name
                            ))
                        })
                    })
                    .collect();
                if m.len() != schema.num_aspects() {
                    return Err(Error::InvalidCombination(format!(
                        "{field}[{i}] has {} aspects, schema has {}",
                        m.len(),
                        schema.num_aspects()
                    )));
                }
                let combo = schema
                    .combination(&labels?)
                    .map_err(|e| Error::InvalidCombination(format!("{field}[{i}]: {e}")))?;
                set.insert(combo)?;
            }
            Ok(set)
        };
        Ok(Split {
            protocol: self.protocol,
            id_set: parse(&self.id_combinations, "id_combinations")?,
            comp_set: parse(&self.comp_combinations, "comp_combinations")?,
            divergence: self.divergence,
            seed: self.config.seed.unwrap_or(0),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn write_manifest(path: &Path, manifest: &SplitManifest) -> Result<()> {
    fs::write(path, manifest.to_json()).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Writes one manifest per split as `<protocol>_<index>.json` under `dir`,
/// creating it if needed. Returns the written paths in split order.
pub fn write_bundle(dir: &Path, bundle: &SplitBundle) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    bundle
        .splits
        .iter()
        .enumerate()
        .map(|(i, split)| {
            let path = dir.join(format!("{}_{i:03}.json", bundle.protocol));
            write_manifest(&path, &SplitManifest::from_split(split, &bundle.config))?;
            Ok(path)
        })
        .collect()
}

/// Scores of one test cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    /// Percent accuracy per aspect.
    pub accuracy: BTreeMap<String, f64>,
    pub perplexity: f64,
}

impl CellScores {
    pub fn mean_accuracy(&self) -> Result<f64> {
        if self.accuracy.is_empty() {
            return Err(Error::MissingCell("cell lists no aspect accuracies".into()));
        }
        Ok(self.accuracy.values().sum::<f64>() / self.accuracy.len() as f64)
    }
}

/// Scores keyed by protocol, then split id, then cell (`id` or `comp`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreFile {
    pub protocols: BTreeMap<String, BTreeMap<String, BTreeMap<String, CellScores>>>,
}

impl ScoreFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(json_err(path))
    }

    /// Per-split scores of one protocol, each cell's aspect accuracies
    /// averaged, then averaged over splits.
    pub fn protocol_scores(&self, protocol: Protocol) -> Result<ProtocolScores> {
        let splits = self
            .protocols
            .iter()
            .find(|(k, _)| k.parse::<Protocol>().ok() == Some(protocol))
            .map(|(_, v)| v)
            .ok_or_else(|| {
                Error::MissingCell(format!("score file has no '{protocol}' protocol"))
            })?;
        let mut per_split = Vec::with_capacity(splits.len());
        for (split_id, cells) in splits {
            if let Some(bad) = cells.keys().find(|c| *c != "id" && *c != "comp") {
                return Err(Error::InvalidArgument(format!(
                    "{protocol}/{split_id}: unknown cell '{bad}' (expected 'id' or 'comp')"
                )));
            }
            let id = cells
                .get("id")
                .ok_or_else(|| Error::MissingCell(format!("{protocol}/{split_id}/id")))?;
            let scores = if protocol == Protocol::Original {
                ProtocolScores::original(id.mean_accuracy()?, id.perplexity)?
            } else {
                let comp = cells
                    .get("comp")
                    .ok_or_else(|| Error::MissingCell(format!("{protocol}/{split_id}/comp")))?;
                ProtocolScores::new(
                    protocol,
                    id.mean_accuracy()?,
                    id.perplexity,
                    comp.mean_accuracy()?,
                    comp.perplexity,
                )?
            };
            per_split.push(scores);
        }
        mean_over_bundle(&per_split)
    }

    /// Original, Hold-Out and ACD scores and their benchmark summary.
    pub fn summarize(
        &self,
    ) -> Result<(
        ProtocolScores,
        ProtocolScores,
        ProtocolScores,
        BenchmarkSummary,
    )> {
        let original = self.protocol_scores(Protocol::Original)?;
        let holdout = self.protocol_scores(Protocol::HoldOut)?;
        let acd = self.protocol_scores(Protocol::Acd)?;
        let summary = aggregate(&original, &holdout, &acd)?;
        Ok((original, holdout, acd, summary))
    }
}

/// One text per nonempty line.
pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}
