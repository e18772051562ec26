//! Benchmark aggregation (accuracy/perplexity averages and compositional
//! gaps) and the Dist-3 diversity metric.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Protocol;

/// Scores of one protocol cell pair. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolScores {
    pub protocol: Protocol,
    pub a_id: f64,
    pub p_id: f64,
    /// Absent for [`Protocol::Original`].
    pub a_comp: Option<f64>,
    pub p_comp: Option<f64>,
}

fn check_accuracy(name: &str, a: f64) -> Result<()> {
    if (0.0..=100.0).contains(&a) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} = {a} is not a percentage in [0, 100]"
        )))
    }
}

fn check_perplexity(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} = {p} must be a positive perplexity"
        )))
    }
}

impl ProtocolScores {
    pub fn new(protocol: Protocol, a_id: f64, p_id: f64, a_comp: f64, p_comp: f64) -> Result<Self> {
        if protocol == Protocol::Original {
            return Err(Error::InvalidArgument(
                "the Original protocol has no compositional cell; use ProtocolScores::original"
                    .into(),
            ));
        }
        check_accuracy("a_id", a_id)?;
        check_accuracy("a_comp", a_comp)?;
        check_perplexity("p_id", p_id)?;
        check_perplexity("p_comp", p_comp)?;
        Ok(Self {
            protocol,
            a_id,
            p_id,
            a_comp: Some(a_comp),
            p_comp: Some(p_comp),
        })
    }

    pub fn original(a_id: f64, p_id: f64) -> Result<Self> {
        check_accuracy("a_id", a_id)?;
        check_perplexity("p_id", p_id)?;
        Ok(Self {
            protocol: Protocol::Original,
            a_id,
            p_id,
            a_comp: None,
            p_comp: None,
        })
    }

    /// Compositional gap of this cell pair, in percent.
    pub fn gap(&self) -> Result<f64> {
        let a_comp = self.a_comp.ok_or_else(|| {
            Error::MissingCell(format!("{} has no compositional accuracy", self.protocol))
        })?;
        protocol_gap(self.a_id, a_comp)
    }
}

/// Averages reported for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub a_avg: f64,
    pub p_avg: f64,
    pub g_avg: f64,
    pub g_holdout: f64,
    pub g_acd: f64,
}

/// Relative accuracy drop `(a_id - a_comp) / a_id`, in percent. Negative when
/// compositional accuracy exceeds in-distribution accuracy.
pub fn protocol_gap(a_id: f64, a_comp: f64) -> Result<f64> {
    if a_id == 0.0 {
        return Err(Error::InvalidArgument(
            "gap undefined for zero in-distribution accuracy".into(),
        ));
    }
    Ok(100.0 * (a_id - a_comp) / a_id)
}

fn expect_tag(scores: &ProtocolScores, tag: Protocol) -> Result<()> {
    if scores.protocol == tag {
        Ok(())
    } else {
        Err(Error::TagMismatch {
            expected: tag.to_string(),
            found: scores.protocol.to_string(),
        })
    }
}

fn comp_cells(scores: &ProtocolScores) -> Result<(f64, f64)> {
    match (scores.a_comp, scores.p_comp) {
        (Some(a), Some(p)) => Ok((a, p)),
        _ => Err(Error::MissingCell(format!(
            "{} compositional cell",
            scores.protocol
        ))),
    }
}

/// Five-cell averages (Original id, Hold-Out id/comp, ACD id/comp) and the
/// mean of the Hold-Out and ACD gaps. Few-Shot is not part of the average.
pub fn aggregate(
    original: &ProtocolScores,
    holdout: &ProtocolScores,
    acd: &ProtocolScores,
) -> Result<BenchmarkSummary> {
    expect_tag(original, Protocol::Original)?;
    expect_tag(holdout, Protocol::HoldOut)?;
    expect_tag(acd, Protocol::Acd)?;
    let (ho_a, ho_p) = comp_cells(holdout)?;
    let (acd_a, acd_p) = comp_cells(acd)?;
    let a_avg = (original.a_id + holdout.a_id + ho_a + acd.a_id + acd_a) / 5.0;
    let p_avg = (original.p_id + holdout.p_id + ho_p + acd.p_id + acd_p) / 5.0;
    let g_holdout = protocol_gap(holdout.a_id, ho_a)?;
    let g_acd = protocol_gap(acd.a_id, acd_a)?;
    Ok(BenchmarkSummary {
        a_avg,
        p_avg,
        g_avg: 0.5 * (g_holdout + g_acd),
        g_holdout,
        g_acd,
    })
}

/// Cellwise mean over the splits of one protocol.
pub fn mean_over_bundle(per_split: &[ProtocolScores]) -> Result<ProtocolScores> {
    let first = per_split
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty score list".into()))?;
    for s in per_split {
        expect_tag(s, first.protocol)?;
    }
    let n = per_split.len() as f64;
    let mean = |f: &dyn Fn(&ProtocolScores) -> f64| per_split.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&ProtocolScores) -> Option<f64>| -> Result<Option<f64>> {
        let vals: Vec<Option<f64>> = per_split.iter().map(f).collect();
        if vals.iter().all(Option::is_none) {
            Ok(None)
        } else if vals.iter().all(Option::is_some) {
            Ok(Some(vals.iter().flatten().sum::<f64>() / n))
        } else {
            Err(Error::MissingCell(format!(
                "some {} splits lack a compositional cell",
                first.protocol
            )))
        }
    };
    Ok(ProtocolScores {
        protocol: first.protocol,
        a_id: mean(&|s| s.a_id),
        p_id: mean(&|s| s.p_id),
        a_comp: mean_opt(&|s| s.a_comp)?,
        p_comp: mean_opt(&|s| s.p_comp)?,
    })
}

/// Column header of [`summary_row`].
pub const SUMMARY_HEADER: &str = "method\torig_A_id\torig_P_id\tho_A_id\tho_P_id\tho_A_comp\tho_P_comp\tacd_A_id\tacd_P_id\tacd_A_comp\tacd_P_comp\tA_avg\tP_avg\tG_avg";

/// Tab-separated row in the benchmark table's column order.
pub fn summary_row(
    method: &str,
    original: &ProtocolScores,
    holdout: &ProtocolScores,
    acd: &ProtocolScores,
    summary: &BenchmarkSummary,
) -> String {
    let cells = [
        original.a_id,
        original.p_id,
        holdout.a_id,
        holdout.p_id,
        holdout.a_comp.unwrap_or(f64::NAN),
        holdout.p_comp.unwrap_or(f64::NAN),
        acd.a_id,
        acd.p_id,
        acd.a_comp.unwrap_or(f64::NAN),
        acd.p_comp.unwrap_or(f64::NAN),
        summary.a_avg,
        summary.p_avg,
        summary.g_avg,
    ];
    std::iter::once(method.to_string())
        .chain(cells.iter().map(|v| format!("{v:.2}")))
        .collect::<Vec<_>>()
        .join("\t")
}

/// How n-gram distinctness is aggregated across texts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistinctMode {
    /// Distinct n-grams over all n-gram occurrences in the corpus.
    #[default]
    Pooled,
    /// Mean of the per-text ratios over texts with at least one n-gram.
    PerTextMean,
}

/// Lowercased whitespace tokens.
pub fn whitespace_tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Distinct-n ratio.
pub fn distinct_n<S: AsRef<str>>(texts: &[Vec<S>], n: usize, mode: DistinctMode) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
    }
    let long_enough = texts.iter().filter(|t| t.len() >= n);
    match mode {
        DistinctMode::Pooled => {
            let mut distinct: HashSet<Vec<&str>> = HashSet::new();
            let mut total = 0usize;
            for t in long_enough {
                for w in t.windows(n) {
                    distinct.insert(w.iter().map(AsRef::as_ref).collect());
                    total += 1;
                }
            }
            if total == 0 {
                return Err(Error::InvalidArgument(format!(
                    "no text has {n} or more tokens"
                )));
            }
            Ok(distinct.len() as f64 / total as f64)
        }
        DistinctMode::PerTextMean => {
            let ratios: Vec<f64> = long_enough
                .map(|t| {
                    let grams: Vec<Vec<&str>> = t
                        .windows(n)
                        .map(|w| w.iter().map(AsRef::as_ref).collect())
                        .collect();
                    let distinct: HashSet<&Vec<&str>> = grams.iter().collect();
                    distinct.len() as f64 / grams.len() as f64
                })
                .collect();
            if ratios.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no text has {n} or more tokens"
                )));
            }
            Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
        }
    }
}

/// Dist-3 over tokenized texts.
pub fn dist_3<S: AsRef<str>>(texts: &[Vec<S>], mode: DistinctMode) -> Result<f64> {
    distinct_n(texts, 3, mode)
}
