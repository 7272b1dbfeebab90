//! Output parsing and scoring: exact-match accuracy plus order-insensitive
//! precision/recall for API sequences, and exact-match accuracy for labels.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{Ordering, TaskKind};
use crate::select::Method;

/// API names in predicted order, duplicates kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSequence {
    pub names: Vec<String>,
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl MetricTriple {
    pub const ZERO: MetricTriple = MetricTriple {
        precision: 0.0,
        recall: 0.0,
        accuracy: 0.0,
    };
}

/// Takes the first `<<...>>` span (or whatever follows an unclosed `<<`, or
/// precedes a `>>` with no opener), else the whole text, and splits it on
/// commas.
pub fn parse_api_sequence(text: &str) -> Result<ApiSequence> {
    let body = match (text.find("<<"), text.find(">>")) {
        (Some(open), _) => {
            let rest = &text[open + 2..];
            match rest.find(">>") {
                Some(close) => &rest[..close],
                None => rest,
            }
        }
        (None, Some(close)) => &text[..close],
        (None, None) => text,
    };
    let names: Vec<String> = body
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(ToString::to_string)
        .collect();
    if names.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(ApiSequence { names })
}

/// Size of the multiset intersection of two name lists.
fn overlap(pred: &[String], gold: &[String]) -> usize {
    let mut remaining: Vec<&str> = gold.iter().map(String::as_str).collect();
    let mut hits = 0;
    for name in pred {
        if let Some(pos) = remaining.iter().position(|g| g == name) {
            remaining.swap_remove(pos);
            hits += 1;
        }
    }
    hits
}

pub fn sequence_metrics(pred: &ApiSequence, gold: &ApiSequence) -> Result<MetricTriple> {
    if gold.names.is_empty() {
        return Err(Error::EmptyGold);
    }
    if pred.names.is_empty() {
        return Ok(MetricTriple::ZERO);
    }
    let hits = overlap(&pred.names, &gold.names) as f64;
    Ok(MetricTriple {
        precision: 100.0 * hits / pred.names.len() as f64,
        recall: 100.0 * hits / gold.names.len() as f64,
        accuracy: if pred.names == gold.names { 100.0 } else { 0.0 },
    })
}

/// 100 if the labels match after trimming, else 0.
pub fn classification_score(pred_label: &str, gold_label: &str) -> f64 {
    if pred_label.trim() == gold_label.trim() {
        100.0
    } else {
        0.0
    }
}

/// Parsed form of an output together with its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub prediction: Vec<String>,
    pub metrics: MetricTriple,
    pub parse_failure: bool,
}

/// Scores a raw model output against a raw gold string. Unparseable
/// predictions score zero and set `parse_failure`. A single label counts as
/// a one-element sequence, so precision and recall equal accuracy.
pub fn score_output(kind: TaskKind, output: &str, gold: &str) -> Result<Scored> {
    match kind {
        TaskKind::SequenceGeneration => {
            let gold = parse_api_sequence(gold).map_err(|_| Error::EmptyGold)?;
            match parse_api_sequence(output) {
                Ok(pred) => Ok(Scored {
                    metrics: sequence_metrics(&pred, &gold)?,
                    prediction: pred.names,
                    parse_failure: false,
                }),
                Err(_) => Ok(Scored {
                    prediction: Vec::new(),
                    metrics: MetricTriple::ZERO,
                    parse_failure: true,
                }),
            }
        }
        TaskKind::Classification => {
            let label = output.trim();
            let acc = classification_score(label, gold);
            Ok(Scored {
                prediction: if label.is_empty() {
                    Vec::new()
                } else {
                    alloc::vec![label.to_string()]
                },
                metrics: MetricTriple {
                    precision: acc,
                    recall: acc,
                    accuracy: acc,
                },
                parse_failure: label.is_empty(),
            })
        }
    }
}

/// Outcome of one task under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub method: Method,
    pub ordering: Option<Ordering>,
    pub output_text: String,
    pub prediction: Vec<String>,
    pub metrics: Option<MetricTriple>,
    pub parse_failure: bool,
    /// Decision statistic of the chosen ordering.
    pub statistic: Option<f64>,
    /// Decision statistic per evaluated ordering; `None` marks an empty output.
    pub ordering_scores: Vec<Option<f64>>,
    pub target_label: Option<String>,
    pub lm_calls: usize,
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodSummary {
    pub records: usize,
    pub scored: usize,
    pub failures: usize,
    pub parse_failures: usize,
    pub accuracy: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_lm_calls: f64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total_records: usize,
    pub per_method: BTreeMap<String, MethodSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-method means over scored records. Call counts and timings are
/// averaged over records that completed without error.
pub fn aggregate(records: &[EvalRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyRecordSet);
    }
    let mut grouped: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.method.as_str().to_string()).or_default().push(r);
    }
    let per_method = grouped
        .into_iter()
        .map(|(name, group)| {
            let scored: Vec<MetricTriple> = group.iter().filter_map(|r| r.metrics).collect();
            let ok: Vec<&&EvalRecord> = group.iter().filter(|r| r.error.is_none()).collect();
            let summary = MethodSummary {
                records: group.len(),
                scored: scored.len(),
                failures: group.len() - ok.len(),
                parse_failures: group.iter().filter(|r| r.parse_failure).count(),
                accuracy: mean(scored.iter().map(|m| m.accuracy)),
                mean_precision: mean(scored.iter().map(|m| m.precision)),
                mean_recall: mean(scored.iter().map(|m| m.recall)),
                mean_lm_calls: mean(ok.iter().map(|r| r.lm_calls as f64)),
                mean_wall_ms: mean(ok.iter().map(|r| r.wall_ms)),
            };
            (name, summary)
        })
        .collect();
    Ok(Summary {
        total_records: records.len(),
        per_method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn seq(names: &[&str]) -> ApiSequence {
        ApiSequence {
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn parsing() {
        assert_eq!(parse_api_sequence("<<SearchMovie, MovieCredits>>").unwrap(), seq(&["SearchMovie", "MovieCredits"]));
        assert_eq!(parse_api_sequence("<< A >>").unwrap(), seq(&["A"]));
        assert_eq!(
            parse_api_sequence("SearchMovie, MovieCredits, ortrailing").unwrap(),
            seq(&["SearchMovie", "MovieCredits", "ortrailing"])
        );
        assert_eq!(parse_api_sequence("noise <<A,B>> then <<C>>").unwrap(), seq(&["A", "B"]));
        assert_eq!(parse_api_sequence("<<A, B").unwrap(), seq(&["A", "B"]));
        assert_eq!(parse_api_sequence("A, B>> trailing").unwrap(), seq(&["A", "B"]));
        assert_eq!(parse_api_sequence("A,,B, ").unwrap(), seq(&["A", "B"]));
        assert_eq!(parse_api_sequence("<<>>"), Err(Error::EmptySequence));
        assert_eq!(parse_api_sequence("  "), Err(Error::EmptySequence));
    }

    #[test]
    fn metrics_rows() {
        let gold = seq(&["SearchMovie", "MovieRecommendations"]);
        let m = sequence_metrics(&seq(&["Movie", "MovieRecommendations"]), &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (50.0, 50.0, 0.0));
        let m = sequence_metrics(&seq(&["MovieRecommendations"]), &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (100.0, 50.0, 0.0));
        let m = sequence_metrics(&gold, &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (100.0, 100.0, 100.0));
        // same names in a different order: full overlap, no exact match
        let m = sequence_metrics(&seq(&["MovieRecommendations", "SearchMovie"]), &gold).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (100.0, 100.0, 0.0));
        assert_eq!(sequence_metrics(&gold, &seq(&[])), Err(Error::EmptyGold));
    }

    #[test]
    fn duplicates_are_not_over_credited() {
        let m = sequence_metrics(&seq(&["A", "A", "A"]), &seq(&["A", "B"])).unwrap();
        assert!((m.precision - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.recall, 50.0);
    }

    #[test]
    fn classification() {
        assert_eq!(classification_score("Sci/Tech", "Sci/Tech"), 100.0);
        assert_eq!(classification_score("World", "Sci/Tech"), 0.0);
        assert_eq!(classification_score("Sports ", "Sports"), 100.0);
        let s = score_output(TaskKind::Classification, " Sports", "Sports").unwrap();
        assert_eq!(s.metrics.accuracy, 100.0);
        assert_eq!(s.prediction, vec!["Sports".to_string()]);
    }

    #[test]
    fn unparseable_prediction_scores_zero() {
        let s = score_output(TaskKind::SequenceGeneration, "<<>>", "<<A>>").unwrap();
        assert!(s.parse_failure);
        assert_eq!(s.metrics, MetricTriple::ZERO);
        assert_eq!(score_output(TaskKind::SequenceGeneration, "A", "<<>>"), Err(Error::EmptyGold));
    }

    fn record(method: Method, acc: f64, p: f64, r: f64, calls: usize) -> EvalRecord {
        EvalRecord {
            task_id: "t".into(),
            method,
            ordering: None,
            output_text: String::new(),
            prediction: vec![],
            metrics: Some(MetricTriple { precision: p, recall: r, accuracy: acc }),
            parse_failure: false,
            statistic: None,
            ordering_scores: vec![],
            target_label: None,
            lm_calls: calls,
            wall_ms: 0.0,
            error: None,
        }
    }

    #[test]
    fn aggregation() {
        let s = aggregate(&[record(Method::Optiseq, 100.0, 100.0, 100.0, 12), record(Method::Optiseq, 0.0, 50.0, 50.0, 12)])
            .unwrap();
        let m = &s.per_method["optiseq"];
        assert_eq!(m.accuracy, 50.0);
        assert_eq!(m.mean_precision, 75.0);
        assert_eq!(m.mean_lm_calls, 12.0);
        let s = aggregate(&[record(Method::Random, 0.0, 66.0, 33.0, 1)]).unwrap();
        assert_eq!(s.per_method["random"].mean_recall, 33.0);
        assert_eq!(aggregate(&[]), Err(Error::EmptyRecordSet));
    }

    proptest! {
        #[test]
        fn metric_bounds_and_order_invariance(
            pred in proptest::collection::vec("[A-D]", 1..6),
            gold in proptest::collection::vec("[A-D]", 1..6),
        ) {
            let p = ApiSequence { names: pred.clone() };
            let g = ApiSequence { names: gold };
            let m = sequence_metrics(&p, &g).unwrap();
            for v in [m.precision, m.recall] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert!(m.accuracy == 0.0 || m.accuracy == 100.0);
            if m.accuracy == 100.0 {
                prop_assert_eq!((m.precision, m.recall), (100.0, 100.0));
            }
            let mut reversed = pred.clone();
            reversed.reverse();
            let mr = sequence_metrics(&ApiSequence { names: reversed.clone() }, &g).unwrap();
            prop_assert_eq!((m.precision, m.recall), (mr.precision, mr.recall));
            if reversed != pred && m.accuracy == 100.0 {
                prop_assert_eq!(mr.accuracy, 0.0);
            }
        }
    }
}
