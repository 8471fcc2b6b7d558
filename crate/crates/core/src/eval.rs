//! Hits@1 and macro-averaged precision, recall and F1, plus parameter
//! sweeps that re-run re-ranking with one config field varied.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::NumeralRecord;
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, Prediction};
use crate::rerank::{GroupOrdering, RerankConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub record_id: String,
    pub gold_tag_id: String,
    pub predicted_tag_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    items: Vec<ScoredItem>,
    n_skipped_no_gold: usize,
    n_gold_in_top_k: usize,
}

impl PredictionSet {
    pub fn new(items: Vec<ScoredItem>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.record_id.as_str()) {
                return Err(Error::DuplicateRecord(item.record_id.clone()));
            }
        }
        Ok(Self {
            items,
            n_skipped_no_gold: 0,
            n_gold_in_top_k: 0,
        })
    }

    /// Drops predictions without a gold tag and remembers how many.
    pub fn from_predictions(predictions: &[Prediction]) -> Result<Self> {
        let mut items = Vec::with_capacity(predictions.len());
        let mut skipped = 0;
        let mut in_top_k = 0;
        for p in predictions {
            match &p.gold_tag_id {
                Some(gold) => {
                    if p.gold_in_top_k {
                        in_top_k += 1;
                    }
                    items.push(ScoredItem {
                        record_id: p.record_id.clone(),
                        gold_tag_id: gold.clone(),
                        predicted_tag_id: p.predicted_tag_id.clone(),
                    });
                }
                None => skipped += 1,
            }
        }
        let mut set = Self::new(items)?;
        set.n_skipped_no_gold = skipped;
        set.n_gold_in_top_k = in_top_k;
        Ok(set)
    }

    /// Convenience for `(record_id, gold, predicted)` triples.
    pub fn from_triples<S: AsRef<str>>(triples: &[(S, S, S)]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|(r, g, p)| ScoredItem {
                    record_id: r.as_ref().to_string(),
                    gold_tag_id: g.as_ref().to_string(),
                    predicted_tag_id: p.as_ref().to_string(),
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[ScoredItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_skipped_no_gold(&self) -> usize {
        self.n_skipped_no_gold
    }

    fn non_empty(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::InvalidInput("prediction set is empty".into()));
        }
        Ok(())
    }
}

pub fn hits_at_1(preds: &PredictionSet) -> Result<f64> {
    preds.non_empty()?;
    let correct = preds
        .items
        .iter()
        .filter(|i| i.gold_tag_id == i.predicted_tag_id)
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tag_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro averages over the gold classes of the set. Classes that only
/// ever appear as predictions get no row.
pub fn macro_metrics(preds: &PredictionSet) -> Result<MacroMetrics> {
    preds.non_empty()?;
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = preds
        .items
        .iter()
        .map(|i| (i.gold_tag_id.as_str(), (0, 0, 0)))
        .collect();
    for item in &preds.items {
        if item.gold_tag_id == item.predicted_tag_id {
            counts
                .get_mut(item.gold_tag_id.as_str())
                .expect("gold row")
                .0 += 1;
        } else {
            if let Some(row) = counts.get_mut(item.predicted_tag_id.as_str()) {
                row.1 += 1;
            }
            counts
                .get_mut(item.gold_tag_id.as_str())
                .expect("gold row")
                .2 += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = counts
        .into_iter()
        .map(|(tag, (tp, fp, fn_))| {
            let p = ratio(tp, tp + fp);
            let r = ratio(tp, tp + fn_);
            let f1 = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            ClassMetrics {
                tag_id: tag.to_string(),
                tp,
                fp,
                fn_,
                p,
                r,
                f1,
            }
        })
        .collect();
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    Ok(MacroMetrics {
        macro_p: mean(|c| c.p),
        macro_r: mean(|c| c.r),
        macro_f1: mean(|c| c.f1),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hits_at_1: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub avg: f64,
    pub n_records: usize,
    pub n_classes: usize,
    pub n_skipped_no_gold: usize,
    /// Share of scored records whose gold tag was among the retrieved
    /// candidates; an upper bound on Hits@1.
    pub gold_in_top_k_rate: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn evaluate(preds: &PredictionSet) -> Result<EvalReport> {
    let hits = hits_at_1(preds)?;
    let m = macro_metrics(preds)?;
    Ok(EvalReport {
        hits_at_1: hits,
        macro_p: m.macro_p,
        macro_r: m.macro_r,
        macro_f1: m.macro_f1,
        avg: (hits + m.macro_p + m.macro_r + m.macro_f1) / 4.0,
        n_records: preds.len(),
        n_classes: m.per_class.len(),
        n_skipped_no_gold: preds.n_skipped_no_gold,
        gold_in_top_k_rate: ratio(preds.n_gold_in_top_k, preds.len()),
        per_class: m.per_class,
    })
}

pub fn evaluate_predictions(predictions: &[Prediction]) -> Result<EvalReport> {
    evaluate(&PredictionSet::from_predictions(predictions)?)
}

impl EvalReport {
    /// Single-row table with the four headline metrics.
    pub fn render_text(&self) -> String {
        render_table(
            "",
            &["Hits@1", "M-P", "M-R", "M-F1"],
            &[(
                String::new(),
                Some(vec![
                    self.hits_at_1,
                    self.macro_p,
                    self.macro_r,
                    self.macro_f1,
                ]),
            )],
        )
    }
}

fn render_table(corner: &str, headers: &[&str], rows: &[(String, Option<Vec<f64>>)]) -> String {
    let label_w = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain([corner.chars().count()])
        .max()
        .unwrap_or(0);
    let col_w = headers.iter().map(|h| h.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{corner:<label_w$}");
    for h in headers {
        let _ = write!(out, "  {h:>col_w$}");
    }
    out.push('\n');
    for (label, values) in rows {
        let _ = write!(out, "{label:<label_w$}");
        match values {
            Some(vs) => {
                for v in vs {
                    let _ = write!(out, "  {v:>col_w$.4}");
                }
            }
            None => {
                for _ in headers {
                    let _ = write!(out, "  {:>col_w$}", "failed");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Iterations,
    GroupSize,
    Ordering,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "iterations" | "iters" | "t" => Ok(Self::Iterations),
            "group-size" | "groupsize" | "s" => Ok(Self::GroupSize),
            "ordering" | "order" => Ok(Self::Ordering),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iterations => "iterations",
            Self::GroupSize => "group-size",
            Self::Ordering => "ordering",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Count(usize),
    Ordering(GroupOrdering),
}

impl SweepAxis {
    pub fn parse_value(self, s: &str) -> Result<SweepValue> {
        match self {
            Self::Iterations | Self::GroupSize => s
                .trim()
                .parse()
                .map(SweepValue::Count)
                .map_err(|_| Error::Config(format!("{self} value {s:?} is not an integer"))),
            Self::Ordering => s.trim().parse().map(SweepValue::Ordering),
        }
    }

    pub fn apply(self, base: &RerankConfig, value: SweepValue) -> Result<RerankConfig> {
        let mut config = base.clone();
        match (self, value) {
            (Self::Iterations, SweepValue::Count(n)) => config.iterations = n,
            (Self::GroupSize, SweepValue::Count(n)) => config.group_size = n,
            (Self::Ordering, SweepValue::Ordering(o)) => config.ordering = o,
            (axis, v) => {
                return Err(Error::Config(format!(
                    "value {v:?} does not fit axis {axis}"
                )))
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn label(self, value: SweepValue) -> String {
        match value {
            SweepValue::Count(n) if self == Self::Iterations => format!("1-{n} iters"),
            SweepValue::Count(n) => n.to_string(),
            SweepValue::Ordering(o) => o.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub label: String,
    pub value: SweepValue,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub base_config: RerankConfig,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn render_text(&self) -> String {
        let corner = match self.axis {
            SweepAxis::Iterations => "Iterations",
            SweepAxis::GroupSize => "Group size",
            SweepAxis::Ordering => "Strategy",
        };
        let rows: Vec<(String, Option<Vec<f64>>)> = self
            .cells
            .iter()
            .map(|c| {
                let values = c
                    .report
                    .as_ref()
                    .map(|r| vec![r.hits_at_1, r.macro_p, r.macro_r, r.macro_f1, r.avg]);
                (c.label.clone(), values)
            })
            .collect();
        render_table(corner, &["Hits@1", "M-P", "M-R", "M-F1", "AVG"], &rows)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.report.is_none()).count()
    }
}

/// Runs one re-ranking pass per axis value. Generation and retrieval are
/// done once and shared by every cell; a failing cell is recorded and the
/// sweep moves on.
pub fn sweep(
    pipeline: &Pipeline,
    records: &[NumeralRecord],
    base: &RerankConfig,
    axis: SweepAxis,
    values: &[SweepValue],
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let unique: BTreeSet<String> = values.iter().map(|v| axis.label(*v)).collect();
    if unique.len() != values.len() {
        return Err(Error::Config("sweep values repeat".into()));
    }
    base.validate()?;
    let prepared = pipeline.prepare(records, base.top_k)?;
    let cells = values
        .iter()
        .map(|&value| {
            let label = axis.label(value);
            let outcome = axis
                .apply(base, value)
                .and_then(|config| pipeline.rerank_prepared(&prepared, &config))
                .and_then(|out| evaluate_predictions(&out.predictions));
            match outcome {
                Ok(report) => SweepCell {
                    label,
                    value,
                    report: Some(report),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell {label} failed: {e}");
                    SweepCell {
                        label,
                        value,
                        report: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepTable {
        axis,
        base_config: base.clone(),
        cells,
    })
}
