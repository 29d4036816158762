//! Scanpath evaluation: search accuracy, target fixation probability (TFP)
//! curves, their area and mismatch, scanpath ratio, and detection scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoding::{BBox, Cell, GridSpec};
use crate::error::{Error, Result};

/// One scanpath with its target box, as scored by the search metrics.
#[derive(Clone, Copy, Debug)]
pub struct Scored<'a> {
    pub cells: &'a [Cell],
    pub bbox: &'a BBox,
}

/// Step of the first fixation after the start that lands on the target, if any.
pub fn first_hit(cells: &[Cell], bbox: &BBox, g: &GridSpec) -> Option<usize> {
    (1..cells.len()).find(|&t| g.overlaps(cells[t], bbox))
}

/// Fraction of scanpaths that fixate the target at some step `t ≥ 1`.
pub fn search_accuracy(paths: &[Scored<'_>], g: &GridSpec) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Data("search accuracy of an empty set".into()));
    }
    let hits = paths.iter().filter(|p| first_hit(p.cells, p.bbox, g).is_some()).count();
    Ok(hits as f64 / paths.len() as f64)
}

/// `TFP(t)`: fraction of scanpaths whose first target fixation is at step ≤ t, for t in `0..len`.
pub fn tfp_curve(paths: &[Scored<'_>], g: &GridSpec, len: usize) -> Result<Vec<f64>> {
    if paths.is_empty() {
        return Err(Error::Data("TFP curve of an empty set".into()));
    }
    let mut counts = vec![0usize; len];
    for p in paths {
        if let Some(t) = first_hit(p.cells, p.bbox, g) {
            for c in counts.iter_mut().skip(t) {
                *c += 1;
            }
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / paths.len() as f64).collect())
}

/// Unit-step area under a TFP curve, skipping the imposed start: `Σ_{t≥1} TFP(t)`.
pub fn tfp_auc(curve: &[f64]) -> f64 {
    curve.iter().skip(1).sum()
}

/// `Σ_{t≥1} |a(t) − b(t)|`.
pub fn probability_mismatch(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("TFP curves of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).skip(1).map(|(x, y)| (x - y).abs()).sum())
}

/// Straight-line distance from the first fixation to the target centre over
/// the travelled path length, both in pixels between cell centres, capped at
/// 1. `None` when the path never moves.
pub fn scanpath_ratio(cells: &[Cell], bbox: &BBox, g: &GridSpec) -> Option<f64> {
    let first = *cells.first()?;
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let path: f64 = cells
        .windows(2)
        .map(|w| dist(g.cell_center(w[0]), g.cell_center(w[1])))
        .sum();
    if path <= 0.0 {
        return None;
    }
    Some((dist(g.cell_center(first), bbox.center()) / path).min(1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn tally(preds: &[f64], labels: &[f64], threshold: f64) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::Data(format!("{} predictions for {} labels", preds.len(), labels.len())));
        }
        let mut c = Confusion::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p >= threshold, y >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }

    pub fn scores(&self) -> DetectionScores {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        DetectionScores {
            accuracy: ratio(self.tp + self.tn, self.total()).unwrap_or(0.0),
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
        }
    }
}

/// Precision is absent when nothing is predicted positive, recall when no label is positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn detection_metrics(preds: &[f64], labels: &[f64], threshold: f64) -> Result<DetectionScores> {
    Ok(Confusion::tally(preds, labels, threshold)?.scores())
}

/// One scanpath to evaluate: predicted fixations, optionally the human
/// fixations on the same trial, and the target.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub class: String,
    pub predicted: Vec<Cell>,
    pub human: Option<Vec<Cell>>,
    pub present: bool,
    pub bbox: Option<BBox>,
    /// Per-step target-found probabilities for the predicted fixations `1..l`.
    pub det_pred: Option<Vec<f64>>,
    /// Labels aligned with `det_pred`.
    pub det_label: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchMetrics {
    pub n: usize,
    pub search_accuracy: f64,
    pub tfp: Vec<f64>,
    pub tfp_auc: f64,
    pub human_tfp: Option<Vec<f64>>,
    pub probability_mismatch: Option<f64>,
    pub scanpath_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub overall: DetectionScores,
    pub confusion: Confusion,
    /// One matrix per predicted step.
    pub per_step: Vec<Confusion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scanpath_len: usize,
    pub per_class: BTreeMap<String, SearchMetrics>,
    /// Means over classes.
    pub macro_avg: SearchMetrics,
    pub detection: Option<DetectionReport>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn class_metrics(items: &[&EvalItem], g: &GridSpec, len: usize) -> Result<SearchMetrics> {
    let mut pred = Vec::with_capacity(items.len());
    let mut human = Vec::with_capacity(items.len());
    for it in items {
        let b = it
            .bbox
            .as_ref()
            .ok_or_else(|| Error::Data(format!("target-present `{}` trial without bbox", it.class)))?;
        pred.push(Scored { cells: &it.predicted, bbox: b });
        if let Some(h) = &it.human {
            human.push(Scored { cells: h, bbox: b });
        }
    }
    let tfp = tfp_curve(&pred, g, len)?;
    let human_tfp = if human.len() == pred.len() {
        Some(tfp_curve(&human, g, len)?)
    } else {
        None
    };
    let mismatch = human_tfp.as_ref().map(|h| probability_mismatch(&tfp, h)).transpose()?;
    Ok(SearchMetrics {
        n: pred.len(),
        search_accuracy: tfp[len - 1],
        tfp_auc: tfp_auc(&tfp),
        tfp,
        human_tfp,
        probability_mismatch: mismatch,
        scanpath_ratio: mean(pred.iter().filter_map(|p| scanpath_ratio(p.cells, p.bbox, g))),
    })
}

/// Per-class and macro-averaged search metrics over target-present items,
/// plus detection scores over every item that carries detection outputs.
pub fn evaluate(items: &[EvalItem], g: &GridSpec, len: usize) -> Result<MetricsReport> {
    if len < 2 {
        return Err(Error::Config(format!("scanpath length must be at least 2, got {len}")));
    }
    let mut by_class: BTreeMap<&str, Vec<&EvalItem>> = BTreeMap::new();
    for it in items.iter().filter(|it| it.present) {
        if it.predicted.len() != len {
            return Err(Error::Data(format!(
                "predicted scanpath of length {}, expected {len}",
                it.predicted.len()
            )));
        }
        by_class.entry(&it.class).or_default().push(it);
    }
    if by_class.is_empty() {
        return Err(Error::Data("no target-present trials to evaluate".into()));
    }
    let per_class: BTreeMap<String, SearchMetrics> = by_class
        .iter()
        .map(|(c, its)| Ok((c.to_string(), class_metrics(its, g, len)?)))
        .collect::<Result<_>>()?;
    let classes: Vec<&SearchMetrics> = per_class.values().collect();
    let curve_mean = |get: &dyn Fn(&SearchMetrics) -> Option<&Vec<f64>>| -> Option<Vec<f64>> {
        let curves: Vec<&Vec<f64>> = classes.iter().filter_map(|m| get(m)).collect();
        (curves.len() == classes.len()).then(|| {
            (0..len)
                .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / curves.len() as f64)
                .collect()
        })
    };
    let tfp = curve_mean(&|m| Some(&m.tfp)).expect("every class has a curve");
    let human_tfp = curve_mean(&|m| m.human_tfp.as_ref());
    let macro_avg = SearchMetrics {
        n: classes.iter().map(|m| m.n).sum(),
        search_accuracy: tfp[len - 1],
        tfp_auc: tfp_auc(&tfp),
        probability_mismatch: human_tfp
            .is_some()
            .then(|| mean(classes.iter().filter_map(|m| m.probability_mismatch)))
            .flatten(),
        scanpath_ratio: mean(classes.iter().filter_map(|m| m.scanpath_ratio)),
        tfp,
        human_tfp,
    };
    Ok(MetricsReport {
        scanpath_len: len,
        per_class,
        macro_avg,
        detection: detection_report(items)?,
    })
}

fn detection_report(items: &[EvalItem]) -> Result<Option<DetectionReport>> {
    let mut per_step: Vec<Confusion> = Vec::new();
    let mut total = Confusion::default();
    let mut any = false;
    for it in items {
        let (Some(p), Some(y)) = (&it.det_pred, &it.det_label) else {
            continue;
        };
        any = true;
        if p.len() != y.len() {
            return Err(Error::Data(format!("{} detection outputs for {} labels", p.len(), y.len())));
        }
        if per_step.len() < p.len() {
            per_step.resize(p.len(), Confusion::default());
        }
        for t in 0..p.len() {
            let c = Confusion::tally(&p[t..=t], &y[t..=t], 0.5)?;
            per_step[t].add(&c);
            total.add(&c);
        }
    }
    Ok(any.then(|| DetectionReport {
        overall: total.scores(),
        confusion: total,
        per_step,
    }))
}

impl MetricsReport {
    /// `step,tfp_model,tfp_human` rows of the macro-averaged curves.
    pub fn tfp_csv(&self) -> String {
        let mut out = String::from("step,tfp_model,tfp_human\n");
        for (t, m) in self.macro_avg.tfp.iter().enumerate() {
            let h = self
                .macro_avg
                .human_tfp
                .as_ref()
                .map(|h| h[t].to_string())
                .unwrap_or_default();
            out.push_str(&format!("{t},{m},{h}\n"));
        }
        out
    }
}
