//! Scoring and reporting: per-attribute and per-group accuracy, average
//! precision, and the group-level table in text and CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{compose_w, Dataset, GroupPartition, LatentModel};

/// `X·(L·S)`, one score column per task.
pub fn predict_scores(model: &LatentModel, x: &Matrix) -> Result<Matrix> {
    if x.cols() != model.d() {
        return Err(Error::Dimension {
            context: "feature dimension",
            expected: model.d(),
            found: x.cols(),
        });
    }
    Ok(x.matmul(&compose_w(model)))
}

/// Sign of each score; a zero score predicts `+1`.
#[inline]
pub fn label_of(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn predict_labels(scores: &Matrix) -> Matrix {
    scores.map(label_of)
}

/// Scores and ground truth of one attribute on its test pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScores {
    pub scores: Vec<f64>,
    pub labels: Vec<f64>,
}

impl TaskScores {
    pub fn accuracy(&self) -> f64 {
        accuracy(&self.scores, &self.labels)
    }
}

/// Scores each task's own pool with its own classifier.
pub fn score_dataset(model: &LatentModel, dataset: &Dataset) -> Result<Vec<TaskScores>> {
    score_weights(&compose_w(model), dataset)
}

/// As [`score_dataset`] for a plain `D × M` weight matrix.
pub fn score_weights(w: &Matrix, dataset: &Dataset) -> Result<Vec<TaskScores>> {
    if w.rows() != dataset.d || w.cols() != dataset.num_tasks() {
        return Err(Error::Dimension {
            context: "weight matrix vs dataset",
            expected: dataset.d * dataset.num_tasks(),
            found: w.rows() * w.cols(),
        });
    }
    Ok(dataset
        .tasks
        .iter()
        .enumerate()
        .map(|(m, t)| TaskScores {
            scores: t.x.matvec(&w.col(m)),
            labels: t.y.clone(),
        })
        .collect())
}

/// Splits `N × M` score and label matrices into per-task columns.
pub fn split_columns(scores: &Matrix, labels: &Matrix) -> Result<Vec<TaskScores>> {
    if scores.shape() != labels.shape() {
        return Err(Error::Dimension {
            context: "scores vs labels",
            expected: labels.rows() * labels.cols(),
            found: scores.rows() * scores.cols(),
        });
    }
    Ok((0..scores.cols())
        .map(|m| TaskScores {
            scores: scores.col(m),
            labels: labels.col(m),
        })
        .collect())
}

/// Fraction of samples whose predicted sign matches the label.
pub fn accuracy(scores: &[f64], labels: &[f64]) -> f64 {
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| label_of(**s) == **y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Mean of precision-at-rank over the positives, ranking by descending
/// score with ties kept in original order. `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] > 0.0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Per-attribute AP and their unweighted mean. Attributes without any
/// positive are excluded with a warning.
pub fn mean_average_precision(per_task: &[TaskScores]) -> (Vec<Option<f64>>, Option<f64>) {
    let aps: Vec<Option<f64>> = per_task
        .iter()
        .enumerate()
        .map(|(m, t)| {
            let ap = average_precision(&t.scores, &t.labels);
            if ap.is_none() {
                log::warn!("attribute {m} has no positive test sample; excluded from mAP");
            }
            ap
        })
        .collect();
    (aps.clone(), mean_of(aps.into_iter().flatten()))
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    MeanAveragePrecision,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRow {
    pub name: String,
    pub group: String,
    pub accuracy: f64,
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub name: String,
    pub attributes: usize,
    pub accuracy: f64,
    pub mean_average_precision: Option<f64>,
}

/// Attribute-level results with unweighted group and overall means.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub attributes: Vec<AttributeRow>,
    pub groups: Vec<GroupRow>,
    pub total: GroupRow,
}

pub fn accuracy_table(
    per_task: &[TaskScores],
    names: &[String],
    partition: &GroupPartition,
) -> Result<AccuracyTable> {
    if per_task.len() != names.len() || per_task.len() != partition.num_tasks() {
        return Err(Error::Dimension {
            context: "accuracy table tasks",
            expected: partition.num_tasks(),
            found: per_task.len(),
        });
    }
    for (t, name) in per_task.iter().zip(names) {
        if t.labels.is_empty() {
            return Err(Error::Argument(format!(
                "empty test set for attribute '{name}'"
            )));
        }
        if t.scores.len() != t.labels.len() {
            return Err(Error::Dimension {
                context: "scores vs labels",
                expected: t.labels.len(),
                found: t.scores.len(),
            });
        }
    }
    let (aps, map) = mean_average_precision(per_task);
    let attributes: Vec<AttributeRow> = per_task
        .iter()
        .enumerate()
        .map(|(m, t)| AttributeRow {
            name: names[m].clone(),
            group: partition.groups()[partition.group_of(m)].name.clone(),
            accuracy: t.accuracy(),
            average_precision: aps[m],
        })
        .collect();
    let groups = partition
        .groups()
        .iter()
        .map(|g| GroupRow {
            name: g.name.clone(),
            attributes: g.members.len(),
            accuracy: mean_of(g.members.iter().map(|&m| attributes[m].accuracy)).unwrap_or(0.0),
            mean_average_precision: mean_of(g.members.iter().filter_map(|&m| aps[m])),
        })
        .collect();
    let total = GroupRow {
        name: "Total".into(),
        attributes: attributes.len(),
        accuracy: mean_of(attributes.iter().map(|a| a.accuracy)).unwrap_or(0.0),
        mean_average_precision: map,
    };
    Ok(AccuracyTable {
        attributes,
        groups,
        total,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl AccuracyTable {
    /// Aligned `Group | # Attributes | <metric>` table with a closing total row.
    pub fn to_text(&self, metric: Metric) -> String {
        let mut header = vec!["Group".to_string(), "# Attributes".to_string()];
        match metric {
            Metric::Accuracy => header.push("Accuracy".into()),
            Metric::MeanAveragePrecision => header.push("mAP".into()),
            Metric::Both => header.extend(["Accuracy".into(), "mAP".into()]),
        }
        let row = |g: &GroupRow| {
            let mut cells = vec![g.name.clone(), g.attributes.to_string()];
            match metric {
                Metric::Accuracy => cells.push(pct(Some(g.accuracy))),
                Metric::MeanAveragePrecision => cells.push(pct(g.mean_average_precision)),
                Metric::Both => {
                    cells.push(pct(Some(g.accuracy)));
                    cells.push(pct(g.mean_average_precision));
                }
            }
            cells
        };
        let mut rows: Vec<Vec<String>> = vec![header];
        rows.extend(self.groups.iter().map(row));
        rows.push(row(&self.total));

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            if i == rows.len() - 1 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
        }
        out
    }

    /// One row per attribute, then group rows, then the total, told apart
    /// by the `kind` column. Metrics are fractions in `[0, 1]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,name,group,attributes,accuracy,average_precision\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for a in &self.attributes {
            let _ = writeln!(
                out,
                "attribute,{},{},1,{},{}",
                csv_field(&a.name),
                csv_field(&a.group),
                a.accuracy,
                fmt(a.average_precision)
            );
        }
        for g in &self.groups {
            let _ = writeln!(
                out,
                "group,{},,{},{},{}",
                csv_field(&g.name),
                g.attributes,
                g.accuracy,
                fmt(g.mean_average_precision)
            );
        }
        let t = &self.total;
        let _ = writeln!(
            out,
            "total,{},,{},{},{}",
            t.name,
            t.attributes,
            t.accuracy,
            fmt(t.mean_average_precision)
        );
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
