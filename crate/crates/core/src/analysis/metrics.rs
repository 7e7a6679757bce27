//! Mean class accuracy, confusion matrices and report formatting.

use std::fmt::Write as _;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Recall per class; `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    pub mean_class_accuracy: f64,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

impl EvalReport {
    pub fn new(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(shape_err(
                "mean_class_accuracy",
                format!("{} predictions, {} labels", predictions.len(), labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &t) in predictions.iter().zip(labels) {
            for v in [p, t] {
                if v >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: v,
                        classes: num_classes,
                    });
                }
            }
            confusion[t][p] += 1;
        }
        let per_class: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean_class_accuracy = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Self {
            per_class,
            mean_class_accuracy,
            confusion,
            count: labels.len(),
        })
    }

    pub fn overall_accuracy(&self) -> f64 {
        let correct: usize = (0..self.confusion.len())
            .map(|k| self.confusion[k][k])
            .sum();
        correct as f64 / self.count as f64
    }

    /// Human-readable table of per-class recall followed by the mean.
    pub fn to_table(&self, classes: &[String]) -> String {
        let width = classes.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>8}  {:>6}\n", "class", "accuracy", "n");
        for (k, acc) in self.per_class.iter().enumerate() {
            let name = classes.get(k).map_or_else(|| k.to_string(), Clone::clone);
            let n: usize = self.confusion[k].iter().sum();
            let acc = acc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(out, "{name:<width$}  {acc:>8}  {n:>6}");
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>6}",
            "mean", self.mean_class_accuracy, self.count
        );
        out
    }

    /// `metric<TAB>name<TAB>value` lines.
    pub fn to_metric_lines(&self, prefix: &str, classes: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "metric\t{prefix}mean_class_accuracy\t{:.6}",
            self.mean_class_accuracy
        );
        let _ = writeln!(
            out,
            "metric\t{prefix}overall_accuracy\t{:.6}",
            self.overall_accuracy()
        );
        let _ = writeln!(out, "metric\t{prefix}count\t{}", self.count);
        for (k, acc) in self.per_class.iter().enumerate() {
            if let Some(a) = acc {
                let name = classes.get(k).map_or_else(|| k.to_string(), Clone::clone);
                let _ = writeln!(out, "metric\t{prefix}accuracy/{name}\t{a:.6}");
            }
        }
        out
    }
}

/// Mean over represented classes of per-class recall.
pub fn mean_class_accuracy(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<f64> {
    Ok(EvalReport::new(predictions, labels, num_classes)?.mean_class_accuracy)
}

/// Elementwise mean of per-frame probability vectors.
pub fn average_predictions(per_frame: &[Tensor]) -> Result<Tensor> {
    let first = per_frame.first().ok_or(Error::Empty("frame predictions"))?;
    let k = first.len();
    let mut acc = vec![0.0; k];
    for p in per_frame {
        if p.len() != k {
            return Err(shape_err(
                "average_predictions",
                format!("widths {k} and {}", p.len()),
            ));
        }
        for (a, v) in acc.iter_mut().zip(p.data()) {
            *a += v;
        }
    }
    let n = per_frame.len() as f64;
    Ok(Tensor::vector(acc.into_iter().map(|a| a / n).collect()))
}
