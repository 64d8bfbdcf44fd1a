//! Confusion matrices, classification metrics and report rendering.
//!
//! All reported values are percentages. Precision, recall and F1 come as
//! macro averages (unweighted class mean) and weighted averages (class mean
//! weighted by true-class support). The text table shows the weighted
//! figures, for which recall equals accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
    /// Rejected examples per true class; kept out of `counts`.
    pub unknown: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn unknown_count(&self) -> u64 {
        self.unknown.iter().sum()
    }

    /// Examples tallied, rejected ones included.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unknown_count()
    }
}

/// Tallies predictions. `None` predictions are rejections.
pub fn confuse(
    truth: &[usize],
    predicted: &[Option<usize>],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let c = classes.len();
    let mut counts = vec![vec![0u64; c]; c];
    let mut unknown = vec![0u64; c];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= c || p.is_some_and(|p| p >= c) {
            return Err(Error::Argument(format!("label index outside {c} classes")));
        }
        match p {
            Some(p) => counts[t][p] += 1,
            None => unknown[t] += 1,
        }
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
        unknown,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub per_class: Vec<ClassMetrics>,
    pub unknown_count: u64,
    pub total: u64,
    /// Classes never predicted; their precision is reported as 0.
    pub unpredicted_classes: Vec<String>,
}

impl EvalReport {
    /// Recall of each class, which is its per-class accuracy.
    pub fn per_class_accuracy(&self) -> Vec<(String, f64)> {
        self.per_class
            .iter()
            .map(|c| (c.label.clone(), c.recall))
            .collect()
    }
}

/// `100 * num / den` with a single rounding, so exact fractions such as
/// 8/11 come out as the nearest double to the true percentage.
fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        (100 * num) as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    let c = cm.classes.len();
    let diag: Vec<u64> = (0..c).map(|i| cm.counts[i][i]).collect();
    let support: Vec<u64> = (0..c)
        .map(|i| cm.counts[i].iter().sum::<u64>() + cm.unknown[i])
        .collect();
    let col: Vec<u64> = (0..c)
        .map(|j| (0..c).map(|i| cm.counts[i][j]).sum())
        .collect();

    let mut per_class = Vec::with_capacity(c);
    let mut unpredicted = Vec::new();
    for i in 0..c {
        if col[i] == 0 {
            unpredicted.push(cm.classes[i].clone());
        }
        per_class.push(ClassMetrics {
            label: cm.classes[i].clone(),
            precision: pct(diag[i], col[i]),
            recall: pct(diag[i], support[i]),
            // harmonic mean of precision and recall, as one fraction
            f1: pct(2 * diag[i], col[i] + support[i]),
            support: support[i],
        });
    }
    // classes absent from the truth do not enter the averages
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let n_present = present.len().max(1) as f64;
    let macro_avg = Averages {
        precision: present.iter().map(|m| m.precision).sum::<f64>() / n_present,
        recall: present.iter().map(|m| m.recall).sum::<f64>() / n_present,
        f1: present.iter().map(|m| m.f1).sum::<f64>() / n_present,
    };
    let w = |f: fn(&ClassMetrics) -> f64| {
        present.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let weighted_avg = Averages {
        precision: w(|m| m.precision),
        recall: w(|m| m.recall),
        f1: w(|m| m.f1),
    };
    Ok(EvalReport {
        accuracy: pct(diag.iter().sum(), total),
        macro_avg,
        weighted_avg,
        per_class,
        unknown_count: cm.unknown_count(),
        total,
        unpredicted_classes: unpredicted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Serialize, Deserialize)]
struct NamedReport {
    classifier: String,
    report: EvalReport,
}

/// One row per classifier, in the given order.
pub fn render_report(reports: &[(String, EvalReport)], format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => {
            let width = reports
                .iter()
                .map(|(n, _)| n.len())
                .max()
                .unwrap_or(0)
                .max(10);
            let mut out = format!(
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n",
                "Classifier", "Acc", "Prec", "Rec", "F1"
            );
            for (name, r) in reports {
                out.push_str(&format!(
                    "{:<width$}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}\n",
                    name,
                    r.accuracy,
                    r.weighted_avg.precision,
                    r.weighted_avg.recall,
                    r.weighted_avg.f1
                ));
            }
            out
        }
        ReportFormat::Json => {
            let named: Vec<NamedReport> = reports
                .iter()
                .map(|(n, r)| NamedReport {
                    classifier: n.clone(),
                    report: r.clone(),
                })
                .collect();
            serde_json::to_string_pretty(&named).expect("report serialises")
        }
    }
}

pub fn parse_json_report(text: &str) -> Result<Vec<(String, EvalReport)>> {
    let named: Vec<NamedReport> = crate::evm::parse_json(text)?;
    Ok(named
        .into_iter()
        .map(|n| (n.classifier, n.report))
        .collect())
}

/// `label,accuracy` rows for plotting per-class accuracy.
pub fn per_class_csv(report: &EvalReport) -> String {
    let mut out = String::from("label,accuracy\n");
    for (label, acc) in report.per_class_accuracy() {
        out.push_str(&format!("{label},{acc}\n"));
    }
    out
}
