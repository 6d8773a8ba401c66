use serde::{Deserialize, Serialize};

use crate::data::MultimodalSample;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::parallel::{self, Execution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: Option<usize>,
    pub n_samples: usize,
    /// Overall accuracy.
    pub wa: f64,
    /// Mean recall over classes that have support.
    pub ua: f64,
    /// Row c: distribution of predictions for true class c (all zeros when
    /// class c has no support).
    pub confusion: Vec<Vec<f64>>,
    pub support: Vec<usize>,
    /// Mean cross-entropy of the true labels.
    pub loss: f64,
}

/// Builds a report from true labels and predicted classes.
pub fn score(labels: &[usize], predicted: &[usize], n_classes: usize) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    if labels.len() != predicted.len() {
        return Err(Error::shape("score", &[labels.len()], &[predicted.len()]));
    }
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    for (&y, &p) in labels.iter().zip(predicted) {
        for v in [y, p] {
            if v >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: v,
                    classes: n_classes,
                });
            }
        }
        counts[y][p] += 1;
    }
    let support: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let correct: usize = (0..n_classes).map(|c| counts[c][c]).sum();
    let confusion: Vec<Vec<f64>> = counts
        .iter()
        .zip(&support)
        .map(|(row, &n)| {
            row.iter()
                .map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
                .collect()
        })
        .collect();
    let present: Vec<usize> = (0..n_classes).filter(|&c| support[c] > 0).collect();
    // With equal supports the mean recall is correct / total; computing it
    // that way keeps UA bit-identical to WA instead of off by rounding.
    let balanced = present.iter().all(|&c| support[c] == support[present[0]]);
    let ua = if balanced {
        correct as f64 / labels.len() as f64
    } else {
        present.iter().map(|&c| confusion[c][c]).sum::<f64>() / present.len() as f64
    };
    Ok(EvalReport {
        fold: None,
        n_samples: labels.len(),
        wa: correct as f64 / labels.len() as f64,
        ua,
        confusion,
        support,
        loss: f64::NAN,
    })
}

/// Scores `model` on `samples`. Pure: the same inputs give the same report.
pub fn evaluate(
    model: &ModelParams,
    samples: &[MultimodalSample],
    exec: Execution,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let preds = parallel::map_with(exec, samples, |s| model.forward(s));
    let mut predicted = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for (p, s) in preds.into_iter().zip(samples) {
        let p = p?;
        loss -= p.probs[s.label].max(f64::MIN_POSITIVE).ln();
        predicted.push(p.argmax());
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut report = score(&labels, &predicted, model.config.n_classes())?;
    report.loss = loss / samples.len() as f64;
    Ok(report)
}
