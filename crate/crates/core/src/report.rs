use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::LabelSet;
use crate::trainer::{EvalReport, SweepReport, TrainReport};

/// Writes via a sibling temp file and rename, so concurrent writers never
/// leave a partially written file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Confusion matrix as CSV with a header row of predicted labels.
pub fn confusion_csv(report: &EvalReport, labels: &LabelSet) -> String {
    let mut out = String::from("true\\pred");
    for name in labels.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",support\n");
    for (i, row) in report.confusion.iter().enumerate() {
        out.push_str(labels.name(i).unwrap_or("?"));
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push_str(&format!(",{}\n", report.support[i]));
    }
    out
}

/// Sums the per-run test confusion counts and renormalizes the rows.
pub fn pooled_confusion(report: &TrainReport) -> Option<EvalReport> {
    let tests: Vec<&EvalReport> = report.runs.iter().filter_map(|r| r.test.as_ref()).collect();
    let c = report.model_config.n_classes();
    let mut counts = vec![vec![0.0; c]; c];
    let mut support = vec![0usize; c];
    let (mut correct, mut total) = (0.0, 0usize);
    for t in &tests {
        for i in 0..c {
            support[i] += t.support[i];
            for j in 0..c {
                counts[i][j] += t.confusion[i][j] * t.support[i] as f64;
            }
        }
        correct += t.wa * t.n_samples as f64;
        total += t.n_samples;
    }
    if total == 0 {
        return None;
    }
    let confusion: Vec<Vec<f64>> = counts
        .iter()
        .zip(&support)
        .map(|(row, &n)| {
            row.iter()
                .map(|k| if n == 0 { 0.0 } else { k / n as f64 })
                .collect()
        })
        .collect();
    let present: Vec<usize> = (0..c).filter(|&i| support[i] > 0).collect();
    let ua = present.iter().map(|&i| confusion[i][i]).sum::<f64>() / present.len() as f64;
    Some(EvalReport {
        fold: None,
        n_samples: total,
        wa: correct / total as f64,
        ua,
        confusion,
        support,
        loss: tests
            .iter()
            .map(|t| t.loss * t.n_samples as f64)
            .sum::<f64>()
            / total as f64,
    })
}

pub fn train_text(report: &TrainReport) -> String {
    let mut out = format!(
        "model {}  folds {}  runs/fold {}  seed {}\n",
        report.model, report.n_folds, report.train_config.runs_per_fold, report.train_config.seed
    );
    if let Some(h) = &report.manifest_hash {
        out.push_str(&format!("manifest {h}\n"));
    }
    out.push_str(&format!(
        "\n{:>4} {:>4} {:>7} {:>6} {:>8} {:>8} {:>8}\n",
        "fold", "run", "epochs", "best", "dev_wa", "test_wa", "test_ua"
    ));
    for r in &report.runs {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        out.push_str(&format!(
            "{:>4} {:>4} {:>7} {:>6} {:>8} {:>8} {:>8}\n",
            r.fold,
            r.run,
            r.epochs_trained,
            r.best_epoch,
            f(r.best_dev_wa),
            f(r.test.as_ref().map(|t| t.wa)),
            f(r.test.as_ref().map(|t| t.ua)),
        ));
    }
    let s = &report.summary;
    out.push_str("\nsummary (test)        WA                 UA\n");
    out.push_str(&format!(
        "  across folds   {}   {}\n",
        s.wa.across_folds, s.ua.across_folds
    ));
    out.push_str(&format!(
        "  across runs    {}   {}\n",
        s.wa.across_runs, s.ua.across_runs
    ));
    out.push_str(&format!(
        "  across all     {}   {}\n",
        s.wa.across_all, s.ua.across_all
    ));
    out
}

pub fn sweep_csv(sweep: &SweepReport) -> String {
    let mut out = String::from("n_hops,wa_mean,wa_std,ua_mean,ua_std,n\n");
    for r in &sweep.rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.n_hops, r.wa.mean, r.wa.std, r.ua.mean, r.ua.std, r.wa.n
        ));
    }
    out
}

pub fn sweep_text(sweep: &SweepReport) -> String {
    let mut out = format!("{:<8} {:<18} {:<18}\n", "model", "WA", "UA");
    for r in &sweep.rows {
        out.push_str(&format!(
            "{:<8} {:<18} {:<18}\n",
            format!("AMH-{}", r.n_hops),
            r.wa.to_string(),
            r.ua.to_string()
        ));
    }
    out
}
