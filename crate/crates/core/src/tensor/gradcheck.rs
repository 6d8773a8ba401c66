use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::error::{Error, Result};
use crate::parallel;

/// A scalar function of a parameter set with an analytic gradient.
pub trait Objective<P> {
    fn loss(&self, params: &P) -> Result<f64>;

    /// Loss plus one gradient vector per tensor, in `ParameterSet::tensors`
    /// order.
    fn loss_and_grads(&self, params: &P) -> Result<(f64, Vec<Vec<f64>>)>;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged by absolute error instead.
    pub denominator_floor: f64,
    /// Check at most this many evenly spaced coordinates per tensor.
    pub max_entries_per_tensor: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
            denominator_floor: 1e-6,
            max_entries_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub loss: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.name.as_str())
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Aligned text table, one line per parameter tensor.
    pub fn to_table(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(4)
            .max(9);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>12}  {:>12}  status\n",
            "parameter", "checked", "max_rel_err", "max_abs_err"
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>12.3e}  {:>12.3e}  {}\n",
                e.name,
                e.checked,
                e.max_rel_error,
                e.max_abs_error,
                if e.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

fn checked_indices(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len && k > 0 => (0..k).map(|i| i * len / k).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares the analytic gradient of `objective` against central differences
/// (f(p+ε) − f(p−ε)) / 2ε, coordinate by coordinate, and reports the worst
/// relative error per tensor. Coordinates are evaluated in parallel, each
/// worker perturbing its own copy of the parameters.
pub fn grad_check<P, O>(
    params: &P,
    objective: &O,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    P: ParameterSet + Clone + Sync,
    O: Objective<P> + Sync,
{
    if config.epsilon <= 0.0 {
        return Err(Error::Config(
            "gradient-check epsilon must be positive".into(),
        ));
    }
    let (loss, analytic) = objective.loss_and_grads(params)?;
    let names = params.names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
    if analytic.len() != sizes.len() {
        return Err(Error::Config(format!(
            "objective returned {} gradients for {} tensors",
            analytic.len(),
            sizes.len()
        )));
    }

    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| {
            checked_indices(n, config.max_entries_per_tensor)
                .into_iter()
                .map(move |i| (t, i))
        })
        .collect();

    const CHUNK: usize = 64;
    let n_chunks = jobs.len().div_ceil(CHUNK);
    let eps = config.epsilon;
    let numeric: Vec<Result<Vec<f64>>> = parallel::map_indexed(n_chunks, |c| {
        let mut local = params.clone();
        let chunk = &jobs[c * CHUNK..((c + 1) * CHUNK).min(jobs.len())];
        let mut out = Vec::with_capacity(chunk.len());
        for &(t, i) in chunk {
            let original = local.tensors()[t].data()[i];
            local.tensors_mut()[t].data_mut()[i] = original + eps;
            let plus = objective.loss(&local)?;
            local.tensors_mut()[t].data_mut()[i] = original - eps;
            let minus = objective.loss(&local)?;
            local.tensors_mut()[t].data_mut()[i] = original;
            out.push((plus - minus) / (2.0 * eps));
        }
        Ok(out)
    });

    let mut entries: Vec<GradCheckEntry> = names
        .into_iter()
        .map(|name| GradCheckEntry {
            name,
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            passed: true,
        })
        .collect();
    let numeric = numeric.into_iter().collect::<Result<Vec<_>>>()?;
    for (&(t, i), num) in jobs.iter().zip(numeric.into_iter().flatten()) {
        let ana = analytic[t][i];
        let abs = (ana - num).abs();
        let rel = abs / ana.abs().max(num.abs()).max(config.denominator_floor);
        let e = &mut entries[t];
        e.checked += 1;
        e.max_abs_error = e.max_abs_error.max(abs);
        if rel > e.max_rel_error || !rel.is_finite() {
            e.max_rel_error = rel;
            e.worst_index = i;
        }
    }
    for e in &mut entries {
        e.passed = e.max_rel_error.is_finite() && e.max_rel_error < config.tolerance;
    }
    Ok(GradCheckReport {
        epsilon: config.epsilon,
        tolerance: config.tolerance,
        loss,
        entries,
    })
}
