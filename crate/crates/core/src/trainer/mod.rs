//! Minibatch training with clipping and Adam, dev-accuracy early stopping,
//! and cross-validated experiment drivers.

mod metrics;
mod optim;
mod probe;

pub use metrics::{evaluate, score, EvalReport};
pub use optim::{adam_step, clip_gradients, global_grad_norm, AdamConfig, AdamState};
pub use probe::{pooled, probe_modalities, LogisticProbe, ProbeConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FoldSplit, MultimodalSample};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind, ModelParams};
use crate::parallel::{self, Execution};
use crate::tensor::ParameterSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev improvement before stopping.
    pub patience: usize,
    pub runs_per_fold: usize,
    pub seed: u64,
    /// How per-sample gradients inside a minibatch are computed. Either mode
    /// gives bit-identical results.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            clip_norm: 1.0,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            runs_per_fold: 10,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
            || self.runs_per_fold == 0
        {
            return bad("batch size, epochs, patience and runs per fold must be positive");
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one (fold, run) pair, independent of scheduling order.
pub fn run_seed(seed: u64, fold: usize, run: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(((fold as u64) << 32) | run as u64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    pub epochs_trained: usize,
    /// 1-based epoch whose weights were kept (0: the initial weights).
    pub best_epoch: usize,
    pub best_dev_wa: Option<f64>,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    /// Mean minibatch loss per epoch.
    pub loss_history: Vec<f64>,
    pub dev: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

/// Trains one model from `seed`. With a nonempty `dev` set the weights of
/// the best dev-WA epoch are restored at the end and training stops after
/// `patience` epochs without improvement; otherwise the last weights are
/// kept.
pub fn train_run(
    config: &ModelConfig,
    train: &[MultimodalSample],
    dev: &[MultimodalSample],
    test: &[MultimodalSample],
    tc: &TrainConfig,
    fold: usize,
    run: usize,
) -> Result<(ModelParams, RunResult)> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let seed = run_seed(tc.seed, fold, run);
    let mut params = ModelParams::init(config.clone(), seed)?;
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: tc.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let exec = tc.execution;

    let initial_train_loss = params.batch_loss(train, exec)?;
    let mut best: Option<(f64, usize, ModelParams)> = None;
    if !dev.is_empty() {
        let wa = evaluate(&params, dev, exec)?.wa;
        best = Some((wa, 0, params.clone()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut epochs_trained = 0;
    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<MultimodalSample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = params.batch_loss_and_grads(&batch, exec, &[])?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { fold, run, epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            params.zero_grads();
            params.accumulate_grads(&grads);
            clip_gradients(&mut params, tc.clip_norm);
            adam_step(&mut params, &mut adam);
        }
        history.push(epoch_loss / train.len() as f64);
        epochs_trained = epoch;
        if let Some((best_wa, best_epoch, snapshot)) = &mut best {
            let wa = evaluate(&params, dev, exec)?.wa;
            if wa > *best_wa {
                *best_wa = wa;
                *best_epoch = epoch;
                *snapshot = params.clone();
            } else if epoch - *best_epoch >= tc.patience {
                break;
            }
        }
    }

    let (best_dev_wa, best_epoch) = match best {
        Some((wa, epoch, snapshot)) => {
            params = snapshot;
            (Some(wa), epoch)
        }
        None => (None, epochs_trained),
    };
    params
        .tensors_mut()
        .into_iter()
        .for_each(|t| t.clear_grad());
    let final_train_loss = params.batch_loss(train, exec)?;
    let with_fold = |mut r: EvalReport| {
        r.fold = Some(fold);
        r
    };
    let dev_report = if dev.is_empty() {
        None
    } else {
        Some(with_fold(evaluate(&params, dev, exec)?))
    };
    let test_report = if test.is_empty() {
        None
    } else {
        Some(with_fold(evaluate(&params, test, exec)?))
    };
    Ok((
        params,
        RunResult {
            fold,
            run,
            seed,
            epochs_trained,
            best_epoch,
            best_dev_wa,
            initial_train_loss,
            final_train_loss,
            loss_history: history,
            dev: dev_report,
            test: test_report,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single value).
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Test-set WA or UA aggregated three ways: over fold means, over run-index
/// means, and over every (fold, run) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub across_folds: MeanStd,
    pub across_runs: MeanStd,
    pub across_all: MeanStd,
}

impl Spread {
    fn from_runs(runs: &[RunResult], pick: impl Fn(&EvalReport) -> f64) -> Self {
        let tested: Vec<(usize, usize, f64)> = runs
            .iter()
            .filter_map(|r| r.test.as_ref().map(|t| (r.fold, r.run, pick(t))))
            .collect();
        let group_means = |key: &dyn Fn(&(usize, usize, f64)) -> usize| {
            let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            for t in &tested {
                groups.entry(key(t)).or_default().push(t.2);
            }
            groups
                .values()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect::<Vec<_>>()
        };
        let all: Vec<f64> = tested.iter().map(|t| t.2).collect();
        Spread {
            across_folds: MeanStd::of(&group_means(&|t| t.0)),
            across_runs: MeanStd::of(&group_means(&|t| t.1)),
            across_all: MeanStd::of(&all),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub wa: Spread,
    pub ua: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub manifest_hash: Option<String>,
    pub n_folds: usize,
    /// Ordered by (fold, run).
    pub runs: Vec<RunResult>,
    pub summary: TrainSummary,
}

fn select<'a>(
    index: &std::collections::HashMap<&str, &'a MultimodalSample>,
    ids: &[String],
) -> Result<Vec<MultimodalSample>> {
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::Config(format!("fold references unknown id {id}")))
        })
        .collect()
}

/// Runs every (fold, run) pair, in parallel where available, and merges the
/// results in (fold, run) order.
pub fn train(
    config: &ModelConfig,
    samples: &[MultimodalSample],
    folds: &[FoldSplit],
    tc: &TrainConfig,
    manifest_hash: Option<String>,
) -> Result<TrainReport> {
    train_with_hook(config, samples, folds, tc, manifest_hash, &|_, _| Ok(()))
}

/// Called with each finished run and its restored weights, possibly from
/// several threads at once.
pub type RunHook<'a> = dyn Fn(&RunResult, &ModelParams) -> Result<()> + Sync + 'a;

/// `train`, invoking `hook` once per (fold, run) before the results merge.
pub fn train_with_hook(
    config: &ModelConfig,
    samples: &[MultimodalSample],
    folds: &[FoldSplit],
    tc: &TrainConfig,
    manifest_hash: Option<String>,
    hook: &RunHook<'_>,
) -> Result<TrainReport> {
    config.validate()?;
    tc.validate()?;
    if folds.is_empty() {
        return Err(Error::EmptyInput("folds"));
    }
    let index: std::collections::HashMap<&str, &MultimodalSample> =
        samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let splits = folds
        .iter()
        .map(|f| {
            Ok((
                f.fold,
                select(&index, &f.train)?,
                select(&index, &f.dev)?,
                select(&index, &f.test)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs = splits.len() * tc.runs_per_fold;
    let results = parallel::map_indexed(jobs, |j| {
        let (fold, train, dev, test) = &splits[j / tc.runs_per_fold];
        let (params, result) =
            train_run(config, train, dev, test, tc, *fold, j % tc.runs_per_fold)?;
        hook(&result, &params)?;
        Ok(result)
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = TrainSummary {
        wa: Spread::from_runs(&runs, |r| r.wa),
        ua: Spread::from_runs(&runs, |r| r.ua),
    };
    Ok(TrainReport {
        model: config.kind.label(),
        model_config: config.clone(),
        train_config: tc.clone(),
        manifest_hash,
        n_folds: folds.len(),
        runs,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_hops: usize,
    pub wa: MeanStd,
    pub ua: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<TrainReport>,
}

/// Trains a hopping model for every hop count and tabulates test WA/UA
/// (mean and std over all runs).
pub fn hop_sweep(
    base: &ModelConfig,
    samples: &[MultimodalSample],
    folds: &[FoldSplit],
    hops: &[usize],
    tc: &TrainConfig,
    manifest_hash: Option<String>,
) -> Result<SweepReport> {
    if hops.is_empty() {
        return Err(Error::Config("hop range is empty".into()));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &n_hops in hops {
        let config = ModelConfig {
            kind: ModelKind::Amh { n_hops },
            ..base.clone()
        };
        let report = train(&config, samples, folds, tc, manifest_hash.clone())?;
        rows.push(SweepRow {
            n_hops,
            wa: report.summary.wa.across_all,
            ua: report.summary.ua.across_all,
        });
        reports.push(report);
    }
    Ok(SweepReport { rows, reports })
}
