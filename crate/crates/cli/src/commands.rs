use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use amh_core::amh::{AttentionSharing, AttentionTrace};
use amh_core::data::{
    describe_synthetic, generate_synthetic, load_corpus, make_folds, write_corpus, Corpus,
    ExpectedDims, SyntheticRule, SyntheticSpec,
};
use amh_core::model::{load_checkpoint, save_checkpoint};
use amh_core::model::{BatchObjective, LabelSet, ModelConfig, ModelKind, ModelParams};
use amh_core::parallel::{self, Execution};
use amh_core::report::{
    confusion_csv, pooled_confusion, sweep_csv, sweep_text, train_text, write_atomic,
};
use amh_core::tensor::{grad_check, Fault, GradCheckConfig};
use amh_core::trainer::{evaluate, hop_sweep, train_with_hook, RunResult, TrainConfig};
use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{parse_hop_range, resolve, usage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Amh,
    Mdre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    PerTarget,
    PerHop,
}

impl From<Sharing> for AttentionSharing {
    fn from(s: Sharing) -> Self {
        match s {
            Sharing::PerTarget => AttentionSharing::PerTarget,
            Sharing::PerHop => AttentionSharing::PerHop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Copy,
    Xor3,
}

/// Flags shared by `train` and `sweep`. Every flag may also be set in the
/// `--config` file; flags given on the command line win.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// key = value TOML file with defaults for any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Manifest TSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<Kind>,
    /// Hop count (`train`) or range such as `1..9` or `1,3,7` (`sweep`).
    #[arg(long)]
    #[serde(default, deserialize_with = "crate::config::string_or_number")]
    pub hops: Option<String>,
    /// Encoder hidden size.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Defaults to one past the largest token id in the corpus.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Required audio feature dimension (inferred when omitted).
    #[arg(long)]
    pub audio_dim: Option<usize>,
    /// Required video feature dimension (inferred when omitted).
    #[arg(long)]
    pub video_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub sharing: Option<Sharing>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Runs (seeds) per fold.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum concurrent (fold, run) workers.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Save the kept weights of every run under `<out>/checkpoints`.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub save_checkpoints: Option<bool>,
}

pub type SweepArgs = TrainArgs;

/// Effective settings after config merge and defaults.
#[derive(Clone, Debug, Serialize)]
struct RunSettings {
    data: PathBuf,
    model: Kind,
    hops: Vec<usize>,
    hidden: usize,
    embed_dim: usize,
    vocab_size: Option<usize>,
    audio_dim: Option<usize>,
    video_dim: Option<usize>,
    sharing: Sharing,
    lr: f64,
    clip: f64,
    batch_size: usize,
    epochs: usize,
    patience: usize,
    folds: usize,
    runs: usize,
    seed: u64,
    out: PathBuf,
    parallel: usize,
    save_checkpoints: bool,
}

fn positive<T: PartialOrd + Default + Copy>(name: &str, v: T) -> anyhow::Result<T> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(usage(format!("{name} must be positive")))
    }
}

impl RunSettings {
    fn from_args(args: &TrainArgs, sweep: bool) -> anyhow::Result<Self> {
        let a = resolve(args, args.config.as_deref())?;
        let model = a.model.unwrap_or(Kind::Amh);
        let hops_text = a
            .hops
            .clone()
            .unwrap_or_else(|| if sweep { "1..9" } else { "3" }.into());
        let hops = if sweep {
            parse_hop_range(&hops_text)?
        } else {
            let h: i64 = hops_text
                .trim()
                .parse()
                .map_err(|_| usage(format!("invalid hop count {hops_text:?}")))?;
            if h < 1 {
                return Err(usage("hops must be ≥ 1"));
            }
            vec![h as usize]
        };
        if sweep && model == Kind::Mdre {
            return Err(usage("sweep varies hops and needs --model amh"));
        }
        let s = RunSettings {
            data: a.data.ok_or_else(|| usage("--data is required"))?,
            model,
            hops,
            hidden: positive("hidden", a.hidden.unwrap_or(200))?,
            embed_dim: positive("embed-dim", a.embed_dim.unwrap_or(100))?,
            vocab_size: a
                .vocab_size
                .map(|v| positive("vocab-size", v))
                .transpose()?,
            audio_dim: a.audio_dim.map(|v| positive("audio-dim", v)).transpose()?,
            video_dim: a.video_dim.map(|v| positive("video-dim", v)).transpose()?,
            sharing: a.sharing.unwrap_or(Sharing::PerTarget),
            lr: positive("lr", a.lr.unwrap_or(1e-3))?,
            clip: positive("clip", a.clip.unwrap_or(1.0))?,
            batch_size: positive("batch-size", a.batch_size.unwrap_or(32))?,
            epochs: positive("epochs", a.epochs.unwrap_or(100))?,
            patience: positive("patience", a.patience.unwrap_or(10))?,
            folds: a.folds.unwrap_or(10),
            runs: positive("runs", a.runs.unwrap_or(10))?,
            seed: a.seed.unwrap_or(0),
            out: a.out.unwrap_or_else(|| PathBuf::from("amh-out")),
            parallel: positive("parallel", a.parallel.unwrap_or(1))?,
            save_checkpoints: a.save_checkpoints.unwrap_or(false),
        };
        if s.folds < 3 {
            return Err(usage("folds must be at least 3"));
        }
        if !s.data.exists() {
            return Err(usage(format!(
                "manifest {} does not exist",
                s.data.display()
            )));
        }
        Ok(s)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            clip_norm: self.clip,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            runs_per_fold: self.runs,
            seed: self.seed,
            execution: Execution::Parallel,
        }
    }

    fn model_config(&self, corpus: &Corpus, n_hops: usize) -> anyhow::Result<ModelConfig> {
        let needed = corpus.max_token();
        let vocab_size = self.vocab_size.unwrap_or(needed);
        if vocab_size < needed {
            bail!("vocab size {vocab_size} is smaller than the largest token id + 1 ({needed})");
        }
        let kind = match self.model {
            Kind::Amh => ModelKind::Amh { n_hops },
            Kind::Mdre => ModelKind::Mdre,
        };
        Ok(ModelConfig {
            kind,
            audio_dim: corpus.audio_dim().context("corpus is empty")?,
            video_dim: corpus.video_dim().context("corpus is empty")?,
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden,
            sharing: self.sharing.into(),
            labels: corpus.labels.clone(),
        })
    }

    fn load(&self) -> anyhow::Result<Corpus> {
        let dims = ExpectedDims {
            audio: self.audio_dim,
            video: self.video_dim,
        };
        Ok(load_corpus(&self.data, dims)?)
    }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    /// Seconds since the Unix epoch; the only nondeterministic field.
    generated_at: u64,
    command: &'a str,
    config: &'a C,
    report: &'a R,
}

fn write_json<C: Serialize, R: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
    report: &R,
) -> anyhow::Result<()> {
    let generated_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let env = Envelope {
        generated_at,
        command,
        config,
        report,
    };
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn checkpoint_hook(
    dir: Option<PathBuf>,
) -> impl Fn(&RunResult, &ModelParams) -> amh_core::Result<()> + Sync {
    move |r, params| match &dir {
        Some(d) => save_checkpoint(
            params,
            &d.join(format!("fold{:02}_run{:02}.amh", r.fold, r.run)),
        ),
        None => Ok(()),
    }
}

pub fn train(args: TrainArgs) -> anyhow::Result<u8> {
    let s = RunSettings::from_args(&args, false)?;
    let corpus = s.load()?;
    let config = s.model_config(&corpus, s.hops[0])?;
    let folds = make_folds(&corpus.ids(), s.folds, s.seed)?;
    let tc = s.train_config();
    let hook = checkpoint_hook(s.save_checkpoints.then(|| s.out.join("checkpoints")));
    let report = parallel::with_threads(s.parallel, || {
        train_with_hook(
            &config,
            &corpus.samples,
            &folds,
            &tc,
            Some(corpus.manifest_hash.clone()),
            &hook,
        )
    })?;

    write_json(&s.out.join("report.json"), "train", &s, &report)?;
    let text = train_text(&report);
    write_atomic(&s.out.join("report.txt"), text.as_bytes())?;
    if let Some(pooled) = pooled_confusion(&report) {
        write_atomic(
            &s.out.join("confusion.csv"),
            confusion_csv(&pooled, &config.labels).as_bytes(),
        )?;
    }
    print!("{text}");
    println!("reports written to {}", s.out.display());
    Ok(0)
}

pub fn sweep(args: SweepArgs) -> anyhow::Result<u8> {
    let s = RunSettings::from_args(&args, true)?;
    let corpus = s.load()?;
    let base = s.model_config(&corpus, s.hops[0])?;
    let folds = make_folds(&corpus.ids(), s.folds, s.seed)?;
    let tc = s.train_config();
    let sweep = parallel::with_threads(s.parallel, || {
        hop_sweep(
            &base,
            &corpus.samples,
            &folds,
            &s.hops,
            &tc,
            Some(corpus.manifest_hash.clone()),
        )
    })?;
    write_json(&s.out.join("sweep.json"), "sweep", &s, &sweep)?;
    write_atomic(&s.out.join("sweep.csv"), sweep_csv(&sweep).as_bytes())?;
    let text = sweep_text(&sweep);
    write_atomic(&s.out.join("sweep.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(0)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; reports go to stdout only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallel: Option<usize>,
}

fn load_for_checkpoint(checkpoint: &Path, data: &Path) -> anyhow::Result<(ModelParams, Corpus)> {
    let params = load_checkpoint(checkpoint)?;
    let dims = ExpectedDims {
        audio: Some(params.config.audio_dim),
        video: Some(params.config.video_dim),
    };
    let corpus = load_corpus(data, dims)?;
    if corpus.labels != params.config.labels {
        bail!("corpus label set does not match the checkpoint's");
    }
    Ok((params, corpus))
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    manifest_hash: &'a str,
    model: String,
}

pub fn eval(args: EvalArgs) -> anyhow::Result<u8> {
    let a = resolve(&args, args.config.as_deref())?;
    let checkpoint = a
        .checkpoint
        .ok_or_else(|| usage("--checkpoint is required"))?;
    let data = a.data.ok_or_else(|| usage("--data is required"))?;
    let threads = positive("parallel", a.parallel.unwrap_or(1))?;
    let (params, corpus) = load_for_checkpoint(&checkpoint, &data)?;
    let report = parallel::with_threads(threads, || {
        evaluate(&params, &corpus.samples, Execution::Parallel)
    })?;
    let summary = format!(
        "{}: {} samples  WA {:.4}  UA {:.4}  loss {:.4}\n",
        params.config.kind.label(),
        report.n_samples,
        report.wa,
        report.ua,
        report.loss
    );
    print!("{summary}");
    if let Some(out) = a.out {
        let echo = EvalEcho {
            checkpoint: &checkpoint,
            data: &data,
            manifest_hash: &corpus.manifest_hash,
            model: params.config.kind.label(),
        };
        write_json(&out.join("eval.json"), "eval", &echo, &report)?;
        write_atomic(&out.join("eval.txt"), summary.as_bytes())?;
        write_atomic(
            &out.join("confusion.csv"),
            confusion_csv(&report, &params.config.labels).as_bytes(),
        )?;
    }
    Ok(0)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<Kind>,
    #[arg(long)]
    pub hops: Option<i64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Batch size of the synthetic batch.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Check at most this many entries per tensor.
    #[arg(long)]
    pub max_entries: Option<usize>,
    #[arg(long, value_enum)]
    pub sharing: Option<Sharing>,
    /// Test fixture: deliberately corrupt a backward rule.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Tiny shapes for the gradient check batch.
const GC_AUDIO: usize = 5;
const GC_VIDEO: usize = 6;
const GC_VOCAB: usize = 10;
const GC_EMBED: usize = 4;
const GC_CLASSES: usize = 4;

pub fn gradcheck(args: GradcheckArgs) -> anyhow::Result<u8> {
    let a = resolve(&args, args.config.as_deref())?;
    let hops = a.hops.unwrap_or(3);
    if hops < 1 {
        return Err(usage("hops must be ≥ 1"));
    }
    let kind = match a.model.unwrap_or(Kind::Amh) {
        Kind::Amh => ModelKind::Amh {
            n_hops: hops as usize,
        },
        Kind::Mdre => ModelKind::Mdre,
    };
    let faults = match a.inject_fault.as_deref() {
        None => vec![],
        Some("flip-attention-w") => vec![Fault::FlipAttentionWeightGrad],
        Some(other) => return Err(usage(format!("unknown fault {other:?}"))),
    };
    let seed = a.seed.unwrap_or(0);
    let spec = SyntheticSpec {
        n_samples: positive("samples", a.samples.unwrap_or(4))?,
        min_len: 2,
        max_len: 5,
        audio_dim: GC_AUDIO,
        video_dim: GC_VIDEO,
        vocab_size: GC_VOCAB,
        n_classes: GC_CLASSES,
        noise: 0.5,
        salient_rate: 1.0,
        rule: SyntheticRule::Xor3,
        seed,
    };
    let batch = generate_synthetic(&spec)?;
    let config = ModelConfig {
        kind,
        audio_dim: GC_AUDIO,
        video_dim: GC_VIDEO,
        vocab_size: GC_VOCAB,
        embed_dim: GC_EMBED,
        hidden_dim: positive("hidden", a.hidden.unwrap_or(16))?,
        sharing: a.sharing.unwrap_or(Sharing::PerTarget).into(),
        labels: LabelSet::generic(GC_CLASSES)?,
    };
    let params = ModelParams::init(config, seed)?;
    let objective = BatchObjective {
        samples: &batch,
        faults,
    };
    let defaults = GradCheckConfig::default();
    let cfg = GradCheckConfig {
        epsilon: positive("epsilon", a.epsilon.unwrap_or(defaults.epsilon))?,
        tolerance: positive("tolerance", a.tolerance.unwrap_or(defaults.tolerance))?,
        max_entries_per_tensor: a.max_entries,
        ..defaults
    };
    let report = grad_check(&params, &objective, &cfg)?;
    println!(
        "gradient check: {} on {} samples",
        kind.label(),
        batch.len()
    );
    print!("{}", report.to_table());
    if report.passed() {
        println!("PASS (max relative error {:.3e})", report.max_rel_error());
        Ok(0)
    } else {
        eprintln!("FAIL: {}", report.failing().join(", "));
        Ok(1)
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rule: Option<Rule>,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frame noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of frames/tokens that carry the code.
    #[arg(long)]
    pub salient_rate: Option<f64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub audio_dim: Option<usize>,
    #[arg(long)]
    pub video_dim: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Output directory for the manifest and feature files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn synth(args: SynthArgs) -> anyhow::Result<u8> {
    let a = resolve(&args, args.config.as_deref())?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_samples: positive("n", a.n.unwrap_or(d.n_samples))?,
        min_len: a.min_len.unwrap_or(d.min_len),
        max_len: a.max_len.unwrap_or(d.max_len),
        audio_dim: a.audio_dim.unwrap_or(d.audio_dim),
        video_dim: a.video_dim.unwrap_or(d.video_dim),
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
        n_classes: a.classes.unwrap_or(d.n_classes),
        noise: a.noise.unwrap_or(d.noise),
        salient_rate: a.salient_rate.unwrap_or(d.salient_rate),
        rule: match a.rule.unwrap_or(Rule::Xor3) {
            Rule::Copy => SyntheticRule::Copy,
            Rule::Xor3 => SyntheticRule::Xor3,
        },
        seed: a.seed.unwrap_or(0),
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let out = a.out.unwrap_or_else(|| PathBuf::from("synthetic"));
    let samples = generate_synthetic(&spec)?;
    let labels = LabelSet::generic(spec.n_classes)?;
    let manifest = write_corpus(&out, &samples, &labels)?;
    let description = describe_synthetic(&spec);
    write_atomic(&out.join("SYNTHETIC.txt"), description.as_bytes())?;
    print!("{description}");
    println!("manifest: {}", manifest.display());
    Ok(0)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sample id to trace; repeatable. All samples when omitted.
    #[arg(long)]
    pub sample: Option<Vec<String>>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn inspect_attention(args: InspectArgs) -> anyhow::Result<u8> {
    let a = resolve(&args, args.config.as_deref())?;
    let checkpoint = a
        .checkpoint
        .ok_or_else(|| usage("--checkpoint is required"))?;
    let data = a.data.ok_or_else(|| usage("--data is required"))?;
    let (params, corpus) = load_for_checkpoint(&checkpoint, &data)?;
    if params.config.kind == ModelKind::Mdre {
        return Err(usage(
            "the checkpoint is a baseline model without attention",
        ));
    }
    let selected: Vec<_> = match &a.sample {
        None => corpus.samples.iter().collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                corpus
                    .samples
                    .iter()
                    .find(|s| &s.id == id)
                    .with_context(|| format!("sample {id} is not in the manifest"))
            })
            .collect::<anyhow::Result<_>>()?,
    };
    let mut trace = AttentionTrace::default();
    for s in selected {
        trace.insert(&s.id, &params.forward(s)?.trace);
    }
    let mut json = trace.to_json()?;
    json.push('\n');
    match a.out {
        Some(path) => write_atomic(&path, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(0)
}
