//! Whole-model assembly: three encoders, either the hopping attention or
//! the concat-fusion baseline, and a softmax classification head.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amh::{run_amh, AttentionParams, AttentionSharing, HopRecord};
use crate::data::MultimodalSample;
use crate::encoder::{encode, EmbeddingTable, EncodedModality, GruParams, ModalityInput};
use crate::error::{Error, Result};
use crate::parallel::{self, Execution};
use crate::tensor::{Fault, Objective, ParameterSet, Tape, Tensor, Var};

/// Ordered class names; the index is the integer label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

pub const EMOTIONS: [&str; 7] = [
    "angry",
    "excite",
    "happy",
    "sad",
    "frustrated",
    "surprise",
    "neutral",
];

impl LabelSet {
    pub fn emotions() -> Self {
        LabelSet {
            names: EMOTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config(
                "a label set needs at least two classes".into(),
            ));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::Config("duplicate label names".into()));
        }
        Ok(LabelSet { names })
    }

    /// `c0`, `c1`, ... used by synthetic corpora.
    pub fn generic(n: usize) -> Result<Self> {
        LabelSet::new((0..n).map(|i| format!("c{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet::emotions()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Amh { n_hops: usize },
    Mdre,
}

impl ModelKind {
    pub fn label(&self) -> String {
        match self {
            ModelKind::Amh { n_hops } => format!("AMH-{n_hops}"),
            ModelKind::Mdre => "MDRE".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub sharing: AttentionSharing,
    pub labels: LabelSet,
}

impl ModelConfig {
    /// Full-size feature dimensions: 120-dim audio frames, 2048-dim video
    /// frames, 200 hidden units, 100-dim word embeddings.
    pub fn standard(kind: ModelKind, vocab_size: usize) -> Self {
        ModelConfig {
            kind,
            audio_dim: 120,
            video_dim: 2048,
            vocab_size,
            embed_dim: 100,
            hidden_dim: 200,
            sharing: AttentionSharing::PerTarget,
            labels: LabelSet::emotions(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("audio_dim", self.audio_dim),
            ("video_dim", self.video_dim),
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let ModelKind::Amh { n_hops } = self.kind {
            if n_hops < 1 {
                return Err(Error::Config("hops must be ≥ 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseParams {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        DenseParams {
            w: Tensor::xavier_uniform(&[fan_in, fan_out], rng).with_requires_grad(true),
            b: Tensor::zeros(&[fan_out]).with_requires_grad(true),
        }
    }
}

/// Output layer: logits = fused · W_out + b_out.
pub type ClassifierParams = DenseParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub audio_gru: GruParams,
    pub text_gru: GruParams,
    pub video_gru: GruParams,
    pub embedding: EmbeddingTable,
    pub attention: Option<AttentionParams>,
    /// Hidden tanh layer of the concat-fusion baseline.
    pub fusion_hidden: Option<DenseParams>,
    pub classifier: ClassifierParams,
}

/// Probabilities and, for hopping models, the per-hop attention weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub trace: Vec<HopRecord>,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

struct Bound {
    params: Vec<Var>,
    logits: Var,
    trace: Vec<HopRecord>,
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let audio_gru = GruParams::init(config.audio_dim, d, &mut rng);
        let text_gru = GruParams::init(config.embed_dim, d, &mut rng);
        let video_gru = GruParams::init(config.video_dim, d, &mut rng);
        let embedding = EmbeddingTable::init(config.vocab_size, config.embed_dim, &mut rng);
        let (attention, fusion_hidden, head_in) = match config.kind {
            ModelKind::Amh { n_hops } => (
                Some(AttentionParams::init(d, n_hops, config.sharing, &mut rng)),
                None,
                3 * d,
            ),
            ModelKind::Mdre => (None, Some(DenseParams::init(&mut rng, 3 * d, d)), d),
        };
        let classifier = DenseParams::init(&mut rng, head_in, config.n_classes());
        Ok(ModelParams {
            config,
            audio_gru,
            text_gru,
            video_gru,
            embedding,
            attention,
            fusion_hidden,
            classifier,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    fn check_sample(&self, s: &MultimodalSample) -> Result<()> {
        let c = &self.config;
        if s.audio.dim() != c.audio_dim {
            return Err(Error::FeatureDim {
                sample: s.id.clone(),
                modality: "audio",
                expected: c.audio_dim,
                found: s.audio.dim(),
            });
        }
        if s.video.dim() != c.video_dim {
            return Err(Error::FeatureDim {
                sample: s.id.clone(),
                modality: "video",
                expected: c.video_dim,
                found: s.video.dim(),
            });
        }
        if s.label >= c.n_classes() {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes: c.n_classes(),
            });
        }
        Ok(())
    }

    fn encode_all<'t>(
        &'t self,
        tape: &mut Tape<'t>,
        sample: &'t MultimodalSample,
        params: &mut Vec<Var>,
    ) -> Result<[EncodedModality; 3]> {
        let a = self.audio_gru.bind(tape);
        let t = self.text_gru.bind(tape);
        let v = self.video_gru.bind(tape);
        let emb = tape.param(&self.embedding.matrix);
        params.extend(a.vars());
        params.extend(t.vars());
        params.extend(v.vars());
        params.push(emb);
        let ea = encode(tape, &a, ModalityInput::Features(&sample.audio), None)?;
        let et = encode(tape, &t, ModalityInput::Tokens(&sample.text), Some(emb))?;
        let ev = encode(tape, &v, ModalityInput::Features(&sample.video), None)?;
        Ok([ea, et, ev])
    }

    fn record<'t>(&'t self, tape: &mut Tape<'t>, sample: &'t MultimodalSample) -> Result<Bound> {
        self.check_sample(sample)?;
        let mut params = Vec::new();
        let [ea, et, ev] = self.encode_all(tape, sample, &mut params)?;
        let (head_input, trace) = match self.config.kind {
            ModelKind::Amh { n_hops } => {
                let attention = self.attention.as_ref().ok_or_else(|| {
                    Error::Config("hopping model without attention parameters".into())
                })?;
                let vars = attention.bind(tape);
                params.extend(vars.matrices.iter().copied());
                let out = run_amh(tape, &ea, &et, &ev, &vars, n_hops)?;
                (out.fused, out.trace)
            }
            ModelKind::Mdre => {
                let hidden = self
                    .fusion_hidden
                    .as_ref()
                    .ok_or_else(|| Error::Config("baseline model without fusion layer".into()))?;
                let w = tape.param(&hidden.w);
                let b = tape.param(&hidden.b);
                params.extend([w, b]);
                let fused = tape.concat(&[ea.last_state, et.last_state, ev.last_state], 0)?;
                let h = tape.matmul(fused, w)?;
                let h = tape.add(h, b)?;
                (tape.tanh(h), Vec::new())
            }
        };
        let w_out = tape.param(&self.classifier.w);
        let b_out = tape.param(&self.classifier.b);
        params.extend([w_out, b_out]);
        let logits = classifier_logits(tape, head_input, w_out, b_out)?;
        Ok(Bound {
            params,
            logits,
            trace,
        })
    }

    /// Class probabilities for one sample.
    pub fn forward(&self, sample: &MultimodalSample) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.record(&mut tape, sample)?;
        let probs = crate::tensor::softmax(tape.value(bound.logits), None)?;
        Ok(Prediction {
            probs,
            trace: bound.trace,
        })
    }

    pub fn forward_amh(&self, sample: &MultimodalSample) -> Result<Prediction> {
        if !matches!(self.config.kind, ModelKind::Amh { .. }) {
            return Err(Error::Config(
                "forward_amh called on a baseline model".into(),
            ));
        }
        self.forward(sample)
    }

    pub fn forward_mdre(&self, sample: &MultimodalSample) -> Result<Vec<f64>> {
        if self.config.kind != ModelKind::Mdre {
            return Err(Error::Config(
                "forward_mdre called on a hopping model".into(),
            ));
        }
        Ok(self.forward(sample)?.probs)
    }

    /// `[h_last^A; h_last^T; h_last^V]`, the fused vector before any hop.
    pub fn fused_last_states(&self, sample: &MultimodalSample) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let mut tape = Tape::new();
        let mut params = Vec::new();
        let [a, t, v] = self.encode_all(&mut tape, sample, &mut params)?;
        let fused = tape.concat(&[a.last_state, t.last_state, v.last_state], 0)?;
        Ok(tape.value(fused).to_vec())
    }

    pub fn sample_loss(&self, sample: &MultimodalSample) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.record(&mut tape, sample)?;
        let loss = tape.cross_entropy(bound.logits, &[sample.label])?;
        Ok(tape.value(loss)[0])
    }

    /// Loss and per-tensor gradients for one sample.
    pub fn sample_loss_and_grads(
        &self,
        sample: &MultimodalSample,
        faults: &[Fault],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        for &f in faults {
            tape.inject_fault(f);
        }
        let bound = self.record(&mut tape, sample)?;
        let loss = tape.cross_entropy(bound.logits, &[sample.label])?;
        let grads = tape.backward(loss)?;
        let per_param = bound.params.iter().map(|&v| grads.wrt(v)).collect();
        Ok((tape.value(loss)[0], per_param))
    }

    /// Mean loss over `samples`.
    pub fn batch_loss(&self, samples: &[MultimodalSample], exec: Execution) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("batch_loss"));
        }
        let losses = parallel::map_with(exec, samples, |s| self.sample_loss(s));
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Mean loss and its gradient. Samples are processed independently
    /// (possibly in parallel) and reduced in sample order, so the result is
    /// identical under either execution mode.
    pub fn batch_loss_and_grads(
        &self,
        samples: &[MultimodalSample],
        exec: Execution,
        faults: &[Fault],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("batch_loss_and_grads"));
        }
        let results = parallel::map_with(exec, samples, |s| self.sample_loss_and_grads(s, faults));
        let mut total = 0.0;
        let mut acc: Option<Vec<Vec<f64>>> = None;
        for r in results {
            let (loss, grads) = r?;
            total += loss;
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => {
                    for (dst, src) in a.iter_mut().zip(&grads) {
                        dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                    }
                }
            }
        }
        let n = samples.len() as f64;
        let mut grads = acc.unwrap_or_default();
        grads.iter_mut().flatten().for_each(|g| *g /= n);
        Ok((total / n, grads))
    }

    /// Adds `grads` (in tensor order) into the parameters' grad slots.
    pub fn accumulate_grads(&mut self, grads: &[Vec<f64>]) {
        for (t, g) in self.tensors_mut().into_iter().zip(grads) {
            t.accumulate_grad(g);
        }
    }
}

impl ParameterSet for ModelParams {
    fn names(&self) -> Vec<String> {
        let mut names = GruParams::names("audio_gru");
        names.extend(GruParams::names("text_gru"));
        names.extend(GruParams::names("video_gru"));
        names.push("embedding".into());
        if let Some(a) = &self.attention {
            names.extend(a.names());
        }
        if self.fusion_hidden.is_some() {
            names.extend(["fusion.W_hidden".to_string(), "fusion.b_hidden".to_string()]);
        }
        names.extend([
            "classifier.W_out".to_string(),
            "classifier.b_out".to_string(),
        ]);
        names
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.audio_gru.tensors();
        out.extend(self.text_gru.tensors());
        out.extend(self.video_gru.tensors());
        out.push(&self.embedding.matrix);
        if let Some(a) = &self.attention {
            out.extend(a.matrices.iter());
        }
        if let Some(h) = &self.fusion_hidden {
            out.extend([&h.w, &h.b]);
        }
        out.extend([&self.classifier.w, &self.classifier.b]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.audio_gru.tensors_mut();
        out.extend(self.text_gru.tensors_mut());
        out.extend(self.video_gru.tensors_mut());
        out.push(&mut self.embedding.matrix);
        if let Some(a) = &mut self.attention {
            out.extend(a.matrices.iter_mut());
        }
        if let Some(h) = &mut self.fusion_hidden {
            out.extend([&mut h.w, &mut h.b]);
        }
        out.extend([&mut self.classifier.w, &mut self.classifier.b]);
        out
    }
}

fn classifier_logits(tape: &mut Tape<'_>, input: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.matmul(input, w)?;
    tape.add(z, b)
}

/// Softmax head applied to a fused vector.
pub fn classify(fused: &[f64], params: &ClassifierParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(fused.to_vec()));
    let w = tape.leaf(&params.w);
    let b = tape.leaf(&params.b);
    let logits = classifier_logits(&mut tape, x, w, b)?;
    let p = tape.softmax(logits, None)?;
    Ok(tape.value(p).to_vec())
}

/// Mean negative log-likelihood computed from logits with log-sum-exp.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let t = Tensor::from_rows(logits)?;
    let mut tape = Tape::new();
    let v = tape.constant(t);
    let l = tape.cross_entropy(v, labels)?;
    Ok(tape.value(l)[0])
}

/// Mean negative log-likelihood of probability rows; for reporting only.
pub fn cross_entropy_from_probs(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            &[probs.len()],
            &[labels.len()],
        ));
    }
    let mut total = 0.0;
    for (row, &label) in probs.iter().zip(labels) {
        let p = *row.get(label).ok_or(Error::LabelOutOfRange {
            label,
            classes: row.len(),
        })?;
        total -= p.ln();
    }
    Ok(total / probs.len() as f64)
}

/// Mean loss over a fixed batch as a gradient-check objective.
pub struct BatchObjective<'a> {
    pub samples: &'a [MultimodalSample],
    pub faults: Vec<Fault>,
}

impl<'a> BatchObjective<'a> {
    pub fn new(samples: &'a [MultimodalSample]) -> Self {
        BatchObjective {
            samples,
            faults: Vec::new(),
        }
    }
}

impl Objective<ModelParams> for BatchObjective<'_> {
    fn loss(&self, params: &ModelParams) -> Result<f64> {
        params.batch_loss(self.samples, Execution::Sequential)
    }

    fn loss_and_grads(&self, params: &ModelParams) -> Result<(f64, Vec<Vec<f64>>)> {
        params.batch_loss_and_grads(self.samples, Execution::Sequential, &self.faults)
    }
}
