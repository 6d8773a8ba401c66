//! Attentive modality hopping.
//!
//! Each hop re-summarizes one target modality with bilinear attention whose
//! query is the concatenation of the other two modalities' current
//! summaries. Targets cycle video, audio, text, video, ... and attention is
//! always taken over the original encoder hidden states; only the summary
//! vectors change between hops. After the final hop the three summaries
//! are concatenated in audio, text, video order.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncodedModality;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "A")]
    Audio,
    #[serde(rename = "T")]
    Text,
    #[serde(rename = "V")]
    Video,
}

impl Modality {
    /// Position in the fused A;T;V layout.
    pub fn slot(self) -> usize {
        match self {
            Modality::Audio => 0,
            Modality::Text => 1,
            Modality::Video => 2,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Modality::Audio => "A",
            Modality::Text => "T",
            Modality::Video => "V",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
            Modality::Video => "video",
        }
    }

    /// Context pair used when this modality is the hop target, in the order
    /// the two summaries are concatenated.
    pub fn context_pair(self) -> (Modality, Modality) {
        match self {
            Modality::Video => (Modality::Audio, Modality::Text),
            Modality::Audio => (Modality::Text, Modality::Video),
            Modality::Text => (Modality::Audio, Modality::Video),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

const CYCLE: [Modality; 3] = [Modality::Video, Modality::Audio, Modality::Text];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopScheduleEntry {
    /// 1-based.
    pub hop_index: usize,
    pub target: Modality,
    pub context: (Modality, Modality),
}

pub fn hop_schedule(n_hops: usize) -> Result<Vec<HopScheduleEntry>> {
    if n_hops < 1 {
        return Err(Error::Config("hops must be ≥ 1".into()));
    }
    Ok((1..=n_hops)
        .map(|k| {
            let target = CYCLE[(k - 1) % 3];
            HopScheduleEntry {
                hop_index: k,
                target,
                context: target.context_pair(),
            }
        })
        .collect())
}

/// Number of times `m` has been the target after `n_hops` hops.
pub fn update_count(m: Modality, n_hops: usize) -> usize {
    let offset = CYCLE
        .iter()
        .position(|&c| c == m)
        .expect("cycle covers all");
    (n_hops + 2 - offset) / 3
}

/// Whether attention matrices are shared by target modality or owned by
/// each hop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionSharing {
    #[default]
    PerTarget,
    PerHop,
}

/// Bilinear attention matrices, each `[(2·d_h) × d_h]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub sharing: AttentionSharing,
    pub matrices: Vec<Tensor>,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        hidden_dim: usize,
        n_hops: usize,
        sharing: AttentionSharing,
        rng: &mut R,
    ) -> Self {
        let count = match sharing {
            AttentionSharing::PerTarget => 3,
            AttentionSharing::PerHop => n_hops,
        };
        let matrices = (0..count)
            .map(|_| {
                Tensor::xavier_uniform(&[2 * hidden_dim, hidden_dim], rng).with_requires_grad(true)
            })
            .collect();
        AttentionParams { sharing, matrices }
    }

    pub fn names(&self) -> Vec<String> {
        match self.sharing {
            AttentionSharing::PerTarget => ["W_V", "W_A", "W_T"]
                .iter()
                .map(|n| format!("attention.{n}"))
                .collect(),
            AttentionSharing::PerHop => (1..=self.matrices.len())
                .map(|k| format!("attention.W_hop{k}"))
                .collect(),
        }
    }

    /// Index into `matrices` used by a schedule entry.
    pub fn matrix_index(&self, entry: &HopScheduleEntry) -> usize {
        match self.sharing {
            AttentionSharing::PerTarget => match entry.target {
                Modality::Video => 0,
                Modality::Audio => 1,
                Modality::Text => 2,
            },
            AttentionSharing::PerHop => entry.hop_index - 1,
        }
    }

    pub fn validate(&self, hidden_dim: usize) -> Result<()> {
        for m in &self.matrices {
            if m.shape() != [2 * hidden_dim, hidden_dim] {
                return Err(Error::shape(
                    "AttentionParams",
                    &[2 * hidden_dim, hidden_dim],
                    m.shape(),
                ));
            }
        }
        Ok(())
    }

    pub fn bind<'t>(&'t self, tape: &mut Tape<'t>) -> AttentionVars {
        AttentionVars {
            sharing: self.sharing,
            matrices: self.matrices.iter().map(|m| tape.param(m)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionVars {
    pub sharing: AttentionSharing,
    pub matrices: Vec<Var>,
}

impl AttentionVars {
    fn for_entry(&self, entry: &HopScheduleEntry) -> Result<Var> {
        let idx = match self.sharing {
            AttentionSharing::PerTarget => match entry.target {
                Modality::Video => 0,
                Modality::Audio => 1,
                Modality::Text => 2,
            },
            AttentionSharing::PerHop => entry.hop_index - 1,
        };
        self.matrices.get(idx).copied().ok_or_else(|| {
            Error::Config(format!("no attention matrix for hop {}", entry.hop_index))
        })
    }
}

/// Concatenation `[u; v]`.
pub fn fuse_context(tape: &mut Tape<'_>, u: Var, v: Var) -> Result<Var> {
    if tape.shape(u) != tape.shape(v) || tape.shape(u).len() != 1 {
        return Err(Error::shape("fuse_context", tape.shape(u), tape.shape(v)));
    }
    tape.concat(&[u, v], 0)
}

/// Context-conditioned attention over `target`'s hidden states. Returns the
/// summary `Σ aᵢ hᵢ` and the weights `a`, which are exactly zero past the
/// target's length.
pub fn attend(
    tape: &mut Tape<'_>,
    context: Var,
    target: &EncodedModality,
    w: Var,
) -> Result<(Var, Var)> {
    if target.length == 0 {
        return Err(Error::EmptySequence);
    }
    let scores = tape.bilinear_scores(context, w, target.hidden_states)?;
    let mask: Vec<bool> = (0..target.rows).map(|i| i >= target.length).collect();
    let weights = tape.softmax(scores, Some(&mask))?;
    let summary = tape.matmul(weights, target.hidden_states)?;
    Ok((summary, weights))
}

/// Current per-modality summaries (A, T, V slots) and how often each has
/// been re-summarized.
#[derive(Clone, Copy, Debug)]
pub struct HopState {
    pub reps: [Var; 3],
    pub counts: [usize; 3],
}

impl HopState {
    /// Starts from the encoders' last states.
    pub fn initial(
        audio: &EncodedModality,
        text: &EncodedModality,
        video: &EncodedModality,
    ) -> Self {
        HopState {
            reps: [audio.last_state, text.last_state, video.last_state],
            counts: [0; 3],
        }
    }

    pub fn rep(&self, m: Modality) -> Var {
        self.reps[m.slot()]
    }

    pub fn count(&self, m: Modality) -> usize {
        self.counts[m.slot()]
    }
}

/// Attention weights produced by one hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub entry: HopScheduleEntry,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AmhOutput {
    /// `[rep_A; rep_T; rep_V]`, length 3·d_h.
    pub fused: Var,
    pub state: HopState,
    pub trace: Vec<HopRecord>,
}

/// Runs `n_hops` hops and concatenates the final summaries.
pub fn run_amh(
    tape: &mut Tape<'_>,
    audio: &EncodedModality,
    text: &EncodedModality,
    video: &EncodedModality,
    attention: &AttentionVars,
    n_hops: usize,
) -> Result<AmhOutput> {
    let dims: Vec<&[usize]> = [audio, text, video]
        .iter()
        .map(|e| tape.shape(e.last_state))
        .collect();
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(Error::shape("run_amh", dims[0], dims[2]));
    }
    let schedule = hop_schedule(n_hops)?;
    let mut state = HopState::initial(audio, text, video);
    let mut trace = Vec::with_capacity(n_hops);
    for entry in schedule {
        let (first, second) = entry.context;
        let context = fuse_context(tape, state.rep(first), state.rep(second))?;
        let target = match entry.target {
            Modality::Audio => audio,
            Modality::Text => text,
            Modality::Video => video,
        };
        let w = attention.for_entry(&entry)?;
        let (summary, weights) = attend(tape, context, target, w)?;
        let slot = entry.target.slot();
        state.reps[slot] = summary;
        state.counts[slot] += 1;
        trace.push(HopRecord {
            entry,
            weights: tape.value(weights).to_vec(),
        });
    }
    let fused = tape.concat(&state.reps, 0)?;
    Ok(AmhOutput {
        fused,
        state,
        trace,
    })
}

/// Per-sample attention traces keyed by sample id then hop index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub samples: BTreeMap<String, BTreeMap<usize, HopRecord>>,
}

impl AttentionTrace {
    pub fn insert(&mut self, sample_id: &str, records: &[HopRecord]) {
        let hops = records
            .iter()
            .map(|r| (r.entry.hop_index, r.clone()))
            .collect();
        self.samples.insert(sample_id.to_string(), hops);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
