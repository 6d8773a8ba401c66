//! Corpus ingestion, fold bookkeeping, and synthetic corpora.
//!
//! Upstream preparation (majority-vote label filtering, dropping rare
//! classes, feature extraction) happens before the manifest boundary; this
//! module only ingests already-filtered, precomputed features.

mod folds;
mod manifest;
mod synthetic;

pub use folds::{make_folds, FoldSplit};
pub use manifest::{
    content_hash, load_corpus, write_corpus, Corpus, ExpectedDims, LABELS_FILE, MANIFEST_HEADER,
};
pub use synthetic::{
    describe_synthetic, generate_synthetic, SyntheticRule, SyntheticSpec, XOR3_NOISE_THRESHOLD,
};

use serde::{Deserialize, Serialize};

use crate::amh::Modality;
use crate::encoder::ModalitySequence;

/// One utterance: audio frames, token ids, video frames, and a label index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSample {
    pub id: String,
    pub audio: ModalitySequence,
    pub text: Vec<usize>,
    pub video: ModalitySequence,
    pub label: usize,
}

impl MultimodalSample {
    /// Mean of the valid frames (or the token histogram for text), used by
    /// the linear probes.
    pub fn pooled_features(&self, modality: Modality, vocab_size: usize) -> Vec<f64> {
        match modality {
            Modality::Audio => mean_rows(&self.audio),
            Modality::Video => mean_rows(&self.video),
            Modality::Text => {
                let mut hist = vec![0.0; vocab_size];
                for &id in &self.text {
                    if id < vocab_size {
                        hist[id] += 1.0;
                    }
                }
                let n = self.text.len().max(1) as f64;
                hist.iter_mut().for_each(|v| *v /= n);
                hist
            }
        }
    }
}

fn mean_rows(seq: &ModalitySequence) -> Vec<f64> {
    let d = seq.dim();
    let mut out = vec![0.0; d];
    for row in seq.valid_data().chunks_exact(d) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    let n = seq.length() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}
