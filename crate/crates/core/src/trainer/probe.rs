// Linear probes: multinomial logistic regression on time-pooled features of
// one or more modalities. They bound how much label information is linearly
// readable from each stream on its own.

use serde::{Deserialize, Serialize};

use super::metrics::{score, EvalReport};
use super::optim::{adam_step, AdamConfig, AdamState};
use crate::amh::Modality;
use crate::data::MultimodalSample;
use crate::error::{Error, Result};
use crate::tensor::{NamedTensors, ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            iterations: 300,
            lr: 0.05,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LogisticProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    params: NamedTensors,
}

fn logits(params: &NamedTensors, x: &[f64]) -> Vec<f64> {
    let w = &params.entries[0].1;
    let b = &params.entries[1].1;
    let classes = b.numel();
    let mut z = b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w.data()[i * classes..(i + 1) * classes];
        z.iter_mut().zip(row).for_each(|(zc, wc)| *zc += xi * wc);
    }
    z
}

impl LogisticProbe {
    /// Full-batch Adam on the standardized features; deterministic (zero init).
    pub fn fit(
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        cfg: ProbeConfig,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("probe"));
        }
        let d = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; d];
        for f in features {
            scale
                .iter_mut()
                .zip(f)
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        scale
            .iter_mut()
            .for_each(|s| *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 0.0 });
        let mut probe = LogisticProbe {
            mean,
            scale,
            params: NamedTensors::new(vec![
                ("W".into(), Tensor::zeros(&[d, n_classes])),
                ("b".into(), Tensor::zeros(&[n_classes])),
            ]),
        };
        let xs: Vec<Vec<f64>> = features.iter().map(|f| probe.standardize(f)).collect();
        let mut state = AdamState::new(
            &probe.params,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        for _ in 0..cfg.iterations {
            let mut gw = vec![0.0; d * n_classes];
            let mut gb = vec![0.0; n_classes];
            for (x, &y) in xs.iter().zip(labels) {
                let p = crate::tensor::softmax(&logits(&probe.params, x), None)?;
                for c in 0..n_classes {
                    let delta = (p[c] - f64::from(u8::from(c == y))) / n;
                    gb[c] += delta;
                    for (i, xi) in x.iter().enumerate() {
                        gw[i * n_classes + c] += delta * xi;
                    }
                }
            }
            let w = probe.params.entries[0].1.data();
            gw.iter_mut().zip(w).for_each(|(g, wv)| *g += cfg.l2 * wv);
            probe.params.zero_grads();
            probe.params.entries[0].1.accumulate_grad(&gw);
            probe.params.entries[1].1.accumulate_grad(&gb);
            adam_step(&mut probe.params, &mut state);
        }
        Ok(probe)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        crate::model::argmax(&logits(&self.params, &self.standardize(features)))
    }
}

/// Pooled features of the chosen modalities, concatenated in the given order.
pub fn pooled(sample: &MultimodalSample, modalities: &[Modality], vocab_size: usize) -> Vec<f64> {
    modalities
        .iter()
        .flat_map(|&m| sample.pooled_features(m, vocab_size))
        .collect()
}

/// Fits a probe on `train` and scores it on `test`.
pub fn probe_modalities(
    train: &[MultimodalSample],
    test: &[MultimodalSample],
    modalities: &[Modality],
    vocab_size: usize,
    n_classes: usize,
    cfg: ProbeConfig,
) -> Result<EvalReport> {
    let xs: Vec<Vec<f64>> = train
        .iter()
        .map(|s| pooled(s, modalities, vocab_size))
        .collect();
    let ys: Vec<usize> = train.iter().map(|s| s.label).collect();
    let probe = LogisticProbe::fit(&xs, &ys, n_classes, cfg)?;
    let predicted: Vec<usize> = test
        .iter()
        .map(|s| probe.predict(&pooled(s, modalities, vocab_size)))
        .collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    score(&labels, &predicted, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_blobs() {
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let c = (i % 2) as f64;
                vec![c * 4.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]
            })
            .collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let p = LogisticProbe::fit(&xs, &ys, 2, ProbeConfig::default()).unwrap();
        let acc = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| p.predict(x) == y)
            .count();
        assert_eq!(acc, 40);
    }
}
