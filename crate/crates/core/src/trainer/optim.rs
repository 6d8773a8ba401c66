use serde::{Deserialize, Serialize};

use crate::tensor::ParameterSet;

/// Global L2 norm over every grad slot. Scaled by the largest magnitude
/// first so huge gradients do not overflow to infinity.
pub fn global_grad_norm<P: ParameterSet + ?Sized>(params: &P) -> f64 {
    let tensors = params.tensors();
    let grads = || tensors.iter().filter_map(|t| t.grad()).flatten();
    let peak = grads().fold(0.0f64, |m, g| m.max(g.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return peak;
    }
    let sum: f64 = grads().map(|g| (g / peak) * (g / peak)).sum();
    peak * sum.sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm` and
/// returns the factor applied (1 when already within bounds).
pub fn clip_gradients<P: ParameterSet + ?Sized>(params: &mut P, max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if !(norm > max_norm) {
        return 1.0;
    }
    let factor = max_norm / norm;
    for t in params.tensors_mut() {
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
    factor
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<P: ParameterSet + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update from the grad slots, which are zeroed
/// afterwards. Tensors without a grad slot count as zero gradient.
pub fn adam_step<P: ParameterSet + ?Sized>(params: &mut P, state: &mut AdamState) {
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let step = state.step as i32;
    let c1 = 1.0 - beta1.powi(step);
    let c2 = 1.0 - beta2.powi(step);
    for ((t, m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
            // Zero gradient: moments still decay.
            m.iter_mut().for_each(|x| *x *= beta1);
            v.iter_mut().for_each(|x| *x *= beta2);
            for ((p, &mi), &vi) in t.data_mut().iter_mut().zip(m.iter()).zip(v.iter()) {
                *p -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
            continue;
        };
        for (((p, g), mi), vi) in t
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
        t.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{NamedTensors, Tensor};

    fn with_grads(grads: &[&[f64]]) -> NamedTensors {
        NamedTensors::new(
            grads
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let mut t = Tensor::vector(vec![0.0; g.len()]);
                    t.accumulate_grad(g);
                    (format!("p{i}"), t)
                })
                .collect(),
        )
    }

    #[test]
    fn clip_three_four_five() {
        let mut p = with_grads(&[&[3.0, 4.0]]);
        let f = clip_gradients(&mut p, 1.0);
        assert!((f - 0.2).abs() < 1e-15);
        let g = p.entries[0].1.grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn small_norm_untouched() {
        let mut p = with_grads(&[&[0.3], &[0.4]]);
        assert_eq!(clip_gradients(&mut p, 1.0), 1.0);
        assert_eq!(p.entries[1].1.grad().unwrap(), &[0.4]);
    }

    #[test]
    fn huge_gradients_do_not_overflow() {
        let mut p = with_grads(&[&[1e300, -1e300], &[1e300]]);
        clip_gradients(&mut p, 1.0);
        let n = global_grad_norm(&p);
        assert!(n <= 1.0 + 1e-12 && n > 0.99, "{n}");
    }

    #[test]
    fn first_step_moves_lr_against_gradient() {
        let mut p = with_grads(&[&[0.5, -2.0, 1e-3]]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &mut s);
        let x = p.entries[0].1.data();
        assert!((x[0] + 1e-3).abs() < 1e-6);
        assert!((x[1] - 1e-3).abs() < 1e-6);
        assert!((x[2] + 1e-3).abs() < 1e-6);
        assert_eq!(p.entries[0].1.grad().unwrap(), &[0.0; 3]);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = with_grads(&[&[0.0, 0.0]]);
        p.entries[0].1.data_mut().copy_from_slice(&[1.0, -1.0]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &mut s);
        assert_eq!(p.entries[0].1.data(), &[1.0, -1.0]);
        assert_eq!(s.step, 1);
    }
}
