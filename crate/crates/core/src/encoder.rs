//! Per-modality GRU encoders.
//!
//! Each modality is encoded independently by a single-layer unidirectional
//! GRU starting from a zero state:
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! ĥ  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = z ⊙ h + (1 − z) ⊙ ĥ
//! ```
//!
//! A saturated update gate (z = 1) therefore carries the previous state
//! through unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Time-major feature matrix with a true length; rows at or beyond
/// `length` are padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySequence {
    features: Tensor,
    length: usize,
}

impl ModalitySequence {
    pub fn new(features: Tensor, length: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::shape(
                "ModalitySequence",
                features.shape(),
                &[length],
            ));
        }
        let rows = features.shape()[0];
        if length == 0 {
            return Err(Error::EmptySequence);
        }
        if length > rows {
            return Err(Error::LengthExceedsRows { length, rows });
        }
        Ok(ModalitySequence { features, length })
    }

    /// Unpadded sequence built from its rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor::from_rows(rows)?;
        ModalitySequence::new(t, rows.len())
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Tensor {
        &mut self.features
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn rows(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// The valid (unpadded) rows as one flat slice.
    pub fn valid_data(&self) -> &[f64] {
        &self.features.data()[..self.length * self.dim()]
    }
}

/// Parameters of one GRU: input-to-hidden `W_*` (d_in × d_h),
/// hidden-to-hidden `U_*` (d_h × d_h) and biases `b_*` (d_h).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

const GRU_NAMES: [&str; 9] = [
    "W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h",
];

impl GruParams {
    /// Xavier-uniform matrices, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut w =
            || Tensor::xavier_uniform(&[input_dim, hidden_dim], rng).with_requires_grad(true);
        let (w_z, w_r, w_h) = (w(), w(), w());
        let mut u =
            || Tensor::xavier_uniform(&[hidden_dim, hidden_dim], rng).with_requires_grad(true);
        let (u_z, u_r, u_h) = (u(), u(), u());
        let b = || Tensor::zeros(&[hidden_dim]).with_requires_grad(true);
        GruParams {
            w_z,
            u_z,
            b_z: b(),
            w_r,
            u_r,
            b_r: b(),
            w_h,
            u_h,
            b_h: b(),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[input_dim, hidden_dim]).with_requires_grad(true);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]).with_requires_grad(true);
        let b = || Tensor::zeros(&[hidden_dim]).with_requires_grad(true);
        GruParams {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn names(prefix: &str) -> Vec<String> {
        GRU_NAMES.iter().map(|n| format!("{prefix}.{n}")).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    /// Checks that all nine tensors have mutually consistent shapes.
    pub fn validate(&self) -> Result<()> {
        let (din, dh) = (self.input_dim(), self.hidden_dim());
        for w in [&self.w_z, &self.w_r, &self.w_h] {
            if w.shape() != [din, dh] {
                return Err(Error::shape("GruParams", &[din, dh], w.shape()));
            }
        }
        for u in [&self.u_z, &self.u_r, &self.u_h] {
            if u.shape() != [dh, dh] {
                return Err(Error::shape("GruParams", &[dh, dh], u.shape()));
            }
        }
        for b in [&self.b_z, &self.b_r, &self.b_h] {
            if b.shape() != [dh] {
                return Err(Error::shape("GruParams", &[dh], b.shape()));
            }
        }
        Ok(())
    }

    /// Records every tensor on `tape` as a differentiable leaf.
    pub fn bind<'t>(&'t self, tape: &mut Tape<'t>) -> GruVars {
        GruVars {
            w_z: tape.param(&self.w_z),
            u_z: tape.param(&self.u_z),
            b_z: tape.param(&self.b_z),
            w_r: tape.param(&self.w_r),
            u_r: tape.param(&self.u_r),
            b_r: tape.param(&self.b_r),
            w_h: tape.param(&self.w_h),
            u_h: tape.param(&self.u_h),
            b_h: tape.param(&self.b_h),
        }
    }
}

/// [`GruParams`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn vars(&self) -> [Var; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

/// Learned token embedding matrix `[vocab × dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    /// Id reserved for out-of-vocabulary words by upstream tokenizers.
    pub unknown_id: usize,
}

impl EmbeddingTable {
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            matrix: Tensor::xavier_uniform(&[vocab_size, dim], rng).with_requires_grad(true),
            unknown_id: 0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// What a modality encoder consumes.
#[derive(Clone, Copy, Debug)]
pub enum ModalityInput<'a> {
    Features(&'a ModalitySequence),
    Tokens(&'a [usize]),
}

/// Output of [`encode`]: hidden states `[rows × d_h]` (zero beyond
/// `length`) and the state at step `length − 1`.
#[derive(Clone, Copy, Debug)]
pub struct EncodedModality {
    pub hidden_states: Var,
    pub last_state: Var,
    pub length: usize,
    pub rows: usize,
}

/// One GRU update from `h_prev` with input `x`.
pub fn gru_cell(tape: &mut Tape<'_>, p: &GruVars, h_prev: Var, x: Var) -> Result<Var> {
    let xz = tape.matmul(x, p.w_z)?;
    let xr = tape.matmul(x, p.w_r)?;
    let xh = tape.matmul(x, p.w_h)?;
    gru_update(tape, p, h_prev, xz, xr, xh)
}

fn gru_update(tape: &mut Tape<'_>, p: &GruVars, h: Var, xz: Var, xr: Var, xh: Var) -> Result<Var> {
    let hz = tape.matmul(h, p.u_z)?;
    let z = tape.add(xz, hz)?;
    let z = tape.add(z, p.b_z)?;
    let z = tape.sigmoid(z);

    let hr = tape.matmul(h, p.u_r)?;
    let r = tape.add(xr, hr)?;
    let r = tape.add(r, p.b_r)?;
    let r = tape.sigmoid(r);

    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, p.u_h)?;
    let c = tape.add(xh, rhu)?;
    let c = tape.add(c, p.b_h)?;
    let candidate = tape.tanh(c);

    let keep = tape.mul(z, h)?;
    let one_minus_z = tape.one_minus(z);
    let fresh = tape.mul(one_minus_z, candidate)?;
    tape.add(keep, fresh)
}

/// Runs the GRU over the valid steps of `input`. Text tokens are looked up
/// in `embedding`, which must then be provided.
pub fn encode<'t>(
    tape: &mut Tape<'t>,
    gru: &GruVars,
    input: ModalityInput<'t>,
    embedding: Option<Var>,
) -> Result<EncodedModality> {
    let hidden_dim = tape.shape(gru.u_z)[0];
    let input_dim = tape.shape(gru.w_z)[0];
    let (x, length, rows) = match input {
        ModalityInput::Features(seq) => {
            if seq.dim() != input_dim {
                return Err(Error::shape("encode", &[input_dim], &[seq.dim()]));
            }
            let x = tape.constant_slice(&[seq.length(), seq.dim()], seq.valid_data())?;
            (x, seq.length(), seq.rows())
        }
        ModalityInput::Tokens(ids) => {
            if ids.is_empty() {
                return Err(Error::EmptySequence);
            }
            let table = embedding
                .ok_or_else(|| Error::Config("token input requires an embedding table".into()))?;
            (tape.gather_rows(table, ids)?, ids.len(), ids.len())
        }
    };
    if tape.shape(x)[1] != input_dim {
        return Err(Error::shape("encode", &[input_dim], tape.shape(x)));
    }

    let xz_all = tape.matmul(x, gru.w_z)?;
    let xr_all = tape.matmul(x, gru.w_r)?;
    let xh_all = tape.matmul(x, gru.w_h)?;
    let mut h = tape.constant(Tensor::zeros(&[hidden_dim]));
    let mut states = Vec::with_capacity(length);
    for t in 0..length {
        let xz = tape.row(xz_all, t)?;
        let xr = tape.row(xr_all, t)?;
        let xh = tape.row(xh_all, t)?;
        h = gru_update(tape, gru, h, xz, xr, xh)?;
        states.push(h);
    }
    let hidden_states = tape.stack_rows(&states, rows)?;
    Ok(EncodedModality {
        hidden_states,
        last_state: h,
        length,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_seq(
        rng: &mut ChaCha8Rng,
        rows: usize,
        dim: usize,
        length: usize,
    ) -> ModalitySequence {
        let data = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ModalitySequence::new(Tensor::new(&[rows, dim], data).unwrap(), length).unwrap()
    }

    #[test]
    fn sequence_validation() {
        assert!(matches!(
            ModalitySequence::new(Tensor::zeros(&[3, 2]), 0),
            Err(Error::EmptySequence)
        ));
        assert!(matches!(
            ModalitySequence::new(Tensor::zeros(&[3, 2]), 4),
            Err(Error::LengthExceedsRows { .. })
        ));
    }

    #[test]
    fn zero_params_fixed_point() {
        let p = GruParams::zeros(3, 4);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        let h = tape.constant(Tensor::zeros(&[4]));
        let x = tape.constant(Tensor::vector(vec![0.3, -0.2, 0.9]));
        let out = gru_cell(&mut tape, &v, h, x).unwrap();
        assert_eq!(tape.value(out), &[0.0; 4]);
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GruParams::init(3, 4, &mut rng);
        p.b_z.data_mut().iter_mut().for_each(|b| *b = 1e3);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        let h_prev = vec![0.1, -0.5, 0.7, 0.0];
        let h = tape.constant(Tensor::vector(h_prev.clone()));
        for x in [vec![5.0, -3.0, 1.0], vec![-9.0, 2.0, 0.0]] {
            let x = tape.constant(Tensor::vector(x));
            let out = gru_cell(&mut tape, &v, h, x).unwrap();
            assert_eq!(tape.value(out), h_prev.as_slice());
        }
    }

    #[test]
    fn single_step_matches_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GruParams::init(3, 4, &mut rng);
        let seq = random_seq(&mut rng, 1, 3, 1);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        let enc = encode(&mut tape, &v, ModalityInput::Features(&seq), None).unwrap();
        let h0 = tape.constant(Tensor::zeros(&[4]));
        let x = tape.constant(Tensor::vector(seq.features().row(0).to_vec()));
        let cell = gru_cell(&mut tape, &v, h0, x).unwrap();
        assert_eq!(tape.value(enc.last_state), tape.value(cell));
        assert_eq!(tape.value(enc.hidden_states), tape.value(cell));
    }

    #[test]
    fn padding_never_leaks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParams::init(2, 5, &mut rng);
        let a = random_seq(&mut rng, 6, 2, 4);
        let mut b = a.clone();
        for r in 4..6 {
            b.features_mut()
                .row_mut(r)
                .iter_mut()
                .for_each(|v| *v = 1e6);
        }
        let run = |s: &ModalitySequence| {
            let mut tape = Tape::new();
            let v = p.bind(&mut tape);
            let e = encode(&mut tape, &v, ModalityInput::Features(s), None).unwrap();
            (
                tape.value(e.hidden_states).to_vec(),
                tape.value(e.last_state).to_vec(),
            )
        };
        let (ha, la) = run(&a);
        let (hb, lb) = run(&b);
        assert_eq!(ha, hb);
        assert_eq!(la, lb);
        assert!(ha[4 * 5..].iter().all(|&v| v == 0.0));
        assert_eq!(&ha[3 * 5..4 * 5], la.as_slice());
    }

    #[test]
    fn token_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GruParams::init(3, 2, &mut rng);
        let emb = EmbeddingTable::init(5, 3, &mut rng);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        let e = tape.param(&emb.matrix);
        assert!(matches!(
            encode(&mut tape, &v, ModalityInput::Tokens(&[1, 5]), Some(e)),
            Err(Error::TokenOutOfRange { id: 5, vocab: 5 })
        ));
        assert!(matches!(
            encode(&mut tape, &v, ModalityInput::Tokens(&[]), Some(e)),
            Err(Error::EmptySequence)
        ));
        assert!(encode(&mut tape, &v, ModalityInput::Tokens(&[1]), None).is_err());
        let ok = encode(&mut tape, &v, ModalityInput::Tokens(&[1, 4, 0]), Some(e)).unwrap();
        assert_eq!(ok.length, 3);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GruParams::init(3, 2, &mut rng);
        let seq = random_seq(&mut rng, 2, 4, 2);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape);
        assert!(encode(&mut tape, &v, ModalityInput::Features(&seq), None).is_err());
    }
}
