//! Quantum multihead self-attention.
//!
//! Each head owns three circuits sharing one topology: the key and query
//! circuits yield a scalar ⟨Z_0⟩ per input row, the value circuit yields ⟨Z_j⟩
//! for every qubit. Scores are `A_ij = −(Q_i − K_j)²`, rows are softmaxed after
//! scaling by `1/√dh`, and the weights average the value rows.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Tape, Tensor, Var};
use crate::error::{check_len, Error, Result};
use crate::quantum::{CircuitNode, EncodedCircuit, ParamVector, Readout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHeadParams {
    pub theta_k: ParamVector,
    pub theta_q: ParamVector,
    pub theta_v: ParamVector,
}

impl AttentionHeadParams {
    pub fn zeros(params: usize) -> Self {
        Self {
            theta_k: ParamVector::zeros(params),
            theta_q: ParamVector::zeros(params),
            theta_v: ParamVector::zeros(params),
        }
    }

    /// Angles uniform in [−π, π].
    pub fn init<R: Rng + ?Sized>(params: usize, rng: &mut R) -> Self {
        let mut draw = || {
            ParamVector(
                (0..params)
                    .map(|_| rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI))
                    .collect(),
            )
        };
        Self {
            theta_k: draw(),
            theta_q: draw(),
            theta_v: draw(),
        }
    }

    fn validate(&self, circuit: &EncodedCircuit) -> Result<()> {
        check_len("key angles", circuit.params(), self.theta_k.len())?;
        check_len("query angles", circuit.params(), self.theta_q.len())?;
        check_len("value angles", circuit.params(), self.theta_v.len())
    }
}

/// Everything one head computes on a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionIntermediate {
    pub keys: Vec<f64>,
    pub queries: Vec<f64>,
    /// `seq × dh`.
    pub values: Tensor,
    /// `seq × seq`.
    pub scores: Tensor,
}

pub fn key_scalar(x_row: &[f64], circuit: &EncodedCircuit, head: &AttentionHeadParams) -> Result<f64> {
    Ok(circuit.expectations(x_row, head.theta_k.as_slice())?[0])
}

pub fn query_scalar(x_row: &[f64], circuit: &EncodedCircuit, head: &AttentionHeadParams) -> Result<f64> {
    Ok(circuit.expectations(x_row, head.theta_q.as_slice())?[0])
}

pub fn value_row(x_row: &[f64], circuit: &EncodedCircuit, head: &AttentionHeadParams) -> Result<Vec<f64>> {
    circuit.expectations(x_row, head.theta_v.as_slice())
}

/// `A_ij = −(Q_i − K_j)²`.
pub fn attention_matrix(queries: &[f64], keys: &[f64]) -> Result<Tensor> {
    check_len("attention keys", queries.len(), keys.len())?;
    let data = queries
        .iter()
        .flat_map(|q| keys.iter().map(move |k| -(q - k) * (q - k)))
        .collect();
    Tensor::matrix(queries.len(), keys.len(), data)
}

/// `softmax_rows(A/√dh) · V`.
pub fn head_output(scores: &Tensor, values: &Tensor, dh: usize) -> Result<Tensor> {
    let (seq, cols) = scores
        .dims2()
        .ok_or(Error::InvalidParameter("scores must be a matrix".into()))?;
    check_len("attention scores", seq, cols)?;
    let (vrows, vcols) = values
        .dims2()
        .ok_or(Error::InvalidParameter("values must be a matrix".into()))?;
    check_len("value rows", seq, vrows)?;
    check_len("value width", dh, vcols)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let v = values.data();
    let mut out = vec![0.0; seq * dh];
    for (i, row) in scores.data().chunks(seq).enumerate() {
        let scaled: Vec<f64> = row.iter().map(|a| a * scale).collect();
        let weights = softmax(&scaled);
        for (j, w) in weights.iter().enumerate() {
            for k in 0..dh {
                out[i * dh + k] += w * v[j * dh + k];
            }
        }
    }
    Tensor::matrix(seq, dh, out)
}

/// Keys, queries, values and scores of one head over the rows of `x` (`seq × dh`).
pub fn head_intermediate(
    x: &Tensor,
    circuit: &EncodedCircuit,
    head: &AttentionHeadParams,
) -> Result<AttentionIntermediate> {
    head.validate(circuit)?;
    let (seq, dh) = x
        .dims2()
        .ok_or(Error::InvalidParameter("attention input must be a matrix".into()))?;
    check_len("attention row width", circuit.qubits(), dh)?;
    let mut keys = Vec::with_capacity(seq);
    let mut queries = Vec::with_capacity(seq);
    let mut values = Vec::with_capacity(seq * dh);
    for row in x.data().chunks(dh) {
        keys.push(key_scalar(row, circuit, head)?);
        queries.push(query_scalar(row, circuit, head)?);
        values.extend(value_row(row, circuit, head)?);
    }
    let scores = attention_matrix(&queries, &keys)?;
    Ok(AttentionIntermediate {
        keys,
        queries,
        values: Tensor::matrix(seq, dh, values)?,
        scores,
    })
}

/// Concatenation of every head's output along the feature axis: `seq × (H·dh)`.
pub fn multihead(x: &Tensor, circuit: &EncodedCircuit, heads: &[AttentionHeadParams]) -> Result<Tensor> {
    if heads.is_empty() {
        return Err(Error::InvalidParameter("at least one attention head is required".into()));
    }
    let dh = circuit.qubits();
    let outputs = heads
        .iter()
        .map(|h| {
            let mid = head_intermediate(x, circuit, h)?;
            head_output(&mid.scores, &mid.values, dh)
        })
        .collect::<Result<Vec<_>>>()?;
    let seq = outputs[0].shape()[0];
    let width = heads.len() * dh;
    let mut data = Vec::with_capacity(seq * width);
    for i in 0..seq {
        for out in &outputs {
            data.extend_from_slice(&out.data()[i * dh..(i + 1) * dh]);
        }
    }
    Tensor::matrix(seq, width, data)
}

/// Tape handles for one head's angles.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub theta_k: Var,
    pub theta_q: Var,
    pub theta_v: Var,
}

impl HeadVars {
    pub fn leaves(tape: &mut Tape, head: &AttentionHeadParams) -> Self {
        Self {
            theta_k: tape.leaf(Tensor::vector(head.theta_k.0.clone())),
            theta_q: tape.leaf(Tensor::vector(head.theta_q.0.clone())),
            theta_v: tape.leaf(Tensor::vector(head.theta_v.0.clone())),
        }
    }
}

/// Records one head on the tape and returns its attended output for each row
/// listed in `query_rows`. Keys and values are computed for every row; queries
/// only where requested.
pub fn head_on_tape(
    tape: &mut Tape,
    circuit: &Arc<EncodedCircuit>,
    rows: &[Var],
    head: HeadVars,
    query_rows: &[usize],
) -> Result<Vec<Var>> {
    let seq = rows.len();
    let dh = circuit.qubits();
    if seq == 0 {
        return Err(Error::InvalidParameter("attention over an empty sequence".into()));
    }
    let keys: Vec<Var> = rows
        .iter()
        .map(|&r| CircuitNode::record(tape, circuit, Readout::Qubit(0), r, head.theta_k))
        .collect::<Result<_>>()?;
    let values: Vec<Var> = rows
        .iter()
        .map(|&r| CircuitNode::record(tape, circuit, Readout::First(dh), r, head.theta_v))
        .collect::<Result<_>>()?;
    let key_vec = tape.concat(&keys);
    let value_flat = tape.concat(&values);
    let value_mat = tape.reshape(value_flat, vec![seq, dh])?;
    let scale = -1.0 / (dh as f64).sqrt();

    query_rows
        .iter()
        .map(|&i| {
            let row = *rows.get(i).ok_or(Error::InvalidParameter(format!(
                "query row {i} outside a sequence of {seq}"
            )))?;
            let q = CircuitNode::record(tape, circuit, Readout::Qubit(0), row, head.theta_q)?;
            let qb = tape.broadcast(q, seq)?;
            let diff = tape.sub(qb, key_vec)?;
            let sq = tape.mul(diff, diff)?;
            let logits = tape.scale(sq, scale);
            let weights = tape.softmax(logits);
            tape.vecmat(weights, value_mat)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::CircuitSpec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn circuit() -> EncodedCircuit {
        EncodedCircuit::new(CircuitSpec::layered(4, 2)).unwrap()
    }

    #[test]
    fn zero_angles_zero_input() {
        let c = circuit();
        let head = AttentionHeadParams::zeros(8);
        assert_eq!(key_scalar(&[0.0; 4], &c, &head).unwrap(), 1.0);
        assert_eq!(query_scalar(&[0.0; 4], &c, &head).unwrap(), 1.0);
        assert_eq!(value_row(&[0.0; 4], &c, &head).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn flipped_qubit_zero_gives_minus_one() {
        let c = circuit();
        let head = AttentionHeadParams::zeros(8);
        let k = key_scalar(&[PI, 0.0, 0.0, 0.0], &c, &head).unwrap();
        assert_relative_eq!(k, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn equal_angles_give_equal_key_and_query() {
        let c = circuit();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = AttentionHeadParams::init(8, &mut rng);
        head.theta_q = head.theta_k.clone();
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let k = key_scalar(&x, &c, &head).unwrap();
            assert_eq!(k, query_scalar(&x, &c, &head).unwrap());
            assert!((-1.0..=1.0).contains(&k));
            for v in value_row(&x, &c, &head).unwrap() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let c = circuit();
        let head = AttentionHeadParams::zeros(8);
        assert!(key_scalar(&[0.0; 3], &c, &head).is_err());
        assert!(attention_matrix(&[0.0; 2], &[0.0; 3]).is_err());
        let bad = AttentionHeadParams::zeros(7);
        assert!(head_intermediate(&Tensor::zeros(vec![2, 4]), &c, &bad).is_err());
    }

    #[test]
    fn attention_matrix_examples() {
        assert_eq!(attention_matrix(&[1.0], &[0.0]).unwrap().data(), &[-1.0]);
        let a = attention_matrix(&[0.5, -0.5], &[0.5, 0.0]).unwrap();
        assert_eq!(a.data(), &[0.0, -0.25, -1.0, -0.25]);
        let a = attention_matrix(&[0.3; 3], &[0.3; 3]).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_output_examples() {
        let v = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let out = head_output(&Tensor::zeros(vec![3, 3]), &v, 2).unwrap();
        for row in out.data().chunks(2) {
            assert_relative_eq!(row[0], 3.0, epsilon = 1e-14);
            assert_relative_eq!(row[1], 5.0, epsilon = 1e-14);
        }
        let single = Tensor::matrix(1, 2, vec![0.7, -0.2]).unwrap();
        let out = head_output(&Tensor::matrix(1, 1, vec![-3.0]).unwrap(), &single, 2).unwrap();
        assert_eq!(out, single);
        assert!(head_output(&Tensor::zeros(vec![2, 2]), &v, 2).is_err());
    }

    #[test]
    fn multihead_shapes_and_duplication() {
        let c = circuit();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = AttentionHeadParams::init(8, &mut rng);
        let x = Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64).collect()).unwrap();

        let one = multihead(&x, &c, std::slice::from_ref(&head)).unwrap();
        let mid = head_intermediate(&x, &c, &head).unwrap();
        assert_eq!(one, head_output(&mid.scores, &mid.values, 4).unwrap());

        let two = multihead(&x, &c, &[head.clone(), head]).unwrap();
        assert_eq!(two.shape(), &[3, 8]);
        for i in 0..3 {
            let row = &two.data()[i * 8..(i + 1) * 8];
            assert_eq!(row[..4], row[4..]);
        }
        assert!(multihead(&x, &c, &[]).is_err());
    }

    #[test]
    fn tape_head_matches_direct_evaluation() {
        let c = Arc::new(circuit());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = AttentionHeadParams::init(8, &mut rng);
        let x = Tensor::matrix(5, 4, (0..20).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let expected = multihead(&x, &c, std::slice::from_ref(&head)).unwrap();

        let mut tape = Tape::new();
        let rows: Vec<Var> = x
            .data()
            .chunks(4)
            .map(|r| tape.leaf(Tensor::vector(r.to_vec())))
            .collect();
        let vars = HeadVars::leaves(&mut tape, &head);
        let outs = head_on_tape(&mut tape, &c, &rows, vars, &[0, 1, 2, 3, 4]).unwrap();
        for (i, o) in outs.iter().enumerate() {
            for (a, b) in tape.value(*o).data().iter().zip(&expected.data()[i * 4..(i + 1) * 4]) {
                assert_relative_eq!(a, b, epsilon = 1e-14);
            }
        }
    }
}
