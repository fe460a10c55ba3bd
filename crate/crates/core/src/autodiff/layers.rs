//! Classical layers used ahead of the quantum attention block: ELU, softmax,
//! dense layers and the LSTM cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{dot, sigmoid, softmax_in_place};
use crate::autodiff::{OpaqueOp, Tape, Tensor, Var};
use crate::error::{check_len, Error, Result};


/// ELU with α = 1.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

fn uniform_tensor<R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("finite uniform draws")
}

/// Fully connected layer, `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![output, input]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    /// Weights and biases uniform in ±1/√fan_in.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform_tensor(vec![output, input], bound, rng),
            bias: uniform_tensor(vec![output], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn leaves(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl DenseVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(self.weight, x, self.bias)
    }
}

/// LSTM weights with the four gates stacked in the order input, forget,
/// candidate, output. `weight` is `[4·hidden, input + hidden]` and acts on the
/// concatenation `[x, h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            weight: Tensor::zeros(vec![4 * hidden, input + hidden]),
            bias: Tensor::zeros(vec![4 * hidden]),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        Self {
            input,
            hidden,
            weight: uniform_tensor(vec![4 * hidden, input + hidden], bound, rng),
            bias: uniform_tensor(vec![4 * hidden], bound, rng),
        }
    }

    pub fn leaves(&self, tape: &mut Tape) -> LstmVars {
        LstmVars {
            hidden: self.hidden,
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_len("lstm weight", 4 * self.hidden * (self.input + self.hidden), self.weight.len())?;
        check_len("lstm bias", 4 * self.hidden, self.bias.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub hidden: usize,
    pub weight: Var,
    pub bias: Var,
}

impl LstmVars {
    /// One LSTM step recorded on the tape. Returns `(h', c')`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hs = self.hidden;
        check_len("lstm hidden state", hs, tape.value(h).len())?;
        check_len("lstm cell state", hs, tape.value(c).len())?;
        let xh = tape.concat(&[x, h]);
        let z = tape.linear(self.weight, xh, self.bias)?;
        let zi = tape.slice(z, 0, hs)?;
        let zf = tape.slice(z, hs, hs)?;
        let zg = tape.slice(z, 2 * hs, hs)?;
        let zo = tape.slice(z, 3 * hs, hs)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

impl LstmVars {
    /// Runs the whole sequence `xs` (shape `[T, input]`, in processing order)
    /// from a zero state as a single tape node whose output is the hidden
    /// states, shape `[T, hidden]`. Matches repeated [`step`](Self::step).
    pub fn sequence(&self, tape: &mut Tape, xs: Var) -> Result<Var> {
        let hs = self.hidden;
        let (rows, cols) = tape
            .value(self.weight)
            .dims2()
            .ok_or(Error::InvalidParameter("lstm weight must be rank 2".into()))?;
        check_len("lstm gate rows", 4 * hs, rows)?;
        check_len("lstm bias", 4 * hs, tape.value(self.bias).len())?;
        let input = cols - hs;
        let (steps, xcols) = tape
            .value(xs)
            .dims2()
            .ok_or(Error::InvalidParameter("lstm inputs must be rank 2".into()))?;
        check_len("lstm input", input, xcols)?;

        let w = tape.value(self.weight).data();
        let b = tape.value(self.bias).data();
        let x = tape.value(xs).data();
        let mut cache = LstmTrace {
            input,
            hidden: hs,
            steps,
            xh: vec![0.0; steps * cols],
            gates: vec![0.0; steps * 4 * hs],
            cells: vec![0.0; (steps + 1) * hs],
            tanh_cells: vec![0.0; steps * hs],
        };
        let mut out = vec![0.0; steps * hs];
        with_avx2!(cache.forward(w, b, x, &mut out));
        let output = Tensor::matrix(steps, hs, out)?;
        Ok(tape.opaque(Box::new(cache), &[self.weight, self.bias, xs], output))
    }
}

/// Forward activations kept for the backward pass of [`LstmVars::sequence`].
struct LstmTrace {
    input: usize,
    hidden: usize,
    steps: usize,
    /// `[x_t; h_{t−1}]` per step.
    xh: Vec<f64>,
    /// Activated gates i, f, g, o per step.
    gates: Vec<f64>,
    /// c_{−1} = 0 followed by c_t per step.
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
}

impl OpaqueOp for LstmTrace {
    fn name(&self) -> &str {
        "lstm_sequence"
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64]) -> Result<Vec<Tensor>> {
        let (hs, input, steps) = (self.hidden, self.input, self.steps);
        let w = inputs[0].data();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 4 * hs];
        let mut dx = vec![0.0; steps * input];
        with_avx2!(self.backward(w, grad_output, &mut dw, &mut db, &mut dx));
        Ok(vec![
            Tensor::matrix(4 * hs, input + hs, dw)?,
            Tensor::vector(db),
            Tensor::matrix(steps, input, dx)?,
        ])
    }
}

impl LstmTrace {
    #[inline(always)]
    fn forward(&mut self, w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
        let (hs, input) = (self.hidden, self.input);
        let cols = input + hs;
        let mut h = vec![0.0; hs];
        for t in 0..self.steps {
            let xh = &mut self.xh[t * cols..(t + 1) * cols];
            xh[..input].copy_from_slice(&x[t * input..(t + 1) * input]);
            xh[input..].copy_from_slice(&h);
            let gates = &mut self.gates[t * 4 * hs..(t + 1) * 4 * hs];
            for (r, z) in gates.iter_mut().enumerate() {
                let pre = dot(&w[r * cols..(r + 1) * cols], xh) + b[r];
                *z = if (2 * hs..3 * hs).contains(&r) { pre.tanh() } else { sigmoid(pre) };
            }
            let (prev, next) = self.cells.split_at_mut((t + 1) * hs);
            let (c_prev, c_next) = (&prev[t * hs..], &mut next[..hs]);
            for k in 0..hs {
                let (i, f, g, o) = (gates[k], gates[hs + k], gates[2 * hs + k], gates[3 * hs + k]);
                c_next[k] = f * c_prev[k] + i * g;
                let tc = c_next[k].tanh();
                self.tanh_cells[t * hs + k] = tc;
                h[k] = o * tc;
            }
            out[t * hs..(t + 1) * hs].copy_from_slice(&h);
        }
    }

    #[inline(always)]
    fn backward(&self, w: &[f64], grad_output: &[f64], dw: &mut [f64], db: &mut [f64], dx: &mut [f64]) {
        let (hs, input) = (self.hidden, self.input);
        let cols = input + hs;
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut dz = vec![0.0; 4 * hs];
        let mut dxh = vec![0.0; cols];
        for t in (0..self.steps).rev() {
            let gates = &self.gates[t * 4 * hs..(t + 1) * 4 * hs];
            let c_prev = &self.cells[t * hs..(t + 1) * hs];
            for k in 0..hs {
                let (i, f, g, o) = (gates[k], gates[hs + k], gates[2 * hs + k], gates[3 * hs + k]);
                let tc = self.tanh_cells[t * hs + k];
                let dh = grad_output[t * hs + k] + dh_next[k];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[hs + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * hs + k] = dc * i * (1.0 - g * g);
                dz[3 * hs + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let xh = &self.xh[t * cols..(t + 1) * cols];
            dxh.fill(0.0);
            for (r, &d) in dz.iter().enumerate() {
                db[r] += d;
                let row = r * cols..(r + 1) * cols;
                for (gw, &xv) in dw[row.clone()].iter_mut().zip(xh) {
                    *gw += d * xv;
                }
                for (dv, &wv) in dxh.iter_mut().zip(&w[row]) {
                    *dv += d * wv;
                }
            }
            dx[t * input..(t + 1) * input].copy_from_slice(&dxh[..input]);
            dh_next.copy_from_slice(&dxh[input..]);
        }
    }
}

/// Evaluates a single LSTM step without keeping the tape.
pub fn lstm_cell(x: &[f64], h: &[f64], c: &[f64], params: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    check_len("lstm input", params.input, x.len())?;
    let mut tape = Tape::new();
    let vars = params.leaves(&mut tape);
    let xv = tape.leaf(Tensor::vector(x.to_vec()));
    let hv = tape.leaf(Tensor::vector(h.to_vec()));
    let cv = tape.leaf(Tensor::vector(c.to_vec()));
    let (h2, c2) = vars.step(&mut tape, xv, hv, cv)?;
    Ok((tape.value(h2).data().to_vec(), tape.value(c2).data().to_vec()))
}

/// Chain of dense layers, each followed by ELU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreNetParams {
    pub layers: Vec<Dense>,
}

impl PreNetParams {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn validate(&self, input: usize, output: usize) -> Result<()> {
        let mut dim = input;
        for layer in &self.layers {
            check_len("pre-net layer input", dim, layer.input_dim())?;
            check_len("pre-net weight", layer.output_dim() * layer.input_dim(), layer.weight.len())?;
            check_len("pre-net bias", layer.output_dim(), layer.bias.len())?;
            dim = layer.output_dim();
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("pre-net needs at least one layer".into()));
        }
        check_len("pre-net output", output, dim)
    }

    pub fn leaves(&self, tape: &mut Tape) -> Vec<DenseVars> {
        self.layers.iter().map(|l| l.leaves(tape)).collect()
    }
}

pub fn prenet_apply(layers: &[DenseVars], tape: &mut Tape, x: Var) -> Result<Var> {
    layers.iter().try_fold(x, |acc, layer| {
        let z = layer.apply(tape, acc)?;
        Ok(tape.elu(z))
    })
}
