//! Dense statevector simulation of small Rx/CNOT circuits with exact Pauli-Z
//! expectations and parameter-shift gradients.
//!
//! Qubit 0 is the most significant bit of the basis index, so for two qubits
//! the basis order is |00⟩, |01⟩, |10⟩, |11⟩ with the left digit on qubit 0.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{OpaqueOp, Tape, Tensor, Var};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0…0⟩ on `n` qubits.
    pub fn zero(n: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Self { n, amps }
    }

    /// Computational basis state with the given index.
    pub fn basis(n: usize, index: usize) -> Result<Self> {
        if index >= 1 << n {
            return Err(Error::InvalidParameter(format!(
                "basis index {index} out of range for {n} qubits"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    /// Takes raw amplitudes; the caller is responsible for normalisation.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        if !amps.len().is_power_of_two() {
            return Err(Error::InvalidParameter(
                "amplitude count must be a power of two".into(),
            ));
        }
        let n = amps.len().trailing_zeros() as usize;
        Ok(Self { n, amps })
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }

    fn mask(&self, qubit: usize) -> Result<usize> {
        if qubit >= self.n {
            return Err(Error::QubitOutOfRange { qubit, n: self.n });
        }
        Ok(1 << (self.n - 1 - qubit))
    }

    pub fn apply_rx(&mut self, qubit: usize, angle: f64) -> Result<()> {
        let mask = self.mask(qubit)?;
        self.rx_masked(mask, 0, angle);
        Ok(())
    }

    /// Rx on `target` wherever every bit in `control_mask` is set.
    fn rx_masked(&mut self, mask: usize, control_mask: usize, angle: f64) {
        let (s, c) = (0.5 * angle).sin_cos();
        if control_mask == 0 {
            rx_kernel(&mut self.amps, mask, c, s);
            return;
        }
        let mis = Complex64::new(0.0, -s);
        for i in 0..self.amps.len() {
            if i & mask != 0 || i & control_mask != control_mask {
                continue;
            }
            let j = i | mask;
            let (a0, a1) = (self.amps[i], self.amps[j]);
            self.amps[i] = a0 * c + a1 * mis;
            self.amps[j] = a0 * mis + a1 * c;
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        if control == target {
            return Err(Error::SameQubit(control));
        }
        let cm = self.mask(control)?;
        let tm = self.mask(target)?;
        cnot_kernel(&mut self.amps, cm, tm);
        Ok(())
    }

    /// Controlled Rx.
    pub fn apply_crx(&mut self, control: usize, target: usize, angle: f64) -> Result<()> {
        if control == target {
            return Err(Error::SameQubit(control));
        }
        let cm = self.mask(control)?;
        let tm = self.mask(target)?;
        self.rx_masked(tm, cm, angle);
        Ok(())
    }

    /// ⟨Z⟩ on `qubit`, computed from the amplitudes.
    pub fn expect_z(&self, qubit: usize) -> Result<f64> {
        let mask = self.mask(qubit)?;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum())
    }

    /// ⟨Z_j⟩ for every qubit in index order.
    pub fn expect_all_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        z_kernel(&self.amps, &mut out);
        out
    }
}

/// Rx with precomputed `cos(angle/2)`, `sin(angle/2)` on the qubit whose bit is `mask`.
#[inline(always)]
fn rx_kernel(amps: &mut [Complex64], mask: usize, c: f64, s: f64) {
    // [[c, −is], [−is, c]]
    let rot = |a0: &mut Complex64, a1: &mut Complex64| {
        let (x0, x1) = (*a0, *a1);
        *a0 = Complex64::new(c * x0.re + s * x1.im, c * x0.im - s * x1.re);
        *a1 = Complex64::new(s * x0.im + c * x1.re, c * x1.im - s * x0.re);
    };
    if mask == 1 {
        for pair in amps.chunks_exact_mut(2) {
            let (lo, hi) = pair.split_at_mut(1);
            rot(&mut lo[0], &mut hi[0]);
        }
        return;
    }
    for block in amps.chunks_exact_mut(2 * mask) {
        let (lo, hi) = block.split_at_mut(mask);
        for (a0, a1) in lo.iter_mut().zip(hi) {
            rot(a0, a1);
        }
    }
}

#[inline(always)]
fn x_kernel(amps: &mut [Complex64], mask: usize) {
    for block in amps.chunks_exact_mut(2 * mask) {
        let (lo, hi) = block.split_at_mut(mask);
        lo.swap_with_slice(hi);
    }
}

#[inline(always)]
fn cnot_kernel(amps: &mut [Complex64], cm: usize, tm: usize) {
    if cm > tm {
        for block in amps.chunks_exact_mut(2 * cm) {
            x_kernel(&mut block[cm..], tm);
        }
    } else {
        for block in amps.chunks_exact_mut(2 * tm) {
            let (lo, hi) = block.split_at_mut(tm);
            for (l, h) in lo.chunks_exact_mut(2 * cm).zip(hi.chunks_exact_mut(2 * cm)) {
                l[cm..].swap_with_slice(&mut h[cm..]);
            }
        }
    }
}

/// ⟨Z⟩ on every qubit; `out.len()` is the qubit count.
#[inline(always)]
fn z_kernel(amps: &[Complex64], out: &mut [f64]) {
    let mut w = [0.0; 64];
    let w = &mut w[..amps.len().min(64)];
    if w.len() == amps.len() {
        for (w, a) in w.iter_mut().zip(amps) {
            *w = a.norm_sqr();
        }
        z_weights(w, out);
    } else {
        let w: Vec<f64> = amps.iter().map(Complex64::norm_sqr).collect();
        z_weights(&w, out);
    }
}

/// `out[q] = Σ_k z_q(k)·w[k]` where `z_q(k)` is ±1 by bit `q` of `k`.
#[inline(always)]
fn z_weights(w: &[f64], out: &mut [f64]) {
    let n = out.len();
    let total: f64 = w.iter().sum();
    for (q, o) in out.iter_mut().enumerate() {
        let mask = 1 << (n - 1 - q);
        let p1: f64 = w.chunks_exact(2 * mask).map(|block| block[mask..].iter().sum::<f64>()).sum();
        // ⟨Z⟩ = P(0) − P(1) = total − 2·P(1).
        *o = total - 2.0 * p1;
    }
}

/// Writes the product state `⊗_j Rx(−x_j)|0⟩` into `amps`.
#[inline(always)]
fn embed_kernel(x: &[f64], amps: &mut [Complex64]) {
    let n = x.len();
    amps[0] = Complex64::new(1.0, 0.0);
    let mut len = 1;
    // Build qubit by qubit from the least significant end: each factor is
    // cos(x/2)|0⟩ + i·sin(x/2)|1⟩.
    for q in (0..n).rev() {
        let (s, c) = (0.5 * x[q]).sin_cos();
        for i in 0..len {
            let a = amps[i];
            amps[i + len] = a * Complex64::new(0.0, s);
            amps[i] = a * c;
        }
        len *= 2;
    }
}

/// Encodes `x` as `⊗_j Rx(x_j)†|0⟩`, i.e. Rx(−x_j) on qubit j.
pub fn angle_embed(x: &[f64]) -> StateVector {
    let mut state = StateVector::zero(x.len());
    for (q, &v) in x.iter().enumerate() {
        state.apply_rx(q, -v).expect("qubit index within register");
    }
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    /// Rx with the angle taken from parameter `slot`.
    Rx { qubit: usize, slot: usize },
    Cnot { control: usize, target: usize },
    /// Controlled Rx. Its generator has a zero eigenvalue, so the two-term
    /// shift rule does not hold for it.
    Crx { control: usize, target: usize, slot: usize },
}

impl Gate {
    fn slot(&self) -> Option<usize> {
        match *self {
            Gate::Rx { slot, .. } | Gate::Crx { slot, .. } => Some(slot),
            Gate::Cnot { .. } => None,
        }
    }
}

/// Angles for a parameterised circuit, in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub qubits: usize,
    pub params: usize,
    pub gates: Vec<Gate>,
}

impl CircuitSpec {
    /// `layers` repetitions of: Rx(θ[l·n + i]) on every qubit i, then the
    /// CNOT chain 0→1, 1→2, …, n−2→n−1.
    pub fn layered(qubits: usize, layers: usize) -> Self {
        let mut gates = Vec::with_capacity(layers * (2 * qubits - 1));
        for l in 0..layers {
            gates.extend((0..qubits).map(|q| Gate::Rx {
                qubit: q,
                slot: l * qubits + q,
            }));
            gates.extend((0..qubits.saturating_sub(1)).map(|q| Gate::Cnot {
                control: q,
                target: q + 1,
            }));
        }
        Self {
            qubits,
            params: layers * qubits,
            gates,
        }
    }

    /// Checks qubit indices and that the slots cover `0..params` exactly.
    pub fn validate(&self) -> Result<()> {
        let mut used = vec![false; self.params];
        for gate in &self.gates {
            let qubits: &[usize] = match gate {
                Gate::Rx { qubit, .. } => std::slice::from_ref(qubit),
                Gate::Cnot { control, target } | Gate::Crx { control, target, .. } => {
                    if control == target {
                        return Err(Error::SameQubit(*control));
                    }
                    &[*control, *target]
                }
            };
            if let Some(&q) = qubits.iter().find(|&&q| q >= self.qubits) {
                return Err(Error::QubitOutOfRange { qubit: q, n: self.qubits });
            }
            if let Some(slot) = gate.slot() {
                match used.get_mut(slot) {
                    Some(u) => *u = true,
                    None => {
                        return Err(Error::InvalidParameter(format!(
                            "gate references slot {slot} but the circuit has {} parameters",
                            self.params
                        )))
                    }
                }
            }
        }
        if let Some(free) = used.iter().position(|u| !u) {
            return Err(Error::InvalidParameter(format!("parameter slot {free} is never used")));
        }
        Ok(())
    }

    fn run_in_place(&self, theta: &[f64], state: &mut StateVector, shift: Option<(usize, f64)>) -> Result<()> {
        for (g, gate) in self.gates.iter().enumerate() {
            let extra = match shift {
                Some((at, delta)) if at == g => delta,
                _ => 0.0,
            };
            match *gate {
                Gate::Rx { qubit, slot } => state.apply_rx(qubit, theta[slot] + extra)?,
                Gate::Cnot { control, target } => state.apply_cnot(control, target)?,
                Gate::Crx { control, target, slot } => {
                    state.apply_crx(control, target, theta[slot] + extra)?
                }
            }
        }
        Ok(())
    }

    fn check_inputs(&self, theta: &ParamVector, input: &StateVector) -> Result<()> {
        check_len("circuit parameters", self.params, theta.len())?;
        check_len("circuit register", self.qubits, input.qubits())
    }
}

pub fn run_circuit(spec: &CircuitSpec, theta: &ParamVector, input: &StateVector) -> Result<StateVector> {
    spec.check_inputs(theta, input)?;
    let mut state = input.clone();
    spec.run_in_place(theta.as_slice(), &mut state, None)?;
    Ok(state)
}

/// ∂⟨Z_observable⟩/∂θ_k for every slot, by the two-term shift rule applied to
/// each gate occurrence of the slot.
pub fn param_shift_grad(
    spec: &CircuitSpec,
    theta: &ParamVector,
    input: &StateVector,
    observable: usize,
) -> Result<Vec<f64>> {
    spec.check_inputs(theta, input)?;
    if observable >= spec.qubits {
        return Err(Error::QubitOutOfRange {
            qubit: observable,
            n: spec.qubits,
        });
    }
    let mut grad = vec![0.0; spec.params];
    for (g, gate) in spec.gates.iter().enumerate() {
        let slot = match *gate {
            Gate::Rx { slot, .. } => slot,
            Gate::Cnot { .. } => continue,
            Gate::Crx { .. } => return Err(Error::UnsupportedShift(format!("{gate:?}"))),
        };
        let eval = |delta: f64| -> Result<f64> {
            let mut state = input.clone();
            spec.run_in_place(theta.as_slice(), &mut state, Some((g, delta)))?;
            state.expect_z(observable)
        };
        grad[slot] += 0.5 * (eval(FRAC_PI_2)? - eval(-FRAC_PI_2)?);
    }
    Ok(grad)
}

/// Angle embedding of a classical vector followed by a variational circuit,
/// measured in Z on every qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCircuit {
    spec: CircuitSpec,
    ops: Vec<Op>,
    /// Per qubit, the index of the Rx gate that directly follows its
    /// embedding rotation, if the first gate touching it is one.
    merged: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Rx { mask: usize, slot: usize },
    Cnot { cm: usize, tm: usize },
}

/// Values and Jacobians of all Z expectations. Both Jacobians are row-major
/// with one row per measured qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitJacobian {
    pub values: Vec<f64>,
    pub d_input: Vec<f64>,
    pub d_theta: Vec<f64>,
}

impl EncodedCircuit {
    pub fn new(spec: CircuitSpec) -> Result<Self> {
        spec.validate()?;
        if spec.gates.iter().any(|g| matches!(g, Gate::Crx { .. })) {
            return Err(Error::UnsupportedShift(
                "encoded circuits must be built from Rx and CNOT".into(),
            ));
        }
        let bit = |q: usize| 1 << (spec.qubits - 1 - q);
        let ops = spec
            .gates
            .iter()
            .map(|g| match *g {
                Gate::Rx { qubit, slot } => Op::Rx { mask: bit(qubit), slot },
                Gate::Cnot { control, target } => Op::Cnot {
                    cm: bit(control),
                    tm: bit(target),
                },
                Gate::Crx { .. } => unreachable!("rejected above"),
            })
            .collect();
        let merged = (0..spec.qubits)
            .map(|q| {
                let first = spec.gates.iter().position(|g| match *g {
                    Gate::Rx { qubit, .. } => qubit == q,
                    Gate::Cnot { control, target } => control == q || target == q,
                    Gate::Crx { .. } => true,
                })?;
                matches!(spec.gates[first], Gate::Rx { .. }).then_some(first)
            })
            .collect();
        Ok(Self { spec, ops, merged })
    }

    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn qubits(&self) -> usize {
        self.spec.qubits
    }

    pub fn params(&self) -> usize {
        self.spec.params
    }

    fn check(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        check_len("circuit input", self.spec.qubits, x.len())?;
        check_len("circuit parameters", self.spec.params, theta.len())
    }

    /// `cos(θ/2)`, `sin(θ/2)` per gate (zeros for CNOT).
    fn half_angles(&self, theta: &[f64]) -> Vec<(f64, f64)> {
        self.ops
            .iter()
            .map(|op| match *op {
                Op::Rx { slot, .. } => {
                    let (s, c) = (0.5 * theta[slot]).sin_cos();
                    (c, s)
                }
                Op::Cnot { .. } => (0.0, 0.0),
            })
            .collect()
    }

    #[inline(always)]
    fn apply_from(&self, start: usize, cs: &[(f64, f64)], amps: &mut [Complex64]) {
        for (op, &(c, s)) in self.ops[start..].iter().zip(&cs[start..]) {
            match *op {
                Op::Rx { mask, .. } => rx_kernel(amps, mask, c, s),
                Op::Cnot { cm, tm } => cnot_kernel(amps, cm, tm),
            }
        }
    }

    #[inline(always)]
    fn eval_into(&self, x: &[f64], cs: &[(f64, f64)], amps: &mut [Complex64], out: &mut [f64]) {
        embed_kernel(x, amps);
        self.apply_from(0, cs, amps);
        z_kernel(amps, out);
    }

    pub fn expectations(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check(x, theta)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << self.spec.qubits];
        let mut out = vec![0.0; self.spec.qubits];
        let cs = self.half_angles(theta);
        with_avx2!(self.eval_into(x, &cs, &mut amps, &mut out));
        Ok(out)
    }

    /// Exact Jacobian by parameter shift. The embedding angles enter as
    /// Rx(−x_j), which is still generated by X/2, so the same two-term rule
    /// applies to the inputs. Shifted runs for a gate restart from the cached
    /// state just before it.
    pub fn jacobian(&self, x: &[f64], theta: &[f64]) -> Result<CircuitJacobian> {
        self.check(x, theta)?;
        Ok(with_avx2!(self.jacobian_unchecked(x, theta)))
    }

    #[inline(always)]
    fn jacobian_unchecked(&self, x: &[f64], theta: &[f64]) -> CircuitJacobian {
        let n = self.spec.qubits;
        let p = self.spec.params;
        let dim = 1usize << n;
        let cs = self.half_angles(theta);
        let zero = Complex64::new(0.0, 0.0);

        // prefix[g] is the state before gate g; the last block is the output.
        let mut prefix = Vec::with_capacity(dim * (self.ops.len() + 1));
        prefix.resize(dim, zero);
        embed_kernel(x, &mut prefix);
        for (g, op) in self.ops.iter().enumerate() {
            prefix.extend_from_within(g * dim..);
            let next = &mut prefix[(g + 1) * dim..];
            match *op {
                Op::Rx { mask, .. } => rx_kernel(next, mask, cs[g].0, cs[g].1),
                Op::Cnot { cm, tm } => cnot_kernel(next, cm, tm),
            }
        }
        let mut values = vec![0.0; n];
        z_kernel(&prefix[self.ops.len() * dim..], &mut values);

        let output = &prefix[self.ops.len() * dim..];
        let mut buf = vec![zero; dim];
        let mut weights = vec![0.0; dim];
        let mut shift = vec![0.0; n];
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];

        // Shift contribution of every Rx gate, row-major [gate][qubit].
        // Rx(θ ± π/2) = (I ∓ iX)/√2 · Rx(θ), and the rest of the circuit is
        // linear, so with A the unshifted output and B the rest of the
        // circuit applied to X·Rx(θ)|φ⟩, the shifted outputs are (A ∓ iB)/√2.
        let mut per_gate = vec![0.0; n * self.ops.len()];
        let mut d_theta = vec![0.0; n * p];
        for (g, op) in self.ops.iter().enumerate() {
            let Op::Rx { mask, slot } = *op else {
                continue;
            };
            buf.copy_from_slice(&prefix[(g + 1) * dim..(g + 2) * dim]);
            x_kernel(&mut buf, mask);
            self.apply_from(g + 1, &cs, &mut buf);
            // |a − ib|² − |a + ib|² = 4·Im(conj(a)·b), so half the difference
            // of the shifted expectations weighs each basis state by Im(conj(a)·b).
            for ((w, a), b) in weights.iter_mut().zip(output).zip(&buf) {
                *w = a.re * b.im - a.im * b.re;
            }
            z_weights(&weights, &mut shift);
            for q in 0..n {
                let d = shift[q];
                per_gate[g * n + q] = d;
                d_theta[q * p + slot] += d;
            }
        }

        // Rx(θ)·Rx(−x) = Rx(θ − x), so where the embedding is directly followed
        // by an Rx on the same qubit, ∂/∂x is minus that gate's shift term.
        let mut d_input = vec![0.0; n * n];
        let mut xs = x.to_vec();
        for j in 0..n {
            if let Some(g) = self.merged[j] {
                for q in 0..n {
                    d_input[q * n + j] = -per_gate[g * n + q];
                }
                continue;
            }
            xs[j] = x[j] + FRAC_PI_2;
            self.eval_into(&xs, &cs, &mut buf, &mut plus);
            xs[j] = x[j] - FRAC_PI_2;
            self.eval_into(&xs, &cs, &mut buf, &mut minus);
            xs[j] = x[j];
            for q in 0..n {
                d_input[q * n + j] = 0.5 * (plus[q] - minus[q]);
            }
        }

        CircuitJacobian {
            values,
            d_input,
            d_theta,
        }
    }
}

/// Which expectations a [`CircuitNode`] exposes on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// ⟨Z⟩ on a single qubit.
    Qubit(usize),
    /// ⟨Z⟩ on the first `k` qubits.
    First(usize),
}

/// Tape node for an [`EncodedCircuit`] with inputs `[x, θ]`. Backward runs
/// the parameter-shift Jacobian.
pub struct CircuitNode {
    circuit: Arc<EncodedCircuit>,
    readout: Readout,
}

impl CircuitNode {
    pub fn record(
        tape: &mut Tape,
        circuit: &Arc<EncodedCircuit>,
        readout: Readout,
        x: Var,
        theta: Var,
    ) -> Result<Var> {
        let all = circuit.expectations(tape.value(x).data(), tape.value(theta).data())?;
        let values = match readout {
            Readout::Qubit(q) => vec![*all.get(q).ok_or(Error::QubitOutOfRange { qubit: q, n: all.len() })?],
            Readout::First(k) => {
                if k > all.len() {
                    return Err(Error::QubitOutOfRange { qubit: k - 1, n: all.len() });
                }
                all[..k].to_vec()
            }
        };
        let node = Box::new(CircuitNode {
            circuit: Arc::clone(circuit),
            readout,
        });
        Ok(tape.opaque(node, &[x, theta], Tensor::vector(values)))
    }

    fn rows(&self) -> std::ops::Range<usize> {
        match self.readout {
            Readout::Qubit(q) => q..q + 1,
            Readout::First(k) => 0..k,
        }
    }
}

impl OpaqueOp for CircuitNode {
    fn name(&self) -> &str {
        "encoded-circuit"
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64]) -> Result<Vec<Tensor>> {
        let (x, theta) = (inputs[0].data(), inputs[1].data());
        let jac = self.circuit.jacobian(x, theta)?;
        let (n, p) = (x.len(), theta.len());
        let mut gx = vec![0.0; n];
        let mut gt = vec![0.0; p];
        for (&g, q) in grad_output.iter().zip(self.rows()) {
            if g == 0.0 {
                continue;
            }
            for (d, j) in gx.iter_mut().zip(&jac.d_input[q * n..(q + 1) * n]) {
                *d += g * j;
            }
            for (d, j) in gt.iter_mut().zip(&jac.d_theta[q * p..(q + 1) * p]) {
                *d += g * j;
            }
        }
        Ok(vec![Tensor::vector(gx), Tensor::vector(gt)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn one_qubit_rx() -> CircuitSpec {
        CircuitSpec {
            qubits: 1,
            params: 1,
            gates: vec![Gate::Rx { qubit: 0, slot: 0 }],
        }
    }

    #[test]
    fn rx_examples() {
        let mut s = StateVector::zero(1);
        s.apply_rx(0, 0.0).unwrap();
        assert_eq!(s, StateVector::zero(1));

        let mut s = StateVector::zero(1);
        s.apply_rx(0, PI).unwrap();
        assert_relative_eq!(s.expect_z(0).unwrap(), -1.0, epsilon = 1e-15);

        let mut s = StateVector::zero(1);
        s.apply_rx(0, PI / 2.0).unwrap();
        assert!(s.expect_z(0).unwrap().abs() < 1e-15);

        let mut s = StateVector::zero(2);
        assert!(matches!(s.apply_rx(2, 0.1), Err(Error::QubitOutOfRange { .. })));
    }

    #[test]
    fn cnot_truth_table() {
        // |10⟩ has index 0b10 with qubit 0 as the high bit.
        let mut s = StateVector::basis(2, 0b10).unwrap();
        s.apply_cnot(0, 1).unwrap();
        assert_eq!(s, StateVector::basis(2, 0b11).unwrap());

        let mut s = StateVector::zero(2);
        s.apply_cnot(0, 1).unwrap();
        assert_eq!(s, StateVector::zero(2));

        let mut s = angle_embed(&[0.3, 1.1]);
        let before = s.clone();
        s.apply_cnot(0, 1).unwrap();
        s.apply_cnot(0, 1).unwrap();
        assert_eq!(s, before);

        assert!(matches!(s.apply_cnot(1, 1), Err(Error::SameQubit(1))));
        assert!(matches!(s.apply_cnot(0, 5), Err(Error::QubitOutOfRange { .. })));
    }

    #[test]
    fn embedding_examples() {
        let s = angle_embed(&[0.0; 4]);
        assert_eq!(s.expect_all_z(), vec![1.0; 4]);

        let s = angle_embed(&[0.0, PI / 2.0, 0.0, 0.0]);
        assert!(s.expect_z(1).unwrap().abs() < 1e-15);

        let a = angle_embed(&[0.4, -1.3]).expect_all_z();
        let b = angle_embed(&[-0.4, 1.3]).expect_all_z();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn circuit_examples() {
        let spec = CircuitSpec::layered(4, 2);
        let out = run_circuit(&spec, &ParamVector::zeros(8), &StateVector::zero(4)).unwrap();
        assert_eq!(out, StateVector::zero(4));

        let spec = one_qubit_rx();
        for theta in [0.0, 0.3, 1.0, 2.5] {
            let out = run_circuit(&spec, &ParamVector(vec![theta]), &StateVector::zero(1)).unwrap();
            assert_relative_eq!(out.expect_z(0).unwrap(), theta.cos(), epsilon = 1e-15);
        }

        assert!(matches!(
            run_circuit(&CircuitSpec::layered(4, 2), &ParamVector::zeros(7), &StateVector::zero(4)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn expectation_examples() {
        assert_eq!(StateVector::zero(1).expect_z(0).unwrap(), 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = StateVector::from_amplitudes(vec![Complex64::new(h, 0.0), Complex64::new(h, 0.0)]).unwrap();
        assert!(plus.expect_z(0).unwrap().abs() < 1e-15);
        let mut s = StateVector::zero(1);
        s.apply_rx(0, 1.0).unwrap();
        assert_relative_eq!(s.expect_z(0).unwrap(), 0.540_302_305_868_139_8, epsilon = 1e-15);
    }

    #[test]
    fn shift_rule_single_rx() {
        let spec = one_qubit_rx();
        let g = param_shift_grad(&spec, &ParamVector(vec![PI / 2.0]), &StateVector::zero(1), 0).unwrap();
        assert_relative_eq!(g[0], -1.0, epsilon = 1e-15);
        let g = param_shift_grad(&spec, &ParamVector(vec![0.0]), &StateVector::zero(1), 0).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn shift_rule_rejects_controlled_rotation() {
        let spec = CircuitSpec {
            qubits: 2,
            params: 1,
            gates: vec![Gate::Crx { control: 0, target: 1, slot: 0 }],
        };
        assert!(spec.validate().is_ok());
        assert!(matches!(
            param_shift_grad(&spec, &ParamVector(vec![0.2]), &StateVector::zero(2), 1),
            Err(Error::UnsupportedShift(_))
        ));
        assert!(EncodedCircuit::new(spec).is_err());
    }

    #[test]
    fn crx_acts_only_when_control_set() {
        let mut s = StateVector::zero(2);
        s.apply_crx(0, 1, PI).unwrap();
        assert_eq!(s.expect_all_z(), vec![1.0, 1.0]);
        let mut s = StateVector::basis(2, 0b10).unwrap();
        s.apply_crx(0, 1, PI).unwrap();
        assert_relative_eq!(s.expect_z(1).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn spec_validation() {
        assert!(CircuitSpec::layered(4, 3).validate().is_ok());
        let bad = CircuitSpec {
            qubits: 2,
            params: 2,
            gates: vec![Gate::Rx { qubit: 0, slot: 0 }],
        };
        assert!(bad.validate().is_err());
        let bad = CircuitSpec {
            qubits: 2,
            params: 1,
            gates: vec![Gate::Rx { qubit: 3, slot: 0 }],
        };
        assert!(matches!(bad.validate(), Err(Error::QubitOutOfRange { .. })));
    }

    #[test]
    fn repeated_slot_sums_occurrences() {
        // Rx(θ)Rx(θ) = Rx(2θ): ⟨Z⟩ = cos 2θ, derivative −2 sin 2θ.
        let spec = CircuitSpec {
            qubits: 1,
            params: 1,
            gates: vec![Gate::Rx { qubit: 0, slot: 0 }, Gate::Rx { qubit: 0, slot: 0 }],
        };
        let theta = 0.37;
        let g = param_shift_grad(&spec, &ParamVector(vec![theta]), &StateVector::zero(1), 0).unwrap();
        assert_relative_eq!(g[0], -2.0 * (2.0 * theta).sin(), epsilon = 1e-14);
    }
}
