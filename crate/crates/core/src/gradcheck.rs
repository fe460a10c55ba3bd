//! Finite-difference checks of the analytic gradients, grouped the way the
//! parameters are grouped in [`NetworkParams`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::Action;
use crate::autodiff::relative_error;
use crate::error::Result;
use crate::market_data::{feature_window, gbm_series, FeatureWindow};
use crate::network::{Network, NetworkParams};
use crate::quantum::EncodedCircuit;
use crate::training::{batch_loss, LossTerm};

/// Central-difference step for circuit angles.
pub const CIRCUIT_STEP: f64 = 1e-4;
/// Each angle enters a circuit as a single-frequency sinusoid, so with
/// h = 1e-4 the central difference is off by at most h²/6 ≈ 1.7e-9. Errors
/// are taken relative to at least this floor.
pub const CIRCUIT_FLOOR: f64 = 1e-2;
pub const CIRCUIT_TOLERANCE: f64 = 1e-6;

pub const NETWORK_STEP: f64 = 1e-4;
/// Rounding in the loss difference is about ε·L/h ≈ 1e-12; LSTM gradients
/// are routinely 1e-8, so the floor sits just above the noise.
pub const NETWORK_FLOOR: f64 = 1e-9;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

impl GroupReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Parameter-shift Jacobian of `circuit` (angles and inputs) against central
/// differences of its ⟨Z⟩ read-outs, over `trials` random points.
pub fn circuit_check(circuit: &EncodedCircuit, trials: usize, seed: u64) -> Result<GroupReport> {
    let n = circuit.qubits();
    let p = circuit.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..trials {
        let theta: Vec<f64> = (0..p).map(|_| rng.random_range(-pi..pi)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-pi..pi)).collect();
        let jac = circuit.jacobian(&x, &theta)?;
        for k in 0..p {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[k] += CIRCUIT_STEP;
            tm[k] -= CIRCUIT_STEP;
            let (fp, fm) = (circuit.expectations(&x, &tp)?, circuit.expectations(&x, &tm)?);
            for q in 0..n {
                let fd = (fp[q] - fm[q]) / (2.0 * CIRCUIT_STEP);
                worst = worst.max(relative_error(jac.d_theta[q * p + k], fd, CIRCUIT_FLOOR));
                checked += 1;
            }
        }
        for j in 0..n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += CIRCUIT_STEP;
            xm[j] -= CIRCUIT_STEP;
            let (fp, fm) = (circuit.expectations(&xp, &theta)?, circuit.expectations(&xm, &theta)?);
            for q in 0..n {
                let fd = (fp[q] - fm[q]) / (2.0 * CIRCUIT_STEP);
                worst = worst.max(relative_error(jac.d_input[q * n + j], fd, CIRCUIT_FLOOR));
                checked += 1;
            }
        }
    }
    Ok(GroupReport {
        group: "circuit".into(),
        checked,
        max_relative_error: worst,
    })
}

/// A small Huber-loss batch on a seeded GBM path, for gradient checks.
pub struct LossProbe {
    windows: Vec<FeatureWindow>,
    actions: Vec<Action>,
    targets: Vec<f64>,
    weights: Vec<f64>,
}

impl LossProbe {
    pub fn new(window: usize, seed: u64) -> Result<Self> {
        let series = gbm_series(100.0, 0.05, 0.3, 1.0 / 252.0, window + 40, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows = [3, 11, 20, 35]
            .iter()
            .map(|&k| feature_window(&series, window + k, window))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            windows,
            actions: vec![Action::Sit, Action::Buy, Action::Sell, Action::Buy],
            // Some targets sit far from Q ∈ [−1, 1] so the linear part of the
            // Huber loss is exercised too.
            targets: vec![0.4, -1.8, 2.1, rng.random_range(-0.5..0.5)],
            weights: (0..4).map(|_| rng.random_range(0.3..1.0)).collect(),
        })
    }

    fn terms(&self) -> Vec<LossTerm<'_>> {
        (0..self.windows.len())
            .map(|i| LossTerm {
                state: &self.windows[i],
                action: self.actions[i],
                target: self.targets[i],
                weight: self.weights[i],
            })
            .collect()
    }

    pub fn loss(&self, network: &Network, params: &NetworkParams) -> Result<f64> {
        Ok(batch_loss(network, params, &self.terms(), 1.0)?.loss)
    }

    pub fn gradient(&self, network: &Network, params: &NetworkParams) -> Result<NetworkParams> {
        Ok(batch_loss(network, params, &self.terms(), 1.0)?.grad)
    }

    /// Central difference of the loss in one scalar parameter.
    pub fn finite_difference(&self, network: &Network, params: &NetworkParams, array: usize, index: usize) -> Result<f64> {
        let shifted = |d: f64| {
            let mut p = params.clone();
            p.arrays_mut()[array][index] += d;
            self.loss(network, &p)
        };
        Ok((shifted(NETWORK_STEP)? - shifted(-NETWORK_STEP)?) / (2.0 * NETWORK_STEP))
    }
}

/// Full-network loss gradient against central differences on `per_group`
/// random scalars of every parameter group. Coordinates whose loss
/// sensitivity is below the floor are redrawn (up to 50 times), since some
/// angles cannot reach the read-out qubits at all.
pub fn network_check(network: &Network, params: &NetworkParams, per_group: usize, seed: u64) -> Result<Vec<GroupReport>> {
    let probe = LossProbe::new(network.config().window, seed)?;
    let grad = probe.gradient(network, params)?;
    let grad_arrays = grad.arrays();
    let coords: Vec<(usize, usize, String)> = params
        .arrays()
        .into_iter()
        .enumerate()
        .flat_map(|(a, (_, group, data))| {
            let group = group.to_string();
            (0..data.len()).map(move |i| (a, i, group.clone()))
        })
        .collect();
    let mut groups: Vec<String> = coords.iter().map(|c| c.2.clone()).collect();
    groups.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for group in groups {
        let members: Vec<&(usize, usize, String)> = coords.iter().filter(|c| c.2 == group).collect();
        let mut worst = 0.0f64;
        for _ in 0..per_group {
            let mut attempt = 0;
            let (a, i, fd) = loop {
                let (a, i, _) = *members[rng.random_range(0..members.len())];
                let fd = probe.finite_difference(network, params, a, i)?;
                attempt += 1;
                if fd.abs() > NETWORK_FLOOR || attempt == 50 {
                    break (a, i, fd);
                }
            };
            worst = worst.max(relative_error(grad_arrays[a].2[i], fd, NETWORK_FLOOR));
        }
        reports.push(GroupReport {
            group,
            checked: per_group,
            max_relative_error: worst,
        });
    }
    Ok(reports)
}
