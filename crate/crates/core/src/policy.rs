//! Backtest policies driven by a trained network or by a seeded coin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::Action;
use crate::backtest::{Decision, Policy};
use crate::error::Result;
use crate::network::{Network, NetworkParams};

/// Takes the arg-max action of the network's Q-values at every bar.
pub struct GreedyPolicy<'a> {
    network: &'a Network,
    params: &'a NetworkParams,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(network: &'a Network, params: &'a NetworkParams) -> Result<Self> {
        network.validate_params(params)?;
        Ok(Self { network, params })
    }
}

impl Policy for GreedyPolicy<'_> {
    fn name(&self) -> &str {
        "QADQN"
    }

    fn warmup(&self) -> usize {
        self.network.config().window
    }

    fn decide(&mut self, decision: &Decision<'_>) -> Result<Action> {
        let window = decision.window(self.network.config().window)?;
        let q = self.network.forward(self.params, &window)?;
        Ok(Action::ALL[q.argmax()])
    }
}

/// Uniform random actions from `ChaCha8Rng::seed_from_u64(seed)`, one draw per
/// decision. Baseline for learning checks.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    warmup: usize,
}

impl RandomPolicy {
    pub fn new(seed: u64, warmup: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            warmup,
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "Random"
    }

    fn warmup(&self) -> usize {
        self.warmup
    }

    fn decide(&mut self, _: &Decision<'_>) -> Result<Action> {
        Ok(Action::ALL[self.rng.random_range(0..Action::ALL.len())])
    }
}
