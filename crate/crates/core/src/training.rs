//! Deep Q-learning loop: UCB exploration, prioritized replay seeded with
//! Dual Thrust demonstrations, Huber TD loss and Lion updates.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    prepopulate_dual_thrust, state_key, ucb_select, Action, EnvConfig, PerConfig, PrioritizedReplayMemory,
    Transition, UcbCounts,
};
use crate::backtest::TradingEnv;
use crate::error::{check_len, Error, Result};
use crate::market_data::{FeatureWindow, PriceSeries};
use crate::network::{Network, NetworkParams, ACTIONS};
use crate::strategies::DualThrustParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub episodes: usize,
    pub batch_size: usize,
    /// Gradient steps between target-network syncs.
    pub target_update: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub huber_delta: f64,
    /// Rewards are clipped to ±reward_clip. Defaults to 1 − gamma.
    pub reward_clip: f64,
    pub commission: f64,
    pub replay_capacity: usize,
    /// Upper bound on Dual Thrust transitions stored before training.
    pub demonstrations: usize,
    pub ucb_c: f64,
    pub per: PerConfig,
    pub dual_thrust: DualThrustParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            episodes: 200,
            batch_size: 32,
            target_update: 100,
            learning_rate: 3e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            huber_delta: 1.0,
            reward_clip: 0.05,
            commission: 0.002,
            replay_capacity: 10_000,
            demonstrations: 2_000,
            ucb_c: 0.5,
            per: PerConfig::default(),
            dual_thrust: DualThrustParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be ≥ 1");
        }
        if self.target_update == 0 {
            return fail("target_update must be ≥ 1");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return fail("learning_rate must be positive and weight_decay nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Lion betas must lie in [0, 1)");
        }
        if !(self.huber_delta > 0.0) {
            return fail("huber_delta must be positive");
        }
        if !(self.reward_clip > 0.0) {
            return fail("reward_clip must be positive");
        }
        if !(0.0..1.0).contains(&self.commission) {
            return fail("commission must lie in [0, 1)");
        }
        if self.replay_capacity < self.batch_size {
            return fail("replay_capacity must hold at least one batch");
        }
        if !(self.ucb_c > 0.0 && self.ucb_c < 1.0) {
            return fail("ucb_c must lie in (0, 1)");
        }
        self.dual_thrust.validate()
    }
}

/// Lion moment estimate plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: NetworkParams,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, config: &TrainConfig) -> Self {
        Self {
            m: params.zeros_like(),
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            beta1: config.beta1,
            beta2: config.beta2,
        }
    }
}

pub fn huber(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One Lion update. `c = β1·m + (1−β1)·g`, `θ ← θ − lr·(sign(c) + λθ)`,
/// then `m ← β2·m + (1−β2)·g`.
pub fn lion_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut OptimizerState) -> Result<()> {
    let (lr, wd, b1, b2) = (state.learning_rate, state.weight_decay, state.beta1, state.beta2);
    let p_arrays = params.arrays_mut();
    let m_arrays = state.m.arrays_mut();
    let g_arrays = grads.arrays();
    check_len("lion gradient arrays", p_arrays.len(), g_arrays.len())?;
    check_len("lion moment arrays", p_arrays.len(), m_arrays.len())?;
    for ((p, m), (name, _, g)) in p_arrays.into_iter().zip(m_arrays).zip(g_arrays) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::ShapeMismatch {
                context: "lion step",
                expected: p.len(),
                got: g.len(),
            });
        }
        for ((theta, mi), &gi) in p.iter_mut().zip(m.iter_mut()).zip(g) {
            if !gi.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            let c = b1 * *mi + (1.0 - b1) * gi;
            *theta -= lr * (sign(c) + wd * *theta);
            *mi = b2 * *mi + (1.0 - b2) * gi;
        }
    }
    params.version += 1;
    Ok(())
}

/// θ⁻ ← θ.
pub fn sync_target(policy: &NetworkParams, target: &mut NetworkParams) {
    target.clone_from(policy);
}

/// `r` at terminal transitions, `r + γ·max_a Q̂(s', a)` otherwise.
pub fn td_target(
    reward: f64,
    next_state: &FeatureWindow,
    done: bool,
    network: &Network,
    target: &NetworkParams,
    gamma: f64,
) -> Result<f64> {
    if done {
        return Ok(reward);
    }
    Ok(reward + gamma * network.forward(target, next_state)?.max())
}

/// A frozen training example: state, taken action, TD target and IS weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm<'a> {
    pub state: &'a FeatureWindow,
    pub action: Action,
    pub target: f64,
    pub weight: f64,
}

pub struct BatchLoss {
    /// `(1/B)·Σ w_i·huber(Q(s_i, a_i) − y_i)`.
    pub loss: f64,
    pub grad: NetworkParams,
    /// `Q(s_i, a_i) − y_i`, in batch order.
    pub residuals: Vec<f64>,
}

/// Weighted Huber loss over a batch and its gradient. Per-example passes may
/// run in parallel; the gradient sum is taken in batch order.
pub fn batch_loss(network: &Network, params: &NetworkParams, terms: &[LossTerm<'_>], delta: f64) -> Result<BatchLoss> {
    if terms.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let scale = 1.0 / terms.len() as f64;
    let per_example: Vec<(f64, f64, NetworkParams)> = terms
        .par_iter()
        .map(|term| {
            let (q, mut cache) = network.forward_with_cache(params, term.state)?;
            let a = term.action.index();
            let residual = q.0[a] - term.target;
            let mut dq = [0.0; ACTIONS];
            dq[a] = scale * term.weight * huber_grad(residual, delta);
            let g = network.backward(params, &mut cache, dq)?;
            Ok((residual, scale * term.weight * huber(residual, delta), g))
        })
        .collect::<Result<_>>()?;

    let mut iter = per_example.into_iter();
    let (r0, l0, mut grad) = iter.next().expect("batch is nonempty");
    let mut loss = l0;
    let mut residuals = vec![r0];
    for (r, l, g) in iter {
        loss += l;
        residuals.push(r);
        grad.add_assign(&g);
    }
    Ok(BatchLoss { loss, grad, residuals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub cum_reward: f64,
    /// Mean batch loss over the episode's gradient steps; 0 when none ran.
    pub mean_loss: f64,
    pub steps: usize,
    pub updates: usize,
    /// Fraction of actions that differed from the greedy choice.
    pub explore_rate: f64,
}

pub const EPISODE_LOG_HEADER: &str = "episode,cum_reward,mean_loss,steps";

pub fn write_episode_log<W: Write>(logs: &[EpisodeLog], mut out: W) -> Result<()> {
    let io = |e| Error::Io {
        path: "episode log".into(),
        source: e,
    };
    writeln!(out, "{EPISODE_LOG_HEADER}").map_err(io)?;
    for l in logs {
        writeln!(out, "{},{},{},{}", l.episode, l.cum_reward, l.mean_loss, l.steps).map_err(io)?;
    }
    Ok(())
}

pub fn save_episode_log(logs: &[EpisodeLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_episode_log(logs, std::io::BufWriter::new(file))
}

pub struct TrainOutcome {
    pub params: NetworkParams,
    pub logs: Vec<EpisodeLog>,
    pub demonstrations: usize,
    /// Priority updates addressed to already evicted transitions.
    pub stale_updates: usize,
}

/// Runs `config.episodes` passes over `series`, starting from `init`.
pub fn train(series: &PriceSeries, network: &Network, init: NetworkParams, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    network.validate_params(&init)?;
    let window = network.config().window;
    let env_config = EnvConfig {
        window,
        commission: config.commission,
        reward_clip: config.reward_clip,
    };
    let mut env = TradingEnv::new(series, window, config.commission, config.reward_clip)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut memory = PrioritizedReplayMemory::new(config.replay_capacity, config.per)?;
    let demonstrations = if config.demonstrations > 0 {
        prepopulate_dual_thrust(&mut memory, series, &config.dual_thrust, &env_config, config.demonstrations)?
    } else {
        0
    };

    let mut params = init;
    let mut target = params.clone();
    let mut optimizer = OptimizerState::new(&params, config);
    let mut ucb = UcbCounts::new(config.ucb_c)?;
    let total_steps = (config.episodes * env.steps_per_episode()).max(1) as f64;
    let beta0 = config.per.beta;
    let mut global_step = 0usize;
    let mut updates = 0u64;
    let mut stale_updates = 0;
    let mut logs = Vec::with_capacity(config.episodes);
    let mut target_max: Vec<Option<f64>> = vec![None; series.len()];

    for episode in 0..config.episodes {
        let mut state = env.reset()?;
        let explored_before = ucb.explored;
        let (mut cum_reward, mut loss_sum, mut steps, mut episode_updates) = (0.0, 0.0, 0, 0);
        loop {
            let q = network.forward(&params, &state)?;
            let action = ucb_select(&q, &mut ucb, state_key(&state), &mut rng);
            let out = env.step(action)?;
            cum_reward += out.reward;
            steps += 1;
            global_step += 1;
            memory.store(
                Transition {
                    state,
                    action,
                    reward: out.reward,
                    next_state: out.next_state.clone(),
                    done: out.done,
                    demonstration: false,
                },
                None,
            );

            if memory.len() >= config.batch_size {
                memory.beta = beta0 + (1.0 - beta0) * (global_step as f64 / total_steps).min(1.0);
                let sample = memory.sample(config.batch_size, &mut rng)?;
                // Every next state is a window of `series` ending at its bar
                // index, so max_a Q̂ is cached per bar until the next sync.
                let missing: Vec<&FeatureWindow> = {
                    let mut seen = Vec::new();
                    for t in &sample.items {
                        let k = t.next_state.t_index;
                        if !t.done && target_max[k].is_none() && !seen.iter().any(|w: &&FeatureWindow| w.t_index == k) {
                            seen.push(&t.next_state);
                        }
                    }
                    seen
                };
                for (w, q) in missing.iter().zip(network.forward_batch(&target, &missing)?) {
                    target_max[w.t_index] = Some(q.max());
                }
                let targets: Vec<f64> = sample
                    .items
                    .iter()
                    .map(|t| match (t.done, target_max[t.next_state.t_index]) {
                        (true, _) => t.reward,
                        (false, Some(m)) => t.reward + config.gamma * m,
                        (false, None) => unreachable!("filled above"),
                    })
                    .collect();
                let terms: Vec<LossTerm<'_>> = sample
                    .items
                    .iter()
                    .zip(&targets)
                    .zip(&sample.weights)
                    .map(|((t, &y), &w)| LossTerm {
                        state: &t.state,
                        action: t.action,
                        target: y,
                        weight: w,
                    })
                    .collect();
                let result = batch_loss(network, &params, &terms, config.huber_delta)?;
                let ids = sample.ids;
                if !result.loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {} at episode {episode}, step {steps}",
                        result.loss
                    )));
                }
                lion_step(&mut params, &result.grad, &mut optimizer)?;
                stale_updates += memory.update_priorities(&ids, &result.residuals)?;
                loss_sum += result.loss;
                episode_updates += 1;
                updates += 1;
                if updates % config.target_update == 0 {
                    sync_target(&params, &mut target);
                    target_max.fill(None);
                }
            }

            if out.done {
                break;
            }
            state = out.next_state;
        }
        let log = EpisodeLog {
            episode,
            cum_reward,
            mean_loss: if episode_updates > 0 {
                loss_sum / episode_updates as f64
            } else {
                0.0
            },
            steps,
            updates: episode_updates,
            explore_rate: (ucb.explored - explored_before) as f64 / steps as f64,
        };
        log::info!(
            "episode {} reward {:.5} loss {:.6} explore {:.3}",
            log.episode,
            log.cum_reward,
            log.mean_loss,
            log.explore_rate
        );
        logs.push(log);
    }
    Ok(TrainOutcome {
        params,
        logs,
        demonstrations,
        stale_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use approx::assert_relative_eq;

    fn small_network() -> Network {
        Network::new(NetworkConfig {
            window: 6,
            lstm_hidden: 8,
            prenet_dims: vec![8, 4],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_relative_eq!(huber(0.5, 1.0), 0.125);
        assert_relative_eq!(huber(2.0, 1.0), 1.5);
        assert_relative_eq!(huber(-2.0, 1.0), 1.5);
        assert_eq!(huber_grad(2.0, 1.0), 1.0);
        assert_eq!(huber_grad(-0.3, 1.0), -0.3);
    }

    #[test]
    fn lion_examples() {
        let net = small_network();
        let mut p = net.zero_params();
        p.postnet.0[0] = 1.0;
        let mut g = p.zeros_like();
        g.postnet.0[0] = 2.5;
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(&p, &cfg);
        lion_step(&mut p, &g, &mut st).unwrap();
        assert_relative_eq!(p.postnet.0[0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(st.m.postnet.0[0], 0.025, epsilon = 1e-15);
        // Untouched entries with zero gradient and zero moment stay put.
        assert_eq!(p.postnet.0[1], 0.0);
        assert_eq!(p.version, 1);
    }

    #[test]
    fn lion_steps_are_signed_lr() {
        let net = small_network();
        let p0 = net.init_params(3);
        let g = net.init_params(4);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = p0.clone();
        let mut st = OptimizerState::new(&p, &cfg);
        lion_step(&mut p, &g, &mut st).unwrap();
        for ((_, _, a), (_, _, b)) in p.arrays().into_iter().zip(p0.arrays()) {
            for (x, y) in a.iter().zip(b) {
                let d = (x - y).abs();
                assert!(d == 0.0 || (d - 0.01).abs() < 1e-12, "step {d}");
            }
        }
    }

    #[test]
    fn td_target_examples() {
        let net = small_network();
        let zero = net.zero_params();
        let w = FeatureWindow::from_rows(vec![[0.01, 0.02, -0.01, 0.0]; 6], 6);
        assert_eq!(td_target(0.02, &w, true, &net, &zero, 0.95).unwrap(), 0.02);
        assert_relative_eq!(td_target(0.0, &w, false, &net, &zero, 0.95).unwrap(), 0.95, epsilon = 1e-12);
        let p = net.init_params(1);
        assert_eq!(td_target(0.03, &w, false, &net, &p, 0.0).unwrap(), 0.03);
    }

    #[test]
    fn sync_copies_deeply() {
        let net = small_network();
        let p = net.init_params(5);
        let mut t = net.zero_params();
        sync_target(&p, &mut t);
        assert_eq!(t, p);
        sync_target(&p, &mut t);
        assert_eq!(t, p);
        let mut p2 = p.clone();
        p2.postnet.0[0] += 1.0;
        assert_eq!(t, p);
        let w = FeatureWindow::from_rows(vec![[0.01, -0.02, 0.03, 0.0]; 6], 6);
        assert_eq!(net.forward(&t, &w).unwrap(), net.forward(&p, &w).unwrap());
    }

    #[test]
    fn zero_episodes_return_init() {
        let net = small_network();
        let s = crate::market_data::sinusoid_series(100.0, 5.0, 20.0, 40).unwrap();
        let init = net.init_params(9);
        let cfg = TrainConfig {
            episodes: 0,
            ..Default::default()
        };
        let out = train(&s, &net, init.clone(), &cfg).unwrap();
        assert_eq!(out.params, init);
        assert!(out.logs.is_empty());
    }

    #[test]
    fn short_training_is_deterministic() {
        let net = small_network();
        let s = crate::market_data::sinusoid_series(100.0, 5.0, 20.0, 40).unwrap();
        let cfg = TrainConfig {
            episodes: 2,
            batch_size: 4,
            target_update: 5,
            demonstrations: 10,
            seed: 11,
            ..Default::default()
        };
        let a = train(&s, &net, net.init_params(1), &cfg).unwrap();
        let b = train(&s, &net, net.init_params(1), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.demonstrations, 10);
        assert_eq!(a.logs.len(), 2);
        assert!(a.logs.iter().all(|l| l.steps == 40 - 1 - 6 && l.mean_loss >= 0.0));
        assert_ne!(a.params, net.init_params(1));

        let mut csv = Vec::new();
        write_episode_log(&a.logs, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("episode,cum_reward,mean_loss,steps\n0,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                gamma: 1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                ucb_c: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
