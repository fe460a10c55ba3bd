//! Action selection and experience storage.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backtest::TradingEnv;
use crate::error::{Error, Result};
use crate::market_data::{FeatureWindow, PriceSeries};
use crate::network::{QValues, ACTIONS};
use crate::strategies::{dual_thrust_at, DualThrustParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Sit = 0,
    Buy = 1,
    Sell = 2,
}

impl Action {
    pub const ALL: [Action; ACTIONS] = [Action::Sit, Action::Buy, Action::Sell];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Sit => "sit",
            Action::Buy => "buy",
            Action::Sell => "sell",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: FeatureWindow,
    pub action: Action,
    pub reward: f64,
    pub next_state: FeatureWindow,
    pub done: bool,
    /// Generated by the Dual Thrust rule rather than the agent.
    pub demonstration: bool,
}

/// Discretises a window for visit counting: the sign (0, +, −) of each entry
/// of the most recent row, packed base 3 with feature j as digit j.
pub fn state_key(window: &FeatureWindow) -> u32 {
    window
        .most_recent()
        .iter()
        .rev()
        .fold(0, |key, &v| {
            let digit = if v > 0.0 {
                1
            } else if v < 0.0 {
                2
            } else {
                0
            };
            key * 3 + digit
        })
}

/// Visit counts per discretised state plus the global step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbCounts {
    pub c: f64,
    t: u64,
    visits: BTreeMap<u32, u64>,
    /// Selections that differed from the greedy action.
    pub explored: u64,
}

impl UcbCounts {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Config("UCB constant c must lie in (0, 1)".into()));
        }
        Ok(Self {
            c,
            t: 1,
            visits: BTreeMap::new(),
            explored: 0,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn visits(&self, key: u32) -> u64 {
        self.visits.get(&key).copied().unwrap_or(0)
    }
}

/// Unnormalised per-action weights: the greedy action gets
/// `1 − c + c·ln(t)/N`, every other action `c·ln(t)/N`; negatives clamp to 0.
pub fn ucb_weights(q: &QValues, c: f64, t: f64, visits: f64) -> [f64; ACTIONS] {
    let bonus = c * t.ln() / visits;
    let greedy = q.argmax();
    let mut w = [bonus; ACTIONS];
    w[greedy] = 1.0 - c + bonus;
    w.map(|x| x.max(0.0))
}

/// Samples an action from the renormalised UCB weights, then advances the
/// visit count for `key` and the step counter.
pub fn ucb_select<R: Rng + ?Sized>(q: &QValues, counts: &mut UcbCounts, key: u32, rng: &mut R) -> Action {
    let visits = counts.visits.entry(key).or_insert(0);
    *visits += 1;
    let w = ucb_weights(q, counts.c, counts.t as f64, *visits as f64);
    counts.t += 1;

    let total: f64 = w.iter().sum();
    let probs = if total > 0.0 && total.is_finite() {
        w.map(|x| x / total)
    } else {
        log::warn!("UCB weights degenerate ({w:?}); sampling uniformly");
        [1.0 / ACTIONS as f64; ACTIONS]
    };
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut choice = ACTIONS - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            choice = i;
            break;
        }
    }
    if choice != q.argmax() {
        counts.explored += 1;
    }
    Action::from_index(choice).expect("index below ACTIONS")
}

/// Fixed-capacity FIFO memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayMemory<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be ≥ 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
    }

    pub fn store(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&T>> {
        if self.items.len() < batch {
            return Err(Error::InvalidParameter(format!(
                "cannot sample {batch} from {} stored transitions",
                self.items.len()
            )));
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerConfig {
    /// Priority exponent.
    pub alpha: f64,
    /// Initial importance-sampling exponent; annealed to 1 by the trainer.
    pub beta: f64,
    /// Priority floor.
    pub epsilon: f64,
}

impl Default for PerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.4,
            epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot<T> {
    id: u64,
    priority: f64,
    item: T,
}

/// Proportional prioritized replay over a ring buffer. Entries are addressed
/// by a monotonically increasing id so that updates aimed at evicted entries
/// can be detected.
#[derive(Debug, Clone)]
pub struct PrioritizedReplayMemory<T> {
    capacity: usize,
    slots: Vec<Slot<T>>,
    next_id: u64,
    max_priority: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

pub struct PrioritizedSample<'a, T> {
    pub items: Vec<&'a T>,
    pub ids: Vec<u64>,
    pub weights: Vec<f64>,
}

impl<T> PrioritizedReplayMemory<T> {
    pub fn new(capacity: usize, config: PerConfig) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be ≥ 1".into()));
        }
        if !(config.alpha >= 0.0) || !(config.beta >= 0.0) || !(config.epsilon > 0.0) {
            return Err(Error::Config("PER needs alpha ≥ 0, beta ≥ 0, epsilon > 0".into()));
        }
        Ok(Self {
            capacity,
            slots: Vec::with_capacity(capacity),
            next_id: 0,
            max_priority: 1.0,
            alpha: config.alpha,
            beta: config.beta,
            epsilon: config.epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores `item` with `priority`, or with the largest priority seen so far
    /// (1.0 for a fresh memory) when none is given. Priorities are floored at
    /// epsilon. Returns the entry's id.
    pub fn store(&mut self, item: T, priority: Option<f64>) -> u64 {
        let priority = priority.unwrap_or(self.max_priority).max(self.epsilon);
        self.max_priority = self.max_priority.max(priority);
        let id = self.next_id;
        self.next_id += 1;
        let slot = Slot { id, priority, item };
        if self.slots.len() < self.capacity {
            self.slots.push(slot);
        } else {
            self.slots[(id % self.capacity as u64) as usize] = slot;
        }
        id
    }

    fn slot_of(&self, id: u64) -> Option<usize> {
        let idx = (id % self.capacity as u64) as usize;
        self.slots.get(idx).filter(|s| s.id == id).map(|_| idx)
    }

    pub fn get(&self, id: u64) -> Option<&T> {
        self.slot_of(id).map(|i| &self.slots[i].item)
    }

    pub fn priority(&self, id: u64) -> Option<f64> {
        self.slot_of(id).map(|i| self.slots[i].priority)
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let oldest = self.next_id.saturating_sub(self.slots.len() as u64);
        (oldest..self.next_id).filter_map(|id| self.get(id))
    }

    /// Sampling probability of every stored entry, in slot order, with its id.
    pub fn probabilities(&self) -> Vec<(u64, f64)> {
        let scaled: Vec<f64> = self.slots.iter().map(|s| s.priority.powf(self.alpha)).collect();
        let total: f64 = scaled.iter().sum();
        self.slots.iter().zip(scaled).map(|(s, p)| (s.id, p / total)).collect()
    }

    /// Draws `batch` entries with replacement, with probability ∝ p^alpha,
    /// and importance weights `(size·P(i))^(−beta)` divided by the batch maximum.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<PrioritizedSample<'_, T>> {
        if batch == 0 || self.slots.len() < batch {
            return Err(Error::InvalidParameter(format!(
                "cannot sample {batch} from {} stored transitions",
                self.slots.len()
            )));
        }
        let mut cumulative = Vec::with_capacity(self.slots.len());
        let mut total = 0.0;
        for s in &self.slots {
            total += s.priority.powf(self.alpha);
            cumulative.push(total);
        }
        let size = self.slots.len() as f64;
        let mut items = Vec::with_capacity(batch);
        let mut ids = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let u = rng.random::<f64>() * total;
            let idx = cumulative.partition_point(|&c| c <= u).min(self.slots.len() - 1);
            let slot = &self.slots[idx];
            let p = slot.priority.powf(self.alpha) / total;
            items.push(&slot.item);
            ids.push(slot.id);
            weights.push((size * p).powf(-self.beta));
        }
        let max_w = weights.iter().copied().fold(0.0, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        Ok(PrioritizedSample { items, ids, weights })
    }

    /// Sets `p ← |td| + epsilon` for each id. Ids whose entry has been
    /// evicted are skipped; the number skipped is returned.
    pub fn update_priorities(&mut self, ids: &[u64], td_errors: &[f64]) -> Result<usize> {
        if ids.len() != td_errors.len() {
            return Err(Error::ShapeMismatch {
                context: "priority update",
                expected: ids.len(),
                got: td_errors.len(),
            });
        }
        let mut stale = 0;
        for (&id, &td) in ids.iter().zip(td_errors) {
            if !td.is_finite() {
                return Err(Error::NonFinite(format!("TD error {td}")));
            }
            match self.slot_of(id) {
                Some(i) => {
                    let p = td.abs() + self.epsilon;
                    self.slots[i].priority = p;
                    self.max_priority = self.max_priority.max(p);
                }
                None => stale += 1,
            }
        }
        Ok(stale)
    }
}

/// Environment settings shared by demonstrations and training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub window: usize,
    pub commission: f64,
    pub reward_clip: f64,
}

/// Rolls the Dual Thrust rule through one pass of the environment and stores
/// every transition it produces, flagged as a demonstration, at the memory's
/// maximal priority. At most `limit` transitions are stored. Returns the
/// stored count.
pub fn prepopulate_dual_thrust(
    memory: &mut PrioritizedReplayMemory<Transition>,
    series: &PriceSeries,
    params: &DualThrustParams,
    env: &EnvConfig,
    limit: usize,
) -> Result<usize> {
    params.validate()?;
    if env.window < params.lookback {
        return Err(Error::Config(format!(
            "window {} shorter than the dual thrust lookback {}",
            env.window, params.lookback
        )));
    }
    let mut env = TradingEnv::new(series, env.window, env.commission, env.reward_clip)?;
    let mut state = env.reset()?;
    let mut stored = 0;
    while stored < limit {
        let action = dual_thrust_at(series, env.t(), env.position(), params)?;
        let out = env.step(action)?;
        memory.store(
            Transition {
                state,
                action,
                reward: out.reward,
                next_state: out.next_state.clone(),
                done: out.done,
                demonstration: true,
            },
            None,
        );
        stored += 1;
        if out.done {
            break;
        }
        state = out.next_state;
    }
    Ok(stored)
}
