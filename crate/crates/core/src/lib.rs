//! Hybrid classical–quantum deep Q-network for daily trading.
//!
//! The pipeline runs an LSTM over a window of OHLC log returns, compresses
//! each hidden state to one angle per qubit, mixes the sequence with quantum
//! self-attention and reads Q-values off a final variational circuit. Training
//! uses prioritized replay seeded with Dual Thrust trades, UCB exploration and
//! the Lion optimizer; evaluation runs a commission-aware long-only backtest.

#[macro_use]
mod dispatch;

pub mod agent;
pub mod autodiff;
pub mod backtest;
pub mod error;
pub mod gradcheck;
pub mod market_data;
pub mod network;
pub mod policy;
pub mod qmsa;
pub mod quantum;
pub mod strategies;
pub mod training;

pub use error::{Error, ErrorKind, Result};
