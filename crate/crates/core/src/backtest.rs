//! Long-only, all-in/all-out trading environment and the evaluation metrics.
//!
//! Trades fill at the decision bar's close. A buy converts all cash into
//! units after commission, a sell converts all units back into cash after
//! commission. Any open position is liquidated at the final close.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Action;
use crate::error::{Error, Result};
use crate::market_data::{feature_window, FeatureWindow, PriceSeries};

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Flat,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Portfolio {
    pub cash: f64,
    pub units: f64,
}

impl Portfolio {
    pub fn new(cash: f64) -> Self {
        Self { cash, units: 0.0 }
    }

    pub fn position(&self) -> Position {
        if self.units > 0.0 {
            Position::Long
        } else {
            Position::Flat
        }
    }

    pub fn equity(&self, price: f64) -> f64 {
        self.cash + self.units * price
    }
}

/// Result of applying an action to a portfolio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    pub portfolio: Portfolio,
    /// What actually happened. Buying while long or selling while flat is a sit.
    pub executed: Action,
    pub units: f64,
    pub commission: f64,
}

pub fn step(portfolio: Portfolio, action: Action, price: f64, commission_rate: f64) -> Fill {
    debug_assert!(price > 0.0 && (0.0..1.0).contains(&commission_rate));
    match (action, portfolio.position()) {
        (Action::Buy, Position::Flat) => {
            let commission = portfolio.cash * commission_rate;
            let units = (portfolio.cash - commission) / price;
            Fill {
                portfolio: Portfolio { cash: 0.0, units },
                executed: Action::Buy,
                units,
                commission,
            }
        }
        (Action::Sell, Position::Long) => {
            let gross = portfolio.units * price;
            let commission = gross * commission_rate;
            Fill {
                portfolio: Portfolio {
                    cash: gross - commission,
                    units: 0.0,
                },
                executed: Action::Sell,
                units: portfolio.units,
                commission,
            }
        }
        _ => Fill {
            portfolio,
            executed: Action::Sit,
            units: 0.0,
            commission: 0.0,
        },
    }
}

/// `ln(equity / prev_equity)` clipped to `±clip`.
pub fn reward(prev_equity: f64, equity: f64, clip: f64) -> f64 {
    (equity / prev_equity).ln().clamp(-clip, clip)
}

/// Largest fractional peak-to-trough decline.
pub fn max_drawdown(curve: &[f64]) -> Result<f64> {
    let first = *curve.first().ok_or(Error::InvalidParameter("empty equity curve".into()))?;
    let mut peak = first;
    let mut worst: f64 = 0.0;
    for &v in curve {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    Ok(worst)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Annualised mean over sample standard deviation, zero risk-free rate.
pub fn sharpe(returns: &[f64], periods_per_year: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::UndefinedMetric {
            metric: "Sharpe ratio",
            reason: "fewer than two returns",
        });
    }
    let m = mean(returns);
    let var = returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (returns.len() - 1) as f64;
    if var == 0.0 {
        return Err(Error::UndefinedMetric {
            metric: "Sharpe ratio",
            reason: "returns have zero variance",
        });
    }
    Ok(m / var.sqrt() * periods_per_year.sqrt())
}

/// Annualised mean over downside deviation `√(mean(min(r, 0)²))`.
pub fn sortino(returns: &[f64], periods_per_year: f64) -> Result<f64> {
    if !returns.iter().any(|&r| r < 0.0) {
        return Err(Error::UndefinedMetric {
            metric: "Sortino ratio",
            reason: "no negative returns",
        });
    }
    let downside = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / returns.len() as f64).sqrt();
    Ok(mean(returns) / downside * periods_per_year.sqrt())
}

/// Simple per-period returns of an equity curve.
pub fn period_returns(curve: &[f64]) -> Vec<f64> {
    curve.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub bar: usize,
    pub date: chrono::NaiveDate,
    pub action: Action,
    pub price: f64,
    pub units: f64,
    pub commission: f64,
}

/// What a policy sees at a decision bar.
pub struct Decision<'a> {
    pub series: &'a PriceSeries,
    pub t: usize,
    pub position: Position,
}

impl Decision<'_> {
    pub fn window(&self, n: usize) -> Result<FeatureWindow> {
        feature_window(self.series, self.t, n)
    }
}

pub trait Policy {
    fn name(&self) -> &str;

    /// Bars of history required before the first decision.
    fn warmup(&self) -> usize;

    fn decide(&mut self, decision: &Decision<'_>) -> Result<Action>;
}

/// Never trades.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysSit;

impl Policy for AlwaysSit {
    fn name(&self) -> &str {
        "Sit"
    }

    fn warmup(&self) -> usize {
        0
    }

    fn decide(&mut self, _: &Decision<'_>) -> Result<Action> {
        Ok(Action::Sit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub commission: f64,
    pub initial_cash: f64,
    /// First decision bar. `None` uses the policy's warmup.
    pub start: Option<usize>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            commission: 0.002,
            initial_cash: 10_000.0,
            start: None,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.commission) {
            return Err(Error::Config("commission must lie in [0, 1)".into()));
        }
        if !(self.initial_cash > 0.0) || !self.initial_cash.is_finite() {
            return Err(Error::Config("initial cash must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub strategy: String,
    pub return_pct: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub max_drawdown_pct: f64,
    pub trades: usize,
    /// Initial cash, then equity after each bar's close from the first
    /// decision bar to the last bar.
    pub equity_curve: Vec<f64>,
    pub first_bar: usize,
}

/// The serialised report: exactly the headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJson {
    pub return_pct: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub max_drawdown_pct: f64,
    pub trades: usize,
}

impl BacktestReport {
    fn from_curve(strategy: &str, curve: Vec<f64>, trades: usize, first_bar: usize) -> Result<Self> {
        let returns = period_returns(&curve);
        let initial = curve[0];
        let last = *curve.last().expect("non-empty curve");
        let undefined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric { metric, reason }) => {
                log::info!("{strategy}: {metric} undefined ({reason})");
                Ok(None)
            }
            Err(e) => Err(e),
        };
        Ok(Self {
            strategy: strategy.to_string(),
            return_pct: (last / initial - 1.0) * 100.0,
            sharpe: undefined(sharpe(&returns, TRADING_DAYS))?,
            sortino: undefined(sortino(&returns, TRADING_DAYS))?,
            max_drawdown_pct: max_drawdown(&curve)? * 100.0,
            trades,
            equity_curve: curve,
            first_bar,
        })
    }

    pub fn to_json(&self) -> ReportJson {
        ReportJson {
            return_pct: self.return_pct,
            sharpe: self.sharpe,
            sortino: self.sortino,
            max_drawdown_pct: self.max_drawdown_pct,
            trades: self.trades,
        }
    }
}

/// Runs `policy` greedily over `series`. Decisions are taken at every bar
/// from the start bar up to the second-to-last; the last bar only marks to
/// market and liquidates.
pub fn run<P: Policy + ?Sized>(
    policy: &mut P,
    series: &PriceSeries,
    config: &BacktestConfig,
) -> Result<(BacktestReport, Vec<TradeRecord>)> {
    config.validate()?;
    let start = config.start.unwrap_or_else(|| policy.warmup());
    if start < policy.warmup() {
        return Err(Error::InsufficientHistory {
            t: start,
            needed: policy.warmup(),
        });
    }
    if series.len() < start + 2 {
        return Err(Error::SeriesTooShort {
            needed: start + 2,
            got: series.len(),
        });
    }
    let bars = series.bars();
    let last = series.len() - 1;
    let mut portfolio = Portfolio::new(config.initial_cash);
    let mut curve = vec![config.initial_cash];
    let mut trades = Vec::new();

    let record = |t: usize, fill: &Fill, trades: &mut Vec<TradeRecord>| {
        if fill.executed != Action::Sit {
            trades.push(TradeRecord {
                bar: t,
                date: bars[t].date,
                action: fill.executed,
                price: bars[t].close,
                units: fill.units,
                commission: fill.commission,
            });
        }
    };

    for t in start..=last {
        let price = bars[t].close;
        let action = if t < last {
            policy.decide(&Decision {
                series,
                t,
                position: portfolio.position(),
            })?
        } else {
            Action::Sell
        };
        let fill = step(portfolio, action, price, config.commission);
        record(t, &fill, &mut trades);
        portfolio = fill.portfolio;
        let equity = portfolio.equity(price);
        if !(equity > 0.0) {
            return Err(Error::NonFinite(format!("equity {equity} at bar {t}")));
        }
        curve.push(equity);
    }

    let report = BacktestReport::from_curve(policy.name(), curve, trades.len(), start)?;
    Ok((report, trades))
}

/// One step of the training environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub executed: Action,
    pub reward: f64,
    pub next_state: FeatureWindow,
    pub done: bool,
}

/// The backtester exposed step by step, emitting clipped log-equity rewards.
///
/// Decisions run from bar `window` to the second-to-last bar; the reward for
/// the decision at bar t is the clipped log change of equity from just
/// before the trade at t to the mark at t + 1.
pub struct TradingEnv<'a> {
    series: &'a PriceSeries,
    window: usize,
    commission: f64,
    reward_clip: f64,
    t: usize,
    portfolio: Portfolio,
}

impl<'a> TradingEnv<'a> {
    pub fn new(series: &'a PriceSeries, window: usize, commission: f64, reward_clip: f64) -> Result<Self> {
        if series.len() < window + 2 {
            return Err(Error::SeriesTooShort {
                needed: window + 2,
                got: series.len(),
            });
        }
        if !(0.0..1.0).contains(&commission) {
            return Err(Error::Config("commission must lie in [0, 1)".into()));
        }
        Ok(Self {
            series,
            window,
            commission,
            reward_clip,
            t: window,
            portfolio: Portfolio::new(1.0),
        })
    }

    /// Number of decisions in one pass.
    pub fn steps_per_episode(&self) -> usize {
        self.series.len() - 1 - self.window
    }

    pub fn reset(&mut self) -> Result<FeatureWindow> {
        self.t = self.window;
        self.portfolio = Portfolio::new(1.0);
        feature_window(self.series, self.t, self.window)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn position(&self) -> Position {
        self.portfolio.position()
    }

    pub fn series(&self) -> &'a PriceSeries {
        self.series
    }

    pub fn step(&mut self, action: Action) -> Result<EnvStep> {
        let bars = self.series.bars();
        if self.t + 1 >= bars.len() {
            return Err(Error::InvalidParameter("episode already finished".into()));
        }
        let price = bars[self.t].close;
        let before = self.portfolio.equity(price);
        let fill = step(self.portfolio, action, price, self.commission);
        self.portfolio = fill.portfolio;
        self.t += 1;
        let after = self.portfolio.equity(bars[self.t].close);
        Ok(EnvStep {
            executed: fill.executed,
            reward: reward(before, after, self.reward_clip),
            next_state: feature_window(self.series, self.t, self.window)?,
            done: self.t + 1 == bars.len(),
        })
    }
}

pub fn write_trades_csv(trades: &[TradeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["bar", "date", "action", "price", "units", "commission"])?;
    for t in trades {
        w.write_record([
            t.bar.to_string(),
            t.date.format("%Y-%m-%d").to_string(),
            t.action.label().to_string(),
            t.price.to_string(),
            t.units.to_string(),
            t.commission.to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_trades_csv(path: impl AsRef<Path>) -> Result<Vec<TradeRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::MalformedRow {
            line,
            reason: format!("bad {what}"),
        };
        if rec.len() != 6 {
            return Err(bad("field count"));
        }
        out.push(TradeRecord {
            bar: rec[0].parse().map_err(|_| bad("bar"))?,
            date: chrono::NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|_| bad("date"))?,
            action: Action::from_label(&rec[2]).ok_or_else(|| bad("action"))?,
            price: rec[3].parse().map_err(|_| bad("price"))?,
            units: rec[4].parse().map_err(|_| bad("units"))?,
            commission: rec[5].parse().map_err(|_| bad("commission"))?,
        });
    }
    Ok(out)
}
