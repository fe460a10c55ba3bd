//! Rule-based baselines: Dual Thrust breakout and Buy & Hold.

use serde::{Deserialize, Serialize};

use crate::agent::Action;
use crate::backtest::{Decision, Policy, Position};
use crate::error::{Error, Result};
use crate::market_data::{OhlcBar, PriceSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualThrustParams {
    pub k1: f64,
    pub k2: f64,
    /// Bars used for HH, HC, LL and LC.
    pub lookback: usize,
}

impl Default for DualThrustParams {
    fn default() -> Self {
        Self {
            k1: 0.8,
            k2: 0.4,
            lookback: 4,
        }
    }
}

impl DualThrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err(Error::Config("dual thrust k1 and k2 must be positive".into()));
        }
        if self.lookback == 0 {
            return Err(Error::Config("dual thrust lookback must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustLines {
    pub range: f64,
    pub buy_line: f64,
    pub sell_line: f64,
    pub open: f64,
}

/// Range = max(HH − LC, HC − LL) over `history`; the lines sit `k1·Range`
/// above and `k2·Range` below today's open.
pub fn dual_thrust_lines(history: &[OhlcBar], open: f64, params: &DualThrustParams) -> Result<ThrustLines> {
    if history.is_empty() {
        return Err(Error::InvalidParameter("dual thrust needs at least one bar of history".into()));
    }
    let hh = history.iter().map(|b| b.high).fold(f64::NEG_INFINITY, f64::max);
    let hc = history.iter().map(|b| b.close).fold(f64::NEG_INFINITY, f64::max);
    let ll = history.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
    let lc = history.iter().map(|b| b.close).fold(f64::INFINITY, f64::min);
    let range = (hh - lc).max(hc - ll);
    Ok(ThrustLines {
        range,
        buy_line: open + params.k1 * range,
        sell_line: open - params.k2 * range,
        open,
    })
}

/// Long-only breakout: enter above the buy line, exit below the sell line.
pub fn dual_thrust_signal(price: f64, lines: &ThrustLines, position: Position) -> Action {
    match position {
        Position::Flat if price > lines.buy_line => Action::Buy,
        Position::Long if price < lines.sell_line => Action::Sell,
        _ => Action::Sit,
    }
}

/// Dual Thrust decision at bar `t` of `series`, using the `lookback` bars
/// before it and bar `t`'s open and close.
pub fn dual_thrust_at(series: &PriceSeries, t: usize, position: Position, params: &DualThrustParams) -> Result<Action> {
    if t < params.lookback || t >= series.len() {
        return Err(Error::InsufficientHistory {
            t,
            needed: params.lookback,
        });
    }
    let bars = series.bars();
    let lines = dual_thrust_lines(&bars[t - params.lookback..t], bars[t].open, params)?;
    Ok(dual_thrust_signal(bars[t].close, &lines, position))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DualThrustPolicy {
    pub params: DualThrustParams,
}

impl Policy for DualThrustPolicy {
    fn name(&self) -> &str {
        "Dual Thrust"
    }

    fn warmup(&self) -> usize {
        self.params.lookback
    }

    fn decide(&mut self, d: &Decision<'_>) -> Result<Action> {
        dual_thrust_at(d.series, d.t, d.position, &self.params)
    }
}

/// Buys on the first decision bar and holds; the backtester liquidates at the end.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuyAndHold;

impl Policy for BuyAndHold {
    fn name(&self) -> &str {
        "Buy & Hold"
    }

    fn warmup(&self) -> usize {
        0
    }

    fn decide(&mut self, d: &Decision<'_>) -> Result<Action> {
        Ok(match d.position {
            Position::Flat => Action::Buy,
            Position::Long => Action::Sit,
        })
    }
}

/// Planned Buy & Hold trades: a buy at the first bar and the closing sell at
/// the last.
pub fn buy_and_hold(series: &PriceSeries) -> Result<Vec<(usize, Action)>> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: series.len(),
        });
    }
    Ok(vec![(0, Action::Buy), (series.len() - 1, Action::Sell)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn bar(open: f64, high: f64, low: f64, close: f64) -> OhlcBar {
        OhlcBar {
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            open,
            high,
            low,
            close,
            volume: 0.0,
        }
    }

    #[test]
    fn lines_hand_example() {
        // HH = 110, LC = 100, HC = 108, LL = 95.
        let history = [bar(101.0, 110.0, 99.0, 100.0), bar(104.0, 109.0, 95.0, 108.0)];
        let lines = dual_thrust_lines(&history, 105.0, &DualThrustParams::default()).unwrap();
        assert_relative_eq!(lines.range, 13.0);
        assert_relative_eq!(lines.buy_line, 115.4, epsilon = 1e-12);
        assert_relative_eq!(lines.sell_line, 99.8, epsilon = 1e-12);

        assert_eq!(dual_thrust_signal(116.0, &lines, Position::Flat), Action::Buy);
        assert_eq!(dual_thrust_signal(99.0, &lines, Position::Long), Action::Sell);
        assert_eq!(dual_thrust_signal(105.0, &lines, Position::Flat), Action::Sit);
        assert_eq!(dual_thrust_signal(105.0, &lines, Position::Long), Action::Sit);
        // Breakouts only act on the matching position.
        assert_eq!(dual_thrust_signal(116.0, &lines, Position::Long), Action::Sit);
        assert_eq!(dual_thrust_signal(99.0, &lines, Position::Flat), Action::Sit);
    }

    #[test]
    fn degenerate_and_symmetric_lines() {
        let flat = [bar(50.0, 50.0, 50.0, 50.0); 4];
        let lines = dual_thrust_lines(&flat, 50.0, &DualThrustParams::default()).unwrap();
        assert_eq!(lines.range, 0.0);
        assert_eq!(lines.buy_line, 50.0);
        assert_eq!(lines.sell_line, 50.0);

        let p = DualThrustParams {
            k1: 0.5,
            k2: 0.5,
            lookback: 2,
        };
        let h = [bar(10.0, 12.0, 9.0, 11.0), bar(11.0, 13.0, 10.0, 12.0)];
        let l = dual_thrust_lines(&h, 11.5, &p).unwrap();
        assert_relative_eq!(l.buy_line - l.open, l.open - l.sell_line, epsilon = 1e-12);

        assert!(dual_thrust_lines(&[], 1.0, &p).is_err());
    }

    #[test]
    fn buy_and_hold_plan() {
        let s = crate::market_data::sinusoid_series(100.0, 1.0, 10.0, 5).unwrap();
        assert_eq!(buy_and_hold(&s).unwrap(), vec![(0, Action::Buy), (4, Action::Sell)]);
    }

    #[test]
    fn params_validation() {
        assert!(DualThrustParams::default().validate().is_ok());
        let bad = DualThrustParams {
            k1: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
