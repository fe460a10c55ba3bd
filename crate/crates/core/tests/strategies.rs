use qadqn_core::agent::Action;
use qadqn_core::backtest::{run, BacktestConfig, Position};
use qadqn_core::market_data::{gbm_series, OhlcBar, PriceSeries};
use qadqn_core::strategies::{dual_thrust_at, DualThrustParams, DualThrustPolicy};

/// Bar-by-bar recomputation with explicit index loops.
fn oracle(bars: &[OhlcBar], t: usize, position: Position, k1: f64, k2: f64, lookback: usize) -> Action {
    let mut hh = bars[t - lookback].high;
    let mut hc = bars[t - lookback].close;
    let mut ll = bars[t - lookback].low;
    let mut lc = bars[t - lookback].close;
    for i in (t - lookback + 1)..t {
        if bars[i].high > hh {
            hh = bars[i].high;
        }
        if bars[i].close > hc {
            hc = bars[i].close;
        }
        if bars[i].low < ll {
            ll = bars[i].low;
        }
        if bars[i].close < lc {
            lc = bars[i].close;
        }
    }
    let a = hh - lc;
    let b = hc - ll;
    let range = if a > b { a } else { b };
    let buy_line = bars[t].open + k1 * range;
    let sell_line = bars[t].open - k2 * range;
    let price = bars[t].close;
    if position == Position::Flat && price > buy_line {
        Action::Buy
    } else if position == Position::Long && price < sell_line {
        Action::Sell
    } else {
        Action::Sit
    }
}

fn series() -> PriceSeries {
    gbm_series(100.0, 0.05, 0.4, 1.0 / 252.0, 1000, 42).unwrap()
}

#[test]
fn signals_match_bar_by_bar_recomputation() {
    let s = series();
    let params = DualThrustParams::default();
    let mut mismatches = 0;
    let mut trades = 0;
    for t in params.lookback..s.len() {
        for position in [Position::Flat, Position::Long] {
            let got = dual_thrust_at(&s, t, position, &params).unwrap();
            let want = oracle(s.bars(), t, position, params.k1, params.k2, params.lookback);
            mismatches += usize::from(got != want);
            trades += usize::from(want != Action::Sit);
        }
    }
    assert_eq!(mismatches, 0);
    assert!(trades > 0, "fixture never crosses a line");
}

#[test]
fn backtest_trades_follow_the_oracle_path() {
    let s = series();
    let params = DualThrustParams::default();
    let (_, trades) = run(&mut DualThrustPolicy { params }, &s, &BacktestConfig::default()).unwrap();
    let mut position = Position::Flat;
    let mut expected = Vec::new();
    for t in params.lookback..s.len() - 1 {
        match oracle(s.bars(), t, position, params.k1, params.k2, params.lookback) {
            Action::Buy => {
                expected.push((t, Action::Buy));
                position = Position::Long;
            }
            Action::Sell => {
                expected.push((t, Action::Sell));
                position = Position::Flat;
            }
            Action::Sit => {}
        }
    }
    if position == Position::Long {
        expected.push((s.len() - 1, Action::Sell));
    }
    let got: Vec<(usize, Action)> = trades.iter().map(|r| (r.bar, r.action)).collect();
    assert_eq!(got, expected);
}

#[test]
fn raising_k1_never_adds_buy_signals() {
    let s = series();
    let count = |k1: f64| {
        let params = DualThrustParams {
            k1,
            ..DualThrustParams::default()
        };
        (params.lookback..s.len())
            .filter(|&t| dual_thrust_at(&s, t, Position::Flat, &params).unwrap() == Action::Buy)
            .count()
    };
    let mut previous = usize::MAX;
    for k in 1..=30 {
        let n = count(0.05 * k as f64);
        assert!(n <= previous, "k1 = {}: {n} buys after {previous}", 0.05 * k as f64);
        previous = n;
    }
}

#[test]
fn flat_series_never_trades() {
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let bars = (0..30)
        .map(|i| OhlcBar {
            date: start + chrono::Days::new(i),
            open: 50.0,
            high: 50.0,
            low: 50.0,
            close: 50.0,
            volume: 0.0,
        })
        .collect();
    let s = PriceSeries::new("FLAT", bars).unwrap();
    let (report, trades) = run(&mut DualThrustPolicy::default(), &s, &BacktestConfig::default()).unwrap();
    assert!(trades.is_empty());
    assert_eq!(report.return_pct, 0.0);
}
