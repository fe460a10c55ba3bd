//! Static SVG chart of closes with trade markers.

use std::fmt::Write;

use qadqn_core::agent::Action;
use qadqn_core::backtest::TradeRecord;
use qadqn_core::market_data::PriceSeries;
use qadqn_core::{Error, Result};

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 40.0;
const MARKER: f64 = 7.0;

/// Close-price polyline, green up-triangles at buys and red down-triangles at
/// sells. Trades are matched to bars by date.
pub fn render(series: &PriceSeries, trades: &[TradeRecord]) -> Result<String> {
    let bars = series.bars();
    if bars.is_empty() {
        return Err(Error::SeriesTooShort { needed: 1, got: 0 });
    }
    let lo = bars.iter().map(|b| b.close).fold(f64::INFINITY, f64::min);
    let hi = bars.iter().map(|b| b.close).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (bars.len().max(2) - 1) as f64;
    let y = |p: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (p - lo) / span;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{} close, {} to {}</text>"#,
        escape(&series.symbol),
        bars[0].date,
        bars[bars.len() - 1].date
    );
    let points: Vec<String> = bars
        .iter()
        .enumerate()
        .map(|(i, b)| format!("{:.2},{:.2}", x(i), y(b.close)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    );

    for trade in trades {
        let i = bars
            .binary_search_by_key(&trade.date, |b| b.date)
            .map_err(|_| Error::InvalidParameter(format!("trade on {} has no matching bar", trade.date)))?;
        let (cx, cy) = (x(i), y(bars[i].close));
        let (fill, tip, base) = match trade.action {
            Action::Buy => ("green", cy + MARKER * 0.5, cy + MARKER * 2.0),
            Action::Sell => ("red", cy - MARKER * 0.5, cy - MARKER * 2.0),
            Action::Sit => continue,
        };
        let _ = writeln!(
            svg,
            r#"<polygon class="{}" fill="{fill}" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            trade.action.label(),
            cx,
            tip,
            cx - MARKER,
            base,
            cx + MARKER,
            base
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
