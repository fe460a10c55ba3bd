//! End-to-end runs of the `qadqn` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDate;
use qadqn_core::agent::Action;
use qadqn_core::backtest::{write_trades_csv, TradeRecord};
use qadqn_core::market_data::{gbm_series, load_csv, write_csv, OhlcBar, PriceSeries};
use qadqn_core::network::{ModelFile, Network, NetworkConfig};
use tempfile::TempDir;

/// Small enough that a training episode takes well under a second.
const SMALL: &str = r#"{
  "network": {"window": 6, "lstm_hidden": 8, "prenet_dims": [8, 4]},
  "train": {"episodes": 1, "batch_size": 8, "demonstrations": 40, "seed": 3}
}"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn series(&self, name: &str, series: &PriceSeries) -> PathBuf {
        let p = self.path(name);
        write_csv(series, &p).unwrap();
        p
    }

    fn gbm(&self, len: usize) -> PathBuf {
        self.series("prices.csv", &gbm_series(100.0, 0.05, 0.3, 1.0 / 252.0, len, 11).unwrap())
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_qadqn"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap()
    }
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_data_exits_with_data_code_and_names_the_path() {
    let sb = Sandbox::new();
    let out = sb.run(&["train", "--data", "no/such/prices.csv", "--episodes", "0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no/such/prices.csv"), "{}", stderr(&out));
}

#[test]
fn bad_config_exits_with_config_code() {
    let sb = Sandbox::new();
    let cfg = sb.write("bad.json", r#"{"train": {"gamma": 1.5}}"#);
    let data = sb.gbm(60);
    let out = sb.run(&["--config", s(&cfg), "train", "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let cfg = sb.write("typo.json", r#"{"trian": {}}"#);
    let out = sb.run(&["--config", s(&cfg), "train", "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn zero_episodes_writes_the_initial_parameters() {
    let sb = Sandbox::new();
    let cfg = sb.write("small.json", SMALL);
    let data = sb.gbm(60);
    ok(&sb.run(&["--config", s(&cfg), "--seed", "17", "train", "--data", s(&data), "--episodes", "0"]));

    let model = ModelFile::load(sb.path("out/model.json")).unwrap();
    let (network, params) = model.restore().unwrap();
    assert_eq!(params, network.init_params(17));
    assert_eq!(model.seed, 17);
    // The echoed configuration carries the overrides.
    assert_eq!(model.config["train"]["seed"], 17);
    assert_eq!(model.config["train"]["episodes"], 0);
    assert_eq!(sb.read("out/episodes.csv").lines().count(), 1);
}

/// A model whose output head ignores the circuit and always prefers Sit.
fn sit_model(sb: &Sandbox) -> PathBuf {
    let config = NetworkConfig {
        window: 6,
        lstm_hidden: 8,
        prenet_dims: vec![8, 4],
        affine_output: true,
        ..NetworkConfig::default()
    };
    let network = Network::new(config).unwrap();
    let mut params = network.init_params(1);
    let o = params.output.as_mut().unwrap();
    o.scale.data_mut().fill(0.0);
    o.bias.data_mut().copy_from_slice(&[1.0, 0.0, 0.0]);
    let path = sb.path("sit.json");
    ModelFile::new(&network, &params, serde_json::json!({}), 1).save(&path).unwrap();
    path
}

#[test]
fn sit_model_without_commission_returns_zero() {
    let sb = Sandbox::new();
    let model = sit_model(&sb);
    let data = sb.gbm(80);
    ok(&sb.run(&["backtest", "--model", s(&model), "--data", s(&data), "--commission", "0"]));
    let report: serde_json::Value = serde_json::from_str(&sb.read("out/report.json")).unwrap();
    assert_eq!(report["return_pct"], 0.0);
    assert_eq!(report["trades"], 0);
    assert_eq!(sb.read("out/trades.csv").lines().count(), 1);
}

#[test]
fn report_holds_exactly_the_five_metrics() {
    let sb = Sandbox::new();
    let cfg = sb.write("small.json", SMALL);
    let data = sb.gbm(60);
    ok(&sb.run(&["--config", s(&cfg), "train", "--data", s(&data), "--episodes", "0"]));
    ok(&sb.run(&["--config", s(&cfg), "backtest", "--model", "out/model.json", "--data", s(&data)]));
    let report: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&sb.read("out/report.json")).unwrap();
    let mut keys: Vec<&str> = report.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["max_drawdown_pct", "return_pct", "sharpe", "sortino", "trades"]);
}

#[test]
fn date_filters_outside_the_data_fail() {
    let sb = Sandbox::new();
    let model = sit_model(&sb);
    let data = sb.gbm(80);
    let series = load_csv(&data).unwrap();
    let last = series.bars().last().unwrap().date;
    let after = (last + chrono::Days::new(30)).to_string();
    let out = sb.run(&["backtest", "--model", s(&model), "--data", s(&data), "--from", &after]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let out = sb.run(&["backtest", "--model", s(&model), "--data", s(&data), "--to", "1900-01-01"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    // A valid sub-range still runs.
    let mid = series.bars()[20].date.to_string();
    ok(&sb.run(&["backtest", "--model", s(&model), "--data", s(&data), "--from", &mid]));
}

#[test]
fn model_and_config_shape_mismatch_is_rejected() {
    let sb = Sandbox::new();
    let model = sit_model(&sb);
    let data = sb.gbm(80);
    let cfg = sb.write("default.json", "{}");
    let out = sb.run(&["--config", s(&cfg), "backtest", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("window 6"), "{}", stderr(&out));
}

fn flat_series(len: usize) -> PriceSeries {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let bars = (0..len)
        .map(|i| OhlcBar {
            date: start + chrono::Days::new(i as u64),
            open: 50.0,
            high: 50.0,
            low: 50.0,
            close: 50.0,
            volume: 1000.0,
        })
        .collect();
    PriceSeries::new("FLAT", bars).unwrap()
}

fn row<'a>(table: &'a str, strategy: &str) -> Vec<&'a str> {
    let line = table.lines().find(|l| l.starts_with(strategy)).unwrap();
    line[strategy.len()..].split_whitespace().collect()
}

#[test]
fn compare_on_a_flat_series() {
    let sb = Sandbox::new();
    let model = sit_model(&sb);
    let data = sb.series("flat.csv", &flat_series(40));
    let table = ok(&sb.run(&["compare", "--model", s(&model), "--data", s(&data)]));
    assert_eq!(row(&table, "Dual Thrust").last(), Some(&"0"));
    assert_eq!(row(&table, "QADQN").last(), Some(&"0"));
    // Buy & Hold pays commission twice on an unchanged price.
    let bh = row(&table, "Buy & Hold");
    let expected = (0.998f64 * 0.998 - 1.0) * 100.0;
    assert_eq!(bh[0], format!("{expected:.2}"));
    assert_eq!(bh.last(), Some(&"2"));
}

fn trade(series: &PriceSeries, bar: usize, action: Action) -> TradeRecord {
    let b = &series.bars()[bar];
    TradeRecord {
        bar,
        date: b.date,
        action,
        price: b.close,
        units: 1.0,
        commission: 0.0,
    }
}

fn markers(svg: &str) -> (usize, usize, usize) {
    let doc = roxmltree::Document::parse(svg).unwrap();
    let count = |tag: &str, fill: Option<&str>| {
        doc.descendants()
            .filter(|n| n.has_tag_name(tag) && fill.is_none_or(|f| n.attribute("fill") == Some(f)))
            .count()
    };
    (count("polyline", None), count("polygon", Some("green")), count("polygon", Some("red")))
}

#[test]
fn plot_draws_one_marker_per_trade() {
    let sb = Sandbox::new();
    let data = sb.gbm(50);
    let series = load_csv(&data).unwrap();

    let empty = sb.path("none.csv");
    write_trades_csv(&[], &empty).unwrap();
    ok(&sb.run(&["plot", "--trades", s(&empty), "--data", s(&data)]));
    assert_eq!(markers(&sb.read("out/chart.svg")), (1, 0, 0));

    let pair = sb.path("pair.csv");
    write_trades_csv(&[trade(&series, 10, Action::Buy), trade(&series, 30, Action::Sell)], &pair).unwrap();
    ok(&sb.run(&["plot", "--trades", s(&pair), "--data", s(&data)]));
    assert_eq!(markers(&sb.read("out/chart.svg")), (1, 1, 1));

    let mut stray = trade(&series, 49, Action::Sell);
    stray.date = series.bars()[49].date + chrono::Days::new(400);
    let dangling = sb.path("dangling.csv");
    write_trades_csv(&[stray], &dangling).unwrap();
    let out = sb.run(&["plot", "--trades", s(&dangling), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no matching bar"), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_by_default_and_fails_at_zero_tolerance() {
    let sb = Sandbox::new();
    let table = ok(&sb.run(&["gradcheck"]));
    for group in ["circuit", "lstm", "prenet", "head0", "head1", "projection", "postnet"] {
        assert!(table.lines().any(|l| l.starts_with(group)), "{group} missing from\n{table}");
    }
    let report: Vec<serde_json::Value> = serde_json::from_str(&sb.read("out/gradcheck.json")).unwrap();
    assert_eq!(report.len(), 7);
    assert!(report.iter().all(|r| r["max_relative_error"].is_f64()));

    let out = sb.run(&["gradcheck", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("failed for group(s): circuit"), "{}", stderr(&out));
}

#[test]
fn synth_writes_loadable_series() {
    let sb = Sandbox::new();
    ok(&sb.run(&["--seed", "4", "synth", "--kind", "gbm", "--len", "120", "--name", "a.csv"]));
    ok(&sb.run(&["--seed", "4", "synth", "--kind", "gbm", "--len", "120", "--name", "b.csv"]));
    assert_eq!(sb.read("out/a.csv"), sb.read("out/b.csv"));
    assert_eq!(load_csv(sb.path("out/a.csv")).unwrap().len(), 120);

    ok(&sb.run(&["synth", "--kind", "sinusoid", "--len", "500", "--name", "sine.csv"]));
    let sine = load_csv(sb.path("out/sine.csv")).unwrap();
    assert_eq!(sine.len(), 500);
    assert_eq!(sine.bars()[0].close, 100.0);
}
