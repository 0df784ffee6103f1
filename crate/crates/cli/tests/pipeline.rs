use std::path::{Path, PathBuf};
use std::process::Command;

use folio_cli::commands::{cmd_all, cmd_backtest, cmd_cardinality, cmd_frontier, cmd_report, cmd_universe, Market};
use folio_cli::config::{PeriodConfig, RunConfig};
use folio_cli::fixtures;
use folio_cli::strategy::StrategyLabel;
use folio_core::backtest::compute_metrics;
use folio_core::cardinality::{brute_force_cc, CardinalitySpec};
use folio_core::formats::{read_curves, read_frontier, read_meta, read_metrics_table};
use folio_core::optimizer::bounds_for_universe;
use folio_core::universe::TickerRemap;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn demo_path() -> PathBuf {
    root().join("fixtures/demo.toml")
}

/// The demo run, shrunk so a full pass takes well under a second.
fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&demo_path()).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg.universe.sizes = vec![15, 30];
    cfg.optimizer.points = 20;
    cfg.cardinality.k = vec![15];
    cfg.cardinality.points = 8;
    cfg.cardinality.node_log = true;
    cfg.cardinality.universe = Some(
        fixtures::COMPANIES[..22]
            .iter()
            .map(|c| c.0.to_owned())
            .collect(),
    );
    cfg
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn output_tree_is_identical_across_runs_and_thread_counts() {
    let mut trees = Vec::new();
    for threads in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| cmd_all(&cfg)).unwrap();
        trees.push(read_tree(dir.path()));
    }
    assert!(trees[0].len() > 40, "only {} files", trees[0].len());
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    assert_eq!(names(&trees[0]), names(&trees[1]));
    for ((p, a), (_, b)) in trees[0].iter().zip(&trees[1]) {
        assert!(a == b, "{} differs", p.display());
    }
}

#[test]
fn table_rows_recompute_from_curve_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let all = cmd_all(&cfg).unwrap();
    assert_eq!(all.tables.len(), 2 * 3);
    for table in &all.tables {
        let curves = table.path.parent().unwrap().join("curves");
        for (name, row) in read_metrics_table(&table.path).unwrap() {
            let slug = StrategyLabel::from_name(&name).unwrap().slug();
            let (label, curve) = read_curves(&curves.join(format!("{slug}.csv"))).unwrap().remove(0);
            assert_eq!(label, name);
            let again = compute_metrics(&curve.returns()).unwrap();
            for (a, b) in [
                (row.cumulative_return, again.cumulative_return),
                (row.expected_return, again.expected_return),
                (row.volatility, again.volatility),
                (row.max_drawdown, again.max_drawdown),
                (row.sharpe, again.sharpe),
                (row.var99, again.var99),
            ] {
                assert!((a - b).abs() <= 1e-9, "{name} in {}: {a} vs {b}", table.path.display());
            }
        }
    }
}

#[test]
fn tables_follow_row_order_and_omit_missing_cardinality_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let all = cmd_all(&cfg).unwrap();
    let names = |size: usize| -> Vec<String> {
        let t = all.tables.iter().find(|t| t.size == size && t.period == "period1").unwrap();
        t.rows.iter().map(|(n, _)| n.clone()).collect()
    };
    let every: Vec<String> = StrategyLabel::ALL.iter().map(|l| l.name().to_owned()).collect();
    assert_eq!(names(15), every);
    let without_card: Vec<String> = StrategyLabel::ALL
        .iter()
        .filter(|l| !StrategyLabel::CARDINALITY.contains(l))
        .map(|l| l.name().to_owned())
        .collect();
    assert_eq!(names(30), without_card);
    let text = std::fs::read_to_string(dir.path().join("backtest/15/period1/metrics.txt")).unwrap();
    assert!(text.lines().count() == 13 && text.contains("Max Sharpe - card"));
}

#[test]
fn missing_benchmark_series_drop_their_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.universe.sizes = vec![15];
    cfg.benchmarks.indices.retain(|[l, _]| l != "NASDAQ");
    cfg.benchmarks.indices.push(["NASDAQ".into(), "^NOPE".into()]);
    cfg.benchmarks.funds = vec!["NOFUND".into()];
    cmd_universe(&cfg).unwrap();
    let market = Market::load(&cfg).unwrap();
    cmd_frontier(&cfg, &market).unwrap();
    let tables = cmd_backtest(&cfg, &market).unwrap();
    for t in &tables {
        let names: Vec<&str> = t.rows.iter().map(|(n, _)| n.as_str()).collect();
        assert!(!names.contains(&"NASDAQ") && !names.contains(&"Popular Investment Funds"));
        assert!(names.contains(&"S&P 500") && names.contains(&"GPT-weighted"));
        assert!(t.path.exists());
    }
}

#[test]
fn period_outside_the_data_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.universe.sizes = vec![15];
    cmd_universe(&cfg).unwrap();
    let market = Market::load(&cfg).unwrap();
    cmd_frontier(&cfg, &market).unwrap();
    cfg.periods = vec![PeriodConfig {
        label: "later".into(),
        start: "2023-06-01".parse().unwrap(),
        end: "2024-06-30".parse().unwrap(),
    }];
    let err = format!("{:#}", cmd_backtest(&cfg, &market).unwrap_err());
    assert!(err.contains("outside the data range"), "{err}");
}

#[test]
fn unpriced_universe_ticker_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.universe.sizes = vec![15];
    cmd_universe(&cfg).unwrap();
    let list = cfg.universe_dir().join("universe_15.txt");
    let mut text = std::fs::read_to_string(&list).unwrap();
    text.push_str("ZZZZ\n");
    std::fs::write(&list, text).unwrap();
    let market = Market::load(&cfg).unwrap();
    let err = format!("{:#}", cmd_frontier(&cfg, &market).unwrap_err());
    assert!(err.contains("ZZZZ"), "{err}");
}

#[test]
fn frontier_stage_applies_default_bounds_and_point_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.optimizer.points = 2;
    cmd_universe(&cfg).unwrap();
    let market = Market::load(&cfg).unwrap();
    let out = cmd_frontier(&cfg, &market).unwrap();
    assert_eq!((out[0].bounds.lower, out[0].bounds.upper), (0.03, 0.13));
    assert_eq!((out[1].bounds.lower, out[1].bounds.upper), (0.02, 0.07));
    let (tickers, rows) = read_frontier(&cfg.frontier_dir(15).join("frontier.csv")).unwrap();
    assert_eq!(tickers.len(), 15);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].epsilon < rows[1].epsilon);
    for p in &out[0].portfolios {
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{}", p.label);
    }
}

#[test]
fn voted_universes_match_the_fixture_sets_and_need_the_fb_remap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    let out = cmd_universe(&cfg).unwrap();
    for u in &out {
        let mut got = u.tickers.clone();
        got.sort();
        let mut want: Vec<String> = fixtures::reference_universe(u.size).iter().map(|s| s.to_string()).collect();
        want.sort();
        assert_eq!(got, want);
        assert!(u.weights.iter().all(|w| *w > 0.0));
    }
    assert!(out[1].tickers.contains(&"META".to_owned()));
    cfg.universe.remap = TickerRemap::empty();
    let out = cmd_universe(&cfg);
    // The weight transcript was recorded for the remapped universe, so the
    // replay diverges once META is voted out.
    let err = format!("{:#}", out.unwrap_err());
    assert!(err.contains("30"), "{err}");
    let listed = std::fs::read_to_string(cfg.universe_dir().join("universe_30.txt")).unwrap();
    assert!(!listed.lines().any(|l| l == "META"));
}

#[test]
fn config_paths_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.universe.transcripts = dir.path().join("nowhere");
    let err = cfg.check_paths().unwrap_err().to_string();
    assert!(err.contains("transcripts"), "{err}");
}

#[test]
fn report_files_mark_selected_portfolios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("nested/out"));
    let all = cmd_all(&cfg).unwrap();
    assert!(all.report.iter().all(|p| p.exists()));
    let scatter = std::fs::read_to_string(cfg.report_dir().join("frontier_scatter_15.csv")).unwrap();
    for label in ["Min Var", "Max Ret", "Max Sharpe"] {
        assert!(scatter.contains(&format!("star,{label},")), "{label}");
    }
    for label in StrategyLabel::CARDINALITY {
        assert!(scatter.contains(&format!("card_star,{label},")), "{label}");
    }
    assert_eq!(scatter.lines().filter(|l| l.starts_with("frontier,")).count(), 20);
    assert_eq!(scatter.lines().filter(|l| l.starts_with("asset,")).count(), 15);
    let top = read_curves(&cfg.report_dir().join("top_strategies_period1.csv")).unwrap();
    let labels: Vec<&str> = top.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(
        labels,
        ["GPT-weighted (15)", "Max Ret (15)", "Max Sharpe (15)", "GPT-weighted (30)", "Max Ret (30)", "Max Sharpe (30)"]
    );
    let sectors = std::fs::read_to_string(cfg.report_dir().join("sectors.csv")).unwrap();
    assert!(sectors.contains("GPT-weighted (15),Information Technology,"));
    let missing = tempfile::tempdir().unwrap();
    assert!(cmd_report(&small_config(missing.path())).is_err());
}

#[test]
fn desk_scale_cardinality_matches_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    let tickers: Vec<String> = fixtures::COMPANIES[..12].iter().map(|c| c.0.to_owned()).collect();
    cfg.cardinality.universe = Some(tickers.clone());
    cfg.cardinality.k = vec![4];
    cfg.cardinality.points = 6;
    let market = Market::load(&cfg).unwrap();
    let out = cmd_cardinality(&cfg, &market).unwrap();
    assert!(out[0].max_frontier_gap <= 1e-6);
    let moments = market.in_sample_moments(&cfg, &tickers).unwrap();
    let spec = CardinalitySpec::new(4, bounds_for_universe(4).unwrap()).unwrap();
    let exact = brute_force_cc(&moments, &spec, None).unwrap();
    let meta = read_meta(&cfg.cardinality_dir(4).join("min_var_card.csv")).unwrap();
    let variance: f64 = meta["variance"].parse().unwrap();
    assert!((variance - exact.variance).abs() <= 1e-6 * exact.variance, "{variance} vs {}", exact.variance);
    for (label, gap, _) in &out[0].selected {
        assert!(*gap <= 1e-6, "{label}: gap {gap}");
    }
    let log = std::fs::read_to_string(cfg.cardinality_dir(4).join("nodes_min_var.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["outcome"]["kind"].is_string());
    }
}

#[test]
fn shipped_fixtures_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::generate(dir.path()).unwrap();
    let fresh = read_tree(dir.path());
    let shipped: Vec<_> = read_tree(&root().join("fixtures"))
        .into_iter()
        .filter(|(p, _)| p.extension().is_none_or(|e| e != "toml"))
        .collect();
    assert_eq!(fresh.len(), shipped.len());
    for ((p, a), (q, b)) in fresh.iter().zip(&shipped) {
        assert_eq!(p, q);
        assert!(a == b, "{} differs from the generator output; rerun make-fixtures", p.display());
    }
}

#[test]
fn binary_exit_status_reflects_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_folio");
    let ok = Command::new(bin)
        .args(["--config"])
        .arg(demo_path())
        .args(["--sizes", "15", "--out"])
        .arg(dir.path())
        .arg("universe")
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("universe/universe_15.txt").exists());

    let bad = Command::new(bin)
        .args(["--config", "/nonexistent/folio.toml", "universe"])
        .output()
        .unwrap();
    assert!(!bad.status.success());

    let unknown_period = Command::new(bin)
        .args(["--config"])
        .arg(demo_path())
        .args(["--periods", "nope", "--out"])
        .arg(dir.path())
        .arg("backtest")
        .output()
        .unwrap();
    assert!(!unknown_period.status.success());
    assert!(String::from_utf8_lossy(&unknown_period.stderr).contains("unknown period"));
}
