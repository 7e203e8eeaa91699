use std::fs;
use std::path::{Path, PathBuf};

use forward_density::config::{calibrate_config, RunConfig};
use forward_density::ingest::{ingest_quotes, load_snapshots, model_times, price_path, save_snapshots, IngestConfig};
use forward_density::simulation::{simulate_driver, simulate_prices, stylized_correlations};
use forward_density::tracking::{apf_run, linearized_track};
use forward_density::Error;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn two_strike() -> RunConfig {
    RunConfig::load(&config_path("paramsneq2.toml")).unwrap()
}

#[test]
fn bundled_series_first_date() {
    let cfg = two_strike();
    let market = cfg.load_market().unwrap();
    assert_eq!(market.snapshots.len(), 41);
    let first = &market.snapshots[0];
    assert!((first.forward - 1128.12).abs() < 0.01, "{}", first.forward);
    assert!((first.tau - 58.0 / 365.0).abs() < 1e-15);
    assert_eq!(market.pair_strikes[0], 1150.0);
    assert!(!first.strikes.contains(&1175.0));
    assert!(market.warnings.is_empty(), "{:?}", market.warnings);
    let times = model_times(&market.snapshots, 1.0);
    assert_eq!(times[0], 0.0);
    assert!(times.windows(2).all(|w| w[1] > w[0]) && *times.last().unwrap() < 1.0);
}

#[test]
fn snapshots_round_trip_through_json() {
    let market = two_strike().load_market().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snaps.json");
    save_snapshots(&path, &market.snapshots).unwrap();
    assert_eq!(load_snapshots(&path).unwrap(), market.snapshots);
}

#[test]
fn calibration_reproduces_bounds_and_volatility_cap() {
    let cfg = two_strike();
    let out = calibrate_config(&cfg, &cfg.load_market().unwrap()).unwrap();
    let (lo, hi) = out.grid_bounds.unwrap();
    assert!((lo - 1016.81).abs() < 0.02 && (hi - 1257.11).abs() < 0.02);
    assert!((out.max_uniform_sigma.unwrap() - 0.0542).abs() < 5e-4);
    assert!(out.arbitrage.passed);
    let p = &out.calibration.spec.p0;
    assert!(p.iter().all(|v| *v > 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn five_strike_calibration_uses_the_smile() {
    let cfg = RunConfig::load(&config_path("paramsneq5.toml")).unwrap();
    let out = calibrate_config(&cfg, &cfg.load_market().unwrap()).unwrap();
    assert!(out.smile.is_some());
    assert_eq!(out.snapshot.strikes, vec![1100.0, 1150.0, 1200.0, 1250.0, 1300.0]);
    assert_eq!(out.calibration.spec.p0.len(), 7);
    let (lo, hi) = out.grid_bounds.unwrap();
    assert!((lo - 968.86).abs() < 0.02 && (hi - 1321.8).abs() < 0.02);
}

#[test]
fn filter_tracks_the_forward_better_than_linearization() {
    let cfg = two_strike();
    let market = cfg.load_market().unwrap();
    let spec = calibrate_config(&cfg, &market).unwrap().calibration.spec;
    let path = price_path(&market.snapshots, &cfg.model.strikes, cfg.model.maturity).unwrap();
    let filter = apf_run(&spec, &path, &cfg.filter).unwrap().result.relative_rmse(&path.prices);
    let linear = linearized_track(&spec, &path).unwrap().relative_rmse(&path.prices);
    assert!(filter[0] < 0.01 && filter[0] < linear[0], "{filter:?} vs {linear:?}");
    for j in 1..3 {
        assert!(filter[j] < linear[j], "{filter:?} vs {linear:?}");
    }
}

#[test]
fn simulated_returns_and_vols_are_negatively_correlated() {
    let cfg = two_strike();
    let spec = calibrate_config(&cfg, &cfg.load_market().unwrap()).unwrap().calibration.spec;
    let sim = &cfg.simulation;
    let drivers = simulate_driver(300, sim.steps, sim.dt, 3, sim.seed);
    let stats = stylized_correlations(&spec, &simulate_prices(&spec, &drivers).unwrap()).unwrap();
    for s in &stats.strikes {
        assert!(s.mean < -0.3 && s.fraction_negative > 0.9, "{}: {} {}", s.strike, s.mean, s.fraction_negative);
    }
}

#[test]
fn malformed_row_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quotes.csv");
    fs::write(
        &path,
        "date,strike,type,close,volume\n2011-09-22,1150,call,49.5,10\n2011-09-22,1150,put,71.4,10\n2011-09-23,1150,call,abc,5\n",
    )
    .unwrap();
    let cfg = IngestConfig {
        expiry: chrono::NaiveDate::from_ymd_opt(2011, 11, 19).unwrap(),
        rate: 0.005,
        volume_threshold: None,
    };
    match ingest_quotes(&path, &cfg) {
        Err(Error::MalformedRow { line, message }) => {
            assert_eq!(line, 4);
            assert!(message.contains("close"));
        }
        other => panic!("expected a malformed row, got {other:?}"),
    }
}

#[test]
fn dates_without_volume_are_skipped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quotes.csv");
    fs::write(
        &path,
        "date,strike,type,close,volume
2011-09-22,1150,call,49.5,10
2011-09-22,1150,put,71.4,12
2011-09-22,1200,call,26.4,8
2011-09-23,1150,call,50.1,0
2011-09-23,1150,put,70.2,0
",
    )
    .unwrap();
    let cfg = IngestConfig {
        expiry: chrono::NaiveDate::from_ymd_opt(2011, 11, 19).unwrap(),
        rate: 0.005,
        volume_threshold: None,
    };
    let report = ingest_quotes(&path, &cfg).unwrap();
    assert_eq!(report.snapshots.len(), 1);
    assert_eq!(report.warnings.len(), 1);
    assert!(report.warnings[0].contains("2011-09-23"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let text =
        fs::read_to_string(config_path("paramsneq2.toml")).unwrap().replace("seed = 7", "seed = 7\nparticels = 10");
    assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
}
