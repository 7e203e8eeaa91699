//! Command-line orchestration: every command loads the run config, ingests
//! the quote file, calibrates on the first date and writes its artifacts plus
//! a `manifest.json` into the output directory.

// `!(x > 0.0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use forward_density::calibration::{build_extended_system, price_range_extremes, MixtureSpec};
use forward_density::config::{calibrate_config, CalibrationOutput, RunConfig};
use forward_density::dynamics::{density_support, forward_density, jacobian_det_scan, DriverState};
use forward_density::ingest::{price_path, save_snapshots, IngestReport};
use forward_density::simulation::{simulate_driver, simulate_prices, stylized_correlations, PricePath};
use forward_density::tracking::{apf_run, filtered_smile, linearized_track, FilterRun, TrackResult};
use forward_density::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Requested times at or past maturity are moved this far before it.
pub const MATURITY_CLAMP: f64 = 1e-6;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fwdens", version, about = "Forward-density calibration, simulation and tracking")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "configs/paramsneq2.toml")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate the mixture to the first quote date.
    Calibrate,
    /// Extreme price vectors spanning the model's price range.
    Range,
    /// Simulate price paths and the return/implied-vol correlations.
    Simulate {
        /// Number of individual path CSVs to keep.
        #[arg(long, default_value_t = 20)]
        save_paths: usize,
    },
    /// Recover the driver from the observed price series.
    Track {
        #[arg(long, value_enum)]
        method: Method,
        /// Overrides the filter seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Filtered implied-vol smiles on the given observation days.
    Smile {
        /// Observation indices (days since the first date), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Strike grid step.
        #[arg(long, default_value_t = 25.0)]
        strike_step: f64,
    },
    /// Filtered forward densities on the given observation days.
    Density {
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 401)]
        points: usize,
    },
    /// Jacobian determinant of the price map on a (w1, w2) grid.
    Detscan {
        /// Model time.
        #[arg(long)]
        time: f64,
        #[arg(long, default_value_t = 0.0)]
        b: f64,
        /// Half-width of the grid in units of sqrt(t).
        #[arg(long, default_value_t = 3.0)]
        extent: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Linear,
    Filter,
}

/// Collected for `manifest.json`.
#[derive(Debug, Default, Serialize)]
struct Manifest {
    schema_version: u32,
    command: String,
    config: String,
    warnings: Vec<String>,
    exclusions: Vec<Value>,
    artifacts: Vec<String>,
    metrics: serde_json::Map<String, Value>,
}

struct Ctx {
    cfg: RunConfig,
    market: IngestReport,
    calib: CalibrationOutput,
    out: PathBuf,
    manifest: Manifest,
}

impl Ctx {
    fn spec(&self) -> &MixtureSpec {
        &self.calib.calibration.spec
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        self.manifest.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let doc = json!({ "schema_version": SCHEMA_VERSION, "data": value });
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn metric<T: Serialize>(&mut self, key: &str, value: T) -> Result<()> {
        self.manifest.metrics.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn observed_path(&self) -> Result<PricePath> {
        price_path(&self.market.snapshots, &self.cfg.model.strikes, self.cfg.model.maturity)
    }

    fn filter(&mut self, path: &PricePath, seed: Option<u64>) -> Result<FilterRun> {
        let mut fc = self.cfg.filter.clone();
        if let Some(s) = seed {
            fc.seed = s;
        }
        self.metric("filter_seed", fc.seed)?;
        let run = apf_run(self.spec(), path, &fc)?;
        self.metric("sigma1", &run.sigma1)?;
        self.metric("sigma2", &run.sigma2)?;
        Ok(run)
    }

    /// Observation indices checked against the series length.
    fn days(&self, times: &[usize], len: usize) -> Result<()> {
        match times.iter().find(|&&d| d >= len) {
            Some(d) => Err(Error::InvalidInput(format!("day {d} outside the {len}-day series"))),
            None => Ok(()),
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let report = json!({
                "schema_version": SCHEMA_VERSION,
                "error": { "kind": e.kind(), "message": e.to_string() },
            });
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            EXIT_DOMAIN
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(&cli.config)?;
    let market = cfg.load_market()?;
    let calib = calibrate_config(&cfg, &market)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: command_name(&cli.command).into(),
        config: cli.config.display().to_string(),
        warnings: market.warnings.clone(),
        exclusions: market
            .excluded
            .iter()
            .map(|x| json!({ "date": x.date.to_string(), "strike": x.strike, "volume": x.volume }))
            .collect(),
        ..Default::default()
    };
    fs::create_dir_all(&cli.out)?;
    let mut ctx = Ctx { cfg, market, calib, out: cli.out.clone(), manifest };
    match &cli.command {
        Command::Calibrate => calibrate(&mut ctx)?,
        Command::Range => range(&mut ctx)?,
        Command::Simulate { save_paths } => simulate(&mut ctx, *save_paths)?,
        Command::Track { method, seed } => track(&mut ctx, *method, *seed)?,
        Command::Smile { times, seed, strike_step } => smile(&mut ctx, times, *seed, *strike_step)?,
        Command::Density { times, seed, points } => density(&mut ctx, times, *seed, *points)?,
        Command::Detscan { time, b, extent, points } => detscan(&mut ctx, *time, *b, *extent, *points)?,
    }
    let manifest = std::mem::take(&mut ctx.manifest);
    let mut w = BufWriter::new(File::create(ctx.out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Calibrate => "calibrate",
        Command::Range => "range",
        Command::Simulate { .. } => "simulate",
        Command::Track { .. } => "track",
        Command::Smile { .. } => "smile",
        Command::Density { .. } => "density",
        Command::Detscan { .. } => "detscan",
    }
}

fn calibrate(ctx: &mut Ctx) -> Result<()> {
    let calib = ctx.calib.clone();
    ctx.write_json("calibration.json", &calib)?;
    let snaps = ctx.market.snapshots.clone();
    let path = ctx.out.join("snapshots.json");
    save_snapshots(&path, &snaps)?;
    ctx.manifest.artifacts.push("snapshots.json".into());
    ctx.metric("p0", &calib.calibration.spec.p0)?;
    ctx.metric("condition_number", calib.calibration.condition)?;
    ctx.metric("grid_bounds", calib.grid_bounds)?;
    ctx.metric("max_uniform_sigma", calib.max_uniform_sigma)?;
    if !calib.arbitrage.passed {
        ctx.manifest.warnings.push("first-date prices violate a static no-arbitrage condition".into());
    }
    Ok(())
}

fn range(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec().clone();
    let a = build_extended_system(&spec.grid, &spec.sigmas, &spec.strikes, spec.maturity);
    let r = price_range_extremes(&a);
    let mut wtr = csv::Writer::from_writer(ctx.create("range.csv")?);
    let mut header = vec!["component".to_string(), "x".to_string()];
    header.extend((0..=spec.n()).map(|j| format!("g{j}")));
    wtr.write_record(&header)?;
    for (k, e) in r.extremes.iter().enumerate() {
        let mut row = vec![k.to_string(), spec.grid[k].to_string()];
        row.extend(e.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    let b = ctx.calib.snapshot.prices();
    let coords = r.coordinates(&b)?;
    ctx.metric("market_coordinates", &coords)?;
    ctx.metric("market_inside_range", r.contains(&b)?)?;
    Ok(())
}

fn simulate(ctx: &mut Ctx, save_paths: usize) -> Result<()> {
    let sim = ctx.cfg.simulation.clone();
    let spec = ctx.spec().clone();
    let drivers = simulate_driver(sim.paths, sim.steps, sim.dt, spec.n() + 1, sim.seed);
    let paths = simulate_prices(&spec, &drivers)?;
    for (i, p) in paths.iter().take(save_paths).enumerate() {
        p.write_csv(ctx.create(&format!("paths/path_{i:05}.csv"))?)?;
    }
    let stats = stylized_correlations(&spec, &paths)?;
    stats.write_histogram_csv(ctx.create("correlation_histogram.csv")?)?;
    ctx.write_json("stylized.json", &stats)?;
    for s in &stats.strikes {
        ctx.metric(&format!("mean_correlation_{}", s.strike), s.mean)?;
        ctx.metric(&format!("fraction_negative_{}", s.strike), s.fraction_negative)?;
        if s.dropped > 0 {
            ctx.manifest
                .warnings
                .push(format!("{} paths without vol changes dropped at strike {}", s.dropped, s.strike));
        }
    }
    Ok(())
}

fn record_track(ctx: &mut Ctx, result: &TrackResult, path: &PricePath) -> Result<()> {
    let name = format!("track_{}", result.method);
    result.write_csv(ctx.create(&format!("{name}.csv"))?)?;
    ctx.write_json(&format!("{name}.json"), result)?;
    ctx.metric("relative_rmse", result.relative_rmse(&path.prices))?;
    ctx.metric("mean_abs_relative_error", result.mean_abs_relative_error(&path.prices))?;
    let flagged = result.flagged.iter().filter(|f| **f).count();
    if flagged > 0 {
        ctx.manifest.warnings.push(format!("{flagged} steps carried forward at a singular Jacobian"));
    }
    Ok(())
}

fn track(ctx: &mut Ctx, method: Method, seed: Option<u64>) -> Result<()> {
    let path = ctx.observed_path()?;
    let result = match method {
        Method::Linear => linearized_track(ctx.spec(), &path)?,
        Method::Filter => ctx.filter(&path, seed)?.result,
    };
    record_track(ctx, &result, &path)
}

/// Strikes from the lower to the upper grid point in steps of `step`.
fn strike_grid(spec: &MixtureSpec, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput("strike step must be positive".into()));
    }
    let (lo, hi) = (spec.grid[0], spec.grid[spec.grid.len() - 1]);
    let first = (lo / step).ceil() * step;
    Ok((0..).map(|i| first + i as f64 * step).take_while(|k| *k <= hi).collect())
}

fn smile(ctx: &mut Ctx, times: &[usize], seed: Option<u64>, step: f64) -> Result<()> {
    let path = ctx.observed_path()?;
    ctx.days(times, path.len())?;
    let run = ctx.filter(&path, seed)?;
    let spec = ctx.spec().clone();
    let strikes = strike_grid(&spec, step)?;
    let tau0 = ctx.market.snapshots[0].tau;
    let mut failures = 0;
    for &d in times {
        let cloud = &run.clouds[d];
        let points = filtered_smile(&spec, cloud, &strikes)?;
        // model-clock vol to an annual vol: T model units span tau0 years
        let annualize = (spec.maturity / tau0).sqrt();
        let mut wtr = csv::Writer::from_writer(ctx.create(&format!("smile_day{d:02}.csv"))?);
        wtr.write_record(["strike", "call_forward", "vol_model", "vol_annual", "error"])?;
        for p in &points {
            let vol = p.vol.map_or(String::new(), |v| v.to_string());
            let ann = p.vol.map_or(String::new(), |v| (v * annualize).to_string());
            wtr.write_record([
                p.strike.to_string(),
                p.call_forward.to_string(),
                vol,
                ann,
                p.error.clone().unwrap_or_default(),
            ])?;
            if p.vol.is_none() {
                failures += 1;
                ctx.manifest.warnings.push(format!("smile inversion failed on day {d} at strike {}", p.strike));
            }
        }
        wtr.flush()?;
    }
    ctx.metric("smile_inversion_failures", failures)?;
    Ok(())
}

fn density(ctx: &mut Ctx, times: &[usize], seed: Option<u64>, points: usize) -> Result<()> {
    if points < 2 {
        return Err(Error::InvalidInput("density needs at least two points".into()));
    }
    let path = ctx.observed_path()?;
    ctx.days(times, path.len())?;
    let run = ctx.filter(&path, seed)?;
    let spec = ctx.spec().clone();
    for &d in times {
        let cloud = &run.clouds[d];
        let states: Vec<DriverState> = cloud.particles.iter().map(|a| DriverState::from_coords(a, cloud.t)).collect();
        let (lo, hi) = states.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), s| {
            let (a, b) = density_support(&spec, s, 6.0);
            (lo.min(a), hi.max(b))
        });
        let mut wtr = csv::Writer::from_writer(ctx.create(&format!("density_day{d:02}.csv"))?);
        wtr.write_record(["x", "density"])?;
        for i in 0..points {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let mut f = 0.0;
            for (j, s) in states.iter().enumerate() {
                f += cloud.weight(j) * forward_density(&spec, s, x)?;
            }
            wtr.write_record([x.to_string(), f.to_string()])?;
        }
        wtr.flush()?;
    }
    Ok(())
}

fn detscan(ctx: &mut Ctx, time: f64, b: f64, extent: f64, points: usize) -> Result<()> {
    let spec = ctx.spec().clone();
    if !(time >= 0.0) {
        return Err(Error::InvalidInput(format!("time {time} must be non-negative")));
    }
    if points < 2 || !(extent > 0.0) {
        return Err(Error::InvalidInput("detscan needs at least two points and a positive extent".into()));
    }
    let t = if time >= spec.maturity {
        let t = spec.maturity - MATURITY_CLAMP;
        ctx.manifest.warnings.push(format!("time {time} is not before maturity {}; using {t}", spec.maturity));
        t
    } else {
        time
    };
    let half = extent * t.sqrt().max(0.1);
    let axis: Vec<f64> = (0..points).map(|i| -half + 2.0 * half * i as f64 / (points - 1) as f64).collect();
    let scan = jacobian_det_scan(&spec, t, &axis, &axis, b)?;
    scan.write_csv(ctx.create("detscan.csv")?)?;
    ctx.metric("time", t)?;
    ctx.metric("sign_change_cells", scan.sign_change_cells.len())?;
    ctx.metric("max_adjacent_jump", scan.max_adjacent_jump())?;
    Ok(())
}
