//! Quote ingestion: CSV parsing, put/call pair selection, parity forwards and
//! option forward prices per date.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::black::{forward_from_parity, DiscountContext};
use crate::calibration::MarketSnapshot;
use crate::error::{Error, Result};
use crate::simulation::PricePath;

pub const QUOTE_HEADER: [&str; 5] = ["date", "strike", "type", "close", "volume"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionType {
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteRecord {
    pub date: NaiveDate,
    pub strike: f64,
    pub kind: OptionType,
    pub close: f64,
    pub volume: u64,
}

/// Ingestion settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub expiry: NaiveDate,
    pub rate: f64,
    /// Calls traded fewer times than this are excluded.
    #[serde(default)]
    pub volume_threshold: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub date: NaiveDate,
    pub strike: f64,
    pub volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub snapshots: Vec<MarketSnapshot>,
    /// Strike of the put/call pair used for the forward, per snapshot.
    pub pair_strikes: Vec<f64>,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

/// Years from `date` to `expiry`, actual/365.
pub fn year_fraction(date: NaiveDate, expiry: NaiveDate) -> f64 {
    (expiry - date).num_days() as f64 / 365.0
}

pub fn read_quotes<R: std::io::Read>(input: R) -> Result<Vec<QuoteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(Error::MalformedHeader { expected: QUOTE_HEADER.join(","), found: String::new() }),
    };
    let found: Vec<&str> = header.iter().collect();
    if found != QUOTE_HEADER {
        return Err(Error::MalformedHeader { expected: QUOTE_HEADER.join(","), found: found.join(",") });
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedRow { line, message };
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let date =
            NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(format!("date `{}`: {e}", &rec[0])))?;
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[i].parse().map_err(|_| bad(format!("{name} `{}` is not a number", &rec[i])))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(bad(format!("{name} {v} must be non-negative")));
            }
            Ok(v)
        };
        let strike = num(1, "strike")?;
        let kind = match rec[2].to_ascii_lowercase().as_str() {
            "call" | "c" => OptionType::Call,
            "put" | "p" => OptionType::Put,
            other => return Err(bad(format!("type `{other}` is neither call nor put"))),
        };
        let close = num(3, "close")?;
        let volume: u64 = rec[4].parse().map_err(|_| bad(format!("volume `{}` is not a count", &rec[4])))?;
        out.push(QuoteRecord { date, strike, kind, close, volume });
    }
    Ok(out)
}

pub fn ingest_quotes(path: &Path, config: &IngestConfig) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_records(&read_quotes(file)?, config)
}

/// Builds one snapshot per date from parsed quotes.
pub fn ingest_records(quotes: &[QuoteRecord], config: &IngestConfig) -> Result<IngestReport> {
    let mut by_date: BTreeMap<NaiveDate, Vec<&QuoteRecord>> = BTreeMap::new();
    for q in quotes {
        by_date.entry(q.date).or_default().push(q);
    }
    let mut report =
        IngestReport { snapshots: Vec::new(), pair_strikes: Vec::new(), excluded: Vec::new(), warnings: Vec::new() };
    for (date, qs) in by_date {
        let tau = year_fraction(date, config.expiry);
        if tau <= 0.0 {
            report.warnings.push(format!("{date}: on or after expiry, skipped"));
            continue;
        }
        let ctx = DiscountContext::new(config.rate, tau)?;
        let mut calls: BTreeMap<u64, &QuoteRecord> = BTreeMap::new();
        let mut puts: BTreeMap<u64, &QuoteRecord> = BTreeMap::new();
        for q in &qs {
            let key = q.strike.to_bits();
            let slot = match q.kind {
                OptionType::Call => &mut calls,
                OptionType::Put => &mut puts,
            };
            if slot.insert(key, q).is_some() {
                report.warnings.push(format!("{date}: duplicate {:?} at {}, last row kept", q.kind, q.strike));
            }
        }
        let pair = calls
            .iter()
            .filter_map(|(k, c)| puts.get(k).map(|p| (c, p, c.volume + p.volume)))
            .filter(|(_, _, v)| *v > 0)
            // ties go to the lower strike
            .fold(None::<(&QuoteRecord, &QuoteRecord, u64)>, |best, (c, p, v)| match best {
                Some(b) if b.2 >= v => Some(b),
                _ => Some((c, p, v)),
            });
        let Some((call, put, _)) = pair else {
            report.warnings.push(Error::MissingPair { date: date.to_string() }.to_string() + ", date skipped");
            continue;
        };
        let forward = forward_from_parity(call.close, put.close, call.strike, &ctx);
        let mut strikes = Vec::new();
        let mut forwards = Vec::new();
        let mut sorted: Vec<&&QuoteRecord> = calls.values().collect();
        sorted.sort_by(|a, b| a.strike.total_cmp(&b.strike));
        for c in sorted {
            if config.volume_threshold.is_some_and(|v| c.volume < v) {
                report.excluded.push(Exclusion { date, strike: c.strike, volume: c.volume });
                continue;
            }
            strikes.push(c.strike);
            forwards.push(c.close / ctx.discount_factor());
        }
        if strikes.is_empty() {
            report.warnings.push(format!("{date}: no calls above the volume threshold, date skipped"));
            continue;
        }
        let mut snap = MarketSnapshot::new(tau, config.rate, forward, strikes, forwards)?;
        snap.date = Some(date.to_string());
        snap.source = Some(format!("put/call parity at {}", call.strike));
        report.snapshots.push(snap);
        report.pair_strikes.push(call.strike);
    }
    Ok(report)
}

pub fn save_snapshots(path: &Path, snaps: &[MarketSnapshot]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(snaps)?)?;
    Ok(())
}

pub fn load_snapshots(path: &Path) -> Result<Vec<MarketSnapshot>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Model time of each snapshot: elapsed calendar days scaled so that the
/// first date is `t = 0` and expiry is `t = maturity`.
pub fn model_times(snaps: &[MarketSnapshot], maturity: f64) -> Vec<f64> {
    let Some(first) = snaps.first() else { return Vec::new() };
    snaps.iter().map(|s| maturity * (first.tau - s.tau) / first.tau).collect()
}

/// Price path `(G^0, G^j...)` at the given strikes on model time.
pub fn price_path(snaps: &[MarketSnapshot], strikes: &[f64], maturity: f64) -> Result<PricePath> {
    let prices = snaps
        .iter()
        .map(|s| {
            let mut v = vec![s.forward];
            for &k in strikes {
                let i = s.strikes.iter().position(|&x| x == k).ok_or_else(|| {
                    Error::InvalidInput(format!("strike {k} missing on {}", s.date.as_deref().unwrap_or("?")))
                })?;
                v.push(s.option_forwards[i]);
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = PricePath { times: model_times(snaps, maturity), prices, driver: None };
    path.validate()?;
    Ok(path)
}
