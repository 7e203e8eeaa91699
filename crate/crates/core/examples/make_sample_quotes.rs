//! Writes the bundled sample quote file.
//!
//! The first date carries a put/call pair at 1150 whose parity forward is
//! 1128.12 and calls on a quadratic smile (plus a thinly traded 1175 call
//! off the smile). Later trading days are model prices along a driver path
//! of the two-strike mixture calibrated to the first date, with a small
//! multiplicative quote noise on the calls. Each day's driver increment is
//! the one, among a batch of seeded Gaussian draws, whose forward lands
//! closest to a rough outline of the index over autumn 2011.
//!
//!     cargo run -p forward-density --example make_sample_quotes -- data/spx_2011_sample.csv

use chrono::{Datelike, NaiveDate, Weekday};
use forward_density::black::black_forward_price;
use forward_density::calibration::{calibrate_mixture, MarketSnapshot, MixtureSpec};
use forward_density::dynamics::{mixture_weights, spot_factors, DriverState};
use forward_density::ingest::year_fraction;
use forward_density::simulation::substream;
use rand::Rng;
use rand_distr::StandardNormal;

const FORWARD0: f64 = 1128.12;
const RATE: f64 = 0.005;
const QUOTE_NOISE: f64 = 0.002;
const SEED: u64 = 2011;
const CANDIDATES: usize = 64;
// (calendar days after the first date, index level)
const OUTLINE: [(f64, f64); 5] = [(0.0, 1128.0), (11.0, 1099.0), (19.0, 1225.0), (35.0, 1285.0), (56.0, 1216.0)];
// quadratic smile K -> a2 K^2 + a1 K + a0 on the first date
const SMILE: [f64; 3] = [4.426_884_97e-7, -1.703_168_31e-3, 1.704_226_43];

fn smile_vol(k: f64) -> f64 {
    SMILE[0] * k * k + SMILE[1] * k + SMILE[2]
}

fn outline(day: f64) -> f64 {
    let i = OUTLINE.windows(2).position(|w| day <= w[1].0).unwrap_or(OUTLINE.len() - 2);
    let ((d0, v0), (d1, v1)) = (OUTLINE[i], OUTLINE[i + 1]);
    v0 + (v1 - v0) * (day - d0) / (d1 - d0)
}

fn model_call(spec: &MixtureSpec, st: &DriverState, k: f64) -> f64 {
    let p = mixture_weights(spec, st).unwrap().p;
    let xt = spot_factors(spec, st);
    (0..p.len()).map(|i| p[i] * black_forward_price(xt[i], spec.sigmas[i], k, spec.maturity - st.t).unwrap()).sum()
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data/spx_2011_sample.csv".into());
    let expiry = NaiveDate::from_ymd_opt(2011, 11, 19).unwrap();
    let start = NaiveDate::from_ymd_opt(2011, 9, 22).unwrap();
    let end = NaiveDate::from_ymd_opt(2011, 11, 17).unwrap();
    let days: Vec<NaiveDate> = start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect();
    let tau0 = year_fraction(start, expiry);

    let g1 = black_forward_price(FORWARD0, smile_vol(1150.0), 1150.0, tau0).unwrap();
    let g2 = black_forward_price(FORWARD0, smile_vol(1200.0), 1200.0, tau0).unwrap();
    let snap = MarketSnapshot::new(tau0, RATE, FORWARD0, vec![1150.0, 1200.0], vec![g1, g2]).unwrap();
    let spec = calibrate_mixture(&snap, &[950.0, 1150.0, 1200.0, 1300.0], &[0.18, 0.08, 0.06, 0.03], 1.0).unwrap().spec;

    let mut rng = substream(SEED, 0);
    let mut coords = [0.0f64; 3];
    let mut prev_t = 0.0;
    let mut rows = vec!["date,strike,type,close,volume".to_string()];
    for (d, date) in days.iter().enumerate() {
        let tau = year_fraction(*date, expiry);
        let df = (-RATE * tau).exp();
        let t = spec.maturity * (tau0 - tau) / tau0;
        let dt = t - prev_t;
        if d > 0 {
            let target = outline((*date - start).num_days() as f64);
            let mut best = (f64::INFINITY, coords);
            for _ in 0..CANDIDATES {
                let mut c = coords;
                for v in c.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += dt.sqrt() * z;
                }
                let st = DriverState::from_coords(&c, t);
                let p = mixture_weights(&spec, &st).unwrap().p;
                let g0: f64 = p.iter().zip(spot_factors(&spec, &st)).map(|(a, b)| a * b).sum();
                if (g0 - target).abs() < best.0 {
                    best = ((g0 - target).abs(), c);
                }
            }
            coords = best.1;
        }
        prev_t = t;
        let st = DriverState::from_coords(&coords, t);

        // (strike, quoted call forward, noise-free call forward)
        let (forward, calls): (f64, Vec<(f64, f64, f64)>) = if d == 0 {
            let mut calls: Vec<(f64, f64, f64)> = [1150.0, 1200.0, 1225.0, 1250.0]
                .iter()
                .map(|&k| {
                    let g = black_forward_price(FORWARD0, smile_vol(k), k, tau).unwrap();
                    (k, g, g)
                })
                .collect();
            let off = black_forward_price(FORWARD0, smile_vol(1175.0) + 0.012, 1175.0, tau).unwrap();
            calls.push((1175.0, off, off));
            (FORWARD0, calls)
        } else {
            let p = mixture_weights(&spec, &st).unwrap().p;
            let xt = spot_factors(&spec, &st);
            let forward = p.iter().zip(&xt).map(|(a, b)| a * b).sum();
            let calls = [1150.0, 1175.0, 1200.0, 1225.0, 1250.0]
                .iter()
                .map(|&k| {
                    let z: f64 = rng.sample(StandardNormal);
                    let g = model_call(&spec, &st, k);
                    (k, g * (1.0 + QUOTE_NOISE * z), g)
                })
                .collect();
            (forward, calls)
        };

        let shift = d as u64;
        let volume = |k: f64| -> u64 {
            match k as u64 {
                1150 => 3200 - 45 * shift,
                1200 => 1400 + 60 * shift,
                1175 => {
                    if d == 0 {
                        82
                    } else {
                        60 + 3 * shift
                    }
                }
                1225 => 350 + 5 * shift,
                _ => 520 + 4 * shift,
            }
        };
        for (k, g, _) in &calls {
            rows.push(format!("{date},{k},call,{:.6},{}", g * df, volume(*k)));
        }
        // puts by parity; the most traded pair moves from 1150 to 1200
        let put_volume = |k: f64| -> u64 {
            match k as u64 {
                1150 => 2900 - 50 * shift,
                _ => 700 + 55 * shift,
            }
        };
        for k in [1150.0, 1200.0] {
            let (_, _, g) = calls.iter().find(|(x, _, _)| *x == k).unwrap();
            let put = (g - (forward - k)).max(0.0) * df;
            rows.push(format!("{date},{k},put,{:.6},{}", put, put_volume(k)));
        }
    }
    std::fs::write(&out, rows.join("\n") + "\n").unwrap();
    eprintln!("wrote {} rows for {} dates to {out}", rows.len() - 1, days.len());
}
