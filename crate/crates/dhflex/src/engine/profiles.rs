//! Weather and price series: ingestion, synthesis and the representative
//! week selection.
//!
//! Input files are hourly CSVs spanning the heating season (1 October to
//! 30 April). The bundled synthetic profiles stand in for the unpublished
//! measured series: a seasonal-plus-diurnal temperature model with AR(1)
//! weather noise, and a mean-reverting spot price with morning/evening
//! peaks and occasional scarcity spikes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Days in the heating season series (1 Oct – 30 Apr, non-leap).
pub const SEASON_DAYS: usize = 212;
pub const SEASON_HOURS: usize = SEASON_DAYS * 24;

/// Hourly weather series over the heating season.
#[derive(Debug, Clone)]
pub struct WeatherSeries {
    pub t_ambient_c: Vec<f64>,
    pub wind_ms: Vec<f64>,
    pub solar_kw_m2: Vec<f64>,
}

/// Hourly day-ahead price series, €/MWh.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    pub eur_mwh: Vec<f64>,
}

/// Interpolate an hourly series at an arbitrary hour.
pub fn sample_hourly(series: &[f64], t_h: f64) -> f64 {
    let n = series.len();
    debug_assert!(n >= 2);
    let clamped = t_h.clamp(0.0, (n - 1) as f64);
    let i = (clamped.floor() as usize).min(n - 2);
    let frac = clamped - i as f64;
    series[i] * (1.0 - frac) + series[i + 1] * frac
}

/// Relative diurnal shape of the spot price (mean zero over the day).
const PRICE_SHAPE: [f64; 24] = [
    -1.2, -1.4, -1.5, -1.5, -1.2, -0.6, 0.3, 1.0, 1.2, 0.8, 0.3, 0.1, //
    0.0, -0.1, 0.0, 0.2, 0.6, 1.1, 1.5, 1.6, 1.2, 0.6, -0.2, -0.8,
];

/// Generate the bundled synthetic weather stand-in for the heating season.
pub fn generate_weather(seed: u64) -> WeatherSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57ea);
    let mut t_ambient_c = Vec::with_capacity(SEASON_HOURS);
    let mut wind_ms = Vec::with_capacity(SEASON_HOURS);
    let mut solar_kw_m2 = Vec::with_capacity(SEASON_HOURS);
    let (mut ar_t, mut ar_w, mut ar_c) = (0.0f64, 0.0f64, 0.0f64);
    for h in 0..SEASON_HOURS {
        let day = h / 24;
        let hour = (h % 24) as f64;
        // Day of year counted from 1 January; the series starts 1 October.
        let doy = (274 + day) % 365;
        let seasonal =
            10.3 - 7.2 * ((doy as f64 - 15.0) / 365.0 * std::f64::consts::TAU).cos();
        let diurnal = -2.2 * ((hour - 14.5) / 24.0 * std::f64::consts::TAU).cos();
        ar_t = 0.97 * ar_t + rng.gen_range(-0.55..0.55);
        t_ambient_c.push(seasonal + diurnal + ar_t);

        ar_w = 0.95 * ar_w + rng.gen_range(-0.45..0.45);
        wind_ms.push((3.5 + ar_w).max(0.3));

        // Clear-sky bell over the daylight window, scaled by slow cloud noise.
        let daylen = 10.0 + 3.5 * ((doy as f64 - 172.0) / 365.0 * std::f64::consts::TAU).cos();
        let x = (hour - 12.0) / (daylen / 2.0);
        let clear = if x.abs() < 1.0 {
            0.38 * (std::f64::consts::FRAC_PI_2 * x).cos()
        } else {
            0.0
        };
        ar_c = 0.9 * ar_c + rng.gen_range(-0.1..0.1);
        let cloud = (0.55 + 2.0 * ar_c).clamp(0.15, 1.0);
        solar_kw_m2.push(clear * cloud);
    }
    WeatherSeries {
        t_ambient_c,
        wind_ms,
        solar_kw_m2,
    }
}

/// Generate the bundled synthetic day-ahead price stand-in.
pub fn generate_prices(seed: u64) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9125e);
    let mut eur_mwh = Vec::with_capacity(SEASON_HOURS);
    let mut ar = 0.0f64;
    let mut spike_left = 0usize;
    let mut spike_level = 0.0;
    for h in 0..SEASON_HOURS {
        let hour = h % 24;
        ar = 0.93 * ar + rng.gen_range(-4.5..4.5);
        if spike_left == 0 && rng.gen_bool(0.03) {
            spike_left = rng.gen_range(1..4);
            // Signed scarcity/surplus excursions.
            spike_level = if rng.gen_bool(0.7) {
                rng.gen_range(25.0..85.0)
            } else {
                rng.gen_range(-60.0..-30.0)
            };
        }
        let spike = if spike_left > 0 {
            spike_left -= 1;
            spike_level
        } else {
            0.0
        };
        let price = 45.0 + 17.0 * PRICE_SHAPE[hour] + ar + spike;
        eur_mwh.push(price.max(-25.0));
    }
    PriceSeries { eur_mwh }
}

pub fn weather_csv(series: &WeatherSeries) -> String {
    let mut out = String::from("hour,t_ambient_c,wind_ms,solar_kw_m2\n");
    for h in 0..series.t_ambient_c.len() {
        out.push_str(&format!(
            "{},{:.3},{:.3},{:.4}\n",
            h, series.t_ambient_c[h], series.wind_ms[h], series.solar_kw_m2[h]
        ));
    }
    out
}

pub fn price_csv(series: &PriceSeries) -> String {
    let mut out = String::from("hour,price_eur_mwh\n");
    for (h, p) in series.eur_mwh.iter().enumerate() {
        out.push_str(&format!("{h},{p:.3}\n"));
    }
    out
}

fn parse_rows(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut rows = Vec::new();
    let mut last_hour = f64::NEG_INFINITY;
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue; // header
        }
        let row = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(Error::Ingestion {
                path: path_str,
                row,
                message: format!("expected {columns} columns, found {}", fields.len()),
            });
        }
        let mut values = Vec::with_capacity(columns);
        for f in &fields {
            values.push(f.trim().parse::<f64>().map_err(|e| Error::Ingestion {
                path: path_str.clone(),
                row,
                message: format!("bad number `{f}`: {e}"),
            })?);
        }
        if values[0] <= last_hour {
            return Err(Error::Ingestion {
                path: path_str,
                row,
                message: "timestamps must be strictly increasing".into(),
            });
        }
        if last_hour.is_finite() && values[0] - last_hour > 1.0 + 1e-9 {
            return Err(Error::Ingestion {
                path: path_str,
                row,
                message: format!("gap of {:.2} h exceeds 1 h resolution", values[0] - last_hour),
            });
        }
        last_hour = values[0];
        rows.push(values);
    }
    if rows.len() < 48 {
        return Err(Error::Ingestion {
            path: path_str,
            row: rows.len() + 1,
            message: "series too short".into(),
        });
    }
    Ok(rows)
}

pub fn load_weather(path: &Path) -> Result<WeatherSeries> {
    let rows = parse_rows(path, 4)?;
    Ok(WeatherSeries {
        t_ambient_c: rows.iter().map(|r| r[1]).collect(),
        wind_ms: rows.iter().map(|r| r[2]).collect(),
        solar_kw_m2: rows.iter().map(|r| r[3]).collect(),
    })
}

pub fn load_prices(path: &Path) -> Result<PriceSeries> {
    let rows = parse_rows(path, 2)?;
    Ok(PriceSeries {
        eur_mwh: rows.iter().map(|r| r[1]).collect(),
    })
}

impl WeatherSeries {
    pub fn season_mean_c(&self) -> f64 {
        self.t_ambient_c.iter().sum::<f64>() / self.t_ambient_c.len() as f64
    }

    pub fn week_mean_c(&self, week: usize) -> f64 {
        let start = week * 168;
        let end = (start + 168).min(self.t_ambient_c.len());
        self.t_ambient_c[start..end].iter().sum::<f64>() / (end - start) as f64
    }

    pub fn full_weeks(&self) -> usize {
        self.t_ambient_c.len() / 168
    }
}

/// The calendar week whose mean ambient temperature is closest to the season
/// mean; ties break towards the earliest week.
pub fn select_representative_week(weather: &WeatherSeries) -> usize {
    let season = weather.season_mean_c();
    let mut best = (f64::INFINITY, 0);
    for w in 0..weather.full_weeks() {
        let delta = (weather.week_mean_c(w) - season).abs();
        if delta < best.0 {
            best = (delta, w);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn synthetic_weather_has_sane_statistics() {
        let w = generate_weather(20161112);
        assert_eq!(w.t_ambient_c.len(), SEASON_HOURS);
        let season = w.season_mean_c();
        assert!(
            (5.0..=7.5).contains(&season),
            "season mean {season:.2} °C out of range"
        );
        assert!(w.wind_ms.iter().all(|v| *v >= 0.3));
        assert!(w.solar_kw_m2.iter().all(|v| (0.0..=0.45).contains(v)));
        // Night hours carry no solar.
        assert_eq!(w.solar_kw_m2[0], 0.0);
    }

    #[test]
    fn synthetic_prices_have_volatility_and_peaks() {
        let p = generate_prices(20161112);
        let mean = p.eur_mwh.iter().sum::<f64>() / p.eur_mwh.len() as f64;
        assert!((35.0..=60.0).contains(&mean), "mean {mean:.1}");
        let var = p.eur_mwh.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / p.eur_mwh.len() as f64;
        assert!(var.sqrt() > 10.0, "std {:.1}", var.sqrt());
        // Evening hours price above night hours on average.
        let avg_at = |hour: usize| {
            let vals: Vec<f64> = p
                .eur_mwh
                .iter()
                .enumerate()
                .filter(|(h, _)| h % 24 == hour)
                .map(|(_, v)| *v)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(avg_at(19) > avg_at(3) + 15.0);
    }

    #[test]
    fn representative_week_matches_exhaustive_scan() {
        let w = generate_weather(7);
        let pick = select_representative_week(&w);
        let season = w.season_mean_c();
        let best = (0..w.full_weeks())
            .map(|k| ((w.week_mean_c(k) - season).abs(), k))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        assert_eq!(pick, best.1);
        for k in 0..w.full_weeks() {
            assert!((w.week_mean_c(pick) - season).abs() <= (w.week_mean_c(k) - season).abs());
        }
    }

    #[test]
    fn constant_series_tie_breaks_to_first_week() {
        let w = WeatherSeries {
            t_ambient_c: vec![6.0; 168 * 5],
            wind_ms: vec![3.0; 168 * 5],
            solar_kw_m2: vec![0.0; 168 * 5],
        };
        assert_eq!(select_representative_week(&w), 0);
    }

    #[test]
    fn csv_round_trip_and_interpolation_anchor() {
        let dir = std::env::temp_dir().join("dhflex_profile_test");
        std::fs::create_dir_all(&dir).unwrap();
        let w = generate_weather(3);
        let p = generate_prices(3);
        let wpath = dir.join("weather.csv");
        let ppath = dir.join("prices.csv");
        std::fs::write(&wpath, weather_csv(&w)).unwrap();
        std::fs::write(&ppath, price_csv(&p)).unwrap();
        let w2 = load_weather(&wpath).unwrap();
        let p2 = load_prices(&ppath).unwrap();
        assert_eq!(w2.t_ambient_c.len(), w.t_ambient_c.len());
        assert_relative_eq!(w2.t_ambient_c[100], w.t_ambient_c[100], epsilon = 1e-3);
        assert_relative_eq!(p2.eur_mwh[999], p.eur_mwh[999], epsilon = 1e-3);

        // Interpolation hits the source samples at whole hours.
        assert_relative_eq!(
            sample_hourly(&w2.t_ambient_c, 42.0),
            w2.t_ambient_c[42],
            epsilon = 1e-12
        );
        // And is linear in between.
        let mid = sample_hourly(&w2.t_ambient_c, 42.5);
        assert_relative_eq!(
            mid,
            0.5 * (w2.t_ambient_c[42] + w2.t_ambient_c[43]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn constant_price_file_interpolates_constant() {
        let dir = std::env::temp_dir().join("dhflex_profile_test_const");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("flat.csv");
        let mut text = String::from("hour,price_eur_mwh\n");
        for h in 0..200 {
            text.push_str(&format!("{h},42.0\n"));
        }
        std::fs::write(&path, text).unwrap();
        let p = load_prices(&path).unwrap();
        for t in [0.0, 10.3, 57.77, 199.0] {
            assert_relative_eq!(sample_hourly(&p.eur_mwh, t), 42.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ingestion_errors_carry_row_numbers() {
        let dir = std::env::temp_dir().join("dhflex_profile_test_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        // Gap between hour 1 and hour 4.
        let mut text = String::from("hour,price_eur_mwh\n0,40\n1,41\n4,42\n");
        for h in 5..60 {
            text.push_str(&format!("{h},42\n"));
        }
        std::fs::write(&path, text).unwrap();
        match load_prices(&path) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected ingestion error, got {other:?}"),
        }

        let path2 = dir.join("bad2.csv");
        std::fs::write(&path2, "hour,price_eur_mwh\n0,40\n1,not_a_number\n").unwrap();
        match load_prices(&path2) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }
}
