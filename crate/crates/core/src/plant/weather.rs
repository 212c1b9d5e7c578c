use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Ambient bounds T^out_l, T^out_u (°C).
pub const T_OUT_MIN: f64 = 10.0;
pub const T_OUT_MAX: f64 = 40.0;

/// Per-simulation-step ambient temperature and solar irradiance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    t_out: Vec<f64>,
    sun: Vec<f64>,
    step_minutes: u32,
}

impl WeatherSeries {
    pub fn new(t_out: Vec<f64>, sun: Vec<f64>, step_minutes: u32) -> Result<Self> {
        if t_out.len() != sun.len() {
            return Err(Error::Shape("weather columns differ in length".into()));
        }
        if t_out.is_empty() {
            return Err(Error::Config("empty weather series".into()));
        }
        if let Some(i) = t_out.iter().position(|t| !(T_OUT_MIN..=T_OUT_MAX).contains(t)) {
            return Err(Error::input(i + 1, format!("t_out {} outside [10, 40] °C", t_out[i])));
        }
        if let Some(i) = sun.iter().position(|s| !(*s >= 0.0)) {
            return Err(Error::input(i + 1, "negative solar irradiance"));
        }
        Ok(Self {
            t_out,
            sun,
            step_minutes,
        })
    }

    pub fn len(&self) -> usize {
        self.t_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out.is_empty()
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn t_out(&self) -> &[f64] {
        &self.t_out
    }

    pub fn sun(&self) -> &[f64] {
        &self.sun
    }

    pub fn at(&self, step: usize) -> Result<(f64, f64)> {
        match (self.t_out.get(step), self.sun.get(step)) {
            (Some(&t), Some(&s)) => Ok((t, s)),
            _ => Err(Error::Config(format!(
                "weather series has {} steps, step {step} requested",
                self.len()
            ))),
        }
    }

    /// `(T_out, sun)` at the next `horizon` control instants after `step`,
    /// clamped to the last available sample.
    pub fn forecast(&self, step: usize, steps_per_control: usize, horizon: usize) -> Vec<(f64, f64)> {
        (1..=horizon)
            .map(|j| {
                let i = (step + j * steps_per_control).min(self.len() - 1);
                (self.t_out[i], self.sun[i])
            })
            .collect()
    }

    /// Sub-series starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::Config("weather slice out of range".into()));
        }
        Self::new(
            self.t_out[start..start + len].to_vec(),
            self.sun[start..start + len].to_vec(),
            self.step_minutes,
        )
    }
}

/// Diurnal sinusoid for ambient temperature plus a clipped half-sine sun.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherProfile {
    pub mean_c: f64,
    pub amplitude_c: f64,
    /// Hour of the daily temperature maximum.
    pub peak_hour: f64,
    /// Standard deviation of the per-day mean shift, °C.
    pub daily_jitter_c: f64,
    pub peak_sun_wm2: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Per-day sky clearness is drawn from `[min_clearness, 1]`.
    pub min_clearness: f64,
    pub step_minutes: u32,
}

impl Default for WeatherProfile {
    /// Hot, dry late-summer inland climate.
    fn default() -> Self {
        Self {
            mean_c: 26.0,
            amplitude_c: 8.0,
            peak_hour: 15.0,
            daily_jitter_c: 1.5,
            peak_sun_wm2: 850.0,
            sunrise_hour: 6.0,
            sunset_hour: 19.5,
            min_clearness: 0.7,
            step_minutes: 1,
        }
    }
}

/// Deterministic synthetic weather for `days` days.
pub fn generate_weather(days: usize, profile: &WeatherProfile, seed: u64) -> Result<WeatherSeries> {
    if profile.step_minutes == 0 || 1440 % profile.step_minutes != 0 {
        return Err(Error::Config("weather step must divide one day".into()));
    }
    if profile.sunset_hour <= profile.sunrise_hour {
        return Err(Error::Config("sunset must follow sunrise".into()));
    }
    let mut rng = seeded(seed);
    let jitter = Normal::new(0.0, profile.daily_jitter_c.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    // One extra day of offsets so the last day can interpolate.
    let offsets: Vec<f64> = (0..=days).map(|_| jitter.sample(&mut rng)).collect();
    let clearness: Vec<f64> = (0..days)
        .map(|_| {
            if profile.min_clearness >= 1.0 {
                1.0
            } else {
                rng.random_range(profile.min_clearness.max(0.0)..=1.0)
            }
        })
        .collect();
    let per_day = (1440 / profile.step_minutes) as usize;
    let mut t_out = Vec::with_capacity(days * per_day);
    let mut sun = Vec::with_capacity(days * per_day);
    for d in 0..days {
        for s in 0..per_day {
            let hour = (s as u32 * profile.step_minutes) as f64 / 60.0;
            let frac = hour / 24.0;
            let shift = offsets[d] * (1.0 - frac) + offsets[d + 1] * frac;
            let phase = 2.0 * std::f64::consts::PI * (hour - profile.peak_hour) / 24.0;
            let t = profile.mean_c + shift + profile.amplitude_c * phase.cos();
            t_out.push(t.clamp(T_OUT_MIN, T_OUT_MAX));
            let day_len = profile.sunset_hour - profile.sunrise_hour;
            let x = (hour - profile.sunrise_hour) / day_len;
            let s = if (0.0..=1.0).contains(&x) {
                profile.peak_sun_wm2 * clearness[d] * (std::f64::consts::PI * x).sin()
            } else {
                0.0
            };
            sun.push(s.max(0.0));
        }
    }
    WeatherSeries::new(t_out, sun, profile.step_minutes)
}

/// Reads `step,t_out_c,sun_wm2` rows; steps must count up from 0.
pub fn load_weather_csv(path: &Path) -> Result<WeatherSeries> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["step", "t_out_c", "sun_wm2"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::input(1, format!("expected header `step,t_out_c,sun_wm2`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut t_out = Vec::new();
    let mut sun = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::input(line, e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::input(line, format!("expected 3 fields, found {}", record.len())));
        }
        let parse = |idx: usize, name: &str| -> Result<f64> {
            record[idx]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::input(line, format!("{name} `{}` is not a number", &record[idx])))
        };
        let step = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::input(line, format!("step `{}` is not an integer", &record[0])))?;
        if step != i {
            return Err(Error::input(line, format!("expected step {i}, found {step}")));
        }
        let t = parse(1, "t_out_c")?;
        let s = parse(2, "sun_wm2")?;
        if !(T_OUT_MIN..=T_OUT_MAX).contains(&t) {
            return Err(Error::input(line, format!("t_out_c {t} outside [10, 40] °C")));
        }
        if !(s >= 0.0) {
            return Err(Error::input(line, format!("sun_wm2 {s} is negative")));
        }
        t_out.push(t);
        sun.push(s);
    }
    WeatherSeries::new(t_out, sun, 1)
}

pub fn write_weather_csv(path: &Path, weather: &WeatherSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "t_out_c", "sun_wm2"])?;
    for (i, (t, s)) in weather.t_out.iter().zip(&weather.sun).enumerate() {
        w.write_record([i.to_string(), t.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn zero_amplitude_is_constant() {
        let profile = WeatherProfile {
            amplitude_c: 0.0,
            daily_jitter_c: 0.0,
            ..Default::default()
        };
        let w = generate_weather(3, &profile, 1).unwrap();
        assert!(w.t_out().iter().all(|&t| t == profile.mean_c));
    }

    #[test]
    fn respects_ambient_bounds() {
        let profile = WeatherProfile {
            mean_c: 30.0,
            amplitude_c: 15.0,
            daily_jitter_c: 4.0,
            ..Default::default()
        };
        let w = generate_weather(30, &profile, 7).unwrap();
        assert!(w.t_out().iter().all(|t| (10.0..=40.0).contains(t)));
        assert!(w.sun().iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn midnight_has_no_sun() {
        let w = generate_weather(5, &WeatherProfile::default(), 2).unwrap();
        for d in 0..5 {
            assert_eq!(w.sun()[d * 1440], 0.0);
        }
        assert!(w.sun()[13 * 60] > 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = WeatherProfile::default();
        assert_eq!(generate_weather(2, &p, 5).unwrap(), generate_weather(2, &p, 5).unwrap());
        assert_ne!(generate_weather(2, &p, 5).unwrap(), generate_weather(2, &p, 6).unwrap());
    }

    #[test]
    fn forecast_uses_control_spacing() {
        let t: Vec<f64> = (0..100).map(|i| 10.0 + i as f64 * 0.1).collect();
        let w = WeatherSeries::new(t, vec![0.0; 100], 1).unwrap();
        let f = w.forecast(10, 15, 3);
        assert_eq!(f.len(), 3);
        assert!((f[0].0 - 12.5).abs() < 1e-12);
        assert!((f[2].0 - 15.5).abs() < 1e-12);
        // Clamped at the end of the series.
        assert_eq!(w.forecast(95, 15, 1)[0].0, w.t_out()[99]);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let w = generate_weather(1, &WeatherProfile::default(), 4).unwrap();
        write_weather_csv(&path, &w).unwrap();
        assert_eq!(load_weather_csv(&path).unwrap(), w);

        let bad = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "step,t_out_c,sun_wm2\n0,20,0\n1,abc,0").unwrap();
        match load_weather_csv(&bad).unwrap_err() {
            Error::Input { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }

        let hdr = dir.path().join("hdr.csv");
        std::fs::write(&hdr, "time,temp,sun\n0,20,0\n").unwrap();
        assert!(matches!(load_weather_csv(&hdr), Err(Error::Input { line: 1, .. })));

        let range = dir.path().join("range.csv");
        std::fs::write(&range, "step,t_out_c,sun_wm2\n0,20,0\n1,45,0\n").unwrap();
        assert!(matches!(load_weather_csv(&range), Err(Error::Input { line: 3, .. })));
    }
}
