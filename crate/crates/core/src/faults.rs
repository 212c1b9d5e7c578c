//! Sensor fault injection: IID replacement faults and continuous faults that
//! persist for a fixed number of simulation steps.
//!
//! Only indoor-temperature readings are ever corrupted. A corrupted reading is
//! replaced by a uniform draw from the ambient bounds.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryWindow;
use crate::plant::{T_OUT_MAX, T_OUT_MIN};
use crate::rng::{seeded, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Iid,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub kind: FaultKind,
    /// Per-zone, per-simulation-step probability (fault onset for continuous faults).
    pub probability: f64,
    /// Steps a continuous fault lasts (ϖ). Ignored for IID faults.
    #[serde(default)]
    pub duration: u32,
    #[serde(default = "default_bounds")]
    pub bounds: (f64, f64),
    /// When set, one draw decides the fault status of all zones together.
    #[serde(default)]
    pub correlated_zones: bool,
    pub seed: u64,
}

fn default_bounds() -> (f64, f64) {
    (T_OUT_MIN, T_OUT_MAX)
}

impl FaultConfig {
    pub fn none(seed: u64) -> Self {
        Self::iid(0.0, seed)
    }

    pub fn iid(probability: f64, seed: u64) -> Self {
        Self {
            kind: FaultKind::Iid,
            probability,
            duration: 0,
            bounds: default_bounds(),
            correlated_zones: false,
            seed,
        }
    }

    pub fn continuous(probability: f64, duration: u32, seed: u64) -> Self {
        Self {
            kind: FaultKind::Continuous,
            probability,
            duration,
            bounds: default_bounds(),
            correlated_zones: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "fault probability {} outside [0, 1]",
                self.probability
            )));
        }
        if !(self.bounds.0 < self.bounds.1) {
            return Err(Error::Config("fault bounds must be ordered".into()));
        }
        Ok(())
    }

    /// True when this configuration can never corrupt a reading.
    pub fn is_clean(&self) -> bool {
        self.probability == 0.0 || (self.kind == FaultKind::Continuous && self.duration == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ZoneFault {
    Clean,
    Corrupted { original: f64, injected: f64 },
}

impl ZoneFault {
    pub fn is_corrupted(&self) -> bool {
        matches!(self, ZoneFault::Corrupted { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub zones: Vec<ZoneFault>,
}

/// Ground truth of every injection, one entry per simulation step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultTrace {
    pub entries: Vec<TraceEntry>,
}

impl FaultTrace {
    pub fn push(&mut self, entry: TraceEntry) {
        self.entries.push(entry);
    }

    pub fn corrupted_count(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|e| &e.zones)
            .filter(|z| z.is_corrupted())
            .count()
    }

    /// Writes `step,zone,original,injected` for every corrupted reading.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "zone", "original", "injected"])?;
        for e in &self.entries {
            for (z, f) in e.zones.iter().enumerate() {
                if let ZoneFault::Corrupted { original, injected } = f {
                    w.write_record([
                        e.step.to_string(),
                        z.to_string(),
                        original.to_string(),
                        injected.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Explicit fault-process state: remaining steps of active continuous faults
/// plus the random stream.
#[derive(Clone, Debug)]
pub struct FaultState {
    pub remaining: Vec<u32>,
    pub rng: SimRng,
}

impl FaultState {
    pub fn new(config: &FaultConfig, zones: usize) -> Self {
        Self {
            remaining: vec![0; zones],
            rng: seeded(config.seed),
        }
    }
}

/// Corrupt one simulation step's readings.
pub fn inject(
    readings: &[f64],
    step: u64,
    config: &FaultConfig,
    state: &mut FaultState,
) -> Result<(Vec<f64>, TraceEntry)> {
    if let Some(i) = readings.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numeric(format!("zone {i}: non-finite sensor reading")));
    }
    if state.remaining.len() != readings.len() {
        return Err(Error::Shape("fault state zone count differs from readings".into()));
    }
    let n = readings.len();
    let (lo, hi) = config.bounds;
    let shared = config.correlated_zones.then(|| state.rng.random::<f64>());
    let mut out = readings.to_vec();
    let mut zones = vec![ZoneFault::Clean; n];
    for i in 0..n {
        let u = match shared {
            Some(u) => u,
            None => state.rng.random::<f64>(),
        };
        let hit = u < config.probability;
        let corrupt = match config.kind {
            FaultKind::Iid => hit,
            FaultKind::Continuous => {
                if hit && config.duration > 0 {
                    state.remaining[i] = config.duration;
                }
                if state.remaining[i] > 0 {
                    state.remaining[i] -= 1;
                    true
                } else {
                    false
                }
            }
        };
        if corrupt {
            let injected = state.rng.random_range(lo..=hi);
            zones[i] = ZoneFault::Corrupted {
                original: readings[i],
                injected,
            };
            out[i] = injected;
        }
    }
    Ok((out, TraceEntry { step, zones }))
}

/// Stateful convenience wrapper around [`inject`] that also records the trace.
#[derive(Clone, Debug)]
pub struct FaultInjector {
    pub config: FaultConfig,
    state: FaultState,
    pub trace: FaultTrace,
}

impl FaultInjector {
    pub fn new(config: FaultConfig, zones: usize) -> Result<Self> {
        config.validate()?;
        let state = FaultState::new(&config, zones);
        Ok(Self {
            config,
            state,
            trace: FaultTrace::default(),
        })
    }

    pub fn inject(&mut self, readings: &[f64], step: u64) -> Result<Vec<f64>> {
        let (out, entry) = inject(readings, step, &self.config, &mut self.state)?;
        self.trace.push(entry);
        Ok(out)
    }
}

/// IID corruption of the indoor temperatures of a window. Returns the corrupted
/// window and a per-step, per-zone corruption mask.
pub fn corrupt_history<R: Rng + ?Sized>(
    window: &HistoryWindow,
    probability: f64,
    rng: &mut R,
) -> (HistoryWindow, Vec<Vec<bool>>) {
    let mut out = window.clone();
    let mut marks = Vec::with_capacity(window.len());
    for step in out.steps_mut() {
        let mut row = Vec::with_capacity(step.t_in.len());
        for t in step.t_in.iter_mut() {
            let hit = rng.random::<f64>() < probability;
            if hit {
                *t = rng.random_range(T_OUT_MIN..=T_OUT_MAX);
            }
            row.push(hit);
        }
        marks.push(row);
    }
    (out, marks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::HistoryStep;

    #[test]
    fn zero_probability_is_clean() {
        let cfg = FaultConfig::iid(0.0, 1);
        let mut st = FaultState::new(&cfg, 3);
        for step in 0..100 {
            let (out, e) = inject(&[21.0, 22.0, 23.0], step, &cfg, &mut st).unwrap();
            assert_eq!(out, vec![21.0, 22.0, 23.0]);
            assert!(e.zones.iter().all(|z| !z.is_corrupted()));
        }
    }

    #[test]
    fn certain_faults_stay_in_bounds() {
        let cfg = FaultConfig::iid(1.0, 2);
        let mut st = FaultState::new(&cfg, 4);
        for step in 0..500 {
            let (out, e) = inject(&[21.0; 4], step, &cfg, &mut st).unwrap();
            assert!(out.iter().all(|t| (10.0..=40.0).contains(t)));
            assert!(e.zones.iter().all(ZoneFault::is_corrupted));
        }
    }

    #[test]
    fn continuous_runs_last_exactly_duration() {
        // Sparse onsets so runs don't overlap.
        let cfg = FaultConfig::continuous(0.01, 4, 3);
        let mut st = FaultState::new(&cfg, 1);
        let mut flags = Vec::new();
        for step in 0..20_000 {
            let (_, e) = inject(&[22.0], step, &cfg, &mut st).unwrap();
            flags.push(e.zones[0].is_corrupted());
        }
        let mut runs = Vec::new();
        let mut len = 0;
        for f in flags {
            if f {
                len += 1;
            } else if len > 0 {
                runs.push(len);
                len = 0;
            }
        }
        assert!(!runs.is_empty());
        // Overlapping onsets produce longer runs; the rest are exact.
        assert!(runs.iter().all(|&r| r >= 4));
        let exact = runs.iter().filter(|&&r| r == 4).count();
        assert!(exact as f64 / runs.len() as f64 > 0.9);
    }

    #[test]
    fn zero_duration_never_corrupts() {
        let cfg = FaultConfig::continuous(0.5, 0, 3);
        assert!(cfg.is_clean());
        let mut st = FaultState::new(&cfg, 2);
        for step in 0..200 {
            let (out, _) = inject(&[22.0, 23.0], step, &cfg, &mut st).unwrap();
            assert_eq!(out, vec![22.0, 23.0]);
        }
    }

    #[test]
    fn correlated_zones_fail_together() {
        let mut cfg = FaultConfig::iid(0.5, 4);
        cfg.correlated_zones = true;
        let mut st = FaultState::new(&cfg, 3);
        for step in 0..200 {
            let (_, e) = inject(&[22.0; 3], step, &cfg, &mut st).unwrap();
            let c: Vec<bool> = e.zones.iter().map(ZoneFault::is_corrupted).collect();
            assert!(c.iter().all(|&x| x == c[0]));
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_config() {
        let cfg = FaultConfig::iid(0.1, 1);
        let mut st = FaultState::new(&cfg, 1);
        assert!(inject(&[f64::NAN], 0, &cfg, &mut st).is_err());
        assert!(FaultConfig::iid(1.5, 0).validate().is_err());
    }

    #[test]
    fn history_corruption_touches_only_indoor_temps() {
        let w = HistoryWindow::new(
            (0..20)
                .map(|i| HistoryStep {
                    minute: i * 15,
                    t_in: vec![22.0, 23.0],
                    t_out: 30.0,
                    flow: vec![0.25, 0.0],
                })
                .collect(),
        )
        .unwrap();
        let (same, marks) = corrupt_history(&w, 0.0, &mut seeded(1));
        assert_eq!(same, w);
        assert!(marks.iter().flatten().all(|m| !m));

        let (all, _) = corrupt_history(&w, 1.0, &mut seeded(1));
        for (a, b) in all.steps().iter().zip(w.steps()) {
            assert!(a.t_in.iter().all(|t| (10.0..=40.0).contains(t)));
            assert_eq!((a.minute, a.t_out, &a.flow), (b.minute, b.t_out, &b.flow));
        }

        let (x1, m1) = corrupt_history(&w, 0.3, &mut seeded(8));
        let (x2, m2) = corrupt_history(&w, 0.3, &mut seeded(8));
        assert_eq!((x1, m1), (x2, m2));
    }

    #[test]
    fn trace_csv_lists_corruptions() {
        let mut inj = FaultInjector::new(FaultConfig::iid(1.0, 5), 2).unwrap();
        inj.inject(&[22.0, 23.0], 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        inj.trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,zone,original,injected");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0,22,"));
    }
}
