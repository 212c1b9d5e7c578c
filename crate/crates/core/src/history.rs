//! Control-period logs and the k-step history windows shared by the
//! predictor and the selector.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{Action, PlantParams, SystemState, MINUTES_PER_DAY};

/// Temperatures enter networks as `(T − TEMP_CENTER_C) / TEMP_SCALE_C`.
pub const TEMP_CENTER_C: f64 = 22.0;
pub const TEMP_SCALE_C: f64 = 10.0;

pub fn normalize_temp(t: f64) -> f64 {
    (t - TEMP_CENTER_C) / TEMP_SCALE_C
}

pub fn denormalize_temp(x: f64) -> f64 {
    x * TEMP_SCALE_C + TEMP_CENTER_C
}

/// One control instant: true plant state, what the sensors reported, and the
/// action applied for the following control period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub state: SystemState,
    pub sensed: Vec<f64>,
    pub action: Action,
    pub cost: f64,
}

/// One entry of a history window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryStep {
    pub minute: u32,
    /// Indoor temperature per zone as observed (possibly faulty), °C.
    pub t_in: Vec<f64>,
    pub t_out: f64,
    /// Commanded supply airflow per zone, kg/s.
    pub flow: Vec<f64>,
}

/// `k` consecutive control steps, oldest first.
///
/// Flattened network input, for each step in order:
/// `clock/1440, T_in(1..n), T_out, flow(1..n)/f_max` with temperatures
/// normalized by [`normalize_temp`], i.e. `2 + 2n`
/// values per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    steps: Vec<HistoryStep>,
}

impl HistoryWindow {
    pub fn new(steps: Vec<HistoryStep>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::Shape("history window is empty".into()));
        };
        let n = first.t_in.len();
        if steps.iter().any(|s| s.t_in.len() != n || s.flow.len() != n) {
            return Err(Error::Shape("history steps disagree on zone count".into()));
        }
        Ok(Self { steps })
    }

    /// Window built from the sensed readings of consecutive log records.
    pub fn from_records(records: &[ControlRecord], plant: &PlantParams) -> Result<Self> {
        for pair in records.windows(2) {
            let dt = pair[1].state.step.checked_sub(pair[0].state.step);
            if dt != Some(plant.steps_per_control as u64) {
                return Err(Error::Shape(format!(
                    "history records are not consecutive control steps ({} -> {})",
                    pair[0].state.step, pair[1].state.step
                )));
            }
        }
        Self::new(
            records
                .iter()
                .map(|r| HistoryStep {
                    minute: r.state.minute,
                    t_in: r.sensed.clone(),
                    t_out: r.state.t_out,
                    flow: r.action.levels.iter().map(|&l| plant.flow(l)).collect(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn zones(&self) -> usize {
        self.steps[0].t_in.len()
    }

    pub fn steps(&self) -> &[HistoryStep] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [HistoryStep] {
        &mut self.steps
    }

    pub fn width(zones: usize) -> usize {
        2 + 2 * zones
    }

    /// Time-major flattening described on the type.
    pub fn flatten(&self, max_flow: f64) -> Vec<f64> {
        let n = self.zones();
        let mut out = Vec::with_capacity(self.len() * Self::width(n));
        for s in &self.steps {
            out.extend(step_features(s, max_flow));
        }
        out
    }

    /// Channel-major flattening (`feature * k + time`) for 1-D convolution.
    pub fn flatten_channels(&self, max_flow: f64) -> Vec<f64> {
        let k = self.len();
        let w = Self::width(self.zones());
        let mut out = vec![0.0; k * w];
        for (t, s) in self.steps.iter().enumerate() {
            for (c, v) in step_features(s, max_flow).enumerate() {
                out[c * k + t] = v;
            }
        }
        out
    }

    /// Index of zone `zone`'s indoor temperature of step `t` in [`Self::flatten`].
    pub fn temp_index(zones: usize, t: usize, zone: usize) -> usize {
        t * Self::width(zones) + 1 + zone
    }
}

fn step_features(s: &HistoryStep, max_flow: f64) -> impl Iterator<Item = f64> + '_ {
    let f = if max_flow > 0.0 { max_flow } else { 1.0 };
    std::iter::once(s.minute as f64 / MINUTES_PER_DAY as f64)
        .chain(s.t_in.iter().map(|&t| normalize_temp(t)))
        .chain(std::iter::once(normalize_temp(s.t_out)))
        .chain(s.flow.iter().map(move |m| m / f))
}

/// Stack flattened windows into a batch.
pub fn stack(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::Shape("ragged batch".into()));
        }
        data.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), width), data).map_err(|e| Error::Shape(e.to_string()))
}
