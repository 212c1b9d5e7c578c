//! Linear zone-temperature recurrence identified from a short log:
//!
//! `T̂_{t+1} = α·T_t + β·ṁ_{t+1} + γ·T_out_{t+1} + e_{t+1}`
//!
//! with `e` a moving average of recent residuals over `L_e` control steps.
//! Zones are identified independently; coupling between zones is part of the
//! model error.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::ControlRecord;
use crate::plant::PlantParams;

/// Fewest transitions per zone accepted by [`identify`] (ten per coefficient).
pub const MIN_SAMPLES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Sign and reference of the residual kept in the error window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorConvention {
    /// Push `measured − base prediction`, so the average residual cancels a
    /// persistent bias of the linear part.
    #[default]
    Corrective,
    /// Push `predicted − measured` and add the mean, exactly as the recurrence
    /// is usually written. This reinforces rather than removes a bias.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Error window length `L_e`, control steps.
    pub error_window: usize,
    pub convention: ErrorConvention,
    /// Use the ambient known at time `t` as the forecast for `t+1` instead of
    /// the realized `T_out_{t+1}`.
    pub use_forecast_ambient: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            error_window: 12,
            convention: ErrorConvention::Corrective,
            use_forecast_ambient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractModel {
    pub coefficients: Vec<ZoneCoefficients>,
    pub options: ModelOptions,
    errors: Vec<VecDeque<f64>>,
}

/// Aligned series at control resolution. `flow[t]` is the airflow applied
/// between instants `t` and `t+1`; all series share the same length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ZoneSeries {
    pub t_in: Vec<Vec<f64>>,
    pub flow: Vec<Vec<f64>>,
    pub t_out: Vec<f64>,
}

impl ZoneSeries {
    /// True indoor temperatures, commanded flows and ambient from a log.
    pub fn from_records(records: &[ControlRecord], plant: &PlantParams) -> Self {
        Self {
            t_in: records.iter().map(|r| r.state.t_in.clone()).collect(),
            flow: records
                .iter()
                .map(|r| r.action.levels.iter().map(|&l| plant.flow(l)).collect())
                .collect(),
            t_out: records.iter().map(|r| r.state.t_out).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_in.is_empty()
    }

    fn check(&self) -> Result<usize> {
        let len = self.t_in.len();
        if self.flow.len() != len || self.t_out.len() != len {
            return Err(Error::Shape("identification series differ in length".into()));
        }
        let n = self.t_in.first().map_or(0, Vec::len);
        if self.t_in.iter().chain(&self.flow).any(|row| row.len() != n) {
            return Err(Error::Shape("identification series disagree on zone count".into()));
        }
        Ok(n)
    }

    /// Ambient regressor for the transition `t → t+1`.
    fn ambient(&self, t: usize, forecast: bool) -> f64 {
        if forecast {
            self.t_out[t]
        } else {
            self.t_out[t + 1]
        }
    }
}

/// Least-squares identification of each zone's coefficients.
pub fn identify(series: &ZoneSeries, options: ModelOptions) -> Result<AbstractModel> {
    let n = series.check()?;
    if options.error_window == 0 {
        return Err(Error::Config("error window must be at least 1".into()));
    }
    let transitions = series.len().saturating_sub(1);
    if transitions < MIN_SAMPLES {
        return Err(Error::Identification(format!(
            "{transitions} transitions available, at least {MIN_SAMPLES} needed"
        )));
    }
    let mut coefficients = Vec::with_capacity(n);
    for zone in 0..n {
        let rows: Vec<([f64; 3], f64)> = (0..transitions)
            .map(|t| {
                (
                    [
                        series.t_in[t][zone],
                        series.flow[t][zone],
                        series.ambient(t, options.use_forecast_ambient),
                    ],
                    series.t_in[t + 1][zone],
                )
            })
            .collect();
        let flow0 = rows[0].0[1];
        if rows.iter().all(|(x, _)| x[1] == flow0) {
            return Err(Error::Identification(format!(
                "zone {zone}: airflow never changes in the history, flow coefficient is not identifiable"
            )));
        }
        let [alpha, beta, gamma] = least_squares_3(&rows)
            .ok_or_else(|| Error::Identification(format!("zone {zone}: regressor matrix is rank deficient")))?;
        coefficients.push(ZoneCoefficients { alpha, beta, gamma });
    }
    Ok(AbstractModel::new(coefficients, options))
}

/// Solves the normal equations of a 3-regressor fit without intercept.
/// Returns `None` when the column-scaled Gram matrix is numerically singular.
fn least_squares_3(rows: &[([f64; 3], f64)]) -> Option<[f64; 3]> {
    let mut g = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for (x, y) in rows {
        for i in 0..3 {
            r[i] += x[i] * y;
            for j in 0..3 {
                g[i][j] += x[i] * x[j];
            }
        }
    }
    let scale: Vec<f64> = (0..3).map(|i| g[i][i].sqrt()).collect();
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return None;
    }
    // Work on D⁻¹ G D⁻¹ so the singularity threshold is unitless.
    let mut a = [[0.0; 4]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = g[i][j] / (scale[i] * scale[j]);
        }
        a[i][3] = r[i] / scale[i];
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..4 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = a[i][3] / a[i][i] / scale[i];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

impl AbstractModel {
    pub fn new(coefficients: Vec<ZoneCoefficients>, options: ModelOptions) -> Self {
        let errors = vec![VecDeque::with_capacity(options.error_window); coefficients.len()];
        Self {
            coefficients,
            options,
            errors,
        }
    }

    pub fn zones(&self) -> usize {
        self.coefficients.len()
    }

    pub fn reset_errors(&mut self) {
        self.errors.iter_mut().for_each(VecDeque::clear);
    }

    pub fn error_buffer(&self, zone: usize) -> &VecDeque<f64> {
        &self.errors[zone]
    }

    /// `e_{t+1}`: window sum divided by `L_e` (an unfilled window counts as zeros).
    pub fn error_term(&self, zone: usize) -> f64 {
        self.errors[zone].iter().sum::<f64>() / self.options.error_window as f64
    }

    /// Linear part only.
    pub fn predict_base(&self, zone: usize, t_in: f64, flow: f64, t_out_next: f64) -> f64 {
        let c = &self.coefficients[zone];
        c.alpha * t_in + c.beta * flow + c.gamma * t_out_next
    }

    pub fn predict_next(&self, zone: usize, t_in: f64, flow: f64, t_out_next: f64) -> f64 {
        self.predict_base(zone, t_in, flow, t_out_next) + self.error_term(zone)
    }

    /// All zones at once; `t_out_next` is the ambient regressor chosen by the caller.
    pub fn predict_all(&self, t_in: &[f64], flow: &[f64], t_out_next: f64) -> Vec<f64> {
        (0..self.zones())
            .map(|z| self.predict_next(z, t_in[z], flow[z], t_out_next))
            .collect()
    }

    /// Record the outcome of the most recent [`Self::predict_next`] for `zone`.
    /// Must be called before the error window changes for that zone.
    pub fn update_error(&mut self, zone: usize, predicted: f64, measured: f64) {
        let residual = match self.options.convention {
            ErrorConvention::Literal => predicted - measured,
            ErrorConvention::Corrective => measured - (predicted - self.error_term(zone)),
        };
        let window = self.options.error_window;
        let buf = &mut self.errors[zone];
        if buf.len() == window {
            buf.pop_front();
        }
        buf.push_back(residual);
    }

    /// Push a raw residual, bypassing the convention.
    pub fn push_residual(&mut self, zone: usize, residual: f64) {
        let buf = &mut self.errors[zone];
        if buf.len() == self.options.error_window {
            buf.pop_front();
        }
        buf.push_back(residual);
    }

    /// One-step-ahead RMSE over a series, rolling the error window forward
    /// with the measured temperatures. Starts from an empty window.
    pub fn one_step_rmse(&self, series: &ZoneSeries) -> Result<f64> {
        let n = series.check()?;
        if n != self.zones() {
            return Err(Error::Shape(format!("model has {} zones, series has {n}", self.zones())));
        }
        if series.len() < 2 {
            return Err(Error::Config("need at least two instants to score one-step predictions".into()));
        }
        let mut m = self.clone();
        m.reset_errors();
        let mut sq = 0.0;
        let mut count = 0usize;
        for t in 0..series.len() - 1 {
            for z in 0..n {
                let amb = series.ambient(t, self.options.use_forecast_ambient);
                let pred = m.predict_next(z, series.t_in[t][z], series.flow[t][z], amb);
                let meas = series.t_in[t + 1][z];
                sq += (pred - meas).powi(2);
                count += 1;
                m.update_error(z, pred, meas);
            }
        }
        Ok((sq / count as f64).sqrt())
    }
}
