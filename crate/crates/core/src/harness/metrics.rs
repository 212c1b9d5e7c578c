//! Evaluation metrics over closed-loop episodes.

use serde::{Deserialize, Serialize};

use crate::controller::{Episode, EpisodeRow};
use crate::error::{Error, Result};

/// Outcome of one evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// θ per zone, %.
    pub violation: Vec<f64>,
    pub cost: f64,
    pub predictor_rmse: Option<f64>,
    /// Percent of selector decisions that picked the closer proposal.
    pub selector_accuracy: Option<f64>,
}

impl Metrics {
    pub fn from_episode(ep: &Episode, bounds: (f64, f64)) -> Result<Self> {
        Ok(Self {
            violation: violation_rate(&ep.rows, ep.zones, bounds)?,
            cost: ep.total_cost(),
            predictor_rmse: ep.predictor_rmse(),
            selector_accuracy: ep.selector_accuracy(),
        })
    }

    pub fn mean_violation(&self) -> f64 {
        self.violation.iter().sum::<f64>() / self.violation.len().max(1) as f64
    }
}

/// θ_i = 100 · (control steps with true T_in(i) outside `bounds`) / (control
/// steps), counted on the true temperature of each row.
pub fn violation_rate(rows: &[EpisodeRow], zones: usize, bounds: (f64, f64)) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::Config("violation rate of an empty episode".into()));
    }
    let mut hits = vec![0usize; zones];
    let mut steps = vec![0usize; zones];
    for r in rows {
        if r.zone >= zones {
            return Err(Error::Shape(format!("row for zone {} in a {zones}-zone episode", r.zone)));
        }
        steps[r.zone] += 1;
        hits[r.zone] += !(bounds.0..=bounds.1).contains(&r.t_true) as usize;
    }
    Ok(hits
        .iter()
        .zip(&steps)
        .map(|(&h, &s)| if s == 0 { 0.0 } else { 100.0 * h as f64 / s as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(zone: usize, t: f64) -> EpisodeRow {
        EpisodeRow {
            step: 0,
            zone,
            t_true: t,
            t_sensor: t,
            t_chosen: t,
            action: 0,
            cost: 1.0,
            violation: 0,
        }
    }

    #[test]
    fn all_inside_is_zero() {
        let rows: Vec<_> = (0..10).map(|i| row(0, 19.0 + 0.5 * i as f64)).collect();
        assert_eq!(violation_rate(&rows, 1, (19.0, 24.0)).unwrap(), vec![0.0]);
    }

    #[test]
    fn half_at_25_is_fifty_percent() {
        let rows: Vec<_> = (0..10).map(|i| row(0, if i % 2 == 0 { 25.0 } else { 22.0 })).collect();
        assert_eq!(violation_rate(&rows, 1, (19.0, 24.0)).unwrap(), vec![50.0]);
    }

    #[test]
    fn zones_are_counted_separately() {
        let rows = vec![row(0, 18.0), row(1, 22.0), row(0, 22.0), row(1, 22.0)];
        assert_eq!(violation_rate(&rows, 2, (19.0, 24.0)).unwrap(), vec![50.0, 0.0]);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(violation_rate(&[], 1, (19.0, 24.0)).is_err());
    }
}
