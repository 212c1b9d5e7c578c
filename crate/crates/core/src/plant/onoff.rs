use serde::{Deserialize, Serialize};

use super::Action;

/// Hysteresis thermostat used to collect the initial training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnOffController {
    pub t_low: f64,
    pub t_high: f64,
    pub deadband: f64,
    /// Index of the highest flow level (m - 1).
    pub max_level: usize,
    last: Option<Action>,
}

impl OnOffController {
    pub fn new(t_low: f64, t_high: f64, deadband: f64, levels: usize) -> Self {
        Self {
            t_low,
            t_high,
            deadband,
            max_level: levels.saturating_sub(1),
            last: None,
        }
    }

    /// Maximum flow above `t_high - deadband`, off below `t_low + deadband`,
    /// otherwise the previous level.
    pub fn act(&mut self, t_in: &[f64]) -> Action {
        let prev = self.last.take().unwrap_or_else(|| Action::off(t_in.len()));
        let levels = t_in
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if t > self.t_high - self.deadband {
                    self.max_level
                } else if t < self.t_low + self.deadband {
                    0
                } else {
                    prev.levels.get(i).copied().unwrap_or(0)
                }
            })
            .collect();
        let action = Action::new(levels);
        self.last = Some(action.clone());
        action
    }
}

impl Default for OnOffController {
    fn default() -> Self {
        Self::new(19.0, 24.0, 0.5, 2)
    }
}
