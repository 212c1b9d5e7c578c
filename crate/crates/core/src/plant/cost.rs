use serde::{Deserialize, Serialize};

use super::{Action, PlantParams, SystemState};
use crate::error::{Error, Result};

/// Time-of-use tariff plus the fan-coil electrical model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule {
    /// $/kWh for each hour of the day.
    pub hourly_price: Vec<f64>,
    /// Fan electrical power at the highest flow level, kW (per zone).
    pub fan_rated_kw: f64,
    /// Cooling coil coefficient of performance.
    pub cop: f64,
}

impl Default for CostSchedule {
    fn default() -> Self {
        let hourly_price = (0..24)
            .map(|h| match h {
                12..=17 => 0.30,
                8..=11 | 18..=21 => 0.16,
                _ => 0.10,
            })
            .collect();
        Self {
            hourly_price,
            fan_rated_kw: 0.75,
            cop: 3.0,
        }
    }
}

impl CostSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.hourly_price.len() != 24 {
            return Err(Error::Config(format!(
                "price table needs 24 hourly entries, got {}",
                self.hourly_price.len()
            )));
        }
        if self.hourly_price.iter().any(|&p| p <= 0.0) {
            return Err(Error::Config("electricity prices must be positive".into()));
        }
        if self.cop <= 0.0 || self.fan_rated_kw < 0.0 {
            return Err(Error::Config("COP must be positive and fan power non-negative".into()));
        }
        Ok(())
    }

    pub fn price(&self, hour: usize) -> f64 {
        self.hourly_price[hour % 24]
    }

    /// Electrical power drawn by the fan-coil units, kW.
    pub fn power_kw(&self, state: &SystemState, action: &Action, plant: &PlantParams) -> f64 {
        self.zone_power_kw(state, action, plant).iter().sum()
    }

    /// Fan plus coil power of each zone's unit, kW.
    pub fn zone_power_kw(&self, state: &SystemState, action: &Action, plant: &PlantParams) -> Vec<f64> {
        let f_max = plant.max_flow();
        action
            .levels
            .iter()
            .zip(&state.t_in)
            .map(|(&level, &t)| {
                let f = plant.flow(level);
                let fan = if f_max > 0.0 {
                    self.fan_rated_kw * (f / f_max).powi(3)
                } else {
                    0.0
                };
                let coil = f * plant.air_cp * (t - plant.supply_air_c).max(0.0) / self.cop;
                fan + coil
            })
            .collect()
    }
}

/// Dollars spent over one control period starting at `state` under `action`.
pub fn energy_cost(state: &SystemState, action: &Action, plant: &PlantParams, schedule: &CostSchedule) -> f64 {
    let hours = plant.control_period_s() / 3600.0;
    schedule.price(state.hour()) * hours * schedule.power_kw(state, action, plant)
}

/// Per-zone share of [`energy_cost`].
pub fn zone_costs(state: &SystemState, action: &Action, plant: &PlantParams, schedule: &CostSchedule) -> Vec<f64> {
    let dollars_per_kw = schedule.price(state.hour()) * plant.control_period_s() / 3600.0;
    schedule
        .zone_power_kw(state, action, plant)
        .into_iter()
        .map(|p| p * dollars_per_kw)
        .collect()
}
