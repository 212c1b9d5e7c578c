//! Control-period stepping of the plant with sensor faults, and the ON-OFF
//! data-collection loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{FaultConfig, FaultInjector};
use crate::history::ControlRecord;
use crate::plant::{
    energy_cost, step_plant, Action, CostSchedule, OnOffController, PlantParams, SystemState, WeatherSeries,
};
use crate::rng::{derive_seed, seeded, SimRng};

/// Plant, weather and tariff of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub plant: PlantParams,
    pub weather: WeatherSeries,
    pub cost: CostSchedule,
}

impl Environment {
    pub fn new(plant: PlantParams, weather: WeatherSeries, cost: CostSchedule) -> Result<Self> {
        plant.validate()?;
        cost.validate()?;
        if weather.step_minutes() as f64 * 60.0 != plant.sim_step_s {
            return Err(Error::Config(format!(
                "weather step of {} min does not match plant step of {} s",
                weather.step_minutes(),
                plant.sim_step_s
            )));
        }
        Ok(Self { plant, weather, cost })
    }

    pub fn zones(&self) -> usize {
        self.plant.zones()
    }

    /// Whole control periods covered by the weather series.
    pub fn max_control_steps(&self) -> usize {
        (self.weather.len() - 1) / self.plant.steps_per_control
    }
}

/// Running plant plus the sensor fault process attached to it.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub state: SystemState,
    /// What the sensors reported at the latest simulation step.
    pub sensed: Vec<f64>,
    faults: FaultInjector,
    noise: SimRng,
}

impl Simulation {
    pub fn new(env: &Environment, t_init: f64, faults: FaultConfig, seed: u64) -> Result<Self> {
        let state = env.plant.initial_state(&env.weather, t_init)?;
        let mut faults = FaultInjector::new(faults, env.zones())?;
        let sensed = faults.inject(&state.t_in, state.step)?;
        Ok(Self {
            state,
            sensed,
            faults,
            noise: seeded(derive_seed(seed, "plant-noise")),
        })
    }

    pub fn faults(&self) -> &FaultInjector {
        &self.faults
    }

    /// Apply `action` for one control period. Faults are drawn at every
    /// simulation step; the returned cost is for the period just finished.
    pub fn advance(&mut self, env: &Environment, action: &Action) -> Result<f64> {
        let cost = energy_cost(&self.state, action, &env.plant, &env.cost);
        for _ in 0..env.plant.steps_per_control {
            self.state = step_plant(&self.state, action, &env.plant, &env.weather, &mut self.noise)?;
            self.sensed = self.faults.inject(&self.state.t_in, self.state.step)?;
        }
        Ok(cost)
    }
}

/// ON-OFF closed loop on clean sensors, one record per control instant.
pub fn collect_onoff(
    env: &Environment,
    controller: &OnOffController,
    t_init: f64,
    control_steps: usize,
    seed: u64,
) -> Result<Vec<ControlRecord>> {
    let mut c = controller.clone();
    run_policy(env, t_init, control_steps, FaultConfig::none(0), seed, |_, sensed| Ok(c.act(sensed)))
}

/// Generic closed loop: `policy` sees the true state and the sensed reading
/// at each control instant and returns the action for the next period.
pub fn run_policy<F>(
    env: &Environment,
    t_init: f64,
    control_steps: usize,
    faults: FaultConfig,
    seed: u64,
    mut policy: F,
) -> Result<Vec<ControlRecord>>
where
    F: FnMut(&SystemState, &[f64]) -> Result<Action>,
{
    if control_steps > env.max_control_steps() {
        return Err(Error::Config(format!(
            "{control_steps} control steps requested, weather covers {}",
            env.max_control_steps()
        )));
    }
    let mut sim = Simulation::new(env, t_init, faults, seed)?;
    let mut records = Vec::with_capacity(control_steps);
    for _ in 0..control_steps {
        let action = policy(&sim.state, &sim.sensed)?;
        action.validate(env.zones(), env.plant.levels())?;
        let state = sim.state.clone();
        let sensed = sim.sensed.clone();
        let cost = sim.advance(env, &action)?;
        records.push(ControlRecord { state, sensed, action, cost });
    }
    Ok(records)
}

/// Fraction of record-zone pairs whose true temperature lies in `[lo, hi]`.
pub fn fraction_within(records: &[ControlRecord], lo: f64, hi: f64) -> f64 {
    let total: usize = records.iter().map(|r| r.state.t_in.len()).sum();
    if total == 0 {
        return 1.0;
    }
    let inside = records
        .iter()
        .flat_map(|r| &r.state.t_in)
        .filter(|t| (lo..=hi).contains(*t))
        .count();
    inside as f64 / total as f64
}
