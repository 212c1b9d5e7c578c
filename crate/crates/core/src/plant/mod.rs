//! Ground-truth multi-zone thermal plant.
//!
//! Each zone is a lumped air/furniture capacitance with supply-air cooling,
//! envelope conduction, conduction to neighbouring zones, internal and solar
//! gains, and Gaussian process noise, integrated with explicit Euler at the
//! simulation period.

mod cost;
mod onoff;
mod weather;

pub use cost::{energy_cost, zone_costs, CostSchedule};
pub use onoff::OnOffController;
pub use weather::{T_OUT_MAX, T_OUT_MIN, generate_weather, load_weather_csv, write_weather_csv, WeatherProfile, WeatherSeries};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: u32 = 1440;

/// Plant snapshot at one simulation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Simulation-step index.
    pub step: u64,
    /// Minutes since midnight, in `[0, 1440)`.
    pub minute: u32,
    pub day: u32,
    /// Indoor air temperature per zone, °C.
    pub t_in: Vec<f64>,
    /// Ambient temperature, °C.
    pub t_out: f64,
    /// Solar irradiance, W/m².
    pub sun: f64,
}

impl SystemState {
    pub fn zones(&self) -> usize {
        self.t_in.len()
    }

    /// Clock scaled to `[0, 1)`.
    pub fn clock_fraction(&self) -> f64 {
        self.minute as f64 / MINUTES_PER_DAY as f64
    }

    pub fn hour(&self) -> usize {
        (self.minute / 60) as usize
    }
}

/// Per-zone airflow level indices into the plant's flow table.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub levels: Vec<usize>,
}

impl Action {
    pub fn new(levels: Vec<usize>) -> Self {
        Self { levels }
    }

    pub fn off(zones: usize) -> Self {
        Self { levels: vec![0; zones] }
    }

    pub fn validate(&self, zones: usize, levels: usize) -> Result<()> {
        if self.levels.len() != zones {
            return Err(Error::Shape(format!(
                "action has {} zones, plant has {zones}",
                self.levels.len()
            )));
        }
        if let Some((i, l)) = self.levels.iter().enumerate().find(|(_, &l)| l >= levels) {
            return Err(Error::Config(format!(
                "zone {i}: flow level {l} out of range (m = {levels})"
            )));
        }
        Ok(())
    }

    /// Mixed-radix joint index; zone 0 is the least significant digit.
    pub fn to_index(&self, levels: usize) -> usize {
        self.levels.iter().rev().fold(0, |acc, &l| acc * levels + l)
    }

    pub fn from_index(mut index: usize, zones: usize, levels: usize) -> Self {
        let mut out = Vec::with_capacity(zones);
        for _ in 0..zones {
            out.push(index % levels);
            index /= levels;
        }
        Self { levels: out }
    }
}

/// Internal heat gains: occupied hours `[start, end)` versus the rest of the day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub occupied_kw: Vec<f64>,
    pub unoccupied_kw: Vec<f64>,
    pub occupied_start_hour: u32,
    pub occupied_end_hour: u32,
}

impl GainSchedule {
    pub fn gain_kw(&self, zone: usize, minute: u32) -> f64 {
        let hour = minute / 60;
        if (self.occupied_start_hour..self.occupied_end_hour).contains(&hour) {
            self.occupied_kw[zone]
        } else {
            self.unoccupied_kw[zone]
        }
    }
}

/// Conductance between two zones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub a: usize,
    pub b: usize,
    pub kw_per_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Zone heat capacity m·C_p, kJ/K.
    pub thermal_mass_kj_per_k: Vec<f64>,
    /// Envelope conductance, kW/K.
    pub envelope_kw_per_k: Vec<f64>,
    pub couplings: Vec<Coupling>,
    /// Supply air temperature, °C.
    pub supply_air_c: f64,
    /// Specific heat of air, kJ/(kg·K).
    pub air_cp: f64,
    /// Discrete supply airflow levels, kg/s. The first level may be zero (off).
    pub flow_levels_kg_s: Vec<f64>,
    pub gains: GainSchedule,
    /// Effective solar aperture per zone, m².
    pub solar_aperture_m2: Vec<f64>,
    /// Process-noise standard deviation per simulation step, °C.
    pub noise_std_c: f64,
    /// Simulation period Δt_s, seconds.
    pub sim_step_s: f64,
    /// Simulation steps per control period (Δt_c / Δt_s).
    pub steps_per_control: usize,
    /// Largest deterministic temperature change allowed in one step, °C.
    pub max_step_change_c: f64,
}

impl PlantParams {
    pub fn single_zone() -> Self {
        Self {
            thermal_mass_kj_per_k: vec![2500.0],
            envelope_kw_per_k: vec![0.06],
            couplings: Vec::new(),
            supply_air_c: 10.0,
            air_cp: 1.005,
            flow_levels_kg_s: vec![0.0, 0.35],
            gains: GainSchedule {
                occupied_kw: vec![1.0],
                unoccupied_kw: vec![0.15],
                occupied_start_hour: 8,
                occupied_end_hour: 18,
            },
            solar_aperture_m2: vec![2.0],
            noise_std_c: 0.02,
            sim_step_s: 60.0,
            steps_per_control: 15,
            max_step_change_c: 2.0,
        }
    }

    /// Square layout: 0-1 and 2-3 share a wall, as do 0-2 and 1-3.
    pub fn four_zone() -> Self {
        let c = 0.05;
        Self {
            thermal_mass_kj_per_k: vec![2500.0, 2200.0, 2800.0, 2400.0],
            envelope_kw_per_k: vec![0.06, 0.05, 0.07, 0.055],
            couplings: vec![
                Coupling { a: 0, b: 1, kw_per_k: c },
                Coupling { a: 1, b: 3, kw_per_k: c },
                Coupling { a: 3, b: 2, kw_per_k: c },
                Coupling { a: 2, b: 0, kw_per_k: c },
            ],
            supply_air_c: 10.0,
            air_cp: 1.005,
            flow_levels_kg_s: vec![0.0, 0.35],
            gains: GainSchedule {
                occupied_kw: vec![1.0, 1.25, 0.875, 1.125],
                unoccupied_kw: vec![0.15, 0.2, 0.1, 0.15],
                occupied_start_hour: 8,
                occupied_end_hour: 18,
            },
            solar_aperture_m2: vec![2.4, 1.2, 2.0, 1.6],
            noise_std_c: 0.02,
            sim_step_s: 60.0,
            steps_per_control: 15,
            max_step_change_c: 2.0,
        }
    }

    pub fn for_zones(zones: usize) -> Result<Self> {
        match zones {
            1 => Ok(Self::single_zone()),
            4 => Ok(Self::four_zone()),
            n => Err(Error::Config(format!(
                "no built-in building with {n} zones (use 1 or 4, or give explicit plant params)"
            ))),
        }
    }

    pub fn zones(&self) -> usize {
        self.thermal_mass_kj_per_k.len()
    }

    pub fn levels(&self) -> usize {
        self.flow_levels_kg_s.len()
    }

    pub fn max_flow(&self) -> f64 {
        self.flow_levels_kg_s.iter().copied().fold(0.0, f64::max)
    }

    pub fn flow(&self, level: usize) -> f64 {
        self.flow_levels_kg_s[level]
    }

    pub fn control_period_s(&self) -> f64 {
        self.sim_step_s * self.steps_per_control as f64
    }

    pub fn control_period_minutes(&self) -> u32 {
        (self.control_period_s() / 60.0).round() as u32
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.zones();
        if n == 0 {
            return Err(Error::Config("plant has no zones".into()));
        }
        let per_zone = [
            ("envelope_kw_per_k", self.envelope_kw_per_k.len()),
            ("solar_aperture_m2", self.solar_aperture_m2.len()),
            ("gains.occupied_kw", self.gains.occupied_kw.len()),
            ("gains.unoccupied_kw", self.gains.unoccupied_kw.len()),
        ];
        for (name, len) in per_zone {
            if len != n {
                return Err(Error::Config(format!("{name} has {len} entries for {n} zones")));
            }
        }
        if self.thermal_mass_kj_per_k.iter().any(|&m| m <= 0.0) {
            return Err(Error::Config("thermal masses must be positive".into()));
        }
        if self.envelope_kw_per_k.iter().any(|&u| u <= 0.0) {
            return Err(Error::Config("envelope conductances must be positive".into()));
        }
        for c in &self.couplings {
            if c.a >= n || c.b >= n || c.a == c.b || c.kw_per_k <= 0.0 {
                return Err(Error::Config(format!("invalid coupling {c:?}")));
            }
        }
        if self.flow_levels_kg_s.len() < 2 || self.flow_levels_kg_s.iter().any(|&f| f < 0.0) {
            return Err(Error::Config(
                "need at least two non-negative flow levels".into(),
            ));
        }
        if self.noise_std_c < 0.0 || self.sim_step_s <= 0.0 || self.steps_per_control == 0 {
            return Err(Error::Config("invalid timing or noise settings".into()));
        }
        Ok(())
    }

    /// Deterministic heat flow into each zone, kW.
    fn heat_flows(&self, state: &SystemState, action: &Action) -> Vec<f64> {
        let n = self.zones();
        let mut q: Vec<f64> = (0..n)
            .map(|i| {
                let mdot = self.flow(action.levels[i]);
                let t = state.t_in[i];
                mdot * self.air_cp * (self.supply_air_c - t)
                    + self.envelope_kw_per_k[i] * (state.t_out - t)
                    + self.gains.gain_kw(i, state.minute)
                    + self.solar_aperture_m2[i] * state.sun / 1000.0
            })
            .collect();
        for c in &self.couplings {
            let flow = c.kw_per_k * (state.t_in[c.b] - state.t_in[c.a]);
            q[c.a] += flow;
            q[c.b] -= flow;
        }
        q
    }

    pub fn initial_state(&self, weather: &WeatherSeries, t_in: f64) -> Result<SystemState> {
        let (t_out, sun) = weather.at(0)?;
        Ok(SystemState {
            step: 0,
            minute: 0,
            day: 0,
            t_in: vec![t_in; self.zones()],
            t_out,
            sun,
        })
    }
}

/// Advance the plant one simulation step Δt_s.
pub fn step_plant<R: Rng + ?Sized>(
    state: &SystemState,
    action: &Action,
    params: &PlantParams,
    weather: &WeatherSeries,
    rng: &mut R,
) -> Result<SystemState> {
    action.validate(params.zones(), params.levels())?;
    if state.zones() != params.zones() {
        return Err(Error::Shape(format!(
            "state has {} zones, plant has {}",
            state.zones(),
            params.zones()
        )));
    }
    let q = params.heat_flows(state, action);
    let noise = if params.noise_std_c > 0.0 {
        Some(Normal::new(0.0, params.noise_std_c).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut t_in = Vec::with_capacity(q.len());
    for (i, qi) in q.iter().enumerate() {
        let delta = params.sim_step_s * qi / params.thermal_mass_kj_per_k[i];
        if !delta.is_finite() || delta.abs() >= params.max_step_change_c {
            return Err(Error::Numeric(format!(
                "zone {i}: temperature change {delta:.3} °C in one step violates the stability guard"
            )));
        }
        let eps = noise.map_or(0.0, |d| d.sample(rng));
        t_in.push(state.t_in[i] + delta + eps);
    }
    let step = state.step + 1;
    let (t_out, sun) = weather.at(step as usize)?;
    let elapsed_min = (step as f64 * params.sim_step_s / 60.0).round() as u64;
    Ok(SystemState {
        step,
        minute: (elapsed_min % MINUTES_PER_DAY as u64) as u32,
        day: (elapsed_min / MINUTES_PER_DAY as u64) as u32,
        t_in,
        t_out,
        sun,
    })
}
