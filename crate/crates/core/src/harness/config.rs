//! Experiment configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstract_model::ModelOptions;
use crate::controller::{DqnConfig, FtfConfig};
use crate::error::{Error, Result};
use crate::mal::{MalConfig, Strategy};
use crate::plant::{load_weather_csv, generate_weather, CostSchedule, OnOffController, PlantParams, WeatherProfile, WeatherSeries};
use crate::predictor::PredictorConfig;
use crate::selector::SelectorConfig;

/// Everything a recipe needs. Sections left out of the file take their
/// component defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Base seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    pub zones: usize,
    /// Full plant override. `None` uses the built-in building for `zones`.
    pub plant: Option<PlantParams>,
    pub cost: CostSchedule,
    pub weather: WeatherConfig,
    pub onoff: OnOffConfig,
    pub predictor: PredictorConfig,
    pub selector: SelectorConfig,
    pub dqn: DqnConfig,
    /// Closed-loop evaluation; its reward parameters also drive DQN training.
    pub ftf: FtfConfig,
    pub sweep: SweepConfig,
    pub mal: AblationConfig,
    pub checkpoints: CheckpointPaths,
    /// Worker threads for sweep points; 0 uses the available parallelism.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            zones: 1,
            plant: None,
            cost: CostSchedule::default(),
            weather: WeatherConfig::default(),
            onoff: OnOffConfig::default(),
            predictor: PredictorConfig::default(),
            selector: SelectorConfig::default(),
            dqn: DqnConfig::default(),
            ftf: FtfConfig::default(),
            sweep: SweepConfig::default(),
            mal: AblationConfig::default(),
            checkpoints: CheckpointPaths::default(),
            workers: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherConfig {
    pub profile: WeatherProfile,
    /// Seed of the synthetic weather used for data collection.
    pub train_seed: u64,
    /// Seed of the held-out evaluation weather.
    pub eval_seed: u64,
    /// One-minute CSV weather replacing the synthetic training weather.
    pub train_csv: Option<PathBuf>,
    pub eval_csv: Option<PathBuf>,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            profile: WeatherProfile::default(),
            train_seed: 100,
            eval_seed: 999,
            train_csv: None,
            eval_csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnOffConfig {
    pub t_low: f64,
    pub t_high: f64,
    pub deadband: f64,
    /// Control steps in the collected log: 60 days plus the lead-in of the
    /// first window, so 5760 labeled windows fit.
    pub log_steps: usize,
    pub initial_temp_c: f64,
    /// Control steps of the ON-OFF log on the evaluation weather that
    /// held-out scores are computed on.
    pub heldout_steps: usize,
}

impl Default for OnOffConfig {
    fn default() -> Self {
        Self {
            t_low: 19.0,
            t_high: 24.0,
            deadband: 0.5,
            log_steps: 5780,
            initial_temp_c: 22.0,
            heldout_steps: 1900,
        }
    }
}

impl OnOffConfig {
    pub fn controller(&self, levels: usize) -> OnOffController {
        OnOffController::new(self.t_low, self.t_high, self.deadband, levels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub iid_probabilities: Vec<f64>,
    pub continuous_durations: Vec<u32>,
    pub continuous_probability: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            iid_probabilities: vec![0.0, 0.1, 0.2, 0.4, 0.6, 0.8],
            continuous_durations: (0..=5).collect(),
            continuous_probability: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub trainer: MalConfig,
    pub model: ModelOptions,
    pub sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seeds: usize,
    /// Corruption applied to the labeled windows.
    pub labeled_fault_probability: f64,
    /// Spacing of the held-out windows.
    pub test_interval: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            trainer: MalConfig::default(),
            model: ModelOptions::default(),
            sizes: vec![360, 720, 1440, 2880, 5760],
            strategies: Strategy::ALL.to_vec(),
            seeds: 3,
            labeled_fault_probability: 0.0,
            test_interval: 4,
        }
    }
}

/// Explicit checkpoint locations. Unset entries resolve to the output of the
/// recipe that trains them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointPaths {
    pub predictor: Option<PathBuf>,
    pub selector: Option<PathBuf>,
    pub dqn: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [
            &mut self.weather.train_csv,
            &mut self.weather.eval_csv,
            &mut self.checkpoints.predictor,
            &mut self.checkpoints.selector,
            &mut self.checkpoints.dqn,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering, with the settings that
    /// cannot change any output (`out_dir`, `workers`) blanked.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = 0;
        Ok(hex(&Sha256::digest(c.to_toml()?.as_bytes())))
    }

    pub fn plant(&self) -> Result<PlantParams> {
        match &self.plant {
            Some(p) => Ok(p.clone()),
            None => PlantParams::for_zones(self.zones),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let plant = self.plant()?;
        plant.validate()?;
        if plant.zones() != self.zones {
            return Err(Error::Config(format!(
                "zones = {} but the plant has {} zones",
                self.zones,
                plant.zones()
            )));
        }
        self.cost.validate()?;
        self.predictor.validate()?;
        self.selector.validate()?;
        self.dqn.validate()?;
        self.ftf.reward.validate()?;
        self.mal.trainer.validate()?;
        if self.predictor.window != self.selector.window {
            return Err(Error::Config("predictor and selector windows differ".into()));
        }
        if self.onoff.log_steps <= self.predictor.window || self.onoff.heldout_steps <= self.predictor.window {
            return Err(Error::Config("ON-OFF logs must be longer than the history window".into()));
        }
        if self.ftf.control_steps == 0 {
            return Err(Error::Config("evaluation needs at least one control step".into()));
        }
        let p = &self.sweep;
        if p.iid_probabilities.iter().chain([&p.continuous_probability]).any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config("sweep probabilities must lie in [0, 1]".into()));
        }
        if self.mal.seeds == 0 || self.mal.sizes.contains(&0) || self.mal.test_interval == 0 {
            return Err(Error::Config("ablation sizes, seeds and test interval must be positive".into()));
        }
        if self.mal.sizes.iter().any(|&s| s + self.predictor.window > self.onoff.log_steps) {
            return Err(Error::Config(format!(
                "largest ablation size needs {} log steps, log has {}",
                self.mal.sizes.iter().max().unwrap() + self.predictor.window,
                self.onoff.log_steps
            )));
        }
        for p in [&self.checkpoints.predictor, &self.checkpoints.selector, &self.checkpoints.dqn]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Collection weather covering `control_steps` plus forecast margin.
    pub fn train_weather(&self, control_steps: usize) -> Result<WeatherSeries> {
        self.weather_for(self.weather.train_csv.as_deref(), self.weather.train_seed, control_steps)
    }

    pub fn eval_weather(&self, control_steps: usize) -> Result<WeatherSeries> {
        self.weather_for(self.weather.eval_csv.as_deref(), self.weather.eval_seed, control_steps)
    }

    fn weather_for(&self, csv: Option<&Path>, seed: u64, control_steps: usize) -> Result<WeatherSeries> {
        match csv {
            Some(path) => load_weather_csv(path),
            None => {
                let minutes = (control_steps as u64 + 8) * self.plant()?.control_period_minutes() as u64;
                generate_weather(minutes.div_ceil(1440) as usize + 1, &self.weather.profile, seed)
            }
        }
    }

    pub fn workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
