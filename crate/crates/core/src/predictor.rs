//! Neural estimate of the current indoor temperatures from the previous `k`
//! control steps: `T_pre = net(window) + T_ofs`.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::corrupt_history;
use crate::history::{stack, ControlRecord, HistoryWindow};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{fit, forward, forward_batch, Activation, AdamState, Architecture, Dataset, FitConfig, Loss, ParamSet};
use crate::plant::PlantParams;
use crate::rng::{derive_seed, seeded};

pub const CHECKPOINT_KIND: &str = "predictor";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden: Vec<usize>,
    /// `T_ofs`, °C.
    pub offset_c: f64,
    /// History length `k`, control steps.
    pub window: usize,
    /// IID corruption probability applied to training windows.
    pub train_fault_probability: f64,
    /// Sampling interval `v` between training windows.
    pub interval: usize,
    pub lr: f64,
    /// Second learning rate listed for the predictor; used when `use_alt_lr` is set.
    pub alt_lr: f64,
    pub use_alt_lr: bool,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 256, 256, 256, 256],
            offset_c: 22.0,
            window: 20,
            train_fault_probability: 0.1,
            interval: 2,
            lr: 1e-3,
            alt_lr: 3e-3,
            use_alt_lr: false,
            batch_size: 32,
            epochs: 30,
        }
    }
}

impl PredictorConfig {
    pub fn input_width(&self, zones: usize) -> usize {
        HistoryWindow::width(zones) * self.window
    }

    pub fn architecture(&self, zones: usize) -> Result<Architecture> {
        let mut widths = vec![self.input_width(zones)];
        widths.extend(&self.hidden);
        widths.push(zones);
        Architecture::mlp(&widths, Activation::Identity)
    }

    pub fn learning_rate(&self) -> f64 {
        if self.use_alt_lr {
            self.alt_lr
        } else {
            self.lr
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            lr: self.learning_rate(),
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.interval == 0 || self.batch_size == 0 {
            return Err(Error::Config("predictor window, interval and batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fault_probability) {
            return Err(Error::Config("predictor training fault probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Windows with their true current temperatures.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<HistoryWindow>,
    pub labels: Vec<Vec<f64>>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Network-ready form: normalized inputs, targets shifted by the offset.
    pub fn to_dataset(&self, max_flow: f64, offset_c: f64) -> Result<Dataset> {
        let x: Vec<Vec<f64>> = self.windows.iter().map(|w| w.flatten(max_flow)).collect();
        let y: Vec<Vec<f64>> = self
            .labels
            .iter()
            .map(|l| l.iter().map(|t| t - offset_c).collect())
            .collect();
        Dataset::new(stack(&x)?, stack(&y)?)
    }

    /// `x0..x{d-1},y0..y{n-1}` with inputs normalized and labels in °C.
    pub fn write_csv(&self, path: &Path, max_flow: f64) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if let (Some(first), Some(label)) = (self.windows.first(), self.labels.first()) {
            let d = first.flatten(max_flow).len();
            let header: Vec<String> = (0..d)
                .map(|i| format!("x{i}"))
                .chain((0..label.len()).map(|i| format!("y{i}")))
                .collect();
            w.write_record(&header)?;
        }
        for (win, label) in self.windows.iter().zip(&self.labels) {
            let row: Vec<String> = win
                .flatten(max_flow)
                .iter()
                .chain(label)
                .map(f64::to_string)
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of windows taken from a log of length `len`.
pub fn window_count(len: usize, window: usize, interval: usize) -> usize {
    if len < window + 1 {
        0
    } else {
        (len - window - 1) / interval + 1
    }
}

/// Windows ending just before `t = k, k+v, k+2v, …` (0-based), each labelled
/// with the true temperatures at `t` and corrupted at `probability`.
pub fn build_training_set<R: Rng + ?Sized>(
    records: &[ControlRecord],
    plant: &PlantParams,
    window: usize,
    interval: usize,
    probability: f64,
    rng: &mut R,
) -> Result<WindowSet> {
    if records.len() < window + 1 {
        return Err(Error::input(
            records.len(),
            format!("log has {} control steps, at least k+1 = {} needed", records.len(), window + 1),
        ));
    }
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    let mut t = window;
    while t < records.len() {
        let clean = HistoryWindow::from_records(&records[t - window..t], plant)?;
        let (w, _) = corrupt_history(&clean, probability, rng);
        windows.push(w);
        labels.push(records[t].state.t_in.clone());
        t += interval;
    }
    Ok(WindowSet { windows, labels })
}

/// Trained predictor with everything needed to normalize its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub arch: Architecture,
    pub params: ParamSet,
    pub zones: usize,
    pub max_flow: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: PredictorConfig,
    zones: usize,
    max_flow: f64,
}

impl Predictor {
    pub fn new(config: PredictorConfig, zones: usize, max_flow: f64, params: ParamSet) -> Result<Self> {
        let arch = config.architecture(zones)?;
        if !arch.zeros().same_shape(&params) {
            return Err(Error::Shape("predictor weights do not match the configured layers".into()));
        }
        Ok(Self {
            config,
            arch,
            params,
            zones,
            max_flow,
        })
    }

    pub fn init(config: PredictorConfig, zones: usize, max_flow: f64, seed: u64) -> Result<Self> {
        let arch = config.architecture(zones)?;
        let params = arch.init(&mut seeded(derive_seed(seed, "predictor-init")));
        Ok(Self {
            config,
            arch,
            params,
            zones,
            max_flow,
        })
    }

    /// Train from a fresh initialization. Returns the per-epoch mean loss.
    pub fn train(&mut self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        self.fit(data, self.config.fit_config(), seed)
    }

    /// Continue training the current weights with a fresh optimizer.
    pub fn fit(&mut self, data: &Dataset, cfg: FitConfig, seed: u64) -> Result<Vec<f64>> {
        let mut adam = AdamState::new(&self.params);
        let mut rng = seeded(derive_seed(seed, "predictor-shuffle"));
        fit(&self.arch, &mut self.params, &mut adam, data, Loss::Mse, cfg, "train-predictor", &mut rng)
    }

    pub fn predict(&self, window: &HistoryWindow) -> Result<Vec<f64>> {
        if window.len() != self.config.window || window.zones() != self.zones {
            return Err(Error::Shape(format!(
                "predictor expects {} steps of {} zones, got {} of {}",
                self.config.window,
                self.zones,
                window.len(),
                window.zones()
            )));
        }
        let out = forward(&self.arch, &self.params, &window.flatten(self.max_flow))?;
        Ok(out.into_iter().map(|v| v + self.config.offset_c).collect())
    }

    /// Predictions in °C for normalized inputs.
    pub fn predict_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(forward_batch(&self.arch, &self.params, inputs.view())? + self.config.offset_c)
    }

    /// RMSE in °C over all zones of a dataset built with this predictor's offset.
    pub fn rmse(&self, data: &Dataset) -> Result<f64> {
        let pred = forward_batch(&self.arch, &self.params, data.inputs.view())?;
        let diff = &pred - &data.targets;
        Ok((diff.mapv(|d| d * d).sum() / diff.len() as f64).sqrt())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::to_value(Meta {
            config: self.config.clone(),
            zones: self.zones,
            max_flow: self.max_flow,
        })?;
        Checkpoint::from_network(CHECKPOINT_KIND, &self.arch, &self.params, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.metadata.clone())?;
        let (_, params) = ck.network()?;
        Self::new(meta.config, meta.zones, meta.max_flow, params)
    }
}
