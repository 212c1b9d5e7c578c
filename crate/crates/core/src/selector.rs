//! Proposal selector: per zone, decides whether the raw sensor reading or the
//! predictor's estimate is the more trustworthy temperature.
//!
//! The network is a 1-D convolution stack over the history window (time as the
//! spatial axis, `2 + 2n` channels). Its flattened output is concatenated with
//! the `2n` normalized proposals and fed through a dense stack ending in one
//! 2-way softmax per zone.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::corrupt_history;
use crate::history::{normalize_temp, stack, ControlRecord, HistoryWindow};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    backward_from_output, backward_with_input, fit_with, forward_batch, forward_trace, Activation, AdamState,
    Architecture, Dataset, FitConfig, LayerParams, LayerSpec, Loss, ParamSet,
};
use crate::plant::{PlantParams, T_OUT_MAX, T_OUT_MIN};
use crate::rng::{derive_seed, seeded};

pub const CHECKPOINT_KIND: &str = "selector";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Hidden widths of the dense stack; the output layer (2n) is implied.
    pub dense: Vec<usize>,
    pub window: usize,
    /// IID corruption probability applied to training windows.
    pub train_fault_probability: f64,
    /// Samples per window of type 1 (normal, faulty), type 2 (faulty, normal)
    /// and type 3 (faulty, faulty).
    pub multiplicities: [usize; 3],
    /// Spacing between windows drawn from the log.
    pub interval: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![32, 64, 64, 64],
            kernel: 3,
            dense: vec![512, 256, 256, 128, 256, 256, 256],
            window: 20,
            train_fault_probability: 0.3,
            multiplicities: [3, 3, 4],
            interval: 2,
            lr: 1e-4,
            epochs: 50,
            batch_size: 32,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multiplicities.iter().any(|&m| m == 0) {
            return Err(Error::Config("selector sample multiplicities must be positive".into()));
        }
        if self.window < 1 + self.conv_channels.len() * (self.kernel.max(1) - 1) {
            return Err(Error::Config(format!(
                "window of {} steps is too short for {} conv layers of kernel {}",
                self.window,
                self.conv_channels.len(),
                self.kernel
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fault_probability) {
            return Err(Error::Config("selector training fault probability outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }
}

/// Convolution and dense halves of the selector; weights live in one
/// [`ParamSet`] (conv layers first).
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorNet {
    pub conv: Architecture,
    pub dense: Architecture,
    pub zones: usize,
    pub window: usize,
}

impl SelectorNet {
    pub fn new(config: &SelectorConfig, zones: usize) -> Result<Self> {
        config.validate()?;
        let width = HistoryWindow::width(zones);
        let mut layers = Vec::new();
        let (mut ch, mut len) = (width, config.window);
        for &out in &config.conv_channels {
            layers.push(LayerSpec::conv1d(ch, out, len, config.kernel, Activation::Relu));
            len = len + 1 - config.kernel;
            ch = out;
        }
        let conv = Architecture::new(layers)?;
        let features = if config.conv_channels.is_empty() { width * config.window } else { ch * len };
        let mut widths = vec![features + 2 * zones];
        widths.extend(&config.dense);
        widths.push(2 * zones);
        let dense = Architecture::mlp(&widths, Activation::Softmax { group: 2 })?;
        Ok(Self {
            conv,
            dense,
            zones,
            window: config.window,
        })
    }

    /// Width of one input row: channel-major window then `2n` proposals.
    pub fn input_width(&self) -> usize {
        HistoryWindow::width(self.zones) * self.window + 2 * self.zones
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + self.dense.num_params()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut layers = self.conv.init(rng).into_layers();
        layers.extend(self.dense.init(rng).into_layers());
        ParamSet::new(layers)
    }

    pub fn zeros(&self) -> ParamSet {
        let mut layers = self.conv.zeros().into_layers();
        layers.extend(self.dense.zeros().into_layers());
        ParamSet::new(layers)
    }

    fn split(&self, params: &ParamSet) -> Result<(ParamSet, ParamSet)> {
        let nc = self.conv.layers().len();
        if params.layers().len() != nc + self.dense.layers().len() {
            return Err(Error::Shape("selector parameter count does not match its layers".into()));
        }
        let conv: Vec<LayerParams> = params.layers()[..nc].to_vec();
        let dense: Vec<LayerParams> = params.layers()[nc..].to_vec();
        Ok((ParamSet::new(conv), ParamSet::new(dense)))
    }

    fn history_cols(&self) -> usize {
        HistoryWindow::width(self.zones) * self.window
    }

    fn features(&self, conv: &ParamSet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = x.slice(s![.., ..self.history_cols()]);
        if self.conv.layers().is_empty() {
            return Ok(h.to_owned());
        }
        forward_batch(&self.conv, conv, h)
    }

    fn check_width(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "selector input has {} columns, expected {}",
                x.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Per-zone probabilities `(p_raw, p_pred)` for each row.
    pub fn forward(&self, params: &ParamSet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(&x)?;
        let (conv, dense) = self.split(params)?;
        let f = self.features(&conv, x)?;
        let z = ndarray::concatenate(Axis(1), &[f.view(), x.slice(s![.., self.history_cols()..])])
            .map_err(|e| Error::Shape(e.to_string()))?;
        forward_batch(&self.dense, &dense, z.view())
    }

    /// Summed per-zone cross-entropy, batch mean, and its gradient.
    pub fn loss_and_gradient(&self, params: &ParamSet, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, ParamSet)> {
        self.check_width(&x)?;
        let (conv, dense) = self.split(params)?;
        let hist = x.slice(s![.., ..self.history_cols()]);
        let conv_trace = if self.conv.layers().is_empty() {
            None
        } else {
            Some(forward_trace(&self.conv, &conv, hist)?)
        };
        let f = match &conv_trace {
            Some(t) => t.output().clone(),
            None => hist.to_owned(),
        };
        let z = ndarray::concatenate(Axis(1), &[f.view(), x.slice(s![.., self.history_cols()..])])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let dense_trace = forward_trace(&self.dense, &dense, z.view())?;
        let (value, dense_grad, dz) =
            backward_with_input(&self.dense, &dense, &dense_trace, Loss::CrossEntropy, targets, None)?;
        let mut layers = match conv_trace {
            Some(t) => {
                let df = dz.slice(s![.., ..f.ncols()]).to_owned();
                backward_from_output(&self.conv, &conv, &t, df)?.0.into_layers()
            }
            None => Vec::new(),
        };
        layers.extend(dense_grad.into_layers());
        Ok((value, ParamSet::new(layers)))
    }
}

/// Which proposal the selector trusted for a zone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Raw,
    Predicted,
}

/// Argmax over one zone's pair; ties go to the raw reading.
pub fn choose(p_raw: f64, p_pred: f64) -> Choice {
    if p_pred > p_raw {
        Choice::Predicted
    } else {
        Choice::Raw
    }
}

/// One network input row from a window and per-zone proposals in °C.
pub fn selector_input(window: &HistoryWindow, max_flow: f64, raw: &[f64], predicted: &[f64]) -> Vec<f64> {
    let mut row = window.flatten_channels(max_flow);
    for (r, p) in raw.iter().zip(predicted) {
        row.push(normalize_temp(*r));
        row.push(normalize_temp(*p));
    }
    row
}

/// Training data with the sample type of every (row, zone) pair, 1 to 3.
#[derive(Clone, Debug)]
pub struct SelectorSet {
    pub data: Dataset,
    pub types: Vec<Vec<u8>>,
}

impl SelectorSet {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select(rows),
            types: rows.iter().map(|&r| self.types[r].clone()).collect(),
        }
    }

    /// Exchange the two proposal slots (and their labels) of every zone.
    pub fn swapped(&self, zones: usize) -> Self {
        let mut out = self.clone();
        let base = out.data.inputs.ncols() - 2 * zones;
        for z in 0..zones {
            for mut row in out.data.inputs.rows_mut() {
                row.swap(base + 2 * z, base + 2 * z + 1);
            }
            for mut row in out.data.targets.rows_mut() {
                row.swap(2 * z, 2 * z + 1);
            }
        }
        for t in out.types.iter_mut().flatten() {
            *t = match *t {
                1 => 2,
                2 => 1,
                x => x,
            };
        }
        out
    }
}

/// Label of a pair given the truth: the closer proposal wins, ties to slot 1.
pub fn closer_label(truth: f64, pl1: f64, pl2: f64) -> [f64; 2] {
    if (pl1 - truth).abs() <= (pl2 - truth).abs() {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

/// For each window, `sum(multiplicities)` samples; every zone draws its own
/// random order of sample types. "Normal" proposals are the true temperature,
/// faulty ones are uniform replacements on the ambient range.
pub fn build_selector_dataset<R: Rng + ?Sized>(
    records: &[ControlRecord],
    plant: &PlantParams,
    config: &SelectorConfig,
    rng: &mut R,
) -> Result<SelectorSet> {
    config.validate()?;
    let k = config.window;
    if records.len() < k + 1 {
        return Err(Error::input(
            records.len(),
            format!("log has {} control steps, at least k+1 = {} needed", records.len(), k + 1),
        ));
    }
    let n = plant.zones();
    let max_flow = plant.max_flow();
    let mut kinds = Vec::new();
    for (ty, &m) in config.multiplicities.iter().enumerate() {
        kinds.extend(std::iter::repeat_n(ty as u8 + 1, m));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut types = Vec::new();
    let mut t = k;
    while t < records.len() {
        let clean = HistoryWindow::from_records(&records[t - k..t], plant)?;
        let (window, _) = corrupt_history(&clean, config.train_fault_probability, rng);
        let hist = window.flatten_channels(max_flow);
        let truth = &records[t].state.t_in;
        let orders: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                let mut o = kinds.clone();
                o.shuffle(rng);
                o
            })
            .collect();
        for j in 0..kinds.len() {
            let mut row = hist.clone();
            let mut target = Vec::with_capacity(2 * n);
            let mut ty = Vec::with_capacity(n);
            for z in 0..n {
                let kind = orders[z][j];
                let mut faulty = || rng.random_range(T_OUT_MIN..=T_OUT_MAX);
                let (pl1, pl2, label) = match kind {
                    1 => (truth[z], faulty(), [1.0, 0.0]),
                    2 => (faulty(), truth[z], [0.0, 1.0]),
                    _ => {
                        let (a, b) = (faulty(), faulty());
                        (a, b, closer_label(truth[z], a, b))
                    }
                };
                row.push(normalize_temp(pl1));
                row.push(normalize_temp(pl2));
                target.extend(label);
                ty.push(kind);
            }
            rows.push(row);
            targets.push(target);
            types.push(ty);
        }
        t += config.interval;
    }
    Ok(SelectorSet {
        data: Dataset::new(stack(&rows)?, stack(&targets)?)?,
        types,
    })
}

/// Per-type accuracy over (row, zone) pairs; `None` when a type is absent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub type1: Option<f64>,
    pub type2: Option<f64>,
    pub type3: Option<f64>,
    /// Type-1 and type-2 pairs pooled.
    pub type12: Option<f64>,
    pub overall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selector {
    pub config: SelectorConfig,
    pub net: SelectorNet,
    pub params: ParamSet,
    pub max_flow: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: SelectorConfig,
    zones: usize,
    max_flow: f64,
}

impl Selector {
    pub fn init(config: SelectorConfig, zones: usize, max_flow: f64, seed: u64) -> Result<Self> {
        let net = SelectorNet::new(&config, zones)?;
        let params = net.init(&mut seeded(derive_seed(seed, "selector-init")));
        Ok(Self {
            config,
            net,
            params,
            max_flow,
        })
    }

    pub fn zones(&self) -> usize {
        self.net.zones
    }

    pub fn train(&mut self, set: &SelectorSet, seed: u64) -> Result<Vec<f64>> {
        let mut adam = AdamState::new(&self.params);
        let mut rng = seeded(derive_seed(seed, "selector-shuffle"));
        let net = &self.net;
        fit_with(
            &mut self.params,
            &mut adam,
            &set.data,
            self.config.fit_config(),
            "train-selector",
            &mut rng,
            |p, x, t, _| net.loss_and_gradient(p, x, t),
        )
    }

    pub fn probabilities(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(&self.params, inputs)
    }

    /// Chosen temperature and choice per zone.
    pub fn select(&self, window: &HistoryWindow, raw: &[f64], predicted: &[f64]) -> Result<(Vec<f64>, Vec<Choice>)> {
        let n = self.zones();
        if raw.len() != n || predicted.len() != n || window.zones() != n || window.len() != self.net.window {
            return Err(Error::Shape("selector inputs do not match its zone count or window".into()));
        }
        let row = selector_input(window, self.max_flow, raw, predicted);
        let x = ArrayView2::from_shape((1, row.len()), &row).map_err(|e| Error::Shape(e.to_string()))?;
        let p = self.probabilities(x)?;
        let mut chosen = Vec::with_capacity(n);
        let mut flags = Vec::with_capacity(n);
        for z in 0..n {
            let c = choose(p[[0, 2 * z]], p[[0, 2 * z + 1]]);
            chosen.push(match c {
                Choice::Raw => raw[z],
                Choice::Predicted => predicted[z],
            });
            flags.push(c);
        }
        Ok((chosen, flags))
    }

    /// Per (row, zone) correctness of the argmax decision.
    pub fn correctness(&self, set: &SelectorSet) -> Result<Vec<Vec<bool>>> {
        let n = self.zones();
        let mut out = Vec::with_capacity(set.len());
        let chunk = 256;
        let mut start = 0;
        while start < set.len() {
            let end = (start + chunk).min(set.len());
            let p = self.probabilities(set.data.inputs.slice(s![start..end, ..]))?;
            for (i, row) in p.rows().into_iter().enumerate() {
                let target = set.data.targets.row(start + i);
                out.push(
                    (0..n)
                        .map(|z| {
                            let c = choose(row[2 * z], row[2 * z + 1]);
                            let want = choose(target[2 * z], target[2 * z + 1]);
                            c == want
                        })
                        .collect(),
                );
            }
            start = end;
        }
        Ok(out)
    }

    pub fn accuracy(&self, set: &SelectorSet) -> Result<Accuracy> {
        let correct = self.correctness(set)?;
        let mut hit = [0usize; 3];
        let mut all = [0usize; 3];
        for (tys, c) in set.types.iter().zip(&correct) {
            for (&t, &ok) in tys.iter().zip(c) {
                let i = (t as usize).clamp(1, 3) - 1;
                all[i] += 1;
                hit[i] += ok as usize;
            }
        }
        let frac = |i: usize| (all[i] > 0).then(|| hit[i] as f64 / all[i] as f64);
        let total: usize = all.iter().sum();
        let n12 = all[0] + all[1];
        Ok(Accuracy {
            type1: frac(0),
            type2: frac(1),
            type3: frac(2),
            type12: (n12 > 0).then(|| (hit[0] + hit[1]) as f64 / n12 as f64),
            overall: if total == 0 { 0.0 } else { hit.iter().sum::<usize>() as f64 / total as f64 },
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::to_value(Meta {
            config: self.config.clone(),
            zones: self.zones(),
            max_flow: self.max_flow,
        })?;
        // The stored layer list is the conv stack followed by the dense stack.
        let mut layers = self.net.conv.layers().to_vec();
        layers.extend(self.net.dense.layers().iter().cloned());
        Checkpoint::from_layers(CHECKPOINT_KIND, &layers, &self.params, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = serde_json::from_value(ck.metadata.clone())?;
        let net = SelectorNet::new(&meta.config, meta.zones)?;
        let params = ck.params()?;
        if !net.zeros().same_shape(&params) {
            return Err(Error::Shape("selector checkpoint does not match its configuration".into()));
        }
        Ok(Self {
            config: meta.config,
            net,
            params,
            max_flow: meta.max_flow,
        })
    }
}

/// Per-step choice flags, `step,zone,choice`.
pub fn write_choices_csv(path: &Path, choices: &[(u64, Vec<Choice>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "zone", "choice"])?;
    for (step, flags) in choices {
        for (z, c) in flags.iter().enumerate() {
            let c = match c {
                Choice::Raw => "raw",
                Choice::Predicted => "predicted",
            };
            w.write_record([step.to_string(), z.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
