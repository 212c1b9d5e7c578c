//! Model-assisted learning for the temperature predictor: random batches
//! rolled out with the abstract model, masked-state self-supervised
//! pretraining, the redirected-update outer loop, and the ablation
//! baselines.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::abstract_model::AbstractModel;
use crate::error::{Error, Result};
use crate::history::{normalize_temp, stack, HistoryStep, HistoryWindow};
use crate::nn::{fit, loss_and_gradient, AdamState, Architecture, Dataset, FitConfig, Loss, ParamSet};
use crate::plant::{PlantParams, T_OUT_MAX, T_OUT_MIN};
use crate::predictor::{Predictor, PredictorConfig};
use crate::rng::{derive_seed, seeded};

/// Sanity clamp on rolled-out indoor temperatures, °C.
pub const ROLLOUT_CLAMP_C: (f64, f64) = (0.0, 50.0);
/// Indoor range of space H, °C.
pub const INDOOR_RANGE_C: (f64, f64) = (10.0, 40.0);

/// Sign of the outer update `Φ ← Φ + sign·η₁(Θ′ − Φ)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuDirection {
    /// Move towards the fine-tuned weights.
    #[default]
    Toward,
    /// `Φ ← Φ − η₁(Θ′ − Φ)`, as the update is printed.
    Away,
}

impl RuDirection {
    pub fn sign(self) -> f64 {
        match self {
            RuDirection::Toward => 1.0,
            RuDirection::Away => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MalConfig {
    /// Outer redirected-update step.
    pub eta1: f64,
    /// Plain gradient step on each random batch.
    pub eta2: f64,
    /// Fine-tuning step size on labeled data.
    pub eta3: f64,
    /// Self-supervised learning rate.
    pub eta0: f64,
    pub batch: usize,
    pub ssl_epochs: usize,
    pub task_epochs: usize,
    pub finetune_epochs: usize,
    /// Batch size of the labeled fine-tuning passes.
    pub finetune_batch: usize,
    pub iterations: usize,
    /// Raw °C written over the masked indoor temperatures.
    pub mask_value_c: f64,
    pub direction: RuDirection,
    /// Sequences drawn once for the self-supervised tasks.
    pub ssl_sequences: usize,
    /// Predictor layers shared across the self-supervised tasks.
    pub shared_layers: usize,
    pub head_width: usize,
    /// Largest ambient change per control step in rollouts, °C; each step
    /// draws uniformly within `±ambient_step_c`. Zero holds the ambient fixed.
    pub ambient_step_c: f64,
}

impl Default for MalConfig {
    fn default() -> Self {
        Self {
            eta1: 1e-4,
            eta2: 1e-6,
            eta3: 1e-3,
            eta0: 1e-3,
            batch: 40,
            ssl_epochs: 2,
            task_epochs: 3,
            finetune_epochs: 3,
            finetune_batch: 32,
            iterations: 1000,
            mask_value_c: -1.0,
            direction: RuDirection::Toward,
            ssl_sequences: 1000,
            shared_layers: 3,
            head_width: 128,
            ambient_step_c: 0.5,
        }
    }
}

impl MalConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.eta0, self.eta1, self.eta2, self.eta3].iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("MAL learning rates must be positive".into()));
        }
        if !(self.ambient_step_c >= 0.0) {
            return Err(Error::Config("ambient step must be non-negative".into()));
        }
        if self.batch == 0 || self.finetune_batch == 0 || self.head_width == 0 || self.shared_layers == 0 {
            return Err(Error::Config("MAL batch sizes, head width and shared layers must be positive".into()));
        }
        Ok(())
    }

    fn finetune(&self) -> FitConfig {
        FitConfig {
            lr: self.eta3,
            batch_size: self.finetune_batch,
            epochs: self.finetune_epochs,
        }
    }
}

/// Sequences from space H with the abstract model's next-step labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomBatch {
    pub windows: Vec<HistoryWindow>,
    /// Indoor temperature per zone one control step after each window, °C.
    pub labels: Vec<Vec<f64>>,
}

impl RandomBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn to_dataset(&self, max_flow: f64, offset_c: f64) -> Result<Dataset> {
        let x: Vec<Vec<f64>> = self.windows.iter().map(|w| w.flatten(max_flow)).collect();
        let y: Vec<Vec<f64>> = self
            .labels
            .iter()
            .map(|l| l.iter().map(|t| t - offset_c).collect())
            .collect();
        Dataset::new(stack(&x)?, stack(&y)?)
    }
}

/// `size` sequences of length `window`: the first state uniform over its
/// physical ranges, the rest rolled forward by `model` under uniformly drawn
/// flow levels while the ambient temperature takes bounded random steps.
pub fn sample_batch<R: Rng + ?Sized>(
    model: &AbstractModel,
    plant: &PlantParams,
    window: usize,
    size: usize,
    ambient_step_c: f64,
    rng: &mut R,
) -> Result<RandomBatch> {
    let n = plant.zones();
    if model.zones() != n {
        return Err(Error::Config(format!(
            "abstract model has {} zones, plant has {n}",
            model.zones()
        )));
    }
    if window == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let period = plant.control_period_minutes();
    let levels = plant.levels();
    let mut windows = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    for _ in 0..size {
        let mut minute = rng.random_range(0..1440u32);
        let mut t_out = rng.random_range(T_OUT_MIN..=T_OUT_MAX);
        let mut t_in: Vec<f64> = (0..n).map(|_| rng.random_range(INDOOR_RANGE_C.0..=INDOOR_RANGE_C.1)).collect();
        let mut steps = Vec::with_capacity(window);
        for j in 0..window {
            let flow: Vec<f64> = (0..n).map(|_| plant.flow(rng.random_range(0..levels))).collect();
            let t_out_next = if ambient_step_c > 0.0 {
                (t_out + rng.random_range(-ambient_step_c..=ambient_step_c)).clamp(T_OUT_MIN, T_OUT_MAX)
            } else {
                t_out
            };
            let next = rollout_step(model, &t_in, &flow, t_out_next);
            steps.push(HistoryStep {
                minute,
                t_in: std::mem::replace(&mut t_in, next),
                t_out: std::mem::replace(&mut t_out, t_out_next),
                flow,
            });
            minute = (minute + period) % 1440;
            if j + 1 == window {
                labels.push(t_in.clone());
            }
        }
        windows.push(HistoryWindow::new(steps)?);
    }
    Ok(RandomBatch { windows, labels })
}

fn rollout_step(model: &AbstractModel, t_in: &[f64], flow: &[f64], t_out: f64) -> Vec<f64> {
    (0..t_in.len())
        .map(|z| {
            model
                .predict_base(z, t_in[z], flow[z], t_out)
                .clamp(ROLLOUT_CLAMP_C.0, ROLLOUT_CLAMP_C.1)
        })
        .collect()
}

/// The `k` self-supervised variants of one sequence: variant `i` has every
/// zone's indoor temperature at step `i` replaced by the mask value and is
/// labelled with the replaced temperatures.
pub fn masked_variants(window: &HistoryWindow, mask_value_c: f64) -> Vec<(HistoryWindow, Vec<f64>)> {
    (0..window.len()).map(|i| masked_variant(window, i, mask_value_c)).collect()
}

fn masked_variant(window: &HistoryWindow, i: usize, mask_value_c: f64) -> (HistoryWindow, Vec<f64>) {
    let mut w = window.clone();
    let step = &mut w.steps_mut()[i];
    let label = std::mem::replace(&mut step.t_in, vec![mask_value_c; window.zones()]);
    (w, label)
}

/// Trunk-plus-head network used by one self-supervised task.
fn task_architecture(trunk: &Architecture, config: &MalConfig, zones: usize) -> Result<Architecture> {
    let mut widths: Vec<usize> = vec![trunk.input_size()];
    widths.extend(trunk.layers().iter().map(|l| l.output_size));
    widths.push(config.head_width);
    widths.push(zones);
    Architecture::mlp(&widths, crate::nn::Activation::Identity)
}

/// Self-supervised pretraining. Returns predictor-shaped weights whose first
/// `shared_layers` layers come from the tasks and the rest are freshly
/// initialized.
pub fn ssl_pretrain(
    shape: &PredictorConfig,
    model: &AbstractModel,
    plant: &PlantParams,
    config: &MalConfig,
    seed: u64,
) -> Result<ParamSet> {
    config.validate()?;
    let n = plant.zones();
    let arch = shape.architecture(n)?;
    if config.shared_layers >= arch.layers().len() {
        return Err(Error::Config(format!(
            "cannot share {} of the predictor's {} layers",
            config.shared_layers,
            arch.layers().len()
        )));
    }
    let mut rng = seeded(derive_seed(seed, "mal-ssl"));
    let init = arch.init(&mut seeded(derive_seed(seed, "mal-ssl-init")));
    let trunk_arch = Architecture::new(arch.layers()[..config.shared_layers].to_vec())?;
    let mut trunk: Vec<_> = init.layers()[..config.shared_layers].to_vec();
    let task_arch = task_architecture(&trunk_arch, config, n)?;

    let batch = sample_batch(model, plant, shape.window, config.ssl_sequences, config.ambient_step_c, &mut rng)?;
    let max_flow = plant.max_flow();
    let tasks: Vec<Dataset> = (0..shape.window)
        .map(|i| {
            let mut x = Vec::with_capacity(batch.len());
            let mut y = Vec::with_capacity(batch.len());
            for w in &batch.windows {
                let (masked, label) = masked_variant(w, i, config.mask_value_c);
                x.push(masked.flatten(max_flow));
                y.push(label.iter().map(|t| t - shape.offset_c).collect::<Vec<f64>>());
            }
            Dataset::new(stack(&x)?, stack(&y)?)
        })
        .collect::<Result<_>>()?;

    let mut heads: Vec<Vec<_>> = (0..shape.window)
        .map(|i| {
            let fresh = task_arch.init(&mut seeded(derive_seed(seed, &format!("mal-ssl-head-{i}"))));
            fresh.into_layers()[config.shared_layers..].to_vec()
        })
        .collect();
    let fit_cfg = FitConfig {
        lr: config.eta0,
        batch_size: config.batch,
        epochs: config.task_epochs,
    };
    for _ in 0..config.ssl_epochs {
        for (i, data) in tasks.iter().enumerate() {
            let mut layers = trunk.clone();
            layers.extend(heads[i].iter().cloned());
            let mut params = ParamSet::new(layers);
            let mut adam = AdamState::new(&params);
            fit(&task_arch, &mut params, &mut adam, data, Loss::Mse, fit_cfg, "mal-ssl", &mut rng)?;
            let mut layers = params.into_layers();
            heads[i] = layers.split_off(config.shared_layers);
            trunk = layers;
        }
    }
    let mut out = trunk;
    out.extend(init.into_layers().into_iter().skip(config.shared_layers));
    Ok(ParamSet::new(out))
}

/// `l_ft` epochs of Adam on the labeled set.
pub fn finetune(arch: &Architecture, params: &mut ParamSet, labeled: &Dataset, config: &MalConfig, rng: &mut impl Rng) -> Result<()> {
    let mut adam = AdamState::new(params);
    fit(arch, params, &mut adam, labeled, Loss::Mse, config.finetune(), "mal-finetune", rng)?;
    Ok(())
}

/// Redirected-update outer loop from `phi0`, then the final fine-tune.
#[allow(clippy::too_many_arguments)]
pub fn ru_loop(
    shape: &PredictorConfig,
    phi0: ParamSet,
    model: &AbstractModel,
    plant: &PlantParams,
    labeled: &Dataset,
    config: &MalConfig,
    seed: u64,
) -> Result<ParamSet> {
    config.validate()?;
    let arch = shape.architecture(plant.zones())?;
    if !arch.zeros().same_shape(&phi0) {
        return Err(Error::Shape("initial weights do not match the predictor layers".into()));
    }
    let mut rng = seeded(derive_seed(seed, "mal-ru"));
    let max_flow = plant.max_flow();
    let step = config.direction.sign() * config.eta1;
    let mut phi = phi0;
    for i in 0..config.iterations {
        let batch = sample_batch(model, plant, shape.window, config.batch, config.ambient_step_c, &mut rng)?.to_dataset(max_flow, shape.offset_c)?;
        let (_, grad) = loss_and_gradient(&arch, &phi, batch.inputs.view(), Loss::Mse, batch.targets.view(), None)?;
        let mut theta = phi.clone();
        theta.axpy(-config.eta2, &grad)?;
        finetune(&arch, &mut theta, labeled, config, &mut rng)
            .map_err(|e| Error::training("mal-ru", format!("iteration {i}"), e.to_string()))?;
        phi = outer_update(&phi, &theta, step)?;
        if !phi.is_finite() {
            return Err(Error::training("mal-ru", format!("iteration {i}"), "non-finite parameters"));
        }
    }
    finetune(&arch, &mut phi, labeled, config, &mut rng)?;
    Ok(phi)
}

/// `Φ + step·(Θ′ − Φ)`.
pub fn outer_update(phi: &ParamSet, theta_prime: &ParamSet, step: f64) -> Result<ParamSet> {
    let mut out = phi.clone();
    out.axpy(step, &theta_prime.try_sub(phi)?)?;
    Ok(out)
}

/// Ablation strategies, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    LabeledOnly,
    DistillFinetune,
    SslOnly,
    RuOnly,
    Mal,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::LabeledOnly,
        Strategy::DistillFinetune,
        Strategy::SslOnly,
        Strategy::RuOnly,
        Strategy::Mal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LabeledOnly => "labeled-only",
            Strategy::DistillFinetune => "distill+finetune",
            Strategy::SslOnly => "ssl-only",
            Strategy::RuOnly => "ru-only",
            Strategy::Mal => "mal",
        }
    }
}

/// Fine-tune from random weights; shares its schedule with every other
/// strategy's final stage.
pub fn baseline_labeled_only(shape: &PredictorConfig, plant: &PlantParams, labeled: &Dataset, config: &MalConfig, seed: u64) -> Result<ParamSet> {
    let arch = shape.architecture(plant.zones())?;
    let mut params = random_init(&arch, seed);
    finetune(&arch, &mut params, labeled, config, &mut seeded(derive_seed(seed, "mal-labeled")))?;
    Ok(params)
}

/// `iterations` plain gradient steps on fresh random batches, then the
/// labeled fine-tune.
pub fn baseline_distill_finetune(
    shape: &PredictorConfig,
    model: &AbstractModel,
    plant: &PlantParams,
    labeled: &Dataset,
    config: &MalConfig,
    seed: u64,
) -> Result<ParamSet> {
    let arch = shape.architecture(plant.zones())?;
    let mut params = random_init(&arch, seed);
    let mut rng = seeded(derive_seed(seed, "mal-distill"));
    for i in 0..config.iterations {
        let batch = sample_batch(model, plant, shape.window, config.batch, config.ambient_step_c, &mut rng)?.to_dataset(plant.max_flow(), shape.offset_c)?;
        let (_, grad) = loss_and_gradient(&arch, &params, batch.inputs.view(), Loss::Mse, batch.targets.view(), None)?;
        params.axpy(-config.eta2, &grad)?;
        if !params.is_finite() {
            return Err(Error::training("mal-distill", format!("iteration {i}"), "non-finite parameters"));
        }
    }
    finetune(&arch, &mut params, labeled, config, &mut seeded(derive_seed(seed, "mal-labeled")))?;
    Ok(params)
}

fn random_init(arch: &Architecture, seed: u64) -> ParamSet {
    arch.init(&mut seeded(derive_seed(seed, "mal-init")))
}

/// Train one strategy end to end and wrap the result as a predictor.
pub fn train_strategy(
    strategy: Strategy,
    shape: &PredictorConfig,
    model: &AbstractModel,
    plant: &PlantParams,
    labeled: &Dataset,
    config: &MalConfig,
    seed: u64,
) -> Result<Predictor> {
    let arch = shape.architecture(plant.zones())?;
    let params = match strategy {
        Strategy::LabeledOnly => baseline_labeled_only(shape, plant, labeled, config, seed)?,
        Strategy::DistillFinetune => baseline_distill_finetune(shape, model, plant, labeled, config, seed)?,
        Strategy::SslOnly => {
            let mut phi = ssl_pretrain(shape, model, plant, config, seed)?;
            finetune(&arch, &mut phi, labeled, config, &mut seeded(derive_seed(seed, "mal-labeled")))?;
            phi
        }
        Strategy::RuOnly => ru_loop(shape, random_init(&arch, seed), model, plant, labeled, config, seed)?,
        Strategy::Mal => {
            let phi = ssl_pretrain(shape, model, plant, config, seed)?;
            ru_loop(shape, phi, model, plant, labeled, config, seed)?
        }
    };
    Predictor::new(shape.clone(), plant.zones(), plant.max_flow(), params)
}

/// One ablation cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub strategy: Strategy,
    pub samples: usize,
    pub seed: u64,
    pub rmse: f64,
}

/// Table with one row per strategy and one column per data amount; each cell
/// is the median RMSE over the seeds present.
pub fn write_ablation_csv(path: &Path, cells: &[AblationCell]) -> Result<()> {
    let mut sizes: Vec<usize> = cells.iter().map(|c| c.samples).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["strategy".to_string()];
    header.extend(sizes.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for strategy in Strategy::ALL {
        if !cells.iter().any(|c| c.strategy == strategy) {
            continue;
        }
        let mut row = vec![strategy.name().to_string()];
        for &size in &sizes {
            row.push(match median_rmse(cells, strategy, size) {
                Some(v) => format!("{v:.6}"),
                None => String::new(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Median RMSE of a strategy at one data amount across seeds.
pub fn median_rmse(cells: &[AblationCell], strategy: Strategy, samples: usize) -> Option<f64> {
    let mut v: Vec<f64> = cells
        .iter()
        .filter(|c| c.strategy == strategy && c.samples == samples)
        .map(|c| c.rmse)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Normalized value the mask takes inside a network input.
pub fn mask_feature(mask_value_c: f64) -> f64 {
    normalize_temp(mask_value_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstract_model::{ModelOptions, ZoneCoefficients};
    use crate::history::HistoryWindow;

    fn toy_model(zones: usize) -> AbstractModel {
        AbstractModel::new(
            vec![
                ZoneCoefficients {
                    alpha: 0.9,
                    beta: -4.0,
                    gamma: 0.1,
                };
                zones
            ],
            ModelOptions::default(),
        )
    }

    fn small_shape(window: usize) -> PredictorConfig {
        PredictorConfig {
            hidden: vec![16, 16, 16, 8],
            window,
            ..PredictorConfig::default()
        }
    }

    #[test]
    fn length_one_sequences_are_single_uniform_states() {
        let plant = PlantParams::four_zone();
        let mut rng = seeded(1);
        let b = sample_batch(&toy_model(4), &plant, 1, 50, 0.0, &mut rng).unwrap();
        assert_eq!(b.len(), 50);
        for (w, y) in b.windows.iter().zip(&b.labels) {
            assert_eq!(w.len(), 1);
            let s = &w.steps()[0];
            assert!(s.t_in.iter().all(|t| (10.0..=40.0).contains(t)));
            // Label is one model step from the sampled state.
            let expect = rollout_step(&toy_model(4), &s.t_in, &s.flow, s.t_out);
            assert_eq!(y, &expect);
        }
    }

    #[test]
    fn rollouts_stay_finite_and_clamped() {
        let plant = PlantParams::four_zone();
        let wild = AbstractModel::new(
            vec![
                ZoneCoefficients {
                    alpha: 1.5,
                    beta: -50.0,
                    gamma: 0.5,
                };
                4
            ],
            ModelOptions::default(),
        );
        let b = sample_batch(&wild, &plant, 20, 30, 0.5, &mut seeded(2)).unwrap();
        for w in &b.windows {
            for s in w.steps() {
                assert!(s.t_in.iter().all(|t| t.is_finite() && (0.0..=50.0).contains(t)));
                assert!(s.flow.iter().all(|f| plant.flow_levels_kg_s.contains(f)));
            }
        }
    }

    #[test]
    fn first_state_ambient_is_uniform() {
        let plant = PlantParams::single_zone();
        let b = sample_batch(&toy_model(1), &plant, 1, 100_000, 0.5, &mut seeded(3)).unwrap();
        let bins = 10;
        let mut counts = vec![0usize; bins];
        for w in &b.windows {
            let t = w.steps()[0].t_out;
            let i = (((t - 10.0) / 30.0) * bins as f64).floor().min(bins as f64 - 1.0) as usize;
            counts[i] += 1;
        }
        let expect = 100_000.0 / bins as f64;
        let sigma = (100_000.0 * 0.1 * 0.9f64).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn masked_variants_hide_one_step_each() {
        let plant = PlantParams::four_zone();
        let b = sample_batch(&toy_model(4), &plant, 6, 1, 0.5, &mut seeded(4)).unwrap();
        let w: &HistoryWindow = &b.windows[0];
        let variants = masked_variants(w, -1.0);
        assert_eq!(variants.len(), 6);
        for (i, (m, label)) in variants.iter().enumerate() {
            assert_eq!(label, &w.steps()[i].t_in);
            assert!(m.steps()[i].t_in.iter().all(|&t| t == -1.0));
            for j in (0..6).filter(|&j| j != i) {
                assert_eq!(m.steps()[j], w.steps()[j]);
            }
        }
        let distinct: std::collections::HashSet<String> =
            variants.iter().map(|(m, _)| format!("{:?}", m.flatten(0.35))).collect();
        assert_eq!(distinct.len(), 6);
        assert!((mask_feature(-1.0) + 2.3).abs() < 1e-12);
    }

    fn labeled(plant: &PlantParams, window: usize, n: usize, seed: u64) -> Dataset {
        // Labels from a model slightly different from the abstract one.
        let truth = AbstractModel::new(
            vec![
                ZoneCoefficients {
                    alpha: 0.88,
                    beta: -3.5,
                    gamma: 0.12,
                };
                plant.zones()
            ],
            ModelOptions::default(),
        );
        sample_batch(&truth, plant, window, n, 0.5, &mut seeded(seed))
            .unwrap()
            .to_dataset(plant.max_flow(), 22.0)
            .unwrap()
    }

    #[test]
    fn outer_update_fixed_points() {
        let arch = small_shape(3).architecture(1).unwrap();
        let phi = arch.init(&mut seeded(5));
        let theta = arch.init(&mut seeded(6));
        assert_eq!(outer_update(&phi, &theta, 0.0).unwrap(), phi);
        assert_eq!(outer_update(&phi, &phi, 0.3).unwrap(), phi);
        assert!(outer_update(&phi, &theta, 1.0).unwrap().max_abs_diff(&theta).unwrap() < 1e-15);
    }

    #[test]
    fn zero_iterations_equal_plain_finetune() {
        let plant = PlantParams::single_zone();
        let shape = small_shape(3);
        let data = labeled(&plant, 3, 40, 9);
        let arch = shape.architecture(1).unwrap();
        let phi0 = arch.init(&mut seeded(5));
        let cfg = MalConfig {
            iterations: 0,
            finetune_epochs: 2,
            ..MalConfig::default()
        };
        let out = ru_loop(&shape, phi0.clone(), &toy_model(1), &plant, &data, &cfg, 2).unwrap();
        let mut direct = phi0;
        finetune(&arch, &mut direct, &data, &cfg, &mut seeded(derive_seed(2, "mal-ru"))).unwrap();
        assert_eq!(out, direct);
    }

    #[test]
    fn distill_without_iterations_is_labeled_only() {
        let plant = PlantParams::single_zone();
        let shape = small_shape(3);
        let data = labeled(&plant, 3, 40, 9);
        let cfg = MalConfig {
            iterations: 0,
            ..MalConfig::default()
        };
        let a = baseline_distill_finetune(&shape, &toy_model(1), &plant, &data, &cfg, 4).unwrap();
        let b = baseline_labeled_only(&shape, &plant, &data, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ssl_keeps_the_predictor_shape() {
        let plant = PlantParams::single_zone();
        let shape = small_shape(4);
        let cfg = MalConfig {
            ssl_sequences: 20,
            ssl_epochs: 1,
            task_epochs: 1,
            head_width: 8,
            ..MalConfig::default()
        };
        let phi = ssl_pretrain(&shape, &toy_model(1), &plant, &cfg, 3).unwrap();
        let arch = shape.architecture(1).unwrap();
        assert!(arch.zeros().same_shape(&phi));
        // Layers past the trunk are the untouched fresh initialization.
        let fresh = arch.init(&mut seeded(derive_seed(3, "mal-ssl-init")));
        assert_ne!(phi.layers()[0], fresh.layers()[0]);
        assert_eq!(phi.layers()[3..], fresh.layers()[3..]);
        let too_many = MalConfig {
            shared_layers: 5,
            ..cfg
        };
        assert!(matches!(ssl_pretrain(&shape, &toy_model(1), &plant, &too_many, 3), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_csv_has_strategy_rows_and_size_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablation.csv");
        let mut cells = Vec::new();
        for (seed, v) in [(1, 0.3), (2, 0.1), (3, 0.2)] {
            cells.push(AblationCell {
                strategy: Strategy::Mal,
                samples: 360,
                seed,
                rmse: v,
            });
            cells.push(AblationCell {
                strategy: Strategy::LabeledOnly,
                samples: 720,
                seed,
                rmse: v * 2.0,
            });
        }
        write_ablation_csv(&path, &cells).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "strategy,360,720");
        assert_eq!(lines[1], "labeled-only,,0.400000");
        assert_eq!(lines[2], "mal,0.200000,");
    }
}
