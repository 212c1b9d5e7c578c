use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{adam_step, loss_and_gradient, AdamState, Architecture, Loss, ParamSet};
use crate::error::{Error, Result};

/// Supervised data: one sample per row.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub mask: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            mask: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
            mask: self.mask.as_ref().map(|m| m.select(Axis(0), rows)),
        }
    }

    /// First `n` rows (or all of them if shorter).
    pub fn head(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

/// Mini-batch Adam over shuffled epochs. Returns the mean loss of each epoch.
///
/// `stage` names the caller in divergence errors.
pub fn fit<R: Rng + ?Sized>(
    arch: &Architecture,
    params: &mut ParamSet,
    adam: &mut AdamState,
    data: &Dataset,
    loss: Loss,
    config: FitConfig,
    stage: &'static str,
    rng: &mut R,
) -> Result<Vec<f64>> {
    fit_with(params, adam, data, config, stage, rng, |p, x, t, m| {
        loss_and_gradient(arch, p, x, loss, t, m)
    })
}

/// [`fit`] for models that are not a plain layer chain: `grad` maps
/// `(params, inputs, targets, mask)` of one mini-batch to `(loss, gradient)`.
pub fn fit_with<R, G>(
    params: &mut ParamSet,
    adam: &mut AdamState,
    data: &Dataset,
    config: FitConfig,
    stage: &'static str,
    rng: &mut R,
    mut grad: G,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    G: FnMut(&ParamSet, ArrayView2<f64>, ArrayView2<f64>, Option<ArrayView2<f64>>) -> Result<(f64, ParamSet)>,
{
    if data.is_empty() {
        return Err(Error::Config(format!("{stage}: empty training set")));
    }
    let batch = config.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let x = data.inputs.select(Axis(0), chunk);
            let t = data.targets.select(Axis(0), chunk);
            let m = data.mask.as_ref().map(|m| m.select(Axis(0), chunk));
            let (value, g) = grad(params, x.view(), t.view(), m.as_ref().map(|m| m.view()))?;
            if !value.is_finite() {
                return Err(Error::training(stage, format!("epoch {epoch}"), "non-finite loss"));
            }
            adam_step(params, &g, adam, config.lr)
                .map_err(|e| Error::training(stage, format!("epoch {epoch}"), e.to_string()))?;
            total += value * chunk.len() as f64;
        }
        history.push(total / data.len() as f64);
    }
    Ok(history)
}
