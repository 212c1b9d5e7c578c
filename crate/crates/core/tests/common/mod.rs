//! Shared helpers for the integration tests.
#![allow(dead_code)]

use hvacft_core::controller::QNetwork;
use hvacft_core::nn::{loss_and_gradient, Architecture, Loss, ParamSet};
use hvacft_core::predictor::PredictorConfig;
use hvacft_core::selector::{SelectorConfig, SelectorNet};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub const FD_STEP: f64 = 1e-5;

/// Outcome of a finite-difference comparison.
#[derive(Debug)]
pub struct FdReport {
    /// Largest relative error over the smooth coordinates.
    pub max_rel_error: f64,
    /// Coordinates where the two one-sided slopes disagree, so the loss has
    /// a ReLU kink inside the probe interval and no derivative to compare.
    pub kinks: usize,
    pub coordinates: usize,
}

/// Compare `analytic` with central finite differences of `loss` over every
/// parameter coordinate. The denominator is floored at `floor` so
/// coordinates with (near-)zero gradient compare absolutely.
pub fn fd_check(params: &ParamSet, analytic: &ParamSet, floor: f64, loss: impl Fn(&ParamSet) -> f64) -> FdReport {
    let base = loss(params);
    let mut probe = params.clone();
    let mut report = FdReport { max_rel_error: 0.0, kinks: 0, coordinates: 0 };
    let mut visit = |probe: &mut ParamSet, get: &dyn Fn(&mut ParamSet) -> &mut f64, a: f64| {
        let x0 = *get(probe);
        *get(probe) = x0 + FD_STEP;
        let up = loss(probe);
        *get(probe) = x0 - FD_STEP;
        let down = loss(probe);
        *get(probe) = x0;
        let (fwd, bwd) = ((up - base) / FD_STEP, (base - down) / FD_STEP);
        report.coordinates += 1;
        if (fwd - bwd).abs() > 0.1 * fwd.abs().max(bwd.abs()).max(floor) {
            report.kinks += 1;
            return;
        }
        let num = (up - down) / (2.0 * FD_STEP);
        report.max_rel_error = report.max_rel_error.max((a - num).abs() / a.abs().max(num.abs()).max(floor));
    };
    for l in 0..params.layers().len() {
        let (rows, cols) = params.layers()[l].weight.dim();
        for i in 0..rows {
            for j in 0..cols {
                let a = analytic.layers()[l].weight[[i, j]];
                visit(&mut probe, &|p| &mut p.layers_mut()[l].weight[[i, j]], a);
            }
        }
        for i in 0..params.layers()[l].bias.len() {
            let a = analytic.layers()[l].bias[i];
            visit(&mut probe, &|p| &mut p.layers_mut()[l].bias[i], a);
        }
    }
    report
}

/// Zero-initialised biases put units from a dead layer exactly on the ReLU
/// kink, where finite differences are one-sided. Random biases move every
/// pre-activation off it.
pub fn jitter_biases(params: &mut ParamSet, r: &mut impl Rng) {
    for l in params.layers_mut() {
        l.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

/// Random one-hot pairs per zone, as selector targets.
pub fn pair_targets(rows: usize, zones: usize, r: &mut impl Rng) -> Array2<f64> {
    let mut t = Array2::zeros((rows, 2 * zones));
    for i in 0..rows {
        for z in 0..zones {
            t[[i, 2 * z + r.random_range(0..2)]] = 1.0;
        }
    }
    t
}

/// Floor on the denominator of the relative error.
pub const FD_FLOOR: f64 = 1e-4;

/// One of 20 gradient checks per architecture family; returns the report
/// and the parameter count of the sampled net.
pub fn predictor_check(seed: u64) -> (FdReport, usize) {
    let mut r = rng(seed);
    let zones = if seed % 2 == 0 { 1 } else { 4 };
    let window = r.random_range(2..=3);
    let hidden: Vec<usize> = (0..5).map(|_| r.random_range(2..=5)).collect();
    let cfg = PredictorConfig { hidden, window, ..PredictorConfig::default() };
    let arch = cfg.architecture(zones).unwrap();
    mse_check(&arch, zones, Loss::Mse, None, &mut r)
}

pub fn dqn_check(seed: u64) -> (FdReport, usize) {
    let mut r = rng(seed);
    let zones = if seed % 2 == 0 { 1 } else { 4 };
    let hidden: Vec<usize> = (0..4).map(|_| r.random_range(3..=6)).collect();
    let arch = QNetwork::architecture(&hidden, zones, 2).unwrap();
    let actions = arch.output_size();
    let batch = 4;
    let mut mask = Array2::zeros((batch, actions));
    for i in 0..batch {
        mask[[i, r.random_range(0..actions)]] = 1.0;
    }
    mse_check(&arch, actions, Loss::MaskedMse, Some(mask), &mut r)
}

fn mse_check(arch: &Architecture, outputs: usize, loss: Loss, mask: Option<Array2<f64>>, r: &mut ChaCha8Rng) -> (FdReport, usize) {
    let mut params = arch.init(r);
    jitter_biases(&mut params, r);
    let batch = mask.as_ref().map_or(3, |m| m.nrows());
    let x = random_matrix(batch, arch.input_size(), r);
    let t = random_matrix(batch, outputs, r);
    let m = mask.as_ref().map(|m| m.view());
    let (_, g) = loss_and_gradient(arch, &params, x.view(), loss, t.view(), m).unwrap();
    let err = fd_check(&params, &g, FD_FLOOR, |p| {
        loss_and_gradient(arch, p, x.view(), loss, t.view(), m).unwrap().0
    });
    (err, arch.num_params())
}

pub fn selector_check(seed: u64) -> (FdReport, usize) {
    let mut r = rng(seed);
    let zones = if seed % 2 == 0 { 1 } else { 4 };
    let depth = r.random_range(1..=2);
    let cfg = SelectorConfig {
        conv_channels: (0..depth).map(|_| r.random_range(2..=3)).collect(),
        kernel: 2,
        dense: (0..r.random_range(1..=3)).map(|_| r.random_range(3..=5)).collect(),
        window: 4,
        ..SelectorConfig::default()
    };
    let net = SelectorNet::new(&cfg, zones).unwrap();
    let mut params = net.init(&mut r);
    jitter_biases(&mut params, &mut r);
    let x = random_matrix(3, net.input_width(), &mut r);
    let t = pair_targets(3, zones, &mut r);
    let (_, g) = net.loss_and_gradient(&params, x.view(), t.view()).unwrap();
    let err = fd_check(&params, &g, FD_FLOOR, |p| net.loss_and_gradient(p, x.view(), t.view()).unwrap().0);
    (err, net.num_params())
}
