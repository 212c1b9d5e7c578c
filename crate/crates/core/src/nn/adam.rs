use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
/// Moments below this are flushed to zero; a unit whose gradient stays at
/// zero would otherwise decay into subnormals, which are ~20x slower.
const MOMENT_FLUSH: f64 = 1e-150;

/// First/second moment accumulators shaped like the optimised parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: ParamSet,
    pub second: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &ParamSet) -> Self {
        Self {
            first: like.zeros_like(),
            second: like.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ParamSet, grad: &ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_shape(grad) || !params.same_shape(&state.first) {
        return Err(Error::Shape("adam: gradient/state shape differs from parameters".into()));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric(format!(
            "adam: non-finite gradient at step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let layers = params
        .layers_mut()
        .iter_mut()
        .zip(grad.layers())
        .zip(state.first.layers_mut().iter_mut().zip(state.second.layers_mut()));
    for ((p, g), (m, v)) in layers {
        let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            if m.abs() < MOMENT_FLUSH {
                *m = 0.0;
            }
            if *v < MOMENT_FLUSH {
                *v = 0.0;
            }
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + ADAM_EPSILON);
        };
        Zip::from(&mut p.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(update);
        Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture};

    fn scalar(w: f64) -> (Architecture, ParamSet) {
        let arch = Architecture::mlp(&[1, 1], Activation::Identity).unwrap();
        let mut p = arch.zeros();
        p.layers_mut()[0].weight[[0, 0]] = w;
        (arch, p)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (_, mut p) = scalar(1.0);
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let (_, mut p) = scalar(1.0);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.layers_mut()[0].weight[[0, 0]] = 3.0;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = w^2, f'(1) = 2
        let (_, mut p) = scalar(1.0);
        let mut g = p.zeros_like();
        g.layers_mut()[0].weight[[0, 0]] = 2.0;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        let w = p.layers()[0].weight[[0, 0]];
        assert!(w < 1.0);
        assert!((w - 0.9).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let (_, mut p) = scalar(1.0);
        let mut g = p.zeros_like();
        g.layers_mut()[0].bias[0] = f64::NAN;
        let mut s = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut s, 0.1), Err(Error::Numeric(_))));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn step_counter_increases() {
        let (_, mut p) = scalar(0.5);
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        for i in 1..=4 {
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            assert_eq!(s.step, i);
        }
    }
}
