use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};

use super::{Activation, Architecture, LayerKind, LayerParams, LayerSpec, ParamSet};
use crate::error::{Error, Result};

/// Loss functions, all averaged over the batch and summed over output units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// `sum_j (y_j - t_j)^2`
    Mse,
    /// `-sum_j t_j ln p_j`; requires a softmax output layer.
    CrossEntropy,
    /// Squared error restricted to entries where the mask is non-zero.
    MaskedMse,
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Loss::Mse),
            "cross-entropy" | "cross_entropy" => Ok(Loss::CrossEntropy),
            "masked-mse" | "masked_mse" => Ok(Loss::MaskedMse),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[i]` is the input of layer `i`; the last entry is the network output.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Array2<f64>>,
    /// im2col patch matrices for conv layers.
    patches: Vec<Option<Array2<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace always holds the input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("trace always holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

pub fn forward(arch: &Architecture, params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(forward_batch(arch, params, x)?.into_raw_vec_and_offset().0)
}

pub fn forward_batch(arch: &Architecture, params: &ParamSet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(arch, params, &x)?;
    let mut cur = x.as_standard_layout().into_owned();
    for (spec, p) in arch.layers().iter().zip(params.layers()) {
        let (z, _) = layer_forward(spec, p, &cur, false);
        cur = z;
        activate_in_place(spec.activation, &mut cur);
    }
    Ok(cur)
}

pub fn forward_trace(arch: &Architecture, params: &ParamSet, x: ArrayView2<f64>) -> Result<Trace> {
    check_input(arch, params, &x)?;
    let n = arch.layers().len();
    let mut activations = Vec::with_capacity(n + 1);
    let mut pre = Vec::with_capacity(n);
    let mut patches = Vec::with_capacity(n);
    activations.push(x.as_standard_layout().into_owned());
    for (spec, p) in arch.layers().iter().zip(params.layers()) {
        let (z, patch) = layer_forward(spec, p, activations.last().unwrap(), true);
        let mut a = z.clone();
        activate_in_place(spec.activation, &mut a);
        pre.push(z);
        patches.push(patch);
        activations.push(a);
    }
    Ok(Trace {
        activations,
        pre,
        patches,
    })
}

fn check_input(arch: &Architecture, params: &ParamSet, x: &ArrayView2<f64>) -> Result<()> {
    arch.check_params(params)?;
    if x.ncols() != arch.input_size() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.ncols(),
            arch.input_size()
        )));
    }
    Ok(())
}

fn layer_forward(
    spec: &LayerSpec,
    p: &LayerParams,
    x: &Array2<f64>,
    keep_patches: bool,
) -> (Array2<f64>, Option<Array2<f64>>) {
    match spec.kind {
        LayerKind::Dense => {
            let mut z = x.dot(&p.weight.t());
            z += &p.bias;
            (z, None)
        }
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            length,
            kernel,
        } => {
            let out_len = length - kernel + 1;
            let patches = im2col(x, in_channels, length, kernel);
            let mut y = patches.dot(&p.weight.t());
            y += &p.bias;
            let z = rows_to_channel_major(&y, x.nrows(), out_channels, out_len);
            (z, keep_patches.then_some(patches))
        }
    }
}

/// `(B, C*L)` -> `(B*L_out, C*K)` where row `b*L_out + t`, column `c*K + j`
/// holds `x[b, c*L + t + j]`.
fn im2col(x: &Array2<f64>, channels: usize, length: usize, kernel: usize) -> Array2<f64> {
    let batch = x.nrows();
    let out_len = length - kernel + 1;
    let width = channels * kernel;
    let mut out = vec![0.0; batch * out_len * width];
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let row_len = channels * length;
    for b in 0..batch {
        let sample = &xs[b * row_len..(b + 1) * row_len];
        for t in 0..out_len {
            let row = &mut out[(b * out_len + t) * width..(b * out_len + t + 1) * width];
            for c in 0..channels {
                row[c * kernel..(c + 1) * kernel]
                    .copy_from_slice(&sample[c * length + t..c * length + t + kernel]);
            }
        }
    }
    Array2::from_shape_vec((batch * out_len, width), out).expect("sized above")
}

/// Inverse scatter of [`im2col`]: accumulates patch gradients back into `(B, C*L)`.
fn col2im(dp: &Array2<f64>, batch: usize, channels: usize, length: usize, kernel: usize) -> Array2<f64> {
    let out_len = length - kernel + 1;
    let width = channels * kernel;
    let row_len = channels * length;
    let mut out = vec![0.0; batch * row_len];
    let dp = dp.as_standard_layout();
    let ds = dp.as_slice().expect("standard layout");
    for b in 0..batch {
        let sample = &mut out[b * row_len..(b + 1) * row_len];
        for t in 0..out_len {
            let row = &ds[(b * out_len + t) * width..(b * out_len + t + 1) * width];
            for c in 0..channels {
                let dst = &mut sample[c * length + t..c * length + t + kernel];
                for (d, s) in dst.iter_mut().zip(&row[c * kernel..(c + 1) * kernel]) {
                    *d += s;
                }
            }
        }
    }
    Array2::from_shape_vec((batch, row_len), out).expect("sized above")
}

/// `(B*L_out, C_out)` -> `(B, C_out*L_out)`, channel-major per sample.
fn rows_to_channel_major(y: &Array2<f64>, batch: usize, channels: usize, out_len: usize) -> Array2<f64> {
    let mut z = Array2::zeros((batch, channels * out_len));
    for b in 0..batch {
        for t in 0..out_len {
            let src = y.row(b * out_len + t);
            for o in 0..channels {
                z[[b, o * out_len + t]] = src[o];
            }
        }
    }
    z
}

fn channel_major_to_rows(dz: &Array2<f64>, channels: usize, out_len: usize) -> Array2<f64> {
    let batch = dz.nrows();
    let mut y = Array2::zeros((batch * out_len, channels));
    for b in 0..batch {
        let src = dz.row(b);
        for t in 0..out_len {
            for o in 0..channels {
                y[[b * out_len + t, o]] = src[o * out_len + t];
            }
        }
    }
    y
}

fn activate_in_place(act: Activation, z: &mut Array2<f64>) {
    match act {
        Activation::Identity => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Softmax { group } => {
            for mut row in z.rows_mut() {
                for chunk in row.as_slice_mut().expect("row of standard array").chunks_mut(group) {
                    let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in chunk.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in chunk.iter_mut() {
                        *v /= sum;
                    }
                }
            }
        }
    }
}

fn log_softmax(z: &Array2<f64>, group: usize) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        for chunk in row.as_slice_mut().expect("row of standard array").chunks_mut(group) {
            let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + chunk.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in chunk.iter_mut() {
                *v -= lse;
            }
        }
    }
    out
}

/// Loss value and parameter gradient for a forward pass already held in `trace`.
///
/// `mask` is only consulted for [`Loss::MaskedMse`].
pub fn backward(
    arch: &Architecture,
    params: &ParamSet,
    trace: &Trace,
    loss: Loss,
    targets: ArrayView2<f64>,
    mask: Option<ArrayView2<f64>>,
) -> Result<(f64, ParamSet)> {
    let (value, grads, _) = backward_impl(arch, params, trace, loss, targets, mask, false)?;
    Ok((value, grads))
}

/// Like [`backward`], also returning the gradient w.r.t. the network input.
pub fn backward_with_input(
    arch: &Architecture,
    params: &ParamSet,
    trace: &Trace,
    loss: Loss,
    targets: ArrayView2<f64>,
    mask: Option<ArrayView2<f64>>,
) -> Result<(f64, ParamSet, Array2<f64>)> {
    let (value, grads, dx) = backward_impl(arch, params, trace, loss, targets, mask, true)?;
    Ok((value, grads, dx.expect("requested")))
}

fn backward_impl(
    arch: &Architecture,
    params: &ParamSet,
    trace: &Trace,
    loss: Loss,
    targets: ArrayView2<f64>,
    mask: Option<ArrayView2<f64>>,
    need_input_grad: bool,
) -> Result<(f64, ParamSet, Option<Array2<f64>>)> {
    arch.check_params(params)?;
    let out = trace.output();
    if targets.dim() != out.dim() {
        return Err(Error::Shape(format!(
            "targets {:?} do not match network output {:?}",
            targets.dim(),
            out.dim()
        )));
    }
    let batch = trace.batch_size() as f64;
    let layers = arch.layers();
    let last = layers.len() - 1;

    // Gradient w.r.t. the final pre-activation.
    let (value, dz) = match loss {
        Loss::Mse => {
            let diff = out - &targets;
            let value = diff.iter().map(|d| d * d).sum::<f64>() / batch;
            let dout = diff * (2.0 / batch);
            (value, activation_backward(layers[last].activation, &trace.pre[last], out, dout))
        }
        Loss::MaskedMse => {
            let mask = mask.ok_or_else(|| Error::Config("masked-mse needs a mask".into()))?;
            if mask.dim() != out.dim() {
                return Err(Error::Shape("mask does not match network output".into()));
            }
            let diff = (out - &targets) * &mask;
            let value = diff.iter().map(|d| d * d).sum::<f64>() / batch;
            let dout = diff * (2.0 / batch);
            (value, activation_backward(layers[last].activation, &trace.pre[last], out, dout))
        }
        Loss::CrossEntropy => {
            let Activation::Softmax { group } = layers[last].activation else {
                return Err(Error::Config(
                    "cross-entropy requires a softmax output layer".into(),
                ));
            };
            let logp = log_softmax(&trace.pre[last], group);
            let value = -(&logp * &targets).sum() / batch;
            // d/dz of -sum t ln softmax(z) = p * sum_group(t) - t
            let mut dz = out.to_owned();
            for ((mut drow, trow), prow) in dz.rows_mut().into_iter().zip(targets.rows()).zip(out.rows()) {
                let d = drow.as_slice_mut().expect("standard layout");
                let t: Vec<f64> = trow.iter().copied().collect();
                let p: Vec<f64> = prow.iter().copied().collect();
                for g in 0..d.len() / group {
                    let s: f64 = t[g * group..(g + 1) * group].iter().sum();
                    for j in g * group..(g + 1) * group {
                        d[j] = (p[j] * s - t[j]) / batch;
                    }
                }
            }
            (value, dz)
        }
    };

    let (grads, dx) = propagate(arch, params, trace, dz, need_input_grad);
    Ok((value, grads, dx))
}

/// Backward pass driven by an upstream gradient `dout` on the network output
/// (after the final activation). Returns the parameter gradient and the
/// gradient with respect to the network input.
pub fn backward_from_output(
    arch: &Architecture,
    params: &ParamSet,
    trace: &Trace,
    dout: Array2<f64>,
) -> Result<(ParamSet, Array2<f64>)> {
    arch.check_params(params)?;
    if dout.dim() != trace.output().dim() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match network output {:?}",
            dout.dim(),
            trace.output().dim()
        )));
    }
    let last = arch.layers().len() - 1;
    let dz = activation_backward(arch.layers()[last].activation, &trace.pre[last], trace.output(), dout);
    let (grads, dx) = propagate(arch, params, trace, dz, true);
    Ok((grads, dx.expect("requested")))
}

/// Gradient w.r.t. the input of the network, given `dz` on the last pre-activation.
fn propagate(
    arch: &Architecture,
    params: &ParamSet,
    trace: &Trace,
    mut dz: Array2<f64>,
    need_input_grad: bool,
) -> (ParamSet, Option<Array2<f64>>) {
    let layers = arch.layers();
    let mut grads: Vec<LayerParams> = Vec::with_capacity(layers.len());
    let mut input_grad = None;
    for i in (0..layers.len()).rev() {
        let spec = &layers[i];
        let p = &params.layers()[i];
        let input = &trace.activations[i];
        let (g, dx) = layer_backward(spec, p, input, trace.patches[i].as_ref(), &dz, i > 0 || need_input_grad);
        grads.push(g);
        if i > 0 {
            let dx = dx.expect("requested");
            dz = activation_backward(layers[i - 1].activation, &trace.pre[i - 1], &trace.activations[i], dx);
        } else {
            input_grad = dx;
        }
    }
    grads.reverse();
    (ParamSet::new(grads), input_grad)
}

fn activation_backward(act: Activation, _pre: &Array2<f64>, out: &Array2<f64>, mut dout: Array2<f64>) -> Array2<f64> {
    match act {
        Activation::Identity => dout,
        Activation::Relu => {
            ndarray::Zip::from(&mut dout).and(out).for_each(|d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            });
            dout
        }
        Activation::Softmax { group } => {
            // J^T v for each group: p * (v - <p, v>)
            for (mut drow, prow) in dout.rows_mut().into_iter().zip(out.rows()) {
                let d = drow.as_slice_mut().expect("standard layout");
                let p: Vec<f64> = prow.iter().copied().collect();
                for g in 0..d.len() / group {
                    let r = g * group..(g + 1) * group;
                    let inner: f64 = d[r.clone()].iter().zip(&p[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        d[j] = p[j] * (d[j] - inner);
                    }
                }
            }
            dout
        }
    }
}

fn layer_backward(
    spec: &LayerSpec,
    p: &LayerParams,
    input: &Array2<f64>,
    patches: Option<&Array2<f64>>,
    dz: &Array2<f64>,
    need_dx: bool,
) -> (LayerParams, Option<Array2<f64>>) {
    match spec.kind {
        LayerKind::Dense => {
            let weight = dz.t().dot(input);
            let bias = dz.sum_axis(Axis(0));
            let dx = need_dx.then(|| dz.dot(&p.weight));
            (LayerParams { weight, bias }, dx)
        }
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            length,
            kernel,
        } => {
            let out_len = length - kernel + 1;
            let owned;
            let patches = match patches {
                Some(p) => p,
                None => {
                    owned = im2col(input, in_channels, length, kernel);
                    &owned
                }
            };
            let dy = channel_major_to_rows(dz, out_channels, out_len);
            let weight = dy.t().dot(patches);
            let bias = dy.sum_axis(Axis(0));
            let dx = need_dx.then(|| {
                let dp = dy.dot(&p.weight);
                col2im(&dp, input.nrows(), in_channels, length, kernel)
            });
            (LayerParams { weight, bias }, dx)
        }
    }
}

/// Forward plus backward in one call.
pub fn loss_and_gradient(
    arch: &Architecture,
    params: &ParamSet,
    inputs: ArrayView2<f64>,
    loss: Loss,
    targets: ArrayView2<f64>,
    mask: Option<ArrayView2<f64>>,
) -> Result<(f64, ParamSet)> {
    let trace = forward_trace(arch, params, inputs)?;
    backward(arch, params, &trace, loss, targets, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_return_bias() {
        let arch = Architecture::mlp(&[3, 2], Activation::Identity).unwrap();
        let mut p = arch.zeros();
        p.layers_mut()[0].bias = array![0.5, -1.25];
        let y = forward(&arch, &p, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.25]);
    }

    #[test]
    fn equal_logits_softmax_is_uniform() {
        let arch = Architecture::mlp(&[2, 2], Activation::Softmax { group: 2 }).unwrap();
        let y = forward(&arch, &arch.zeros(), &[0.3, -0.7]).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let arch = Architecture::mlp(&[3, 2], Activation::Identity).unwrap();
        let err = forward(&arch, &arch.zeros(), &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn incompatible_layers_rejected() {
        let err = Architecture::new(vec![
            LayerSpec::dense(3, 4, Activation::Relu),
            LayerSpec::dense(5, 1, Activation::Identity),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn softmax_only_on_final_layer() {
        let err = Architecture::new(vec![
            LayerSpec::dense(3, 4, Activation::Softmax { group: 2 }),
            LayerSpec::dense(4, 1, Activation::Identity),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn unknown_loss_kind_is_config_error() {
        assert!(matches!("hinge".parse::<Loss>(), Err(Error::Config(_))));
        assert_eq!("masked-mse".parse::<Loss>().unwrap(), Loss::MaskedMse);
    }

    #[test]
    fn straight_line_reimplementation_matches() {
        let arch = Architecture::mlp(&[4, 6, 5, 3], Activation::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = arch.init(&mut rng);
        for l in p.layers_mut() {
            l.bias.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -0.5..0.5));
        }
        let x = [0.2, -1.0, 0.7, 1.5];
        let got = forward(&arch, &p, &x).unwrap();

        // Hand-written affine + ReLU chain.
        let mut h: Vec<f64> = x.to_vec();
        for (i, l) in p.layers().iter().enumerate() {
            let mut next = vec![0.0; l.bias.len()];
            for r in 0..l.bias.len() {
                let mut acc = l.bias[r];
                for c in 0..h.len() {
                    acc += l.weight[[r, c]] * h[c];
                }
                next[r] = if i + 1 < p.layers().len() { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let spec = LayerSpec::conv1d(2, 3, 5, 3, Activation::Identity);
        let arch = Architecture::new(vec![spec]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = arch.init(&mut rng);
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = forward(&arch, &p, &x).unwrap();
        let w = &p.layers()[0].weight;
        for o in 0..3 {
            for t in 0..3 {
                let mut acc = 0.0;
                for c in 0..2 {
                    for j in 0..3 {
                        acc += w[[o, c * 3 + j]] * x[c * 5 + t + j];
                    }
                }
                assert!((y[o * 3 + t] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gradient_of_final_bias_at_target() {
        let arch = Architecture::mlp(&[2, 3, 1], Activation::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = arch.init(&mut rng);
        let x = array![[0.4, -0.2]];
        let y = forward_batch(&arch, &p, x.view()).unwrap();
        let (value, g) = loss_and_gradient(&arch, &p, x.view(), Loss::Mse, y.view(), None).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(g.layers()[1].bias[0], 0.0);
    }

    #[test]
    fn scalar_dense_gradient_closed_form() {
        let arch = Architecture::mlp(&[1, 1], Activation::Identity).unwrap();
        let mut p = arch.zeros();
        let (w, b, x, y) = (0.7, -0.3, 1.9, 0.4);
        p.layers_mut()[0].weight[[0, 0]] = w;
        p.layers_mut()[0].bias[0] = b;
        let (_, g) =
            loss_and_gradient(&arch, &p, array![[x]].view(), Loss::Mse, array![[y]].view(), None).unwrap();
        let expected_w = 2.0 * (w * x + b - y) * x;
        let expected_b = 2.0 * (w * x + b - y);
        assert!((g.layers()[0].weight[[0, 0]] - expected_w).abs() < 1e-12);
        assert!((g.layers()[0].bias[0] - expected_b).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_needs_softmax() {
        let arch = Architecture::mlp(&[2, 2], Activation::Identity).unwrap();
        let err = loss_and_gradient(
            &arch,
            &arch.zeros(),
            array![[1.0, 0.0]].view(),
            Loss::CrossEntropy,
            array![[1.0, 0.0]].view(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
