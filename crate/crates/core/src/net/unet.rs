//! U-Net topology, parameter layout, forward pass and loss gradient.
//!
//! Layers are stored in a canonical order: for each encoder stage two 3x3
//! convolutions and a stride-2 3x3 convolution, then two bottleneck
//! convolutions, then for each decoder stage (coarsest first) a 2x2
//! transposed convolution followed by two 3x3 convolutions, then the 1x1
//! head. A network of depth `D` therefore has `6D + 3` weighted layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{conv_backward, conv_forward, convt_backward, convt_forward, relu_inplace, relu_mask, transposed_geom, ConvGeom};
use super::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Side length of the square input images.
    pub input_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub kernel: usize,
}

impl UNetConfig {
    pub fn new(input_size: usize, in_channels: usize, depth: usize, base_width: usize) -> Self {
        Self {
            input_size,
            in_channels,
            out_channels: 1,
            depth,
            base_width,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.depth == 0 || self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!("depth, widths and channel counts must be positive: {self:?}"));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel));
        }
        if self.depth >= usize::BITS as usize || self.input_size == 0 || !self.input_size.is_multiple_of(1 << self.depth) {
            return bad(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size, self.depth
            ));
        }
        Ok(())
    }

    pub fn weighted_layers(&self) -> usize {
        6 * self.depth + 3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Same-padded convolution, weight `[out, in, k, k]`.
    Conv { stride: usize },
    /// Unpadded transposed convolution, weight `[in, out, k, k]`.
    ConvTranspose { stride: usize },
}

/// Where a layer reads its input from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerInput {
    Network,
    Layer(usize),
    /// Channel concatenation of a skip layer and an upsampling layer, skip first.
    Concat(usize, usize),
}

/// One entry of the canonical layer manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub relu: bool,
    pub input: LayerInput,
    /// Resolution level of the layer input: the spatial size is `input / 2^level`.
    pub level: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv { .. } => [self.out_channels, self.in_channels, self.kernel, self.kernel],
            LayerKind::ConvTranspose { .. } => [self.in_channels, self.out_channels, self.kernel, self.kernel],
        }
    }

    /// Number of products that feed one output element.
    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { .. } => self.in_channels * self.kernel * self.kernel,
            LayerKind::ConvTranspose { stride } => {
                self.in_channels * (self.kernel * self.kernel / (stride * stride)).max(1)
            }
        }
    }

    fn geom(&self, h: usize, w: usize) -> Result<ConvGeom> {
        match self.kind {
            LayerKind::Conv { stride } => ConvGeom::new(
                self.in_channels,
                self.out_channels,
                self.kernel,
                stride,
                (self.kernel - 1) / 2,
                h,
                w,
            ),
            LayerKind::ConvTranspose { stride } => {
                transposed_geom(self.in_channels, self.out_channels, self.kernel, stride, h, w)
            }
        }
    }
}

fn manifest(cfg: &UNetConfig) -> Vec<LayerSpec> {
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(cfg.weighted_layers());
    let mut offset = 0;
    let mut push = |name: String, kind, cin, cout, kernel, relu, input, level| {
        let spec = LayerSpec {
            name,
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel,
            relu,
            input,
            level,
            weight_offset: offset,
            bias_offset: offset + cin * cout * kernel * kernel,
        };
        offset = spec.bias_offset + cout;
        layers.push(spec);
        layers.len() - 1
    };
    let (k, c0) = (cfg.kernel, cfg.base_width);
    let conv = LayerKind::Conv { stride: 1 };
    let mut prev = LayerInput::Network;
    let mut width = cfg.in_channels;
    let mut skips = Vec::with_capacity(cfg.depth);
    for s in 0..cfg.depth {
        let c = c0 << s;
        let a = push(format!("enc{s}.conv1"), conv, width, c, k, true, prev, s);
        let b = push(format!("enc{s}.conv2"), conv, c, c, k, true, LayerInput::Layer(a), s);
        skips.push(b);
        let d = push(format!("enc{s}.down"), LayerKind::Conv { stride: 2 }, c, 2 * c, k, true, LayerInput::Layer(b), s);
        prev = LayerInput::Layer(d);
        width = 2 * c;
    }
    let depth = cfg.depth;
    let m = push("mid.conv1".into(), conv, width, width, k, true, prev, depth);
    let m = push("mid.conv2".into(), conv, width, width, k, true, LayerInput::Layer(m), depth);
    prev = LayerInput::Layer(m);
    for s in (0..cfg.depth).rev() {
        let c = c0 << s;
        let up = push(format!("dec{s}.up"), LayerKind::ConvTranspose { stride: 2 }, 2 * c, c, 2, false, prev, s + 1);
        let a = push(format!("dec{s}.conv1"), conv, 2 * c, c, k, true, LayerInput::Concat(skips[s], up), s);
        let b = push(format!("dec{s}.conv2"), conv, c, c, k, true, LayerInput::Layer(a), s);
        prev = LayerInput::Layer(b);
    }
    push("head".into(), conv, c0, cfg.out_channels, 1, false, prev, 0);
    layers
}

/// Trainable parameters of a U-Net laid out as one flat vector in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    config: UNetConfig,
    layers: Vec<LayerSpec>,
    values: Vec<T>,
}

impl<T: Scalar> NetworkParams<T> {
    /// All-zero parameters with the layout of `cfg`.
    pub fn zeros(cfg: &UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = manifest(cfg);
        let len = layers.last().map_or(0, |l| l.bias_offset + l.out_channels);
        Ok(Self {
            config: cfg.clone(),
            layers,
            values: vec![T::zero(); len],
        })
    }

    pub fn from_values(cfg: &UNetConfig, values: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        if values.len() != p.values.len() {
            return Err(Error::InvalidShape(format!(
                "{} parameters supplied, layout needs {}",
                values.len(),
                p.values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        let l = &self.layers[layer];
        &self.values[l.weight_offset..l.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let l = &self.layers[layer];
        &self.values[l.bias_offset..l.bias_offset + l.out_channels]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [T] {
        let l = &self.layers[layer];
        &mut self.values[l.weight_offset..l.bias_offset]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let (o, n) = (self.layers[layer].bias_offset, self.layers[layer].out_channels);
        &mut self.values[o..o + n]
    }

    /// Sum of squared weights; biases are not penalized.
    pub fn weight_sq_sum(&self) -> f64 {
        (0..self.layers.len())
            .map(|l| self.weight(l).iter().map(|w| w.f64() * w.f64()).sum::<f64>())
            .sum()
    }

    /// Same layout with every value converted to another precision.
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config.clone(),
            layers: self.layers.clone(),
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// He-initialized U-Net: weights `N(0, sqrt(2 / fan_in))`, biases zero.
pub fn build_unet<T: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<NetworkParams<T>> {
    let mut p = NetworkParams::<T>::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..p.layers.len() {
        let std = (2.0 / p.layers[l].fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive deviation");
        for w in p.weight_mut(l) {
            *w = T::of(normal.sample(&mut rng));
        }
    }
    Ok(p)
}

/// Per-sample activations kept for the backward pass.
struct Trace<T> {
    outputs: Vec<Vec<T>>,
    concats: Vec<Option<Vec<T>>>,
}

fn check_input<T: Scalar>(p: &NetworkParams<T>, x: &Tensor<T>) -> Result<()> {
    let cfg = &p.config;
    let step = 1usize << cfg.depth;
    if x.channels() != cfg.in_channels || !x.height().is_multiple_of(step) || !x.width().is_multiple_of(step) || x.height() == 0 || x.width() == 0 {
        return Err(Error::InvalidShape(format!(
            "network expects {} channels and sides divisible by {step}, got {:?}",
            cfg.in_channels,
            x.shape()
        )));
    }
    Ok(())
}

fn forward_sample<T: Scalar>(p: &NetworkParams<T>, x: &[T], h: usize, w: usize) -> Result<Trace<T>> {
    let n = p.layers.len();
    let mut outputs: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut concats = Vec::with_capacity(n);
    for (l, spec) in p.layers.iter().enumerate() {
        let g = spec.geom(h >> spec.level, w >> spec.level)?;
        let (mut out, cat) = {
            let cat = match spec.input {
                LayerInput::Concat(a, b) => {
                    let mut v = Vec::with_capacity(outputs[a].len() + outputs[b].len());
                    v.extend_from_slice(&outputs[a]);
                    v.extend_from_slice(&outputs[b]);
                    Some(v)
                }
                _ => None,
            };
            let input: &[T] = match spec.input {
                LayerInput::Network => x,
                LayerInput::Layer(j) => &outputs[j],
                LayerInput::Concat(..) => cat.as_deref().expect("built above"),
            };
            let out = match spec.kind {
                LayerKind::Conv { .. } => conv_forward(input, p.weight(l), p.bias(l), &g),
                LayerKind::ConvTranspose { .. } => convt_forward(input, p.weight(l), p.bias(l), &g),
            };
            (out, cat)
        };
        if spec.relu {
            relu_inplace(&mut out);
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite output in layer {}", spec.name)));
        }
        outputs.push(out);
        concats.push(cat);
    }
    Ok(Trace { outputs, concats })
}

/// Backpropagates `dy` (gradient w.r.t. the head output) and accumulates
/// parameter gradients into `grad`.
fn backward_sample<T: Scalar>(p: &NetworkParams<T>, x: &[T], h: usize, w: usize, trace: &Trace<T>, dy: Vec<T>, grad: &mut [T]) -> Result<()> {
    let n = p.layers.len();
    let mut douts: Vec<Option<Vec<T>>> = vec![None; n];
    douts[n - 1] = Some(dy);
    let add = |slot: &mut Option<Vec<T>>, d: &[T]| match slot {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, &b)| *a += b),
        None => *slot = Some(d.to_vec()),
    };
    for l in (0..n).rev() {
        let spec = &p.layers[l];
        let Some(mut d) = douts[l].take() else { continue };
        if spec.relu {
            relu_mask(&trace.outputs[l], &mut d);
        }
        let g = spec.geom(h >> spec.level, w >> spec.level)?;
        let input: &[T] = match spec.input {
            LayerInput::Network => x,
            LayerInput::Layer(j) => &trace.outputs[j],
            LayerInput::Concat(..) => trace.concats[l].as_deref().expect("recorded"),
        };
        let want_dx = spec.input != LayerInput::Network;
        let (wg, bg) = grad[spec.weight_offset..spec.bias_offset + spec.out_channels].split_at_mut(spec.weight_len());
        let dx = match spec.kind {
            LayerKind::Conv { .. } => conv_backward(input, p.weight(l), &g, &d, wg, bg, want_dx),
            LayerKind::ConvTranspose { .. } => convt_backward(input, p.weight(l), &g, &d, wg, bg, want_dx),
        };
        match (spec.input, dx) {
            (LayerInput::Layer(j), Some(dx)) => add(&mut douts[j], &dx),
            (LayerInput::Concat(a, b), Some(dx)) => {
                let split = trace.outputs[a].len();
                add(&mut douts[a], &dx[..split]);
                add(&mut douts[b], &dx[split..]);
            }
            _ => {}
        }
    }
    Ok(())
}

/// Evaluates the network on a batch; samples run in parallel.
pub fn unet_forward<T: Scalar>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    check_input(params, input)?;
    let (h, w) = (input.height(), input.width());
    let outs = (0..input.batch())
        .into_par_iter()
        .map(|i| forward_sample(params, input.sample(i), h, w).map(|mut t| t.outputs.pop().expect("head")))
        .collect::<Result<Vec<_>>>()?;
    Tensor::new([input.batch(), params.config.out_channels, h, w], outs.concat())
}

/// Loss and its exact gradient with respect to every parameter.
///
/// The loss is the mean squared error over all output elements plus
/// `lambda` times the squared weight norm. Per-sample gradients are computed
/// in parallel and summed in sample order, so the result does not depend on
/// the thread count.
pub fn loss_gradient<T: Scalar>(
    params: &NetworkParams<T>,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    lambda: f64,
) -> Result<(f64, Vec<T>)> {
    check_input(params, inputs)?;
    let (n, h, w) = (inputs.batch(), inputs.height(), inputs.width());
    if targets.shape() != [n, params.config.out_channels, h, w] {
        return Err(Error::InvalidShape(format!(
            "targets {:?} do not match network output for inputs {:?}",
            targets.shape(),
            inputs.shape()
        )));
    }
    let count = (n * targets.sample_len()).max(1) as f64;
    let scale = T::of(2.0 / count);
    let mut grad = vec![T::zero(); params.len()];
    let mut sse = 0.0;
    let chunk = rayon::current_num_threads().max(1);
    for start in (0..n).step_by(chunk) {
        let parts = (start..(start + chunk).min(n))
            .into_par_iter()
            .map(|i| {
                let x = inputs.sample(i);
                let trace = forward_sample(params, x, h, w)?;
                let pred = trace.outputs.last().expect("head");
                let mut s = 0.0;
                let dy = pred
                    .iter()
                    .zip(targets.sample(i))
                    .map(|(&p, &t)| {
                        let e = p - t;
                        s += e.f64() * e.f64();
                        e * scale
                    })
                    .collect();
                let mut g = vec![T::zero(); params.len()];
                backward_sample(params, x, h, w, &trace, dy, &mut g)?;
                Ok((s, g))
            })
            .collect::<Result<Vec<_>>>()?;
        for (s, g) in parts {
            sse += s;
            grad.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
        }
    }
    let mut loss = sse / count;
    if lambda != 0.0 {
        loss += lambda * params.weight_sq_sum();
        let two_lambda = T::of(2.0 * lambda);
        for spec in &params.layers {
            for (gw, &wv) in grad[spec.weight_offset..spec.bias_offset]
                .iter_mut()
                .zip(&params.values[spec.weight_offset..spec.bias_offset])
            {
                *gw += two_lambda * wv;
            }
        }
    }
    if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> UNetConfig {
        UNetConfig::new(8, 1, 1, 2)
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        // enc: 1->2 (20), 2->2 (38), down 2->4 (76); mid 2x 4->4 (296);
        // dec: up 4->2 2x2 (34), 4->2 (74), 2->2 (38); head 2->1 (3).
        let p = build_unet::<f64>(&tiny(), 0).unwrap();
        assert_eq!(p.len(), 579);
        assert_eq!(p.layers().len(), tiny().weighted_layers());
        let last = p.layers().last().unwrap();
        assert_eq!(last.bias_offset + last.out_channels, p.len());
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::new(64, 4, 3, 16).validate().is_ok());
        assert!(UNetConfig::new(60, 4, 3, 16).validate().is_err());
        assert!(UNetConfig::new(64, 4, 0, 16).validate().is_err());
        assert!(UNetConfig::new(64, 4, 3, 0).validate().is_err());
        assert!(matches!(build_unet::<f32>(&UNetConfig::new(12, 1, 3, 2), 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn output_shape_and_seeding() {
        let cfg = UNetConfig::new(16, 2, 2, 4);
        let p = build_unet::<f32>(&cfg, 7).unwrap();
        assert_eq!(p, build_unet::<f32>(&cfg, 7).unwrap());
        assert_ne!(p.values(), build_unet::<f32>(&cfg, 8).unwrap().values());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn([3, 2, 16, 16], |_| rng.random_range(-1.0f32..1.0));
        let y = unet_forward(&p, &x).unwrap();
        assert_eq!(y.shape(), [3, 1, 16, 16]);
        assert!(y.all_finite());
        assert!(unet_forward(&p, &Tensor::zeros([1, 1, 16, 16])).is_err());
        assert!(unet_forward(&p, &Tensor::zeros([1, 2, 10, 10])).is_err());
    }

    #[test]
    fn zero_weights_give_head_bias() {
        let cfg = UNetConfig::new(8, 1, 1, 2);
        let mut p = NetworkParams::<f64>::zeros(&cfg).unwrap();
        let head = p.layers().len() - 1;
        p.bias_mut(head)[0] = 1.5;
        let y = unet_forward(&p, &Tensor::from_fn([1, 1, 8, 8], |i| i as f64)).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn perfect_fit_has_zero_gradient_and_scaling_is_linear() {
        let p = build_unet::<f64>(&tiny(), 3).unwrap();
        let x = Tensor::from_fn([2, 1, 8, 8], |i| (i as f64 * 0.37).sin());
        let y = unet_forward(&p, &x).unwrap();
        let (loss, g) = loss_gradient(&p, &x, &y, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));

        // Doubling the residual quadruples the loss and doubles the gradient.
        let t1 = Tensor::from_fn(y.shape(), |i| y.data()[i] - 0.1);
        let t2 = Tensor::from_fn(y.shape(), |i| y.data()[i] - 0.2);
        let (l1, g1) = loss_gradient(&p, &x, &t1, 0.0).unwrap();
        let (l2, g2) = loss_gradient(&p, &x, &t2, 0.0).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-10 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn weight_penalty_excludes_biases() {
        let mut p = NetworkParams::<f64>::zeros(&tiny()).unwrap();
        p.weight_mut(0)[0] = 2.0;
        p.bias_mut(0)[0] = 5.0;
        assert_eq!(p.weight_sq_sum(), 4.0);
    }
}
