use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    adaptive_avg_pool, adaptive_avg_pool_backward, relu, relu_backward, sigmoid, BatchNorm2d, BatchNormCache, Conv2d,
    GradientReversal, Linear, ParamRef,
};
use super::{ModelSpec, FEATURE_CHANNELS};
use crate::error::{Error, Result};
use crate::types::ImageFrame;

#[derive(Debug, Clone, PartialEq)]
struct EncoderBlock<F> {
    conv: Conv2d<F>,
    relu: bool,
}

/// Encoder, head and domain classifier with their parameters.
///
/// The same type doubles as a gradient accumulator (see [`zeros_like`](Self::zeros_like)).
#[derive(Debug, Clone, PartialEq)]
pub struct TraversabilityNet<F = f32> {
    spec: ModelSpec,
    encoder: Vec<EncoderBlock<F>>,
    input_norm: BatchNorm2d<F>,
    reduce: Conv2d<F>,
    regressor: Linear<F>,
    domain: Vec<Linear<F>>,
    reversal: GradientReversal,
}

/// Intermediate values of a feature pass, consumed by the backward pass.
pub struct FeatureTape<F> {
    block_inputs: Vec<Array4<F>>,
    block_outputs: Vec<Array4<F>>,
    norm: BatchNormCache<F>,
    reduce_input: Array4<F>,
    reduce_output: Array4<F>,
    features: Array2<F>,
}

impl<F> FeatureTape<F> {
    /// The flattened pooled features (the tap shared by regressor and domain classifier).
    pub fn features(&self) -> &Array2<F> {
        &self.features
    }
}

pub struct DomainTape<F> {
    inputs: Vec<Array2<F>>,
    hidden_outputs: Vec<Array2<F>>,
    probs: Array1<F>,
}

impl<F> DomainTape<F> {
    pub fn probs(&self) -> &Array1<F> {
        &self.probs
    }

    /// Post-ReLU outputs of the hidden classifier layers.
    pub fn hidden_activations(&self) -> &[Array2<F>] {
        &self.hidden_outputs[..self.hidden_outputs.len() - 1]
    }
}

/// Stacks equally sized frames into an `N x C x H x W` batch.
pub fn frames_to_batch<'a, I>(frames: I) -> Result<Array4<f32>>
where
    I: IntoIterator<Item = &'a ImageFrame>,
{
    let frames: Vec<&ImageFrame> = frames.into_iter().collect();
    let first = frames.first().ok_or_else(|| Error::Empty("empty batch".into()))?;
    let dim = first.pixels().dim();
    let mut batch = Array4::<f32>::zeros((frames.len(), dim.0, dim.1, dim.2));
    for (i, f) in frames.iter().enumerate() {
        if f.pixels().dim() != dim {
            return Err(Error::shape(format!("{dim:?}"), format!("{:?}", f.pixels().dim())));
        }
        batch.slice_mut(s![i, .., .., ..]).assign(f.pixels());
    }
    Ok(batch)
}

impl<F: NdFloat> TraversabilityNet<F> {
    /// Builds a model with fan-in scaled uniform initialization drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = spec
            .encoder
            .blocks()
            .iter()
            .map(|b| EncoderBlock {
                conv: Conv2d::new(b.in_channels, b.out_channels, b.geometry, b.relu, &mut rng),
                relu: b.relu,
            })
            .collect();
        let head = spec.head;
        let input_norm = BatchNorm2d::new(FEATURE_CHANNELS, spec.bn_momentum, spec.bn_eps);
        let reduce = Conv2d::new(
            FEATURE_CHANNELS,
            head.reduce_channels,
            super::ConvGeometry::pointwise(),
            true,
            &mut rng,
        );
        let regressor = Linear::new(head.flattened(), head.outputs, false, &mut rng);
        let mut widths = vec![head.flattened()];
        widths.extend(&spec.domain.hidden);
        widths.push(1);
        let domain = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(w[0], w[1], i + 2 < widths.len(), &mut rng))
            .collect();
        let reversal = GradientReversal {
            scale: spec.domain.reversal_scale,
        };
        Ok(Self {
            spec,
            encoder,
            input_norm,
            reduce,
            regressor,
            domain,
            reversal,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.spec.k()
    }

    pub fn reversal(&self) -> GradientReversal {
        self.reversal
    }

    pub fn set_reversal_scale(&mut self, scale: f64) {
        self.reversal.scale = scale;
        self.spec.domain.reversal_scale = scale;
    }

    /// A structurally identical model with every parameter and buffer set to zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            encoder: self
                .encoder
                .iter()
                .map(|b| EncoderBlock {
                    conv: b.conv.zeros_like(),
                    relu: b.relu,
                })
                .collect(),
            input_norm: self.input_norm.zeros_like(),
            reduce: self.reduce.zeros_like(),
            regressor: self.regressor.zeros_like(),
            domain: self.domain.iter().map(Linear::zeros_like).collect(),
            reversal: self.reversal,
        }
    }

    /// Encoder map size for an input, or an error when it collapses below 1x1.
    pub fn encoder_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.spec.encoder.output_hw(h, w) {
            Some((eh, ew)) if eh >= 1 && ew >= 1 => Ok((eh, ew)),
            _ => Err(Error::config(format!(
                "input {h}x{w} is too small: encoder output would be empty"
            ))),
        }
    }

    fn check_batch(&self, x: &Array4<F>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        if n == 0 {
            return Err(Error::Empty("empty batch".into()));
        }
        if c != 3 {
            return Err(Error::shape("3 input channels", format!("{c} channels")));
        }
        self.encoder_output_hw(h, w).map(|_| ())
    }

    /// Runs the encoder only.
    pub fn encoder_map(&self, x: &Array4<F>) -> Result<Array4<F>> {
        self.check_batch(x)?;
        let mut h = x.clone();
        for b in &self.encoder {
            h = b.conv.forward(&h);
            if b.relu {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    /// Shared feature pass. `batch_stats` selects batch statistics (training) or
    /// running statistics (evaluation) for the head's input normalization.
    pub fn features_with_tape(&self, x: &Array4<F>, batch_stats: bool) -> Result<FeatureTape<F>> {
        self.check_batch(x)?;
        let mut block_inputs = Vec::with_capacity(self.encoder.len());
        let mut block_outputs = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for b in &self.encoder {
            let mut y = b.conv.forward(&h);
            if b.relu {
                y = relu(&y);
            }
            block_inputs.push(h);
            h = y.clone();
            block_outputs.push(y);
        }
        let (normed, norm) = self.input_norm.forward(&h, batch_stats);
        let reduce_output = relu(&self.reduce.forward(&normed));
        let head = self.spec.head;
        let pooled = adaptive_avg_pool(&reduce_output, head.pooled_h, head.pooled_w);
        let n = pooled.dim().0;
        let features = pooled
            .into_shape_with_order((n, head.flattened()))
            .expect("contiguous pooled map");
        Ok(FeatureTape {
            block_inputs,
            block_outputs,
            norm,
            reduce_input: normed,
            reduce_output,
            features,
        })
    }

    /// Flattened pooled features in evaluation mode, one 4096-row per frame.
    pub fn shared_features(&self, x: &Array4<F>) -> Result<Array2<F>> {
        Ok(self.features_with_tape(x, false)?.features)
    }

    /// Raw (unclamped) section scores in evaluation mode.
    pub fn forward_traversability(&self, x: &Array4<F>) -> Result<Array2<F>> {
        let feats = self.shared_features(x)?;
        Ok(self.regress(feats.view()))
    }

    pub fn regress(&self, features: ArrayView2<F>) -> Array2<F> {
        self.regressor.forward(features)
    }

    /// Accumulates regressor gradients; returns the gradient w.r.t. the features.
    pub fn regress_backward(&self, features: ArrayView2<F>, d_out: &Array2<F>, grads: &mut Self) -> Array2<F> {
        self.regressor.backward(features, d_out, &mut grads.regressor)
    }

    /// Domain classifier forward pass (reversal layer, MLP, sigmoid).
    pub fn domain_with_tape(&self, features: &Array2<F>) -> Result<DomainTape<F>> {
        let width = self.spec.head.flattened();
        if features.ncols() != width {
            return Err(Error::shape(format!("{width} features"), format!("{} features", features.ncols())));
        }
        let mut h = self.reversal.forward(features);
        let mut inputs = Vec::with_capacity(self.domain.len());
        let mut hidden_outputs = Vec::with_capacity(self.domain.len());
        let last = self.domain.len() - 1;
        for (i, layer) in self.domain.iter().enumerate() {
            let mut y = layer.forward(h.view());
            if i < last {
                y = relu(&y);
            }
            inputs.push(h);
            h = y.clone();
            hidden_outputs.push(y);
        }
        let probs = h.column(0).mapv(sigmoid);
        Ok(DomainTape {
            inputs,
            hidden_outputs,
            probs,
        })
    }

    /// Probability that each feature row comes from the target domain.
    pub fn forward_domain(&self, features: &Array2<F>) -> Result<Array1<F>> {
        Ok(self.domain_with_tape(features)?.probs)
    }

    /// Backpropagates `d loss / d prob` through the classifier and the reversal
    /// layer. Returns the (reversed) gradient w.r.t. the features.
    pub fn domain_backward(&self, tape: &DomainTape<F>, d_probs: &Array1<F>, grads: &mut Self) -> Array2<F> {
        let dz = ndarray::Zip::from(d_probs)
            .and(&tape.probs)
            .map_collect(|&g, &p| g * p * (F::one() - p));
        let mut d = dz.insert_axis(Axis(1));
        let last = self.domain.len() - 1;
        for i in (0..self.domain.len()).rev() {
            if i < last {
                d = relu_backward(&tape.hidden_outputs[i], &d);
            }
            d = self.domain[i].backward(tape.inputs[i].view(), &d, &mut grads.domain[i]);
        }
        self.reversal.backward(&d)
    }

    /// Accumulates encoder and head-trunk gradients from a feature gradient.
    pub fn features_backward(&self, tape: &FeatureTape<F>, d_features: &Array2<F>, grads: &mut Self) {
        let head = self.spec.head;
        let (n, c, rh, rw) = tape.reduce_output.dim();
        let d_pooled = d_features
            .to_shape((n, c, head.pooled_h, head.pooled_w))
            .expect("feature width matches head")
            .to_owned();
        let d_reduce = relu_backward(&tape.reduce_output, &adaptive_avg_pool_backward(&d_pooled, rh, rw));
        let d_normed = self.reduce.backward(&tape.reduce_input, &d_reduce, &mut grads.reduce);
        let mut d = self.input_norm.backward(&tape.norm, &d_normed, &mut grads.input_norm);
        for (i, b) in self.encoder.iter().enumerate().rev() {
            if b.relu {
                d = relu_backward(&tape.block_outputs[i], &d);
            }
            d = b.conv.backward(&tape.block_inputs[i], &d, &mut grads.encoder[i].conv);
        }
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn update_running_stats(&mut self, tape: &FeatureTape<F>) {
        self.input_norm.update_running(&tape.norm);
    }

    /// Encoder plus head trunk (everything up to the shared feature tap).
    pub fn feature_params(&self) -> Vec<ParamRef<'_, F>> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            out.extend(b.conv.params(&format!("encoder.{i}")));
        }
        out.extend(self.input_norm.params("head.norm"));
        out.extend(self.reduce.params("head.reduce"));
        out
    }

    pub fn regressor_params(&self) -> Vec<ParamRef<'_, F>> {
        self.regressor.params("head.fc")
    }

    pub fn domain_params(&self) -> Vec<ParamRef<'_, F>> {
        self.domain
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params(&format!("domain.fc{i}")))
            .collect()
    }

    /// Disjoint mutable views: (features, regressor, domain, buffers).
    fn groups_mut(&mut self) -> [Vec<&mut [F]>; 4] {
        let mut features: Vec<&mut [F]> = Vec::new();
        for b in &mut self.encoder {
            features.extend(b.conv.params_mut());
        }
        let (norm_params, buffers) = self.input_norm.params_and_buffers_mut();
        features.extend(norm_params);
        features.extend(self.reduce.params_mut());
        let regressor = self.regressor.params_mut();
        let domain = self.domain.iter_mut().flat_map(|l| l.params_mut()).collect();
        [features, regressor, domain, buffers]
    }

    pub fn feature_params_mut(&mut self) -> Vec<&mut [F]> {
        let [f, ..] = self.groups_mut();
        f
    }

    pub fn regressor_params_mut(&mut self) -> Vec<&mut [F]> {
        self.regressor.params_mut()
    }

    pub fn domain_params_mut(&mut self) -> Vec<&mut [F]> {
        self.domain.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameters covered by the regression loss (and its L2 term): features then regressor.
    pub fn main_params(&self) -> Vec<ParamRef<'_, F>> {
        let mut p = self.feature_params();
        p.extend(self.regressor_params());
        p
    }

    pub fn main_params_mut(&mut self) -> Vec<&mut [F]> {
        let [mut f, r, ..] = self.groups_mut();
        f.extend(r);
        f
    }

    pub fn all_params(&self) -> Vec<ParamRef<'_, F>> {
        let mut p = self.main_params();
        p.extend(self.domain_params());
        p
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut [F]> {
        let [mut f, r, d, _] = self.groups_mut();
        f.extend(r);
        f.extend(d);
        f
    }

    /// Parameters followed by buffers, in checkpoint order.
    pub fn state_mut(&mut self) -> Vec<&mut [F]> {
        let [mut f, r, d, b] = self.groups_mut();
        f.extend(r);
        f.extend(d);
        f.extend(b);
        f
    }

    pub fn buffers(&self) -> Vec<ParamRef<'_, F>> {
        self.input_norm.buffers("head.norm")
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [F]> {
        self.input_norm.buffers_mut()
    }

    /// All learnable parameters concatenated in a fixed order.
    pub fn flat_params(&self) -> Vec<F> {
        self.all_params().iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    /// Squared L2 norm of the parameters covered by the regression loss.
    pub fn main_params_sq_norm(&self) -> f64 {
        self.main_params()
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum()
    }

    /// Order-sensitive digest of parameters and buffers.
    pub fn checksum(&self) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        for p in self.all_params().iter().chain(self.buffers().iter()) {
            for v in p.data {
                let bits = v.to_f64().unwrap_or(f64::NAN).to_bits();
                acc = crate::synth::splitmix64(acc ^ bits);
            }
        }
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.all_params()
            .iter()
            .chain(self.buffers().iter())
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Mutable access to the final regression layer (e.g. for tests and probes).
    pub fn regressor_mut(&mut self) -> (&mut Array2<F>, &mut Array1<F>) {
        (&mut self.regressor.weight, &mut self.regressor.bias)
    }

    /// Mutable access to domain classifier layer `i`.
    pub fn domain_layer_mut(&mut self, i: usize) -> (&mut Array2<F>, &mut Array1<F>) {
        let l = &mut self.domain[i];
        (&mut l.weight, &mut l.bias)
    }

    pub fn domain_layers(&self) -> usize {
        self.domain.len()
    }
}

impl TraversabilityNet<f32> {
    /// Clamped-free scores for frames of equal size, evaluation mode.
    pub fn predict_frames(&self, frames: &[&ImageFrame]) -> Result<Array2<f32>> {
        let batch = frames_to_batch(frames.iter().copied())?;
        self.forward_traversability(&batch)
    }
}

impl<F: NdFloat> TraversabilityNet<F> {
    /// Same architecture and parameter values in another float type.
    pub fn convert<G: NdFloat>(&self) -> TraversabilityNet<G> {
        let mut out = TraversabilityNet::<G>::new(self.spec.clone(), 0).expect("spec already validated");
        let conv = |v: &F| super::layers::cast::<G>(v.to_f64().expect("finite"));
        for (dst, src) in out.all_params_mut().into_iter().zip(self.all_params()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d = conv(s);
            }
        }
        for (dst, src) in out.buffers_mut().into_iter().zip(self.buffers()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d = conv(s);
            }
        }
        out
    }
}
