//! Layers with explicit forward/backward passes.
//!
//! Layers are plain values: `forward` returns the output together with whatever
//! the backward pass needs, and `backward` accumulates parameter gradients into a
//! layer of the same shape. Nothing is cached inside the layer itself, so a
//! frozen model can run inference from several threads.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis, NdFloat};
use num_traits::NumCast;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub(crate) fn cast<F: NdFloat>(x: f64) -> F {
    <F as NumCast>::from(x).expect("finite constant")
}

/// A named parameter tensor: name, shape and row-major data.
pub struct ParamRef<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

/// Convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn pointwise() -> Self {
        Self {
            kernel: 1,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    /// Output length along one axis, `None` when the kernel does not fit.
    pub fn output_len(&self, n: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = n + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        *self == Self::pointwise()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    /// `out x (in * kernel * kernel)`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub in_channels: usize,
    pub geometry: ConvGeometry,
}

impl<F: NdFloat> Conv2d<F> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, geometry: ConvGeometry, relu_gain: bool, rng: &mut R) -> Self {
        let fan_in = in_channels * geometry.kernel * geometry.kernel;
        Self {
            weight: init_weight(out_channels, fan_in, relu_gain, rng),
            bias: Array1::zeros(out_channels),
            in_channels,
            geometry,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((self.geometry.output_len(h)?, self.geometry.output_len(w)?))
    }

    fn im2col(&self, x: &Array4<F>, n: usize, ho: usize, wo: usize) -> Array2<F> {
        let g = self.geometry;
        let (_, c, h, w) = x.dim();
        let k = g.kernel;
        let mut cols = Array2::<F>::zeros((c * k * k, ho * wo));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let mut dst = cols.row_mut(row);
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = x[[n, ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<F>, dx: &mut Array4<F>, n: usize, ho: usize, wo: usize) {
        let g = self.geometry;
        let (_, c, h, w) = dx.dim();
        let k = g.kernel;
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let src = cols.row((ci * k + ky) * k + kx);
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[[n, ci, iy as usize, ix as usize]] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn sample_cols<'a>(&self, x: &'a Array4<F>, n: usize, ho: usize, wo: usize) -> std::borrow::Cow<'a, Array2<F>> {
        if self.geometry.is_pointwise() {
            let (_, c, h, w) = x.dim();
            let view = x.slice(s![n, .., .., ..]);
            std::borrow::Cow::Owned(
                view.to_shape((c, h * w))
                    .expect("contiguous sample")
                    .to_owned(),
            )
        } else {
            std::borrow::Cow::Owned(self.im2col(x, n, ho, wo))
        }
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, _, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w).expect("input checked by caller");
        let cout = self.out_channels();
        let mut out = Array4::<F>::zeros((n, cout, ho, wo));
        for i in 0..n {
            let cols = self.sample_cols(x, i, ho, wo);
            let mut y = self.weight.dot(cols.as_ref());
            y += &self.bias.view().insert_axis(Axis(1));
            out.slice_mut(s![i, .., .., ..])
                .assign(&y.into_shape_with_order((cout, ho, wo)).expect("shape"));
        }
        out
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &Array4<F>, dy: &Array4<F>, grad: &mut Conv2d<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let (_, cout, ho, wo) = dy.dim();
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        for i in 0..n {
            let g = dy
                .slice(s![i, .., .., ..])
                .to_shape((cout, ho * wo))
                .expect("contiguous")
                .to_owned();
            let cols = self.sample_cols(x, i, ho, wo);
            grad.weight += &g.dot(&cols.t());
            grad.bias += &g.sum_axis(Axis(1));
            let dcols = self.weight.t().dot(&g);
            if self.geometry.is_pointwise() {
                dx.slice_mut(s![i, .., .., ..])
                    .assign(&dcols.into_shape_with_order((c, h, w)).expect("shape"));
            } else {
                self.col2im(&dcols, &mut dx, i, ho, wo);
            }
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            in_channels: self.in_channels,
            geometry: self.geometry,
        }
    }

    pub fn params<'a>(&'a self, prefix: &str) -> Vec<ParamRef<'a, F>> {
        vec![
            ParamRef {
                name: format!("{prefix}.weight"),
                shape: self.weight.shape().to_vec(),
                data: self.weight.as_slice().expect("standard layout"),
            },
            ParamRef {
                name: format!("{prefix}.bias"),
                shape: self.bias.shape().to_vec(),
                data: self.bias.as_slice().expect("standard layout"),
            },
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

fn init_weight<F: NdFloat, R: Rng>(rows: usize, fan_in: usize, relu_gain: bool, rng: &mut R) -> Array2<F> {
    let bound = if relu_gain { (6.0 / fan_in as f64).sqrt() } else { (3.0 / fan_in as f64).sqrt() };
    Array2::from_shape_simple_fn((rows, fan_in), || cast(rng.gen_range(-bound..bound)))
}

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: f64,
    pub eps: f64,
}

/// Values the backward pass of a training-mode batch norm needs.
pub struct BatchNormCache<F> {
    x_hat: Array4<F>,
    inv_std: Array1<F>,
    /// `Some` for batch statistics (training mode), `None` for running statistics.
    pub batch_stats: Option<(Array1<F>, Array1<F>)>,
}

impl<F: NdFloat> BatchNorm2d<F> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum,
            eps,
        }
    }

    pub fn forward(&self, x: &Array4<F>, use_batch_stats: bool) -> (Array4<F>, BatchNormCache<F>) {
        let (n, c, h, w) = x.dim();
        let m = n * h * w;
        let (mean, var, batch_stats) = if use_batch_stats {
            let mut mean = Array1::<F>::zeros(c);
            let mut var = Array1::<F>::zeros(c);
            for ch in 0..c {
                let lane = x.slice(s![.., ch, .., ..]);
                let mu = lane.sum() / cast(m as f64);
                let v = lane.fold(F::zero(), |acc, &v| acc + (v - mu) * (v - mu)) / cast(m as f64);
                mean[ch] = mu;
                var[ch] = v;
            }
            let unbiased = if m > 1 {
                var.mapv(|v| v * cast(m as f64 / (m as f64 - 1.0)))
            } else {
                var.clone()
            };
            (mean.clone(), var, Some((mean, unbiased)))
        } else {
            (self.running_mean.clone(), self.running_var.clone(), None)
        };
        let inv_std = var.mapv(|v| F::one() / (v + cast(self.eps)).sqrt());
        let mut x_hat = x.clone();
        for ch in 0..c {
            let (mu, is) = (mean[ch], inv_std[ch]);
            x_hat.slice_mut(s![.., ch, .., ..]).mapv_inplace(|v| (v - mu) * is);
        }
        let mut y = x_hat.clone();
        for ch in 0..c {
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            y.slice_mut(s![.., ch, .., ..]).mapv_inplace(|v| v * g + b);
        }
        (
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                batch_stats,
            },
        )
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, cache: &BatchNormCache<F>) {
        if let Some((mean, var)) = &cache.batch_stats {
            let mom: F = cast(self.momentum);
            let keep = F::one() - mom;
            self.running_mean = &self.running_mean * keep + &(mean * mom);
            self.running_var = &self.running_var * keep + &(var * mom);
        }
    }

    pub fn backward(&self, cache: &BatchNormCache<F>, dy: &Array4<F>, grad: &mut BatchNorm2d<F>) -> Array4<F> {
        let (n, c, h, w) = dy.dim();
        let m: F = cast((n * h * w) as f64);
        let mut dx = Array4::<F>::zeros(dy.raw_dim());
        for ch in 0..c {
            let dy_c = dy.slice(s![.., ch, .., ..]);
            let xh_c = cache.x_hat.slice(s![.., ch, .., ..]);
            let sum_dy = dy_c.sum();
            let sum_dy_xh = ndarray::Zip::from(&dy_c)
                .and(&xh_c)
                .fold(F::zero(), |acc, &a, &b| acc + a * b);
            grad.gamma[ch] += sum_dy_xh;
            grad.beta[ch] += sum_dy;
            let g = self.gamma[ch];
            let is = cache.inv_std[ch];
            let mut dx_c = dx.slice_mut(s![.., ch, .., ..]);
            if cache.batch_stats.is_some() {
                ndarray::Zip::from(&mut dx_c)
                    .and(&dy_c)
                    .and(&xh_c)
                    .for_each(|d, &gy, &xh| {
                        *d = g * is / m * (m * gy - sum_dy - xh * sum_dy_xh);
                    });
            } else {
                ndarray::Zip::from(&mut dx_c).and(&dy_c).for_each(|d, &gy| *d = g * is * gy);
            }
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        Self {
            gamma: Array1::zeros(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::zeros(c),
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    pub fn params<'a>(&'a self, prefix: &str) -> Vec<ParamRef<'a, F>> {
        vec![
            ParamRef {
                name: format!("{prefix}.gamma"),
                shape: vec![self.gamma.len()],
                data: self.gamma.as_slice().expect("standard layout"),
            },
            ParamRef {
                name: format!("{prefix}.beta"),
                shape: vec![self.beta.len()],
                data: self.beta.as_slice().expect("standard layout"),
            },
        ]
    }

    pub fn buffers<'a>(&'a self, prefix: &str) -> Vec<ParamRef<'a, F>> {
        vec![
            ParamRef {
                name: format!("{prefix}.running_mean"),
                shape: vec![self.running_mean.len()],
                data: self.running_mean.as_slice().expect("standard layout"),
            },
            ParamRef {
                name: format!("{prefix}.running_var"),
                shape: vec![self.running_var.len()],
                data: self.running_var.as_slice().expect("standard layout"),
            },
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.gamma.as_slice_mut().expect("standard layout"),
            self.beta.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [F]> {
        self.params_and_buffers_mut().1
    }

    pub fn params_and_buffers_mut(&mut self) -> (Vec<&mut [F]>, Vec<&mut [F]>) {
        (
            vec![
                self.gamma.as_slice_mut().expect("standard layout"),
                self.beta.as_slice_mut().expect("standard layout"),
            ],
            vec![
                self.running_mean.as_slice_mut().expect("standard layout"),
                self.running_var.as_slice_mut().expect("standard layout"),
            ],
        )
    }
}

/// Fully-connected layer, `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `out x in`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: NdFloat> Linear<F> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, relu_gain: bool, rng: &mut R) -> Self {
        Self {
            weight: init_weight(outputs, inputs, relu_gain, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn backward(&self, x: ArrayView2<F>, dy: &Array2<F>, grad: &mut Linear<F>) -> Array2<F> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn params<'a>(&'a self, prefix: &str) -> Vec<ParamRef<'a, F>> {
        vec![
            ParamRef {
                name: format!("{prefix}.weight"),
                shape: self.weight.shape().to_vec(),
                data: self.weight.as_slice().expect("standard layout"),
            },
            ParamRef {
                name: format!("{prefix}.bias"),
                shape: self.bias.shape().to_vec(),
                data: self.bias.as_slice().expect("standard layout"),
            },
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

pub fn relu<F: NdFloat, D: ndarray::Dimension>(x: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Backward of ReLU given its output.
pub fn relu_backward<F: NdFloat, D: ndarray::Dimension>(
    y: &ndarray::Array<F, D>,
    dy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Adaptive average pooling bin for output index `i` of `out` over an input of length `n`.
fn pool_bin(i: usize, out: usize, n: usize) -> (usize, usize) {
    let start = i * n / out;
    let end = ((i + 1) * n).div_ceil(out);
    (start, end)
}

/// Average pooling to a fixed `out_h x out_w` grid for any input size.
pub fn adaptive_avg_pool<F: NdFloat>(x: &Array4<F>, out_h: usize, out_w: usize) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::<F>::zeros((n, c, out_h, out_w));
    for oy in 0..out_h {
        let (y0, y1) = pool_bin(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1) = pool_bin(ox, out_w, w);
            let area: F = cast(((y1 - y0) * (x1 - x0)) as f64);
            for b in 0..n {
                for ch in 0..c {
                    let sum = x.slice(s![b, ch, y0..y1, x0..x1]).sum();
                    y[[b, ch, oy, ox]] = sum / area;
                }
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward<F: NdFloat>(dy: &Array4<F>, in_h: usize, in_w: usize) -> Array4<F> {
    let (n, c, out_h, out_w) = dy.dim();
    let mut dx = Array4::<F>::zeros((n, c, in_h, in_w));
    for oy in 0..out_h {
        let (y0, y1) = pool_bin(oy, out_h, in_h);
        for ox in 0..out_w {
            let (x0, x1) = pool_bin(ox, out_w, in_w);
            let area: F = cast(((y1 - y0) * (x1 - x0)) as f64);
            for b in 0..n {
                for ch in 0..c {
                    let g = dy[[b, ch, oy, ox]] / area;
                    dx.slice_mut(s![b, ch, y0..y1, x0..x1]).mapv_inplace(|v| v + g);
                }
            }
        }
    }
    dx
}

/// Identity on the way forward; multiplies the incoming gradient by `-scale` on the way back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientReversal {
    pub scale: f64,
}

impl Default for GradientReversal {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl GradientReversal {
    pub fn forward<F: Clone, D: ndarray::Dimension>(&self, x: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
        x.clone()
    }

    pub fn backward<F: NdFloat, D: ndarray::Dimension>(&self, dy: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
        let factor: F = cast(-self.scale);
        dy.mapv(|g| g * factor)
    }
}

pub fn sigmoid<F: NdFloat>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}
