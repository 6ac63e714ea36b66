use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::arch::{Architecture, LayerSpec};
use super::scalar::Scalar;

const BN_EPS: f64 = 1e-5;

/// Channel-major `(channels, rows, cols)` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![T::zero(); channels * rows * cols],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn at(&self, c: usize, r: usize, col: usize) -> T {
        self.data[(c * self.rows + r) * self.cols + col]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; the caller may fold them into the running moments.
    Train,
    /// Running moments; side-effect free.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out, in, kernel, kernel)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn out_size(&self, rows: usize, cols: usize) -> (usize, usize) {
        (
            (rows + 2 * self.padding - self.kernel) / self.stride + 1,
            (cols + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Unfolds receptive fields: row `(ci, ky, kx)`, column output pixel.
    fn im2col(&self, x: &Tensor<T>) -> (Vec<T>, usize, usize) {
        let (or, oc) = self.out_size(x.rows, x.cols);
        let npix = or * oc;
        let k = self.kernel;
        let mut cols = vec![T::zero(); self.patch_len() * npix];
        for ci in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    for oy in 0..or {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.rows as isize {
                            continue;
                        }
                        let src = &x.data[(ci * x.rows + iy as usize) * x.cols..][..x.cols];
                        for ox in 0..oc {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < x.cols as isize {
                                dst[oy * oc + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (cols, or, oc)
    }

    fn col2im(&self, dcols: &[T], rows: usize, cols: usize, or: usize, oc: usize) -> Vec<T> {
        let npix = or * oc;
        let k = self.kernel;
        let mut dx = vec![T::zero(); self.in_channels * rows * cols];
        for ci in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &dcols[row * npix..(row + 1) * npix];
                    for oy in 0..or {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= rows as isize {
                            continue;
                        }
                        let dst = &mut dx[(ci * rows + iy as usize) * cols..][..cols];
                        for ox in 0..oc {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < cols as isize {
                                dst[ix as usize] = dst[ix as usize] + src[oy * oc + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let (cols, or, oc) = if self.is_pointwise() {
            (x.data.clone(), x.rows, x.cols)
        } else {
            self.im2col(x)
        };
        let npix = or * oc;
        let mut out = Vec::with_capacity(self.out_channels * npix);
        for &b in &self.bias {
            out.extend(std::iter::repeat_n(b, npix));
        }
        let kk = self.patch_len();
        T::gemm(
            self.out_channels,
            kk,
            npix,
            T::one(),
            &self.weight,
            kk as isize,
            1,
            &cols,
            npix as isize,
            1,
            T::one(),
            &mut out,
            npix as isize,
            1,
        );
        (
            Tensor {
                channels: self.out_channels,
                rows: or,
                cols: oc,
                data: out,
            },
            cols,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub channels: usize,
    pub momentum: T,
    /// Scale (gamma).
    pub scale: Vec<T>,
    /// Shift (beta).
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    BatchNorm(BatchNormLayer<T>),
    Relu,
    Upsample(usize),
}

/// Per-channel spatial statistics observed by one batch-norm layer in a
/// train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub layer: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Cache<T> {
    Conv { cols: Vec<T>, in_rows: usize, in_cols: usize },
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T> },
    Relu { out: Vec<T> },
    Upsample { in_rows: usize, in_cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad<T> {
    Conv { weight: Vec<T>, bias: Vec<T> },
    BatchNorm { scale: Vec<T>, shift: Vec<T> },
    None,
}

/// Gradient container congruent with a network's trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Trainable-gradient slices in the same order as
    /// [`Network::trainable`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Conv { weight, bias } => {
                    out.push(weight.as_slice());
                    out.push(bias.as_slice());
                }
                LayerGrad::BatchNorm { scale, shift } => {
                    out.push(scale.as_slice());
                    out.push(shift.as_slice());
                }
                LayerGrad::None => {}
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        self.slices().concat()
    }
}

/// Result of a single-pixel temporal-difference backward pass.
#[derive(Debug, Clone)]
pub struct Backprop<T> {
    pub loss: T,
    /// Q value at the action pixel (train-mode pass).
    pub q: T,
    pub grads: Gradients<T>,
    pub stats: Vec<BatchStats<T>>,
}

/// Bilinear sampling table for one axis (half-pixel centers, edge clamp).
fn upsample_axis(input: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// One fully convolutional Q-network: parameters plus batch-norm running
/// moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// He-normal conv weights (fan-in scaled), zero biases, unit batch-norm
    /// scale and zero shift; deterministic per seed.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layers
            .iter()
            .map(|spec| match *spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let weight = (0..out_channels * fan_in)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::from_f64(std * z)
                        })
                        .collect();
                    Layer::Conv(ConvLayer {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        weight,
                        bias: vec![T::zero(); out_channels],
                    })
                }
                LayerSpec::BatchNorm { channels, momentum } => Layer::BatchNorm(BatchNormLayer {
                    channels,
                    momentum: T::from_f64(momentum),
                    scale: vec![T::one(); channels],
                    shift: vec![T::zero(); channels],
                    running_mean: vec![T::zero(); channels],
                    running_var: vec![T::one(); channels],
                }),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Upsample { factor } => Layer::Upsample(factor),
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Trainable parameters: per conv its weights then bias, per batch norm
    /// its scale then shift.
    pub fn trainable(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::BatchNorm(b) => {
                    out.push(b.scale.as_slice());
                    out.push(b.shift.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(c.weight.as_mut_slice());
                    out.push(c.bias.as_mut_slice());
                }
                Layer::BatchNorm(b) => {
                    out.push(b.scale.as_mut_slice());
                    out.push(b.shift.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|s| s.len()).sum()
    }

    /// Every stored value (trainable entries plus running moments) in
    /// checkpoint order.
    pub fn state_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::BatchNorm(b) => {
                    out.push(b.scale.as_slice());
                    out.push(b.shift.as_slice());
                    out.push(b.running_mean.as_slice());
                    out.push(b.running_var.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub(crate) fn state_slices_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.scale);
                    out.push(&mut b.shift);
                    out.push(&mut b.running_mean);
                    out.push(&mut b.running_var);
                }
                _ => {}
            }
        }
        out
    }

    /// Bias of the output convolution.
    pub fn output_bias_mut(&mut self) -> &mut T {
        let conv = self
            .layers
            .iter_mut()
            .rev()
            .find_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .expect("validated architecture ends in a conv");
        &mut conv.bias[0]
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        Network {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) => Layer::Conv(ConvLayer {
                        in_channels: c.in_channels,
                        out_channels: c.out_channels,
                        kernel: c.kernel,
                        stride: c.stride,
                        padding: c.padding,
                        weight: conv(&c.weight),
                        bias: conv(&c.bias),
                    }),
                    Layer::BatchNorm(b) => Layer::BatchNorm(BatchNormLayer {
                        channels: b.channels,
                        momentum: U::from_f64(b.momentum.as_f64()),
                        scale: conv(&b.scale),
                        shift: conv(&b.shift),
                        running_mean: conv(&b.running_mean),
                        running_var: conv(&b.running_var),
                    }),
                    Layer::Relu => Layer::Relu,
                    Layer::Upsample(f) => Layer::Upsample(*f),
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels != self.arch.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {}",
                self.arch.input_channels, x.channels
            )));
        }
        let out = self.arch.output_size(x.rows, x.cols)?;
        if out != (x.rows, x.cols) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} input maps to {}x{} output",
                x.rows, x.cols, out.0, out.1
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        mut caches: Option<&mut Vec<Cache<T>>>,
    ) -> Result<(Tensor<T>, Vec<BatchStats<T>>)> {
        self.check_input(x)?;
        let mut stats = Vec::new();
        let mut cur = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Conv(conv) => {
                    let (in_rows, in_cols) = (cur.rows, cur.cols);
                    let (out, cols) = conv.forward(&cur);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Conv {
                            cols,
                            in_rows,
                            in_cols,
                        });
                    }
                    out
                }
                Layer::BatchNorm(bn) => {
                    let n = cur.plane_len();
                    let nt = T::from_f64(n as f64);
                    let eps = T::from_f64(BN_EPS);
                    let mut means = Vec::with_capacity(bn.channels);
                    let mut vars = Vec::with_capacity(bn.channels);
                    let mut inv_stds = Vec::with_capacity(bn.channels);
                    let mut xhat_all = if caches.is_some() {
                        Vec::with_capacity(cur.data.len())
                    } else {
                        Vec::new()
                    };
                    for c in 0..bn.channels {
                        let plane = &mut cur.data[c * n..(c + 1) * n];
                        let (mean, var) = match mode {
                            Mode::Train => {
                                let mean = plane.iter().copied().sum::<T>() / nt;
                                let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
                                (mean, var)
                            }
                            Mode::Eval => (bn.running_mean[c], bn.running_var[c]),
                        };
                        let inv_std = T::one() / (var + eps).sqrt();
                        for v in plane.iter_mut() {
                            let xhat = (*v - mean) * inv_std;
                            if caches.is_some() {
                                xhat_all.push(xhat);
                            }
                            *v = bn.scale[c] * xhat + bn.shift[c];
                        }
                        means.push(mean);
                        vars.push(var);
                        inv_stds.push(inv_std);
                    }
                    if mode == Mode::Train {
                        stats.push(BatchStats {
                            layer: li,
                            mean: means,
                            var: vars,
                        });
                    }
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::BatchNorm {
                            xhat: xhat_all,
                            inv_std: inv_stds,
                        });
                    }
                    cur
                }
                Layer::Relu => {
                    for v in cur.data.iter_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Relu { out: cur.data.clone() });
                    }
                    cur
                }
                Layer::Upsample(f) => {
                    let rt = upsample_axis(cur.rows, *f);
                    let ct = upsample_axis(cur.cols, *f);
                    let (or, oc) = (rt.len(), ct.len());
                    let mut out = Vec::with_capacity(cur.channels * or * oc);
                    for c in 0..cur.channels {
                        let plane = &cur.data[c * cur.plane_len()..(c + 1) * cur.plane_len()];
                        for &(r0, r1, wr) in &rt {
                            let wr = T::from_f64(wr);
                            for &(c0, c1, wc) in &ct {
                                let wc = T::from_f64(wc);
                                let a = plane[r0 * cur.cols + c0];
                                let b = plane[r0 * cur.cols + c1];
                                let d = plane[r1 * cur.cols + c0];
                                let e = plane[r1 * cur.cols + c1];
                                let top = a + (b - a) * wc;
                                let bottom = d + (e - d) * wc;
                                out.push(top + (bottom - top) * wr);
                            }
                        }
                    }
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Upsample {
                            in_rows: cur.rows,
                            in_cols: cur.cols,
                        });
                    }
                    Tensor {
                        channels: cur.channels,
                        rows: or,
                        cols: oc,
                        data: out,
                    }
                }
            };
        }
        Ok((cur, stats))
    }

    /// Side-effect-free forward pass. In train mode the batch statistics
    /// are returned for [`Network::apply_batch_stats`].
    pub fn forward_with_stats(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<BatchStats<T>>)> {
        self.run(x, mode, None)
    }

    /// Eval-mode forward using the running moments.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, Mode::Eval, None)?.0)
    }

    /// Forward pass; train mode also folds the batch statistics into the
    /// running moments.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, stats) = self.run(x, mode, None)?;
        self.apply_batch_stats(&stats)?;
        Ok(out)
    }

    /// `running <- (1 - momentum) * running + momentum * batch` for every
    /// batch-norm layer.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        for s in stats {
            let Some(Layer::BatchNorm(bn)) = self.layers.get_mut(s.layer) else {
                return Err(Error::LayoutMismatch(format!("layer {} is not a batch norm", s.layer)));
            };
            let m = bn.momentum;
            for c in 0..bn.channels {
                bn.running_mean[c] = (T::one() - m) * bn.running_mean[c] + m * s.mean[c];
                bn.running_var[c] = (T::one() - m) * bn.running_var[c] + m * s.var[c];
            }
        }
        Ok(())
    }

    /// Squared TD error at one output pixel, `(target - Q[u, v])^2`, with
    /// exact gradients of every trainable scalar. Only that pixel carries
    /// loss.
    pub fn backward(&self, x: &Tensor<T>, pixel: (usize, usize), target: T) -> Result<Backprop<T>> {
        self.backward_weighted(x, &[(pixel, T::one())], target)
    }

    /// As [`Network::backward`] but with the prediction defined as a fixed
    /// linear combination of output pixels (used when the action pixel is
    /// read through a resampling of the output map).
    pub fn backward_weighted(&self, x: &Tensor<T>, taps: &[((usize, usize), T)], target: T) -> Result<Backprop<T>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let (out, stats) = self.run(x, Mode::Train, Some(&mut caches))?;
        for &((u, v), _) in taps {
            if u >= out.rows || v >= out.cols {
                return Err(Error::PixelOutOfRange {
                    u,
                    v,
                    rows: out.rows,
                    cols: out.cols,
                });
            }
        }
        let q = taps
            .iter()
            .fold(T::zero(), |acc, &((u, v), w)| acc + w * out.data[u * out.cols + v]);
        let err = target - q;
        let loss = err * err;
        let dq = T::from_f64(-2.0) * err;

        let mut grad = vec![T::zero(); out.data.len()];
        for &((u, v), w) in taps {
            grad[u * out.cols + v] = grad[u * out.cols + v] + dq * w;
        }
        let (mut rows, mut cols) = (out.rows, out.cols);
        let mut layer_grads: Vec<LayerGrad<T>> = vec![LayerGrad::None; self.layers.len()];

        for (li, (layer, cache)) in self.layers.iter().zip(caches.iter()).enumerate().rev() {
            match (layer, cache) {
                (Layer::Upsample(f), Cache::Upsample { in_rows, in_cols }) => {
                    let rt = upsample_axis(*in_rows, *f);
                    let ct = upsample_axis(*in_cols, *f);
                    let channels = grad.len() / (rows * cols);
                    let mut dx = vec![T::zero(); channels * in_rows * in_cols];
                    for c in 0..channels {
                        let plane = &mut dx[c * in_rows * in_cols..(c + 1) * in_rows * in_cols];
                        for (oy, &(r0, r1, wr)) in rt.iter().enumerate() {
                            for (ox, &(c0, c1, wc)) in ct.iter().enumerate() {
                                let g = grad[(c * rows + oy) * cols + ox];
                                if g == T::zero() {
                                    continue;
                                }
                                let wr = T::from_f64(wr);
                                let wc = T::from_f64(wc);
                                let one = T::one();
                                plane[r0 * in_cols + c0] = plane[r0 * in_cols + c0] + g * (one - wr) * (one - wc);
                                plane[r0 * in_cols + c1] = plane[r0 * in_cols + c1] + g * (one - wr) * wc;
                                plane[r1 * in_cols + c0] = plane[r1 * in_cols + c0] + g * wr * (one - wc);
                                plane[r1 * in_cols + c1] = plane[r1 * in_cols + c1] + g * wr * wc;
                            }
                        }
                    }
                    grad = dx;
                    rows = *in_rows;
                    cols = *in_cols;
                }
                (Layer::Relu, Cache::Relu { out }) => {
                    for (g, &o) in grad.iter_mut().zip(out) {
                        if o <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std }) => {
                    let n = rows * cols;
                    let nt = T::from_f64(n as f64);
                    let mut dscale = vec![T::zero(); bn.channels];
                    let mut dshift = vec![T::zero(); bn.channels];
                    for c in 0..bn.channels {
                        let g = &mut grad[c * n..(c + 1) * n];
                        let xh = &xhat[c * n..(c + 1) * n];
                        let sum_g: T = g.iter().copied().sum();
                        let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        dscale[c] = sum_gx;
                        dshift[c] = sum_g;
                        let k = bn.scale[c] * inv_std[c] / nt;
                        for (gi, &xi) in g.iter_mut().zip(xh) {
                            *gi = k * (nt * *gi - sum_g - xi * sum_gx);
                        }
                    }
                    layer_grads[li] = LayerGrad::BatchNorm {
                        scale: dscale,
                        shift: dshift,
                    };
                }
                (Layer::Conv(conv), Cache::Conv { cols: patches, in_rows, in_cols }) => {
                    let npix = rows * cols;
                    let kk = conv.patch_len();
                    let mut dw = vec![T::zero(); conv.out_channels * kk];
                    T::gemm(
                        conv.out_channels,
                        npix,
                        kk,
                        T::one(),
                        &grad,
                        npix as isize,
                        1,
                        patches,
                        1,
                        npix as isize,
                        T::zero(),
                        &mut dw,
                        kk as isize,
                        1,
                    );
                    let db = (0..conv.out_channels)
                        .map(|o| grad[o * npix..(o + 1) * npix].iter().copied().sum())
                        .collect();
                    layer_grads[li] = LayerGrad::Conv { weight: dw, bias: db };
                    if li > 0 {
                        let mut dcols = vec![T::zero(); kk * npix];
                        T::gemm(
                            kk,
                            conv.out_channels,
                            npix,
                            T::one(),
                            &conv.weight,
                            1,
                            kk as isize,
                            &grad,
                            npix as isize,
                            1,
                            T::zero(),
                            &mut dcols,
                            npix as isize,
                            1,
                        );
                        grad = if conv.is_pointwise() {
                            dcols
                        } else {
                            conv.col2im(&dcols, *in_rows, *in_cols, rows, cols)
                        };
                    }
                    rows = *in_rows;
                    cols = *in_cols;
                }
                _ => unreachable!("cache recorded for every layer in order"),
            }
        }
        Ok(Backprop {
            loss,
            q,
            grads: Gradients { layers: layer_grads },
            stats,
        })
    }

    fn check_congruent(&self, grads: &Gradients<T>) -> Result<()> {
        let ours = self.trainable();
        let theirs = grads.slices();
        if grads.layers.len() != self.layers.len()
            || ours.len() != theirs.len()
            || ours.iter().zip(&theirs).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ShapeMismatch("gradients are not congruent with the network".into()));
        }
        Ok(())
    }

    /// Plain SGD with L2 weight decay: `w <- w - lr * (g + weight_decay * w)`
    /// on conv weights and batch-norm scales; conv biases and batch-norm
    /// shifts take the undecayed step.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T, weight_decay: T) -> Result<()> {
        self.check_congruent(grads)?;
        let step = |w: &mut [T], g: &[T], decay: T| {
            for (wi, &gi) in w.iter_mut().zip(g) {
                *wi = *wi - lr * (gi + decay * *wi);
            }
        };
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer, g) {
                (Layer::Conv(c), LayerGrad::Conv { weight, bias }) => {
                    step(&mut c.weight, weight, weight_decay);
                    step(&mut c.bias, bias, T::zero());
                }
                (Layer::BatchNorm(b), LayerGrad::BatchNorm { scale, shift }) => {
                    step(&mut b.scale, scale, weight_decay);
                    step(&mut b.shift, shift, T::zero());
                }
                (Layer::Relu | Layer::Upsample(_), LayerGrad::None) => {}
                _ => return Err(Error::ShapeMismatch("gradient layer kind differs from network".into())),
            }
        }
        Ok(())
    }
}

/// Frozen copy of a current network, used only for bootstrap targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork<T> {
    net: Network<T>,
}

impl<T: Scalar> TargetNetwork<T> {
    pub fn from_current(current: &Network<T>) -> Self {
        Self { net: current.clone() }
    }

    /// Overwrites the target with a bit-exact copy of `current`, running
    /// moments included.
    pub fn sync(&mut self, current: &Network<T>) -> Result<()> {
        if current.architecture() != self.net.architecture() {
            return Err(Error::LayoutMismatch(format!(
                "cannot sync `{}` into `{}`",
                current.architecture(),
                self.net.architecture()
            )));
        }
        self.net.clone_from(current);
        Ok(())
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward_eval(x)
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }
}
