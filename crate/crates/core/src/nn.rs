//! Fixed-architecture convolutional decoder with hand-written reverse mode.
//!
//! Layout (side `S`, bottleneck `B`, `k = log2(S/B)` down/up blocks):
//! `[front linear F→F, lrelu]`, projection `F→S²` + lrelu, stem 3×3 conv
//! `1→8` + lrelu, `k` residual down blocks, `k` residual up blocks, 3×3 head
//! `8→1` + sigmoid. Activations are CHW. With `normalize` on, the projection
//! and every conv except the skips are followed by a per-channel
//! normalization with learned gain and shift.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, sqrt};
use crate::rng::SimRng;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {i}")));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// 1 for `x ≥ 0`, the slope otherwise.
pub fn leaky_relu_derivative(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// `y = W x + b`, `W` is `fout × fin` row-major.
pub fn linear_forward(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let fin = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * fin..(o + 1) * fin].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let fin = x.len();
    let mut dx = vec![0.0; fin];
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[o * fin..(o + 1) * fin];
        let drow = &mut dw[o * fin..(o + 1) * fin];
        for i in 0..fin {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

/// Geometry of a square-kernel convolution with "same" padding `k/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn out_size(&self, h: usize) -> usize {
        let p = self.k / 2;
        (h + 2 * p - self.k) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.cout
    }
}

/// CHW convolution of an `h × w` input.
pub fn conv2d_forward(s: &ConvShape, w: &[f64], b: &[f64], x: &[f64], h: usize, wd: usize) -> Vec<f64> {
    let (ho, wo) = (s.out_size(h), s.out_size(wd));
    let p = s.k / 2;
    let mut out = vec![0.0; s.cout * ho * wo];
    for co in 0..s.cout {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..s.cin {
            let xin = &x[ci * h * wd..(ci + 1) * h * wd];
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let wv = w[((co * s.cin + ci) * s.k + ky) * s.k + kx];
                    for oy in 0..ho {
                        let iy = (oy * s.stride + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xin[iy as usize * wd..(iy as usize + 1) * wd];
                        let orow = &mut plane[oy * wo..(oy + 1) * wo];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * s.stride + kx) as isize - p as isize;
                            if ix >= 0 && ix < wd as isize {
                                *o += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates `dW`, `db` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    s: &ConvShape,
    w: &[f64],
    x: &[f64],
    h: usize,
    wd: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let (ho, wo) = (s.out_size(h), s.out_size(wd));
    let p = s.k / 2;
    let mut dx = vec![0.0; s.cin * h * wd];
    for co in 0..s.cout {
        let g = &dy[co * ho * wo..(co + 1) * ho * wo];
        db[co] += g.iter().sum::<f64>();
        for ci in 0..s.cin {
            let xin = &x[ci * h * wd..(ci + 1) * h * wd];
            let dxin = &mut dx[ci * h * wd..(ci + 1) * h * wd];
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let widx = ((co * s.cin + ci) * s.k + ky) * s.k + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for oy in 0..ho {
                        let iy = (oy * s.stride + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * wd;
                        for ox in 0..wo {
                            let ix = (ox * s.stride + kx) as isize - p as isize;
                            if ix >= 0 && ix < wd as isize {
                                let gv = g[oy * wo + ox];
                                acc += gv * xin[base + ix as usize];
                                dxin[base + ix as usize] += gv * wv;
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour ×2 upsampling of `c` planes of `h × w`.
pub fn upsample2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(ch * h2 + y) * w2 + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                dx[(ch * h + y / 2) * w + xx / 2] += dy[(ch * h2 + y) * w2 + xx];
            }
        }
    }
    dx
}

/// Per-channel normalization of a CHW tensor (batch of one) with affine gain
/// and shift. Returns the output, the normalized values and `1/σ` per channel.
pub fn channel_norm_forward(x: &[f64], c: usize, gain: &[f64], shift: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len() / c;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let xs = &x[ch * n..(ch + 1) * n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / sqrt(var + NORM_EPS);
        inv_std[ch] = is;
        for i in 0..n {
            let h = (xs[i] - mean) * is;
            xhat[ch * n + i] = h;
            y[ch * n + i] = gain[ch] * h + shift[ch];
        }
    }
    (y, xhat, inv_std)
}

/// Reverse of [`channel_norm_forward`]; accumulates into `dgain`/`dshift`.
pub fn channel_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dshift: &mut [f64],
) -> Vec<f64> {
    let c = inv_std.len();
    let n = xhat.len() / c;
    let mut dx = vec![0.0; xhat.len()];
    for ch in 0..c {
        let r = ch * n..(ch + 1) * n;
        let (g, h) = (&dy[r.clone()], &xhat[r.clone()]);
        let sg: f64 = g.iter().sum();
        let sgh: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
        dgain[ch] += sgh;
        dshift[ch] += sg;
        let k = gain[ch] * inv_std[ch] / n as f64;
        for (i, o) in dx[r].iter_mut().enumerate() {
            *o = k * (n as f64 * g[i] - sg - h[i] * sgh);
        }
    }
    dx
}

/// Decoder geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub feature_len: usize,
    pub side: usize,
    pub bottleneck: usize,
    /// Extra `F→F` linear + lrelu in front (the classical stand-in for the circuit).
    pub front_linear: bool,
    /// Per-channel normalization after the projection and every non-skip conv.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl DecoderConfig {
    /// Bottleneck 4 for full-size outputs, 2 for reduced geometries.
    pub fn new(feature_len: usize, side: usize) -> Self {
        let bottleneck = if side >= 64 { 4 } else { 2 };
        DecoderConfig { feature_len, side, bottleneck, front_linear: false, normalize: true }
    }

    pub fn with_front_linear(mut self, on: bool) -> Self {
        self.front_linear = on;
        self
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn num_blocks(&self) -> Result<usize> {
        let ok = self.feature_len > 0
            && self.bottleneck > 0
            && self.side > self.bottleneck
            && self.side.is_multiple_of(self.bottleneck)
            && (self.side / self.bottleneck).is_power_of_two();
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "decoder needs side/bottleneck to be a power of two ≥ 2 (side {}, bottleneck {})",
                self.side, self.bottleneck
            )));
        }
        Ok((self.side / self.bottleneck).trailing_zeros() as usize)
    }

    /// Channels after the stem and after each down block.
    pub fn channels(&self) -> Result<Vec<usize>> {
        let k = self.num_blocks()?;
        let mut ch = vec![8];
        for i in 0..k {
            ch.push([16, 32].get(i).copied().unwrap_or(32));
        }
        Ok(ch)
    }
}

pub fn linear_param_count(fin: usize, fout: usize) -> usize {
    fin * fout + fout
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Conv {
    shape: ConvShape,
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    fin: usize,
    fout: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Norm {
    gain: usize,
    shift: usize,
    channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Block {
    conv1: Conv,
    norm1: Option<Norm>,
    conv2: Conv,
    norm2: Option<Norm>,
    skip: Conv,
    up: bool,
}

/// Weight and bias tensors in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ClassicalParams {
    pub fn zeros_like(&self) -> Self {
        ClassicalParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data()).map(|x| x * x).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flat_map(|t| t.data_mut()).for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &ClassicalParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }
}

struct Builder {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    normalize: bool,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize]) -> usize {
        self.names.push(name);
        self.tensors.push(Tensor::zeros(shape));
        self.tensors.len() - 1
    }

    fn dense(&mut self, name: &str, fin: usize, fout: usize) -> Dense {
        let w = self.push(format!("{name}.weight"), &[fout, fin]);
        let b = self.push(format!("{name}.bias"), &[fout]);
        Dense { fin, fout, w, b }
    }

    fn conv(&mut self, name: &str, shape: ConvShape) -> Conv {
        let w = self.push(format!("{name}.weight"), &[shape.cout, shape.cin, shape.k, shape.k]);
        let b = self.push(format!("{name}.bias"), &[shape.cout]);
        Conv { shape, w, b }
    }

    fn norm(&mut self, name: &str, channels: usize) -> Option<Norm> {
        self.normalize.then(|| {
            let gain = self.push(format!("{name}.weight"), &[channels]);
            let shift = self.push(format!("{name}.bias"), &[channels]);
            Norm { gain, shift, channels }
        })
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, up: bool) -> Block {
        let stride = if up { 1 } else { 2 };
        let conv1 = self.conv(&format!("{name}.conv1"), ConvShape { cin, cout, k: 3, stride });
        let norm1 = self.norm(&format!("{name}.norm1"), cout);
        let conv2 = self.conv(&format!("{name}.conv2"), ConvShape { cin: cout, cout, k: 3, stride: 1 });
        let norm2 = self.norm(&format!("{name}.norm2"), cout);
        let skip = self.conv(&format!("{name}.skip"), ConvShape { cin, cout, k: 1, stride });
        Block { conv1, norm1, conv2, norm2, skip, up }
    }
}

/// Gradient slices of a layer; its bias tensor always directly follows the weight.
fn weight_bias(grads: &mut ClassicalParams, w: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads.tensors.split_at_mut(w + 1);
    (a[w].data_mut(), b[0].data_mut())
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    features: Vec<f64>,
    front_pre: Option<Vec<f64>>,
    proj_in: Vec<f64>,
    proj_pre: Vec<f64>,
    proj_norm: Option<NormCache>,
    stem_in: Vec<f64>,
    stem_pre: Vec<f64>,
    stem_norm: Option<NormCache>,
    blocks: Vec<BlockCache>,
    head_in: Vec<f64>,
    head_norm: Option<NormCache>,
    output: Vec<f64>,
}

impl ForwardCache {
    /// Sign of every leaky-ReLU pre-activation; finite-difference checks use it
    /// to detect perturbations that cross a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut parts: Vec<&[f64]> = vec![&self.proj_pre, &self.stem_pre];
        if let Some(f) = &self.front_pre {
            parts.push(f);
        }
        for b in &self.blocks {
            parts.push(&b.pre1);
            parts.push(&b.pre_sum);
        }
        parts.into_iter().flatten().map(|&x| x >= 0.0).collect()
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    /// Block input (after upsampling for up blocks), its size and the raw input size.
    input: Vec<f64>,
    size: usize,
    raw_size: usize,
    pre1: Vec<f64>,
    norm1: Option<NormCache>,
    act1: Vec<f64>,
    norm2: Option<NormCache>,
    pre_sum: Vec<f64>,
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// The decoder `F_ν`: architecture plus parameters.
#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    front: Option<Dense>,
    proj: Dense,
    proj_norm: Option<Norm>,
    stem: Conv,
    stem_norm: Option<Norm>,
    blocks: Vec<Block>,
    head: Conv,
    head_norm: Option<Norm>,
    params: ClassicalParams,
    version: u64,
}

/// Equal architecture and parameters; cache versions are ignored.
impl PartialEq for Decoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Decoder {
    /// All parameters zero.
    pub fn zeros(config: DecoderConfig) -> Result<Self> {
        let ch = config.channels()?;
        let f = config.feature_len;
        let mut b = Builder { names: Vec::new(), tensors: Vec::new(), normalize: config.normalize };
        let front = config.front_linear.then(|| b.dense("front", f, f));
        let proj = b.dense("projection", f, config.side * config.side);
        let proj_norm = b.norm("projection.norm", 1);
        let stem = b.conv("stem", ConvShape { cin: 1, cout: ch[0], k: 3, stride: 1 });
        let stem_norm = b.norm("stem.norm", ch[0]);
        let mut blocks = Vec::new();
        for i in 0..ch.len() - 1 {
            blocks.push(b.block(&format!("down{i}"), ch[i], ch[i + 1], false));
        }
        for i in (0..ch.len() - 1).rev() {
            blocks.push(b.block(&format!("up{}", ch.len() - 2 - i), ch[i + 1], ch[i], true));
        }
        let head = b.conv("head", ConvShape { cin: ch[0], cout: 1, k: 3, stride: 1 });
        let head_norm = b.norm("head.norm", 1);
        Ok(Decoder {
            config,
            front,
            proj,
            proj_norm,
            stem,
            stem_norm,
            blocks,
            head,
            head_norm,
            params: ClassicalParams { names: b.names, tensors: b.tensors },
            version: 0,
        })
    }

    /// Xavier-normal weights (variance `2/(fan_in+fan_out)`), zero biases,
    /// unit normalization gains.
    pub fn init(config: DecoderConfig, rng: &mut SimRng) -> Result<Self> {
        let mut d = Self::zeros(config)?;
        for n in d.norms() {
            d.params.tensors[n.gain].data_mut().fill(1.0);
        }
        for layer in d.weight_layers() {
            let (w, fan_in, fan_out) = layer;
            let std = sqrt(2.0 / (fan_in + fan_out) as f64);
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in d.params.tensors[w].data_mut() {
                *x = normal.sample(rng);
            }
        }
        Ok(d)
    }

    fn weight_layers(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let dense = |d: &Dense| (d.w, d.fin, d.fout);
        let conv = |c: &Conv| (c.w, c.shape.cin * c.shape.k * c.shape.k, c.shape.cout * c.shape.k * c.shape.k);
        if let Some(f) = &self.front {
            out.push(dense(f));
        }
        out.push(dense(&self.proj));
        out.push(conv(&self.stem));
        for b in &self.blocks {
            out.extend([conv(&b.conv1), conv(&b.conv2), conv(&b.skip)]);
        }
        out.push(conv(&self.head));
        out
    }

    fn norms(&self) -> Vec<Norm> {
        let mut out: Vec<Norm> = self.proj_norm.into_iter().chain(self.stem_norm).collect();
        for b in &self.blocks {
            out.extend(b.norm1.into_iter().chain(b.norm2));
        }
        out.extend(self.head_norm);
        out
    }

    fn norm_fwd(&self, n: &Option<Norm>, x: Vec<f64>) -> (Vec<f64>, Option<NormCache>) {
        match n {
            None => (x, None),
            Some(n) => {
                let (y, xhat, inv_std) = channel_norm_forward(&x, n.channels, self.t(n.gain), self.t(n.shift));
                (y, Some(NormCache { xhat, inv_std }))
            }
        }
    }

    fn norm_bwd(&self, n: &Option<Norm>, c: &Option<NormCache>, d: Vec<f64>, grads: &mut ClassicalParams) -> Vec<f64> {
        match (n, c) {
            (Some(n), Some(c)) => {
                let (dg, ds) = weight_bias(grads, n.gain);
                channel_norm_backward(&c.xhat, &c.inv_std, self.t(n.gain), &d, dg, ds)
            }
            _ => d,
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ClassicalParams {
        &self.params
    }

    /// Mutable access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut ClassicalParams {
        self.version += 1;
        &mut self.params
    }

    /// Replaces all parameters, checking names and shapes.
    pub fn set_params(&mut self, params: ClassicalParams) -> Result<()> {
        if params.names != self.params.names
            || params.tensors.iter().zip(&self.params.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::ShapeMismatch("classical parameter layout differs from the decoder".into()));
        }
        *self.params_mut() = params;
        Ok(())
    }

    pub fn front_param_count(&self) -> usize {
        self.front.map_or(0, |d| linear_param_count(d.fin, d.fout))
    }

    pub fn projection_param_count(&self) -> usize {
        linear_param_count(self.proj.fin, self.proj.fout)
    }

    /// Everything after the projection.
    pub fn trunk_param_count(&self) -> usize {
        self.params.count() - self.front_param_count() - self.projection_param_count()
    }

    fn t(&self, i: usize) -> &[f64] {
        self.params.tensors[i].data()
    }

    fn conv_fwd(&self, c: &Conv, x: &[f64], size: usize) -> Vec<f64> {
        conv2d_forward(&c.shape, self.t(c.w), self.t(c.b), x, size, size)
    }

    /// Image of side `S` (row-major) in `[0,1]`, with the cache for [`Decoder::backward`].
    pub fn forward(&self, features: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if features.len() != self.config.feature_len {
            return Err(Error::LengthMismatch { what: "decoder input", expected: self.config.feature_len, actual: features.len() });
        }
        let (front_pre, proj_in) = match &self.front {
            Some(d) => {
                let pre = linear_forward(self.t(d.w), self.t(d.b), features);
                let act = pre.iter().map(|&x| leaky_relu(x)).collect();
                (Some(pre), act)
            }
            None => (None, features.to_vec()),
        };
        let (proj_pre, proj_norm) = self.norm_fwd(&self.proj_norm, linear_forward(self.t(self.proj.w), self.t(self.proj.b), &proj_in));
        let stem_in: Vec<f64> = proj_pre.iter().map(|&x| leaky_relu(x)).collect();
        let mut size = self.config.side;
        let (stem_pre, stem_norm) = self.norm_fwd(&self.stem_norm, self.conv_fwd(&self.stem, &stem_in, size));
        let mut x: Vec<f64> = stem_pre.iter().map(|&v| leaky_relu(v)).collect();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let raw_size = size;
            let input = if b.up {
                size *= 2;
                upsample2_forward(&x, b.conv1.shape.cin, raw_size, raw_size)
            } else {
                x
            };
            let (pre1, norm1) = self.norm_fwd(&b.norm1, self.conv_fwd(&b.conv1, &input, size));
            let out_size = b.conv1.shape.out_size(size);
            let act1: Vec<f64> = pre1.iter().map(|&v| leaky_relu(v)).collect();
            let (main, norm2) = self.norm_fwd(&b.norm2, self.conv_fwd(&b.conv2, &act1, out_size));
            let skip = self.conv_fwd(&b.skip, &input, size);
            let pre_sum: Vec<f64> = main.iter().zip(&skip).map(|(a, c)| a + c).collect();
            x = pre_sum.iter().map(|&v| leaky_relu(v)).collect();
            blocks.push(BlockCache { input, size, raw_size, pre1, norm1, act1, norm2, pre_sum });
            size = out_size;
        }
        let (head_pre, head_norm) = self.norm_fwd(&self.head_norm, self.conv_fwd(&self.head, &x, size));
        let output: Vec<f64> = head_pre.iter().map(|&v| sigmoid(v)).collect();
        let cache = ForwardCache {
            version: self.version,
            features: features.to_vec(),
            front_pre,
            proj_in,
            proj_pre,
            proj_norm,
            stem_in,
            stem_pre,
            stem_norm,
            blocks,
            head_in: x,
            head_norm,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Gradients of `Σ output_grad · output` with respect to the input features and all parameters.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(Vec<f64>, ClassicalParams)> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if output_grad.len() != cache.output.len() {
            return Err(Error::LengthMismatch { what: "output gradient", expected: cache.output.len(), actual: output_grad.len() });
        }
        let mut grads = self.params.zeros_like();
        // sigmoid'
        let mut d: Vec<f64> = output_grad.iter().zip(&cache.output).map(|(gy, y)| gy * y * (1.0 - y)).collect();
        let side = self.config.side;
        d = self.norm_bwd(&self.head_norm, &cache.head_norm, d, &mut grads);
        {
            let (dw, db) = weight_bias(&mut grads, self.head.w);
            d = conv2d_backward(&self.head.shape, self.t(self.head.w), &cache.head_in, side, side, &d, dw, db);
        }
        for (b, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            d.iter_mut().zip(&bc.pre_sum).for_each(|(x, p)| *x *= leaky_relu_derivative(*p));
            let out_size = b.conv1.shape.out_size(bc.size);
            let (dw, db) = weight_bias(&mut grads, b.skip.w);
            let mut din = conv2d_backward(&b.skip.shape, self.t(b.skip.w), &bc.input, bc.size, bc.size, &d, dw, db);
            let dm = self.norm_bwd(&b.norm2, &bc.norm2, d, &mut grads);
            let (dw, db) = weight_bias(&mut grads, b.conv2.w);
            let mut da = conv2d_backward(&b.conv2.shape, self.t(b.conv2.w), &bc.act1, out_size, out_size, &dm, dw, db);
            da.iter_mut().zip(&bc.pre1).for_each(|(x, p)| *x *= leaky_relu_derivative(*p));
            let da = self.norm_bwd(&b.norm1, &bc.norm1, da, &mut grads);
            let (dw, db) = weight_bias(&mut grads, b.conv1.w);
            let d1 = conv2d_backward(&b.conv1.shape, self.t(b.conv1.w), &bc.input, bc.size, bc.size, &da, dw, db);
            din.iter_mut().zip(&d1).for_each(|(x, y)| *x += y);
            d = if b.up { upsample2_backward(&din, b.conv1.shape.cin, bc.raw_size, bc.raw_size) } else { din };
        }
        d.iter_mut().zip(&cache.stem_pre).for_each(|(x, p)| *x *= leaky_relu_derivative(*p));
        d = self.norm_bwd(&self.stem_norm, &cache.stem_norm, d, &mut grads);
        {
            let (dw, db) = weight_bias(&mut grads, self.stem.w);
            d = conv2d_backward(&self.stem.shape, self.t(self.stem.w), &cache.stem_in, side, side, &d, dw, db);
        }
        d.iter_mut().zip(&cache.proj_pre).for_each(|(x, p)| *x *= leaky_relu_derivative(*p));
        d = self.norm_bwd(&self.proj_norm, &cache.proj_norm, d, &mut grads);
        {
            let (dw, db) = weight_bias(&mut grads, self.proj.w);
            d = linear_backward(self.t(self.proj.w), &cache.proj_in, &d, dw, db);
        }
        if let (Some(f), Some(pre)) = (&self.front, &cache.front_pre) {
            d.iter_mut().zip(pre).for_each(|(x, p)| *x *= leaky_relu_derivative(*p));
            let (dw, db) = weight_bias(&mut grads, f.w);
            d = linear_backward(self.t(f.w), &cache.features, &d, dw, db);
        }
        Ok((d, grads))
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction over a fixed list of parameter blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!("adam holds {} blocks, got {} / {}", self.m.len(), params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::ShapeMismatch(format!("adam block {i} size {}", self.m[i].len())));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for j in 0..p.len() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = beta1 * *m + (1.0 - beta1) * g[j];
                *v = beta2 * *v + (1.0 - beta2) * g[j] * g[j];
                p[j] -= lr * (*m / c1) / (sqrt(*v / c2) + eps);
            }
        }
        Ok(())
    }
}

/// Quantum angles `scale · N(0, N_Q)`.
pub fn init_quantum_angles(count: usize, width: usize, scale: f64, rng: &mut SimRng) -> Vec<f64> {
    let normal = Normal::new(0.0, sqrt(width as f64)).expect("finite std");
    (0..count).map(|_| scale * normal.sample(rng)).collect()
}

/// Uniform angles in `[0, 2π)`.
pub fn uniform_angles(count: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..count).map(|_| rng.random::<f64>() * crate::math::TAU).collect()
}
