//! Convolution layers with hand-written backward passes, the Adam optimizer
//! and parameter digests.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::{matmul, matmul_a_bt, matmul_at_b, Scalar};
use crate::tensor::Tensor3;

/// Anything that owns trainable tensors.
///
/// Both visitors must walk tensors in the same fixed order; the optimizer
/// state and the serialized blob layout depend on it.
pub trait Module<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&[T]));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T]));

    fn zero_grad(&mut self)
    where
        T: Scalar,
    {
        self.visit_params_mut(&mut |_, g| g.iter_mut().for_each(|v| *v = T::zero()));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }
}

/// Hex SHA-256 over the little-endian parameter bytes, in visit order.
pub fn param_digest<T: Scalar>(module: &dyn Module<T>) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    module.visit_params(&mut |p| {
        buf.clear();
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for &v in p {
            v.write_le(&mut buf);
        }
        hasher.update(&buf);
    });
    hex::encode(hasher.finalize())
}

pub fn params_to_bytes<T: Scalar>(module: &dyn Module<T>) -> Vec<u8> {
    let mut out = Vec::new();
    module.visit_params(&mut |p| {
        for &v in p {
            v.write_le(&mut out);
        }
    });
    out
}

pub fn params_from_bytes<T: Scalar>(module: &mut dyn Module<T>, bytes: &[u8]) -> Result<()> {
    let width = std::mem::size_of::<T>();
    let expected = module.param_count() * width;
    if bytes.len() != expected {
        return Err(Error::Input(format!(
            "parameter blob has {} bytes, module expects {expected}",
            bytes.len()
        )));
    }
    let mut offset = 0;
    module.visit_params_mut(&mut |p, _| {
        for v in p.iter_mut() {
            *v = T::read_le(&bytes[offset..offset + width]);
            offset += width;
        }
    });
    Ok(())
}

/// 2-D convolution over a single `(C, H, W)` input, lowered to a matrix
/// product via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out_channels, in_channels * kernel * kernel)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
}

/// Forward-pass state needed to backpropagate through a [`Conv2d`].
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let k = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * k],
            bias: vec![T::zero(); out_channels],
            grad_weight: vec![T::zero(); out_channels * k],
            grad_bias: vec![T::zero(); out_channels],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he_init<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        for w in conv.weight.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = T::lit(z * std);
        }
        conv
    }

    /// Kernel that copies every input channel to the same output channel.
    pub fn identity(channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "identity kernel needs an odd size");
        let mut conv = Self::zeros(channels, channels, kernel, 1, kernel / 2);
        let kk = kernel * kernel;
        let centre = (kernel / 2) * kernel + kernel / 2;
        for c in 0..channels {
            conv.weight[c * channels * kk + c * kk + centre] = T::one();
        }
        conv
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, height: usize, width: usize) -> (usize, usize) {
        let oh = (height + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (width + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn check_input(&self, x: &Tensor3<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Config(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        if x.height() + 2 * self.padding < self.kernel || x.width() + 2 * self.padding < self.kernel {
            return Err(Error::Input(format!(
                "input {}x{} smaller than kernel {}",
                x.height(),
                x.width(),
                self.kernel
            )));
        }
        Ok(())
    }

    fn im2col(&self, x: &Tensor3<T>, oh: usize, ow: usize) -> Vec<T> {
        let (c_in, h, w) = x.shape();
        let k = self.kernel;
        let p = oh * ow;
        let mut cols = vec![T::zero(); self.patch_len() * p];
        let src = x.data();
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], in_shape: (usize, usize, usize), oh: usize, ow: usize) -> Tensor3<T> {
        let (c_in, h, w) = in_shape;
        let k = self.kernel;
        let p = oh * ow;
        let mut out = Tensor3::zeros(c_in, h, w);
        let dst = out.data_mut();
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (c * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn apply(&self, cols: &[T], oh: usize, ow: usize) -> Tensor3<T> {
        let p = oh * ow;
        let mut out = vec![T::zero(); self.out_channels * p];
        matmul(
            self.out_channels,
            self.patch_len(),
            p,
            &self.weight,
            cols,
            &mut out,
            false,
        );
        for (o, row) in out.chunks_mut(p).enumerate() {
            let b = self.bias[o];
            row.iter_mut().for_each(|v| *v += b);
        }
        Tensor3::from_vec(self.out_channels, oh, ow, out).expect("conv output shape")
    }

    pub fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        let (oh, ow) = self.output_hw(x.height(), x.width());
        let cols = self.im2col(x, oh, ow);
        Ok(self.apply(&cols, oh, ow))
    }

    pub fn forward_cached(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, ConvCache<T>)> {
        self.check_input(x)?;
        let (oh, ow) = self.output_hw(x.height(), x.width());
        let cols = self.im2col(x, oh, ow);
        let out = self.apply(&cols, oh, ow);
        Ok((
            out,
            ConvCache {
                cols,
                in_shape: x.shape(),
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates parameter gradients and, if asked, returns the gradient
    /// with respect to the input.
    pub fn backward(&mut self, grad_out: &Tensor3<T>, cache: &ConvCache<T>, input_grad: bool) -> Option<Tensor3<T>> {
        let (oh, ow) = cache.out_hw;
        let p = oh * ow;
        let k = self.patch_len();
        debug_assert_eq!(grad_out.shape(), (self.out_channels, oh, ow));
        let g = grad_out.data();
        matmul_a_bt(self.out_channels, p, k, g, &cache.cols, &mut self.grad_weight, true);
        for (o, row) in g.chunks(p).enumerate() {
            let s: T = row.iter().copied().sum();
            self.grad_bias[o] += s;
        }
        if !input_grad {
            return None;
        }
        let mut gcols = vec![T::zero(); k * p];
        matmul_at_b(k, self.out_channels, p, &self.weight, g, &mut gcols, false);
        Some(self.col2im(&gcols, cache.in_shape, oh, ow))
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&[T])) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        f(&mut self.weight, &mut self.grad_weight);
        f(&mut self.bias, &mut self.grad_bias);
    }
}

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu<T: Scalar>(x: &mut Tensor3<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for v in x.data_mut() {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Backward through [`leaky_relu`] given its output (sign is preserved).
pub fn leaky_relu_backward<T: Scalar>(grad: &mut Tensor3<T>, output: &Tensor3<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g *= slope;
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update over `modules` (in a fixed order), then zeroes their grads.
    pub fn step(&mut self, modules: &mut [&mut dyn Module<T>]) {
        self.step += 1;
        let bc1 = T::one() - self.beta1.powi(self.step);
        let bc2 = T::one() - self.beta2.powi(self.step);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let mut slot = 0usize;
        let first = &mut self.first;
        let second = &mut self.second;
        for module in modules.iter_mut() {
            module.visit_params_mut(&mut |p, g| {
                if first.len() <= slot {
                    first.push(vec![T::zero(); p.len()]);
                    second.push(vec![T::zero(); p.len()]);
                }
                let m = &mut first[slot];
                let v = &mut second[slot];
                for i in 0..p.len() {
                    let gi = g[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * gi;
                    v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    g[i] = T::zero();
                }
                slot += 1;
            });
        }
    }
}
