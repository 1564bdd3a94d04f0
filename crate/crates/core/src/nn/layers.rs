//! Layers with explicit forward caches and backward passes.
//!
//! Activations are single samples in `C x H x W` layout ([`Planes`]); vectors
//! are `N x 1 x 1`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::preprocess::Planes;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out x in x k x k`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal weights scaled by `gain`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| T::lit(std * Distribution::<f64>::sample(&StandardNormal, rng)))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Planes<T>, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = oh * ow;
        let mut cols = vec![T::zero(); self.in_channels * k * k * p];
        for c in 0..self.in_channels {
            let plane = x.plane(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < x.width as isize {
                                dst[oy * ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Planes<T>) -> Planes<T> {
        debug_assert_eq!(x.channels, self.in_channels);
        let (oh, ow) = self.output_size(x.height, x.width);
        let p = oh * ow;
        let r = self.in_channels * self.kernel * self.kernel;
        let cols = self.im2col(x, oh, ow);
        let mut out = Planes::zeros(self.out_channels, oh, ow);
        for o in 0..self.out_channels {
            let dst = &mut out.data[o * p..(o + 1) * p];
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            let wrow = &self.weight[o * r..(o + 1) * r];
            for (ri, &wv) in wrow.iter().enumerate() {
                if wv == T::zero() {
                    continue;
                }
                let src = &cols[ri * p..(ri + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + wv * s;
                }
            }
        }
        out
    }

    /// Accumulates `[weight, bias]` gradients and returns the input gradient.
    pub fn backward(&self, x: &Planes<T>, grad_out: &Planes<T>, grads: &mut [Vec<T>]) -> Planes<T> {
        let (oh, ow) = (grad_out.height, grad_out.width);
        let p = oh * ow;
        let k = self.kernel;
        let r = self.in_channels * k * k;
        let cols = self.im2col(x, oh, ow);
        let (gw, rest) = grads.split_at_mut(1);
        let (gw, gb) = (&mut gw[0], &mut rest[0]);
        let mut grad_cols = vec![T::zero(); r * p];
        for o in 0..self.out_channels {
            let go = &grad_out.data[o * p..(o + 1) * p];
            gb[o] = gb[o] + go.iter().copied().sum::<T>();
            let wrow = &self.weight[o * r..(o + 1) * r];
            for ri in 0..r {
                let c = &cols[ri * p..(ri + 1) * p];
                let s = go.iter().zip(c).fold(T::zero(), |a, (&g, &v)| a + g * v);
                gw[o * r + ri] = gw[o * r + ri] + s;
                let wv = wrow[ri];
                if wv != T::zero() {
                    let gc = &mut grad_cols[ri * p..(ri + 1) * p];
                    for (d, &g) in gc.iter_mut().zip(go) {
                        *d = *d + wv * g;
                    }
                }
            }
        }
        // col2im
        let mut grad_in = Planes::zeros(self.in_channels, x.height, x.width);
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &grad_cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < x.width as isize {
                                let i = grad_in.idx(c, iy as usize, ix as usize);
                                grad_in.data[i] = grad_in.data[i] + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (1.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| T::lit(std * Distribution::<f64>::sample(&StandardNormal, rng)))
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).fold(self.bias[o], |a, (&w, &v)| a + w * v)
            })
            .collect()
    }

    pub fn backward(&self, x: &[T], grad_out: &[T], grads: &mut [Vec<T>]) -> Vec<T> {
        let (gw, rest) = grads.split_at_mut(1);
        let (gw, gb) = (&mut gw[0], &mut rest[0]);
        let mut grad_in = vec![T::zero(); self.inputs];
        for o in 0..self.outputs {
            let g = grad_out[o];
            gb[o] = gb[o] + g;
            if g == T::zero() {
                continue;
            }
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] = grow[i] + g * x[i];
                grad_in[i] = grad_in[i] + g * row[i];
            }
        }
        grad_in
    }
}

/// Max pooling; returns the output and the flat input index of each maximum.
pub fn max_pool<T: Scalar>(x: &Planes<T>, size: usize, stride: usize, padding: usize) -> (Planes<T>, Vec<usize>) {
    let oh = (x.height + 2 * padding - size) / stride + 1;
    let ow = (x.width + 2 * padding - size) / stride + 1;
    let mut out = Planes::zeros(x.channels, oh, ow);
    let mut argmax = vec![0usize; x.channels * oh * ow];
    for c in 0..x.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for ky in 0..size {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= x.height as isize {
                        continue;
                    }
                    for kx in 0..size {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= x.width as isize {
                            continue;
                        }
                        let i = x.idx(c, iy as usize, ix as usize);
                        if x.data[i] > best || best_i == usize::MAX {
                            best = x.data[i];
                            best_i = i;
                        }
                    }
                }
                let o = out.idx(c, oy, ox);
                out.data[o] = best;
                argmax[o] = best_i;
            }
        }
    }
    (out, argmax)
}

pub fn relu<T: Scalar>(x: &Planes<T>) -> Planes<T> {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    out
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Scalar>(output: &Planes<T>, grad_out: &Planes<T>) -> Planes<T> {
    let mut g = grad_out.clone();
    for (gv, &o) in g.data.iter_mut().zip(&output.data) {
        if o <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

pub fn global_avg_pool<T: Scalar>(x: &Planes<T>) -> Vec<T> {
    let n = T::lit((x.height * x.width) as f64);
    (0..x.channels).map(|c| x.plane(c).iter().copied().sum::<T>() / n).collect()
}
