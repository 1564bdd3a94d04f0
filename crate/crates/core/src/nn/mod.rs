//! Convolutional encoders mapping 4-channel inputs to `D`-dimensional
//! embeddings, with backpropagation written out per layer.

mod adam;
mod layers;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use layers::{global_avg_pool, max_pool, relu, relu_backward, Conv2d, Linear};

use crate::error::{Error, Result};
use crate::preprocess::{Planes, StackedInput};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Four strided 3x3 conv blocks, global average pooling, linear head.
    SmallCnn,
    /// ResNet-18 topology (basic blocks 2-2-2-2), without batch norm.
    Resnet18Class,
    /// EfficientNetV2-B2-shaped stack of fused inverted-residual blocks.
    Effnetv2b2Class,
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small_cnn" => Ok(Backbone::SmallCnn),
            "resnet18_class" => Ok(Backbone::Resnet18Class),
            "effnetv2b2_class" => Ok(Backbone::Effnetv2b2Class),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// How a pretrained 3-channel stem is widened to the 4-channel input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemAdaptation {
    AverageRgbIntoNewChannel,
    RandomInitNewChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub embedding_dim: usize,
    pub input_channels: usize,
    pub pretrained_stem_adaptation: StemAdaptation,
    /// Channel count of the first small_cnn block (doubled per block).
    pub base_width: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::SmallCnn,
            embedding_dim: 1028,
            input_channels: 4,
            pretrained_stem_adaptation: StemAdaptation::AverageRgbIntoNewChannel,
            base_width: 16,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config(format!("embedding_dim {} must be at least 2", self.embedding_dim)));
        }
        if self.input_channels != 4 {
            return Err(Error::Config(format!("input_channels must be 4, got {}", self.input_channels)));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T> {
    pub body: Vec<Layer<T>>,
    /// Projection when the body changes shape; identity otherwise.
    pub shortcut: Option<Conv2d<T>>,
    /// Apply ReLU after the sum.
    pub activate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu,
    MaxPool { size: usize, stride: usize, padding: usize },
    GlobalAvgPool,
    Linear(Linear<T>),
    Residual(Residual<T>),
}

/// What backward needs from forward, per layer.
#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Planes<T>),
    Output(Planes<T>),
    Pool { shape: (usize, usize, usize), argmax: Vec<usize> },
    Shape((usize, usize, usize)),
    Residual { input: Planes<T>, body: Vec<Cache<T>>, output: Planes<T> },
}

fn vector<T: Scalar>(v: Vec<T>) -> Planes<T> {
    let n = v.len();
    Planes {
        channels: n,
        height: 1,
        width: 1,
        data: v,
    }
}

impl<T: Scalar> Layer<T> {
    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Linear(_) => 2,
            Layer::Residual(r) => {
                r.body.iter().map(Layer::param_count).sum::<usize>() + if r.shortcut.is_some() { 2 } else { 0 }
            }
            _ => 0,
        }
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        match self {
            Layer::Conv(c) => {
                out.push(&c.weight);
                out.push(&c.bias);
            }
            Layer::Linear(l) => {
                out.push(&l.weight);
                out.push(&l.bias);
            }
            Layer::Residual(r) => {
                r.body.iter().for_each(|l| l.collect_params(out));
                if let Some(s) = &r.shortcut {
                    out.push(&s.weight);
                    out.push(&s.bias);
                }
            }
            _ => {}
        }
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        match self {
            Layer::Conv(c) => {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
            Layer::Linear(l) => {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
            Layer::Residual(r) => {
                r.body.iter_mut().for_each(|l| l.collect_params_mut(out));
                if let Some(s) = &mut r.shortcut {
                    out.push(&mut s.weight);
                    out.push(&mut s.bias);
                }
            }
            _ => {}
        }
    }

    fn forward(&self, x: Planes<T>) -> Planes<T> {
        match self {
            Layer::Conv(c) => c.forward(&x),
            Layer::Relu => relu(&x),
            Layer::MaxPool { size, stride, padding } => max_pool(&x, *size, *stride, *padding).0,
            Layer::GlobalAvgPool => vector(global_avg_pool(&x)),
            Layer::Linear(l) => vector(l.forward(&x.data)),
            Layer::Residual(r) => {
                let body = r.body.iter().fold(x.clone(), |h, l| l.forward(h));
                let mut sum = match &r.shortcut {
                    Some(s) => s.forward(&x),
                    None => x,
                };
                sum.data.iter_mut().zip(&body.data).for_each(|(a, &b)| *a = *a + b);
                if r.activate {
                    relu(&sum)
                } else {
                    sum
                }
            }
        }
    }

    fn forward_cached(&self, x: Planes<T>) -> (Planes<T>, Cache<T>) {
        match self {
            Layer::Conv(c) => (c.forward(&x), Cache::Input(x)),
            Layer::Linear(l) => (vector(l.forward(&x.data)), Cache::Input(x)),
            Layer::Relu => {
                let y = relu(&x);
                (y.clone(), Cache::Output(y))
            }
            Layer::MaxPool { size, stride, padding } => {
                let (y, argmax) = max_pool(&x, *size, *stride, *padding);
                (
                    y,
                    Cache::Pool {
                        shape: (x.channels, x.height, x.width),
                        argmax,
                    },
                )
            }
            Layer::GlobalAvgPool => (vector(global_avg_pool(&x)), Cache::Shape((x.channels, x.height, x.width))),
            Layer::Residual(r) => {
                let mut caches = Vec::with_capacity(r.body.len());
                let mut h = x.clone();
                for l in &r.body {
                    let (y, c) = l.forward_cached(h);
                    caches.push(c);
                    h = y;
                }
                let mut sum = match &r.shortcut {
                    Some(s) => s.forward(&x),
                    None => x.clone(),
                };
                sum.data.iter_mut().zip(&h.data).for_each(|(a, &b)| *a = *a + b);
                let out = if r.activate { relu(&sum) } else { sum };
                (
                    out.clone(),
                    Cache::Residual {
                        input: x,
                        body: caches,
                        output: out,
                    },
                )
            }
        }
    }

    fn backward(&self, cache: &Cache<T>, grad: Planes<T>, grads: &mut [Vec<T>]) -> Planes<T> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Input(x)) => c.backward(x, &grad, grads),
            (Layer::Linear(l), Cache::Input(x)) => {
                let g = l.backward(&x.data, &grad.data, grads);
                Planes {
                    channels: x.channels,
                    height: x.height,
                    width: x.width,
                    data: g,
                }
            }
            (Layer::Relu, Cache::Output(y)) => relu_backward(y, &grad),
            (Layer::MaxPool { .. }, Cache::Pool { shape, argmax }) => {
                let mut g = Planes::zeros(shape.0, shape.1, shape.2);
                for (o, &i) in argmax.iter().enumerate() {
                    g.data[i] = g.data[i] + grad.data[o];
                }
                g
            }
            (Layer::GlobalAvgPool, Cache::Shape((c, h, w))) => {
                let n = T::lit((h * w) as f64);
                let mut g = Planes::zeros(*c, *h, *w);
                for ch in 0..*c {
                    let v = grad.data[ch] / n;
                    g.plane_mut(ch).iter_mut().for_each(|x| *x = v);
                }
                g
            }
            (Layer::Residual(r), Cache::Residual { input, body, output }) => {
                let g_sum = if r.activate { relu_backward(output, &grad) } else { grad };
                let body_params: usize = r.body.iter().map(Layer::param_count).sum();
                let (body_grads, short_grads) = grads.split_at_mut(body_params);
                let mut offsets = Vec::with_capacity(r.body.len());
                let mut acc = 0;
                for l in &r.body {
                    offsets.push(acc);
                    acc += l.param_count();
                }
                let mut g = g_sum.clone();
                for (i, l) in r.body.iter().enumerate().rev() {
                    let n = l.param_count();
                    g = l.backward(&body[i], g, &mut body_grads[offsets[i]..offsets[i] + n]);
                }
                let g_short = match &r.shortcut {
                    Some(s) => s.backward(input, &g_sum, short_grads),
                    None => g_sum,
                };
                g.data.iter_mut().zip(&g_short.data).for_each(|(a, &b)| *a = *a + b);
                g
            }
            _ => unreachable!("cache does not match layer"),
        }
    }
}

/// Forward record for one sample.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub layers: Vec<Layer<T>>,
}

fn conv<T: Scalar, R: Rng + ?Sized>(i: usize, o: usize, k: usize, s: usize, rng: &mut R) -> Layer<T> {
    Layer::Conv(Conv2d::new(i, o, k, s, k / 2, 1.0, rng))
}

fn basic_block<T: Scalar, R: Rng + ?Sized>(i: usize, o: usize, stride: usize, rng: &mut R) -> Layer<T> {
    // Without normalization layers the residual branch starts small.
    let body = vec![
        Layer::Conv(Conv2d::new(i, o, 3, stride, 1, 1.0, rng)),
        Layer::Relu,
        Layer::Conv(Conv2d::new(o, o, 3, 1, 1, 0.2, rng)),
    ];
    let shortcut = (stride != 1 || i != o).then(|| Conv2d::new(i, o, 1, stride, 0, 1.0, rng));
    Layer::Residual(Residual {
        body,
        shortcut,
        activate: true,
    })
}

fn fused_block<T: Scalar, R: Rng + ?Sized>(i: usize, o: usize, expand: usize, stride: usize, rng: &mut R) -> Layer<T> {
    let mid = i * expand;
    let mut body = vec![Layer::Conv(Conv2d::new(i, mid, 3, stride, 1, 1.0, rng))];
    if expand > 1 {
        body.push(Layer::Relu);
        body.push(Layer::Conv(Conv2d::new(mid, o, 1, 1, 0, 0.2, rng)));
    }
    if stride == 1 && i == o {
        Layer::Residual(Residual {
            body,
            shortcut: None,
            activate: false,
        })
    } else {
        body.push(Layer::Relu);
        Layer::Residual(Residual {
            body,
            shortcut: Some(Conv2d::new(i, o, 1, stride, 0, 1.0, rng)),
            activate: false,
        })
    }
}

/// Builds a randomly initialized encoder for `cfg`.
pub fn build_encoder<T: Scalar>(cfg: &EncoderConfig) -> Result<Encoder<T>> {
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let c_in = cfg.input_channels;
    let d = cfg.embedding_dim;
    let mut layers: Vec<Layer<T>> = Vec::new();
    let features = match cfg.backbone {
        Backbone::SmallCnn => {
            let w = cfg.base_width;
            let widths = [w, 2 * w, 4 * w, 4 * w];
            let strides = [2, 2, 2, 1];
            let mut prev = c_in;
            for (&o, &s) in widths.iter().zip(&strides) {
                layers.push(conv(prev, o, 3, s, &mut rng));
                layers.push(Layer::Relu);
                prev = o;
            }
            prev
        }
        Backbone::Resnet18Class => {
            layers.push(conv(c_in, 64, 7, 2, &mut rng));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool {
                size: 3,
                stride: 2,
                padding: 1,
            });
            let mut prev = 64;
            for (stage, &o) in [64, 128, 256, 512].iter().enumerate() {
                for b in 0..2 {
                    let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                    layers.push(basic_block(prev, o, stride, &mut rng));
                    prev = o;
                }
            }
            prev
        }
        Backbone::Effnetv2b2Class => {
            layers.push(conv(c_in, 32, 3, 2, &mut rng));
            layers.push(Layer::Relu);
            // (expansion, channels, repeats, first stride)
            let stages = [(1, 16, 2, 1), (4, 32, 3, 2), (4, 56, 3, 2), (4, 104, 4, 2), (6, 120, 6, 1), (6, 208, 9, 2)];
            let mut prev = 32;
            for &(e, o, n, s) in &stages {
                for r in 0..n {
                    layers.push(fused_block(prev, o, e, if r == 0 { s } else { 1 }, &mut rng));
                    prev = o;
                }
            }
            layers.push(conv(prev, 1408, 1, 1, &mut rng));
            layers.push(Layer::Relu);
            1408
        }
    };
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear(Linear::new(features, d, &mut rng)));
    Ok(Encoder {
        config: cfg.clone(),
        layers,
    })
}

impl<T: Scalar> Encoder<T> {
    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.collect_params(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.collect_params_mut(&mut out));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Zeroed buffers shaped like [`Encoder::params`].
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    fn check_input(&self, x: &StackedInput<T>) -> Result<()> {
        if x.planes.channels != self.config.input_channels {
            return Err(Error::Shape(format!(
                "encoder expects {} channels, got {}",
                self.config.input_channels, x.planes.channels
            )));
        }
        Ok(())
    }

    pub fn embed(&self, x: &StackedInput<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.layers.iter().fold(x.planes.clone(), |h, l| l.forward(h)).data)
    }

    /// Embeds a batch, one sample per rayon task.
    pub fn embed_batch(&self, xs: &[StackedInput<T>]) -> Result<Vec<Vec<T>>> {
        xs.par_iter().map(|x| self.embed(x)).collect()
    }

    pub fn forward_train(&self, x: &StackedInput<T>) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.planes.clone();
        for l in &self.layers {
            let (y, c) = l.forward_cached(h);
            caches.push(c);
            h = y;
        }
        Ok((h.data, Tape { caches }))
    }

    /// Accumulates parameter gradients for one sample into `grads`.
    pub fn backward(&self, tape: &Tape<T>, grad_embedding: &[T], grads: &mut [Vec<T>]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.param_count();
        }
        let mut g = vector(grad_embedding.to_vec());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let n = l.param_count();
            g = l.backward(&tape.caches[i], g, &mut grads[offsets[i]..offsets[i] + n]);
        }
    }

    /// Sums per-sample gradients over the batch. Samples are split into
    /// fixed chunks reduced in order, so the result does not depend on the
    /// thread count.
    pub fn backward_batch(&self, tapes: &[Tape<T>], grad_embeddings: &[T]) -> Vec<Vec<T>> {
        const CHUNK: usize = 4;
        let d = self.embedding_dim();
        let partial: Vec<Vec<Vec<T>>> = tapes
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut grads = self.zero_grads();
                for (k, tape) in chunk.iter().enumerate() {
                    let i = ci * CHUNK + k;
                    self.backward(tape, &grad_embeddings[i * d..(i + 1) * d], &mut grads);
                }
                grads
            })
            .collect();
        let mut total = self.zero_grads();
        for grads in partial {
            for (t, g) in total.iter_mut().zip(grads) {
                t.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
            }
        }
        total
    }

    /// Replaces the stem with pretrained RGB filters (`out x 3 x k x k`),
    /// filling the fourth channel according to `mode`.
    pub fn set_stem_from_rgb<R: Rng + ?Sized>(&mut self, rgb_weights: &[T], mode: StemAdaptation, rng: &mut R) -> Result<()> {
        let stem = match self.layers.first_mut() {
            Some(Layer::Conv(c)) => c,
            _ => return Err(Error::Config("encoder has no convolutional stem".into())),
        };
        stem.weight = adapt_rgb_stem(rgb_weights, stem.out_channels, stem.kernel, mode, rng)?;
        Ok(())
    }
}

/// Widens `out x 3 x k x k` stem filters to `out x 4 x k x k`.
pub fn adapt_rgb_stem<T: Scalar, R: Rng + ?Sized>(
    rgb: &[T],
    out_channels: usize,
    kernel: usize,
    mode: StemAdaptation,
    rng: &mut R,
) -> Result<Vec<T>> {
    let kk = kernel * kernel;
    if rgb.len() != out_channels * 3 * kk {
        return Err(Error::Shape(format!(
            "{} stem weights for {out_channels}x3x{kernel}x{kernel}",
            rgb.len()
        )));
    }
    let mut out = Vec::with_capacity(out_channels * 4 * kk);
    let std = (2.0 / (4 * kk) as f64).sqrt();
    for o in 0..out_channels {
        let f = &rgb[o * 3 * kk..(o + 1) * 3 * kk];
        out.extend_from_slice(f);
        match mode {
            StemAdaptation::AverageRgbIntoNewChannel => {
                out.extend((0..kk).map(|i| (f[i] + f[kk + i] + f[2 * kk + i]) / T::lit(3.0)));
            }
            StemAdaptation::RandomInitNewChannel => {
                out.extend((0..kk).map(|_| T::lit(std * Distribution::<f64>::sample(&StandardNormal, rng))));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_input(h: usize, w: usize, seed: u64) -> StackedInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..4 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        StackedInput::new(Planes::from_vec(4, h, w, data).unwrap()).unwrap()
    }

    fn cfg(backbone: Backbone, d: usize) -> EncoderConfig {
        EncoderConfig {
            backbone,
            embedding_dim: d,
            base_width: 4,
            ..Default::default()
        }
    }

    #[test]
    fn output_shapes() {
        let enc = build_encoder::<f64>(&cfg(Backbone::SmallCnn, 128)).unwrap();
        let xs = [random_input(16, 32, 1), random_input(16, 32, 2)];
        let out = enc.embed_batch(&xs).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|v| v.len() == 128));
        assert_eq!(enc.embed(&xs[0]).unwrap(), enc.embed(&xs[0]).unwrap());
        let enc3 = build_encoder::<f64>(&cfg(Backbone::SmallCnn, 3)).unwrap();
        assert_eq!(enc3.embed(&xs[0]).unwrap().len(), 3);
    }

    #[test]
    fn large_backbones_build_and_run() {
        for b in [Backbone::Resnet18Class, Backbone::Effnetv2b2Class] {
            let enc = build_encoder::<f32>(&cfg(b, 16)).unwrap();
            assert!(enc.num_parameters() > 1_000_000, "{b:?}");
            let x = StackedInput::new(Planes::filled(4, 32, 32, 0.1f32)).unwrap();
            assert_eq!(enc.embed(&x).unwrap().len(), 16);
        }
        assert!("vgg".parse::<Backbone>().is_err());
    }

    #[test]
    fn small_cnn_parameter_budget() {
        let c = EncoderConfig {
            embedding_dim: 1028,
            ..Default::default()
        };
        let n = build_encoder::<f32>(&c).unwrap().num_parameters();
        assert!((50_000..500_000).contains(&n), "{n}");
    }

    fn check_gradients(enc: &Encoder<f64>, x: &StackedInput<f64>) {
        // Scalar objective: weighted sum of the embedding.
        let d = enc.embedding_dim();
        let weights: Vec<f64> = (0..d).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let objective = |e: &Encoder<f64>| -> f64 { e.embed(x).unwrap().iter().zip(&weights).map(|(a, b)| a * b).sum() };
        let (_, tape) = enc.forward_train(x).unwrap();
        let mut grads = enc.zero_grads();
        enc.backward(&tape, &weights, &mut grads);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_tensors = enc.params().len();
        for t in 0..n_tensors {
            let len = enc.params()[t].len();
            for _ in 0..3 {
                let i = rng.random_range(0..len);
                let h = 1e-5;
                let mut plus = enc.clone();
                plus.params_mut()[t][i] += h;
                let mut minus = enc.clone();
                minus.params_mut()[t][i] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = grads[t][i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "tensor {t} index {i}: analytic {an}, numeric {fd}");
            }
        }
    }

    #[test]
    fn small_cnn_backprop_matches_finite_differences() {
        let enc = build_encoder::<f64>(&cfg(Backbone::SmallCnn, 5)).unwrap();
        check_gradients(&enc, &random_input(12, 12, 3));
    }

    #[test]
    fn residual_and_pool_backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layers = vec![
            Layer::Conv(Conv2d::new(4, 3, 3, 1, 1, 1.0, &mut rng)),
            Layer::Relu,
            Layer::MaxPool {
                size: 3,
                stride: 2,
                padding: 1,
            },
            basic_block(3, 5, 2, &mut rng),
            fused_block(5, 5, 2, 1, &mut rng),
            Layer::GlobalAvgPool,
            Layer::Linear(Linear::new(5, 4, &mut rng)),
        ];
        let enc = Encoder {
            config: cfg(Backbone::SmallCnn, 4),
            layers,
        };
        check_gradients(&enc, &random_input(9, 11, 4));
    }

    #[test]
    fn batch_backward_is_sum_of_samples() {
        let enc = build_encoder::<f64>(&cfg(Backbone::SmallCnn, 3)).unwrap();
        let xs: Vec<_> = (0..6).map(|s| random_input(8, 8, s)).collect();
        let tapes: Vec<_> = xs.iter().map(|x| enc.forward_train(x).unwrap().1).collect();
        let g: Vec<f64> = (0..18).map(|i| i as f64 * 0.1 - 0.5).collect();
        let total = enc.backward_batch(&tapes, &g);
        let mut manual = enc.zero_grads();
        for (i, t) in tapes.iter().enumerate() {
            enc.backward(t, &g[i * 3..(i + 1) * 3], &mut manual);
        }
        for (a, b) in total.iter().zip(&manual) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stem_adaptation_modes() {
        let rgb: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let avg = adapt_rgb_stem(&rgb, 2, 2, StemAdaptation::AverageRgbIntoNewChannel, &mut rng).unwrap();
        assert_eq!(avg.len(), 2 * 4 * 4);
        assert_eq!(&avg[..12], &rgb[..12]);
        assert_eq!(avg[12], (0.0 + 4.0 + 8.0) / 3.0);
        let rnd = adapt_rgb_stem(&rgb, 2, 2, StemAdaptation::RandomInitNewChannel, &mut rng).unwrap();
        assert_eq!(&rnd[16..28], &rgb[12..24]);
        assert!(adapt_rgb_stem(&rgb[..5], 2, 2, StemAdaptation::RandomInitNewChannel, &mut rng).is_err());

        let mut enc = build_encoder::<f64>(&EncoderConfig {
            base_width: 2,
            embedding_dim: 3,
            ..Default::default()
        })
        .unwrap();
        let stem_rgb: Vec<f64> = vec![0.5; 2 * 3 * 9];
        enc.set_stem_from_rgb(&stem_rgb, StemAdaptation::AverageRgbIntoNewChannel, &mut rng).unwrap();
        match &enc.layers[0] {
            Layer::Conv(c) => assert!(c.weight.iter().all(|&w| w == 0.5)),
            _ => unreachable!(),
        }
    }
}
