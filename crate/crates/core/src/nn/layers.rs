use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::init::kaiming_init;
use super::{Real, Tensor};

/// Serializable layer description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    Maxpool2,
    Flatten,
    Dense {
        units: usize,
    },
}

fn one() -> usize {
    1
}

/// Cross-correlation layer, weights `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_shape: [usize; 3],
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Fully connected layer, weights `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu,
    MaxPool2,
    Flatten,
    Dense(Dense<T>),
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Input(Tensor<T>),
    Active(Vec<bool>),
    ArgMax { input_shape: Vec<usize>, argmax: Vec<usize> },
    Shape(Vec<usize>),
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_shape: [usize; 3], filters: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let [c, h, w] = in_shape;
        if filters == 0 || kernel == 0 || stride == 0 {
            return Err(Error::invalid("conv layer", "filters, kernel and stride must be positive"));
        }
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::invalid(
                "conv layer",
                format!("kernel {kernel} larger than padded input {h}x{w} (padding {padding})"),
            ));
        }
        Ok(Self {
            in_shape,
            filters,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); filters * c * kernel * kernel],
            bias: vec![T::zero(); filters],
        })
    }

    pub fn out_shape(&self) -> [usize; 3] {
        let [_, h, w] = self.in_shape;
        let o = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        [self.filters, o(h), o(w)]
    }

    fn fan_in(&self) -> usize {
        self.in_shape[0] * self.kernel * self.kernel
    }

    /// Output positions `o` along one axis for which `o * stride + k - padding`
    /// lands inside `[0, n)`.
    fn valid_range(&self, k: usize, n: usize, out: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.padding);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n + p > k { ((n + p - k - 1) / s + 1).min(out) } else { 0 };
        lo..hi.max(lo)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_shape("conv input", &self.in_shape, x.shape())?;
        let [cin, h, w] = self.in_shape;
        let [cout, ho, wo] = self.out_shape();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let input = x.data();
        let mut out = vec![T::zero(); cout * ho * wo];
        for oc in 0..cout {
            let plane = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
            plane.fill(self.bias[oc]);
            for ic in 0..cin {
                let src = &input[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    let ys = self.valid_range(ky, h, ho);
                    for kx in 0..k {
                        let wv = self.weight[((oc * cin + ic) * k + ky) * k + kx];
                        let xs = self.valid_range(kx, w, wo);
                        for oy in ys.clone() {
                            let iy = oy * s + ky - p;
                            let dst = &mut plane[oy * wo..(oy + 1) * wo];
                            let row = &src[iy * w..(iy + 1) * w];
                            if s == 1 {
                                let off = xs.start + kx - p;
                                for (d, &v) in dst[xs.clone()].iter_mut().zip(&row[off..off + xs.len()]) {
                                    *d += wv * v;
                                }
                            } else {
                                for ox in xs.clone() {
                                    dst[ox] += wv * row[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![cout, ho, wo], out)
    }

    /// Returns the input gradient; accumulates into `dw`, `db`.
    pub fn backward(&self, x: &Tensor<T>, g: &Tensor<T>, dw: &mut [T], db: &mut [T]) -> Result<Tensor<T>> {
        let [cin, h, w] = self.in_shape;
        let [cout, ho, wo] = self.out_shape();
        check_shape("conv output gradient", &[cout, ho, wo], g.shape())?;
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let input = x.data();
        let grad = g.data();
        let mut dx = vec![T::zero(); cin * h * w];
        for oc in 0..cout {
            let gplane = &grad[oc * ho * wo..(oc + 1) * ho * wo];
            db[oc] += gplane.iter().copied().sum::<T>();
            for ic in 0..cin {
                let src = &input[ic * h * w..(ic + 1) * h * w];
                let dsrc = &mut dx[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    let ys = self.valid_range(ky, h, ho);
                    for kx in 0..k {
                        let widx = ((oc * cin + ic) * k + ky) * k + kx;
                        let wv = self.weight[widx];
                        let xs = self.valid_range(kx, w, wo);
                        let mut acc = T::zero();
                        for oy in ys.clone() {
                            let iy = oy * s + ky - p;
                            let grow = &gplane[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let off = xs.start + kx - p;
                                let n = xs.len();
                                let row = &src[iy * w + off..iy * w + off + n];
                                let drow = &mut dsrc[iy * w + off..iy * w + off + n];
                                for ((&gv, &v), d) in grow[xs.clone()].iter().zip(row).zip(drow.iter_mut()) {
                                    acc += gv * v;
                                    *d += wv * gv;
                                }
                            } else {
                                for ox in xs.clone() {
                                    let ix = ox * s + kx - p;
                                    acc += grow[ox] * src[iy * w + ix];
                                    dsrc[iy * w + ix] += wv * grow[ox];
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
        Tensor::new(vec![cin, h, w], dx)
    }
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::invalid("dense layer", format!("widths must be positive, got {inputs} -> {outputs}")));
        }
        Ok(Self { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] })
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.inputs {
            return Err(Error::ShapeMismatch { context: "dense input", expected: vec![self.inputs], actual: vec![x.len()] });
        }
        Ok((0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect())
    }

    pub fn backward(&self, x: &[T], g: &[T], dw: &mut [T], db: &mut [T]) -> Result<Vec<T>> {
        if g.len() != self.outputs {
            return Err(Error::ShapeMismatch {
                context: "dense output gradient",
                expected: vec![self.outputs],
                actual: vec![g.len()],
            });
        }
        let mut dx = vec![T::zero(); self.inputs];
        for (o, &go) in g.iter().enumerate() {
            db[o] += go;
            if go == T::zero() {
                continue;
            }
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let drow = &mut dw[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                drow[i] += go * x[i];
                dx[i] += go * row[i];
            }
        }
        Ok(dx)
    }
}

fn check_shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { context, expected: expected.to_vec(), actual: actual.to_vec() });
    }
    Ok(())
}

impl<T: Real> Layer<T> {
    /// Builds a zero-initialized layer for `input` and returns it with its
    /// output shape.
    pub fn build(spec: LayerSpec, input: &[usize]) -> Result<(Self, Vec<usize>)> {
        let as_chw = |what: &'static str| -> Result<[usize; 3]> {
            match input {
                &[c, h, w] => Ok([c, h, w]),
                _ => Err(Error::invalid(what, format!("needs a (C, H, W) input, got {input:?}"))),
            }
        };
        Ok(match spec {
            LayerSpec::Conv { filters, kernel, stride, padding } => {
                let conv = Conv2d::new(as_chw("conv layer")?, filters, kernel, stride, padding)?;
                let out = conv.out_shape().to_vec();
                (Layer::Conv(conv), out)
            }
            LayerSpec::Relu => (Layer::Relu, input.to_vec()),
            LayerSpec::Maxpool2 => {
                let [c, h, w] = as_chw("maxpool layer")?;
                if h < 2 || w < 2 {
                    return Err(Error::invalid("maxpool layer", format!("input {h}x{w} smaller than 2x2")));
                }
                (Layer::MaxPool2, vec![c, h / 2, w / 2])
            }
            LayerSpec::Flatten => (Layer::Flatten, vec![input.iter().product()]),
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::invalid("dense layer", format!("needs a flat input, got {input:?}; add flatten")));
                }
                (Layer::Dense(Dense::new(input[0], units)?), vec![units])
            }
        })
    }

    /// Kaiming-normal weights, zero biases.
    pub fn init(&mut self, rng: &mut impl Rng) {
        match self {
            Layer::Conv(c) => {
                let fan_in = c.fan_in();
                c.weight.iter_mut().for_each(|w| *w = T::lit(kaiming_init(fan_in, rng)));
                c.bias.fill(T::zero());
            }
            Layer::Dense(d) => {
                d.weight.iter_mut().for_each(|w| *w = T::lit(kaiming_init(d.inputs, rng)));
                d.bias.fill(T::zero());
            }
            _ => {}
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }

    /// `(name, shape)` of each parameter tensor.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            Layer::Conv(c) => vec![
                ("conv.weight", vec![c.filters, c.in_shape[0], c.kernel, c.kernel]),
                ("conv.bias", vec![c.filters]),
            ],
            Layer::Dense(d) => vec![("dense.weight", vec![d.outputs, d.inputs]), ("dense.bias", vec![d.outputs])],
            _ => vec![],
        }
    }

    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        match self {
            Layer::Conv(c) => {
                let y = c.forward(&x)?;
                Ok((y, Cache::Input(x)))
            }
            Layer::Dense(d) => {
                let y = d.forward(x.data())?;
                let n = y.len();
                Ok((Tensor::new(vec![n], y)?, Cache::Input(x)))
            }
            Layer::Relu => {
                let mut x = x;
                let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
                for (v, &a) in x.data_mut().iter_mut().zip(&active) {
                    if !a {
                        *v = T::zero();
                    }
                }
                Ok((x, Cache::Active(active)))
            }
            Layer::MaxPool2 => maxpool_forward(x),
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let n = x.len();
                Ok((x.reshape(&[n])?, Cache::Shape(shape)))
            }
        }
    }

    /// Input gradient; parameter gradients are added into `grads` (one slice
    /// per tensor in [`Layer::params`] order).
    pub fn backward(&self, cache: &Cache<T>, g: Tensor<T>, grads: &mut [Vec<T>]) -> Result<Tensor<T>> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Input(x)) => {
                let (dw, db) = split_two(grads);
                c.backward(x, &g, dw, db)
            }
            (Layer::Dense(d), Cache::Input(x)) => {
                let (dw, db) = split_two(grads);
                let dx = d.backward(x.data(), g.data(), dw, db)?;
                Tensor::new(x.shape().to_vec(), dx)
            }
            (Layer::Relu, Cache::Active(active)) => {
                let mut g = g;
                for (v, &a) in g.data_mut().iter_mut().zip(active) {
                    if !a {
                        *v = T::zero();
                    }
                }
                Ok(g)
            }
            (Layer::MaxPool2, Cache::ArgMax { input_shape, argmax }) => {
                let mut dx = Tensor::zeros(input_shape);
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dx.data_mut()[src] += gv;
                }
                Ok(dx)
            }
            (Layer::Flatten, Cache::Shape(shape)) => g.reshape(shape),
            _ => Err(Error::invalid("backward", "cache does not belong to this layer")),
        }
    }
}

fn split_two<T>(grads: &mut [Vec<T>]) -> (&mut [T], &mut [T]) {
    let (a, b) = grads.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

/// 2x2/2 max pooling; ties go to the first element in scan order.
fn maxpool_forward<T: Real>(x: Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::invalid("maxpool layer", format!("needs (C, H, W), got {:?}", x.shape())));
    };
    let (ho, wo) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, Cache::ArgMax { input_shape: vec![c, h, w], argmax }))
}
