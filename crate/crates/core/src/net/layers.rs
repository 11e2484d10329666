//! Layers with explicit forward and reverse passes.
//!
//! Each `backward` takes the forward input (and whatever intermediate it
//! needs), accumulates parameter gradients in place and returns the input
//! gradient.

use rand::Rng as _;

use super::tensor::{Real, Tensor};
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Named trainable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, value: vec![T::zero(); n], grad: vec![T::zero(); n] }
    }

    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = T::of(rng.gen_range(-bound..=bound));
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Mirror without repeating the edge pixel.
    Reflect,
}

fn reflect(i: isize, n: isize) -> isize {
    if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    }
}

/// Stride-1, same-size 2-D convolution with odd kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub padding: Padding,
    /// `(cout, cin, k, k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv2d<T> {
    /// Fan-in scaled uniform weights (He bound times `gain`), zero bias.
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, padding: Padding, gain: f64, rng: &mut Rng) -> Self {
        assert!(k % 2 == 1, "odd kernels only");
        let bound = gain * (6.0 / (cin * k * k) as f64).sqrt();
        Self {
            cin,
            cout,
            k,
            padding,
            weight: Param::uniform(format!("{name}.w"), vec![cout, cin, k, k], bound, rng),
            bias: Param::zeros(format!("{name}.b"), vec![cout]),
        }
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, col: &mut [T]) {
        let (k, pad) = (self.k, (self.k / 2) as isize);
        let (hi, wi) = (h as isize, w as isize);
        for c in 0..self.cin {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            row[y * w + xx] = match self.padding {
                                Padding::Zero if sy < 0 || sy >= hi || sx < 0 || sx >= wi => T::zero(),
                                Padding::Zero => plane[(sy * wi + sx) as usize],
                                Padding::Reflect => plane[(reflect(sy, hi) * wi + reflect(sx, wi)) as usize],
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (k, pad) = (self.k, (self.k / 2) as isize);
        let (hi, wi) = (h as isize, w as isize);
        for c in 0..self.cin {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            let idx = match self.padding {
                                Padding::Zero if sy < 0 || sy >= hi || sx < 0 || sx >= wi => continue,
                                Padding::Zero => sy * wi + sx,
                                Padding::Reflect => reflect(sy, hi) * wi + reflect(sx, wi),
                            };
                            plane[idx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w] = x.shape;
        assert_eq!(c, self.cin, "{} input channels", self.weight.name);
        let hw = h * w;
        let ckk = self.cin * self.k * self.k;
        let mut out = Tensor::zeros([b, self.cout, h, w]);
        let mut col = if self.k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
        for i in 0..b {
            let y = out.item_mut(i);
            for (o, chunk) in y.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            let src = if self.k == 1 {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, &mut col);
                &col
            };
            T::gemm(self.cout, ckk, hw, &self.weight.value, false, src, false, T::one(), y);
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let [b, _, h, w] = x.shape;
        let hw = h * w;
        let ckk = self.cin * self.k * self.k;
        let mut dx = Tensor::zeros(x.shape);
        let mut col = if self.k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
        let mut dcol = vec![T::zero(); ckk * hw];
        for i in 0..b {
            let g = dy.item(i);
            for (o, chunk) in g.chunks(hw).enumerate() {
                let mut s = T::zero();
                for &v in chunk {
                    s += v;
                }
                self.bias.grad[o] += s;
            }
            let src = if self.k == 1 {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, &mut col);
                &col
            };
            T::gemm(self.cout, hw, ckk, g, false, src, true, T::one(), &mut self.weight.grad);
            T::gemm(ckk, self.cout, hw, &self.weight.value, true, g, false, T::zero(), &mut dcol);
            if self.k == 1 {
                dx.item_mut(i).copy_from_slice(&dcol);
            } else {
                self.col2im(&dcol, h, w, dx.item_mut(i));
            }
        }
        dx
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let a = T::of(LEAKY_SLOPE);
    x.map(|v| if v > T::zero() { v } else { a * v })
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let a = T::of(LEAKY_SLOPE);
    let data = x.data.iter().zip(&dy.data).map(|(&v, &g)| if v > T::zero() { g } else { a * g }).collect();
    Tensor { shape: x.shape, data }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y.data.iter().zip(&dy.data).map(|(&p, &g)| g * p * (T::one() - p)).collect();
    Tensor { shape: y.shape, data }
}

/// 2×2 average pooling, stride 2.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.shape;
    let (ho, wo) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut out = Tensor::zeros([b, c, ho, wo]);
    for p in 0..b * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                dst[y * wo + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * q;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let [b, c, ho, wo] = dy.shape;
    let (h, w) = (ho * 2, wo * 2);
    let q = T::of(0.25);
    let mut dx = Tensor::zeros([b, c, h, w]);
    for p in 0..b * c {
        let g = &dy.data[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dx.data[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                d[y * w + xx] = g[(y / 2) * wo + xx / 2] * q;
            }
        }
    }
    dx
}

/// Nearest-neighbor 2× upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.shape;
    let (ho, wo) = (h * 2, w * 2);
    let mut out = Tensor::zeros([b, c, ho, wo]);
    for p in 0..b * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let [b, c, ho, wo] = dy.shape;
    let (h, w) = (ho / 2, wo / 2);
    let mut dx = Tensor::zeros([b, c, h, w]);
    for p in 0..b * c {
        let g = &dy.data[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dx.data[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xx in 0..wo {
                d[(y / 2) * w + xx / 2] += g[y * wo + xx];
            }
        }
    }
    dx
}

/// `lrelu(skip(x) + conv2(lrelu(conv1(x))))`, with a 1×1 projection as the
/// skip when the channel count changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub proj: Option<Conv2d<T>>,
}

/// Intermediates of one residual block forward pass.
#[derive(Debug, Clone)]
pub struct ResCache<T> {
    h1: Tensor<T>,
    a1: Tensor<T>,
    s: Tensor<T>,
}

impl<T: Real> ResBlock<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let conv1 = Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, Padding::Zero, 1.0, rng);
        // small residual branch at init keeps deep stacks near identity
        let conv2 = Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, Padding::Zero, 0.1, rng);
        let proj = (cin != cout).then(|| Conv2d::new(&format!("{name}.proj"), cin, cout, 1, Padding::Zero, 1.0, rng));
        Self { conv1, conv2, proj }
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> (Tensor<T>, ResCache<T>) {
        let h1 = self.conv1.forward(x);
        let a1 = leaky_relu(&h1);
        let h2 = self.conv2.forward(&a1);
        let s = match &self.proj {
            Some(p) => p.forward(x).add(&h2),
            None => x.add(&h2),
        };
        let out = leaky_relu(&s);
        (out, ResCache { h1, a1, s })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_cached(x).0
    }

    pub fn backward(&mut self, x: &Tensor<T>, cache: &ResCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let ds = leaky_relu_backward(&cache.s, dy);
        let da1 = self.conv2.backward(&cache.a1, &ds);
        let dh1 = leaky_relu_backward(&cache.h1, &da1);
        let dx_branch = self.conv1.backward(x, &dh1);
        let dx_skip = match &mut self.proj {
            Some(p) => p.backward(x, &ds),
            None => ds,
        };
        dx_branch.add(&dx_skip)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.conv1.params().into_iter().chain(self.conv2.params()).collect();
        if let Some(p) = &self.proj {
            v.extend(p.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.conv1.params_mut().into_iter().chain(self.conv2.params_mut()).collect();
        if let Some(p) = &mut self.proj {
            v.extend(p.params_mut());
        }
        v
    }
}
