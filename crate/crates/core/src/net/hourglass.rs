//! Encoder-decoder network producing one full-resolution map per orientation.

use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, upsample2,
    upsample2_backward, Conv2d, Padding, Param, ResBlock, ResCache,
};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourglassConfig {
    /// 1 for depth only, 3 with the two positional channels.
    pub in_channels: usize,
    pub stem_channels: usize,
    /// Number of down/up levels.
    pub depth: usize,
    pub bottleneck_channels: usize,
    pub out_channels: usize,
    pub head_activation: HeadActivation,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            stem_channels: 32,
            depth: 4,
            bottleneck_channels: 128,
            out_channels: 16,
            head_activation: HeadActivation::Sigmoid,
        }
    }
}

impl HourglassConfig {
    pub fn pushmask() -> Self {
        Self::default()
    }

    pub fn pushreward() -> Self {
        Self { head_activation: HeadActivation::Identity, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.in_channels == 1 || self.in_channels == 3) {
            return Err(Error::Config(format!("in_channels must be 1 or 3, got {}", self.in_channels)));
        }
        if self.stem_channels == 0 || self.bottleneck_channels == 0 || self.out_channels == 0 || self.depth == 0 {
            return Err(Error::Config("network widths and depth must be positive".into()));
        }
        Ok(())
    }

    /// Checks that an R×R input survives `depth` halvings and the stem padding.
    pub fn validate_resolution(&self, resolution: usize) -> Result<()> {
        let f = 1usize << self.depth;
        if resolution % f != 0 || resolution < 4 {
            return Err(Error::Config(format!("resolution {resolution} not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }

    /// Channels after the stem and after each down level.
    pub fn level_channels(&self) -> Vec<usize> {
        let mut c = vec![self.stem_channels];
        for i in 0..self.depth {
            c.push((2 * c[i]).min(self.bottleneck_channels));
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hourglass<T> {
    pub config: HourglassConfig,
    pub init_seed: u64,
    stem: Conv2d<T>,
    stem_res: Vec<ResBlock<T>>,
    down: Vec<ResBlock<T>>,
    mid: Vec<ResBlock<T>>,
    up: Vec<ResBlock<T>>,
    skip: Vec<Conv2d<T>>,
    head: Conv2d<T>,
}

/// Everything the reverse pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct HourglassCache<T> {
    input: Tensor<T>,
    h0: Tensor<T>,
    stem_res: Vec<(Tensor<T>, ResCache<T>)>,
    down: Vec<(Tensor<T>, ResCache<T>)>,
    feats: Vec<Tensor<T>>,
    mid: Vec<(Tensor<T>, ResCache<T>)>,
    up: Vec<(Tensor<T>, ResCache<T>)>,
    head_in: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T: Real> Hourglass<T> {
    pub fn new(config: HourglassConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(init_seed, Purpose::Init, 0);
        let c = config.level_channels();
        let d = config.depth;
        let bn = config.bottleneck_channels;
        let stem = Conv2d::new("stem.conv", config.in_channels, c[0], 7, Padding::Reflect, 1.0, &mut rng);
        let stem_res = (0..2).map(|j| ResBlock::new(&format!("stem.res{j}"), c[0], c[0], &mut rng)).collect();
        let down = (0..d).map(|i| ResBlock::new(&format!("down{i}"), c[i], c[i + 1], &mut rng)).collect();
        let mid = vec![ResBlock::new("mid0", c[d], bn, &mut rng), ResBlock::new("mid1", bn, bn, &mut rng)];
        let mut up = Vec::with_capacity(d);
        let mut skip = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == d - 1 { bn } else { c[i + 1] };
            up.push(ResBlock::new(&format!("up{i}"), cin, c[i], &mut rng));
            skip.push(Conv2d::new(&format!("skip{i}"), c[i + 1], c[i], 1, Padding::Zero, 1.0, &mut rng));
        }
        let head = Conv2d::new("head", c[0], config.out_channels, 1, Padding::Zero, 1.0, &mut rng);
        Ok(Self { config, init_seed, stem, stem_res, down, mid, up, skip, head })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape;
        if c != self.config.in_channels || h != w {
            return Err(Error::ShapeMismatch(format!(
                "input {:?}, expected (B, {}, R, R)",
                x.shape, self.config.in_channels
            )));
        }
        self.config.validate_resolution(h).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        x.ensure_finite("network input")
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<HourglassCache<T>> {
        self.check_input(x)?;
        let h0 = self.stem.forward(x);
        let mut cur = leaky_relu(&h0);
        let mut stem_res = Vec::new();
        for blk in &self.stem_res {
            let (out, c) = blk.forward_cached(&cur);
            stem_res.push((std::mem::replace(&mut cur, out), c));
        }
        let mut down = Vec::new();
        let mut feats = Vec::new();
        for blk in &self.down {
            let (out, c) = blk.forward_cached(&cur);
            down.push((std::mem::replace(&mut cur, avg_pool2(&out)), c));
            feats.push(out);
        }
        let mut mid = Vec::new();
        for blk in &self.mid {
            let (out, c) = blk.forward_cached(&cur);
            mid.push((std::mem::replace(&mut cur, out), c));
        }
        let mut up = vec![None; self.up.len()];
        for i in (0..self.up.len()).rev() {
            let u = upsample2(&cur);
            let (out, c) = self.up[i].forward_cached(&u);
            cur = out.add(&self.skip[i].forward(&feats[i]));
            up[i] = Some((u, c));
        }
        let z = self.head.forward(&cur);
        let output = match self.config.head_activation {
            HeadActivation::Sigmoid => sigmoid(&z),
            HeadActivation::Identity => z,
        };
        output.ensure_finite("network output")?;
        Ok(HourglassCache {
            input: x.clone(),
            h0,
            stem_res,
            down,
            feats,
            mid,
            up: up.into_iter().map(Option::unwrap).collect(),
            head_in: cur,
            output,
        })
    }

    /// `(B, in_channels, R, R)` to `(B, out_channels, R, R)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Accumulates parameter gradients for the output gradient `dout` and
    /// returns the input gradient.
    pub fn backward(&mut self, cache: &HourglassCache<T>, dout: &Tensor<T>) -> Result<Tensor<T>> {
        if dout.shape != cache.output.shape {
            return Err(Error::ShapeMismatch(format!("output gradient {:?} vs {:?}", dout.shape, cache.output.shape)));
        }
        let dz = match self.config.head_activation {
            HeadActivation::Sigmoid => sigmoid_backward(&cache.output, dout),
            HeadActivation::Identity => dout.clone(),
        };
        let mut g = self.head.backward(&cache.head_in, &dz);
        let mut dfeats = Vec::with_capacity(self.up.len());
        for i in 0..self.up.len() {
            dfeats.push(self.skip[i].backward(&cache.feats[i], &g));
            let (u, c) = &cache.up[i];
            g = upsample2_backward(&self.up[i].backward(u, c, &g));
        }
        for (blk, (x, c)) in self.mid.iter_mut().zip(&cache.mid).rev() {
            g = blk.backward(x, c, &g);
        }
        for i in (0..self.down.len()).rev() {
            let gf = avg_pool2_backward(&g).add(&dfeats[i]);
            let (x, c) = &cache.down[i];
            g = self.down[i].backward(x, c, &gf);
        }
        for (blk, (x, c)) in self.stem_res.iter_mut().zip(&cache.stem_res).rev() {
            g = blk.backward(x, c, &g);
        }
        let dh0 = leaky_relu_backward(&cache.h0, &g);
        let dx = self.stem.backward(&cache.input, &dh0);
        for p in self.params() {
            super::tensor::ensure_finite(&p.grad, &p.name)?;
        }
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.stem.params().into_iter().collect();
        for b in self.stem_res.iter().chain(&self.down).chain(&self.mid) {
            v.extend(b.params());
        }
        for (u, s) in self.up.iter().zip(&self.skip) {
            v.extend(u.params());
            v.extend(s.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.stem.params_mut().into_iter().collect();
        for b in self.stem_res.iter_mut().chain(self.down.iter_mut()).chain(self.mid.iter_mut()) {
            v.extend(b.params_mut());
        }
        for (u, s) in self.up.iter_mut().zip(self.skip.iter_mut()) {
            v.extend(u.params_mut());
            v.extend(s.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn n_weights(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<U: Real>(&self) -> Hourglass<U> {
        let mut out = Hourglass::<U>::new(self.config.clone(), self.init_seed).expect("validated config");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.value.iter_mut().zip(&src.value) {
                *d = U::of(s.to_f64().unwrap());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input<T: Real>(b: usize, c: usize, r: usize) -> Tensor<T> {
        let data = (0..b * c * r * r).map(|i| T::of(((i * 7919) % 101) as f64 / 101.0)).collect();
        Tensor::from_vec([b, c, r, r], data).unwrap()
    }

    #[test]
    fn shape_contract_over_resolution_and_depth() {
        for r in [8usize, 16, 32, 64] {
            for d in 1..=4 {
                if r % (1 << d) != 0 || r >> d < 1 {
                    continue;
                }
                let cfg = HourglassConfig { stem_channels: 2, bottleneck_channels: 4, depth: d, ..Default::default() };
                let net = Hourglass::<f32>::new(cfg, 1).unwrap();
                let y = net.forward(&input(1, 1, r)).unwrap();
                assert_eq!(y.shape, [1, 16, r, r], "R={r} D={d}");
                assert!(y.data.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn zero_parameters_give_half_everywhere() {
        let cfg = HourglassConfig { stem_channels: 4, bottleneck_channels: 8, depth: 2, ..Default::default() };
        let mut net = Hourglass::<f32>::new(cfg, 3).unwrap();
        for p in net.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let y = net.forward(&input(1, 1, 16)).unwrap();
        assert!(y.data.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn duplicated_batch_duplicates_rows() {
        let cfg = HourglassConfig { in_channels: 3, stem_channels: 4, bottleneck_channels: 8, depth: 2, ..Default::default() };
        let net = Hourglass::<f32>::new(cfg, 5).unwrap();
        let one = input::<f32>(1, 3, 16);
        let mut two = one.clone();
        two.shape[0] = 2;
        two.data.extend_from_slice(&one.data);
        let y1 = net.forward(&one).unwrap();
        let y2 = net.forward(&two).unwrap();
        assert_eq!(y2.item(0), y1.item(0));
        assert_eq!(y2.item(1), y1.item(0));
    }

    #[test]
    fn bad_input_shapes_are_rejected() {
        let net = Hourglass::<f32>::new(HourglassConfig { depth: 3, ..Default::default() }, 0).unwrap();
        assert!(matches!(net.forward(&input(1, 1, 12)), Err(Error::ShapeMismatch(_))));
        assert!(matches!(net.forward(&input(1, 3, 16)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let cfg = HourglassConfig { stem_channels: 2, bottleneck_channels: 4, depth: 1, ..Default::default() };
        let mut net = Hourglass::<f64>::new(cfg, 2).unwrap();
        let cache = net.forward_cached(&input(2, 1, 8)).unwrap();
        let zero = Tensor::zeros(cache.output.shape);
        net.backward(&cache, &zero).unwrap();
        assert!(net.params().iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let cfg = HourglassConfig { stem_channels: 4, bottleneck_channels: 8, depth: 2, ..Default::default() };
        let a = Hourglass::<f32>::new(cfg.clone(), 11).unwrap();
        let b = Hourglass::<f32>::new(cfg, 11).unwrap();
        assert_eq!(a, b);
        let x = input(1, 1, 16);
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }
}
