//! Central finite-difference checks of every reverse pass, in f64.
//!
//! The probed loss is `sum(c * y)` for fixed random coefficients `c`, so the
//! analytic pass is fed `dy = c` and compared against perturbing every
//! parameter and input element by `±h`.

use rand::Rng as _;

use super::hourglass::{HeadActivation, Hourglass, HourglassConfig};
use super::layers::{self, Conv2d, Padding, Param, ResBlock};
use super::tensor::Tensor;
use crate::rng::{self, Purpose, Rng};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn random_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor { shape, data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

struct Acc {
    max: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.max = self.max.max(rel_err(analytic, numeric));
        self.n += 1;
    }
}

fn check_params<M>(
    model: &mut M,
    params_mut: impl Fn(&mut M) -> Vec<&mut Param<f64>>,
    loss: impl Fn(&M) -> f64,
    acc: &mut Acc,
) {
    let analytic: Vec<Vec<f64>> = params_mut(model).iter().map(|p| p.grad.clone()).collect();
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &g) in grads.iter().enumerate() {
            let orig = params_mut(model)[pi].value[j];
            params_mut(model)[pi].value[j] = orig + FD_STEP;
            let lp = loss(model);
            params_mut(model)[pi].value[j] = orig - FD_STEP;
            let lm = loss(model);
            params_mut(model)[pi].value[j] = orig;
            acc.push(g, (lp - lm) / (2.0 * FD_STEP));
        }
    }
}

fn check_input(x: &Tensor<f64>, dx: &Tensor<f64>, loss: impl Fn(&Tensor<f64>) -> f64, acc: &mut Acc) {
    let mut xp = x.clone();
    for i in 0..x.data.len() {
        xp.data[i] = x.data[i] + FD_STEP;
        let lp = loss(&xp);
        xp.data[i] = x.data[i] - FD_STEP;
        let lm = loss(&xp);
        xp.data[i] = x.data[i];
        acc.push(dx.data[i], (lp - lm) / (2.0 * FD_STEP));
    }
}

fn randomize(params: Vec<&mut Param<f64>>, rng: &mut Rng) {
    for p in params {
        p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        p.zero_grad();
    }
}

pub fn conv(k: usize, padding: Padding, seed: u64) -> GradReport {
    let mut rng = rng::stream(seed, Purpose::Init, 1000 + k as u64);
    let mut c = Conv2d::<f64>::new("conv", 2, 3, k, padding, 1.0, &mut rng);
    randomize(c.params_mut().into_iter().collect(), &mut rng);
    let x = random_tensor([2, 2, 7, 6], &mut rng);
    let coef = random_tensor([2, 3, 7, 6], &mut rng);
    let dx = c.backward(&x, &coef);
    let mut acc = Acc { max: 0.0, n: 0 };
    check_params(&mut c, |m| m.params_mut().into_iter().collect(), |m| dot(&m.forward(&x), &coef), &mut acc);
    check_input(&x, &dx, |xp| dot(&c.forward(xp), &coef), &mut acc);
    GradReport { name: format!("conv{k}x{k} {padding:?} padding"), max_rel_err: acc.max, checked: acc.n }
}

pub fn elementwise(seed: u64) -> Vec<GradReport> {
    let mut rng = rng::stream(seed, Purpose::Init, 2000);
    let x = random_tensor([2, 3, 4, 6], &mut rng);
    let coef_same = random_tensor(x.shape, &mut rng);
    let coef_half = random_tensor([2, 3, 2, 3], &mut rng);
    let coef_double = random_tensor([2, 3, 8, 12], &mut rng);
    let mut out = Vec::new();
    let mut run = |name: &str, dx: Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> f64| {
        let mut acc = Acc { max: 0.0, n: 0 };
        check_input(&x, &dx, f, &mut acc);
        out.push(GradReport { name: name.into(), max_rel_err: acc.max, checked: acc.n });
    };
    run("leaky relu", layers::leaky_relu_backward(&x, &coef_same), &|t| dot(&layers::leaky_relu(t), &coef_same));
    let y = layers::sigmoid(&x);
    run("sigmoid", layers::sigmoid_backward(&y, &coef_same), &|t| dot(&layers::sigmoid(t), &coef_same));
    run("average pool", layers::avg_pool2_backward(&coef_half), &|t| dot(&layers::avg_pool2(t), &coef_half));
    run("nearest upsample", layers::upsample2_backward(&coef_double), &|t| dot(&layers::upsample2(t), &coef_double));
    out
}

pub fn resblock(cin: usize, cout: usize, seed: u64) -> GradReport {
    let mut rng = rng::stream(seed, Purpose::Init, 3000 + (cin * 16 + cout) as u64);
    let mut b = ResBlock::<f64>::new("res", cin, cout, &mut rng);
    randomize(b.params_mut(), &mut rng);
    let x = random_tensor([2, cin, 5, 4], &mut rng);
    let coef = random_tensor([2, cout, 5, 4], &mut rng);
    let (_, cache) = b.forward_cached(&x);
    let dx = b.backward(&x, &cache, &coef);
    let mut acc = Acc { max: 0.0, n: 0 };
    check_params(&mut b, |m| m.params_mut(), |m| dot(&m.forward(&x), &coef), &mut acc);
    check_input(&x, &dx, |xp| dot(&b.forward(xp), &coef), &mut acc);
    let kind = if cin == cout { "identity" } else { "projection" };
    GradReport { name: format!("residual block ({kind} skip)"), max_rel_err: acc.max, checked: acc.n }
}

/// Whole network at R=8, D=1 with positional input channels.
pub fn hourglass(head: HeadActivation, seed: u64) -> GradReport {
    let cfg = HourglassConfig {
        in_channels: 3,
        stem_channels: 2,
        depth: 1,
        bottleneck_channels: 3,
        out_channels: 4,
        head_activation: head,
    };
    let mut rng = rng::stream(seed, Purpose::Init, 4000);
    let mut net = Hourglass::<f64>::new(cfg, seed).expect("valid config");
    randomize(net.params_mut(), &mut rng);
    let x = random_tensor([2, 3, 8, 8], &mut rng);
    let coef = random_tensor([2, 4, 8, 8], &mut rng);
    let loss = |m: &Hourglass<f64>, x: &Tensor<f64>| dot(&m.forward(x).expect("finite"), &coef);
    let cache = net.forward_cached(&x).expect("finite");
    let dx = net.backward(&cache, &coef).expect("finite");
    let mut acc = Acc { max: 0.0, n: 0 };
    check_params(&mut net, |m| m.params_mut(), |m| loss(m, &x), &mut acc);
    check_input(&x, &dx, |xp| loss(&net, xp), &mut acc);
    GradReport { name: format!("hourglass R=8 D=1 ({head:?} head)"), max_rel_err: acc.max, checked: acc.n }
}

/// Every layer type individually, then the composed network.
pub fn run_all(seed: u64) -> Vec<GradReport> {
    let mut out = Vec::new();
    for k in [1, 3, 7] {
        out.push(conv(k, Padding::Zero, seed));
    }
    out.push(conv(7, Padding::Reflect, seed));
    out.push(conv(3, Padding::Reflect, seed));
    out.extend(elementwise(seed));
    out.push(resblock(3, 3, seed));
    out.push(resblock(2, 4, seed));
    out.push(hourglass(HeadActivation::Sigmoid, seed));
    out.push(hourglass(HeadActivation::Identity, seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_reverse_passes_match_finite_differences() {
        for r in run_all(7) {
            assert!(r.max_rel_err < 1e-4, "{}: {}", r.name, r.max_rel_err);
            assert!(r.checked > 0);
        }
    }
}
