//! Central finite-difference checks of every analytic gradient, in `f64`.
//! Each check draws 20 random points (fresh inputs and weights) and compares
//! one random coordinate per differentiable tensor. Returns the worst
//! relative error seen.

use lungssl::nnet::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward_inplace, relu_inplace, ChannelNorm, Conv2d, Dense,
};
use lungssl::nnet::{FeatureExtractor, Head, HeadKind, Matrix, Parameters, Projector};
use lungssl::rng::{stream, StreamRng};
use lungssl::ssl::{barlow_twins_grad, nt_xent_grad, vicreg_grad, LossGrad, VicregWeights};
use lungssl::supervised::bce_grad;
use lungssl::exec::Execution;
use rand::Rng;

use super::oracle::random_matrix;

pub const STEP: f64 = 1e-4;
/// For compositions with ReLUs inside: small enough that a perturbation
/// rarely carries a hidden pre-activation across zero.
pub const KINKED_STEP: f64 = 1e-6;
pub const POINTS: u64 = 20;
pub const TOLERANCE: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Relative error of `analytic` against the central difference of `f`
/// around a zero offset.
fn check(f: impl Fn(f64) -> f64, analytic: f64) -> f64 {
    check_with(STEP, f, analytic)
}

fn check_with(step: f64, f: impl Fn(f64) -> f64, analytic: f64) -> f64 {
    let numeric = (f(step) - f(-step)) / (2.0 * step);
    rel_err(analytic, numeric)
}

fn uniform(n: usize, r: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn randomize<P: Parameters<f64>>(p: &mut P, r: &mut StreamRng) {
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.random_range(-1.0..1.0);
        }
    }
}

fn nudged<P: Parameters<f64>>(p: &P, (t, i): (usize, usize), d: f64) -> P {
    let mut q = p.clone();
    q.tensors_mut()[t][i] += d;
    q
}

fn grad_at<P: Parameters<f64>>(g: &P, (t, i): (usize, usize)) -> f64 {
    g.tensors()[t].data[i]
}

/// Checks one random coordinate of every parameter tensor.
fn check_params<P: Parameters<f64>>(
    step: f64,
    params: &P,
    grads: &P,
    loss: &dyn Fn(&P) -> f64,
    r: &mut StreamRng,
) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..params.tensors().len() {
        let len = params.tensors()[t].data.len();
        let at = (t, r.random_range(0..len));
        worst = worst.max(check_with(step, |d| loss(&nudged(params, at, d)), grad_at(grads, at)));
    }
    worst
}

pub fn conv() -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(1, &[p]);
        let (h, w) = (7, 6);
        let mut c = Conv2d::<f64>::init(2, 3, 3, 2, 1, r);
        randomize(&mut c, r);
        let x = uniform(2 * h * w, r);
        let out_len = c.forward(&x, 1, h, w).len();
        let weights = uniform(out_len, r);
        let loss = |c: &Conv2d<f64>, x: &[f64]| dot(&c.forward(x, 1, h, w), &weights);
        let mut g = c.zeros_like();
        let dx = c.backward(&x, 1, h, w, &weights, &mut g, true).unwrap();
        worst = worst.max(check_params(STEP, &c, &g, &|c| loss(c, &x), r));
        let i = r.random_range(0..x.len());
        worst = worst.max(check(
            |d| {
                let mut x2 = x.clone();
                x2[i] += d;
                loss(&c, &x2)
            },
            dx[i],
        ));
    }
    worst
}

pub fn norm() -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(2, &[p]);
        let mut n = ChannelNorm::<f64>::new(3, 1e-5);
        randomize(&mut n, r);
        let x = uniform(3 * 10, r);
        let weights = uniform(x.len(), r);
        let loss = |n: &ChannelNorm<f64>, x: &[f64]| dot(&n.forward(x), &weights);
        let mut xhat = Vec::new();
        let rstd = n.normalize(&x, &mut xhat);
        let mut g = n.zeros_like();
        let dx = n.backward(&xhat, rstd, &weights, &mut g);
        worst = worst.max(check_params(STEP, &n, &g, &|n| loss(n, &x), r));
        let i = r.random_range(0..x.len());
        worst = worst.max(check(
            |d| {
                let mut x2 = x.clone();
                x2[i] += d;
                loss(&n, &x2)
            },
            dx[i],
        ));
    }
    worst
}

pub fn dense() -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(3, &[p]);
        let mut d = Dense::<f64>::init_uniform(5, 4, 1.0, r);
        randomize(&mut d, r);
        let x = random_matrix(3, 5, r);
        let weights = random_matrix(3, 4, r);
        let loss = |d: &Dense<f64>, x: &Matrix<f64>| dot(&d.forward(x).data, &weights.data);
        let mut g = d.zeros_like();
        let dx = d.backward(&x, &weights, &mut g);
        worst = worst.max(check_params(STEP, &d, &g, &|d| loss(d, &x), r));
        let i = r.random_range(0..x.data.len());
        worst = worst.max(check(
            |e| {
                let mut x2 = x.clone();
                x2.data[i] += e;
                loss(&d, &x2)
            },
            dx.data[i],
        ));
    }
    worst
}

pub fn relu() -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(4, &[p]);
        // keep clear of the kink so the central difference is valid
        let x: Vec<f64> = (0..12)
            .map(|_| {
                let v: f64 = r.random_range(0.01..1.0);
                if r.random_bool(0.5) { v } else { -v }
            })
            .collect();
        let weights = uniform(x.len(), r);
        let loss = |x: &[f64]| {
            let mut a = x.to_vec();
            relu_inplace(&mut a);
            dot(&a, &weights)
        };
        let mut activated = x.clone();
        relu_inplace(&mut activated);
        let mut dx = weights.clone();
        relu_backward_inplace(&activated, &mut dx);
        let i = r.random_range(0..x.len());
        worst = worst.max(check(
            |d| {
                let mut x2 = x.clone();
                x2[i] += d;
                loss(&x2)
            },
            dx[i],
        ));
    }
    worst
}

pub fn gap() -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(5, &[p]);
        let (channels, hw) = (4, 9);
        let x = uniform(channels * hw, r);
        let weights = uniform(channels, r);
        let loss = |x: &[f64]| dot(&global_avg_pool(x, channels), &weights);
        let dx = global_avg_pool_backward(&weights, hw);
        let i = r.random_range(0..x.len());
        worst = worst.max(check(
            |d| {
                let mut x2 = x.clone();
                x2[i] += d;
                loss(&x2)
            },
            dx[i],
        ));
    }
    worst
}

pub fn extractor() -> f64 {
    let mut worst: f64 = 0.0;
    let exec = Execution::Sequential;
    for p in 0..POINTS {
        let r = &mut stream(6, &[p]);
        let mut e = FeatureExtractor::<f64>::init(16, &[3, 4, 5], 3, 2, 1e-5, r);
        randomize(&mut e, r);
        let n = 3;
        let images: Vec<f64> = (0..n * 256).map(|_| r.random_range(0.0..1.0)).collect();
        let weights = random_matrix(n, e.feature_dim(), r);
        let loss = |e: &FeatureExtractor<f64>| dot(&e.forward(&images, n, exec).unwrap().data, &weights.data);
        let mut tapes = Vec::new();
        e.forward_train(&images, n, exec, &mut tapes).unwrap();
        let g = e.backward(&tapes, &weights, exec);
        worst = worst.max(check_params(KINKED_STEP, &e, &g, &loss, r));
    }
    worst
}

pub fn projector() -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(7, &[p]);
        let mut proj = Projector::<f64>::init(5, 7, 4, r);
        randomize(&mut proj, r);
        worst = worst.max(mlp_check(&proj, |q| &q.mlp, 5, 4, r));
    }
    worst
}

fn head(kind: HeadKind, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(seed, &[p]);
        let mut h = Head::<f64>::init(kind, 6, r);
        // the output layer starts at zero; move off it so every gradient is live
        randomize(&mut h, r);
        worst = worst.max(mlp_check(&h, |q| &q.mlp, 6, 1, r));
    }
    worst
}

pub fn head_linear() -> f64 {
    head(HeadKind::Linear, 8)
}

pub fn head_mlp32() -> f64 {
    head(HeadKind::Mlp32, 9)
}

fn mlp_check<P: Parameters<f64>>(
    params: &P,
    mlp: impl Fn(&P) -> &lungssl::nnet::Mlp<f64>,
    inputs: usize,
    outputs: usize,
    r: &mut StreamRng,
) -> f64 {
    let x = random_matrix(4, inputs, r);
    let weights = random_matrix(4, outputs, r);
    let loss = |p: &P, x: &Matrix<f64>| dot(&mlp(p).forward(x).data, &weights.data);
    let (_, cache) = mlp(params).forward_train(&x);
    let mut gm = mlp(params).zeros_like();
    let dx = mlp(params).backward(&cache, &weights, &mut gm);
    // the wrappers expose exactly their MLP's tensors, in order
    let mut g = params.zeros_like();
    for (dst, src) in g.tensors_mut().into_iter().zip(gm.tensors()) {
        dst.copy_from_slice(src.data);
    }
    let mut worst = check_params(KINKED_STEP, params, &g, &|p| loss(p, &x), r);
    let i = r.random_range(0..x.data.len());
    worst = worst.max(check_with(
        KINKED_STEP,
        |d| {
            let mut x2 = x.clone();
            x2.data[i] += d;
            loss(params, &x2)
        },
        dx.data[i],
    ));
    worst
}

fn loss_check(seed: u64, f: impl Fn(&Matrix<f64>, &Matrix<f64>) -> LossGrad, scale_range: (f64, f64)) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(seed, &[p]);
        let n = r.random_range(2..=8);
        let e = r.random_range(1..=16);
        let scale = r.random_range(scale_range.0..scale_range.1);
        let a = random_matrix(n, e, r).map(|v| v * scale);
        let b = random_matrix(n, e, r).map(|v| v * scale);
        let lg = f(&a, &b);
        let i = r.random_range(0..a.data.len());
        worst = worst.max(check(
            |d| {
                let mut a2 = a.clone();
                a2.data[i] += d;
                f(&a2, &b).loss
            },
            lg.grad_a.data[i],
        ));
        let j = r.random_range(0..b.data.len());
        worst = worst.max(check(
            |d| {
                let mut b2 = b.clone();
                b2.data[j] += d;
                f(&a, &b2).loss
            },
            lg.grad_b.data[j],
        ));
    }
    worst
}

pub fn nt_xent() -> f64 {
    loss_check(10, |a, b| nt_xent_grad(a, b, 0.1).unwrap(), (0.5, 2.0))
}

pub fn barlow_twins() -> f64 {
    loss_check(11, |a, b| barlow_twins_grad(a, b, 0.005).unwrap(), (0.5, 2.0))
}

pub fn vicreg() -> f64 {
    // small scales put the variance hinge in its active region
    loss_check(12, |a, b| vicreg_grad(a, b, VicregWeights::default()).unwrap(), (0.1, 2.0))
}

pub fn bce() -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let r = &mut stream(13, &[p]);
        let n = r.random_range(1..10);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-6.0..6.0)).collect();
        let labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect();
        let (_, g) = bce_grad(&logits, &labels);
        let i = r.random_range(0..n);
        worst = worst.max(check(
            |d| {
                let mut l2 = logits.clone();
                l2[i] += d;
                bce_grad(&l2, &labels).0
            },
            g[i],
        ));
    }
    worst
}

/// Every check by name.
pub fn all() -> Vec<(&'static str, fn() -> f64)> {
    vec![
        ("conv", conv as fn() -> f64),
        ("channel_norm", norm),
        ("dense", dense),
        ("relu", relu),
        ("global_avg_pool", gap),
        ("extractor", extractor),
        ("projector", projector),
        ("head_linear", head_linear),
        ("head_mlp32", head_mlp32),
        ("nt_xent", nt_xent),
        ("barlow_twins", barlow_twins),
        ("vicreg", vicreg),
        ("bce", bce),
    ]
}
