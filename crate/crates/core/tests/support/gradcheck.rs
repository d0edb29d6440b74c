//! Central finite-difference checks of every layer's backward pass and of
//! the end-to-end training objective, in double precision. Each instance
//! panics on a mismatch and returns its worst relative error.

use nircolor::nn::*;
use nircolor::preprocess::MultiScalePatch;
use nircolor::topology::{build_model, Model, TopologySpec};
use nircolor::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-3;
pub const INSTANCES: u64 = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(c: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::new(c, h, w, rand_vec(c * h * w, r)).unwrap()
}

/// Checks `analytic` against central differences of `f` at `x`.
fn check(what: &str, x: &mut [f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "{what}: gradient length");
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let up = f(x);
        x[i] = orig - H;
        let down = f(x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let e = rel_err(analytic[i], numeric);
        assert!(e < TOL, "{what}[{i}]: analytic {} numeric {numeric} (rel {e})", analytic[i]);
        worst = worst.max(e);
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv_instance(seed: u64) -> f64 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let (cin, cout, k) = (r.random_range(1..4), r.random_range(1..4), [1, 3, 5][r.random_range(0..3)]);
    let (h, w) = (k + r.random_range(0..4), k + r.random_range(0..4));
    let kind = LayerKind::Conv { in_ch: cin, out_ch: cout, kernel: k };
    let p = LayerParams::from_parts(kind, rand_vec(kind.weight_len(), r), rand_vec(cout, r)).unwrap();
    let x = rand_tensor(cin, h, w, r);
    let y = conv_forward(&x, &p).unwrap();
    let c = rand_vec(y.data.len(), r);
    let g = Tensor::new(y.channels, y.height, y.width, c.clone()).unwrap();
    let (gx, gp) = conv_backward(&x, &p, &g, true).unwrap();
    let mut worst = 0.0f64;
    let mut xd = x.data.clone();
    worst = worst.max(check("conv input", &mut xd, &gx.unwrap().data, &mut |v| {
        dot(&conv_forward(&Tensor::new(cin, h, w, v.to_vec()).unwrap(), &p).unwrap().data, &c)
    }));
    let mut wd = p.weights.clone();
    worst = worst.max(check("conv weights", &mut wd, &gp.weights, &mut |v| {
        let q = LayerParams::from_parts(kind, v.to_vec(), p.bias.clone()).unwrap();
        dot(&conv_forward(&x, &q).unwrap().data, &c)
    }));
    let mut bd = p.bias.clone();
    worst.max(check("conv bias", &mut bd, &gp.bias, &mut |v| {
        let q = LayerParams::from_parts(kind, p.weights.clone(), v.to_vec()).unwrap();
        dot(&conv_forward(&x, &q).unwrap().data, &c)
    }))
}

/// Inputs kept away from the kink so the difference quotient is smooth.
fn away_from_zero(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = r.random_range(0.01..1.0);
            if r.random::<bool>() { m } else { -m }
        })
        .collect()
}

pub fn relu_instance(seed: u64) -> f64 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
    let x = Tensor::new(c, h, w, away_from_zero(r, c * h * w)).unwrap();
    let g = rand_vec(c * h * w, r);
    let ga = relu_backward(&relu(&x), &Tensor::new(c, h, w, g.clone()).unwrap());
    let mut xd = x.data.clone();
    check("relu", &mut xd, &ga.data, &mut |v| dot(&relu(&Tensor::new(c, h, w, v.to_vec()).unwrap()).data, &g))
}

pub fn pool_instance(seed: u64) -> f64 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (r.random_range(1..4), 2 * r.random_range(1..4), 2 * r.random_range(1..4));
    // distinct values so the argmax is stable under the perturbation
    let mut vals: Vec<f64> = (0..c * h * w).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    let x = Tensor::new(c, h, w, vals).unwrap();
    let (y, idx) = maxpool2(&x).unwrap();
    let g = rand_vec(y.data.len(), r);
    let ga = maxpool2_backward(&idx, &Tensor::new(y.channels, y.height, y.width, g.clone()).unwrap());
    let mut xd = x.data.clone();
    check("maxpool", &mut xd, &ga.data, &mut |v| {
        dot(&maxpool2(&Tensor::new(c, h, w, v.to_vec()).unwrap()).unwrap().0.data, &g)
    })
}

pub fn fc_instance(seed: u64) -> f64 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let (n_in, n_out) = (r.random_range(1..12), r.random_range(1..5));
    let kind = LayerKind::Dense { inputs: n_in, outputs: n_out };
    let p = LayerParams::from_parts(kind, rand_vec(n_in * n_out, r), rand_vec(n_out, r)).unwrap();
    let x = rand_vec(n_in, r);
    let c = rand_vec(n_out, r);
    let (gx, gp) = fc_backward(&x, &p, &c).unwrap();
    let mut xd = x.clone();
    let mut worst = check("fc input", &mut xd, &gx, &mut |v| dot(&fc_forward(v, &p).unwrap(), &c));
    let mut wd = p.weights.clone();
    worst = worst.max(check("fc weights", &mut wd, &gp.weights, &mut |v| {
        let q = LayerParams::from_parts(kind, v.to_vec(), p.bias.clone()).unwrap();
        dot(&fc_forward(&x, &q).unwrap(), &c)
    }));
    let mut bd = p.bias.clone();
    worst.max(check("fc bias", &mut bd, &gp.bias, &mut |v| {
        let q = LayerParams::from_parts(kind, p.weights.clone(), v.to_vec()).unwrap();
        dot(&fc_forward(&x, &q).unwrap(), &c)
    }))
}

pub fn mse_instance(seed: u64) -> f64 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let (n, dim) = (r.random_range(1..6), r.random_range(1..4));
    let p = rand_vec(n * dim, r);
    let t = rand_vec(n * dim, r);
    let (_, g) = mse_loss(&p, &t, dim).unwrap();
    let mut pd = p.clone();
    check("mse", &mut pd, &g, &mut |v| mse_loss(v, &t, dim).unwrap().0)
}

fn small_spec(r: &mut ChaCha8Rng) -> TopologySpec {
    let n_pool = r.random_range(0..2);
    let per_block = r.random_range(1..3);
    TopologySpec {
        first_filters: r.random_range(1..4),
        ..TopologySpec::new(r.random_range(1..3), per_block * (n_pool + 1), n_pool, r.random::<bool>()).unwrap()
    }
}

fn random_patch(spec: &TopologySpec, r: &mut ChaCha8Rng) -> MultiScalePatch {
    let roi = spec.roi();
    MultiScalePatch {
        patches: (0..spec.n_levels)
            .map(|_| Image::new(roi, roi, 1, (0..roi * roi).map(|_| r.random_range(-1.0..1.0f32)).collect()).unwrap())
            .collect(),
        bypass: (0..spec.n_levels).map(|_| r.random_range(0.0..1.0f32)).collect(),
        center: (0, 0),
        roi,
    }
}

fn flat_params(m: &Model<f64>) -> Vec<f64> {
    m.params().flat_map(|p| p.weights.iter().chain(&p.bias).copied()).collect()
}

fn set_params(m: &mut Model<f64>, v: &[f64]) {
    let mut it = v.iter().copied();
    for p in m.params_mut() {
        for w in p.weights.iter_mut().chain(p.bias.iter_mut()) {
            *w = it.next().unwrap();
        }
    }
}

/// Batch objective: mean over patches of the squared output error.
fn objective(m: &Model<f64>, batch: &[(MultiScalePatch, [f64; 3])]) -> f64 {
    let preds: Vec<f64> = batch.iter().flat_map(|(p, _)| m.forward(p).unwrap()).collect();
    let targets: Vec<f64> = batch.iter().flat_map(|(_, t)| *t).collect();
    mse_loss(&preds, &targets, 3).unwrap().0
}

fn analytic_gradient(model: &Model<f64>, batch: &[(MultiScalePatch, [f64; 3])]) -> Vec<f64> {
    let preds: Vec<f64> = batch.iter().flat_map(|(p, _)| model.forward(p).unwrap()).collect();
    let targets: Vec<f64> = batch.iter().flat_map(|(_, t)| *t).collect();
    let (_, g) = mse_loss(&preds, &targets, 3).unwrap();
    let mut analytic = vec![0.0; model.param_count()];
    for (i, (p, _)) in batch.iter().enumerate() {
        let trace = model.forward_trace(p).unwrap();
        let grads = model.backward(&trace, &[g[3 * i], g[3 * i + 1], g[3 * i + 2]]).unwrap();
        for (a, v) in analytic.iter_mut().zip(grads.iter_values()) {
            *a += v;
        }
    }
    analytic
}

pub fn end_to_end_instance(seed: u64) -> f64 {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let spec = small_spec(r);
    let mut model: Model<f64> = build_model(spec, 5, InitScheme::Fixed(0.4), seed).unwrap();
    for p in model.params_mut() {
        for b in &mut p.bias {
            *b = r.random_range(0.1..0.4);
        }
    }
    let branch_len = model.param_count() - model.fusion.param_count();
    // redraw the batch until some branch unit is active, so the check is not vacuous
    let (batch, analytic) = (0..50)
        .map(|_| {
            let batch: Vec<(MultiScalePatch, [f64; 3])> = (0..r.random_range(1..4))
                .map(|_| (random_patch(&spec, r), [0, 1, 2].map(|_| r.random_range(0.0..1.0))))
                .collect();
            let analytic = analytic_gradient(&model, &batch);
            (batch, analytic)
        })
        .find(|(_, a)| a[..branch_len].iter().any(|v| v.abs() > 1e-6))
        .unwrap_or_else(|| panic!("{spec}: branch gradients vanish"));
    let mut theta = flat_params(&model);
    let mut probe = model.clone();
    check(&format!("end-to-end {spec}"), &mut theta, &analytic, &mut |v| {
        set_params(&mut probe, v);
        objective(&probe, &batch)
    })
}
