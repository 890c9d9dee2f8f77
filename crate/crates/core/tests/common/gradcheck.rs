//! Central finite-difference oracle for graph gradients.

use afgen::models::{DetectorKind, DetectorNet, GeneratorNet, Model};
use afgen::param::bind;
use afgen::training::{classification_loss_whitebox, generator_loss, perceptual_loss};
use afgen::{Graph, PoolKind, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const UNIT_TOL: f64 = 1e-4;
pub const COMPOSED_TOL: f64 = 1e-3;

/// Outcome of one check: worst relative error and how many coordinates were compared.
#[derive(Debug)]
pub struct GradReport {
    pub name: String,
    pub worst: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst <= tol && self.checked > 0
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so ReLU/abs kinks are out of reach of the step.
pub fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) { v } else { -v }
    })
}

/// Reduces any node to a scalar through a fixed random projection (`dense` then `sum`).
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = g.reshape(y, [1, n])?;
    let w = g.constant(rand_tensor(&mut rng, &[n, 1], -1.0, 1.0));
    let b = g.constant(Tensor::zeros([1]));
    let d = g.dense(flat, w, b)?;
    Ok(g.sum(d))
}

/// Central difference with `STEP`, or `None` when halving the step changes the estimate,
/// which means an activation kink lies within reach of the perturbation.
pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> Option<f64> {
    let d = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(h) - f(-h)) / (2.0 * h);
    let full = d(&mut f, STEP);
    let half = d(&mut f, STEP / 2.0);
    let scale = full.abs().max(half.abs()).max(1e-7);
    ((full - half).abs() <= 1e-6 * scale).then_some(full)
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: Option<f64>) {
        match numeric {
            Some(n) => {
                self.worst = self.worst.max(rel_err(analytic, n));
                self.checked += 1;
            }
            None => self.skipped += 1,
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compares analytic gradients of `build` with central differences for up to `per_input`
/// coordinates of every input. Coordinates whose second difference reveals a kink are skipped.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], per_input: usize, build: F) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vars).expect("forward");
        g.value(l).item().expect("scalar loss")
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &vars).expect("forward");
    g.backward(loss).expect("backward");
        let mut report = GradReport { name: name.to_string(), worst: 0.0, checked: 0, skipped: 0 };
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        let len = inputs[k].len();
        let stride = (len / per_input.max(1)).max(1);
        for idx in (0..len).step_by(stride).take(per_input) {
            let mut xs = inputs.to_vec();
            let base = xs[k].data()[idx];
            let numeric = central_difference(|h| {
                xs[k].data_mut()[idx] = base + h;
                eval(&xs)
            });
            report.record(analytic.data()[idx], numeric);
        }
    }
    report
}

/// Every engine operation, each through a random projection where needed.
pub fn op_suite() -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for (stride, pad, k, h) in [(1, 1, 3, 6), (1, 0, 3, 7), (2, 1, 4, 8), (2, 0, 2, 6)] {
        let x = rand_tensor(&mut rng, &[2, 3, h, h], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[4, 3, k, k], -0.5, 0.5);
        let b = rand_tensor(&mut rng, &[4], -0.5, 0.5);
        out.push(check(&format!("conv2d s{stride} p{pad} k{k}"), &[x, w, b], 40, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(g, y, 1)
        }));
    }
    let x = rand_away_from_zero(&mut rng, &[2, 3, 4, 4]);
    out.push(check("relu", &[x], 96, |g, v| {
        let y = g.relu(v[0]);
        project(g, y, 2)
    }));
    let x = rand_tensor(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
    out.push(check("maxpool 2/2", &[x.clone()], 144, |g, v| {
        let y = g.pool2d(v[0], PoolKind::Max, 2, 2)?;
        project(g, y, 3)
    }));
    out.push(check("maxpool 3/1", &[x.clone()], 144, |g, v| {
        let y = g.pool2d(v[0], PoolKind::Max, 3, 1)?;
        project(g, y, 4)
    }));
    out.push(check("avgpool 2/2", &[x.clone()], 144, |g, v| {
        let y = g.pool2d(v[0], PoolKind::Avg, 2, 2)?;
        project(g, y, 5)
    }));
    out.push(check("global_avg_pool", &[x.clone()], 144, |g, v| {
        let y = g.global_avg_pool(v[0])?;
        project(g, y, 6)
    }));
    let a = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4], -1.0, 1.0);
    out.push(check("dense", &[a.clone(), w, b], 20, |g, v| {
        let y = g.dense(v[0], v[1], v[2])?;
        project(g, y, 7)
    }));
    out.push(check("reshape/flatten", &[x.clone()], 72, |g, v| {
        let y = g.flatten(v[0])?;
        let y = g.reshape(y, [4, 36])?;
        project(g, y, 8)
    }));
    let y2 = rand_tensor(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
    out.push(check("add", &[x.clone(), y2.clone()], 72, |g, v| {
        let y = g.add(v[0], v[1])?;
        project(g, y, 9)
    }));
    out.push(check("scale", &[x.clone()], 72, |g, v| {
        let y = g.scale(v[0], -2.5);
        project(g, y, 10)
    }));
    out.push(check("sum", &[x.clone()], 72, |g, v| Ok(g.sum(v[0]))));
    let s = rand_tensor(&mut rng, &[3], -1.0, 1.0);
    out.push(check("weighted_sum", &[s], 3, |g, v| {
        let parts: Vec<Var> = (0..3)
            .map(|i| {
                let r = g.reshape(v[0], [1, 3]).unwrap();
                let mut e = Tensor::zeros([3, 1]);
                e.data_mut()[i] = 1.0;
                let e = g.constant(e);
                let b = g.constant(Tensor::zeros([1]));
                let d = g.dense(r, e, b).unwrap();
                g.sum(d)
            })
            .collect();
        g.weighted_sum(&[(parts[0], 0.3), (parts[1], -1.2), (parts[2], 2.0)])
    }));
    let logits = rand_tensor(&mut rng, &[4, 3], -3.0, 3.0);
    out.push(check("softmax_cross_entropy", &[logits], 12, |g, v| {
        let t = Tensor::new([4, 3], vec![1., 0., 0., 0., 0., 1., 0., 1., 0., 0., 0., 1.])?;
        g.softmax_cross_entropy(v[0], t)
    }));
    let p = rand_tensor(&mut rng, &[2, 3, 3, 3], 0.0, 1.0);
    let q = Tensor::from_fn(p.shape().to_vec(), |i| p.data()[i] + if i % 2 == 0 { 0.3 } else { -0.2 });
    out.push(check("mean_abs_diff", &[p, q], 54, |g, v| g.mean_abs_diff(v[0], v[1])));
    out
}

/// Three small networks composed from the engine's operations, differentiated w.r.t. every leaf.
pub fn micro_net_suite() -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut out = Vec::new();
    let two_hot = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();

    let x = rand_tensor(&mut rng, &[2, 3, 8, 8], 0.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[4, 3, 3, 3], -0.4, 0.4);
    let b1 = rand_tensor(&mut rng, &[4], -0.1, 0.1);
    let wd = rand_tensor(&mut rng, &[64, 2], -0.3, 0.3);
    let bd = rand_tensor(&mut rng, &[2], -0.1, 0.1);
    let t = two_hot.clone();
    out.push(check("micro-net conv/relu/maxpool/dense/xent", &[x, w1, b1, wd, bd], 30, move |g, v| {
        let h = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        let h = g.relu(h);
        let h = g.pool2d(h, PoolKind::Max, 2, 2)?;
        let h = g.flatten(h)?;
        let z = g.dense(h, v[3], v[4])?;
        g.softmax_cross_entropy(z, t.clone())
    }));

    let x = rand_tensor(&mut rng, &[2, 2, 6, 6], 0.0, 1.0);
    let wa = rand_tensor(&mut rng, &[3, 2, 3, 3], -0.4, 0.4);
    let ba = rand_tensor(&mut rng, &[3], -0.1, 0.1);
    let wb = rand_tensor(&mut rng, &[3, 3, 3, 3], -0.4, 0.4);
    let bb = rand_tensor(&mut rng, &[3], -0.1, 0.1);
    let ws = rand_tensor(&mut rng, &[3, 2, 1, 1], -0.4, 0.4);
    let bs = rand_tensor(&mut rng, &[3], -0.1, 0.1);
    let wd = rand_tensor(&mut rng, &[3, 2], -0.5, 0.5);
    let bd = rand_tensor(&mut rng, &[2], -0.1, 0.1);
    let t = two_hot.clone();
    out.push(check("micro-net residual/gap/dense/xent", &[x, wa, ba, wb, bb, ws, bs, wd, bd], 24, move |g, v| {
        let a = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        let a = g.relu(a);
        let b = g.conv2d(a, v[3], v[4], 1, 1)?;
        let s = g.conv2d(v[0], v[5], v[6], 1, 0)?;
        let h = g.add(b, s)?;
        let h = g.relu(h);
        let h = g.global_avg_pool(h)?;
        let z = g.dense(h, v[7], v[8])?;
        g.softmax_cross_entropy(z, t.clone())
    }));

    let x = rand_tensor(&mut rng, &[1, 3, 8, 8], 0.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 3, 4, 4], -0.3, 0.3);
    let b = rand_tensor(&mut rng, &[3], -0.1, 0.1);
    let target = rand_tensor(&mut rng, &[1, 3, 2, 2], 0.0, 1.0);
    out.push(check("micro-net strided/avgpool/L1/weighted_sum", &[x, w, b], 30, move |g, v| {
        let h = g.conv2d(v[0], v[1], v[2], 2, 1)?;
        let h = g.pool2d(h, PoolKind::Avg, 2, 2)?;
        let h = g.relu(h);
        let t = g.constant(target.clone());
        let l1 = g.mean_abs_diff(h, t)?;
        let s = g.sum(h);
        let s = g.scale(s, 0.1);
        g.weighted_sum(&[(l1, 3.0), (s, 0.5)])
    }));
    out
}

/// `α·L_p + L_c` through a full generator and a frozen detector, against randomly chosen
/// generator weights until `coords` kink-free coordinates were compared (at most `4 * coords` draws).
pub fn generator_loss_check(coords: usize) -> GradReport {
    let gen = GeneratorNet::<f64>::build(5).unwrap();
    let victim = DetectorNet::<f64>::build(DetectorKind::StrideNet, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let image = rand_tensor(&mut rng, &[1, 3, 64, 64], 0.0, 1.0);
    let loss_of = |gen: &GeneratorNet<f64>, trainable: bool| -> (Graph<f64>, Vec<Var>, f64) {
        let mut g = Graph::new();
        let vars = bind(&mut g, gen.params(), trainable);
        let x = g.constant(image.clone());
        let y = gen.forward(&mut g, &vars, x).unwrap();
        let lp = perceptual_loss(&mut g, x, y).unwrap();
        let lc = classification_loss_whitebox(&mut g, &victim, y).unwrap();
        let l = generator_loss(&mut g, 20.0, lp, lc).unwrap();
        if trainable {
            g.backward(l).unwrap();
        }
        let v = g.value(l).item().unwrap();
        (g, vars, v)
    };
    let (g, vars, _) = loss_of(&gen, true);
    let mut report = GradReport { name: "generator loss (full composition)".into(), worst: 0.0, checked: 0, skipped: 0 };
    for _ in 0..4 * coords {
        if report.checked == coords {
            break;
        }
        let p = rng.gen_range(0..gen.params().len());
        let idx = rng.gen_range(0..gen.params()[p].len());
        let analytic = g.grad(vars[p]).unwrap().data()[idx];
        let mut shifted = gen.clone();
        let base = shifted.params()[p].value().data()[idx];
        let numeric = central_difference(|h| {
            shifted.params_mut()[p].value_mut()[idx] = base + h;
            loss_of(&shifted, false).2
        });
        report.record(analytic, numeric);
    }
    report
}
