//! Central finite-difference checks shared by the gradient tests and the
//! acceptance run.

use mtlkit::distill::{
    born_again_total_var, cross_entropy_var, kd_loss_var, multitask_ce_var, smooth_total_var,
};
use mtlkit::nn::{seeded_rng, BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d, Mode, ParamStore, SeededRng, Session};
use mtlkit::tensor::{Tape, Tensor, Var};
use mtlkit::Result;
use rand::seq::SliceRandom;
use rand::Rng;

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

/// Loss value plus its gradient for every input.
pub type Eval = dyn Fn(&[Tensor]) -> Result<(f32, Vec<Tensor>)>;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Worst error over a random sample of coordinates of every input.
pub fn worst_error(inputs: &[Tensor], f: &Eval, probes: usize, rng: &mut SeededRng) -> Result<f64> {
    let (_, grads) = f(inputs)?;
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let mut coords: Vec<usize> = (0..x.numel()).collect();
        coords.shuffle(rng);
        coords.truncate(probes);
        for i in coords {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let num = (f(&plus)?.0 as f64 - f(&minus)?.0 as f64) / (2.0 * STEP as f64);
            worst = worst.max(rel_error(grads[k].data()[i] as f64, num));
        }
    }
    Ok(worst)
}

/// Runs a pure tape expression with every input as a differentiable leaf.
pub fn on_tape(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<(f32, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad(true))).collect();
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    let g = tape.backward(loss)?;
    Ok((value, vars.iter().map(|&v| g.get(v).unwrap().clone()).collect()))
}

pub fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[0.1, 1]`, well clear of any kink at zero.
pub fn off_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 0.1, 1.0).map(|v| if rng_sign(v) { v } else { -v })
}

fn rng_sign(v: f32) -> bool {
    // deterministic sign from the low mantissa bits
    v.to_bits() & 1 == 0
}

/// Distinct values spaced 0.01 apart in random order, so no pooling window
/// has a near tie.
pub fn distinct(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.01).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// `sum(y * r)` with `r` scaled so the loss stays near unit size.
fn weighted_sum(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let c = tape.constant(r.clone());
    let p = tape.mul(y, c)?;
    tape.sum(p, None)
}

fn readout(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let s = 1.0 / (n as f32).sqrt();
    uniform(rng, shape, -s, s)
}

fn labels(rng: &mut SeededRng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

/// Gradients of the inputs followed by the gradients of `ids`, after a
/// session-based layer forward.
fn layer_eval(
    store: &mut ParamStore,
    ids: &[mtlkit::nn::ParamId],
    x: &Tensor,
    mode: Mode,
    rng: Option<&mut SeededRng>,
    r: &Tensor,
    forward: impl Fn(&mut Session, Var) -> Result<Var>,
) -> Result<(f32, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_grad(true));
    let mut s = Session::new(&mut tape, store, mode, rng);
    let y = forward(&mut s, xv)?;
    let bound = s.bound();
    let loss = weighted_sum(&mut tape, y, r)?;
    let value = tape.value(loss).item()?;
    let g = tape.backward(loss)?;
    let mut out = vec![g.get(xv).unwrap().clone()];
    for id in ids {
        let v = bound.iter().find(|(b, _)| b == id).unwrap().1;
        out.push(g.get(v).unwrap().clone());
    }
    Ok((value, out))
}

/// One randomized case: inputs and the function under test.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub eval: Box<Eval>,
}

pub struct Suite {
    pub name: &'static str,
    pub make: fn(&mut SeededRng) -> Case,
}

fn linear_case(rng: &mut SeededRng) -> Case {
    let (n, i, o) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..6));
    let r = readout(rng, &[n, o]);
    let inputs = vec![uniform(rng, &[n, i], -1.0, 1.0), uniform(rng, &[i, o], -1.0, 1.0), uniform(rng, &[o], -1.0, 1.0)];
    Case {
        inputs,
        eval: Box::new(move |t| {
            let mut store = ParamStore::new();
            let lin = Linear::new(&mut store, "l", i, o, &mut seeded_rng(0));
            store.set(lin.weight, t[1].clone())?;
            store.set(lin.bias, t[2].clone())?;
            layer_eval(&mut store, &[lin.weight, lin.bias], &t[0], Mode::Train, None, &r, |s, x| lin.forward(s, x))
        }),
    }
}

fn conv_case(rng: &mut SeededRng) -> Case {
    let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..4));
    let k = (rng.random_range(1..4), rng.random_range(1..4));
    let stride = (rng.random_range(1..3), rng.random_range(1..3));
    let pad = (rng.random_range(0..2), rng.random_range(0..2));
    let (h, w) = (rng.random_range(k.0..k.0 + 4), rng.random_range(k.1..k.1 + 4));
    let oh = (h + 2 * pad.0 - k.0) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - k.1) / stride.1 + 1;
    let r = readout(rng, &[n, o, oh, ow]);
    let inputs = vec![
        uniform(rng, &[n, c, h, w], -1.0, 1.0),
        uniform(rng, &[o, c, k.0, k.1], -1.0, 1.0),
        uniform(rng, &[o], -1.0, 1.0),
    ];
    Case {
        inputs,
        eval: Box::new(move |t| {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", c, o, k, stride, pad, &mut seeded_rng(0));
            store.set(conv.weight, t[1].clone())?;
            store.set(conv.bias, t[2].clone())?;
            layer_eval(&mut store, &[conv.weight, conv.bias], &t[0], Mode::Train, None, &r, |s, x| conv.forward(s, x))
        }),
    }
}

fn bn_case(rng: &mut SeededRng, mode: Mode) -> Case {
    let (n, c, h, w) = (rng.random_range(2..4), rng.random_range(1..4), rng.random_range(1..3), rng.random_range(2..5));
    let r = readout(rng, &[n, c, h, w]);
    let mean = uniform(rng, &[c], -0.5, 0.5);
    let var = uniform(rng, &[c], 0.5, 2.0);
    let inputs = vec![
        uniform(rng, &[n, c, h, w], -1.0, 1.0),
        uniform(rng, &[c], 0.5, 1.5),
        uniform(rng, &[c], -0.5, 0.5),
    ];
    Case {
        inputs,
        eval: Box::new(move |t| {
            let mut store = ParamStore::new();
            let bn = BatchNorm2d::new(&mut store, "bn", c);
            store.set(bn.gamma, t[1].clone())?;
            store.set(bn.beta, t[2].clone())?;
            store.set(bn.running_mean, mean.clone())?;
            store.set(bn.running_var, var.clone())?;
            layer_eval(&mut store, &[bn.gamma, bn.beta], &t[0], mode, None, &r, |s, x| bn.forward(s, x))
        }),
    }
}

fn bn_train_case(rng: &mut SeededRng) -> Case {
    bn_case(rng, Mode::Train)
}

fn bn_eval_case(rng: &mut SeededRng) -> Case {
    bn_case(rng, Mode::Eval)
}

fn maxpool_case(rng: &mut SeededRng) -> Case {
    let k = (rng.random_range(1..3), rng.random_range(1..4));
    let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
    let (h, w) = (k.0 * rng.random_range(1..3), k.1 * rng.random_range(1..4));
    let r = readout(rng, &[n, c, h / k.0, w / k.1]);
    Case {
        inputs: vec![distinct(rng, &[n, c, h, w])],
        eval: Box::new(move |t| {
            let mut store = ParamStore::new();
            let pool = MaxPool2d::new(k);
            layer_eval(&mut store, &[], &t[0], Mode::Train, None, &r, |s, x| pool.forward(s, x))
        }),
    }
}

fn relu_case(rng: &mut SeededRng) -> Case {
    let shape = [rng.random_range(1..5), rng.random_range(1..6)];
    let r = readout(rng, &shape);
    Case {
        inputs: vec![off_zero(rng, &shape)],
        eval: Box::new(move |t| {
            on_tape(t, |tape, v| {
                let y = tape.relu(v[0]);
                weighted_sum(tape, y, &r)
            })
        }),
    }
}

fn dropout_case(rng: &mut SeededRng) -> Case {
    let shape = [rng.random_range(1..5), rng.random_range(1..8)];
    let p = rng.random_range(0.1..0.6f32);
    let seed = rng.random::<u64>();
    let r = readout(rng, &shape);
    Case {
        inputs: vec![uniform(rng, &shape, -1.0, 1.0)],
        eval: Box::new(move |t| {
            let mut store = ParamStore::new();
            let mut mask_rng = seeded_rng(seed);
            let d = Dropout::new(p)?;
            layer_eval(&mut store, &[], &t[0], Mode::Train, Some(&mut mask_rng), &r, |s, x| d.forward(s, x))
        }),
    }
}

fn logits(rng: &mut SeededRng, n: usize, c: usize) -> Tensor {
    uniform(rng, &[n, c], -2.0, 2.0)
}

fn ce_case(rng: &mut SeededRng) -> Case {
    let (n, c) = (rng.random_range(1..6), rng.random_range(2..8));
    let y = labels(rng, n, c);
    Case {
        inputs: vec![logits(rng, n, c)],
        eval: Box::new(move |t| on_tape(t, |tape, v| cross_entropy_var(tape, v[0], &y))),
    }
}

fn kd_case(rng: &mut SeededRng) -> Case {
    let (n, c) = (rng.random_range(1..6), rng.random_range(2..8));
    let tau = rng.random_range(1.0..5.0);
    let zt = logits(rng, n, c);
    Case {
        inputs: vec![logits(rng, n, c)],
        eval: Box::new(move |t| on_tape(t, |tape, v| kd_loss_var(tape, &zt, v[0], tau))),
    }
}

fn multitask_case(rng: &mut SeededRng) -> Case {
    let n = rng.random_range(1..6);
    let (c1, c2) = (rng.random_range(2..8), rng.random_range(2..5));
    let (y1, y2) = (labels(rng, n, c1), labels(rng, n, c2));
    let alpha = rng.random_range(0.0..=1.0);
    Case {
        inputs: vec![logits(rng, n, c1), logits(rng, n, c2)],
        eval: Box::new(move |t| {
            on_tape(t, |tape, v| {
                let a = cross_entropy_var(tape, v[0], &y1)?;
                let b = cross_entropy_var(tape, v[1], &y2)?;
                multitask_ce_var(tape, a, b, alpha)
            })
        }),
    }
}

fn born_again_case(rng: &mut SeededRng) -> Case {
    let (n, c) = (rng.random_range(1..6), rng.random_range(2..8));
    let y = labels(rng, n, c);
    let tau = rng.random_range(1.0..5.0);
    let lambda = rng.random_range(0.0..=1.0);
    let zt = logits(rng, n, c);
    Case {
        inputs: vec![logits(rng, n, c)],
        eval: Box::new(move |t| {
            on_tape(t, |tape, v| {
                let ce = cross_entropy_var(tape, v[0], &y)?;
                let kd = kd_loss_var(tape, &zt, v[0], tau)?;
                born_again_total_var(tape, ce, kd, lambda)
            })
        }),
    }
}

fn smooth_case(rng: &mut SeededRng) -> Case {
    let n = rng.random_range(1..6);
    let (c1, c2) = (rng.random_range(2..8), rng.random_range(2..5));
    let (y1, y2) = (labels(rng, n, c1), labels(rng, n, c2));
    let tau = rng.random_range(1.0..5.0);
    let alpha = rng.random_range(0.0..=1.0);
    let lambda = rng.random_range(0.0..=1.0);
    let (t1, t2) = (logits(rng, n, c1), logits(rng, n, c2));
    Case {
        inputs: vec![logits(rng, n, c1), logits(rng, n, c2)],
        eval: Box::new(move |t| {
            on_tape(t, |tape, v| {
                let ce1 = cross_entropy_var(tape, v[0], &y1)?;
                let kd1 = kd_loss_var(tape, &t1, v[0], tau)?;
                let ce2 = cross_entropy_var(tape, v[1], &y2)?;
                let kd2 = kd_loss_var(tape, &t2, v[1], tau)?;
                smooth_total_var(tape, (ce1, kd1), (ce2, kd2), alpha, lambda)
            })
        }),
    }
}

/// Every layer and every loss.
pub fn suites() -> Vec<Suite> {
    vec![
        Suite { name: "linear", make: linear_case },
        Suite { name: "conv2d", make: conv_case },
        Suite { name: "batchnorm_train", make: bn_train_case },
        Suite { name: "batchnorm_eval", make: bn_eval_case },
        Suite { name: "maxpool2d", make: maxpool_case },
        Suite { name: "relu", make: relu_case },
        Suite { name: "dropout", make: dropout_case },
        Suite { name: "cross_entropy", make: ce_case },
        Suite { name: "kd_loss", make: kd_case },
        Suite { name: "multitask_ce", make: multitask_case },
        Suite { name: "born_again_total", make: born_again_case },
        Suite { name: "smooth_total", make: smooth_case },
    ]
}

/// Worst error of `cases` random cases of one suite.
pub fn run_suite(suite: &Suite, cases: usize, seed: u64, probes: usize) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let case = (suite.make)(&mut rng);
        worst = worst.max(worst_error(&case.inputs, &*case.eval, probes, &mut rng)?);
    }
    Ok(worst)
}
