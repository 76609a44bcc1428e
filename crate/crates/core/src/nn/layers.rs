use rand::Rng;

use super::{Mode, ParamId, ParamStore, SeededRng, Session};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Kaiming-uniform (fan-in, ReLU gain) weights.
fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut SeededRng,
    ) -> Self {
        let shape = [out_ch, in_ch, kernel.0, kernel.1];
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&shape, in_ch * kernel.0 * kernel.1, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true);
        Conv2d {
            weight,
            bias,
            stride,
            padding,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.tape.conv2d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel.0 * self.kernel.1 + self.out_ch
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f32,
    pub eps: f32,
    pub channels: usize,
}

impl BatchNorm2d {
    pub const DEFAULT_MOMENTUM: f32 = 0.1;
    pub const DEFAULT_EPS: f32 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self::with_options(store, name, channels, Self::DEFAULT_MOMENTUM, Self::DEFAULT_EPS)
    }

    pub fn with_options(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        momentum: f32,
        eps: f32,
    ) -> Self {
        let shape = [channels];
        BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&shape), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&shape), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&shape), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&shape), false),
            momentum,
            eps,
            channels,
        }
    }

    /// Train mode normalises with batch statistics and folds them into the
    /// running estimates; eval mode reads the running estimates only.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, mean, var) = s.tape.batchnorm_train(x, gamma, beta, self.eps)?;
                let xs = s.tape.shape(x);
                let count = (xs[0] * xs[2] * xs[3]) as f32;
                let unbias = count / (count - 1.0);
                let m = self.momentum;
                let store = s.store_mut();
                let rm = store.value_mut(self.running_mean).data_mut();
                for (r, b) in rm.iter_mut().zip(&mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                let rv = store.value_mut(self.running_var).data_mut();
                for (r, b) in rv.iter_mut().zip(&var) {
                    *r = (1.0 - m) * *r + m * b * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = s.store().get(self.running_mean).clone();
                let var = s.store().get(self.running_var).clone();
                s.tape
                    .batchnorm_eval(x, gamma, beta, mean.data(), var.data(), self.eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl MaxPool2d {
    pub fn new(kernel: (usize, usize)) -> Self {
        MaxPool2d {
            kernel,
            stride: kernel,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        s.tape.maxpool2d(x, self.kernel, self.stride)
    }
}

/// `y = x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[in_features, out_features], in_features, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]), true);
        Linear {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let xw = s.tape.matmul(x, w)?;
        s.tape.add(xw, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Inverted dropout: kept entries are scaled by `1/(1−p)` at train time.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    p: f32,
}

impl Dropout {
    pub fn new(p: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        Ok(Dropout { p })
    }

    pub fn p(&self) -> f32 {
        self.p
    }

    pub fn sample_mask(&self, shape: &[usize], rng: &mut SeededRng) -> Tensor {
        let keep = 1.0 / (1.0 - self.p);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.random::<f32>() < self.p { 0.0 } else { keep })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Eval mode (or `p = 0`) returns `x` itself.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        if s.mode() == Mode::Eval || self.p == 0.0 {
            return Ok(x);
        }
        let shape = s.tape.shape(x).to_vec();
        let rng = s.rng().ok_or_else(|| {
            Error::Contract("train-mode dropout needs a seeded generator".to_string())
        })?;
        let mask = self.sample_mask(&shape, rng);
        let m = s.tape.constant(mask);
        s.tape.mul(x, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use crate::tensor::Tape;

    fn input(t: &mut Tape, shape: &[usize], data: Vec<f32>) -> Var {
        t.constant(Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn unit_conv_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(0);
        let conv = Conv2d::new(&mut store, "c", 1, 1, (1, 1), (1, 1), (0, 0), &mut rng);
        store.set(conv.weight, Tensor::ones(&[1, 1, 1, 1])).unwrap();
        let mut tape = Tape::new();
        let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.5 - 2.0).collect();
        let x = input(&mut tape, &[1, 1, 3, 4], data.clone());
        let mut s = Session::new(&mut tape, &mut store, Mode::Eval, None);
        let y = conv.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_output_shape_and_channel_check() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(0);
        let conv = Conv2d::new(&mut store, "c", 1, 8, (1, 5), (1, 1), (0, 0), &mut rng);
        let mut tape = Tape::new();
        let x = input(&mut tape, &[1, 1, 3, 100], vec![0.0; 300]);
        let bad = input(&mut tape, &[1, 2, 3, 100], vec![0.0; 600]);
        let mut s = Session::new(&mut tape, &mut store, Mode::Eval, None);
        let y = conv.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.shape(y), &[1, 8, 3, 96]);
        assert!(matches!(conv.forward(&mut s, bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn batchnorm_train_standardises() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let mut rng = seeded_rng(3);
        let data: Vec<f32> = (0..4 * 2 * 1 * 10)
            .map(|_| rng.random_range(-3.0f32..5.0))
            .collect();
        let mut tape = Tape::new();
        let x = input(&mut tape, &[4, 2, 1, 10], data);
        let mut s = Session::new(&mut tape, &mut store, Mode::Train, None);
        let y = bn.forward(&mut s, x).unwrap();
        let out = s.tape.value(y).data().to_vec();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| (0..10).map(move |k| (b * 2 + ch) * 10 + k))
                .map(|i| out[i] as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        // running stats moved away from their initial values
        assert_ne!(store.get(bn.running_mean).data(), &[0.0, 0.0]);
    }

    #[test]
    fn batchnorm_affine_on_standardised_input() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        store.set(bn.gamma, Tensor::full(&[1], 2.0)).unwrap();
        store.set(bn.beta, Tensor::full(&[1], 3.0)).unwrap();
        let mut tape = Tape::new();
        let x = input(&mut tape, &[1, 1, 1, 4], vec![-1.0, -1.0, 1.0, 1.0]);
        let mut s = Session::new(&mut tape, &mut store, Mode::Train, None);
        let y = bn.forward(&mut s, x).unwrap();
        let out = s.tape.value(y).data();
        let mean: f32 = out.iter().sum::<f32>() / 4.0;
        let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 4.0).sqrt();
        assert!((mean - 3.0).abs() < 1e-5);
        assert!((std - 2.0).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let before = store.clone();
        let data = vec![0.5, -2.0, 3.0];
        let mut tape = Tape::new();
        let x = input(&mut tape, &[1, 1, 1, 3], data.clone());
        let mut s = Session::new(&mut tape, &mut store, Mode::Eval, None);
        let y = bn.forward(&mut s, x).unwrap();
        let denom = (1.0f32 + 1e-5).sqrt();
        for (o, i) in s.tape.value(y).data().iter().zip(&data) {
            assert_eq!(*o, (i - 0.0) * (1.0 / denom) * 1.0 + 0.0);
        }
        assert_eq!(store, before);
    }

    #[test]
    fn batchnorm_degenerate_batch() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let mut tape = Tape::new();
        let x = input(&mut tape, &[1, 1, 1, 1], vec![0.3]);
        let mut s = Session::new(&mut tape, &mut store, Mode::Train, None);
        assert!(matches!(bn.forward(&mut s, x), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn dropout_cases() {
        assert!(matches!(Dropout::new(1.0), Err(Error::Config(_))));
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(9);
        let mut tape = Tape::new();
        let x = input(&mut tape, &[5], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut s = Session::new(&mut tape, &mut store, Mode::Train, Some(&mut rng));
        let zero = Dropout::new(0.0).unwrap().forward(&mut s, x).unwrap();
        assert_eq!(s.tape.value(zero).data(), s.tape.value(x).data());

        let mut tape = Tape::new();
        let x = input(&mut tape, &[5], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut s = Session::new(&mut tape, &mut store, Mode::Eval, None);
        let y = Dropout::new(0.9).unwrap().forward(&mut s, x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_mean_concentrates() {
        let d = Dropout::new(0.5).unwrap();
        let mut rng = seeded_rng(42);
        let m = d.sample_mask(&[100_000], &mut rng);
        let mean = m.data().iter().map(|&v| v as f64).sum::<f64>() / 1e5;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
        let m2 = d.sample_mask(&[100_000], &mut rng);
        assert_ne!(m.data(), m2.data());
    }

    #[test]
    fn train_dropout_without_rng_is_an_error() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = input(&mut tape, &[3], vec![1.0; 3]);
        let mut s = Session::new(&mut tape, &mut store, Mode::Train, None);
        assert!(Dropout::new(0.5).unwrap().forward(&mut s, x).is_err());
    }

    #[test]
    fn maxpool_and_linear_examples() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(1);
        let lin = Linear::new(&mut store, "fc", 3, 3, &mut rng);
        let eye = Tensor::new(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        store.set(lin.weight, eye).unwrap();
        assert_eq!(lin.param_count(), 12);
        let mut tape = Tape::new();
        let x = input(&mut tape, &[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let p = input(&mut tape, &[1, 1, 1, 4], vec![1.0, 3.0, 2.0, 4.0]);
        let mut s = Session::new(&mut tape, &mut store, Mode::Eval, None);
        let y = lin.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.value(y).data(), s.tape.value(x).data());
        let pooled = MaxPool2d::new((1, 2)).forward(&mut s, p).unwrap();
        assert_eq!(s.tape.value(pooled).data(), &[3.0, 4.0]);
        assert!(MaxPool2d::new((1, 8)).forward(&mut s, p).is_err());
    }
}
