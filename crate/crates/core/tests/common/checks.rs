//! Randomized oracle checks. Each returns a one-line summary on success and
//! a description of the first mismatch otherwise.

use mtlkit::data::{split_indices, window_slide, RawRecording};
use mtlkit::distill::{
    born_again_total, cross_entropy, kd_loss, multitask_ce_loss, multitask_ce_var, smooth_total,
    smooth_total_var, ema_update, TeacherState,
};
use mtlkit::metrics::{confusion, paired_t_test, report};
use mtlkit::model::{MtlNet, MtlNetConfig};
use mtlkit::nn::{seeded_rng, SeededRng};
use mtlkit::tensor::{Tape, Tensor};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn logits(rng: &mut SeededRng, n: usize, c: usize, scale: f32) -> Tensor {
    Tensor::new(vec![n, c], (0..n * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn loss_identities(cases: usize, seed: u64) -> Check {
    let mut rng = seeded_rng(seed);
    let mut worst_self = 0.0f32;
    for _ in 0..cases {
        let (n, c1, c2) = (rng.random_range(1..9), rng.random_range(2..13), rng.random_range(2..5));
        let tau = rng.random_range(0.5..6.0);
        let z1 = logits(&mut rng, n, c1, 8.0);
        let z2 = logits(&mut rng, n, c2, 8.0);
        let y1: Vec<usize> = (0..n).map(|_| rng.random_range(0..c1)).collect();
        let y2: Vec<usize> = (0..n).map(|_| rng.random_range(0..c2)).collect();
        let alpha = rng.random_range(0.0..=1.0);

        let self_kl = kd_loss(&z1, &z1, tau).map_err(|e| e.to_string())?;
        worst_self = worst_self.max(self_kl.abs());
        ensure!(self_kl.abs() <= 1e-7, "kd_loss(z, z) = {self_kl:e}");

        let t1 = logits(&mut rng, n, c1, 8.0);
        let t2 = logits(&mut rng, n, c2, 8.0);
        let ce1 = cross_entropy(&z1, &y1).unwrap();
        let ce2 = cross_entropy(&z2, &y2).unwrap();
        let kd1 = kd_loss(&t1, &z1, tau).unwrap();
        let kd2 = kd_loss(&t2, &z2, tau).unwrap();
        let eq1 = multitask_ce_loss(&z1, &y1, &z2, &y2, alpha).unwrap();
        let eq5 = smooth_total(ce1, kd1, ce2, kd2, alpha, 0.0).unwrap();
        ensure!(eq5.to_bits() == eq1.to_bits(), "smooth_total at lambda 0: {eq5} vs {eq1}");

        let mut tape = Tape::new();
        let v: Vec<_> = [ce1, kd1, ce2, kd2].iter().map(|&x| tape.constant(Tensor::scalar(x))).collect();
        let a = smooth_total_var(&mut tape, (v[0], v[1]), (v[2], v[3]), alpha, 0.0).unwrap();
        let b = multitask_ce_var(&mut tape, v[0], v[2], alpha).unwrap();
        let (a, b) = (tape.value(a).item().unwrap(), tape.value(b).item().unwrap());
        ensure!(a.to_bits() == b.to_bits() && a.to_bits() == eq1.to_bits(), "tape forms at lambda 0: {a} vs {b}");

        ensure!(born_again_total(ce1, kd1, 0.0).unwrap() == ce1, "born_again_total at lambda 0");
        ensure!(born_again_total(ce1, kd1, 1.0).unwrap() == kd1, "born_again_total at lambda 1");

        // Doubling tau with doubled logits leaves the softened distributions
        // alone, so only the tau^2 factor changes.
        let k = kd_loss(&t1, &z1, tau).unwrap() as f64;
        let k2 = kd_loss(&t1.map(|x| 2.0 * x), &z1.map(|x| 2.0 * x), 2.0 * tau).unwrap() as f64;
        ensure!((k2 - 4.0 * k).abs() <= 1e-5 * k.max(1e-3), "tau^2 scaling: {k2} vs 4 x {k}");
    }
    let hand = kd_loss(
        &Tensor::new(vec![1, 2], vec![3f32.ln(), 0.0]).unwrap(),
        &Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(),
        1.0,
    )
    .unwrap() as f64;
    let expect = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
    ensure!((hand - expect).abs() < 1e-4, "hand KL {hand} vs {expect}");
    Ok(format!("{cases} cases, worst |kd(z,z)| = {worst_self:e}"))
}

pub fn ema_geometry(steps: usize, beta: f64) -> Check {
    let cfg = MtlNetConfig::default();
    let (_, student) = MtlNet::new(cfg.clone(), 1).map_err(|e| e.to_string())?;
    let (_, start) = MtlNet::new(cfg, 2).map_err(|e| e.to_string())?;
    let gap = |t: &mtlkit::nn::ParamStore| {
        t.iter()
            .zip(student.iter())
            .flat_map(|((_, a), (_, b))| a.value.data().iter().zip(b.value.data()).map(|(x, y)| (x - y).abs() as f64))
            .fold(0.0f64, f64::max)
    };
    // TeacherState carries parameters and nothing else: no moments, no step
    // counter. This destructuring stops compiling if that ever changes.
    let TeacherState { params: mut teacher } = TeacherState { params: start };
    let g0 = gap(&teacher);
    ensure!(g0 > 0.0, "teacher and student start equal");
    let mut worst = 0.0f64;
    for t in 1..=steps {
        ema_update(&mut teacher, &student, beta).map_err(|e| e.to_string())?;
        let expect = beta.powi(t as i32) * g0;
        let rel = (gap(&teacher) - expect).abs() / expect;
        worst = worst.max(rel);
        ensure!(rel <= 1e-5, "step {t}: gap {} vs {expect} (rel {rel:e})", gap(&teacher));
    }
    Ok(format!("{steps} steps, worst relative deviation {worst:e}"))
}

fn brute_mode(labels: &[usize]) -> usize {
    let mut best = (0usize, usize::MAX);
    for &cand in labels {
        let count = labels.iter().filter(|&&l| l == cand).count();
        if count > best.0 || (count == best.0 && cand < best.1) {
            best = (count, cand);
        }
    }
    best.1
}

fn random_recording(rng: &mut SeededRng, n: usize) -> RawRecording {
    let mut activity = Vec::with_capacity(n);
    while activity.len() < n {
        let label = rng.random_range(0..6);
        let run = rng.random_range(1..80);
        activity.extend(std::iter::repeat_n(label, run.min(n - activity.len())));
    }
    RawRecording {
        subject_id: "s".into(),
        source: "r".into(),
        placement: rng.random_range(0..3),
        samples: (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
        activity,
        sampling_rate: None,
    }
}

fn expected_count(n: usize, len: usize, step: usize) -> usize {
    if n >= len { (n - len) / step + 1 } else { 0 }
}

pub fn windowing_oracle(recordings: usize, seed: u64) -> Check {
    let mut rng = seeded_rng(seed);
    let mut total = 0;
    for r in 0..recordings {
        let n = rng.random_range(0..700);
        let (len, step) = if r % 4 == 0 { (100, 60) } else { (rng.random_range(1..150), rng.random_range(1..100)) };
        let rec = random_recording(&mut rng, n);
        let w = window_slide(&rec, len, step).map_err(|e| e.to_string())?;
        ensure!(w.len() == expected_count(n, len, step), "n={n} L={len} S={step}: {} windows", w.len());
        for (i, win) in w.iter().enumerate() {
            let start = i * step;
            ensure!(win.provenance.start == start, "window {i} starts at {}", win.provenance.start);
            let mode = brute_mode(&rec.activity[start..start + len]);
            ensure!(win.y1 == mode, "n={n} L={len} S={step} window {i}: label {} vs mode {mode}", win.y1);
            ensure!(win.y2 == rec.placement, "placement label");
            for t in 0..len {
                for a in 0..3 {
                    ensure!(win.data[a * len + t] == rec.samples[start + t][a], "sample layout");
                }
            }
        }
        total += w.len();
    }
    for (n, want) in [(99, 0), (100, 1), (159, 1), (160, 2), (220, 3), (1000, 16)] {
        let rec = random_recording(&mut rng, n);
        let got = window_slide(&rec, 100, 60).map_err(|e| e.to_string())?.len();
        ensure!(got == want, "L=100 S=60 n={n}: {got} windows, want {want}");
    }
    Ok(format!("{recordings} recordings, {total} windows"))
}

pub fn split_contract(trials: usize, seed: u64) -> Check {
    let mut rng = seeded_rng(seed);
    for _ in 0..trials {
        let n = rng.random_range(10..3000);
        let s = rng.random::<u64>();
        let spec = split_indices(n, s).map_err(|e| e.to_string())?;
        ensure!(spec == split_indices(n, s).unwrap(), "n={n}: not reproducible");
        ensure!(spec.train.len() == n * 4 / 5, "n={n}: train size {}", spec.train.len());
        let mut seen = vec![0u8; n];
        for &i in spec.train.iter().chain(&spec.test) {
            seen[i] += 1;
        }
        ensure!(seen.iter().all(|&c| c == 1), "n={n}: train/test not a partition");
        ensure!(spec.folds.len() == 5, "fold count");
        let mut in_fold = vec![0u8; n];
        for f in &spec.folds {
            for &i in f {
                in_fold[i] += 1;
            }
        }
        for i in 0..n {
            let want = u8::from(spec.train.binary_search(&i).is_ok());
            ensure!(in_fold[i] == want, "n={n}: index {i} in {} folds", in_fold[i]);
        }
        let sizes: Vec<usize> = spec.folds.iter().map(Vec::len).collect();
        ensure!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "n={n}: fold sizes {sizes:?}");
        for k in 0..5 {
            let (tr, va) = spec.fold(k);
            ensure!(tr.len() + va.len() == spec.train.len(), "fold {k} does not cover the training part");
            ensure!(va.iter().all(|i| tr.binary_search(i).is_err()), "fold {k} overlaps");
        }
    }
    Ok(format!("{trials} random sizes"))
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-12,
        (None, None) => true,
        _ => false,
    }
}

pub fn metrics_oracle(settings: usize, seed: u64) -> Check {
    let mut rng = seeded_rng(seed);
    for s in 0..settings {
        let c = rng.random_range(2..9);
        let n = rng.random_range(1..300);
        // Skewed predictions so some classes go unpredicted or unseen.
        let skew = rng.random_range(1..=c);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let p: Vec<usize> = y
            .iter()
            .map(|&t| if rng.random_bool(0.6) { t.min(skew - 1) } else { rng.random_range(0..skew) })
            .collect();
        let r = report(&confusion(&y, &p, c).unwrap()).map_err(|e| e.to_string())?;
        let hits = y.iter().zip(&p).filter(|(a, b)| a == b).count();
        ensure!((r.accuracy - hits as f64 / n as f64).abs() < 1e-12, "setting {s}: accuracy");
        let mut f1s = Vec::new();
        for k in 0..c {
            let count = |f: &dyn Fn(usize, usize) -> bool| y.iter().zip(&p).filter(|(&a, &b)| f(a, b)).count() as f64;
            let tp = count(&|a, b| a == k && b == k);
            let fn_ = count(&|a, b| a == k && b != k);
            let fp = count(&|a, b| a != k && b == k);
            let tn = count(&|a, b| a != k && b != k);
            let div = |a: f64, b: f64| (b > 0.0).then(|| a / b);
            let m = &r.per_class[k];
            ensure!(close(m.sensitivity, div(tp, tp + fn_)), "setting {s} class {k}: sensitivity");
            ensure!(close(m.ppv, div(tp, tp + fp)), "setting {s} class {k}: ppv");
            ensure!(close(m.npv, div(tn, tn + fn_)), "setting {s} class {k}: npv");
            let f1 = div(2.0 * tp, 2.0 * tp + fp + fn_);
            ensure!(close(m.f1, f1), "setting {s} class {k}: f1");
            f1s.extend(f1);
        }
        let macro_f1 = (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64);
        ensure!(close(r.macro_f1, macro_f1), "setting {s}: macro f1");
    }
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [0.0, 2.0, 2.0, 5.0];
    let t = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / 4.0;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let t_closed = mean / (sd / 2.0);
    let p_oracle = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 3.0).unwrap().cdf(t_closed.abs()));
    ensure!((t.t - t_closed).abs() < 1e-4, "t {} vs {t_closed}", t.t);
    ensure!((t.p - p_oracle).abs() < 1e-4, "p {} vs {p_oracle}", t.p);
    ensure!((t.t - 0.5222).abs() < 1e-4 && (t.p - 0.638).abs() < 1e-3, "worked example t={} p={}", t.t, t.p);
    Ok(format!("{settings} confusion settings; t={:.4} p={:.4}", t.t, t.p))
}
