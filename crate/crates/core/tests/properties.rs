use mtlkit::data::{
    ingest_csv, majority_label, split_indices, window_slide, write_canonical_csv, CsvSchema, RawRecording,
};
use mtlkit::distill::{ema_update, kd_loss, softened_probs};
use mtlkit::metrics::{confusion, report};
use mtlkit::nn::{seeded_rng, ParamStore};
use mtlkit::tensor::{Tape, Tensor};
use mtlkit::trainers::make_batches;
use proptest::prelude::*;
use proptest::sample::SizeRange;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-10.0f32..10.0, rows * cols).prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

fn logit_pair() -> impl Strategy<Value = (Tensor, Tensor, f64)> {
    (1usize..6, 2usize..9).prop_flat_map(|(n, c)| (matrix(n, c), matrix(n, c), 0.3f64..8.0))
}

fn labels(n: impl Into<SizeRange>, c: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..c, n)
}

proptest! {
    #[test]
    fn kd_is_nonnegative((t, s, tau) in logit_pair()) {
        prop_assert!(kd_loss(&t, &s, tau).unwrap() >= 0.0);
    }

    #[test]
    fn kd_ignores_row_shifts((t, s, tau) in logit_pair(), shift in -5.0f32..5.0) {
        let a = kd_loss(&t, &s, tau).unwrap();
        let b = kd_loss(&t, &s.map(|v| v + shift), tau).unwrap();
        prop_assert!((a - b).abs() <= 1e-4 * a.max(1.0));
    }

    #[test]
    fn softened_rows_sum_to_one((t, _, tau) in logit_pair()) {
        let p = softened_probs(&t, tau).unwrap();
        let c = t.shape()[1];
        for row in p.data().chunks(c) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn ema_is_a_contraction(
        t in prop::collection::vec(-3.0f32..3.0, 1..40),
        shift in prop::collection::vec(-3.0f32..3.0, 40),
        beta in 0.0f64..1.0,
    ) {
        let s: Vec<f32> = t.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let mut teacher = ParamStore::new();
        teacher.add("w", Tensor::from_vec(t.clone()), true);
        let mut student = ParamStore::new();
        student.add("w", Tensor::from_vec(s.clone()), true);
        ema_update(&mut teacher, &student, beta).unwrap();
        for ((&after, &before), &target) in teacher.iter().next().unwrap().1.value.data().iter().zip(&t).zip(&s) {
            let expect = beta * (before as f64 - target as f64).abs();
            let got = (after as f64 - target as f64).abs();
            prop_assert!((got - expect).abs() <= 1e-6 * (1.0 + before.abs() as f64));
        }
    }

    #[test]
    fn report_ignores_sample_order(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut seeded_rng(seed));
        let (y, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (ys, ps): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = report(&confusion(&y, &p, 5).unwrap()).unwrap();
        let b = report(&confusion(&ys, &ps, 5).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relabelling_permutes_class_rows(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (y, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let a = report(&confusion(&y, &p, 4).unwrap()).unwrap();
        let ym: Vec<_> = y.iter().map(|&k| perm[k]).collect();
        let pm: Vec<_> = p.iter().map(|&k| perm[k]).collect();
        let b = report(&confusion(&ym, &pm, 4).unwrap()).unwrap();
        prop_assert_eq!(a.accuracy, b.accuracy);
        for k in 0..4 {
            let (x, z) = (&a.per_class[k], &b.per_class[perm[k]]);
            prop_assert_eq!((x.support, x.sensitivity, x.ppv, x.npv, x.f1), (z.support, z.sensitivity, z.ppv, z.npv, z.f1));
        }
        let close = match (a.macro_f1, b.macro_f1) {
            (Some(u), Some(v)) => (u - v).abs() < 1e-12,
            (u, v) => u == v,
        };
        prop_assert!(close);
    }

    #[test]
    fn window_counts_and_labels(
        labels in labels(0..400, 4),
        len in 1usize..120,
        step in 1usize..90,
    ) {
        let n = labels.len();
        let rec = RawRecording {
            subject_id: "a".into(),
            source: "a".into(),
            placement: 1,
            samples: (0..n).map(|i| [i as f32, 0.0, 0.0]).collect(),
            activity: labels.clone(),
            sampling_rate: None,
        };
        let w = window_slide(&rec, len, step).unwrap();
        let want = if n >= len { (n - len) / step + 1 } else { 0 };
        prop_assert_eq!(w.len(), want);
        for (i, win) in w.iter().enumerate() {
            prop_assert_eq!(Some(win.y1), majority_label(&labels[i * step..i * step + len]));
            prop_assert_eq!(win.data[0], (i * step) as f32);
        }
    }

    #[test]
    fn split_is_seed_stable(n in 10usize..2000, seed in any::<u64>()) {
        let a = split_indices(n, seed).unwrap();
        prop_assert_eq!(&a, &split_indices(n, seed).unwrap());
        let mut all: Vec<usize> = a.folds.concat();
        all.extend(&a.test);
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn batches_cover_every_row(n in 2usize..500, bs in 2usize..80, seed in any::<u64>()) {
        let b = make_batches(n, bs, &mut seeded_rng(seed)).unwrap();
        prop_assert!(b.iter().all(|x| x.len() >= 2 && x.len() <= bs + 1));
        let mut all = b.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn matmul_matches_naive(
        (m, k, n) in (1usize..7, 1usize..7, 1usize..7),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = seeded_rng(seed);
        let a: Vec<f32> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let va = tape.constant(Tensor::new(vec![m, k], a.clone()).unwrap());
        let vb = tape.constant(Tensor::new(vec![k, n], b.clone()).unwrap());
        let c = tape.matmul(va, vb).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a[i * k + t] as f64 * b[t * n + j] as f64).sum();
                prop_assert!((tape.value(c).data()[i * n + j] as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv2d_matches_direct_sum(
        (n, c, o) in (1usize..3, 1usize..4, 1usize..4),
        (kh, kw) in (1usize..4, 1usize..5),
        (sh, sw, ph, pw) in (1usize..3, 1usize..3, 0usize..2, 0usize..3),
        (eh, ew) in (0usize..4, 0usize..6),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let (h, w) = (kh + eh, kw + ew);
        let mut rng = seeded_rng(seed);
        let x: Vec<f32> = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f32> = (0..o * c * kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let vx = tape.constant(Tensor::new(vec![n, c, h, w], x.clone()).unwrap());
        let vk = tape.constant(Tensor::new(vec![o, c, kh, kw], k.clone()).unwrap());
        let vb = tape.constant(Tensor::from_vec(b.clone()));
        let y = tape.conv2d(vx, vk, Some(vb), (sh, sw), (ph, pw)).unwrap();
        let (oh, ow) = ((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1);
        prop_assert_eq!(tape.shape(y), &[n, o, oh, ow]);
        let got = tape.value(y).data();
        for ni in 0..n {
            for oi in 0..o {
                for r in 0..oh {
                    for q in 0..ow {
                        let mut s = b[oi] as f64;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let (yy, xx) = ((r * sh + i) as isize - ph as isize, (q * sw + j) as isize - pw as isize);
                                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                        s += x[((ni * c + ci) * h + yy as usize) * w + xx as usize] as f64
                                            * k[((oi * c + ci) * kh + i) * kw + j] as f64;
                                    }
                                }
                            }
                        }
                        let g = got[((ni * o + oi) * oh + r) * ow + q] as f64;
                        prop_assert!((g - s).abs() < 1e-5, "{} vs {}", g, s);
                    }
                }
            }
        }
    }

    #[test]
    fn canonical_csv_roundtrip(
        recs in prop::collection::vec(
            (0usize..3, 0usize..2, prop::collection::vec((any::<f32>().prop_filter("finite", |v| v.is_finite()), 0usize..3), 1..30)),
            1..5,
        ),
    ) {
        let schema = CsvSchema {
            activities: vec!["walk".into(), "sit".into(), "run".into()],
            placements: vec!["wrist".into(), "chest".into()],
            sampling_rate: None,
        };
        let recs: Vec<RawRecording> = recs
            .into_iter()
            .map(|(subj, place, rows)| RawRecording {
                subject_id: format!("s{subj}"),
                source: String::new(),
                placement: place,
                samples: rows.iter().map(|&(v, _)| [v, -v, v * 0.5]).collect(),
                activity: rows.iter().map(|&(_, a)| a).collect(),
                sampling_rate: None,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_canonical_csv(&path, &recs, &schema).unwrap();
        let back = ingest_csv(&path, &schema).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in back.iter().zip(&recs) {
            prop_assert_eq!((&a.subject_id, a.placement, &a.samples, &a.activity), (&b.subject_id, b.placement, &b.samples, &b.activity));
        }
    }
}
