mod common;

use common::{random, rng};
use elmformer::bayer::{NoiseModel, RawImage};
use elmformer::network::{build, ElmformerConfig};
use elmformer::numerics::Tensor;
use elmformer::training::*;
use elmformer::Error;
use proptest::prelude::*;

fn raw(values: Vec<f32>) -> RawImage {
    RawImage::new(2, values.len() / 2, values).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: ElmformerConfig::new(8, 1, 4, 2, 0),
        batch_size: 2,
        patch_size: 16,
        val_every: 2,
        val_count: 1,
        val_size: 16,
        ..TrainConfig::default()
    }
}

fn tiny_data() -> DatasetSpec {
    DatasetSpec::Synthetic {
        scenes: 3,
        scene_size: 24,
        noise: NoiseModel::Awgn { sigma: 0.1 },
    }
}

#[test]
fn identical_prediction_losses() {
    let a = raw(vec![0.1, 0.4, 0.9, 0.3]);
    assert_eq!(loss(&a, &a, LossKind::L1).unwrap().0, 0.0);
    assert_eq!(loss(&a, &a, LossKind::L2).unwrap().0, 0.0);
    let (c, _) = loss(&a, &a, LossKind::Charbonnier { eps: 1e-3 }).unwrap();
    assert!((c - 1e-3).abs() < 1e-15);
}

#[test]
fn constant_difference_l2() {
    let a = raw(vec![0.75; 4]);
    let b = raw(vec![0.25; 4]);
    assert_eq!(loss(&a, &b, LossKind::L2).unwrap().0, 0.25);
    assert_eq!(loss(&a, &b, LossKind::L1).unwrap().0, 0.5);
}

#[test]
fn loss_extent_mismatch() {
    let a = raw(vec![0.0; 4]);
    let b = raw(vec![0.0; 8]);
    assert!(matches!(loss(&a, &b, LossKind::L1), Err(Error::Dimension { .. })));
}

#[test]
fn charbonnier_gradient_matches_differences() {
    let mut r = rng(1);
    let pred = random(&mut r, &[12], 1.0);
    let target = random(&mut r, &[12], 1.0);
    let kind = LossKind::Charbonnier { eps: DEFAULT_CHARBONNIER_EPS };
    let (_, grad) = loss_tensor(&pred, &target, kind).unwrap();
    let h = 1e-6;
    for i in 0..12 {
        let mut p = pred.clone();
        p.data_mut()[i] += h;
        let plus = loss_tensor(&p, &target, kind).unwrap().0;
        p.data_mut()[i] -= 2.0 * h;
        let minus = loss_tensor(&p, &target, kind).unwrap().0;
        let numeric = (plus - minus) / (2.0 * h);
        assert!((numeric - grad.data()[i]).abs() < 1e-8, "{i}: {numeric} vs {}", grad.data()[i]);
    }
}

#[test]
fn loss_tags_parse() {
    assert_eq!(LossKind::parse("l1", 1e-3).unwrap(), LossKind::L1);
    assert_eq!(LossKind::parse("charbonnier", 1e-2).unwrap(), LossKind::Charbonnier { eps: 1e-2 });
    assert!(LossKind::parse("charbonnier", 0.0).is_err());
    assert!(LossKind::parse("huber", 1e-3).is_err());
}

#[test]
fn cosine_endpoints_and_midpoint() {
    assert_eq!(cosine_lr(0, 2000, 4e-4, 1e-6).unwrap(), 4e-4);
    assert!((cosine_lr(2000, 2000, 4e-4, 1e-6).unwrap() - 1e-6).abs() < 1e-18);
    assert!((cosine_lr(1000, 2000, 4e-4, 1e-6).unwrap() - (4e-4 + 1e-6) / 2.0).abs() < 1e-18);
    assert!(matches!(cosine_lr(2001, 2000, 4e-4, 1e-6), Err(Error::Argument(_))));
}

#[test]
fn adamw_zero_gradient_cases() {
    let start = vec![1.0, -2.0, 0.5];
    let mut p = start.clone();
    let mut s = AdamState::new(3);
    let no_decay = AdamW { weight_decay: 0.0, ..AdamW::default() };
    adamw_step(&mut p, &[0.0; 3], &mut s, 0.1, &no_decay).unwrap();
    assert_eq!(p, start);

    let mut p = start.clone();
    let mut s = AdamState::new(3);
    adamw_step(&mut p, &[0.0; 3], &mut s, 0.1, &AdamW::default()).unwrap();
    for (a, b) in p.iter().zip(&start) {
        assert_eq!(*a, b * (1.0 - 0.1 * 0.02));
    }
}

#[test]
fn adamw_single_step_closed_form() {
    let opt = AdamW::default();
    let mut p = vec![1.0];
    let mut s = AdamState::new(1);
    adamw_step(&mut p, &[1.0], &mut s, 0.1, &opt).unwrap();
    let m_hat = (0.1 * 1.0) / (1.0 - 0.9);
    let v_hat = (0.001 * 1.0) / (1.0 - 0.999);
    let want = 1.0 * (1.0 - 0.1 * 0.02) - 0.1 * m_hat / (f64::sqrt(v_hat) + 1e-8);
    assert!((p[0] - want).abs() < 1e-15, "{} vs {want}", p[0]);
    assert_eq!(s.step, 1);
}

#[test]
fn adamw_shape_mismatch() {
    let mut s = AdamState::new(2);
    assert!(adamw_step(&mut [0.0, 0.0], &[1.0], &mut s, 0.1, &AdamW::default()).is_err());
}

/// Plain Adam written out independently.
fn adam_reference(p0: &[f64], grads: &[Vec<f64>], lr: &[f64]) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut p = p0.to_vec();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    for (t, (g, &a)) in grads.iter().zip(lr).enumerate() {
        let t = t as i32 + 1;
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            p[i] -= a * mh / (vh.sqrt() + eps);
        }
    }
    p
}

#[test]
fn steps_zero_returns_initialization() {
    let cfg = tiny_config();
    let out = train(&cfg, &tiny_data(), 0, 9).unwrap();
    let mut model = cfg.model.clone();
    model.seed = 9;
    assert_eq!(out.checkpoint.params, build(&model).unwrap().to_flat());
    assert_eq!(out.checkpoint.step, 0);
    assert!(out.log.is_empty());
}

#[test]
fn same_seed_is_bit_identical() {
    let cfg = tiny_config();
    let a = train(&cfg, &tiny_data(), 3, 4).unwrap();
    let b = train(&cfg, &tiny_data(), 3, 4).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(metrics_to_csv(&a.log), metrics_to_csv(&b.log));
    let c = train(&cfg, &tiny_data(), 3, 5).unwrap();
    assert_ne!(a.checkpoint.params, c.checkpoint.params);
}

#[test]
fn log_has_one_row_per_step_with_validation() {
    let cfg = tiny_config();
    let out = train(&cfg, &tiny_data(), 3, 1).unwrap();
    let steps: Vec<u64> = out.log.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![1, 2, 3]);
    assert!(out.log[0].validation.is_none());
    assert!(out.log[1].validation.is_some() && out.log[2].validation.is_some());
    assert!(out.noisy_baseline.is_some());
    let csv = metrics_to_csv(&out.log);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 3);
    assert!(out.log.iter().all(|r| r.loss >= 0.0));
}

#[test]
fn file_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let noise = NoiseModel::ShotRead { shot: 0.01, read: 0.002 };
    let manifest = write_dataset(dir.path(), 2, 16, noise, 3).unwrap();
    assert_eq!(Manifest::read(dir.path()).unwrap(), manifest);
    assert_eq!(manifest.pairs.len(), 2);
    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), 2, 16, noise, 3).unwrap();
    for p in &manifest.pairs {
        let a = std::fs::read(dir.path().join(&p.noisy)).unwrap();
        let b = std::fs::read(again.path().join(&p.noisy)).unwrap();
        assert_eq!(a, b);
    }
    let cfg = TrainConfig { patch_size: 16, ..tiny_config() };
    let out = train(&cfg, &DatasetSpec::Files { dir: dir.path().to_path_buf() }, 1, 0).unwrap();
    assert_eq!(out.log.len(), 1);
}

#[test]
fn missing_dataset_names_path() {
    let spec = DatasetSpec::Files { dir: "/nonexistent/elm-data".into() };
    let err = train(&tiny_config(), &spec, 1, 0).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/elm-data"), "{err}");
}

#[test]
fn config_text_round_trip_and_rejections() {
    let cfg = TrainConfig::parse("base_channels = 16\ndepth = 2\nbatch_size = 3\nloss = l2\n").unwrap();
    assert_eq!(cfg.model.base_channels, 16);
    assert_eq!(cfg.batch_size, 3);
    assert_eq!(cfg.loss, LossKind::L2);
    assert!(TrainConfig::parse("bogus = 1\n").is_err());
    assert!(TrainConfig::parse("patch_size = 7\n").is_err());
}

#[test]
fn metrics_file_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let rows = vec![MetricsRow {
        step: 1,
        lr: 4e-4,
        loss: 0.5,
        validation: Some(Validation { psnr_rr: 30.0, psnr_rs: 28.0 }),
    }];
    write_metrics(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(METRICS_HEADER));
    assert_eq!(text.lines().count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_non_increasing(total in 1u64..5000, a in 0u64..5000, b in 0u64..5000) {
        let (lo, hi) = (a.min(b) % (total + 1), a.max(b) % (total + 1));
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        prop_assert!(cosine_lr(lo, total, 4e-4, 1e-6).unwrap() >= cosine_lr(hi, total, 4e-4, 1e-6).unwrap());
    }

    #[test]
    fn adamw_without_decay_is_adam(seed in any::<u64>(), steps in 1usize..12) {
        let mut r = rng(seed);
        let p0 = random(&mut r, &[5], 1.0).into_data();
        let grads: Vec<Vec<f64>> = (0..steps).map(|_| random(&mut r, &[5], 1.0).into_data()).collect();
        let lrs: Vec<f64> = (0..steps).map(|t| cosine_lr(t as u64, steps as u64, 1e-2, 1e-4).unwrap()).collect();
        let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
        let mut p = p0.clone();
        let mut s = AdamState::new(5);
        for (g, &lr) in grads.iter().zip(&lrs) {
            adamw_step(&mut p, g, &mut s, lr, &opt).unwrap();
        }
        let want = adam_reference(&p0, &grads, &lrs);
        for (a, b) in p.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn losses_are_non_negative_and_zero_only_at_equality(
        a in prop::collection::vec(0.0f64..1.0, 8),
        b in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let pa = Tensor::new([8], a.clone()).unwrap();
        let pb = Tensor::new([8], b.clone()).unwrap();
        let eps = 1e-3;
        for kind in [LossKind::L1, LossKind::L2, LossKind::Charbonnier { eps }] {
            let (l, _) = loss_tensor(&pa, &pb, kind).unwrap();
            let floor = if let LossKind::Charbonnier { .. } = kind { eps } else { 0.0 };
            prop_assert!(l >= floor - 1e-15);
            prop_assert_eq!(l <= floor, a == b);
        }
    }
}
