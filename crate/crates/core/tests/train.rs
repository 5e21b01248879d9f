mod common;

use common::{micro_config, micro_data, uniform};
use restorer::data::DegradationKind;
use restorer::gradcheck::{check_gradients, GradCheck};
use restorer::model::{read_checkpoint, Restorer};
use restorer::train::{
    evaluate, perceptual_loss, smooth_l1, swapped_label, total_loss, Adam, ConvPyramid, EvalTable, LossConfig,
    LrSchedule, PerceptualMode, PromptPolicy, TrainConfig, Trainer, CHECKPOINT_FILE, CSV_HEADER, METRICS_FILE,
};
use restorer::{Error, ParamStore, Tape, Tensor};

fn scalar_loss(f: impl Fn(&Tape, restorer::Var, restorer::Var) -> restorer::Result<restorer::Var>, a: &Tensor, b: &Tensor) -> f64 {
    let tape = Tape::no_grad();
    let l = f(&tape, tape.constant(a), tape.constant(b)).unwrap();
    tape.item(l).unwrap()
}

#[test]
fn smooth_l1_examples() {
    let z = Tensor::zeros([1]).unwrap();
    let small = Tensor::new([1], vec![0.5]).unwrap();
    let large = Tensor::new([1], vec![2.0]).unwrap();
    let f = |t: &Tape, a, b| smooth_l1(t, a, b, 1.0);
    assert_eq!(scalar_loss(f, &small, &z), 0.125);
    assert_eq!(scalar_loss(f, &large, &z), 1.5);
    let both = Tensor::new([2], vec![0.5, -2.0]).unwrap();
    assert_eq!(scalar_loss(f, &both, &Tensor::zeros([2]).unwrap()), 0.8125);
}

fn cfg(lambda: f64, mode: PerceptualMode) -> LossConfig {
    LossConfig {
        lambda,
        perceptual: mode,
        ..LossConfig::default()
    }
}

#[test]
fn total_loss_is_linear_in_lambda() {
    let (a, b) = (uniform(&[3, 8, 8], 1), uniform(&[3, 8, 8], 2));
    let ex = ConvPyramid::surrogate(7).unwrap();
    let eval = |lambda: f64| {
        scalar_loss(|t, x, y| total_loss(t, x, y, &cfg(lambda, PerceptualMode::Surrogate), Some(&ex)), &a, &b)
    };
    let base = scalar_loss(|t, x, y| smooth_l1(t, x, y, 1.0), &a, &b);
    let perc = scalar_loss(|t, x, y| perceptual_loss(t, x, y, Some(&ex)), &a, &b);
    assert!(perc > 0.0);
    assert_eq!(eval(0.0), base);
    for lambda in [0.04, 0.5, 3.0] {
        assert!((eval(lambda) - (base + lambda * perc)).abs() < 1e-15, "{lambda}");
    }
    let off = scalar_loss(|t, x, y| total_loss(t, x, y, &cfg(1.0, PerceptualMode::Off), None), &a, &b);
    assert_eq!(off, base);
}

#[test]
fn identical_images_have_zero_loss() {
    let a = uniform(&[3, 8, 8], 3);
    let ex = ConvPyramid::surrogate(1).unwrap();
    let l = scalar_loss(|t, x, y| total_loss(t, x, y, &LossConfig::default(), Some(&ex)), &a, &a);
    assert_eq!(l, 0.0);
}

#[test]
fn perceptual_term_without_extractor_is_usage_error() {
    let a = uniform(&[3, 8, 8], 4);
    let tape = Tape::no_grad();
    let r = perceptual_loss(&tape, tape.constant(&a), tape.constant(&a), None);
    assert!(matches!(r, Err(Error::Usage(_))));
    let ext = cfg(0.04, PerceptualMode::External);
    assert!(matches!(ext.extractor(), Err(Error::Usage(_))));
    assert!(matches!(cfg(-1.0, PerceptualMode::Off).validate(), Err(Error::Config(_))));
}

#[test]
fn feature_pyramid_roundtrips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.bin");
    let ex = ConvPyramid::surrogate(9).unwrap();
    ex.save(&path).unwrap();
    let loaded = ConvPyramid::load(&path).unwrap();
    assert_eq!(loaded.scales(), 3);
    let a = uniform(&[3, 8, 8], 5);
    let b = uniform(&[3, 8, 8], 6);
    let f1 = scalar_loss(|t, x, y| perceptual_loss(t, x, y, Some(&ex)), &a, &b);
    let f2 = scalar_loss(|t, x, y| perceptual_loss(t, x, y, Some(&loaded)), &a, &b);
    assert_eq!(f1, f2);
    let ext = LossConfig {
        perceptual: PerceptualMode::External,
        feature_weights: Some(path),
        ..LossConfig::default()
    };
    assert!(ext.extractor().unwrap().is_some());
}

#[test]
fn total_loss_gradient() {
    let ex = ConvPyramid::surrogate(11).unwrap();
    let c = LossConfig {
        lambda: 0.7,
        ..LossConfig::default()
    };
    let report = check_gradients(
        |t, v| total_loss(t, v[0], v[1], &c, Some(&ex)),
        &[uniform(&[3, 6, 6], 12), uniform(&[3, 6, 6], 13)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn scalar_store(x: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("x", Tensor::new([1], vec![x]).unwrap().with_requires_grad()).unwrap();
    s
}

fn set_grad(s: &mut ParamStore, g: f64) {
    let t = s.get_mut("x").unwrap();
    t.zero_grad();
    t.accumulate_grad(&[g]).unwrap();
}

#[test]
fn adam_matches_reference_trajectory() {
    // (x − 3)² from x = 0 at lr 0.1, simulated independently in floating point.
    let want = [
        0.09999999983333335,
        0.19989729258521102,
        0.29961847654925267,
        0.3990864689442145,
        0.4982205437727129,
    ];
    let mut s = scalar_store(0.0);
    let mut adam = Adam::new();
    for w in want {
        let x = s.get("x").unwrap().data()[0];
        set_grad(&mut s, 2.0 * (x - 3.0));
        adam.step(&mut s, 0.1).unwrap();
        let got = s.get("x").unwrap().data()[0];
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
    }
    assert_eq!(adam.steps(), 5);
}

#[test]
fn adam_shrinks_a_scalar_square_monotonically() {
    // x² from x = 1 at lr 0.1, simulated independently in floating point.
    let want = [
        0.9000000005,
        0.8004122286917928,
        0.7015862729460303,
        0.603939060573746,
        0.507963659264342,
        0.4142364559936619,
        0.3234207049391021,
        0.23626372452104188,
        0.1535845600703636,
        0.07624915560691221,
    ];
    let mut s = scalar_store(1.0);
    let mut adam = Adam::new();
    let mut last = 1.0f64;
    for w in want {
        let x = s.get("x").unwrap().data()[0];
        set_grad(&mut s, 2.0 * x);
        adam.step(&mut s, 0.1).unwrap();
        let got = s.get("x").unwrap().data()[0];
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
        assert!(got.abs() < last.abs());
        last = got;
    }
}

#[test]
fn zero_gradients_leave_parameters_unchanged() {
    let mut s = scalar_store(1.25);
    let mut adam = Adam::new();
    for _ in 0..3 {
        set_grad(&mut s, 0.0);
        adam.step(&mut s, 0.1).unwrap();
    }
    assert_eq!(s.get("x").unwrap().data()[0], 1.25);
    assert_eq!(adam.first_moment("x"), Some(&[0.0][..]));
    assert_eq!(adam.second_moment("x"), Some(&[0.0][..]));
}

#[test]
fn missing_gradient_is_usage_error_and_frozen_params_are_skipped() {
    let mut s = scalar_store(1.0);
    assert!(matches!(Adam::new().step(&mut s, 0.1), Err(Error::Usage(_))));
    s.set_trainable("x", false);
    Adam::new().step(&mut s, 0.1).unwrap();
    assert_eq!(s.get("x").unwrap().data()[0], 1.0);
}

#[test]
fn adam_state_roundtrips() {
    let mut s = scalar_store(0.5);
    let mut adam = Adam::new();
    set_grad(&mut s, 0.3);
    adam.step(&mut s, 0.01).unwrap();
    let back = Adam::from_state_tensors(&adam.state_tensors()).unwrap();
    assert_eq!(back, adam);
}

#[test]
fn step_schedule_halves_after_sixty_then_every_fifty() {
    let s = LrSchedule::new(1e-4, 60, 50);
    for (epoch, want) in [(1, 1e-4), (60, 1e-4), (61, 5e-5), (109, 5e-5), (110, 2.5e-5), (159, 2.5e-5), (160, 1.25e-5)] {
        assert_eq!(s.lr(epoch), want, "epoch {epoch}");
    }
    assert_eq!(s.halvings(250), 4);
}

fn quick_train(steps: usize) -> TrainConfig {
    TrainConfig {
        epochs: 1000,
        max_steps: Some(steps),
        batch_size: 4,
        schedule: LrSchedule::new(1e-3, 60, 50),
        ..TrainConfig::toy()
    }
}

#[test]
fn two_hundred_steps_reduce_training_loss() {
    let data = micro_data(16, &[DegradationKind::Noise], 1);
    let test = micro_data(4, &[DegradationKind::Noise], 2);
    let model = Restorer::build(micro_config(), 3).unwrap();
    let mut t = Trainer::new(model, quick_train(200), LossConfig::default()).unwrap();
    let rep = t.fit(&data, &test, None).unwrap();
    assert_eq!(rep.step_losses.len(), 200);
    assert_eq!(t.step(), 200);
    let head: f64 = rep.step_losses[..20].iter().sum();
    let tail: f64 = rep.step_losses[180..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn every_parameter_receives_a_gradient() {
    for prompt in ["text", "learnable"] {
        let mut c = micro_config();
        c.set("prompt", prompt).unwrap();
        let data = micro_data(2, &[DegradationKind::Rain], 4);
        let mut t = Trainer::new(Restorer::build(c, 5).unwrap(), quick_train(1), LossConfig::default()).unwrap();
        let refs: Vec<_> = data.iter().collect();
        t.accumulate_batch(&refs).unwrap();
        for (name, p) in t.model().params().iter() {
            assert_eq!(p.grad().is_some(), p.requires_grad(), "{prompt}: {name}");
        }
    }
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let data = micro_data(8, &[DegradationKind::Noise, DegradationKind::LowLight], 6);
    let test = micro_data(2, &[DegradationKind::Noise], 7);
    let mut cfg = quick_train(8);
    cfg.max_steps = None;
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;

    let full_dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(Restorer::build(micro_config(), 8).unwrap(), cfg.clone(), LossConfig::default()).unwrap();
    full.fit(&data, &test, Some(full_dir.path())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut half_cfg = cfg.clone();
    half_cfg.epochs = 2;
    let mut first = Trainer::new(Restorer::build(micro_config(), 8).unwrap(), half_cfg, LossConfig::default()).unwrap();
    first.fit(&data, &test, Some(dir.path())).unwrap();
    let ckpt = read_checkpoint(dir.path().join(CHECKPOINT_FILE)).unwrap();
    let mut second = Trainer::resume(ckpt, cfg, LossConfig::default()).unwrap();
    assert_eq!((second.epoch(), second.step()), (2, 4));
    second.fit(&data, &test, Some(dir.path())).unwrap();

    assert!(second.model().params().bit_eq(full.model().params()));
    assert_eq!(second.optimizer(), full.optimizer());
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(dir.path(), METRICS_FILE), read(full_dir.path(), METRICS_FILE));
    assert_eq!(read(dir.path(), CHECKPOINT_FILE), read(full_dir.path(), CHECKPOINT_FILE));
    let log = String::from_utf8(read(dir.path(), METRICS_FILE)).unwrap();
    assert_eq!(log.lines().next(), Some(CSV_HEADER));
    assert_eq!(log.lines().count(), 5);
}

#[test]
fn evaluate_reports_every_label() {
    let data = micro_data(6, &[DegradationKind::Noise, DegradationKind::Fog, DegradationKind::Blur], 9);
    let model = Restorer::build(micro_config(), 10).unwrap();
    let correct = evaluate(&model, &data, PromptPolicy::Correct).unwrap();
    let labels: Vec<&str> = correct.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["noise", "fog", "blur"]);
    assert!(correct.rows.iter().all(|r| r.count == 2 && r.psnr.is_finite() && r.ssim <= 1.0));
    // The output layer starts at zero, so an untrained model returns its input.
    for r in &correct.rows {
        assert!((r.psnr - r.input_psnr).abs() < 1e-9);
    }
    let swapped = evaluate(&model, &data, PromptPolicy::Swapped).unwrap();
    assert_eq!(swapped.rows.len(), 3);
    let table = EvalTable(vec![correct, swapped]).to_string();
    assert!(table.lines().next().unwrap().contains("psnr"));
    assert_eq!(table.lines().count(), 1 + 2 * 4);
    assert!(matches!(evaluate(&model, &[], PromptPolicy::Correct), Err(Error::Data(_))));
}

#[test]
fn swapped_prompts_rotate_through_dataset_labels() {
    let labels = vec!["noise".to_string(), "low light".to_string()];
    assert_eq!(swapped_label("noise", &labels), "low light");
    assert_eq!(swapped_label("low light", &labels), "noise");
    assert_eq!(swapped_label("rain", &["rain".to_string()]), "snow");
    assert_eq!(swapped_label("blur", &["blur".to_string()]), "rain");
}

#[test]
fn unknown_ablation_axis_is_usage_error() {
    use restorer::train::AblationAxis;
    assert!(matches!("depth".parse::<AblationAxis>(), Err(Error::Usage(_))));
    for a in AblationAxis::ALL {
        assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
    }
}
