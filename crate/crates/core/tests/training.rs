use cldetect::continual::{
    train_sequence, train_task, EwcConfig, KdConfig, Strategy, TaskAnchor, Teacher, INIT_STREAM,
};
use cldetect::harness::{accuracy, RunConfig};
use cldetect::nn::{ModelSpec, ParamVector};
use cldetect::continual::eval_inputs;
use cldetect::taskgen::{
    make_task, mix_seed, preset_sequence, Family, GeneratorSpec, Patch, PresetKind, Provenance, Sample, SplitSizes,
    TaskDataset, Tone, PATCH_LEN,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use cldetect::Error;
use ndarray::Array2;

fn quick(seed: u64) -> RunConfig {
    RunConfig {
        max_epochs: 12,
        patience: 4,
        seed,
        ..RunConfig::default()
    }
}

fn sizes() -> SplitSizes {
    SplitSizes {
        train: 192,
        val: 64,
        test: 100,
    }
}

fn loud(u: i32, v: i32) -> GeneratorSpec {
    GeneratorSpec {
        name: format!("loud-{u}-{v}"),
        family: Family::GanLike,
        fingerprint: vec![Tone { u, v, amplitude: 0.3 }],
        noise_level: 0.0,
        seed: 1,
        capture: vec![],
    }
}

fn easy_tasks(n: usize, seed: u64) -> Vec<TaskDataset> {
    let (gens, _) = preset_sequence(PresetKind::EasyLike);
    gens.iter().take(n).map(|g| make_task(g, sizes(), mix_seed(seed, g.seed)).unwrap()).collect()
}

fn bits(p: &ParamVector) -> Vec<u64> {
    p.as_slice().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zero_weight_regularizers_reduce_to_transfer_bitwise() {
    let run = quick(3);
    let spec = run.model_spec();
    let tasks = easy_tasks(3, 3);
    let base = train_sequence(&spec, &tasks, &Strategy::Transfer, &run, &tasks).unwrap();
    let kd = Strategy::Kd(KdConfig {
        alpha: 0.0,
        ..KdConfig::default()
    });
    let ewc = Strategy::Ewc(EwcConfig {
        lambda: 0.0,
        ..EwcConfig::default()
    });
    for s in [kd, ewc] {
        let out = train_sequence(&spec, &tasks, &s, &run, &tasks).unwrap();
        assert_eq!(bits(&out.params), bits(&base.params), "{}", s.name());
        assert_eq!(out.matrix, base.matrix, "{}", s.name());
    }
}

#[test]
fn huge_lambda_pins_parameters_to_the_anchor() {
    let run = quick(5);
    let spec = ModelSpec::new(vec![1024, 2]).unwrap();
    let start = ParamVector::he_uniform(&spec, 17);
    let anchor = TaskAnchor::new(start.clone(), vec![1.0; spec.param_count()], "old").unwrap();
    let task = make_task(&loud(4, 5), sizes(), 2).unwrap();
    let strategy = Strategy::Ewc(EwcConfig {
        lambda: 1e9,
        ..EwcConfig::default()
    });
    let (out, _) = train_task(&spec, &start, &task, &strategy, None, &[anchor], &run, 1).unwrap();
    let drift = out
        .as_slice()
        .iter()
        .zip(start.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-3, "L-inf drift {drift}");
}

/// Classes differ by a fixed +-0.08 offset along a random sign pattern, on
/// top of uniform pixel noise: separable by a single hyperplane.
fn linear_toy(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = (0..PATCH_LEN).map(|i| if (i * 7919) % 3 == 0 { 1.0 } else { -1.0 }).collect();
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let px = dir.iter().map(|d| 0.5 + 0.08 * sign * d + rng.random_range(-0.2..0.2)).collect();
            Sample {
                patch: Patch::from_pixels(px).unwrap(),
                label,
            }
        })
        .collect()
}

#[test]
fn separable_task_is_learned() {
    let run = RunConfig {
        max_epochs: 40,
        patience: 10,
        ..RunConfig::default()
    };
    let spec = run.model_spec();
    let task = TaskDataset {
        name: "toy".into(),
        train: linear_toy(256, 1),
        val: linear_toy(512, 2),
        test: linear_toy(64, 3),
        provenance: Provenance::External,
    };
    let init = ParamVector::he_uniform(&spec, 8);
    let (p, trace) = train_task(&spec, &init, &task, &Strategy::Transfer, None, &[], &run, 1).unwrap();
    let x = eval_inputs(&task.train, &run).unwrap();
    let y: Vec<u8> = task.train.iter().map(|s| s.label).collect();
    let acc = accuracy(&spec, &p, x.view(), &y).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
    assert!(trace.best_val_accuracy >= 0.99);
}

#[test]
fn kd_requires_a_teacher() {
    let run = quick(0);
    let spec = run.model_spec();
    let task = make_task(&loud(6, 2), sizes(), 4).unwrap();
    let init = ParamVector::zeros(&spec);
    let kd = Strategy::Kd(KdConfig::default());
    let r = train_task(&spec, &init, &task, &kd, None, &[], &run, 1);
    assert!(matches!(r, Err(Error::Config(_))), "{r:?}");
    let bad = Strategy::Kd(KdConfig {
        tau: 0.0,
        ..KdConfig::default()
    });
    assert!(matches!(train_task(&spec, &init, &task, &bad, Some(Teacher { spec: &spec, params: &init }), &[], &run, 1), Err(Error::Config(_))));
}

#[test]
fn teacher_is_not_modified() {
    let run = quick(1);
    let spec = run.model_spec();
    let task = make_task(&loud(6, 2), sizes(), 4).unwrap();
    let teacher = ParamVector::he_uniform(&spec, 99);
    let before = teacher.checksum();
    let kd = Strategy::Kd(KdConfig::default());
    let (student, _) = train_task(&spec, &teacher, &task, &kd, Some(Teacher { spec: &spec, params: &teacher }), &[], &run, 1).unwrap();
    assert_eq!(teacher.checksum(), before);
    assert_ne!(student.checksum(), before);
}

#[test]
fn repeating_a_task_does_not_forget_it() {
    let run = quick(2);
    let spec = run.model_spec();
    let t = make_task(&loud(3, 11), sizes(), 6).unwrap();
    let stream = vec![t.clone(), t.clone()];
    let out = train_sequence(&spec, &stream, &Strategy::Transfer, &run, &[t]).unwrap();
    let (first, second) = (out.matrix.rows[0][0], out.matrix.rows[1][0]);
    assert!(second >= first - 0.02, "{first} -> {second}");
    let f = cldetect::harness::forgetting(&out.matrix).unwrap();
    assert!(f.mean <= 0.02);
}

#[test]
fn sequence_matrix_covers_every_stage_and_task() {
    let run = RunConfig {
        max_epochs: 3,
        patience: 2,
        ..RunConfig::default()
    };
    let spec = run.model_spec();
    let tasks = easy_tasks(7, 0);
    let out = train_sequence(&spec, &tasks, &Strategy::Transfer, &run, &tasks).unwrap();
    assert_eq!(out.matrix.rows.len(), 7);
    assert!(out.matrix.rows.iter().all(|r| r.len() == 7));
    assert_eq!(out.checkpoints.len(), 7);
    for (i, c) in out.checkpoints.iter().enumerate() {
        assert_eq!(c.trained_on.len(), i + 1);
        assert_eq!(c.trace.task_name, tasks[i].name);
    }
}

#[test]
fn single_task_stream_equals_train_task() {
    let run = quick(4);
    let spec = run.model_spec();
    let tasks = easy_tasks(1, 4);
    let seq = train_sequence(&spec, &tasks, &Strategy::Transfer, &run, &tasks).unwrap();
    let init = ParamVector::he_uniform(&spec, mix_seed(run.seed, INIT_STREAM));
    let (p, trace) = train_task(&spec, &init, &tasks[0], &Strategy::Transfer, None, &[], &run, 1).unwrap();
    assert_eq!(bits(&seq.params), bits(&p));
    assert_eq!(seq.checkpoints[0].trace, trace);
}

#[test]
fn trace_follows_early_stopping_rules() {
    let run = RunConfig {
        max_epochs: 60,
        patience: 3,
        ..RunConfig::default()
    };
    let spec = run.model_spec();
    let task = make_task(&loud(6, 2), sizes(), 4).unwrap();
    let init = ParamVector::he_uniform(&spec, 8);
    let (p, trace) = train_task(&spec, &init, &task, &Strategy::Transfer, None, &[], &run, 1).unwrap();
    let n = trace.epochs.len();
    assert!(n >= 1 && n <= run.max_epochs);
    assert!(trace.epochs.windows(2).all(|w| w[1].learning_rate <= w[0].learning_rate));
    assert!(trace.epochs.iter().enumerate().all(|(i, e)| e.epoch == i));
    let best = &trace.epochs[trace.best_epoch];
    assert_eq!(best.val_accuracy, trace.best_val_accuracy);
    assert!(trace.epochs.iter().all(|e| e.val_accuracy <= trace.best_val_accuracy));
    // The best epoch is the first to reach the maximum.
    assert!(trace.epochs[..trace.best_epoch].iter().all(|e| e.val_accuracy < trace.best_val_accuracy));
    if n < run.max_epochs {
        assert_eq!(n - 1 - trace.best_epoch, run.patience);
    }
    // Returned weights are the best-validation weights.
    let x = eval_inputs(&task.val, &run).unwrap();
    let y: Vec<u8> = task.val.iter().map(|s| s.label).collect();
    assert_eq!(accuracy(&spec, &p, x.view(), &y).unwrap(), trace.best_val_accuracy);
}

#[test]
fn constant_logits_score_the_majority_tie_class() {
    let spec = ModelSpec::detector(4);
    let p = ParamVector::zeros(&spec);
    let x = Array2::from_elem((10, 4), 0.3);
    let y = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
    assert_eq!(accuracy(&spec, &p, x.view(), &y).unwrap(), 0.5);
}
