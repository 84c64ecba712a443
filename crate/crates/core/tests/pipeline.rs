use std::fs;

use cldetect::checkpoint::Checkpoint;
use cldetect::continual::{EwcConfig, Strategy, TrainTrace};
use cldetect::harness::RunConfig;
use cldetect::nn::{ModelSpec, ParamVector};
use cldetect::pipeline::drift::drift_detect;
use cldetect::pipeline::scenario::{parse_scenario, run_scenario, ScenarioEvent};
use cldetect::pipeline::{
    extract_features, AlertOutcome, FeatureVector, ModelRegistry, Pipeline, PipelineConfig, ReferenceProfile,
    VersionMetadata,
};
use cldetect::taskgen::{make_task, preset_sequence, synth_stream, GeneratorSpec, Patch, PresetKind, Sample, SplitSizes};
use cldetect::Error;

fn quick() -> RunConfig {
    RunConfig {
        max_epochs: 10,
        patience: 3,
        seed: 1,
        ..RunConfig::default()
    }
}

fn gen(name: &str) -> GeneratorSpec {
    preset_sequence(PresetKind::LongLike)
        .0
        .into_iter()
        .find(|g| g.name == name)
        .unwrap()
}

fn small_cfg() -> PipelineConfig {
    PipelineConfig {
        window_size: 200,
        retrain_batch: 200,
        ..PipelineConfig::default()
    }
}

fn booted(cfg: PipelineConfig, registry: ModelRegistry) -> Pipeline {
    let pipe = Pipeline::new(quick(), Strategy::Ewc(EwcConfig::default()), cfg, registry).unwrap();
    let task = make_task(&gen("gaugan"), SplitSizes { train: 256, val: 64, test: 2 }, 3).unwrap();
    assert_eq!(pipe.bootstrap(&task).unwrap(), 1);
    pipe
}

fn tiny_checkpoint(seed: u64) -> Checkpoint {
    let spec = ModelSpec::new(vec![4, 3, 2]).unwrap();
    let trace = TrainTrace {
        task_name: "t".into(),
        strategy: "transfer".into(),
        epochs: vec![],
        best_epoch: 0,
        best_val_accuracy: 0.5,
    };
    let params = ParamVector::he_uniform(&spec, seed);
    Checkpoint::new(spec, params, Strategy::Transfer, seed, vec!["t".into()], trace)
}

fn meta(parent: Option<u64>) -> VersionMetadata {
    VersionMetadata::now("transfer", vec!["t".into()], parent)
}

/// Streams `samples` through `pipe` until a window alerts; returns its id
/// and the ground-truth labels of that window.
fn first_alert(pipe: &Pipeline, samples: &[Sample]) -> (u64, Vec<u8>) {
    let mut labels = Vec::new();
    for s in samples {
        pipe.predict(&s.patch).unwrap();
        labels.push(s.label);
        if let Some(r) = pipe.check_drift().unwrap() {
            let window: Vec<u8> = labels.drain(..).collect();
            if r.alert {
                return (r.window_id, window);
            }
        }
    }
    panic!("no window alerted");
}

#[test]
fn registry_versions_are_append_only() {
    let mut reg = ModelRegistry::in_memory();
    assert!(matches!(reg.active(), Err(Error::ServiceUnavailable(_))));
    assert_eq!(reg.register(tiny_checkpoint(1), meta(None)).unwrap(), 1);
    assert_eq!(reg.active_version(), None);
    assert_eq!(reg.register(tiny_checkpoint(2), meta(Some(1))).unwrap(), 2);
    reg.activate(2).unwrap();
    reg.activate(2).unwrap();
    assert_eq!(reg.active_version(), Some(2));
    reg.rollback(1).unwrap();
    assert_eq!(reg.active_version(), Some(1));
    let v3 = reg.register(tiny_checkpoint(3), meta(reg.active_version())).unwrap();
    assert_eq!(v3, 3);
    assert_eq!(reg.entry(3).unwrap().metadata.parent_version, Some(1));
    assert_eq!(reg.len(), 3);
    assert!(matches!(reg.activate(9), Err(Error::NotFound(_))));
    assert!(matches!(reg.activate(0), Err(Error::NotFound(_))));
    assert!(matches!(reg.register(tiny_checkpoint(4), meta(Some(7))), Err(Error::Validation(_))));
    assert_eq!(reg.active_version(), Some(1));

    let mut bad = tiny_checkpoint(5);
    bad.params = ParamVector::from_vec(vec![0.0; 3]).unwrap();
    assert!(matches!(reg.register(bad, meta(None)), Err(Error::Validation(_))));
    assert_eq!(reg.len(), 3);
}

#[test]
fn registry_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("reg");
    let sums: Vec<String> = {
        let mut reg = ModelRegistry::open(&root).unwrap();
        reg.register(tiny_checkpoint(1), meta(None)).unwrap();
        reg.register(tiny_checkpoint(2), meta(Some(1))).unwrap();
        reg.activate(2).unwrap();
        reg.entries().iter().map(|e| e.checksum.clone()).collect()
    };
    let reg = ModelRegistry::open(&root).unwrap();
    assert_eq!(reg.active_version(), Some(2));
    assert_eq!(reg.entries().iter().map(|e| e.checksum.clone()).collect::<Vec<_>>(), sums);
    assert_eq!(*reg.entry(1).unwrap().checkpoint, tiny_checkpoint(1));
    assert_eq!(reg.entry(2).unwrap().metadata.parent_version, Some(1));
    assert!(!root.join("index.json.tmp").exists());
}

#[test]
fn tampered_checkpoint_is_rejected_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("reg");
    {
        let mut reg = ModelRegistry::open(&root).unwrap();
        reg.register(tiny_checkpoint(1), meta(None)).unwrap();
    }
    let path = root.join("v000001.json");
    let mut ck = Checkpoint::load(&path).unwrap();
    ck.params.as_mut_slice()[0] += 1.0;
    fs::write(&path, ck.to_json().unwrap()).unwrap();
    assert!(matches!(ModelRegistry::open(&root), Err(Error::Validation(_))));

    fs::write(&path, "{ not json").unwrap();
    assert!(matches!(ModelRegistry::open(&root), Err(Error::Validation(_))));
}

#[test]
fn serving_needs_an_active_model() {
    let pipe = Pipeline::new(quick(), Strategy::Transfer, small_cfg(), ModelRegistry::in_memory()).unwrap();
    let patch = synth_stream(&gen("gaugan"), 1, 0).unwrap().remove(0).patch;
    assert!(matches!(pipe.predict(&patch), Err(Error::ServiceUnavailable(_))));
    assert!(matches!(pipe.check_drift(), Ok(None)));
}

#[test]
fn config_is_validated() {
    let bad = [
        PipelineConfig { window_size: 10, ..PipelineConfig::default() },
        PipelineConfig { drift_threshold: 0.0, ..PipelineConfig::default() },
        PipelineConfig { drift_threshold: 1.5, ..PipelineConfig::default() },
        PipelineConfig { val_fraction: 1.0, ..PipelineConfig::default() },
        PipelineConfig { retrain_batch: 1, ..PipelineConfig::default() },
    ];
    for cfg in bad {
        let r = Pipeline::new(quick(), Strategy::Transfer, cfg, ModelRegistry::in_memory());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}

#[test]
fn predict_is_read_only_and_thread_safe() {
    let pipe = booted(PipelineConfig { window_size: 500, ..small_cfg() }, ModelRegistry::in_memory());
    let before = pipe.registry().active().unwrap().checksum.clone();
    let stream = synth_stream(&gen("gaugan"), 200, 11).unwrap();
    let single: Vec<u8> = stream.iter().map(|s| pipe.score(&[&s.patch]).unwrap()[0].label).collect();
    std::thread::scope(|scope| {
        for chunk in stream.chunks(50) {
            let pipe = &pipe;
            scope.spawn(move || {
                for s in chunk {
                    let p = pipe.predict(&s.patch).unwrap();
                    assert_eq!(p.version, 1);
                    assert!((0.0..=1.0).contains(&p.score));
                }
            });
        }
    });
    assert_eq!(pipe.window_len(), 200);
    assert_eq!(pipe.registry().len(), 1);
    assert_eq!(pipe.registry().active().unwrap().checksum, before);
    let again: Vec<u8> = stream.iter().map(|s| pipe.score(&[&s.patch]).unwrap()[0].label).collect();
    assert_eq!(single, again);
}

#[test]
fn unlabeled_alerts_queue_as_pending() {
    let pipe = booted(PipelineConfig { pending_only: true, ..small_cfg() }, ModelRegistry::in_memory());
    let stream = synth_stream(&gen("crn"), 800, 5).unwrap();
    let (id, labels) = first_alert(&pipe, &stream);
    assert!(matches!(pipe.on_alert(id, Some(&labels)), Ok(AlertOutcome::Pending { queued: 1 })));
    assert_eq!(pipe.pending_len(), 1);
    assert_eq!(pipe.registry().len(), 1);
    assert!(matches!(pipe.on_alert(id, None), Err(Error::NotFound(_))));
    assert!(matches!(pipe.on_alert(999, None), Err(Error::NotFound(_))));
}

#[test]
fn approval_mode_registers_without_activating() {
    let pipe = booted(PipelineConfig { approval_mode: true, ..small_cfg() }, ModelRegistry::in_memory());
    let probe = synth_stream(&gen("gaugan"), 100, 77).unwrap();
    let patches: Vec<&Patch> = probe.iter().map(|s| &s.patch).collect();
    let v1_scores = pipe.score(&patches).unwrap();

    let stream = synth_stream(&gen("crn"), 800, 5).unwrap();
    let (id, labels) = first_alert(&pipe, &stream);
    // A short label vector is refused and the window stays flagged.
    assert!(matches!(pipe.on_alert(id, Some(&labels[1..])), Err(Error::Validation(_))));
    let out = pipe.on_alert(id, Some(&labels)).unwrap();
    assert_eq!(out, AlertOutcome::AwaitingApproval { version: 2, parent_version: 1 });
    assert_eq!(pipe.registry().active_version(), Some(1));
    assert_eq!(pipe.profile().unwrap().source_version, Some(1));

    pipe.activate(2).unwrap();
    assert_eq!(pipe.profile().unwrap().source_version, Some(2));
    assert_eq!(pipe.registry().entry(2).unwrap().metadata.parent_version, Some(1));

    pipe.rollback(1).unwrap();
    assert_eq!(pipe.profile().unwrap().source_version, Some(1));
    assert_eq!(pipe.score(&patches).unwrap(), v1_scores);
    assert!(matches!(pipe.activate(3), Err(Error::NotFound(_))));
}

#[test]
fn persistent_pipeline_writes_every_version() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("reg");
    let pipe = booted(small_cfg(), ModelRegistry::open(&root).unwrap());
    let stream = synth_stream(&gen("crn"), 800, 5).unwrap();
    let (id, labels) = first_alert(&pipe, &stream);
    let out = pipe.on_alert(id, Some(&labels)).unwrap();
    assert!(matches!(out, AlertOutcome::Retrained { version: 2, parent_version: 1, .. }), "{out:?}");
    drop(pipe);
    let reg = ModelRegistry::open(&root).unwrap();
    assert_eq!(reg.len(), 2);
    assert_eq!(reg.active_version(), Some(2));
    assert_eq!(reg.entry(2).unwrap().checkpoint.trained_on.len(), 2);
}

#[test]
fn identical_samples_show_no_drift() {
    let patches: Vec<Patch> = synth_stream(&gen("biggan"), 300, 4).unwrap().into_iter().map(|s| s.patch).collect();
    let feats: Vec<FeatureVector> = patches.iter().map(extract_features).collect();
    let profile = ReferenceProfile::new(&feats, None).unwrap();
    let r = drift_detect(&profile, &feats[..200], 0.25, 0).unwrap();
    assert!(r.statistics.iter().all(|s| *s <= 1.0 / 3.0 + 1e-12));
    let full = drift_detect(&profile, &feats, 0.25, 1).unwrap();
    assert_eq!(full.max_statistic, 0.0);
    assert!(!full.alert);
}

#[test]
fn scenario_log_is_reproducible() {
    let script = r#"[{"generator_name": "gaugan", "count": 400},
                     {"generator_name": "crn", "count": 400, "label_available": false}]"#;
    let phases = parse_scenario(script).unwrap();
    let gens = preset_sequence(PresetKind::LongLike).0;
    let run = || {
        let pipe = Pipeline::new(quick(), Strategy::Transfer, small_cfg(), ModelRegistry::in_memory()).unwrap();
        let mut log = Vec::new();
        let report = run_scenario(&pipe, &phases, &gens, &quick(), &mut log).unwrap();
        (report, String::from_utf8(log).unwrap())
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_eq!(a.versions, 1);
    assert!(a.pending >= 1);
    assert_eq!(a.phases[1].retrains, 0);
    let events: Vec<ScenarioEvent> = log_a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(matches!(events[1], ScenarioEvent::Bootstrap { version: 1, .. }));
    assert!(events.iter().any(|e| matches!(e, ScenarioEvent::Drift(r) if r.alert)));

    assert!(parse_scenario("[]").is_err());
    assert!(parse_scenario(r#"[{"generator_name": "x", "count": 0}]"#).is_err());
}
