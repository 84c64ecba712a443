//! Scripted end-to-end runs: media streams phase by phase through the
//! service and every report, alert and registry event goes to a JSON-lines
//! log.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{AlertOutcome, DriftReport, Pipeline};
use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::taskgen::{make_task, mix_seed, synth_stream, GeneratorSpec, Sample, SplitSizes};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPhase {
    pub generator_name: String,
    pub count: usize,
    #[serde(default = "yes")]
    pub label_available: bool,
}

fn yes() -> bool {
    true
}

pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioPhase>> {
    let phases: Vec<ScenarioPhase> =
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad scenario script: {e}")))?;
    if phases.is_empty() {
        return Err(Error::config("scenario script has no phases"));
    }
    if let Some(p) = phases.iter().find(|p| p.count == 0) {
        return Err(Error::config(format!("phase {:?} streams no samples", p.generator_name)));
    }
    Ok(phases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAccuracy {
    pub generator_name: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScenarioEvent {
    Bootstrap {
        version: u64,
        task: String,
        train_samples: usize,
    },
    PhaseStart {
        phase: usize,
        generator_name: String,
        count: usize,
        label_available: bool,
    },
    /// Serving summary for one closed window.
    Served {
        window_id: u64,
        phase: usize,
        served: usize,
        accuracy: f64,
        active_version: u64,
    },
    Drift(DriftReport),
    Alert {
        window_id: u64,
        #[serde(flatten)]
        outcome: AlertOutcome,
    },
    Register {
        version: u64,
        parent_version: Option<u64>,
        trained_on: Vec<String>,
        checksum: String,
    },
    Activate {
        version: u64,
    },
    Evaluation {
        phase: usize,
        when: String,
        active_version: u64,
        accuracies: Vec<PhaseAccuracy>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub generator_name: String,
    /// Active model on this phase's held-out set when the phase began.
    pub accuracy_at_start: f64,
    pub accuracy_at_end: f64,
    pub alerts: usize,
    pub retrains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub phases: Vec<PhaseSummary>,
    /// Final active model on every phase's held-out set, in phase order.
    pub final_accuracies: Vec<PhaseAccuracy>,
    pub versions: usize,
    pub active_version: u64,
    pub pending: usize,
}

/// Held-out samples per phase for before/after accuracy.
pub const EVAL_COUNT: usize = 400;

const STREAM_SEED: u64 = 0x5EED_0000;
const EVAL_SEED: u64 = 0xE7A1_0000;
const BOOT_SEED: u64 = 0xB007_0000;

struct Logger<'a> {
    out: &'a mut dyn Write,
}

impl Logger<'_> {
    fn emit(&mut self, ev: &ScenarioEvent) -> Result<()> {
        let line = serde_json::to_string(ev)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io("<scenario log>", e))
    }
}

fn register_events(pipe: &Pipeline, from: usize, log: &mut Logger<'_>) -> Result<()> {
    let events: Vec<ScenarioEvent> = pipe.registry().entries()[from..]
        .iter()
        .map(|e| ScenarioEvent::Register {
            version: e.version,
            parent_version: e.metadata.parent_version,
            trained_on: e.metadata.trained_on.clone(),
            checksum: e.checksum.clone(),
        })
        .collect();
    events.iter().try_for_each(|ev| log.emit(ev))
}

/// Runs `phases` through `pipe`. With an empty registry the first phase's
/// source is used to bootstrap the initial model. Labels for flagged
/// windows come from the generating source when the phase allows it.
pub fn run_scenario(
    pipe: &Pipeline,
    phases: &[ScenarioPhase],
    generators: &[GeneratorSpec],
    run: &RunConfig,
    log: &mut dyn Write,
) -> Result<ScenarioReport> {
    let mut log = Logger { out: log };
    let gens: Vec<&GeneratorSpec> = phases
        .iter()
        .map(|p| {
            generators
                .iter()
                .find(|g| g.name == p.generator_name)
                .ok_or_else(|| Error::config(format!("scenario names unknown generator {:?}", p.generator_name)))
        })
        .collect::<Result<_>>()?;
    let eval_sets: Vec<Vec<Sample>> = gens
        .iter()
        .enumerate()
        .map(|(i, g)| synth_stream(g, EVAL_COUNT, mix_seed(run.seed, EVAL_SEED + i as u64)))
        .collect::<Result<_>>()?;

    if pipe.registry().active_version().is_none() {
        let task = make_task(gens[0], SplitSizes::default(), mix_seed(run.seed, BOOT_SEED))?;
        let seen = pipe.registry().len();
        let version = pipe.bootstrap(&task)?;
        register_events(pipe, seen, &mut log)?;
        log.emit(&ScenarioEvent::Bootstrap {
            version,
            task: task.name.clone(),
            train_samples: task.train.len(),
        })?;
        log.emit(&ScenarioEvent::Activate { version })?;
    }

    let evaluate = |upto: usize| -> Result<Vec<PhaseAccuracy>> {
        (0..upto)
            .map(|i| {
                Ok(PhaseAccuracy {
                    generator_name: gens[i].name.clone(),
                    accuracy: pipe.accuracy_on(&eval_sets[i])?,
                })
            })
            .collect()
    };
    let active = || pipe.registry().active_version().unwrap_or(0);

    let mut summaries = Vec::with_capacity(phases.len());
    let mut truth: Vec<u8> = Vec::new();
    let mut hits = 0usize;
    for (pi, (phase, gen)) in phases.iter().zip(&gens).enumerate() {
        log.emit(&ScenarioEvent::PhaseStart {
            phase: pi,
            generator_name: gen.name.clone(),
            count: phase.count,
            label_available: phase.label_available,
        })?;
        let start = evaluate(pi + 1)?;
        log.emit(&ScenarioEvent::Evaluation {
            phase: pi,
            when: "phase_start".into(),
            active_version: active(),
            accuracies: start.clone(),
        })?;
        let mut summary = PhaseSummary {
            generator_name: gen.name.clone(),
            accuracy_at_start: start[pi].accuracy,
            accuracy_at_end: 0.0,
            alerts: 0,
            retrains: 0,
        };

        let stream = synth_stream(gen, phase.count, mix_seed(run.seed, STREAM_SEED + pi as u64))?;
        for sample in &stream {
            let p = pipe.predict(&sample.patch)?;
            truth.push(sample.label);
            hits += usize::from(p.label == sample.label);
            let Some(report) = pipe.check_drift()? else { continue };
            let window_truth: Vec<u8> = truth.drain(..).collect();
            log.emit(&ScenarioEvent::Served {
                window_id: report.window_id,
                phase: pi,
                served: window_truth.len(),
                accuracy: hits as f64 / window_truth.len() as f64,
                active_version: p.version,
            })?;
            hits = 0;
            let (alert, id) = (report.alert, report.window_id);
            log.emit(&ScenarioEvent::Drift(report))?;
            if !alert {
                continue;
            }
            summary.alerts += 1;
            let seen = pipe.registry().len();
            let labels = phase.label_available.then_some(window_truth.as_slice());
            let outcome = pipe.on_alert(id, labels)?;
            register_events(pipe, seen, &mut log)?;
            let activated = match outcome {
                AlertOutcome::Retrained { version, .. } => Some(version),
                _ => None,
            };
            log.emit(&ScenarioEvent::Alert { window_id: id, outcome })?;
            if let Some(version) = activated {
                summary.retrains += 1;
                log.emit(&ScenarioEvent::Activate { version })?;
                log.emit(&ScenarioEvent::Evaluation {
                    phase: pi,
                    when: "after_retrain".into(),
                    active_version: version,
                    accuracies: evaluate(pi + 1)?,
                })?;
            }
        }

        let end = evaluate(pi + 1)?;
        summary.accuracy_at_end = end[pi].accuracy;
        log.emit(&ScenarioEvent::Evaluation {
            phase: pi,
            when: "phase_end".into(),
            active_version: active(),
            accuracies: end,
        })?;
        summaries.push(summary);
    }

    Ok(ScenarioReport {
        phases: summaries,
        final_accuracies: evaluate(phases.len())?,
        versions: pipe.registry().len(),
        active_version: active(),
        pending: pipe.pending_len(),
    })
}
