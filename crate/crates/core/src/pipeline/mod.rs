//! In-process detection service: registry, serving, drift monitor and the
//! retrain loop that feeds flagged media back into continual training.
//!
//! All methods take `&self`. Predictions only touch the drift window; a
//! retrain reads the active version, trains without holding any lock and
//! then swaps the new version in under the registry write lock, so serving
//! continues on the old model until the switch.

pub mod drift;
pub mod registry;
pub mod scenario;

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::continual::{
    estimate_fisher, patch_inputs, train_task, Accumulation, AnchorStore, Strategy, TaskAnchor, Teacher,
};
use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::nn::{forward_batch, softmax_temp, Logits, ModelSpec, ParamVector};
use crate::taskgen::{mix_seed, Patch, Provenance, Sample, TaskDataset};

pub use drift::{drift_detect, extract_features, DriftReport, FeatureVector, ReferenceProfile};
pub use registry::{ModelRegistry, RegistryEntry, VersionMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window_size: usize,
    pub drift_threshold: f64,
    /// Labeled flagged samples to collect before a retrain.
    pub retrain_batch: usize,
    pub val_fraction: f64,
    /// Register retrained versions without activating them.
    pub approval_mode: bool,
    /// Never label flagged windows; they all go to the pending queue.
    pub pending_only: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_size: 200,
            drift_threshold: drift::DEFAULT_THRESHOLD,
            retrain_batch: 800,
            val_fraction: 0.2,
            approval_mode: false,
            pending_only: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < drift::MIN_WINDOW {
            return Err(Error::config(format!(
                "window size must be at least {}",
                drift::MIN_WINDOW
            )));
        }
        if !(self.drift_threshold > 0.0 && self.drift_threshold <= 1.0) {
            return Err(Error::config("drift threshold must lie in (0, 1]"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val fraction must lie in (0, 1)"));
        }
        if self.retrain_batch < 2 {
            return Err(Error::config("retrain batch must hold at least 2 samples"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    /// Probability of the fake class.
    pub score: f64,
    pub version: u64,
}

/// What became of a flagged window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AlertOutcome {
    Pending { queued: usize },
    Buffered { have: usize, need: usize },
    Retrained { version: u64, parent_version: u64, epochs: usize },
    AwaitingApproval { version: u64, parent_version: u64 },
}

#[derive(Debug, Clone)]
struct VersionState {
    profile: ReferenceProfile,
    anchors: AnchorStore,
}

#[derive(Debug, Default)]
struct Monitor {
    window: Vec<Patch>,
    next_window_id: u64,
    flagged: BTreeMap<u64, Vec<Patch>>,
    pending: Vec<(u64, Vec<Patch>)>,
    buffer: Vec<Sample>,
    buffer_sources: Vec<u64>,
}

pub struct Pipeline {
    spec: ModelSpec,
    run: RunConfig,
    strategy: Strategy,
    cfg: PipelineConfig,
    registry: RwLock<ModelRegistry>,
    monitor: Mutex<Monitor>,
    states: Mutex<BTreeMap<u64, VersionState>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

const BOOTSTRAP_STREAM: u64 = 0xB007;
const RETRAIN_STREAM: u64 = 0x5E7_0000;
const FISHER_STREAM: u64 = 0xF15_0000;

impl Pipeline {
    pub fn new(run: RunConfig, strategy: Strategy, cfg: PipelineConfig, registry: ModelRegistry) -> Result<Self> {
        run.validate()?;
        strategy.validate()?;
        cfg.validate()?;
        Ok(Pipeline {
            spec: run.model_spec(),
            run,
            strategy,
            cfg,
            registry: RwLock::new(registry),
            monitor: Mutex::new(Monitor::default()),
            states: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn registry(&self) -> RwLockReadGuard<'_, ModelRegistry> {
        self.registry.read().unwrap_or_else(|p| p.into_inner())
    }

    fn registry_mut(&self) -> RwLockWriteGuard<'_, ModelRegistry> {
        self.registry.write().unwrap_or_else(|p| p.into_inner())
    }

    fn anchor_mode(&self) -> Accumulation {
        match self.strategy {
            Strategy::Ewc(c) => c.accumulation,
            _ => Accumulation::PerTaskList,
        }
    }

    fn anchor_for(&self, params: &ParamVector, task: &TaskDataset, stream: u64) -> Result<Option<TaskAnchor>> {
        match self.strategy {
            Strategy::Ewc(cfg) => {
                let fisher = estimate_fisher(&self.spec, params, task, &cfg, &self.run, mix_seed(self.run.seed, stream))?;
                Ok(Some(TaskAnchor::new(params.clone(), fisher, task.name.clone())?))
            }
            _ => Ok(None),
        }
    }

    /// Trains the first model on `task`, registers and activates it, and
    /// builds the reference profile from its training split.
    pub fn bootstrap(&self, task: &TaskDataset) -> Result<u64> {
        let init = ParamVector::he_uniform(&self.spec, mix_seed(self.run.seed, BOOTSTRAP_STREAM));
        let (params, trace) = train_task(
            &self.spec,
            &init,
            task,
            &Strategy::Transfer,
            None,
            &[],
            &self.run,
            BOOTSTRAP_STREAM,
        )?;
        let mut anchors = AnchorStore::new(self.anchor_mode());
        if let Some(a) = self.anchor_for(&params, task, FISHER_STREAM)? {
            anchors.push(a)?;
        }
        let ckpt = Checkpoint::new(
            self.spec.clone(),
            params,
            Strategy::Transfer,
            self.run.seed,
            vec![task.name.clone()],
            trace,
        );
        let meta = VersionMetadata::now("transfer", vec![task.name.clone()], None);
        let mut reg = self.registry_mut();
        let version = reg.register(ckpt, meta)?;
        let profile = ReferenceProfile::from_patches(task.train.iter().map(|s| &s.patch), Some(version))?;
        lock(&self.states).insert(version, VersionState { profile, anchors });
        reg.activate(version)?;
        Ok(version)
    }

    /// Scores `patches` with the active model without touching the window.
    pub fn score(&self, patches: &[&Patch]) -> Result<Vec<Prediction>> {
        let (version, ckpt) = {
            let reg = self.registry();
            let e = reg.active()?;
            (e.version, e.checkpoint.clone())
        };
        let x = patch_inputs(patches, &self.run)?;
        let logits = forward_batch(&ckpt.spec, &ckpt.params, x.view())?;
        logits
            .rows()
            .into_iter()
            .map(|row| {
                let l = Logits([row[0], row[1]]);
                Ok(Prediction {
                    label: l.predicted_class(),
                    score: softmax_temp(&l, 1.0)?[1],
                    version,
                })
            })
            .collect()
    }

    /// Serves one patch and appends it to the current drift window.
    pub fn predict(&self, patch: &Patch) -> Result<Prediction> {
        let p = self.score(&[patch])?[0];
        lock(&self.monitor).window.push(patch.clone());
        Ok(p)
    }

    pub fn window_len(&self) -> usize {
        lock(&self.monitor).window.len()
    }

    pub fn pending_len(&self) -> usize {
        lock(&self.monitor).pending.len()
    }

    pub fn buffered_len(&self) -> usize {
        lock(&self.monitor).buffer.len()
    }

    pub fn profile(&self) -> Result<ReferenceProfile> {
        let v = self
            .registry()
            .active_version()
            .ok_or_else(|| Error::ServiceUnavailable("no active model version".into()))?;
        lock(&self.states)
            .get(&v)
            .map(|s| s.profile.clone())
            .ok_or_else(|| Error::NotFound(format!("reference profile for version {v}")))
    }

    /// Once the window is full, closes it and tests it against the active
    /// profile. Alerting windows are held for [`Pipeline::on_alert`].
    pub fn check_drift(&self) -> Result<Option<DriftReport>> {
        let window = {
            let mut m = lock(&self.monitor);
            if m.window.len() < self.cfg.window_size {
                return Ok(None);
            }
            let rest = m.window.split_off(self.cfg.window_size);
            std::mem::replace(&mut m.window, rest)
        };
        let profile = self.profile()?;
        let feats: Vec<FeatureVector> = window.iter().map(extract_features).collect();
        let mut m = lock(&self.monitor);
        let id = m.next_window_id;
        m.next_window_id += 1;
        let report = drift_detect(&profile, &feats, self.cfg.drift_threshold, id)?;
        if report.alert {
            m.flagged.insert(id, window);
        }
        Ok(Some(report))
    }

    /// Handles a flagged window. `labels` come from the forensic review; if
    /// absent (or in pending-only mode) the window waits in the pending
    /// queue. Labeled windows accumulate until a retrain batch is full, then
    /// the active model is retrained on them as one new task.
    pub fn on_alert(&self, window_id: u64, labels: Option<&[u8]>) -> Result<AlertOutcome> {
        let mut m = lock(&self.monitor);
        let window = m
            .flagged
            .remove(&window_id)
            .ok_or_else(|| Error::NotFound(format!("flagged window {window_id}")))?;
        let labels = match labels {
            Some(l) if !self.cfg.pending_only => l,
            _ => {
                m.pending.push((window_id, window));
                return Ok(AlertOutcome::Pending { queued: m.pending.len() });
            }
        };
        if labels.len() != window.len() || labels.iter().any(|&l| l > 1) {
            m.flagged.insert(window_id, window);
            return Err(Error::Validation(format!(
                "window {window_id} needs {} binary labels",
                self.cfg.window_size
            )));
        }
        m.buffer
            .extend(window.into_iter().zip(labels).map(|(patch, &label)| Sample { patch, label }));
        m.buffer_sources.push(window_id);
        if m.buffer.len() < self.cfg.retrain_batch {
            return Ok(AlertOutcome::Buffered {
                have: m.buffer.len(),
                need: self.cfg.retrain_batch,
            });
        }
        let batch = std::mem::take(&mut m.buffer);
        let sources = std::mem::take(&mut m.buffer_sources);
        drop(m);
        self.retrain(batch, &sources)
    }

    fn retrain(&self, mut batch: Vec<Sample>, sources: &[u64]) -> Result<AlertOutcome> {
        let (parent, parent_ckpt, next_version) = {
            let reg = self.registry();
            let e = reg.active()?;
            (e.version, e.checkpoint.clone(), reg.len() as u64 + 1)
        };
        let parent_anchors = lock(&self.states)
            .get(&parent)
            .map(|s| s.anchors.clone())
            .unwrap_or_else(|| AnchorStore::new(self.anchor_mode()));

        batch.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.run.seed, RETRAIN_STREAM + next_version)));
        let n_val = ((batch.len() as f64 * self.cfg.val_fraction).round() as usize).clamp(1, batch.len() - 1);
        let train = batch.split_off(n_val);
        let name = format!("windows-{}", sources.iter().map(u64::to_string).collect::<Vec<_>>().join("+"));
        let task = TaskDataset {
            name: name.clone(),
            train,
            val: batch,
            test: Vec::new(),
            provenance: Provenance::External,
        };

        let teacher = Teacher {
            spec: &parent_ckpt.spec,
            params: &parent_ckpt.params,
        };
        let (params, trace) = train_task(
            &self.spec,
            &parent_ckpt.params,
            &task,
            &self.strategy,
            Some(teacher),
            &parent_anchors.anchors,
            &self.run,
            RETRAIN_STREAM + next_version,
        )?;
        let epochs = trace.epochs.len();
        let mut anchors = parent_anchors;
        if let Some(a) = self.anchor_for(&params, &task, FISHER_STREAM + next_version)? {
            anchors.push(a)?;
        }
        let mut trained_on = parent_ckpt.trained_on.clone();
        trained_on.push(name);
        let profile = ReferenceProfile::from_patches(
            task.train.iter().chain(&task.val).map(|s| &s.patch),
            Some(next_version),
        )?;
        let ckpt = Checkpoint::new(
            self.spec.clone(),
            params,
            self.strategy,
            self.run.seed,
            trained_on.clone(),
            trace,
        );
        let meta = VersionMetadata::now(self.strategy.name(), trained_on, Some(parent));

        let mut reg = self.registry_mut();
        let version = reg.register(ckpt, meta)?;
        lock(&self.states).insert(version, VersionState { profile, anchors });
        if self.cfg.approval_mode {
            return Ok(AlertOutcome::AwaitingApproval {
                version,
                parent_version: parent,
            });
        }
        reg.activate(version)?;
        Ok(AlertOutcome::Retrained {
            version,
            parent_version: parent,
            epochs,
        })
    }

    /// Activates a version; its reference profile comes with it.
    pub fn activate(&self, version: u64) -> Result<()> {
        if !lock(&self.states).contains_key(&version) {
            self.registry().entry(version)?;
            return Err(Error::NotFound(format!("pipeline state for version {version}")));
        }
        self.registry_mut().activate(version)
    }

    pub fn rollback(&self, version: u64) -> Result<()> {
        self.activate(version)
    }

    /// Accuracy of the active model on labeled samples.
    pub fn accuracy_on(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::config("cannot score an empty sample set"));
        }
        let patches: Vec<&Patch> = samples.iter().map(|s| &s.patch).collect();
        let preds = self.score(&patches)?;
        let hits = preds.iter().zip(samples).filter(|(p, s)| p.label == s.label).count();
        Ok(hits as f64 / samples.len() as f64)
    }
}
