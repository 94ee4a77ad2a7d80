//! Streaming class-incremental engine.
//!
//! Every step runs each registered domain model on the incoming sample and
//! keeps a sliding window of (greedy choice, lowest OOD score). A shift is
//! declared when the window is full and enough of it looks OOD to every
//! model. The oracle then either confirms (the current task has no model),
//! which starts collecting a labeled buffer that ends in NAS, training and
//! registration of a new model, or declines, which is logged as a misfire.
//!
//! Registered models are never touched again. Engine state does not depend
//! on the routing mode, so a single pass yields the oracle, slow and instant
//! routing decisions side by side.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptor::{train_adaptor_set, TrainConfig};
use crate::encoder::{FeatureDataset, Scenario, StreamEvent, TapFeatures};
use crate::error::{EarError, Result};
use crate::hdc::{BinarizeMode, TargetCodebook};
use crate::metrics::MovingAverage;
use crate::reconfigurator::{DomainModel, Inference};
use crate::rng;
use crate::zsnas::{nas_search, CandidateArchitecture, NasConfig};

pub const EVENT_LOG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    Oracle,
    Slow,
    Instant,
}

impl RoutingMode {
    pub const ALL: [RoutingMode; 3] = [RoutingMode::Oracle, RoutingMode::Slow, RoutingMode::Instant];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub window: usize,
    pub trigger_fraction: f64,
    pub ood_threshold: f64,
    pub buffer: usize,
    pub routing: RoutingMode,
    pub tau_pi: f64,
    pub binarize: BinarizeMode,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            window: 50,
            trigger_fraction: 0.6,
            ood_threshold: 0.7,
            buffer: 1000,
            routing: RoutingMode::Slow,
            tau_pi: 0.7,
            binarize: BinarizeMode::Sample,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(EarError::Config("stream.window must be positive".into()));
        }
        if !(self.trigger_fraction > 0.0 && self.trigger_fraction <= 1.0) {
            return Err(EarError::Config("stream.trigger_fraction must be in (0, 1]".into()));
        }
        if !(self.ood_threshold > 0.0 && self.ood_threshold < 1.0) {
            return Err(EarError::Config("stream.ood_threshold must be in (0, 1)".into()));
        }
        if !(self.tau_pi > 0.0 && self.tau_pi < 1.0) {
            return Err(EarError::Config("hd.tau_pi must be in (0, 1)".into()));
        }
        if self.buffer < 20 {
            return Err(EarError::Config("stream.buffer must hold at least 20 samples".into()));
        }
        Ok(())
    }
}

/// Everything the engine needs besides the events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EngineConfig {
    pub stream: StreamConfig,
    pub train: TrainConfig,
    pub nas: NasConfig,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.train.validate()?;
        self.nas.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    /// Greedy (lowest-score) model, `None` while no model exists.
    pub model: Option<usize>,
    /// Lowest calibrated OOD score over all models; 1 without models.
    pub score: f64,
}

/// Ring buffer of the last `W` routing observations.
#[derive(Debug, Clone)]
pub struct RoutingState {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
}

impl RoutingState {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(EarError::Argument("window must be positive".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, e: WindowEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }
}

/// Outcome of greedy routing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstantRoute {
    pub model: usize,
    pub score: f64,
    /// Every model considers the sample OOD; `model` is a best effort.
    pub ood_everywhere: bool,
}

/// Lowest score wins, ties to the lowest id.
pub fn route_instant(scores: &[f64], ood_threshold: f64) -> Result<InstantRoute> {
    if scores.is_empty() {
        return Err(EarError::State("no registered models to route to".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(InstantRoute {
        model: best,
        score: scores[best],
        ood_everywhere: scores[best] > ood_threshold,
    })
}

/// Majority of the greedy choices in the window. Vote ties go to the model
/// with the lower mean score over the entries that voted for it, then to
/// the lower id. `None` if the window holds no vote.
pub fn route_slow(state: &RoutingState) -> Option<usize> {
    let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for e in state.entries() {
        if let Some(m) = e.model {
            let t = tally.entry(m).or_default();
            t.0 += 1;
            t.1 += e.score;
        }
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (&m, &(votes, sum)) in &tally {
        let mean = sum / votes as f64;
        let better = match best {
            None => true,
            Some((_, bv, bm)) => votes > bv || (votes == bv && mean < bm),
        };
        if better {
            best = Some((m, votes, mean));
        }
    }
    best.map(|(m, _, _)| m)
}

/// Full window and at least `trigger_fraction` of it scored `>= ood_threshold`.
pub fn detect_shift(state: &RoutingState, trigger_fraction: f64, ood_threshold: f64) -> bool {
    if !state.is_full() {
        return false;
    }
    let high = state.entries().filter(|e| e.score >= ood_threshold).count();
    high as f64 / state.capacity() as f64 >= trigger_fraction
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Normal,
    Collecting,
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    None,
    TaskChange,
    Trigger,
    Misfire,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub model: Option<usize>,
    pub predicted: Option<u32>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Evaluator-only ground truth.
    pub true_task: u32,
    pub true_label: u32,
    pub chosen_model: Option<usize>,
    pub predicted_class: Option<u32>,
    pub correct: bool,
    /// Score of the chosen model.
    pub ood_score: Option<f64>,
    pub min_ood_score: f64,
    pub ood_everywhere: bool,
    pub phase: Phase,
    pub marker: Marker,
    pub moving_accuracy: f64,
    pub oracle: ModeDecision,
    pub slow: ModeDecision,
    pub instant: ModeDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StepRecord {
    pub fn decision(&self, mode: RoutingMode) -> &ModeDecision {
        match mode {
            RoutingMode::Oracle => &self.oracle,
            RoutingMode::Slow => &self.slow,
            RoutingMode::Instant => &self.instant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthStatus {
    Registered,
    Aborted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub growth_index: usize,
    pub trigger_step: usize,
    pub end_step: usize,
    pub task: u32,
    pub status: GrowthStatus,
    pub model_id: Option<usize>,
    pub candidate: Option<String>,
    pub nas_score: Option<f64>,
    pub adaptors: usize,
    pub parameters: usize,
    pub dim: usize,
    pub train_accuracy: Option<f64>,
    /// Test accuracy of the new model on its task, measured at registration.
    pub registration_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub accuracy: f64,
    /// Ascending by task.
    pub per_task: Vec<TaskAccuracy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub routing: RoutingMode,
    pub steps: usize,
    /// Steps outside collection and training, the ones accuracy counts.
    pub counted_steps: usize,
    pub accuracy: f64,
    pub oracle: ModeSummary,
    pub slow: ModeSummary,
    pub instant: ModeSummary,
    pub triggers: usize,
    pub misfires: usize,
    pub growths: usize,
    pub aborted_collections: usize,
    pub failed_growths: usize,
    pub models: usize,
    /// Per model: test accuracy at registration and after the full stream.
    pub forgetting: Vec<ForgettingCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingCheck {
    pub model_id: usize,
    pub task: u32,
    pub at_registration: f64,
    pub at_end: f64,
}

#[derive(Debug, Clone)]
pub struct StreamReport {
    pub steps: Vec<StepRecord>,
    pub growths: Vec<GrowthRecord>,
    pub summary: StreamSummary,
    pub models: Vec<DomainModel>,
    /// Task each model was grown for, as confirmed by the oracle.
    pub model_tasks: Vec<u32>,
}

/// Result of growing one model from a labeled buffer.
#[derive(Debug, Clone)]
pub struct Grown {
    pub model: DomainModel,
    pub candidate: String,
    pub nas_score: f64,
    pub train_accuracy: f64,
}

/// NAS over the buffer followed by [`fit_candidate`]. `model_id` becomes
/// the model's domain id.
pub fn grow_domain_model(
    buffer: &FeatureDataset,
    model_id: usize,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<Grown> {
    let classes = buffer.present_classes();
    if classes.len() < 2 {
        return Err(EarError::Growth(format!(
            "buffer holds {} class(es), need at least 2",
            classes.len()
        )));
    }
    let nas = nas_search(buffer, classes.len(), &cfg.nas, rng::derive_seed(seed, &[1]))?;
    let (model, train_accuracy) = fit_candidate(buffer, &nas.best, model_id, cfg, seed)?;
    Ok(Grown {
        model,
        candidate: nas.best.describe(),
        nas_score: nas.breakdown.total,
        train_accuracy,
    })
}

/// Trains `candidate` on `data`, builds prototypes and calibrates. Returns
/// the model and its accuracy on `data`.
pub fn fit_candidate(
    data: &FeatureDataset,
    candidate: &CandidateArchitecture,
    model_id: usize,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<(DomainModel, f64)> {
    let classes = data.present_classes();
    let specs = candidate.specs();
    let codebook = TargetCodebook::generate(classes.len(), specs.len(), rng::derive_seed(seed, &[2]))?;
    let train_cfg = TrainConfig {
        seed: rng::derive_seed(seed, &[3]),
        ..cfg.train.clone()
    };
    let trained = train_adaptor_set(&specs, data, &codebook, &classes, &train_cfg)?;
    let mut model = DomainModel::new(model_id as u32, trained.adaptors, codebook, classes, cfg.stream.tau_pi)?;
    model.set_binarize_mode(cfg.stream.binarize);
    let model = model.fit(data, rng::derive_seed(seed, &[4]))?;
    let train_accuracy = model.accuracy(data, rng::derive_seed(seed, &[5]))?;
    Ok((model, train_accuracy))
}

/// Seed for the binarization draws of `model` at `step`; shared by every
/// routing mode so they all see the same scores.
pub fn inference_seed(seed: u64, step: usize, model: usize) -> u64 {
    rng::derive_seed(seed, &[0x57E9, step as u64, model as u64])
}

/// Seed used to evaluate a model on its task's test set.
pub fn evaluation_seed(seed: u64, model: usize) -> u64 {
    rng::derive_seed(seed, &[0xE7A1, model as u64])
}

struct Collection {
    task: u32,
    trigger_step: usize,
    samples: Vec<TapFeatures>,
    labels: Vec<u32>,
}

fn decide(model: Option<usize>, infs: &[Option<Inference>], truth: u32) -> ModeDecision {
    let predicted = model.and_then(|m| infs[m].map(|i| i.classification.label));
    ModeDecision {
        model,
        predicted,
        correct: predicted == Some(truth),
    }
}

fn summarize_mode(steps: &[StepRecord], mode: RoutingMode) -> ModeSummary {
    let counted: Vec<&StepRecord> = steps.iter().filter(|s| s.phase == Phase::Normal).collect();
    let correct = counted.iter().filter(|s| s.decision(mode).correct).count();
    let keys: Vec<u32> = counted.iter().map(|s| s.true_task).collect();
    let flags: Vec<bool> = counted.iter().map(|s| s.decision(mode).correct).collect();
    ModeSummary {
        accuracy: if counted.is_empty() {
            0.0
        } else {
            correct as f64 / counted.len() as f64
        },
        per_task: crate::metrics::grouped_accuracy(&keys, &flags)
            .into_iter()
            .map(|(task, accuracy)| TaskAccuracy { task, accuracy })
            .collect(),
    }
}

/// Runs the engine over `events`. `test_sets[t]` is the held-out set of task
/// `t`, used only to record each model's accuracy at registration and at the
/// end of the stream.
pub fn run_stream(
    events: &[StreamEvent],
    tap_dims: &[usize],
    num_classes: u32,
    test_sets: &[FeatureDataset],
    cfg: &EngineConfig,
    seed: u64,
) -> Result<StreamReport> {
    cfg.validate()?;
    let sc = &cfg.stream;
    let mut models: Vec<DomainModel> = Vec::new();
    let mut model_tasks: Vec<u32> = Vec::new();
    let mut task_model: HashMap<u32, usize> = HashMap::new();
    let mut registration_acc: Vec<f64> = Vec::new();
    let mut window = RoutingState::new(sc.window)?;
    let mut moving = MovingAverage::new(sc.window)?;
    let mut collection: Option<Collection> = None;
    let mut steps = Vec::with_capacity(events.len());
    let mut growths: Vec<GrowthRecord> = Vec::new();
    let mut prev_task: Option<u32> = None;

    for (step, ev) in events.iter().enumerate() {
        let truth = ev.truth();
        let mut marker = match prev_task {
            Some(t) if t != truth.task => Marker::TaskChange,
            _ => Marker::None,
        };
        prev_task = Some(truth.task);

        let mut error = None;
        let infs: Vec<Option<Inference>> = models
            .iter()
            .enumerate()
            .map(|(id, m)| {
                match m.infer(ev.features(), &mut rng::seeded(inference_seed(seed, step, id))) {
                    Ok(i) => Some(i),
                    Err(e) => {
                        log::warn!("step {step}: model {id} failed: {e}");
                        error = Some(e.to_string());
                        None
                    }
                }
            })
            .collect();
        // a failed model is as OOD as it gets
        let scores: Vec<f64> = infs.iter().map(|i| i.map_or(1.0, |i| i.ood_score)).collect();
        let instant = route_instant(&scores, sc.ood_threshold).ok();
        window.push(WindowEntry {
            model: instant.map(|r| r.model),
            score: instant.map_or(1.0, |r| r.score),
        });
        let slow = route_slow(&window).or(instant.map(|r| r.model));
        let oracle = task_model
            .get(&truth.task)
            .copied()
            .or(instant.map(|r| r.model));

        let decisions = [
            decide(oracle, &infs, truth.label),
            decide(slow, &infs, truth.label),
            decide(instant.map(|r| r.model), &infs, truth.label),
        ];
        let primary = decisions[sc.routing.index()];

        let mut phase = Phase::Normal;
        let mut reset = false;
        if let Some(col) = collection.as_mut() {
            phase = Phase::Collecting;
            if truth.task != col.task {
                log::warn!(
                    "step {step}: task changed during collection for task {}, buffer dropped",
                    col.task
                );
                growths.push(GrowthRecord {
                    growth_index: growths.len(),
                    trigger_step: col.trigger_step,
                    end_step: step,
                    task: col.task,
                    status: GrowthStatus::Aborted,
                    model_id: None,
                    candidate: None,
                    nas_score: None,
                    adaptors: 0,
                    parameters: 0,
                    dim: 0,
                    train_accuracy: None,
                    registration_accuracy: None,
                    error: Some("task changed during collection".into()),
                });
                collection = None;
                window.clear();
            } else {
                // the oracle labels the buffer
                col.samples.push(ev.features().clone());
                col.labels.push(truth.label);
                if col.samples.len() == sc.buffer {
                    phase = Phase::Training;
                    let col = collection.take().expect("collection in progress");
                    let n = col.labels.len();
                    let growth_index = growths.len();
                    let model_id = models.len();
                    let outcome = FeatureDataset::new(
                        col.samples,
                        col.labels,
                        vec![col.task; n],
                        tap_dims.to_vec(),
                        num_classes,
                    )
                    .and_then(|buf| {
                        grow_domain_model(
                            &buf,
                            model_id,
                            cfg,
                            rng::derive_seed(seed, &[0x6120, growth_index as u64]),
                        )
                    });
                    let mut record = GrowthRecord {
                        growth_index,
                        trigger_step: col.trigger_step,
                        end_step: step,
                        task: col.task,
                        status: GrowthStatus::Failed,
                        model_id: None,
                        candidate: None,
                        nas_score: None,
                        adaptors: 0,
                        parameters: 0,
                        dim: 0,
                        train_accuracy: None,
                        registration_accuracy: None,
                        error: None,
                    };
                    match outcome {
                        Ok(g) => {
                            let acc = match test_sets.get(col.task as usize) {
                                Some(ts) => Some(g.model.accuracy(ts, evaluation_seed(seed, model_id))?),
                                None => None,
                            };
                            record.status = GrowthStatus::Registered;
                            record.model_id = Some(model_id);
                            record.candidate = Some(g.candidate);
                            record.nas_score = Some(g.nas_score);
                            record.adaptors = g.model.adaptors().len();
                            record.parameters = g.model.num_params();
                            record.dim = g.model.dim();
                            record.train_accuracy = Some(g.train_accuracy);
                            record.registration_accuracy = acc;
                            log::info!(
                                "step {step}: registered model {model_id} for task {} ({})",
                                col.task,
                                record.candidate.as_deref().unwrap_or("")
                            );
                            registration_acc.push(acc.unwrap_or(f64::NAN));
                            models.push(g.model);
                            model_tasks.push(col.task);
                            task_model.insert(col.task, model_id);
                        }
                        Err(e) => {
                            log::warn!("step {step}: growth for task {} failed: {e}", col.task);
                            record.error = Some(e.to_string());
                        }
                    }
                    growths.push(record);
                    window.clear();
                    reset = true;
                }
            }
        } else if detect_shift(&window, sc.trigger_fraction, sc.ood_threshold) {
            if task_model.contains_key(&truth.task) {
                marker = Marker::Misfire;
                log::info!("step {step}: misfire, task {} already has a model", truth.task);
                window.clear();
            } else {
                marker = Marker::Trigger;
                log::info!("step {step}: shift confirmed for task {}", truth.task);
                collection = Some(Collection {
                    task: truth.task,
                    trigger_step: step,
                    samples: Vec::with_capacity(sc.buffer),
                    labels: Vec::with_capacity(sc.buffer),
                });
            }
        }

        let moving_accuracy = moving.push(if primary.correct { 1.0 } else { 0.0 });
        if reset {
            moving.reset();
        }
        let chosen_score = primary.model.and_then(|m| infs[m].map(|i| i.ood_score));
        steps.push(StepRecord {
            step,
            true_task: truth.task,
            true_label: truth.label,
            chosen_model: primary.model,
            predicted_class: primary.predicted,
            correct: primary.correct,
            ood_score: chosen_score,
            min_ood_score: instant.map_or(1.0, |r| r.score),
            ood_everywhere: instant.is_none_or(|r| r.ood_everywhere),
            phase,
            marker,
            moving_accuracy,
            oracle: decisions[0],
            slow: decisions[1],
            instant: decisions[2],
            error,
        });
    }

    let mut forgetting = Vec::with_capacity(models.len());
    for (id, m) in models.iter().enumerate() {
        let task = model_tasks[id];
        let at_end = match test_sets.get(task as usize) {
            Some(ts) => m.accuracy(ts, evaluation_seed(seed, id))?,
            None => f64::NAN,
        };
        forgetting.push(ForgettingCheck {
            model_id: id,
            task,
            at_registration: registration_acc[id],
            at_end,
        });
    }

    let summary = summarize(&steps, &growths, sc.routing, forgetting);
    Ok(StreamReport {
        steps,
        growths,
        summary,
        models,
        model_tasks,
    })
}

/// Summary statistics of a finished stream. Only the forgetting checks need
/// the models themselves, so they are passed in.
pub fn summarize(
    steps: &[StepRecord],
    growths: &[GrowthRecord],
    routing: RoutingMode,
    forgetting: Vec<ForgettingCheck>,
) -> StreamSummary {
    let oracle = summarize_mode(steps, RoutingMode::Oracle);
    let slow = summarize_mode(steps, RoutingMode::Slow);
    let instant = summarize_mode(steps, RoutingMode::Instant);
    let accuracy = [&oracle, &slow, &instant][routing.index()].accuracy;
    let count_status = |s: GrowthStatus| growths.iter().filter(|g| g.status == s).count();
    StreamSummary {
        routing,
        steps: steps.len(),
        counted_steps: steps.iter().filter(|s| s.phase == Phase::Normal).count(),
        accuracy,
        oracle,
        slow,
        instant,
        triggers: steps.iter().filter(|s| s.marker == Marker::Trigger).count(),
        misfires: steps.iter().filter(|s| s.marker == Marker::Misfire).count(),
        growths: count_status(GrowthStatus::Registered),
        aborted_collections: count_status(GrowthStatus::Aborted),
        failed_growths: count_status(GrowthStatus::Failed),
        models: count_status(GrowthStatus::Registered),
        forgetting,
    }
}

/// Per-step moving accuracy of one routing mode, emptied after every
/// training step.
pub fn moving_accuracy(steps: &[StepRecord], mode: RoutingMode, window: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = steps
        .iter()
        .map(|s| if s.decision(mode).correct { 1.0 } else { 0.0 })
        .collect();
    let resets: Vec<bool> = (0..steps.len())
        .map(|i| i > 0 && steps[i - 1].phase == Phase::Training)
        .collect();
    crate::metrics::moving_average(&values, window, &resets)
}

/// [`run_stream`] over a synthetic scenario's events and test sets.
pub fn run_scenario(scenario: &Scenario, cfg: &EngineConfig, seed: u64) -> Result<StreamReport> {
    run_stream(
        scenario.events(),
        scenario.encoder().tap_dims(),
        scenario.config().total_classes() as u32,
        scenario.test_sets(),
        cfg,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub routing: RoutingMode,
}

/// One line of the JSON-lines event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogLine {
    Header(LogHeader),
    Step(StepRecord),
    Growth(GrowthRecord),
    Summary(StreamSummary),
}

pub fn write_event_log(path: impl AsRef<Path>, header: LogHeader, report: &StreamReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut line = |l: &LogLine| -> Result<()> {
        serde_json::to_writer(&mut w, l).map_err(|e| EarError::Malformed(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&LogLine::Header(header))?;
    for s in &report.steps {
        line(&LogLine::Step(s.clone()))?;
    }
    for g in &report.growths {
        line(&LogLine::Growth(g.clone()))?;
    }
    line(&LogLine::Summary(report.summary.clone()))?;
    w.flush()?;
    Ok(())
}

pub fn read_event_log(path: impl AsRef<Path>) -> Result<Vec<LogLine>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EarError::Malformed(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(entries: &[(Option<usize>, f64)], cap: usize) -> RoutingState {
        let mut s = RoutingState::new(cap).unwrap();
        for &(model, score) in entries {
            s.push(WindowEntry { model, score });
        }
        s
    }

    #[test]
    fn instant_examples() {
        assert_eq!(route_instant(&[0.1, 0.9], 0.7).unwrap().model, 0);
        let r = route_instant(&[0.8, 0.95], 0.7).unwrap();
        assert_eq!((r.model, r.ood_everywhere), (0, true));
        assert_eq!(route_instant(&[0.5, 0.5], 0.7).unwrap().model, 0);
        assert_eq!(route_instant(&[0.6, 0.2, 0.2], 0.7).unwrap().model, 1);
        assert!(matches!(route_instant(&[], 0.7), Err(EarError::State(_))));
    }

    #[test]
    fn slow_examples() {
        let mut e = vec![(Some(1), 0.3); 30];
        e.extend(vec![(Some(0), 0.1); 20]);
        assert_eq!(route_slow(&state(&e, 50)), Some(1));

        let mut e = vec![(Some(0), 0.2); 25];
        e.extend(vec![(Some(1), 0.4); 25]);
        assert_eq!(route_slow(&state(&e, 50)), Some(0));
        let mut e = vec![(Some(0), 0.4); 25];
        e.extend(vec![(Some(1), 0.2); 25]);
        assert_eq!(route_slow(&state(&e, 50)), Some(1));

        assert_eq!(route_slow(&state(&[], 50)), None);
        assert_eq!(route_slow(&state(&[(None, 1.0)], 50)), None);
    }

    #[test]
    fn detection_examples() {
        let mut e = vec![(Some(0), 0.9); 35];
        e.extend(vec![(Some(0), 0.1); 15]);
        assert!(detect_shift(&state(&e, 50), 0.6, 0.7));
        let mut e = vec![(Some(0), 0.9); 20];
        e.extend(vec![(Some(0), 0.1); 30]);
        assert!(!detect_shift(&state(&e, 50), 0.6, 0.7));
        assert!(!detect_shift(&state(&vec![(None, 1.0); 49], 50), 0.6, 0.7));
        // exactly at the threshold counts
        let mut e = vec![(Some(0), 0.7); 30];
        e.extend(vec![(Some(0), 0.0); 20]);
        assert!(detect_shift(&state(&e, 50), 0.6, 0.7));
    }

    #[test]
    fn window_is_bounded() {
        let s = state(&vec![(Some(0), 0.5); 80], 50);
        assert_eq!(s.len(), 50);
        assert!(s.is_full());
    }

    #[test]
    fn config_validation() {
        let bad = StreamConfig {
            trigger_fraction: 0.0,
            ..StreamConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = StreamConfig {
            ood_threshold: 1.0,
            ..StreamConfig::default()
        };
        assert!(bad.validate().is_err());
        StreamConfig::default().validate().unwrap();
    }
}
