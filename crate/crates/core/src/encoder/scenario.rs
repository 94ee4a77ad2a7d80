//! Seeded class-incremental scenarios for the synthetic encoder.
//!
//! Raw inputs of task `t`, class `c` are Gaussian around
//! `class_spread * w_c + separation * (u_t + z_tc / 2)`, where `w_c` is a
//! class template shared by all tasks, `u_t` a task offset and `z_tc` a
//! per-task perturbation. Raw inputs are divided by their expected per-coordinate
//! standard deviation before encoding. Labels are global:
//! `t * classes_per_task + c`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, FeatureDataset, SyntheticEncoder, TapFeatures};
use crate::error::{EarError, Result};
use crate::rng::{self, EarRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    /// How many times each task appears in the curriculum.
    pub appearances: usize,
    pub segment_length: usize,
    pub separation: f64,
    pub class_spread: f64,
    pub noise: f64,
    pub test_per_class: usize,
    pub encoder: EncoderConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_tasks: 6,
            classes_per_task: 10,
            appearances: 2,
            segment_length: 2000,
            separation: 2.5,
            class_spread: 1.0,
            noise: 0.35,
            test_per_class: 50,
            encoder: EncoderConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(EarError::Config("scenario needs at least one task".into()));
        }
        if self.classes_per_task < 2 {
            return Err(EarError::Config("each task needs at least two classes".into()));
        }
        if self.appearances == 0 || self.segment_length == 0 {
            return Err(EarError::Config(
                "appearances and segment_length must be positive".into(),
            ));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(EarError::Config(format!(
                "separation must be finite and positive, got {}",
                self.separation
            )));
        }
        if !(self.class_spread.is_finite() && self.class_spread > 0.0)
            || !(self.noise.is_finite() && self.noise >= 0.0)
        {
            return Err(EarError::Config("class_spread must be positive, noise non-negative".into()));
        }
        self.encoder.validate()
    }

    pub fn total_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }
}

/// Hidden truth attached to a stream event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: u32,
    pub task: u32,
}

/// One timestep of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    features: TapFeatures,
    truth: GroundTruth,
}

impl StreamEvent {
    pub fn new(features: TapFeatures, truth: GroundTruth) -> Self {
        Self { features, truth }
    }

    pub fn features(&self) -> &TapFeatures {
        &self.features
    }

    /// For the oracle and the evaluator only; routing never calls this.
    pub fn truth(&self) -> GroundTruth {
        self.truth
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    config: ScenarioConfig,
    seed: u64,
    encoder: SyntheticEncoder,
    class_means: Vec<Vec<Vec<f64>>>,
    curriculum: Vec<usize>,
    events: Vec<StreamEvent>,
    test_sets: Vec<FeatureDataset>,
}

fn gaussian(rng: &mut EarRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Builds the encoder, task distributions, curriculum, stream and per-task
/// test sets. Pure function of `(config, seed)`.
pub fn make_synthetic_scenario(config: ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let encoder = SyntheticEncoder::new(config.encoder.clone(), rng::derive_seed(seed, &[0]))?;
    let d = config.encoder.input_dim;

    let mut mrng = rng::derived(seed, &[1]);
    let templates: Vec<Vec<f64>> = (0..config.classes_per_task)
        .map(|_| gaussian(&mut mrng, d))
        .collect();
    let mut class_means = Vec::with_capacity(config.num_tasks);
    for _ in 0..config.num_tasks {
        let offset = gaussian(&mut mrng, d);
        let means = templates
            .iter()
            .map(|w| {
                let z = gaussian(&mut mrng, d);
                (0..d)
                    .map(|i| {
                        config.class_spread * w[i] + config.separation * (offset[i] + 0.5 * z[i])
                    })
                    .collect()
            })
            .collect();
        class_means.push(means);
    }

    let mut curriculum: Vec<usize> = (0..config.num_tasks)
        .flat_map(|t| std::iter::repeat_n(t, config.appearances))
        .collect();
    curriculum.shuffle(&mut rng::derived(seed, &[2]));

    let mut scenario = Scenario {
        config,
        seed,
        encoder,
        class_means,
        curriculum,
        events: Vec::new(),
        test_sets: Vec::new(),
    };

    let mut srng = rng::derived(seed, &[3]);
    let k = scenario.config.classes_per_task;
    let mut events = Vec::with_capacity(scenario.curriculum.len() * scenario.config.segment_length);
    for &task in &scenario.curriculum {
        for _ in 0..scenario.config.segment_length {
            let class = srng.random_range(0..k);
            let features = scenario.draw(task, class, &mut srng)?;
            events.push(StreamEvent::new(
                features,
                GroundTruth {
                    label: scenario.global_label(task, class),
                    task: task as u32,
                },
            ));
        }
    }
    scenario.events = events;
    scenario.test_sets = (0..scenario.config.num_tasks)
        .map(|t| {
            scenario.sample_task(
                t,
                scenario.config.test_per_class,
                rng::derive_seed(seed, &[4, t as u64]),
            )
        })
        .collect::<Result<_>>()?;
    Ok(scenario)
}

impl Scenario {
    /// Expected per-coordinate standard deviation of raw inputs, used to
    /// keep the encoder's input scale independent of the separation.
    fn raw_scale(&self) -> f64 {
        let c = &self.config;
        (c.class_spread.powi(2) + 1.25 * c.separation.powi(2) + c.noise.powi(2)).sqrt()
    }

    fn draw(&self, task: usize, class: usize, rng: &mut EarRng) -> Result<TapFeatures> {
        let mean = &self.class_means[task][class];
        let scale = self.raw_scale();
        let raw: Vec<f64> = mean
            .iter()
            .map(|m| (m + self.config.noise * Distribution::<f64>::sample(&StandardNormal, rng)) / scale)
            .collect();
        self.encoder.encode(&raw)
    }

    pub fn global_label(&self, task: usize, class: usize) -> u32 {
        (task * self.config.classes_per_task + class) as u32
    }

    /// Draws a balanced labeled dataset for one task.
    pub fn sample_task(&self, task: usize, per_class: usize, seed: u64) -> Result<FeatureDataset> {
        if task >= self.config.num_tasks {
            return Err(EarError::Argument(format!("task {task} does not exist")));
        }
        let mut rng = rng::seeded(seed);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..per_class {
            for class in 0..self.config.classes_per_task {
                samples.push(self.draw(task, class, &mut rng)?);
                labels.push(self.global_label(task, class));
            }
        }
        let n = samples.len();
        FeatureDataset::new(
            samples,
            labels,
            vec![task as u32; n],
            self.encoder.tap_dims().to_vec(),
            self.config.total_classes() as u32,
        )
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encoder(&self) -> &SyntheticEncoder {
        &self.encoder
    }

    /// Task index of each segment, in stream order.
    pub fn curriculum(&self) -> &[usize] {
        &self.curriculum
    }

    pub fn events(&self) -> &[StreamEvent] {
        &self.events
    }

    pub fn test_set(&self, task: usize) -> Option<&FeatureDataset> {
        self.test_sets.get(task)
    }

    pub fn test_sets(&self) -> &[FeatureDataset] {
        &self.test_sets
    }

    pub fn class_means(&self, task: usize) -> &[Vec<f64>] {
        &self.class_means[task]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            segment_length: 20,
            test_per_class: 3,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn default_curriculum_length() {
        let cfg = ScenarioConfig::default();
        assert_eq!(
            cfg.num_tasks * cfg.appearances * cfg.segment_length,
            24_000
        );
        let s = make_synthetic_scenario(small(), 1).unwrap();
        assert_eq!(s.curriculum().len(), 12);
        assert_eq!(s.events().len(), 12 * 20);
        for t in 0..6 {
            assert_eq!(s.curriculum().iter().filter(|&&c| c == t).count(), 2);
        }
    }

    #[test]
    fn events_follow_curriculum() {
        let s = make_synthetic_scenario(small(), 2).unwrap();
        for (i, e) in s.events().iter().enumerate() {
            let task = s.curriculum()[i / 20];
            assert_eq!(e.truth().task as usize, task);
            assert_eq!(e.truth().label as usize / s.config().classes_per_task, task);
        }
    }

    #[test]
    fn tasks_share_class_templates() {
        // every task mean is template + separation * (...), so the class
        // structure is common and only the task component moves
        let near = make_synthetic_scenario(ScenarioConfig { separation: 1e-9, ..small() }, 3).unwrap();
        for t in 1..6 {
            for (a, b) in near.class_means(t).iter().zip(near.class_means(0)) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let a = make_synthetic_scenario(small(), 9).unwrap();
        let b = make_synthetic_scenario(small(), 9).unwrap();
        assert_eq!(a.events(), b.events());
        assert_eq!(a.test_sets(), b.test_sets());
        assert_eq!(a.curriculum(), b.curriculum());
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            ScenarioConfig { separation: -1.0, ..small() },
            ScenarioConfig { separation: 0.0, ..small() },
            ScenarioConfig { segment_length: 0, ..small() },
            ScenarioConfig { classes_per_task: 1, ..small() },
            ScenarioConfig { num_tasks: 0, ..small() },
        ] {
            assert!(matches!(make_synthetic_scenario(cfg, 0), Err(EarError::Config(_))));
        }
    }
}
