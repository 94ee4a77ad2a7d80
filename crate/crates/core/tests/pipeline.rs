use ear_core::adaptor::TrainConfig;
use ear_core::continual::{
    read_event_log, run_scenario, summarize, write_event_log, EngineConfig, LogHeader, LogLine, RoutingMode,
    StreamReport, EVENT_LOG_SCHEMA,
};
use ear_core::earm::{decode_model, encode_model};
use ear_core::encoder::{make_synthetic_scenario, Scenario, ScenarioConfig};
use ear_core::rng;
use ear_core::zsnas::NasConfig;

fn small_scenario(seed: u64) -> Scenario {
    let cfg = ScenarioConfig {
        num_tasks: 2,
        classes_per_task: 4,
        appearances: 2,
        segment_length: 1200,
        test_per_class: 25,
        ..ScenarioConfig::default()
    };
    make_synthetic_scenario(cfg, seed).unwrap()
}

fn quick_engine() -> EngineConfig {
    EngineConfig {
        train: TrainConfig {
            lr: 5e-3,
            epochs: 15,
            ..TrainConfig::default()
        },
        nas: NasConfig {
            budget: 10,
            warmup: 4,
            ..NasConfig::default()
        },
        ..EngineConfig::default()
    }
}

fn run(seed: u64) -> (Scenario, StreamReport) {
    let sc = small_scenario(seed);
    let report = run_scenario(&sc, &quick_engine(), seed).unwrap();
    (sc, report)
}

#[test]
fn stream_is_reproducible_and_its_log_round_trips() {
    let (sc, a) = run(3);
    let (_, b) = run(3);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.growths, b.growths);
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.summary.steps, sc.events().len());
    assert!(a.summary.models >= 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let header = LogHeader {
        schema_version: EVENT_LOG_SCHEMA,
        config_hash: "test".into(),
        seed: 3,
        routing: RoutingMode::Slow,
    };
    write_event_log(&path, header.clone(), &a).unwrap();
    let lines = read_event_log(&path).unwrap();
    assert_eq!(lines.first(), Some(&LogLine::Header(header)));
    let mut steps = Vec::new();
    let mut growths = Vec::new();
    let mut logged = None;
    for l in lines {
        match l {
            LogLine::Step(s) => steps.push(s),
            LogLine::Growth(g) => growths.push(g),
            LogLine::Summary(s) => logged = Some(s),
            LogLine::Header(_) => {}
        }
    }
    let logged = logged.expect("summary line");
    assert_eq!(steps, a.steps);
    assert_eq!(growths, a.growths);
    assert_eq!(summarize(&steps, &growths, RoutingMode::Slow, logged.forgetting.clone()), logged);
}

#[test]
fn registered_models_survive_serialization() {
    let (sc, report) = run(5);
    assert!(!report.models.is_empty());
    for (model, &task) in report.models.iter().zip(&report.model_tasks) {
        let bytes = encode_model(model).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back).unwrap(), bytes);
        let test = sc.test_set(task as usize).unwrap();
        let (mut r1, mut r2) = (rng::seeded(1), rng::seeded(1));
        for x in test.samples() {
            assert_eq!(model.infer(x, &mut r1).unwrap(), back.infer(x, &mut r2).unwrap());
        }
    }
}

#[test]
fn different_seeds_give_different_streams() {
    let a = small_scenario(1);
    let b = small_scenario(2);
    let first = |s: &Scenario| s.events()[0].features().taps()[0].clone();
    assert_ne!(first(&a), first(&b));
}
