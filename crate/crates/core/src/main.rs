use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use ear_core::config::{RunConfig, CONFIG_ENV};
use ear_core::continual::{
    self, fit_candidate, grow_domain_model, moving_accuracy, read_event_log, run_stream, write_event_log,
    GrowthRecord, LogHeader, LogLine, RoutingMode, StepRecord, EVENT_LOG_SCHEMA,
};
use ear_core::earm::{load_model, save_model};
use ear_core::encoder::{
    load_feature_file, make_synthetic_scenario, write_feature_file, FeatureDataset, GroundTruth,
    StreamEvent,
};
use ear_core::metrics::{accuracy, auroc, macro_f1, optimal_f1_threshold, tnr_at_tpr, ScoredLabels};
use ear_core::rng;
use ear_core::zsnas::{nas_search, CandidateArchitecture};
use ear_core::EarError;

/// Version of every JSON/CSV artifact written by this tool.
const OUTPUT_SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "ear", version, about = "Hyperdimensional adaptors for continual learning with OOD detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration; falls back to $EAR_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the data and the model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for NAS candidate scoring.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario as EARF files.
    GenSynthetic,
    /// Train one domain model on a feature file.
    Train(TrainArgs),
    /// Evaluate a model on in-distribution and out-of-distribution sets.
    EvalOod(EvalArgs),
    /// Run the zero-shot architecture search alone.
    Nas(NasArgs),
    /// Run the continual-learning stream.
    Stream(StreamArgs),
    /// Re-derive summaries from an event log.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `nas`, `all` (every tap, one hidden layer of width_max) or an
    /// explicit list such as `t0:d2w16,t6:d0`.
    #[arg(long, default_value = "nas")]
    arch: String,
    #[arg(long, default_value_t = 0)]
    domain_id: u32,
    #[arg(long, default_value = "model.earm")]
    model_name: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    id: PathBuf,
    /// One or more OOD feature files.
    #[arg(long, required = true, num_args = 1..)]
    ood: Vec<PathBuf>,
}

#[derive(Args)]
struct NasArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    /// Directory written by gen-synthetic; without it the scenario is
    /// generated in memory from the config.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    routing: Option<Routing>,
    /// Also write every registered model as EARM.
    #[arg(long)]
    save_models: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Routing {
    Oracle,
    Slow,
    Instant,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    log: PathBuf,
    /// Moving-average window; defaults to the stream window of the config.
    #[arg(long)]
    window: Option<usize>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<EarError> for Failure {
    fn from(e: EarError) -> Self {
        let code = match &e {
            EarError::Config(_) => 2,
            EarError::Io(_) => 3,
            e if e.is_format_error() => 4,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

type CliResult<T> = Result<T, Failure>;

struct Context {
    config: RunConfig,
    hash: String,
    out_dir: PathBuf,
}

impl Context {
    fn new(g: &GlobalArgs) -> CliResult<Self> {
        let (mut config, path) = RunConfig::resolve(g.config.as_deref()).map_err(|e| match e {
            EarError::Io(io) => {
                let shown = g
                    .config
                    .clone()
                    .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
                    .unwrap_or_default();
                io_failure(&shown, io)
            }
            e => e.into(),
        })?;
        if let Some(s) = g.seed {
            config.seeds.data = s;
            config.seeds.model = s;
        }
        if let Some(t) = g.threads {
            config.nas.threads = t;
        }
        config.validate()?;
        if let Some(p) = path {
            log::info!("config {}", p.display());
        }
        fs::create_dir_all(&g.out_dir).map_err(|e| io_failure(&g.out_dir, e))?;
        Ok(Self {
            hash: config.hash(),
            config,
            out_dir: g.out_dir.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, body: &T) -> CliResult<PathBuf> {
        let mut value = serde_json::to_value(body).map_err(|e| EarError::Malformed(e.to_string()))?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert("schema_version".into(), json!(OUTPUT_SCHEMA));
            obj.insert("config_hash".into(), json!(self.hash));
        }
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&value).map_err(|e| EarError::Malformed(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
        Ok(path)
    }

    /// CSV table preceded by a `#` line naming schema and config hash.
    fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let path = self.path(name);
        let mut buf = format!("# schema_version={OUTPUT_SCHEMA} config_hash={}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let csv_err = |e: csv::Error| Failure::from(EarError::Malformed(e.to_string()));
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                w.write_record(r).map_err(csv_err)?;
            }
            w.flush().map_err(|e| io_failure(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| io_failure(&path, e))?;
        Ok(path)
    }

    fn load_features(&self, path: &Path) -> CliResult<FeatureDataset> {
        load_feature_file(path).map_err(|e| match e {
            EarError::Io(io) => io_failure(path, io),
            e => Failure {
                message: format!("{}: {e}", path.display()),
                ..e.into()
            },
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = Context::new(&cli.global).and_then(|ctx| match &cli.command {
        Command::GenSynthetic => gen_synthetic(&ctx),
        Command::Train(a) => train(&ctx, a),
        Command::EvalOod(a) => eval_ood(&ctx, a),
        Command::Nas(a) => nas(&ctx, a),
        Command::Stream(a) => stream(&ctx, a),
        Command::Metrics(a) => metrics(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn gen_synthetic(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let seed = cfg.seeds.data;
    let scenario = make_synthetic_scenario(cfg.scenario_config(), seed)?;
    let events = scenario.events();
    let stream = FeatureDataset::new(
        events.iter().map(|e| e.features().clone()).collect(),
        events.iter().map(|e| e.truth().label).collect(),
        events.iter().map(|e| e.truth().task).collect(),
        scenario.encoder().tap_dims().to_vec(),
        scenario.config().total_classes() as u32,
    )?;
    write_feature_file(ctx.path("stream.earf"), &stream)?;
    let mut files = vec!["stream.earf".to_string()];
    for t in 0..scenario.config().num_tasks {
        let train = scenario.sample_task(t, cfg.scenario.train_per_class, rng::derive_seed(seed, &[0x7A1, t as u64]))?;
        let name = format!("train_t{t}.earf");
        write_feature_file(ctx.path(&name), &train)?;
        files.push(name);
        let name = format!("test_t{t}.earf");
        write_feature_file(ctx.path(&name), &scenario.test_sets()[t])?;
        files.push(name);
    }
    ctx.write_json(
        "scenario.json",
        &json!({
            "seed": seed,
            "tasks": scenario.config().num_tasks,
            "classes_per_task": scenario.config().classes_per_task,
            "segment": scenario.config().segment_length,
            "curriculum": scenario.curriculum(),
            "tap_dims": scenario.encoder().tap_dims(),
            "files": files,
        }),
    )?;
    log::info!("wrote {} files to {}", files.len() + 1, ctx.out_dir.display());
    Ok(())
}

fn train(ctx: &Context, a: &TrainArgs) -> CliResult<()> {
    let data = ctx.load_features(&a.data)?;
    let engine = ctx.config.engine_config();
    let seed = ctx.config.seeds.model;
    let (model, candidate, nas_score, train_accuracy) = match a.arch.as_str() {
        "nas" => {
            let g = grow_domain_model(&data, a.domain_id as usize, &engine, seed)?;
            (g.model, g.candidate, Some(g.nas_score), g.train_accuracy)
        }
        arch => {
            let text = if arch == "all" {
                (0..data.tap_count())
                    .map(|t| format!("t{t}:d1w{}", engine.nas.width_max))
                    .collect::<Vec<_>>()
                    .join(",")
            } else {
                arch.to_string()
            };
            let cand = CandidateArchitecture::parse(&text, data.tap_count())?;
            let (m, acc) = fit_candidate(&data, &cand, a.domain_id as usize, &engine, seed)?;
            (m, cand.describe(), None, acc)
        }
    };
    let path = ctx.path(&a.model_name);
    save_model(&path, &model)?;
    ctx.write_json(
        "train_report.json",
        &json!({
            "data": a.data,
            "model": path,
            "domain_id": a.domain_id,
            "candidate": candidate,
            "nas_score": nas_score,
            "classes": model.classes(),
            "adaptors": model.adaptors().len(),
            "parameters": model.num_params(),
            "dim": model.dim(),
            "weibull": model.weibull(),
            "train_accuracy": train_accuracy,
        }),
    )?;
    log::info!("{candidate}: train accuracy {train_accuracy:.4}, saved {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct OodMetrics {
    model: PathBuf,
    id_samples: usize,
    ood_samples: usize,
    id_accuracy: f64,
    id_macro_f1: f64,
    /// Accuracy on OOD samples whose label the model knows, if any.
    ood_shared_class_accuracy: Option<f64>,
    auroc: f64,
    tnr_at_tpr95: f64,
    tnr_at_tpr90: f64,
    /// Macro-F1 of the ID/OOD decision at the model's tau_pi.
    ood_macro_f1: f64,
    tau_pi: f64,
    optimal_threshold: f64,
    optimal_macro_f1: f64,
}

fn eval_ood(ctx: &Context, a: &EvalArgs) -> CliResult<()> {
    let model = load_model(&a.model).map_err(|e| match e {
        EarError::Io(io) => io_failure(&a.model, io),
        e => e.into(),
    })?;
    let id = ctx.load_features(&a.id)?;
    let oods = a.ood.iter().map(|p| ctx.load_features(p)).collect::<CliResult<Vec<_>>>()?;
    let ood = FeatureDataset::concat(&oods.iter().collect::<Vec<_>>())?;
    let mut r = rng::derived(ctx.config.seeds.model, &[0xE7A1]);

    let mut scores = Vec::with_capacity(id.len() + ood.len());
    let mut is_id = Vec::with_capacity(scores.capacity());
    let mut flagged_ood = Vec::with_capacity(scores.capacity());
    let (mut id_pred, mut shared_correct, mut shared) = (Vec::new(), 0usize, 0usize);
    for (set, in_dist) in [(&id, true), (&ood, false)] {
        for (x, &label) in set.samples().iter().zip(set.labels()) {
            let inf = model.infer(x, &mut r)?;
            scores.push(inf.ood_score);
            is_id.push(in_dist);
            flagged_ood.push(inf.is_ood);
            if in_dist {
                id_pred.push(inf.classification.label);
            } else if model.classes().contains(&label) {
                shared += 1;
                shared_correct += (inf.classification.label == label) as usize;
            }
        }
    }
    let sl = ScoredLabels::from_ood_scores(&scores, is_id.clone())?;
    let predicted_id: Vec<bool> = flagged_ood.iter().map(|f| !f).collect();
    let (optimal_threshold, optimal_macro_f1) = optimal_f1_threshold(&sl)?;
    let m = OodMetrics {
        model: a.model.clone(),
        id_samples: id.len(),
        ood_samples: ood.len(),
        id_accuracy: accuracy(&id_pred, id.labels())?,
        id_macro_f1: macro_f1(&id_pred, id.labels())?,
        ood_shared_class_accuracy: (shared > 0).then(|| shared_correct as f64 / shared as f64),
        auroc: auroc(&sl)?,
        tnr_at_tpr95: tnr_at_tpr(&sl, 0.95)?,
        tnr_at_tpr90: tnr_at_tpr(&sl, 0.90)?,
        ood_macro_f1: macro_f1(&predicted_id, &is_id)?,
        tau_pi: model.tau_pi(),
        // thresholds live on the negated scale used for ranking
        optimal_threshold: -optimal_threshold,
        optimal_macro_f1,
    };
    ctx.write_json("metrics.json", &m)?;
    let value = serde_json::to_value(&m).map_err(|e| EarError::Malformed(e.to_string()))?;
    let rows: Vec<Vec<String>> = value
        .as_object()
        .expect("struct serializes to an object")
        .iter()
        .filter(|(_, v)| v.is_number() || v.is_null())
        .map(|(k, v)| vec![k.clone(), if v.is_null() { String::new() } else { v.to_string() }])
        .collect();
    ctx.write_csv("metrics.csv", &["metric", "value"], &rows)?;
    log::info!(
        "id accuracy {:.4}, auroc {:.4}, tnr@95 {:.4}",
        m.id_accuracy,
        m.auroc,
        m.tnr_at_tpr95
    );
    Ok(())
}

fn nas(ctx: &Context, a: &NasArgs) -> CliResult<()> {
    let data = ctx.load_features(&a.data)?;
    let classes = data.present_classes().len();
    let out = nas_search(&data, classes, &ctx.config.nas, ctx.config.seeds.model)?;
    let mut lines = vec![serde_json::to_string(&json!({
        "type": "header",
        "schema_version": OUTPUT_SCHEMA,
        "config_hash": ctx.hash,
        "data": a.data,
    }))
    .expect("json")];
    for rec in &out.trace {
        let mut v = serde_json::to_value(rec).map_err(|e| EarError::Malformed(e.to_string()))?;
        v.as_object_mut().expect("object").insert("type".into(), json!("evaluation"));
        lines.push(v.to_string());
    }
    let path = ctx.path("nas_trace.jsonl");
    fs::write(&path, lines.join("\n") + "\n").map_err(|e| io_failure(&path, e))?;
    ctx.write_json(
        "nas_best.json",
        &json!({
            "candidate": out.best.describe(),
            "architecture": out.best,
            "score": out.breakdown,
        }),
    )?;
    log::info!("best {} score {:.3}", out.best.describe(), out.breakdown.total);
    Ok(())
}

fn stream(ctx: &Context, a: &StreamArgs) -> CliResult<()> {
    let mut engine = ctx.config.engine_config();
    if let Some(r) = a.routing {
        engine.stream.routing = match r {
            Routing::Oracle => RoutingMode::Oracle,
            Routing::Slow => RoutingMode::Slow,
            Routing::Instant => RoutingMode::Instant,
        };
    }
    let seed = ctx.config.seeds.model;
    let (events, tap_dims, num_classes, tests) = match &a.data_dir {
        Some(dir) => {
            let ds = ctx.load_features(&dir.join("stream.earf"))?;
            let events: Vec<StreamEvent> = ds
                .samples()
                .iter()
                .zip(ds.labels().iter().zip(ds.domain_ids()))
                .map(|(x, (&label, &task))| StreamEvent::new(x.clone(), GroundTruth { label, task }))
                .collect();
            let mut tests = Vec::new();
            while dir.join(format!("test_t{}.earf", tests.len())).exists() {
                tests.push(ctx.load_features(&dir.join(format!("test_t{}.earf", tests.len())))?);
            }
            (events, ds.tap_dims().to_vec(), ds.num_classes(), tests)
        }
        None => {
            let sc = make_synthetic_scenario(ctx.config.scenario_config(), ctx.config.seeds.data)?;
            let tap_dims = sc.encoder().tap_dims().to_vec();
            let n = sc.config().total_classes() as u32;
            (sc.events().to_vec(), tap_dims, n, sc.test_sets().to_vec())
        }
    };
    let report = run_stream(&events, &tap_dims, num_classes, &tests, &engine, seed)?;
    write_event_log(
        ctx.path("events.jsonl"),
        LogHeader {
            schema_version: EVENT_LOG_SCHEMA,
            config_hash: ctx.hash.clone(),
            seed,
            routing: engine.stream.routing,
        },
        &report,
    )?;
    ctx.write_json("summary.json", &report.summary)?;
    write_stream_tables(ctx, &report.steps, &report.growths, engine.stream.window)?;
    if a.save_models {
        for (i, m) in report.models.iter().enumerate() {
            save_model(ctx.path(&format!("model_{i}.earm")), m)?;
        }
    }
    let s = &report.summary;
    log::info!(
        "{} models, {} triggers, {} misfires; accuracy oracle {:.4} slow {:.4} instant {:.4}",
        s.models,
        s.triggers,
        s.misfires,
        s.oracle.accuracy,
        s.slow.accuracy,
        s.instant.accuracy
    );
    Ok(())
}

fn write_stream_tables(ctx: &Context, steps: &[StepRecord], growths: &[GrowthRecord], window: usize) -> CliResult<()> {
    let series = RoutingMode::ALL
        .iter()
        .map(|&m| moving_accuracy(steps, m, window))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<String>> = steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                s.step.to_string(),
                s.true_task.to_string(),
                json_name(&s.phase),
                json_name(&s.marker),
                format!("{:.6}", s.min_ood_score),
                format!("{:.6}", series[0][i]),
                format!("{:.6}", series[1][i]),
                format!("{:.6}", series[2][i]),
            ]
        })
        .collect();
    ctx.write_csv(
        "moving_accuracy.csv",
        &["step", "task", "phase", "marker", "min_ood_score", "oracle", "slow", "instant"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = growths
        .iter()
        .map(|g| {
            vec![
                g.growth_index.to_string(),
                g.trigger_step.to_string(),
                g.end_step.to_string(),
                g.task.to_string(),
                json_name(&g.status),
                g.candidate.clone().unwrap_or_default(),
                g.registration_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ]
        })
        .collect();
    ctx.write_csv(
        "growths.csv",
        &["growth", "trigger_step", "end_step", "task", "status", "candidate", "registration_accuracy"],
        &rows,
    )?;
    Ok(())
}

fn json_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn metrics(ctx: &Context, a: &MetricsArgs) -> CliResult<()> {
    let lines = read_event_log(&a.log).map_err(|e| match e {
        EarError::Io(io) => io_failure(&a.log, io),
        e => e.into(),
    })?;
    let header = match lines.first() {
        Some(LogLine::Header(h)) => h.clone(),
        _ => return Err(EarError::Malformed("event log does not start with a header".into()).into()),
    };
    if header.schema_version != EVENT_LOG_SCHEMA {
        return Err(EarError::UnsupportedVersion {
            expected: EVENT_LOG_SCHEMA as u16,
            found: header.schema_version as u16,
        }
        .into());
    }
    let mut steps = Vec::new();
    let mut growths = Vec::new();
    let mut logged = None;
    for l in lines.into_iter().skip(1) {
        match l {
            LogLine::Step(s) => steps.push(s),
            LogLine::Growth(g) => growths.push(g),
            LogLine::Summary(s) => logged = Some(s),
            LogLine::Header(_) => return Err(EarError::Malformed("second header in event log".into()).into()),
        }
    }
    let forgetting = logged.as_ref().map(|s| s.forgetting.clone()).unwrap_or_default();
    let derived = continual::summarize(&steps, &growths, header.routing, forgetting);
    let matches_log = logged.as_ref().map(|s| *s == derived);
    if matches_log == Some(false) {
        log::warn!("re-derived summary differs from the one stored in the log");
    }
    ctx.write_json(
        "derived_summary.json",
        &json!({
            "log": a.log,
            "log_config_hash": header.config_hash,
            "matches_log": matches_log,
            "summary": derived,
        }),
    )?;
    let window = a.window.unwrap_or(ctx.config.stream.window);
    write_stream_tables(ctx, &steps, &growths, window)?;
    let rows: Vec<Vec<String>> = [
        ("oracle", &derived.oracle),
        ("slow", &derived.slow),
        ("instant", &derived.instant),
    ]
    .iter()
    .flat_map(|(mode, s)| {
        std::iter::once(vec![mode.to_string(), "all".into(), format!("{:.6}", s.accuracy)]).chain(
            s.per_task
                .iter()
                .map(move |t| vec![mode.to_string(), t.task.to_string(), format!("{:.6}", t.accuracy)]),
        )
    })
    .collect();
    ctx.write_csv("routing_accuracy.csv", &["routing", "task", "accuracy"], &rows)?;
    log::info!(
        "{} steps, accuracy oracle {:.4} slow {:.4} instant {:.4}",
        derived.steps,
        derived.oracle.accuracy,
        derived.slow.accuracy,
        derived.instant.accuracy
    );
    Ok(())
}
