//! `cldetect`: synthetic task generation, continual-learning experiments,
//! pipeline scenarios and report regeneration.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cldetect::checkpoint::Checkpoint;
use cldetect::continual::{train_task, Accumulation, EwcConfig, KdConfig, Strategy};
use cldetect::harness::{
    eval_matrix_csv, evaluate, regenerate_report, run_experiment, zero_shot_eval, CropConfig,
    ExperimentPlan, RunConfig,
};
use cldetect::nn::ParamVector;
use cldetect::pipeline::scenario::{parse_scenario, run_scenario};
use cldetect::pipeline::{ModelRegistry, Pipeline, PipelineConfig};
use cldetect::taskgen::{
    group_tasks, load_directory, mix_seed, write_directory, Family, GroupMode, Manifest, PresetKind, SplitSizes,
    TaskDataset,
};

#[derive(Parser)]
#[command(name = "cldetect", version, about = "Continual-learning detector for synthetic media")]
struct Cli {
    /// Master seed for data generation and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON file with RunConfig fields; flags below override it.
    #[arg(long, global = true)]
    run_config: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long = "lr", global = true)]
    lr_initial: Option<f64>,
    #[arg(long, global = true)]
    momentum: Option<f64>,
    #[arg(long, global = true)]
    lr_min: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Random-crop side length for training (center crop at evaluation).
    #[arg(long, global = true)]
    crop: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    #[value(name = "easy_like")]
    EasyLike,
    #[value(name = "long_like")]
    LongLike,
}

impl From<Preset> for PresetKind {
    fn from(p: Preset) -> Self {
        match p {
            Preset::EasyLike => PresetKind::EasyLike,
            Preset::LongLike => PresetKind::LongLike,
        }
    }
}

#[derive(Args)]
struct TaskArgs {
    #[arg(long, value_enum, conflicts_with = "manifest")]
    preset: Option<Preset>,
    /// Task manifest JSON (as written by gen-tasks).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyKind {
    Transfer,
    Kd,
    Ewc,
}

#[derive(Clone, Copy, ValueEnum)]
enum AccumulationArg {
    #[value(name = "per_task_list")]
    PerTaskList,
    #[value(name = "running_sum")]
    RunningSum,
}

#[derive(Args)]
struct StrategyArgs {
    #[arg(long, value_enum, default_value = "transfer")]
    strategy: StrategyKind,
    /// Weight of the distillation term.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    /// Weight of the label cross-entropy.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    beta: f64,
    /// Distillation temperature.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    tau: f64,
    /// Scale the distillation gradient by tau^2.
    #[arg(long)]
    tau_sq: bool,
    #[arg(long, default_value_t = 1000.0, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long, default_value_t = 256)]
    fisher_samples: usize,
    #[arg(long, value_enum, default_value = "per_task_list")]
    accumulation: AccumulationArg,
}

impl StrategyArgs {
    fn build(&self) -> Strategy {
        match self.strategy {
            StrategyKind::Transfer => Strategy::Transfer,
            StrategyKind::Kd => Strategy::Kd(KdConfig {
                alpha: self.alpha,
                beta: self.beta,
                tau: self.tau,
                scale_by_tau_sq: self.tau_sq,
            }),
            StrategyKind::Ewc => Strategy::Ewc(EwcConfig {
                lambda: self.lambda,
                fisher_sample_count: self.fisher_samples,
                accumulation: match self.accumulation {
                    AccumulationArg::PerTaskList => Accumulation::PerTaskList,
                    AccumulationArg::RunningSum => Accumulation::RunningSum,
                },
            }),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "greedy")]
    Greedy,
    #[value(name = "paper_order")]
    PaperOrder,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a task catalog as PGM directories plus its manifest.
    GenTasks {
        #[command(flatten)]
        tasks: TaskArgs,
    },
    /// Train one task with plain cross-entropy, optionally from a checkpoint.
    Train {
        #[command(flatten)]
        tasks: TaskArgs,
        /// Task name from the catalog.
        #[arg(long, conflicts_with = "data")]
        task: Option<String>,
        /// External task directory `<task>/{train,val,test}/{real,fake}/*.pgm`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Starting checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train on one task and evaluate on every task of the catalog.
    ZeroShot {
        #[command(flatten)]
        tasks: TaskArgs,
        /// Defaults to the first task of the sequence.
        #[arg(long)]
        train_task: Option<String>,
    },
    /// Full continual run over the sequence, one task per stage.
    Sequence {
        #[command(flatten)]
        tasks: TaskArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Continual run over groups of tasks trained jointly.
    Multitask {
        #[command(flatten)]
        tasks: TaskArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long, default_value_t = 3)]
        group_size: usize,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: ModeArg,
    },
    /// Stream a scripted scenario through the serving pipeline.
    Pipeline {
        /// JSON list of {generator_name, count, label_available}.
        #[arg(long)]
        scenario: PathBuf,
        /// Generator catalog; defaults to the long_like presets.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
        drift_threshold: f64,
        #[arg(long, default_value_t = 200)]
        window_size: usize,
        #[arg(long, default_value_t = 800)]
        retrain_batch: usize,
        /// Register retrained models without activating them.
        #[arg(long)]
        approval_mode: bool,
        /// Leave every flagged window unlabeled in the pending queue.
        #[arg(long)]
        pending_only: bool,
    },
    /// Rebuild curves.svg and table.md from the CSV files of a run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<cldetect::Error> for Failure {
    fn from(e: cldetect::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, body: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, body).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn resolve_run(cli: &Cli) -> CliResult<RunConfig> {
    let mut run = match &cli.run_config {
        Some(p) => serde_json::from_str(&read_input(p)?)
            .map_err(|e| Failure::Usage(format!("bad run config {}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    let h = &cli.hyper;
    if let Some(v) = h.max_epochs {
        run.max_epochs = v;
    }
    if let Some(v) = h.patience {
        run.patience = v;
    }
    if let Some(v) = h.lr_initial {
        run.lr_initial = v;
    }
    if let Some(v) = h.momentum {
        run.momentum = v;
    }
    if let Some(v) = h.lr_min {
        run.lr_min = v;
    }
    if let Some(v) = h.batch_size {
        run.batch_size = v;
    }
    if let Some(size) = h.crop {
        run.crop = Some(CropConfig { size, enabled: true });
    }
    run.seed = cli.seed;
    run.validate()?;
    Ok(run)
}

fn resolve_manifest(args: &TaskArgs, default: PresetKind) -> CliResult<Manifest> {
    let mut m = match &args.manifest {
        Some(p) => Manifest::from_json(&read_input(p)?)
            .map_err(|e| Failure::Usage(format!("bad manifest {}: {e}", p.display())))?,
        None => Manifest::from_preset(args.preset.map_or(default, Into::into), SplitSizes::default()),
    };
    if let Some(v) = args.train_size {
        m.sizes.train = v;
    }
    if let Some(v) = args.val_size {
        m.sizes.val = v;
    }
    if let Some(v) = args.test_size {
        m.sizes.test = v;
    }
    m.validate()?;
    Ok(m)
}

#[derive(Serialize)]
struct Echo<'a> {
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    run_config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<Strategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tasks: Option<&'a Manifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pipeline: Option<&'a PipelineConfig>,
}

fn write_echo(out: &Path, echo: &Echo<'_>) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let body = serde_json::to_string_pretty(echo).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_output(&out.join("run_manifest.json"), body + "\n")
}

fn echo<'a>(command: &'a str, cli: &Cli, run: &'a RunConfig) -> Echo<'a> {
    Echo {
        command,
        argv: std::env::args().skip(1).collect(),
        seed: cli.seed,
        run_config: run,
        strategy: None,
        tasks: None,
        pipeline: None,
    }
}

fn pick_task(tasks: Vec<TaskDataset>, name: &str) -> CliResult<TaskDataset> {
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    tasks
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Failure::Usage(format!("unknown task {name:?}; catalog has {}", names.join(", "))))
}

fn cmd_gen_tasks(cli: &Cli, run: &RunConfig, args: &TaskArgs) -> CliResult<()> {
    let m = resolve_manifest(args, PresetKind::EasyLike)?;
    write_echo(&cli.out, &Echo { tasks: Some(&m), ..echo("gen-tasks", cli, run) })?;
    write_output(&cli.out.join("manifest.json"), m.to_json()? + "\n")?;
    let root = cli.out.join("tasks");
    for task in m.materialize(cli.seed)? {
        let dir = write_directory(&task, &root)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_train(
    cli: &Cli,
    run: &RunConfig,
    args: &TaskArgs,
    task: Option<&str>,
    data: Option<&Path>,
    init: Option<&Path>,
) -> CliResult<()> {
    let (task, manifest) = match (task, data) {
        (_, Some(dir)) => (load_directory(dir)?, None),
        (name, None) => {
            let m = resolve_manifest(args, PresetKind::EasyLike)?;
            let name = name.map_or_else(|| m.sequence.names[0].clone(), str::to_string);
            (pick_task(m.materialize(cli.seed)?, &name)?, Some(m))
        }
    };
    write_echo(&cli.out, &Echo { tasks: manifest.as_ref(), strategy: Some(Strategy::Transfer), ..echo("train", cli, run) })?;
    let spec = run.model_spec();
    let start = match init {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            if c.spec != spec {
                return Err(Failure::Usage(format!("{} was trained with a different model shape", p.display())));
            }
            c.params
        }
        None => ParamVector::he_uniform(&spec, mix_seed(cli.seed, 0x1417)),
    };
    let (params, trace) = train_task(&spec, &start, &task, &Strategy::Transfer, None, &[], run, 1)?;
    let test_accuracy = if task.test.is_empty() { None } else { Some(evaluate(&spec, &params, &task, run)?) };

    let mut csv = String::from("epoch,learning_rate,train_loss,val_accuracy\n");
    for e in &trace.epochs {
        csv.push_str(&format!("{},{:.9},{:.9},{:.6}\n", e.epoch, e.learning_rate, e.train_loss, e.val_accuracy));
    }
    write_output(&cli.out.join("train_trace.csv"), csv)?;
    let ckpt = Checkpoint::new(spec, params, Strategy::Transfer, cli.seed, vec![task.name.clone()], trace);
    ckpt.save(&cli.out.join("checkpoint.json"))?;
    let summary = serde_json::json!({
        "task": task.name,
        "test_accuracy": test_accuracy,
        "best_epoch": ckpt.trace.best_epoch,
        "epochs_run": ckpt.trace.epochs.len(),
        "best_val_accuracy": ckpt.trace.best_val_accuracy,
        "checksum": ckpt.params.checksum(),
    });
    write_output(&cli.out.join("summary.json"), format!("{summary:#}\n"))?;
    match test_accuracy {
        Some(a) => println!("{}: test accuracy {a:.4}", task.name),
        None => println!("{}: trained (no test split)", task.name),
    }
    Ok(())
}

fn cmd_zero_shot(cli: &Cli, run: &RunConfig, args: &TaskArgs, train_task: Option<&str>) -> CliResult<()> {
    let m = resolve_manifest(args, PresetKind::EasyLike)?;
    write_echo(&cli.out, &Echo { tasks: Some(&m), strategy: Some(Strategy::Transfer), ..echo("zero-shot", cli, run) })?;
    let tasks = m.materialize(cli.seed)?;
    let name = train_task.map_or_else(|| m.sequence.names[0].clone(), str::to_string);
    let first = pick_task(tasks.clone(), &name)?;
    let matrix = zero_shot_eval(&run.model_spec(), run, &first, &tasks)?;
    write_output(&cli.out.join("eval_matrix.csv"), eval_matrix_csv(&matrix, &[name.clone()]))?;

    let row = &matrix.rows[0];
    let family = first.family();
    let mean = |same: bool| {
        let v: Vec<f64> = tasks
            .iter()
            .zip(row)
            .filter(|(t, _)| t.name != name && (t.family() == family) == same)
            .map(|(_, &a)| a)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let summary = serde_json::json!({
        "train_task": name,
        "family": family.map(|f: Family| f.as_str()),
        "accuracies": tasks.iter().zip(row).map(|(t, a)| (t.name.clone(), *a)).collect::<std::collections::BTreeMap<_, _>>(),
        "same_family_mean": mean(true),
        "cross_family_mean": mean(false),
    });
    write_output(&cli.out.join("summary.json"), format!("{summary:#}\n"))?;
    for (t, a) in tasks.iter().zip(row) {
        println!("{:<16} {a:.4}", t.name);
    }
    Ok(())
}

fn cmd_sequence(cli: &Cli, run: &RunConfig, args: &TaskArgs, strategy: &StrategyArgs) -> CliResult<()> {
    let m = resolve_manifest(args, PresetKind::EasyLike)?;
    let strategy = strategy.build();
    strategy.validate()?;
    write_echo(&cli.out, &Echo { tasks: Some(&m), strategy: Some(strategy), ..echo("sequence", cli, run) })?;
    let result = run_experiment(&ExperimentPlan::sequential(m), &strategy, run, Some(&cli.out))?;
    println!("{}: final average accuracy {:.4}", result.label, result.final_average);
    Ok(())
}

fn cmd_multitask(
    cli: &Cli,
    run: &RunConfig,
    args: &TaskArgs,
    strategy: &StrategyArgs,
    group_size: usize,
    mode: ModeArg,
) -> CliResult<()> {
    let m = resolve_manifest(args, PresetKind::LongLike)?;
    let strategy = strategy.build();
    strategy.validate()?;
    if group_size == 0 {
        return Err(Failure::Usage("group size must be at least 1".into()));
    }
    let specs = m
        .sequence
        .names
        .iter()
        .map(|n| m.generator(n).cloned())
        .collect::<cldetect::Result<Vec<_>>>()?;
    let mode = match mode {
        ModeArg::Greedy => GroupMode::Greedy,
        ModeArg::PaperOrder => GroupMode::PaperOrder,
    };
    let groups: Vec<Vec<String>> = group_tasks(&specs, group_size, mode)?
        .into_iter()
        .map(|g| g.into_iter().map(|i| specs[i].name.clone()).collect())
        .collect();
    write_echo(&cli.out, &Echo { tasks: Some(&m), strategy: Some(strategy), ..echo("multitask", cli, run) })?;
    let body = serde_json::to_string_pretty(&groups).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_output(&cli.out.join("grouping.json"), body + "\n")?;
    let plan = ExperimentPlan {
        manifest: m,
        grouping: Some(groups),
    };
    let result = run_experiment(&plan, &strategy, run, Some(&cli.out))?;
    println!("{} grouped: final average accuracy {:.4}", result.label, result.final_average);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_pipeline(
    cli: &Cli,
    run: &RunConfig,
    scenario: &Path,
    manifest: Option<&Path>,
    strategy: &StrategyArgs,
    cfg: PipelineConfig,
) -> CliResult<()> {
    let phases = parse_scenario(&read_input(scenario)?)?;
    let catalog = resolve_manifest(
        &TaskArgs {
            preset: None,
            manifest: manifest.map(Path::to_path_buf),
            train_size: None,
            val_size: None,
            test_size: None,
        },
        PresetKind::LongLike,
    )?;
    let strategy = strategy.build();
    strategy.validate()?;
    cfg.validate()?;
    write_echo(
        &cli.out,
        &Echo {
            tasks: Some(&catalog),
            strategy: Some(strategy),
            pipeline: Some(&cfg),
            ..echo("pipeline", cli, run)
        },
    )?;
    let registry = ModelRegistry::open(&cli.out.join("registry"))?;
    if !registry.is_empty() {
        return Err(Failure::Usage(format!(
            "{} already holds a registry; use a fresh --out",
            cli.out.display()
        )));
    }
    let pipe = Pipeline::new(run.clone(), strategy, cfg, registry)?;
    let log_path = cli.out.join("scenario.jsonl");
    let file = fs::File::create(&log_path)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    let report = run_scenario(&pipe, &phases, &catalog.generators, run, &mut log)?;
    drop(log);
    let body = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_output(&cli.out.join("scenario_report.json"), body + "\n")?;
    for p in &report.phases {
        println!(
            "{:<16} start {:.4} end {:.4} alerts {} retrains {}",
            p.generator_name, p.accuracy_at_start, p.accuracy_at_end, p.alerts, p.retrains
        );
    }
    println!("active version {} of {}", report.active_version, report.versions);
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Command::Report { input } = &cli.command {
        if !input.is_dir() {
            return Err(Failure::Usage(format!("{} is not a run directory", input.display())));
        }
        for p in regenerate_report(input)? {
            println!("wrote {}", p.display());
        }
        return Ok(());
    }
    let run = resolve_run(cli)?;
    match &cli.command {
        Command::GenTasks { tasks } => cmd_gen_tasks(cli, &run, tasks),
        Command::Train { tasks, task, data, init } => {
            cmd_train(cli, &run, tasks, task.as_deref(), data.as_deref(), init.as_deref())
        }
        Command::ZeroShot { tasks, train_task } => cmd_zero_shot(cli, &run, tasks, train_task.as_deref()),
        Command::Sequence { tasks, strategy } => cmd_sequence(cli, &run, tasks, strategy),
        Command::Multitask {
            tasks,
            strategy,
            group_size,
            mode,
        } => cmd_multitask(cli, &run, tasks, strategy, *group_size, *mode),
        Command::Pipeline {
            scenario,
            manifest,
            strategy,
            drift_threshold,
            window_size,
            retrain_batch,
            approval_mode,
            pending_only,
        } => {
            let cfg = PipelineConfig {
                window_size: *window_size,
                drift_threshold: *drift_threshold,
                retrain_batch: *retrain_batch,
                approval_mode: *approval_mode,
                pending_only: *pending_only,
                ..PipelineConfig::default()
            };
            cmd_pipeline(cli, &run, scenario, manifest.as_deref(), strategy, cfg)
        }
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

