//! Command-line entry point: verification suites, data generation, training,
//! sampling, evaluation and plot emission.
//!
//! Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error.

use clap::{Args, Parser, Subcommand};
use prefflow::config::RunConfig;
use prefflow::data::{
    gen_dataset, load_dataset, save_dataset, task_sidecar_path, ModeSpec, ToyTaskSpec,
};
use prefflow::dynamics::{sample, SampleMode};
use prefflow::error::{Error, Result};
use prefflow::nn::ModelCheckpoint;
use prefflow::rng::chain_seed;
use prefflow::training::{eval_implicit_acc, eval_pref_mass, train_run, Method, TrainCheckpoint};
use prefflow::{plot, verify};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "prefflow",
    version,
    about = "Preference-optimization lab for diffusion and flow-matching toy models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the registered property checks and print a pass/fail table.
    Verify {
        /// Only run checks whose name contains this substring.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Generate a synthetic preference dataset (JSON lines plus a task sidecar).
    GenData(GenDataArgs),
    /// Train a model on a preference dataset.
    Train(TrainArgs),
    /// Draw samples from a model checkpoint and emit CSV rows.
    Sample(SampleArgs),
    /// Evaluate a training checkpoint: preferred-region mass and implicit accuracy.
    Eval(EvalArgs),
    /// Render an SVG chart from a metrics CSV, or the utility curves.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Modes as `x,y,std[,pref]` groups separated by `;`
    /// (default: "2,0,0.3,pref;-2,0,0.3").
    #[arg(long)]
    modes: Option<String>,
    /// Number of preference pairs.
    #[arg(long, default_value_t = 4096)]
    pairs: usize,
    #[arg(long)]
    seed: u64,
    /// Output path for the JSON-lines dataset.
    #[arg(long)]
    out: PathBuf,
    /// Probability of flipping a pair's labels.
    #[arg(long, default_value_t = 0.0)]
    label_flip_prob: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Objective: linear-dpo | dpo | sft.
    #[arg(long)]
    method: String,
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON-lines preference dataset (task sidecar expected alongside).
    #[arg(long)]
    data: PathBuf,
    /// Task geometry; defaults to `<data>.task.json`.
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long)]
    steps: u64,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Resume from a `state_*.json` checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Start from a pretrained policy checkpoint (reference initialized equal).
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Use the large-model learning rate (5e-6).
    #[arg(long)]
    paper_hparams: bool,
}

#[derive(Args)]
struct SampleArgs {
    /// Model checkpoint (e.g. `policy_final.json`).
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// ode | sde.
    #[arg(long, default_value = "ode")]
    mode: String,
    #[arg(long)]
    seed: u64,
    /// TOML run config for the schedule (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which preferred-mode slot the one-hot condition selects.
    #[arg(long, default_value_t = 0)]
    cond_index: usize,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Training state checkpoint (`state_*.json`).
    #[arg(long)]
    ckpt: PathBuf,
    /// JSON-lines preference dataset.
    #[arg(long)]
    data: PathBuf,
    /// Task geometry; defaults to `<data>.task.json`.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Number of samples for the preferred-region mass.
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    sample_steps: usize,
    /// ode | sde.
    #[arg(long, default_value = "ode")]
    mode: String,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics CSV to chart.
    #[arg(
        long,
        required_unless_present = "utilities",
        conflicts_with = "utilities"
    )]
    csv: Option<PathBuf>,
    /// Render the normalized utility curves instead of metrics.
    #[arg(long)]
    utilities: bool,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_modes(text: &str) -> Result<Vec<ModeSpec>> {
    let mut modes = Vec::new();
    for group in text.split(';') {
        let fields: Vec<&str> = group.split(',').map(str::trim).collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::Config(format!(
                "mode {group:?} must be x,y,std[,pref]"
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Config(format!("bad number {s:?} in --modes: {e}")))
        };
        let preferred = match fields.get(3) {
            None => false,
            Some(&"pref") => true,
            Some(other) => {
                return Err(Error::Config(format!("mode flag {other:?} must be `pref`")))
            }
        };
        modes.push(ModeSpec {
            center: vec![num(fields[0])?, num(fields[1])?],
            std: num(fields[2])?,
            preferred,
        });
    }
    Ok(modes)
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_task(data: &Path, task: &Option<PathBuf>) -> Result<ToyTaskSpec> {
    let path = match task {
        Some(p) => p.clone(),
        None => task_sidecar_path(data),
    };
    if !path.exists() {
        return Err(Error::Config(format!(
            "task spec {} not found; pass --task or generate data with gen-data",
            path.display()
        )));
    }
    ToyTaskSpec::load(&path)
}

fn cmd_verify(filter: Option<String>) -> Result<()> {
    let outcomes = verify::run_checks(filter.as_deref());
    if outcomes.is_empty() {
        return Err(Error::Config(format!(
            "no check matches filter {:?}",
            filter.unwrap_or_default()
        )));
    }
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut failures = 0;
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:width$}  {}", o.name, o.detail);
        if !o.passed {
            failures += 1;
        }
    }
    println!(
        "{} checks, {} passed, {} failed",
        outcomes.len(),
        outcomes.len() - failures,
        failures
    );
    if failures > 0 {
        return Err(Error::Contract(format!("{failures} checks failed")));
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let default = ToyTaskSpec::two_mode(args.pairs, args.seed);
    let modes = match &args.modes {
        Some(text) => parse_modes(text)?,
        None => default.modes.clone(),
    };
    let cond_dim = modes.iter().filter(|m| m.preferred).count();
    let spec = ToyTaskSpec {
        modes,
        cond_dim,
        pairs: args.pairs,
        seed: args.seed,
        label_flip_prob: args.label_flip_prob,
    };
    let pairs = gen_dataset(&spec)?;
    save_dataset(&args.out, &pairs)?;
    spec.save(&task_sidecar_path(&args.out))?;
    println!(
        "wrote {} pairs to {} (task sidecar {})",
        pairs.len(),
        args.out.display(),
        task_sidecar_path(&args.out).display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let mut config = load_config(&args.config)?;
    if args.paper_hparams {
        config.apply_paper_hparams();
    }
    let dataset = load_dataset(&args.data)?;
    let task = load_task(&args.data, &args.task)?;
    let settings = config.to_run_settings(method, args.seed, args.steps)?;

    let output = match (&args.pretrained, &args.resume) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--pretrained and --resume are mutually exclusive".into(),
            ))
        }
        (Some(pretrained), None) => {
            // Seed a fresh run from an existing policy checkpoint.
            let policy = ModelCheckpoint::load(pretrained)?.to_model()?;
            let state = prefflow::training::TrainState::from_policy(
                policy,
                settings.hyper,
                settings.cfg,
                method,
                args.seed,
            )?;
            std::fs::create_dir_all(&args.out)?;
            let start = args.out.join("state_000000.json");
            TrainCheckpoint::from_state(&state, &settings.schedule).save(&start)?;
            train_run(&settings, &dataset, &task, &args.out, Some(&start))?
        }
        (None, resume) => train_run(&settings, &dataset, &task, &args.out, resume.as_deref())?,
    };

    if let Some(row) = output.rows.last() {
        println!(
            "finished at step {}: loss {:.6}, implicit_acc {:.4}, pref_mass {:.4}",
            row.step, row.loss, row.implicit_acc, row.pref_mass
        );
    } else {
        println!("finished at step {} (no eval rows)", output.state.step);
    }
    println!("metrics: {}", output.metrics_path.display());
    if let Some(p) = output.final_policy_path {
        println!("policy: {}", p.display());
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let schedule = config.to_schedule()?;
    let kind = config.prediction_kind()?;
    let mode: SampleMode = args.mode.parse()?;
    let model = ModelCheckpoint::load(&args.ckpt)?.to_model()?;

    let data_dim = model.out_dim();
    let in_dim = model.in_dim();
    let embed_min = data_dim + prefflow::nn::mlp::TIME_FEATURES;
    if in_dim < embed_min {
        return Err(Error::Config(format!(
            "checkpoint input dim {in_dim} is too small for data dim {data_dim}"
        )));
    }
    let cond_dim = in_dim - embed_min;
    let mut c = vec![0.0; cond_dim];
    if cond_dim > 0 {
        if args.cond_index >= cond_dim {
            return Err(Error::Config(format!(
                "--cond-index {} out of range for condition dim {cond_dim}",
                args.cond_index
            )));
        }
        c[args.cond_index] = 1.0;
    }

    let mut rows = String::new();
    for i in 0..args.n {
        let x = sample(
            &model,
            &schedule,
            kind,
            &c,
            args.steps,
            mode,
            chain_seed(args.seed, i as u64),
        )?;
        let line: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        rows.push_str(&line.join(","));
        rows.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, rows)?,
        None => {
            std::io::stdout().write_all(rows.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let state = TrainCheckpoint::load(&args.ckpt)?;
    let mode: SampleMode = args.mode.parse()?;
    let dataset = load_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(Error::Contract(
            "evaluation needs a nonempty dataset".into(),
        ));
    }
    let task = load_task(&args.data, &args.task)?;
    let policy = state.policy.to_model()?;
    let reference = state.reference.to_model()?;

    let (implicit_acc, mean_delta) = eval_implicit_acc(
        &policy,
        &reference,
        &dataset,
        &state.cfg,
        &state.schedule,
        args.seed,
    )?;
    let mass = eval_pref_mass(
        &policy,
        &state.schedule,
        state.cfg.kind,
        &task,
        args.n,
        args.sample_steps,
        mode,
        args.seed,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "pref_mass": mass,
            "implicit_acc": implicit_acc,
            "mean_delta": mean_delta,
        })
    );
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let svg = if args.utilities {
        plot::render_utilities_svg()?
    } else {
        let csv_path = args.csv.as_ref().expect("clap enforces --csv");
        let csv = std::fs::read_to_string(csv_path)?;
        plot::render_metrics_svg(&csv)?
    };
    std::fs::write(&args.out, svg)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Verify { filter } => cmd_verify(filter),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
