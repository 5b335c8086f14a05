//! Command-line front end: reference solves, training, sweeps, evaluation
//! and plot data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kuramoto_pinn::evalx::{energy_norm, profile, ErrorReport};
use kuramoto_pinn::fvref::{
    fv_convergence_study, fv_solve, FvGrid, RefSolution, DEFAULT_CELLS, DEFAULT_CFL, DEFAULT_LEVELS,
};
use kuramoto_pinn::model::{
    InitialConditionKind, LossParts, LossWeights, ProblemSpec, DEFAULT_COUPLING, DEFAULT_HORIZON, DEFAULT_MOLLIFIER,
};
use kuramoto_pinn::net::{forward_batch, ActivationKind, NetConfig, ParamSet};
use kuramoto_pinn::sweep::{pareto_front, report, run_sweep, Store, SweepGrid, SweepOptions};
use kuramoto_pinn::train::{train, write_history_csv, AdamConfig, EarlyStop, TrainConfig};
use kuramoto_pinn::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "kpinn",
    version,
    about = "PINN solver for the Kuramoto phase-density equation"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "KPINN_OUT_DIR", default_value = "kpinn-out")]
    out_dir: PathBuf,

    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the finite-volume reference and save it.
    SolveRef(SolveRefArgs),
    /// Train one network and evaluate it against the reference.
    Train(TrainArgs),
    /// Train every cell of an architecture grid (resumable).
    Sweep(SweepArgs),
    /// Energy norm of a saved network against a saved reference.
    Eval(EvalArgs),
    /// Summarize a sweep store: records table, Pareto front, trend checks.
    Report(ReportArgs),
    /// Write plot data for a saved network.
    Profile(ProfileArgs),
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    /// Initial condition.
    #[arg(long, default_value = "poly")]
    ic: InitialConditionKind,
    /// Coupling strength K.
    #[arg(long = "K", default_value_t = DEFAULT_COUPLING)]
    coupling: f64,
    /// Mollifier half-width for the Dirac initial condition.
    #[arg(long, default_value_t = DEFAULT_MOLLIFIER)]
    eps: f64,
    /// Final time T.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: f64,
}

impl ProblemArgs {
    fn spec(&self) -> Result<ProblemSpec> {
        let spec = ProblemSpec {
            coupling: self.coupling,
            horizon: self.horizon,
            ic: self.ic,
            mollifier: self.eps,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Clone)]
struct ReferenceArgs {
    /// Finite-volume cells.
    #[arg(long, default_value_t = DEFAULT_CELLS)]
    ref_cells: usize,
    /// Stored time levels, including t = 0 and t = T.
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    ref_levels: usize,
    /// Courant number of the finite-volume solver.
    #[arg(long, default_value_t = DEFAULT_CFL)]
    cfl: f64,
}

impl ReferenceArgs {
    fn grid(&self, spec: &ProblemSpec) -> Result<FvGrid> {
        FvGrid::new(self.ref_cells, self.ref_levels, spec.horizon)
    }
}

#[derive(Args, Debug, Clone)]
struct NetArgs {
    #[arg(long, default_value = "tanh")]
    activation: ActivationKind,
    /// Hidden layers L.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Neurons per hidden layer n.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Seed for initialization and sampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct TrainingArgs {
    #[arg(long, default_value_t = 4096)]
    epochs: usize,
    /// Collocation points N_r.
    #[arg(long, default_value_t = 1024)]
    colloc: usize,
    /// Initial-condition points N_0.
    #[arg(long, default_value_t = 512)]
    n_ic: usize,
    /// Quadrature nodes N_q.
    #[arg(long, default_value_t = 128)]
    quad: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_res: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_ic: f64,
    /// Redraw the collocation points every this many epochs.
    #[arg(long)]
    resample_every: Option<usize>,
    /// Stop after this many epochs without improvement.
    #[arg(long)]
    patience: Option<usize>,
    /// Improvement below this does not reset the patience counter.
    #[arg(long, default_value_t = 0.0)]
    min_delta: f64,
}

impl TrainingArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n_colloc: self.colloc,
            n_ic: self.n_ic,
            n_quad: self.quad,
            epochs: self.epochs,
            adam: AdamConfig {
                learning_rate: self.lr,
                ..AdamConfig::default()
            },
            weights: LossWeights {
                residual: self.lambda_res,
                ic: self.lambda_ic,
            },
            seed,
            resample_every: self.resample_every,
            early_stop: self.patience.map(|patience| EarlyStop {
                patience,
                min_delta: self.min_delta,
            }),
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RefFormat {
    Bin,
    Csv,
}

#[derive(Args, Debug)]
struct SolveRefArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    reference: ReferenceArgs,
    #[arg(long, value_enum, default_value = "bin")]
    format: RefFormat,
    /// Also run a self-convergence study over these cell counts.
    #[arg(long, value_delimiter = ',')]
    convergence: Vec<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    reference: ReferenceArgs,
    /// Evaluate against this saved reference instead of solving one.
    #[arg(long)]
    reference_file: Option<PathBuf>,
    /// Save parameter snapshots after these epochs.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<usize>,
    /// Also write plot data under <out-dir>/plot-data.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Store directory (default <out-dir>/sweep).
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values = ["tanh", "sin", "relu"])]
    activations: Vec<ActivationKind>,
    /// Network shapes as DEPTHxWIDTH.
    #[arg(long, value_delimiter = ',', value_parser = parse_shape, default_values = ["4x64", "4x128", "6x128", "6x256", "8x256"])]
    shapes: Vec<(usize, usize)>,
    #[arg(long = "epoch-budgets", value_delimiter = ',', default_values_t = [2048usize, 4096, 5120, 10240])]
    epochs: Vec<usize>,
    #[arg(long = "colloc-counts", value_delimiter = ',', default_values_t = [1024usize, 2048])]
    colloc: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64])]
    seeds: Vec<u64>,
    /// Concurrent trainings (default: cores - 1).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Retrain cells that already have records.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 512)]
    n_ic: usize,
    #[arg(long, default_value_t = 128)]
    quad: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    reference: ReferenceArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Saved network parameters.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Saved reference (.bin or .csv).
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Store directory (default <out-dir>/sweep).
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Times to sample.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
    times: Vec<f64>,
    /// Angles on the plot grid.
    #[arg(long, default_value_t = 2048)]
    points: usize,
    /// Also sample this saved reference and compare.
    #[arg(long)]
    reference: Option<PathBuf>,
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (l, n) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected DEPTHxWIDTH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
    Ok((parse(l)?, parse(n)?))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn loss_json(loss: &LossParts) -> serde_json::Value {
    json!({ "l_res": loss.residual, "l_ic": loss.ic, "l_total": loss.total })
}

/// Nearest stored level to each requested time.
fn nearest_levels(reference: &RefSolution, times: &[f64]) -> Vec<usize> {
    let last = reference.grid.levels - 1;
    times
        .iter()
        .map(|&t| {
            ((t / reference.grid.horizon) * last as f64)
                .round()
                .clamp(0.0, last as f64) as usize
        })
        .collect()
}

/// `theta, net(t=..)..., ref(t=..)...` at the reference cell centers.
fn write_solution_profiles(
    path: &Path,
    params: &ParamSet,
    net: &NetConfig,
    reference: &RefSolution,
    times: &[f64],
) -> Result<()> {
    let levels = nearest_levels(reference, times);
    let grid = &reference.grid;
    let points: Vec<(f64, f64)> = grid
        .centers()
        .iter()
        .flat_map(|&theta| levels.iter().map(move |&n| (theta, grid.time(n))))
        .collect();
    let predicted = forward_batch(params, net, &points)?;
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["theta".to_string()];
    header.extend(levels.iter().map(|&n| format!("net_t={}", grid.time(n))));
    header.extend(levels.iter().map(|&n| format!("ref_t={}", grid.time(n))));
    writer.write_record(&header)?;
    let k = levels.len();
    for j in 0..grid.cells {
        let mut row = vec![format!("{:e}", grid.center(j))];
        row.extend(predicted[j * k..(j + 1) * k].iter().map(|u| format!("{u:e}")));
        row.extend(levels.iter().map(|&n| format!("{:e}", reference.value(j, n))));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn report_json(report: &ErrorReport) -> serde_json::Value {
    json!({
        "energy_norm": report.energy_norm,
        "max_abs_error": report.max_abs_error,
        "n_eval": report.n_eval,
    })
}

fn solve_ref(out: &Path, args: &SolveRefArgs) -> Result<()> {
    let spec = args.problem.spec()?;
    let grid = args.reference.grid(&spec)?;
    create_dir(out)?;
    let reference = fv_solve(&spec, &grid, args.reference.cfl)?;
    let path = match args.format {
        RefFormat::Bin => out.join("reference.bin"),
        RefFormat::Csv => out.join("reference.csv"),
    };
    match args.format {
        RefFormat::Bin => reference.save_binary(&path)?,
        RefFormat::Csv => reference.save_csv(&path)?,
    }
    let initial = reference.mass(0);
    let drift = (0..grid.levels)
        .map(|n| (reference.mass(n) - initial).abs() / initial.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let mut summary = json!({
        "reference": path,
        "problem": spec,
        "grid": grid,
        "cfl": reference.cfl,
        "steps": reference.steps,
        "negative_overshoot": reference.negative_overshoot,
        "initial_mass": initial,
        "max_relative_mass_drift": drift,
    });
    if !args.convergence.is_empty() {
        let table = fv_convergence_study(&spec, &args.convergence, args.reference.cfl)?;
        let mut writer = csv::Writer::from_path(out.join("convergence.csv"))?;
        writer.write_record(["cells", "l1_distance_to_coarser", "order"])?;
        for row in &table.rows {
            let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
            writer.write_record([row.cells.to_string(), opt(row.error), opt(row.order)])?;
        }
        writer.flush().map_err(|e| Error::io(out.join("convergence.csv"), e))?;
        summary["fitted_order"] = json!(table.fitted_order);
    }
    write_json(&out.join("reference.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_reference(path: &Path, spec: &ProblemSpec) -> Result<RefSolution> {
    let reference = RefSolution::load(path)?;
    reference.check_compatible(spec)?;
    Ok(reference)
}

fn train_cmd(out: &Path, args: &TrainArgs) -> Result<()> {
    let spec = args.problem.spec()?;
    let net = NetConfig::new(args.net.depth, args.net.width, args.net.activation, args.net.seed);
    let mut config = args.training.config(args.net.seed);
    config.checkpoints = args.checkpoints.clone();
    net.validate()?;
    config.validate()?;
    let reference = match &args.reference_file {
        Some(path) => load_reference(path, &spec)?,
        None => fv_solve(&spec, &args.reference.grid(&spec)?, args.reference.cfl)?,
    };
    create_dir(out)?;

    let trained = match train(&net, &spec, &config) {
        Ok(report) => report,
        Err(Error::Diverged { epoch, reason, state }) => {
            if let Some(state) = &state {
                state.params.save(&net, &out.join("diverged.params"))?;
                write_history_csv(&state.history, &out.join("history.csv"))?;
            }
            return Err(Error::Diverged { epoch, reason, state });
        }
        Err(e) => return Err(e),
    };
    let eval = energy_norm(&trained.params, &net, &spec, &reference)?;
    trained.params.save(&net, &out.join("params.txt"))?;
    write_history_csv(&trained.history, &out.join("history.csv"))?;
    eval.write_csv(&reference, &out.join("error_by_level.csv"))?;

    let mut checkpoints = Vec::new();
    for cp in &trained.checkpoints {
        let path = out.join(format!("checkpoint-{}.params", cp.epoch));
        cp.params.save(&net, &path)?;
        let norm = energy_norm(&cp.params, &net, &spec, &reference)?.energy_norm;
        checkpoints.push(json!({
            "epoch": cp.epoch,
            "params": path,
            "elapsed_secs": cp.elapsed_secs,
            "energy_norm": norm,
            "loss": loss_json(&cp.loss),
        }));
    }
    if args.plot_data {
        let plot = out.join("plot-data");
        create_dir(&plot)?;
        let times = [0.0, 0.25, 0.5, 0.75, 1.0].map(|f| f * spec.horizon);
        write_solution_profiles(
            &plot.join("solution_profiles.csv"),
            &trained.params,
            &net,
            &reference,
            &times,
        )?;
        profile(&trained.params, &net, &times, 2048)?.write_csv(&plot.join("network_profile.csv"))?;
        eval.write_csv(&reference, &plot.join("error_by_level.csv"))?;
        write_history_csv(&trained.history, &plot.join("loss_history.csv"))?;
    }

    let summary = json!({
        "net": net,
        "train": config,
        "problem": spec,
        "init_scheme": net.activation.init_scheme().as_str(),
        "reference": { "grid": reference.grid, "cfl": reference.cfl },
        "energy_norm": eval.energy_norm,
        "max_abs_error": eval.max_abs_error,
        "n_eval": eval.n_eval,
        "wall_clock_secs": trained.wall_clock_secs,
        "epochs_completed": trained.epochs_completed,
        "stopped_early": trained.stopped_early,
        "final_loss": loss_json(&trained.final_loss),
        "checkpoints": checkpoints,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{net}: energy norm {:.4e}, final loss {:.4e}, {:.1} s, outputs in {}",
        eval.energy_norm,
        trained.final_loss.total,
        trained.wall_clock_secs,
        out.display()
    );
    Ok(())
}

fn write_report(store: &Store) -> Result<String> {
    let records = store.load_all()?;
    let rep = report(&records)?;
    let csv_path = store.root().join("report.csv");
    fs::write(&csv_path, &rep.csv).map_err(|e| Error::io(&csv_path, e))?;
    let txt_path = store.root().join("report.txt");
    fs::write(&txt_path, &rep.summary).map_err(|e| Error::io(&txt_path, e))?;

    let plot = store.root().join("plot-data");
    create_dir(&plot)?;
    let front_path = plot.join("pareto_front.csv");
    let mut writer = csv::Writer::from_path(&front_path)?;
    writer.write_record([
        "cell_id",
        "activation",
        "depth",
        "width",
        "epochs",
        "n_colloc",
        "wall_clock_secs",
        "energy_norm",
    ])?;
    for r in pareto_front(&records) {
        writer.write_record([
            r.cell_id.clone(),
            r.cell.activation.to_string(),
            r.cell.depth.to_string(),
            r.cell.width.to_string(),
            r.cell.epochs.to_string(),
            r.cell.n_colloc.to_string(),
            format!("{:e}", r.wall_clock_secs),
            format!("{:e}", r.energy_norm.unwrap_or(f64::NAN)),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(&front_path, e))?;
    Ok(rep.summary)
}

fn sweep_cmd(out: &Path, args: &SweepArgs) -> Result<()> {
    let spec = args.problem.spec()?;
    let grid = SweepGrid {
        activations: args.activations.clone(),
        shapes: args.shapes.clone(),
        epochs: args.epochs.clone(),
        colloc: args.colloc.clone(),
        seeds: args.seeds.clone(),
    };
    let template = TrainConfig {
        n_ic: args.n_ic,
        n_quad: args.quad,
        adam: AdamConfig {
            learning_rate: args.lr,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let root = args.store.clone().unwrap_or_else(|| out.join("sweep"));
    let mut options = SweepOptions::new(&root);
    if let Some(p) = args.parallelism {
        options.parallelism = p.max(1);
    }
    options.force = args.force;
    options.reference_grid = Some(args.reference.grid(&spec)?);
    options.cfl = args.reference.cfl;
    let outcome = run_sweep(&grid, &spec, &template, &options)?;
    println!("{} cells, {} trained now", outcome.records.len(), outcome.trained);
    print!("{}", write_report(&Store::open(&root)?)?);
    Ok(())
}

fn eval_cmd(out: &Path, args: &EvalArgs) -> Result<()> {
    let (net, params) = ParamSet::load(&args.checkpoint)?;
    let reference = RefSolution::load(&args.reference)?;
    let eval = energy_norm(&params, &net, &reference.spec, &reference)?;
    create_dir(out)?;
    eval.write_csv(&reference, &out.join("error_by_level.csv"))?;
    let mut summary = report_json(&eval);
    summary["net"] = json!(net);
    summary["problem"] = json!(reference.spec);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn profile_cmd(out: &Path, args: &ProfileArgs) -> Result<()> {
    let (net, params) = ParamSet::load(&args.checkpoint)?;
    let plot = out.join("plot-data");
    create_dir(&plot)?;
    profile(&params, &net, &args.times, args.points)?.write_csv(&plot.join("network_profile.csv"))?;
    if let Some(path) = &args.reference {
        let reference = RefSolution::load(path)?;
        write_solution_profiles(
            &plot.join("solution_profiles.csv"),
            &params,
            &net,
            &reference,
            &args.times,
        )?;
        let eval = energy_norm(&params, &net, &reference.spec, &reference)?;
        eval.write_csv(&reference, &plot.join("error_by_level.csv"))?;
    }
    println!("plot data in {}", plot.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::SolveRef(args) => solve_ref(out, args),
        Command::Train(args) => train_cmd(out, args),
        Command::Sweep(args) => sweep_cmd(out, args),
        Command::Eval(args) => eval_cmd(out, args),
        Command::Report(args) => {
            let root = args.store.clone().unwrap_or_else(|| out.join("sweep"));
            if !root.join("cells").is_dir() {
                return Err(Error::io(
                    &root,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no sweep store here"),
                ));
            }
            print!("{}", write_report(&Store::open(root)?)?);
            Ok(())
        }
        Command::Profile(args) => profile_cmd(out, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let category = kuramoto_pinn::ErrorCategory::InvalidInput;
            eprint!(
                "error[{}]: {}",
                category.as_str(),
                rendered.trim_start_matches("error: ")
            );
            return ExitCode::from(category.exit_code() as u8);
        }
    };
    let default_level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {e}", category.as_str());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
