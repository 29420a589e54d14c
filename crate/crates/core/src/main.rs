use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pinn_generalization::experiments::{export_plot_data, preset, run_sweep, ResultsStore, SweepSpec, SweepSummary};
use pinn_generalization::genlevel::EPSILONS;
use pinn_generalization::mlp::MlpArchitecture;
use pinn_generalization::problem::{Interval, PoissonProblem};
use pinn_generalization::training::{train_single, TrainConfig};
use pinn_generalization::{Error, Model};

#[derive(Parser)]
#[command(name = "pinn-gen", version, about = "Train PINN ensembles and measure how far they generalize")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its record as JSON.
    Train(TrainArgs),
    /// Run a sweep preset (or a JSON spec) into a results store.
    Sweep(SweepArgs),
    /// Print the stored generalization-level table of a sweep.
    Genlevel(StoreArgs),
    /// Print the stored Kruskal-Wallis table of a sweep.
    Stats(StoreArgs),
    /// Write CSV plot tables for a stored sweep.
    PlotData(StoreArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50,50")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = -std::f64::consts::PI, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = std::f64::consts::PI, allow_hyphen_values = true)]
    hi: f64,
    #[arg(long, default_value_t = 100)]
    n_cp: usize,
    #[arg(long, default_value_t = 10_000)]
    adam_iters: usize,
    #[arg(long, default_value_t = 10_000)]
    lbfgs_iters: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// JSON file with a full sweep spec.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    adam_iters: Option<usize>,
    #[arg(long)]
    lbfgs_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    store: PathBuf,
}

#[derive(Args)]
struct StoreArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    sweep: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::OptimizerAbort { .. } => 2,
        Error::Io { .. } | Error::Json { .. } | Error::MissingSweep { .. } => 3,
        Error::Contract(_) | Error::Config(_) | Error::UnknownPreset(_) => 1,
    }
}

fn train(args: TrainArgs) -> Result<u8, Error> {
    let arch = MlpArchitecture::new(args.hidden)?;
    let problem = PoissonProblem::on(Interval::new(args.lo, args.hi)?)?;
    let config = TrainConfig {
        adam_iters: args.adam_iters,
        lbfgs_max_iters: args.lbfgs_iters,
        adam_lr: args.lr,
        n_cp: args.n_cp,
        seed: args.seed,
        ..TrainConfig::baseline()
    };
    let model: Model = train_single(&problem, &arch, &config)?;
    let json = serde_json::to_string_pretty(&model).expect("model serializes");
    match &args.out {
        Some(path) => fs::write(path, json).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => println!("{json}"),
    }
    eprintln!(
        "trained {} params in {:.2}s, loss {:.3e}, {:?}",
        model.params.values.len(),
        model.wall_time_s,
        model.final_loss,
        model.converged_by
    );
    if let Some(reason) = &model.failure {
        eprintln!("training aborted: {reason}");
        return Ok(2);
    }
    Ok(0)
}

fn load_spec(path: &Path) -> Result<SweepSpec, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn sweep(args: SweepArgs) -> Result<u8, Error> {
    let mut spec = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name)?,
        (None, Some(path)) => load_spec(path)?,
        (None, None) => unreachable!("clap requires one of --preset/--config"),
    };
    if let Some(n) = args.ensemble {
        spec = spec.with_ensemble_size(n);
    }
    if let Some(n) = args.adam_iters {
        spec = spec.with_adam_iters(n);
    }
    if let Some(n) = args.lbfgs_iters {
        spec = spec.with_lbfgs_iters(n);
    }
    if let Some(s) = args.seed {
        spec = spec.with_seed(s);
    }
    let store = ResultsStore::open(&args.store)?;
    eprintln!(
        "sweep {}: {} levels x {} models -> {}",
        spec.name,
        spec.levels.len(),
        spec.ensemble_size,
        store.run_dir(&spec).display()
    );
    let summary = run_sweep(&spec, &store)?;
    print_genlevel(&summary);
    print_stats(&summary);
    Ok(0)
}

fn print_genlevel(s: &SweepSummary) {
    for (k, side) in s.levels[0].sides.iter().enumerate() {
        println!("G_l ({} side)", side.side.name());
        print!("{:>12}", "level");
        for e in EPSILONS {
            print!("{:>12}", format!("eps={e:.0e}"));
        }
        println!("{:>12}{:>12}{:>8}", "time_mean", "time_var", "failed");
        for l in &s.levels {
            print!("{:>12}", l.label);
            for r in &l.sides[k].genlevel {
                print!("{:>12.4}", r.ensemble_g_l);
            }
            println!("{:>12.3}{:>12.3}{:>8}", l.timing.mean_s, l.timing.variance_s, l.n_failed);
        }
    }
}

fn print_stats(s: &SweepSummary) {
    println!("Kruskal-Wallis across levels ({} side)", s.tests.first().map_or("-", |t| t.side.name()));
    println!("{:>10}{:>12}{:>14}{:>6}", "epsilon", "H", "p", "sig");
    for t in &s.tests {
        match &t.kruskal_wallis {
            Some(kw) => println!(
                "{:>10.0e}{:>12.4}{:>14.4e}{:>6}",
                t.epsilon,
                kw.statistic,
                kw.p_value,
                if kw.significant() { "*" } else { "" }
            ),
            None => println!("{:>10.0e}{:>12}{:>14}", t.epsilon, "n/a", "n/a"),
        }
    }
}

fn stored(args: &StoreArgs) -> Result<(ResultsStore, SweepSummary), Error> {
    let store = ResultsStore::open(&args.store)?;
    let summary = store.load_summary(&args.sweep)?;
    Ok((store, summary))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Genlevel(a) => {
            print_genlevel(&stored(&a)?.1);
            Ok(0)
        }
        Command::Stats(a) => {
            print_stats(&stored(&a)?.1);
            Ok(0)
        }
        Command::PlotData(a) => {
            let (store, _) = stored(&a)?;
            for p in export_plot_data(&store, &a.sweep)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
