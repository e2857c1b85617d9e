use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leakbench::config::ExperimentConfig;
use leakbench::experiment::{run_experiment, steps, ExperimentPlan, DATA_DIR, SPLIT_FILE};
use leakbench::splitter::TrainingSet;
use leakbench::Error;

/// Speaker-overlap leakage benchmark.
///
/// Exit codes: 0 on success, 1 when an input or split fails validation,
/// 2 when a run fails for any other reason.
#[derive(Parser)]
#[command(name = "leakbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`; seeds not set explicitly are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArg {
    /// Data directory (manifest.csv + views/). Defaults to the config's source.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArg {
    /// Split plan file. Defaults to `<out>/split.txt`.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct RunArg {
    /// Arm as `family/featurizer/variant`.
    #[arg(long)]
    arm: String,
    /// Training set, `A` or `B`.
    #[arg(long)]
    set: TrainingSet,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into `<out>/data`.
    Synth(#[command(flatten)] Common),
    /// Build and audit the split; writes `split.txt` and `audit.txt`.
    Split {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Re-audit an existing split plan against a data directory.
    Audit {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        plan: PathBuf,
        /// Config used to resolve the data source when `--data` is absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one arm on one training set.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        plan: PlanArg,
        #[command(flatten)]
        run: RunArg,
    },
    /// Score a trained model on the test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        plan: PlanArg,
        #[command(flatten)]
        run: RunArg,
    },
    /// Collect per-run metrics into `report.txt` and `table.txt`.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        plan: PlanArg,
    },
    /// Run every stage end to end.
    Run(#[command(flatten)] Common),
}

fn plan_path(plan: &PlanArg, common: &Common) -> PathBuf {
    plan.plan
        .clone()
        .unwrap_or_else(|| common.out.join(SPLIT_FILE))
}

fn run(cli: Cli) -> leakbench::Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let config = ExperimentConfig::load(&c.config, c.seed)?;
            let dir = c.out.join(DATA_DIR);
            steps::synth(&config, &dir)?;
            println!("wrote {}", dir.display());
        }
        Command::Split { common, data } => {
            let config = ExperimentConfig::load(&common.config, common.seed)?;
            let d = steps::data(&config, data.data.as_deref())?;
            let audit = steps::split(&config, &d, &common.out)?;
            print!("{audit}");
        }
        Command::Audit {
            data,
            plan,
            config,
            seed,
        } => {
            let d = match (data.data, config) {
                (Some(dir), _) => leakbench::dataset::Dataset::load_dir(dir)?,
                (None, Some(c)) => steps::data(&ExperimentConfig::load(c, seed)?, None)?,
                (None, None) => return Err(Error::Config("audit needs --data or --config".into())),
            };
            let audit = steps::audit(&d, &plan)?;
            print!("{audit}");
            if !audit.is_clean() {
                return Err(Error::Validation("split audit failed".into()));
            }
        }
        Command::Train {
            common,
            data,
            plan,
            run,
        } => {
            let config = ExperimentConfig::load(&common.config, common.seed)?;
            let d = steps::data(&config, data.data.as_deref())?;
            let model = steps::train(
                &config,
                &d,
                &plan_path(&plan, &common),
                &run.arm,
                run.set,
                &common.out,
            )?;
            println!(
                "trained {} on Training Set {} ({} segments)",
                run.arm, run.set, model.training_size
            );
        }
        Command::Evaluate {
            common,
            data,
            plan,
            run,
        } => {
            let config = ExperimentConfig::load(&common.config, common.seed)?;
            let d = steps::data(&config, data.data.as_deref())?;
            let row = steps::evaluate(
                &config,
                &d,
                &plan_path(&plan, &common),
                &run.arm,
                run.set,
                &common.out,
            )?;
            let m = &row.metrics;
            println!(
                "{} set {}: macro_f1 {:.4}  accuracy {:.4}  spk_id {:.4} (chance {:.4})",
                row.arm,
                row.training_set,
                m.dep_macro_f1,
                m.dep_accuracy,
                m.spk_id_accuracy,
                m.chance_level
            );
        }
        Command::Report { common, data, plan } => {
            let config = ExperimentConfig::load(&common.config, common.seed)?;
            let d = steps::data(&config, data.data.as_deref())?;
            let report = steps::report(&config, &d, &plan_path(&plan, &common), &common.out)?;
            print!("{}", report.table());
        }
        Command::Run(c) => {
            let config = ExperimentConfig::load(&c.config, c.seed)?;
            let report = run_experiment(&ExperimentPlan {
                config,
                out_dir: c.out,
            })?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
