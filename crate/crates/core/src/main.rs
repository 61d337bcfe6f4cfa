//! Command-line entry points: `run` (cycle-loop experiments), `select`
//! (standalone batch selection over a score file), `report` (cross-seed
//! aggregation) and `gradcheck` (finite-difference verification).
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime/numerics failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use adasel::baselines;
use adasel::data::load_external_scores;
use adasel::error::Error;
use adasel::experiment::{
    mix_seed, run_experiment, write_run_artifacts, ExperimentConfig, SamplerKind,
};
use adasel::gradcheck::{run_gradcheck, GradCheckConfig};
use adasel::nn::NetDims;
use adasel::report::{aggregate, plot_data_csv, read_metrics_csv, summary_csv};
use adasel::submodular::{greedy_select, CandidatePool, MixWeights};

#[derive(Parser)]
#[command(
    name = "adasel",
    version,
    about = "Active domain adaptation experiments at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full cycle-loop experiment from a JSON config.
    Run(RunArgs),
    /// Select a batch from an external score file, no model required.
    Select(SelectArgs),
    /// Aggregate run directories into per-cycle mean and standard error.
    Report(ReportArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; missing fields take the stock defaults.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, one independent run each (defaults to the
    /// config's seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory; each run writes out/seed_<s>/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Score CSV (with its .meta.json sidecar).
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value = "submodular")]
    sampler: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, each holding a metrics.csv.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for summary.csv and plot_data.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Network dims as input,hidden,embed,disc_hidden,classes.
    #[arg(long, default_value = "2,4,3,4,3")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fault-injection hook for tests: corrupt this term's gradient.
    #[arg(long, hide = true)]
    corrupt_term: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code conventions differ; validation errors are 1
            // here, while --help/--version stay 0.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Select(args) => cmd_select(args),
        Command::Report(args) => cmd_report(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn cmd_run(args: RunArgs) -> adasel::Result<ExitCode> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::io(format!("reading config {}", args.config.display()), e))?;
    let base: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.config.display())))?;
    base.validate()?;

    let seeds = if args.seeds.is_empty() {
        vec![base.seed]
    } else {
        let mut distinct = args.seeds.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != args.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        args.seeds
    };

    for seed in seeds {
        let cfg = ExperimentConfig {
            seed,
            ..base.clone()
        };
        let result = run_experiment(&cfg)?;
        let dir = args.out.join(format!("seed_{seed}"));
        write_run_artifacts(&dir, &cfg, &result)?;
        let last = result.cycles.last().expect("at least one cycle");
        println!(
            "seed {seed}: {} cycles, budget {}, final test accuracy {:.4} -> {}",
            result.cycles.len(),
            result.budget_per_cycle,
            last.test_accuracy,
            dir.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SelectManifest {
    scores: String,
    sampler: String,
    budget: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
}

#[derive(Serialize)]
struct SelectOutput {
    manifest: SelectManifest,
    #[serde(flatten)]
    report: adasel::submodular::SelectionReport,
}

fn cmd_select(args: SelectArgs) -> adasel::Result<ExitCode> {
    let scores = load_external_scores(&args.scores)?;
    if args.budget == 0 || args.budget > scores.rows.len() {
        return Err(Error::InvalidConfig(format!(
            "budget {} out of range for {} rows",
            args.budget,
            scores.rows.len()
        )));
    }
    let sampler: SamplerKind = args.sampler.parse()?;
    let ids = scores.ids();
    let originals = scores.originals();

    let report = match sampler {
        SamplerKind::Submodular => {
            let weights = MixWeights::new(args.alpha, args.beta)?;
            let bundles: Vec<adasel::perturb::PerturbationBundle> = scores
                .rows
                .iter()
                .map(|r| adasel::perturb::PerturbationBundle {
                    original: r.original.clone(),
                    perturbed: r.perturbed.clone(),
                })
                .collect();
            let pool = CandidatePool::from_bundles(ids.clone(), &bundles)?;
            greedy_select(&pool, args.budget, &weights)?
        }
        SamplerKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(args.seed, 0x7A4D));
            baselines::random_select(&ids, args.budget, &mut rng)?
        }
        SamplerKind::Entropy => baselines::entropy_select(&ids, &originals, args.budget)?,
        SamplerKind::Margin => baselines::margin_select(&ids, &originals, args.budget)?,
        SamplerKind::KCenter => {
            let embeddings = scores.embeddings().ok_or_else(|| {
                Error::InvalidConfig("kcenter needs embedding columns in the score file".into())
            })?;
            baselines::kcenter_select(&ids, &embeddings, &[], args.budget)?
        }
        SamplerKind::Aada => {
            let disc = scores.discriminator_outputs().ok_or_else(|| {
                Error::InvalidConfig("aada needs a discriminator column in the score file".into())
            })?;
            baselines::aada_select(&ids, &originals, &disc, args.budget)?
        }
        SamplerKind::Badge => {
            let embeddings = scores.embeddings().ok_or_else(|| {
                Error::InvalidConfig("badge needs embedding columns in the score file".into())
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(args.seed, 0xBAD6E));
            baselines::badge_select(&ids, &originals, &embeddings, args.budget, &mut rng)?
        }
    };

    let output = SelectOutput {
        manifest: SelectManifest {
            scores: args.scores.display().to_string(),
            sampler: args.sampler.clone(),
            budget: args.budget,
            alpha: args.alpha,
            beta: args.beta,
            seed: args.seed,
        },
        report,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&output)?)
        .map_err(|e| Error::io(format!("writing {}", args.out.display()), e))?;
    println!(
        "selected {} ids -> {}",
        output.report.ids.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> adasel::Result<ExitCode> {
    let mut runs = Vec::new();
    let mut labels = Vec::new();
    for dir in &args.runs {
        let path = dir.join("metrics.csv");
        runs.push(read_metrics_csv(&path)?);
        labels.push(
            dir.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string()),
        );
    }
    let summary = aggregate(&runs)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(format!("creating {}", args.out.display()), e))?;
    std::fs::write(args.out.join("summary.csv"), summary_csv(&summary))
        .map_err(|e| Error::io("writing summary.csv", e))?;
    std::fs::write(
        args.out.join("plot_data.csv"),
        plot_data_csv(&labels, &runs),
    )
    .map_err(|e| Error::io("writing plot_data.csv", e))?;
    for row in &summary {
        println!(
            "cycle {}: {} labeled, accuracy {:.4} +/- {:.4} (n={})",
            row.cycle, row.n_labeled, row.mean_accuracy, row.stderr_accuracy, row.n_runs
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> adasel::Result<ExitCode> {
    let parts: Vec<usize> = args
        .dims
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad dims component {p:?}")))
        })
        .collect::<adasel::Result<_>>()?;
    if parts.len() != 5 {
        return Err(Error::InvalidConfig(
            "dims must be input,hidden,embed,disc_hidden,classes".into(),
        ));
    }
    let cfg = GradCheckConfig {
        dims: NetDims::new(parts[0], parts[1], parts[2], parts[3], parts[4]),
        seed: args.seed,
        corrupt_term: args.corrupt_term,
        ..GradCheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    println!("{:<22} {:>12}  result", "term", "max_rel_err");
    for row in &report.rows {
        println!(
            "{:<22} {:>12.3e}  {}",
            row.term,
            row.max_rel_err,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    if report.pass {
        println!("all terms within {:.0e}", report.tolerance);
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check failed");
        Ok(ExitCode::from(2))
    }
}
