//! `zigprune`: partition, train, compress and inspect structurally pruned
//! networks.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zigprune_core::export_dot;
use zigprune_core::harness::{
    compress_run, eval_run, load_graph, load_metrics, run_ablation_dhspg_vs_hspg, run_lemma_probes,
    run_pipeline, run_runtime_bench, DatasetSpec, ExperimentConfig, QuadraticProbe,
    SyntheticGroupSparseProblem,
};
use zigprune_core::{partition, PartitionResult};

#[derive(Parser)]
#[command(
    name = "zigprune",
    version,
    about = "Structured pruning through zero-invariant groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the zero-invariant group partition of a graph as JSON.
    Partition {
        /// Graph JSON file or builder name (demo_net, residual_block_net,
        /// stacked_unets_mini, chain_net:<blocks>).
        graph: String,
        /// Write the partition here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the full pipeline of an experiment config.
    Train { config: PathBuf },
    /// Rebuild the compressed model of a finished run and re-check it.
    Compress { run_dir: PathBuf },
    /// Evaluate the stored full and compressed models on the stored test set.
    Eval { run_dir: PathBuf },
    /// Print a graph as DOT, colored by partition component when given one.
    Viz {
        graph: String,
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Summarize the metrics of a finished run.
    Report {
        run_dir: PathBuf,
        /// Print the raw metrics JSON.
        #[arg(long)]
        json: bool,
    },
    /// DHSPG targets against an HSPG λ sweep on the group-sparse regression.
    Ablate { config: PathBuf },
    /// Check the descent and magnitude inequalities on a random quadratic.
    Probes {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        #[arg(long, default_value_t = 5)]
        group_size: usize,
        #[arg(long, default_value_t = 0.5)]
        omega: f64,
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
    },
    /// Time DHSPG against momentum SGD epochs on an experiment config.
    Runtime { config: PathBuf },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition { graph, output } => {
            let g = load_graph(&graph)?;
            let p = partition(&g)?;
            eprintln!(
                "{} groups in {} prunable components, {} excluded",
                p.zigs.len(),
                p.prunable_components().len(),
                p.excluded.len()
            );
            match output {
                Some(path) => write_file(&path, &p.to_json())?,
                None => println!("{}", p.to_json()),
            }
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let m = run_pipeline(&cfg)?;
            print!("{}", m.summary());
            println!("artifacts in {}", cfg.output_path().display());
        }
        Command::Compress { run_dir } => {
            let (report, eq) = compress_run(&run_dir)?;
            println!("{}", report.to_json());
            println!("{}", eq.to_json());
        }
        Command::Eval { run_dir } => {
            println!("{}", to_json(&eval_run(&run_dir)?)?);
        }
        Command::Viz {
            graph,
            partition: part,
        } => {
            let g = load_graph(&graph)?;
            let coloring = match part {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    Some(PartitionResult::from_json(&text)?.coloring())
                }
                None => None,
            };
            print!("{}", export_dot(&g, coloring.as_ref()));
        }
        Command::Report { run_dir, json } => {
            let m = load_metrics(&run_dir)?;
            if json {
                println!("{}", to_json(&m)?);
            } else {
                print!("{}", m.summary());
            }
        }
        Command::Ablate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let problem = match &cfg.dataset {
                DatasetSpec::SyntheticRegression(p) => p.clone(),
                _ => SyntheticGroupSparseProblem::default(),
            };
            let table = run_ablation_dhspg_vs_hspg(
                &problem,
                &cfg.ablation_targets,
                &cfg.ablation_lambdas,
                &cfg.regression,
                cfg.seed,
            )?;
            let dir = cfg.output_path();
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            write_file(&dir.join("ablation.csv"), &table.to_csv())?;
            write_file(&dir.join("ablation.json"), &to_json(&table)?)?;
            println!(
                "true support {:?}, oracle objective {:.6e}",
                table.true_support, table.oracle_objective
            );
            print!("{}", table.to_csv());
        }
        Command::Probes {
            trials,
            seed,
            groups,
            group_size,
            omega,
            rho,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut probe = QuadraticProbe::random(groups, group_size, &mut rng)?;
            probe.omega = omega;
            probe.rho = rho;
            let report = run_lemma_probes(&probe, trials, &mut rng)?;
            println!("{}", to_json(&report)?);
            if !report.passed() {
                bail!("lemma probes failed");
            }
        }
        Command::Runtime { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let r = run_runtime_bench(&cfg)?;
            println!("{}", to_json(&r)?);
        }
    }
    Ok(())
}
