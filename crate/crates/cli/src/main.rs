use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mutbench_core::config::BenchConfig;
use mutbench_core::ir::{serialize_program, Program};
use mutbench_core::mutation::{
    apply_mutations_with, find_mutations_with, FinderConfig, MutantSpec, MutationId, OperatorKind,
};
use mutbench_core::runner::{self, RunError};

#[derive(Parser)]
#[command(
    name = "mutbench",
    version,
    about = "Mutation analysis bench for fuzzers over a small IR"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List every mutation point of a subject as JSON.
    Find {
        subject: PathBuf,
        /// Comma-separated operator names to keep, e.g. SIGNED_LT,DELETE_CALL.
        #[arg(long, value_delimiter = ',')]
        operators: Vec<OperatorKind>,
        /// Payloads per (site, operator); must match the run config to keep ids aligned.
        #[arg(long, default_value_t = 1)]
        max_payloads: usize,
        /// Write to this file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Apply mutation ids to a subject and print the mutant IR.
    Mutate {
        subject: PathBuf,
        /// Comma-separated mutation ids; empty prints the canonical program.
        #[arg(long, default_value = "")]
        ids: String,
        #[arg(long, default_value_t = 1)]
        max_payloads: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the full evaluation described by a config file.
    Run {
        config: PathBuf,
        /// Evaluate with the sanitizer enabled.
        #[arg(long)]
        sanitize: bool,
        #[arg(long, env = "MUTBENCH_SEED")]
        seed: Option<u64>,
        /// Override the output directory of the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fuzz sampled stubborn mutations of a finished run individually with the long budget.
    Singletons {
        config: PathBuf,
        #[arg(long = "long-singletons", default_value_t = 10)]
        count: usize,
        #[arg(long, env = "MUTBENCH_SEED")]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-derive the report files from the ledgers of a run directory.
    Report { dir: PathBuf },
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Usage(e.into()))
}

fn classify(e: RunError) -> anyhow::Error {
    match e {
        RunError::Parse { .. } | RunError::Config(_) => usage(e),
        other => other.into(),
    }
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Program> {
    runner::load_subject(path).map_err(usage)
}

fn load_config(path: &Path, seed: Option<u64>, output: Option<PathBuf>) -> Result<BenchConfig> {
    let mut cfg = BenchConfig::load(path).map_err(|e| classify(RunError::Config(e)))?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn parse_ids(text: &str) -> Result<Vec<MutationId>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map(MutationId)
                .map_err(|_| usage(anyhow::anyhow!("bad mutation id '{s}'")))
        })
        .collect()
}

fn finder(max_payloads: usize) -> Result<FinderConfig> {
    if max_payloads == 0 {
        return Err(usage(anyhow::anyhow!("--max-payloads must be positive")));
    }
    Ok(FinderConfig {
        operators: None,
        max_payloads,
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Find {
            subject,
            operators,
            max_payloads,
            output,
        } => {
            let program = load(&subject)?;
            let keep: BTreeSet<OperatorKind> = operators.into_iter().collect();
            let points: Vec<_> = find_mutations_with(&program, &finder(max_payloads)?)
                .into_iter()
                .filter(|m| keep.is_empty() || keep.contains(&m.operator))
                .collect();
            let records = runner::mutation_records(&program, &points);
            let text = serde_json::to_string_pretty(&records)? + "\n";
            emit(output.as_deref(), text.as_bytes())
        }
        Command::Mutate {
            subject,
            ids,
            max_payloads,
            output,
        } => {
            let program = load(&subject)?;
            let spec = MutantSpec::new(parse_ids(&ids)?);
            let points = find_mutations_with(&program, &finder(max_payloads)?);
            let mutant = apply_mutations_with(&program, &points, &spec).map_err(usage)?;
            emit(output.as_deref(), &serialize_program(&mutant))
        }
        Command::Run {
            config,
            sanitize,
            seed,
            output,
        } => {
            let mut cfg = load_config(&config, seed, output)?;
            cfg.sanitize |= sanitize;
            let report = runner::run(&cfg).map_err(classify)?;
            for s in &report.subjects {
                println!(
                    "{}: {} mutants, {} supermutants, killed {} ({}%)",
                    s.subject,
                    s.mutants,
                    s.reduction.supermutants,
                    s.combined.total_killed,
                    mutbench_core::report::percent(s.combined.total_killed, s.mutants)
                );
            }
            println!("report written to {}", cfg.output.display());
            Ok(())
        }
        Command::Singletons {
            config,
            count,
            seed,
            output,
        } => {
            let cfg = load_config(&config, seed, output)?;
            let rows = runner::singletons(&cfg, count).map_err(classify)?;
            println!("subject,fuzzer,id,operator,executions,killed");
            for r in &rows {
                println!(
                    "{},{},{},{},{},{}",
                    r.subject, r.fuzzer, r.id.0, r.operator, r.executions, r.killed
                );
            }
            let extra = rows.iter().filter(|r| r.killed).count();
            println!("extra kills: {extra} of {}", rows.len());
            Ok(())
        }
        Command::Report { dir } => {
            runner::rewrite_report(&dir).map_err(classify)?;
            println!("report re-derived in {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
