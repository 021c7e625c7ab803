//! End-to-end runs over a [`BenchConfig`]: per-stage artifacts under
//! `work/<subject>/<fuzzer>/`, then reports derived from those ledgers.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BenchConfig, ConfigError};
use crate::fuzz::{fuzz, FuzzBudget, FuzzTarget};
use crate::ir::{parse_program, serialize_program, site_lines, ParseError, Program};
use crate::mutation::{
    find_mutations_with, MutantSpec, MutationId, MutationPoint, OperatorKind, Payload,
};
use crate::pipeline::{
    collect_seeds, confirm_kill, derive_seed, phase1, phase2, EvalContext, MutationVerdict,
    Phase2Settings, PhaseResult, PipelineError, SeedSelection, StageCost,
};
use crate::report::{
    build_report, write_outputs, CostLedger, FuzzerLedger, ReportError, ReportInput, RunReport,
};
use crate::scheduler::{build_supermutants, CoverageMatrix, SchedulerError, Supermutant};
use crate::vm::{BuildMode, Vm};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {msg}")]
    Artifact { path: PathBuf, msg: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("artifact types serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Artifact {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn mkdir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Reads and parses a subject file.
pub fn load_subject(path: &Path) -> Result<Program, RunError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_program(&bytes).map_err(|source| RunError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// One row of `mutations.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub id: MutationId,
    pub site: u32,
    pub function: String,
    pub operator: OperatorKind,
    pub payload: Payload,
    pub source_line: usize,
}

pub fn mutation_records(p: &Program, points: &[MutationPoint]) -> Vec<MutationRecord> {
    let lines = site_lines(p);
    points
        .iter()
        .map(|m| MutationRecord {
            id: m.id,
            site: m.site.0,
            function: m.function.clone(),
            operator: m.operator,
            payload: m.payload.clone(),
            source_line: lines[&m.site],
        })
        .collect()
}

/// Subject-level bookkeeping stored next to the per-fuzzer ledgers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub program: String,
    pub fuzzers: Vec<String>,
    pub sanitize: bool,
    pub alternate: bool,
    pub initial_supermutants: usize,
    pub cost: CostLedger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RunIndex {
    subjects: Vec<String>,
}

#[derive(Serialize)]
struct PhaseArtifact<'a> {
    records: &'a [crate::pipeline::SupermutantRecord],
    cost: StageCost,
}

struct Log {
    file: fs::File,
    start: Instant,
}

impl Log {
    fn open(path: &Path) -> Result<Log, RunError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        Ok(Log {
            file,
            start: Instant::now(),
        })
    }

    fn line(&mut self, msg: &str) {
        let _ = writeln!(
            self.file,
            "[{:>8.2}s] {msg}",
            self.start.elapsed().as_secs_f64()
        );
    }
}

fn subject_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "subject".to_string())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, RunError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))
}

/// Executes the whole pipeline for every subject and writes the reports.
pub fn run(cfg: &BenchConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let out = &cfg.output;
    mkdir(&out.join("work"))?;
    let mut log = Log::open(&out.join("run.log"))?;
    let config_copy = toml::to_string(cfg).map_err(|e| RunError::Pool(e.to_string()))?;
    fs::write(out.join("config.toml"), config_copy).map_err(io_err(out))?;
    let dictionary = cfg.dictionary_tokens()?;
    let pool = pool(cfg.workers)?;

    let mut names = Vec::new();
    for path in &cfg.subjects {
        let name = subject_name(path);
        log.line(&format!("subject {name}: start"));
        let result = pool.install(|| run_subject(cfg, path, &name, &dictionary, &mut log));
        if let Err(e) = &result {
            log.line(&format!("subject {name}: failed: {e}"));
        }
        result?;
        log.line(&format!("subject {name}: done"));
        names.push(name);
    }
    write_json(
        &out.join("work").join("index.json"),
        &RunIndex { subjects: names },
    )?;
    let report = report_from_dir(out)?;
    write_outputs(out, &report).map_err(io_err(out))?;
    log.line("report written");
    Ok(report)
}

fn run_subject(
    cfg: &BenchConfig,
    path: &Path,
    name: &str,
    dictionary: &[Vec<u8>],
    log: &mut Log,
) -> Result<(), RunError> {
    let program = load_subject(path)?;
    let points = find_mutations_with(&program, &cfg.finder());
    let dir = cfg.output.join("work").join(name);
    mkdir(&dir)?;
    fs::write(dir.join("subject.mir"), serialize_program(&program)).map_err(io_err(&dir))?;
    write_json(
        &dir.join("mutations.json"),
        &mutation_records(&program, &points),
    )?;
    log.line(&format!("subject {name}: {} mutations", points.len()));

    let ctx = EvalContext {
        program: &program,
        points: &points,
        limits: cfg.limits,
        sanitize: cfg.sanitize,
        differential_output: cfg.differential_output,
        exec_seed: cfg.rng_seed,
    };
    let mut cost = CostLedger {
        phase2_budget: cfg.budget.phase2_budget,
        ..Default::default()
    };

    let mut selections: Vec<SeedSelection> = Vec::new();
    for fuzzer in &cfg.fuzzers {
        let sel = collect_seeds(
            &ctx,
            fuzzer,
            cfg.budget.seed_instances,
            cfg.budget.seed_budget,
            derive_seed(cfg.rng_seed, &[name]),
            dictionary,
        )?;
        cost.seed_collection.add(sel.cost());
        let fdir = dir.join(fuzzer);
        let sdir = fdir.join("seeds");
        if sdir.exists() {
            fs::remove_dir_all(&sdir).map_err(io_err(&sdir))?;
        }
        mkdir(&sdir)?;
        for (i, s) in sel.seeds().iter().enumerate() {
            let p = sdir.join(format!("seed-{i:04}"));
            fs::write(&p, s).map_err(io_err(&p))?;
        }
        write_json(&fdir.join("seed_selection.json"), &sel)?;
        log.line(&format!(
            "subject {name}: {fuzzer} seeds: run {} of {}, {} inputs",
            sel.chosen,
            sel.runs.len(),
            sel.seeds().len()
        ));
        selections.push(sel);
    }

    let location = BuildMode::location().sanitized(cfg.sanitize);
    let mut vm = Vm::new(&program, &points, &location).map_err(PipelineError::from)?;
    let mut rows = Vec::new();
    for sel in &selections {
        for s in sel.seeds() {
            vm.run(s, &cfg.limits, cfg.rng_seed);
            rows.push(vm.covered_mutations());
        }
    }
    let cov = CoverageMatrix::new(rows);
    let supermutants = build_supermutants(
        &points,
        &cov,
        cfg.batch_size,
        derive_seed(cfg.rng_seed, &[name, "batches"]),
    )?;
    write_json(&dir.join("supermutants.json"), &supermutants)?;
    write_json(&dir.join("coverage.json"), &cov)?;
    log.line(&format!(
        "subject {name}: {} supermutants",
        supermutants.len()
    ));

    let modes: Vec<(bool, Option<&str>)> = if cfg.compare_sanitize {
        vec![(cfg.sanitize, None), (!cfg.sanitize, Some("alternate"))]
    } else {
        vec![(cfg.sanitize, None)]
    };
    for (fuzzer, sel) in cfg.fuzzers.iter().zip(&selections) {
        for (sanitize, sub) in &modes {
            let mode_ctx = EvalContext {
                sanitize: *sanitize,
                ..ctx
            };
            let (r1, r2) = evaluate(
                &mode_ctx,
                &supermutants,
                sel.seeds(),
                fuzzer,
                cfg,
                dictionary,
            )?;
            let mut fdir = dir.join(fuzzer);
            if let Some(sub) = sub {
                fdir = fdir.join(sub);
            }
            mkdir(&fdir)?;
            write_phase(&fdir, &r1, &r2)?;
            if sub.is_none() {
                cost.phase1.add(r1.cost);
                cost.phase2.add(r2.cost);
            }
            let killed = r2.verdicts.iter().filter(|v| v.killed()).count();
            log.line(&format!(
                "subject {name}: {fuzzer} sanitize={sanitize}: {} phase I kills, {killed} total, {} splits",
                r1.verdicts.iter().filter(|v| v.killed_phase1).count(),
                r1.splits.len() + r2.splits.len()
            ));
        }
    }

    write_json(
        &dir.join("summary.json"),
        &SubjectSummary {
            subject: name.to_string(),
            program: program.name.clone(),
            fuzzers: cfg.fuzzers.clone(),
            sanitize: cfg.sanitize,
            alternate: cfg.compare_sanitize,
            initial_supermutants: supermutants.len(),
            cost,
        },
    )
}

fn evaluate(
    ctx: &EvalContext,
    supermutants: &[Supermutant],
    seeds: &[Vec<u8>],
    fuzzer: &str,
    cfg: &BenchConfig,
    dictionary: &[Vec<u8>],
) -> Result<(PhaseResult, PhaseResult), RunError> {
    let next_id = supermutants.len() as u32;
    let r1 = phase1(ctx, supermutants, seeds, next_id)?;
    let settings = Phase2Settings {
        fuzzer,
        executions: cfg.budget.phase2_budget,
        rng_seed: derive_seed(
            cfg.rng_seed,
            &[
                &ctx.program.name,
                if ctx.sanitize { "asan" } else { "plain" },
            ],
        ),
        dictionary,
    };
    let r2 = phase2(
        ctx,
        &r1.stubborn(),
        seeds,
        &settings,
        r1.verdicts.clone(),
        r1.next_id,
    )?;
    Ok((r1, r2))
}

fn write_phase(dir: &Path, r1: &PhaseResult, r2: &PhaseResult) -> Result<(), RunError> {
    write_json(
        &dir.join("phase1.json"),
        &PhaseArtifact {
            records: &r1.records,
            cost: r1.cost,
        },
    )?;
    write_json(
        &dir.join("phase2.json"),
        &PhaseArtifact {
            records: &r2.records,
            cost: r2.cost,
        },
    )?;
    write_json(&dir.join("verdicts.json"), &r2.verdicts)?;
    let splits: Vec<_> = r1.splits.iter().chain(&r2.splits).collect();
    write_json(&dir.join("splits.json"), &splits)
}

/// The mutation points a run used, as recorded in `mutations.json`.
fn recorded_points(dir: &Path) -> Result<Vec<MutationPoint>, RunError> {
    let records: Vec<MutationRecord> = read_json(&dir.join("mutations.json"))?;
    Ok(records
        .into_iter()
        .map(|r| MutationPoint {
            id: r.id,
            site: crate::ir::SiteId(r.site),
            function: r.function,
            operator: r.operator,
            payload: r.payload,
        })
        .collect())
}

/// Rebuilds the run report from the ledgers under `out/work`.
pub fn report_from_dir(out: &Path) -> Result<RunReport, RunError> {
    let work = out.join("work");
    let index: RunIndex = read_json(&work.join("index.json"))?;
    let mut reports = Vec::new();
    for name in &index.subjects {
        let dir = work.join(name);
        let summary: SubjectSummary = read_json(&dir.join("summary.json"))?;
        let points = recorded_points(&dir)?;
        let mut ledgers = Vec::new();
        for f in &summary.fuzzers {
            let verdicts: Vec<MutationVerdict> = read_json(&dir.join(f).join("verdicts.json"))?;
            let alternate = if summary.alternate {
                Some(read_json(
                    &dir.join(f).join("alternate").join("verdicts.json"),
                )?)
            } else {
                None
            };
            ledgers.push(FuzzerLedger {
                fuzzer: f.clone(),
                verdicts,
                alternate,
            });
        }
        reports.push(build_report(&ReportInput {
            subject: &summary.subject,
            sanitize: summary.sanitize,
            points: &points,
            ledgers: &ledgers,
            initial_supermutants: summary.initial_supermutants,
            cost: summary.cost.clone(),
        })?);
    }
    Ok(RunReport::new(reports))
}

/// Re-derives and writes the report files of a finished run.
pub fn rewrite_report(out: &Path) -> Result<RunReport, RunError> {
    let report = report_from_dir(out)?;
    write_outputs(out, &report).map_err(io_err(out))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingletonRow {
    pub subject: String,
    pub fuzzer: String,
    pub id: MutationId,
    pub operator: OperatorKind,
    pub executions: u64,
    pub killed: bool,
}

fn read_seeds(dir: &Path) -> Result<Vec<Vec<u8>>, RunError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| fs::read(f).map_err(io_err(f)))
        .collect()
}

/// Fuzzes `n` sampled stubborn mutations per subject individually with the
/// long budget and reports which of them are killed after all.
pub fn singletons(cfg: &BenchConfig, n: usize) -> Result<Vec<SingletonRow>, RunError> {
    let work = cfg.output.join("work");
    let index: RunIndex = read_json(&work.join("index.json"))?;
    let dictionary = cfg.dictionary_tokens()?;
    let pool = pool(cfg.workers)?;
    let mut rows = Vec::new();
    for name in &index.subjects {
        let dir = work.join(name);
        let summary: SubjectSummary = read_json(&dir.join("summary.json"))?;
        let program = load_subject(&dir.join("subject.mir"))?;
        let points = recorded_points(&dir)?;
        let ctx = EvalContext {
            program: &program,
            points: &points,
            limits: cfg.limits,
            sanitize: summary.sanitize,
            differential_output: cfg.differential_output,
            exec_seed: cfg.rng_seed,
        };
        let mut ledgers = Vec::new();
        let mut stubborn = BTreeSet::new();
        for f in &summary.fuzzers {
            let v: Vec<MutationVerdict> = read_json(&dir.join(f).join("verdicts.json"))?;
            stubborn.extend(
                v.iter()
                    .filter(|x| x.covered() && !x.killed())
                    .map(|x| x.id),
            );
            ledgers.push((f.clone(), v, read_seeds(&dir.join(f).join("seeds"))?));
        }
        let mut pool_ids: Vec<MutationId> = stubborn.into_iter().collect();
        pool_ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.rng_seed,
            &[name, "singletons"],
        )));
        pool_ids.truncate(n);
        pool_ids.sort();

        let tasks: Vec<(&str, MutationId, &[Vec<u8>])> = pool_ids
            .iter()
            .flat_map(|id| {
                ledgers
                    .iter()
                    .filter(|(_, v, _)| {
                        let x = &v[id.0 as usize];
                        x.covered() && !x.killed()
                    })
                    .map(move |(f, _, seeds)| (f.as_str(), *id, seeds.as_slice()))
            })
            .collect();
        let results: Vec<Result<SingletonRow, RunError>> = pool.install(|| {
            use rayon::prelude::*;
            tasks
                .par_iter()
                .map(|(fuzzer, id, seeds)| {
                    let build = BuildMode::mutant_instrumented([*id]).sanitized(ctx.sanitize);
                    let target = FuzzTarget {
                        program: ctx.program,
                        points: ctx.points,
                        build: &build,
                        limits: &ctx.limits,
                        exec_seed: ctx.exec_seed,
                    };
                    let seed = derive_seed(cfg.rng_seed, &[name, fuzzer, "long", &id.to_string()]);
                    let budget = FuzzBudget::new(cfg.budget.long_singleton_budget, seed)
                        .map_err(PipelineError::from)?;
                    let report = fuzz(&target, seeds, &budget, fuzzer, &dictionary)
                        .map_err(PipelineError::from)?;
                    let spec = MutantSpec::single(*id);
                    let mut killed = false;
                    for c in &report.crashers {
                        if confirm_kill(&ctx, &spec, &c.input)?.is_some() {
                            killed = true;
                            break;
                        }
                    }
                    Ok(SingletonRow {
                        subject: name.clone(),
                        fuzzer: fuzzer.to_string(),
                        id: *id,
                        operator: points[id.0 as usize].operator,
                        executions: report.executions_used,
                        killed,
                    })
                })
                .collect()
        });
        for r in results {
            rows.push(r?);
        }
    }
    write_json(&cfg.output.join("singletons.json"), &rows)?;
    let path = cfg.output.join("singletons.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| RunError::Artifact {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    for r in &rows {
        w.serialize(r).map_err(|e| RunError::Artifact {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(rows)
}
