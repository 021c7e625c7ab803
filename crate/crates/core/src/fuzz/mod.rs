//! Reference fuzzers behind a small adapter interface.
//!
//! Both adapters drive the interpreter directly through an [`Executor`],
//! which counts executions and interpreter steps and keeps per-run edge
//! feedback. Any status other than `exit(0)` is reported as a crash.

mod covguided;
mod havoc;
mod random;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::Program;
use crate::mutation::{MutationId, MutationPoint};
use crate::vm::{BuildMode, Edge, ExecLimits, ExecStatus, Vm, VmError};

pub use covguided::CovGuided;
pub use havoc::{Havoc, MAX_INPUT_LEN};
pub use random::RandomFuzzer;

/// Names accepted by [`adapter`].
pub const ADAPTERS: [&str; 2] = ["random", "covguided"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FuzzError {
    #[error("unknown fuzzer adapter '{0}'")]
    UnknownAdapter(String),
    #[error("fuzz budget must allow at least one execution")]
    ZeroBudget,
    #[error(transparent)]
    Vm(#[from] VmError),
}

/// What to fuzz: a program under one build, with fixed limits and heap seed.
#[derive(Debug, Clone, Copy)]
pub struct FuzzTarget<'a> {
    pub program: &'a Program,
    pub points: &'a [MutationPoint],
    pub build: &'a BuildMode,
    pub limits: &'a ExecLimits,
    pub exec_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzBudget {
    pub executions: u64,
    pub rng_seed: u64,
}

impl FuzzBudget {
    pub fn new(executions: u64, rng_seed: u64) -> Result<Self, FuzzError> {
        if executions == 0 {
            return Err(FuzzError::ZeroBudget);
        }
        Ok(FuzzBudget {
            executions,
            rng_seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub input: Vec<u8>,
    pub covered_edges: BTreeSet<Edge>,
    pub covered_mutations: BTreeSet<MutationId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crasher {
    pub input: Vec<u8>,
    pub status: ExecStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub corpus: Vec<CorpusEntry>,
    pub crashers: Vec<Crasher>,
    pub executions_used: u64,
    pub steps: u64,
    /// Union of mutations reached by any execution of the campaign.
    pub mutations_reached: BTreeSet<MutationId>,
}

/// Runs inputs on one build and tracks global edge and crash novelty.
pub struct Executor<'a> {
    vm: Vm,
    limits: &'a ExecLimits,
    exec_seed: u64,
    budget: u64,
    seen_edges: Vec<bool>,
    crash_edges: Vec<bool>,
    crash_codes: BTreeSet<u8>,
    report: FuzzReport,
}

/// Result of one executor run.
pub struct RunResult {
    pub status: ExecStatus,
    pub new_coverage: bool,
    pub new_crash: bool,
}

impl<'a> Executor<'a> {
    pub fn new(target: &FuzzTarget<'a>, budget: u64) -> Result<Self, FuzzError> {
        target.limits.validate()?;
        let vm = Vm::new(target.program, target.points, target.build)?;
        let edges = vm.image().edge_count();
        Ok(Executor {
            vm,
            limits: target.limits,
            exec_seed: target.exec_seed,
            budget,
            seen_edges: vec![false; edges],
            crash_edges: vec![false; edges],
            crash_codes: BTreeSet::new(),
            report: FuzzReport::default(),
        })
    }

    pub fn exhausted(&self) -> bool {
        self.report.executions_used >= self.budget
    }

    /// Executes `input`, adding it to the corpus when it reaches a new edge
    /// and to the crashers when it crashes in a new way.
    pub fn run(&mut self, input: &[u8]) -> RunResult {
        let raw = self.vm.run(input, self.limits, self.exec_seed);
        self.report.executions_used += 1;
        self.report.steps += raw.steps;
        self.report
            .mutations_reached
            .extend(self.vm.covered_mutations());

        let mut new_coverage = false;
        for (seen, hit) in self.seen_edges.iter_mut().zip(self.vm.edge_hits()) {
            if *hit && !*seen {
                *seen = true;
                new_coverage = true;
            }
        }
        if new_coverage || self.report.corpus.is_empty() {
            self.report.corpus.push(CorpusEntry {
                input: input.to_vec(),
                covered_edges: self.vm.covered_edges(),
                covered_mutations: self.vm.covered_mutations(),
            });
        }

        let crashed = raw.status != ExecStatus::Exit(0);
        let mut new_crash = false;
        if crashed {
            new_crash = self.crash_codes.insert(raw.status.code());
            for (seen, hit) in self.crash_edges.iter_mut().zip(self.vm.edge_hits()) {
                if *hit && !*seen {
                    *seen = true;
                    new_crash = true;
                }
            }
            if new_crash {
                self.report.crashers.push(Crasher {
                    input: input.to_vec(),
                    status: raw.status,
                });
            }
        }
        RunResult {
            status: raw.status,
            new_coverage,
            new_crash,
        }
    }

    pub fn finish(self) -> FuzzReport {
        self.report
    }
}

/// A fuzzing strategy.
pub trait Fuzzer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Spends the executor's budget starting from `seeds` (never empty).
    fn campaign(&self, exec: &mut Executor, seeds: &[Vec<u8>], havoc: &mut Havoc);
}

pub fn adapter(name: &str) -> Result<Box<dyn Fuzzer>, FuzzError> {
    match name {
        "random" => Ok(Box::new(RandomFuzzer)),
        "covguided" => Ok(Box::new(CovGuided::default())),
        other => Err(FuzzError::UnknownAdapter(other.to_string())),
    }
}

/// Runs fuzzer `name` on `target`. An empty seed list is replaced by one
/// empty input.
pub fn fuzz(
    target: &FuzzTarget,
    seeds: &[Vec<u8>],
    budget: &FuzzBudget,
    name: &str,
    dictionary: &[Vec<u8>],
) -> Result<FuzzReport, FuzzError> {
    let fuzzer = adapter(name)?;
    if budget.executions == 0 {
        return Err(FuzzError::ZeroBudget);
    }
    let empty = [Vec::new()];
    let seeds = if seeds.is_empty() { &empty[..] } else { seeds };
    let mut exec = Executor::new(target, budget.executions)?;
    let mut havoc = Havoc::new(budget.rng_seed, dictionary.to_vec());
    fuzzer.campaign(&mut exec, seeds, &mut havoc);
    Ok(exec.finish())
}

/// Greedy smallest-first set cover: inputs are visited by (length, bytes)
/// and kept when they add an edge not yet covered by kept inputs.
pub fn minimize_corpus(corpus: &[CorpusEntry]) -> Vec<CorpusEntry> {
    let mut order: Vec<&CorpusEntry> = corpus.iter().collect();
    order.sort_by(|a, b| {
        a.input
            .len()
            .cmp(&b.input.len())
            .then_with(|| a.input.cmp(&b.input))
    });
    let mut covered = BTreeSet::new();
    let mut kept = Vec::new();
    for e in order {
        let adds = e.covered_edges.iter().any(|x| !covered.contains(x));
        if adds || kept.is_empty() {
            covered.extend(e.covered_edges.iter().copied());
            kept.push(e.clone());
        }
    }
    kept
}

/// Executes `inputs` on `target` and returns their corpus entries.
pub fn corpus_entries(
    target: &FuzzTarget,
    inputs: &[Vec<u8>],
) -> Result<Vec<CorpusEntry>, FuzzError> {
    target.limits.validate()?;
    let mut vm = Vm::new(target.program, target.points, target.build)?;
    Ok(inputs
        .iter()
        .map(|input| {
            vm.run(input, target.limits, target.exec_seed);
            CorpusEntry {
                input: input.clone(),
                covered_edges: vm.covered_edges(),
                covered_mutations: vm.covered_mutations(),
            }
        })
        .collect())
}
