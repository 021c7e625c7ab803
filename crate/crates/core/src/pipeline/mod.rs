//! Seed collection, seed replay (Phase I), per-supermutant fuzzing
//! (Phase II), kill confirmation and attribution.

mod phases;
mod seeds;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fuzz::FuzzError;
use crate::ir::Program;
use crate::mutation::{MutantSpec, MutationError, MutationId, MutationPoint};
use crate::scheduler::SchedulerError;
use crate::vm::{execute_with, BuildMode, ExecLimits, ExecStatus, VmError};

pub use phases::{phase1, phase2, Phase2Settings, PhaseResult, SplitRecord, SupermutantRecord};
pub use seeds::{collect_seeds, median_index, SeedRun, SeedSelection};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Fuzz(#[from] FuzzError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("supermutant {supermutant}: status diverged without reaching a mutated site (input {input})")]
    EngineBug { supermutant: u32, input: String },
    #[error("seed collection needs at least one instance")]
    NoInstances,
}

/// Everything needed to execute builds of one subject consistently.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub program: &'a Program,
    pub points: &'a [MutationPoint],
    pub limits: ExecLimits,
    /// Applied to baseline and mutant runs alike.
    pub sanitize: bool,
    /// Also count equal exit codes with different output as a kill.
    pub differential_output: bool,
    /// Heap filler seed for every execution.
    pub exec_seed: u64,
}

impl EvalContext<'_> {
    pub fn baseline(&self) -> BuildMode {
        BuildMode::baseline().sanitized(self.sanitize)
    }

    pub fn mutant(&self, ids: &BTreeSet<MutationId>) -> BuildMode {
        BuildMode::mutant(ids.iter().copied()).sanitized(self.sanitize)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationVerdict {
    pub id: MutationId,
    pub covered_phase1: bool,
    pub killed_phase1: bool,
    pub covered_phase2: bool,
    pub killed_phase2: bool,
    #[serde(with = "hex_input")]
    pub killing_input: Option<Vec<u8>>,
    pub status_pair: Option<(u8, u8)>,
}

impl MutationVerdict {
    pub fn new(id: MutationId) -> Self {
        MutationVerdict {
            id,
            ..Default::default()
        }
    }

    pub fn killed(&self) -> bool {
        self.killed_phase1 || self.killed_phase2
    }

    pub fn covered(&self) -> bool {
        self.covered_phase1 || self.covered_phase2
    }
}

mod hex_input {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_some(&hex::encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        text.map(|t| hex::decode(t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Executions and interpreter steps spent by one stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCost {
    pub executions: u64,
    pub steps: u64,
}

impl StageCost {
    pub fn add(&mut self, other: StageCost) {
        self.executions += other.executions;
        self.steps += other.steps;
    }

    pub fn record(&mut self, steps: u64) {
        self.executions += 1;
        self.steps += steps;
    }
}

/// The kill rule on two finished runs: the baseline must exit with a code
/// below 128 and the status codes must differ. With `differential_output`,
/// equal codes with different output also count.
pub fn kill_rule(
    baseline: ExecStatus,
    baseline_output: &[u8],
    mutant: ExecStatus,
    mutant_output: &[u8],
    differential_output: bool,
) -> Option<(u8, u8)> {
    let ExecStatus::Exit(c) = baseline else {
        return None;
    };
    if c >= 128 {
        return None;
    }
    let (b, m) = (baseline.code(), mutant.code());
    if b != m || (differential_output && baseline_output != mutant_output) {
        Some((b, m))
    } else {
        None
    }
}

/// Re-executes `input` on the uninstrumented baseline and mutant builds and
/// returns the status-code pair if the mutant is killed.
pub fn confirm_kill(
    ctx: &EvalContext,
    spec: &MutantSpec,
    input: &[u8],
) -> Result<Option<(u8, u8)>, PipelineError> {
    let base = execute_with(
        ctx.program,
        ctx.points,
        &ctx.baseline(),
        input,
        &ctx.limits,
        ctx.exec_seed,
    )?;
    let mutant = execute_with(
        ctx.program,
        ctx.points,
        &ctx.mutant(&spec.ids),
        input,
        &ctx.limits,
        ctx.exec_seed,
    )?;
    Ok(kill_rule(
        base.status,
        &base.output,
        mutant.status,
        &mutant.output,
        ctx.differential_output,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attribution {
    Single(MutationId),
    Interaction(BTreeSet<MutationId>),
}

/// Names the mutation responsible for a confirmed kill from the mutated
/// sites the killing run reached.
pub fn attribute_kill(
    covered_mutations: &BTreeSet<MutationId>,
    spec: &MutantSpec,
) -> Result<Attribution, PipelineError> {
    let hit: BTreeSet<MutationId> = covered_mutations.intersection(&spec.ids).copied().collect();
    match hit.len() {
        0 => Err(PipelineError::EngineBug {
            supermutant: u32::MAX,
            input: String::new(),
        }),
        1 => Ok(Attribution::Single(*hit.first().unwrap())),
        _ => Ok(Attribution::Interaction(hit)),
    }
}

/// Stable 64-bit seed derived from a base seed and a list of labels.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Kill set of replaying `seeds` on every mutation individually.
pub fn singleton_seed_kills(
    ctx: &EvalContext,
    seeds: &[Vec<u8>],
) -> Result<BTreeSet<MutationId>, PipelineError> {
    use rayon::prelude::*;
    let baseline: Vec<_> = seeds
        .iter()
        .map(|s| {
            execute_with(
                ctx.program,
                ctx.points,
                &ctx.baseline(),
                s,
                &ctx.limits,
                ctx.exec_seed,
            )
        })
        .collect::<Result<_, _>>()?;
    let killed: Vec<Option<MutationId>> = ctx
        .points
        .par_iter()
        .map(|m| -> Result<Option<MutationId>, PipelineError> {
            let mut vm = crate::vm::Vm::new(ctx.program, ctx.points, &ctx.mutant(&[m.id].into()))?;
            for (seed, base) in seeds.iter().zip(&baseline) {
                let raw = vm.run(seed, &ctx.limits, ctx.exec_seed);
                if kill_rule(
                    base.status,
                    &base.output,
                    raw.status,
                    &raw.output,
                    ctx.differential_output,
                )
                .is_some()
                {
                    return Ok(Some(m.id));
                }
            }
            Ok(None)
        })
        .collect::<Result<_, _>>()?;
    Ok(killed.into_iter().flatten().collect())
}
