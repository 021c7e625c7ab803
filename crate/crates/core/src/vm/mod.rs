//! Deterministic interpreter for subject programs.
//!
//! Every execution records which sites ran, which mutations were reached and
//! which control-flow edges were taken. Abnormal terminations are reported
//! as [`ExecStatus`] values rather than errors. The `sanitize` flag of a
//! [`BuildMode`] switches the heap from "trap only outside the allocated
//! region" to "trap outside the object", mirroring an address sanitizer.

mod compile;
mod heap;
mod interp;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Program, SiteId};
use crate::mutation::{MutationError, MutationId, MutationPoint};

pub use compile::Image;
pub use interp::{RawOutcome, Vm};

/// Pseudo-edge targets at or above this value encode comparison progress:
/// `(site, PSEUDO_EDGE_BASE + k)` means `k` low-order bytes of a `cmp_eq`/
/// `cmp_ne` operand pair matched.
pub const PSEUDO_EDGE_BASE: u32 = 0xFFFF_FF00;

/// Calls nested deeper than this trap as a stack overflow (`oob_write`).
pub const MAX_CALL_DEPTH: usize = 1024;

/// An edge between two sites, or a comparison pseudo-edge.
pub type Edge = (u32, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecLimits {
    pub max_steps: u64,
    pub max_heap: u64,
    pub max_output: u64,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            max_steps: 100_000,
            max_heap: 1 << 20,
            max_output: 1 << 16,
        }
    }
}

impl ExecLimits {
    pub fn validate(&self) -> Result<(), VmError> {
        if self.max_steps == 0 || self.max_heap == 0 || self.max_output == 0 {
            return Err(VmError::InvalidLimits);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    DivZero,
    OobRead,
    OobWrite,
    DoubleFree,
    InvalidFree,
    ExplicitAbort,
    StepLimit,
    HeapLimit,
}

impl TrapKind {
    /// Resource exhaustion rather than a fault of the program.
    pub fn is_limit(self) -> bool {
        matches!(self, TrapKind::StepLimit | TrapKind::HeapLimit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Exit(u8),
    Trap(TrapKind),
}

impl ExecStatus {
    pub fn is_exit(self) -> bool {
        matches!(self, ExecStatus::Exit(_))
    }

    /// Canonical, injective status code used for kill comparison.
    ///
    /// Exits map to their code (0..=127), faults to 128..=191 following the
    /// usual `128 + signal` convention, resource limits to 192..=199.
    pub fn code(self) -> u8 {
        match self {
            ExecStatus::Exit(c) => c & 0x7F,
            ExecStatus::Trap(kind) => match kind {
                TrapKind::InvalidFree => 133,
                TrapKind::ExplicitAbort => 134,
                TrapKind::DoubleFree => 135,
                TrapKind::DivZero => 136,
                TrapKind::OobWrite => 138,
                TrapKind::OobRead => 139,
                TrapKind::StepLimit => 192,
                TrapKind::HeapLimit => 193,
            },
        }
    }
}

/// Result of one execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub output: Vec<u8>,
    pub covered_sites: BTreeSet<SiteId>,
    pub covered_mutations: BTreeSet<MutationId>,
    pub covered_edges: BTreeSet<Edge>,
    pub steps: u64,
}

/// Canonical status code of an outcome.
pub fn status_code(o: &ExecOutcome) -> u8 {
    o.status.code()
}

/// Which executable a run models.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildKind {
    /// The unmutated comparison executable.
    Baseline,
    /// Unmutated, reporting every reached mutation point.
    Location,
    /// Uninstrumented (super)mutant used to confirm kills.
    Mutant(BTreeSet<MutationId>),
    /// (Super)mutant as compiled for a fuzzer.
    MutantInstrumented(BTreeSet<MutationId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BuildMode {
    pub kind: BuildKind,
    pub sanitize: bool,
}

impl BuildMode {
    pub fn baseline() -> Self {
        BuildMode {
            kind: BuildKind::Baseline,
            sanitize: false,
        }
    }

    pub fn location() -> Self {
        BuildMode {
            kind: BuildKind::Location,
            sanitize: false,
        }
    }

    pub fn mutant(ids: impl IntoIterator<Item = MutationId>) -> Self {
        BuildMode {
            kind: BuildKind::Mutant(ids.into_iter().collect()),
            sanitize: false,
        }
    }

    pub fn mutant_instrumented(ids: impl IntoIterator<Item = MutationId>) -> Self {
        BuildMode {
            kind: BuildKind::MutantInstrumented(ids.into_iter().collect()),
            sanitize: false,
        }
    }

    pub fn sanitized(mut self, sanitize: bool) -> Self {
        self.sanitize = sanitize;
        self
    }

    /// Mutation ids compiled into this build, if it is a mutant.
    pub fn mutant_ids(&self) -> Option<&BTreeSet<MutationId>> {
        match &self.kind {
            BuildKind::Mutant(ids) | BuildKind::MutantInstrumented(ids) => Some(ids),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmError {
    #[error("mutant build with an empty mutation set")]
    EmptyMutant,
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("execution limits must be positive")]
    InvalidLimits,
}

/// Runs `input` on the `build` of `p`. Mutation points are enumerated with
/// the default catalog.
pub fn execute(
    p: &Program,
    build: &BuildMode,
    input: &[u8],
    limits: &ExecLimits,
    rng_seed: u64,
) -> Result<ExecOutcome, VmError> {
    let points = crate::mutation::find_mutations(p);
    execute_with(p, &points, build, input, limits, rng_seed)
}

/// Like [`execute`] with a precomputed point list.
pub fn execute_with(
    p: &Program,
    points: &[MutationPoint],
    build: &BuildMode,
    input: &[u8],
    limits: &ExecLimits,
    rng_seed: u64,
) -> Result<ExecOutcome, VmError> {
    limits.validate()?;
    let mut vm = Vm::new(p, points, build)?;
    let raw = vm.run(input, limits, rng_seed);
    Ok(vm.outcome(raw))
}

#[cfg(test)]
mod tests;
