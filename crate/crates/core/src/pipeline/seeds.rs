use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, EvalContext, PipelineError, StageCost};
use crate::fuzz::{fuzz, minimize_corpus, FuzzBudget, FuzzTarget};
use crate::vm::BuildMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRun {
    pub index: usize,
    pub rng_seed: u64,
    #[serde(skip)]
    pub corpus: Vec<Vec<u8>>,
    pub corpus_size: usize,
    pub covered_mutations: usize,
    pub cost: StageCost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSelection {
    pub runs: Vec<SeedRun>,
    pub chosen: usize,
}

impl SeedSelection {
    pub fn seeds(&self) -> &[Vec<u8>] {
        &self.runs[self.chosen].corpus
    }

    pub fn cost(&self) -> StageCost {
        let mut c = StageCost::default();
        for r in &self.runs {
            c.add(r.cost);
        }
        c
    }
}

/// Index of the median of `counts`, taking the lower middle for an even
/// number of runs. Ties in count are broken by position.
pub fn median_index(counts: &[usize]) -> usize {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (counts[i], i));
    order[(counts.len() - 1) / 2]
}

/// Fuzzes the location build `instances` times with derived seeds,
/// minimizes each corpus and selects the median run by covered mutations.
pub fn collect_seeds(
    ctx: &EvalContext,
    fuzzer: &str,
    instances: usize,
    executions: u64,
    rng_seed: u64,
    dictionary: &[Vec<u8>],
) -> Result<SeedSelection, PipelineError> {
    if instances == 0 {
        return Err(PipelineError::NoInstances);
    }
    let build = BuildMode::location().sanitized(ctx.sanitize);
    let target = FuzzTarget {
        program: ctx.program,
        points: ctx.points,
        build: &build,
        limits: &ctx.limits,
        exec_seed: ctx.exec_seed,
    };
    let runs: Vec<SeedRun> = (0..instances)
        .into_par_iter()
        .map(|index| -> Result<SeedRun, PipelineError> {
            let seed = derive_seed(rng_seed, &["seeds", fuzzer, &index.to_string()]);
            let report = fuzz(
                &target,
                &[],
                &FuzzBudget::new(executions, seed)?,
                fuzzer,
                dictionary,
            )?;
            let kept = minimize_corpus(&report.corpus);
            let covered: std::collections::BTreeSet<_> = kept
                .iter()
                .flat_map(|e| e.covered_mutations.iter().copied())
                .collect();
            Ok(SeedRun {
                index,
                rng_seed: seed,
                corpus_size: kept.len(),
                corpus: kept.into_iter().map(|e| e.input).collect(),
                covered_mutations: covered.len(),
                cost: StageCost {
                    executions: report.executions_used,
                    steps: report.steps,
                },
            })
        })
        .collect::<Result<_, _>>()?;
    let counts: Vec<usize> = runs.iter().map(|r| r.covered_mutations).collect();
    Ok(SeedSelection {
        chosen: median_index(&counts),
        runs,
    })
}
