use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    attribute_kill, derive_seed, kill_rule, Attribution, EvalContext, MutationVerdict,
    PipelineError, StageCost,
};
use crate::fuzz::{fuzz, FuzzBudget, FuzzTarget};
use crate::mutation::{MutantSpec, MutationId};
use crate::scheduler::{split_supermutant, Supermutant};
use crate::vm::{execute_with, BuildMode, ExecOutcome, Vm};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub phase: u8,
    pub parent: u32,
    pub trigger: BTreeSet<MutationId>,
    pub children: Vec<u32>,
}

/// One supermutant evaluation as it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupermutantRecord {
    pub id: u32,
    pub ids: BTreeSet<MutationId>,
    pub covered: BTreeSet<MutationId>,
    pub killed: BTreeSet<MutationId>,
    pub executions: u64,
    pub split: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub verdicts: Vec<MutationVerdict>,
    /// Supermutants evaluated to completion, i.e. not split.
    pub finished: Vec<Supermutant>,
    pub records: Vec<SupermutantRecord>,
    pub splits: Vec<SplitRecord>,
    pub cost: StageCost,
    /// First unused supermutant id.
    pub next_id: u32,
}

impl PhaseResult {
    /// Finished supermutants restricted to mutations still alive.
    pub fn stubborn(&self) -> Vec<Supermutant> {
        self.finished
            .iter()
            .filter_map(|s| {
                let ids: BTreeSet<MutationId> = s
                    .ids
                    .iter()
                    .copied()
                    .filter(|id| !self.verdicts[id.0 as usize].killed())
                    .collect();
                (!ids.is_empty()).then(|| Supermutant { ids, ..s.clone() })
            })
            .collect()
    }
}

struct Kill {
    id: MutationId,
    input: Vec<u8>,
    pair: (u8, u8),
}

#[derive(Default)]
struct TaskOutcome {
    covered: BTreeSet<MutationId>,
    kills: Vec<Kill>,
    split: Option<BTreeSet<MutationId>>,
    cost: StageCost,
}

fn split_trigger(
    s: &Supermutant,
    covered: &BTreeSet<MutationId>,
    interactions: &BTreeSet<MutationId>,
) -> Option<BTreeSet<MutationId>> {
    if s.ids.len() < 2 {
        return None;
    }
    if s.from_uncovered() && !covered.is_empty() {
        return Some(covered | interactions);
    }
    (interactions.len() >= 2).then(|| interactions.clone())
}

/// Evaluates supermutants wave by wave. Tasks of a wave run in parallel;
/// their outcomes are applied in supermutant order, and split children form
/// the next wave.
fn run_waves<F>(
    initial: Vec<Supermutant>,
    mut verdicts: Vec<MutationVerdict>,
    mut next_id: u32,
    phase: u8,
    eval: F,
) -> Result<PhaseResult, PipelineError>
where
    F: Fn(&Supermutant) -> Result<TaskOutcome, PipelineError> + Sync,
{
    let mut wave = initial;
    let mut result = PhaseResult {
        verdicts: Vec::new(),
        finished: Vec::new(),
        records: Vec::new(),
        splits: Vec::new(),
        cost: StageCost::default(),
        next_id,
    };
    while !wave.is_empty() {
        let outcomes: Vec<TaskOutcome> = wave.par_iter().map(&eval).collect::<Result<_, _>>()?;
        let mut next_wave = Vec::new();
        for (s, out) in wave.into_iter().zip(outcomes) {
            result.cost.add(out.cost);
            for id in &out.covered {
                let v = &mut verdicts[id.0 as usize];
                if phase == 1 {
                    v.covered_phase1 = true;
                } else {
                    v.covered_phase2 = true;
                }
            }
            let mut killed = BTreeSet::new();
            for k in out.kills {
                let v = &mut verdicts[k.id.0 as usize];
                if v.killed() {
                    continue;
                }
                if phase == 1 {
                    v.covered_phase1 = true;
                    v.killed_phase1 = true;
                } else {
                    v.covered_phase2 = true;
                    v.killed_phase2 = true;
                }
                v.killing_input = Some(k.input);
                v.status_pair = Some(k.pair);
                killed.insert(k.id);
            }
            result.records.push(SupermutantRecord {
                id: s.id,
                ids: s.ids.clone(),
                covered: out.covered,
                killed,
                executions: out.cost.executions,
                split: out.split.is_some(),
            });
            match out.split {
                None => result.finished.push(s),
                Some(trigger) => {
                    let children = split_supermutant(&s, &trigger, next_id)?;
                    next_id += children.len() as u32;
                    let mut kept = Vec::new();
                    for mut c in children {
                        c.ids.retain(|id| !verdicts[id.0 as usize].killed());
                        if !c.ids.is_empty() {
                            kept.push(c);
                        }
                    }
                    result.splits.push(SplitRecord {
                        phase,
                        parent: s.id,
                        trigger,
                        children: kept.iter().map(|c| c.id).collect(),
                    });
                    next_wave.extend(kept);
                }
            }
        }
        wave = next_wave;
    }
    result.verdicts = verdicts;
    result.next_id = next_id;
    Ok(result)
}

/// Replays `seeds` on every supermutant. A seed that reaches two or more
/// mutations of a supermutant (or any mutation of an uncovered batch)
/// splits it and its children are replayed from scratch.
pub fn phase1(
    ctx: &EvalContext,
    supermutants: &[Supermutant],
    seeds: &[Vec<u8>],
    next_id: u32,
) -> Result<PhaseResult, PipelineError> {
    let mut base_cost = StageCost::default();
    let baseline: Vec<ExecOutcome> = seeds
        .iter()
        .map(|s| {
            let o = execute_with(
                ctx.program,
                ctx.points,
                &ctx.baseline(),
                s,
                &ctx.limits,
                ctx.exec_seed,
            )?;
            base_cost.record(o.steps);
            Ok(o)
        })
        .collect::<Result<_, PipelineError>>()?;
    let verdicts = (0..ctx.points.len() as u32)
        .map(|i| MutationVerdict::new(MutationId(i)))
        .collect();

    let mut result = run_waves(supermutants.to_vec(), verdicts, next_id, 1, |s| {
        let mut vm = Vm::new(ctx.program, ctx.points, &ctx.mutant(&s.ids))?;
        let mut out = TaskOutcome::default();
        for (seed, base) in seeds.iter().zip(&baseline) {
            let raw = vm.run(seed, &ctx.limits, ctx.exec_seed);
            out.cost.record(raw.steps);
            let hit = vm.covered_mutations();
            if let Some(trigger) = split_trigger(s, &hit, &hit) {
                return Ok(TaskOutcome {
                    split: Some(trigger),
                    cost: out.cost,
                    ..Default::default()
                });
            }
            let pair = kill_rule(
                base.status,
                &base.output,
                raw.status,
                &raw.output,
                ctx.differential_output,
            );
            let diverged = base.status != raw.status || base.output != raw.output;
            match hit.first() {
                None if diverged => {
                    return Err(PipelineError::EngineBug {
                        supermutant: s.id,
                        input: hex::encode(seed),
                    })
                }
                None => {}
                Some(&id) => {
                    out.covered.insert(id);
                    if let Some(pair) = pair {
                        out.kills.push(Kill {
                            id,
                            input: seed.clone(),
                            pair,
                        });
                    }
                }
            }
        }
        Ok(out)
    })?;
    result.cost.add(base_cost);
    Ok(result)
}

/// Settings for a Phase II campaign.
#[derive(Debug, Clone)]
pub struct Phase2Settings<'a> {
    pub fuzzer: &'a str,
    pub executions: u64,
    pub rng_seed: u64,
    pub dictionary: &'a [Vec<u8>],
}

/// Fuzzes every stubborn supermutant from `seeds`. Crashers are confirmed
/// against the baseline and attributed; interactions and coverage inside
/// uncovered batches split the supermutant, and every child receives the
/// full budget.
pub fn phase2(
    ctx: &EvalContext,
    stubborn: &[Supermutant],
    seeds: &[Vec<u8>],
    settings: &Phase2Settings,
    verdicts: Vec<MutationVerdict>,
    next_id: u32,
) -> Result<PhaseResult, PipelineError> {
    run_waves(stubborn.to_vec(), verdicts, next_id, 2, |s| {
        let build = BuildMode::mutant_instrumented(s.ids.iter().copied()).sanitized(ctx.sanitize);
        let target = FuzzTarget {
            program: ctx.program,
            points: ctx.points,
            build: &build,
            limits: &ctx.limits,
            exec_seed: ctx.exec_seed,
        };
        let seed = derive_seed(
            settings.rng_seed,
            &["phase2", settings.fuzzer, &s.id.to_string()],
        );
        let budget = FuzzBudget::new(settings.executions, seed)?;
        let report = fuzz(
            &target,
            seeds,
            &budget,
            settings.fuzzer,
            settings.dictionary,
        )?;

        let mut out = TaskOutcome {
            covered: report
                .mutations_reached
                .intersection(&s.ids)
                .copied()
                .collect(),
            cost: StageCost {
                executions: report.executions_used,
                steps: report.steps,
            },
            ..Default::default()
        };
        let spec = MutantSpec { ids: s.ids.clone() };
        let mut interactions = BTreeSet::new();
        for c in &report.crashers {
            let base = execute_with(
                ctx.program,
                ctx.points,
                &ctx.baseline(),
                &c.input,
                &ctx.limits,
                ctx.exec_seed,
            )?;
            let mutant = execute_with(
                ctx.program,
                ctx.points,
                &ctx.mutant(&s.ids),
                &c.input,
                &ctx.limits,
                ctx.exec_seed,
            )?;
            out.cost.record(base.steps);
            out.cost.record(mutant.steps);
            let Some(pair) = kill_rule(
                base.status,
                &base.output,
                mutant.status,
                &mutant.output,
                ctx.differential_output,
            ) else {
                continue;
            };
            match attribute_kill(&mutant.covered_mutations, &spec) {
                Ok(Attribution::Single(id)) => out.kills.push(Kill {
                    id,
                    input: c.input.clone(),
                    pair,
                }),
                Ok(Attribution::Interaction(ids)) => interactions.extend(ids),
                Err(_) => {
                    return Err(PipelineError::EngineBug {
                        supermutant: s.id,
                        input: hex::encode(&c.input),
                    })
                }
            }
        }
        out.split = split_trigger(s, &out.covered, &interactions);
        Ok(out)
    })
}
