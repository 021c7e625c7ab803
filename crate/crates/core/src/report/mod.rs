//! Kill/coverage tables, set algebra over fuzzers, cost accounting and
//! residual estimation.

mod output;

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mutation::{MutationId, MutationPoint, OperatorKind};
use crate::pipeline::{MutationVerdict, StageCost};

pub use output::{read_reports, write_outputs, RunReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("verdicts of fuzzer '{fuzzer}' do not match the mutation list")]
    IdMismatch { fuzzer: String },
    #[error("set regions need between 1 and 4 fuzzers, got {0}")]
    VennArity(usize),
    #[error("no fuzzer ledgers")]
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub fuzzer: String,
    pub phase1_covered: usize,
    pub phase1_killed: usize,
    pub phase2_covered: usize,
    pub phase2_killed: usize,
    pub total_covered: usize,
    pub total_killed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorRow {
    pub operator: OperatorKind,
    pub fuzzer: String,
    pub mutations: usize,
    pub covered_default: Option<usize>,
    pub covered_sanitize: Option<usize>,
    pub killed_default: Option<usize>,
    pub killed_sanitize: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub mutants: usize,
    pub supermutants: usize,
    pub grouping_reduction: f64,
    pub naive_cost: f64,
    pub actual_cost: u64,
    pub cost_reduction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub observed: usize,
    pub singletons: usize,
    pub doubletons: usize,
    pub chao1: f64,
}

/// Verdicts of one fuzzer on one subject. `verdicts` come from the run's
/// primary sanitizer mode, `alternate` from the other mode when it was run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzerLedger {
    pub fuzzer: String,
    pub verdicts: Vec<MutationVerdict>,
    pub alternate: Option<Vec<MutationVerdict>>,
}

/// Executions and steps by stage, summed over fuzzers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub seed_collection: StageCost,
    pub phase1: StageCost,
    pub phase2: StageCost,
    pub phase2_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject: String,
    pub sanitize: bool,
    pub mutants: usize,
    pub rows: Vec<PhaseRow>,
    pub combined: PhaseRow,
    pub operators: Vec<OperatorRow>,
    pub reduction: Reduction,
    pub venn: BTreeMap<String, usize>,
    pub residual: Residual,
    pub cost: CostLedger,
    pub notes: Vec<String>,
}

fn killed_set(v: &[MutationVerdict]) -> BTreeSet<MutationId> {
    v.iter().filter(|v| v.killed()).map(|v| v.id).collect()
}

fn phase_row(name: &str, v: &[MutationVerdict]) -> PhaseRow {
    let count = |f: &dyn Fn(&MutationVerdict) -> bool| v.iter().filter(|x| f(x)).count();
    let phase1_covered = count(&|x| x.covered_phase1);
    let phase1_killed = count(&|x| x.killed_phase1);
    let phase2_covered = count(&|x| x.covered_phase2 && !x.covered_phase1);
    let phase2_killed = count(&|x| x.killed_phase2 && !x.killed_phase1);
    PhaseRow {
        fuzzer: name.to_string(),
        phase1_covered,
        phase1_killed,
        phase2_covered,
        phase2_killed,
        total_covered: phase1_covered + phase2_covered,
        total_killed: phase1_killed + phase2_killed,
    }
}

fn combined_row(ledgers: &[FuzzerLedger]) -> PhaseRow {
    let union = |f: &dyn Fn(&MutationVerdict) -> bool| -> BTreeSet<MutationId> {
        ledgers
            .iter()
            .flat_map(|l| l.verdicts.iter().filter(|v| f(v)).map(|v| v.id))
            .collect()
    };
    let c1 = union(&|v| v.covered_phase1);
    let k1 = union(&|v| v.killed_phase1);
    let c = union(&|v| v.covered());
    let k = union(&|v| v.killed());
    PhaseRow {
        fuzzer: "combined".to_string(),
        phase1_covered: c1.len(),
        phase1_killed: k1.len(),
        phase2_covered: c.len() - c1.len(),
        phase2_killed: k.len() - k1.len(),
        total_covered: c.len(),
        total_killed: k.len(),
    }
}

/// Number of mutations killed by exactly each non-empty subset of fuzzers.
/// Keys join fuzzer names with `+` in input order.
pub fn venn_sets(
    kills: &[(String, BTreeSet<MutationId>)],
) -> Result<BTreeMap<String, usize>, ReportError> {
    if kills.is_empty() || kills.len() > 4 {
        return Err(ReportError::VennArity(kills.len()));
    }
    let n = kills.len();
    let mut regions: BTreeMap<u32, usize> = (1..1u32 << n).map(|mask| (mask, 0)).collect();
    let all: BTreeSet<MutationId> = kills.iter().flat_map(|(_, k)| k.iter().copied()).collect();
    for id in all {
        let mask = kills
            .iter()
            .enumerate()
            .filter(|(_, (_, k))| k.contains(&id))
            .fold(0u32, |m, (i, _)| m | 1 << i);
        *regions.get_mut(&mask).unwrap() += 1;
    }
    Ok(regions
        .into_iter()
        .map(|(mask, count)| {
            let names: Vec<&str> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| kills[i].0.as_str())
                .collect();
            (names.join("+"), count)
        })
        .collect())
}

/// Chao1 richness estimate from the number of observed species and the
/// counts seen exactly once (`f1`) and exactly twice (`f2`).
pub fn chao1(observed: u64, f1: u64, f2: u64) -> Ratio<u128> {
    let (s, f1, f2) = (observed as u128, f1 as u128, f2 as u128);
    if f2 > 0 {
        Ratio::from_integer(s) + Ratio::new(f1 * f1, 2 * f2)
    } else {
        Ratio::from_integer(s) + Ratio::new(f1 * f1.saturating_sub(1), 2)
    }
}

/// Chao1 over a frequency histogram: `frequencies[i]` is how many runs
/// killed mutation `i` (zero entries are unobserved).
pub fn chao1_from_frequencies(frequencies: &[u64]) -> (u64, u64, u64, Ratio<u128>) {
    let observed = frequencies.iter().filter(|f| **f > 0).count() as u64;
    let f1 = frequencies.iter().filter(|f| **f == 1).count() as u64;
    let f2 = frequencies.iter().filter(|f| **f == 2).count() as u64;
    (observed, f1, f2, chao1(observed, f1, f2))
}

fn ratio_f64(r: Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Everything `build_report` needs for one subject.
pub struct ReportInput<'a> {
    pub subject: &'a str,
    pub sanitize: bool,
    pub points: &'a [MutationPoint],
    pub ledgers: &'a [FuzzerLedger],
    pub initial_supermutants: usize,
    pub cost: CostLedger,
}

pub fn build_report(input: &ReportInput) -> Result<EvalReport, ReportError> {
    if input.ledgers.is_empty() {
        return Err(ReportError::Empty);
    }
    let m = input.points.len();
    for l in input.ledgers {
        let ids_ok = |v: &[MutationVerdict]| {
            v.len() == m && v.iter().enumerate().all(|(i, x)| x.id.0 as usize == i)
        };
        if !ids_ok(&l.verdicts) || l.alternate.as_deref().is_some_and(|a| !ids_ok(a)) {
            return Err(ReportError::IdMismatch {
                fuzzer: l.fuzzer.clone(),
            });
        }
    }

    let rows: Vec<PhaseRow> = input
        .ledgers
        .iter()
        .map(|l| phase_row(&l.fuzzer, &l.verdicts))
        .collect();
    let combined = combined_row(input.ledgers);

    let mut operators = Vec::new();
    for op in OperatorKind::ALL {
        let ids: Vec<usize> = input
            .points
            .iter()
            .filter(|p| p.operator == op)
            .map(|p| p.id.0 as usize)
            .collect();
        if ids.is_empty() {
            continue;
        }
        for l in input.ledgers {
            let (default, sanitize) = if input.sanitize {
                (l.alternate.as_deref(), Some(l.verdicts.as_slice()))
            } else {
                (Some(l.verdicts.as_slice()), l.alternate.as_deref())
            };
            let covered = |v: Option<&[MutationVerdict]>| {
                v.map(|v| ids.iter().filter(|i| v[**i].covered()).count())
            };
            let killed = |v: Option<&[MutationVerdict]>| {
                v.map(|v| ids.iter().filter(|i| v[**i].killed()).count())
            };
            operators.push(OperatorRow {
                operator: op,
                fuzzer: l.fuzzer.clone(),
                mutations: ids.len(),
                covered_default: covered(default),
                covered_sanitize: covered(sanitize),
                killed_default: killed(default),
                killed_sanitize: killed(sanitize),
            });
        }
    }

    let measured = input.cost.phase1.steps + input.cost.phase2.steps;
    let executions = input.cost.phase1.executions + input.cost.phase2.executions;
    let mean_steps = if executions == 0 {
        0.0
    } else {
        measured as f64 / executions as f64
    };
    let naive =
        m as f64 * input.ledgers.len() as f64 * input.cost.phase2_budget as f64 * mean_steps;
    let reduction = Reduction {
        mutants: m,
        supermutants: input.initial_supermutants,
        grouping_reduction: crate::scheduler::reduction_factor(m, input.initial_supermutants),
        naive_cost: naive,
        actual_cost: measured,
        cost_reduction: if measured == 0 {
            1.0
        } else {
            naive / measured as f64
        },
    };

    let kills: Vec<(String, BTreeSet<MutationId>)> = input
        .ledgers
        .iter()
        .map(|l| (l.fuzzer.clone(), killed_set(&l.verdicts)))
        .collect();
    let mut notes = Vec::new();
    let venn = match venn_sets(&kills) {
        Ok(v) => v,
        Err(e) => {
            notes.push(format!("set regions omitted: {e}"));
            BTreeMap::new()
        }
    };

    let frequencies: Vec<u64> = (0..m)
        .map(|i| {
            input
                .ledgers
                .iter()
                .filter(|l| l.verdicts[i].killed())
                .count() as u64
        })
        .collect();
    let (observed, f1, f2, estimate) = chao1_from_frequencies(&frequencies);
    let residual = Residual {
        observed: observed as usize,
        singletons: f1 as usize,
        doubletons: f2 as usize,
        chao1: ratio_f64(estimate),
    };

    let overlap: usize = rows.iter().map(|r| r.total_covered).sum::<usize>();
    if rows.len() > 1 && overlap > combined.total_covered {
        notes.push(format!(
            "per-fuzzer coverage sums to {overlap}, combined coverage counts each mutation once ({})",
            combined.total_covered
        ));
    }

    Ok(EvalReport {
        subject: input.subject.to_string(),
        sanitize: input.sanitize,
        mutants: m,
        rows,
        combined,
        operators,
        reduction,
        venn,
        residual,
        cost: input.cost.clone(),
        notes,
    })
}

/// Violations of the table arithmetic, set-region and ensemble invariants.
pub fn check_report(r: &EvalReport) -> Vec<String> {
    let mut out = Vec::new();
    for row in r.rows.iter().chain([&r.combined]) {
        if row.total_covered != row.phase1_covered + row.phase2_covered {
            out.push(format!("{}: covered columns do not add up", row.fuzzer));
        }
        if row.total_killed != row.phase1_killed + row.phase2_killed {
            out.push(format!("{}: killed columns do not add up", row.fuzzer));
        }
        if row.total_killed > row.total_covered {
            out.push(format!("{}: more kills than covered mutations", row.fuzzer));
        }
    }
    let best = r.rows.iter().map(|x| x.total_killed).max().unwrap_or(0);
    if r.combined.total_killed < best {
        out.push("combined kills below the best single fuzzer".to_string());
    }
    if !r.venn.is_empty() {
        let sum: usize = r.venn.values().sum();
        if sum != r.combined.total_killed {
            out.push(format!(
                "set regions sum to {sum}, union is {}",
                r.combined.total_killed
            ));
        }
        for row in &r.rows {
            let marginal: usize = r
                .venn
                .iter()
                .filter(|(k, _)| k.split('+').any(|n| n == row.fuzzer))
                .map(|(_, c)| c)
                .sum();
            if marginal != row.total_killed {
                out.push(format!(
                    "{}: set-region marginal {marginal} != {}",
                    row.fuzzer, row.total_killed
                ));
            }
        }
    }
    if r.reduction.grouping_reduction < 1.0 {
        out.push("grouping reduction below 1".to_string());
    }
    out
}

/// `part / whole` as a percentage with one decimal.
pub fn percent(part: usize, whole: usize) -> String {
    if whole == 0 {
        return "0.0".to_string();
    }
    format!("{:.1}", 100.0 * part as f64 / whole as f64)
}
