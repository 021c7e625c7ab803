//! Supermutant construction and splitting.
//!
//! Mutations reached by the seed corpus are grouped by greedy first-fit
//! colouring of a conflict graph whose edges join mutations that some seed
//! covers together or that live in the same function. Unreached mutations
//! are shuffled and packed into bounded batches.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mutation::{MutationId, MutationPoint};

pub const DEFAULT_BATCH_SIZE: usize = 100;

/// Mutations covered by each seed input on the location build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub rows: Vec<BTreeSet<MutationId>>,
}

impl CoverageMatrix {
    pub fn new(rows: Vec<BTreeSet<MutationId>>) -> Self {
        CoverageMatrix { rows }
    }

    pub fn covered(&self) -> BTreeSet<MutationId> {
        self.rows.iter().flatten().copied().collect()
    }

    /// Checks that every referenced id is below `mutation_count`.
    pub fn validate(&self, mutation_count: usize) -> Result<(), SchedulerError> {
        match self
            .rows
            .iter()
            .flatten()
            .find(|id| id.0 as usize >= mutation_count)
        {
            Some(id) => Err(SchedulerError::UnknownId(*id)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    CoveredGroup,
    UncoveredBatch,
    /// `uncovered` is inherited from the parent so a split remainder of an
    /// uncovered batch still splits on first coverage.
    SplitChild {
        parent: u32,
        uncovered: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Supermutant {
    pub id: u32,
    pub ids: BTreeSet<MutationId>,
    pub origin: Origin,
}

impl Supermutant {
    /// Whether this group was formed from mutations no seed reached.
    pub fn from_uncovered(&self) -> bool {
        match self.origin {
            Origin::CoveredGroup => false,
            Origin::UncoveredBatch => true,
            Origin::SplitChild { uncovered, .. } => uncovered,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("a mutation is never independent of itself ({0})")]
    SelfPair(MutationId),
    #[error("mutation {0} is not in the point list")]
    UnknownId(MutationId),
    #[error("no mutation points to schedule")]
    NoPoints,
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("split of supermutant {id} needs {need}")]
    BadSplit { id: u32, need: &'static str },
}

/// True iff no row of `cov` covers both `a` and `b`.
pub fn independent(
    a: MutationId,
    b: MutationId,
    cov: &CoverageMatrix,
) -> Result<bool, SchedulerError> {
    if a == b {
        return Err(SchedulerError::SelfPair(a));
    }
    Ok(!cov.rows.iter().any(|r| r.contains(&a) && r.contains(&b)))
}

pub fn build_supermutants(
    points: &[MutationPoint],
    cov: &CoverageMatrix,
    batch_size: usize,
    rng_seed: u64,
) -> Result<Vec<Supermutant>, SchedulerError> {
    if points.is_empty() {
        return Err(SchedulerError::NoPoints);
    }
    if batch_size == 0 {
        return Err(SchedulerError::ZeroBatch);
    }
    cov.validate(points.len())?;
    let function_of = |id: MutationId| points[id.0 as usize].function.as_str();

    let covered = cov.covered();
    let mut conflicts: BTreeMap<MutationId, BTreeSet<MutationId>> = BTreeMap::new();
    for row in &cov.rows {
        for &a in row {
            let entry = conflicts.entry(a).or_default();
            entry.extend(row.iter().copied().filter(|b| *b != a));
        }
    }

    struct Group<'a> {
        ids: BTreeSet<MutationId>,
        functions: BTreeSet<&'a str>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for &id in &covered {
        let f = function_of(id);
        let neighbours = &conflicts[&id];
        let slot = groups
            .iter()
            .position(|g| !g.functions.contains(f) && g.ids.is_disjoint(neighbours));
        match slot {
            Some(i) => {
                groups[i].ids.insert(id);
                groups[i].functions.insert(f);
            }
            None => groups.push(Group {
                ids: [id].into(),
                functions: [f].into(),
            }),
        }
    }

    let mut uncovered: Vec<MutationId> = points
        .iter()
        .map(|m| m.id)
        .filter(|id| !covered.contains(id))
        .collect();
    uncovered.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut batches: Vec<Group> = Vec::new();
    for id in uncovered {
        let f = function_of(id);
        let slot = batches
            .iter()
            .position(|b| b.ids.len() < batch_size && !b.functions.contains(f));
        match slot {
            Some(i) => {
                batches[i].ids.insert(id);
                batches[i].functions.insert(f);
            }
            None => batches.push(Group {
                ids: [id].into(),
                functions: [f].into(),
            }),
        }
    }

    let tagged = groups
        .into_iter()
        .map(|g| (g.ids, Origin::CoveredGroup))
        .chain(batches.into_iter().map(|b| (b.ids, Origin::UncoveredBatch)));
    Ok(tagged
        .enumerate()
        .map(|(i, (ids, origin))| Supermutant {
            id: i as u32,
            ids,
            origin,
        })
        .collect())
}

/// Splits `s` so that every id in `multi_covered` is evaluated alone. The
/// remaining ids stay together in one child. Child ids start at `next_id`.
pub fn split_supermutant(
    s: &Supermutant,
    multi_covered: &BTreeSet<MutationId>,
    next_id: u32,
) -> Result<Vec<Supermutant>, SchedulerError> {
    if !multi_covered.is_subset(&s.ids) {
        return Err(SchedulerError::BadSplit {
            id: s.id,
            need: "covered ids drawn from the supermutant",
        });
    }
    let enough = multi_covered.len() >= 2 || (s.from_uncovered() && !multi_covered.is_empty());
    if !enough || s.ids.len() < 2 {
        return Err(SchedulerError::BadSplit {
            id: s.id,
            need: "two covered ids, or one in an uncovered batch",
        });
    }
    let origin = |uncovered| Origin::SplitChild {
        parent: s.id,
        uncovered,
    };
    let mut children: Vec<Supermutant> = multi_covered
        .iter()
        .map(|id| Supermutant {
            id: 0,
            ids: [*id].into(),
            origin: origin(false),
        })
        .collect();
    let rest: BTreeSet<MutationId> = s.ids.difference(multi_covered).copied().collect();
    if !rest.is_empty() {
        children.push(Supermutant {
            id: 0,
            ids: rest,
            origin: origin(s.from_uncovered()),
        });
    }
    for (i, c) in children.iter_mut().enumerate() {
        c.id = next_id + i as u32;
    }
    Ok(children)
}

/// Pairs of ids in one supermutant that violate independence or the
/// one-mutation-per-function rule.
pub fn partition_violations(
    points: &[MutationPoint],
    cov: &CoverageMatrix,
    supermutants: &[Supermutant],
) -> Vec<(u32, MutationId, MutationId)> {
    let mut out = Vec::new();
    for s in supermutants {
        let ids: Vec<MutationId> = s.ids.iter().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let same_fn = points[a.0 as usize].function == points[b.0 as usize].function;
                let check_cov = s.origin == Origin::CoveredGroup;
                if same_fn || (check_cov && !independent(a, b, cov).unwrap_or(false)) {
                    out.push((s.id, a, b));
                }
            }
        }
    }
    out
}

/// `mutations / supermutants`.
pub fn reduction_factor(mutations: usize, supermutants: usize) -> f64 {
    if supermutants == 0 {
        return 1.0;
    }
    mutations as f64 / supermutants as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::SiteId;
    use crate::mutation::{OperatorKind, Payload};

    fn m(i: u32) -> MutationId {
        MutationId(i)
    }

    fn points(functions: &[&str]) -> Vec<MutationPoint> {
        functions
            .iter()
            .enumerate()
            .map(|(i, f)| MutationPoint {
                id: m(i as u32),
                site: SiteId(i as u32),
                function: f.to_string(),
                operator: OperatorKind::DeleteCall,
                payload: Payload::Delete,
            })
            .collect()
    }

    fn rows(rows: &[&[u32]]) -> CoverageMatrix {
        CoverageMatrix::new(
            rows.iter()
                .map(|r| r.iter().map(|i| m(*i)).collect())
                .collect(),
        )
    }

    fn distinct_functions(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn independence_definition() {
        assert_eq!(independent(m(0), m(1), &rows(&[&[0], &[1]])), Ok(true));
        assert_eq!(independent(m(0), m(1), &rows(&[&[0, 1]])), Ok(false));
        assert_eq!(
            independent(m(2), m(2), &rows(&[])),
            Err(SchedulerError::SelfPair(m(2)))
        );
    }

    #[test]
    fn co_covered_mutations_stay_apart() {
        let names = distinct_functions(3);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let pts = points(&refs);
        let sms = build_supermutants(&pts, &rows(&[&[0, 1, 2]]), 100, 0).unwrap();
        assert_eq!(sms.len(), 3);
        assert!(sms
            .iter()
            .all(|s| s.ids.len() == 1 && s.origin == Origin::CoveredGroup));
    }

    #[test]
    fn independent_mutations_share_a_group() {
        let pts = points(&["a", "b", "c", "a"]);
        let sms = build_supermutants(&pts, &rows(&[&[0], &[1], &[2, 3]]), 100, 0).unwrap();
        // 0,1,2 are independent; 3 conflicts with 2 and shares a function with 0.
        assert_eq!(sms[0].ids, [m(0), m(1), m(2)].into());
        assert_eq!(sms[1].ids, [m(3)].into());
        assert!(partition_violations(&pts, &rows(&[&[0], &[1], &[2, 3]]), &sms).is_empty());
    }

    #[test]
    fn uncovered_batches_are_bounded() {
        let names = distinct_functions(250);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let sms = build_supermutants(&points(&refs), &CoverageMatrix::default(), 100, 9).unwrap();
        let sizes: Vec<usize> = sms.iter().map(|s| s.ids.len()).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
        assert!(sms.iter().all(|s| s.origin == Origin::UncoveredBatch));
    }

    #[test]
    fn uncovered_batches_respect_functions() {
        let pts = points(&["a", "a", "a", "b"]);
        let sms = build_supermutants(&pts, &CoverageMatrix::default(), 100, 3).unwrap();
        assert_eq!(sms.len(), 3);
        assert!(partition_violations(&pts, &CoverageMatrix::default(), &sms).is_empty());
    }

    #[test]
    fn every_id_in_exactly_one_supermutant() {
        let names = distinct_functions(40);
        let mut refs: Vec<&str> = names.iter().map(String::as_str).collect();
        refs.extend(["f1", "f2", "f3"]);
        let pts = points(&refs);
        let cov = rows(&[&[0, 5, 9], &[1, 2], &[40, 3], &[7]]);
        let sms = build_supermutants(&pts, &cov, 7, 11).unwrap();
        let mut seen = BTreeSet::new();
        for s in &sms {
            for id in &s.ids {
                assert!(seen.insert(*id), "{id} twice");
            }
        }
        assert_eq!(seen.len(), pts.len());
        assert!(partition_violations(&pts, &cov, &sms).is_empty());
    }

    #[test]
    fn building_is_seed_deterministic() {
        let names = distinct_functions(30);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let pts = points(&refs);
        let a = build_supermutants(&pts, &CoverageMatrix::default(), 8, 5).unwrap();
        let b = build_supermutants(&pts, &CoverageMatrix::default(), 8, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_points_rejected() {
        assert_eq!(
            build_supermutants(&[], &CoverageMatrix::default(), 100, 0),
            Err(SchedulerError::NoPoints)
        );
    }

    fn sm(ids: &[u32], origin: Origin) -> Supermutant {
        Supermutant {
            id: 4,
            ids: ids.iter().map(|i| m(*i)).collect(),
            origin,
        }
    }

    #[test]
    fn split_isolates_interacting_ids() {
        let s = sm(&[0, 1, 2], Origin::CoveredGroup);
        let kids = split_supermutant(&s, &[m(0), m(1)].into(), 10).unwrap();
        let sets: Vec<_> = kids.iter().map(|k| k.ids.clone()).collect();
        assert_eq!(sets, vec![[m(0)].into(), [m(1)].into(), [m(2)].into()]);
        assert_eq!(kids[0].id, 10);
        assert!(kids
            .iter()
            .all(|k| matches!(k.origin, Origin::SplitChild { parent: 4, .. })));
    }

    #[test]
    fn split_of_pair_gives_singletons() {
        let s = sm(&[0, 1], Origin::CoveredGroup);
        let kids = split_supermutant(&s, &[m(0), m(1)].into(), 0).unwrap();
        assert_eq!(kids.len(), 2);
    }

    #[test]
    fn uncovered_batch_splits_on_single_coverage() {
        let s = sm(&[3, 4, 5], Origin::UncoveredBatch);
        let kids = split_supermutant(&s, &[m(4)].into(), 0).unwrap();
        assert_eq!(kids[0].ids, [m(4)].into());
        assert_eq!(kids[1].ids, [m(3), m(5)].into());
        assert!(kids[1].from_uncovered());
        assert!(!kids[0].from_uncovered());
    }

    #[test]
    fn split_preconditions() {
        let s = sm(&[0, 1, 2], Origin::CoveredGroup);
        assert!(split_supermutant(&s, &[m(0)].into(), 0).is_err());
        assert!(split_supermutant(&s, &[m(0), m(7)].into(), 0).is_err());
    }

    #[test]
    fn reduction_arithmetic() {
        assert_eq!(format!("{:.2}", reduction_factor(17_234, 864)), "19.95");
        assert_eq!(reduction_factor(5, 5), 1.0);
    }
}
