use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{percent, EvalReport};

/// All subject reports of one run plus corpus-wide reduction sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub subjects: Vec<EvalReport>,
    pub total_mutants: usize,
    pub total_supermutants: usize,
    pub mean_grouping_reduction: f64,
    pub mean_cost_reduction: f64,
}

impl RunReport {
    pub fn new(subjects: Vec<EvalReport>) -> Self {
        let n = subjects.len().max(1) as f64;
        RunReport {
            total_mutants: subjects.iter().map(|s| s.reduction.mutants).sum(),
            total_supermutants: subjects.iter().map(|s| s.reduction.supermutants).sum(),
            mean_grouping_reduction: subjects
                .iter()
                .map(|s| s.reduction.grouping_reduction)
                .sum::<f64>()
                / n,
            mean_cost_reduction: subjects
                .iter()
                .map(|s| s.reduction.cost_reduction)
                .sum::<f64>()
                / n,
            subjects,
        }
    }
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes report.json, report.csv, venn.json, operators.csv and
/// reduction.csv into `dir`.
pub fn write_outputs(dir: &Path, run: &RunReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(run).map_err(io::Error::other)?;
    fs::write(dir.join("report.json"), json + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("report.csv")).map_err(csv_err)?;
    w.write_record([
        "subject",
        "fuzzer",
        "mutants",
        "phase1_covered",
        "phase1_killed",
        "phase2_covered",
        "phase2_killed",
        "total_covered",
        "total_killed",
        "covered_pct",
        "killed_pct",
    ])
    .map_err(csv_err)?;
    for s in &run.subjects {
        for r in s.rows.iter().chain([&s.combined]) {
            w.write_record([
                s.subject.clone(),
                r.fuzzer.clone(),
                s.mutants.to_string(),
                r.phase1_covered.to_string(),
                r.phase1_killed.to_string(),
                r.phase2_covered.to_string(),
                r.phase2_killed.to_string(),
                r.total_covered.to_string(),
                r.total_killed.to_string(),
                percent(r.total_covered, s.mutants),
                percent(r.total_killed, s.mutants),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let venn: BTreeMap<&str, &BTreeMap<String, usize>> = run
        .subjects
        .iter()
        .map(|s| (s.subject.as_str(), &s.venn))
        .collect();
    fs::write(
        dir.join("venn.json"),
        serde_json::to_string_pretty(&venn).map_err(io::Error::other)? + "\n",
    )?;

    let mut w = csv::Writer::from_path(dir.join("operators.csv")).map_err(csv_err)?;
    w.write_record([
        "subject",
        "operator",
        "fuzzer",
        "mutations",
        "covered_default",
        "covered_sanitize",
        "killed_default",
        "killed_sanitize",
    ])
    .map_err(csv_err)?;
    for s in &run.subjects {
        for o in &s.operators {
            w.write_record([
                s.subject.clone(),
                o.operator.to_string(),
                o.fuzzer.clone(),
                o.mutations.to_string(),
                opt(o.covered_default),
                opt(o.covered_sanitize),
                opt(o.killed_default),
                opt(o.killed_sanitize),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("reduction.csv")).map_err(csv_err)?;
    w.write_record([
        "subject",
        "mutants",
        "supermutants",
        "grouping_reduction",
        "naive_cost",
        "actual_cost",
        "cost_reduction",
    ])
    .map_err(csv_err)?;
    for s in &run.subjects {
        let r = &s.reduction;
        w.write_record([
            s.subject.clone(),
            r.mutants.to_string(),
            r.supermutants.to_string(),
            format!("{:.2}", r.grouping_reduction),
            format!("{:.0}", r.naive_cost),
            r.actual_cost.to_string(),
            format!("{:.2}", r.cost_reduction),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        "total".to_string(),
        run.total_mutants.to_string(),
        run.total_supermutants.to_string(),
        format!("{:.2}", run.mean_grouping_reduction),
        format!(
            "{:.0}",
            run.subjects
                .iter()
                .map(|s| s.reduction.naive_cost)
                .sum::<f64>()
        ),
        run.subjects
            .iter()
            .map(|s| s.reduction.actual_cost)
            .sum::<u64>()
            .to_string(),
        format!("{:.2}", run.mean_cost_reduction),
    ])
    .map_err(csv_err)?;
    w.flush()
}

pub fn read_reports(dir: &Path) -> io::Result<RunReport> {
    let text = fs::read_to_string(dir.join("report.json"))?;
    serde_json::from_str(&text).map_err(io::Error::other)
}
