//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use mutbench_core::config::{BenchConfig, Budgets};
use mutbench_core::ir::parse_program;
use mutbench_core::mutation::{find_mutations, MutantSpec, MutationId, OperatorKind};
use mutbench_core::pipeline::{
    confirm_kill, kill_rule, singleton_seed_kills, EvalContext, MutationVerdict,
};
use mutbench_core::report::{chao1_from_frequencies, check_report, RunReport};
use mutbench_core::runner;
use mutbench_core::scheduler::{reduction_factor, CoverageMatrix, Supermutant};
use mutbench_core::vm::{execute, BuildMode, ExecLimits, ExecStatus, TrapKind};

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn workspace_dir() -> PathBuf {
    crate_dir()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

fn bundled_subjects() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(crate_dir().join("subjects"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "mir"))
        .collect();
    v.sort();
    v
}

/// One evaluation of the whole bundled corpus in both sanitizer modes,
/// shared by several criteria.
struct CorpusRun {
    _dir: tempfile::TempDir,
    out: PathBuf,
    report: RunReport,
}

fn corpus() -> &'static CorpusRun {
    static RUN: OnceLock<CorpusRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig {
            subjects: bundled_subjects(),
            output: dir.path().to_path_buf(),
            compare_sanitize: true,
            rng_seed: 7,
            budget: Budgets {
                seed_instances: 5,
                seed_budget: 100_000,
                phase2_budget: 20_000,
                ..Budgets::default()
            },
            ..BenchConfig::default()
        };
        let report = runner::run(&cfg).expect("corpus run");
        CorpusRun {
            out: dir.path().to_path_buf(),
            _dir: dir,
            report,
        }
    })
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn read_seeds(dir: &Path) -> Vec<Vec<u8>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files.iter().map(|f| std::fs::read(f).unwrap()).collect()
}

fn killed(v: &[MutationVerdict]) -> BTreeSet<MutationId> {
    v.iter().filter(|x| x.killed()).map(|x| x.id).collect()
}

fn soundness() -> Result<String, String> {
    let run = corpus();
    let mut checked = 0usize;
    let mut problems = Vec::new();
    for s in &run.report.subjects {
        let dir = run.out.join("work").join(&s.subject);
        let program = parse_program(&std::fs::read(dir.join("subject.mir")).unwrap()).unwrap();
        let points = find_mutations(&program);
        for fuzzer in ["random", "covguided"] {
            let seeds = read_seeds(&dir.join(fuzzer).join("seeds"));
            for (sanitize, ledger) in [
                (false, dir.join(fuzzer)),
                (true, dir.join(fuzzer).join("alternate")),
            ] {
                let verdicts: Vec<MutationVerdict> = read_json(&ledger.join("verdicts.json"));
                let ctx = EvalContext {
                    program: &program,
                    points: &points,
                    limits: ExecLimits::default(),
                    sanitize,
                    differential_output: false,
                    exec_seed: 7,
                };
                let oracle = singleton_seed_kills(&ctx, &seeds).unwrap();
                let phase1: BTreeSet<MutationId> = verdicts
                    .iter()
                    .filter(|v| v.killed_phase1)
                    .map(|v| v.id)
                    .collect();
                for id in oracle.symmetric_difference(&phase1) {
                    problems.push(format!(
                        "{}/{fuzzer}/sanitize={sanitize}: phase I verdict of {id} differs from singleton replay",
                        s.subject
                    ));
                }
                for v in verdicts.iter().filter(|v| v.killed()) {
                    let input = v.killing_input.as_deref().unwrap_or_default();
                    if confirm_kill(&ctx, &MutantSpec::single(v.id), input)
                        .unwrap()
                        .is_none()
                    {
                        problems.push(format!(
                            "{}/{fuzzer}: kill of {} not reproducible alone",
                            s.subject, v.id
                        ));
                    }
                }
                checked += verdicts.len();
            }
        }
    }
    if problems.is_empty() {
        Ok(format!(
            "{checked} verdicts over {} subjects, 0 discrepancies",
            run.report.subjects.len()
        ))
    } else {
        Err(format!(
            "{} discrepancies: {:?}",
            problems.len(),
            &problems[..problems.len().min(5)]
        ))
    }
}

const MATRIX_PROGRAM: &str = "program kill_matrix
entry main

fn outcome(%k: i64) {
  locals %z, %q, %p, %r, %v
entry:
  switch %k, other, 0: zero, 1: one, 2: high, 3: stop, 4: div, 5: oobr, 6: dfree, 7: ifree, 8: oobw, 9: spin, 10: heap, 11: noisy
zero:
  ret 0
one:
  ret 1
high:
  ret 127
stop:
  abort
div:
  %z = mul %k, 0
  %q = div_s 10, %z
  ret %q
oobr:
  %p = alloc 4
  %r = add %p, 4096
  %v = load u8 %r
  ret %v
dfree:
  %p = alloc 4
  free %p
  free %p
  ret 0
ifree:
  %p = alloc 4
  %r = add %p, 1
  free %r
  ret 0
oobw:
  %p = alloc 4
  %r = add %p, 4096
  store u8 %r, 1
  ret 0
spin:
  br spin
heap:
  %p = alloc 4194304
  ret 0
noisy:
  write_output 65
  ret 0
other:
  ret 99
}

fn main() {
  locals %a, %b, %t, %r, %s
entry:
  %a = read_input
  %b = read_input
  %t = cmp_ult %a, 256
  br_cond %t, left, right
left:
  %r = call outcome(%a)
  ret %r
right:
  %s = call outcome(%b)
  ret %s
}
";

fn kill_matrix() -> Result<String, String> {
    // (status, canonical code, output) for each outcome selector.
    let table: [(ExecStatus, u8, &[u8]); 12] = [
        (ExecStatus::Exit(0), 0, b""),
        (ExecStatus::Exit(1), 1, b""),
        (ExecStatus::Exit(127), 127, b""),
        (ExecStatus::Trap(TrapKind::ExplicitAbort), 134, b""),
        (ExecStatus::Trap(TrapKind::DivZero), 136, b""),
        (ExecStatus::Trap(TrapKind::OobRead), 139, b""),
        (ExecStatus::Trap(TrapKind::DoubleFree), 135, b""),
        (ExecStatus::Trap(TrapKind::InvalidFree), 133, b""),
        (ExecStatus::Trap(TrapKind::OobWrite), 138, b""),
        (ExecStatus::Trap(TrapKind::StepLimit), 192, b""),
        (ExecStatus::Trap(TrapKind::HeapLimit), 193, b""),
        (ExecStatus::Exit(0), 0, b"A"),
    ];
    let clean = |i: usize| i <= 2 || i == 11;
    let mut cells = 0;

    // Status level: every (baseline, mutant) pair, both oracle modes.
    for (i, (bs, bc, bo)) in table.iter().enumerate() {
        assert_eq!(bs.code(), *bc, "code of {bs:?}");
        for (j, (ms, mc, mo)) in table.iter().enumerate() {
            for diff in [false, true] {
                let expect = clean(i) && (bc != mc || (diff && bo != mo));
                let got = kill_rule(*bs, bo, *ms, mo, diff);
                assert_eq!(
                    got.is_some(),
                    expect,
                    "kill_rule({bs:?}, {ms:?}, diff={diff}) for cell ({i},{j})"
                );
                if let Some(pair) = got {
                    assert_eq!(pair, (*bc, *mc));
                }
                cells += 1;
            }
        }
    }

    // Program level: the mutant takes the other branch, so the input
    // (i, j) drives the baseline to outcome i and the mutant to outcome j.
    let program = parse_program(MATRIX_PROGRAM.as_bytes()).unwrap();
    let points = find_mutations(&program);
    let redirect = points
        .iter()
        .find(|m| m.function == "main" && m.operator == OperatorKind::RedirectBranch)
        .unwrap()
        .id;
    for (i, (bs, _, bo)) in table.iter().enumerate() {
        let o = execute(
            &program,
            &BuildMode::baseline(),
            &[i as u8, 0],
            &ExecLimits::default(),
            0,
        )
        .unwrap();
        assert_eq!(
            (o.status, o.output.as_slice()),
            (*bs, *bo),
            "baseline outcome {i}"
        );
    }
    for diff in [false, true] {
        let ctx = EvalContext {
            program: &program,
            points: &points,
            limits: ExecLimits::default(),
            sanitize: false,
            differential_output: diff,
            exec_seed: 0,
        };
        for (i, (_, bc, bo)) in table.iter().enumerate() {
            for (j, (_, mc, mo)) in table.iter().enumerate() {
                let expect = clean(i) && (bc != mc || (diff && bo != mo));
                let got =
                    confirm_kill(&ctx, &MutantSpec::single(redirect), &[i as u8, j as u8]).unwrap();
                assert_eq!(
                    got.is_some(),
                    expect,
                    "confirm_kill cell ({i},{j}) diff={diff}"
                );
                cells += 1;
            }
        }
    }
    Ok(format!("{cells} matrix cells asserted"))
}

fn grouping() -> Result<String, String> {
    let run = corpus();
    let mut violations = 0usize;
    let mut factors = Vec::new();
    for s in &run.report.subjects {
        let dir = run.out.join("work").join(&s.subject);
        let program = parse_program(&std::fs::read(dir.join("subject.mir")).unwrap()).unwrap();
        let points = find_mutations(&program);
        let cov: CoverageMatrix = read_json(&dir.join("coverage.json"));
        let sms: Vec<Supermutant> = read_json(&dir.join("supermutants.json"));
        let mut seen = vec![0usize; points.len()];
        for sm in &sms {
            let ids: Vec<MutationId> = sm.ids.iter().copied().collect();
            for (k, a) in ids.iter().enumerate() {
                seen[a.0 as usize] += 1;
                for b in &ids[k + 1..] {
                    let pa = &points[a.0 as usize];
                    let pb = &points[b.0 as usize];
                    let co_covered = cov.rows.iter().any(|r| r.contains(a) && r.contains(b));
                    if pa.function == pb.function || co_covered {
                        violations += 1;
                    }
                }
            }
        }
        violations += seen.iter().filter(|&&n| n != 1).count();
        let f = reduction_factor(points.len(), sms.len());
        if (f - s.reduction.grouping_reduction).abs() > 1e-12 {
            return Err(format!(
                "{}: reported factor disagrees with supermutants.json",
                s.subject
            ));
        }
        factors.push((s.subject.clone(), f));
    }
    let detail = factors
        .iter()
        .map(|(n, f)| format!("{n}={f:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    let max = factors.iter().map(|x| x.1).fold(0.0, f64::max);
    let min = factors.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    if violations == 0 && max >= 2.0 && min >= 1.0 {
        Ok(format!("{detail}; 0 violations"))
    } else {
        Err(format!("{detail}; {violations} violations"))
    }
}

fn phase_asymmetry() -> Result<String, String> {
    let run = corpus();
    let (mut p1, mut total) = (0usize, 0usize);
    for s in &run.report.subjects {
        for r in &s.rows {
            p1 += r.phase1_killed;
            total += r.total_killed;
        }
    }
    let share = p1 as f64 / total.max(1) as f64;
    let msg = format!("{p1} of {total} kills in phase I ({:.1}%)", share * 100.0);
    if total > 0 && share >= 0.8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sanitizer_effect() -> Result<String, String> {
    let run = corpus();
    let dir = run.out.join("work").join("oob_mutant");
    let mut plain = BTreeSet::new();
    let mut sanitized = BTreeSet::new();
    for fuzzer in ["random", "covguided"] {
        plain.extend(killed(&read_json::<Vec<MutationVerdict>>(
            &dir.join(fuzzer).join("verdicts.json"),
        )));
        sanitized.extend(killed(&read_json::<Vec<MutationVerdict>>(
            &dir.join(fuzzer).join("alternate").join("verdicts.json"),
        )));
    }
    let msg = format!(
        "oob_mutant kills: {} default, {} sanitize",
        plain.len(),
        sanitized.len()
    );
    if sanitized.len() > plain.len() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn fuzzer_separation() -> Result<String, String> {
    let run = corpus();
    let s = run
        .report
        .subjects
        .iter()
        .find(|s| s.subject == "gated")
        .ok_or("gated missing")?;
    let get = |f: &str| {
        s.rows
            .iter()
            .find(|r| r.fuzzer == f)
            .map(|r| r.total_killed)
            .unwrap_or(0)
    };
    let (cg, rnd) = (get("covguided"), get("random"));
    let msg = format!("gated kills: covguided {cg}, random {rnd}");
    if cg > rnd {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn report_algebra() -> Result<String, String> {
    let mut violations = Vec::new();
    let mut reports = vec![&corpus().report];
    let demo = demo_runs();
    reports.push(&demo.0);
    for r in &reports {
        for s in &r.subjects {
            violations.extend(
                check_report(s)
                    .into_iter()
                    .map(|v| format!("{}: {v}", s.subject)),
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let len = rng.gen_range(0..40);
        let hist: Vec<u64> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0
                } else {
                    rng.gen_range(1..5)
                }
            })
            .collect();
        let observed = hist.iter().filter(|&&c| c > 0).count() as u128;
        let f1 = hist.iter().filter(|&&c| c == 1).count() as u128;
        let f2 = hist.iter().filter(|&&c| c == 2).count() as u128;
        let (num, den) = if f2 > 0 {
            (2 * f2 * observed + f1 * f1, 2 * f2)
        } else {
            (2 * observed + f1 * f1.saturating_sub(1), 2)
        };
        let (s, g1, g2, est) = chao1_from_frequencies(&hist);
        if (s as u128, g1 as u128, g2 as u128) != (observed, f1, f2) {
            violations.push(format!("histogram {case}: wrong frequency counts"));
        }
        if *est.numer() * den != num * *est.denom() || est != Ratio::new(num, den) {
            violations.push(format!("histogram {case}: chao1 {est} != {num}/{den}"));
        }
    }
    if violations.is_empty() {
        Ok(format!(
            "{} subject reports and 20 chao1 histograms, 0 violations",
            reports.iter().map(|r| r.subjects.len()).sum::<usize>()
        ))
    } else {
        Err(format!("{violations:?}"))
    }
}

/// Two independent runs of the demo config: (report, hash, hash).
fn demo_runs() -> &'static (RunReport, String, String) {
    static RUNS: OnceLock<(RunReport, String, String)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let config = workspace_dir().join("configs").join("demo.toml");
        let mut hashes = Vec::new();
        let mut first = None;
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = BenchConfig::load(&config).unwrap();
            cfg.output = dir.path().to_path_buf();
            let report = runner::run(&cfg).unwrap();
            let bytes = std::fs::read(dir.path().join("report.json")).unwrap();
            hashes.push(hex::encode(Sha256::digest(&bytes)));
            first.get_or_insert(report);
        }
        (first.unwrap(), hashes[0].clone(), hashes[1].clone())
    })
}

fn determinism() -> Result<String, String> {
    let (_, a, b) = demo_runs();
    if a == b {
        Ok(format!("report.json sha256 {}", &a[..16]))
    } else {
        Err(format!("hashes differ: {a} vs {b}"))
    }
}

fn reduction_spot_check() -> Result<String, String> {
    let text = format!("{:.2}", reduction_factor(17_234, 864));
    if text == "19.95" {
        Ok(format!("17234 / 864 = {text}"))
    } else {
        Err(format!("17234 / 864 = {text}"))
    }
}

type Criterion = (&'static str, fn() -> Result<String, String>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("supermutant soundness", soundness),
        ("kill-rule conformance", kill_matrix),
        ("grouping reduction", grouping),
        ("phase asymmetry", phase_asymmetry),
        ("sanitizer effect", sanitizer_effect),
        ("fuzzer separation", fuzzer_separation),
        ("report algebra", report_algebra),
        ("determinism", determinism),
        ("reduction arithmetic", reduction_spot_check),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
