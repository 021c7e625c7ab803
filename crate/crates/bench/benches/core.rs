use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mutbench_core::ir::{parse_program, Program};
use mutbench_core::mutation::{find_mutations, MutationId};
use mutbench_core::scheduler::{build_supermutants, CoverageMatrix};
use mutbench_core::vm::{BuildMode, ExecLimits, Vm};

const SUBJECTS: [(&str, &str); 3] = [
    (
        "expr_eval",
        include_str!("../../core/subjects/expr_eval.mir"),
    ),
    (
        "msg_handler",
        include_str!("../../core/subjects/msg_handler.mir"),
    ),
    (
        "ini_parse",
        include_str!("../../core/subjects/ini_parse.mir"),
    ),
];

fn program(text: &str) -> Program {
    parse_program(text.as_bytes()).unwrap()
}

fn vm_execution(c: &mut Criterion) {
    let p = program(SUBJECTS[0].1);
    let points = find_mutations(&p);
    let limits = ExecLimits::default();
    let input = b"12*34+56/7-8*9+1000";
    let mut group = c.benchmark_group("vm");
    for (name, build) in [
        ("baseline", BuildMode::baseline()),
        ("location", BuildMode::location()),
        ("sanitize", BuildMode::baseline().sanitized(true)),
    ] {
        let mut vm = Vm::new(&p, &points, &build).unwrap();
        group.bench_function(BenchmarkId::new("expr_eval", name), |b| {
            b.iter(|| vm.run(std::hint::black_box(input), &limits, 0))
        });
    }
    group.finish();
}

fn finder(c: &mut Criterion) {
    let mut group = c.benchmark_group("find_mutations");
    for (name, text) in SUBJECTS {
        let p = program(text);
        group.bench_function(name, |b| {
            b.iter(|| find_mutations(std::hint::black_box(&p)))
        });
    }
    group.finish();
}

fn scheduler(c: &mut Criterion) {
    let p = program(SUBJECTS[1].1);
    let points = find_mutations(&p);
    let build = BuildMode::location();
    let mut vm = Vm::new(&p, &points, &build).unwrap();
    let limits = ExecLimits::default();
    let rows: Vec<BTreeSet<MutationId>> = (0u8..10)
        .map(|kind| {
            vm.run(&[kind, 4, 1, 2, 3, 4], &limits, 0);
            vm.covered_mutations()
        })
        .collect();
    let cov = CoverageMatrix::new(rows);
    c.bench_function("build_supermutants/msg_handler", |b| {
        b.iter(|| build_supermutants(&points, std::hint::black_box(&cov), 100, 1).unwrap())
    });
}

criterion_group!(benches, vm_execution, finder, scheduler);
criterion_main!(benches);
