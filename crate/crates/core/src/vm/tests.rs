use proptest::prelude::*;

use super::*;
use crate::ir::parse_program;

fn parse(src: &str) -> Program {
    parse_program(src.as_bytes()).unwrap()
}

fn run(p: &Program, build: &BuildMode, input: &[u8]) -> ExecOutcome {
    execute(p, build, input, &ExecLimits::default(), 0).unwrap()
}

const DIVIDE: &str = "fn main {
  %b = read_input
  %q = div_u 100, %b
  ret %q
}
";

/// Reads a length byte and exits 1 when it is below 10, else 2.
const CHECK: &str = "fn main {
  %len = read_input
  %ok = cmp_slt %len, 10
  br_cond %ok, small, big
small:
  ret 1
big:
  ret 2
}
";

#[test]
fn minimal_program_exits_zero() {
    let o = run(&parse("fn main { ret 0 }"), &BuildMode::baseline(), b"");
    assert_eq!(o.status, ExecStatus::Exit(0));
    assert_eq!(o.covered_sites, [SiteId(0)].into_iter().collect());
    assert_eq!(o.steps, 1);
}

#[test]
fn division_by_zero_byte_traps() {
    let p = parse(DIVIDE);
    assert_eq!(
        run(&p, &BuildMode::baseline(), &[0]).status,
        ExecStatus::Trap(TrapKind::DivZero)
    );
    assert_eq!(
        run(&p, &BuildMode::baseline(), &[7]).status,
        ExecStatus::Exit(14)
    );
}

#[test]
fn oob_demo_depends_on_sanitizer() {
    let p = parse_program(include_bytes!("../../subjects/oob_demo.mir")).unwrap();
    let plain = run(&p, &BuildMode::baseline(), b"");
    let asan = run(&p, &BuildMode::baseline().sanitized(true), b"");
    assert_eq!(plain.status, ExecStatus::Exit(0));
    assert_eq!(asan.status, ExecStatus::Trap(TrapKind::OobRead));
}

#[test]
fn status_code_table() {
    assert_eq!(ExecStatus::Exit(0).code(), 0);
    assert_eq!(ExecStatus::Trap(TrapKind::ExplicitAbort).code(), 134);
    assert_eq!(ExecStatus::Trap(TrapKind::StepLimit).code(), 192);
    let all = [
        TrapKind::DivZero,
        TrapKind::OobRead,
        TrapKind::OobWrite,
        TrapKind::DoubleFree,
        TrapKind::InvalidFree,
        TrapKind::ExplicitAbort,
        TrapKind::StepLimit,
        TrapKind::HeapLimit,
    ];
    let mut codes: Vec<u8> = all.iter().map(|k| ExecStatus::Trap(*k).code()).collect();
    for (k, c) in all.iter().zip(&codes) {
        let range = if k.is_limit() { 192..=199 } else { 128..=191 };
        assert!(range.contains(c), "{k:?} -> {c}");
    }
    codes.sort();
    codes.dedup();
    assert_eq!(codes.len(), all.len());
}

#[test]
fn step_limit_is_enforced() {
    let p = parse("fn main {\nloop:\n  br loop\n}\n");
    let limits = ExecLimits {
        max_steps: 50,
        ..ExecLimits::default()
    };
    let o = execute(&p, &BuildMode::baseline(), b"", &limits, 0).unwrap();
    assert_eq!(o.status, ExecStatus::Trap(TrapKind::StepLimit));
    assert_eq!(o.steps, 50);
}

#[test]
fn zero_limits_rejected() {
    let p = parse("fn main { ret 0 }");
    let limits = ExecLimits {
        max_heap: 0,
        ..ExecLimits::default()
    };
    assert_eq!(
        execute(&p, &BuildMode::baseline(), b"", &limits, 0),
        Err(VmError::InvalidLimits)
    );
}

#[test]
fn empty_mutant_rejected() {
    let p = parse("fn main { ret 0 }");
    assert_eq!(
        execute(&p, &BuildMode::mutant([]), b"", &ExecLimits::default(), 0),
        Err(VmError::EmptyMutant)
    );
}

#[test]
fn location_build_reports_reached_mutations() {
    let p = parse(CHECK);
    let points = crate::mutation::find_mutations(&p);
    let o = run(&p, &BuildMode::location(), &[3]);
    let expected: BTreeSet<_> = points.iter().map(|m| m.id).collect();
    assert_eq!(o.covered_mutations, expected);
    // Baseline builds carry no mutation instrumentation.
    assert!(run(&p, &BuildMode::baseline(), &[3])
        .covered_mutations
        .is_empty());
}

#[test]
fn boundary_complement_flips_branch() {
    let p = parse(CHECK);
    let points = crate::mutation::find_mutations(&p);
    let slt = points
        .iter()
        .find(|m| m.operator == crate::mutation::OperatorKind::SignedLt)
        .unwrap();
    let base = run(&p, &BuildMode::baseline(), &[5]);
    let mutant = run(&p, &BuildMode::mutant([slt.id]), &[5]);
    assert_eq!(base.status, ExecStatus::Exit(1));
    assert_eq!(mutant.status, ExecStatus::Exit(2));
    assert_eq!(mutant.covered_mutations, [slt.id].into_iter().collect());
}

#[test]
fn edges_record_taken_branches() {
    let p = parse(CHECK);
    let small = run(&p, &BuildMode::baseline(), &[1]);
    let big = run(&p, &BuildMode::baseline(), &[20]);
    assert!(small.covered_edges.contains(&(2, 3)));
    assert!(big.covered_edges.contains(&(2, 4)));
    assert!(!small.covered_edges.contains(&(2, 4)));
}

#[test]
fn equality_progress_pseudo_edges() {
    let p = parse("fn main {\n  %a = call @input_len()\n  %e = cmp_eq %a, 0x0102\n  ret %e\n}\n");
    let o = run(&p, &BuildMode::baseline(), &[0; 3]);
    let pseudo: Vec<_> = o
        .covered_edges
        .iter()
        .filter(|e| e.1 >= PSEUDO_EDGE_BASE)
        .collect();
    assert!(pseudo.is_empty());
    let o = run(&p, &BuildMode::baseline(), &[0; 0x102]);
    assert!(o.covered_edges.contains(&(1, PSEUDO_EDGE_BASE + 8)));
}

#[test]
fn calls_and_exit_intrinsic() {
    let src = "fn twice(%x: i64) {\n  %y = add %x, %x\n  ret %y\n}\nfn main {\n  %a = call twice(21)\n  call @exit(%a)\n  ret 0\n}\n";
    let o = run(&parse(src), &BuildMode::baseline(), b"");
    assert_eq!(o.status, ExecStatus::Exit(42));
}

#[test]
fn deep_recursion_traps() {
    let src = "fn r(%n: i64) {\n  %m = add %n, 1\n  %x = call r(%m)\n  ret %x\n}\nfn main {\n  %x = call r(0)\n  ret %x\n}\n";
    let o = run(&parse(src), &BuildMode::baseline(), b"");
    assert_eq!(o.status, ExecStatus::Trap(TrapKind::OobWrite));
}

#[test]
fn output_is_truncated_at_limit() {
    let src = "fn main {\nloop:\n  write_output 65\n  br loop\n}\n";
    let limits = ExecLimits {
        max_steps: 1000,
        max_output: 10,
        ..ExecLimits::default()
    };
    let o = execute(&parse(src), &BuildMode::baseline(), b"", &limits, 0).unwrap();
    assert_eq!(o.output, vec![65; 10]);
}

/// Copies input into an 8-byte buffer, then sums the first `n` bytes read
/// back from it, where `n` is the first input byte.
const BUFFER: &str = "fn main {
  %buf = alloc 8
  %n = read_input
  %i = const 0
  %s = const 0
  br head
head:
  %c = cmp_ult %i, %n
  br_cond %c, body, done
body:
  %p = add %buf, %i
  %v = load u8 %p
  %s = add %s, %v
  %i = add %i, 1
  br head
done:
  %r = rem %s, 7
  ret %r
}
";

proptest! {
    #[test]
    fn execution_is_deterministic(input in proptest::collection::vec(any::<u8>(), 0..24), seed in any::<u64>()) {
        let p = parse(BUFFER);
        let limits = ExecLimits::default();
        let a = execute(&p, &BuildMode::location(), &input, &limits, seed).unwrap();
        let b = execute(&p, &BuildMode::location(), &input, &limits, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sanitizer_only_adds_traps(input in proptest::collection::vec(any::<u8>(), 0..4)) {
        let p = parse(BUFFER);
        let plain = run(&p, &BuildMode::baseline(), &input);
        let asan = run(&p, &BuildMode::baseline().sanitized(true), &input);
        if !plain.status.is_exit() {
            prop_assert!(!asan.status.is_exit());
        }
    }

    #[test]
    fn unreached_mutations_are_neutral(n in 0u8..3) {
        let p = parse(CHECK);
        let points = crate::mutation::find_mutations(&p);
        let base = run(&p, &BuildMode::baseline(), &[n]);
        // Mutations in the `big` block are never reached for small lengths.
        for m in points.iter().filter(|m| m.site.0 >= 4) {
            let o = run(&p, &BuildMode::mutant([m.id]), &[n]);
            prop_assert!(o.covered_mutations.is_empty());
            prop_assert_eq!(o.status, base.status);
            prop_assert_eq!(&o.output, &base.output);
        }
    }
}
