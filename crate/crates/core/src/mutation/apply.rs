use std::collections::BTreeMap;

use super::{
    find_mutations, MutantSpec, MutationError, MutationId, MutationPoint, OperatorKind, Payload,
};
use crate::ir::{BinOp, Instruction, Op, Operand, Program, Slot};

/// Result of rewriting one instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rewrite {
    Replace(Op),
    /// Drop the instruction's effect; its result slot, if any, becomes 0.
    Delete {
        zero: Option<Slot>,
    },
    /// Keep the instruction and run `Op` right before it.
    InsertBefore(Op),
}

fn mismatch(kind: OperatorKind, payload: &Payload) -> MutationError {
    MutationError::PatternMismatch {
        kind,
        payload: payload.clone(),
    }
}

fn halve(op: &Op) -> Option<Op> {
    let mut out = op.clone();
    match &mut out {
        Op::Alloc { count, halved, .. } | Op::AllocZeroed { count, halved, .. } => {
            if *halved {
                return None;
            }
            match count {
                Operand::Imm(n) => *n /= 2,
                Operand::Slot(_) => *halved = true,
            }
        }
        _ => return None,
    }
    Some(out)
}

/// Applies operator `kind` with `payload` to a single instruction.
pub fn operator_rewrite(
    kind: OperatorKind,
    op: &Op,
    payload: &Payload,
) -> Result<Rewrite, MutationError> {
    use OperatorKind as K;
    let err = || mismatch(kind, payload);

    match (kind, payload) {
        (K::ReassignStore, Payload::Redirect(to)) => match op {
            Op::Store { width, addr, value } if addr != to => Ok(Rewrite::Replace(Op::Store {
                width: *width,
                addr: *to,
                value: *value,
            })),
            _ => Err(err()),
        },
        (K::DeleteFunctionArgument, Payload::ZeroArgument(i)) => match op {
            Op::Call { dst, callee, args } if *i < args.len() => {
                let mut args = args.clone();
                args[*i] = Operand::Imm(0);
                Ok(Rewrite::Replace(Op::Call {
                    dst: *dst,
                    callee: callee.clone(),
                    args,
                }))
            }
            _ => Err(err()),
        },
        (K::FreeFunctionArgument, Payload::FreeArgument(i)) => match op {
            Op::Call { args, .. } => match args.get(*i) {
                Some(ptr @ Operand::Slot(_)) => Ok(Rewrite::InsertBefore(Op::Free { ptr: *ptr })),
                _ => Err(err()),
            },
            _ => Err(err()),
        },
        (K::UnsignedGe, Payload::RhsZero) => match op {
            Op::Bin {
                op: BinOp::CmpUge,
                dst,
                lhs,
                rhs: Operand::Imm(c),
            } if *c != 0 => Ok(Rewrite::Replace(Op::Bin {
                op: BinOp::CmpUge,
                dst: *dst,
                lhs: *lhs,
                rhs: Operand::Imm(0),
            })),
            _ => Err(err()),
        },
        (K::ConstOffset, Payload::AddConst { rhs: on_rhs, delta }) => match op {
            Op::Bin { op, dst, lhs, rhs } if op.is_comparison() => {
                let (mut lhs, mut rhs) = (*lhs, *rhs);
                let target = if *on_rhs { &mut rhs } else { &mut lhs };
                match target {
                    Operand::Imm(v) => *v = v.wrapping_add(*delta),
                    Operand::Slot(_) => return Err(err()),
                }
                Ok(Rewrite::Replace(Op::Bin {
                    op: *op,
                    dst: *dst,
                    lhs,
                    rhs,
                }))
            }
            _ => Err(err()),
        },
        _ => {
            // Single-payload operators: the payload must be the canonical one.
            if super::catalog::single_payload(kind, op).as_ref() != Some(payload) {
                return Err(err());
            }
            match (payload, op) {
                (Payload::Opcode(new), Op::Bin { dst, lhs, rhs, .. }) => {
                    Ok(Rewrite::Replace(Op::Bin {
                        op: *new,
                        dst: *dst,
                        lhs: *lhs,
                        rhs: *rhs,
                    }))
                }
                (Payload::Cast(new), Op::Cast { dst, src, .. }) => Ok(Rewrite::Replace(Op::Cast {
                    kind: *new,
                    dst: *dst,
                    src: *src,
                })),
                (
                    Payload::InvertBranch,
                    Op::BrCond {
                        cond,
                        then_to,
                        else_to,
                    },
                ) => Ok(Rewrite::Replace(Op::BrCond {
                    cond: *cond,
                    then_to: else_to.clone(),
                    else_to: then_to.clone(),
                })),
                (Payload::Delete, _) => Ok(Rewrite::Delete { zero: op.dst() }),
                (Payload::Halve, _) => halve(op).map(Rewrite::Replace).ok_or_else(err),
                _ => Err(err()),
            }
        }
    }
}

/// Materializes the mutant for `spec`, enumerating mutation points of `p`
/// with the default catalog.
pub fn apply_mutations(p: &Program, spec: &MutantSpec) -> Result<Program, MutationError> {
    apply_mutations_with(p, &find_mutations(p), spec)
}

/// Materializes the mutant for `spec` given the point list `points` of `p`.
/// Mutated instructions keep their site id.
pub fn apply_mutations_with(
    p: &Program,
    points: &[MutationPoint],
    spec: &MutantSpec,
) -> Result<Program, MutationError> {
    let mut chosen: Vec<&MutationPoint> = Vec::with_capacity(spec.ids.len());
    let mut by_function: BTreeMap<&str, MutationId> = BTreeMap::new();
    for &id in &spec.ids {
        let pt = points
            .get(id.0 as usize)
            .filter(|pt| pt.id == id)
            .ok_or(MutationError::UnknownId(id))?;
        if let Some(&first) = by_function.get(pt.function.as_str()) {
            return Err(MutationError::SameFunction {
                function: pt.function.clone(),
                first,
                second: id,
            });
        }
        by_function.insert(&pt.function, id);
        chosen.push(pt);
    }

    let mut out = p.clone();
    for pt in chosen {
        let f = out
            .functions
            .iter_mut()
            .find(|f| f.name == pt.function)
            .ok_or(MutationError::MissingSite(pt.site))?;
        let (bi, ii) = f
            .blocks
            .iter()
            .enumerate()
            .find_map(|(bi, b)| {
                b.instrs
                    .iter()
                    .position(|i| i.site == pt.site)
                    .map(|ii| (bi, ii))
            })
            .ok_or(MutationError::MissingSite(pt.site))?;
        let block = &mut f.blocks[bi];
        let site = block.instrs[ii].site;
        match operator_rewrite(pt.operator, &block.instrs[ii].op, &pt.payload)? {
            Rewrite::Replace(op) => block.instrs[ii].op = op,
            Rewrite::Delete { zero } => {
                block.instrs[ii].op = match zero {
                    Some(dst) => Op::Const { dst, value: 0 },
                    None => Op::Nop,
                }
            }
            Rewrite::InsertBefore(op) => block.instrs.insert(ii, Instruction { site, op }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, serialize_program, SiteId};

    fn bin(op: BinOp) -> Op {
        Op::Bin {
            op,
            dst: Slot(0),
            lhs: Operand::Slot(Slot(1)),
            rhs: Operand::Imm(10),
        }
    }

    #[test]
    fn signed_lt_becomes_sge() {
        let r = operator_rewrite(
            OperatorKind::SignedLt,
            &bin(BinOp::CmpSlt),
            &Payload::Opcode(BinOp::CmpSge),
        )
        .unwrap();
        assert_eq!(r, Rewrite::Replace(bin(BinOp::CmpSge)));
    }

    #[test]
    fn plus_minus_swaps_add() {
        let r = operator_rewrite(
            OperatorKind::SwitchPlusMinus,
            &bin(BinOp::Add),
            &Payload::Opcode(BinOp::Sub),
        )
        .unwrap();
        assert_eq!(r, Rewrite::Replace(bin(BinOp::Sub)));
    }

    #[test]
    fn alloc_size_halves_immediate() {
        let op = Op::Alloc {
            dst: Slot(0),
            count: Operand::Imm(64),
            elem: None,
            halved: false,
        };
        let r = operator_rewrite(OperatorKind::AllocSize, &op, &Payload::Halve).unwrap();
        assert_eq!(
            r,
            Rewrite::Replace(Op::Alloc {
                dst: Slot(0),
                count: Operand::Imm(32),
                elem: None,
                halved: false,
            })
        );
    }

    #[test]
    fn alloc_size_marks_slot_sizes() {
        let op = Op::Alloc {
            dst: Slot(0),
            count: Operand::Slot(Slot(1)),
            elem: None,
            halved: false,
        };
        match operator_rewrite(OperatorKind::AllocSize, &op, &Payload::Halve).unwrap() {
            Rewrite::Replace(Op::Alloc { halved, .. }) => assert!(halved),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pattern_mismatch() {
        let e = operator_rewrite(
            OperatorKind::SignedLt,
            &bin(BinOp::Add),
            &Payload::Opcode(BinOp::CmpSge),
        );
        assert!(matches!(e, Err(MutationError::PatternMismatch { .. })));
        let e = operator_rewrite(
            OperatorKind::UnsignedGe,
            &bin(BinOp::CmpSlt),
            &Payload::RhsZero,
        );
        assert!(e.is_err());
    }

    #[test]
    fn unsigned_ge_rhs_to_zero() {
        let r = operator_rewrite(
            OperatorKind::UnsignedGe,
            &bin(BinOp::CmpUge),
            &Payload::RhsZero,
        )
        .unwrap();
        assert_eq!(
            r,
            Rewrite::Replace(Op::Bin {
                op: BinOp::CmpUge,
                dst: Slot(0),
                lhs: Operand::Slot(Slot(1)),
                rhs: Operand::Imm(0),
            })
        );
    }

    const TWO_FNS: &[u8] = b"fn helper(%p: ptr, %n: i64) {\n  %a = add %n, 1\n  store u8 %p, %a\n  ret %a\n}\nfn main {\n  %buf = alloc 8\n  %x = call helper(%buf, 3)\n  %y = sub %x, 2\n  free %buf\n  ret %y\n}\n";

    #[test]
    fn empty_spec_is_identity() {
        let p = parse_program(TWO_FNS).unwrap();
        assert_eq!(apply_mutations(&p, &MutantSpec::default()).unwrap(), p);
    }

    #[test]
    fn two_ids_in_one_function_rejected() {
        let p = parse_program(TWO_FNS).unwrap();
        let pts = find_mutations(&p);
        let in_main: Vec<_> = pts
            .iter()
            .filter(|m| m.function == "main")
            .map(|m| m.id)
            .collect();
        assert!(in_main.len() >= 2);
        let err = apply_mutations(&p, &MutantSpec::new(in_main[..2].iter().copied())).unwrap_err();
        assert!(matches!(err, MutationError::SameFunction { .. }));
    }

    #[test]
    fn unknown_id_rejected() {
        let p = parse_program(TWO_FNS).unwrap();
        let err = apply_mutations(&p, &MutantSpec::single(MutationId(9999))).unwrap_err();
        assert_eq!(err, MutationError::UnknownId(MutationId(9999)));
    }

    #[test]
    fn free_argument_inserts_free_with_same_site() {
        let p = parse_program(TWO_FNS).unwrap();
        let pts = find_mutations(&p);
        let pt = pts
            .iter()
            .find(|m| m.operator == OperatorKind::FreeFunctionArgument)
            .unwrap();
        let m = apply_mutations(&p, &MutantSpec::single(pt.id)).unwrap();
        let main = m.function("main").unwrap();
        let ins = &main.blocks[0].instrs;
        assert!(matches!(ins[1].op, Op::Free { .. }));
        assert_eq!(ins[1].site, ins[2].site);
        assert_eq!(ins[1].site, pt.site);
        m.validate().unwrap();
        // The mutant text re-parses.
        parse_program(&serialize_program(&m)).unwrap();
    }

    #[test]
    fn delete_call_zeroes_result() {
        let p = parse_program(TWO_FNS).unwrap();
        let pts = find_mutations(&p);
        let pt = pts
            .iter()
            .find(|m| m.operator == OperatorKind::DeleteCall)
            .unwrap();
        let m = apply_mutations(&p, &MutantSpec::single(pt.id)).unwrap();
        let (_, ins) = m.instructions().find(|(_, i)| i.site == pt.site).unwrap();
        assert!(matches!(ins.op, Op::Const { value: 0, .. }));
        assert_eq!(ins.site, SiteId(4));
    }
}
