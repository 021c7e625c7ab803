use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Payload;
use crate::ir::{BinOp, CastKind, Op};

/// Mutation operator families. Each has exactly one rewrite rule, see
/// [`OperatorKind::rule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OperatorKind {
    SignedLt,
    SignedLe,
    SignedGt,
    SignedGe,
    UnsignedLt,
    UnsignedLe,
    UnsignedGt,
    UnsignedGe,
    CompareEq,
    RedirectBranch,
    SwitchPlusMinus,
    SwitchShift,
    DeleteStore,
    DeleteLocalStore,
    ReassignStore,
    DeleteCall,
    DeleteFunctionArgument,
    FreeFunctionArgument,
    AllocSize,
    AllocZeroedSize,
    NewArraySize,
    SignedToUnsigned,
    UnsignedToSigned,
    ConstOffset,
}

impl OperatorKind {
    /// Catalog order; also the enumeration order within a site.
    pub const ALL: [OperatorKind; 24] = [
        OperatorKind::SignedLt,
        OperatorKind::SignedLe,
        OperatorKind::SignedGt,
        OperatorKind::SignedGe,
        OperatorKind::UnsignedLt,
        OperatorKind::UnsignedLe,
        OperatorKind::UnsignedGt,
        OperatorKind::UnsignedGe,
        OperatorKind::CompareEq,
        OperatorKind::RedirectBranch,
        OperatorKind::SwitchPlusMinus,
        OperatorKind::SwitchShift,
        OperatorKind::DeleteStore,
        OperatorKind::DeleteLocalStore,
        OperatorKind::ReassignStore,
        OperatorKind::DeleteCall,
        OperatorKind::DeleteFunctionArgument,
        OperatorKind::FreeFunctionArgument,
        OperatorKind::AllocSize,
        OperatorKind::AllocZeroedSize,
        OperatorKind::NewArraySize,
        OperatorKind::SignedToUnsigned,
        OperatorKind::UnsignedToSigned,
        OperatorKind::ConstOffset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::SignedLt => "SIGNED_LT",
            OperatorKind::SignedLe => "SIGNED_LE",
            OperatorKind::SignedGt => "SIGNED_GT",
            OperatorKind::SignedGe => "SIGNED_GE",
            OperatorKind::UnsignedLt => "UNSIGNED_LT",
            OperatorKind::UnsignedLe => "UNSIGNED_LE",
            OperatorKind::UnsignedGt => "UNSIGNED_GT",
            OperatorKind::UnsignedGe => "UNSIGNED_GE",
            OperatorKind::CompareEq => "COMPARE_EQ",
            OperatorKind::RedirectBranch => "REDIRECT_BRANCH",
            OperatorKind::SwitchPlusMinus => "SWITCH_PLUS_MINUS",
            OperatorKind::SwitchShift => "SWITCH_SHIFT",
            OperatorKind::DeleteStore => "DELETE_STORE",
            OperatorKind::DeleteLocalStore => "DELETE_LOCAL_STORE",
            OperatorKind::ReassignStore => "REASSIGN_STORE",
            OperatorKind::DeleteCall => "DELETE_CALL",
            OperatorKind::DeleteFunctionArgument => "DELETE_FUNCTION_ARGUMENT",
            OperatorKind::FreeFunctionArgument => "FREE_FUNCTION_ARGUMENT",
            OperatorKind::AllocSize => "ALLOC_SIZE",
            OperatorKind::AllocZeroedSize => "ALLOC_ZEROED_SIZE",
            OperatorKind::NewArraySize => "NEW_ARRAY_SIZE",
            OperatorKind::SignedToUnsigned => "SIGNED_TO_UNSIGNED",
            OperatorKind::UnsignedToSigned => "UNSIGNED_TO_SIGNED",
            OperatorKind::ConstOffset => "CONST_OFFSET",
        }
    }

    /// The rewrite rule, as documented in `docs/operators.md`.
    pub fn rule(self) -> &'static str {
        match self {
            OperatorKind::SignedLt => "cmp_slt -> cmp_sge",
            OperatorKind::SignedLe => "cmp_sle -> cmp_sgt",
            OperatorKind::SignedGt => "cmp_sgt -> cmp_sle",
            OperatorKind::SignedGe => "cmp_sge -> cmp_slt",
            OperatorKind::UnsignedLt => "cmp_ult -> cmp_uge",
            OperatorKind::UnsignedLe => "cmp_ule -> cmp_ugt",
            OperatorKind::UnsignedGt => "cmp_ugt -> cmp_ule",
            OperatorKind::UnsignedGe => {
                "cmp_uge -> cmp_ult; or a non-zero constant right-hand operand -> 0"
            }
            OperatorKind::CompareEq => "cmp_eq <-> cmp_ne",
            OperatorKind::RedirectBranch => "br_cond c, A, B -> br_cond c, B, A",
            OperatorKind::SwitchPlusMinus => "add <-> sub",
            OperatorKind::SwitchShift => "shl <-> shr",
            OperatorKind::DeleteStore => "store -> nop",
            OperatorKind::DeleteLocalStore => "store_local -> nop",
            OperatorKind::ReassignStore => {
                "store to the address of the preceding store in the function"
            }
            OperatorKind::DeleteCall => "call -> nop, result := 0",
            OperatorKind::DeleteFunctionArgument => "first non-zero argument -> 0",
            OperatorKind::FreeFunctionArgument => {
                "free the first pointer-typed slot argument before the call"
            }
            OperatorKind::AllocSize => "alloc n -> alloc n/2",
            OperatorKind::AllocZeroedSize => "alloc_zeroed n, e -> alloc_zeroed n/2, e",
            OperatorKind::NewArraySize => "alloc n, e -> alloc n/2, e",
            OperatorKind::SignedToUnsigned => {
                "cast_u2s -> cast_s2u; signed compare/div -> unsigned"
            }
            OperatorKind::UnsignedToSigned => {
                "cast_s2u -> cast_u2s; unsigned compare/div -> signed"
            }
            OperatorKind::ConstOffset => "constant comparison operand + 16",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_uppercase().replace('-', "_");
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == wanted)
            .ok_or_else(|| format!("unknown operator '{s}'"))
    }
}

fn to_unsigned(op: BinOp) -> Option<BinOp> {
    Some(match op {
        BinOp::CmpSlt => BinOp::CmpUlt,
        BinOp::CmpSle => BinOp::CmpUle,
        BinOp::CmpSgt => BinOp::CmpUgt,
        BinOp::CmpSge => BinOp::CmpUge,
        BinOp::DivS => BinOp::DivU,
        _ => return None,
    })
}

fn to_signed(op: BinOp) -> Option<BinOp> {
    Some(match op {
        BinOp::CmpUlt => BinOp::CmpSlt,
        BinOp::CmpUle => BinOp::CmpSle,
        BinOp::CmpUgt => BinOp::CmpSgt,
        BinOp::CmpUge => BinOp::CmpSge,
        BinOp::DivU => BinOp::DivS,
        _ => return None,
    })
}

/// The payload of operators that admit at most one per site. Operators with
/// operand-dependent payloads are handled by the finder directly.
pub(super) fn single_payload(kind: OperatorKind, op: &Op) -> Option<Payload> {
    use OperatorKind as K;
    let bin = match op {
        Op::Bin { op, .. } => Some(*op),
        _ => None,
    };
    match kind {
        K::SignedLt => (bin == Some(BinOp::CmpSlt)).then_some(Payload::Opcode(BinOp::CmpSge)),
        K::SignedLe => (bin == Some(BinOp::CmpSle)).then_some(Payload::Opcode(BinOp::CmpSgt)),
        K::SignedGt => (bin == Some(BinOp::CmpSgt)).then_some(Payload::Opcode(BinOp::CmpSle)),
        K::SignedGe => (bin == Some(BinOp::CmpSge)).then_some(Payload::Opcode(BinOp::CmpSlt)),
        K::UnsignedLt => (bin == Some(BinOp::CmpUlt)).then_some(Payload::Opcode(BinOp::CmpUge)),
        K::UnsignedLe => (bin == Some(BinOp::CmpUle)).then_some(Payload::Opcode(BinOp::CmpUgt)),
        K::UnsignedGt => (bin == Some(BinOp::CmpUgt)).then_some(Payload::Opcode(BinOp::CmpUle)),
        K::UnsignedGe => (bin == Some(BinOp::CmpUge)).then_some(Payload::Opcode(BinOp::CmpUlt)),
        K::CompareEq => match bin {
            Some(BinOp::CmpEq) => Some(Payload::Opcode(BinOp::CmpNe)),
            Some(BinOp::CmpNe) => Some(Payload::Opcode(BinOp::CmpEq)),
            _ => None,
        },
        K::RedirectBranch => match op {
            Op::BrCond {
                then_to, else_to, ..
            } if then_to != else_to => Some(Payload::InvertBranch),
            _ => None,
        },
        K::SwitchPlusMinus => match bin {
            Some(BinOp::Add) => Some(Payload::Opcode(BinOp::Sub)),
            Some(BinOp::Sub) => Some(Payload::Opcode(BinOp::Add)),
            _ => None,
        },
        K::SwitchShift => match bin {
            Some(BinOp::Shl) => Some(Payload::Opcode(BinOp::Shr)),
            Some(BinOp::Shr) => Some(Payload::Opcode(BinOp::Shl)),
            _ => None,
        },
        K::DeleteStore => matches!(op, Op::Store { .. }).then_some(Payload::Delete),
        K::DeleteLocalStore => matches!(op, Op::StoreLocal { .. }).then_some(Payload::Delete),
        K::DeleteCall => matches!(op, Op::Call { .. }).then_some(Payload::Delete),
        K::AllocSize => matches!(
            op,
            Op::Alloc {
                elem: None,
                halved: false,
                ..
            }
        )
        .then_some(Payload::Halve),
        K::NewArraySize => matches!(
            op,
            Op::Alloc {
                elem: Some(_),
                halved: false,
                ..
            }
        )
        .then_some(Payload::Halve),
        K::AllocZeroedSize => {
            matches!(op, Op::AllocZeroed { halved: false, .. }).then_some(Payload::Halve)
        }
        K::SignedToUnsigned => match op {
            Op::Cast {
                kind: CastKind::UnsignedToSigned,
                ..
            } => Some(Payload::Cast(CastKind::SignedToUnsigned)),
            Op::Bin { op, .. } => to_unsigned(*op).map(Payload::Opcode),
            _ => None,
        },
        K::UnsignedToSigned => match op {
            Op::Cast {
                kind: CastKind::SignedToUnsigned,
                ..
            } => Some(Payload::Cast(CastKind::UnsignedToSigned)),
            Op::Bin { op, .. } => to_signed(*op).map(Payload::Opcode),
            _ => None,
        },
        // Operand-dependent; see the finder.
        K::ReassignStore | K::DeleteFunctionArgument | K::FreeFunctionArgument | K::ConstOffset => {
            None
        }
    }
}
