//! Mutation catalog, mutation finder and mutator.
//!
//! [`find_mutations`] enumerates every applicable (operator, site, payload)
//! triple of a program and numbers them densely; [`apply_mutations`]
//! materializes a (super)mutant from a set of those ids.

mod apply;
mod catalog;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ir::{BinOp, Callee, CastKind, Op, Operand, Program, SiteId, ValueType};

pub use apply::{apply_mutations, apply_mutations_with, operator_rewrite, Rewrite};
pub use catalog::OperatorKind;

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct MutationId(pub u32);

impl fmt::Display for MutationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Operator-specific detail of a mutation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    /// Replace a two-operand opcode (comparison predicate, `add`/`sub`, ...).
    Opcode(BinOp),
    /// Replace a cast with the opposite direction.
    Cast(CastKind),
    /// Replace the constant right-hand operand of a comparison with 0.
    RhsZero,
    /// Swap the targets of a conditional branch.
    InvertBranch,
    /// Remove the instruction; a result slot is set to zero.
    Delete,
    /// Store to this address operand instead.
    Redirect(Operand),
    /// Pass 0 for the argument at this index.
    ZeroArgument(usize),
    /// Free the pointer argument at this index right before the call.
    FreeArgument(usize),
    /// Allocate half the requested size.
    Halve,
    /// Add a constant to the immediate operand of a comparison
    /// (`rhs == true` for the right-hand side).
    AddConst { rhs: bool, delta: i64 },
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Opcode(op) => write!(f, "{}", op.mnemonic()),
            Payload::Cast(k) => write!(f, "{}", k.mnemonic()),
            Payload::RhsZero => write!(f, "rhs_zero"),
            Payload::InvertBranch => write!(f, "invert"),
            Payload::Delete => write!(f, "delete"),
            Payload::Redirect(Operand::Slot(s)) => write!(f, "redirect:slot{}", s.0),
            Payload::Redirect(Operand::Imm(v)) => write!(f, "redirect:{v}"),
            Payload::ZeroArgument(i) => write!(f, "zero_arg:{i}"),
            Payload::FreeArgument(i) => write!(f, "free_arg:{i}"),
            Payload::Halve => write!(f, "halve"),
            Payload::AddConst { rhs, delta } => {
                write!(f, "{}{:+}", if *rhs { "rhs" } else { "lhs" }, delta)
            }
        }
    }
}

impl FromStr for Payload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unrecognized payload '{s}'");
        if let Some(op) = BinOp::from_mnemonic(s) {
            return Ok(Payload::Opcode(op));
        }
        Ok(match s {
            "cast_s2u" => Payload::Cast(CastKind::SignedToUnsigned),
            "cast_u2s" => Payload::Cast(CastKind::UnsignedToSigned),
            "rhs_zero" => Payload::RhsZero,
            "invert" => Payload::InvertBranch,
            "delete" => Payload::Delete,
            "halve" => Payload::Halve,
            _ => {
                if let Some(rest) = s.strip_prefix("redirect:") {
                    match rest.strip_prefix("slot") {
                        Some(n) => Payload::Redirect(Operand::Slot(crate::ir::Slot(
                            n.parse().map_err(|_| bad())?,
                        ))),
                        None => Payload::Redirect(Operand::Imm(rest.parse().map_err(|_| bad())?)),
                    }
                } else if let Some(i) = s.strip_prefix("zero_arg:") {
                    Payload::ZeroArgument(i.parse().map_err(|_| bad())?)
                } else if let Some(i) = s.strip_prefix("free_arg:") {
                    Payload::FreeArgument(i.parse().map_err(|_| bad())?)
                } else if let Some(d) = s.strip_prefix("rhs") {
                    Payload::AddConst {
                        rhs: true,
                        delta: d.parse().map_err(|_| bad())?,
                    }
                } else if let Some(d) = s.strip_prefix("lhs") {
                    Payload::AddConst {
                        rhs: false,
                        delta: d.parse().map_err(|_| bad())?,
                    }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One applicable mutation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationPoint {
    pub id: MutationId,
    pub site: SiteId,
    pub function: String,
    pub operator: OperatorKind,
    pub payload: Payload,
}

/// A set of mutations to be compiled into one mutant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutantSpec {
    pub ids: BTreeSet<MutationId>,
}

impl MutantSpec {
    pub fn new(ids: impl IntoIterator<Item = MutationId>) -> Self {
        MutantSpec {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn single(id: MutationId) -> Self {
        Self::new([id])
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MutationError {
    #[error("unknown mutation id {0}")]
    UnknownId(MutationId),
    #[error("mutations {first} and {second} both target function '{function}'")]
    SameFunction {
        function: String,
        first: MutationId,
        second: MutationId,
    },
    #[error("operator {kind} does not apply to this instruction with payload {payload}")]
    PatternMismatch {
        kind: OperatorKind,
        payload: Payload,
    },
    #[error("site {0} not found in program")]
    MissingSite(SiteId),
}

/// Knobs for the mutation finder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinderConfig {
    /// Restrict the catalog to these operators; `None` means all.
    pub operators: Option<BTreeSet<OperatorKind>>,
    /// Payloads enumerated per (site, operator). `UNSIGNED_GE` always
    /// admits at least its two payloads.
    pub max_payloads: usize,
}

impl Default for FinderConfig {
    fn default() -> Self {
        FinderConfig {
            operators: None,
            max_payloads: 1,
        }
    }
}

/// Enumerates all mutation points with the full catalog.
pub fn find_mutations(p: &Program) -> Vec<MutationPoint> {
    find_mutations_with(p, &FinderConfig::default())
}

pub fn find_mutations_with(p: &Program, cfg: &FinderConfig) -> Vec<MutationPoint> {
    let mut out = Vec::new();
    for f in &p.functions {
        let mut prev_store_addr: Option<Operand> = None;
        for ins in f.instructions() {
            for kind in OperatorKind::ALL {
                if cfg
                    .operators
                    .as_ref()
                    .is_some_and(|ops| !ops.contains(&kind))
                {
                    continue;
                }
                let cap = if kind == OperatorKind::UnsignedGe {
                    cfg.max_payloads.max(2)
                } else {
                    cfg.max_payloads
                };
                for payload in payloads(p, &ins.op, kind, prev_store_addr)
                    .into_iter()
                    .take(cap)
                {
                    out.push(MutationPoint {
                        id: MutationId(out.len() as u32),
                        site: ins.site,
                        function: f.name.clone(),
                        operator: kind,
                        payload,
                    });
                }
            }
            if let Op::Store { addr, .. } = &ins.op {
                prev_store_addr = Some(*addr);
            }
        }
    }
    out
}

fn arg_is_pointer(p: &Program, callee: &Callee, index: usize) -> bool {
    match callee {
        Callee::Function(name) => p
            .function(name)
            .and_then(|g| g.params.get(index))
            .is_some_and(|param| param.ty == ValueType::Ptr),
        Callee::Intrinsic(i) => i.params().get(index) == Some(&ValueType::Ptr),
    }
}

/// Admissible payloads of `kind` at `op`, in canonical order.
fn payloads(
    p: &Program,
    op: &Op,
    kind: OperatorKind,
    prev_store_addr: Option<Operand>,
) -> Vec<Payload> {
    use OperatorKind as K;
    match (kind, op) {
        (K::ReassignStore, Op::Store { addr, .. }) => match prev_store_addr {
            Some(prev) if prev != *addr => vec![Payload::Redirect(prev)],
            _ => Vec::new(),
        },
        (K::DeleteFunctionArgument, Op::Call { args, .. }) => args
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != Operand::Imm(0))
            .map(|(i, _)| Payload::ZeroArgument(i))
            .collect(),
        (K::FreeFunctionArgument, Op::Call { callee, args, .. }) => args
            .iter()
            .enumerate()
            .filter(|(i, a)| matches!(a, Operand::Slot(_)) && arg_is_pointer(p, callee, *i))
            .map(|(i, _)| Payload::FreeArgument(i))
            .collect(),
        (
            K::UnsignedGe,
            Op::Bin {
                op: BinOp::CmpUge,
                rhs,
                ..
            },
        ) => {
            let mut v = vec![Payload::Opcode(BinOp::CmpUlt)];
            if matches!(rhs, Operand::Imm(c) if *c != 0) {
                v.push(Payload::RhsZero);
            }
            v
        }
        (K::ConstOffset, Op::Bin { op, lhs, rhs, .. }) if op.is_comparison() => {
            let mut v = Vec::new();
            if let Operand::Imm(_) = rhs {
                v.push(Payload::AddConst {
                    rhs: true,
                    delta: 16,
                });
            }
            if let Operand::Imm(_) = lhs {
                v.push(Payload::AddConst {
                    rhs: false,
                    delta: 16,
                });
            }
            v
        }
        _ => catalog::single_payload(kind, op).into_iter().collect(),
    }
}

/// Points grouped by the function that hosts them.
pub fn points_by_function(
    points: &[MutationPoint],
) -> std::collections::BTreeMap<&str, Vec<MutationId>> {
    let mut m: std::collections::BTreeMap<&str, Vec<MutationId>> = Default::default();
    for pt in points {
        m.entry(pt.function.as_str()).or_default().push(pt.id);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn ret_only_program_has_no_mutations() {
        let p = parse_program(b"fn main { ret 0 }").unwrap();
        assert!(find_mutations(&p).is_empty());
    }

    #[test]
    fn listing_style_bound_check() {
        let src = b"fn main {\n  %len = read_input\n  %ok = cmp_slt %len, 10\n  br_cond %ok, copy, reject\ncopy:\n  ret 0\nreject:\n  ret 1\n}\n";
        let p = parse_program(src).unwrap();
        let pts = find_mutations(&p);
        let cmp_site = SiteId(1);
        let at: Vec<_> = pts.iter().filter(|m| m.site == cmp_site).collect();
        assert!(at
            .iter()
            .any(|m| m.operator == OperatorKind::SignedLt
                && m.payload == Payload::Opcode(BinOp::CmpSge)));
        assert!(at.iter().any(|m| m.operator == OperatorKind::ConstOffset
            && m.payload
                == Payload::AddConst {
                    rhs: true,
                    delta: 16
                }));
        assert!(pts
            .iter()
            .any(|m| m.operator == OperatorKind::RedirectBranch));
    }

    #[test]
    fn ids_are_dense_and_stable() {
        let src =
            b"fn main {\n  %a = read_input\n  %b = add %a, 1\n  %c = cmp_uge %b, 4\n  ret %c\n}\n";
        let p = parse_program(src).unwrap();
        let a = find_mutations(&p);
        let b = find_mutations(&p);
        assert_eq!(a, b);
        for (i, m) in a.iter().enumerate() {
            assert_eq!(m.id.0 as usize, i);
        }
        let uge: Vec<_> = a
            .iter()
            .filter(|m| m.operator == OperatorKind::UnsignedGe)
            .collect();
        assert_eq!(uge.len(), 2);
    }

    #[test]
    fn operator_filter() {
        let src =
            b"fn main {\n  %a = read_input\n  %b = add %a, 1\n  %c = cmp_slt %b, 4\n  ret %c\n}\n";
        let p = parse_program(src).unwrap();
        let cfg = FinderConfig {
            operators: Some([OperatorKind::SignedLt].into_iter().collect()),
            ..Default::default()
        };
        let pts = find_mutations_with(&p, &cfg);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].operator, OperatorKind::SignedLt);
    }

    #[test]
    fn payload_text_roundtrip() {
        let all = [
            Payload::Opcode(BinOp::CmpSge),
            Payload::Cast(CastKind::UnsignedToSigned),
            Payload::RhsZero,
            Payload::InvertBranch,
            Payload::Delete,
            Payload::Redirect(Operand::Slot(crate::ir::Slot(3))),
            Payload::Redirect(Operand::Imm(-4)),
            Payload::ZeroArgument(1),
            Payload::FreeArgument(0),
            Payload::Halve,
            Payload::AddConst {
                rhs: true,
                delta: 16,
            },
            Payload::AddConst {
                rhs: false,
                delta: -2,
            },
        ];
        for p in all {
            assert_eq!(p.to_string().parse::<Payload>().unwrap(), p);
        }
    }
}
