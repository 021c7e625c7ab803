//! Subject-program representation and its `.mir` text format.
//!
//! A [`Program`] is a list of functions; each function owns a slot table
//! (parameters first, then locals) and a list of basic blocks. Every block
//! ends in exactly one terminator. Instructions carry a [`SiteId`] that is
//! assigned densely in source order when a program is parsed and that
//! survives mutation, so coverage attribution is stable between the
//! baseline and any mutant.

mod parse;
mod print;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::{parse_program, ParseError};
pub use print::{instruction_text, serialize_program, site_lines};

/// Dense instruction coordinate, unique per program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index into a function's slot table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    I64,
    U64,
    Ptr,
}

impl ValueType {
    pub fn keyword(self) -> &'static str {
        match self {
            ValueType::I64 => "i64",
            ValueType::U64 => "u64",
            ValueType::Ptr => "ptr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: ValueType,
}

/// A value source: a slot or an inline immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Slot(Slot),
    Imm(i64),
}

impl Operand {
    pub fn imm(self) -> Option<i64> {
        match self {
            Operand::Imm(v) => Some(v),
            Operand::Slot(_) => None,
        }
    }
}

/// Memory access width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    /// One byte, zero-extended on load.
    Byte,
    /// Eight bytes, little-endian.
    Word,
}

impl Width {
    pub fn bytes(self) -> u64 {
        match self {
            Width::Byte => 1,
            Width::Word => 8,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Width::Byte => "u8",
            Width::Word => "i64",
        }
    }
}

/// Two-operand arithmetic and comparison opcodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    DivS,
    DivU,
    Rem,
    Shl,
    Shr,
    CmpSlt,
    CmpSle,
    CmpSgt,
    CmpSge,
    CmpUlt,
    CmpUle,
    CmpUgt,
    CmpUge,
    CmpEq,
    CmpNe,
}

impl BinOp {
    pub const ALL: [BinOp; 18] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::DivS,
        BinOp::DivU,
        BinOp::Rem,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::CmpSlt,
        BinOp::CmpSle,
        BinOp::CmpSgt,
        BinOp::CmpSge,
        BinOp::CmpUlt,
        BinOp::CmpUle,
        BinOp::CmpUgt,
        BinOp::CmpUge,
        BinOp::CmpEq,
        BinOp::CmpNe,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::DivS => "div_s",
            BinOp::DivU => "div_u",
            BinOp::Rem => "rem",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::CmpSlt => "cmp_slt",
            BinOp::CmpSle => "cmp_sle",
            BinOp::CmpSgt => "cmp_sgt",
            BinOp::CmpSge => "cmp_sge",
            BinOp::CmpUlt => "cmp_ult",
            BinOp::CmpUle => "cmp_ule",
            BinOp::CmpUgt => "cmp_ugt",
            BinOp::CmpUge => "cmp_uge",
            BinOp::CmpEq => "cmp_eq",
            BinOp::CmpNe => "cmp_ne",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    pub fn is_comparison(self) -> bool {
        !matches!(
            self,
            BinOp::Add
                | BinOp::Sub
                | BinOp::Mul
                | BinOp::DivS
                | BinOp::DivU
                | BinOp::Rem
                | BinOp::Shl
                | BinOp::Shr
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CastKind {
    /// Low 32 bits reinterpreted as unsigned, zero-extended.
    SignedToUnsigned,
    /// Low 32 bits reinterpreted as signed, sign-extended.
    UnsignedToSigned,
}

impl CastKind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CastKind::SignedToUnsigned => "cast_s2u",
            CastKind::UnsignedToSigned => "cast_u2s",
        }
    }
}

/// Built-in call targets, written with a leading `@`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intrinsic {
    /// `@exit(code)`: terminate with `exit(code & 127)`.
    Exit,
    /// `@input_len()`: total length of the input.
    InputLen,
    /// `@memcpy(dst, src, n)`.
    Memcpy,
    /// `@memset(dst, byte, n)`.
    Memset,
}

impl Intrinsic {
    pub const ALL: [Intrinsic; 4] = [
        Intrinsic::Exit,
        Intrinsic::InputLen,
        Intrinsic::Memcpy,
        Intrinsic::Memset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::Exit => "exit",
            Intrinsic::InputLen => "input_len",
            Intrinsic::Memcpy => "memcpy",
            Intrinsic::Memset => "memset",
        }
    }

    pub fn from_name(s: &str) -> Option<Intrinsic> {
        Intrinsic::ALL.into_iter().find(|i| i.name() == s)
    }

    pub fn params(self) -> &'static [ValueType] {
        match self {
            Intrinsic::Exit => &[ValueType::I64],
            Intrinsic::InputLen => &[],
            Intrinsic::Memcpy => &[ValueType::Ptr, ValueType::Ptr, ValueType::I64],
            Intrinsic::Memset => &[ValueType::Ptr, ValueType::I64, ValueType::I64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Callee {
    Function(String),
    Intrinsic(Intrinsic),
}

/// The opcode vocabulary of the IR, independent of operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Bin(BinOp),
    Const,
    Cast(CastKind),
    Load,
    Store,
    StoreLocal,
    Alloc,
    AllocZeroed,
    Free,
    Call,
    ReadInput,
    WriteOutput,
    Nop,
    Br,
    BrCond,
    Switch,
    Ret,
    Abort,
}

/// Instruction payload. Block targets are labels resolved at execution time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Const {
        dst: Slot,
        value: i64,
    },
    Bin {
        op: BinOp,
        dst: Slot,
        lhs: Operand,
        rhs: Operand,
    },
    Cast {
        kind: CastKind,
        dst: Slot,
        src: Operand,
    },
    Load {
        dst: Slot,
        width: Width,
        addr: Operand,
    },
    Store {
        width: Width,
        addr: Operand,
        value: Operand,
    },
    /// Assigns `value` to the local `dst`.
    StoreLocal {
        dst: Slot,
        value: Operand,
    },
    /// `alloc count[, elem]`: single-operand form is a raw byte allocation,
    /// two-operand form an array allocation of `count * elem` bytes.
    /// `halved` divides the computed size by two.
    Alloc {
        dst: Slot,
        count: Operand,
        elem: Option<Operand>,
        halved: bool,
    },
    AllocZeroed {
        dst: Slot,
        count: Operand,
        elem: Operand,
        halved: bool,
    },
    Free {
        ptr: Operand,
    },
    Call {
        dst: Option<Slot>,
        callee: Callee,
        args: Vec<Operand>,
    },
    /// Next input byte, or -1 at end of input.
    ReadInput {
        dst: Slot,
    },
    /// Appends the low byte of `value` to the output.
    WriteOutput {
        value: Operand,
    },
    /// Placeholder left behind by deleting mutations.
    Nop,
    Br {
        target: String,
    },
    BrCond {
        cond: Operand,
        then_to: String,
        else_to: String,
    },
    Switch {
        value: Operand,
        default: String,
        cases: Vec<(i64, String)>,
    },
    Ret {
        value: Option<Operand>,
    },
    Abort,
}

impl Op {
    pub fn opcode(&self) -> Opcode {
        match self {
            Op::Const { .. } => Opcode::Const,
            Op::Bin { op, .. } => Opcode::Bin(*op),
            Op::Cast { kind, .. } => Opcode::Cast(*kind),
            Op::Load { .. } => Opcode::Load,
            Op::Store { .. } => Opcode::Store,
            Op::StoreLocal { .. } => Opcode::StoreLocal,
            Op::Alloc { .. } => Opcode::Alloc,
            Op::AllocZeroed { .. } => Opcode::AllocZeroed,
            Op::Free { .. } => Opcode::Free,
            Op::Call { .. } => Opcode::Call,
            Op::ReadInput { .. } => Opcode::ReadInput,
            Op::WriteOutput { .. } => Opcode::WriteOutput,
            Op::Nop => Opcode::Nop,
            Op::Br { .. } => Opcode::Br,
            Op::BrCond { .. } => Opcode::BrCond,
            Op::Switch { .. } => Opcode::Switch,
            Op::Ret { .. } => Opcode::Ret,
            Op::Abort => Opcode::Abort,
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Op::Br { .. } | Op::BrCond { .. } | Op::Switch { .. } | Op::Ret { .. } | Op::Abort
        )
    }

    /// Labels this instruction may transfer control to.
    pub fn successors(&self) -> Vec<&str> {
        match self {
            Op::Br { target } => vec![target.as_str()],
            Op::BrCond {
                then_to, else_to, ..
            } => vec![then_to.as_str(), else_to.as_str()],
            Op::Switch { default, cases, .. } => std::iter::once(default.as_str())
                .chain(cases.iter().map(|(_, l)| l.as_str()))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Slot written by this instruction, if any.
    pub fn dst(&self) -> Option<Slot> {
        match self {
            Op::Const { dst, .. }
            | Op::Bin { dst, .. }
            | Op::Cast { dst, .. }
            | Op::Load { dst, .. }
            | Op::StoreLocal { dst, .. }
            | Op::Alloc { dst, .. }
            | Op::AllocZeroed { dst, .. }
            | Op::ReadInput { dst } => Some(*dst),
            Op::Call { dst, .. } => *dst,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub site: SiteId,
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub instrs: Vec<Instruction>,
}

impl Block {
    pub fn terminator(&self) -> &Instruction {
        self.instrs
            .last()
            .expect("validated block has a terminator")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    /// Names of non-parameter slots; slot `params.len() + i` is `locals[i]`.
    pub locals: Vec<String>,
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn slot_count(&self) -> usize {
        self.params.len() + self.locals.len()
    }

    pub fn slot_name(&self, slot: Slot) -> &str {
        let i = slot.0 as usize;
        if i < self.params.len() {
            &self.params[i].name
        } else {
            &self.locals[i - self.params.len()]
        }
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.instrs.iter())
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub entry: String,
    pub functions: Vec<Function>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn instructions(&self) -> impl Iterator<Item = (&Function, &Instruction)> {
        self.functions
            .iter()
            .flat_map(|f| f.instructions().map(move |i| (f, i)))
    }

    /// Number of distinct sites; parsed programs use `0..site_count()`.
    pub fn site_count(&self) -> usize {
        self.instructions()
            .map(|(_, i)| i.site.0 as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Checks the structural invariants parsing guarantees.
    pub fn validate(&self) -> Result<(), ParseError> {
        parse::validate(self)
    }
}
