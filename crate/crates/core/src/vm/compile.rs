use std::collections::HashMap;

use super::{Edge, PSEUDO_EDGE_BASE};
use crate::ir::{BinOp, Callee, CastKind, Intrinsic, Op, Operand, Program, Width};
use crate::mutation::MutationId;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Src {
    Slot(u32),
    Imm(u64),
}

/// Resolved branch target: code index plus coverage edge index.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Target {
    pub pc: u32,
    pub edge: u32,
}

#[derive(Debug, Clone)]
pub(crate) enum CIns {
    Const {
        dst: u32,
        value: u64,
    },
    Bin {
        op: BinOp,
        dst: u32,
        lhs: Src,
        rhs: Src,
    },
    /// `cmp_eq`/`cmp_ne` with comparison-progress pseudo-edges at `pseudo..pseudo+8`.
    Eq {
        negate: bool,
        dst: u32,
        lhs: Src,
        rhs: Src,
        pseudo: u32,
    },
    Cast {
        kind: CastKind,
        dst: u32,
        src: Src,
    },
    Load {
        dst: u32,
        width: Width,
        addr: Src,
    },
    Store {
        width: Width,
        addr: Src,
        value: Src,
    },
    Move {
        dst: u32,
        value: Src,
    },
    Alloc {
        dst: u32,
        count: Src,
        elem: Option<Src>,
        halved: bool,
        zeroed: bool,
    },
    Free {
        ptr: Src,
    },
    Call {
        dst: Option<u32>,
        func: u32,
        args: Box<[Src]>,
        edge: u32,
    },
    Intrinsic {
        dst: Option<u32>,
        which: Intrinsic,
        args: Box<[Src]>,
    },
    ReadInput {
        dst: u32,
    },
    WriteOutput {
        value: Src,
    },
    Nop,
    Br {
        to: Target,
    },
    BrCond {
        cond: Src,
        then_to: Target,
        else_to: Target,
    },
    Switch {
        value: Src,
        default: Target,
        cases: Box<[(u64, Target)]>,
    },
    Ret {
        value: Option<Src>,
    },
    Abort,
}

#[derive(Debug, Clone)]
pub(crate) struct CFunc {
    pub slots: u32,
    pub code: Vec<CIns>,
    pub sites: Vec<u32>,
}

/// A program lowered for execution: labels and callees resolved to indices,
/// every coverage edge numbered.
#[derive(Debug, Clone)]
pub struct Image {
    pub(crate) funcs: Vec<CFunc>,
    pub(crate) entry: u32,
    pub(crate) edges: Vec<Edge>,
    pub(crate) site_count: usize,
    /// (site, mutation) pairs instrumented into this build.
    pub(crate) mutation_sites: Vec<(u32, MutationId)>,
}

struct EdgeTable {
    index: HashMap<Edge, u32>,
    list: Vec<Edge>,
}

impl EdgeTable {
    fn id(&mut self, e: Edge) -> u32 {
        if let Some(&i) = self.index.get(&e) {
            return i;
        }
        let i = self.list.len() as u32;
        self.list.push(e);
        self.index.insert(e, i);
        i
    }
}

fn src(o: Operand) -> Src {
    match o {
        Operand::Slot(s) => Src::Slot(s.0),
        Operand::Imm(v) => Src::Imm(v as u64),
    }
}

impl Image {
    pub fn compile(p: &Program, mutation_sites: Vec<(u32, MutationId)>) -> Image {
        let mut edges = EdgeTable {
            index: HashMap::new(),
            list: Vec::new(),
        };
        let func_index: HashMap<&str, u32> = p
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i as u32))
            .collect();
        let entry_site = |fi: usize| p.functions[fi].blocks[0].instrs[0].site.0;

        let mut funcs = Vec::with_capacity(p.functions.len());
        for f in &p.functions {
            let mut starts = Vec::with_capacity(f.blocks.len());
            let mut pc = 0u32;
            for b in &f.blocks {
                starts.push(pc);
                pc += b.instrs.len() as u32;
            }
            let label_pc: HashMap<&str, (u32, u32)> = f
                .blocks
                .iter()
                .zip(&starts)
                .map(|(b, &s)| (b.label.as_str(), (s, b.instrs[0].site.0)))
                .collect();

            let mut code = Vec::with_capacity(pc as usize);
            let mut sites = Vec::with_capacity(pc as usize);
            for ins in f.instructions() {
                let here = ins.site.0;
                let mut target = |label: &str| {
                    let (pc, first_site) = label_pc[label];
                    Target {
                        pc,
                        edge: edges.id((here, first_site)),
                    }
                };
                let c = match &ins.op {
                    Op::Const { dst, value } => CIns::Const {
                        dst: dst.0,
                        value: *value as u64,
                    },
                    Op::Bin { op, dst, lhs, rhs } => match op {
                        BinOp::CmpEq | BinOp::CmpNe => {
                            let pseudo = edges.id((here, PSEUDO_EDGE_BASE + 1));
                            for k in 2..=8 {
                                edges.id((here, PSEUDO_EDGE_BASE + k));
                            }
                            CIns::Eq {
                                negate: *op == BinOp::CmpNe,
                                dst: dst.0,
                                lhs: src(*lhs),
                                rhs: src(*rhs),
                                pseudo,
                            }
                        }
                        _ => CIns::Bin {
                            op: *op,
                            dst: dst.0,
                            lhs: src(*lhs),
                            rhs: src(*rhs),
                        },
                    },
                    Op::Cast { kind, dst, src: s } => CIns::Cast {
                        kind: *kind,
                        dst: dst.0,
                        src: src(*s),
                    },
                    Op::Load { dst, width, addr } => CIns::Load {
                        dst: dst.0,
                        width: *width,
                        addr: src(*addr),
                    },
                    Op::Store { width, addr, value } => CIns::Store {
                        width: *width,
                        addr: src(*addr),
                        value: src(*value),
                    },
                    Op::StoreLocal { dst, value } => CIns::Move {
                        dst: dst.0,
                        value: src(*value),
                    },
                    Op::Alloc {
                        dst,
                        count,
                        elem,
                        halved,
                    } => CIns::Alloc {
                        dst: dst.0,
                        count: src(*count),
                        elem: elem.map(src),
                        halved: *halved,
                        zeroed: false,
                    },
                    Op::AllocZeroed {
                        dst,
                        count,
                        elem,
                        halved,
                    } => CIns::Alloc {
                        dst: dst.0,
                        count: src(*count),
                        elem: Some(src(*elem)),
                        halved: *halved,
                        zeroed: true,
                    },
                    Op::Free { ptr } => CIns::Free { ptr: src(*ptr) },
                    Op::Call { dst, callee, args } => {
                        let args: Box<[Src]> = args.iter().map(|a| src(*a)).collect();
                        match callee {
                            Callee::Function(name) => {
                                let fi = func_index[name.as_str()];
                                CIns::Call {
                                    dst: dst.map(|d| d.0),
                                    func: fi,
                                    args,
                                    edge: edges.id((here, entry_site(fi as usize))),
                                }
                            }
                            Callee::Intrinsic(which) => CIns::Intrinsic {
                                dst: dst.map(|d| d.0),
                                which: *which,
                                args,
                            },
                        }
                    }
                    Op::ReadInput { dst } => CIns::ReadInput { dst: dst.0 },
                    Op::WriteOutput { value } => CIns::WriteOutput { value: src(*value) },
                    Op::Nop => CIns::Nop,
                    Op::Br { target: t } => CIns::Br { to: target(t) },
                    Op::BrCond {
                        cond,
                        then_to,
                        else_to,
                    } => CIns::BrCond {
                        cond: src(*cond),
                        then_to: target(then_to),
                        else_to: target(else_to),
                    },
                    Op::Switch {
                        value,
                        default,
                        cases,
                    } => CIns::Switch {
                        value: src(*value),
                        default: target(default),
                        cases: cases.iter().map(|(k, l)| (*k as u64, target(l))).collect(),
                    },
                    Op::Ret { value } => CIns::Ret {
                        value: value.map(src),
                    },
                    Op::Abort => CIns::Abort,
                };
                code.push(c);
                sites.push(here);
            }
            funcs.push(CFunc {
                slots: f.slot_count() as u32,
                code,
                sites,
            });
        }

        Image {
            funcs,
            entry: func_index[p.entry.as_str()],
            edges: edges.list,
            site_count: p.site_count(),
            mutation_sites,
        }
    }

    /// Number of distinct coverage edges (including pseudo-edges).
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
}
