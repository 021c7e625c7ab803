use std::collections::BTreeSet;

use super::compile::{CIns, Image, Src, Target};
use super::heap::Heap;
use super::{
    BuildKind, BuildMode, Edge, ExecLimits, ExecOutcome, ExecStatus, TrapKind, VmError,
    MAX_CALL_DEPTH,
};
use crate::ir::{BinOp, CastKind, Intrinsic, Program, SiteId};
use crate::mutation::{apply_mutations_with, MutantSpec, MutationId, MutationPoint};

/// Status, output and step count of one run; coverage stays in the [`Vm`]
/// until the next run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawOutcome {
    pub status: ExecStatus,
    pub output: Vec<u8>,
    pub steps: u64,
}

struct Frame {
    func: u32,
    pc: u32,
    base: u32,
    ret_dst: Option<u32>,
}

/// A compiled build plus reusable coverage buffers.
pub struct Vm {
    image: Image,
    sanitize: bool,
    site_hits: Vec<bool>,
    edge_hits: Vec<bool>,
    slots: Vec<u64>,
    frames: Vec<Frame>,
}

impl Vm {
    /// Compiles `build` of `p`; `points` is the mutation point list of `p`.
    pub fn new(p: &Program, points: &[MutationPoint], build: &BuildMode) -> Result<Vm, VmError> {
        let (program, mutation_sites) = match &build.kind {
            BuildKind::Baseline => (None, Vec::new()),
            BuildKind::Location => (None, points.iter().map(|m| (m.site.0, m.id)).collect()),
            BuildKind::Mutant(ids) | BuildKind::MutantInstrumented(ids) => {
                if ids.is_empty() {
                    return Err(VmError::EmptyMutant);
                }
                let spec = MutantSpec { ids: ids.clone() };
                let mutant = apply_mutations_with(p, points, &spec)?;
                let sites = ids
                    .iter()
                    .map(|id| (points[id.0 as usize].site.0, *id))
                    .collect();
                (Some(mutant), sites)
            }
        };
        let image = Image::compile(program.as_ref().unwrap_or(p), mutation_sites);
        Ok(Vm {
            site_hits: vec![false; image.site_count],
            edge_hits: vec![false; image.edges.len()],
            image,
            sanitize: build.sanitize,
            slots: Vec::new(),
            frames: Vec::new(),
        })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    /// Per-edge hit flags of the last run, indexed like [`Image::edges`].
    pub fn edge_hits(&self) -> &[bool] {
        &self.edge_hits
    }

    pub fn covered_edges(&self) -> BTreeSet<Edge> {
        self.edge_hits
            .iter()
            .zip(&self.image.edges)
            .filter(|(hit, _)| **hit)
            .map(|(_, e)| *e)
            .collect()
    }

    pub fn covered_sites(&self) -> BTreeSet<SiteId> {
        self.site_hits
            .iter()
            .enumerate()
            .filter(|(_, hit)| **hit)
            .map(|(i, _)| SiteId(i as u32))
            .collect()
    }

    pub fn covered_mutations(&self) -> BTreeSet<MutationId> {
        self.image
            .mutation_sites
            .iter()
            .filter(|(site, _)| self.site_hits[*site as usize])
            .map(|(_, id)| *id)
            .collect()
    }

    /// Packages the last run as an [`ExecOutcome`].
    pub fn outcome(&self, raw: RawOutcome) -> ExecOutcome {
        ExecOutcome {
            status: raw.status,
            output: raw.output,
            covered_sites: self.covered_sites(),
            covered_mutations: self.covered_mutations(),
            covered_edges: self.covered_edges(),
            steps: raw.steps,
        }
    }

    pub fn run(&mut self, input: &[u8], limits: &ExecLimits, seed: u64) -> RawOutcome {
        self.site_hits.fill(false);
        self.edge_hits.fill(false);
        self.slots.clear();
        self.frames.clear();
        let mut heap = Heap::new(seed, self.sanitize);
        let mut run = Run {
            image: &self.image,
            site_hits: &mut self.site_hits,
            edge_hits: &mut self.edge_hits,
            slots: &mut self.slots,
            frames: &mut self.frames,
            heap: &mut heap,
            input,
            input_pos: 0,
            output: Vec::new(),
            steps: 0,
            limits,
        };
        let status = run.exec();
        RawOutcome {
            status,
            output: run.output,
            steps: run.steps,
        }
    }
}

struct Run<'a> {
    image: &'a Image,
    site_hits: &'a mut [bool],
    edge_hits: &'a mut [bool],
    slots: &'a mut Vec<u64>,
    frames: &'a mut Vec<Frame>,
    heap: &'a mut Heap,
    input: &'a [u8],
    input_pos: usize,
    output: Vec<u8>,
    steps: u64,
    limits: &'a ExecLimits,
}

#[inline]
fn eval_bin(op: BinOp, a: u64, b: u64) -> Result<u64, TrapKind> {
    let (sa, sb) = (a as i64, b as i64);
    Ok(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::DivS => sa.checked_div(sb).ok_or(TrapKind::DivZero)? as u64,
        BinOp::DivU => a.checked_div(b).ok_or(TrapKind::DivZero)?,
        BinOp::Rem => sa.checked_rem(sb).ok_or(TrapKind::DivZero)? as u64,
        BinOp::Shl => a << (b & 63),
        BinOp::Shr => a >> (b & 63),
        BinOp::CmpSlt => (sa < sb) as u64,
        BinOp::CmpSle => (sa <= sb) as u64,
        BinOp::CmpSgt => (sa > sb) as u64,
        BinOp::CmpSge => (sa >= sb) as u64,
        BinOp::CmpUlt => (a < b) as u64,
        BinOp::CmpUle => (a <= b) as u64,
        BinOp::CmpUgt => (a > b) as u64,
        BinOp::CmpUge => (a >= b) as u64,
        BinOp::CmpEq => (a == b) as u64,
        BinOp::CmpNe => (a != b) as u64,
    })
}

impl Run<'_> {
    #[inline]
    fn val(&self, base: u32, s: Src) -> u64 {
        match s {
            Src::Slot(i) => self.slots[(base + i) as usize],
            Src::Imm(v) => v,
        }
    }

    #[inline]
    fn set(&mut self, base: u32, dst: u32, v: u64) {
        self.slots[(base + dst) as usize] = v;
    }

    fn push_frame(
        &mut self,
        func: u32,
        args: &[u64],
        ret_dst: Option<u32>,
    ) -> Result<u32, TrapKind> {
        if self.frames.len() >= MAX_CALL_DEPTH {
            return Err(TrapKind::OobWrite);
        }
        let base = self.slots.len() as u32;
        let n = self.image.funcs[func as usize].slots as usize;
        self.slots.extend_from_slice(args);
        self.slots.resize(base as usize + n, 0);
        self.frames.push(Frame {
            func,
            pc: 0,
            base,
            ret_dst,
        });
        Ok(base)
    }

    fn exec(&mut self) -> ExecStatus {
        match self.exec_inner() {
            Ok(code) => ExecStatus::Exit(code),
            Err(trap) => ExecStatus::Trap(trap),
        }
    }

    fn exec_inner(&mut self) -> Result<u8, TrapKind> {
        let image = self.image;
        let max_steps = self.limits.max_steps;
        self.push_frame(image.entry, &[], None)?;
        let mut func = image.entry;
        let mut pc = 0u32;
        let mut base = 0u32;

        loop {
            let f = &image.funcs[func as usize];
            let ins = &f.code[pc as usize];
            if self.steps >= max_steps {
                return Err(TrapKind::StepLimit);
            }
            self.steps += 1;
            self.site_hits[f.sites[pc as usize] as usize] = true;
            pc += 1;

            let jump = |hits: &mut [bool], t: &Target| {
                hits[t.edge as usize] = true;
                t.pc
            };

            match ins {
                CIns::Const { dst, value } => self.set(base, *dst, *value),
                CIns::Bin { op, dst, lhs, rhs } => {
                    let v = eval_bin(*op, self.val(base, *lhs), self.val(base, *rhs))?;
                    self.set(base, *dst, v);
                }
                CIns::Eq {
                    negate,
                    dst,
                    lhs,
                    rhs,
                    pseudo,
                } => {
                    let (a, b) = (self.val(base, *lhs), self.val(base, *rhs));
                    let matched = ((a ^ b).trailing_zeros() / 8).min(8);
                    if matched > 0 {
                        self.edge_hits[(pseudo + matched - 1) as usize] = true;
                    }
                    self.set(base, *dst, ((a == b) != *negate) as u64);
                }
                CIns::Cast { kind, dst, src } => {
                    let v = self.val(base, *src) as u32;
                    let out = match kind {
                        CastKind::SignedToUnsigned => v as u64,
                        CastKind::UnsignedToSigned => v as i32 as i64 as u64,
                    };
                    self.set(base, *dst, out);
                }
                CIns::Load { dst, width, addr } => {
                    let v = self.heap.load(self.val(base, *addr), *width)?;
                    self.set(base, *dst, v);
                }
                CIns::Store { width, addr, value } => {
                    let (a, v) = (self.val(base, *addr), self.val(base, *value));
                    self.heap.store(a, *width, v)?;
                }
                CIns::Move { dst, value } => {
                    let v = self.val(base, *value);
                    self.set(base, *dst, v);
                }
                CIns::Alloc {
                    dst,
                    count,
                    elem,
                    halved,
                    zeroed,
                } => {
                    let count = self.val(base, *count);
                    let elem = elem.map(|e| self.val(base, e)).unwrap_or(1);
                    let mut bytes = count.checked_mul(elem).ok_or(TrapKind::HeapLimit)?;
                    if *halved {
                        bytes /= 2;
                    }
                    let p = self.heap.alloc(bytes, *zeroed, self.limits.max_heap)?;
                    self.set(base, *dst, p);
                }
                CIns::Free { ptr } => self.heap.free(self.val(base, *ptr))?,
                CIns::Call {
                    dst,
                    func: callee,
                    args,
                    edge,
                } => {
                    self.edge_hits[*edge as usize] = true;
                    let mut argv = [0u64; 8];
                    let argv: Vec<u64> = if args.len() <= 8 {
                        for (slot, a) in argv.iter_mut().zip(args.iter()) {
                            *slot = self.val(base, *a);
                        }
                        argv[..args.len()].to_vec()
                    } else {
                        args.iter().map(|a| self.val(base, *a)).collect()
                    };
                    self.frames.last_mut().unwrap().pc = pc;
                    base = self.push_frame(*callee, &argv, *dst)?;
                    func = *callee;
                    pc = 0;
                }
                CIns::Intrinsic { dst, which, args } => {
                    let arg = |i: usize| self.val(base, args[i]);
                    let result = match which {
                        Intrinsic::Exit => return Ok((arg(0) & 0x7F) as u8),
                        Intrinsic::InputLen => self.input.len() as u64,
                        Intrinsic::Memcpy => {
                            let (d, s, n) = (arg(0), arg(1), arg(2));
                            self.charge(n / 8)?;
                            self.heap.memcpy(d, s, n)?;
                            d
                        }
                        Intrinsic::Memset => {
                            let (d, b, n) = (arg(0), arg(1), arg(2));
                            self.charge(n / 8)?;
                            self.heap.memset(d, b as u8, n)?;
                            d
                        }
                    };
                    if let Some(d) = dst {
                        self.set(base, *d, result);
                    }
                }
                CIns::ReadInput { dst } => {
                    let v = match self.input.get(self.input_pos) {
                        Some(b) => {
                            self.input_pos += 1;
                            *b as u64
                        }
                        None => u64::MAX,
                    };
                    self.set(base, *dst, v);
                }
                CIns::WriteOutput { value } => {
                    if (self.output.len() as u64) < self.limits.max_output {
                        let v = self.val(base, *value) as u8;
                        self.output.push(v);
                    }
                }
                CIns::Nop => {}
                CIns::Br { to } => pc = jump(self.edge_hits, to),
                CIns::BrCond {
                    cond,
                    then_to,
                    else_to,
                } => {
                    let t = if self.val(base, *cond) != 0 {
                        then_to
                    } else {
                        else_to
                    };
                    pc = jump(self.edge_hits, t);
                }
                CIns::Switch {
                    value,
                    default,
                    cases,
                } => {
                    let v = self.val(base, *value);
                    let t = cases
                        .iter()
                        .find(|(k, _)| *k == v)
                        .map(|(_, t)| t)
                        .unwrap_or(default);
                    pc = jump(self.edge_hits, t);
                }
                CIns::Ret { value } => {
                    let v = value.map(|s| self.val(base, s)).unwrap_or(0);
                    let done = self.frames.pop().unwrap();
                    self.slots.truncate(done.base as usize);
                    match self.frames.last() {
                        None => return Ok((v & 0x7F) as u8),
                        Some(caller) => {
                            func = caller.func;
                            pc = caller.pc;
                            base = caller.base;
                            if let Some(d) = done.ret_dst {
                                self.set(base, d, v);
                            }
                        }
                    }
                }
                CIns::Abort => return Err(TrapKind::ExplicitAbort),
            }
        }
    }

    /// Extra steps for bulk intrinsics.
    fn charge(&mut self, extra: u64) -> Result<(), TrapKind> {
        self.steps = self.steps.saturating_add(extra);
        if self.steps > self.limits.max_steps {
            self.steps = self.limits.max_steps;
            return Err(TrapKind::StepLimit);
        }
        Ok(())
    }
}
