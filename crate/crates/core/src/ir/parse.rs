use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{
    BinOp, Block, Callee, CastKind, Function, Instruction, Intrinsic, Op, Operand, Param, Program,
    SiteId, Slot, ValueType, Width,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    NoEntry,
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    Semantic {
        function: String,
        site: Option<SiteId>,
        msg: String,
    },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::NoEntry => write!(f, "no entry function"),
            ParseError::Syntax { line, col, msg } => write!(f, "{line}:{col}: {msg}"),
            ParseError::Semantic {
                function,
                site: Some(site),
                msg,
            } => write!(f, "in fn {function} at site {site}: {msg}"),
            ParseError::Semantic { function, msg, .. } => write!(f, "in fn {function}: {msg}"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Slot(String),
    Int(i64),
    Ident(String),
    At(String),
    Comma,
    Colon,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Eq,
    Shr,
}

struct Lexer<'a> {
    line_no: usize,
    bytes: &'a [u8],
    pos: usize,
    /// Column of the first byte of `bytes` in the original line (1-based).
    base_col: usize,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'.'
}

impl<'a> Lexer<'a> {
    fn err(&self, col: usize, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line_no,
            col: self.base_col + col + 1,
            msg: msg.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut out = Vec::new();
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            let start = self.pos;
            if b.is_ascii_whitespace() {
                self.pos += 1;
                continue;
            }
            let tok = match b {
                b',' => {
                    self.pos += 1;
                    Tok::Comma
                }
                b':' => {
                    self.pos += 1;
                    Tok::Colon
                }
                b'(' => {
                    self.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    self.pos += 1;
                    Tok::RParen
                }
                b'{' => {
                    self.pos += 1;
                    Tok::LBrace
                }
                b'}' => {
                    self.pos += 1;
                    Tok::RBrace
                }
                b'=' => {
                    self.pos += 1;
                    Tok::Eq
                }
                b'>' if self.bytes.get(self.pos + 1) == Some(&b'>') => {
                    self.pos += 2;
                    Tok::Shr
                }
                b'%' => {
                    self.pos += 1;
                    let name = self
                        .ident()
                        .ok_or_else(|| self.err(start, "expected slot name after '%'"))?;
                    Tok::Slot(name)
                }
                b'@' => {
                    self.pos += 1;
                    let name = self
                        .ident()
                        .ok_or_else(|| self.err(start, "expected intrinsic name after '@'"))?;
                    Tok::At(name)
                }
                b'-' | b'0'..=b'9' => Tok::Int(self.int()?),
                _ if is_ident_start(b) => Tok::Ident(self.ident().unwrap()),
                _ => return Err(self.err(start, format!("unexpected character '{}'", b as char))),
            };
            out.push((self.base_col + start, tok));
        }
        Ok(out)
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        if self.pos < self.bytes.len() && is_ident_start(self.bytes[self.pos]) {
            while self.pos < self.bytes.len() && is_ident_char(self.bytes[self.pos]) {
                self.pos += 1;
            }
            Some(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
        } else {
            None
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let start = self.pos;
        let neg = self.bytes[self.pos] == b'-';
        if neg {
            self.pos += 1;
        }
        let hex = self.bytes[self.pos..].starts_with(b"0x");
        if hex {
            self.pos += 2;
        }
        let digits_start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.bytes[digits_start..self.pos]).unwrap_or("");
        let magnitude = if hex {
            u64::from_str_radix(digits, 16).ok()
        } else {
            digits.parse::<u64>().ok()
        };
        let magnitude = magnitude.ok_or_else(|| self.err(start, "malformed integer literal"))?;
        // Hex literals are bit patterns; decimals must fit i64.
        let value = if hex {
            magnitude as i64
        } else if neg {
            if magnitude > i64::MAX as u64 + 1 {
                return Err(self.err(start, "integer literal out of range"));
            }
            (magnitude as i64).wrapping_neg()
        } else {
            i64::try_from(magnitude).map_err(|_| self.err(start, "integer literal out of range"))?
        };
        Ok(if hex && neg {
            value.wrapping_neg()
        } else {
            value
        })
    }
}

/// Token cursor over one instruction line.
struct Cursor<'t> {
    line: usize,
    toks: &'t [(usize, Tok)],
    pos: usize,
    end_col: usize,
}

impl<'t> Cursor<'t> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.end_col)
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            col: self.col() + 1,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.1);
        self.pos += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err("expected integer")),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing tokens"))
        }
    }
}

#[derive(Default)]
struct SlotTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
    params: usize,
}

impl SlotTable {
    fn declare(&mut self, name: &str) -> Option<Slot> {
        if self.index.contains_key(name) {
            return None;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Some(Slot(id))
    }

    fn get_or_declare(&mut self, name: &str) -> Slot {
        match self.index.get(name) {
            Some(&i) => Slot(i),
            None => self.declare(name).unwrap(),
        }
    }
}

struct FnBuilder {
    name: String,
    params: Vec<Param>,
    slots: SlotTable,
    blocks: Vec<Block>,
}

/// Parses `.mir` source text into a validated [`Program`].
pub fn parse_program(text: &[u8]) -> Result<Program, ParseError> {
    let text = std::str::from_utf8(text).map_err(|e| ParseError::Syntax {
        line: 1,
        col: 1,
        msg: format!("invalid UTF-8: {e}"),
    })?;

    let mut name: Option<String> = None;
    let mut entry: Option<String> = None;
    let mut functions: Vec<Function> = Vec::new();
    let mut current: Option<FnBuilder> = None;
    let mut next_site = 0u32;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split(';').next().unwrap_or("");
        let leading = content.len() - content.trim_start().len();
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks = Lexer {
            line_no,
            bytes: trimmed.as_bytes(),
            pos: 0,
            base_col: leading,
        }
        .tokens()?;
        let mut cur = Cursor {
            line: line_no,
            toks: &toks,
            pos: 0,
            end_col: leading + trimmed.len(),
        };

        let Some(builder) = current.as_mut() else {
            match cur.peek() {
                Some(Tok::Ident(kw)) if kw == "program" => {
                    cur.next();
                    name = Some(cur.ident("program name")?);
                    cur.finish()?;
                }
                Some(Tok::Ident(kw)) if kw == "entry" => {
                    cur.next();
                    entry = Some(cur.ident("entry function name")?);
                    cur.finish()?;
                }
                Some(Tok::Ident(kw)) if kw == "fn" => {
                    cur.next();
                    let mut b = parse_fn_header(&mut cur)?;
                    // One-line form: `fn main { ret 0 }`.
                    if !cur.at_end() {
                        let body_end = toks.len() - 1;
                        if toks[body_end].1 != Tok::RBrace {
                            return Err(cur.err("expected '}' closing one-line function"));
                        }
                        let body = Cursor {
                            line: line_no,
                            toks: &toks[cur.pos..body_end],
                            pos: 0,
                            end_col: toks[body_end].0,
                        };
                        push_instruction(&mut b, body, &mut next_site)?;
                        functions.push(finish_fn(b, line_no)?);
                    } else {
                        current = Some(b);
                    }
                }
                _ => return Err(cur.err("expected 'program', 'entry' or 'fn'")),
            }
            continue;
        };

        match cur.peek() {
            Some(Tok::RBrace) => {
                cur.next();
                cur.finish()?;
                let b = current.take().unwrap();
                functions.push(finish_fn(b, line_no)?);
            }
            Some(Tok::Ident(kw)) if kw == "locals" && builder.blocks.is_empty() => {
                cur.next();
                loop {
                    match cur.next() {
                        Some(Tok::Slot(s)) => {
                            let s = s.clone();
                            if builder.slots.declare(&s).is_none() {
                                return Err(cur.err(format!("duplicate slot %{s}")));
                            }
                        }
                        _ => {
                            cur.pos -= 1;
                            return Err(cur.err("expected slot name"));
                        }
                    }
                    if cur.at_end() {
                        break;
                    }
                    cur.expect(Tok::Comma, "','")?;
                }
            }
            Some(Tok::Ident(label)) if toks.len() == 2 && toks[1].1 == Tok::Colon => {
                let label = label.clone();
                builder.blocks.push(Block {
                    label,
                    instrs: Vec::new(),
                });
            }
            _ => push_instruction(builder, cur, &mut next_site)?,
        }
    }

    if let Some(b) = current {
        return Err(ParseError::Syntax {
            line: text.lines().count().max(1),
            col: 1,
            msg: format!("unterminated function '{}'", b.name),
        });
    }

    let entry = entry.unwrap_or_else(|| "main".to_string());
    if functions.iter().all(|f| f.name != entry) {
        return Err(ParseError::NoEntry);
    }
    let program = Program {
        name: name.unwrap_or_else(|| entry.clone()),
        entry,
        functions,
    };
    validate(&program)?;
    Ok(program)
}

fn parse_fn_header(cur: &mut Cursor<'_>) -> Result<FnBuilder, ParseError> {
    let name = cur.ident("function name")?;
    let mut b = FnBuilder {
        name,
        params: Vec::new(),
        slots: SlotTable::default(),
        blocks: Vec::new(),
    };
    if cur.eat(&Tok::LParen) && !cur.eat(&Tok::RParen) {
        {
            loop {
                let pname = match cur.next() {
                    Some(Tok::Slot(s)) => s.clone(),
                    _ => {
                        cur.pos -= 1;
                        return Err(cur.err("expected parameter slot"));
                    }
                };
                cur.expect(Tok::Colon, "':'")?;
                let ty = match cur.ident("parameter type")?.as_str() {
                    "i64" => ValueType::I64,
                    "u64" => ValueType::U64,
                    "ptr" => ValueType::Ptr,
                    other => return Err(cur.err(format!("unknown type '{other}'"))),
                };
                if b.slots.declare(&pname).is_none() {
                    return Err(cur.err(format!("duplicate parameter %{pname}")));
                }
                b.params.push(Param { name: pname, ty });
                if cur.eat(&Tok::RParen) {
                    break;
                }
                cur.expect(Tok::Comma, "',' or ')'")?;
            }
        }
    }
    b.slots.params = b.params.len();
    cur.expect(Tok::LBrace, "'{'")?;
    Ok(b)
}

fn finish_fn(b: FnBuilder, line: usize) -> Result<Function, ParseError> {
    if b.blocks.is_empty() {
        return Err(ParseError::Syntax {
            line,
            col: 1,
            msg: format!("function '{}' has no blocks", b.name),
        });
    }
    let locals = b.slots.names[b.slots.params..].to_vec();
    Ok(Function {
        name: b.name,
        params: b.params,
        locals,
        blocks: b.blocks,
    })
}

fn operand(cur: &mut Cursor<'_>, slots: &mut SlotTable) -> Result<Operand, ParseError> {
    match cur.peek().cloned() {
        Some(Tok::Slot(s)) => {
            cur.pos += 1;
            Ok(Operand::Slot(slots.get_or_declare(&s)))
        }
        Some(Tok::Int(v)) => {
            cur.pos += 1;
            Ok(Operand::Imm(v))
        }
        _ => Err(cur.err("expected operand")),
    }
}

fn width(cur: &mut Cursor<'_>) -> Result<Width, ParseError> {
    match cur.ident("access width")?.as_str() {
        "u8" => Ok(Width::Byte),
        "i64" => Ok(Width::Word),
        other => Err(cur.err(format!("unknown width '{other}'"))),
    }
}

fn halved(cur: &mut Cursor<'_>) -> Result<bool, ParseError> {
    if cur.eat(&Tok::Shr) {
        match cur.int()? {
            1 => Ok(true),
            _ => Err(cur.err("only '>> 1' is supported on allocations")),
        }
    } else {
        Ok(false)
    }
}

fn push_instruction(
    b: &mut FnBuilder,
    mut cur: Cursor<'_>,
    next_site: &mut u32,
) -> Result<(), ParseError> {
    if b.blocks.is_empty() {
        b.blocks.push(Block {
            label: "entry".to_string(),
            instrs: Vec::new(),
        });
    }
    let slots = &mut b.slots;

    let dst =
        if let (Some(Tok::Slot(s)), Some((_, Tok::Eq))) = (cur.peek().cloned(), cur.toks.get(1)) {
            cur.pos += 2;
            Some(slots.get_or_declare(&s))
        } else {
            None
        };
    let mnemonic = cur.ident("opcode")?;
    let need_dst =
        |cur: &Cursor<'_>| dst.ok_or_else(|| cur.err(format!("'{mnemonic}' needs a destination")));
    let no_dst = |cur: &Cursor<'_>| {
        if dst.is_some() {
            Err(cur.err(format!("'{mnemonic}' has no result")))
        } else {
            Ok(())
        }
    };

    let op = if let Some(bin) = BinOp::from_mnemonic(&mnemonic) {
        let dst = need_dst(&cur)?;
        let lhs = operand(&mut cur, slots)?;
        cur.expect(Tok::Comma, "','")?;
        let rhs = operand(&mut cur, slots)?;
        Op::Bin {
            op: bin,
            dst,
            lhs,
            rhs,
        }
    } else {
        match mnemonic.as_str() {
            "const" => Op::Const {
                dst: need_dst(&cur)?,
                value: cur.int()?,
            },
            "cast_s2u" | "cast_u2s" => Op::Cast {
                kind: if mnemonic == "cast_s2u" {
                    CastKind::SignedToUnsigned
                } else {
                    CastKind::UnsignedToSigned
                },
                dst: need_dst(&cur)?,
                src: operand(&mut cur, slots)?,
            },
            "load" => {
                let dst = need_dst(&cur)?;
                let width = width(&mut cur)?;
                Op::Load {
                    dst,
                    width,
                    addr: operand(&mut cur, slots)?,
                }
            }
            "store" => {
                no_dst(&cur)?;
                let width = width(&mut cur)?;
                let addr = operand(&mut cur, slots)?;
                cur.expect(Tok::Comma, "','")?;
                Op::Store {
                    width,
                    addr,
                    value: operand(&mut cur, slots)?,
                }
            }
            "store_local" => {
                no_dst(&cur)?;
                let target = match cur.next() {
                    Some(Tok::Slot(s)) => s.clone(),
                    _ => {
                        cur.pos -= 1;
                        return Err(cur.err("expected destination slot"));
                    }
                };
                let dst = slots.get_or_declare(&target);
                cur.expect(Tok::Comma, "','")?;
                Op::StoreLocal {
                    dst,
                    value: operand(&mut cur, slots)?,
                }
            }
            "alloc" => {
                let dst = need_dst(&cur)?;
                let count = operand(&mut cur, slots)?;
                let elem = if cur.eat(&Tok::Comma) {
                    Some(operand(&mut cur, slots)?)
                } else {
                    None
                };
                Op::Alloc {
                    dst,
                    count,
                    elem,
                    halved: halved(&mut cur)?,
                }
            }
            "alloc_zeroed" => {
                let dst = need_dst(&cur)?;
                let count = operand(&mut cur, slots)?;
                cur.expect(Tok::Comma, "','")?;
                let elem = operand(&mut cur, slots)?;
                Op::AllocZeroed {
                    dst,
                    count,
                    elem,
                    halved: halved(&mut cur)?,
                }
            }
            "free" => {
                no_dst(&cur)?;
                Op::Free {
                    ptr: operand(&mut cur, slots)?,
                }
            }
            "call" => {
                let callee = match cur.next().cloned() {
                    Some(Tok::Ident(f)) => Callee::Function(f),
                    Some(Tok::At(name)) => Callee::Intrinsic(
                        Intrinsic::from_name(&name)
                            .ok_or_else(|| cur.err(format!("unknown intrinsic '@{name}'")))?,
                    ),
                    _ => {
                        cur.pos -= 1;
                        return Err(cur.err("expected call target"));
                    }
                };
                cur.expect(Tok::LParen, "'('")?;
                let mut args = Vec::new();
                if !cur.eat(&Tok::RParen) {
                    loop {
                        args.push(operand(&mut cur, slots)?);
                        if cur.eat(&Tok::RParen) {
                            break;
                        }
                        cur.expect(Tok::Comma, "',' or ')'")?;
                    }
                }
                Op::Call { dst, callee, args }
            }
            "read_input" => Op::ReadInput {
                dst: need_dst(&cur)?,
            },
            "write_output" => {
                no_dst(&cur)?;
                Op::WriteOutput {
                    value: operand(&mut cur, slots)?,
                }
            }
            "nop" => {
                no_dst(&cur)?;
                Op::Nop
            }
            "br" => {
                no_dst(&cur)?;
                Op::Br {
                    target: cur.ident("label")?,
                }
            }
            "br_cond" => {
                no_dst(&cur)?;
                let cond = operand(&mut cur, slots)?;
                cur.expect(Tok::Comma, "','")?;
                let then_to = cur.ident("label")?;
                cur.expect(Tok::Comma, "','")?;
                let else_to = cur.ident("label")?;
                Op::BrCond {
                    cond,
                    then_to,
                    else_to,
                }
            }
            "switch" => {
                no_dst(&cur)?;
                let value = operand(&mut cur, slots)?;
                cur.expect(Tok::Comma, "','")?;
                let default = cur.ident("default label")?;
                let mut cases = Vec::new();
                while cur.eat(&Tok::Comma) {
                    let k = cur.int()?;
                    cur.expect(Tok::Colon, "':'")?;
                    cases.push((k, cur.ident("label")?));
                }
                Op::Switch {
                    value,
                    default,
                    cases,
                }
            }
            "ret" => {
                no_dst(&cur)?;
                let value = if cur.at_end() {
                    None
                } else {
                    Some(operand(&mut cur, slots)?)
                };
                Op::Ret { value }
            }
            "abort" => {
                no_dst(&cur)?;
                Op::Abort
            }
            other => {
                cur.pos -= 1;
                return Err(cur.err(format!("unknown opcode '{other}'")));
            }
        }
    };
    cur.finish()?;

    let block = b.blocks.last_mut().unwrap();
    if block.instrs.last().is_some_and(|i| i.op.is_terminator()) {
        return Err(ParseError::Syntax {
            line: cur.line,
            col: cur.toks.first().map(|t| t.0 + 1).unwrap_or(1),
            msg: format!("instruction after terminator in block '{}'", block.label),
        });
    }
    block.instrs.push(Instruction {
        site: SiteId(*next_site),
        op,
    });
    *next_site += 1;
    Ok(())
}

/// Structural validation shared by the parser and by programs built in code.
pub(super) fn validate(p: &Program) -> Result<(), ParseError> {
    let sem = |function: &str, site: Option<SiteId>, msg: String| ParseError::Semantic {
        function: function.to_string(),
        site,
        msg,
    };

    let entry = p.function(&p.entry).ok_or(ParseError::NoEntry)?;
    if !entry.params.is_empty() {
        return Err(sem(
            &entry.name,
            None,
            "entry function takes no parameters".into(),
        ));
    }

    let mut fn_names = HashSet::new();
    for f in &p.functions {
        if !fn_names.insert(f.name.as_str()) {
            return Err(sem(&f.name, None, "duplicate function name".into()));
        }
    }

    let mut sites = HashSet::new();
    for f in &p.functions {
        let mut labels = HashSet::new();
        for b in &f.blocks {
            if !labels.insert(b.label.as_str()) {
                return Err(sem(&f.name, None, format!("duplicate label '{}'", b.label)));
            }
        }
        let slot_count = f.slot_count() as u32;
        let mut slot_names = HashSet::new();
        for n in f
            .params
            .iter()
            .map(|p| p.name.as_str())
            .chain(f.locals.iter().map(String::as_str))
        {
            if !slot_names.insert(n) {
                return Err(sem(&f.name, None, format!("duplicate slot %{n}")));
            }
        }
        for b in &f.blocks {
            let Some(last) = b.instrs.last() else {
                return Err(sem(&f.name, None, format!("block '{}' is empty", b.label)));
            };
            if !last.op.is_terminator() {
                return Err(sem(
                    &f.name,
                    Some(last.site),
                    format!("block '{}' does not end in a terminator", b.label),
                ));
            }
            for ins in &b.instrs[..b.instrs.len() - 1] {
                if ins.op.is_terminator() {
                    return Err(sem(
                        &f.name,
                        Some(ins.site),
                        "terminator in mid-block".into(),
                    ));
                }
            }
            for ins in &b.instrs {
                let site = Some(ins.site);
                if !sites.insert(ins.site) && !shares_site_with_mutation(b, ins) {
                    return Err(sem(&f.name, site, "duplicate site id".into()));
                }
                for target in ins.op.successors() {
                    if !labels.contains(target) {
                        return Err(sem(&f.name, site, format!("unknown label '{target}'")));
                    }
                }
                let check_slot = |s: Slot| {
                    if s.0 < slot_count {
                        Ok(())
                    } else {
                        Err(sem(&f.name, site, format!("slot {} out of range", s.0)))
                    }
                };
                if let Some(d) = ins.op.dst() {
                    check_slot(d)?;
                }
                for o in operands(&ins.op) {
                    if let Operand::Slot(s) = o {
                        check_slot(s)?;
                    }
                }
                if let Op::Call { callee, args, .. } = &ins.op {
                    let arity = match callee {
                        Callee::Function(name) => match p.function(name) {
                            Some(g) => g.params.len(),
                            None => {
                                return Err(sem(
                                    &f.name,
                                    site,
                                    format!("unknown call target '{name}'"),
                                ))
                            }
                        },
                        Callee::Intrinsic(i) => i.params().len(),
                    };
                    if arity != args.len() {
                        return Err(sem(
                            &f.name,
                            site,
                            format!("call passes {} arguments, callee takes {arity}", args.len()),
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

/// A free inserted in front of a call shares the call's site.
fn shares_site_with_mutation(b: &Block, ins: &Instruction) -> bool {
    let same: Vec<_> = b.instrs.iter().filter(|i| i.site == ins.site).collect();
    same.len() == 2
        && matches!(same[0].op, Op::Free { .. })
        && matches!(same[1].op, Op::Call { .. })
}

/// All value operands read by an instruction, in textual order.
pub(crate) fn operands(op: &Op) -> Vec<Operand> {
    match op {
        Op::Bin { lhs, rhs, .. } => vec![*lhs, *rhs],
        Op::Cast { src, .. } => vec![*src],
        Op::Load { addr, .. } => vec![*addr],
        Op::Store { addr, value, .. } => vec![*addr, *value],
        Op::StoreLocal { value, .. } => vec![*value],
        Op::Alloc { count, elem, .. } => std::iter::once(*count).chain(*elem).collect(),
        Op::AllocZeroed { count, elem, .. } => vec![*count, *elem],
        Op::Free { ptr } => vec![*ptr],
        Op::Call { args, .. } => args.clone(),
        Op::WriteOutput { value } => vec![*value],
        Op::BrCond { cond, .. } => vec![*cond],
        Op::Switch { value, .. } => vec![*value],
        Op::Ret { value } => value.iter().copied().collect(),
        Op::Const { .. } | Op::ReadInput { .. } | Op::Nop | Op::Br { .. } | Op::Abort => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_has_no_entry() {
        assert_eq!(parse_program(b""), Err(ParseError::NoEntry));
        assert_eq!(
            parse_program(b"").unwrap_err().to_string(),
            "no entry function"
        );
    }

    #[test]
    fn three_line_minimal_program() {
        let p = parse_program(b"fn main {\n  ret 0\n}\n").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].blocks.len(), 1);
        assert_eq!(p.entry, "main");
    }

    #[test]
    fn one_line_function() {
        let p = parse_program(b"fn main { ret 0 }").unwrap();
        assert_eq!(p.functions[0].blocks[0].instrs.len(), 1);
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let err = parse_program(b"fn main {\n  %x = bogus 1\n  ret 0\n}\n").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 2);
                assert_eq!(col, 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_call_target_is_semantic_error() {
        let err = parse_program(b"fn main {\n  call nowhere()\n  ret 0\n}\n").unwrap_err();
        assert!(
            matches!(
                err,
                ParseError::Semantic {
                    site: Some(SiteId(0)),
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn duplicate_label_is_semantic_error() {
        let src = b"fn main {\na:\n  br a\na:\n  ret 0\n}\n";
        let err = parse_program(src).unwrap_err();
        assert!(err.to_string().contains("duplicate label"), "{err}");
    }

    #[test]
    fn missing_terminator_rejected() {
        let err = parse_program(b"fn main {\n  %x = const 1\n}\n").unwrap_err();
        assert!(err.to_string().contains("terminator"), "{err}");
    }

    #[test]
    fn arity_checked() {
        let src = b"fn f(%a: i64) {\n  ret %a\n}\nfn main {\n  %r = call f()\n  ret %r\n}\n";
        assert!(parse_program(src).is_err());
    }

    #[test]
    fn entry_directive_and_params() {
        let src = b"program demo\nentry start\nfn helper(%p: ptr, %n: i64) {\n  ret %n\n}\nfn start {\n  %r = call helper(0, 3)\n  ret %r\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.name, "demo");
        assert_eq!(p.entry, "start");
        assert_eq!(p.functions[0].params[0].ty, ValueType::Ptr);
    }

    #[test]
    fn sites_are_dense_in_source_order() {
        let src = b"fn g {\n  %a = const 1\n  ret %a\n}\nfn main {\n  %x = call g()\n  br next\nnext:\n  ret %x\n}\n";
        let p = parse_program(src).unwrap();
        let sites: Vec<u32> = p.instructions().map(|(_, i)| i.site.0).collect();
        assert_eq!(sites, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn hex_and_negative_literals() {
        let p =
            parse_program(b"fn main {\n  %a = const -5\n  %b = const 0x10\n  ret %a\n}\n").unwrap();
        let ops: Vec<_> = p.functions[0]
            .instructions()
            .map(|i| i.op.clone())
            .collect();
        assert_eq!(
            ops[0],
            Op::Const {
                dst: Slot(0),
                value: -5
            }
        );
        assert_eq!(
            ops[1],
            Op::Const {
                dst: Slot(1),
                value: 16
            }
        );
    }
}
