use std::fmt::Write;

use super::{Callee, Function, Op, Operand, Program};

/// Canonical text for `p`. Parsing the result yields a structurally equal
/// program.
pub fn serialize_program(p: &Program) -> Vec<u8> {
    let mut out = String::new();
    writeln!(out, "program {}", p.name).unwrap();
    writeln!(out, "entry {}", p.entry).unwrap();
    for f in &p.functions {
        out.push('\n');
        write_function(&mut out, f);
    }
    out.into_bytes()
}

fn write_function(out: &mut String, f: &Function) {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| format!("%{}: {}", p.name, p.ty.keyword()))
        .collect();
    writeln!(out, "fn {}({}) {{", f.name, params.join(", ")).unwrap();
    if !f.locals.is_empty() {
        let locals: Vec<String> = f.locals.iter().map(|l| format!("%{l}")).collect();
        writeln!(out, "  locals {}", locals.join(", ")).unwrap();
    }
    for b in &f.blocks {
        writeln!(out, "{}:", b.label).unwrap();
        for ins in &b.instrs {
            writeln!(out, "  {}", instruction_text(f, &ins.op)).unwrap();
        }
    }
    out.push_str("}\n");
}

/// One instruction in canonical form, without indentation.
pub fn instruction_text(f: &Function, op: &Op) -> String {
    let slot = |s: super::Slot| format!("%{}", f.slot_name(s));
    let opnd = |o: Operand| match o {
        Operand::Slot(s) => slot(s),
        Operand::Imm(v) => v.to_string(),
    };
    let half = |h: bool| if h { " >> 1" } else { "" };
    match op {
        Op::Const { dst, value } => format!("{} = const {value}", slot(*dst)),
        Op::Bin { op, dst, lhs, rhs } => {
            format!(
                "{} = {} {}, {}",
                slot(*dst),
                op.mnemonic(),
                opnd(*lhs),
                opnd(*rhs)
            )
        }
        Op::Cast { kind, dst, src } => {
            format!("{} = {} {}", slot(*dst), kind.mnemonic(), opnd(*src))
        }
        Op::Load { dst, width, addr } => {
            format!("{} = load {} {}", slot(*dst), width.keyword(), opnd(*addr))
        }
        Op::Store { width, addr, value } => {
            format!(
                "store {} {}, {}",
                width.keyword(),
                opnd(*addr),
                opnd(*value)
            )
        }
        Op::StoreLocal { dst, value } => format!("store_local {}, {}", slot(*dst), opnd(*value)),
        Op::Alloc {
            dst,
            count,
            elem,
            halved,
        } => match elem {
            Some(e) => format!(
                "{} = alloc {}, {}{}",
                slot(*dst),
                opnd(*count),
                opnd(*e),
                half(*halved)
            ),
            None => format!("{} = alloc {}{}", slot(*dst), opnd(*count), half(*halved)),
        },
        Op::AllocZeroed {
            dst,
            count,
            elem,
            halved,
        } => format!(
            "{} = alloc_zeroed {}, {}{}",
            slot(*dst),
            opnd(*count),
            opnd(*elem),
            half(*halved)
        ),
        Op::Free { ptr } => format!("free {}", opnd(*ptr)),
        Op::Call { dst, callee, args } => {
            let target = match callee {
                Callee::Function(name) => name.clone(),
                Callee::Intrinsic(i) => format!("@{}", i.name()),
            };
            let args: Vec<String> = args.iter().map(|a| opnd(*a)).collect();
            match dst {
                Some(d) => format!("{} = call {target}({})", slot(*d), args.join(", ")),
                None => format!("call {target}({})", args.join(", ")),
            }
        }
        Op::ReadInput { dst } => format!("{} = read_input", slot(*dst)),
        Op::WriteOutput { value } => format!("write_output {}", opnd(*value)),
        Op::Nop => "nop".to_string(),
        Op::Br { target } => format!("br {target}"),
        Op::BrCond {
            cond,
            then_to,
            else_to,
        } => format!("br_cond {}, {then_to}, {else_to}", opnd(*cond)),
        Op::Switch {
            value,
            default,
            cases,
        } => {
            let mut s = format!("switch {}, {default}", opnd(*value));
            for (k, l) in cases {
                write!(s, ", {k}: {l}").unwrap();
            }
            s
        }
        Op::Ret { value: Some(v) } => format!("ret {}", opnd(*v)),
        Op::Ret { value: None } => "ret".to_string(),
        Op::Abort => "abort".to_string(),
    }
}

/// 1-based line of each site in the canonical serialization.
pub fn site_lines(p: &Program) -> std::collections::BTreeMap<super::SiteId, usize> {
    let mut lines = std::collections::BTreeMap::new();
    let mut line = 2;
    for f in &p.functions {
        line += 2; // blank separator + header
        if !f.locals.is_empty() {
            line += 1;
        }
        for b in &f.blocks {
            line += 1;
            for ins in &b.instrs {
                line += 1;
                lines.entry(ins.site).or_insert(line);
            }
        }
        line += 1;
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn minimal_program_has_trailing_newline() {
        let p = parse_program(b"fn main { ret 0 }").unwrap();
        let text = String::from_utf8(serialize_program(&p)).unwrap();
        assert_eq!(
            text,
            "program main\nentry main\n\nfn main() {\nentry:\n  ret 0\n}\n"
        );
    }

    #[test]
    fn functions_emitted_in_declaration_order() {
        let src = b"fn zeta {\n  ret 1\n}\nfn main {\n  %r = call zeta()\n  ret %r\n}\n";
        let p = parse_program(src).unwrap();
        let text = String::from_utf8(serialize_program(&p)).unwrap();
        let z = text.find("fn zeta").unwrap();
        let m = text.find("fn main").unwrap();
        assert!(z < m);
    }

    #[test]
    fn site_lines_point_at_instructions() {
        let src = b"fn g(%a: i64) {\n  %b = add %a, 1\n  ret %b\n}\nfn main {\n  %x = call g(4)\n  ret %x\n}\n";
        let p = parse_program(src).unwrap();
        let text = String::from_utf8(serialize_program(&p)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        for (site, line) in site_lines(&p) {
            let (f, ins) = p.instructions().find(|(_, i)| i.site == site).unwrap();
            assert_eq!(lines[line - 1].trim(), instruction_text(f, &ins.op));
        }
    }
}
