use std::fmt::Write;

use super::{Instr, Module};

fn signature(out: &mut String, params: u32, results: u32) {
    if params > 0 {
        out.push_str(" (param");
        for _ in 0..params {
            out.push_str(" i32");
        }
        out.push(')');
    }
    if results > 0 {
        out.push_str(" (result i32)");
    }
}

fn escape(name: &str) -> String {
    let mut s = String::with_capacity(name.len());
    for c in name.chars() {
        match c {
            '"' => s.push_str("\\\""),
            '\\' => s.push_str("\\\\"),
            '\n' => s.push_str("\\n"),
            '\t' => s.push_str("\\t"),
            c => s.push(c),
        }
    }
    s
}

/// Render a module in canonical text form.
///
/// Fields are printed in a fixed order (globals, memory, functions, exports)
/// and instruction bodies one per line, indented by nesting depth.
pub fn print_module(m: &Module) -> String {
    let mut out = String::from("(module\n");
    for g in &m.globals {
        if g.mutable {
            let _ = writeln!(out, "  (global (mut i32) (i32.const {}))", g.init);
        } else {
            let _ = writeln!(out, "  (global i32 (i32.const {}))", g.init);
        }
    }
    if let Some(pages) = m.memory {
        let _ = writeln!(out, "  (memory {pages})");
    }
    for f in &m.functions {
        out.push_str("  (func");
        signature(&mut out, f.params, f.results);
        if f.locals > 0 {
            out.push_str(" (local");
            for _ in 0..f.locals {
                out.push_str(" i32");
            }
            out.push(')');
        }
        out.push('\n');
        let mut depth = 2usize;
        for ins in &f.body {
            let indent = match ins {
                Instr::Else | Instr::End => depth.saturating_sub(1),
                _ => depth,
            };
            if matches!(ins, Instr::End) {
                depth = depth.saturating_sub(1);
            }
            for _ in 0..indent {
                out.push_str("  ");
            }
            let _ = writeln!(out, "{ins}");
            if ins.opens_block() {
                depth += 1;
            }
        }
        out.push_str("  )\n");
    }
    for (name, idx) in &m.exports {
        let _ = writeln!(out, "  (export \"{}\" (func {idx}))", escape(name));
    }
    out.push_str(")\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::{parse_module, BlockType, FuncDef};
    use super::*;

    #[test]
    fn prints_const_body() {
        let m = Module {
            functions: vec![FuncDef { params: 0, results: 1, locals: 0, body: vec![Instr::Const(5)] }],
            ..Module::default()
        };
        let text = print_module(&m);
        assert!(text.contains("i32.const 5"));
        assert_eq!(parse_module(&text).unwrap(), m);
    }

    #[test]
    fn nesting_indent() {
        let m = Module {
            functions: vec![FuncDef {
                params: 1,
                results: 1,
                locals: 0,
                body: vec![
                    Instr::LocalGet(0),
                    Instr::If(BlockType::I32),
                    Instr::Const(1),
                    Instr::Else,
                    Instr::Const(2),
                    Instr::End,
                ],
            }],
            ..Module::default()
        };
        let text = print_module(&m);
        let expected = "(module
  (func (param i32) (result i32)
    local.get 0
    if (result i32)
      i32.const 1
    else
      i32.const 2
    end
  )
)
";
        assert_eq!(text, expected);
    }
}
