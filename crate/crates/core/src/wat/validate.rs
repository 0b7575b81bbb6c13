use std::fmt;

use super::{FuncDef, Instr, Module};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// Function the problem was found in, if any.
    pub func: Option<u32>,
    /// Instruction index within that function's body.
    pub at: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.func, self.at) {
            (Some(func), Some(at)) => write!(f, "func {func} instr {at}: {}", self.message),
            (Some(func), None) => write!(f, "func {func}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Check module invariants and stack typing. An empty result means the
/// module is valid. Checking of a function stops at its first error.
pub fn validate(m: &Module) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let nfuncs = m.functions.len() as u32;
    for (name, &idx) in &m.exports {
        if idx >= nfuncs {
            out.push(Diagnostic {
                func: None,
                at: None,
                message: format!("export {name:?}: function index out of range ({idx} >= {nfuncs})"),
            });
        }
    }
    if let Some(pages) = m.memory {
        if pages > 65536 {
            out.push(Diagnostic { func: None, at: None, message: format!("memory of {pages} pages exceeds 4 GiB") });
        }
    }
    for (i, f) in m.functions.iter().enumerate() {
        if let Err((at, message)) = check_func(m, f) {
            out.push(Diagnostic { func: Some(i as u32), at, message });
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Func,
    Block,
    Loop,
    If,
    Else,
}

struct Frame {
    kind: Kind,
    results: usize,
    height: usize,
    unreachable: bool,
}

impl Frame {
    fn label_arity(&self) -> usize {
        if self.kind == Kind::Loop {
            0
        } else {
            self.results
        }
    }
}

struct Checker {
    height: usize,
    frames: Vec<Frame>,
}

type Fail = (Option<usize>, String);

impl Checker {
    fn pop(&mut self, at: usize, n: usize) -> Result<(), Fail> {
        for _ in 0..n {
            let frame = self.frames.last().unwrap();
            if self.height == frame.height {
                if frame.unreachable {
                    continue;
                }
                return Err((Some(at), "operand underflow".into()));
            }
            self.height -= 1;
        }
        Ok(())
    }

    fn push(&mut self, n: usize) {
        self.height += n;
    }

    fn set_unreachable(&mut self) {
        let frame = self.frames.last_mut().unwrap();
        self.height = frame.height;
        frame.unreachable = true;
    }

    fn label(&self, at: usize, depth: u32) -> Result<usize, Fail> {
        let n = self.frames.len();
        if depth as usize >= n {
            return Err((Some(at), format!("label index out of range ({depth} >= {n})")));
        }
        Ok(self.frames[n - 1 - depth as usize].label_arity())
    }

    /// Pops the frame's results and checks that nothing else is left.
    fn close(&mut self, at: usize) -> Result<Frame, Fail> {
        let results = self.frames.last().unwrap().results;
        self.pop(at, results)?;
        let frame = self.frames.pop().unwrap();
        if self.height != frame.height {
            return Err((
                Some(at),
                format!("type mismatch: {} extra value(s) left at block end", self.height - frame.height),
            ));
        }
        Ok(frame)
    }
}

fn check_index(at: usize, what: &str, idx: u32, len: usize) -> Result<(), Fail> {
    if idx as usize >= len {
        Err((Some(at), format!("{what} index out of range ({idx} >= {len})")))
    } else {
        Ok(())
    }
}

fn check_func(m: &Module, f: &FuncDef) -> Result<(), Fail> {
    if f.results > 1 {
        return Err((None, format!("{} results declared, at most 1 supported", f.results)));
    }
    let nlocals = f.local_count() as usize;
    let mut c = Checker {
        height: 0,
        frames: vec![Frame { kind: Kind::Func, results: f.results as usize, height: 0, unreachable: false }],
    };
    for (at, ins) in f.body.iter().enumerate() {
        if c.frames.is_empty() {
            return Err((Some(at), "instruction after function end".into()));
        }
        match *ins {
            Instr::Const(_) => c.push(1),
            Instr::Binary(_) | Instr::Compare(_) => {
                c.pop(at, 2)?;
                c.push(1);
            }
            Instr::Eqz => {
                c.pop(at, 1)?;
                c.push(1);
            }
            Instr::Select => {
                c.pop(at, 3)?;
                c.push(1);
            }
            Instr::Drop => c.pop(at, 1)?,
            Instr::Nop => {}
            Instr::LocalGet(i) => {
                check_index(at, "local", i, nlocals)?;
                c.push(1);
            }
            Instr::LocalSet(i) => {
                check_index(at, "local", i, nlocals)?;
                c.pop(at, 1)?;
            }
            Instr::LocalTee(i) => {
                check_index(at, "local", i, nlocals)?;
                c.pop(at, 1)?;
                c.push(1);
            }
            Instr::GlobalGet(i) => {
                check_index(at, "global", i, m.globals.len())?;
                c.push(1);
            }
            Instr::GlobalSet(i) => {
                check_index(at, "global", i, m.globals.len())?;
                if !m.globals[i as usize].mutable {
                    return Err((Some(at), format!("global {i} is immutable")));
                }
                c.pop(at, 1)?;
            }
            Instr::Load { .. } | Instr::Store { .. } => {
                if m.memory.is_none() {
                    return Err((Some(at), "memory access without a declared memory".into()));
                }
                if matches!(ins, Instr::Load { .. }) {
                    c.pop(at, 1)?;
                    c.push(1);
                } else {
                    c.pop(at, 2)?;
                }
            }
            Instr::Call(i) => {
                check_index(at, "function", i, m.functions.len())?;
                let callee = &m.functions[i as usize];
                c.pop(at, callee.params as usize)?;
                c.push(callee.results as usize);
            }
            Instr::Block(bt) | Instr::Loop(bt) | Instr::If(bt) => {
                let kind = match ins {
                    Instr::Block(_) => Kind::Block,
                    Instr::Loop(_) => Kind::Loop,
                    _ => {
                        c.pop(at, 1)?;
                        Kind::If
                    }
                };
                c.frames.push(Frame { kind, results: bt.arity(), height: c.height, unreachable: false });
            }
            Instr::Else => {
                if c.frames.last().map(|fr| fr.kind) != Some(Kind::If) {
                    return Err((Some(at), "else without matching if".into()));
                }
                let frame = c.close(at)?;
                c.frames.push(Frame { kind: Kind::Else, results: frame.results, height: frame.height, unreachable: false });
            }
            Instr::End => {
                if c.frames.len() == 1 {
                    return Err((Some(at), "end without matching block".into()));
                }
                let frame = c.close(at)?;
                if frame.kind == Kind::If && frame.results > 0 {
                    return Err((Some(at), "if with a result requires an else branch".into()));
                }
                c.push(frame.results);
            }
            Instr::Br(d) => {
                let arity = c.label(at, d)?;
                c.pop(at, arity)?;
                c.set_unreachable();
            }
            Instr::BrIf(d) => {
                let arity = c.label(at, d)?;
                c.pop(at, 1)?;
                c.pop(at, arity)?;
                c.push(arity);
            }
            Instr::Return => {
                c.pop(at, f.results as usize)?;
                c.set_unreachable();
            }
            Instr::Unreachable => c.set_unreachable(),
        }
    }
    let at = f.body.len();
    if c.frames.len() != 1 {
        return Err((Some(at), "unterminated block at function end".into()));
    }
    c.close(at)?;
    Ok(())
}
