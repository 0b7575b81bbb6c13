//! A tracing stack-machine interpreter for the i32 subset.
//!
//! Every operand-stack mutation is recorded. An instruction pops its
//! operands topmost first and then pushes its results. A call pops the
//! arguments in the caller; returning from a callee pops its results and any
//! leftover values from the callee frame and pushes the results in the
//! caller. Leaving the entry function records nothing. Branches pop the
//! carried values and everything above the target label's height, then push
//! the carried values back.

mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use trace::{read_trace, write_trace, TraceError, TraceFile};

use crate::wat::{BinOp, CmpOp, Instr, Module, PAGE_SIZE};

pub const DEFAULT_FUEL: u64 = 50_000_000;
pub const MAX_CALL_DEPTH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Event {
    Push(i32),
    Pop(i32),
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Push(v) => write!(f, "push {v}"),
            Event::Pop(v) => write!(f, "pop {v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trap {
    DivByZero,
    IntOverflow,
    OutOfBounds,
    Unreachable,
    CallStackExhausted,
}

impl Trap {
    pub const ALL: [Trap; 5] =
        [Trap::DivByZero, Trap::IntOverflow, Trap::OutOfBounds, Trap::Unreachable, Trap::CallStackExhausted];

    pub fn name(self) -> &'static str {
        match self {
            Trap::DivByZero => "div-by-zero",
            Trap::IntOverflow => "int-overflow",
            Trap::OutOfBounds => "out-of-bounds",
            Trap::Unreachable => "unreachable",
            Trap::CallStackExhausted => "call-stack-exhausted",
        }
    }

    pub fn from_name(s: &str) -> Option<Trap> {
        Trap::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Outcome {
    Result(Option<i32>),
    Trap(Trap),
    FuelExhausted,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Result(Some(v)) => write!(f, "result {v}"),
            Outcome::Result(None) => f.write_str("result"),
            Outcome::Trap(t) => write!(f, "trap {t}"),
            Outcome::FuelExhausted => f.write_str("fuel-exhausted"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InterpError {
    #[error("no exported function named {0:?}")]
    UnknownExport(String),
    #[error("{name} expects {expected} argument(s), got {got}")]
    ArityMismatch { name: String, expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub outcome: Outcome,
    pub events: Vec<Event>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterpConfig {
    /// Budget in events; instructions that record nothing cost one unit.
    pub fuel: u64,
    pub record: bool,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig { fuel: DEFAULT_FUEL, record: true }
    }
}

/// Matching `else`/`end` positions for every block opener.
struct Jumps {
    end: Vec<usize>,
    els: Vec<Option<usize>>,
}

fn jumps(body: &[Instr]) -> Jumps {
    let mut end = vec![usize::MAX; body.len()];
    let mut els = vec![None; body.len()];
    let mut open = Vec::new();
    for (i, ins) in body.iter().enumerate() {
        match ins {
            Instr::Block(_) | Instr::Loop(_) | Instr::If(_) => open.push(i),
            Instr::Else => {
                if let Some(&o) = open.last() {
                    els[o] = Some(i);
                }
            }
            Instr::End => {
                if let Some(o) = open.pop() {
                    end[o] = i;
                }
            }
            _ => {}
        }
    }
    Jumps { end, els }
}

#[derive(Clone, Copy)]
struct Label {
    /// Where a branch continues.
    target: usize,
    /// Values carried by a branch.
    arity: usize,
    height: usize,
    is_loop: bool,
}

struct Frame {
    func: usize,
    pc: usize,
    locals: Vec<i32>,
    labels: Vec<Label>,
    base: usize,
}

enum Stop {
    Trap(Trap),
    Fuel,
}

/// Globals and memory, initialized from the module.
pub struct Machine<'m> {
    module: &'m Module,
    jumps: Vec<Jumps>,
    pub globals: Vec<i32>,
    pub memory: Vec<u8>,
    stack: Vec<i32>,
    events: Vec<Event>,
    fuel: u64,
    record: bool,
}

impl<'m> Machine<'m> {
    pub fn instantiate(module: &'m Module, cfg: InterpConfig) -> Machine<'m> {
        Machine {
            module,
            jumps: module.functions.iter().map(|f| jumps(&f.body)).collect(),
            globals: module.globals.iter().map(|g| g.init).collect(),
            memory: vec![0; module.memory.unwrap_or(0) as usize * PAGE_SIZE],
            stack: Vec::new(),
            events: Vec::new(),
            fuel: cfg.fuel,
            record: cfg.record,
        }
    }

    fn charge(&mut self) -> Result<(), Stop> {
        if self.fuel == 0 {
            return Err(Stop::Fuel);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn push(&mut self, v: i32) -> Result<(), Stop> {
        self.charge()?;
        if self.record {
            self.events.push(Event::Push(v));
        }
        self.stack.push(v);
        Ok(())
    }

    fn pop(&mut self) -> Result<i32, Stop> {
        self.charge()?;
        let v = self.stack.pop().expect("validated module underflowed");
        if self.record {
            self.events.push(Event::Pop(v));
        }
        Ok(v)
    }

    /// Pops `arity` carried values and everything above `height`, then
    /// pushes the carried values back.
    fn unwind(&mut self, height: usize, arity: usize) -> Result<(), Stop> {
        let mut carried = Vec::with_capacity(arity);
        for _ in 0..arity {
            carried.push(self.pop()?);
        }
        while self.stack.len() > height {
            self.pop()?;
        }
        for v in carried.into_iter().rev() {
            self.push(v)?;
        }
        Ok(())
    }

    fn address(&self, base: i32, offset: u32) -> Result<usize, Stop> {
        let ea = base as u32 as u64 + offset as u64;
        if ea + 4 > self.memory.len() as u64 {
            return Err(Stop::Trap(Trap::OutOfBounds));
        }
        Ok(ea as usize)
    }

    /// Runs the exported function `name`.
    pub fn invoke(&mut self, name: &str, args: &[i32]) -> Result<Execution, InterpError> {
        let func = self.module.export_index(name).ok_or_else(|| InterpError::UnknownExport(name.to_string()))?;
        let f = &self.module.functions[func as usize];
        if f.params as usize != args.len() {
            return Err(InterpError::ArityMismatch {
                name: name.to_string(),
                expected: f.params as usize,
                got: args.len(),
            });
        }
        self.stack.clear();
        self.events.clear();
        let outcome = match self.run(func as usize, args) {
            Ok(v) => Outcome::Result(v),
            Err(Stop::Trap(t)) => Outcome::Trap(t),
            Err(Stop::Fuel) => Outcome::FuelExhausted,
        };
        Ok(Execution { outcome, events: std::mem::take(&mut self.events) })
    }

    fn frame(&self, func: usize, args: Vec<i32>, base: usize) -> Frame {
        let f = &self.module.functions[func];
        let mut locals = args;
        locals.resize(f.local_count() as usize, 0);
        Frame { func, pc: 0, locals, labels: Vec::new(), base }
    }

    fn run(&mut self, entry: usize, args: &[i32]) -> Result<Option<i32>, Stop> {
        let module = self.module;
        let mut frames = vec![self.frame(entry, args.to_vec(), 0)];
        loop {
            let fr = frames.last_mut().unwrap();
            let body = &module.functions[fr.func].body;
            if fr.pc >= body.len() {
                // implicit return at the end of the body
                let results = module.functions[fr.func].results as usize;
                let done = frames.pop().unwrap();
                if frames.is_empty() {
                    return Ok(self.stack.last().copied().filter(|_| results == 1));
                }
                self.unwind(done.base, results)?;
                continue;
            }
            let ins = body[fr.pc];
            fr.pc += 1;
            let before = self.fuel;
            match ins {
                Instr::Const(v) => self.push(v)?,
                Instr::Binary(op) => {
                    let b = self.pop()?;
                    let a = self.pop()?;
                    self.push(binary(op, a, b).map_err(Stop::Trap)?)?;
                }
                Instr::Compare(op) => {
                    let b = self.pop()?;
                    let a = self.pop()?;
                    self.push(compare(op, a, b) as i32)?;
                }
                Instr::Eqz => {
                    let a = self.pop()?;
                    self.push((a == 0) as i32)?;
                }
                Instr::Select => {
                    let c = self.pop()?;
                    let b = self.pop()?;
                    let a = self.pop()?;
                    self.push(if c != 0 { a } else { b })?;
                }
                Instr::Drop => {
                    self.pop()?;
                }
                Instr::LocalGet(i) => {
                    let v = frames.last().unwrap().locals[i as usize];
                    self.push(v)?;
                }
                Instr::LocalSet(i) => {
                    let v = self.pop()?;
                    frames.last_mut().unwrap().locals[i as usize] = v;
                }
                Instr::LocalTee(i) => {
                    let v = self.pop()?;
                    frames.last_mut().unwrap().locals[i as usize] = v;
                    self.push(v)?;
                }
                Instr::GlobalGet(i) => self.push(self.globals[i as usize])?,
                Instr::GlobalSet(i) => {
                    let v = self.pop()?;
                    self.globals[i as usize] = v;
                }
                Instr::Load { offset } => {
                    let base = self.pop()?;
                    let at = self.address(base, offset)?;
                    let v = i32::from_le_bytes(self.memory[at..at + 4].try_into().unwrap());
                    self.push(v)?;
                }
                Instr::Store { offset } => {
                    let v = self.pop()?;
                    let base = self.pop()?;
                    let at = self.address(base, offset)?;
                    self.memory[at..at + 4].copy_from_slice(&v.to_le_bytes());
                }
                Instr::Block(bt) | Instr::Loop(bt) => {
                    let fr = frames.last_mut().unwrap();
                    let open = fr.pc - 1;
                    let is_loop = matches!(ins, Instr::Loop(_));
                    let label = Label {
                        target: if is_loop { fr.pc } else { self.jumps[fr.func].end[open] + 1 },
                        arity: if is_loop { 0 } else { bt.arity() },
                        height: self.stack.len(),
                        is_loop,
                    };
                    fr.labels.push(label);
                }
                Instr::If(bt) => {
                    let c = self.pop()?;
                    let fr = frames.last_mut().unwrap();
                    let open = fr.pc - 1;
                    let j = &self.jumps[fr.func];
                    let end = j.end[open];
                    let label = Label { target: end + 1, arity: bt.arity(), height: self.stack.len(), is_loop: false };
                    if c != 0 {
                        fr.labels.push(label);
                    } else if let Some(e) = j.els[open] {
                        fr.labels.push(label);
                        fr.pc = e + 1;
                    } else {
                        fr.pc = end + 1;
                    }
                }
                Instr::Else => {
                    // the then-arm finished; skip the else-arm
                    let fr = frames.last_mut().unwrap();
                    let l = fr.labels.pop().unwrap();
                    fr.pc = l.target;
                }
                Instr::End => {
                    frames.last_mut().unwrap().labels.pop();
                }
                Instr::Br(depth) => self.branch(frames.last_mut().unwrap(), depth)?,
                Instr::BrIf(depth) => {
                    let c = self.pop()?;
                    if c != 0 {
                        self.branch(frames.last_mut().unwrap(), depth)?;
                    }
                }
                Instr::Return => {
                    let fr = frames.last_mut().unwrap();
                    fr.pc = usize::MAX;
                }
                Instr::Call(callee) => {
                    if frames.len() >= MAX_CALL_DEPTH {
                        return Err(Stop::Trap(Trap::CallStackExhausted));
                    }
                    let n = module.functions[callee as usize].params as usize;
                    let mut args = vec![0; n];
                    for k in (0..n).rev() {
                        args[k] = self.pop()?;
                    }
                    let fr = self.frame(callee as usize, args, self.stack.len());
                    frames.push(fr);
                }
                Instr::Nop => {}
                Instr::Unreachable => return Err(Stop::Trap(Trap::Unreachable)),
            }
            if self.fuel == before {
                self.charge()?;
            }
        }
    }

    fn branch(&mut self, fr: &mut Frame, depth: u32) -> Result<(), Stop> {
        let keep = fr.labels.len() - 1 - depth as usize;
        let l = fr.labels[keep];
        self.unwind(l.height, l.arity)?;
        fr.labels.truncate(if l.is_loop { keep + 1 } else { keep });
        fr.pc = l.target;
        Ok(())
    }
}

/// Instantiates `m` and runs one export.
pub fn invoke(m: &Module, name: &str, args: &[i32], cfg: InterpConfig) -> Result<Execution, InterpError> {
    Machine::instantiate(m, cfg).invoke(name, args)
}

fn binary(op: BinOp, a: i32, b: i32) -> Result<i32, Trap> {
    let (ua, ub) = (a as u32, b as u32);
    Ok(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::DivS => {
            if b == 0 {
                return Err(Trap::DivByZero);
            }
            if a == i32::MIN && b == -1 {
                return Err(Trap::IntOverflow);
            }
            a / b
        }
        BinOp::DivU => ua.checked_div(ub).ok_or(Trap::DivByZero)? as i32,
        BinOp::RemS => {
            if b == 0 {
                return Err(Trap::DivByZero);
            }
            a.wrapping_rem(b)
        }
        BinOp::RemU => ua.checked_rem(ub).ok_or(Trap::DivByZero)? as i32,
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => a.wrapping_shl(ub),
        BinOp::ShrS => a.wrapping_shr(ub),
        BinOp::ShrU => ua.wrapping_shr(ub) as i32,
        BinOp::Rotl => ua.rotate_left(ub & 31) as i32,
        BinOp::Rotr => ua.rotate_right(ub & 31) as i32,
    })
}

fn compare(op: CmpOp, a: i32, b: i32) -> bool {
    let (ua, ub) = (a as u32, b as u32);
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::LtS => a < b,
        CmpOp::LtU => ua < ub,
        CmpOp::GtS => a > b,
        CmpOp::GtU => ua > ub,
        CmpOp::LeS => a <= b,
        CmpOp::LeU => ua <= ub,
        CmpOp::GeS => a >= b,
        CmpOp::GeU => ua >= ub,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wat::parse_module;

    fn run(src: &str, args: &[i32]) -> Execution {
        invoke(&parse_module(src).unwrap(), "main", args, InterpConfig::default()).unwrap()
    }

    fn events(s: &str) -> Vec<Event> {
        s.split(',')
            .map(|e| {
                let (k, v) = e.trim().split_once(' ').unwrap();
                let v = v.parse().unwrap();
                if k == "push" {
                    Event::Push(v)
                } else {
                    Event::Pop(v)
                }
            })
            .collect()
    }

    #[test]
    fn call_transfer_trace() {
        let e = run(
            r#"(module
              (func $f (param i32) (result i32)
                local.get 0 local.get 0 i32.const 2 i32.mul i32.add)
              (func $main (result i32) i32.const 10 call $f)
              (export "main" (func $main)))"#,
            &[],
        );
        assert_eq!(e.outcome, Outcome::Result(Some(30)));
        assert_eq!(
            e.events,
            events("push 10, pop 10, push 10, push 10, push 2, pop 2, pop 10, push 20, pop 20, pop 10, push 30, pop 30, push 30")
        );
    }

    #[test]
    fn single_constant() {
        let e = run(r#"(module (func (result i32) i32.const 5) (export "main" (func 0)))"#, &[]);
        assert_eq!((e.outcome, e.events), (Outcome::Result(Some(5)), events("push 5")));
    }

    #[test]
    fn traps_after_popping() {
        let e = run(r#"(module (func (result i32) i32.const 1 i32.const 0 i32.div_u) (export "main" (func 0)))"#, &[]);
        assert_eq!(e.outcome, Outcome::Trap(Trap::DivByZero));
        assert_eq!(e.events, events("push 1, push 0, pop 0, pop 1"));
        let e = run(
            r#"(module (func (result i32) i32.const -2147483648 i32.const -1 i32.div_s) (export "main" (func 0)))"#,
            &[],
        );
        assert_eq!(e.outcome, Outcome::Trap(Trap::IntOverflow));
    }

    #[test]
    fn loops_and_branches() {
        // sum of 1..=n
        let src = r#"(module (func (param i32) (result i32) (local i32)
            block
              loop
                local.get 0
                i32.eqz
                br_if 1
                local.get 1
                local.get 0
                i32.add
                local.set 1
                local.get 0
                i32.const 1
                i32.sub
                local.set 0
                br 0
              end
            end
            local.get 1)
          (export "main" (func 0)))"#;
        assert_eq!(run(src, &[10]).outcome, Outcome::Result(Some(55)));
        assert_eq!(run(src, &[0]).outcome, Outcome::Result(Some(0)));
    }

    #[test]
    fn if_else_with_result() {
        let src = r#"(module (func (param i32) (result i32)
            local.get 0
            if (result i32) i32.const 7 else i32.const 9 end)
          (export "main" (func 0)))"#;
        assert_eq!(run(src, &[1]).outcome, Outcome::Result(Some(7)));
        assert_eq!(run(src, &[0]).outcome, Outcome::Result(Some(9)));
    }

    #[test]
    fn branch_out_of_block_carries_value() {
        let src = r#"(module (func (result i32)
            block (result i32)
              i32.const 1
              i32.const 2
              br 0
            end)
          (export "main" (func 0)))"#;
        let e = run(src, &[]);
        assert_eq!(e.outcome, Outcome::Result(Some(2)));
        assert_eq!(e.events, events("push 1, push 2, pop 2, pop 1, push 2"));
    }

    #[test]
    fn memory_and_globals() {
        let src = r#"(module
            (global (mut i32) (i32.const 7))
            (memory 1)
            (func (result i32)
              i32.const 8 global.get 0 i32.store
              i32.const 4 i32.load offset=4
              i32.const 65536 i32.load drop)
            (export "main" (func 0)))"#;
        let m = parse_module(src).unwrap();
        let mut mach = Machine::instantiate(&m, InterpConfig::default());
        assert_eq!(mach.memory.len(), 65536);
        assert_eq!(mach.globals, vec![7]);
        assert_eq!(mach.invoke("main", &[]).unwrap().outcome, Outcome::Trap(Trap::OutOfBounds));
        assert_eq!(i32::from_le_bytes(mach.memory[8..12].try_into().unwrap()), 7);
    }

    #[test]
    fn fuel_and_recursion_limits() {
        let spin = r#"(module (func loop br 0 end) (export "main" (func 0)))"#;
        let m = parse_module(spin).unwrap();
        let e = invoke(&m, "main", &[], InterpConfig { fuel: 1000, record: true }).unwrap();
        assert_eq!(e.outcome, Outcome::FuelExhausted);
        let rec = r#"(module (func $f call $f) (export "main" (func 0)))"#;
        assert_eq!(run(rec, &[]).outcome, Outcome::Trap(Trap::CallStackExhausted));
    }

    #[test]
    fn errors() {
        let m = parse_module(r#"(module (func (param i32)) (export "main" (func 0)))"#).unwrap();
        assert!(matches!(invoke(&m, "nope", &[], InterpConfig::default()), Err(InterpError::UnknownExport(_))));
        assert!(matches!(invoke(&m, "main", &[], InterpConfig::default()), Err(InterpError::ArityMismatch { .. })));
    }
}
