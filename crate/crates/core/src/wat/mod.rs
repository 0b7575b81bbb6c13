//! The supported WebAssembly text subset: i32-only modules with flat
//! (non-folded) instruction bodies.
//!
//! [`parse_module`] and [`print_module`] are the only way programs enter and
//! leave the toolkit. Printing is canonical (one instruction per line, two
//! space indentation, signed decimal immediates), so two structurally equal
//! modules always print to identical text.

mod lexer;
mod parser;
mod printer;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

pub use parser::{parse_module, ParseError};
pub use printer::print_module;
pub use validate::{validate, Diagnostic};

/// Size of one linear-memory page in bytes.
pub const PAGE_SIZE: usize = 65536;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Module {
    pub functions: Vec<FuncDef>,
    pub globals: Vec<Global>,
    /// Minimum page count of the single linear memory, if declared.
    pub memory: Option<u32>,
    pub exports: BTreeMap<String, u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Global {
    pub mutable: bool,
    pub init: i32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuncDef {
    pub params: u32,
    /// 0 or 1.
    pub results: u32,
    /// Additional locals beyond the parameters.
    pub locals: u32,
    pub body: Vec<Instr>,
}

impl FuncDef {
    pub fn local_count(&self) -> u32 {
        self.params + self.locals
    }
}

impl Module {
    pub fn export_index(&self, name: &str) -> Option<u32> {
        self.exports.get(name).copied()
    }
}

/// Arithmetic and bitwise binary operators on i32.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    DivS,
    DivU,
    RemS,
    RemU,
    And,
    Or,
    Xor,
    Shl,
    ShrS,
    ShrU,
    Rotl,
    Rotr,
}

impl BinOp {
    pub const ALL: [BinOp; 15] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::DivS,
        BinOp::DivU,
        BinOp::RemS,
        BinOp::RemU,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::ShrS,
        BinOp::ShrU,
        BinOp::Rotl,
        BinOp::Rotr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::DivS => "div_s",
            BinOp::DivU => "div_u",
            BinOp::RemS => "rem_s",
            BinOp::RemU => "rem_u",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::ShrS => "shr_s",
            BinOp::ShrU => "shr_u",
            BinOp::Rotl => "rotl",
            BinOp::Rotr => "rotr",
        }
    }

    /// Division and remainder can trap; everything else is total.
    pub fn can_trap(self) -> bool {
        matches!(self, BinOp::DivS | BinOp::DivU | BinOp::RemS | BinOp::RemU)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    LtS,
    LtU,
    GtS,
    GtU,
    LeS,
    LeU,
    GeS,
    GeU,
}

impl CmpOp {
    pub const ALL: [CmpOp; 10] = [
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::LtS,
        CmpOp::LtU,
        CmpOp::GtS,
        CmpOp::GtU,
        CmpOp::LeS,
        CmpOp::LeU,
        CmpOp::GeS,
        CmpOp::GeU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::LtS => "lt_s",
            CmpOp::LtU => "lt_u",
            CmpOp::GtS => "gt_s",
            CmpOp::GtU => "gt_u",
            CmpOp::LeS => "le_s",
            CmpOp::LeU => "le_u",
            CmpOp::GeS => "ge_s",
            CmpOp::GeU => "ge_u",
        }
    }
}

/// Block signature: no result or a single i32.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockType {
    Empty,
    I32,
}

impl BlockType {
    pub fn arity(self) -> usize {
        match self {
            BlockType::Empty => 0,
            BlockType::I32 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    Const(i32),
    Binary(BinOp),
    Compare(CmpOp),
    Eqz,
    Select,
    Drop,
    LocalGet(u32),
    LocalSet(u32),
    LocalTee(u32),
    GlobalGet(u32),
    GlobalSet(u32),
    Load { offset: u32 },
    Store { offset: u32 },
    Block(BlockType),
    Loop(BlockType),
    If(BlockType),
    Else,
    End,
    Br(u32),
    BrIf(u32),
    Return,
    Call(u32),
    Nop,
    Unreachable,
}

impl Instr {
    pub fn mnemonic(&self) -> String {
        match self {
            Instr::Const(_) => "i32.const".into(),
            Instr::Binary(op) => format!("i32.{}", op.name()),
            Instr::Compare(op) => format!("i32.{}", op.name()),
            Instr::Eqz => "i32.eqz".into(),
            Instr::Select => "select".into(),
            Instr::Drop => "drop".into(),
            Instr::LocalGet(_) => "local.get".into(),
            Instr::LocalSet(_) => "local.set".into(),
            Instr::LocalTee(_) => "local.tee".into(),
            Instr::GlobalGet(_) => "global.get".into(),
            Instr::GlobalSet(_) => "global.set".into(),
            Instr::Load { .. } => "i32.load".into(),
            Instr::Store { .. } => "i32.store".into(),
            Instr::Block(_) => "block".into(),
            Instr::Loop(_) => "loop".into(),
            Instr::If(_) => "if".into(),
            Instr::Else => "else".into(),
            Instr::End => "end".into(),
            Instr::Br(_) => "br".into(),
            Instr::BrIf(_) => "br_if".into(),
            Instr::Return => "return".into(),
            Instr::Call(_) => "call".into(),
            Instr::Nop => "nop".into(),
            Instr::Unreachable => "unreachable".into(),
        }
    }

    /// Instructions that end a straight-line run of code.
    pub fn is_control(&self) -> bool {
        matches!(
            self,
            Instr::Block(_)
                | Instr::Loop(_)
                | Instr::If(_)
                | Instr::Else
                | Instr::End
                | Instr::Br(_)
                | Instr::BrIf(_)
                | Instr::Return
                | Instr::Unreachable
        )
    }

    /// Opens a nesting level (`block`, `loop`, `if`).
    pub fn opens_block(&self) -> bool {
        matches!(self, Instr::Block(_) | Instr::Loop(_) | Instr::If(_))
    }
}

/// Canonical one-line rendering, shared by the printer and the static
/// tokenizer.
impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.mnemonic();
        match *self {
            Instr::Const(v) => write!(f, "{m} {v}"),
            Instr::LocalGet(i)
            | Instr::LocalSet(i)
            | Instr::LocalTee(i)
            | Instr::GlobalGet(i)
            | Instr::GlobalSet(i)
            | Instr::Br(i)
            | Instr::BrIf(i)
            | Instr::Call(i) => write!(f, "{m} {i}"),
            Instr::Load { offset } | Instr::Store { offset } if offset != 0 => {
                write!(f, "{m} offset={offset}")
            }
            Instr::Block(BlockType::I32) | Instr::Loop(BlockType::I32) | Instr::If(BlockType::I32) => {
                write!(f, "{m} (result i32)")
            }
            _ => f.write_str(&m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_is_canonical() {
        assert_eq!(Instr::Const(-5).to_string(), "i32.const -5");
        assert_eq!(Instr::Binary(BinOp::ShrU).to_string(), "i32.shr_u");
        assert_eq!(Instr::Load { offset: 0 }.to_string(), "i32.load");
        assert_eq!(Instr::Store { offset: 8 }.to_string(), "i32.store offset=8");
        assert_eq!(Instr::Block(BlockType::I32).to_string(), "block (result i32)");
        assert_eq!(Instr::Loop(BlockType::Empty).to_string(), "loop");
    }
}
