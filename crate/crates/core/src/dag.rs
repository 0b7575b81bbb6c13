//! Expression DAGs over the pure i32 operators, with a width-parametric
//! evaluator shared by synthesis, equivalence checking and tests.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::wat::{BinOp, CmpOp, Instr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PureOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    ShrS,
    ShrU,
    Rotl,
    Rotr,
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
    Eqz,
    Select,
}

impl PureOp {
    pub const ALL: [PureOp; 23] = [
        PureOp::Add,
        PureOp::Sub,
        PureOp::Mul,
        PureOp::And,
        PureOp::Or,
        PureOp::Xor,
        PureOp::Shl,
        PureOp::ShrS,
        PureOp::ShrU,
        PureOp::Rotl,
        PureOp::Rotr,
        PureOp::Eq,
        PureOp::Ne,
        PureOp::LtS,
        PureOp::LtU,
        PureOp::GtS,
        PureOp::GtU,
        PureOp::LeS,
        PureOp::LeU,
        PureOp::GeS,
        PureOp::GeU,
        PureOp::Eqz,
        PureOp::Select,
    ];

    pub fn arity(self) -> usize {
        match self {
            PureOp::Eqz => 1,
            PureOp::Select => 3,
            _ => 2,
        }
    }

    /// Short name as used in vocabularies (`add`, `gt_s`, `select`).
    pub fn name(self) -> &'static str {
        match self.to_instr() {
            Instr::Binary(op) => op.name(),
            Instr::Compare(op) => op.name(),
            Instr::Eqz => "eqz",
            _ => "select",
        }
    }

    pub fn from_name(name: &str) -> Option<PureOp> {
        PureOp::ALL.into_iter().find(|op| op.name() == name)
    }

    pub fn from_instr(ins: &Instr) -> Option<PureOp> {
        Some(match *ins {
            Instr::Binary(op) => match op {
                BinOp::Add => PureOp::Add,
                BinOp::Sub => PureOp::Sub,
                BinOp::Mul => PureOp::Mul,
                BinOp::And => PureOp::And,
                BinOp::Or => PureOp::Or,
                BinOp::Xor => PureOp::Xor,
                BinOp::Shl => PureOp::Shl,
                BinOp::ShrS => PureOp::ShrS,
                BinOp::ShrU => PureOp::ShrU,
                BinOp::Rotl => PureOp::Rotl,
                BinOp::Rotr => PureOp::Rotr,
                BinOp::DivS | BinOp::DivU | BinOp::RemS | BinOp::RemU => return None,
            },
            Instr::Compare(op) => match op {
                CmpOp::Eq => PureOp::Eq,
                CmpOp::Ne => PureOp::Ne,
                CmpOp::LtS => PureOp::LtS,
                CmpOp::LtU => PureOp::LtU,
                CmpOp::GtS => PureOp::GtS,
                CmpOp::GtU => PureOp::GtU,
                CmpOp::LeS => PureOp::LeS,
                CmpOp::LeU => PureOp::LeU,
                CmpOp::GeS => PureOp::GeS,
                CmpOp::GeU => PureOp::GeU,
            },
            Instr::Eqz => PureOp::Eqz,
            Instr::Select => PureOp::Select,
            _ => return None,
        })
    }

    pub fn to_instr(self) -> Instr {
        match self {
            PureOp::Add => Instr::Binary(BinOp::Add),
            PureOp::Sub => Instr::Binary(BinOp::Sub),
            PureOp::Mul => Instr::Binary(BinOp::Mul),
            PureOp::And => Instr::Binary(BinOp::And),
            PureOp::Or => Instr::Binary(BinOp::Or),
            PureOp::Xor => Instr::Binary(BinOp::Xor),
            PureOp::Shl => Instr::Binary(BinOp::Shl),
            PureOp::ShrS => Instr::Binary(BinOp::ShrS),
            PureOp::ShrU => Instr::Binary(BinOp::ShrU),
            PureOp::Rotl => Instr::Binary(BinOp::Rotl),
            PureOp::Rotr => Instr::Binary(BinOp::Rotr),
            PureOp::Eq => Instr::Compare(CmpOp::Eq),
            PureOp::Ne => Instr::Compare(CmpOp::Ne),
            PureOp::LtS => Instr::Compare(CmpOp::LtS),
            PureOp::LtU => Instr::Compare(CmpOp::LtU),
            PureOp::GtS => Instr::Compare(CmpOp::GtS),
            PureOp::GtU => Instr::Compare(CmpOp::GtU),
            PureOp::LeS => Instr::Compare(CmpOp::LeS),
            PureOp::LeU => Instr::Compare(CmpOp::LeU),
            PureOp::GeS => Instr::Compare(CmpOp::GeS),
            PureOp::GeU => Instr::Compare(CmpOp::GeU),
            PureOp::Eqz => Instr::Eqz,
            PureOp::Select => Instr::Select,
        }
    }

    /// Applies the operator at `width` bits. Operands and result are held in
    /// the low `width` bits of a `u32`.
    #[inline]
    pub fn apply(self, a: u32, b: u32, c: u32, width: u32) -> u32 {
        let mask = mask(width);
        let sa = || sext(a, width);
        let sb = || sext(b, width);
        let r = match self {
            PureOp::Add => a.wrapping_add(b),
            PureOp::Sub => a.wrapping_sub(b),
            PureOp::Mul => a.wrapping_mul(b),
            PureOp::And => a & b,
            PureOp::Or => a | b,
            PureOp::Xor => a ^ b,
            PureOp::Shl => a.wrapping_shl(b % width),
            PureOp::ShrU => a >> (b % width),
            PureOp::ShrS => (sa() >> (b % width)) as u32,
            PureOp::Rotl => {
                let k = b % width;
                if k == 0 {
                    a
                } else {
                    (a << k) | (a >> (width - k))
                }
            }
            PureOp::Rotr => {
                let k = b % width;
                if k == 0 {
                    a
                } else {
                    (a >> k) | (a << (width - k))
                }
            }
            PureOp::Eq => (a == b) as u32,
            PureOp::Ne => (a != b) as u32,
            PureOp::LtS => (sa() < sb()) as u32,
            PureOp::LtU => (a < b) as u32,
            PureOp::GtS => (sa() > sb()) as u32,
            PureOp::GtU => (a > b) as u32,
            PureOp::LeS => (sa() <= sb()) as u32,
            PureOp::LeU => (a <= b) as u32,
            PureOp::GeS => (sa() >= sb()) as u32,
            PureOp::GeU => (a >= b) as u32,
            PureOp::Eqz => (a == 0) as u32,
            PureOp::Select => {
                if c != 0 {
                    a
                } else {
                    b
                }
            }
        };
        r & mask
    }
}

#[inline]
pub fn mask(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

/// Sign-extends the low `width` bits of `v`.
#[inline]
pub fn sext(v: u32, width: u32) -> i32 {
    let shift = 32 - width;
    ((v << shift) as i32) >> shift
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Op(PureOp),
    Const(i32),
    /// Position in the owning block's input list.
    Input(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DagNode {
    pub kind: NodeKind,
    /// Indices of earlier nodes, in stack push order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<u32>,
}

/// Nodes in topological order; the last node is the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dag {
    pub nodes: Vec<DagNode>,
}

impl Dag {
    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn constant(v: i32) -> Dag {
        Dag { nodes: vec![DagNode { kind: NodeKind::Const(v), args: vec![] }] }
    }

    /// Number of operator and constant nodes (inputs are not counted).
    pub fn size(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.kind, NodeKind::Input(_))).count()
    }

    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Op(_))).count()
    }

    /// Highest input index used plus one.
    pub fn input_arity(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Input(k) => Some(k as usize + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn uses_input(&self, k: u32) -> bool {
        self.nodes.iter().any(|n| n.kind == NodeKind::Input(k))
    }

    pub fn constants(&self) -> impl Iterator<Item = i32> + '_ {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Const(v) => Some(v),
            _ => None,
        })
    }

    /// Structural sanity: arities match and operands point backwards.
    pub fn is_well_formed(&self) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, n)| {
                let arity = match n.kind {
                    NodeKind::Op(op) => op.arity(),
                    _ => 0,
                };
                n.args.len() == arity && n.args.iter().all(|&a| (a as usize) < i)
            })
    }

    /// Evaluates the root at `width` bits; `env[k]` is input `k` (only its
    /// low `width` bits are read).
    pub fn eval(&self, env: &[u32], width: u32) -> u32 {
        let mut vals = Vec::with_capacity(self.nodes.len());
        self.eval_into(env, width, &mut vals);
        vals[self.root()]
    }

    /// Width-32 evaluation on signed values.
    pub fn eval_i32(&self, env: &[i32]) -> i32 {
        let env: Vec<u32> = env.iter().map(|&v| v as u32).collect();
        self.eval(&env, 32) as i32
    }

    pub fn eval_into(&self, env: &[u32], width: u32, vals: &mut Vec<u32>) {
        let m = mask(width);
        vals.clear();
        for n in &self.nodes {
            let v = match n.kind {
                NodeKind::Const(c) => c as u32 & m,
                NodeKind::Input(k) => env[k as usize] & m,
                NodeKind::Op(op) => {
                    let arg = |i: usize| n.args.get(i).map(|&a| vals[a as usize]).unwrap_or(0);
                    op.apply(arg(0), arg(1), arg(2), width)
                }
            };
            vals.push(v);
        }
    }

    /// Evaluates the root over many input vectors at once. `columns[k][j]`
    /// is input `k` in vector `j`.
    pub fn eval_columns(&self, columns: &[Vec<u32>], count: usize, width: u32) -> Vec<u32> {
        let m = mask(width);
        let mut vals: Vec<Vec<u32>> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let col = match n.kind {
                NodeKind::Const(c) => vec![c as u32 & m; count],
                NodeKind::Input(k) => columns[k as usize].iter().map(|&v| v & m).collect(),
                NodeKind::Op(op) => {
                    let a = &vals[n.args[0] as usize];
                    let arg = |i: usize| n.args.get(i).filter(|_| op.arity() > i).map_or(a, |&j| &vals[j as usize]);
                    apply_columns(op, a, arg(1), arg(2), width)
                }
            };
            vals.push(col);
        }
        vals.pop().unwrap_or_default()
    }

    /// Emits the DAG as stack code, expanding shared nodes into repeated
    /// subtrees. `leaf` supplies the code pushing input `k`.
    pub fn to_instrs(&self, leaf: &mut dyn FnMut(u32) -> Vec<Instr>) -> Vec<Instr> {
        let mut out = Vec::new();
        self.emit(self.root(), leaf, &mut out);
        out
    }

    fn emit(&self, i: usize, leaf: &mut dyn FnMut(u32) -> Vec<Instr>, out: &mut Vec<Instr>) {
        let n = &self.nodes[i];
        match n.kind {
            NodeKind::Const(c) => out.push(Instr::Const(c)),
            NodeKind::Input(k) => out.extend(leaf(k)),
            NodeKind::Op(op) => {
                for &a in &n.args {
                    self.emit(a as usize, leaf, out);
                }
                out.push(op.to_instr());
            }
        }
    }

    /// Rebuilds the DAG as a tree (shared nodes duplicated), nodes in
    /// post-order. Two DAGs with equal tree forms emit identical code.
    pub fn to_tree(&self) -> Dag {
        let mut nodes = Vec::new();
        self.tree_rec(self.root(), &mut nodes);
        Dag { nodes }
    }

    fn tree_rec(&self, i: usize, out: &mut Vec<DagNode>) -> u32 {
        let n = &self.nodes[i];
        let args = n.args.iter().map(|&a| self.tree_rec(a as usize, out)).collect();
        out.push(DagNode { kind: n.kind, args });
        (out.len() - 1) as u32
    }

    fn fmt_node(&self, i: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = &self.nodes[i];
        match n.kind {
            NodeKind::Const(c) => write!(f, "{c}"),
            NodeKind::Input(k) => write!(f, "in{k}"),
            NodeKind::Op(op) => {
                write!(f, "{}(", op.name())?;
                for (j, &a) in n.args.iter().enumerate() {
                    if j > 0 {
                        f.write_str(", ")?;
                    }
                    self.fmt_node(a as usize, f)?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Prefix rendering, e.g. `add(mul(in0, 2), in0)`.
impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.nodes.is_empty() {
            return f.write_str("<empty>");
        }
        self.fmt_node(self.root(), f)
    }
}

/// Small builder used by tests and fixtures.
#[derive(Default)]
pub struct DagBuilder {
    nodes: Vec<DagNode>,
}

impl DagBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, k: u32) -> u32 {
        self.push(NodeKind::Input(k), vec![])
    }

    pub fn constant(&mut self, v: i32) -> u32 {
        self.push(NodeKind::Const(v), vec![])
    }

    pub fn op(&mut self, op: PureOp, args: &[u32]) -> u32 {
        assert_eq!(op.arity(), args.len(), "arity of {}", op.name());
        self.push(NodeKind::Op(op), args.to_vec())
    }

    fn push(&mut self, kind: NodeKind, args: Vec<u32>) -> u32 {
        self.nodes.push(DagNode { kind, args });
        (self.nodes.len() - 1) as u32
    }

    /// Finishes with `root` as the root; nodes not reachable from it are kept
    /// only if they come before it.
    pub fn finish(mut self, root: u32) -> Dag {
        self.nodes.truncate(root as usize + 1);
        Dag { nodes: self.nodes }
    }
}

/// Column-wise `PureOp::apply`, with the op match hoisted out of the loop.
/// Unused operand columns are ignored.
fn apply_columns(op: PureOp, a: &[u32], b: &[u32], c: &[u32], width: u32) -> Vec<u32> {
    macro_rules! per_op {
        ($($v:ident),*) => {
            match op {
                $(PureOp::$v => a
                    .iter()
                    .zip(b)
                    .zip(c)
                    .map(|((&x, &y), &z)| PureOp::$v.apply(x, y, z, width))
                    .collect(),)*
            }
        };
    }
    per_op!(Add, Sub, Mul, And, Or, Xor, Shl, ShrS, ShrU, Rotl, Rotr, Eq, Ne, LtS, LtU, GtS, GtU, LeS, LeU, GeS, GeU, Eqz, Select)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(op: PureOp, lhs: NodeKind, rhs: NodeKind) -> Dag {
        let mut b = DagBuilder::new();
        let l = b.push(lhs, vec![]);
        let r = b.push(rhs, vec![]);
        let root = b.op(op, &[l, r]);
        b.finish(root)
    }

    #[test]
    fn evaluates_at_full_width() {
        let mul = binary(PureOp::Mul, NodeKind::Input(0), NodeKind::Const(2));
        assert_eq!(mul.eval_i32(&[10]), 20);
        let shl = binary(PureOp::Shl, NodeKind::Input(0), NodeKind::Const(1));
        assert_eq!(shl.eval_i32(&[i32::MAX]), -2);
        let mut b = DagBuilder::new();
        let z = b.constant(0);
        let root = b.op(PureOp::Eqz, &[z]);
        assert_eq!(b.finish(root).eval_i32(&[]), 1);
    }

    #[test]
    fn reduced_width_semantics() {
        // 4-bit: 0b0111 + 1 wraps to 0b1000, which is negative when signed.
        let add = binary(PureOp::Add, NodeKind::Input(0), NodeKind::Const(1));
        assert_eq!(add.eval(&[7], 4), 8);
        let lt = binary(PureOp::LtS, NodeKind::Input(0), NodeKind::Const(0));
        assert_eq!(lt.eval(&[8], 4), 1);
        assert_eq!(lt.eval(&[7], 4), 0);
        let shl = binary(PureOp::Shl, NodeKind::Input(0), NodeKind::Input(1));
        assert_eq!(shl.eval(&[1, 5], 4), 2); // 5 mod 4 = 1
        let rotr = binary(PureOp::Rotr, NodeKind::Input(0), NodeKind::Const(1));
        assert_eq!(rotr.eval(&[1], 8), 0x80);
        let shrs = binary(PureOp::ShrS, NodeKind::Input(0), NodeKind::Const(1));
        assert_eq!(shrs.eval(&[0x80], 8), 0xc0);
    }

    #[test]
    fn column_eval_matches_scalar() {
        let mut b = DagBuilder::new();
        let x = b.input(0);
        let y = b.input(1);
        let c = b.constant(3);
        let s = b.op(PureOp::Select, &[x, y, c]);
        let root = b.op(PureOp::Rotl, &[s, y]);
        let d = b.finish(root);
        let xs: Vec<u32> = (0..50).map(|i| i * 7919).collect();
        let ys: Vec<u32> = (0..50).map(|i| i * 31 + 5).collect();
        let cols = d.eval_columns(&[xs.clone(), ys.clone()], 50, 32);
        for j in 0..50 {
            assert_eq!(cols[j], d.eval(&[xs[j], ys[j]], 32));
        }
    }

    #[test]
    fn display_and_emission() {
        let mut b = DagBuilder::new();
        let x = b.input(0);
        let two = b.constant(2);
        let m = b.op(PureOp::Mul, &[x, two]);
        let root = b.op(PureOp::Add, &[m, x]);
        let d = b.finish(root);
        assert_eq!(d.to_string(), "add(mul(in0, 2), in0)");
        let code = d.to_instrs(&mut |k| vec![Instr::LocalGet(k)]);
        assert_eq!(
            code,
            vec![
                Instr::LocalGet(0),
                Instr::Const(2),
                Instr::Binary(BinOp::Mul),
                Instr::LocalGet(0),
                Instr::Binary(BinOp::Add),
            ]
        );
        assert_eq!(d.size(), 3);
        assert_eq!(d.to_tree().nodes.len(), 5);
    }

    #[test]
    fn op_names_round_trip() {
        for op in PureOp::ALL {
            assert_eq!(PureOp::from_name(op.name()), Some(op));
            assert_eq!(PureOp::from_instr(&op.to_instr()), Some(op));
        }
        assert_eq!(PureOp::from_instr(&Instr::Binary(BinOp::DivS)), None);
    }
}
