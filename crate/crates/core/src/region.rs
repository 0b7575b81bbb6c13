//! Straight-line regions and pure blocks.
//!
//! A region is a maximal run of non-control instructions. Inside a region the
//! operand stack is simulated symbolically, producing a dataflow graph whose
//! leaves are the values the region cannot see through: parameters and locals
//! at region entry, global reads, loads, call results, results of trapping
//! arithmetic, and values already on the stack when the region starts. Every
//! pure value-producing instruction roots one [`PureBlock`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dag::{Dag, DagNode, NodeKind, PureOp};
use crate::wat::{FuncDef, Instr, Module};

/// Blocks with more nodes than this are recorded but not synthesized.
pub const DEFAULT_MAX_BLOCK_NODES: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub func: u32,
    pub start: usize,
    pub end: usize,
    /// Operand stack height (within the enclosing block) at region entry.
    pub entry_arity: usize,
    /// False for code following an unconditional branch, which never runs.
    pub reachable: bool,
}

impl Region {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Where a block input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputOrigin {
    Param { index: u32 },
    /// A non-parameter local as it was at region entry.
    LocalAtEntry { index: u32 },
    /// `site` is the first read of this global since region entry or since
    /// the last instruction that may have written it.
    Global { index: u32, site: usize },
    Load { site: usize },
    CallResult { site: usize },
    TrapOpResult { site: usize },
    /// Value on the operand stack at region entry; depth 0 is the top.
    EntryStack { depth: usize },
}

impl fmt::Display for InputOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            InputOrigin::Param { index } => write!(f, "param {index}"),
            InputOrigin::LocalAtEntry { index } => write!(f, "local {index}"),
            InputOrigin::Global { index, site } => write!(f, "global {index} @{site}"),
            InputOrigin::Load { site } => write!(f, "load @{site}"),
            InputOrigin::CallResult { site } => write!(f, "call @{site}"),
            InputOrigin::TrapOpResult { site } => write!(f, "trapping op @{site}"),
            InputOrigin::EntryStack { depth } => write!(f, "entry stack {depth}"),
        }
    }
}

/// Identifies a block by function and root instruction index; renders as
/// `f<func>:<site>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub func: u32,
    pub root_site: usize,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}:{}", self.func, self.root_site)
    }
}

impl FromStr for BlockId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed block id {s:?}");
        let rest = s.strip_prefix('f').ok_or_else(bad)?;
        let (func, site) = rest.split_once(':').ok_or_else(bad)?;
        Ok(BlockId { func: func.parse().map_err(|_| bad())?, root_site: site.parse().map_err(|_| bad())? })
    }
}

impl Serialize for BlockId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PureBlock {
    pub id: BlockId,
    /// Index of the owning region within its function's region list.
    pub region: usize,
    pub dag: Dag,
    pub inputs: Vec<InputOrigin>,
    /// Body indices of the instructions that computed the block's operator
    /// and constant nodes.
    pub sites: BTreeSet<usize>,
    /// True when the block exceeds the node limit and is skipped by
    /// synthesis.
    pub oversized: bool,
}

impl PureBlock {
    pub fn root_site(&self) -> usize {
        self.id.root_site
    }

    /// Operator and constant node count.
    pub fn size(&self) -> usize {
        self.dag.size()
    }
}

/// True iff both blocks live in the same function and their instruction
/// sites intersect.
pub fn blocks_overlap(a: &PureBlock, b: &PureBlock) -> bool {
    a.id.func == b.id.func && !a.sites.is_disjoint(&b.sites)
}

/// Splits a function body into maximal straight-line runs.
pub fn build_regions(m: &Module, func: u32) -> Vec<Region> {
    let f = &m.functions[func as usize];
    // (base height, unreachable) per open control frame
    let mut frames: Vec<(usize, bool)> = vec![(0, false)];
    let mut height = 0usize;
    let mut out = Vec::new();
    let mut start = 0;
    let mut entry = (0usize, true);
    let close = |out: &mut Vec<Region>, start: usize, end: usize, entry: (usize, bool)| {
        if end > start {
            out.push(Region { func, start, end, entry_arity: entry.0, reachable: entry.1 });
        }
    };
    for (i, ins) in f.body.iter().enumerate() {
        if !ins.is_control() {
            let (pops, pushes) = stack_effect(m, ins);
            height = height.saturating_sub(pops).max(frames.last().unwrap().0) + pushes;
            continue;
        }
        close(&mut out, start, i, entry);
        let (base, _) = *frames.last().unwrap();
        match ins {
            Instr::Block(_) | Instr::Loop(_) => frames.push((height, false)),
            Instr::If(_) => {
                height = height.saturating_sub(1).max(base);
                frames.push((height, false));
            }
            Instr::Else => {
                let fr = frames.last_mut().unwrap();
                fr.1 = false;
                height = fr.0;
            }
            Instr::End => {
                let (b, _) = frames.pop().unwrap();
                let results = block_results(&f.body, i);
                height = b + results;
            }
            Instr::BrIf(_) => height = height.saturating_sub(1).max(base),
            Instr::Br(_) | Instr::Return | Instr::Unreachable => {
                let fr = frames.last_mut().unwrap();
                fr.1 = true;
                height = fr.0;
            }
            _ => unreachable!(),
        }
        let (base, dead) = *frames.last().unwrap();
        start = i + 1;
        entry = (height - base, !dead && !frames.iter().any(|fr| fr.1));
    }
    close(&mut out, start, f.body.len(), entry);
    out
}

/// Result arity of the block closed by the `end` at `end_at`.
fn block_results(body: &[Instr], end_at: usize) -> usize {
    let mut depth = 0usize;
    for ins in body[..end_at].iter().rev() {
        match ins {
            Instr::End => depth += 1,
            Instr::Block(bt) | Instr::Loop(bt) | Instr::If(bt) => {
                if depth == 0 {
                    return bt.arity();
                }
                depth -= 1;
            }
            _ => {}
        }
    }
    0
}

fn stack_effect(m: &Module, ins: &Instr) -> (usize, usize) {
    match ins {
        Instr::Const(_) | Instr::LocalGet(_) | Instr::GlobalGet(_) => (0, 1),
        Instr::Binary(_) | Instr::Compare(_) => (2, 1),
        Instr::Eqz | Instr::LocalTee(_) | Instr::Load { .. } => (1, 1),
        Instr::Select => (3, 1),
        Instr::Drop | Instr::LocalSet(_) | Instr::GlobalSet(_) => (1, 0),
        Instr::Store { .. } => (2, 0),
        Instr::Call(i) => {
            let callee = &m.functions[*i as usize];
            (callee.params as usize, callee.results as usize)
        }
        _ => (0, 0),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum GKind {
    Op(PureOp),
    Const(i32),
    Input(InputOrigin),
}

#[derive(Clone, Debug)]
pub(crate) struct GNode {
    pub kind: GKind,
    pub args: Vec<usize>,
    /// Instruction that computed an operator/constant node.
    pub site: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SlotSrc {
    Site(usize),
    Entry(usize),
}

/// One value pushed onto the operand stack.
#[derive(Clone, Debug)]
pub(crate) struct Slot {
    pub src: SlotSrc,
    pub node: usize,
    /// Instruction that pops it, if any within the region.
    pub popper: Option<usize>,
}

/// Symbolic execution of one region.
#[derive(Clone, Debug)]
pub(crate) struct RegionGraph {
    pub nodes: Vec<GNode>,
    pub slots: Vec<Slot>,
    /// Slot pushed by each instruction, indexed by `site - start`.
    pub pushed: Vec<Option<usize>>,
}

impl RegionGraph {
    pub fn build(m: &Module, f: &FuncDef, r: &Region) -> RegionGraph {
        let mut g = RegionGraph { nodes: Vec::new(), slots: Vec::new(), pushed: Vec::new() };
        let mut inputs: HashMap<InputOrigin, usize> = HashMap::new();
        let mut stack: Vec<usize> = Vec::new();
        let mut entry_popped = 0usize;
        let mut locals: HashMap<u32, usize> = HashMap::new();
        // first read site of each global in its current version
        let mut globals: HashMap<u32, usize> = HashMap::new();

        let mut input = |g: &mut RegionGraph, origin: InputOrigin| -> usize {
            *inputs.entry(origin).or_insert_with(|| {
                g.nodes.push(GNode { kind: GKind::Input(origin), args: vec![], site: None });
                g.nodes.len() - 1
            })
        };

        for site in r.start..r.end {
            let ins = &f.body[site];
            let (npop, _) = stack_effect(m, ins);
            let mut popped = Vec::with_capacity(npop);
            for _ in 0..npop {
                let slot = match stack.pop() {
                    Some(s) => s,
                    None => {
                        let node = input(&mut g, InputOrigin::EntryStack { depth: entry_popped });
                        g.slots.push(Slot { src: SlotSrc::Entry(entry_popped), node, popper: None });
                        entry_popped += 1;
                        g.slots.len() - 1
                    }
                };
                g.slots[slot].popper = Some(site);
                popped.push(g.slots[slot].node);
            }
            // operands in push order
            popped.reverse();
            let produced: Option<usize> = match *ins {
                Instr::Const(v) => {
                    g.nodes.push(GNode { kind: GKind::Const(v), args: vec![], site: Some(site) });
                    Some(g.nodes.len() - 1)
                }
                Instr::Binary(op) if op.can_trap() => Some(input(&mut g, InputOrigin::TrapOpResult { site })),
                Instr::Binary(_) | Instr::Compare(_) | Instr::Eqz | Instr::Select => {
                    let op = PureOp::from_instr(ins).unwrap();
                    g.nodes.push(GNode { kind: GKind::Op(op), args: popped, site: Some(site) });
                    Some(g.nodes.len() - 1)
                }
                Instr::LocalGet(k) => Some(match locals.get(&k) {
                    Some(&n) => n,
                    None if k < f.params => input(&mut g, InputOrigin::Param { index: k }),
                    None => input(&mut g, InputOrigin::LocalAtEntry { index: k }),
                }),
                Instr::LocalSet(k) => {
                    locals.insert(k, popped[0]);
                    None
                }
                Instr::LocalTee(k) => {
                    locals.insert(k, popped[0]);
                    Some(popped[0])
                }
                Instr::GlobalGet(k) => {
                    let first = *globals.entry(k).or_insert(site);
                    Some(input(&mut g, InputOrigin::Global { index: k, site: first }))
                }
                Instr::GlobalSet(k) => {
                    globals.remove(&k);
                    None
                }
                Instr::Load { .. } => Some(input(&mut g, InputOrigin::Load { site })),
                Instr::Call(i) => {
                    globals.clear();
                    (m.functions[i as usize].results > 0).then(|| input(&mut g, InputOrigin::CallResult { site }))
                }
                _ => None,
            };
            let slot = produced.map(|node| {
                g.slots.push(Slot { src: SlotSrc::Site(site), node, popper: None });
                let s = g.slots.len() - 1;
                stack.push(s);
                s
            });
            g.pushed.push(slot);
        }
        g
    }

    /// Operators root a block each; a constant does only when no operator in
    /// the region consumes it.
    pub fn is_root(&self, n: usize) -> bool {
        match self.nodes[n].kind {
            GKind::Op(_) => true,
            GKind::Const(_) => !self.nodes.iter().any(|o| o.args.contains(&n)),
            GKind::Input(_) => false,
        }
    }

    /// Extracts the DAG rooted at `root`, with inputs in first-use order.
    fn block(&self, root: usize) -> (Dag, Vec<InputOrigin>, BTreeSet<usize>) {
        let mut order = Vec::new();
        let mut seen = HashMap::new();
        self.post_order(root, &mut seen, &mut order);
        let mut inputs = Vec::new();
        let mut sites = BTreeSet::new();
        let mut nodes = Vec::with_capacity(order.len());
        let mut index = HashMap::new();
        for &n in &order {
            let g = &self.nodes[n];
            let kind = match &g.kind {
                GKind::Op(op) => NodeKind::Op(*op),
                GKind::Const(v) => NodeKind::Const(*v),
                GKind::Input(origin) => {
                    inputs.push(*origin);
                    NodeKind::Input(inputs.len() as u32 - 1)
                }
            };
            if let Some(s) = g.site {
                sites.insert(s);
            }
            let args = g.args.iter().map(|a| index[a]).collect();
            index.insert(n, nodes.len() as u32);
            nodes.push(DagNode { kind, args });
        }
        (Dag { nodes }, inputs, sites)
    }

    fn post_order(&self, n: usize, seen: &mut HashMap<usize, ()>, out: &mut Vec<usize>) {
        if seen.contains_key(&n) {
            return;
        }
        seen.insert(n, ());
        for &a in &self.nodes[n].args {
            self.post_order(a, seen, out);
        }
        out.push(n);
    }
}

/// One block per pure value-producing instruction in the region, ordered by
/// root site. Unreachable regions yield nothing.
pub fn extract_blocks(r: &Region, m: &Module) -> Vec<PureBlock> {
    extract_blocks_with_limit(r, m, DEFAULT_MAX_BLOCK_NODES)
}

pub fn extract_blocks_with_limit(r: &Region, m: &Module, max_nodes: usize) -> Vec<PureBlock> {
    let index = build_regions(m, r.func).iter().position(|x| x.start == r.start).unwrap_or(0);
    region_blocks(m, r, index, max_nodes)
}

/// All blocks of a module ordered by (function, root site).
pub fn extract_module_blocks(m: &Module, max_nodes: usize) -> Vec<PureBlock> {
    let mut out = Vec::new();
    for func in 0..m.functions.len() as u32 {
        for (i, r) in build_regions(m, func).iter().enumerate() {
            out.extend(region_blocks(m, r, i, max_nodes));
        }
    }
    out
}

fn region_blocks(m: &Module, r: &Region, region_index: usize, max_nodes: usize) -> Vec<PureBlock> {
    if !r.reachable {
        return Vec::new();
    }
    let g = RegionGraph::build(m, &m.functions[r.func as usize], r);
    let mut out = Vec::new();
    for n in 0..g.nodes.len() {
        if !g.is_root(n) {
            continue;
        }
        let (dag, inputs, sites) = g.block(n);
        let oversized = dag.size() > max_nodes;
        out.push(PureBlock {
            id: BlockId { func: r.func, root_site: g.nodes[n].site.unwrap() },
            region: region_index,
            dag,
            inputs,
            sites,
            oversized,
        });
    }
    out.sort_by_key(|b| b.id);
    out
}
