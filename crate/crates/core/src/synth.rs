//! Enumerative synthesis of replacement candidates for pure blocks.
//!
//! Candidates are expression trees enumerated by iterative deepening on
//! operator count. Trees of each size are built from smaller ones in a fixed
//! order (operator in vocabulary order, then operand-size composition, then
//! operand trees with the first operand varying slowest), so the stream is
//! deterministic. A cheap evaluation on a handful of vectors discards most
//! candidates before the full prefilter and the equivalence checker run.

use std::collections::{BTreeSet, HashSet};
use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Dag, DagNode, NodeKind, PureOp};
use crate::equivalence::{biased_value, check_dags, cross_vectors, CheckMode, CheckerConfig, Tier, Verdict};
use crate::region::{BlockId, PureBlock};

pub const MAX_CANDIDATE_SIZE: usize = 50;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("unknown vocabulary entry `{0}`")]
    UnknownMnemonic(String),
    #[error("`{0}` can trap or has side effects and cannot appear in candidates")]
    ImpureMnemonic(String),
    #[error("max candidate size must be in 1..={MAX_CANDIDATE_SIZE}, got {0}")]
    MaxSize(usize),
    #[error("prefilter vector count must be at least 1")]
    NoVectors,
}

/// Operators allowed in candidates, kept in canonical order. `constants`
/// additionally admits bare constants as whole candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ops: Vec<PureOp>,
    constants: bool,
}

impl Vocabulary {
    pub fn new(ops: impl IntoIterator<Item = PureOp>, constants: bool) -> Result<Vocabulary, ConfigError> {
        let set: BTreeSet<PureOp> = ops.into_iter().collect();
        if set.is_empty() && !constants {
            return Err(ConfigError::EmptyVocabulary);
        }
        let ops = PureOp::ALL.into_iter().filter(|op| set.contains(op)).collect();
        Ok(Vocabulary { ops, constants })
    }

    pub fn all() -> Vocabulary {
        Vocabulary { ops: PureOp::ALL.to_vec(), constants: true }
    }

    /// Parses a comma-separated list such as `add,shl,const`. Entries may
    /// carry an `i32.` prefix.
    pub fn parse(csv: &str) -> Result<Vocabulary, ConfigError> {
        let mut ops = Vec::new();
        let mut constants = false;
        for raw in csv.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let name = raw.strip_prefix("i32.").unwrap_or(raw);
            if name == "const" {
                constants = true;
            } else if let Some(op) = PureOp::from_name(name) {
                ops.push(op);
            } else if ["div_s", "div_u", "rem_s", "rem_u", "load", "store", "call"].contains(&name)
                || name.starts_with("local.")
                || name.starts_with("global.")
            {
                return Err(ConfigError::ImpureMnemonic(raw.to_string()));
            } else {
                return Err(ConfigError::UnknownMnemonic(raw.to_string()));
            }
        }
        Vocabulary::new(ops, constants)
    }

    pub fn ops(&self) -> &[PureOp] {
        &self.ops
    }

    pub fn allows_constants(&self) -> bool {
        self.constants
    }
}

impl std::fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut names: Vec<&str> = self.ops.iter().map(|op| op.name()).collect();
        if self.constants {
            names.push("const");
        }
        f.write_str(&names.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstantPool {
    /// {0, 1, 2, -1} plus the block's immediates, their neighbours and their
    /// negations.
    Derived,
    Fixed(Vec<i32>),
}

#[derive(Clone, Debug)]
pub struct SynthesisConfig {
    /// Maximum operator count of a candidate.
    pub max_size: usize,
    pub vocabulary: Vocabulary,
    pub pool: ConstantPool,
    /// Random prefilter vectors on top of the corner set.
    pub vectors: usize,
    pub seed: u64,
    /// Enumerated candidates per block before giving up.
    pub max_candidates: u64,
    /// Accepted replacements per block before giving up.
    pub max_replacements: usize,
    pub time_budget: Option<Duration>,
    /// Shared wall-clock cutoff across blocks, applied on top of `time_budget`.
    pub deadline: Option<Instant>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            max_size: 3,
            vocabulary: Vocabulary::all(),
            pool: ConstantPool::Derived,
            vectors: 64,
            seed: 0,
            max_candidates: 2_000_000,
            max_replacements: 64,
            time_budget: Some(Duration::from_secs(60)),
            deadline: None,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=MAX_CANDIDATE_SIZE).contains(&self.max_size) {
            return Err(ConfigError::MaxSize(self.max_size));
        }
        if self.vectors == 0 {
            return Err(ConfigError::NoVectors);
        }
        if self.vocabulary.ops.is_empty() && !self.vocabulary.constants {
            return Err(ConfigError::EmptyVocabulary);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub dag: Dag,
    /// Position in the enumeration stream; `None` for the inferred constant.
    pub index: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub block: BlockId,
    pub candidate: Candidate,
    pub verdict: Verdict,
    /// Instructions the candidate emits, counting one per input read.
    pub emitted_len: usize,
}

impl Replacement {
    pub fn tier(&self) -> Tier {
        self.verdict.tier
    }
}

/// Outcome of synthesizing one block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynthesisReport {
    pub replacements: Vec<Replacement>,
    pub enumerated: u64,
    pub prefilter_survivors: u64,
    pub checked: u64,
    /// Enumeration stopped on the candidate count or the clock.
    pub budget_exhausted: bool,
    /// Enumeration stopped because `max_replacements` were accepted.
    pub capped: bool,
    pub elapsed: Duration,
}

/// Deterministic per-block seed.
pub fn block_seed(seed: u64, id: BlockId) -> u64 {
    let mut z = seed ^ ((id.func as u64) << 32 | id.root_site as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn constant_pool(b: &PureBlock, policy: &ConstantPool) -> Vec<i32> {
    let mut pool = Vec::new();
    match policy {
        ConstantPool::Fixed(v) => pool.extend(v.iter().copied()),
        ConstantPool::Derived => {
            pool.extend([0, 1, 2, -1]);
            for k in b.dag.constants() {
                pool.extend([k, k.wrapping_sub(1), k.wrapping_add(1), k.wrapping_neg()]);
                // shift amount for power-of-two factors
                if k > 1 && (k as u32).is_power_of_two() {
                    pool.push(k.trailing_zeros() as i32);
                }
            }
        }
    }
    let mut seen = HashSet::new();
    pool.retain(|v| seen.insert(*v));
    pool
}

/// Corner vectors cross-combined up to a cap, then `count` seeded random
/// vectors.
pub fn prefilter_vectors(arity: usize, count: usize, seed: u64) -> Vec<Vec<i32>> {
    let corners = [0, 1, -1, 2, 10, i32::MAX, i32::MIN];
    let mut out = cross_vectors(&corners, arity, 343, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        out.push((0..arity).map(|_| biased_value(&mut rng)).collect());
    }
    out
}

/// True iff the block and candidate agree on every vector.
pub fn prefilter(b: &Dag, c: &Dag, vectors: &[Vec<i32>]) -> bool {
    vectors.iter().all(|env| b.eval_i32(env) == c.eval_i32(env))
}

fn to_columns(vectors: &[Vec<i32>], arity: usize) -> Vec<Vec<u32>> {
    (0..arity).map(|k| vectors.iter().map(|v| v[k] as u32).collect()).collect()
}

/// Proposes a constant when the block evaluates to one value on every
/// prefilter vector (or has no inputs at all).
pub fn infer_constant(b: &PureBlock, cfg: &SynthesisConfig) -> Option<Candidate> {
    let arity = b.inputs.len();
    if arity == 0 {
        return Some(Candidate { dag: Dag::constant(b.dag.eval_i32(&[])), index: None });
    }
    let vectors = prefilter_vectors(arity, cfg.vectors, block_seed(cfg.seed, b.id));
    let vals = b.dag.eval_columns(&to_columns(&vectors, arity), vectors.len(), 32);
    let first = vals[0];
    vals.iter().all(|&v| v == first).then(|| Candidate { dag: Dag::constant(first as i32), index: None })
}

const FAST: usize = 8;

#[derive(Clone, Copy)]
enum TNode {
    Input(u32),
    Const(i32),
    Op(PureOp, [u32; 3]),
}

/// Trees built so far with their values on the fast vectors.
struct Arena {
    nodes: Vec<TNode>,
    vals: Vec<[u32; FAST]>,
    levels: Vec<Vec<u32>>,
}

impl Arena {
    fn push(&mut self, node: TNode, vals: [u32; FAST]) -> u32 {
        self.nodes.push(node);
        self.vals.push(vals);
        (self.nodes.len() - 1) as u32
    }

    fn to_dag(&self, root: TNode) -> Dag {
        let mut nodes = Vec::new();
        self.emit(root, &mut nodes);
        Dag { nodes }
    }

    fn emit(&self, t: TNode, out: &mut Vec<DagNode>) -> u32 {
        let node = match t {
            TNode::Input(k) => DagNode { kind: NodeKind::Input(k), args: vec![] },
            TNode::Const(v) => DagNode { kind: NodeKind::Const(v), args: vec![] },
            TNode::Op(op, args) => {
                let args = args[..op.arity()].iter().map(|&a| self.emit(self.nodes[a as usize], out)).collect();
                DagNode { kind: NodeKind::Op(op), args }
            }
        };
        out.push(node);
        (out.len() - 1) as u32
    }
}

#[inline]
fn apply_fast(op: PureOp, a: &[u32; FAST], b: &[u32; FAST], c: &[u32; FAST]) -> [u32; FAST] {
    let mut out = [0u32; FAST];
    for j in 0..FAST {
        out[j] = op.apply(a[j], b[j], c[j], 32);
    }
    out
}

/// Drives the enumeration. The visitor receives each candidate's root, its
/// values on the fast vectors, and the arena to materialize it.
struct Enumerator<'a> {
    vocab: &'a Vocabulary,
    max_size: usize,
    arena: Arena,
    leaves: Vec<TNode>,
}

impl<'a> Enumerator<'a> {
    /// `rows[j][k]` is input `k` in fast vector `j`.
    fn new(vocab: &'a Vocabulary, max_size: usize, arity: usize, pool: &[i32], rows: &[Vec<u32>]) -> Self {
        let mut arena = Arena { nodes: Vec::new(), vals: Vec::new(), levels: vec![Vec::new()] };
        let mut leaves = Vec::new();
        for k in 0..arity {
            let mut v = [0u32; FAST];
            for j in 0..FAST {
                v[j] = rows[j][k];
            }
            let id = arena.push(TNode::Input(k as u32), v);
            arena.levels[0].push(id);
            leaves.push(TNode::Input(k as u32));
        }
        for &c in pool {
            let id = arena.push(TNode::Const(c), [c as u32; FAST]);
            arena.levels[0].push(id);
            leaves.push(TNode::Const(c));
        }
        Enumerator { vocab, max_size, arena, leaves }
    }

    /// Calls `visit` on every candidate in canonical order until it breaks.
    fn run(&mut self, visit: &mut dyn FnMut(TNode, &[u32; FAST], &Arena) -> ControlFlow<()>) -> ControlFlow<()> {
        if self.vocab.constants {
            for i in 0..self.leaves.len() {
                if let TNode::Const(_) = self.leaves[i] {
                    let vals = self.arena.vals[self.arena.levels[0][i] as usize];
                    visit(self.leaves[i], &vals, &self.arena)?;
                }
            }
        }
        for k in 1..=self.max_size {
            let materialize = k < self.max_size;
            let mut level = Vec::new();
            for &op in &self.vocab.ops.clone() {
                let flow = self.size_op(k, op, &mut |node, vals, arena| {
                    if materialize {
                        level.push((node, *vals));
                    }
                    visit(node, vals, arena)
                });
                if flow.is_break() {
                    return flow;
                }
            }
            let ids = level.into_iter().map(|(n, v)| self.arena.push(n, v)).collect();
            self.arena.levels.push(ids);
        }
        ControlFlow::Continue(())
    }

    fn size_op(
        &self,
        k: usize,
        op: PureOp,
        visit: &mut dyn FnMut(TNode, &[u32; FAST], &Arena) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        let a = &self.arena;
        let zero = [0u32; FAST];
        let rest = k - 1;
        match op.arity() {
            1 => {
                for &t in &a.levels[rest] {
                    let v = apply_fast(op, &a.vals[t as usize], &zero, &zero);
                    visit(TNode::Op(op, [t, 0, 0]), &v, a)?;
                }
            }
            2 => {
                for s1 in 0..=rest {
                    let s2 = rest - s1;
                    for &t1 in &a.levels[s1] {
                        let v1 = &a.vals[t1 as usize];
                        for &t2 in &a.levels[s2] {
                            let v = apply_fast(op, v1, &a.vals[t2 as usize], &zero);
                            visit(TNode::Op(op, [t1, t2, 0]), &v, a)?;
                        }
                    }
                }
            }
            _ => {
                for s1 in 0..=rest {
                    for s2 in 0..=rest - s1 {
                        let s3 = rest - s1 - s2;
                        for &t1 in &a.levels[s1] {
                            for &t2 in &a.levels[s2] {
                                for &t3 in &a.levels[s3] {
                                    let v = apply_fast(
                                        op,
                                        &a.vals[t1 as usize],
                                        &a.vals[t2 as usize],
                                        &a.vals[t3 as usize],
                                    );
                                    visit(TNode::Op(op, [t1, t2, t3]), &v, a)?;
                                }
                            }
                        }
                    }
                }
            }
        }
        ControlFlow::Continue(())
    }
}

/// Indices of the vectors the enumerator evaluates on. Half are corner
/// vectors spread over the corner prefix, the rest come from the random
/// tail; random values alone rarely separate predicates like `x < 4`.
fn fast_picks(n: usize, random: usize) -> [usize; FAST] {
    let corners = n.saturating_sub(random).max(1);
    let mut out = [0; FAST];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = if j % 2 == 0 { (j / 2) * corners / (FAST / 2) } else { n - 1 - (j / 2) % n };
    }
    out
}

/// Transposes the picked rows into the layout the enumerator reads:
/// `fast[j][k]` is input `k` in vector `j`.
fn fast_rows(vectors: &[Vec<i32>], arity: usize, random: usize) -> Vec<Vec<u32>> {
    let picks = fast_picks(vectors.len(), random);
    picks.iter().map(|&i| (0..arity).map(|k| vectors[i][k] as u32).collect()).collect()
}

/// The candidate stream for a block, materialized up to `limit` entries.
/// The block's own tree is excluded.
pub fn enumerate_candidates(b: &PureBlock, cfg: &SynthesisConfig, limit: u64) -> (Vec<Candidate>, bool) {
    let arity = b.inputs.len();
    let pool = constant_pool(b, &cfg.pool);
    let vectors = prefilter_vectors(arity, cfg.vectors, block_seed(cfg.seed, b.id));
    let rows = fast_rows(&vectors, arity, cfg.vectors);
    let own = b.dag.to_tree();
    let mut out = Vec::new();
    let mut index = 0u64;
    let mut e = Enumerator::new(&cfg.vocabulary, cfg.max_size, arity, &pool, &rows);
    let flow = e.run(&mut |node, _, arena| {
        let dag = arena.to_dag(node);
        if dag == own {
            return ControlFlow::Continue(());
        }
        if index >= limit {
            return ControlFlow::Break(());
        }
        out.push(Candidate { dag, index: Some(index) });
        index += 1;
        ControlFlow::Continue(())
    });
    (out, flow.is_break())
}

/// Enumerates, prefilters and checks candidates for one block.
pub fn synthesize_replacements(b: &PureBlock, cfg: &SynthesisConfig, checker: &CheckerConfig) -> SynthesisReport {
    let started = Instant::now();
    let mut report = SynthesisReport::default();
    if b.oversized {
        return report;
    }
    let arity = b.inputs.len();
    let seed = block_seed(cfg.seed, b.id);
    let checker = CheckerConfig { seed, ..checker.clone() };
    let vectors = prefilter_vectors(arity, cfg.vectors, seed);
    let columns = to_columns(&vectors, arity);
    let target = b.dag.eval_columns(&columns, vectors.len(), 32);
    let rows = fast_rows(&vectors, arity, cfg.vectors);
    let own = b.dag.to_tree();
    let mut seen: HashSet<Dag> = HashSet::new();
    seen.insert(own.clone());

    let accept = |v: &Verdict| match checker.mode {
        CheckMode::ExhaustiveOnly => v.tier == Tier::Verified,
        _ => v.tier != Tier::Rejected,
    };
    let mut consider = |dag: Dag, index: Option<u64>, report: &mut SynthesisReport| -> bool {
        if !seen.insert(dag.clone()) {
            return true;
        }
        let vals = dag.eval_columns(&columns, vectors.len(), 32);
        if vals != target {
            return true;
        }
        report.prefilter_survivors += 1;
        report.checked += 1;
        let verdict = check_dags(&b.dag, &dag, arity, &checker);
        if accept(&verdict) {
            let emitted_len = dag.nodes.len();
            report.replacements.push(Replacement {
                block: b.id,
                candidate: Candidate { dag, index },
                verdict,
                emitted_len,
            });
        }
        report.replacements.len() < cfg.max_replacements
    };

    if let Some(c) = infer_constant(b, cfg) {
        consider(c.dag, None, &mut report);
    }

    let pool = constant_pool(b, &cfg.pool);
    let target_fast = fast_picks(vectors.len(), cfg.vectors).map(|i| target[i]);
    let mut e = Enumerator::new(&cfg.vocabulary, cfg.max_size, arity, &pool, &rows);
    let mut index = 0u64;
    let deadline = match (cfg.time_budget.map(|d| started + d), cfg.deadline) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let flow = if report.replacements.len() >= cfg.max_replacements {
        ControlFlow::Break(())
    } else {
        e.run(&mut |node, vals, arena| {
            index += 1;
            if index > cfg.max_candidates {
                return ControlFlow::Break(());
            }
            if index % 65_536 == 0 && deadline.is_some_and(|d| Instant::now() >= d) {
                return ControlFlow::Break(());
            }
            if *vals != target_fast {
                return ControlFlow::Continue(());
            }
            let dag = arena.to_dag(node);
            if consider(dag, Some(index - 1), &mut report) {
                ControlFlow::Continue(())
            } else {
                ControlFlow::Break(())
            }
        })
    };
    report.enumerated = index.min(cfg.max_candidates);
    report.capped = report.replacements.len() >= cfg.max_replacements;
    report.budget_exhausted = flow.is_break() && !report.capped;
    report.elapsed = started.elapsed();
    report
}
