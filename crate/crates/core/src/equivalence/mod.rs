//! Equivalence of a block and a candidate over all 32-bit inputs.
//!
//! Verdicts come in three tiers. `Verified` needs a sound argument: the full
//! input domain was enumerated, or an SMT solver answered `unsat`.
//! `Probable` means every reduced-width sweep and every sampled 32-bit vector
//! agreed but nothing sound finished. `Rejected` always carries a 32-bit
//! counterexample that replays to differing values.

mod smt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{mask, Dag};

pub use smt::{emit_smtlib, SolverAnswer, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Verified,
    Probable,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exhaustive,
    ReducedWidth,
    Sampled,
    Smt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub tier: Tier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Vec<i32>>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Verdict {
    fn new(tier: Tier, method: Method) -> Self {
        Verdict { tier, counterexample: None, method, notes: Vec::new() }
    }

    fn rejected(cex: Vec<i32>, method: Method) -> Self {
        Verdict { tier: Tier::Rejected, counterexample: Some(cex), method, notes: Vec::new() }
    }

    pub fn accepted(&self) -> bool {
        self.tier != Tier::Rejected
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckMode {
    /// Only sound verdicts are accepted; `Probable` results are reported but
    /// callers should drop them.
    ExhaustiveOnly,
    ProbableOk,
    Smt,
}

#[derive(Clone, Debug)]
pub struct CheckerConfig {
    pub mode: CheckMode,
    /// Maximum number of evaluations for an exhaustive sweep.
    pub exhaustive_budget: u64,
    pub widths: Vec<u32>,
    pub samples: u64,
    pub seed: u64,
    pub solver: Option<SolverConfig>,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        CheckerConfig {
            mode: CheckMode::ProbableOk,
            exhaustive_budget: 1 << 26,
            widths: vec![4, 8],
            samples: 100_000,
            seed: 0,
            solver: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CheckError {
    #[error("input domain of {bits} bits exceeds the exhaustive budget")]
    InfeasibleDomain { bits: u32 },
    #[error("invalid checker configuration: {0}")]
    Config(String),
}

impl CheckerConfig {
    pub fn validate(&self) -> Result<(), CheckError> {
        if self.exhaustive_budget == 0 {
            return Err(CheckError::Config("exhaustive budget must be at least 1".into()));
        }
        if let Some(w) = self.widths.iter().find(|w| !(2..=32).contains(*w)) {
            return Err(CheckError::Config(format!("reduced width {w} outside 2..=32")));
        }
        if self.mode == CheckMode::Smt && self.solver.is_none() {
            return Err(CheckError::Config("smt mode needs a solver command".into()));
        }
        Ok(())
    }

    fn budget_bits(&self) -> u32 {
        63 - self.exhaustive_budget.leading_zeros()
    }
}

/// Width-32 replay of an assignment on both DAGs.
pub fn differs(b: &Dag, c: &Dag, env: &[i32]) -> bool {
    b.eval_i32(env) != c.eval_i32(env)
}

/// Enumerates every assignment of `arity` inputs at `width` bits.
///
/// Width 32 agreement yields `Verified`; narrower agreement only `Probable`.
/// A reduced-width disagreement is lifted to 32 bits by zero and by sign
/// extension; if neither lifted vector differs the disagreement is dropped
/// with a note.
pub fn exhaustive_check(b: &Dag, c: &Dag, arity: usize, width: u32, budget: u64) -> Result<Verdict, CheckError> {
    let bits = arity as u32 * width;
    let budget_bits = 63 - budget.max(1).leading_zeros();
    if bits > budget_bits {
        return Err(CheckError::InfeasibleDomain { bits });
    }
    let m = mask(width) as u64;
    let total: u64 = 1u64 << bits;
    const CHUNK: u64 = 4096;
    let mut columns = vec![Vec::with_capacity(CHUNK as usize); arity];
    let mut notes = Vec::new();
    let mut start = 0;
    while start < total {
        let count = CHUNK.min(total - start);
        for (k, col) in columns.iter_mut().enumerate() {
            col.clear();
            col.extend((start..start + count).map(|idx| ((idx >> (k as u32 * width)) & m) as u32));
        }
        let vb = b.eval_columns(&columns, count as usize, width);
        let vc = c.eval_columns(&columns, count as usize, width);
        for j in (0..count as usize).filter(|&j| vb[j] != vc[j]) {
            let env: Vec<u32> = columns.iter().map(|col| col[j]).collect();
            if width == 32 {
                return Ok(Verdict::rejected(env.iter().map(|&v| v as i32).collect(), Method::Exhaustive));
            }
            let zext: Vec<i32> = env.iter().map(|&v| v as i32).collect();
            let sext: Vec<i32> = env.iter().map(|&v| crate::dag::sext(v, width)).collect();
            for lifted in [zext, sext] {
                if differs(b, c, &lifted) {
                    return Ok(Verdict::rejected(lifted, Method::ReducedWidth));
                }
            }
            if notes.is_empty() {
                notes.push(format!("{width}-bit disagreement did not lift to 32 bits; ignored"));
            }
        }
        start += count;
    }
    let mut v = if width == 32 {
        Verdict::new(Tier::Verified, Method::Exhaustive)
    } else {
        Verdict::new(Tier::Probable, Method::ReducedWidth)
    };
    v.notes = notes;
    Ok(v)
}

/// Interesting 32-bit values for a pair: fixed corners plus constants of
/// both DAGs and their neighbours.
pub fn interesting_values(b: &Dag, c: &Dag) -> Vec<i32> {
    let mut vals = vec![0, 1, -1, 2, 10, i32::MAX, i32::MIN];
    for k in b.constants().chain(c.constants()) {
        for d in [-2i32, -1, 0, 1, 2] {
            vals.push(k.wrapping_add(d));
        }
        vals.push(k.wrapping_neg());
    }
    let mut seen = std::collections::HashSet::new();
    vals.retain(|v| seen.insert(*v));
    vals
}

/// Cross product of `values` over `arity` inputs, capped; beyond the cap a
/// seeded selection of tuples is drawn instead.
pub fn cross_vectors(values: &[i32], arity: usize, cap: usize, seed: u64) -> Vec<Vec<i32>> {
    if arity == 0 {
        return vec![vec![]];
    }
    let total = (values.len() as u128).checked_pow(arity as u32).unwrap_or(u128::MAX);
    if total <= cap as u128 {
        let mut out = Vec::with_capacity(total as usize);
        for mut idx in 0..total as usize {
            let mut v = Vec::with_capacity(arity);
            for _ in 0..arity {
                v.push(values[idx % values.len()]);
                idx /= values.len();
            }
            out.push(v);
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cap).map(|_| (0..arity).map(|_| values[rng.gen_range(0..values.len())]).collect()).collect()
}

/// Random 32-bit value with extra weight on small magnitudes and powers of
/// two, where arithmetic identities tend to break.
pub fn biased_value(rng: &mut impl Rng) -> i32 {
    match rng.gen_range(0..8) {
        0 => rng.gen_range(-16..=16),
        1 => {
            let k = rng.gen_range(0..32);
            let p = 1u32.wrapping_shl(k) as i32;
            p.wrapping_add(rng.gen_range(-1..=1))
        }
        _ => rng.gen(),
    }
}

const SAMPLE_CHUNK: usize = 4096;

fn sampled(b: &Dag, c: &Dag, arity: usize, cfg: &CheckerConfig) -> Option<Vec<i32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a3b1e5);
    let mut left = cfg.samples;
    while left > 0 {
        let n = left.min(SAMPLE_CHUNK as u64) as usize;
        left -= n as u64;
        let cols: Vec<Vec<u32>> = (0..arity).map(|_| (0..n).map(|_| biased_value(&mut rng) as u32).collect()).collect();
        let vb = b.eval_columns(&cols, n, 32);
        let vc = c.eval_columns(&cols, n, 32);
        if let Some(j) = (0..n).find(|&j| vb[j] != vc[j]) {
            return Some(cols.iter().map(|col| col[j] as i32).collect());
        }
    }
    None
}

/// Decides equivalence of two DAGs over `arity` inputs.
pub fn check_dags(b: &Dag, c: &Dag, arity: usize, cfg: &CheckerConfig) -> Verdict {
    if arity as u32 * 32 <= cfg.budget_bits() {
        if let Ok(v) = exhaustive_check(b, c, arity, 32, cfg.exhaustive_budget) {
            return v;
        }
    }
    let corner = cross_vectors(&interesting_values(b, c), arity, 4096, cfg.seed);
    if let Some(cex) = corner.into_iter().find(|env| differs(b, c, env)) {
        return Verdict::rejected(cex, Method::Sampled);
    }
    let mut notes = Vec::new();
    if cfg.mode == CheckMode::Smt {
        if let Some(solver) = &cfg.solver {
            match smt::solve(b, c, arity, solver) {
                Ok(SolverAnswer::Unsat) => return Verdict::new(Tier::Verified, Method::Smt),
                Ok(SolverAnswer::Sat(model)) => {
                    if differs(b, c, &model) {
                        return Verdict::rejected(model, Method::Smt);
                    }
                    notes.push("solver model did not replay; falling back".to_string());
                }
                Ok(SolverAnswer::Unknown) => notes.push("solver answered unknown; falling back".into()),
                Err(e) => notes.push(format!("solver failure ({e}); falling back")),
            }
        }
    }
    for &w in &cfg.widths {
        match exhaustive_check(b, c, arity, w, cfg.exhaustive_budget) {
            Ok(v) if v.tier == Tier::Rejected => return v,
            Ok(v) => notes.extend(v.notes),
            Err(_) => notes.push(format!("{w}-bit sweep skipped: domain too large")),
        }
    }
    if let Some(cex) = sampled(b, c, arity, cfg) {
        let mut v = Verdict::rejected(cex, Method::Sampled);
        v.notes = notes;
        return v;
    }
    let ran_reduced = cfg.widths.iter().any(|&w| arity as u32 * w <= cfg.budget_bits());
    let mut v = Verdict::new(Tier::Probable, if ran_reduced { Method::ReducedWidth } else { Method::Sampled });
    v.notes = notes;
    v
}
