//! Combining per-block replacements into whole-module variants.

mod emit;

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use emit::{substitute, EmitError};

use crate::region::{blocks_overlap, BlockId, PureBlock};
use crate::synth::Replacement;
use crate::wat::{print_module, Module};

/// Default number of variants materialized per program.
pub const DEFAULT_VARIANT_LIMIT: usize = 256;

/// A block together with the replacements found for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockChoices {
    pub block: PureBlock,
    pub replacements: Vec<Replacement>,
}

/// Non-overlapping blocks with at least one replacement, ordered by id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplacementSet {
    pub entries: Vec<BlockChoices>,
    /// Blocks that had replacements but lost to an overlapping block.
    pub dropped: Vec<BlockId>,
}

/// Replacement index chosen for each block; absent blocks keep their
/// original code.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariantPlan {
    pub choices: BTreeMap<BlockId, usize>,
}

impl VariantPlan {
    pub fn is_identity(&self) -> bool {
        self.choices.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Variant {
    pub plan: VariantPlan,
    pub module: Module,
    /// Canonical text.
    pub text: String,
    /// Hex SHA-256 of `text`.
    pub digest: String,
    /// Every substituted candidate was exhaustively or formally verified.
    pub verified: bool,
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn precedes(a: &PureBlock, b: &PureBlock) -> bool {
    (std::cmp::Reverse(a.size()), a.id) < (std::cmp::Reverse(b.size()), b.id)
}

/// Keeps a block iff it precedes every block it overlaps, larger blocks
/// first and then lower root index. Blocks without replacements take no part.
pub fn resolve_overlaps(mut all: Vec<BlockChoices>) -> ReplacementSet {
    all.retain(|c| !c.replacements.is_empty());
    let keep: Vec<bool> = all
        .iter()
        .map(|a| {
            all.iter()
                .all(|b| a.block.id == b.block.id || !blocks_overlap(&a.block, &b.block) || precedes(&a.block, &b.block))
        })
        .collect();
    let mut set = ReplacementSet::default();
    for (c, k) in all.into_iter().zip(keep) {
        if k {
            set.entries.push(c);
        } else {
            set.dropped.push(c.block.id);
        }
    }
    set.entries.sort_by_key(|c| c.block.id);
    set.dropped.sort();
    set
}

impl ReplacementSet {
    /// Number of non-identity plans, saturating at `u128::MAX`.
    pub fn combination_count(&self) -> u128 {
        let total = self
            .entries
            .iter()
            .try_fold(1u128, |acc, c| acc.checked_mul(c.replacements.len() as u128 + 1));
        total.map_or(u128::MAX, |t| t - 1)
    }

    /// Decodes a plan index in `1..=combination_count()`. Digits are mixed
    /// radix with the last block varying fastest; digit 0 keeps the original.
    pub fn plan_at(&self, mut index: u128) -> VariantPlan {
        let mut choices = BTreeMap::new();
        for c in self.entries.iter().rev() {
            let radix = c.replacements.len() as u128 + 1;
            let digit = (index % radix) as usize;
            index /= radix;
            if digit > 0 {
                choices.insert(c.block.id, digit - 1);
            }
        }
        VariantPlan { choices }
    }

    pub fn entry(&self, id: BlockId) -> Option<&BlockChoices> {
        self.entries.binary_search_by_key(&id, |c| c.block.id).ok().map(|i| &self.entries[i])
    }

    /// Module text for `plan`.
    pub fn apply(&self, m: &Module, plan: &VariantPlan) -> Result<Variant, EmitError> {
        let mut subs = Vec::with_capacity(plan.choices.len());
        let mut verified = true;
        for (&id, &choice) in &plan.choices {
            let c = self.entry(id).ok_or_else(|| EmitError::UnknownBlock(id.to_string()))?;
            let r = c.replacements.get(choice).ok_or_else(|| EmitError::UnknownBlock(format!("{id}#{choice}")))?;
            verified &= r.verdict.tier == crate::equivalence::Tier::Verified;
            subs.push((&c.block, &r.candidate.dag));
        }
        let module = substitute(m, &subs)?;
        let text = print_module(&module);
        Ok(Variant { plan: plan.clone(), digest: digest(&text), text, module, verified })
    }
}

/// Plans in index order. When there are more than `limit`, a seeded
/// uniform sample of `limit` distinct indices is taken instead and the
/// flag is set.
pub fn enumerate_combinations(set: &ReplacementSet, limit: usize, seed: u64) -> (Vec<VariantPlan>, u128, bool) {
    let total = set.combination_count();
    let indices = sample_indices(total, limit, seed);
    let truncated = (indices.len() as u128) < total;
    (indices.into_iter().map(|i| set.plan_at(i)).collect(), total, truncated)
}

/// Up to `limit` distinct values from `1..=total`, ascending.
pub fn sample_indices(total: u128, limit: usize, seed: u64) -> Vec<u128> {
    if total <= limit as u128 {
        return (1..=total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<u128> = if total <= usize::MAX as u128 && total <= 1 << 24 {
        rand::seq::index::sample(&mut rng, total as usize, limit).into_iter().map(|i| i as u128 + 1).collect()
    } else {
        let mut seen = HashSet::with_capacity(limit);
        while seen.len() < limit {
            seen.insert(rng.gen_range(1..=total));
        }
        seen.into_iter().collect()
    };
    out.sort_unstable();
    out
}

/// Drops variants whose text repeats an earlier one (or the original).
/// Returns how many were removed.
pub fn dedup_variants(original: &str, variants: &mut Vec<Variant>) -> usize {
    let before = variants.len();
    let mut seen: HashSet<String> = HashSet::from([digest(original)]);
    variants.retain(|v| seen.insert(v.digest.clone()));
    before - variants.len()
}
