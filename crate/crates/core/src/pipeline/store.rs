//! JSON documents written by the pipeline: the replacement store produced by
//! exploration and the manifest produced by generation.

use serde::{Deserialize, Serialize};

use crate::dag::Dag;
use crate::equivalence::{CheckMode, Tier};
use crate::interp::Outcome;
use crate::metrics::Cost;
use crate::region::{BlockId, InputOrigin};
use crate::synth::Replacement;
use crate::variantgen::VariantPlan;

pub const STORE_FORMAT: &str = "crow-store/1";
pub const MANIFEST_FORMAT: &str = "crow-manifest/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreSettings {
    pub max_size: usize,
    pub vocabulary: String,
    pub checker: CheckMode,
    pub seed: u64,
    pub max_candidates: u64,
    pub max_replacements: usize,
    pub max_block_nodes: usize,
    pub timeout_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub blocks: usize,
    pub blocks_with_replacements: usize,
    pub replacements: usize,
    pub verified: usize,
    pub probable: usize,
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredBlock {
    pub id: BlockId,
    pub dag: Dag,
    pub inputs: Vec<InputOrigin>,
    pub size: usize,
    pub oversized: bool,
    pub enumerated: u64,
    pub prefilter_survivors: u64,
    pub checked: u64,
    pub budget_exhausted: bool,
    pub capped: bool,
    pub replacements: Vec<Replacement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementStore {
    pub format: String,
    /// SHA-256 of the canonical text of the explored module.
    pub module_digest: String,
    pub settings: ExploreSettings,
    pub summary: ExploreSummary,
    pub blocks: Vec<StoredBlock>,
}

impl ReplacementStore {
    pub fn summarize(blocks: &[StoredBlock]) -> ExploreSummary {
        let all = blocks.iter().flat_map(|b| &b.replacements);
        ExploreSummary {
            blocks: blocks.len(),
            blocks_with_replacements: blocks.iter().filter(|b| !b.replacements.is_empty()).count(),
            replacements: all.clone().count(),
            verified: all.clone().filter(|r| r.tier() == Tier::Verified).count(),
            probable: all.filter(|r| r.tier() == Tier::Probable).count(),
            budget_exhausted: blocks.iter().any(|b| b.budget_exhausted),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginalInfo {
    pub file: String,
    pub digest: String,
    pub tokens: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationInfo {
    /// Blocks whose replacements take part in combination.
    pub blocks_used: Vec<BlockId>,
    /// Blocks with replacements that lost to a larger overlapping block.
    pub blocks_dropped: Vec<BlockId>,
    /// Number of non-original plans, in decimal (may exceed 64 bits).
    pub combinations: String,
    pub plans_applied: usize,
    pub truncated: bool,
    pub ranked_by_diff: bool,
    pub strict: bool,
    /// Plans whose text repeated an earlier variant or the original.
    pub duplicates_removed: usize,
    /// Plans whose instruction stream matched the original's after alignment.
    pub static_duplicates: usize,
    pub emit_failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicInfo {
    pub entry: String,
    pub args: Vec<i32>,
    pub fuel: u64,
    pub trace_file: String,
    pub outcome: Outcome,
    pub events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantDynamic {
    pub trace_file: String,
    pub outcome: Outcome,
    pub outcome_matches: bool,
    pub events: usize,
    pub dt_dyn: Cost,
    pub normalized: Option<f64>,
    /// Normalized distance at or above the significance threshold.
    pub significant: bool,
    /// Code differs but the stack trace aligns at zero cost.
    pub static_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub file: String,
    pub digest: String,
    pub plan: VariantPlan,
    /// False when any substituted candidate is only `Probable`.
    pub verified: bool,
    pub dt_static: Cost,
    pub tokens: usize,
    pub token_ratio: f64,
    /// Token ratio outside [0.5, 2.0].
    pub size_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<VariantDynamic>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub original: OriginalInfo,
    pub exploration: ExploreSummary,
    pub generation: GenerationInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicInfo>,
    pub variants: Vec<VariantEntry>,
}
