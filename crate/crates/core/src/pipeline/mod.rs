//! Explore, generate and diversify, with parallel workers and canonical
//! merge order so output never depends on the worker count.

mod store;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

pub use store::*;

use crate::equivalence::{CheckMode, CheckerConfig, Tier};
use crate::interp::{invoke, write_trace, InterpConfig, InterpError, DEFAULT_FUEL};
use crate::metrics::{dt_dyn, dt_static, normalized_dt_dyn, tokenize, SIGNIFICANT_DT_DYN};
use crate::region::{extract_module_blocks, PureBlock, DEFAULT_MAX_BLOCK_NODES};
use crate::synth::{synthesize_replacements, SynthesisConfig, SynthesisReport};
use crate::variantgen::{
    dedup_variants, digest, resolve_overlaps, sample_indices, BlockChoices, ReplacementSet, Variant,
    DEFAULT_VARIANT_LIMIT,
};
use crate::wat::{parse_module, print_module, validate, Module, ParseError};

/// Token ratio bounds outside which a variant's size is flagged.
pub const SIZE_RATIO_BOUNDS: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: invalid module: {message}")]
    Invalid { path: String, message: String },
    #[error("store does not match module: {0}")]
    StoreMismatch(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Where and how to execute modules for dynamic measurements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DynamicConfig {
    pub entry: String,
    pub args: Vec<i32>,
    pub fuel: u64,
    /// When false a missing entry export skips the dynamic stage instead of
    /// failing.
    pub required: bool,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        DynamicConfig { entry: "main".into(), args: Vec::new(), fuel: DEFAULT_FUEL, required: false }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub synthesis: SynthesisConfig,
    pub checker: CheckerConfig,
    pub max_block_nodes: usize,
    pub max_variants: usize,
    pub rank_by_diff: bool,
    /// Drop `Probable` replacements before combination.
    pub strict: bool,
    pub jobs: usize,
    pub timeout: Duration,
    pub seed: u64,
    pub dynamic: DynamicConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synthesis: SynthesisConfig::default(),
            checker: CheckerConfig::default(),
            max_block_nodes: DEFAULT_MAX_BLOCK_NODES,
            max_variants: DEFAULT_VARIANT_LIMIT,
            rank_by_diff: false,
            strict: false,
            jobs: 1,
            timeout: Duration::from_secs(60),
            seed: 0,
            dynamic: DynamicConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |m: String| PipelineError::Config(m);
        self.synthesis.validate().map_err(|e| cfg(e.to_string()))?;
        self.checker.validate().map_err(|e| cfg(e.to_string()))?;
        if self.jobs == 0 {
            return Err(cfg("jobs must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(cfg("timeout must be positive".into()));
        }
        if self.max_variants == 0 {
            return Err(cfg("max-variants must be at least 1".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| PipelineError::Config(format!("cannot start {} workers: {e}", self.jobs)))
    }
}

/// Reads, parses and validates a module file.
pub fn load_module(path: &Path) -> Result<Module, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let p = path.display().to_string();
    let m = parse_module(&text).map_err(|source| PipelineError::Parse { path: p.clone(), source })?;
    if let Some(d) = validate(&m).first() {
        return Err(PipelineError::Invalid { path: p, message: d.to_string() });
    }
    Ok(m)
}

pub fn module_digest(m: &Module) -> String {
    digest(&print_module(m))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| PipelineError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.display().to_string(), source })
}

pub fn write_store(path: &Path, store: &ReplacementStore) -> Result<(), PipelineError> {
    write_json(path, store)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), PipelineError> {
    write_json(path, manifest)
}

fn stored(b: &PureBlock, r: SynthesisReport) -> StoredBlock {
    StoredBlock {
        id: b.id,
        dag: b.dag.clone(),
        inputs: b.inputs.clone(),
        size: b.size(),
        oversized: b.oversized,
        enumerated: r.enumerated,
        prefilter_survivors: r.prefilter_survivors,
        checked: r.checked,
        budget_exhausted: r.budget_exhausted,
        capped: r.capped,
        replacements: r.replacements,
    }
}

/// Synthesizes replacements for every pure block. Blocks are processed by
/// `jobs` workers against one shared deadline and merged in block order.
pub fn explore(m: &Module, cfg: &RunConfig) -> Result<ReplacementStore, PipelineError> {
    cfg.validate()?;
    let blocks = extract_module_blocks(m, cfg.max_block_nodes);
    let deadline = Instant::now() + cfg.timeout;
    let syn = SynthesisConfig { seed: cfg.seed, time_budget: None, deadline: Some(deadline), ..cfg.synthesis.clone() };
    let checker = cfg.checker.clone();
    let reports: Vec<SynthesisReport> = cfg.pool()?.install(|| {
        blocks
            .par_iter()
            .map(|b| {
                if Instant::now() >= deadline {
                    SynthesisReport { budget_exhausted: true, ..Default::default() }
                } else {
                    synthesize_replacements(b, &syn, &checker)
                }
            })
            .collect()
    });
    let blocks: Vec<StoredBlock> = blocks.iter().zip(reports).map(|(b, r)| stored(b, r)).collect();
    Ok(ReplacementStore {
        format: STORE_FORMAT.into(),
        module_digest: module_digest(m),
        settings: ExploreSettings {
            max_size: cfg.synthesis.max_size,
            vocabulary: cfg.synthesis.vocabulary.to_string(),
            checker: cfg.checker.mode,
            seed: cfg.seed,
            max_candidates: cfg.synthesis.max_candidates,
            max_replacements: cfg.synthesis.max_replacements,
            max_block_nodes: cfg.max_block_nodes,
            timeout_secs: cfg.timeout.as_secs_f64(),
        },
        summary: ReplacementStore::summarize(&blocks),
        blocks,
    })
}

/// Rebuilds the replacement set of `store` against `m`, checking that every
/// stored block still exists with the same dataflow.
pub fn replacement_set(m: &Module, store: &ReplacementStore, strict: bool) -> Result<ReplacementSet, PipelineError> {
    if store.format != STORE_FORMAT {
        return Err(PipelineError::StoreMismatch(format!("unknown store format {:?}", store.format)));
    }
    let digest = module_digest(m);
    if store.module_digest != digest {
        return Err(PipelineError::StoreMismatch(format!(
            "store was made for module {}, this module is {}",
            store.module_digest, digest
        )));
    }
    let blocks: BTreeMap<_, _> = extract_module_blocks(m, store.settings.max_block_nodes)
        .into_iter()
        .map(|b| (b.id, b))
        .collect();
    let mut choices = Vec::new();
    for sb in &store.blocks {
        let b = blocks.get(&sb.id).ok_or_else(|| PipelineError::StoreMismatch(format!("no block {}", sb.id)))?;
        if b.dag != sb.dag || b.inputs != sb.inputs {
            return Err(PipelineError::StoreMismatch(format!("block {} differs", sb.id)));
        }
        let replacements = sb
            .replacements
            .iter()
            .filter(|r| r.block == sb.id && r.tier() != Tier::Rejected && (!strict || r.tier() == Tier::Verified))
            .cloned()
            .collect();
        choices.push(BlockChoices { block: b.clone(), replacements });
    }
    Ok(resolve_overlaps(choices))
}

/// Variants in emission order, plus what happened on the way.
#[derive(Clone, Debug)]
pub struct Generation {
    pub variants: Vec<Variant>,
    pub info: GenerationInfo,
}

/// Combines, applies and deduplicates. With `rank_by_diff` a pool of up to
/// four times the limit is applied and the most statically distant plans
/// are kept.
pub fn generate(m: &Module, store: &ReplacementStore, cfg: &RunConfig) -> Result<Generation, PipelineError> {
    cfg.validate()?;
    let set = replacement_set(m, store, cfg.strict)?;
    let total = set.combination_count();
    let pool_size = if cfg.rank_by_diff { cfg.max_variants.saturating_mul(4) } else { cfg.max_variants };
    let indices = sample_indices(total, pool_size, cfg.seed);
    let original_text = print_module(m);
    let applied: Vec<(u128, Result<Variant, String>)> = cfg.pool()?.install(|| {
        indices
            .par_iter()
            .map(|&i| (i, set.apply(m, &set.plan_at(i)).map_err(|e| format!("plan {i}: {e}"))))
            .collect()
    });
    let mut info = GenerationInfo {
        blocks_used: set.entries.iter().map(|c| c.block.id).collect(),
        blocks_dropped: set.dropped.clone(),
        combinations: total.to_string(),
        ranked_by_diff: cfg.rank_by_diff,
        strict: cfg.strict,
        ..Default::default()
    };
    let mut variants = Vec::new();
    for (_, r) in applied {
        match r {
            Ok(v) => variants.push(v),
            Err(e) => info.emit_failures.push(e),
        }
    }
    info.plans_applied = variants.len() + info.emit_failures.len();
    info.duplicates_removed = dedup_variants(&original_text, &mut variants);
    let before = variants.len();
    let scored: Vec<(u64, Variant)> = cfg.pool()?.install(|| {
        variants.into_par_iter().map(|v| (dt_static(m, &v.module), v)).collect()
    });
    let mut scored: Vec<(u64, Variant)> = scored.into_iter().filter(|(d, _)| *d > 0).collect();
    info.static_duplicates = before - scored.len();
    if cfg.rank_by_diff {
        // stable: ties keep plan-index order
        scored.sort_by(|a, b| b.0.cmp(&a.0));
    }
    info.truncated = (indices.len() as u128) < total || scored.len() > cfg.max_variants;
    scored.truncate(cfg.max_variants);
    Ok(Generation { variants: scored.into_iter().map(|(_, v)| v).collect(), info })
}

fn variant_name(i: usize) -> String {
    format!("variant-{:04}", i + 1)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Writes the variants of `gen` into `out` and returns the manifest (not yet
/// written). Dynamic fields are filled when `dynamic` is given.
pub fn write_variants(
    m: &Module,
    original_path: &Path,
    store: &ReplacementStore,
    gen: &Generation,
    out: &Path,
    cfg: &RunConfig,
    dynamic: Option<&DynamicConfig>,
) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let original_tokens = tokenize(m).len();
    let mut entries = Vec::with_capacity(gen.variants.len());
    for (i, v) in gen.variants.iter().enumerate() {
        let file = format!("{}.wat", variant_name(i));
        let path = out.join(&file);
        fs::write(&path, &v.text).map_err(io_err(&path))?;
        let tokens = tokenize(&v.module).len();
        let ratio = if original_tokens == 0 { 1.0 } else { tokens as f64 / original_tokens as f64 };
        entries.push(VariantEntry {
            file,
            digest: v.digest.clone(),
            plan: v.plan.clone(),
            verified: v.verified,
            dt_static: dt_static(m, &v.module),
            tokens,
            token_ratio: ratio,
            size_flag: !(SIZE_RATIO_BOUNDS.0..=SIZE_RATIO_BOUNDS.1).contains(&ratio),
            dynamic: None,
        });
    }
    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        original: OriginalInfo { file: file_name(original_path), digest: module_digest(m), tokens: original_tokens },
        exploration: store.summary.clone(),
        generation: gen.info.clone(),
        dynamic: None,
        variants: entries,
    };
    if let Some(d) = dynamic {
        measure_dynamic(m, gen, out, cfg, d, &mut manifest)?;
    }
    Ok(manifest)
}

fn measure_dynamic(
    m: &Module,
    gen: &Generation,
    out: &Path,
    cfg: &RunConfig,
    d: &DynamicConfig,
    manifest: &mut Manifest,
) -> Result<(), PipelineError> {
    if m.export_index(&d.entry).is_none() && !d.required {
        return Ok(());
    }
    let icfg = InterpConfig { fuel: d.fuel, record: true };
    let base = invoke(m, &d.entry, &d.args, icfg)?;
    let trace_path = out.join("original.trace");
    write_trace_file(&trace_path, &d.entry, &base)?;
    manifest.dynamic = Some(DynamicInfo {
        entry: d.entry.clone(),
        args: d.args.clone(),
        fuel: d.fuel,
        trace_file: file_name(&trace_path),
        outcome: base.outcome,
        events: base.events.len(),
    });
    let results: Vec<Result<VariantDynamic, PipelineError>> = cfg.pool()?.install(|| {
        gen.variants
            .par_iter()
            .enumerate()
            .map(|(i, v)| {
                let run = invoke(&v.module, &d.entry, &d.args, icfg)?;
                let path = out.join(format!("{}.trace", variant_name(i)));
                write_trace_file(&path, &d.entry, &run)?;
                let cost = dt_dyn(&base.events, &run.events);
                let normalized = normalized_dt_dyn(&base.events, &run.events).ok();
                Ok(VariantDynamic {
                    trace_file: file_name(&path),
                    outcome: run.outcome,
                    outcome_matches: run.outcome == base.outcome,
                    events: run.events.len(),
                    dt_dyn: cost,
                    normalized,
                    significant: normalized.is_some_and(|n| n >= SIGNIFICANT_DT_DYN),
                    static_only: cost == 0,
                })
            })
            .collect()
    });
    for (entry, r) in manifest.variants.iter_mut().zip(results) {
        entry.dynamic = Some(r?);
    }
    Ok(())
}

fn write_trace_file(path: &Path, entry: &str, run: &crate::interp::Execution) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    write_trace(&mut buf, entry, &run.events, &run.outcome).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

/// Paths produced by a full run.
#[derive(Clone, Debug)]
pub struct DiversifyOutput {
    pub store_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

/// Explore, generate, trace and measure in one go.
pub fn diversify(input: &Path, out: &Path, cfg: &RunConfig) -> Result<DiversifyOutput, PipelineError> {
    let m = load_module(input)?;
    let store = explore(&m, cfg)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let store_path = out.join("store.json");
    write_store(&store_path, &store)?;
    let gen = generate(&m, &store, cfg)?;
    let manifest = write_variants(&m, input, &store, &gen, out, cfg, Some(&cfg.dynamic))?;
    let manifest_path = out.join("manifest.json");
    write_manifest(&manifest_path, &manifest)?;
    Ok(DiversifyOutput { store_path, manifest_path, manifest })
}

/// Checker mode accepted by generation for a given CLI choice.
pub fn checker_mode(name: &str) -> Option<CheckMode> {
    match name {
        "exhaustive" => Some(CheckMode::ExhaustiveOnly),
        "probable" => Some(CheckMode::ProbableOk),
        "smt" => Some(CheckMode::Smt),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUNNING: &str = r#"(module
      (func $f (param i32) (result i32)
        local.get 0 local.get 0 i32.const 2 i32.mul i32.add)
      (func $main (result i32) i32.const 10 call $f)
      (export "main" (func $main)))"#;

    #[test]
    fn running_example_end_to_end() {
        let m = parse_module(RUNNING).unwrap();
        let cfg = RunConfig::default();
        let store = explore(&m, &cfg).unwrap();
        assert!(store.summary.replacements > 0);
        let gen = generate(&m, &store, &cfg).unwrap();
        assert!(gen.variants.len() >= 2);
        assert!(gen.variants.iter().any(|v| v.text.contains("i32.shl")));
        for v in &gen.variants {
            let e = invoke(&v.module, "main", &[], InterpConfig::default()).unwrap();
            assert_eq!(e.outcome, crate::interp::Outcome::Result(Some(30)), "{}", v.text);
        }
    }

    #[test]
    fn store_mismatch_is_detected() {
        let m = parse_module(RUNNING).unwrap();
        let store = explore(&m, &RunConfig::default()).unwrap();
        let other = parse_module(&RUNNING.replace("i32.const 10", "i32.const 11")).unwrap();
        assert!(matches!(generate(&other, &store, &RunConfig::default()), Err(PipelineError::StoreMismatch(_))));
    }
}
