use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crow_core::equivalence::{CheckMode, SolverConfig};
use crow_core::interp::{invoke, read_trace, write_trace, InterpConfig, Outcome};
use crow_core::metrics::{dt_dyn, dt_static, normalized_dt_dyn};
use crow_core::pipeline::{
    self, explore, generate, load_module, read_json, write_manifest, write_store, write_variants, DynamicConfig,
    PipelineError, ReplacementStore, RunConfig,
};
use crow_core::region::extract_module_blocks;
use crow_core::synth::Vocabulary;

mod exit {
    pub const INPUT: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const MISMATCH: u8 = 4;
    pub const TRAP: u8 = 5;
    pub const FUEL: u8 = 6;
}

/// Error carrying the process exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Failure {
        Failure { code, error: error.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Failure {
        let code = match &e {
            PipelineError::Parse { .. } | PipelineError::Invalid { .. } | PipelineError::Json { .. } => exit::INPUT,
            PipelineError::Io { .. } | PipelineError::Interp(_) => exit::INPUT,
            PipelineError::StoreMismatch(_) => exit::MISMATCH,
            PipelineError::Config(_) => exit::CONFIG,
        };
        Failure::new(code, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Failure {
        Failure { code: 1, error }
    }
}

type CliResult<T = ExitCode> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "crow", version, about = "Superdiversifier for WebAssembly text modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find pure blocks and synthesize equivalent replacements.
    Explore(ExploreArgs),
    /// Combine stored replacements into variant modules.
    Generate(GenerateArgs),
    /// Run an export and write its stack trace.
    Trace(TraceArgs),
    /// DTW distance between two modules or two traces, or all pairs in a directory.
    Measure(MeasureArgs),
    /// Explore, generate, trace and measure in one run.
    Diversify(DiversifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Checker {
    Exhaustive,
    Probable,
    Smt,
}

#[derive(Args, Clone)]
struct SynthOpts {
    /// Wall-clock budget for exploration.
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    /// Maximum operator count of a candidate.
    #[arg(long, default_value_t = 3)]
    max_size: usize,
    /// Candidate operators, e.g. `add,sub,shl,const`.
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long, value_enum, default_value = "probable")]
    checker: Checker,
    /// Solver command line; the query is written to its stdin.
    #[arg(long, env = "CROW_SOLVER")]
    solver_cmd: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    solver_timeout_secs: f64,
}

#[derive(Args, Clone)]
struct GenOpts {
    #[arg(long, default_value_t = pipeline_default_variants())]
    max_variants: usize,
    /// Pick the most statically distant plans from a larger sample.
    #[arg(long)]
    rank_by_diff: bool,
    /// Use only formally verified replacements.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Clone)]
struct CommonOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Clone)]
struct RunOpts {
    /// Export to execute.
    #[arg(long)]
    invoke: Option<String>,
    /// Comma-separated i32 arguments.
    #[arg(long, allow_hyphen_values = true, default_value = "")]
    args: String,
    /// Event budget.
    #[arg(long, default_value_t = crow_core::interp::DEFAULT_FUEL)]
    fuel: u64,
}

impl RunOpts {
    fn arg_values(&self) -> CliResult<Vec<i32>> {
        self.args
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<i32>().map_err(|_| config_error(format!("--args: `{s}` is not an i32"))))
            .collect()
    }
}

fn pipeline_default_variants() -> usize {
    crow_core::variantgen::DEFAULT_VARIANT_LIMIT
}

#[derive(Args)]
struct ExploreArgs {
    module: PathBuf,
    /// Store path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the extracted blocks as JSON (`-` for stdout).
    #[arg(long)]
    dump_blocks: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthOpts,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct GenerateArgs {
    module: PathBuf,
    store: PathBuf,
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    gen: GenOpts,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct TraceArgs {
    module: PathBuf,
    /// Trace path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureKind {
    Static,
    Dynamic,
}

#[derive(Args)]
struct MeasureArgs {
    kind: MeasureKind,
    /// Module or trace, or a directory to compare all pairs within.
    left: PathBuf,
    right: Option<PathBuf>,
    /// Divide dynamic cost by the left trace's length.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct DiversifyArgs {
    module: PathBuf,
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthOpts,
    #[command(flatten)]
    gen: GenOpts,
    #[command(flatten)]
    common: CommonOpts,
    #[command(flatten)]
    run: RunOpts,
}

fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure::new(exit::CONFIG, anyhow::anyhow!("{msg}"))
}

fn run_config(synth: Option<&SynthOpts>, gen: Option<&GenOpts>, common: &CommonOpts) -> CliResult<RunConfig> {
    let mut cfg = RunConfig { seed: common.seed, jobs: common.jobs, ..RunConfig::default() };
    if let Some(s) = synth {
        if !(s.timeout_secs.is_finite() && s.timeout_secs > 0.0) {
            return Err(config_error("--timeout-secs must be positive"));
        }
        cfg.timeout = Duration::from_secs_f64(s.timeout_secs);
        cfg.synthesis.max_size = s.max_size;
        if let Some(v) = &s.vocab {
            cfg.synthesis.vocabulary = Vocabulary::parse(v).map_err(config_error)?;
        }
        cfg.checker.mode = match s.checker {
            Checker::Exhaustive => CheckMode::ExhaustiveOnly,
            Checker::Probable => CheckMode::ProbableOk,
            Checker::Smt => CheckMode::Smt,
        };
        if let Some(cmd) = &s.solver_cmd {
            if !(s.solver_timeout_secs.is_finite() && s.solver_timeout_secs > 0.0) {
                return Err(config_error("--solver-timeout-secs must be positive"));
            }
            let timeout = Duration::from_secs_f64(s.solver_timeout_secs);
            cfg.checker.solver = Some(SolverConfig::from_command_line(cmd, timeout).ok_or_else(|| config_error("empty solver command"))?);
        }
    }
    if let Some(g) = gen {
        cfg.max_variants = g.max_variants;
        cfg.rank_by_diff = g.rank_by_diff;
        cfg.strict = g.strict;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "module".into(), |s| s.to_string_lossy().into_owned())
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            fs::write(p, text).with_context(|| format!("cannot write {}", p.display())).map_err(|e| Failure::new(exit::INPUT, e))
        }
        _ => {
            std::io::stdout().write_all(text.as_bytes()).context("stdout")?;
            Ok(())
        }
    }
}

fn cmd_explore(a: ExploreArgs) -> CliResult {
    let cfg = run_config(Some(&a.synth), None, &a.common)?;
    let m = load_module(&a.module)?;
    if let Some(dump) = &a.dump_blocks {
        let blocks = extract_module_blocks(&m, cfg.max_block_nodes);
        let text = serde_json::to_string_pretty(&blocks).context("serializing blocks")? + "\n";
        write_out(Some(dump), &text)?;
    }
    let store = explore(&m, &cfg)?;
    let s = &store.summary;
    match &a.output {
        Some(p) => write_store(p, &store)?,
        None => write_out(None, &(serde_json::to_string_pretty(&store).context("serializing store")? + "\n"))?,
    }
    if s.replacements == 0 {
        eprintln!("{}: {} blocks, no replacements found", a.module.display(), s.blocks);
    } else {
        eprintln!(
            "{}: {} blocks, {} with replacements, {} replacements ({} verified, {} probable){}",
            a.module.display(),
            s.blocks,
            s.blocks_with_replacements,
            s.replacements,
            s.verified,
            s.probable,
            if s.budget_exhausted { ", budget exhausted" } else { "" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let cfg = run_config(None, Some(&a.gen), &a.common)?;
    let m = load_module(&a.module)?;
    let store: ReplacementStore = read_json(&a.store).map_err(|e| Failure::new(exit::MISMATCH, e))?;
    let out = a.out_dir.clone().unwrap_or_else(|| PathBuf::from(format!("{}-variants", stem(&a.module))));
    let gen = generate(&m, &store, &cfg)?;
    let manifest = write_variants(&m, &a.module, &store, &gen, &out, &cfg, None)?;
    write_manifest(&out.join("manifest.json"), &manifest)?;
    eprintln!(
        "{} variants from {} combinations{} in {}",
        manifest.variants.len(),
        manifest.generation.combinations,
        if manifest.generation.truncated { " (sampled)" } else { "" },
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn outcome_code(o: &Outcome) -> ExitCode {
    match o {
        Outcome::Result(_) => ExitCode::SUCCESS,
        Outcome::Trap(_) => ExitCode::from(exit::TRAP),
        Outcome::FuelExhausted => ExitCode::from(exit::FUEL),
    }
}

fn cmd_trace(a: TraceArgs) -> CliResult {
    let m = load_module(&a.module)?;
    let entry = a.run.invoke.clone().unwrap_or_else(|| "main".into());
    let run = invoke(&m, &entry, &a.run.arg_values()?, InterpConfig { fuel: a.run.fuel, record: true })
        .map_err(|e| Failure::new(exit::INPUT, e))?;
    let mut buf = Vec::new();
    write_trace(&mut buf, &entry, &run.events, &run.outcome).context("formatting trace")?;
    write_out(a.output.as_deref(), &String::from_utf8(buf).context("trace is not UTF-8")?)?;
    eprintln!("{}", run.outcome);
    Ok(outcome_code(&run.outcome))
}

fn read_trace_file(p: &Path) -> CliResult<crow_core::interp::TraceFile> {
    let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())).map_err(|e| Failure::new(exit::INPUT, e))?;
    read_trace(&text).with_context(|| p.display().to_string()).map_err(|e| Failure::new(exit::INPUT, e))
}

fn measure_row(kind: MeasureKind, l: &Path, r: &Path, normalize: bool) -> CliResult<String> {
    let (metric, cost, norm) = match kind {
        MeasureKind::Static => {
            let (a, b) = (load_module(l)?, load_module(r)?);
            ("dt_static", dt_static(&a, &b), None)
        }
        MeasureKind::Dynamic => {
            let (a, b) = (read_trace_file(l)?, read_trace_file(r)?);
            let norm = if normalize {
                Some(normalized_dt_dyn(&a.events, &b.events).map_err(|e| Failure::new(exit::INPUT, e))?)
            } else {
                None
            };
            ("dt_dyn", dt_dyn(&a.events, &b.events), norm)
        }
    };
    let norm = norm.map_or_else(|| "-".to_string(), |n| format!("{n:.6}"));
    Ok(format!("{}\t{}\t{metric}\t{cost}\t{norm}\n", l.display(), r.display()))
}

fn cmd_measure(a: MeasureArgs) -> CliResult {
    let mut out = String::new();
    match &a.right {
        Some(r) => out.push_str(&measure_row(a.kind, &a.left, r, a.normalize)?),
        None => {
            let ext = match a.kind {
                MeasureKind::Static => "wat",
                MeasureKind::Dynamic => "trace",
            };
            let dir = fs::read_dir(&a.left)
                .with_context(|| format!("{} is not a readable directory", a.left.display()))
                .map_err(|e| Failure::new(exit::INPUT, e))?;
            let mut files: Vec<PathBuf> = dir
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == ext))
                .collect();
            files.sort();
            for i in 0..files.len() {
                for j in i + 1..files.len() {
                    out.push_str(&measure_row(a.kind, &files[i], &files[j], a.normalize)?);
                }
            }
        }
    }
    write_out(None, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_diversify(a: DiversifyArgs) -> CliResult {
    let mut cfg = run_config(Some(&a.synth), Some(&a.gen), &a.common)?;
    cfg.dynamic = DynamicConfig {
        entry: a.run.invoke.clone().unwrap_or_else(|| "main".into()),
        args: a.run.arg_values()?,
        fuel: a.run.fuel,
        required: a.run.invoke.is_some(),
    };
    let out = a.out_dir.clone().unwrap_or_else(|| PathBuf::from(format!("{}-variants", stem(&a.module))));
    let res = pipeline::diversify(&a.module, &out, &cfg)?;
    let m = &res.manifest;
    let mismatches = m.variants.iter().filter(|v| v.dynamic.as_ref().is_some_and(|d| !d.outcome_matches)).count();
    let static_only = m.variants.iter().filter(|v| v.dynamic.as_ref().is_some_and(|d| d.static_only)).count();
    eprintln!(
        "{} variants ({} with identical traces, {} outcome mismatches) in {}",
        m.variants.len(),
        static_only,
        mismatches,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Explore(a) => cmd_explore(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Measure(a) => cmd_measure(a),
        Command::Diversify(a) => cmd_diversify(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("crow: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
