//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code.
//!
//! Exit codes: 0 success, 2 alignment failure, 3 numeric failure, 64 usage,
//! 65 data format, 1 anything else. Machine-readable output always goes to
//! files; stdout carries a short human summary and logs go to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use regex::Regex;
use serde_json::Value;

use crate::checkpoint::{load_checkpoint, validate_pair};
use crate::delta::{extract_delta, DeltaAdapter, ExtractOptions};
use crate::error::{Error, Result};
use crate::evalkit::{read_jsonl, score_file, write_jsonl, NormalizeOptions, QAExample};
use crate::merge::{compose, check_scale, load_term, sweep, MergeRecipe, MergeTerm, SweepOptions, TermKind, DEFAULT_SCALE};
use crate::retrieval::{
    oracle_retrieve, render_prompt, retrieval_accuracy, Bm25Index, Bm25Params, Corpus, RetrievalRecord, TemplateId,
};
use crate::spectra::{
    check_tau, compress, param_report_with_total, param_sweep, spectrum, write_spectrum_csv, write_sweep_csv,
    CompressOptions, SvdConfig,
};
use crate::tensor::{DType, NamedTensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_ALIGNMENT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;

pub const THREADS_ENV: &str = "READAPT_THREADS";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotDiffable(_)
        | Error::ShapeMismatch { .. }
        | Error::MissingTensor(_)
        | Error::DigestMismatch { .. }
        | Error::UnresolvedTarget(_) => EXIT_ALIGNMENT,
        Error::ConvergenceFailure(_) | Error::AllZero | Error::DegenerateColumn { .. } => EXIT_NUMERIC,
        Error::InvalidArgument(_) | Error::ShardTooSmall { .. } => EXIT_USAGE,
        Error::Format(_)
        | Error::InvalidTensor { .. }
        | Error::ShardMissing(_)
        | Error::UnknownId(_)
        | Error::MissingGold(_)
        | Error::KeyMismatch(_)
        | Error::EmptyCorpus
        | Error::MissingContext(_) => EXIT_DATA,
        Error::Io { .. } => EXIT_OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "readapt", version, about = "Checkpoint arithmetic for instruction adapters")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Seed for randomized computations.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    /// JSON file of flag defaults: top-level keys for global flags, and an
    /// object per subcommand for its flags. Explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract the weight difference between an instruct and a base checkpoint.
    Diff(DiffArgs),
    /// Compress a dense adapter to low rank.
    Compress(CompressArgs),
    /// Write cumulative explained-variance curves per tensor.
    Spectrum(SpectrumArgs),
    /// Compose a checkpoint from a base and scaled adapters.
    Merge(MergeArgs),
    /// Compose a grid of checkpoints over adapter strengths.
    Sweep(SweepArgs),
    /// Score predictions with Rouge-L recall and exact match.
    Score(ScoreArgs),
    /// Build a BM25 index over a passage corpus.
    Index(IndexArgs),
    /// Retrieve passages for questions with BM25 or the oracle retriever.
    Retrieve(RetrieveArgs),
    /// Render QA prompts from the bundled templates.
    Prompt(PromptArgs),
}

#[derive(Debug, Args)]
struct ShardArg {
    /// Split the output into shards of at most this many bytes; the output
    /// path then names the shard index.
    #[arg(long)]
    max_shard_bytes: Option<usize>,
}

#[derive(Debug, Args)]
struct DiffArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    instruct: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Diff only tensors present in both checkpoints with equal shapes.
    #[arg(long)]
    skip_unmatched: bool,
    /// Storage dtype of the delta.
    #[arg(long, default_value = "F32")]
    dtype: DType,
    #[command(flatten)]
    shard: ShardArg,
}

#[derive(Debug, Args)]
struct SvdArgs {
    /// Matrices with min(m, n) at or below this use the exact dense SVD.
    #[arg(long, default_value_t = 1024)]
    dense_max_dim: usize,
    #[arg(long, default_value_t = 2)]
    power_iters: usize,
    #[arg(long, default_value_t = 10)]
    oversample: usize,
}

impl SvdArgs {
    fn config(&self, seed: u64) -> SvdConfig {
        SvdConfig {
            dense_max_dim: self.dense_max_dim,
            power_iters: self.power_iters,
            oversample: self.oversample,
            seed,
            ..SvdConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[arg(long)]
    delta: PathBuf,
    /// Explained-variance threshold in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    /// Parameter report path (default: next to the output).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Checkpoint whose element count is the 100% reference (default: the delta's).
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    min_dim: usize,
    /// Factor even when the factors are not smaller than the dense matrix.
    #[arg(long)]
    no_storage_guard: bool,
    #[command(flatten)]
    svd: SvdArgs,
    #[command(flatten)]
    shard: ShardArg,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long)]
    delta: PathBuf,
    /// Directory for one `<tensor>.csv` per selected tensor.
    #[arg(long)]
    out_dir: PathBuf,
    /// Regexes selecting tensor names (default: every 2-D tensor).
    #[arg(long, value_delimiter = ',')]
    layers: Vec<String>,
    /// Leading singular values computed by the randomized solver for large matrices.
    #[arg(long, default_value_t = 256)]
    max_rank: usize,
    /// Also write `sweep.csv` with the parameter percentage at these thresholds.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    #[command(flatten)]
    svd: SvdArgs,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// JSON recipe; replaces --base and the adapter flags.
    #[arg(long, conflicts_with_all = ["base", "knowledge", "re_adapter"])]
    recipe: Option<PathBuf>,
    #[arg(long, required_unless_present = "recipe")]
    base: Option<PathBuf>,
    /// Knowledge adapter (scaled by --alpha).
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dense-delta")]
    knowledge_kind: KindArg,
    /// Instruction adapter (scaled by --beta).
    #[arg(long = "re-adapter", alias = "delta")]
    re_adapter: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dense-delta")]
    re_adapter_kind: KindArg,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    beta: f64,
    #[arg(long)]
    out: PathBuf,
    /// Output dtype (default: each tensor keeps the base dtype).
    #[arg(long)]
    dtype: Option<DType>,
    #[arg(long)]
    verify_digests: bool,
    /// Permit scales outside [0, 1].
    #[arg(long)]
    allow_extrapolation: bool,
    #[command(flatten)]
    shard: ShardArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum KindArg {
    DenseDelta,
    Lore,
    Peft,
}

impl From<KindArg> for TermKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::DenseDelta => TermKind::DenseDelta,
            KindArg::Lore => TermKind::Lore,
            KindArg::Peft => TermKind::Peft,
        }
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dense-delta")]
    knowledge_kind: KindArg,
    #[arg(long = "re-adapter", alias = "delta")]
    re_adapter: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dense-delta")]
    re_adapter_kind: KindArg,
    /// Knowledge strengths (default: 0.5 with a knowledge adapter, else 0).
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Instruction strengths (default: 0.5 with an instruction adapter, else 0).
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    dtype: Option<DType>,
    #[arg(long)]
    verify_digests: bool,
    #[arg(long)]
    allow_extrapolation: bool,
    #[command(flatten)]
    shard: ShardArg,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// JSONL of {"id", "response"}.
    #[arg(long)]
    predictions: PathBuf,
    /// JSONL of {"id", "question", "answers", "passage_id"?}.
    #[arg(long)]
    references: PathBuf,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Per-example CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Decimal places of the percentages in the report.
    #[arg(long, default_value_t = 0)]
    decimals: u32,
    #[arg(long)]
    keep_case: bool,
    #[arg(long)]
    keep_punctuation: bool,
}

#[derive(Debug, Args)]
struct IndexArgs {
    /// JSONL of {"id", "text"}.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    /// BM25 index built by `index`.
    #[arg(long, required_unless_present = "oracle")]
    index: Option<PathBuf>,
    /// Return each question's gold passage instead of searching.
    #[arg(long, requires = "corpus", conflicts_with = "index")]
    oracle: bool,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSONL of QA examples.
    #[arg(long)]
    questions: PathBuf,
    #[arg(short, long, default_value_t = 1)]
    k: usize,
    /// JSONL of {"id", "retrieved", "scores"}.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PromptArgs {
    #[arg(long)]
    template: TemplateId,
    /// JSONL of QA examples; alternatively use --question.
    #[arg(long, required_unless_present = "question", conflicts_with = "question")]
    questions: Option<PathBuf>,
    #[arg(long)]
    question: Option<String>,
    #[arg(long, conflicts_with = "questions")]
    context: Option<String>,
    /// Corpus used to look up context passages.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Retrieval output whose top passage becomes the context.
    #[arg(long, requires = "corpus")]
    retrieved: Option<PathBuf>,
    /// Use each example's gold passage as context.
    #[arg(long, requires = "corpus", conflicts_with = "retrieved")]
    oracle: bool,
    /// JSONL of {"id", "template", "messages"}.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match apply_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_target(false)
        .try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_OTHER;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Expands `--config FILE` into flags placed before the user's own, so the
/// explicit ones take precedence.
fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let Value::Object(map) = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
    else {
        return Err(Error::format(format!("{}: expected a JSON object", path.display())));
    };
    let sub_pos = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map(|(i, _)| i);
    let mut global = Vec::new();
    let mut local = Vec::new();
    for (key, value) in &map {
        match value {
            Value::Object(sub) => {
                if sub_pos.is_some_and(|i| args[i] == key.as_str()) {
                    for (k, v) in sub {
                        push_flag(&mut local, k, v)?;
                    }
                }
            }
            v => push_flag(&mut global, key, v)?,
        }
    }
    let mut out = vec![args[0].clone()];
    out.extend(global);
    match sub_pos {
        Some(i) => {
            out.extend(args[1..=i].iter().cloned());
            out.extend(local);
            out.extend(args[i + 1..].iter().cloned());
        }
        None => out.extend(args[1..].iter().cloned()),
    }
    Ok(out)
}

const SUBCOMMANDS: [&str; 9] = [
    "diff", "compress", "spectrum", "merge", "sweep", "score", "index", "retrieve", "prompt",
];

fn push_flag(out: &mut Vec<OsString>, key: &str, value: &Value) -> Result<()> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::format(format!("config key `{key}`: unsupported value {other}"))),
    };
    match value {
        Value::Bool(true) => out.push(flag.into()),
        Value::Bool(false) | Value::Null => {}
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
            out.push(flag.into());
            out.push(parts.join(",").into());
        }
        v => {
            out.push(flag.into());
            out.push(scalar(v)?.into());
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Diff(a) => cmd_diff(a),
        Command::Compress(a) => cmd_compress(a, cli.seed),
        Command::Spectrum(a) => cmd_spectrum(a, cli.seed),
        Command::Merge(a) => cmd_merge(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Score(a) => cmd_score(a),
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Prompt(a) => cmd_prompt(a),
    }
}

fn cmd_diff(a: &DiffArgs) -> Result<()> {
    if !matches!(a.dtype, DType::F32 | DType::BF16) {
        return Err(Error::InvalidArgument("delta dtype must be F32 or BF16".into()));
    }
    let base = load_checkpoint(&a.base)?;
    let instruct = load_checkpoint(&a.instruct)?;
    let report = validate_pair(&base, &instruct);
    println!("{}", report.summary());
    let opts = ExtractOptions {
        skip_unmatched: a.skip_unmatched,
        storage_dtype: a.dtype,
        base_id: Some(a.base.display().to_string()),
        instruct_id: Some(a.instruct.display().to_string()),
    };
    let delta = extract_delta(&base, &instruct, &opts)?;
    delta.save(&a.out, a.shard.max_shard_bytes)?;
    println!("wrote {} delta tensors to {}", delta.len(), a.out.display());
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_compress(a: &CompressArgs, seed: u64) -> Result<()> {
    check_tau(a.tau)?;
    let delta = DeltaAdapter::load(&a.delta)?;
    let reference = match &a.reference {
        Some(p) => load_checkpoint(p)?.total_elements(),
        None => delta.total_elements(),
    };
    let opts = CompressOptions {
        tau: a.tau,
        min_dim: a.min_dim,
        storage_guard: !a.no_storage_guard,
        svd: a.svd.config(seed),
    };
    let lore = compress(&delta, &opts)?;
    lore.save(&a.out, a.shard.max_shard_bytes)?;
    let report = param_report_with_total(&lore, reference);
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report.json"));
    write_json(&report_path, &report)?;
    println!(
        "tau {}: {} factored, {} dense tensors, {} of {} parameters ({:.2}%)",
        report.tau, report.factored_tensors, report.dense_tensors, report.lore_params, report.reference_params,
        report.percent
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_stem_for(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn cmd_spectrum(a: &SpectrumArgs, seed: u64) -> Result<()> {
    let delta = DeltaAdapter::load(&a.delta)?;
    let patterns: Vec<Regex> = a
        .layers
        .iter()
        .map(|p| Regex::new(p).map_err(|e| Error::InvalidArgument(format!("bad --layers regex `{p}`: {e}"))))
        .collect::<Result<_>>()?;
    let cfg = a.svd.config(seed);
    let selected: Vec<&NamedTensor> = delta
        .deltas()
        .filter(|t| t.ndim() == 2)
        .filter(|t| patterns.is_empty() || patterns.iter().any(|p| p.is_match(t.name())))
        .collect();
    if selected.is_empty() {
        return Err(Error::InvalidArgument("no 2-D tensors match --layers".into()));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut written = 0;
    for t in selected {
        match spectrum(t, &cfg, a.max_rank) {
            Ok(s) => {
                write_spectrum_csv(a.out_dir.join(format!("{}.csv", file_stem_for(t.name()))), &s)?;
                written += 1;
            }
            Err(Error::AllZero) => log::warn!("`{}` is all zeros; no curve written", t.name()),
            Err(e) => return Err(e),
        }
    }
    println!("wrote {written} spectrum curves to {}", a.out_dir.display());
    if !a.sweep.is_empty() {
        let opts = CompressOptions {
            svd: cfg,
            ..CompressOptions::default()
        };
        let points = param_sweep(&delta, &a.sweep, &opts, delta.total_elements())?;
        write_sweep_csv(a.out_dir.join("sweep.csv"), &points)?;
        for p in &points {
            println!("tau {}: {:.2}% of parameters", p.tau, p.percent);
        }
    }
    Ok(())
}

fn cmd_merge(a: &MergeArgs) -> Result<()> {
    let recipe = match &a.recipe {
        Some(path) => {
            let mut r = MergeRecipe::from_file(path)?;
            r.dtype = a.dtype.or(r.dtype);
            r.verify_digests |= a.verify_digests;
            r.allow_extrapolation |= a.allow_extrapolation;
            r
        }
        None => {
            let mut terms = Vec::new();
            if let Some(p) = &a.knowledge {
                terms.push(MergeTerm {
                    path: p.clone(),
                    scale: a.alpha,
                    kind: a.knowledge_kind.into(),
                });
            }
            if let Some(p) = &a.re_adapter {
                terms.push(MergeTerm {
                    path: p.clone(),
                    scale: a.beta,
                    kind: a.re_adapter_kind.into(),
                });
            }
            MergeRecipe {
                base: a.base.clone().expect("clap requires --base without --recipe"),
                terms,
                dtype: a.dtype,
                verify_digests: a.verify_digests,
                allow_extrapolation: a.allow_extrapolation,
            }
        }
    };
    let omega = compose(&recipe)?;
    crate::checkpoint::save_checkpoint(&omega, &a.out, a.shard.max_shard_bytes)?;
    let scales: Vec<String> = recipe.terms.iter().map(|t| format!("{}", t.scale)).collect();
    println!(
        "wrote {} tensors to {} (scales [{}], digest {})",
        omega.len(),
        a.out.display(),
        scales.join(", "),
        omega.digest()
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let base = load_checkpoint(&a.base)?;
    let load = |path: &Option<PathBuf>, kind: KindArg| -> Result<Option<DeltaAdapter>> {
        path.as_ref()
            .map(|p| {
                load_term(
                    &MergeTerm {
                        path: p.clone(),
                        scale: 0.0,
                        kind: kind.into(),
                    },
                    &base,
                )
            })
            .transpose()
    };
    let knowledge = load(&a.knowledge, a.knowledge_kind)?;
    let re_adapter = load(&a.re_adapter, a.re_adapter_kind)?;
    let grid = |given: &[f64], present: bool| {
        if !given.is_empty() {
            given.to_vec()
        } else if present {
            vec![DEFAULT_SCALE]
        } else {
            vec![0.0]
        }
    };
    let alphas = grid(&a.alphas, knowledge.is_some());
    let betas = grid(&a.betas, re_adapter.is_some());
    for &s in alphas.iter().chain(&betas) {
        check_scale(s, a.allow_extrapolation)?;
    }
    let opts = SweepOptions {
        dtype: a.dtype,
        verify_digests: a.verify_digests,
        allow_extrapolation: a.allow_extrapolation,
        max_shard_bytes: a.shard.max_shard_bytes,
    };
    let entries = sweep(&base, knowledge.as_ref(), re_adapter.as_ref(), &alphas, &betas, &a.out_dir, &opts)?;
    println!("wrote {} checkpoints and manifest.csv to {}", entries.len(), a.out_dir.display());
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let opts = NormalizeOptions {
        lowercase: !a.keep_case,
        strip_punctuation: !a.keep_punctuation,
    };
    let report = score_file(&a.predictions, &a.references, opts)?;
    write_json(&a.out, &report.to_json(a.decimals))?;
    if let Some(csv) = &a.csv {
        report.write_csv(csv)?;
    }
    println!(
        "n {} (missing {}): R-L {} EM {}",
        report.n,
        report.missing,
        report.rouge_l_percent(a.decimals),
        report.exact_match_percent(a.decimals)
    );
    Ok(())
}

fn cmd_index(a: &IndexArgs) -> Result<()> {
    let corpus = Corpus::load_jsonl(&a.corpus)?;
    let index = Bm25Index::build(corpus.passages(), Bm25Params { k1: a.k1, b: a.b })?;
    index.save(&a.out)?;
    println!(
        "indexed {} passages ({} terms, avgdl {:.2}) into {}",
        index.doc_count(),
        index.vocabulary_len(),
        index.avgdl(),
        a.out.display()
    );
    Ok(())
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<()> {
    if a.k == 0 {
        return Err(Error::InvalidArgument("-k must be at least 1".into()));
    }
    let questions: Vec<QAExample> = read_jsonl(&a.questions)?;
    let records: Vec<RetrievalRecord> = if a.oracle {
        let corpus = Corpus::load_jsonl(a.corpus.as_ref().expect("clap requires --corpus"))?;
        questions
            .iter()
            .map(|q| {
                Ok(RetrievalRecord {
                    id: q.id.clone(),
                    retrieved: vec![oracle_retrieve(q, &corpus)?.id.clone()],
                    scores: vec![1.0],
                })
            })
            .collect::<Result<_>>()?
    } else {
        let index = Bm25Index::load(a.index.as_ref().expect("clap requires --index"))?;
        let texts: Vec<&str> = questions.iter().map(|q| q.question.as_str()).collect();
        index
            .query_batch(&texts, a.k)
            .into_iter()
            .zip(&questions)
            .map(|(hits, q)| RetrievalRecord {
                id: q.id.clone(),
                retrieved: hits.iter().map(|h| h.id.clone()).collect(),
                scores: hits.iter().map(|h| h.score).collect(),
            })
            .collect()
    };
    write_jsonl(&a.out, &records)?;
    println!("retrieved passages for {} questions into {}", records.len(), a.out.display());
    let gold: BTreeMap<String, String> = questions
        .iter()
        .filter_map(|q| q.gold_passage_id.clone().map(|g| (q.id.clone(), g)))
        .collect();
    if !gold.is_empty() && gold.len() == questions.len() {
        let results: BTreeMap<String, Vec<String>> =
            records.iter().map(|r| (r.id.clone(), r.retrieved.clone())).collect();
        println!("accuracy@{}: {:.4}", a.k, retrieval_accuracy(&results, &gold, a.k)?);
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct PromptRecord {
    id: String,
    template: TemplateId,
    messages: Vec<crate::retrieval::Message>,
}

fn cmd_prompt(a: &PromptArgs) -> Result<()> {
    let corpus = a.corpus.as_ref().map(Corpus::load_jsonl).transpose()?;
    let retrieved: BTreeMap<String, Vec<String>> = match &a.retrieved {
        Some(p) => read_jsonl::<RetrievalRecord>(p)?.into_iter().map(|r| (r.id, r.retrieved)).collect(),
        None => BTreeMap::new(),
    };
    let examples = match (&a.questions, &a.question) {
        (Some(p), _) => read_jsonl::<QAExample>(p)?,
        (None, Some(q)) => vec![QAExample {
            id: "0".into(),
            question: q.clone(),
            answers: Vec::new(),
            gold_passage_id: None,
        }],
        (None, None) => unreachable!("clap requires one of --questions/--question"),
    };
    let mut records = Vec::with_capacity(examples.len());
    for ex in &examples {
        let context: Option<String> = if let Some(c) = &a.context {
            Some(c.clone())
        } else if let Some(corpus) = &corpus {
            if a.oracle {
                Some(oracle_retrieve(ex, corpus)?.text.clone())
            } else {
                retrieved
                    .get(&ex.id)
                    .and_then(|ids| ids.first())
                    .map(|id| {
                        corpus
                            .get(id)
                            .map(|p| p.text.clone())
                            .ok_or_else(|| Error::format(format!("retrieved passage `{id}` is not in the corpus")))
                    })
                    .transpose()?
            }
        } else {
            None
        };
        let prompt = render_prompt(a.template, &ex.question, context.as_deref())?;
        records.push(PromptRecord {
            id: ex.id.clone(),
            template: a.template,
            messages: prompt.messages,
        });
    }
    write_jsonl(&a.out, &records)?;
    println!("rendered {} {} prompts into {}", records.len(), a.template, a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_64() {
        assert_eq!(run(["readapt", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["readapt", "diff", "--base", "x"]), EXIT_USAGE);
        assert_eq!(run(["readapt", "--help"]), EXIT_OK);
    }

    #[test]
    fn config_flags_precede_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"seed": 7, "compress": {"tau": 0.9, "no_storage_guard": true}, "diff": {"dtype": "BF16"}}"#)
            .unwrap();
        let args: Vec<OsString> = ["readapt", "--config", cfg.to_str().unwrap(), "compress", "--tau", "0.3"]
            .into_iter()
            .map(OsString::from)
            .collect();
        let out: Vec<String> = apply_config(args)
            .unwrap()
            .into_iter()
            .map(|s| s.into_string().unwrap())
            .collect();
        let cfg_s = cfg.to_str().unwrap();
        assert_eq!(
            out,
            ["readapt", "--seed", "7", "--config", cfg_s, "compress", "--no-storage-guard", "--tau", "0.9", "--tau", "0.3"]
        );
    }

    #[test]
    fn dtype_parsing() {
        assert_eq!("bf16".parse::<DType>().unwrap(), DType::BF16);
        assert_eq!("F32".parse::<DType>().unwrap(), DType::F32);
        assert_eq!("float16".parse::<DType>().unwrap(), DType::F16);
        assert!("int8".parse::<DType>().is_err());
    }
}
