//! `piq`: command-line frontend for portrait-core.
//!
//! Exit codes: 0 on success, 1 when a check fails or the command line is
//! malformed, 2 when the input data violates an invariant, 3 on I/O or
//! format errors. Logging goes to stderr and is controlled by `PIQ_LOG`
//! (`error`, `warn`, `info` or `debug`; default `warn`).

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use portrait_core::allocator::plan_allocation;
use portrait_core::dedup::{self, GroupAssignment, PairSearch, DEFAULT_THRESHOLD};
use portrait_core::embedding::{read_embeddings, write_embeddings};
use portrait_core::evaluate::{evaluate, EvaluationInput};
use portrait_core::io::{read_annotations, read_predictions, read_split, write_annotations, write_predictions, write_split};
use portrait_core::losses::{run_loss_check, LossKind, GRADIENT_TOLERANCE};
use portrait_core::metrics::{lts, LabelHistogram};
use portrait_core::sampler::{BatchSampler, SamplerConfig, Strategy};
use portrait_core::schema::{SchemaError, Subset, Task, TaskSchema};
use portrait_core::synth::{gen_embeddings, gen_predictions, CountProfile, SynthSpec};

#[derive(Parser)]
#[command(name = "piq", version, about = "Portrait interpretation evaluation toolkit")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores). Results do
    /// not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the evaluation report from annotations, predictions and embeddings.
    Evaluate(EvaluateArgs),
    /// Long-tail score of a label histogram.
    Lts(LtsArgs),
    /// Perceptual-hash images and group near-duplicates.
    Phash(PhashArgs),
    /// Print the feature-space allocation for a given width.
    Plan(PlanArgs),
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Compare analytic loss gradients with finite differences.
    Losscheck(LosscheckArgs),
    /// Emit training batches as JSON lines.
    Sample(SampleArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    /// Task schema JSON (default: built-in schema).
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// One embedding file covering query and gallery images; rows are
    /// assigned by the split file.
    #[arg(long, conflicts_with_all = ["query", "gallery"], required_unless_present_all = ["query", "gallery"])]
    embeddings: Option<PathBuf>,
    #[arg(long, requires = "gallery")]
    query: Option<PathBuf>,
    #[arg(long, requires = "query")]
    gallery: Option<PathBuf>,
    /// Near-duplicate groups JSON from `piq phash`.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Report destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of per-identity retrieval scores.
    #[arg(long)]
    per_id: Option<PathBuf>,
}

#[derive(Args)]
struct LtsArgs {
    /// CSV with one count per row (last column); a header row is allowed.
    #[arg(long, conflicts_with = "annotations", required_unless_present = "annotations")]
    counts: Option<PathBuf>,
    /// Annotation CSV to build the histogram from, together with `--task`.
    #[arg(long, requires = "task")]
    annotations: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Coverage fraction in (0, 1).
    #[arg(long)]
    k: f64,
}

#[derive(Args)]
struct PhashArgs {
    /// Directory of PNG/JPEG images.
    #[arg(long, conflicts_with = "hashes", required_unless_present = "hashes")]
    dir: Option<PathBuf>,
    /// CSV of precomputed hashes (`image_id,hash_hex`).
    #[arg(long)]
    hashes: Option<PathBuf>,
    /// Largest Hamming distance that links two images.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u32,
    /// Use the banded prefilter instead of comparing every pair.
    #[arg(long)]
    banded: bool,
    /// Write the computed hashes here.
    #[arg(long)]
    write_hashes: Option<PathBuf>,
    /// Groups destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    dims: usize,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    residual_weight: Option<u64>,
    #[arg(long)]
    shared_weight: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    num_ids: usize,
    /// Explicit per-identity sample counts, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["head", "exponent"])]
    counts: Option<Vec<usize>>,
    /// Sample count of the largest identity in the long-tail profile.
    #[arg(long, default_value_t = 12)]
    head: usize,
    /// Long-tail exponent.
    #[arg(long, default_value_t = 0.5)]
    exponent: f64,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Minimum `1 − cos` between identity centroids.
    #[arg(long, default_value_t = 0.5)]
    sigma_between: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_within: f64,
    #[arg(long, default_value_t = 10)]
    num_unidentified: usize,
    #[arg(long, default_value_t = 0.5)]
    test_fraction: f64,
    #[arg(long, default_value_t = 1)]
    queries_per_id: usize,
    /// Probability that a predicted label is replaced by a random one.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct LosscheckArgs {
    /// One of br, triplet, ce, bce, uncertainty.
    #[arg(long)]
    loss: LossKind,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// One of random, pk, shuffle_mix.
    #[arg(long)]
    strategy: Strategy,
    #[arg(long)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
}

/// Why a command failed, mapped onto the exit-code contract.
enum Failure {
    Check(anyhow::Error),
    Validation(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Check(e) | Failure::Validation(e) | Failure::Io(e) => e,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Io(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn load_schema(path: Option<&Path>) -> Result<TaskSchema, Failure> {
    let Some(path) = path else {
        return Ok(TaskSchema::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TaskSchema::load(&text).map_err(|e| {
        let e = anyhow::Error::new(e).context(format!("schema {}", path.display()));
        match e.downcast_ref::<SchemaError>() {
            Some(SchemaError::Parse(_)) => Failure::Io(e),
            _ => Failure::Validation(e),
        }
    })
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_groups(path: Option<&Path>) -> anyhow::Result<Option<GroupAssignment>> {
    let Some(path) = path else {
        warn!("no groups file given; evaluating without near-duplicate exclusion");
        return Ok(None);
    };
    if !path.exists() {
        warn!("groups file {} not found; evaluating without near-duplicate exclusion", path.display());
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let groups = GroupAssignment::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    info!("{} images in {} groups", groups.groups.len(), groups.num_groups());
    Ok(Some(groups))
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let schema = load_schema(args.schema.as_deref())?;
    let annotations = read_annotations(&args.annotations)?;
    let split = read_split(&args.split)?;
    let predictions = read_predictions(&args.predictions)?;
    let (query, gallery) = match (&args.embeddings, &args.query, &args.gallery) {
        (Some(all), _, _) => {
            let all = read_embeddings(all, None).with_context(|| format!("reading {}", all.display()))?;
            let pick = |subset| all.select(|id| split.subset_of(id) == Some(subset));
            (pick(Subset::Query), pick(Subset::Gallery))
        }
        (None, Some(q), Some(g)) => (
            read_embeddings(q, None).with_context(|| format!("reading {}", q.display()))?,
            read_embeddings(g, None).with_context(|| format!("reading {}", g.display()))?,
        ),
        _ => return Err(Failure::Io(anyhow!("give --embeddings or both --query and --gallery"))),
    };
    info!("{} query and {} gallery embeddings", query.len(), gallery.len());
    let groups = read_groups(args.groups.as_deref())?;

    let result = evaluate(EvaluationInput {
        schema: &schema,
        annotations: &annotations,
        split: &split,
        predictions: &predictions,
        query: &query,
        gallery: &gallery,
        groups: groups.as_ref(),
    });
    let eval = match result {
        Ok(eval) => eval,
        Err(portrait_core::evaluate::EvaluateError::InvalidAnnotations(report)) => {
            for v in &report.violations {
                eprintln!("{v}");
            }
            return Err(validation(anyhow!("{} annotation violation(s)", report.violations.len())));
        }
        Err(e) if e.is_validation() => return Err(validation(e)),
        Err(e) => return Err(Failure::Io(e.into())),
    };

    emit(args.out.as_deref(), &eval.report.to_json())?;
    if let Some(path) = &args.per_id {
        write_per_id(path, &eval.retrieval)?;
    }
    Ok(())
}

fn write_per_id(path: &Path, summary: &portrait_core::metrics::RetrievalSummary) -> anyhow::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "person_id,queries_used,queries_dropped,map,rank1,rank5")?;
    for id in &summary.per_id {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            id.person_id, id.queries_used, id.queries_dropped, id.map, id.rank1, id.rank5
        )?;
    }
    out.flush()?;
    Ok(())
}

fn read_counts(path: &Path) -> anyhow::Result<Vec<u64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut counts = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let Some(cell) = row.iter().next_back().filter(|c| !c.is_empty()) else {
            continue;
        };
        match cell.parse::<u64>() {
            Ok(c) => counts.push(c),
            Err(_) if i == 0 => continue,
            Err(_) => bail!("{}, row {}: `{cell}` is not a count", path.display(), i + 1),
        }
    }
    Ok(counts)
}

fn cmd_lts(args: LtsArgs) -> CmdResult {
    let counts = match (&args.counts, &args.annotations) {
        (Some(path), _) => read_counts(path)?,
        (None, Some(path)) => {
            let schema = load_schema(args.schema.as_deref())?;
            let name = args.task.as_deref().unwrap_or_default();
            let task = Task::from_name(name).ok_or_else(|| anyhow!("unknown task `{name}`"))?;
            let mut counts = vec![0u64; schema.cardinality(task)];
            for rec in read_annotations(path)? {
                for &label in rec.label_set(task) {
                    let slot = counts
                        .get_mut(label)
                        .ok_or_else(|| validation(anyhow!("{}: {task} label {label} out of range", rec.image_id)))?;
                    *slot += 1;
                }
            }
            counts
        }
        (None, None) => return Err(Failure::Io(anyhow!("give --counts or --annotations"))),
    };
    let value = lts(&LabelHistogram::new(counts), args.k).map_err(validation)?;
    println!("{value:?}");
    Ok(())
}

fn cmd_phash(args: PhashArgs) -> CmdResult {
    let hashes = match (&args.dir, &args.hashes) {
        (Some(dir), _) => dedup::hash_directory(dir).with_context(|| format!("hashing {}", dir.display()))?,
        (None, Some(csv)) => dedup::read_hash_csv(csv).with_context(|| format!("reading {}", csv.display()))?,
        (None, None) => return Err(Failure::Io(anyhow!("give --dir or --hashes"))),
    };
    info!("{} hashes", hashes.len());
    if let Some(path) = &args.write_hashes {
        dedup::write_hash_csv(path, &hashes).with_context(|| format!("writing {}", path.display()))?;
    }
    let search = if args.banded { PairSearch::Banded } else { PairSearch::Pairwise };
    let groups = dedup::group_with(&hashes, args.threshold, search).map_err(validation)?;
    emit(args.out.as_deref(), &groups.to_json())?;
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> CmdResult {
    let schema = load_schema(args.schema.as_deref())?;
    let alloc = plan_allocation(args.dims, &schema, args.residual_weight, args.shared_weight).map_err(validation)?;
    emit(None, &alloc.to_json())?;
    Ok(())
}

fn cmd_gen(args: GenArgs) -> CmdResult {
    let schema = load_schema(args.schema.as_deref())?;
    let counts = match args.counts {
        Some(c) => CountProfile::Explicit(c),
        None => CountProfile::LongTail {
            head: args.head,
            exponent: args.exponent,
        },
    };
    let spec = SynthSpec {
        num_ids: args.num_ids,
        counts,
        dim: args.dim,
        sigma_between: args.sigma_between,
        sigma_within: args.sigma_within,
        seed: args.seed,
        num_unidentified: args.num_unidentified,
        test_fraction: args.test_fraction,
        queries_per_id: args.queries_per_id,
    };
    let data = gen_embeddings(&spec, &schema).map_err(validation)?;
    let predictions = gen_predictions(&data.annotations, &schema, args.label_noise, args.seed);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_annotations(&args.out.join("annotations.csv"), &data.annotations)?;
    write_split(&args.out.join("split.csv"), &data.split)?;
    write_predictions(&args.out.join("predictions.csv"), &predictions)?;
    write_embeddings(&args.out.join("embeddings.piqe"), &data.embeddings).context("writing embeddings")?;
    info!(
        "wrote {} samples of {} identities to {}",
        data.annotations.len(),
        spec.num_ids,
        args.out.display()
    );
    Ok(())
}

fn cmd_losscheck(args: LosscheckArgs) -> CmdResult {
    let err = run_loss_check(args.loss, args.n, args.d, args.seed, args.eps).map_err(validation)?;
    let pass = err < GRADIENT_TOLERANCE;
    println!(
        "loss={} n={} d={} seed={} max_rel_error={err:.3e} {}",
        args.loss,
        args.n,
        args.d,
        args.seed,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Check(anyhow!("relative gradient error {err:.3e} exceeds {GRADIENT_TOLERANCE:e}")))
    }
}

#[derive(Serialize)]
struct BatchLine<'a> {
    epoch: usize,
    batch: usize,
    indices: &'a [usize],
}

fn cmd_sample(args: SampleArgs) -> CmdResult {
    let annotations = read_annotations(&args.annotations)?;
    let cfg = SamplerConfig {
        strategy: args.strategy,
        batch_size: args.batch_size,
        p: args.p,
        k: args.k,
        seed: args.seed,
    };
    let mut sampler = BatchSampler::new(&annotations, cfg).map_err(validation)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for epoch in 0..args.epochs {
        for (batch, spec) in sampler.next_epoch().iter().enumerate() {
            let line = BatchLine {
                epoch,
                batch,
                indices: &spec.indices,
            };
            writeln!(out, "{}", serde_json::to_string(&line)?).map_err(anyhow::Error::from)?;
        }
    }
    out.flush().map_err(anyhow::Error::from)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Check(anyhow!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Lts(a) => cmd_lts(a),
        Command::Phash(a) => cmd_phash(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Losscheck(a) => cmd_losscheck(a),
        Command::Sample(a) => cmd_sample(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PIQ_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
