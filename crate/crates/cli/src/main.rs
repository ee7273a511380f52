//! Command-line front end: simulate traces, learn a causal graph, answer
//! effect queries with refutation tests, and run the whole pipeline.
//!
//! Exit codes are a stable contract: 0 success, 2 data error, 3 learning
//! failure, 4 refutation failure, 5 query error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use satcausal::dag::{default_sat_constraints, Dag, EdgeConstraints, GraphJson};
use satcausal::dataset::{self, clause_trace_schema, ColumnSchema, Dataset};
use satcausal::fitness::{evaluate_fit, FitReport};
use satcausal::learn::{cv_learn, LearnError, VoteTally};
use satcausal::query::{
    parse_query, parse_query_file, preset_queries, run_preset, run_query, validate, Answer,
    AnswerStatus, PresetAnswer, QueryError, QueryOptions,
};
use satcausal::synth::generate_trace_like;
use satcausal::FORMAT_VERSION;

use config::RunConfig;

const EXIT_DATA: u8 = 2;
const EXIT_LEARN: u8 = 3;
const EXIT_REFUTED: u8 = 4;
const EXIT_QUERY: u8 = 5;

#[derive(Debug)]
enum CliError {
    /// Unreadable or malformed inputs (exit 2).
    Data(String),
    /// Structure learning cannot proceed (exit 3).
    Learn(String),
    /// Bad query text or a query the graph/data cannot answer (exit 5).
    Query(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Learn(_) => EXIT_LEARN,
            CliError::Query(_) => EXIT_QUERY,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Learn(m) | CliError::Query(m) => m,
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Dataset(d) => CliError::Data(d.to_string()),
            other => CliError::Learn(other.to_string()),
        }
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        CliError::Query(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "satcausal",
    about = "Causal discovery and effect estimation for SAT-solver clause telemetry",
    version
)]
struct Cli {
    /// key=value configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (also settable via SATCAUSAL_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<String>,
    /// Base RNG seed; every output is a deterministic function of it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap worker threads for fold searches and refutation runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file of clause snapshots.
    #[arg(long)]
    data: PathBuf,
    /// JSON schema file; defaults to the ten-column clause-trace schema.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic clause trace with known ground truth.
    Simulate {
        /// Row count.
        #[arg(long)]
        n: usize,
    },
    /// Learn an averaged causal graph by k-fold hill climbing.
    Learn {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        /// "default-sat" or a JSON constraints file.
        #[arg(long)]
        constraints: Option<String>,
    },
    /// Answer a causal query (expression or preset) against a graph.
    Query {
        #[command(flatten)]
        data: DataArgs,
        /// Graph JSON produced by `learn`.
        #[arg(long)]
        graph: PathBuf,
        /// Query expression, e.g. "ATE(LBD, Utility, 2, 1)".
        #[arg(long, conflicts_with_all = ["preset", "file"])]
        expr: Option<String>,
        /// Preset name Q1..Q7, or "all".
        #[arg(long, conflicts_with = "file")]
        preset: Option<String>,
        /// Query file: one query per line, '#' comments.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Monte-Carlo runs per refutation test.
        #[arg(long)]
        runs: Option<usize>,
        /// Output file; defaults to answer.json in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the refutation tests for one query.
    Refute {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        expr: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated fit of a graph for one target column.
    Fitness {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "Utility")]
        target: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate (optionally), learn, answer all presets, and report fitness.
    Pipeline {
        /// Generate the data first: "n=200000" or a plain row count.
        #[arg(long, conflicts_with = "data")]
        simulate: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        constraints: Option<String>,
    },
    /// Render a graph JSON file as DOT.
    ExportDot {
        #[arg(long)]
        graph: PathBuf,
        /// Output file; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("satcausal: {e}");
            return ExitCode::from(EXIT_DATA);
        }
    };
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = Some(jobs);
    }
    if let Some(jobs) = cfg.jobs {
        // May fail if a pool already exists; the cap is best-effort.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    match run(cli.cmd, cfg) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("satcausal: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Cmd, mut cfg: RunConfig) -> Result<u8, CliError> {
    match cmd {
        Cmd::Simulate { n } => cmd_simulate(&cfg, n),
        Cmd::Learn {
            data,
            k,
            constraints,
        } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(c) = constraints {
                cfg.constraints = c;
            }
            cfg.data = Some(data.data.display().to_string());
            cmd_learn(&cfg, &data)
        }
        Cmd::Query {
            data,
            graph,
            expr,
            preset,
            file,
            runs,
            out,
        } => {
            if let Some(r) = runs {
                cfg.refutation_runs = r;
            }
            cfg.data = Some(data.data.display().to_string());
            let source = match (expr, preset, file) {
                (Some(e), None, None) => QuerySource::Expr(e),
                (None, Some(p), None) => QuerySource::Preset(p),
                (None, None, Some(f)) => QuerySource::File(f),
                _ => {
                    return Err(CliError::Query(
                        "exactly one of --expr, --preset, or --file required".into(),
                    ))
                }
            };
            cmd_query(&cfg, &data, &graph, source, out.as_deref())
        }
        Cmd::Refute {
            data,
            graph,
            expr,
            runs,
            out,
        } => {
            if let Some(r) = runs {
                cfg.refutation_runs = r;
            }
            cfg.data = Some(data.data.display().to_string());
            // A refute run is a query run that reports the same document;
            // the refutation block is the part the caller is after.
            cmd_query(&cfg, &data, &graph, QuerySource::Expr(expr), out.as_deref())
        }
        Cmd::Fitness {
            data,
            graph,
            target,
            k,
            out,
        } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            cfg.data = Some(data.data.display().to_string());
            cmd_fitness(&cfg, &data, &graph, &target, out.as_deref())
        }
        Cmd::Pipeline {
            simulate,
            data,
            schema,
            k,
            runs,
            constraints,
        } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(r) = runs {
                cfg.refutation_runs = r;
            }
            if let Some(c) = constraints {
                cfg.constraints = c;
            }
            if let Some(d) = &data {
                cfg.data = Some(d.display().to_string());
            }
            cmd_pipeline(
                &cfg,
                simulate.as_deref(),
                data.as_deref(),
                schema.as_deref(),
            )
        }
        Cmd::ExportDot { graph, out } => cmd_export_dot(&graph, out.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// Input loading
// ---------------------------------------------------------------------------

fn load_schema(path: Option<&Path>) -> Result<Vec<ColumnSchema>, CliError> {
    match path {
        None => Ok(clause_trace_schema()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("cannot read schema {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("malformed schema {}: {e}", p.display())))
        }
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset, CliError> {
    let schema = load_schema(args.schema.as_deref())?;
    dataset::load_csv(&args.data, &schema)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))
}

fn load_graph(path: &Path) -> Result<Dag, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read graph {}: {e}", path.display())))?;
    let doc: GraphJson = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("malformed graph {}: {e}", path.display())))?;
    Dag::from_json(&doc).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_constraints(spec: &str, schema: &[ColumnSchema]) -> Result<EdgeConstraints, CliError> {
    if spec == "default-sat" {
        return default_sat_constraints(schema)
            .map_err(|e| CliError::Learn(format!("default constraints: {e}")));
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::Data(format!("cannot read constraints {spec}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("malformed constraints {spec}: {e}")))
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Data(format!("serialization: {e}")))?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateDoc<'a> {
    format_version: u32,
    config: &'a RunConfig,
    n: usize,
    scm: &'a satcausal::Scm,
}

fn cmd_simulate(cfg: &RunConfig, n: usize) -> Result<u8, CliError> {
    let (data, scm) =
        generate_trace_like(n, cfg.seed).map_err(|e| CliError::Data(e.to_string()))?;
    let csv_path = cfg.out_path("traces.csv");
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cfg.out_dir)))?;
    dataset::write_csv(&data, &csv_path).map_err(|e| CliError::Data(e.to_string()))?;
    write_json(
        &cfg.out_path("scm.json"),
        &SimulateDoc {
            format_version: FORMAT_VERSION,
            config: cfg,
            n,
            scm: &scm,
        },
    )?;
    eprintln!("wrote {} rows to {}", n, csv_path.display());
    Ok(0)
}

#[derive(Serialize)]
struct GraphDoc<'a> {
    format_version: u32,
    config: &'a RunConfig,
    nodes: Vec<String>,
    edges: Vec<(String, String)>,
}

#[derive(Serialize)]
struct TallyDoc<'a> {
    format_version: u32,
    config: &'a RunConfig,
    tally: &'a VoteTally,
}

fn cmd_learn(cfg: &RunConfig, data_args: &DataArgs) -> Result<u8, CliError> {
    let data = load_data(data_args)?;
    let constraints = load_constraints(&cfg.constraints, data.schema())?;
    let (graph, tally) = cv_learn(&constraints, &data, cfg.k, cfg.seed)?;
    let json = graph.to_json();
    write_json(
        &cfg.out_path("graph.json"),
        &GraphDoc {
            format_version: FORMAT_VERSION,
            config: cfg,
            nodes: json.nodes,
            edges: json.edges,
        },
    )?;
    // DOT carries the effective config as a comment, like the JSON outputs.
    let dot = format!(
        "// satcausal learn: data={} k={} seed={} constraints={}\n{}",
        cfg.data.as_deref().unwrap_or("-"),
        cfg.k,
        cfg.seed,
        cfg.constraints,
        graph.to_dot()
    );
    std::fs::write(cfg.out_path("graph.dot"), dot)
        .map_err(|e| CliError::Data(format!("cannot write graph.dot: {e}")))?;
    write_json(
        &cfg.out_path("tally.json"),
        &TallyDoc {
            format_version: FORMAT_VERSION,
            config: cfg,
            tally: &tally,
        },
    )?;
    eprintln!("learned graph with {} edges", graph.edge_count());
    Ok(0)
}

#[derive(Serialize)]
struct AnswerDoc<'a> {
    format_version: u32,
    config: &'a RunConfig,
    answers: Vec<Answer>,
    presets: Vec<PresetAnswer>,
}

enum QuerySource {
    Expr(String),
    Preset(String),
    File(PathBuf),
}

fn cmd_query(
    cfg: &RunConfig,
    data_args: &DataArgs,
    graph_path: &Path,
    source: QuerySource,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let data = load_data(data_args)?;
    let graph = load_graph(graph_path)?;
    let opts = QueryOptions {
        refutation_runs: cfg.refutation_runs,
        seed: cfg.seed,
        with_refutations: true,
    };

    let mut answers = Vec::new();
    let mut presets = Vec::new();
    match source {
        QuerySource::Expr(text) => {
            let q = parse_query(&text)?;
            validate(&q, data.schema())?;
            answers.push(run_query(&q, &graph, &data, &opts)?);
        }
        QuerySource::File(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            for (i, q) in parse_query_file(&text)?.iter().enumerate() {
                validate(q, data.schema())?;
                let part_opts = QueryOptions {
                    seed: satcausal::substream(cfg.seed, i as u64),
                    ..opts
                };
                answers.push(run_query(q, &graph, &data, &part_opts)?);
            }
        }
        QuerySource::Preset(name) => {
            let all = preset_queries();
            let selected: Vec<_> = if name == "all" {
                all
            } else {
                let found = all.into_iter().find(|p| p.name == name);
                vec![found.ok_or_else(|| {
                    CliError::Query(format!("unknown preset {name}; use Q1..Q7 or all"))
                })?]
            };
            for p in selected {
                presets.push(run_preset(&p, &graph, &data, &opts)?);
            }
        }
    }

    let ok = answers.iter().all(|a| a.status == AnswerStatus::Ok)
        && presets.iter().all(|p| p.status == AnswerStatus::Ok);
    let doc = AnswerDoc {
        format_version: FORMAT_VERSION,
        config: cfg,
        answers,
        presets,
    };
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_path("answer.json"));
    write_json(&path, &doc)?;
    eprintln!("wrote {}", path.display());
    Ok(if ok { 0 } else { EXIT_REFUTED })
}

#[derive(Serialize)]
struct FitnessDoc<'a> {
    format_version: u32,
    config: &'a RunConfig,
    report: &'a FitReport,
}

fn cmd_fitness(
    cfg: &RunConfig,
    data_args: &DataArgs,
    graph_path: &Path,
    target: &str,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let data = load_data(data_args)?;
    let graph = load_graph(graph_path)?;
    let report = evaluate_fit(&graph, &data, cfg.k, target, cfg.seed)
        .map_err(|e| CliError::Query(e.to_string()))?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_path("fitness.json"));
    write_json(
        &path,
        &FitnessDoc {
            format_version: FORMAT_VERSION,
            config: cfg,
            report: &report,
        },
    )?;
    eprintln!("wrote {}", path.display());
    Ok(0)
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    format_version: u32,
    config: &'a RunConfig,
    data_source: String,
    n_rows: usize,
    graph: GraphJson,
    tally: VoteTally,
    presets: Vec<PresetAnswer>,
    fitness: FitReport,
    all_refutations_passed: bool,
    notes: Vec<String>,
}

fn parse_simulate_spec(spec: &str) -> Result<usize, CliError> {
    let digits = spec.strip_prefix("n=").unwrap_or(spec);
    digits
        .parse::<usize>()
        .map_err(|_| CliError::Data(format!("bad --simulate value {spec:?}; use n=COUNT")))
}

fn cmd_pipeline(
    cfg: &RunConfig,
    simulate: Option<&str>,
    data_path: Option<&Path>,
    schema_path: Option<&Path>,
) -> Result<u8, CliError> {
    let (data, data_source) = match (simulate, data_path) {
        (Some(spec), None) => {
            let n = parse_simulate_spec(spec)?;
            let (d, _) =
                generate_trace_like(n, cfg.seed).map_err(|e| CliError::Data(e.to_string()))?;
            (d, format!("simulated n={n} seed={}", cfg.seed))
        }
        (None, Some(path)) => {
            let args = DataArgs {
                data: path.to_path_buf(),
                schema: schema_path.map(Path::to_path_buf),
            };
            (load_data(&args)?, path.display().to_string())
        }
        _ => {
            return Err(CliError::Data(
                "pipeline needs exactly one of --simulate or --data".into(),
            ))
        }
    };

    let constraints = load_constraints(&cfg.constraints, data.schema())?;
    let (graph, tally) = cv_learn(&constraints, &data, cfg.k, cfg.seed)?;

    let opts = QueryOptions {
        refutation_runs: cfg.refutation_runs,
        seed: cfg.seed,
        with_refutations: true,
    };
    let mut presets = Vec::new();
    for p in preset_queries() {
        presets.push(run_preset(&p, &graph, &data, &opts)?);
    }
    let fitness = evaluate_fit(&graph, &data, cfg.k, "Utility", cfg.seed)
        .map_err(|e| CliError::Query(e.to_string()))?;

    let all_passed = presets.iter().all(|p| p.status == AnswerStatus::Ok);
    let notes = collect_notes(&presets);
    let report = PipelineReport {
        format_version: FORMAT_VERSION,
        config: cfg,
        data_source,
        n_rows: data.n_rows(),
        graph: graph.to_json(),
        tally,
        presets,
        fitness,
        all_refutations_passed: all_passed,
        notes,
    };
    write_json(&cfg.out_path("report.json"), &report)?;
    eprintln!("wrote {}", cfg.out_path("report.json").display());
    Ok(if all_passed { 0 } else { EXIT_REFUTED })
}

/// Informational flags for the report: refutation runs whose spread is
/// large next to the estimate itself, typical of small datasets.
fn collect_notes(presets: &[PresetAnswer]) -> Vec<String> {
    use satcausal::causal::RefutationKind;
    let mut notes = Vec::new();
    for p in presets {
        for a in &p.answers {
            for e in answer_estimates(a) {
                for r in &e.refutations {
                    if r.kind == RefutationKind::PlaceboTreatment {
                        continue; // its runs are meant to scatter around zero
                    }
                    if e.value != 0.0 && r.run_std > 0.5 * e.value.abs() {
                        notes.push(format!(
                            "{}: {:?} run spread {:.4} is wide next to estimate {:.4}",
                            p.name, r.kind, r.run_std, e.value
                        ));
                    }
                }
            }
        }
    }
    notes
}

fn answer_estimates(a: &Answer) -> Vec<&satcausal::EffectEstimate> {
    use satcausal::query::AnswerBody;
    match &a.body {
        AnswerBody::Single { estimate } => vec![estimate],
        AnswerBody::Comparison { left, right, .. } => vec![left, right],
        AnswerBody::Argmax {
            winner_estimate, ..
        } => vec![winner_estimate],
        AnswerBody::MultiContrast { contrasts, .. } => contrasts.iter().collect(),
    }
}

fn cmd_export_dot(graph_path: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let graph = load_graph(graph_path)?;
    let dot = graph.to_dot();
    match out {
        None => print!("{dot}"),
        Some(path) => std::fs::write(path, dot)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?,
    }
    Ok(0)
}
