use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use querygen_core::coverage::{aggregate_coverage, facet_csv, profile_query, CoverageTargets};
use querygen_core::evaluation::{
    compare_routing, route, summarize, summary_table, PredictionMatrix,
};
use querygen_core::mechgen::{generate_mechanical, MechConfig};
use querygen_core::pipeline::{
    self, generate_candidates, label_records, open_backend, run_pipeline, screen_records,
    BatchStats, Manifest, PipelineConfig, PipelineError, RunOptions, EXAMPLES_KIND, RECORDS_KIND,
    SUBSCHEMAS_KIND,
};
use querygen_core::record::{read_jsonl, write_jsonl, QueryRecord};
use querygen_core::schema::{
    infer_foreign_keys, ingest_ddl, profile_columns, CsvDirSampler, FkInferenceConfig,
    ProfileConfig,
};
use querygen_core::subschema::{build_join_graph, enumerate_with_policy, SubschemaPolicy};
use querygen_core::tpch::{write_tbl_files, TpchScale};
use querygen_core::validate::Deduplicator;
use querygen_core::{coverage::CoverageReport, pipeline::report, SchemaCatalog, Subschema};

#[derive(Parser)]
#[command(
    name = "querygen",
    version,
    about = "Schema-driven SQL workload generation"
)]
struct Cli {
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest DDL, infer foreign keys and profile columns into a catalog JSON.
    Preprocess {
        #[arg(long)]
        ddl: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip foreign-key inference.
        #[arg(long)]
        no_infer: bool,
        /// Directory of `<table>.tbl` or `<table>.csv` files to sample values from.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "schema")]
        name: String,
    },
    /// Enumerate connected subschemas of a catalog's join graph.
    Subschemas {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_tables: usize,
        #[arg(long)]
        max_tables: Option<usize>,
    },
    /// Generate mechanical queries for every subschema.
    GenMech {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        subschemas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        per_subschema: usize,
        /// Pipeline config whose `mechanical.config` section to use.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prompt the configured backend and extract candidate queries.
    GenLlm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        subschemas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the seed examples shown in prompts.
        #[arg(long)]
        examples_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        batch: u32,
    },
    /// Validate and deduplicate query records.
    Validate {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Subschemas to check table usage against.
        #[arg(long)]
        subschemas: Option<PathBuf>,
        /// Treat queries differing only in literals as distinct.
        #[arg(long)]
        keep_literals: bool,
    },
    /// Coverage report over the accepted records of a file.
    Coverage {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        setting: String,
    },
    /// Execute records on the engines of a config and attach runtime labels.
    Execute {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Q-error summary of a predictions file, optionally compared with a baseline.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the whole pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse stages a previous run with the same config completed.
        #[arg(long)]
        resume: bool,
    },
    /// Tables from a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportKind::Facets)]
        kind: ReportKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a small TPC-H dataset as pipe-delimited `.tbl` files.
    GenTpch {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    /// Complexity facet statistics per setting.
    Facets,
    /// Clause presence per setting.
    Clauses,
    /// Runtime buckets per setting and engine.
    Buckets,
    /// The run manifest's batch counts.
    Batches,
}

struct Failure {
    code: u8,
    stage: String,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Failure {
            code: 2,
            stage: "config".into(),
            message: message.to_string(),
        }
    }

    fn stage(stage: &str, message: impl ToString) -> Self {
        Failure {
            code: 1,
            stage: stage.into(),
            message: message.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = e.exit_code() as u8;
        let stage = match &e {
            PipelineError::Config(_) => "config".to_string(),
            PipelineError::Stage { stage, .. } => stage.clone(),
        };
        Failure {
            code,
            stage,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if cli.json_errors {
                let body = serde_json::json!({ "error": { "code": f.code, "stage": f.stage, "message": f.message } });
                eprintln!("{body}");
            } else {
                eprintln!("error ({}): {}", f.stage, f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Preprocess {
            ddl,
            out,
            no_infer,
            data_dir,
            name,
        } => preprocess(&ddl, &out, no_infer, data_dir.as_deref(), name),
        Command::Subschemas {
            catalog,
            out,
            min_tables,
            max_tables,
        } => subschemas(&catalog, &out, min_tables, max_tables),
        Command::GenMech {
            catalog,
            subschemas,
            out,
            per_subschema,
            config,
            seed,
        } => gen_mech(
            &catalog,
            &subschemas,
            &out,
            per_subschema,
            config.as_deref(),
            seed,
        ),
        Command::GenLlm {
            config,
            catalog,
            subschemas,
            out,
            examples_out,
            seed,
            batch,
        } => gen_llm(
            &config,
            &catalog,
            &subschemas,
            &out,
            examples_out.as_deref(),
            seed,
            batch,
        ),
        Command::Validate {
            catalog,
            input,
            out,
            subschemas,
            keep_literals,
        } => validate(&catalog, &input, &out, subschemas.as_deref(), keep_literals),
        Command::Coverage {
            catalog,
            input,
            out,
            csv,
            setting,
        } => coverage(&catalog, &input, &out, csv.as_deref(), &setting),
        Command::Execute {
            config,
            catalog,
            input,
            out,
        } => execute(&config, &catalog, &input, &out),
        Command::Evaluate {
            predictions,
            baseline,
            json,
        } => evaluate(&predictions, baseline.as_deref(), json),
        Command::Run {
            config,
            seed,
            out,
            resume,
        } => run(&config, seed, out, resume),
        Command::Report { run, kind, out } => report_cmd(&run, kind, out.as_deref()),
        Command::GenTpch { out, scale, seed } => gen_tpch(&out, scale, seed),
    }
}

fn read(path: &Path, stage: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::stage(stage, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str, stage: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::stage(stage, e))?;
    }
    fs::write(path, text).map_err(|e| Failure::stage(stage, format!("{}: {e}", path.display())))
}

fn load_catalog(path: &Path) -> Result<SchemaCatalog, Failure> {
    SchemaCatalog::from_json(&read(path, "catalog")?).map_err(|e| Failure::stage("catalog", e))
}

fn load_subschemas(path: &Path) -> Result<Vec<Subschema>, Failure> {
    read_jsonl(path, SUBSCHEMAS_KIND).map_err(|e| Failure::stage("subschemas", e))
}

fn load_records(path: &Path) -> Result<Vec<QueryRecord>, Failure> {
    read_jsonl(path, RECORDS_KIND).map_err(|e| Failure::stage("records", e))
}

fn save_records(path: &Path, records: &[QueryRecord], stage: &str) -> Outcome {
    write_jsonl(path, RECORDS_KIND, records).map_err(|e| Failure::stage(stage, e))
}

/// A config with relative paths resolved against its own directory.
fn load_config(path: &Path) -> Result<PipelineConfig, Failure> {
    let config = PipelineConfig::load(path)?;
    Ok(config.resolved(path.parent().unwrap_or(Path::new("."))))
}

fn preprocess(
    ddl: &Path,
    out: &Path,
    no_infer: bool,
    data_dir: Option<&Path>,
    name: String,
) -> Outcome {
    const STAGE: &str = "preprocess";
    let mut catalog = ingest_ddl(&read(ddl, STAGE)?).map_err(|e| Failure::stage(STAGE, e))?;
    catalog.name = name;
    let mut advisories = 0;
    if !no_infer {
        let (inferred, notes) = infer_foreign_keys(&catalog, &FkInferenceConfig::default());
        catalog = inferred;
        advisories = notes.len();
    }
    let mut warnings = 0;
    if let Some(dir) = data_dir {
        let mut sampler = CsvDirSampler::new(dir, &catalog);
        let (profiled, w) = profile_columns(&catalog, &mut sampler, &ProfileConfig::default());
        catalog = profiled;
        warnings = w.len();
    }
    write(out, &(catalog.to_json() + "\n"), STAGE)?;
    let declared = catalog.declared_fk_count();
    println!(
        "tables={} declared_fks={declared} inferred_fks={} advisories={advisories} profile_warnings={warnings}",
        catalog.tables.len(),
        catalog.fk_edges.len() - declared,
    );
    Ok(())
}

fn subschemas(catalog: &Path, out: &Path, min_tables: usize, max_tables: Option<usize>) -> Outcome {
    const STAGE: &str = "subschemas";
    let catalog = load_catalog(catalog)?;
    if min_tables == 0 {
        return Err(Failure::config("--min-tables must be at least 1"));
    }
    let policy = SubschemaPolicy {
        min_tables,
        max_tables,
        ..SubschemaPolicy::default()
    };
    let list = enumerate_with_policy(&build_join_graph(&catalog), &policy)
        .map_err(|e| Failure::stage(STAGE, e))?;
    write_jsonl(out, SUBSCHEMAS_KIND, &list).map_err(|e| Failure::stage(STAGE, e))?;
    println!("subschemas={}", list.len());
    Ok(())
}

fn gen_mech(
    catalog: &Path,
    subschemas: &Path,
    out: &Path,
    per_subschema: usize,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Outcome {
    const STAGE: &str = "gen-mech";
    let catalog = load_catalog(catalog)?;
    let subschemas = load_subschemas(subschemas)?;
    let mut mech = match config {
        Some(path) => load_config(path)?.mechanical.config,
        None => MechConfig::default(),
    };
    if let Some(seed) = seed {
        mech.seed = seed;
    }
    mech.validate().map_err(Failure::config)?;
    let mut records = Vec::new();
    for s in &subschemas {
        records.extend(
            generate_mechanical(s, &catalog, &mech, per_subschema)
                .map_err(|e| Failure::stage(STAGE, e))?,
        );
    }
    save_records(out, &records, STAGE)?;
    println!("generated={}", records.len());
    Ok(())
}

fn gen_llm(
    config: &Path,
    catalog: &Path,
    subschemas: &Path,
    out: &Path,
    examples_out: Option<&Path>,
    seed: Option<u64>,
    batch: u32,
) -> Outcome {
    const STAGE: &str = "gen-llm";
    let mut config = load_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if !config.llm.enabled {
        return Err(Failure::config("llm.enabled is false in this config"));
    }
    config.mechanical.include_in_corpus = false;
    let catalog = load_catalog(catalog)?;
    let subschemas = load_subschemas(subschemas)?;
    let backend = open_backend(&config.llm)?;
    let (records, examples, stats) = generate_candidates(
        &config,
        &catalog,
        &subschemas,
        batch,
        &Default::default(),
        backend.as_deref(),
    )?;
    save_records(out, &records, STAGE)?;
    if let Some(path) = examples_out {
        write_jsonl(path, EXAMPLES_KIND, &examples).map_err(|e| Failure::stage(STAGE, e))?;
    }
    println!(
        "prompts={} llm_calls={} failures={} completions={} without_sql={} candidates={}",
        stats.llm_prompts,
        stats.llm_calls,
        stats.llm_failures,
        stats.completions,
        stats.completions_without_sql,
        records.len()
    );
    Ok(())
}

fn validate(
    catalog: &Path,
    input: &Path,
    out: &Path,
    subschemas: Option<&Path>,
    keep_literals: bool,
) -> Outcome {
    let catalog = load_catalog(catalog)?;
    let subschemas = match subschemas {
        Some(path) => load_subschemas(path)?,
        None => Vec::new(),
    };
    let records = load_records(input)?;
    let validator = querygen_core::validate::ValidatorConfig {
        literal_placeholders: !keep_literals,
        ..Default::default()
    };
    let mut dedup = Deduplicator::new(validator.literal_placeholders);
    let mut stats = BatchStats::default();
    let screened = screen_records(
        records,
        &catalog,
        &subschemas,
        &validator,
        &mut dedup,
        &mut stats,
    );
    save_records(out, &screened, "validate")?;
    let rejected: Vec<String> = stats
        .rejected
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect();
    println!(
        "generated={} kept={} deduplicated={} rejected={} [{}]",
        stats.generated,
        stats.kept,
        stats.deduplicated,
        stats.rejected_total(),
        rejected.join(" ")
    );
    Ok(())
}

fn coverage(
    catalog: &Path,
    input: &Path,
    out: &Path,
    csv: Option<&Path>,
    setting: &str,
) -> Outcome {
    const STAGE: &str = "coverage";
    let catalog = load_catalog(catalog)?;
    let records = load_records(input)?;
    let mut profiles = Vec::new();
    let mut skipped = 0;
    for r in records
        .iter()
        .filter(|r| r.validation.as_ref().is_none_or(|v| v.accepted()))
    {
        match r
            .profile
            .clone()
            .map(Ok)
            .unwrap_or_else(|| profile_query(&r.sql, &catalog))
        {
            Ok(p) => profiles.push(p),
            Err(_) => skipped += 1,
        }
    }
    let report = aggregate_coverage(&profiles, setting, &catalog, &CoverageTargets::default())
        .map_err(|e| Failure::stage(STAGE, e))?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write(out, &(text + "\n"), STAGE)?;
    if let Some(path) = csv {
        write(path, &facet_csv(std::slice::from_ref(&report)), STAGE)?;
    }
    println!(
        "queries={} skipped={skipped} gaps={}",
        report.query_count,
        report.gap_list.len()
    );
    Ok(())
}

fn execute(config: &Path, catalog: &Path, input: &Path, out: &Path) -> Outcome {
    let config = load_config(config)?;
    if config.execution.engines.is_empty() {
        return Err(Failure::config("execution.engines is empty"));
    }
    let catalog = load_catalog(catalog)?;
    let mut records = load_records(input)?;
    let stats = label_records(&mut records, &catalog, &config.execution)?;
    save_records(out, &records, "execute")?;
    for (engine, s) in &stats {
        let buckets: Vec<String> = s.buckets.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        match &s.failure {
            Some(f) => println!("{engine}: unreachable: {f}"),
            None => println!(
                "{engine}: executed={} errors={} timeouts={} dropped_empty={} kept={} [{}]",
                s.executed,
                s.errors,
                s.timeouts,
                s.dropped_empty,
                s.kept,
                buckets.join(" ")
            ),
        }
    }
    Ok(())
}

fn evaluate(predictions: &Path, baseline: Option<&Path>, json: bool) -> Outcome {
    const STAGE: &str = "evaluate";
    let load = |p: &Path| {
        PredictionMatrix::load(p)
            .map_err(|e| Failure::stage(STAGE, format!("{}: {e}", p.display())))
    };
    let matrix = load(predictions)?;
    let summary = summarize(&matrix).map_err(|e| Failure::stage(STAGE, e))?;
    let routed = route(&matrix);
    let mut sources = vec![(name_of(predictions), summary.clone())];
    let mut improvement = None;
    let mut base = None;
    if let Some(path) = baseline {
        let other = load(path)?;
        let s = summarize(&other).map_err(|e| Failure::stage(STAGE, e))?;
        let r = route(&other);
        improvement = Some(compare_routing(&r, &routed).map_err(|e| Failure::stage(STAGE, e))?);
        sources.insert(0, (name_of(path), s.clone()));
        base = Some((s, r));
    }
    if json {
        let body = serde_json::json!({
            "summary": summary,
            "routing": routed,
            "baseline": base.as_ref().map(|(s, r)| serde_json::json!({ "summary": s, "routing": r })),
            "routing_improvement": improvement,
        });
        println!(
            "{}",
            serde_json::to_string_pretty(&body).expect("serializes")
        );
        return Ok(());
    }
    print!("{}", summary_table(&sources));
    println!();
    if let Some((_, r)) = &base {
        println!(
            "baseline routed={:.3} oracle={:.3}",
            r.total_routed_time, r.oracle_time
        );
    }
    println!(
        "routed={:.3} oracle={:.3} regret={:.3}",
        routed.total_routed_time, routed.oracle_time, routed.regret
    );
    if let Some(i) = improvement {
        println!("routing improvement over baseline: {:.4}", i);
    }
    Ok(())
}

fn name_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn run(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>, resume: bool) -> Outcome {
    let mut config = PipelineConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        let cwd = std::env::current_dir().map_err(|e| Failure::stage("setup", e))?;
        config.output_dir = cwd.join(out);
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let manifest = run_pipeline(&config, base, &RunOptions { resume })?;
    let t = &manifest.totals;
    println!(
        "batches={} generated={} kept={} rejected={} deduplicated={} llm_calls={} termination={}",
        manifest.batches.len(),
        t.generated,
        t.kept,
        t.rejected.values().sum::<usize>(),
        t.deduplicated,
        t.llm_calls,
        manifest.termination.as_deref().unwrap_or("-")
    );
    Ok(())
}

fn report_cmd(dir: &Path, kind: ReportKind, out: Option<&Path>) -> Outcome {
    const STAGE: &str = "report";
    let text = match kind {
        ReportKind::Facets | ReportKind::Clauses => {
            let reports: Vec<CoverageReport> =
                serde_json::from_str(&read(&dir.join("coverage.json"), STAGE)?)
                    .map_err(|e| Failure::stage(STAGE, e))?;
            match kind {
                ReportKind::Facets => facet_csv(&reports),
                _ => report::clause_presence_csv(&reports),
            }
        }
        ReportKind::Buckets => {
            let labeled = dir.join("labeled.jsonl");
            if !labeled.exists() {
                return Err(Failure::stage(
                    STAGE,
                    "run has no labeled.jsonl; enable execution",
                ));
            }
            report::runtime_bucket_csv(&load_records(&labeled)?)
        }
        ReportKind::Batches => {
            let manifest: Manifest =
                serde_json::from_str(&read(&dir.join(pipeline::MANIFEST_FILE), STAGE)?)
                    .map_err(|e| Failure::stage(STAGE, e))?;
            let reasons: BTreeSet<&String> = manifest
                .batches
                .iter()
                .flat_map(|b| b.rejected.keys())
                .collect();
            let mut csv = String::from("batch,generated,kept,deduplicated");
            for r in &reasons {
                csv.push_str(&format!(",rejected_{r}"));
            }
            csv.push_str(",llm_calls,gaps\n");
            for b in &manifest.batches {
                csv.push_str(&format!(
                    "{},{},{},{}",
                    b.batch, b.generated, b.kept, b.deduplicated
                ));
                for r in &reasons {
                    csv.push_str(&format!(",{}", b.rejected.get(*r).copied().unwrap_or(0)));
                }
                csv.push_str(&format!(",{},{}\n", b.llm_calls, b.gaps));
            }
            csv
        }
    };
    match out {
        Some(path) => write(path, &text, STAGE),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_tpch(out: &Path, scale: f64, seed: u64) -> Outcome {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Failure::config("--scale must be positive"));
    }
    let counts = write_tbl_files(out, TpchScale::from_factor(scale), seed)
        .map_err(|e| Failure::stage("gen-tpch", e))?;
    let summary: Vec<String> = counts.iter().map(|(t, n)| format!("{t}={n}")).collect();
    println!("{}", summary.join(" "));
    Ok(())
}
