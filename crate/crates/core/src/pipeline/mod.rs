//! End-to-end orchestration: preprocess, enumerate subschemas, generate,
//! validate, measure coverage, regenerate, then optionally execute.
//!
//! Every stage writes its output under the run's output directory and the
//! manifest lists completed stages, so a resumed run reloads finished stages
//! instead of recomputing them.

mod config;
pub mod report;

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    BackendSection, ExecutionSection, LlmSection, MechanicalSection, PipelineConfig, SchemaSection,
    SelectionMode, SelectionSection, SubschemaSection,
};

use crate::coverage::{
    aggregate_coverage, facet_csv, plan_regeneration, profile_query, CoverageReport,
    CoverageTargets, RegenDirectives,
};
use crate::harness::{
    apply_retention, bucket_runtime, execute_on_engines, open_driver, DropReason, RuntimeBucket,
};
use crate::llm::{
    build_prompt, extract_sql, generate_llm, generate_many, prompt_hash, Bias, HttpBackend,
    LlmBackend, LlmError, PromptSetting, PromptText, StubBackend,
};
use crate::mechgen::{generate_mechanical, select_from_examples, MechConfig, SeedExample};
use crate::record::{read_jsonl, write_jsonl, Origin, QueryRecord, RejectionCode, SCHEMA_VERSION};
use crate::rng::{derive_u64, short_hash, stage_rng};
use crate::schema::{
    infer_foreign_keys, ingest_ddl, profile_columns, ColumnFilter, CsvDirSampler, Provenance,
    SchemaCatalog,
};
use crate::subschema::{build_join_graph, enumerate_with_policy, Subschema};
use crate::validate::{validate_sql, Deduplicator, ValidatorConfig};

pub const RECORDS_KIND: &str = "query_records";
pub const SUBSCHEMAS_KIND: &str = "subschemas";
pub const EXAMPLES_KIND: &str = "seed_examples";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 1,
        }
    }

    fn stage(stage: &str, message: impl ToString) -> Self {
        PipelineError::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reload stages a previous run with the same config completed.
    pub resume: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaStats {
    pub tables: usize,
    pub declared_fks: usize,
    pub inferred_fks: usize,
    pub inference_advisories: usize,
    pub profile_warnings: usize,
}

/// Counts for one generation batch. `generated = kept + rejected + deduplicated`,
/// with each rejected query counted once under its first reason code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub batch: u32,
    pub mechanical_subschemas: usize,
    pub mechanical_failures: usize,
    pub llm_prompts: usize,
    pub llm_calls: usize,
    pub llm_failures: usize,
    pub prompt_failures: usize,
    pub completions: usize,
    pub completions_without_sql: usize,
    pub generated: usize,
    pub rejected: BTreeMap<String, usize>,
    pub deduplicated: usize,
    pub kept: usize,
    pub gaps: usize,
    /// Directives derived after this batch, applied to the next.
    pub directives: RegenDirectives,
}

impl BatchStats {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn balanced(&self) -> bool {
        self.generated == self.kept + self.rejected_total() + self.deduplicated
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub generated: usize,
    pub rejected: BTreeMap<String, usize>,
    pub deduplicated: usize,
    pub kept: usize,
    pub llm_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub executed: usize,
    pub errors: usize,
    pub timeouts: usize,
    pub dropped_empty: usize,
    pub kept: usize,
    pub buckets: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// The config as given, with `output_dir` replaced by `.`.
    pub config: PipelineConfig,
    pub stages_completed: Vec<String>,
    pub schema: SchemaStats,
    pub subschemas: usize,
    pub batches: Vec<BatchStats>,
    pub totals: Totals,
    pub termination: Option<String>,
    pub selected: Option<usize>,
    pub execution: BTreeMap<String, EngineStats>,
    /// Output files relative to the output directory.
    pub files: BTreeMap<String, String>,
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn snapshot(config: &PipelineConfig) -> PipelineConfig {
    let mut s = config.clone();
    s.output_dir = PathBuf::from(".");
    s
}

pub fn config_hash(config: &PipelineConfig) -> String {
    short_hash(
        &serde_json::to_string(&snapshot(config)).expect("config serializes"),
        16,
    )
}

/// Runs every stage of `config`, resolving relative paths against `base`.
/// The manifest is written even when a stage fails.
pub fn run_pipeline(
    config: &PipelineConfig,
    base: &Path,
    options: &RunOptions,
) -> Result<Manifest, PipelineError> {
    config.check()?;
    let resolved = config.resolved(base);
    let out = resolved.output_dir.clone();
    fs::create_dir_all(out.join("batches"))
        .map_err(|e| PipelineError::stage("setup", format!("{}: {e}", out.display())))?;

    let hash = config_hash(config);
    let previous = if options.resume {
        fs::read_to_string(out.join(MANIFEST_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .filter(|m| m.config_hash == hash)
    } else {
        None
    };
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        seed: config.seed,
        config: snapshot(config),
        stages_completed: Vec::new(),
        schema: SchemaStats::default(),
        subschemas: 0,
        batches: Vec::new(),
        totals: Totals::default(),
        termination: None,
        selected: None,
        execution: BTreeMap::new(),
        files: BTreeMap::new(),
        error: None,
    };
    let result = Runner {
        config: &resolved,
        out: &out,
        previous: previous.as_ref(),
        manifest: &mut manifest,
    }
    .run();
    if let Err(e) = &result {
        manifest.error = Some(e.to_string());
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(out.join(MANIFEST_FILE), text + "\n")
        .map_err(|e| PipelineError::stage("manifest", e))?;
    result.map(|_| manifest)
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
    previous: Option<&'a Manifest>,
    manifest: &'a mut Manifest,
}

impl Runner<'_> {
    fn done_before(&self, stage: &str) -> bool {
        self.previous
            .is_some_and(|m| m.stages_completed.iter().any(|s| s == stage))
    }

    fn complete(&mut self, stage: &str) {
        self.manifest.stages_completed.push(stage.to_string());
    }

    fn file(&mut self, key: &str, relative: &str) -> PathBuf {
        self.manifest
            .files
            .insert(key.to_string(), relative.to_string());
        self.out.join(relative)
    }

    fn run(&mut self) -> Result<(), PipelineError> {
        let catalog = self.preprocess()?;
        let subschemas = self.subschemas(&catalog)?;
        let corpus = self.generate(&catalog, &subschemas)?;
        if self.config.execution.enabled {
            self.execute(&catalog, &corpus)?;
        }
        Ok(())
    }

    fn preprocess(&mut self) -> Result<SchemaCatalog, PipelineError> {
        const STAGE: &str = "preprocess";
        let path = self.file("catalog", "catalog.json");
        if self.done_before(STAGE) {
            let text = fs::read_to_string(&path).map_err(|e| PipelineError::stage(STAGE, e))?;
            let catalog =
                SchemaCatalog::from_json(&text).map_err(|e| PipelineError::stage(STAGE, e))?;
            self.manifest.schema = self.previous.map(|m| m.schema.clone()).unwrap_or_default();
            self.complete(STAGE);
            return Ok(catalog);
        }
        let schema = &self.config.schema;
        let ddl = fs::read_to_string(&schema.ddl)
            .map_err(|e| PipelineError::stage(STAGE, format!("{}: {e}", schema.ddl.display())))?;
        let mut catalog = ingest_ddl(&ddl).map_err(|e| PipelineError::stage(STAGE, e))?;
        catalog.name = schema.name.clone();
        let (inferred, advisories) = infer_foreign_keys(&catalog, &schema.inference);
        catalog = inferred;
        let mut warnings = 0;
        if let Some(dir) = &schema.data_dir {
            let mut sampler = CsvDirSampler::new(dir, &catalog);
            let (profiled, w) = profile_columns(&catalog, &mut sampler, &schema.profile);
            catalog = profiled;
            warnings = w.len();
        }
        self.manifest.schema = SchemaStats {
            tables: catalog.tables.len(),
            declared_fks: catalog
                .fk_edges
                .iter()
                .filter(|f| f.provenance == Provenance::Declared)
                .count(),
            inferred_fks: catalog
                .fk_edges
                .iter()
                .filter(|f| f.provenance == Provenance::Inferred)
                .count(),
            inference_advisories: advisories.len(),
            profile_warnings: warnings,
        };
        fs::write(&path, catalog.to_json() + "\n").map_err(|e| PipelineError::stage(STAGE, e))?;
        self.complete(STAGE);
        Ok(catalog)
    }

    fn subschemas(&mut self, catalog: &SchemaCatalog) -> Result<Vec<Subschema>, PipelineError> {
        const STAGE: &str = "subschemas";
        let path = self.file("subschemas", "subschemas.jsonl");
        let subschemas = if self.done_before(STAGE) {
            read_jsonl(&path, SUBSCHEMAS_KIND).map_err(|e| PipelineError::stage(STAGE, e))?
        } else {
            let graph = build_join_graph(catalog);
            let list = enumerate_with_policy(&graph, &self.config.subschemas.policy)
                .map_err(|e| PipelineError::stage(STAGE, e))?;
            write_jsonl(&path, SUBSCHEMAS_KIND, &list)
                .map_err(|e| PipelineError::stage(STAGE, e))?;
            list
        };
        if subschemas.is_empty() {
            return Err(PipelineError::stage(
                STAGE,
                "no subschemas match the policy",
            ));
        }
        self.manifest.subschemas = subschemas.len();
        self.complete(STAGE);
        Ok(subschemas)
    }

    fn generate(
        &mut self,
        catalog: &SchemaCatalog,
        subschemas: &[Subschema],
    ) -> Result<Vec<QueryRecord>, PipelineError> {
        let backend = open_backend(&self.config.llm)?;
        let mut dedup = Deduplicator::new(self.config.validator.literal_placeholders);
        let mut corpus: Vec<QueryRecord> = Vec::new();
        let mut directives = RegenDirectives::default();
        let coverage_json = self.file("coverage", "coverage.json");
        let coverage_csv = self.file("coverage_csv", "coverage.csv");

        for b in 0..=self.config.loop_limit {
            let stage = format!("batch-{b:03}");
            let records_path = self.file(&stage, &format!("batches/{stage}.jsonl"));
            let examples_path = self.file(
                &format!("{stage}-examples"),
                &format!("batches/{stage}.examples.jsonl"),
            );
            let previous_stats = self
                .previous
                .and_then(|m| m.batches.iter().find(|s| s.batch == b))
                .cloned();
            let (records, mut stats) = match previous_stats.filter(|_| self.done_before(&stage)) {
                Some(stats) => {
                    let records: Vec<QueryRecord> = read_jsonl(&records_path, RECORDS_KIND)
                        .map_err(|e| PipelineError::stage(&stage, e))?;
                    for r in records.iter().filter(|r| r.accepted()) {
                        dedup.admit(&r.sql);
                    }
                    (records, stats)
                }
                None => {
                    let (records, examples, stats) = Batch {
                        config: self.config,
                        catalog,
                        subschemas,
                        batch: b,
                        directives: &directives,
                    }
                    .run(backend.as_deref(), &mut dedup)
                    .map_err(|e| match e {
                        PipelineError::Stage { message, .. } => {
                            PipelineError::stage(&stage, message)
                        }
                        other => other,
                    })?;
                    write_jsonl(&records_path, RECORDS_KIND, &records)
                        .map_err(|e| PipelineError::stage(&stage, e))?;
                    write_jsonl(&examples_path, EXAMPLES_KIND, &examples)
                        .map_err(|e| PipelineError::stage(&stage, e))?;
                    (records, stats)
                }
            };
            corpus.extend(records.into_iter().filter(QueryRecord::accepted));

            let reports = coverage_reports(&corpus, catalog, &self.config.coverage);
            let overall = reports.iter().find(|r| r.setting == "all");
            stats.gaps = overall.map_or(0, |r| r.gap_list.len());
            directives = overall
                .map(|r| plan_regeneration(r, subschemas, catalog))
                .unwrap_or_default();
            stats.directives = directives.clone();
            let report_text = serde_json::to_string_pretty(&reports).expect("reports serialize");
            fs::write(&coverage_json, report_text + "\n")
                .map_err(|e| PipelineError::stage(&stage, e))?;
            fs::write(&coverage_csv, facet_csv(&reports))
                .map_err(|e| PipelineError::stage(&stage, e))?;

            let totals = &mut self.manifest.totals;
            totals.generated += stats.generated;
            totals.deduplicated += stats.deduplicated;
            totals.kept += stats.kept;
            totals.llm_calls += stats.llm_calls;
            for (reason, n) in &stats.rejected {
                *totals.rejected.entry(reason.clone()).or_insert(0) += n;
            }
            self.manifest.batches.push(stats);
            self.complete(&stage);

            let termination = if self.config.kept_target.is_some_and(|t| corpus.len() >= t) {
                Some("kept_target")
            } else if overall.is_some_and(|r| r.gap_list.is_empty()) {
                Some("no_gaps")
            } else if b == self.config.loop_limit {
                Some("loop_limit")
            } else {
                None
            };
            if let Some(reason) = termination {
                self.manifest.termination = Some(reason.to_string());
                break;
            }
        }

        let corpus_path = self.file("corpus", "corpus.jsonl");
        write_jsonl(&corpus_path, RECORDS_KIND, &corpus)
            .map_err(|e| PipelineError::stage("corpus", e))?;
        self.complete("corpus");
        Ok(corpus)
    }

    fn execute(
        &mut self,
        catalog: &SchemaCatalog,
        corpus: &[QueryRecord],
    ) -> Result<(), PipelineError> {
        const STAGE: &str = "execution";
        let exec = &self.config.execution;
        let mut selected = select_corpus(corpus, &self.config.selection);
        self.manifest.selected = Some(selected.len());
        let selected_path = self.file("selected", "selected.jsonl");
        write_jsonl(&selected_path, RECORDS_KIND, &selected)
            .map_err(|e| PipelineError::stage(STAGE, e))?;

        self.manifest.execution = label_records(&mut selected, catalog, exec)?;
        let labeled_path = self.file("labeled", "labeled.jsonl");
        write_jsonl(&labeled_path, RECORDS_KIND, &selected)
            .map_err(|e| PipelineError::stage(STAGE, e))?;
        self.complete(STAGE);
        Ok(())
    }
}

/// The configured completion backend, or `None` when LLM generation is off.
pub fn open_backend(llm: &LlmSection) -> Result<Option<Box<dyn LlmBackend>>, PipelineError> {
    if !llm.enabled {
        return Ok(None);
    }
    match &llm.backend {
        Some(BackendSection::Stub { dir }) => {
            let stub = StubBackend::from_dir(dir).map_err(|e| {
                PipelineError::Config(format!("stub backend {}: {e}", dir.display()))
            })?;
            Ok(Some(Box::new(stub)))
        }
        Some(BackendSection::Http(http)) => Ok(Some(Box::new(HttpBackend::new(http.clone())))),
        None => Err(PipelineError::Config(
            "llm.enabled needs an llm.backend section".into(),
        )),
    }
}

/// Runs `records` on every engine of `exec`, attaching the labels that pass
/// retention. An engine that cannot be reached is reported in its stats.
pub fn label_records(
    records: &mut [QueryRecord],
    catalog: &SchemaCatalog,
    exec: &ExecutionSection,
) -> Result<BTreeMap<String, EngineStats>, PipelineError> {
    let mut drivers = Vec::new();
    for spec in &exec.engines {
        drivers.push(open_driver(spec, catalog).map_err(|e| PipelineError::stage("execution", e))?);
    }
    let queries: Vec<(String, String)> = records
        .iter()
        .map(|r| (r.id.clone(), r.sql.clone()))
        .collect();
    let results = execute_on_engines(
        &queries,
        &mut drivers,
        Duration::from_millis(exec.timeout_ms),
    );
    let index: BTreeMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.clone(), i))
        .collect();
    let mut all = BTreeMap::new();
    for (spec, result) in exec.engines.iter().zip(results) {
        let mut stats = EngineStats::default();
        match result {
            Err(e) => stats.failure = Some(e.to_string()),
            Ok(labels) => {
                stats.executed = labels.len();
                stats.timeouts = labels.iter().filter(|l| l.timed_out).count();
                let (kept, dropped) = apply_retention(labels, exec.min_empty_runtime_ms);
                for (_, reason) in &dropped {
                    match reason {
                        DropReason::Errored => stats.errors += 1,
                        DropReason::EmptyAndFast => stats.dropped_empty += 1,
                    }
                }
                stats.kept = kept.len();
                for bucket in RuntimeBucket::ALL {
                    stats.buckets.insert(bucket.label().to_string(), 0);
                }
                for label in kept {
                    *stats
                        .buckets
                        .entry(bucket_runtime(&label).label().to_string())
                        .or_insert(0) += 1;
                    if let Some(&i) = index.get(&label.query_id) {
                        records[i].labels.insert(label.engine_id.clone(), label);
                    }
                }
            }
        }
        all.insert(spec.engine_id.clone(), stats);
    }
    Ok(all)
}

/// Coverage of the kept corpus overall (`all`), for mechanical queries and
/// for each prompt setting. Groups without profiled queries are skipped.
pub fn coverage_reports(
    corpus: &[QueryRecord],
    catalog: &SchemaCatalog,
    targets: &CoverageTargets,
) -> Vec<CoverageReport> {
    let mut groups: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for r in corpus {
        let Some(p) = &r.profile else {
            continue;
        };
        groups.entry("all".into()).or_default().push(p.clone());
        groups.entry(stratum(r)).or_default().push(p.clone());
    }
    groups
        .iter()
        .filter_map(|(label, profiles)| aggregate_coverage(profiles, label, catalog, targets).ok())
        .collect()
}

/// `mechanical`, or the prompt setting label for LLM queries.
pub fn stratum(record: &QueryRecord) -> String {
    match (&record.origin, &record.prompt_setting) {
        (Origin::Llm, Some(s)) => s.label(),
        (Origin::Llm, None) => "llm".into(),
        (Origin::Mechanical, _) => "mechanical".into(),
    }
}

/// The training selection from the kept corpus.
pub fn select_corpus(corpus: &[QueryRecord], selection: &SelectionSection) -> Vec<QueryRecord> {
    let size = selection.size.unwrap_or(corpus.len()).min(corpus.len());
    match selection.mode {
        SelectionMode::FirstN => corpus[..size].to_vec(),
        SelectionMode::Stratified => {
            let mut order: Vec<String> = Vec::new();
            let mut strata: BTreeMap<String, VecDeque<&QueryRecord>> = BTreeMap::new();
            for r in corpus {
                let key = stratum(r);
                if !strata.contains_key(&key) {
                    order.push(key.clone());
                }
                strata.entry(key).or_default().push_back(r);
            }
            let mut out = Vec::with_capacity(size);
            while out.len() < size {
                for key in &order {
                    if out.len() == size {
                        break;
                    }
                    if let Some(r) = strata.get_mut(key).and_then(VecDeque::pop_front) {
                        out.push(r.clone());
                    }
                }
            }
            out
        }
    }
}

/// Up to `k` subschemas drawn without replacement with the given weights,
/// returned in list order. All of them when `k` is absent or large enough.
fn pick_subschemas<'s>(
    subschemas: &'s [Subschema],
    weights: &BTreeMap<String, f64>,
    k: Option<usize>,
    rng: &mut crate::rng::StageRng,
) -> Vec<&'s Subschema> {
    let k = match k {
        Some(k) if k < subschemas.len() => k,
        _ => return subschemas.iter().collect(),
    };
    let indices: Vec<usize> = (0..subschemas.len()).collect();
    let weight = |i: &usize| weights.get(&subschemas[*i].id).copied().unwrap_or(1.0);
    let mut picked: Vec<usize> = match indices.choose_multiple_weighted(rng, k, weight) {
        Ok(iter) => iter.copied().collect(),
        Err(_) => indices[..k].to_vec(),
    };
    picked.sort_unstable();
    picked.into_iter().map(|i| &subschemas[i]).collect()
}

/// The part of a column filter that concerns `subschema`, if any.
fn filter_for(directives: &RegenDirectives, subschema: &Subschema) -> Option<ColumnFilter> {
    let filter: ColumnFilter = directives
        .column_filters
        .iter()
        .filter(|(t, _)| subschema.contains(t))
        .map(|(t, c)| (t.clone(), c.clone()))
        .collect();
    (!filter.is_empty()).then_some(filter)
}

/// Seed-example pool of a subschema for one batch: mechanical queries with
/// duplicates removed.
pub fn seed_pool(
    subschema: &Subschema,
    catalog: &SchemaCatalog,
    mech: &MechConfig,
    pool_size: usize,
    seed: u64,
    batch: u32,
) -> Result<Vec<SeedExample>, PipelineError> {
    let config = MechConfig {
        seed: derive_u64(seed, &["pool", &batch.to_string()]),
        ..mech.clone()
    };
    let records = generate_mechanical(subschema, catalog, &config, pool_size.max(1))
        .map_err(|e| PipelineError::stage("pool", e))?;
    let mut seen = Deduplicator::new(true);
    Ok(records
        .iter()
        .filter(|r| seen.admit(&r.sql))
        .map(SeedExample::from_record)
        .collect())
}

/// Rebuilds the prompt an LLM record came from using only persisted data.
pub fn rebuild_prompt(
    record: &QueryRecord,
    catalog: &SchemaCatalog,
    subschemas: &[Subschema],
    examples: &BTreeMap<String, SeedExample>,
    text: &PromptText,
) -> Option<String> {
    let setting = record.prompt_setting?;
    let subschema = subschemas.iter().find(|s| s.id == record.subschema_id)?;
    let shown: Option<Vec<SeedExample>> = record
        .example_ids
        .iter()
        .map(|id| examples.get(id).cloned())
        .collect();
    build_prompt(
        subschema,
        catalog,
        &setting,
        &shown?,
        record.column_filter.as_ref(),
        text,
    )
    .ok()
}

/// Generated but unvalidated records of one batch, the seed examples their
/// prompts showed, and generation counts.
pub fn generate_candidates(
    config: &PipelineConfig,
    catalog: &SchemaCatalog,
    subschemas: &[Subschema],
    batch: u32,
    directives: &RegenDirectives,
    backend: Option<&dyn LlmBackend>,
) -> Result<(Vec<QueryRecord>, Vec<SeedExample>, BatchStats), PipelineError> {
    Batch {
        config,
        catalog,
        subschemas,
        batch,
        directives,
    }
    .candidates(backend)
}

/// Validates each record against its subschema (when listed in
/// `subschemas`), drops duplicates of anything `dedup` has seen, profiles
/// the survivors and tallies the outcome into `stats`.
pub fn screen_records(
    candidates: Vec<QueryRecord>,
    catalog: &SchemaCatalog,
    subschemas: &[Subschema],
    validator: &ValidatorConfig,
    dedup: &mut Deduplicator,
    stats: &mut BatchStats,
) -> Vec<QueryRecord> {
    let by_id: BTreeMap<&str, &Subschema> = subschemas.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut records = Vec::with_capacity(candidates.len());
    for mut r in candidates {
        let subschema = by_id.get(r.subschema_id.as_str()).copied();
        stats.generated += 1;
        let mut report = validate_sql(&r.sql, catalog, subschema, validator);
        if report.accepted() && !dedup.admit(&r.sql) {
            report.reject(RejectionCode::Duplicate);
        }
        if report.accepted() {
            stats.kept += 1;
            r.profile = profile_query(&r.sql, catalog).ok();
        } else if report.rejection_reasons == [RejectionCode::Duplicate] {
            stats.deduplicated += 1;
        } else {
            let first = report.rejection_reasons[0].as_str().to_string();
            *stats.rejected.entry(first).or_insert(0) += 1;
        }
        r.validation = Some(report);
        records.push(r);
    }
    records
}

struct Batch<'a> {
    config: &'a PipelineConfig,
    catalog: &'a SchemaCatalog,
    subschemas: &'a [Subschema],
    batch: u32,
    directives: &'a RegenDirectives,
}

struct Job<'a> {
    subschema: &'a Subschema,
    setting: PromptSetting,
    examples: Vec<SeedExample>,
    filter: Option<ColumnFilter>,
    prompt: String,
}

impl<'a> Batch<'a> {
    fn run(
        &self,
        backend: Option<&dyn LlmBackend>,
        dedup: &mut Deduplicator,
    ) -> Result<(Vec<QueryRecord>, Vec<SeedExample>, BatchStats), PipelineError> {
        let (candidates, examples, mut stats) = self.candidates(backend)?;
        let records = screen_records(
            candidates,
            self.catalog,
            self.subschemas,
            &self.config.validator,
            dedup,
            &mut stats,
        );
        Ok((records, examples, stats))
    }

    fn candidates(
        &self,
        backend: Option<&dyn LlmBackend>,
    ) -> Result<(Vec<QueryRecord>, Vec<SeedExample>, BatchStats), PipelineError> {
        let config = self.config;
        let b = self.batch.to_string();
        let mut stats = BatchStats {
            batch: self.batch,
            ..BatchStats::default()
        };
        let mut candidates: Vec<QueryRecord> = Vec::new();

        let mech = &config.mechanical;
        if mech.include_in_corpus {
            let mut rng = stage_rng(config.seed, &["mechanical-subschemas", &b]);
            let chosen = pick_subschemas(
                self.subschemas,
                &self.directives.subschema_weights,
                mech.subschemas_per_batch,
                &mut rng,
            );
            stats.mechanical_subschemas = chosen.len();
            let mech_config = MechConfig {
                seed: derive_u64(config.seed, &["mechanical", &b]),
                ..mech.config.clone()
            };
            for s in chosen {
                match generate_mechanical(s, self.catalog, &mech_config, mech.queries_per_subschema)
                {
                    Ok(records) => candidates.extend(records.into_iter().map(|mut r| {
                        r.batch = self.batch;
                        r
                    })),
                    Err(_) => stats.mechanical_failures += 1,
                }
            }
        }

        let mut used_examples: BTreeMap<String, SeedExample> = BTreeMap::new();
        if let Some(backend) = backend {
            let jobs = self.prompts(&mut stats)?;
            for job in &jobs {
                for e in &job.examples {
                    used_examples
                        .entry(e.query_id.clone())
                        .or_insert_with(|| e.clone());
                }
            }
            let llm = &config.llm;
            let prompts: Vec<String> = jobs.iter().map(|j| j.prompt.clone()).collect();
            let mut results = generate_many(&prompts, backend, &llm.params, llm.max_in_flight);
            stats.llm_calls += prompts.len();
            for (prompt, result) in prompts.iter().zip(results.iter_mut()) {
                let mut attempts = 0;
                while attempts < llm.retries
                    && matches!(
                        result,
                        Err(LlmError::Backend {
                            retryable: true,
                            ..
                        })
                    )
                {
                    attempts += 1;
                    stats.llm_calls += 1;
                    *result = generate_llm(prompt, backend, &llm.params);
                }
            }
            let model = backend.model_name().to_string();
            for (job, result) in jobs.iter().zip(results) {
                let Ok(completions) = result else {
                    stats.llm_failures += 1;
                    continue;
                };
                stats.completions += completions.len();
                for completion in completions {
                    let found = extract_sql(&completion);
                    if found.is_empty() {
                        stats.completions_without_sql += 1;
                    }
                    for sql in found {
                        let mut r = QueryRecord::mechanical(sql, &job.subschema.id, self.batch);
                        r.origin = Origin::Llm;
                        r.prompt_setting = Some(job.setting);
                        r.prompt_hash = Some(prompt_hash(&job.prompt));
                        r.model_name = Some(model.clone());
                        r.generation_params = Some(llm.params.clone());
                        r.example_ids = job.examples.iter().map(|e| e.query_id.clone()).collect();
                        r.column_filter = job.filter.clone();
                        candidates.push(r);
                    }
                }
            }
        }

        Ok((candidates, used_examples.into_values().collect(), stats))
    }

    fn targets(&self, setting: &PromptSetting) -> Result<Vec<&'a Subschema>, PipelineError> {
        let llm = &self.config.llm;
        if llm.only_subschemas.is_empty() {
            let mut rng = stage_rng(
                self.config.seed,
                &["llm-subschemas", &setting.label(), &self.batch.to_string()],
            );
            return Ok(pick_subschemas(
                self.subschemas,
                &self.directives.subschema_weights,
                Some(llm.prompts_per_setting),
                &mut rng,
            ));
        }
        llm.only_subschemas
            .iter()
            .map(|tables| {
                let mut wanted: Vec<String> = tables.iter().map(|t| t.to_lowercase()).collect();
                wanted.sort();
                self.subschemas
                    .iter()
                    .find(|s| s.tables == wanted)
                    .ok_or_else(|| {
                        PipelineError::Config(format!(
                            "llm.only_subschemas: {} is not a subschema",
                            wanted.join(",")
                        ))
                    })
            })
            .collect()
    }

    fn prompts(&self, stats: &mut BatchStats) -> Result<Vec<Job<'a>>, PipelineError> {
        let config = self.config;
        let llm = &config.llm;
        let b = self.batch.to_string();
        let bias_override = self.directives.bias_override.and_then(Bias::from_clause);
        let mut pools: BTreeMap<String, Vec<SeedExample>> = BTreeMap::new();
        let mut jobs = Vec::new();
        for base in &llm.settings {
            let setting = PromptSetting {
                shots: base.shots,
                bias: bias_override.unwrap_or(base.bias),
            };
            for subschema in self.targets(base)? {
                let examples = if setting.shots == 0 {
                    Vec::new()
                } else {
                    if !pools.contains_key(&subschema.id) {
                        let pool = seed_pool(
                            subschema,
                            self.catalog,
                            &config.mechanical.config,
                            config.mechanical.pool_size,
                            config.seed,
                            self.batch,
                        )?;
                        pools.insert(subschema.id.clone(), pool);
                    }
                    let seed =
                        derive_u64(config.seed, &["examples", &subschema.id, &base.label(), &b]);
                    match select_from_examples(
                        &pools[&subschema.id],
                        setting.shots,
                        setting.bias.clause(),
                        llm.bias_weight,
                        seed,
                    ) {
                        Ok(e) => e,
                        Err(_) => {
                            stats.prompt_failures += 1;
                            continue;
                        }
                    }
                };
                let filter = filter_for(self.directives, subschema);
                match build_prompt(
                    subschema,
                    self.catalog,
                    &setting,
                    &examples,
                    filter.as_ref(),
                    &llm.text,
                ) {
                    Ok(prompt) => {
                        stats.llm_prompts += 1;
                        jobs.push(Job {
                            subschema,
                            setting,
                            examples,
                            filter,
                            prompt,
                        });
                    }
                    Err(_) => stats.prompt_failures += 1,
                }
            }
        }
        Ok(jobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, setting: Option<PromptSetting>) -> QueryRecord {
        let mut r = QueryRecord::mechanical(format!("SELECT {id}"), "s", 0);
        if setting.is_some() {
            r.origin = Origin::Llm;
            r.prompt_setting = setting;
        }
        r
    }

    #[test]
    fn stratified_selection() {
        let zero = PromptSetting {
            shots: 0,
            bias: Bias::None,
        };
        let corpus = vec![
            record("1", None),
            record("2", None),
            record("3", None),
            record("4", Some(zero)),
            record("5", Some(zero)),
        ];
        let pick = |mode, size| {
            select_corpus(&corpus, &SelectionSection { mode, size })
                .iter()
                .map(|r| r.sql.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(
            pick(SelectionMode::Stratified, Some(3)),
            vec!["SELECT 1", "SELECT 4", "SELECT 2"]
        );
        assert_eq!(
            pick(SelectionMode::FirstN, Some(2)),
            vec!["SELECT 1", "SELECT 2"]
        );
        assert_eq!(pick(SelectionMode::Stratified, None).len(), 5);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::stage("s", "m").exit_code(), 1);
    }
}
