use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::coverage::CoverageTargets;
use crate::harness::{EngineSpec, DEFAULT_MIN_EMPTY_RUNTIME_MS, DEFAULT_TIMEOUT_MS};
use crate::llm::{GenParams, HttpBackendConfig, PromptSetting, PromptText};
use crate::mechgen::MechConfig;
use crate::schema::{FkInferenceConfig, ProfileConfig};
use crate::subschema::SubschemaPolicy;
use crate::validate::ValidatorConfig;

/// Everything a pipeline run needs. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Regeneration rounds after the first batch.
    #[serde(default)]
    pub loop_limit: u32,
    /// Stop once this many queries are kept.
    #[serde(default)]
    pub kept_target: Option<usize>,
    pub schema: SchemaSection,
    #[serde(default)]
    pub subschemas: SubschemaSection,
    #[serde(default)]
    pub mechanical: MechanicalSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub validator: ValidatorConfig,
    #[serde(default)]
    pub coverage: CoverageTargets,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub execution: ExecutionSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSection {
    pub ddl: PathBuf,
    #[serde(default = "default_schema_name")]
    pub name: String,
    #[serde(default)]
    pub inference: FkInferenceConfig,
    /// Directory of `<table>.tbl` / `<table>.csv` files to profile columns from.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub profile: ProfileConfig,
}

fn default_schema_name() -> String {
    "schema".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubschemaSection {
    pub policy: SubschemaPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanicalSection {
    /// Put mechanical queries in the corpus; they are always used as seed examples.
    pub include_in_corpus: bool,
    /// Subschemas drawn per batch; all of them when absent.
    pub subschemas_per_batch: Option<usize>,
    pub queries_per_subschema: usize,
    /// Size of the per-subschema pool seed examples are drawn from.
    pub pool_size: usize,
    pub config: MechConfig,
}

impl Default for MechanicalSection {
    fn default() -> Self {
        MechanicalSection {
            include_in_corpus: true,
            subschemas_per_batch: None,
            queries_per_subschema: 5,
            pool_size: 20,
            config: MechConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSection {
    /// Canned completions from a directory (see `StubBackend`).
    Stub {
        dir: PathBuf,
    },
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub enabled: bool,
    pub settings: Vec<PromptSetting>,
    /// Subschemas prompted per setting and batch.
    pub prompts_per_setting: usize,
    /// Prompt only these table sets instead of sampling subschemas.
    pub only_subschemas: Vec<Vec<String>>,
    /// Probability that a seed example carries the biased clause.
    pub bias_weight: f64,
    pub params: GenParams,
    pub text: PromptText,
    pub max_in_flight: usize,
    /// Extra attempts for a prompt whose backend error is retryable.
    pub retries: u32,
    pub backend: Option<BackendSection>,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            enabled: false,
            settings: PromptSetting::canonical(),
            prompts_per_setting: 5,
            only_subschemas: Vec::new(),
            bias_weight: 0.9,
            params: GenParams::default(),
            text: PromptText::default(),
            max_in_flight: 4,
            retries: 2,
            backend: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// The first `size` kept queries.
    FirstN,
    /// Round-robin over origins and prompt settings, in corpus order.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub mode: SelectionMode,
    /// Everything when absent.
    pub size: Option<usize>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            mode: SelectionMode::Stratified,
            size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionSection {
    pub enabled: bool,
    pub timeout_ms: u64,
    pub min_empty_runtime_ms: f64,
    pub engines: Vec<EngineSpec>,
}

impl Default for ExecutionSection {
    fn default() -> Self {
        ExecutionSection {
            enabled: false,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            min_empty_runtime_ms: DEFAULT_MIN_EMPTY_RUNTIME_MS,
            engines: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Reads a config file. Paths stay as written; see [`PipelineConfig::resolved`].
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// A copy with relative paths joined onto `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let mut out = self.clone();
        out.resolve_paths(base);
        out
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.schema.ddl);
        if let Some(d) = &mut self.schema.data_dir {
            fix(d);
        }
        if let Some(BackendSection::Stub { dir }) = &mut self.llm.backend {
            fix(dir);
        }
        for engine in &mut self.execution.engines {
            if let crate::harness::DriverSpec::Sqlite {
                database, data_dir, ..
            } = &mut engine.driver
            {
                if let Some(d) = database {
                    fix(d);
                }
                if let Some(d) = data_dir {
                    fix(d);
                }
            }
        }
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.mechanical
            .config
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.mechanical.queries_per_subschema == 0 && self.mechanical.include_in_corpus {
            return bad("mechanical.queries_per_subschema must be at least 1".into());
        }
        if self.subschemas.policy.min_tables == 0 {
            return bad("subschemas.policy.min_tables must be at least 1".into());
        }
        if self.llm.enabled {
            self.llm
                .params
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            if self.llm.backend.is_none() {
                return bad("llm.enabled needs an llm.backend section".into());
            }
            if !(0.0..=1.0).contains(&self.llm.bias_weight) {
                return bad(format!(
                    "llm.bias_weight {} is outside [0, 1]",
                    self.llm.bias_weight
                ));
            }
            let max_shots = self.llm.settings.iter().map(|s| s.shots).max().unwrap_or(0);
            if max_shots > self.mechanical.pool_size {
                return bad(format!(
                    "a {max_shots}-shot setting needs mechanical.pool_size >= {max_shots}"
                ));
            }
        }
        if self.execution.enabled {
            if self.execution.engines.is_empty() {
                return bad("execution.enabled needs at least one engine".into());
            }
            if self.execution.timeout_ms == 0 {
                return bad("execution.timeout_ms must be positive".into());
            }
            let mut ids: Vec<&str> = self
                .execution
                .engines
                .iter()
                .map(|e| e.engine_id.as_str())
                .collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return bad("engine ids must be unique".into());
            }
        }
        Ok(())
    }
}
