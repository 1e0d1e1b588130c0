//! The dataset row and the JSONL files that hold it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coverage::ComplexityProfile;
use crate::harness::RuntimeLabel;
use crate::llm::{GenParams, PromptSetting};
use crate::schema::ColumnFilter;

/// Version written in the header line of every JSONL file.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Mechanical,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionCode {
    Syntax,
    UnknownObject,
    LabelArithmetic,
    EnumLiteralViolation,
    Duplicate,
    UsesWrongTables,
}

impl RejectionCode {
    pub const ALL: [RejectionCode; 6] = [
        RejectionCode::Syntax,
        RejectionCode::UnknownObject,
        RejectionCode::LabelArithmetic,
        RejectionCode::EnumLiteralViolation,
        RejectionCode::Duplicate,
        RejectionCode::UsesWrongTables,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectionCode::Syntax => "syntax",
            RejectionCode::UnknownObject => "unknown_object",
            RejectionCode::LabelArithmetic => "label_arithmetic",
            RejectionCode::EnumLiteralViolation => "enum_literal_violation",
            RejectionCode::Duplicate => "duplicate",
            RejectionCode::UsesWrongTables => "uses_wrong_tables",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub query_id: String,
    pub verdict: Verdict,
    pub rejection_reasons: Vec<RejectionCode>,
    pub normalized_form: String,
}

impl ValidationReport {
    pub fn new(query_id: String, mut reasons: Vec<RejectionCode>, normalized_form: String) -> Self {
        reasons.sort();
        reasons.dedup();
        let verdict = if reasons.is_empty() {
            Verdict::Accepted
        } else {
            Verdict::Rejected
        };
        ValidationReport {
            query_id,
            verdict,
            rejection_reasons: reasons,
            normalized_form,
        }
    }

    pub fn reject(&mut self, code: RejectionCode) {
        if !self.rejection_reasons.contains(&code) {
            self.rejection_reasons.push(code);
            self.rejection_reasons.sort();
        }
        self.verdict = Verdict::Rejected;
    }

    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }
}

/// One generated query with everything needed to audit and reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// `query_id(sql)`.
    pub id: String,
    pub sql: String,
    pub origin: Origin,
    pub subschema_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_setting: Option<PromptSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_params: Option<GenParams>,
    /// Ids of the seed examples shown in the prompt, in prompt order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub example_ids: Vec<String>,
    /// Column restriction applied to the prompt's CREATE statements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_filter: Option<ColumnFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ComplexityProfile>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, RuntimeLabel>,
    #[serde(default)]
    pub batch: u32,
}

impl QueryRecord {
    pub fn mechanical(sql: String, subschema_id: &str, batch: u32) -> Self {
        QueryRecord {
            id: crate::sql::query_id(&sql),
            sql,
            origin: Origin::Mechanical,
            subschema_id: subschema_id.to_string(),
            prompt_setting: None,
            prompt_hash: None,
            model_name: None,
            generation_params: None,
            example_ids: Vec::new(),
            column_filter: None,
            validation: None,
            profile: None,
            labels: BTreeMap::new(),
            batch,
        }
    }

    pub fn accepted(&self) -> bool {
        self.validation
            .as_ref()
            .is_some_and(ValidationReport::accepted)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
}

/// Writes a header line `{"schema_version":..,"kind":..}` and one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, kind: &str, items: &[T]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads a file written by [`write_jsonl`], checking the header's kind and version.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> io::Result<Vec<T>> {
    let invalid = |m: String| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: {m}", path.display()),
        )
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| invalid("empty file".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| invalid(format!("bad header: {e}")))?;
    if header.kind != kind {
        return Err(invalid(format!(
            "expected {kind} records, found {}",
            header.kind
        )));
    }
    if header.schema_version != SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema version {}",
            header.schema_version
        )));
    }
    let mut items = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|e| invalid(format!("line {}: {e}", n + 2)))?,
        );
    }
    Ok(items)
}
