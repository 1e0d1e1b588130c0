//! Tabular summaries of pipeline outputs.

use std::collections::BTreeMap;

use crate::coverage::CoverageReport;
use crate::harness::{bucket_runtime, RuntimeBucket};
use crate::record::QueryRecord;

use super::stratum;

/// `stratum,engine,bucket,count` over the labels attached to `records`.
/// Every bucket is listed for each stratum and engine seen, zero or not.
pub fn runtime_bucket_csv(records: &[QueryRecord]) -> String {
    let mut counts: BTreeMap<(String, String), BTreeMap<RuntimeBucket, usize>> = BTreeMap::new();
    for r in records {
        for (engine, label) in &r.labels {
            let row = counts.entry((stratum(r), engine.clone())).or_default();
            *row.entry(bucket_runtime(label)).or_insert(0) += 1;
        }
    }
    let mut out = String::from("stratum,engine,bucket,count\n");
    for ((stratum, engine), row) in &counts {
        for bucket in RuntimeBucket::ALL {
            let n = row.get(&bucket).copied().unwrap_or(0);
            out.push_str(&format!("{stratum},{engine},{},{n}\n", bucket.label()));
        }
    }
    out
}

/// `setting,clause,frequency` for every report.
pub fn clause_presence_csv(reports: &[CoverageReport]) -> String {
    let mut out = String::from("setting,clause,frequency\n");
    for report in reports {
        for (clause, freq) in &report.clause_presence_freq {
            out.push_str(&format!("{},{clause},{freq:.6}\n", report.setting));
        }
    }
    out
}
