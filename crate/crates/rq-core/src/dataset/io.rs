//! Pool ingestion, output records, and the build manifest.

use super::{AugmentedInstance, DatasetError, PoolRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Parse a line-delimited task pool.
pub fn parse_pool(text: &str) -> Result<Vec<PoolRecord>, DatasetError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| DatasetError::BadRecord(e.to_string())))
        .collect()
}

/// Line-delimited output: one record per emitted (non-dropped) instance,
/// in input order. Byte-identical across rebuilds with identical inputs.
pub fn render_output(instances: &[AugmentedInstance]) -> String {
    let mut out = String::new();
    for instance in instances.iter().filter(|i| !i.is_dropped()) {
        out.push_str(&serde_json::to_string(instance).expect("instance serializes"));
        out.push('\n');
    }
    out
}

/// Build summary written next to the output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub total_input: usize,
    pub emitted: usize,
    /// Emitted instances per category.
    pub per_category: BTreeMap<String, usize>,
    /// Dropped instances per reason class (the part of the reason before
    /// the first `:`).
    pub drops: BTreeMap<String, usize>,
    /// Refinement turns per emitted instance → count. The empirical
    /// distribution, since no fixed turn count is assumed.
    pub turns_histogram: BTreeMap<usize, usize>,
    pub config_hash: String,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn build_manifest(
    total_input: usize,
    instances: &[AugmentedInstance],
    config_hash: String,
) -> Manifest {
    let mut per_category = BTreeMap::new();
    let mut drops = BTreeMap::new();
    let mut turns_histogram = BTreeMap::new();
    let mut emitted = 0usize;
    for instance in instances {
        match &instance.dropped_reason {
            Some(reason) => {
                let class = reason.split(':').next().unwrap_or("other").trim();
                *drops.entry(class.to_string()).or_insert(0) += 1;
            }
            None => {
                emitted += 1;
                *per_category
                    .entry(instance.raw.category.as_str().to_string())
                    .or_insert(0) += 1;
                *turns_histogram.entry(instance.steps.len()).or_insert(0) += 1;
            }
        }
    }
    Manifest {
        total_input,
        emitted,
        per_category,
        drops,
        turns_histogram,
        config_hash,
    }
}
