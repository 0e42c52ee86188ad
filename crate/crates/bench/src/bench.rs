//! Running a query workload against an index and summarizing the timings.

use std::path::Path;
use std::process::Command;

use hercules::persist::Index;
use hercules::query::{QueryConfig, QueryEngine, QueryStats, ResultSet};
use hercules::raw;
use hercules::{Error, Result};
use serde_json::{json, Value};

/// Best and worst queries (by wall time) left out of the aggregate.
pub const DISCARD_EACH_SIDE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: usize,
    pub k: usize,
    pub stats: QueryStats,
}

impl QueryRecord {
    pub fn to_json(&self) -> Value {
        let s = &self.stats;
        json!({
            "type": "query",
            "query": self.id,
            "k": self.k,
            "phase": s.phase.label(),
            "eapca_pr": s.eapca_pr,
            "sax_pr": s.sax_pr,
            "leaves_visited": s.leaves_visited,
            "candidate_leaves": s.candidate_leaves,
            "candidate_series": s.candidate_series,
            "bytes_read": s.bytes_read,
            "fraction_data_accessed": s.fraction_accessed,
            "wall_time": s.wall_secs,
            "input_time": s.input_secs,
            "cpu_time": s.cpu_secs(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub queries: usize,
    /// Queries the means are taken over.
    pub used: usize,
    pub mean_wall: f64,
    pub mean_input: f64,
    pub mean_cpu: f64,
    pub mean_fraction_accessed: f64,
    pub warning: Option<String>,
}

impl Aggregate {
    pub fn to_json(&self) -> Value {
        json!({
            "type": "aggregate",
            "queries": self.queries,
            "used": self.used,
            "mean_wall_time": self.mean_wall,
            "mean_input_time": self.mean_input,
            "mean_cpu_time": self.mean_cpu,
            "mean_fraction_data_accessed": self.mean_fraction_accessed,
            "warning": self.warning,
        })
    }
}

/// Means over all queries except the 5 fastest and 5 slowest; with fewer
/// than 11 queries every query is used and a warning is attached.
pub fn aggregate(records: &[QueryRecord]) -> Aggregate {
    let mut sorted: Vec<&QueryRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.stats.wall_secs.total_cmp(&b.stats.wall_secs));
    let (used, warning) = if records.len() > 2 * DISCARD_EACH_SIDE {
        (&sorted[DISCARD_EACH_SIDE..sorted.len() - DISCARD_EACH_SIDE], None)
    } else {
        (
            &sorted[..],
            Some(format!(
                "{} queries: too few to discard the {DISCARD_EACH_SIDE} best and worst, averaging all",
                records.len()
            )),
        )
    };
    let mean = |f: fn(&QueryStats) -> f64| {
        if used.is_empty() {
            0.0
        } else {
            used.iter().map(|r| f(&r.stats)).sum::<f64>() / used.len() as f64
        }
    };
    Aggregate {
        queries: records.len(),
        used: used.len(),
        mean_wall: mean(|s| s.wall_secs),
        mean_input: mean(|s| s.input_secs),
        mean_cpu: mean(QueryStats::cpu_secs),
        mean_fraction_accessed: mean(|s| s.fraction_accessed),
        warning,
    }
}

/// Runs an optional shell command (e.g. one that drops the OS page cache).
pub fn run_hook(cmd: &str) -> Result<()> {
    let status = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .status()
        .map_err(|e| Error::Config(format!("cannot run hook `{cmd}`: {e}")))?;
    if !status.success() {
        return Err(Error::Config(format!("hook `{cmd}` failed with {status}")));
    }
    Ok(())
}

/// Reads a query file whose series length must match the index.
pub fn read_queries(path: &Path, index: &Index) -> Result<Vec<f32>> {
    let n = index.settings().series_len;
    raw::read_series_file(path, n).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("queries do not match index series length {n}: {msg}")),
        other => other,
    })
}

/// Runs every query sequentially and returns answers and per-query records.
pub fn run_workload(index: &Index, queries: &[f32], cfg: QueryConfig) -> Result<(Vec<ResultSet>, Vec<QueryRecord>)> {
    let n = index.settings().series_len;
    if !queries.len().is_multiple_of(n) {
        return Err(Error::Config(format!("query data is not a multiple of series length {n}")));
    }
    let engine = QueryEngine::new(index, cfg)?;
    let mut answers = Vec::new();
    let mut records = Vec::new();
    for (id, q) in queries.chunks_exact(n).enumerate() {
        let (res, stats) = engine.knn(q)?;
        answers.push(res);
        records.push(QueryRecord { id, k: cfg.k, stats });
    }
    Ok((answers, records))
}
