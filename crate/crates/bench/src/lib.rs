//! Benchmark tooling for the `hercules` index: random-walk datasets, query
//! workloads, the PSCAN brute-force baseline and per-query metrics.

pub mod bench;
pub mod generate;
pub mod pscan;
pub mod workload;

use std::path::Path;

use hercules::Error;

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
