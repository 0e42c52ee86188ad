use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use hercules::build::{build_index, default_db_size, BuildConfig};
use hercules::persist::{load_index, write_index, IndexSettings};
use hercules::query::{QueryConfig, ResultSet, DEFAULT_EAPCA_TH, DEFAULT_L_MAX, DEFAULT_SAX_TH};
use hercules::{raw, Error};
use hercules_bench::bench::{aggregate, read_queries, run_hook, run_workload};
use hercules_bench::generate::write_random_walks;
use hercules_bench::pscan::pscan;
use hercules_bench::workload::{generate_files, WorkloadKind, WorkloadSpec, DEFAULT_QUERIES};
use serde_json::json;

/// Exact k-NN search over data series with the Hercules index.
///
/// Every flag can also be set through an environment variable named
/// HERCULES_<FLAG>, e.g. HERCULES_THREADS=8.
#[derive(Debug, Parser)]
#[command(name = "hercules", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Noise,
    Ood,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write a z-normalized Gaussian random-walk dataset.
    Generate {
        #[arg(long, env = "HERCULES_COUNT")]
        count: usize,
        #[arg(long, env = "HERCULES_LENGTH", default_value_t = 256)]
        length: usize,
        #[arg(long, env = "HERCULES_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "HERCULES_OUT")]
        out: PathBuf,
    },
    /// Derive a query workload from a dataset.
    Workload {
        #[arg(long, env = "HERCULES_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "HERCULES_LENGTH", default_value_t = 256)]
        length: usize,
        #[arg(long, env = "HERCULES_KIND", value_enum)]
        kind: Kind,
        /// Noise variance, between 0.01 and 0.1.
        #[arg(long, env = "HERCULES_SIGMA2", required_if_eq("kind", "noise"))]
        sigma2: Option<f64>,
        #[arg(long, env = "HERCULES_COUNT", default_value_t = DEFAULT_QUERIES)]
        count: usize,
        #[arg(long, env = "HERCULES_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "HERCULES_OUT")]
        out: PathBuf,
        /// Where held-out workloads write the dataset to index.
        #[arg(long, env = "HERCULES_REDUCED_DATASET", required_if_eq("kind", "ood"))]
        reduced_dataset: Option<PathBuf>,
    },
    /// Build and write an index.
    Index {
        #[arg(long, env = "HERCULES_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "HERCULES_LENGTH", default_value_t = 256)]
        length: usize,
        #[arg(long, env = "HERCULES_LEAF_SIZE", default_value_t = 1000)]
        leaf_size: usize,
        /// In-memory series buffer, in MiB (default: whole dataset).
        #[arg(long, env = "HERCULES_BUFFER_MB")]
        buffer_mb: Option<usize>,
        /// Series per read-buffer slot.
        #[arg(long, env = "HERCULES_DBSIZE")]
        dbsize: Option<usize>,
        #[arg(long, env = "HERCULES_THREADS")]
        threads: Option<usize>,
        #[arg(long, env = "HERCULES_FLUSH_THRESHOLD")]
        flush_threshold: Option<usize>,
        /// Directory for temporary spill files (default: the output directory).
        #[arg(long, env = "HERCULES_SCRATCH")]
        scratch: Option<PathBuf>,
        #[arg(long, env = "HERCULES_OUT")]
        out: PathBuf,
    },
    /// Answer a query file against an index.
    Query {
        #[command(flatten)]
        q: QueryArgs,
        /// Write per-query metrics here as JSON lines.
        #[arg(long, env = "HERCULES_METRICS")]
        metrics: Option<PathBuf>,
    },
    /// Answer a query file by a parallel brute-force scan (PSCAN).
    Scan {
        #[arg(long, env = "HERCULES_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "HERCULES_LENGTH", default_value_t = 256)]
        length: usize,
        #[arg(long, env = "HERCULES_QUERIES")]
        queries: PathBuf,
        #[arg(long, env = "HERCULES_K", default_value_t = 1)]
        k: usize,
        #[arg(long, env = "HERCULES_THREADS")]
        threads: Option<usize>,
    },
    /// Run a workload and emit per-query and aggregate metrics.
    Bench {
        #[command(flatten)]
        q: QueryArgs,
        /// Shell command run once before the workload (e.g. to drop caches).
        #[arg(long, env = "HERCULES_PRE_HOOK")]
        pre_hook: Option<String>,
    },
}

#[derive(Debug, clap::Args)]
struct QueryArgs {
    #[arg(long, env = "HERCULES_INDEX")]
    index: PathBuf,
    #[arg(long, env = "HERCULES_QUERIES")]
    queries: PathBuf,
    #[arg(long, env = "HERCULES_K", default_value_t = 1)]
    k: usize,
    #[arg(long, env = "HERCULES_LMAX", default_value_t = DEFAULT_L_MAX)]
    lmax: usize,
    #[arg(long, env = "HERCULES_EAPCA_TH", default_value_t = DEFAULT_EAPCA_TH)]
    eapca_th: f64,
    #[arg(long, env = "HERCULES_SAX_TH", default_value_t = DEFAULT_SAX_TH)]
    sax_th: f64,
    #[arg(long, env = "HERCULES_THREADS")]
    threads: Option<usize>,
}

impl QueryArgs {
    fn config(&self) -> QueryConfig {
        QueryConfig {
            k: self.k,
            l_max: self.lmax,
            eapca_th: self.eapca_th,
            sax_th: self.sax_th,
            num_threads: self.threads.unwrap_or_else(cores),
        }
    }
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) => 1,
        Error::Io { .. } => 2,
        Error::Integrity { .. } => 3,
    }
}

fn answer_line(id: usize, res: &ResultSet) -> serde_json::Value {
    json!({
        "query": id,
        "distances": res.distances(),
        "positions": res.neighbors().iter().map(|n| n.pos).collect::<Vec<_>>(),
    })
}

fn emit(out: &mut impl Write, v: &serde_json::Value) -> hercules::Result<()> {
    writeln!(out, "{v}").map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn run(cmd: Cmd) -> hercules::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Cmd::Generate { count, length, seed, out: path } => {
            write_random_walks(&path, count, length, seed)?;
            emit(&mut out, &json!({"generated": count, "length": length, "seed": seed, "out": path}))
        }
        Cmd::Workload {
            dataset,
            length,
            kind,
            sigma2,
            count,
            seed,
            out: path,
            reduced_dataset,
        } => {
            let kind = match kind {
                Kind::Noise => WorkloadKind::Noise {
                    sigma2: sigma2.unwrap_or_default(),
                },
                Kind::Ood => WorkloadKind::OutOfDataset,
            };
            let spec = WorkloadSpec { count, kind, seed };
            generate_files(&dataset, length, &spec, &path, reduced_dataset.as_deref())?;
            emit(&mut out, &json!({"queries": count, "out": path, "reduced_dataset": reduced_dataset}))
        }
        Cmd::Index {
            dataset,
            length,
            leaf_size,
            buffer_mb,
            dbsize,
            threads,
            flush_threshold,
            scratch,
            out: dir,
        } => {
            let total = raw::series_count(&dataset, length)?;
            let threads = threads.unwrap_or_else(|| cores().max(2));
            let mut cfg = BuildConfig::for_dataset(total, threads, scratch.unwrap_or_else(|| dir.clone()));
            if let Some(d) = dbsize {
                cfg.db_size = d;
                cfg.hbuffer_series = cfg.hbuffer_series.max(d * cfg.insert_workers());
            } else {
                cfg.db_size = default_db_size(total);
            }
            if let Some(mb) = buffer_mb {
                cfg.hbuffer_series = mb * 1024 * 1024 / (length * 4);
            }
            if let Some(f) = flush_threshold {
                cfg.flush_threshold = f;
            }
            let t = Instant::now();
            let built = build_index(&dataset, IndexSettings::new(length, leaf_size)?, &cfg)?;
            let build_secs = t.elapsed().as_secs_f64();
            let report = built.report().clone();
            let t = Instant::now();
            let index = write_index(built, &dir, threads)?;
            emit(
                &mut out,
                &json!({
                    "series": total,
                    "leaves": index.tree().leaves().len(),
                    "nodes": index.tree().len(),
                    "depth": index.tree().depth(),
                    "rounds": report.rounds,
                    "flushes": report.flushes,
                    "build_time": build_secs,
                    "write_time": t.elapsed().as_secs_f64(),
                    "out": dir,
                }),
            )
        }
        Cmd::Query { q, metrics } => {
            let index = load_index(&q.index)?;
            let queries = read_queries(&q.queries, &index)?;
            let (answers, records) = run_workload(&index, &queries, q.config())?;
            for (i, res) in answers.iter().enumerate() {
                emit(&mut out, &answer_line(i, res))?;
            }
            if let Some(path) = metrics {
                let file = File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                let mut w = BufWriter::new(file);
                for r in &records {
                    writeln!(w, "{}", r.to_json()).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                }
                w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
            }
            Ok(())
        }
        Cmd::Scan {
            dataset,
            length,
            queries,
            k,
            threads,
        } => {
            let qs = raw::read_series_file(&queries, length)?;
            let rep = pscan(&dataset, length, &qs, k, threads.unwrap_or_else(cores))?;
            for (i, res) in rep.results.iter().enumerate() {
                emit(&mut out, &answer_line(i, res))?;
            }
            emit(
                &mut out,
                &json!({"type": "scan", "queries": rep.results.len(), "wall_time": rep.wall_secs, "input_time": rep.input_secs, "bytes_read": rep.bytes_read}),
            )
        }
        Cmd::Bench { q, pre_hook } => {
            if let Some(cmd) = &pre_hook {
                run_hook(cmd)?;
            }
            let index = load_index(&q.index)?;
            let queries = read_queries(&q.queries, &index)?;
            let (_, records) = run_workload(&index, &queries, q.config())?;
            for r in &records {
                emit(&mut out, &r.to_json())?;
            }
            let agg = aggregate(&records);
            if let Some(w) = &agg.warning {
                eprintln!("warning: {w}");
            }
            emit(&mut out, &agg.to_json())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
