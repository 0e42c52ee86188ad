//! Headerless little-endian binary32 series files.
//!
//! Used for datasets, query workloads, build spill files and the LRD file:
//! `count * n` floats, row-major, no header.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Decodes a little-endian f32 stream. The byte length must be a multiple of 4.
pub fn decode_f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::integrity(
            "raw series data",
            format!("{} bytes is not a whole number of f32 values", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Decodes a dataset of series of length `n`, rejecting partial series.
pub fn decode_dataset(bytes: &[u8], n: usize) -> Result<Vec<f32>> {
    if n == 0 {
        return Err(Error::Config("series length must be positive".into()));
    }
    let values = decode_f32s(bytes)?;
    if values.len() % n != 0 {
        return Err(Error::Config(format!(
            "dataset holds {} values, not a multiple of series length {n}",
            values.len()
        )));
    }
    Ok(values)
}

pub fn encode_f32s(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Reads a whole series file of length-`n` series.
pub fn read_series_file(path: &Path, n: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, n).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        Error::Integrity { reason, .. } => Error::integrity(path.display().to_string(), reason),
        other => other,
    })
}

pub fn write_series_file(path: &Path, values: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_f32s(&mut w, values).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len().min(1 << 16) * 4);
    for chunk in values.chunks(1 << 16) {
        buf.clear();
        encode_f32s(chunk, &mut buf);
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Number of length-`n` series in a file, validating its size.
pub fn series_count(path: &Path, n: usize) -> Result<usize> {
    let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    let per = n * 4;
    if n == 0 || !len.is_multiple_of(per) {
        return Err(Error::Config(format!(
            "{}: {len} bytes is not a multiple of series length {n} (x4 bytes)",
            path.display()
        )));
    }
    Ok(len / per)
}

/// Sequential chunked reader over a series file.
pub struct SeriesReader {
    file: File,
    n: usize,
    remaining: usize,
    bytes: Vec<u8>,
}

impl SeriesReader {
    pub fn open(path: &Path, n: usize) -> Result<Self> {
        let remaining = series_count(path, n)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(SeriesReader {
            file,
            n,
            remaining,
            bytes: Vec::new(),
        })
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    /// Reads up to `max` series into `out` (cleared first); returns how many.
    pub fn read_chunk(&mut self, max: usize, out: &mut Vec<f32>) -> std::io::Result<usize> {
        let count = max.min(self.remaining);
        out.clear();
        self.bytes.resize(count * self.n * 4, 0);
        self.file.read_exact(&mut self.bytes)?;
        out.extend(
            self.bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        self.remaining -= count;
        Ok(count)
    }
}
