//! `EMB1` embedding files: the magic bytes `EMB1`, little-endian `u32`
//! count and `u32` dim, then `count × dim` little-endian `f32` values,
//! row-major. Nothing may follow the last row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::embedstats::GaussianSummary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

/// Rows per batch when folding a file into a summary.
const SUMMARY_CHUNK: usize = 4096;

pub fn write_embeddings(path: &Path, dim: usize, rows: &[Vec<f32>]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let count = u32::try_from(rows.len()).map_err(|_| Error::invalid("too many rows for EMB1"))?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::invalid("dimension too large for EMB1"))?;
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: r.len(),
            });
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    w.write_all(&dim32.to_le_bytes()).map_err(io)?;
    for r in rows {
        for v in r {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Row-at-a-time reader; the header is validated on open.
pub struct EmbeddingReader {
    path: PathBuf,
    reader: BufReader<File>,
    count: usize,
    dim: usize,
    read: usize,
    done: bool,
}

impl EmbeddingReader {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let expected_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut reader = BufReader::new(file);
        let mut header = [0u8; 12];
        reader
            .read_exact(&mut header)
            .map_err(|_| malformed(path, "truncated header"))?;
        if &header[..4] != MAGIC {
            return Err(malformed(path, "bad magic, expected EMB1"));
        }
        let count = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let dim = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        let body = 12 + (count as u64) * (dim as u64) * 4;
        if expected_len != body {
            return Err(malformed(
                path,
                &format!("file is {expected_len} bytes, header implies {body}"),
            ));
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            count,
            dim,
            read: 0,
            done: false,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Folds the remaining rows into a summary, batching for speed.
    pub fn summarize(self) -> Result<GaussianSummary> {
        let dim = self.dim;
        let mut total = GaussianSummary::new(dim);
        let mut batch = Vec::with_capacity(SUMMARY_CHUNK);
        for row in self {
            batch.push(row?);
            if batch.len() == SUMMARY_CHUNK {
                total = total.merge(&GaussianSummary::from_batch(dim, &batch)?)?;
                batch.clear();
            }
        }
        total.merge(&GaussianSummary::from_batch(dim, &batch)?)
    }
}

fn malformed(path: &Path, reason: &str) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line: 0,
        reason: reason.to_string(),
    }
}

impl Iterator for EmbeddingReader {
    type Item = Result<Vec<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.read == self.count {
            return None;
        }
        let mut buf = vec![0u8; self.dim * 4];
        if let Err(e) = self.reader.read_exact(&mut buf) {
            self.done = true;
            return Some(Err(Error::io(&self.path, e)));
        }
        self.read += 1;
        Some(Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()))
    }
}

/// Reads a whole file, returning `(dim, rows)`.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let reader = EmbeddingReader::open(path)?;
    let dim = reader.dim();
    let rows = reader.collect::<Result<Vec<_>>>()?;
    Ok((dim, rows))
}

pub fn summarize_file(path: &Path) -> Result<GaussianSummary> {
    EmbeddingReader::open(path)?.summarize()
}
