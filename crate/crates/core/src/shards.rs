//! Line-delimited JSON shard reading and writing.
//!
//! Readers yield records in file order, shards in the order given. A
//! malformed line either aborts the stream (strict) or is counted and
//! skipped (lenient). Writers split output into fixed-size shard files and
//! remove everything they wrote if any write fails.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// A row type stored in a shard file.
pub trait ShardRecord: DeserializeOwned {
    fn id(&self) -> &str;

    /// Checks field-level invariants after parsing.
    fn validate(&self) -> std::result::Result<(), String> {
        Ok(())
    }
}

pub struct ShardReader<T> {
    paths: Vec<PathBuf>,
    next_path: usize,
    current: Option<(PathBuf, std::io::Lines<BufReader<File>>, usize)>,
    strict: bool,
    skipped: u64,
    seen: HashSet<String>,
    failed: bool,
    _marker: PhantomData<T>,
}

impl<T: ShardRecord> ShardReader<T> {
    /// Opens every path up front so a missing shard fails before any record
    /// is produced.
    pub fn open<P: AsRef<Path>>(paths: &[P], strict: bool) -> Result<Self> {
        let paths: Vec<PathBuf> = paths.iter().map(|p| p.as_ref().to_path_buf()).collect();
        for p in &paths {
            if !p.is_file() {
                return Err(Error::MissingInput(p.clone()));
            }
        }
        Ok(Self {
            paths,
            next_path: 0,
            current: None,
            strict,
            skipped: 0,
            seen: HashSet::new(),
            failed: false,
            _marker: PhantomData,
        })
    }

    /// Number of malformed lines skipped so far (lenient mode only).
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn parse_line(&mut self, line: &str) -> std::result::Result<T, String> {
        let rec: T = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if rec.id().is_empty() {
            return Err("empty id".into());
        }
        rec.validate()?;
        if !self.seen.insert(rec.id().to_string()) {
            return Err(format!("duplicate id {:?}", rec.id()));
        }
        Ok(rec)
    }
}

impl<T: ShardRecord> Iterator for ShardReader<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if self.current.is_none() {
                let path = self.paths.get(self.next_path)?.clone();
                self.next_path += 1;
                let file = match File::open(&path) {
                    Ok(f) => f,
                    Err(e) => {
                        self.failed = true;
                        return Some(Err(Error::io(path, e)));
                    }
                };
                self.current = Some((path, BufReader::new(file).lines(), 0));
            }
            let (path, lines, lineno) = self.current.as_mut().expect("current shard");
            let line = match lines.next() {
                None => {
                    self.current = None;
                    continue;
                }
                Some(Err(e)) => {
                    self.failed = true;
                    return Some(Err(Error::io(path.clone(), e)));
                }
                Some(Ok(line)) => line,
            };
            *lineno += 1;
            if line.trim().is_empty() {
                continue;
            }
            let (path, lineno) = (path.clone(), *lineno);
            match self.parse_line(&line) {
                Ok(rec) => return Some(Ok(rec)),
                Err(reason) if self.strict => {
                    self.failed = true;
                    return Some(Err(Error::Malformed {
                        path,
                        line: lineno,
                        reason,
                    }));
                }
                Err(reason) => {
                    tracing::debug!(path = %path.display(), line = lineno, %reason, "skipping malformed line");
                    self.skipped += 1;
                }
            }
        }
    }
}

/// Streams records into `<prefix>-NNNNN.jsonl` files of `shard_size` rows.
pub struct ShardWriter {
    out_dir: PathBuf,
    prefix: String,
    shard_size: usize,
    written: Vec<PathBuf>,
    current: Option<BufWriter<File>>,
    in_current: usize,
}

impl ShardWriter {
    pub fn new(out_dir: impl Into<PathBuf>, prefix: &str, shard_size: usize) -> Result<Self> {
        if shard_size == 0 {
            return Err(Error::invalid("shard_size must be at least 1"));
        }
        let out_dir = out_dir.into();
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Self {
            out_dir,
            prefix: prefix.to_string(),
            shard_size,
            written: Vec::new(),
            current: None,
            in_current: 0,
        })
    }

    pub fn push<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let res = self.push_inner(record);
        if res.is_err() {
            self.cleanup();
        }
        res
    }

    fn push_inner<T: Serialize>(&mut self, record: &T) -> Result<()> {
        if self.current.is_none() || self.in_current == self.shard_size {
            self.flush_current()?;
            let path = self
                .out_dir
                .join(format!("{}-{:05}.jsonl", self.prefix, self.written.len()));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.written.push(path);
            self.current = Some(BufWriter::new(file));
            self.in_current = 0;
        }
        let path = self.written.last().expect("open shard").clone();
        let w = self.current.as_mut().expect("open shard");
        serde_json::to_writer(&mut *w, record).map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        self.in_current += 1;
        Ok(())
    }

    fn flush_current(&mut self) -> Result<()> {
        if let Some(mut w) = self.current.take() {
            let path = self.written.last().expect("open shard");
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    fn cleanup(&mut self) {
        self.current = None;
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }

    /// Flushes the last shard and returns every path written, in order.
    pub fn finish(mut self) -> Result<Vec<PathBuf>> {
        if let Err(e) = self.flush_current() {
            self.cleanup();
            return Err(e);
        }
        Ok(std::mem::take(&mut self.written))
    }
}

pub fn write_shards<'a, T, I>(records: I, out_dir: &Path, prefix: &str, shard_size: usize) -> Result<Vec<PathBuf>>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut writer = ShardWriter::new(out_dir, prefix, shard_size)?;
    for r in records {
        writer.push(r)?;
    }
    writer.finish()
}

/// Writes `value` as pretty JSON, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Resolves input arguments to files. Each pattern is taken relative to
/// `base` when not absolute; patterns with glob metacharacters expand to
/// their sorted matches and must match something.
pub fn expand_inputs<S: AsRef<str>>(patterns: &[S], base: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = Vec::new();
    for pattern in patterns {
        let pattern = pattern.as_ref();
        let full = if Path::new(pattern).is_absolute() {
            PathBuf::from(pattern)
        } else {
            base.join(pattern)
        };
        let matches: Vec<PathBuf> = if pattern.contains(['*', '?', '[']) {
            let text = full.to_string_lossy().into_owned();
            let paths = glob::glob(&text).map_err(|e| Error::invalid(format!("bad glob {pattern:?}: {e}")))?;
            let mut found: Vec<PathBuf> = paths.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect();
            found.sort();
            if found.is_empty() {
                return Err(Error::MissingInput(full));
            }
            found
        } else if full.is_file() {
            vec![full]
        } else {
            return Err(Error::MissingInput(full));
        };
        for m in matches {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    Ok(out)
}

/// `<prefix>-*.jsonl` files directly under `dir`, sorted.
pub fn list_shards(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let head = format!("{prefix}-");
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&head) && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Deletes the `<prefix>-*.jsonl` shards of an earlier run.
pub fn remove_shards(dir: &Path, prefix: &str) -> Result<()> {
    for p in list_shards(dir, prefix)? {
        fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
