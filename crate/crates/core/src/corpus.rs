//! Image–alttext corpus records and the aesthetic / watermark / safety /
//! resolution filter applied before recaptioning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shards::{remove_shards, ShardReader, ShardRecord, ShardWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Nsfw {
    Unlikely,
    Unsure,
    Nsfw,
}

impl Nsfw {
    pub const ALL: [Nsfw; 3] = [Nsfw::Unlikely, Nsfw::Unsure, Nsfw::Nsfw];

    pub fn as_str(self) -> &'static str {
        match self {
            Nsfw::Unlikely => "UNLIKELY",
            Nsfw::Unsure => "UNSURE",
            Nsfw::Nsfw => "NSFW",
        }
    }
}

impl FromStr for Nsfw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UNLIKELY" => Ok(Nsfw::Unlikely),
            "UNSURE" => Ok(Nsfw::Unsure),
            "NSFW" => Ok(Nsfw::Nsfw),
            other => Err(Error::invalid(format!("unknown nsfw value {other:?}"))),
        }
    }
}

impl fmt::Display for Nsfw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image with its scraped alttext and precomputed metadata scores.
///
/// The numeric metadata is optional on the wire: a row lacking any of it is
/// still a well-formed record, but the filter rejects it as `missing_field`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub image_ref: String,
    pub alttext: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pwatermark: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsfw: Option<Nsfw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl ShardRecord for CorpusRecord {
    fn id(&self) -> &str {
        &self.id
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if let Some(p) = self.pwatermark {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("pwatermark {p} outside [0,1]"));
            }
        }
        if let Some(a) = self.aesthetic {
            if !a.is_finite() {
                return Err("aesthetic is not finite".into());
            }
        }
        if self.width == Some(0) || self.height == Some(0) {
            return Err("width and height must be at least 1".into());
        }
        Ok(())
    }
}

/// Reads corpus shards in path order. See [`ShardReader`] for the strict
/// and lenient malformed-line behaviour.
pub fn read_shards<P: AsRef<Path>>(paths: &[P], strict: bool) -> Result<ShardReader<CorpusRecord>> {
    ShardReader::open(paths, strict)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Inclusive lower bound.
    pub min_aesthetic: f64,
    /// Exclusive upper bound.
    pub max_pwatermark: f64,
    pub allowed_nsfw: BTreeSet<Nsfw>,
    /// Inclusive lower bound on both width and height.
    pub min_dim: u32,
    pub holdout_count: usize,
}

impl Default for FilterSpec {
    /// The Stable Diffusion 1.2–1.4 training filter with a 10k holdout.
    fn default() -> Self {
        Self {
            min_aesthetic: 5.0,
            max_pwatermark: 0.5,
            allowed_nsfw: BTreeSet::from([Nsfw::Unlikely]),
            min_dim: 512,
            holdout_count: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    MissingField,
    Aesthetic,
    Pwatermark,
    Nsfw,
    Dims,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MissingField => "missing_field",
            RejectReason::Aesthetic => "aesthetic",
            RejectReason::Pwatermark => "pwatermark",
            RejectReason::Nsfw => "nsfw",
            RejectReason::Dims => "dims",
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_pwatermark > 0.0 && self.max_pwatermark <= 1.0) {
            return Err(Error::invalid(format!(
                "max_pwatermark must be in (0, 1], got {}",
                self.max_pwatermark
            )));
        }
        if !self.min_aesthetic.is_finite() {
            return Err(Error::invalid("min_aesthetic must be finite"));
        }
        Ok(())
    }

    /// Returns the first failing predicate, checked in the fixed order
    /// missing_field, aesthetic, pwatermark, nsfw, dims.
    pub fn check(&self, r: &CorpusRecord) -> std::result::Result<(), RejectReason> {
        let (Some(aesthetic), Some(pwatermark), Some(nsfw), Some(width), Some(height)) =
            (r.aesthetic, r.pwatermark, r.nsfw, r.width, r.height)
        else {
            return Err(RejectReason::MissingField);
        };
        if aesthetic < self.min_aesthetic {
            return Err(RejectReason::Aesthetic);
        }
        if pwatermark >= self.max_pwatermark {
            return Err(RejectReason::Pwatermark);
        }
        if !self.allowed_nsfw.contains(&nsfw) {
            return Err(RejectReason::Nsfw);
        }
        if width < self.min_dim || height < self.min_dim {
            return Err(RejectReason::Dims);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub read_count: u64,
    pub kept_count: u64,
    pub holdout_count: u64,
    pub reject_counts: BTreeMap<String, u64>,
    /// Malformed lines dropped by a lenient reader; not part of `read_count`.
    #[serde(default)]
    pub skipped_lines: u64,
}

impl FilterReport {
    pub fn rejected(&self) -> u64 {
        self.reject_counts.values().sum()
    }

    /// read = kept + holdout + rejected
    pub fn is_balanced(&self) -> bool {
        self.read_count == self.kept_count + self.holdout_count + self.rejected()
    }

    /// Field-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &FilterReport) {
        self.read_count += other.read_count;
        self.kept_count += other.kept_count;
        self.holdout_count += other.holdout_count;
        self.skipped_lines += other.skipped_lines;
        for (k, v) in &other.reject_counts {
            *self.reject_counts.entry(k.clone()).or_default() += v;
        }
    }

    fn reject(&mut self, reason: RejectReason) {
        *self.reject_counts.entry(reason.as_str().to_string()).or_default() += 1;
    }
}

/// Chooses `holdout` of `survivors` positions uniformly without replacement.
/// The result is a mask indexed by survivor position.
pub fn select_holdout(survivors: usize, holdout: usize, seed: u64) -> Result<Vec<bool>> {
    if holdout > survivors {
        return Err(Error::HoldoutTooLarge {
            requested: holdout,
            available: survivors,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; survivors];
    for i in rand::seq::index::sample(&mut rng, survivors, holdout) {
        mask[i] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<CorpusRecord>,
    pub holdout: Vec<CorpusRecord>,
    pub report: FilterReport,
}

/// In-memory filter. Survivors keep their input order in both outputs.
pub fn filter_records<I>(records: I, spec: &FilterSpec, seed: u64) -> Result<FilterOutcome>
where
    I: IntoIterator<Item = CorpusRecord>,
{
    spec.validate()?;
    let mut report = FilterReport::default();
    let mut survivors = Vec::new();
    for r in records {
        report.read_count += 1;
        match spec.check(&r) {
            Ok(()) => survivors.push(r),
            Err(reason) => report.reject(reason),
        }
    }
    let mask = select_holdout(survivors.len(), spec.holdout_count, seed)?;
    let mut out = FilterOutcome::default();
    for (r, held) in survivors.into_iter().zip(mask) {
        if held {
            out.holdout.push(r);
        } else {
            out.kept.push(r);
        }
    }
    report.kept_count = out.kept.len() as u64;
    report.holdout_count = out.holdout.len() as u64;
    out.report = report;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub report: FilterReport,
    pub kept_paths: Vec<PathBuf>,
    pub holdout_paths: Vec<PathBuf>,
}

/// Streaming two-pass filter over shard files.
///
/// The first pass counts survivors so the holdout mask can be drawn; the
/// second pass routes records to `kept-*.jsonl` and `holdout-*.jsonl` under
/// `out_dir`. Memory use is independent of corpus size apart from the mask
/// and the reader's id set.
pub fn filter_shards<P: AsRef<Path>>(
    paths: &[P],
    spec: &FilterSpec,
    seed: u64,
    strict: bool,
    out_dir: &Path,
    shard_size: usize,
) -> Result<FilterRun> {
    spec.validate()?;
    let mut survivors = 0usize;
    let mut reader = read_shards(paths, strict)?;
    for r in reader.by_ref() {
        if spec.check(&r?).is_ok() {
            survivors += 1;
        }
    }
    let mask = select_holdout(survivors, spec.holdout_count, seed)?;

    let mut report = FilterReport::default();
    remove_shards(out_dir, "kept")?;
    remove_shards(out_dir, "holdout")?;
    let mut kept = ShardWriter::new(out_dir, "kept", shard_size)?;
    let mut held = ShardWriter::new(out_dir, "holdout", shard_size)?;
    let mut reader = read_shards(paths, strict)?;
    let mut pos = 0usize;
    for r in reader.by_ref() {
        let r = r?;
        report.read_count += 1;
        match spec.check(&r) {
            Ok(()) => {
                if mask[pos] {
                    held.push(&r)?;
                    report.holdout_count += 1;
                } else {
                    kept.push(&r)?;
                    report.kept_count += 1;
                }
                pos += 1;
            }
            Err(reason) => report.reject(reason),
        }
    }
    report.skipped_lines = reader.skipped();
    Ok(FilterRun {
        report,
        kept_paths: kept.finish()?,
        holdout_paths: held.finish()?,
    })
}
