//! Recaptioning orchestration, the context-length gate, and caption mixing
//! into training manifests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_shards, CorpusRecord};
use crate::error::{Error, Result};
use crate::modelclient::{CaptionStyle, ModelBackend, StylePrefixes};
use crate::shards::{list_shards, ShardReader, ShardRecord, ShardWriter};
use crate::tokenizer::{token_gate, Tokenizer};

pub const OUTPUT_PREFIX: &str = "recap";
const JOURNAL: &str = ".journal.jsonl";
const STAGING: &str = ".staging";

/// A corpus record with its machine captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionBundle {
    #[serde(flatten)]
    pub record: CorpusRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recap_short: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recap_long: Option<String>,
    /// Token count per present caption, keyed by source name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub token_counts: BTreeMap<CaptionSource, usize>,
}

impl ShardRecord for CaptionBundle {
    fn id(&self) -> &str {
        &self.record.id
    }

    fn validate(&self) -> std::result::Result<(), String> {
        self.record.validate()?;
        for (field, value) in [("recap_short", &self.recap_short), ("recap_long", &self.recap_long)] {
            if value.as_deref().is_some_and(|c| c.trim().is_empty()) {
                return Err(format!("{field} is empty"));
            }
        }
        Ok(())
    }
}

impl CaptionBundle {
    pub fn new(record: CorpusRecord) -> Self {
        Self {
            record,
            recap_short: None,
            recap_long: None,
            token_counts: BTreeMap::new(),
        }
    }

    pub fn caption(&self, source: CaptionSource) -> Option<&str> {
        match source {
            CaptionSource::Alttext => Some(self.record.alttext.as_str()).filter(|t| !t.trim().is_empty()),
            CaptionSource::Short => self.recap_short.as_deref(),
            CaptionSource::Long => self.recap_long.as_deref(),
        }
    }

    fn recap_mut(&mut self, style: CaptionStyle) -> &mut Option<String> {
        match style {
            CaptionStyle::Short => &mut self.recap_short,
            CaptionStyle::Long => &mut self.recap_long,
        }
    }

    pub fn recap(&self, style: CaptionStyle) -> Option<&str> {
        self.caption(style.into())
    }

    /// Recomputes `token_counts` for every present caption.
    pub fn count_tokens(&mut self, tokenizer: &Tokenizer) {
        self.token_counts = CaptionSource::ALL
            .into_iter()
            .filter_map(|s| self.caption(s).map(|c| (s, tokenizer.count(c))))
            .collect();
    }
}

pub fn read_bundles<P: AsRef<Path>>(paths: &[P], strict: bool) -> Result<ShardReader<CaptionBundle>> {
    ShardReader::open(paths, strict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    Alttext,
    Short,
    Long,
}

impl CaptionSource {
    pub const ALL: [CaptionSource; 3] = [CaptionSource::Alttext, CaptionSource::Short, CaptionSource::Long];

    pub fn as_str(self) -> &'static str {
        match self {
            CaptionSource::Alttext => "alttext",
            CaptionSource::Short => "short",
            CaptionSource::Long => "long",
        }
    }

    /// Name of the record field holding this caption.
    pub fn field(self) -> &'static str {
        match self {
            CaptionSource::Alttext => "alttext",
            CaptionSource::Short => "recap_short",
            CaptionSource::Long => "recap_long",
        }
    }
}

impl From<CaptionStyle> for CaptionSource {
    fn from(s: CaptionStyle) -> Self {
        match s {
            CaptionStyle::Short => CaptionSource::Short,
            CaptionStyle::Long => CaptionSource::Long,
        }
    }
}

impl FromStr for CaptionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "alttext" => Ok(CaptionSource::Alttext),
            "short" | "recap_short" => Ok(CaptionSource::Short),
            "long" | "recap_long" => Ok(CaptionSource::Long),
            other => Err(Error::invalid(format!("unknown caption source {other:?}"))),
        }
    }
}

impl fmt::Display for CaptionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct RecaptionOptions {
    pub styles: Vec<CaptionStyle>,
    pub prefixes: StylePrefixes,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    pub shard_size: usize,
    pub strict: bool,
}

impl Default for RecaptionOptions {
    fn default() -> Self {
        Self {
            styles: CaptionStyle::ALL.to_vec(),
            prefixes: StylePrefixes::default(),
            workers: 0,
            shard_size: 1000,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub id: String,
    pub style: CaptionStyle,
    pub error: String,
}

/// Outcome of a recaptioning run. The serialized form depends only on the
/// inputs, not on how many earlier interrupted runs contributed captions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: u64,
    pub styles: Vec<CaptionStyle>,
    pub complete: u64,
    pub failures: Vec<CaptionFailure>,
    pub skipped_lines: u64,
    /// Captions requested from the backend in this run.
    #[serde(skip)]
    pub generated: u64,
    /// Captions taken over from earlier output or the resume journal.
    #[serde(skip)]
    pub reused: u64,
}

#[derive(Debug, Clone)]
pub struct RecaptionRun {
    pub report: RunReport,
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    id: String,
    style: CaptionStyle,
    caption: String,
}

type Known = HashMap<(String, CaptionStyle), String>;

/// Captions already produced by earlier runs: complete output shards plus
/// the journal of an interrupted run. Unreadable lines are ignored; the
/// worst case is asking the backend again.
fn load_known(out_dir: &Path) -> Result<Known> {
    let mut known = Known::new();
    let existing = list_shards(out_dir, OUTPUT_PREFIX)?;
    for bundle in read_bundles(&existing, false)?.flatten() {
        for style in CaptionStyle::ALL {
            if let Some(c) = bundle.recap(style) {
                known.insert((bundle.record.id.clone(), style), c.to_string());
            }
        }
    }
    let journal = out_dir.join(JOURNAL);
    if journal.is_file() {
        let file = File::open(&journal).map_err(|e| Error::io(&journal, e))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&journal, e))?;
            if let Ok(e) = serde_json::from_str::<JournalEntry>(&line) {
                known.insert((e.id, e.style), e.caption);
            }
        }
    }
    Ok(known)
}

struct Journal {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl Journal {
    fn open(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(JOURNAL);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    fn record(&self, entry: &JournalEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry).map_err(|e| Error::json("journal entry", e))?;
        line.push('\n');
        let mut w = self.writer.lock().expect("journal lock");
        w.write_all(line.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))
}

const CHUNK: usize = 256;

/// Captions every record of `inputs` in each requested style and writes
/// `recap-NNNNN.jsonl` shards in input order under `out_dir`.
///
/// Completed captions are journaled as they arrive, so an interrupted run
/// can be restarted with the same arguments and only the missing
/// (id, style) pairs are sent to the backend. A caption that still fails
/// after the backend's retries is listed in the report and left absent.
pub fn recaption_corpus<P: AsRef<Path>>(
    inputs: &[P],
    backend: &dyn ModelBackend,
    tokenizer: &Tokenizer,
    opts: &RecaptionOptions,
    out_dir: &Path,
) -> Result<RecaptionRun> {
    if opts.styles.is_empty() {
        return Err(Error::invalid("at least one caption style is required"));
    }
    opts.prefixes.validate()?;
    let mut styles = opts.styles.clone();
    styles.sort();
    styles.dedup();

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let known = load_known(out_dir)?;
    let journal = Journal::open(out_dir)?;
    let pool = worker_pool(opts.workers)?;

    let staging = out_dir.join(STAGING);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let mut writer = ShardWriter::new(&staging, OUTPUT_PREFIX, opts.shard_size)?;
    let mut report = RunReport {
        styles: styles.clone(),
        ..RunReport::default()
    };

    let mut reader = read_shards(inputs, opts.strict)?;
    loop {
        let chunk: Vec<CorpusRecord> = reader.by_ref().take(CHUNK).collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        let done: Vec<(CaptionBundle, Vec<CaptionFailure>, u64)> = pool.install(|| {
            chunk
                .into_par_iter()
                .map(|record| caption_record(record, &styles, backend, &opts.prefixes, &known, &journal, tokenizer))
                .collect::<Result<_>>()
        })?;
        for (bundle, failures, generated) in done {
            report.records += 1;
            report.generated += generated;
            report.reused += styles.len() as u64 - generated;
            if failures.is_empty() {
                report.complete += 1;
            }
            report.failures.extend(failures);
            writer.push(&bundle)?;
        }
    }
    report.skipped_lines = reader.skipped();
    let staged = writer.finish()?;

    for stale in list_shards(out_dir, OUTPUT_PREFIX)? {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let mut paths = Vec::with_capacity(staged.len());
    for p in staged {
        let dest = out_dir.join(p.file_name().expect("shard file name"));
        fs::rename(&p, &dest).map_err(|e| Error::io(&dest, e))?;
        paths.push(dest);
    }
    fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    drop(journal);
    let journal_path = out_dir.join(JOURNAL);
    fs::remove_file(&journal_path).map_err(|e| Error::io(&journal_path, e))?;

    tracing::info!(
        records = report.records,
        generated = report.generated,
        reused = report.reused,
        failed = report.failures.len(),
        "recaptioning finished"
    );
    Ok(RecaptionRun { report, paths })
}

fn caption_record(
    record: CorpusRecord,
    styles: &[CaptionStyle],
    backend: &dyn ModelBackend,
    prefixes: &StylePrefixes,
    known: &Known,
    journal: &Journal,
    tokenizer: &Tokenizer,
) -> Result<(CaptionBundle, Vec<CaptionFailure>, u64)> {
    let mut bundle = CaptionBundle::new(record);
    let mut failures = Vec::new();
    let mut generated = 0;
    for &style in styles {
        let id = bundle.record.id.clone();
        if let Some(c) = known.get(&(id.clone(), style)) {
            *bundle.recap_mut(style) = Some(c.clone());
            continue;
        }
        generated += 1;
        match backend.caption(&bundle.record.image_ref, style, prefixes.get(style)) {
            Ok(caption) if !caption.trim().is_empty() => {
                journal.record(&JournalEntry {
                    id,
                    style,
                    caption: caption.clone(),
                })?;
                *bundle.recap_mut(style) = Some(caption);
            }
            Ok(_) => failures.push(CaptionFailure {
                id,
                style,
                error: "empty caption".into(),
            }),
            Err(e) => failures.push(CaptionFailure {
                id,
                style,
                error: e.to_string(),
            }),
        }
    }
    bundle.count_tokens(tokenizer);
    Ok((bundle, failures, generated))
}

/// Parses `short=0.5,long=0.5`.
pub fn parse_ratios(spec: &str) -> Result<BTreeMap<CaptionSource, f64>> {
    let mut out = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, weight) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("ratio {part:?} is not source=weight")))?;
        let source: CaptionSource = name.parse()?;
        let weight: f64 = weight
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("ratio weight {weight:?} is not a number")))?;
        if out.insert(source, weight).is_some() {
            return Err(Error::invalid(format!("source {source} given twice")));
        }
    }
    validate_ratios(&out)?;
    Ok(out)
}

pub fn validate_ratios(ratios: &BTreeMap<CaptionSource, f64>) -> Result<()> {
    if ratios.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("mix weights must be finite and non-negative"));
    }
    if ratios.values().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("mix weights must sum to a positive value"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    /// Exact per-source quotas, assigned to rows by a seeded shuffle.
    #[default]
    Balanced,
    /// Independent seeded weighted draw per row.
    Sampled,
}

impl FromStr for MixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "balanced" => Ok(MixMode::Balanced),
            "sampled" => Ok(MixMode::Sampled),
            other => Err(Error::invalid(format!("mix mode must be balanced or sampled, got {other:?}"))),
        }
    }
}

/// Per-source row quotas for `n` rows by the largest-remainder method.
/// Remainder ties go to the earlier source in `CaptionSource` order.
pub fn quotas(n: usize, ratios: &BTreeMap<CaptionSource, f64>) -> Result<BTreeMap<CaptionSource, usize>> {
    validate_ratios(ratios)?;
    let total: f64 = ratios.values().sum();
    let mut out = BTreeMap::new();
    let mut remainders = Vec::new();
    let mut assigned = 0;
    for (&source, &w) in ratios {
        let exact = n as f64 * w / total;
        let base = exact.floor() as usize;
        out.insert(source, base);
        assigned += base;
        remainders.push((exact - base as f64, source));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, source) in remainders.into_iter().take(n.saturating_sub(assigned)) {
        *out.get_mut(&source).expect("source present") += 1;
    }
    Ok(out)
}

/// Source assignment for `n` rows, deterministic in `seed`.
pub fn allocate_sources(
    n: usize,
    ratios: &BTreeMap<CaptionSource, f64>,
    mode: MixMode,
    seed: u64,
) -> Result<Vec<CaptionSource>> {
    validate_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        MixMode::Balanced => {
            let mut slots: Vec<CaptionSource> = quotas(n, ratios)?
                .into_iter()
                .flat_map(|(s, k)| std::iter::repeat_n(s, k))
                .collect();
            slots.shuffle(&mut rng);
            Ok(slots)
        }
        MixMode::Sampled => {
            let sources: Vec<CaptionSource> = ratios.keys().copied().collect();
            let dist = WeightedIndex::new(ratios.values().copied())
                .map_err(|e| Error::invalid(format!("mix weights: {e}")))?;
            Ok((0..n).map(|_| sources[dist.sample(&mut rng)]).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionerFinetune {
    pub steps: u32,
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: u32,
    pub short_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFinetune {
    pub steps: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub prompt_dropout: f64,
    pub sampler: String,
    pub sampling_steps: u32,
    pub guidance_scale: f64,
}

/// Training settings the manifest is meant for. Stored for provenance only;
/// nothing here is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTraining {
    pub captioner: CaptionerFinetune,
    pub text_to_image: DiffusionFinetune,
}

impl Default for ReferenceTraining {
    fn default() -> Self {
        Self {
            captioner: CaptionerFinetune {
                steps: 300,
                learning_rate: 4e-5,
                dropout: 0.1,
                batch_size: 64,
                short_fraction: 0.5,
            },
            text_to_image: DiffusionFinetune {
                steps: 250_000,
                learning_rate: 1e-5,
                batch_size: 512,
                prompt_dropout: 0.1,
                sampler: "ddim".into(),
                sampling_steps: 50,
                guidance_scale: 7.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixOptions {
    pub ratios: BTreeMap<CaptionSource, f64>,
    pub seed: u64,
    pub mode: MixMode,
    pub limit: usize,
}

impl Default for MixOptions {
    fn default() -> Self {
        Self {
            ratios: BTreeMap::from([(CaptionSource::Short, 0.5), (CaptionSource::Long, 0.5)]),
            seed: 0,
            mode: MixMode::Balanced,
            limit: 77,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_ref: String,
    pub caption: String,
    pub source: CaptionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub ratios: BTreeMap<CaptionSource, f64>,
    pub seed: u64,
    pub mode: MixMode,
    pub limit: usize,
    pub tokenizer: String,
    pub input_rows: usize,
    pub rows: usize,
    /// Rows whose chosen caption exceeded the token limit.
    pub dropped: usize,
    /// Rows whose assigned source caption was absent.
    pub skipped: usize,
    pub drop_fraction: f64,
    pub source_counts: BTreeMap<CaptionSource, usize>,
    pub reference_training: ReferenceTraining,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingManifest {
    pub meta: ManifestMeta,
    pub rows: Vec<ManifestRow>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    #[serde(rename = "_meta")]
    meta: ManifestMeta,
}

/// Streaming mixer: feed bundles in order, collect rows as they pass.
pub struct Mixer<'a> {
    assignment: Vec<CaptionSource>,
    next: usize,
    tokenizer: &'a Tokenizer,
    meta: ManifestMeta,
}

impl<'a> Mixer<'a> {
    pub fn new(n: usize, opts: &MixOptions, tokenizer: &'a Tokenizer, tokenizer_name: &str) -> Result<Self> {
        if opts.limit == 0 {
            return Err(Error::invalid("token limit must be at least 1"));
        }
        Ok(Self {
            assignment: allocate_sources(n, &opts.ratios, opts.mode, opts.seed)?,
            next: 0,
            tokenizer,
            meta: ManifestMeta {
                ratios: opts.ratios.clone(),
                seed: opts.seed,
                mode: opts.mode,
                limit: opts.limit,
                tokenizer: tokenizer_name.to_string(),
                input_rows: n,
                rows: 0,
                dropped: 0,
                skipped: 0,
                drop_fraction: 0.0,
                source_counts: BTreeMap::new(),
                reference_training: ReferenceTraining::default(),
            },
        })
    }

    pub fn push(&mut self, bundle: &CaptionBundle) -> Result<Option<ManifestRow>> {
        let source = *self
            .assignment
            .get(self.next)
            .ok_or_else(|| Error::invalid(format!("more bundles than the {} announced", self.assignment.len())))?;
        self.next += 1;
        let Some(caption) = bundle.caption(source) else {
            self.meta.skipped += 1;
            return Ok(None);
        };
        if !token_gate(caption, self.tokenizer, self.meta.limit)?.kept {
            self.meta.dropped += 1;
            return Ok(None);
        }
        self.meta.rows += 1;
        *self.meta.source_counts.entry(source).or_default() += 1;
        Ok(Some(ManifestRow {
            image_ref: bundle.record.image_ref.clone(),
            caption: caption.to_string(),
            source,
        }))
    }

    pub fn finish(mut self) -> Result<ManifestMeta> {
        if self.next != self.assignment.len() {
            return Err(Error::invalid(format!(
                "expected {} bundles, got {}",
                self.assignment.len(),
                self.next
            )));
        }
        if self.meta.rows == 0 {
            return Err(Error::AllRowsDropped {
                dropped: self.meta.dropped,
                skipped: self.meta.skipped,
            });
        }
        let gated = self.meta.rows + self.meta.dropped;
        self.meta.drop_fraction = self.meta.dropped as f64 / gated as f64;
        Ok(self.meta)
    }
}

pub fn mix_captions(
    bundles: &[CaptionBundle],
    opts: &MixOptions,
    tokenizer: &Tokenizer,
    tokenizer_name: &str,
) -> Result<TrainingManifest> {
    let mut mixer = Mixer::new(bundles.len(), opts, tokenizer, tokenizer_name)?;
    let mut rows = Vec::new();
    for b in bundles {
        rows.extend(mixer.push(b)?);
    }
    Ok(TrainingManifest {
        meta: mixer.finish()?,
        rows,
    })
}

/// Mixes recaptioned shards straight to a manifest file. Two passes over
/// the input: one to count rows, one to assign and gate.
pub fn mix_shards<P: AsRef<Path>>(
    inputs: &[P],
    opts: &MixOptions,
    tokenizer: &Tokenizer,
    tokenizer_name: &str,
    strict: bool,
    out: &Path,
) -> Result<ManifestMeta> {
    let mut n = 0;
    for b in read_bundles(inputs, strict)? {
        b?;
        n += 1;
    }
    let mut mixer = Mixer::new(n, opts, tokenizer, tokenizer_name)?;
    let mut rows = Vec::new();
    for b in read_bundles(inputs, strict)? {
        rows.extend(mixer.push(&b?)?);
    }
    let manifest = TrainingManifest {
        meta: mixer.finish()?,
        rows,
    };
    write_manifest(out, &manifest)?;
    Ok(manifest.meta)
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::json(path.display().to_string(), e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn write_manifest(path: &Path, manifest: &TrainingManifest) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_line(&mut w, path, &MetaLine { meta: manifest.meta.clone() })?;
    for row in &manifest.rows {
        write_line(&mut w, path, row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<TrainingManifest> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let malformed = |line: usize, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let header = lines
        .next()
        .ok_or_else(|| malformed(1, "missing _meta header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let meta: MetaLine = serde_json::from_str(&header).map_err(|e| malformed(1, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| malformed(i + 2, e.to_string()))?);
    }
    Ok(TrainingManifest { meta: meta.meta, rows })
}
