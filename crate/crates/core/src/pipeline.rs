//! End-to-end run from one config file: filter, recaption, mix, caption
//! statistics, text-embedding distance, and the metric report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_shards, FilterReport, FilterSpec, Nsfw};
use crate::embedstats::{frechet_distance, GaussianSummary, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::metrics::{
    counting_alignment, image_fid, o_fid_pipeline, positional_alignment, r_precision, soa, CountCase, EvalOptions,
    MetricReport, PaRule, PositionalCase, RetrievalPair, SoaInput, DEFAULT_DISTRACTORS,
};
use crate::modelclient::{BackendDescriptor, CaptionStyle, ImageInput, ModelBackend, StylePrefixes};
use crate::recaption::{
    mix_shards, read_bundles, recaption_corpus, CaptionBundle, CaptionSource, ManifestMeta, MixMode, MixOptions,
    RecaptionOptions, RunReport,
};
use crate::shards::{expand_inputs, read_json, write_json};
use crate::textstats::{CorpusTextReport, TextStatsAccumulator};
use crate::tokenizer::TokenizerSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// Corpus shard files or glob patterns.
    pub input: Vec<String>,
    #[serde(default = "d_min_aesthetic")]
    pub min_aesthetic: f64,
    #[serde(default = "d_max_pwatermark")]
    pub max_pwatermark: f64,
    #[serde(default = "d_nsfw")]
    pub nsfw: Vec<Nsfw>,
    #[serde(default = "d_min_dim")]
    pub min_dim: u32,
    #[serde(default = "d_holdout")]
    pub holdout: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "d_shard_size")]
    pub shard_size: usize,
}

fn d_min_aesthetic() -> f64 {
    FilterSpec::default().min_aesthetic
}
fn d_max_pwatermark() -> f64 {
    FilterSpec::default().max_pwatermark
}
fn d_nsfw() -> Vec<Nsfw> {
    FilterSpec::default().allowed_nsfw.into_iter().collect()
}
fn d_min_dim() -> u32 {
    FilterSpec::default().min_dim
}
fn d_holdout() -> usize {
    FilterSpec::default().holdout_count
}
fn d_shard_size() -> usize {
    1000
}

impl FilterSection {
    pub fn spec(&self) -> FilterSpec {
        FilterSpec {
            min_aesthetic: self.min_aesthetic,
            max_pwatermark: self.max_pwatermark,
            allowed_nsfw: self.nsfw.iter().copied().collect(),
            min_dim: self.min_dim,
            holdout_count: self.holdout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecaptionSection {
    #[serde(default = "d_styles")]
    pub styles: Vec<CaptionStyle>,
    #[serde(default)]
    pub prefixes: StylePrefixes,
    #[serde(default = "d_shard_size")]
    pub shard_size: usize,
    /// Tokenizer for the per-caption token counts stored in each bundle.
    #[serde(default = "d_tokenizer")]
    pub tokenizer: TokenizerSpec,
}

fn d_styles() -> Vec<CaptionStyle> {
    CaptionStyle::ALL.to_vec()
}
fn d_tokenizer() -> TokenizerSpec {
    TokenizerSpec::Word
}

impl Default for RecaptionSection {
    fn default() -> Self {
        Self {
            styles: d_styles(),
            prefixes: StylePrefixes::default(),
            shard_size: d_shard_size(),
            tokenizer: d_tokenizer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSection {
    #[serde(default = "d_ratios")]
    pub ratios: BTreeMap<CaptionSource, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: MixMode,
    #[serde(default = "d_tokenizer")]
    pub tokenizer: TokenizerSpec,
    #[serde(default = "d_limit")]
    pub limit: usize,
}

fn d_ratios() -> BTreeMap<CaptionSource, f64> {
    MixOptions::default().ratios
}
fn d_limit() -> usize {
    77
}

impl Default for MixSection {
    fn default() -> Self {
        Self {
            ratios: d_ratios(),
            seed: 0,
            mode: MixMode::default(),
            tokenizer: d_tokenizer(),
            limit: d_limit(),
        }
    }
}

impl MixSection {
    pub fn options(&self) -> MixOptions {
        MixOptions {
            ratios: self.ratios.clone(),
            seed: self.seed,
            mode: self.mode,
            limit: self.limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    #[serde(default = "d_fields")]
    pub fields: Vec<CaptionSource>,
    /// Reference captions, one per line, for the text-embedding distance.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

fn d_fields() -> Vec<CaptionSource> {
    CaptionSource::ALL.to_vec()
}
fn d_eps() -> f64 {
    DEFAULT_EPS
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            fields: d_fields(),
            reference: None,
            eps: d_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpSection {
    /// Caption paired with each kept image.
    #[serde(default = "d_rp_source")]
    pub source: CaptionSource,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_rp_source() -> CaptionSource {
    CaptionSource::Long
}
fn d_k() -> usize {
    DEFAULT_DISTRACTORS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSets {
    /// Image references, one per line.
    pub real: PathBuf,
    pub generated: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default)]
    pub soa: Option<PathBuf>,
    #[serde(default)]
    pub ca: Option<PathBuf>,
    #[serde(default)]
    pub pa: Option<PathBuf>,
    #[serde(default)]
    pub pa_rule: PaRule,
    #[serde(default)]
    pub rp: Option<RpSection>,
    #[serde(default)]
    pub images: Option<ImageSets>,
    #[serde(default)]
    pub fid: bool,
    #[serde(default)]
    pub o_fid: bool,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

fn d_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub filter: FilterSection,
    #[serde(default)]
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub recaption: RecaptionSection,
    #[serde(default)]
    pub mix: MixSection,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::MissingInput(p.to_path_buf()))
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.resolve_paths();
        Ok(cfg)
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        must_exist(path)?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::parse(&text, &base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self) {
        let base = self.base_dir.clone();
        if let Some(p) = self.out.as_mut() {
            resolve(&base, p);
        }
        if let Some(p) = self.backend.detections.as_mut() {
            resolve(&base, p);
        }
        for spec in [&mut self.recaption.tokenizer, &mut self.mix.tokenizer] {
            if let TokenizerSpec::Bpe(p) = spec {
                resolve(&base, p);
            }
        }
        if let Some(p) = self.stats.reference.as_mut() {
            resolve(&base, p);
        }
        let m = &mut self.metrics;
        for p in [m.soa.as_mut(), m.ca.as_mut(), m.pa.as_mut()].into_iter().flatten() {
            resolve(&base, p);
        }
        if let Some(images) = m.images.as_mut() {
            resolve(&base, &mut images.real);
            resolve(&base, &mut images.generated);
        }
    }

    pub fn inputs(&self) -> Result<Vec<PathBuf>> {
        expand_inputs(&self.filter.input, &self.base_dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter.input.is_empty() {
            return Err(Error::invalid("filter.input lists no corpus shards"));
        }
        self.inputs()?;
        self.filter.spec().validate()?;
        if self.filter.shard_size == 0 || self.recaption.shard_size == 0 {
            return Err(Error::invalid("shard_size must be at least 1"));
        }
        self.backend.validate()?;
        if let Some(p) = &self.backend.detections {
            must_exist(p)?;
        }
        if self.recaption.styles.is_empty() {
            return Err(Error::invalid("recaption.styles is empty"));
        }
        self.recaption.prefixes.validate()?;
        crate::recaption::validate_ratios(&self.mix.ratios)?;
        if self.mix.limit == 0 {
            return Err(Error::invalid("mix.limit must be at least 1"));
        }
        for spec in [&self.recaption.tokenizer, &self.mix.tokenizer] {
            if let TokenizerSpec::Bpe(p) = spec {
                must_exist(p)?;
            }
        }
        if let Some(p) = &self.stats.reference {
            must_exist(p)?;
        }
        let m = &self.metrics;
        for p in [&m.soa, &m.ca, &m.pa].into_iter().flatten() {
            must_exist(p)?;
        }
        if (m.fid || m.o_fid) && m.images.is_none() {
            return Err(Error::invalid("metrics.fid and metrics.o_fid need [metrics.images]"));
        }
        if let Some(images) = &m.images {
            must_exist(&images.real)?;
            must_exist(&images.generated)?;
        }
        if !(m.threshold.is_finite() && m.threshold > 0.0) {
            return Err(Error::invalid("metrics.threshold must be positive"));
        }
        Ok(())
    }
}

/// Embeds `texts` through the backend in fixed-size batches.
pub fn embed_texts(backend: &dyn ModelBackend, texts: &[String], batch: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch.max(1)) {
        out.extend(backend.embed_text(chunk)?);
    }
    Ok(out)
}

/// Text-embedding Gaussian of a caption set.
pub fn summarize_texts(backend: &dyn ModelBackend, texts: &[String], batch: usize) -> Result<GaussianSummary> {
    let mut summary: Option<GaussianSummary> = None;
    for chunk in texts.chunks(batch.max(1)) {
        for v in backend.embed_text(chunk)? {
            summary.get_or_insert_with(|| GaussianSummary::new(v.len())).update(&v)?;
        }
    }
    summary.ok_or_else(|| Error::invalid("no texts to embed"))
}

/// Sorted positions of a seeded uniform sample of `k` out of `n` rows, or
/// all rows when `k >= n`.
pub fn sample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Non-empty lines of a text file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    must_exist(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDistance {
    pub fd: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextDistanceReport {
    pub reference_n: u64,
    pub fields: BTreeMap<CaptionSource, FieldDistance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub filter: FilterReport,
    pub recaption: RunReport,
    pub manifest: ManifestMeta,
    pub stats: BTreeMap<CaptionSource, CorpusTextReport>,
    pub text_distance: Option<TextDistanceReport>,
    pub metrics: Option<MetricReport>,
}

fn caption_lists(bundles: &[CaptionBundle], fields: &[CaptionSource]) -> BTreeMap<CaptionSource, Vec<String>> {
    fields
        .iter()
        .map(|&f| {
            let texts = bundles.iter().filter_map(|b| b.caption(f)).map(String::from).collect();
            (f, texts)
        })
        .collect()
}

/// Runs every stage and writes under `out`:
///
/// ```text
/// filter/{kept,holdout}-NNNNN.jsonl, filter/filter_report.json
/// recaption/recap-NNNNN.jsonl, recaption/recaption_report.json
/// manifest.jsonl
/// stats/<field>.json, stats/text_distance.json
/// metrics.json
/// ```
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, workers: usize) -> Result<PipelineSummary> {
    cfg.validate()?;
    let inputs = cfg.inputs()?;
    let backend = cfg.backend.connect()?;

    let filter_dir = out.join("filter");
    let run = filter_shards(
        &inputs,
        &cfg.filter.spec(),
        cfg.filter.seed,
        cfg.filter.strict,
        &filter_dir,
        cfg.filter.shard_size,
    )?;
    write_json(&filter_dir.join("filter_report.json"), &run.report)?;
    tracing::info!(kept = run.report.kept_count, holdout = run.report.holdout_count, "filter done");

    let recap_dir = out.join("recaption");
    let count_tokenizer = cfg.recaption.tokenizer.load()?;
    let recap = recaption_corpus(
        &run.kept_paths,
        backend.as_ref(),
        &count_tokenizer,
        &RecaptionOptions {
            styles: cfg.recaption.styles.clone(),
            prefixes: cfg.recaption.prefixes.clone(),
            workers,
            shard_size: cfg.recaption.shard_size,
            strict: true,
        },
        &recap_dir,
    )?;
    write_json(&recap_dir.join("recaption_report.json"), &recap.report)?;

    let mix_tokenizer = cfg.mix.tokenizer.load()?;
    let manifest = mix_shards(
        &recap.paths,
        &cfg.mix.options(),
        &mix_tokenizer,
        &tokenizer_label(&cfg.mix.tokenizer, &cfg.base_dir),
        true,
        &out.join("manifest.jsonl"),
    )?;

    let bundles: Vec<CaptionBundle> = read_bundles(&recap.paths, true)?.collect::<Result<_>>()?;
    let lists = caption_lists(&bundles, &cfg.stats.fields);
    let stats_dir = out.join("stats");
    let mut stats = BTreeMap::new();
    for (field, texts) in &lists {
        let mut acc = TextStatsAccumulator::default();
        for t in texts {
            acc.push_text(t);
        }
        let report = acc.report();
        write_json(&stats_dir.join(format!("{}.json", field.field())), &report)?;
        stats.insert(*field, report);
    }

    let batch = cfg.backend.batch_size;
    let text_distance = match &cfg.stats.reference {
        None => None,
        Some(reference) => {
            let refs = read_lines(reference)?;
            let ref_summary = summarize_texts(backend.as_ref(), &refs, batch)?;
            let mut fields = BTreeMap::new();
            for (field, texts) in &lists {
                let s = summarize_texts(backend.as_ref(), texts, batch)?;
                fields.insert(
                    *field,
                    FieldDistance {
                        fd: frechet_distance(&s, &ref_summary, cfg.stats.eps)?,
                        n: s.count(),
                    },
                );
            }
            let report = TextDistanceReport {
                reference_n: ref_summary.count(),
                fields,
            };
            write_json(&stats_dir.join("text_distance.json"), &report)?;
            Some(report)
        }
    };

    let metrics = run_metrics(cfg, backend.as_ref(), &bundles, &run.holdout_paths, workers)?;
    if let Some(m) = &metrics {
        m.write(&out.join("metrics.json"))?;
    }

    Ok(PipelineSummary {
        filter: run.report,
        recaption: recap.report,
        manifest,
        stats,
        text_distance,
        metrics,
    })
}

/// Tokenizer name for the manifest header, with paths shown relative to
/// the config directory so headers do not depend on where the run started.
fn tokenizer_label(spec: &TokenizerSpec, base: &Path) -> String {
    match spec {
        TokenizerSpec::Bpe(p) => format!("bpe:{}", p.strip_prefix(base).unwrap_or(p).display()),
        other => other.to_string(),
    }
}

fn run_metrics(
    cfg: &PipelineConfig,
    backend: &dyn ModelBackend,
    bundles: &[CaptionBundle],
    holdout_paths: &[PathBuf],
    workers: usize,
) -> Result<Option<MetricReport>> {
    let m = &cfg.metrics;
    let mut report = MetricReport::default();
    let mut any = false;
    if let Some(p) = &m.soa {
        report = report.with_soa(&soa(&read_json::<SoaInput>(p)?)?);
        any = true;
    }
    if let Some(p) = &m.ca {
        report = report.with_ca(&counting_alignment(&read_json::<Vec<CountCase>>(p)?)?);
        any = true;
    }
    if let Some(p) = &m.pa {
        report = report.with_pa(&positional_alignment(&read_json::<Vec<PositionalCase>>(p)?, m.pa_rule)?);
        any = true;
    }
    if let Some(rp) = &m.rp {
        report = report.with_rp(&caption_r_precision(backend, bundles, holdout_paths, rp, cfg.backend.batch_size)?);
        any = true;
    }
    if let Some(images) = &m.images {
        let real = read_lines(&images.real)?;
        let generated = read_lines(&images.generated)?;
        let opts = EvalOptions {
            threshold: m.threshold,
            eps: m.eps,
            workers,
        };
        if m.fid {
            report = report.with_fid(&image_fid(&real, &generated, backend, &opts)?);
            any = true;
        }
        if m.o_fid {
            report = report.with_o_fid(&o_fid_pipeline(&real, &generated, backend, backend, &opts)?);
            any = true;
        }
    }
    Ok(any.then_some(report))
}

/// R-precision of recaptions: each kept image against its own caption, with
/// distractors drawn from the alttexts of kept and holdout records.
fn caption_r_precision(
    backend: &dyn ModelBackend,
    bundles: &[CaptionBundle],
    holdout_paths: &[PathBuf],
    rp: &RpSection,
    batch: usize,
) -> Result<crate::metrics::RpResult> {
    let with_caption: Vec<&CaptionBundle> = bundles.iter().filter(|b| b.caption(rp.source).is_some()).collect();
    let texts: Vec<String> = with_caption
        .iter()
        .map(|b| b.caption(rp.source).expect("filtered").to_string())
        .collect();
    let images: Vec<ImageInput> = with_caption.iter().map(|b| ImageInput::Ref(b.record.image_ref.clone())).collect();
    let text_vecs = embed_texts(backend, &texts, batch)?;
    let mut image_vecs = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        image_vecs.extend(backend.embed_image(chunk)?);
    }
    let pairs: Vec<RetrievalPair> = image_vecs
        .into_iter()
        .zip(text_vecs)
        .map(|(image, text)| RetrievalPair { image, text })
        .collect();

    let mut alttexts: Vec<String> = bundles.iter().map(|b| b.record.alttext.clone()).collect();
    for r in crate::corpus::read_shards(holdout_paths, true)? {
        alttexts.push(r?.alttext);
    }
    let distractors = embed_texts(backend, &alttexts, batch)?;
    r_precision(&pairs, &distractors, rp.k, rp.seed)
}
