use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use recap_core::corpus::{filter_shards, FilterSpec, Nsfw};
use recap_core::embfile::{summarize_file, write_embeddings};
use recap_core::embedstats::{frechet_distance, DEFAULT_EPS};
use recap_core::modelclient::{CaptionStyle, StylePrefixes};
use recap_core::pipeline::{embed_texts, read_lines, run_pipeline, sample_rows, PipelineConfig};
use recap_core::recaption::{mix_shards, parse_ratios, read_bundles, recaption_corpus, CaptionSource, MixMode, MixOptions, RecaptionOptions};
use recap_core::shards::{expand_inputs, write_json};
use recap_core::textstats::TextStatsAccumulator;
use recap_core::{Error, TokenizerSpec};

use crate::BackendArgs;

pub fn inputs(patterns: &[String]) -> recap_core::Result<Vec<PathBuf>> {
    expand_inputs(patterns, Path::new(""))
}

pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> recap_core::Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect()
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Corpus shard files or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Inclusive lower bound on the aesthetic score.
    #[arg(long, default_value_t = 5.0)]
    min_aesthetic: f64,
    /// Exclusive upper bound on the watermark probability.
    #[arg(long, default_value_t = 0.5)]
    max_pwatermark: f64,
    /// Allowed NSFW labels, comma separated.
    #[arg(long, default_value = "UNLIKELY")]
    nsfw: String,
    /// Inclusive lower bound on width and height.
    #[arg(long, default_value_t = 512)]
    min_dim: u32,
    /// Survivors diverted to the holdout split.
    #[arg(long, default_value_t = 10_000)]
    holdout: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Abort on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 1000)]
    shard_size: usize,
}

pub fn filter(a: FilterArgs) -> Result<()> {
    let spec = FilterSpec {
        min_aesthetic: a.min_aesthetic,
        max_pwatermark: a.max_pwatermark,
        allowed_nsfw: parse_list::<Nsfw>(&a.nsfw)?.into_iter().collect::<BTreeSet<_>>(),
        min_dim: a.min_dim,
        holdout_count: a.holdout,
    };
    let paths = inputs(&a.input)?;
    let run = filter_shards(&paths, &spec, a.seed, a.strict, &a.out, a.shard_size)?;
    write_json(&a.out.join("filter_report.json"), &run.report)?;
    print_json(&run.report)
}

#[derive(Debug, Args)]
pub struct RecaptionArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Caption styles to generate, comma separated.
    #[arg(long, default_value = "short,long")]
    styles: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "caption briefly:")]
    short_prefix: String,
    #[arg(long, default_value = "caption in detail:")]
    long_prefix: String,
    /// Tokenizer for the stored token counts: `word` or `bpe:<merges file>`.
    #[arg(long, default_value = "word")]
    tokenizer: String,
    /// Worker threads (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    shard_size: usize,
    #[arg(long)]
    strict: bool,
}

pub fn recaption(a: RecaptionArgs) -> Result<()> {
    let backend = a.backend.descriptor()?.connect()?;
    let tokenizer = a.tokenizer.parse::<TokenizerSpec>()?.load()?;
    let opts = RecaptionOptions {
        styles: parse_list::<CaptionStyle>(&a.styles)?,
        prefixes: StylePrefixes {
            short: a.short_prefix,
            long: a.long_prefix,
        },
        workers: a.workers.unwrap_or(0),
        shard_size: a.shard_size,
        strict: a.strict,
    };
    let paths = inputs(&a.input)?;
    let run = recaption_corpus(&paths, backend.as_ref(), &tokenizer, &opts, &a.out)?;
    write_json(&a.out.join("recaption_report.json"), &run.report)?;
    eprintln!(
        "{} records, {} captions generated, {} reused, {} failed",
        run.report.records,
        run.report.generated,
        run.report.reused,
        run.report.failures.len()
    );
    print_json(&run.report)
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    /// Source weights, e.g. `short=0.5,long=0.5`.
    #[arg(long, default_value = "short=0.5,long=0.5")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `balanced` (exact quotas) or `sampled` (independent draws).
    #[arg(long, default_value = "balanced")]
    mode: String,
    /// `word` or `bpe:<merges file>`.
    #[arg(long, default_value = "word")]
    tokenizer: String,
    /// Token limit; longer captions are dropped.
    #[arg(long, default_value_t = 77)]
    limit: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict: bool,
}

pub fn mix(a: MixArgs) -> Result<()> {
    let spec: TokenizerSpec = a.tokenizer.parse()?;
    let tokenizer = spec.load()?;
    let opts = MixOptions {
        ratios: parse_ratios(&a.ratios)?,
        seed: a.seed,
        mode: a.mode.parse::<MixMode>()?,
        limit: a.limit,
    };
    let paths = inputs(&a.input)?;
    let meta = mix_shards(&paths, &opts, &tokenizer, &spec.to_string(), a.strict, &a.out)?;
    print_json(&meta)
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    /// `alttext`, `recap_short` or `recap_long`.
    #[arg(long)]
    field: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict: bool,
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let field: CaptionSource = a.field.parse()?;
    let mut acc = TextStatsAccumulator::default();
    for b in read_bundles(&inputs(&a.input)?, a.strict)? {
        if let Some(c) = b?.caption(field) {
            acc.push_text(c);
        }
    }
    let report = acc.report();
    write_json(&a.out, &report)?;
    print_json(&report)
}

#[derive(Debug, Args)]
pub struct FdArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Covariance regularization, relative to the mean diagonal.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
}

pub fn fd(a: FdArgs) -> Result<()> {
    let sa = summarize_file(&a.a)?;
    let sb = summarize_file(&a.b)?;
    println!("{}", frechet_distance(&sa, &sb, a.eps)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Record shards to read `--field` from.
    #[arg(long, num_args = 1.., conflicts_with = "lines", required_unless_present = "lines")]
    input: Vec<String>,
    #[arg(long, default_value = "alttext")]
    field: String,
    /// Plain text file, one caption per line, instead of shards.
    #[arg(long)]
    lines: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Embed a seeded uniform sample of this many captions.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn embed(a: EmbedArgs) -> Result<()> {
    let texts: Vec<String> = match &a.lines {
        Some(p) => read_lines(p)?,
        None => {
            let field: CaptionSource = a.field.parse()?;
            let mut out = Vec::new();
            for b in read_bundles(&inputs(&a.input)?, false)? {
                if let Some(c) = b?.caption(field) {
                    out.push(c.to_string());
                }
            }
            out
        }
    };
    let texts: Vec<String> = match a.sample {
        Some(k) => sample_rows(texts.len(), k, a.seed).into_iter().map(|i| texts[i].clone()).collect(),
        None => texts,
    };
    if texts.is_empty() {
        return Err(Error::Invalid("no captions to embed".into()).into());
    }
    let desc = a.backend.descriptor()?;
    let backend = desc.connect()?;
    let vectors = embed_texts(backend.as_ref(), &texts, desc.batch_size)?;
    write_embeddings(&a.out, vectors[0].len(), &vectors)?;
    eprintln!("wrote {} vectors to {}", vectors.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `workers` in the config.
    #[arg(long)]
    workers: Option<usize>,
}

pub fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let out = a
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Invalid("no output directory: pass --out or set `out` in the config".into()))?;
    let workers = a.workers.or(cfg.workers).unwrap_or(0);
    let summary = run_pipeline(&cfg, &out, workers)?;
    eprintln!(
        "kept {} of {} records, {} manifest rows ({} dropped by the token gate)",
        summary.filter.kept_count, summary.filter.read_count, summary.manifest.rows, summary.manifest.dropped
    );
    if let Some(m) = &summary.metrics {
        print_json(m)?;
    }
    Ok(())
}
