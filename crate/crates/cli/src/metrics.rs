use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};

use recap_core::embedstats::DEFAULT_EPS;
use recap_core::embfile::read_embeddings;
use recap_core::metrics::{
    count_case_from_detections, counting_alignment, fid_pipeline, o_fid_pipeline, positional_alignment, positional_case,
    r_precision, soa, soa_input_from_detections, CountCase, EvalOptions, MetricReport, PositionalCase, RetrievalPair,
    SoaInput, DEFAULT_DISTRACTORS,
};
use recap_core::modelclient::{ImageInput, ModelBackend};
use recap_core::pipeline::read_lines;
use recap_core::shards::read_json;
use recap_core::{ClassVocabulary, CueVocabulary, Error, PaRule};

use crate::commands::print_json;
use crate::BackendArgs;

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Object-presence accuracy (SOA-C and SOA-I).
    Soa(SoaArgs),
    /// Counting alignment.
    Ca(CaArgs),
    /// Positional alignment.
    Pa(PaArgs),
    /// R-precision from image, text and distractor embeddings.
    Rp(RpArgs),
    /// FID between two embedding files.
    Fid(FidArgs),
    /// FID over detector crops.
    Ofid(OfidArgs),
    /// Merge several metric reports into one.
    Combine(CombineArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the metric report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append `step,metric,value` rows to this CSV file.
    #[arg(long)]
    emit_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    step: u64,
}

impl OutputArgs {
    fn emit(&self, report: &MetricReport) -> Result<()> {
        report.validate()?;
        if let Some(p) = &self.out {
            report.write(p)?;
        }
        if let Some(p) = &self.emit_csv {
            report.append_csv(p, self.step)?;
        }
        print_json(report)
    }
}

/// Prompts keyed by image reference (JSON object).
fn read_prompts(path: &Path) -> Result<Vec<(String, String)>> {
    let map: BTreeMap<String, String> = read_json(path)?;
    Ok(map.into_iter().collect())
}

fn detections_for(
    backend: &dyn ModelBackend,
    prompts: &[(String, String)],
) -> recap_core::Result<BTreeMap<String, Vec<recap_core::Detection>>> {
    prompts
        .iter()
        .map(|(image, _)| Ok((image.clone(), backend.detect(image)?)))
        .collect()
}

#[derive(Debug, Args)]
pub struct SoaArgs {
    /// Precomputed observations: class -> [{image, detected}].
    #[arg(long, conflicts_with = "prompts", required_unless_present = "prompts")]
    input: Option<PathBuf>,
    /// Prompts keyed by generated image reference; detections come from the backend.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Class vocabulary (TSV); defaults to the 80 COCO classes.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CaArgs {
    /// Precomputed cases: [{expected, detected}].
    #[arg(long, conflicts_with = "prompts", required_unless_present = "prompts")]
    input: Option<PathBuf>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PaArgs {
    /// Precomputed cases: [{original, swapped: [..]}].
    #[arg(long, conflicts_with = "prompts", required_unless_present = "prompts")]
    input: Option<PathBuf>,
    /// Prompts keyed by generated image reference; scores come from the backend.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Positional cue list; defaults to the bundled cues.
    #[arg(long)]
    cues: Option<PathBuf>,
    /// `strict` or `allow-ties`.
    #[arg(long, default_value = "strict")]
    pa_rule: String,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RpArgs {
    /// Image embeddings, row i paired with text row i.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    texts: PathBuf,
    /// Distractor text embeddings.
    #[arg(long)]
    distractors: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DISTRACTORS)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct FidArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OfidArgs {
    /// Real image references, one per line.
    #[arg(long)]
    real: PathBuf,
    /// Generated image references, one per line.
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[arg(required = true, num_args = 1..)]
    reports: Vec<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

pub fn run(cmd: MetricsCommand) -> Result<()> {
    match cmd {
        MetricsCommand::Soa(a) => {
            let input = match (&a.input, &a.prompts) {
                (Some(p), _) => read_json::<SoaInput>(p)?,
                (None, Some(p)) => {
                    let prompts = read_prompts(p)?;
                    let backend = a.backend.descriptor()?.connect()?;
                    let detections = detections_for(backend.as_ref(), &prompts)?;
                    let owned;
                    let vocab = match &a.classes {
                        Some(c) => {
                            owned = ClassVocabulary::load(c)?;
                            &owned
                        }
                        None => ClassVocabulary::bundled(),
                    };
                    soa_input_from_detections(&prompts, &detections, vocab, a.threshold)
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            a.output.emit(&MetricReport::default().with_soa(&soa(&input)?))
        }
        MetricsCommand::Ca(a) => {
            let cases = match (&a.input, &a.prompts) {
                (Some(p), _) => read_json::<Vec<CountCase>>(p)?,
                (None, Some(p)) => {
                    let prompts = read_prompts(p)?;
                    let backend = a.backend.descriptor()?.connect()?;
                    let detections = detections_for(backend.as_ref(), &prompts)?;
                    prompts
                        .iter()
                        .filter_map(|(image, prompt)| count_case_from_detections(prompt, &detections[image], a.threshold))
                        .collect()
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            a.output.emit(&MetricReport::default().with_ca(&counting_alignment(&cases)?))
        }
        MetricsCommand::Pa(a) => {
            let rule: PaRule = a.pa_rule.parse()?;
            let cases = match (&a.input, &a.prompts) {
                (Some(p), _) => read_json::<Vec<PositionalCase>>(p)?,
                (None, Some(p)) => {
                    let prompts = read_prompts(p)?;
                    let backend = a.backend.descriptor()?.connect()?;
                    let owned;
                    let cues = match &a.cues {
                        Some(c) => {
                            owned = CueVocabulary::load(c)?;
                            &owned
                        }
                        None => CueVocabulary::bundled(),
                    };
                    let mut cases = Vec::new();
                    for (image, prompt) in &prompts {
                        let input = ImageInput::Ref(image.clone());
                        if let Some(c) = positional_case(backend.as_ref(), &input, prompt, cues)? {
                            cases.push(c);
                        }
                    }
                    cases
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            a.output.emit(&MetricReport::default().with_pa(&positional_alignment(&cases, rule)?))
        }
        MetricsCommand::Rp(a) => {
            let (_, images) = read_embeddings(&a.images)?;
            let (_, texts) = read_embeddings(&a.texts)?;
            let (_, distractors) = read_embeddings(&a.distractors)?;
            if images.len() != texts.len() {
                return Err(Error::Invalid(format!(
                    "{} image rows but {} text rows",
                    images.len(),
                    texts.len()
                ))
                .into());
            }
            let pairs: Vec<RetrievalPair> = images
                .into_iter()
                .zip(texts)
                .map(|(image, text)| RetrievalPair { image, text })
                .collect();
            let r = r_precision(&pairs, &distractors, a.k, a.seed)?;
            a.output.emit(&MetricReport::default().with_rp(&r))
        }
        MetricsCommand::Fid(a) => {
            let r = fid_pipeline(&a.real, &a.gen, a.eps)?;
            a.output.emit(&MetricReport::default().with_fid(&r))
        }
        MetricsCommand::Ofid(a) => {
            let real = read_lines(&a.real)?;
            let generated = read_lines(&a.gen)?;
            let backend = a.backend.descriptor()?.connect()?;
            let opts = EvalOptions {
                threshold: a.threshold,
                eps: a.eps,
                workers: a.workers,
            };
            let r = o_fid_pipeline(&real, &generated, backend.as_ref(), backend.as_ref(), &opts)?;
            a.output.emit(&MetricReport::default().with_o_fid(&r))
        }
        MetricsCommand::Combine(a) => {
            let mut report = MetricReport::default();
            for p in &a.reports {
                let r = MetricReport::read(p).with_context(|| format!("reading {}", p.display()))?;
                report.combine(&r)?;
            }
            a.output.emit(&report)
        }
    }
}
