//! Text-to-image evaluation metrics: FID and object-crop FID, semantic
//! object accuracy, counting and positional alignment, and R-precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstats::{frechet_distance, GaussianSummary};
use crate::embfile::summarize_file;
use crate::error::{Error, Result};
use crate::modelclient::{Detection, ImageInput, ModelBackend};
use crate::promptparse::{extract_count_specs, singularize, ClassVocabulary, CueVocabulary};

fn percent(hits: u64, total: u64) -> f64 {
    hits as f64 / total as f64 * 100.0
}

// ---------------------------------------------------------------- SOA

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoaObservation {
    pub image: String,
    pub detected: bool,
}

/// Per class, the generated images whose prompt mentions it and whether the
/// detector found it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoaInput(pub BTreeMap<String, Vec<SoaObservation>>);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTally {
    pub detected: u64,
    pub total: u64,
}

/// Mergeable SOA counts. Partials over disjoint image shards merge to the
/// counts of the whole set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoaPartial {
    pub classes: BTreeMap<String, ClassTally>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoaResult {
    pub soa_c: f64,
    pub soa_i: f64,
    pub classes: u64,
    pub pairs: u64,
}

impl SoaPartial {
    pub fn from_input(input: &SoaInput) -> Result<Self> {
        let mut classes = BTreeMap::new();
        for (class, obs) in &input.0 {
            let mut seen = BTreeSet::new();
            let mut tally = ClassTally::default();
            for o in obs {
                if !seen.insert(o.image.as_str()) {
                    return Err(Error::invalid(format!("image {:?} listed twice for class {class:?}", o.image)));
                }
                tally.total += 1;
                tally.detected += u64::from(o.detected);
            }
            classes.insert(class.clone(), tally);
        }
        Ok(Self { classes })
    }

    pub fn merge(&mut self, other: &SoaPartial) {
        for (class, t) in &other.classes {
            let e = self.classes.entry(class.clone()).or_default();
            e.detected += t.detected;
            e.total += t.total;
        }
    }

    /// Classes without images are ignored.
    pub fn finish(&self) -> Result<SoaResult> {
        let present: Vec<&ClassTally> = self.classes.values().filter(|t| t.total > 0).collect();
        if present.is_empty() {
            return Err(Error::invalid("SOA needs at least one class with an image"));
        }
        let detected: u64 = present.iter().map(|t| t.detected).sum();
        let pairs: u64 = present.iter().map(|t| t.total).sum();
        let soa_c = present.iter().map(|t| percent(t.detected, t.total)).sum::<f64>() / present.len() as f64;
        Ok(SoaResult {
            soa_c,
            soa_i: percent(detected, pairs),
            classes: present.len() as u64,
            pairs,
        })
    }
}

pub fn soa(input: &SoaInput) -> Result<SoaResult> {
    SoaPartial::from_input(input)?.finish()
}

/// Builds SOA observations from generation prompts and detector output:
/// each class named in an image's prompt counts as detected if any
/// detection of that class scores at least `threshold`.
pub fn soa_input_from_detections(
    prompts: &[(String, String)],
    detections: &BTreeMap<String, Vec<Detection>>,
    vocab: &ClassVocabulary,
    threshold: f64,
) -> SoaInput {
    let mut out: BTreeMap<String, Vec<SoaObservation>> = BTreeMap::new();
    for (image, prompt) in prompts {
        let found: BTreeSet<String> = detections
            .get(image)
            .into_iter()
            .flatten()
            .filter(|d| d.score >= threshold)
            .map(|d| d.class.to_lowercase())
            .collect();
        for class in vocab.match_classes(prompt) {
            out.entry(class.clone()).or_default().push(SoaObservation {
                image: image.clone(),
                detected: found.contains(&class),
            });
        }
    }
    SoaInput(out)
}

// ---------------------------------------------------------------- CA

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCase {
    pub expected: BTreeMap<String, u32>,
    #[serde(default)]
    pub detected: BTreeMap<String, u32>,
}

impl CountCase {
    /// Mean absolute count error over the expected nouns; nouns absent from
    /// `detected` count as zero.
    pub fn error(&self) -> Result<f64> {
        if self.expected.is_empty() {
            return Err(Error::invalid("count case without expected nouns"));
        }
        let sum: f64 = self
            .expected
            .iter()
            .map(|(noun, &want)| (want as f64 - self.detected.get(noun).copied().unwrap_or(0) as f64).abs())
            .sum();
        Ok(sum / self.expected.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanPartial {
    pub sum: f64,
    pub count: u64,
}

impl MeanPartial {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn merge(&mut self, o: &MeanPartial) {
        self.sum += o.sum;
        self.count += o.count;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaResult {
    pub ca: f64,
    pub cases: u64,
}

pub fn counting_alignment(cases: &[CountCase]) -> Result<CaResult> {
    let mut acc = MeanPartial::default();
    for c in cases {
        acc.push(c.error()?);
    }
    let ca = acc.mean().ok_or_else(|| Error::invalid("counting alignment needs at least one case"))?;
    Ok(CaResult { ca, cases: acc.count })
}

/// Expected counts parsed from the prompt, detected counts from detections
/// at or above `threshold`. `None` when the prompt states no counts.
pub fn count_case_from_detections(prompt: &str, detections: &[Detection], threshold: f64) -> Option<CountCase> {
    let mut expected = BTreeMap::new();
    for spec in extract_count_specs(prompt) {
        *expected.entry(spec.noun).or_insert(0) += spec.count;
    }
    if expected.is_empty() {
        return None;
    }
    let mut detected = BTreeMap::new();
    for d in detections.iter().filter(|d| d.score >= threshold) {
        let noun = singularize(&d.class.to_lowercase());
        if expected.contains_key(&noun) {
            *detected.entry(noun).or_insert(0) += 1;
        }
    }
    Some(CountCase { expected, detected })
}

// ---------------------------------------------------------------- PA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalCase {
    pub original: f64,
    pub swapped: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaRule {
    /// The original prompt must score strictly above every swap.
    #[default]
    Strict,
    /// Ties with a swap still pass.
    AllowTies,
}

impl FromStr for PaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "strict" => Ok(PaRule::Strict),
            "allow-ties" => Ok(PaRule::AllowTies),
            other => Err(Error::invalid(format!("PA rule must be strict or allow-ties, got {other:?}"))),
        }
    }
}

impl PositionalCase {
    pub fn passes(&self, rule: PaRule) -> Result<bool> {
        if self.swapped.is_empty() {
            return Err(Error::invalid("positional case without swapped scores"));
        }
        if !self.original.is_finite() || self.swapped.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("positional scores must be finite"));
        }
        Ok(match rule {
            PaRule::Strict => self.swapped.iter().all(|&s| self.original > s),
            PaRule::AllowTies => self.swapped.iter().all(|&s| self.original >= s),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaResult {
    pub pa: f64,
    pub passes: u64,
    pub cases: u64,
}

pub fn positional_alignment(cases: &[PositionalCase], rule: PaRule) -> Result<PaResult> {
    if cases.is_empty() {
        return Err(Error::invalid("positional alignment needs at least one case"));
    }
    let mut passes = 0;
    for c in cases {
        passes += u64::from(c.passes(rule)?);
    }
    Ok(PaResult {
        pa: percent(passes, cases.len() as u64),
        passes,
        cases: cases.len() as u64,
    })
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numerical("cosine of a zero vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Scores a generated image against its prompt and against every variant
/// with the first positional cue replaced by another cue. Prompts without a
/// cue yield `None`.
pub fn positional_case(
    backend: &dyn ModelBackend,
    image: &ImageInput,
    prompt: &str,
    cues: &CueVocabulary,
) -> Result<Option<PositionalCase>> {
    let Some(cue) = cues.extract(prompt).into_iter().next() else {
        return Ok(None);
    };
    let mut texts = vec![prompt.to_string()];
    texts.extend(cues.variants(prompt, &cue)?);
    let image_vec = backend.embed_image(std::slice::from_ref(image))?.remove(0);
    let text_vecs = backend.embed_text(&texts)?;
    let scores = text_vecs
        .iter()
        .map(|t| cosine(&image_vec, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(PositionalCase {
        original: scores[0],
        swapped: scores[1..].to_vec(),
    }))
}

// ---------------------------------------------------------------- RP

pub const DEFAULT_DISTRACTORS: usize = 99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPair {
    pub image: Vec<f32>,
    pub text: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpResult {
    pub rp: f64,
    pub successes: u64,
    pub pairs: u64,
}

/// Distractor indices for pair `i`: its own ChaCha stream, so the draw does
/// not depend on how pairs are sharded.
pub fn distractor_sample(pool: usize, k: usize, seed: u64, pair: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair as u64);
    index::sample(&mut rng, pool, k).into_vec()
}

/// Percentage of pairs whose image is strictly closer (cosine) to its own
/// text than to each of `k` distractors sampled from `distractors`.
pub fn r_precision(pairs: &[RetrievalPair], distractors: &[Vec<f32>], k: usize, seed: u64) -> Result<RpResult> {
    if pairs.is_empty() {
        return Err(Error::invalid("R-precision needs at least one pair"));
    }
    if distractors.len() < k {
        return Err(Error::invalid(format!(
            "distractor pool has {} texts, {k} needed",
            distractors.len()
        )));
    }
    let dim = pairs[0].image.len();
    for v in pairs.iter().flat_map(|p| [&p.image, &p.text]).chain(distractors) {
        if v.len() != dim {
            return Err(Error::DimMismatch { expected: dim, got: v.len() });
        }
    }
    let mut successes = 0;
    for (i, p) in pairs.iter().enumerate() {
        let truth = cosine(&p.image, &p.text)?;
        let mut win = true;
        for j in distractor_sample(distractors.len(), k, seed, i) {
            if cosine(&p.image, &distractors[j])? >= truth {
                win = false;
                break;
            }
        }
        successes += u64::from(win);
    }
    Ok(RpResult {
        rp: percent(successes, pairs.len() as u64),
        successes,
        pairs: pairs.len() as u64,
    })
}

// ---------------------------------------------------------------- FID

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub fid: f64,
    pub real: u64,
    pub generated: u64,
}

/// FID between two embedding files.
pub fn fid_pipeline(real: &Path, generated: &Path, eps: f64) -> Result<FidResult> {
    let a = summarize_file(real)?;
    let b = summarize_file(generated)?;
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(FidResult {
        fid: frechet_distance(&a, &b, eps)?,
        real: a.count(),
        generated: b.count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Minimum detection score kept for cropping.
    pub threshold: f64,
    pub eps: f64,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            eps: crate::embedstats::DEFAULT_EPS,
            workers: 0,
        }
    }
}

const IMAGE_CHUNK: usize = 128;

/// Embeds per-image inputs on a worker pool and folds them into a summary
/// in input order, so the result does not depend on the worker count.
fn summarize_images<F>(images: &[String], workers: usize, inputs: F) -> Result<(Option<GaussianSummary>, u64)>
where
    F: Fn(&str) -> Result<Vec<Vec<f32>>> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    let mut summary: Option<GaussianSummary> = None;
    let mut n = 0;
    for chunk in images.chunks(IMAGE_CHUNK) {
        let vecs: Vec<Vec<Vec<f32>>> = pool.install(|| chunk.par_iter().map(|i| inputs(i)).collect::<Result<_>>())?;
        for v in vecs.iter().flatten() {
            let s = summary.get_or_insert_with(|| GaussianSummary::new(v.len()));
            s.update(v)?;
            n += 1;
        }
    }
    Ok((summary, n))
}

fn fd_of(a: Option<GaussianSummary>, b: Option<GaussianSummary>, eps: f64) -> Result<f64> {
    let (a, b) = (a.expect("non-empty side"), b.expect("non-empty side"));
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    frechet_distance(&a, &b, eps)
}

/// FID over whole images embedded by `embedder`.
pub fn image_fid(real: &[String], generated: &[String], embedder: &dyn ModelBackend, opts: &EvalOptions) -> Result<FidResult> {
    let embed = |i: &str| embedder.embed_image(&[ImageInput::Ref(i.to_string())]);
    let (a, na) = summarize_images(real, opts.workers, embed)?;
    let (b, nb) = summarize_images(generated, opts.workers, embed)?;
    if na == 0 || nb == 0 {
        return Err(Error::invalid("FID needs images on both sides"));
    }
    Ok(FidResult {
        fid: fd_of(a, b, opts.eps)?,
        real: na,
        generated: nb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OFidResult {
    pub o_fid: f64,
    pub real_crops: u64,
    pub generated_crops: u64,
}

/// FID over detector crops: every detection scoring at least the threshold
/// is cut out, padded to a square, and embedded.
pub fn o_fid_pipeline(
    real: &[String],
    generated: &[String],
    detector: &dyn ModelBackend,
    embedder: &dyn ModelBackend,
    opts: &EvalOptions,
) -> Result<OFidResult> {
    if !opts.threshold.is_finite() || opts.threshold <= 0.0 {
        return Err(Error::invalid(format!("detection threshold must be positive, got {}", opts.threshold)));
    }
    let crops = |image: &str| -> Result<Vec<Vec<f32>>> {
        let inputs: Vec<ImageInput> = detector
            .detect(image)?
            .into_iter()
            .filter(|d| d.score >= opts.threshold)
            .map(|d| ImageInput::crop(image, d.bbox, d.image_size))
            .collect();
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        embedder.embed_image(&inputs)
    };
    let (a, na) = summarize_images(real, opts.workers, crops)?;
    let (b, nb) = summarize_images(generated, opts.workers, crops)?;
    if na == 0 || nb == 0 {
        return Err(Error::ZeroCrops {
            real: na as usize,
            generated: nb as usize,
        });
    }
    Ok(OFidResult {
        o_fid: fd_of(a, b, opts.eps)?,
        real_crops: na,
        generated_crops: nb,
    })
}

// ---------------------------------------------------------------- report

/// Aggregated metric values with the sample count behind each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub o_fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soa_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soa_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ca: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rp: Option<f64>,
    #[serde(default)]
    pub counts: BTreeMap<String, u64>,
}

impl MetricReport {
    pub fn with_fid(mut self, r: &FidResult) -> Self {
        self.fid = Some(r.fid);
        self.counts.insert("fid_real".into(), r.real);
        self.counts.insert("fid_generated".into(), r.generated);
        self
    }

    pub fn with_o_fid(mut self, r: &OFidResult) -> Self {
        self.o_fid = Some(r.o_fid);
        self.counts.insert("o_fid_real_crops".into(), r.real_crops);
        self.counts.insert("o_fid_generated_crops".into(), r.generated_crops);
        self
    }

    pub fn with_soa(mut self, r: &SoaResult) -> Self {
        self.soa_c = Some(r.soa_c);
        self.soa_i = Some(r.soa_i);
        self.counts.insert("soa_classes".into(), r.classes);
        self.counts.insert("soa_pairs".into(), r.pairs);
        self
    }

    pub fn with_ca(mut self, r: &CaResult) -> Self {
        self.ca = Some(r.ca);
        self.counts.insert("ca_cases".into(), r.cases);
        self
    }

    pub fn with_pa(mut self, r: &PaResult) -> Self {
        self.pa = Some(r.pa);
        self.counts.insert("pa_cases".into(), r.cases);
        self
    }

    pub fn with_rp(mut self, r: &RpResult) -> Self {
        self.rp = Some(r.rp);
        self.counts.insert("rp_pairs".into(), r.pairs);
        self
    }

    /// Metric values in the fixed column order, present ones only.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        [
            ("fid", self.fid),
            ("o_fid", self.o_fid),
            ("soa_c", self.soa_c),
            ("soa_i", self.soa_i),
            ("ca", self.ca),
            ("pa", self.pa),
            ("rp", self.rp),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    fn count_keys(metric: &str) -> &'static [&'static str] {
        match metric {
            "fid" => &["fid_real", "fid_generated"],
            "o_fid" => &["o_fid_real_crops", "o_fid_generated_crops"],
            "soa_c" | "soa_i" => &["soa_pairs"],
            "ca" => &["ca_cases"],
            "pa" => &["pa_cases"],
            _ => &["rp_pairs"],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values = self.values();
        if values.is_empty() {
            return Err(Error::invalid("metric report has no metrics"));
        }
        for (name, v) in values {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} is not finite")));
            }
            let ok = match name {
                "soa_c" | "soa_i" | "pa" | "rp" => (0.0..=100.0).contains(&v),
                _ => v >= 0.0,
            };
            if !ok {
                return Err(Error::invalid(format!("{name} = {v} is out of range")));
            }
            for key in Self::count_keys(name) {
                if self.counts.get(*key).copied().unwrap_or(0) == 0 {
                    return Err(Error::invalid(format!("{name} is present but count {key} is missing or zero")));
                }
            }
        }
        Ok(())
    }

    /// Combines reports computed separately. A metric present in both is an
    /// error.
    pub fn combine(&mut self, other: &MetricReport) -> Result<()> {
        let slots = [
            (&mut self.fid, other.fid, "fid"),
            (&mut self.o_fid, other.o_fid, "o_fid"),
            (&mut self.soa_c, other.soa_c, "soa_c"),
            (&mut self.soa_i, other.soa_i, "soa_i"),
            (&mut self.ca, other.ca, "ca"),
            (&mut self.pa, other.pa, "pa"),
            (&mut self.rp, other.rp, "rp"),
        ];
        for (mine, theirs, name) in slots {
            if let Some(v) = theirs {
                if mine.is_some() {
                    return Err(Error::invalid(format!("{name} appears in more than one report")));
                }
                *mine = Some(v);
            }
        }
        for (k, v) in &other.counts {
            self.counts.insert(k.clone(), *v);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        crate::shards::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: MetricReport = crate::shards::read_json(path)?;
        r.validate()?;
        Ok(r)
    }

    /// Appends `step,metric,value` rows, writing the header when the file
    /// is new.
    pub fn append_csv(&self, path: &Path, step: u64) -> Result<()> {
        let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        if fresh {
            text.push_str("step,metric,value\n");
        }
        for (name, v) in self.values() {
            text.push_str(&format!("{step},{name},{v}\n"));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(image: &str, detected: bool) -> SoaObservation {
        SoaObservation {
            image: image.into(),
            detected,
        }
    }

    #[test]
    fn soa_example() {
        let input = SoaInput(BTreeMap::from([
            ("a".into(), vec![obs("1", true), obs("2", false)]),
            ("b".into(), vec![obs("3", true)]),
        ]));
        let r = soa(&input).unwrap();
        assert_eq!(r.soa_c, 75.0);
        assert!((r.soa_i - 200.0 / 3.0).abs() < 1e-12);
        assert!(soa(&SoaInput::default()).is_err());
        let dup = SoaInput(BTreeMap::from([("a".into(), vec![obs("1", true), obs("1", false)])]));
        assert!(soa(&dup).is_err());
    }

    #[test]
    fn ca_examples() {
        let case = |e: &[(&str, u32)], d: &[(&str, u32)]| CountCase {
            expected: e.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            detected: d.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        assert_eq!(counting_alignment(&[case(&[("bird", 3)], &[("bird", 2)])]).unwrap().ca, 1.0);
        let cases = [case(&[("a", 2)], &[("a", 2)]), case(&[("b", 1), ("c", 2)], &[("b", 4), ("c", 2)])];
        assert_eq!(counting_alignment(&cases).unwrap().ca, 0.75);
        assert!(counting_alignment(&[]).is_err());
        assert!(counting_alignment(&[CountCase::default()]).is_err());
    }

    #[test]
    fn pa_rules() {
        let pass = PositionalCase {
            original: 0.9,
            swapped: vec![0.5, 0.4],
        };
        let tie = PositionalCase {
            original: 0.5,
            swapped: vec![0.5],
        };
        assert_eq!(positional_alignment(std::slice::from_ref(&pass), PaRule::Strict).unwrap().pa, 100.0);
        assert_eq!(positional_alignment(std::slice::from_ref(&tie), PaRule::Strict).unwrap().pa, 0.0);
        assert_eq!(positional_alignment(&[tie], PaRule::AllowTies).unwrap().pa, 100.0);
        assert!(positional_alignment(&[], PaRule::Strict).is_err());
        let empty = PositionalCase {
            original: 1.0,
            swapped: vec![],
        };
        assert!(positional_alignment(&[empty], PaRule::Strict).is_err());
    }

    #[test]
    fn rp_hand_built() {
        let e = |v: [f32; 2]| v.to_vec();
        let distractors = vec![e([0.0, 1.0]), e([-1.0, 0.0])];
        let pairs = vec![
            RetrievalPair {
                image: e([1.0, 0.0]),
                text: e([1.0, 0.1]),
            },
            RetrievalPair {
                image: e([1.0, 0.2]),
                text: e([1.0, 0.0]),
            },
            RetrievalPair {
                image: e([0.0, 1.0]),
                text: e([1.0, 0.0]),
            },
        ];
        let r = r_precision(&pairs, &distractors, 2, 7).unwrap();
        assert_eq!(r.successes, 2);
        assert!((r.rp - 200.0 / 3.0).abs() < 1e-12);
        assert!(r_precision(&pairs, &distractors, 3, 7).is_err());
        let bad = vec![e([1.0, 0.0]), vec![1.0]];
        assert!(matches!(r_precision(&pairs, &bad, 1, 0), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn distractor_streams_are_per_pair() {
        let a = distractor_sample(500, 99, 3, 10);
        assert_eq!(a, distractor_sample(500, 99, 3, 10));
        assert_ne!(a, distractor_sample(500, 99, 3, 11));
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 99);
    }

    #[test]
    fn report_round_trip_and_validation() {
        let only_fid = MetricReport::default().with_fid(&FidResult {
            fid: 12.5,
            real: 10,
            generated: 10,
        });
        let json = serde_json::to_string(&only_fid).unwrap();
        assert!(!json.contains("soa_c"));
        assert_eq!(serde_json::from_str::<MetricReport>(&json).unwrap(), only_fid);
        only_fid.validate().unwrap();

        assert!(MetricReport::default().validate().is_err());
        let bad = MetricReport {
            pa: Some(101.0),
            counts: BTreeMap::from([("pa_cases".into(), 1)]),
            ..MetricReport::default()
        };
        assert!(bad.validate().is_err());
        let uncounted = MetricReport {
            ca: Some(1.0),
            ..MetricReport::default()
        };
        assert!(uncounted.validate().is_err());
    }

    #[test]
    fn combine_rejects_overlap() {
        let a = MetricReport::default().with_ca(&CaResult { ca: 1.0, cases: 2 });
        let b = MetricReport::default().with_pa(&PaResult {
            pa: 50.0,
            passes: 1,
            cases: 2,
        });
        let mut c = a.clone();
        c.combine(&b).unwrap();
        assert_eq!((c.ca, c.pa), (Some(1.0), Some(50.0)));
        assert!(c.combine(&a).is_err());
    }

    #[test]
    fn csv_rows_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let r = MetricReport::default().with_ca(&CaResult { ca: 0.5, cases: 4 });
        r.append_csv(&path, 0).unwrap();
        r.append_csv(&path, 1000).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "step,metric,value\n0,ca,0.5\n1000,ca,0.5\n"
        );
    }
}
