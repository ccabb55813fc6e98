//! Corpus filtering, recaptioning orchestration, caption statistics and the
//! text-to-image metric battery.

pub mod corpus;
pub mod embedstats;
pub mod embfile;
pub mod metrics;
pub mod error;
pub mod modelclient;
pub mod pipeline;
pub mod promptparse;
pub mod recaption;
pub mod shards;
pub mod textstats;
pub mod tokenizer;

pub use corpus::{CorpusRecord, FilterReport, FilterSpec, Nsfw, RejectReason};
pub use embedstats::{frechet_distance, matrix_sqrt_psd, GaussianSummary, SquareMatrix};
pub use error::{Error, Result};
pub use modelclient::{BackendDescriptor, CaptionStyle, Detection, ModelBackend};
pub use promptparse::{ClassVocabulary, CountSpec, CueVocabulary, PositionalCue};
pub use textstats::{CorpusTextReport, TextStats};
pub use tokenizer::{token_gate, Tokenizer, TokenizerSpec};
pub use recaption::{CaptionBundle, CaptionSource, ManifestRow, MixMode, MixOptions, TrainingManifest};
pub use metrics::{MetricReport, PaRule};
pub use pipeline::{run_pipeline, PipelineConfig};
