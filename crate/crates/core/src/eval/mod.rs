//! Objective evaluation: error rates, SER confusion, pitch contours and
//! style/text space projections.

pub mod confusion;
pub mod io;
pub mod metrics;
pub mod pitch;
pub mod projection;

pub use confusion::{ser_confusion, ConfusionMatrix, SerReport, SER_CLASSES};
pub use io::{read_labels, read_transcripts, LabelRecord};
pub use metrics::{cer, levenshtein, score_transcripts, wer, ErrorRateReport, Normalization, TranscriptPair};
pub use pitch::{extract_pitch_contour, PitchConfig, PitchContour};
pub use projection::{project_spaces, render_projection, tsne, SpaceProjection, TsneConfig};
