//! Procedural toy face domain: a 68-point template with seeded variation,
//! 25 flat-color rendering styles plus the base domain, corpus builders, and
//! the color-mass alignment oracle used to score generated faces.

mod alignment;
mod corpus;
mod render;
mod styles;
mod template;

pub use alignment::{measure_alignment, AlignmentError, AlignmentReport, EYE_MARGIN, MOUTH_MARGIN, NOSE_MARGIN};
pub use corpus::{
    build_corpus, build_stage1_corpus, build_stage2_corpus, CorpusSpec, DatasetRecord, Manifest, MANIFEST_FILE,
};
pub(crate) use corpus::{prepare_dirs, write_pair};
pub use render::render_face;
pub use styles::{StyleSpec, N_STYLES};
pub use template::{sample_base_landmarks, sample_landmarks_with, template_landmarks, FaceVariation};
