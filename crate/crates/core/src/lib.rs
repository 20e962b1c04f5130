//! Audio-to-score alignment via note-subspace distortion and dynamic time warping.
//!
//! The pipeline: a score is split into [`score::ScoreUnit`]s, each unit gets a
//! spectral [`training::UnitPattern`] fitted from a [`templates::TemplateBank`],
//! every performance frame is decomposed onto each unit's note subspace, and
//! [`dtw::dtw`] finds the cheapest monotone path through the resulting
//! [`distortion::DistortionMatrix`].
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases name the common instantiations.

pub mod decomposition;
pub mod distortion;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod nnls;
pub mod pipeline;
pub mod scalar;
pub mod score;
pub mod templates;
pub mod training;

pub use decomposition::{decompose_all, decompose_frame, Constraint, FrameDecomposition, NoteSubspace};
pub use distortion::{build_matrix, AlphaScaling, DistanceForm, DistortionKind, DistortionMatrix, SubspaceOptions};
pub use dtw::{dtw, extract_onsets, AlignmentPath, AlignmentReport, DtwOptions, UnitOnset};
pub use error::{Error, Result};
pub use eval::{evaluate, synth_performance, EvalReport, WarpMap, WarpSegment};
pub use frontend::{FrontendConfig, Spectrogram, WindowKind};
pub use pipeline::{align, AlignOptions, Alignment};
pub use scalar::Scalar;
pub use score::{build_timeline, load_score, parse_score, Note, NoteKey, ScoreTimeline, ScoreUnit};
pub use templates::{InstrumentProfile, NoteTemplate, TemplateBank};
pub use training::{build_all_patterns, fit_pattern, FitOptions, TrainingOptions, UnitPattern};

pub type SpectrogramF64 = Spectrogram<f64>;
pub type SpectrogramF32 = Spectrogram<f32>;
pub type TemplateBankF64 = TemplateBank<f64>;
pub type TemplateBankF32 = TemplateBank<f32>;
pub type UnitPatternF64 = UnitPattern<f64>;
pub type UnitPatternF32 = UnitPattern<f32>;
pub type DistortionMatrixF64 = DistortionMatrix<f64>;
pub type DistortionMatrixF32 = DistortionMatrix<f32>;
pub type AlignmentPathF64 = AlignmentPath<f64>;
pub type AlignmentPathF32 = AlignmentPath<f32>;
pub type FrameDecompositionF64 = FrameDecomposition<f64>;
pub type FrameDecompositionF32 = FrameDecomposition<f32>;
