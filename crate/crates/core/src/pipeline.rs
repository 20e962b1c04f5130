//! End-to-end alignment of a performance spectrogram against a score.

use crate::distortion::{build_matrix, DistortionKind, DistortionMatrix};
use crate::dtw::{dtw, extract_onsets, AlignmentPath, DtwOptions, UnitOnset};
use crate::error::Result;
use crate::frontend::{normalize_spectrogram, Spectrogram};
use crate::scalar::Scalar;
use crate::score::ScoreTimeline;
use crate::templates::TemplateBank;
use crate::training::UnitPattern;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignOptions {
    pub distortion: DistortionKind,
    pub dtw: DtwOptions,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            distortion: DistortionKind::subspace(),
            dtw: DtwOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Alignment<T> {
    pub matrix: DistortionMatrix<T>,
    pub path: AlignmentPath<T>,
    pub onsets: Vec<UnitOnset>,
}

/// Normalizes `performance` if needed, fills the distortion matrix and runs DTW.
pub fn align<T: Scalar>(
    performance: &Spectrogram<T>,
    timeline: &ScoreTimeline,
    bank: &TemplateBank<T>,
    patterns: &[UnitPattern<T>],
    options: &AlignOptions,
) -> Result<Alignment<T>> {
    let normalized;
    let spec = if performance.is_normalized() {
        performance
    } else {
        normalized = normalize_spectrogram(performance);
        &normalized
    };
    let matrix = build_matrix(spec, timeline, patterns, bank, options.distortion)?;
    let path = dtw(&matrix, &options.dtw)?;
    let onsets = extract_onsets(&path, spec.config());
    Ok(Alignment {
        matrix,
        path,
        onsets,
    })
}
