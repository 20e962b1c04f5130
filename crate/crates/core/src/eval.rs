//! Ground-truthed synthetic performances and onset-error scoring.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dtw::UnitOnset;
use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::scalar::Scalar;
use crate::score::ScoreTimeline;
use crate::templates::TemplateBank;
use crate::training::{check_patterns, UnitPattern};

pub const MIN_WARP_SLOPE: f64 = 0.5;
pub const MAX_WARP_SLOPE: f64 = 2.0;

/// Onset-error thresholds reported by [`evaluate`], in seconds.
pub const THRESHOLDS: [f64; 3] = [0.05, 0.10, 0.20];

/// A stretch of score time played at a constant tempo ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpSegment {
    /// Length in score seconds.
    pub duration: f64,
    /// Performance seconds per score second.
    pub slope: f64,
}

/// Piecewise-linear, strictly increasing map from score time to performance time.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMap {
    /// `(score, performance)` breakpoints starting at `(0, 0)`.
    knots: Vec<(f64, f64)>,
    /// Slope used past the last breakpoint.
    tail_slope: f64,
}

impl WarpMap {
    pub fn identity() -> Self {
        WarpMap {
            knots: vec![(0.0, 0.0)],
            tail_slope: 1.0,
        }
    }

    pub fn uniform(slope: f64) -> Result<Self> {
        Self::from_segments(&[WarpSegment {
            duration: 1.0,
            slope,
        }])
    }

    /// Chains the segments from time zero; the last slope continues indefinitely.
    pub fn from_segments(segments: &[WarpSegment]) -> Result<Self> {
        if segments.is_empty() {
            return Ok(Self::identity());
        }
        let mut knots = vec![(0.0, 0.0)];
        for (i, seg) in segments.iter().enumerate() {
            if !(MIN_WARP_SLOPE..=MAX_WARP_SLOPE).contains(&seg.slope) {
                return Err(Error::InvalidWarp(format!(
                    "segment {i}: slope {} outside [{MIN_WARP_SLOPE}, {MAX_WARP_SLOPE}]",
                    seg.slope
                )));
            }
            if !(seg.duration.is_finite() && seg.duration > 0.0) {
                return Err(Error::InvalidWarp(format!(
                    "segment {i}: duration {} must be positive",
                    seg.duration
                )));
            }
            let (s, p) = *knots.last().expect("nonempty");
            knots.push((s + seg.duration, p + seg.duration * seg.slope));
        }
        Ok(WarpMap {
            knots,
            tail_slope: segments.last().expect("nonempty").slope,
        })
    }

    /// Performance time of score time `s`.
    pub fn map(&self, s: f64) -> f64 {
        interpolate(self.knots.iter().copied(), self.tail_slope, s)
    }

    /// Score time of performance time `p`.
    pub fn inverse(&self, p: f64) -> f64 {
        interpolate(self.knots.iter().map(|&(s, p)| (p, s)), 1.0 / self.tail_slope, p)
    }
}

/// Evaluates the polyline through `knots` (first knot at the origin) at `x`,
/// extending past the last knot with slope `tail`. Negative inputs map to zero.
fn interpolate(knots: impl Iterator<Item = (f64, f64)>, tail: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut prev = (0.0, 0.0);
    for (kx, ky) in knots {
        if x < kx {
            return prev.1 + (x - prev.0) * (ky - prev.1) / (kx - prev.0);
        }
        prev = (kx, ky);
    }
    prev.1 + (x - prev.0) * tail
}

/// Spectral rendering of a score under a tempo warp, with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticPerformance<T> {
    /// Unnormalized magnitude frames.
    pub spectrogram: Spectrogram<T>,
    /// True unit onsets on the same clock as [`crate::dtw::extract_onsets`].
    pub onsets: Vec<UnitOnset>,
    /// Unit sounding in each frame.
    pub frame_units: Vec<usize>,
}

/// Renders `timeline` under `warp`.
///
/// Frame `t` holds the composite `Σ α n` of the unit sounding at performance
/// time `t · hop / sr`, plus uniform noise in `[0, noise_level · max(frame))`.
/// Frame `t` is reported at its window center, half a window after
/// `t · hop / sr`, so true onsets are `warp(span_start) + fft_size / (2 sr)`.
pub fn synth_performance<T: Scalar>(
    timeline: &ScoreTimeline,
    bank: &TemplateBank<T>,
    patterns: &[UnitPattern<T>],
    warp: &WarpMap,
    noise_level: f64,
    seed: u64,
) -> Result<SyntheticPerformance<T>> {
    let config = *bank.config();
    check_patterns(patterns, timeline, &config)?;
    if !(noise_level.is_finite() && noise_level >= 0.0) {
        return Err(Error::Validation(format!(
            "noise level {noise_level} must be nonnegative"
        )));
    }
    let composites: Vec<Vec<T>> = patterns
        .iter()
        .map(|p| {
            let scale = p.composite_norm();
            p.basis().iter().map(|&b| b * scale).collect()
        })
        .collect();
    let period = config.frame_period();
    let n_frames = ((warp.map(timeline.total_duration()) / period).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(n_frames);
    let mut frame_units = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let k = timeline.unit_at(warp.inverse(t as f64 * period));
        let mut frame = composites[k].clone();
        let peak = frame.iter().fold(T::zero(), |m, &v| m.max(v));
        let amplitude = peak * T::lit(noise_level);
        for v in frame.iter_mut() {
            *v = *v + amplitude * T::lit(rng.gen::<f64>());
        }
        frames.push(frame);
        frame_units.push(k);
    }
    let lead_in = config.frame_center_offset();
    let onsets = timeline
        .units()
        .iter()
        .map(|u| UnitOnset {
            k: u.index,
            time_s: lead_in + warp.map(u.span_start),
        })
        .collect();
    Ok(SyntheticPerformance {
        spectrogram: Spectrogram::from_frames(frames, config)?,
        onsets,
        frame_units,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitError {
    pub k: usize,
    pub error_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFraction {
    pub threshold_s: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_unit: Vec<UnitError>,
    pub mean_error_s: f64,
    pub median_error_s: f64,
    pub within: Vec<ThresholdFraction>,
}

impl EvalReport {
    /// Fraction of units within `threshold` seconds, if that threshold was reported.
    pub fn fraction_within(&self, threshold: f64) -> Option<f64> {
        self.within
            .iter()
            .find(|w| (w.threshold_s - threshold).abs() < 1e-12)
            .map(|w| w.fraction)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Absolute onset errors per unit and their aggregates.
pub fn evaluate(estimated: &[UnitOnset], truth: &[UnitOnset]) -> Result<EvalReport> {
    let est: BTreeMap<usize, f64> = estimated.iter().map(|o| (o.k, o.time_s)).collect();
    let gt: BTreeMap<usize, f64> = truth.iter().map(|o| (o.k, o.time_s)).collect();
    if gt.is_empty() {
        return Err(Error::Validation("no units to evaluate".into()));
    }
    if est.len() != estimated.len() || gt.len() != truth.len() {
        return Err(Error::Validation("duplicate unit index in onsets".into()));
    }
    if !est.keys().eq(gt.keys()) {
        return Err(Error::Validation(format!(
            "estimated onsets cover {} units, ground truth {}",
            est.len(),
            gt.len()
        )));
    }
    let per_unit: Vec<UnitError> = gt
        .iter()
        .map(|(&k, &t)| UnitError {
            k,
            error_s: (est[&k] - t).abs(),
        })
        .collect();
    let mut sorted: Vec<f64> = per_unit.iter().map(|e| e.error_s).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean_error_s = sorted.iter().sum::<f64>() / n as f64;
    let median_error_s = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let within = THRESHOLDS
        .iter()
        .map(|&threshold_s| ThresholdFraction {
            threshold_s,
            fraction: sorted.iter().filter(|&&e| e <= threshold_s).count() as f64 / n as f64,
        })
        .collect();
    Ok(EvalReport {
        per_unit,
        mean_error_s,
        median_error_s,
        within,
    })
}

/// Ground-truth file: the onset list plus the lead-in that places score time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub onsets: Vec<UnitOnset>,
    pub lead_in_s: f64,
}

/// One reproducible synthetic case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusCase {
    #[serde(default)]
    pub name: Option<String>,
    /// Score JSON path, relative to the manifest's directory unless absolute.
    pub score: PathBuf,
    #[serde(default)]
    pub warp: Vec<WarpSegment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub cases: Vec<CorpusCase>,
}

impl CorpusManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: CorpusManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        for (i, case) in manifest.cases.iter().enumerate() {
            WarpMap::from_segments(&case.warp)
                .map_err(|e| Error::Validation(format!("case {i}: {e}")))?;
            if !(case.sigma.is_finite() && case.sigma >= 0.0) {
                return Err(Error::Validation(format!("case {i}: sigma must be nonnegative")));
            }
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
