//! Offline dynamic time warping over a distortion matrix.
//!
//! Every frame is assigned to exactly one unit. Between consecutive frames the
//! path either stays on its unit or advances by one (or, optionally, two).
//! Ties prefer staying, then advancing by one, then skipping.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distortion::DistortionMatrix;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DtwOptions {
    /// Allow jumping over one unit between consecutive frames.
    pub allow_skip: bool,
    /// Sakoe–Chiba half-width in frames around the straight diagonal.
    pub band: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Step {
    Start,
    Stay,
    Advance,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath<T> {
    /// `(k, t)` for every frame `t = 0..T`.
    pub steps: Vec<(usize, usize)>,
    /// First frame assigned to each unit; skipped units take the frame of the jump.
    pub unit_onset_frames: Vec<usize>,
    pub total_cost: T,
}

impl<T: Scalar> AlignmentPath<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Writes `k,t` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,t")?;
        for (k, t) in &self.steps {
            writeln!(w, "{k},{t}")?;
        }
        Ok(())
    }
}

fn in_band(k: usize, t: usize, n_units: usize, n_frames: usize, band: Option<usize>) -> bool {
    match band {
        None => true,
        Some(width) => {
            if n_units <= 1 || n_frames <= 1 {
                return true;
            }
            let center = k as f64 * (n_frames - 1) as f64 / (n_units - 1) as f64;
            (t as f64 - center).abs() <= width as f64
        }
    }
}

/// Minimum-cost path from `(0, 0)` to `(K − 1, T − 1)`.
pub fn dtw<T: Scalar>(matrix: &DistortionMatrix<T>, options: &DtwOptions) -> Result<AlignmentPath<T>> {
    let (n_units, n_frames) = (matrix.n_units(), matrix.n_frames());
    if n_units == 0 {
        return Err(Error::Validation("distortion matrix has no units".into()));
    }
    let max_stride = if options.allow_skip { 2 } else { 1 };
    if n_frames == 0 || n_units - 1 > max_stride * (n_frames - 1) {
        return Err(Error::PathTooShort {
            frames: n_frames,
            units: n_units,
        });
    }

    let inf = T::infinity();
    let mut prev = vec![inf; n_units];
    let mut cur = vec![inf; n_units];
    let mut back = vec![Step::Start; n_units * n_frames];
    if in_band(0, 0, n_units, n_frames, options.band) {
        prev[0] = matrix.get(0, 0);
    }
    for t in 1..n_frames {
        for k in 0..n_units {
            cur[k] = inf;
            if !in_band(k, t, n_units, n_frames, options.band) {
                continue;
            }
            let stay = prev[k];
            let advance = if k >= 1 { prev[k - 1] } else { inf };
            let skip = if options.allow_skip && k >= 2 { prev[k - 2] } else { inf };
            let (best, step) = if stay <= advance && stay <= skip {
                (stay, Step::Stay)
            } else if advance <= skip {
                (advance, Step::Advance)
            } else {
                (skip, Step::Skip)
            };
            if best.is_finite() {
                cur[k] = matrix.get(k, t) + best;
                back[k * n_frames + t] = step;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let total_cost = prev[n_units - 1];
    if !total_cost.is_finite() {
        return Err(Error::Validation(format!(
            "no monotonic path within band {:?}",
            options.band
        )));
    }

    let mut steps = vec![(0, 0); n_frames];
    let mut onsets = vec![0usize; n_units];
    let mut k = n_units - 1;
    for t in (0..n_frames).rev() {
        steps[t] = (k, t);
        match back[k * n_frames + t] {
            Step::Start | Step::Stay => {}
            Step::Advance => {
                onsets[k] = t;
                k -= 1;
            }
            Step::Skip => {
                onsets[k] = t;
                onsets[k - 1] = t;
                k -= 2;
            }
        }
    }
    debug_assert_eq!(k, 0);
    Ok(AlignmentPath {
        steps,
        unit_onset_frames: onsets,
        total_cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitOnset {
    pub k: usize,
    pub time_s: f64,
}

/// Onset of each unit, at the center of its first frame.
pub fn extract_onsets<T: Scalar>(path: &AlignmentPath<T>, config: &FrontendConfig) -> Vec<UnitOnset> {
    path.unit_onset_frames
        .iter()
        .enumerate()
        .map(|(k, &t)| UnitOnset {
            k,
            time_s: config.frame_time(t),
        })
        .collect()
}

/// The alignment JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub onsets: Vec<UnitOnset>,
    pub total_cost: f64,
    pub path_length: usize,
}

impl AlignmentReport {
    pub fn new<T: Scalar>(path: &AlignmentPath<T>, config: &FrontendConfig) -> Self {
        AlignmentReport {
            onsets: extract_onsets(path, config),
            total_cost: path.total_cost.to_f64_lossy(),
            path_length: path.len(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}
