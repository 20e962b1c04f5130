//! Distortion matrices: cost of explaining frame `t` with score unit `k`.
//!
//! Two definitions are provided. The subspace form decomposes each frame over
//! the notes of units `k` and `k + 1` and charges the Euclidean distance
//! between the decomposition coefficients and the unit's trained amplitudes,
//! plus the squared residual. The baseline is the β-divergence between the
//! unit's composite basis and the frame.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{check_inputs, pair_subspaces, Constraint, FrameDecomposition};
use crate::error::{Error, Result};
use crate::frontend::{read_f32s, read_u32, relabel_io, write_f32s, Spectrogram};
use crate::scalar::Scalar;
use crate::score::ScoreTimeline;
use crate::templates::TemplateBank;
use crate::training::{beta_divergence, check_patterns, UnitPattern, DIVERGENCE_FLOOR};

pub const MATRIX_MAGIC: &[u8; 8] = b"SALDIST1";

/// Scale of the trained amplitudes compared against frame coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaScaling {
    /// Rescaled so the unit's composite spectrum has unit norm, like the frames.
    #[default]
    UnitComposite,
    Raw,
}

/// How the coefficient distance enters the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceForm {
    /// `sqrt(Σ (a − α)²) + ‖r‖²`.
    #[default]
    Euclidean,
    /// `Σ (a − α)² + ‖r‖²`.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubspaceOptions {
    pub constraint: Constraint,
    pub alpha_scaling: AlphaScaling,
    pub distance: DistanceForm,
}

/// Which cost fills the matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistortionKind {
    Subspace(SubspaceOptions),
    Baseline { beta: f64 },
}

impl DistortionKind {
    pub fn subspace() -> Self {
        DistortionKind::Subspace(SubspaceOptions::default())
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            DistortionKind::Baseline { beta } => Some(*beta),
            DistortionKind::Subspace(_) => None,
        }
    }
}

/// Subspace cost of one cell. `dec` must come from the union of the notes of
/// units `k` and `k + 1`; notes outside unit `k` are compared against zero.
pub fn subspace_distortion_cell<T: Scalar>(
    dec: &FrameDecomposition<T>,
    pattern: &UnitPattern<T>,
    options: &SubspaceOptions,
) -> T {
    let target = |key| match options.alpha_scaling {
        AlphaScaling::UnitComposite => pattern.unit_alpha(key),
        AlphaScaling::Raw => pattern.alpha(key),
    };
    let mut dist_sq = T::zero();
    for (key, a) in dec.iter() {
        let d = a - target(key).unwrap_or_else(T::zero);
        dist_sq = dist_sq + d * d;
    }
    // Unit notes the decomposition did not cover (silent frames) have a = 0.
    for key in pattern.alphas().keys() {
        if dec.keys().binary_search(key).is_err() {
            let d = target(key).unwrap_or_else(T::zero);
            dist_sq = dist_sq + d * d;
        }
    }
    let distance = match options.distance {
        DistanceForm::Euclidean => dist_sq.sqrt(),
        DistanceForm::Squared => dist_sq,
    };
    distance + dec.residual_norm_sq()
}

/// β-divergence `d(b | x)` between a unit's normalized basis and a normalized frame.
/// β = 0 (Itakura–Saito) is only defined when both vectors are strictly positive.
pub fn baseline_distortion_cell<T: Scalar>(
    x: &[T],
    pattern: &UnitPattern<T>,
    beta: f64,
) -> Result<T> {
    let basis = pattern.basis();
    if basis.len() != x.len() {
        return Err(Error::ConfigMismatch(format!(
            "frame has {} bins, pattern has {}",
            x.len(),
            basis.len()
        )));
    }
    if !beta.is_finite() {
        return Err(Error::Validation(format!("beta {beta} is not finite")));
    }
    if beta == 0.0 && basis.iter().chain(x).any(|v| v.is_zero()) {
        return Err(Error::DivergenceUndefined(
            "Itakura-Saito divergence with zero entries".into(),
        ));
    }
    let floor = T::lit(DIVERGENCE_FLOOR);
    let total = basis.iter().zip(x).fold(T::zero(), |acc, (&b, &xf)| {
        let term = if beta == 2.0 || beta == 0.0 {
            beta_divergence(b, xf, beta)
        } else if b == xf {
            T::zero()
        } else {
            beta_divergence(b.max(floor), xf, beta)
        };
        acc + term
    });
    Ok(total.max(T::zero()))
}

/// `K × T` cost matrix, row-major by unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionMatrix<T> {
    values: Vec<T>,
    n_units: usize,
    n_frames: usize,
    kind: DistortionKind,
}

impl<T: Scalar> DistortionMatrix<T> {
    /// Wraps precomputed costs; entries must be finite and nonnegative.
    pub fn from_values(
        values: Vec<T>,
        n_units: usize,
        n_frames: usize,
        kind: DistortionKind,
    ) -> Result<Self> {
        if values.len() != n_units * n_frames {
            return Err(Error::Validation(format!(
                "{} values do not form a {n_units} x {n_frames} matrix",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::Validation(format!(
                "distortion entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(DistortionMatrix {
            values,
            n_units,
            n_frames,
            kind,
        })
    }

    pub fn from_rows(rows: &[Vec<T>], kind: DistortionKind) -> Result<Self> {
        let n_frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_frames) {
            return Err(Error::Validation("ragged distortion rows".into()));
        }
        Self::from_values(rows.concat(), rows.len(), n_frames, kind)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn kind(&self) -> DistortionKind {
        self.kind
    }

    pub fn get(&self, k: usize, t: usize) -> T {
        self.values[k * self.n_frames + t]
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.values[k * self.n_frames..(k + 1) * self.n_frames]
    }

    pub fn column(&self, t: usize) -> Vec<T> {
        (0..self.n_units).map(|k| self.get(k, t)).collect()
    }

    pub fn as_flat(&self) -> &[T] {
        &self.values
    }

    /// Writes the `SALDIST1` binary layout.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<matrix stream>", e);
        w.write_all(MATRIX_MAGIC).map_err(io)?;
        w.write_all(&(self.n_units as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.n_frames as u32).to_le_bytes()).map_err(io)?;
        write_f32s(&mut w, &self.values).map_err(io)
    }

    /// Reads the `SALDIST1` layout. The kind is not stored; `kind` labels the result.
    pub fn read_binary<R: Read>(mut r: R, kind: DistortionKind) -> Result<Self> {
        let io = |e| Error::io("<matrix stream>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MATRIX_MAGIC {
            return Err(Error::Format("bad distortion matrix magic".into()));
        }
        let n_units = read_u32(&mut r).map_err(io)? as usize;
        let n_frames = read_u32(&mut r).map_err(io)? as usize;
        let values = read_f32s(&mut r, n_units * n_frames).map_err(io)?;
        Self::from_values(values, n_units, n_frames, kind)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(std::io::BufWriter::new(file))
            .map_err(|e| relabel_io(e, path))
    }

    pub fn load(path: &Path, kind: DistortionKind) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(std::io::BufReader::new(file), kind).map_err(|e| relabel_io(e, path))
    }

    /// Long-format CSV: `k,t,d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,t,d")?;
        for k in 0..self.n_units {
            for (t, v) in self.row(k).iter().enumerate() {
                writeln!(w, "{k},{t},{v}")?;
            }
        }
        Ok(())
    }
}

/// Fills the full distortion matrix in parallel. The spectrogram must be normalized.
pub fn build_matrix<T: Scalar>(
    spectrogram: &Spectrogram<T>,
    timeline: &ScoreTimeline,
    patterns: &[UnitPattern<T>],
    bank: &TemplateBank<T>,
    kind: DistortionKind,
) -> Result<DistortionMatrix<T>> {
    check_inputs(spectrogram, bank)?;
    check_patterns(patterns, timeline, bank.config())?;
    let n_units = timeline.len();
    let n_frames = spectrogram.n_frames();
    let values: Vec<T> = match kind {
        DistortionKind::Subspace(options) => {
            let subspaces = pair_subspaces(timeline, bank, options.constraint)?;
            (0..n_units * n_frames)
                .into_par_iter()
                .map(|i| {
                    let (k, t) = (i / n_frames, i % n_frames);
                    let dec = subspaces[k].decompose(spectrogram.frame(t))?;
                    Ok(subspace_distortion_cell(&dec, &patterns[k], &options))
                })
                .collect::<Result<_>>()?
        }
        DistortionKind::Baseline { beta } => (0..n_units * n_frames)
            .into_par_iter()
            .map(|i| {
                let (k, t) = (i / n_frames, i % n_frames);
                baseline_distortion_cell(spectrogram.frame(t), &patterns[k], beta)
            })
            .collect::<Result<_>>()?,
    };
    DistortionMatrix::from_values(values, n_units, n_frames, kind)
}
