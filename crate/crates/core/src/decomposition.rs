//! Projection of each normalized frame onto the note subspace of a pair of
//! adjacent score units, leaving a coefficient per note and a residual.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::nnls::{least_squares_gram, nnls_gram};
use crate::scalar::{dot, norm_sq, Scalar};
use crate::score::{unit_union, NoteKey, NoteSet, ScoreTimeline};
use crate::templates::TemplateBank;

/// Sign constraint on the decomposition coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    #[default]
    Nonnegative,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecomposition<T> {
    keys: Arc<[NoteKey]>,
    coeffs: Vec<T>,
    residual_norm_sq: T,
}

impl<T: Scalar> FrameDecomposition<T> {
    fn empty(residual_norm_sq: T) -> Self {
        FrameDecomposition {
            keys: Arc::from(Vec::new()),
            coeffs: Vec::new(),
            residual_norm_sq,
        }
    }

    pub fn keys(&self) -> &[NoteKey] {
        &self.keys
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// Coefficient of `key`, zero when the key is not in the subspace.
    pub fn coeff(&self, key: &NoteKey) -> T {
        self.keys
            .binary_search(key)
            .map(|i| self.coeffs[i])
            .unwrap_or_else(|_| T::zero())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NoteKey, T)> + '_ {
        self.keys.iter().zip(self.coeffs.iter().copied())
    }

    /// Squared norm of the part of the frame the subspace does not explain.
    pub fn residual_norm_sq(&self) -> T {
        self.residual_norm_sq
    }
}

/// Templates of one note set with their Gram matrix, reusable across frames.
pub struct NoteSubspace<'a, T> {
    keys: Arc<[NoteKey]>,
    columns: Vec<&'a [T]>,
    gram: Vec<T>,
    constraint: Constraint,
}

impl<'a, T: Scalar> NoteSubspace<'a, T> {
    pub fn new(notes: &NoteSet, bank: &'a TemplateBank<T>, constraint: Constraint) -> Result<Self> {
        let keys: Vec<NoteKey> = notes.iter().cloned().collect();
        let columns: Vec<&[T]> = keys
            .iter()
            .map(|k| bank.get(k).map(|t| t.spectrum()))
            .collect::<Result<_>>()?;
        let n = columns.len();
        let mut gram = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let g = dot(columns[i], columns[j]);
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        Ok(NoteSubspace {
            keys: Arc::from(keys),
            columns,
            gram,
            constraint,
        })
    }

    pub fn keys(&self) -> &[NoteKey] {
        &self.keys
    }

    /// Decomposes one frame. All-zero frames yield no coefficients and zero residual.
    pub fn decompose(&self, x: &[T]) -> Result<FrameDecomposition<T>> {
        if let Some(col) = self.columns.first() {
            if col.len() != x.len() {
                return Err(Error::ConfigMismatch(format!(
                    "frame has {} bins, templates have {}",
                    x.len(),
                    col.len()
                )));
            }
        }
        if x.iter().all(|v| v.is_zero()) {
            return Ok(FrameDecomposition::empty(T::zero()));
        }
        if self.columns.is_empty() {
            return Ok(FrameDecomposition::empty(norm_sq(x)));
        }
        let rhs: Vec<T> = self.columns.iter().map(|c| dot(c, x)).collect();
        let coeffs = match self.constraint {
            Constraint::Nonnegative => nnls_gram(&self.gram, &rhs)?,
            Constraint::Unconstrained => least_squares_gram(&self.gram, &rhs),
        };
        let mut residual_norm_sq = T::zero();
        for (f, &xf) in x.iter().enumerate() {
            let model = self
                .columns
                .iter()
                .zip(&coeffs)
                .fold(T::zero(), |acc, (c, &a)| acc + a * c[f]);
            let r = xf - model;
            residual_norm_sq = residual_norm_sq + r * r;
        }
        Ok(FrameDecomposition {
            keys: Arc::clone(&self.keys),
            coeffs,
            residual_norm_sq,
        })
    }
}

/// Least-squares decomposition of `x` over the templates of `notes`.
pub fn decompose_frame<T: Scalar>(
    x: &[T],
    notes: &NoteSet,
    bank: &TemplateBank<T>,
    constraint: Constraint,
) -> Result<FrameDecomposition<T>> {
    NoteSubspace::new(notes, bank, constraint)?.decompose(x)
}

/// Decompositions for every (unit pair, frame) cell, row-major by unit.
#[derive(Debug, Clone)]
pub struct DecompositionTable<T> {
    n_units: usize,
    n_frames: usize,
    cells: Vec<FrameDecomposition<T>>,
}

impl<T: Scalar> DecompositionTable<T> {
    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn get(&self, k: usize, t: usize) -> &FrameDecomposition<T> {
        &self.cells[k * self.n_frames + t]
    }

    pub fn row(&self, k: usize) -> &[FrameDecomposition<T>] {
        &self.cells[k * self.n_frames..(k + 1) * self.n_frames]
    }

    /// Writes `k,t,pitch,instrument,a` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,t,pitch,instrument,a")?;
        for k in 0..self.n_units {
            for (t, cell) in self.row(k).iter().enumerate() {
                for (key, a) in cell.iter() {
                    writeln!(w, "{k},{t},{},{},{}", key.pitch, key.instrument, a)?;
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_inputs<T: Scalar>(
    spectrogram: &Spectrogram<T>,
    bank: &TemplateBank<T>,
) -> Result<()> {
    if !spectrogram.is_normalized() {
        return Err(Error::Validation(
            "spectrogram must be normalized before decomposition".into(),
        ));
    }
    if spectrogram.n_bins() != bank.config().n_bins()
        || spectrogram.config().sample_rate != bank.config().sample_rate
    {
        return Err(Error::ConfigMismatch(format!(
            "spectrogram analysed with {:?}, templates with {:?}",
            spectrogram.config(),
            bank.config()
        )));
    }
    Ok(())
}

/// One subspace per unit `k`, spanning the notes of units `k` and `k + 1`.
pub(crate) fn pair_subspaces<'a, T: Scalar>(
    timeline: &ScoreTimeline,
    bank: &'a TemplateBank<T>,
    constraint: Constraint,
) -> Result<Vec<NoteSubspace<'a, T>>> {
    (0..timeline.len())
        .map(|k| NoteSubspace::new(&unit_union(timeline, k)?, bank, constraint))
        .collect()
}

/// Decomposes every frame against every consecutive unit pair, in parallel.
pub fn decompose_all<T: Scalar>(
    spectrogram: &Spectrogram<T>,
    timeline: &ScoreTimeline,
    bank: &TemplateBank<T>,
    constraint: Constraint,
) -> Result<DecompositionTable<T>> {
    check_inputs(spectrogram, bank)?;
    let subspaces = pair_subspaces(timeline, bank, constraint)?;
    let n_frames = spectrogram.n_frames();
    let cells = (0..timeline.len() * n_frames)
        .into_par_iter()
        .map(|i| {
            let (k, t) = (i / n_frames, i % n_frames);
            if spectrogram.is_silent(t) {
                Ok(FrameDecomposition::empty(T::zero()))
            } else {
                subspaces[k].decompose(spectrogram.frame(t))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecompositionTable {
        n_units: timeline.len(),
        n_frames,
        cells,
    })
}
