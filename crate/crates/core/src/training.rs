//! Per-unit spectral patterns.
//!
//! Each non-silent score unit is rendered in the spectral domain from the
//! template bank and fitted with a rank-one model `y(f, τ) ≈ g(τ) Σ α n(f)`,
//! templates held fixed. The fitted amplitudes `α` and the composite basis
//! `b = Σ α n` (scaled to unit norm) form the unit's pattern.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{normalize_in_place, FrontendConfig, Spectrogram};
use crate::scalar::{norm_sq, Scalar};
use crate::score::{NoteKey, ScoreTimeline, ScoreUnit};
use crate::templates::TemplateBank;

/// Floor applied to model values inside logarithms and negative powers.
pub const DIVERGENCE_FLOOR: f64 = 1e-10;

/// Fitted amplitudes and composite basis of one score unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPattern<T> {
    pub unit_index: usize,
    alphas: BTreeMap<NoteKey, T>,
    basis: Vec<T>,
    composite_norm: T,
    degenerate: bool,
}

impl<T: Scalar> UnitPattern<T> {
    /// Empty pattern of a rest.
    pub fn silence(unit_index: usize, n_bins: usize) -> Self {
        UnitPattern {
            unit_index,
            alphas: BTreeMap::new(),
            basis: vec![T::zero(); n_bins],
            composite_norm: T::zero(),
            degenerate: false,
        }
    }

    /// Builds the pattern from amplitudes, recomputing the basis from `bank`.
    pub fn from_alphas(
        unit_index: usize,
        alphas: BTreeMap<NoteKey, T>,
        bank: &TemplateBank<T>,
    ) -> Result<Self> {
        if let Some((key, v)) = alphas.iter().find(|(_, v)| !v.is_finite() || **v < T::zero()) {
            return Err(Error::Validation(format!(
                "unit {unit_index}: alpha {v} for {key} is negative or non-finite"
            )));
        }
        let mut basis = composite(&alphas, bank)?;
        let composite_norm = norm_sq(&basis).sqrt();
        let degenerate = normalize_in_place(&mut basis) && !alphas.is_empty();
        Ok(UnitPattern {
            unit_index,
            alphas,
            basis,
            composite_norm,
            degenerate,
        })
    }

    pub fn alphas(&self) -> &BTreeMap<NoteKey, T> {
        &self.alphas
    }

    pub fn alpha(&self, key: &NoteKey) -> Option<T> {
        self.alphas.get(key).copied()
    }

    /// Unit-norm composite spectrum (all zeros for rests and degenerate fits).
    pub fn basis(&self) -> &[T] {
        &self.basis
    }

    /// Norm of `Σ α n` before normalization.
    pub fn composite_norm(&self) -> T {
        self.composite_norm
    }

    /// Amplitudes rescaled so that their composite has unit norm.
    pub fn unit_alpha(&self, key: &NoteKey) -> Option<T> {
        let a = self.alpha(key)?;
        Some(if self.composite_norm > T::zero() {
            a / self.composite_norm
        } else {
            T::zero()
        })
    }

    pub fn is_silence(&self) -> bool {
        self.alphas.is_empty()
    }

    /// True when the fit found no energy explainable by the unit's templates.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

fn composite<T: Scalar>(alphas: &BTreeMap<NoteKey, T>, bank: &TemplateBank<T>) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); bank.config().n_bins()];
    for (key, &alpha) in alphas {
        let template = bank.get(key)?;
        for (o, &v) in out.iter_mut().zip(template.spectrum()) {
            *o = *o + alpha * v;
        }
    }
    Ok(out)
}

/// Spectral rendering of one unit and, after fitting, its temporal activity.
#[derive(Debug, Clone)]
pub struct TrainingRender<T> {
    pub unit_index: usize,
    pub spectrogram: Spectrogram<T>,
    pub gains: Option<Vec<T>>,
}

/// Renders a unit as the sum of its templates under a constant unit envelope,
/// `duration` seconds long at the bank's frame rate.
pub fn render_unit<T: Scalar>(
    unit: &ScoreUnit,
    bank: &TemplateBank<T>,
    duration: f64,
) -> Result<TrainingRender<T>> {
    let frames = (duration / bank.config().frame_period()).floor();
    if frames.is_nan() || frames < 1.0 {
        return Err(Error::DurationTooShort(duration));
    }
    render_unit_with_envelope(unit, bank, &vec![T::one(); frames as usize])
}

/// Renders a unit with one envelope value per frame.
pub fn render_unit_with_envelope<T: Scalar>(
    unit: &ScoreUnit,
    bank: &TemplateBank<T>,
    envelope: &[T],
) -> Result<TrainingRender<T>> {
    if unit.is_silence() {
        return Err(Error::RenderSilence);
    }
    if envelope.is_empty() {
        return Err(Error::DurationTooShort(0.0));
    }
    let alphas = unit.notes.iter().map(|k| (k.clone(), T::one())).collect();
    let sum = composite(&alphas, bank)?;
    let frames = envelope
        .iter()
        .map(|&e| sum.iter().map(|&v| v * e).collect())
        .collect();
    Ok(TrainingRender {
        unit_index: unit.index,
        spectrogram: Spectrogram::from_frames(frames, *bank.config())?,
        gains: None,
    })
}

/// Multiplicative-update settings for [`fit_pattern`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub beta: f64,
    pub max_iters: usize,
    /// Stop once the relative objective improvement falls below this.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            beta: 2.0,
            max_iters: 100,
            tol: 1e-5,
        }
    }
}

/// Result of fitting one unit.
#[derive(Debug, Clone)]
pub struct PatternFit<T> {
    pub pattern: UnitPattern<T>,
    /// Temporal activity, scaled so its maximum is 1.
    pub gains: Vec<T>,
    /// Objective after initialization and after each iteration.
    pub objective: Vec<T>,
}

/// Elementwise β-divergence `d(y | x)`; `x` is floored for β < 2.
pub fn beta_divergence<T: Scalar>(y: T, x: T, beta: f64) -> T {
    let floor = T::lit(DIVERGENCE_FLOOR);
    if beta == 2.0 {
        let d = y - x;
        return T::lit(0.5) * d * d;
    }
    let x = x.max(floor);
    if beta == 1.0 {
        if y.is_zero() {
            return x;
        }
        let y = y.max(floor);
        return y * (y / x).ln() - y + x;
    }
    if beta == 0.0 {
        let y = y.max(floor);
        return y / x - (y / x).ln() - T::one();
    }
    let b = T::lit(beta);
    let y = y.max(T::zero());
    let v = (y.powf(b) + (b - T::one()) * x.powf(b) - b * y * x.powf(b - T::one()))
        / (b * (b - T::one()));
    v.max(T::zero())
}

/// Fits gains and amplitudes of `unit` to `render` by alternating
/// multiplicative updates on the β-divergence, then normalizes the basis.
pub fn fit_pattern<T: Scalar>(
    render: &TrainingRender<T>,
    unit: &ScoreUnit,
    bank: &TemplateBank<T>,
    options: &FitOptions,
) -> Result<PatternFit<T>> {
    render.spectrogram.config().ensure_matches(bank.config())?;
    if !options.beta.is_finite() {
        return Err(Error::Validation("beta must be finite".into()));
    }
    let n_bins = render.spectrogram.n_bins();
    if unit.is_silence() {
        return Ok(PatternFit {
            pattern: UnitPattern::silence(unit.index, n_bins),
            gains: vec![T::zero(); render.spectrogram.n_frames()],
            objective: Vec::new(),
        });
    }
    let y = &render.spectrogram;
    if y.as_flat().iter().all(|v| v.is_zero()) {
        return Err(Error::Degenerate(format!(
            "unit {}: all-zero render",
            unit.index
        )));
    }
    let keys: Vec<NoteKey> = unit.notes.iter().cloned().collect();
    let templates: Vec<&[T]> = keys
        .iter()
        .map(|k| bank.get(k).map(|t| t.spectrum()))
        .collect::<Result<_>>()?;
    // Bins where some template is nonzero; elsewhere the model is identically 0.
    let support: Vec<usize> = (0..n_bins)
        .filter(|&f| templates.iter().any(|t| t[f] > T::zero()))
        .collect();

    let mut fitter = Fitter {
        y,
        templates: &templates,
        support: &support,
        beta: options.beta,
        alphas: vec![T::one() / T::from_usize_lossy(keys.len()); keys.len()],
        gains: vec![T::one(); y.n_frames()],
        basis: vec![T::zero(); n_bins],
    };
    fitter.refresh_basis();
    let mut objective = vec![fitter.objective()];
    let check_monotone = (1.0..=2.0).contains(&options.beta);
    let max_frame_norm = y
        .frames()
        .map(|f| norm_sq(f).sqrt())
        .fold(T::zero(), T::max);

    for _ in 0..options.max_iters {
        fitter.update_alphas();
        if fitter.alphas.iter().all(|a| a.is_zero()) {
            break;
        }
        fitter.update_gains();
        let current = fitter.objective();
        let previous = *objective.last().expect("initial objective");
        objective.push(current);
        let slack = T::lit(1e-9) * previous.abs() + T::epsilon() * T::lit(1e3);
        if check_monotone && current > previous + slack {
            return Err(Error::Internal(format!(
                "unit {}: objective increased from {previous} to {current}",
                unit.index
            )));
        }
        if previous.is_zero() || (previous - current) / previous < T::lit(options.tol) {
            break;
        }
    }

    let peak = fitter.gains.iter().fold(T::zero(), |m, &g| m.max(g));
    if peak > T::zero() {
        fitter.gains.iter_mut().for_each(|g| *g = *g / peak);
        fitter.alphas.iter_mut().for_each(|a| *a = *a * peak);
    }
    let alphas: BTreeMap<NoteKey, T> = keys.into_iter().zip(fitter.alphas.iter().copied()).collect();
    let mut pattern = UnitPattern::from_alphas(unit.index, alphas, bank)?;
    if pattern.composite_norm <= T::lit(1e-9) * max_frame_norm {
        pattern.degenerate = true;
        pattern.basis.iter_mut().for_each(|b| *b = T::zero());
    }
    Ok(PatternFit {
        pattern,
        gains: fitter.gains,
        objective,
    })
}

struct Fitter<'a, T> {
    y: &'a Spectrogram<T>,
    templates: &'a [&'a [T]],
    support: &'a [usize],
    beta: f64,
    alphas: Vec<T>,
    gains: Vec<T>,
    basis: Vec<T>,
}

impl<T: Scalar> Fitter<'_, T> {
    fn refresh_basis(&mut self) {
        for &f in self.support {
            self.basis[f] = self
                .templates
                .iter()
                .zip(&self.alphas)
                .fold(T::zero(), |acc, (t, &a)| acc + a * t[f]);
        }
    }

    /// Returns `(y · model^(β-2), model^(β-1))` at one cell.
    fn weights(&self, y: T, model: T) -> (T, T) {
        let floor = T::lit(DIVERGENCE_FLOOR);
        if self.beta == 2.0 {
            return (y, model);
        }
        let m = model.max(floor);
        let b = T::lit(self.beta);
        let num = if y.is_zero() {
            T::zero()
        } else {
            y * m.powf(b - T::lit(2.0))
        };
        let den = if self.beta == 1.0 {
            T::one()
        } else {
            m.powf(b - T::one())
        };
        (num, den)
    }

    fn update_alphas(&mut self) {
        let j_count = self.templates.len();
        let mut num = vec![T::zero(); j_count];
        let mut den = vec![T::zero(); j_count];
        for (tau, frame) in self.y.frames().enumerate() {
            let g = self.gains[tau];
            for &f in self.support {
                let (wn, wd) = self.weights(frame[f], g * self.basis[f]);
                for j in 0..j_count {
                    let n = self.templates[j][f];
                    num[j] = num[j] + g * n * wn;
                    den[j] = den[j] + g * n * wd;
                }
            }
        }
        for j in 0..j_count {
            if den[j] > T::zero() {
                self.alphas[j] = self.alphas[j] * num[j] / den[j];
            }
        }
        self.refresh_basis();
    }

    fn update_gains(&mut self) {
        for (tau, frame) in self.y.frames().enumerate() {
            let g = self.gains[tau];
            let (mut num, mut den) = (T::zero(), T::zero());
            for &f in self.support {
                let b = self.basis[f];
                let (wn, wd) = self.weights(frame[f], g * b);
                num = num + b * wn;
                den = den + b * wd;
            }
            if den > T::zero() {
                self.gains[tau] = g * num / den;
            }
        }
    }

    fn objective(&self) -> T {
        let mut total = T::zero();
        for (tau, frame) in self.y.frames().enumerate() {
            let g = self.gains[tau];
            for (f, &y) in frame.iter().enumerate() {
                total = total + beta_divergence(y, g * self.basis[f], self.beta);
            }
        }
        total
    }
}

/// Rendering and fitting settings used for every unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingOptions {
    pub fit: FitOptions,
    /// Length of each unit's spectral rendering, in seconds.
    pub render_duration: f64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            fit: FitOptions::default(),
            render_duration: 0.5,
        }
    }
}

/// Trains one pattern per unit, in timeline order, in parallel.
pub fn build_all_patterns<T: Scalar>(
    timeline: &ScoreTimeline,
    bank: &TemplateBank<T>,
    options: &TrainingOptions,
) -> Result<Vec<UnitPattern<T>>> {
    timeline
        .units()
        .par_iter()
        .map(|unit| {
            if unit.is_silence() {
                return Ok(UnitPattern::silence(unit.index, bank.config().n_bins()));
            }
            let render = render_unit(unit, bank, options.render_duration)?;
            Ok(fit_pattern(&render, unit, bank, &options.fit)?.pattern)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PatternsDocument {
    units: Vec<PatternRecord>,
}

#[derive(Serialize, Deserialize)]
struct PatternRecord {
    k: usize,
    alphas: Vec<AlphaRecord>,
    basis: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AlphaRecord {
    pitch: u8,
    instrument: String,
    alpha: f64,
}

pub fn patterns_to_json<T: Scalar>(patterns: &[UnitPattern<T>]) -> String {
    let doc = PatternsDocument {
        units: patterns
            .iter()
            .map(|p| PatternRecord {
                k: p.unit_index,
                alphas: p
                    .alphas
                    .iter()
                    .map(|(key, a)| AlphaRecord {
                        pitch: key.pitch,
                        instrument: key.instrument.clone(),
                        alpha: a.to_f64_lossy(),
                    })
                    .collect(),
                basis: p.basis.iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("patterns serialize")
}

/// Parses patterns and checks each stored basis against the one implied by `bank`.
pub fn patterns_from_json<T: Scalar>(text: &str, bank: &TemplateBank<T>) -> Result<Vec<UnitPattern<T>>> {
    let doc: PatternsDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let n_bins = bank.config().n_bins();
    doc.units
        .into_iter()
        .map(|rec| {
            if rec.basis.len() != n_bins {
                return Err(Error::ConfigMismatch(format!(
                    "pattern {} has {} bins, bank has {n_bins}",
                    rec.k,
                    rec.basis.len()
                )));
            }
            let alphas = rec
                .alphas
                .into_iter()
                .map(|a| (NoteKey::new(a.pitch, a.instrument), T::lit(a.alpha)))
                .collect();
            let mut pattern = UnitPattern::from_alphas(rec.k, alphas, bank)?;
            let stored_zero = rec.basis.iter().all(|&v| v == 0.0);
            if pattern.is_degenerate() || (stored_zero && !pattern.is_silence()) {
                pattern.degenerate = true;
                pattern.basis.iter_mut().for_each(|b| *b = T::zero());
            }
            let drift = rec
                .basis
                .iter()
                .zip(&pattern.basis)
                .fold(0.0f64, |m, (&s, &b)| m.max((s - b.to_f64_lossy()).abs()));
            if drift > 1e-6 {
                return Err(Error::ConfigMismatch(format!(
                    "pattern {} basis differs from the bank's composite by {drift:.3e}",
                    rec.k
                )));
            }
            Ok(pattern)
        })
        .collect()
}

pub fn save_patterns<T: Scalar>(patterns: &[UnitPattern<T>], path: &Path) -> Result<()> {
    std::fs::write(path, patterns_to_json(patterns)).map_err(|e| Error::io(path, e))
}

pub fn load_patterns<T: Scalar>(path: &Path, bank: &TemplateBank<T>) -> Result<Vec<UnitPattern<T>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    patterns_from_json(&text, bank)
}

/// Checks that `patterns` line up one-to-one with the timeline's units.
pub fn check_patterns<T: Scalar>(
    patterns: &[UnitPattern<T>],
    timeline: &ScoreTimeline,
    config: &FrontendConfig,
) -> Result<()> {
    if patterns.len() != timeline.len() {
        return Err(Error::Validation(format!(
            "{} patterns for {} score units",
            patterns.len(),
            timeline.len()
        )));
    }
    for (unit, pattern) in timeline.units().iter().zip(patterns) {
        if pattern.unit_index != unit.index
            || pattern.basis.len() != config.n_bins()
            || pattern.alphas.keys().ne(unit.notes.iter())
        {
            return Err(Error::Validation(format!(
                "pattern {} does not match score unit {}",
                pattern.unit_index, unit.index
            )));
        }
    }
    Ok(())
}
