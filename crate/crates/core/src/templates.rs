//! Unit-norm note spectra, learned from isolated-note recordings or built
//! from a harmonic comb model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{normalize_in_place, stft_magnitude, FrontendConfig};
use crate::scalar::{norm_sq, Scalar};
use crate::score::{NoteKey, MAX_PITCH, MIN_PITCH};

/// Fraction of the loudest frame's energy a frame needs to count as sustain.
pub const SUSTAIN_ENERGY_GATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NoteTemplate<T> {
    pub key: NoteKey,
    spectrum: Vec<T>,
}

impl<T: Scalar> NoteTemplate<T> {
    /// Normalizes `spectrum` to unit norm. Fails on negative, non-finite or all-zero input.
    pub fn new(key: NoteKey, mut spectrum: Vec<T>) -> Result<Self> {
        if spectrum.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Validation(format!(
                "template {key} has negative or non-finite entries"
            )));
        }
        if normalize_in_place(&mut spectrum) {
            return Err(Error::Validation(format!("template {key} is all zeros")));
        }
        Ok(NoteTemplate { key, spectrum })
    }

    pub fn spectrum(&self) -> &[T] {
        &self.spectrum
    }
}

/// Harmonic comb parameters for synthetic templates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentProfile {
    /// Partial `h` has peak amplitude `h^-decay`.
    pub decay: f64,
    pub partials: usize,
}

impl Default for InstrumentProfile {
    fn default() -> Self {
        InstrumentProfile {
            decay: 1.0,
            partials: 20,
        }
    }
}

/// Equal-tempered fundamental of a MIDI pitch.
pub fn midi_to_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

/// Magnitude of the window's transform at `offset` bins from its peak, relative to the peak.
fn window_response(coeffs: &[f64], offset: f64) -> f64 {
    let n = coeffs.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &w) in coeffs.iter().enumerate() {
        let phase = -2.0 * std::f64::consts::PI * offset * i as f64 / n;
        re += w * phase.cos();
        im += w * phase.sin();
    }
    let dc: f64 = coeffs.iter().sum();
    (re * re + im * im).sqrt() / dc
}

/// Harmonic template: one window main lobe per partial, centered on `h * f0`
/// with peak `h^-decay`. Partials at or above Nyquist are dropped.
pub fn synth_template<T: Scalar>(
    key: NoteKey,
    profile: InstrumentProfile,
    config: &FrontendConfig,
) -> Result<NoteTemplate<T>> {
    config.validate()?;
    if !(MIN_PITCH..=MAX_PITCH).contains(&key.pitch) {
        return Err(Error::Validation(format!("pitch {} out of range", key.pitch)));
    }
    if profile.partials == 0 || !profile.decay.is_finite() {
        return Err(Error::Validation(
            "instrument profile needs at least one partial and a finite decay".into(),
        ));
    }
    let f0 = midi_to_hz(key.pitch);
    let nyquist = config.sample_rate as f64 / 2.0;
    if f0 >= nyquist {
        return Err(Error::Validation(format!(
            "fundamental {f0:.1} Hz of pitch {} is at or above Nyquist {nyquist} Hz",
            key.pitch
        )));
    }
    let coeffs: Vec<f64> = config.window.coefficients(config.fft_size);
    let half_width = config.window.mainlobe_half_width() as f64;
    let n_bins = config.n_bins();
    let mut spectrum = vec![0.0f64; n_bins];
    for h in (1..=profile.partials).take_while(|&h| h as f64 * f0 < nyquist) {
        let center = h as f64 * f0 / config.bin_width_hz();
        let peak = (h as f64).powf(-profile.decay);
        let lo = (center - half_width).ceil().max(0.0) as usize;
        let hi = ((center + half_width).floor() as usize).min(n_bins - 1);
        for (bin, slot) in spectrum.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let offset = bin as f64 - center;
            if offset.abs() < half_width {
                *slot += peak * window_response(&coeffs, offset);
            }
        }
    }
    NoteTemplate::new(key, spectrum.into_iter().map(T::lit).collect())
}

/// Averages the sustain frames of an isolated-note recording.
pub fn learn_template<T: Scalar>(
    recording: &[T],
    key: NoteKey,
    config: &FrontendConfig,
) -> Result<NoteTemplate<T>> {
    let spec = stft_magnitude(recording, config)?;
    let energies: Vec<T> = spec.frames().map(norm_sq).collect();
    let max_energy = energies.iter().fold(T::zero(), |m, &e| m.max(e));
    if max_energy.is_zero() {
        return Err(Error::SilentRecording);
    }
    let gate = max_energy * T::lit(SUSTAIN_ENERGY_GATE);
    let mut sum = vec![T::zero(); spec.n_bins()];
    let mut count = 0usize;
    for (frame, &e) in spec.frames().zip(&energies) {
        if e >= gate {
            count += 1;
            for (s, &v) in sum.iter_mut().zip(frame) {
                *s = *s + v;
            }
        }
    }
    if count == 0 {
        return Err(Error::SilentRecording);
    }
    NoteTemplate::new(key, sum)
}

/// Templates indexed by note key, all computed under one analysis configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank<T> {
    templates: BTreeMap<NoteKey, NoteTemplate<T>>,
    config: FrontendConfig,
}

impl<T: Scalar> TemplateBank<T> {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        Ok(TemplateBank {
            templates: BTreeMap::new(),
            config,
        })
    }

    /// Synthetic bank with one harmonic template per key.
    pub fn synthetic<'a>(
        keys: impl IntoIterator<Item = &'a NoteKey>,
        profile: InstrumentProfile,
        config: FrontendConfig,
    ) -> Result<Self> {
        let mut bank = TemplateBank::new(config)?;
        for key in keys {
            bank.insert(synth_template(key.clone(), profile, &config)?)?;
        }
        Ok(bank)
    }

    pub fn insert(&mut self, template: NoteTemplate<T>) -> Result<()> {
        if template.spectrum.len() != self.config.n_bins() {
            return Err(Error::ConfigMismatch(format!(
                "template {} has {} bins, bank expects {}",
                template.key,
                template.spectrum.len(),
                self.config.n_bins()
            )));
        }
        self.templates.insert(template.key.clone(), template);
        Ok(())
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NoteTemplate<T>> {
        self.templates.values()
    }

    pub fn get(&self, key: &NoteKey) -> Result<&NoteTemplate<T>> {
        self.templates
            .get(key)
            .ok_or_else(|| Error::TemplateMissing(key.clone()))
    }

    pub fn lookup(&self, pitch: u8, instrument: &str) -> Result<&NoteTemplate<T>> {
        self.get(&NoteKey::new(pitch, instrument))
    }

    /// Lookup that also checks the caller's analysis configuration.
    pub fn lookup_for(
        &self,
        config: &FrontendConfig,
        pitch: u8,
        instrument: &str,
    ) -> Result<&NoteTemplate<T>> {
        self.config.ensure_matches(config)?;
        self.lookup(pitch, instrument)
    }

    pub fn to_json(&self) -> String {
        let doc = BankDocument {
            config: self.config,
            templates: self
                .templates
                .values()
                .map(|t| TemplateRecord {
                    pitch: t.key.pitch,
                    instrument: t.key.instrument.clone(),
                    spectrum: t.spectrum.iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("bank serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BankDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut bank = TemplateBank::new(doc.config)?;
        for rec in doc.templates {
            let key = NoteKey::new(rec.pitch, rec.instrument);
            let spectrum = rec.spectrum.into_iter().map(T::lit).collect();
            bank.insert(NoteTemplate::new(key, spectrum)?)?;
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct BankDocument {
    config: FrontendConfig,
    templates: Vec<TemplateRecord>,
}

#[derive(Serialize, Deserialize)]
struct TemplateRecord {
    pitch: u8,
    instrument: String,
    spectrum: Vec<f64>,
}
