//! Score parsing and segmentation into score units.
//!
//! A score unit is a maximal span of the score over which the set of sounding
//! `(pitch, instrument)` pairs is constant. The ordered units form the score
//! axis of the distortion matrix.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PITCH: u8 = 21;
pub const MAX_PITCH: u8 = 108;

/// Instants closer than this (seconds) are treated as one boundary.
pub const SNAP_TOLERANCE: f64 = 1e-3;

/// A `(pitch, instrument)` pair identifying one note template.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NoteKey {
    pub pitch: u8,
    pub instrument: String,
}

impl NoteKey {
    pub fn new(pitch: u8, instrument: impl Into<String>) -> Self {
        NoteKey {
            pitch,
            instrument: instrument.into(),
        }
    }
}

impl fmt::Display for NoteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.pitch, self.instrument)
    }
}

pub type NoteSet = BTreeSet<NoteKey>;

/// One score event.
#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub pitch: u8,
    pub instrument: String,
    pub onset: f64,
    pub offset: f64,
}

impl Note {
    pub fn new(pitch: u8, instrument: impl Into<String>, onset: f64, offset: f64) -> Result<Self> {
        let note = Note {
            pitch,
            instrument: instrument.into(),
            onset,
            offset,
        };
        note.validate().map_err(Error::Validation)?;
        Ok(note)
    }

    pub fn key(&self) -> NoteKey {
        NoteKey::new(self.pitch, self.instrument.clone())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(MIN_PITCH..=MAX_PITCH).contains(&self.pitch) {
            return Err(format!(
                "pitch {} outside [{MIN_PITCH}, {MAX_PITCH}]",
                self.pitch
            ));
        }
        if !self.onset.is_finite() || !self.offset.is_finite() {
            return Err("non-finite onset or offset".into());
        }
        if self.onset < 0.0 {
            return Err(format!("negative onset {}", self.onset));
        }
        if self.offset <= self.onset {
            return Err(format!(
                "offset {} not after onset {}",
                self.offset, self.onset
            ));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ScoreDocument {
    notes: Vec<ScoreEvent>,
}

#[derive(Deserialize)]
struct ScoreEvent {
    pitch: i64,
    instrument: String,
    onset: f64,
    offset: f64,
}

/// Parses a score JSON document into notes, in document order.
pub fn parse_score(document: &str) -> Result<Vec<Note>> {
    let doc: ScoreDocument = serde_json::from_str(document).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    doc.notes
        .into_iter()
        .enumerate()
        .map(|(i, ev)| {
            let describe = |why: String| {
                Error::Validation(format!(
                    "event {i} (pitch {}, instrument {:?}): {why}",
                    ev.pitch, ev.instrument
                ))
            };
            let pitch = u8::try_from(ev.pitch)
                .ok()
                .filter(|p| (MIN_PITCH..=MAX_PITCH).contains(p))
                .ok_or_else(|| describe(format!("pitch outside [{MIN_PITCH}, {MAX_PITCH}]")))?;
            let note = Note {
                pitch,
                instrument: ev.instrument.clone(),
                onset: ev.onset,
                offset: ev.offset,
            };
            note.validate().map_err(describe)?;
            Ok(note)
        })
        .collect()
}

/// Reads and parses a score JSON file.
pub fn load_score(path: &std::path::Path) -> Result<Vec<Note>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_score(&text)
}

/// Serializes notes back into the score JSON schema.
pub fn score_to_json(notes: &[Note]) -> String {
    let events: Vec<_> = notes
        .iter()
        .map(|n| {
            serde_json::json!({
                "pitch": n.pitch,
                "instrument": n.instrument,
                "onset": n.onset,
                "offset": n.offset,
            })
        })
        .collect();
    serde_json::json!({ "notes": events }).to_string()
}

/// A maximal span of constant concurrent-note content. An empty note set is a rest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreUnit {
    pub index: usize,
    pub notes: NoteSet,
    pub span_start: f64,
    pub span_end: f64,
}

impl ScoreUnit {
    pub fn is_silence(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.span_end - self.span_start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTimeline {
    units: Vec<ScoreUnit>,
    total_duration: f64,
}

impl ScoreTimeline {
    pub fn units(&self) -> &[ScoreUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn unit(&self, k: usize) -> Result<&ScoreUnit> {
        self.units.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.units.len(),
        })
    }

    /// Index of the unit whose half-open span contains `time`. Times at or past
    /// the end map to the last unit, negative times to the first.
    pub fn unit_at(&self, time: f64) -> usize {
        let idx = self.units.partition_point(|u| u.span_end <= time);
        idx.min(self.units.len() - 1)
    }

    /// Every distinct note key used anywhere in the score.
    pub fn note_keys(&self) -> NoteSet {
        self.units
            .iter()
            .flat_map(|u| u.notes.iter().cloned())
            .collect()
    }

    /// Rebuilds a note list with one note per (unit, key), spanning the unit.
    pub fn to_notes(&self) -> Vec<Note> {
        self.units
            .iter()
            .flat_map(|u| {
                u.notes.iter().map(move |key| Note {
                    pitch: key.pitch,
                    instrument: key.instrument.clone(),
                    onset: u.span_start,
                    offset: u.span_end,
                })
            })
            .collect()
    }
}

/// Segments notes into score units by sweeping over all onset/offset instants.
pub fn build_timeline(notes: &[Note]) -> Result<ScoreTimeline> {
    if notes.is_empty() {
        return Err(Error::EmptyScore);
    }
    for (i, note) in notes.iter().enumerate() {
        note.validate()
            .map_err(|why| Error::Validation(format!("note {i}: {why}")))?;
    }

    let mut instants: Vec<f64> = notes
        .iter()
        .flat_map(|n| [n.onset, n.offset])
        .chain(std::iter::once(0.0))
        .collect();
    instants.sort_by(f64::total_cmp);
    let mut boundaries: Vec<f64> = Vec::with_capacity(instants.len());
    for t in instants {
        match boundaries.last() {
            Some(&last) if t - last < SNAP_TOLERANCE => {}
            _ => boundaries.push(t),
        }
    }
    let snap = |t: f64| -> usize {
        // Index of the boundary cluster that absorbed t: the last boundary <= t.
        boundaries.partition_point(|&b| b <= t + 1e-12).saturating_sub(1)
    };

    let segments = boundaries.len().saturating_sub(1);
    let mut sets: Vec<NoteSet> = vec![NoteSet::new(); segments];
    for note in notes {
        let (from, to) = (snap(note.onset), snap(note.offset));
        for set in &mut sets[from..to] {
            set.insert(note.key());
        }
    }

    let mut units: Vec<ScoreUnit> = Vec::new();
    for (i, set) in sets.into_iter().enumerate() {
        let (start, end) = (boundaries[i], boundaries[i + 1]);
        match units.last_mut() {
            Some(last) if last.notes == set => last.span_end = end,
            _ => units.push(ScoreUnit {
                index: units.len(),
                notes: set,
                span_start: start,
                span_end: end,
            }),
        }
    }
    if units.is_empty() {
        return Err(Error::EmptyScore);
    }
    let total_duration = units.last().map(|u| u.span_end).unwrap_or(0.0);
    Ok(ScoreTimeline {
        units,
        total_duration,
    })
}

/// Notes of unit `k` together with those of unit `k + 1`; the last unit stands alone.
pub fn unit_union(timeline: &ScoreTimeline, k: usize) -> Result<NoteSet> {
    let unit = timeline.unit(k)?;
    let mut set = unit.notes.clone();
    if let Some(next) = timeline.units.get(k + 1) {
        set.extend(next.notes.iter().cloned());
    }
    Ok(set)
}
