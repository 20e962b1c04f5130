//! Magnitude spectrogram front end: STFT, per-frame unit-norm scaling, and
//! the `SALSPEC1` binary format.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm_sq, Scalar};

pub const SPECTROGRAM_MAGIC: &[u8; 8] = b"SALSPEC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients<T: Scalar>(self, n: usize) -> Vec<T> {
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        let len = T::from_usize_lossy(n);
        (0..n)
            .map(|i| {
                let phase = two_pi * T::from_usize_lossy(i) / len;
                match self {
                    WindowKind::Hann => T::lit(0.5) - T::lit(0.5) * phase.cos(),
                    WindowKind::Hamming => T::lit(0.54) - T::lit(0.46) * phase.cos(),
                    WindowKind::Rectangular => T::one(),
                }
            })
            .collect()
    }

    /// Half-width of the main lobe, in bins.
    pub fn mainlobe_half_width(self) -> usize {
        match self {
            WindowKind::Hann | WindowKind::Hamming => 2,
            WindowKind::Rectangular => 1,
        }
    }
}

/// STFT analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop_size: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 22050,
            fft_size: 4096,
            hop_size: 256,
            window: WindowKind::Hann,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Validation("sample_rate must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Validation(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop_size == 0 || self.hop_size > self.fft_size {
            return Err(Error::Validation(format!(
                "hop_size {} must lie in (0, fft_size = {}]",
                self.hop_size, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_width_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_size as f64
    }

    /// Seconds between consecutive frames.
    pub fn frame_period(&self) -> f64 {
        self.hop_size as f64 / self.sample_rate as f64
    }

    /// Offset of a frame's center from its first sample, in seconds.
    pub fn frame_center_offset(&self) -> f64 {
        self.fft_size as f64 / (2.0 * self.sample_rate as f64)
    }

    /// Center time of frame `t`.
    pub fn frame_time(&self, t: usize) -> f64 {
        t as f64 * self.frame_period() + self.frame_center_offset()
    }

    /// Checks that two configurations describe the same analysis.
    pub fn ensure_matches(&self, other: &FrontendConfig) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(format!(
                "expected {self:?}, got {other:?}"
            )))
        }
    }
}

/// Magnitude frames, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    data: Vec<T>,
    n_frames: usize,
    n_bins: usize,
    config: FrontendConfig,
    normalized: bool,
    silent: Vec<bool>,
}

impl<T: Scalar> Spectrogram<T> {
    /// Wraps raw frames. Every frame must have `config.n_bins()` nonnegative entries.
    pub fn from_frames(frames: Vec<Vec<T>>, config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let n_bins = config.n_bins();
        let n_frames = frames.len();
        let mut data = Vec::with_capacity(n_frames * n_bins);
        for (t, frame) in frames.into_iter().enumerate() {
            if frame.len() != n_bins {
                return Err(Error::Validation(format!(
                    "frame {t} has {} bins, expected {n_bins}",
                    frame.len()
                )));
            }
            data.extend(frame);
        }
        Self::from_flat(data, n_frames, config, false)
    }

    pub(crate) fn from_flat(
        data: Vec<T>,
        n_frames: usize,
        config: FrontendConfig,
        normalized: bool,
    ) -> Result<Self> {
        let n_bins = config.n_bins();
        if data.len() != n_frames * n_bins {
            return Err(Error::Validation(format!(
                "{} values do not form {n_frames} frames of {n_bins} bins",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::Validation(format!(
                "spectrogram entries must be finite and nonnegative, found {bad}"
            )));
        }
        let silent = data
            .chunks(n_bins.max(1))
            .map(|f| f.iter().all(|v| v.is_zero()))
            .collect();
        Ok(Spectrogram {
            data,
            n_frames,
            n_bins,
            config,
            normalized,
            silent,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks(self.n_bins)
    }

    pub fn is_silent(&self, t: usize) -> bool {
        self.silent[t]
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn scaled(&self, gain: T) -> Self {
        let data = self.data.iter().map(|&v| v * gain).collect();
        Spectrogram::from_flat(data, self.n_frames, self.config, false)
            .expect("scaling preserves validity")
    }

    /// Writes the `SALSPEC1` binary layout.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<spectrogram stream>", e);
        w.write_all(SPECTROGRAM_MAGIC).map_err(io)?;
        for v in [
            self.n_frames as u32,
            self.n_bins as u32,
            self.config.sample_rate,
            self.config.fft_size as u32,
            self.config.hop_size as u32,
        ] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&[self.normalized as u8]).map_err(io)?;
        write_f32s(&mut w, &self.data).map_err(io)?;
        Ok(())
    }

    /// Reads the `SALSPEC1` binary layout. The window is not stored and is reported as Hann.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<spectrogram stream>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != SPECTROGRAM_MAGIC {
            return Err(Error::Format("bad spectrogram magic".into()));
        }
        let mut header = [0u32; 5];
        for h in &mut header {
            *h = read_u32(&mut r).map_err(io)?;
        }
        let [n_frames, n_bins, sample_rate, fft_size, hop_size] = header.map(|v| v as usize);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(io)?;
        let config = FrontendConfig {
            sample_rate: sample_rate as u32,
            fft_size,
            hop_size,
            window: WindowKind::Hann,
        };
        config.validate()?;
        if n_bins != config.n_bins() {
            return Err(Error::Format(format!(
                "header has {n_bins} bins but fft_size {fft_size}"
            )));
        }
        let data = read_f32s(&mut r, n_frames * n_bins).map_err(io)?;
        Spectrogram::from_flat(data, n_frames, config, flag[0] != 0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(std::io::BufWriter::new(file))
            .map_err(|e| relabel_io(e, path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(std::io::BufReader::new(file)).map_err(|e| relabel_io(e, path))
    }
}

pub(crate) fn relabel_io(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

pub(crate) fn write_f32s<W: Write, T: Scalar>(w: &mut W, values: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_f32s<R: Read, T: Scalar>(r: &mut R, n: usize) -> std::io::Result<Vec<T>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Magnitude STFT without centering: frame `t` covers samples `[t*hop, t*hop + fft_size)`.
pub fn stft_magnitude<T: Scalar>(samples: &[T], config: &FrontendConfig) -> Result<Spectrogram<T>> {
    config.validate()?;
    let n = config.fft_size;
    if samples.len() < n {
        return Err(Error::InputTooShort {
            samples: samples.len(),
            needed: n,
        });
    }
    let n_frames = (samples.len() - n) / config.hop_size + 1;
    let n_bins = config.n_bins();
    let window: Vec<T> = config.window.coefficients(n);
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);

    let mut data = vec![T::zero(); n_frames * n_bins];
    data.par_chunks_mut(n_bins).enumerate().for_each_init(
        || {
            (
                vec![Complex::new(T::zero(), T::zero()); n],
                vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()],
            )
        },
        |(buf, scratch), (t, out)| {
            let start = t * config.hop_size;
            for (slot, (&x, &w)) in buf
                .iter_mut()
                .zip(samples[start..start + n].iter().zip(&window))
            {
                *slot = Complex::new(x * w, T::zero());
            }
            fft.process_with_scratch(buf, scratch);
            for (o, c) in out.iter_mut().zip(buf.iter()) {
                *o = c.norm();
            }
        },
    );
    Spectrogram::from_flat(data, n_frames, *config, false)
}

/// Scales `v` to unit Euclidean norm. The flag is true when `v` is all zeros,
/// in which case the zero vector is returned unchanged.
pub fn normalize_frame<T: Scalar>(v: &[T]) -> (Vec<T>, bool) {
    let mut out = v.to_vec();
    let silent = normalize_in_place(&mut out);
    (out, silent)
}

pub(crate) fn normalize_in_place<T: Scalar>(v: &mut [T]) -> bool {
    // Rescale by the max first so tiny or huge magnitudes do not under/overflow.
    let peak = v.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    if peak.is_zero() {
        return true;
    }
    v.iter_mut().for_each(|x| *x = *x / peak);
    let norm = norm_sq(v).sqrt();
    v.iter_mut().for_each(|x| *x = *x / norm);
    false
}

/// Applies [`normalize_frame`] to every frame.
pub fn normalize_spectrogram<T: Scalar>(s: &Spectrogram<T>) -> Spectrogram<T> {
    let mut data = s.data.clone();
    let silent: Vec<bool> = data
        .par_chunks_mut(s.n_bins.max(1))
        .map(normalize_in_place)
        .collect();
    Spectrogram {
        data,
        n_frames: s.n_frames,
        n_bins: s.n_bins,
        config: s.config,
        normalized: true,
        silent,
    }
}

/// Reads a 16-bit integer or 32-bit float WAV file, averaging channels to mono.
/// Returns the samples and the file's sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::Validation(format!(
                "{}: unsupported WAV encoding {fmt:?} {bits}-bit",
                path.display()
            )))
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes mono 32-bit float WAV.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Loads a WAV file and computes its magnitude spectrogram, rejecting rate mismatches.
pub fn wav_spectrogram<T: Scalar>(path: &Path, config: &FrontendConfig) -> Result<Spectrogram<T>> {
    let (samples, rate) = read_wav(path)?;
    if rate != config.sample_rate {
        return Err(Error::ConfigMismatch(format!(
            "{} has sample rate {rate} Hz, analysis expects {} Hz",
            path.display(),
            config.sample_rate
        )));
    }
    let samples: Vec<T> = samples.into_iter().map(|s| T::lit(s as f64)).collect();
    stft_magnitude(&samples, config)
}
