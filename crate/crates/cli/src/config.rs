//! Run configuration: TOML file values, overridden by command-line flags.

use std::path::Path;

use scorealign::{
    AlphaScaling, Constraint, DistanceForm, DistortionKind, DtwOptions, Error, FitOptions,
    FrontendConfig, Result, SubspaceOptions, TrainingOptions, WindowKind,
};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub frontend: FrontendSection,
    pub training: TrainingSection,
    pub distortion: DistortionSection,
    pub dtw: DtwSection,
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendSection {
    pub sample_rate: Option<u32>,
    pub fft_size: Option<usize>,
    pub hop_size: Option<usize>,
    pub window: Option<WindowKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub beta: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub render_duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DistortionChoice {
    Novel,
    Baseline,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSection {
    pub kind: Option<DistortionChoice>,
    pub beta: Option<f64>,
    pub constraint: Option<Constraint>,
    pub alpha_scaling: Option<AlphaScaling>,
    pub distance: Option<DistanceForm>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtwSection {
    pub allow_skip: Option<bool>,
    pub band: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub sigma: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {}", path.display(), e.message())))
    }

    pub fn frontend(&self) -> Result<FrontendConfig> {
        let d = FrontendConfig::default();
        let f = &self.frontend;
        let config = FrontendConfig {
            sample_rate: f.sample_rate.unwrap_or(d.sample_rate),
            fft_size: f.fft_size.unwrap_or(d.fft_size),
            hop_size: f.hop_size.unwrap_or(d.hop_size),
            window: f.window.unwrap_or(d.window),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn training(&self, beta: Option<f64>, max_iters: Option<usize>) -> Result<TrainingOptions> {
        let d = TrainingOptions::default();
        let t = &self.training;
        let options = TrainingOptions {
            fit: FitOptions {
                beta: beta.or(t.beta).unwrap_or(d.fit.beta),
                max_iters: max_iters.or(t.max_iters).unwrap_or(d.fit.max_iters),
                tol: t.tol.unwrap_or(d.fit.tol),
            },
            render_duration: t.render_duration.unwrap_or(d.render_duration),
        };
        if !(1.0..=2.0).contains(&options.fit.beta) {
            return Err(Error::Validation(format!(
                "training beta {} must lie in [1, 2]",
                options.fit.beta
            )));
        }
        if !(options.fit.tol.is_finite() && options.fit.tol >= 0.0) {
            return Err(Error::Validation("training tol must be nonnegative".into()));
        }
        if !(options.render_duration.is_finite() && options.render_duration > 0.0) {
            return Err(Error::Validation("render_duration must be positive".into()));
        }
        Ok(options)
    }

    pub fn distortion(&self, flags: &DistortionFlags) -> Result<DistortionKind> {
        let s = &self.distortion;
        match flags.kind.or(s.kind).unwrap_or(DistortionChoice::Novel) {
            DistortionChoice::Baseline => {
                let beta = flags.beta.or(s.beta).unwrap_or(1.0);
                if !beta.is_finite() || beta <= 0.0 {
                    return Err(Error::Validation(format!(
                        "baseline beta {beta} must be positive"
                    )));
                }
                Ok(DistortionKind::Baseline { beta })
            }
            DistortionChoice::Novel => {
                let mut options = SubspaceOptions {
                    constraint: s.constraint.unwrap_or_default(),
                    alpha_scaling: s.alpha_scaling.unwrap_or_default(),
                    distance: s.distance.unwrap_or_default(),
                };
                if flags.unconstrained {
                    options.constraint = Constraint::Unconstrained;
                }
                if flags.raw_alpha {
                    options.alpha_scaling = AlphaScaling::Raw;
                }
                if flags.squared {
                    options.distance = DistanceForm::Squared;
                }
                Ok(DistortionKind::Subspace(options))
            }
        }
    }

    pub fn dtw(&self, allow_skip: bool, band: Option<usize>) -> DtwOptions {
        DtwOptions {
            allow_skip: allow_skip || self.dtw.allow_skip.unwrap_or(false),
            band: band.or(self.dtw.band),
        }
    }

    pub fn sigma(&self, flag: Option<f64>) -> Result<f64> {
        let sigma = flag.or(self.synth.sigma).unwrap_or(0.0);
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Validation(format!("sigma {sigma} must be nonnegative")));
        }
        Ok(sigma)
    }
}

/// Distortion-related flags shared by `align` and `eval`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct DistortionFlags {
    /// Cost used to fill the distortion matrix.
    #[arg(long = "distortion", value_enum)]
    pub kind: Option<DistortionChoice>,
    /// β of the baseline divergence.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Allow negative decomposition coefficients.
    #[arg(long)]
    pub unconstrained: bool,
    /// Compare against raw trained amplitudes instead of unit-norm ones.
    #[arg(long)]
    pub raw_alpha: bool,
    /// Use the squared coefficient distance.
    #[arg(long)]
    pub squared: bool,
}
