mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{DistortionFlags, RunConfig};
use scorealign::eval::{CorpusCase, CorpusManifest, GroundTruth};
use scorealign::frontend::{read_wav, wav_spectrogram};
use scorealign::score::NoteSet;
use scorealign::templates::learn_template;
use scorealign::training::{load_patterns, save_patterns};
use scorealign::{
    align, build_all_patterns, build_timeline, dtw, evaluate, extract_onsets, load_score,
    synth_performance, AlignOptions, AlignmentReport, DistortionMatrix, Error, EvalReport,
    InstrumentProfile, NoteKey, Result, ScoreTimeline, Spectrogram, TemplateBank,
    TrainingOptions, UnitOnset, UnitPattern, WarpMap, WarpSegment,
};

#[derive(Parser)]
#[command(name = "scorealign", version, about = "Align audio performances to their scores")]
struct Cli {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for synthetic noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a template bank from isolated-note WAVs or a harmonic model.
    Templates(TemplatesArgs),
    /// Train one spectral pattern per score unit.
    Patterns(PatternsArgs),
    /// Align a performance to a score and print the onsets as JSON.
    Align(AlignArgs),
    /// Render tempo-warped synthetic performances with ground truth.
    Synth(SynthArgs),
    /// Score estimated onsets against ground truth, or run a whole corpus.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TemplatesArgs {
    /// Output bank JSON.
    #[arg(long)]
    out: PathBuf,
    /// Directory of `<instrument>_<pitch>.wav` recordings.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    wav_dir: Option<PathBuf>,
    /// Use harmonic-comb templates instead of recordings.
    #[arg(long, requires = "pitches")]
    synthetic: bool,
    /// MIDI pitches, e.g. `48-84` or `60,64,67`.
    #[arg(long)]
    pitches: Option<String>,
    #[arg(long, default_value = "piano")]
    instrument: String,
    /// Partial amplitude decay exponent.
    #[arg(long)]
    decay: Option<f64>,
    /// Number of harmonic partials.
    #[arg(long)]
    partials: Option<usize>,
}

#[derive(Args)]
struct PatternsArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    /// Output patterns JSON.
    #[arg(long)]
    out: PathBuf,
    /// β of the training divergence, in [1, 2].
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    /// Trained patterns; trained on the fly when omitted.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Performance recording.
    #[arg(long, conflicts_with_all = ["spectrogram", "matrix_in"])]
    wav: Option<PathBuf>,
    /// Precomputed performance spectrogram.
    #[arg(long, conflicts_with = "matrix_in")]
    spectrogram: Option<PathBuf>,
    /// Reuse a previously dumped binary distortion matrix.
    #[arg(long)]
    matrix_in: Option<PathBuf>,
    #[command(flatten)]
    distortion: DistortionFlags,
    /// Allow the path to skip one unit per frame.
    #[arg(long)]
    allow_skip: bool,
    /// Sakoe–Chiba band half-width in frames.
    #[arg(long)]
    band: Option<usize>,
    /// Dump the distortion matrix (`.csv` for CSV, anything else binary).
    #[arg(long)]
    matrix_out: Option<PathBuf>,
    /// Write the full path as `k,t` CSV.
    #[arg(long)]
    path_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    score: Option<PathBuf>,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long, conflicts_with = "manifest")]
    patterns: Option<PathBuf>,
    /// Corpus manifest; writes `<name>.spec` and `<name>.truth.json` per case.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for manifest mode.
    #[arg(long, requires = "manifest")]
    out_dir: Option<PathBuf>,
    /// Output spectrogram for single-score mode.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    out: Option<PathBuf>,
    /// Output ground-truth JSON for single-score mode.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    truth: Option<PathBuf>,
    /// Warp as `duration:slope` segments, e.g. `2:1.2,3:0.8`.
    #[arg(long, conflicts_with = "manifest")]
    warp: Option<String>,
    /// Relative noise amplitude.
    #[arg(long, conflicts_with = "manifest")]
    sigma: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Alignment JSON produced by `align`.
    #[arg(long, requires = "truth", conflicts_with = "manifest")]
    estimated: Option<PathBuf>,
    /// Ground-truth JSON produced by `synth`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Synthesize, align and score every case of a corpus manifest.
    #[arg(long, requires = "bank", required_unless_present = "estimated")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[command(flatten)]
    distortion: DistortionFlags,
    #[arg(long)]
    allow_skip: bool,
    #[arg(long)]
    band: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return Err(Error::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    match cli.command {
        Command::Templates(args) => cmd_templates(&config, args),
        Command::Patterns(args) => cmd_patterns(&config, args),
        Command::Align(args) => cmd_align(&config, args),
        Command::Synth(args) => cmd_synth(&config, args, seed),
        Command::Eval(args) => cmd_eval(&config, args),
    }
}

fn cmd_templates(config: &RunConfig, args: TemplatesArgs) -> Result<()> {
    let frontend = config.frontend()?;
    let bank = if let Some(dir) = &args.wav_dir {
        bank_from_wavs(dir, frontend)?
    } else {
        let spec = args.pitches.as_deref().expect("clap requires pitches");
        let keys: NoteSet = parse_pitches(spec)?
            .into_iter()
            .map(|p| NoteKey::new(p, args.instrument.as_str()))
            .collect();
        let d = InstrumentProfile::default();
        let profile = InstrumentProfile {
            decay: args.decay.unwrap_or(d.decay),
            partials: args.partials.unwrap_or(d.partials),
        };
        TemplateBank::<f64>::synthetic(&keys, profile, frontend)?
    };
    bank.save(&args.out)?;
    println!("{}", serde_json::json!({ "templates": bank.len() }));
    Ok(())
}

fn bank_from_wavs(dir: &Path, frontend: scorealign::FrontendConfig) -> Result<TemplateBank<f64>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("wav") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Validation(format!("no .wav files in {}", dir.display())));
    }
    let mut bank = TemplateBank::new(frontend)?;
    for path in files {
        let key = key_from_filename(&path)?;
        let (samples, rate) = read_wav(&path)?;
        if rate != frontend.sample_rate {
            return Err(Error::ConfigMismatch(format!(
                "{} is sampled at {rate} Hz, expected {}",
                path.display(),
                frontend.sample_rate
            )));
        }
        let samples: Vec<f64> = samples.into_iter().map(f64::from).collect();
        let template = learn_template(&samples, key, &frontend)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        bank.insert(template)?;
    }
    Ok(bank)
}

/// `<instrument>_<pitch>.wav`; the instrument may itself contain underscores.
fn key_from_filename(path: &Path) -> Result<NoteKey> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let bad = || {
        Error::Validation(format!(
            "{}: expected a file name like <instrument>_<pitch>.wav",
            path.display()
        ))
    };
    let (instrument, pitch) = stem.rsplit_once('_').ok_or_else(bad)?;
    let pitch: u8 = pitch.parse().map_err(|_| bad())?;
    if instrument.is_empty() {
        return Err(bad());
    }
    Ok(NoteKey::new(pitch, instrument))
}

fn parse_pitches(spec: &str) -> Result<Vec<u8>> {
    let bad = |part: &str| Error::Validation(format!("bad pitch range {part:?}"));
    let mut pitches = Vec::new();
    for part in spec.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: u8 = lo.trim().parse().map_err(|_| bad(part))?;
                let hi: u8 = hi.trim().parse().map_err(|_| bad(part))?;
                if lo > hi {
                    return Err(bad(part));
                }
                pitches.extend(lo..=hi);
            }
            None => pitches.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    Ok(pitches)
}

fn load_timeline(path: &Path) -> Result<ScoreTimeline> {
    build_timeline(&load_score(path)?)
}

fn patterns_for(
    config: &RunConfig,
    path: Option<&Path>,
    timeline: &ScoreTimeline,
    bank: &TemplateBank<f64>,
) -> Result<Vec<UnitPattern<f64>>> {
    match path {
        Some(path) => load_patterns(path, bank),
        None => build_all_patterns(timeline, bank, &config.training(None, None)?),
    }
}

fn cmd_patterns(config: &RunConfig, args: PatternsArgs) -> Result<()> {
    let options: TrainingOptions = config.training(args.beta, args.iters)?;
    let bank = TemplateBank::<f64>::load(&args.bank)?;
    let timeline = load_timeline(&args.score)?;
    let patterns = build_all_patterns(&timeline, &bank, &options)?;
    save_patterns(&patterns, &args.out)?;
    let degenerate = patterns.iter().filter(|p| p.is_degenerate()).count();
    println!(
        "{}",
        serde_json::json!({ "units": patterns.len(), "degenerate": degenerate })
    );
    Ok(())
}

fn cmd_align(config: &RunConfig, args: AlignArgs) -> Result<()> {
    let kind = config.distortion(&args.distortion)?;
    let dtw_options = config.dtw(args.allow_skip, args.band);
    let bank = TemplateBank::<f64>::load(&args.bank)?;
    let frontend = *bank.config();
    let timeline = load_timeline(&args.score)?;
    let (matrix, path) = if let Some(cached) = &args.matrix_in {
        let matrix = DistortionMatrix::<f64>::load(cached, kind)?;
        if matrix.n_units() != timeline.len() {
            return Err(Error::ConfigMismatch(format!(
                "matrix has {} rows but the score has {} units",
                matrix.n_units(),
                timeline.len()
            )));
        }
        let path = dtw(&matrix, &dtw_options)?;
        (matrix, path)
    } else {
        let spectrogram: Spectrogram<f64> = match (&args.wav, &args.spectrogram) {
            (Some(wav), _) => wav_spectrogram(wav, &frontend)?,
            (None, Some(spec)) => Spectrogram::load(spec)?,
            (None, None) => {
                return Err(Error::Validation(
                    "one of --wav, --spectrogram or --matrix-in is required".into(),
                ))
            }
        };
        let patterns = patterns_for(config, args.patterns.as_deref(), &timeline, &bank)?;
        let options = AlignOptions {
            distortion: kind,
            dtw: dtw_options,
        };
        let alignment = align(&spectrogram, &timeline, &bank, &patterns, &options)?;
        (alignment.matrix, alignment.path)
    };
    if let Some(out) = &args.matrix_out {
        if has_extension(out, "csv") {
            write_with(out, |w| matrix.write_csv(w))?;
        } else {
            matrix.save(out)?;
        }
    }
    if let Some(out) = &args.path_out {
        write_with(out, |w| path.write_csv(w))?;
    }
    println!("{}", AlignmentReport::new(&path, &frontend).to_json());
    Ok(())
}

fn cmd_synth(config: &RunConfig, args: SynthArgs, seed: u64) -> Result<()> {
    let bank = TemplateBank::<f64>::load(&args.bank)?;
    if let Some(manifest_path) = &args.manifest {
        let manifest = CorpusManifest::load(manifest_path)?;
        let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        for (i, case) in manifest.cases.iter().enumerate() {
            let (timeline, warp) = load_case(base, case)?;
            let patterns = patterns_for(config, None, &timeline, &bank)?;
            let perf = synth_performance(&timeline, &bank, &patterns, &warp, case.sigma, case.seed)?;
            let name = case_name(case, i);
            perf.spectrogram.save(&out_dir.join(format!("{name}.spec")))?;
            save_truth(&out_dir.join(format!("{name}.truth.json")), &perf.onsets, bank.config())?;
        }
        println!("{}", serde_json::json!({ "cases": manifest.cases.len() }));
        return Ok(());
    }
    let score = args.score.expect("clap requires score");
    let timeline = load_timeline(&score)?;
    let segments = match &args.warp {
        Some(text) => parse_warp(text)?,
        None => Vec::new(),
    };
    let warp = WarpMap::from_segments(&segments)?;
    let sigma = config.sigma(args.sigma)?;
    let patterns = patterns_for(config, args.patterns.as_deref(), &timeline, &bank)?;
    let perf = synth_performance(&timeline, &bank, &patterns, &warp, sigma, seed)?;
    perf.spectrogram.save(&args.out.expect("clap requires out"))?;
    save_truth(&args.truth.expect("clap requires truth"), &perf.onsets, bank.config())?;
    println!(
        "{}",
        serde_json::json!({ "frames": perf.spectrogram.n_frames(), "units": timeline.len() })
    );
    Ok(())
}

#[derive(Deserialize)]
struct OnsetsFile {
    onsets: Vec<UnitOnset>,
}

#[derive(Serialize)]
struct CaseReport {
    name: String,
    report: EvalReport,
}

#[derive(Serialize)]
struct CorpusReport {
    cases: Vec<CaseReport>,
    mean_error_s: f64,
    mean_fractions: Vec<scorealign::eval::ThresholdFraction>,
}

fn cmd_eval(config: &RunConfig, args: EvalArgs) -> Result<()> {
    if let Some(estimated) = &args.estimated {
        let truth = args.truth.as_deref().expect("clap requires truth");
        let report = evaluate(&read_onsets(estimated)?, &read_onsets(truth)?)?;
        println!("{}", report.to_json());
        return Ok(());
    }
    let manifest_path = args.manifest.as_deref().expect("clap requires manifest");
    let manifest = CorpusManifest::load(manifest_path)?;
    if manifest.cases.is_empty() {
        return Err(Error::Validation("manifest lists no cases".into()));
    }
    let options = AlignOptions {
        distortion: config.distortion(&args.distortion)?,
        dtw: config.dtw(args.allow_skip, args.band),
    };
    let bank = TemplateBank::<f64>::load(args.bank.as_deref().expect("clap requires bank"))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cases = Vec::new();
    for (i, case) in manifest.cases.iter().enumerate() {
        let (timeline, warp) = load_case(base, case)?;
        let patterns = patterns_for(config, None, &timeline, &bank)?;
        let perf = synth_performance(&timeline, &bank, &patterns, &warp, case.sigma, case.seed)?;
        let alignment = align(&perf.spectrogram, &timeline, &bank, &patterns, &options)?;
        let onsets = extract_onsets(&alignment.path, bank.config());
        cases.push(CaseReport {
            name: case_name(case, i),
            report: evaluate(&onsets, &perf.onsets)?,
        });
    }
    let n = cases.len() as f64;
    let mean_error_s = cases.iter().map(|c| c.report.mean_error_s).sum::<f64>() / n;
    let mean_fractions = cases[0]
        .report
        .within
        .iter()
        .enumerate()
        .map(|(j, w)| scorealign::eval::ThresholdFraction {
            threshold_s: w.threshold_s,
            fraction: cases.iter().map(|c| c.report.within[j].fraction).sum::<f64>() / n,
        })
        .collect();
    let report = CorpusReport {
        cases,
        mean_error_s,
        mean_fractions,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn load_case(base: &Path, case: &CorpusCase) -> Result<(ScoreTimeline, WarpMap)> {
    let score = if case.score.is_absolute() {
        case.score.clone()
    } else {
        base.join(&case.score)
    };
    Ok((load_timeline(&score)?, WarpMap::from_segments(&case.warp)?))
}

fn case_name(case: &CorpusCase, i: usize) -> String {
    case.name.clone().unwrap_or_else(|| format!("case{i:03}"))
}

fn parse_warp(text: &str) -> Result<Vec<WarpSegment>> {
    text.split(',')
        .map(|part| {
            let bad = || Error::Validation(format!("bad warp segment {part:?}, expected duration:slope"));
            let (d, s) = part.trim().split_once(':').ok_or_else(bad)?;
            Ok(WarpSegment {
                duration: d.trim().parse().map_err(|_| bad())?,
                slope: s.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn read_onsets(path: &Path) -> Result<Vec<UnitOnset>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: OnsetsFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(file.onsets)
}

fn save_truth(path: &Path, onsets: &[UnitOnset], frontend: &scorealign::FrontendConfig) -> Result<()> {
    let truth = GroundTruth {
        onsets: onsets.to_vec(),
        lead_in_s: frontend.frame_center_offset(),
    };
    let text = serde_json::to_string_pretty(&truth).expect("truth serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
}
