//! End-to-end acceptance checks. Runs as a plain binary so each check's
//! PASS/FAIL line is always printed; exits nonzero if any check fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scorealign::distortion::{baseline_distortion_cell, subspace_distortion_cell};
use scorealign::frontend::{normalize_spectrogram, stft_magnitude};
use scorealign::score::NoteSet;
use scorealign::templates::NoteTemplate;
use scorealign::training::TrainingRender;
use scorealign::{
    align, build_all_patterns, build_matrix, build_timeline, decompose_frame, dtw, evaluate,
    fit_pattern, synth_performance, AlignOptions, Constraint, DistortionKind, DistortionMatrix,
    DtwOptions, FitOptions, FrontendConfig, InstrumentProfile, NoteKey, ScoreTimeline, ScoreUnit,
    Spectrogram, SubspaceOptions, TemplateBank, TrainingOptions, UnitPattern, WarpMap,
};

use common::*;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn key(p: u8) -> NoteKey {
    NoteKey::new(p, "x")
}

fn set(ps: &[u8]) -> NoteSet {
    ps.iter().map(|&p| key(p)).collect()
}

fn bank_of(config: FrontendConfig, spectra: &[(u8, Vec<f64>)]) -> TemplateBank<f64> {
    let mut bank = TemplateBank::new(config).unwrap();
    for (p, s) in spectra {
        let mut full = s.clone();
        full.resize(config.n_bins(), 0.0);
        bank.insert(NoteTemplate::new(key(*p), full).unwrap()).unwrap();
    }
    bank
}

fn onehot_bank(config: FrontendConfig, pitches: &[u8]) -> TemplateBank<f64> {
    let spectra: Vec<(u8, Vec<f64>)> = pitches
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut v = vec![0.0; config.n_bins()];
            v[i] = 1.0;
            (p, v)
        })
        .collect();
    bank_of(config, &spectra)
}

fn spectra_of(bank: &TemplateBank<f64>) -> Vec<Vec<f64>> {
    bank.iter().map(|t| t.spectrum().to_vec()).collect()
}

// 1 ─────────────────────────────────────────────────────────────────────────

fn nnls_oracle() -> Outcome {
    const INSTANCES: usize = 500;
    const F: usize = 8;
    let config = tiny_config(); // 9 bins; the last bin is held at zero, leaving an 8-bin problem.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_obj, mut worst_coef, mut worst_kkt) = (0.0f64, 0.0f64, 0.0f64);
    let mut solver_time = Duration::ZERO;
    let start = Instant::now();
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..=4);
        // Shared base plus individual variation: pairwise correlated templates.
        let base: Vec<f64> = (0..F).map(|_| rng.gen_range(0.0..1.0)).collect();
        let spectra: Vec<(u8, Vec<f64>)> = (0..n)
            .map(|j| {
                let mix = rng.gen_range(0.2..0.7);
                let v = (0..F)
                    .map(|f| mix * base[f] + (1.0 - mix) * rng.gen_range(0.0..1.0f64))
                    .collect();
                (60 + j as u8, v)
            })
            .collect();
        let bank = bank_of(config, &spectra);
        let templates = spectra_of(&bank);
        let mut x: Vec<f64> = (0..F).map(|_| rng.gen_range(0.0..1.0)).collect();
        x.push(0.0);
        let norm = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        let notes: NoteSet = bank.iter().map(|t| t.key.clone()).collect();

        let t0 = Instant::now();
        let dec = decompose_frame(&x, &notes, &bank, Constraint::Nonnegative).unwrap();
        solver_time += t0.elapsed();
        let a: Vec<f64> = bank.iter().map(|t| dec.coeff(&t.key)).collect();

        let oracle = projected_gradient_nnls(&templates, &x, 1e-10, 2_000_000);
        let obj = ls_objective(&x, &templates, &a);
        let obj_oracle = ls_objective(&x, &templates, &oracle);
        worst_obj = worst_obj.max((obj - obj_oracle).abs());
        for (ai, oi) in a.iter().zip(&oracle) {
            worst_coef = worst_coef.max((ai - oi).abs());
        }
        let r = residual(&x, &templates, &a);
        for (n_j, &aj) in templates.iter().zip(&a) {
            let g = dot(n_j, &r);
            let violation = if aj > 0.0 { g.abs() } else { g.max(0.0) };
            worst_kkt = worst_kkt.max(violation);
            if aj < 0.0 {
                worst_kkt = f64::INFINITY;
            }
        }
        let reported = 2.0 * obj;
        worst_kkt = worst_kkt.max((reported - dec.residual_norm_sq()).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_obj <= 1e-6 && worst_coef <= 1e-4 && worst_kkt <= 1e-6 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "{INSTANCES} instances: max |Δobjective| {worst_obj:.2e} (≤1e-6), max |Δa| {worst_coef:.2e} (≤1e-4), \
             max KKT violation {worst_kkt:.2e} (≤1e-6), solver {:.3}s, total {:.2}s (<10s)",
            solver_time.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    )
}

// 2 ─────────────────────────────────────────────────────────────────────────

fn dtw_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut mismatches = 0;
    let mut checked = 0;
    for i in 0..200 {
        let k = rng.gen_range(1..=5);
        let t = rng.gen_range(k..=10);
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..t).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect();
        let matrix = DistortionMatrix::from_rows(&rows, DistortionKind::subspace()).unwrap();
        // Half the instances also exercise the skip step.
        let allow_skip = i % 2 == 1;
        let path = dtw(&matrix, &DtwOptions { allow_skip, band: None }).unwrap();
        let oracle = enumerate_min_cost(&rows, allow_skip).unwrap();
        let along: f64 = path.steps.iter().fold(0.0, |acc, &(k, t)| acc + rows[k][t]);
        checked += 1;
        if path.total_cost != oracle || along != oracle {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!(
            "{checked} matrices (K≤5, T≤10): {mismatches} cost mismatches vs enumeration, {:.3}s (<5s)",
            elapsed.as_secs_f64()
        ),
    )
}

// 3 ─────────────────────────────────────────────────────────────────────────

fn scale_invariance() -> Outcome {
    let config = FrontendConfig {
        sample_rate: 8000,
        fft_size: 256,
        hop_size: 128,
        window: Default::default(),
    };
    let pitches: Vec<u8> = (60..=72).collect();
    let keys: Vec<NoteKey> = pitches.iter().map(|&p| NoteKey::new(p, "piano")).collect();
    let bank: TemplateBank<f64> =
        TemplateBank::synthetic(&keys, InstrumentProfile::default(), config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let segs = random_segments(&mut rng, 4, 60..=72, 0.5);
        let timeline = build_timeline(&notes_from_segments(&segs, "piano")).unwrap();
        let patterns = build_all_patterns(&timeline, &bank, &TrainingOptions::default()).unwrap();
        let n = rng.gen_range(2000..6000);
        let freqs: Vec<f64> = (0..4).map(|_| rng.gen_range(100.0..3000.0)).collect();
        let signal: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / config.sample_rate as f64;
                freqs.iter().map(|f| (2.0 * std::f64::consts::PI * f * t).sin()).sum::<f64>()
                    + rng.gen_range(-0.3..0.3)
            })
            .collect();
        let gain = rng.gen_range(0.1..10.0);
        let scaled: Vec<f64> = signal.iter().map(|v| v * gain).collect();
        let matrix = |s: &[f64]| {
            let spec = normalize_spectrogram(&stft_magnitude(s, &config).unwrap());
            build_matrix(&spec, &timeline, &patterns, &bank, DistortionKind::subspace()).unwrap()
        };
        let (a, b) = (matrix(&signal), matrix(&scaled));
        for (x, y) in a.as_flat().iter().zip(b.as_flat()) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("50 signals, gains in [0.1, 10]: max cell change {worst:.2e} (<1e-6)"),
    )
}

// 4 ─────────────────────────────────────────────────────────────────────────

fn pattern_recovery() -> Outcome {
    let config = FrontendConfig {
        sample_rate: 8000,
        fft_size: 64,
        hop_size: 32,
        window: Default::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = [0.0f64; 2];
    for (case, correlated) in [false, true].into_iter().enumerate() {
        for _ in 0..25 {
            let n = rng.gen_range(2..=4);
            let spectra: Vec<(u8, Vec<f64>)> = (0..n)
                .map(|j| {
                    let mut v = vec![0.0; config.n_bins()];
                    for h in 0..3 {
                        v[4 + 8 * j + h] = rng.gen_range(0.5..1.0);
                    }
                    if correlated {
                        // Low-level overlap across the whole spectrum.
                        for x in v.iter_mut() {
                            *x += rng.gen_range(0.0..0.15);
                        }
                    }
                    (60 + j as u8, v)
                })
                .collect();
            let bank = bank_of(config, &spectra);
            let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
            let mut composite = vec![0.0; config.n_bins()];
            for (t, &a) in bank.iter().zip(&truth) {
                for (c, s) in composite.iter_mut().zip(t.spectrum()) {
                    *c += a * s;
                }
            }
            let frames: Vec<Vec<f64>> = (0..12)
                .map(|_| {
                    let g = rng.gen_range(0.3..1.0);
                    composite.iter().map(|c| c * g).collect()
                })
                .collect();
            let render = TrainingRender {
                unit_index: 0,
                spectrogram: Spectrogram::from_frames(frames, config).unwrap(),
                gains: None,
            };
            let unit = ScoreUnit {
                index: 0,
                notes: bank.iter().map(|t| t.key.clone()).collect(),
                span_start: 0.0,
                span_end: 1.0,
            };
            let options = FitOptions {
                beta: 2.0,
                max_iters: 100,
                tol: 0.0,
            };
            let fit = fit_pattern(&render, &unit, &bank, &options).unwrap();
            let est: Vec<f64> = bank.iter().map(|t| fit.pattern.alpha(&t.key).unwrap()).collect();
            // Best scale in the least-squares sense, then worst relative component error.
            let scale = dot(&est, &truth) / dot(&est, &est);
            for (e, t) in est.iter().zip(&truth) {
                worst[case] = worst[case].max((scale * e - t).abs() / t);
            }
        }
    }
    outcome(
        worst[0] <= 0.02 && worst[1] <= 0.02,
        format!(
            "β=2, 100 iterations: max relative α error {:.2e} orthonormal, {:.2e} correlated (≤2e-2)",
            worst[0], worst[1]
        ),
    )
}

// 5 ─────────────────────────────────────────────────────────────────────────

fn closure_score() -> Vec<(BTreeSet<u8>, f64)> {
    let sets: [&[u8]; 10] = [
        &[60],
        &[60, 64],
        &[64],
        &[64, 67],
        &[67, 72],
        &[72],
        &[],
        &[65, 69],
        &[69],
        &[62],
    ];
    let durs = [0.40, 0.35, 0.50, 0.30, 0.45, 0.40, 0.30, 0.55, 0.35, 0.50];
    sets.iter()
        .zip(durs)
        .map(|(s, d)| (s.iter().copied().collect(), d))
        .collect()
}

fn synthetic_setup(
    segs: &[(BTreeSet<u8>, f64)],
    config: FrontendConfig,
) -> (ScoreTimeline, TemplateBank<f64>, Vec<UnitPattern<f64>>) {
    let timeline = build_timeline(&notes_from_segments(segs, "piano")).unwrap();
    let bank = TemplateBank::synthetic(&timeline.note_keys(), InstrumentProfile::default(), config).unwrap();
    let patterns = build_all_patterns(&timeline, &bank, &TrainingOptions::default()).unwrap();
    (timeline, bank, patterns)
}

fn pipeline_closure() -> Outcome {
    let start = Instant::now();
    let config = FrontendConfig::default();
    let (timeline, bank, patterns) = synthetic_setup(&closure_score(), config);
    let perf = synth_performance(&timeline, &bank, &patterns, &WarpMap::identity(), 0.0, 0).unwrap();
    let al = align(&perf.spectrogram, &timeline, &bank, &patterns, &AlignOptions::default()).unwrap();
    let report = evaluate(&al.onsets, &perf.onsets).unwrap();
    let hop = config.frame_period();
    let worst = report.per_unit.iter().map(|e| e.error_s).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        timeline.len() == 10 && worst <= 2.0 * hop + 1e-9 && elapsed < Duration::from_secs(30),
        format!(
            "{} units, identity warp, σ=0: max onset error {:.4}s (≤2 hops = {:.4}s), {:.2}s (<30s)",
            timeline.len(),
            worst,
            2.0 * hop,
            elapsed.as_secs_f64()
        ),
    )
}

// 6 ─────────────────────────────────────────────────────────────────────────

/// Mean onset error and fraction@0.10 for one seeded corpus under each distortion.
fn run_corpus(seed: u64, share: f64, kinds: &[DistortionKind]) -> (f64, Vec<(f64, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = rng.gen_range(8..=14);
    let segs = random_segments(&mut rng, units, 55..=79, share);
    let (timeline, bank, patterns) = synthetic_setup(&segs, FrontendConfig::default());
    let warp = WarpMap::from_segments(&random_warp(&mut rng, timeline.total_duration(), 0.7..=1.4)).unwrap();
    let perf = synth_performance(&timeline, &bank, &patterns, &warp, 0.05, seed).unwrap();
    let results = kinds
        .iter()
        .map(|&distortion| {
            let options = AlignOptions {
                distortion,
                dtw: DtwOptions::default(),
            };
            let al = align(&perf.spectrogram, &timeline, &bank, &patterns, &options).unwrap();
            let r = evaluate(&al.onsets, &perf.onsets).unwrap();
            (r.mean_error_s, r.fraction_within(0.10).unwrap())
        })
        .collect();
    (shared_pair_fraction(&segs), results)
}

fn tempo_robustness() -> Outcome {
    let fractions: Vec<f64> = (0..20)
        .map(|c| run_corpus(600 + c, 0.3, &[DistortionKind::subspace()]).1[0].1)
        .collect();
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let min = fractions.iter().cloned().fold(1.0, f64::min);
    outcome(
        mean >= 0.90,
        format!("20 corpora, slopes [0.7, 1.4], σ=0.05: mean fraction@0.10s {mean:.3} (≥0.90), worst corpus {min:.3}"),
    )
}

// 7 ─────────────────────────────────────────────────────────────────────────

fn common_note_discrimination() -> Outcome {
    let kinds = [
        DistortionKind::subspace(),
        DistortionKind::Baseline { beta: 1.0 },
        DistortionKind::Baseline { beta: 2.0 },
    ];
    let mut sums = [0.0f64; 3];
    let mut shared = 0.0;
    let corpora = 10;
    for c in 0..corpora {
        let (share, results) = run_corpus(700 + c, 0.9, &kinds);
        shared += share;
        for (s, (mean, _)) in sums.iter_mut().zip(results) {
            *s += mean;
        }
    }
    let shared = shared / corpora as f64;
    let [novel, kl, euc] = sums.map(|s| s / corpora as f64);

    // Cell-level separation: A = {C4}, B = {C4, E4}, one-hot templates,
    // frame equal to B's normalized basis.
    let config = tiny_config();
    let bank = onehot_bank(config, &[60, 64]);
    let alphas = |ps: &[u8]| -> BTreeMap<NoteKey, f64> { ps.iter().map(|&p| (key(p), 1.0)).collect() };
    let a = UnitPattern::from_alphas(0, alphas(&[60]), &bank).unwrap();
    let b = UnitPattern::from_alphas(1, alphas(&[60, 64]), &bank).unwrap();
    let frame = b.basis().to_vec();
    let opts = SubspaceOptions::default();
    // Row A decomposes over A ∪ B; row B is the last unit and pairs with itself.
    let dec = decompose_frame(&frame, &set(&[60, 64]), &bank, Constraint::Nonnegative).unwrap();
    let d_a = subspace_distortion_cell(&dec, &a, &opts);
    let d_b = subspace_distortion_cell(&dec, &b, &opts);
    let base_a = baseline_distortion_cell(&frame, &a, 1.0).unwrap();
    let base_b = baseline_distortion_cell(&frame, &b, 1.0).unwrap();

    let pass = shared >= 0.5 && novel <= kl && novel <= euc && d_a > d_b;
    outcome(
        pass,
        format!(
            "{corpora} corpora, {:.0}% consecutive pairs share notes: mean error novel {novel:.4}s, \
             baseline β=1 {kl:.4}s, β=2 {euc:.4}s; cell D(A)={d_a:.4} > D(B)={d_b:.4} \
             (baseline β=1 measured: {base_a:.4} vs {base_b:.4})",
            shared * 100.0
        ),
    )
}

// 8 ─────────────────────────────────────────────────────────────────────────

fn distortion_identity() -> Outcome {
    let config = tiny_config();
    let pitches = [60u8, 61, 62, 63, 64, 65, 66, 67];
    let bank = onehot_bank(config, &pitches);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut cells = 0;
    for _ in 0..50 {
        let units = rng.gen_range(2..=5);
        let segs: Vec<(BTreeSet<u8>, f64)> = random_segments(&mut rng, units, 60..=67, 0.5)
            .into_iter()
            .map(|(s, _)| (s, 1.0))
            .collect();
        let timeline = build_timeline(&notes_from_segments(&segs, "x")).unwrap();
        let patterns: Vec<UnitPattern<f64>> = timeline
            .units()
            .iter()
            .map(|u| {
                let alphas = u.notes.iter().map(|k| (k.clone(), rng.gen_range(0.1..2.0))).collect();
                UnitPattern::from_alphas(u.index, alphas, &bank).unwrap()
            })
            .collect();
        let frames: Vec<Vec<f64>> = patterns
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.basis().to_vec(), 3))
            .collect();
        let spec = normalize_spectrogram(&Spectrogram::from_frames(frames, config).unwrap());
        let m = build_matrix(&spec, &timeline, &patterns, &bank, DistortionKind::subspace()).unwrap();
        for k in 0..timeline.len() {
            for t in 3 * k..3 * k + 3 {
                worst = worst.max(m.get(k, t).abs());
                cells += 1;
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{cells} matching cells over 50 timelines: max |D| {worst:.2e} (≤1e-9)"),
    )
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("1 nnls matches projected-gradient oracle", nnls_oracle),
        ("2 dtw matches path enumeration", dtw_oracle),
        ("3 distortion is gain invariant", scale_invariance),
        ("4 pattern amplitudes recovered", pattern_recovery),
        ("5 pipeline closure", pipeline_closure),
        ("6 tempo robustness", tempo_robustness),
        ("7 common-note discrimination", common_note_discrimination),
        ("8 distortion identity", distortion_identity),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| outcome(false, "panicked".into()));
        if !result.pass {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
