//! Independent reference implementations and corpus generators for the
//! acceptance checks. Nothing here calls into the solver code it checks.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scorealign::{FrontendConfig, Note, WarpSegment, WindowKind};

/// Tiny analysis configuration: 9 bins.
pub fn tiny_config() -> FrontendConfig {
    FrontendConfig {
        sample_rate: 8000,
        fft_size: 16,
        hop_size: 8,
        window: WindowKind::Hann,
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x − Σ a_j n_j`.
pub fn residual(x: &[f64], templates: &[Vec<f64>], a: &[f64]) -> Vec<f64> {
    let mut r = x.to_vec();
    for (n, &aj) in templates.iter().zip(a) {
        for (rf, nf) in r.iter_mut().zip(n) {
            *rf -= aj * nf;
        }
    }
    r
}

/// `½ ‖x − N a‖²`.
pub fn ls_objective(x: &[f64], templates: &[Vec<f64>], a: &[f64]) -> f64 {
    0.5 * dot(&residual(x, templates, a), &residual(x, templates, a))
}

/// Accelerated projected gradient on `½‖x − N a‖²` over `a ≥ 0`, with
/// function-value restarts. Stops when the projected gradient's norm is
/// below `tol` or after `max_iters`.
pub fn projected_gradient_nnls(templates: &[Vec<f64>], x: &[f64], tol: f64, max_iters: usize) -> Vec<f64> {
    let n = templates.len();
    let gram: Vec<Vec<f64>> = templates
        .iter()
        .map(|a| templates.iter().map(|b| dot(a, b)).collect())
        .collect();
    let rhs: Vec<f64> = templates.iter().map(|t| dot(t, x)).collect();
    // Lipschitz bound: Gershgorin on the Gram matrix.
    let lipschitz = gram
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| dot(&gram[i], a) - rhs[i])
            .collect()
    };
    let quad = |a: &[f64]| -> f64 {
        let ga: Vec<f64> = (0..n).map(|i| dot(&gram[i], a)).collect();
        0.5 * dot(a, &ga) - dot(&rhs, a)
    };
    let projected_norm = |a: &[f64]| -> f64 {
        a.iter()
            .zip(grad(a))
            .map(|(ai, gi)| if *ai > 0.0 { gi * gi } else { gi.min(0.0).powi(2) })
            .sum::<f64>()
            .sqrt()
    };
    let mut a = vec![0.0; n];
    let mut y = a.clone();
    let mut momentum = 1.0f64;
    let mut f_prev = quad(&a);
    for _ in 0..max_iters {
        if projected_norm(&a) < tol {
            break;
        }
        let g = grad(&y);
        let next: Vec<f64> = y
            .iter()
            .zip(&g)
            .map(|(yi, gi)| (yi - gi / lipschitz).max(0.0))
            .collect();
        let f_next = quad(&next);
        if f_next > f_prev && momentum > 1.0 {
            // Restart from the last iterate without momentum.
            y = a.clone();
            momentum = 1.0;
            continue;
        }
        let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        y = next
            .iter()
            .zip(&a)
            .map(|(xn, xo)| xn + (momentum - 1.0) / m_next * (xn - xo))
            .collect();
        momentum = m_next;
        a = next;
        f_prev = f_next;
    }
    a
}

/// Minimum total cost over every monotone path from `(0,0)` to `(K−1,T−1)`
/// that stays or advances one unit per frame (or skips one, if allowed),
/// summed left to right along the path.
pub fn enumerate_min_cost(d: &[Vec<f64>], allow_skip: bool) -> Option<f64> {
    let t = d[0].len();
    let max_step = if allow_skip { 2 } else { 1 };
    let mut best: Option<f64> = None;
    let mut path = vec![0usize; t];
    fn walk(
        d: &[Vec<f64>],
        path: &mut Vec<usize>,
        frame: usize,
        max_step: usize,
        best: &mut Option<f64>,
    ) {
        let (k, t) = (d.len(), d[0].len());
        if frame == t {
            if path[t - 1] == k - 1 {
                let mut cost = 0.0;
                for (f, &u) in path.iter().enumerate() {
                    cost += d[u][f];
                }
                if best.is_none_or(|b| cost < b) {
                    *best = Some(cost);
                }
            }
            return;
        }
        let prev = path[frame - 1];
        for step in 0..=max_step {
            let u = prev + step;
            if u >= k {
                break;
            }
            path[frame] = u;
            walk(d, path, frame + 1, max_step, best);
        }
    }
    path[0] = 0;
    walk(d, &mut path, 1, max_step, &mut best);
    best
}

/// Turns a sequence of note sets (one per segment) into notes: each pitch
/// sounds for each maximal run of segments containing it.
pub fn notes_from_segments(sets: &[(BTreeSet<u8>, f64)], instrument: &str) -> Vec<Note> {
    let mut notes = Vec::new();
    let mut starts = vec![0.0f64; 128];
    let mut active = BTreeSet::new();
    let mut time = 0.0;
    for (set, dur) in sets {
        for &p in set.difference(&active) {
            starts[p as usize] = time;
        }
        for &p in active.difference(set) {
            notes.push(Note::new(p, instrument, starts[p as usize], time).unwrap());
        }
        active = set.clone();
        time += dur;
    }
    for &p in &active {
        notes.push(Note::new(p, instrument, starts[p as usize], time).unwrap());
    }
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    notes
}

/// Random segment sequence with `units` distinct consecutive note sets.
/// With probability `share` a set is derived from its predecessor by adding,
/// removing or swapping one note, so consecutive units share notes.
pub fn random_segments(
    rng: &mut ChaCha8Rng,
    units: usize,
    pitches: std::ops::RangeInclusive<u8>,
    share: f64,
) -> Vec<(BTreeSet<u8>, f64)> {
    let pool: Vec<u8> = pitches.collect();
    let fresh = |rng: &mut ChaCha8Rng| -> BTreeSet<u8> {
        let n = rng.gen_range(1..=3);
        let mut s = BTreeSet::new();
        while s.len() < n {
            s.insert(pool[rng.gen_range(0..pool.len())]);
        }
        s
    };
    let mut out: Vec<(BTreeSet<u8>, f64)> = Vec::with_capacity(units);
    while out.len() < units {
        let duration = rng.gen_range(0.25..0.7);
        let set = match out.last() {
            Some((prev, _)) if rng.gen_bool(share) => {
                let mut s = prev.clone();
                let add = pool[rng.gen_range(0..pool.len())];
                match rng.gen_range(0..3) {
                    0 if s.len() < 3 => {
                        s.insert(add);
                    }
                    1 if s.len() > 1 => {
                        let drop = *s.iter().nth(rng.gen_range(0..s.len())).unwrap();
                        s.remove(&drop);
                    }
                    _ => {
                        let drop = *s.iter().nth(rng.gen_range(0..s.len())).unwrap();
                        s.remove(&drop);
                        s.insert(add);
                        if s.is_empty() {
                            s.insert(drop);
                        }
                    }
                }
                s
            }
            _ => fresh(rng),
        };
        if out.last().is_some_and(|(prev, _)| *prev == set) {
            continue;
        }
        out.push((set, duration));
    }
    out
}

/// Fraction of consecutive pairs whose note sets intersect.
pub fn shared_pair_fraction(sets: &[(BTreeSet<u8>, f64)]) -> f64 {
    let pairs = sets.len().saturating_sub(1).max(1);
    sets.windows(2)
        .filter(|w| !w[0].0.is_disjoint(&w[1].0))
        .count() as f64
        / pairs as f64
}

/// Piecewise warp with slopes drawn from `slopes`, covering at least `total` score seconds.
pub fn random_warp(rng: &mut ChaCha8Rng, total: f64, slopes: std::ops::RangeInclusive<f64>) -> Vec<WarpSegment> {
    let mut segs = Vec::new();
    let mut covered = 0.0;
    while covered < total {
        let duration = rng.gen_range(0.8..2.0);
        segs.push(WarpSegment {
            duration,
            slope: rng.gen_range(slopes.clone()),
        });
        covered += duration;
    }
    segs
}
