//! Small dense least-squares solvers working on the normal equations.
//!
//! Both solvers take the Gram matrix `G = Aᵀ A` (row-major, `n × n`) and the
//! projected target `c = Aᵀ x`, and minimize `½ aᵀ G a − cᵀ a`, which has the
//! same minimizers as `‖x − A a‖²`. Problems here have a handful of columns
//! (the notes of two adjacent score units), so forming `G` is cheap and the
//! same `G` is reused for every frame.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cholesky factor of the principal submatrix of `gram` selected by `idx`.
/// Returns `None` when a pivot is not safely positive.
fn cholesky<T: Scalar>(gram: &[T], n: usize, idx: &[usize]) -> Option<Vec<T>> {
    let m = idx.len();
    let mut l = vec![T::zero(); m * m];
    let tiny = T::epsilon() * T::lit(1e3);
    for i in 0..m {
        for j in 0..=i {
            let mut s = gram[idx[i] * n + idx[j]];
            for p in 0..j {
                s = s - l[i * m + p] * l[j * m + p];
            }
            if i == j {
                let diag = gram[idx[i] * n + idx[i]];
                if s <= tiny * diag.max(T::one()) {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve<T: Scalar>(l: &[T], m: usize, rhs: &[T]) -> Vec<T> {
    let mut y = rhs.to_vec();
    for i in 0..m {
        for p in 0..i {
            y[i] = y[i] - l[i * m + p] * y[p];
        }
        y[i] = y[i] / l[i * m + i];
    }
    for i in (0..m).rev() {
        for p in i + 1..m {
            y[i] = y[i] - l[p * m + i] * y[p];
        }
        y[i] = y[i] / l[i * m + i];
    }
    y
}

/// Solves the unconstrained system restricted to the columns in `idx`.
fn solve_subset<T: Scalar>(gram: &[T], n: usize, rhs: &[T], idx: &[usize]) -> Option<Vec<T>> {
    let l = cholesky(gram, n, idx)?;
    let sub_rhs: Vec<T> = idx.iter().map(|&i| rhs[i]).collect();
    Some(cholesky_solve(&l, idx.len(), &sub_rhs))
}

/// Lawson–Hanson active-set NNLS.
///
/// Columns that are numerically dependent on the current passive set are
/// left at zero. Fails with [`Error::Internal`] if the outer loop runs more
/// than `10 n` times.
pub fn nnls_gram<T: Scalar>(gram: &[T], rhs: &[T]) -> Result<Vec<T>> {
    let n = rhs.len();
    assert_eq!(gram.len(), n * n, "gram must be n x n");
    let mut a = vec![T::zero(); n];
    if n == 0 {
        return Ok(a);
    }
    let scale = rhs
        .iter()
        .chain(gram.iter())
        .fold(T::zero(), |m, v| m.max(v.abs()))
        .max(T::min_positive_value());
    let tol = T::epsilon() * T::lit(100.0) * T::from_usize_lossy(n) * scale;

    let mut passive: Vec<usize> = Vec::with_capacity(n);
    let mut excluded = vec![false; n];
    let max_outer = 10 * n;

    for _ in 0..max_outer {
        // Negative gradient at the current point.
        let w: Vec<T> = (0..n)
            .map(|i| {
                (0..n).fold(rhs[i], |acc, j| acc - gram[i * n + j] * a[j])
            })
            .collect();
        let candidate = (0..n)
            .filter(|&j| !passive.contains(&j) && !excluded[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(entering) = candidate else {
            return Ok(a);
        };
        passive.push(entering);

        let mut first_inner = true;
        loop {
            let Some(s) = solve_subset(gram, n, rhs, &passive) else {
                // Entering column is dependent on the passive set.
                passive.retain(|&j| j != entering);
                excluded[entering] = true;
                break;
            };
            if first_inner {
                let pos = passive.iter().position(|&j| j == entering).expect("just added");
                if s[pos] <= T::zero() {
                    passive.retain(|&j| j != entering);
                    excluded[entering] = true;
                    break;
                }
            }
            first_inner = false;

            if s.iter().all(|&v| v > T::zero()) {
                a.iter_mut().for_each(|v| *v = T::zero());
                for (&j, &v) in passive.iter().zip(&s) {
                    a[j] = v;
                }
                excluded.iter_mut().for_each(|e| *e = false);
                break;
            }
            // Step from a toward s until the first passive coefficient hits zero.
            let mut step = T::one();
            for (&j, &v) in passive.iter().zip(&s) {
                if v <= T::zero() {
                    let denom = a[j] - v;
                    if denom > T::zero() {
                        step = step.min(a[j] / denom);
                    } else {
                        step = T::zero();
                    }
                }
            }
            for (&j, &v) in passive.iter().zip(&s) {
                a[j] = a[j] + step * (v - a[j]);
            }
            let drop_tol = T::epsilon() * T::lit(10.0);
            passive.retain(|&j| {
                if a[j] <= drop_tol * scale {
                    a[j] = T::zero();
                    false
                } else {
                    true
                }
            });
            if passive.is_empty() {
                break;
            }
        }
    }
    Err(Error::Internal(format!(
        "NNLS did not terminate within {max_outer} iterations"
    )))
}

/// Unconstrained least squares; columns dependent on earlier ones get zero weight.
pub fn least_squares_gram<T: Scalar>(gram: &[T], rhs: &[T]) -> Vec<T> {
    let n = rhs.len();
    let mut kept: Vec<usize> = Vec::with_capacity(n);
    for j in 0..n {
        kept.push(j);
        if cholesky(gram, n, &kept).is_none() {
            kept.pop();
        }
    }
    let mut a = vec![T::zero(); n];
    if let Some(s) = solve_subset(gram, n, rhs, &kept) {
        for (&j, &v) in kept.iter().zip(&s) {
            a[j] = v;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gram_of(cols: &[Vec<f64>]) -> Vec<f64> {
        let n = cols.len();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            }
        }
        g
    }

    fn project(cols: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        cols.iter()
            .map(|c| c.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn objective(g: &[f64], c: &[f64], a: &[f64]) -> f64 {
        let n = c.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += a[i] * g[i * n + j] * a[j];
            }
        }
        0.5 * q - c.iter().zip(a).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Enumerates every passive set and keeps the best feasible stationary point.
    fn enumerate_oracle(g: &[f64], c: &[f64]) -> Vec<f64> {
        let n = c.len();
        let mut best = vec![0.0; n];
        let mut best_obj = 0.0;
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            if let Some(s) = solve_subset(g, n, c, &idx) {
                if s.iter().all(|&v| v >= 0.0) {
                    let mut a = vec![0.0; n];
                    for (&j, &v) in idx.iter().zip(&s) {
                        a[j] = v;
                    }
                    let obj = objective(g, c, &a);
                    if obj < best_obj {
                        best_obj = obj;
                        best = a;
                    }
                }
            }
        }
        best
    }

    #[test]
    fn orthonormal_exact_representation() {
        let cols = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let g = gram_of(&cols);
        let a = nnls_gram(&g, &project(&cols, &[0.6, 0.8, 0.0])).unwrap();
        assert!((a[0] - 0.6).abs() < 1e-12 && (a[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn negative_correlation_clips_to_zero() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let a = nnls_gram(&gram_of(&cols), &project(&cols, &[-1.0, 0.5])).unwrap();
        assert_eq!(a, vec![0.0, 0.5]);
    }

    #[test]
    fn duplicate_columns_do_not_break_the_solver() {
        let col = vec![0.3, 0.4, 0.5];
        let cols = vec![col.clone(), col.clone(), vec![1.0, 0.0, 0.0]];
        let g = gram_of(&cols);
        let c = project(&cols, &[0.6, 0.8, 1.0]);
        let a = nnls_gram(&g, &c).unwrap();
        let oracle = enumerate_oracle(&g, &c);
        assert!((objective(&g, &c, &a) - objective(&g, &c, &oracle)).abs() < 1e-10);
        let u = least_squares_gram(&g, &c);
        assert_eq!(u[1], 0.0);
    }

    #[test]
    fn empty_problem() {
        assert!(nnls_gram::<f64>(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn matches_enumeration_on_random_correlated_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=5);
            let cols: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..8).map(|_| rng.gen_range(-0.2..1.0f64).max(0.0)).collect())
                .collect();
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.5..1.0)).collect();
            let g = gram_of(&cols);
            let c = project(&cols, &x);
            let a = nnls_gram(&g, &c).unwrap();
            let oracle = enumerate_oracle(&g, &c);
            assert!(
                (objective(&g, &c, &a) - objective(&g, &c, &oracle)).abs() < 1e-10,
                "{a:?} vs {oracle:?}"
            );
            assert!(a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn unconstrained_solution_satisfies_normal_equations() {
        let cols = vec![vec![1.0, 0.2, 0.0], vec![0.5, 1.0, 0.1]];
        let g = gram_of(&cols);
        let c = project(&cols, &[-0.3, 1.0, 0.4]);
        let a = least_squares_gram(&g, &c);
        for i in 0..2 {
            let lhs: f64 = (0..2).map(|j| g[i * 2 + j] * a[j]).sum();
            assert!((lhs - c[i]).abs() < 1e-12);
        }
        assert!(a[0] < 0.0);
    }

    #[test]
    fn f32_solver_agrees_with_f64() {
        let cols = vec![vec![1.0, 0.3, 0.1], vec![0.2, 1.0, 0.4], vec![0.0, 0.3, 1.0]];
        let g = gram_of(&cols);
        let c = project(&cols, &[0.5, 0.7, 0.2]);
        let a64 = nnls_gram(&g, &c).unwrap();
        let g32: Vec<f32> = g.iter().map(|&v| v as f32).collect();
        let c32: Vec<f32> = c.iter().map(|&v| v as f32).collect();
        let a32 = nnls_gram(&g32, &c32).unwrap();
        for (p, q) in a64.iter().zip(&a32) {
            assert!((p - *q as f64).abs() < 1e-4);
        }
    }
}
