//! Small covering LP: minimize `c·v` over `v ≥ 0` subject to `A v ≥ b`,
//! solved through its dual `max b·w, Aᵀw ≤ c, w ≥ 0` with a dense tableau.
//! The dual has one row per primal variable, so rows stay tiny while the
//! number of sampled constraints can be large.

const PIVOT_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpError {
    /// The dual is unbounded, so no `v ≥ 0` satisfies every constraint.
    Infeasible,
    /// Cost vector with a negative entry (the all-slack basis is then not dual feasible).
    NegativeCost,
    IterationLimit,
}

/// `rows[i]` is `(a_i, b_i)`; every `a_i` has `c.len()` entries.
pub(crate) fn minimize_cover(c: &[f64], rows: &[(Vec<f64>, f64)]) -> Result<Vec<f64>, LpError> {
    let k = c.len();
    let m = rows.len();
    if c.iter().any(|v| *v < 0.0) {
        return Err(LpError::NegativeCost);
    }
    // tableau: k rows of [Aᵀ | I | c], objective row holds reduced costs
    let width = m + k;
    let mut t = vec![vec![0.0; width + 1]; k];
    for (j, (a, _)) in rows.iter().enumerate() {
        for r in 0..k {
            t[r][j] = a[r];
        }
    }
    for r in 0..k {
        t[r][m + r] = 1.0;
        t[r][width] = c[r];
    }
    // maximize b·w  <=>  reduced cost z_j = -b_j initially
    let mut z = vec![0.0; width + 1];
    for (j, (_, b)) in rows.iter().enumerate() {
        z[j] = -b;
    }
    let mut basis: Vec<usize> = (m..m + k).collect();

    for _ in 0..MAX_PIVOTS {
        // Dantzig entering rule, lowest index on ties
        let mut enter = None;
        let mut best = -PIVOT_TOL;
        for (j, &zj) in z.iter().take(width).enumerate() {
            if zj < best {
                best = zj;
                enter = Some(j);
            }
        }
        let Some(e) = enter else {
            return Ok((0..k).map(|r| z[m + r].max(0.0)).collect());
        };
        let mut leave = None;
        let mut ratio = f64::INFINITY;
        for r in 0..k {
            if t[r][e] > PIVOT_TOL {
                let q = t[r][width] / t[r][e];
                if q < ratio - 1e-15 || (q <= ratio + 1e-15 && leave.is_some_and(|l: usize| basis[r] < basis[l])) {
                    ratio = q;
                    leave = Some(r);
                }
            }
        }
        let Some(l) = leave else {
            return Err(LpError::Infeasible);
        };
        let p = t[l][e];
        for v in t[l].iter_mut() {
            *v /= p;
        }
        let pivot_row = t[l].clone();
        for (r, row) in t.iter_mut().enumerate() {
            if r != l && row[e] != 0.0 {
                let f = row[e];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        let f = z[e];
        for (v, pv) in z.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
        basis[l] = e;
    }
    Err(LpError::IterationLimit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // every vertex of {v ≥ 0, A v ≥ b} lies on k active constraints
    fn brute_force(c: &[f64], rows: &[(Vec<f64>, f64)]) -> f64 {
        let k = c.len();
        let mut all: Vec<(Vec<f64>, f64)> = rows.to_vec();
        for r in 0..k {
            let mut e = vec![0.0; k];
            e[r] = 1.0;
            all.push((e, 0.0));
        }
        let mut best = f64::INFINITY;
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let a = DMatrix::from_fn(k, k, |i, j| all[idx[i]].0[j]);
            let b = DVector::from_fn(k, |i, _| all[idx[i]].1);
            if let Some(v) = a.lu().solve(&b) {
                let feasible = v.iter().all(|x| *x >= -1e-9)
                    && all
                        .iter()
                        .all(|(ai, bi)| ai.iter().zip(v.iter()).map(|(p, q)| p * q).sum::<f64>() >= bi - 1e-9);
                if feasible {
                    best = best.min(c.iter().zip(v.iter()).map(|(p, q)| p * q).sum());
                }
            }
            // next combination
            let n = all.len();
            let mut i = k;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < n - k + i {
                    idx[i] += 1;
                    for j in i + 1..k {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn objective(c: &[f64], v: &[f64]) -> f64 {
        c.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn exact_affine_data() {
        let rows: Vec<_> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.5;
                (vec![1.0, x], 0.3 + 0.1 * x)
            })
            .collect();
        let v = minimize_cover(&[1.0, 1.0], &rows).unwrap();
        assert!((v[0] - 0.3).abs() < 1e-12 && (v[1] - 0.1).abs() < 1e-12, "{v:?}");
    }

    #[test]
    fn all_zero_data() {
        let rows = vec![(vec![1.0, 2.0, 3.0], 0.0); 5];
        assert_eq!(minimize_cover(&[1.0, 1.0, 1.0], &rows).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn infeasible_without_offset() {
        let rows = vec![(vec![0.0], 1.0)];
        assert_eq!(minimize_cover(&[1.0], &rows), Err(LpError::Infeasible));
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..200 {
            let k = 1 + case % 3;
            let m = 3 + case % 9;
            let rows: Vec<_> = (0..m)
                .map(|_| {
                    let mut a: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
                    a[0] = 1.0;
                    (a, rng.random_range(-1.0..4.0))
                })
                .collect();
            let c: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..2.0)).collect();
            let v = minimize_cover(&c, &rows).unwrap();
            for (a, b) in &rows {
                assert!(objective(a, &v) >= b - 1e-9);
            }
            assert!(v.iter().all(|x| *x >= 0.0));
            let oracle = brute_force(&c, &rows);
            assert!(
                (objective(&c, &v) - oracle).abs() < 1e-9,
                "case {case}: {} vs {oracle}",
                objective(&c, &v)
            );
        }
    }
}
