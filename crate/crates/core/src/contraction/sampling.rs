use serde::{Deserialize, Serialize};

use crate::expr::Interval;

/// Box over the states plus a time window. A zero-width time window means
/// the field is evaluated at that single time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDomain {
    pub states: Vec<Interval>,
    pub time: Interval,
}

impl SampleDomain {
    pub fn new(states: Vec<Interval>) -> Self {
        SampleDomain {
            states,
            time: Interval::new(0.0, 0.0),
        }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        SampleDomain::new(vec![Interval::new(lo, hi); dim])
    }

    pub fn with_time(mut self, lo: f64, hi: f64) -> Self {
        self.time = Interval::new(lo, hi);
        self
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    // states, then time
    fn axes(&self) -> Vec<Interval> {
        let mut axes: Vec<Interval> = self.states.clone();
        axes.push(self.time);
        axes
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.states).all(|(v, iv)| *v >= iv.lo && *v <= iv.hi)
    }

    pub fn clamp(&self, p: &mut Point) {
        for (v, iv) in p.x.iter_mut().zip(&self.states) {
            *v = v.clamp(iv.lo, iv.hi);
        }
        p.t = p.t.clamp(self.time.lo, self.time.hi);
    }

    /// Deterministic sample set: a tensor grid (endpoints included) on about
    /// half the budget and a Halton sequence on the rest.
    pub fn points(&self, count: usize) -> Vec<Point> {
        let axes = self.axes();
        let free: Vec<usize> = (0..axes.len()).filter(|&i| axes[i].width() > 0.0).collect();
        let center: Vec<f64> = axes.iter().map(Interval::center).collect();
        let to_point = |coords: &[f64]| {
            let n = coords.len() - 1;
            Point {
                x: coords[..n].to_vec(),
                t: coords[n],
            }
        };
        if free.is_empty() {
            return vec![to_point(&center)];
        }
        let count = count.max(2);
        let mut out = Vec::with_capacity(count);
        let d = free.len() as u32;
        let mut k = ((count / 2) as f64).powf(1.0 / d as f64).floor() as usize;
        while k >= 2 && k.pow(d) > count / 2 {
            k -= 1;
        }
        if k >= 2 {
            let total = k.pow(d);
            for idx in 0..total {
                let mut c = center.clone();
                let mut rem = idx;
                for &axis in &free {
                    let j = rem % k;
                    rem /= k;
                    let iv = axes[axis];
                    c[axis] = iv.lo + iv.width() * j as f64 / (k - 1) as f64;
                }
                out.push(to_point(&c));
            }
        }
        let mut i = 1u64;
        while out.len() < count {
            let mut c = center.clone();
            for (dim, &axis) in free.iter().enumerate() {
                let iv = axes[axis];
                c[axis] = iv.lo + iv.width() * radical_inverse(i, nth_prime(dim));
            }
            out.push(to_point(&c));
            i += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: Vec<f64>,
    pub t: f64,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

fn nth_prime(n: usize) -> u64 {
    let mut found = 0;
    let mut c = 2u64;
    loop {
        if (2..c).take_while(|d| d * d <= c).all(|d| c % d != 0) {
            if found == n {
                return c;
            }
            found += 1;
        }
        c += 1;
    }
}

/// Coordinate-wise pattern search maximizing `objective` from `start`,
/// staying inside `domain`. Returns the best point and value found.
pub(crate) fn compass_maximize(
    domain: &SampleDomain,
    start: Point,
    start_value: f64,
    objective: &dyn Fn(&Point) -> Option<f64>,
    max_evals: usize,
) -> (Point, f64) {
    let axes = domain.axes();
    let n = domain.dim();
    let mut step: Vec<f64> = axes.iter().map(|iv| 0.05 * iv.width()).collect();
    let min_step: Vec<f64> = axes.iter().map(|iv| 1e-7 * iv.width()).collect();
    let (mut best, mut best_v) = (start, start_value);
    let mut evals = 0;
    while evals < max_evals {
        let mut improved = false;
        for axis in 0..axes.len() {
            if step[axis] <= min_step[axis] || axes[axis].width() == 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut cand = best.clone();
                if axis < n {
                    cand.x[axis] += sign * step[axis];
                } else {
                    cand.t += sign * step[axis];
                }
                domain.clamp(&mut cand);
                evals += 1;
                if let Some(v) = objective(&cand) {
                    if v > best_v {
                        best = cand;
                        best_v = v;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            let mut any = false;
            for (s, m) in step.iter_mut().zip(&min_step) {
                if *s > *m {
                    *s *= 0.5;
                    any = true;
                }
            }
            if !any {
                break;
            }
        }
    }
    (best, best_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_corners_and_count_is_exact() {
        let dom = SampleDomain::cube(2, -1.0, 1.0);
        let pts = dom.points(100);
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().any(|p| p.x == vec![-1.0, -1.0]));
        assert!(pts.iter().any(|p| p.x == vec![1.0, 1.0]));
        assert!(pts.iter().all(|p| dom.contains(&p.x) && p.t == 0.0));
        assert_eq!(dom.points(100), pts);
    }

    #[test]
    fn halton_is_low_discrepancy() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
        assert_eq!((0..6).map(nth_prime).collect::<Vec<_>>(), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn degenerate_domain_is_one_point() {
        let dom = SampleDomain::new(vec![Interval::new(2.0, 2.0)]);
        assert_eq!(dom.points(50).len(), 1);
    }

    #[test]
    fn compass_finds_interior_maximum() {
        let dom = SampleDomain::cube(2, -5.0, 5.0);
        let obj = |p: &Point| Some(-(p.x[0] - 1.3).powi(2) - (p.x[1] + 2.7).powi(2));
        let start = Point {
            x: vec![0.0, 0.0],
            t: 0.0,
        };
        let v0 = obj(&start).unwrap();
        let (best, v) = compass_maximize(&dom, start, v0, &obj, 2000);
        assert!(v > -1e-10, "{best:?} {v}");
    }
}
