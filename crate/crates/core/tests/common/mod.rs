#![allow(dead_code)]

use rand::Rng;

/// Random smooth expression in `x` and `y` as source text. Divisions and
/// logarithms are guarded so every sample is finite and differentiable.
pub fn smooth_expr<R: Rng>(rng: &mut R, depth: usize) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..3) {
            0 => "x".into(),
            1 => "y".into(),
            _ => format!("{:.3}", rng.random_range(0.1..3.0)),
        };
    }
    let a = smooth_expr(rng, depth - 1);
    match rng.random_range(0..11) {
        0 => format!("({a}) + ({})", smooth_expr(rng, depth - 1)),
        1 => format!("({a}) - ({})", smooth_expr(rng, depth - 1)),
        2 => format!("({a}) * ({})", smooth_expr(rng, depth - 1)),
        3 => format!("({a}) / (1 + ({})^2)", smooth_expr(rng, depth - 1)),
        4 => format!("({a})^{}", rng.random_range(2..4)),
        5 => format!("sin({a})"),
        6 => format!("cos({a})"),
        7 => format!("tanh({a})"),
        8 => format!("exp(tanh({a}))"),
        9 => format!("log(1 + ({a})^2)"),
        _ => format!("sqrt(2 + sin({a}))"),
    }
}

pub fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
