use serde::{Deserialize, Serialize};

use super::{integrate, IntegratorConfig, Trajectory};
use crate::linalg;
use crate::spreduce::{ModularSystem, ReduceError};

/// Error traces of the full system against its reduction on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub times: Vec<f64>,
    /// `|x(t) - x̄(y(t), t)|`.
    pub x_tilde: Vec<f64>,
    /// `|y(t) - ȳ(t)|`.
    pub y_error: Vec<f64>,
    pub full: Trajectory,
    pub reduced: Trajectory,
    pub cutoff: f64,
    /// Suprema over grid times at or after `cutoff`; `None` when the grid
    /// ends before it.
    pub sup_x_tilde_after: Option<f64>,
    pub sup_y_error_after: Option<f64>,
    pub diverged: bool,
}

/// Integrate the full system from `state0` and the reduced slow dynamics
/// `ẏ = ε ḡ(y, t)` from `y_bar0` (default: the slow part of `state0`).
pub fn compare_full_reduced(
    sys: &ModularSystem,
    state0: &[f64],
    y_bar0: Option<&[f64]>,
    config: &IntegratorConfig,
    cutoff: f64,
) -> Result<Comparison, ReduceError> {
    let nf = sys.n_fast();
    let full = integrate(sys.full(), state0, config)?;
    let y0 = y_bar0.unwrap_or(&state0[nf..]);
    let reduced = integrate(&sys.reduced(sys.epsilon()), y0, config)?;
    let n = full.len().min(reduced.len());
    let mut x_tilde = Vec::with_capacity(n);
    let mut y_error = Vec::with_capacity(n);
    for k in 0..n {
        let s = &full.states[k];
        let t = full.times[k];
        let x_bar = sys.x_bar(&s[nf..], t)?;
        x_tilde.push(linalg::dist(&s[..nf], &x_bar));
        y_error.push(linalg::dist(&s[nf..], &reduced.states[k]));
    }
    let after = |v: &[f64]| {
        let vals: Vec<f64> = (0..n).filter(|&k| full.times[k] >= cutoff).map(|k| v[k]).collect();
        (!vals.is_empty()).then(|| vals.into_iter().fold(0.0, f64::max))
    };
    Ok(Comparison {
        times: full.times[..n].to_vec(),
        sup_x_tilde_after: after(&x_tilde),
        sup_y_error_after: after(&y_error),
        x_tilde,
        y_error,
        diverged: full.diverged() || reduced.diverged(),
        full,
        reduced,
        cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::CompiledSystem;
    use crate::expr::parse_system;

    fn modular(src: &str) -> ModularSystem {
        ModularSystem::new(&CompiledSystem::new(&parse_system(src).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn decoupled_blocks_track_exactly() {
        // x̄ = 0, f̃ = -x̃, ḡ = -y, δf = δg = 0
        let m = modular("params { epsilon = 0.2 }\nfast x\nslow y\ndyn x = -x\ndyn y = -epsilon*y\n");
        let c = compare_full_reduced(&m, &[1.5, 2.0], None, &IntegratorConfig::with_horizon(5.0), 1.0).unwrap();
        let worst = c.y_error.iter().fold(0.0f64, |a, b| a.max(*b));
        assert!(worst < 1e-6, "{worst}");
        for (t, e) in c.times.iter().zip(&c.x_tilde) {
            assert!((e - 1.5 * (-t).exp()).abs() < 1e-7);
        }
        assert!(c.sup_x_tilde_after.unwrap() <= 1.5 * (-1f64).exp() + 1e-7);
    }

    #[test]
    fn frozen_slow_states_at_zero_epsilon() {
        let m = modular("params { epsilon = 0 }\nfast x\nslow y\ndyn x = -(x - y)\ndyn y = epsilon*(x - 2*y)\n");
        let c = compare_full_reduced(&m, &[0.0, 1.0], None, &IntegratorConfig::with_horizon(30.0), 20.0).unwrap();
        assert!(c.y_error.iter().all(|e| *e == 0.0));
        assert!(c.sup_x_tilde_after.unwrap() < 1e-6);
    }
}
