// Dormand-Prince 5(4) with the 4th-order continuous extension of
// Hairer, Norsett & Wanner (DOPRI5).

use super::{IntegratorConfig, SimError, Trajectory, BLOWUP_THRESHOLD};
use crate::dynsys::VectorField;
use crate::linalg::norm;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const MAX_STEPS: usize = 10_000_000;

struct Stepper<'a, F: ?Sized> {
    field: &'a F,
    n: usize,
    atol: f64,
    rtol: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
    err: Vec<f64>,
    rcont: [Vec<f64>; 5],
}

impl<F: VectorField + ?Sized> Stepper<'_, F> {
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<(), SimError> {
        self.field
            .eval(x, t, out)
            .map_err(|source| SimError::Eval { t, source })
    }

    fn scaled_norm(&self, v: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = (0..self.n)
            .map(|i| {
                let sc = self.atol + self.rtol * a[i].abs().max(b[i].abs());
                (v[i] / sc).powi(2)
            })
            .sum();
        (s / self.n.max(1) as f64).sqrt()
    }

    fn initial_step(&mut self, y: &[f64], t: f64, f0: &[f64], limit: f64) -> Result<f64, SimError> {
        let d0 = self.scaled_norm(y, y, y);
        let d1 = self.scaled_norm(f0, y, y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(limit);
        let probe: Vec<f64> = (0..self.n).map(|i| y[i] + h0 * f0[i]).collect();
        let mut f1 = vec![0.0; self.n];
        self.eval(&probe, t + h0, &mut f1)?;
        let diff: Vec<f64> = (0..self.n).map(|i| f1[i] - f0[i]).collect();
        let d2 = self.scaled_norm(&diff, y, y) / h0;
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(limit))
    }

    // one trial step from (t, y) with k[0] = f(t, y); fills y1, k[6], err
    fn attempt(&mut self, t: f64, y: &[f64], h: f64) -> Result<f64, SimError> {
        let n = self.n;
        let stages: [(f64, &[f64]); 5] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
        ];
        for (s, (c, a)) in stages.iter().enumerate() {
            for i in 0..n {
                let mut acc = y[i];
                for (j, aj) in a.iter().enumerate() {
                    acc += h * aj * self.k[j][i];
                }
                self.tmp[i] = acc;
            }
            let mut out = std::mem::take(&mut self.k[s + 1]);
            let res = self.eval(&self.tmp, t + c * h, &mut out);
            self.k[s + 1] = out;
            res?;
        }
        for i in 0..n {
            self.y1[i] = y[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        let mut k7 = std::mem::take(&mut self.k[6]);
        let res = self.eval(&self.y1, t + h, &mut k7);
        self.k[6] = k7;
        res?;
        for i in 0..n {
            self.err[i] = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
        }
        Ok(self.scaled_norm(&self.err, y, &self.y1))
    }

    fn prepare_dense(&mut self, y: &[f64], h: f64) {
        for i in 0..self.n {
            let ydiff = self.y1[i] - y[i];
            let bspl = h * self.k[0][i] - ydiff;
            self.rcont[0][i] = y[i];
            self.rcont[1][i] = ydiff;
            self.rcont[2][i] = bspl;
            self.rcont[3][i] = ydiff - h * self.k[6][i] - bspl;
            self.rcont[4][i] = h
                * (D1 * self.k[0][i]
                    + D3 * self.k[2][i]
                    + D4 * self.k[3][i]
                    + D5 * self.k[4][i]
                    + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
        }
    }

    fn dense(&self, theta: f64) -> Vec<f64> {
        let t1 = 1.0 - theta;
        (0..self.n)
            .map(|i| {
                let r = |k: usize| self.rcont[k][i];
                r(0) + theta * (r(1) + t1 * (r(2) + theta * (r(3) + t1 * r(4))))
            })
            .collect()
    }
}

pub(super) fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    let n = x0.len();
    let z = || vec![0.0; n];
    let mut st = Stepper {
        field,
        n,
        atol: config.atol,
        rtol: config.rtol,
        k: [z(), z(), z(), z(), z(), z(), z()],
        tmp: z(),
        y1: z(),
        err: z(),
        rcont: [z(), z(), z(), z(), z()],
    };
    let grid = config.output_times();
    let horizon = config.horizon;
    let mut out = Trajectory {
        times: vec![grid[0]],
        states: vec![x0.to_vec()],
        diverged_at: None,
    };
    let mut next_out = 1;

    let mut t = 0.0;
    let mut y = x0.to_vec();
    let mut k0 = z();
    st.eval(&y, t, &mut k0)?;
    st.k[0] = k0;
    let mut h = st.initial_step(&y, t, &st.k[0].clone(), config.max_step.min(horizon))?;
    let mut rejected_last = false;

    for _ in 0..MAX_STEPS {
        if next_out >= grid.len() {
            return Ok(out);
        }
        h = h.min(config.max_step).min(horizon - t);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(SimError::StepUnderflow { t });
        }
        let err = match st.attempt(t, &y, h) {
            Ok(e) => e,
            // non-finite stage values: shrink and retry
            Err(SimError::Eval { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if err <= 1.0 {
            let t_new = if horizon - (t + h) < 1e-12 * horizon {
                horizon
            } else {
                t + h
            };
            st.prepare_dense(&y, h);
            while next_out < grid.len() && grid[next_out] <= t_new {
                let theta = ((grid[next_out] - t) / h).clamp(0.0, 1.0);
                let state = if grid[next_out] == t_new {
                    st.y1.clone()
                } else {
                    st.dense(theta)
                };
                out.times.push(grid[next_out]);
                out.states.push(state);
                next_out += 1;
            }
            std::mem::swap(&mut y, &mut st.y1);
            st.k.swap(0, 6);
            t = t_new;
            if norm(&y) > BLOWUP_THRESHOLD {
                // drop output points past the last sub-threshold state
                while out.states.last().is_some_and(|s| norm(s) > BLOWUP_THRESHOLD) {
                    out.states.pop();
                    out.times.pop();
                }
                out.diverged_at = Some(t);
                return Ok(out);
            }
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h *= if rejected_last { factor.min(1.0) } else { factor };
            rejected_last = false;
        } else {
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                0.5
            };
            h *= factor;
            rejected_last = true;
        }
    }
    Err(SimError::StepUnderflow { t })
}
