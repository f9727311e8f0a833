mod common;

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use nds_core::bounds::{
    verify_bound, BoundError, BoundedDisturbance, DisturbanceModel, LGainDisturbance, Verdict, VerifyError,
};
use nds_core::contraction::{certify, SampleDomain};
use nds_core::dynsys::{BuildingModel, CompiledSystem, FnField, LinearField, Metric, VectorField};
use nds_core::expr::parse_system;
use nds_core::sim::{compare_full_reduced, integrate, IntegratorConfig};
use nds_core::spreduce::{
    epsilon_critical, lemma3_bounds, solve_slow_manifold, transient_time, GainConstants, ModularSystem,
};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    // write to the raw handle so the line survives libtest capture
    let line = format!(
        "criterion {n} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn nds(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_nds")).args(args).output().unwrap();
    let code = out.status.code().unwrap_or(-1);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let json = serde_json::from_str(&stdout).unwrap_or(Value::Null);
    (code, json)
}

fn compiled(src: &str) -> CompiledSystem {
    let spec = parse_system(src).unwrap_or_else(|e| panic!("{src}: {e}"));
    CompiledSystem::new(&spec).unwrap()
}

#[test]
fn critical_epsilon_formula() {
    let start = Instant::now();
    let eps_c = epsilon_critical(&GainConstants::building_reference());
    let elapsed = start.elapsed();
    let want = 2f64.sqrt() / 7.0;
    let err = (eps_c - want).abs();
    report(
        1,
        "critical epsilon",
        err <= 1e-12 && elapsed.as_secs_f64() < 1e-3,
        format!("ε_c = {eps_c:.15}, |ε_c - √2/7| = {err:.1e}, {elapsed:?}"),
    );
}

#[test]
fn building_contraction_constants() {
    let file = repo_file("systems/building.nds");
    let file = file.to_str().unwrap();
    let start = Instant::now();
    let (code_f, fast) = nds(&["analyze", file, "--block", "fast"]);
    let (code_s, slow) = nds(&["analyze", file, "--block", "slow"]);
    let elapsed = start.elapsed();
    let beta_f = fast["certificate"]["beta"].as_f64().unwrap_or(f64::NAN);
    let chi_f = fast["certificate"]["chi"].as_f64().unwrap_or(f64::NAN);
    let beta_g = slow["certificate"]["beta"].as_f64().unwrap_or(f64::NAN);
    let domain = &fast["certificate"]["domain"]["states"];
    let pass = code_f == 0
        && code_s == 0
        && (beta_f - 0.5).abs() <= 1e-3
        && (chi_f - 1.0).abs() <= 1e-12
        && (beta_g - 0.25).abs() <= 1e-3
        && domain[0]["lo"] == -20.0
        && domain[0]["hi"] == 20.0
        && elapsed.as_secs_f64() < 5.0;
    report(
        2,
        "contraction constants",
        pass,
        format!("β_f = {beta_f:.6}, χ_f = {chi_f}, β_g = {beta_g:.6}, {elapsed:?}"),
    );
}

#[test]
fn figure_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let start = Instant::now();
    let (code, _) = nds(&["reproduce", "all", "--out", out]);
    let elapsed = start.elapsed();
    let read = |fig: &str| -> Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(fig).join("summary.json")).unwrap()).unwrap()
    };
    let (f1, f2, f3) = (read("fig1"), read("fig2"), read("fig3"));
    let clusters = |v: &Value| v["clusters"].as_array().map_or(0, Vec::len);
    let divergent = |v: &Value| v["divergent"].as_u64().unwrap_or(0);
    let post = f1["max_post_transient_delta"].as_f64().unwrap_or(f64::NAN);
    let bound = f1["m_xtilde_bound"].as_f64().unwrap_or(f64::NAN);
    let runs_ok = [&f1, &f2, &f3].iter().all(|v| v["runs"] == 20);
    let pass = code == 0
        && runs_ok
        && divergent(&f1) == 0
        && clusters(&f1) == 1
        && post <= bound
        && clusters(&f2) >= 2
        && divergent(&f3) >= 1
        && elapsed.as_secs_f64() < 60.0;
    report(
        3,
        "figure regimes",
        pass,
        format!(
            "fig1: {} clusters, {} divergent, post-transient |δ| {post:.4} <= {bound:.4}; fig2: {} clusters; fig3: {} divergent; {elapsed:?}",
            clusters(&f1),
            divergent(&f1),
            clusters(&f2),
            divergent(&f3)
        ),
    );
}

/// `-(M Mᵀ + c I) + (K - Kᵀ)`: symmetric part at most `-c`.
fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let k = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.5..1.5));
    let c = rng.random_range(0.2..1.5);
    -(&m * m.transpose()) * 0.5 - DMatrix::identity(n, n) * c + (&k - k.transpose())
}

/// Random constant metric `Θ` with condition number below 10 and a matrix
/// `A = Θ⁻¹ A_θ Θ` that contracts in it.
fn random_system(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, Metric) {
    loop {
        let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)));
        let theta = scale * (DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3)));
        let sv = theta.singular_values();
        if sv.max() / sv.min() > 10.0 {
            continue;
        }
        let inv = theta.clone().try_inverse().unwrap();
        let a = &inv * random_stable(rng, n) * &theta;
        return (a, Metric::constant(theta).unwrap());
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half..half)).collect()
}

#[test]
fn bounded_disturbance_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..100 {
        let n = rng.random_range(1..=4);
        let (a, metric) = random_system(&mut rng, n);
        let nominal = LinearField::new(a.clone());
        let cert = certify(&nominal, &metric, &SampleDomain::cube(n, -500.0, 500.0), 4).unwrap();
        let sup = rng.random_range(0.0..2.0);
        let constant = case % 2 == 0;
        let dir: Vec<f64> = {
            let v = random_vec(&mut rng, n, 1.0);
            let len = common::norm(&v).max(1e-12);
            v.into_iter().map(|c| c / len).collect()
        };
        let freqs = random_vec(&mut rng, n, 3.0);
        let scale = sup / (n as f64).sqrt();
        let a2 = a.clone();
        let disturbed = FnField::new(n, move |x, t, out| {
            for i in 0..n {
                out[i] = (0..n).map(|j| a2[(i, j)] * x[j]).sum::<f64>();
                out[i] += if constant {
                    sup * dir[i]
                } else {
                    scale * (freqs[i] * t + i as f64).cos()
                };
            }
        });
        let x0 = random_vec(&mut rng, n, 5.0);
        let x1: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let model = DisturbanceModel::Bounded(BoundedDisturbance { sup });
        let rep = verify_bound(
            &nominal,
            &disturbed,
            &cert,
            &model,
            &x0,
            &x1,
            &IntegratorConfig::with_horizon(20.0),
        )
        .unwrap();
        worst = worst.max(rep.max_ratio);
        if rep.verdict != Verdict::Pass {
            failures.push((case, rep.verdict, rep.max_ratio));
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        "bounded disturbance envelope",
        failures.is_empty() && elapsed.as_secs_f64() < 60.0,
        format!("100 systems, worst deviation/bound = {worst:.4}, failures {failures:?}, {elapsed:?}"),
    );
}

#[test]
fn affine_disturbance_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut rejected = 0;
    for case in 0..50 {
        let n = rng.random_range(1..=3);
        let (a, metric) = random_system(&mut rng, n);
        let nominal = LinearField::new(a.clone());
        let cert = certify(&nominal, &metric, &SampleDomain::cube(n, -500.0, 500.0), 4).unwrap();
        let k0 = rng.random_range(0.0..1.0);
        let kx = rng.random_range(0.05..0.9) * cert.beta / cert.chi;
        let phase = rng.random_range(0.0..6.0);
        // rotation-like gain: |R x| = |x| for the sign-flip permutation below
        let a2 = a.clone();
        let disturbed = FnField::new(n, move |x, t, out| {
            for i in 0..n {
                out[i] = (0..n).map(|j| a2[(i, j)] * x[j]).sum::<f64>();
                let rotated = if i + 1 < n { -x[i + 1] } else { x[0] };
                out[i] += kx * rotated;
            }
            out[0] += k0 * (t + phase).sin();
        });
        let x0 = random_vec(&mut rng, n, 5.0);
        let x1: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let model = DisturbanceModel::LGain(LGainDisturbance {
            k0,
            kx,
            x00: cert.chi * common::norm(&x0),
        });
        let cfg = IntegratorConfig::with_horizon(20.0);
        let rep = verify_bound(&nominal, &disturbed, &cert, &model, &x0, &x1, &cfg).unwrap();
        worst = worst.max(rep.max_ratio);
        if rep.verdict != Verdict::Pass {
            failures.push((case, rep.verdict, rep.max_ratio));
        }
        let too_big = DisturbanceModel::LGain(LGainDisturbance {
            k0,
            kx: cert.beta / cert.chi * rng.random_range(1.01..3.0),
            x00: cert.chi * common::norm(&x0),
        });
        if let Err(VerifyError::Bound(BoundError::SmallGainViolated { .. })) =
            verify_bound(&nominal, &disturbed, &cert, &too_big, &x0, &x1, &cfg)
        {
            rejected += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        5,
        "affine disturbance envelope",
        failures.is_empty() && rejected == 50 && elapsed.as_secs_f64() < 60.0,
        format!(
            "50 systems, worst deviation/bound = {worst:.4}, failures {failures:?}, small-gain rejections {rejected}/50, {elapsed:?}"
        ),
    );
}

#[test]
fn tracking_after_transient() {
    let gc = GainConstants::building_reference();
    let eps_c = epsilon_critical(&gc);
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    let mut errs = Vec::new();
    for ratio in [0.1, 0.25, 0.5] {
        let eps = ratio * eps_c;
        let spec = BuildingModel::reference(eps).case_study().unwrap();
        let sys = ModularSystem::new(&CompiledSystem::new(&spec).unwrap()).unwrap();
        let t_total = transient_time(gc.beta_f, gc.beta_g, eps).unwrap().t_total;
        let cfg = IntegratorConfig {
            output_points: 3001,
            ..IntegratorConfig::with_horizon(1.5 * t_total)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut max_x_ratio: f64 = 0.0;
        let mut max_y_ratio: f64 = 0.0;
        let mut max_y: f64 = 0.0;
        for _ in 0..10 {
            let s0 = random_vec(&mut rng, 3, 5.0);
            let x_tilde0 = common::norm(&s0[..2]);
            let b = lemma3_bounds(&gc, eps, x_tilde0).unwrap();
            let c = compare_full_reduced(&sys, &s0, None, &cfg, t_total).unwrap();
            let sx = c.sup_x_tilde_after.unwrap();
            let sy = c.sup_y_error_after.unwrap();
            ok &= !c.diverged && sx <= b.m_xtilde && sy <= 1.02 * b.ytilde.asymptote;
            max_x_ratio = max_x_ratio.max(sx / b.m_xtilde);
            max_y_ratio = max_y_ratio.max(sy / b.ytilde.asymptote);
            max_y = max_y.max(sy);
        }
        lines.push(format!(
            "ε = {ratio}·ε_c: |x̃|/M ≤ {max_x_ratio:.2e}, |y-ȳ|/asym ≤ {max_y_ratio:.2e}, max |y-ȳ| = {max_y:.2e}"
        ));
        errs.push((eps, max_y));
    }
    let mut linear = true;
    for i in 0..errs.len() {
        for j in 0..i {
            // ε_j < ε_i: shrinking ε must shrink the error at least proportionally
            let (ei, yi) = errs[i];
            let (ej, yj) = errs[j];
            linear &= yj / ej <= 2.0 * yi / ei;
        }
    }
    let elapsed = start.elapsed();
    report(
        6,
        "tracking after transient",
        ok && linear && elapsed.as_secs_f64() < 120.0,
        format!(
            "{}; O(ε) scaling {}; {elapsed:?}",
            lines.join("; "),
            if linear { "holds" } else { "violated" }
        ),
    );
}

#[test]
fn oracle_equivalences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut jac_worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let src = format!(
            "dyn x = {}\ndyn y = {}\n",
            common::smooth_expr(&mut rng, 5),
            common::smooth_expr(&mut rng, 5)
        );
        let sys = compiled(&src);
        let p = random_vec(&mut rng, 2, 2.0);
        let f0 = sys.eval_vec(&p, 0.0).unwrap();
        if f0.iter().any(|v| v.abs() > 1e4) {
            continue;
        }
        let jac = sys.jacobian(&p, 0.0).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus[j] += h;
            minus[j] -= h;
            let (fp, fm) = (sys.eval_vec(&plus, 0.0).unwrap(), sys.eval_vec(&minus, 0.0).unwrap());
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                jac_worst = jac_worst.max((jac[(i, j)] - fd).abs() / jac[(i, j)].abs().max(1.0));
            }
        }
        cases += 1;
    }

    let conductance = compiled("params { epsilon = 0.1 }\nfast x\nslow y\ndyn x = -(x + 0.5*sin(x)) + y\ndyn y = 0\n");
    let mut newton_worst: f64 = 0.0;
    let mut x_at_one = f64::NAN;
    for y in [-12.0, -3.3, -1.0, 0.0, 0.4, 1.0, 2.5, 7.0, 15.0] {
        let x = solve_slow_manifold(&conductance, &[y], 0.0, &[0.0]).unwrap()[0];
        let oracle = common::bisect(|x| x + 0.5 * x.sin() - y, -40.0, 40.0);
        newton_worst = newton_worst.max((x - oracle).abs());
        if y == 1.0 {
            x_at_one = x;
        }
    }

    let cfg = IntegratorConfig {
        atol: 1e-12,
        rtol: 1e-11,
        ..IntegratorConfig::with_horizon(20.0)
    };
    let pairs = [
        (
            BuildingModel::reference(0.15).raw(),
            BuildingModel::reference(0.15).barycentric(),
        ),
        (
            BuildingModel::reference_half_gap(0.15).raw(),
            BuildingModel::reference(0.15).case_study(),
        ),
    ];
    let mut equiv_worst: f64 = 0.0;
    for (raw, bary) in pairs {
        let raw = CompiledSystem::new(&raw.unwrap()).unwrap();
        let bary = CompiledSystem::new(&bary.unwrap()).unwrap();
        for _ in 0..5 {
            let x0 = random_vec(&mut rng, 4, 5.0);
            let a = integrate(&raw, &x0, &cfg).unwrap();
            let b = integrate(&bary, &BuildingModel::to_barycentric(&x0), &cfg).unwrap();
            for (sa, sb) in a.states.iter().zip(&b.states) {
                let mapped = BuildingModel::to_barycentric(sa);
                for (u, v) in mapped.iter().zip(sb) {
                    equiv_worst = equiv_worst.max((u - v).abs());
                }
            }
        }
    }
    let pass = jac_worst <= 1e-6 && newton_worst <= 1e-8 && (x_at_one - 0.6840).abs() < 5e-5 && equiv_worst <= 1e-6;
    report(
        7,
        "oracle equivalences",
        pass,
        format!(
            "Jacobian vs central difference {jac_worst:.1e} over 1000 systems; Newton vs bisection {newton_worst:.1e} (x̄(1) = {x_at_one:.4}); raw vs barycentric {equiv_worst:.1e}"
        ),
    );
}

#[test]
fn heat_conservation() {
    let raw = CompiledSystem::new(&BuildingModel::reference(0.1).raw().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut drift: f64 = 0.0;
    for _ in 0..5 {
        let x0 = random_vec(&mut rng, 4, 5.0);
        let traj = integrate(&raw, &x0, &IntegratorConfig::with_horizon(100.0)).unwrap();
        let s0: f64 = x0.iter().sum();
        for s in &traj.states {
            drift = drift.max((s.iter().sum::<f64>() - s0).abs());
        }
    }
    report(
        8,
        "heat conservation",
        drift <= 1e-6,
        format!("max |Σx(t) - Σx(0)| = {drift:.1e} over T = 100"),
    );
}
