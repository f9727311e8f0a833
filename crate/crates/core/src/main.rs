use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nds_core::contraction::{ContractionError, DEFAULT_SAMPLES};
use nds_core::dynsys::{BuildingModel, CompiledSystem, Metric};
use nds_core::experiments::{self, Figure, Regime, ReproduceConfig};
use nds_core::expr::{parse_system, Interval, SystemSpec};
use nds_core::json::SCHEMA_VERSION;
use nds_core::sim::{
    compare_full_reduced, integrate, run_ensemble, write_ensemble_csv, write_trajectory_csv, IntegratorConfig, Method,
    Trajectory,
};
use nds_core::spreduce::{certify_block, reduce, Block, GainConstants, ModularSystem, ReduceError, ReduceOptions};

const EXIT_PROPERTY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "nds",
    version,
    about = "Contraction analysis and timescale reduction of ODE systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a system file.
    Validate { file: PathBuf },
    /// Certify contraction over the system's domain.
    Analyze {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = BlockArg::Full)]
        block: BlockArg,
        /// `identity`, `diag:a,b,...` or `matrix:a,b;c,d`.
        #[arg(long, default_value = "identity")]
        metric: String,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Reduce to standard form and report the critical perturbation and bounds.
    Reduce {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        /// JSON file with gain constants to use instead of fitted ones.
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        m_bar: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        delta_offset: f64,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        ic: Option<String>,
        #[arg(long, default_value = "identity")]
        fast_metric: String,
        #[arg(long, default_value = "identity")]
        slow_metric: String,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Integrate an ensemble from seeded random initial states.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "T", default_value_t = 100.0)]
        horizon: f64,
        #[arg(long)]
        out: PathBuf,
        /// Sampling box `lo,hi` for every state (default: the system domain).
        #[arg(long, allow_hyphen_values = true)]
        ic_box: Option<String>,
        /// Single initial state, comma separated; overrides the box.
        #[arg(long, allow_hyphen_values = true)]
        ic: Option<String>,
        #[arg(long, value_enum, default_value_t = MethodArg::Dopri5)]
        method: MethodArg,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 1e-9)]
        atol: f64,
        #[arg(long, default_value_t = 1e-7)]
        rtol: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Rerun the building ensembles below, near and far above the critical value.
    Reproduce {
        #[arg(value_enum)]
        figure: FigureArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = experiments::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = experiments::DEFAULT_RUNS)]
        runs: usize,
        #[arg(long = "T", default_value_t = experiments::DEFAULT_HORIZON)]
        horizon: f64,
        #[arg(long)]
        gains: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BlockArg {
    Full,
    Fast,
    Slow,
}

impl From<BlockArg> for Block {
    fn from(b: BlockArg) -> Block {
        match b {
            BlockArg::Full => Block::Full,
            BlockArg::Fast => Block::Fast,
            BlockArg::Slow => Block::Slow,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dopri5,
    Rk4,
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureArg {
    Fig1,
    Fig2,
    Fig3,
    All,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Numerical(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Numerical(format!("json: {e}"))
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { file } => validate(&file),
        Command::Analyze {
            file,
            block,
            metric,
            samples,
            epsilon,
        } => analyze(&file, block.into(), &metric, samples, epsilon),
        Command::Reduce {
            file,
            samples,
            gains,
            m_bar,
            delta_offset,
            ic,
            fast_metric,
            slow_metric,
            epsilon,
        } => reduce_cmd(ReduceArgs {
            file,
            samples,
            gains,
            m_bar,
            delta_offset,
            ic,
            fast_metric,
            slow_metric,
            epsilon,
        }),
        Command::Simulate {
            file,
            runs,
            seed,
            horizon,
            out,
            ic_box,
            ic,
            method,
            step,
            atol,
            rtol,
            points,
            epsilon,
        } => {
            let method = match method {
                MethodArg::Dopri5 => Method::Dopri5,
                MethodArg::Rk4 => Method::Rk4 { step },
            };
            let config = IntegratorConfig {
                method,
                atol,
                rtol,
                max_step: f64::INFINITY,
                horizon,
                output_points: points,
            };
            simulate(SimulateArgs {
                file,
                runs,
                seed,
                out,
                ic_box,
                ic,
                config,
                epsilon,
            })
        }
        Command::Reproduce {
            figure,
            out,
            seed,
            runs,
            horizon,
            gains,
        } => reproduce_cmd(figure, &out, seed, runs, horizon, gains.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn load(file: &Path) -> Result<(SystemSpec, Vec<u8>), Failure> {
    let bytes = fs::read(file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let src = String::from_utf8(bytes.clone()).map_err(|_| Failure::Usage(format!("{}: not UTF-8", file.display())))?;
    let spec = parse_system(&src).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    Ok((spec, bytes))
}

fn compile(spec: &SystemSpec, epsilon: Option<f64>) -> Result<CompiledSystem, Failure> {
    let sys = CompiledSystem::new(spec).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(match epsilon {
        Some(e) if !(e >= 0.0 && e.is_finite()) => {
            return Err(Failure::Usage(format!("--epsilon must be finite and >= 0, got {e}")))
        }
        Some(e) => sys.with_epsilon(e),
        None => sys,
    })
}

fn print_json(v: &Value) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("{what}: expected comma-separated numbers, got `{s}`")))
}

fn parse_metric(desc: &str, n: usize) -> Result<Metric, Failure> {
    Metric::parse(desc, n).map_err(|e| Failure::Usage(e.to_string()))
}

fn validate(file: &Path) -> Outcome {
    let (spec, _) = load(file)?;
    eprintln!(
        "{}: ok ({} states: {} fast, {} slow; {} parameters)",
        file.display(),
        spec.n_states(),
        spec.n_fast(),
        spec.n_slow(),
        spec.params.len()
    );
    Ok(0)
}

fn contraction_failure(e: ContractionError, header: Value) -> Outcome {
    match e {
        ContractionError::NotContracting(v) => {
            let mut out = header;
            out["contracting"] = json!(false);
            out["violation"] = serde_json::to_value(&*v)?;
            print_json(&out)?;
            eprintln!("not contracting: λ_max = {} at x = {:?}", v.lambda_max, v.point);
            Ok(EXIT_PROPERTY)
        }
        ContractionError::Dimension(msg) => Err(Failure::Usage(msg)),
        other => Err(Failure::Numerical(other.to_string())),
    }
}

fn analyze(file: &Path, block: Block, metric: &str, samples: usize, epsilon: Option<f64>) -> Outcome {
    let (spec, _) = load(file)?;
    let sys = compile(&spec, epsilon)?;
    let header = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "analyze",
        "system": spec.name,
        "block": block,
    });
    let n = match block {
        Block::Full => sys.spec().n_states(),
        Block::Fast => sys.n_fast(),
        Block::Slow => sys.n_slow(),
    };
    let result = certify_block(&sys, block, &parse_metric(metric, n)?, samples);
    match result {
        Ok(cert) => {
            let mut out = header;
            out["contracting"] = json!(true);
            out["certificate"] = serde_json::to_value(&cert)?;
            print_json(&out)?;
            eprintln!("contracting: β = {:.6}, χ = {:.6}", cert.beta, cert.chi);
            Ok(0)
        }
        Err(ReduceError::Contraction(e)) => contraction_failure(e, header),
        Err(e @ (ReduceError::Partition { .. } | ReduceError::Dimension(_))) => Err(Failure::Usage(e.to_string())),
        Err(e) => Err(Failure::Numerical(e.to_string())),
    }
}

struct ReduceArgs {
    file: PathBuf,
    samples: usize,
    gains: Option<PathBuf>,
    m_bar: Option<f64>,
    delta_offset: f64,
    ic: Option<String>,
    fast_metric: String,
    slow_metric: String,
    epsilon: Option<f64>,
}

fn load_gains(path: &Path) -> Result<GainConstants, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let gc: GainConstants =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    gc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(gc)
}

fn reduce_cmd(args: ReduceArgs) -> Outcome {
    let (spec, _) = load(&args.file)?;
    let sys = compile(&spec, args.epsilon)?;
    let opts = ReduceOptions {
        samples: args.samples,
        fast_metric: Some(parse_metric(&args.fast_metric, sys.n_fast())?),
        slow_metric: Some(parse_metric(&args.slow_metric, sys.n_slow())?),
        gains: args.gains.as_deref().map(load_gains).transpose()?,
        m_bar: args.m_bar,
        delta_offset: args.delta_offset,
        initial: args.ic.as_deref().map(|s| parse_list(s, "--ic")).transpose()?,
    };
    let header = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "reduce",
        "system": spec.name,
    });
    match reduce(&sys, &opts) {
        Ok(rep) => {
            let mut out = header;
            out["report"] = serde_json::to_value(&rep)?;
            print_json(&out)?;
            eprintln!("ε = {}, ε_c = {}", rep.epsilon, rep.epsilon_c);
            let mut code = 0;
            if !rep.bounds_valid {
                eprintln!("ε is not below ε_c: tracking bounds do not apply");
                code = EXIT_PROPERTY;
            }
            if !rep.constants_hold {
                eprintln!(
                    "gain constants are violated on the domain (|δf| excess {:.4}, |δg| excess {:.4})",
                    rep.gain_check.delta_f_excess, rep.gain_check.delta_g_excess
                );
                code = EXIT_PROPERTY;
            }
            Ok(code)
        }
        Err(ReduceError::Contraction(e)) => contraction_failure(e, header),
        Err(e @ (ReduceError::Hypothesis(_) | ReduceError::AboveCritical { .. })) => {
            let mut out = header;
            out["error"] = json!(e.to_string());
            print_json(&out)?;
            eprintln!("{e}");
            Ok(EXIT_PROPERTY)
        }
        Err(e @ (ReduceError::Partition { .. } | ReduceError::Dimension(_) | ReduceError::Invalid(_))) => {
            Err(Failure::Usage(e.to_string()))
        }
        Err(e) => Err(Failure::Numerical(e.to_string())),
    }
}

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    command: String,
    input: String,
    input_sha256: String,
    seed: u64,
    config: Value,
    outputs: Vec<String>,
    version: String,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    input: &str,
    bytes: &[u8],
    seed: u64,
    config: Value,
    outputs: &[&str],
) -> Result<(), Failure> {
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        input: input.into(),
        input_sha256: hex::encode(Sha256::digest(bytes)),
        seed,
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

struct SimulateArgs {
    file: PathBuf,
    runs: usize,
    seed: u64,
    out: PathBuf,
    ic_box: Option<String>,
    ic: Option<String>,
    config: IntegratorConfig,
    epsilon: Option<f64>,
}

fn simulate(args: SimulateArgs) -> Outcome {
    let (spec, bytes) = load(&args.file)?;
    let sys = compile(&spec, args.epsilon)?;
    if args.runs == 0 {
        return Err(Failure::Usage("--runs must be at least 1".into()));
    }
    let n = spec.n_states();
    let ic_box: Vec<Interval> = match &args.ic_box {
        Some(s) => match parse_list(s, "--ic-box")?.as_slice() {
            [lo, hi] if lo < hi => vec![Interval::new(*lo, *hi); n],
            _ => {
                return Err(Failure::Usage(format!(
                    "--ic-box: expected `lo,hi` with lo < hi, got `{s}`"
                )))
            }
        },
        None => spec.domain.clone(),
    };
    let names = spec.state_names();
    fs::create_dir_all(&args.out)?;

    let (mut summary, csv_name) = if let Some(s) = &args.ic {
        let x0 = parse_list(s, "--ic")?;
        if x0.len() != n {
            return Err(Failure::Usage(format!("--ic has {} entries, expected {n}", x0.len())));
        }
        let traj = integrate(&sys, &x0, &args.config).map_err(|e| Failure::Numerical(e.to_string()))?;
        write_trajectory_csv(fs::File::create(args.out.join("trajectory.csv"))?, &names, &traj)?;
        let summary = json!({
            "runs": 1,
            "initial": x0,
            "final_state": traj.final_state(),
            "diverged_at": traj.diverged_at,
            "tracking": tracking_errors(&sys, &[(0, &traj)]),
        });
        (summary, "trajectory.csv")
    } else {
        let ens = run_ensemble(&sys, &ic_box, args.runs, args.seed, &args.config);
        write_ensemble_csv(fs::File::create(args.out.join("trajectories.csv"))?, &names, &ens)?;
        let runs: Vec<(usize, &Trajectory)> = ens
            .runs
            .iter()
            .filter_map(|r| r.trajectory.as_ref().map(|t| (r.index, t)))
            .collect();
        let failures: Vec<Value> = ens
            .runs
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| json!({ "run": r.index, "error": e })))
            .collect();
        let summary = json!({
            "runs": args.runs,
            "ic_box": ens.ic_box,
            "divergent": ens.divergent,
            "clusters": ens.clusters,
            "failures": failures,
            "tracking": tracking_errors(&sys, &runs),
        });
        (summary, "trajectories.csv")
    };
    summary["schema_version"] = json!(SCHEMA_VERSION);
    summary["command"] = json!("simulate");
    summary["system"] = json!(spec.name);
    summary["seed"] = json!(args.seed);
    fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let config = json!({
        "integrator": args.config,
        "runs": args.runs,
        "ic_box": ic_box,
        "ic": args.ic,
        "epsilon": sys.epsilon(),
    });
    write_manifest(
        &args.out,
        "simulate",
        &args.file.display().to_string(),
        &bytes,
        args.seed,
        config,
        &[csv_name, "summary.json"],
    )?;
    print_json(&summary)?;
    Ok(0)
}

/// Largest `|y - ȳ|` per run against the reduced model started from the
/// same slow state; empty unless the system has both fast and slow states.
fn tracking_errors(sys: &CompiledSystem, runs: &[(usize, &Trajectory)]) -> Value {
    let Ok(modular) = ModularSystem::new(sys) else {
        return Value::Null;
    };
    let out: Vec<Value> = runs
        .iter()
        .filter(|(_, t)| !t.diverged())
        .map(|(i, traj)| {
            let config = IntegratorConfig {
                output_points: traj.len(),
                ..IntegratorConfig::with_horizon(*traj.times.last().unwrap_or(&1.0))
            };
            match compare_full_reduced(&modular, &traj.states[0], None, &config, 0.0) {
                Ok(c) => json!({ "run": i, "max_y_error": c.y_error.iter().fold(0.0f64, |a, b| a.max(*b)) }),
                Err(e) => json!({ "run": i, "error": e.to_string() }),
            }
        })
        .collect();
    Value::Array(out)
}

fn reproduce_cmd(figure: FigureArg, out: &Path, seed: u64, runs: usize, horizon: f64, gains: Option<&Path>) -> Outcome {
    let figures: Vec<Figure> = match figure {
        FigureArg::Fig1 => vec![Figure::Fig1],
        FigureArg::Fig2 => vec![Figure::Fig2],
        FigureArg::Fig3 => vec![Figure::Fig3],
        FigureArg::All => Figure::ALL.to_vec(),
    };
    if runs == 0 || !(horizon > 0.0) {
        return Err(Failure::Usage("--runs and --T must be positive".into()));
    }
    let cfg = ReproduceConfig {
        runs,
        seed,
        horizon,
        constants: match gains {
            Some(p) => load_gains(p)?,
            None => GainConstants::building_reference(),
        },
        ..Default::default()
    };
    let mut code = 0;
    let mut summaries = Vec::new();
    for fig in figures {
        let (summary, ens) = experiments::reproduce(fig, &cfg).map_err(|e| Failure::Numerical(e.to_string()))?;
        let dir = out.join(fig.name());
        fs::create_dir_all(&dir)?;
        let model = BuildingModel::reference_half_gap(summary.epsilon);
        let spec = model.raw().map_err(|e| Failure::Numerical(e.to_string()))?;
        let mut names = spec.state_names();
        names.extend(["d1", "d2", "D"].map(String::from));
        let mut with_bary = ens.clone();
        for run in &mut with_bary.runs {
            if let Some(t) = &run.trajectory {
                run.trajectory = Some(t.map(|x| {
                    let mut v = x.to_vec();
                    v.extend(BuildingModel::to_barycentric(x));
                    v
                }));
            }
        }
        write_ensemble_csv(fs::File::create(dir.join("trajectories.csv"))?, &names, &with_bary)?;
        let expected = match fig {
            Figure::Fig1 => summary.divergent == 0 && summary.clusters.len() == 1 && summary.within_bound == Some(true),
            Figure::Fig2 => summary.clusters.len() >= 2,
            Figure::Fig3 => summary.divergent >= 1,
        };
        let mut value = serde_json::to_value(&summary)?;
        value["schema_version"] = json!(SCHEMA_VERSION);
        value["command"] = json!("reproduce");
        value["expected_regime_observed"] = json!(expected);
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&value)?)?;
        let config = json!({
            "figure": fig.name(),
            "epsilon_ratio": fig.ratio(),
            "runs": runs,
            "horizon": horizon,
            "ic_box": [-experiments::IC_HALF_WIDTH, experiments::IC_HALF_WIDTH],
            "integrator": cfg.integrator,
            "constants": cfg.constants,
        });
        let source = spec.to_string();
        write_manifest(
            &dir,
            "reproduce",
            "builtin:building",
            source.as_bytes(),
            seed,
            config,
            &["trajectories.csv", "summary.json"],
        )?;
        let regime = match summary.regime {
            Regime::Converged => "converged",
            Regime::MultiEquilibria => "multi-equilibria",
            Regime::Divergent => "divergent",
        };
        eprintln!(
            "{}: ε = {:.6} ({}·ε_c), {} clusters, {} divergent of {} -> {regime}",
            fig.name(),
            summary.epsilon,
            fig.ratio(),
            summary.clusters.len(),
            summary.divergent,
            summary.runs
        );
        if !expected {
            code = EXIT_PROPERTY;
        }
        summaries.push(value);
    }
    print_json(&Value::Array(summaries))?;
    Ok(code)
}
