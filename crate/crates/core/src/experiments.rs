//! The building case-study ensembles at fixed multiples of the critical
//! perturbation value.

use serde::{Deserialize, Serialize};

use crate::dynsys::{BuildingModel, CompiledSystem};
use crate::expr::Interval;
use crate::json::num;
use crate::linalg;
use crate::sim::{run_ensemble, Cluster, EnsembleResult, IntegratorConfig, MERGE_RADIUS};
use crate::spreduce::{epsilon_critical, lemma3_bounds, transient_time, GainConstants, ReduceError};

pub const DEFAULT_RUNS: usize = 20;
pub const DEFAULT_SEED: u64 = 2;
pub const IC_HALF_WIDTH: f64 = 5.0;
pub const DEFAULT_HORIZON: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
}

impl Figure {
    pub const ALL: [Figure; 3] = [Figure::Fig1, Figure::Fig2, Figure::Fig3];

    /// `ε / ε_c` for the figure.
    pub fn ratio(self) -> f64 {
        match self {
            Figure::Fig1 => 0.5,
            Figure::Fig2 => 2.5,
            Figure::Fig3 => 5.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown figure `{s}` (expected fig1, fig2 or fig3)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Converged,
    MultiEquilibria,
    Divergent,
}

#[derive(Debug, Clone)]
pub struct ReproduceConfig {
    pub runs: usize,
    pub seed: u64,
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    pub constants: GainConstants,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        ReproduceConfig {
            runs: DEFAULT_RUNS,
            seed: DEFAULT_SEED,
            horizon: DEFAULT_HORIZON,
            integrator: IntegratorConfig::default(),
            constants: GainConstants::building_reference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSummary {
    pub figure: Figure,
    pub epsilon: f64,
    pub epsilon_ratio: f64,
    #[serde(with = "num")]
    pub epsilon_c: f64,
    pub runs: usize,
    pub seed: u64,
    pub horizon: f64,
    pub divergent: usize,
    pub failed: usize,
    /// Final states of the non-divergent runs grouped in `(δ₁, δ₂, Δ)`.
    pub clusters: Vec<Cluster>,
    pub regime: Regime,
    pub t_total: Option<f64>,
    /// Fast-error bound for a zero initial fast error.
    pub m_xtilde_bound: Option<f64>,
    /// Largest `|(δ₁, δ₂)|` at or after `t_total` over all runs.
    pub max_post_transient_delta: Option<f64>,
    pub within_bound: Option<bool>,
}

/// Raw building model whose barycentric image is the case-study system.
pub fn reproduce_model(eps: f64) -> Result<CompiledSystem, ReduceError> {
    let spec = BuildingModel::reference_half_gap(eps)
        .raw()
        .map_err(|e| ReduceError::Invalid(e.to_string()))?;
    CompiledSystem::new(&spec).map_err(|e| ReduceError::Invalid(e.to_string()))
}

/// Run one figure's ensemble in raw room temperatures with initial states
/// uniform in `[-5, 5]⁴`.
pub fn reproduce(figure: Figure, cfg: &ReproduceConfig) -> Result<(FigureSummary, EnsembleResult), ReduceError> {
    cfg.constants.validate()?;
    let eps_c = epsilon_critical(&cfg.constants);
    let eps = figure.ratio() * eps_c;
    let sys = reproduce_model(eps)?;
    let ic_box = vec![Interval::new(-IC_HALF_WIDTH, IC_HALF_WIDTH); 4];
    let integrator = IntegratorConfig {
        horizon: cfg.horizon,
        ..cfg.integrator.clone()
    };
    let mut ens = run_ensemble(&sys, &ic_box, cfg.runs, cfg.seed, &integrator);
    ens.clusters = ens.clusters_by(|x| BuildingModel::to_barycentric(x).to_vec());

    let failed = ens.runs.iter().filter(|r| r.trajectory.is_none()).count();
    let regime = if ens.clusters.len() > 1 {
        Regime::MultiEquilibria
    } else if ens.divergent > 0 {
        Regime::Divergent
    } else {
        Regime::Converged
    };
    let c = &cfg.constants;
    let t_total = transient_time(c.beta_f, c.beta_g, eps).ok().map(|t| t.t_total);
    let bound = lemma3_bounds(c, eps, 0.0).ok().map(|b| b.m_xtilde);
    let post = t_total.map(|t0| {
        ens.runs
            .iter()
            .filter_map(|r| r.trajectory.as_ref())
            .flat_map(|tr| tr.times.iter().zip(&tr.states))
            .filter(|(t, _)| **t >= t0)
            .map(|(_, s)| {
                let b = BuildingModel::to_barycentric(s);
                linalg::norm(&b[..2])
            })
            .fold(0.0, f64::max)
    });
    let within = match (post, bound) {
        (Some(p), Some(b)) if ens.divergent == 0 && failed == 0 => Some(p <= b),
        _ => None,
    };
    let summary = FigureSummary {
        figure,
        epsilon: eps,
        epsilon_ratio: figure.ratio(),
        epsilon_c: eps_c,
        runs: cfg.runs,
        seed: cfg.seed,
        horizon: cfg.horizon,
        divergent: ens.divergent,
        failed,
        clusters: ens.clusters.clone(),
        regime,
        t_total,
        m_xtilde_bound: bound,
        max_post_transient_delta: post,
        within_bound: within,
    };
    Ok((summary, ens))
}

/// Merge radius used for the final-state clusters.
pub const CLUSTER_RADIUS: f64 = MERGE_RADIUS;
