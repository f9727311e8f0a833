use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate, IntegratorConfig, Trajectory};
use crate::dynsys::VectorField;
use crate::expr::Interval;
use crate::linalg::dist;

/// Final states closer than this are counted as one equilibrium.
pub const MERGE_RADIUS: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub center: Vec<f64>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub index: usize,
    pub initial: Vec<f64>,
    pub trajectory: Option<Trajectory>,
    /// Integrator failure, if any.
    pub error: Option<String>,
}

impl EnsembleRun {
    pub fn diverged(&self) -> bool {
        self.trajectory.as_ref().is_none_or(Trajectory::diverged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub seed: u64,
    pub ic_box: Vec<Interval>,
    pub runs: Vec<EnsembleRun>,
    /// Clusters of final states of the runs that did not diverge.
    pub clusters: Vec<Cluster>,
    pub divergent: usize,
}

impl EnsembleResult {
    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    /// Recluster final states after mapping them through `project`.
    pub fn clusters_by(&self, project: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Cluster> {
        let (idx, pts): (Vec<usize>, Vec<Vec<f64>>) = self
            .runs
            .iter()
            .filter(|r| !r.diverged())
            .map(|r| (r.index, project(r.trajectory.as_ref().unwrap().final_state())))
            .unzip();
        let mut clusters = cluster_points(&pts, MERGE_RADIUS);
        for c in &mut clusters {
            for m in &mut c.members {
                *m = idx[*m];
            }
        }
        clusters
    }
}

/// Uniform sample from `ic_box` for run `index`. Each run draws from its own
/// stream, so the sample does not depend on how many runs are requested.
pub fn sample_box(ic_box: &[Interval], seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    ic_box
        .iter()
        .map(|iv| iv.lo + (iv.hi - iv.lo) * rng.random::<f64>())
        .collect()
}

/// Worker count from `NDS_THREADS`, if set to a positive integer.
pub fn ensemble_thread_count() -> Option<usize> {
    std::env::var("NDS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub(crate) fn in_pool<R: Send>(job: impl FnOnce() -> R + Send) -> R {
    match ensemble_thread_count() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(job),
            Err(_) => job(),
        },
        None => job(),
    }
}

/// Greedy clustering: each point joins the first cluster whose founding
/// point is within `radius`, else founds a new one.
pub fn cluster_points(points: &[Vec<f64>], radius: f64) -> Vec<Cluster> {
    let mut founders: Vec<usize> = Vec::new();
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        match founders.iter().position(|&f| dist(&points[f], p) <= radius) {
            Some(c) => clusters[c].members.push(i),
            None => {
                founders.push(i);
                clusters.push(Cluster {
                    center: Vec::new(),
                    members: vec![i],
                });
            }
        }
    }
    for c in &mut clusters {
        let d = points[c.members[0]].len();
        let mut center = vec![0.0; d];
        for &m in &c.members {
            for (acc, v) in center.iter_mut().zip(&points[m]) {
                *acc += v;
            }
        }
        let k = c.members.len() as f64;
        c.center = center.into_iter().map(|v| v / k).collect();
    }
    clusters
}

pub fn run_ensemble<F: VectorField + ?Sized>(
    field: &F,
    ic_box: &[Interval],
    n_runs: usize,
    seed: u64,
    config: &IntegratorConfig,
) -> EnsembleResult {
    let runs: Vec<EnsembleRun> = in_pool(|| {
        (0..n_runs)
            .into_par_iter()
            .map(|index| {
                let initial = sample_box(ic_box, seed, index);
                match integrate(field, &initial, config) {
                    Ok(traj) => EnsembleRun {
                        index,
                        initial,
                        trajectory: Some(traj),
                        error: None,
                    },
                    Err(e) => EnsembleRun {
                        index,
                        initial,
                        trajectory: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let divergent = runs.iter().filter(|r| r.diverged()).count();
    let mut result = EnsembleResult {
        seed,
        ic_box: ic_box.to_vec(),
        runs,
        clusters: Vec::new(),
        divergent,
    };
    result.clusters = result.clusters_by(|x| x.to_vec());
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::FnField;

    #[test]
    fn seeded_samples_are_stable() {
        let b = vec![Interval::new(-5.0, 5.0); 3];
        assert_eq!(sample_box(&b, 7, 4), sample_box(&b, 7, 4));
        assert_ne!(sample_box(&b, 7, 4), sample_box(&b, 7, 5));
        assert_ne!(sample_box(&b, 7, 4), sample_box(&b, 8, 4));
        assert!(sample_box(&b, 1, 0).iter().all(|v| (-5.0..5.0).contains(v)));
    }

    #[test]
    fn greedy_clusters() {
        let pts = vec![vec![0.0], vec![0.005], vec![1.0], vec![-0.004], vec![1.002]];
        let c = cluster_points(&pts, MERGE_RADIUS);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members, vec![0, 1, 3]);
        assert_eq!(c[1].members, vec![2, 4]);
        assert!((c[1].center[0] - 1.001).abs() < 1e-12);
    }

    #[test]
    fn contracting_system_has_one_cluster() {
        let field = FnField::new(2, |x, _t, out| {
            out[0] = -x[0];
            out[1] = -2.0 * x[1];
        });
        let b = vec![Interval::new(-5.0, 5.0); 2];
        let cfg = IntegratorConfig::with_horizon(30.0);
        let res = run_ensemble(&field, &b, 8, 42, &cfg);
        assert_eq!(res.divergent, 0);
        assert_eq!(res.clusters.len(), 1);
        assert_eq!(res.clusters[0].members.len(), 8);
        let again = run_ensemble(&field, &b, 8, 42, &cfg);
        assert_eq!(res, again);
    }
}
