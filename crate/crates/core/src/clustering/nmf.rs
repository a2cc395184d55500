use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClusterModel, CoherenceMatrix};
use crate::error::{Error, Result};
use crate::rng::seeded;

const EPS: f64 = 1e-12;
/// Halvings of the update exponent tried before a step is abandoned.
const MAX_BACKTRACK: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfOptions {
    pub max_iter: usize,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            restarts: 10,
            seed: 0,
        }
    }
}

/// One restart: final memberships and the objective before the first update
/// and after each accepted one.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfRun {
    pub b: Array2<f64>,
    pub objective_trace: Vec<f64>,
}

impl NmfRun {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

/// `J(B) = ||(1 - I) ⊙ (C - B Bᵀ)||²_F`.
pub fn objective(c: &CoherenceMatrix, b: &Array2<f64>) -> f64 {
    let bbt = b.dot(&b.t());
    let target = c.matrix();
    let mut j = 0.0;
    for ((r, s), &v) in target.indexed_iter() {
        if r != s {
            let d = v - bbt[[r, s]];
            j += d * d;
        }
    }
    j
}

fn off_diagonal(mut m: Array2<f64>) -> Array2<f64> {
    m.diag_mut().fill(0.0);
    m
}

fn run_once(c: &CoherenceMatrix, q: usize, opts: &NmfOptions, restart: usize) -> NmfRun {
    let m = c.size();
    let mut rng = seeded(opts.seed, restart as u64);
    // Uniform on (0, 1].
    let mut b = Array2::from_shape_fn((m, q), |_| 1.0 - rng.gen::<f64>());
    let a = off_diagonal(c.matrix().clone());

    let mut j = objective(c, &b);
    let mut trace = vec![j];
    for _ in 0..opts.max_iter {
        if j == 0.0 {
            break;
        }
        let num = a.dot(&b);
        let den = off_diagonal(b.dot(&b.t())).dot(&b);
        let mut ratio = Array2::zeros((m, q));
        Zip::from(&mut ratio)
            .and(&num)
            .and(&den)
            .for_each(|r, &n, &d| *r = n / (d + EPS));

        // Full multiplicative step first; halve the exponent until the
        // objective does not rise.
        let mut gamma = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut candidate = b.clone();
            Zip::from(&mut candidate)
                .and(&ratio)
                .for_each(|v, &r| *v *= r.powf(gamma));
            let cj = objective(c, &candidate);
            if cj <= j {
                accepted = Some((candidate, cj));
                break;
            }
            gamma *= 0.5;
        }
        let Some((next, next_j)) = accepted else {
            break;
        };
        let change = (j - next_j) / j.max(f64::MIN_POSITIVE);
        b = next;
        j = next_j;
        trace.push(j);
        if change < opts.tol {
            break;
        }
    }
    NmfRun {
        b,
        objective_trace: trace,
    }
}

fn check(c: &CoherenceMatrix, q: usize, opts: &NmfOptions) -> Result<()> {
    if q < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 clusters, got {q}")));
    }
    if q > c.size() {
        return Err(Error::InvalidConfig(format!(
            "{q} clusters for {} microphones",
            c.size()
        )));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    Ok(())
}

/// Every restart of the masked symmetric factorisation, in restart order.
pub fn nmf_restarts(c: &CoherenceMatrix, q: usize, opts: &NmfOptions) -> Result<Vec<NmfRun>> {
    check(c, q, opts)?;
    Ok((0..opts.restarts).map(|r| run_once(c, q, opts, r)).collect())
}

/// Best-of-restarts factorisation `C ≈ B Bᵀ` off the diagonal, turned into
/// hard clusters. Ties in the final objective go to the earliest restart.
pub fn nmf_cluster(c: &CoherenceMatrix, q: usize, opts: &NmfOptions) -> Result<ClusterModel> {
    let runs = nmf_restarts(c, q, opts)?;
    let mut best = &runs[0];
    for run in &runs[1..] {
        if run.final_objective() < best.final_objective() {
            best = run;
        }
    }
    ClusterModel::from_memberships(best.b.clone(), best.objective_trace.clone())
}
