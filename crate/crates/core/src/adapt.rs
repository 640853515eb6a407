//! Learning-speed task weighting and residual-based refinement of the
//! collocation cloud.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::loss::{residual_batch, Task};
use crate::net::Surrogate;
use crate::physics::local_materials;
use crate::problem::{sample_interior, BoundaryPoint, Coords, ProblemSpec};
use crate::rng::stream_at;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightHyper {
    pub alpha: f64,
    pub window: usize,
    pub rho: f64,
    #[serde(default = "tiny")]
    pub epsilon: f64,
    #[serde(default = "tiny")]
    pub delta: f64,
}

fn tiny() -> f64 {
    1e-12
}

impl Default for WeightHyper {
    fn default() -> Self {
        WeightHyper {
            alpha: 1.0,
            window: 50,
            rho: 2.0,
            epsilon: 1e-12,
            delta: 1e-12,
        }
    }
}

impl WeightHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.window == 0 || !(self.rho > 1.0) {
            return Err(DppError::config(
                "weighting needs alpha > 0, window >= 1, rho > 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TaskTrack {
    prev: Option<f64>,
    buffer: VecDeque<f64>,
    lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub hyper: WeightHyper,
    tasks: BTreeMap<Task, TaskTrack>,
}

impl WeightState {
    pub fn new(hyper: WeightHyper, tasks: &[Task]) -> Self {
        let tasks = tasks
            .iter()
            .map(|&t| {
                (
                    t,
                    TaskTrack {
                        prev: None,
                        buffer: VecDeque::with_capacity(hyper.window),
                        lambda: 1.0,
                    },
                )
            })
            .collect();
        WeightState { hyper, tasks }
    }

    pub fn lambdas(&self) -> BTreeMap<Task, f64> {
        self.tasks.iter().map(|(t, s)| (*t, s.lambda)).collect()
    }

    pub fn lambda(&self, task: Task) -> Option<f64> {
        self.tasks.get(&task).map(|s| s.lambda)
    }

    pub fn buffer_len(&self, task: Task) -> usize {
        self.tasks.get(&task).map_or(0, |s| s.buffer.len())
    }

    /// Push one step of loss values; returns whether the weights were
    /// rebalanced.
    pub fn record_and_rebalance(&mut self, losses: &BTreeMap<Task, f64>) -> Result<bool> {
        if let Some(t) = losses.keys().find(|t| !self.tasks.contains_key(t)) {
            return Err(DppError::config(format!("unknown task '{}'", t.name())));
        }
        if let Some(t) = self.tasks.keys().find(|t| !losses.contains_key(t)) {
            return Err(DppError::config(format!(
                "missing loss for task '{}'",
                t.name()
            )));
        }
        let (w, delta) = (self.hyper.window, self.hyper.delta);
        for (t, s) in self.tasks.iter_mut() {
            let cur = losses[t];
            if let Some(prev) = s.prev {
                let improvement = ((prev - cur) / (prev + delta)).max(0.0);
                if s.buffer.len() == w {
                    s.buffer.pop_front();
                }
                s.buffer.push_back(improvement);
            }
            s.prev = Some(cur);
        }
        if self.tasks.values().any(|s| s.buffer.len() < w) {
            return Ok(false);
        }
        let speeds: Vec<(Task, f64)> = self
            .tasks
            .iter()
            .map(|(t, s)| (*t, s.buffer.iter().sum::<f64>() / w as f64))
            .collect();
        let (mut fastest, mut s_max) = (speeds[0].0, speeds[0].1);
        let mut s_min = speeds[0].1;
        for &(t, v) in &speeds[1..] {
            if v > s_max {
                fastest = t;
                s_max = v;
            }
            s_min = s_min.min(v);
        }
        if s_max == s_min || s_max / s_min.max(self.hyper.epsilon) <= self.hyper.rho {
            return Ok(false);
        }
        for (t, v) in speeds {
            let lam = if t == fastest {
                1.0
            } else {
                1.0 + self.hyper.alpha * ((s_max - v) / (s_max - s_min))
            };
            self.tasks.get_mut(&t).expect("registered task").lambda = lam;
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationCloud {
    pub interior: Vec<Coords>,
    pub boundary: Vec<BoundaryPoint>,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RarReport {
    pub round: usize,
    pub candidates: usize,
    pub admitted: usize,
    pub cloud_size: usize,
    pub score_min: f64,
    pub score_max: f64,
}

/// Indices of the `k` largest scores, ties to the earlier index, returned in
/// increasing index order. NaN scores rank last.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

pub fn candidate_count(kappa: usize, gamma: f64) -> usize {
    (gamma * kappa as f64).ceil() as usize
}

/// Round-end enrichment with an arbitrary scoring function.
pub fn enrich_with(
    cloud: &CollocationCloud,
    problem: &ProblemSpec,
    kappa: usize,
    gamma: f64,
    seed: u64,
    round: usize,
    score: impl Fn(&[Coords]) -> Result<Vec<f64>>,
) -> Result<(CollocationCloud, RarReport)> {
    if kappa == 0 || !(gamma >= 1.0) {
        return Err(DppError::config(
            "enrichment needs kappa >= 1 and gamma >= 1",
        ));
    }
    let m = candidate_count(kappa, gamma);
    let candidates = sample_interior(&problem.geometry, m, seed);
    let scores = score(&candidates)?;
    let chosen = select_top_k(&scores, kappa);
    let admitted: Vec<f64> = chosen.iter().map(|&i| scores[i]).collect();
    let mut interior = cloud.interior.clone();
    interior.extend(chosen.iter().map(|&i| candidates[i].clone()));
    if interior.len() > cloud.capacity {
        let mut order: Vec<usize> = (0..interior.len()).collect();
        order.shuffle(&mut stream_at(seed, 1, 0));
        interior = order[..cloud.capacity]
            .iter()
            .map(|&i| interior[i].clone())
            .collect();
    }
    let report = RarReport {
        round,
        candidates: m,
        admitted: chosen.len(),
        cloud_size: interior.len(),
        score_min: admitted.iter().copied().fold(f64::INFINITY, f64::min),
        score_max: admitted.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok((
        CollocationCloud {
            interior,
            boundary: cloud.boundary.clone(),
            capacity: cloud.capacity,
        },
        report,
    ))
}

/// Norm of the stacked residual vector at each point.
pub fn residual_indicator(
    sur: &Surrogate,
    problem: &ProblemSpec,
    points: &[Coords],
    beta: Option<f64>,
) -> Result<Vec<f64>> {
    let mats = local_materials(&problem.material, points)?;
    Ok(residual_batch(sur, points, &mats, beta)?
        .iter()
        .map(|r| r.norm())
        .collect())
}

pub fn enrich(
    cloud: &CollocationCloud,
    sur: &Surrogate,
    problem: &ProblemSpec,
    kappa: usize,
    gamma: f64,
    seed: u64,
    round: usize,
    beta: Option<f64>,
) -> Result<(CollocationCloud, RarReport)> {
    enrich_with(cloud, problem, kappa, gamma, seed, round, |pts| {
        residual_indicator(sur, problem, pts, beta)
    })
}
