//! Boundary-flux observation and recovery of the transfer coefficient.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::net::{FieldSample, Surrogate};
use crate::oracle::fd_solve_rect;
use crate::physics::dot;
use crate::problem::{Circle, Coords, End, Geometry, Locator, ProblemSpec, Side};
use crate::train::{train_inverse, ModelSpec, TrainConfig, TrainReport};

/// Total flux observed over a boundary segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub locator: Locator,
    pub q_obs: f64,
    pub quadrature_n: usize,
}

impl Observation {
    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if self.quadrature_n < 8 {
            return Err(DppError::config(
                "observation quadrature needs at least 8 nodes",
            ));
        }
        if !self.q_obs.is_finite() {
            return Err(DppError::config("observed flux must be finite"));
        }
        FluxRule::new(geometry, &self.locator, self.quadrature_n).map(|_| ())
    }
}

/// Composite midpoint rule along a boundary subset.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxRule {
    pub nodes: Vec<Coords>,
    pub normals: Vec<Coords>,
    pub weights: Vec<f64>,
}

impl FluxRule {
    pub fn new(geometry: &Geometry, loc: &Locator, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(DppError::config("flux quadrature needs at least one node"));
        }
        let mut rule = FluxRule {
            nodes: Vec::new(),
            normals: Vec::new(),
            weights: Vec::new(),
        };
        match (*geometry, loc) {
            (Geometry::Interval { x_min, x_max }, Locator::End { end }) => {
                let (x, nrm) = if *end == End::Min {
                    (x_min, -1.0)
                } else {
                    (x_max, 1.0)
                };
                rule.nodes.push(vec![x]);
                rule.normals.push(vec![nrm]);
                rule.weights.push(1.0);
            }
            (Geometry::Rectangle { lx, ly }, Locator::Side { side, from, to }) => {
                let len = if matches!(side, Side::Left | Side::Right) {
                    ly
                } else {
                    lx
                };
                let (lo, hi) = (from.unwrap_or(0.0), to.unwrap_or(len));
                if !(hi > lo) || lo < 0.0 || hi > len {
                    return Err(DppError::config(format!(
                        "degenerate observation segment [{lo}, {hi}]"
                    )));
                }
                let h = (hi - lo) / n as f64;
                for k in 0..n {
                    let s = lo + (k as f64 + 0.5) * h;
                    let (x, nrm) = match side {
                        Side::Left => (vec![0.0, s], vec![-1.0, 0.0]),
                        Side::Right => (vec![lx, s], vec![1.0, 0.0]),
                        Side::Bottom => (vec![s, 0.0], vec![0.0, -1.0]),
                        Side::Top => (vec![s, ly], vec![0.0, 1.0]),
                    };
                    rule.nodes.push(x);
                    rule.normals.push(nrm);
                    rule.weights.push(h);
                }
            }
            (Geometry::Annulus { r_inner, r_outer }, Locator::Circle { circle }) => {
                let (r, sign) = if *circle == Circle::Inner {
                    (r_inner, -1.0)
                } else {
                    (r_outer, 1.0)
                };
                let h = 2.0 * PI / n as f64;
                for k in 0..n {
                    let t = (k as f64 + 0.5) * h;
                    rule.nodes.push(vec![r * t.cos(), r * t.sin()]);
                    rule.normals.push(vec![sign * t.cos(), sign * t.sin()]);
                    rule.weights.push(r * h);
                }
            }
            _ => {
                return Err(DppError::config(
                    "observation locator does not match the geometry",
                ))
            }
        }
        Ok(rule)
    }

    /// Flip the orientation of every normal.
    pub fn reversed(&self) -> Self {
        FluxRule {
            normals: self
                .normals
                .iter()
                .map(|n| n.iter().map(|v| -v).collect())
                .collect(),
            ..self.clone()
        }
    }

    /// `Σ w (u1 + u2)·n` over samples taken at `self.nodes`.
    pub fn integrate(&self, samples: &[FieldSample]) -> f64 {
        samples
            .iter()
            .zip(&self.normals)
            .zip(&self.weights)
            .map(|((fs, nrm), w)| w * (dot(&fs.u1, nrm) + dot(&fs.u2, nrm)))
            .sum()
    }

    /// Flux of an arbitrary total-velocity field.
    pub fn integrate_fn(&self, u_tot: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
        self.nodes
            .iter()
            .zip(&self.normals)
            .zip(&self.weights)
            .map(|((x, nrm), w)| w * dot(&u_tot(x), nrm))
            .sum()
    }
}

/// Model flux `∫ (u1 + u2)·n` over `loc` with an `n`-node midpoint rule.
pub fn model_flux(
    sur: &Surrogate,
    geometry: &Geometry,
    loc: &Locator,
    n: usize,
    beta: Option<f64>,
) -> Result<f64> {
    let rule = FluxRule::new(geometry, loc, n)?;
    Ok(rule.integrate(&sur.eval_batch(&rule.nodes, beta, false)?))
}

/// One entry of a forward β → Q sweep. A failed forward solve keeps its
/// message and leaves `q` empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub beta: f64,
    pub q: Option<f64>,
    pub solver_tag: String,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "beta,Q,solver_tag";

/// Forward sweep with a caller-supplied solver returning `(Q, tag)`.
pub fn beta_sweep_with<F>(
    template: &ProblemSpec,
    betas: &[f64],
    mut solve: F,
) -> Result<Vec<SweepEntry>>
where
    F: FnMut(&ProblemSpec) -> Result<(f64, String)>,
{
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        return Err(DppError::config(format!(
            "sweep values must be positive, got {b}"
        )));
    }
    Ok(betas
        .iter()
        .map(|&beta| {
            let mut p = template.clone();
            p.material.beta = beta;
            match solve(&p) {
                Ok((q, tag)) => SweepEntry {
                    beta,
                    q: Some(q),
                    solver_tag: tag,
                    error: None,
                },
                Err(e) => SweepEntry {
                    beta,
                    q: None,
                    solver_tag: "failed".into(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// Sweep with the rectangle grid oracle, measuring flux through `loc`.
pub fn beta_sweep(
    template: &ProblemSpec,
    betas: &[f64],
    loc: &Locator,
    nx: usize,
    ny: usize,
) -> Result<Vec<SweepEntry>> {
    beta_sweep_with(template, betas, |p| {
        let sol = fd_solve_rect(p, nx, ny)?;
        Ok((sol.flux(loc), format!("fv2d_{nx}x{ny}")))
    })
}

/// Strictly monotone (either direction) over the successful entries.
pub fn is_monotone(entries: &[SweepEntry]) -> bool {
    let mut pts: Vec<(f64, f64)> = entries
        .iter()
        .filter_map(|e| e.q.map(|q| (e.beta, q)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let steps: Vec<f64> = pts
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| w[1].1 - w[0].1)
        .collect();
    steps.iter().all(|d| *d > 0.0) || steps.iter().all(|d| *d < 0.0)
}

pub fn sweep_csv(entries: &[SweepEntry]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for e in entries {
        let q = e.q.map_or_else(|| "nan".to_string(), |q| q.to_string());
        out.push_str(&format!("{},{q},{}\n", e.beta, e.solver_tag));
    }
    out
}

pub fn recover_beta(
    problem: &ProblemSpec,
    obs: &Observation,
    model: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(f64, TrainReport)> {
    let report = train_inverse(problem, obs, model, cfg)?;
    if let Some(err) = report.divergence_error() {
        return Err(err);
    }
    let beta = report
        .beta_hat
        .ok_or_else(|| DppError::Oracle("inverse run produced no estimate".into()))?;
    Ok((beta, report))
}
