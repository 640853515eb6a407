//! Discretised PDE, boundary and observation losses with exact gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::invert::FluxRule;
use crate::net::{FieldGrad, FieldSample, Surrogate};
use crate::physics::{dot, residuals, LocalMaterial, ResidualSample};
use crate::problem::{BcKind, BoundaryPoint, Coords, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pde,
    Bc,
    Obs,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Pde => "pde",
            Task::Bc => "bc",
            Task::Obs => "obs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pde: f64,
    pub bc: f64,
    pub obs: Option<f64>,
    pub total: f64,
    pub weights_used: BTreeMap<Task, f64>,
}

impl LossBreakdown {
    pub fn new(pde: f64, bc: f64, obs: Option<f64>, weights: &BTreeMap<Task, f64>) -> Self {
        let w = |t| weights.get(&t).copied().unwrap_or(1.0);
        let mut used = BTreeMap::from([(Task::Pde, w(Task::Pde)), (Task::Bc, w(Task::Bc))]);
        let mut total = used[&Task::Pde] * pde + used[&Task::Bc] * bc;
        if let Some(o) = obs {
            used.insert(Task::Obs, w(Task::Obs));
            total += used[&Task::Obs] * o;
        }
        LossBreakdown {
            pde,
            bc,
            obs,
            total,
            weights_used: used,
        }
    }

    pub fn get(&self, task: Task) -> Option<f64> {
        match task {
            Task::Pde => Some(self.pde),
            Task::Bc => Some(self.bc),
            Task::Obs => self.obs,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.pde.is_finite()
            && self.bc.is_finite()
            && self.obs.is_none_or(f64::is_finite)
    }
}

pub fn pde_loss(res: &[ResidualSample]) -> Result<f64> {
    if res.is_empty() {
        return Err(DppError::config(
            "PDE loss needs at least one interior point",
        ));
    }
    Ok(res.iter().map(ResidualSample::norm_sq).sum::<f64>() / res.len() as f64)
}

/// Mismatch of network `i` (0 or 1) against its segment at `bp`.
fn bc_mismatch(
    problem: &ProblemSpec,
    bp: &BoundaryPoint,
    fs: &FieldSample,
    i: usize,
) -> Result<(BcKind, f64)> {
    let seg = problem
        .segments
        .get(bp.segments[i])
        .filter(|s| s.network as usize == i + 1)
        .ok_or_else(|| {
            DppError::config(format!(
                "boundary point {:?} has no segment for network {}",
                bp.x,
                i + 1
            ))
        })?;
    let (p, u) = if i == 0 {
        (fs.p1, &fs.u1)
    } else {
        (fs.p2, &fs.u2)
    };
    let pred = match seg.kind {
        BcKind::Pressure => p,
        BcKind::NormalVelocity => dot(u, &bp.normal),
    };
    Ok((seg.kind, pred - seg.value))
}

pub fn bc_loss(
    problem: &ProblemSpec,
    points: &[BoundaryPoint],
    preds: &[FieldSample],
) -> Result<f64> {
    if points.is_empty() || points.len() != preds.len() {
        return Err(DppError::config(
            "boundary loss needs one prediction per boundary point",
        ));
    }
    let mut sum = 0.0;
    for (bp, fs) in points.iter().zip(preds) {
        for i in 0..2 {
            let (_, e) = bc_mismatch(problem, bp, fs, i)?;
            sum += e * e;
        }
    }
    Ok(sum / points.len() as f64)
}

pub fn obs_loss(q: f64, q_obs: f64) -> f64 {
    (q - q_obs) * (q - q_obs)
}

/// Flux observation: quadrature rule over the measurement segment and the
/// observed value.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsTarget {
    pub rule: FluxRule,
    pub q_obs: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    /// Parameter gradient in flatten order, followed by `∂L/∂β` when β is
    /// trainable. Empty unless requested.
    pub grad: Vec<f64>,
}

/// Everything needed to evaluate the weighted total loss except the
/// interior cloud (which changes per mini-batch).
pub struct Objective<'a> {
    pub problem: &'a ProblemSpec,
    pub boundary: &'a [BoundaryPoint],
    pub observation: Option<&'a ObsTarget>,
}

impl Objective<'_> {
    /// Weighted loss and, optionally, its gradient. `beta` is the trainable
    /// transfer coefficient for inversion (then also a network input).
    pub fn evaluate(
        &self,
        sur: &Surrogate,
        interior: &[Coords],
        mats: &[LocalMaterial],
        beta: Option<f64>,
        weights: &BTreeMap<Task, f64>,
        want_grad: bool,
    ) -> Result<Evaluation> {
        if interior.is_empty() {
            return Err(DppError::config(
                "PDE loss needs at least one interior point",
            ));
        }
        if self.boundary.is_empty() {
            return Err(DppError::config(
                "boundary loss needs at least one boundary point",
            ));
        }
        let nd = sur.nd();
        let w = |t| weights.get(&t).copied().unwrap_or(1.0);
        let n_params = sur.net.num_params();
        let mut grad = if want_grad {
            vec![0.0; n_params + usize::from(beta.is_some())]
        } else {
            Vec::new()
        };
        let mut g_beta = 0.0;
        let want_input = want_grad && beta.is_some();
        let beta_row = sur.encoder.dim_out();

        // interior
        let trace = sur.trace(interior, beta, true)?;
        let samples = sur.samples(&trace, interior)?;
        let n = interior.len() as f64;
        let mut pde_sum = 0.0;
        let mut grads: Vec<FieldGrad> =
            Vec::with_capacity(if want_grad { samples.len() } else { 0 });
        for (fs, m) in samples.iter().zip(mats) {
            let r = residuals(fs, m, beta);
            pde_sum += r.norm_sq();
            if want_grad {
                let c = 2.0 * w(Task::Pde) / n;
                let b = beta.unwrap_or(m.beta);
                let diff = r.r3 - r.r4;
                let mut g = FieldSample::zeros(nd);
                for j in 0..nd {
                    g.u1[j] = c * m.mu / m.k1 * r.r1[j];
                    g.u2[j] = c * m.mu / m.k2 * r.r2[j];
                    g.grad_p1[j] = c * r.r1[j];
                    g.grad_p2[j] = c * r.r2[j];
                }
                g.div_u1 = c * r.r3;
                g.div_u2 = c * r.r4;
                g.p1 = c * b / m.mu * diff;
                g.p2 = -g.p1;
                g_beta += c / m.mu * (fs.p1 - fs.p2) * diff;
                grads.push(g);
            }
        }
        let pde = pde_sum / n;
        if want_grad {
            let gy = sur.output_grad(&trace, interior, &grads)?;
            let gin = sur
                .net
                .backward(&trace, &gy, &mut grad[..n_params], want_input);
            if let Some(gin) = gin {
                g_beta += gin.row(beta_row).iter().take(trace.n).sum::<f64>();
            }
        }

        // boundary
        let pts: Vec<Coords> = self.boundary.iter().map(|bp| bp.x.clone()).collect();
        let trace = sur.trace(&pts, beta, false)?;
        let samples = sur.samples(&trace, &pts)?;
        let nb = pts.len() as f64;
        let mut bc_sum = 0.0;
        let mut grads = Vec::with_capacity(if want_grad { samples.len() } else { 0 });
        for (bp, fs) in self.boundary.iter().zip(&samples) {
            let mut g = FieldSample::zeros(nd);
            for i in 0..2 {
                let (kind, e) = bc_mismatch(self.problem, bp, fs, i)?;
                bc_sum += e * e;
                let c = 2.0 * w(Task::Bc) / nb * e;
                match (kind, i) {
                    (BcKind::Pressure, 0) => g.p1 = c,
                    (BcKind::Pressure, _) => g.p2 = c,
                    (BcKind::NormalVelocity, 0) => g.u1 = bp.normal.iter().map(|v| c * v).collect(),
                    (BcKind::NormalVelocity, _) => g.u2 = bp.normal.iter().map(|v| c * v).collect(),
                }
            }
            grads.push(g);
        }
        let bc = bc_sum / nb;
        if want_grad {
            let gy = sur.output_grad(&trace, &pts, &grads)?;
            let gin = sur
                .net
                .backward(&trace, &gy, &mut grad[..n_params], want_input);
            if let Some(gin) = gin {
                g_beta += gin.row(beta_row).iter().take(trace.n).sum::<f64>();
            }
        }

        // observation
        let mut obs = None;
        if let Some(target) = self.observation {
            let trace = sur.trace(&target.rule.nodes, beta, false)?;
            let samples = sur.samples(&trace, &target.rule.nodes)?;
            let q = target.rule.integrate(&samples);
            obs = Some(obs_loss(q, target.q_obs));
            if want_grad {
                let dq = 2.0 * w(Task::Obs) * (q - target.q_obs);
                let grads: Vec<FieldGrad> = target
                    .rule
                    .normals
                    .iter()
                    .zip(&target.rule.weights)
                    .map(|(nrm, h)| {
                        let v: Vec<f64> = nrm.iter().map(|c| dq * h * c).collect();
                        FieldSample {
                            u1: v.clone(),
                            u2: v,
                            ..FieldSample::zeros(nd)
                        }
                    })
                    .collect();
                let gy = sur.output_grad(&trace, &target.rule.nodes, &grads)?;
                let gin = sur
                    .net
                    .backward(&trace, &gy, &mut grad[..n_params], want_input);
                if let Some(gin) = gin {
                    g_beta += gin.row(beta_row).iter().take(trace.n).sum::<f64>();
                }
            }
        }

        if want_grad && beta.is_some() {
            grad[n_params] = g_beta;
        }
        Ok(Evaluation {
            breakdown: LossBreakdown::new(pde, bc, obs, weights),
            grad,
        })
    }
}

/// Residuals of the surrogate at many interior points.
pub fn residual_batch(
    sur: &Surrogate,
    points: &[Coords],
    mats: &[LocalMaterial],
    beta: Option<f64>,
) -> Result<Vec<ResidualSample>> {
    let samples = sur.eval_batch(points, beta, true)?;
    Ok(samples
        .iter()
        .zip(mats)
        .map(|(fs, m)| residuals(fs, m, beta))
        .collect())
}

pub fn unit_weights() -> BTreeMap<Task, f64> {
    BTreeMap::from([(Task::Pde, 1.0), (Task::Bc, 1.0), (Task::Obs, 1.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::problem::sample_boundary;

    #[test]
    fn single_point_pde_loss() {
        let r = ResidualSample {
            r1: vec![0.0],
            r2: vec![0.0],
            r3: 9.0,
            r4: 0.0,
        };
        assert_eq!(pde_loss(&[r.clone()]).unwrap(), 81.0);
        assert_eq!(pde_loss(&[r.clone(), r]).unwrap(), 81.0);
        assert!(pde_loss(&[]).is_err());
    }

    #[test]
    fn boundary_pressure_mismatch() {
        let p = presets::pressure1d();
        let bps = sample_boundary(&p, 1, 0).unwrap();
        let exact: Vec<FieldSample> = bps
            .iter()
            .map(|_| FieldSample {
                p1: 10.0,
                p2: 1.0,
                ..FieldSample::zeros(1)
            })
            .collect();
        assert_eq!(bc_loss(&p, &bps, &exact).unwrap(), 0.0);
        let left = bps.iter().position(|b| b.x[0] == 0.0).unwrap();
        let mut preds = exact.clone();
        preds[left].p1 = 0.0;
        assert_eq!(bc_loss(&p, &bps, &preds).unwrap() * bps.len() as f64, 100.0);
    }

    #[test]
    fn tangential_velocity_on_no_flux_wall() {
        let p = presets::footing2d();
        let bps: Vec<_> = sample_boundary(&p, 4, 1)
            .unwrap()
            .into_iter()
            .filter(|b| b.x[1] == 0.0)
            .collect();
        let preds: Vec<_> = bps
            .iter()
            .map(|_| FieldSample {
                u1: vec![3.0, 0.0],
                u2: vec![-1.0, 0.0],
                ..FieldSample::zeros(2)
            })
            .collect();
        assert_eq!(bc_loss(&p, &bps, &preds).unwrap(), 0.0);
    }

    #[test]
    fn breakdown_total_matches_weights() {
        let w = BTreeMap::from([(Task::Pde, 2.0), (Task::Bc, 1.5), (Task::Obs, 1.0)]);
        let b = LossBreakdown::new(0.5, 2.0, None, &w);
        assert_eq!(b.total, 2.0 * 0.5 + 1.5 * 2.0);
        assert!(!b.weights_used.contains_key(&Task::Obs));
        let b = LossBreakdown::new(0.5, 2.0, Some(4.0), &w);
        assert_eq!(b.total, 1.0 + 3.0 + 4.0);
    }

    #[test]
    fn observation_loss() {
        assert_eq!(obs_loss(0.0, 3.0), 9.0);
        assert_eq!(obs_loss(1.25, 1.25), 0.0);
    }

    fn toy(
        problem: &ProblemSpec,
        beta_input: bool,
        act: crate::net::Activation,
        seed: u64,
    ) -> Surrogate {
        use crate::encoder::init_encoder;
        use crate::net::{init_network, NetworkSpec};
        let nd = problem.dim();
        let enc = init_encoder(nd, 3, 1.0, &problem.geometry.extents(), seed).unwrap();
        let mut spec = NetworkSpec::dpp(nd, 2, 5, act);
        spec.beta_input = beta_input;
        let net = init_network(&spec, enc.dim_out() + usize::from(beta_input), seed + 1).unwrap();
        Surrogate::new(enc, net).unwrap()
    }

    fn check_param_grad(
        problem: &ProblemSpec,
        beta: Option<f64>,
        act: crate::net::Activation,
        seed: u64,
        mobility: bool,
    ) {
        use crate::problem::sample_interior;
        let sur = toy(problem, beta.is_some(), act, seed)
            .with_mobility(mobility.then(|| problem.material.clone()));
        let interior = sample_interior(&problem.geometry, 6, seed);
        let mats = crate::physics::local_materials(&problem.material, &interior).unwrap();
        let boundary = sample_boundary(problem, 1, seed).unwrap();
        let target = beta.map(|_| ObsTarget {
            rule: FluxRule::new(&problem.geometry, &presets::outlet_locator(), 8).unwrap(),
            q_obs: 0.3,
        });
        let obj = Objective {
            problem,
            boundary: &boundary,
            observation: target.as_ref(),
        };
        let w = BTreeMap::from([(Task::Pde, 1.3), (Task::Bc, 0.7), (Task::Obs, 1.9)]);
        let ev = obj
            .evaluate(&sur, &interior, &mats, beta, &w, true)
            .unwrap();
        let theta = sur.net.param_vector();
        let loss_at = |th: &[f64], b: Option<f64>| {
            let s = sur.with_params(th).unwrap();
            obj.evaluate(&s, &interior, &mats, b, &w, false)
                .unwrap()
                .breakdown
                .total
        };
        let h = 1e-6;
        let scale = ev.grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        for k in 0..theta.len() {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[k] += h;
            tm[k] -= h;
            let fd = (loss_at(&tp, beta) - loss_at(&tm, beta)) / (2.0 * h);
            let rel = (fd - ev.grad[k]).abs() / ev.grad[k].abs().max(1e-3 * scale);
            assert!(rel <= 1e-5, "param {k}: fd {fd} vs {}", ev.grad[k]);
        }
        if let Some(b) = beta {
            let fd = (loss_at(&theta, Some(b + h)) - loss_at(&theta, Some(b - h))) / (2.0 * h);
            let g = ev.grad[theta.len()];
            assert!(
                (fd - g).abs() / g.abs().max(1e-3 * scale) <= 1e-5,
                "beta: fd {fd} vs {g}"
            );
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        use crate::net::Activation;
        check_param_grad(&presets::pressure1d(), None, Activation::Swish, 1, false);
        check_param_grad(&presets::radial2d(), None, Activation::Tanh, 2, false);
        check_param_grad(
            &presets::inverse2d(1.0),
            Some(0.8),
            Activation::Swish,
            3,
            false,
        );
        check_param_grad(&presets::layered2d(), None, Activation::Swish, 4, true);
    }
}
