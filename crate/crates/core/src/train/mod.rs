//! Two-stage training driver organised in refinement rounds.
//!
//! Each round runs mini-batch Adam epochs with per-epoch weight rebalancing,
//! then an L-BFGS polish on the full cloud with the weights frozen, then
//! (except after the last round) enriches the interior cloud.

pub mod adam;
pub mod lbfgs;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::adapt::{enrich, CollocationCloud, RarReport, WeightHyper, WeightState};
use crate::encoder::{init_encoder, EncoderSpec};
use crate::error::{DppError, Result};
use crate::invert::{FluxRule, Observation};
use crate::loss::{Evaluation, LossBreakdown, Objective, ObsTarget, Task};
use crate::net::{init_network, NetworkSpec, Surrogate};
use crate::physics::{local_materials, LocalMaterial};
use crate::problem::{sample_boundary, sample_interior, Coords, ProblemSpec};
use crate::rng::{child_seed, stream, Stream};

use adam::{adam_step, clip_global_norm, AdamState};
use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub network: NetworkSpec,
    /// Multiply velocity heads by the local `kᵢ/μ`.
    #[serde(default)]
    pub mobility_scaling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RarConfig {
    /// Points admitted per round; default 10% of the initial cloud.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
    pub gamma: f64,
    /// Interior capacity; default 4x the initial cloud.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
}

impl Default for RarConfig {
    fn default() -> Self {
        RarConfig {
            kappa: None,
            gamma: 3.0,
            capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rounds: usize,
    pub epochs_adam: usize,
    /// Interior points per Adam step; 0 means the full cloud.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub lr_min: f64,
    pub lbfgs_max_iters: usize,
    pub lbfgs_history: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub n_interior0: usize,
    /// Boundary points per boundary piece.
    pub n_boundary: usize,
    pub adaptive_weights: bool,
    pub weighting: WeightHyper,
    pub rar: RarConfig,
    /// Initial transfer coefficient for inversion.
    pub beta_init: f64,
    /// Extra multiplier on the observation weight.
    pub obs_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 4,
            epochs_adam: 2000,
            batch_size: 512,
            lr: 1e-3,
            lr_patience: 200,
            lr_factor: 0.5,
            lr_min: 1e-5,
            lbfgs_max_iters: 500,
            lbfgs_history: 50,
            grad_clip: 1.0,
            seed: 0,
            n_interior0: 4096,
            n_boundary: 256,
            adaptive_weights: true,
            weighting: WeightHyper::default(),
            rar: RarConfig::default(),
            beta_init: 0.5,
            obs_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_interior0 == 0 || self.n_boundary == 0 || self.lbfgs_history == 0 {
            return Err(DppError::config(
                "cloud sizes and lbfgs_history must be at least 1",
            ));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) || !(self.lr_min > 0.0) {
            return Err(DppError::config(
                "lr, lr_min and grad_clip must be positive",
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(DppError::config("lr_factor must lie in (0, 1)"));
        }
        if !(self.beta_init > 0.0) || !(self.obs_scale >= 0.0) {
            return Err(DppError::config(
                "beta_init must be positive and obs_scale non-negative",
            ));
        }
        if !(self.rar.gamma >= 1.0) || self.rar.kappa == Some(0) {
            return Err(DppError::config("rar needs gamma >= 1 and kappa >= 1"));
        }
        self.weighting.validate()
    }

    pub fn kappa(&self) -> usize {
        self.rar.kappa.unwrap_or((self.n_interior0 / 10).max(1))
    }

    pub fn capacity(&self) -> usize {
        self.rar
            .capacity
            .unwrap_or(4 * self.n_interior0)
            .max(self.n_interior0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub round: usize,
    pub phase: Phase,
    /// Global Adam epoch, or L-BFGS iterations for a polish row.
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishLog {
    pub round: usize,
    pub iters: usize,
    pub evals: usize,
    pub entry_loss: f64,
    pub exit_loss: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub round: usize,
    pub epoch: usize,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<HistoryRow>,
    pub rounds_log: Vec<RarReport>,
    pub polish_log: Vec<PolishLog>,
    pub surrogate: Surrogate,
    pub beta_hat: Option<f64>,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub cloud: CollocationCloud,
    pub divergence: Option<Divergence>,
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn divergence_error(&self) -> Option<DppError> {
        self.divergence.as_ref().map(|d| DppError::Divergence {
            round: d.round,
            epoch: d.epoch,
            detail: d.detail.clone(),
        })
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Encoder and freshly initialised network for `problem`, seeded from the
/// run seed.
pub fn build_surrogate(
    problem: &ProblemSpec,
    model: &ModelSpec,
    seed: u64,
    beta_input: bool,
) -> Result<Surrogate> {
    let nd = problem.dim();
    let scales = model
        .encoder
        .scales
        .clone()
        .unwrap_or_else(|| problem.geometry.extents());
    let enc = init_encoder(
        nd,
        model.encoder.n_freq,
        model.encoder.tau,
        &scales,
        child_seed(seed, Stream::Encoder, 0),
    )?;
    let mut spec = model.network.clone();
    spec.beta_input = beta_input;
    let net = init_network(
        &spec,
        enc.dim_out() + usize::from(beta_input),
        child_seed(seed, Stream::Init, 0),
    )?;
    Ok(Surrogate::new(enc, net)?
        .with_mobility(model.mobility_scaling.then(|| problem.material.clone())))
}

/// Initial interior and boundary clouds of a run.
pub fn initial_cloud(problem: &ProblemSpec, cfg: &TrainConfig) -> Result<CollocationCloud> {
    Ok(CollocationCloud {
        interior: sample_interior(
            &problem.geometry,
            cfg.n_interior0,
            child_seed(cfg.seed, Stream::Sampling, 0),
        ),
        boundary: sample_boundary(
            problem,
            cfg.n_boundary,
            child_seed(cfg.seed, Stream::Sampling, 1),
        )?,
        capacity: cfg.capacity(),
    })
}

pub fn train_forward(
    problem: &ProblemSpec,
    model: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run(problem, model, cfg, None)
}

pub fn train_inverse(
    problem: &ProblemSpec,
    obs: &Observation,
    model: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    obs.validate(&problem.geometry)?;
    let target = ObsTarget {
        rule: FluxRule::new(&problem.geometry, &obs.locator, obs.quadrature_n)?,
        q_obs: obs.q_obs,
    };
    run(problem, model, cfg, Some(target))
}

struct Plateau {
    best: f64,
    bad: usize,
}

fn run(
    problem: &ProblemSpec,
    model: &ModelSpec,
    cfg: &TrainConfig,
    target: Option<ObsTarget>,
) -> Result<TrainReport> {
    problem.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let inverse = target.is_some();
    let mut sur = build_surrogate(problem, model, cfg.seed, inverse)?;
    let mut cloud = initial_cloud(problem, cfg)?;
    let boundary = cloud.boundary.clone();
    let mut mats = local_materials(&problem.material, &cloud.interior)?;
    let tasks: &[Task] = if inverse {
        &[Task::Pde, Task::Bc, Task::Obs]
    } else {
        &[Task::Pde, Task::Bc]
    };
    let mut weights = WeightState::new(cfg.weighting, tasks);
    let objective = Objective {
        problem,
        boundary: &boundary,
        observation: target.as_ref(),
    };

    let n_net = sur.net.num_params();
    let mut theta = sur.net.param_vector();
    if inverse {
        theta.push(softplus_inv(cfg.beta_init));
    }
    let beta_of = |th: &[f64]| inverse.then(|| softplus(th[n_net]));
    let effective = |w: &WeightState| {
        let mut l = w.lambdas();
        if let Some(o) = l.get_mut(&Task::Obs) {
            *o *= cfg.obs_scale;
        }
        l
    };
    let to_raw = |ev: &mut Evaluation, th: &[f64]| {
        if inverse {
            ev.grad[n_net] *= sigmoid(th[n_net]);
        }
    };

    let initial_loss = objective
        .evaluate(
            &sur,
            &cloud.interior,
            &mats,
            beta_of(&theta),
            &effective(&weights),
            false,
        )?
        .breakdown;
    let mut adam = AdamState::new(theta.len());
    let mut lr = cfg.lr;
    let mut plateau = Plateau {
        best: f64::INFINITY,
        bad: 0,
    };
    let mut batch_rng = stream(cfg.seed, Stream::Batching);
    let mut history = Vec::new();
    let mut rounds_log = Vec::new();
    let mut polish_log = Vec::new();
    let mut divergence = None;
    let mut last_good = theta.clone();
    let mut global_epoch = 0;

    'rounds: for round in 0..=cfg.rounds {
        let n = cloud.interior.len();
        let full = cfg.batch_size == 0 || cfg.batch_size >= n;
        for _ in 0..cfg.epochs_adam {
            let lambdas = effective(&weights);
            let beta = beta_of(&theta);
            let mut ev = if full {
                objective.evaluate(&sur, &cloud.interior, &mats, beta, &lambdas, true)?
            } else {
                let idx = index::sample(&mut batch_rng, n, cfg.batch_size);
                let pts: Vec<Coords> = idx.iter().map(|i| cloud.interior[i].clone()).collect();
                let bm: Vec<LocalMaterial> = idx.iter().map(|i| mats[i].clone()).collect();
                objective.evaluate(&sur, &pts, &bm, beta, &lambdas, true)?
            };
            if !ev.breakdown.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
                divergence = Some(Divergence {
                    round,
                    epoch: global_epoch,
                    detail: format!(
                        "non-finite loss or gradient (total = {})",
                        ev.breakdown.total
                    ),
                });
                theta = last_good.clone();
                sur.net.assign_params(&theta[..n_net])?;
                break 'rounds;
            }
            last_good.clone_from(&theta);
            to_raw(&mut ev, &theta);
            clip_global_norm(&mut ev.grad, cfg.grad_clip);
            adam_step(&mut theta, &ev.grad, &mut adam, lr);
            sur.net.assign_params(&theta[..n_net])?;

            let b = &ev.breakdown;
            history.push(HistoryRow {
                round,
                phase: Phase::Adam,
                step: global_epoch,
                loss: b.clone(),
                lr,
                beta,
            });
            if cfg.adaptive_weights {
                let raw: BTreeMap<Task, f64> = tasks
                    .iter()
                    .map(|&t| (t, b.get(t).unwrap_or(0.0)))
                    .collect();
                weights.record_and_rebalance(&raw)?;
            }
            let plain = b.pde + b.bc + b.obs.unwrap_or(0.0);
            if plain < plateau.best * (1.0 - 1e-4) {
                plateau.best = plain;
                plateau.bad = 0;
            } else {
                plateau.bad += 1;
                if plateau.bad > cfg.lr_patience {
                    lr = (lr * cfg.lr_factor).max(cfg.lr_min);
                    plateau.bad = 0;
                }
            }
            global_epoch += 1;
        }

        if cfg.lbfgs_max_iters > 0 {
            let lambdas = effective(&weights);
            let closure = |th: &[f64]| -> Result<(f64, Vec<f64>)> {
                let s = sur.with_params(&th[..n_net])?;
                let mut ev =
                    objective.evaluate(&s, &cloud.interior, &mats, beta_of(th), &lambdas, true)?;
                to_raw(&mut ev, th);
                if !ev.breakdown.total.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
                    return Ok((f64::INFINITY, vec![0.0; th.len()]));
                }
                Ok((ev.breakdown.total, ev.grad))
            };
            let lcfg = LbfgsConfig {
                max_iters: cfg.lbfgs_max_iters,
                history: cfg.lbfgs_history,
                ..Default::default()
            };
            let out = lbfgs_minimize(&theta, closure, &lcfg)?;
            if !out.entry_f.is_finite() {
                divergence = Some(Divergence {
                    round,
                    epoch: global_epoch,
                    detail: "non-finite loss entering polish".into(),
                });
                break 'rounds;
            }
            theta = out.x;
            last_good.clone_from(&theta);
            sur.net.assign_params(&theta[..n_net])?;
            let beta = beta_of(&theta);
            let b = objective
                .evaluate(&sur, &cloud.interior, &mats, beta, &lambdas, false)?
                .breakdown;
            history.push(HistoryRow {
                round,
                phase: Phase::Lbfgs,
                step: out.iters,
                loss: b,
                lr,
                beta,
            });
            polish_log.push(PolishLog {
                round,
                iters: out.iters,
                evals: out.evals,
                entry_loss: out.entry_f,
                exit_loss: out.f,
                status: match out.status {
                    LbfgsStatus::Converged => "converged",
                    LbfgsStatus::MaxIters => "max_iters",
                    LbfgsStatus::LineSearchFailed => "line_search_failed",
                }
                .into(),
            });
        }

        if round < cfg.rounds {
            let seed = child_seed(cfg.seed, Stream::Enrichment, round as u64);
            let (next, report) = enrich(
                &cloud,
                &sur,
                problem,
                cfg.kappa(),
                cfg.rar.gamma,
                seed,
                round,
                beta_of(&theta),
            )?;
            cloud = next;
            mats = local_materials(&problem.material, &cloud.interior)?;
            rounds_log.push(report);
        }
    }

    let beta_hat = beta_of(&theta);
    let final_loss = objective
        .evaluate(
            &sur,
            &cloud.interior,
            &mats,
            beta_hat,
            &effective(&weights),
            false,
        )?
        .breakdown;
    Ok(TrainReport {
        history,
        rounds_log,
        polish_log,
        surrogate: sur,
        beta_hat,
        initial_loss,
        final_loss,
        cloud,
        divergence,
        wall_time: start.elapsed(),
    })
}

pub const HISTORY_HEADER: &str =
    "round,phase,step,pde,bc,obs,lambda_pde,lambda_bc,lambda_obs,total,lr,beta";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// History as CSV text with a fixed header.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = Vec::new();
    writeln!(out, "{HISTORY_HEADER}").expect("write to memory");
    for r in rows {
        let w = &r.loss.weights_used;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            match r.phase {
                Phase::Adam => "adam",
                Phase::Lbfgs => "lbfgs",
            },
            r.step,
            r.loss.pde,
            r.loss.bc,
            opt(r.loss.obs),
            w[&Task::Pde],
            w[&Task::Bc],
            opt(w.get(&Task::Obs).copied()),
            r.loss.total,
            r.lr,
            opt(r.beta),
        )
        .expect("write to memory");
    }
    String::from_utf8(out).expect("ascii")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use crate::presets;

    fn tiny_model(nd: usize) -> ModelSpec {
        ModelSpec {
            encoder: EncoderSpec {
                n_freq: 4,
                tau: 1.0,
                scales: None,
            },
            network: NetworkSpec::dpp(nd, 2, 8, Activation::Swish),
            mobility_scaling: false,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            rounds: 1,
            epochs_adam: 20,
            batch_size: 16,
            lbfgs_max_iters: 5,
            n_interior0: 40,
            n_boundary: 2,
            weighting: WeightHyper {
                window: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn softplus_round_trip() {
        for b in [1e-3, 0.5, 1.0, 2.0, 30.0] {
            assert!((softplus(softplus_inv(b)) - b).abs() < 1e-12 * b.max(1.0));
        }
        assert!(softplus(-50.0) > 0.0);
    }

    #[test]
    fn empty_schedule_leaves_network_unchanged() {
        let p = presets::pressure1d();
        let cfg = TrainConfig {
            rounds: 0,
            epochs_adam: 0,
            lbfgs_max_iters: 0,
            ..tiny_cfg()
        };
        let model = tiny_model(1);
        let rep = train_forward(&p, &model, &cfg).unwrap();
        let fresh = build_surrogate(&p, &model, cfg.seed, false).unwrap();
        assert_eq!(rep.surrogate, fresh);
        assert!(rep.history.is_empty() && rep.rounds_log.is_empty());
    }

    #[test]
    fn schedule_accounting_and_determinism() {
        let p = presets::radial2d();
        let cfg = tiny_cfg();
        let a = train_forward(&p, &tiny_model(2), &cfg).unwrap();
        let b = train_forward(&p, &tiny_model(2), &cfg).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.rounds_log.len(), cfg.rounds);
        assert_eq!(a.history.len(), (cfg.rounds + 1) * (cfg.epochs_adam + 1));
        assert_eq!(a.cloud.interior.len(), 40 + cfg.kappa());
        for log in &a.polish_log {
            assert!(log.exit_loss <= log.entry_loss);
        }
    }

    #[test]
    fn inverse_beta_stays_positive() {
        let p = presets::inverse2d(1.0);
        let obs = Observation {
            locator: presets::outlet_locator(),
            q_obs: 1.0,
            quadrature_n: 8,
        };
        let cfg = TrainConfig {
            rounds: 0,
            ..tiny_cfg()
        };
        let rep = train_inverse(&p, &obs, &tiny_model(2), &cfg).unwrap();
        assert!(rep.beta_hat.unwrap() > 0.0);
        assert!(rep
            .history
            .iter()
            .all(|r| r.beta.unwrap() > 0.0 && r.loss.obs.is_some()));
    }
}
