//! Command-line front end.
//!
//! Every command writes its artifacts under `--out`. Failures print a message
//! to stderr, write `error.json` when the output directory is usable and
//! exit with 2 (configuration), 3 (divergence) or 4 (oracle or gauge).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::{write_atomic, Checkpoint, CheckpointMeta};
use crate::config::{resolve, RunSettings};
use crate::error::{DppError, Result};
use crate::invert::{beta_sweep, is_monotone, model_flux, recover_beta, sweep_csv, Observation};
use crate::net::{FieldSample, Surrogate};
use crate::oracle::{
    fd_solve_1d, fd_solve_radial, fd_solve_rect, l2_error, layered_exact, FieldErrors,
};
use crate::physics::transfer_rate;
use crate::problem::{Geometry, ProblemSpec};
use crate::rng::{stream, Stream};
use crate::train::{history_csv, train_forward, TrainReport};

#[derive(Debug, Parser)]
#[command(
    name = "dpp",
    version,
    about = "Double porosity/permeability flow with physics-informed networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Benchmark preset supplying defaults.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// TOML settings file (overrides the preset).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed (same as `--override train.seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `key=value` override, e.g. `train.lr=0.002`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a forward surrogate.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Recover the transfer coefficient from an outlet flux.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Observed flux; generated by the grid oracle when omitted.
        #[arg(long = "q-obs")]
        q_obs: Option<f64>,
    },
    /// Write the reference solution of a preset.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Forward transfer-coefficient to outlet-flux sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated transfer coefficients.
        #[arg(long = "beta", value_delimiter = ',')]
        betas: Vec<f64>,
    },
    /// Width and depth refinement study.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Long-format plot data from a finished run.
    Export {
        /// Directory of a finished `solve` or `invert` run.
        #[arg(long)]
        run: PathBuf,
        /// Output file; defaults to `<run>/plot.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse arguments, run, and return the process exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let out_dir = match &cli.command {
        Command::Export { run, out } => out
            .as_ref()
            .and_then(|p| p.parent().map(Path::to_path_buf))
            .unwrap_or(run.clone()),
        Command::Solve { common }
        | Command::Invert { common, .. }
        | Command::Oracle { common }
        | Command::Sweep { common, .. }
        | Command::Bench { common } => common.out.clone(),
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if out_dir.is_dir() {
                let rec = json!({ "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
                let _ = write_atomic(&out_dir.join("error.json"), format!("{rec:#}\n").as_bytes());
            }
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Solve { common } => solve(&settings(&common)?, &common.out),
        Command::Invert { common, q_obs } => invert(&settings(&common)?, &common.out, q_obs),
        Command::Oracle { common } => oracle(&settings(&common)?, &common.out),
        Command::Sweep { common, betas } => sweep(&settings(&common)?, &common.out, &betas),
        Command::Bench { common } => bench(&settings(&common)?, &common.out),
        Command::Export { run, out } => {
            let out = out.unwrap_or_else(|| run.join("plot.csv"));
            export_plot_data(&run, &out)
        }
    }
}

fn settings(common: &Common) -> Result<RunSettings> {
    let file =
        match &common.config {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| {
                DppError::config(format!("cannot read config {}: {e}", p.display()))
            })?),
            None => None,
        };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    let s = resolve(common.preset.as_deref(), file.as_deref(), &overrides)?;
    fs::create_dir_all(&common.out).map_err(|e| {
        DppError::config(format!(
            "output directory {} is not writable: {e}",
            common.out.display()
        ))
    })?;
    write_atomic(&common.out.join("settings.toml"), s.to_toml()?.as_bytes())?;
    Ok(s)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Evaluation lattice: 1001 nodes in 1D, 201 x 201 over the bounding box in
/// 2D (annulus nodes outside the domain are dropped).
pub fn lattice(geometry: &Geometry) -> Vec<Vec<f64>> {
    let (lo, hi) = geometry.bounding_box();
    if geometry.dim() == 1 {
        return (0..1001)
            .map(|i| vec![lo[0] + (hi[0] - lo[0]) * i as f64 / 1000.0])
            .collect();
    }
    let n = 201;
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = vec![
                lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
            ];
            if geometry.contains(&x) {
                pts.push(x);
            }
        }
    }
    pts
}

fn field_columns(nd: usize) -> Vec<&'static str> {
    if nd == 1 {
        vec!["x", "p1", "p2", "u1", "u2", "chi"]
    } else {
        vec!["x", "y", "p1", "p2", "u1_x", "u1_y", "u2_x", "u2_y", "chi"]
    }
}

fn fields_csv(
    problem: &ProblemSpec,
    pts: &[Vec<f64>],
    samples: &[FieldSample],
    beta: f64,
) -> String {
    let nd = problem.dim();
    let mut out = field_columns(nd).join(",");
    out.push('\n');
    for (x, s) in pts.iter().zip(samples) {
        let chi = transfer_rate(s.p1, s.p2, beta, problem.material.mu);
        let mut row: Vec<f64> = x.clone();
        row.extend([s.p1, s.p2]);
        row.extend(&s.u1);
        row.extend(&s.u2);
        row.push(chi);
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reference fields at `pts` where an independent reference exists.
pub fn reference_samples(s: &RunSettings, pts: &[Vec<f64>]) -> Result<Option<Vec<FieldSample>>> {
    let p = &s.problem;
    match p.geometry {
        Geometry::Interval { .. } => {
            let g = fd_solve_1d(p, s.oracle.n_grid)?;
            Ok(Some(pts.iter().map(|x| g.sample_at(x)).collect()))
        }
        Geometry::Annulus { .. } => {
            let g = fd_solve_radial(p, s.oracle.n_grid)?;
            Ok(Some(pts.iter().map(|x| g.sample_at(x)).collect()))
        }
        Geometry::Rectangle { .. } if s.preset == "layered2d" => {
            let ex = layered_exact(p)?;
            pts.iter()
                .map(|x| ex.eval(x))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        }
        Geometry::Rectangle { .. } => Ok(None),
    }
}

fn summary(
    s: &RunSettings,
    command: &str,
    rep: &TrainReport,
    errors: Option<FieldErrors>,
) -> Value {
    json!({
        "command": command,
        "preset": s.preset,
        "problem": s.problem.name,
        "seed": s.train.seed,
        "initial_loss": rep.initial_loss,
        "final_loss": rep.final_loss,
        "beta_hat": rep.beta_hat,
        "errors": errors,
        "epochs": rep.history.len(),
        "rounds": rep.rounds_log,
        "polish": rep.polish_log,
        "divergence": rep.divergence,
        "wall_time_s": rep.wall_time.as_secs_f64(),
    })
}

fn rar_csv(rep: &TrainReport) -> String {
    let mut out = String::from("round,candidates,admitted,cloud_size,score_min,score_max\n");
    for r in &rep.rounds_log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round, r.candidates, r.admitted, r.cloud_size, r.score_min, r.score_max
        );
    }
    out
}

/// Write the standard artifacts of a training run.
fn write_run(
    s: &RunSettings,
    out: &Path,
    command: &str,
    rep: &TrainReport,
    extra: Value,
) -> Result<()> {
    let pts = lattice(&s.problem.geometry);
    let samples = rep.surrogate.eval_batch(&pts, rep.beta_hat, false)?;
    let beta = rep.beta_hat.unwrap_or(s.problem.material.beta);
    let errors = match reference_samples(s, &pts)? {
        Some(refs) => Some(l2_error(&samples, &refs, s.problem.gauge_free)),
        None => None,
    };
    write_atomic(
        &out.join("history.csv"),
        history_csv(&rep.history).as_bytes(),
    )?;
    write_atomic(&out.join("rar.csv"), rar_csv(rep).as_bytes())?;
    write_atomic(
        &out.join("fields.csv"),
        fields_csv(&s.problem, &pts, &samples, beta).as_bytes(),
    )?;
    let meta = CheckpointMeta {
        problem: s.problem.name.clone(),
        seed: s.train.seed,
        beta_hat: rep.beta_hat,
        final_total: rep.final_loss.total,
        epochs: rep.history.len(),
    };
    Checkpoint::from_surrogate(&rep.surrogate, meta).save(&out.join("checkpoint.json"))?;
    let mut sum = summary(s, command, rep, errors);
    if let (Value::Object(m), Value::Object(e)) = (&mut sum, extra) {
        m.extend(e);
    }
    write_json(&out.join("summary.json"), &sum)?;
    match rep.divergence_error() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn solve(s: &RunSettings, out: &Path) -> Result<()> {
    let rep = train_forward(&s.problem, &s.model, &s.train)?;
    write_run(s, out, "solve", &rep, json!({}))
}

/// Outlet flux of the grid oracle for `problem` at transfer coefficient `beta`.
pub fn oracle_flux(s: &RunSettings, beta: f64) -> Result<f64> {
    let mut p = s.problem.clone();
    p.material.beta = beta;
    Ok(fd_solve_rect(&p, s.oracle.nx, s.oracle.ny)?.flux(&s.invert.locator))
}

fn invert(s: &RunSettings, out: &Path, q_cli: Option<f64>) -> Result<()> {
    let (q_obs, source) = match q_cli.or(s.invert.q_obs) {
        Some(q) => (q, "given".to_string()),
        None => {
            let mut q = oracle_flux(s, s.invert.beta_true)?;
            if s.invert.noise_std > 0.0 {
                let n = Normal::new(0.0, s.invert.noise_std)
                    .map_err(|e| DppError::config(e.to_string()))?;
                q += n.sample(&mut stream(s.train.seed, Stream::Evaluation));
            }
            (q, format!("oracle(beta={})", s.invert.beta_true))
        }
    };
    let obs = Observation {
        locator: s.invert.locator.clone(),
        q_obs,
        quadrature_n: s.invert.quadrature_n,
    };
    let (beta_hat, rep) = recover_beta(&s.problem, &obs, &s.model, &s.train)?;
    let q_model = model_flux(
        &rep.surrogate,
        &s.problem.geometry,
        &obs.locator,
        obs.quadrature_n,
        Some(beta_hat),
    )?;
    let extra = json!({ "q_obs": q_obs, "q_obs_source": source, "q_model": q_model });
    write_run(s, out, "invert", &rep, extra)
}

fn oracle(s: &RunSettings, out: &Path) -> Result<()> {
    let p = &s.problem;
    let path = out.join("oracle.csv");
    match p.geometry {
        Geometry::Interval { .. } => {
            let g = fd_solve_1d(p, s.oracle.n_grid)?;
            g.write_csv(&path.with_extension("tmp.csv"))?;
            fs::rename(path.with_extension("tmp.csv"), &path)?;
        }
        Geometry::Annulus { .. } => {
            let g = fd_solve_radial(p, s.oracle.n_grid)?;
            g.write_csv(&path.with_extension("tmp.csv"))?;
            fs::rename(path.with_extension("tmp.csv"), &path)?;
        }
        Geometry::Rectangle { .. } => {
            let pts = lattice(&p.geometry);
            let samples = if s.preset == "layered2d" {
                let ex = layered_exact(p)?;
                pts.iter().map(|x| ex.eval(x)).collect::<Result<Vec<_>>>()?
            } else {
                let g = fd_solve_rect(p, s.oracle.nx, s.oracle.ny)?;
                pts.iter()
                    .map(|x| FieldSample {
                        p1: g.interpolate(&g.p1, x),
                        p2: g.interpolate(&g.p2, x),
                        ..FieldSample::zeros(2)
                    })
                    .collect()
            };
            let text = fields_csv(p, &pts, &samples, p.material.beta);
            // velocities are not reconstructed by the grid oracle
            let text = if s.preset == "layered2d" {
                text
            } else {
                drop_velocity_columns(&text)
            };
            write_atomic(&path, text.as_bytes())?;
        }
    }
    write_json(
        &out.join("summary.json"),
        &json!({ "command": "oracle", "preset": s.preset, "file": "oracle.csv" }),
    )
}

fn drop_velocity_columns(text: &str) -> String {
    let keep = [0usize, 1, 2, 3, 8];
    let mut out = String::new();
    for line in text.lines() {
        let cells: Vec<&str> = line.split(',').collect();
        out.push_str(&keep.iter().map(|&i| cells[i]).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn sweep(s: &RunSettings, out: &Path, betas: &[f64]) -> Result<()> {
    if !matches!(s.problem.geometry, Geometry::Rectangle { .. }) {
        return Err(DppError::config(
            "sweep needs a rectangle problem with a grid oracle",
        ));
    }
    let betas = if betas.is_empty() {
        s.sweep.betas.clone()
    } else {
        betas.to_vec()
    };
    let entries = beta_sweep(
        &s.problem,
        &betas,
        &s.invert.locator,
        s.oracle.nx,
        s.oracle.ny,
    )?;
    write_atomic(&out.join("sweep.csv"), sweep_csv(&entries).as_bytes())?;
    write_json(
        &out.join("summary.json"),
        &json!({ "command": "sweep", "preset": s.preset, "monotone": is_monotone(&entries), "entries": entries }),
    )
}

fn bench(s: &RunSettings, out: &Path) -> Result<()> {
    let pts = lattice(&s.problem.geometry);
    let refs = reference_samples(s, &pts)?.ok_or_else(|| {
        DppError::config(format!(
            "preset '{}' has no reference for the bench table",
            s.preset
        ))
    })?;
    let mut table = String::from("depth,width,p1,p2,u1,u2,final_loss,wall_time_s\n");
    for &depth in &s.bench.depths {
        for &width in &s.bench.widths {
            let mut model = s.model.clone();
            model.network.depth = depth;
            model.network.width = width;
            let mut cfg = s.train.clone();
            cfg.rounds = s.bench.rounds;
            cfg.epochs_adam = s.bench.epochs_adam;
            cfg.lbfgs_max_iters = s.bench.lbfgs_max_iters;
            let rep = train_forward(&s.problem, &model, &cfg)?;
            if let Some(e) = rep.divergence_error() {
                return Err(e);
            }
            let e = l2_error(
                &rep.surrogate.eval_batch(&pts, None, false)?,
                &refs,
                s.problem.gauge_free,
            );
            let _ = writeln!(
                table,
                "{depth},{width},{},{},{},{},{},{}",
                e.p1,
                e.p2,
                e.u1,
                e.u2,
                rep.final_loss.total,
                rep.wall_time.as_secs_f64()
            );
            write_atomic(&out.join("bench.csv"), table.as_bytes())?;
        }
    }
    write_json(
        &out.join("summary.json"),
        &json!({ "command": "bench", "preset": s.preset, "file": "bench.csv" }),
    )
}

pub const PROFILE_X: f64 = 2.5;

/// Long-format `(x, y, field, value)` rows from `fields.csv`, field-major in
/// lattice order. Layered runs also get the vertical velocity profile at
/// `x = 2.5`.
pub fn export_plot_data(run: &Path, out: &Path) -> Result<()> {
    let fields_path = run.join("fields.csv");
    if !fields_path.is_file() {
        return Err(DppError::config(format!(
            "missing artifact {}",
            fields_path.display()
        )));
    }
    let summary: Value = match fs::read_to_string(run.join("summary.json")) {
        Ok(t) => serde_json::from_str(&t)?,
        Err(_) => {
            return Err(DppError::config(format!(
                "missing artifact {}",
                run.join("summary.json").display()
            )))
        }
    };
    let mut rdr = csv::Reader::from_path(&fields_path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| {
            r.map_err(DppError::from).and_then(|r| {
                r.iter()
                    .map(|c| {
                        c.parse::<f64>()
                            .map_err(|e| DppError::config(format!("bad value '{c}': {e}")))
                    })
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let two_d = header.get(1).map(String::as_str) == Some("y");
    let first_field = if two_d { 2 } else { 1 };
    let xy = |r: &Vec<f64>| (r[0], if two_d { r[1] } else { 0.0 });
    let mut text = String::from("x,y,field,value\n");
    for (c, name) in header.iter().enumerate().skip(first_field) {
        for r in &rows {
            let (x, y) = xy(r);
            let _ = writeln!(text, "{x},{y},{name},{}", r[c]);
        }
    }
    if two_d && summary.get("preset").and_then(Value::as_str) == Some("layered2d") {
        for (c, name) in header.iter().enumerate().skip(first_field) {
            if !name.starts_with('u') {
                continue;
            }
            for r in rows.iter().filter(|r| (r[0] - PROFILE_X).abs() < 1e-9) {
                let _ = writeln!(text, "{},{},profile_{name},{}", r[0], r[1], r[c]);
            }
        }
    }
    write_atomic(out, text.as_bytes())
}

/// Surrogate stored by a finished run.
pub fn load_run_surrogate(run: &Path) -> Result<Surrogate> {
    Checkpoint::load(&run.join("checkpoint.json"))?.to_surrogate()
}
