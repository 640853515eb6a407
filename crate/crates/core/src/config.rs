//! Run settings: preset defaults, TOML files and `key=value` overrides.
//!
//! Precedence is preset < file < overrides. Files must carry
//! `schema_version`; unknown keys anywhere are rejected.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::encoder::EncoderSpec;
use crate::error::{DppError, Result};
use crate::net::{Activation, NetworkSpec};
use crate::presets;
use crate::problem::{Locator, ProblemSpec};
use crate::train::{ModelSpec, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    /// Nodes of the 1D and radial grids.
    pub n_grid: usize,
    pub nx: usize,
    pub ny: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            n_grid: 2001,
            nx: 301,
            ny: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertSettings {
    pub locator: Locator,
    pub quadrature_n: usize,
    /// Observed flux; when absent it is generated by the grid oracle at
    /// `beta_true`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_obs: Option<f64>,
    pub beta_true: f64,
    /// Standard deviation of additive noise on a generated observation.
    #[serde(default)]
    pub noise_std: f64,
}

impl Default for InvertSettings {
    fn default() -> Self {
        InvertSettings {
            locator: presets::outlet_locator(),
            quadrature_n: 64,
            q_obs: None,
            beta_true: 1.0,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub betas: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            betas: vec![0.1, 0.25, 0.5, 1.0, 2.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    /// Schedule overrides applied to every bench run.
    pub rounds: usize,
    pub epochs_adam: usize,
    pub lbfgs_max_iters: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            depths: vec![4, 6, 8],
            widths: vec![64, 128, 256],
            rounds: 1,
            epochs_adam: 500,
            lbfgs_max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub schema_version: u32,
    pub preset: String,
    pub problem: ProblemSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub invert: InvertSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub bench: BenchSettings,
}

fn model(nd: usize, n_freq: usize, tau: f64, depth: usize, width: usize) -> ModelSpec {
    ModelSpec {
        encoder: EncoderSpec {
            n_freq,
            tau,
            scales: None,
        },
        network: NetworkSpec::dpp(nd, depth, width, Activation::Swish),
        mobility_scaling: false,
    }
}

/// Tuned defaults for a named benchmark.
pub fn preset_settings(name: &str) -> Result<RunSettings> {
    let problem = presets::by_name(name).ok_or_else(|| {
        DppError::config(format!(
            "unknown preset '{name}' (expected one of {:?})",
            presets::NAMES
        ))
    })?;
    let one_d = TrainConfig {
        rounds: 2,
        epochs_adam: 1000,
        batch_size: 0,
        lbfgs_max_iters: 500,
        n_interior0: 256,
        n_boundary: 1,
        ..TrainConfig::default()
    };
    let two_d = TrainConfig {
        rounds: 3,
        epochs_adam: 1000,
        batch_size: 256,
        lbfgs_max_iters: 1500,
        n_interior0: 1024,
        n_boundary: 64,
        ..TrainConfig::default()
    };
    let (model, mut train) = match name {
        "pressure1d" => (model(1, 8, 1.0, 4, 32), one_d),
        "mixed1d" => (
            model(1, 8, 1.0, 4, 32),
            TrainConfig {
                rounds: 3,
                lbfgs_max_iters: 1500,
                ..one_d
            },
        ),
        "radial2d" => {
            let mut m = model(2, 8, 1.0, 4, 48);
            m.network.heads[3].scale = 0.01;
            (m, two_d)
        }
        "layered2d" => {
            let m = ModelSpec {
                mobility_scaling: true,
                ..model(2, 8, 1.0, 4, 48)
            };
            (
                m,
                TrainConfig {
                    rounds: 2,
                    epochs_adam: 500,
                    lbfgs_max_iters: 500,
                    ..two_d
                },
            )
        }
        "footing2d" => {
            let mut m = ModelSpec {
                mobility_scaling: true,
                ..model(2, 8, 1.0, 4, 64)
            };
            m.network = m.network.with_scales(100.0, 10.0);
            (
                m,
                TrainConfig {
                    n_interior0: 2048,
                    batch_size: 512,
                    ..two_d
                },
            )
        }
        "inverse2d" => {
            let m = ModelSpec {
                mobility_scaling: true,
                ..model(2, 8, 1.0, 4, 48)
            };
            (m, TrainConfig { rounds: 2, ..two_d })
        }
        _ => unreachable!("preset names are checked above"),
    };
    if problem.dim() == 2 {
        train.weighting.alpha = 99.0;
    }
    Ok(RunSettings {
        schema_version: SCHEMA_VERSION,
        preset: name.into(),
        problem,
        model,
        train,
        oracle: OracleSettings::default(),
        invert: InvertSettings::default(),
        sweep: SweepSettings::default(),
        bench: BenchSettings::default(),
    })
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(DppError::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.problem.validate()?;
        self.model.network.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| DppError::config(format!("cannot serialise settings: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: RunSettings = toml::from_str(text).map_err(|e| DppError::config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

fn to_table(s: &RunSettings) -> Result<Table> {
    Table::try_from(s).map_err(|e| DppError::config(format!("cannot serialise settings: {e}")))
}

/// Recursively overlay `top` onto `base`; tables merge, everything else is
/// replaced.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        DppError::config(format!("override '{spec}' is not of the form key=value"))
    })?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(DppError::config(format!(
            "override key '{key}' is malformed"
        )));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        node = match node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
        {
            Value::Table(t) => t,
            _ => {
                return Err(DppError::config(format!(
                    "override key '{key}': '{part}' is not a table"
                )))
            }
        };
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Resolve settings from a preset name, an optional file body and overrides.
pub fn resolve(
    preset: Option<&str>,
    file: Option<&str>,
    overrides: &[String],
) -> Result<RunSettings> {
    let file_table = match file {
        Some(text) => {
            let t: Table = toml::from_str(text).map_err(|e| DppError::config(e.to_string()))?;
            match t.get("schema_version") {
                Some(Value::Integer(v)) if *v == i64::from(SCHEMA_VERSION) => {}
                Some(v) => return Err(DppError::config(format!("unsupported schema_version {v}"))),
                None => return Err(DppError::config("config file lacks schema_version")),
            }
            Some(t)
        }
        None => None,
    };
    let file_preset = file_table
        .as_ref()
        .and_then(|t| t.get("preset"))
        .and_then(|v| v.as_str().map(String::from));
    let name = preset.map(String::from).or(file_preset).ok_or_else(|| {
        DppError::config("either --preset or a config file with `preset` is required")
    })?;
    let mut table = to_table(&preset_settings(&name)?)?;
    if let Some(t) = file_table {
        merge(&mut table, t);
    }
    table.insert("preset".into(), Value::String(name));
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let settings: RunSettings = table
        .try_into()
        .map_err(|e: toml::de::Error| DppError::config(e.to_string()))?;
    settings.validate()?;
    Ok(settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_round_trips() {
        for name in presets::NAMES {
            let s = preset_settings(name).unwrap();
            s.validate().unwrap();
            let text = s.to_toml().unwrap();
            let back = RunSettings::from_toml(&text).unwrap();
            assert_eq!(back, s, "{name}");
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn precedence_preset_file_override() {
        let base = resolve(Some("pressure1d"), None, &[]).unwrap();
        assert_eq!(base.train.lr, 1e-3);
        let file = "schema_version = 1\n[train]\nlr = 0.005\nseed = 9\n";
        let s = resolve(Some("pressure1d"), Some(file), &[]).unwrap();
        assert_eq!((s.train.lr, s.train.seed), (0.005, 9));
        assert_eq!(s.train.epochs_adam, base.train.epochs_adam);
        let s = resolve(Some("pressure1d"), Some(file), &["train.lr=0.02".into()]).unwrap();
        assert_eq!((s.train.lr, s.train.seed), (0.02, 9));
    }

    #[test]
    fn file_may_name_the_preset() {
        let s = resolve(
            None,
            Some("schema_version = 1\npreset = \"radial2d\"\n"),
            &[],
        )
        .unwrap();
        assert_eq!(s.problem.name, "radial2d");
        let s = resolve(
            Some("mixed1d"),
            Some("schema_version = 1\npreset = \"radial2d\"\n"),
            &[],
        )
        .unwrap();
        assert_eq!(s.problem.name, "mixed1d");
    }

    #[test]
    fn unknown_keys_and_versions_fail_fast() {
        assert!(resolve(
            Some("pressure1d"),
            Some("schema_version = 1\n[train]\nlearning_rate = 1.0\n"),
            &[]
        )
        .is_err());
        assert!(resolve(Some("pressure1d"), None, &["train.lrr=1".into()]).is_err());
        assert!(resolve(Some("pressure1d"), Some("[train]\nlr = 0.1\n"), &[]).is_err());
        assert!(resolve(Some("pressure1d"), Some("schema_version = 7\n"), &[]).is_err());
        assert!(resolve(Some("nope"), None, &[]).is_err());
        assert!(resolve(None, None, &[]).is_err());
        assert!(resolve(Some("pressure1d"), None, &["train.lr".into()]).is_err());
    }

    #[test]
    fn override_values_are_typed() {
        let s = resolve(
            Some("radial2d"),
            None,
            &[
                "train.adaptive_weights=false".into(),
                "model.network.activation=tanh".into(),
                "sweep.betas=[1, 2.5]".into(),
            ],
        )
        .unwrap();
        assert!(!s.train.adaptive_weights);
        assert_eq!(s.model.network.activation, Activation::Tanh);
        assert_eq!(s.sweep.betas, vec![1.0, 2.5]);
    }
}
