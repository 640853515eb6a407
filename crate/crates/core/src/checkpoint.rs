//! Versioned JSON checkpoints and atomic artifact writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{DppError, Result};
use crate::net::{init_network, NetworkSpec, Surrogate};
use crate::problem::MaterialField;

pub const FORMAT: &str = "dpp-pinn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub problem: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_hat: Option<f64>,
    pub final_total: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkSpec,
    pub d_in: usize,
    pub encoder: Encoder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<MaterialField>,
    pub params: Vec<f64>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_surrogate(sur: &Surrogate, meta: CheckpointMeta) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            network: sur.net.spec.clone(),
            d_in: sur.net.d_in,
            encoder: sur.encoder.clone(),
            mobility: sur.mobility.clone(),
            params: sur.net.param_vector(),
            meta,
        }
    }

    pub fn to_surrogate(&self) -> Result<Surrogate> {
        let mut net = init_network(&self.network, self.d_in, 0)?;
        net.assign_params(&self.params)?;
        Ok(Surrogate::new(self.encoder.clone(), net)?.with_mobility(self.mobility.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(DppError::config(format!(
                "not a checkpoint (format '{}')",
                ck.format
            )));
        }
        if ck.version != VERSION {
            return Err(DppError::config(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| DppError::config(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_encoder;
    use crate::net::Activation;
    use crate::presets;

    fn sample(mobility: bool) -> Surrogate {
        let p = presets::layered2d();
        let enc = init_encoder(2, 5, 1.3, &[5.0, 4.0], 11).unwrap();
        let net = init_network(
            &NetworkSpec::dpp(2, 3, 7, Activation::Swish),
            enc.dim_out(),
            12,
        )
        .unwrap();
        Surrogate::new(enc, net)
            .unwrap()
            .with_mobility(mobility.then(|| p.material.clone()))
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            problem: "layered2d".into(),
            seed: 3,
            beta_hat: None,
            final_total: 0.125,
            epochs: 10,
        }
    }

    #[test]
    fn round_trip_is_byte_stable_and_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        for mobility in [false, true] {
            let sur = sample(mobility);
            let ck = Checkpoint::from_surrogate(&sur, meta());
            let path = dir.path().join("model.json");
            ck.save(&path).unwrap();
            let first = fs::read(&path).unwrap();
            let loaded = Checkpoint::load(&path).unwrap();
            loaded.save(&path).unwrap();
            assert_eq!(first, fs::read(&path).unwrap());
            let back = loaded.to_surrogate().unwrap();
            let x = [1.7, 2.9];
            assert_eq!(
                back.forward_with_derivs(&x, None).unwrap(),
                sur.forward_with_derivs(&x, None).unwrap()
            );
        }
    }

    #[test]
    fn rejects_foreign_format_and_version() {
        let ck = Checkpoint::from_surrogate(&sample(false), meta());
        let text = ck.to_json().unwrap();
        assert!(Checkpoint::from_json(&text.replace(FORMAT, "other")).is_err());
        assert!(Checkpoint::from_json(&text.replace("\"version\": 1", "\"version\": 9")).is_err());
        assert!(Checkpoint::from_json(&text).is_ok());
    }
}
