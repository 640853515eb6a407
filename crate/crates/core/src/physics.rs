//! Strong-form residuals of the two-network Darcy system.

use crate::error::Result;
use crate::net::FieldSample;
use crate::problem::{permeability_at, BcKind, BoundaryPoint, Coords, MaterialField, ProblemSpec};

/// Material parameters resolved at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMaterial {
    pub mu: f64,
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
    /// φ₁γb and φ₂γb.
    pub force1: Vec<f64>,
    pub force2: Vec<f64>,
}

impl LocalMaterial {
    pub fn at(material: &MaterialField, x: &[f64]) -> Result<Self> {
        let (k1, k2) = permeability_at(material, x)?;
        let nd = x.len();
        Ok(LocalMaterial {
            mu: material.mu,
            beta: material.beta,
            k1,
            k2,
            force1: (0..nd).map(|j| material.body_force(1, j)).collect(),
            force2: (0..nd).map(|j| material.body_force(2, j)).collect(),
        })
    }

    /// Same point with body forces removed.
    pub fn unforced(&self) -> Self {
        LocalMaterial {
            force1: vec![0.0; self.force1.len()],
            force2: vec![0.0; self.force2.len()],
            ..self.clone()
        }
    }
}

pub fn local_materials(material: &MaterialField, points: &[Coords]) -> Result<Vec<LocalMaterial>> {
    points
        .iter()
        .map(|x| LocalMaterial::at(material, x))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub r3: f64,
    pub r4: f64,
}

impl ResidualSample {
    pub fn norm_sq(&self) -> f64 {
        self.r1.iter().chain(&self.r2).map(|v| v * v).sum::<f64>()
            + self.r3 * self.r3
            + self.r4 * self.r4
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

pub fn transfer_rate(p1: f64, p2: f64, beta: f64, mu: f64) -> f64 {
    -(beta / mu) * (p1 - p2)
}

pub fn residuals(
    fs: &FieldSample,
    mat: &LocalMaterial,
    beta_override: Option<f64>,
) -> ResidualSample {
    let beta = beta_override.unwrap_or(mat.beta);
    let momentum = |u: &[f64], gp: &[f64], k: f64, f: &[f64]| -> Vec<f64> {
        (0..u.len())
            .map(|j| mat.mu / k * u[j] + gp[j] - f[j])
            .collect()
    };
    let exchange = (beta / mat.mu) * (fs.p1 - fs.p2);
    ResidualSample {
        r1: momentum(&fs.u1, &fs.grad_p1, mat.k1, &mat.force1),
        r2: momentum(&fs.u2, &fs.grad_p2, mat.k2, &mat.force2),
        r3: fs.div_u1 + exchange,
        r4: fs.div_u2 - exchange,
    }
}

/// Squared homogeneous boundary trace of `fs` at `bp`, summed over networks.
pub fn trace_energy(problem: &ProblemSpec, bp: &BoundaryPoint, fs: &FieldSample) -> f64 {
    let mut e = 0.0;
    for (i, &s) in bp.segments.iter().enumerate() {
        let (p, u) = if i == 0 {
            (fs.p1, &fs.u1)
        } else {
            (fs.p2, &fs.u2)
        };
        let v = match problem.segments[s].kind {
            BcKind::Pressure => p,
            BcKind::NormalVelocity => dot(u, &bp.normal),
        };
        e += v * v;
    }
    e
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quadrature estimate of the homogeneous least-squares energy
/// `Σᵢ ∫ |Mᵢ|² + ∫ Cᵢ² + boundary traces`, data and body force set to zero.
/// Each entry carries its own quadrature weight.
pub fn ls_energy(
    problem: &ProblemSpec,
    interior: &[(LocalMaterial, FieldSample, f64)],
    boundary: &[(BoundaryPoint, FieldSample, f64)],
) -> f64 {
    let vol: f64 = interior
        .iter()
        .map(|(m, fs, w)| w * residuals(fs, &m.unforced(), None).norm_sq())
        .sum();
    let surf: f64 = boundary
        .iter()
        .map(|(bp, fs, w)| w * trace_energy(problem, bp, fs))
        .sum();
    vol + surf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(beta: f64) -> LocalMaterial {
        LocalMaterial {
            mu: 1.0,
            beta,
            k1: 1.0,
            k2: 0.01,
            force1: vec![0.0],
            force2: vec![0.0],
        }
    }

    #[test]
    fn constant_pressure_state_is_exact() {
        let fs = FieldSample {
            p1: 3.0,
            p2: 3.0,
            ..FieldSample::zeros(1)
        };
        let r = residuals(&fs, &mat(0.0), None);
        assert_eq!(r.norm_sq(), 0.0);
    }

    #[test]
    fn layered_momentum_balance() {
        let m = LocalMaterial {
            mu: 1.0,
            beta: 1.0,
            k1: 2.0,
            k2: 0.5,
            force1: vec![0.0; 2],
            force2: vec![0.0; 2],
        };
        let fs = FieldSample {
            p1: 0.4,
            p2: 0.4,
            u1: vec![2.0, 0.0],
            u2: vec![0.5, 0.0],
            grad_p1: vec![-1.0, 0.0],
            grad_p2: vec![-1.0, 0.0],
            ..FieldSample::zeros(2)
        };
        assert_eq!(residuals(&fs, &m, None).norm_sq(), 0.0);
    }

    #[test]
    fn continuity_with_table_pressures() {
        let fs = FieldSample {
            p1: 10.0,
            p2: 1.0,
            ..FieldSample::zeros(1)
        };
        let r = residuals(&fs, &mat(1.0), None);
        assert_eq!(r.r3, 9.0);
        assert_eq!(r.r4, -9.0);
        assert_eq!(residuals(&fs, &mat(1.0), Some(2.0)).r3, 18.0);
    }

    #[test]
    fn transfer_rate_sign() {
        assert_eq!(transfer_rate(10.0, 1.0, 1.0, 1.0), -9.0);
        assert_eq!(transfer_rate(2.0, 2.0, 1.0, 1.0), 0.0);
        assert_eq!(transfer_rate(5.0, 1.0, 0.0, 1.0), 0.0);
        assert!(transfer_rate(1.0, 2.0, 0.3, 2.0) > 0.0);
    }

    #[test]
    fn body_force_enters_momentum() {
        let m = LocalMaterial {
            force1: vec![2.0],
            ..mat(0.0)
        };
        let r = residuals(&FieldSample::zeros(1), &m, None);
        assert_eq!(r.r1, vec![-2.0]);
        assert_eq!(
            residuals(&FieldSample::zeros(1), &m.unforced(), None).r1,
            vec![0.0]
        );
    }
}
