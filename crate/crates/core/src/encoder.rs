//! Randomized Fourier feature lifting of coordinates.
//!
//! `Φ(x) = [x̂; sin(2π B x̂); cos(2π B x̂)]` with `x̂ᵢ = xᵢ / Lᵢ` and a fixed
//! frequency matrix `B` drawn once from `N(0, τ²)`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub scales: Vec<f64>,
    /// n_freq rows of length d.
    pub freqs: Vec<Vec<f64>>,
    pub tau: f64,
    pub include_input: bool,
    pub seed: u64,
}

/// Encoder hyperparameters; `scales` default to the domain extents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub n_freq: usize,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
}

pub fn init_encoder(
    d: usize,
    n_freq: usize,
    tau: f64,
    scales: &[f64],
    seed: u64,
) -> Result<Encoder> {
    if !(1..=2).contains(&d) {
        return Err(DppError::config(format!(
            "encoder dimension must be 1 or 2, got {d}"
        )));
    }
    if !(tau > 0.0) {
        return Err(DppError::config("encoder tau must be positive"));
    }
    if scales.len() != d || scales.iter().any(|&l| !(l > 0.0)) {
        return Err(DppError::config(
            "encoder scales must be positive, one per coordinate",
        ));
    }
    let normal = Normal::new(0.0, tau).map_err(|e| DppError::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freqs = (0..n_freq)
        .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    Ok(Encoder {
        scales: scales.to_vec(),
        freqs,
        tau,
        include_input: true,
        seed,
    })
}

impl Encoder {
    pub fn d(&self) -> usize {
        self.scales.len()
    }

    pub fn n_freq(&self) -> usize {
        self.freqs.len()
    }

    /// Feature dimension D.
    pub fn dim_out(&self) -> usize {
        let base = if self.include_input { self.d() } else { 0 };
        base + 2 * self.n_freq()
    }

    fn phases(&self, x: &[f64]) -> Vec<f64> {
        self.freqs
            .iter()
            .map(|row| {
                2.0 * PI
                    * row
                        .iter()
                        .zip(x)
                        .zip(&self.scales)
                        .map(|((b, xi), l)| b * xi / l)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim_out());
        if self.include_input {
            out.extend(x.iter().zip(&self.scales).map(|(xi, l)| xi / l));
        }
        let ph = self.phases(x);
        out.extend(ph.iter().map(|p| p.sin()));
        out.extend(ph.iter().map(|p| p.cos()));
        out
    }

    /// Exact Jacobian `∂Φ/∂x`, row-major D × d.
    pub fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.d();
        let mut jac = Vec::with_capacity(self.dim_out());
        if self.include_input {
            for i in 0..d {
                jac.push(
                    (0..d)
                        .map(|j| if i == j { 1.0 / self.scales[j] } else { 0.0 })
                        .collect(),
                );
            }
        }
        let ph = self.phases(x);
        for (row, p) in self.freqs.iter().zip(&ph) {
            jac.push(
                (0..d)
                    .map(|j| 2.0 * PI * row[j] / self.scales[j] * p.cos())
                    .collect(),
            );
        }
        for (row, p) in self.freqs.iter().zip(&ph) {
            jac.push(
                (0..d)
                    .map(|j| -2.0 * PI * row[j] / self.scales[j] * p.sin())
                    .collect(),
            );
        }
        jac
    }

    /// Batched features in the column-block layout consumed by the network:
    /// block 0 holds Φ(xᵢ) for each point, block 1 + j holds ∂Φ/∂xⱼ when
    /// `with_derivs`. `extra_rows` zero rows are appended for extra inputs.
    pub fn encode_batch(
        &self,
        points: &[Vec<f64>],
        with_derivs: bool,
        extra_rows: usize,
    ) -> Array2<f64> {
        let n = points.len();
        let d = self.d();
        let blocks = if with_derivs { 1 + d } else { 1 };
        let mut m = Array2::<f64>::zeros((self.dim_out() + extra_rows, n * blocks));
        for (c, x) in points.iter().enumerate() {
            for (r, v) in self.encode(x).into_iter().enumerate() {
                m[[r, c]] = v;
            }
            if with_derivs {
                for (r, row) in self.jacobian(x).into_iter().enumerate() {
                    for j in 0..d {
                        m[[r, (1 + j) * n + c]] = row[j];
                    }
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn output_dimension() {
        let e = init_encoder(2, 8, 1.0, &[1.0, 1.0], 3).unwrap();
        assert_eq!(e.dim_out(), 18);
        assert_eq!(e.encode(&[0.2, 0.4]).len(), 18);
    }

    #[test]
    fn degenerate_encoder_is_normalisation() {
        let e = init_encoder(1, 0, 1.0, &[2.0], 0).unwrap();
        assert_eq!(e.encode(&[0.5]), vec![0.25]);
    }

    #[test]
    fn deterministic_frequencies() {
        let a = init_encoder(2, 16, 1.0, &[1.0, 2.0], 42).unwrap();
        let b = init_encoder(2, 16, 1.0, &[1.0, 2.0], 42).unwrap();
        assert_eq!(a.freqs, b.freqs);
    }

    #[test]
    fn origin_features() {
        let e = init_encoder(2, 4, 1.0, &[1.0, 1.0], 9).unwrap();
        let f = e.encode(&[0.0, 0.0]);
        assert!(f[..6].iter().all(|&v| v == 0.0));
        assert!(f[6..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn trig_blocks_bounded() {
        let e = init_encoder(2, 8, 3.0, &[1.0, 1.0], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            assert!(e.encode(&x)[2..].iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(init_encoder(3, 1, 1.0, &[1.0, 1.0, 1.0], 0).is_err());
        assert!(init_encoder(1, 1, 0.0, &[1.0], 0).is_err());
        assert!(init_encoder(1, 1, 1.0, &[-1.0], 0).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let e = init_encoder(2, 8, 1.0, &[5.0, 4.0], 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-5;
        for _ in 0..100 {
            let x = [rng.random_range(0.0..5.0), rng.random_range(0.0..4.0)];
            let jac = e.jacobian(&x);
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let (fp, fm) = (e.encode(&xp), e.encode(&xm));
                for r in 0..e.dim_out() {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    let exact = jac[r][j];
                    let err = (fd - exact).abs() / exact.abs().max(1.0);
                    assert!(err <= 1e-6, "row {r} col {j}: {fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn sin_row_derivative_formula() {
        let e = init_encoder(2, 3, 1.0, &[2.0, 3.0], 4).unwrap();
        let x = [0.7, 1.1];
        let jac = e.jacobian(&x);
        for i in 0..3 {
            let phase = 2.0 * PI * (e.freqs[i][0] * x[0] / 2.0 + e.freqs[i][1] * x[1] / 3.0);
            for j in 0..2 {
                let expect = 2.0 * PI * e.freqs[i][j] / e.scales[j] * phase.cos();
                assert!((jac[2 + i][j] - expect).abs() < 1e-14);
            }
        }
    }
}
