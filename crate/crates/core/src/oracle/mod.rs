//! Reference solutions and error metrics.

pub mod fd1d;
pub mod fd2d;
pub mod linalg;

use std::path::Path;

use crate::error::{DppError, Result};
use crate::net::FieldSample;
use crate::problem::{
    permeability_at, BcKind, Geometry, Locator, MaterialField, ProblemSpec, Side,
};

pub use fd1d::{fd_solve_1d, fd_solve_radial};
pub use fd2d::{fd_solve_rect, Grid2dSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    pub problem: String,
    pub n_grid: usize,
    pub solver: String,
}

/// Nodal solution on an ordered 1D grid (in `x`, or in `r` for the annulus
/// with radial velocity components).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub coord_name: String,
    pub coords: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub meta: GridMeta,
}

fn lerp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let k = xs.partition_point(|v| *v <= x).clamp(1, n - 1);
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    (1.0 - t) * ys[k - 1] + t * ys[k]
}

impl GridSolution {
    pub fn is_radial(&self) -> bool {
        self.coord_name == "r"
    }

    /// Linearly interpolated fields at a physical point. Derivative entries
    /// are left at zero.
    pub fn sample_at(&self, x: &[f64]) -> FieldSample {
        if self.is_radial() {
            let r = x[0].hypot(x[1]);
            let (c, s) = (x[0] / r, x[1] / r);
            let (u1, u2) = (
                lerp(&self.coords, &self.u1, r),
                lerp(&self.coords, &self.u2, r),
            );
            FieldSample {
                p1: lerp(&self.coords, &self.p1, r),
                p2: lerp(&self.coords, &self.p2, r),
                u1: vec![u1 * c, u1 * s],
                u2: vec![u2 * c, u2 * s],
                ..FieldSample::zeros(2)
            }
        } else {
            FieldSample {
                p1: lerp(&self.coords, &self.p1, x[0]),
                p2: lerp(&self.coords, &self.p2, x[0]),
                u1: vec![lerp(&self.coords, &self.u1, x[0])],
                u2: vec![lerp(&self.coords, &self.u2, x[0])],
                ..FieldSample::zeros(1)
            }
        }
    }

    pub fn header(&self) -> [&str; 5] {
        [
            if self.is_radial() { "r" } else { "x" },
            "p1",
            "p2",
            "u1",
            "u2",
        ]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for i in 0..self.coords.len() {
            w.serialize((
                self.coords[i],
                self.p1[i],
                self.p2[i],
                self.u1[i],
                self.u2[i],
            ))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, problem: &str) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let coord = r.headers()?.get(0).unwrap_or("x").to_string();
        if !["x", "r"].contains(&coord.as_str()) {
            return Err(DppError::config(format!(
                "unexpected grid header '{coord}'"
            )));
        }
        let mut g = GridSolution {
            coord_name: coord,
            coords: vec![],
            p1: vec![],
            p2: vec![],
            u1: vec![],
            u2: vec![],
            meta: GridMeta {
                problem: problem.into(),
                n_grid: 0,
                solver: "csv".into(),
            },
        };
        for rec in r.deserialize() {
            let (x, p1, p2, u1, u2): (f64, f64, f64, f64, f64) = rec?;
            g.coords.push(x);
            g.p1.push(p1);
            g.p2.push(p2);
            g.u1.push(u1);
            g.u2.push(u2);
        }
        if g.coords.len() < 2 || g.coords.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DppError::config(
                "grid coordinates must be strictly increasing",
            ));
        }
        g.meta.n_grid = g.coords.len();
        Ok(g)
    }
}

/// Exact patch-test solution of the layered problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredExact {
    pub material: MaterialField,
    pub lx: f64,
}

impl LayeredExact {
    pub fn eval(&self, x: &[f64]) -> Result<FieldSample> {
        let (k1, k2) = permeability_at(&self.material, x)?;
        let mu = self.material.mu;
        let p = 0.5 * self.lx - x[0];
        Ok(FieldSample {
            p1: p,
            p2: p,
            u1: vec![k1 / mu, 0.0],
            u2: vec![k2 / mu, 0.0],
            grad_p1: vec![-1.0, 0.0],
            grad_p2: vec![-1.0, 0.0],
            div_u1: 0.0,
            div_u2: 0.0,
        })
    }
}

pub fn layered_exact(problem: &ProblemSpec) -> Result<LayeredExact> {
    problem.validate()?;
    let Geometry::Rectangle { lx, .. } = problem.geometry else {
        return Err(DppError::Oracle(
            "layered solution needs a rectangle".into(),
        ));
    };
    let mat = &problem.material;
    for seg in &problem.segments {
        let Locator::Side { side, from, to } = seg.locator else {
            return Err(DppError::Oracle(format!(
                "segment '{}' is not a rectangle side",
                seg.id
            )));
        };
        if seg.kind != BcKind::NormalVelocity {
            return Err(DppError::Oracle(format!(
                "segment '{}': patch test uses velocity data only",
                seg.id
            )));
        }
        let expected = match side {
            Side::Bottom | Side::Top => 0.0,
            Side::Left | Side::Right => {
                let (lo, hi) = (from.unwrap_or(0.0), to.unwrap_or(f64::NAN));
                let y = if hi.is_finite() { 0.5 * (lo + hi) } else { lo };
                let (k1, k2) = permeability_at(mat, &[0.0, y])?;
                let k = if seg.network == 1 { k1 } else { k2 };
                let sign = if side == Side::Left { -1.0 } else { 1.0 };
                sign * k / mat.mu
            }
        };
        if (seg.value - expected).abs() > 1e-12 * expected.abs().max(1.0) {
            return Err(DppError::Oracle(format!(
                "segment '{}' prescribes {} but the patch test needs {expected}",
                seg.id, seg.value
            )));
        }
    }
    if mat.body_force.iter().any(|f| *f != 0.0) {
        return Err(DppError::Oracle("patch test has no body force".into()));
    }
    Ok(LayeredExact {
        material: mat.clone(),
        lx,
    })
}

/// Relative L2 errors per field.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldErrors {
    pub p1: f64,
    pub p2: f64,
    pub u1: f64,
    pub u2: f64,
}

pub const NORM_FLOOR: f64 = 1e-12;

pub fn rel_l2(pred: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = pred
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    num.sqrt() / den.sqrt().max(NORM_FLOOR)
}

/// Shift both pressures by a common constant so that `p1` has zero mean.
pub fn align_datum(samples: &mut [FieldSample]) {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|s| s.p1).sum::<f64>() / n;
    for s in samples {
        s.p1 -= mean;
        s.p2 -= mean;
    }
}

pub fn l2_error(pred: &[FieldSample], reference: &[FieldSample], gauge_free: bool) -> FieldErrors {
    let (mut pred, mut reference) = (pred.to_vec(), reference.to_vec());
    if gauge_free {
        align_datum(&mut pred);
        align_datum(&mut reference);
    }
    let flat = |s: &[FieldSample], f: fn(&FieldSample) -> Vec<f64>| {
        s.iter().flat_map(f).collect::<Vec<f64>>()
    };
    FieldErrors {
        p1: rel_l2(
            &flat(&pred, |s| vec![s.p1]),
            &flat(&reference, |s| vec![s.p1]),
        ),
        p2: rel_l2(
            &flat(&pred, |s| vec![s.p2]),
            &flat(&reference, |s| vec![s.p2]),
        ),
        u1: rel_l2(
            &flat(&pred, |s| s.u1.clone()),
            &flat(&reference, |s| s.u1.clone()),
        ),
        u2: rel_l2(
            &flat(&pred, |s| s.u2.clone()),
            &flat(&reference, |s| s.u2.clone()),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{residuals, LocalMaterial};
    use crate::presets;

    #[test]
    fn layered_exact_satisfies_residuals() {
        let p = presets::layered2d();
        let ex = layered_exact(&p).unwrap();
        for y in [0.1, 1.0, 2.0, 3.9] {
            let x = [1.3, y];
            let fs = ex.eval(&x).unwrap();
            let m = LocalMaterial::at(&p.material, &x).unwrap();
            assert!(residuals(&fs, &m, None).norm() < 1e-14);
            assert_eq!(fs.grad_p1, vec![-1.0, 0.0]);
        }
        assert_eq!(ex.eval(&[0.0, 0.1]).unwrap().u1, vec![1.0, 0.0]);
    }

    #[test]
    fn inconsistent_patch_data_rejected() {
        let mut p = presets::layered2d();
        p.segments[0].value *= 2.0;
        assert!(layered_exact(&p).is_err());
    }

    #[test]
    fn error_metric_basics() {
        let reference: Vec<FieldSample> = (0..5)
            .map(|i| FieldSample {
                p1: i as f64,
                p2: 1.0,
                u1: vec![2.0],
                u2: vec![-1.0],
                ..FieldSample::zeros(1)
            })
            .collect();
        let e = l2_error(&reference, &reference, false);
        assert_eq!((e.p1, e.p2, e.u1, e.u2), (0.0, 0.0, 0.0, 0.0));
        let zero = vec![FieldSample::zeros(1); 5];
        let e = l2_error(&zero, &reference, false);
        assert_eq!((e.p1, e.p2, e.u1, e.u2), (1.0, 1.0, 1.0, 1.0));
        let shifted: Vec<_> = reference
            .iter()
            .map(|s| FieldSample {
                p1: s.p1 + 3.0,
                p2: s.p2 + 3.0,
                ..s.clone()
            })
            .collect();
        let e = l2_error(&shifted, &reference, true);
        assert!(e.p1 < 1e-15 && e.p2 < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let g = fd_solve_radial(&presets::radial2d(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        g.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("r,p1,p2,u1,u2\n"));
        let back = GridSolution::read_csv(&path, "radial2d").unwrap();
        assert_eq!(back.coords, g.coords);
        assert_eq!(back.u2, g.u2);
    }
}
