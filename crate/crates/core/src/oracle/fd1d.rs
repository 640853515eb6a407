//! Vertex-centred finite volumes for the interval and the radial reduction
//! of the annulus.
//!
//! Node `i` owns the control volume between the neighbouring face midpoints
//! (half cells at the ends). Face fluxes use two-point differences; end
//! velocities on pressure boundaries come from the half-cell balance so the
//! discrete divergence theorem holds exactly.

use crate::error::{DppError, Result};
use crate::oracle::linalg::BandMatrix;
use crate::oracle::{GridMeta, GridSolution};
use crate::problem::{permeability_at, BcKind, Circle, End, Geometry, Locator, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
enum EndBc {
    Pressure(f64),
    /// Outward normal velocity.
    Flux(f64),
}

/// Boundary data at the (min, max) ends for each network.
fn end_conditions(problem: &ProblemSpec) -> Result<[[EndBc; 2]; 2]> {
    let mut out = [[None, None], [None, None]];
    for seg in &problem.segments {
        let side = match seg.locator {
            Locator::End { end: End::Min }
            | Locator::Circle {
                circle: Circle::Inner,
            } => 0,
            Locator::End { end: End::Max }
            | Locator::Circle {
                circle: Circle::Outer,
            } => 1,
            _ => {
                return Err(DppError::Oracle(format!(
                    "segment '{}' is not an end or circle",
                    seg.id
                )))
            }
        };
        let net = (seg.network as usize).saturating_sub(1).min(1);
        out[net][side] = Some(match seg.kind {
            BcKind::Pressure => EndBc::Pressure(seg.value),
            BcKind::NormalVelocity => EndBc::Flux(seg.value),
        });
    }
    let get = |n: usize, s: usize| {
        out[n][s].ok_or_else(|| {
            DppError::Oracle(format!("network {} has no condition at end {s}", n + 1))
        })
    };
    Ok([[get(0, 0)?, get(0, 1)?], [get(1, 0)?, get(1, 1)?]])
}

fn check_gauge(bc: &[[EndBc; 2]; 2], beta: f64) -> Result<()> {
    let has_p = |n: usize| bc[n].iter().any(|b| matches!(b, EndBc::Pressure(_)));
    let ok = if beta > 0.0 {
        has_p(0) || has_p(1)
    } else {
        has_p(0) && has_p(1)
    };
    if ok {
        Ok(())
    } else {
        Err(DppError::Gauge(
            "pressure is determined only up to a constant: prescribe a pressure datum on at least one end".into(),
        ))
    }
}

pub fn fd_solve_1d(problem: &ProblemSpec, n_grid: usize) -> Result<GridSolution> {
    let Geometry::Interval { x_min, x_max } = problem.geometry else {
        return Err(DppError::Oracle("fd_solve_1d needs an interval".into()));
    };
    solve(problem, x_min, x_max, false, n_grid, "fv1d")
}

pub fn fd_solve_radial(problem: &ProblemSpec, n_grid: usize) -> Result<GridSolution> {
    let Geometry::Annulus { r_inner, r_outer } = problem.geometry else {
        return Err(DppError::Oracle("fd_solve_radial needs an annulus".into()));
    };
    if problem.material.body_force.iter().any(|f| *f != 0.0) {
        return Err(DppError::Oracle(
            "radial oracle does not support body forces".into(),
        ));
    }
    solve(problem, r_inner, r_outer, true, n_grid, "fv_radial")
}

fn solve(
    problem: &ProblemSpec,
    a: f64,
    b: f64,
    radial: bool,
    n: usize,
    tag: &str,
) -> Result<GridSolution> {
    problem.validate()?;
    if n < 3 {
        return Err(DppError::config("oracle grid needs at least 3 nodes"));
    }
    let mat = &problem.material;
    let probe = if radial {
        vec![0.5 * (a + b), 0.0]
    } else {
        vec![0.5 * (a + b)]
    };
    let (k1, k2) = permeability_at(mat, &probe)?;
    let k = [k1, k2];
    let (mu, beta) = (mat.mu, mat.beta);
    let force = [mat.body_force(1, 0), mat.body_force(2, 0)];
    let bc = end_conditions(problem)?;
    check_gauge(&bc, beta)?;

    let h = (b - a) / (n - 1) as f64;
    let r: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { b } else { a + i as f64 * h })
        .collect();
    let w = |x: f64| if radial { x } else { 1.0 };
    let face = |i: usize| 0.5 * (r[i] + r[i + 1]);
    // ∫ w over [lo, hi]
    let measure = |lo: f64, hi: f64| {
        if radial {
            0.5 * (hi * hi - lo * lo)
        } else {
            hi - lo
        }
    };
    let vol: Vec<f64> = (0..n)
        .map(|i| {
            let lo = if i == 0 { r[0] } else { face(i - 1) };
            let hi = if i == n - 1 { r[n - 1] } else { face(i) };
            measure(lo, hi)
        })
        .collect();
    let c = beta / mu;
    let idx = |net: usize, i: usize| 2 * i + net;

    let mut m = BandMatrix::zeros(2 * n, 3, 3);
    let mut rhs = vec![0.0; 2 * n];
    for i in 0..n {
        for net in 0..2 {
            let row = idx(net, i);
            let end = if i == 0 {
                Some(0)
            } else if i == n - 1 {
                Some(1)
            } else {
                None
            };
            if let Some(EndBc::Pressure(v)) = end.map(|e| bc[net][e]) {
                m.add(row, row, 1.0);
                rhs[row] = v;
                continue;
            }
            // outflow through faces: T (p_i - p_j) - (k/μ) w_f f (±)
            let t = k[net] / mu;
            if i + 1 < n {
                let tw = t * w(face(i)) / h;
                m.add(row, row, tw);
                m.add(row, idx(net, i + 1), -tw);
                rhs[row] += t * w(face(i)) * force[net];
            }
            if i > 0 {
                let tw = t * w(face(i - 1)) / h;
                m.add(row, row, tw);
                m.add(row, idx(net, i - 1), -tw);
                rhs[row] -= t * w(face(i - 1)) * force[net];
            }
            if let Some(EndBc::Flux(g)) = end.map(|e| bc[net][e]) {
                rhs[row] -= w(r[i]) * g;
            }
            // minus source: network 1 source -c(p1-p2), network 2 +c(p1-p2)
            let sgn = if net == 0 { 1.0 } else { -1.0 };
            m.add(row, idx(0, i), sgn * c * vol[i]);
            m.add(row, idx(1, i), -sgn * c * vol[i]);
        }
    }
    let sol = m.solve(rhs)?;
    let p = [
        (0..n).map(|i| sol[idx(0, i)]).collect::<Vec<_>>(),
        (0..n).map(|i| sol[idx(1, i)]).collect(),
    ];

    let mut u = [vec![0.0; n], vec![0.0; n]];
    for net in 0..2 {
        let t = k[net] / mu;
        for i in 1..n - 1 {
            u[net][i] = -t * ((p[net][i + 1] - p[net][i - 1]) / (2.0 * h) - force[net]);
        }
        let src = |i: usize| {
            let ex = c * (p[0][i] - p[1][i]) * vol[i];
            if net == 0 {
                -ex
            } else {
                ex
            }
        };
        // outward flux through the right face of node 0 and the left face of node n-1
        let out0 = -t * w(face(0)) * ((p[net][1] - p[net][0]) / h - force[net]);
        let out_n = t * w(face(n - 2)) * ((p[net][n - 1] - p[net][n - 2]) / h - force[net]);
        // u · n at the ends, n = -1 at the min end
        let un0 = match bc[net][0] {
            EndBc::Flux(g) => g,
            EndBc::Pressure(_) => (src(0) - out0) / w(r[0]),
        };
        let un_n = match bc[net][1] {
            EndBc::Flux(g) => g,
            EndBc::Pressure(_) => (src(n - 1) - out_n) / w(r[n - 1]),
        };
        u[net][0] = -un0;
        u[net][n - 1] = un_n;
    }
    let [p1, p2] = p;
    let [u1, u2] = u;
    Ok(GridSolution {
        coord_name: if radial { "r" } else { "x" }.into(),
        coords: r,
        p1,
        p2,
        u1,
        u2,
        meta: GridMeta {
            problem: problem.name.clone(),
            n_grid: n,
            solver: tag.into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::problem::MaterialField;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn decoupled_equal_data_is_constant() {
        let mut p = presets::pressure1d();
        p.material.beta = 0.0;
        let s = fd_solve_1d(&p, 101).unwrap();
        assert!(s.p1.iter().all(|v| (v - 10.0).abs() < 1e-12));
        assert!(s.u1.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn pressure_problem_is_mirror_symmetric() {
        let s = fd_solve_1d(&presets::pressure1d(), 201).unwrap();
        let n = s.coords.len();
        for i in 0..n {
            assert!((s.p1[i] - s.p1[n - 1 - i]).abs() < 1e-10);
            assert!((s.u1[i] + s.u1[n - 1 - i]).abs() < 1e-8);
        }
    }

    #[test]
    fn second_order_self_convergence() {
        for p in [presets::pressure1d(), presets::mixed1d()] {
            let s1 = fd_solve_1d(&p, 101).unwrap();
            let s2 = fd_solve_1d(&p, 201).unwrap();
            let s3 = fd_solve_1d(&p, 401).unwrap();
            let e1 = max_diff(
                &s1.p1,
                &s2.p1.iter().step_by(2).copied().collect::<Vec<_>>(),
            );
            let e2 = max_diff(
                &s2.p1,
                &s3.p1.iter().step_by(2).copied().collect::<Vec<_>>(),
            );
            assert!(
                (e1 / e2).log2() > 1.9,
                "{}: order {}",
                p.name,
                (e1 / e2).log2()
            );
        }
    }

    #[test]
    fn annulus_log_profile_when_decoupled() {
        let mut p = presets::radial2d();
        p.material.beta = 0.0;
        for s in p.segments.iter_mut().filter(|s| s.network == 2) {
            s.kind = BcKind::Pressure;
        }
        let s = fd_solve_radial(&p, 801).unwrap();
        assert!(s.p2.iter().all(|v| v.abs() < 1e-14));
        for (r, v) in s.coords.iter().zip(&s.p1) {
            let exact = (1.0 / r).ln() / (1.0f64 / 0.3).ln();
            assert!((v - exact).abs() < 1e-5);
        }
    }

    #[test]
    fn sealed_network_and_mass_balance() {
        let s = fd_solve_radial(&presets::radial2d(), 401).unwrap();
        let n = s.coords.len();
        assert!(s.u2[0].abs() < 1e-12 && s.u2[n - 1].abs() < 1e-12);
        let (ri, ro) = (s.coords[0], s.coords[n - 1]);
        let total = 2.0
            * std::f64::consts::PI
            * (ro * (s.u1[n - 1] + s.u2[n - 1]) - ri * (s.u1[0] + s.u2[0]));
        let scale = 2.0 * std::f64::consts::PI * ri * s.u1[0].abs();
        assert!(total.abs() < 1e-8 * scale.max(1.0), "net outflow {total}");
    }

    #[test]
    fn missing_datum_is_gauge_error() {
        let mut p = presets::mixed1d();
        for s in &mut p.segments {
            s.kind = BcKind::NormalVelocity;
            s.value = 0.0;
        }
        p.gauge_free = true;
        assert!(matches!(fd_solve_1d(&p, 11), Err(DppError::Gauge(_))));
    }

    #[test]
    fn body_force_balances_hydrostatic_pressure() {
        let mut p = presets::pressure1d();
        p.material = MaterialField {
            body_force: vec![1.0],
            ..p.material
        };
        p.material.beta = 0.0;
        p.segments[2].value = 11.0;
        p.segments[3].value = 2.0;
        let s = fd_solve_1d(&p, 51).unwrap();
        assert!(s.u1.iter().all(|v| v.abs() < 1e-10));
        assert!((s.p1[25] - 10.5).abs() < 1e-12);
    }
}
