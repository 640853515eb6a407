//! Boundary value problem description: geometry, materials, boundary
//! segments and deterministic point sampling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};

/// A point in physical coordinates (length 1 or 2).
pub type Coords = Vec<f64>;

const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Interval {
        x_min: f64,
        x_max: f64,
    },
    /// Axis-aligned rectangle `(0, lx) x (0, ly)`.
    Rectangle {
        lx: f64,
        ly: f64,
    },
    /// Annulus centred at the origin.
    Annulus {
        r_inner: f64,
        r_outer: f64,
    },
}

impl Geometry {
    pub fn dim(&self) -> usize {
        match self {
            Geometry::Interval { .. } => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Geometry::Interval { x_min, x_max } => x_max > x_min,
            Geometry::Rectangle { lx, ly } => lx > 0.0 && ly > 0.0,
            Geometry::Annulus { r_inner, r_outer } => r_inner > 0.0 && r_outer > r_inner,
        };
        if ok {
            Ok(())
        } else {
            Err(DppError::config(format!("invalid geometry {self:?}")))
        }
    }

    /// Lebesgue measure of the domain (length or area).
    pub fn measure(&self) -> f64 {
        match *self {
            Geometry::Interval { x_min, x_max } => x_max - x_min,
            Geometry::Rectangle { lx, ly } => lx * ly,
            Geometry::Annulus { r_inner, r_outer } => PI * (r_outer * r_outer - r_inner * r_inner),
        }
    }

    /// Per-coordinate extents of the bounding box.
    pub fn extents(&self) -> Vec<f64> {
        match *self {
            Geometry::Interval { x_min, x_max } => vec![x_max - x_min],
            Geometry::Rectangle { lx, ly } => vec![lx, ly],
            Geometry::Annulus { r_outer, .. } => vec![2.0 * r_outer, 2.0 * r_outer],
        }
    }

    /// Bounding box as (lower corner, upper corner).
    pub fn bounding_box(&self) -> (Coords, Coords) {
        match *self {
            Geometry::Interval { x_min, x_max } => (vec![x_min], vec![x_max]),
            Geometry::Rectangle { lx, ly } => (vec![0.0, 0.0], vec![lx, ly]),
            Geometry::Annulus { r_outer, .. } => (vec![-r_outer, -r_outer], vec![r_outer, r_outer]),
        }
    }

    /// Closed-domain membership (boundary included).
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Geometry::Interval { x_min, x_max } => x[0] >= x_min && x[0] <= x_max,
            Geometry::Rectangle { lx, ly } => {
                x[0] >= 0.0 && x[0] <= lx && x[1] >= 0.0 && x[1] <= ly
            }
            Geometry::Annulus { r_inner, r_outer } => {
                let r = x[0].hypot(x[1]);
                r >= r_inner && r <= r_outer
            }
        }
    }

    pub fn contains_strict(&self, x: &[f64]) -> bool {
        match *self {
            Geometry::Interval { x_min, x_max } => x[0] > x_min && x[0] < x_max,
            Geometry::Rectangle { lx, ly } => x[0] > 0.0 && x[0] < lx && x[1] > 0.0 && x[1] < ly,
            Geometry::Annulus { r_inner, r_outer } => {
                let r = x[0].hypot(x[1]);
                r > r_inner && r < r_outer
            }
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Coords {
        loop {
            let x = match *self {
                Geometry::Interval { x_min, x_max } => {
                    vec![x_min + (x_max - x_min) * rng.random::<f64>()]
                }
                Geometry::Rectangle { lx, ly } => {
                    vec![lx * rng.random::<f64>(), ly * rng.random::<f64>()]
                }
                Geometry::Annulus { r_inner, r_outer } => {
                    // inverse CDF of r for uniform area density
                    let u: f64 = rng.random();
                    let r =
                        (r_inner * r_inner + u * (r_outer * r_outer - r_inner * r_inner)).sqrt();
                    let theta = 2.0 * PI * rng.random::<f64>();
                    vec![r * theta.cos(), r * theta.sin()]
                }
            };
            if self.contains_strict(&x) {
                return x;
            }
        }
    }
}

/// Uniform (by length or area) interior points; deterministic for a seed.
pub fn sample_interior(geometry: &Geometry, n: usize, seed: u64) -> Vec<Coords> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| geometry.draw(&mut rng)).collect()
}

/// Piecewise-constant scalar permeability over horizontal bands.
///
/// A band without bounds covers the whole domain. Bands are closed below and
/// open above, except the topmost band which is closed at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_hi: Option<f64>,
}

impl Band {
    pub fn whole(value: f64) -> Self {
        Band {
            value,
            y_lo: None,
            y_hi: None,
        }
    }

    pub fn y_band(lo: f64, hi: f64, value: f64) -> Self {
        Band {
            value,
            y_lo: Some(lo),
            y_hi: Some(hi),
        }
    }
}

fn band_lookup(bands: &[Band], x: &[f64]) -> Option<f64> {
    if bands.len() == 1 && bands[0].y_lo.is_none() && bands[0].y_hi.is_none() {
        return Some(bands[0].value);
    }
    let y = *x.get(1)?;
    let top = bands
        .iter()
        .filter_map(|b| b.y_hi)
        .fold(f64::NEG_INFINITY, f64::max);
    bands.iter().find_map(|b| {
        let (lo, hi) = (b.y_lo?, b.y_hi?);
        let inside = y >= lo && (y < hi || (hi == top && y <= hi));
        inside.then_some(b.value)
    })
}

fn default_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialField {
    pub mu: f64,
    pub beta: f64,
    /// gamma * b per unit volume; empty means zero.
    #[serde(default)]
    pub body_force: Vec<f64>,
    #[serde(default = "default_fraction")]
    pub phi1: f64,
    #[serde(default = "default_fraction")]
    pub phi2: f64,
    pub k1: Vec<Band>,
    pub k2: Vec<Band>,
}

impl MaterialField {
    pub fn homogeneous(mu: f64, beta: f64, k1: f64, k2: f64) -> Self {
        MaterialField {
            mu,
            beta,
            body_force: Vec::new(),
            phi1: 1.0,
            phi2: 1.0,
            k1: vec![Band::whole(k1)],
            k2: vec![Band::whole(k2)],
        }
    }

    /// Body force component `j`, scaled by the volume fraction of `network`.
    pub fn body_force(&self, network: usize, j: usize) -> f64 {
        let phi = if network == 1 { self.phi1 } else { self.phi2 };
        phi * self.body_force.get(j).copied().unwrap_or(0.0)
    }

    fn validate(&self, geometry: &Geometry) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(DppError::config("viscosity mu must be positive"));
        }
        if !(self.beta >= 0.0) {
            return Err(DppError::config(
                "transfer coefficient beta must be non-negative",
            ));
        }
        if !self.body_force.is_empty() && self.body_force.len() != geometry.dim() {
            return Err(DppError::config(
                "body_force length must match the spatial dimension",
            ));
        }
        for (name, bands) in [("k1", &self.k1), ("k2", &self.k2)] {
            if bands.is_empty() {
                return Err(DppError::config(format!("{name}: no permeability bands")));
            }
            if bands.iter().any(|b| !(b.value > 0.0)) {
                return Err(DppError::config(format!(
                    "{name}: permeabilities must be positive"
                )));
            }
            if bands.len() == 1 && bands[0].y_lo.is_none() && bands[0].y_hi.is_none() {
                continue;
            }
            let ly = match *geometry {
                Geometry::Rectangle { ly, .. } => ly,
                _ => {
                    return Err(DppError::config(format!(
                        "{name}: horizontal bands require a rectangle"
                    )))
                }
            };
            let mut ranges = Vec::with_capacity(bands.len());
            for b in bands {
                match (b.y_lo, b.y_hi) {
                    (Some(lo), Some(hi)) if hi > lo => ranges.push((lo, hi)),
                    _ => return Err(DppError::config(format!("{name}: malformed band {b:?}"))),
                }
            }
            check_partition(&mut ranges, ly)
                .map_err(|m| DppError::config(format!("{name}: {m}")))?;
        }
        Ok(())
    }
}

/// (k1, k2) at `x`.
pub fn permeability_at(material: &MaterialField, x: &[f64]) -> Result<(f64, f64)> {
    match (band_lookup(&material.k1, x), band_lookup(&material.k2, x)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(DppError::Invariant(format!(
            "no permeability band contains {x:?}"
        ))),
    }
}

fn check_partition(ranges: &mut [(f64, f64)], len: f64) -> std::result::Result<(), String> {
    ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cursor = 0.0;
    for &(lo, hi) in ranges.iter() {
        if lo < cursor - TOL {
            return Err(format!("ranges overlap near {lo}"));
        }
        if lo > cursor + TOL {
            return Err(format!("gap in coverage between {cursor} and {lo}"));
        }
        cursor = hi;
    }
    if (cursor - len).abs() > TOL {
        return Err(format!("coverage ends at {cursor}, expected {len}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Circle {
    Inner,
    Outer,
}

/// Selects a subset of the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Locator {
    End {
        end: End,
    },
    /// Part of a rectangle side, parametrised by the coordinate running along
    /// the side (y for left/right, x for bottom/top). Missing bounds mean the
    /// full side.
    Side {
        side: Side,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<f64>,
    },
    Circle {
        circle: Circle,
    },
}

impl Locator {
    pub fn side(side: Side) -> Self {
        Locator::Side {
            side,
            from: None,
            to: None,
        }
    }

    pub fn side_range(side: Side, from: f64, to: f64) -> Self {
        Locator::Side {
            side,
            from: Some(from),
            to: Some(to),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Component {
    End(u8),
    Side(u8),
    Circle(u8),
}

fn side_len(geometry: &Geometry, side: Side) -> f64 {
    match (*geometry, side) {
        (Geometry::Rectangle { ly, .. }, Side::Left | Side::Right) => ly,
        (Geometry::Rectangle { lx, .. }, Side::Bottom | Side::Top) => lx,
        _ => f64::NAN,
    }
}

/// Resolved extent of a locator: boundary component plus parameter range.
fn resolve(geometry: &Geometry, loc: &Locator) -> Option<(Component, f64, f64)> {
    match (geometry, loc) {
        (Geometry::Interval { .. }, Locator::End { end }) => {
            Some((Component::End(*end as u8), 0.0, 0.0))
        }
        (Geometry::Rectangle { .. }, Locator::Side { side, from, to }) => {
            let len = side_len(geometry, *side);
            let lo = from.unwrap_or(0.0);
            let hi = to.unwrap_or(len);
            (lo >= -TOL && hi <= len + TOL && hi > lo).then_some((
                Component::Side(*side as u8),
                lo,
                hi,
            ))
        }
        (Geometry::Annulus { .. }, Locator::Circle { circle }) => {
            Some((Component::Circle(*circle as u8), 0.0, 2.0 * PI))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    Pressure,
    NormalVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySegment {
    pub id: String,
    pub locator: Locator,
    /// Pore network, 1 (macro) or 2 (micro).
    pub network: u8,
    pub kind: BcKind,
    pub value: f64,
}

impl BoundarySegment {
    pub fn new(id: &str, locator: Locator, network: u8, kind: BcKind, value: f64) -> Self {
        BoundarySegment {
            id: id.to_string(),
            locator,
            network,
            kind,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    pub geometry: Geometry,
    pub material: MaterialField,
    pub segments: Vec<BoundarySegment>,
    /// Only velocity data: pressures are defined up to a constant and errors
    /// are computed after mean-zero datum alignment.
    #[serde(default)]
    pub gauge_free: bool,
}

/// A boundary collocation point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    pub x: Coords,
    pub normal: Coords,
    /// Tag of the boundary piece the point was drawn from.
    pub segment_id: String,
    /// Index into `ProblemSpec::segments` of the governing segment for
    /// network 1 and network 2.
    pub segments: [usize; 2],
}

/// A maximal boundary part on which both networks have a single segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPiece {
    pub id: String,
    pub segments: [usize; 2],
    component: Component,
    lo: f64,
    hi: f64,
}

impl BoundaryPiece {
    /// Length of the piece (arc length; 1 for an interval end point).
    pub fn measure(&self, geometry: &Geometry) -> f64 {
        match (self.component, geometry) {
            (Component::End(_), _) => 1.0,
            (Component::Side(_), _) => self.hi - self.lo,
            (Component::Circle(c), Geometry::Annulus { r_inner, r_outer }) => {
                let r = if c == Circle::Inner as u8 {
                    *r_inner
                } else {
                    *r_outer
                };
                2.0 * PI * r
            }
            _ => 0.0,
        }
    }

    /// Point and outward normal at parameter `t` in [0, 1] along the piece.
    pub fn point_at(&self, geometry: &Geometry, t: f64) -> (Coords, Coords) {
        let s = self.lo + t * (self.hi - self.lo);
        match (self.component, *geometry) {
            (Component::End(e), Geometry::Interval { x_min, x_max }) => {
                if e == End::Min as u8 {
                    (vec![x_min], vec![-1.0])
                } else {
                    (vec![x_max], vec![1.0])
                }
            }
            (Component::Side(side), Geometry::Rectangle { lx, ly }) => match side {
                s_ if s_ == Side::Left as u8 => (vec![0.0, s], vec![-1.0, 0.0]),
                s_ if s_ == Side::Right as u8 => (vec![lx, s], vec![1.0, 0.0]),
                s_ if s_ == Side::Bottom as u8 => (vec![s, 0.0], vec![0.0, -1.0]),
                _ => (vec![s, ly], vec![0.0, 1.0]),
            },
            (Component::Circle(c), Geometry::Annulus { r_inner, r_outer }) => {
                let (c_, s_) = (s.cos(), s.sin());
                if c == Circle::Inner as u8 {
                    (vec![r_inner * c_, r_inner * s_], vec![-c_, -s_])
                } else {
                    (vec![r_outer * c_, r_outer * s_], vec![c_, s_])
                }
            }
            _ => unreachable!("piece does not belong to geometry"),
        }
    }
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.material.validate(&self.geometry)?;
        let mut has_pressure = false;
        for seg in &self.segments {
            if seg.network != 1 && seg.network != 2 {
                return Err(DppError::config(format!(
                    "segment '{}': network must be 1 or 2",
                    seg.id
                )));
            }
            if !seg.value.is_finite() {
                return Err(DppError::config(format!(
                    "segment '{}': non-finite value",
                    seg.id
                )));
            }
            if resolve(&self.geometry, &seg.locator).is_none() {
                return Err(DppError::config(format!(
                    "segment '{}': locator selects an empty set on this geometry",
                    seg.id
                )));
            }
            has_pressure |= seg.kind == BcKind::Pressure;
        }
        for net in [1u8, 2] {
            self.check_network_coverage(net)?;
        }
        if !has_pressure && !self.gauge_free {
            return Err(DppError::Gauge(
                "no pressure segment fixes the pressure datum; add one or mark the problem gauge_free".into(),
            ));
        }
        Ok(())
    }

    fn components(&self) -> Vec<(Component, f64)> {
        match self.geometry {
            Geometry::Interval { .. } => vec![(Component::End(0), 0.0), (Component::End(1), 0.0)],
            Geometry::Rectangle { lx, ly } => vec![
                (Component::Side(Side::Left as u8), ly),
                (Component::Side(Side::Right as u8), ly),
                (Component::Side(Side::Bottom as u8), lx),
                (Component::Side(Side::Top as u8), lx),
            ],
            Geometry::Annulus { .. } => vec![
                (Component::Circle(0), 2.0 * PI),
                (Component::Circle(1), 2.0 * PI),
            ],
        }
    }

    fn check_network_coverage(&self, net: u8) -> Result<()> {
        for (comp, len) in self.components() {
            let mut ranges: Vec<(f64, f64)> = Vec::new();
            let mut count = 0;
            for seg in self.segments.iter().filter(|s| s.network == net) {
                if let Some((c, lo, hi)) = resolve(&self.geometry, &seg.locator) {
                    if c == comp {
                        count += 1;
                        ranges.push((lo, hi));
                    }
                }
            }
            let ok = match comp {
                Component::End(_) => {
                    if count != 1 {
                        Err(format!("{count} segments on interval end {comp:?}"))
                    } else {
                        Ok(())
                    }
                }
                Component::Circle(_) => {
                    if count != 1 {
                        Err(format!("{count} segments on circle {comp:?}"))
                    } else {
                        Ok(())
                    }
                }
                Component::Side(_) => check_partition(&mut ranges, len),
            };
            ok.map_err(|m| {
                DppError::config(format!("network {net} boundary not partitioned: {m}"))
            })?;
        }
        Ok(())
    }

    /// Common refinement of both networks' boundary partitions.
    pub fn boundary_pieces(&self) -> Result<Vec<BoundaryPiece>> {
        let mut pieces = Vec::new();
        for (comp, _) in self.components() {
            let on_comp: Vec<(usize, f64, f64, u8)> = self
                .segments
                .iter()
                .enumerate()
                .filter_map(|(i, s)| {
                    resolve(&self.geometry, &s.locator)
                        .filter(|(c, _, _)| *c == comp)
                        .map(|(_, lo, hi)| (i, lo, hi, s.network))
                })
                .collect();
            let mut cuts: Vec<f64> = on_comp
                .iter()
                .flat_map(|&(_, lo, hi, _)| [lo, hi])
                .collect();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|a, b| (*a - *b).abs() <= TOL);
            let spans: Vec<(f64, f64)> = if matches!(comp, Component::End(_)) {
                vec![(0.0, 0.0)]
            } else {
                cuts.windows(2).map(|w| (w[0], w[1])).collect()
            };
            for (lo, hi) in spans {
                let mid = 0.5 * (lo + hi);
                let find = |net: u8| {
                    on_comp
                        .iter()
                        .find(|&&(_, a, b, n)| n == net && mid >= a - TOL && mid <= b + TOL)
                        .map(|&(i, ..)| i)
                };
                let (Some(a), Some(b)) = (find(1), find(2)) else {
                    return Err(DppError::config(format!(
                        "boundary part {comp:?} [{lo}, {hi}] is unconstrained"
                    )));
                };
                pieces.push(BoundaryPiece {
                    id: format!("{}+{}", self.segments[a].id, self.segments[b].id),
                    segments: [a, b],
                    component: comp,
                    lo,
                    hi,
                });
            }
        }
        Ok(pieces)
    }

    /// The segment governing `network` at a boundary point (by locator).
    pub fn segment_for(&self, network: u8, x: &[f64]) -> Option<usize> {
        self.segments
            .iter()
            .position(|s| s.network == network && locator_contains(&self.geometry, &s.locator, x))
    }
}

/// Whether a boundary point lies on the subset selected by `loc`.
pub fn locator_contains(geometry: &Geometry, loc: &Locator, x: &[f64]) -> bool {
    const ON: f64 = 1e-9;
    let Some((comp, lo, hi)) = resolve(geometry, loc) else {
        return false;
    };
    match (comp, *geometry) {
        (Component::End(e), Geometry::Interval { x_min, x_max }) => {
            let at = if e == 0 { x_min } else { x_max };
            (x[0] - at).abs() <= ON
        }
        (Component::Side(s), Geometry::Rectangle { lx, ly }) => {
            let (on, t) = match s {
                0 => (x[0].abs() <= ON, x[1]),
                1 => ((x[0] - lx).abs() <= ON, x[1]),
                2 => (x[1].abs() <= ON, x[0]),
                _ => ((x[1] - ly).abs() <= ON, x[0]),
            };
            on && t >= lo - ON && t <= hi + ON
        }
        (Component::Circle(c), Geometry::Annulus { r_inner, r_outer }) => {
            let r = if c == 0 { r_inner } else { r_outer };
            (x[0].hypot(x[1]) - r).abs() <= ON
        }
        _ => false,
    }
}

/// `n_per_segment` points on every boundary piece, uniform in arc length.
pub fn sample_boundary(
    problem: &ProblemSpec,
    n_per_segment: usize,
    seed: u64,
) -> Result<Vec<BoundaryPoint>> {
    if n_per_segment == 0 {
        return Err(DppError::config("n_per_segment must be at least 1"));
    }
    let pieces = problem.boundary_pieces()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pieces.len() * n_per_segment);
    for piece in &pieces {
        for _ in 0..n_per_segment {
            let t = match piece.component {
                Component::End(_) => 0.0,
                _ => loop {
                    let t: f64 = rng.random();
                    if t > 0.0 {
                        break t;
                    }
                },
            };
            let (x, normal) = piece.point_at(&problem.geometry, t);
            out.push(BoundaryPoint {
                x,
                normal,
                segment_id: piece.id.clone(),
                segments: piece.segments,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn interior_sampling_is_deterministic_and_inside() {
        let g = Geometry::Interval {
            x_min: 0.0,
            x_max: 1.0,
        };
        let a = sample_interior(&g, 3, 7);
        let b = sample_interior(&g, 3, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x[0] > 0.0 && x[0] < 1.0));

        let r = Geometry::Rectangle { lx: 5.0, ly: 4.0 };
        let p = &sample_interior(&r, 1, 3)[0];
        assert!(p[0] > 0.0 && p[0] < 5.0 && p[1] > 0.0 && p[1] < 4.0);
    }

    #[test]
    fn annulus_sampling_is_uniform_in_area() {
        let g = Geometry::Annulus {
            r_inner: 0.3,
            r_outer: 1.0,
        };
        let pts = sample_interior(&g, 10_000, 11);
        let mean_r2 = pts.iter().map(|x| x[0] * x[0] + x[1] * x[1]).sum::<f64>() / pts.len() as f64;
        assert!((mean_r2 - 0.545).abs() < 0.01, "mean r^2 = {mean_r2}");
    }

    #[test]
    fn annulus_chi_square_over_radial_bins() {
        let (ri, ro) = (0.3f64, 1.0f64);
        let g = Geometry::Annulus {
            r_inner: ri,
            r_outer: ro,
        };
        let n = 100_000;
        let pts = sample_interior(&g, n, 5);
        // bins of equal area: edges at sqrt(ri^2 + k/10 (ro^2 - ri^2))
        let mut counts = [0usize; 10];
        for x in &pts {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let k = (((r2 - ri * ri) / (ro * ro - ri * ri)) * 10.0).floor() as usize;
            counts[k.min(9)] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square 99% quantile with 9 degrees of freedom
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn rectangle_left_side_normals() {
        let p = presets::layered2d();
        let pts = sample_boundary(&p, 8, 1).unwrap();
        for bp in pts.iter().filter(|b| b.x[0] == 0.0) {
            assert_eq!(bp.normal, vec![-1.0, 0.0]);
        }
    }

    #[test]
    fn annulus_inner_point_at_angle_zero() {
        let p = presets::radial2d();
        let pieces = p.boundary_pieces().unwrap();
        let inner = pieces.iter().find(|pc| pc.id.starts_with("inner")).unwrap();
        let (x, n) = inner.point_at(&p.geometry, 0.0);
        assert!((x[0] - 0.3).abs() < 1e-15 && x[1].abs() < 1e-15);
        assert!((n[0] + 1.0).abs() < 1e-15 && n[1].abs() < 1e-15);
    }

    #[test]
    fn interval_right_end() {
        let p = presets::pressure1d();
        let pts = sample_boundary(&p, 1, 0).unwrap();
        assert_eq!(pts.len(), 2);
        let right = pts.iter().find(|b| b.x[0] == 1.0).unwrap();
        assert_eq!(right.normal, vec![1.0]);
    }

    #[test]
    fn boundary_points_map_to_one_segment_per_network() {
        for p in presets::all() {
            let pts = sample_boundary(&p, 16, 2).unwrap();
            for bp in &pts {
                let norm = bp.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
                for net in [1u8, 2] {
                    let matching: Vec<usize> = p
                        .segments
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| {
                            s.network == net && locator_contains(&p.geometry, &s.locator, &bp.x)
                        })
                        .map(|(i, _)| i)
                        .collect();
                    assert!(
                        matching.contains(&bp.segments[net as usize - 1]),
                        "{}: {:?}",
                        p.name,
                        bp
                    );
                    // interior points of a piece hit exactly one segment
                    assert_eq!(matching.len(), 1, "{}: {:?}", p.name, bp);
                }
            }
        }
    }

    #[test]
    fn empty_locator_names_the_segment() {
        let mut p = presets::footing2d();
        p.segments[0].locator = Locator::side_range(Side::Top, 3.0, 3.0);
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains(&p.segments[0].id), "{err}");
    }

    #[test]
    fn overlapping_segments_rejected() {
        let mut p = presets::footing2d();
        let extra = BoundarySegment::new(
            "dup",
            Locator::side_range(Side::Top, 1.0, 3.0),
            1,
            BcKind::Pressure,
            0.0,
        );
        p.segments.push(extra);
        assert!(p.validate().is_err());
    }

    #[test]
    fn missing_datum_is_a_gauge_error() {
        let mut p = presets::layered2d();
        p.gauge_free = false;
        assert!(matches!(p.validate(), Err(DppError::Gauge(_))));
    }

    #[test]
    fn permeability_lookup() {
        let m = MaterialField::homogeneous(1.0, 1.0, 1.0, 0.01);
        assert_eq!(permeability_at(&m, &[0.3]).unwrap(), (1.0, 0.01));
        let f = presets::footing2d();
        assert_eq!(
            permeability_at(&f.material, &[4.0, 2.0]).unwrap(),
            (1000.0, 10.0)
        );

        let two = MaterialField {
            k1: vec![Band::y_band(0.0, 1.0, 1.0), Band::y_band(1.0, 2.0, 5.0)],
            k2: vec![Band::y_band(0.0, 1.0, 0.1), Band::y_band(1.0, 2.0, 0.5)],
            ..MaterialField::homogeneous(1.0, 1.0, 1.0, 1.0)
        };
        assert_eq!(permeability_at(&two, &[0.5, 1.5]).unwrap(), (5.0, 0.5));
        // closed below, open above; top band closed at both ends
        assert_eq!(permeability_at(&two, &[0.5, 1.0]).unwrap(), (5.0, 0.5));
        assert_eq!(permeability_at(&two, &[0.5, 2.0]).unwrap(), (5.0, 0.5));
        assert_eq!(permeability_at(&two, &[0.5, 0.0]).unwrap(), (1.0, 0.1));
        assert!(permeability_at(&two, &[0.5, 2.5]).is_err());
    }

    #[test]
    fn presets_validate() {
        for p in presets::all() {
            p.validate().unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
    }
}
