//! Benchmark boundary value problems.

use crate::problem::{
    Band, BcKind, BoundarySegment, Circle, End, Geometry, Locator, MaterialField, ProblemSpec, Side,
};

pub const NAMES: [&str; 6] = [
    "pressure1d",
    "mixed1d",
    "radial2d",
    "layered2d",
    "footing2d",
    "inverse2d",
];

/// Layer permeabilities of the layered patch test, bottom to top: (k1, k2).
pub const LAYERS: [(f64, f64); 5] = [(1.0, 0.1), (0.5, 0.2), (2.0, 0.05), (0.5, 0.2), (1.0, 0.1)];
pub const LAYER_HEIGHT: f64 = 0.8;

/// Outlet (production well) on the right edge of the inversion rectangle.
pub const OUTLET: (f64, f64) = (0.3, 0.7);

fn seg(id: &str, locator: Locator, network: u8, kind: BcKind, value: f64) -> BoundarySegment {
    BoundarySegment::new(id, locator, network, kind, value)
}

fn end(e: End) -> Locator {
    Locator::End { end: e }
}

/// Macro and micro pressures prescribed at both ends.
pub fn pressure1d() -> ProblemSpec {
    use BcKind::Pressure;
    ProblemSpec {
        name: "pressure1d".into(),
        geometry: Geometry::Interval {
            x_min: 0.0,
            x_max: 1.0,
        },
        material: MaterialField::homogeneous(1.0, 1.0, 1.0, 0.01),
        segments: vec![
            seg("left_p1", end(End::Min), 1, Pressure, 10.0),
            seg("left_p2", end(End::Min), 2, Pressure, 1.0),
            seg("right_p1", end(End::Max), 1, Pressure, 10.0),
            seg("right_p2", end(End::Max), 2, Pressure, 1.0),
        ],
        gauge_free: false,
    }
}

/// Macro pressures at both ends, sealed micro network.
pub fn mixed1d() -> ProblemSpec {
    use BcKind::{NormalVelocity, Pressure};
    ProblemSpec {
        name: "mixed1d".into(),
        geometry: Geometry::Interval {
            x_min: 0.0,
            x_max: 1.0,
        },
        material: MaterialField::homogeneous(1.0, 1.0, 1.0, 0.01),
        segments: vec![
            seg("left_p1", end(End::Min), 1, Pressure, 10.0),
            seg("left_u2", end(End::Min), 2, NormalVelocity, 0.0),
            seg("right_p1", end(End::Max), 1, Pressure, 1.0),
            seg("right_u2", end(End::Max), 2, NormalVelocity, 0.0),
        ],
        gauge_free: false,
    }
}

/// Annular filter: unit macro pressure inside, ambient outside, sealed micro network.
pub fn radial2d() -> ProblemSpec {
    use BcKind::{NormalVelocity, Pressure};
    let inner = Locator::Circle {
        circle: Circle::Inner,
    };
    let outer = Locator::Circle {
        circle: Circle::Outer,
    };
    ProblemSpec {
        name: "radial2d".into(),
        geometry: Geometry::Annulus {
            r_inner: 0.3,
            r_outer: 1.0,
        },
        material: MaterialField::homogeneous(1.0, 1.0, 1.0, 0.01),
        segments: vec![
            seg("inner_p1", inner.clone(), 1, Pressure, 1.0),
            seg("inner_u2", inner, 2, NormalVelocity, 0.0),
            seg("outer_p1", outer.clone(), 1, Pressure, 0.0),
            seg("outer_u2", outer, 2, NormalVelocity, 0.0),
        ],
        gauge_free: false,
    }
}

/// Five horizontal layers driven by per-layer normal velocities k/mu.
pub fn layered2d() -> ProblemSpec {
    use BcKind::NormalVelocity;
    let mu = 1.0;
    let (lx, ly) = (5.0, LAYER_HEIGHT * LAYERS.len() as f64);
    let mut k1 = Vec::new();
    let mut k2 = Vec::new();
    let mut segments = Vec::new();
    for (i, &(a, b)) in LAYERS.iter().enumerate() {
        let (lo, hi) = (LAYER_HEIGHT * i as f64, LAYER_HEIGHT * (i + 1) as f64);
        k1.push(Band::y_band(lo, hi, a));
        k2.push(Band::y_band(lo, hi, b));
        for (side, sign, tag) in [(Side::Left, -1.0, "left"), (Side::Right, 1.0, "right")] {
            let loc = Locator::side_range(side, lo, hi);
            segments.push(seg(
                &format!("{tag}{i}_u1"),
                loc.clone(),
                1,
                NormalVelocity,
                sign * a / mu,
            ));
            segments.push(seg(
                &format!("{tag}{i}_u2"),
                loc,
                2,
                NormalVelocity,
                sign * b / mu,
            ));
        }
    }
    for (side, tag) in [(Side::Bottom, "bottom"), (Side::Top, "top")] {
        segments.push(seg(
            &format!("{tag}_u1"),
            Locator::side(side),
            1,
            NormalVelocity,
            0.0,
        ));
        segments.push(seg(
            &format!("{tag}_u2"),
            Locator::side(side),
            2,
            NormalVelocity,
            0.0,
        ));
    }
    ProblemSpec {
        name: "layered2d".into(),
        geometry: Geometry::Rectangle { lx, ly },
        material: MaterialField {
            k1,
            k2,
            ..MaterialField::homogeneous(mu, 1.0, 1.0, 1.0)
        },
        segments,
        gauge_free: true,
    }
}

/// Strip footing: loaded strip T1, impermeable T2, vented T3 on top.
pub fn footing2d() -> ProblemSpec {
    use BcKind::{NormalVelocity, Pressure};
    let (lx, ly) = (10.0, 5.0);
    let t1 = Locator::side_range(Side::Top, 0.0, 2.5);
    let t2 = Locator::side_range(Side::Top, 2.5, 7.5);
    let t3 = Locator::side_range(Side::Top, 7.5, 10.0);
    let mut segments = vec![
        seg("t1_p1", t1.clone(), 1, Pressure, 100.0),
        seg("t1_u2", t1, 2, NormalVelocity, 0.0),
        seg("t2_u1", t2.clone(), 1, NormalVelocity, 0.0),
        seg("t2_u2", t2, 2, NormalVelocity, 0.0),
        seg("t3_p1", t3.clone(), 1, Pressure, 0.0),
        seg("t3_u2", t3, 2, NormalVelocity, 0.0),
    ];
    for (side, tag) in [
        (Side::Left, "left"),
        (Side::Right, "right"),
        (Side::Bottom, "bottom"),
    ] {
        segments.push(seg(
            &format!("{tag}_u1"),
            Locator::side(side),
            1,
            NormalVelocity,
            0.0,
        ));
        segments.push(seg(
            &format!("{tag}_u2"),
            Locator::side(side),
            2,
            NormalVelocity,
            0.0,
        ));
    }
    ProblemSpec {
        name: "footing2d".into(),
        geometry: Geometry::Rectangle { lx, ly },
        material: MaterialField::homogeneous(1.0, 1.0, 1000.0, 10.0),
        segments,
        gauge_free: false,
    }
}

/// Pressure-driven rectangle used for mass-transfer coefficient inversion.
pub fn inverse2d(beta: f64) -> ProblemSpec {
    use BcKind::{NormalVelocity, Pressure};
    let (lx, ly) = (1.5, 1.0);
    let (o_lo, o_hi) = OUTLET;
    let outlet = Locator::side_range(Side::Right, o_lo, o_hi);
    let below = Locator::side_range(Side::Right, 0.0, o_lo);
    let above = Locator::side_range(Side::Right, o_hi, ly);
    let mut segments = vec![
        seg("left_p1", Locator::side(Side::Left), 1, Pressure, 1.0),
        seg("left_u2", Locator::side(Side::Left), 2, NormalVelocity, 0.0),
        seg("outlet_p1", outlet.clone(), 1, Pressure, 0.0),
        seg("outlet_p2", outlet, 2, Pressure, 0.0),
    ];
    for (loc, tag) in [(below, "right_lo"), (above, "right_hi")] {
        segments.push(seg(
            &format!("{tag}_u1"),
            loc.clone(),
            1,
            NormalVelocity,
            0.0,
        ));
        segments.push(seg(&format!("{tag}_u2"), loc, 2, NormalVelocity, 0.0));
    }
    for (side, tag) in [(Side::Bottom, "bottom"), (Side::Top, "top")] {
        segments.push(seg(
            &format!("{tag}_u1"),
            Locator::side(side),
            1,
            NormalVelocity,
            0.0,
        ));
        segments.push(seg(
            &format!("{tag}_u2"),
            Locator::side(side),
            2,
            NormalVelocity,
            0.0,
        ));
    }
    ProblemSpec {
        name: "inverse2d".into(),
        geometry: Geometry::Rectangle { lx, ly },
        material: MaterialField::homogeneous(1.0, beta, 1000.0, 10.0),
        segments,
        gauge_free: false,
    }
}

/// Locator of the production-well outlet of [`inverse2d`].
pub fn outlet_locator() -> Locator {
    Locator::side_range(Side::Right, OUTLET.0, OUTLET.1)
}

pub fn by_name(name: &str) -> Option<ProblemSpec> {
    Some(match name {
        "pressure1d" => pressure1d(),
        "mixed1d" => mixed1d(),
        "radial2d" => radial2d(),
        "layered2d" => layered2d(),
        "footing2d" => footing2d(),
        "inverse2d" => inverse2d(1.0),
        _ => return None,
    })
}

pub fn all() -> Vec<ProblemSpec> {
    NAMES.iter().filter_map(|n| by_name(n)).collect()
}
