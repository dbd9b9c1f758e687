#![allow(dead_code)]

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use torlink_core::field::{
    ChartPoint, DeclaredCol, FieldPair, FieldSpec, SolidTorusDomain, TiltedFibration,
};
use torlink_core::section::FlowSetup;

pub const A: f64 = 0.7;
pub const C: f64 = 0.3;
pub const LAMBDA: f64 = 0.5;

pub fn setup(x: FieldSpec, y: FieldSpec, tilt: f64, col: bool) -> FlowSetup {
    let domain =
        SolidTorusDomain::new(1.0).with_fibration(Arc::new(TiltedFibration::tilted(tilt)));
    let mut pair = FieldPair::new(x, y, domain).unwrap();
    if col {
        pair = pair.with_declared_col(DeclaredCol::YZero);
    }
    FlowSetup::new(pair, 1e-11).unwrap()
}

pub fn rotation_y() -> FieldSpec {
    FieldSpec::new(|p| Vector3::new(-A * p.y, A * p.x, 1.0))
}

/// `X = (x, y, 0) + (x² + y²)·Y` with `Y` the rigid rotation.
pub fn rotation_x() -> FieldSpec {
    FieldSpec::new(|p| {
        let f = p.x * p.x + p.y * p.y;
        Vector3::new(p.x - f * A * p.y, p.y + f * A * p.x, f)
    })
}

pub fn rigid_rotation() -> FlowSetup {
    setup(rotation_x(), rotation_y(), 0.0, false)
}

pub fn tilted_rotation() -> FlowSetup {
    setup(rotation_x(), rotation_y(), C, false)
}

pub fn annulus_col() -> FlowSetup {
    let h = |x: f64| 0.8 + 0.5 * x;
    setup(
        FieldSpec::new(move |p| Vector3::new(0.0, p.y, p.x * h(p.x))),
        FieldSpec::new(move |p| Vector3::new(0.0, 0.0, h(p.x))),
        0.0,
        true,
    )
}

pub fn contraction(y: f64) -> f64 {
    -LAMBDA * y / (1.0 + y * y)
}

pub fn normally_contracting() -> FlowSetup {
    setup(
        FieldSpec::new(|p| Vector3::new(0.0, (p.x + 1.0) * contraction(p.y), p.x)),
        FieldSpec::new(|p| Vector3::new(0.0, contraction(p.y), 1.0)),
        0.0,
        true,
    )
}

/// Normal part `|y|·e^{2πi·d·θ}` with `d` chosen by the sign of `y`, `μ = x`.
pub fn model_field(d_plus: i64, d_minus: i64) -> FieldSpec {
    FieldSpec::new(move |p| {
        let d = if p.y >= 0.0 { d_plus } else { d_minus } as f64;
        let ang = TAU * d * p.theta;
        Vector3::new(p.y.abs() * ang.cos(), p.y.abs() * ang.sin(), p.x)
    })
}

pub fn vertical() -> FieldSpec {
    FieldSpec::constant(Vector3::new(0.0, 0.0, 1.0))
}

/// `ℓ⁺ = 1`, `ℓ⁻ = 0`.
pub fn split_winding_x() -> FieldSpec {
    FieldSpec::new(|p| {
        let (pos, neg) = (0.5 * (p.y + p.y.abs()), 0.5 * (p.y - p.y.abs()));
        let ang = TAU * p.theta;
        Vector3::new(pos * ang.cos() + neg, pos * ang.sin(), p.x)
    })
}

pub fn split_winding() -> FlowSetup {
    setup(split_winding_x(), vertical(), 0.0, true)
}

pub fn control() -> FlowSetup {
    setup(
        FieldSpec::constant(Vector3::new(1.0, 0.0, 0.0)),
        FieldSpec::new(|p| Vector3::new(-p.y, p.x, 1.0)),
        C,
        false,
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point of the disc of radius `r` at angle `theta`.
pub fn random_point(rng: &mut ChaCha8Rng, r: f64) -> (f64, f64) {
    let rad = r * rng.gen::<f64>().sqrt();
    let ang = TAU * rng.gen::<f64>();
    (rad * ang.cos(), rad * ang.sin())
}

pub fn random_chart_point(rng: &mut ChaCha8Rng, r: f64) -> ChartPoint {
    let (x, y) = random_point(rng, r);
    ChartPoint::new(x, y, rng.gen())
}

/// Return time of the tilted rigid rotation: `τ = 1 + c·(x(τ) − x₀)`.
pub fn tilted_return_time(x0: f64, y0: f64) -> f64 {
    let xt = |t: f64| x0 * (A * t).cos() - y0 * (A * t).sin();
    let dxt = |t: f64| -A * x0 * (A * t).sin() - A * y0 * (A * t).cos();
    let mut t = 1.0;
    for _ in 0..50 {
        let g = t - 1.0 - C * (xt(t) - x0);
        t -= g / (1.0 - C * dxt(t));
    }
    t
}
