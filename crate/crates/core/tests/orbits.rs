mod common;

use common::*;
use nalgebra::Vector2;
use rand::Rng;
use torlink_core::dynamics::{cone_ratio, iterate_return, segment_sweep};
use torlink_core::index::{fixed_point_spectrum, linking_numbers, FixedPointClass};
use torlink_core::section::{holonomy, return_map};

#[test]
fn derivative_of_holonomy_never_reverses_a_direction() {
    let mut rng = rng(31);
    for (s, col_is_core) in [
        (rigid_rotation(), true),
        (tilted_rotation(), true),
        (normally_contracting(), false),
        (annulus_col(), false),
    ] {
        for _ in 0..50 {
            let (x, y) = if col_is_core {
                random_point(&mut rng, 0.05)
            } else {
                (rng.gen_range(-0.6..0.6), rng.gen_range(-0.05..0.05))
            };
            let p = s.point_on_fiber(x, y, 0.0).unwrap();
            let t = rng.gen_range(0.05..1.0);
            let ang = std::f64::consts::TAU * rng.gen::<f64>();
            let v = Vector2::new(ang.cos(), ang.sin());
            let w = holonomy(&s, &p, t).unwrap().dp * v;
            let angle = (v.perp(&w)).atan2(v.dot(&w)).abs();
            assert!(std::f64::consts::PI - angle > 1e-3, "{angle} at {p:?}");
        }
    }
}

#[test]
fn contracting_orbits_limit_on_fixed_points_of_col() {
    let s = normally_contracting();
    let mut rng = rng(32);
    let tol = 1e-10;
    for _ in 0..20 {
        let x = rng.gen_range(-0.6..0.6);
        let y = rng.gen_range(-0.4..0.4);
        let o = iterate_return(&s, &s.point_on_fiber(x, y, 0.0).unwrap(), 500, tol).unwrap();
        assert!(o.converged);
        let limit = o.limit.unwrap();
        assert!(limit.y.abs() < 1e-6);
        assert!((limit.x - x).abs() < 1e-8);
        let px = return_map(&s, &limit).unwrap().end;
        assert!(px.distance(&limit) < 10.0 * tol);
        for (k, w) in o.points.windows(2).enumerate() {
            assert!(return_map(&s, &w[0]).unwrap().end.distance(&w[1]) < 1e-9, "step {k}");
        }
        assert!(o.ratio_bound.is_some_and(|r| r.is_finite()));
    }
}

#[test]
fn contracting_spectrum_and_linking() {
    let s = normally_contracting();
    let r = fixed_point_spectrum(&s, &s.point_on_fiber(0.3, 0.0, 0.0).unwrap(), 1e-10).unwrap();
    assert_eq!(r.class, FixedPointClass::PartiallyHyperbolic);
    assert!((r.eigenvalues[0].0 - (-LAMBDA).exp()).abs() < 1e-5);
    assert!((r.eigenvalues[1].0 - 1.0).abs() < 1e-8);
    let l = linking_numbers(&s, 0.25).unwrap();
    assert_eq!((l.ell_plus, l.ell_minus), (0, 0));
}

#[test]
fn cone_ratio_along_a_ray() {
    let s = normally_contracting();
    let ratios: Vec<f64> = [0.3, 0.1, 0.03, 0.01]
        .iter()
        .map(|&y| cone_ratio(&s, &s.point_on_fiber(0.2, y, 0.0).unwrap()).unwrap())
        .collect();
    assert!(ratios.iter().all(|r| r.is_finite() && *r < 1e-6), "{ratios:?}");
}

#[test]
fn sweeps_stay_small_without_linking() {
    let s = normally_contracting();
    for y in [0.05, 0.02, -0.03] {
        let sweep = segment_sweep(&s, &s.point_on_fiber(0.1, y, 0.0).unwrap()).unwrap();
        assert!(sweep.variation.abs() < 1.0, "{}", sweep.variation);
    }
}
