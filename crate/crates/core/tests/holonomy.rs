mod common;

use common::*;
use nalgebra::Vector3;
use torlink_core::field::ChartPoint;
use torlink_core::section::{
    holonomy, holonomy_between, holonomy_invariance_residual, normal_decompose, return_identity_residual,
    return_map, FlowSetup,
};

fn on_section(s: &FlowSetup, x: f64, y: f64) -> ChartPoint {
    s.point_on_fiber(x, y, 0.0).unwrap()
}

#[test]
fn normal_component_is_holonomy_invariant() {
    let mut rng = rng(21);
    for s in [rigid_rotation(), tilted_rotation(), annulus_col(), normally_contracting()] {
        for _ in 0..50 {
            let (x, y) = random_point(&mut rng, 0.6);
            let p = on_section(&s, x, y);
            for t in [0.25, 0.5, 1.0] {
                let r = holonomy_invariance_residual(&s, &p, t).unwrap();
                assert!(r < 1e-6, "{r} at {p:?}, t = {t}");
            }
        }
    }
}

#[test]
fn holonomies_compose_across_half_turn() {
    let mut rng = rng(22);
    let s = tilted_rotation();
    for _ in 0..20 {
        let (x, y) = random_point(&mut rng, 0.6);
        let p = on_section(&s, x, y);
        let full = holonomy(&s, &p, 1.0).unwrap();
        let first = holonomy(&s, &p, 0.5).unwrap();
        let second = holonomy_between(&s, &first.end, 0.5, 1.0).unwrap();
        assert!(second.end.distance(&full.end) < 1e-8);
        assert!((first.tau + second.tau - full.tau).abs() < 1e-8);
        let chained = second.dp * first.dp;
        assert!((chained - full.dp).abs().max() < 1e-7);
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let s = tilted_rotation();
    let mut rng = rng(23);
    let h = 1e-5;
    for _ in 0..20 {
        let (x, y) = random_point(&mut rng, 0.5);
        let p = on_section(&s, x, y);
        let rec = return_map(&s, &p).unwrap();
        for j in 0..2 {
            let e = if j == 0 { s.frame.e1(&p) } else { s.frame.e2(&p) };
            let plus = return_map(&s, &p.offset(&(e * h))).unwrap();
            let minus = return_map(&s, &p.offset(&(-e * h))).unwrap();
            let dend: Vector3<f64> = minus.end.delta_to(&plus.end) / (2.0 * h);
            let fd = s.frame.coordinates(&rec.end, &dend).unwrap();
            let scale = 1.0 + rec.dp.column(j).norm();
            assert!((fd.x - rec.dp[(0, j)]).abs() < 1e-5 * scale, "{fd:?} vs {}", rec.dp);
            assert!((fd.y - rec.dp[(1, j)]).abs() < 1e-5 * scale);
            let dtau = (plus.tau - minus.tau) / (2.0 * h);
            assert!((dtau - rec.dtau[j]).abs() < 1e-5 * (1.0 + rec.dtau[j].abs()));
        }
    }
}

#[test]
fn tilted_return_time_at_random_points() {
    let s = tilted_rotation();
    let mut rng = rng(24);
    for _ in 0..20 {
        let (x, y) = random_point(&mut rng, 0.6);
        let rec = return_map(&s, &on_section(&s, x, y)).unwrap();
        assert!((rec.tau - tilted_return_time(x, y)).abs() < 1e-8);
    }
}

#[test]
fn col_consists_of_fixed_points() {
    for s in [annulus_col(), normally_contracting(), split_winding()] {
        for x in [-0.5, -0.1, 0.2, 0.6] {
            let p = on_section(&s, x, 0.0);
            let rec = return_map(&s, &p).unwrap();
            assert!(rec.end.distance(&p) < 1e-10);
            let id = return_identity_residual(&s, &p).unwrap();
            assert!(id.residual < 1e-10 && id.lhs.abs() < 1e-10 && id.rhs.abs() < 1e-10);
        }
    }
}

#[test]
fn return_time_identity_on_tilted_rotation() {
    let s = tilted_rotation();
    let mut rng = rng(25);
    let mut checked = 0;
    while checked < 100 {
        let (x, y) = random_point(&mut rng, 0.7);
        let id = return_identity_residual(&s, &on_section(&s, x, y)).unwrap();
        if id.lhs.abs() < 1e-3 || id.rhs.abs() < 1e-3 {
            continue;
        }
        assert!(id.residual < 1e-6 * id.rhs.abs().max(1.0), "{id:?}");
        checked += 1;
    }
}

#[test]
fn return_time_identity_fails_without_commutation() {
    let s = control();
    let mut rng = rng(26);
    let worst = (0..50)
        .map(|_| {
            let (x, y) = random_point(&mut rng, 0.7);
            return_identity_residual(&s, &on_section(&s, x, y)).unwrap().residual
        })
        .fold(0.0, f64::max);
    assert!(worst > 1e-3, "{worst}");
}

#[test]
fn annulus_decomposition() {
    let s = annulus_col();
    let d = normal_decompose(&s, &ChartPoint::new(0.4, 0.3, 0.0)).unwrap();
    assert!((d.n_vec.vector() - Vector3::new(0.0, 0.3, 0.0)).norm() < 1e-12);
    assert!((d.mu - 0.4).abs() < 1e-12);
}
