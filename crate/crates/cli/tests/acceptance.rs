//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{ensure, Context as _, Result};
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;
use torlink::run::strip_timing;
use torlink::scenarios;
use torlink_core::degree::{
    circle_degree, meridian_project, model_map, sphere_degree_of, PathSample, RefineOptions, SurfaceMesh,
};
use torlink_core::dynamics::{iterate_return, nu};
use torlink_core::field::{max_commutator_residual, ChartPoint, FieldSpec};
use torlink_core::index::{
    fixed_point_spectrum, index_isolated_zero, index_region, linking_numbers, verify_link_index, FixedPointClass,
    LinkIndexParams, TorusParams,
};
use torlink_core::section::{
    holonomy_invariance_residual, return_identity_residual, return_map, tangent_flow_residual, FlowSetup,
};

fn setup(name: &str) -> Result<FlowSetup> {
    let c = scenarios::load(name).context("unknown scenario")??;
    let tol = c.tolerances.integrator;
    Ok(c.flow_setup(tol).context("scenario has no fields")??)
}

fn disc_points(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (x, y) = (rng.gen_range(-r..r), rng.gen_range(-r..r));
        if x * x + y * y < r * r {
            out.push((x, y));
        }
    }
    out
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn c1() -> Result<Outcome> {
    let mesh = SurfaceMesh::icosphere(3);
    let opts = RefineOptions::default();
    let mut passed = mesh.triangles.len() >= 1280;
    let mut detail = format!("triangles = {}", mesh.triangles.len());
    for (name, sign, want) in [("identity", 1.0, 1), ("antipodal", -1.0, -1)] {
        let t0 = Instant::now();
        let d = sphere_degree_of(|v| Ok(Vector3::from(*v) * sign), &mesh, &opts)?;
        let dt = t0.elapsed().as_secs_f64();
        passed &= d.degree.value == want && d.degree.residual < 0.01 && dt < 1.0;
        detail += &format!(
            "; {name}: degree = {} (want {want}), residual = {:.1e}, {dt:.3} s",
            d.degree.value, d.degree.residual
        );
    }
    outcome(passed, detail)
}

fn c2() -> Result<Outcome> {
    let mesh = SurfaceMesh::torus_grid(64, 64);
    let path = PathSample::parametrized_loop(64, |t| ChartPoint::new(0.0, 0.0, t));
    let pairs: Vec<(i64, i64)> = (-2..=2).flat_map(|a| (-2..=2).map(move |b| (a, b))).collect();
    let bad: Vec<String> = pairs
        .par_iter()
        .map(|&(dp, dm)| -> Result<Option<String>> {
            let m = model_map(dp, dm);
            let d = sphere_degree_of(|v| Ok(m.eval(v[0], v[1])), &mesh, &RefineOptions::default())?;
            let wind = |s: f64| circle_degree(|q| meridian_project(&m.eval(s, q.theta)), &path);
            let (wp, wm) = (wind(0.25)?.value, wind(0.75)?.value);
            let ok = d.degree.value.abs() == (dp - dm).abs() && wp == dp && wm == dm;
            Ok((!ok).then(|| format!("({dp},{dm}): deg {} windings ({wp},{wm})", d.degree.value)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    outcome(bad.is_empty(), format!("25 pairs on a 64x64 grid, mismatches: {bad:?}"))
}

fn c3() -> Result<Outcome> {
    let center = ChartPoint::new(0.0, 0.0, 0.5);
    let mut passed = true;
    let mut got = Vec::new();
    let mut max_res: f64 = 0.0;
    for stable in 0..=3usize {
        let signs: [f64; 3] = std::array::from_fn(|k| if k < stable { -1.0 } else { 1.0 });
        let want: i64 = if stable % 2 == 0 { 1 } else { -1 };
        let f = FieldSpec::new(move |p| Vector3::new(signs[0] * p.x, signs[1] * p.y, signs[2] * (p.theta - 0.5)));
        let r = index_isolated_zero(&f, &center, 0.1, 2)?;
        passed &= r.value == want && r.residual < 0.01;
        max_res = max_res.max(r.residual);
        got.push(r.value);
    }
    outcome(passed, format!("dim E^s = 0..3 -> {got:?} (want [1, -1, 1, -1]), max residual = {max_res:.1e}"))
}

fn c4() -> Result<Outcome> {
    let s = setup("split-winding")?;
    let shifts = [0.0, 0.05, 0.1, 0.15, 0.2];
    let values = shifts
        .iter()
        .map(|&t| {
            let shifted = FlowSetup::new(s.pair.shifted(t), s.integrator.rtol)?;
            Ok(index_region(&shifted, &TorusParams::default())?.value)
        })
        .collect::<Result<Vec<i64>>>()?;
    let passed = values.iter().all(|&v| v == values[0]);
    outcome(passed, format!("index of X - sY for s = {shifts:?}: {values:?}"))
}

fn c5() -> Result<Outcome> {
    let mut passed = true;
    let mut detail = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["rigid-rotation", "tilted-rotation"] {
        let s = setup(name)?;
        let (comm, _) = max_commutator_residual(&s.pair, 20)?;
        let samples: Vec<(f64, f64, f64, f64)> = disc_points(&mut rng, 50, 0.6)
            .into_iter()
            .map(|(x, y)| (x, y, rng.gen::<f64>(), rng.gen_range(0.05..1.0)))
            .collect();
        let tangent = samples
            .par_iter()
            .map(|&(x, y, th, t)| tangent_flow_residual(&s, &ChartPoint::new(x, y, th), t))
            .collect::<torlink_core::Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        passed &= comm < 1e-6 && tangent < 1e-6;
        detail.push(format!("{name}: commutator {comm:.1e}, tangent flow {tangent:.1e}"));
    }
    outcome(passed, detail.join("; "))
}

fn c6() -> Result<Outcome> {
    let mut passed = true;
    let mut detail = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for name in ["rigid-rotation", "tilted-rotation", "annulus-col", "normally-contracting"] {
        let s = setup(name)?;
        let pts = disc_points(&mut rng, 50, 0.6);
        let worst = pts
            .par_iter()
            .map(|&(x, y)| -> torlink_core::Result<f64> {
                let p = s.point_on_fiber(x, y, 0.0)?;
                let mut m: f64 = 0.0;
                for t in [0.25, 0.5, 1.0] {
                    m = m.max(holonomy_invariance_residual(&s, &p, t)?);
                }
                Ok(m)
            })
            .collect::<torlink_core::Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        passed &= worst < 1e-6;
        detail.push(format!("{name} {worst:.1e}"));
    }
    outcome(passed, format!("max relative defect: {}", detail.join(", ")))
}

fn c7() -> Result<Outcome> {
    let s = setup("tilted-rotation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut accepted = Vec::new();
    let mut draws = 0;
    while accepted.len() < 100 && draws < 20_000 {
        let pts = disc_points(&mut rng, 64, 0.7);
        draws += pts.len();
        let ids = pts
            .par_iter()
            .map(|&(x, y)| return_identity_residual(&s, &s.point_on_fiber(x, y, 0.0)?))
            .collect::<torlink_core::Result<Vec<_>>>()?;
        accepted.extend(ids.into_iter().filter(|i| i.lhs.abs() > 1e-3 && i.rhs.abs() > 1e-3));
    }
    let rel = accepted.iter().map(|i| i.residual / i.rhs.abs()).fold(0.0, f64::max);

    let control = setup("noncommuting-control")?;
    let violation = disc_points(&mut rng, 50, 0.7)
        .par_iter()
        .map(|&(x, y)| Ok(return_identity_residual(&control, &control.point_on_fiber(x, y, 0.0)?)?.residual))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    outcome(
        accepted.len() >= 100 && rel < 1e-5 && violation > 1e-3,
        format!(
            "{} points with both sides > 1e-3 ({draws} draws), max relative residual {rel:.1e}; control max residual {violation:.2e}",
            accepted.len()
        ),
    )
}

fn c8() -> Result<Outcome> {
    let mut passed = true;
    let mut detail = Vec::new();
    for (name, index, ells) in [
        ("split-winding", 1, (1, 0)),
        ("normally-contracting", 0, (0, 0)),
        ("model-field", 3, (2, -1)),
    ] {
        let r = verify_link_index(&setup(name)?, &LinkIndexParams::default())?;
        let l = (r.linking.ell_plus, r.linking.ell_minus);
        passed &= r.identity_holds && r.lhs == index && l == ells;
        detail.push(format!("{name}: |Ind| = {}, l = {l:?}", r.lhs));
    }
    outcome(passed, detail.join("; "))
}

fn c9() -> Result<Outcome> {
    let s = setup("normally-contracting")?;
    let r = fixed_point_spectrum(&s, &s.point_on_fiber(0.3, 0.0, 0.0)?, 1e-8)?;
    let multiplier = (-0.5f64).exp();
    let err = r
        .eigenvalues
        .iter()
        .map(|&(re, im)| (re - multiplier).hypot(im))
        .fold(f64::INFINITY, f64::min);
    let l = linking_numbers(&s, 0.25)?;
    outcome(
        err < 1e-5 && r.class == FixedPointClass::PartiallyHyperbolic && (l.ell_plus, l.ell_minus) == (0, 0),
        format!(
            "eigenvalue error vs exp(-1/2) {err:.1e}, class {:?}, l = ({}, {})",
            r.class, l.ell_plus, l.ell_minus
        ),
    )
}

fn c10() -> Result<Outcome> {
    let s = setup("normally-contracting")?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let starts: Vec<(f64, f64)> = (0..20).map(|_| (rng.gen_range(-0.6..0.6), rng.gen_range(-0.4..0.4))).collect();
    let stats = starts
        .par_iter()
        .map(|&(x, y)| -> Result<(bool, f64, f64)> {
            let o = iterate_return(&s, &s.point_on_fiber(x, y, 0.0)?, 500, 1e-10)?;
            let limit = o.limit.context("no limit")?;
            let disp = return_map(&s, &limit)?.end.distance(&limit);
            Ok((o.converged, nu(&s, &limit).abs(), disp))
        })
        .collect::<Result<Vec<_>>>()?;
    let converged = stats.iter().filter(|t| t.0).count();
    let max_nu = stats.iter().map(|t| t.1).fold(0.0, f64::max);
    let max_disp = stats.iter().map(|t| t.2).fold(0.0, f64::max);
    outcome(
        converged == 20 && max_nu < 1e-6 && max_disp < 1e-8,
        format!("{converged}/20 converged, max |nu| {max_nu:.1e}, max |P(x)-x| {max_disp:.1e}"),
    )
}

fn report(dir: &std::path::Path, name: &str) -> Result<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_torlink"))
        .env_remove("TORLINK_SEED")
        .args(["run", name, "--out"])
        .arg(dir)
        .output()?;
    ensure!(out.status.code() == Some(0), "{name} exited with {:?}", out.status.code());
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?;
    strip_timing(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

fn c11() -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let mut differing = Vec::new();
    let mut count = 0;
    for name in scenarios::names() {
        let a = report(&tmp.path().join(format!("{name}-1")), name)?;
        let b = report(&tmp.path().join(format!("{name}-2")), name)?;
        count += 1;
        if a != b {
            differing.push(name);
        }
    }
    outcome(differing.is_empty(), format!("{count} scenarios run twice, differing reports: {differing:?}"))
}

type Criterion = (&'static str, f64, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("sphere degree of identity and antipodal maps", 2.0, c1),
        ("model map degrees and meridian windings", 30.0, c2),
        ("indices of hyperbolic zeros", 5.0, c3),
        ("homotopy invariance of the region index", 30.0, c4),
        ("commutation and tangent-flow invariance", 60.0, c5),
        ("holonomy invariance of N", 60.0, c6),
        ("return-time identity and control sensitivity", 120.0, c7),
        ("|Ind| = |l+ - l-|", 60.0, c8),
        ("normally hyperbolic diagnostics", 30.0, c9),
        ("stable limits on Col", 60.0, c10),
        ("report determinism", f64::INFINITY, c11),
    ];
    let mut failed = 0;
    for (k, (title, bound, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = f();
        let dt = t0.elapsed().as_secs_f64();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && dt < *bound, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !passed {
            failed += 1;
        }
        let limit = if bound.is_finite() { format!(" < {bound} s") } else { String::new() };
        println!(
            "{} criterion {:>2}: {title} [{dt:.2} s{limit}] {detail}",
            if passed { "PASS" } else { "FAIL" },
            k + 1
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
