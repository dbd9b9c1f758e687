//! Winding numbers of plane-vector-valued maps along paths and topological
//! degrees of sphere-valued maps on triangulated spheres and tori.
//!
//! Sphere degrees are computed as the total signed solid angle of the image
//! triangles divided by `4π`. For a closed oriented mesh whose image triangles
//! are all small this is exactly the degree of the piecewise-geodesic map, so
//! the distance of the raw value to the nearest integer is a rounding-error
//! estimate.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{circle_delta, wrap_turns, ChartPoint};

/// Residual above which a winding or degree is rejected as non-integral.
pub const INTEGRALITY_TOL: f64 = 0.05;

/// Exact `(sin 2πs, cos 2πs)` at multiples of a quarter turn.
pub fn sin_cos_turns(s: f64) -> (f64, f64) {
    let r = s.rem_euclid(1.0) * 4.0;
    let quadrant = r.floor();
    let (sn, cs) = ((r - quadrant) * FRAC_PI_2).sin_cos();
    match quadrant as i64 {
        0 => (sn, cs),
        1 => (cs, -sn),
        2 => (-sn, -cs),
        _ => (-cs, sn),
    }
}

/// Principal value of an angle in `(-π, π]`.
fn wrap_pi(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// An ordered sample of chart points. Consecutive points are joined by the
/// straight chart segment, taking the short way around the angular circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub points: Vec<ChartPoint>,
    pub closed: bool,
}

impl PathSample {
    pub fn open(points: Vec<ChartPoint>) -> Self {
        Self {
            points,
            closed: false,
        }
    }

    /// Closed path; the first point is repeated at the end if missing.
    pub fn closed(mut points: Vec<ChartPoint>) -> Self {
        if let (Some(first), Some(last)) = (points.first().copied(), points.last()) {
            if first.distance(last) > 0.0 {
                points.push(first);
            }
        }
        Self {
            points,
            closed: true,
        }
    }

    /// The loop `{(x0, y0)} × R/Z` traversed once in the increasing angle, with `n` samples.
    pub fn angular_loop(x0: f64, y0: f64, n: usize) -> Self {
        let n = n.max(3);
        Self::closed((0..n).map(|k| ChartPoint::new(x0, y0, k as f64 / n as f64)).collect())
    }

    /// Closed loop from a parametrization `[0, 1) → chart`.
    pub fn parametrized_loop(n: usize, f: impl Fn(f64) -> ChartPoint) -> Self {
        let n = n.max(3);
        Self::closed((0..n).map(|k| f(k as f64 / n as f64)).collect())
    }

    /// Straight chart segment from `a` to `b` with `n` subintervals.
    pub fn segment(a: &ChartPoint, b: &ChartPoint, n: usize) -> Self {
        let d = a.delta_to(b);
        let n = n.max(1);
        Self::open((0..=n).map(|k| a.offset(&(d * (k as f64 / n as f64)))).collect())
    }

    pub fn concat(&self, other: &PathSample) -> PathSample {
        let mut points = self.points.clone();
        points.extend(other.points.iter().skip(1).copied());
        PathSample::open(points)
    }

    /// Largest chart distance between consecutive points.
    pub fn max_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .fold(0.0, f64::max)
    }
}

/// Unwrapped angles along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleLift {
    pub values: Vec<f64>,
    pub total: f64,
}

/// Controls for the adaptive angle lift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnwrapOptions {
    /// Largest accepted angle jump between consecutive evaluations.
    pub max_jump: f64,
    /// Maximum bisection depth per path segment.
    pub max_depth: u32,
    /// Map values with smaller norm count as zeros.
    pub min_norm: f64,
}

impl Default for UnwrapOptions {
    fn default() -> Self {
        Self {
            max_jump: FRAC_PI_2,
            max_depth: 30,
            min_norm: 1e-14,
        }
    }
}

fn direction_angle(v: Vector2<f64>, p: &ChartPoint, opts: &UnwrapOptions) -> Result<f64> {
    let n = v.norm();
    if !(n >= opts.min_norm) {
        return Err(Error::UnwrapFailure(format!(
            "map vanishes or is undefined at {p} (|v| = {n:e})"
        )));
    }
    Ok(v.y.atan2(v.x))
}

/// Lift of the direction of `map` along `path`, refining each path segment
/// by bisection until consecutive angle jumps are below `opts.max_jump`.
pub fn angle_lift<F>(map: F, path: &PathSample, opts: &UnwrapOptions) -> Result<AngleLift>
where
    F: Fn(&ChartPoint) -> Result<Vector2<f64>>,
{
    let Some(first) = path.points.first() else {
        return Ok(AngleLift {
            values: Vec::new(),
            total: 0.0,
        });
    };
    let angle = |p: &ChartPoint| -> Result<f64> { direction_angle(map(p)?, p, opts) };
    let start = angle(first)?;
    let mut values = vec![start];
    let mut prev_angle = start;
    for w in path.points.windows(2) {
        let end_angle = angle(&w[1])?;
        sweep_segment(&angle, &w[0], &w[1], prev_angle, end_angle, opts, 0, &mut values)?;
        prev_angle = end_angle;
    }
    Ok(AngleLift {
        total: values[values.len() - 1] - start,
        values,
    })
}

/// Appends the lifted angles of the bisection points and of `b`.
#[allow(clippy::too_many_arguments)]
fn sweep_segment(
    angle: &dyn Fn(&ChartPoint) -> Result<f64>,
    a: &ChartPoint,
    b: &ChartPoint,
    angle_a: f64,
    angle_b: f64,
    opts: &UnwrapOptions,
    depth: u32,
    values: &mut Vec<f64>,
) -> Result<()> {
    let jump = wrap_pi(angle_b - angle_a);
    if jump.abs() < opts.max_jump {
        let last = values[values.len() - 1];
        values.push(last + jump);
        return Ok(());
    }
    if depth >= opts.max_depth {
        return Err(Error::UnwrapFailure(format!(
            "angle jump {jump:.3} persists between {a} and {b} after {depth} bisections"
        )));
    }
    let mid = a.offset(&(a.delta_to(b) * 0.5));
    let angle_m = angle(&mid)?;
    sweep_segment(angle, a, &mid, angle_a, angle_m, opts, depth + 1, values)?;
    sweep_segment(angle, &mid, b, angle_m, angle_b, opts, depth + 1, values)
}

/// Total angle (radians) swept by the direction of `map` along `path`.
pub fn angular_variation<F>(map: F, path: &PathSample) -> Result<f64>
where
    F: Fn(&ChartPoint) -> Result<Vector2<f64>>,
{
    Ok(angle_lift(map, path, &UnwrapOptions::default())?.total)
}

/// An integer-valued topological quantity with its rounding residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeValue {
    pub value: i64,
    pub raw: f64,
    pub residual: f64,
}

impl DegreeValue {
    pub fn from_raw(raw: f64) -> Result<Self> {
        let value = raw.round();
        let residual = (raw - value).abs();
        if !(residual < INTEGRALITY_TOL) {
            return Err(Error::NonIntegral { raw, residual });
        }
        Ok(Self {
            value: value as i64,
            raw,
            residual,
        })
    }
}

/// Winding number of `map` along a closed path.
pub fn circle_degree<F>(map: F, path: &PathSample) -> Result<DegreeValue>
where
    F: Fn(&ChartPoint) -> Result<Vector2<f64>>,
{
    if !path.closed {
        return Err(Error::InvalidArgument("circle_degree needs a closed path".into()));
    }
    DegreeValue::from_raw(angular_variation(map, path)? / TAU)
}

pub const POLE_THRESHOLD: f64 = 1e-12;

/// Projection of a point of `S²` off the poles onto the equator along meridians.
pub fn meridian_project(p: &Vector3<f64>) -> Result<Vector2<f64>> {
    let rho2 = p.x * p.x + p.y * p.y;
    if !(rho2 > POLE_THRESHOLD) {
        return Err(Error::AtPole {
            threshold: POLE_THRESHOLD,
        });
    }
    let rho = rho2.sqrt();
    Ok(Vector2::new(p.x / rho, p.y / rho))
}

/// Kind of closed surface carried by a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    /// Vertices are unit vectors of `R³`.
    Sphere,
    /// Vertices are `(s, t, 0)` with `s, t ∈ [0, 1)` parameters of `R²/Z²`.
    Torus,
}

/// A closed oriented triangulated surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub kind: SurfaceKind,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl SurfaceMesh {
    /// Icosahedron subdivided `level` times; `20·4^level` outward-oriented triangles.
    pub fn icosphere(level: u32) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let raw = [
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ];
        let vertices = raw
            .iter()
            .map(|v| {
                let n = Vector3::from(*v).normalize();
                [n.x, n.y, n.z]
            })
            .collect();
        let triangles = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        let mut mesh = Self {
            kind: SurfaceKind::Sphere,
            vertices,
            triangles,
        };
        for _ in 0..level {
            mesh = mesh.refine();
        }
        mesh
    }

    /// Regular `ns × nt` parameter grid on the torus, two triangles per cell,
    /// oriented by `(∂s, ∂t)`.
    pub fn torus_grid(ns: usize, nt: usize) -> Self {
        let (ns, nt) = (ns.max(3), nt.max(3));
        let mut vertices = Vec::with_capacity(ns * nt);
        for i in 0..ns {
            for j in 0..nt {
                vertices.push([i as f64 / ns as f64, j as f64 / nt as f64, 0.0]);
            }
        }
        let idx = |i: usize, j: usize| (i % ns) * nt + (j % nt);
        let mut triangles = Vec::with_capacity(2 * ns * nt);
        for i in 0..ns {
            for j in 0..nt {
                triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        Self {
            kind: SurfaceKind::Torus,
            vertices,
            triangles,
        }
    }

    fn midpoint(&self, a: usize, b: usize) -> [f64; 3] {
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        match self.kind {
            SurfaceKind::Sphere => {
                let m = (Vector3::from(pa) + Vector3::from(pb)).normalize();
                [m.x, m.y, m.z]
            }
            SurfaceKind::Torus => [
                wrap_turns(pa[0] + 0.5 * circle_delta(pa[0], pb[0])),
                wrap_turns(pa[1] + 0.5 * circle_delta(pa[1], pb[1])),
                0.0,
            ],
        }
    }

    /// One level of 1-to-4 midpoint subdivision, sharing edge midpoints.
    pub fn refine(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>| {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                vertices.push(self.midpoint(a, b));
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(self.triangles.len() * 4);
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Self {
            kind: self.kind,
            vertices,
            triangles,
        }
    }

    /// Sample a map on every vertex and normalise the values onto `S²`.
    pub fn sample<F>(&self, map: F) -> Result<MeshMap>
    where
        F: Fn(&[f64; 3]) -> Result<Vector3<f64>> + Sync,
    {
        let values = self
            .vertices
            .par_iter()
            .map(|v| {
                let w = map(v)?;
                let n = w.norm();
                if !(n > 0.0) || !n.is_finite() {
                    return Err(Error::InvalidMesh(format!(
                        "map value {w:?} at vertex {v:?} cannot be normalised"
                    )));
                }
                Ok(w / n)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeshMap {
            mesh: self.clone(),
            values,
        })
    }
}

/// A triangulated surface with a unit vector attached to every vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshMap {
    pub mesh: SurfaceMesh,
    pub values: Vec<Vector3<f64>>,
}

/// Size statistics of a mesh map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub triangles: usize,
    /// Largest angular edge length of an image triangle, radians.
    pub max_image_edge: f64,
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Signed solid angle of the spherical triangle `(a, b, c)`.
pub fn signed_solid_angle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let num = a.dot(&b.cross(c));
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// Neumaier-compensated sum in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl MeshMap {
    pub fn stats(&self) -> MeshStats {
        let max_image_edge = self
            .mesh
            .triangles
            .par_iter()
            .map(|t| self.image_edge(t))
            .reduce(|| 0.0, f64::max);
        MeshStats {
            triangles: self.mesh.triangles.len(),
            max_image_edge,
        }
    }

    fn image_edge(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.values[i]);
        angle_between(&a, &b)
            .max(angle_between(&b, &c))
            .max(angle_between(&c, &a))
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.mesh.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} values for {} vertices",
                self.values.len(),
                self.mesh.vertices.len()
            )));
        }
        for (i, v) in self.values.iter().enumerate() {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidMesh(format!(
                    "value {i} has norm {} (expected 1)",
                    v.norm()
                )));
            }
        }
        for (index, t) in self.mesh.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= self.mesh.vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {index} has an out-of-range vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[2] == t[0] {
                return Err(Error::DegenerateTriangle {
                    index,
                    reason: "repeated vertex".into(),
                });
            }
        }
        Ok(())
    }

    /// Per-triangle signed solid angles in mesh order.
    pub fn solid_angles(&self) -> Vec<f64> {
        self.mesh
            .triangles
            .par_iter()
            .map(|&[a, b, c]| signed_solid_angle(&self.values[a], &self.values[b], &self.values[c]))
            .collect()
    }

    /// Write the mesh map in the indexed-triangle text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let kind = match self.mesh.kind {
            SurfaceKind::Sphere => "sphere",
            SurfaceKind::Torus => "torus",
        };
        let _ = writeln!(out, "# torlink mesh v1");
        let _ = writeln!(out, "surface {kind}");
        for (v, f) in self.mesh.vertices.iter().zip(&self.values) {
            let _ = writeln!(
                out,
                "v {:e} {:e} {:e} {:e} {:e} {:e}",
                v[0], v[1], v[2], f.x, f.y, f.z
            );
        }
        for t in &self.mesh.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0], t[1], t[2]);
        }
        out
    }

    /// Parse the indexed-triangle text format. Values are renormalised when
    /// within `1e-6` of unit length.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut vertices = Vec::new();
        let mut values = Vec::new();
        let mut triangles = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::InvalidMesh(format!("line {}: {msg}", n + 1));
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("surface") => {
                    kind = Some(match parts.next() {
                        Some("sphere") => SurfaceKind::Sphere,
                        Some("torus") => SurfaceKind::Torus,
                        other => return Err(bad(&format!("unknown surface {other:?}"))),
                    });
                }
                Some("v") => {
                    let nums = parts
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(&e.to_string()))?;
                    if nums.len() != 6 {
                        return Err(bad("vertex lines need 6 numbers"));
                    }
                    vertices.push([nums[0], nums[1], nums[2]]);
                    let v = Vector3::new(nums[3], nums[4], nums[5]);
                    if (v.norm() - 1.0).abs() > 1e-6 {
                        return Err(bad("vertex value is not a unit vector"));
                    }
                    values.push(v.normalize());
                }
                Some("f") => {
                    let idx = parts
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(&e.to_string()))?;
                    if idx.len() != 3 {
                        return Err(bad("face lines need 3 indices"));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                Some(other) => return Err(bad(&format!("unknown record {other:?}"))),
                None => {}
            }
        }
        let map = MeshMap {
            mesh: SurfaceMesh {
                kind: kind.ok_or_else(|| Error::InvalidMesh("missing surface line".into()))?,
                vertices,
                triangles,
            },
            values,
        };
        map.validate()?;
        Ok(map)
    }
}

/// Degree of a sampled mesh map. Every image triangle must have angular edges
/// below `π/2`; no refinement is possible without the underlying map.
pub fn sphere_degree(map: &MeshMap) -> Result<DegreeValue> {
    map.validate()?;
    for (index, t) in map.mesh.triangles.iter().enumerate() {
        let edge = map.image_edge(t);
        if !(edge < FRAC_PI_2) {
            return Err(Error::DegenerateTriangle {
                index,
                reason: format!("image edge {edge:.3} rad is too large for an unambiguous triangle"),
            });
        }
    }
    DegreeValue::from_raw(compensated_sum(&map.solid_angles()) / (4.0 * PI))
}

/// Refinement policy for [`sphere_degree_of`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Image edges longer than this trigger one more uniform subdivision.
    pub max_image_edge: f64,
    pub max_refinements: u32,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_image_edge: 0.5,
            max_refinements: 4,
        }
    }
}

/// Degree with its mesh statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub degree: DegreeValue,
    pub stats: MeshStats,
    pub refinements: u32,
}

/// Degree of `map` on `mesh`, subdividing the whole mesh while image
/// triangles are large.
pub fn sphere_degree_of<F>(map: F, mesh: &SurfaceMesh, opts: &RefineOptions) -> Result<DegreeReport>
where
    F: Fn(&[f64; 3]) -> Result<Vector3<f64>> + Sync,
{
    let mut mesh = mesh.clone();
    let mut refinements = 0;
    loop {
        let sampled = mesh.sample(&map)?;
        let stats = sampled.stats();
        if stats.max_image_edge > opts.max_image_edge && refinements < opts.max_refinements {
            mesh = mesh.refine();
            refinements += 1;
            continue;
        }
        return Ok(DegreeReport {
            degree: sphere_degree(&sampled)?,
            stats,
            refinements,
        });
    }
}

/// Model map `T² → S²` with prescribed meridian windings `d⁺` on `s ∈ [0, ½]`
/// and `d⁻` on `s ∈ [½, 1]`; `{s = 0}` maps to the north pole and `{s = ½}` to
/// the south pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMap {
    pub d_plus: i64,
    pub d_minus: i64,
}

impl ModelMap {
    pub fn new(d_plus: i64, d_minus: i64) -> Self {
        Self { d_plus, d_minus }
    }

    pub fn eval(&self, s: f64, t: f64) -> Vector3<f64> {
        let s = wrap_turns(s);
        let d = if s <= 0.5 { self.d_plus } else { self.d_minus };
        let (sn, cs) = sin_cos_turns(s);
        let (st, ct) = sin_cos_turns(d as f64 * wrap_turns(t));
        let r = sn.abs();
        Vector3::new(r * ct, r * st, cs)
    }
}

/// The model map `Φ_{d⁺,d⁻}`.
pub fn model_map(d_plus: i64, d_minus: i64) -> ModelMap {
    ModelMap::new(d_plus, d_minus)
}

/// Pole-preserving sphere map multiplying the azimuth by `k`.
pub fn azimuthal_power(k: i64, p: &Vector3<f64>) -> Vector3<f64> {
    let rho = p.x.hypot(p.y);
    if rho == 0.0 {
        return Vector3::new(0.0, 0.0, p.z);
    }
    let (mut re, mut im) = (1.0, 0.0);
    let (wx, wy) = (p.x / rho, if k >= 0 { p.y / rho } else { -p.y / rho });
    for _ in 0..k.unsigned_abs() {
        (re, im) = (re * wx - im * wy, re * wy + im * wx);
    }
    Vector3::new(rho * re, rho * im, p.z)
}
