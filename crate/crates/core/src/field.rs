//! Chart points, vector fields on the solid torus `D² × R/Z`, adapted frames
//! and the pointwise diagnostics of a field pair (bracket, collinearity, ratio).
//!
//! The angular coordinate is measured in full turns and stored reduced into
//! `[0, 1)`. Tangent vectors use the flat chart metric.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduce an angle in turns into `[0, 1)`.
pub fn wrap_turns(theta: f64) -> f64 {
    let r = theta.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs.
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed shortest difference `b - a` on the circle `R/Z`, in `[-1/2, 1/2)`.
pub fn circle_delta(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(1.0);
    if d >= 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// A point of the solid torus in the product chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl ChartPoint {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_turns(theta),
        }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Chart distance using the circle metric in the angular direction.
    pub fn distance(&self, other: &ChartPoint) -> f64 {
        let dt = circle_delta(self.theta, other.theta);
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + dt * dt).sqrt()
    }

    /// The point reached by moving along `v` in the chart (angle re-wrapped).
    pub fn offset(&self, v: &Vector3<f64>) -> ChartPoint {
        ChartPoint::new(self.x + v.x, self.y + v.y, self.theta + v.z)
    }

    /// Displacement `other - self` with the angular part taken along the shortest arc.
    pub fn delta_to(&self, other: &ChartPoint) -> Vector3<f64> {
        Vector3::new(
            other.x - self.x,
            other.y - self.y,
            circle_delta(self.theta, other.theta),
        )
    }
}

impl fmt::Display for ChartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.theta)
    }
}

/// A tangent vector attached to a chart point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub vx: f64,
    pub vy: f64,
    pub vtheta: f64,
}

impl TangentVector {
    pub fn new(base: ChartPoint, v: Vector3<f64>) -> Self {
        Self {
            base,
            vx: v.x,
            vy: v.y,
            vtheta: v.z,
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vtheta)
    }

    pub fn norm(&self) -> f64 {
        self.vector().norm()
    }
}

pub type Evaluator = Arc<dyn Fn(&ChartPoint) -> Vector3<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&ChartPoint) -> Matrix3<f64> + Send + Sync>;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A vector field on the chart, with an optional analytic Jacobian.
///
/// Evaluators must be periodic in `theta` with period one; they always
/// receive the reduced angle.
#[derive(Clone)]
pub struct FieldSpec {
    evaluator: Evaluator,
    jacobian: Option<JacobianFn>,
    fd_step: f64,
}

impl fmt::Debug for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldSpec")
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl FieldSpec {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ChartPoint) -> Vector3<f64> + Send + Sync + 'static,
    {
        Self {
            evaluator: Arc::new(f),
            jacobian: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn constant(v: Vector3<f64>) -> Self {
        Self::new(move |_| v).with_jacobian(|_| Matrix3::zeros())
    }

    /// Field whose components are affine in `(x, y)` and independent of the angle.
    pub fn planar_linear(m: Matrix3<f64>, offset: Vector3<f64>) -> Self {
        Self::new(move |p| m * Vector3::new(p.x, p.y, 0.0) + offset).with_jacobian(move |_| {
            let mut j = m;
            j.set_column(2, &Vector3::zeros());
            j
        })
    }

    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&ChartPoint) -> Matrix3<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        assert!(step > 0.0, "finite-difference step must be positive");
        self.fd_step = step;
        self
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// True when both specs share the same evaluator object.
    pub fn same_evaluator(&self, other: &FieldSpec) -> bool {
        Arc::ptr_eq(&self.evaluator, &other.evaluator)
    }

    /// Raw evaluation without the finiteness check.
    pub fn eval_raw(&self, p: &ChartPoint) -> Vector3<f64> {
        (self.evaluator)(p)
    }

    pub fn eval(&self, p: &ChartPoint) -> Result<Vector3<f64>> {
        let v = (self.evaluator)(p);
        if v.iter().all(|c| c.is_finite()) {
            Ok(v)
        } else {
            Err(non_finite(p))
        }
    }

    /// Evaluate at a point given with an unreduced angle.
    pub fn eval_at(&self, x: f64, y: f64, theta: f64) -> Result<Vector3<f64>> {
        self.eval(&ChartPoint::new(x, y, theta))
    }

    pub fn tangent(&self, p: &ChartPoint) -> Result<TangentVector> {
        Ok(TangentVector::new(*p, self.eval(p)?))
    }

    /// Jacobian in chart coordinates: analytic when supplied, else central differences.
    pub fn jacobian_at(&self, p: &ChartPoint) -> Result<Matrix3<f64>> {
        let j = match &self.jacobian {
            Some(j) => j(p),
            None => {
                let h = self.fd_step;
                let mut j = Matrix3::zeros();
                for axis in 0..3 {
                    let mut step = Vector3::zeros();
                    step[axis] = h;
                    let fwd = self.eval(&p.offset(&step))?;
                    let bwd = self.eval(&p.offset(&(-step)))?;
                    j.set_column(axis, &((fwd - bwd) / (2.0 * h)));
                }
                j
            }
        };
        if j.iter().all(|c| c.is_finite()) {
            Ok(j)
        } else {
            Err(non_finite(p))
        }
    }
}

fn non_finite(p: &ChartPoint) -> Error {
    Error::NonFinite {
        x: p.x,
        y: p.y,
        theta: p.theta,
    }
}

/// Jacobian of a field at a point; see [`FieldSpec::jacobian_at`].
pub fn jacobian_at(f: &FieldSpec, p: &ChartPoint) -> Result<Matrix3<f64>> {
    f.jacobian_at(p)
}

/// A submersion of the solid torus onto the circle whose level sets are discs.
///
/// `lifted` must be continuous in the lifted angle, with
/// `lifted(x, y, t + 1) = lifted(x, y, t) + 1`.
pub trait Fibration: Send + Sync + fmt::Debug {
    fn lifted(&self, x: f64, y: f64, theta_lifted: f64) -> f64;

    /// Differential of the fibration in chart coordinates.
    fn gradient(&self, p: &ChartPoint) -> Vector3<f64>;

    fn level(&self, p: &ChartPoint) -> f64 {
        wrap_turns(self.lifted(p.x, p.y, p.theta))
    }

    /// Angle of the point of the fiber `level` above `(x, y)`.
    fn theta_on_fiber(&self, x: f64, y: f64, level: f64) -> f64;
}

/// `Σ(x, y, θ) = θ − a·x − b·y (mod 1)`. The untilted case is the plain angle projection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TiltedFibration {
    pub tilt_x: f64,
    pub tilt_y: f64,
}

impl TiltedFibration {
    pub fn projection() -> Self {
        Self::default()
    }

    pub fn tilted(tilt_x: f64) -> Self {
        Self {
            tilt_x,
            tilt_y: 0.0,
        }
    }
}

impl Fibration for TiltedFibration {
    fn lifted(&self, x: f64, y: f64, theta_lifted: f64) -> f64 {
        theta_lifted - self.tilt_x * x - self.tilt_y * y
    }

    fn gradient(&self, _p: &ChartPoint) -> Vector3<f64> {
        Vector3::new(-self.tilt_x, -self.tilt_y, 1.0)
    }

    fn theta_on_fiber(&self, x: f64, y: f64, level: f64) -> f64 {
        wrap_turns(level + self.tilt_x * x + self.tilt_y * y)
    }
}

/// The solid torus `{x² + y² ≤ R²} × R/Z` with its disc fibration.
#[derive(Debug, Clone)]
pub struct SolidTorusDomain {
    pub disc_radius: f64,
    pub fibration: Arc<dyn Fibration>,
}

impl SolidTorusDomain {
    pub fn new(disc_radius: f64) -> Self {
        assert!(disc_radius > 0.0, "disc radius must be positive");
        Self {
            disc_radius,
            fibration: Arc::new(TiltedFibration::projection()),
        }
    }

    pub fn with_fibration(mut self, fibration: Arc<dyn Fibration>) -> Self {
        self.fibration = fibration;
        self
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x * x + y * y <= self.disc_radius * self.disc_radius
    }

    pub fn point(&self, x: f64, y: f64, theta: f64) -> Result<ChartPoint> {
        if self.contains(x, y) {
            Ok(ChartPoint::new(x, y, theta))
        } else {
            Err(Error::OutsideDomain {
                x,
                y,
                radius: self.disc_radius,
            })
        }
    }

    /// The point above `(x, y)` on the fiber `Σ_level`.
    pub fn point_on_fiber(&self, x: f64, y: f64, level: f64) -> Result<ChartPoint> {
        let theta = self.fibration.theta_on_fiber(x, y, level);
        self.point(x, y, theta)
    }

    /// Regular grid of `res × res × res` chart points restricted to the disc,
    /// in lexicographic `(i, j, k)` order.
    pub fn grid(&self, res: usize) -> Vec<ChartPoint> {
        grid_points(self.disc_radius, res)
            .into_iter()
            .map(|(_, p)| p)
            .collect()
    }
}

fn grid_coord(radius: f64, res: usize, i: usize) -> f64 {
    if res <= 1 {
        0.0
    } else {
        -radius + 2.0 * radius * i as f64 / (res - 1) as f64
    }
}

fn grid_points(radius: f64, res: usize) -> Vec<([usize; 3], ChartPoint)> {
    let mut out = Vec::new();
    for i in 0..res {
        let x = grid_coord(radius, res, i);
        for j in 0..res {
            let y = grid_coord(radius, res, j);
            if x * x + y * y > radius * radius {
                continue;
            }
            for k in 0..res {
                out.push(([i, j, k], ChartPoint::new(x, y, k as f64 / res as f64)));
            }
        }
    }
    out
}

/// Annulus in which the two fields are declared collinear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeclaredCol {
    /// The annulus `{y = 0}`; its transverse coordinate is `y`.
    YZero,
}

impl DeclaredCol {
    /// Signed transverse coordinate, vanishing exactly on the annulus.
    pub fn nu(&self, p: &ChartPoint) -> f64 {
        match self {
            DeclaredCol::YZero => p.y,
        }
    }

    /// Tangent direction of the annulus that lies in the disc fibers' chart plane.
    pub fn disc_tangent(&self) -> Vector3<f64> {
        match self {
            DeclaredCol::YZero => Vector3::new(1.0, 0.0, 0.0),
        }
    }
}

/// Numerical thresholds that band the exact loci used by the diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Collinearity residual below which two vectors count as collinear.
    pub collinearity: f64,
    /// Minimum |det(e1, e2, e3)| accepted by [`build_frame`].
    pub frame_det: f64,
    /// Minimum |Y| accepted as a denominator.
    pub denominator: f64,
    /// Grid resolution for sampled checks on the domain.
    pub sample_res: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            collinearity: 1e-8,
            frame_det: 1e-6,
            denominator: 1e-12,
            sample_res: 9,
        }
    }
}

/// Two fields on a common solid-torus domain.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub x: FieldSpec,
    pub y: FieldSpec,
    pub domain: SolidTorusDomain,
    pub declared_col: Option<DeclaredCol>,
    pub thresholds: Thresholds,
}

impl FieldPair {
    /// Builds the pair, checking that `Y` does not vanish on a sample grid.
    pub fn new(x: FieldSpec, y: FieldSpec, domain: SolidTorusDomain) -> Result<Self> {
        Self::with_thresholds(x, y, domain, Thresholds::default())
    }

    pub fn with_thresholds(
        x: FieldSpec,
        y: FieldSpec,
        domain: SolidTorusDomain,
        thresholds: Thresholds,
    ) -> Result<Self> {
        let pair = Self {
            x,
            y,
            domain,
            declared_col: None,
            thresholds,
        };
        pair.check_y_nonvanishing(thresholds.sample_res.max(2))?;
        Ok(pair)
    }

    pub fn with_declared_col(mut self, col: DeclaredCol) -> Self {
        self.declared_col = Some(col);
        self
    }

    pub fn check_y_nonvanishing(&self, res: usize) -> Result<()> {
        for p in self.domain.grid(res) {
            if self.y.eval(&p)?.norm() < self.thresholds.denominator {
                return Err(Error::VanishingField {
                    x: p.x,
                    y: p.y,
                    theta: p.theta,
                });
            }
        }
        Ok(())
    }

    /// The pair `(X − s·Y, Y)`.
    pub fn shifted(&self, s: f64) -> FieldPair {
        let xf = self.x.clone();
        let yf = self.y.clone();
        let shifted = FieldSpec::new(move |p| xf.eval_raw(p) - s * yf.eval_raw(p))
            .with_fd_step(self.x.fd_step());
        FieldPair {
            x: shifted,
            ..self.clone()
        }
    }
}

/// Lie bracket `[X, Y](p) = DY(p)·X(p) − DX(p)·Y(p)`.
pub fn commutator_residual(pair: &FieldPair, p: &ChartPoint) -> Result<TangentVector> {
    let xv = pair.x.eval(p)?;
    let yv = pair.y.eval(p)?;
    let dx = pair.x.jacobian_at(p)?;
    let dy = pair.y.jacobian_at(p)?;
    Ok(TangentVector::new(*p, dy * xv - dx * yv))
}

/// Largest bracket norm over the `res³` domain grid, with the point where it occurs.
pub fn max_commutator_residual(pair: &FieldPair, res: usize) -> Result<(f64, ChartPoint)> {
    let grid = pair.domain.grid(res);
    let norms: Vec<Result<f64>> = grid
        .par_iter()
        .map(|p| commutator_residual(pair, p).map(|v| v.norm()))
        .collect();
    let mut best = (0.0, grid.first().copied().unwrap_or(ChartPoint::new(0.0, 0.0, 0.0)));
    for (p, n) in grid.iter().zip(norms) {
        let n = n?;
        if n > best.0 {
            best = (n, *p);
        }
    }
    Ok(best)
}

fn cross_at(pair: &FieldPair, p: &ChartPoint) -> Result<Vector3<f64>> {
    Ok(pair.x.eval(p)?.cross(&pair.y.eval(p)?))
}

/// Norm of the chart cross product `X(p) × Y(p)`.
pub fn collinearity_residual(pair: &FieldPair, p: &ChartPoint) -> Result<f64> {
    Ok(cross_at(pair, p)?.norm())
}

/// Locate points of the collinearity locus by a grid scan plus bisection
/// along grid edges where a component of `X × Y` changes sign.
///
/// Results are ordered by grid index and deduplicated within `refine_tol`.
/// When `X` and `Y` are collinear everywhere every grid point is returned.
pub fn find_collinearity(
    pair: &FieldPair,
    grid_res: usize,
    refine_tol: f64,
) -> Result<Vec<ChartPoint>> {
    if grid_res < 8 {
        return Err(Error::InvalidArgument(format!(
            "grid_res must be at least 8, got {grid_res}"
        )));
    }
    let grid = grid_points(pair.domain.disc_radius, grid_res);
    let index: HashMap<[usize; 3], usize> =
        grid.iter().enumerate().map(|(n, (ijk, _))| (*ijk, n)).collect();
    let crosses: Vec<Vector3<f64>> = grid
        .par_iter()
        .map(|(_, p)| cross_at(pair, p))
        .collect::<Result<_>>()?;

    let per_node: Vec<Vec<ChartPoint>> = grid
        .par_iter()
        .enumerate()
        .map(|(n, (ijk, p))| -> Result<Vec<ChartPoint>> {
            let mut found = Vec::new();
            if crosses[n].norm() < refine_tol {
                found.push(*p);
            }
            for axis in 0..3 {
                let mut nb = *ijk;
                if axis == 2 {
                    nb[2] = (nb[2] + 1) % grid_res;
                } else {
                    nb[axis] += 1;
                }
                let Some(&m) = index.get(&nb) else { continue };
                let q = grid[m].1;
                for comp in 0..3 {
                    let (ca, cb) = (crosses[n][comp], crosses[m][comp]);
                    if ca * cb < 0.0 {
                        let root = bisect_component(pair, p, &q, comp, ca)?;
                        if collinearity_residual(pair, &root)? < refine_tol {
                            found.push(root);
                        }
                    }
                }
            }
            Ok(found)
        })
        .collect::<Result<_>>()?;

    Ok(dedup_points(per_node.into_iter().flatten(), refine_tol))
}

fn bisect_component(
    pair: &FieldPair,
    a: &ChartPoint,
    b: &ChartPoint,
    comp: usize,
    value_at_a: f64,
) -> Result<ChartPoint> {
    let d = a.delta_to(b);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let sign_a = value_at_a.signum();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let v = cross_at(pair, &a.offset(&(d * mid)))?[comp];
        if v == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if v.signum() == sign_a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(a.offset(&(d * (0.5 * (lo + hi)))))
}

fn dedup_points(points: impl Iterator<Item = ChartPoint>, tol: f64) -> Vec<ChartPoint> {
    let cell = tol.max(1e-300);
    let key = |p: &ChartPoint| {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.theta / cell).floor() as i64,
        ]
    };
    let theta_cells = (1.0 / cell).ceil() as i64;
    let mut buckets: HashMap<[i64; 3], Vec<ChartPoint>> = HashMap::new();
    let mut out = Vec::new();
    for p in points {
        let k = key(&p);
        let mut dup = false;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dt in -1..=1 {
                    let kt = (k[2] + dt).rem_euclid(theta_cells.max(1));
                    if let Some(b) = buckets.get(&[k[0] + dx, k[1] + dy, kt]) {
                        if b.iter().any(|q| q.distance(&p) < tol) {
                            dup = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        if !dup {
            let kt = k[2].rem_euclid(theta_cells.max(1));
            buckets.entry([k[0], k[1], kt]).or_default().push(p);
            out.push(p);
        }
    }
    out
}

/// Projection coefficient `⟨X, Y⟩ / ⟨Y, Y⟩`; equals the ratio `X = μY` on the
/// collinearity locus.
pub fn ratio_mu(pair: &FieldPair, p: &ChartPoint) -> Result<f64> {
    let xv = pair.x.eval(p)?;
    let yv = pair.y.eval(p)?;
    let yy = yv.norm_squared();
    if yy.sqrt() < pair.thresholds.denominator {
        return Err(Error::ZeroDenominator { norm: yy.sqrt() });
    }
    Ok(xv.dot(&yv) / yy)
}

/// Adapted frame `(e1, e2, e3)`: `e1`, `e2` span the kernel of the fibration
/// differential and `e3 = Y`.
#[derive(Debug, Clone)]
pub struct Frame {
    y: FieldSpec,
    fibration: Arc<dyn Fibration>,
}

impl Frame {
    /// Lift of `∂x` into the fiber through `p`.
    pub fn e1(&self, p: &ChartPoint) -> Vector3<f64> {
        let g = self.fibration.gradient(p);
        Vector3::new(1.0, 0.0, -g.x / g.z)
    }

    /// Lift of `∂y` into the fiber through `p`.
    pub fn e2(&self, p: &ChartPoint) -> Vector3<f64> {
        let g = self.fibration.gradient(p);
        Vector3::new(0.0, 1.0, -g.y / g.z)
    }

    pub fn e3(&self, p: &ChartPoint) -> Result<Vector3<f64>> {
        self.y.eval(p)
    }

    pub fn y_field(&self) -> &FieldSpec {
        &self.y
    }

    pub fn fibration(&self) -> &Arc<dyn Fibration> {
        &self.fibration
    }

    /// Matrix whose columns are `e1, e2, e3` at `p`.
    pub fn basis(&self, p: &ChartPoint) -> Result<Matrix3<f64>> {
        let e3 = self.e3(p)?;
        Ok(Matrix3::from_columns(&[self.e1(p), self.e2(p), e3]))
    }

    pub fn determinant(&self, p: &ChartPoint) -> Result<f64> {
        Ok(self.basis(p)?.determinant())
    }

    /// Coordinates of the chart vector `v` in the frame at `p`.
    pub fn coordinates(&self, p: &ChartPoint, v: &Vector3<f64>) -> Result<Vector3<f64>> {
        let b = self.basis(p)?;
        b.lu().solve(v).ok_or(Error::DegenerateFrame {
            x: p.x,
            y: p.y,
            theta: p.theta,
            det: 0.0,
        })
    }
}

/// Canonical frame of the pair, validated on the sample grid.
pub fn build_frame(pair: &FieldPair) -> Result<Frame> {
    let g0 = pair.domain.fibration.gradient(&ChartPoint::new(0.0, 0.0, 0.0));
    if g0.z.abs() < pair.thresholds.frame_det {
        return Err(Error::DegenerateFrame {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            det: g0.z,
        });
    }
    let frame = Frame {
        y: pair.y.clone(),
        fibration: pair.domain.fibration.clone(),
    };
    let grid = pair.domain.grid(pair.thresholds.sample_res.max(2));
    let dets: Vec<Result<f64>> = grid.par_iter().map(|p| frame.determinant(p)).collect();
    for (p, det) in grid.iter().zip(dets) {
        let det = det?;
        if !(det.abs() >= pair.thresholds.frame_det) {
            return Err(Error::DegenerateFrame {
                x: p.x,
                y: p.y,
                theta: p.theta,
                det,
            });
        }
    }
    Ok(frame)
}
