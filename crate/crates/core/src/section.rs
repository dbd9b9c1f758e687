//! Holonomy maps between fibers, the first return map, transition times and
//! their derivatives, and the decomposition `X = N + μ·Y` in the frame.
//!
//! Derivatives of the holonomy are read off a single variational solve: for
//! `v` tangent to the start fiber,
//!
//! ```text
//! DY_τ(x)·v = DP(x)·v − (Dτ(x)·v)·Y(P(x))
//! ```
//!
//! so decomposing `DY_τ·v` in the frame at the endpoint gives `DP·v` from the
//! `e1`/`e2` coordinates and `−Dτ·v` from the `e3` coordinate.

use nalgebra::{Matrix2, RowVector2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{circle_delta, build_frame, ChartPoint, FieldPair, Frame, TangentVector};
use crate::flow::Integrator;

/// A field pair together with its frame and the integrator used for its flows.
#[derive(Debug, Clone)]
pub struct FlowSetup {
    pub pair: FieldPair,
    pub frame: Frame,
    pub integrator: Integrator,
}

impl FlowSetup {
    /// Builds the canonical frame and an integrator confined to the pair's disc.
    pub fn new(pair: FieldPair, tol: f64) -> Result<Self> {
        let frame = build_frame(&pair)?;
        let integrator = Integrator::new(tol).with_radius(pair.domain.disc_radius);
        Ok(Self {
            pair,
            frame,
            integrator,
        })
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    /// Point of `Σ_level` above `(x, y)`.
    pub fn point_on_fiber(&self, x: f64, y: f64, level: f64) -> Result<ChartPoint> {
        self.pair.domain.point_on_fiber(x, y, level)
    }
}

/// Holonomy from one fiber to another along the flow of `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonomyRecord {
    pub start: ChartPoint,
    pub end: ChartPoint,
    pub from_level: f64,
    pub to_level: f64,
    pub tau: f64,
    /// Derivative of the holonomy in frame coordinates (`e1`, `e2` at start → at end).
    pub dp: Matrix2<f64>,
    /// Differential of the transition time in frame coordinates at the start.
    pub dtau: RowVector2<f64>,
    pub steps: usize,
}

/// Coordinates of `X` in the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalDecomposition {
    /// Normal component `N = α·e1 + β·e2`, tangent to the fiber.
    pub n_vec: TangentVector,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalDecomposition {
    pub fn normal_coords(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.beta)
    }
}

/// Both sides of `−Dτ(x)·N(x) = μ(P(x)) − μ(x)` and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnIdentity {
    pub point: ChartPoint,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Tolerance for accepting a start point as lying on its fiber.
const ON_FIBER_TOL: f64 = 1e-8;

/// Holonomy from `Σ_0` to `Σ_t`, `t ∈ (0, 1]`; `t = 1` is the first return map.
pub fn holonomy(setup: &FlowSetup, x: &ChartPoint, t: f64) -> Result<HolonomyRecord> {
    holonomy_between(setup, x, 0.0, t)
}

/// Holonomy from `Σ_from` to the fiber `Σ_to` reached after advancing the
/// fibration by `to_level − from_level ∈ [0, 1]` turns.
pub fn holonomy_between(
    setup: &FlowSetup,
    x: &ChartPoint,
    from_level: f64,
    to_level: f64,
) -> Result<HolonomyRecord> {
    let advance = to_level - from_level;
    if !(0.0..=1.0).contains(&advance) {
        return Err(Error::InvalidArgument(format!(
            "fiber advance {advance} outside [0, 1]"
        )));
    }
    let fib = setup.pair.domain.fibration.as_ref();
    let s0 = fib.lifted(x.x, x.y, x.theta);
    let off = circle_delta(from_level, s0);
    if off.abs() > ON_FIBER_TOL {
        return Err(Error::InvalidArgument(format!(
            "start point {x} is not on the fiber {from_level} (offset {off:e})"
        )));
    }
    if advance == 0.0 {
        return Ok(HolonomyRecord {
            start: *x,
            end: *x,
            from_level,
            to_level,
            tau: 0.0,
            dp: Matrix2::identity(),
            dtau: RowVector2::zeros(),
            steps: 0,
        });
    }
    let target = s0 - off + advance;
    let ev = setup.integrator.cross_lifted(
        &setup.pair.y,
        fib,
        x,
        x.theta,
        target,
        0.0,
        true,
    )?;
    let m = ev.dflow.expect("variational crossing carries dflow");
    let basis_end = setup.frame.basis(&ev.point)?;
    let lu = basis_end.lu();
    let mut dp = Matrix2::zeros();
    let mut dtau = RowVector2::zeros();
    for (col, v) in [setup.frame.e1(x), setup.frame.e2(x)].iter().enumerate() {
        let w = m * v;
        let c = lu.solve(&w).ok_or(Error::DegenerateFrame {
            x: ev.point.x,
            y: ev.point.y,
            theta: ev.point.theta,
            det: 0.0,
        })?;
        dp[(0, col)] = c.x;
        dp[(1, col)] = c.y;
        dtau[col] = -c.z;
    }
    Ok(HolonomyRecord {
        start: *x,
        end: ev.point,
        from_level,
        to_level,
        tau: ev.time,
        dp,
        dtau,
        steps: ev.steps,
    })
}

/// First return map `P` of `Σ_0`.
pub fn return_map(setup: &FlowSetup, x: &ChartPoint) -> Result<HolonomyRecord> {
    holonomy(setup, x, 1.0)
}

/// Solve `X(p) = α·e1 + β·e2 + μ·e3`.
pub fn normal_decompose(setup: &FlowSetup, p: &ChartPoint) -> Result<NormalDecomposition> {
    decompose_with(&setup.pair, &setup.frame, p)
}

/// [`normal_decompose`] for an arbitrary pair and frame.
pub fn decompose_with(pair: &FieldPair, frame: &Frame, p: &ChartPoint) -> Result<NormalDecomposition> {
    let basis = frame.basis(p)?;
    let det = basis.determinant();
    if det.abs() < pair.thresholds.frame_det {
        return Err(Error::DegenerateFrame {
            x: p.x,
            y: p.y,
            theta: p.theta,
            det,
        });
    }
    let xv = pair.x.eval(p)?;
    let c = basis.lu().solve(&xv).ok_or(Error::DegenerateFrame {
        x: p.x,
        y: p.y,
        theta: p.theta,
        det,
    })?;
    let n: Vector3<f64> = c.x * frame.e1(p) + c.y * frame.e2(p);
    Ok(NormalDecomposition {
        n_vec: TangentVector::new(*p, n),
        mu: c.z,
        alpha: c.x,
        beta: c.y,
    })
}

/// Evaluate both sides of the return-time identity at `x ∈ Σ_0`.
pub fn return_identity_residual(setup: &FlowSetup, x: &ChartPoint) -> Result<ReturnIdentity> {
    let rec = return_map(setup, x)?;
    let at_x = normal_decompose(setup, x)?;
    let at_px = normal_decompose(setup, &rec.end)?;
    let lhs = -(rec.dtau * at_x.normal_coords())[0];
    let rhs = at_px.mu - at_x.mu;
    Ok(ReturnIdentity {
        point: *x,
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// Relative defect of `DP_t(x)·N(x) = N(P_t(x))` in frame coordinates.
pub fn holonomy_invariance_residual(setup: &FlowSetup, x: &ChartPoint, t: f64) -> Result<f64> {
    let rec = holonomy(setup, x, t)?;
    let n0 = normal_decompose(setup, x)?.normal_coords();
    let n1 = normal_decompose(setup, &rec.end)?.normal_coords();
    let scale = n0.norm();
    let defect = (rec.dp * n0 - n1).norm();
    Ok(if scale > 0.0 { defect / scale } else { defect })
}

/// Relative defect of `DY_t(p)·X(p) = X(Y_t(p))` for the flow of `Y`.
pub fn tangent_flow_residual(setup: &FlowSetup, p: &ChartPoint, t: f64) -> Result<f64> {
    let flow = setup.integrator.variational(&setup.pair.y, p, t)?;
    let dflow = flow.dflow.expect("variational flow carries its derivative");
    let x0 = setup.pair.x.eval(p)?;
    let x1 = setup.pair.x.eval(&flow.endpoint)?;
    let scale = x0.norm();
    let defect = (dflow * x0 - x1).norm();
    Ok(if scale > 0.0 { defect / scale } else { defect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DeclaredCol, FieldSpec, SolidTorusDomain, TiltedFibration};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn setup(x: FieldSpec, y: FieldSpec, tilt: f64) -> FlowSetup {
        let domain = SolidTorusDomain::new(1.0).with_fibration(Arc::new(TiltedFibration::tilted(tilt)));
        FlowSetup::new(FieldPair::new(x, y, domain).unwrap(), 1e-10).unwrap()
    }

    #[test]
    fn trivial_suspension_return() {
        let s = setup(
            FieldSpec::new(|p| Vector3::new(0.0, p.y, p.x)),
            FieldSpec::constant(Vector3::new(0.0, 0.0, 1.0)),
            0.0,
        );
        let x = ChartPoint::new(0.2, 0.1, 0.0);
        let r = return_map(&s, &x).unwrap();
        assert!(r.end.distance(&x) < 1e-12);
        assert_abs_diff_eq!(r.tau, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.dp, Matrix2::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.dtau, RowVector2::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn rigid_rotation_return() {
        let a = 0.7;
        let s = setup(
            FieldSpec::new(|p| Vector3::new(p.x, p.y, 0.0)),
            FieldSpec::new(move |p| Vector3::new(-a * p.y, a * p.x, 1.0)),
            0.0,
        );
        let r = return_map(&s, &ChartPoint::new(0.3, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(r.end.x, 0.3 * a.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(r.end.y, 0.3 * a.sin(), epsilon = 1e-9);
        assert_abs_diff_eq!(r.tau, 1.0, epsilon = 1e-10);
        let rot = Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos());
        assert_abs_diff_eq!(r.dp, rot, epsilon = 1e-8);
    }

    #[test]
    fn zero_advance_is_identity() {
        let s = setup(
            FieldSpec::new(|p| Vector3::new(p.x, p.y, 0.0)),
            FieldSpec::new(|p| Vector3::new(-p.y, p.x, 1.0)),
            0.3,
        );
        let x = s.point_on_fiber(0.3, 0.1, 0.0).unwrap();
        let r = holonomy(&s, &x, 0.0).unwrap();
        assert_eq!(r.dp, Matrix2::identity());
        assert_eq!(r.dtau, RowVector2::zeros());
        assert!(holonomy(&s, &ChartPoint::new(0.3, 0.1, 0.5), 0.5).is_err());
    }

    #[test]
    fn decompose_frame_axes() {
        let s = setup(
            FieldSpec::new(|p| Vector3::new(-p.y, p.x, 1.0)),
            FieldSpec::new(|p| Vector3::new(-p.y, p.x, 1.0)),
            0.0,
        );
        let p = ChartPoint::new(0.3, 0.2, 0.4);
        let d = normal_decompose(&s, &p).unwrap();
        assert_abs_diff_eq!(d.alpha, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.beta, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.mu, 1.0, epsilon = 1e-15);

        let s = setup(
            FieldSpec::constant(Vector3::new(1.0, 0.0, 0.0)),
            FieldSpec::constant(Vector3::new(0.0, 0.0, 1.0)),
            0.0,
        );
        let d = normal_decompose(&s, &p).unwrap();
        assert_eq!((d.alpha, d.beta, d.mu), (1.0, 0.0, 0.0));
    }

    #[test]
    fn decompose_annulus_scenario() {
        let h = |x: f64| 0.8 + 0.5 * x;
        let s = setup(
            FieldSpec::new(move |p| Vector3::new(0.0, p.y, p.x * h(p.x))),
            FieldSpec::new(move |p| Vector3::new(0.0, 0.0, h(p.x))),
            0.0,
        );
        let d = normal_decompose(&s, &ChartPoint::new(0.4, 0.3, 0.0)).unwrap();
        assert_abs_diff_eq!(d.n_vec.vector(), Vector3::new(0.0, 0.3, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(d.mu, 0.4, epsilon = 1e-15);
        let s = FlowSetup {
            pair: s.pair.clone().with_declared_col(DeclaredCol::YZero),
            ..s
        };
        let on_col = ChartPoint::new(0.4, 0.0, 0.0);
        let id = return_identity_residual(&s, &on_col).unwrap();
        assert!(id.residual < 1e-10);
    }
}
