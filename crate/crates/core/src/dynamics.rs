//! Iterates of the first return map, limits on the collinearity annulus, the
//! μ/ν cone ratio, and angular sweeps of the normal component along
//! `[x, P²(x)]`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::degree::{angular_variation, PathSample};
use crate::error::{Error, Result};
use crate::field::{collinearity_residual, ChartPoint};
use crate::section::{normal_decompose, return_map, FlowSetup};

/// Samples used to check that a segment avoids the collinearity locus.
pub const SEGMENT_SAMPLES: usize = 256;

/// Displacements below this count as fixed points of `P`.
pub const FIXED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub points: Vec<ChartPoint>,
    pub mu_values: Vec<f64>,
    pub nu_values: Vec<f64>,
    pub converged: bool,
    pub limit: Option<ChartPoint>,
    /// Largest `|Δμ| / |Δν|` between consecutive iterates.
    pub ratio_bound: Option<f64>,
}

impl OrbitRecord {
    /// Rows `(step, x, y, θ, μ, ν)`.
    pub fn rows(&self) -> impl Iterator<Item = (usize, f64, f64, f64, f64, f64)> + '_ {
        self.points
            .iter()
            .zip(self.mu_values.iter().zip(&self.nu_values))
            .enumerate()
            .map(|(k, (p, (mu, nu)))| (k, p.x, p.y, p.theta, *mu, *nu))
    }
}

/// Transverse coordinate to the collinearity annulus. Defaults to `y`.
pub fn nu(setup: &FlowSetup, p: &ChartPoint) -> f64 {
    setup.pair.declared_col.map_or(p.y, |c| c.nu(p))
}

fn aitken(v: &[f64]) -> Option<f64> {
    let [a, b, c] = v[v.len().checked_sub(3)?..] else {
        return None;
    };
    let (d1, d2) = (b - a, c - b);
    let denom = d2 - d1;
    if denom.abs() <= f64::EPSILON * (a.abs() + b.abs() + c.abs()) {
        return None;
    }
    let out = c - d2 * d2 / denom;
    out.is_finite().then_some(out)
}

/// Point of `Σ_0` above the last iterate with `ν` replaced by `nu_limit`.
fn extrapolated(setup: &FlowSetup, last: &ChartPoint, nu_limit: f64) -> Result<ChartPoint> {
    setup.point_on_fiber(last.x, last.y - nu(setup, last) + nu_limit, 0.0)
}

fn displacement(setup: &FlowSetup, p: &ChartPoint) -> Result<f64> {
    Ok(return_map(setup, p)?.end.distance(p))
}

/// Iterate `P` from `x ∈ Σ_0` until consecutive iterates are within `tol` or
/// `n_max` returns have been taken. Aitken acceleration on `ν` proposes a
/// limit early; it is accepted once it is itself `P`-fixed to within `tol`.
pub fn iterate_return(setup: &FlowSetup, x: &ChartPoint, n_max: usize, tol: f64) -> Result<OrbitRecord> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let mut points = vec![*x];
    let mut mu_values = vec![normal_decompose(setup, x)?.mu];
    let mut nu_values = vec![nu(setup, x)];
    let mut converged = false;
    let mut limit = None;
    let mut previous_estimate: Option<f64> = None;

    for _ in 0..n_max {
        let current = *points.last().unwrap();
        let next = return_map(setup, &current)?.end;
        if next.distance(&current) < tol {
            converged = true;
            let candidate = match aitken(&nu_values) {
                Some(v) => Some(extrapolated(setup, &current, v)?),
                None => None,
            };
            limit = Some(match candidate {
                Some(c) if displacement(setup, &c)? < 10.0 * tol => c,
                _ => current,
            });
            break;
        }
        points.push(next);
        mu_values.push(normal_decompose(setup, &next)?.mu);
        nu_values.push(nu(setup, &next));

        if let Some(estimate) = aitken(&nu_values) {
            if let Some(prev) = previous_estimate {
                if (estimate - prev).abs() < tol {
                    let c = extrapolated(setup, &next, estimate)?;
                    if displacement(setup, &c)? < tol {
                        converged = true;
                        limit = Some(c);
                        break;
                    }
                }
            }
            previous_estimate = Some(estimate);
        }
    }

    let ratio_bound = mu_values
        .windows(2)
        .zip(nu_values.windows(2))
        .filter_map(|(m, n)| {
            let dn = (n[1] - n[0]).abs();
            (dn > 0.0).then(|| (m[1] - m[0]).abs() / dn)
        })
        .reduce(f64::max);

    Ok(OrbitRecord {
        points,
        mu_values,
        nu_values,
        converged,
        limit,
        ratio_bound,
    })
}

/// `|μ(P(x)) − μ(x)| / d(P(x), x)`.
pub fn cone_ratio(setup: &FlowSetup, x: &ChartPoint) -> Result<f64> {
    let px = return_map(setup, x)?.end;
    let d = px.distance(x);
    if d < FIXED_TOL {
        return Err(Error::FixedPoint);
    }
    let mu0 = normal_decompose(setup, x)?.mu;
    let mu1 = normal_decompose(setup, &px)?.mu;
    Ok((mu1 - mu0).abs() / d)
}

/// Result of [`segment_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub segment: PathSample,
    pub variation: f64,
}

fn bisect_nu(setup: &FlowSetup, a: &ChartPoint, b: &ChartPoint) -> ChartPoint {
    let d = a.delta_to(b);
    let (mut lo, mut hi) = (0.0, 1.0);
    let s0 = nu(setup, a).signum();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if nu(setup, &a.offset(&(d * mid))).signum() == s0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    a.offset(&(d * (0.5 * (lo + hi))))
}

/// Straight chart segment from `x` to `P²(x)` on `Σ_0`, checked against the
/// collinearity locus.
pub fn return_segment(setup: &FlowSetup, x: &ChartPoint) -> Result<PathSample> {
    let p1 = return_map(setup, x)?.end;
    let p2 = return_map(setup, &p1)?.end;
    let segment = PathSample::segment(x, &p2, SEGMENT_SAMPLES);
    let thr = setup.pair.thresholds.collinearity;
    if setup.pair.declared_col.is_some() {
        let s0 = nu(setup, x);
        if s0 == 0.0 {
            return Err(Error::SegmentMeetsCol);
        }
        for w in segment.points.windows(2) {
            if nu(setup, &w[1]) * s0 <= 0.0 {
                let hit = bisect_nu(setup, &w[0], &w[1]);
                if collinearity_residual(&setup.pair, &hit)? < thr || nu(setup, &hit).abs() < thr {
                    return Err(Error::SegmentMeetsCol);
                }
            }
        }
    }
    for p in &segment.points {
        if collinearity_residual(&setup.pair, p)? < thr {
            return Err(Error::SegmentMeetsCol);
        }
    }
    Ok(segment)
}

/// Angular variation of `𝒩 = (α, β)/|(α, β)|` along `[x, P²(x)]`.
pub fn segment_sweep(setup: &FlowSetup, x: &ChartPoint) -> Result<SweepRecord> {
    let segment = return_segment(setup, x)?;
    let first = segment.points[0];
    let last = *segment.points.last().unwrap();
    if first.distance(&last) < FIXED_TOL {
        return Ok(SweepRecord {
            segment,
            variation: 0.0,
        });
    }
    let variation = angular_variation(
        |p| {
            let d = normal_decompose(setup, p)?;
            Ok(Vector2::new(d.alpha, d.beta))
        },
        &segment,
    )?;
    Ok(SweepRecord { segment, variation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DeclaredCol, FieldPair, FieldSpec, SolidTorusDomain};
    use nalgebra::Vector3;

    fn contracting(lambda: f64) -> FlowSetup {
        let g = move |y: f64| -lambda * y / (1.0 + y * y);
        let y = FieldSpec::new(move |p| Vector3::new(0.0, g(p.y), 1.0));
        let x = FieldSpec::new(move |p| Vector3::new(0.0, (p.x + 1.0) * g(p.y), p.x));
        let pair = FieldPair::new(x, y, SolidTorusDomain::new(1.0))
            .unwrap()
            .with_declared_col(DeclaredCol::YZero);
        FlowSetup::new(pair, 1e-11).unwrap()
    }

    fn rotation(a: f64) -> FlowSetup {
        let y = FieldSpec::new(move |p| Vector3::new(-a * p.y, a * p.x, 1.0));
        let x = FieldSpec::new(move |p| {
            let f = p.x * p.x + p.y * p.y;
            Vector3::new(p.x - f * a * p.y, p.y + f * a * p.x, f)
        });
        FlowSetup::new(FieldPair::new(x, y, SolidTorusDomain::new(1.0)).unwrap(), 1e-13).unwrap()
    }

    #[test]
    fn points_of_col_converge_immediately() {
        let s = contracting(0.5);
        let o = iterate_return(&s, &ChartPoint::new(0.3, 0.0, 0.0), 10, 1e-10).unwrap();
        assert!(o.converged);
        assert_eq!(o.points.len(), 1);
        assert_eq!(o.limit, Some(ChartPoint::new(0.3, 0.0, 0.0)));
    }

    #[test]
    fn contracting_orbit_converges_onto_col() {
        let s = contracting(0.5);
        let o = iterate_return(&s, &ChartPoint::new(0.3, 0.2, 0.0), 200, 1e-10).unwrap();
        assert!(o.converged);
        let limit = o.limit.unwrap();
        assert!(limit.y.abs() < 1e-6, "{limit:?}");
        assert!((limit.x - 0.3).abs() < 1e-8);
        for w in o.nu_values.windows(2) {
            assert!(w[1].abs() < w[0].abs());
        }
        assert!(displacement(&s, &limit).unwrap() < 1e-9);
        assert!(o.ratio_bound.unwrap() < 1e-6);
    }

    #[test]
    fn cone_ratio_vanishes_for_rotation_invariant_mu() {
        let s = rotation(0.7);
        let r = cone_ratio(&s, &ChartPoint::new(0.3, 0.1, 0.0)).unwrap();
        assert!(r < 1e-12, "{r}");
        let s = contracting(0.5);
        assert!(matches!(
            cone_ratio(&s, &ChartPoint::new(0.3, 0.0, 0.0)),
            Err(Error::FixedPoint)
        ));
    }

    #[test]
    fn rotation_sweep_matches_chord_angle() {
        let s = rotation(0.7);
        let sweep = segment_sweep(&s, &ChartPoint::new(0.3, 0.0, 0.0)).unwrap();
        let (c, sn) = (1.4f64.cos(), 1.4f64.sin());
        let mut oracle = 0.0;
        let mut prev = 0.0f64;
        for k in 1..=20000 {
            let t = k as f64 / 20000.0;
            let (px, py) = (0.3 + t * (0.3 * c - 0.3), t * 0.3 * sn);
            let ang = py.atan2(px);
            oracle += ang - prev;
            prev = ang;
        }
        assert!((sweep.variation - oracle).abs() < 1e-6, "{} {oracle}", sweep.variation);
    }

    #[test]
    fn segments_through_col_are_rejected() {
        // Each return drifts y by -0.2, so orbits cross y = 0.
        let y = FieldSpec::constant(Vector3::new(0.0, -0.2, 1.0));
        let x = FieldSpec::new(|p| Vector3::new(0.0, p.y - 0.2 * p.x, p.x));
        let pair = FieldPair::new(x, y, SolidTorusDomain::new(1.0))
            .unwrap()
            .with_declared_col(DeclaredCol::YZero);
        let s = FlowSetup::new(pair, 1e-10).unwrap();
        assert!(matches!(
            segment_sweep(&s, &ChartPoint::new(0.0, 0.1, 0.0)),
            Err(Error::SegmentMeetsCol)
        ));
    }

    #[test]
    fn trivial_suspension_sweep_is_zero() {
        let y = FieldSpec::constant(Vector3::new(0.0, 0.0, 1.0));
        let x = FieldSpec::new(|p| Vector3::new(0.0, p.y, p.x));
        let s = FlowSetup::new(FieldPair::new(x, y, SolidTorusDomain::new(1.0)).unwrap(), 1e-10).unwrap();
        let p = ChartPoint::new(0.2, 0.3, 0.0);
        assert_eq!(segment_sweep(&s, &p).unwrap().variation, 0.0);
        let o = iterate_return(&s, &p, 5, 1e-10).unwrap();
        assert!(o.converged && o.points.len() == 1);
    }
}
