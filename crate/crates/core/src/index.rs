//! Poincaré–Hopf indices, linking numbers of the normal component, and the
//! comparison `|Ind(X, U)| = |ℓ⁺ − ℓ⁻|`.
//!
//! Linking numbers are measured relative to the canonical chart frame
//! (`e1`, `e2` lifting `∂x`, `∂y` into the fibers). Signed values are
//! reported; identities are checked on absolute values.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::degree::{
    circle_degree, sin_cos_turns, sphere_degree_of, DegreeReport, DegreeValue, PathSample,
    RefineOptions, SurfaceMesh,
};
use crate::error::{Error, Result};
use crate::field::{collinearity_residual, ChartPoint, FieldSpec};
use crate::section::{normal_decompose, return_map, FlowSetup};

/// Vectors shorter than this count as zeros of the field.
pub const ZERO_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexMethod {
    SphereOfZero,
    EssentialTorus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub value: i64,
    pub residual: f64,
    pub triangles: usize,
    pub max_image_edge: f64,
    pub method: IndexMethod,
}

impl IndexReport {
    fn from_degree(d: DegreeReport, method: IndexMethod) -> Self {
        Self {
            value: d.degree.value,
            residual: d.degree.residual,
            triangles: d.stats.triangles,
            max_image_edge: d.stats.max_image_edge,
            method,
        }
    }
}

/// Index of an isolated zero `p` of `X`: the degree of `X/|X|` on the chart
/// sphere of the given radius, meshed as an icosphere of `mesh_level`.
pub fn index_isolated_zero(
    x: &FieldSpec,
    p: &ChartPoint,
    radius: f64,
    mesh_level: u32,
) -> Result<IndexReport> {
    let mesh = SurfaceMesh::icosphere(mesh_level);
    let map = |v: &[f64; 3]| -> Result<Vector3<f64>> {
        let q = p.offset(&(Vector3::from(*v) * radius));
        let w = x.eval(&q)?;
        let norm = w.norm();
        if norm < ZERO_THRESHOLD {
            return Err(Error::ZeroOnSphere { norm });
        }
        Ok(w)
    };
    let d = sphere_degree_of(map, &mesh, &RefineOptions::default())?;
    Ok(IndexReport::from_degree(d, IndexMethod::SphereOfZero))
}

/// Parameters of the essential torus `{x² + y² = r²} × R/Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusParams {
    pub radius: f64,
    /// Samples around the core circle's meridian (the disc angle).
    pub n_meridian: usize,
    /// Samples along the core direction.
    pub n_longitude: usize,
}

impl Default for TorusParams {
    fn default() -> Self {
        Self {
            radius: 0.5,
            n_meridian: 96,
            n_longitude: 96,
        }
    }
}

impl TorusParams {
    /// Chart point of the torus parameter `(s, t)`.
    pub fn point(&self, s: f64, t: f64) -> ChartPoint {
        let (sn, cs) = sin_cos_turns(s);
        ChartPoint::new(self.radius * cs, self.radius * sn, t)
    }
}

/// Index of `X` in the solid torus bounded by the essential torus: the degree
/// of the frame coordinates `(α, β, μ)/|(α, β, μ)|` restricted to it.
pub fn index_region(setup: &FlowSetup, torus: &TorusParams) -> Result<IndexReport> {
    if !(torus.radius > 0.0 && torus.radius < setup.pair.domain.disc_radius) {
        return Err(Error::InvalidArgument(format!(
            "torus radius {} must lie inside the disc of radius {}",
            torus.radius, setup.pair.domain.disc_radius
        )));
    }
    let mesh = SurfaceMesh::torus_grid(torus.n_meridian, torus.n_longitude);
    let map = |v: &[f64; 3]| -> Result<Vector3<f64>> {
        let d = normal_decompose(setup, &torus.point(v[0], v[1]))?;
        let w = Vector3::new(d.alpha, d.beta, d.mu);
        let norm = w.norm();
        if norm < ZERO_THRESHOLD {
            return Err(Error::ZeroOnTorus { norm });
        }
        Ok(w)
    };
    let d = sphere_degree_of(map, &mesh, &RefineOptions::default())?;
    Ok(IndexReport::from_degree(d, IndexMethod::EssentialTorus))
}

/// Linking numbers of the normal component with the two sides of the
/// collinearity annulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingReport {
    pub ell_plus: i64,
    pub ell_minus: i64,
    pub raw_plus: f64,
    pub raw_minus: f64,
    pub loop_plus: PathSample,
    pub loop_minus: PathSample,
}

/// Samples used for the initial loop discretisation; refined adaptively.
const LOOP_SAMPLES: usize = 64;

/// Winding of `𝒩 = (α, β)/|(α, β)|` along a closed loop that avoids the
/// collinearity locus.
pub fn normal_winding(setup: &FlowSetup, path: &PathSample) -> Result<DegreeValue> {
    let thr = setup.pair.thresholds.collinearity;
    for p in &path.points {
        let residual = collinearity_residual(&setup.pair, p)?;
        if residual < thr {
            return Err(Error::LoopMeetsCol {
                offset: p.y,
                residual,
            });
        }
    }
    circle_degree(
        |p| {
            let d = normal_decompose(setup, p)?;
            Ok(Vector2::new(d.alpha, d.beta))
        },
        path,
    )
}

/// `ℓ±` measured along the loops `{(0, ±y_offset)} × R/Z`, oriented by the angle.
pub fn linking_numbers(setup: &FlowSetup, y_offset: f64) -> Result<LinkingReport> {
    let plus = PathSample::angular_loop(0.0, y_offset.abs(), LOOP_SAMPLES);
    let minus = PathSample::angular_loop(0.0, -y_offset.abs(), LOOP_SAMPLES);
    linking_along(setup, plus, minus)
}

/// `ℓ±` along arbitrary loops in the two components.
pub fn linking_along(
    setup: &FlowSetup,
    loop_plus: PathSample,
    loop_minus: PathSample,
) -> Result<LinkingReport> {
    let wrap = |e: Error, offset: f64| match e {
        Error::LoopMeetsCol { residual, .. } => Error::LoopMeetsCol { offset, residual },
        e => e,
    };
    let off_plus = loop_plus.points.first().map_or(0.0, |p| p.y);
    let off_minus = loop_minus.points.first().map_or(0.0, |p| p.y);
    let plus = normal_winding(setup, &loop_plus).map_err(|e| wrap(e, off_plus))?;
    let minus = normal_winding(setup, &loop_minus).map_err(|e| wrap(e, off_minus))?;
    Ok(LinkingReport {
        ell_plus: plus.value,
        ell_minus: minus.value,
        raw_plus: plus.raw,
        raw_minus: minus.raw,
        loop_plus,
        loop_minus,
    })
}

/// Settings for [`verify_link_index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkIndexParams {
    pub torus: TorusParams,
    pub y_offset: f64,
}

impl Default for LinkIndexParams {
    fn default() -> Self {
        Self {
            torus: TorusParams::default(),
            y_offset: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkIndexReport {
    pub index: IndexReport,
    pub linking: LinkingReport,
    /// `|Ind|`.
    pub lhs: i64,
    /// `|ℓ⁺ − ℓ⁻|`.
    pub rhs: i64,
    pub identity_holds: bool,
}

/// Compute the region index and both linking numbers and compare them.
pub fn verify_link_index(setup: &FlowSetup, params: &LinkIndexParams) -> Result<LinkIndexReport> {
    let linking = linking_numbers(setup, params.y_offset)?;
    let index = index_region(setup, &params.torus)?;
    let lhs = index.value.abs();
    let rhs = (linking.ell_plus - linking.ell_minus).abs();
    Ok(LinkIndexReport {
        index,
        linking,
        lhs,
        rhs,
        identity_holds: lhs == rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedPointClass {
    /// `DP = Id`.
    IdentityLike,
    /// Both eigenvalues are 1 but `DP ≠ Id`.
    Parabolic,
    /// A real eigenvalue away from 1.
    PartiallyHyperbolic,
    /// Complex conjugate eigenvalues.
    Elliptic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub point: ChartPoint,
    pub displacement: f64,
    pub dp: Matrix2<f64>,
    /// Eigenvalues as `(re, im)` pairs, real ones sorted ascending.
    pub eigenvalues: [(f64, f64); 2],
    pub tolerance: f64,
    pub class: FixedPointClass,
}

/// Eigenvalues of a real 2×2 matrix as `(re, im)` pairs.
pub fn eigenvalues_2x2(m: &Matrix2<f64>) -> [(f64, f64); 2] {
    let half_tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m.determinant();
    let disc = half_tr * half_tr - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // Avoid cancellation in the smaller root.
        let big = half_tr + r.copysign(half_tr);
        let small = if big != 0.0 { det / big } else { half_tr - r };
        let (a, b) = if big < small { (big, small) } else { (small, big) };
        [(a, 0.0), (b, 0.0)]
    } else {
        let i = (-disc).sqrt();
        [(half_tr, -i), (half_tr, i)]
    }
}

fn condition_number(m: &Matrix2<f64>) -> f64 {
    let sv = m.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Classify a return-map derivative at a fixed point. The tolerance is
/// `base_tol` scaled by the condition number of `dp`.
pub fn classify_fixed_point(dp: &Matrix2<f64>, base_tol: f64) -> (FixedPointClass, [(f64, f64); 2], f64) {
    let eig = eigenvalues_2x2(dp);
    let tol = base_tol * condition_number(dp).max(1.0);
    let class = if eig[0].1 != 0.0 && eig[1].1.abs() > tol {
        FixedPointClass::Elliptic
    } else if eig.iter().any(|(re, _)| (re - 1.0).abs() > tol) {
        FixedPointClass::PartiallyHyperbolic
    } else if (dp - Matrix2::identity()).abs().max() <= tol {
        FixedPointClass::IdentityLike
    } else {
        FixedPointClass::Parabolic
    };
    (class, eig, tol)
}

/// Spectrum of the return-map derivative at a fixed point `x ∈ Σ_0`.
pub fn fixed_point_spectrum(setup: &FlowSetup, x: &ChartPoint, fixed_tol: f64) -> Result<SpectrumReport> {
    let rec = return_map(setup, x)?;
    let displacement = rec.end.distance(x);
    if displacement >= fixed_tol {
        return Err(Error::NotFixed { displacement });
    }
    let (class, eigenvalues, tolerance) = classify_fixed_point(&rec.dp, 1e-6);
    Ok(SpectrumReport {
        point: *x,
        displacement,
        dp: rec.dp,
        eigenvalues,
        tolerance,
        class,
    })
}
