//! Experiment kinds that a scenario can request, and their execution.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context as _, Result};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use torlink_core::degree::{
    azimuthal_power, circle_degree, meridian_project, model_map, sphere_degree_of, PathSample,
    RefineOptions, SurfaceMesh,
};
use torlink_core::dynamics::{cone_ratio, iterate_return, nu, segment_sweep};
use torlink_core::field::{find_collinearity, max_commutator_residual, ChartPoint};
use torlink_core::index::{
    fixed_point_spectrum, index_isolated_zero, index_region, linking_numbers, verify_link_index,
    LinkIndexParams, TorusParams,
};
use torlink_core::section::{
    holonomy, holonomy_between, holonomy_invariance_residual, return_identity_residual, return_map,
    tangent_flow_residual, FlowSetup,
};

use crate::config::FieldExpr;

/// One asserted comparison, carrying both sides and the residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: Value,
    pub rhs: Value,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// `|lhs − rhs| ≤ tol`.
    pub fn close(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        let residual = (lhs - rhs).abs();
        Self {
            name: name.into(),
            lhs: json!(lhs),
            rhs: json!(rhs),
            residual,
            tolerance: tol,
            passed: residual <= tol,
        }
    }

    /// `value < bound`.
    pub fn below(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            lhs: json!(value),
            rhs: json!(bound),
            residual: value,
            tolerance: bound,
            passed: value < bound,
        }
    }

    /// `value > threshold`.
    pub fn above(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            lhs: json!(value),
            rhs: json!(threshold),
            residual: value,
            tolerance: threshold,
            passed: value > threshold,
        }
    }

    pub fn int_eq(name: &str, lhs: i64, rhs: i64) -> Self {
        Self {
            name: name.into(),
            lhs: json!(lhs),
            rhs: json!(rhs),
            residual: (lhs - rhs).unsigned_abs() as f64,
            tolerance: 0.0,
            passed: lhs == rhs,
        }
    }

    pub fn label_eq(name: &str, lhs: &str, rhs: &str) -> Self {
        Self {
            name: name.into(),
            lhs: json!(lhs),
            rhs: json!(rhs),
            residual: if lhs == rhs { 0.0 } else { 1.0 },
            tolerance: 0.0,
            passed: lhs == rhs,
        }
    }
}

/// Plot data emitted as CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub data: Value,
    pub tables: Vec<Table>,
}

macro_rules! params {
    ($(#[$m:meta])* $name:ident { $($field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name { $(pub $field: $ty),* }

        impl Default for $name {
            fn default() -> Self {
                Self { $($field: $default),* }
            }
        }
    };
}

params!(CommutatorParams { grid: usize = 20, tol: f64 = 1e-6 });
params!(TangentFlowParams {
    samples: usize = 50,
    times: Vec<f64> = vec![0.1, 0.5, 1.0],
    radius: f64 = 0.6,
    tol: f64 = 1e-6,
});
params!(HolonomyInvarianceParams {
    samples: usize = 50,
    times: Vec<f64> = vec![0.25, 0.5, 1.0],
    radius: f64 = 0.6,
    tol: f64 = 1e-6,
});
params!(ReturnIdentityParams {
    samples: usize = 100,
    radius: f64 = 0.7,
    min_side: f64 = 1e-3,
    tol: f64 = 1e-5,
    expect_violation: bool = false,
    max_draws: usize = 20_000,
});
params!(CompositionParams { samples: usize = 20, radius: f64 = 0.6, tol: f64 = 1e-8 });
params!(DerivativeFdParams {
    samples: usize = 20,
    radius: f64 = 0.5,
    step: f64 = 1e-5,
    tol: f64 = 1e-5,
});
params!(FixedPointsParams { xs: Vec<f64> = vec![-0.5, -0.1, 0.2, 0.6], tol: f64 = 1e-10 });
params!(CollinearityParams { grid: usize = 12, refine_tol: f64 = 1e-10, tol: f64 = 1e-6 });
params!(IndexRegionParams {
    radius: f64 = 0.5,
    grid: usize = 96,
    shifts: Vec<f64> = vec![0.0],
    expected_abs: Option<i64> = None,
});
params!(LinkingParams { offsets: Vec<f64> = vec![0.25, 0.4], expected: Option<[i64; 2]> = None });
params!(VerifyLinkIndexParams {
    radius: f64 = 0.5,
    grid: usize = 96,
    y_offset: f64 = 0.25,
    expected_index_abs: Option<i64> = None,
    expected_linking: Option<[i64; 2]> = None,
});
params!(SpectrumParams {
    point: [f64; 2] = [0.3, 0.0],
    fixed_tol: f64 = 1e-8,
    expect: Option<String> = None,
    multiplier: Option<f64> = None,
    tol: f64 = 1e-5,
});
params!(OrbitsParams {
    seeds: usize = 20,
    n_max: usize = 500,
    tol: f64 = 1e-10,
    x_range: [f64; 2] = [-0.6, 0.6],
    y_range: [f64; 2] = [-0.4, 0.4],
    nu_tol: f64 = 1e-6,
    fixed_tol: f64 = 1e-8,
});
params!(ConeRatioParams {
    points: Vec<[f64; 2]> = vec![[0.3, 0.1]],
    expected: Option<f64> = None,
    tol: f64 = 1e-9,
});
params!(SegmentSweepParams {
    point: [f64; 2] = [0.3, 0.0],
    expected: Option<f64> = None,
    bound: Option<f64> = None,
    tol: f64 = 1e-6,
});
params!(ModelMapSuiteParams { range: i64 = 2, grid: usize = 64 });
params!(SphereDegreeParams {
    map: String = "identity".into(),
    power: i64 = 1,
    level: u32 = 3,
    expected: i64 = 1,
    residual_tol: f64 = 0.01,
    min_triangles: usize = 0,
});
params!(IsolatedZeroParams {
    field: [String; 3] = ["x".into(), "y".into(), "theta - 0.5".into()],
    center: [f64; 3] = [0.0, 0.0, 0.5],
    radius: f64 = 0.1,
    level: u32 = 2,
    expected: i64 = 1,
    residual_tol: f64 = 0.01,
});

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Experiment {
    Commutator(CommutatorParams),
    TangentFlow(TangentFlowParams),
    HolonomyInvariance(HolonomyInvarianceParams),
    ReturnIdentity(ReturnIdentityParams),
    Composition(CompositionParams),
    DerivativeFd(DerivativeFdParams),
    FixedPointsOnCol(FixedPointsParams),
    Collinearity(CollinearityParams),
    IndexRegion(IndexRegionParams),
    Linking(LinkingParams),
    VerifyLinkIndex(VerifyLinkIndexParams),
    Spectrum(SpectrumParams),
    Orbits(OrbitsParams),
    ConeRatio(ConeRatioParams),
    SegmentSweep(SegmentSweepParams),
    ModelMapSuite(ModelMapSuiteParams),
    SphereDegree(SphereDegreeParams),
    IsolatedZero(IsolatedZeroParams),
}

pub const KINDS: [&str; 18] = [
    "commutator",
    "tangent_flow",
    "holonomy_invariance",
    "return_identity",
    "composition",
    "derivative_fd",
    "fixed_points_on_col",
    "collinearity",
    "index_region",
    "linking",
    "verify_link_index",
    "spectrum",
    "orbits",
    "cone_ratio",
    "segment_sweep",
    "model_map_suite",
    "sphere_degree",
    "isolated_zero",
];

const CLASSES: [&str; 4] = ["identity-like", "parabolic", "partially-hyperbolic", "elliptic"];

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

impl Experiment {
    pub fn from_table(
        kind: &str,
        params: toml::Table,
        scenario_params: &BTreeMap<String, f64>,
    ) -> Result<Self, String> {
        fn de<T: serde::de::DeserializeOwned>(t: toml::Table) -> Result<T, String> {
            toml::Value::Table(t).try_into().map_err(|e: toml::de::Error| e.message().to_string())
        }
        let e = match kind {
            "commutator" => Self::Commutator(de(params)?),
            "tangent_flow" => Self::TangentFlow(de(params)?),
            "holonomy_invariance" => Self::HolonomyInvariance(de(params)?),
            "return_identity" => Self::ReturnIdentity(de(params)?),
            "composition" => Self::Composition(de(params)?),
            "derivative_fd" => Self::DerivativeFd(de(params)?),
            "fixed_points_on_col" => Self::FixedPointsOnCol(de(params)?),
            "collinearity" => Self::Collinearity(de(params)?),
            "index_region" => Self::IndexRegion(de(params)?),
            "linking" => Self::Linking(de(params)?),
            "verify_link_index" => Self::VerifyLinkIndex(de(params)?),
            "spectrum" => Self::Spectrum(de(params)?),
            "orbits" => Self::Orbits(de(params)?),
            "cone_ratio" => Self::ConeRatio(de(params)?),
            "segment_sweep" => Self::SegmentSweep(de(params)?),
            "model_map_suite" => Self::ModelMapSuite(de(params)?),
            "sphere_degree" => Self::SphereDegree(de(params)?),
            "isolated_zero" => Self::IsolatedZero(de(params)?),
            other => {
                return Err(format!(
                    "unknown experiment kind '{other}' (known: {})",
                    KINDS.join(", ")
                ))
            }
        };
        e.validate(scenario_params)?;
        Ok(e)
    }

    fn validate(&self, scenario_params: &BTreeMap<String, f64>) -> Result<(), String> {
        match self {
            Self::Commutator(p) => positive("tol", p.tol),
            Self::TangentFlow(p) => positive("radius", p.radius).and(positive("tol", p.tol)),
            Self::HolonomyInvariance(p) => {
                if p.times.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                    return Err("times must lie in (0, 1]".into());
                }
                positive("radius", p.radius)
            }
            Self::ReturnIdentity(p) => {
                if p.min_side < 0.0 {
                    return Err("min_side must be non-negative".into());
                }
                positive("radius", p.radius).and(positive("tol", p.tol))
            }
            Self::DerivativeFd(p) => positive("step", p.step),
            Self::IndexRegion(p) => positive("radius", p.radius),
            Self::VerifyLinkIndex(p) => positive("radius", p.radius).and(positive("y_offset", p.y_offset)),
            Self::Linking(p) => {
                if p.offsets.is_empty() || p.offsets.iter().any(|o| *o <= 0.0) {
                    return Err("offsets must be a non-empty list of positive values".into());
                }
                Ok(())
            }
            Self::Spectrum(p) => match &p.expect {
                Some(c) if !CLASSES.contains(&c.as_str()) => {
                    Err(format!("expect must be one of {}", CLASSES.join(", ")))
                }
                _ => Ok(()),
            },
            Self::Orbits(p) => positive("tol", p.tol),
            Self::ModelMapSuite(p) => {
                if p.range < 0 || p.grid < 3 {
                    return Err("range must be non-negative and grid at least 3".into());
                }
                Ok(())
            }
            Self::SphereDegree(p) => match p.map.as_str() {
                "identity" | "antipodal" | "azimuthal" => Ok(()),
                m => Err(format!("map must be identity, antipodal or azimuthal, got '{m}'")),
            },
            Self::IsolatedZero(p) => {
                FieldExpr::compile(p.field.clone(), scenario_params).map_err(|e| e.join("; "))?;
                positive("radius", p.radius)
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Commutator(_) => "commutator",
            Self::TangentFlow(_) => "tangent_flow",
            Self::HolonomyInvariance(_) => "holonomy_invariance",
            Self::ReturnIdentity(_) => "return_identity",
            Self::Composition(_) => "composition",
            Self::DerivativeFd(_) => "derivative_fd",
            Self::FixedPointsOnCol(_) => "fixed_points_on_col",
            Self::Collinearity(_) => "collinearity",
            Self::IndexRegion(_) => "index_region",
            Self::Linking(_) => "linking",
            Self::VerifyLinkIndex(_) => "verify_link_index",
            Self::Spectrum(_) => "spectrum",
            Self::Orbits(_) => "orbits",
            Self::ConeRatio(_) => "cone_ratio",
            Self::SegmentSweep(_) => "segment_sweep",
            Self::ModelMapSuite(_) => "model_map_suite",
            Self::SphereDegree(_) => "sphere_degree",
            Self::IsolatedZero(_) => "isolated_zero",
        }
    }

    pub fn needs_fields(&self) -> bool {
        !matches!(
            self,
            Self::ModelMapSuite(_) | Self::SphereDegree(_) | Self::IsolatedZero(_)
        )
    }

    pub fn needs_declared_col(&self) -> bool {
        matches!(self, Self::FixedPointsOnCol(_) | Self::Orbits(_))
    }
}

/// Everything an experiment may use.
pub struct Context<'a> {
    pub setup: Option<std::result::Result<&'a FlowSetup, String>>,
    pub params: &'a BTreeMap<String, f64>,
    pub tol: f64,
}

impl<'a> Context<'a> {
    fn setup(&self) -> Result<&'a FlowSetup> {
        match &self.setup {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(anyhow!("scenario fields are unusable: {e}")),
            None => Err(anyhow!("scenario declares no fields")),
        }
    }
}

fn disc_point(rng: &mut ChaCha8Rng, r: f64) -> (f64, f64) {
    let rad = r * rng.gen::<f64>().sqrt();
    let ang = std::f64::consts::TAU * rng.gen::<f64>();
    (rad * ang.cos(), rad * ang.sin())
}

fn point_json(p: &ChartPoint) -> Value {
    json!([p.x, p.y, p.theta])
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
}

impl Experiment {
    pub fn run(&self, ctx: &Context, rng: &mut ChaCha8Rng) -> Result<Outcome> {
        match self {
            Self::Commutator(p) => {
                let s = ctx.setup()?;
                let (max, at) = max_commutator_residual(&s.pair, p.grid)?;
                Ok(Outcome {
                    checks: vec![Check::below("max commutator residual on grid", max, p.tol)],
                    data: json!({ "grid": p.grid, "max": max, "at": point_json(&at) }),
                    tables: vec![],
                })
            }
            Self::TangentFlow(p) => {
                let s = ctx.setup()?;
                let pts: Vec<ChartPoint> = (0..p.samples)
                    .map(|_| {
                        let (x, y) = disc_point(rng, p.radius);
                        ChartPoint::new(x, y, rng.gen())
                    })
                    .collect();
                let res: Vec<f64> = pts
                    .par_iter()
                    .map(|pt| {
                        p.times
                            .iter()
                            .map(|&t| tangent_flow_residual(s, pt, t))
                            .collect::<torlink_core::Result<Vec<_>>>()
                            .map(max_of)
                    })
                    .collect::<torlink_core::Result<_>>()?;
                let max = max_of(res.iter().copied());
                Ok(Outcome {
                    checks: vec![Check::below("max relative tangent-flow defect", max, p.tol)],
                    data: json!({ "samples": p.samples, "times": p.times, "max": max }),
                    tables: vec![],
                })
            }
            Self::HolonomyInvariance(p) => {
                let s = ctx.setup()?;
                let pts = section_points(s, rng, p.samples, p.radius)?;
                let res: Vec<f64> = pts
                    .par_iter()
                    .map(|pt| {
                        p.times
                            .iter()
                            .map(|&t| holonomy_invariance_residual(s, pt, t))
                            .collect::<torlink_core::Result<Vec<_>>>()
                            .map(max_of)
                    })
                    .collect::<torlink_core::Result<_>>()?;
                let max = max_of(res.iter().copied());
                Ok(Outcome {
                    checks: vec![Check::below("max relative holonomy defect of N", max, p.tol)],
                    data: json!({ "samples": p.samples, "times": p.times, "max": max }),
                    tables: vec![],
                })
            }
            Self::ReturnIdentity(p) => run_return_identity(ctx.setup()?, p, rng),
            Self::Composition(p) => {
                let s = ctx.setup()?;
                let pts = section_points(s, rng, p.samples, p.radius)?;
                let res: Vec<(f64, f64)> = pts
                    .par_iter()
                    .map(|pt| {
                        let full = holonomy(s, pt, 1.0)?;
                        let first = holonomy(s, pt, 0.5)?;
                        let second = holonomy_between(s, &first.end, 0.5, 1.0)?;
                        Ok((
                            second.end.distance(&full.end),
                            (first.tau + second.tau - full.tau).abs(),
                        ))
                    })
                    .collect::<torlink_core::Result<_>>()?;
                let end = max_of(res.iter().map(|r| r.0));
                let tau = max_of(res.iter().map(|r| r.1));
                Ok(Outcome {
                    checks: vec![
                        Check::below("max endpoint mismatch", end, p.tol),
                        Check::below("max return-time additivity defect", tau, p.tol),
                    ],
                    data: json!({ "samples": p.samples }),
                    tables: vec![],
                })
            }
            Self::DerivativeFd(p) => {
                let s = ctx.setup()?;
                let pts = section_points(s, rng, p.samples, p.radius)?;
                let h = p.step;
                let res: Vec<(f64, f64)> = pts
                    .par_iter()
                    .map(|pt| {
                        let rec = return_map(s, pt)?;
                        let (mut dp_err, mut dtau_err) = (0.0f64, 0.0f64);
                        for j in 0..2 {
                            let e = if j == 0 { s.frame.e1(pt) } else { s.frame.e2(pt) };
                            let plus = return_map(s, &pt.offset(&(e * h)))?;
                            let minus = return_map(s, &pt.offset(&(-e * h)))?;
                            let d: Vector3<f64> = minus.end.delta_to(&plus.end) / (2.0 * h);
                            let fd = s.frame.coordinates(&rec.end, &d)?;
                            let col = rec.dp.column(j);
                            let scale = 1.0 + col.norm();
                            dp_err = dp_err
                                .max(((fd.x - col[0]).powi(2) + (fd.y - col[1]).powi(2)).sqrt() / scale);
                            let fd_tau = (plus.tau - minus.tau) / (2.0 * h);
                            dtau_err = dtau_err.max((fd_tau - rec.dtau[j]).abs() / (1.0 + rec.dtau[j].abs()));
                        }
                        Ok((dp_err, dtau_err))
                    })
                    .collect::<torlink_core::Result<_>>()?;
                let dp = max_of(res.iter().map(|r| r.0));
                let dtau = max_of(res.iter().map(|r| r.1));
                Ok(Outcome {
                    checks: vec![
                        Check::below("max relative dP mismatch vs finite differences", dp, p.tol),
                        Check::below("max relative dtau mismatch vs finite differences", dtau, p.tol),
                    ],
                    data: json!({ "samples": p.samples, "step": h }),
                    tables: vec![],
                })
            }
            Self::FixedPointsOnCol(p) => {
                let s = ctx.setup()?;
                let mut disp = Vec::new();
                let mut ident = Vec::new();
                let mut dtau_along = Vec::new();
                for &x in &p.xs {
                    let pt = s.point_on_fiber(x, 0.0, 0.0)?;
                    let rec = return_map(s, &pt)?;
                    disp.push(rec.end.distance(&pt));
                    dtau_along.push(rec.dtau[0]);
                    ident.push(return_identity_residual(s, &pt)?.residual);
                }
                // Dτ along Col is reported, not asserted.
                let min_dtau = dtau_along.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
                Ok(Outcome {
                    checks: vec![
                        Check::below("max displacement of Col points under P", max_of(disp.clone()), p.tol),
                        Check::below("max return-identity residual on Col", max_of(ident.clone()), p.tol),
                    ],
                    data: json!({
                        "xs": p.xs,
                        "displacements": disp,
                        "identity_residuals": ident,
                        "dtau_along_col": dtau_along,
                        "dtau_nonzero_on_col": min_dtau > p.tol,
                    }),
                    tables: vec![],
                })
            }
            Self::Collinearity(p) => {
                let s = ctx.setup()?;
                let pts = find_collinearity(&s.pair, p.grid, p.refine_tol)?;
                let max_nu = max_of(pts.iter().map(|q| nu(s, q).abs()));
                Ok(Outcome {
                    checks: vec![
                        Check::above("collinear points found", pts.len() as f64, 0.0),
                        Check::below("max |nu| of collinear points", max_nu, p.tol),
                    ],
                    data: json!({ "count": pts.len(), "max_abs_nu": max_nu }),
                    tables: vec![Table {
                        name: "collinearity".into(),
                        header: vec!["x".into(), "y".into(), "theta".into()],
                        rows: pts.iter().map(|q| vec![q.x, q.y, q.theta]).collect(),
                    }],
                })
            }
            Self::IndexRegion(p) => {
                let s = ctx.setup()?;
                let torus = TorusParams {
                    radius: p.radius,
                    n_meridian: p.grid,
                    n_longitude: p.grid,
                };
                let reports = p
                    .shifts
                    .par_iter()
                    .map(|&shift| {
                        let shifted = FlowSetup::new(s.pair.shifted(shift), ctx.tol)?;
                        index_region(&shifted, &torus)
                    })
                    .collect::<torlink_core::Result<Vec<_>>>()?;
                let values: Vec<i64> = reports.iter().map(|r| r.value).collect();
                let (lo, hi) = (*values.iter().min().unwrap_or(&0), *values.iter().max().unwrap_or(&0));
                let mut checks = vec![
                    Check::int_eq("index constant along X - sY", lo, hi),
                    Check::below(
                        "max integrality residual",
                        max_of(reports.iter().map(|r| r.residual)),
                        0.05,
                    ),
                ];
                if let Some(e) = p.expected_abs {
                    checks.push(Check::int_eq("|index|", values.first().copied().unwrap_or(0).abs(), e));
                }
                Ok(Outcome {
                    checks,
                    data: json!({ "shifts": p.shifts, "values": values, "reports": reports }),
                    tables: vec![],
                })
            }
            Self::Linking(p) => {
                let s = ctx.setup()?;
                let ls = p
                    .offsets
                    .iter()
                    .map(|&o| linking_numbers(s, o))
                    .collect::<torlink_core::Result<Vec<_>>>()?;
                let pairs: Vec<[i64; 2]> = ls.iter().map(|l| [l.ell_plus, l.ell_minus]).collect();
                let mut checks = Vec::new();
                for (k, pr) in pairs.iter().enumerate().skip(1) {
                    let name = format!("l+ at offset {} equals l+ at offset {}", p.offsets[k], p.offsets[0]);
                    checks.push(Check::int_eq(&name, pr[0], pairs[0][0]));
                    let name = format!("l- at offset {} equals l- at offset {}", p.offsets[k], p.offsets[0]);
                    checks.push(Check::int_eq(&name, pr[1], pairs[0][1]));
                }
                if let Some(e) = p.expected {
                    checks.push(Check::int_eq("l+", pairs[0][0], e[0]));
                    checks.push(Check::int_eq("l-", pairs[0][1], e[1]));
                }
                Ok(Outcome {
                    checks,
                    data: json!({ "offsets": p.offsets, "linking": pairs }),
                    tables: vec![],
                })
            }
            Self::VerifyLinkIndex(p) => {
                let s = ctx.setup()?;
                let params = LinkIndexParams {
                    torus: TorusParams {
                        radius: p.radius,
                        n_meridian: p.grid,
                        n_longitude: p.grid,
                    },
                    y_offset: p.y_offset,
                };
                let r = verify_link_index(s, &params)?;
                let mut checks = vec![
                    Check::int_eq("|Ind| = |l+ - l-|", r.lhs, r.rhs),
                    Check::below("index integrality residual", r.index.residual, 0.05),
                ];
                if let Some(e) = p.expected_index_abs {
                    checks.push(Check::int_eq("|Ind|", r.lhs, e));
                }
                if let Some(e) = p.expected_linking {
                    checks.push(Check::int_eq("l+", r.linking.ell_plus, e[0]));
                    checks.push(Check::int_eq("l-", r.linking.ell_minus, e[1]));
                }
                Ok(Outcome {
                    checks,
                    data: json!({
                        "index": r.index,
                        "ell_plus": r.linking.ell_plus,
                        "ell_minus": r.linking.ell_minus,
                        "raw_plus": r.linking.raw_plus,
                        "raw_minus": r.linking.raw_minus,
                        "identity_holds": r.identity_holds,
                    }),
                    tables: vec![],
                })
            }
            Self::Spectrum(p) => {
                let s = ctx.setup()?;
                let pt = s.point_on_fiber(p.point[0], p.point[1], 0.0)?;
                let r = fixed_point_spectrum(s, &pt, p.fixed_tol)?;
                let class = serde_json::to_value(r.class)?;
                let class = class.as_str().unwrap_or_default().to_string();
                let mut checks = Vec::new();
                if let Some(e) = &p.expect {
                    checks.push(Check::label_eq("classification", &class, e));
                }
                if let Some(m) = p.multiplier {
                    let closest = r
                        .eigenvalues
                        .iter()
                        .min_by(|a, b| {
                            let da = (a.0 - m).abs() + a.1.abs();
                            let db = (b.0 - m).abs() + b.1.abs();
                            da.total_cmp(&db)
                        })
                        .copied()
                        .unwrap_or((f64::NAN, 0.0));
                    checks.push(Check::close("eigenvalue vs multiplier", closest.0, m, p.tol));
                }
                Ok(Outcome {
                    checks,
                    data: json!({
                        "point": point_json(&pt),
                        "displacement": r.displacement,
                        "dp": [[r.dp[(0, 0)], r.dp[(0, 1)]], [r.dp[(1, 0)], r.dp[(1, 1)]]],
                        "eigenvalues": r.eigenvalues,
                        "class": class,
                        "tolerance": r.tolerance,
                    }),
                    tables: vec![],
                })
            }
            Self::Orbits(p) => run_orbits(ctx.setup()?, p, rng),
            Self::ConeRatio(p) => {
                let s = ctx.setup()?;
                let ratios = p
                    .points
                    .iter()
                    .map(|q| cone_ratio(s, &s.point_on_fiber(q[0], q[1], 0.0)?))
                    .collect::<torlink_core::Result<Vec<_>>>()?;
                let mut checks = Vec::new();
                if let Some(e) = p.expected {
                    for (q, r) in p.points.iter().zip(&ratios) {
                        checks.push(Check::close(&format!("cone ratio at ({}, {})", q[0], q[1]), *r, e, p.tol));
                    }
                }
                Ok(Outcome {
                    checks,
                    data: json!({ "points": p.points, "ratios": ratios }),
                    tables: vec![],
                })
            }
            Self::SegmentSweep(p) => {
                let s = ctx.setup()?;
                let pt = s.point_on_fiber(p.point[0], p.point[1], 0.0)?;
                let r = segment_sweep(s, &pt)?;
                let mut checks = Vec::new();
                if let Some(e) = p.expected {
                    checks.push(Check::close("angular variation along [x, P^2 x]", r.variation, e, p.tol));
                }
                if let Some(b) = p.bound {
                    checks.push(Check::below("|angular variation|", r.variation.abs(), b));
                }
                let end = r.segment.points.last().copied().unwrap_or(pt);
                Ok(Outcome {
                    checks,
                    data: json!({ "start": point_json(&pt), "end": point_json(&end), "variation": r.variation }),
                    tables: vec![],
                })
            }
            Self::ModelMapSuite(p) => run_model_map_suite(p),
            Self::SphereDegree(p) => {
                let mesh = SurfaceMesh::icosphere(p.level);
                let k = p.power;
                let map = p.map.clone();
                let r = sphere_degree_of(
                    |v| {
                        let v = Vector3::from(*v);
                        Ok(match map.as_str() {
                            "identity" => v,
                            "antipodal" => -v,
                            _ => azimuthal_power(k, &v),
                        })
                    },
                    &mesh,
                    &RefineOptions::default(),
                )?;
                let mut checks = vec![
                    Check::int_eq("degree", r.degree.value, p.expected),
                    Check::below("integrality residual", r.degree.residual, p.residual_tol),
                ];
                if p.min_triangles > 0 {
                    checks.push(Check::above(
                        "triangles",
                        r.stats.triangles as f64,
                        p.min_triangles as f64 - 0.5,
                    ));
                }
                Ok(Outcome {
                    checks,
                    data: serde_json::to_value(r)?,
                    tables: vec![],
                })
            }
            Self::IsolatedZero(p) => {
                let f = FieldExpr::compile(p.field.clone(), ctx.params)
                    .map_err(|e| anyhow!(e.join("; ")))?
                    .field();
                let c = ChartPoint::new(p.center[0], p.center[1], p.center[2]);
                let r = index_isolated_zero(&f, &c, p.radius, p.level)?;
                Ok(Outcome {
                    checks: vec![
                        Check::int_eq("index", r.value, p.expected),
                        Check::below("integrality residual", r.residual, p.residual_tol),
                    ],
                    data: serde_json::to_value(r)?,
                    tables: vec![],
                })
            }
        }
    }
}

fn section_points(
    s: &FlowSetup,
    rng: &mut ChaCha8Rng,
    n: usize,
    r: f64,
) -> torlink_core::Result<Vec<ChartPoint>> {
    (0..n)
        .map(|_| {
            let (x, y) = disc_point(rng, r);
            s.point_on_fiber(x, y, 0.0)
        })
        .collect()
}

fn run_return_identity(s: &FlowSetup, p: &ReturnIdentityParams, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let mut rows = Vec::new();
    if p.expect_violation {
        let pts = section_points(s, rng, p.samples, p.radius)?;
        let ids = pts
            .par_iter()
            .map(|pt| return_identity_residual(s, pt))
            .collect::<torlink_core::Result<Vec<_>>>()?;
        for id in &ids {
            rows.push(vec![id.point.x, id.point.y, id.lhs, id.rhs, id.residual]);
        }
        let max = max_of(ids.iter().map(|i| i.residual));
        return Ok(Outcome {
            checks: vec![Check::above("max residual of the identity (expected to fail)", max, p.tol)],
            data: json!({ "samples": p.samples, "max_residual": max }),
            tables: vec![identity_table(rows)],
        });
    }

    // Candidates come in batches and are accepted in draw order.
    let floor = if p.min_side > 0.0 { p.min_side } else { 1.0 };
    let mut accepted = Vec::new();
    let mut draws = 0;
    while accepted.len() < p.samples && draws < p.max_draws {
        let batch = (p.samples - accepted.len()).max(16).min(p.max_draws - draws);
        draws += batch;
        let pts = section_points(s, rng, batch, p.radius)?;
        let ids = pts
            .par_iter()
            .map(|pt| return_identity_residual(s, pt))
            .collect::<torlink_core::Result<Vec<_>>>()?;
        for id in ids {
            if accepted.len() < p.samples && id.lhs.abs() >= p.min_side && id.rhs.abs() >= p.min_side {
                accepted.push(id);
            }
        }
    }
    for id in &accepted {
        rows.push(vec![id.point.x, id.point.y, id.lhs, id.rhs, id.residual]);
    }
    let rel = max_of(accepted.iter().map(|i| i.residual / i.rhs.abs().max(floor)));
    Ok(Outcome {
        checks: vec![
            Check::above(
                "points with both sides above min_side",
                accepted.len() as f64,
                p.samples as f64 - 0.5,
            ),
            Check::below("max relative residual of -dtau.N = mu(Px) - mu(x)", rel, p.tol),
        ],
        data: json!({
            "accepted": accepted.len(),
            "draws": draws,
            "min_side": p.min_side,
            "max_relative_residual": rel,
        }),
        tables: vec![identity_table(rows)],
    })
}

fn identity_table(rows: Vec<Vec<f64>>) -> Table {
    Table {
        name: "return_identity".into(),
        header: ["x", "y", "lhs", "rhs", "residual"].map(String::from).to_vec(),
        rows,
    }
}

fn run_orbits(s: &FlowSetup, p: &OrbitsParams, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let starts: Vec<(f64, f64)> = (0..p.seeds)
        .map(|_| {
            (
                rng.gen_range(p.x_range[0]..=p.x_range[1]),
                rng.gen_range(p.y_range[0]..=p.y_range[1]),
            )
        })
        .collect();
    let results = starts
        .par_iter()
        .map(|&(x, y)| {
            let start = s.point_on_fiber(x, y, 0.0)?;
            let orbit = iterate_return(s, &start, p.n_max, p.tol)?;
            let fixed = match &orbit.limit {
                Some(l) => Some(return_map(s, l)?.end.distance(l)),
                None => None,
            };
            Ok((orbit, fixed))
        })
        .collect::<torlink_core::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (k, (o, fixed)) in results.iter().enumerate() {
        for (step, x, y, th, mu, nu) in o.rows() {
            rows.push(vec![k as f64, step as f64, x, y, th, mu, nu]);
        }
        summary.push(json!({
            "start": point_json(&o.points[0]),
            "iterates": o.points.len(),
            "converged": o.converged,
            "limit": o.limit.as_ref().map(point_json),
            "limit_displacement": fixed,
            "ratio_bound": o.ratio_bound,
        }));
    }
    let converged = results.iter().filter(|(o, _)| o.converged).count();
    let max_nu = max_of(
        results
            .iter()
            .map(|(o, _)| o.limit.as_ref().map_or(f64::INFINITY, |l| nu(s, l).abs())),
    );
    let max_fixed = max_of(results.iter().map(|(_, f)| f.unwrap_or(f64::INFINITY)));
    Ok(Outcome {
        checks: vec![
            Check::int_eq("converged orbits", converged as i64, p.seeds as i64),
            Check::below("max |nu(limit)|", max_nu, p.nu_tol),
            Check::below("max |P(limit) - limit|", max_fixed, p.fixed_tol),
        ],
        data: json!({ "orbits": summary }),
        tables: vec![Table {
            name: "orbits".into(),
            header: ["seed", "step", "x", "y", "theta", "mu", "nu"].map(String::from).to_vec(),
            rows,
        }],
    })
}

fn run_model_map_suite(p: &ModelMapSuiteParams) -> Result<Outcome> {
    let pairs: Vec<(i64, i64)> = (-p.range..=p.range)
        .flat_map(|a| (-p.range..=p.range).map(move |b| (a, b)))
        .collect();
    let mesh = SurfaceMesh::torus_grid(p.grid, p.grid);
    let rows = pairs
        .par_iter()
        .map(|&(dp, dm)| {
            let m = model_map(dp, dm);
            let deg = sphere_degree_of(|v| Ok(m.eval(v[0], v[1])), &mesh, &RefineOptions::default())
                .with_context(|| format!("degree of the model map ({dp}, {dm})"))?;
            let path = PathSample::parametrized_loop(p.grid, |t| ChartPoint::new(0.0, 0.0, t));
            let wind = |s: f64| circle_degree(|q| meridian_project(&m.eval(s, q.theta)), &path);
            let (wp, wm) = (wind(0.25)?, wind(0.75)?);
            Ok((dp, dm, deg, wp.value, wm.value))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut matches = 0;
    let mut wind_ok = 0;
    let mut max_res: f64 = 0.0;
    let mut table = Vec::new();
    let mut entries = Vec::new();
    for (dp, dm, deg, wp, wm) in &rows {
        if deg.degree.value.abs() == (dp - dm).abs() {
            matches += 1;
        }
        if *wp == *dp && *wm == *dm {
            wind_ok += 1;
        }
        max_res = max_res.max(deg.degree.residual);
        table.push(vec![
            *dp as f64,
            *dm as f64,
            deg.degree.value as f64,
            deg.degree.residual,
            *wp as f64,
            *wm as f64,
        ]);
        entries.push(json!({
            "d_plus": dp, "d_minus": dm, "degree": deg.degree.value, "residual": deg.degree.residual,
            "triangles": deg.stats.triangles, "winding_plus": wp, "winding_minus": wm,
        }));
    }
    if rows.is_empty() {
        bail!("empty model-map range");
    }
    let total = rows.len() as i64;
    Ok(Outcome {
        checks: vec![
            Check::int_eq("pairs with |deg| = |d+ - d-|", matches, total),
            Check::int_eq("pairs with meridian windings (d+, d-)", wind_ok, total),
            Check::below("max integrality residual", max_res, 0.05),
        ],
        data: json!({ "grid": p.grid, "table": entries }),
        tables: vec![Table {
            name: "model_map_suite".into(),
            header: ["d_plus", "d_minus", "degree", "residual", "winding_plus", "winding_minus"]
                .map(String::from)
                .to_vec(),
            rows: table,
        }],
    })
}
