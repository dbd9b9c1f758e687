//! Adaptive Dormand–Prince 5(4) integration of a field's flow, optionally
//! together with its variational equation `dM/dt = DY(φ_t)·M, M(0) = I`, and
//! location of the first crossing of a fiber of the fibration.
//!
//! The integrator works in lifted coordinates: the angle is never reduced
//! along the orbit, so fiber crossings are detected on the lifted fibration
//! value rather than on the circle.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ChartPoint, Fibration, FieldSpec};

const DIM_BASE: usize = 3;
const DIM_VAR: usize = 12;

type State = [f64; DIM_VAR];

/// Result of a finite-time flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub endpoint: ChartPoint,
    /// Angle of the endpoint without reduction modulo one.
    pub theta_lifted: f64,
    pub time: f64,
    pub dflow: Option<Matrix3<f64>>,
    pub steps: usize,
    pub est_error: f64,
}

/// First crossing of a target fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub point: ChartPoint,
    pub time: f64,
    /// +1 when the lifted fibration value increases along the orbit.
    pub direction: i8,
    /// Lifted fibration value at the crossing.
    pub level_lifted: f64,
    pub dflow: Option<Matrix3<f64>>,
    pub steps: usize,
}

/// Step-size controlled integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub rtol: f64,
    pub atol: f64,
    /// Disc radius; leaving the disc aborts the integration.
    pub disc_radius: Option<f64>,
    pub max_steps: usize,
    /// Largest flow time searched for a fiber crossing.
    pub horizon: f64,
    /// Required accuracy `|Σ − target|` at a located crossing.
    pub crossing_tol: f64,
    pub max_event_iter: usize,
    /// PI stabilisation exponent.
    pub beta: f64,
    pub safety: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Self::new(1e-10)
    }
}

#[derive(Clone, Copy)]
struct Step {
    t: f64,
    y: State,
    k1: State,
}

struct Dopri<'a> {
    field: &'a FieldSpec,
    dim: usize,
    cfg: &'a Integrator,
}

// Dormand–Prince 5(4) tableau; the system is autonomous so the nodes c_i are unused.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl<'a> Dopri<'a> {
    fn rhs(&self, y: &State) -> Result<State> {
        let p = ChartPoint::new(y[0], y[1], y[2]);
        let v = self.field.eval(&p)?;
        let mut out = [0.0; DIM_VAR];
        out[..3].copy_from_slice(v.as_slice());
        if self.dim == DIM_VAR {
            let j = self.field.jacobian_at(&p)?;
            let m = state_matrix(y);
            let dm = j * m;
            for r in 0..3 {
                for c in 0..3 {
                    out[3 + 3 * r + c] = dm[(r, c)];
                }
            }
        }
        Ok(out)
    }

    fn combine(&self, y: &State, h: f64, terms: &[(f64, &State)]) -> State {
        let mut out = *y;
        for i in 0..self.dim {
            let mut acc = 0.0;
            for (a, k) in terms {
                acc += a * k[i];
            }
            out[i] += h * acc;
        }
        out
    }

    /// One explicit step; returns the new state, its derivative and the error vector.
    fn step(&self, y: &State, k1: &State, h: f64) -> Result<(State, State, State)> {
        let k2 = self.rhs(&self.combine(y, h, &[(A21, k1)]))?;
        let k3 = self.rhs(&self.combine(y, h, &[(A31, k1), (A32, &k2)]))?;
        let k4 = self.rhs(&self.combine(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = self.rhs(&self.combine(
            y,
            h,
            &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        ))?;
        let k6 = self.rhs(&self.combine(
            y,
            h,
            &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ))?;
        let ynew = self.combine(
            y,
            h,
            &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = self.rhs(&ynew)?;
        let mut err = [0.0; DIM_VAR];
        for i in 0..self.dim {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        Ok((ynew, k7, err))
    }

    fn error_norm(&self, y: &State, ynew: &State, err: &State) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let sc = self.cfg.atol + self.cfg.rtol * y[i].abs().max(ynew[i].abs());
            acc += (err[i] / sc).powi(2);
        }
        (acc / self.dim as f64).sqrt()
    }

    fn initial_step(&self, y: &State, k1: &State, direction: f64) -> Result<f64> {
        let scaled = |v: &State| {
            let mut acc = 0.0;
            for i in 0..self.dim {
                let sc = self.cfg.atol + self.cfg.rtol * y[i].abs();
                acc += (v[i] / sc).powi(2);
            }
            (acc / self.dim as f64).sqrt()
        };
        let d0 = scaled(y);
        let d1 = scaled(k1);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let y1 = self.combine(y, direction * h0, &[(1.0, k1)]);
        let k1b = self.rhs(&y1)?;
        let mut diff = [0.0; DIM_VAR];
        for i in 0..self.dim {
            diff[i] = k1b[i] - k1[i];
        }
        let d2 = scaled(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(0.1))
    }
}

fn state_matrix(y: &State) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| y[3 + 3 * r + c])
}

fn initial_state(p: &ChartPoint, theta_lifted: f64, variational: bool) -> State {
    let mut y = [0.0; DIM_VAR];
    y[0] = p.x;
    y[1] = p.y;
    y[2] = theta_lifted;
    if variational {
        y[3] = 1.0;
        y[7] = 1.0;
        y[11] = 1.0;
    }
    y
}

/// Step-size controller state shared by the drivers.
struct Controller<'a> {
    dp: Dopri<'a>,
    cur: Step,
    h: f64,
    err_old: f64,
    steps: usize,
    max_err: f64,
    direction: f64,
}

impl<'a> Controller<'a> {
    fn new(dp: Dopri<'a>, y0: State, direction: f64) -> Result<Self> {
        let k1 = dp.rhs(&y0)?;
        let h = dp.initial_step(&y0, &k1, direction)?;
        Ok(Self {
            dp,
            cur: Step { t: 0.0, y: y0, k1 },
            h,
            err_old: 1e-4,
            steps: 0,
            max_err: 0.0,
            direction,
        })
    }

    /// Take one accepted step of length at most `max_len`; returns the previous step.
    fn advance(&mut self, max_len: f64) -> Result<Step> {
        let cfg = self.dp.cfg;
        let expo1 = 0.2 - 0.75 * cfg.beta;
        loop {
            if self.steps >= cfg.max_steps {
                return Err(Error::StepUnderflow {
                    time: self.cur.t,
                    step: self.h,
                });
            }
            let len = self.h.min(max_len);
            if len < 1e-14 * self.cur.t.abs().max(1.0) && len < max_len {
                return Err(Error::StepUnderflow {
                    time: self.cur.t,
                    step: len,
                });
            }
            let h = self.direction * len;
            let (ynew, k7, err) = match self.dp.step(&self.cur.y, &self.cur.k1, h) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) if len > 1e-12 => {
                    self.h = 0.25 * len;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let e = self.dp.error_norm(&self.cur.y, &ynew, &err);
            if !e.is_finite() {
                self.h = 0.25 * len;
                continue;
            }
            let fac11 = e.powf(expo1);
            if e <= 1.0 {
                let fac = (fac11 / self.err_old.powf(cfg.beta) / cfg.safety).clamp(0.1, 5.0);
                self.err_old = e.max(1e-4);
                self.max_err = self.max_err.max(e);
                self.steps += 1;
                let prev = self.cur;
                self.cur = Step {
                    t: prev.t + h,
                    y: ynew,
                    k1: k7,
                };
                self.h = len / fac;
                return Ok(prev);
            }
            self.h = len / (fac11 / cfg.safety).min(5.0);
        }
    }

    /// Re-integrate from `from` over `delta` (signed) with one step.
    fn sub_step(&self, from: &Step, delta: f64) -> Result<State> {
        if delta == 0.0 {
            return Ok(from.y);
        }
        Ok(self.dp.step(&from.y, &from.k1, delta)?.0)
    }
}

impl Integrator {
    pub fn new(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            disc_radius: None,
            max_steps: 200_000,
            horizon: 100.0,
            crossing_tol: 1e-10,
            max_event_iter: 80,
            beta: 0.04,
            safety: 0.9,
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.disc_radius = Some(radius);
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    fn outside(&self, y: &State) -> bool {
        match self.disc_radius {
            Some(r) => y[0] * y[0] + y[1] * y[1] > r * r,
            None => false,
        }
    }

    /// Bisect for the time the orbit leaves the disc within the last step.
    fn exit_time(&self, ctl: &Controller, prev: &Step) -> Result<f64> {
        let r = self.disc_radius.unwrap_or(f64::INFINITY);
        let total = ctl.cur.t - prev.t;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let y = ctl.sub_step(prev, total * mid)?;
            if y[0] * y[0] + y[1] * y[1] > r * r {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(prev.t + total * 0.5 * (lo + hi))
    }

    fn run(
        &self,
        f: &FieldSpec,
        p: &ChartPoint,
        theta_lifted: f64,
        t: f64,
        variational: bool,
    ) -> Result<FlowResult> {
        let dim = if variational { DIM_VAR } else { DIM_BASE };
        let y0 = initial_state(p, theta_lifted, variational);
        if t == 0.0 {
            f.eval(p)?;
            return Ok(self.finish(&y0, 0.0, variational, 0, 0.0));
        }
        let direction = t.signum();
        let dp = Dopri {
            field: f,
            dim,
            cfg: self,
        };
        let mut ctl = Controller::new(dp, y0, direction)?;
        let total = t.abs();
        loop {
            let done = ctl.cur.t.abs();
            let remaining = total - done;
            if remaining <= 1e-15 * total.max(1.0) {
                break;
            }
            let prev = ctl.advance(remaining)?;
            if self.outside(&ctl.cur.y) {
                return Err(Error::LeftDomain {
                    time: self.exit_time(&ctl, &prev)?,
                });
            }
        }
        Ok(self.finish(&ctl.cur.y, ctl.cur.t, variational, ctl.steps, ctl.max_err))
    }

    fn finish(&self, y: &State, t: f64, variational: bool, steps: usize, max_err: f64) -> FlowResult {
        FlowResult {
            endpoint: ChartPoint::new(y[0], y[1], y[2]),
            theta_lifted: y[2],
            time: t,
            dflow: variational.then(|| state_matrix(y)),
            steps,
            est_error: max_err * self.rtol,
        }
    }

    /// Time-`t` flow of `f` from `p`.
    pub fn integrate(&self, f: &FieldSpec, p: &ChartPoint, t: f64) -> Result<FlowResult> {
        self.run(f, p, p.theta, t, false)
    }

    /// Time-`t` flow together with its derivative `Dφ_t(p)`.
    pub fn variational(&self, f: &FieldSpec, p: &ChartPoint, t: f64) -> Result<FlowResult> {
        self.run(f, p, p.theta, t, true)
    }

    /// First time after `min_time` at which the orbit of `p` crosses the fiber
    /// `Σ = target_level (mod 1)`. A crossing at the departure point is never returned.
    pub fn cross_fiber(
        &self,
        f: &FieldSpec,
        fibration: &dyn Fibration,
        p: &ChartPoint,
        target_level: f64,
        min_time: f64,
    ) -> Result<CrossingEvent> {
        let s0 = fibration.lifted(p.x, p.y, p.theta);
        let dir = self.transversal_direction(f, fibration, p)?;
        let mut d = if dir > 0.0 {
            (target_level - s0).rem_euclid(1.0)
        } else {
            (s0 - target_level).rem_euclid(1.0)
        };
        if d < 1e-12 || d > 1.0 - 1e-12 {
            d = if d < 0.5 { d + 1.0 } else { d };
        }
        self.cross_lifted(f, fibration, p, p.theta, s0 + dir * d, min_time, false)
    }

    fn transversal_direction(
        &self,
        f: &FieldSpec,
        fibration: &dyn Fibration,
        p: &ChartPoint,
    ) -> Result<f64> {
        let rate = fibration.gradient(p).dot(&f.eval(p)?);
        if rate == 0.0 || !rate.is_finite() {
            return Err(Error::NotTransverse { time: 0.0 });
        }
        Ok(rate.signum())
    }

    /// Crossing of the lifted level `target` (absolute, not modulo one), starting
    /// from `p` whose angle lifts to `theta_lifted`.
    #[allow(clippy::too_many_arguments)]
    pub fn cross_lifted(
        &self,
        f: &FieldSpec,
        fibration: &dyn Fibration,
        p: &ChartPoint,
        theta_lifted: f64,
        target: f64,
        min_time: f64,
        variational: bool,
    ) -> Result<CrossingEvent> {
        let dir = self.transversal_direction(f, fibration, p)?;
        let dim = if variational { DIM_VAR } else { DIM_BASE };
        let y0 = initial_state(p, theta_lifted, variational);
        let lifted = |y: &State| fibration.lifted(y[0], y[1], y[2]);
        let mut target = target;
        if dir * (target - lifted(&y0)) <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "target level {target} is not ahead of the start along the flow"
            )));
        }
        let dp = Dopri {
            field: f,
            dim,
            cfg: self,
        };
        let mut ctl = Controller::new(dp, y0, 1.0)?;
        loop {
            if ctl.cur.t >= self.horizon {
                return Err(Error::NoCrossing {
                    horizon: self.horizon,
                });
            }
            let prev = ctl.advance(self.horizon - ctl.cur.t + 1e-12)?;
            let exit = if self.outside(&ctl.cur.y) {
                Some(self.exit_time(&ctl, &prev)?)
            } else {
                None
            };
            let cur_p = ChartPoint::new(ctl.cur.y[0], ctl.cur.y[1], ctl.cur.y[2]);
            let rate = fibration.gradient(&cur_p).dot(&Vector3::new(
                ctl.cur.k1[0],
                ctl.cur.k1[1],
                ctl.cur.k1[2],
            ));
            if rate * dir <= 0.0 && exit.is_none() {
                return Err(Error::NotTransverse { time: ctl.cur.t });
            }
            while dir * (lifted(&ctl.cur.y) - target) >= 0.0 {
                let (delta, y) = self.locate(
                    &ctl,
                    &prev,
                    lifted(&prev.y) - target,
                    lifted(&ctl.cur.y) - target,
                    &lifted,
                    target,
                )?;
                let time = prev.t + delta;
                if exit.is_some_and(|t_exit| time > t_exit) {
                    break;
                }
                if time > min_time {
                    return Ok(self.event(&y, time, dir, target, variational, ctl.steps));
                }
                target += dir;
            }
            if let Some(time) = exit {
                return Err(Error::LeftDomain { time });
            }
        }
    }

    fn event(
        &self,
        y: &State,
        time: f64,
        dir: f64,
        target: f64,
        variational: bool,
        steps: usize,
    ) -> CrossingEvent {
        CrossingEvent {
            point: ChartPoint::new(y[0], y[1], y[2]),
            time,
            direction: dir as i8,
            level_lifted: target,
            dflow: variational.then(|| state_matrix(y)),
            steps,
        }
    }

    /// Hybrid Illinois/bisection search for the zero of `g(δ) = Σ(φ_δ(prev)) − target`.
    fn locate(
        &self,
        ctl: &Controller,
        prev: &Step,
        g_prev: f64,
        g_new: f64,
        lifted: &dyn Fn(&State) -> f64,
        target: f64,
    ) -> Result<(f64, State)> {
        let h = ctl.cur.t - prev.t;
        if g_prev == 0.0 {
            return Ok((0.0, prev.y));
        }
        if g_new == 0.0 {
            return Ok((h, ctl.cur.y));
        }
        let (mut a, mut fa) = (0.0, g_prev);
        let (mut b, mut fb) = (h, g_new);
        let mut best = (b, ctl.cur.y, fb);
        let mut side = 0i8;
        for it in 0..self.max_event_iter {
            let secant = (a * fb - b * fa) / (fb - fa);
            let mid = 0.5 * (a + b);
            // Alternate to bisection every few iterations to guarantee shrinkage.
            let c = if it % 4 == 3 || !secant.is_finite() || secant <= a.min(b) || secant >= a.max(b)
            {
                mid
            } else {
                secant
            };
            let y = ctl.sub_step(prev, c)?;
            let fc = lifted(&y) - target;
            if fc.abs() < best.2.abs() {
                best = (c, y, fc);
            }
            if fc.abs() <= 1e-3 * self.crossing_tol || (b - a).abs() < 1e-15 {
                break;
            }
            if fc.signum() == fb.signum() {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            } else {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            }
        }
        if best.2.abs() >= self.crossing_tol {
            return Err(Error::NoCrossing {
                horizon: self.horizon,
            });
        }
        Ok((best.0, best.1))
    }
}
