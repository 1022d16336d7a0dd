//! Explicit initial-value solvers and the cumulative-hazard solves built on
//! them.
//!
//! Two integrators are provided: classical fixed-step RK4 and the
//! Dormand–Prince 5(4) embedded pair with step-size control. Both integrate
//! in either direction (`t1 < t0` runs backward), which the adjoint pass
//! relies on.
//!
//! The cumulative hazard of one individual is `Λ' = h(Λ, t; x)`, `Λ(0) = 0`.
//! A mini-batch is solved as a single system after rescaling each
//! observation's clock to `s ∈ [0, 1]`: `H_i(s) = Λ_i(s·y_i)` obeys
//! `H_i' = y_i · h(H_i, s·y_i; x_i)`, so every `Λ_i(y_i)` is read off at
//! `s = 1`.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::data::Observation;
use crate::error::{Error, Result};
use crate::model::Hazard;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedRk4,
    AdaptiveDopri5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdeConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Step count for [`Method::FixedRk4`].
    pub fixed_steps: usize,
    /// Attempted-step budget for [`Method::AdaptiveDopri5`].
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            method: Method::AdaptiveDopri5,
            rtol: 1e-6,
            atol: 1e-8,
            fixed_steps: 100,
            max_steps: 10_000,
        }
    }
}

impl OdeConfig {
    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn rk4(steps: usize) -> Self {
        Self {
            method: Method::FixedRk4,
            fixed_steps: steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol.is_finite()) || !(self.atol > 0.0 && self.atol.is_finite()) {
            return Err(Error::Config(format!(
                "solver tolerances must be positive, got rtol {} atol {}",
                self.rtol, self.atol
            )));
        }
        if self.fixed_steps == 0 || self.max_steps == 0 {
            return Err(Error::Config("fixed_steps and max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// `y' = dynamics(t, y)`, `y(t0) = y0`, integrated to `t1`.
///
/// The dynamics writes the derivative into its third argument.
pub struct IvpProblem<F> {
    pub dynamics: F,
    pub y0: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
}

impl<F> IvpProblem<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(dynamics: F, y0: Vec<f64>, t0: f64, t1: f64) -> Self {
        Self { dynamics, y0, t0, t1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
}

impl SolveStats {
    pub fn steps(&self) -> usize {
        self.accepted + self.rejected
    }
}

/// Classical RK4 with `steps` uniform steps.
pub fn solve_ivp_fixed<F>(problem: &mut IvpProblem<F>, steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if steps == 0 {
        return Err(Error::Config("fixed_steps must be >= 1".into()));
    }
    let mut y = problem.y0.clone();
    rk4_segment(&mut problem.dynamics, problem.t0, problem.t1, &mut y, steps, 0)?;
    Ok(y)
}

/// Dormand–Prince 5(4) from `t0` to `t1`.
pub fn solve_ivp_adaptive<F>(problem: &mut IvpProblem<F>, config: &OdeConfig) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    Ok(solve_ivp_adaptive_with_stats(problem, config)?.0)
}

pub fn solve_ivp_adaptive_with_stats<F>(
    problem: &mut IvpProblem<F>,
    config: &OdeConfig,
) -> Result<(Vec<f64>, SolveStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    config.validate()?;
    let n = problem.y0.len();
    dopri5(&mut problem.dynamics, problem.t0, &problem.y0, problem.t1, config, n, None)
}

/// Like [`solve_ivp`], but the adaptive error norm treats the components
/// from `pointwise` on as one block: their RMS error is scaled by
/// `atol + rtol·RMS(y_block)`, and the step error is the larger of that and
/// the usual norm over the leading components.
pub fn solve_ivp_blocked<F>(problem: &mut IvpProblem<F>, config: &OdeConfig, pointwise: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    config.validate()?;
    match config.method {
        Method::FixedRk4 => solve_ivp_fixed(problem, config.fixed_steps),
        Method::AdaptiveDopri5 => {
            let pointwise = pointwise.min(problem.y0.len());
            let (y, _) = dopri5(&mut problem.dynamics, problem.t0, &problem.y0, problem.t1, config, pointwise, None)?;
            Ok(y)
        }
    }
}

/// Dispatches on `config.method`.
pub fn solve_ivp<F>(problem: &mut IvpProblem<F>, config: &OdeConfig) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    config.validate()?;
    match config.method {
        Method::FixedRk4 => solve_ivp_fixed(problem, config.fixed_steps),
        Method::AdaptiveDopri5 => solve_ivp_adaptive(problem, config),
    }
}

/// Integrates once from `t0` through a grid sorted in the direction of
/// integration and returns the state at every grid point.
///
/// The adaptive method picks its steps as for a plain solve to the last grid
/// point and fills in interior points from the Dormand–Prince continuous
/// extension. The fixed method spreads `fixed_steps` over the segments
/// between grid points in proportion to their length.
pub fn solve_ivp_grid<F>(
    dynamics: &mut F,
    y0: &[f64],
    t0: f64,
    grid: &[f64],
    config: &OdeConfig,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    config.validate()?;
    let Some(&t_end) = grid.last() else {
        return Ok(Vec::new());
    };
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    if grid.windows(2).any(|w| (w[1] - w[0]) * dir < 0.0) || (grid[0] - t0) * dir < 0.0 {
        return Err(Error::InvalidInput(
            "grid must be sorted in the integration direction and start at or after t0".into(),
        ));
    }
    match config.method {
        Method::AdaptiveDopri5 => {
            let mut rec = GridRecorder::new(grid);
            rec.record_start(t0, y0);
            dopri5(dynamics, t0, y0, t_end, config, y0.len(), Some(&mut rec))?;
            Ok(rec.out)
        }
        Method::FixedRk4 => {
            let total = (t_end - t0).abs();
            let mut out = Vec::with_capacity(grid.len());
            let mut y = y0.to_vec();
            let mut t = t0;
            let mut step_base = 0;
            for &g in grid {
                if g != t {
                    let n = if total > 0.0 {
                        ((config.fixed_steps as f64) * (g - t).abs() / total).ceil().max(1.0) as usize
                    } else {
                        1
                    };
                    rk4_segment(dynamics, t, g, &mut y, n, step_base)?;
                    step_base += n;
                    t = g;
                }
                out.push(y.clone());
            }
            Ok(out)
        }
    }
}

fn rk4_segment<F>(f: &mut F, t0: f64, t1: f64, y: &mut [f64], steps: usize, step_base: usize) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let h = (t1 - t0) / steps as f64;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        f(t, y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: step_base + step + 1,
                t: t + h,
            });
        }
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

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

// 5th-order solution minus embedded 4th-order solution.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 10.0;
const ERR_EXPONENT: f64 = 1.0 / 5.0;

struct GridRecorder<'a> {
    grid: &'a [f64],
    next: usize,
    out: Vec<Vec<f64>>,
}

impl<'a> GridRecorder<'a> {
    fn new(grid: &'a [f64]) -> Self {
        Self {
            grid,
            next: 0,
            out: Vec::with_capacity(grid.len()),
        }
    }

    fn record_start(&mut self, t0: f64, y0: &[f64]) {
        while self.next < self.grid.len() && self.grid[self.next] == t0 {
            self.out.push(y0.to_vec());
            self.next += 1;
        }
    }

    fn pending(&self, t_new: f64, dir: f64) -> bool {
        self.next < self.grid.len() && (self.grid[self.next] - t_new) * dir <= 0.0
    }
}

fn rms_norm(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    dir: f64,
    span: f64,
    cfg: &OdeConfig,
    m: usize,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let sc: Vec<f64> = y0[..m].iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let d0 = rms_norm(y0.iter().zip(&sc).map(|(y, s)| y / s), m);
    let d1 = rms_norm(f0.iter().zip(&sc).map(|(f, s)| f / s), m);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h0 * f).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + dir * h0, &y1, &mut f1);
    let d2 = rms_norm(f1.iter().zip(f0).zip(&sc).map(|((a, b), s)| (a - b) / s), m) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(ERR_EXPONENT)
    };
    (100.0 * h0).min(h1).min(span)
}

// `y[..m]` is error-controlled per component, `y[m..]` as one block.
fn dopri5<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    cfg: &OdeConfig,
    m: usize,
    mut rec: Option<&mut GridRecorder<'_>>,
) -> Result<(Vec<f64>, SolveStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut stats = SolveStats::default();
    let mut y = y0.to_vec();
    if t0 == t1 || n == 0 {
        if let Some(rec) = rec.as_deref_mut() {
            while rec.out.len() < rec.grid.len() {
                rec.out.push(y.clone());
            }
        }
        return Ok((y, stats));
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    f(t0, &y, &mut k1);
    stats.evals += 1;
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0, t: t0 });
    }
    let mut h = initial_step(f, t0, &y, &k1, dir, span, cfg, m);
    stats.evals += 1;
    let mut t = t0;
    let mut last_rejected = false;

    loop {
        if stats.steps() >= cfg.max_steps {
            return Err(Error::NoConvergence {
                max_steps: cfg.max_steps,
                t_end: t1,
            });
        }
        let min_step = 16.0 * f64::EPSILON * t.abs().max(span);
        if h < min_step {
            return Err(Error::NoConvergence {
                max_steps: cfg.max_steps,
                t_end: t1,
            });
        }
        let mut last = false;
        if (t + dir * h - t1) * dir >= 0.0 {
            h = (t1 - t).abs();
            last = true;
        }
        let hs = dir * h;

        for i in 0..n {
            tmp[i] = y[i] + hs * A21 * k1[i];
        }
        f(t + C2 * hs, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * hs, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * hs, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * hs, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + hs };
        f(t_new, &tmp, &mut k6);
        for i in 0..n {
            y_new[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t_new, &y_new, &mut k7);
        stats.evals += 6;

        if y_new.iter().chain(k7.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: stats.steps() + 1,
                t: t_new,
            });
        }

        let mut acc = 0.0;
        for i in 0..m {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
            acc += (e / sc) * (e / sc);
        }
        let mut err = if m == 0 { 0.0 } else { (acc / m as f64).sqrt() };
        if m < n {
            let (mut e2, mut y2, mut yn2) = (0.0, 0.0, 0.0);
            for i in m..n {
                let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                e2 += e * e;
                y2 += y[i] * y[i];
                yn2 += y_new[i] * y_new[i];
            }
            let len = (n - m) as f64;
            let sc = cfg.atol + cfg.rtol * (y2.max(yn2) / len).sqrt();
            err = err.max((e2 / len).sqrt() / sc);
        }
        let mut factor = if err == 0.0 {
            FACTOR_MAX
        } else {
            (SAFETY * err.powf(-ERR_EXPONENT)).clamp(FACTOR_MIN, FACTOR_MAX)
        };

        if err <= 1.0 {
            stats.accepted += 1;
            if let Some(rec) = rec.as_deref_mut() {
                if rec.pending(t_new, dir) {
                    record_dense(rec, t, hs, t_new, dir, &y, &y_new, [&k1, &k3, &k4, &k5, &k6, &k7]);
                }
            }
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if last {
                log::trace!("dopri5 on {n} states: {stats:?}");
                return Ok((y, stats));
            }
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h *= factor;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h *= factor.min(1.0);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn record_dense(
    rec: &mut GridRecorder<'_>,
    t: f64,
    hs: f64,
    t_new: f64,
    dir: f64,
    y: &[f64],
    y_new: &[f64],
    k: [&[f64]; 6],
) {
    let [k1, k3, k4, k5, k6, k7] = k;
    let n = y.len();
    let mut c1 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    let mut c3 = vec![0.0; n];
    let mut c4 = vec![0.0; n];
    for i in 0..n {
        let dy = y_new[i] - y[i];
        let bspl = hs * k1[i] - dy;
        c1[i] = dy;
        c2[i] = bspl;
        c3[i] = dy - hs * k7[i] - bspl;
        c4[i] = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    while rec.pending(t_new, dir) {
        let g = rec.grid[rec.next];
        if g == t_new {
            rec.out.push(y_new.to_vec());
        } else {
            let s = (g - t) / hs;
            let s1 = 1.0 - s;
            rec.out
                .push((0..n).map(|i| y[i] + s * (c1[i] + s1 * (c2[i] + s * (c3[i] + s1 * c4[i])))).collect());
        }
        rec.next += 1;
    }
}

/// `Λ_x` on a nondecreasing grid of nonnegative times, from one integration
/// starting at `Λ(0) = 0`.
pub fn solve_cumhaz<M: Hazard + ?Sized>(model: &M, x: &[f64], t_eval: &[f64], config: &OdeConfig) -> Result<Vec<f64>> {
    if let Some(t) = t_eval.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput(format!("evaluation time {t} must be finite and >= 0")));
    }
    if t_eval.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("evaluation grid must be nondecreasing".into()));
    }
    model.check_features(x)?;
    let mut dyn_fn = |t: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = model.hazard(y[0], t, x);
    };
    let states = solve_ivp_grid(&mut dyn_fn, &[0.0], 0.0, t_eval, config)?;
    Ok(states.into_iter().map(|s| s[0]).collect())
}

/// `Λ_{x_i}(y_i)` for every observation, via one rescaled combined solve on
/// `s ∈ [0, 1]`. Observations with `y_i = 0` get exactly 0 and never enter the
/// solve.
pub fn solve_cumhaz_batch<M: Hazard + ?Sized>(
    model: &M,
    batch: &[Observation],
    config: &OdeConfig,
) -> Result<Vec<f64>> {
    for (i, obs) in batch.iter().enumerate() {
        if !(obs.time >= 0.0) || !obs.time.is_finite() {
            return Err(Error::Batch {
                index: i,
                source: Box::new(Error::InvalidInput(format!("observed time {} must be >= 0", obs.time))),
            });
        }
        model.check_features(&obs.x).map_err(|e| Error::Batch {
            index: i,
            source: Box::new(e),
        })?;
    }
    let active: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].time > 0.0).collect();
    let mut out = vec![0.0; batch.len()];
    if active.is_empty() {
        return Ok(out);
    }
    let first_bad = Cell::new(None::<usize>);
    let mut dyn_fn = |s: f64, h: &[f64], dh: &mut [f64]| {
        for (k, &i) in active.iter().enumerate() {
            let obs = &batch[i];
            dh[k] = obs.time * model.hazard(h[k], s * obs.time, &obs.x);
            if !dh[k].is_finite() && first_bad.get().is_none() {
                first_bad.set(Some(i));
            }
        }
    };
    let mut problem = IvpProblem::new(&mut dyn_fn, vec![0.0; active.len()], 0.0, 1.0);
    let end = solve_ivp(&mut problem, config).map_err(|e| annotate(e, first_bad.get()))?;
    for (k, &i) in active.iter().enumerate() {
        out[i] = end[k];
    }
    Ok(out)
}

pub(crate) fn annotate(err: Error, index: Option<usize>) -> Error {
    match index {
        Some(index) if err.is_numerical() => Error::Batch {
            index,
            source: Box::new(err),
        },
        _ => err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{ConstantHazard, LinearTimeHazard};

    fn exp_growth(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[0];
    }

    #[test]
    fn rk4_constant_solution() {
        let mut p = IvpProblem::new(|_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 0.0, vec![5.0], 0.0, 1.0);
        assert_eq!(solve_ivp_fixed(&mut p, 10).unwrap(), vec![5.0]);
    }

    #[test]
    fn rk4_exponential() {
        let mut p = IvpProblem::new(exp_growth, vec![1.0], 0.0, 1.0);
        let y = solve_ivp_fixed(&mut p, 100).unwrap();
        assert!((y[0] - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let err = |steps| {
            let mut p = IvpProblem::new(exp_growth, vec![1.0], 0.0, 1.0);
            (solve_ivp_fixed(&mut p, steps).unwrap()[0] - std::f64::consts::E).abs()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_divergence_names_step() {
        let mut p = IvpProblem::new(
            |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0] * 1e200,
            vec![1e200],
            0.0,
            1.0,
        );
        match solve_ivp_fixed(&mut p, 10) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dopri5_exponential() {
        let mut p = IvpProblem::new(exp_growth, vec![1.0], 0.0, 1.0);
        let y = solve_ivp_adaptive(&mut p, &OdeConfig::dopri5(1e-8, 1e-10)).unwrap();
        assert!((y[0] - std::f64::consts::E).abs() <= 1e-7);
    }

    #[test]
    fn dopri5_decay() {
        let cfg = OdeConfig::dopri5(1e-6, 1e-8);
        let mut p = IvpProblem::new(|_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -50.0 * y[0], vec![1.0], 0.0, 1.0);
        let (y, stats) = solve_ivp_adaptive_with_stats(&mut p, &cfg).unwrap();
        let exact = (-50.0f64).exp();
        assert!((y[0] - exact).abs() <= 10.0 * (cfg.atol + cfg.rtol * exact));
        assert!(stats.steps() < cfg.max_steps / 20, "{stats:?}");
    }

    #[test]
    fn dopri5_empty_interval() {
        let mut p = IvpProblem::new(exp_growth, vec![3.0, -1.0], 0.7, 0.7);
        assert_eq!(solve_ivp_adaptive(&mut p, &OdeConfig::default()).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn dopri5_backward_direction() {
        let mut p = IvpProblem::new(exp_growth, vec![std::f64::consts::E], 1.0, 0.0);
        let y = solve_ivp_adaptive(&mut p, &OdeConfig::dopri5(1e-10, 1e-12)).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dopri5_step_budget() {
        let cfg = OdeConfig {
            max_steps: 3,
            ..OdeConfig::dopri5(1e-12, 1e-14)
        };
        let mut p = IvpProblem::new(
            |t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = (40.0 * t).sin(),
            vec![0.0],
            0.0,
            10.0,
        );
        assert!(matches!(solve_ivp_adaptive(&mut p, &cfg), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn dense_grid_matches_exact() {
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        let cfg = OdeConfig::dopri5(1e-9, 1e-12);
        let mut f = exp_growth;
        let states = solve_ivp_grid(&mut f, &[1.0], 0.0, &grid, &cfg).unwrap();
        for (t, s) in grid.iter().zip(&states) {
            assert!((s[0] - t.exp()).abs() < 1e-7 * t.exp(), "t={t}");
        }
        let rk = solve_ivp_grid(&mut f, &[1.0], 0.0, &grid, &OdeConfig::rk4(400)).unwrap();
        for (t, s) in grid.iter().zip(&rk) {
            assert!((s[0] - t.exp()).abs() < 1e-8 * t.exp(), "t={t}");
        }
    }

    #[test]
    fn tolerance_tightening_reduces_error() {
        let f = |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = (3.0 * t).cos() * y[0] + 0.5;
        let mut reference = IvpProblem::new(f, vec![0.2], 0.0, 2.0);
        let truth = solve_ivp_adaptive(&mut reference, &OdeConfig::dopri5(1e-13, 1e-15)).unwrap()[0];
        let err = |rtol: f64| {
            let mut p = IvpProblem::new(f, vec![0.2], 0.0, 2.0);
            (solve_ivp_adaptive(&mut p, &OdeConfig::dopri5(rtol, rtol * 1e-2)).unwrap()[0] - truth).abs()
        };
        assert!(err(1e-7) < err(1e-5));
    }

    #[test]
    fn cumhaz_constant_and_linear() {
        let cfg = OdeConfig::default();
        let constant = ConstantHazard(2.0);
        let lam = solve_cumhaz(&constant, &[], &[0.0, 0.5], &cfg).unwrap();
        assert_eq!(lam[0], 0.0);
        assert!((lam[1] - 1.0).abs() < 1e-9);
        assert_eq!(solve_cumhaz(&constant, &[], &[0.0], &cfg).unwrap(), vec![0.0]);

        let lam = solve_cumhaz(&LinearTimeHazard { slope: 4.0 }, &[], &[1.0], &cfg).unwrap();
        assert!((lam[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn cumhaz_rejects_negative_time() {
        let constant = ConstantHazard(2.0);
        assert!(matches!(
            solve_cumhaz(&constant, &[], &[-0.1, 1.0], &OdeConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn batch_zero_time_and_symmetry() {
        let model = ConstantHazard(3.0);
        let obs = |t| Observation::new(vec![], t, true);
        let lam = solve_cumhaz_batch(&model, &[obs(0.4), obs(0.0), obs(0.4)], &OdeConfig::default()).unwrap();
        assert_eq!(lam[1], 0.0);
        assert_eq!(lam[0], lam[2]);
        assert!((lam[0] - 1.2).abs() < 1e-9);
    }
}
