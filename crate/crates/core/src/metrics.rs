//! Censoring-aware evaluation.
//!
//! Weights use the Kaplan–Meier estimate `Ĝ` of the censoring survival
//! function, floored at [`G_FLOOR`]. Event weights read `Ĝ` just before the
//! event time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::adjoint::loss;
use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::model::Hazard;
use crate::ode::{solve_cumhaz, OdeConfig};

pub const G_FLOOR: f64 = 1e-8;
pub const LOG_CLAMP: f64 = 1e-7;
/// Points in the integration grid of IBS and IBLL.
pub const N_GRID: usize = 100;
pub const DEFAULT_LEVELS: [f64; 3] = [1e-8, 0.2, 0.4];

/// Right-continuous piecewise-constant function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
    initial: f64,
}

impl StepFunction {
    /// `values[k]` holds on `[times[k], times[k+1])`; `initial` before the first jump.
    pub fn new(times: Vec<f64>, values: Vec<f64>, initial: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Shape { expected: times.len(), got: values.len() });
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("jump times must be strictly increasing".into()));
        }
        Ok(Self { times, values, initial })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s < t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }
}

fn check_times(times: &[f64], flags: &[bool]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    if flags.len() != times.len() {
        return Err(Error::Shape { expected: times.len(), got: flags.len() });
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidInput(format!("time {t} must be finite and >= 0")));
    }
    Ok(())
}

/// Product-limit estimate; `removed_first` marks records that leave the
/// risk set before the counted ones at a tied time.
fn product_limit(times: &[f64], counted: &[bool], removed_first: &[bool]) -> Result<StepFunction> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let (mut jt, mut jv) = (Vec::new(), Vec::new());
    let mut s = 1.0;
    let mut at_risk = times.len();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let (mut d, mut early, mut total) = (0usize, 0usize, 0usize);
        while k < order.len() && times[order[k]] == t {
            let i = order[k];
            d += counted[i] as usize;
            early += removed_first[i] as usize;
            total += 1;
            k += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / (at_risk - early) as f64;
            jt.push(t);
            jv.push(s);
        }
        at_risk -= total;
    }
    StepFunction::new(jt, jv, 1.0)
}

/// Kaplan–Meier estimate of the event-time survival function.
pub fn km_survival(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    check_times(times, events)?;
    product_limit(times, events, &vec![false; times.len()])
}

/// Kaplan–Meier estimate `Ĝ` of the censoring-time survival function. At a
/// tied time, events leave the risk set before censorings.
pub fn censor_km(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    check_times(times, events)?;
    let censored: Vec<bool> = events.iter().map(|e| !e).collect();
    product_limit(times, &censored, events)
}

/// Truncation time for a censoring-survival level: the first jump time of
/// `g` where it drops to `level` or below, else the largest observed time.
pub fn tau_for_level(g: &StepFunction, level: f64, observed: &[f64]) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidInput(format!("level {level} must lie in (0, 1]")));
    }
    if let Some(k) = g.values().iter().position(|&v| v <= level) {
        return Ok(g.times()[k]);
    }
    observed
        .iter()
        .cloned()
        .reduce(f64::max)
        .ok_or_else(|| Error::InvalidInput("no observed times".into()))
}

/// Predicted survival `Ŝ_{x_i}(t)` by individual index.
pub trait SurvivalPredictions {
    fn survival(&self, individual: usize, t: f64) -> f64;
}

impl<F: Fn(usize, f64) -> f64> SurvivalPredictions for F {
    fn survival(&self, individual: usize, t: f64) -> f64 {
        self(individual, t)
    }
}

/// Model survival curves precomputed on a shared grid.
///
/// Lookups between grid points return the value at the nearest grid point at
/// or before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalMatrix {
    grid: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl SurvivalMatrix {
    /// Solves each individual once over `grid`, which is sorted and deduplicated
    /// and always gains the point 0.
    pub fn from_model<M: Hazard + ?Sized>(model: &M, data: &[Observation], grid: &[f64], config: &OdeConfig) -> Result<Self> {
        let mut grid = grid.to_vec();
        grid.push(0.0);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let rows = data
            .iter()
            .map(|o| Ok(solve_cumhaz(model, &o.x, &grid, config)?.iter().map(|l| (-l).exp()).collect()))
            .collect::<Result<_>>()?;
        Ok(Self { grid, rows })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn row(&self, individual: usize) -> &[f64] {
        &self.rows[individual]
    }
}

impl SurvivalPredictions for SurvivalMatrix {
    fn survival(&self, individual: usize, t: f64) -> f64 {
        match self.grid.partition_point(|&g| g <= t) {
            0 => 1.0,
            k => self.rows[individual][k - 1],
        }
    }
}

/// IPCW time-dependent concordance truncated at `tau`.
pub fn c_index_td<P: SurvivalPredictions + ?Sized>(pred: &P, data: &[Observation], g: &StepFunction, tau: f64) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, oi) in data.iter().enumerate() {
        if !oi.event || !(oi.time < tau) {
            continue;
        }
        let w = 1.0 / g.eval_left(oi.time).max(G_FLOOR).powi(2);
        let si = pred.survival(i, oi.time);
        for (j, oj) in data.iter().enumerate() {
            if !(oi.time < oj.time) {
                continue;
            }
            let sj = pred.survival(j, oi.time);
            let score = if si < sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
            num += w * score;
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric(format!("no comparable pairs before {tau}")));
    }
    Ok(num / den)
}

/// IPCW weights at `t`: events up to `t` weigh `1/Ĝ(y⁻)`, survivors past `t`
/// weigh `1/Ĝ(t)`, censored-before-`t` records weigh 0.
fn ipcw_terms<P, F>(pred: &P, data: &[Observation], g: &StepFunction, t: f64, mut term: F) -> f64
where
    P: SurvivalPredictions + ?Sized,
    F: FnMut(f64, bool) -> f64,
{
    let g_t = g.eval(t).max(G_FLOOR);
    let mut sum = 0.0;
    for (i, o) in data.iter().enumerate() {
        if o.time <= t && o.event {
            sum += term(pred.survival(i, t), false) / g.eval_left(o.time).max(G_FLOOR);
        } else if o.time > t {
            sum += term(pred.survival(i, t), true) / g_t;
        }
    }
    sum / data.len() as f64
}

/// Censoring-adjusted Brier score at `t`.
pub fn brier_score<P: SurvivalPredictions + ?Sized>(pred: &P, data: &[Observation], g: &StepFunction, t: f64) -> f64 {
    ipcw_terms(pred, data, g, t, |s, alive| if alive { (1.0 - s).powi(2) } else { s * s })
}

/// Censoring-adjusted binomial log-likelihood at `t` (nonpositive).
pub fn binomial_log_likelihood<P: SurvivalPredictions + ?Sized>(pred: &P, data: &[Observation], g: &StepFunction, t: f64) -> f64 {
    ipcw_terms(pred, data, g, t, |s, alive| {
        let s = s.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
        if alive {
            s.ln()
        } else {
            (1.0 - s).ln()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrated {
    Ibs,
    Ibll,
}

/// `t_max·k/N_GRID` for `k = 1..=N_GRID`.
pub fn integration_grid(t_max: f64) -> Vec<f64> {
    (1..=N_GRID).map(|k| t_max * k as f64 / N_GRID as f64).collect()
}

/// IBS or IBLL over `(0, t_max]`, as the mean over [`integration_grid`].
pub fn integrated_metric<P: SurvivalPredictions + ?Sized>(
    kind: Integrated,
    pred: &P,
    data: &[Observation],
    g: &StepFunction,
    t_max: f64,
) -> Result<f64> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidInput(format!("t_max {t_max} must be positive")));
    }
    let total: f64 = integration_grid(t_max)
        .into_iter()
        .map(|t| match kind {
            Integrated::Ibs => brier_score(pred, data, g, t),
            Integrated::Ibll => binomial_log_likelihood(pred, data, g, t),
        })
        .sum();
    Ok(total / N_GRID as f64)
}

/// Mean negative log-likelihood over `data`, solved as one batch.
pub fn nll_metric<M: Hazard + ?Sized>(model: &M, data: &[Observation], config: &OdeConfig) -> Result<f64> {
    Ok(loss(model, data, config)?.mean_loss())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub chi_square: f64,
    pub p_value: f64,
    /// Events in group `true`.
    pub observed: f64,
    /// Expected events in group `true` under equal hazards.
    pub expected: f64,
    pub variance: f64,
}

/// Two-sample log-rank test between `group == false` and `group == true`.
pub fn logrank_test(times: &[f64], events: &[bool], group: &[bool]) -> Result<LogRank> {
    check_times(times, events)?;
    if group.len() != times.len() {
        return Err(Error::Shape { expected: times.len(), got: group.len() });
    }
    let n1_total = group.iter().filter(|&&g| g).count();
    if n1_total == 0 || n1_total == times.len() {
        return Err(Error::InvalidInput("both groups must be nonempty".into()));
    }
    if !events.iter().any(|&e| e) {
        return Err(Error::UndefinedMetric("no events".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let (mut n, mut n1) = (times.len() as f64, n1_total as f64);
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let (mut d, mut d1, mut gone, mut gone1) = (0.0, 0.0, 0.0, 0.0);
        while k < order.len() && times[order[k]] == t {
            let i = order[k];
            let g1 = if group[i] { 1.0 } else { 0.0 };
            if events[i] {
                d += 1.0;
                d1 += g1;
            }
            gone += 1.0;
            gone1 += g1;
            k += 1;
        }
        if d > 0.0 {
            observed += d1;
            expected += d * n1 / n;
            if n > 1.0 {
                variance += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
            }
        }
        n -= gone;
        n1 -= gone1;
    }
    if variance <= 0.0 {
        return Err(Error::UndefinedMetric("log-rank variance is zero".into()));
    }
    let chi_square = (observed - expected).powi(2) / variance;
    Ok(LogRank {
        chi_square,
        p_value: erfc((chi_square / 2.0).sqrt()),
        observed,
        expected,
        variance,
    })
}

/// Median of the observed times (mean of the middle two for even counts).
pub fn median_time(data: &[Observation]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    let mut t: Vec<f64> = data.iter().map(|o| o.time).collect();
    t.sort_by(f64::total_cmp);
    let m = t.len() / 2;
    Ok(if t.len() % 2 == 1 { t[m] } else { 0.5 * (t[m - 1] + t[m]) })
}

/// High-risk flags: the `⌊n/2⌋` individuals with the lowest predicted
/// survival at `t`, ties broken by index.
pub fn risk_split<P: SurvivalPredictions + ?Sized>(pred: &P, n: usize, t: f64) -> Vec<bool> {
    let s: Vec<f64> = (0..n).map(|i| pred.survival(i, t)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut high = vec![false; n];
    for &i in &order[..n / 2] {
        high[i] = true;
    }
    high
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: f64,
    pub tau: f64,
    pub c_index: f64,
    pub ibs: f64,
    pub ibll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Keyed by the level written as a JSON number, e.g. `"1e-8"`.
    pub levels: BTreeMap<String, LevelMetrics>,
    pub nll: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn level_key(level: f64) -> String {
    serde_json::to_string(&level).unwrap_or_else(|_| level.to_string())
}

/// Every metric at each censoring level, with `Ĝ` estimated from `data`.
pub fn evaluate<M: Hazard + ?Sized>(model: &M, data: &Dataset, levels: &[f64], config: &OdeConfig) -> Result<MetricReport> {
    let obs = &data.observations;
    let (times, events) = (data.times(), data.events());
    let g = censor_km(&times, &events)?;
    let taus = levels
        .iter()
        .map(|&l| tau_for_level(&g, l, &times))
        .collect::<Result<Vec<_>>>()?;
    let mut grid = times.clone();
    for &tau in &taus {
        grid.extend(integration_grid(tau));
    }
    let pred = SurvivalMatrix::from_model(model, obs, &grid, config)?;
    let mut out = BTreeMap::new();
    for (&level, &tau) in levels.iter().zip(&taus) {
        let m = LevelMetrics {
            level,
            tau,
            c_index: c_index_td(&pred, obs, &g, tau)?,
            ibs: integrated_metric(Integrated::Ibs, &pred, obs, &g, tau)?,
            ibll: integrated_metric(Integrated::Ibll, &pred, obs, &g, tau)?,
        };
        out.insert(level_key(level), m);
    }
    Ok(MetricReport {
        levels: out,
        nll: nll_metric(model, obs, config)?,
        n: obs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::ConstantHazard;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(pairs: &[(f64, bool)]) -> Vec<Observation> {
        pairs.iter().map(|&(t, e)| Observation::new(vec![], t, e)).collect()
    }

    #[test]
    fn step_function_limits() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.1], 1.0).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.eval_left(1.0), 1.0);
        assert_eq!(f.eval(2.5), 0.1);
        assert_eq!(f.eval_left(2.0), 0.5);
        assert!(StepFunction::new(vec![1.0, 1.0], vec![0.5, 0.1], 1.0).is_err());
    }

    #[test]
    fn km_examples() {
        let km = km_survival(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert_eq!(km.times(), &[1.0, 2.0, 3.0]);
        assert!((km.values()[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((km.values()[1] - 1.0 / 3.0).abs() < 1e-10);
        assert_eq!(km.values()[2], 0.0);

        let all_censored = km_survival(&[1.0, 2.0], &[false, false]).unwrap();
        assert_eq!(all_censored.eval(10.0), 1.0);

        let km = km_survival(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert!((km.eval(1.0) - 2.0 / 3.0).abs() < 1e-10);
        assert!((km.eval(2.9) - 2.0 / 3.0).abs() < 1e-10);
        assert_eq!(km.eval(3.0), 0.0);
        assert!(km_survival(&[], &[]).is_err());
    }

    #[test]
    fn censoring_km_puts_events_first_at_ties() {
        let t = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0];
        let e = [true, false, true, false, true, false];
        let g = censor_km(&t, &e).unwrap();
        assert_eq!(g.times(), &[2.0, 3.0, 5.0]);
        assert!((g.values()[0] - 0.75).abs() < 1e-10);
        assert!((g.values()[1] - 0.5).abs() < 1e-10);
        assert_eq!(g.values()[2], 0.0);
        assert_eq!(censor_km(&[1.0, 2.0], &[true, true]).unwrap().eval(5.0), 1.0);
        let full = censor_km(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
        assert!((full.eval(1.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tau_lookup() {
        let g = StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.1], 1.0).unwrap();
        let observed = [0.5, 1.0, 2.0, 3.0];
        assert_eq!(tau_for_level(&g, 0.2, &observed).unwrap(), 2.0);
        assert_eq!(tau_for_level(&g, 1.0, &observed).unwrap(), 1.0);
        assert_eq!(tau_for_level(&g, 1e-8, &observed).unwrap(), 3.0);
        assert!(tau_for_level(&g, 0.0, &observed).is_err());
    }

    #[test]
    fn c_index_extremes() {
        let data = obs(&[(1.0, true), (2.0, true), (3.0, true), (4.0, true)]);
        let g = censor_km(&[1.0, 2.0, 3.0, 4.0], &[true; 4]).unwrap();
        // higher index survives longer
        let perfect = |i: usize, _t: f64| 0.1 * (i + 1) as f64;
        assert_eq!(c_index_td(&perfect, &data, &g, 10.0).unwrap(), 1.0);
        let flat = |_i: usize, _t: f64| 0.3;
        assert_eq!(c_index_td(&flat, &data, &g, 10.0).unwrap(), 0.5);
        assert!(matches!(c_index_td(&flat, &data, &g, 1.0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn c_index_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Observation> = (0..40)
            .map(|_| Observation::new(vec![rng.gen()], rng.gen_range(0.0..3.0), rng.gen_bool(0.7)))
            .collect();
        let g = censor_km(&data.iter().map(|o| o.time).collect::<Vec<_>>(), &data.iter().map(|o| o.event).collect::<Vec<_>>()).unwrap();
        let x: Vec<f64> = data.iter().map(|o| o.x[0]).collect();
        let s = |i: usize, t: f64| (-x[i] * t).exp();
        let r = |i: usize, t: f64| 1.0 - (-x[i] * t).exp();
        let a = c_index_td(&s, &data, &g, 2.5).unwrap();
        let b = c_index_td(&r, &data, &g, 2.5).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brier_hand_values() {
        let data = obs(&[(1.0, true), (2.0, true)]);
        let g = censor_km(&[1.0, 2.0], &[true, true]).unwrap();
        let half = |_i: usize, _t: f64| 0.5;
        assert_eq!(brier_score(&half, &data, &g, 0.5), 0.25);
        let perfect = |i: usize, t: f64| if t < data[i].time { 1.0 } else { 0.0 };
        assert_eq!(brier_score(&perfect, &data, &g, 1.5), 0.0);
        assert_eq!(integrated_metric(Integrated::Ibs, &half, &data, &g, 0.9).unwrap(), 0.25);
    }

    #[test]
    fn brier_censored_toy() {
        // Ĝ: jumps at 2 (4 at risk, 3/4) and at 4 (2 at risk, 3/8)
        let data = obs(&[(1.0, true), (2.0, false), (3.0, true), (4.0, false), (5.0, true)]);
        let g = censor_km(&[1.0, 2.0, 3.0, 4.0, 5.0], &[true, false, true, false, true]).unwrap();
        assert!((g.eval(2.0) - 0.75).abs() < 1e-15);
        assert!((g.eval(4.0) - 0.375).abs() < 1e-15);
        let s = [0.2, 0.5, 0.4, 0.7, 0.9];
        let pred = |i: usize, _t: f64| s[i];
        let t = 3.5;
        // events at 1 and 3 weigh 1/Ĝ(1⁻) = 1 and 1/Ĝ(3⁻) = 4/3; 4 and 5 are
        // alive at 3.5 and weigh 1/Ĝ(3.5) = 4/3; the censoring at 2 drops out.
        let hand = (0.2f64.powi(2) + 0.4f64.powi(2) / 0.75 + 0.3f64.powi(2) / 0.75 + 0.1f64.powi(2) / 0.75) / 5.0;
        assert!((brier_score(&pred, &data, &g, t) - hand).abs() < 1e-15);
        let ll = ((0.8f64).ln() + (0.6f64).ln() / 0.75 + (0.7f64).ln() / 0.75 + (0.9f64).ln() / 0.75) / 5.0;
        assert!((binomial_log_likelihood(&pred, &data, &g, t) - ll).abs() < 1e-15);
    }

    #[test]
    fn ibll_orders_models() {
        let data = obs(&[(1.0, true), (2.0, true), (3.0, true)]);
        let g = censor_km(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        let near = |i: usize, t: f64| if t < data[i].time { 1.0 } else { 0.0 };
        let half = |_i: usize, _t: f64| 0.5;
        let a = integrated_metric(Integrated::Ibll, &near, &data, &g, 3.0).unwrap();
        let b = integrated_metric(Integrated::Ibll, &half, &data, &g, 3.0).unwrap();
        assert!(a < 0.0 && a > -1e-5, "{a}");
        assert!(b < a);
    }

    #[test]
    fn nll_of_constant_hazard() {
        let cfg = OdeConfig::default();
        let v = nll_metric(&ConstantHazard(2.0), &obs(&[(0.5, true)]), &cfg).unwrap();
        assert!((v - 0.306_853).abs() < 1e-6);
        let v = nll_metric(&ConstantHazard(3.0), &obs(&[(0.5, false), (1.5, false)]), &cfg).unwrap();
        assert!((v - 3.0).abs() < 1e-9);
    }

    #[test]
    fn logrank_textbook() {
        let t = [1.0, 3.0, 4.0, 6.0, 8.0, 2.0, 3.0, 5.0, 7.0, 9.0];
        let e = [true, true, false, true, true, true, true, true, false, true];
        let g = [false, false, false, false, false, true, true, true, true, true];
        let r = logrank_test(&t, &e, &g).unwrap();
        // distinct event times 1,2,3,5,6,8,9 with (n, n1, d):
        // (10,5,1) (9,5,1) (8,4,2) (5,3,1) (4,2,1) (2,1,1) (1,1,1)
        let expected = 0.5 + 5.0 / 9.0 + 1.0 + 0.6 + 0.5 + 0.5 + 1.0;
        let variance = 0.25 + 20.0 / 81.0 + 3.0 / 7.0 + 0.24 + 0.25 + 0.25;
        assert_eq!(r.observed, 4.0);
        assert!((r.expected - expected).abs() < 1e-10);
        assert!((r.variance - variance).abs() < 1e-10);
        assert!((r.chi_square - (4.0 - expected).powi(2) / variance).abs() < 1e-10);
        assert!((r.p_value - 0.611_45).abs() < 1e-4, "{}", r.p_value);
    }

    #[test]
    fn logrank_identical_groups() {
        let t = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let e = [true, false, true, true, false, true];
        let g = [false, false, false, true, true, true];
        let r = logrank_test(&t, &e, &g).unwrap();
        assert!(r.chi_square.abs() < 1e-15);
        assert!((r.p_value - 1.0).abs() < 1e-15);
        assert!(logrank_test(&t, &[false; 6], &g).is_err());
        assert!(logrank_test(&t, &e, &[false; 6]).is_err());
    }

    #[test]
    fn risk_split_is_even() {
        for n in [1usize, 2, 7, 10] {
            let flags = risk_split(&|i: usize, _t: f64| ((i * 7) % 5) as f64, n, 1.0);
            let high = flags.iter().filter(|&&f| f).count();
            assert_eq!(high, n / 2);
            assert!(n - 2 * high <= 1);
        }
        let flags = risk_split(&|i: usize, _t: f64| i as f64, 4, 0.0);
        assert_eq!(flags, vec![true, true, false, false]);
    }

    #[test]
    fn matrix_lookup_and_report() {
        let data = Dataset::new(
            vec![],
            obs(&[(0.5, true), (1.0, false), (1.5, true), (2.0, true)]),
        )
        .unwrap();
        let cfg = OdeConfig::default();
        let m = SurvivalMatrix::from_model(&ConstantHazard(1.0), &data.observations, &[1.0, 0.5, 1.0], &cfg).unwrap();
        assert_eq!(m.grid(), &[0.0, 0.5, 1.0]);
        assert!((m.survival(0, 0.7) - (-0.5f64).exp()).abs() < 1e-8);
        assert_eq!(m.survival(0, -1.0), 1.0);
        let r = evaluate(&ConstantHazard(1.0), &data, &DEFAULT_LEVELS, &cfg).unwrap();
        assert_eq!(r.levels.len(), 3);
        let l = &r.levels[&level_key(1e-8)];
        assert_eq!(l.c_index, 0.5);
        assert!(r.to_json().unwrap().contains("\"1e-8\""));
    }
}
