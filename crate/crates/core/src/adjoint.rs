//! Censored negative log-likelihood and its gradient by adjoint sensitivity.
//!
//! Per observation `(x, y, Δ)` the loss is
//!
//! ```text
//! L = -Δ · ln h(Λ(y), y; x) + Λ(y)
//! ```
//!
//! where `Λ` solves the hazard ODE. Its gradient needs `∇_θ Λ(y)`, which the
//! adjoint method delivers without differentiating through solver internals:
//! with `a' = -a · ∂h/∂Λ` and `a(y) = 1`,
//! `∇_θ Λ(y) = ∫₀^y a · ∂h/∂θ dt`. The pass integrates the augmented state
//! `[Λ, a, s̄]` backward from `y` to `0`, re-integrating `Λ` on the way rather
//! than storing the forward trajectory, so memory is `O(batch + |θ|)`
//! whatever the step count.
//!
//! A batch runs in rescaled time `s ∈ [0, 1]` (`t = s·y_i`), so every
//! observation shares the same endpoints and one backward solve serves the
//! whole batch. For the full loss the terminal adjoint is generalized to
//! `a(1) = ∂L/∂Λ = 1 - Δ·(∂h/∂Λ)/h`; the remaining explicit dependence of
//! `ln h` on θ adds the endpoint term `-(Δ/h)·∂h/∂θ`.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::data::Observation;
use crate::error::{Error, Result};
use crate::model::Hazard;
use crate::ode::{annotate, solve_cumhaz_batch, solve_ivp_blocked, IvpProblem, OdeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Sum of per-observation losses.
    pub total_loss: f64,
    pub per_observation: Vec<f64>,
    /// Gradient of `total_loss` over θ, when requested.
    pub grad: Option<Vec<f64>>,
}

impl LossReport {
    pub fn mean_loss(&self) -> f64 {
        self.total_loss / self.per_observation.len() as f64
    }
}

/// `∇_θ Λ_x(y)` from the backward augmented solve with `a(1) = 1`.
pub fn grad_cumhaz<M: Hazard + ?Sized>(model: &M, x: &[f64], y: f64, config: &OdeConfig) -> Result<Vec<f64>> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::InvalidInput(format!("time {y} must be finite and >= 0")));
    }
    model.check_features(x)?;
    let mut grad = vec![0.0; model.n_params()];
    if y == 0.0 {
        return Ok(grad);
    }
    let obs = [Observation::new(x.to_vec(), y, false)];
    let lam = solve_cumhaz_batch(model, &obs, config)?;
    backward(model, &obs, &[0], &lam, &[1.0], config, &mut grad)?;
    Ok(grad)
}

/// Per-observation losses.
pub fn loss<M: Hazard + ?Sized>(model: &M, batch: &[Observation], config: &OdeConfig) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss of an empty batch".into()));
    }
    let lam = solve_cumhaz_batch(model, batch, config)?;
    let per_observation: Vec<f64> = batch
        .iter()
        .zip(&lam)
        .map(|(o, &l)| {
            let log_h = if o.event { model.hazard(l, o.time, &o.x).ln() } else { 0.0 };
            -log_h + l
        })
        .collect();
    Ok(LossReport {
        total_loss: per_observation.iter().sum(),
        per_observation,
        grad: None,
    })
}

/// Losses and the gradient of their sum.
pub fn loss_grad<M: Hazard + ?Sized>(model: &M, batch: &[Observation], config: &OdeConfig) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss of an empty batch".into()));
    }
    let n_params = model.n_params();
    let lam = solve_cumhaz_batch(model, batch, config)?;

    let mut grad = vec![0.0; n_params];
    let mut scratch = vec![0.0; n_params];
    let mut per_observation = Vec::with_capacity(batch.len());
    let mut terminal = Vec::with_capacity(batch.len());
    for (o, &l) in batch.iter().zip(&lam) {
        if o.event {
            scratch.iter_mut().for_each(|g| *g = 0.0);
            let (h, dh_dlam) = model.hazard_vjp(l, o.time, &o.x, 1.0, &mut scratch);
            for (g, s) in grad.iter_mut().zip(&scratch) {
                *g -= s / h;
            }
            per_observation.push(-h.ln() + l);
            terminal.push(1.0 - dh_dlam / h);
        } else {
            per_observation.push(l);
            terminal.push(1.0);
        }
    }
    if let Some(i) = per_observation.iter().position(|v| !v.is_finite()) {
        return Err(Error::Batch {
            index: i,
            source: Box::new(Error::Divergence { step: 0, t: batch[i].time }),
        });
    }

    let active: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].time > 0.0).collect();
    if !active.is_empty() {
        let lam_active: Vec<f64> = active.iter().map(|&i| lam[i]).collect();
        let a_active: Vec<f64> = active.iter().map(|&i| terminal[i]).collect();
        backward(model, batch, &active, &lam_active, &a_active, config, &mut grad)?;
    }
    Ok(LossReport {
        total_loss: per_observation.iter().sum(),
        per_observation,
        grad: Some(grad),
    })
}

/// Integrates `[H, a, s̄]` from `s = 1` back to `s = 0` for the observations
/// in `active` and adds `s̄(0)` into `grad`. Step control measures `s̄` as
/// one block.
fn backward<M: Hazard + ?Sized>(
    model: &M,
    batch: &[Observation],
    active: &[usize],
    lam_end: &[f64],
    a_end: &[f64],
    config: &OdeConfig,
    grad: &mut [f64],
) -> Result<()> {
    let b = active.len();
    let n_params = model.n_params();
    let mut state = Vec::with_capacity(2 * b + n_params);
    state.extend_from_slice(lam_end);
    state.extend_from_slice(a_end);
    state.resize(2 * b + n_params, 0.0);

    let mut acc = vec![0.0; n_params];
    let first_bad = Cell::new(None::<usize>);
    let mut dynamics = |s: f64, z: &[f64], dz: &mut [f64]| {
        let (h_state, rest) = z.split_at(b);
        let a_state = &rest[..b];
        acc.iter_mut().for_each(|g| *g = 0.0);
        for (k, &i) in active.iter().enumerate() {
            let o = &batch[i];
            let y = o.time;
            // cotangent a·y turns ∂h into ∂h̃ = y·∂h, scaled by the adjoint
            let (h, a_dh_dlam) = model.hazard_vjp(h_state[k], s * y, &o.x, a_state[k] * y, &mut acc);
            dz[k] = y * h;
            dz[b + k] = -a_dh_dlam;
            if !(dz[k].is_finite() && dz[b + k].is_finite()) && first_bad.get().is_none() {
                first_bad.set(Some(i));
            }
        }
        for (d, g) in dz[2 * b..].iter_mut().zip(&acc) {
            *d = -g;
        }
    };
    let mut problem = IvpProblem::new(&mut dynamics, state, 1.0, 0.0);
    let end = solve_ivp_blocked(&mut problem, config, 2 * b).map_err(|e| annotate(e, first_bad.get()))?;
    for (g, s) in grad.iter_mut().zip(&end[2 * b..]) {
        *g += s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SurvivalModel, Variant};
    use crate::nn::{sigmoid, softplus};
    use crate::testing::ConstantHazard;

    fn bias_only(b: f64, p: usize) -> SurvivalModel {
        // no hidden layer, zero weights: h = softplus(b)
        let m = SurvivalModel::build(Variant::Full, &[], p, 0).unwrap();
        let mut theta = vec![0.0; m.n_params()];
        *theta.last_mut().unwrap() = b;
        m.with_params(&theta).unwrap()
    }

    #[test]
    fn constant_hazard_losses() {
        let cfg = OdeConfig::default();
        let m = ConstantHazard(2.0);
        let r = loss(&m, &[Observation::new(vec![], 0.5, false)], &cfg).unwrap();
        assert!((r.total_loss - 1.0).abs() < 1e-9);
        let r = loss(&m, &[Observation::new(vec![], 0.5, true)], &cfg).unwrap();
        assert!((r.total_loss - (1.0 - 2f64.ln())).abs() < 1e-9);
        assert!((r.total_loss - 0.306_853).abs() < 1e-6);
        let r = loss(&m, &[Observation::new(vec![], 0.0, true)], &cfg).unwrap();
        assert_eq!(r.total_loss, -(2f64.ln()));
        assert!(loss(&m, &[], &cfg).is_err());
    }

    #[test]
    fn zero_time_has_zero_cumhaz_gradient() {
        let m = SurvivalModel::build(Variant::Full, &[4], 1, 3).unwrap();
        let g = grad_cumhaz(&m, &[0.2], 0.0, &OdeConfig::default()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(grad_cumhaz(&m, &[0.2], -1.0, &OdeConfig::default()).is_err());
    }

    #[test]
    fn bias_only_cumhaz_gradient() {
        let (b, y) = (0.3, 1.7);
        let m = bias_only(b, 1);
        let cfg = OdeConfig::dopri5(1e-10, 1e-12);
        let g = grad_cumhaz(&m, &[0.5], y, &cfg).unwrap();
        let expected = sigmoid(b) * y;
        assert!((g.last().unwrap() - expected).abs() < 1e-8);
        // weight on the time input
        assert!((g[1] - sigmoid(b) * y * y / 2.0).abs() < 1e-8);
    }

    #[test]
    fn bias_only_loss_gradient() {
        let (b, y) = (-0.4, 0.9);
        let m = bias_only(b, 1);
        let cfg = OdeConfig::dopri5(1e-10, 1e-12);
        let r = loss_grad(&m, &[Observation::new(vec![1.0], y, true)], &cfg).unwrap();
        let expected = -sigmoid(b) / softplus(b).unwrap() + sigmoid(b) * y;
        let g = r.grad.unwrap();
        assert!((g.last().unwrap() - expected).abs() < 1e-8, "{} vs {expected}", g.last().unwrap());
    }

    fn additivity_gap(m: &SurvivalModel, batch: &[Observation], cfg: &OdeConfig) -> (f64, f64) {
        let g = loss_grad(m, batch, cfg).unwrap().grad.unwrap();
        let mut sum = vec![0.0; g.len()];
        for o in batch {
            let single = loss_grad(m, std::slice::from_ref(o), cfg).unwrap().grad.unwrap();
            for (s, v) in sum.iter_mut().zip(single) {
                *s += v;
            }
        }
        let gap = g.iter().zip(&sum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (gap, sum.iter().map(|b| b.abs()).fold(0.0, f64::max))
    }

    fn mixed_batch() -> Vec<Observation> {
        vec![
            Observation::new(vec![0.1, -0.3], 0.7, false),
            Observation::new(vec![1.2, 0.4], 1.4, true),
            Observation::new(vec![-0.5, 0.9], 0.2, false),
            Observation::new(vec![0.3, 0.3], 0.0, true),
            Observation::new(vec![0.8, -1.1], 1.9, true),
        ]
    }

    #[test]
    fn batch_gradient_is_additive_on_a_fixed_grid() {
        let m = SurvivalModel::build(Variant::Full, &[5, 4], 2, 8).unwrap();
        let (gap, _) = additivity_gap(&m, &mixed_batch(), &OdeConfig::rk4(500));
        assert!(gap < 1e-13, "{gap}");
    }

    #[test]
    fn batch_gradient_is_additive_with_adaptive_steps() {
        // step control on the kinked ReLU dynamics leaves global errors a few
        // tens of rtol, hence the factor 100
        let m = SurvivalModel::build(Variant::Full, &[5, 4], 2, 8).unwrap();
        let cfg = OdeConfig::dopri5(1e-9, 1e-11);
        let (gap, scale) = additivity_gap(&m, &mixed_batch(), &cfg);
        assert!(gap <= 100.0 * (cfg.rtol * scale + cfg.atol), "{gap}");
    }

    #[test]
    fn censored_gradient_reduces_to_cumhaz_gradients() {
        let m = SurvivalModel::build(Variant::Full, &[5, 4], 2, 8).unwrap();
        let cfg = OdeConfig::rk4(400);
        let batch: Vec<Observation> = mixed_batch().into_iter().map(|o| Observation::new(o.x, o.time, false)).collect();
        let g = loss_grad(&m, &batch, &cfg).unwrap().grad.unwrap();
        let mut sum = vec![0.0; g.len()];
        for o in &batch {
            for (s, v) in sum.iter_mut().zip(grad_cumhaz(&m, &o.x, o.time, &cfg).unwrap()) {
                *s += v;
            }
        }
        for (a, b) in g.iter().zip(&sum) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    // Finite differences through an adaptive solve pick up noise from
    // accept/reject decisions and ReLU kinks, so the oracle runs at a very
    // tight tolerance. Near a kink its error is first order in h, bounded by
    // twice the spread between steps h and h/2, which widens the allowed gap.
    fn check_against_fd<F: Fn(&[f64]) -> f64>(grad: &[f64], f: F, theta: &[f64], step: f64) {
        let mut t = theta.to_vec();
        let mut central = |k: usize, h: f64| {
            t[k] = theta[k] + h;
            let up = f(&t);
            t[k] = theta[k] - h;
            let down = f(&t);
            t[k] = theta[k];
            (up - down) / (2.0 * h)
        };
        for (k, &g) in grad.iter().enumerate() {
            let (full, half) = (central(k, step), central(k, step / 2.0));
            let allowed = 1e-4 * full.abs() + 1e-7 + 2.0 * (full - half).abs();
            assert!((g - full).abs() <= allowed, "coordinate {k}: {g} vs {full} (h/2: {half})");
        }
    }

    #[test]
    fn cumhaz_gradient_matches_finite_differences() {
        let m = SurvivalModel::build(Variant::Full, &[6, 6], 1, 21).unwrap();
        let cfg = OdeConfig::dopri5(1e-13, 1e-15);
        let x = [0.4];
        let g = grad_cumhaz(&m, &x, 1.3, &cfg).unwrap();
        let f = |t: &[f64]| {
            let mm = m.clone().with_params(t).unwrap();
            crate::ode::solve_cumhaz(&mm, &x, &[1.3], &cfg).unwrap()[0]
        };
        check_against_fd(&g, f, &m.params(), 1e-4);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = OdeConfig::dopri5(1e-13, 1e-15);
        let batch: Vec<Observation> = (0..8)
            .map(|i| {
                let f = i as f64;
                Observation::new(vec![(0.7 * f).sin(), (1.3 * f).cos()], 0.25 * f + 0.1, i % 3 != 0)
            })
            .collect();
        for variant in [Variant::Full, Variant::Ph, Variant::Cox] {
            let m = SurvivalModel::build(variant, &[6, 6], 2, 5).unwrap();
            let g = loss_grad(&m, &batch, &cfg).unwrap().grad.unwrap();
            let f = |t: &[f64]| loss(&m.clone().with_params(t).unwrap(), &batch, &cfg).unwrap().total_loss;
            check_against_fd(&g, f, &m.params(), 1e-4);
        }
    }

    #[test]
    fn zero_time_event_contributes_direct_term_only() {
        let b = 0.8;
        let m = bias_only(b, 1);
        let r = loss_grad(&m, &[Observation::new(vec![0.0], 0.0, true)], &OdeConfig::default()).unwrap();
        assert_eq!(r.total_loss, -softplus(b).unwrap().ln());
        let g = r.grad.unwrap();
        assert!((g.last().unwrap() + sigmoid(b) / softplus(b).unwrap()).abs() < 1e-14);
    }
}
