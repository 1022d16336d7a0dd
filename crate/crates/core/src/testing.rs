//! Fixed, parameter-free hazard dynamics with closed-form solutions.
//!
//! Useful for checking solver plumbing against analytic answers. None of
//! these have trainable parameters, so `n_params() == 0` and they accept
//! feature vectors of any length.

use crate::error::Result;
use crate::model::Hazard;

/// `h(Λ, t) = f(Λ, t)` with a user-supplied `∂h/∂Λ`.
pub struct FnHazard<F, D> {
    pub h: F,
    pub dh_dcumhaz: D,
}

impl<F, D> Hazard for FnHazard<F, D>
where
    F: Fn(f64, f64) -> f64,
    D: Fn(f64, f64) -> f64,
{
    fn n_features(&self) -> usize {
        0
    }

    fn n_params(&self) -> usize {
        0
    }

    fn check_features(&self, _x: &[f64]) -> Result<()> {
        Ok(())
    }

    fn hazard(&self, cumhaz: f64, t: f64, _x: &[f64]) -> f64 {
        (self.h)(cumhaz, t)
    }

    fn hazard_vjp(&self, cumhaz: f64, t: f64, _x: &[f64], cot: f64, _g: &mut [f64]) -> (f64, f64) {
        ((self.h)(cumhaz, t), cot * (self.dh_dcumhaz)(cumhaz, t))
    }
}

/// Constant hazard `c`: `Λ(t) = c·t`, `S(t) = e^{-ct}`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantHazard(pub f64);

impl Hazard for ConstantHazard {
    fn n_features(&self) -> usize {
        0
    }

    fn n_params(&self) -> usize {
        0
    }

    fn check_features(&self, _x: &[f64]) -> Result<()> {
        Ok(())
    }

    fn hazard(&self, _cumhaz: f64, _t: f64, _x: &[f64]) -> f64 {
        self.0
    }

    fn hazard_vjp(&self, _cumhaz: f64, _t: f64, _x: &[f64], _cot: f64, _g: &mut [f64]) -> (f64, f64) {
        (self.0, 0.0)
    }
}

/// `h(Λ, t) = slope · t`: `Λ(t) = slope·t²/2`. With slope 4 this is the
/// `e^{-2t²}` group of the crossing simulation.
#[derive(Debug, Clone, Copy)]
pub struct LinearTimeHazard {
    pub slope: f64,
}

impl Hazard for LinearTimeHazard {
    fn n_features(&self) -> usize {
        0
    }

    fn n_params(&self) -> usize {
        0
    }

    fn check_features(&self, _x: &[f64]) -> Result<()> {
        Ok(())
    }

    fn hazard(&self, _cumhaz: f64, t: f64, _x: &[f64]) -> f64 {
        self.slope * t
    }

    fn hazard_vjp(&self, _cumhaz: f64, t: f64, _x: &[f64], _cot: f64, _g: &mut [f64]) -> (f64, f64) {
        (self.slope * t, 0.0)
    }
}

/// The data-generating hazard of the crossing simulation: `2` for `x = 0`,
/// `4t` for `x = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossingTruth;

impl Hazard for CrossingTruth {
    fn n_features(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        0
    }

    fn hazard(&self, _cumhaz: f64, t: f64, x: &[f64]) -> f64 {
        if x[0] == 0.0 {
            2.0
        } else {
            4.0 * t
        }
    }

    fn hazard_vjp(&self, cumhaz: f64, t: f64, x: &[f64], _cot: f64, _g: &mut [f64]) -> (f64, f64) {
        (self.hazard(cumhaz, t, x), 0.0)
    }
}
