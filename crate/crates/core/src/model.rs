//! Hazard dynamics and the three survival model variants.
//!
//! | variant | hazard `h(Λ, t; x)`                         |
//! |---------|---------------------------------------------|
//! | `full`  | `softplus(net(Λ, t, x))`                    |
//! | `ph`    | `softplus(base(t)) · softplus(risk(x))`     |
//! | `cox`   | `softplus(base(t)) · exp(x·β)`              |
//!
//! Only `full` lets the hazard depend on the current cumulative hazard and
//! on an interaction of time with features. The other two factor into a
//! time part and a feature part, so hazard ratios between individuals are
//! constant in time.
//!
//! Models take raw features everywhere; the per-feature standardization
//! fitted on training data is applied inside the hazard.

use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus_unchecked, Architecture, ParamSet};
use crate::ode::{solve_cumhaz, OdeConfig};
use crate::train::TrainConfig;

pub const MODEL_FILE_VERSION: u32 = 1;

/// Anything that can serve as the right-hand side `h(Λ, t; x, θ)` of the
/// cumulative-hazard ODE.
pub trait Hazard {
    /// Expected feature vector length.
    fn n_features(&self) -> usize;

    /// Length of the flat parameter vector θ.
    fn n_params(&self) -> usize;

    fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Shape {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn hazard(&self, cumhaz: f64, t: f64, x: &[f64]) -> f64;

    /// Returns `(h, c·∂h/∂Λ)` and adds `c·∂h/∂θ` into `param_grad`.
    fn hazard_vjp(&self, cumhaz: f64, t: f64, x: &[f64], cotangent: f64, param_grad: &mut [f64]) -> (f64, f64);
}

impl<H: Hazard + ?Sized> Hazard for &H {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn n_params(&self) -> usize {
        (**self).n_params()
    }
    fn check_features(&self, x: &[f64]) -> Result<()> {
        (**self).check_features(x)
    }
    fn hazard(&self, cumhaz: f64, t: f64, x: &[f64]) -> f64 {
        (**self).hazard(cumhaz, t, x)
    }
    fn hazard_vjp(&self, cumhaz: f64, t: f64, x: &[f64], cotangent: f64, param_grad: &mut [f64]) -> (f64, f64) {
        (**self).hazard_vjp(cumhaz, t, x, cotangent, param_grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Ph,
    Cox,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "ph" => Ok(Variant::Ph),
            "cox" => Ok(Variant::Cox),
            other => Err(Error::Config(format!("unknown model variant {other:?} (full | ph | cox)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Nets {
    Full(ParamSet),
    Ph { baseline: ParamSet, risk: ParamSet },
    Cox { baseline: ParamSet, beta: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalModel {
    variant: Variant,
    n_features: usize,
    hidden: Vec<usize>,
    seed: u64,
    nets: Nets,
    standardization: Standardization,
}

impl SurvivalModel {
    /// Fresh model with seeded initialization and identity standardization.
    ///
    /// `ph` seeds its risk network with `seed + 1`; the Cox coefficients
    /// start at zero.
    pub fn build(variant: Variant, hidden: &[usize], n_features: usize, seed: u64) -> Result<Self> {
        let nets = match variant {
            Variant::Full => Nets::Full(ParamSet::init(&Architecture::new(n_features + 2, hidden)?, seed)),
            Variant::Ph => {
                if n_features == 0 {
                    return Err(Error::Config("the ph variant needs at least one feature".into()));
                }
                Nets::Ph {
                    baseline: ParamSet::init(&Architecture::new(1, hidden)?, seed),
                    risk: ParamSet::init(&Architecture::new(n_features, hidden)?, seed.wrapping_add(1)),
                }
            }
            Variant::Cox => Nets::Cox {
                baseline: ParamSet::init(&Architecture::new(1, hidden)?, seed),
                beta: vec![0.0; n_features],
            },
        };
        Ok(Self {
            variant,
            n_features,
            hidden: hidden.to_vec(),
            seed,
            nets,
            standardization: Standardization::identity(n_features),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn with_standardization(mut self, stats: Standardization) -> Result<Self> {
        if stats.len() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: stats.len(),
            });
        }
        self.standardization = stats;
        Ok(self)
    }

    /// Input width of the network that sees `Λ` (full) or `t` (ph, cox).
    pub fn dynamics_input_dim(&self) -> usize {
        match &self.nets {
            Nets::Full(net) => net.arch().input_dim(),
            Nets::Ph { baseline, .. } | Nets::Cox { baseline, .. } => baseline.arch().input_dim(),
        }
    }

    /// Flat θ: the full net; or baseline then risk net; or baseline then β.
    pub fn params(&self) -> Vec<f64> {
        match &self.nets {
            Nets::Full(net) => net.flat().to_vec(),
            Nets::Ph { baseline, risk } => [baseline.flat(), risk.flat()].concat(),
            Nets::Cox { baseline, beta } => [baseline.flat(), beta.as_slice()].concat(),
        }
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Shape {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        match &mut self.nets {
            Nets::Full(net) => net.flat_mut().copy_from_slice(theta),
            Nets::Ph { baseline, risk } => {
                let (a, b) = theta.split_at(baseline.len());
                baseline.flat_mut().copy_from_slice(a);
                risk.flat_mut().copy_from_slice(b);
            }
            Nets::Cox { baseline, beta } => {
                let (a, b) = theta.split_at(baseline.len());
                baseline.flat_mut().copy_from_slice(a);
                beta.copy_from_slice(b);
            }
        }
        Ok(())
    }

    pub fn with_params(mut self, theta: &[f64]) -> Result<Self> {
        self.set_params(theta)?;
        Ok(self)
    }

    /// Cox coefficients (on standardized features), if this is the cox variant.
    pub fn beta(&self) -> Option<&[f64]> {
        match &self.nets {
            Nets::Cox { beta, .. } => Some(beta),
            _ => None,
        }
    }

    pub fn to_file(&self, train_config: Option<&TrainConfig>) -> ModelFile {
        let (weights, beta) = match &self.nets {
            Nets::Full(net) => (net.flat().to_vec(), None),
            Nets::Ph { baseline, risk } => ([baseline.flat(), risk.flat()].concat(), None),
            Nets::Cox { baseline, beta } => (baseline.flat().to_vec(), Some(beta.clone())),
        };
        let archs = match &self.nets {
            Nets::Full(net) => vec![net.arch().dims().to_vec()],
            Nets::Ph { baseline, risk } => vec![baseline.arch().dims().to_vec(), risk.arch().dims().to_vec()],
            Nets::Cox { baseline, .. } => vec![baseline.arch().dims().to_vec()],
        };
        ModelFile {
            version: MODEL_FILE_VERSION,
            variant: self.variant,
            n_features: self.n_features,
            hidden: self.hidden.clone(),
            seed: self.seed,
            archs,
            weights,
            beta,
            standardization: self.standardization.clone(),
            train_config: train_config.cloned(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file version {} (expected {MODEL_FILE_VERSION})",
                file.version
            )));
        }
        let mut model = Self::build(file.variant, &file.hidden, file.n_features, file.seed)?;
        let expected_archs: Vec<Vec<usize>> = match &model.nets {
            Nets::Full(net) => vec![net.arch().dims().to_vec()],
            Nets::Ph { baseline, risk } => vec![baseline.arch().dims().to_vec(), risk.arch().dims().to_vec()],
            Nets::Cox { baseline, .. } => vec![baseline.arch().dims().to_vec()],
        };
        if expected_archs != file.archs {
            return Err(Error::Config(format!(
                "architecture {:?} does not match variant/hidden/features (expected {expected_archs:?})",
                file.archs
            )));
        }
        let mut theta = file.weights;
        match (&model.nets, file.beta) {
            (Nets::Cox { .. }, Some(beta)) => theta.extend(beta),
            (Nets::Cox { .. }, None) => return Err(Error::Config("cox model file is missing beta".into())),
            (_, Some(_)) => return Err(Error::Config("beta is only valid for the cox variant".into())),
            (_, None) => {}
        }
        model.set_params(&theta)?;
        model.with_standardization(file.standardization)
    }

    pub fn to_json(&self, train_config: Option<&TrainConfig>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file(train_config))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }
}

/// On-disk model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub variant: Variant,
    pub n_features: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Layer widths of each network, in parameter order.
    pub archs: Vec<Vec<usize>>,
    /// Network weights, flattened in parameter order.
    pub weights: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub standardization: Standardization,
    pub train_config: Option<TrainConfig>,
}

impl Hazard for SurvivalModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_params(&self) -> usize {
        match &self.nets {
            Nets::Full(net) => net.len(),
            Nets::Ph { baseline, risk } => baseline.len() + risk.len(),
            Nets::Cox { baseline, beta } => baseline.len() + beta.len(),
        }
    }

    fn hazard(&self, cumhaz: f64, t: f64, x: &[f64]) -> f64 {
        let stats = &self.standardization;
        match &self.nets {
            Nets::Full(net) => {
                let mut buf = vec![0.0; 2 + x.len() + net.scratch_len()];
                let (input, acts) = buf.split_at_mut(2 + x.len());
                input[0] = cumhaz;
                input[1] = t;
                stats.apply_into(x, &mut input[2..]);
                softplus_unchecked(net.forward_cached(input, acts))
            }
            Nets::Ph { baseline, risk } => {
                let mut buf = vec![0.0; x.len() + baseline.scratch_len().max(risk.scratch_len())];
                let (xs, acts) = buf.split_at_mut(x.len());
                stats.apply_into(x, xs);
                let zb = baseline.forward_cached(&[t], acts);
                let zg = risk.forward_cached(xs, acts);
                softplus_unchecked(zb) * softplus_unchecked(zg)
            }
            Nets::Cox { baseline, beta } => {
                let mut acts = vec![0.0; baseline.scratch_len()];
                let zb = baseline.forward_cached(&[t], &mut acts);
                let lin: f64 = (0..x.len()).map(|k| stats.apply_one(k, x[k]) * beta[k]).sum();
                softplus_unchecked(zb) * lin.exp()
            }
        }
    }

    fn hazard_vjp(&self, cumhaz: f64, t: f64, x: &[f64], cot: f64, param_grad: &mut [f64]) -> (f64, f64) {
        let stats = &self.standardization;
        match &self.nets {
            Nets::Full(net) => {
                let p = x.len();
                let mut buf = vec![0.0; 2 * (2 + p) + net.scratch_len()];
                let (input, rest) = buf.split_at_mut(2 + p);
                let (input_grad, acts) = rest.split_at_mut(2 + p);
                input[0] = cumhaz;
                input[1] = t;
                stats.apply_into(x, &mut input[2..]);
                let z = net.forward_cached(input, acts);
                net.backward_cached(input, acts, cot * sigmoid(z), Some(input_grad), param_grad);
                (softplus_unchecked(z), input_grad[0])
            }
            Nets::Ph { baseline, risk } => {
                let nb = baseline.len();
                let mut buf = vec![0.0; x.len() + baseline.scratch_len() + risk.scratch_len()];
                let (xs, rest) = buf.split_at_mut(x.len());
                let (acts_b, acts_g) = rest.split_at_mut(baseline.scratch_len());
                stats.apply_into(x, xs);
                let zb = baseline.forward_cached(&[t], acts_b);
                let zg = risk.forward_cached(xs, acts_g);
                let (sb, sg) = (softplus_unchecked(zb), softplus_unchecked(zg));
                let (gb, gg) = param_grad.split_at_mut(nb);
                baseline.backward_cached(&[t], acts_b, cot * sigmoid(zb) * sg, None, gb);
                risk.backward_cached(xs, acts_g, cot * sb * sigmoid(zg), None, gg);
                (sb * sg, 0.0)
            }
            Nets::Cox { baseline, beta } => {
                let nb = baseline.len();
                let mut buf = vec![0.0; x.len() + baseline.scratch_len()];
                let (xs, acts) = buf.split_at_mut(x.len());
                stats.apply_into(x, xs);
                let zb = baseline.forward_cached(&[t], acts);
                let risk = xs.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp();
                let sb = softplus_unchecked(zb);
                let h = sb * risk;
                let (gb, gbeta) = param_grad.split_at_mut(nb);
                baseline.backward_cached(&[t], acts, cot * sigmoid(zb) * risk, None, gb);
                for (g, xk) in gbeta.iter_mut().zip(xs.iter()) {
                    *g += cot * h * xk;
                }
                (h, 0.0)
            }
        }
    }
}

/// Times paired with predicted values (survival probabilities or hazards).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `S_x(t) = exp(-Λ_x(t))` on the grid.
pub fn predict_survival<M: Hazard + ?Sized>(model: &M, x: &[f64], grid: &[f64], config: &OdeConfig) -> Result<SurvivalCurve> {
    let cumhaz = solve_cumhaz(model, x, grid, config)?;
    Ok(SurvivalCurve {
        times: grid.to_vec(),
        values: cumhaz.iter().map(|l| (-l).exp()).collect(),
    })
}

/// `λ_x(t) = h(Λ_x(t), t; x)` along the solved trajectory.
pub fn predict_hazard<M: Hazard + ?Sized>(model: &M, x: &[f64], grid: &[f64], config: &OdeConfig) -> Result<SurvivalCurve> {
    Ok(predict_curves(model, x, grid, config)?.1)
}

/// Survival and hazard curves from the same trajectory.
pub fn predict_curves<M: Hazard + ?Sized>(
    model: &M,
    x: &[f64],
    grid: &[f64],
    config: &OdeConfig,
) -> Result<(SurvivalCurve, SurvivalCurve)> {
    let cumhaz = solve_cumhaz(model, x, grid, config)?;
    let survival = SurvivalCurve {
        times: grid.to_vec(),
        values: cumhaz.iter().map(|l| (-l).exp()).collect(),
    };
    let hazard = SurvivalCurve {
        times: grid.to_vec(),
        values: grid.iter().zip(&cumhaz).map(|(&t, &l)| model.hazard(l, t, x)).collect(),
    };
    Ok((survival, hazard))
}
