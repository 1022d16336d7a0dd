//! Mini-batch maximum likelihood with RMSProp and early stopping.

use std::fmt;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{loss, loss_grad};
use crate::data::{Dataset, Observation, Standardization};
use crate::error::{Error, Result};
use crate::model::{SurvivalModel, Variant};
use crate::ode::OdeConfig;

/// Validation loss must drop by more than this to count as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// Optimizer, batching, and stopping settings.
///
/// Typical tuning ranges: batch size 32 to 512, learning rate 1e-4 to 1e-1
/// (log scale), weight decay 0 to 1e-3, momentum 0 to 0.99.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub solver: OdeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            momentum: 0.9,
            rms_decay: 0.99,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            solver: OdeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return bad("rms_decay must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        self.solver.validate()
    }
}

/// Which model to fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { variant: Variant::Full, hidden: vec![32, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    /// Running average of squared gradients.
    pub square_avg: Vec<f64>,
    pub momentum_buf: Vec<f64>,
    pub step: u64,
}

impl OptState {
    pub fn new(n_params: usize) -> Self {
        Self {
            square_avg: vec![0.0; n_params],
            momentum_buf: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One RMSProp update with coupled weight decay and momentum, in place.
pub fn rmsprop_step(params: &mut [f64], grads: &[f64], state: &mut OptState, config: &TrainConfig) -> Result<()> {
    let n = params.len();
    for got in [grads.len(), state.square_avg.len(), state.momentum_buf.len()] {
        if got != n {
            return Err(Error::Shape { expected: n, got });
        }
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let rho = config.rms_decay;
    for i in 0..n {
        let g = grads[i] + config.weight_decay * params[i];
        let v = rho * state.square_avg[i] + (1.0 - rho) * g * g;
        state.square_avg[i] = v;
        let buf = config.momentum * state.momentum_buf[i] + g / (v + config.epsilon).sqrt();
        state.momentum_buf[i] = buf;
        params[i] -= config.learning_rate * buf;
    }
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience counter over a stream of validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            seen: 0,
        }
    }

    /// Feeds the next loss. The first loss always counts as an improvement;
    /// `Stop` comes on the `patience`-th consecutive non-improving loss.
    pub fn observe(&mut self, loss: f64) -> Verdict {
        let epoch = self.seen;
        self.seen += 1;
        if epoch == 0 || loss < self.best - MIN_IMPROVEMENT {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            return Verdict::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            Verdict::Stop
        } else {
            Verdict::NoImprovement
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Diverged,
}

/// Per-epoch losses; index 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A failed fit, with whatever history was recorded before the failure.
#[derive(Debug)]
pub struct FitError {
    pub error: Error,
    pub history: TrainHistory,
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training failed after {} epochs: {}", self.history.val_loss.len().saturating_sub(1), self.error)
    }
}

impl std::error::Error for FitError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Mean per-observation loss, processed in chunks of `chunk` observations.
pub fn mean_loss(model: &SurvivalModel, data: &[Observation], chunk: usize, config: &OdeConfig) -> Result<f64> {
    let mut total = 0.0;
    for part in data.chunks(chunk.max(1)) {
        total += loss(model, part, config)?.total_loss;
    }
    Ok(total / data.len() as f64)
}

/// Fits a fresh model on `train`, early-stopping on `val`, and returns the
/// parameters from the best validation epoch.
///
/// Standardization statistics come from `train`; both sets are given in raw
/// feature units. Each mini-batch step minimizes the batch mean of the loss.
pub fn fit(
    spec: &ModelSpec,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> std::result::Result<(SurvivalModel, TrainHistory), FitError> {
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::NAN,
        stop_reason: StopReason::Diverged,
    };
    macro_rules! tri {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(FitError { error, history }),
            }
        };
    }
    tri!(config.validate());
    if train.is_empty() || val.is_empty() {
        tri!(Err(Error::InvalidInput("training and validation sets must be nonempty".into())));
    }
    if train.n_features() != val.n_features() {
        tri!(Err(Error::Shape { expected: train.n_features(), got: val.n_features() }));
    }

    let model = tri!(SurvivalModel::build(spec.variant, &spec.hidden, train.n_features(), config.seed));
    let mut model = tri!(model.with_standardization(tri!(Standardization::fit(train))));
    let mut theta = model.params();
    let mut best_theta = theta.clone();
    let mut state = OptState::new(theta.len());
    let mut stopper = EarlyStopping::new(config.patience);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<Observation> = Vec::with_capacity(config.batch_size);

    let chunk = config.batch_size;
    let train0 = tri!(mean_loss(&model, &train.observations, chunk, &config.solver));
    let val0 = tri!(mean_loss(&model, &val.observations, chunk, &config.solver));
    history.train_loss.push(train0);
    history.val_loss.push(val0);
    stopper.observe(val0);
    info!("epoch 0: train {train0:.6} val {val0:.6}");

    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train.observations[i].clone()));
            let report = tri!(loss_grad(&model, &batch, &config.solver));
            if !report.total_loss.is_finite() {
                tri!(Err(Error::Divergence { step: state.step as usize, t: f64::NAN }));
            }
            epoch_total += report.total_loss;
            let scale = 1.0 / batch.len() as f64;
            let grad: Vec<f64> = report.grad.unwrap_or_default().iter().map(|g| g * scale).collect();
            tri!(rmsprop_step(&mut theta, &grad, &mut state, config));
            tri!(model.set_params(&theta));
        }
        let train_loss = epoch_total / train.len() as f64;
        let val_loss = tri!(mean_loss(&model, &val.observations, chunk, &config.solver));
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            tri!(Err(Error::Divergence { step: state.step as usize, t: f64::NAN }));
        }
        let verdict = stopper.observe(val_loss);
        debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} {verdict:?}");
        if verdict == Verdict::Improved {
            best_theta.copy_from_slice(&theta);
        }
        if verdict == Verdict::Stop {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    info!("best epoch {} val {:.6} ({stop_reason:?})", stopper.best_epoch(), stopper.best());

    history.best_epoch = stopper.best_epoch();
    history.best_val_loss = stopper.best();
    history.stop_reason = stop_reason;
    tri!(model.set_params(&best_theta));
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::simulate_crossing;

    #[test]
    fn zero_gradient_leaves_params_and_decays_average() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.5, -1.0];
        let mut s = OptState::new(2);
        s.square_avg = vec![2.0, 4.0];
        rmsprop_step(&mut p, &[0.0, 0.0], &mut s, &cfg).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(s.square_avg, vec![2.0 * 0.99, 4.0 * 0.99]);
    }

    #[test]
    fn first_step_magnitude() {
        let cfg = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        let g = 0.3;
        let mut p = vec![1.0];
        let mut s = OptState::new(1);
        rmsprop_step(&mut p, &[g], &mut s, &cfg).unwrap();
        let expected = 0.01 * g / ((1.0 - 0.99) * g * g + 1e-8f64).sqrt();
        assert!((1.0 - p[0] - expected).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn weight_decay_acts_as_gradient() {
        let wd = 0.1;
        let decay = TrainConfig { weight_decay: wd, ..TrainConfig::default() };
        let plain = TrainConfig::default();
        let (mut a, mut b) = (vec![2.0], vec![2.0]);
        let (mut sa, mut sb) = (OptState::new(1), OptState::new(1));
        rmsprop_step(&mut a, &[0.0], &mut sa, &decay).unwrap();
        rmsprop_step(&mut b, &[wd * 2.0], &mut sb, &plain).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_gradients() {
        let cfg = TrainConfig::default();
        let mut s = OptState::new(2);
        let e = rmsprop_step(&mut [0.0, 0.0], &[1.0, f64::NAN], &mut s, &cfg).unwrap_err();
        assert!(matches!(e, Error::NonFiniteGradient { index: 1 }));
        assert!(rmsprop_step(&mut [0.0], &[1.0, 1.0], &mut s, &cfg).is_err());
    }

    #[test]
    fn constant_losses_stop_after_patience() {
        let mut es = EarlyStopping::new(10);
        assert_eq!(es.observe(1.0), Verdict::Improved);
        for _ in 0..9 {
            assert_eq!(es.observe(1.0), Verdict::NoImprovement);
        }
        assert_eq!(es.observe(1.0), Verdict::Stop);
        assert_eq!(es.best_epoch(), 0);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut es = EarlyStopping::new(2);
        es.observe(1.0);
        assert_eq!(es.observe(1.0 - 1e-7), Verdict::NoImprovement);
        assert_eq!(es.observe(0.5), Verdict::Improved);
        assert_eq!(es.observe(0.6), Verdict::NoImprovement);
        assert_eq!(es.observe(0.5), Verdict::Stop);
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn config_validation_and_json_defaults() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { momentum: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"batch_size": 7}"#).unwrap();
        assert_eq!(c.batch_size, 7);
        assert_eq!(c.rms_decay, 0.99);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batch": 7}"#).is_err());
    }

    fn small_run(seed: u64) -> (SurvivalModel, TrainHistory) {
        let d = simulate_crossing(300, 11).unwrap();
        let (tr, va, _) = crate::data::split(&d, [3.0, 1.0, 1.0], 2).unwrap();
        let spec = ModelSpec { variant: Variant::Full, hidden: vec![8] };
        let cfg = TrainConfig { max_epochs: 3, batch_size: 32, learning_rate: 5e-3, seed, ..TrainConfig::default() };
        fit(&spec, &tr, &va, &cfg).unwrap()
    }

    #[test]
    fn fit_is_deterministic_and_restores_best() {
        let (m1, h1) = small_run(4);
        let (m2, h2) = small_run(4);
        assert_eq!(m1.to_json(None).unwrap(), m2.to_json(None).unwrap());
        assert_eq!(h1, h2);
        assert_eq!(h1.train_loss.len(), 4);
        let min = h1.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(h1.best_val_loss, min);
        assert_eq!(h1.val_loss[h1.best_epoch], min);
    }

    #[test]
    fn fit_reports_restored_validation_loss() {
        let d = simulate_crossing(200, 1).unwrap();
        let (tr, va, _) = crate::data::split(&d, [3.0, 1.0, 1.0], 1).unwrap();
        let spec = ModelSpec { variant: Variant::Cox, hidden: vec![4] };
        let cfg = TrainConfig { max_epochs: 4, batch_size: 16, learning_rate: 1e-2, ..TrainConfig::default() };
        let (m, h) = fit(&spec, &tr, &va, &cfg).unwrap();
        let val = mean_loss(&m, &va.observations, cfg.batch_size, &cfg.solver).unwrap();
        assert!((val - h.best_val_loss).abs() < 1e-12, "{val} vs {}", h.best_val_loss);
    }

    #[test]
    fn fit_rejects_mismatched_sets() {
        let d = simulate_crossing(50, 1).unwrap();
        let other = Dataset::new(vec!["a".into(), "b".into()], vec![Observation::new(vec![0.0, 1.0], 1.0, true)]).unwrap();
        let err = fit(&ModelSpec::default(), &d, &other, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err.error, Error::Shape { .. }));
        assert!(err.history.train_loss.is_empty());
    }
}
