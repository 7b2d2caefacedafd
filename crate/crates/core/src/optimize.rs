//! Adam, the reduce-on-plateau learning-rate rule, and the epoch loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AffectDimension, Dataset, Split, Target};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, LossKind};
use crate::network::{
    backward_accumulate, forward, init_parameters, predict, Architecture, ForwardMode, NetworkParameters,
    DEFAULT_DROPOUT, DEFAULT_HIDDEN,
};

/// Stream index of the batch-sampling and dropout random stream; stream 0
/// of the same seed is used by initialization.
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], gradients: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != gradients.len() || params.len() != state.first_moment.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: gradients.len(),
        });
    }
    if let Some(i) = gradients.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of parameter {i} is {} at step {}",
            gradients[i],
            state.step_count + 1
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(gradients)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_factor: f64,
    pub patience_epochs: usize,
    pub min_lr: f64,
    pub max_epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub affect_dimension: AffectDimension,
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            lr_factor: 0.9,
            patience_epochs: 3,
            min_lr: 1e-5,
            max_epochs: 100,
            batches_per_epoch: 128,
            batch_size: 32,
            seed: 41,
            loss_kind: LossKind::Nll,
            affect_dimension: AffectDimension::Valence,
            hidden_sizes: DEFAULT_HIDDEN.to_vec(),
            dropout_rate: DEFAULT_DROPOUT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr && self.initial_lr.is_finite()) {
            return bad(format!(
                "need 0 < min_lr <= initial_lr, got min_lr {} and initial_lr {}",
                self.min_lr, self.initial_lr
            ));
        }
        if self.patience_epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 {
            return bad("patience_epochs, batches_per_epoch and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("TrainConfig serializes to TOML")
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden_sizes: self.hidden_sizes.clone(),
            head_mode: self.loss_kind.head_mode(),
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.batches_per_epoch * self.batch_size
    }
}

/// Learning rate for the next epoch given the validation losses so far.
///
/// An epoch improves when its loss is strictly below every earlier loss. Once
/// `patience_epochs` consecutive epochs pass without improvement the rate is
/// multiplied by `lr_factor` (floored at `min_lr`) and the count restarts, so
/// further drops happen every `patience_epochs` stale epochs.
pub fn plateau_schedule(history: &[f64], current_lr: f64, config: &TrainConfig) -> f64 {
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for &loss in history {
        if loss < best {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    if stale > 0 && stale.is_multiple_of(config.patience_epochs) {
        (current_lr * config.lr_factor).max(config.min_lr)
    } else {
        current_lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_kind: LossKind,
    pub affect_dimension: AffectDimension,
    pub seed: u64,
    pub samples_per_epoch: usize,
    /// Validation improvement rule used by the plateau schedule.
    pub improvement_rule: String,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub learning_rate: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParameters,
    pub report: TrainReport,
}

/// Mean loss of the eval-mode network over `examples`.
pub fn evaluate_loss(params: &NetworkParameters, kind: LossKind, examples: &[(&[f64], Target)]) -> Result<f64> {
    let batch = examples
        .iter()
        .map(|(x, t)| predict(params, x).map(|p| (p, *t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(batch_loss(kind, &batch)?.value)
}

/// Trains one network for one affect dimension and returns the parameters
/// of the epoch with the lowest validation loss.
///
/// Every epoch draws `batches_per_epoch` batches of `batch_size` training
/// stimuli uniformly with replacement.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dim = config.affect_dimension;
    let train_set = dataset.examples(Split::Train, dim);
    let val_set = dataset.examples(Split::Val, dim);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset("training needs nonempty train and val splits".into()));
    }
    let mut params = init_parameters(config.architecture(dataset.feature_dim()), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut adam = AdamState::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut lr = config.initial_lr;
    let mut report = TrainReport {
        loss_kind: config.loss_kind,
        affect_dimension: dim,
        seed: config.seed,
        samples_per_epoch: config.samples_per_epoch(),
        improvement_rule: "strict".into(),
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        learning_rate: Vec::new(),
        best_epoch: None,
        best_val_loss: None,
        checkpoint: None,
    };
    let mut best_params = params.clone();
    let mut preds = Vec::with_capacity(config.batch_size);
    let mut tapes = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.max_epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..config.batches_per_epoch {
            preds.clear();
            tapes.clear();
            for _ in 0..config.batch_size {
                let (x, target) = train_set[rng.random_range(0..train_set.len())];
                let (p, tape) = forward(&params, x, ForwardMode::Train, &mut rng)?;
                preds.push((p, target));
                tapes.push(tape);
            }
            let loss = batch_loss(config.loss_kind, &preds)?;
            epoch_loss += loss.value;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (tape, g) in tapes.iter().zip(&loss.gradients) {
                backward_accumulate(&params, tape, g.d_mean_logit, g.d_sd_logit, 1.0, &mut grad)?;
            }
            adam_step(params.values_mut(), &grad, &mut adam, lr)?;
        }
        let val = evaluate_loss(&params, config.loss_kind, &val_set)?;
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        report.train_loss.push(epoch_loss / config.batches_per_epoch as f64);
        report.learning_rate.push(lr);
        if report.best_val_loss.is_none_or(|b| val < b) {
            report.best_val_loss = Some(val);
            report.best_epoch = Some(epoch);
            best_params = params.clone();
        }
        report.val_loss.push(val);
        log::debug!(
            "{} {} seed {} epoch {epoch}: train {:.5} val {val:.5} lr {lr:.2e}",
            config.loss_kind,
            dim,
            config.seed,
            report.train_loss[epoch]
        );
        lr = plateau_schedule(&report.val_loss, lr, config);
    }
    Ok(TrainOutcome {
        params: best_params,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        s.first_moment = vec![0.5, 0.5];
        s.second_moment = vec![0.25, 0.25];
        s.step_count = 10;
        let mut fresh = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut fresh, 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(fresh.step_count, 1);
        let mut q = vec![0.0, 0.0];
        adam_step(&mut q, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert_eq!(s.first_moment, vec![0.45, 0.45]);
        assert!((s.second_moment[0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.5];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1e-3).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert!((0.5 - p[0] - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_is_elementwise() {
        let mut p = vec![0.3, 0.3];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.2, 0.2], &mut s, 1e-2).unwrap();
        }
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s, 1e-3),
            Err(Error::NonFinite(_))
        ));
        assert!(adam_step(&mut p, &[0.0, 1.0], &mut s, 1e-3).is_err());
    }

    #[test]
    fn plateau_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(plateau_schedule(&[3.0, 2.0, 1.0, 0.5], 1e-3, &cfg), 1e-3);
        assert_eq!(plateau_schedule(&[1.0, 1.0, 1.0], 1e-3, &cfg), 1e-3);
        assert_eq!(plateau_schedule(&[1.0, 1.0, 1.0, 1.0], 1e-3, &cfg), 1e-3 * 0.9);
        assert_eq!(plateau_schedule(&[1.0, 1.0, 1.0, 1.0], 1e-5, &cfg), 1e-5);
        assert_eq!(plateau_schedule(&[1.0, 1.0, 1.0, 1.0, 1.0], 9e-4, &cfg), 9e-4);
        // Counter restarts after a drop: next drop after three more stale epochs.
        assert!((plateau_schedule(&[1.0; 7], 9e-4, &cfg) - 8.1e-4).abs() < 1e-18);
        // Improvement resets the counter.
        assert_eq!(plateau_schedule(&[1.0, 1.0, 1.0, 0.9, 1.0, 1.0], 1e-3, &cfg), 1e-3);
    }

    #[test]
    fn plateau_traced_sequence_is_monotone_and_floored() {
        let cfg = TrainConfig {
            min_lr: 5e-4,
            ..TrainConfig::default()
        };
        let mut lr = cfg.initial_lr;
        let mut history = Vec::new();
        for epoch in 0..60 {
            history.push(if epoch < 5 { 1.0 - epoch as f64 * 0.1 } else { 2.0 });
            let next = plateau_schedule(&history, lr, &cfg);
            assert!(next <= lr && next >= cfg.min_lr);
            lr = next;
        }
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn config_validation_and_toml() {
        let cfg = TrainConfig::default();
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial = TrainConfig::from_toml("seed = 7\nloss_kind = \"kld\"\naffect_dimension = \"arousal\"").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.loss_kind, LossKind::Kld);
        assert_eq!(partial.batch_size, 32);
        assert!(TrainConfig::from_toml("lr_factor = 1.5").is_err());
        assert!(TrainConfig::from_toml("min_lr = 1.0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert_eq!(cfg.samples_per_epoch(), 4096);
    }
}
